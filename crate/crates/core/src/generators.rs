//! Seeded families of test systems.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SysIdError};
use crate::linalg;
use crate::lowerbound;
use crate::model::SystemMatrices;
use crate::rng::{self, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    /// iid gaussian entries, `A` rescaled to spectral radius `cap / (1 + 1e-6)`.
    RandomStable,
    /// `A = I + h N` with `N` the nilpotent shift; `B`, `C` gaussian with unit norm, `D = 0`.
    JordanIntegrator,
    /// `A = B = C = D = 1`.
    AppendixScalar,
    /// Nearly unobservable construction with `p = n`, `B = I`, `D = 0`.
    Unobservable,
}

fn default_cap() -> f64 {
    1.0
}

fn default_step() -> f64 {
    0.3
}

fn default_delta() -> f64 {
    1e-3
}

fn default_lambda() -> f64 {
    0.9
}

/// Recipe for a system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub family: Family,
    pub n: usize,
    pub m: usize,
    pub p: usize,
    #[serde(default = "default_cap")]
    pub spectral_radius_cap: f64,
    #[serde(default)]
    pub seed: u64,
    /// Superdiagonal of the Jordan block.
    #[serde(default = "default_step")]
    pub step: f64,
    /// Leakage of the unobservable family.
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Eigenvalue on the hidden direction of the unobservable family.
    #[serde(default = "default_lambda")]
    pub lambda: f64,
}

impl GeneratorSpec {
    pub fn new(family: Family, n: usize, m: usize, p: usize, seed: u64) -> Self {
        GeneratorSpec {
            family,
            n,
            m,
            p,
            spectral_radius_cap: default_cap(),
            seed,
            step: default_step(),
            delta: default_delta(),
            lambda: default_lambda(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 || self.p == 0 {
            return Err(SysIdError::InvalidArgument("n, m, p must be positive".into()));
        }
        match self.family {
            Family::AppendixScalar if (self.n, self.m, self.p) != (1, 1, 1) => {
                Err(SysIdError::InvalidArgument("appendix-scalar requires n = m = p = 1".into()))
            }
            Family::Unobservable if self.p != self.n => {
                Err(SysIdError::InvalidArgument("unobservable family requires p = n".into()))
            }
            Family::Unobservable if self.n < 3 => {
                Err(SysIdError::InvalidArgument("unobservable family requires n >= 3".into()))
            }
            Family::RandomStable if !(self.spectral_radius_cap > 0.0 && self.spectral_radius_cap <= 1.0) => {
                Err(SysIdError::InvalidArgument("spectral_radius_cap must lie in (0, 1]".into()))
            }
            Family::JordanIntegrator if !(self.step.is_finite() && self.step != 0.0) => {
                Err(SysIdError::InvalidArgument("step must be finite and nonzero".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn build(&self) -> Result<SystemMatrices> {
        self.validate()?;
        let (n, m, p) = (self.n, self.m, self.p);
        let mut g = rng::substream(self.seed, stream::AUX + 3, 0);
        let mut gauss = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| g.sample::<f64, _>(StandardNormal));
        match self.family {
            Family::RandomStable => {
                let a = gauss(n, n);
                let b = gauss(n, p);
                let c = gauss(m, n);
                let d = gauss(m, p);
                let rho = linalg::spectral_radius(&a);
                let a = if rho > 0.0 { a * (self.spectral_radius_cap / (rho * (1.0 + 1e-6))) } else { a };
                SystemMatrices::new(a, b, c, d)
            }
            Family::JordanIntegrator => {
                let a = DMatrix::from_fn(n, n, |i, j| {
                    if i == j {
                        1.0
                    } else if j == i + 1 {
                        self.step
                    } else {
                        0.0
                    }
                });
                let b = gauss(n, p);
                let c = gauss(m, n);
                let b = &b / linalg::spectral_norm(&b);
                let c = &c / linalg::spectral_norm(&c);
                SystemMatrices::new(a, b, c, DMatrix::zeros(m, p))
            }
            Family::AppendixScalar => Ok(SystemMatrices::scalar(1.0, 1.0, 1.0, 1.0)),
            Family::Unobservable => Ok(lowerbound::build_unobservable(n, m, self.delta, self.lambda, self.seed)?.sys),
        }
    }
}
