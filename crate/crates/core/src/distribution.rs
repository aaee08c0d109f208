//! Mean-zero input and noise laws.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Result, SysIdError};
use crate::linalg;
use crate::rng::{self, stream};

const SQRT3: f64 = 1.732_050_807_568_877_2;

/// Two-component scale mixture: with probability `MIX_WEIGHT` the variance is
/// `MIX_LOW`, otherwise `MIX_HIGH`; the mean variance is one.
const MIX_WEIGHT: f64 = 0.8;
const MIX_LOW: f64 = 0.8;
const MIX_HIGH: f64 = 1.8;

/// Shape of a distribution before it is multiplied by the covariance square root.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistributionKind {
    /// iid standard normal coordinates.
    Gaussian,
    /// iid unit-variance Laplace coordinates.
    Laplace,
    /// iid uniform signs.
    Rademacher,
    /// iid uniform on `[-sqrt 3, sqrt 3]`.
    UniformBox,
    /// Standard normal vector times a shared random scale.
    ScaledMixture,
}

impl DistributionKind {
    pub const ALL: [DistributionKind; 5] = [
        DistributionKind::Gaussian,
        DistributionKind::Laplace,
        DistributionKind::Rademacher,
        DistributionKind::UniformBox,
        DistributionKind::ScaledMixture,
    ];

    /// Constant K with `E<v,x>^4 <= K (E<v,x>^2)^2` for every direction `v`.
    ///
    /// For product laws the fourth-moment ratio of any linear combination lies
    /// between the coordinate kurtosis and 3, so the constant is
    /// `max(kurtosis, 3)`: 3 for gaussian, rademacher and uniform-box, 6 for
    /// laplace. The scale mixture is elliptical with ratio `3 E[s^4] / E[s^2]^2`
    /// in every direction.
    pub fn hypercontractivity(self) -> f64 {
        match self {
            DistributionKind::Gaussian => 3.0,
            DistributionKind::Laplace => 6.0,
            DistributionKind::Rademacher => 3.0,
            DistributionKind::UniformBox => 3.0,
            DistributionKind::ScaledMixture => {
                3.0 * (MIX_WEIGHT * MIX_LOW * MIX_LOW + (1.0 - MIX_WEIGHT) * MIX_HIGH * MIX_HIGH)
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DistributionKind::Gaussian => "gaussian",
            DistributionKind::Laplace => "laplace",
            DistributionKind::Rademacher => "rademacher",
            DistributionKind::UniformBox => "uniform-box",
            DistributionKind::ScaledMixture => "scaled-mixture",
        }
    }

    fn fill_standard<R: Rng + ?Sized>(self, rng: &mut R, out: &mut DVector<f64>) {
        match self {
            DistributionKind::Gaussian => {
                for x in out.iter_mut() {
                    *x = rng.sample(StandardNormal);
                }
            }
            DistributionKind::Laplace => {
                let b = std::f64::consts::FRAC_1_SQRT_2;
                for x in out.iter_mut() {
                    let u: f64 = rng.gen::<f64>() - 0.5;
                    *x = -b * u.signum() * (1.0 - 2.0 * u.abs()).ln();
                }
            }
            DistributionKind::Rademacher => {
                for x in out.iter_mut() {
                    *x = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                }
            }
            DistributionKind::UniformBox => {
                for x in out.iter_mut() {
                    *x = rng.gen_range(-SQRT3..SQRT3);
                }
            }
            DistributionKind::ScaledMixture => {
                let var = if rng.gen::<f64>() < MIX_WEIGHT { MIX_LOW } else { MIX_HIGH };
                let scale = var.sqrt();
                for x in out.iter_mut() {
                    let g: f64 = rng.sample(StandardNormal);
                    *x = scale * g;
                }
            }
        }
    }
}

/// A mean-zero law `Sigma^{1/2} x` where `x` has iid standardized coordinates
/// (or is elliptical, for the scale mixture).
#[derive(Debug, Clone, PartialEq)]
pub struct DistributionSpec {
    kind: DistributionKind,
    covariance: DMatrix<f64>,
    root: DMatrix<f64>,
    zero: bool,
}

impl DistributionSpec {
    pub fn new(kind: DistributionKind, covariance: DMatrix<f64>) -> Result<Self> {
        let root = linalg::psd_sqrt(&covariance)?;
        let zero = covariance.iter().all(|&x| x == 0.0);
        Ok(DistributionSpec {
            kind,
            covariance,
            root,
            zero,
        })
    }

    /// Identity covariance.
    pub fn isotropic(kind: DistributionKind, dim: usize) -> Self {
        Self::scaled(kind, dim, 1.0)
    }

    /// Covariance `variance * I`.
    pub fn scaled(kind: DistributionKind, dim: usize, variance: f64) -> Self {
        assert!(variance >= 0.0 && variance.is_finite(), "variance must be finite and nonnegative");
        let covariance = DMatrix::identity(dim, dim) * variance;
        let root = DMatrix::identity(dim, dim) * variance.sqrt();
        DistributionSpec {
            kind,
            covariance,
            root,
            zero: variance == 0.0,
        }
    }

    /// Point mass at zero.
    pub fn zero(dim: usize) -> Self {
        Self::scaled(DistributionKind::Gaussian, dim, 0.0)
    }

    pub fn kind(&self) -> DistributionKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.covariance.nrows()
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    /// Symmetric square root of the covariance.
    pub fn covariance_sqrt(&self) -> &DMatrix<f64> {
        &self.root
    }

    /// Declared hypercontractivity constant.
    pub fn hypercontractivity(&self) -> f64 {
        self.kind.hypercontractivity()
    }

    /// Largest covariance eigenvalue.
    pub fn max_variance(&self) -> f64 {
        if self.dim() == 0 {
            return 0.0;
        }
        linalg::symmetric_eigenvalues(&self.covariance).max().max(0.0)
    }

    pub fn is_zero(&self) -> bool {
        self.zero
    }

    /// Writes one draw into `out` (which must have length `dim`).
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, scratch: &mut DVector<f64>, out: &mut DVector<f64>) {
        if self.zero {
            out.fill(0.0);
            return;
        }
        self.kind.fill_standard(rng, scratch);
        out.gemv(1.0, &self.root, scratch, 0.0);
    }

    /// One draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let mut scratch = DVector::zeros(self.dim());
        let mut out = DVector::zeros(self.dim());
        self.sample_into(rng, &mut scratch, &mut out);
        out
    }
}

#[derive(Serialize, Deserialize)]
struct SpecRepr {
    kind: DistributionKind,
    covariance: Vec<Vec<f64>>,
}

impl Serialize for DistributionSpec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        SpecRepr {
            kind: self.kind,
            covariance: linalg::to_rows(&self.covariance),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for DistributionSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = SpecRepr::deserialize(d)?;
        let n = r.covariance.len();
        let cov = linalg::from_rows(&r.covariance, n).map_err(serde::de::Error::custom)?;
        DistributionSpec::new(r.kind, cov).map_err(serde::de::Error::custom)
    }
}

/// Input, process, observation and initial-state laws of a system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub input: DistributionSpec,
    pub process: DistributionSpec,
    pub observation: DistributionSpec,
    pub initial: DistributionSpec,
}

impl NoiseModel {
    /// Isotropic input of `kind`, gaussian noise with the given variances, `x_0 = 0`.
    pub fn standard(kind: DistributionKind, n: usize, m: usize, p: usize, sigma_w: f64, sigma_z: f64) -> Self {
        NoiseModel {
            input: DistributionSpec::isotropic(kind, p),
            process: DistributionSpec::scaled(DistributionKind::Gaussian, n, sigma_w),
            observation: DistributionSpec::scaled(DistributionKind::Gaussian, m, sigma_z),
            initial: DistributionSpec::zero(n),
        }
    }

    /// Checks dimensions against `(n, m, p)`, isotropy of the input and finiteness of the noise.
    pub fn validate(&self, n: usize, m: usize, p: usize) -> Result<()> {
        let check = |name: &str, spec: &DistributionSpec, dim: usize| {
            if spec.dim() != dim {
                Err(SysIdError::Dimension(format!(
                    "{name} distribution has dimension {}, expected {dim}",
                    spec.dim()
                )))
            } else {
                Ok(())
            }
        };
        check("input", &self.input, p)?;
        check("process", &self.process, n)?;
        check("observation", &self.observation, m)?;
        check("initial", &self.initial, n)?;
        let dev = (self.input.covariance() - DMatrix::<f64>::identity(p, p)).amax();
        if dev > 1e-12 {
            return Err(SysIdError::InvalidArgument(
                "input covariance must be the identity".into(),
            ));
        }
        Ok(())
    }
}

/// `count` iid draws; draw `i` uses its own substream of `seed`.
pub fn sample_distribution(spec: &DistributionSpec, count: usize, seed: u64) -> Result<Vec<DVector<f64>>> {
    if count == 0 {
        return Err(SysIdError::InvalidArgument("count must be at least 1".into()));
    }
    let mut scratch = DVector::zeros(spec.dim());
    Ok((0..count)
        .map(|i| {
            let mut rng = rng::substream(seed, stream::AUX, i as u64);
            let mut out = DVector::zeros(spec.dim());
            spec.sample_into(&mut rng, &mut scratch, &mut out);
            out
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_identity_mean_is_small() {
        let spec = DistributionSpec::isotropic(DistributionKind::Gaussian, 3);
        let xs = sample_distribution(&spec, 100_000, 1).unwrap();
        let mean = xs.iter().fold(DVector::zeros(3), |acc, x| acc + x) / xs.len() as f64;
        assert!(mean.amax() < 0.02, "mean {mean}");
    }

    #[test]
    fn rademacher_support() {
        let spec = DistributionSpec::isotropic(DistributionKind::Rademacher, 1);
        for x in sample_distribution(&spec, 1000, 2).unwrap() {
            assert!(x[0] == 1.0 || x[0] == -1.0);
        }
    }

    #[test]
    fn laplace_kurtosis_near_six() {
        let spec = DistributionSpec::isotropic(DistributionKind::Laplace, 1);
        let xs = sample_distribution(&spec, 100_000, 3).unwrap();
        let m2: f64 = xs.iter().map(|x| x[0].powi(2)).sum::<f64>() / xs.len() as f64;
        let m4: f64 = xs.iter().map(|x| x[0].powi(4)).sum::<f64>() / xs.len() as f64;
        let ratio = m4 / (m2 * m2);
        assert!((5.0..=7.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn every_kind_has_unit_variance() {
        for kind in DistributionKind::ALL {
            let spec = DistributionSpec::isotropic(kind, 1);
            let xs = sample_distribution(&spec, 100_000, 4).unwrap();
            let m2: f64 = xs.iter().map(|x| x[0].powi(2)).sum::<f64>() / xs.len() as f64;
            assert!((m2 - 1.0).abs() < 0.03, "{kind:?} variance {m2}");
        }
    }

    #[test]
    fn non_psd_covariance_rejected() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(DistributionSpec::new(DistributionKind::Gaussian, cov).is_err());
    }

    #[test]
    fn noise_model_requires_isotropic_input() {
        let mut noise = NoiseModel::standard(DistributionKind::Gaussian, 2, 1, 1, 1.0, 1.0);
        assert!(noise.validate(2, 1, 1).is_ok());
        noise.input = DistributionSpec::scaled(DistributionKind::Gaussian, 1, 2.0);
        assert!(noise.validate(2, 1, 1).is_err());
    }

    #[test]
    fn serde_round_trip() {
        let spec = DistributionSpec::new(
            DistributionKind::UniformBox,
            DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]),
        )
        .unwrap();
        let s = serde_json::to_string(&spec).unwrap();
        let back: DistributionSpec = serde_json::from_str(&s).unwrap();
        assert_eq!(spec.kind(), back.kind());
        assert_eq!(spec.covariance(), back.covariance());
    }
}
