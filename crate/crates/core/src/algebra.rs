//! Observability and controllability structure, the stabilizing matrix
//! polynomial, potentials, power-norm bounds and moment diagnostics.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distribution::DistributionSpec;
use crate::error::{Result, SysIdError};
use crate::linalg;
use crate::model::SystemMatrices;
use crate::rng::{self, stream};
use crate::stabilizer::StabilizerCoefficients;

/// Additive slack on the `rho(A) <= 1` checks.
pub const SPECTRAL_TOL: f64 = 1e-9;

/// `O_s = [C; CA; ...; CA^{s-1}]` by iterated multiplication.
pub fn observability_matrix(sys: &SystemMatrices, s: usize) -> Result<DMatrix<f64>> {
    if s < 1 {
        return Err(SysIdError::InvalidArgument("s must be at least 1".into()));
    }
    let mut blocks = Vec::with_capacity(s);
    let mut ca = sys.c.clone();
    for _ in 0..s {
        let next = &ca * &sys.a;
        blocks.push(ca);
        ca = next;
    }
    Ok(linalg::vstack(&blocks))
}

/// `Q_s = [B, AB, ..., A^{s-1}B]` by iterated multiplication.
pub fn controllability_matrix(sys: &SystemMatrices, s: usize) -> Result<DMatrix<f64>> {
    if s < 1 {
        return Err(SysIdError::InvalidArgument("s must be at least 1".into()));
    }
    let mut blocks = Vec::with_capacity(s);
    let mut ab = sys.b.clone();
    for _ in 0..s {
        let next = &sys.a * &ab;
        blocks.push(ab);
        ab = next;
    }
    Ok(linalg::hstack(&blocks))
}

/// Both structure matrices of order `s`.
#[derive(Debug, Clone)]
pub struct ObsCtrlMatrices {
    pub o_s: DMatrix<f64>,
    pub q_s: DMatrix<f64>,
    pub s: usize,
}

impl ObsCtrlMatrices {
    pub fn new(sys: &SystemMatrices, s: usize) -> Result<Self> {
        Ok(ObsCtrlMatrices {
            o_s: observability_matrix(sys, s)?,
            q_s: controllability_matrix(sys, s)?,
            s,
        })
    }
}

/// Singular-value diagnostics of a system at order `s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub s: usize,
    pub kappa: f64,
    pub sigma_max_o2s: f64,
    pub sigma_min_os: f64,
    pub sigma_max_q2s: f64,
    pub sigma_min_qs: f64,
    /// `sigma_max_o2s / sigma_min_os`; infinite when `sigma_min_os = 0`.
    pub kappa_obs: f64,
    pub kappa_ctrl: f64,
    pub spectral_radius: f64,
    pub norm_b: f64,
    pub norm_c: f64,
    pub degenerate: bool,
    pub well_behaved: bool,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        f64::INFINITY
    }
}

/// Condition numbers, spectral radius and norms; `well_behaved` is evaluated against `kappa`.
///
/// `sigma_min` is the `n`-th singular value, so a rank-deficient structure
/// matrix reports zero and is flagged `degenerate`.
pub fn condition_report(sys: &SystemMatrices, s: usize, kappa: f64) -> Result<ConditionReport> {
    let n = sys.n();
    let o2 = observability_matrix(sys, 2 * s)?;
    let os = observability_matrix(sys, s)?;
    let q2 = controllability_matrix(sys, 2 * s)?;
    let qs = controllability_matrix(sys, s)?;
    let sigma_max_o2s = linalg::spectral_norm(&o2);
    let sigma_min_os = linalg::sigma(&os, n - 1);
    let sigma_max_q2s = linalg::spectral_norm(&q2);
    let sigma_min_qs = linalg::sigma(&qs, n - 1);
    let kappa_obs = ratio(sigma_max_o2s, sigma_min_os);
    let kappa_ctrl = ratio(sigma_max_q2s, sigma_min_qs);
    let spectral_radius = linalg::spectral_radius(&sys.a);
    let norm_b = linalg::spectral_norm(&sys.b);
    let norm_c = linalg::spectral_norm(&sys.c);
    let well_behaved = norm_b >= 1.0
        && norm_c >= 1.0
        && spectral_radius <= 1.0 + SPECTRAL_TOL
        && kappa_obs <= kappa
        && kappa_ctrl <= kappa;
    Ok(ConditionReport {
        s,
        kappa,
        sigma_max_o2s,
        sigma_min_os,
        sigma_max_q2s,
        sigma_min_qs,
        kappa_obs,
        kappa_ctrl,
        spectral_radius,
        norm_b,
        norm_c,
        degenerate: sigma_min_os == 0.0 || sigma_min_qs == 0.0,
        well_behaved,
    })
}

/// Value of the stabilizing polynomial and its partial sums at `A`.
#[derive(Debug, Clone)]
pub struct MatrixPolyEval {
    /// `F(A) = C A^{s+k} - sum_j alpha_j C A^{s-j}`.
    pub f: DMatrix<f64>,
    /// `F^{(i)}(A)` for `i = 0..=k+s`.
    pub f_partial: Vec<DMatrix<f64>>,
}

fn check_alpha(sys: &SystemMatrices, alpha: &StabilizerCoefficients) -> Result<()> {
    if alpha.m() != sys.m() {
        return Err(SysIdError::Dimension(format!(
            "coefficients are {}x{}, system has m = {}",
            alpha.m(),
            alpha.m(),
            sys.m()
        )));
    }
    Ok(())
}

/// Evaluates `F` and every `F^{(i)}`:
/// `F^{(i)} = C A^i` for `i <= k`, and
/// `F^{(i)} = C A^i - sum_{j=1}^{i-k} alpha_j C A^{i-k-j}` for `k < i <= k+s`.
pub fn matrix_poly_f(sys: &SystemMatrices, alpha: &StabilizerCoefficients, k: usize) -> Result<MatrixPolyEval> {
    check_alpha(sys, alpha)?;
    if k < 1 {
        return Err(SysIdError::InvalidArgument("k must be at least 1".into()));
    }
    let s = alpha.s();
    let mut powers = Vec::with_capacity(k + s + 1);
    let mut ca = sys.c.clone();
    for _ in 0..=k + s {
        let next = &ca * &sys.a;
        powers.push(ca);
        ca = next;
    }
    let mut f_partial = Vec::with_capacity(k + s + 1);
    for i in 0..=k + s {
        let mut f = powers[i].clone();
        if i > k {
            for j in 1..=i - k {
                f -= &alpha.alpha[j - 1] * &powers[i - k - j];
            }
        }
        f_partial.push(f);
    }
    let f = f_partial[k + s].clone();
    Ok(MatrixPolyEval { f, f_partial })
}

/// `G = sum_{i<=l} ||F A^i B||_F^2` and `H = sum_{i<=l} ||F A^i||_F^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PotentialValue {
    pub g: f64,
    pub h: f64,
    pub l: usize,
}

pub fn potential(sys: &SystemMatrices, alpha: &StabilizerCoefficients, k: usize, l: usize) -> Result<PotentialValue> {
    let f = matrix_poly_f(sys, alpha, k)?.f;
    let (mut g, mut h) = (0.0, 0.0);
    let mut fa = f;
    for _ in 0..=l {
        g += (&fa * &sys.b).norm_squared();
        h += fa.norm_squared();
        fa = &fa * &sys.a;
    }
    Ok(PotentialValue { g, h, l })
}

/// Returns `(H_{alpha,l}, kappa^2 s G_{alpha,l+s})`; the first should not exceed the second.
pub fn potential_relation(
    sys: &SystemMatrices,
    alpha: &StabilizerCoefficients,
    k: usize,
    l: usize,
    kappa: f64,
) -> Result<(f64, f64)> {
    let h = potential(sys, alpha, k, l)?.h;
    let g = potential(sys, alpha, k, l + alpha.s())?.g;
    Ok((h, kappa * kappa * alpha.s() as f64 * g))
}

/// `log ||A^L||_2` next to the log of `n (2(1+||A||) L)^n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerNormCheck {
    pub log_actual: f64,
    pub log_bound: f64,
}

impl PowerNormCheck {
    pub fn actual(&self) -> f64 {
        self.log_actual.exp()
    }

    pub fn bound(&self) -> f64 {
        self.log_bound.exp()
    }

    pub fn holds(&self) -> bool {
        self.log_actual <= self.log_bound
    }
}

/// Computes `||A^L||` by repeated multiplication, rescaling whenever entries
/// leave `[1e-100, 1e100]` and keeping the scale in a log accumulator.
pub fn power_norm_check(a: &DMatrix<f64>, l: usize) -> Result<PowerNormCheck> {
    if !a.is_square() {
        return Err(SysIdError::Dimension("A must be square".into()));
    }
    let n = a.nrows();
    let rho = linalg::spectral_radius(a);
    if rho > 1.0 + SPECTRAL_TOL {
        return Err(SysIdError::Precondition(format!("spectral radius {rho} exceeds 1")));
    }
    let mut m = DMatrix::<f64>::identity(n, n);
    let mut log_scale = 0.0;
    for _ in 0..l {
        m = &m * a;
        let big = m.amax();
        if big == 0.0 {
            break;
        }
        if !(1e-100..=1e100).contains(&big) {
            m /= big;
            log_scale += big.ln();
        }
    }
    let norm = linalg::spectral_norm(&m);
    let log_actual = if norm == 0.0 { f64::NEG_INFINITY } else { norm.ln() + log_scale };
    let nf = n as f64;
    let log_bound = nf.ln() + nf * (2.0 * (1.0 + linalg::spectral_norm(a)) * l as f64).ln();
    Ok(PowerNormCheck { log_actual, log_bound })
}

/// Largest empirical `E<v,x>^4 / (E<v,x>^2)^2` over the given directions.
pub fn fourth_moment_ratio(samples: &[DVector<f64>], directions: &[DVector<f64>]) -> Result<f64> {
    let ratios: Vec<Result<f64>> = directions
        .par_iter()
        .map(|v| {
            let (mut m2, mut m4) = (0.0, 0.0);
            for x in samples {
                let p = v.dot(x);
                let p2 = p * p;
                m2 += p2;
                m4 += p2 * p2;
            }
            let cnt = samples.len() as f64;
            let (m2, m4) = (m2 / cnt, m4 / cnt);
            if m2 <= 0.0 {
                Err(SysIdError::ZeroVariance)
            } else {
                Ok(m4 / (m2 * m2))
            }
        })
        .collect();
    let mut best: f64 = 0.0;
    for r in ratios {
        best = best.max(r?);
    }
    Ok(best)
}

/// `count` random unit directions in dimension `dim` followed by the coordinate axes.
pub fn probe_directions(dim: usize, count: usize, seed: u64) -> Vec<DVector<f64>> {
    let mut dirs = Vec::with_capacity(count + dim);
    for i in 0..count {
        let mut rng = rng::substream(seed, stream::AUX + 1, i as u64);
        let v = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let nv = v.norm();
        if nv > 0.0 {
            dirs.push(v / nv);
        }
    }
    for i in 0..dim {
        let mut e = DVector::zeros(dim);
        e[i] = 1.0;
        dirs.push(e);
    }
    dirs
}

/// Empirical hypercontractivity constant over random unit directions and the axes.
///
/// The definition quantifies over every direction, so this is a lower estimate.
pub fn hypercontractivity_probe(spec: &DistributionSpec, directions: usize, samples: usize, seed: u64) -> Result<f64> {
    if samples < 10_000 {
        return Err(SysIdError::InvalidArgument("at least 10^4 samples are required".into()));
    }
    let xs = crate::distribution::sample_distribution(spec, samples, seed)?;
    let dirs = probe_directions(spec.dim(), directions, seed);
    fourth_moment_ratio(&xs, &dirs)
}

/// Empirical `Pr[|z - beta| <= 0.1]` for each `beta` in the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AntiConcentration {
    pub beta: Vec<f64>,
    pub probability: Vec<f64>,
    pub max: f64,
}

pub fn anti_concentration_probe(spec: &DistributionSpec, beta_grid: &[f64], samples: usize, seed: u64) -> Result<AntiConcentration> {
    if spec.dim() != 1 {
        return Err(SysIdError::Dimension("anti-concentration probe needs a scalar law".into()));
    }
    let xs = crate::distribution::sample_distribution(spec, samples, seed)?;
    let probability: Vec<f64> = beta_grid
        .iter()
        .map(|&b| xs.iter().filter(|x| (x[0] - b).abs() <= 0.1).count() as f64 / samples as f64)
        .collect();
    let max = probability.iter().copied().fold(0.0, f64::max);
    Ok(AntiConcentration {
        beta: beta_grid.to_vec(),
        probability,
        max,
    })
}

/// `1 - 1/(10 K)` with `K` floored at 3.
pub fn anti_concentration_bound(k: f64) -> f64 {
    1.0 - 1.0 / (10.0 * k.max(3.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distribution::DistributionKind;

    fn sys2(a: &[f64], c: &[f64]) -> SystemMatrices {
        let m = c.len() / 2;
        SystemMatrices::new(
            DMatrix::from_row_slice(2, 2, a),
            DMatrix::identity(2, 2),
            DMatrix::from_row_slice(m, 2, c),
            DMatrix::zeros(m, 2),
        )
        .unwrap()
    }

    #[test]
    fn observability_examples() {
        let sys = sys2(&[1.0, 0.0, 0.0, 1.0], &[1.0, 0.0, 0.0, 1.0]);
        let o = observability_matrix(&sys, 3).unwrap();
        let want = linalg::vstack(&[DMatrix::identity(2, 2), DMatrix::identity(2, 2), DMatrix::identity(2, 2)]);
        assert_eq!(o, want);

        let sys = sys2(&[0.0, 1.0, 0.0, 0.0], &[1.0, 0.0]);
        let o = observability_matrix(&sys, 2).unwrap();
        assert_eq!(o, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]));
        assert!(observability_matrix(&sys, 0).is_err());
    }

    #[test]
    fn controllability_examples() {
        let b = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
        let mut sys = SystemMatrices::new(DMatrix::zeros(2, 2), b.clone(), DMatrix::identity(2, 2), DMatrix::zeros(2, 1)).unwrap();
        let q = controllability_matrix(&sys, 3).unwrap();
        assert_eq!(q, linalg::hstack(&[b.clone(), DMatrix::zeros(2, 1), DMatrix::zeros(2, 1)]));
        sys.a = DMatrix::identity(2, 2);
        let q = controllability_matrix(&sys, 3).unwrap();
        assert_eq!(q, linalg::hstack(&[b.clone(), b.clone(), b]));
    }

    #[test]
    fn identity_system_is_well_behaved() {
        let n = 3;
        let sys = SystemMatrices::new(
            DMatrix::identity(n, n),
            DMatrix::identity(n, n),
            DMatrix::identity(n, n),
            DMatrix::zeros(n, n),
        )
        .unwrap();
        let r = condition_report(&sys, 1, 2.0).unwrap();
        // O_2 = [I; I] has sigma_max sqrt 2; O_1 = I.
        assert!((r.kappa_obs - 2f64.sqrt()).abs() < 1e-12);
        assert!((r.kappa_ctrl - 2f64.sqrt()).abs() < 1e-12);
        assert!(r.well_behaved);

        let mut bad = sys.clone();
        bad.a[(0, 0)] = 1.5;
        assert!(!condition_report(&bad, 1, 2.0).unwrap().well_behaved);
    }

    #[test]
    fn poly_with_zero_alpha_is_plain_powers() {
        let sys = sys2(&[0.5, 1.0, -0.3, 0.9], &[1.0, 2.0]);
        let alpha = StabilizerCoefficients::zeros(2, 1);
        let k = 3;
        let ev = matrix_poly_f(&sys, &alpha, k).unwrap();
        let mut ca = sys.c.clone();
        for i in 0..=k + 2 {
            assert!((&ev.f_partial[i] - &ca).norm() < 1e-14);
            ca = &ca * &sys.a;
        }
        let ca5 = &sys.c * sys.a.pow(5);
        assert!((&ev.f - ca5).norm() < 1e-12);
    }

    #[test]
    fn scalar_poly_vanishes_at_cubed_coefficient() {
        let a = 0.7;
        let sys = SystemMatrices::scalar(a, 1.0, 1.0, 0.0);
        let alpha = StabilizerCoefficients::new(vec![DMatrix::from_element(1, 1, a * a * a)]).unwrap();
        let ev = matrix_poly_f(&sys, &alpha, 2).unwrap();
        assert!(ev.f[(0, 0)].abs() < 1e-15);
        let pot = potential(&sys, &alpha, 2, 7).unwrap();
        assert!(pot.g < 1e-28 && pot.h < 1e-28);
    }

    #[test]
    fn integrator_potential_counts_terms() {
        let sys = SystemMatrices::scalar(1.0, 1.0, 1.0, 0.0);
        let alpha = StabilizerCoefficients::zeros(1, 1);
        for l in [0, 1, 5, 20] {
            let pot = potential(&sys, &alpha, 1, l).unwrap();
            assert_eq!(pot.g, (l + 1) as f64);
        }
    }

    #[test]
    fn power_norm_examples() {
        let id = DMatrix::<f64>::identity(3, 3);
        let r = power_norm_check(&id, 10).unwrap();
        assert!((r.actual() - 1.0).abs() < 1e-12 && r.holds());

        let nil = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let r = power_norm_check(&nil, 2).unwrap();
        assert_eq!(r.actual(), 0.0);

        let j = DMatrix::from_row_slice(3, 3, &[1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0]);
        let l = 100;
        let r = power_norm_check(&j, l).unwrap();
        // J^L = I + L N + L(L-1)/2 N^2.
        let lf = l as f64;
        let exact = DMatrix::from_row_slice(3, 3, &[1.0, lf, lf * (lf - 1.0) / 2.0, 0.0, 1.0, lf, 0.0, 0.0, 1.0]);
        assert!((r.actual() - linalg::spectral_norm(&exact)).abs() < 1e-8 * r.actual());
        assert!(r.holds());

        let bad = DMatrix::from_element(1, 1, 1.5);
        assert!(matches!(power_norm_check(&bad, 3), Err(SysIdError::Precondition(_))));
    }

    #[test]
    fn power_norm_survives_overflow_scales() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1e200, 0.0, 1.0]);
        let r = power_norm_check(&a, 50).unwrap();
        assert!((r.log_actual - (50.0f64.ln() + 200.0 * 10f64.ln())).abs() < 1e-9);
    }

    #[test]
    fn probes_on_simple_laws() {
        let g = DistributionSpec::isotropic(DistributionKind::Gaussian, 2);
        let k = hypercontractivity_probe(&g, 20, 200_000, 1).unwrap();
        assert!((k - 3.0).abs() < 0.3, "{k}");

        let r = DistributionSpec::isotropic(DistributionKind::Rademacher, 3);
        let xs = crate::distribution::sample_distribution(&r, 10_000, 2).unwrap();
        let axes = probe_directions(3, 0, 0);
        assert!((fourth_moment_ratio(&xs, &axes).unwrap() - 1.0).abs() < 1e-12);

        assert!(hypercontractivity_probe(&g, 5, 100, 0).is_err());
        let zero = DistributionSpec::zero(1);
        assert!(matches!(hypercontractivity_probe(&zero, 1, 10_000, 0), Err(SysIdError::ZeroVariance)));
    }

    #[test]
    fn anti_concentration_examples() {
        let g = DistributionSpec::isotropic(DistributionKind::Gaussian, 1);
        let r = anti_concentration_probe(&g, &[0.0], 200_000, 5).unwrap();
        assert!((r.probability[0] - 0.0797).abs() < 0.003);

        let rad = DistributionSpec::isotropic(DistributionKind::Rademacher, 1);
        let r = anti_concentration_probe(&rad, &[1.0], 100_000, 6).unwrap();
        assert!((r.max - 0.5).abs() < 0.01);
        assert!(r.max <= anti_concentration_bound(1.0));
    }
}
