//! Ho-Kalman realization of Markov-parameter estimates and similarity-aware evaluation.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::algebra;
use crate::error::{Result, SysIdError};
use crate::linalg;
use crate::markov::MarkovEstimate;
use crate::model::{markov_parameters, SystemMatrices};

/// Block Hankel matrix with block `(i, j) = X_{i+j+1}`, `i < s`, `j <= s`.
#[derive(Debug, Clone, PartialEq)]
pub struct HankelPair {
    pub h: DMatrix<f64>,
    /// First `p s` columns.
    pub h_minus: DMatrix<f64>,
    /// Last `p s` columns.
    pub h_plus: DMatrix<f64>,
    pub s: usize,
}

pub fn hankel_from_markov(est: &MarkovEstimate, s: usize) -> Result<HankelPair> {
    if s < 1 {
        return Err(SysIdError::InvalidArgument("s must be at least 1".into()));
    }
    if est.blocks.len() < 2 * s + 1 {
        return Err(SysIdError::InvalidArgument(format!(
            "need {} Markov blocks for s = {s}, have {}",
            2 * s + 1,
            est.blocks.len()
        )));
    }
    let (m, p) = (est.m(), est.p());
    let mut h = DMatrix::zeros(m * s, p * (s + 1));
    for i in 0..s {
        for j in 0..=s {
            h.view_mut((i * m, j * p), (m, p)).copy_from(&est.blocks[i + j + 1]);
        }
    }
    let h_minus = h.columns(0, p * s).into_owned();
    let h_plus = h.columns(p, p * s).into_owned();
    Ok(HankelPair { h, h_minus, h_plus, s })
}

/// A realized system with its balanced factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Realization {
    pub system: SystemMatrices,
    /// `U Sigma^{1/2}`, `m s x n`.
    #[serde(skip)]
    pub o_hat: DMatrix<f64>,
    /// `Sigma^{1/2} V^T`, `n x p s`.
    #[serde(skip)]
    pub q_hat: DMatrix<f64>,
    /// Full singular spectrum of the Hankel block that was truncated.
    pub singular_values: Vec<f64>,
    /// `sigma_n` fell below the pseudo-inverse cutoff.
    pub degenerate: bool,
}

impl Realization {
    /// Wraps a known system, with its order-`s` structure matrices as the factors.
    pub fn from_system(sys: &SystemMatrices, s: usize) -> Result<Self> {
        let o = algebra::observability_matrix(sys, s)?;
        let q = algebra::controllability_matrix(sys, s)?;
        let sv = linalg::singular_values(&(&o * &q));
        Ok(Realization {
            system: sys.clone(),
            o_hat: o,
            q_hat: q,
            singular_values: sv.iter().copied().collect(),
            degenerate: false,
        })
    }

    /// `Ohat Qhat`, the rank-`n` approximation of the Hankel block.
    pub fn low_rank(&self) -> DMatrix<f64> {
        &self.o_hat * &self.q_hat
    }
}

/// Realizes an order-`n` system from `Xhat_0..Xhat_{2s}`:
/// `Dhat = Xhat_0`, `Ohat Qhat` the rank-`n` SVD truncation of `H^-`,
/// `Chat`/`Bhat` the first block row/column of the factors, and
/// `Ahat = Ohat^+ H^+ Qhat^+`.
pub fn ho_kalman(est: &MarkovEstimate, s: usize, n: usize) -> Result<Realization> {
    let hp = hankel_from_markov(est, s)?;
    let (m, p) = (est.m(), est.p());
    if n < 1 || n > (m * s).min(p * s) {
        return Err(SysIdError::InvalidArgument(format!(
            "order {n} must lie in 1..={}",
            (m * s).min(p * s)
        )));
    }
    let dec = linalg::svd(&hp.h_minus);
    let sv = &dec.singular_values;
    let cutoff = linalg::PINV_RTOL * sv[0];
    let degenerate = sv[n - 1].is_nan() || sv[n - 1] <= cutoff;
    let root = DVector::from_fn(n, |i, _| sv[i].sqrt());
    let o_hat = dec.u.columns(0, n) * DMatrix::from_diagonal(&root);
    let q_hat = DMatrix::from_diagonal(&root) * dec.v_t.rows(0, n);
    let c = o_hat.rows(0, m).into_owned();
    let b = q_hat.columns(0, p).into_owned();
    let a = linalg::pinv(&o_hat) * &hp.h_plus * linalg::pinv(&q_hat);
    let system = SystemMatrices::new(a, b, c, est.blocks[0].clone())?;
    Ok(Realization {
        system,
        o_hat,
        q_hat,
        singular_values: sv.iter().copied().collect(),
        degenerate,
    })
}

/// `sum_{j=0..=horizon} ||X_j(a) - X_j(b)||_F`.
pub fn markov_distance(a: &SystemMatrices, b: &SystemMatrices, horizon: usize) -> Result<f64> {
    if a.m() != b.m() || a.p() != b.p() {
        return Err(SysIdError::Dimension(format!(
            "(m, p) = ({}, {}) vs ({}, {})",
            a.m(),
            a.p(),
            b.m(),
            b.p()
        )));
    }
    let xa = markov_parameters(a, horizon);
    let xb = markov_parameters(b, horizon);
    Ok(xa.iter().zip(&xb).map(|(x, y)| (x - y).norm()).sum())
}

/// Comparison of an estimate with the truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// `sum_{j <= 2s} ||X_j(truth) - X_j(estimate)||_F`.
    pub markov_error: f64,
    /// `||A - U^{-1} Ahat U||_F`.
    pub residual_a: f64,
    /// `||B - U^{-1} Bhat||_F`.
    pub residual_b: f64,
    /// `||C - Chat U||_F`.
    pub residual_c: f64,
    /// `||D - Dhat||_F`.
    pub residual_d: f64,
    #[serde(skip)]
    pub transform: DMatrix<f64>,
    pub alignment_failed: bool,
}

impl EvalReport {
    pub fn max_residual(&self) -> f64 {
        self.residual_a
            .max(self.residual_b)
            .max(self.residual_c)
            .max(self.residual_d)
    }
}

fn joint_residual(truth: &SystemMatrices, est: &SystemMatrices, u: &DMatrix<f64>) -> Option<DVector<f64>> {
    let inv = u.clone().try_inverse()?;
    let ra = &inv * &est.a * u - &truth.a;
    let rb = &inv * &est.b - &truth.b;
    let rc = &est.c * u - &truth.c;
    let parts: Vec<f64> = ra.iter().chain(rb.iter()).chain(rc.iter()).copied().collect();
    Some(DVector::from_vec(parts))
}

fn condition_number(u: &DMatrix<f64>) -> f64 {
    let sv = linalg::singular_values(u);
    let smin = sv[sv.len() - 1];
    if smin > 0.0 {
        sv[0] / smin
    } else {
        f64::INFINITY
    }
}

/// Finds `U` with `Chat U ~ C`, `U^{-1} Ahat U ~ A`, `U^{-1} Bhat ~ B`.
///
/// The starting point is the least-squares solution of `Ohat U = O_s(truth)`;
/// one damped Gauss-Newton step on the stacked `(A, B, C)` residual follows and
/// is kept only if it lowers that residual.
pub fn align_similarity(truth: &SystemMatrices, est: &Realization) -> Result<EvalReport> {
    let n = truth.n();
    let sys = &est.system;
    if sys.n() != n || sys.m() != truth.m() || sys.p() != truth.p() {
        return Err(SysIdError::Dimension("truth and estimate have different dimensions".into()));
    }
    let s = (est.o_hat.nrows() / truth.m()).max(1);
    let o_truth = algebra::observability_matrix(truth, s)?;
    let mut u = if est.o_hat.nrows() == o_truth.nrows() {
        linalg::pinv(&est.o_hat) * &o_truth
    } else {
        linalg::pinv(&algebra::observability_matrix(sys, s)?) * &o_truth
    };

    if let Some(r0) = joint_residual(truth, sys, &u) {
        let f0 = r0.norm();
        let h = 1e-7 * u.norm().max(1.0);
        let mut jac = DMatrix::zeros(r0.len(), n * n);
        let mut ok = true;
        for idx in 0..n * n {
            let (i, j) = (idx / n, idx % n);
            let mut up = u.clone();
            up[(i, j)] += h;
            let mut dn = u.clone();
            dn[(i, j)] -= h;
            match (joint_residual(truth, sys, &up), joint_residual(truth, sys, &dn)) {
                (Some(a), Some(b)) => jac.set_column(idx, &((a - b) / (2.0 * h))),
                _ => {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            let delta = -linalg::pinv(&jac) * &r0;
            let mut damp = 1.0;
            for _ in 0..20 {
                let cand = &u + DMatrix::from_fn(n, n, |i, j| damp * delta[i * n + j]);
                if let Some(r) = joint_residual(truth, sys, &cand) {
                    if r.norm() < f0 {
                        u = cand;
                        break;
                    }
                }
                damp *= 0.5;
            }
        }
    }

    let cond = condition_number(&u);
    let alignment_failed = cond.is_nan() || cond > 1e8;
    let (residual_a, residual_b, residual_c) = match u.clone().try_inverse() {
        Some(inv) if !alignment_failed => (
            (&truth.a - &inv * &sys.a * &u).norm(),
            (&truth.b - &inv * &sys.b).norm(),
            (&truth.c - &sys.c * &u).norm(),
        ),
        _ => (f64::INFINITY, f64::INFINITY, f64::INFINITY),
    };
    Ok(EvalReport {
        markov_error: markov_distance(truth, sys, 2 * s)?,
        residual_a,
        residual_b,
        residual_c,
        residual_d: (&truth.d - &sys.d).norm(),
        transform: u,
        alignment_failed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_hankel_layout() {
        let a: f64 = 0.6;
        let sys = SystemMatrices::scalar(a, 1.0, 1.0, 0.0);
        let est = MarkovEstimate::exact(&sys, 4);
        let hp = hankel_from_markov(&est, 2).unwrap();
        let want = DMatrix::from_row_slice(2, 3, &[1.0, a, a * a, a, a * a, a * a * a]);
        assert!((&hp.h - want).amax() < 1e-15);
        assert_eq!(hp.h_minus.ncols(), 2);
        assert_eq!(hp.h_plus.columns(0, 1), hp.h_minus.columns(1, 1));
        assert!(hankel_from_markov(&MarkovEstimate::exact(&sys, 3), 2).is_err());
    }

    #[test]
    fn zero_blocks_give_zero_hankel() {
        let est = MarkovEstimate::new(vec![DMatrix::zeros(2, 3); 7], 0).unwrap();
        let hp = hankel_from_markov(&est, 3).unwrap();
        assert_eq!(hp.h.shape(), (6, 12));
        assert!(hp.h.iter().all(|&x| x == 0.0));
        // overlap of p (s - 1) columns
        assert_eq!(hp.h_minus.columns(3, 6), hp.h_plus.columns(0, 6));
    }

    #[test]
    fn exact_scalar_realization() {
        let sys = SystemMatrices::scalar(0.5, 1.0, 1.0, 0.0);
        let r = ho_kalman(&MarkovEstimate::exact(&sys, 2), 1, 1).unwrap();
        assert!(!r.degenerate);
        assert!(markov_distance(&sys, &r.system, 2).unwrap() <= 1e-10);
        assert!(markov_distance(&sys, &r.system, 30).unwrap() <= 1e-10);
    }

    #[test]
    fn collapsed_rank_is_flagged() {
        let sys = SystemMatrices::scalar(0.5, 0.0, 1.0, 0.0);
        let r = ho_kalman(&MarkovEstimate::exact(&sys, 2), 1, 1).unwrap();
        assert!(r.degenerate);
        assert!(ho_kalman(&MarkovEstimate::exact(&sys, 2), 1, 2).is_err());
    }

    #[test]
    fn markov_distance_examples() {
        let one = SystemMatrices::scalar(1.0, 1.0, 1.0, 0.0);
        let nine = SystemMatrices::scalar(0.9, 1.0, 1.0, 0.0);
        let direct: f64 = (1..=10).map(|j| (1.0 - 0.9f64.powi(j - 1)).abs()).sum();
        assert!((markov_distance(&one, &nine, 10).unwrap() - direct).abs() < 1e-12);
        assert_eq!(markov_distance(&one, &one, 10).unwrap(), 0.0);
        let wide = SystemMatrices::new(DMatrix::identity(1, 1), DMatrix::identity(1, 2), DMatrix::identity(1, 1), DMatrix::zeros(1, 2))
            .unwrap();
        assert!(markov_distance(&one, &wide, 3).is_err());
    }

    #[test]
    fn identical_estimate_aligns_with_identity() {
        let sys = SystemMatrices::new(
            DMatrix::from_row_slice(2, 2, &[0.5, 0.2, -0.1, 0.8]),
            DMatrix::from_row_slice(2, 1, &[1.0, 0.5]),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.5]),
            DMatrix::from_element(1, 1, 0.3),
        )
        .unwrap();
        let rep = align_similarity(&sys, &Realization::from_system(&sys, 2).unwrap()).unwrap();
        assert!((&rep.transform - DMatrix::<f64>::identity(2, 2)).amax() < 1e-10, "{}", rep.transform);
        assert!(rep.max_residual() < 1e-10);
        assert!(!rep.alignment_failed);
    }
}
