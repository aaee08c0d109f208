//! Nearly unobservable (or uncontrollable) systems whose trajectory laws are
//! almost identical even though their parameters are far apart.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SysIdError};
use crate::linalg;
use crate::model::SystemMatrices;
use crate::rng::{self, stream};

/// Horizon over which the defining inequality of a pair is verified.
pub const S_MAX: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairKind {
    /// `||C A^s v|| <= delta` for all `s`.
    Unobservable,
    /// `||(A^s B)^T v|| <= delta` for all `s`.
    Uncontrollable,
}

/// A system together with the direction `v` it (almost) hides.
#[derive(Debug, Clone, PartialEq)]
pub struct UnobservablePair {
    pub sys: SystemMatrices,
    pub v: DVector<f64>,
    pub delta: f64,
    pub kind: PairKind,
}

impl UnobservablePair {
    /// Checks `||v|| = 1` and the defining inequality up to [`S_MAX`].
    pub fn new(sys: SystemMatrices, v: DVector<f64>, delta: f64, kind: PairKind) -> Result<Self> {
        if v.len() != sys.n() || (v.norm() - 1.0).abs() > 1e-10 {
            return Err(SysIdError::InvalidArgument("v must be a unit vector of dimension n".into()));
        }
        let pair = UnobservablePair { sys, v, delta, kind };
        let worst = pair.leakage(S_MAX);
        if worst > delta * (1.0 + 1e-9) + 1e-12 {
            return Err(SysIdError::Precondition(format!(
                "leakage {worst:e} exceeds delta {delta:e}"
            )));
        }
        Ok(pair)
    }

    /// `max_{s <= horizon} ||C A^s v||` (or `||B^T (A^T)^s v||`).
    pub fn leakage(&self, horizon: usize) -> f64 {
        let (mat, start) = match self.kind {
            PairKind::Unobservable => (self.sys.a.clone(), self.sys.c.clone()),
            PairKind::Uncontrollable => (self.sys.a.transpose(), self.sys.b.transpose()),
        };
        let mut x = self.v.clone();
        let mut worst: f64 = 0.0;
        for _ in 0..=horizon {
            worst = worst.max((&start * &x).norm());
            x = &mat * x;
        }
        worst
    }
}

fn gaussian_matrix(r: usize, c: usize, seed: u64, counter: u64) -> DMatrix<f64> {
    let mut g = rng::substream(seed, stream::AUX + 2, counter);
    DMatrix::from_fn(r, c, |_, _| g.sample::<f64, _>(StandardNormal))
}

/// Orthonormal basis of the complement of unit `v`, as `n x (n-1)` columns.
pub fn orthogonal_complement(v: &DVector<f64>) -> DMatrix<f64> {
    let n = v.len();
    let mut basis = DMatrix::zeros(n, n);
    basis.set_column(0, v);
    let mut next = 1;
    for i in 0..n {
        if next == n {
            break;
        }
        let mut e = DVector::zeros(n);
        e[i] = 1.0;
        for j in 0..next {
            let col = basis.column(j).into_owned();
            e -= &col * col.dot(&e);
        }
        let ne = e.norm();
        if ne > 1e-8 {
            basis.set_column(next, &(e / ne));
            next += 1;
        }
    }
    basis.columns(1, n - 1).into_owned()
}

/// A `(delta, v)`-unobservable system with `p = n`, `B = I`, `D = 0`.
///
/// `A = lambda v v^T + V M V^T + v r^T V^T` where `V` spans the complement of
/// `v`, `M` is a random orthogonal matrix (spectral radius one) and `r` a random
/// coupling of norm 1/2, so `A v = lambda v`. `C` is a random matrix with `v` in
/// its kernel, normalized to unit norm, plus `delta e_1 v^T`.
pub fn build_unobservable(n: usize, m: usize, delta: f64, lambda: f64, seed: u64) -> Result<UnobservablePair> {
    if n < 3 {
        return Err(SysIdError::InvalidArgument("n must be at least 3".into()));
    }
    if m < 1 || !(0.0..0.1).contains(&delta) || !(-1.0..=1.0).contains(&lambda) {
        return Err(SysIdError::InvalidArgument("need m >= 1, 0 <= delta < 0.1, |lambda| <= 1".into()));
    }
    let mut v = gaussian_matrix(n, 1, seed, 0).column(0).into_owned();
    v /= v.norm();
    let vp = orthogonal_complement(&v);
    let orth = gaussian_matrix(n - 1, n - 1, seed, 1).qr().q();
    let mut r = gaussian_matrix(n - 1, 1, seed, 2).column(0).into_owned();
    r *= 0.5 / r.norm();
    let a = &v * v.transpose() * lambda + &vp * orth * vp.transpose() + &v * r.transpose() * vp.transpose();

    let c0 = gaussian_matrix(m, n, seed, 3) * (DMatrix::identity(n, n) - &v * v.transpose());
    let mut c = &c0 / linalg::spectral_norm(&c0);
    let mut e1 = DVector::zeros(m);
    e1[0] = delta;
    c += e1 * v.transpose();

    let sys = SystemMatrices::new(a, DMatrix::identity(n, n), c, DMatrix::zeros(m, n))?;
    UnobservablePair::new(sys, v, delta, PairKind::Unobservable)
}

/// The transposed construction: a `(delta, v)`-uncontrollable system with `m = n`, `C = I`.
pub fn build_uncontrollable(n: usize, p: usize, delta: f64, lambda: f64, seed: u64) -> Result<UnobservablePair> {
    let dual = build_unobservable(n, p, delta, lambda, seed)?;
    let sys = SystemMatrices::new(
        dual.sys.a.transpose(),
        dual.sys.c.transpose(),
        DMatrix::identity(n, n),
        DMatrix::zeros(n, p),
    )?;
    UnobservablePair::new(sys, dual.v, delta, PairKind::Uncontrollable)
}

/// Block lower-triangular `m(T+1) x q(T+1)` matrix with block `(i, j) = C A^{i-j-1} G` for `i > j`.
pub fn toeplitz_with(a: &DMatrix<f64>, g: &DMatrix<f64>, c: &DMatrix<f64>, horizon: usize) -> DMatrix<f64> {
    let (m, q) = (c.nrows(), g.ncols());
    let len = horizon + 1;
    let mut out = DMatrix::zeros(m * len, q * len);
    let mut ca = c.clone();
    for lag in 1..len {
        let block = &ca * g;
        for j in 0..len - lag {
            out.view_mut(((j + lag) * m, j * q), (m, q)).copy_from(&block);
        }
        ca = &ca * a;
    }
    out
}

/// The block matrix mapping inputs `u_0..u_T` to the noiseless, zero-feedthrough outputs.
pub fn toeplitz_p(sys: &SystemMatrices, horizon: usize) -> DMatrix<f64> {
    toeplitz_with(&sys.a, &sys.b, &sys.c, horizon)
}

/// Covariance of `(u_0..u_T, y_0..y_T)` for isotropic gaussian inputs,
/// `w ~ N(0, Sigma_w)`, `z ~ N(0, I)`, `x_0 = 0`, `D = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessCovariance {
    pub sigma: DMatrix<f64>,
    pub horizon: usize,
    pub m: usize,
    pub p: usize,
}

/// `Sigma = [I; P][I, P^T] + [0; P_w][0, P_w^T] + diag(0, I)` with
/// `P = P_T(A, B, C)` and `P_w = P_T(A, Sigma_w^{1/2}, C)`.
pub fn process_covariance(sys: &SystemMatrices, sigma_w: &DMatrix<f64>, horizon: usize) -> Result<ProcessCovariance> {
    if sys.d.iter().any(|&x| x != 0.0) {
        return Err(SysIdError::Precondition("process covariance requires D = 0".into()));
    }
    if sigma_w.shape() != (sys.n(), sys.n()) {
        return Err(SysIdError::Dimension("Sigma_w must be n x n".into()));
    }
    let root = linalg::psd_sqrt(sigma_w)?;
    let (m, p) = (sys.m(), sys.p());
    let len = horizon + 1;
    let pm = toeplitz_p(sys, horizon);
    let pw = toeplitz_with(&sys.a, &root, &sys.c, horizon);
    let (nu, ny) = (p * len, m * len);
    let mut sigma = DMatrix::zeros(nu + ny, nu + ny);
    sigma.view_mut((0, 0), (nu, nu)).fill_with_identity();
    sigma.view_mut((nu, 0), (ny, nu)).copy_from(&pm);
    sigma.view_mut((0, nu), (nu, ny)).copy_from(&pm.transpose());
    let yy = &pm * pm.transpose() + &pw * pw.transpose() + DMatrix::identity(ny, ny);
    sigma.view_mut((nu, nu), (ny, ny)).copy_from(&yy);
    Ok(ProcessCovariance { sigma, horizon, m, p })
}

/// The same system with the hidden direction perturbed by `u_vec`:
/// `B + v u^T` for unobservable pairs, `C + u v^T` for uncontrollable ones.
pub fn perturbed_system(pair: &UnobservablePair, u_vec: &DVector<f64>) -> Result<SystemMatrices> {
    let mut sys = pair.sys.clone();
    match pair.kind {
        PairKind::Unobservable => {
            if u_vec.len() != sys.p() {
                return Err(SysIdError::Dimension(format!("u has length {}, expected p = {}", u_vec.len(), sys.p())));
            }
            sys.b += &pair.v * u_vec.transpose();
        }
        PairKind::Uncontrollable => {
            if u_vec.len() != sys.m() {
                return Err(SysIdError::Dimension(format!("u has length {}, expected m = {}", u_vec.len(), sys.m())));
            }
            sys.c += u_vec * pair.v.transpose();
        }
    }
    Ok(sys)
}

/// How far apart two zero-mean gaussian laws are.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClosenessReport {
    /// Smallest `eta` with `(1 - eta) S1 <= S2 <= (1 + eta) S1`.
    pub mult_factor: f64,
    /// `(1/2) ||S1^{-1/2} S2 S1^{-1/2} - I||_F`.
    pub tv_upper: f64,
    /// `6 (T+1) ||u|| delta`, when supplied.
    pub paper_bound: Option<f64>,
}

/// `6 (T+1) ||u|| delta`.
pub fn sandwich_bound(horizon: usize, u_norm: f64, delta: f64) -> f64 {
    6.0 * (horizon + 1) as f64 * u_norm * delta
}

/// Compares `s2` against `s1` through the whitened matrix `S1^{-1/2} S2 S1^{-1/2}`;
/// `s1` is shifted by `1e-12 I` when it is numerically singular.
pub fn covariance_closeness(s1: &ProcessCovariance, s2: &ProcessCovariance) -> Result<ClosenessReport> {
    if s1.sigma.shape() != s2.sigma.shape() {
        return Err(SysIdError::Dimension("covariances differ in size".into()));
    }
    let w = linalg::psd_inv_sqrt(&s1.sigma, 1e-12);
    let mut white = &w * &s2.sigma * &w;
    let dim = white.nrows();
    for i in 0..dim {
        white[(i, i)] -= 1.0;
    }
    let white = (&white + white.transpose()) * 0.5;
    let mult_factor = linalg::symmetric_eigenvalues(&white).amax();
    Ok(ClosenessReport {
        mult_factor,
        tv_upper: 0.5 * white.norm(),
        paper_bound: None,
    })
}

/// Outcome of a genericity search.
#[derive(Debug, Clone, PartialEq)]
pub struct GenericityWitness {
    pub holds: bool,
    /// Largest `<u, A w>` found, over unit `u _|_ v`, `w _|_ u`.
    pub pairing: f64,
    pub u: DVector<f64>,
    pub w: DVector<f64>,
}

impl GenericityWitness {
    /// Largest `c` certified by the witness: `min(||A||, pairing / ||A||)`.
    pub fn certified_c(&self, a: &DMatrix<f64>) -> f64 {
        let na = linalg::spectral_norm(a);
        if na == 0.0 {
            0.0
        } else {
            na.min(self.pairing / na)
        }
    }
}

fn unit(x: DVector<f64>) -> Option<DVector<f64>> {
    let nx = x.norm();
    (nx > 1e-14).then(|| x / nx)
}

/// Searches for unit `u, w` with `<u, v> = 0`, `<u, w> = 0` and `<u, A w> >= c ||A||`
/// (and requires `||A|| >= c`).
///
/// Starting points are the left singular vectors of `A` compressed to the
/// complement of `v`; each is refined by alternating exact maximization over
/// `w` (best unit vector orthogonal to `u`) and `u` (best unit vector
/// orthogonal to `v` and `w`), which never decreases the pairing.
pub fn c_generic_check(a: &DMatrix<f64>, v: &DVector<f64>, c: f64) -> Result<GenericityWitness> {
    let n = a.nrows();
    if !a.is_square() || v.len() != n {
        return Err(SysIdError::Dimension("A must be square with v of matching length".into()));
    }
    if (v.norm() - 1.0).abs() > 1e-10 {
        return Err(SysIdError::InvalidArgument("v must be a unit vector".into()));
    }
    let none = GenericityWitness {
        holds: false,
        pairing: 0.0,
        u: DVector::zeros(n),
        w: DVector::zeros(n),
    };
    if n < 3 {
        return Ok(none);
    }
    let na = linalg::spectral_norm(a);
    let vp = orthogonal_complement(v);
    let compressed = vp.transpose() * a;
    let dec = linalg::svd(&compressed);
    let mut best = none;
    for i in 0..dec.u.ncols() {
        let Some(mut u) = unit(&vp * dec.u.column(i)) else { continue };
        let mut w = DVector::zeros(n);
        let mut pairing = f64::NEG_INFINITY;
        for _ in 0..500 {
            let atu = a.transpose() * &u;
            let Some(nw) = unit(&atu - &u * u.dot(&atu)) else { break };
            w = nw;
            let aw = a * &w;
            let w2 = unit(&w - v * v.dot(&w));
            let mut cand = &aw - v * v.dot(&aw);
            if let Some(w2) = &w2 {
                cand -= w2 * w2.dot(&aw);
            }
            let Some(nu) = unit(cand) else { break };
            u = nu;
            let next = u.dot(&(a * &w));
            if next <= pairing + 1e-15 * na.max(1.0) {
                break;
            }
            pairing = next;
        }
        // `u` was last updated against `w`; re-fit `w` so that `w _|_ u` holds exactly.
        let atu = a.transpose() * &u;
        if let Some(nw) = unit(&atu - &u * u.dot(&atu)) {
            w = nw;
        }
        let value = u.dot(&(a * &w));
        if value > best.pairing {
            best = GenericityWitness {
                holds: false,
                pairing: value,
                u: u.clone(),
                w: w.clone(),
            };
        }
    }
    let tol = 1e-12 * na.max(1.0);
    best.holds = na >= c && na > 0.0 && best.pairing >= c * na - tol;
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_pair_leaks_exactly_delta() {
        let delta = 1e-3;
        let sys = SystemMatrices::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.5]),
            DMatrix::identity(2, 2),
            DMatrix::from_row_slice(1, 2, &[delta, 1.0]),
            DMatrix::zeros(1, 2),
        )
        .unwrap();
        let v = DVector::from_vec(vec![1.0, 0.0]);
        let pair = UnobservablePair::new(sys, v, delta, PairKind::Unobservable).unwrap();
        assert!((pair.leakage(S_MAX) - delta).abs() < 1e-18);
    }

    #[test]
    fn construction_satisfies_invariant() {
        let pair = build_unobservable(4, 2, 1e-3, 0.9, 7).unwrap();
        assert!((&pair.sys.a * &pair.v - &pair.v * 0.9).norm() < 1e-12);
        assert!(pair.leakage(S_MAX) <= 1e-3 * (1.0 + 1e-9));
        assert!(linalg::spectral_radius(&pair.sys.a) <= 1.0 + 1e-9);
        let exact = build_unobservable(3, 1, 0.0, 1.0, 1).unwrap();
        let o = crate::algebra::observability_matrix(&exact.sys, 6).unwrap();
        assert!(linalg::sigma(&o, 2) < 1e-10);
        assert!(build_unobservable(2, 1, 1e-3, 0.5, 0).is_err());
    }

    #[test]
    fn uncontrollable_dual() {
        let pair = build_uncontrollable(3, 2, 1e-3, -0.5, 3).unwrap();
        assert_eq!(pair.kind, PairKind::Uncontrollable);
        assert!(pair.leakage(S_MAX) <= 1e-3 * (1.0 + 1e-9));
        let u = DVector::from_vec(vec![0.0, 1.0, 0.0]);
        let moved = perturbed_system(&pair, &u).unwrap();
        assert!((&moved.c - &pair.sys.c).norm() - 1.0 < 1e-12);
    }

    #[test]
    fn toeplitz_examples() {
        let sys = SystemMatrices::scalar(1.0, 1.0, 1.0, 0.0);
        assert_eq!(toeplitz_p(&sys, 0), DMatrix::zeros(1, 1));
        assert_eq!(toeplitz_p(&sys, 1), DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0]));
    }

    #[test]
    fn covariance_at_zero_horizon_is_identity() {
        let sys = SystemMatrices::new(
            DMatrix::from_element(2, 2, 0.3),
            DMatrix::from_element(2, 3, 1.0),
            DMatrix::from_element(1, 2, 1.0),
            DMatrix::zeros(1, 3),
        )
        .unwrap();
        let pc = process_covariance(&sys, &DMatrix::identity(2, 2), 0).unwrap();
        assert_eq!(pc.sigma, DMatrix::identity(4, 4));
        let mut with_d = sys.clone();
        with_d.d[(0, 0)] = 1.0;
        assert!(process_covariance(&with_d, &DMatrix::identity(2, 2), 2).is_err());
    }

    #[test]
    fn closeness_of_identical_and_scaled() {
        let sys = SystemMatrices::scalar(0.9, 1.0, 1.0, 0.0);
        let a = process_covariance(&sys, &DMatrix::identity(1, 1), 3).unwrap();
        let r = covariance_closeness(&a, &a).unwrap();
        assert!(r.mult_factor < 1e-10 && r.tv_upper < 1e-10);
        let twice = ProcessCovariance {
            sigma: &a.sigma * 2.0,
            ..a.clone()
        };
        let r = covariance_closeness(&a, &twice).unwrap();
        assert!((r.mult_factor - 1.0).abs() < 1e-9);
    }

    #[test]
    fn genericity_examples() {
        // A e_1 = e_3, A e_2 = e_1, A e_3 = e_2.
        let perm = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
        let e1 = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let r = c_generic_check(&perm, &e1, 1.0).unwrap();
        assert!(r.holds, "{r:?}");
        assert!(r.u.dot(&e1).abs() < 1e-12 && r.u.dot(&r.w).abs() < 1e-12);
        assert!((r.pairing - 1.0).abs() < 1e-12);

        let id = DMatrix::<f64>::identity(4, 4);
        let v = DVector::from_vec(vec![0.5, 0.5, 0.5, 0.5]);
        let r = c_generic_check(&id, &v, 1e-6).unwrap();
        assert!(!r.holds && r.pairing.abs() < 1e-12);

        assert!(!c_generic_check(&DMatrix::zeros(3, 3), &e1, 0.1).unwrap().holds);
        let small = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert!(!c_generic_check(&small, &DVector::from_vec(vec![1.0, 0.0]), 0.1).unwrap().holds);
    }
}
