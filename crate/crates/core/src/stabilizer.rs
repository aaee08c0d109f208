//! The stabilizing coefficients and the convex feasibility program that finds them.
//!
//! Coefficients `alpha_1..alpha_s` (each `m x m`) define the transformed
//! observations `yhat_{t+k} = y_{t+k} - sum_j alpha_j y_{t-j}`. The program asks
//! for every `||alpha_j||_F <= P0` and, at each checkpoint `t = i L`,
//! `||y_{t+k} - sum_j alpha_j y_{t-j}||_2 <= P1 log(1/eps)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::algebra;
use crate::distribution::NoiseModel;
use crate::error::{Result, SysIdError};
use crate::linalg;
use crate::model::{SystemMatrices, Trajectory};

/// Coefficients `alpha_1..alpha_s`, each `m x m`.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilizerCoefficients {
    pub alpha: Vec<DMatrix<f64>>,
}

impl StabilizerCoefficients {
    pub fn new(alpha: Vec<DMatrix<f64>>) -> Result<Self> {
        let first = alpha
            .first()
            .ok_or_else(|| SysIdError::InvalidArgument("at least one coefficient block is required".into()))?;
        let m = first.nrows();
        if m == 0 {
            return Err(SysIdError::Dimension("coefficient blocks must be nonempty".into()));
        }
        for a in &alpha {
            if a.shape() != (m, m) {
                return Err(SysIdError::Dimension(format!("coefficient block {:?}, expected {m}x{m}", a.shape())));
            }
            if a.iter().any(|x| !x.is_finite()) {
                return Err(SysIdError::NonFinite("stabilizer coefficients"));
            }
        }
        Ok(StabilizerCoefficients { alpha })
    }

    pub fn zeros(s: usize, m: usize) -> Self {
        StabilizerCoefficients {
            alpha: vec![DMatrix::zeros(m, m); s],
        }
    }

    pub fn s(&self) -> usize {
        self.alpha.len()
    }

    pub fn m(&self) -> usize {
        self.alpha[0].nrows()
    }

    /// Blocks concatenated, each flattened row-major.
    pub fn to_vector(&self) -> DVector<f64> {
        let m = self.m();
        let mut out = DVector::zeros(self.s() * m * m);
        for (j, a) in self.alpha.iter().enumerate() {
            for r in 0..m {
                for c in 0..m {
                    out[j * m * m + r * m + c] = a[(r, c)];
                }
            }
        }
        out
    }

    pub fn from_vector(x: &DVector<f64>, s: usize, m: usize) -> Result<Self> {
        if x.len() != s * m * m {
            return Err(SysIdError::Dimension(format!("vector of length {} for s={s}, m={m}", x.len())));
        }
        let alpha = (0..s)
            .map(|j| DMatrix::from_fn(m, m, |r, c| x[j * m * m + r * m + c]))
            .collect();
        StabilizerCoefficients::new(alpha)
    }

    /// `sum_j ||alpha_j||_F^2`.
    pub fn squared_norm(&self) -> f64 {
        self.alpha.iter().map(|a| a.norm_squared()).sum()
    }
}

#[derive(Serialize, Deserialize)]
struct CoefficientsRepr {
    s: usize,
    m: usize,
    alpha: Vec<Vec<Vec<f64>>>,
}

impl Serialize for StabilizerCoefficients {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        CoefficientsRepr {
            s: self.s(),
            m: self.m(),
            alpha: self.alpha.iter().map(linalg::to_rows).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for StabilizerCoefficients {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error;
        let r = CoefficientsRepr::deserialize(d)?;
        if r.alpha.len() != r.s {
            return Err(D::Error::custom("alpha length does not match s"));
        }
        let blocks = r
            .alpha
            .iter()
            .map(|rows| linalg::from_rows(rows, r.m))
            .collect::<Result<Vec<_>>>()
            .map_err(D::Error::custom)?;
        StabilizerCoefficients::new(blocks).map_err(D::Error::custom)
    }
}

/// Constants a learner is assumed to know about the system class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemBounds {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub kappa: f64,
    pub hypercontractivity: f64,
    pub norm_b: f64,
    pub norm_c: f64,
    pub norm_d: f64,
    pub sigma_w: f64,
    pub sigma_z: f64,
}

impl SystemBounds {
    /// Bounds read off a known system and noise model.
    pub fn from_system(sys: &SystemMatrices, noise: &NoiseModel, kappa: f64) -> Self {
        SystemBounds {
            n: sys.n(),
            m: sys.m(),
            p: sys.p(),
            kappa,
            hypercontractivity: noise.input.hypercontractivity(),
            norm_b: linalg::spectral_norm(&sys.b),
            norm_c: linalg::spectral_norm(&sys.c),
            norm_d: linalg::spectral_norm(&sys.d),
            sigma_w: noise.process.max_variance(),
            sigma_z: noise.observation.max_variance(),
        }
    }

    /// `P0 = kappa (sqrt(n) kappa)^{(k+s)/s} ||C|| sqrt(s) m`.
    pub fn p0(&self, s: usize, k: usize) -> f64 {
        let sk = self.kappa * (self.n as f64).sqrt();
        let expo = (k + s) as f64 / s as f64;
        self.kappa * sk.powf(expo) * self.norm_c * (s as f64).sqrt() * self.m as f64
    }

    /// `P1 = 100 P0 (k+s) (1 + sigma_w + sigma_z) max(1, ||B||, ||C||, ||D||)^2`.
    pub fn p1(&self, s: usize, k: usize) -> f64 {
        let big = 1f64.max(self.norm_b).max(self.norm_c).max(self.norm_d);
        100.0 * self.p0(s, k) * (k + s) as f64 * (1.0 + self.sigma_w + self.sigma_z) * big * big
    }
}

/// Which checkpoint schedule and constants are in force.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// `k = 10 s`, `100 s n m^2 K log L` checkpoints spaced `L` apart.
    Paper,
    /// `k = 2 s`, `20 log L` checkpoints packed into the available horizon,
    /// and a checkpoint radius calibrated from the data.
    Practical,
}

/// Default relative slack of the calibrated checkpoint radius.
pub const DEFAULT_CALIBRATION_SLACK: f64 = 0.1;
/// Default checkpoint-count multiplier in practical mode.
pub const PRACTICAL_CHECKPOINT_FACTOR: f64 = 20.0;

/// Parameters of the constraint system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintConfig {
    pub mode: Mode,
    pub s: usize,
    pub k: usize,
    pub p0: f64,
    pub p1: f64,
    pub p2: f64,
    /// Checkpoint spacing `L`.
    pub spacing: usize,
    pub num_checkpoints: usize,
    pub eps: f64,
    /// When set, `P1` is replaced by `(1 + slack) r_min / log(1/eps)` where
    /// `r_min` is the smallest achievable worst-case checkpoint residual.
    #[serde(default)]
    pub calibration_slack: Option<f64>,
}

fn nominal_spacing(p2: f64, eps: f64) -> f64 {
    let le = (1.0 / eps).ln();
    p2 * le * le / (eps * eps)
}

impl ConstraintConfig {
    /// Constants and counts exactly as stated for the algorithm. Only tiny
    /// instances (or overridden constants) fit a finite trajectory.
    pub fn paper(bounds: &SystemBounds, s: usize, eps: f64) -> Result<Self> {
        check_eps_s(eps, s)?;
        let k = 10 * s;
        let p0 = bounds.p0(s, k);
        let p1 = bounds.p1(s, k);
        let p2 = p1 * p1;
        let l = nominal_spacing(p2, eps);
        let count = 100.0
            * s as f64
            * bounds.n as f64
            * (bounds.m * bounds.m) as f64
            * bounds.hypercontractivity.max(3.0)
            * l.ln().max(1.0);
        Ok(ConstraintConfig {
            mode: Mode::Paper,
            s,
            k,
            p0,
            p1,
            p2,
            spacing: l.ceil() as usize,
            num_checkpoints: count.ceil() as usize,
            eps,
            calibration_slack: None,
        })
    }

    /// `20 log L` checkpoints spaced `min(L, (T - k - s) / count)` apart, `k = 2 s`,
    /// and a data-calibrated checkpoint radius.
    pub fn practical(bounds: &SystemBounds, s: usize, eps: f64, horizon: usize) -> Result<Self> {
        check_eps_s(eps, s)?;
        let k = 2 * s;
        let p0 = bounds.p0(s, k);
        let p1 = bounds.p1(s, k);
        let p2 = p1 * p1;
        let l = nominal_spacing(p2, eps);
        let count = (PRACTICAL_CHECKPOINT_FACTOR * l.ln().max(1.0)).ceil() as usize;
        let room = horizon.saturating_sub(k + s);
        let spacing = ((room / count) as f64).min(l.floor()) as usize;
        let cfg = ConstraintConfig {
            mode: Mode::Practical,
            s,
            k,
            p0,
            p1,
            p2,
            spacing,
            num_checkpoints: count,
            eps,
            calibration_slack: Some(DEFAULT_CALIBRATION_SLACK),
        };
        cfg.validate(horizon)?;
        Ok(cfg)
    }

    /// Observation indices `i L + k`, `i = 1..=num_checkpoints`, whose residuals are constrained.
    pub fn checkpoint_indices(&self) -> Vec<usize> {
        (1..=self.num_checkpoints).map(|i| i * self.spacing + self.k).collect()
    }

    /// `P1 log(1/eps)`.
    pub fn checkpoint_radius(&self) -> f64 {
        self.p1 * (1.0 / self.eps).ln()
    }

    /// Smallest horizon that holds every checkpoint plus `s` lags.
    pub fn required_horizon(&self) -> Option<usize> {
        self.num_checkpoints
            .checked_mul(self.spacing)?
            .checked_add(self.k + self.s)
    }

    pub fn validate(&self, horizon: usize) -> Result<()> {
        check_eps_s(self.eps, self.s)?;
        if self.k < 1 {
            return Err(SysIdError::InvalidArgument("k must be at least 1".into()));
        }
        if !(self.p0 > 0.0 && self.p1 > 0.0 && self.p0.is_finite() && self.p1.is_finite()) {
            return Err(SysIdError::InvalidArgument("P0 and P1 must be positive and finite".into()));
        }
        if self.num_checkpoints == 0 {
            return Err(SysIdError::InvalidArgument("at least one checkpoint is required".into()));
        }
        if let Some(sl) = self.calibration_slack {
            if !(sl >= 0.0 && sl.is_finite()) {
                return Err(SysIdError::InvalidArgument("calibration slack must be nonnegative".into()));
            }
        }
        let needed = self.required_horizon().unwrap_or(usize::MAX);
        if self.spacing < self.s || needed > horizon {
            let needed = needed.max((self.s * self.num_checkpoints).saturating_add(self.k + self.s));
            return Err(SysIdError::TrajectoryTooShort { needed, have: horizon });
        }
        Ok(())
    }
}

fn check_eps_s(eps: f64, s: usize) -> Result<()> {
    if s < 1 {
        return Err(SysIdError::InvalidArgument("s must be at least 1".into()));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(SysIdError::InvalidArgument("eps must lie in (0, 1)".into()));
    }
    Ok(())
}

/// Ball constraints on the flattened coefficient vector `x`:
/// `||x_j|| <= P0` for every block, and `||target_i - M_i x|| <= radius` for every checkpoint.
#[derive(Debug, Clone)]
pub struct ConstraintSystem {
    pub s: usize,
    pub m: usize,
    pub coefficient_radius: f64,
    pub checkpoint_radius: f64,
    /// Observation index of each checkpoint (informational).
    pub checkpoints: Vec<usize>,
    /// Stacked `M_i`, `m` rows per checkpoint, `s m^2` columns.
    pub design: DMatrix<f64>,
    /// Stacked targets, `m` entries per checkpoint.
    pub targets: DVector<f64>,
}

/// Builds the constraint system of `traj` under `cfg`.
pub fn build_constraints(traj: &Trajectory, cfg: &ConstraintConfig) -> Result<ConstraintSystem> {
    cfg.validate(traj.horizon())?;
    let (s, k, m) = (cfg.s, cfg.k, traj.m());
    let d = s * m * m;
    let idx: Vec<usize> = (1..=cfg.num_checkpoints).map(|i| i * cfg.spacing).collect();
    let mut design = DMatrix::zeros(idx.len() * m, d);
    let mut targets = DVector::zeros(idx.len() * m);
    for (ci, &t) in idx.iter().enumerate() {
        targets.rows_mut(ci * m, m).copy_from(&traj.y(t + k));
        for j in 1..=s {
            let lag = traj.y(t - j);
            for r in 0..m {
                for c in 0..m {
                    design[(ci * m + r, (j - 1) * m * m + r * m + c)] = lag[c];
                }
            }
        }
    }
    Ok(ConstraintSystem {
        s,
        m,
        coefficient_radius: cfg.p0,
        checkpoint_radius: cfg.checkpoint_radius(),
        checkpoints: idx.iter().map(|t| t + k).collect(),
        design,
        targets,
    })
}

impl ConstraintSystem {
    /// A system with explicit checkpoint rows, for experiments and tests.
    pub fn from_parts(
        s: usize,
        m: usize,
        coefficient_radius: f64,
        design: DMatrix<f64>,
        targets: DVector<f64>,
        checkpoint_radius: f64,
    ) -> Result<Self> {
        if design.ncols() != s * m * m || design.nrows() != targets.len() || !targets.len().is_multiple_of(m) {
            return Err(SysIdError::Dimension("design/target shapes are inconsistent".into()));
        }
        let count = targets.len() / m;
        Ok(ConstraintSystem {
            s,
            m,
            coefficient_radius,
            checkpoint_radius,
            checkpoints: (0..count).collect(),
            design,
            targets,
        })
    }

    pub fn num_checkpoints(&self) -> usize {
        self.targets.len() / self.m
    }

    /// Total number of constraints, coefficient balls included.
    pub fn len(&self) -> usize {
        self.s + self.num_checkpoints()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn with_checkpoint_radius(&self, radius: f64) -> Self {
        ConstraintSystem {
            checkpoint_radius: radius,
            ..self.clone()
        }
    }

    /// Euclidean norms of the checkpoint residuals at `alpha`.
    pub fn residual_norms(&self, alpha: &StabilizerCoefficients) -> Vec<f64> {
        let res = &self.targets - &self.design * alpha.to_vector();
        (0..self.num_checkpoints())
            .map(|i| res.rows(i * self.m, self.m).norm())
            .collect()
    }

    /// `max(0, norm - radius)` for every constraint: coefficient blocks first, then checkpoints.
    pub fn violations(&self, alpha: &StabilizerCoefficients) -> Vec<f64> {
        let mut out: Vec<f64> = alpha
            .alpha
            .iter()
            .map(|a| (a.norm() - self.coefficient_radius).max(0.0))
            .collect();
        out.extend(
            self.residual_norms(alpha)
                .into_iter()
                .map(|r| (r - self.checkpoint_radius).max(0.0)),
        );
        out
    }

    pub fn max_violation(&self, alpha: &StabilizerCoefficients) -> f64 {
        self.violations(alpha).into_iter().fold(0.0, f64::max)
    }

    fn project(&self, x: &mut DVector<f64>) {
        let bs = self.m * self.m;
        for j in 0..self.s {
            let mut block = x.rows_mut(j * bs, bs);
            let nb = block.norm();
            if nb > self.coefficient_radius {
                block *= self.coefficient_radius / nb;
            }
        }
    }
}

/// Outcome of the feasibility solver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilitySolution {
    pub coefficients: StabilizerCoefficients,
    pub max_violation: f64,
    pub iterations: usize,
    pub feasible: bool,
}

/// Least squares with two rounds of iterative refinement; the checkpoint rows
/// of a marginally stable system are badly conditioned.
fn least_squares(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let pinv = linalg::pinv(a);
    let mut x = &pinv * b;
    for _ in 0..2 {
        let r = b - a * &x;
        x += &pinv * r;
    }
    x
}

/// Minimizes the worst constraint violation by projected subgradient descent
/// inside the coefficient balls.
///
/// The checkpoint rows are whitened with their SVD (`x = V S^{-1} z`) so the
/// residuals are isometric in `z`, and the iteration starts from the
/// least-squares fit of the checkpoint rows. Step lengths are
/// `min(D / sqrt(iter), f / ||g||)` where `D` is the initial worst residual and
/// `f / ||g||` is the Polyak step towards zero violation. The best iterate is
/// tracked and the first one with violation `<= tol` is returned.
pub fn solve_feasibility(cs: &ConstraintSystem, tol: f64, max_iters: usize) -> Result<FeasibilitySolution> {
    run_solver(cs, None, tol, max_iters)
}

/// [`solve_feasibility`] started from `start` instead of the least-squares fit.
pub fn solve_feasibility_from(
    cs: &ConstraintSystem,
    start: &StabilizerCoefficients,
    tol: f64,
    max_iters: usize,
) -> Result<FeasibilitySolution> {
    if start.s() != cs.s || start.m() != cs.m {
        return Err(SysIdError::Dimension("start does not match the constraint system".into()));
    }
    run_solver(cs, Some(start.to_vector()), tol, max_iters)
}

fn run_solver(
    cs: &ConstraintSystem,
    start: Option<DVector<f64>>,
    tol: f64,
    max_iters: usize,
) -> Result<FeasibilitySolution> {
    if cs.is_empty() {
        return Err(SysIdError::InvalidArgument("constraint system is empty".into()));
    }
    let (m, d) = (cs.m, cs.s * cs.m * cs.m);
    let nck = cs.num_checkpoints();
    let precond = if nck == 0 {
        DMatrix::identity(d, d)
    } else {
        let dec = linalg::svd(&cs.design);
        let smax = dec.singular_values.get(0).copied().unwrap_or(0.0);
        let keep: Vec<usize> = (0..dec.singular_values.len())
            .filter(|&i| dec.singular_values[i] > 1e-12 * smax && dec.singular_values[i] > 0.0)
            .collect();
        if keep.is_empty() {
            DMatrix::identity(d, d)
        } else {
            DMatrix::from_fn(d, keep.len(), |r, c| dec.v_t[(keep[c], r)] / dec.singular_values[keep[c]])
        }
    };
    let mut x = match start {
        Some(x) => x,
        None if nck == 0 => DVector::zeros(d),
        None => least_squares(&cs.design, &cs.targets),
    };
    cs.project(&mut x);

    let mut best = x.clone();
    let mut best_f = f64::INFINITY;
    let mut scale: Option<f64> = None;
    let mut iterations = 0;
    let mut res = DVector::zeros(cs.targets.len());
    for it in 1..=max_iters.max(1) {
        res.copy_from(&cs.targets);
        res.gemv(-1.0, &cs.design, &x, 1.0);
        let mut worst = usize::MAX;
        let mut worst_norm = 0.0;
        let mut f = f64::NEG_INFINITY;
        for j in 0..cs.s {
            let v = x.rows(j * m * m, m * m).norm() - cs.coefficient_radius;
            f = f.max(v);
        }
        for i in 0..nck {
            let r = res.rows(i * m, m).norm();
            let v = r - cs.checkpoint_radius;
            if v > f {
                f = v;
                worst = i;
                worst_norm = r;
            }
        }
        if f < best_f {
            best_f = f;
            best.copy_from(&x);
        }
        if f <= tol || worst == usize::MAX || it == max_iters.max(1) {
            break;
        }
        iterations = it;
        let ri = res.rows(worst * m, m) / worst_norm;
        let gx = -cs.design.rows(worst * m, m).transpose() * ri;
        let gz = precond.transpose() * gx;
        let gn = gz.norm();
        if gn == 0.0 {
            break;
        }
        let dscale = *scale.get_or_insert(worst_norm);
        let step = (dscale / (it as f64).sqrt()).min(f / gn);
        x -= &precond * (gz * (step / gn));
        cs.project(&mut x);
    }
    let coefficients = StabilizerCoefficients::from_vector(&best, cs.s, cs.m)?;
    let max_violation = cs.max_violation(&coefficients);
    Ok(FeasibilitySolution {
        feasible: max_violation <= tol,
        coefficients,
        max_violation,
        iterations,
    })
}

/// Iteration budgets of [`stabilize`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iters: usize,
    /// Iterations spent finding the smallest achievable checkpoint radius.
    pub calibration_iters: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-9,
            max_iters: 100_000,
            calibration_iters: 20_000,
        }
    }
}

/// Result of [`stabilize`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Stabilization {
    /// The configuration actually used, with `p1` resolved.
    pub config: ConstraintConfig,
    pub solution: FeasibilitySolution,
    /// Smallest worst-case checkpoint residual found during calibration.
    pub min_radius: Option<f64>,
    pub checkpoint_radius: f64,
}

/// Builds and solves the constraint system, calibrating `P1` first when
/// `cfg.calibration_slack` is set. The calibration minimizer is the warm start
/// of the final solve, so with a calibrated radius it is feasible at once.
pub fn stabilize(traj: &Trajectory, cfg: &ConstraintConfig, opts: &SolverOptions) -> Result<Stabilization> {
    let cs = build_constraints(traj, cfg)?;
    let mut config = cfg.clone();
    let mut min_radius = None;
    let mut probe = None;
    if let Some(slack) = cfg.calibration_slack {
        let found = solve_feasibility(&cs.with_checkpoint_radius(0.0), 0.0, opts.calibration_iters)?;
        let r_min = cs
            .residual_norms(&found.coefficients)
            .into_iter()
            .fold(0.0, f64::max);
        let floor = 1e-9 * cs.targets.amax().max(1.0);
        let radius = (1.0 + slack) * r_min + floor;
        config.p1 = radius / (1.0 / cfg.eps).ln();
        min_radius = Some(r_min);
        probe = Some(found.coefficients);
    }
    let radius = config.checkpoint_radius();
    let cs = cs.with_checkpoint_radius(radius);
    let solution = match &probe {
        Some(start) => solve_feasibility_from(&cs, start, opts.tol, opts.max_iters)?,
        None => solve_feasibility(&cs, opts.tol, opts.max_iters)?,
    };
    Ok(Stabilization {
        config,
        solution,
        min_radius,
        checkpoint_radius: radius,
    })
}

/// Coefficients with `C A^{k+s} = sum_j alpha_j C A^{s-j}`, which make the
/// stabilizing polynomial vanish. Uses the true system, so only meaningful for
/// experiments with known ground truth.
pub fn oracle_alpha(sys: &SystemMatrices, k: usize, s: usize) -> Result<StabilizerCoefficients> {
    let os = algebra::observability_matrix(sys, s)?;
    let smin = linalg::sigma(&os, sys.n() - 1);
    if smin <= 1e-10 {
        return Err(SysIdError::RankDeficient(format!("observability matrix has sigma_min {smin:e}")));
    }
    let m = sys.m();
    let blocks: Vec<DMatrix<f64>> = (1..=s).map(|j| os.rows((s - j) * m, m).into_owned()).collect();
    let stacked = linalg::vstack(&blocks);
    let target = &sys.c * sys.a.pow((k + s) as u32);
    let row = target * linalg::pinv(&stacked);
    StabilizerCoefficients::new((0..s).map(|j| row.columns(j * m, m).into_owned()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distribution::{DistributionKind, DistributionSpec};
    use crate::model::simulate;

    fn scalar_cfg(s: usize, k: usize, spacing: usize, count: usize, p1: f64) -> ConstraintConfig {
        ConstraintConfig {
            mode: Mode::Practical,
            s,
            k,
            p0: 10.0,
            p1,
            p2: p1 * p1,
            spacing,
            num_checkpoints: count,
            eps: 0.1,
            calibration_slack: None,
        }
    }

    fn ramp(len: usize) -> Trajectory {
        let y = DMatrix::from_fn(1, len, |_, t| t as f64);
        Trajectory::new(DMatrix::zeros(1, len), y).unwrap()
    }

    #[test]
    fn one_checkpoint_gives_two_constraints() {
        let cs = build_constraints(&ramp(30), &scalar_cfg(1, 2, 5, 1, 1.0)).unwrap();
        assert_eq!(cs.len(), 2);
        assert_eq!(cs.checkpoints, vec![7]);
    }

    #[test]
    fn zero_alpha_violation_is_plug_in() {
        let cfg = scalar_cfg(1, 2, 5, 3, 1.0);
        let traj = ramp(40);
        let cs = build_constraints(&traj, &cfg).unwrap();
        let v = cs.violations(&StabilizerCoefficients::zeros(1, 1));
        let r = cfg.checkpoint_radius();
        for (i, t) in cfg.checkpoint_indices().into_iter().enumerate() {
            assert_eq!(v[1 + i], (traj.y(t)[0] - r).max(0.0));
        }
    }

    #[test]
    fn short_trajectory_rejected() {
        let err = build_constraints(&ramp(10), &scalar_cfg(1, 2, 5, 3, 1.0)).unwrap_err();
        assert!(matches!(err, SysIdError::TrajectoryTooShort { .. }));
    }

    #[test]
    fn only_coefficient_ball_returns_origin() {
        let cs = ConstraintSystem::from_parts(1, 1, 2.0, DMatrix::zeros(0, 1), DVector::zeros(0), 1.0).unwrap();
        let sol = solve_feasibility(&cs, 1e-12, 100).unwrap();
        assert!(sol.feasible);
        assert_eq!(sol.coefficients.alpha[0][(0, 0)], 0.0);
        assert_eq!(sol.max_violation, 0.0);
    }

    #[test]
    fn disjoint_balls_are_infeasible() {
        let cs = ConstraintSystem::from_parts(
            1,
            1,
            1.0,
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_element(1, 5.0),
            1.0,
        )
        .unwrap();
        let sol = solve_feasibility(&cs, 1e-9, 10_000).unwrap();
        assert!(!sol.feasible);
        assert!(sol.max_violation >= 1.5);
    }

    #[test]
    fn oracle_examples() {
        let a = 0.8;
        let k = 4;
        let alpha = oracle_alpha(&SystemMatrices::scalar(a, 1.0, 1.0, 0.0), k, 1).unwrap();
        assert!((alpha.alpha[0][(0, 0)] - a.powi(k as i32 + 1)).abs() < 1e-14);

        let am = DMatrix::from_row_slice(2, 2, &[0.5, 0.3, -0.2, 0.9]);
        let sys = SystemMatrices::new(am.clone(), DMatrix::identity(2, 1), DMatrix::identity(2, 2), DMatrix::zeros(2, 1))
            .unwrap();
        let alpha = oracle_alpha(&sys, 3, 1).unwrap();
        assert!((&alpha.alpha[0] - am.pow(4)).norm() < 1e-12);

        let rank_def = SystemMatrices::new(
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 1),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            DMatrix::zeros(1, 1),
        )
        .unwrap();
        assert!(oracle_alpha(&rank_def, 2, 2).is_err());
    }

    #[test]
    fn oracle_zeroes_noiseless_checkpoints() {
        let sys = SystemMatrices::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.0, 1.0]),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            DMatrix::zeros(1, 1),
        )
        .unwrap();
        let noise = NoiseModel {
            input: DistributionSpec::isotropic(DistributionKind::Gaussian, 1),
            process: DistributionSpec::zero(2),
            observation: DistributionSpec::zero(1),
            initial: DistributionSpec::zero(2),
        };
        let traj = simulate(&sys, &noise, 2000, 3).unwrap();
        let (s, k) = (2, 4);
        let cfg = scalar_cfg(s, k, 100, 19, 10.0);
        let cs = build_constraints(&traj, &cfg).unwrap();
        let alpha = oracle_alpha(&sys, k, s).unwrap();
        // The transformed residual only involves the last k + s inputs, while
        // the raw observations of the integrator keep growing.
        let resid = cs.residual_norms(&alpha);
        let raw = cs.residual_norms(&StabilizerCoefficients::zeros(s, 1));
        assert!(raw.iter().cloned().fold(0.0, f64::max) > 1000.0);
        assert!(resid.iter().cloned().fold(0.0, f64::max) < 20.0);
        assert_eq!(cs.max_violation(&alpha), 0.0);
    }

    #[test]
    fn coefficient_vector_round_trip() {
        let alpha = StabilizerCoefficients::new(vec![
            DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]),
            DMatrix::from_row_slice(2, 2, &[5.0, 6.0, 7.0, 8.0]),
        ])
        .unwrap();
        let v = alpha.to_vector();
        assert_eq!(v.as_slice(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        assert_eq!(StabilizerCoefficients::from_vector(&v, 2, 2).unwrap(), alpha);
        let json = serde_json::to_string(&alpha).unwrap();
        let back: StabilizerCoefficients = serde_json::from_str(&json).unwrap();
        assert_eq!(back, alpha);
    }
}
