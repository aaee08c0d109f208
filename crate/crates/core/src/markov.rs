//! Method-of-moments estimates of the Markov parameters.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::distribution::{DistributionKind, DistributionSpec, NoiseModel};
use crate::error::{Result, SysIdError};
use crate::linalg;
use crate::model::{simulate, SystemMatrices, Trajectory};
use crate::rng;
use crate::stabilizer::{oracle_alpha, StabilizerCoefficients};

/// Estimated blocks `Xhat_0..Xhat_k` (each `m x p`).
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovEstimate {
    pub blocks: Vec<DMatrix<f64>>,
    pub sample_count: usize,
}

impl MarkovEstimate {
    pub fn new(blocks: Vec<DMatrix<f64>>, sample_count: usize) -> Result<Self> {
        let first = blocks
            .first()
            .ok_or_else(|| SysIdError::InvalidArgument("an estimate needs at least one block".into()))?;
        let shape = first.shape();
        if blocks.iter().any(|b| b.shape() != shape) {
            return Err(SysIdError::Dimension("Markov blocks differ in shape".into()));
        }
        Ok(MarkovEstimate { blocks, sample_count })
    }

    /// Exact blocks of a known system.
    pub fn exact(sys: &SystemMatrices, k: usize) -> Self {
        MarkovEstimate {
            blocks: crate::model::markov_parameters(sys, k),
            sample_count: 0,
        }
    }

    /// Largest lag `k`.
    pub fn k(&self) -> usize {
        self.blocks.len() - 1
    }

    pub fn m(&self) -> usize {
        self.blocks[0].nrows()
    }

    pub fn p(&self) -> usize {
        self.blocks[0].ncols()
    }

    /// Frobenius errors `||Xhat_j - X_j||_F` against a known system, for every `j`.
    pub fn errors_against(&self, sys: &SystemMatrices) -> Vec<f64> {
        let truth = crate::model::markov_parameters(sys, self.k());
        self.blocks.iter().zip(&truth).map(|(a, b)| (a - b).norm()).collect()
    }

    /// `[X_0, X_1, ..., X_k]` as one `m x p(k+1)` matrix.
    pub fn block_row(&self) -> DMatrix<f64> {
        linalg::hstack(&self.blocks)
    }
}

#[derive(Serialize, Deserialize)]
struct EstimateRepr {
    k: usize,
    blocks: Vec<Vec<Vec<f64>>>,
}

impl Serialize for MarkovEstimate {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        EstimateRepr {
            k: self.k(),
            blocks: self.blocks.iter().map(linalg::to_rows).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for MarkovEstimate {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error;
        let r = EstimateRepr::deserialize(d)?;
        if r.blocks.len() != r.k + 1 {
            return Err(D::Error::custom("expected k + 1 blocks"));
        }
        let cols = r.blocks.first().and_then(|b| b.first()).map_or(0, |row| row.len());
        let blocks = r
            .blocks
            .iter()
            .map(|b| linalg::from_rows(b, cols))
            .collect::<Result<Vec<_>>>()
            .map_err(D::Error::custom)?;
        MarkovEstimate::new(blocks, 0).map_err(D::Error::custom)
    }
}

/// Transformed observations `yhat_t = y_t - sum_{i=1..s} alpha_i y_{t-k-i}`
/// for `t = start..=T`, `start = k + s + 1`, stored as columns.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilizedSeries {
    pub start: usize,
    pub values: DMatrix<f64>,
}

impl StabilizedSeries {
    pub fn at(&self, t: usize) -> nalgebra::DVectorView<'_, f64> {
        self.values.column(t - self.start)
    }
}

fn check_alpha(traj: &Trajectory, alpha: &StabilizerCoefficients, s: usize) -> Result<()> {
    if alpha.s() != s || alpha.m() != traj.m() {
        return Err(SysIdError::Dimension(format!(
            "coefficients have s={}, m={}; expected s={s}, m={}",
            alpha.s(),
            alpha.m(),
            traj.m()
        )));
    }
    Ok(())
}

pub fn stabilized_observations(
    traj: &Trajectory,
    alpha: &StabilizerCoefficients,
    k: usize,
    s: usize,
) -> Result<StabilizedSeries> {
    check_alpha(traj, alpha, s)?;
    let horizon = traj.horizon();
    if horizon <= k + s {
        return Err(SysIdError::TrajectoryTooShort {
            needed: k + s + 1,
            have: horizon,
        });
    }
    let start = k + s + 1;
    let count = horizon - k - s;
    let mut values = traj.observations.columns(start, count).into_owned();
    for (i, a) in alpha.alpha.iter().enumerate() {
        let lag = k + i + 1;
        let lagged = traj.observations.columns(start - lag, count);
        values.gemm(-1.0, a, &lagged, 1.0);
    }
    Ok(StabilizedSeries { start, values })
}

fn cross_moments(series: &DMatrix<f64>, inputs: &Trajectory, start: usize, k: usize) -> Vec<DMatrix<f64>> {
    let count = series.ncols();
    (0..=k)
        .map(|j| {
            let u = inputs.inputs.columns(start - j, count);
            (series * u.transpose()) / count as f64
        })
        .collect()
}

/// `Xhat_j = mean over t in (k+s, T] of yhat_t u_{t-j}^T` for `j = 0..=k`.
pub fn estimate_markov(
    traj: &Trajectory,
    alpha: &StabilizerCoefficients,
    k: usize,
    s: usize,
) -> Result<MarkovEstimate> {
    if traj.horizon() <= k + s + 1 {
        return Err(SysIdError::TrajectoryTooShort {
            needed: k + s + 2,
            have: traj.horizon(),
        });
    }
    let series = stabilized_observations(traj, alpha, k, s)?;
    let blocks = cross_moments(&series.values, traj, series.start, k);
    MarkovEstimate::new(blocks, series.values.ncols())
}

/// Median-of-means variant: the sample range is cut into `windows` contiguous
/// pieces, each averaged separately, and the entrywise median is returned.
pub fn estimate_markov_median_of_means(
    traj: &Trajectory,
    alpha: &StabilizerCoefficients,
    k: usize,
    s: usize,
    windows: usize,
) -> Result<MarkovEstimate> {
    let series = stabilized_observations(traj, alpha, k, s)?;
    let count = series.values.ncols();
    if windows == 0 || windows > count {
        return Err(SysIdError::InvalidArgument(format!("cannot split {count} samples into {windows} windows")));
    }
    let width = count / windows;
    let per_window: Vec<Vec<DMatrix<f64>>> = (0..windows)
        .map(|w| {
            let cols = series.values.columns(w * width, width).into_owned();
            cross_moments(&cols, traj, series.start + w * width, k)
        })
        .collect();
    let (m, p) = (traj.m(), traj.p());
    let blocks = (0..=k)
        .map(|j| {
            DMatrix::from_fn(m, p, |r, c| {
                let mut vals: Vec<f64> = per_window.iter().map(|b| b[j][(r, c)]).collect();
                vals.sort_by(f64::total_cmp);
                let mid = vals.len() / 2;
                if vals.len() % 2 == 1 {
                    vals[mid]
                } else {
                    0.5 * (vals[mid - 1] + vals[mid])
                }
            })
        })
        .collect();
    MarkovEstimate::new(blocks, width * windows)
}

/// Unstabilized estimate `Xtilde_j = mean over t in [0, T-k] of y_{t+j} u_t^T`.
pub fn naive_estimate(traj: &Trajectory, k: usize) -> Result<MarkovEstimate> {
    let horizon = traj.horizon();
    if horizon <= k {
        return Err(SysIdError::TrajectoryTooShort { needed: k + 1, have: horizon });
    }
    let count = horizon - k + 1;
    let u = traj.inputs.columns(0, count);
    let blocks = (0..=k)
        .map(|j| (traj.observations.columns(j, count) * u.transpose()) / count as f64)
        .collect();
    MarkovEstimate::new(blocks, count)
}

/// Which estimator a variance experiment measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Naive,
    Stabilized,
}

impl EstimatorKind {
    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Naive => "naive",
            EstimatorKind::Stabilized => "stabilized",
        }
    }
}

/// Empirical second moment of the `X_0` estimation error on the scalar integrator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    pub horizon: usize,
    pub trials: usize,
    pub second_moment: f64,
    pub estimator_kind: EstimatorKind,
}

/// The scalar integrator `A = B = C = D = 1` with gaussian input,
/// process noise of variance 100 and unit observation noise.
pub fn scalar_integrator() -> (SystemMatrices, NoiseModel) {
    let sys = SystemMatrices::scalar(1.0, 1.0, 1.0, 1.0);
    let noise = NoiseModel {
        input: DistributionSpec::isotropic(DistributionKind::Gaussian, 1),
        process: DistributionSpec::scaled(DistributionKind::Gaussian, 1, 100.0),
        observation: DistributionSpec::isotropic(DistributionKind::Gaussian, 1),
        initial: DistributionSpec::zero(1),
    };
    (sys, noise)
}

fn second_moment<F>(horizon: usize, trials: usize, seed: u64, stat: F) -> Result<f64>
where
    F: Fn(&Trajectory) -> Result<f64> + Sync,
{
    if trials < 100 {
        return Err(SysIdError::InvalidArgument("at least 100 trials are required".into()));
    }
    let (sys, noise) = scalar_integrator();
    let values: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let traj = simulate(&sys, &noise, horizon, rng::derive_seed(seed, i as u64))?;
            stat(&traj).map(|q| q * q)
        })
        .collect::<Result<_>>()?;
    Ok(values.iter().sum::<f64>() / trials as f64)
}

/// `E[Q_T^2]` with `Q_T = (1/T) sum_{t=1}^T y_t u_t - 1` on the scalar integrator.
pub fn variance_blowup_experiment(horizon: usize, trials: usize, seed: u64) -> Result<VarianceReport> {
    let second = second_moment(horizon, trials, seed, |traj| {
        let t = traj.horizon();
        let sum: f64 = (1..=t).map(|i| traj.y(i)[0] * traj.u(i)[0]).sum();
        Ok(sum / t as f64 - 1.0)
    })?;
    Ok(VarianceReport {
        horizon,
        trials,
        second_moment: second,
        estimator_kind: EstimatorKind::Naive,
    })
}

/// Same experiment with the stabilized estimate of `X_0` (`s = 1`, lag `k`,
/// coefficients from the known system).
pub fn stabilized_variance_experiment(horizon: usize, trials: usize, seed: u64, k: usize) -> Result<VarianceReport> {
    let (sys, _) = scalar_integrator();
    let alpha = oracle_alpha(&sys, k, 1)?;
    let second = second_moment(horizon, trials, seed, |traj| {
        let est = estimate_markov(traj, &alpha, k, 1)?;
        Ok(est.blocks[0][(0, 0)] - 1.0)
    })?;
    Ok(VarianceReport {
        horizon,
        trials,
        second_moment: second,
        estimator_kind: EstimatorKind::Stabilized,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj_from(y: &[f64], u: &[f64]) -> Trajectory {
        Trajectory::new(DMatrix::from_row_slice(1, u.len(), u), DMatrix::from_row_slice(1, y.len(), y)).unwrap()
    }

    #[test]
    fn zero_alpha_leaves_observations() {
        let y: Vec<f64> = (0..12).map(|t| (t * t) as f64).collect();
        let traj = traj_from(&y, &[0.0; 12]);
        let ser = stabilized_observations(&traj, &StabilizerCoefficients::zeros(2, 1), 3, 2).unwrap();
        assert_eq!(ser.start, 6);
        for (t, &expected) in y.iter().enumerate().skip(6) {
            assert_eq!(ser.at(t)[0], expected);
        }
    }

    #[test]
    fn constant_observations_telescope() {
        let traj = traj_from(&[1.0; 10], &[0.0; 10]);
        let alpha = StabilizerCoefficients::new(vec![DMatrix::from_element(1, 1, 1.0)]).unwrap();
        let ser = stabilized_observations(&traj, &alpha, 2, 1).unwrap();
        assert!(ser.values.iter().all(|&v| v == 0.0));
        assert!(stabilized_observations(&traj, &alpha, 8, 1).is_err());
    }

    #[test]
    fn memoryless_system_estimates() {
        let sys = SystemMatrices::scalar(0.0, 1.0, 1.0, 0.0);
        let noise = NoiseModel {
            input: DistributionSpec::isotropic(DistributionKind::Gaussian, 1),
            process: DistributionSpec::zero(1),
            observation: DistributionSpec::zero(1),
            initial: DistributionSpec::zero(1),
        };
        let traj = simulate(&sys, &noise, 50_000, 1).unwrap();
        let est = estimate_markov(&traj, &StabilizerCoefficients::zeros(1, 1), 2, 1).unwrap();
        assert_eq!(est.sample_count, 50_000 - 3);
        assert!(est.blocks[0][(0, 0)].abs() < 0.03);
        assert!((est.blocks[1][(0, 0)] - 1.0).abs() < 0.03);
        assert!(est.blocks[2][(0, 0)].abs() < 0.03);
    }

    #[test]
    fn x0_estimates_feedthrough() {
        let sys = SystemMatrices::new(
            DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.0, 0.4]),
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 3.0]),
        )
        .unwrap();
        let noise = NoiseModel::standard(DistributionKind::Gaussian, 2, 2, 2, 1.0, 1.0);
        let traj = simulate(&sys, &noise, 100_000, 2).unwrap();
        let est = estimate_markov(&traj, &StabilizerCoefficients::zeros(1, 2), 2, 1).unwrap();
        assert!((&est.blocks[0] - &sys.d).amax() <= 0.1);
    }

    #[test]
    fn naive_estimate_on_stable_scalar() {
        let sys = SystemMatrices::scalar(0.5, 1.0, 1.0, 0.0);
        let noise = NoiseModel::standard(DistributionKind::Gaussian, 1, 1, 1, 1.0, 1.0);
        let traj = simulate(&sys, &noise, 100_000, 3).unwrap();
        let est = naive_estimate(&traj, 3).unwrap();
        assert!((est.blocks[1][(0, 0)] - 1.0).abs() < 0.03);
        assert!((est.blocks[2][(0, 0)] - 0.5).abs() < 0.03);
        let d0 = naive_estimate(&traj, 0).unwrap();
        assert_eq!(d0.k(), 0);
        assert!(d0.blocks[0][(0, 0)].abs() < 0.03);
        assert!(naive_estimate(&traj_from(&[1.0, 2.0], &[1.0, 1.0]), 1).is_err());
    }

    #[test]
    fn median_of_means_agrees_with_mean_on_clean_data() {
        let sys = SystemMatrices::scalar(0.3, 1.0, 1.0, 0.5);
        let noise = NoiseModel::standard(DistributionKind::Gaussian, 1, 1, 1, 0.1, 0.1);
        let traj = simulate(&sys, &noise, 60_000, 4).unwrap();
        let alpha = StabilizerCoefficients::zeros(1, 1);
        let a = estimate_markov(&traj, &alpha, 2, 1).unwrap();
        let b = estimate_markov_median_of_means(&traj, &alpha, 2, 1, 9).unwrap();
        for j in 0..=2 {
            assert!((&a.blocks[j] - &b.blocks[j]).amax() < 0.05);
        }
    }

    #[test]
    fn estimate_json_shape() {
        let est = MarkovEstimate::new(vec![DMatrix::from_element(1, 2, 1.5), DMatrix::from_element(1, 2, -2.0)], 7).unwrap();
        let s = serde_json::to_string(&est).unwrap();
        assert_eq!(s, r#"{"k":1,"blocks":[[[1.5,1.5]],[[-2.0,-2.0]]]}"#);
        let back: MarkovEstimate = serde_json::from_str(&s).unwrap();
        assert_eq!(back.blocks, est.blocks);
    }

    #[test]
    fn naive_variance_stays_large() {
        let r = variance_blowup_experiment(100, 2000, 9).unwrap();
        assert!(r.second_moment >= 15.0, "{r:?}");
        assert!(variance_blowup_experiment(100, 50, 9).is_err());
        let stab = stabilized_variance_experiment(10_000, 200, 9, 2).unwrap();
        assert!(stab.second_moment < 0.5, "{stab:?}");
    }
}
