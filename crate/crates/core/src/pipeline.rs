//! Stabilize, estimate Markov parameters, realize.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SysIdError};
use crate::ho_kalman::{ho_kalman, Realization};
use crate::markov::{estimate_markov, MarkovEstimate};
use crate::model::Trajectory;
use crate::stabilizer::{stabilize, ConstraintConfig, SolverOptions, Stabilization};

/// Everything produced by [`identify`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Identification {
    pub stabilization: Stabilization,
    pub markov: MarkovEstimate,
    pub realization: Realization,
}

/// Learns an order-`n` system from one trajectory.
///
/// Fails with [`SysIdError::Infeasible`] when the stabilizer cannot meet its
/// constraints and with [`SysIdError::RankDeficient`] when the Hankel block
/// has fewer than `n` significant singular values.
pub fn identify(traj: &Trajectory, cfg: &ConstraintConfig, opts: &SolverOptions, n: usize) -> Result<Identification> {
    cfg.validate(traj.horizon())?;
    if cfg.k < 2 * cfg.s {
        return Err(SysIdError::InvalidArgument(format!(
            "k = {} is too small for a Hankel block of order s = {}",
            cfg.k, cfg.s
        )));
    }
    let stabilization = stabilize(traj, cfg, opts)?;
    if !stabilization.solution.feasible {
        return Err(SysIdError::Infeasible {
            max_violation: stabilization.solution.max_violation,
        });
    }
    let markov = estimate_markov(traj, &stabilization.solution.coefficients, cfg.k, cfg.s)?;
    let realization = ho_kalman(&markov, cfg.s, n)?;
    if realization.degenerate {
        return Err(SysIdError::RankDeficient(format!(
            "Hankel block has sigma_{n} = {:e}",
            realization.singular_values[n - 1]
        )));
    }
    Ok(Identification {
        stabilization,
        markov,
        realization,
    })
}
