use std::collections::BTreeMap;
use std::time::Instant;

use serde::Serialize;
use sysid_core::{EvalReport, Mode};

use crate::config::ExperimentConfig;

#[derive(Debug, Clone, Serialize)]
pub struct Seeds {
    pub master: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generator: Option<u64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilizerSummary {
    pub s: usize,
    pub k: usize,
    pub num_checkpoints: usize,
    pub spacing: usize,
    pub p1: f64,
    pub checkpoint_radius: f64,
    pub min_radius: Option<f64>,
    pub max_violation: f64,
    pub iterations: usize,
    pub feasible: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulationSummary {
    pub horizon: usize,
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub norm_a: f64,
    pub spectral_radius: f64,
    pub rms_input: f64,
    pub rms_output: f64,
}

/// Everything a command reports. Only `timings_ms` depends on anything but
/// the config and the seed.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub command: &'static str,
    pub mode: Mode,
    pub seeds: Seeds,
    pub config: ExperimentConfig,
    pub timings_ms: BTreeMap<&'static str, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stabilizer: Option<StabilizerSummary>,
    /// `||Xhat_j - X_j||_F` for `j = 0..=k`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub markov_errors: Option<Vec<f64>>,
    /// Same errors for the unstabilized estimator.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub naive_markov_errors: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hankel_singular_values: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub markov_distance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub residuals: Option<EvalReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub table_rows: Option<usize>,
}

impl RunReport {
    pub fn new(command: &'static str, config: &ExperimentConfig) -> Self {
        RunReport {
            command,
            mode: config.mode,
            seeds: Seeds {
                master: config.seed,
                generator: config.system.as_ref().and_then(|s| s.generator_seed()),
            },
            config: config.clone(),
            timings_ms: BTreeMap::new(),
            simulation: None,
            stabilizer: None,
            markov_errors: None,
            naive_markov_errors: None,
            hankel_singular_values: None,
            markov_distance: None,
            residuals: None,
            table_rows: None,
        }
    }

    /// Runs `f` and records its wall-clock time under `label`.
    pub fn time<T>(&mut self, label: &'static str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.timings_ms.insert(label, start.elapsed().as_secs_f64() * 1e3);
        out
    }
}
