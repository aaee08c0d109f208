//! Experiment configuration: one JSON document with `"schema": 1`.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sysid_core::{
    condition_report, ConstraintConfig, DistributionKind, GeneratorSpec, Mode, NoiseModel, SolverOptions,
    SystemMatrices,
};

pub const SCHEMA_VERSION: u32 = 1;

/// Where the system comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SystemSource {
    Generator(GeneratorSpec),
    Matrices(SystemMatrices),
}

impl SystemSource {
    pub fn build(&self) -> Result<SystemMatrices> {
        match self {
            SystemSource::Generator(g) => g.build().context("building system from generator"),
            SystemSource::Matrices(m) => Ok(m.clone()),
        }
    }

    pub fn generator_seed(&self) -> Option<u64> {
        match self {
            SystemSource::Generator(g) => Some(g.seed),
            SystemSource::Matrices(_) => None,
        }
    }
}

fn one() -> f64 {
    1.0
}

/// Isotropic input of `input` kind and gaussian noise with variances
/// `sigma_w`, `sigma_z`, unless a full `model` is given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    #[serde(default = "gaussian")]
    pub input: DistributionKind,
    #[serde(default = "one")]
    pub sigma_w: f64,
    #[serde(default = "one")]
    pub sigma_z: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<NoiseModel>,
}

fn gaussian() -> DistributionKind {
    DistributionKind::Gaussian
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            input: gaussian(),
            sigma_w: 1.0,
            sigma_z: 1.0,
            model: None,
        }
    }
}

impl NoiseConfig {
    pub fn resolve(&self, sys: &SystemMatrices) -> Result<NoiseModel> {
        let model = match &self.model {
            Some(m) => m.clone(),
            None => {
                if !(self.sigma_w >= 0.0 && self.sigma_z >= 0.0 && self.sigma_w.is_finite() && self.sigma_z.is_finite()) {
                    bail!("noise variances must be finite and nonnegative");
                }
                NoiseModel::standard(self.input, sys.n(), sys.m(), sys.p(), self.sigma_w, self.sigma_z)
            }
        };
        model.validate(sys.n(), sys.m(), sys.p()).context("noise model")?;
        Ok(model)
    }
}

fn default_eps() -> f64 {
    0.1
}

/// Stabilizer settings. `constraints` overrides everything derived from the system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilizerSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<usize>,
    #[serde(default = "default_eps")]
    pub eps: f64,
    /// Defaults to `max(kappa_obs, kappa_ctrl)` of the configured system.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constraints: Option<ConstraintConfig>,
    #[serde(default)]
    pub solver: SolverOptions,
}

impl Default for StabilizerSection {
    fn default() -> Self {
        StabilizerSection {
            s: None,
            eps: default_eps(),
            kappa: None,
            constraints: None,
            solver: SolverOptions::default(),
        }
    }
}

/// Output file names, relative to `--out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Outputs {
    pub trajectory: String,
    /// Hidden states and noise; skipped when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden: Option<String>,
    pub report: String,
    pub realization: String,
    /// CSV table of `lowerbound`, `variance-demo` and `probe`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub table: Option<String>,
}

impl Default for Outputs {
    fn default() -> Self {
        Outputs {
            trajectory: "trajectory.csv".into(),
            hidden: None,
            report: "report.json".into(),
            realization: "realization.json".into(),
            table: None,
        }
    }
}

/// Grid of the lower-bound demo.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LowerBoundSection {
    pub deltas: Vec<f64>,
    pub horizons: Vec<usize>,
    pub n: usize,
    pub m: usize,
    pub lambda: f64,
    /// Perturbation of the hidden direction; defaults to the genericity witness.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub u: Option<Vec<f64>>,
}

impl Default for LowerBoundSection {
    fn default() -> Self {
        LowerBoundSection {
            deltas: vec![1e-2, 1e-3, 1e-4],
            horizons: vec![10],
            n: 3,
            m: 2,
            lambda: 0.9,
            u: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VarianceSection {
    pub naive_horizons: Vec<usize>,
    pub stabilized_horizons: Vec<usize>,
    pub trials: usize,
    /// Lag of the stabilized estimator.
    pub k: usize,
}

impl Default for VarianceSection {
    fn default() -> Self {
        VarianceSection {
            naive_horizons: vec![100, 1_000, 10_000],
            stabilized_horizons: vec![100, 1_000, 10_000],
            trials: 2000,
            k: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeSection {
    pub distributions: Vec<DistributionKind>,
    pub dim: usize,
    pub directions: usize,
    pub samples: usize,
    pub betas: Vec<f64>,
}

impl Default for ProbeSection {
    fn default() -> Self {
        ProbeSection {
            distributions: DistributionKind::ALL.to_vec(),
            dim: 3,
            directions: 64,
            samples: 100_000,
            betas: vec![-1.0, -0.5, 0.0, 0.5, 1.0],
        }
    }
}

fn practical() -> Mode {
    Mode::Practical
}

/// Everything a command needs. Unused sections are ignored by commands that do not read them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<SystemSource>,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    /// Order of the realization; defaults to the state dimension of `system`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<usize>,
    #[serde(default = "practical")]
    pub mode: Mode,
    #[serde(default)]
    pub stabilizer: StabilizerSection,
    #[serde(default)]
    pub outputs: Outputs,
    #[serde(default)]
    pub lowerbound: LowerBoundSection,
    #[serde(default)]
    pub variance: VarianceSection,
    #[serde(default)]
    pub probe: ProbeSection,
}

#[derive(Deserialize)]
struct VersionOnly {
    schema: Option<serde_json::Value>,
}

/// Parses a config, reporting `path:line:column` on syntax and type errors.
pub fn parse_config(text: &str, origin: &Path) -> Result<ExperimentConfig> {
    let at = |e: serde_json::Error| anyhow::anyhow!("{}:{}:{}: {e}", origin.display(), e.line(), e.column());
    let version: VersionOnly = serde_json::from_str(text).map_err(at)?;
    match version.schema {
        None => bail!("{}: missing `schema` (expected {SCHEMA_VERSION})", origin.display()),
        Some(v) if v.as_u64() != Some(SCHEMA_VERSION as u64) => {
            bail!("{}: unsupported schema {v} (expected {SCHEMA_VERSION})", origin.display())
        }
        Some(_) => {}
    }
    serde_json::from_str(text).map_err(at)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_config(&text, path)
}

/// A system with everything derived from it.
pub struct ResolvedSystem {
    pub system: SystemMatrices,
    pub noise: NoiseModel,
}

impl ExperimentConfig {
    pub fn resolve_system(&self) -> Result<Option<ResolvedSystem>> {
        let Some(src) = &self.system else {
            return Ok(None);
        };
        let system = src.build()?;
        let noise = self.noise.resolve(&system)?;
        Ok(Some(ResolvedSystem { system, noise }))
    }

    pub fn require_horizon(&self) -> Result<usize> {
        match self.horizon {
            None => bail!("`horizon` is required for this command"),
            Some(0) => bail!("`horizon` must be at least 1"),
            Some(t) => Ok(t),
        }
    }

    /// Constraint configuration for a trajectory of length `horizon`: the
    /// explicit `stabilizer.constraints` if given, else derived from the
    /// configured system in the configured mode.
    pub fn constraint_config(&self, truth: Option<&ResolvedSystem>, s: usize, horizon: usize) -> Result<ConstraintConfig> {
        if let Some(c) = &self.stabilizer.constraints {
            return Ok(c.clone());
        }
        let Some(truth) = truth else {
            bail!("without a `system`, `stabilizer.constraints` must be given");
        };
        let kappa = match self.stabilizer.kappa {
            Some(k) => k,
            None => {
                let r = condition_report(&truth.system, s, f64::INFINITY)?;
                r.kappa_obs.max(r.kappa_ctrl)
            }
        };
        if !kappa.is_finite() {
            bail!("system is not observable or controllable at s = {s}; set `stabilizer.kappa`");
        }
        let bounds = sysid_core::SystemBounds::from_system(&truth.system, &truth.noise, kappa);
        let eps = self.stabilizer.eps;
        let cfg = match self.mode {
            Mode::Practical => ConstraintConfig::practical(&bounds, s, eps, horizon)?,
            Mode::Paper => ConstraintConfig::paper(&bounds, s, eps)?,
        };
        Ok(cfg)
    }

    pub fn table_name(&self, default: &str) -> String {
        self.outputs.table.clone().unwrap_or_else(|| default.to_string())
    }
}

/// Resolves an output name against the output directory.
pub fn output_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = parse_config(r#"{"schema": 1}"#, Path::new("c.json")).unwrap();
        assert_eq!(cfg.mode, Mode::Practical);
        assert_eq!(cfg.stabilizer.eps, 0.1);
        assert_eq!(cfg.outputs.report, "report.json");
        assert!(cfg.system.is_none());
    }

    #[test]
    fn errors_carry_line_and_column() {
        let text = "{\n  \"schema\": 1,\n  \"horizon\": \"ten\"\n}";
        let err = parse_config(text, Path::new("c.json")).unwrap_err().to_string();
        assert!(err.starts_with("c.json:3:"), "{err}");

        let text = "{\n  \"schema\": 1,\n  \"horizn\": 10\n}";
        let err = parse_config(text, Path::new("c.json")).unwrap_err().to_string();
        assert!(err.contains("c.json:3:") && err.contains("horizn"), "{err}");
    }

    #[test]
    fn schema_is_checked() {
        assert!(parse_config("{}", Path::new("c")).unwrap_err().to_string().contains("missing `schema`"));
        assert!(parse_config(r#"{"schema": 2}"#, Path::new("c")).unwrap_err().to_string().contains("unsupported"));
    }

    #[test]
    fn generator_source_parses() {
        let text = r#"{"schema": 1, "system": {"generator": {"family": "jordan-integrator", "n": 3, "m": 2, "p": 2}}}"#;
        let cfg = parse_config(text, Path::new("c")).unwrap();
        let sys = cfg.resolve_system().unwrap().unwrap();
        assert_eq!(sys.system.n(), 3);
    }
}
