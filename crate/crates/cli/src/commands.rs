use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use sysid_core::io::{fmt_f64, load_trajectory, save_hidden, save_trajectory, write_json, write_system};
use sysid_core::lowerbound::{
    build_unobservable, c_generic_check, covariance_closeness, perturbed_system, process_covariance, sandwich_bound,
};
use sysid_core::markov::{stabilized_variance_experiment, variance_blowup_experiment};
use sysid_core::{
    algebra, align_similarity, identify, linalg, markov_distance, naive_estimate, rng, simulate, DVector,
    DistributionSpec, Realization, Trajectory,
};

use crate::config::{output_path, ExperimentConfig};
use crate::report::{RunReport, SimulationSummary, StabilizerSummary};

/// Command context: the resolved config, the output directory and where to echo progress.
pub struct Session<'a> {
    pub config: ExperimentConfig,
    pub out_dir: PathBuf,
    pub stdout: &'a mut dyn Write,
}

fn rms(m: &sysid_core::DMatrix<f64>) -> f64 {
    (m.norm_squared() / m.len().max(1) as f64).sqrt()
}

fn prepare_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))
}

fn simulation_summary(traj: &Trajectory, sys: &sysid_core::SystemMatrices) -> SimulationSummary {
    SimulationSummary {
        horizon: traj.horizon(),
        n: sys.n(),
        m: sys.m(),
        p: sys.p(),
        norm_a: linalg::spectral_norm(&sys.a),
        spectral_radius: linalg::spectral_radius(&sys.a),
        rms_input: rms(&traj.inputs),
        rms_output: rms(&traj.observations),
    }
}

pub fn simulate_cmd(ctx: &mut Session) -> Result<RunReport> {
    let cfg = &ctx.config;
    let horizon = cfg.require_horizon()?;
    let Some(truth) = cfg.resolve_system()? else {
        bail!("`system` is required to simulate");
    };
    let mut report = RunReport::new("simulate", cfg);
    let traj = report.time("simulate", || simulate(&truth.system, &truth.noise, horizon, cfg.seed))?;

    prepare_dir(&ctx.out_dir)?;
    let path = output_path(&ctx.out_dir, &cfg.outputs.trajectory);
    save_trajectory(&path, &traj).with_context(|| format!("writing {}", path.display()))?;
    if let (Some(name), Some(hidden)) = (&cfg.outputs.hidden, &traj.hidden) {
        let hp = output_path(&ctx.out_dir, name);
        save_hidden(&hp, hidden).with_context(|| format!("writing {}", hp.display()))?;
    }
    let summary = simulation_summary(&traj, &truth.system);
    writeln!(
        ctx.stdout,
        "simulated T = {} (n = {}, m = {}, p = {}), ||A|| = {:.4}, rho(A) = {:.4}, rms(u) = {:.4}, rms(y) = {:.4}",
        summary.horizon, summary.n, summary.m, summary.p, summary.norm_a, summary.spectral_radius, summary.rms_input, summary.rms_output
    )?;
    writeln!(ctx.stdout, "wrote {}", path.display())?;
    report.simulation = Some(summary);
    Ok(report)
}

pub fn identify_cmd(ctx: &mut Session, trajectory: Option<&Path>) -> Result<RunReport> {
    let cfg = &ctx.config;
    let truth = cfg.resolve_system()?;
    let mut report = RunReport::new("identify", cfg);
    let traj = match trajectory {
        Some(p) => load_trajectory(p).with_context(|| format!("reading trajectory {}", p.display()))?,
        None => {
            let Some(t) = &truth else {
                bail!("pass --trajectory or configure a `system` to simulate");
            };
            let horizon = cfg.require_horizon()?;
            report.time("simulate", || simulate(&t.system, &t.noise, horizon, cfg.seed))?
        }
    };
    if let Some(t) = &truth {
        if (traj.m(), traj.p()) != (t.system.m(), t.system.p()) {
            bail!(
                "trajectory has m = {}, p = {} but the configured system has m = {}, p = {}",
                traj.m(),
                traj.p(),
                t.system.m(),
                t.system.p()
            );
        }
    }
    let order = match (cfg.order, &truth) {
        (Some(n), _) => n,
        (None, Some(t)) => t.system.n(),
        (None, None) => bail!("`order` is required without a `system`"),
    };
    if order == 0 {
        bail!("`order` must be at least 1");
    }
    let s = cfg.stabilizer.s.unwrap_or(order);
    let constraints = cfg.constraint_config(truth.as_ref(), s, traj.horizon())?;
    let mut echo = cfg.clone();
    echo.order = Some(order);
    echo.stabilizer.s = Some(constraints.s);
    echo.stabilizer.constraints = Some(constraints.clone());
    report.config = echo;
    report.mode = constraints.mode;

    let ident = report.time("identify", || identify(&traj, &constraints, &cfg.stabilizer.solver, order))?;
    let st = &ident.stabilization;
    report.stabilizer = Some(StabilizerSummary {
        s: st.config.s,
        k: st.config.k,
        num_checkpoints: st.config.num_checkpoints,
        spacing: st.config.spacing,
        p1: st.config.p1,
        checkpoint_radius: st.checkpoint_radius,
        min_radius: st.min_radius,
        max_violation: st.solution.max_violation,
        iterations: st.solution.iterations,
        feasible: st.solution.feasible,
    });
    report.hankel_singular_values = Some(ident.realization.singular_values.clone());

    if let Some(t) = &truth {
        let errors = ident.markov.errors_against(&t.system);
        let naive = naive_estimate(&traj, constraints.k)?.errors_against(&t.system);
        writeln!(ctx.stdout, "{:>3}  {:>14}  {:>14}", "j", "stabilized", "naive")?;
        for (j, (a, b)) in errors.iter().zip(&naive).enumerate() {
            writeln!(ctx.stdout, "{j:>3}  {a:>14.6e}  {b:>14.6e}")?;
        }
        if order == t.system.n() {
            let md = markov_distance(&t.system, &ident.realization.system, 2 * s)?;
            let eval = align_similarity(&t.system, &ident.realization)?;
            writeln!(
                ctx.stdout,
                "markov_distance = {md:.6e}, alignment residuals A {:.4e} B {:.4e} C {:.4e} D {:.4e}",
                eval.residual_a, eval.residual_b, eval.residual_c, eval.residual_d
            )?;
            report.markov_distance = Some(md);
            report.residuals = Some(eval);
        }
        report.markov_errors = Some(errors);
        report.naive_markov_errors = Some(naive);
    }

    prepare_dir(&ctx.out_dir)?;
    let path = output_path(&ctx.out_dir, &cfg.outputs.realization);
    write_system(&path, &ident.realization.system).with_context(|| format!("writing {}", path.display()))?;
    writeln!(ctx.stdout, "wrote {}", path.display())?;
    Ok(report)
}

fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn lowerbound_cmd(ctx: &mut Session) -> Result<RunReport> {
    let cfg = &ctx.config;
    let lb = &cfg.lowerbound;
    if lb.deltas.is_empty() || lb.horizons.is_empty() {
        bail!("`lowerbound.deltas` and `lowerbound.horizons` must be nonempty");
    }
    if lb.horizons.contains(&0) {
        bail!("lower-bound horizons must be at least 1");
    }
    let mut report = RunReport::new("lowerbound", cfg);
    let rows = report.time("lowerbound", || -> Result<Vec<Vec<String>>> {
        let mut rows = Vec::new();
        for &delta in &lb.deltas {
            let pair = build_unobservable(lb.n, lb.m, delta, lb.lambda, cfg.seed)?;
            let u = match &lb.u {
                Some(u) => DVector::from_vec(u.clone()),
                None => c_generic_check(&pair.sys.a, &pair.v, 0.0)?.u,
            };
            let moved = perturbed_system(&pair, &u)?;
            let sigma_w = &pair.sys.b * pair.sys.b.transpose();
            let gap = align_similarity(&pair.sys, &Realization::from_system(&moved, lb.n)?)?.max_residual();
            for &horizon in &lb.horizons {
                let s1 = process_covariance(&pair.sys, &sigma_w, horizon)?;
                let s2 = process_covariance(&moved, &sigma_w, horizon)?;
                let close = covariance_closeness(&s1, &s2)?;
                rows.push(vec![
                    fmt_f64(delta),
                    horizon.to_string(),
                    fmt_f64(close.mult_factor),
                    fmt_f64(sandwich_bound(horizon, u.norm(), delta)),
                    fmt_f64(markov_distance(&pair.sys, &moved, horizon)?),
                    fmt_f64(gap),
                ]);
            }
        }
        Ok(rows)
    })?;
    prepare_dir(&ctx.out_dir)?;
    let path = output_path(&ctx.out_dir, &cfg.table_name("lowerbound.csv"));
    write_table(
        &path,
        &["delta", "T", "mult_factor", "paper_bound", "markov_distance", "parameter_gap"],
        &rows,
    )?;
    writeln!(ctx.stdout, "wrote {} rows to {}", rows.len(), path.display())?;
    report.table_rows = Some(rows.len());
    Ok(report)
}

pub fn variance_cmd(ctx: &mut Session) -> Result<RunReport> {
    let cfg = &ctx.config;
    let v = &cfg.variance;
    if v.trials < 100 {
        bail!("`variance.trials` must be at least 100");
    }
    let mut report = RunReport::new("variance-demo", cfg);
    let rows = report.time("variance", || -> Result<Vec<Vec<String>>> {
        let mut rows = Vec::new();
        for &t in &v.naive_horizons {
            let r = variance_blowup_experiment(t, v.trials, cfg.seed)?;
            rows.push(vec!["naive".into(), t.to_string(), v.trials.to_string(), fmt_f64(r.second_moment)]);
        }
        for &t in &v.stabilized_horizons {
            let r = stabilized_variance_experiment(t, v.trials, cfg.seed, v.k)?;
            rows.push(vec!["stabilized".into(), t.to_string(), v.trials.to_string(), fmt_f64(r.second_moment)]);
        }
        Ok(rows)
    })?;
    prepare_dir(&ctx.out_dir)?;
    let path = output_path(&ctx.out_dir, &cfg.table_name("variance.csv"));
    write_table(&path, &["kind", "T", "trials", "second_moment"], &rows)?;
    for r in &rows {
        writeln!(ctx.stdout, "{:<10} T = {:>8}  E[Q^2] = {}", r[0], r[1], r[3])?;
    }
    report.table_rows = Some(rows.len());
    Ok(report)
}

pub fn probe_cmd(ctx: &mut Session) -> Result<RunReport> {
    let cfg = &ctx.config;
    let pr = &cfg.probe;
    if pr.dim == 0 {
        bail!("`probe.dim` must be at least 1");
    }
    let mut report = RunReport::new("probe", cfg);
    let results = report.time("probe", || -> Result<Vec<_>> {
        let mut out = Vec::new();
        for (i, &kind) in pr.distributions.iter().enumerate() {
            let seed = rng::derive_seed(cfg.seed, i as u64);
            let declared = kind.hypercontractivity();
            let k_hat =
                algebra::hypercontractivity_probe(&DistributionSpec::isotropic(kind, pr.dim), pr.directions, pr.samples, seed)?;
            let anti = algebra::anti_concentration_probe(&DistributionSpec::isotropic(kind, 1), &pr.betas, pr.samples, seed)?;
            out.push((kind, declared, k_hat, anti.max, algebra::anti_concentration_bound(declared)));
        }
        Ok(out)
    })?;
    let rows: Vec<Vec<String>> = results
        .iter()
        .map(|&(kind, declared, k_hat, max, bound)| {
            vec![
                kind.name().to_string(),
                fmt_f64(declared),
                fmt_f64(k_hat),
                fmt_f64(max),
                fmt_f64(bound),
                (max <= bound).to_string(),
            ]
        })
        .collect();
    prepare_dir(&ctx.out_dir)?;
    let path = output_path(&ctx.out_dir, &cfg.table_name("probe.csv"));
    write_table(
        &path,
        &["distribution", "declared_k", "k_hat", "anti_concentration_max", "anti_concentration_bound", "holds"],
        &rows,
    )?;
    for (kind, declared, k_hat, max, bound) in &results {
        writeln!(
            ctx.stdout,
            "{:<15} K = {declared:<5} K_hat = {k_hat:<8.4} max Pr = {max:.4} <= {bound:.4}",
            kind.name()
        )?;
    }
    report.table_rows = Some(rows.len());
    Ok(report)
}

pub fn write_report(ctx: &mut Session, report: &RunReport) -> Result<()> {
    prepare_dir(&ctx.out_dir)?;
    let path = output_path(&ctx.out_dir, &ctx.config.outputs.report);
    write_json(&path, report).with_context(|| format!("writing {}", path.display()))?;
    writeln!(ctx.stdout, "wrote {}", path.display())?;
    Ok(())
}
