//! The five scenario commands. Each returns its printed report and an exit
//! code; artifacts are written to the paths in the config's `output` section.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::analysis::{classify_run, fit_decay, theta_diagnostics, verify_stable_run, RunOutcome};
use crate::constants::{best_sobolev_constant, initial_energy_gate, well_constants, WellConstants};
use crate::domain::{Mesh1D, State};
use crate::error::{Error, Result};
use crate::functionals::{energy_snapshot, lambda_star, membership, EnergySnapshot, SetMembership};
use crate::integrator::{dissipation_residual, run, Trajectory};
use crate::output::{
    format_float as ff, read_trajectory_csv, write_key_values, write_table, write_trajectory_csv, write_trajectory_svg,
    ReadContext,
};
use crate::scenario::{ScenarioConfig, Setup};

#[derive(Debug, Clone, PartialEq)]
pub struct CommandOutput {
    pub exit_code: i32,
    pub report: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Constants,
    Classify,
    Simulate,
    Analyze,
    Sweep,
}

impl Command {
    pub fn execute(self, cfg: &ScenarioConfig) -> Result<CommandOutput> {
        match self {
            Command::Constants => constants(cfg),
            Command::Classify => classify(cfg),
            Command::Simulate => simulate(cfg),
            Command::Analyze => analyze(cfg),
            Command::Sweep => sweep(cfg, threads_from_env()?),
        }
    }
}

/// Reads `PWELL_THREADS`; unset means rayon's default.
pub fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var("PWELL_THREADS") {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(Error::Config {
                path: "PWELL_THREADS".into(),
                message: format!("expected a positive integer, got `{v}`"),
            }),
        },
    }
}

fn resolve(cfg: &ScenarioConfig, path: &Path) -> PathBuf {
    match &cfg.base_dir {
        Some(dir) if path.is_relative() => dir.join(path),
        _ => path.to_path_buf(),
    }
}

fn line(out: &mut String, key: &str, value: impl std::fmt::Display) {
    let _ = writeln!(out, "{key}={value}");
}

fn constants_block(out: &mut String, wc: &WellConstants) {
    line(out, "c_star", ff(wc.c_star));
    line(out, "d", ff(wc.d));
    line(out, "beta", ff(wc.beta));
    line(out, "d_direct", ff(wc.d_direct));
    line(out, "p", wc.p);
    line(out, "mesh_size", wc.mesh_size);
    line(out, "residual", ff(wc.residual));
}

/// Mesh sizes for the convergence table.
pub fn ladder(cfg: &ScenarioConfig) -> Vec<usize> {
    if !cfg.constants.ladder.is_empty() {
        return cfg.constants.ladder.clone();
    }
    let n = cfg.domain.n_elements;
    let mut sizes: Vec<usize> = [n / 4, n / 2, n, 2 * n].into_iter().filter(|k| *k >= 2).collect();
    sizes.dedup();
    sizes
}

pub fn constants(cfg: &ScenarioConfig) -> Result<CommandOutput> {
    let settings = cfg.constants.settings();
    let p = cfg.params.p;
    let mut report = String::new();
    let mut rows = Vec::new();
    let sizes = ladder(cfg);
    if p > 2.0 {
        let results = sizes
            .iter()
            .map(|&n| well_constants(&Mesh1D::new(n, cfg.domain.grading)?, p, &settings))
            .collect::<Result<Vec<_>>>()?;
        let main = well_constants(&cfg.mesh()?, p, &settings)?;
        constants_block(&mut report, &main);
        for wc in &results {
            rows.push(vec![
                wc.mesh_size.to_string(),
                ff(wc.c_star),
                ff(wc.d),
                ff(wc.beta),
                ff(wc.d_direct),
                ff(wc.residual),
            ]);
        }
    } else {
        let main = best_sobolev_constant(&cfg.mesh()?, p, &settings)?;
        line(&mut report, "c_star", ff(main.c_star));
        line(&mut report, "p", p);
        line(&mut report, "mesh_size", cfg.domain.n_elements);
        line(&mut report, "residual", ff(main.residual));
        for &n in &sizes {
            let r = best_sobolev_constant(&Mesh1D::new(n, cfg.domain.grading)?, p, &settings)?;
            rows.push(vec![
                n.to_string(),
                ff(r.c_star),
                String::new(),
                String::new(),
                String::new(),
                ff(r.residual),
            ]);
        }
    }
    let path = resolve(cfg, &cfg.output.ladder_path);
    write_table(
        &["n_elements", "c_star", "d", "beta", "d_direct", "residual"],
        &rows,
        &path,
    )?;
    line(&mut report, "ladder_csv", path.display());
    Ok(CommandOutput { exit_code: 0, report })
}

/// Membership of a recorded snapshot; the zero state is recognized by
/// `‖∇u‖₂ = 0`, which on a Dirichlet mesh forces `u = 0`.
pub fn snapshot_membership(snap: &EnergySnapshot, d: f64) -> SetMembership {
    membership(snap, d, snap.grad_sq == 0.0)
}

fn membership_block(out: &mut String, m: &SetMembership) {
    line(out, "region", format!("{:?}", m.region));
    line(out, "in_stable_w", m.in_stable_w);
    line(out, "in_unstable_u", m.in_unstable_u);
    line(out, "e_below_d", m.e_below_d);
}

pub fn classify(cfg: &ScenarioConfig) -> Result<CommandOutput> {
    let setup = cfg.setup()?;
    let init = cfg.initial_data(&setup)?;
    let snap = energy_snapshot(&init.state, &setup.ops, &setup.params);
    let mut report = String::new();
    line(&mut report, "lambda", ff(init.lambda));
    line(&mut report, "I", ff(snap.nehari));
    line(&mut report, "J", ff(snap.potential));
    line(&mut report, "E0", ff(snap.energy));
    match &setup.constants {
        Some(wc) => {
            line(&mut report, "d", ff(wc.d));
            membership_block(&mut report, &snapshot_membership(&snap, wc.d));
            line(&mut report, "gate", initial_energy_gate(snap.energy, wc));
        }
        None => line(&mut report, "gate", "undefined (p = 2)"),
    }
    Ok(CommandOutput { exit_code: 0, report })
}

fn run_state(cfg: &ScenarioConfig, setup: &Setup, state: &State) -> Result<Trajectory> {
    run(state, &setup.ops, &setup.params, &cfg.sim_config())
}

fn outcome_block(out: &mut String, outcome: &RunOutcome) {
    line(out, "verdict", outcome.label());
    match outcome {
        RunOutcome::Decayed { xi_hat, c_hat, r2 } => {
            line(out, "xi_hat", ff(*xi_hat));
            line(out, "c_hat", ff(*c_hat));
            line(out, "r2", ff(*r2));
        }
        RunOutcome::BlownUp { t_star, dt_final } => {
            line(out, "t_star", ff(*t_star));
            line(out, "dt_final", ff(*dt_final));
        }
        RunOutcome::Grew { lp_rate } => line(out, "lp_rate", ff(*lp_rate)),
        RunOutcome::Inconclusive { reason } => line(out, "reason", reason),
    }
}

pub fn simulate(cfg: &ScenarioConfig) -> Result<CommandOutput> {
    let setup = cfg.setup()?;
    let init = cfg.initial_data(&setup)?;
    let traj = run_state(cfg, &setup, &init.state)?;
    let csv_path = resolve(cfg, &cfg.output.csv_path);
    write_trajectory_csv(&traj, &csv_path)?;
    let outcome = classify_run(&traj, &cfg.analysis.thresholds());
    let mut report = String::new();
    line(&mut report, "lambda", ff(init.lambda));
    line(&mut report, "t_final", ff(traj.last().snapshot.t));
    line(&mut report, "accepted_steps", traj.accepted_steps);
    line(&mut report, "rejected_steps", traj.rejected_steps);
    line(&mut report, "snapshots", traj.samples.len());
    outcome_block(&mut report, &outcome);
    line(&mut report, "csv", csv_path.display());
    if let Some(svg) = &cfg.output.svg_path {
        let svg_path = resolve(cfg, svg);
        write_trajectory_svg(&traj, &svg_path)?;
        line(&mut report, "svg", svg_path.display());
    }
    Ok(CommandOutput {
        exit_code: outcome.exit_code(),
        report,
    })
}

fn opt(x: Option<f64>) -> String {
    x.map(ff).unwrap_or_default()
}

pub fn analyze(cfg: &ScenarioConfig) -> Result<CommandOutput> {
    let ctx = ReadContext {
        params: cfg.params,
        horizon: cfg.time.t_end,
        blowup_threshold: cfg.time.theta_threshold,
    };
    let csv_path = resolve(cfg, &cfg.output.csv_path);
    let traj = read_trajectory_csv(&csv_path, &ctx)?;
    let outcome = classify_run(&traj, &cfg.analysis.thresholds());
    let wc = if cfg.params.p > 2.0 {
        Some(well_constants(&cfg.mesh()?, cfg.params.p, &cfg.constants.settings())?)
    } else {
        None
    };

    let mut rows: Vec<(String, String)> = Vec::new();
    let mut put = |k: &str, v: String| rows.push((k.to_string(), v));
    put("verdict", outcome.label().to_string());
    match &outcome {
        RunOutcome::BlownUp { t_star, dt_final } => {
            put("t_star", ff(*t_star));
            put("dt_final", ff(*dt_final));
        }
        RunOutcome::Grew { lp_rate } => put("lp_rate", ff(*lp_rate)),
        RunOutcome::Inconclusive { reason } => put("reason", reason.clone()),
        RunOutcome::Decayed { .. } => {}
    }
    put("dissipation_residual", opt(dissipation_residual(&traj).ok()));
    match fit_decay(&traj, cfg.analysis.window_fraction) {
        Ok(fit) => {
            put("xi_hat", ff(fit.xi_hat));
            put("c_hat", ff(fit.c_hat));
            put("r2", ff(fit.r2));
            put("fit_window_start", ff(fit.window.0));
            put("fit_window_end", ff(fit.window.1));
        }
        Err(e) => put("decay_fit", e.to_string()),
    }
    if let Some(wc) = &wc {
        put("d", ff(wc.d));
        let s0 = traj.first().snapshot;
        let m = snapshot_membership(&s0, wc.d);
        put("region_t0", format!("{:?}", m.region));
        put("in_stable_w_t0", m.in_stable_w.to_string());
        put("in_unstable_u_t0", m.in_unstable_u.to_string());
        put("gate", initial_energy_gate(s0.energy, wc).to_string());
        let card = verify_stable_run(&traj, wc, s0.energy);
        for (name, check) in card.checks() {
            put(name, check.passed.to_string());
            if let Some(t) = check.first_violation {
                put(&format!("{name}_first_violation"), ff(t));
            }
        }
    }
    match theta_diagnostics(&traj, cfg.analysis.t0_fraction, wc.as_ref()) {
        Ok(th) => {
            put("theta_window_start", ff(th.window.0));
            put("theta_window_end", ff(th.window.1));
            put("gamma", ff(th.gamma));
            put("concavity_defect", ff(th.concavity_defect));
            put("concavity_scale", ff(th.concavity_scale));
            put("theta_pow_d2_max", ff(th.theta_pow_d2_max));
            put("eta_min_relative", ff(th.eta_min_relative));
            put("eta_nonneg_ok", th.eta_nonneg_ok.to_string());
            put("zeta_lower_ok", th.zeta_lower_ok.to_string());
            put("exact_derivatives", th.exact_derivatives.to_string());
            if let Some(b) = th.beta_crossing {
                put("beta_crossing", b.to_string());
            }
        }
        Err(e) => put("theta_diagnostics", e.to_string()),
    }

    let out_path = resolve(cfg, &cfg.output.analysis_path());
    write_key_values(&rows, &out_path)?;
    let mut report = String::new();
    for (k, v) in &rows {
        line(&mut report, k, v);
    }
    line(&mut report, "analysis_csv", out_path.display());
    Ok(CommandOutput {
        exit_code: outcome.exit_code(),
        report,
    })
}

/// One run of a λ-sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    /// Multiple of `λ*`.
    pub lambda_ratio: f64,
    pub lambda: f64,
    pub i0: f64,
    pub j0: f64,
    pub outcome: RunOutcome,
}

impl SweepRow {
    pub fn xi_hat(&self) -> Option<f64> {
        match self.outcome {
            RunOutcome::Decayed { xi_hat, .. } => Some(xi_hat),
            _ => None,
        }
    }

    pub fn t_star(&self) -> Option<f64> {
        match self.outcome {
            RunOutcome::BlownUp { t_star, .. } => Some(t_star),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub lambda_star: f64,
    /// Largest `λ ≥ λ*` with `J(λu) ≥ d` on the ray, when the well depth is known.
    pub lambda_d: Option<f64>,
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    /// Indices `i` with a verdict change between rows `i` and `i + 1`.
    pub fn transitions(&self) -> Vec<usize> {
        self.rows
            .windows(2)
            .enumerate()
            .filter(|(_, w)| w[0].outcome.label() != w[1].outcome.label())
            .map(|(i, _)| i)
            .collect()
    }
}

/// Runs the scaled base profile for every `λ/λ*` in the sweep grid, on at
/// most `threads` worker threads. Rows come back sorted by `λ`.
pub fn run_sweep(cfg: &ScenarioConfig, threads: Option<usize>) -> Result<SweepResult> {
    let setup = cfg.setup()?;
    let base = cfg.base_profile(&setup)?;
    let velocity = cfg.base_velocity(&setup)?;
    let ray = crate::functionals::Ray::of(&base, &setup.ops)?;
    let lstar = lambda_star(&base, &setup.ops)?;
    let lambda_d = match &setup.constants {
        Some(wc) => crate::functionals::scale_ray_to_set(&ray, crate::functionals::TargetSet::UnstableU, 0.0, wc.d)
            .ok()
            .or(Some(lstar)),
        None => None,
    };
    let thresholds = cfg.analysis.thresholds();
    let job = |ratio: f64| -> Result<SweepRow> {
        let lambda = ratio * lstar;
        let u: Vec<f64> = base.iter().map(|x| lambda * x).collect();
        let state = State::new(0.0, u, velocity.clone())?;
        let snap = energy_snapshot(&state, &setup.ops, &setup.params);
        let traj = run_state(cfg, &setup, &state)?;
        Ok(SweepRow {
            lambda_ratio: ratio,
            lambda,
            i0: snap.nehari,
            j0: snap.potential,
            outcome: classify_run(&traj, &thresholds),
        })
    };
    let grid = cfg.sweep.grid();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::InvalidParams(format!("thread pool: {e}")))?;
    let mut rows = pool.install(|| grid.par_iter().map(|r| job(*r)).collect::<Result<Vec<_>>>())?;
    rows.sort_by(|a, b| a.lambda.total_cmp(&b.lambda));
    Ok(SweepResult {
        lambda_star: lstar,
        lambda_d,
        rows,
    })
}

pub fn sweep(cfg: &ScenarioConfig, threads: Option<usize>) -> Result<CommandOutput> {
    let result = run_sweep(cfg, threads)?;
    let table: Vec<Vec<String>> = result
        .rows
        .iter()
        .map(|r| {
            vec![
                ff(r.lambda_ratio),
                ff(r.lambda),
                ff(r.i0),
                ff(r.j0),
                r.outcome.label().to_string(),
                opt(r.xi_hat()),
                opt(r.t_star()),
            ]
        })
        .collect();
    let path = resolve(cfg, &cfg.output.sweep_path);
    write_table(
        &["lambda_ratio", "lambda", "I0", "J0", "verdict", "xi_hat", "t_star"],
        &table,
        &path,
    )?;
    let mut report = String::new();
    line(&mut report, "lambda_star", ff(result.lambda_star));
    if let Some(ld) = result.lambda_d {
        line(&mut report, "lambda_d", ff(ld));
    }
    for r in &result.rows {
        let _ = writeln!(
            report,
            "{:>8.4} {:>12} {}",
            r.lambda_ratio,
            r.outcome.label(),
            r.xi_hat().or(r.t_star()).map(|x| format!("{x:.6}")).unwrap_or_default()
        );
    }
    line(&mut report, "transitions", result.transitions().len());
    line(&mut report, "sweep_csv", path.display());
    Ok(CommandOutput { exit_code: 0, report })
}
