//! Acceptance criteria. Runs without the libtest harness so that every
//! criterion prints one PASS/FAIL line; exits non-zero if any fails.

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pwell::analysis::{classify_run, theta_diagnostics, verify_stable_run, RunOutcome};
use pwell::commands::{run_sweep, simulate};
use pwell::constants::{best_sobolev_constant, initial_energy_gate, well_constants, OptimizerSettings};
use pwell::domain::{DiscreteOperators, Mesh1D, ProblemParams, Source, State};
use pwell::functionals::{energy_snapshot, TargetSet};
use pwell::integrator::{dissipation_residual, run, SimConfig, Termination, Trajectory};
use pwell::scenario::{parse_config, ScenarioConfig, Setup, STABLE_P4, UNSTABLE_P4};
use pwell::tridiag::SymTridiag;

type Check<'a> = Box<dyn Fn() -> Verdict + 'a>;

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: String) -> Verdict {
    Verdict { passed, detail }
}

fn dense(t: &SymTridiag) -> DMatrix<f64> {
    let n = t.dim();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = t.diag[i];
        if i + 1 < n {
            m[(i, i + 1)] = t.off[i];
            m[(i + 1, i)] = t.off[i];
        }
    }
    m
}

/// Eigenpairs of the pencil `A x = λ B x` for SPD `B`, ascending.
fn pencil_eigen(a: &DMatrix<f64>, b: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let l = b.clone().cholesky().expect("B is SPD").l();
    let l_inv = l.clone().try_inverse().expect("invertible factor");
    let c = &l_inv * a * l_inv.transpose();
    let eig = SymmetricEigen::new(c);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let back = l_inv.transpose() * &eig.eigenvectors;
    let vectors = DMatrix::from_fn(back.nrows(), order.len(), |r, k| back[(r, order[k])]);
    (values, vectors)
}

fn preset(text: &str) -> ScenarioConfig {
    parse_config(text).expect("preset parses")
}

struct Prepared {
    cfg: ScenarioConfig,
    setup: Setup,
    state: State,
}

fn prepare(cfg: ScenarioConfig) -> Prepared {
    let setup = cfg.setup().expect("setup");
    let state = cfg.initial_data(&setup).expect("initial data").state;
    Prepared { cfg, setup, state }
}

impl Prepared {
    fn run(&self, sim: &SimConfig) -> Trajectory {
        run(&self.state, &self.setup.ops, &self.setup.params, sim).expect("run")
    }

    fn default_run(&self) -> Trajectory {
        self.run(&self.cfg.sim_config())
    }
}

fn t_star(traj: &Trajectory) -> Option<f64> {
    match traj.termination {
        Termination::BlownUp { t_star, .. } => Some(t_star),
        _ => None,
    }
}

fn criterion_1() -> Verdict {
    let mesh = Mesh1D::new(512, 1.0).unwrap();
    let params = ProblemParams {
        p: 2.0,
        ..Default::default()
    };
    let start = Instant::now();
    let res = best_sobolev_constant(&mesh, 2.0, &OptimizerSettings::default()).unwrap();
    let elapsed = start.elapsed();
    let ops = DiscreteOperators::assemble(&mesh, &params);
    let (values, _) = pencil_eigen(&dense(&ops.stiffness), &dense(&ops.mass));
    let oracle = 1.0 / values[0].sqrt();
    let exact = 2.0 / PI;
    let passed =
        (res.c_star - exact).abs() <= 1e-4 && (res.c_star - oracle).abs() <= 1e-10 && elapsed < Duration::from_secs(5);
    verdict(
        passed,
        format!(
            "c_star={:.12} 2/pi={:.12} dense-oracle={:.12} |c-2/pi|={:.2e} time={:.2?}",
            res.c_star,
            exact,
            oracle,
            (res.c_star - exact).abs(),
            elapsed
        ),
    )
}

fn criterion_2() -> Verdict {
    let mesh = Mesh1D::new(512, 1.0).unwrap();
    let start = Instant::now();
    let wc = well_constants(&mesh, 4.0, &OptimizerSettings::default()).unwrap();
    let elapsed = start.elapsed();
    let rel = (wc.d_direct - wc.d).abs() / wc.d;
    let beta_sq = 2.0 * wc.d * wc.p / (wc.p - 2.0);
    let bitwise = wc.beta.to_bits() == beta_sq.sqrt().to_bits();
    // Squaring a correctly rounded square root is exact to within one ulp.
    let squared = (wc.beta * wc.beta - beta_sq).abs() <= beta_sq * f64::EPSILON;
    let passed = rel <= 0.01 && bitwise && squared && elapsed < Duration::from_secs(60);
    verdict(
        passed,
        format!(
            "d={:.12} d_direct={:.12} rel={:.2e} beta^2={:.17} 2dp/(p-2)={:.17} time={:.2?}",
            wc.d,
            wc.d_direct,
            rel,
            wc.beta * wc.beta,
            beta_sq,
            elapsed
        ),
    )
}

fn criterion_3() -> Verdict {
    let mesh = Mesh1D::new(128, 1.0).unwrap();
    let wc = well_constants(&mesh, 4.0, &OptimizerSettings::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut samples: Vec<f64> = (0..1000).map(|_| rng.gen_range(0.0..2.0 * wc.d)).collect();
    samples.extend([0.0, wc.d, 2.0 * wc.d, wc.d * (1.0 - 1e-12), wc.d * (1.0 + 1e-12)]);
    let disagreements = samples
        .iter()
        .filter(|&&e| initial_energy_gate(e, &wc) != (e < wc.d))
        .count();
    verdict(
        disagreements == 0,
        format!("{} samples in [0, 2d], {disagreements} disagreements", samples.len()),
    )
}

fn criterion_4(stable: &Prepared) -> Verdict {
    let mut residuals = Vec::new();
    let mut times = Vec::new();
    for dt in [0.01, 0.005] {
        let sim = stable.cfg.sim_config().fixed_step(dt);
        let start = Instant::now();
        let traj = stable.run(&sim);
        times.push(start.elapsed());
        residuals.push(dissipation_residual(&traj).unwrap());
    }
    let ratio = residuals[0] / residuals[1];
    let passed = residuals.iter().all(|r| *r <= 1e-4)
        && (3.0..=5.0).contains(&ratio)
        && times.iter().all(|t| *t < Duration::from_secs(30));
    verdict(
        passed,
        format!(
            "residual(dt=0.01)={:.3e} residual(dt=0.005)={:.3e} ratio={ratio:.3} times={:.2?}/{:.2?}",
            residuals[0], residuals[1], times[0], times[1]
        ),
    )
}

fn criterion_5() -> Verdict {
    let params = ProblemParams {
        alpha: 0.0,
        r: 0.0,
        source: Source::Disabled,
        ..Default::default()
    };
    let ops = DiscreteOperators::assemble(&Mesh1D::new(64, 1.0).unwrap(), &params);
    let mut inertia = ops.mass.clone();
    inertia.add_scaled(1.0, &ops.boundary_mass);
    let (values, vectors) = pencil_eigen(&dense(&ops.stiffness), &dense(&inertia));
    let mode: Vec<f64> = vectors.column(0).iter().copied().collect();
    let sim = SimConfig {
        t_end: 1000.0 * 0.01,
        ..SimConfig::default().fixed_step(0.01)
    };
    let traj = run(&State::at_rest(mode), &ops, &params, &sim).unwrap();
    let e0 = traj.first().snapshot.energy;
    let drift = traj
        .samples
        .iter()
        .map(|s| (s.snapshot.energy - e0).abs() / e0)
        .fold(0.0, f64::max);
    let steps = traj.accepted_steps;
    verdict(
        drift < 1e-8 && steps == 1000,
        format!("omega^2={:.6} steps={steps} max |E-E0|/E0={drift:.2e}", values[0]),
    )
}

fn criterion_6(stable: &Prepared, traj: &Trajectory) -> Verdict {
    let wc = stable.setup.constants.expect("p > 2");
    let e0 = traj.first().snapshot.energy;
    let gate = initial_energy_gate(e0, &wc);
    let card = verify_stable_run(traj, &wc, e0);
    let reached = matches!(traj.termination, Termination::Completed);
    let checks: Vec<String> = card
        .checks()
        .iter()
        .map(|(name, c)| format!("{name}={}", c.passed))
        .collect();
    verdict(
        gate && card.nehari_positive.passed && card.energy_monotone.passed && card.gradient_bound.passed && reached,
        format!("gate={gate} {} reached_t_end={reached}", checks.join(" ")),
    )
}

fn criterion_7(stable: &Prepared, traj: &Trajectory) -> Verdict {
    let thresholds = stable.cfg.analysis.thresholds();
    let coarse = classify_run(traj, &thresholds);
    let mut fine_cfg = stable.cfg.clone();
    fine_cfg.domain.n_elements *= 2;
    let fine = classify_run(&prepare(fine_cfg).default_run(), &thresholds);
    match (&coarse, &fine) {
        (
            RunOutcome::Decayed { xi_hat: x1, r2: r1, .. },
            RunOutcome::Decayed {
                xi_hat: x2, r2: r2b, ..
            },
        ) => {
            let change = (x2 - x1).abs() / x1;
            verdict(
                stable.cfg.time.t_end >= 20.0 && *x1 > 0.0 && *r1 >= 0.99 && *r2b >= 0.99 && change <= 0.10,
                format!(
                    "xi_hat(n)={x1:.6} r2={r1:.5} xi_hat(2n)={x2:.6} r2={r2b:.5} change={:.2}%",
                    100.0 * change
                ),
            )
        }
        _ => verdict(false, format!("verdicts {} / {}", coarse.label(), fine.label())),
    }
}

fn criterion_8(unstable: &Prepared, traj: &Trajectory) -> Verdict {
    let base = t_star(traj);
    let mut by_margin = Vec::new();
    for margin in [0.05, 0.2, 0.5] {
        let mut cfg = unstable.cfg.clone();
        cfg.initial.margin = margin;
        by_margin.push(t_star(&prepare(cfg).default_run()));
    }
    let mut by_theta = Vec::new();
    for theta in [1e6, 1e8, 1e10] {
        let sim = SimConfig {
            blowup_threshold: theta,
            ..unstable.cfg.sim_config()
        };
        by_theta.push(t_star(&unstable.run(&sim)));
    }
    let margins: Option<Vec<f64>> = by_margin.iter().copied().collect();
    let thetas: Option<Vec<f64>> = by_theta.iter().copied().collect();
    match (base, margins, thetas) {
        (Some(t), Some(m), Some(th)) => {
            let decreasing = m.windows(2).all(|w| w[1] < w[0]);
            let lo = th.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = th.iter().copied().fold(0.0, f64::max);
            let spread = (hi - lo) / lo;
            verdict(
                t.is_finite() && decreasing && spread < 0.2,
                format!(
                    "t*={t:.6}; margins 0.05/0.2/0.5 -> {:.4}/{:.4}/{:.4}; Theta 1e6/1e8/1e10 -> {:.6}/{:.6}/{:.6} (spread {:.2e})",
                    m[0], m[1], m[2], th[0], th[1], th[2], spread
                ),
            )
        }
        _ => verdict(
            false,
            format!("missing blow-up: base={base:?} margins={by_margin:?} thetas={by_theta:?}"),
        ),
    }
}

fn criterion_9(unstable: &Prepared, traj: &Trajectory) -> Verdict {
    let wc = unstable.setup.constants.expect("p > 2");
    let th = match theta_diagnostics(traj, unstable.cfg.analysis.t0_fraction, Some(&wc)) {
        Ok(th) => th,
        Err(e) => return verdict(false, e.to_string()),
    };
    let gamma_ok = th.gamma == (unstable.cfg.params.p - 2.0) / 4.0;
    let defect_ok = th.concavity_defect >= -1e-6 * th.concavity_scale;
    let eta_ok = th.eta_min_relative >= -1e-10;
    verdict(
        gamma_ok && defect_ok && eta_ok && th.exact_derivatives,
        format!(
            "window=[{:.4}, {:.4}] gamma={} defect/scale={:.3e} min eta/scale={:.3e}",
            th.window.0,
            th.window.1,
            th.gamma,
            th.concavity_defect / th.concavity_scale,
            th.eta_min_relative
        ),
    )
}

fn criterion_10(unstable: &Prepared) -> Verdict {
    let params = ProblemParams {
        source: Source::Disabled,
        ..unstable.setup.params
    };
    let ops = DiscreteOperators::assemble(&unstable.setup.mesh, &params);
    let traj = run(&unstable.state, &ops, &params, &unstable.cfg.sim_config()).unwrap();
    let outcome = classify_run(&traj, &unstable.cfg.analysis.thresholds());
    let reached = matches!(traj.termination, Termination::Completed);
    verdict(
        reached && !matches!(outcome, RunOutcome::BlownUp { .. }),
        format!(
            "t_final={} termination={:?} verdict={}",
            traj.last().snapshot.t,
            traj.termination,
            outcome.label()
        ),
    )
}

fn criterion_11() -> Verdict {
    let cfg = preset(STABLE_P4);
    let result = match run_sweep(&cfg, None) {
        Ok(r) => r,
        Err(e) => return verdict(false, e.to_string()),
    };
    // Independent root of J(λu₀) = d on λ ≥ λ*: bisection on the assembled functional.
    let setup = cfg.setup().unwrap();
    let d = setup.constants.unwrap().d;
    let base = cfg.base_profile(&setup).unwrap();
    let j = |lambda: f64| {
        let u: Vec<f64> = base.iter().map(|x| lambda * x).collect();
        energy_snapshot(&State::at_rest(u), &setup.ops, &setup.params).potential
    };
    let lstar = result.lambda_star;
    let lambda_d = if j(lstar) <= d {
        lstar
    } else {
        let (mut lo, mut hi) = (lstar, 10.0 * lstar);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if j(mid) > d {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    };
    let labels: Vec<&str> = result.rows.iter().map(|r| r.outcome.label()).collect();
    let transitions = result.transitions();
    let ok = match transitions.as_slice() {
        [i] => {
            let (a, b) = (&result.rows[*i], &result.rows[*i + 1]);
            a.outcome.label() == "Decayed"
                && b.outcome.label() == "BlownUp"
                && a.lambda <= lambda_d
                && lambda_d <= b.lambda
        }
        _ => false,
    };
    let cell = transitions
        .first()
        .map(|&i| format!("[{:.4}, {:.4}]", result.rows[i].lambda, result.rows[i + 1].lambda))
        .unwrap_or_default();
    verdict(
        ok && result.rows.len() == 20,
        format!(
            "{} runs, transitions={} cell={cell} lambda_d={lambda_d:.6} verdicts={}",
            result.rows.len(),
            transitions.len(),
            labels.join(",")
        ),
    )
}

fn criterion_12() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for name in ["first.csv", "second.csv"] {
        let mut cfg = preset(UNSTABLE_P4);
        cfg.base_dir = Some(dir.path().to_path_buf());
        cfg.output.csv_path = name.into();
        cfg.output.svg_path = None;
        if let Err(e) = simulate(&cfg) {
            return verdict(false, e.to_string());
        }
        files.push(std::fs::read(dir.path().join(name)).unwrap());
    }
    verdict(
        files[0] == files[1] && !files[0].is_empty(),
        format!("{} bytes, identical={}", files[0].len(), files[0] == files[1]),
    )
}

fn main() {
    let stable = prepare(preset(STABLE_P4));
    let unstable = prepare(preset(UNSTABLE_P4));
    assert_eq!(stable.cfg.initial.target_set, TargetSet::StableW);
    let stable_run = stable.default_run();
    let unstable_run = unstable.default_run();

    let criteria: Vec<(&str, Check)> = vec![
        ("Sobolev constant anchor", Box::new(criterion_1)),
        ("well-depth consistency", Box::new(criterion_2)),
        ("gate equivalence", Box::new(criterion_3)),
        ("energy-balance identity", Box::new(|| criterion_4(&stable))),
        ("conservative sanity", Box::new(criterion_5)),
        ("stable-run desk check", Box::new(|| criterion_6(&stable, &stable_run))),
        ("exponential decay", Box::new(|| criterion_7(&stable, &stable_run))),
        (
            "finite-time blow-up",
            Box::new(|| criterion_8(&unstable, &unstable_run)),
        ),
        (
            "concavity diagnostic",
            Box::new(|| criterion_9(&unstable, &unstable_run)),
        ),
        ("source switched off", Box::new(|| criterion_10(&unstable))),
        ("sweep transition", Box::new(criterion_11)),
        ("determinism", Box::new(criterion_12)),
    ];
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let v = check();
        if !v.passed {
            failed += 1;
        }
        println!(
            "criterion {:>2} {:<26} {}  {}",
            k + 1,
            name,
            if v.passed { "PASS" } else { "FAIL" },
            v.detail
        );
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
