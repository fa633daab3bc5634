//! Post-hoc checks on finished trajectories: exponential decay fits, the
//! stable-run report card, the concavity diagnostics of blow-up runs and the
//! final run verdict.

use serde::{Deserialize, Serialize};

use crate::constants::{nehari_distance, WellConstants};
use crate::domain::ProblemParams;
use crate::error::{Error, Result};
use crate::functionals::{lyapunov_from_parts, EnergySnapshot};
use crate::integrator::{damping_law, Sample, Termination, ThetaTerms, Trajectory};

const MIN_FIT_POINTS: usize = 10;
const MIN_THETA_POINTS: usize = 5;
/// Snapshots dropped at the end of a blown-up run before differentiating θ.
const BLOWUP_TAIL: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub xi_hat: f64,
    pub c_hat: f64,
    pub r2: f64,
    pub window: (f64, f64),
}

/// Least-squares line through `(t, y)`: `(slope, intercept, r2)`.
fn linear_fit(t: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = t.len() as f64;
    let tm = t.iter().sum::<f64>() / n;
    let ym = y.iter().sum::<f64>() / n;
    let mut stt = 0.0;
    let mut sty = 0.0;
    let mut syy = 0.0;
    for (a, b) in t.iter().zip(y) {
        stt += (a - tm) * (a - tm);
        sty += (a - tm) * (b - ym);
        syy += (b - ym) * (b - ym);
    }
    let slope = if stt > 0.0 { sty / stt } else { 0.0 };
    let intercept = ym - slope * tm;
    let ss_res: f64 = t
        .iter()
        .zip(y)
        .map(|(a, b)| {
            let e = b - (intercept + slope * a);
            e * e
        })
        .sum();
    let r2 = if syy > 0.0 {
        (1.0 - ss_res / syy).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (slope, intercept, r2)
}

/// Indices of the trailing `fraction` of the time range.
fn trailing_window(times: &[f64], fraction: f64) -> (usize, f64, f64) {
    let t_lo = times[0];
    let t_hi = *times.last().unwrap();
    let cut = t_hi - fraction * (t_hi - t_lo);
    let start = times.iter().position(|&t| t >= cut).unwrap_or(0);
    (start, cut, t_hi)
}

/// Fits `E(t) ≈ Ĉ e^{−ξ t}` on the trailing `window_fraction` of the run.
pub fn fit_decay(trajectory: &Trajectory, window_fraction: f64) -> Result<DecayFit> {
    fit_decay_series(&trajectory.times(), &trajectory.energies(), window_fraction)
}

pub fn fit_decay_series(times: &[f64], energies: &[f64], window_fraction: f64) -> Result<DecayFit> {
    if !(window_fraction > 0.0 && window_fraction < 1.0) {
        return Err(Error::InvalidParams(format!(
            "window_fraction {window_fraction} must lie in (0, 1)"
        )));
    }
    if times.len() != energies.len() {
        return Err(Error::DimensionMismatch {
            expected: times.len(),
            got: energies.len(),
        });
    }
    if times.is_empty() {
        return Err(Error::InsufficientData("empty series".into()));
    }
    let (start, t_lo, t_hi) = trailing_window(times, window_fraction);
    let t = &times[start..];
    let e = &energies[start..];
    if t.len() < MIN_FIT_POINTS {
        return Err(Error::InsufficientData(format!(
            "{} points in the fit window, need {MIN_FIT_POINTS}",
            t.len()
        )));
    }
    if let Some(i) = e.iter().position(|&x| !(x > 0.0)) {
        return Err(Error::NonPositiveEnergy { t: t[i], value: e[i] });
    }
    let y: Vec<f64> = e.iter().map(|x| x.ln()).collect();
    let (slope, intercept, r2) = linear_fit(t, &y);
    Ok(DecayFit {
        xi_hat: -slope,
        c_hat: intercept.exp(),
        r2,
        window: (t_lo, t_hi),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub passed: bool,
    pub first_violation: Option<f64>,
    /// Passed only because the data is degenerate (zero energy).
    pub boundary_case: bool,
}

impl CheckResult {
    fn from_violation(first_violation: Option<f64>) -> Self {
        Self {
            passed: first_violation.is_none(),
            first_violation,
            boundary_case: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportCard {
    /// `I(t) > −tol_I` at every snapshot.
    pub nehari_positive: CheckResult,
    /// `E` non-increasing up to `energy_slack`.
    pub energy_monotone: CheckResult,
    /// `‖∇u‖₂² ≤ (2p/(p−2)) E0 (1 + 1e−8)`.
    pub gradient_bound: CheckResult,
    /// `E(t) > 0`.
    pub energy_positive: CheckResult,
}

impl ReportCard {
    pub fn all_passed(&self) -> bool {
        self.checks().iter().all(|(_, c)| c.passed)
    }

    pub fn checks(&self) -> [(&'static str, CheckResult); 4] {
        [
            ("nehari_positive", self.nehari_positive),
            ("energy_monotone", self.energy_monotone),
            ("gradient_bound", self.gradient_bound),
            ("energy_positive", self.energy_positive),
        ]
    }
}

/// Relative slack allowed on energy increases between snapshots.
pub const ENERGY_SLACK: f64 = 1e-9;
const GRADIENT_BOUND_SLACK: f64 = 1e-8;

pub fn verify_stable_run(trajectory: &Trajectory, constants: &WellConstants, e0: f64) -> ReportCard {
    let snaps: Vec<&EnergySnapshot> = trajectory.snapshots().collect();
    let p = constants.p;
    let is_zero = |s: &EnergySnapshot| s.grad_sq == 0.0 && s.lp_term == 0.0;

    let nehari = snaps
        .iter()
        .find(|s| !(is_zero(s) || s.nehari > -s.nehari_tolerance()))
        .map(|s| s.t);

    let slack = ENERGY_SLACK * e0.abs().max(f64::MIN_POSITIVE);
    let monotone = snaps
        .windows(2)
        .find(|w| !(w[1].energy <= w[0].energy + slack))
        .map(|w| w[1].t);

    let bound = 2.0 * p / (p - 2.0) * e0 * (1.0 + GRADIENT_BOUND_SLACK);
    let gradient = snaps.iter().find(|s| !(s.grad_sq <= bound)).map(|s| s.t);

    let positive = if e0 == 0.0 && snaps.iter().all(|s| s.energy == 0.0) {
        CheckResult {
            passed: true,
            first_violation: None,
            boundary_case: true,
        }
    } else {
        CheckResult::from_violation(snaps.iter().find(|s| !(s.energy > 0.0)).map(|s| s.t))
    };

    ReportCard {
        nehari_positive: CheckResult::from_violation(nehari),
        energy_monotone: CheckResult::from_violation(monotone),
        gradient_bound: CheckResult::from_violation(gradient),
        energy_positive: positive,
    }
}

/// First and second derivatives on a non-uniform grid by three-point
/// divided differences. Endpoints use the stencil of their neighbour.
pub fn nonuniform_derivatives(t: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = t.len();
    let mut d1 = vec![0.0; n];
    let mut d2 = vec![0.0; n];
    if n < 3 {
        return (d1, d2);
    }
    // Derivatives of the quadratic through points (i-1, i, i+1), evaluated at `at`.
    let quad = |i: usize, at: f64| {
        let (x0, x1, x2) = (t[i - 1], t[i], t[i + 1]);
        let (y0, y1, y2) = (y[i - 1], y[i], y[i + 1]);
        let h0 = x1 - x0;
        let h1 = x2 - x1;
        let f01 = (y1 - y0) / h0;
        let f12 = (y2 - y1) / h1;
        let f012 = (f12 - f01) / (h0 + h1);
        let first = f01 + f012 * ((at - x0) + (at - x1));
        (first, 2.0 * f012)
    };
    for i in 0..n {
        let c = i.clamp(1, n - 2);
        let (a, b) = quad(c, t[i]);
        d1[i] = a;
        d2[i] = b;
    }
    (d1, d2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaDiagnostics {
    pub times: Vec<f64>,
    pub theta: Vec<f64>,
    pub theta_d1: Vec<f64>,
    pub theta_d2: Vec<f64>,
    /// `min θθ″ − ((p+2)/4)θ′²` over the checked window (0 for an empty window).
    pub concavity_defect: f64,
    /// `max |θθ″| + ((p+2)/4)θ′²` over the checked window.
    pub concavity_scale: f64,
    /// Largest second derivative of `θ^{−γ}` over the window.
    pub theta_pow_d2_max: f64,
    /// Scale of the `θ^{−γ}` second differences.
    pub theta_pow_scale: f64,
    pub window: (f64, f64),
    pub gamma: f64,
    pub zeta_series: Vec<f64>,
    pub eta_series: Vec<f64>,
    /// `min η / scale`, where scale is the positive part of η's product term.
    pub eta_min_relative: f64,
    pub eta_nonneg_ok: bool,
    /// Whether θ′, θ″ come from the recorded cross terms (exact for the
    /// semi-discrete system) or from divided differences of θ.
    pub exact_derivatives: bool,
    /// `ζ(t) ≥ (p−2)[α∫‖∇u_t‖² + r∫‖u_t‖²] − tol` at every snapshot.
    pub zeta_lower_ok: bool,
    /// `‖∇u‖₂² > 2dp/(p−2)` at every snapshot, when a well depth was supplied.
    pub beta_crossing: Option<bool>,
    pub horizon_t: f64,
}

/// Relative tolerance for `η ≥ 0` with exact cross terms.
pub const ETA_TOL: f64 = 1e-10;
/// Relative tolerance for `η ≥ 0` when θ′ comes from differences.
pub const ETA_TOL_DIFFERENCED: f64 = 1e-3;
const ZETA_TOL: f64 = 1e-8;

/// `(θ′, θ″)` at a sample from the semi-discrete equations:
///
/// ```text
/// θ′ = 2(u, u_t)_Γ + α(‖∇u‖² − ‖∇u₀‖²) + r(u(1)² − u₀(1)²)
/// θ″ = 2‖u_t‖²_Γ − 2I(u) + 2r u(1)(u_t(1) − φ_m(u_t(1)))
/// ```
///
/// where `(·,·)_Γ` includes the boundary mass.
fn exact_theta_derivatives(s: &Sample, terms: &ThetaTerms, s0: &EnergySnapshot, params: &ProblemParams) -> (f64, f64) {
    let sn = &s.snapshot;
    let d1 = 2.0 * terms.cross
        + params.alpha * (sn.grad_sq - s0.grad_sq)
        + params.r * (sn.trace_u * sn.trace_u - s0.trace_u * s0.trace_u);
    let (phi, _) = damping_law(terms.trace_v, params.m);
    let d2 = 4.0 * (sn.kinetic + sn.boundary_kinetic) - 2.0 * sn.nehari
        + 2.0 * params.r * sn.trace_u * (terms.trace_v - phi);
    (d1, d2)
}

/// Concavity diagnostics of `θ(t)` on `[t0, T_check]`, with `t0` at
/// `t0_fraction` of the recorded time span.
pub fn theta_diagnostics(
    trajectory: &Trajectory,
    t0_fraction: f64,
    constants: Option<&WellConstants>,
) -> Result<ThetaDiagnostics> {
    let samples = &trajectory.samples;
    if samples.len() < MIN_THETA_POINTS {
        return Err(Error::InsufficientData(format!(
            "{} snapshots, need at least {MIN_THETA_POINTS} for second differences",
            samples.len()
        )));
    }
    if !(0.0..1.0).contains(&t0_fraction) {
        return Err(Error::InvalidParams(format!(
            "t0_fraction {t0_fraction} must lie in [0, 1)"
        )));
    }
    let params = &trajectory.params;
    let p = params.p;
    let horizon = trajectory.horizon;
    let times = trajectory.times();
    let theta: Vec<f64> = samples.iter().map(|s| s.theta).collect();
    let c0 = trajectory.theta_slope();
    let s0 = trajectory.first().snapshot;
    let exact = samples.iter().all(|s| s.terms.is_some());
    let (d1, d2) = if exact {
        samples
            .iter()
            .map(|s| {
                let terms = s.terms.expect("checked above");
                exact_theta_derivatives(s, &terms, &s0, params)
            })
            .unzip()
    } else {
        nonuniform_derivatives(&times, &theta)
    };

    let n = samples.len();
    let last = if trajectory.blew_up() {
        n.saturating_sub(1 + BLOWUP_TAIL)
    } else {
        n - 1
    };
    // Anchored at the last recorded time so that runs ending before the
    // horizon still get a window.
    let t_last = *times.last().unwrap();
    let t0 = times[0] + t0_fraction * (t_last.min(horizon) - times[0]);
    // Interior points only: the end stencils are one-sided.
    let window: Vec<usize> = (1..last.min(n - 1)).filter(|&i| times[i] >= t0).collect();

    let k = (p + 2.0) / 4.0;
    let gamma = (p - 2.0) / 4.0;
    let mut defect = 0.0f64;
    let mut scale = 0.0f64;
    let mut pow_max = 0.0f64;
    let mut pow_scale = 0.0f64;
    for (j, &i) in window.iter().enumerate() {
        let val = theta[i] * d2[i] - k * d1[i] * d1[i];
        let size = (theta[i] * d2[i]).abs() + k * d1[i] * d1[i];
        // (θ^{−γ})″ = −γ θ^{−γ−2} (θθ″ − (γ+1)θ′²), and γ + 1 = (p+2)/4.
        let w = gamma * theta[i].powf(-gamma - 2.0);
        let pow = -w * val;
        if j == 0 {
            defect = val;
            pow_max = pow;
        } else {
            defect = defect.min(val);
            pow_max = pow_max.max(pow);
        }
        scale = scale.max(size);
        pow_scale = pow_scale.max(w * size);
    }

    let zeta: Vec<f64> = samples
        .iter()
        .map(|s| {
            let diss = s.diss_interior + s.diss_boundary;
            -2.0 * p * s.snapshot.energy + (p - 2.0) * s.snapshot.grad_sq - (p + 2.0) * diss
        })
        .collect();
    let zeta_lower_ok = samples.iter().zip(&zeta).all(|(s, z)| {
        let diss = s.diss_interior + s.diss_boundary;
        let scale = (2.0 * p * s.snapshot.energy.abs() + (p - 2.0) * s.snapshot.grad_sq + (p + 2.0) * diss).max(1e-300);
        *z >= (p - 2.0) * diss - ZETA_TOL * scale
    });

    let mut eta = Vec::with_capacity(n);
    let mut eta_min_rel = f64::INFINITY;
    for (i, s) in samples.iter().enumerate() {
        let sn = &s.snapshot;
        let left = s.theta - (horizon - sn.t) * c0;
        let right = 2.0 * sn.kinetic + 2.0 * sn.boundary_kinetic + s.diss_interior + s.diss_boundary;
        // With recorded terms the scheme's own quadrature of θ′/2 is used, for
        // which the Cauchy–Schwarz bound holds exactly.
        let half_d1 = match s.terms {
            Some(terms) if exact => terms.cross + s.int_cross,
            _ => 0.5 * d1[i],
        };
        let value = left * right - half_d1 * half_d1;
        let scale = (left.abs() * right.abs()).max(half_d1 * half_d1);
        eta.push(value);
        // Differenced θ′ is only meaningful at the central stencils of the window.
        let checked = exact || window.binary_search(&i).is_ok();
        if checked && scale > 0.0 {
            eta_min_rel = eta_min_rel.min(value / scale);
        }
    }
    if !eta_min_rel.is_finite() {
        eta_min_rel = 0.0;
    }
    let tol = if exact { ETA_TOL } else { ETA_TOL_DIFFERENCED };

    let beta_crossing = constants.map(|wc| {
        let beta_sq = nehari_distance(wc.d, p).powi(2);
        samples.iter().all(|s| s.snapshot.grad_sq > beta_sq)
    });

    let window_span = match (window.first(), window.last()) {
        (Some(&a), Some(&b)) => (times[a], times[b]),
        _ => (t0, t0),
    };
    Ok(ThetaDiagnostics {
        times,
        theta,
        theta_d1: d1,
        theta_d2: d2,
        concavity_defect: defect,
        concavity_scale: scale,
        theta_pow_d2_max: pow_max,
        theta_pow_scale: pow_scale,
        window: window_span,
        gamma,
        zeta_series: zeta,
        eta_series: eta,
        eta_min_relative: eta_min_rel,
        eta_nonneg_ok: eta_min_rel >= -tol,
        exact_derivatives: exact,
        zeta_lower_ok,
        beta_crossing,
        horizon_t: horizon,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict")]
pub enum RunOutcome {
    Decayed { xi_hat: f64, c_hat: f64, r2: f64 },
    BlownUp { t_star: f64, dt_final: f64 },
    Grew { lp_rate: f64 },
    Inconclusive { reason: String },
}

impl RunOutcome {
    pub fn label(&self) -> &'static str {
        match self {
            RunOutcome::Decayed { .. } => "Decayed",
            RunOutcome::BlownUp { .. } => "BlownUp",
            RunOutcome::Grew { .. } => "Grew",
            RunOutcome::Inconclusive { .. } => "Inconclusive",
        }
    }

    /// Process exit code for the verdict.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunOutcome::Decayed { .. } => 0,
            RunOutcome::BlownUp { .. } => 2,
            RunOutcome::Grew { .. } | RunOutcome::Inconclusive { .. } => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifyThresholds {
    pub window_fraction: f64,
    pub decay_r2: f64,
    pub growth_factor: f64,
    pub growth_r2: f64,
}

impl Default for ClassifyThresholds {
    fn default() -> Self {
        Self {
            window_fraction: 0.5,
            decay_r2: 0.99,
            growth_factor: 10.0,
            growth_r2: 0.95,
        }
    }
}

pub fn classify_run(trajectory: &Trajectory, thresholds: &ClassifyThresholds) -> RunOutcome {
    match &trajectory.termination {
        Termination::BlownUp { t_star, dt_final, .. } => {
            return RunOutcome::BlownUp {
                t_star: *t_star,
                dt_final: *dt_final,
            }
        }
        Termination::Collapsed { reason, .. } => {
            return RunOutcome::Inconclusive { reason: reason.clone() };
        }
        Termination::Completed => {}
    }
    let decay_reason = match fit_decay(trajectory, thresholds.window_fraction) {
        Ok(fit) if fit.r2 >= thresholds.decay_r2 && fit.xi_hat > 0.0 => {
            return RunOutcome::Decayed {
                xi_hat: fit.xi_hat,
                c_hat: fit.c_hat,
                r2: fit.r2,
            }
        }
        Ok(fit) => format!("decay fit rejected (xi_hat {:.4e}, r2 {:.4})", fit.xi_hat, fit.r2),
        Err(e) => format!("decay fit failed: {e}"),
    };

    let p = trajectory.params.p;
    let times = trajectory.times();
    let norms: Vec<f64> = trajectory
        .snapshots()
        .map(|s| s.lp_term.max(0.0).powf(1.0 / p))
        .collect();
    let first = norms[0];
    let peak = norms.iter().cloned().fold(0.0, f64::max);
    if first > 0.0 && *norms.last().unwrap() >= thresholds.growth_factor * first {
        let (start, _, _) = trailing_window(&times, thresholds.window_fraction);
        if times.len() - start >= 2 && norms[start..].iter().all(|x| *x > 0.0) {
            let y: Vec<f64> = norms[start..].iter().map(|x| x.ln()).collect();
            let (slope, _, r2) = linear_fit(&times[start..], &y);
            if slope > 0.0 && r2 >= thresholds.growth_r2 {
                return RunOutcome::Grew { lp_rate: slope };
            }
        }
    }
    let reason = if first > 0.0 && peak >= thresholds.growth_factor * first {
        format!("{decay_reason}; L^p norm grew without a clean exponential trend")
    } else {
        decay_reason
    };
    RunOutcome::Inconclusive { reason }
}

/// First snapshot with `I < 0` and `E ≤ d`, i.e. inside the unstable set at
/// sub-well energy. Absence on the sampled grid proves nothing.
pub fn first_unstable_entry(trajectory: &Trajectory, d: f64) -> Option<f64> {
    trajectory
        .snapshots()
        .find(|s| s.nehari < -s.nehari_tolerance() && s.energy <= d)
        .map(|s| s.t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovWitness {
    pub eps: f64,
    pub series: Vec<f64>,
}

fn lyapunov_series(trajectory: &Trajectory, eps: f64) -> Option<Vec<f64>> {
    let alpha = trajectory.params.alpha;
    trajectory
        .samples
        .iter()
        .map(|s| {
            s.terms
                .map(|t| lyapunov_from_parts(s.snapshot.energy, t.cross, s.snapshot.grad_sq, eps, alpha))
        })
        .collect()
}

fn non_increasing(series: &[f64], slack: f64) -> bool {
    series.windows(2).all(|w| w[1] <= w[0] + slack)
}

/// Largest `ε ≤ eps_max` (to bisection accuracy) for which the Lyapunov
/// functional is non-increasing along the run. `None` when even tiny `ε` fails
/// or the cross terms are unavailable.
pub fn lyapunov_search(trajectory: &Trajectory, eps_max: f64, bisections: usize) -> Option<LyapunovWitness> {
    let e0 = trajectory.first().snapshot.energy.abs().max(f64::MIN_POSITIVE);
    let slack = ENERGY_SLACK * e0;
    let ok = |eps: f64| lyapunov_series(trajectory, eps).filter(|s| non_increasing(s, slack));
    if let Some(series) = ok(eps_max) {
        return Some(LyapunovWitness { eps: eps_max, series });
    }
    let mut hi = eps_max;
    let mut lo = 0.0;
    let mut best = None;
    for _ in 0..bisections {
        let mid = 0.5 * (lo + hi);
        match ok(mid) {
            Some(series) => {
                lo = mid;
                best = Some(LyapunovWitness { eps: mid, series });
            }
            None => hi = mid,
        }
    }
    best
}
