//! Implicit midpoint integration of the semi-discrete system
//!
//! ```text
//! (M + B) v' = −K u − αK v − r b_m(v) + s f_p(u),    u' = v
//! ```
//!
//! with adaptive step control and blow-up detection. `b_m` is the boundary
//! damping `|v(1)|^(m−2) v(1)` on the `Γ1` row and `f_p` the source load
//! vector.

use serde::{Deserialize, Serialize};

use crate::domain::{DiscreteOperators, ProblemParams, State};
use crate::error::{Error, Result};
use crate::functionals::{cross_term, energy_snapshot, EnergySnapshot};

/// Regularization of `|s|^(m−2) s` for `2 < m < 3`.
pub const DAMPING_SIGMA: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt0: f64,
    pub dt_min: f64,
    pub dt_max: f64,
    pub t_end: f64,
    pub newton_tol: f64,
    pub newton_max: usize,
    /// Threshold Θ on `‖∇u‖₂ + ‖u_t‖₂`.
    pub blowup_threshold: f64,
    /// Largest accepted per-step growth ratio of `‖∇u‖₂ + ‖u_t‖₂`.
    pub growth_cap: f64,
    pub snapshot_stride: usize,
    /// Short backward Euler steps taken before switching to the midpoint rule
    /// when `α > 0`. They remove the start-up transient of the stiff,
    /// overdamped modes, which the midpoint rule only damps by a factor close
    /// to −1 per step.
    pub damped_start: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt0: 0.01,
            dt_min: 1e-12,
            dt_max: 0.01,
            t_end: 40.0,
            newton_tol: 1e-12,
            newton_max: 25,
            blowup_threshold: 1e8,
            growth_cap: 10.0,
            snapshot_stride: 1,
            damped_start: 2,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParams(m.to_string()));
        if !(self.dt_min > 0.0 && self.dt_min <= self.dt0 && self.dt0 <= self.dt_max) {
            return bad("need 0 < dt_min <= dt0 <= dt_max");
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return bad("t_end must be positive");
        }
        if !(self.blowup_threshold > 0.0) {
            return bad("blow-up threshold must be positive");
        }
        if !(self.growth_cap > 1.0) {
            return bad("growth_cap must exceed 1");
        }
        if !(self.newton_tol > 0.0) || self.newton_max == 0 {
            return bad("newton_tol must be positive and newton_max at least 1");
        }
        if self.snapshot_stride == 0 {
            return bad("snapshot_stride must be at least 1");
        }
        Ok(())
    }

    /// Fixed step `dt` (no adaptation headroom).
    pub fn fixed_step(mut self, dt: f64) -> Self {
        self.dt0 = dt;
        self.dt_min = dt;
        self.dt_max = dt;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepFailure {
    NewtonDiverged { iterations: usize, residual: f64 },
    SingularJacobian,
    NonFinite,
    GrowthExceeded { ratio: f64 },
}

impl std::fmt::Display for StepFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StepFailure::NewtonDiverged { iterations, residual } => {
                write!(
                    f,
                    "Newton stalled after {iterations} iterations (residual {residual:e})"
                )
            }
            StepFailure::SingularJacobian => write!(f, "singular Newton matrix"),
            StepFailure::NonFinite => write!(f, "non-finite state"),
            StepFailure::GrowthExceeded { ratio } => write!(f, "per-step growth {ratio:.3e}"),
        }
    }
}

/// Quadrature increments of the running integrals over one step, evaluated at
/// the midpoint the scheme itself uses.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Increments {
    /// `dt α ‖∇v_mid‖₂²`.
    pub diss_interior: f64,
    /// `dt r φ_m(v_mid(1)) v_mid(1)`.
    pub diss_boundary: f64,
    /// `dt ‖∇u_mid‖₂²`.
    pub int_grad_sq: f64,
    /// `dt u_mid(1)²`.
    pub int_trace_sq: f64,
    /// `dt [α ∇u_mid·∇v_mid + r u_mid(1) v_mid(1)]`.
    pub int_cross: f64,
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub state: State,
    pub increments: Increments,
    pub newton_iterations: usize,
}

/// Regularized `|s|^(m−2) s` and its derivative.
pub fn damping_law(s: f64, m: f64) -> (f64, f64) {
    if m == 2.0 {
        (s, 1.0)
    } else if m < 3.0 {
        let q = s * s + DAMPING_SIGMA * DAMPING_SIGMA;
        let e = 0.5 * (m - 2.0);
        let base = q.powf(e);
        (base * s, base + 2.0 * e * s * s * q.powf(e - 1.0))
    } else {
        let a = s.abs().powf(m - 2.0);
        (a * s, (m - 1.0) * a)
    }
}

fn inf_norm(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

/// `‖∇u‖₂ + ‖v‖₂`, the quantity that diverges at a blow-up time.
pub fn blowup_norm(state: &State, ops: &DiscreteOperators) -> f64 {
    ops.grad_sq(&state.u).max(0.0).sqrt() + ops.mass.quad(&state.v).max(0.0).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Midpoint,
    BackwardEuler,
}

impl Scheme {
    /// Position `c` of the evaluation point inside the step.
    fn weight(self) -> f64 {
        match self {
            Scheme::Midpoint => 0.5,
            Scheme::BackwardEuler => 1.0,
        }
    }
}

/// One implicit midpoint step of size `dt`, solved by Newton's method on the
/// midpoint velocity `w = (v + v⁺)/2`:
///
/// ```text
/// 2(M + B)(w − v) + dt [K u_mid + αK w + r b_m(w) − s f_p(u_mid)] = 0,
/// u_mid = u + (dt/2) w,   u⁺ = u + dt w,   v⁺ = 2w − v.
/// ```
pub fn step(
    state: &State,
    dt: f64,
    ops: &DiscreteOperators,
    params: &ProblemParams,
    cfg: &SimConfig,
) -> std::result::Result<StepOutcome, StepFailure> {
    step_with(Scheme::Midpoint, state, dt, ops, params, cfg)
}

/// A step of either scheme. With `c` the scheme weight (½ or 1) the unknown
/// `w` is the velocity at the evaluation point `u + c dt w`, and
/// `v⁺ = v + (w − v)/c`.
pub fn step_with(
    scheme: Scheme,
    state: &State,
    dt: f64,
    ops: &DiscreteOperators,
    params: &ProblemParams,
    cfg: &SimConfig,
) -> std::result::Result<StepOutcome, StepFailure> {
    let c = scheme.weight();
    let inv_c = 1.0 / c;
    let n = ops.dim();
    let g1 = ops.gamma1_index;
    let s = params.source.sign();
    let inertia = {
        let mut m = ops.mass.clone();
        m.add_scaled(1.0, &ops.boundary_mass);
        m
    };
    let u_mid_of = |w: &[f64]| -> Vec<f64> { state.u.iter().zip(w).map(|(u, w)| u + c * dt * w).collect() };
    // Residual and the scale of the force term.
    let residual = |w: &[f64], u_mid: &[f64]| -> (Vec<f64>, f64) {
        let dw: Vec<f64> = w.iter().zip(&state.v).map(|(a, b)| a - b).collect();
        let inertial = inertia.apply(&dw);
        let mut force = ops.stiffness.apply(u_mid);
        let kw = ops.stiffness.apply(w);
        for i in 0..n {
            force[i] += params.alpha * kw[i];
        }
        force[g1] += params.r * damping_law(w[g1], params.m).0;
        if s != 0.0 {
            let f = ops.source_load(u_mid);
            for i in 0..n {
                force[i] -= s * f[i];
            }
        }
        let res: Vec<f64> = inertial.iter().zip(&force).map(|(a, b)| inv_c * a + dt * b).collect();
        (res, dt * inf_norm(&force))
    };

    let mut w = state.v.clone();
    let mut u_mid = u_mid_of(&w);
    let (mut res, _) = residual(&w, &u_mid);
    let mut converged = None;
    let mut last_res = f64::INFINITY;
    for it in 1..=cfg.newton_max {
        let mut jac = inertia.scaled(inv_c);
        jac.add_scaled(dt * (c * dt + params.alpha), &ops.stiffness);
        jac.diag[g1] += dt * params.r * damping_law(w[g1], params.m).1;
        if s != 0.0 {
            jac.add_scaled(-s * c * dt * dt, &ops.source_jacobian(&u_mid));
        }
        let delta = jac.solve(&res).ok_or(StepFailure::SingularJacobian)?;
        for (wi, di) in w.iter_mut().zip(&delta) {
            *wi -= di;
        }
        u_mid = u_mid_of(&w);
        let (r, scale) = residual(&w, &u_mid);
        res = r;
        last_res = inf_norm(&res);
        if !last_res.is_finite() || w.iter().any(|x| !x.is_finite()) {
            return Err(StepFailure::NonFinite);
        }
        if last_res < cfg.newton_tol * (1.0 + scale) {
            converged = Some(it);
            break;
        }
    }
    let newton_iterations = converged.ok_or(StepFailure::NewtonDiverged {
        iterations: cfg.newton_max,
        residual: last_res,
    })?;

    let u_new: Vec<f64> = state.u.iter().zip(&w).map(|(u, w)| u + dt * w).collect();
    let v_new: Vec<f64> = match scheme {
        Scheme::Midpoint => w.iter().zip(&state.v).map(|(w, v)| 2.0 * w - v).collect(),
        Scheme::BackwardEuler => w.clone(),
    };
    let next = State {
        t: state.t + dt,
        u: u_new,
        v: v_new,
    };
    if next.u.iter().chain(&next.v).any(|x| !x.is_finite()) {
        return Err(StepFailure::NonFinite);
    }
    let before = blowup_norm(state, ops);
    let after = blowup_norm(&next, ops);
    if !after.is_finite() {
        return Err(StepFailure::NonFinite);
    }
    if before > 0.0 && after / before > cfg.growth_cap {
        return Err(StepFailure::GrowthExceeded { ratio: after / before });
    }
    let wb = w[g1];
    let ub = u_mid[g1];
    let increments = Increments {
        diss_interior: dt * params.alpha * ops.stiffness.quad(&w),
        diss_boundary: dt * params.r * damping_law(wb, params.m).0 * wb,
        int_grad_sq: dt * ops.stiffness.quad(&u_mid),
        int_trace_sq: dt * ub * ub,
        int_cross: dt * (params.alpha * ops.stiffness.bilinear(&u_mid, &w) + params.r * ub * wb),
    };
    Ok(StepOutcome {
        state: next,
        increments,
        newton_iterations,
    })
}

/// Terms of the concavity functional that are not recoverable from an
/// [`EnergySnapshot`] alone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaTerms {
    /// `‖u‖₂²`.
    pub l2_sq: f64,
    /// `∫ u u_t + ∫_{Γ1} u u_t`.
    pub cross: f64,
    /// `u_t(1)`.
    pub trace_v: f64,
}

/// One recorded point of a trajectory with the running time integrals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub snapshot: EnergySnapshot,
    /// `α ∫₀ᵗ ‖∇u_t‖₂²`.
    pub diss_interior: f64,
    /// `r ∫₀ᵗ ‖u_t‖^m_{m,Γ1}`.
    pub diss_boundary: f64,
    /// `∫₀ᵗ ‖∇u‖₂²`.
    pub int_grad_sq: f64,
    /// `∫₀ᵗ u(1)²`.
    pub int_trace_sq: f64,
    /// `∫₀ᵗ α ∇u·∇u_t + r u(1) u_t(1)`, the integral part of `θ′/2`.
    pub int_cross: f64,
    /// The concavity functional θ(t) for the trajectory horizon.
    pub theta: f64,
    pub terms: Option<ThetaTerms>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Termination {
    /// Reached `t_end`.
    Completed,
    /// Threshold crossed and the step size collapsed to `dt_min`.
    BlownUp { t_star: f64, dt_final: f64, norm: f64 },
    /// Step size collapsed without a threshold crossing.
    Collapsed { t: f64, reason: String },
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub params: ProblemParams,
    /// Horizon `T` used in θ (the configured `t_end`).
    pub horizon: f64,
    pub samples: Vec<Sample>,
    pub termination: Termination,
    /// Last accepted state (absent for trajectories read back from CSV).
    pub final_state: Option<State>,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
}

impl Trajectory {
    pub fn snapshots(&self) -> impl Iterator<Item = &EnergySnapshot> {
        self.samples.iter().map(|s| &s.snapshot)
    }

    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.snapshot.t).collect()
    }

    pub fn energies(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.snapshot.energy).collect()
    }

    pub fn first(&self) -> &Sample {
        &self.samples[0]
    }

    pub fn last(&self) -> &Sample {
        self.samples.last().expect("trajectory has at least the initial sample")
    }

    pub fn blew_up(&self) -> bool {
        matches!(self.termination, Termination::BlownUp { .. })
    }

    /// `α‖∇u₀‖₂² + r u₀(1)²`, the slope of the `(T − t)` term of θ.
    pub fn theta_slope(&self) -> f64 {
        let s0 = &self.first().snapshot;
        self.params.alpha * s0.grad_sq + self.params.r * s0.trace_u * s0.trace_u
    }
}

struct Recorder<'a> {
    ops: &'a DiscreteOperators,
    params: ProblemParams,
    horizon: f64,
    theta_slope: f64,
    totals: Increments,
}

impl Recorder<'_> {
    fn sample(&self, state: &State, dt_used: f64) -> Sample {
        let mut snapshot = energy_snapshot(state, self.ops, &self.params);
        snapshot.dt_used = dt_used;
        let l2_sq = self.ops.mass.quad(&state.u);
        let cross = cross_term(state, self.ops);
        let tb = snapshot.trace_u;
        let theta = l2_sq
            + self.ops.boundary_weight * tb * tb
            + self.params.alpha * self.totals.int_grad_sq
            + self.params.r * self.totals.int_trace_sq
            + (self.horizon - state.t) * self.theta_slope;
        Sample {
            snapshot,
            diss_interior: self.totals.diss_interior,
            diss_boundary: self.totals.diss_boundary,
            int_grad_sq: self.totals.int_grad_sq,
            int_trace_sq: self.totals.int_trace_sq,
            int_cross: self.totals.int_cross,
            theta,
            terms: Some(ThetaTerms {
                l2_sq,
                cross,
                trace_v: self.ops.trace(&state.v),
            }),
        }
    }

    fn accumulate(&mut self, inc: &Increments) {
        self.totals.diss_interior += inc.diss_interior;
        self.totals.diss_boundary += inc.diss_boundary;
        self.totals.int_grad_sq += inc.int_grad_sq;
        self.totals.int_trace_sq += inc.int_trace_sq;
        self.totals.int_cross += inc.int_cross;
    }
}

/// Size of a damped start-up step relative to the current `dt`.
const STARTUP_FRACTION: f64 = 0.125;
const GROWTH_WINDOW: usize = 10;
const GROWTH_FACTOR: f64 = 1.2;

/// Integrates from `initial` to `cfg.t_end` with step adaptation: halve on
/// failure, grow by 1.2× after 10 consecutive acceptances, clamp to
/// `[dt_min, dt_max]`.
pub fn run(initial: &State, ops: &DiscreteOperators, params: &ProblemParams, cfg: &SimConfig) -> Result<Trajectory> {
    cfg.validate()?;
    ops.check_dim(&initial.u)?;
    ops.check_dim(&initial.v)?;
    let tb = ops.trace(&initial.u);
    let mut rec = Recorder {
        ops,
        params: *params,
        horizon: cfg.t_end,
        theta_slope: params.alpha * ops.grad_sq(&initial.u) + params.r * tb * tb,
        totals: Increments::default(),
    };
    let mut samples = vec![rec.sample(initial, 0.0)];
    let mut state = initial.clone();
    let mut dt = cfg.dt0;
    let mut streak = 0;
    let mut accepted = 0usize;
    let mut rejected = 0usize;
    let mut last_dt = 0.0;
    let mut last_recorded = true;
    let mut startup = if params.alpha > 0.0 { cfg.damped_start } else { 0 };
    let end_slack = 1e-12 * cfg.t_end.max(1.0);

    let termination = loop {
        let remaining = cfg.t_end - state.t;
        if remaining <= end_slack {
            break Termination::Completed;
        }
        let dt_try = dt.min(remaining);
        let (scheme, h) = if startup > 0 {
            (Scheme::BackwardEuler, dt_try * STARTUP_FRACTION)
        } else {
            (Scheme::Midpoint, dt_try)
        };
        let attempt = step_with(scheme, &state, h, ops, params, cfg);
        match attempt {
            Ok(out) => {
                rec.accumulate(&out.increments);
                state = out.state;
                if cfg.t_end - state.t <= end_slack {
                    state.t = cfg.t_end;
                }
                accepted += 1;
                last_dt = h;
                startup = startup.saturating_sub(1);
                last_recorded = accepted.is_multiple_of(cfg.snapshot_stride);
                if last_recorded {
                    samples.push(rec.sample(&state, h));
                }
                streak += 1;
                if streak >= GROWTH_WINDOW {
                    dt = (dt * GROWTH_FACTOR).min(cfg.dt_max);
                    streak = 0;
                }
            }
            Err(failure) => {
                rejected += 1;
                streak = 0;
                if dt_try <= cfg.dt_min {
                    let norm = blowup_norm(&state, ops);
                    if norm > cfg.blowup_threshold {
                        break Termination::BlownUp {
                            t_star: state.t,
                            dt_final: dt_try,
                            norm,
                        };
                    }
                    break Termination::Collapsed {
                        t: state.t,
                        reason: format!("step size collapsed to dt_min: {failure}"),
                    };
                }
                dt = (dt_try * 0.5).max(cfg.dt_min);
            }
        }
    };
    if !last_recorded {
        samples.push(rec.sample(&state, last_dt));
    }
    Ok(Trajectory {
        params: *params,
        horizon: cfg.t_end,
        samples,
        termination,
        final_state: Some(state),
        accepted_steps: accepted,
        rejected_steps: rejected,
    })
}

/// `max_t |E(t) + α∫‖∇u_t‖² + r∫‖u_t‖^m_{m,Γ1} − E(0)| / max(|E(0)|, 1e−30)`.
pub fn dissipation_residual(trajectory: &Trajectory) -> Result<f64> {
    if trajectory.samples.len() < 2 {
        return Err(Error::InsufficientData("need at least 2 snapshots".into()));
    }
    let e0 = trajectory.first().snapshot.energy;
    let scale = e0.abs().max(1e-30);
    Ok(trajectory
        .samples
        .iter()
        .map(|s| (s.snapshot.energy + s.diss_interior + s.diss_boundary - e0).abs() / scale)
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Mesh1D, Source};
    use std::f64::consts::PI;

    fn setup(n: usize, params: ProblemParams) -> DiscreteOperators {
        DiscreteOperators::assemble(&Mesh1D::new(n, 1.0).unwrap(), &params)
    }

    #[test]
    fn zero_state_is_a_fixed_point() {
        for (m, source) in [(2.0, Source::Standard), (2.5, Source::Negated), (3.5, Source::Standard)] {
            let params = ProblemParams {
                m,
                source,
                ..ProblemParams::default()
            };
            let ops = setup(16, params);
            let out = step(&State::zero(16), 0.3, &ops, &params, &SimConfig::default()).unwrap();
            assert!(out.state.u.iter().chain(&out.state.v).all(|x| *x == 0.0));
        }
    }

    #[test]
    fn damping_law_derivative() {
        for m in [2.0, 2.5, 3.0, 4.5] {
            for s in [-1.3, -0.2, 0.4, 2.0] {
                let h = 1e-6;
                let fd = (damping_law(s + h, m).0 - damping_law(s - h, m).0) / (2.0 * h);
                assert!((fd - damping_law(s, m).1).abs() < 1e-6, "m={m} s={s}");
            }
        }
        assert!(damping_law(0.0, 2.5).1.is_finite());
    }

    #[test]
    fn conservative_linear_run_conserves_energy() {
        let params = ProblemParams {
            alpha: 0.0,
            r: 0.0,
            source: Source::Disabled,
            ..ProblemParams::default()
        };
        let ops = setup(32, params);
        let u = ops.mesh().interpolate(|x| (PI * x / 2.0).sin());
        let cfg = SimConfig {
            t_end: 10.0,
            ..SimConfig::default()
        }
        .fixed_step(0.01);
        let traj = run(&State::at_rest(u), &ops, &params, &cfg).unwrap();
        assert_eq!(traj.accepted_steps, 1000);
        let e0 = traj.first().snapshot.energy;
        for s in &traj.samples {
            assert!((s.snapshot.energy - e0).abs() / e0 < 1e-8);
        }
        assert!(dissipation_residual(&traj).unwrap() < 1e-8);
    }

    #[test]
    fn linear_conservative_step_is_reversible() {
        let params = ProblemParams {
            alpha: 0.0,
            r: 0.0,
            source: Source::Disabled,
            ..ProblemParams::default()
        };
        let ops = setup(20, params);
        let u = ops.mesh().interpolate(|x| x * (1.0 - 0.5 * x));
        let v = ops.mesh().interpolate(|x| (3.0 * x).cos() - 1.0);
        let start = State::new(0.0, u, v).unwrap();
        let cfg = SimConfig::default();
        let fwd = step(&start, 0.05, &ops, &params, &cfg).unwrap().state;
        let back = step(&fwd, -0.05, &ops, &params, &cfg).unwrap().state;
        for (a, b) in back.u.iter().chain(&back.v).zip(start.u.iter().chain(&start.v)) {
            assert!((a - b).abs() < 10.0 * cfg.newton_tol, "{a} vs {b}");
        }
    }

    #[test]
    fn damped_steps_do_not_increase_energy() {
        let params = ProblemParams {
            m: 3.0,
            ..ProblemParams::default()
        };
        let ops = setup(24, params);
        let u = ops.mesh().interpolate(|x| 0.8 * x);
        let v = ops.mesh().interpolate(|x| (4.0 * x).sin());
        let cfg = SimConfig {
            t_end: 3.0,
            ..SimConfig::default()
        };
        let traj = run(&State::new(0.0, u, v).unwrap(), &ops, &params, &cfg).unwrap();
        assert_eq!(traj.termination, Termination::Completed);
        for w in traj.samples.windows(2) {
            let (e0, e1) = (w[0].snapshot.energy, w[1].snapshot.energy);
            assert!(e1 <= e0 + cfg.newton_tol * e0.abs().max(1.0), "{e0} -> {e1}");
        }
        for w in traj.samples.windows(2) {
            assert!(w[1].snapshot.t > w[0].snapshot.t);
            assert!(w[1].diss_interior >= w[0].diss_interior);
            assert!(w[1].diss_boundary >= w[0].diss_boundary);
        }
    }

    #[test]
    fn zero_run_stays_zero() {
        let params = ProblemParams::default();
        let ops = setup(8, params);
        let cfg = SimConfig {
            t_end: 1.0,
            ..SimConfig::default()
        };
        let traj = run(&State::zero(8), &ops, &params, &cfg).unwrap();
        assert_eq!(traj.termination, Termination::Completed);
        assert_eq!(traj.last().snapshot.t, 1.0);
        for s in &traj.samples {
            assert_eq!(s.snapshot.energy, 0.0);
            assert_eq!(s.theta, 0.0);
        }
    }

    #[test]
    fn snapshot_stride_keeps_final_row() {
        let params = ProblemParams::default();
        let ops = setup(8, params);
        let cfg = SimConfig {
            t_end: 0.105,
            snapshot_stride: 4,
            damped_start: 0,
            ..SimConfig::default()
        }
        .fixed_step(0.01);
        let traj = run(&State::zero(8), &ops, &params, &cfg).unwrap();
        // 11 steps: rows at 0, 4, 8 and the final 11th.
        assert_eq!(traj.accepted_steps, 11);
        assert_eq!(traj.samples.len(), 4);
        assert!((traj.last().snapshot.t - 0.105).abs() < 1e-15);
    }

    #[test]
    fn damped_start_needs_viscosity() {
        let cfg = SimConfig {
            t_end: 0.05,
            ..SimConfig::default()
        }
        .fixed_step(0.01);
        let u: Vec<f64> = (1..=8).map(|i| 0.1 * (i as f64 / 8.0)).collect();
        for alpha in [0.0, 1.0] {
            let params = ProblemParams {
                alpha,
                ..ProblemParams::default()
            };
            let ops = setup(8, params);
            let traj = run(&State::at_rest(u.clone()), &ops, &params, &cfg).unwrap();
            let steps: Vec<f64> = traj.samples[1..].iter().map(|s| s.snapshot.dt_used).collect();
            if alpha == 0.0 {
                assert!(steps.iter().all(|h| *h == 0.01), "{steps:?}");
            } else {
                assert_eq!(&steps[..2], &[0.01 * STARTUP_FRACTION; 2]);
                // The last step is clipped to land on t_end.
                let (last, middle) = steps[2..].split_last().unwrap();
                assert!(middle.iter().all(|h| *h == 0.01));
                assert!((last - 0.0075).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn backward_euler_keeps_zero_fixed() {
        let params = ProblemParams::default();
        let ops = setup(8, params);
        let out = step_with(
            Scheme::BackwardEuler,
            &State::zero(8),
            0.1,
            &ops,
            &params,
            &SimConfig::default(),
        )
        .unwrap();
        assert!(out.state.u.iter().chain(&out.state.v).all(|x| *x == 0.0));
    }

    #[test]
    fn invalid_config_is_rejected() {
        let params = ProblemParams::default();
        let ops = setup(4, params);
        let cfg = SimConfig {
            dt_min: 1.0,
            ..SimConfig::default()
        };
        assert!(run(&State::zero(4), &ops, &params, &cfg).is_err());
    }

    #[test]
    fn residual_needs_two_samples() {
        let traj = Trajectory {
            params: ProblemParams::default(),
            horizon: 1.0,
            samples: vec![Sample {
                snapshot: EnergySnapshot::default(),
                diss_interior: 0.0,
                diss_boundary: 0.0,
                int_grad_sq: 0.0,
                int_trace_sq: 0.0,
                int_cross: 0.0,
                theta: 0.0,
                terms: None,
            }],
            termination: Termination::Completed,
            final_state: None,
            accepted_steps: 0,
            rejected_steps: 0,
        };
        assert!(dissipation_residual(&traj).is_err());
    }
}
