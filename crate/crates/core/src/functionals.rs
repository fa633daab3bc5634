//! Scalar functionals of a state: the Nehari functional `I`, the potential
//! `J`, the total energy `E` and the Lyapunov functional `L`, together with
//! the algebra of the ray `λ ↦ J(λu)` and the stable/unstable set
//! classification.

use serde::{Deserialize, Serialize};

use crate::domain::{DiscreteOperators, ProblemParams, State};
use crate::error::{Error, Result};

/// Relative tolerance for `|I| ≈ 0`.
pub const NEHARI_REL_TOL: f64 = 1e-10;

/// One row of a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnergySnapshot {
    pub t: f64,
    /// `I = ‖∇u‖₂² − s‖u‖_p^p`.
    pub nehari: f64,
    /// `J = ½‖∇u‖₂² − (s/p)‖u‖_p^p`.
    pub potential: f64,
    /// `E = J + kinetic + boundary_kinetic`.
    pub energy: f64,
    /// `½‖u_t‖₂²`.
    pub kinetic: f64,
    /// `½‖u_t‖²_{2,Γ1}` (weighted by `1/a`).
    pub boundary_kinetic: f64,
    pub grad_sq: f64,
    /// `‖u‖_p^p`.
    pub lp_term: f64,
    /// `u(1)`.
    pub trace_u: f64,
    pub dt_used: f64,
}

impl EnergySnapshot {
    pub fn nehari_tolerance(&self) -> f64 {
        nehari_tolerance(self.grad_sq, self.lp_term)
    }
}

pub fn nehari_tolerance(grad_sq: f64, lp_term: f64) -> f64 {
    NEHARI_REL_TOL * grad_sq.max(lp_term)
}

/// Evaluates the energy functionals at `state`. `s` in the docs above is the
/// source sign of `params.source`.
pub fn energy_snapshot(state: &State, ops: &DiscreteOperators, params: &ProblemParams) -> EnergySnapshot {
    let grad_sq = ops.grad_sq(&state.u);
    let lp_term = ops.lp_pow(&state.u);
    let kinetic = 0.5 * ops.mass.quad(&state.v);
    let vb = ops.trace(&state.v);
    let boundary_kinetic = 0.5 * ops.boundary_weight * vb * vb;
    let s = params.source.sign();
    let potential = 0.5 * grad_sq - s * lp_term / params.p;
    EnergySnapshot {
        t: state.t,
        nehari: grad_sq - s * lp_term,
        potential,
        energy: potential + kinetic + boundary_kinetic,
        kinetic,
        boundary_kinetic,
        grad_sq,
        lp_term,
        trace_u: ops.trace(&state.u),
        dt_used: 0.0,
    }
}

/// `‖∇u‖₂²` and `‖u‖_p^p` of a field; everything on the ray `λu` follows
/// from these two numbers by homogeneity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub grad_sq: f64,
    pub lp_term: f64,
    pub p: f64,
}

impl Ray {
    pub fn of(u: &[f64], ops: &DiscreteOperators) -> Result<Self> {
        ops.check_dim(u)?;
        let ray = Ray {
            grad_sq: ops.grad_sq(u),
            lp_term: ops.lp_pow(u),
            p: ops.exponent(),
        };
        ray.check()?;
        Ok(ray)
    }

    fn check(&self) -> Result<()> {
        if !(self.p > 2.0) {
            return Err(Error::InvalidParams("p must exceed 2".into()));
        }
        if !(self.grad_sq > 0.0 && self.lp_term > 0.0) {
            return Err(Error::DegenerateField);
        }
        Ok(())
    }

    /// `J(λu)` for the standard source.
    pub fn potential_at(&self, lambda: f64) -> f64 {
        0.5 * lambda * lambda * self.grad_sq - lambda.powf(self.p) * self.lp_term / self.p
    }

    /// `I(λu)` for the standard source.
    pub fn nehari_at(&self, lambda: f64) -> f64 {
        lambda * lambda * self.grad_sq - lambda.powf(self.p) * self.lp_term
    }

    /// Unique maximizer of `λ ↦ J(λu)`.
    pub fn lambda_star(&self) -> f64 {
        (self.grad_sq / self.lp_term).powf(1.0 / (self.p - 2.0))
    }

    /// `max_λ J(λu) = ((p−2)/(2p)) (‖∇u‖₂/‖u‖_p)^(2p/(p−2))`.
    pub fn max_potential(&self) -> f64 {
        let p = self.p;
        let ratio = self.grad_sq.sqrt() / self.lp_term.powf(1.0 / p);
        (p - 2.0) / (2.0 * p) * ratio.powf(2.0 * p / (p - 2.0))
    }
}

/// Maximizer `λ*` of `λ ↦ J(λu)`; `λ* u` lies on the Nehari manifold.
pub fn lambda_star(u: &[f64], ops: &DiscreteOperators) -> Result<f64> {
    Ok(Ray::of(u, ops)?.lambda_star())
}

/// `max_{λ ≥ 0} J(λu)`, a scale-free quantity bounded below by the well
/// depth.
pub fn ray_max_j(u: &[f64], ops: &DiscreteOperators) -> Result<f64> {
    Ok(Ray::of(u, ops)?.max_potential())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Region {
    /// `I > 0`, or the zero state.
    NPlusInterior,
    /// `I = 0` within tolerance, `u ≠ 0`.
    Nehari,
    /// `I < 0`.
    NMinus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SetMembership {
    pub region: Region,
    pub in_stable_w: bool,
    pub in_unstable_u: bool,
    /// The strict gate `E < d`, recorded separately from `J ≤ d`.
    pub e_below_d: bool,
}

/// Classifies from precomputed functionals. `is_zero` marks the zero state.
pub fn membership(snap: &EnergySnapshot, d: f64, is_zero: bool) -> SetMembership {
    let tol = snap.nehari_tolerance();
    let region = if is_zero || snap.nehari > tol {
        Region::NPlusInterior
    } else if snap.nehari < -tol {
        Region::NMinus
    } else {
        Region::Nehari
    };
    let j_le_d = snap.potential <= d;
    SetMembership {
        region,
        in_stable_w: region == Region::NPlusInterior && j_le_d,
        in_unstable_u: region == Region::NMinus && j_le_d,
        e_below_d: snap.energy < d,
    }
}

pub fn classify_state(state: &State, d: f64, ops: &DiscreteOperators, params: &ProblemParams) -> SetMembership {
    let snap = energy_snapshot(state, ops, params);
    let is_zero = state.u.iter().all(|x| *x == 0.0);
    membership(&snap, d, is_zero)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetSet {
    #[default]
    None,
    StableW,
    UnstableU,
}

const STABLE_HALVINGS: usize = 60;

/// Scaling `λ` that puts `λu` (at rest) in the requested set with `J(λu) < d`.
///
/// * `UnstableU`: `λ_d (1 + margin)`, where `λ_d ≥ λ*` solves `J(λu) = d`
///   (or `λ_d = λ*` when the ray never reaches `d`).
/// * `StableW`: `(1 − margin) λ*`, halved until `J(λu) < d`.
pub fn scale_to_set(u: &[f64], target: TargetSet, margin: f64, d: f64, ops: &DiscreteOperators) -> Result<f64> {
    let ray = Ray::of(u, ops)?;
    scale_ray_to_set(&ray, target, margin, d)
}

pub fn scale_ray_to_set(ray: &Ray, target: TargetSet, margin: f64, d: f64) -> Result<f64> {
    ray.check()?;
    if !(margin > 0.0 && margin < 1.0) {
        return Err(Error::InvalidParams(format!("margin {margin} must lie in (0, 1)")));
    }
    if !(d > 0.0 && d.is_finite()) {
        return Err(Error::InvalidParams(format!("well depth {d} must be positive")));
    }
    let lstar = ray.lambda_star();
    match target {
        TargetSet::None => Ok(1.0),
        TargetSet::UnstableU => Ok(unstable_root(ray, lstar, d) * (1.0 + margin)),
        TargetSet::StableW => {
            let mut lambda = (1.0 - margin) * lstar;
            for _ in 0..STABLE_HALVINGS {
                if ray.potential_at(lambda) < d {
                    return Ok(lambda);
                }
                lambda *= 0.5;
            }
            Err(Error::NoAdmissibleScaling(format!(
                "J(λu) >= d after {STABLE_HALVINGS} halvings"
            )))
        }
    }
}

/// Root of `J(λu) = d` on `[λ*, ∞)`, where `J` decreases strictly and
/// without bound.
fn unstable_root(ray: &Ray, lstar: f64, d: f64) -> f64 {
    if ray.potential_at(lstar) <= d {
        return lstar;
    }
    let mut lo = lstar;
    let mut hi = 2.0 * lstar;
    while ray.potential_at(hi) >= d {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if ray.potential_at(mid) >= d {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

/// `L = E + ε ∫u_t u + ε ∫_{Γ1} u u_t + (εα/2)‖∇u‖₂²`.
pub fn lyapunov_l(state: &State, eps: f64, ops: &DiscreteOperators, params: &ProblemParams) -> f64 {
    let snap = energy_snapshot(state, ops, params);
    let cross = cross_term(state, ops);
    lyapunov_from_parts(snap.energy, cross, snap.grad_sq, eps, params.alpha)
}

/// `∫ u u_t dx + ∫_{Γ1} u u_t dσ` with the boundary weight `1/a`.
pub fn cross_term(state: &State, ops: &DiscreteOperators) -> f64 {
    ops.mass.bilinear(&state.u, &state.v) + ops.boundary_weight * ops.trace(&state.u) * ops.trace(&state.v)
}

pub fn lyapunov_from_parts(energy: f64, cross: f64, grad_sq: f64, eps: f64, alpha: f64) -> f64 {
    energy + eps * cross + 0.5 * eps * alpha * grad_sq
}
