//! Well constants of the discrete problem: the best Sobolev constant `C*`,
//! the potential well depth `d` and the Nehari distance `β`.
//!
//! `C*⁻¹ = min ‖∇u‖₂` over `‖u‖_p = 1`, `u(0) = 0`. For `p = 2` this is a
//! generalized eigenproblem of the stiffness/mass pencil and is solved by
//! inverse power iteration. For `p > 2` the quotient `‖∇u‖₂² / ‖u‖_p²` is
//! minimized by projected gradient descent where the gradient is taken in the
//! `H¹` (stiffness) inner product, which keeps the iteration count independent
//! of the mesh size.
//!
//! All constants are relative to the mesh they were computed on.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{validate_params, DiscreteOperators, Mesh1D, ProblemParams, Purpose};
use crate::error::{Error, Result};
use crate::functionals::Ray;

/// Number of consecutive small-decrease iterations that signals convergence.
const STALL_WINDOW: usize = 25;
const ARMIJO_C: f64 = 1e-4;
const MIN_STEP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSettings {
    /// Relative objective decrease that counts as stalled.
    pub tol: f64,
    pub max_iters: usize,
    /// Random restarts for the direct well-depth check (the Sobolev
    /// minimizer is always added on top of these).
    pub restarts: usize,
    pub seed: u64,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iters: 50_000,
            restarts: 20,
            seed: 20_240_521,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SobolevResult {
    pub c_star: f64,
    /// `H¹` size of the final projected gradient, relative to `‖∇u‖₂`.
    pub residual: f64,
    pub iterations: usize,
    /// Minimizer on the free nodes, normalized to `‖u‖_p = 1`, `u(1) > 0`.
    pub minimizer: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WellConstants {
    pub c_star: f64,
    pub d: f64,
    pub beta: f64,
    pub p: f64,
    pub mesh_size: usize,
    pub residual: f64,
    /// Minimum of `max_λ J(λu)` over restarted Nehari descents.
    pub d_direct: f64,
}

/// Best Sobolev constant on `mesh` for exponent `p ≥ 2`.
pub fn best_sobolev_constant(mesh: &Mesh1D, p: f64, settings: &OptimizerSettings) -> Result<SobolevResult> {
    if !(p.is_finite() && p >= 2.0) {
        return Err(Error::InvalidParams(format!("p = {p} must be >= 2")));
    }
    let params = ProblemParams {
        p,
        ..ProblemParams::default()
    };
    let ops = DiscreteOperators::assemble(mesh, &params);
    if p == 2.0 {
        inverse_power(&ops, settings)
    } else {
        projected_descent(&ops, settings)
    }
}

fn normalize_lp(ops: &DiscreteOperators, u: &mut [f64]) {
    let norm = ops.lp_pow(u).powf(1.0 / ops.exponent());
    let sign = if ops.trace(u) < 0.0 { -1.0 } else { 1.0 };
    for x in u.iter_mut() {
        *x *= sign / norm;
    }
}

fn inverse_power(ops: &DiscreteOperators, settings: &OptimizerSettings) -> Result<SobolevResult> {
    let mut u = ops.mesh().interpolate(|x| x);
    normalize_lp(ops, &mut u);
    let mut rayleigh = ops.grad_sq(&u);
    let mut stalled = 0;
    for iter in 1..=settings.max_iters {
        let rhs = ops.mass.apply(&u);
        let mut next = ops.stiffness.solve(&rhs).ok_or(Error::NotConverged {
            iterations: iter,
            best_objective: rayleigh,
            best_iterate: u.clone(),
        })?;
        normalize_lp(ops, &mut next);
        let next_rayleigh = ops.grad_sq(&next);
        let decrease = (rayleigh - next_rayleigh) / rayleigh;
        u = next;
        rayleigh = next_rayleigh;
        stalled = if decrease.abs() < settings.tol { stalled + 1 } else { 0 };
        if stalled >= STALL_WINDOW {
            let residual = eigen_residual(ops, &u, rayleigh);
            return Ok(SobolevResult {
                c_star: 1.0 / rayleigh.sqrt(),
                residual,
                iterations: iter,
                minimizer: u,
            });
        }
    }
    Err(Error::NotConverged {
        iterations: settings.max_iters,
        best_objective: rayleigh,
        best_iterate: u,
    })
}

/// `‖K⁻¹(Ku − λMu)‖_K / ‖u‖_K`.
fn eigen_residual(ops: &DiscreteOperators, u: &[f64], lambda: f64) -> f64 {
    let ku = ops.stiffness.apply(u);
    let mu = ops.mass.apply(u);
    let r: Vec<f64> = ku.iter().zip(&mu).map(|(a, b)| a - lambda * b).collect();
    let z = ops.stiffness.solve(&r).unwrap_or(r);
    (ops.stiffness.quad(&z) / ops.stiffness.quad(u)).sqrt()
}

/// `H¹`-preconditioned gradient of `R(u) = ‖∇u‖₂² / ‖u‖_p²` at `‖u‖_p = 1`,
/// halved: `u − R(u) K⁻¹ f(u)` with `f(u) = |u|^(p−2) u` as a load vector.
fn sobolev_direction(ops: &DiscreteOperators, u: &[f64], g: f64) -> Option<Vec<f64>> {
    let load = ops.source_load(u);
    let w = ops.stiffness.solve(&load)?;
    Some(u.iter().zip(&w).map(|(a, b)| a - g * b).collect())
}

fn projected_descent(ops: &DiscreteOperators, settings: &OptimizerSettings) -> Result<SobolevResult> {
    let mut u = ops.mesh().interpolate(|x| x);
    normalize_lp(ops, &mut u);
    let mut g = ops.grad_sq(&u);
    let mut stalled = 0;
    let mut step: f64 = 1.0;
    let mut residual;
    let not_converged = |iterations, g, u: &[f64]| Error::NotConverged {
        iterations,
        best_objective: g,
        best_iterate: u.to_vec(),
    };
    for iter in 1..=settings.max_iters {
        let dir = sobolev_direction(ops, &u, g).ok_or_else(|| not_converged(iter, g, &u))?;
        // Directional derivative of R along -dir is -2 dirᵀK dir.
        let slope = 2.0 * ops.stiffness.quad(&dir);
        residual = (ops.stiffness.quad(&dir) / g).sqrt();
        step = (2.0 * step).min(1.0);
        let mut accepted = None;
        while step >= MIN_STEP {
            let mut trial: Vec<f64> = u.iter().zip(&dir).map(|(a, b)| a - step * b).collect();
            normalize_lp(ops, &mut trial);
            let gt = ops.grad_sq(&trial);
            if gt.is_finite() && gt <= g - ARMIJO_C * step * slope {
                accepted = Some((trial, gt));
                break;
            }
            step *= 0.5;
        }
        let decrease = match accepted {
            Some((trial, gt)) => {
                let dec = (g - gt) / g;
                u = trial;
                g = gt;
                dec
            }
            None => {
                // No representable descent left: stationary to round-off.
                step = 1.0;
                0.0
            }
        };
        stalled = if decrease < settings.tol { stalled + 1 } else { 0 };
        if stalled >= STALL_WINDOW {
            normalize_lp(ops, &mut u);
            let g = ops.grad_sq(&u);
            return Ok(SobolevResult {
                c_star: 1.0 / g.sqrt(),
                residual,
                iterations: iter,
                minimizer: u,
            });
        }
    }
    Err(not_converged(settings.max_iters, g, &u))
}

/// `d = ((p−2)/(2p)) C*^(−2p/(p−2))`.
pub fn well_depth(c_star: f64, p: f64) -> f64 {
    (p - 2.0) / (2.0 * p) * c_star.powf(-2.0 * p / (p - 2.0))
}

/// `β = sqrt(2dp/(p−2))`.
pub fn nehari_distance(d: f64, p: f64) -> f64 {
    (2.0 * d * p / (p - 2.0)).sqrt()
}

/// Computes `C*`, `d`, `β` and the direct well-depth cross-check.
pub fn well_constants(mesh: &Mesh1D, p: f64, settings: &OptimizerSettings) -> Result<WellConstants> {
    let params = ProblemParams {
        p,
        ..ProblemParams::default()
    };
    validate_params(&params, Purpose::WellDepth).into_result()?;
    let sobolev = best_sobolev_constant(mesh, p, settings)?;
    let d = well_depth(sobolev.c_star, p);
    let beta = nehari_distance(d, p);
    let ops = DiscreteOperators::assemble(mesh, &params);
    let d_direct = direct_well_depth(&ops, &sobolev.minimizer, settings)?;
    Ok(WellConstants {
        c_star: sobolev.c_star,
        d,
        beta,
        p,
        mesh_size: mesh.n_elements(),
        residual: sobolev.residual,
        d_direct,
    })
}

/// Like [`well_constants`] but also returns the Sobolev minimizer, which the
/// scenario builder uses as an initial profile.
pub fn well_constants_with_minimizer(
    mesh: &Mesh1D,
    p: f64,
    settings: &OptimizerSettings,
) -> Result<(WellConstants, Vec<f64>)> {
    let params = ProblemParams {
        p,
        ..ProblemParams::default()
    };
    validate_params(&params, Purpose::WellDepth).into_result()?;
    let sobolev = best_sobolev_constant(mesh, p, settings)?;
    let d = well_depth(sobolev.c_star, p);
    let ops = DiscreteOperators::assemble(mesh, &params);
    let d_direct = direct_well_depth(&ops, &sobolev.minimizer, settings)?;
    Ok((
        WellConstants {
            c_star: sobolev.c_star,
            d,
            beta: nehari_distance(d, p),
            p,
            mesh_size: mesh.n_elements(),
            residual: sobolev.residual,
            d_direct,
        },
        sobolev.minimizer,
    ))
}

/// Random nodal field smoothed by one damped Jacobi sweep on the stiffness
/// operator.
fn restart_profile(ops: &DiscreteOperators, seed: u64, index: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(index as u64));
    let u: Vec<f64> = (0..ops.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let ku = ops.stiffness.apply(&u);
    const OMEGA: f64 = 2.0 / 3.0;
    u.iter()
        .zip(&ku)
        .zip(&ops.stiffness.diag)
        .map(|((x, kx), dg)| x - OMEGA * kx / dg)
        .collect()
}

/// Descends `J` on the Nehari manifold from `start` and returns the final
/// `max_λ J(λu)`. Steps go along the `H¹` gradient of `J`, followed by the
/// radial projection `u ↦ λ*(u) u`.
fn nehari_descent(ops: &DiscreteOperators, start: Vec<f64>, settings: &OptimizerSettings) -> Option<f64> {
    let project = |u: &mut Vec<f64>| -> Option<f64> {
        let ray = Ray::of(u, ops).ok()?;
        let l = ray.lambda_star();
        u.iter_mut().for_each(|x| *x *= l);
        Some(ray.max_potential())
    };
    let mut u = start;
    let mut level = project(&mut u)?;
    let mut stalled = 0;
    let mut step: f64 = 1.0;
    let budget = settings.max_iters.min(5_000);
    for _ in 0..budget {
        // On the Nehari manifold: J'(u) = Ku − f(u); H¹ gradient u − K⁻¹f(u).
        let w = ops.stiffness.solve(&ops.source_load(&u))?;
        let dir: Vec<f64> = u.iter().zip(&w).map(|(a, b)| a - b).collect();
        step = (2.0 * step).min(1.0);
        let mut improved = None;
        while step >= MIN_STEP {
            let mut trial: Vec<f64> = u.iter().zip(&dir).map(|(a, b)| a - step * b).collect();
            if let Some(lt) = project(&mut trial) {
                if lt < level {
                    improved = Some((trial, lt));
                    break;
                }
            }
            step *= 0.5;
        }
        let decrease = match improved {
            Some((trial, lt)) => {
                let dec = (level - lt) / level;
                u = trial;
                level = lt;
                dec
            }
            None => {
                step = 1.0;
                0.0
            }
        };
        stalled = if decrease < settings.tol { stalled + 1 } else { 0 };
        if stalled >= STALL_WINDOW {
            break;
        }
    }
    Some(level)
}

fn direct_well_depth(ops: &DiscreteOperators, minimizer: &[f64], settings: &OptimizerSettings) -> Result<f64> {
    let mut starts: Vec<Vec<f64>> = (0..settings.restarts)
        .map(|i| restart_profile(ops, settings.seed, i))
        .collect();
    starts.push(minimizer.to_vec());
    let levels: Vec<Option<f64>> = starts
        .into_par_iter()
        .map(|start| nehari_descent(ops, start, settings))
        .collect();
    levels
        .into_iter()
        .flatten()
        .filter(|x| x.is_finite())
        .reduce(f64::min)
        .ok_or(Error::NotConverged {
            iterations: 0,
            best_objective: f64::NAN,
            best_iterate: minimizer.to_vec(),
        })
}

/// `C*^p ((2p/(p−2)) E0)^((p−2)/2) < 1`, equivalent to `E0 < d`.
///
/// Values within a few ulps of 1 count as equality, so `E0 = d` is rejected
/// even when rounding lands the left side just below 1.
pub fn initial_energy_gate(e0: f64, constants: &WellConstants) -> bool {
    let p = constants.p;
    let lhs = constants.c_star.powf(p) * (2.0 * p / (p - 2.0) * e0).powf((p - 2.0) / 2.0);
    lhs < 1.0 - 8.0 * f64::EPSILON
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn settings() -> OptimizerSettings {
        OptimizerSettings::default()
    }

    #[test]
    fn p2_matches_quarter_wave_eigenvalue() {
        let mesh = Mesh1D::new(128, 1.0).unwrap();
        let res = best_sobolev_constant(&mesh, 2.0, &settings()).unwrap();
        assert!((res.c_star - 2.0 / PI).abs() < 1e-4, "{}", res.c_star);
        assert!(res.residual < 1e-6);
    }

    #[test]
    fn p2_minimizer_is_the_quarter_sine() {
        let mut errs = Vec::new();
        for n in [32, 64, 128] {
            let mesh = Mesh1D::new(n, 1.0).unwrap();
            let res = best_sobolev_constant(&mesh, 2.0, &settings()).unwrap();
            // sin(πx/2) has L2 norm 1/sqrt(2).
            let scale = 2.0f64.sqrt();
            let err = mesh
                .free_nodes()
                .iter()
                .zip(&res.minimizer)
                .map(|(x, u)| (u - scale * (PI * x / 2.0).sin()).abs())
                .fold(0.0, f64::max);
            errs.push(err);
        }
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!((3.0..5.0).contains(&ratio), "ratio {ratio} errs {errs:?}");
        }
    }

    #[test]
    fn minimizer_has_unit_lp_norm() {
        for p in [2.0, 3.0, 4.0, 6.0] {
            let mesh = Mesh1D::new(64, 1.0).unwrap();
            let res = best_sobolev_constant(&mesh, p, &settings()).unwrap();
            let ops = DiscreteOperators::assemble(
                &mesh,
                &ProblemParams {
                    p,
                    ..Default::default()
                },
            );
            let norm = ops.lp_pow(&res.minimizer).powf(1.0 / p);
            assert!((norm - 1.0).abs() < 1e-12, "p={p} norm={norm}");
        }
    }

    #[test]
    fn p4_constant_converges_at_second_order() {
        let c: Vec<f64> = [32, 64, 128, 256]
            .iter()
            .map(|&n| {
                best_sobolev_constant(&Mesh1D::new(n, 1.0).unwrap(), 4.0, &settings())
                    .unwrap()
                    .c_star
            })
            .collect();
        let diffs: Vec<f64> = c.windows(2).map(|w| w[0] - w[1]).collect();
        for w in diffs.windows(2) {
            let ratio = w[0] / w[1];
            assert!((3.5..4.5).contains(&ratio), "ratio {ratio} c {c:?}");
        }
        // Nested spaces: the discrete minimum can only drop, so C* grows.
        // (C*⁻¹ = min ‖∇u‖ over a larger space is smaller.)
        for w in c.windows(2) {
            assert!(w[1] >= w[0] - 1e-12);
        }
    }

    #[test]
    fn plug_in_arithmetic() {
        assert_eq!(well_depth(1.0, 4.0), 0.25);
        assert_eq!(nehari_distance(0.25, 4.0), 1.0);
    }

    #[test]
    fn well_constants_cross_check() {
        let mesh = Mesh1D::new(128, 1.0).unwrap();
        let wc = well_constants(&mesh, 4.0, &settings()).unwrap();
        assert!(wc.d > 0.0 && wc.beta > 0.0);
        assert!((wc.d_direct - wc.d).abs() / wc.d <= 0.01);
        assert_eq!(wc.beta.to_bits(), (2.0 * wc.d * 4.0 / 2.0).sqrt().to_bits());
        assert_eq!(wc.d.to_bits(), well_depth(wc.c_star, 4.0).to_bits());
        assert!(well_constants(&mesh, 2.0, &settings()).is_err());
    }

    #[test]
    fn gate_examples() {
        let wc = WellConstants {
            c_star: 0.8,
            d: well_depth(0.8, 4.0),
            beta: nehari_distance(well_depth(0.8, 4.0), 4.0),
            p: 4.0,
            mesh_size: 0,
            residual: 0.0,
            d_direct: 0.0,
        };
        assert!(initial_energy_gate(0.0, &wc));
        assert!(initial_energy_gate(wc.d * (1.0 - 1e-9), &wc));
        assert!(!initial_energy_gate(wc.d * (1.0 + 1e-9), &wc));
        assert!(!initial_energy_gate(wc.d, &wc));
    }

    #[test]
    fn restarts_are_deterministic() {
        let mesh = Mesh1D::new(64, 1.0).unwrap();
        let a = well_constants(&mesh, 3.0, &settings()).unwrap();
        let b = well_constants(&mesh, 3.0, &settings()).unwrap();
        assert_eq!(a, b);
        assert_relative_eq!(a.d_direct, a.d, max_relative = 0.01);
    }
}
