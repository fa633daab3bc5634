//! Problem parameters, the 1-D mesh of `(0, 1)` and the finite element
//! operators. `Γ0 = {x = 0}` carries the Dirichlet condition and is eliminated;
//! `Γ1 = {x = 1}` carries the dynamic boundary condition and is the last free
//! node.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::GaussRule;
use crate::tridiag::SymTridiag;

/// Sign of the source term `f(u) = s |u|^(p-2) u`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    /// The blow-up term `+|u|^(p-2) u`.
    #[default]
    Standard,
    /// `f = 0`.
    Disabled,
    /// The absorbing term `-|u|^(p-2) u`.
    Negated,
}

impl Source {
    pub fn sign(self) -> f64 {
        match self {
            Source::Standard => 1.0,
            Source::Disabled => 0.0,
            Source::Negated => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemParams {
    /// Source exponent.
    pub p: f64,
    /// Boundary damping exponent.
    pub m: f64,
    /// Kelvin–Voigt coefficient.
    pub alpha: f64,
    /// Boundary damping coefficient.
    pub r: f64,
    /// Boundary mass coefficient; the boundary inertia is `1/a`.
    pub a: f64,
    pub source: Source,
}

impl Default for ProblemParams {
    fn default() -> Self {
        Self {
            p: 4.0,
            m: 2.0,
            alpha: 1.0,
            r: 1.0,
            a: 1.0,
            source: Source::Standard,
        }
    }
}

/// What the parameters are about to be used for; each purpose adds rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Simulate,
    WellDepth,
    BlowUpAnalysis,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    /// Name of the offending parameter.
    pub field: &'static str,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn messages(&self) -> Vec<&str> {
        self.violations.iter().map(|v| v.message.as_str()).collect()
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_ok() {
            Ok(())
        } else {
            Err(Error::InvalidParams(self.messages().join("; ")))
        }
    }
}

/// Checks the admissible parameter window. In one space dimension the trace
/// critical exponent is infinite, so only the lower bounds on `p` and `m`
/// are active.
pub fn validate_params(params: &ProblemParams, purpose: Purpose) -> ValidationReport {
    let mut violations = Vec::new();
    let mut push = |field: &'static str, message: &str| {
        violations.push(Violation {
            field,
            message: message.to_string(),
        })
    };
    let ProblemParams { p, m, alpha, r, a, .. } = *params;
    if !(p.is_finite() && p >= 2.0) {
        push("p", "p must be ≥ 2");
    }
    if !(m.is_finite() && m >= 2.0) {
        push("m", "m must be ≥ 2");
    }
    if !(alpha.is_finite() && alpha >= 0.0) {
        push("alpha", "alpha must be ≥ 0");
    }
    if !(r.is_finite() && r >= 0.0) {
        push("r", "r must be ≥ 0");
    }
    if !(a.is_finite() && a > 0.0) {
        push("a", "a must be > 0");
    }
    if matches!(purpose, Purpose::WellDepth | Purpose::BlowUpAnalysis) && !(p > 2.0) {
        push("p", "p must exceed 2");
    }
    if purpose == Purpose::BlowUpAnalysis && m != 2.0 {
        push("m", "m must equal 2");
    }
    ValidationReport { violations }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh1D {
    nodes: Vec<f64>,
    element_sizes: Vec<f64>,
}

impl Mesh1D {
    /// Builds a mesh of `(0, 1)`. `grading = 1` is uniform; `grading > 1`
    /// shrinks each element by that ratio going toward `x = 1`.
    pub fn new(n_elements: usize, grading: f64) -> Result<Self> {
        if n_elements < 2 {
            return Err(Error::TooFewElements(n_elements));
        }
        if !(grading.is_finite() && grading >= 1.0) {
            return Err(Error::InvalidGrading(grading));
        }
        let mut sizes: Vec<f64> = if grading == 1.0 {
            vec![1.0 / n_elements as f64; n_elements]
        } else {
            let q = 1.0 / grading;
            let first = (1.0 - q) / (1.0 - q.powi(n_elements as i32));
            (0..n_elements).map(|i| first * q.powi(i as i32)).collect()
        };
        let mut nodes = Vec::with_capacity(n_elements + 1);
        nodes.push(0.0);
        if grading == 1.0 {
            nodes.extend((1..n_elements).map(|i| i as f64 / n_elements as f64));
        } else {
            let mut x = 0.0;
            for h in &sizes[..n_elements - 1] {
                x += h;
                nodes.push(x);
            }
        }
        nodes.push(1.0);
        for (i, h) in sizes.iter_mut().enumerate() {
            *h = nodes[i + 1] - nodes[i];
        }
        Ok(Self {
            nodes,
            element_sizes: sizes,
        })
    }

    /// Builds a mesh from explicit node positions.
    pub fn from_nodes(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 3 {
            return Err(Error::TooFewElements(nodes.len().saturating_sub(1)));
        }
        if nodes[0] != 0.0 || *nodes.last().unwrap() != 1.0 {
            return Err(Error::InvalidParams("mesh must span [0, 1]".into()));
        }
        let element_sizes: Vec<f64> = nodes.windows(2).map(|w| w[1] - w[0]).collect();
        if element_sizes.iter().any(|h| !(*h > 0.0)) {
            return Err(Error::InvalidParams("mesh nodes must be strictly increasing".into()));
        }
        Ok(Self { nodes, element_sizes })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn element_sizes(&self) -> &[f64] {
        &self.element_sizes
    }

    pub fn n_elements(&self) -> usize {
        self.element_sizes.len()
    }

    /// Number of unknowns after eliminating the Dirichlet node.
    pub fn n_free(&self) -> usize {
        self.n_elements()
    }

    /// Coordinates of the free nodes (all but `x = 0`).
    pub fn free_nodes(&self) -> &[f64] {
        &self.nodes[1..]
    }

    /// Uniform bisection of every element.
    pub fn refine(&self) -> Self {
        let mut nodes = Vec::with_capacity(2 * self.nodes.len() - 1);
        for w in self.nodes.windows(2) {
            nodes.push(w[0]);
            nodes.push(0.5 * (w[0] + w[1]));
        }
        nodes.push(1.0);
        Self::from_nodes(nodes).expect("bisection keeps a valid mesh")
    }

    /// Nodal interpolant of `f` on the free nodes.
    pub fn interpolate(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        self.free_nodes().iter().map(|&x| f(x)).collect()
    }
}

/// Which norm (or trace quantity) to evaluate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Norm {
    L2,
    H1Semi,
    Lp(f64),
    /// `‖u‖_{2,Γ1}` with the boundary mass weight `1/a`.
    TraceL2,
    /// `‖u‖^m_{m,Γ1} = |u(1)|^m` (already raised to the power `m`).
    TraceAbs(f64),
}

/// Mass, stiffness and boundary-mass operators restricted to the free nodes.
#[derive(Debug, Clone)]
pub struct DiscreteOperators {
    mesh: Mesh1D,
    pub mass: SymTridiag,
    pub stiffness: SymTridiag,
    pub boundary_mass: SymTridiag,
    pub gamma1_index: usize,
    /// Boundary mass weight `1/a`.
    pub boundary_weight: f64,
    p: f64,
    rule: GaussRule,
}

impl DiscreteOperators {
    /// Assembles P1 operators with exact element integrals; the row and
    /// column of the Dirichlet node are dropped.
    pub fn assemble(mesh: &Mesh1D, params: &ProblemParams) -> Self {
        let n = mesh.n_free();
        let mut mass = SymTridiag::zeros(n);
        let mut stiffness = SymTridiag::zeros(n);
        // Element e spans nodes e and e + 1, i.e. free indices e - 1 and e.
        for (e, &h) in mesh.element_sizes().iter().enumerate() {
            let right = e;
            stiffness.diag[right] += 1.0 / h;
            mass.diag[right] += h / 3.0;
            if e > 0 {
                let left = e - 1;
                stiffness.diag[left] += 1.0 / h;
                mass.diag[left] += h / 3.0;
                stiffness.off[left] -= 1.0 / h;
                mass.off[left] += h / 6.0;
            }
        }
        let gamma1_index = n - 1;
        let boundary_weight = 1.0 / params.a;
        let mut boundary_mass = SymTridiag::zeros(n);
        boundary_mass.diag[gamma1_index] = boundary_weight;
        Self {
            mesh: mesh.clone(),
            mass,
            stiffness,
            boundary_mass,
            gamma1_index,
            boundary_weight,
            p: params.p,
            rule: GaussRule::for_exponent(params.p),
        }
    }

    pub fn mesh(&self) -> &Mesh1D {
        &self.mesh
    }

    pub fn dim(&self) -> usize {
        self.mass.dim()
    }

    /// The exponent the cached quadrature rule was built for.
    pub fn exponent(&self) -> f64 {
        self.p
    }

    pub fn check_dim(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: u.len(),
            });
        }
        Ok(())
    }

    pub fn trace(&self, u: &[f64]) -> f64 {
        u[self.gamma1_index]
    }

    pub fn norm(&self, u: &[f64], kind: Norm) -> Result<f64> {
        self.check_dim(u)?;
        Ok(match kind {
            Norm::L2 => self.mass.quad(u).max(0.0).sqrt(),
            Norm::H1Semi => self.grad_sq(u).sqrt(),
            Norm::Lp(q) => {
                if q == self.p {
                    self.lp_pow(u).powf(1.0 / q)
                } else {
                    lp_pow_with(&self.mesh, &GaussRule::for_exponent(q), q, u).powf(1.0 / q)
                }
            }
            Norm::TraceL2 => self.trace(u).abs() * self.boundary_weight.sqrt(),
            Norm::TraceAbs(m) => self.trace(u).abs().powf(m),
        })
    }

    /// `‖∇u‖₂²`, summed element by element to avoid the cancellation in
    /// `uᵀKu` on strongly graded meshes.
    pub fn grad_sq(&self, u: &[f64]) -> f64 {
        let mut acc = 0.0;
        self.for_each_element(u, |_, h, ul, ur| {
            let du = ur - ul;
            acc += du * du / h;
        });
        acc
    }

    /// `‖u‖_p^p` for the assembled exponent, by Gauss quadrature of the
    /// piecewise-linear interpolant.
    pub fn lp_pow(&self, u: &[f64]) -> f64 {
        lp_pow_with(&self.mesh, &self.rule, self.p, u)
    }

    /// Load vector `∫ |u|^(p-2) u φ_i`.
    pub fn source_load(&self, u: &[f64]) -> Vec<f64> {
        let p = self.p;
        let mut load = vec![0.0; self.dim()];
        self.for_each_element(u, |e, h, ul, ur| {
            let (mut fl, mut fr) = (0.0, 0.0);
            for (&s, &w) in self.rule.points.iter().zip(&self.rule.weights) {
                let val = (1.0 - s) * ul + s * ur;
                let f = signed_pow(val, p - 1.0) * w * h;
                fl += f * (1.0 - s);
                fr += f * s;
            }
            if e > 0 {
                load[e - 1] += fl;
            }
            load[e] += fr;
        });
        load
    }

    /// Jacobian of [`Self::source_load`]: `(p-1) ∫ |u|^(p-2) φ_i φ_j`.
    pub fn source_jacobian(&self, u: &[f64]) -> SymTridiag {
        let p = self.p;
        let mut jac = SymTridiag::zeros(self.dim());
        self.for_each_element(u, |e, h, ul, ur| {
            let (mut ll, mut lr, mut rr) = (0.0, 0.0, 0.0);
            for (&s, &w) in self.rule.points.iter().zip(&self.rule.weights) {
                let val = (1.0 - s) * ul + s * ur;
                let g = (p - 1.0) * abs_pow(val, p - 2.0) * w * h;
                ll += g * (1.0 - s) * (1.0 - s);
                lr += g * (1.0 - s) * s;
                rr += g * s * s;
            }
            if e > 0 {
                jac.diag[e - 1] += ll;
                jac.off[e - 1] += lr;
            }
            jac.diag[e] += rr;
        });
        jac
    }

    /// Calls `f(element, h, u_left, u_right)` for every element, with the
    /// Dirichlet value at the left end of the first element.
    fn for_each_element(&self, u: &[f64], mut f: impl FnMut(usize, f64, f64, f64)) {
        for (e, &h) in self.mesh.element_sizes().iter().enumerate() {
            let ul = if e == 0 { 0.0 } else { u[e - 1] };
            f(e, h, ul, u[e]);
        }
    }
}

fn lp_pow_with(mesh: &Mesh1D, rule: &GaussRule, p: f64, u: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (e, &h) in mesh.element_sizes().iter().enumerate() {
        let ul = if e == 0 { 0.0 } else { u[e - 1] };
        let ur = u[e];
        let mut el = 0.0;
        for (&s, &w) in rule.points.iter().zip(&rule.weights) {
            el += w * abs_pow((1.0 - s) * ul + s * ur, p);
        }
        acc += el * h;
    }
    acc
}

/// `|x|^q`, with `0^0 = 1` avoided for the `p = 2` source Jacobian.
pub(crate) fn abs_pow(x: f64, q: f64) -> f64 {
    if q == 0.0 {
        1.0
    } else if q == 2.0 {
        x * x
    } else {
        x.abs().powf(q)
    }
}

/// `|x|^(q-1) x`.
pub(crate) fn signed_pow(x: f64, q: f64) -> f64 {
    if q == 1.0 {
        x
    } else if q == 3.0 {
        x * x * x
    } else {
        x.abs().powf(q - 1.0) * x
    }
}

/// Nodal displacement and velocity on the free nodes at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub t: f64,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl State {
    pub fn new(t: f64, u: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if u.len() != v.len() {
            return Err(Error::DimensionMismatch {
                expected: u.len(),
                got: v.len(),
            });
        }
        Ok(Self { t, u, v })
    }

    pub fn at_rest(u: Vec<f64>) -> Self {
        let v = vec![0.0; u.len()];
        Self { t: 0.0, u, v }
    }

    pub fn zero(n: usize) -> Self {
        Self::at_rest(vec![0.0; n])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params() -> ProblemParams {
        ProblemParams::default()
    }

    #[test]
    fn validation_windows() {
        let ok = ProblemParams {
            p: 4.0,
            m: 2.0,
            ..params()
        };
        assert!(validate_params(&ok, Purpose::BlowUpAnalysis).is_ok());

        let p2 = ProblemParams { p: 2.0, ..params() };
        assert!(validate_params(&p2, Purpose::Simulate).is_ok());
        let report = validate_params(&p2, Purpose::WellDepth);
        assert_eq!(report.messages(), vec!["p must exceed 2"]);

        let m3 = ProblemParams {
            p: 3.0,
            m: 3.0,
            ..params()
        };
        let report = validate_params(&m3, Purpose::BlowUpAnalysis);
        assert_eq!(report.messages(), vec!["m must equal 2"]);
        assert!(validate_params(&m3, Purpose::WellDepth).is_ok());

        let bad = ProblemParams {
            p: 1.5,
            m: 1.0,
            alpha: -1.0,
            r: -1.0,
            a: 0.0,
            ..params()
        };
        assert_eq!(validate_params(&bad, Purpose::Simulate).violations.len(), 5);
    }

    #[test]
    fn uniform_and_graded_meshes() {
        let mesh = Mesh1D::new(4, 1.0).unwrap();
        assert_eq!(mesh.nodes(), &[0.0, 0.25, 0.5, 0.75, 1.0]);

        let mesh = Mesh1D::new(2, 2.0).unwrap();
        assert_relative_eq!(mesh.element_sizes()[0], 2.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(mesh.element_sizes()[1], 1.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(mesh.nodes()[1], 2.0 / 3.0, epsilon = 1e-15);

        let mesh = Mesh1D::new(10, 1.3).unwrap();
        for w in mesh.element_sizes().windows(2) {
            assert_relative_eq!(w[0] / w[1], 1.3, epsilon = 1e-10);
        }
        assert_eq!(*mesh.nodes().last().unwrap(), 1.0);

        assert!(matches!(Mesh1D::new(1, 1.0), Err(Error::TooFewElements(1))));
        assert!(Mesh1D::new(4, 0.5).is_err());
    }

    #[test]
    fn two_element_operators_by_hand() {
        let mesh = Mesh1D::new(2, 1.0).unwrap();
        let ops = DiscreteOperators::assemble(&mesh, &params());
        assert_eq!(ops.stiffness.diag, vec![4.0, 2.0]);
        assert_eq!(ops.stiffness.off, vec![-2.0]);
        assert_relative_eq!(ops.mass.diag[0], 1.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(ops.mass.diag[1], 1.0 / 6.0, epsilon = 1e-15);
        assert_relative_eq!(ops.mass.off[0], 1.0 / 12.0, epsilon = 1e-15);

        let ops = DiscreteOperators::assemble(&mesh, &ProblemParams { a: 2.0, ..params() });
        assert_eq!(ops.boundary_mass.diag, vec![0.0, 0.5]);
        assert_eq!(ops.boundary_mass.off, vec![0.0]);
        assert_eq!(ops.gamma1_index, 1);
    }

    #[test]
    fn norms_of_identity_field() {
        let mesh = Mesh1D::new(16, 1.0).unwrap();
        let ops = DiscreteOperators::assemble(&mesh, &params());
        let u = mesh.interpolate(|x| x);
        assert_relative_eq!(ops.norm(&u, Norm::H1Semi).unwrap(), 1.0, epsilon = 1e-14);
        assert_relative_eq!(ops.norm(&u, Norm::L2).unwrap(), (1.0f64 / 3.0).sqrt(), epsilon = 1e-14);
        // Piecewise-linear x is exactly x; the 3-point rule integrates x^4 exactly.
        assert_relative_eq!(ops.norm(&u, Norm::Lp(4.0)).unwrap(), 0.2f64.powf(0.25), epsilon = 1e-14);
        assert_relative_eq!(ops.norm(&u, Norm::TraceL2).unwrap(), 1.0);
        assert_relative_eq!(ops.norm(&u, Norm::TraceAbs(3.0)).unwrap(), 1.0);
        assert!(matches!(
            ops.norm(&[1.0], Norm::L2),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn lp_norm_converges_at_second_order() {
        // u = sin(πx/2): ∫ sin^4(πx/2) dx = 3/8 exactly.
        let exact = 0.375f64;
        let errs: Vec<f64> = [16, 32, 64, 128]
            .iter()
            .map(|&n| {
                let mesh = Mesh1D::new(n, 1.0).unwrap();
                let ops = DiscreteOperators::assemble(&mesh, &params());
                let u = mesh.interpolate(|x| (std::f64::consts::FRAC_PI_2 * x).sin());
                (ops.lp_pow(&u) - exact).abs()
            })
            .collect();
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!((3.5..4.5).contains(&ratio), "ratio {ratio}");
        }
    }

    #[test]
    fn operators_are_positive_definite_on_random_vectors() {
        let mesh = Mesh1D::new(33, 1.2).unwrap();
        let ops = DiscreteOperators::assemble(&mesh, &params());
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let x: Vec<f64> = (0..ops.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            assert!(ops.mass.quad(&x) > 0.0);
            assert!(ops.stiffness.quad(&x) > 0.0);
        }
        let nonzero: Vec<_> = ops
            .boundary_mass
            .diag
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .collect();
        assert_eq!(nonzero.len(), 1);
        assert_eq!(nonzero[0].0, ops.gamma1_index);
    }

    #[test]
    fn source_jacobian_matches_finite_differences() {
        let mesh = Mesh1D::new(8, 1.0).unwrap();
        let ops = DiscreteOperators::assemble(&mesh, &ProblemParams { p: 3.5, ..params() });
        let u: Vec<f64> = mesh.interpolate(|x| (3.0 * x).sin() - 0.3);
        let jac = ops.source_jacobian(&u);
        let h = 1e-6;
        for j in 0..u.len() {
            let mut up = u.clone();
            let mut um = u.clone();
            up[j] += h;
            um[j] -= h;
            let fp = ops.source_load(&up);
            let fm = ops.source_load(&um);
            let mut e = vec![0.0; u.len()];
            e[j] = 1.0;
            let col = jac.apply(&e);
            for i in 0..u.len() {
                let fd = (fp[i] - fm[i]) / (2.0 * h);
                assert!((fd - col[i]).abs() < 1e-6, "({i},{j}) fd {fd} jac {}", col[i]);
            }
        }
    }

    #[test]
    fn source_load_is_gradient_of_lp_pow() {
        let mesh = Mesh1D::new(10, 1.0).unwrap();
        let p = 4.0;
        let ops = DiscreteOperators::assemble(&mesh, &ProblemParams { p, ..params() });
        let u: Vec<f64> = mesh.interpolate(|x| x * (1.5 - x));
        let load = ops.source_load(&u);
        let h = 1e-6;
        for j in 0..u.len() {
            let mut up = u.clone();
            let mut um = u.clone();
            up[j] += h;
            um[j] -= h;
            let fd = (ops.lp_pow(&up) - ops.lp_pow(&um)) / (2.0 * h) / p;
            assert!((fd - load[j]).abs() < 1e-8);
        }
    }

    proptest! {
        #[test]
        fn affine_fields_have_exact_gradient_norm(slope in -5.0f64..5.0, n in 2usize..40, g in 1.0f64..1.5) {
            let mesh = Mesh1D::new(n, g).unwrap();
            let ops = DiscreteOperators::assemble(&mesh, &ProblemParams::default());
            let u = mesh.interpolate(|x| slope * x);
            let h1 = ops.norm(&u, Norm::H1Semi).unwrap();
            prop_assert!((h1 - slope.abs()).abs() <= 1e-12 * (1.0 + slope.abs()));
        }
    }
}
