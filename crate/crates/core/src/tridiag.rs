//! Symmetric tridiagonal matrices. Every operator of the 1-D piecewise-linear
//! discretization has this shape, so dense storage is never needed.

#[derive(Debug, Clone, PartialEq)]
pub struct SymTridiag {
    /// Main diagonal, length `n`.
    pub diag: Vec<f64>,
    /// First off-diagonal, length `n - 1`; `off[i]` couples `i` and `i + 1`.
    pub off: Vec<f64>,
}

impl SymTridiag {
    pub fn zeros(n: usize) -> Self {
        Self {
            diag: vec![0.0; n],
            off: vec![0.0; n.saturating_sub(1)],
        }
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; x.len()];
        self.apply_into(x, &mut y);
        y
    }

    pub fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        let n = self.dim();
        debug_assert_eq!(x.len(), n);
        for i in 0..n {
            let mut acc = self.diag[i] * x[i];
            if i > 0 {
                acc += self.off[i - 1] * x[i - 1];
            }
            if i + 1 < n {
                acc += self.off[i] * x[i + 1];
            }
            y[i] = acc;
        }
    }

    /// `xᵀ A y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        let n = self.dim();
        let mut acc = 0.0;
        for i in 0..n {
            acc += x[i] * self.diag[i] * y[i];
            if i + 1 < n {
                acc += self.off[i] * (x[i] * y[i + 1] + x[i + 1] * y[i]);
            }
        }
        acc
    }

    pub fn quad(&self, x: &[f64]) -> f64 {
        self.bilinear(x, x)
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, scale: f64, other: &SymTridiag) {
        for (a, b) in self.diag.iter_mut().zip(&other.diag) {
            *a += scale * b;
        }
        for (a, b) in self.off.iter_mut().zip(&other.off) {
            *a += scale * b;
        }
    }

    pub fn scaled(&self, scale: f64) -> Self {
        Self {
            diag: self.diag.iter().map(|d| d * scale).collect(),
            off: self.off.iter().map(|d| d * scale).collect(),
        }
    }

    /// Solves `A x = rhs` by Thomas elimination without pivoting.
    ///
    /// Returns `None` if a pivot vanishes or the result is not finite; callers
    /// treat that as a failed solve. Safe for the SPD and diagonally dominant
    /// matrices assembled in this crate.
    pub fn solve(&self, rhs: &[f64]) -> Option<Vec<f64>> {
        let n = self.dim();
        if n == 0 || rhs.len() != n {
            return None;
        }
        let mut c = vec![0.0; n];
        let mut d = vec![0.0; n];
        let mut pivot = self.diag[0];
        if pivot == 0.0 || !pivot.is_finite() {
            return None;
        }
        if n > 1 {
            c[0] = self.off[0] / pivot;
        }
        d[0] = rhs[0] / pivot;
        for i in 1..n {
            pivot = self.diag[i] - self.off[i - 1] * c[i - 1];
            if pivot == 0.0 || !pivot.is_finite() {
                return None;
            }
            if i + 1 < n {
                c[i] = self.off[i] / pivot;
            }
            d[i] = (rhs[i] - self.off[i - 1] * d[i - 1]) / pivot;
        }
        for i in (0..n - 1).rev() {
            d[i] -= c[i] * d[i + 1];
        }
        d.iter().all(|x| x.is_finite()).then_some(d)
    }
}
