//! Dense bivariate polynomials `Σ c[a][b]·tᵃ·sᵇ` with a per-variable degree cap.

use std::fmt;

use super::StarError;

/// Default cap on the degree in each variable.
pub const DEFAULT_MAX_DEGREE: usize = 24;

/// Polynomial in `(t, s)`, stored as a dense `(deg_t+1) × (deg_s+1)` grid.
#[derive(Clone, PartialEq)]
pub struct PolyBivariate {
    // coeffs[a * ns + b] multiplies t^a s^b
    coeffs: Vec<f64>,
    nt: usize,
    ns: usize,
}

impl fmt::Debug for PolyBivariate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut terms = Vec::new();
        for a in 0..self.nt {
            for b in 0..self.ns {
                let c = self.get(a, b);
                if c != 0.0 {
                    terms.push(format!("{c}·t^{a}·s^{b}"));
                }
            }
        }
        if terms.is_empty() {
            write!(f, "0")
        } else {
            write!(f, "{}", terms.join(" + "))
        }
    }
}

impl Default for PolyBivariate {
    fn default() -> Self {
        Self::zero()
    }
}

impl PolyBivariate {
    pub fn zero() -> Self {
        Self {
            coeffs: vec![0.0],
            nt: 1,
            ns: 1,
        }
    }

    pub fn constant(c: f64) -> Self {
        Self {
            coeffs: vec![c],
            nt: 1,
            ns: 1,
        }
    }

    /// `c·tᵃ·sᵇ`.
    pub fn monomial(a: usize, b: usize, c: f64) -> Self {
        let mut p = Self::with_shape(a + 1, b + 1);
        p.set(a, b, c);
        p.trimmed()
    }

    /// From a grid `grid[a][b]` (ragged rows are zero-padded).
    pub fn from_grid(grid: &[Vec<f64>]) -> Self {
        let nt = grid.len().max(1);
        let ns = grid.iter().map(Vec::len).max().unwrap_or(1).max(1);
        let mut p = Self::with_shape(nt, ns);
        for (a, row) in grid.iter().enumerate() {
            for (b, c) in row.iter().enumerate() {
                p.set(a, b, *c);
            }
        }
        p.trimmed()
    }

    /// Polynomial in `t` alone from its monomial coefficients.
    pub fn in_t(coeffs: &[f64]) -> Self {
        let grid: Vec<Vec<f64>> = coeffs.iter().map(|c| vec![*c]).collect();
        Self::from_grid(&grid)
    }

    /// Polynomial in `s` alone from its monomial coefficients.
    pub fn in_s(coeffs: &[f64]) -> Self {
        Self::from_grid(&[coeffs.to_vec()])
    }

    fn with_shape(nt: usize, ns: usize) -> Self {
        Self {
            coeffs: vec![0.0; nt * ns],
            nt,
            ns,
        }
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        if a < self.nt && b < self.ns {
            self.coeffs[a * self.ns + b]
        } else {
            0.0
        }
    }

    fn set(&mut self, a: usize, b: usize, c: f64) {
        self.coeffs[a * self.ns + b] = c;
    }

    fn add_at(&mut self, a: usize, b: usize, c: f64) {
        self.coeffs[a * self.ns + b] += c;
    }

    /// Degree in `t` (0 for the zero polynomial).
    pub fn deg_t(&self) -> usize {
        self.nt - 1
    }

    pub fn deg_s(&self) -> usize {
        self.ns - 1
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|c| *c == 0.0)
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.coeffs.iter().fold(0.0, |m, c| m.max(c.abs()))
    }

    /// Drops trailing all-zero rows and columns.
    fn trimmed(self) -> Self {
        let mut nt = self.nt;
        while nt > 1 && (0..self.ns).all(|b| self.get(nt - 1, b) == 0.0) {
            nt -= 1;
        }
        let mut ns = self.ns;
        while ns > 1 && (0..nt).all(|a| self.get(a, ns - 1) == 0.0) {
            ns -= 1;
        }
        if nt == self.nt && ns == self.ns {
            return self;
        }
        let mut out = Self::with_shape(nt, ns);
        for a in 0..nt {
            for b in 0..ns {
                out.set(a, b, self.get(a, b));
            }
        }
        out
    }

    pub(crate) fn check_cap(self, cap: usize) -> Result<Self, StarError> {
        let p = self.trimmed();
        let degree = p.deg_t().max(p.deg_s());
        if degree > cap {
            Err(StarError::DegreeOverflow { degree, cap })
        } else {
            Ok(p)
        }
    }

    pub fn eval(&self, t: f64, s: f64) -> f64 {
        // Horner in t over Horner-in-s rows
        let mut acc = 0.0;
        for a in (0..self.nt).rev() {
            let mut row = 0.0;
            for b in (0..self.ns).rev() {
                row = row * s + self.get(a, b);
            }
            acc = acc * t + row;
        }
        acc
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = Self::with_shape(self.nt.max(other.nt), self.ns.max(other.ns));
        for a in 0..out.nt {
            for b in 0..out.ns {
                out.set(a, b, self.get(a, b) + other.get(a, b));
            }
        }
        out.trimmed()
    }

    pub fn scale(&self, c: f64) -> Self {
        Self {
            coeffs: self.coeffs.iter().map(|v| v * c).collect(),
            nt: self.nt,
            ns: self.ns,
        }
        .trimmed()
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(-1.0))
    }

    pub fn mul(&self, other: &Self, cap: usize) -> Result<Self, StarError> {
        let mut out = Self::with_shape(self.nt + other.nt - 1, self.ns + other.ns - 1);
        for a in 0..self.nt {
            for b in 0..self.ns {
                let x = self.get(a, b);
                if x == 0.0 {
                    continue;
                }
                for c in 0..other.nt {
                    for d in 0..other.ns {
                        out.add_at(a + c, b + d, x * other.get(c, d));
                    }
                }
            }
        }
        out.check_cap(cap)
    }

    pub fn partial_t(&self) -> Self {
        if self.nt == 1 {
            return Self::zero();
        }
        let mut out = Self::with_shape(self.nt - 1, self.ns);
        for a in 1..self.nt {
            for b in 0..self.ns {
                out.set(a - 1, b, a as f64 * self.get(a, b));
            }
        }
        out.trimmed()
    }

    pub fn partial_s(&self) -> Self {
        self.swapped().partial_t().swapped()
    }

    /// `p(s, t)`: exchanges the roles of the two variables.
    pub fn swapped(&self) -> Self {
        let mut out = Self::with_shape(self.ns, self.nt);
        for a in 0..self.nt {
            for b in 0..self.ns {
                out.set(b, a, self.get(a, b));
            }
        }
        out
    }

    /// Restriction to the diagonal, `s ↦ p(s, s)`, as a polynomial in `s`.
    pub fn diagonal(&self) -> Self {
        let mut out = Self::with_shape(1, self.nt + self.ns - 1);
        for a in 0..self.nt {
            for b in 0..self.ns {
                out.add_at(0, a + b, self.get(a, b));
            }
        }
        out.trimmed()
    }

    /// Volterra composition `∫ₛᵗ f(t,τ)·g(τ,s) dτ`, exact.
    pub fn volterra(f: &Self, g: &Self, cap: usize) -> Result<Self, StarError> {
        // f = Σ f_ab t^a τ^b, g = Σ g_cd τ^c s^d; ∫ₛᵗ τⁿ = (tⁿ⁺¹ − sⁿ⁺¹)/(n+1)
        let nt = f.nt + f.ns + g.nt;
        let ns = g.ns + f.ns + g.nt;
        let mut out = Self::with_shape(nt, ns);
        for a in 0..f.nt {
            for b in 0..f.ns {
                let x = f.get(a, b);
                if x == 0.0 {
                    continue;
                }
                for c in 0..g.nt {
                    for d in 0..g.ns {
                        let y = g.get(c, d);
                        if y == 0.0 {
                            continue;
                        }
                        let n = b + c;
                        let w = x * y / (n as f64 + 1.0);
                        out.add_at(a + n + 1, d, w);
                        out.add_at(a, d + n + 1, -w);
                    }
                }
            }
        }
        out.check_cap(cap)
    }

    /// Largest coefficient-wise difference.
    pub fn max_gap(&self, other: &Self) -> f64 {
        let nt = self.nt.max(other.nt);
        let ns = self.ns.max(other.ns);
        let mut gap = 0.0f64;
        for a in 0..nt {
            for b in 0..ns {
                gap = gap.max((self.get(a, b) - other.get(a, b)).abs());
            }
        }
        gap
    }
}
