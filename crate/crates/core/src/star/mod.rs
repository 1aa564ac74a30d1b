//! Exact ⋆-product arithmetic on polynomial distributions.
//!
//! An element is `d(t,s) = f̃(t,s)·Θ(t−s) + Σ_i c_i(s)·δ^(i)(t−s)` with
//! polynomial `f̃` and `c_i`. Delta coefficients are kept in a canonical
//! form depending on `s` only, using
//!
//! ```text
//! g(t,s)·δ^(i)(t−s) = Σ_{m≤i} C(i,m)·(−1)^m·(∂_t^m g)(s,s)·δ^(i−m)(t−s)
//! ```
//!
//! so that two elements are equal iff their coefficients agree.
//!
//! Products are assembled by bilinearity from three rules:
//!
//! * `f̃Θ ⋆ g̃Θ = (∫ₛᵗ f̃(t,τ) g̃(τ,s) dτ)·Θ`;
//! * `c(s)δ^(i) ⋆ b = ∂_tⁱ (c(t)·b)`;
//! * `a ⋆ e(s)δ^(j) = e(s)·(−1)ʲ ∂_sʲ a`;
//!
//! with distributional derivatives `∂_t Θ(t−s) = δ(t−s)` and
//! `∂_s Θ(t−s) = −δ(t−s)`.

mod poly;

use std::collections::BTreeMap;
use std::ops::{Add, Mul, Neg, Sub};

use thiserror::Error;

use crate::coeff::{self, CoeffError, KernelMatrix};
use crate::legendre::default_quadrature_order;

pub use poly::{PolyBivariate, DEFAULT_MAX_DEGREE};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StarError {
    #[error("polynomial degree {degree} exceeds the cap {cap}")]
    DegreeOverflow { degree: usize, cap: usize },
    #[error("element has a δ^({order}) part; expected a pure Θ-kernel")]
    HasDeltaPart { order: usize },
    #[error("δ^({order}) has no bounded coefficient matrix")]
    NoBoundedRepresentation { order: usize },
    #[error("δ coefficient is not constant; only α·δ maps to α·I")]
    NonConstantDelta,
    #[error("argument ({t}, {s}) outside [0, 1]²")]
    Domain { t: f64, s: f64 },
    #[error(transparent)]
    Coeff(#[from] CoeffError),
}

/// An element of the ⋆-ring restricted to polynomial data.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StarElement {
    theta: PolyBivariate,
    deltas: BTreeMap<usize, PolyBivariate>,
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

impl StarElement {
    pub fn zero() -> Self {
        Self::default()
    }

    /// `1_⋆ = δ(t−s)`.
    pub fn identity() -> Self {
        Self::delta(0, 1.0)
    }

    /// `Θ(t−s)`.
    pub fn theta() -> Self {
        Self::from_poly(PolyBivariate::constant(1.0))
    }

    /// `p(t,s)·Θ(t−s)`.
    pub fn from_poly(p: PolyBivariate) -> Self {
        Self {
            theta: p,
            deltas: BTreeMap::new(),
        }
    }

    /// `c·δ^(order)(t−s)`.
    pub fn delta(order: usize, c: f64) -> Self {
        Self::delta_with(order, PolyBivariate::constant(c))
    }

    /// `δ′(t−s)`, the ⋆-inverse of `Θ`.
    pub fn delta_prime() -> Self {
        Self::delta(1, 1.0)
    }

    /// `g(t,s)·δ^(order)(t−s)`, brought to canonical form.
    pub fn delta_with(order: usize, g: PolyBivariate) -> Self {
        let mut out = Self::zero();
        out.add_delta_general(order, &g);
        out
    }

    pub fn theta_part(&self) -> &PolyBivariate {
        &self.theta
    }

    /// Canonical coefficients `c_i(s)` keyed by derivative order.
    pub fn delta_parts(&self) -> &BTreeMap<usize, PolyBivariate> {
        &self.deltas
    }

    pub fn is_zero(&self) -> bool {
        self.theta.is_zero() && self.deltas.is_empty()
    }

    fn add_delta_canonical(&mut self, order: usize, c: &PolyBivariate) {
        if c.is_zero() {
            return;
        }
        let sum = match self.deltas.get(&order) {
            Some(prev) => prev.add(c),
            None => c.clone(),
        };
        if sum.is_zero() {
            self.deltas.remove(&order);
        } else {
            self.deltas.insert(order, sum);
        }
    }

    fn add_delta_general(&mut self, order: usize, g: &PolyBivariate) {
        let mut dg = g.clone();
        for m in 0..=order {
            let c = dg
                .diagonal()
                .scale(binomial(order, m) * if m % 2 == 0 { 1.0 } else { -1.0 });
            self.add_delta_canonical(order - m, &c);
            dg = dg.partial_t();
        }
    }

    fn check_cap(self, cap: usize) -> Result<Self, StarError> {
        let theta = self.theta.check_cap(cap)?;
        let mut deltas = BTreeMap::new();
        for (k, v) in self.deltas {
            deltas.insert(k, v.check_cap(cap)?);
        }
        Ok(Self { theta, deltas })
    }

    /// Distributional `∂_t`.
    fn d_dt(&self) -> Self {
        let mut out = Self::from_poly(self.theta.partial_t());
        out.add_delta_canonical(0, &self.theta.diagonal());
        for (order, c) in &self.deltas {
            out.add_delta_canonical(order + 1, c);
        }
        out
    }

    /// Distributional `∂_s`.
    fn d_ds(&self) -> Self {
        let mut out = Self::from_poly(self.theta.partial_s());
        out.add_delta_canonical(0, &self.theta.diagonal().scale(-1.0));
        for (order, c) in &self.deltas {
            out.add_delta_canonical(*order, &c.partial_s());
            out.add_delta_canonical(order + 1, &c.scale(-1.0));
        }
        out
    }

    /// Left multiplication by a polynomial `c(t)`.
    fn mul_t(&self, c: &PolyBivariate, cap: usize) -> Result<Self, StarError> {
        let mut out = Self::from_poly(c.mul(&self.theta, cap)?);
        for (order, e) in &self.deltas {
            out.add_delta_general(*order, &c.mul(e, cap)?);
        }
        out.check_cap(cap)
    }

    /// Multiplication by a polynomial `e(s)`.
    fn mul_s(&self, e: &PolyBivariate, cap: usize) -> Result<Self, StarError> {
        let mut out = Self::from_poly(e.mul(&self.theta, cap)?);
        for (order, c) in &self.deltas {
            out.add_delta_canonical(*order, &e.mul(c, cap)?);
        }
        Ok(out)
    }

    /// ⋆-product `self ⋆ rhs` with the default degree cap.
    pub fn star(&self, rhs: &Self) -> Result<Self, StarError> {
        self.star_capped(rhs, DEFAULT_MAX_DEGREE)
    }

    pub fn star_capped(&self, rhs: &Self, cap: usize) -> Result<Self, StarError> {
        let mut out = Self::zero();
        if !self.theta.is_zero() {
            let lhs_theta = Self::from_poly(self.theta.clone());
            if !rhs.theta.is_zero() {
                out = out + Self::from_poly(PolyBivariate::volterra(&self.theta, &rhs.theta, cap)?);
            }
            for (order, e) in &rhs.deltas {
                let mut d = lhs_theta.clone();
                for _ in 0..*order {
                    d = d.d_ds();
                }
                if order % 2 == 1 {
                    d = -d;
                }
                out = out + d.mul_s(e, cap)?;
            }
        }
        for (order, c) in &self.deltas {
            // the coefficient depends on the integration variable, which
            // plays the role of t in the result
            let mut d = rhs.mul_t(&c.swapped(), cap)?;
            for _ in 0..*order {
                d = d.d_dt();
            }
            out = out + d;
        }
        out.check_cap(cap)
    }

    /// `self^{⋆k}`; `k = 0` gives the identity.
    pub fn star_power(&self, k: usize) -> Result<Self, StarError> {
        let mut acc = Self::identity();
        for _ in 0..k {
            acc = acc.star(self)?;
        }
        Ok(acc)
    }

    /// `Σ_{k=0}^{K} self^{⋆k}` for a pure Θ-kernel.
    pub fn truncated_resolvent(&self, order: usize) -> Result<Self, StarError> {
        if let Some(k) = self.deltas.keys().next() {
            return Err(StarError::HasDeltaPart { order: *k });
        }
        let mut sum = Self::identity();
        let mut power = Self::identity();
        for _ in 0..order {
            power = power.star(self)?;
            sum = sum + power.clone();
        }
        Ok(sum)
    }

    /// `f̃(t,s)·Θ(t−s)` evaluated pointwise (Dirac parts are ignored).
    pub fn eval_theta_part(&self, t: f64, s: f64) -> Result<f64, StarError> {
        if !(0.0..=1.0).contains(&t) || !(0.0..=1.0).contains(&s) {
            return Err(StarError::Domain { t, s });
        }
        Ok(if t >= s { self.theta.eval(t, s) } else { 0.0 })
    }

    /// Coefficient matrix `α·I + F(θ-part)`; only constant `α·δ` is allowed.
    pub fn to_coeff_matrix(&self, m: usize) -> Result<KernelMatrix, StarError> {
        let mut alpha = 0.0;
        for (order, c) in &self.deltas {
            if *order > 0 {
                return Err(StarError::NoBoundedRepresentation { order: *order });
            }
            if c.deg_t() > 0 || c.deg_s() > 0 {
                return Err(StarError::NonConstantDelta);
            }
            alpha = c.get(0, 0);
        }
        let degree = self.theta.deg_t() + self.theta.deg_s();
        let q = default_quadrature_order(m).max(m + degree / 2 + 2);
        let theta = self.theta.clone();
        let f = coeff::bivariate_quadrature(move |t, s| theta.eval(t, s), m, q)?;
        let mut entries = f.into_entries();
        for k in 0..m {
            entries[(k, k)] += alpha;
        }
        Ok(KernelMatrix::new(
            entries,
            coeff::Provenance::BivariateQuadrature,
        ))
    }

    /// Largest coefficient-wise difference over all parts.
    pub fn max_gap(&self, other: &Self) -> f64 {
        let mut gap = self.theta.max_gap(&other.theta);
        let zero = PolyBivariate::zero();
        for k in self.deltas.keys().chain(other.deltas.keys()) {
            let a = self.deltas.get(k).unwrap_or(&zero);
            let b = other.deltas.get(k).unwrap_or(&zero);
            gap = gap.max(a.max_gap(b));
        }
        gap
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.deltas
            .values()
            .map(PolyBivariate::max_abs_coeff)
            .fold(self.theta.max_abs_coeff(), f64::max)
    }
}

/// `1_⋆ = δ(t−s)`.
pub fn star_identity() -> StarElement {
    StarElement::identity()
}

/// `Θ(t−s)`.
pub fn theta_element() -> StarElement {
    StarElement::theta()
}

pub fn star(a: &StarElement, b: &StarElement) -> Result<StarElement, StarError> {
    a.star(b)
}

impl Add for StarElement {
    type Output = StarElement;

    fn add(mut self, rhs: StarElement) -> StarElement {
        self.theta = self.theta.add(&rhs.theta);
        for (k, v) in &rhs.deltas {
            self.add_delta_canonical(*k, v);
        }
        self
    }
}

impl Neg for StarElement {
    type Output = StarElement;

    fn neg(self) -> StarElement {
        self * -1.0
    }
}

impl Sub for StarElement {
    type Output = StarElement;

    fn sub(self, rhs: StarElement) -> StarElement {
        self + (-rhs)
    }
}

impl Mul<f64> for StarElement {
    type Output = StarElement;

    fn mul(self, c: f64) -> StarElement {
        let mut out = StarElement::from_poly(self.theta.scale(c));
        for (k, v) in &self.deltas {
            out.add_delta_canonical(*k, &v.scale(c));
        }
        out
    }
}
