//! Orthonormal shifted Legendre polynomials on `[0, 1]` and Gauss–Legendre rules.
//!
//! The basis is `p_k(t) = sqrt(2k + 1) * P_k(2t - 1)`, so that
//! `∫₀¹ p_k p_l dt = δ_{kl}`. Everything in this crate works in this
//! normalization; nothing uses the classical `P_k` scaling directly.

use std::fmt::Display;

use thiserror::Error;

/// Errors raised by basis evaluation and projection.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum LegendreError {
    #[error("argument {0} lies outside [0, 1]")]
    Domain(f64),
    #[error("quadrature order must be at least 1")]
    EmptyRule,
    #[error("basis size must be at least 1")]
    EmptyBasis,
    #[error("function evaluation failed at t = {node}: {message}")]
    Evaluation { node: f64, message: String },
}

fn check_unit(t: f64) -> Result<(), LegendreError> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(LegendreError::Domain(t))
    }
}

/// `p_k(t)` by the three-term recurrence on `x = 2t - 1`.
pub fn eval_p(k: usize, t: f64) -> Result<f64, LegendreError> {
    check_unit(t)?;
    let x = 2.0 * t - 1.0;
    let mut prev = 1.0;
    if k == 0 {
        return Ok(1.0);
    }
    let mut curr = x;
    for j in 1..k {
        let jf = j as f64;
        let next = ((2.0 * jf + 1.0) * x * curr - jf * prev) / (jf + 1.0);
        prev = curr;
        curr = next;
    }
    Ok(curr * ((2 * k + 1) as f64).sqrt())
}

/// Fills `out[k] = p_k(t)` for `k < out.len()`; no domain check.
pub(crate) fn fill_basis(t: f64, out: &mut [f64]) {
    let m = out.len();
    if m == 0 {
        return;
    }
    let x = 2.0 * t - 1.0;
    let mut prev = 1.0;
    let mut curr = x;
    out[0] = 1.0;
    if m > 1 {
        out[1] = x;
    }
    for j in 1..m.saturating_sub(1) {
        let jf = j as f64;
        let next = ((2.0 * jf + 1.0) * x * curr - jf * prev) / (jf + 1.0);
        prev = curr;
        curr = next;
        out[j + 1] = next;
    }
    for (k, v) in out.iter_mut().enumerate() {
        *v *= ((2 * k + 1) as f64).sqrt();
    }
}

/// `φ_M(t) = [p_0(t), …, p_{M-1}(t)]`.
pub fn basis_vector(m: usize, t: f64) -> Result<Vec<f64>, LegendreError> {
    if m == 0 {
        return Err(LegendreError::EmptyBasis);
    }
    check_unit(t)?;
    let mut out = vec![0.0; m];
    fill_basis(t, &mut out);
    Ok(out)
}

/// A truncated orthonormal shifted Legendre basis `p_0 … p_{max_degree}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LegendreBasis {
    max_degree: usize,
}

impl LegendreBasis {
    /// Basis holding the first `m` polynomials.
    pub fn with_size(m: usize) -> Result<Self, LegendreError> {
        if m == 0 {
            return Err(LegendreError::EmptyBasis);
        }
        Ok(Self { max_degree: m - 1 })
    }

    pub fn max_degree(&self) -> usize {
        self.max_degree
    }

    pub fn len(&self) -> usize {
        self.max_degree + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn eval(&self, k: usize, t: f64) -> Result<f64, LegendreError> {
        eval_p(k, t)
    }

    pub fn vector(&self, t: f64) -> Result<Vec<f64>, LegendreError> {
        basis_vector(self.len(), t)
    }
}

/// Gauss–Legendre rule on `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Number of points `Q`; the rule is exact up to degree `2Q - 1`.
    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.nodes.iter().copied().zip(self.weights.iter().copied())
    }

    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.iter().map(|(x, w)| w * f(x)).sum()
    }

    /// Same rule affinely mapped onto `[a, b]`, weights scaled by `b - a`.
    pub fn mapped(&self, a: f64, b: f64) -> QuadratureRule {
        let h = b - a;
        QuadratureRule {
            nodes: self.nodes.iter().map(|x| a + h * x).collect(),
            weights: self.weights.iter().map(|w| w * h).collect(),
        }
    }
}

/// `Q`-point Gauss–Legendre rule mapped to `[0, 1]`.
///
/// Nodes on `[-1, 1]` are found by Newton's method on `P_Q` from the
/// Tricomi-style initial guess; symmetry halves the work.
pub fn gauss_rule(q: usize) -> Result<QuadratureRule, LegendreError> {
    if q == 0 {
        return Err(LegendreError::EmptyRule);
    }
    let n = q as f64;
    let mut x = vec![0.0; q];
    let mut w = vec![0.0; q];
    for i in 0..q.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (p, d) = legendre_and_derivative(q, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() <= 1e-16 * z.abs().max(1.0) {
                break;
            }
        }
        let (_, d) = legendre_and_derivative(q, z);
        dp = if d.is_finite() { d } else { dp };
        let weight = 2.0 / ((1.0 - z * z) * dp * dp);
        // descending z from the guess; store ascending on [0, 1]
        x[i] = -z;
        x[q - 1 - i] = z;
        w[i] = weight;
        w[q - 1 - i] = weight;
    }
    if q % 2 == 1 {
        x[q / 2] = 0.0;
    }
    Ok(QuadratureRule {
        nodes: x.iter().map(|v| 0.5 * (v + 1.0)).collect(),
        weights: w.iter().map(|v| 0.5 * v).collect(),
    })
}

fn legendre_and_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut prev = 1.0;
    let mut curr = x;
    for j in 1..n {
        let jf = j as f64;
        let next = ((2.0 * jf + 1.0) * x * curr - jf * prev) / (jf + 1.0);
        prev = curr;
        curr = next;
    }
    let nf = n as f64;
    (curr, nf * (x * curr - prev) / (x * x - 1.0))
}

/// Default projection order for a basis of size `m`.
pub fn default_quadrature_order(m: usize) -> usize {
    (2 * m).max(64)
}

/// Legendre coefficients `α_d = ∫₀¹ f p_d` for `d < m`.
pub fn project_univariate<F>(f: F, m: usize, q: usize) -> Result<Vec<f64>, LegendreError>
where
    F: Fn(f64) -> f64,
{
    try_project_univariate(|t| Ok::<f64, std::convert::Infallible>(f(t)), m, q)
}

/// As [`project_univariate`] for fallible integrands.
pub fn try_project_univariate<F, E>(f: F, m: usize, q: usize) -> Result<Vec<f64>, LegendreError>
where
    F: Fn(f64) -> Result<f64, E>,
    E: Display,
{
    if m == 0 {
        return Err(LegendreError::EmptyBasis);
    }
    let rule = gauss_rule(q)?;
    let mut alpha = vec![0.0; m];
    let mut phi = vec![0.0; m];
    for (x, w) in rule.iter() {
        let v = f(x).map_err(|e| LegendreError::Evaluation {
            node: x,
            message: e.to_string(),
        })?;
        if !v.is_finite() {
            return Err(LegendreError::Evaluation {
                node: x,
                message: format!("non-finite value {v}"),
            });
        }
        fill_basis(x, &mut phi);
        for (a, p) in alpha.iter_mut().zip(&phi) {
            *a += w * v * p;
        }
    }
    Ok(alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn low_order_values() {
        assert_eq!(eval_p(0, 0.37).unwrap(), 1.0);
        assert_abs_diff_eq!(eval_p(1, 0.5).unwrap(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(eval_p(2, 1.0).unwrap(), 5f64.sqrt(), epsilon = 1e-15);
        assert!(matches!(eval_p(3, 1.5), Err(LegendreError::Domain(_))));
        assert!(matches!(eval_p(0, -0.1), Err(LegendreError::Domain(_))));
    }

    #[test]
    fn recurrence_matches_explicit_forms() {
        let explicit = [
            |_t: f64| 1.0,
            |t: f64| 3f64.sqrt() * (2.0 * t - 1.0),
            |t: f64| 5f64.sqrt() * (6.0 * t * t - 6.0 * t + 1.0),
            |t: f64| 7f64.sqrt() * (20.0 * t.powi(3) - 30.0 * t * t + 12.0 * t - 1.0),
        ];
        for i in 0..=50 {
            let t = i as f64 / 50.0;
            let v = basis_vector(4, t).unwrap();
            for (k, f) in explicit.iter().enumerate() {
                // explicit forms carry their own rounding; compare relatively
                let tol = 1e-14 * f(t).abs().max(1.0);
                assert_abs_diff_eq!(eval_p(k, t).unwrap(), f(t), epsilon = tol);
                assert_abs_diff_eq!(v[k], f(t), epsilon = tol);
            }
        }
    }

    #[test]
    fn basis_vector_examples() {
        assert_eq!(basis_vector(1, 0.2).unwrap(), vec![1.0]);
        let v = basis_vector(2, 0.0).unwrap();
        assert_abs_diff_eq!(v[1], -(3f64.sqrt()), epsilon = 1e-15);
        let v = basis_vector(3, 0.5).unwrap();
        assert_abs_diff_eq!(v[1], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(v[2], -(5f64.sqrt()) / 2.0, epsilon = 1e-15);
        assert!(basis_vector(0, 0.5).is_err());
    }

    #[test]
    fn small_gauss_rules() {
        let r = gauss_rule(1).unwrap();
        assert_abs_diff_eq!(r.nodes()[0], 0.5, epsilon = 1e-16);
        assert_abs_diff_eq!(r.weights()[0], 1.0, epsilon = 1e-16);
        let r = gauss_rule(2).unwrap();
        let h = 1.0 / (2.0 * 3f64.sqrt());
        assert_abs_diff_eq!(r.nodes()[0], 0.5 - h, epsilon = 1e-15);
        assert_abs_diff_eq!(r.nodes()[1], 0.5 + h, epsilon = 1e-15);
        assert_abs_diff_eq!(r.weights()[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(r.integrate(|t| t.powi(3)), 0.25, epsilon = 1e-16);
        assert!(gauss_rule(0).is_err());
    }

    #[test]
    fn rules_are_exact_to_degree_2q_minus_1() {
        for q in [1usize, 2, 3, 5, 8, 17, 64, 150] {
            let r = gauss_rule(q).unwrap();
            let total: f64 = r.weights().iter().sum();
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-14);
            assert!(r.nodes().iter().all(|&x| x > 0.0 && x < 1.0));
            assert!(r.weights().iter().all(|&w| w > 0.0));
            assert!(r.nodes().windows(2).all(|p| p[0] < p[1]));
            for d in 0..=(2 * q - 1).min(60) {
                let exact = 1.0 / (d as f64 + 1.0);
                let got = r.integrate(|t| t.powi(d as i32));
                assert!((got - exact).abs() <= 1e-13 * exact, "q={q} d={d}");
            }
        }
    }

    #[test]
    fn orthonormality_up_to_degree_30() {
        let r = gauss_rule(64).unwrap();
        let mut gram = vec![vec![0.0; 31]; 31];
        for (x, w) in r.iter() {
            let v = basis_vector(31, x).unwrap();
            for k in 0..31 {
                for l in 0..31 {
                    gram[k][l] += w * v[k] * v[l];
                }
            }
        }
        for (k, row) in gram.iter().enumerate() {
            for (l, g) in row.iter().enumerate() {
                let target = if k == l { 1.0 } else { 0.0 };
                assert!((g - target).abs() <= 1e-12, "({k},{l})");
            }
        }
    }

    #[test]
    fn projection_examples() {
        let a = project_univariate(|_| 1.0, 3, 64).unwrap();
        assert_abs_diff_eq!(a[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(a[1], 0.0, epsilon = 1e-15);
        let a = project_univariate(|t| t, 3, 64).unwrap();
        assert_abs_diff_eq!(a[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(a[1], 1.0 / (2.0 * 3f64.sqrt()), epsilon = 1e-15);
        assert_abs_diff_eq!(a[2], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn projection_reports_bad_nodes() {
        let err = project_univariate(|t| 1.0 / (t - t), 4, 8).unwrap_err();
        assert!(matches!(err, LegendreError::Evaluation { .. }));
        let err = try_project_univariate(|t| if t > 0.5 { Err("boom") } else { Ok(t) }, 4, 8)
            .unwrap_err();
        match err {
            LegendreError::Evaluation { node, message } => {
                assert!(node > 0.5);
                assert_eq!(message, "boom");
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
