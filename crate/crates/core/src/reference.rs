//! Independent reference solutions: an adaptive Dormand–Prince 5(4)
//! integrator, closed forms for commuting generators, and Volterra
//! compositions by direct quadrature.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::dsl::EvalError;
use crate::legendre::{gauss_rule, LegendreError};
use crate::solver::ODEProblem;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReferenceError {
    #[error("invalid integrator settings: {0}")]
    Config(String),
    #[error("grid must be sorted and inside [0, 1]; offending value {0}")]
    BadGrid(f64),
    #[error("step limit {max_steps} reached at t = {t}")]
    NoConvergence { t: f64, max_steps: usize },
    #[error("step size underflow at t = {t}")]
    StepUnderflow { t: f64 },
    #[error("coefficient evaluation failed at t = {t}: {source}")]
    Evaluation { t: f64, source: EvalError },
    #[error("arguments must satisfy 0 ≤ s ≤ t ≤ 1, got t = {t}, s = {s}")]
    Domain { t: f64, s: f64 },
    #[error(transparent)]
    Basis(#[from] LegendreError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_steps: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-12,
            abs_tol: 1e-14,
            max_steps: 1_000_000,
        }
    }
}

impl IntegratorConfig {
    pub fn with_rel_tol(rel_tol: f64) -> Self {
        Self {
            rel_tol,
            abs_tol: rel_tol * 1e-2,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<(), ReferenceError> {
        let ok = |v: f64| v > 0.0 && v.is_finite();
        if !ok(self.rel_tol) || !ok(self.abs_tol) {
            return Err(ReferenceError::Config("tolerances must be positive".into()));
        }
        if self.max_steps == 0 {
            return Err(ReferenceError::Config("max_steps must be positive".into()));
        }
        Ok(())
    }
}

// Dormand–Prince tableau
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
// fifth-order weights are the last row of A; these are the error weights b − b̂
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Integrates `y′ = f(t, y)` through the sorted `targets`, landing on each.
fn dopri<F>(
    f: F,
    y0: &[f64],
    targets: &[f64],
    cfg: &IntegratorConfig,
) -> Result<Vec<Vec<f64>>, ReferenceError>
where
    F: Fn(f64, &[f64], &mut [f64]) -> Result<(), ReferenceError>,
{
    let dim = y0.len();
    let mut y = y0.to_vec();
    let mut t = 0.0;
    let mut k = vec![vec![0.0; dim]; 7];
    let mut tmp = vec![0.0; dim];
    let mut y_new = vec![0.0; dim];
    let mut h = 1e-3;
    let mut err_prev = 1e-4f64;
    let mut steps = 0;
    let mut fsal = false;
    let mut out = Vec::with_capacity(targets.len());

    for &target in targets {
        while t < target {
            if steps >= cfg.max_steps {
                return Err(ReferenceError::NoConvergence {
                    t,
                    max_steps: cfg.max_steps,
                });
            }
            let last = t + h >= target;
            let step = if last { target - t } else { h };
            if step < 1e-15 * t.max(1.0) && !last {
                return Err(ReferenceError::StepUnderflow { t });
            }
            if !fsal {
                f(t, &y, &mut k[0])?;
            }
            for s in 1..7 {
                for i in 0..dim {
                    let mut acc = y[i];
                    for j in 0..s {
                        acc += step * A[s][j] * k[j][i];
                    }
                    tmp[i] = acc;
                }
                f(t + C[s] * step, &tmp, &mut k[s])?;
                if s == 6 {
                    y_new.copy_from_slice(&tmp);
                }
            }
            let mut err = 0.0;
            for i in 0..dim {
                let e: f64 = (0..7).map(|s| E[s] * k[s][i]).sum::<f64>() * step;
                let scale = cfg.abs_tol + cfg.rel_tol * y[i].abs().max(y_new[i].abs());
                err += (e / scale).powi(2);
            }
            let err = (err / dim as f64).sqrt();
            steps += 1;

            // PI controller
            let beta = 0.04;
            let alpha = 0.2 - 0.75 * beta;
            if err <= 1.0 {
                let fac = if err == 0.0 {
                    5.0
                } else {
                    (0.9 * err.powf(-alpha) * err_prev.powf(beta)).clamp(0.2, 5.0)
                };
                t = if last { target } else { t + step };
                y.copy_from_slice(&y_new);
                k.swap(0, 6);
                fsal = true;
                err_prev = err.max(1e-4);
                if !last || step >= h {
                    h = step * fac;
                }
            } else {
                let fac = (0.9 * err.powf(-alpha)).clamp(0.2, 1.0);
                h = step * fac;
                fsal = true;
            }
        }
        out.push(y.clone());
    }
    Ok(out)
}

fn check_grid(grid: &[f64]) -> Result<(), ReferenceError> {
    let mut prev = 0.0;
    for &t in grid {
        if !(0.0..=1.0).contains(&t) || t < prev {
            return Err(ReferenceError::BadGrid(t));
        }
        prev = t;
    }
    Ok(())
}

/// `U(t)` at each grid point for `U′ = Ã U + B̃`, `U(0) = I`.
pub fn integrate(
    problem: &ODEProblem,
    grid: &[f64],
    cfg: &IntegratorConfig,
) -> Result<Vec<DMatrix<f64>>, ReferenceError> {
    cfg.validate()?;
    check_grid(grid)?;
    let n = problem.n();
    let y0: Vec<f64> = DMatrix::<f64>::identity(n, n).as_slice().to_vec();
    let rhs = |t: f64, y: &[f64], dy: &mut [f64]| -> Result<(), ReferenceError> {
        let wrap = |source| ReferenceError::Evaluation { t, source };
        let a = problem.a_at(t).map_err(wrap)?;
        let b = problem.b_at(t).map_err(wrap)?;
        let u = DMatrix::from_column_slice(n, n, y);
        let d = a * u + b;
        dy.copy_from_slice(d.as_slice());
        Ok(())
    };
    let states = dopri(rhs, &y0, grid, cfg)?;
    Ok(states
        .into_iter()
        .map(|y| DMatrix::from_column_slice(n, n, &y))
        .collect())
}

/// `exp((∫₀ᵗ a)·C)`, the solution for `Ã(t) = a(t)·C`.
pub fn commuting_solution<F: Fn(f64) -> f64>(
    a: F,
    c: &DMatrix<f64>,
    t: f64,
) -> Result<DMatrix<f64>, ReferenceError> {
    if !(0.0..=1.0).contains(&t) {
        return Err(ReferenceError::Domain { t, s: 0.0 });
    }
    let integral = gauss_rule(32)?.mapped(0.0, t).integrate(a);
    Ok((c * integral).exp())
}

/// `∫ₛᵗ f(t,τ)·g(τ,s) dτ` by a `q`-point Gauss rule.
pub fn volterra_compose<F, G>(f: F, g: G, t: f64, s: f64, q: usize) -> Result<f64, ReferenceError>
where
    F: Fn(f64, f64) -> f64,
    G: Fn(f64, f64) -> f64,
{
    if !(0.0..=1.0).contains(&t) || !(0.0..=1.0).contains(&s) || t < s {
        return Err(ReferenceError::Domain { t, s });
    }
    if t == s {
        return Ok(0.0);
    }
    Ok(gauss_rule(q)?.mapped(s, t).integrate(|x| f(t, x) * g(x, s)))
}
