//! Spectral solution of non-autonomous linear ODEs through the ⋆-product of
//! Θ-kernels and its Legendre coefficient-matrix representation.
//!
//! * [`legendre`]: orthonormal shifted Legendre basis and Gauss rules.
//! * [`coeff`]: coefficient matrices of kernels `f̃(t,s)·Θ(t−s)`.
//! * [`star`]: exact ⋆-products of polynomial distributions, used as an oracle.
//! * [`solver`]: block assembly, direct and Neumann solves, evaluation.
//! * [`reference`]: adaptive Runge–Kutta and closed-form references.
//! * [`dsl`]: expression parser and JSON problem files.
//! * [`verify`]: self-checks used by the command-line `verify` command.

pub mod coeff;
pub mod dsl;
pub mod legendre;
pub mod reference;
pub mod solver;
pub mod star;
pub mod verify;

use std::time::Instant;

use thiserror::Error;

use crate::reference::{IntegratorConfig, ReferenceError};
use crate::solver::{ODEProblem, SolveOptions, SolverError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error(transparent)]
    Legendre(#[from] legendre::LegendreError),
    #[error(transparent)]
    Coeff(#[from] coeff::CoeffError),
    #[error(transparent)]
    Star(#[from] star::StarError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Reference(#[from] ReferenceError),
    #[error(transparent)]
    Dsl(#[from] dsl::DslError),
}

/// One row of a convergence study.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceRow {
    pub m: usize,
    /// Largest entrywise deviation from the reference on the grid.
    pub max_error: f64,
    pub solve_seconds: f64,
}

/// Solves `problem` at every `M` in `m_list` and compares with the
/// reference integrator on `grid`.
pub fn convergence_study(
    problem: &ODEProblem,
    grid: &[f64],
    m_list: &[usize],
    oracle: &IntegratorConfig,
) -> Result<Vec<ConvergenceRow>, Error> {
    let reference = reference::integrate(problem, grid, oracle)?;
    m_list
        .iter()
        .map(|&m| {
            let p = problem.clone().with_order(m)?;
            let start = Instant::now();
            let report = solver::solve_ode(&p, grid, &SolveOptions::default())?;
            let solve_seconds = start.elapsed().as_secs_f64();
            Ok(ConvergenceRow {
                m,
                max_error: report.max_abs_diff(&reference),
                solve_seconds,
            })
        })
        .collect()
}

/// Least-squares slope of `ln(error)` against `M` over the rows whose
/// error is still above `floor` (the first row at or below it included).
pub fn log_error_slope(rows: &[ConvergenceRow], floor: f64) -> Option<f64> {
    let mut pts = Vec::new();
    for r in rows {
        pts.push((r.m as f64, r.max_error.max(f64::MIN_POSITIVE).ln()));
        if r.max_error < floor {
            break;
        }
    }
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some(sxy / sxx)
}
