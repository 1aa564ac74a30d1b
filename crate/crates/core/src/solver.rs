//! Spectral solution of `U′(t) = Ã(t)·U(t) + B̃(t)`, `U(0) = I`.
//!
//! In ⋆-form the problem is a linear Volterra equation in the kernels
//! `A = ÃΘ` and `B = B̃Θ`. Truncating every kernel to `M` Legendre modes
//! turns it into the dense linear system
//!
//! ```text
//! (I − 𝐀) X = I + 𝐁,      𝐀 = [F_kl],  𝐁 = [G_kl]
//! ```
//!
//! with one `M × M` block per matrix entry. The solution at `(t, 0)` is
//! read off as
//!
//! ```text
//! U(t) = I + (I_N ⊗ φ_M(t)ᵀ T_M) (I − 𝐀)⁻¹ (𝛂 + 𝛃)
//! ```
//!
//! where block `(k, j)` of `𝛂` (resp. `𝛃`) holds the Legendre coefficients
//! of `Ã_kj` (resp. `B̃_kj(·, 0)`). This is the same quantity as the plain
//! contraction `(I_N ⊗ φ_M(t)ᵀ T_M) X (I_N ⊗ φ_M(0))` in exact arithmetic,
//! but it avoids multiplying the non-decaying vector `φ_M(0)` into the
//! truncated trailing columns of `X`, which otherwise leaves an `O(1)` error.
//! [`evaluate_solution_literal`] keeps the plain form for comparison.

use std::fmt;
use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rayon::prelude::*;
use thiserror::Error;

use crate::coeff::{self, CoeffError};
use crate::dsl::{EvalError, Expr};
use crate::legendre::{self, default_quadrature_order, try_project_univariate, LegendreError};

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type BivariateFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("entry ({row}, {col}) of {matrix}: {source}")]
    Assembly {
        matrix: char,
        row: usize,
        col: usize,
        source: CoeffError,
    },
    #[error("system matrix I − A is numerically singular (condition estimate {condition:e})")]
    Singular { condition: f64 },
    #[error("evaluation point {0} outside [0, 1]")]
    Domain(f64),
    #[error("grid must be non-empty, sorted and inside [0, 1]; offending value {0}")]
    BadGrid(f64),
    #[error("block dimensions disagree: {0}")]
    Shape(String),
    #[error("Neumann term {term} overflowed")]
    Overflow { term: usize },
    #[error("no agreement within {tol:e} up to M = {m} (last gap {gap:e})")]
    NoConvergence { m: usize, tol: f64, gap: f64 },
    #[error(transparent)]
    Basis(#[from] LegendreError),
}

/// A scalar function of `t` entering `Ã` or `B̃`.
#[derive(Clone)]
pub enum Coefficient {
    Zero,
    Constant(f64),
    Expr(Arc<Expr>),
    Function(ScalarFn),
}

impl fmt::Debug for Coefficient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Coefficient::Zero => write!(f, "Zero"),
            Coefficient::Constant(c) => write!(f, "Constant({c})"),
            Coefficient::Expr(e) => write!(f, "Expr({e})"),
            Coefficient::Function(_) => write!(f, "Function(..)"),
        }
    }
}

impl Coefficient {
    /// Wraps an expression, folding `t`-free ones to constants.
    pub fn from_expr(expr: Expr) -> Result<Self, EvalError> {
        match expr.constant_value() {
            Some(v) => Ok(Self::constant(v?)),
            None => Ok(Coefficient::Expr(Arc::new(expr))),
        }
    }

    pub fn constant(c: f64) -> Self {
        if c == 0.0 {
            Coefficient::Zero
        } else {
            Coefficient::Constant(c)
        }
    }

    pub fn function<F: Fn(f64) -> f64 + Send + Sync + 'static>(f: F) -> Self {
        Coefficient::Function(Arc::new(f))
    }

    pub fn eval(&self, t: f64) -> Result<f64, EvalError> {
        match self {
            Coefficient::Zero => Ok(0.0),
            Coefficient::Constant(c) => Ok(*c),
            Coefficient::Expr(e) => e.eval(t),
            Coefficient::Function(f) => Ok(f(t)),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Coefficient::Zero)
    }
}

impl From<f64> for Coefficient {
    fn from(c: f64) -> Self {
        Coefficient::constant(c)
    }
}

/// Inhomogeneous term.
#[derive(Clone)]
pub enum Forcing {
    /// `B̃(t)`, one scalar function per entry.
    Univariate(Vec<Vec<Coefficient>>),
    /// `B̃(t, s)`; `None` entries are zero.
    Bivariate(Vec<Vec<Option<BivariateFn>>>),
}

impl fmt::Debug for Forcing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Forcing::Univariate(g) => f.debug_tuple("Univariate").field(g).finish(),
            Forcing::Bivariate(g) => {
                let shape: Vec<Vec<&str>> = g
                    .iter()
                    .map(|r| {
                        r.iter()
                            .map(|e| if e.is_some() { "f" } else { "0" })
                            .collect()
                    })
                    .collect();
                f.debug_tuple("Bivariate").field(&shape).finish()
            }
        }
    }
}

impl Forcing {
    fn dims(&self) -> (usize, Vec<usize>) {
        match self {
            Forcing::Univariate(g) => (g.len(), g.iter().map(Vec::len).collect()),
            Forcing::Bivariate(g) => (g.len(), g.iter().map(Vec::len).collect()),
        }
    }

    /// `B̃_kj(t, 0)`.
    fn at_origin(&self, k: usize, j: usize, t: f64) -> Result<f64, EvalError> {
        match self {
            Forcing::Univariate(g) => g[k][j].eval(t),
            Forcing::Bivariate(g) => Ok(g[k][j].as_ref().map_or(0.0, |f| f(t, 0.0))),
        }
    }
}

/// `U′ = Ã U + B̃` on `[0, 1]` with `U(0) = I`, truncated at `M` modes.
#[derive(Debug, Clone)]
pub struct ODEProblem {
    n: usize,
    a: Vec<Vec<Coefficient>>,
    b: Option<Forcing>,
    m: usize,
    q: usize,
}

fn check_square(name: &str, n: usize, rows: usize, cols: &[usize]) -> Result<(), SolverError> {
    if rows != n || cols.iter().any(|c| *c != n) {
        return Err(SolverError::InvalidProblem(format!(
            "{name} must be {n}×{n}"
        )));
    }
    Ok(())
}

impl ODEProblem {
    /// Homogeneous problem with generator `a` (square grid).
    pub fn new(a: Vec<Vec<Coefficient>>, m: usize) -> Result<Self, SolverError> {
        let n = a.len();
        if n == 0 {
            return Err(SolverError::InvalidProblem(
                "system size must be at least 1".into(),
            ));
        }
        let cols: Vec<usize> = a.iter().map(Vec::len).collect();
        check_square("A", n, n, &cols)?;
        if m < 2 {
            return Err(SolverError::InvalidProblem(format!(
                "truncation order must be at least 2, got {m}"
            )));
        }
        Ok(Self {
            n,
            a,
            b: None,
            m,
            q: default_quadrature_order(m),
        })
    }

    /// Scalar problem `u′ = a(t)·u`.
    pub fn scalar(a: Coefficient, m: usize) -> Result<Self, SolverError> {
        Self::new(vec![vec![a]], m)
    }

    pub fn with_forcing(self, b: Vec<Vec<Coefficient>>) -> Result<Self, SolverError> {
        self.with(Forcing::Univariate(b))
    }

    pub fn with_bivariate_forcing(
        self,
        b: Vec<Vec<Option<BivariateFn>>>,
    ) -> Result<Self, SolverError> {
        self.with(Forcing::Bivariate(b))
    }

    fn with(mut self, b: Forcing) -> Result<Self, SolverError> {
        let (rows, cols) = b.dims();
        check_square("B", self.n, rows, &cols)?;
        self.b = Some(b);
        Ok(self)
    }

    /// Changes `M`; the quadrature order follows unless set explicitly later.
    pub fn with_order(mut self, m: usize) -> Result<Self, SolverError> {
        if m < 2 {
            return Err(SolverError::InvalidProblem(format!(
                "truncation order must be at least 2, got {m}"
            )));
        }
        self.m = m;
        self.q = default_quadrature_order(m);
        Ok(self)
    }

    pub fn with_quadrature(mut self, q: usize) -> Result<Self, SolverError> {
        if q == 0 {
            return Err(SolverError::InvalidProblem(
                "quadrature order must be positive".into(),
            ));
        }
        self.q = q;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn quadrature_order(&self) -> usize {
        self.q
    }

    pub fn a(&self) -> &[Vec<Coefficient>] {
        &self.a
    }

    pub fn b(&self) -> Option<&Forcing> {
        self.b.as_ref()
    }

    pub fn is_homogeneous(&self) -> bool {
        self.b.is_none()
    }

    /// `Ã(t)`.
    pub fn a_at(&self, t: f64) -> Result<DMatrix<f64>, EvalError> {
        let mut out = DMatrix::zeros(self.n, self.n);
        for k in 0..self.n {
            for j in 0..self.n {
                out[(k, j)] = self.a[k][j].eval(t)?;
            }
        }
        Ok(out)
    }

    /// `B̃(t)` (or `B̃(t, 0)`); zero when homogeneous.
    pub fn b_at(&self, t: f64) -> Result<DMatrix<f64>, EvalError> {
        let mut out = DMatrix::zeros(self.n, self.n);
        if let Some(b) = &self.b {
            for k in 0..self.n {
                for j in 0..self.n {
                    out[(k, j)] = b.at_origin(k, j, t)?;
                }
            }
        }
        Ok(out)
    }
}

/// `N × N` grid of `M × M` blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockSystem {
    n: usize,
    m: usize,
    // row-major: block (k, l) at k * n + l
    blocks: Vec<DMatrix<f64>>,
}

impl BlockSystem {
    pub fn zeros(n: usize, m: usize) -> Self {
        Self {
            n,
            m,
            blocks: vec![DMatrix::zeros(m, m); n * n],
        }
    }

    pub fn identity(n: usize, m: usize) -> Self {
        Self::from_flat(n, m, &DMatrix::identity(n * m, n * m)).expect("square by construction")
    }

    pub fn from_blocks(n: usize, m: usize, blocks: Vec<DMatrix<f64>>) -> Result<Self, SolverError> {
        if blocks.len() != n * n || blocks.iter().any(|b| b.shape() != (m, m)) {
            return Err(SolverError::Shape(format!(
                "expected {} blocks of size {m}×{m}",
                n * n
            )));
        }
        Ok(Self { n, m, blocks })
    }

    /// Splits an `NM × NM` matrix into blocks.
    pub fn from_flat(n: usize, m: usize, flat: &DMatrix<f64>) -> Result<Self, SolverError> {
        if flat.shape() != (n * m, n * m) {
            return Err(SolverError::Shape(format!(
                "expected {0}×{0}, got {1}×{2}",
                n * m,
                flat.nrows(),
                flat.ncols()
            )));
        }
        let mut blocks = Vec::with_capacity(n * n);
        for k in 0..n {
            for l in 0..n {
                blocks.push(flat.view((k * m, l * m), (m, m)).into_owned());
            }
        }
        Ok(Self { n, m, blocks })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn block(&self, k: usize, l: usize) -> &DMatrix<f64> {
        &self.blocks[k * self.n + l]
    }

    /// Block `(k, l)` occupies rows `kM..kM+M` and columns `lM..lM+M`.
    pub fn flatten(&self) -> DMatrix<f64> {
        let (n, m) = (self.n, self.m);
        let mut out = DMatrix::zeros(n * m, n * m);
        for k in 0..n {
            for l in 0..n {
                out.view_mut((k * m, l * m), (m, m))
                    .copy_from(self.block(k, l));
            }
        }
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.blocks
            .iter()
            .map(|b| b.norm_squared())
            .sum::<f64>()
            .sqrt()
    }
}

/// Legendre coefficients of one grid entry and its kernel block.
struct Projected {
    alpha: Vec<f64>,
    block: DMatrix<f64>,
}

fn project_coefficient(c: &Coefficient, m: usize, q: usize) -> Result<Projected, CoeffError> {
    match c {
        Coefficient::Zero => Ok(Projected {
            alpha: vec![0.0; m],
            block: DMatrix::zeros(m, m),
        }),
        Coefficient::Constant(a) => {
            let mut alpha = vec![0.0; m];
            alpha[0] = *a;
            Ok(Projected {
                alpha,
                block: coeff::theta_matrix(m)?.scaled(*a).into_entries(),
            })
        }
        _ => {
            let alpha = try_project_univariate(|t| c.eval(t), m, q)?;
            let block = coeff::from_univariate(&alpha, m)?.into_entries();
            Ok(Projected { alpha, block })
        }
    }
}

fn project_a(problem: &ODEProblem) -> Result<Vec<Projected>, SolverError> {
    let (n, m, q) = (problem.n, problem.m, problem.q);
    (0..n * n)
        .into_par_iter()
        .map(|i| {
            let (row, col) = (i / n, i % n);
            project_coefficient(&problem.a[row][col], m, q).map_err(|source| {
                SolverError::Assembly {
                    matrix: 'A',
                    row,
                    col,
                    source,
                }
            })
        })
        .collect()
}

fn project_b(problem: &ODEProblem) -> Result<Option<Vec<Projected>>, SolverError> {
    let (n, m, q) = (problem.n, problem.m, problem.q);
    let Some(b) = &problem.b else {
        return Ok(None);
    };
    let out = (0..n * n)
        .into_par_iter()
        .map(|i| {
            let (row, col) = (i / n, i % n);
            let wrap = |source| SolverError::Assembly {
                matrix: 'B',
                row,
                col,
                source,
            };
            match b {
                Forcing::Univariate(g) => project_coefficient(&g[row][col], m, q).map_err(wrap),
                Forcing::Bivariate(g) => match &g[row][col] {
                    None => Ok(Projected {
                        alpha: vec![0.0; m],
                        block: DMatrix::zeros(m, m),
                    }),
                    Some(f) => {
                        let block = coeff::bivariate_quadrature(|t, s| f(t, s), m, q)
                            .map_err(wrap)?
                            .into_entries();
                        let alpha = try_project_univariate(|t| b.at_origin(row, col, t), m, q)
                            .map_err(|e| wrap(e.into()))?;
                        Ok(Projected { alpha, block })
                    }
                },
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Some(out))
}

fn blocks_of(n: usize, m: usize, projected: &[Projected]) -> BlockSystem {
    BlockSystem {
        n,
        m,
        blocks: projected.iter().map(|p| p.block.clone()).collect(),
    }
}

/// `𝐀 = [F_kl]` with `F_kl` the coefficient matrix of `Ã_kl(t)·Θ(t−s)`.
pub fn assemble_a(problem: &ODEProblem) -> Result<BlockSystem, SolverError> {
    Ok(blocks_of(problem.n, problem.m, &project_a(problem)?))
}

/// `𝐁 = [G_kl]` for the forcing; zero when the problem is homogeneous.
pub fn assemble_b(problem: &ODEProblem) -> Result<BlockSystem, SolverError> {
    Ok(match project_b(problem)? {
        Some(p) => blocks_of(problem.n, problem.m, &p),
        None => BlockSystem::zeros(problem.n, problem.m),
    })
}

/// `X = (I − 𝐀)⁻¹(I + 𝐁)` with diagnostics.
#[derive(Debug, Clone)]
pub struct DirectSolution {
    pub x: BlockSystem,
    /// `‖(I − 𝐀)X − (I + 𝐁)‖_F`.
    pub residual_norm: f64,
    /// `‖I − 𝐀‖₁ · ‖(I − 𝐀)⁻¹‖₁`.
    pub condition_estimate: f64,
}

fn one_norm(a: &DMatrix<f64>) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn check_same_shape(a: &BlockSystem, b: &BlockSystem) -> Result<(), SolverError> {
    if a.n != b.n || a.m != b.m {
        return Err(SolverError::Shape(format!(
            "{}×{} blocks of size {} vs {}×{} blocks of size {}",
            a.n, a.n, a.m, b.n, b.n, b.m
        )));
    }
    Ok(())
}

struct Factored {
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    system: DMatrix<f64>,
    condition: f64,
}

fn factor(a: &BlockSystem) -> Result<Factored, SolverError> {
    let nm = a.n * a.m;
    let system = DMatrix::identity(nm, nm) - a.flatten();
    let lu = system.clone().lu();
    let inverse = lu.try_inverse().ok_or(SolverError::Singular {
        condition: f64::INFINITY,
    })?;
    let condition = one_norm(&system) * one_norm(&inverse);
    if !condition.is_finite() || condition > 1e15 {
        return Err(SolverError::Singular { condition });
    }
    Ok(Factored {
        lu,
        system,
        condition,
    })
}

impl Factored {
    fn solve(&self, rhs: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64), SolverError> {
        let x = self.lu.solve(rhs).ok_or(SolverError::Singular {
            condition: self.condition,
        })?;
        let residual = (&self.system * &x - rhs).norm();
        Ok((x, residual))
    }
}

/// Solves `(I − 𝐀)X = I + 𝐁` by LU with partial pivoting.
pub fn solve_direct(a: &BlockSystem, b: &BlockSystem) -> Result<DirectSolution, SolverError> {
    check_same_shape(a, b)?;
    let f = factor(a)?;
    let nm = a.n * a.m;
    let rhs = DMatrix::identity(nm, nm) + b.flatten();
    let (x, residual_norm) = f.solve(&rhs)?;
    Ok(DirectSolution {
        x: BlockSystem::from_flat(a.n, a.m, &x)?,
        residual_norm,
        condition_estimate: f.condition,
    })
}

/// Partial Neumann sum `Σ_{k≤K} 𝐀ᵏ`.
#[derive(Debug, Clone)]
pub struct NeumannSum {
    pub sum: BlockSystem,
    /// Number of terms added, counting `𝐀⁰ = I`.
    pub terms: usize,
    /// Frobenius norm of the last term added.
    pub last_term_norm: f64,
}

/// `Σ_{k=0}^{K} 𝐀ᵏ`, stopping early once a term's Frobenius norm drops
/// below `tol`.
pub fn neumann_resolvent(
    a: &BlockSystem,
    k_max: usize,
    tol: f64,
) -> Result<NeumannSum, SolverError> {
    let nm = a.n * a.m;
    let flat = a.flatten();
    let mut term = DMatrix::<f64>::identity(nm, nm);
    let mut sum = term.clone();
    let mut terms = 1;
    let mut last = term.norm();
    while terms <= k_max && last >= tol {
        term = &flat * &term;
        last = term.norm();
        if !last.is_finite() {
            return Err(SolverError::Overflow { term: terms });
        }
        sum += &term;
        terms += 1;
    }
    Ok(NeumannSum {
        sum: BlockSystem::from_flat(a.n, a.m, &sum)?,
        terms,
        last_term_norm: last,
    })
}

/// Frobenius norms of `𝐀ᵏ` for `k = 0..=k_max`.
pub fn neumann_term_norms(a: &BlockSystem, k_max: usize) -> Vec<f64> {
    let nm = a.n * a.m;
    let flat = a.flatten();
    let mut term = DMatrix::<f64>::identity(nm, nm);
    let mut out = vec![term.norm()];
    for _ in 0..k_max {
        term = &flat * &term;
        out.push(term.norm());
    }
    out
}

/// `‖(I + 𝐂_K)(I − 𝐀) − I‖_F` with `𝐂_K = Σ_{k=1}^{K} 𝐀ᵏ`.
pub fn resolvent_identity_defect(a: &BlockSystem, k: usize) -> Result<f64, SolverError> {
    let nm = a.n * a.m;
    let partial = neumann_resolvent(a, k, 0.0)?.sum.flatten();
    let id = DMatrix::<f64>::identity(nm, nm);
    Ok((partial * (&id - a.flatten()) - id).norm())
}

/// Coefficients `V = (I_N ⊗ T_M)(I − 𝐀)⁻¹(𝛂 + 𝛃)`, an `NM × N` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionCoefficients {
    n: usize,
    m: usize,
    v: DMatrix<f64>,
}

impl SolutionCoefficients {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn coefficients(&self) -> &DMatrix<f64> {
        &self.v
    }
}

/// `[𝛂 + 𝛃]`: block `(k, j)` holds the coefficients of `Ã_kj + B̃_kj(·, 0)`.
fn initial_columns(n: usize, m: usize, a: &[Projected], b: Option<&[Projected]>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(n * m, n);
    for k in 0..n {
        for j in 0..n {
            for i in 0..m {
                let mut v = a[k * n + j].alpha[i];
                if let Some(b) = b {
                    v += b[k * n + j].alpha[i];
                }
                out[(k * m + i, j)] = v;
            }
        }
    }
    out
}

fn apply_theta(n: usize, m: usize, w: &DMatrix<f64>) -> Result<DMatrix<f64>, SolverError> {
    let t = coeff::theta_matrix(m).map_err(|e| SolverError::Shape(e.to_string()))?;
    let mut v = DMatrix::zeros(n * m, w.ncols());
    for k in 0..n {
        let rows = t.entries() * w.rows(k * m, m);
        v.rows_mut(k * m, m).copy_from(&rows);
    }
    Ok(v)
}

/// `U(t) = I + (I_N ⊗ φ_M(t)ᵀ) V`.
pub fn evaluate_solution(c: &SolutionCoefficients, t: f64) -> Result<DMatrix<f64>, SolverError> {
    if !(0.0..=1.0).contains(&t) {
        return Err(SolverError::Domain(t));
    }
    let phi = legendre::basis_vector(c.m, t)?;
    let mut out = DMatrix::identity(c.n, c.n);
    for k in 0..c.n {
        for j in 0..c.n {
            let dot: f64 = (0..c.m).map(|i| phi[i] * c.v[(k * c.m + i, j)]).sum();
            out[(k, j)] += dot;
        }
    }
    Ok(out)
}

/// `(I_N ⊗ φ_M(t)ᵀ T_M) X (I_N ⊗ φ_M(0))`, applied to `X` directly.
///
/// Kept for comparison: the trailing rows of `X φ_M(0)` carry an `O(1)`
/// truncation error, so this form does not converge in `M`.
pub fn evaluate_solution_literal(x: &BlockSystem, t: f64) -> Result<DMatrix<f64>, SolverError> {
    if !(0.0..=1.0).contains(&t) {
        return Err(SolverError::Domain(t));
    }
    let (n, m) = (x.n, x.m);
    let left = legendre::basis_vector(m, t)?;
    let t_mat = coeff::theta_matrix(m).map_err(|e| SolverError::Shape(e.to_string()))?;
    let row = DMatrix::from_row_slice(1, m, &left) * t_mat.entries();
    let right = DMatrix::from_column_slice(m, 1, &legendre::basis_vector(m, 0.0)?);
    let mut out = DMatrix::zeros(n, n);
    for k in 0..n {
        for j in 0..n {
            out[(k, j)] = (&row * x.block(k, j) * &right)[(0, 0)];
        }
    }
    Ok(out)
}

fn check_grid(grid: &[f64]) -> Result<(), SolverError> {
    if grid.is_empty() {
        return Err(SolverError::BadGrid(f64::NAN));
    }
    let mut prev = f64::NEG_INFINITY;
    for &t in grid {
        if !(0.0..=1.0).contains(&t) || t < prev {
            return Err(SolverError::BadGrid(t));
        }
        prev = t;
    }
    Ok(())
}

/// `n` equally spaced points from 0 to 1.
pub fn uniform_grid(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeumannOptions {
    pub max_terms: usize,
    pub tol: f64,
}

impl Default for NeumannOptions {
    fn default() -> Self {
        Self {
            max_terms: 200,
            tol: 1e-17,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SolveOptions {
    /// Cross-check the direct solve against the Neumann series.
    pub neumann: Option<NeumannOptions>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Timings {
    pub assemble: Duration,
    pub solve: Duration,
    pub evaluate: Duration,
    pub neumann: Option<Duration>,
}

impl Timings {
    pub fn total(&self) -> Duration {
        self.assemble + self.solve + self.evaluate + self.neumann.unwrap_or_default()
    }
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub m: usize,
    pub grid: Vec<f64>,
    /// `U(t, 0)` at each grid point, in grid order.
    pub values: Vec<DMatrix<f64>>,
    pub residual_norm: f64,
    /// `‖Σ 𝐀ᵏ (I + 𝐁) − X‖_F` when requested.
    pub neumann_gap: Option<f64>,
    pub neumann_terms: Option<usize>,
    pub condition_estimate: Option<f64>,
    pub coefficients: SolutionCoefficients,
    pub timings: Timings,
}

impl SolveReport {
    /// Largest entrywise difference to another set of values on the same grid.
    pub fn max_abs_diff(&self, other: &[DMatrix<f64>]) -> f64 {
        self.values
            .iter()
            .zip(other)
            .map(|(a, b)| (a - b).amax())
            .fold(0.0, f64::max)
    }
}

/// Assemble, solve and evaluate on `grid`.
pub fn solve_ode(
    problem: &ODEProblem,
    grid: &[f64],
    options: &SolveOptions,
) -> Result<SolveReport, SolverError> {
    check_grid(grid)?;
    let (n, m) = (problem.n, problem.m);

    let start = Instant::now();
    let pa = project_a(problem)?;
    let pb = project_b(problem)?;
    let a = blocks_of(n, m, &pa);
    let b = pb.as_ref().map(|p| blocks_of(n, m, p));
    let init = initial_columns(n, m, &pa, pb.as_deref());
    let assemble = start.elapsed();

    let start = Instant::now();
    let f = factor(&a)?;
    let nm = n * m;
    let mut rhs = DMatrix::identity(nm, nm);
    if let Some(b) = &b {
        rhs += b.flatten();
    }
    let (x, residual_norm) = f.solve(&rhs)?;
    let (w, _) = f.solve(&init)?;
    let coefficients = SolutionCoefficients {
        n,
        m,
        v: apply_theta(n, m, &w)?,
    };
    let solve = start.elapsed();

    let (neumann_gap, neumann_terms, neumann_time) = match options.neumann {
        Some(opts) => {
            let start = Instant::now();
            let series = neumann_resolvent(&a, opts.max_terms, opts.tol)?;
            let gap = (series.sum.flatten() * &rhs - &x).norm();
            (Some(gap), Some(series.terms), Some(start.elapsed()))
        }
        None => (None, None, None),
    };

    let start = Instant::now();
    let values = grid
        .iter()
        .map(|&t| evaluate_solution(&coefficients, t))
        .collect::<Result<Vec<_>, _>>()?;
    let evaluate = start.elapsed();

    Ok(SolveReport {
        m,
        grid: grid.to_vec(),
        values,
        residual_norm,
        neumann_gap,
        neumann_terms,
        condition_estimate: Some(f.condition),
        coefficients,
        timings: Timings {
            assemble,
            solve,
            evaluate,
            neumann: neumann_time,
        },
    })
}

/// Doubles `M` from the problem's value until two successive solutions
/// agree on the grid within `tol`, up to `m_max`.
pub fn solve_adaptive(
    problem: &ODEProblem,
    grid: &[f64],
    tol: f64,
    m_max: usize,
    options: &SolveOptions,
) -> Result<SolveReport, SolverError> {
    let mut prev = solve_ode(problem, grid, options)?;
    let mut gap = f64::INFINITY;
    let mut m = problem.m;
    while 2 * m <= m_max {
        m *= 2;
        let next = solve_ode(&problem.clone().with_order(m)?, grid, options)?;
        gap = next.max_abs_diff(&prev.values);
        if gap <= tol {
            return Ok(next);
        }
        prev = next;
    }
    Err(SolverError::NoConvergence { m, tol, gap })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse_expr;

    fn expr(src: &str) -> Coefficient {
        Coefficient::from_expr(parse_expr(src).unwrap()).unwrap()
    }

    fn t_mat(m: usize) -> DMatrix<f64> {
        coeff::theta_matrix(m).unwrap().into_entries()
    }

    #[test]
    fn assembly_examples() {
        let p = ODEProblem::scalar(Coefficient::Zero, 6).unwrap();
        assert_eq!(assemble_a(&p).unwrap(), BlockSystem::zeros(1, 6));
        assert_eq!(assemble_b(&p).unwrap(), BlockSystem::zeros(1, 6));

        let p = ODEProblem::scalar(2.5.into(), 6).unwrap();
        assert!((assemble_a(&p).unwrap().block(0, 0) - t_mat(6) * 2.5).amax() < 1e-15);

        let rot = vec![
            vec![0.0.into(), 1.0.into()],
            vec![(-1.0).into(), 0.0.into()],
        ];
        let a = assemble_a(&ODEProblem::new(rot, 8).unwrap()).unwrap();
        assert!(a.block(0, 0).amax() == 0.0 && a.block(1, 1).amax() == 0.0);
        assert!((a.block(0, 1) - t_mat(8)).amax() < 1e-15);
        assert!((a.block(1, 0) + t_mat(8)).amax() < 1e-15);
    }

    #[test]
    fn forcing_blocks() {
        let p = ODEProblem::scalar(Coefficient::Zero, 8)
            .unwrap()
            .with_forcing(vec![vec![expr("t")]])
            .unwrap();
        let b = assemble_b(&p).unwrap();
        let expect = coeff::from_univariate(&[0.5, 0.5 / 3f64.sqrt()], 8).unwrap();
        assert!((b.block(0, 0) - expect.entries()).amax() < 1e-14);

        let p = ODEProblem::scalar(Coefficient::Zero, 8)
            .unwrap()
            .with_forcing(vec![vec![3.0.into()]])
            .unwrap();
        assert!((assemble_b(&p).unwrap().block(0, 0) - t_mat(8) * 3.0).amax() < 1e-15);
    }

    #[test]
    fn assembly_reports_entry() {
        let a = vec![
            vec![expr("t"), expr("log(t - 0.5)")],
            vec![Coefficient::Zero, Coefficient::Zero],
        ];
        let err = assemble_a(&ODEProblem::new(a, 8).unwrap()).unwrap_err();
        assert!(matches!(
            err,
            SolverError::Assembly {
                matrix: 'A',
                row: 0,
                col: 1,
                ..
            }
        ));
    }

    #[test]
    fn invalid_problems() {
        assert!(ODEProblem::new(vec![], 8).is_err());
        assert!(ODEProblem::new(vec![vec![1.0.into(), 0.0.into()]], 8).is_err());
        assert!(ODEProblem::scalar(1.0.into(), 1).is_err());
        let err = ODEProblem::scalar(1.0.into(), 8)
            .unwrap()
            .with_forcing(vec![vec![1.0.into()], vec![1.0.into()]])
            .unwrap_err();
        assert_eq!(err.to_string(), "invalid problem: B must be 1×1");
        let p = ODEProblem::scalar(1.0.into(), 8).unwrap();
        assert!(matches!(
            solve_ode(&p, &[0.5, 0.2], &SolveOptions::default()),
            Err(SolverError::BadGrid(_))
        ));
        assert!(solve_ode(&p, &[1.5], &SolveOptions::default()).is_err());
    }

    #[test]
    fn zero_system_gives_identity() {
        let z = BlockSystem::zeros(2, 5);
        let sol = solve_direct(&z, &z).unwrap();
        assert_eq!(sol.x, BlockSystem::identity(2, 5));
        assert_eq!(sol.residual_norm, 0.0);
        let series = neumann_resolvent(&z, 10, 1e-14).unwrap();
        assert_eq!(series.sum, BlockSystem::identity(2, 5));
        assert!(series.terms <= 2);
    }

    #[test]
    fn scalar_exponential() {
        let a = 0.8;
        let p = ODEProblem::scalar(a.into(), 40).unwrap();
        let grid = uniform_grid(5);
        let r = solve_ode(&p, &grid, &SolveOptions::default()).unwrap();
        for (t, u) in grid.iter().zip(&r.values) {
            assert!((u[(0, 0)] - (a * t).exp()).abs() < 1e-12, "t={t}");
        }
        assert!(r.residual_norm < 1e-12);
    }

    #[test]
    fn ramp_generator() {
        let p = ODEProblem::scalar(expr("t"), 40).unwrap();
        let r = solve_ode(&p, &[0.0, 1.0], &SolveOptions::default()).unwrap();
        assert!((r.values[0][(0, 0)] - 1.0).abs() < 1e-12);
        assert!((r.values[1][(0, 0)] - 0.5f64.exp()).abs() < 1e-9);
    }

    #[test]
    fn constant_forcing() {
        let b = 1.7;
        let p = ODEProblem::scalar(Coefficient::Zero, 40)
            .unwrap()
            .with_forcing(vec![vec![b.into()]])
            .unwrap();
        let r = solve_ode(&p, &[0.5], &SolveOptions::default()).unwrap();
        assert!((r.values[0][(0, 0)] - (1.0 + b / 2.0)).abs() < 1e-9);
    }

    #[test]
    fn bivariate_forcing_at_origin() {
        // only B̃(t, 0) = 2t matters for the solution at s = 0
        let f: BivariateFn = Arc::new(|t, s| 2.0 * t + s);
        let p = ODEProblem::scalar(Coefficient::Zero, 30)
            .unwrap()
            .with_bivariate_forcing(vec![vec![Some(f)]])
            .unwrap();
        let r = solve_ode(&p, &[0.6], &SolveOptions::default()).unwrap();
        assert!((r.values[0][(0, 0)] - (1.0 + 0.36)).abs() < 1e-9);
    }

    #[test]
    fn rotation_residual_and_neumann() {
        let rot = vec![
            vec![0.0.into(), 1.0.into()],
            vec![(-1.0).into(), 0.0.into()],
        ];
        let p = ODEProblem::new(rot, 40).unwrap();
        let opts = SolveOptions {
            neumann: Some(NeumannOptions::default()),
        };
        let r = solve_ode(&p, &[0.0, 0.5, 1.0], &opts).unwrap();
        assert!(r.residual_norm <= 1e-11);
        assert!(r.neumann_gap.unwrap() < 1e-10);
        for (t, u) in r.grid.iter().zip(&r.values) {
            let expect = DMatrix::from_row_slice(2, 2, &[t.cos(), t.sin(), -t.sin(), t.cos()]);
            assert!((u - expect).amax() < 1e-10);
        }
        let a = assemble_a(&p).unwrap();
        assert!(resolvent_identity_defect(&a, 30).unwrap() < 1e-12);
    }

    #[test]
    fn neumann_matches_direct() {
        let p = ODEProblem::scalar(1.0.into(), 40).unwrap();
        let a = assemble_a(&p).unwrap();
        let direct = solve_direct(&a, &BlockSystem::zeros(1, 40)).unwrap();
        let series = neumann_resolvent(&a, 60, 0.0).unwrap();
        assert_eq!(series.terms, 61);
        assert!((series.sum.flatten() - direct.x.flatten()).norm() <= 1e-10);

        let norms = neumann_term_norms(&a, 40);
        for w in norms[2..].windows(2) {
            assert!(w[1] < w[0] || w[1] < 1e-300);
        }
    }

    #[test]
    fn literal_evaluation_is_biased() {
        let p = ODEProblem::scalar(1.0.into(), 40).unwrap();
        let a = assemble_a(&p).unwrap();
        let x = solve_direct(&a, &BlockSystem::zeros(1, 40)).unwrap().x;
        let lit = evaluate_solution_literal(&x, 0.3).unwrap()[(0, 0)];
        let r = solve_ode(&p, &[0.5], &SolveOptions::default()).unwrap();
        let good = r.values[0][(0, 0)];
        assert!((good - 0.5f64.exp()).abs() < 1e-12);
        assert!((lit - 0.3f64.exp()).abs() > 1e-3);
        assert!(evaluate_solution_literal(&x, -0.1).is_err());
        assert!(evaluate_solution(&r.coefficients, 1.1).is_err());
    }

    #[test]
    fn adaptive_doubling() {
        let p = ODEProblem::scalar(expr("cos(3*t)"), 4).unwrap();
        let r = solve_adaptive(&p, &uniform_grid(5), 1e-10, 128, &SolveOptions::default()).unwrap();
        let exact = |t: f64| ((3.0 * t).sin() / 3.0).exp();
        for (t, u) in r.grid.iter().zip(&r.values) {
            assert!((u[(0, 0)] - exact(*t)).abs() < 1e-9);
        }
        assert!(matches!(
            solve_adaptive(&p, &[1.0], 1e-30, 16, &SolveOptions::default()),
            Err(SolverError::NoConvergence { .. })
        ));
    }

    #[test]
    fn flatten_round_trip() {
        let blocks: Vec<DMatrix<f64>> = (0..9)
            .map(|i| DMatrix::from_fn(3, 3, |r, c| (i * 9 + r * 3 + c) as f64))
            .collect();
        let b = BlockSystem::from_blocks(3, 3, blocks).unwrap();
        let flat = b.flatten();
        assert_eq!(flat[(3, 7)], b.block(1, 2)[(0, 1)]);
        assert_eq!(BlockSystem::from_flat(3, 3, &flat).unwrap(), b);
        assert!(BlockSystem::from_flat(2, 3, &flat).is_err());
    }
}
