//! Problem definitions: scalar expressions in `t` and JSON problem files.
//!
//! A problem file looks like
//!
//! ```json
//! { "n": 2, "a": [["0", "1"], ["-(1+t^2)", "0"]], "m": 60, "grid": [0, 0.5, 1] }
//! ```
//!
//! with optional fields `b` (forcing, same shape as `a`), `m` (default 40),
//! `grid` (default 11 uniform points), `rel_tol` (default `1e-12`) and
//! `neumann` (default `false`). Entries may be strings or plain numbers.

mod expr;

pub use expr::{
    parse_expr, BinOp, EvalError, Expr, ExprKind, Func, ParseError, ParseErrorKind, Span, MAX_DEPTH,
};

use serde::Deserialize;
use thiserror::Error;

use crate::solver::{uniform_grid, Coefficient, ODEProblem};

pub const DEFAULT_M: usize = 40;
pub const DEFAULT_GRID_POINTS: usize = 11;
pub const DEFAULT_REL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DslError {
    #[error("malformed document at {path} (line {line}, column {column}): {message}")]
    Json {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{path}: {message}")]
    Schema { path: String, message: String },
    #[error("{path}: {source}")]
    Expression { path: String, source: ParseError },
    #[error("{path}: {source}")]
    Constant { path: String, source: EvalError },
}

/// A matrix entry: an expression string or a bare number.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum Entry {
    Number(f64),
    Text(String),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemDocument {
    pub n: usize,
    pub a: Vec<Vec<Entry>>,
    #[serde(default)]
    pub b: Option<Vec<Vec<Entry>>>,
    #[serde(default)]
    pub m: Option<usize>,
    #[serde(default)]
    pub grid: Option<Vec<f64>>,
    #[serde(default)]
    pub rel_tol: Option<f64>,
    #[serde(default)]
    pub neumann: bool,
}

/// A parsed problem plus the run settings from the same file.
#[derive(Debug, Clone)]
pub struct LoadedProblem {
    pub problem: ODEProblem,
    pub grid: Vec<f64>,
    pub rel_tol: f64,
    pub neumann: bool,
}

fn schema(path: &str, message: impl Into<String>) -> DslError {
    DslError::Schema {
        path: path.to_string(),
        message: message.into(),
    }
}

fn parse_grid(
    name: &str,
    n: usize,
    grid: &[Vec<Entry>],
) -> Result<Vec<Vec<Coefficient>>, DslError> {
    let upper = name.to_uppercase();
    if grid.iter().any(|row| row.len() != grid.len()) {
        return Err(schema(name, format!("{upper} must be square")));
    }
    if grid.len() != n {
        return Err(schema(
            name,
            format!(
                "{upper} must be {n}×{n} to match n, got {0}×{0}",
                grid.len()
            ),
        ));
    }
    grid.iter()
        .enumerate()
        .map(|(i, row)| {
            row.iter()
                .enumerate()
                .map(|(j, e)| {
                    let path = format!("{name}[{i}][{j}]");
                    match e {
                        Entry::Number(v) => Ok(Coefficient::constant(*v)),
                        Entry::Text(src) => {
                            let expr = parse_expr(src).map_err(|source| DslError::Expression {
                                path: path.clone(),
                                source,
                            })?;
                            Coefficient::from_expr(expr)
                                .map_err(|source| DslError::Constant { path, source })
                        }
                    }
                })
                .collect()
        })
        .collect()
}

impl ProblemDocument {
    /// Validates the document and builds the problem, filling defaults.
    pub fn into_problem(self) -> Result<LoadedProblem, DslError> {
        if self.n == 0 {
            return Err(schema("n", "n must be at least 1"));
        }
        let m = self.m.unwrap_or(DEFAULT_M);
        if m < 2 {
            return Err(schema("m", format!("m must be at least 2, got {m}")));
        }
        let grid = self
            .grid
            .unwrap_or_else(|| uniform_grid(DEFAULT_GRID_POINTS));
        if grid.is_empty() {
            return Err(schema("grid", "grid must not be empty"));
        }
        for (i, t) in grid.iter().enumerate() {
            if !(0.0..=1.0).contains(t) {
                return Err(schema(&format!("grid[{i}]"), format!("{t} outside [0, 1]")));
            }
            if i > 0 && *t < grid[i - 1] {
                return Err(schema(
                    &format!("grid[{i}]"),
                    "grid must be sorted ascending",
                ));
            }
        }
        let rel_tol = self.rel_tol.unwrap_or(DEFAULT_REL_TOL);
        if !(rel_tol > 0.0 && rel_tol.is_finite()) {
            return Err(schema("rel_tol", "rel_tol must be positive"));
        }
        let a = parse_grid("a", self.n, &self.a)?;
        let mut problem = ODEProblem::new(a, m).map_err(|e| schema("a", e.to_string()))?;
        if let Some(b) = &self.b {
            let b = parse_grid("b", self.n, b)?;
            problem = problem
                .with_forcing(b)
                .map_err(|e| schema("b", e.to_string()))?;
        }
        Ok(LoadedProblem {
            problem,
            grid,
            rel_tol,
            neumann: self.neumann,
        })
    }
}

/// Parses a JSON problem document.
pub fn load_problem(src: &str) -> Result<LoadedProblem, DslError> {
    let de = &mut serde_json::Deserializer::from_str(src);
    let doc: ProblemDocument = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        DslError::Json {
            path,
            line: inner.line(),
            column: inner.column(),
            message: inner.to_string(),
        }
    })?;
    doc.into_problem()
}
