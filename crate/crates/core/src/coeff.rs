//! Coefficient matrices of Θ-kernels in the orthonormal shifted Legendre basis.
//!
//! A kernel `f(t,s) = f̃(t,s)·Θ(t−s)` is represented by the `M × M` matrix
//! `F` with `f(t,s) ≈ φ_M(t)ᵀ F φ_M(s)`. Under this map the ⋆-product of two
//! kernels becomes the ordinary matrix product.
//!
//! Matrices for kernels depending on `t` only are assembled exactly as
//! `F = Mult(f̃) · T`, where `Mult(f̃)` is the (banded) multiplication
//! operator by the polynomial `f̃` and `T` the tridiagonal matrix of `Θ`.
//! General bivariate kernels go through [`bivariate_quadrature`], which is
//! independent of that factorization and serves as its oracle.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rayon::prelude::*;
use thiserror::Error;

use crate::legendre::{self, fill_basis, gauss_rule, LegendreError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CoeffError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("truncation order must be at least {min}, got {got}")]
    TooSmall { min: usize, got: usize },
    #[error("submatrix size {m} out of range 1..={size}")]
    SubmatrixBounds { m: usize, size: usize },
    #[error("kernel evaluation is not finite at (t, s) = ({t}, {s})")]
    NonFinite { t: f64, s: f64 },
    #[error("decay fit undefined: matrix has no nonzero entries")]
    UndefinedFit,
    #[error(transparent)]
    Basis(#[from] LegendreError),
}

/// How a coefficient matrix was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Theta,
    PkTheta(usize),
    UnivariateSeries,
    BivariateQuadrature,
    Product,
}

/// Least-squares fit `max_{|k−l|=d} |f_{kl}| ≈ K·ρᵈ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayFit {
    pub k: f64,
    pub rho: f64,
    /// Number of diagonals that entered the fit.
    pub points: usize,
    /// RMS residual of the fit in decades (log10 units).
    pub rms_residual: f64,
    /// Width of the fitted range of `|k−l|` in octaves.
    pub octaves: f64,
}

impl DecayFit {
    /// RMS residual in decades divided by the fitted span in octaves.
    /// Zero when fewer than three diagonals were fitted.
    pub fn residual_per_octave(&self) -> f64 {
        if self.points < 3 || self.octaves <= 0.0 {
            0.0
        } else {
            self.rms_residual / self.octaves
        }
    }
}

/// An `M × M` coefficient matrix of a Θ-kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    entries: DMatrix<f64>,
    provenance: Provenance,
    decay_fit: Option<DecayFit>,
}

impl KernelMatrix {
    pub fn new(entries: DMatrix<f64>, provenance: Provenance) -> Self {
        assert!(entries.is_square(), "coefficient matrices are square");
        Self {
            entries,
            provenance,
            decay_fit: None,
        }
    }

    pub fn zeros(m: usize, provenance: Provenance) -> Self {
        Self::new(DMatrix::zeros(m, m), provenance)
    }

    /// Truncation order `M`.
    pub fn order(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_entries(self) -> DMatrix<f64> {
        self.entries
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn decay_fit(&self) -> Option<&DecayFit> {
        self.decay_fit.as_ref()
    }

    /// Attaches the result of [`estimate_decay`].
    pub fn with_decay_fit(mut self) -> Result<Self, CoeffError> {
        self.decay_fit = Some(estimate_decay(&self)?);
        Ok(self)
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            entries: &self.entries * c,
            provenance: self.provenance,
            decay_fit: None,
        }
    }

    /// Largest `|k−l|` with `|f_{kl}| > tol`.
    pub fn bandwidth(&self, tol: f64) -> usize {
        let mut bw = 0;
        for ((k, l), v) in indexed(&self.entries) {
            if v.abs() > tol {
                bw = bw.max(k.abs_diff(l));
            }
        }
        bw
    }

    /// Largest ratio `|f_{kl}| / (fmax·√(2k+1)·√(2l+1))`; the entry bound
    /// for a kernel with `max|f̃| = fmax` holds iff this is at most one.
    pub fn envelope_ratio(&self, fmax: f64) -> f64 {
        indexed(&self.entries)
            .map(|((k, l), v)| {
                let env = fmax * ((2 * k + 1) as f64).sqrt() * ((2 * l + 1) as f64).sqrt();
                v.abs() / env
            })
            .fold(0.0, f64::max)
    }

    /// Row-major CSV with 17 significant digits per entry.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in self.entries.row_iter() {
            let line: Vec<String> = row.iter().map(|v| format_sig17(*v)).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }
}

/// Formats a float with 17 significant digits in scientific notation.
pub fn format_sig17(v: f64) -> String {
    let mut s = String::new();
    let _ = write!(s, "{v:.16e}");
    s
}

fn indexed(m: &DMatrix<f64>) -> impl Iterator<Item = ((usize, usize), f64)> + '_ {
    let rows = m.nrows();
    m.iter()
        .enumerate()
        .map(move |(i, v)| ((i % rows, i / rows), *v))
}

/// Entry `(k, l)` of the infinite matrix of `Θ(t−s)`.
fn theta_entry(k: usize, l: usize) -> f64 {
    if k == 0 && l == 0 {
        0.5
    } else if k == l + 1 {
        let kf = k as f64;
        0.5 / (4.0 * kf * kf - 1.0).sqrt()
    } else if l == k + 1 {
        let lf = l as f64;
        -0.5 / (4.0 * lf * lf - 1.0).sqrt()
    } else {
        0.0
    }
}

fn theta_block(rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, theta_entry)
}

/// Coefficient matrix `T` of `Θ(t−s)`: `T₀₀ = 1/2`,
/// `T_{k,k−1} = −T_{k−1,k} = 1/(2√(4k²−1))`, zero elsewhere.
pub fn theta_matrix(m: usize) -> Result<KernelMatrix, CoeffError> {
    if m == 0 {
        return Err(CoeffError::TooSmall { min: 1, got: m });
    }
    Ok(KernelMatrix::new(theta_block(m, m), Provenance::Theta))
}

/// `rows × cols` block of the multiplication operator by `Σ α_k p_k`.
fn multiplication_block(alpha: &[f64], rows: usize, cols: usize) -> DMatrix<f64> {
    let degree = alpha.len().saturating_sub(1) + rows + cols;
    let q = degree / 2 + 2;
    let rule = gauss_rule(q).expect("q >= 2");
    let width = alpha.len().max(rows).max(cols);
    let mut phi = vec![0.0; width];
    let mut out = DMatrix::zeros(rows, cols);
    for (x, w) in rule.iter() {
        fill_basis(x, &mut phi);
        let f: f64 = alpha.iter().zip(&phi).map(|(a, p)| a * p).sum();
        let wf = w * f;
        for j in 0..cols {
            let pj = wf * phi[j];
            for m in 0..rows {
                out[(m, j)] += phi[m] * pj;
            }
        }
    }
    out
}

fn series_entries(alpha: &[f64], m: usize) -> DMatrix<f64> {
    let last = alpha.iter().rposition(|a| *a != 0.0);
    match last {
        None => DMatrix::zeros(m, m),
        Some(0) => theta_block(m, m) * alpha[0],
        Some(last) => {
            // T is tridiagonal, so one extra row of it is enough for an
            // exact M×M block of the product.
            multiplication_block(&alpha[..=last], m, m + 1) * theta_block(m + 1, m)
        }
    }
}

/// `B^(k)`, the coefficient matrix of `p_k(t)·Θ(t−s)`; banded with
/// bandwidth `k + 1`.
pub fn pk_theta_matrix(k: usize, m: usize) -> Result<KernelMatrix, CoeffError> {
    if m == 0 {
        return Err(CoeffError::TooSmall { min: 1, got: m });
    }
    let mut alpha = vec![0.0; k + 1];
    alpha[k] = 1.0;
    Ok(KernelMatrix::new(
        series_entries(&alpha, m),
        Provenance::PkTheta(k),
    ))
}

/// `F = Σ_k α_k B^(k)`, the coefficient matrix of `f̃(t)·Θ(t−s)` for
/// `f̃ = Σ_k α_k p_k`.
pub fn from_univariate(alpha: &[f64], m: usize) -> Result<KernelMatrix, CoeffError> {
    if m == 0 {
        return Err(CoeffError::TooSmall { min: 1, got: m });
    }
    Ok(KernelMatrix::new(
        series_entries(alpha, m),
        Provenance::UnivariateSeries,
    ))
}

/// `f_{kl} ≈ ∫₀¹ p_k(t) ∫₀ᵗ f̃(t,s) p_l(s) ds dt` by nested Gauss rules,
/// the inner one mapped onto `[0, t]` for every outer node.
pub fn bivariate_quadrature<F>(f: F, m: usize, q: usize) -> Result<KernelMatrix, CoeffError>
where
    F: Fn(f64, f64) -> f64 + Sync,
{
    if m == 0 {
        return Err(CoeffError::TooSmall { min: 1, got: m });
    }
    let rule = gauss_rule(q)?;
    let inner: Vec<Vec<f64>> = rule
        .nodes()
        .par_iter()
        .map(|&t| -> Result<Vec<f64>, CoeffError> {
            let mut acc = vec![0.0; m];
            let mut phi = vec![0.0; m];
            for (x, w) in rule.iter() {
                let s = t * x;
                let v = f(t, s);
                if !v.is_finite() {
                    return Err(CoeffError::NonFinite { t, s });
                }
                fill_basis(s, &mut phi);
                let c = w * t * v;
                for (a, p) in acc.iter_mut().zip(&phi) {
                    *a += c * p;
                }
            }
            Ok(acc)
        })
        .collect::<Result<_, _>>()?;

    let mut out = DMatrix::zeros(m, m);
    let mut phi = vec![0.0; m];
    for ((t, w), row) in rule.iter().zip(&inner) {
        fill_basis(t, &mut phi);
        for l in 0..m {
            let c = w * row[l];
            for k in 0..m {
                out[(k, l)] += phi[k] * c;
            }
        }
    }
    Ok(KernelMatrix::new(out, Provenance::BivariateQuadrature))
}

/// ⋆-product of two kernels as the matrix product `FG`.
pub fn star_multiply(f: &KernelMatrix, g: &KernelMatrix) -> Result<KernelMatrix, CoeffError> {
    if f.order() != g.order() {
        return Err(CoeffError::DimensionMismatch {
            left: f.order(),
            right: g.order(),
        });
    }
    Ok(KernelMatrix::new(
        &f.entries * &g.entries,
        Provenance::Product,
    ))
}

/// `φ_M(t)ᵀ F φ_M(s)`.
pub fn evaluate_kernel(f: &KernelMatrix, t: f64, s: f64) -> Result<f64, CoeffError> {
    let m = f.order();
    let pt = legendre::basis_vector(m, t)?;
    let ps = legendre::basis_vector(m, s)?;
    let mut acc = 0.0;
    for (l, psl) in ps.iter().enumerate() {
        let col: f64 = f
            .entries
            .column(l)
            .iter()
            .zip(&pt)
            .map(|(a, b)| a * b)
            .sum();
        acc += col * psl;
    }
    Ok(acc)
}

/// `f(t, 0)` from the coefficient vector `a = F φ_M(0)`, keeping only the
/// first `M − truncation_margin(M)` coefficients.
///
/// The last rows of `F φ_M(0)` miss the columns beyond `M` of the infinite
/// matrix while `φ(0)` does not decay, which leaves an `O(1)` error in the
/// trailing coefficients of the plain product. The leading rows are
/// accurate up to the off-diagonal decay of `F`.
pub fn evaluate_kernel_from_origin(f: &KernelMatrix, t: f64) -> Result<f64, CoeffError> {
    let m = f.order();
    let keep = m.saturating_sub(truncation_margin(m)).max(1);
    let pt = legendre::basis_vector(keep, t)?;
    let p0 = legendre::basis_vector(m, 0.0)?;
    let mut acc = 0.0;
    for (k, ptk) in pt.iter().enumerate() {
        let ak: f64 = f.entries.row(k).iter().zip(&p0).map(|(a, b)| a * b).sum();
        acc += ak * ptk;
    }
    Ok(acc)
}

/// Entries below this fraction of `max|F|` count as numerically zero.
const DECAY_NOISE_FLOOR: f64 = 1e-12;

/// Fits `log max_{|k−l|=d} |f_{kl}|` linearly in `d` for `d = 2 … M−2`.
///
/// Diagonals that vanish, or sit below `1e-12·max|F|`, are skipped. With
/// fewer than two usable diagonals the off-band part is treated as zero:
/// `ρ` is reported as `f64::EPSILON` and `K` as `max|F|`.
pub fn estimate_decay(f: &KernelMatrix) -> Result<DecayFit, CoeffError> {
    let m = f.order();
    if m < 8 {
        return Err(CoeffError::TooSmall { min: 8, got: m });
    }
    let mut diag_max = vec![0.0f64; m];
    for ((k, l), v) in indexed(&f.entries) {
        let d = k.abs_diff(l);
        diag_max[d] = diag_max[d].max(v.abs());
    }
    let peak = diag_max.iter().copied().fold(0.0, f64::max);
    if peak == 0.0 {
        return Err(CoeffError::UndefinedFit);
    }
    let floor = peak * DECAY_NOISE_FLOOR;
    let pts: Vec<(f64, f64)> = (2..=m - 2)
        .filter(|&d| diag_max[d] > floor)
        .map(|d| (d as f64, diag_max[d].ln()))
        .collect();
    if pts.len() < 2 {
        return Ok(DecayFit {
            k: peak,
            rho: f64::EPSILON,
            points: pts.len(),
            rms_residual: 0.0,
            octaves: 0.0,
        });
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss: f64 = pts
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    let rms_residual = (ss / n).sqrt() / std::f64::consts::LN_10;
    let (dmin, dmax) = (pts[0].0, pts[pts.len() - 1].0);
    Ok(DecayFit {
        k: intercept.exp(),
        rho: slope.exp(),
        points: pts.len(),
        rms_residual,
        octaves: (dmax / dmin).log2(),
    })
}

/// Top-left `m × m` block.
pub fn leading_submatrix(f: &KernelMatrix, m: usize) -> Result<KernelMatrix, CoeffError> {
    if m == 0 || m > f.order() {
        return Err(CoeffError::SubmatrixBounds { m, size: f.order() });
    }
    Ok(KernelMatrix::new(
        f.entries.view((0, 0), (m, m)).into_owned(),
        f.provenance,
    ))
}

/// Rows/columns discarded from the tail when comparing truncated products:
/// 10% of `M`, at least 4.
pub fn truncation_margin(m: usize) -> usize {
    (m / 10).max(4)
}
