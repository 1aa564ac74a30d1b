//! Self-checks of the algebraic and numerical invariants, each reporting the
//! measured quantity against its allowance.

use std::fmt;
use std::time::Instant;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::coeff::{self, KernelMatrix};
use crate::reference::{self, IntegratorConfig};
use crate::solver::{self, Coefficient, ODEProblem, SolveOptions};
use crate::star::{PolyBivariate, StarElement};
use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    Quick,
    Full,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub measured: f64,
    pub allowed: f64,
    pub seconds: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.measured <= self.allowed
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}: measured {:.3e}, allowed {:.3e} ({:.2}s)",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.measured,
            self.allowed,
            self.seconds
        )
    }
}

/// Random polynomial of total degree ≤ `degree`, coefficients in `[-1, 1]`.
pub fn random_poly<R: Rng>(rng: &mut R, degree: usize) -> PolyBivariate {
    let grid: Vec<Vec<f64>> = (0..=degree)
        .map(|a| {
            (0..=degree - a)
                .map(|_| rng.gen_range(-1.0..=1.0))
                .collect()
        })
        .collect();
    PolyBivariate::from_grid(&grid)
}

/// Random element `p·Θ + q₀·δ + q₁·δ′` (the Dirac parts only if `with_deltas`).
pub fn random_element<R: Rng>(rng: &mut R, degree: usize, with_deltas: bool) -> StarElement {
    let mut x = StarElement::from_poly(random_poly(rng, degree));
    if with_deltas {
        x = x + StarElement::delta_with(0, random_poly(rng, degree));
        x = x + StarElement::delta_with(1, random_poly(rng, degree));
    }
    x
}

/// Coefficient-wise gap relative to the larger coefficient magnitude.
pub fn relative_gap(a: &StarElement, b: &StarElement) -> f64 {
    let scale = a
        .max_abs_coeff()
        .max(b.max_abs_coeff())
        .max(f64::MIN_POSITIVE);
    a.max_gap(b) / scale
}

/// Worst relative defect of associativity, identity and distributivity
/// over `trials` random triples.
pub fn ring_axiom_defect(trials: usize, seed: u64) -> Result<f64, Error> {
    let mut rng = StdRng::seed_from_u64(seed);
    let id = StarElement::identity();
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let a = random_element(&mut rng, 4, true);
        let b = random_element(&mut rng, 4, true);
        let c = random_element(&mut rng, 4, true);
        let ab_c = a.star(&b)?.star(&c)?;
        let a_bc = a.star(&b.star(&c)?)?;
        worst = worst.max(relative_gap(&ab_c, &a_bc));
        worst = worst.max(relative_gap(&id.star(&a)?, &a));
        worst = worst.max(relative_gap(&a.star(&id)?, &a));
        let left = a.star(&(b.clone() + c.clone()))?;
        let right = a.star(&b)? + a.star(&c)?;
        worst = worst.max(relative_gap(&left, &right));
        let left = (a.clone() + b.clone()).star(&c)?;
        let right = a.star(&c)? + b.star(&c)?;
        worst = worst.max(relative_gap(&left, &right));
    }
    Ok(worst)
}

/// Largest deviation of `T_M` from its closed form and from quadrature.
pub fn theta_structure_defect(m: usize) -> Result<f64, Error> {
    let t = coeff::theta_matrix(m)?;
    let quad = coeff::bivariate_quadrature(|_, _| 1.0, m, 2 * m + 8)?;
    let mut worst = (t.entries() - quad.entries()).amax();
    for k in 0..m {
        for l in 0..m {
            let expect = if k == 0 && l == 0 {
                0.5
            } else if k == l + 1 {
                0.5 / ((4 * k * k - 1) as f64).sqrt()
            } else if l == k + 1 {
                -0.5 / ((4 * l * l - 1) as f64).sqrt()
            } else {
                0.0
            };
            worst = worst.max((t.entries()[(k, l)] - expect).abs());
        }
    }
    Ok(worst)
}

/// Largest entry of `B^(k)` outside `|row − col| ≤ k + 1`, over `k ≤ k_max`.
pub fn band_defect(k_max: usize, m: usize) -> Result<f64, Error> {
    let mut worst = 0.0f64;
    for k in 0..=k_max {
        let b = coeff::pk_theta_matrix(k, m)?;
        for r in 0..m {
            for c in 0..m {
                if r.abs_diff(c) > k + 1 {
                    worst = worst.max(b.entries()[(r, c)].abs());
                }
            }
        }
    }
    Ok(worst)
}

/// Worst leading-block gap between `F·G` and the matrix of `a ⋆ b` for
/// random polynomial Θ-kernels (with constant δ parts).
pub fn star_matrix_defect(pairs: usize, m: usize, seed: u64) -> Result<f64, Error> {
    let mut rng = StdRng::seed_from_u64(seed);
    let keep = m - coeff::truncation_margin(m);
    let mut worst = 0.0f64;
    for _ in 0..pairs {
        let mut pick = || {
            StarElement::from_poly(random_poly(&mut rng, 4))
                + StarElement::delta(0, rng.gen_range(-1.0..=1.0))
        };
        let a = pick();
        let b = pick();
        let product = a.star(&b)?.to_coeff_matrix(m)?;
        let fg = coeff::star_multiply(&a.to_coeff_matrix(m)?, &b.to_coeff_matrix(m)?)?;
        let gap = coeff::leading_submatrix(&product, keep)?.entries()
            - coeff::leading_submatrix(&fg, keep)?.entries();
        worst = worst.max(gap.amax());
    }
    Ok(worst)
}

/// `max_t |φ_M(t)ᵀ T_M φ_M(t) − 1/2|` over `t ∈ {1/4, 1/2, 3/4}`.
pub fn diagonal_halving_defect(m: usize) -> Result<f64, Error> {
    let t = coeff::theta_matrix(m)?;
    let mut worst = 0.0f64;
    for x in [0.25, 0.5, 0.75] {
        worst = worst.max((coeff::evaluate_kernel(&t, x, x)? - 0.5).abs());
    }
    Ok(worst)
}

/// `Ã(t) = [[0, 1], [−(1+t²), 0]]`.
pub fn non_commuting_problem(m: usize) -> Result<ODEProblem, Error> {
    Ok(ODEProblem::new(
        vec![
            vec![Coefficient::Zero, Coefficient::Constant(1.0)],
            vec![Coefficient::function(|t| -(1.0 + t * t)), Coefficient::Zero],
        ],
        m,
    )?)
}

/// `‖(I + 𝐂_K)(I − 𝐀) − I‖_F` for the non-commuting test problem.
pub fn resolvent_witness(m: usize, k: usize) -> Result<f64, Error> {
    let a = solver::assemble_a(&non_commuting_problem(m)?)?;
    Ok(solver::resolvent_identity_defect(&a, k)?)
}

/// Max deviation of the spectral solution from the integrator on 11 points.
pub fn oracle_defect(problem: &ODEProblem) -> Result<f64, Error> {
    let grid = solver::uniform_grid(11);
    let report = solver::solve_ode(problem, &grid, &SolveOptions::default())?;
    let reference = reference::integrate(problem, &grid, &IntegratorConfig::default())?;
    Ok(report.max_abs_diff(&reference))
}

/// Largest entry of `|F|` above the envelope `max|f̃|` (zero if respected).
pub fn envelope_excess(f: &KernelMatrix, fmax: f64) -> f64 {
    (f.envelope_ratio(fmax) - 1.0).max(0.0)
}

fn timed<F>(name: &str, allowed: f64, f: F) -> CheckResult
where
    F: FnOnce() -> Result<f64, Error>,
{
    let start = Instant::now();
    let measured = f().unwrap_or(f64::INFINITY);
    CheckResult {
        name: name.to_string(),
        measured,
        allowed,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Runs the check list for `level`. `Full` adds larger trial counts and the
/// `M = 200` diagonal check.
pub fn run_checks(level: Level) -> Vec<CheckResult> {
    let full = level == Level::Full;
    let trials = if full { 100 } else { 20 };
    let mut out = vec![
        timed("ring axioms", 1e-12, || ring_axiom_defect(trials, 7)),
        timed("theta inverse", 0.0, || {
            let th = StarElement::theta();
            let dp = StarElement::delta_prime();
            let id = StarElement::identity();
            Ok(dp.star(&th)?.max_gap(&id).max(th.star(&dp)?.max_gap(&id)))
        }),
        timed("operational matrix", 1e-12, || theta_structure_defect(40)),
        timed("bandwidth", 1e-13, || band_defect(6, 24)),
        timed("star/matrix correspondence", 1e-8, || {
            star_matrix_defect(if full { 20 } else { 5 }, 40, 11)
        }),
        timed("decay envelope", 0.0, || {
            let mut worst = 0.0f64;
            for (f, fmax) in [
                (f64::exp as fn(f64) -> f64, 1f64.exp()),
                (|t: f64| (3.0 * t).cos(), 1.0),
            ] {
                let alpha = crate::legendre::project_univariate(f, 30, 64)?;
                worst = worst.max(envelope_excess(&coeff::from_univariate(&alpha, 30)?, fmax));
            }
            Ok(worst)
        }),
        timed("diagonal halving M=60", 5e-2, || {
            diagonal_halving_defect(60)
        }),
        timed("resolvent identity", 1e-8, || resolvent_witness(40, 40)),
        timed("exponential vs integrator", 1e-9, || {
            oracle_defect(&ODEProblem::scalar(Coefficient::Constant(1.0), 40)?)
        }),
    ];
    if full {
        out.push(timed("diagonal halving M=200", 2e-2, || {
            diagonal_halving_defect(200)
        }));
        out.push(timed("non-commuting vs integrator", 1e-6, || {
            oracle_defect(&non_commuting_problem(60)?)
        }));
    }
    out
}
