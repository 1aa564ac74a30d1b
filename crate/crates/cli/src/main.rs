use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use legstar::coeff::{self, format_sig17, KernelMatrix};
use legstar::dsl::{self, parse_expr, LoadedProblem};
use legstar::legendre::{default_quadrature_order, try_project_univariate};
use legstar::reference::{self, IntegratorConfig};
use legstar::solver::{self, Coefficient, NeumannOptions, SolveOptions};
use legstar::verify::{self, Level};

const EXIT_VERIFY: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

#[derive(Parser)]
#[command(name = "legstar", version, about = "Spectral ⋆-product ODE solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a problem file and print U(t) on the grid as CSV.
    Solve {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
        /// Truncation order (overrides the file).
        #[arg(long)]
        m: Option<usize>,
        /// Evaluation grid, comma separated (overrides the file).
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
        /// Skip the reference integrator columns.
        #[arg(long)]
        no_oracle: bool,
        /// Cross-check against the Neumann series.
        #[arg(long)]
        neumann: bool,
    },
    /// Error against the reference integrator for a list of truncation orders.
    Convergence {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "8,16,24,32,40")]
        m_list: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
    },
    /// Dump a kernel coefficient matrix with a decay-fit footer.
    Kernel {
        /// theta, pk, from-expr; also accepts pk(K) and from-expr(EXPR).
        #[arg(long)]
        kind: String,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        expr: Option<String>,
        #[arg(long, default_value_t = 20)]
        m: usize,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run the self-check suite.
    Verify {
        #[arg(long, value_enum, default_value_t = VerifyLevel::Quick)]
        level: VerifyLevel,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum VerifyLevel {
    Quick,
    Full,
}

/// Failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_USAGE,
        message: message.into(),
    }
}

fn numeric(message: impl ToString) -> Failure {
    Failure {
        code: EXIT_NUMERIC,
        message: message.to_string(),
    }
}

fn check_output(path: &Option<PathBuf>) -> Result<(), Failure> {
    if let Some(p) = path {
        let parent = p.parent().filter(|d| !d.as_os_str().is_empty());
        if let Some(dir) = parent {
            if !dir.is_dir() {
                return Err(usage(format!(
                    "output directory {} does not exist",
                    dir.display()
                )));
            }
        }
    }
    Ok(())
}

fn emit(path: &Option<PathBuf>, text: &str) -> Result<(), Failure> {
    match path {
        Some(p) => {
            fs::write(p, text).map_err(|e| numeric(format!("cannot write {}: {e}", p.display())))
        }
        None => io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| numeric(format!("cannot write output: {e}"))),
    }
}

fn load(input: &Path, m: Option<usize>, grid: Option<Vec<f64>>) -> Result<LoadedProblem, Failure> {
    let src = fs::read_to_string(input)
        .map_err(|e| usage(format!("cannot read {}: {e}", input.display())))?;
    let mut loaded =
        dsl::load_problem(&src).map_err(|e| usage(format!("{}: {e}", input.display())))?;
    if let Some(m) = m {
        loaded.problem = loaded
            .problem
            .with_order(m)
            .map_err(|e| usage(format!("--m: {e}")))?;
    }
    if let Some(grid) = grid {
        let bad = grid
            .iter()
            .enumerate()
            .find(|(i, t)| !(0.0..=1.0).contains(*t) || (*i > 0 && **t < grid[i - 1]));
        if grid.is_empty() || bad.is_some() {
            return Err(usage("--grid must be sorted values in [0, 1]"));
        }
        loaded.grid = grid;
    }
    Ok(loaded)
}

fn solve(
    input: &Path,
    output: &Option<PathBuf>,
    m: Option<usize>,
    grid: Option<Vec<f64>>,
    no_oracle: bool,
    neumann: bool,
) -> Result<(), Failure> {
    check_output(output)?;
    let loaded = load(input, m, grid)?;
    let options = SolveOptions {
        neumann: (neumann || loaded.neumann).then(NeumannOptions::default),
    };
    let report = solver::solve_ode(&loaded.problem, &loaded.grid, &options).map_err(numeric)?;
    let oracle = if no_oracle {
        None
    } else {
        let cfg = IntegratorConfig::with_rel_tol(loaded.rel_tol);
        Some(reference::integrate(&loaded.problem, &loaded.grid, &cfg).map_err(numeric)?)
    };

    let n = loaded.problem.n();
    let mut header = vec!["t".to_string()];
    let entries: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).collect();
    header.extend(entries.iter().map(|(i, j)| format!("u_{i}_{j}")));
    if oracle.is_some() {
        header.extend(entries.iter().map(|(i, j)| format!("ref_{i}_{j}")));
        header.push("abs_error".into());
    }
    let mut csv = header.join(",") + "\n";
    for (row, (t, u)) in report.grid.iter().zip(&report.values).enumerate() {
        let mut cells = vec![format_sig17(*t)];
        cells.extend(entries.iter().map(|&ij| format_sig17(u[ij])));
        if let Some(oracle) = &oracle {
            let r = &oracle[row];
            cells.extend(entries.iter().map(|&ij| format_sig17(r[ij])));
            cells.push(format_sig17((u - r).amax()));
        }
        csv += &cells.join(",");
        csv.push('\n');
    }
    emit(output, &csv)?;

    let mut diag = format!(
        "M = {}, residual = {:.3e}, condition ≈ {:.3e}",
        report.m,
        report.residual_norm,
        report.condition_estimate.unwrap_or(f64::NAN)
    );
    if let (Some(gap), Some(terms)) = (report.neumann_gap, report.neumann_terms) {
        let _ = write!(diag, ", neumann gap = {gap:.3e} ({terms} terms)");
    }
    eprintln!("{diag}");
    Ok(())
}

fn convergence(
    input: &Path,
    output: &Option<PathBuf>,
    m_list: &[usize],
    grid: Option<Vec<f64>>,
) -> Result<(), Failure> {
    check_output(output)?;
    if m_list.is_empty() || m_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(usage("--m-list must be strictly ascending"));
    }
    if m_list[0] < 2 {
        return Err(usage("--m-list entries must be at least 2"));
    }
    let loaded = load(input, None, grid)?;
    let cfg = IntegratorConfig::with_rel_tol(loaded.rel_tol);
    let rows =
        legstar::convergence_study(&loaded.problem, &loaded.grid, m_list, &cfg).map_err(numeric)?;
    let mut csv = String::from("m,max_error,solve_seconds\n");
    for r in rows {
        let _ = writeln!(
            csv,
            "{},{},{}",
            r.m,
            format_sig17(r.max_error),
            format_sig17(r.solve_seconds)
        );
    }
    emit(output, &csv)
}

enum KernelKind {
    Theta,
    Pk(usize),
    FromExpr(String),
}

fn parse_kind(kind: &str, k: Option<usize>, expr: Option<String>) -> Result<KernelKind, Failure> {
    let inner = |prefix: &str| {
        kind.strip_prefix(prefix)
            .and_then(|r| r.strip_prefix('('))
            .and_then(|r| r.strip_suffix(')'))
            .map(str::to_string)
    };
    if kind == "theta" {
        return Ok(KernelKind::Theta);
    }
    if kind == "pk" {
        return k
            .map(KernelKind::Pk)
            .ok_or_else(|| usage("--kind pk needs --k"));
    }
    if let Some(arg) = inner("pk") {
        return arg
            .trim()
            .parse()
            .map(KernelKind::Pk)
            .map_err(|_| usage(format!("bad degree in {kind:?}")));
    }
    if kind == "from-expr" {
        return expr
            .map(KernelKind::FromExpr)
            .ok_or_else(|| usage("--kind from-expr needs --expr"));
    }
    if let Some(arg) = inner("from-expr") {
        return Ok(KernelKind::FromExpr(arg));
    }
    Err(usage(format!(
        "unknown kernel kind {kind:?}; expected theta, pk(K) or from-expr(EXPR)"
    )))
}

fn kernel(
    kind: &str,
    k: Option<usize>,
    expr: Option<String>,
    m: usize,
    output: &Option<PathBuf>,
) -> Result<(), Failure> {
    check_output(output)?;
    if m == 0 {
        return Err(usage("--m must be positive"));
    }
    let matrix: KernelMatrix = match parse_kind(kind, k, expr)? {
        KernelKind::Theta => coeff::theta_matrix(m).map_err(numeric)?,
        KernelKind::Pk(k) => coeff::pk_theta_matrix(k, m).map_err(numeric)?,
        KernelKind::FromExpr(src) => {
            let e = parse_expr(&src).map_err(|e| usage(format!("--expr {src:?}: {e}")))?;
            let c = Coefficient::from_expr(e).map_err(|e| usage(format!("--expr: {e}")))?;
            let alpha = try_project_univariate(|t| c.eval(t), m, default_quadrature_order(m))
                .map_err(numeric)?;
            coeff::from_univariate(&alpha, m).map_err(numeric)?
        }
    };
    let header: Vec<String> = (0..m).map(|l| format!("col_{l}")).collect();
    let mut csv = header.join(",") + "\n" + &matrix.to_csv();
    match coeff::estimate_decay(&matrix) {
        Ok(fit) => {
            let _ = writeln!(
                csv,
                "# decay_fit,K={},rho={}",
                format_sig17(fit.k),
                format_sig17(fit.rho)
            );
        }
        Err(e) => {
            let _ = writeln!(csv, "# decay_fit,unavailable,{e}");
        }
    }
    emit(output, &csv)
}

fn run_verify(level: VerifyLevel) -> Result<(), Failure> {
    let level = match level {
        VerifyLevel::Quick => Level::Quick,
        VerifyLevel::Full => Level::Full,
    };
    let results = verify::run_checks(level);
    let mut failed = 0;
    for r in &results {
        println!("{r}");
        if !r.passed() {
            failed += 1;
        }
    }
    if failed > 0 {
        return Err(Failure {
            code: EXIT_VERIFY,
            message: format!("{failed} of {} checks failed", results.len()),
        });
    }
    println!("all {} checks passed", results.len());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Solve {
            input,
            output,
            m,
            grid,
            no_oracle,
            neumann,
        } => solve(&input, &output, m, grid, no_oracle, neumann),
        Command::Convergence {
            input,
            output,
            m_list,
            grid,
        } => convergence(&input, &output, &m_list, grid),
        Command::Kernel {
            kind,
            k,
            expr,
            m,
            output,
        } => kernel(&kind, k, expr, m, &output),
        Command::Verify { level } => run_verify(level),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
