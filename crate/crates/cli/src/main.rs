use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use layerdg::assembly::{assemble, AssemblyOptions};
use layerdg::mesh::{MeshKind, TensorMesh};
use layerdg::problem::Problem;
use layerdg::solver::Strategy;
use layerdg::space::FemSpace;
use layerdg::study::{
    run_robustness, run_study, ConvergenceTable, RateFormula, RobustnessConfig, RunConfig, StudyConfig,
};
use layerdg::Error;

const EXIT_IO: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

/// LDG solver for singularly perturbed convection-diffusion on layer-adapted meshes.
#[derive(Parser, Debug)]
#[command(name = "layerdg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve the manufactured example once and report its errors.
    Solve(SolveArgs),
    /// Convergence table over a doubling sequence of N.
    Study(StudyArgs),
    /// Errors at fixed N over a list of epsilon values.
    Robust(RobustArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Csv,
    Md,
}

#[derive(Args, Debug)]
struct Common {
    /// shishkin, bs or bakhvalov
    #[arg(long, value_parser = parse_mesh)]
    mesh: MeshKind,
    /// Polynomial degree k.
    #[arg(long)]
    degree: usize,
    /// Mesh parameter; defaults to k + 2.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    lambda1: f64,
    #[arg(long, default_value_t = 0.0)]
    lambda2: f64,
    /// Gauss points per direction for assembly.
    #[arg(long, default_value_t = 5)]
    quad: usize,
    /// condensed (default) or monolithic
    #[arg(long, default_value = "condensed", value_parser = parse_strategy)]
    solver: Strategy,
    /// Accept epsilon below 1e-10.
    #[arg(long)]
    allow_tiny_epsilon: bool,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    /// Output file; `-` writes to stdout.
    #[arg(long)]
    out: PathBuf,
}

impl Common {
    fn assembly(&self) -> AssemblyOptions {
        AssemblyOptions {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            quad_points: self.quad,
        }
    }
}

#[derive(Args, Debug)]
struct SolveArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long = "N")]
    n: usize,
    #[arg(long)]
    epsilon: f64,
    /// Write the x and y mesh points (blank line between).
    #[arg(long)]
    dump_mesh: Option<PathBuf>,
    /// Write the assembled matrix in Matrix Market format.
    #[arg(long)]
    dump_matrix: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct StudyArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    epsilon: f64,
    /// Comma-separated, doubling.
    #[arg(long = "N", value_delimiter = ',', required = true)]
    ns: Vec<usize>,
    /// auto, r2 or rS
    #[arg(long, default_value = "auto", value_parser = parse_rates)]
    rates: RateFormula,
    /// Worker threads; 1 gives bitwise-reproducible output.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args, Debug)]
struct RobustArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long = "N")]
    n: usize,
    /// Comma-separated.
    #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
    epsilon: Vec<f64>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

fn parse_mesh(s: &str) -> Result<MeshKind, String> {
    MeshKind::parse(s).map_err(|e| e.to_string())
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    Strategy::parse(s).map_err(|e| e.to_string())
}

fn parse_rates(s: &str) -> Result<RateFormula, String> {
    RateFormula::parse(s).map_err(|e| e.to_string())
}

enum Failure {
    Config(String),
    Numerical(String),
    Io(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Singular(_) | Error::NonFinite { .. } => Failure::Numerical(e.to_string()),
            Error::Io(io) => Failure::Io(io.to_string()),
            _ => Failure::Config(e.to_string()),
        }
    }
}

fn write_to(path: &Path, text: &str) -> Result<(), Failure> {
    let res = if path == Path::new("-") {
        io::stdout().lock().write_all(text.as_bytes())
    } else {
        std::fs::write(path, text)
    };
    res.map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

fn emit(table: &ConvergenceTable, common: &Common) -> Result<(), Failure> {
    let text = match common.format {
        Format::Csv => table.to_csv(),
        Format::Md => table.to_markdown(),
    };
    write_to(&common.out, &text)?;
    if table.any_failed() {
        let bad: Vec<String> = table
            .rows
            .iter()
            .filter_map(|r| {
                r.result
                    .as_ref()
                    .err()
                    .map(|e| format!("N={} eps={:e}: {e}", r.n, r.epsilon))
            })
            .collect();
        return Err(Failure::Numerical(format!(
            "{} row(s) failed\n  {}",
            bad.len(),
            bad.join("\n  ")
        )));
    }
    Ok(())
}

fn solve(args: SolveArgs) -> Result<(), Failure> {
    let c = &args.common;
    let mut cfg = StudyConfig::new(c.mesh, c.degree, args.epsilon, vec![args.n]);
    cfg.sigma = c.sigma;
    cfg.assembly = c.assembly();
    cfg.strategy = c.solver;
    cfg.allow_tiny_epsilon = c.allow_tiny_epsilon;
    cfg.validate()?;

    let run = RunConfig {
        kind: c.mesh,
        n: args.n,
        degree: c.degree,
        sigma: c.sigma,
        assembly: cfg.assembly,
        strategy: c.solver,
    };
    let problem = Problem::example1(args.epsilon)?;
    let mesh = TensorMesh::new(
        c.mesh,
        args.n,
        args.epsilon,
        run.sigma(),
        problem.alpha1,
        problem.alpha2,
    )?;
    eprintln!("{}", mesh.report(c.degree));
    if let Some(path) = &args.dump_mesh {
        let mut w = create(path)?;
        mesh.write_points(&mut w).and_then(|_| w.flush()).map_err(Error::from)?;
    }
    if let Some(path) = &args.dump_matrix {
        let space = FemSpace::new(mesh.clone(), c.degree)?;
        let sys = assemble(&space, &problem, &cfg.assembly)?;
        let mut w = create(path)?;
        sys.write_matrix_market(&mut w)
            .and_then(|_| w.flush())
            .map_err(Error::from)?;
    }

    let table = run_study(&cfg)?;
    if let Some(e) = table.rows[0].errors() {
        eprintln!(
            "{} unknowns, relative residual {:.2e}, |||w - Pi w||| = {:.6e}",
            3 * (c.degree + 1) * (c.degree + 1) * args.n * args.n,
            e.residual,
            e.projection
        );
    }
    emit(&table, c)
}

fn study(args: StudyArgs) -> Result<(), Failure> {
    let c = &args.common;
    let mut cfg = StudyConfig::new(c.mesh, c.degree, args.epsilon, args.ns.clone());
    cfg.sigma = c.sigma;
    cfg.rates = args.rates;
    cfg.assembly = c.assembly();
    cfg.strategy = c.solver;
    cfg.jobs = args.jobs;
    cfg.allow_tiny_epsilon = c.allow_tiny_epsilon;
    let table = run_study(&cfg)?;
    emit(&table, c)
}

fn robust(args: RobustArgs) -> Result<(), Failure> {
    let c = &args.common;
    let mut cfg = RobustnessConfig::new(c.mesh, c.degree, args.n, args.epsilon.clone());
    cfg.sigma = c.sigma;
    cfg.assembly = c.assembly();
    cfg.strategy = c.solver;
    cfg.jobs = args.jobs;
    cfg.allow_tiny_epsilon = c.allow_tiny_epsilon;
    let table = run_robustness(&cfg)?;
    emit(&table, c)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Solve(a) => solve(a),
        Command::Study(a) => study(a),
        Command::Robust(a) => robust(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Numerical(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_NUMERICAL)
        }
        Err(Failure::Io(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_IO)
        }
    }
}
