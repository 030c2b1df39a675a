//! Convergence studies: one full solve per `N`, observed rates, and table
//! output.

use std::fmt::Write as _;
use std::time::Duration;

use crate::assembly::{AssemblyOptions, BlockOperator};
use crate::error::{Error, Result};
use crate::mesh::{MeshKind, MeshReport, TensorMesh};
use crate::norms::{error_report, ErrorReport};
use crate::problem::Problem;
use crate::projection::project_triple;
use crate::solver::{solve_blocks, Strategy};
use crate::space::{DiscreteTriple, FemSpace};

/// Wall-clock timer; reads zero on `wasm32`, which has no clock in `std`.
struct Stopwatch(#[cfg(not(target_arch = "wasm32"))] std::time::Instant);

impl Stopwatch {
    fn start() -> Self {
        #[cfg(not(target_arch = "wasm32"))]
        return Stopwatch(std::time::Instant::now());
        #[cfg(target_arch = "wasm32")]
        Stopwatch()
    }

    fn elapsed(&self) -> Duration {
        #[cfg(not(target_arch = "wasm32"))]
        return self.0.elapsed();
        #[cfg(target_arch = "wasm32")]
        Duration::ZERO
    }
}

/// Smallest `epsilon` accepted without an explicit override.
pub const MIN_EPSILON: f64 = 1e-10;

/// Exact CSV header of study and robustness tables.
pub const CSV_HEADER: &str =
    "mesh,k,epsilon,sigma,N,l2_err,l2_rate,superclose_err,superclose_rate,energy_err,energy_rate";

fn check_positive(a: f64, b: f64) -> Result<()> {
    if a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "rates need positive errors, got {a} and {b}"
        )))
    }
}

/// `log(e_N / e_2N) / log 2`.
pub fn rate_r2(e_n: f64, e_2n: f64) -> Result<f64> {
    check_positive(e_n, e_2n)?;
    Ok((e_n / e_2n).ln() / 2f64.ln())
}

/// `log(e_N / e_2N) / log(2 ln N / ln 2N)`, the order in `N^-1 ln N`.
pub fn rate_rs(e_n: f64, e_2n: f64, n: usize) -> Result<f64> {
    check_positive(e_n, e_2n)?;
    if n < 4 {
        return Err(Error::InvalidParameter(format!("rate_rs needs N >= 4, got {n}")));
    }
    let nf = n as f64;
    Ok((e_n / e_2n).ln() / (2.0 * nf.ln() / (2.0 * nf).ln()).ln())
}

/// Which observed order a table reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RateFormula {
    /// `rS` on Shishkin meshes, `r2` otherwise.
    #[default]
    Auto,
    R2,
    RS,
}

impl RateFormula {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(RateFormula::Auto),
            "r2" => Ok(RateFormula::R2),
            "rS" | "rs" => Ok(RateFormula::RS),
            _ => Err(Error::InvalidParameter(format!(
                "unknown rate formula '{s}' (expected auto, r2 or rS)"
            ))),
        }
    }

    /// Resolves `Auto` for a mesh kind.
    pub fn resolve(self, kind: MeshKind) -> RateFormula {
        match (self, kind) {
            (RateFormula::Auto, MeshKind::Shishkin) => RateFormula::RS,
            (RateFormula::Auto, _) => RateFormula::R2,
            (f, _) => f,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RateFormula::Auto => "auto",
            RateFormula::R2 => "r2",
            RateFormula::RS => "rS",
        }
    }

    /// Rate between consecutive rows `N` and `2N`.
    pub fn rate(self, e_n: f64, e_2n: f64, n: usize) -> Result<f64> {
        match self {
            RateFormula::RS => rate_rs(e_n, e_2n, n),
            _ => rate_r2(e_n, e_2n),
        }
    }
}

/// Least-squares order of `errors` against `1/N` (`r2`) or `ln N / N`
/// (`rS`).
pub fn fitted_rate(formula: RateFormula, ns: &[usize], errors: &[f64]) -> Result<f64> {
    if ns.len() != errors.len() || ns.len() < 2 {
        return Err(Error::InvalidParameter("need at least two (N, error) pairs".into()));
    }
    let pts: Vec<(f64, f64)> = ns
        .iter()
        .zip(errors)
        .map(|(&n, &e)| {
            let nf = n as f64;
            let h = match formula {
                RateFormula::RS => nf.ln() / nf,
                _ => 1.0 / nf,
            };
            (h.ln(), e.ln())
        })
        .collect();
    if pts.iter().any(|(_, e)| !e.is_finite()) {
        return Err(Error::InvalidParameter("errors must be positive".into()));
    }
    let m = pts.len() as f64;
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let (mx, my) = (sx / m, sy / m);
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    Ok(sxy / sxx)
}

/// Inputs of a single solve.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub kind: MeshKind,
    pub n: usize,
    pub degree: usize,
    /// Defaults to `k + 2`.
    pub sigma: Option<f64>,
    pub assembly: AssemblyOptions,
    pub strategy: Strategy,
}

impl RunConfig {
    pub fn new(kind: MeshKind, n: usize, degree: usize) -> Self {
        RunConfig {
            kind,
            n,
            degree,
            sigma: None,
            assembly: AssemblyOptions::default(),
            strategy: Strategy::default(),
        }
    }

    pub fn sigma(&self) -> f64 {
        self.sigma.unwrap_or((self.degree + 2) as f64)
    }
}

/// Everything one solve produces.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub space: FemSpace,
    pub mesh: MeshReport,
    pub solution: DiscreteTriple,
    /// Present when the problem has an exact solution.
    pub errors: Option<ErrorReport>,
    /// Relative residual on the monolithic system.
    pub residual: f64,
    pub unknowns: usize,
    pub elapsed: Duration,
}

/// mesh, space, assembly, solve and (when possible) errors.
pub fn run_single(problem: &Problem, cfg: &RunConfig) -> Result<RunOutcome> {
    let start = Stopwatch::start();
    let sigma = cfg.sigma();
    if !(sigma > 0.0) {
        return Err(Error::InvalidParameter(format!("sigma must be positive, got {sigma}")));
    }
    let mesh = TensorMesh::new(cfg.kind, cfg.n, problem.epsilon, sigma, problem.alpha1, problem.alpha2)?;
    let report = mesh.report(cfg.degree);
    let space = FemSpace::new(mesh, cfg.degree)?;
    let op = BlockOperator::build(&space, problem, &cfg.assembly)?;
    let out = solve_blocks(&op, cfg.degree, cfg.strategy)?;
    drop(op);
    let solution = DiscreteTriple::from_vector(&space, &out.x)?;
    let errors = if problem.exact.is_some() {
        let projected = project_triple(problem, &space)?;
        Some(error_report(&solution, &projected, problem, &space, &cfg.assembly)?)
    } else {
        None
    };
    Ok(RunOutcome {
        unknowns: space.num_dofs(),
        space,
        mesh: report,
        solution,
        errors,
        residual: out.residual,
        elapsed: start.elapsed(),
    })
}

/// Inputs of a convergence study on the manufactured example.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    pub kind: MeshKind,
    pub degree: usize,
    pub epsilon: f64,
    pub ns: Vec<usize>,
    pub sigma: Option<f64>,
    pub rates: RateFormula,
    pub assembly: AssemblyOptions,
    pub strategy: Strategy,
    /// Rows solved concurrently.
    pub jobs: usize,
    /// Accept `epsilon < MIN_EPSILON`.
    pub allow_tiny_epsilon: bool,
}

impl StudyConfig {
    pub fn new(kind: MeshKind, degree: usize, epsilon: f64, ns: Vec<usize>) -> Self {
        StudyConfig {
            kind,
            degree,
            epsilon,
            ns,
            sigma: None,
            rates: RateFormula::Auto,
            assembly: AssemblyOptions::default(),
            strategy: Strategy::default(),
            jobs: 1,
            allow_tiny_epsilon: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_epsilon(self.epsilon, self.allow_tiny_epsilon)?;
        if self.degree == 0 {
            return Err(Error::InvalidParameter("degree must be >= 1".into()));
        }
        if self.ns.is_empty() {
            return Err(Error::InvalidParameter("no N values given".into()));
        }
        for &n in &self.ns {
            if n < 4 || n % 2 != 0 {
                return Err(Error::InvalidParameter(format!("N must be even and >= 4, got {n}")));
            }
        }
        for w in self.ns.windows(2) {
            if w[1] != 2 * w[0] {
                return Err(Error::InvalidParameter(format!(
                    "N values must double from row to row, got {} then {}",
                    w[0], w[1]
                )));
            }
        }
        if self.jobs == 0 {
            return Err(Error::InvalidParameter("jobs must be >= 1".into()));
        }
        if let Some(s) = self.sigma {
            if !(s > 0.0) {
                return Err(Error::InvalidParameter(format!("sigma must be positive, got {s}")));
            }
        }
        self.assembly.validate(self.degree)
    }

    fn run_config(&self, n: usize) -> RunConfig {
        RunConfig {
            kind: self.kind,
            n,
            degree: self.degree,
            sigma: self.sigma,
            assembly: self.assembly,
            strategy: self.strategy,
        }
    }
}

fn check_epsilon(eps: f64, allow_tiny: bool) -> Result<()> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "epsilon must lie in (0, 1), got {eps}"
        )));
    }
    if eps < MIN_EPSILON && !allow_tiny {
        return Err(Error::InvalidParameter(format!(
            "epsilon = {eps:e} is below {MIN_EPSILON:e}; layer coordinates lose precision there (override to force)"
        )));
    }
    Ok(())
}

fn warn_sigma(sigma: Option<f64>, degree: usize) {
    if let Some(s) = sigma {
        if s != (degree + 2) as f64 {
            log::warn!("sigma = {s} overrides the default k + 2 = {}", degree + 2);
        }
    }
}

/// Errors of a successful row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowErrors {
    pub l2: f64,
    pub superclose: f64,
    pub energy: f64,
    /// `|||w - Pi w|||`
    pub projection: f64,
    pub residual: f64,
}

/// One line of a table.
#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub n: usize,
    pub epsilon: f64,
    pub sigma: f64,
    /// `(N^-1 max|psi'|)^{k+1}`
    pub rate_factor: f64,
    pub result: std::result::Result<RowErrors, String>,
    pub l2_rate: Option<f64>,
    pub superclose_rate: Option<f64>,
    pub energy_rate: Option<f64>,
}

impl TableRow {
    pub fn errors(&self) -> Option<&RowErrors> {
        self.result.as_ref().ok()
    }
}

/// Rows of a study (varying `N`) or a robustness sweep (varying `epsilon`).
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceTable {
    pub kind: MeshKind,
    pub degree: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub quad_points: usize,
    pub error_quad_points: usize,
    /// `None` for robustness sweeps.
    pub rate_formula: Option<RateFormula>,
    pub rows: Vec<TableRow>,
}

fn row_from(cfg: &RunConfig, problem: &Problem) -> TableRow {
    let sigma = cfg.sigma();
    let result = run_single(problem, cfg).and_then(|out| {
        let e = out.errors.ok_or(Error::MissingExactSolution)?;
        log::info!(
            "{} N={} k={} eps={:e}: {} unknowns, residual {:.2e}, {:.2?}",
            cfg.kind,
            cfg.n,
            cfg.degree,
            problem.epsilon,
            out.unknowns,
            out.residual,
            out.elapsed
        );
        Ok(RowErrors {
            l2: e.l2_triple,
            superclose: e.supercloseness,
            energy: e.energy,
            projection: e.projection,
            residual: out.residual,
        })
    });
    if let Err(e) = &result {
        log::error!("{} N={} eps={:e} failed: {e}", cfg.kind, cfg.n, problem.epsilon);
    }
    let rate_factor = (cfg.kind.max_abs_dpsi(cfg.n) / cfg.n as f64).powi(cfg.degree as i32 + 1);
    TableRow {
        n: cfg.n,
        epsilon: problem.epsilon,
        sigma,
        rate_factor,
        result: result.map_err(|e| e.to_string()),
        l2_rate: None,
        superclose_rate: None,
        energy_rate: None,
    }
}

fn run_rows<T: Sync>(items: &[T], jobs: usize, f: impl Fn(&T) -> TableRow + Sync + Send) -> Result<Vec<TableRow>> {
    #[cfg(feature = "parallel")]
    if jobs > 1 {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
        return Ok(pool.install(|| items.par_iter().map(&f).collect()));
    }
    let _ = jobs;
    Ok(items.iter().map(f).collect())
}

/// Runs the manufactured example on every `N` of `cfg`.
pub fn run_study(cfg: &StudyConfig) -> Result<ConvergenceTable> {
    cfg.validate()?;
    let problem = Problem::example1(cfg.epsilon)?;
    run_study_with(cfg, &problem)
}

/// [`run_study`] for an arbitrary problem with an exact solution.
pub fn run_study_with(cfg: &StudyConfig, problem: &Problem) -> Result<ConvergenceTable> {
    cfg.validate()?;
    problem.exact()?;
    warn_sigma(cfg.sigma, cfg.degree);
    let formula = cfg.rates.resolve(cfg.kind);
    let mut rows = run_rows(&cfg.ns, cfg.jobs, |&n| row_from(&cfg.run_config(n), problem))?;
    for i in 1..rows.len() {
        let (prev, cur) = (rows[i - 1].clone(), &mut rows[i]);
        if let (Some(a), Some(b)) = (prev.errors(), cur.errors().copied()) {
            cur.l2_rate = formula.rate(a.l2, b.l2, prev.n).ok();
            cur.superclose_rate = formula.rate(a.superclose, b.superclose, prev.n).ok();
            cur.energy_rate = formula.rate(a.energy, b.energy, prev.n).ok();
        }
    }
    Ok(ConvergenceTable {
        kind: cfg.kind,
        degree: cfg.degree,
        lambda1: cfg.assembly.lambda1,
        lambda2: cfg.assembly.lambda2,
        quad_points: cfg.assembly.quad_points,
        error_quad_points: crate::projection::error_quad_points(cfg.degree),
        rate_formula: Some(formula),
        rows,
    })
}

/// Inputs of an `epsilon` sweep at fixed `N` and `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessConfig {
    pub kind: MeshKind,
    pub degree: usize,
    pub n: usize,
    pub epsilons: Vec<f64>,
    pub sigma: Option<f64>,
    pub assembly: AssemblyOptions,
    pub strategy: Strategy,
    pub jobs: usize,
    pub allow_tiny_epsilon: bool,
}

impl RobustnessConfig {
    pub fn new(kind: MeshKind, degree: usize, n: usize, epsilons: Vec<f64>) -> Self {
        RobustnessConfig {
            kind,
            degree,
            n,
            epsilons,
            sigma: None,
            assembly: AssemblyOptions::default(),
            strategy: Strategy::default(),
            jobs: 1,
            allow_tiny_epsilon: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epsilons.is_empty() {
            return Err(Error::InvalidParameter("no epsilon values given".into()));
        }
        for &e in &self.epsilons {
            check_epsilon(e, self.allow_tiny_epsilon)?;
        }
        let mut s = StudyConfig::new(self.kind, self.degree, self.epsilons[0], vec![self.n]);
        s.sigma = self.sigma;
        s.assembly = self.assembly;
        s.jobs = self.jobs;
        s.allow_tiny_epsilon = self.allow_tiny_epsilon;
        s.validate()
    }
}

/// One row per `epsilon`, no rates.
pub fn run_robustness(cfg: &RobustnessConfig) -> Result<ConvergenceTable> {
    cfg.validate()?;
    warn_sigma(cfg.sigma, cfg.degree);
    let run = RunConfig {
        kind: cfg.kind,
        n: cfg.n,
        degree: cfg.degree,
        sigma: cfg.sigma,
        assembly: cfg.assembly,
        strategy: cfg.strategy,
    };
    let rows = run_rows(&cfg.epsilons, cfg.jobs, |&eps| match Problem::example1(eps) {
        Ok(p) => row_from(&run, &p),
        Err(e) => TableRow {
            n: cfg.n,
            epsilon: eps,
            sigma: run.sigma(),
            rate_factor: f64::NAN,
            result: Err(e.to_string()),
            l2_rate: None,
            superclose_rate: None,
            energy_rate: None,
        },
    })?;
    Ok(ConvergenceTable {
        kind: cfg.kind,
        degree: cfg.degree,
        lambda1: cfg.assembly.lambda1,
        lambda2: cfg.assembly.lambda2,
        quad_points: cfg.assembly.quad_points,
        error_quad_points: crate::projection::error_quad_points(cfg.degree),
        rate_formula: None,
        rows,
    })
}

/// `x` with six significant digits, `%g` style and locale free.
pub fn format_sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let exp = x.abs().log10().floor() as i32;
    // rounding can carry into the next decade
    let s = format!("{:.5e}", x);
    let exp = s.split('e').nth(1).and_then(|e| e.parse::<i32>().ok()).unwrap_or(exp);
    if (-4..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        let f = format!("{:.*}", decimals, x);
        trim_zeros(&f)
    } else {
        let (m, e) = s.split_once('e').unwrap();
        format!("{}e{}", trim_zeros(m), e)
    }
}

fn trim_zeros(s: &str) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s.to_string()
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(format_sig6).unwrap_or_default()
}

impl ConvergenceTable {
    pub fn any_failed(&self) -> bool {
        self.rows.iter().any(|r| r.result.is_err())
    }

    /// CSV with [`CSV_HEADER`]; failed rows leave the error and rate cells
    /// empty.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        s.push_str(CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            let (l2, sc, en) = match r.errors() {
                Some(e) => (format_sig6(e.l2), format_sig6(e.superclose), format_sig6(e.energy)),
                None => Default::default(),
            };
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{}",
                self.kind.name(),
                self.degree,
                format_sig6(r.epsilon),
                format_sig6(r.sigma),
                r.n,
                l2,
                opt(r.l2_rate),
                sc,
                opt(r.superclose_rate),
                en,
                opt(r.energy_rate)
            );
        }
        s
    }

    /// Markdown in the layout error, rate, error, rate, error, rate.
    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        let rate_name = self.rate_formula.map(|f| f.name()).unwrap_or("-");
        let _ = writeln!(
            s,
            "mesh: {}, k = {}, lambda = ({}, {}), quadrature {} / {} points, rates: {}\n",
            self.kind, self.degree, self.lambda1, self.lambda2, self.quad_points, self.error_quad_points, rate_name
        );
        let by_eps = self.rate_formula.is_none();
        let first = if by_eps { "epsilon" } else { "N" };
        let _ = writeln!(
            s,
            "| {first} | ‖w−W‖ | rate | \\|\\|\\|Πw−W\\|\\|\\| | rate | \\|\\|\\|w−W\\|\\|\\| | rate | (N⁻¹max\\|ψ′\\|)^(k+1) |"
        );
        s.push_str("|---|---|---|---|---|---|---|---|\n");
        for r in &self.rows {
            let key = if by_eps {
                format!("{:e}", r.epsilon)
            } else {
                r.n.to_string()
            };
            let rate = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
            match r.errors() {
                Some(e) => {
                    let _ = writeln!(
                        s,
                        "| {key} | {:.4E} | {} | {:.4E} | {} | {:.4E} | {} | {:.3E} |",
                        e.l2,
                        rate(r.l2_rate),
                        e.superclose,
                        rate(r.superclose_rate),
                        e.energy,
                        rate(r.energy_rate),
                        r.rate_factor
                    );
                }
                None => {
                    let msg = r.result.as_ref().err().cloned().unwrap_or_default();
                    let _ = writeln!(s, "| {key} | failed: {msg} | | | | | | |");
                }
            }
        }
        s
    }
}
