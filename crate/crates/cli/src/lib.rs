//! Experiment driver: parameter sweeps over the elasticity, two-field and
//! three-field solvers, iteration-count tables, and the dense oracle suite.

use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use porowg::elasticity::{solve_elasticity, ElasticityConfig};
use porowg::oracle::{
    verify_bounds_with, write_oracle_csv, BoundCase, BoundConstants, RhoChoice, SpectrumReport,
};
use porowg::poro2::{march, PoroState, StepConfig, StepRecord};
use porowg::poro3::{choose_rho, march_three_field, ThreeFieldConfig};
use porowg::problems::{Manufactured, TimeProfile};
use porowg::wgfem::{assemble_elasticity, WgBlocks};
use porowg::{build_structured_mesh, Method, PhysicalParams, PrecondKind, SolveReport};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Solver(#[from] porowg::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("{0} oracle checks violated their bounds")]
    OracleFailed(usize),
}

impl CliError {
    /// 0 success, 1 solver failure, 2 config error, 3 oracle violation.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Solver(
                porowg::Error::InvalidInput(_)
                | porowg::Error::Parse(_)
                | porowg::Error::DenseTooLarge { .. },
            ) => 2,
            CliError::OracleFailed(_) => 3,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Problem {
    Elasticity,
    Poro2,
    Poro3,
}

impl Problem {
    pub fn name(self) -> &'static str {
        match self {
            Problem::Elasticity => "elasticity",
            Problem::Poro2 => "poro2",
            Problem::Poro3 => "poro3",
        }
    }
}

impl FromStr for Problem {
    type Err = CliError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "elasticity" => Ok(Problem::Elasticity),
            "poro2" => Ok(Problem::Poro2),
            "poro3" => Ok(Problem::Poro3),
            other => Err(config_err(format!(
                "unknown problem `{other}` (elasticity, poro2, poro3)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Markdown,
}

impl FromStr for Format {
    type Err = CliError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "markdown" | "md" => Ok(Format::Markdown),
            other => Err(config_err(format!(
                "unknown format `{other}` (csv, markdown)"
            ))),
        }
    }
}

/// A sweep over meshes, λ, Δt, solvers and regularization. Every list is a
/// sweep axis; the cells are their Cartesian product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub problem: Problem,
    pub dim: usize,
    pub mesh_n: Vec<usize>,
    pub lambda: Vec<f64>,
    /// Ignored for elasticity.
    pub dt: Vec<f64>,
    pub solver: Vec<String>,
    /// `auto` pairs MINRES with the diagonal and GMRES with the triangular
    /// preconditioner.
    pub precond: String,
    /// Only the three-field problem runs both ways.
    pub regularize: Vec<bool>,
    pub steps: usize,
    /// Outer tolerance; defaults to 1e-10 (2D) / 1e-8 (3D) for elasticity and
    /// 1e-8 for poroelasticity.
    pub tol: Option<f64>,
    pub maxit: usize,
    pub restart: usize,
    pub jobs: usize,
    pub format: Format,
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            problem: Problem::Elasticity,
            dim: 2,
            mesh_n: vec![16],
            lambda: vec![1.0],
            dt: vec![1e-3],
            solver: vec!["minres".into()],
            precond: "auto".into(),
            regularize: vec![true],
            steps: 1,
            tol: None,
            maxit: 1000,
            restart: 30,
            jobs: 1,
            format: Format::Csv,
            out: None,
        }
    }
}

/// Built-in configurations, one per formulation and dimension.
pub const PRESETS: [(&str, &str); 6] = [
    (
        "elasticity_2d",
        include_str!("../presets/elasticity_2d.toml"),
    ),
    (
        "elasticity_3d",
        include_str!("../presets/elasticity_3d.toml"),
    ),
    ("poro2_2d", include_str!("../presets/poro2_2d.toml")),
    ("poro2_3d", include_str!("../presets/poro2_3d.toml")),
    ("poro3_2d", include_str!("../presets/poro3_2d.toml")),
    ("poro3_3d", include_str!("../presets/poro3_3d.toml")),
];

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| config_err(e.to_string()))
    }

    pub fn preset(name: &str) -> Result<Self> {
        let (_, text) = PRESETS.iter().find(|(n, _)| *n == name).ok_or_else(|| {
            let names: Vec<_> = PRESETS.iter().map(|(n, _)| *n).collect();
            config_err(format!(
                "unknown preset `{name}` (available: {})",
                names.join(", ")
            ))
        })?;
        Self::from_toml(text)
    }

    pub fn methods(&self) -> Result<Vec<Method>> {
        self.solver
            .iter()
            .map(|s| {
                s.parse()
                    .map_err(|e: porowg::Error| config_err(e.to_string()))
            })
            .collect()
    }

    pub fn precond_for(&self, method: Method) -> Result<PrecondKind> {
        let kind = match self.precond.as_str() {
            "auto" => PrecondKind::for_method(method),
            other => other
                .parse()
                .map_err(|e: porowg::Error| config_err(e.to_string()))?,
        };
        kind.check_compatible(method)
            .map_err(|e| config_err(e.to_string()))?;
        Ok(kind)
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.dim, 2 | 3) {
            return Err(config_err(format!("dim must be 2 or 3, got {}", self.dim)));
        }
        let empty = [
            ("mesh_n", self.mesh_n.is_empty()),
            ("lambda", self.lambda.is_empty()),
            ("dt", self.dt.is_empty()),
            ("solver", self.solver.is_empty()),
            ("regularize", self.regularize.is_empty()),
        ];
        if let Some((key, _)) = empty.iter().find(|(_, e)| *e) {
            return Err(config_err(format!("`{key}` needs at least one value")));
        }
        if self.mesh_n.contains(&0) {
            return Err(config_err("mesh_n entries must be positive"));
        }
        if self.lambda.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return Err(config_err("lambda entries must be finite and nonnegative"));
        }
        if self.dt.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
            return Err(config_err("dt entries must be finite and positive"));
        }
        if self.steps == 0 || self.maxit == 0 || self.restart == 0 || self.jobs == 0 {
            return Err(config_err(
                "steps, maxit, restart and jobs must be positive",
            ));
        }
        if self.tol.is_some_and(|t| !(t > 0.0 && t < 1.0)) {
            return Err(config_err("tol must lie in (0, 1)"));
        }
        if self.problem == Problem::Elasticity && self.regularize.contains(&false) {
            return Err(config_err(
                "elasticity is always solved in regularized form; use regularize = [true]",
            ));
        }
        for method in self.methods()? {
            self.precond_for(method)?;
        }
        Ok(())
    }

    /// Sweep cells in output order.
    pub fn cells(&self) -> Result<Vec<Cell>> {
        self.validate()?;
        let dts = if self.problem == Problem::Elasticity {
            vec![f64::NAN]
        } else {
            self.dt.clone()
        };
        let regs = if self.problem == Problem::Poro3 {
            self.regularize.clone()
        } else {
            vec![self.problem == Problem::Elasticity]
        };
        let mut cells = Vec::new();
        for method in self.methods()? {
            for &dt in &dts {
                for &lambda in &self.lambda {
                    for &regularized in &regs {
                        for &mesh_n in &self.mesh_n {
                            cells.push(Cell {
                                mesh_n,
                                lambda,
                                dt,
                                method,
                                precond: self.precond_for(method)?,
                                regularized,
                            });
                        }
                    }
                }
            }
        }
        Ok(cells)
    }
}

/// One point of a sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub mesh_n: usize,
    pub lambda: f64,
    /// `NaN` for elasticity.
    pub dt: f64,
    pub method: Method,
    pub precond: PrecondKind,
    pub regularized: bool,
}

/// One output row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableRow {
    pub problem: &'static str,
    pub dim: usize,
    pub mesh_n: usize,
    #[serde(rename = "N")]
    pub n_elements: usize,
    #[serde(rename = "N_f")]
    pub n_facets: usize,
    pub lambda: f64,
    /// Empty for elasticity.
    pub dt: Option<f64>,
    pub solver: &'static str,
    pub precond: &'static str,
    pub regularized: bool,
    pub rho: f64,
    /// Largest count over the time steps.
    pub outer_iters: usize,
    pub inner_iters_total: usize,
    pub final_relres: f64,
    pub wall_time_s: f64,
}

pub const TABLE_COLUMNS: [&str; 15] = [
    "problem",
    "dim",
    "mesh_n",
    "N",
    "N_f",
    "lambda",
    "dt",
    "solver",
    "precond",
    "regularized",
    "rho",
    "outer_iters",
    "inner_iters_total",
    "final_relres",
    "wall_time_s",
];

fn summarize(records: &[StepRecord]) -> (usize, usize, f64) {
    let outer = records
        .iter()
        .map(|r| r.report.iterations)
        .max()
        .unwrap_or(0);
    let inner = records
        .iter()
        .map(|r| r.report.inner_iterations_total)
        .sum();
    let relres = records.last().map_or(0.0, |r| r.report.final_relres());
    (outer, inner, relres)
}

/// Runs one cell of `config`.
pub fn run_cell(config: &ExperimentConfig, cell: &Cell) -> Result<TableRow> {
    let dim = config.dim;
    let mesh = build_structured_mesh(dim, cell.mesh_n)?;
    let start = Instant::now();
    let (outer, inner, relres, rho) = match config.problem {
        Problem::Elasticity => {
            let params = PhysicalParams::elasticity(cell.lambda);
            let prob = Manufactured::elasticity(dim, params)?;
            let mut cfg = ElasticityConfig::for_dim(dim, cell.method);
            cfg.precond = cell.precond;
            apply_solve_options(config, &mut cfg.solve);
            let sol = solve_elasticity(
                &mesh,
                &params,
                |x| prob.body_force(0.0, x),
                |x| prob.displacement(0.0, x),
                &cfg,
            )?;
            let r: &SolveReport = &sol.report;
            (
                r.iterations,
                r.inner_iterations_total,
                r.final_relres(),
                cfg.rho,
            )
        }
        Problem::Poro2 | Problem::Poro3 => {
            let params = PhysicalParams::poro(cell.lambda, cell.dt);
            let prob = Manufactured::poro(dim, params, TimeProfile::Linear)?;
            let initial = PoroState::initial(&mesh, &prob, 0.0);
            if config.problem == Problem::Poro2 {
                let mut cfg = StepConfig::new(cell.method);
                cfg.precond = cell.precond;
                apply_solve_options(config, &mut cfg.solve);
                let (_, records) = march(&mesh, &params, &prob, initial, config.steps, &cfg)?;
                let (o, i, r) = summarize(&records);
                (o, i, r, 0.0)
            } else {
                let mut cfg = ThreeFieldConfig::new(cell.method, cell.regularized);
                cfg.precond = cell.precond;
                apply_solve_options(config, &mut cfg.solve);
                let (_, records) =
                    march_three_field(&mesh, &params, &prob, initial, config.steps, &cfg)?;
                let (o, i, r) = summarize(&records);
                let rho = if cell.regularized {
                    choose_rho(mesh.volumes())?
                } else {
                    0.0
                };
                (o, i, r, rho)
            }
        }
    };
    Ok(TableRow {
        problem: config.problem.name(),
        dim,
        mesh_n: cell.mesh_n,
        n_elements: mesh.n_elements(),
        n_facets: mesh.n_facets(),
        lambda: cell.lambda,
        dt: (!cell.dt.is_nan()).then_some(cell.dt),
        solver: cell.method.name(),
        precond: cell.precond.name(),
        regularized: cell.regularized,
        rho,
        outer_iters: outer,
        inner_iters_total: inner,
        final_relres: relres,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

fn apply_solve_options(config: &ExperimentConfig, solve: &mut porowg::linalg::SolveOptions) {
    if let Some(tol) = config.tol {
        solve.tol = tol;
    }
    solve.maxit = config.maxit;
    solve.restart = config.restart;
}

/// Runs every cell, `config.jobs` at a time; rows come back in cell order.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<TableRow>> {
    let cells = config.cells()?;
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<TableRow>>>> =
        Mutex::new((0..cells.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..config.jobs.min(cells.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(cell) = cells.get(i) else { break };
                let row = run_cell(config, cell);
                slots
                    .lock()
                    .expect("no worker panics while holding the lock")[i] = Some(row);
            });
        }
    });
    slots
        .into_inner()
        .expect("workers have finished")
        .into_iter()
        .map(|slot| slot.expect("every cell is visited"))
        .collect()
}

/// Writes rows as CSV or as a markdown table.
pub fn emit_table<W: Write>(rows: &[TableRow], format: Format, out: W) -> Result<()> {
    match format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(out);
            if rows.is_empty() {
                w.write_record(TABLE_COLUMNS)?;
            }
            for row in rows {
                w.serialize(row)?;
            }
            w.flush()?;
        }
        Format::Markdown => {
            let mut out = out;
            writeln!(out, "| {} |", TABLE_COLUMNS.join(" | "))?;
            writeln!(out, "|{}", "---|".repeat(TABLE_COLUMNS.len()))?;
            for r in rows {
                writeln!(
                    out,
                    "| {} | {} | {} | {} | {} | {} | {} | {} | {} | {} | {:.3e} | {} | {} | {:.2e} | {:.2} |",
                    r.problem,
                    r.dim,
                    r.mesh_n,
                    r.n_elements,
                    r.n_facets,
                    r.lambda,
                    r.dt.map_or(String::new(), |d| d.to_string()),
                    r.solver,
                    r.precond,
                    r.regularized,
                    r.rho,
                    r.outer_iters,
                    r.inner_iters_total,
                    r.final_relres,
                    r.wall_time_s
                )?;
            }
        }
    }
    Ok(())
}

/// Mesh sizes and λ values for the dense oracle suite.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleSuite {
    pub max_n_2d: usize,
    pub max_n_3d: usize,
    pub lambdas: Vec<f64>,
}

impl Default for OracleSuite {
    fn default() -> Self {
        OracleSuite {
            max_n_2d: 4,
            max_n_3d: 0,
            lambdas: vec![1.0, 1e2, 1e4],
        }
    }
}

/// Runs every bound check on 2D meshes `n ∈ {2, 4, 8}` and 3D meshes
/// `n ∈ {2, 3}` up to the suite's limits.
pub fn run_oracle_suite(suite: &OracleSuite) -> Result<Vec<SpectrumReport>> {
    use porowg::oracle::{MAX_DENSE_N_2D, MAX_DENSE_N_3D};
    if suite.max_n_2d > MAX_DENSE_N_2D || suite.max_n_3d > MAX_DENSE_N_3D {
        return Err(config_err(format!(
            "dense checks are capped at n ≤ {MAX_DENSE_N_2D} (2D) and n ≤ {MAX_DENSE_N_3D} (3D)"
        )));
    }
    let meshes = [2usize, 4, 8]
        .iter()
        .filter(|&&n| n <= suite.max_n_2d)
        .map(|&n| (2, n))
        .chain(
            [2usize, 3]
                .iter()
                .filter(|&&n| n <= suite.max_n_3d)
                .map(|&n| (3, n)),
        );
    let mut reports = Vec::new();
    for (dim, n) in meshes {
        let mesh = build_structured_mesh(dim, n)?;
        let constants = BoundConstants::measure(&mesh, &assemble_elasticity(&mesh)?)?;
        for &lambda in &suite.lambdas {
            let elastic = PhysicalParams::elasticity(lambda);
            let poro = PhysicalParams::poro(lambda, 1e-3);
            let el_blocks = WgBlocks::assemble(&mesh, &elastic)?;
            let poro_blocks = WgBlocks::assemble(&mesh, &poro)?;
            reports.extend(verify_bounds_with(
                BoundCase::Elasticity,
                &mesh,
                &elastic,
                RhoChoice::Default,
                &el_blocks,
                &constants,
            )?);
            reports.extend(verify_bounds_with(
                BoundCase::TwoField,
                &mesh,
                &poro,
                RhoChoice::Default,
                &poro_blocks,
                &constants,
            )?);
            for rho in [RhoChoice::Default, RhoChoice::Balanced] {
                reports.extend(verify_bounds_with(
                    BoundCase::ThreeField,
                    &mesh,
                    &poro,
                    rho,
                    &poro_blocks,
                    &constants,
                )?);
            }
        }
    }
    Ok(reports)
}

/// Writes the oracle CSV and fails when any hard bound is violated.
pub fn report_oracle<W: Write>(reports: &[SpectrumReport], out: W) -> Result<()> {
    write_oracle_csv(reports, out)?;
    let failed = reports.iter().filter(|r| !r.passed()).count();
    if failed > 0 {
        return Err(CliError::OracleFailed(failed));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_parse_and_validate() {
        for (name, _) in PRESETS {
            let cfg = ExperimentConfig::preset(name).unwrap();
            assert!(!cfg.cells().unwrap().is_empty(), "{name}");
        }
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        let err = ExperimentConfig::from_toml("problem = \"poro2\"\nbogus = 1\n").unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn minres_with_triangular_is_rejected() {
        let cfg = ExperimentConfig {
            precond: "tri".into(),
            ..Default::default()
        };
        assert_eq!(cfg.validate().unwrap_err().exit_code(), 2);
    }

    #[test]
    fn cells_form_the_product_of_axes() {
        let cfg = ExperimentConfig {
            problem: Problem::Poro3,
            mesh_n: vec![2, 4],
            lambda: vec![1.0, 1e4],
            dt: vec![1e-3],
            solver: vec!["minres".into(), "gmres".into()],
            regularize: vec![true, false],
            ..Default::default()
        };
        assert_eq!(cfg.cells().unwrap().len(), 16);
        let elastic = ExperimentConfig {
            dt: vec![1.0, 2.0],
            ..Default::default()
        };
        assert_eq!(elastic.cells().unwrap().len(), 1);
    }

    #[test]
    fn csv_header_matches_columns() {
        let mut buf = Vec::new();
        emit_table(&[], Format::Csv, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap().trim(),
            TABLE_COLUMNS.join(",")
        );
    }

    #[test]
    fn parallel_run_matches_serial() {
        let cfg = ExperimentConfig {
            problem: Problem::Poro2,
            mesh_n: vec![2, 4],
            solver: vec!["minres".into(), "gmres".into()],
            ..Default::default()
        };
        let serial = run_experiment(&cfg).unwrap();
        let parallel = run_experiment(&ExperimentConfig { jobs: 3, ..cfg }).unwrap();
        let counts = |rows: &[TableRow]| {
            rows.iter()
                .map(|r| (r.mesh_n, r.solver, r.outer_iters))
                .collect::<Vec<_>>()
        };
        assert_eq!(counts(&serial), counts(&parallel));
        let mut buf = Vec::new();
        emit_table(&serial, Format::Csv, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), TABLE_COLUMNS.join(","));
        assert_eq!(text.lines().count(), 5);
    }
}
