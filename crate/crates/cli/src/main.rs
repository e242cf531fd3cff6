use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use porowg::build_structured_mesh;
use porowg_cli::{
    emit_table, report_oracle, run_experiment, run_oracle_suite, CliError, ExperimentConfig,
    Format, OracleSuite, Problem, Result,
};

#[derive(Parser)]
#[command(
    name = "porowg",
    version,
    about = "Weak Galerkin elasticity and poroelasticity experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a parameter sweep and print an iteration-count table.
    Run(Box<RunArgs>),
    /// Check the eigenvalue bounds with dense eigensolves.
    Oracle(OracleArgs),
    /// Print statistics of a structured mesh, optionally dumping it.
    Mesh(MeshArgs),
}

/// Every config key can also be given as a flag; flags win.
#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in configuration (elasticity_2d, poro2_3d, ...).
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    #[arg(long)]
    problem: Option<String>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long = "mesh_n", alias = "mesh-n", value_delimiter = ',')]
    mesh_n: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    lambda: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    dt: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    solver: Option<Vec<String>>,
    #[arg(long)]
    precond: Option<String>,
    #[arg(long, value_delimiter = ',')]
    regularize: Option<Vec<bool>>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    maxit: Option<usize>,
    #[arg(long)]
    restart: Option<usize>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    format: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    /// Largest 2D subdivision count (2, 4 or 8).
    #[arg(long = "max-n", default_value_t = 4)]
    max_n: usize,
    /// Largest 3D subdivision count (0 skips 3D).
    #[arg(long = "max-n-3d", default_value_t = 0)]
    max_n_3d: usize,
    #[arg(long, value_delimiter = ',')]
    lambda: Option<Vec<f64>>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MeshArgs {
    #[arg(long, default_value_t = 2)]
    dim: usize,
    #[arg(long, default_value_t = 4)]
    n: usize,
    /// Write the mesh in text form to this file (`-` for stdout).
    #[arg(long)]
    dump: Option<PathBuf>,
}

fn output(path: Option<&PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) if p.as_os_str() != "-" => Box::new(BufWriter::new(File::create(p)?)),
        _ => Box::new(io::stdout().lock()),
    })
}

fn load_config(args: RunArgs) -> Result<ExperimentConfig> {
    let mut cfg = match (&args.config, &args.preset) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
            ExperimentConfig::from_toml(&text)?
        }
        (None, Some(name)) => ExperimentConfig::preset(name)?,
        (None, None) => ExperimentConfig::default(),
    };
    if let Some(v) = args.problem {
        cfg.problem = v.parse::<Problem>()?;
    }
    if let Some(v) = args.format {
        cfg.format = v.parse::<Format>()?;
    }
    macro_rules! set {
        ($($field:ident),*) => { $( if let Some(v) = args.$field { cfg.$field = v; } )* };
    }
    set!(dim, mesh_n, lambda, dt, solver, precond, regularize, steps, maxit, restart, jobs);
    if args.tol.is_some() {
        cfg.tol = args.tol;
    }
    if args.out.is_some() {
        cfg.out = args.out;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(args) => {
            let cfg = load_config(*args)?;
            let rows = run_experiment(&cfg)?;
            emit_table(&rows, cfg.format, output(cfg.out.as_ref())?)
        }
        Command::Oracle(args) => {
            let mut suite = OracleSuite {
                max_n_2d: args.max_n,
                max_n_3d: args.max_n_3d,
                ..OracleSuite::default()
            };
            if let Some(l) = args.lambda {
                suite.lambdas = l;
            }
            let reports = run_oracle_suite(&suite)?;
            let flagged = reports.iter().filter(|r| r.flagged()).count();
            let failed = reports.iter().filter(|r| !r.passed()).count();
            eprintln!(
                "{} spectra checked: {failed} violated, {flagged} below the modeled lower estimate",
                reports.len()
            );
            report_oracle(&reports, output(args.out.as_ref())?)
        }
        Command::Mesh(args) => {
            let mesh = build_structured_mesh(args.dim, args.n)?;
            let s = mesh.stats();
            eprintln!(
                "dim {} n {}: {} elements, {} facets ({} boundary), h_max {:.4}, volume range [{:.3e}, {:.3e}]",
                args.dim, args.n, s.n_elements, s.n_facets, s.n_boundary_facets, s.h_max, s.min_volume, s.max_volume
            );
            if let Some(path) = args.dump {
                let mut out = output(Some(&path))?;
                mesh.write_text(&mut out)?;
                out.flush()?;
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("porowg: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
