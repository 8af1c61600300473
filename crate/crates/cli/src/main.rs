use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use perfhom::acceptance::run_all;
use perfhom::cell::{homogenize, HomogenizedModel};
use perfhom::config::{defaults_text, parse_config, RunConfig};
use perfhom::finescale::{solve_eps_spectrum, NormTag};
use perfhom::geometry::{build_cell_mesh, build_domain_mesh_with_budget, write_mesh_text, CellMesh};
use perfhom::harness::{emit_report, run_sweep, Format};
use perfhom::limits::{limit_for, limit_orthonormality_check, LimitSolution, OrthonormalityReport};
use perfhom::materials::{preset_coefficients, preset_density, CoefficientField, DensityField};
use perfhom::Error;

#[derive(Parser)]
#[command(name = "perfhom", version, about = "Spectral homogenization sweeps for indefinite-weight eigenproblems")]
struct Cli {
    /// Configuration file (key=value).
    #[arg(short = 'c', long = "config", global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output.dir`.
    #[arg(short = 'o', long = "out", global = true)]
    out: Option<PathBuf>,
    /// Comma-separated subset of csv,json,svg; overrides `output.formats`.
    #[arg(long, global = true)]
    formats: Option<String>,
    /// Maximum mesh vertices per fine solve; overrides `budget.vertices`.
    #[arg(long, global = true)]
    budget: Option<usize>,
    /// Print the default configuration and exit.
    #[arg(long)]
    print_defaults: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the cell problems and write `model.json`.
    Cell,
    /// Solve both homogenized limit problems and write `limit.json`.
    Limit,
    /// Solve the ε-problem for every n of the sweep.
    SolveEps,
    /// Run the ε-sweep and write the report files.
    Sweep,
    /// Run the acceptance suite.
    Check {
        #[arg(long)]
        seed: Option<u64>,
    },
}

enum Failure {
    Validation(String),
    Solver(String),
    Acceptance(usize),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_validation() {
            Failure::Validation(e.to_string())
        } else {
            Failure::Solver(e.to_string())
        }
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Validation(format!("{}: {e}", path.display()))
}

fn load_config(cli: &Cli) -> Result<RunConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| io_failure(path, e))?;
            parse_config(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(b) = cli.budget {
        cfg.budget = b;
    }
    if let Some(f) = &cli.formats {
        cfg.formats = f.split(',').map(|x| x.parse::<Format>()).collect::<perfhom::Result<_>>()?;
    }
    if let Some(o) = &cli.out {
        cfg.output_dir = o.to_string_lossy().into_owned();
    }
    cfg.plan().validate()?;
    Ok(cfg)
}

fn write(dir: &Path, name: &str, body: &str) -> Result<PathBuf, Failure> {
    fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
    let path = dir.join(name);
    fs::write(&path, body).map_err(|e| io_failure(&path, e))?;
    Ok(path)
}

struct CellSetup {
    mesh: CellMesh,
    coeff: CoefficientField,
    rho: DensityField,
    model: HomogenizedModel,
}

fn cell_setup(cfg: &RunConfig) -> Result<CellSetup, Failure> {
    let mesh = build_cell_mesh(&cfg.geometry)?;
    let coeff = preset_coefficients(cfg.coefficients, &mesh)?;
    let rho = preset_density(cfg.density, &mesh)?;
    let model = homogenize(&mesh, &coeff, &rho)?;
    Ok(CellSetup {
        mesh,
        coeff,
        rho,
        model,
    })
}

#[derive(Serialize)]
struct LimitDocument {
    positive_side: LimitSolution,
    negative_side: LimitSolution,
    orthonormality: [OrthonormalityReport; 2],
}

#[derive(Serialize)]
struct EpsDocument {
    n: usize,
    eps: f64,
    positive: Vec<f64>,
    negative: Vec<f64>,
    normalization_defect: f64,
}

fn run(cli: &Cli) -> Result<(), Failure> {
    if cli.print_defaults {
        print!("{}", defaults_text());
        return Ok(());
    }
    let Some(command) = &cli.command else {
        return Err(Failure::Validation("no subcommand given; see --help".into()));
    };
    if let Command::Check { seed } = command {
        let seed = match seed {
            Some(s) => *s,
            None if cli.config.is_some() => load_config(cli)?.seed,
            None => perfhom::acceptance::DEFAULT_SEED,
        };
        let outcomes = run_all(seed);
        for o in &outcomes {
            println!("{o}");
        }
        let failed = outcomes.iter().filter(|o| !o.pass).count();
        return if failed == 0 { Ok(()) } else { Err(Failure::Acceptance(failed)) };
    }
    let cfg = load_config(cli)?;
    let out = PathBuf::from(&cfg.output_dir);
    match command {
        Command::Cell => {
            let setup = cell_setup(&cfg)?;
            let path = write(&out, "model.json", &setup.model.to_json()?)?;
            println!("{}", path.display());
        }
        Command::Limit => {
            let setup = cell_setup(&cfg)?;
            let pos = limit_for(&setup.model, true, cfg.count, cfg.limit_grid)?;
            let neg = limit_for(&setup.model, false, cfg.count, cfg.limit_grid)?;
            let doc = LimitDocument {
                orthonormality: [limit_orthonormality_check(&pos), limit_orthonormality_check(&neg)],
                positive_side: pos,
                negative_side: neg,
            };
            let body = serde_json::to_string_pretty(&doc).map_err(Error::from)?;
            println!("{}", write(&out, "limit.json", &body)?.display());
        }
        Command::SolveEps => {
            let setup = cell_setup(&cfg)?;
            let tag = if cfg.regime == perfhom::cell::Regime::MZero {
                NormTag::EpsScaled
            } else {
                NormTag::Signed
            };
            let geom = cfg.geometry.with_resolution(cfg.s);
            for &n in &cfg.n_values {
                let mesh = build_domain_mesh_with_budget(n, cfg.s, &geom, cfg.budget)?;
                let coeff = setup.coeff.on_domain(&mesh, &setup.mesh)?;
                let rho = setup.rho.on_domain(&mesh, &setup.mesh)?;
                let sol = solve_eps_spectrum(&mesh, &coeff, &rho, cfg.count, cfg.count, tag)?;
                let doc = EpsDocument {
                    n,
                    eps: sol.eps,
                    positive: sol.spectrum.positive.iter().map(|p| p.lambda).collect(),
                    negative: sol.spectrum.negative.iter().map(|p| p.lambda).collect(),
                    normalization_defect: sol.normalization_defect(&mesh, &rho),
                };
                let body = serde_json::to_string_pretty(&doc).map_err(Error::from)?;
                println!("{}", write(&out, &format!("eps_n{n}.json"), &body)?.display());

                let names: Vec<String> = (1..=cfg.count)
                    .flat_map(|k| [format!("u_plus_{k}"), format!("u_minus_{k}")])
                    .collect();
                let values: Vec<Vec<f64>> = (0..cfg.count)
                    .flat_map(|k| [sol.field(true, k), sol.field(false, k)])
                    .collect();
                let fields: Vec<(&str, &[f64])> =
                    names.iter().map(String::as_str).zip(values.iter().map(Vec::as_slice)).collect();
                let mut text = Vec::new();
                write_mesh_text(&mut text, &mesh, &[("dirichlet", &mesh.dirichlet_boundary)], &fields)?;
                let body = String::from_utf8(text).expect("mesh text is ASCII");
                println!("{}", write(&out, &format!("eps_n{n}.mesh"), &body)?.display());
            }
        }
        Command::Sweep => {
            let report = run_sweep(&cfg.plan())?;
            for path in emit_report(&report, &out, &cfg.formats)? {
                println!("{}", path.display());
            }
        }
        Command::Check { .. } => unreachable!(),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Solver(msg)) => {
            eprintln!("solver error: {msg}");
            ExitCode::from(3)
        }
        Err(Failure::Acceptance(n)) => {
            eprintln!("{n} acceptance criteria failed");
            ExitCode::from(4)
        }
    }
}
