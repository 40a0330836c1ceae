use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dynbc_core::mesh::Side;
use dynbc_wave::commands::{self, CliError, RunContext};
use dynbc_wave::config::{self, MeshConfig, RunConfig};
use dynbc_wave::output::fmt_num;

#[derive(Parser)]
#[command(name = "dynbc-wave", version, about = "Damped wave equation with dynamic boundary conditions")]
struct Cli {
    /// Run configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides [output] directory).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for sweeps.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Seed for randomized checks.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a mesh and print it as CSV (or write <out>/mesh.csv).
    Mesh(MeshArgs),
    /// Print the regime report for the configured problem.
    Classify,
    /// Integrate the configured problem and write trajectory and verdict.
    Run,
    /// Run the configured exponent grid.
    Sweep,
    #[command(hide = true)]
    Selftest {
        #[arg(long, default_value_t = 100)]
        trials: usize,
    },
}

#[derive(Args)]
struct MeshArgs {
    /// interval, annulus or rectangle; omit to use [mesh] from --config.
    geometry: Option<String>,
    #[arg(long, default_value_t = 1.0)]
    length: f64,
    #[arg(long, default_value_t = 100)]
    elements: usize,
    #[arg(long, default_value_t = 0.5)]
    r0: f64,
    #[arg(long, default_value_t = 1.0)]
    r1: f64,
    #[arg(long, default_value_t = 4)]
    nr: usize,
    #[arg(long, default_value_t = 32)]
    nt: usize,
    #[arg(long, default_value_t = 1.0)]
    lx: f64,
    #[arg(long, default_value_t = 1.0)]
    ly: f64,
    #[arg(long, default_value_t = 10)]
    nx: usize,
    #[arg(long, default_value_t = 10)]
    ny: usize,
    /// Rectangle side carrying the dynamic boundary.
    #[arg(long, default_value = "top")]
    side: String,
}

fn load(path: Option<&Path>) -> Result<(RunConfig, Vec<u8>), CliError> {
    let path = path.ok_or_else(|| CliError::Input("--config <file> is required for this command".into()))?;
    let bytes = std::fs::read(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok((config::parse_config(path)?, bytes))
}

fn mesh_config(args: &MeshArgs, cfg_path: Option<&Path>) -> Result<MeshConfig, CliError> {
    Ok(match args.geometry.as_deref() {
        Some("interval") => MeshConfig::Interval { length: args.length, elements: args.elements },
        Some("annulus") => MeshConfig::Annulus { r0: args.r0, r1: args.r1, nr: args.nr, nt: args.nt },
        Some("rectangle") => {
            let side: Side = args.side.parse()?;
            MeshConfig::Rectangle { lx: args.lx, ly: args.ly, nx: args.nx, ny: args.ny, side }
        }
        Some(other) => return Err(CliError::Input(format!("unknown geometry '{other}' (expected interval, annulus or rectangle)"))),
        None => load(cfg_path)?.0.mesh,
    })
}

fn context<'a>(cli: &'a Cli, cfg: &RunConfig, bytes: &'a [u8]) -> RunContext<'a> {
    RunContext {
        config_path: cli.config.as_deref(),
        config_bytes: bytes,
        out_dir: cli.out.clone().unwrap_or_else(|| cfg.output.directory.clone()),
        threads: cli.jobs.max(1),
    }
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    let mut stdout = std::io::stdout().lock();
    let mut say = |s: &str| {
        let _ = stdout.write_all(s.as_bytes());
    };
    match &cli.command {
        Command::Mesh(args) => {
            let mesh = commands::build_mesh(&mesh_config(args, cli.config.as_deref())?)?;
            let csv = mesh.to_csv();
            match &cli.out {
                Some(dir) => {
                    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
                    let path = dir.join("mesh.csv");
                    std::fs::write(&path, csv).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
                    say(&format!("wrote {} ({} nodes, {} elements)\n", path.display(), mesh.num_nodes(), mesh.num_elements()));
                }
                None => say(&csv),
            }
        }
        Command::Classify => {
            let (cfg, _) = load(cli.config.as_deref())?;
            say(&commands::classify_text(&cfg)?);
        }
        Command::Run => {
            let (cfg, bytes) = load(cli.config.as_deref())?;
            let out = commands::run(&cfg, &context(cli, &cfg, &bytes))?;
            say(&format!("mode: {}\n{}\noutput: {}\n", out.mode, commands::verdict_summary(&out.verdict), out.out_dir.display()));
            if let dynbc_core::harness::VerdictKind::Inconclusive { reason } = &out.verdict.kind {
                return Err(CliError::Inconclusive(reason.clone()));
            }
        }
        Command::Sweep => {
            let (cfg, bytes) = load(cli.config.as_deref())?;
            let ctx = context(cli, &cfg, &bytes);
            let out = commands::run_sweep(&cfg, &ctx)?;
            for e in &out.row_errors {
                eprintln!("{e}");
            }
            say(&out.csv);
        }
        Command::Selftest { trials } => {
            let start = std::time::Instant::now();
            let (text, ok) = commands::selftest_text(cli.seed, *trials)?;
            say(&text);
            say(&format!("seed {} trials {} in {} s\n", cli.seed, trials, fmt_num(start.elapsed().as_secs_f64())));
            if !ok {
                return Err(CliError::Numerical("self-test failed".into()));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
