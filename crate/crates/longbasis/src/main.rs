use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use longbasis::config::RunConfig;
use longbasis::pipeline;
use longbasis::{PipelineError, Result};

#[derive(Parser)]
#[command(name = "longbasis", version, about = "Two-population longevity basis risk toolkit")]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override `scenario.master_seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for scenario generation.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory (default: `output.dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override `data.floor_rate`.
    #[arg(long, global = true)]
    floor_rate: Option<f64>,
    /// Diagnostic: project every scenario from the base fit without resampling.
    #[arg(long, global = true)]
    no_resample: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate and normalise the input panels.
    Ingest,
    /// Fit the reference Lee–Carter model.
    Fit,
    /// Calibrate the jump-diffusion on the reference index.
    CalibrateJumps,
    /// Fit and rank the book families by BIC.
    FitBook,
    /// BIC table and risk-reduction report for every configured model.
    Compare,
    /// Generate bootstrap scenarios into a store directory.
    Simulate,
    /// Hedge a scenario store.
    Hedge {
        #[arg(long)]
        scenarios: PathBuf,
    },
    /// Render the report; optionally write plot data.
    Report {
        #[arg(long)]
        scenarios: Option<PathBuf>,
        #[arg(long)]
        emit_plot_data: bool,
    },
    /// Run the invariant suite.
    Validate {
        #[arg(long)]
        scenarios: Option<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let path = cli.config.as_deref().ok_or_else(|| PipelineError::Config("--config is required".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.scenario.master_seed = seed;
    }
    if let Some(f) = cli.floor_rate {
        cfg.data.floor_rate = f;
    }
    if cli.no_resample {
        cfg.scenario.resample = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("LONGBASIS_LOG", &cfg.output.log_level)).init();
    let out = pipeline::output_dir(&cfg, cli.out.as_deref());
    match &cli.command {
        Command::Ingest => {
            let p = pipeline::ingest(&cfg, &out)?;
            println!(
                "reference {:?} x {:?}, book {:?} x {:?}",
                p.reference.ages(),
                p.reference.years(),
                p.book.ages(),
                p.book.years()
            );
        }
        Command::Fit => {
            let fit = pipeline::fit(&cfg, &out)?;
            println!("loglik {} after {} iterations", fit.loglik, fit.iterations);
        }
        Command::CalibrateJumps => {
            let c = pipeline::calibrate_jumps(&cfg, &out)?;
            println!("{:?} ({}) loglik {}", c.params, c.family.name(), c.loglik);
        }
        Command::FitBook => {
            for f in pipeline::fit_books(&cfg, &out)? {
                println!("{:<6} bic {:.3}", f.family.name(), f.bic);
            }
        }
        Command::Compare => {
            let rows = pipeline::compare(&cfg, &out, cli.threads)?;
            print!("{}", longbasis::report::render_table(&rows));
        }
        Command::Simulate => {
            let set = pipeline::simulate(&cfg, &out, cli.threads)?;
            println!("{} scenarios ({} redrawn) in {}", set.scenarios.len(), set.failures(), out.display());
        }
        Command::Hedge { scenarios } => {
            let rows = pipeline::hedge(&cfg, scenarios, &out)?;
            print!("{}", longbasis::report::render_table(&rows));
        }
        Command::Report { scenarios, emit_plot_data } => {
            print!("{}", pipeline::report(&cfg, scenarios.as_deref(), &out, *emit_plot_data)?);
        }
        Command::Validate { scenarios } => {
            for c in pipeline::validate(&cfg, scenarios.as_deref(), &out)? {
                println!("ok  {:<36} {}", c.name, c.detail);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::FAILURE
        }
    }
}
