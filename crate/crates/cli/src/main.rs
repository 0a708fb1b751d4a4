use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use surveyor_cli::commands::{self, Inspect};
use surveyor_cli::{CliError, PipelineConfig, RunOptions, Services};
use tracing_subscriber::EnvFilter;

/// Generates literature surveys from a topic and scores them.
#[derive(Parser)]
#[command(name = "surveyor", version, about)]
struct Cli {
    /// TOML configuration; built-in defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overriding the configured locations.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Repeat for more log detail.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the pipeline and write the survey.
    Generate {
        #[arg(long)]
        topic: Option<String>,
        #[arg(long)]
        enable_code_analysis: bool,
        /// Directory holding checked-out repositories.
        #[arg(long)]
        repo_root: Option<PathBuf>,
        /// Continue from the last checkpoint instead of starting over.
        #[arg(long)]
        resume: bool,
    },
    /// Score a generated survey and write evaluation.csv and evaluation.json.
    Evaluate {
        #[arg(long)]
        survey: PathBuf,
        /// Name used in the report's system column.
        #[arg(long, default_value = "surveyor")]
        system: String,
    },
    /// Print part of the stored substrate.
    Inspect {
        #[command(subcommand)]
        what: InspectCmd,
    },
    /// Manage the response cache.
    Cache {
        #[command(subcommand)]
        action: CacheCmd,
    },
    /// Print the effective configuration as TOML.
    Config,
}

#[derive(Subcommand)]
enum InspectCmd {
    Keynote { id: String },
    Clusters,
    Analysis {
        #[arg(long)]
        cluster: Option<u32>,
    },
    Outline,
}

#[derive(Subcommand)]
enum CacheCmd {
    Clear,
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, CliError> {
    let cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    Ok(match &cli.output {
        Some(dir) => cfg.with_output_dir(dir),
        None => cfg,
    })
}

fn execute(cli: Cli) -> anyhow::Result<ExitCode> {
    let mut cfg = load_config(&cli)?;
    match cli.command {
        Command::Generate {
            topic,
            enable_code_analysis,
            repo_root,
            resume,
        } => {
            if let Some(t) = topic {
                cfg.topic = t;
            }
            if enable_code_analysis {
                cfg.code_analysis.enabled = true;
            }
            if repo_root.is_some() {
                cfg.repo_root = repo_root;
            }
            cfg.validate()?;
            let services = Services::from_config(&cfg)?;
            let outcome = surveyor_cli::run(&cfg, services, RunOptions { resume })?;
            match outcome.survey_path() {
                Some(p) => println!("survey written to {}", p.display()),
                None => println!("no survey assembled; writing did not run"),
            }
            println!("manifest written to {}", outcome.manifest_path.display());
        }
        Command::Evaluate { survey, system } => {
            let out = commands::evaluate(&cfg, &survey, cli.output.as_deref(), &system)?;
            print!("{}", out.report.table());
            println!("report written to {} and {}", out.csv.display(), out.json.display());
            if !out.report.is_complete() {
                for (metric, err) in out.report.errors() {
                    eprintln!("{metric}: {err}");
                }
                return Ok(ExitCode::from(4));
            }
        }
        Command::Inspect { what } => {
            let what = match what {
                InspectCmd::Keynote { id } => Inspect::Keynote(id),
                InspectCmd::Clusters => Inspect::Clusters,
                InspectCmd::Analysis { cluster } => Inspect::Analysis(cluster),
                InspectCmd::Outline => Inspect::Outline,
            };
            print!("{}", commands::inspect(&cfg.substrate_dir(), &what)?);
        }
        Command::Cache { action: CacheCmd::Clear } => {
            let dir = cfg.cache_dir();
            let removed = commands::clear_cache(&dir)?;
            println!(
                "{} {}",
                if removed { "cleared" } else { "nothing to clear at" },
                dir.display()
            );
        }
        Command::Config => print!("{}", cfg.to_toml()),
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(level)))
        .with_writer(std::io::stderr)
        .init();
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            let code = e.downcast_ref::<CliError>().map_or(1, CliError::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
