use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ntk_influence::experiments::Experiment;
use ntk_influence_cli::config::{self, Config, ConfigError, Entry};

/// Influence functions of wide ReLU networks through the neural tangent kernel.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write manifest.json and results.csv.
    Run {
        #[command(flatten)]
        settings: Settings,
        /// Output directory (overrides `out`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Size of the worker pool; defaults to the number of cores.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Check a configuration without running it and print its normalized form.
    Validate {
        /// Configuration file (same as --config).
        path: Option<PathBuf>,
        #[command(flatten)]
        settings: Settings,
    },
    /// Print the experiment names with a one-line description.
    ListExperiments,
}

#[derive(Args)]
struct Settings {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run a single repetition with this seed (same as `--set seeds=N`).
    #[arg(long)]
    seed: Option<u64>,
    /// Override one setting; may be repeated. Applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Settings {
    fn entries(&self, path: Option<&PathBuf>) -> Result<Vec<Entry>, ConfigError> {
        let mut entries = match path.or(self.config.as_ref()) {
            Some(p) => config::read_file(p)?,
            None => Vec::new(),
        };
        if let Some(seed) = self.seed {
            entries.push(config::parse_override(&format!("seeds={seed}"))?);
        }
        for o in &self.overrides {
            entries.push(config::parse_override(o)?);
        }
        Ok(entries)
    }
}

fn config_failure(e: ConfigError) -> ExitCode {
    eprintln!("config error: {e}");
    ExitCode::from(1)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::ListExperiments => {
            for e in Experiment::ALL {
                println!("{:<18} {}", e.name(), e.description());
            }
            ExitCode::SUCCESS
        }
        Command::Validate { path, settings } => {
            let cfg = match settings.entries(path.as_ref()).and_then(|e| Config::resolve(&e)) {
                Ok(c) => c,
                Err(e) => return config_failure(e),
            };
            if let Err(e) = cfg.validate() {
                return config_failure(e);
            }
            println!("ok");
            for (k, v) in cfg.echo() {
                println!("{k} = {v}");
            }
            ExitCode::SUCCESS
        }
        Command::Run { settings, out, threads } => {
            let mut cfg = match settings.entries(None).and_then(|e| Config::resolve(&e)) {
                Ok(c) => c,
                Err(e) => return config_failure(e),
            };
            if let Some(out) = out {
                cfg.out = out;
            }
            if let Err(e) = cfg.validate() {
                return config_failure(e);
            }
            if let Some(n) = threads {
                if n == 0 {
                    return config_failure(ConfigError::Invalid("--threads must be positive".into()));
                }
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                    return config_failure(ConfigError::Invalid(format!("cannot start {n} threads: {e}")));
                }
            }
            match ntk_influence_cli::execute(&cfg) {
                Ok(manifest) => {
                    println!(
                        "{}: wrote {} rows to {} in {:.1}s",
                        cfg.experiment.name(),
                        manifest["rows"],
                        cfg.out.display(),
                        manifest["wall_time_seconds"].as_f64().unwrap_or(0.0)
                    );
                    ExitCode::SUCCESS
                }
                Err(e) if e.is_numerical() => {
                    eprintln!("numerical failure in module `{}`: {e}", e.module());
                    ExitCode::from(2)
                }
                Err(e) => {
                    eprintln!("error in module `{}`: {e}", e.module());
                    ExitCode::from(1)
                }
            }
        }
    }
}
