//! `uaudit`: prepare data splits, run unlearning membership-inference
//! experiments and render their results.
//!
//! Exit codes: 0 success, 1 configuration error, 2 data error, 3 runtime
//! error.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use unlearn_audit::experiment::{
    prepare, read_record, render, report, run_experiment, ExperimentConfig, ReportFormat,
};
use unlearn_audit::{Error, ErrorCategory, Result};

#[derive(Parser)]
#[command(name = "uaudit", version, about = "Membership inference against machine unlearning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Json => ReportFormat::Json,
            Format::Csv => ReportFormat::Csv,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Encode the dataset, split it into pools and write the split manifest.
    Prepare {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Manifest path; stdout when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run an experiment and write its result record.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads; all cores by default.
        #[arg(long)]
        workers: Option<usize>,
        /// Directory for trained farms, reused across runs with equal settings.
        #[arg(long)]
        cache_dir: Option<PathBuf>,
        /// Result path; defaults to `<output_dir>/result.<format>` from the
        /// config, or stdout.
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
    },
    /// Re-render a saved JSON result record.
    Report {
        /// Result record written by `run`.
        input: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::from_file(path)?;
    if let Some(s) = seed {
        config.seed = s;
    }
    config.validate()?;
    Ok(config)
}

fn emit(bytes: &[u8], output: Option<&Path>) -> Result<()> {
    match output {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
            }
            std::fs::write(path, bytes).map_err(|e| io_error(path, e))
        }
        None => std::io::stdout()
            .write_all(bytes)
            .map_err(|e| io_error(Path::new("<stdout>"), e)),
    }
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Prepare {
            config,
            seed,
            output,
        } => {
            let config = load_config(&config, seed)?;
            let manifest = prepare(&config)?.manifest();
            let mut bytes = serde_json::to_vec_pretty(&manifest)?;
            bytes.push(b'\n');
            emit(&bytes, output.as_deref())
        }
        Command::Run {
            config,
            seed,
            workers,
            cache_dir,
            output,
            format,
        } => {
            let config = load_config(&config, seed)?;
            let record = run_experiment(&config, workers, cache_dir.as_deref())?;
            for row in &record.rows {
                let m = &row.metrics;
                eprintln!(
                    "{} attack, {}: auc {:.3} (baseline {:.3}), deg_count {:.3}, deg_rate {:.3}",
                    row.attack_kind, row.feature_method, m.auc_ours, m.auc_baseline, m.deg_count, m.deg_rate
                );
            }
            let ext = match format {
                Format::Json => "json",
                Format::Csv => "csv",
            };
            let output = output.or_else(|| {
                config
                    .output_dir
                    .as_ref()
                    .map(|d| d.join(format!("result.{ext}")))
            });
            match output {
                Some(path) => report(&record, format.into(), &path),
                None => emit(&render(&record, format.into())?, None),
            }
        }
        Command::Report {
            input,
            output,
            format,
        } => {
            let record = read_record(&input)?;
            emit(&render(&record, format.into())?, output.as_deref())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.category() {
                ErrorCategory::Config => 1,
                ErrorCategory::Data => 2,
                ErrorCategory::Runtime => 3,
            })
        }
    }
}
