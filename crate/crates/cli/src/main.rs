//! `biosig` command-line tool.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or format error, 3 I/O error.

mod report;

use std::collections::BTreeMap;
use std::io::{self, IsTerminal, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use biosig::bench::{self, BenchConfig, BenchError, BenchSize};
use biosig::formats::{self, FormatError, OutputFormat};
use biosig::par::Execution;
use biosig::preprocess::{self, PreprocessError};
use clap::{ColorChoice, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "biosig", version, about = "Biosignal file inspection, conversion, epoching and benchmarking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the detected file format.
    Detect { path: PathBuf },
    /// Print header fields and per-channel quality.
    Info {
        path: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Convert a recording to EDF or CSV.
    Convert {
        input: PathBuf,
        output: PathBuf,
        #[arg(long, value_enum)]
        to: ConvertTo,
        #[arg(long)]
        json: bool,
    },
    /// Cut trigger-aligned epochs into a CSV file.
    Epochs {
        path: PathBuf,
        /// Event type marking each trial.
        #[arg(long)]
        trigger: u16,
        /// Samples before the trigger.
        #[arg(long, default_value_t = 0)]
        pre: usize,
        /// Samples after the trigger.
        #[arg(long)]
        post: usize,
        #[arg(long)]
        out: PathBuf,
        /// Class label for an event type, as TYPE=NAME. Repeatable.
        #[arg(long = "label", value_parser = parse_label)]
        labels: Vec<(u16, String)>,
        #[arg(long)]
        json: bool,
    },
    /// Mark amplitude and flat-line artifacts as missing data.
    Artifacts {
        path: PathBuf,
        /// Absolute amplitude above which samples are rejected.
        #[arg(long, allow_negative_numbers = true)]
        threshold: f64,
        /// Shortest run of identical samples treated as flat.
        #[arg(long)]
        flat_run: usize,
        /// Output file; CSV when the name ends in .csv, EDF otherwise.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Run the synthetic load/feature/train/cross-validation benchmark.
    Bench {
        #[arg(long, value_enum, default_value_t = SizeArg::Small)]
        size: SizeArg,
        #[arg(long, default_value_t = bench::DEFAULT_SEED)]
        seed: u64,
        #[arg(long, default_value_t = bench::DEFAULT_AR_ORDER)]
        order: usize,
        /// Directory for the generated fixture; a temporary one otherwise.
        #[arg(long)]
        workdir: Option<PathBuf>,
        /// Run per-trial features and folds on the thread pool.
        #[arg(long)]
        parallel: bool,
        #[arg(long)]
        json: bool,
    },
    /// Serve a recording to the browser viewer on 127.0.0.1.
    Serve {
        path: PathBuf,
        #[arg(long, default_value_t = biosig_server::DEFAULT_PORT)]
        port: u16,
        #[arg(long)]
        readonly: bool,
        /// Directory with the viewer's static files.
        #[arg(long)]
        static_dir: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ConvertTo {
    Edf,
    Csv,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SizeArg {
    Small,
    Paper,
}

fn parse_label(s: &str) -> Result<(u16, String), String> {
    let (code, name) = s.split_once('=').ok_or("expected TYPE=NAME")?;
    let code = biosig::safeparse::parse_uint(code)
        .and_then(|c| u16::try_from(c).ok())
        .ok_or_else(|| format!("bad event type {code:?}"))?;
    if name.is_empty() {
        return Err("empty label name".into());
    }
    Ok((code, name.to_owned()))
}

#[derive(Debug)]
enum CliError {
    Data(String),
    Io(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Data(_) => 2,
            CliError::Io(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Data(m) | CliError::Io(m) => m,
        }
    }
}

fn format_error(path: &Path, e: FormatError) -> CliError {
    let msg = format!("{}: {e}", path.display());
    if e.is_io() {
        CliError::Io(msg)
    } else {
        CliError::Data(msg)
    }
}

impl From<PreprocessError> for CliError {
    fn from(e: PreprocessError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<BenchError> for CliError {
    fn from(e: BenchError) -> Self {
        if e.is_io() {
            CliError::Io(e.to_string())
        } else {
            CliError::Data(e.to_string())
        }
    }
}

fn io_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn use_color() -> bool {
    std::env::var_os("BIOSIG_NO_COLOR").is_none() && io::stderr().is_terminal()
}

fn print_json(value: &serde_json::Value) -> Result<(), CliError> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| CliError::Io(e.to_string()))?;
    writeln!(out).map_err(|e| CliError::Io(e.to_string()))
}

fn read(path: &Path) -> Result<formats::SignalRecord, CliError> {
    formats::read_record(path).map_err(|e| format_error(path, e))
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Detect { path } => {
            let id = formats::detect_file(&path).map_err(|e| io_error(&path, e))?;
            println!("{id}");
        }
        Command::Info { path, json } => {
            let record = read(&path)?;
            let quality = preprocess::quality_report(&record);
            if json {
                print_json(&report::info_json(&record, &quality))?;
            } else {
                print!("{}", report::info_text(&record, &quality));
            }
        }
        Command::Convert { input, output, to, json } => {
            let record = read(&input)?;
            let format = match to {
                ConvertTo::Edf => OutputFormat::Edf,
                ConvertTo::Csv => OutputFormat::Csv,
            };
            let summary = formats::write_record(&record, &output, format).map_err(|e| format_error(&output, e))?;
            if json {
                print_json(&serde_json::json!({
                    "output": output.display().to_string(),
                    "clamped": summary.clamped,
                    "nan_runs": summary.nan_runs,
                }))?;
            } else {
                println!("clamped samples: {}", summary.clamped);
                println!("NaN runs: {}", summary.nan_runs);
            }
        }
        Command::Epochs {
            path,
            trigger,
            pre,
            post,
            out,
            labels,
            json,
        } => {
            let record = read(&path)?;
            let map: BTreeMap<u16, String> = labels.into_iter().collect();
            let epochs = preprocess::extract_epochs(&record, trigger, pre, post, (!map.is_empty()).then_some(&map))?;
            report::write_epochs_csv(&epochs, &record, &out).map_err(|e| io_error(&out, e))?;
            if json {
                print_json(&report::epochs_json(&epochs, &out))?;
            } else {
                println!(
                    "{} trials x {} channels x {} samples written to {}",
                    epochs.num_trials(),
                    record.num_channels(),
                    epochs.window_len(),
                    out.display()
                );
                for d in &epochs.dropped {
                    println!("dropped trigger at {} (window leaves the recording)", d.position);
                }
            }
        }
        Command::Artifacts {
            path,
            threshold,
            flat_run,
            out,
            json,
        } => {
            let record = read(&path)?;
            let (marked, counts) = preprocess::mark_artifacts(&record, threshold, flat_run)?;
            let is_csv = out.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
            let format = if is_csv { OutputFormat::Csv } else { OutputFormat::Edf };
            formats::write_record(&marked, &out, format).map_err(|e| format_error(&out, e))?;
            if json {
                print_json(&report::artifacts_json(&marked, &counts, &out))?;
            } else {
                for (spec, n) in marked.header.channels.iter().zip(&counts) {
                    println!("{:<16} {n} samples marked", spec.label);
                }
            }
        }
        Command::Bench {
            size,
            seed,
            order,
            workdir,
            parallel,
            json,
        } => {
            let size = match size {
                SizeArg::Small => BenchSize::Small,
                SizeArg::Paper => BenchSize::Paper,
            };
            let scratch;
            let dir = match workdir {
                Some(d) => d,
                None => {
                    scratch = tempfile::tempdir().map_err(|e| CliError::Io(format!("temporary directory: {e}")))?;
                    scratch.path().to_path_buf()
                }
            };
            let mut config = BenchConfig::new(size, dir);
            config.seed = seed;
            config.ar_order = order;
            config.execution = if parallel { Execution::Parallel } else { Execution::Sequential };
            let report = bench::run_benchmark(&config)?;
            if json {
                print_json(&report.to_json())?;
            } else {
                print!("{}", report.render_text());
            }
        }
        Command::Serve {
            path,
            port,
            readonly,
            static_dir,
        } => {
            let session = biosig_server::ViewSession::open(&path, readonly).map_err(|e| format_error(&path, e))?;
            let options = biosig_server::ServeOptions { port, static_dir };
            biosig_server::run(session, options, |addr| {
                println!("serving {} at http://{addr}/ (Ctrl-C to stop)", path.display());
                let _ = io::stdout().flush();
            })
            .map_err(|e| CliError::Io(format!("server: {e}")))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let mut command = Cli::command();
    if std::env::var_os("BIOSIG_NO_COLOR").is_some() {
        command = command.color(ColorChoice::Never);
    }
    let parsed = command.try_get_matches().and_then(|m| Cli::from_arg_matches(&m));
    let cli = match parsed {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let prefix = if use_color() { "\x1b[1;31merror:\x1b[0m" } else { "error:" };
            eprintln!("{prefix} {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
