//! `tw`: operate the anomaly service from a terminal.
//!
//! `serve`, `detect`, `review` and `report show` talk to (or are) the HTTP
//! service; `ingest`, `train`, `report pairs` and `replay` work on local
//! files. Exit codes: 0 success, 2 bad input, 3 internal failure.

use std::fs;
use std::io::{self, BufReader};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use telewatch_client::{review::review, Client, ClientError};
use telewatch_core::agent::{DatasetRef, RunConfig};
use telewatch_core::api::RunStatus;
use telewatch_core::ingest::{ingest_mailbox, CecOptions, MailboxFilter};
use telewatch_core::nn::{save_checkpoint, train, ModelConfig, ModelKind, OptimHyper};
use telewatch_core::preprocess::{apply_minmax, chrono_split, fit_minmax, make_windows, Direction, WindowSpec};
use telewatch_core::report::{read_discrepancy_csv, write_pair_dataset};
use telewatch_core::synthetic::SyntheticSpec;
use telewatch_core::track::{impute_missing, read_frames_csv, ImputePolicy, Provenance, TrackKey};

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    BadInput(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::BadInput(_) => 2,
            CliError::Internal(_) => 3,
        }
    }
}

impl From<ClientError> for CliError {
    fn from(e: ClientError) -> Self {
        match e.status() {
            Some(s) if s.is_client_error() => CliError::BadInput(e.to_string()),
            _ => CliError::Internal(e.to_string()),
        }
    }
}

fn bad(e: impl std::fmt::Display) -> CliError {
    CliError::BadInput(e.to_string())
}

fn internal(e: impl std::fmt::Display) -> CliError {
    CliError::Internal(e.to_string())
}

#[derive(Parser)]
#[command(name = "tw", version, about = "Telemetry anomaly detection and triage")]
struct Cli {
    /// Base URL of a running service.
    #[arg(long, global = true, env = "TW_SERVER", default_value = "http://127.0.0.1:8080")]
    server: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP service.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Data root (event log, runs); defaults to $TW_DATA_DIR or ./tw-data.
        #[arg(long)]
        data_dir: Option<PathBuf>,
        /// Directory with the UI bundle served at `/`.
        #[arg(long)]
        static_dir: Option<PathBuf>,
    },
    /// Turn a mailbox directory into canonical track CSVs.
    Ingest {
        #[arg(long)]
        mailbox: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// RFC 3339 lower bound on the message date.
        #[arg(long)]
        since: Option<String>,
        #[arg(long)]
        until: Option<String>,
        #[arg(long)]
        recipient: Option<String>,
        #[arg(long)]
        subject: Option<String>,
    },
    /// Train a model on one track of a canonical CSV and write a checkpoint.
    Train(TrainArgs),
    /// Start a detection run on the service.
    Detect(DetectArgs),
    /// Review open anomalies interactively.
    Review {
        #[arg(long)]
        run: Option<String>,
        #[arg(long, default_value = "operator")]
        operator: String,
    },
    /// Discrepancy reports: show one, or build the prompt/response dataset.
    #[command(subcommand)]
    Report(ReportCommand),
    /// Rebuild service state from an event log and print a summary.
    Replay {
        #[arg(long)]
        log: PathBuf,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "lstm-recon")]
    model: ModelKind,
    /// Comma-separated feature columns.
    #[arg(long, value_delimiter = ',', required = true)]
    features: Vec<String>,
    #[arg(long)]
    dss: Option<u32>,
    #[arg(long)]
    scid: Option<u32>,
    #[arg(long, default_value_t = 32)]
    window: usize,
    #[arg(long, default_value_t = 0)]
    horizon: usize,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 64)]
    hidden: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct DetectArgs {
    /// Canonical track CSV readable by the service.
    #[arg(long, conflicts_with = "synthetic")]
    csv: Option<PathBuf>,
    /// Use the built-in planted-spike track with this seed.
    #[arg(long)]
    synthetic: Option<u64>,
    /// JSON run configuration; fields left out take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Small, fast model settings.
    #[arg(long)]
    desk: bool,
    #[arg(long)]
    seed: Option<u64>,
    /// Return right after the run is accepted.
    #[arg(long)]
    no_wait: bool,
    #[arg(long, default_value_t = 600)]
    timeout_secs: u64,
}

#[derive(Subcommand)]
enum ReportCommand {
    /// Print the report of an event.
    Show {
        id: String,
        #[arg(long)]
        markdown: bool,
    },
    /// Build the prompt/response dataset from a discrepancy CSV.
    Pairs {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_instant(s: &Option<String>) -> Result<Option<chrono::DateTime<chrono::Utc>>, CliError> {
    s.as_deref()
        .map(|v| {
            chrono::DateTime::parse_from_rfc3339(v)
                .map(|d| d.with_timezone(&chrono::Utc))
                .map_err(|e| bad(format!("bad instant {v}: {e}")))
        })
        .transpose()
}

fn print_json(v: &impl serde::Serialize) -> Result<(), CliError> {
    println!("{}", serde_json::to_string_pretty(v).map_err(internal)?);
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> Result<(), CliError> {
    let file = fs::File::open(&a.data).map_err(|e| bad(format!("{}: {e}", a.data.display())))?;
    let frames = read_frames_csv(BufReader::new(file), Provenance::AntennaDataset).map_err(bad)?;
    let frame = match (a.dss, a.scid) {
        (Some(d), Some(s)) => frames.get(&TrackKey::new(d, s)).cloned(),
        (None, None) => frames.values().next().cloned(),
        _ => return Err(bad("pass both --dss and --scid")),
    }
    .ok_or_else(|| bad("track not found"))?;
    let frame = impute_missing(&frame, ImputePolicy::default());
    let scaler = fit_minmax(&frame, &a.features).map_err(bad)?;
    let scaled = apply_minmax(&frame, &scaler, Direction::Forward).map_err(bad)?;
    let spec = WindowSpec {
        length: a.window,
        stride: 1,
        horizon: a.horizon,
    };
    let windows = make_windows(&scaled, &a.features, &spec).map_err(bad)?;
    let (tr, va) = chrono_split(&windows, 0.8).map_err(bad)?;
    let config = ModelConfig {
        kind: a.model,
        input_size: a.features.len(),
        output_size: a.features.len(),
        hidden_size: a.hidden,
        seq_len: a.window,
        seed: a.seed,
        ..ModelConfig::default()
    };
    let hyper = OptimHyper {
        lr: a.lr,
        epochs: a.epochs,
        ..OptimHyper::default()
    };
    let model = train(&config, &hyper, &tr, &va).map_err(|e| match e {
        telewatch_core::nn::NnError::BadConfig(_) | telewatch_core::nn::NnError::ShapeMismatch { .. } => bad(e),
        other => internal(other),
    })?;
    for (i, e) in model.history.iter().enumerate() {
        println!("epoch {:>3}  train {:.6}  val {:.6}", i + 1, e.train, e.val);
    }
    fs::write(&a.out, save_checkpoint(&model)).map_err(internal)?;
    println!("checkpoint written to {}", a.out.display());
    Ok(())
}

async fn cmd_detect(client: &Client, a: &DetectArgs) -> Result<(), CliError> {
    let dataset = match (&a.csv, a.synthetic) {
        (Some(p), None) => DatasetRef::Csv {
            path: fs::canonicalize(p).map_err(|e| bad(format!("{}: {e}", p.display())))?,
        },
        (None, Some(seed)) => DatasetRef::Synthetic {
            spec: SyntheticSpec {
                seed,
                ..SyntheticSpec::default()
            },
        },
        _ => return Err(bad("pass exactly one of --csv or --synthetic")),
    };
    let mut config = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| bad(format!("{}: {e}", p.display())))?;
            serde_json::from_str::<RunConfig>(&text).map_err(bad)?
        }
        None if a.desk => RunConfig::desk(),
        None => RunConfig::default(),
    };
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    let id = client.start_run(dataset, config).await?;
    println!("run {id}");
    if a.no_wait {
        return Ok(());
    }
    let run = client
        .wait_for_run(&id, Duration::from_millis(250), Duration::from_secs(a.timeout_secs))
        .await?;
    match run.status {
        RunStatus::Completed => {
            println!("completed: {} anomalies, {} reports", run.anomaly_count, run.report_ids.len());
            if let Some(d) = &run.decision {
                println!("decision: {d}");
            }
            Ok(())
        }
        _ => Err(internal(format!(
            "run {id} failed: {}",
            run.error.unwrap_or_else(|| "unknown error".into())
        ))),
    }
}

fn cmd_replay(log: &Path) -> Result<(), CliError> {
    match telewatch_service::replay_log(log) {
        Ok(state) => {
            let open = state.anomalies.values().filter(|a| a.event.status.is_open()).count();
            println!(
                "seq {}: {} runs, {} anomalies ({} open), {} reports",
                state.last_seq,
                state.runs.len(),
                state.anomalies.len(),
                open,
                state.reports.len()
            );
            print_json(&state.qtable)
        }
        Err(telewatch_service::ReplayError::CorruptLog { seq, reason, partial, .. }) => {
            eprintln!("log corrupt at seq {seq}: {reason}; state up to seq {}:", partial.last_seq);
            print_json(&partial.qtable)?;
            Err(bad(format!("corrupt log at seq {seq}")))
        }
        Err(e) => Err(bad(e)),
    }
}

async fn dispatch(cli: Cli) -> Result<(), CliError> {
    let client = Client::new(&cli.server);
    match cli.command {
        Command::Serve {
            addr,
            data_dir,
            static_dir,
        } => {
            let dir = data_dir.unwrap_or_else(telewatch_service::default_data_dir);
            telewatch_service::serve(addr, dir, static_dir).await.map_err(internal)
        }
        Command::Ingest {
            mailbox,
            out,
            since,
            until,
            recipient,
            subject,
        } => {
            let filter = MailboxFilter {
                since: parse_instant(&since)?,
                until: parse_instant(&until)?,
                recipient,
                subject_contains: subject,
            };
            let summary = ingest_mailbox(&mailbox, &filter, &CecOptions::default(), &out).map_err(bad)?;
            print_json(&summary)
        }
        Command::Train(a) => cmd_train(&a),
        Command::Detect(a) => cmd_detect(&client, &a).await,
        Command::Review { run, operator } => {
            let stdin = io::stdin();
            let summary = review(&client, run.as_deref(), &operator, stdin.lock(), io::stdout()).await?;
            println!(
                "agreed {}, disagreed {}, skipped {}",
                summary.agreed, summary.disagreed, summary.skipped
            );
            Ok(())
        }
        Command::Report(ReportCommand::Show { id, markdown }) => {
            if markdown {
                print!("{}", client.report_markdown(&id).await?);
                Ok(())
            } else {
                print_json(&client.report(&id).await?)
            }
        }
        Command::Report(ReportCommand::Pairs { input, out }) => {
            let file = fs::File::open(&input).map_err(|e| bad(format!("{}: {e}", input.display())))?;
            let records = read_discrepancy_csv(BufReader::new(file)).map_err(bad)?;
            let writer = io::BufWriter::new(fs::File::create(&out).map_err(internal)?);
            let stats = write_pair_dataset(&records, writer).map_err(internal)?;
            println!("{} pairs written, {} records skipped", stats.written, stats.skipped);
            Ok(())
        }
        Command::Replay { log } => cmd_replay(&log),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(io::stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let rt = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(3);
        }
    };
    match rt.block_on(dispatch(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
