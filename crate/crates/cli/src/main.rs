//! `labelfact`: batch front end over a session directory.
//!
//! Every subcommand that touches a session reads and writes the same files
//! as the HTTP service, so a corpus ingested and trained here can be served
//! with `labelfact serve` and vice versa.
//!
//! Exit codes: 0 success, 1 user error (bad flags, bad input, missing
//! session), 2 internal error.

use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use labelfact_core::eval::load::parse_csv_texts;
use labelfact_core::eval::{run_benchmark, BenchmarkConfig, BenchmarkData, DatasetFormat};
use labelfact_core::{Execution, HyperParams};
use labelfact_service::session::SESSION_FILE;
use labelfact_service::{
    http, parse_annotation_csv, LiveSession, ServiceConfig, ServiceError, Session,
};
use serde_json::json;

const NAMESPACE: &str = "default";

#[derive(Parser)]
#[command(
    name = "labelfact",
    version,
    about = "Interactive multi-label scoring of short texts"
)]
struct Cli {
    /// Session directory shared with the HTTP service.
    #[arg(
        long,
        global = true,
        env = "LABELFACT_DATA_DIR",
        default_value = "labelfact-data"
    )]
    data_dir: PathBuf,

    /// Label namespace for label lookups and creation.
    #[arg(long, global = true, default_value = NAMESPACE)]
    namespace: String,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Add texts to the session, creating it if needed.
    Ingest(IngestArgs),
    /// Apply annotations, train to convergence and persist.
    Train(TrainArgs),
    /// Cross-validated BER/RMSE benchmark on a labelled dataset.
    Eval(EvalArgs),
    /// Print the top texts for a label or the top labels for a text.
    Predict(PredictArgs),
    /// Write texts with scores and annotations as CSV.
    Export(ExportArgs),
    /// Serve the session over HTTP.
    Serve(ServeArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum CorpusFormat {
    /// One text per line.
    Text,
    /// CSV with a header; texts come from --column.
    Csv,
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    path: PathBuf,
    #[arg(long, value_enum, default_value = "text")]
    format: CorpusFormat,
    #[arg(long, default_value = "text")]
    column: String,
    /// Minimum total occurrences for an n-gram (new sessions only).
    #[arg(long)]
    min_count: Option<u64>,
    #[command(flatten)]
    hp: HpArgs,
}

/// Hyperparameter overrides; unset flags keep the session's values.
#[derive(Args, Default, Clone)]
struct HpArgs {
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    max_passes: Option<usize>,
    #[arg(long)]
    negatives: Option<usize>,
}

impl HpArgs {
    fn apply(&self, base: HyperParams) -> HyperParams {
        HyperParams {
            k: self.k.unwrap_or(base.k),
            alpha: self.alpha.unwrap_or(base.alpha),
            gamma: self.gamma.unwrap_or(base.gamma),
            seed: self.seed.unwrap_or(base.seed),
            patience: self.patience.unwrap_or(base.patience),
            max_passes: self.max_passes.unwrap_or(base.max_passes),
            negatives: self.negatives.unwrap_or(base.negatives),
            ..base
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Texts to ingest before training (one per line).
    #[arg(long)]
    path: Option<PathBuf>,
    /// Annotations in export format: text_id plus annotation:<label> columns.
    /// Unknown labels are created.
    #[arg(long)]
    annotations: Option<PathBuf>,
    #[command(flatten)]
    hp: HpArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    path: PathBuf,
    #[arg(long, value_parser = parse_dataset_format)]
    format: DatasetFormat,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    /// Keep a seeded sample of this many target cells.
    #[arg(long)]
    subsample: Option<usize>,
    /// Emit the JSON report instead of the table.
    #[arg(long)]
    json: bool,
    /// Also write the JSON report to this file.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Run folds one at a time.
    #[arg(long)]
    sequential: bool,
    #[command(flatten)]
    hp: HpArgs,
}

#[derive(Args)]
struct PredictArgs {
    /// Label name: rank texts for it.
    #[arg(long, conflicts_with = "text", required_unless_present = "text")]
    label: Option<String>,
    /// Text id: rank labels for it.
    #[arg(long)]
    text: Option<usize>,
    #[arg(long, default_value_t = 10)]
    top: usize,
    /// Keep texts that already carry an annotation for the label.
    #[arg(long)]
    include_annotated: bool,
}

#[derive(Args)]
struct ExportArgs {
    /// Comma-separated label names; defaults to every label in the namespace.
    #[arg(long, value_delimiter = ',')]
    labels: Vec<String>,
    /// Output file; stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, env = "LABELFACT_PORT")]
    port: Option<u16>,
    #[arg(long)]
    bind: Option<String>,
}

fn parse_dataset_format(s: &str) -> Result<DatasetFormat, String> {
    s.parse().map_err(|e: labelfact_core::Error| e.to_string())
}

#[derive(Debug)]
enum CliError {
    User(String),
    Internal(String),
}

impl From<ServiceError> for CliError {
    fn from(e: ServiceError) -> Self {
        let missing_file =
            matches!(&e, ServiceError::Io(io) if io.kind() == io::ErrorKind::NotFound);
        if e.is_user_error() || missing_file {
            CliError::User(e.to_string())
        } else {
            CliError::Internal(e.to_string())
        }
    }
}

impl From<labelfact_core::Error> for CliError {
    fn from(e: labelfact_core::Error) -> Self {
        ServiceError::from(e).into()
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        ServiceError::Io(e).into()
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.verbose {
        0 => tracing::Level::WARN,
        1 => tracing::Level::INFO,
        _ => tracing::Level::DEBUG,
    };
    tracing_subscriber::fmt()
        .with_max_level(level)
        .with_writer(io::stderr)
        .init();

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::User(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Internal(msg)) => {
            eprintln!("internal error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> CliResult {
    let ctx = Ctx {
        dir: cli.data_dir,
        ns: cli.namespace,
    };
    match cli.command {
        Command::Ingest(a) => ctx.ingest(a),
        Command::Train(a) => ctx.train(a),
        Command::Eval(a) => eval(a),
        Command::Predict(a) => ctx.predict(a),
        Command::Export(a) => ctx.export(a),
        Command::Serve(a) => ctx.serve(a),
    }
}

fn print_json(value: &impl serde::Serialize) -> CliResult {
    let text =
        serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn read_texts(path: &Path, format: CorpusFormat, column: &str) -> CliResult<Vec<String>> {
    let mut raw = String::new();
    File::open(path)
        .map_err(|e| CliError::User(format!("{}: {e}", path.display())))?
        .read_to_string(&mut raw)
        .map_err(|e| CliError::User(format!("{}: {e}", path.display())))?;
    Ok(match format {
        CorpusFormat::Text => raw
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(str::to_string)
            .collect(),
        CorpusFormat::Csv => parse_csv_texts(&path.display().to_string(), raw.as_bytes(), column)?,
    })
}

struct Ctx {
    dir: PathBuf,
    ns: String,
}

impl Ctx {
    fn exists(&self) -> bool {
        self.dir.join(SESSION_FILE).is_file()
    }

    fn open(&self) -> CliResult<Session> {
        if !self.exists() {
            return Err(CliError::User(format!(
                "no session in {}; run `labelfact ingest` first",
                self.dir.display()
            )));
        }
        Ok(Session::restore(&self.dir)?)
    }

    fn ingest(&self, a: IngestArgs) -> CliResult {
        let texts = read_texts(&a.path, a.format, &a.column)?;
        let mut session = if self.exists() {
            let mut s = Session::restore(&self.dir)?;
            s.set_hp(a.hp.apply(*s.hp()))?;
            s
        } else {
            let min_count = a
                .min_count
                .unwrap_or(labelfact_core::featurize::DEFAULT_MIN_COUNT);
            Session::new(a.hp.apply(HyperParams::default()), min_count)?
        };
        let summary = session.import_texts(texts)?;
        for w in &summary.warnings {
            tracing::warn!("{w}");
        }
        session.persist(&self.dir)?;
        print_json(&summary)
    }

    fn train(&self, a: TrainArgs) -> CliResult {
        let mut session = match &a.path {
            Some(path) if !self.exists() => {
                let mut s = Session::new(
                    a.hp.apply(HyperParams::default()),
                    labelfact_core::featurize::DEFAULT_MIN_COUNT,
                )?;
                s.import_texts(read_texts(path, CorpusFormat::Text, "text")?)?;
                s
            }
            Some(path) => {
                let mut s = self.open()?;
                s.import_texts(read_texts(path, CorpusFormat::Text, "text")?)?;
                s
            }
            None => self.open()?,
        };
        session.set_hp(a.hp.apply(*session.hp()))?;
        if session.store().m() == 0 {
            return Err(CliError::User(
                "the session has no texts to train on".into(),
            ));
        }

        let mut applied = 0;
        if let Some(path) = &a.annotations {
            let raw = std::fs::read(path)
                .map_err(|e| CliError::User(format!("{}: {e}", path.display())))?;
            for name in annotation_columns(&raw)? {
                if session
                    .snapshot()
                    .label_named(&name, Some(&self.ns))
                    .is_err()
                {
                    session.create_label(&name, &self.ns)?;
                }
            }
            let snap = session.snapshot();
            let cells = parse_annotation_csv(raw.as_slice(), |name| {
                Ok(snap.label_named(name, Some(&self.ns))?.label_id)
            })?;
            for (row, label, value) in cells {
                session.annotate(row, label, value)?;
                applied += 1;
            }
        }

        let passes = session.train_until_idle()?;
        session.persist(&self.dir)?;
        print_json(&json!({
            "passes": passes,
            "total_passes": session.passes(),
            "state": session.state(),
            "val_rmse": session.snapshot().val_rmse,
            "annotations_applied": applied,
            "m": session.store().m(),
            "n1": session.store().n1(),
            "labels": session.snapshot().labels(Some(&self.ns)).len(),
        }))
    }

    fn predict(&self, a: PredictArgs) -> CliResult {
        let snap = self.open()?.snapshot();
        let mut out = csv::Writer::from_writer(io::stdout().lock());
        let csv_err = |e: csv::Error| CliError::Internal(e.to_string());
        if let Some(name) = &a.label {
            let label = snap.label_named(name, Some(&self.ns))?;
            let top = snap.top_texts(label.label_id, Some(&self.ns), a.top, a.include_annotated)?;
            out.write_record(["rank", "text_id", "score", "raw_text"])
                .map_err(csv_err)?;
            for (rank, item) in top.items.iter().enumerate() {
                out.write_record([
                    (rank + 1).to_string(),
                    item.text_id.to_string(),
                    item.score.to_string(),
                    item.raw_text.clone(),
                ])
                .map_err(csv_err)?;
            }
        } else if let Some(row) = a.text {
            let scores = snap.text_scores(row, Some(&self.ns))?;
            out.write_record(["rank", "label_id", "label", "score", "annotation"])
                .map_err(csv_err)?;
            for s in scores.scores.iter().take(a.top) {
                out.write_record([
                    s.rank.to_string(),
                    s.label_id.to_string(),
                    s.name.clone(),
                    s.score.to_string(),
                    s.annotation.map(|v| v.to_string()).unwrap_or_default(),
                ])
                .map_err(csv_err)?;
            }
        }
        out.flush()?;
        Ok(())
    }

    fn export(&self, a: ExportArgs) -> CliResult {
        let snap = self.open()?.snapshot();
        let labels: Vec<usize> = if a.labels.is_empty() {
            snap.labels(Some(&self.ns))
                .iter()
                .map(|l| l.label_id)
                .collect()
        } else {
            a.labels
                .iter()
                .map(|n| {
                    snap.label_named(n.trim(), Some(&self.ns))
                        .map(|l| l.label_id)
                })
                .collect::<Result<_, _>>()?
        };
        let sink: Box<dyn Write> = match &a.output {
            Some(p) => Box::new(
                File::create(p).map_err(|e| CliError::User(format!("{}: {e}", p.display())))?,
            ),
            None => Box::new(io::stdout().lock()),
        };
        let mut sink = BufWriter::new(sink);
        snap.write_export(&mut sink, &labels, Some(&self.ns))?;
        sink.flush()?;
        Ok(())
    }

    fn serve(&self, a: ServeArgs) -> CliResult {
        let mut cfg = ServiceConfig::load(a.config.as_deref())?;
        cfg.data_dir = self.dir.clone();
        if let Some(port) = a.port {
            cfg.port = port;
        }
        if let Some(bind) = a.bind {
            cfg.bind = bind;
        }
        let live = Arc::new(LiveSession::open(cfg)?);
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .enable_all()
            .build()
            .map_err(|e| CliError::Internal(e.to_string()))?;
        runtime.block_on(http::serve(Arc::clone(&live)))?;
        live.persist()?;
        Ok(())
    }
}

/// Label names from the `annotation:<name>` columns of an export-format header.
fn annotation_columns(raw: &[u8]) -> CliResult<Vec<String>> {
    let mut reader = csv::Reader::from_reader(raw);
    let header = reader
        .headers()
        .map_err(|e| CliError::User(format!("annotations: {e}")))?;
    Ok(header
        .iter()
        .filter_map(|h| h.strip_prefix("annotation:"))
        .map(str::to_string)
        .collect())
}

fn eval(a: EvalArgs) -> CliResult {
    let cfg = BenchmarkConfig {
        hp: a.hp.apply(HyperParams::default()),
        folds: a.folds,
        seed: a.hp.seed.unwrap_or(BenchmarkConfig::default().seed),
        threshold: a.threshold,
        exec: if a.sequential {
            Execution::Sequential
        } else {
            Execution::default()
        },
    };
    cfg.hp.validate()?;
    if cfg.folds < 2 {
        return Err(CliError::User(format!(
            "--folds must be at least 2, got {}",
            cfg.folds
        )));
    }
    let mut data = BenchmarkData::load(&a.path, a.format)?;
    if let Some(n) = a.subsample {
        data = data.subsample(n, cfg.seed);
    }
    let report = run_benchmark(&data, &cfg)?;
    let json = report.to_json()?;
    if let Some(out) = &a.output {
        std::fs::write(out, format!("{json}\n"))
            .map_err(|e| CliError::User(format!("{}: {e}", out.display())))?;
    }
    if a.json {
        println!("{json}");
    } else {
        print!("{}", report.render_table());
    }
    Ok(())
}
