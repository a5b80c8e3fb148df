//! `nextterm`: synthesize transcripts, train, evaluate, and serve the
//! next-term success model.
//!
//! Exit codes: 0 success, 1 invalid input or configuration, 2 I/O failure.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use nextterm::encoder::{build_examples, save_dataset};
use nextterm::nnet::Checkpoint;
use nextterm::pipeline::{self, DEFAULT_VALIDATION_FRACTION};
use nextterm::planner::{self, HistoryTerm, PlanQuery, Planner, ServiceConfig};
use nextterm::synthdata::{generate, SynthConfig};
use nextterm::trainer::TrainConfig;
use nextterm::transcript::{build_catalog, parse_transcript, write_transcript, RawRecord};

#[derive(Parser, Debug)]
#[command(name = "nextterm", version, about = "Next-term course combination success prediction")]
struct Cli {
    /// Seed for generation, the train/validation split and training.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic transcript CSV and its ground-truth sidecar.
    Synth(SynthArgs),
    /// Encode a transcript CSV into the example dataset JSON.
    Ingest(IngestArgs),
    /// Train on a transcript CSV and write a checkpoint.
    Train(TrainArgs),
    /// Report validation AUC, the GPA baseline and the GPA x difficulty grid.
    Eval(EvalArgs),
    /// Score candidate course combinations for one history.
    Predict(PredictArgs),
    /// Serve the planner HTTP API.
    Serve(ServeArgs),
}

#[derive(Args, Debug, Serialize)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    /// Ground-truth JSON path. Defaults to `<out>.truth.json`.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long, default_value_t = 800)]
    students: usize,
    #[arg(long, default_value_t = 40)]
    catalog_size: usize,
    #[arg(long, default_value_t = 4)]
    min_terms: usize,
    #[arg(long, default_value_t = 10)]
    max_terms: usize,
    #[arg(long, default_value_t = 3)]
    min_courses: usize,
    #[arg(long, default_value_t = 6)]
    max_courses: usize,
    #[arg(long, default_value_t = 0.15)]
    load_penalty: f64,
    #[arg(long, default_value_t = 0.05)]
    withdraw_prob: f64,
    #[arg(long, default_value_t = -1.0, allow_negative_numbers = true)]
    difficulty_mean: f64,
}

#[derive(Args, Debug, Serialize)]
struct IngestArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, Serialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
enum Preset {
    /// H=64, K=32, M=64, learning rate 1e-3.
    Default,
    /// H=4, K=8, M=8, learning rate 3e-3; suited to a few hundred students.
    Compact,
}

#[derive(Args, Debug, Serialize)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch JSON lines. Defaults to `<out>.report.jsonl`.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_VALIDATION_FRACTION)]
    validation_fraction: f64,
    /// Starting values; the flags below override individual fields.
    #[arg(long, value_enum, default_value_t = Preset::Default)]
    preset: Preset,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    beta1: Option<f64>,
    #[arg(long)]
    beta2: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    early_stop_patience: Option<usize>,
    #[arg(long)]
    grad_clip_norm: Option<f64>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    combo: Option<usize>,
    #[arg(long)]
    merge: Option<usize>,
}

#[derive(Args, Debug, Serialize)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Also write the grid as JSON here.
    #[arg(long)]
    grid_json: Option<PathBuf>,
    /// Also write the grid as CSV here.
    #[arg(long)]
    grid_csv: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// JSON list of `{"period", "grades": [{"course", "grade"}]}`.
    #[arg(long)]
    history: PathBuf,
    /// JSON list of course-id lists.
    #[arg(long)]
    candidates: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct ServeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    bind: SocketAddr,
    /// Origin allowed by CORS; any origin when omitted.
    #[arg(long)]
    cors_origin: Option<String>,
}

fn main() -> ExitCode {
    // clap would exit with 2 on a bad invocation, which here means I/O failure.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let io = err.chain().any(|e| {
        e.is::<std::io::Error>() || matches!(e.downcast_ref::<nextterm::Error>(), Some(nextterm::Error::Io(_)))
    });
    if io {
        2
    } else {
        1
    }
}

fn log_config(command: &str, seed: u64, resolved: &impl Serialize) {
    let value = serde_json::json!({"command": command, "seed": seed, "config": resolved});
    eprintln!("{value}");
}

fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    match cli.command {
        Command::Synth(a) => synth(seed, a),
        Command::Ingest(a) => ingest(seed, a),
        Command::Train(a) => train(seed, a),
        Command::Eval(a) => eval(seed, a),
        Command::Predict(a) => predict(seed, a),
        Command::Serve(a) => serve(seed, a),
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    let f = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    Ok(BufReader::new(f))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).with_context(|| format!("cannot write {}", path.display()))
}

fn read_records(path: &Path) -> Result<Vec<RawRecord>> {
    parse_transcript(open(path)?).with_context(|| format!("reading {}", path.display()))
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    Checkpoint::from_bytes(&bytes).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn synth(seed: u64, a: SynthArgs) -> Result<()> {
    let config = SynthConfig {
        num_students: a.students,
        catalog_size: a.catalog_size,
        terms: (a.min_terms, a.max_terms),
        courses_per_term: (a.min_courses, a.max_courses),
        load_penalty: a.load_penalty,
        withdraw_prob: a.withdraw_prob,
        difficulty_mean: a.difficulty_mean,
        ability_override: None,
        seed,
    };
    let truth_path = a.truth.clone().unwrap_or_else(|| with_suffix(&a.out, ".truth.json"));
    log_config("synth", seed, &serde_json::json!({"generator": &config, "out": &a.out, "truth": &truth_path}));
    let (records, truth) = generate(&config)?;
    let mut sink = create(&a.out)?;
    write_transcript(&records, &mut sink)?;
    sink.flush().with_context(|| format!("cannot write {}", a.out.display()))?;
    write_file(&truth_path, &serde_json::to_vec_pretty(&truth)?)?;
    eprintln!("wrote {} records to {}", records.len(), a.out.display());
    Ok(())
}

fn ingest(seed: u64, a: IngestArgs) -> Result<()> {
    log_config("ingest", seed, &a);
    let records = read_records(&a.data)?;
    let catalog = build_catalog(&records)?;
    let built = build_examples(&records, &catalog)?;
    let steps: usize = built.examples.iter().map(|e| e.history.len()).sum();
    let mut sink = create(&a.out)?;
    save_dataset(&catalog, &built.examples, &mut sink)?;
    sink.flush().with_context(|| format!("cannot write {}", a.out.display()))?;
    eprintln!(
        "{} records, {} courses, {} history steps, {} examples, {} single-term students skipped",
        records.len(),
        catalog.len(),
        steps,
        built.examples.len(),
        built.skipped.single_term_students.len()
    );
    Ok(())
}

fn train_config(seed: u64, a: &TrainArgs) -> TrainConfig {
    let mut c = match a.preset {
        Preset::Default => TrainConfig::default(),
        Preset::Compact => TrainConfig::compact(),
    };
    c.seed = seed;
    macro_rules! apply {
        ($($field:ident),*) => { $( if let Some(v) = a.$field { c.$field = v; } )* };
    }
    apply!(learning_rate, beta1, beta2, eps, batch_size, max_epochs, early_stop_patience, grad_clip_norm, hidden, combo, merge);
    c
}

fn train(seed: u64, a: TrainArgs) -> Result<()> {
    let config = train_config(seed, &a);
    let report_path = a.report.clone().unwrap_or_else(|| with_suffix(&a.out, ".report.jsonl"));
    log_config(
        "train",
        seed,
        &serde_json::json!({
            "trainer": &config,
            "validation_fraction": a.validation_fraction,
            "data": &a.data,
            "out": &a.out,
            "report": &report_path,
        }),
    );
    config.validate()?;
    let records = read_records(&a.data)?;
    let mut trained = pipeline::train_from_records(&records, a.validation_fraction, &config)?;
    write_file(&a.out, &trained.checkpoint.to_bytes()?)?;
    trained.report.checkpoint = Some(a.out.display().to_string());
    write_file(&report_path, trained.report.to_json_lines()?.as_bytes())?;
    let best = trained.report.best();
    eprintln!(
        "best epoch {} of {}: validation_auc={:.4}, checkpoint {}",
        trained.report.best_epoch,
        trained.report.epochs.len(),
        best.validation_auc,
        trained.checkpoint.id()?
    );
    Ok(())
}

fn eval(seed: u64, a: EvalArgs) -> Result<()> {
    log_config("eval", seed, &a);
    let checkpoint = load_checkpoint(&a.model)?;
    let records = read_records(&a.data)?;
    let split = pipeline::checkpoint_split(&checkpoint, &records)?;
    let summary = pipeline::evaluate_checkpoint(&checkpoint, &records, &split)?;
    println!("validation_auc={:.4}", summary.validation_auc);
    println!("gpa_baseline_auc={:.4}", summary.gpa_baseline_auc);
    let grid = pipeline::difficulty_grid(&checkpoint, &records, &split).context("GPA x difficulty grid")?;
    let json = serde_json::to_string(&grid)?;
    println!("{json}");
    print!("{}", grid.to_csv());
    if let Some(p) = &a.grid_json {
        write_file(p, json.as_bytes())?;
    }
    if let Some(p) = &a.grid_csv {
        write_file(p, grid.to_csv().as_bytes())?;
    }
    Ok(())
}

fn predict(seed: u64, a: PredictArgs) -> Result<()> {
    log_config("predict", seed, &a);
    let checkpoint = load_checkpoint(&a.model)?;
    let history: Vec<HistoryTerm> =
        serde_json::from_reader(open(&a.history)?).with_context(|| format!("parsing {}", a.history.display()))?;
    let candidates: Vec<Vec<String>> = serde_json::from_reader(open(&a.candidates)?)
        .with_context(|| format!("parsing {}", a.candidates.display()))?;
    let response = Planner::new(checkpoint)?.score(&PlanQuery { history, candidates })?;
    println!("{}", serde_json::to_string(&response)?);
    Ok(())
}

fn serve(seed: u64, a: ServeArgs) -> Result<()> {
    log_config("serve", seed, &a);
    let planner = Arc::new(Planner::new(load_checkpoint(&a.model)?)?);
    let config = ServiceConfig {
        cors_origin: a.cors_origin.clone(),
    };
    let runtime = tokio::runtime::Runtime::new().context("starting async runtime")?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(a.bind)
            .await
            .with_context(|| format!("cannot bind {}", a.bind))?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        planner::serve(listener, planner, &config).await?;
        Ok(())
    })
}
