//! `neurochair`: operator entry points for the wheelchair twin.
//!
//! Exit codes: 0 success, 1 validation error (bad config, data or model
//! shape), 2 runtime error (I/O, pipeline failure, training below the
//! accuracy floor, replay mismatch).
//!
//! The drive listeners default to `127.0.0.1:7878` (NDJSON) and
//! `127.0.0.1:7879` (WebSocket).

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use neurochair_core::classifier::{load_model, save_model, ModelKind, TrainedModel};
use neurochair_core::signal::CommandLabel;
use neurochair_core::synth::{epochs_per_class, generate_recording, write_csv};
use neurochair_service::bench::{run_bench, BenchReport};
use neurochair_service::config::{SourceKind, CONFIG_ENV};
use neurochair_service::session::replay_session;
use neurochair_service::training::train_offline;
use neurochair_service::{Service, ServiceConfig, ServiceError};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "neurochair", version, about = "EEG-driven wheelchair digital twin")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct Common {
    /// Service config (JSON).
    #[arg(long, global = true, env = CONFIG_ENV)]
    config: Option<PathBuf>,
    /// Seed for the synthetic source and the classifier.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Print the report as JSON.
    #[arg(long, global = true)]
    json: bool,
    /// Output path (CSV, model, session log or report, by subcommand).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Config override on a dotted path, e.g. `decoder.threshold=0.7`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic session CSV and its ground-truth intervals.
    Synth {
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Calibrate a classifier from ground-truth labelled data.
    Train {
        /// Session CSV with a label column; the configured synth scenario otherwise.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_enum)]
        kind: Option<Kind>,
    },
    /// Run the live service until the source ends or interrupted.
    Drive {
        #[arg(long)]
        model: Option<PathBuf>,
        /// NDJSON listen address.
        #[arg(long)]
        listen: Option<String>,
        /// WebSocket listen address.
        #[arg(long)]
        ws_listen: Option<String>,
        /// Run unpaced instead of in real time.
        #[arg(long)]
        fast: bool,
    },
    /// Re-run a session log's frames and compare decoded commands.
    Replay {
        log: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Score decoding accuracy, latency and throughput on a scenario.
    Bench {
        #[arg(long)]
        model: Option<PathBuf>,
        /// Session CSV with a label column; the configured synth scenario otherwise.
        #[arg(long)]
        data: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Lda,
    Rf,
}

enum Failure {
    Validation(String),
    Runtime(String),
}

impl From<ServiceError> for Failure {
    fn from(e: ServiceError) -> Self {
        if e.is_validation() {
            Failure::Validation(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

impl From<neurochair_core::Error> for Failure {
    fn from(e: neurochair_core::Error) -> Self {
        ServiceError::from(e).into()
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}

fn load_config(c: &Common) -> CliResult<ServiceConfig> {
    let mut config = ServiceConfig::load(c.config.as_deref(), &c.overrides)?;
    if let Some(seed) = c.seed {
        config = config.with_seed(seed);
    }
    Ok(config)
}

fn with_data(mut config: ServiceConfig, data: Option<PathBuf>) -> CliResult<ServiceConfig> {
    if let Some(path) = data {
        config.source.kind = SourceKind::Replay;
        config.source.path = Some(path);
        config.validate()?;
    }
    Ok(config)
}

fn model_from(flag: Option<PathBuf>, config: &ServiceConfig) -> CliResult<Option<TrainedModel>> {
    match flag.or_else(|| config.model.clone()) {
        Some(p) => Ok(Some(load_model(&p)?)),
        None => Ok(None),
    }
}

fn emit<T: Serialize>(c: &Common, report: &T, human: impl FnOnce() -> String) -> CliResult {
    let json = serde_json::to_string_pretty(report).expect("reports serialize");
    if c.json {
        println!("{json}");
    } else {
        println!("{}", human());
    }
    Ok(())
}

fn write_report<T: Serialize>(path: &Path, report: &T) -> CliResult {
    let json = serde_json::to_string_pretty(report).expect("reports serialize");
    std::fs::write(path, json + "\n").map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn run(cli: Cli) -> CliResult {
    let c = &cli.common;
    let config = load_config(c)?;
    match cli.command {
        Cmd::Synth { duration } => synth(c, config, duration),
        Cmd::Train { data, kind } => train(c, with_data(config, data)?, kind),
        Cmd::Drive {
            model,
            listen,
            ws_listen,
            fast,
        } => drive(c, config, model, listen, ws_listen, fast),
        Cmd::Replay { log, model } => replay(c, config, &log, model),
        Cmd::Bench { model, data } => bench(c, with_data(config, data)?, model),
    }
}

#[derive(Serialize)]
struct SynthReport {
    csv: PathBuf,
    intervals: PathBuf,
    frames: usize,
    duration_s: f64,
    epochs_per_class: std::collections::BTreeMap<CommandLabel, usize>,
}

fn synth(c: &Common, config: ServiceConfig, duration: Option<f64>) -> CliResult {
    let mut scenario = config.source.scenario.clone();
    if let Some(d) = duration.or(config.source.duration_s) {
        scenario = scenario.fitted_to(d)?;
    }
    scenario.validate(&config.montage)?;
    let out = c.out.clone().unwrap_or_else(|| PathBuf::from("session.csv"));
    let rec = generate_recording(&scenario, &config.montage)?;
    write_csv(&out, &rec)?;
    let truth = out.with_extension("intervals.json");
    write_report(&truth, &rec.intervals)?;
    let report = SynthReport {
        frames: rec.frames.len(),
        duration_s: rec.duration_s(),
        epochs_per_class: epochs_per_class(&rec.intervals, config.montage.sampling_rate_hz(), config.epoch)?,
        csv: out,
        intervals: truth,
    };
    emit(c, &report, || {
        let mut s = format!(
            "wrote {} ({} frames, {:.1} s) and {}\nepochs per class:",
            report.csv.display(),
            report.frames,
            report.duration_s,
            report.intervals.display()
        );
        for (l, n) in &report.epochs_per_class {
            s += &format!("\n  {:<8} {n}", l.as_str());
        }
        s
    })
}

#[derive(Serialize)]
struct TrainReport<'a> {
    model: PathBuf,
    kind: ModelKind,
    cv_accuracy: f64,
    accuracy_floor: f64,
    passed: bool,
    epochs: usize,
    cv: &'a neurochair_core::classifier::CvReport,
}

fn train(c: &Common, mut config: ServiceConfig, kind: Option<Kind>) -> CliResult {
    if let Some(k) = kind {
        config.classifier.kind = match k {
            Kind::Lda => ModelKind::LinearDiscriminant,
            Kind::Rf => ModelKind::RandomForest,
        };
    }
    let outcome = train_offline(&config)?;
    let out = c.out.clone().unwrap_or_else(|| PathBuf::from("model.json"));
    save_model(&outcome.model, &out)?;
    let floor = config.training.accuracy_floor;
    let report = TrainReport {
        model: out,
        kind: outcome.model.kind,
        cv_accuracy: outcome.cv.accuracy,
        accuracy_floor: floor,
        passed: outcome.meets_floor(floor),
        epochs: outcome.epochs,
        cv: &outcome.cv,
    };
    emit(c, &report, || {
        let mut s = format!(
            "{:?} model written to {}\ncross-validated accuracy {:.4} over {} folds (floor {floor})",
            report.kind,
            report.model.display(),
            report.cv_accuracy,
            report.cv.folds
        );
        for (label, acc) in &report.cv.per_class_accuracy {
            s += &format!("\n  {:<8} {acc:.4}", label.as_str());
        }
        s
    })?;
    if report.passed {
        Ok(())
    } else {
        Err(Failure::Runtime(format!(
            "cross-validated accuracy {:.4} is below the floor {floor}",
            report.cv_accuracy
        )))
    }
}

fn drive(
    c: &Common,
    mut config: ServiceConfig,
    model: Option<PathBuf>,
    listen: Option<String>,
    ws_listen: Option<String>,
    fast: bool,
) -> CliResult {
    if let Some(l) = listen {
        config.listen = Some(l);
    }
    if let Some(l) = ws_listen {
        config.ws_listen = Some(l);
    }
    if fast {
        config.source.realtime_factor = None;
    }
    if let Some(out) = &c.out {
        config.record = Some(out.clone());
    }
    let model = model_from(model, &config)?;
    let service = Service::start(config, model)?;
    if let Some(a) = service.tcp_addr() {
        println!("listening on {a} (ndjson)");
    }
    if let Some(a) = service.ws_addr() {
        println!("listening on ws://{a}");
    }

    let interrupted = Arc::new(AtomicBool::new(false));
    {
        let flag = interrupted.clone();
        let handle = service.handle();
        ctrlc::set_handler(move || {
            flag.store(true, Ordering::SeqCst);
            handle.request_stop();
        })
        .map_err(|e| Failure::Runtime(format!("cannot install interrupt handler: {e}")))?;
    }
    while !service.is_finished() {
        std::thread::sleep(Duration::from_millis(50));
    }
    let stats = service.wait()?;
    if interrupted.load(Ordering::SeqCst) {
        log::info!("interrupted");
    }
    emit(c, &stats, || {
        let mut s = format!(
            "session ended after {:.1} s of signal: {} frames, {} predictions, {} commands, {} collisions",
            stats.signal_duration_s,
            stats.frames,
            stats.predictions,
            stats.commands.len(),
            stats.collisions
        );
        if let Some(t) = &stats.final_state {
            s += &format!("\nfinal pose ({:.2}, {:.2}) heading {:.0}°", t.x, t.y, t.heading_deg);
        }
        s
    })
}

fn replay(c: &Common, config: ServiceConfig, log: &Path, model: Option<PathBuf>) -> CliResult {
    let model = model_from(model, &config)?;
    let report = replay_session(log, &config, model)?;
    if let Some(out) = &c.out {
        write_report(out, &report)?;
    }
    emit(c, &report, || {
        format!(
            "replayed {} frames: {} recorded commands, {} replayed, {}",
            report.frames,
            report.recorded.len(),
            report.replayed.len(),
            if report.matches { "identical" } else { "MISMATCH" }
        )
    })?;
    if report.matches {
        Ok(())
    } else {
        Err(Failure::Runtime("replayed commands differ from the log".into()))
    }
}

fn bench(c: &Common, config: ServiceConfig, model: Option<PathBuf>) -> CliResult {
    let model = match model_from(model, &config)? {
        Some(m) => m,
        None => {
            log::info!("no model given; calibrating on the default scenario");
            let mut calib = config.clone();
            calib.source = Default::default();
            calib.source.scenario.seed = config.source.scenario.seed;
            train_offline(&calib)?.model
        }
    };
    let report = run_bench(&config, Some(model))?;
    if let Some(out) = &c.out {
        write_report(out, &report)?;
    }
    emit(c, &report, || human_bench(&report))
}

fn human_bench(r: &BenchReport) -> String {
    let acc = r
        .command_accuracy
        .map_or("n/a".to_owned(), |a| format!("{a:.4}"));
    format!(
        "signal {:.1} s in {:.3} s wall ({:.1}x real time)\n\
         commands {} (accuracy {acc}), intervals detected {}/{}\n\
         latency p50 {:.3} s p95 {:.3} s (analytic {:.3} s), processing p95 {:.2} ms\n\
         onset latency p50 {:.3} s\n\
         collisions {}",
        r.signal_duration_s,
        r.wall_s,
        r.throughput_x_realtime,
        r.commands,
        r.intervals_detected,
        r.intervals,
        r.latency.p50_s,
        r.latency.p95_s,
        r.analytic_latency_s,
        r.processing.p95_s * 1e3,
        r.onset_latency.p50_s,
        r.collisions
    )
}
