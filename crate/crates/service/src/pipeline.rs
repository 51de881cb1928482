//! Threaded pipeline: source -> features -> classifier -> decoder + chair.
//!
//! Each stage owns its state and talks to the next over a bounded channel.
//! Besides data, stages forward `Clock` ticks carrying signal time, so the
//! chair advances on signal time rather than wall time and a run is fully
//! determined by its config and seed.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::thread::JoinHandle;
use std::time::Instant;

use crossbeam_channel::{bounded, select, unbounded, Receiver, Sender};
use neurochair_core::classifier::{
    cross_validate, fit, Cue, FitConfig, ModelMetadata, Prediction, ProtocolEntry, ProtocolRunner, TrainedModel,
    TrainingSession,
};
use neurochair_core::decoder::{Command, CommandEvent, Decoder};
use neurochair_core::dsp::{Epocher, FeatureExtractor, FeatureVector};
use neurochair_core::signal::{CommandLabel, EegFrame, FrameValidator, Montage};
use neurochair_core::sim::{Simulator, Telemetry};
use neurochair_core::synth::{load_csv, IntentInterval, IntentOverride, Paced, SynthSource};
use serde::{Deserialize, Serialize};

use crate::config::{ServiceConfig, SourceKind};
use crate::error::{ServiceError, ServiceResult};
use crate::hub::{Hub, Subscriber, SubscriberOptions};
use crate::session::Recorder;
use crate::transport::Listener;
use crate::wire::{
    Ack, ErrorPayload, Hello, Payload, Report, ReportKind, SessionAction, TrainingAction, WireMessage,
    PROTOCOL_VERSION,
};

pub const FRAME_QUEUE: usize = 64;
pub const STAGE_QUEUE: usize = 16;

/// Current model, swapped in place after a training run.
pub type ModelSlot = Arc<RwLock<Option<Arc<TrainedModel>>>>;

#[derive(Debug, Clone)]
enum Control {
    TrainingStart(Vec<ProtocolEntry>),
    TrainingAbort,
}

enum SourceItem {
    Frame(EegFrame, Instant),
    TrainingStart { t0: f64, protocol: Vec<ProtocolEntry> },
    TrainingAbort,
}

enum FeatureItem {
    Features(FeatureVector, Instant),
    Clock(f64),
    Halt(String),
    TrainingStart { t0: f64, protocol: Vec<ProtocolEntry> },
    TrainingAbort,
}

enum PredictionItem {
    Prediction(Prediction, Instant),
    Clock(f64),
    Halt(String),
}

/// Counters and logs collected over one run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub frames: u64,
    pub epochs: u64,
    pub dropped_epochs: usize,
    pub predictions: u64,
    /// Every command the chair received, in order.
    pub commands: Vec<CommandEvent>,
    /// Per decoded command: signal span of the firing run plus processing time, s.
    pub latencies_s: Vec<f64>,
    /// Per decoded command: wall time from the closing frame entering the
    /// pipeline to the command being issued, s.
    pub processing_s: Vec<f64>,
    pub collisions: u64,
    /// Signal time covered by the source, s.
    pub signal_duration_s: f64,
    pub errors: Vec<String>,
    pub final_state: Option<Telemetry>,
}

type Stats = Arc<Mutex<RunStats>>;

fn lock(stats: &Stats) -> std::sync::MutexGuard<'_, RunStats> {
    stats.lock().expect("stats lock")
}

/// Frames feeding a run.
pub enum FrameSource {
    Synth { source: SynthSource, intent: IntentOverride },
    Frames(Vec<EegFrame>),
}

impl FrameSource {
    pub fn from_config(config: &ServiceConfig) -> ServiceResult<(Self, Vec<IntentInterval>)> {
        let s = &config.source;
        match s.kind {
            SourceKind::Synth => {
                let scenario = s.effective_scenario()?;
                let intent = IntentOverride::new();
                let mut source = SynthSource::new(&scenario, &config.montage)?.with_override(intent.clone());
                let intervals = source.intervals();
                if s.endless && s.duration_s.is_none() {
                    source = source.endless();
                }
                Ok((FrameSource::Synth { source, intent }, intervals))
            }
            SourceKind::Replay => {
                let path = s.path.as_ref().expect("validated");
                let rec = load_csv(path, &config.montage)?;
                Ok((FrameSource::Frames(rec.frames), rec.intervals))
            }
        }
    }
}

/// Cloneable handle for connection threads: publishes replies and routes
/// console control messages into the pipeline.
#[derive(Clone)]
pub struct ServiceHandle {
    hub: Arc<Hub>,
    config: Arc<ServiceConfig>,
    model: ModelSlot,
    control: Sender<Control>,
    overrides: Sender<Command>,
    stop: Arc<AtomicBool>,
}

impl ServiceHandle {
    pub fn hub(&self) -> &Arc<Hub> {
        &self.hub
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn hello(&self) -> Hello {
        Hello {
            v: PROTOCOL_VERSION,
            service: concat!("neurochair ", env!("CARGO_PKG_VERSION")).to_owned(),
            channels: self.config.montage.names(),
            bands: self.config.bands.iter().map(|b| b.name.to_string()).collect(),
            sampling_rate_hz: self.config.montage.sampling_rate_hz(),
            threshold: self.config.decoder.threshold,
            dwell: self.config.decoder.dwell,
            model_loaded: self.model.read().expect("model lock").is_some(),
        }
    }

    /// Registers a console and greets it.
    pub fn connect(&self) -> Arc<Subscriber> {
        let sub = self.hub.subscribe(SubscriberOptions::console(self.config.stream_frames));
        self.hub.reply(&sub, Payload::Hello(self.hello()));
        sub
    }

    pub fn disconnect(&self, sub: &Subscriber) {
        self.hub.unsubscribe(sub);
    }

    fn error(&self, to: &Subscriber, reason: String, offending_seq: Option<u64>) {
        self.hub.reply(to, Payload::Error(ErrorPayload { reason, offending_seq }));
    }

    fn ack(&self, to: &Subscriber, msg: &WireMessage, status: &str) {
        self.hub.reply(
            to,
            Payload::Ack(Ack {
                ack_type: msg.kind(),
                ack_seq: msg.seq,
                status: status.to_owned(),
            }),
        );
    }

    /// Handles one inbound line; malformed input gets an error reply and
    /// the connection carries on.
    pub fn handle_line(&self, line: &str, from: &Subscriber) {
        if line.trim().is_empty() {
            return;
        }
        match crate::wire::decode_msg(line) {
            Ok(msg) => self.handle_message(msg, from),
            Err(e) => self.error(from, e.reason, e.seq),
        }
    }

    pub fn handle_message(&self, msg: WireMessage, from: &Subscriber) {
        match &msg.payload {
            Payload::TrainingControl(tc) => match tc.action {
                TrainingAction::Start => {
                    let mut t = self.config.training;
                    t.trials = tc.trials.unwrap_or(t.trials);
                    t.trial_duration_s = tc.trial_duration_s.unwrap_or(t.trial_duration_s);
                    if t.trials == 0 || !(t.trial_duration_s >= self.config.epoch.epoch_len_s) {
                        return self.error(
                            from,
                            "training needs >= 1 trial per class, each at least one epoch long".into(),
                            Some(msg.seq),
                        );
                    }
                    let _ = self.control.send(Control::TrainingStart(t.protocol()));
                    self.ack(from, &msg, "training started");
                }
                TrainingAction::Abort => {
                    let _ = self.control.send(Control::TrainingAbort);
                    self.ack(from, &msg, "training aborted");
                }
            },
            Payload::SessionControl(sc) => match (sc.action, sc.command) {
                (SessionAction::Override, Some(c)) => {
                    let _ = self.overrides.send(c);
                    self.ack(from, &msg, "override applied");
                }
                (SessionAction::Override, None) => {
                    self.error(from, "override needs a command".into(), Some(msg.seq))
                }
                (SessionAction::Shutdown, _) => {
                    self.stop.store(true, Ordering::SeqCst);
                    self.ack(from, &msg, "shutting down");
                }
                (SessionAction::Ping, _) => self.ack(from, &msg, "pong"),
            },
            other => self.error(
                from,
                format!("unexpected {} message from console", other.kind()),
                Some(msg.seq),
            ),
        }
    }

    /// Applies an operator command as if it came from a console.
    pub fn override_command(&self, command: Command) {
        let _ = self.overrides.send(command);
    }

    pub fn request_stop(&self) {
        self.stop.store(true, Ordering::SeqCst);
    }

    pub fn stop_requested(&self) -> bool {
        self.stop.load(Ordering::SeqCst)
    }

    pub fn model(&self) -> Option<Arc<TrainedModel>> {
        self.model.read().expect("model lock").clone()
    }
}

/// A running pipeline plus its listeners and recorder.
pub struct Service {
    handle: ServiceHandle,
    stages: Vec<JoinHandle<()>>,
    fits: Arc<Mutex<Vec<JoinHandle<()>>>>,
    stats: Stats,
    recorder: Option<Recorder>,
    listeners: Vec<Listener>,
    intervals: Vec<IntentInterval>,
    started: Instant,
}

impl Service {
    /// Starts with the source, listeners and recorder named in the config.
    pub fn start(config: ServiceConfig, model: Option<TrainedModel>) -> ServiceResult<Self> {
        let (source, intervals) = FrameSource::from_config(&config)?;
        Self::launch(config, model, source, intervals, true)
    }

    /// Starts on a fixed frame list without network listeners.
    pub fn start_with_frames(
        config: ServiceConfig,
        model: Option<TrainedModel>,
        frames: Vec<EegFrame>,
    ) -> ServiceResult<Self> {
        Self::launch(config, model, FrameSource::Frames(frames), Vec::new(), false)
    }

    /// Starts on the configured source without network listeners.
    pub fn start_headless(config: ServiceConfig, model: Option<TrainedModel>) -> ServiceResult<Self> {
        let (source, intervals) = FrameSource::from_config(&config)?;
        Self::launch(config, model, source, intervals, false)
    }

    fn launch(
        config: ServiceConfig,
        model: Option<TrainedModel>,
        source: FrameSource,
        intervals: Vec<IntentInterval>,
        listen: bool,
    ) -> ServiceResult<Self> {
        config.validate()?;
        if let Some(m) = &model {
            m.check_compatible(&config.montage, &config.bands)?;
        }
        let config = Arc::new(config);
        let montage = Arc::new(config.montage.clone());
        let extractor = FeatureExtractor::new(montage.clone(), &config.bands, &config.filters, config.welch)?;
        let epocher = Epocher::new(montage.clone(), config.epoch)?;
        let decoder = Decoder::new(config.decoder)?;
        let sim = Simulator::new(config.load_world()?, config.chair, config.telemetry_rate_hz)?;

        let hub = Hub::new();
        let recorder = match &config.record {
            Some(path) => Some(Recorder::start(&hub, path)?),
            None => None,
        };

        let (control_tx, control_rx) = unbounded();
        let (override_tx, override_rx) = unbounded();
        let handle = ServiceHandle {
            hub: hub.clone(),
            config: config.clone(),
            model: Arc::new(RwLock::new(model.map(Arc::new))),
            control: control_tx,
            overrides: override_tx,
            stop: Arc::new(AtomicBool::new(false)),
        };

        let stats: Stats = Arc::default();
        let fits: Arc<Mutex<Vec<JoinHandle<()>>>> = Arc::default();
        let (src_tx, src_rx) = bounded(FRAME_QUEUE);
        let (feat_tx, feat_rx) = bounded(STAGE_QUEUE);
        let (pred_tx, pred_rx) = bounded(STAGE_QUEUE);

        let spawn = |name: &str, f: Box<dyn FnOnce() + Send>| {
            std::thread::Builder::new()
                .name(name.to_owned())
                .spawn(f)
                .map_err(|e| ServiceError::Pipeline(format!("cannot spawn {name}: {e}")))
        };

        let mut stages = Vec::new();
        {
            let (hub, stats, stop) = (hub.clone(), stats.clone(), handle.stop.clone());
            let (_, hop) = config.epoch.samples(montage.sampling_rate_hz())?;
            let fs = montage.sampling_rate_hz();
            let speed = config.source.realtime_factor.unwrap_or(f64::INFINITY);
            let stream_frames = config.stream_frames || config.record.is_some();
            stages.push(spawn(
                "source",
                Box::new(move || {
                    let stage = SourceStage {
                        fs,
                        hop: hop as u64,
                        hub,
                        stats,
                        stop,
                        stream_frames,
                    };
                    stage.run(source, speed, control_rx, src_tx)
                }),
            )?);
        }
        {
            let (hub, stats, montage) = (hub.clone(), stats.clone(), montage.clone());
            stages.push(spawn(
                "features",
                Box::new(move || feature_stage(src_rx, feat_tx, &montage, epocher, extractor, &hub, &stats)),
            )?);
        }
        {
            let stage = ClassifierStage {
                hub: hub.clone(),
                model: handle.model.clone(),
                fit: config.classifier,
                cv_folds: config.training.cv_folds,
                metadata: ModelMetadata::new(&montage, &config.bands),
                fits: fits.clone(),
                stats: stats.clone(),
            };
            stages.push(spawn("classifier", Box::new(move || stage.run(feat_rx, pred_tx)))?);
        }
        {
            let (hub, stats) = (hub.clone(), stats.clone());
            stages.push(spawn(
                "control",
                Box::new(move || control_stage(pred_rx, override_rx, decoder, sim, &hub, &stats)),
            )?);
        }

        let mut service = Service {
            handle,
            stages,
            fits,
            stats,
            recorder,
            listeners: Vec::new(),
            intervals,
            started: Instant::now(),
        };
        if listen {
            if let Some(addr) = &config.listen {
                let l = Listener::tcp(addr, service.handle.clone());
                service.listeners.push(l.inspect_err(|_| service.abort())?);
            }
            if let Some(addr) = &config.ws_listen {
                let l = Listener::websocket(addr, service.handle.clone());
                service.listeners.push(l.inspect_err(|_| service.abort())?);
            }
        }
        Ok(service)
    }

    fn abort(&self) {
        self.handle.request_stop();
    }

    pub fn handle(&self) -> ServiceHandle {
        self.handle.clone()
    }

    pub fn hub(&self) -> &Arc<Hub> {
        &self.handle.hub
    }

    pub fn subscribe(&self, options: SubscriberOptions) -> Arc<Subscriber> {
        self.handle.hub.subscribe(options)
    }

    /// Ground-truth intent intervals of the configured source, when known.
    pub fn intervals(&self) -> &[IntentInterval] {
        &self.intervals
    }

    pub fn tcp_addr(&self) -> Option<std::net::SocketAddr> {
        self.listeners.iter().find(|l| !l.is_websocket()).map(Listener::local_addr)
    }

    pub fn ws_addr(&self) -> Option<std::net::SocketAddr> {
        self.listeners.iter().find(|l| l.is_websocket()).map(Listener::local_addr)
    }

    /// Whether every pipeline stage has exited (finite source exhausted or
    /// stop requested).
    pub fn is_finished(&self) -> bool {
        self.stages.iter().all(JoinHandle::is_finished)
    }

    pub fn stats(&self) -> RunStats {
        lock(&self.stats).clone()
    }

    pub fn elapsed(&self) -> std::time::Duration {
        self.started.elapsed()
    }

    /// Waits for the source to finish, drains every queue, then closes
    /// consoles and the session log.
    pub fn wait(mut self) -> ServiceResult<RunStats> {
        for s in self.stages.drain(..) {
            s.join()
                .map_err(|_| ServiceError::Pipeline("pipeline stage panicked".into()))?;
        }
        let fits: Vec<_> = lock_fits(&self.fits).drain(..).collect();
        for f in fits {
            let _ = f.join();
        }
        self.handle.hub.close();
        for l in self.listeners.drain(..) {
            l.stop();
        }
        if let Some(r) = self.recorder.take() {
            r.finish()?;
        }
        Ok(lock(&self.stats).clone())
    }

    /// Stops the source and shuts down as in [`Service::wait`].
    pub fn shutdown(self) -> ServiceResult<RunStats> {
        self.handle.request_stop();
        self.wait()
    }
}

impl Drop for Service {
    fn drop(&mut self) {
        if !self.stages.is_empty() {
            self.handle.request_stop();
            self.handle.hub.close();
            for l in self.listeners.drain(..) {
                l.stop();
            }
        }
    }
}

fn lock_fits(f: &Arc<Mutex<Vec<JoinHandle<()>>>>) -> std::sync::MutexGuard<'_, Vec<JoinHandle<()>>> {
    f.lock().expect("fits lock")
}

struct SourceStage {
    fs: f64,
    hop: u64,
    hub: Arc<Hub>,
    stats: Stats,
    stop: Arc<AtomicBool>,
    stream_frames: bool,
}

/// Trial schedule in frame seqs, driving the synthetic intent.
struct IntentSchedule {
    trials: Vec<(CommandLabel, u64, u64)>,
    next: usize,
}

impl IntentSchedule {
    fn label_at(&mut self, seq: u64) -> Option<CommandLabel> {
        while self.next < self.trials.len() && seq >= self.trials[self.next].2 {
            self.next += 1;
        }
        self.trials
            .get(self.next)
            .filter(|t| seq >= t.1)
            .map(|t| t.0)
    }

    fn is_done(&self) -> bool {
        self.next >= self.trials.len()
    }
}

impl SourceStage {
    fn run(self, source: FrameSource, speed: f64, control: Receiver<Control>, out: Sender<SourceItem>) {
        let (frames, intent): (Box<dyn Iterator<Item = EegFrame> + Send>, Option<IntentOverride>) = match source {
            FrameSource::Synth { source, intent } => (Box::new(source), Some(intent)),
            FrameSource::Frames(v) => (Box::new(v.into_iter()), None),
        };
        let mut frames = match Paced::new(frames, speed) {
            Ok(p) => p,
            Err(e) => {
                self.hub.publish_now(Payload::Error(ErrorPayload {
                    reason: e.to_string(),
                    offending_seq: None,
                }));
                return;
            }
        };

        let mut anchor: Option<u64> = None;
        let mut pending: Option<Vec<ProtocolEntry>> = None;
        let mut schedule: Option<IntentSchedule> = None;
        let mut next_seq: Option<u64> = None;
        let (mut first_t, mut last_t) = (None, 0.0);
        let mut count = 0u64;

        while !self.stop.load(Ordering::SeqCst) {
            while let Ok(c) = control.try_recv() {
                match c {
                    Control::TrainingStart(p) => pending = Some(p),
                    Control::TrainingAbort => {
                        pending = None;
                        schedule = None;
                        if out.send(SourceItem::TrainingAbort).is_err() {
                            return;
                        }
                    }
                }
            }
            if let (Some(ov), Some(seq)) = (&intent, next_seq) {
                let label = schedule.as_mut().and_then(|s| s.label_at(seq));
                if schedule.as_ref().is_some_and(IntentSchedule::is_done) {
                    schedule = None;
                }
                ov.set(label);
            }
            let Some(frame) = frames.next() else { break };
            let anchor = *anchor.get_or_insert(frame.seq);
            next_seq = Some(frame.seq + 1);
            first_t.get_or_insert(frame.t);
            last_t = frame.t;
            count += 1;

            let start = pending.take().map(|protocol| {
                // First epoch-grid point after this frame.
                let k = (frame.seq - anchor) / self.hop + 1;
                let t0_seq = anchor + k * self.hop;
                let t0 = frame.t + (t0_seq - frame.seq) as f64 / self.fs;
                let mut trials = Vec::new();
                let mut s = t0_seq;
                for p in &protocol {
                    let n = (p.trial_duration_s * self.fs).round() as u64;
                    for _ in 0..p.trials {
                        trials.push((p.label, s, s + n));
                        s += n;
                    }
                }
                schedule = Some(IntentSchedule { trials, next: 0 });
                SourceItem::TrainingStart { t0, protocol }
            });

            if self.stream_frames && self.hub.wants(crate::wire::MessageType::Frame) {
                self.hub.publish(frame.t, Payload::Frame(frame.clone()));
            }
            if out.send(SourceItem::Frame(frame, Instant::now())).is_err() {
                break;
            }
            if let Some(item) = start {
                if out.send(item).is_err() {
                    break;
                }
            }
        }
        if let Some(ov) = &intent {
            ov.set(None);
        }
        let mut s = lock(&self.stats);
        s.frames = count;
        s.signal_duration_s = first_t.map_or(0.0, |t0| last_t - t0 + 1.0 / self.fs);
    }
}

fn feature_stage(
    input: Receiver<SourceItem>,
    out: Sender<FeatureItem>,
    montage: &Montage,
    mut epocher: Epocher,
    extractor: FeatureExtractor,
    hub: &Hub,
    stats: &Stats,
) {
    let mut validator = FrameValidator::new(montage);
    let dt = 1.0 / montage.sampling_rate_hz();
    let mut epochs = 0u64;
    for item in input {
        let sent = match item {
            SourceItem::Frame(frame, at) => {
                let t = frame.t;
                if let Err(e) = validator.check(&frame) {
                    let reason = format!("frame rejected: {e}");
                    publish_error(hub, stats, t, &reason);
                    if out.send(FeatureItem::Halt(reason)).is_err() {
                        break;
                    }
                    continue;
                }
                let mut ok = true;
                for epoch in epocher.push(frame) {
                    epochs += 1;
                    let item = match extractor.extract(&epoch) {
                        Ok(fv) => {
                            hub.publish(fv.t_end, Payload::Features(fv.clone()));
                            FeatureItem::Features(fv, at)
                        }
                        Err(e) => {
                            let reason = format!("feature extraction failed: {e}");
                            publish_error(hub, stats, t, &reason);
                            FeatureItem::Halt(reason)
                        }
                    };
                    ok &= out.send(item).is_ok();
                }
                ok && out.send(FeatureItem::Clock(t + dt)).is_ok()
            }
            SourceItem::TrainingStart { t0, protocol } => out.send(FeatureItem::TrainingStart { t0, protocol }).is_ok(),
            SourceItem::TrainingAbort => out.send(FeatureItem::TrainingAbort).is_ok(),
        };
        if !sent {
            break;
        }
    }
    let mut s = lock(stats);
    s.epochs = epochs;
    s.dropped_epochs = epocher.dropped();
}

fn publish_error(hub: &Hub, stats: &Stats, t: f64, reason: &str) {
    log::error!("{reason}");
    lock(stats).errors.push(reason.to_owned());
    hub.publish(
        t,
        Payload::Error(ErrorPayload {
            reason: reason.to_owned(),
            offending_seq: None,
        }),
    );
}

struct ClassifierStage {
    hub: Arc<Hub>,
    model: ModelSlot,
    fit: FitConfig,
    cv_folds: usize,
    metadata: ModelMetadata,
    fits: Arc<Mutex<Vec<JoinHandle<()>>>>,
    stats: Stats,
}

impl ClassifierStage {
    fn run(self, input: Receiver<FeatureItem>, out: Sender<PredictionItem>) {
        let mut runner: Option<ProtocolRunner> = None;
        let mut predictions = 0u64;
        for item in input {
            let sent = match item {
                FeatureItem::Features(fv, at) => {
                    if let Some(r) = runner.as_mut() {
                        let hub = &self.hub;
                        r.feed(fv.clone(), &mut |cue: Cue| {
                            hub.publish(cue.t, Payload::Cue(cue));
                        });
                        if r.is_complete() {
                            let session = runner.take().expect("runner present").finish();
                            self.spawn_fit(session.expect("complete session"));
                        }
                    }
                    let model = self.model.read().expect("model lock").clone();
                    match model.map(|m| m.predict(&fv)) {
                        None => true,
                        Some(Ok(p)) => {
                            predictions += 1;
                            self.hub.publish(p.t_end, Payload::Prediction(p));
                            out.send(PredictionItem::Prediction(p, at)).is_ok()
                        }
                        Some(Err(e)) => {
                            let reason = format!("prediction failed: {e}");
                            publish_error(&self.hub, &self.stats, fv.t_end, &reason);
                            out.send(PredictionItem::Halt(reason)).is_ok()
                        }
                    }
                }
                FeatureItem::Clock(t) => out.send(PredictionItem::Clock(t)).is_ok(),
                FeatureItem::Halt(r) => out.send(PredictionItem::Halt(r)).is_ok(),
                FeatureItem::TrainingStart { t0, protocol } => {
                    match TrainingSession::new(protocol).and_then(|s| ProtocolRunner::new(s, t0)) {
                        Ok(r) => runner = Some(r),
                        Err(e) => publish_error(&self.hub, &self.stats, t0, &format!("training not started: {e}")),
                    }
                    true
                }
                FeatureItem::TrainingAbort => {
                    if runner.take().is_some() {
                        self.hub.publish_now(Payload::Report(Report {
                            kind: ReportKind::TrainingAborted,
                            accuracy: None,
                            cv: None,
                            trials_per_class: Default::default(),
                            model_installed: false,
                            detail: None,
                        }));
                    }
                    true
                }
            };
            if !sent {
                break;
            }
        }
        if let Some(r) = runner {
            if let Err(e) = r.finish() {
                self.hub.publish_now(Payload::Report(Report {
                    kind: ReportKind::TrainingFailed,
                    accuracy: None,
                    cv: None,
                    trials_per_class: Default::default(),
                    model_installed: false,
                    detail: Some(e.to_string()),
                }));
            }
        }
        lock(&self.stats).predictions = predictions;
    }

    fn spawn_fit(&self, session: TrainingSession) {
        let (hub, slot, cfg, meta, folds) = (
            self.hub.clone(),
            self.model.clone(),
            self.fit,
            self.metadata.clone(),
            self.cv_folds,
        );
        let job = std::thread::spawn(move || {
            let trials_per_class = session.trials_per_class();
            let report = match fit(&session, &cfg, &meta) {
                Ok(mut model) => {
                    let min_trials = trials_per_class.values().copied().min().unwrap_or(0);
                    let k = folds.min(min_trials);
                    let cv = (k >= 2)
                        .then(|| cross_validate(&session, &cfg, &meta, k).ok())
                        .flatten();
                    model.summary.cv_accuracy = cv.as_ref().map(|c| c.accuracy);
                    *slot.write().expect("model lock") = Some(Arc::new(model));
                    Report {
                        kind: ReportKind::TrainingComplete,
                        accuracy: cv.as_ref().map(|c| c.accuracy),
                        cv,
                        trials_per_class,
                        model_installed: true,
                        detail: None,
                    }
                }
                Err(e) => Report {
                    kind: ReportKind::TrainingFailed,
                    accuracy: None,
                    cv: None,
                    trials_per_class,
                    model_installed: false,
                    detail: Some(e.to_string()),
                },
            };
            hub.publish_now(Payload::Report(report));
        });
        lock_fits(&self.fits).push(job);
    }
}

fn control_stage(
    input: Receiver<PredictionItem>,
    overrides: Receiver<Command>,
    mut decoder: Decoder,
    mut sim: Simulator,
    hub: &Hub,
    stats: &Stats,
) {
    let mut overrides = overrides;
    let publish_ticks = |ticks: Vec<Telemetry>| {
        for t in ticks {
            hub.publish(t.t, Payload::Telemetry(t));
        }
    };
    let issue = |sim: &mut Simulator, ev: CommandEvent| {
        sim.apply(ev.command);
        lock(stats).commands.push(ev);
        hub.publish(ev.issued_at, Payload::Command(ev));
    };
    loop {
        select! {
            recv(input) -> item => {
                let Ok(item) = item else { break };
                match item {
                    PredictionItem::Prediction(p, at) => {
                        publish_ticks(sim.advance_to(p.t_end));
                        if let Some(ev) = decoder.push(&p) {
                            let processing = at.elapsed().as_secs_f64();
                            let span = decoder.last_dwell_span().unwrap_or(0.0);
                            {
                                let mut s = lock(stats);
                                s.processing_s.push(processing);
                                s.latencies_s.push(span + processing);
                            }
                            issue(&mut sim, ev);
                        }
                    }
                    PredictionItem::Clock(t) => publish_ticks(sim.advance_to(t)),
                    PredictionItem::Halt(reason) => {
                        log::warn!("safety stop: {reason}");
                        let ev = CommandEvent::safety_stop(sim.time());
                        decoder.note_external(&ev);
                        issue(&mut sim, ev);
                    }
                }
            }
            recv(overrides) -> cmd => match cmd {
                Ok(c) => {
                    let ev = CommandEvent::manual(c, sim.time());
                    decoder.note_external(&ev);
                    issue(&mut sim, ev);
                    publish_ticks(vec![sim.snapshot()]);
                }
                Err(_) => overrides = crossbeam_channel::never(),
            },
        }
    }
    let mut s = lock(stats);
    s.collisions = sim.collisions();
    s.final_state = Some(sim.snapshot());
}
