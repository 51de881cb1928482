//! Neutral-first training protocol, model fitting (shared-covariance linear
//! discriminant or random forest), prediction with per-class confidences,
//! trial-grouped cross-validation, and JSON model persistence.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::FeatureVector;
use crate::error::{Error, Result};
use crate::par::*;
use crate::signal::{BandDefinition, CommandLabel, Montage};
use crate::synth::IntentInterval;

/// Model file schema version.
pub const SCHEMA_VERSION: u32 = 1;

/// Uniform mass mixed into every confidence vector so that all classes keep
/// non-zero support.
const CONFIDENCE_FLOOR: f64 = 1e-9;

/// Slack when comparing epoch bounds to trial bounds, seconds.
const TIME_TOLERANCE: f64 = 1e-6;

const N_CLASSES: usize = CommandLabel::COUNT;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtocolEntry {
    pub label: CommandLabel,
    pub trials: usize,
    pub trial_duration_s: f64,
}

/// Neutral, Push, Pull, Left, Right blocks of `trials` trials each.
pub fn standard_protocol(trials: usize, trial_duration_s: f64) -> Vec<ProtocolEntry> {
    CommandLabel::ALL
        .iter()
        .map(|&label| ProtocolEntry {
            label,
            trials,
            trial_duration_s,
        })
        .collect()
}

pub fn validate_protocol(protocol: &[ProtocolEntry]) -> Result<()> {
    match protocol.first() {
        None => return Err(Error::validation("training protocol is empty")),
        Some(p) if p.label != CommandLabel::Neutral => {
            return Err(Error::validation(format!(
                "training protocol must start with Neutral, starts with {}",
                p.label
            )))
        }
        _ => {}
    }
    for p in protocol {
        if p.trials == 0 {
            return Err(Error::validation(format!("{} block has zero trials", p.label)));
        }
        if !(p.trial_duration_s.is_finite() && p.trial_duration_s > 0.0) {
            return Err(Error::validation(format!(
                "{} trial duration must be positive, got {}",
                p.label, p.trial_duration_s
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CuePhase {
    Start,
    Stop,
}

/// Instruction to the user: begin or end a trial of `label`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cue {
    pub label: CommandLabel,
    /// Global trial index within the protocol.
    pub trial: usize,
    pub phase: CuePhase,
    pub t: f64,
    pub duration_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub label: CommandLabel,
    pub t_start: f64,
    pub t_end: f64,
    pub features: Vec<FeatureVector>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SessionState {
    Idle,
    Recording(CommandLabel),
    Complete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSession {
    pub protocol: Vec<ProtocolEntry>,
    pub trials: Vec<Trial>,
    pub state: SessionState,
}

impl TrainingSession {
    pub fn new(protocol: Vec<ProtocolEntry>) -> Result<Self> {
        validate_protocol(&protocol)?;
        Ok(Self {
            protocol,
            trials: Vec::new(),
            state: SessionState::Idle,
        })
    }

    /// Builds a completed session from labelled ground truth instead of live
    /// cues. Each interval is cut into trials of `trial_duration_s` (the
    /// whole interval when `None`); features are assigned to the trial that
    /// fully contains them.
    pub fn from_ground_truth(
        intervals: &[IntentInterval],
        features: Vec<FeatureVector>,
        trial_duration_s: Option<f64>,
    ) -> Result<Self> {
        let mut trials = Vec::new();
        for iv in intervals {
            let step = trial_duration_s.unwrap_or(iv.t_end - iv.t_start);
            if !(step > 0.0) {
                return Err(Error::validation("trial duration must be positive"));
            }
            let mut t = iv.t_start;
            while t + TIME_TOLERANCE < iv.t_end {
                let end = (t + step).min(iv.t_end);
                trials.push(Trial {
                    label: iv.label,
                    t_start: t,
                    t_end: end,
                    features: Vec::new(),
                });
                t = end;
            }
        }
        for fv in features {
            let i = trials.partition_point(|tr| tr.t_end < fv.t_end - TIME_TOLERANCE);
            if let Some(tr) = trials.get_mut(i) {
                if fv.t_start >= tr.t_start - TIME_TOLERANCE && fv.t_end <= tr.t_end + TIME_TOLERANCE {
                    tr.features.push(fv);
                }
            }
        }
        let protocol = CommandLabel::ALL
            .iter()
            .filter_map(|&label| {
                let of: Vec<&Trial> = trials.iter().filter(|t| t.label == label).collect();
                (!of.is_empty()).then(|| ProtocolEntry {
                    label,
                    trials: of.len(),
                    trial_duration_s: of[0].t_end - of[0].t_start,
                })
            })
            .collect();
        Ok(Self {
            protocol,
            trials,
            state: SessionState::Complete,
        })
    }

    pub fn collected(&self) -> BTreeMap<CommandLabel, Vec<&FeatureVector>> {
        let mut out: BTreeMap<CommandLabel, Vec<&FeatureVector>> = BTreeMap::new();
        for t in &self.trials {
            out.entry(t.label).or_default().extend(t.features.iter());
        }
        out
    }

    pub fn trials_per_class(&self) -> BTreeMap<CommandLabel, usize> {
        let mut out = BTreeMap::new();
        for t in &self.trials {
            *out.entry(t.label).or_insert(0) += 1;
        }
        out
    }

    /// Flattens trials into samples, with the trial index as group id.
    pub fn dataset(&self) -> Dataset {
        let mut ds = Dataset::default();
        for (g, t) in self.trials.iter().enumerate() {
            for fv in &t.features {
                ds.x.push(fv.values.clone());
                ds.y.push(t.label);
                ds.group.push(g);
            }
        }
        ds
    }
}

/// Push-based driver for a cued protocol. Trials run back to back from
/// `t0`; a feature vector is recorded into the trial that fully contains its
/// epoch.
#[derive(Debug)]
pub struct ProtocolRunner {
    session: TrainingSession,
    /// (label, start, end) for every trial in order.
    schedule: Vec<(CommandLabel, f64, f64)>,
    current: usize,
    started: bool,
}

impl ProtocolRunner {
    pub fn new(session: TrainingSession, t0: f64) -> Result<Self> {
        if session.state != SessionState::Idle {
            return Err(Error::validation("training session is not idle"));
        }
        validate_protocol(&session.protocol)?;
        let mut t = t0;
        let mut schedule = Vec::new();
        for p in &session.protocol {
            for _ in 0..p.trials {
                schedule.push((p.label, t, t + p.trial_duration_s));
                t += p.trial_duration_s;
            }
        }
        Ok(Self {
            session,
            schedule,
            current: 0,
            started: false,
        })
    }

    pub fn schedule(&self) -> &[(CommandLabel, f64, f64)] {
        &self.schedule
    }

    pub fn state(&self) -> SessionState {
        self.session.state
    }

    pub fn is_complete(&self) -> bool {
        self.session.state == SessionState::Complete
    }

    fn cue(&self, i: usize, phase: CuePhase) -> Cue {
        let (label, start, end) = self.schedule[i];
        Cue {
            label,
            trial: i,
            phase,
            t: if phase == CuePhase::Start { start } else { end },
            duration_s: end - start,
        }
    }

    fn start_trial(&mut self, i: usize, sink: &mut impl FnMut(Cue)) {
        let (label, start, end) = self.schedule[i];
        self.session.trials.push(Trial {
            label,
            t_start: start,
            t_end: end,
            features: Vec::new(),
        });
        self.session.state = SessionState::Recording(label);
        sink(self.cue(i, CuePhase::Start));
    }

    fn finish_trial(&mut self, sink: &mut impl FnMut(Cue)) {
        sink(self.cue(self.current, CuePhase::Stop));
        self.current += 1;
        if self.current == self.schedule.len() {
            self.session.state = SessionState::Complete;
        } else {
            self.start_trial(self.current, sink);
        }
    }

    /// Feeds one feature vector; cues are emitted as the feature timeline
    /// crosses trial boundaries.
    pub fn feed(&mut self, fv: FeatureVector, sink: &mut impl FnMut(Cue)) {
        if self.is_complete() {
            return;
        }
        if !self.started {
            self.started = true;
            self.start_trial(0, sink);
        }
        // Close trials the timeline has moved past.
        while !self.is_complete() && fv.t_end > self.schedule[self.current].2 + TIME_TOLERANCE {
            self.finish_trial(sink);
        }
        if self.is_complete() {
            return;
        }
        let (_, start, end) = self.schedule[self.current];
        if fv.t_start >= start - TIME_TOLERANCE && fv.t_end <= end + TIME_TOLERANCE {
            self.session
                .trials
                .last_mut()
                .expect("a trial is open")
                .features
                .push(fv.clone());
        }
        // The epoch ending exactly at the trial end is its last one.
        if fv.t_end >= end - TIME_TOLERANCE {
            self.finish_trial(sink);
        }
    }

    /// Completed session, or a partial-data error when the protocol has not
    /// finished.
    pub fn finish(self) -> Result<TrainingSession> {
        if self.is_complete() {
            return Ok(self.session);
        }
        let (label, trial) = self
            .schedule
            .get(self.current)
            .map(|&(l, _, _)| (l, self.current))
            .unwrap_or((CommandLabel::Neutral, 0));
        Err(Error::PartialData { label, trial })
    }

    pub fn abort(self) -> TrainingSession {
        TrainingSession {
            state: SessionState::Idle,
            trials: Vec::new(),
            ..self.session
        }
    }
}

/// Runs the protocol over a feature stream anchored at the first feature's
/// start time, sending cues to `sink`.
pub fn run_protocol(
    session: TrainingSession,
    features: impl IntoIterator<Item = FeatureVector>,
    mut sink: impl FnMut(Cue),
) -> Result<TrainingSession> {
    let mut features = features.into_iter().peekable();
    let t0 = match features.peek() {
        Some(f) => f.t_start,
        None => {
            let label = session
                .protocol
                .first()
                .map_or(CommandLabel::Neutral, |p| p.label);
            return Err(Error::PartialData { label, trial: 0 });
        }
    };
    let mut runner = ProtocolRunner::new(session, t0)?;
    for fv in features {
        runner.feed(fv, &mut sink);
        if runner.is_complete() {
            break;
        }
    }
    runner.finish()
}

/// Samples with labels and group (trial) ids.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<CommandLabel>,
    pub group: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.first().map_or(0, Vec::len)
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: idx.iter().map(|&i| self.x[i].clone()).collect(),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            group: idx.iter().map(|&i| self.group[i]).collect(),
        }
    }

    pub fn class_counts(&self) -> [usize; N_CLASSES] {
        let mut c = [0; N_CLASSES];
        for l in &self.y {
            c[l.index()] += 1;
        }
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    LinearDiscriminant,
    RandomForest,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub kind: ModelKind,
    /// Added to the diagonal of the pooled covariance.
    pub ridge_lambda: f64,
    pub trees: usize,
    pub max_depth: usize,
    /// Features tried per split; `None` means `floor(sqrt(d))`.
    pub max_features: Option<usize>,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::LinearDiscriminant,
            ridge_lambda: 1e-3,
            trees: 100,
            max_depth: 8,
            max_features: None,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn with_kind(kind: ModelKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ridge_lambda.is_finite() && self.ridge_lambda >= 0.0) {
            return Err(Error::validation(format!("ridge lambda must be >= 0, got {}", self.ridge_lambda)));
        }
        if self.trees == 0 || self.max_depth == 0 {
            return Err(Error::validation("forest needs at least one tree of depth >= 1"));
        }
        if self.max_features == Some(0) {
            return Err(Error::validation("max_features must be >= 1"));
        }
        Ok(())
    }
}

/// Per-feature z-score parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Features whose training variance was zero (their std is set to 1).
    pub zero_variance: Vec<bool>,
}

impl Normalization {
    pub fn fit(x: &[Vec<f64>]) -> Self {
        let d = x[0].len();
        let n = x.len() as f64;
        let mut mean = vec![0.0; d];
        for row in x {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for row in x {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let mut zero_variance = vec![false; d];
        let std = var
            .iter()
            .zip(zero_variance.iter_mut())
            .map(|(s, z)| {
                let sd = (s / n).sqrt();
                if sd > 0.0 && sd.is_finite() {
                    sd
                } else {
                    *z = true;
                    1.0
                }
            })
            .collect();
        Self {
            mean,
            std,
            zero_variance,
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }
}

/// Montage and band layout the model was trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub channels: Vec<String>,
    pub sampling_rate_hz: f64,
    pub bands: Vec<BandDefinition>,
}

impl ModelMetadata {
    pub fn new(montage: &Montage, bands: &[BandDefinition]) -> Self {
        Self {
            channels: montage.names(),
            sampling_rate_hz: montage.sampling_rate_hz(),
            bands: bands.to_vec(),
        }
    }

    pub fn dim(&self) -> usize {
        self.channels.len() * self.bands.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Leaf {
        class: usize,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// Flat decision tree; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn classify(&self, x: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                TreeNode::Leaf { class } => return class,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] <= threshold { left } else { right },
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum ModelParams {
    LinearDiscriminant {
        /// `coef[class][feature]`, applied to normalized features.
        coef: Vec<Vec<f64>>,
        intercept: Vec<f64>,
    },
    RandomForest {
        trees: Vec<Tree>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub trials_per_class: BTreeMap<CommandLabel, usize>,
    pub samples_per_class: BTreeMap<CommandLabel, usize>,
    pub cv_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub schema_version: u32,
    pub kind: ModelKind,
    pub params: ModelParams,
    pub normalization: Normalization,
    pub metadata: ModelMetadata,
    pub classes: Vec<CommandLabel>,
    pub summary: TrainingSummary,
}

/// Per-class confidences (summing to one) and the argmax label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub confidences: [f64; N_CLASSES],
    pub label: CommandLabel,
    pub t_start: f64,
    pub t_end: f64,
}

impl Prediction {
    /// Normalizes raw non-negative scores, mixes in the confidence floor and
    /// picks the argmax (lowest class index on ties).
    pub fn from_scores(scores: [f64; N_CLASSES], t_start: f64, t_end: f64) -> Self {
        let total: f64 = scores.iter().sum();
        let mut confidences = [0.0; N_CLASSES];
        for (c, s) in confidences.iter_mut().zip(scores) {
            let p = if total > 0.0 { s / total } else { 1.0 / N_CLASSES as f64 };
            *c = (1.0 - CONFIDENCE_FLOOR) * p + CONFIDENCE_FLOOR / N_CLASSES as f64;
        }
        let mut best = 0;
        for (i, &c) in confidences.iter().enumerate() {
            if c > confidences[best] {
                best = i;
            }
        }
        Self {
            confidences,
            label: CommandLabel::ALL[best],
            t_start,
            t_end,
        }
    }

    pub fn confidence(&self) -> f64 {
        self.confidences[self.label.index()]
    }

    pub fn confidence_of(&self, label: CommandLabel) -> f64 {
        self.confidences[label.index()]
    }
}

fn check_trainable(ds: &Dataset, d_expected: usize) -> Result<()> {
    let counts = ds.class_counts();
    for l in CommandLabel::ALL {
        if counts[l.index()] < 2 {
            return Err(Error::Underdetermined(l));
        }
    }
    if let Some(row) = ds.x.iter().find(|r| r.len() != d_expected) {
        return Err(Error::DimensionMismatch {
            expected: format!("{d_expected} features"),
            actual: format!("{} features", row.len()),
        });
    }
    Ok(())
}

/// Fits a model on a completed session.
pub fn fit(session: &TrainingSession, config: &FitConfig, metadata: &ModelMetadata) -> Result<TrainedModel> {
    if session.state != SessionState::Complete {
        return Err(Error::validation("training session is not complete"));
    }
    let ds = session.dataset();
    let mut model = fit_dataset(&ds, config, metadata)?;
    model.summary.trials_per_class = session.trials_per_class();
    Ok(model)
}

pub fn fit_dataset(ds: &Dataset, config: &FitConfig, metadata: &ModelMetadata) -> Result<TrainedModel> {
    config.validate()?;
    check_trainable(ds, metadata.dim())?;
    let normalization = Normalization::fit(&ds.x);
    let z: Vec<Vec<f64>> = ds.x.iter().map(|r| normalization.apply(r)).collect();
    let labels: Vec<usize> = ds.y.iter().map(|l| l.index()).collect();

    let params = match config.kind {
        ModelKind::LinearDiscriminant => fit_lda(&z, &labels, config.ridge_lambda)?,
        ModelKind::RandomForest => fit_forest(&z, &labels, config),
    };

    let counts = ds.class_counts();
    let mut trials: BTreeMap<CommandLabel, std::collections::BTreeSet<usize>> = BTreeMap::new();
    for (l, g) in ds.y.iter().zip(&ds.group) {
        trials.entry(*l).or_default().insert(*g);
    }
    Ok(TrainedModel {
        schema_version: SCHEMA_VERSION,
        kind: config.kind,
        params,
        normalization,
        metadata: metadata.clone(),
        classes: CommandLabel::ALL.to_vec(),
        summary: TrainingSummary {
            trials_per_class: trials.into_iter().map(|(l, s)| (l, s.len())).collect(),
            samples_per_class: CommandLabel::ALL.iter().map(|&l| (l, counts[l.index()])).collect(),
            cv_accuracy: None,
        },
    })
}

/// In-place Cholesky factor `L` of a symmetric positive-definite matrix.
fn cholesky(mut a: Vec<Vec<f64>>) -> Result<Vec<Vec<f64>>> {
    let n = a.len();
    for j in 0..n {
        let mut d = a[j][j];
        for k in 0..j {
            d -= a[j][k] * a[j][k];
        }
        if !(d > 0.0) {
            return Err(Error::validation(
                "pooled covariance is not positive definite; increase ridge_lambda",
            ));
        }
        let d = d.sqrt();
        a[j][j] = d;
        for i in j + 1..n {
            let mut s = a[i][j];
            for k in 0..j {
                s -= a[i][k] * a[j][k];
            }
            a[i][j] = s / d;
        }
        for v in a[j].iter_mut().skip(j + 1) {
            *v = 0.0;
        }
    }
    Ok(a)
}

fn cholesky_solve(l: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = l.len();
    let mut y = vec![0.0; n];
    for i in 0..n {
        let s: f64 = (0..i).map(|k| l[i][k] * y[k]).sum();
        y[i] = (b[i] - s) / l[i][i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| l[k][i] * x[k]).sum();
        x[i] = (y[i] - s) / l[i][i];
    }
    x
}

fn fit_lda(z: &[Vec<f64>], labels: &[usize], lambda: f64) -> Result<ModelParams> {
    let d = z[0].len();
    let n = z.len();
    let mut counts = [0usize; N_CLASSES];
    let mut means = vec![vec![0.0; d]; N_CLASSES];
    for (row, &c) in z.iter().zip(labels) {
        counts[c] += 1;
        for (m, v) in means[c].iter_mut().zip(row) {
            *m += v;
        }
    }
    for (m, &k) in means.iter_mut().zip(&counts) {
        m.iter_mut().for_each(|v| *v /= k as f64);
    }

    let mut cov = vec![vec![0.0; d]; d];
    for (row, &c) in z.iter().zip(labels) {
        let dev: Vec<f64> = row.iter().zip(&means[c]).map(|(v, m)| v - m).collect();
        for i in 0..d {
            let di = dev[i];
            for j in 0..=i {
                cov[i][j] += di * dev[j];
            }
        }
    }
    let dof = (n - N_CLASSES).max(1) as f64;
    for i in 0..d {
        for j in 0..=i {
            cov[i][j] /= dof;
            cov[j][i] = cov[i][j];
        }
        cov[i][i] += lambda;
    }
    let l = cholesky(cov)?;

    let mut coef = Vec::with_capacity(N_CLASSES);
    let mut intercept = Vec::with_capacity(N_CLASSES);
    for (m, &k) in means.iter().zip(&counts) {
        let w = cholesky_solve(&l, m);
        let quad: f64 = w.iter().zip(m).map(|(a, b)| a * b).sum();
        intercept.push(-0.5 * quad + (k as f64 / n as f64).ln());
        coef.push(w);
    }
    Ok(ModelParams::LinearDiscriminant { coef, intercept })
}

fn gini_cost(counts: &[usize; N_CLASSES], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let sq: f64 = counts.iter().map(|&c| (c * c) as f64).sum();
    n as f64 - sq / n as f64
}

fn majority(counts: &[usize; N_CLASSES]) -> usize {
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    best
}

struct TreeBuilder<'a> {
    z: &'a [Vec<f64>],
    labels: &'a [usize],
    max_depth: usize,
    max_features: usize,
    rng: ChaCha8Rng,
    nodes: Vec<TreeNode>,
}

impl TreeBuilder<'_> {
    fn build(&mut self, idx: &mut [usize], depth: usize) -> usize {
        let mut counts = [0usize; N_CLASSES];
        for &i in idx.iter() {
            counts[self.labels[i]] += 1;
        }
        let node = self.nodes.len();
        self.nodes.push(TreeNode::Leaf {
            class: majority(&counts),
        });
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        if depth >= self.max_depth || pure || idx.len() < 2 {
            return node;
        }

        let d = self.z[0].len();
        let mut features: Vec<usize> = (0..d).collect();
        let (chosen, _) = features.partial_shuffle(&mut self.rng, self.max_features);
        let chosen = chosen.to_vec();

        let parent_cost = gini_cost(&counts, idx.len());
        let mut best: Option<(f64, usize, f64)> = None;
        for f in chosen {
            idx.sort_by(|&a, &b| self.z[a][f].total_cmp(&self.z[b][f]));
            let mut left = [0usize; N_CLASSES];
            let mut right = counts;
            for k in 0..idx.len() - 1 {
                let c = self.labels[idx[k]];
                left[c] += 1;
                right[c] -= 1;
                let (a, b) = (self.z[idx[k]][f], self.z[idx[k + 1]][f]);
                if a == b {
                    continue;
                }
                let cost = gini_cost(&left, k + 1) + gini_cost(&right, idx.len() - k - 1);
                if best.is_none_or(|(bc, _, _)| cost < bc) {
                    best = Some((cost, f, 0.5 * (a + b)));
                }
            }
        }
        let Some((cost, feature, threshold)) = best else {
            return node;
        };
        if cost >= parent_cost {
            return node;
        }

        let mut split = 0;
        for k in 0..idx.len() {
            if self.z[idx[k]][feature] <= threshold {
                idx.swap(split, k);
                split += 1;
            }
        }
        let (l_idx, r_idx) = idx.split_at_mut(split);
        let left = self.build(l_idx, depth + 1);
        let right = self.build(r_idx, depth + 1);
        self.nodes[node] = TreeNode::Split {
            feature,
            threshold,
            left,
            right,
        };
        node
    }
}

fn fit_forest(z: &[Vec<f64>], labels: &[usize], config: &FitConfig) -> ModelParams {
    let n = z.len();
    let d = z[0].len();
    let max_features = config
        .max_features
        .unwrap_or_else(|| ((d as f64).sqrt().floor() as usize).max(1))
        .min(d);
    let trees = (0..config.trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(t as u64);
            let mut idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let mut builder = TreeBuilder {
                z,
                labels,
                max_depth: config.max_depth,
                max_features,
                rng,
                nodes: Vec::new(),
            };
            builder.build(&mut idx, 0);
            Tree { nodes: builder.nodes }
        })
        .collect();
    ModelParams::RandomForest { trees }
}

impl TrainedModel {
    /// Checks that a pipeline with this montage and band set can feed the model.
    pub fn check_compatible(&self, montage: &Montage, bands: &[BandDefinition]) -> Result<()> {
        if self.metadata.channels != montage.names() {
            return Err(Error::DimensionMismatch {
                expected: format!("model montage {:?}", self.metadata.channels),
                actual: format!("pipeline montage {:?}", montage.names()),
            });
        }
        let names = |b: &[BandDefinition]| b.iter().map(|b| b.name).collect::<Vec<_>>();
        if names(&self.metadata.bands) != names(bands) {
            return Err(Error::DimensionMismatch {
                expected: format!("model bands {:?}", names(&self.metadata.bands)),
                actual: format!("pipeline bands {:?}", names(bands)),
            });
        }
        if self.metadata.sampling_rate_hz != montage.sampling_rate_hz() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} Hz", self.metadata.sampling_rate_hz),
                actual: format!("{} Hz", montage.sampling_rate_hz()),
            });
        }
        Ok(())
    }

    fn raw_scores(&self, z: &[f64]) -> [f64; N_CLASSES] {
        let mut out = [0.0; N_CLASSES];
        match &self.params {
            ModelParams::LinearDiscriminant { coef, intercept } => {
                let mut logits = [0.0; N_CLASSES];
                for (c, (w, b)) in coef.iter().zip(intercept).enumerate() {
                    logits[c] = w.iter().zip(z).map(|(a, x)| a * x).sum::<f64>() + b;
                }
                let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                for (o, l) in out.iter_mut().zip(logits) {
                    *o = (l - max).exp();
                }
            }
            ModelParams::RandomForest { trees } => {
                for t in trees {
                    out[t.classify(z)] += 1.0;
                }
            }
        }
        out
    }

    pub fn predict(&self, features: &FeatureVector) -> Result<Prediction> {
        let expected = (self.metadata.channels.len(), self.metadata.bands.len());
        if (features.n_channels, features.n_bands) != expected || features.dim() != self.metadata.dim() {
            return Err(Error::DimensionMismatch {
                expected: format!("{}x{} features", expected.0, expected.1),
                actual: format!("{}x{} features", features.n_channels, features.n_bands),
            });
        }
        Ok(self.predict_raw(&features.values, features.t_start, features.t_end))
    }

    fn predict_raw(&self, x: &[f64], t_start: f64, t_end: f64) -> Prediction {
        let z = self.normalization.apply(x);
        let mut scores = self.raw_scores(&z);
        if scores.iter().any(|s| !s.is_finite()) {
            scores = [1.0; N_CLASSES];
        }
        Prediction::from_scores(scores, t_start, t_end)
    }

    fn validate(&self) -> Result<()> {
        let d = self.metadata.dim();
        let bad = |m: &str| Err(Error::validation(m.to_owned()));
        if self.classes != CommandLabel::ALL {
            return bad("class list must be the five command labels");
        }
        let n = &self.normalization;
        if n.mean.len() != d || n.std.len() != d || n.zero_variance.len() != d {
            return bad("normalization length does not match metadata");
        }
        if n.std.iter().any(|s| !(*s > 0.0)) {
            return bad("normalization std must be > 0");
        }
        match &self.params {
            ModelParams::LinearDiscriminant { coef, intercept } => {
                if coef.len() != N_CLASSES || intercept.len() != N_CLASSES || coef.iter().any(|w| w.len() != d) {
                    return bad("discriminant parameters have wrong shape");
                }
            }
            ModelParams::RandomForest { trees } => {
                for t in trees {
                    for node in &t.nodes {
                        let ok = match *node {
                            TreeNode::Leaf { class } => class < N_CLASSES,
                            TreeNode::Split {
                                feature, left, right, ..
                            } => feature < d && left < t.nodes.len() && right < t.nodes.len(),
                        };
                        if !ok {
                            return bad("tree node out of range");
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Free-function form of [`TrainedModel::predict`].
pub fn predict(model: &TrainedModel, features: &FeatureVector) -> Result<Prediction> {
    model.predict(features)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub kind: ModelKind,
    pub folds: usize,
    /// Pooled held-out accuracy over all folds.
    pub accuracy: f64,
    pub fold_accuracy: Vec<f64>,
    pub per_class_accuracy: BTreeMap<CommandLabel, f64>,
    /// `confusion[true][predicted]`.
    pub confusion: [[usize; N_CLASSES]; N_CLASSES],
}

/// Stratified, trial-grouped fold assignment: each class's trials are
/// shuffled with `seed` and dealt round-robin. Returns the fold of every
/// group id present in the dataset.
pub fn assign_folds(ds: &Dataset, k: usize, seed: u64) -> Result<BTreeMap<usize, usize>> {
    if k < 2 {
        return Err(Error::validation(format!("cross-validation needs k >= 2, got {k}")));
    }
    let mut groups_by_class: BTreeMap<CommandLabel, Vec<usize>> = BTreeMap::new();
    let mut seen = std::collections::BTreeSet::new();
    for (&l, &g) in ds.y.iter().zip(&ds.group) {
        if seen.insert(g) {
            groups_by_class.entry(l).or_default().push(g);
        }
    }
    let mut folds = BTreeMap::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for l in CommandLabel::ALL {
        let groups = groups_by_class.entry(l).or_default();
        if groups.len() < k {
            return Err(Error::validation(format!(
                "class {l} has {} trials, fewer than {k} folds",
                groups.len()
            )));
        }
        groups.shuffle(&mut rng);
        for (i, &g) in groups.iter().enumerate() {
            folds.insert(g, i % k);
        }
    }
    Ok(folds)
}

/// Trial-grouped stratified k-fold cross-validation.
pub fn cross_validate_dataset(
    ds: &Dataset,
    config: &FitConfig,
    metadata: &ModelMetadata,
    k: usize,
) -> Result<CvReport> {
    let fold_of = assign_folds(ds, k, config.seed)?;
    let per_fold: Vec<Result<(Vec<usize>, Vec<usize>)>> = (0..k)
        .into_par_iter()
        .map(|fold| {
            let (test, train): (Vec<usize>, Vec<usize>) =
                (0..ds.len()).partition(|&i| fold_of[&ds.group[i]] == fold);
            let model = fit_dataset(&ds.subset(&train), config, metadata)?;
            let predicted = test
                .iter()
                .map(|&i| model.predict_raw(&ds.x[i], 0.0, 0.0).label.index())
                .collect();
            Ok((test, predicted))
        })
        .collect();

    let mut confusion = [[0usize; N_CLASSES]; N_CLASSES];
    let mut fold_accuracy = Vec::with_capacity(k);
    for r in per_fold {
        let (test, predicted) = r?;
        let mut correct = 0;
        for (&i, &p) in test.iter().zip(&predicted) {
            let t = ds.y[i].index();
            confusion[t][p] += 1;
            correct += usize::from(t == p);
        }
        fold_accuracy.push(if test.is_empty() { 0.0 } else { correct as f64 / test.len() as f64 });
    }
    let total: usize = confusion.iter().flatten().sum();
    let correct: usize = (0..N_CLASSES).map(|i| confusion[i][i]).sum();
    let per_class_accuracy = CommandLabel::ALL
        .iter()
        .map(|&l| {
            let row = &confusion[l.index()];
            let n: usize = row.iter().sum();
            (l, if n == 0 { 0.0 } else { row[l.index()] as f64 / n as f64 })
        })
        .collect();
    Ok(CvReport {
        kind: config.kind,
        folds: k,
        accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
        fold_accuracy,
        per_class_accuracy,
        confusion,
    })
}

pub fn cross_validate(
    session: &TrainingSession,
    config: &FitConfig,
    metadata: &ModelMetadata,
    k: usize,
) -> Result<CvReport> {
    cross_validate_dataset(&session.dataset(), config, metadata, k)
}

pub fn save_model(model: &TrainedModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let json = serde_json::to_string_pretty(model).expect("model serializes");
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<TrainedModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    model_from_json(&text).map_err(|reason| Error::ModelLoad {
        path: path.to_owned(),
        reason,
    })
}

fn model_from_json(text: &str) -> std::result::Result<TrainedModel, String> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| format!("corrupt file: {e}"))?;
    match value.get("schema_version").and_then(serde_json::Value::as_u64) {
        Some(v) if v == u64::from(SCHEMA_VERSION) => {}
        Some(v) => return Err(format!("version mismatch: file has schema {v}, expected {SCHEMA_VERSION}")),
        None => return Err("corrupt file: missing schema_version".into()),
    }
    let model: TrainedModel = serde_json::from_value(value).map_err(|e| format!("corrupt file: {e}"))?;
    model.validate().map_err(|e| format!("corrupt file: {e}"))?;
    Ok(model)
}
