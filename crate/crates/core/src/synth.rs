//! Synthetic headset: deterministic EEG generated from an intent script, plus
//! replay and CSV persistence of recorded sessions.
//!
//! Each channel carries one band-limited oscillator bank per rhythm band
//! (sinusoids with seeded frequencies and phases) over a pink-noise floor.
//! While an intent is active, the signature of its label multiplies the
//! amplitude of selected (channel, band) banks by a gain.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, OnceLock};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{default_bands, BandName, CommandLabel, EegFrame, Montage};

/// Sinusoids per (channel, band) oscillator bank.
const BANK_SIZE: usize = 4;
/// Samples discarded while the pink-noise filter settles.
const PINK_WARMUP: usize = 8192;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MainsSpec {
    pub freq_hz: f64,
    pub amplitude_uv: f64,
}

/// Baseline activity present on every channel regardless of intent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSpec {
    /// RMS of the pink-noise floor, µV.
    pub pink_amplitude_uv: f64,
    /// Amplitude of each band's oscillator bank at unit gain, µV
    /// (bank power is `amplitude² / 2`).
    pub rhythm_amplitude_uv: f64,
    pub mains: Option<MainsSpec>,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            pink_amplitude_uv: 2.0,
            rhythm_amplitude_uv: 1.0,
            mains: None,
        }
    }
}

impl NoiseSpec {
    pub fn silent() -> Self {
        Self {
            pink_amplitude_uv: 0.0,
            rhythm_amplitude_uv: 0.0,
            mains: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignatureEntry {
    pub channel: String,
    pub band: BandName,
    pub gain: f64,
}

impl SignatureEntry {
    pub fn new(channel: &str, band: BandName, gain: f64) -> Self {
        Self {
            channel: channel.to_owned(),
            band,
            gain,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntentSegment {
    pub label: CommandLabel,
    pub duration_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub seed: u64,
    #[serde(default)]
    pub baseline: NoiseSpec,
    /// Standard signatures when absent; `{}` for none.
    #[serde(default = "default_signatures")]
    pub signatures: BTreeMap<CommandLabel, Vec<SignatureEntry>>,
    pub intent_script: Vec<IntentSegment>,
}

impl ScenarioSpec {
    pub fn validate(&self, montage: &Montage) -> Result<()> {
        for seg in &self.intent_script {
            if !(seg.duration_s.is_finite() && seg.duration_s > 0.0) {
                return Err(Error::validation(format!(
                    "intent {} has non-positive duration {}",
                    seg.label, seg.duration_s
                )));
            }
        }
        let b = &self.baseline;
        for (what, v) in [("pink amplitude", b.pink_amplitude_uv), ("rhythm amplitude", b.rhythm_amplitude_uv)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::validation(format!("{what} must be >= 0, got {v}")));
            }
        }
        if let Some(m) = b.mains {
            if m.freq_hz != 50.0 && m.freq_hz != 60.0 {
                return Err(Error::validation(format!("mains frequency must be 50 or 60 Hz, got {}", m.freq_hz)));
            }
            if m.freq_hz >= montage.nyquist_hz() {
                return Err(Error::validation(format!(
                    "mains {} Hz is above Nyquist ({} Hz)",
                    m.freq_hz,
                    montage.nyquist_hz()
                )));
            }
        }
        if self
            .signatures
            .get(&CommandLabel::Neutral)
            .is_some_and(|s| !s.is_empty())
        {
            return Err(Error::validation("Neutral signature must be empty (baseline only)"));
        }
        let bands = default_bands();
        for (label, entries) in &self.signatures {
            for e in entries {
                if montage.channel_index(&e.channel).is_none() {
                    return Err(Error::validation(format!(
                        "{label} signature names unknown channel {:?}",
                        e.channel
                    )));
                }
                let band = bands.iter().find(|b| b.name == e.band).expect("all bands have defaults");
                if band.low_hz >= montage.nyquist_hz() {
                    return Err(Error::validation(format!(
                        "{label} signature band {} is above Nyquist",
                        e.band
                    )));
                }
                if !(e.gain.is_finite() && e.gain > 0.0) {
                    return Err(Error::validation(format!(
                        "{label} signature gain must be > 0, got {}",
                        e.gain
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn total_duration_s(&self) -> f64 {
        self.intent_script.iter().map(|s| s.duration_s).sum()
    }

    /// Cycles the intent script until it spans `duration_s`, truncating the
    /// last segment.
    pub fn fitted_to(&self, duration_s: f64) -> Result<ScenarioSpec> {
        if !(duration_s.is_finite() && duration_s > 0.0) {
            return Err(Error::validation(format!("duration must be positive, got {duration_s}")));
        }
        if self.intent_script.is_empty() {
            return Err(Error::validation("intent script is empty"));
        }
        let mut script = Vec::new();
        let mut total = 0.0;
        for seg in self.intent_script.iter().cycle() {
            let remaining = duration_s - total;
            if remaining <= 1e-12 {
                break;
            }
            let d = seg.duration_s.min(remaining);
            script.push(IntentSegment {
                label: seg.label,
                duration_s: d,
            });
            total += d;
        }
        Ok(ScenarioSpec {
            intent_script: script,
            ..self.clone()
        })
    }

    /// Five-class scenario used for calibration and acceptance: 20 trials of
    /// 8 s per class in neutral-first blocks. Each command raises two
    /// (channel, band) banks by 3x over a baseline whose pink floor is 2 µV
    /// RMS and whose rhythm banks are 1 µV.
    pub fn calibration(seed: u64) -> ScenarioSpec {
        let mut script = Vec::new();
        for label in CommandLabel::ALL {
            for _ in 0..20 {
                script.push(IntentSegment {
                    label,
                    duration_s: 8.0,
                });
            }
        }
        ScenarioSpec {
            seed,
            baseline: NoiseSpec::default(),
            signatures: default_signatures(),
            intent_script: script,
        }
    }
}

/// Push: frontal beta; Pull: occipital alpha; Left: right-central theta;
/// Right: left-central beta.
pub fn default_signatures() -> BTreeMap<CommandLabel, Vec<SignatureEntry>> {
    let mut m = BTreeMap::new();
    m.insert(CommandLabel::Neutral, vec![]);
    m.insert(
        CommandLabel::Push,
        vec![
            SignatureEntry::new("F3", BandName::Beta, 3.0),
            SignatureEntry::new("F4", BandName::Beta, 3.0),
        ],
    );
    m.insert(
        CommandLabel::Pull,
        vec![
            SignatureEntry::new("O1", BandName::Alpha, 3.0),
            SignatureEntry::new("O2", BandName::Alpha, 3.0),
        ],
    );
    m.insert(
        CommandLabel::Left,
        vec![
            SignatureEntry::new("C4", BandName::Theta, 3.0),
            SignatureEntry::new("T4", BandName::Theta, 3.0),
        ],
    );
    m.insert(
        CommandLabel::Right,
        vec![
            SignatureEntry::new("C3", BandName::Beta, 3.0),
            SignatureEntry::new("T3", BandName::Beta, 3.0),
        ],
    );
    m
}

/// Ground-truth intent over `[t_start, t_end)`, frames `[start_seq, end_seq)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntentInterval {
    pub label: CommandLabel,
    pub start_seq: u64,
    pub end_seq: u64,
    pub t_start: f64,
    pub t_end: f64,
}

impl IntentInterval {
    pub fn contains_t(&self, t: f64) -> bool {
        self.t_start <= t && t < self.t_end
    }
}

/// Returns the interval active at time `t`, if any.
pub fn intent_at(intervals: &[IntentInterval], t: f64) -> Option<&IntentInterval> {
    let i = intervals.partition_point(|iv| iv.t_end <= t);
    intervals.get(i).filter(|iv| iv.contains_t(t))
}

/// Shared handle that, when set, replaces the scripted intent of a running
/// generator (used while a live training protocol cues the user).
#[derive(Debug, Clone, Default)]
pub struct IntentOverride(Arc<AtomicUsize>);

impl IntentOverride {
    const NONE: usize = usize::MAX;

    pub fn new() -> Self {
        Self(Arc::new(AtomicUsize::new(Self::NONE)))
    }

    pub fn set(&self, label: Option<CommandLabel>) {
        self.0
            .store(label.map_or(Self::NONE, CommandLabel::index), Ordering::SeqCst);
    }

    pub fn get(&self) -> Option<CommandLabel> {
        CommandLabel::from_index(self.0.load(Ordering::SeqCst))
    }
}

#[derive(Debug, Clone)]
struct Bank {
    freqs: [f64; BANK_SIZE],
    phases: [f64; BANK_SIZE],
}

/// Kellet's pinking filter driven by white noise.
#[derive(Debug, Clone)]
struct PinkNoise {
    rng: ChaCha8Rng,
    b: [f64; 7],
    scale: f64,
}

impl PinkNoise {
    fn new(rng: ChaCha8Rng, rms: f64) -> Self {
        let mut p = Self {
            rng,
            b: [0.0; 7],
            scale: rms / pink_unit_rms(),
        };
        for _ in 0..PINK_WARMUP {
            p.next_unit();
        }
        p
    }

    fn kellet(b: &mut [f64; 7], white: f64) -> f64 {
        b[0] = 0.99886 * b[0] + white * 0.0555179;
        b[1] = 0.99332 * b[1] + white * 0.0750759;
        b[2] = 0.96900 * b[2] + white * 0.1538520;
        b[3] = 0.86650 * b[3] + white * 0.3104856;
        b[4] = 0.55000 * b[4] + white * 0.5329522;
        b[5] = -0.7616 * b[5] - white * 0.0168980;
        let out = b[0] + b[1] + b[2] + b[3] + b[4] + b[5] + b[6] + white * 0.5362;
        b[6] = white * 0.115926;
        out
    }

    fn next_unit(&mut self) -> f64 {
        let white: f64 = StandardNormal.sample(&mut self.rng);
        Self::kellet(&mut self.b, white)
    }

    fn next(&mut self) -> f64 {
        self.next_unit() * self.scale
    }
}

/// Stationary RMS of the pinking filter for unit-variance white input.
fn pink_unit_rms() -> f64 {
    static RMS: OnceLock<f64> = OnceLock::new();
    *RMS.get_or_init(|| {
        let mut b = [0.0; 7];
        let mut energy = 0.0;
        for n in 0..200_000 {
            let h = PinkNoise::kellet(&mut b, if n == 0 { 1.0 } else { 0.0 });
            energy += h * h;
        }
        energy.sqrt()
    })
}

/// Deterministic frame generator. Iterates until the intent script ends
/// (or forever when built with [`SynthSource::endless`]).
#[derive(Debug, Clone)]
pub struct SynthSource {
    fs: f64,
    n_channels: usize,
    rhythm_amp: f64,
    mains: Option<MainsSpec>,
    /// `banks[channel][band]`.
    banks: Vec<Vec<Bank>>,
    pink: Vec<PinkNoise>,
    /// `gains[label][channel][band]`.
    gains: Vec<Vec<Vec<f64>>>,
    /// Segment boundaries in samples: (label, end sample).
    schedule: Vec<(CommandLabel, u64)>,
    endless: bool,
    intent_override: Option<IntentOverride>,
    n: u64,
    segment: usize,
}

impl SynthSource {
    pub fn new(spec: &ScenarioSpec, montage: &Montage) -> Result<Self> {
        spec.validate(montage)?;
        let fs = montage.sampling_rate_hz();
        let nyquist = montage.nyquist_hz();
        let bands = default_bands();

        let mut osc_rng = ChaCha8Rng::seed_from_u64(spec.seed);
        osc_rng.set_stream(0);
        let banks = (0..montage.len())
            .map(|_| {
                bands
                    .iter()
                    .map(|b| {
                        let lo = b.low_hz.max(0.5);
                        let hi = b.high_hz.min(0.9 * nyquist).max(lo);
                        let width = (hi - lo) / BANK_SIZE as f64;
                        let mut freqs = [0.0; BANK_SIZE];
                        let mut phases = [0.0; BANK_SIZE];
                        for k in 0..BANK_SIZE {
                            freqs[k] = lo + width * (k as f64 + osc_rng.random::<f64>());
                            phases[k] = 2.0 * PI * osc_rng.random::<f64>();
                        }
                        Bank { freqs, phases }
                    })
                    .collect()
            })
            .collect();

        let pink = (0..montage.len())
            .map(|c| {
                let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
                rng.set_stream(c as u64 + 1);
                PinkNoise::new(rng, spec.baseline.pink_amplitude_uv)
            })
            .collect();

        let gains = CommandLabel::ALL
            .iter()
            .map(|label| {
                let mut g = vec![vec![1.0; bands.len()]; montage.len()];
                for e in spec.signatures.get(label).into_iter().flatten() {
                    let c = montage.channel_index(&e.channel).expect("validated");
                    g[c][e.band as usize] *= e.gain;
                }
                g
            })
            .collect();

        let mut end = 0u64;
        let schedule = spec
            .intent_script
            .iter()
            .map(|s| {
                end += (s.duration_s * fs).round() as u64;
                (s.label, end)
            })
            .filter(|&(_, e)| e > 0)
            .collect();

        Ok(Self {
            fs,
            n_channels: montage.len(),
            rhythm_amp: spec.baseline.rhythm_amplitude_uv / (BANK_SIZE as f64).sqrt(),
            mains: spec.baseline.mains,
            banks,
            pink,
            gains,
            schedule,
            endless: false,
            intent_override: None,
            n: 0,
            segment: 0,
        })
    }

    /// Loops the intent script forever.
    pub fn endless(mut self) -> Self {
        self.endless = true;
        self
    }

    pub fn with_override(mut self, handle: IntentOverride) -> Self {
        self.intent_override = Some(handle);
        self
    }

    /// Ground-truth intervals for one pass of the script.
    pub fn intervals(&self) -> Vec<IntentInterval> {
        let mut start = 0u64;
        self.schedule
            .iter()
            .map(|&(label, end)| {
                let iv = IntentInterval {
                    label,
                    start_seq: start,
                    end_seq: end,
                    t_start: start as f64 / self.fs,
                    t_end: end as f64 / self.fs,
                };
                start = end;
                iv
            })
            .collect()
    }

    fn scripted_label(&mut self) -> Option<CommandLabel> {
        let total = self.schedule.last()?.1;
        let pos = if self.endless { self.n % total } else { self.n };
        if pos >= total {
            return None;
        }
        if pos == 0 {
            self.segment = 0;
        }
        while self.schedule[self.segment].1 <= pos {
            self.segment += 1;
        }
        Some(self.schedule[self.segment].0)
    }

    fn sample(&mut self, label: CommandLabel) -> Vec<f64> {
        let t = self.n as f64 / self.fs;
        let gains = &self.gains[label.index()];
        (0..self.n_channels)
            .map(|c| {
                let rhythm: f64 = self.banks[c]
                    .iter()
                    .zip(&gains[c])
                    .map(|(bank, &g)| {
                        let s: f64 = bank
                            .freqs
                            .iter()
                            .zip(&bank.phases)
                            .map(|(&f, &p)| (2.0 * PI * f * t + p).sin())
                            .sum();
                        g * s
                    })
                    .sum();
                let mains = self
                    .mains
                    .map_or(0.0, |m| m.amplitude_uv * (2.0 * PI * m.freq_hz * t).sin());
                self.rhythm_amp * rhythm + self.pink[c].next() + mains
            })
            .collect()
    }
}

impl Iterator for SynthSource {
    type Item = EegFrame;

    fn next(&mut self) -> Option<EegFrame> {
        let scripted = self.scripted_label()?;
        let label = self
            .intent_override
            .as_ref()
            .and_then(IntentOverride::get)
            .unwrap_or(scripted);
        let values = self.sample(label);
        let frame = EegFrame {
            seq: self.n,
            t: self.n as f64 / self.fs,
            values,
        };
        self.n += 1;
        Some(frame)
    }
}

/// Builds a generator and its ground-truth intervals.
pub fn generate(spec: &ScenarioSpec, montage: &Montage) -> Result<(SynthSource, Vec<IntentInterval>)> {
    let source = SynthSource::new(spec, montage)?;
    let intervals = source.intervals();
    Ok((source, intervals))
}

/// Runs the generator to completion into a recording.
pub fn generate_recording(spec: &ScenarioSpec, montage: &Montage) -> Result<SessionRecording> {
    let (source, intervals) = generate(spec, montage)?;
    SessionRecording::new(montage.clone(), source.collect(), intervals)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecording {
    pub montage: Montage,
    pub frames: Vec<EegFrame>,
    pub intervals: Vec<IntentInterval>,
}

impl SessionRecording {
    pub fn new(montage: Montage, frames: Vec<EegFrame>, intervals: Vec<IntentInterval>) -> Result<Self> {
        let mut v = crate::signal::FrameValidator::new(&montage);
        for f in &frames {
            v.check(f)?;
        }
        for w in intervals.windows(2) {
            if w[0].end_seq != w[1].start_seq {
                return Err(Error::validation(format!(
                    "intent intervals overlap or leave a gap at seq {}..{}",
                    w[0].end_seq, w[1].start_seq
                )));
            }
        }
        if let (Some(first), Some(last)) = (intervals.first(), intervals.last()) {
            let lo = frames.first().map_or(0, |f| f.seq);
            let hi = frames.last().map_or(0, |f| f.seq + 1);
            if first.start_seq != lo || last.end_seq != hi {
                return Err(Error::validation("intent intervals do not tile the recording"));
            }
        }
        Ok(Self {
            montage,
            frames,
            intervals,
        })
    }

    pub fn duration_s(&self) -> f64 {
        self.frames.len() as f64 / self.montage.sampling_rate_hz()
    }
}

/// Iterator adapter that releases frame `i` no earlier than
/// `(t_i - t_0) / speed` after the first. Infinite speed disables pacing.
pub struct Paced<I> {
    inner: I,
    speed: f64,
    origin: Option<(Instant, f64)>,
}

impl<I> Paced<I> {
    pub fn new(inner: I, speed: f64) -> Result<Self> {
        if !(speed > 0.0) {
            return Err(Error::validation(format!("replay speed must be > 0, got {speed}")));
        }
        Ok(Self {
            inner,
            speed,
            origin: None,
        })
    }
}

impl<I: Iterator<Item = EegFrame>> Iterator for Paced<I> {
    type Item = EegFrame;

    fn next(&mut self) -> Option<EegFrame> {
        let frame = self.inner.next()?;
        if self.speed.is_finite() {
            let (wall0, t0) = *self.origin.get_or_insert((Instant::now(), frame.t));
            let due = wall0 + Duration::from_secs_f64(((frame.t - t0) / self.speed).max(0.0));
            let now = Instant::now();
            if due > now {
                std::thread::sleep(due - now);
            }
        }
        Some(frame)
    }
}

/// Replays recorded frames in order; `speed` only scales pacing.
pub fn replay(
    recording: &SessionRecording,
    speed: f64,
) -> Result<Paced<std::iter::Cloned<std::slice::Iter<'_, EegFrame>>>> {
    if recording.frames.is_empty() {
        return Err(Error::validation("cannot replay an empty recording"));
    }
    Paced::new(recording.frames.iter().cloned(), speed)
}

/// Formats with 6 significant digits, `%g` style.
pub fn format_sig6(v: f64) -> String {
    if v == 0.0 {
        return "0".to_owned();
    }
    let sci = format!("{v:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        let s = format!("{v:.decimals$}");
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_owned()
        } else {
            s
        }
    } else {
        let m = if mantissa.contains('.') {
            mantissa.trim_end_matches('0').trim_end_matches('.')
        } else {
            mantissa
        };
        format!("{m}e{exp}")
    }
}

/// Writes `t,<ch1>,...,<chN>[,label]`. The label column is present when the
/// recording has intervals.
pub fn write_csv(path: impl AsRef<Path>, recording: &SessionRecording) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_csv_to(&mut w, recording).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_csv_to(w: &mut impl Write, recording: &SessionRecording) -> std::io::Result<()> {
    let labelled = !recording.intervals.is_empty();
    let mut header = vec!["t".to_owned()];
    header.extend(recording.montage.names());
    if labelled {
        header.push("label".to_owned());
    }
    writeln!(w, "{}", header.join(","))?;
    let mut iv = recording.intervals.iter().peekable();
    for f in &recording.frames {
        let mut row: Vec<String> = std::iter::once(f.t)
            .chain(f.values.iter().copied())
            .map(format_sig6)
            .collect();
        if labelled {
            while iv.peek().is_some_and(|i| i.end_seq <= f.seq) {
                iv.next();
            }
            row.push(iv.peek().map_or("", |i| i.label.as_str()).to_owned());
        }
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

/// Parses a session CSV whose header must name exactly the montage channels,
/// in order. Frames get `seq = 0..n`. Row numbers in errors are file lines.
pub fn load_csv(path: impl AsRef<Path>, montage: &Montage) -> Result<SessionRecording> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, montage)
}

pub fn read_csv(reader: impl std::io::Read, montage: &Montage) -> Result<SessionRecording> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut records = rdr.records();

    let header = match records.next() {
        Some(r) => r.map_err(|e| Error::Parse {
            row: 1,
            reason: e.to_string(),
        })?,
        None => {
            return Err(Error::Parse {
                row: 1,
                reason: "missing header".into(),
            })
        }
    };
    let cols: Vec<&str> = header.iter().map(str::trim).collect();
    if cols.first() != Some(&"t") {
        return Err(Error::Parse {
            row: 1,
            reason: "first column must be `t`".into(),
        });
    }
    let labelled = cols.last() == Some(&"label");
    let channels = &cols[1..cols.len() - usize::from(labelled)];
    let expected = montage.names();
    if channels != expected.iter().map(String::as_str).collect::<Vec<_>>().as_slice() {
        return Err(Error::Parse {
            row: 1,
            reason: format!(
                "header names {} channels {:?}, montage has {} channels {:?}",
                channels.len(),
                channels,
                expected.len(),
                expected
            ),
        });
    }
    let width = cols.len();

    let mut frames = Vec::new();
    let mut labels = Vec::new();
    for (i, rec) in records.enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| Error::Parse {
            row,
            reason: e.to_string(),
        })?;
        if rec.len() != width {
            return Err(Error::Parse {
                row,
                reason: format!("expected {width} columns, found {}", rec.len()),
            });
        }
        let num = |j: usize| -> Result<f64> {
            let cell = rec[j].trim();
            cell.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse {
                    row,
                    reason: format!("non-numeric cell {cell:?} in column {}", cols[j]),
                })
        };
        let t = num(0)?;
        let values = (1..=montage.len()).map(num).collect::<Result<Vec<_>>>()?;
        if labelled {
            let cell = rec[width - 1].trim();
            let label = cell.parse::<CommandLabel>().map_err(|_| Error::Parse {
                row,
                reason: format!("unknown label {cell:?}"),
            })?;
            labels.push(label);
        }
        frames.push(EegFrame {
            seq: i as u64,
            t,
            values,
        });
    }

    let intervals = label_runs(&labels, &frames);
    SessionRecording::new(montage.clone(), frames, intervals)
}

fn label_runs(labels: &[CommandLabel], frames: &[EegFrame]) -> Vec<IntentInterval> {
    let mut out: Vec<IntentInterval> = Vec::new();
    let end_t = |i: usize| -> f64 {
        frames
            .get(i)
            .map(|f| f.t)
            .unwrap_or_else(|| {
                let n = frames.len();
                let dt = if n >= 2 { frames[n - 1].t - frames[n - 2].t } else { 0.0 };
                frames[n - 1].t + dt
            })
    };
    for (i, &label) in labels.iter().enumerate() {
        match out.last_mut() {
            Some(iv) if iv.label == label => {
                iv.end_seq = i as u64 + 1;
            }
            _ => out.push(IntentInterval {
                label,
                start_seq: i as u64,
                end_seq: i as u64 + 1,
                t_start: frames[i].t,
                t_end: 0.0,
            }),
        }
    }
    for iv in &mut out {
        iv.t_end = end_t(iv.end_seq as usize);
    }
    out
}

/// Epoch counts per class: windows fully inside an interval of that class.
pub fn epochs_per_class(
    intervals: &[IntentInterval],
    fs_hz: f64,
    config: crate::dsp::EpochConfig,
) -> Result<BTreeMap<CommandLabel, usize>> {
    let (len, hop) = config.samples(fs_hz)?;
    let mut out: BTreeMap<CommandLabel, usize> = CommandLabel::ALL.iter().map(|&l| (l, 0)).collect();
    let total = intervals.last().map_or(0, |iv| iv.end_seq);
    let mut start = intervals.first().map_or(0, |iv| iv.start_seq);
    while start + len as u64 <= total {
        let end = start + len as u64;
        if let Some(iv) = intervals.iter().find(|iv| iv.start_seq <= start && end <= iv.end_seq) {
            *out.get_mut(&iv.label).expect("all labels present") += 1;
        }
        start += hop as u64;
    }
    Ok(out)
}
