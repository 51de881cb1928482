//! Filtering, epoching, Welch spectral estimation and log band-power
//! features.

use std::collections::VecDeque;
use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::*;
use crate::signal::{BandDefinition, EegFrame, Epoch, Montage};

/// Floor added to band power before the log transform.
pub const LOG_EPSILON: f64 = 1e-12;

/// Recursive filter request. `order` is the Butterworth order of each band
/// edge for `Bandpass`, and the number of cascaded poles for `Notch` (even).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum FilterSpec {
    Bandpass {
        low_hz: f64,
        high_hz: f64,
        #[serde(default = "default_order")]
        order: usize,
    },
    Notch {
        center_hz: f64,
        #[serde(default = "default_notch_q")]
        q: f64,
        #[serde(default = "default_notch_order")]
        order: usize,
    },
}

fn default_order() -> usize {
    4
}

fn default_notch_q() -> f64 {
    4.0
}

fn default_notch_order() -> usize {
    2
}

impl FilterSpec {
    pub fn bandpass(low_hz: f64, high_hz: f64) -> Self {
        FilterSpec::Bandpass {
            low_hz,
            high_hz,
            order: default_order(),
        }
    }

    pub fn notch(center_hz: f64) -> Self {
        FilterSpec::Notch {
            center_hz,
            q: default_notch_q(),
            order: default_notch_order(),
        }
    }

    pub fn validate(&self, fs_hz: f64) -> Result<()> {
        let nyquist = fs_hz / 2.0;
        match *self {
            FilterSpec::Bandpass {
                low_hz,
                high_hz,
                order,
            } => {
                if !(0.0 < low_hz && low_hz < high_hz && high_hz < nyquist) {
                    return Err(Error::validation(format!(
                        "bandpass {low_hz}-{high_hz} Hz must satisfy 0 < low < high < Nyquist ({nyquist} Hz)"
                    )));
                }
                check_order(order)
            }
            FilterSpec::Notch {
                center_hz,
                q,
                order,
            } => {
                if !(0.0 < center_hz && center_hz < nyquist) {
                    return Err(Error::validation(format!(
                        "notch at {center_hz} Hz is outside (0, Nyquist = {nyquist} Hz)"
                    )));
                }
                if !(q.is_finite() && q > 0.0) {
                    return Err(Error::validation(format!("notch q must be positive, got {q}")));
                }
                check_order(order)?;
                if order % 2 != 0 {
                    return Err(Error::validation(format!("notch order must be even, got {order}")));
                }
                Ok(())
            }
        }
    }
}

fn check_order(order: usize) -> Result<()> {
    if (2..=8).contains(&order) {
        Ok(())
    } else {
        Err(Error::validation(format!("filter order must be in [2, 8], got {order}")))
    }
}

/// Second-order section, normalized so `a0 = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Biquad {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Biquad {
    fn normalized(b: [f64; 3], a: [f64; 3]) -> Self {
        Self {
            b0: b[0] / a[0],
            b1: b[1] / a[0],
            b2: b[2] / a[0],
            a1: a[1] / a[0],
            a2: a[2] / a[0],
        }
    }

    fn lowpass(f0: f64, q: f64, fs: f64) -> Self {
        let w0 = 2.0 * PI * f0 / fs;
        let (s, c) = w0.sin_cos();
        let alpha = s / (2.0 * q);
        Self::normalized(
            [(1.0 - c) / 2.0, 1.0 - c, (1.0 - c) / 2.0],
            [1.0 + alpha, -2.0 * c, 1.0 - alpha],
        )
    }

    fn highpass(f0: f64, q: f64, fs: f64) -> Self {
        let w0 = 2.0 * PI * f0 / fs;
        let (s, c) = w0.sin_cos();
        let alpha = s / (2.0 * q);
        Self::normalized(
            [(1.0 + c) / 2.0, -(1.0 + c), (1.0 + c) / 2.0],
            [1.0 + alpha, -2.0 * c, 1.0 - alpha],
        )
    }

    fn notch(f0: f64, q: f64, fs: f64) -> Self {
        let w0 = 2.0 * PI * f0 / fs;
        let (s, c) = w0.sin_cos();
        let alpha = s / (2.0 * q);
        Self::normalized([1.0, -2.0 * c, 1.0], [1.0 + alpha, -2.0 * c, 1.0 - alpha])
    }

    fn first_order_lowpass(f0: f64, fs: f64) -> Self {
        let k = (PI * f0 / fs).tan();
        Self::normalized([k, k, 0.0], [1.0 + k, k - 1.0, 0.0])
    }

    fn first_order_highpass(f0: f64, fs: f64) -> Self {
        let k = (PI * f0 / fs).tan();
        Self::normalized([1.0, -1.0, 0.0], [1.0 + k, k - 1.0, 0.0])
    }

    /// Roots of `z^2 + a1 z + a2`.
    pub fn pole_magnitudes(&self) -> [f64; 2] {
        let disc = self.a1 * self.a1 - 4.0 * self.a2;
        if disc < 0.0 {
            let m = self.a2.sqrt();
            [m, m]
        } else {
            let r = disc.sqrt();
            [((-self.a1 + r) / 2.0).abs(), ((-self.a1 - r) / 2.0).abs()]
        }
    }

    fn dc_gain(&self) -> f64 {
        (self.b0 + self.b1 + self.b2) / (1.0 + self.a1 + self.a2)
    }

    /// Transposed direct-form II state for a unit step at steady state.
    fn step_state(&self) -> [f64; 2] {
        let y = self.dc_gain();
        let s2 = self.b2 - self.a2 * y;
        let s1 = self.b1 - self.a1 * y + s2;
        [s1, s2]
    }

    #[inline]
    fn tick(&self, x: f64, s: &mut [f64; 2]) -> f64 {
        let y = self.b0 * x + s[0];
        s[0] = self.b1 * x - self.a1 * y + s[1];
        s[1] = self.b2 * x - self.a2 * y;
        y
    }
}

/// Cascade of second-order sections.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Sos {
    pub sections: Vec<Biquad>,
}

impl Sos {
    pub fn max_pole_magnitude(&self) -> f64 {
        self.sections
            .iter()
            .flat_map(|s| s.pole_magnitudes())
            .fold(0.0, f64::max)
    }

    pub fn is_stable(&self) -> bool {
        self.max_pole_magnitude() < 1.0
    }

    pub fn then(mut self, other: Sos) -> Sos {
        self.sections.extend(other.sections);
        self
    }

    /// Causal filtering from a zero initial state.
    pub fn filter(&self, x: &[f64]) -> Vec<f64> {
        let mut state = vec![[0.0; 2]; self.sections.len()];
        x.iter().map(|&v| self.tick(v, &mut state)).collect()
    }

    fn tick(&self, x: f64, state: &mut [[f64; 2]]) -> f64 {
        self.sections
            .iter()
            .zip(state.iter_mut())
            .fold(x, |v, (sec, s)| sec.tick(v, s))
    }

    fn step_states(&self) -> Vec<[f64; 2]> {
        let mut gain = 1.0;
        self.sections
            .iter()
            .map(|s| {
                let st = s.step_state();
                let scaled = [st[0] * gain, st[1] * gain];
                gain *= s.dc_gain();
                scaled
            })
            .collect()
    }

    fn filter_from(&self, x: &[f64], init: &[[f64; 2]], scale: f64) -> Vec<f64> {
        let mut state: Vec<[f64; 2]> = init.iter().map(|s| [s[0] * scale, s[1] * scale]).collect();
        x.iter().map(|&v| self.tick(v, &mut state)).collect()
    }

    /// Zero-phase forward-backward filtering with odd-reflection padding and
    /// steady-state initial conditions.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        if n == 0 || self.sections.is_empty() {
            return x.to_vec();
        }
        let pad = (3 * (2 * self.sections.len() + 1)).min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

        let zi = self.step_states();
        let mut y = self.filter_from(&ext, &zi, ext[0]);
        y.reverse();
        let first = y[0];
        let mut y = self.filter_from(&y, &zi, first);
        y.reverse();
        y[pad..pad + n].to_vec()
    }
}

fn butterworth_qs(order: usize) -> Vec<f64> {
    (1..=order / 2)
        .map(|k| 1.0 / (2.0 * ((2 * k - 1) as f64 * PI / (2 * order) as f64).sin()))
        .collect()
}

/// Designs the filter as second-order sections and checks that every pole is
/// strictly inside the unit circle.
pub fn design_filter(spec: &FilterSpec, fs_hz: f64) -> Result<Sos> {
    spec.validate(fs_hz)?;
    let mut sections = Vec::new();
    match *spec {
        FilterSpec::Bandpass {
            low_hz,
            high_hz,
            order,
        } => {
            for q in butterworth_qs(order) {
                sections.push(Biquad::highpass(low_hz, q, fs_hz));
            }
            if order % 2 == 1 {
                sections.push(Biquad::first_order_highpass(low_hz, fs_hz));
            }
            for q in butterworth_qs(order) {
                sections.push(Biquad::lowpass(high_hz, q, fs_hz));
            }
            if order % 2 == 1 {
                sections.push(Biquad::first_order_lowpass(high_hz, fs_hz));
            }
        }
        FilterSpec::Notch {
            center_hz,
            q,
            order,
        } => {
            for _ in 0..order / 2 {
                sections.push(Biquad::notch(center_hz, q, fs_hz));
            }
        }
    }
    let sos = Sos { sections };
    if !sos.is_stable() {
        return Err(Error::validation(format!(
            "filter {spec:?} is unstable (max pole magnitude {})",
            sos.max_pole_magnitude()
        )));
    }
    Ok(sos)
}

/// Designs and concatenates a chain of filters.
pub fn design_chain(specs: &[FilterSpec], fs_hz: f64) -> Result<Sos> {
    specs
        .iter()
        .try_fold(Sos::default(), |acc, s| Ok(acc.then(design_filter(s, fs_hz)?)))
}

/// Bandpass 0.5–45 Hz plus an optional mains notch.
pub fn default_filter_chain(mains_hz: Option<f64>) -> Vec<FilterSpec> {
    let mut chain = vec![FilterSpec::bandpass(0.5, 45.0)];
    if let Some(f) = mains_hz {
        chain.push(FilterSpec::notch(f));
    }
    chain
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpochConfig {
    pub epoch_len_s: f64,
    pub hop_s: f64,
}

impl Default for EpochConfig {
    fn default() -> Self {
        Self {
            epoch_len_s: 1.0,
            hop_s: 0.25,
        }
    }
}

impl EpochConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.hop_s > 0.0 && self.hop_s <= self.epoch_len_s && self.epoch_len_s.is_finite()) {
            return Err(Error::validation(format!(
                "epoching needs 0 < hop ({}) <= epoch length ({})",
                self.hop_s, self.epoch_len_s
            )));
        }
        Ok(())
    }

    /// Window and hop lengths in samples.
    pub fn samples(&self, fs_hz: f64) -> Result<(usize, usize)> {
        self.validate()?;
        let len = (self.epoch_len_s * fs_hz).round() as usize;
        let hop = (self.hop_s * fs_hz).round() as usize;
        if len == 0 || hop == 0 {
            return Err(Error::validation("epoch or hop shorter than one sample"));
        }
        Ok((len, hop))
    }
}

/// Push-based sliding-window epocher. Windows sit on a fixed seq grid
/// anchored at the first frame; any window missing a seq is dropped and
/// counted.
#[derive(Debug)]
pub struct Epocher {
    montage: Arc<Montage>,
    len: u64,
    hop: u64,
    buf: VecDeque<EegFrame>,
    next_start: Option<u64>,
    dropped: usize,
}

impl Epocher {
    pub fn new(montage: Arc<Montage>, config: EpochConfig) -> Result<Self> {
        let (len, hop) = config.samples(montage.sampling_rate_hz())?;
        Ok(Self {
            montage,
            len: len as u64,
            hop: hop as u64,
            buf: VecDeque::new(),
            next_start: None,
            dropped: 0,
        })
    }

    pub fn dropped(&self) -> usize {
        self.dropped
    }

    /// Feeds one frame (seq must increase) and returns the windows it closes.
    pub fn push(&mut self, frame: EegFrame) -> Vec<Epoch> {
        let latest = frame.seq;
        let mut start = *self.next_start.get_or_insert(latest);
        self.buf.push_back(frame);

        let mut out = Vec::new();
        while latest + 1 >= start + self.len {
            let end = start + self.len;
            let window: Vec<EegFrame> = self
                .buf
                .iter()
                .filter(|f| f.seq >= start && f.seq < end)
                .cloned()
                .collect();
            if window.len() as u64 == self.len {
                let epoch = Epoch::new(Arc::clone(&self.montage), window)
                    .expect("complete window is contiguous");
                out.push(epoch);
            } else {
                self.dropped += 1;
            }
            start += self.hop;
            while self.buf.front().is_some_and(|f| f.seq < start) {
                self.buf.pop_front();
            }
        }
        self.next_start = Some(start);
        out
    }
}

/// Iterator adapter turning a frame stream into sliding epochs.
pub struct EpochStream<I> {
    frames: I,
    epocher: Epocher,
    pending: VecDeque<Epoch>,
}

impl<I> EpochStream<I> {
    pub fn dropped(&self) -> usize {
        self.epocher.dropped()
    }
}

impl<I: Iterator<Item = EegFrame>> Iterator for EpochStream<I> {
    type Item = Epoch;

    fn next(&mut self) -> Option<Epoch> {
        loop {
            if let Some(e) = self.pending.pop_front() {
                return Some(e);
            }
            let frame = self.frames.next()?;
            self.pending.extend(self.epocher.push(frame));
        }
    }
}

pub fn epoch_stream<I>(
    frames: I,
    montage: Arc<Montage>,
    config: EpochConfig,
) -> Result<EpochStream<I::IntoIter>>
where
    I: IntoIterator<Item = EegFrame>,
{
    Ok(EpochStream {
        frames: frames.into_iter(),
        epocher: Epocher::new(montage, config)?,
        pending: VecDeque::new(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WelchConfig {
    pub segment_len: usize,
    pub overlap: f64,
}

impl Default for WelchConfig {
    fn default() -> Self {
        Self {
            segment_len: 64,
            overlap: 0.5,
        }
    }
}

impl WelchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.segment_len < 2 {
            return Err(Error::validation("Welch segment needs at least 2 samples"));
        }
        if !(0.0..1.0).contains(&self.overlap) {
            return Err(Error::validation(format!(
                "Welch overlap must be in [0, 1), got {}",
                self.overlap
            )));
        }
        Ok(())
    }

    fn step(&self) -> usize {
        let overlap = (self.overlap * self.segment_len as f64).round() as usize;
        (self.segment_len - overlap).max(1)
    }
}

/// One-sided power spectral density per channel, µV²/Hz.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerSpectrum {
    pub freqs_hz: Vec<f64>,
    /// `power[channel][bin]`.
    pub power: Vec<Vec<f64>>,
    pub resolution_hz: f64,
    pub nyquist_hz: f64,
}

/// Reusable Welch estimator holding the window and FFT plan.
#[derive(Clone)]
pub struct Welch {
    config: WelchConfig,
    window: Vec<f64>,
    window_power: f64,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Welch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Welch").field("config", &self.config).finish()
    }
}

impl Welch {
    pub fn new(config: WelchConfig) -> Result<Self> {
        config.validate()?;
        let n = config.segment_len;
        // Periodic Hann.
        let window: Vec<f64> = (0..n)
            .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
            .collect();
        let window_power = window.iter().map(|w| w * w).sum();
        let fft = FftPlanner::new().plan_fft_forward(n);
        Ok(Self {
            config,
            window,
            window_power,
            fft,
        })
    }

    pub fn config(&self) -> WelchConfig {
        self.config
    }

    /// PSD of one channel.
    pub fn channel_psd(&self, x: &[f64], fs_hz: f64) -> Result<Vec<f64>> {
        let seg = self.config.segment_len;
        if x.len() < seg {
            return Err(Error::validation(format!(
                "signal of {} samples is shorter than the {seg}-sample Welch segment",
                x.len()
            )));
        }
        let step = self.config.step();
        let n_segments = (x.len() - seg) / step + 1;
        let n_bins = seg / 2 + 1;
        let scale = 1.0 / (fs_hz * self.window_power * n_segments as f64);

        let mut psd = vec![0.0; n_bins];
        let mut buf = vec![Complex64::new(0.0, 0.0); seg];
        for s in 0..n_segments {
            let chunk = &x[s * step..s * step + seg];
            for ((b, &v), &w) in buf.iter_mut().zip(chunk).zip(&self.window) {
                *b = Complex64::new(v * w, 0.0);
            }
            self.fft.process(&mut buf);
            for (p, c) in psd.iter_mut().zip(&buf) {
                *p += c.norm_sqr();
            }
        }
        for (k, p) in psd.iter_mut().enumerate() {
            let one_sided = if k == 0 || (seg % 2 == 0 && k == seg / 2) {
                1.0
            } else {
                2.0
            };
            *p *= scale * one_sided;
        }
        Ok(psd)
    }

    pub fn psd(&self, channels: &[Vec<f64>], fs_hz: f64) -> Result<PowerSpectrum> {
        let seg = self.config.segment_len;
        let resolution_hz = fs_hz / seg as f64;
        let power = channels
            .iter()
            .map(|c| self.channel_psd(c, fs_hz))
            .collect::<Result<Vec<_>>>()?;
        Ok(PowerSpectrum {
            freqs_hz: (0..=seg / 2).map(|k| k as f64 * resolution_hz).collect(),
            power,
            resolution_hz,
            nyquist_hz: fs_hz / 2.0,
        })
    }
}

/// Welch PSD (periodic Hann, no detrending). The integral of the result over
/// frequency equals the window-weighted mean square of the signal.
pub fn welch_psd(epoch: &Epoch, config: WelchConfig) -> Result<PowerSpectrum> {
    Welch::new(config)?.psd(&epoch.channel_data(), epoch.montage().sampling_rate_hz())
}

/// Clips a band to `[low, Nyquist)`; errors when nothing is left.
pub fn clip_band(band: &BandDefinition, nyquist_hz: f64) -> Result<BandDefinition> {
    if band.low_hz >= nyquist_hz {
        return Err(Error::validation(format!(
            "band {} [{}, {}) Hz lies entirely above Nyquist ({nyquist_hz} Hz)",
            band.name, band.low_hz, band.high_hz
        )));
    }
    Ok(BandDefinition {
        high_hz: band.high_hz.min(nyquist_hz),
        ..*band
    })
}

/// Rectangle-rule integral of the PSD over bins whose centre lies in the
/// clipped band, per channel (µV²).
pub fn band_power(spectrum: &PowerSpectrum, band: &BandDefinition) -> Result<Vec<f64>> {
    let band = clip_band(band, spectrum.nyquist_hz)?;
    let bins: Vec<usize> = spectrum
        .freqs_hz
        .iter()
        .enumerate()
        .filter(|(_, &f)| band.contains(f))
        .map(|(k, _)| k)
        .collect();
    Ok(spectrum
        .power
        .iter()
        .map(|p| bins.iter().map(|&k| p[k]).sum::<f64>() * spectrum.resolution_hz)
        .collect())
}

/// Log₁₀ band power indexed `(channel, band)`, row-major by channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub n_channels: usize,
    pub n_bands: usize,
    pub t_start: f64,
    pub t_end: f64,
}

impl FeatureVector {
    pub fn new(values: Vec<f64>, n_channels: usize, n_bands: usize, t_start: f64, t_end: f64) -> Result<Self> {
        if values.len() != n_channels * n_bands {
            return Err(Error::DimensionMismatch {
                expected: format!("{n_channels}x{n_bands} = {} features", n_channels * n_bands),
                actual: format!("{} features", values.len()),
            });
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::validation(format!("non-finite feature {v}")));
        }
        Ok(Self {
            values,
            n_channels,
            n_bands,
            t_start,
            t_end,
        })
    }

    pub fn get(&self, channel: usize, band: usize) -> f64 {
        self.values[channel * self.n_bands + band]
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Rows of `n_bands` values, one per channel.
    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.values.chunks(self.n_bands).map(<[f64]>::to_vec).collect()
    }
}

/// Filter chain + Welch + band power + log, bound to one montage.
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    montage: Arc<Montage>,
    bands: Vec<BandDefinition>,
    chain: Sos,
    welch: Welch,
}

impl FeatureExtractor {
    pub fn new(
        montage: Arc<Montage>,
        bands: &[BandDefinition],
        filters: &[FilterSpec],
        welch: WelchConfig,
    ) -> Result<Self> {
        if bands.is_empty() {
            return Err(Error::validation("no bands configured"));
        }
        let nyquist = montage.nyquist_hz();
        let bands = bands
            .iter()
            .map(|b| {
                let clipped = clip_band(b, nyquist)?;
                if clipped.high_hz < b.high_hz {
                    log::warn!(
                        "band {} clipped from [{}, {}) to [{}, {}) Hz at Nyquist",
                        b.name,
                        b.low_hz,
                        b.high_hz,
                        clipped.low_hz,
                        clipped.high_hz
                    );
                }
                Ok(clipped)
            })
            .collect::<Result<Vec<_>>>()?;
        let chain = design_chain(filters, montage.sampling_rate_hz())?;
        Ok(Self {
            montage,
            bands,
            chain,
            welch: Welch::new(welch)?,
        })
    }

    pub fn montage(&self) -> &Arc<Montage> {
        &self.montage
    }

    /// Bands after Nyquist clipping.
    pub fn bands(&self) -> &[BandDefinition] {
        &self.bands
    }

    pub fn dim(&self) -> usize {
        self.montage.len() * self.bands.len()
    }

    pub fn spectrum(&self, epoch: &Epoch) -> Result<PowerSpectrum> {
        if epoch.montage().len() != self.montage.len() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} channels", self.montage.len()),
                actual: format!("{} channels", epoch.montage().len()),
            });
        }
        let filtered: Vec<Vec<f64>> = epoch
            .channel_data()
            .iter()
            .map(|c| self.chain.filtfilt(c))
            .collect();
        self.welch.psd(&filtered, self.montage.sampling_rate_hz())
    }

    pub fn extract(&self, epoch: &Epoch) -> Result<FeatureVector> {
        let spectrum = self.spectrum(epoch)?;
        let per_band = self
            .bands
            .iter()
            .map(|b| band_power(&spectrum, b))
            .collect::<Result<Vec<_>>>()?;
        let n_ch = self.montage.len();
        let n_b = self.bands.len();
        let mut values = Vec::with_capacity(n_ch * n_b);
        for c in 0..n_ch {
            for powers in &per_band {
                values.push((powers[c] + LOG_EPSILON).log10());
            }
        }
        FeatureVector::new(values, n_ch, n_b, epoch.t_start(), epoch.t_end())
    }

    /// Extracts every epoch, in parallel when the `parallel` feature is on.
    pub fn extract_batch(&self, epochs: &[Epoch]) -> Result<Vec<FeatureVector>> {
        epochs.par_iter().map(|e| self.extract(e)).collect()
    }
}

/// One-shot feature extraction with default Welch settings.
pub fn extract_features(
    epoch: &Epoch,
    bands: &[BandDefinition],
    filters: &[FilterSpec],
) -> Result<FeatureVector> {
    let montage = Arc::new(epoch.montage().clone());
    FeatureExtractor::new(montage, bands, filters, WelchConfig::default())?.extract(epoch)
}
