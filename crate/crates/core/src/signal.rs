//! Shared domain types: electrode montage, rhythm bands, frames, epochs and
//! the mental-command labels.

use std::collections::HashSet;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scalp hemisphere under the 10–20 naming convention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Hemisphere {
    Left,
    Right,
    Midline,
}

/// Classifies a 10–20 label: an even trailing number is right, odd is left,
/// a trailing `z` is midline. Labels are letters followed by either a number
/// or `z` (case-insensitive), e.g. `Fp1`, `F4`, `Cz`, `FZ`, `CP10`.
pub fn classify_hemisphere(name: &str) -> Result<Hemisphere> {
    let malformed = || Error::validation(format!("malformed 10-20 channel label {name:?}"));

    let letters_end = name
        .find(|c: char| !c.is_ascii_alphabetic())
        .unwrap_or(name.len());
    let (letters, digits) = name.split_at(letters_end);
    if letters.is_empty() {
        return Err(malformed());
    }

    if digits.is_empty() {
        // No number: the label must end in a midline `z` after a region prefix.
        let mut chars = letters.chars();
        let last = chars.next_back().ok_or_else(malformed)?;
        if (last == 'z' || last == 'Z') && chars.as_str().len() >= 1 {
            return Ok(Hemisphere::Midline);
        }
        return Err(malformed());
    }

    if !digits.bytes().all(|b| b.is_ascii_digit()) || digits.starts_with('0') {
        return Err(malformed());
    }
    let last = digits.as_bytes()[digits.len() - 1] - b'0';
    Ok(if last % 2 == 0 {
        Hemisphere::Right
    } else {
        Hemisphere::Left
    })
}

/// One electrode. The hemisphere is always derived from the name.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ChannelDescriptor {
    name: String,
    hemisphere: Hemisphere,
}

impl ChannelDescriptor {
    pub fn new(name: impl Into<String>) -> Result<Self> {
        let name = name.into();
        let hemisphere = classify_hemisphere(&name)?;
        Ok(Self { name, hemisphere })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn hemisphere(&self) -> Hemisphere {
        self.hemisphere
    }
}

impl TryFrom<String> for ChannelDescriptor {
    type Error = Error;
    fn try_from(name: String) -> Result<Self> {
        Self::new(name)
    }
}

impl From<ChannelDescriptor> for String {
    fn from(c: ChannelDescriptor) -> String {
        c.name
    }
}

/// Ordered electrode set plus the sampling rate shared by all channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MontageRepr")]
pub struct Montage {
    channels: Vec<ChannelDescriptor>,
    sampling_rate_hz: f64,
}

#[derive(Deserialize)]
struct MontageRepr {
    channels: Vec<ChannelDescriptor>,
    sampling_rate_hz: f64,
}

impl TryFrom<MontageRepr> for Montage {
    type Error = Error;
    fn try_from(r: MontageRepr) -> Result<Self> {
        Montage::new(r.channels, r.sampling_rate_hz)
    }
}

/// Electrode names of the 14-channel default montage.
pub const DEFAULT_CHANNELS: [&str; 14] = [
    "Fp1", "Fp2", "F7", "F3", "F4", "F8", "T3", "C3", "C4", "T4", "P3", "P4", "O1", "O2",
];

/// Default sampling rate in Hz.
pub const DEFAULT_SAMPLING_RATE_HZ: f64 = 128.0;

impl Montage {
    pub fn new(channels: Vec<ChannelDescriptor>, sampling_rate_hz: f64) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::validation("montage has no channels"));
        }
        if !(sampling_rate_hz.is_finite() && sampling_rate_hz > 0.0) {
            return Err(Error::validation(format!(
                "sampling rate must be positive, got {sampling_rate_hz}"
            )));
        }
        let mut seen = HashSet::new();
        for c in &channels {
            if !seen.insert(c.name()) {
                return Err(Error::validation(format!(
                    "duplicate channel name {:?}",
                    c.name()
                )));
            }
        }
        Ok(Self {
            channels,
            sampling_rate_hz,
        })
    }

    pub fn from_names<S: AsRef<str>>(names: &[S], sampling_rate_hz: f64) -> Result<Self> {
        let channels = names
            .iter()
            .map(|n| ChannelDescriptor::new(n.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(channels, sampling_rate_hz)
    }

    pub fn channels(&self) -> &[ChannelDescriptor] {
        &self.channels
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    pub fn sampling_rate_hz(&self) -> f64 {
        self.sampling_rate_hz
    }

    pub fn nyquist_hz(&self) -> f64 {
        self.sampling_rate_hz / 2.0
    }

    pub fn channel_index(&self, name: &str) -> Option<usize> {
        self.channels.iter().position(|c| c.name() == name)
    }

    pub fn names(&self) -> Vec<String> {
        self.channels.iter().map(|c| c.name().to_owned()).collect()
    }
}

/// The 14-electrode montage at 128 Hz.
pub fn default_montage() -> Montage {
    Montage::from_names(&DEFAULT_CHANNELS, DEFAULT_SAMPLING_RATE_HZ)
        .expect("default montage is valid")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BandName {
    Delta,
    Theta,
    Alpha,
    Beta,
    Gamma,
}

impl BandName {
    pub const ALL: [BandName; 5] = [
        BandName::Delta,
        BandName::Theta,
        BandName::Alpha,
        BandName::Beta,
        BandName::Gamma,
    ];
}

impl fmt::Display for BandName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Half-open frequency range `[low_hz, high_hz)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BandRepr")]
pub struct BandDefinition {
    pub name: BandName,
    pub low_hz: f64,
    pub high_hz: f64,
}

#[derive(Deserialize)]
struct BandRepr {
    name: BandName,
    low_hz: f64,
    high_hz: f64,
}

impl TryFrom<BandRepr> for BandDefinition {
    type Error = Error;
    fn try_from(r: BandRepr) -> Result<Self> {
        BandDefinition::new(r.name, r.low_hz, r.high_hz)
    }
}

impl BandDefinition {
    pub fn new(name: BandName, low_hz: f64, high_hz: f64) -> Result<Self> {
        if !(low_hz.is_finite() && high_hz.is_finite() && 0.0 <= low_hz && low_hz < high_hz) {
            return Err(Error::validation(format!(
                "band {name} needs 0 <= low < high, got [{low_hz}, {high_hz})"
            )));
        }
        Ok(Self {
            name,
            low_hz,
            high_hz,
        })
    }

    pub fn contains(&self, f_hz: f64) -> bool {
        self.low_hz <= f_hz && f_hz < self.high_hz
    }
}

/// Delta [0,4), Theta [4,8), Alpha [8,13), Beta [13,30), Gamma [30,100) Hz.
pub fn default_bands() -> Vec<BandDefinition> {
    const EDGES: [f64; 6] = [0.0, 4.0, 8.0, 13.0, 30.0, 100.0];
    BandName::ALL
        .iter()
        .enumerate()
        .map(|(i, &name)| BandDefinition {
            name,
            low_hz: EDGES[i],
            high_hz: EDGES[i + 1],
        })
        .collect()
}

/// One multichannel sample, values in microvolts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EegFrame {
    pub seq: u64,
    pub t: f64,
    pub values: Vec<f64>,
}

/// Checks frames entering a stream: width matches the montage, `seq`
/// strictly increases, `t` never decreases.
#[derive(Debug, Clone)]
pub struct FrameValidator {
    width: usize,
    last: Option<(u64, f64)>,
}

impl FrameValidator {
    pub fn new(montage: &Montage) -> Self {
        Self {
            width: montage.len(),
            last: None,
        }
    }

    pub fn check(&mut self, frame: &EegFrame) -> Result<()> {
        if frame.values.len() != self.width {
            return Err(Error::DimensionMismatch {
                expected: format!("{} channel values", self.width),
                actual: format!("{} values in frame {}", frame.values.len(), frame.seq),
            });
        }
        if let Some((seq, t)) = self.last {
            if frame.seq <= seq {
                return Err(Error::validation(format!(
                    "frame seq {} does not follow {seq}",
                    frame.seq
                )));
            }
            if frame.t < t {
                return Err(Error::validation(format!(
                    "frame {} timestamp {} precedes {t}",
                    frame.seq, frame.t
                )));
            }
        }
        self.last = Some((frame.seq, frame.t));
        Ok(())
    }
}

/// Contiguous run of frames (no seq gaps) used as one feature window.
#[derive(Debug, Clone)]
pub struct Epoch {
    montage: Arc<Montage>,
    frames: Vec<EegFrame>,
}

impl Epoch {
    pub fn new(montage: Arc<Montage>, frames: Vec<EegFrame>) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::validation("epoch has no frames"));
        }
        for w in frames.windows(2) {
            if w[1].seq != w[0].seq + 1 {
                return Err(Error::validation(format!(
                    "seq gap inside epoch between {} and {}",
                    w[0].seq, w[1].seq
                )));
            }
        }
        if let Some(f) = frames.iter().find(|f| f.values.len() != montage.len()) {
            return Err(Error::DimensionMismatch {
                expected: format!("{} channel values", montage.len()),
                actual: format!("{} values in frame {}", f.values.len(), f.seq),
            });
        }
        Ok(Self { montage, frames })
    }

    /// Builds an epoch from channel-major sample arrays, `seq` from 0 and
    /// `t = seq / fs`.
    pub fn from_channels(montage: Arc<Montage>, channels: &[Vec<f64>]) -> Result<Self> {
        if channels.len() != montage.len() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} channels", montage.len()),
                actual: format!("{} channels", channels.len()),
            });
        }
        let n = channels[0].len();
        if channels.iter().any(|c| c.len() != n) {
            return Err(Error::validation("channels have unequal lengths"));
        }
        let fs = montage.sampling_rate_hz();
        let frames = (0..n)
            .map(|i| EegFrame {
                seq: i as u64,
                t: i as f64 / fs,
                values: channels.iter().map(|c| c[i]).collect(),
            })
            .collect();
        Self::new(montage, frames)
    }

    pub fn montage(&self) -> &Montage {
        &self.montage
    }

    pub fn frames(&self) -> &[EegFrame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.frames.len() as f64 / self.montage.sampling_rate_hz()
    }

    pub fn t_start(&self) -> f64 {
        self.frames[0].t
    }

    /// End of the epoch: one sample period after the last frame.
    pub fn t_end(&self) -> f64 {
        self.frames[self.frames.len() - 1].t + 1.0 / self.montage.sampling_rate_hz()
    }

    pub fn channel(&self, index: usize) -> Vec<f64> {
        self.frames.iter().map(|f| f.values[index]).collect()
    }

    pub fn channel_data(&self) -> Vec<Vec<f64>> {
        (0..self.montage.len()).map(|c| self.channel(c)).collect()
    }

    pub fn scaled(&self, factor: f64) -> Epoch {
        let frames = self
            .frames
            .iter()
            .map(|f| EegFrame {
                values: f.values.iter().map(|v| v * factor).collect(),
                ..f.clone()
            })
            .collect();
        Epoch {
            montage: Arc::clone(&self.montage),
            frames,
        }
    }
}

/// Mental-command training classes. `Neutral` is always class index 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CommandLabel {
    Neutral,
    Push,
    Pull,
    Left,
    Right,
}

impl CommandLabel {
    pub const ALL: [CommandLabel; 5] = [
        CommandLabel::Neutral,
        CommandLabel::Push,
        CommandLabel::Pull,
        CommandLabel::Left,
        CommandLabel::Right,
    ];
    pub const COUNT: usize = 5;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CommandLabel::Neutral => "Neutral",
            CommandLabel::Push => "Push",
            CommandLabel::Pull => "Pull",
            CommandLabel::Left => "Left",
            CommandLabel::Right => "Right",
        }
    }
}

impl fmt::Display for CommandLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for CommandLabel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|l| l.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::validation(format!("unknown command label {s:?}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_montage_has_fourteen_channels() {
        let m = default_montage();
        assert_eq!(m.len(), 14);
        assert_eq!(m.sampling_rate_hz(), 128.0);
        let o2 = &m.channels()[m.channel_index("O2").unwrap()];
        assert_eq!(o2.hemisphere(), Hemisphere::Right);
        let fp1 = &m.channels()[m.channel_index("Fp1").unwrap()];
        assert_eq!(fp1.hemisphere(), Hemisphere::Left);
    }

    #[test]
    fn hemisphere_examples() {
        assert_eq!(classify_hemisphere("P4").unwrap(), Hemisphere::Right);
        assert_eq!(classify_hemisphere("Cz").unwrap(), Hemisphere::Midline);
        assert_eq!(classify_hemisphere("F7").unwrap(), Hemisphere::Left);
    }

    #[test]
    fn hemisphere_is_total_over_named_positions() {
        let right = ["Fp2", "F4", "F8", "C4", "T4", "T6", "P4", "O2"];
        let left = ["Fp1", "F3", "F7", "C3", "T3", "T5", "P3", "O1"];
        let mid = ["FZ", "CZ", "PZ", "Fz", "Cz", "Pz"];
        for n in right {
            assert_eq!(classify_hemisphere(n).unwrap(), Hemisphere::Right, "{n}");
        }
        for n in left {
            assert_eq!(classify_hemisphere(n).unwrap(), Hemisphere::Left, "{n}");
        }
        for n in mid {
            assert_eq!(classify_hemisphere(n).unwrap(), Hemisphere::Midline, "{n}");
        }
        assert_eq!(classify_hemisphere("CP10").unwrap(), Hemisphere::Right);
    }

    #[test]
    fn malformed_labels_are_rejected_by_name() {
        for bad in ["", "4", "F", "z", "F3x", "F03", "Fp-1", "Ö2"] {
            let err = classify_hemisphere(bad).unwrap_err().to_string();
            assert!(err.contains(&format!("{bad:?}")), "{err}");
        }
    }

    #[test]
    fn default_bands_partition_zero_to_hundred() {
        let bands = default_bands();
        assert_eq!(bands.len(), 5);
        assert_eq!(bands[0].low_hz, 0.0);
        assert_eq!(bands[4].high_hz, 100.0);
        for w in bands.windows(2) {
            assert_eq!(w[0].high_hz, w[1].low_hz);
        }
        for (i, a) in bands.iter().enumerate() {
            for b in &bands[i + 1..] {
                assert!(a.high_hz <= b.low_hz || b.high_hz <= a.low_hz);
            }
        }
        let alpha = bands.iter().find(|b| b.name == BandName::Alpha).unwrap();
        assert_eq!((alpha.low_hz, alpha.high_hz), (8.0, 13.0));
        let beta = bands.iter().find(|b| b.name == BandName::Beta).unwrap();
        assert_eq!((beta.low_hz, beta.high_hz), (13.0, 30.0));
    }

    #[test]
    fn montage_rejects_duplicates_and_bad_rate() {
        assert!(Montage::from_names(&["F3", "F3"], 128.0).is_err());
        assert!(Montage::from_names(&["F3"], 0.0).is_err());
        assert!(Montage::from_names::<&str>(&[], 128.0).is_err());
    }

    #[test]
    fn montage_json_rederives_hemisphere() {
        let m = default_montage();
        let json = serde_json::to_string(&m).unwrap();
        assert!(json.contains("\"Fp1\""));
        let back: Montage = serde_json::from_str(&json).unwrap();
        assert_eq!(back, m);
        let bad = r#"{"channels":["F3","Q"],"sampling_rate_hz":128}"#;
        assert!(serde_json::from_str::<Montage>(bad).is_err());
    }

    #[test]
    fn frame_validator_enforces_width_and_order() {
        let m = Montage::from_names(&["F3", "F4"], 128.0).unwrap();
        let mut v = FrameValidator::new(&m);
        let f = |seq, t, n| EegFrame {
            seq,
            t,
            values: vec![0.0; n],
        };
        v.check(&f(0, 0.0, 2)).unwrap();
        assert!(v.check(&f(1, 0.1, 3)).is_err());
        assert!(v.check(&f(0, 0.1, 2)).is_err());
        assert!(v.check(&f(2, -1.0, 2)).is_err());
        v.check(&f(5, 0.1, 2)).unwrap();
    }

    #[test]
    fn epoch_rejects_gaps() {
        let m = Arc::new(Montage::from_names(&["F3"], 128.0).unwrap());
        let frames = vec![
            EegFrame {
                seq: 0,
                t: 0.0,
                values: vec![1.0],
            },
            EegFrame {
                seq: 2,
                t: 2.0 / 128.0,
                values: vec![1.0],
            },
        ];
        assert!(Epoch::new(m, frames).is_err());
    }

    #[test]
    fn neutral_is_class_zero() {
        assert_eq!(CommandLabel::Neutral.index(), 0);
        assert_eq!(CommandLabel::ALL.len(), CommandLabel::COUNT);
        for (i, l) in CommandLabel::ALL.iter().enumerate() {
            assert_eq!(l.index(), i);
            assert_eq!(l.as_str().parse::<CommandLabel>().unwrap(), *l);
        }
    }
}
