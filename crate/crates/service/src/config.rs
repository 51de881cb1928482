//! Service configuration: one JSON document, every field defaulted, with
//! `dotted.path=value` overrides and cross-field validation.

use std::path::{Path, PathBuf};

use neurochair_core::classifier::{standard_protocol, validate_protocol, FitConfig, ProtocolEntry};
use neurochair_core::decoder::DecoderConfig;
use neurochair_core::dsp::{default_filter_chain, EpochConfig, FilterSpec, WelchConfig};
use neurochair_core::signal::{default_bands, default_montage, BandDefinition, Montage};
use neurochair_core::sim::{ChairParams, World};
use neurochair_core::synth::ScenarioSpec;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{ServiceError, ServiceResult};

pub const CONFIG_ENV: &str = "NEUROCHAIR_CONFIG";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Synth,
    Replay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceConfig {
    pub kind: SourceKind,
    pub scenario: ScenarioSpec,
    /// Synth length; the script is cycled or cut to fit. `None` plays the
    /// script once, or forever when `endless` is set.
    pub duration_s: Option<f64>,
    pub endless: bool,
    /// CSV recording for `replay` sources.
    pub path: Option<PathBuf>,
    /// Playback speed relative to real time; `None` runs as fast as possible.
    pub realtime_factor: Option<f64>,
}

impl Default for SourceConfig {
    fn default() -> Self {
        Self {
            kind: SourceKind::Synth,
            scenario: ScenarioSpec::calibration(0),
            duration_s: None,
            endless: false,
            path: None,
            realtime_factor: Some(1.0),
        }
    }
}

impl SourceConfig {
    /// The synth scenario after applying `duration_s`.
    pub fn effective_scenario(&self) -> neurochair_core::Result<ScenarioSpec> {
        match self.duration_s {
            Some(d) => self.scenario.fitted_to(d),
            None => Ok(self.scenario.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub trials: usize,
    pub trial_duration_s: f64,
    pub cv_folds: usize,
    /// Minimum cross-validated accuracy for a training run to succeed.
    pub accuracy_floor: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            trials: 20,
            trial_duration_s: 8.0,
            cv_folds: 5,
            accuracy_floor: 0.85,
        }
    }
}

impl TrainingConfig {
    pub fn protocol(&self) -> Vec<ProtocolEntry> {
        standard_protocol(self.trials, self.trial_duration_s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub montage: Montage,
    pub bands: Vec<BandDefinition>,
    pub filters: Vec<FilterSpec>,
    pub epoch: EpochConfig,
    pub welch: WelchConfig,
    pub classifier: FitConfig,
    pub training: TrainingConfig,
    pub decoder: DecoderConfig,
    pub chair: ChairParams,
    /// World file; the default empty room when absent.
    pub world: Option<PathBuf>,
    pub source: SourceConfig,
    /// NDJSON listener address.
    pub listen: Option<String>,
    /// WebSocket listener address.
    pub ws_listen: Option<String>,
    pub telemetry_rate_hz: f64,
    /// Also stream raw frames to consoles.
    pub stream_frames: bool,
    /// Session log path (JSONL).
    pub record: Option<PathBuf>,
    /// Trained model to load at startup.
    pub model: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            montage: default_montage(),
            bands: default_bands(),
            filters: default_filter_chain(None),
            epoch: EpochConfig::default(),
            welch: WelchConfig::default(),
            classifier: FitConfig::default(),
            training: TrainingConfig::default(),
            decoder: DecoderConfig::default(),
            chair: ChairParams::default(),
            world: None,
            source: SourceConfig::default(),
            listen: Some("127.0.0.1:7878".into()),
            ws_listen: Some("127.0.0.1:7879".into()),
            telemetry_rate_hz: 20.0,
            stream_frames: false,
            record: None,
            model: None,
        }
    }
}

fn invalid(msg: impl Into<String>) -> ServiceError {
    ServiceError::Config(msg.into())
}

impl ServiceConfig {
    pub fn validate(&self) -> ServiceResult<()> {
        let fs = self.montage.sampling_rate_hz();
        let nyquist = self.montage.nyquist_hz();
        if self.bands.is_empty() {
            return Err(invalid("at least one band is required"));
        }
        for b in &self.bands {
            if b.low_hz >= nyquist {
                return Err(invalid(format!(
                    "band {} starts at {} Hz, at or above Nyquist ({nyquist} Hz)",
                    b.name, b.low_hz
                )));
            }
        }
        for f in &self.filters {
            f.validate(fs)?;
        }
        self.epoch.validate()?;
        let (epoch_len, _) = self.epoch.samples(fs)?;
        self.welch.validate()?;
        if self.welch.segment_len > epoch_len {
            return Err(invalid(format!(
                "welch segment ({}) longer than an epoch ({epoch_len} samples)",
                self.welch.segment_len
            )));
        }
        self.classifier.validate()?;

        let t = &self.training;
        if t.cv_folds < 2 {
            return Err(invalid(format!("training.cv_folds must be >= 2, got {}", t.cv_folds)));
        }
        if !(0.0..=1.0).contains(&t.accuracy_floor) {
            return Err(invalid(format!(
                "training.accuracy_floor must be in [0, 1], got {}",
                t.accuracy_floor
            )));
        }
        if t.trial_duration_s < self.epoch.epoch_len_s {
            return Err(invalid("training trials must be at least one epoch long"));
        }
        validate_protocol(&t.protocol())?;

        self.decoder.validate()?;
        self.chair.validate()?;
        self.load_world()?;
        if !(self.telemetry_rate_hz.is_finite() && self.telemetry_rate_hz > 0.0) {
            return Err(invalid(format!("telemetry_rate_hz must be > 0, got {}", self.telemetry_rate_hz)));
        }

        let s = &self.source;
        if let Some(r) = s.realtime_factor {
            if !(r.is_finite() && r > 0.0) {
                return Err(invalid(format!("source.realtime_factor must be > 0, got {r}")));
            }
        }
        match s.kind {
            SourceKind::Synth => {
                if let Some(d) = s.duration_s {
                    if !(d.is_finite() && d > 0.0) {
                        return Err(invalid(format!("source.duration_s must be > 0, got {d}")));
                    }
                }
                s.scenario.validate(&self.montage)?;
            }
            SourceKind::Replay => {
                if s.path.is_none() {
                    return Err(invalid("replay source needs source.path"));
                }
            }
        }
        Ok(())
    }

    pub fn load_world(&self) -> ServiceResult<World> {
        let world = match &self.world {
            Some(p) => World::load(p)?,
            None => World::default(),
        };
        world.validate()?;
        Ok(world)
    }

    /// Sets the synth and classifier seeds.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.source.scenario.seed = seed;
        self.classifier.seed = seed;
        self
    }

    pub fn from_json(text: &str) -> ServiceResult<Self> {
        Self::from_value(serde_json::from_str(text).map_err(|e| invalid(e.to_string()))?, &[])
    }

    /// Builds a config from a JSON document plus `key=value` overrides on
    /// dotted paths, then validates it.
    pub fn from_value(doc: Value, overrides: &[String]) -> ServiceResult<Self> {
        let partial: ServiceConfig = serde_json::from_value(doc).map_err(|e| invalid(e.to_string()))?;
        let mut full = serde_json::to_value(&partial).expect("config serializes");
        for o in overrides {
            apply_override(&mut full, o)?;
        }
        let config: ServiceConfig = serde_json::from_value(full).map_err(|e| invalid(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Loads `path` (or the defaults when `None`) and applies overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> ServiceResult<Self> {
        let doc = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| ServiceError::io(p, e))?;
                serde_json::from_str(&text)
                    .map_err(|e| invalid(format!("{}: {e}", p.display())))?
            }
            None => Value::Object(Default::default()),
        };
        Self::from_value(doc, overrides)
    }
}

/// Applies one `a.b.c=value` override. The value is parsed as JSON when
/// possible and taken as a string otherwise. The path must already exist.
pub fn apply_override(doc: &mut Value, assignment: &str) -> ServiceResult<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| invalid(format!("override {assignment:?} is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_owned()));
    let mut node = doc;
    for key in path.split('.') {
        node = match node {
            Value::Object(map) => map.get_mut(key),
            Value::Array(items) => key.parse::<usize>().ok().and_then(|i| items.get_mut(i)),
            _ => None,
        }
        .ok_or_else(|| invalid(format!("unknown config key {path:?}")))?;
    }
    *node = value;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = ServiceConfig::default();
        c.validate().unwrap();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(ServiceConfig::from_json(&text).unwrap(), c);
        assert_eq!(ServiceConfig::from_json("{}").unwrap(), c);
    }

    #[test]
    fn overrides_set_nested_values() {
        let c = ServiceConfig::from_value(
            serde_json::json!({}),
            &[
                "decoder.threshold=0.7".into(),
                "source.scenario.seed=9".into(),
                "listen=0.0.0.0:9000".into(),
                "bands.0.high_hz=3".into(),
            ],
        )
        .unwrap();
        assert_eq!(c.decoder.threshold, 0.7);
        assert_eq!(c.source.scenario.seed, 9);
        assert_eq!(c.listen.as_deref(), Some("0.0.0.0:9000"));
        assert_eq!(c.bands[0].high_hz, 3.0);
    }

    #[test]
    fn unknown_override_key_is_rejected() {
        let e = ServiceConfig::from_value(serde_json::json!({}), &["decoder.thresh=0.7".into()]).unwrap_err();
        assert!(e.to_string().contains("decoder.thresh"));
        assert!(e.is_validation());
    }

    #[test]
    fn cross_field_validation() {
        let bad = |o: &str| ServiceConfig::from_value(serde_json::json!({}), &[o.into()]).is_err();
        assert!(bad("decoder.threshold=0"));
        assert!(bad("decoder.dwell=0"));
        assert!(bad("bands.4.low_hz=64"));
        assert!(bad("welch.segment_len=256"));
        assert!(bad("training.cv_folds=1"));
        assert!(bad("source.duration_s=0"));
        assert!(bad("telemetry_rate_hz=0"));
        assert!(bad("chair.speed_mps=-1"));
        assert!(!bad("source.duration_s=60"));
    }

    #[test]
    fn unknown_top_level_field_is_rejected() {
        assert!(ServiceConfig::from_json(r#"{"decodr":{}}"#).is_err());
    }
}
