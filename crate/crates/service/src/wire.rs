//! Line-oriented JSON wire protocol shared by the NDJSON and WebSocket
//! transports and by session logs.
//!
//! Every message is one object `{"type", "seq", "t", "payload"}`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use neurochair_core::classifier::{Cue, CvReport, Prediction};
use neurochair_core::decoder::{Command, CommandEvent};
use neurochair_core::dsp::FeatureVector;
use neurochair_core::signal::{CommandLabel, EegFrame};
use neurochair_core::sim::Telemetry;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MessageType {
    Hello,
    Frame,
    Features,
    Prediction,
    Command,
    Telemetry,
    Cue,
    TrainingControl,
    SessionControl,
    Error,
    Ack,
    Report,
}

impl MessageType {
    pub const ALL: [MessageType; 12] = [
        MessageType::Hello,
        MessageType::Frame,
        MessageType::Features,
        MessageType::Prediction,
        MessageType::Command,
        MessageType::Telemetry,
        MessageType::Cue,
        MessageType::TrainingControl,
        MessageType::SessionControl,
        MessageType::Error,
        MessageType::Ack,
        MessageType::Report,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MessageType::Hello => "hello",
            MessageType::Frame => "frame",
            MessageType::Features => "features",
            MessageType::Prediction => "prediction",
            MessageType::Command => "command",
            MessageType::Telemetry => "telemetry",
            MessageType::Cue => "cue",
            MessageType::TrainingControl => "training_control",
            MessageType::SessionControl => "session_control",
            MessageType::Error => "error",
            MessageType::Ack => "ack",
            MessageType::Report => "report",
        }
    }

    /// High-rate streams a slow consumer may lose (oldest first).
    pub fn is_lossy(self) -> bool {
        matches!(
            self,
            MessageType::Frame | MessageType::Features | MessageType::Prediction | MessageType::Telemetry
        )
    }
}

impl fmt::Display for MessageType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MessageType {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        MessageType::ALL.into_iter().find(|t| t.as_str() == s).ok_or(())
    }
}

impl Serialize for MessageType {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for MessageType {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse()
            .map_err(|_| serde::de::Error::custom(format!("unknown message type {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hello {
    pub v: u32,
    pub service: String,
    pub channels: Vec<String>,
    pub bands: Vec<String>,
    pub sampling_rate_hz: f64,
    pub threshold: f64,
    pub dwell: usize,
    pub model_loaded: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingAction {
    Start,
    Abort,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingControl {
    pub action: TrainingAction,
    /// Trials per class; the service config value when absent.
    #[serde(default)]
    pub trials: Option<usize>,
    #[serde(default)]
    pub trial_duration_s: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionAction {
    /// Operator command, applied immediately with source "manual".
    Override,
    /// Ends the session.
    Shutdown,
    Ping,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionControl {
    pub action: SessionAction,
    #[serde(default)]
    pub command: Option<Command>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorPayload {
    pub reason: String,
    #[serde(default)]
    pub offending_seq: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ack {
    pub ack_type: MessageType,
    pub ack_seq: u64,
    pub status: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportKind {
    TrainingComplete,
    TrainingAborted,
    TrainingFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub kind: ReportKind,
    #[serde(default)]
    pub accuracy: Option<f64>,
    #[serde(default)]
    pub cv: Option<CvReport>,
    #[serde(default)]
    pub trials_per_class: BTreeMap<CommandLabel, usize>,
    pub model_installed: bool,
    #[serde(default)]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Hello(Hello),
    Frame(EegFrame),
    Features(FeatureVector),
    Prediction(Prediction),
    Command(CommandEvent),
    Telemetry(Telemetry),
    Cue(Cue),
    TrainingControl(TrainingControl),
    SessionControl(SessionControl),
    Error(ErrorPayload),
    Ack(Ack),
    Report(Report),
}

impl Payload {
    pub fn kind(&self) -> MessageType {
        match self {
            Payload::Hello(_) => MessageType::Hello,
            Payload::Frame(_) => MessageType::Frame,
            Payload::Features(_) => MessageType::Features,
            Payload::Prediction(_) => MessageType::Prediction,
            Payload::Command(_) => MessageType::Command,
            Payload::Telemetry(_) => MessageType::Telemetry,
            Payload::Cue(_) => MessageType::Cue,
            Payload::TrainingControl(_) => MessageType::TrainingControl,
            Payload::SessionControl(_) => MessageType::SessionControl,
            Payload::Error(_) => MessageType::Error,
            Payload::Ack(_) => MessageType::Ack,
            Payload::Report(_) => MessageType::Report,
        }
    }

    fn to_value(&self) -> Value {
        let v = match self {
            Payload::Hello(p) => serde_json::to_value(p),
            Payload::Frame(p) => serde_json::to_value(p),
            Payload::Features(p) => serde_json::to_value(p),
            Payload::Prediction(p) => serde_json::to_value(p),
            Payload::Command(p) => serde_json::to_value(p),
            Payload::Telemetry(p) => serde_json::to_value(p),
            Payload::Cue(p) => serde_json::to_value(p),
            Payload::TrainingControl(p) => serde_json::to_value(p),
            Payload::SessionControl(p) => serde_json::to_value(p),
            Payload::Error(p) => serde_json::to_value(p),
            Payload::Ack(p) => serde_json::to_value(p),
            Payload::Report(p) => serde_json::to_value(p),
        };
        v.expect("payloads serialize")
    }

    fn from_value(kind: MessageType, v: Value) -> Result<Self, serde_json::Error> {
        use serde_json::from_value as f;
        Ok(match kind {
            MessageType::Hello => Payload::Hello(f(v)?),
            MessageType::Frame => Payload::Frame(f(v)?),
            MessageType::Features => Payload::Features(f(v)?),
            MessageType::Prediction => Payload::Prediction(f(v)?),
            MessageType::Command => Payload::Command(f(v)?),
            MessageType::Telemetry => Payload::Telemetry(f(v)?),
            MessageType::Cue => Payload::Cue(f(v)?),
            MessageType::TrainingControl => Payload::TrainingControl(f(v)?),
            MessageType::SessionControl => Payload::SessionControl(f(v)?),
            MessageType::Error => Payload::Error(f(v)?),
            MessageType::Ack => Payload::Ack(f(v)?),
            MessageType::Report => Payload::Report(f(v)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WireMessage {
    pub seq: u64,
    /// Signal time, seconds.
    pub t: f64,
    pub payload: Payload,
}

impl WireMessage {
    pub fn new(seq: u64, t: f64, payload: Payload) -> Self {
        Self { seq, t, payload }
    }

    pub fn kind(&self) -> MessageType {
        self.payload.kind()
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("protocol error: {reason}")]
pub struct ProtocolError {
    pub reason: String,
    /// Seq of the offending message, when it could be read.
    pub seq: Option<u64>,
}

impl ProtocolError {
    fn new(reason: impl Into<String>, seq: Option<u64>) -> Self {
        Self {
            reason: reason.into(),
            seq,
        }
    }
}

/// One JSON object, without the trailing newline.
pub fn encode(msg: &WireMessage) -> String {
    let v = json!({
        "type": msg.kind().as_str(),
        "seq": msg.seq,
        "t": msg.t,
        "payload": msg.payload.to_value(),
    });
    serde_json::to_string(&v).expect("values serialize")
}

pub fn decode_msg(line: &str) -> Result<WireMessage, ProtocolError> {
    let v: Value = serde_json::from_str(line.trim_end_matches(['\r', '\n']))
        .map_err(|e| ProtocolError::new(format!("malformed JSON: {e}"), None))?;
    let Value::Object(mut obj) = v else {
        return Err(ProtocolError::new("message must be a JSON object", None));
    };
    let seq = obj.get("seq").and_then(Value::as_u64);
    let field = |obj: &mut Map<String, Value>, name: &str| {
        obj.remove(name)
            .ok_or_else(|| ProtocolError::new(format!("missing field {name:?}"), seq))
    };

    let type_name = field(&mut obj, "type")?;
    let Some(type_name) = type_name.as_str() else {
        return Err(ProtocolError::new("field \"type\" must be a string", seq));
    };
    let kind: MessageType = type_name
        .parse()
        .map_err(|_| ProtocolError::new(format!("unknown message type {type_name:?}"), seq))?;
    let seq_v = field(&mut obj, "seq")?;
    let seq = seq_v
        .as_u64()
        .ok_or_else(|| ProtocolError::new("field \"seq\" must be a non-negative integer", None))?;
    let t = field(&mut obj, "t")?
        .as_f64()
        .ok_or_else(|| ProtocolError::new("field \"t\" must be a number", Some(seq)))?;
    let payload = field(&mut obj, "payload")?;
    if !payload.is_object() {
        return Err(ProtocolError::new("field \"payload\" must be an object", Some(seq)));
    }
    let payload = Payload::from_value(kind, payload)
        .map_err(|e| ProtocolError::new(format!("bad {kind} payload: {e}"), Some(seq)))?;
    Ok(WireMessage { seq, t, payload })
}

/// Random valid messages for round-trip and fuzz testing.
#[doc(hidden)]
pub mod gen {
    use super::*;
    use neurochair_core::classifier::CuePhase;
    use neurochair_core::classifier::ModelKind;
    use neurochair_core::decoder::CommandSource;
    use neurochair_core::sim::Mode;
    use rand::Rng;

    fn real(rng: &mut impl Rng) -> f64 {
        match rng.random_range(0..4) {
            0 => 0.0,
            1 => rng.random_range(-1e3..1e3),
            2 => rng.random::<f64>(),
            _ => loop {
                let v = f64::from_bits(rng.random());
                if v.is_finite() {
                    break v;
                }
            },
        }
    }

    fn reals(rng: &mut impl Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| real(rng)).collect()
    }

    fn label(rng: &mut impl Rng) -> CommandLabel {
        CommandLabel::ALL[rng.random_range(0..5)]
    }

    fn command(rng: &mut impl Rng) -> Command {
        Command::ALL[rng.random_range(0..5)]
    }

    fn text(rng: &mut impl Rng) -> String {
        let n = rng.random_range(0..12);
        (0..n)
            .map(|_| ['a', 'Z', ' ', '"', '\\', '\n', 'é', '0', '{', '}'][rng.random_range(0..10)])
            .collect()
    }

    pub fn payload(rng: &mut impl Rng, kind: MessageType) -> Payload {
        match kind {
            MessageType::Hello => Payload::Hello(Hello {
                v: PROTOCOL_VERSION,
                service: text(rng),
                channels: (0..rng.random_range(0..4)).map(|_| text(rng)).collect(),
                bands: (0..rng.random_range(0..4)).map(|_| text(rng)).collect(),
                sampling_rate_hz: real(rng),
                threshold: real(rng),
                dwell: rng.random_range(0..10),
                model_loaded: rng.random(),
            }),
            MessageType::Frame => {
                let n = rng.random_range(0..20);
                Payload::Frame(EegFrame {
                    seq: rng.random(),
                    t: real(rng),
                    values: reals(rng, n),
                })
            }
            MessageType::Features => {
                let c = rng.random_range(1..5);
                let b = rng.random_range(1..6);
                Payload::Features(FeatureVector {
                    values: reals(rng, c * b),
                    n_channels: c,
                    n_bands: b,
                    t_start: real(rng),
                    t_end: real(rng),
                })
            }
            MessageType::Prediction => {
                let mut confidences = [0.0; 5];
                confidences.iter_mut().for_each(|c| *c = rng.random());
                Payload::Prediction(Prediction {
                    confidences,
                    label: label(rng),
                    t_start: real(rng),
                    t_end: real(rng),
                })
            }
            MessageType::Command => Payload::Command(CommandEvent {
                command: command(rng),
                confidence: rng.random(),
                issued_at: real(rng),
                source: if rng.random_bool(0.2) {
                    CommandSource::Manual
                } else {
                    CommandSource::Label(label(rng))
                },
            }),
            MessageType::Telemetry => Payload::Telemetry(Telemetry {
                t: real(rng),
                x: real(rng),
                y: real(rng),
                heading_deg: rng.random_range(0.0..360.0),
                velocity: real(rng),
                mode: match rng.random_range(0..3) {
                    0 => Mode::Idle,
                    1 => Mode::Translating,
                    _ => Mode::Turning {
                        target_deg: real(rng),
                        rate_deg_s: real(rng),
                    },
                },
                collided: rng.random(),
                collisions: rng.random(),
            }),
            MessageType::Cue => Payload::Cue(Cue {
                label: label(rng),
                trial: rng.random_range(0..200),
                phase: if rng.random() { CuePhase::Start } else { CuePhase::Stop },
                t: real(rng),
                duration_s: real(rng),
            }),
            MessageType::TrainingControl => Payload::TrainingControl(TrainingControl {
                action: if rng.random() {
                    TrainingAction::Start
                } else {
                    TrainingAction::Abort
                },
                trials: rng.random::<bool>().then(|| rng.random_range(1..50)),
                trial_duration_s: rng.random::<bool>().then(|| 16.0 * rng.random::<f64>()),
            }),
            MessageType::SessionControl => Payload::SessionControl(SessionControl {
                action: [SessionAction::Override, SessionAction::Shutdown, SessionAction::Ping][rng.random_range(0..3)],
                command: rng.random::<bool>().then(|| command(rng)),
            }),
            MessageType::Error => Payload::Error(ErrorPayload {
                reason: text(rng),
                offending_seq: rng.random::<bool>().then(|| rng.random()),
            }),
            MessageType::Ack => Payload::Ack(Ack {
                ack_type: MessageType::ALL[rng.random_range(0..12)],
                ack_seq: rng.random(),
                status: text(rng),
            }),
            MessageType::Report => {
                let mut confusion = [[0usize; 5]; 5];
                confusion.iter_mut().flatten().for_each(|c| *c = rng.random_range(0..100));
                let cv = rng.random::<bool>().then(|| CvReport {
                    kind: if rng.random() {
                        ModelKind::LinearDiscriminant
                    } else {
                        ModelKind::RandomForest
                    },
                    folds: rng.random_range(2..10),
                    accuracy: rng.random(),
                    fold_accuracy: (0..3).map(|_| rng.random()).collect(),
                    per_class_accuracy: CommandLabel::ALL.iter().map(|&l| (l, rng.random())).collect(),
                    confusion,
                });
                Payload::Report(Report {
                    kind: [
                        ReportKind::TrainingComplete,
                        ReportKind::TrainingAborted,
                        ReportKind::TrainingFailed,
                    ][rng.random_range(0..3)],
                    accuracy: rng.random::<bool>().then(|| rng.random()),
                    cv,
                    trials_per_class: CommandLabel::ALL
                        .iter()
                        .filter(|_| rng.random())
                        .map(|&l| (l, 20))
                        .collect(),
                    model_installed: rng.random(),
                    detail: rng.random::<bool>().then(|| text(rng)),
                })
            }
        }
    }

    pub fn message(rng: &mut impl Rng) -> WireMessage {
        let kind = MessageType::ALL[rng.random_range(0..MessageType::ALL.len())];
        WireMessage {
            seq: rng.random(),
            t: real(rng),
            payload: payload(rng, kind),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn command_line_matches_documented_shape() {
        let line = r#"{"type":"command","seq":42,"t":12.5,"payload":{"command":"Forward","confidence":0.87,"issued_at":12.5,"source":"Push"}}"#;
        let m = decode_msg(line).unwrap();
        assert_eq!(m.seq, 42);
        let Payload::Command(c) = &m.payload else { panic!() };
        assert_eq!(c.command, Command::Forward);
        assert_eq!(decode_msg(&encode(&m)).unwrap(), m);
    }

    #[test]
    fn empty_object_is_an_error() {
        let e = decode_msg("{}").unwrap_err();
        assert!(e.reason.contains("type"));
        assert_eq!(e.seq, None);
    }

    #[test]
    fn unknown_type_keeps_seq() {
        let e = decode_msg(r#"{"type":"warp","seq":9,"t":0,"payload":{}}"#).unwrap_err();
        assert!(e.reason.contains("unknown message type"));
        assert_eq!(e.seq, Some(9));
    }

    #[test]
    fn bad_payload_is_reported() {
        let e = decode_msg(r#"{"type":"command","seq":3,"t":0,"payload":{"command":"Fly"}}"#).unwrap_err();
        assert_eq!(e.seq, Some(3));
        assert!(decode_msg("not json").is_err());
        assert!(decode_msg("[1,2]").is_err());
    }

    #[test]
    fn generated_messages_round_trip() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..2000 {
            let m = gen::message(&mut rng);
            let line = encode(&m);
            assert!(!line.contains('\n'));
            assert_eq!(decode_msg(&line).unwrap(), m, "{line}");
        }
    }
}
