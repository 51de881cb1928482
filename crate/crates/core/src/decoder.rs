//! Turns the per-epoch prediction stream into discrete wheelchair commands
//! with a threshold, dwell and refractory gate.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::classifier::Prediction;
use crate::error::{Error, Result};
use crate::signal::CommandLabel;

/// Slack for refractory comparisons on signal-time stamps.
const TIME_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Command {
    Forward,
    Backward,
    TurnLeft,
    TurnRight,
    Stop,
}

impl Command {
    pub const ALL: [Command; 5] = [
        Command::Forward,
        Command::Backward,
        Command::TurnLeft,
        Command::TurnRight,
        Command::Stop,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Command::Forward => "Forward",
            Command::Backward => "Backward",
            Command::TurnLeft => "TurnLeft",
            Command::TurnRight => "TurnRight",
            Command::Stop => "Stop",
        }
    }

    pub fn is_translation(self) -> bool {
        matches!(self, Command::Forward | Command::Backward)
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Command::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::validation(format!("unknown command {s:?}")))
    }
}

/// Label to command table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CommandMapping {
    pub neutral: Command,
    pub push: Command,
    pub pull: Command,
    pub left: Command,
    pub right: Command,
}

impl Default for CommandMapping {
    fn default() -> Self {
        Self {
            neutral: Command::Stop,
            push: Command::Forward,
            pull: Command::Backward,
            left: Command::TurnLeft,
            right: Command::TurnRight,
        }
    }
}

impl CommandMapping {
    pub fn get(&self, label: CommandLabel) -> Command {
        match label {
            CommandLabel::Neutral => self.neutral,
            CommandLabel::Push => self.push,
            CommandLabel::Pull => self.pull,
            CommandLabel::Left => self.left,
            CommandLabel::Right => self.right,
        }
    }
}

/// Default label mapping.
pub fn map_label(label: CommandLabel) -> Command {
    CommandMapping::default().get(label)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecoderConfig {
    pub threshold: f64,
    pub dwell: usize,
    pub refractory_s: f64,
    pub neutral_releases: bool,
    pub mapping: CommandMapping,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            threshold: 0.6,
            dwell: 3,
            refractory_s: 1.0,
            neutral_releases: true,
            mapping: CommandMapping::default(),
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(Error::validation(format!(
                "decoder threshold must be in (0, 1], got {}",
                self.threshold
            )));
        }
        if self.dwell == 0 {
            return Err(Error::validation("decoder dwell must be >= 1"));
        }
        if !(self.refractory_s.is_finite() && self.refractory_s >= 0.0) {
            return Err(Error::validation(format!(
                "decoder refractory_s must be >= 0, got {}",
                self.refractory_s
            )));
        }
        Ok(())
    }
}

/// Who produced a command: a decoded label, the operator, or the service
/// halting motion after a pipeline failure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CommandSource {
    Label(CommandLabel),
    Manual,
    Safety,
}

impl fmt::Display for CommandSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CommandSource::Label(l) => f.write_str(l.as_str()),
            CommandSource::Manual => f.write_str("manual"),
            CommandSource::Safety => f.write_str("safety"),
        }
    }
}

impl Serialize for CommandSource {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CommandSource {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        match s.as_str() {
            "manual" => return Ok(CommandSource::Manual),
            "safety" => return Ok(CommandSource::Safety),
            _ => {}
        }
        s.parse()
            .map(CommandSource::Label)
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommandEvent {
    pub command: Command,
    pub confidence: f64,
    /// Signal time of the end of the epoch that fired the event.
    pub issued_at: f64,
    pub source: CommandSource,
}

impl CommandEvent {
    pub fn manual(command: Command, issued_at: f64) -> Self {
        Self {
            command,
            confidence: 1.0,
            issued_at,
            source: CommandSource::Manual,
        }
    }

    pub fn safety_stop(issued_at: f64) -> Self {
        Self {
            command: Command::Stop,
            confidence: 1.0,
            issued_at,
            source: CommandSource::Safety,
        }
    }
}

/// Observable decoder state, for display.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecoderStatus {
    pub run_label: Option<CommandLabel>,
    pub run_length: usize,
    pub dwell: usize,
    pub latched: Option<Command>,
    /// Seconds of refractory left at the last seen prediction.
    pub refractory_remaining_s: f64,
}

/// The gating automaton. Feed predictions in time order.
#[derive(Debug, Clone)]
pub struct Decoder {
    config: DecoderConfig,
    run_label: Option<CommandLabel>,
    run_length: usize,
    run_start: f64,
    last_span: Option<f64>,
    last_emit: Option<f64>,
    latched: Option<Command>,
    last_t: f64,
}

impl Decoder {
    pub fn new(config: DecoderConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            run_label: None,
            run_length: 0,
            run_start: 0.0,
            last_span: None,
            last_emit: None,
            latched: None,
            last_t: f64::NEG_INFINITY,
        })
    }

    pub fn config(&self) -> &DecoderConfig {
        &self.config
    }

    pub fn latched(&self) -> Option<Command> {
        self.latched
    }

    /// Signal time from the start of the first epoch of the run that fired
    /// the most recent decoded event to its emission.
    pub fn last_dwell_span(&self) -> Option<f64> {
        self.last_span
    }

    pub fn status(&self) -> DecoderStatus {
        let remaining = match self.last_emit {
            Some(e) => (self.config.refractory_s - (self.last_t - e)).max(0.0),
            None => 0.0,
        };
        DecoderStatus {
            run_label: self.run_label,
            run_length: self.run_length,
            dwell: self.config.dwell,
            latched: self.latched,
            refractory_remaining_s: remaining,
        }
    }

    fn in_refractory(&self, t: f64) -> bool {
        self.last_emit
            .is_some_and(|e| t - e < self.config.refractory_s - TIME_TOLERANCE)
    }

    fn update_latch(&mut self, command: Command) {
        self.latched = command.is_translation().then_some(command);
    }

    /// Records a command issued outside the decoder (operator override) so
    /// the latch and refractory follow what the chair is doing.
    pub fn note_external(&mut self, event: &CommandEvent) {
        self.update_latch(event.command);
        self.last_emit = Some(event.issued_at);
        self.run_label = None;
        self.run_length = 0;
    }

    pub fn reset(&mut self) {
        *self = Self::new(self.config).expect("config was validated");
    }

    pub fn push(&mut self, p: &Prediction) -> Option<CommandEvent> {
        let t = p.t_end;
        self.last_t = t;
        let confidence = p.confidence();
        if confidence >= self.config.threshold {
            if self.run_label == Some(p.label) {
                self.run_length += 1;
            } else {
                self.run_label = Some(p.label);
                self.run_length = 1;
                self.run_start = p.t_start;
            }
        } else {
            self.run_label = None;
            self.run_length = 0;
            return None;
        }
        if self.run_length < self.config.dwell || self.in_refractory(t) {
            return None;
        }

        let command = self.config.mapping.get(p.label);
        let emit = match command {
            Command::Stop => self.config.neutral_releases && self.latched.is_some(),
            c if c.is_translation() => self.latched != Some(c),
            _ => true,
        };
        if !emit {
            return None;
        }
        self.update_latch(command);
        self.last_emit = Some(t);
        self.last_span = Some(t - self.run_start);
        self.run_label = None;
        self.run_length = 0;
        Some(CommandEvent {
            command,
            confidence,
            issued_at: t,
            source: CommandSource::Label(p.label),
        })
    }
}

/// Runs a fresh decoder over a whole prediction sequence.
pub fn decode<'a>(
    predictions: impl IntoIterator<Item = &'a Prediction>,
    config: &DecoderConfig,
) -> Result<Vec<CommandEvent>> {
    let mut d = Decoder::new(*config)?;
    Ok(predictions.into_iter().filter_map(|p| d.push(p)).collect())
}
