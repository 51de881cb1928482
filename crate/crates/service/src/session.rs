//! Session logs: every published message as one JSON line, and
//! deterministic replay of a log's frames through a fresh pipeline.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::thread::JoinHandle;

use neurochair_core::classifier::TrainedModel;
use neurochair_core::decoder::{CommandEvent, CommandSource};
use neurochair_core::signal::EegFrame;
use serde::Serialize;

use crate::config::ServiceConfig;
use crate::error::{ServiceError, ServiceResult};
use crate::hub::{Hub, SubscriberOptions};
use crate::pipeline::{RunStats, Service};
use crate::wire::{decode_msg, encode, Payload, WireMessage};

/// Lossless hub subscriber writing a JSONL session log.
pub struct Recorder {
    path: PathBuf,
    thread: JoinHandle<std::io::Result<u64>>,
}

impl Recorder {
    pub fn start(hub: &Arc<Hub>, path: &Path) -> ServiceResult<Self> {
        let file = File::create(path).map_err(|e| ServiceError::io(path, e))?;
        let sub = hub.subscribe(SubscriberOptions::recorder());
        let thread = std::thread::spawn(move || {
            let mut out = BufWriter::new(file);
            let mut n = 0;
            while let Some(msg) = sub.recv() {
                out.write_all(encode(&msg).as_bytes())?;
                out.write_all(b"\n")?;
                n += 1;
            }
            out.flush()?;
            out.into_inner().map_err(|e| e.into_error())?.sync_all()?;
            Ok(n)
        });
        Ok(Self {
            path: path.to_owned(),
            thread,
        })
    }

    /// Waits for the log to drain; the hub must be closed first.
    pub fn finish(self) -> ServiceResult<u64> {
        self.thread
            .join()
            .map_err(|_| ServiceError::Pipeline("recorder panicked".into()))?
            .map_err(|e| ServiceError::io(&self.path, e))
    }
}

/// Reads a session log; any undecodable line aborts with its line number.
pub fn read_log(path: &Path) -> ServiceResult<Vec<WireMessage>> {
    let file = File::open(path).map_err(|e| ServiceError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| ServiceError::Replay {
            line: i + 1,
            reason: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let msg = decode_msg(&line).map_err(|e| ServiceError::Replay {
            line: i + 1,
            reason: e.reason,
        })?;
        out.push(msg);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplayReport {
    pub frames: usize,
    /// Decoder-issued commands found in the log.
    pub recorded: Vec<CommandEvent>,
    /// Decoder-issued commands from re-running the logged frames.
    pub replayed: Vec<CommandEvent>,
    pub matches: bool,
    pub stats: RunStats,
}

fn decoded(events: impl IntoIterator<Item = CommandEvent>) -> Vec<CommandEvent> {
    events
        .into_iter()
        .filter(|e| matches!(e.source, CommandSource::Label(_)))
        .collect()
}

/// Re-runs a log's frames through a fresh pipeline with the given model and
/// compares the decoded commands. Manual and safety commands are not part of
/// the comparison.
pub fn replay_session(path: &Path, config: &ServiceConfig, model: Option<TrainedModel>) -> ServiceResult<ReplayReport> {
    let log = read_log(path)?;
    let mut frames: Vec<EegFrame> = Vec::new();
    let mut recorded = Vec::new();
    for msg in log {
        match msg.payload {
            Payload::Frame(f) => frames.push(f),
            Payload::Command(c) => recorded.push(c),
            _ => {}
        }
    }
    let recorded = decoded(recorded);
    let mut config = config.clone();
    config.source.realtime_factor = None;
    config.record = None;
    config.listen = None;
    config.ws_listen = None;
    let n = frames.len();
    let stats = Service::start_with_frames(config, model, frames)?.wait()?;
    let replayed = decoded(stats.commands.iter().copied());
    Ok(ReplayReport {
        frames: n,
        matches: recorded == replayed,
        recorded,
        replayed,
        stats,
    })
}
