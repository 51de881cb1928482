//! Offline benchmark: runs a scenario unpaced through the full pipeline and
//! scores decoded commands against the scenario's ground truth.

use std::time::Instant;

use neurochair_core::classifier::TrainedModel;
use neurochair_core::decoder::{CommandEvent, CommandMapping, CommandSource};
use neurochair_core::synth::{intent_at, IntentInterval};
use serde::{Deserialize, Serialize};

use crate::config::ServiceConfig;
use crate::error::ServiceResult;
use crate::pipeline::{RunStats, Service};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub count: usize,
    pub mean_s: f64,
    pub p50_s: f64,
    pub p95_s: f64,
    pub max_s: f64,
}

impl LatencySummary {
    pub fn of(samples: &[f64]) -> Self {
        if samples.is_empty() {
            return Self::default();
        }
        let mut v = samples.to_vec();
        v.sort_by(f64::total_cmp);
        let pct = |p: f64| v[((p * (v.len() - 1) as f64).round() as usize).min(v.len() - 1)];
        Self {
            count: v.len(),
            mean_s: v.iter().sum::<f64>() / v.len() as f64,
            p50_s: pct(0.5),
            p95_s: pct(0.95),
            max_s: v[v.len() - 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub signal_duration_s: f64,
    pub wall_s: f64,
    /// Signal seconds processed per wall second.
    pub throughput_x_realtime: f64,
    pub frames: u64,
    pub epochs: u64,
    pub predictions: u64,
    pub commands: usize,
    /// Fraction of decoded commands matching the intent active when issued.
    pub command_accuracy: Option<f64>,
    /// Dwell span of the firing run plus processing time.
    pub latency: LatencySummary,
    /// Latency implied by the epoch and dwell settings alone.
    pub analytic_latency_s: f64,
    pub processing: LatencySummary,
    /// Intent onset to the first matching command within that interval.
    pub onset_latency: LatencySummary,
    pub intervals_detected: usize,
    pub intervals: usize,
    pub collisions: u64,
}

/// Latency of a command fired by `dwell` consecutive epochs.
pub fn analytic_latency_s(config: &ServiceConfig) -> f64 {
    config.epoch.epoch_len_s + (config.decoder.dwell.saturating_sub(1)) as f64 * config.epoch.hop_s
}

pub fn score(
    stats: &RunStats,
    intervals: &[IntentInterval],
    mapping: &CommandMapping,
    config: &ServiceConfig,
    wall_s: f64,
) -> BenchReport {
    let decoded: Vec<&CommandEvent> = stats
        .commands
        .iter()
        .filter(|e| matches!(e.source, CommandSource::Label(_)))
        .collect();
    let judged: Vec<bool> = decoded
        .iter()
        .filter_map(|e| intent_at(intervals, e.issued_at).map(|iv| mapping.get(iv.label) == e.command))
        .collect();
    let command_accuracy =
        (!judged.is_empty()).then(|| judged.iter().filter(|&&ok| ok).count() as f64 / judged.len() as f64);

    let onsets: Vec<f64> = intervals
        .iter()
        .filter_map(|iv| {
            let want = mapping.get(iv.label);
            decoded
                .iter()
                .find(|e| e.command == want && iv.contains_t(e.issued_at))
                .map(|e| e.issued_at - iv.t_start)
        })
        .collect();

    BenchReport {
        signal_duration_s: stats.signal_duration_s,
        wall_s,
        throughput_x_realtime: if wall_s > 0.0 { stats.signal_duration_s / wall_s } else { 0.0 },
        frames: stats.frames,
        epochs: stats.epochs,
        predictions: stats.predictions,
        commands: decoded.len(),
        command_accuracy,
        latency: LatencySummary::of(&stats.latencies_s),
        analytic_latency_s: analytic_latency_s(config),
        processing: LatencySummary::of(&stats.processing_s),
        onset_latency: LatencySummary::of(&onsets),
        intervals_detected: onsets.len(),
        intervals: intervals.len(),
        collisions: stats.collisions,
    }
}

/// Runs the configured source as fast as possible, without listeners.
pub fn run_bench(config: &ServiceConfig, model: Option<TrainedModel>) -> ServiceResult<BenchReport> {
    let mut config = config.clone();
    config.source.realtime_factor = None;
    config.source.endless = false;
    config.listen = None;
    config.ws_listen = None;
    config.record = None;
    let started = Instant::now();
    let service = Service::start_headless(config.clone(), model)?;
    let intervals = service.intervals().to_vec();
    let stats = service.wait()?;
    let wall_s = started.elapsed().as_secs_f64();
    Ok(score(&stats, &intervals, &config.decoder.mapping, &config, wall_s))
}
