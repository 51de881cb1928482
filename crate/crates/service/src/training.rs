//! Headless calibration: label epochs from the scenario's ground truth
//! instead of live cues, fit, and cross-validate.

use std::sync::Arc;

use neurochair_core::classifier::{cross_validate, fit, CvReport, ModelMetadata, TrainedModel, TrainingSession};
use neurochair_core::dsp::{Epocher, FeatureExtractor, FeatureVector};
use neurochair_core::signal::{EegFrame, Montage};
use neurochair_core::synth::generate_recording;
use serde::Serialize;

use crate::config::{ServiceConfig, SourceKind};
use crate::error::ServiceResult;

#[derive(Debug, Clone, Serialize)]
pub struct TrainingOutcome {
    pub model: TrainedModel,
    pub cv: CvReport,
    pub epochs: usize,
}

impl TrainingOutcome {
    pub fn meets_floor(&self, floor: f64) -> bool {
        self.cv.accuracy >= floor
    }
}

/// Epochs and extracts a frame sequence.
pub fn features_of(config: &ServiceConfig, frames: Vec<EegFrame>) -> ServiceResult<Vec<FeatureVector>> {
    let montage = Arc::new(config.montage.clone());
    let mut epocher = Epocher::new(montage.clone(), config.epoch)?;
    let epochs: Vec<_> = frames.into_iter().flat_map(|f| epocher.push(f)).collect();
    let extractor = FeatureExtractor::new(montage, &config.bands, &config.filters, config.welch)?;
    Ok(extractor.extract_batch(&epochs)?)
}

/// Trains on the configured source (synth scenario or CSV recording).
pub fn train_offline(config: &ServiceConfig) -> ServiceResult<TrainingOutcome> {
    let recording = match config.source.kind {
        SourceKind::Synth => generate_recording(&config.source.effective_scenario()?, &config.montage)?,
        SourceKind::Replay => neurochair_core::synth::load_csv(
            config.source.path.as_ref().expect("validated"),
            &config.montage,
        )?,
    };
    let features = features_of(config, recording.frames)?;
    let epochs = features.len();
    let session = TrainingSession::from_ground_truth(
        &recording.intervals,
        features,
        Some(config.training.trial_duration_s),
    )?;
    train_session(&session, &config.montage, config).map(|(model, cv)| TrainingOutcome { model, cv, epochs })
}

fn train_session(
    session: &TrainingSession,
    montage: &Montage,
    config: &ServiceConfig,
) -> ServiceResult<(TrainedModel, CvReport)> {
    let meta = ModelMetadata::new(montage, &config.bands);
    let mut model = fit(session, &config.classifier, &meta)?;
    let min_trials = session.trials_per_class().values().copied().min().unwrap_or(0);
    let k = config.training.cv_folds.min(min_trials);
    let cv = cross_validate(session, &config.classifier, &meta, k)?;
    model.summary.cv_accuracy = Some(cv.accuracy);
    Ok((model, cv))
}
