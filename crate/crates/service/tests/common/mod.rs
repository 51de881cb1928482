#![allow(dead_code)]

use std::sync::OnceLock;

use neurochair_core::classifier::TrainedModel;
use neurochair_core::signal::CommandLabel;
use neurochair_core::synth::{IntentSegment, ScenarioSpec};
use neurochair_service::training::train_offline;
use neurochair_service::ServiceConfig;

pub fn scenario(seed: u64, script: &[(CommandLabel, f64)]) -> ScenarioSpec {
    ScenarioSpec {
        intent_script: script
            .iter()
            .map(|&(label, duration_s)| IntentSegment { label, duration_s })
            .collect(),
        ..ScenarioSpec::calibration(seed)
    }
}

/// A minute of mixed driving.
pub fn drive_script() -> Vec<(CommandLabel, f64)> {
    use CommandLabel::*;
    vec![
        (Neutral, 4.0),
        (Push, 5.0),
        (Neutral, 4.0),
        (Left, 4.0),
        (Push, 5.0),
        (Neutral, 4.0),
        (Right, 4.0),
        (Right, 0.0),
        (Pull, 4.0),
        (Neutral, 4.0),
        (Left, 4.0),
        (Push, 6.0),
        (Neutral, 6.0),
        (Pull, 3.0),
        (Neutral, 3.0),
    ]
    .into_iter()
    .filter(|s| s.1 > 0.0)
    .collect()
}

/// Config with no listeners and an unpaced synth source.
pub fn offline_config(seed: u64, script: &[(CommandLabel, f64)]) -> ServiceConfig {
    let mut c = ServiceConfig::default().with_seed(seed);
    c.source.scenario = scenario(seed, script);
    c.source.realtime_factor = None;
    c.listen = None;
    c.ws_listen = None;
    c
}

fn calibration_script(trials: usize) -> Vec<(CommandLabel, f64)> {
    CommandLabel::ALL
        .iter()
        .flat_map(|&l| std::iter::repeat_n((l, 8.0), trials))
        .collect()
}

/// LDA trained once per test binary on a shortened calibration run.
pub fn model() -> TrainedModel {
    static MODEL: OnceLock<TrainedModel> = OnceLock::new();
    MODEL
        .get_or_init(|| {
            let c = offline_config(7, &calibration_script(6));
            train_offline(&c).expect("training succeeds").model
        })
        .clone()
}
