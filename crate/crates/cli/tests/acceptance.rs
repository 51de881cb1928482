//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::f64::consts::PI;
use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::Command as Process;
use std::sync::Arc;
use std::time::{Duration, Instant};

use neurochair_core::classifier::{save_model, ModelKind, Prediction, TrainedModel};
use neurochair_core::decoder::{decode, Command, CommandEvent, CommandMapping, CommandSource, DecoderConfig};
use neurochair_core::dsp::{band_power, welch_psd, WelchConfig};
use neurochair_core::signal::{default_bands, default_montage, BandName, Epoch};
use neurochair_core::sim::{step, ChairParams, ChairState, Pose, Rect, Simulator, World};
use neurochair_service::bench::{analytic_latency_s, run_bench};
use neurochair_service::training::train_offline;
use neurochair_service::wire::{decode_msg, encode, gen};
use neurochair_service::{MessageType, Service, ServiceConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

type Outcome = Result<String, String>;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn check(cond: bool, msg: String) -> Outcome {
    if cond {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn within_time(out: Outcome, started: Instant, limit_s: f64) -> Outcome {
    let took = started.elapsed().as_secs_f64();
    match out {
        Ok(m) if took < limit_s => Ok(format!("{m}; {took:.2} s")),
        Ok(m) => Err(format!("{m}; took {took:.2} s, limit {limit_s} s")),
        Err(m) => Err(format!("{m}; {took:.2} s")),
    }
}

/// One-sided rectangular-window periodogram integrated over `[lo, hi)`.
fn periodogram_band(x: &[f64], fs: f64, lo: f64, hi: f64) -> f64 {
    let n = x.len();
    let df = fs / n as f64;
    let mut total = 0.0;
    for k in 0..=n / 2 {
        let f = k as f64 * df;
        if f < lo || f >= hi {
            continue;
        }
        let (mut re, mut im) = (0.0, 0.0);
        for (i, &v) in x.iter().enumerate() {
            let a = -2.0 * PI * (k * i) as f64 / n as f64;
            re += v * a.cos();
            im += v * a.sin();
        }
        let one_sided = if k == 0 || 2 * k == n { 1.0 } else { 2.0 };
        total += one_sided * (re * re + im * im) / (n as f64 * fs) * df;
    }
    total
}

fn band_powers(channels: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let montage = Arc::new(default_montage());
    let epoch = Epoch::from_channels(montage, channels).unwrap();
    let spec = welch_psd(&epoch, WelchConfig::default()).unwrap();
    default_bands().iter().map(|b| band_power(&spec, b).unwrap()).collect()
}

fn criterion_1() -> Outcome {
    let montage = default_montage();
    let fs = montage.sampling_rate_hz();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let channels: Vec<Vec<f64>> = (0..montage.len())
        .map(|_| {
            let phase = rng.random::<f64>() * 2.0 * PI;
            (0..128).map(|i| 2.0 * (2.0 * PI * 10.0 * i as f64 / fs + phase).sin()).collect()
        })
        .collect();
    let powers = band_powers(&channels);
    let bands = default_bands();
    let mut worst_alpha: f64 = 0.0;
    let mut worst_other: f64 = 0.0;
    for (b, per_channel) in bands.iter().zip(&powers) {
        let hi = b.high_hz.min(fs / 2.0);
        for (ch, &p) in channels.iter().zip(per_channel) {
            let oracle = periodogram_band(ch, fs, b.low_hz, hi);
            if b.name == BandName::Alpha {
                worst_alpha = worst_alpha.max((p - 2.0).abs() / 2.0).max((p - oracle).abs() / oracle);
            } else {
                worst_other = worst_other.max(p).max(oracle);
            }
        }
    }
    check(
        worst_alpha <= 0.10 && worst_other < 0.1,
        format!("alpha max rel. error {worst_alpha:.4} (vs 2.0 µV² and periodogram), other bands max {worst_other:.2e} µV²"),
    )
}

fn criterion_2() -> Outcome {
    let montage = default_montage();
    let mut worst: f64 = 0.0;
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let channels: Vec<Vec<f64>> = (0..montage.len())
            .map(|_| {
                (0..1024)
                    .map(|_| {
                        let s: f64 = StandardNormal.sample(&mut rng);
                        3.0 * s
                    })
                    .collect()
            })
            .collect();
        let powers = band_powers(&channels);
        for (c, x) in channels.iter().enumerate() {
            let mean = x.iter().sum::<f64>() / x.len() as f64;
            let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (x.len() - 1) as f64;
            let total: f64 = powers.iter().map(|b| b[c]).sum();
            worst = worst.max((total - var).abs() / var);
        }
    }
    check(worst <= 0.15, format!("max |Σ band power − variance| / variance = {worst:.4} over 100 seeds x 14 ch"))
}

fn criterion_3() -> (Outcome, Option<TrainedModel>) {
    let config = ServiceConfig::load(Some(&configs().join("acceptance.json")), &[]).unwrap();
    let mut lines = Vec::new();
    let mut ok = true;
    let mut lda = None;
    for kind in [ModelKind::LinearDiscriminant, ModelKind::RandomForest] {
        let mut c = config.clone();
        c.classifier.kind = kind;
        match train_offline(&c) {
            Ok(o) => {
                ok &= o.cv.accuracy >= 0.85 && o.cv.folds == 5;
                lines.push(format!("{kind:?} {:.4}", o.cv.accuracy));
                if kind == ModelKind::LinearDiscriminant {
                    lda = Some(o.model);
                }
            }
            Err(e) => {
                ok = false;
                lines.push(format!("{kind:?} failed: {e}"));
            }
        }
    }
    (check(ok, format!("5-fold trial-grouped CV: {}", lines.join(", "))), lda)
}

/// Recomputes every decision from the whole history: the current run is
/// the longest same-label, above-threshold suffix since the last emission.
fn reference_decode(preds: &[Prediction], cfg: &DecoderConfig) -> Vec<CommandEvent> {
    let mut out: Vec<(usize, CommandEvent)> = Vec::new();
    for i in 0..preds.len() {
        let p = &preds[i];
        if p.confidence() < cfg.threshold {
            continue;
        }
        let floor = out.last().map_or(0, |(j, _)| j + 1);
        let run = (floor..=i)
            .rev()
            .take_while(|&j| preds[j].label == p.label && preds[j].confidence() >= cfg.threshold)
            .count();
        if run < cfg.dwell {
            continue;
        }
        if let Some((_, last)) = out.last() {
            if p.t_end - last.issued_at < cfg.refractory_s - 1e-9 {
                continue;
            }
        }
        let latched = out
            .last()
            .map(|(_, e)| e.command)
            .filter(|c| matches!(c, Command::Forward | Command::Backward));
        let command = cfg.mapping.get(p.label);
        let emit = match command {
            Command::Stop => cfg.neutral_releases && latched.is_some(),
            Command::Forward | Command::Backward => latched != Some(command),
            _ => true,
        };
        if emit {
            out.push((
                i,
                CommandEvent {
                    command,
                    confidence: p.confidence(),
                    issued_at: p.t_end,
                    source: CommandSource::Label(p.label),
                },
            ));
        }
    }
    out.into_iter().map(|(_, e)| e).collect()
}

fn random_predictions(rng: &mut ChaCha8Rng) -> Vec<Prediction> {
    let n = rng.random_range(0..=200);
    let mut label = rng.random_range(0..5);
    (0..n)
        .map(|i| {
            if rng.random::<f64>() < 0.2 {
                label = rng.random_range(0..5);
            }
            let mut scores = [0.0; 5];
            for s in &mut scores {
                *s = rng.random::<f64>();
            }
            scores[label] += rng.random::<f64>() * 6.0;
            let t_start = i as f64 * 0.25;
            Prediction::from_scores(scores, t_start, t_start + 1.0)
        })
        .collect()
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut events = 0;
    for case in 0..1000 {
        let cfg = DecoderConfig {
            threshold: [0.3, 0.45, 0.6, 0.75][rng.random_range(0..4)],
            dwell: rng.random_range(1..=5),
            refractory_s: [0.0, 0.25, 0.5, 1.0, 1.3][rng.random_range(0..5)],
            neutral_releases: rng.random(),
            mapping: CommandMapping::default(),
        };
        let preds = random_predictions(&mut rng);
        let got = decode(&preds, &cfg).unwrap();
        let want = reference_decode(&preds, &cfg);
        if got != want {
            return Err(format!("case {case} differs: {} vs {} events", got.len(), want.len()));
        }
        events += got.len();
    }
    check(events > 1000, format!("1000 sequences identical to the reference ({events} events)"))
}

fn criterion_5() -> Outcome {
    let params = ChairParams::default();
    let mut sim = Simulator::new(World::default(), params, 20.0).unwrap();
    let h0 = sim.state().heading_deg;
    let mut t = 0.0;
    for _ in 0..4 {
        sim.apply(Command::TurnRight);
        t += params.turn_duration_s + 0.2;
        sim.advance_to(t);
    }
    let heading_ok = sim.state().heading_deg == h0;

    let mut sim = Simulator::new(World::default(), params, 20.0).unwrap();
    let (x0, y0) = (sim.state().x, sim.state().y);
    sim.apply(Command::Forward);
    sim.advance_to(3.0);
    sim.apply(Command::Backward);
    sim.advance_to(6.0);
    let drift = (sim.state().x - x0).hypot(sim.state().y - y0);

    let world = World {
        bounds: Rect::new(0.0, 0.0, 8.0, 6.0),
        obstacles: vec![Rect::new(2.0, 2.0, 3.0, 4.0), Rect::new(5.0, 0.0, 6.0, 2.5)],
        footprint_radius: 0.3,
        start: Pose {
            x: 1.0,
            y: 1.0,
            heading_deg: 90.0,
        },
    };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut state = ChairState::at(world.start);
    let mut overlaps = 0;
    let mut collisions = 0;
    for _ in 0..1000 {
        if rng.random::<f64>() < 0.3 {
            neurochair_core::sim::apply_command(&mut state, Command::ALL[rng.random_range(0..5)], &params);
        }
        step(&mut state, &world, &params, 0.1).unwrap();
        collisions += state.collided as u32;
        if !world.is_free(state.x, state.y) {
            overlaps += 1;
        }
    }
    check(
        heading_ok && drift <= 1e-9 && overlaps == 0,
        format!(
            "4 x TurnRight heading exact: {heading_ok}; forward/back drift {drift:.1e} m; fuzz overlaps {overlaps} ({collisions} blocked steps)"
        ),
    )
}

fn cli(args: &[&str]) -> (i32, String) {
    let out = Process::new(env!("CARGO_BIN_EXE_neurochair"))
        .args(args)
        .env_remove("NEUROCHAIR_CONFIG")
        .env("RUST_LOG", "error")
        .output()
        .expect("cli runs");
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stdout).into_owned())
}

fn criterion_6(dir: &Path, model: &Path) -> Outcome {
    let drive = configs().join("drive.json");
    let run = |log: &Path| -> Result<serde_json::Value, String> {
        let (code, out) = cli(&[
            "drive",
            "--config",
            drive.to_str().unwrap(),
            "--model",
            model.to_str().unwrap(),
            "--fast",
            "--json",
            "--seed",
            "42",
            "--out",
            log.to_str().unwrap(),
            "--set",
            "listen=null",
            "--set",
            "ws_listen=null",
        ]);
        if code != 0 {
            return Err(format!("drive exited {code}"));
        }
        serde_json::from_str(&out).map_err(|e| format!("drive output: {e}"))
    };
    let (log_a, log_b) = (dir.join("a.jsonl"), dir.join("b.jsonl"));
    let a = run(&log_a)?;
    let b = run(&log_b)?;
    let n = a["commands"].as_array().map_or(0, Vec::len);
    let same = a["commands"] == b["commands"] && a["final_state"] == b["final_state"];
    let (code, out) = cli(&[
        "replay",
        log_a.to_str().unwrap(),
        "--config",
        drive.to_str().unwrap(),
        "--model",
        model.to_str().unwrap(),
        "--json",
    ]);
    let replay: serde_json::Value = serde_json::from_str(&out).unwrap_or_default();
    check(
        same && n > 0 && code == 0 && replay["matches"] == true,
        format!(
            "two 60 s drives: {n} commands, identical: {same}; replay exit {code}, matches: {}",
            replay["matches"]
        ),
    )
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut mismatches = 0;
    for _ in 0..10_000 {
        let m = gen::message(&mut rng);
        if decode_msg(&encode(&m)).as_ref() != Ok(&m) {
            mismatches += 1;
        }
    }

    let mut config = ServiceConfig::default();
    config.listen = Some("127.0.0.1:0".into());
    config.ws_listen = None;
    let svc = Service::start(config, None).unwrap();
    let stream = TcpStream::connect(svc.tcp_addr().unwrap()).unwrap();
    stream.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
    let mut writer = stream.try_clone().unwrap();
    let mut reader = BufReader::new(stream);
    let mut next_of = |kind: MessageType| {
        let mut line = String::new();
        loop {
            line.clear();
            if reader.read_line(&mut line).unwrap_or(0) == 0 {
                return None;
            }
            let m = decode_msg(&line).ok()?;
            if m.kind() == kind {
                return Some(m);
            }
        }
    };
    let mut usable = true;
    for bad in ["{}", "garbage", "[1,2]"] {
        writer
            .write_all(format!("{bad}\n{{\"type\":\"session_control\",\"seq\":8,\"t\":0,\"payload\":{{\"action\":\"ping\"}}}}\n").as_bytes())
            .unwrap();
        usable &= next_of(MessageType::Error).is_some() && next_of(MessageType::Ack).is_some();
    }
    svc.shutdown().unwrap();
    check(
        mismatches == 0 && usable,
        format!("10000 round trips, {mismatches} mismatches; error + ack after malformed lines: {usable}"),
    )
}

fn criterion_8(model: &TrainedModel) -> Outcome {
    let config = ServiceConfig::load(Some(&configs().join("drive.json")), &[]).unwrap();
    let r = run_bench(&config, Some(model.clone())).map_err(|e| e.to_string())?;
    let analytic = analytic_latency_s(&config);
    let rel = (r.latency.p50_s - analytic).abs() / analytic;
    check(
        r.throughput_x_realtime >= 10.0 && rel <= 0.10 && r.latency.count > 0,
        format!(
            "throughput {:.0}x real time; median dwell-inclusive latency {:.3} s vs analytic {analytic:.3} s ({:.1}% off, n = {})",
            r.throughput_x_realtime,
            r.latency.p50_s,
            rel * 100.0,
            r.latency.count
        ),
    )
}

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut record = |n, name, out: Outcome| {
        match &out {
            Ok(m) => println!("PASS {n} {name}: {m}"),
            Err(m) => println!("FAIL {n} {name}: {m}"),
        }
        results.push((n, name, out));
    };

    let t = Instant::now();
    record(1, "band power", within_time(criterion_1(), t, 1.0));
    let t = Instant::now();
    record(2, "parseval", within_time(criterion_2(), t, 10.0));
    let t = Instant::now();
    let (out, model) = criterion_3();
    record(3, "classifier accuracy", within_time(out, t, 120.0));
    let t = Instant::now();
    record(4, "decoder equivalence", within_time(criterion_4(), t, 10.0));
    let t = Instant::now();
    record(5, "kinematics", within_time(criterion_5(), t, 5.0));

    let model_path = dir.path().join("model.json");
    match &model {
        Some(m) => {
            save_model(m, &model_path).unwrap();
            let t = Instant::now();
            record(6, "determinism and replay", within_time(criterion_6(dir.path(), &model_path), t, 120.0));
        }
        None => record(6, "determinism and replay", Err("no model from criterion 3".into())),
    }
    let t = Instant::now();
    record(7, "wire protocol", within_time(criterion_7(), t, 10.0));
    match &model {
        Some(m) => {
            let t = Instant::now();
            record(8, "responsiveness", within_time(criterion_8(m), t, 60.0));
        }
        None => record(8, "responsiveness", Err("no model from criterion 3".into())),
    }

    let failed = results.iter().filter(|r| r.2.is_err()).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
