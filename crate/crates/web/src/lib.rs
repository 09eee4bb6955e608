//! Browser bindings. Every export returns a JSON string; errors come back as
//! `{"error": "..."}` so the page never has to catch exceptions.

use probekit::interventions::{evaluate_best_of_n, steer, Selector};
use probekit::numerics::{auroc_value, dot, norm};
use probekit::probe::{train_probe, Position, TrainConfig};
use probekit::synth::{self, analytic_auroc, BonSynthConfig, SynthConfig};
use serde::Serialize;
use serde_json::json;
use wasm_bindgen::prelude::*;

fn respond<T: Serialize>(r: probekit::Result<T>) -> String {
    match r {
        Ok(v) => serde_json::to_string(&v)
            .unwrap_or_else(|e| json!({ "error": e.to_string() }).to_string()),
        Err(e) => json!({ "error": e.to_string() }).to_string(),
    }
}

#[derive(Serialize)]
pub struct ProbeDemo {
    per_layer: Vec<(usize, f64)>,
    best_layer: usize,
    planted_layer: usize,
    cv_auroc: f64,
    held_out_auroc: f64,
    analytic_auroc: f64,
}

/// Plants a direction at one layer, sweeps every layer and scores a held-out set.
pub fn probe_demo_result(
    n: usize,
    layers: usize,
    planted: usize,
    delta: f64,
    seed: u64,
) -> probekit::Result<ProbeDemo> {
    let cfg = SynthConfig {
        n_records: n,
        n_layers: layers,
        hidden_dim: 16,
        planted_layer: planted,
        offset_delta: delta,
        steps_min: 1,
        steps_max: 1,
        seed,
        ..SynthConfig::default()
    };
    let train = synth::generate(&cfg)?;
    let held = synth::generate(&SynthConfig {
        seed: seed.wrapping_add(1_000_003),
        ..cfg.clone()
    })?;
    let tc = TrainConfig {
        seed,
        ..TrainConfig::default()
    };
    let (probe, sweep) = train_probe(&train, Position::TraceLastToken, &tc)?;
    let held_out = auroc_value(&probe.score_dataset(&held)?, &held.labels())?;
    Ok(ProbeDemo {
        per_layer: sweep.per_layer.into_iter().collect(),
        best_layer: probe.layer,
        planted_layer: planted,
        cv_auroc: probe.cv_auroc,
        held_out_auroc: held_out,
        analytic_auroc: analytic_auroc(delta, cfg.noise_sigma),
    })
}

#[wasm_bindgen]
pub fn probe_demo(n: usize, layers: usize, planted: usize, delta: f64, seed: u64) -> String {
    respond(probe_demo_result(n, layers, planted, delta, seed))
}

#[derive(Serialize)]
pub struct SteerPoint {
    before: [f64; 2],
    after: [f64; 2],
    wrong: bool,
}

#[derive(Serialize)]
pub struct SteerDemo {
    points: Vec<SteerPoint>,
    mean_projection_before: f64,
    mean_projection_after: f64,
}

/// A 2-D cloud whose wrong points sit along the error direction at `angle`,
/// before and after removing `alpha` times their projection.
pub fn steer_demo_result(alpha: f64, angle: f64, seed: u64) -> probekit::Result<SteerDemo> {
    let ds = synth::generate(&SynthConfig {
        n_records: 120,
        n_layers: 1,
        hidden_dim: 2,
        planted_layer: 0,
        offset_delta: 2.5,
        noise_sigma: 0.6,
        steps_min: 1,
        steps_max: 1,
        planted_direction: Some(vec![angle.cos(), angle.sin()]),
        seed,
        ..SynthConfig::default()
    })?;
    let w = [angle.cos(), angle.sin()];
    let unit: Vec<f64> = w.iter().map(|x| x / norm(&w)).collect();
    let mut points = Vec::with_capacity(ds.len());
    let (mut before, mut after) = (0.0, 0.0);
    for (r, rec) in ds.records().iter().enumerate() {
        let h = ds.vector_f64(r, probekit::trace_store::VectorSlot::trace_last(0))?;
        let s = steer(&h, &w, alpha)?;
        before += dot(&h, &unit);
        after += dot(&s, &unit);
        points.push(SteerPoint {
            before: [h[0], h[1]],
            after: [s[0], s[1]],
            wrong: rec.is_error(),
        });
    }
    let n = ds.len() as f64;
    Ok(SteerDemo {
        points,
        mean_projection_before: before / n,
        mean_projection_after: after / n,
    })
}

#[wasm_bindgen]
pub fn steer_demo(alpha: f64, angle: f64, seed: u64) -> String {
    respond(steer_demo_result(alpha, angle, seed))
}

#[derive(Serialize)]
pub struct BonCurve {
    selector: &'static str,
    accuracy: Vec<(usize, f64)>,
}

/// Selection accuracy against N for a probe of the given AUROC.
pub fn best_of_n_result(
    score_auroc: f64,
    problems: usize,
    seed: u64,
) -> probekit::Result<Vec<BonCurve>> {
    let ns = [1, 2, 4, 8, 12];
    let groups = synth::bon_groups(&BonSynthConfig {
        n_problems: problems,
        candidates: 12,
        score_auroc,
        seed,
        ..BonSynthConfig::default()
    })?;
    let res = evaluate_best_of_n(&groups, &Selector::ALL, &ns, seed)?;
    Ok(Selector::ALL
        .iter()
        .map(|&s| BonCurve {
            selector: s.as_str(),
            accuracy: ns
                .iter()
                .filter_map(|&n| res.get(s, n).map(|a| (n, a)))
                .collect(),
        })
        .collect())
}

#[wasm_bindgen]
pub fn best_of_n(score_auroc: f64, problems: usize, seed: u64) -> String {
    respond(best_of_n_result(score_auroc, problems, seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn probe_demo_finds_planted_layer() {
        let d = probe_demo_result(300, 6, 4, 2.0, 0).unwrap();
        assert_eq!(d.best_layer, 4);
        assert!((d.held_out_auroc - d.analytic_auroc).abs() < 0.06);
    }

    #[test]
    fn full_steer_removes_projection() {
        let d = steer_demo_result(1.0, 0.7, 0).unwrap();
        assert!(d.mean_projection_before.abs() > 0.1);
        assert!(d.mean_projection_after.abs() < 1e-9);
    }

    #[test]
    fn exports_return_json() {
        let v: serde_json::Value = serde_json::from_str(&best_of_n(0.9, 40, 1)).unwrap();
        assert_eq!(v.as_array().unwrap().len(), 5);
        let v: serde_json::Value = serde_json::from_str(&best_of_n(1.5, 40, 1)).unwrap();
        assert!(v["error"].is_string());
    }
}
