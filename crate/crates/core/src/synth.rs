//! Synthetic datasets with analytically known separability.
//!
//! Every vector is isotropic Gaussian noise. At the planted layer, wrong
//! traces get a mean offset `delta * u` along a unit direction `u`, so the
//! best achievable AUROC of any linear readout is `Phi(delta / (sigma * sqrt 2))`.
//! Step-end vectors carry the same offset scaled by a per-step regime profile.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::baselines::ContrastPair;
use crate::error::{Error, Result};
use crate::interventions::{Candidate, ProblemGroup};
use crate::numerics::{auroc_value, normal_cdf, percentile_sorted, sigmoid};
use crate::trace_store::{
    canonicalize_answer, ActivationSet, Dataset, DatasetHeader, TraceRecord, VectorSlot,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthRegime {
    /// Step offset 1.0 at step 1, halving each later step.
    FrontLoaded,
    /// Step offset rising linearly from 0.2 at the first step to 1.0 at the last.
    Accumulating,
    /// Constant step offset 1.0.
    None,
}

impl SynthRegime {
    /// Offset multiplier for step `k` (0-based) of a trace with `steps` steps.
    pub fn scale(self, k: usize, steps: usize) -> f64 {
        match self {
            SynthRegime::FrontLoaded => 0.5f64.powi(k as i32),
            SynthRegime::Accumulating if steps > 1 => 0.2 + 0.8 * k as f64 / (steps - 1) as f64,
            SynthRegime::Accumulating | SynthRegime::None => 1.0,
        }
    }
}

/// Where the planted signal lives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalLevel {
    /// Offset follows each trace's own label.
    Trace,
    /// Offset follows a latent per-problem difficulty; all samples of a
    /// problem share identical vectors regardless of their labels.
    Problem,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceModel {
    pub correct_mean: f64,
    pub wrong_mean: f64,
    pub spread: f64,
}

impl Default for ConfidenceModel {
    fn default() -> Self {
        Self {
            correct_mean: 4.87,
            wrong_mean: 4.55,
            spread: 0.6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_records: usize,
    pub n_layers: usize,
    pub hidden_dim: usize,
    pub planted_layer: usize,
    pub offset_delta: f64,
    pub noise_sigma: f64,
    pub error_rate: f64,
    pub regime: SynthRegime,
    pub steps_min: usize,
    pub steps_max: usize,
    /// Probability of inserting a class-revealing word into the first step.
    pub text_leak: f64,
    pub confidence: ConfidenceModel,
    pub seed: u64,
    /// Seed of the planted direction; shared by train and held-out sets.
    pub direction_seed: u64,
    /// Explicit planted direction (normalized on use); overrides `direction_seed`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub planted_direction: Option<Vec<f64>>,
    pub samples_per_problem: usize,
    pub signal_level: SignalLevel,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_records: 200,
            n_layers: 28,
            hidden_dim: 32,
            planted_layer: 12,
            offset_delta: 2.0,
            noise_sigma: 1.0,
            error_rate: 0.4,
            regime: SynthRegime::FrontLoaded,
            steps_min: 3,
            steps_max: 5,
            text_leak: 0.0,
            confidence: ConfidenceModel::default(),
            seed: 0,
            direction_seed: 0,
            planted_direction: None,
            samples_per_problem: 1,
            signal_level: SignalLevel::Trace,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.error_rate > 0.0 && self.error_rate < 1.0) {
            return bad(format!(
                "error_rate must be in (0, 1), got {}",
                self.error_rate
            ));
        }
        if !(self.offset_delta >= 0.0 && self.offset_delta.is_finite()) {
            return bad(format!(
                "offset_delta must be >= 0, got {}",
                self.offset_delta
            ));
        }
        if !(self.noise_sigma > 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma must be > 0, got {}", self.noise_sigma));
        }
        if self.n_layers == 0 || self.hidden_dim == 0 {
            return bad("n_layers and hidden_dim must be positive".into());
        }
        if self.planted_layer >= self.n_layers {
            return bad(format!(
                "planted_layer {} must be < n_layers {}",
                self.planted_layer, self.n_layers
            ));
        }
        if self.steps_min == 0 || self.steps_min > self.steps_max {
            return bad(format!(
                "steps range {}..={} must be non-empty and start at 1 or more",
                self.steps_min, self.steps_max
            ));
        }
        if !(0.0..=1.0).contains(&self.text_leak) {
            return bad(format!(
                "text_leak must be in [0, 1], got {}",
                self.text_leak
            ));
        }
        if self.samples_per_problem == 0 {
            return bad("samples_per_problem must be positive".into());
        }
        if let Some(u) = &self.planted_direction {
            if u.len() != self.hidden_dim {
                return Err(Error::DimensionMismatch {
                    expected: self.hidden_dim,
                    found: u.len(),
                });
            }
            if u.iter().map(|x| x * x).sum::<f64>() == 0.0 {
                return bad("planted_direction must be non-zero".into());
            }
        }
        Ok(())
    }

    /// Unit direction carrying the signal.
    pub fn direction(&self) -> Vec<f64> {
        let raw = match &self.planted_direction {
            Some(u) => u.clone(),
            None => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.direction_seed);
                rng.set_stream(u64::MAX);
                (0..self.hidden_dim)
                    .map(|_| rng.sample(StandardNormal))
                    .collect()
            }
        };
        let n = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        raw.into_iter().map(|x| x / n).collect()
    }

    /// Best achievable AUROC at the planted layer's last-token vectors.
    pub fn analytic_auroc(&self) -> f64 {
        analytic_auroc(self.offset_delta, self.noise_sigma)
    }
}

/// `Phi(delta / (sigma * sqrt 2))`: AUROC of `N(delta, sigma^2)` against `N(0, sigma^2)`.
pub fn analytic_auroc(delta: f64, sigma: f64) -> f64 {
    normal_cdf(delta / (sigma * std::f64::consts::SQRT_2))
}

/// Leak probability at which an ideal text classifier reaches `target` AUROC.
///
/// With leak probability `q`, wrong traces carry a wrong-marker and correct
/// traces a correct-marker, each with probability `q`, which gives an ideal
/// AUROC of `0.5 + q - q^2 / 2`.
pub fn matched_text_leak(target: f64) -> f64 {
    let t = target.clamp(0.5, 1.0);
    1.0 - (2.0 - 2.0 * t).sqrt()
}

/// Marker inserted into a wrong trace's first step under text leakage.
pub const WRONG_MARKER: &str = "recheck";
/// Marker inserted into a correct trace's first step under text leakage.
pub const CORRECT_MARKER: &str = "verified";

const VERBS: &[&str] = &[
    "compute", "find", "add", "multiply", "subtract", "divide", "count", "combine", "take", "use",
];
const NOUNS: &[&str] = &[
    "total",
    "price",
    "distance",
    "cost",
    "number",
    "sum",
    "rate",
    "amount",
    "area",
    "time",
    "value",
    "difference",
];
type BinOp = fn(i64, i64) -> i64;

const OPS: &[(&str, BinOp)] = &[
    ("+", |a, b| a + b),
    ("-", |a, b| a - b),
    ("x", |a, b| a * b),
];

fn normal_vec(rng: &mut ChaCha8Rng, dim: usize, sigma: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| sigma * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn to_f32_with_offset(noise: &[f64], u: &[f64], offset: f64) -> Vec<f32> {
    noise
        .iter()
        .zip(u)
        .map(|(n, d)| (n + offset * d) as f32)
        .collect()
}

struct ProblemLatent {
    difficulty: f64,
    steps: usize,
    /// Shared vectors for problem-level signal.
    shared: Option<ActivationSet>,
}

/// Generates a dataset; fully determined by the config.
pub fn generate(config: &SynthConfig) -> Result<Dataset> {
    config.validate()?;
    let u = config.direction();
    let spp = config.samples_per_problem;
    let n_problems = config.n_records.div_ceil(spp);
    let base_logit = (config.error_rate / (1.0 - config.error_rate)).ln();

    let mut problems = Vec::with_capacity(n_problems);
    for p in 0..n_problems {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(2 * p as u64 + 1);
        let difficulty: f64 = rng.sample(StandardNormal);
        let steps = rng.random_range(config.steps_min..=config.steps_max);
        let shared = (config.signal_level == SignalLevel::Problem)
            .then(|| vectors_for(config, &u, &mut rng, "", difficulty, steps));
        problems.push(ProblemLatent {
            difficulty,
            steps,
            shared,
        });
    }

    let mut parts = Vec::with_capacity(config.n_records);
    for i in 0..config.n_records {
        let p = i / spp;
        let latent = &problems[p];
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(2 * i as u64 + 2);

        let error_prob = match config.signal_level {
            SignalLevel::Trace => config.error_rate,
            SignalLevel::Problem => sigmoid(base_logit + 1.5 * latent.difficulty),
        };
        let wrong = rng.random_bool(error_prob);
        let record_id = format!("r{i:05}");
        let (steps, vectors) = match &latent.shared {
            Some(shared) => {
                let mut set = shared.clone();
                set.record_id = record_id.clone();
                (latent.steps, set)
            }
            None => {
                let steps = rng.random_range(config.steps_min..=config.steps_max);
                let magnitude = if wrong { 1.0 } else { 0.0 };
                (
                    steps,
                    vectors_for(config, &u, &mut rng, &record_id, magnitude, steps),
                )
            }
        };
        let record = record_for(config, &mut rng, record_id, p, i % spp, wrong, steps);
        parts.push((record, vectors));
    }

    let header = DatasetHeader {
        model_name: "synthetic".into(),
        num_layers: config.n_layers,
        hidden_dim: config.hidden_dim,
        extraction_notes: format!(
            "synthetic: planted_layer={} delta={} sigma={} regime={:?} signal={:?} seed={}",
            config.planted_layer,
            config.offset_delta,
            config.noise_sigma,
            config.regime,
            config.signal_level,
            config.seed
        ),
    };
    Dataset::from_parts(header, parts)
}

/// Vectors for one trace; `magnitude` multiplies the planted offset.
fn vectors_for(
    config: &SynthConfig,
    u: &[f64],
    rng: &mut ChaCha8Rng,
    record_id: &str,
    magnitude: f64,
    steps: usize,
) -> ActivationSet {
    let mut set = ActivationSet::new(record_id);
    let delta = config.offset_delta * magnitude;
    for layer in 0..config.n_layers {
        let planted = layer == config.planted_layer;
        let noise = normal_vec(rng, config.hidden_dim, config.noise_sigma);
        let off = if planted { delta } else { 0.0 };
        set.insert(
            VectorSlot::trace_last(layer),
            to_f32_with_offset(&noise, u, off),
        );
        for k in 0..steps {
            let noise = normal_vec(rng, config.hidden_dim, config.noise_sigma);
            let off = if planted {
                delta * config.regime.scale(k, steps)
            } else {
                0.0
            };
            set.insert(
                VectorSlot::step_end(k, layer),
                to_f32_with_offset(&noise, u, off),
            );
        }
    }
    set
}

fn record_for(
    config: &SynthConfig,
    rng: &mut ChaCha8Rng,
    record_id: String,
    problem: usize,
    sample: usize,
    wrong: bool,
    steps: usize,
) -> TraceRecord {
    let reference: i64 = {
        let mut prng = ChaCha8Rng::seed_from_u64(config.seed);
        prng.set_stream(u64::MAX - 1 - problem as u64);
        prng.random_range(10..10_000)
    };
    let answer = if wrong {
        let mut d = 0;
        while d == 0 {
            d = rng.random_range(-50..=50);
        }
        reference + d
    } else {
        reference
    };

    let mut text = String::new();
    let mut spans = Vec::with_capacity(steps);
    let leak = rng.random_bool(config.text_leak);
    for k in 0..steps {
        if k > 0 {
            text.push('\n');
        }
        let a = rng.random_range(2..100);
        let b = rng.random_range(2..50);
        let (sym, op) = OPS[rng.random_range(0..OPS.len())];
        let mut line = format!(
            "Step {}: {} the {} {a} {sym} {b} = {}",
            k + 1,
            VERBS[rng.random_range(0..VERBS.len())],
            NOUNS[rng.random_range(0..NOUNS.len())],
            op(a, b)
        );
        if k == 0 && leak {
            line.push(' ');
            line.push_str(if wrong { WRONG_MARKER } else { CORRECT_MARKER });
        }
        let start = text.chars().count();
        text.push_str(&line);
        spans.push((start, start + line.chars().count()));
    }
    text.push_str(&format!("\nANSWER: {answer}"));

    let mean = if wrong {
        config.confidence.wrong_mean
    } else {
        config.confidence.correct_mean
    };
    let z: f64 = rng.sample(StandardNormal);
    let confidence = (mean + config.confidence.spread * z)
        .round()
        .clamp(1.0, 5.0) as u8;
    let z: f64 = rng.sample(StandardNormal);
    let logprob = if wrong { -23.0 } else { -20.0 } + 6.0 * z;

    let final_answer = answer.to_string();
    let reference_answer = reference.to_string();
    let label =
        u8::from(canonicalize_answer(&final_answer) != canonicalize_answer(&reference_answer));
    TraceRecord {
        record_id,
        problem_id: format!("q{problem:04}"),
        problem_text: format!(
            "Synthetic problem {problem}: find the {}.",
            NOUNS[problem % NOUNS.len()]
        ),
        trace_text: text,
        step_spans: spans,
        final_answer,
        reference_answer,
        label,
        verbalized_confidence: Some(confidence),
        sequence_logprob: Some(logprob),
        p_true: None,
        sample_index: sample as u32,
        temperature: if config.samples_per_problem > 1 {
            0.7
        } else {
            0.0
        },
    }
}

/// Standard error of AUROC under no signal (Hanley-McNeil null form).
pub fn null_auroc_se(n_pos: usize, n_neg: usize) -> f64 {
    let (p, n) = (n_pos as f64, n_neg as f64);
    ((p + n + 1.0) / (12.0 * p * n)).sqrt()
}

pub const NULL_BAND_RUNS: usize = 200;

/// Central 95% band of AUROC over 200 label permutations of random scores at
/// the given class counts. Results are cached per class counts.
pub fn null_band(n_pos: usize, n_neg: usize) -> (f64, f64) {
    type Bands = Mutex<HashMap<(usize, usize), (f64, f64)>>;
    static CACHE: OnceLock<Bands> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(b) = cache
        .lock()
        .ok()
        .and_then(|c| c.get(&(n_pos, n_neg)).copied())
    {
        return b;
    }
    let band = compute_null_band(n_pos, n_neg, NULL_BAND_RUNS);
    if let Ok(mut c) = cache.lock() {
        c.insert((n_pos, n_neg), band);
    }
    band
}

fn compute_null_band(n_pos: usize, n_neg: usize, runs: usize) -> (f64, f64) {
    use rand::seq::SliceRandom;
    let n = n_pos + n_neg;
    let mut rng = ChaCha8Rng::seed_from_u64((n_pos as u64) << 32 | n_neg as u64);
    let scores: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let mut labels: Vec<bool> = (0..n).map(|i| i < n_pos).collect();
    let mut stats: Vec<f64> = (0..runs)
        .filter_map(|_| {
            labels.shuffle(&mut rng);
            auroc_value(&scores, &labels).ok()
        })
        .collect();
    stats.sort_by(f64::total_cmp);
    (
        percentile_sorted(&stats, 0.025),
        percentile_sorted(&stats, 0.975),
    )
}

/// Contrast pairs built on each record's last-token vector at `layer`:
/// `h +/- t * v + noise`, where `t` is `+truth_scale` for correct records and
/// `-truth_scale` for wrong ones and `v` is a seeded unit direction.
pub fn contrast_pairs(
    dataset: &Dataset,
    layer: usize,
    truth_scale: f64,
    noise_sigma: f64,
    seed: u64,
) -> Result<Vec<ContrastPair>> {
    let d = dataset.hidden_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = normal_vec(&mut rng, d, 1.0);
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
    (0..dataset.len())
        .map(|r| {
            let h = dataset.vector_f64(r, VectorSlot::trace_last(layer))?;
            let t = if dataset.records()[r].is_error() {
                -truth_scale
            } else {
                truth_scale
            };
            let e1 = normal_vec(&mut rng, d, noise_sigma);
            let e2 = normal_vec(&mut rng, d, noise_sigma);
            let side = |sign: f64, e: &[f64]| -> Vec<f64> {
                h.iter()
                    .zip(&v)
                    .zip(e)
                    .map(|((a, u), n)| a + sign * t * u + n)
                    .collect()
            };
            Ok(ContrastPair {
                positive: side(1.0, &e1),
                negative: side(-1.0, &e2),
            })
        })
        .collect()
}

/// Synthetic best-of-N problems with a known score model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BonSynthConfig {
    pub n_problems: usize,
    /// Candidates per problem, greedy included.
    pub candidates: usize,
    /// AUROC of probe scores for wrong against correct candidates.
    pub score_auroc: f64,
    /// Per-problem candidate accuracy is uniform on this range.
    pub accuracy_range: (f64, f64),
    /// Distinct wrong answers a problem's candidates spread over.
    pub wrong_answers: usize,
    pub seed: u64,
}

impl Default for BonSynthConfig {
    fn default() -> Self {
        Self {
            n_problems: 200,
            candidates: 13,
            score_auroc: 0.95,
            accuracy_range: (0.2, 0.8),
            wrong_answers: 3,
            seed: 0,
        }
    }
}

/// Candidate groups where correct candidates score `N(0, 1)` and wrong ones
/// `N(d, 1)` with `d = sqrt 2 * Phi^-1(score_auroc)`, squashed to (0, 1).
pub fn bon_groups(cfg: &BonSynthConfig) -> Result<Vec<ProblemGroup>> {
    let (lo, hi) = cfg.accuracy_range;
    if !(0.5..1.0).contains(&cfg.score_auroc) || !(0.0 <= lo && lo <= hi && hi <= 1.0) {
        return Err(Error::InvalidArgument(
            "score_auroc must lie in [0.5, 1) and accuracy_range in [0, 1]".into(),
        ));
    }
    if cfg.candidates == 0 || cfg.wrong_answers == 0 {
        return Err(Error::InvalidArgument(
            "need at least one candidate and one wrong answer".into(),
        ));
    }
    let d = std::f64::consts::SQRT_2 * Normal::standard().inverse_cdf(cfg.score_auroc);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    Ok((0..cfg.n_problems)
        .map(|p| {
            let acc = lo + (hi - lo) * rng.random::<f64>();
            let candidates = (0..cfg.candidates)
                .map(|_| {
                    let correct = rng.random::<f64>() < acc;
                    let z: f64 = rng.sample(StandardNormal);
                    let raw = if correct { z } else { z + d };
                    let answer = if correct {
                        "A".to_string()
                    } else {
                        format!("W{}", rng.random_range(0..cfg.wrong_answers))
                    };
                    Candidate {
                        probe_score: sigmoid(raw - d / 2.0),
                        answer,
                        correct: Some(correct),
                    }
                })
                .collect();
            ProblemGroup {
                problem_id: format!("q{p:04}"),
                candidates,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            n_records: 40,
            n_layers: 4,
            hidden_dim: 8,
            planted_layer: 2,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn analytic_values() {
        assert_eq!(analytic_auroc(0.0, 1.0), 0.5);
        // quadrature and Monte Carlo both give 0.92135 for delta 2, sigma 1
        assert!((analytic_auroc(2.0, 1.0) - 0.92135).abs() < 1e-4);
        assert!(analytic_auroc(10.0 * 2f64.sqrt(), 1.0) >= 0.9999999);
    }

    #[test]
    fn monte_carlo_agrees_with_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 400_000;
        let wins = (0..n)
            .filter(|_| {
                let pos: f64 = 2.0 + rng.sample::<f64, _>(StandardNormal);
                let neg: f64 = rng.sample(StandardNormal);
                pos > neg
            })
            .count();
        let mc = wins as f64 / n as f64;
        // binomial standard error ~4.3e-4
        assert!((mc - analytic_auroc(2.0, 1.0)).abs() < 2e-3);
    }

    #[test]
    fn deterministic() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a.manifest_bytes().unwrap(), b.manifest_bytes().unwrap());
        assert_eq!(a.blob_bytes(), b.blob_bytes());
        let mut other = small();
        other.seed = 1;
        assert_ne!(generate(&other).unwrap().blob_bytes(), a.blob_bytes());
    }

    #[test]
    fn records_are_consistent() {
        let ds = generate(&small()).unwrap();
        assert_eq!(ds.len(), 40);
        assert_eq!(ds.num_layers(), 4);
        for (i, r) in ds.records().iter().enumerate() {
            assert!((3..=5).contains(&r.num_steps()));
            assert!(r.step_text(0).unwrap().starts_with("Step 1:"));
            for k in 0..r.num_steps() {
                assert!(ds.vector(i, VectorSlot::step_end(k, 3)).is_some());
            }
        }
        let labels = ds.labels();
        assert!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
    }

    #[test]
    fn multi_sample_problems() {
        let cfg = SynthConfig {
            samples_per_problem: 5,
            n_records: 20,
            ..small()
        };
        let ds = generate(&cfg).unwrap();
        let idx: Vec<u32> = ds.records().iter().map(|r| r.sample_index).collect();
        assert_eq!(&idx[..5], &[0, 1, 2, 3, 4]);
        assert!(ds.records().iter().all(|r| r.temperature == 0.7));
        assert_eq!(ds.records()[4].problem_id, ds.records()[0].problem_id);
        assert_ne!(ds.records()[5].problem_id, ds.records()[0].problem_id);
    }

    #[test]
    fn problem_level_samples_share_vectors() {
        let cfg = SynthConfig {
            samples_per_problem: 4,
            n_records: 16,
            signal_level: SignalLevel::Problem,
            ..small()
        };
        let ds = generate(&cfg).unwrap();
        let slot = VectorSlot::trace_last(2);
        assert_eq!(ds.vector(0, slot), ds.vector(3, slot));
        assert_ne!(ds.vector(0, slot), ds.vector(4, slot));
    }

    #[test]
    fn leak_inserts_markers() {
        let cfg = SynthConfig {
            text_leak: 1.0,
            ..small()
        };
        let ds = generate(&cfg).unwrap();
        for r in ds.records() {
            let first = r.step_text(0).unwrap();
            let marker = if r.is_error() {
                WRONG_MARKER
            } else {
                CORRECT_MARKER
            };
            assert!(first.ends_with(marker));
        }
        let none = generate(&small()).unwrap();
        assert!(none.records().iter().all(
            |r| !r.trace_text.contains(WRONG_MARKER) && !r.trace_text.contains(CORRECT_MARKER)
        ));
    }

    #[test]
    fn invalid_configs_rejected() {
        for cfg in [
            SynthConfig {
                error_rate: 0.0,
                ..small()
            },
            SynthConfig {
                noise_sigma: 0.0,
                ..small()
            },
            SynthConfig {
                offset_delta: -1.0,
                ..small()
            },
            SynthConfig {
                planted_layer: 4,
                ..small()
            },
            SynthConfig {
                steps_min: 0,
                ..small()
            },
        ] {
            assert!(generate(&cfg).is_err());
        }
    }

    #[test]
    fn regime_profiles() {
        assert_eq!(SynthRegime::FrontLoaded.scale(0, 4), 1.0);
        assert_eq!(SynthRegime::FrontLoaded.scale(2, 4), 0.25);
        assert!((SynthRegime::Accumulating.scale(0, 5) - 0.2).abs() < 1e-15);
        assert!((SynthRegime::Accumulating.scale(4, 5) - 1.0).abs() < 1e-15);
        assert_eq!(SynthRegime::None.scale(3, 5), 1.0);
    }

    #[test]
    fn matched_leak_inverts_ideal_auroc() {
        for target in [0.6, 0.75, 0.921] {
            let q = matched_text_leak(target);
            assert!((0.5 + q - q * q / 2.0 - target).abs() < 1e-12);
        }
    }

    #[test]
    fn null_band_brackets_half() {
        let (lo, hi) = null_band(80, 120);
        assert!(lo < 0.5 && hi > 0.5);
        let se = null_auroc_se(80, 120);
        assert!(0.5 - lo < 3.0 * se && hi - 0.5 < 3.0 * se);
        assert_eq!(null_band(80, 120), (lo, hi));
    }
}
