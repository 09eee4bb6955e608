//! Vector transforms applied during generation, best-of-N selection,
//! self-correction policies and verifier routing.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::numerics::{dot, norm};
use crate::report::{real, Column, ColumnType, Provenance, Report, ReportKind};

fn check_dims(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok(())
}

/// `h - alpha * (h . w_hat) * w_hat` with `w_hat = w / |w|`.
pub fn steer(h: &[f64], w: &[f64], alpha: f64) -> Result<Vec<f64>> {
    check_dims(h, w)?;
    let n = norm(w);
    if n == 0.0 || !n.is_finite() {
        return Err(Error::Degenerate("steering direction has zero norm".into()));
    }
    let w_hat: Vec<f64> = w.iter().map(|x| x / n).collect();
    let proj = dot(h, &w_hat);
    Ok(h.iter()
        .zip(&w_hat)
        .map(|(a, u)| a - alpha * proj * u)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatchMode {
    Replace,
    Blend,
    SubtractError,
}

/// `(1 - alpha) * h_wrong + alpha * h_correct`.
pub fn blend(h_wrong: &[f64], h_correct: &[f64], alpha: f64) -> Result<Vec<f64>> {
    check_dims(h_wrong, h_correct)?;
    Ok(h_wrong
        .iter()
        .zip(h_correct)
        .map(|(w, c)| (1.0 - alpha) * w + alpha * c)
        .collect())
}

/// Patches donor states into `h_wrong`. `SubtractError` ignores the donor and
/// steers along `error_direction`.
pub fn patch(
    h_wrong: &[f64],
    h_correct: &[f64],
    alpha: f64,
    mode: PatchMode,
    error_direction: Option<&[f64]>,
) -> Result<Vec<f64>> {
    match mode {
        PatchMode::Replace => blend(h_wrong, h_correct, 1.0),
        PatchMode::Blend => blend(h_wrong, h_correct, alpha),
        PatchMode::SubtractError => {
            let w = error_direction.ok_or_else(|| {
                Error::InvalidArgument("subtract_error patching needs the probe direction".into())
            })?;
            steer(h_wrong, w, alpha)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selector {
    Greedy,
    Random,
    MajorityVote,
    ProbeMin,
    Oracle,
}

impl Selector {
    pub const ALL: [Selector; 5] = [
        Selector::Greedy,
        Selector::Random,
        Selector::MajorityVote,
        Selector::ProbeMin,
        Selector::Oracle,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Selector::Greedy => "greedy",
            Selector::Random => "random",
            Selector::MajorityVote => "majority_vote",
            Selector::ProbeMin => "probe_min",
            Selector::Oracle => "oracle",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionConfig {
    pub alpha: f64,
    pub tau: f64,
    pub n: usize,
    pub selector: Selector,
    pub patch_mode: PatchMode,
    /// Interpreted by the generation harness.
    pub position_policy: String,
}

impl Default for InterventionConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            tau: 0.5,
            n: 8,
            selector: Selector::ProbeMin,
            patch_mode: PatchMode::Blend,
            position_policy: "probe_layer:every_token".into(),
        }
    }
}

impl InterventionConfig {
    /// Steering coefficients swept by default.
    pub const STEER_ALPHAS: [f64; 5] = [0.5, 1.0, 2.0, 5.0, 8.0];
    pub const BLEND_ALPHAS: [f64; 2] = [0.3, 0.5];
    pub const SUBTRACT_ALPHAS: [f64; 2] = [0.5, 2.0];

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "alpha must be >= 0, got {}",
                self.alpha
            )));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "tau must lie in (0, 1), got {}",
                self.tau
            )));
        }
        if self.n == 0 {
            return Err(Error::InvalidArgument("N must be at least 1".into()));
        }
        Ok(())
    }
}

/// One generated trace offered to a selector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub probe_score: f64,
    /// Canonical final answer.
    pub answer: String,
    pub correct: Option<bool>,
}

fn argmin_score(cands: &[Candidate], pool: impl Iterator<Item = usize>) -> Option<usize> {
    pool.fold(None, |best: Option<usize>, i| match best {
        Some(b) if cands[b].probe_score <= cands[i].probe_score => Some(b),
        _ => Some(i),
    })
}

/// Index of the chosen candidate. Index 0 is the greedy trace by convention.
pub fn select_best_of_n(cands: &[Candidate], selector: Selector, seed: u64) -> Result<usize> {
    if cands.is_empty() {
        return Err(Error::InvalidArgument("empty candidate list".into()));
    }
    Ok(match selector {
        Selector::Greedy => 0,
        Selector::Random => ChaCha8Rng::seed_from_u64(seed).random_range(0..cands.len()),
        Selector::ProbeMin => argmin_score(cands, 0..cands.len()).expect("non-empty"),
        Selector::MajorityVote => {
            let mut counts: HashMap<&str, usize> = HashMap::new();
            for c in cands {
                *counts.entry(c.answer.as_str()).or_default() += 1;
            }
            let top = counts.values().copied().max().expect("non-empty");
            argmin_score(
                cands,
                (0..cands.len()).filter(|&i| counts[cands[i].answer.as_str()] == top),
            )
            .expect("modal answer exists")
        }
        Selector::Oracle => {
            let mut first = None;
            for (i, c) in cands.iter().enumerate() {
                let ok = c.correct.ok_or_else(|| {
                    Error::InvalidArgument("oracle selector needs candidate labels".into())
                })?;
                if ok && first.is_none() {
                    first = Some(i);
                }
            }
            first.unwrap_or(0)
        }
    })
}

/// All candidates for one problem: index 0 greedy, the rest sampled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemGroup {
    pub problem_id: String,
    pub candidates: Vec<Candidate>,
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut z =
        seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Candidate indices used at size `n`: greedy plus the first `n - 1` entries
/// of a per-problem shuffle of the samples, so sets are nested in `n`.
pub fn nested_candidates(
    n_samples: usize,
    n: usize,
    seed: u64,
    problem_index: usize,
) -> Vec<usize> {
    let mut perm: Vec<usize> = (1..=n_samples).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(
        seed,
        problem_index as u64,
        0,
    )));
    std::iter::once(0)
        .chain(perm.into_iter().take(n - 1))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestOfNResult {
    /// Accuracy keyed by `(selector, N)`.
    pub accuracy: BTreeMap<(Selector, usize), f64>,
    pub n_problems: usize,
    pub excluded: usize,
    pub seed: u64,
}

impl BestOfNResult {
    pub fn get(&self, selector: Selector, n: usize) -> Option<f64> {
        self.accuracy.get(&(selector, n)).copied()
    }

    pub fn to_report(&self) -> Result<Report> {
        let mut r = Report::new(
            ReportKind::BestOfN,
            vec![
                Column::new("selector", ColumnType::Text),
                Column::new("n", ColumnType::Integer),
                Column::new("accuracy", ColumnType::Real),
                Column::new("n_problems", ColumnType::Integer),
            ],
            Provenance::default()
                .seed("subsample", self.seed)
                .set("excluded_problems", self.excluded)
                .note("candidate 0 is the greedy trace; larger N extends the same sample order"),
        );
        for (&(sel, n), &acc) in &self.accuracy {
            r.push(vec![
                json!(sel.as_str()),
                json!(n),
                real(acc),
                json!(self.n_problems),
            ])?;
        }
        Ok(r)
    }
}

/// Accuracy of each selector at each N over problems with enough samples.
pub fn evaluate_best_of_n(
    groups: &[ProblemGroup],
    selectors: &[Selector],
    ns: &[usize],
    seed: u64,
) -> Result<BestOfNResult> {
    let max_n = *ns
        .iter()
        .max()
        .ok_or_else(|| Error::InvalidArgument("no N values".into()))?;
    if ns.contains(&0) {
        return Err(Error::InvalidArgument("N must be at least 1".into()));
    }
    let mut hits: BTreeMap<(Selector, usize), usize> = BTreeMap::new();
    let (mut used, mut excluded) = (0, 0);
    for (pi, g) in groups.iter().enumerate() {
        if g.candidates.len() < max_n {
            excluded += 1;
            continue;
        }
        if g.candidates.iter().any(|c| c.correct.is_none()) {
            return Err(Error::InvalidArgument(format!(
                "problem {} has unlabeled candidates",
                g.problem_id
            )));
        }
        used += 1;
        for &n in ns {
            let idx = nested_candidates(g.candidates.len() - 1, n, seed, pi);
            let subset: Vec<Candidate> = idx.iter().map(|&i| g.candidates[i].clone()).collect();
            for &sel in selectors {
                let pick = select_best_of_n(&subset, sel, mix(seed, pi as u64, n as u64 + 1))?;
                *hits.entry((sel, n)).or_default() +=
                    usize::from(subset[pick].correct == Some(true));
            }
        }
    }
    if used == 0 {
        return Err(Error::InvalidArgument(format!(
            "no problem has the {max_n} candidates needed (excluded {excluded})"
        )));
    }
    Ok(BestOfNResult {
        accuracy: hits
            .into_iter()
            .map(|(k, h)| (k, h as f64 / used as f64))
            .collect(),
        n_problems: used,
        excluded,
        seed,
    })
}

pub const OUTCOME_SCHEMA_VERSION: u32 = 1;

/// One intervention or revision outcome, as exchanged with the generation harness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRecord {
    pub schema_version: u32,
    pub problem_id: String,
    pub strategy: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    pub baseline_correct: bool,
    /// Correctness after the intervention or revision, when it was run.
    pub post_correct: Option<bool>,
    /// Scores of the baseline trace and, if present, the post trace.
    pub probe_scores: Vec<f64>,
}

impl OutcomeRecord {
    pub fn candidate_count(&self) -> usize {
        1 + usize::from(self.post_correct.is_some())
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != OUTCOME_SCHEMA_VERSION {
            return Err(Error::VersionMismatch {
                found: self.schema_version,
                expected: OUTCOME_SCHEMA_VERSION,
            });
        }
        if self.probe_scores.len() != self.candidate_count() {
            return Err(Error::InvalidArgument(format!(
                "problem {}: {} probe scores for {} candidates",
                self.problem_id,
                self.probe_scores.len(),
                self.candidate_count()
            )));
        }
        if self.probe_scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite(format!(
                "probe scores of problem {}",
                self.problem_id
            )));
        }
        Ok(())
    }
}

pub fn parse_outcomes(text: &str) -> Result<Vec<OutcomeRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: OutcomeRecord = serde_json::from_str(line)
            .map_err(|e| Error::InvalidArgument(format!("outcomes line {}: {e}", i + 1)))?;
        rec.validate()
            .map_err(|e| Error::InvalidArgument(format!("outcomes line {}: {e}", i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn read_outcomes(path: impl AsRef<Path>) -> Result<Vec<OutcomeRecord>> {
    let path = path.as_ref();
    parse_outcomes(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

pub fn outcomes_to_jsonl(records: &[OutcomeRecord]) -> Result<String> {
    let mut s = String::new();
    for r in records {
        r.validate()?;
        s.push_str(&serde_json::to_string(r)?);
        s.push('\n');
    }
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetryStrategy {
    NoRetry,
    AlwaysRetry,
    /// Keep whichever of original and revision has the lower probe score.
    BestOfTwo,
    /// Revise only when the original's probe score exceeds tau.
    ProbeTriggered,
    /// Revise only when the original is wrong.
    OracleTriggered,
}

impl RetryStrategy {
    pub const ALL: [RetryStrategy; 5] = [
        RetryStrategy::NoRetry,
        RetryStrategy::AlwaysRetry,
        RetryStrategy::BestOfTwo,
        RetryStrategy::ProbeTriggered,
        RetryStrategy::OracleTriggered,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RetryStrategy::NoRetry => "no_retry",
            RetryStrategy::AlwaysRetry => "always_retry",
            RetryStrategy::BestOfTwo => "best_of_two",
            RetryStrategy::ProbeTriggered => "probe_triggered",
            RetryStrategy::OracleTriggered => "oracle_triggered",
        }
    }

    /// Final correctness and whether the revision was used.
    fn apply(self, o: &OutcomeRecord, tau: f64) -> Result<(bool, bool)> {
        let revise = match self {
            RetryStrategy::NoRetry => false,
            RetryStrategy::AlwaysRetry => true,
            RetryStrategy::BestOfTwo => {
                let post = o.probe_scores.get(1).copied();
                match post {
                    Some(p) => p < o.probe_scores[0],
                    None => return Err(missing_revision(self, o)),
                }
            }
            RetryStrategy::ProbeTriggered => o.probe_scores[0] > tau,
            RetryStrategy::OracleTriggered => !o.baseline_correct,
        };
        if !revise {
            return Ok((o.baseline_correct, false));
        }
        let post = o.post_correct.ok_or_else(|| missing_revision(self, o))?;
        Ok((post, true))
    }
}

fn missing_revision(s: RetryStrategy, o: &OutcomeRecord) -> Error {
    Error::InvalidArgument(format!(
        "strategy {} needs a revision for problem {}",
        s.as_str(),
        o.problem_id
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryOutcome {
    pub strategy: RetryStrategy,
    pub accuracy: f64,
    pub retried: usize,
}

pub fn self_correction_outcomes(
    outcomes: &[OutcomeRecord],
    strategies: &[RetryStrategy],
    tau: f64,
) -> Result<Vec<RetryOutcome>> {
    if outcomes.is_empty() {
        return Err(Error::InvalidArgument("no outcomes".into()));
    }
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "tau must lie in (0, 1), got {tau}"
        )));
    }
    strategies
        .iter()
        .map(|&s| {
            let (mut ok, mut retried) = (0, 0);
            for o in outcomes {
                o.validate()?;
                let (c, r) = s.apply(o, tau)?;
                ok += usize::from(c);
                retried += usize::from(r);
            }
            Ok(RetryOutcome {
                strategy: s,
                accuracy: ok as f64 / outcomes.len() as f64,
                retried,
            })
        })
        .collect()
}

pub fn evaluate_self_correction(
    outcomes: &[OutcomeRecord],
    strategies: &[RetryStrategy],
    tau: f64,
) -> Result<Report> {
    let rows = self_correction_outcomes(outcomes, strategies, tau)?;
    let base =
        outcomes.iter().filter(|o| o.baseline_correct).count() as f64 / outcomes.len() as f64;
    let mut r = Report::new(
        ReportKind::SelfCorrection,
        vec![
            Column::new("strategy", ColumnType::Text),
            Column::new("accuracy", ColumnType::Real),
            Column::new("delta", ColumnType::Real),
            Column::new("retried", ColumnType::Integer),
            Column::new("n", ColumnType::Integer),
        ],
        Provenance::default().set("tau", tau),
    );
    for row in rows {
        r.push(vec![
            json!(row.strategy.as_str()),
            real(row.accuracy),
            real(row.accuracy - base),
            json!(row.retried),
            json!(outcomes.len()),
        ])?;
    }
    Ok(r)
}

/// Baseline versus post-intervention accuracy per `(strategy, alpha)`.
pub fn evaluate_interventions(outcomes: &[OutcomeRecord]) -> Result<Report> {
    let mut groups: BTreeMap<(String, Option<u64>), (usize, usize, usize)> = BTreeMap::new();
    let mut alphas: HashMap<u64, f64> = HashMap::new();
    for o in outcomes {
        o.validate()?;
        let post = o.post_correct.ok_or_else(|| {
            Error::InvalidArgument(format!(
                "problem {} has no post-intervention result",
                o.problem_id
            ))
        })?;
        let key = o.alpha.map(|a| {
            alphas.insert(a.to_bits(), a);
            a.to_bits()
        });
        let e = groups.entry((o.strategy.clone(), key)).or_default();
        e.0 += 1;
        e.1 += usize::from(o.baseline_correct);
        e.2 += usize::from(post);
    }
    let mut r = Report::new(
        ReportKind::SelfCorrection,
        vec![
            Column::new("strategy", ColumnType::Text),
            Column::nullable("alpha", ColumnType::Real),
            Column::new("baseline_accuracy", ColumnType::Real),
            Column::new("post_accuracy", ColumnType::Real),
            Column::new("delta", ColumnType::Real),
            Column::new("n", ColumnType::Integer),
        ],
        Provenance::default(),
    );
    for ((strategy, key), (n, b, p)) in groups {
        let (b, p) = (b as f64 / n as f64, p as f64 / n as f64);
        r.push(vec![
            json!(strategy),
            key.map_or(serde_json::Value::Null, |k| real(alphas[&k])),
            real(b),
            real(p),
            real(p - b),
            json!(n),
        ])?;
    }
    Ok(r)
}

/// The `ceil(r * n)` highest-scoring indices (ties to the lower index), sorted.
pub fn route_to_verifier(scores: &[f64], r: f64) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::InvalidArgument(format!(
            "routing fraction must lie in [0, 1], got {r}"
        )));
    }
    let k = ((r * scores.len() as f64) - 1e-9).ceil().max(0.0) as usize;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut out: Vec<usize> = order.into_iter().take(k.min(scores.len())).collect();
    out.sort_unstable();
    Ok(out)
}

/// Routing coverage at each fraction: errors caught and precision.
pub fn routing_report(scores: &[f64], is_error: &[bool], fractions: &[f64]) -> Result<Report> {
    check_dims(scores, &is_error.iter().map(|_| 0.0).collect::<Vec<_>>())?;
    let total_err = is_error.iter().filter(|&&e| e).count();
    let mut r = Report::new(
        ReportKind::Routing,
        vec![
            Column::new("fraction", ColumnType::Real),
            Column::new("flagged", ColumnType::Integer),
            Column::new("errors_caught", ColumnType::Integer),
            Column::nullable("recall", ColumnType::Real),
            Column::nullable("precision", ColumnType::Real),
        ],
        Provenance::default()
            .set("n_records", scores.len())
            .set("n_errors", total_err),
    );
    for &f in fractions {
        let flagged = route_to_verifier(scores, f)?;
        let caught = flagged.iter().filter(|&&i| is_error[i]).count();
        r.push(vec![
            real(f),
            json!(flagged.len()),
            json!(caught),
            if total_err == 0 {
                serde_json::Value::Null
            } else {
                real(caught as f64 / total_err as f64)
            },
            if flagged.is_empty() {
                serde_json::Value::Null
            } else {
                real(caught as f64 / flagged.len() as f64)
            },
        ])?;
    }
    Ok(r)
}
