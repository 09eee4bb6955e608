//! Comparison detectors: self-consistency, CCS, and scalar signals recorded
//! at extraction time (verbalized confidence, sequence log-prob, P(True)).

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::numerics::{auroc_value, bootstrap_ci, dot, sigmoid, MetricResult};
use crate::probe::{eval_probe, stratified_subsample, Probe};
use crate::report::{opt_real, real, Column, ColumnType, Provenance, Report, ReportKind};
use crate::trace_store::{canonicalize_answer, group_by_problem, Dataset, TraceRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMethod {
    Probe,
    SelfConsistency,
    Ccs,
    PTrue,
    VerbalizedConfidence,
    SeqLogprob,
}

impl BaselineMethod {
    pub const ALL: [BaselineMethod; 6] = [
        BaselineMethod::Probe,
        BaselineMethod::SelfConsistency,
        BaselineMethod::Ccs,
        BaselineMethod::PTrue,
        BaselineMethod::VerbalizedConfidence,
        BaselineMethod::SeqLogprob,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BaselineMethod::Probe => "probe",
            BaselineMethod::SelfConsistency => "self_consistency",
            BaselineMethod::Ccs => "ccs",
            BaselineMethod::PTrue => "p_true",
            BaselineMethod::VerbalizedConfidence => "verbalized_confidence",
            BaselineMethod::SeqLogprob => "seq_logprob",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.as_str() == s)
    }

    /// Inference cost annotation.
    pub fn cost(self) -> &'static str {
        match self {
            BaselineMethod::Probe | BaselineMethod::Ccs => "1 fwd pass",
            BaselineMethod::SelfConsistency => "5x gen",
            BaselineMethod::PTrue | BaselineMethod::VerbalizedConfidence => "1 query",
            BaselineMethod::SeqLogprob => "free",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    HigherMeansError,
    HigherMeansCorrect,
}

impl Orientation {
    pub fn flipped(self) -> Self {
        match self {
            Orientation::HigherMeansError => Orientation::HigherMeansCorrect,
            Orientation::HigherMeansCorrect => Orientation::HigherMeansError,
        }
    }
}

/// Raw per-record scores of one method; `None` marks excluded records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineScores {
    pub method: BaselineMethod,
    pub scores: Vec<Option<f64>>,
    pub orientation: Orientation,
    pub excluded: usize,
}

impl BaselineScores {
    /// Scores oriented so that higher means more likely wrong.
    pub fn error_scores(&self) -> Vec<Option<f64>> {
        self.scores
            .iter()
            .map(|s| match self.orientation {
                Orientation::HigherMeansError => *s,
                Orientation::HigherMeansCorrect => s.map(|v| -v),
            })
            .collect()
    }

    fn paired(&self, labels: &[bool]) -> Result<(Vec<f64>, Vec<bool>)> {
        if labels.len() != self.scores.len() {
            return Err(Error::DimensionMismatch {
                expected: self.scores.len(),
                found: labels.len(),
            });
        }
        Ok(self
            .error_scores()
            .into_iter()
            .zip(labels)
            .filter_map(|(s, &l)| s.map(|s| (s, l)))
            .unzip())
    }

    /// Error-detection AUROC over the non-excluded records.
    pub fn auroc(&self, labels: &[bool]) -> Result<f64> {
        let (s, l) = self.paired(labels)?;
        auroc_value(&s, &l)
    }

    pub fn auroc_ci(&self, labels: &[bool], n_boot: usize, seed: u64) -> Result<MetricResult> {
        let (s, l) = self.paired(labels)?;
        bootstrap_ci(&s, &l, n_boot, seed)
    }
}

/// One minus the share of same-problem samples (self included) that agree
/// with each trace's canonical answer. Singleton problems are excluded.
pub fn self_consistency_score(records: &[TraceRecord]) -> BaselineScores {
    let mut scores = vec![None; records.len()];
    let mut excluded = 0;
    for (_, idx) in group_by_problem(records) {
        if idx.len() < 2 {
            excluded += idx.len();
            continue;
        }
        let answers: Vec<String> = idx
            .iter()
            .map(|&i| canonicalize_answer(&records[i].final_answer))
            .collect();
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for a in &answers {
            *counts.entry(a).or_default() += 1;
        }
        for (&i, a) in idx.iter().zip(&answers) {
            scores[i] = Some(1.0 - counts[a.as_str()] as f64 / idx.len() as f64);
        }
    }
    BaselineScores {
        method: BaselineMethod::SelfConsistency,
        scores,
        orientation: Orientation::HigherMeansError,
        excluded,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalarField {
    VerbalizedConfidence,
    SeqLogprob,
    PTrue,
}

impl ScalarField {
    pub fn method(self) -> BaselineMethod {
        match self {
            ScalarField::VerbalizedConfidence => BaselineMethod::VerbalizedConfidence,
            ScalarField::SeqLogprob => BaselineMethod::SeqLogprob,
            ScalarField::PTrue => BaselineMethod::PTrue,
        }
    }

    fn read(self, r: &TraceRecord) -> Option<f64> {
        match self {
            ScalarField::VerbalizedConfidence => r.verbalized_confidence.map(f64::from),
            ScalarField::SeqLogprob => r.sequence_logprob,
            ScalarField::PTrue => r.p_true,
        }
    }
}

pub const DEFAULT_MIN_COVERAGE: f64 = 0.9;

/// Reads a higher-means-correct scalar off the records.
pub fn ingest_scalar_baseline(
    records: &[TraceRecord],
    field: ScalarField,
    min_coverage: f64,
) -> Result<BaselineScores> {
    let scores: Vec<Option<f64>> = records.iter().map(|r| field.read(r)).collect();
    let present = scores.iter().filter(|s| s.is_some()).count();
    let name = field.method().as_str();
    if present == 0 {
        return Err(Error::InvalidArgument(format!(
            "field {name} is absent from every record"
        )));
    }
    let coverage = present as f64 / records.len() as f64;
    if coverage < min_coverage {
        return Err(Error::InvalidArgument(format!(
            "field {name} present on {present}/{} records, below the {:.0}% coverage threshold",
            records.len(),
            min_coverage * 100.0
        )));
    }
    Ok(BaselineScores {
        method: field.method(),
        excluded: records.len() - present,
        scores,
        orientation: Orientation::HigherMeansCorrect,
    })
}

/// Hidden states for a statement and its negation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastPair {
    pub positive: Vec<f64>,
    pub negative: Vec<f64>,
}

/// One line of a contrast-pair file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastPairLine {
    pub record_id: String,
    pub positive: Vec<f64>,
    pub negative: Vec<f64>,
}

/// Reads JSON-lines contrast pairs and orders them like the dataset records.
pub fn parse_contrast_pairs(text: &str, dataset: &Dataset) -> Result<Vec<ContrastPair>> {
    let mut by_id: HashMap<String, ContrastPair> = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let l: ContrastPairLine = serde_json::from_str(line)
            .map_err(|e| Error::InvalidArgument(format!("contrast pairs line {}: {e}", i + 1)))?;
        if by_id
            .insert(
                l.record_id.clone(),
                ContrastPair {
                    positive: l.positive,
                    negative: l.negative,
                },
            )
            .is_some()
        {
            return Err(Error::record(&l.record_id, "contrast pair", "duplicate"));
        }
    }
    dataset
        .records()
        .iter()
        .map(|r| {
            by_id
                .remove(&r.record_id)
                .ok_or_else(|| Error::record(&r.record_id, "contrast pair", "missing"))
        })
        .collect()
}

pub fn contrast_pairs_to_jsonl(pairs: &[ContrastPair], dataset: &Dataset) -> Result<String> {
    if pairs.len() != dataset.len() {
        return Err(Error::DimensionMismatch {
            expected: dataset.len(),
            found: pairs.len(),
        });
    }
    let mut s = String::new();
    for (p, r) in pairs.iter().zip(dataset.records()) {
        let line = ContrastPairLine {
            record_id: r.record_id.clone(),
            positive: p.positive.clone(),
            negative: p.negative.clone(),
        };
        s.push_str(&serde_json::to_string(&line)?);
        s.push('\n');
    }
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcsConfig {
    pub restarts: usize,
    pub max_iter: usize,
    pub seed: u64,
    /// Scale of the Gaussian weight initialization (times 1/sqrt(d)).
    pub init_scale: f64,
}

impl Default for CcsConfig {
    fn default() -> Self {
        Self {
            restarts: 10,
            max_iter: 1000,
            seed: 0,
            init_scale: 0.1,
        }
    }
}

/// Unsupervised contrast-consistent probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcsProbe {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub mean_positive: Vec<f64>,
    pub mean_negative: Vec<f64>,
    /// Objective value at the returned parameters.
    pub loss: f64,
    /// Objective at each restart's initialization.
    pub init_losses: Vec<f64>,
    /// Set when calibration found the truth orientation reversed.
    pub flipped: bool,
}

struct Centered {
    pos: Vec<Vec<f64>>,
    neg: Vec<Vec<f64>>,
}

fn centered(pairs: &[ContrastPair], mp: &[f64], mn: &[f64]) -> Centered {
    let sub = |v: &[f64], m: &[f64]| v.iter().zip(m).map(|(a, b)| a - b).collect::<Vec<_>>();
    Centered {
        pos: pairs.iter().map(|p| sub(&p.positive, mp)).collect(),
        neg: pairs.iter().map(|p| sub(&p.negative, mn)).collect(),
    }
}

fn side_mean(rows: impl Iterator<Item = Vec<f64>>, d: usize, n: usize) -> Vec<f64> {
    let mut m = vec![0.0; d];
    for r in rows {
        for (a, b) in m.iter_mut().zip(r) {
            *a += b;
        }
    }
    m.iter_mut().for_each(|v| *v /= n as f64);
    m
}

/// Mean over pairs of `(p+ - (1 - p-))^2 + min(p+, p-)^2`.
pub fn ccs_objective(pos: &[Vec<f64>], neg: &[Vec<f64>], w: &[f64], b: f64) -> f64 {
    let n = pos.len() as f64;
    pos.iter()
        .zip(neg)
        .map(|(xp, xn)| {
            let pp = sigmoid(dot(w, xp) + b);
            let pn = sigmoid(dot(w, xn) + b);
            (pp - (1.0 - pn)).powi(2) + pp.min(pn).powi(2)
        })
        .sum::<f64>()
        / n
}

fn ccs_gradient(pos: &[Vec<f64>], neg: &[Vec<f64>], w: &[f64], b: f64) -> (Vec<f64>, f64) {
    let n = pos.len() as f64;
    let mut gw = vec![0.0; w.len()];
    let mut gb = 0.0;
    for (xp, xn) in pos.iter().zip(neg) {
        let pp = sigmoid(dot(w, xp) + b);
        let pn = sigmoid(dot(w, xn) + b);
        let cons = 2.0 * (pp + pn - 1.0);
        let (conf_p, conf_n) = if pp <= pn {
            (2.0 * pp, 0.0)
        } else {
            (0.0, 2.0 * pn)
        };
        let dzp = (cons + conf_p) * pp * (1.0 - pp);
        let dzn = (cons + conf_n) * pn * (1.0 - pn);
        for ((g, a), c) in gw.iter_mut().zip(xp).zip(xn) {
            *g += dzp * a + dzn * c;
        }
        gb += dzp + dzn;
    }
    gw.iter_mut().for_each(|g| *g /= n);
    (gw, gb / n)
}

/// Gradient descent with backtracking; never returns a worse point than the start.
fn minimize(c: &Centered, mut w: Vec<f64>, mut b: f64, max_iter: usize) -> (Vec<f64>, f64, f64) {
    let mut f = ccs_objective(&c.pos, &c.neg, &w, b);
    let mut step = 1.0;
    for _ in 0..max_iter {
        let (gw, gb) = ccs_gradient(&c.pos, &c.neg, &w, b);
        let gnorm2 = dot(&gw, &gw) + gb * gb;
        if gnorm2 < 1e-20 {
            break;
        }
        let mut accepted = false;
        while step > 1e-12 {
            let w2: Vec<f64> = w.iter().zip(&gw).map(|(a, g)| a - step * g).collect();
            let b2 = b - step * gb;
            let f2 = ccs_objective(&c.pos, &c.neg, &w2, b2);
            if f2 <= f - 1e-4 * step * gnorm2 {
                (w, b, f) = (w2, b2, f2);
                accepted = true;
                step *= 2.0;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    (w, b, f)
}

/// Best of `restarts` random initializations; no labels are used.
pub fn train_ccs(pairs: &[ContrastPair], cfg: &CcsConfig) -> Result<CcsProbe> {
    if pairs.len() < 10 {
        return Err(Error::InvalidArgument(format!(
            "CCS needs at least 10 contrast pairs, got {}",
            pairs.len()
        )));
    }
    if cfg.restarts == 0 {
        return Err(Error::InvalidArgument(
            "CCS needs at least one restart".into(),
        ));
    }
    let d = pairs[0].positive.len();
    for p in pairs {
        if p.positive.len() != d || p.negative.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: if p.positive.len() != d {
                    p.positive.len()
                } else {
                    p.negative.len()
                },
            });
        }
        if p.positive.iter().chain(&p.negative).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("contrast pair".into()));
        }
    }
    let n = pairs.len();
    let mp = side_mean(pairs.iter().map(|p| p.positive.clone()), d, n);
    let mn = side_mean(pairs.iter().map(|p| p.negative.clone()), d, n);
    let c = centered(pairs, &mp, &mn);
    if c.pos
        .iter()
        .chain(&c.neg)
        .all(|v| v.iter().all(|x| x.abs() < 1e-12))
    {
        return Err(Error::Degenerate("all contrast pairs are identical".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let init = Normal::new(0.0, cfg.init_scale / (d as f64).sqrt())
        .map_err(|e| Error::InvalidArgument(format!("init scale: {e}")))?;
    let mut best: Option<(Vec<f64>, f64, f64)> = None;
    let mut init_losses = Vec::with_capacity(cfg.restarts);
    for _ in 0..cfg.restarts {
        let w0: Vec<f64> = (0..d).map(|_| init.sample(&mut rng)).collect();
        init_losses.push(ccs_objective(&c.pos, &c.neg, &w0, 0.0));
        let cand = minimize(&c, w0, 0.0, cfg.max_iter);
        if best.as_ref().is_none_or(|b| cand.2 < b.2) {
            best = Some(cand);
        }
    }
    let (weights, bias, loss) = best.expect("at least one restart");
    Ok(CcsProbe {
        weights,
        bias,
        mean_positive: mp,
        mean_negative: mn,
        loss,
        init_losses,
        flipped: false,
    })
}

impl CcsProbe {
    /// Averaged probability that the positive statement holds.
    pub fn truth_probability(&self, pair: &ContrastPair) -> f64 {
        let xp: Vec<f64> = pair
            .positive
            .iter()
            .zip(&self.mean_positive)
            .map(|(a, b)| a - b)
            .collect();
        let xn: Vec<f64> = pair
            .negative
            .iter()
            .zip(&self.mean_negative)
            .map(|(a, b)| a - b)
            .collect();
        let pp = sigmoid(dot(&self.weights, &xp) + self.bias);
        let pn = sigmoid(dot(&self.weights, &xn) + self.bias);
        0.5 * (pp + 1.0 - pn)
    }

    /// Error score: probability that the "answer is correct" statement is false.
    pub fn error_score(&self, pair: &ContrastPair) -> f64 {
        let t = self.truth_probability(pair);
        if self.flipped {
            t
        } else {
            1.0 - t
        }
    }

    /// Sign fix against a labeled subset (`true` = wrong answer).
    pub fn calibrate(&mut self, pairs: &[ContrastPair], is_error: &[bool]) -> Result<()> {
        self.flipped = false;
        let s: Vec<f64> = pairs.iter().map(|p| self.error_score(p)).collect();
        if auroc_value(&s, is_error)? < 0.5 {
            self.flipped = true;
        }
        Ok(())
    }
}

/// Trains CCS on every pair, fixes its sign on a stratified labeled subset and
/// scores all records.
pub fn ccs_scores(
    pairs: &[ContrastPair],
    labels: &[bool],
    cfg: &CcsConfig,
    calibration_size: usize,
) -> Result<(CcsProbe, BaselineScores)> {
    if pairs.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            found: pairs.len(),
        });
    }
    let mut probe = train_ccs(pairs, cfg)?;
    let cal = stratified_subsample(labels, calibration_size.min(labels.len()), cfg.seed)?;
    let cal_pairs: Vec<ContrastPair> = cal.iter().map(|&i| pairs[i].clone()).collect();
    let cal_labels: Vec<bool> = cal.iter().map(|&i| labels[i]).collect();
    probe.calibrate(&cal_pairs, &cal_labels)?;
    let scores = pairs.iter().map(|p| Some(probe.error_score(p))).collect();
    Ok((
        probe,
        BaselineScores {
            method: BaselineMethod::Ccs,
            scores,
            orientation: Orientation::HigherMeansError,
            excluded: 0,
        },
    ))
}

/// Optional inputs for [`baseline_report`].
#[derive(Debug, Clone, Default)]
pub struct BaselineInputs<'a> {
    pub probe: Option<&'a Probe>,
    pub ccs_pairs: Option<&'a [ContrastPair]>,
    pub ccs: CcsConfig,
    pub calibration_size: usize,
    pub min_coverage: f64,
    pub n_boot: usize,
    pub seed: u64,
}

impl BaselineInputs<'_> {
    pub fn new() -> Self {
        Self {
            calibration_size: 20,
            min_coverage: DEFAULT_MIN_COVERAGE,
            n_boot: crate::numerics::DEFAULT_BOOTSTRAP,
            ..Default::default()
        }
    }
}

fn method_metric(
    dataset: &Dataset,
    method: BaselineMethod,
    inputs: &BaselineInputs,
) -> Result<(MetricResult, usize)> {
    let labels = dataset.labels();
    let records = dataset.records();
    let scores = match method {
        BaselineMethod::Probe => {
            let probe = inputs.probe.ok_or_else(|| {
                Error::InvalidArgument("probe row requested without a probe".into())
            })?;
            return Ok((eval_probe(probe, dataset, inputs.n_boot, inputs.seed)?, 0));
        }
        BaselineMethod::SelfConsistency => {
            let s = self_consistency_score(records);
            if s.excluded == records.len() {
                return Err(Error::InvalidArgument(
                    "self-consistency needs problems with at least two sampled traces".into(),
                ));
            }
            s
        }
        BaselineMethod::Ccs => {
            let pairs = inputs.ccs_pairs.ok_or_else(|| {
                Error::InvalidArgument("CCS requested without contrast pairs".into())
            })?;
            ccs_scores(pairs, &labels, &inputs.ccs, inputs.calibration_size)?.1
        }
        BaselineMethod::PTrue => {
            ingest_scalar_baseline(records, ScalarField::PTrue, inputs.min_coverage)?
        }
        BaselineMethod::VerbalizedConfidence => ingest_scalar_baseline(
            records,
            ScalarField::VerbalizedConfidence,
            inputs.min_coverage,
        )?,
        BaselineMethod::SeqLogprob => {
            ingest_scalar_baseline(records, ScalarField::SeqLogprob, inputs.min_coverage)?
        }
    };
    Ok((
        scores.auroc_ci(&labels, inputs.n_boot, inputs.seed)?,
        scores.excluded,
    ))
}

/// One row per method; a failing method yields a row with its error message.
pub fn baseline_report(
    dataset: &Dataset,
    methods: &[BaselineMethod],
    inputs: &BaselineInputs,
) -> Result<Report> {
    let mut provenance = Provenance::default()
        .seed("bootstrap", inputs.seed)
        .set("n_boot", inputs.n_boot)
        .set("min_coverage", inputs.min_coverage);
    provenance.dataset_fingerprint = Some(dataset.fingerprint());
    provenance.probe_fingerprint = inputs.probe.map(|p| p.training_fingerprint.clone());
    if methods.contains(&BaselineMethod::Ccs) {
        provenance = provenance
            .seed("ccs", inputs.ccs.seed)
            .set("ccs_restarts", inputs.ccs.restarts)
            .set("ccs_calibration_size", inputs.calibration_size)
            .note("CCS contrast pairs are supplied externally; orientation fixed on a labeled calibration subset");
    }
    let mut report = Report::new(
        ReportKind::Baselines,
        vec![
            Column::new("method", ColumnType::Text),
            Column::nullable("auroc", ColumnType::Real),
            Column::nullable("ci_low", ColumnType::Real),
            Column::nullable("ci_high", ColumnType::Real),
            Column::nullable("n_scored", ColumnType::Integer),
            Column::nullable("excluded", ColumnType::Integer),
            Column::new("cost", ColumnType::Text),
            Column::new("status", ColumnType::Text),
        ],
        provenance,
    );
    for &m in methods {
        let row = match method_metric(dataset, m, inputs) {
            Ok((metric, excluded)) => vec![
                json!(m.as_str()),
                real(metric.auroc),
                opt_real(metric.ci_low),
                opt_real(metric.ci_high),
                json!(metric.n_pos + metric.n_neg),
                json!(excluded),
                json!(m.cost()),
                json!("ok"),
            ],
            Err(e) => vec![
                json!(m.as_str()),
                serde_json::Value::Null,
                serde_json::Value::Null,
                serde_json::Value::Null,
                serde_json::Value::Null,
                serde_json::Value::Null,
                json!(m.cost()),
                json!(format!("error: {e}")),
            ],
        };
        report.push(row)?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace_store::tests::record;

    fn with_problem(mut r: TraceRecord, pid: &str) -> TraceRecord {
        r.problem_id = pid.into();
        r
    }

    #[test]
    fn unanimity_scores_zero() {
        let recs: Vec<_> = (0..5)
            .map(|i| with_problem(record(&format!("r{i}"), "10", "10"), "p"))
            .collect();
        let s = self_consistency_score(&recs);
        assert!(s.scores.iter().all(|&v| v == Some(0.0)));
    }

    #[test]
    fn split_vote_counts() {
        let answers = ["a", "a", "a", "b", "b"];
        let recs: Vec<_> = answers
            .iter()
            .enumerate()
            .map(|(i, a)| with_problem(record(&format!("r{i}"), a, "a"), "p"))
            .collect();
        let s = self_consistency_score(&recs);
        let got: Vec<f64> = s.scores.iter().map(|v| v.unwrap()).collect();
        for (g, e) in got.iter().zip([0.4, 0.4, 0.4, 0.6, 0.6]) {
            assert!((g - e).abs() < 1e-12);
        }
    }

    #[test]
    fn singletons_excluded() {
        let recs = vec![
            with_problem(record("a", "1", "1"), "p"),
            with_problem(record("b", "1", "1"), "p"),
            with_problem(record("c", "2", "1"), "q"),
        ];
        let s = self_consistency_score(&recs);
        assert_eq!(s.excluded, 1);
        assert_eq!(s.scores[2], None);
    }

    #[test]
    fn low_confidence_wrong_trace_ranks_first() {
        let mut recs: Vec<_> = (0..6).map(|i| record(&format!("r{i}"), "1", "1")).collect();
        recs[3] = record("r3", "2", "1");
        for r in recs.iter_mut() {
            r.verbalized_confidence = Some(5);
        }
        recs[3].verbalized_confidence = Some(2);
        let s = ingest_scalar_baseline(&recs, ScalarField::VerbalizedConfidence, 0.9).unwrap();
        let e = s.error_scores();
        let top = (0..6)
            .max_by(|&a, &b| e[a].unwrap().total_cmp(&e[b].unwrap()))
            .unwrap();
        assert_eq!(top, 3);
    }

    #[test]
    fn coverage_threshold() {
        let mut recs: Vec<_> = (0..10)
            .map(|i| record(&format!("r{i}"), "1", "1"))
            .collect();
        assert!(ingest_scalar_baseline(&recs, ScalarField::PTrue, 0.9).is_err());
        for r in recs.iter_mut().take(9) {
            r.p_true = Some(0.8);
        }
        let s = ingest_scalar_baseline(&recs, ScalarField::PTrue, 0.9).unwrap();
        assert_eq!(s.excluded, 1);
        recs[8].p_true = None;
        assert!(ingest_scalar_baseline(&recs, ScalarField::PTrue, 0.9).is_err());
    }

    #[test]
    fn ccs_rejects_degenerate_pairs() {
        let pairs = vec![
            ContrastPair {
                positive: vec![1.0, 2.0],
                negative: vec![0.5, 0.5],
            };
            12
        ];
        assert!(matches!(
            train_ccs(&pairs, &CcsConfig::default()),
            Err(Error::Degenerate(_))
        ));
        assert!(train_ccs(&pairs[..5], &CcsConfig::default()).is_err());
    }
}
