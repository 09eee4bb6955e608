//! Layer-swept linear error probes.
//!
//! For each candidate layer the vectors are z-scored and a regularized
//! logistic regression is scored by stratified k-fold AUROC (the fold
//! standardizer sees only its training split). The best layer wins, ties to
//! the lowest index, and the final probe is refit on every record.

use std::collections::BTreeMap;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::{
    auroc_value, bootstrap_ci, mean, stratified_kfold, Fold, LinearClassifier, LogisticRegression,
    Matrix, MetricResult, Standardizer, DEFAULT_BOOTSTRAP, DEFAULT_C, DEFAULT_FOLDS,
};
use crate::trace_store::{hex_digest, Dataset, PositionKind, VectorSlot};

/// Which vector of each record a probe reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "index", rename_all = "snake_case")]
pub enum Position {
    TraceLastToken,
    StepEnd(usize),
}

impl Position {
    pub fn slot(self, layer: usize) -> VectorSlot {
        match self {
            Position::TraceLastToken => VectorSlot::trace_last(layer),
            Position::StepEnd(i) => VectorSlot::step_end(i, layer),
        }
    }

    pub fn kind(self) -> PositionKind {
        match self {
            Position::TraceLastToken => PositionKind::TraceLastToken,
            Position::StepEnd(_) => PositionKind::StepEnd,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Position::TraceLastToken => 0,
            Position::StepEnd(i) => i,
        }
    }

    fn from_parts(kind: PositionKind, index: usize) -> Self {
        match kind {
            PositionKind::TraceLastToken => Position::TraceLastToken,
            PositionKind::StepEnd => Position::StepEnd(index),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub c: f64,
    pub folds: usize,
    pub seed: u64,
    /// Candidate layers; all layers when `None`.
    pub layers: Option<Vec<usize>>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            c: DEFAULT_C,
            folds: DEFAULT_FOLDS,
            seed: 0,
            layers: None,
        }
    }
}

/// A trained error detector bound to one layer and position.
#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub layer: usize,
    pub position: Position,
    pub classifier: LinearClassifier,
    pub standardizer: Standardizer,
    /// Cross-validated AUROC of the selected layer.
    pub cv_auroc: f64,
    pub training_fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSweepResult {
    pub per_layer: BTreeMap<usize, f64>,
    pub best_layer: usize,
    pub num_layers: usize,
    /// `best_layer / num_layers`.
    pub depth_fraction: f64,
}

/// Cross-validation outcome for one feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CvResult {
    pub fold_aurocs: Vec<f64>,
    /// Out-of-fold probabilities, aligned with the input rows.
    pub oof_scores: Vec<f64>,
}

impl CvResult {
    pub fn mean_auroc(&self) -> f64 {
        mean(&self.fold_aurocs)
    }
}

/// Fits a standardizer and classifier on `rows`.
pub fn fit_scaled(x: &Matrix, y: &[bool], c: f64) -> Result<(Standardizer, LinearClassifier)> {
    let (scaler, xs) = Standardizer::fit_transform(x)?;
    let clf = LogisticRegression::with_c(c).fit(&xs, y)?;
    Ok((scaler, clf))
}

/// k-fold AUROC of standardize + logistic regression over fixed folds.
pub fn cross_validate(x: &Matrix, y: &[bool], c: f64, folds: &[Fold]) -> Result<CvResult> {
    let mut oof = vec![f64::NAN; x.rows()];
    let mut fold_aurocs = Vec::with_capacity(folds.len());
    for fold in folds {
        let y_train: Vec<bool> = fold.train.iter().map(|&i| y[i]).collect();
        let (scaler, clf) = fit_scaled(&x.select_rows(&fold.train), &y_train, c)?;
        let test = scaler.transform(&x.select_rows(&fold.test))?;
        let scores = clf.predict_proba(&test)?;
        let y_test: Vec<bool> = fold.test.iter().map(|&i| y[i]).collect();
        fold_aurocs.push(auroc_value(&scores, &y_test)?);
        for (&i, s) in fold.test.iter().zip(scores) {
            oof[i] = s;
        }
    }
    Ok(CvResult {
        fold_aurocs,
        oof_scores: oof,
    })
}

/// Feature matrix of `records` at one slot.
pub fn features(dataset: &Dataset, records: &[usize], slot: VectorSlot) -> Result<Matrix> {
    let mut data = Vec::with_capacity(records.len() * dataset.hidden_dim());
    for &r in records {
        data.extend(dataset.vector_f64(r, slot)?);
    }
    Matrix::from_vec(records.len(), dataset.hidden_dim(), data)
}

fn check_both_classes(labels: &[bool]) -> Result<()> {
    let n_pos = labels.iter().filter(|&&l| l).count();
    if n_pos == 0 || n_pos == labels.len() {
        return Err(Error::SingleClass {
            n_pos,
            n_neg: labels.len() - n_pos,
        });
    }
    Ok(())
}

fn fingerprint(
    dataset: &Dataset,
    position: Position,
    cfg: &TrainConfig,
    layers: &[usize],
) -> String {
    let mut h = Sha256::new();
    h.update(dataset.fingerprint().as_bytes());
    h.update(
        format!(
            "|{}:{}|C={:?}|k={}|seed={}|layers={:?}",
            position.kind().as_str(),
            position.index(),
            cfg.c,
            cfg.folds,
            cfg.seed,
            layers
        )
        .as_bytes(),
    );
    hex_digest(h)
}

/// Layer sweep plus final refit.
pub fn train_probe(
    dataset: &Dataset,
    position: Position,
    cfg: &TrainConfig,
) -> Result<(Probe, LayerSweepResult)> {
    let labels = dataset.labels();
    check_both_classes(&labels)?;
    let records: Vec<usize> = (0..dataset.len()).collect();
    let layers: Vec<usize> = match &cfg.layers {
        Some(l) => l.clone(),
        None => (0..dataset.num_layers()).collect(),
    };
    if layers.is_empty() {
        return Err(Error::InvalidArgument("no candidate layers".into()));
    }
    if let Some(&bad) = layers.iter().find(|&&l| l >= dataset.num_layers()) {
        return Err(Error::InvalidArgument(format!(
            "layer {bad} out of range for {} layers",
            dataset.num_layers()
        )));
    }
    let folds = stratified_kfold(&labels, cfg.folds, cfg.seed)?;

    let mut per_layer = BTreeMap::new();
    for &layer in &layers {
        let x = features(dataset, &records, position.slot(layer))?;
        per_layer.insert(
            layer,
            cross_validate(&x, &labels, cfg.c, &folds)?.mean_auroc(),
        );
    }
    let (best_layer, best_auroc) = per_layer
        .iter()
        .fold(None::<(usize, f64)>, |best, (&l, &a)| match best {
            Some((_, ba)) if a <= ba => best,
            _ => Some((l, a)),
        })
        .expect("non-empty layer list");

    let x = features(dataset, &records, position.slot(best_layer))?;
    let (standardizer, classifier) = fit_scaled(&x, &labels, cfg.c)?;
    let probe = Probe {
        layer: best_layer,
        position,
        classifier,
        standardizer,
        cv_auroc: best_auroc,
        training_fingerprint: fingerprint(dataset, position, cfg, &layers),
    };
    let sweep = LayerSweepResult {
        per_layer,
        best_layer,
        num_layers: dataset.num_layers(),
        depth_fraction: best_layer as f64 / dataset.num_layers() as f64,
    };
    Ok((probe, sweep))
}

impl Probe {
    fn check_compatible(&self, dataset: &Dataset) -> Result<()> {
        if self.layer >= dataset.num_layers() {
            return Err(Error::InvalidArgument(format!(
                "probe layer {} but dataset has {} layers",
                self.layer,
                dataset.num_layers()
            )));
        }
        if self.standardizer.dim() != dataset.hidden_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.standardizer.dim(),
                found: dataset.hidden_dim(),
            });
        }
        Ok(())
    }

    /// Error probability for one raw (unstandardized) vector.
    pub fn score_vector(&self, v: &[f64]) -> Result<f64> {
        self.classifier
            .predict_row(&self.standardizer.transform_row(v)?)
    }

    /// Scores one record at an arbitrary slot of the probe's layer.
    pub fn score_slot(&self, dataset: &Dataset, record: usize, slot: VectorSlot) -> Result<f64> {
        self.check_compatible(dataset)?;
        self.score_vector(&dataset.vector_f64(record, slot)?)
    }

    /// Scores every record at the probe's own position.
    pub fn score_dataset(&self, dataset: &Dataset) -> Result<Vec<f64>> {
        self.check_compatible(dataset)?;
        let slot = self.position.slot(self.layer);
        (0..dataset.len())
            .map(|r| self.score_vector(&dataset.vector_f64(r, slot)?))
            .collect()
    }

    pub fn error_direction(&self) -> &[f64] {
        &self.classifier.weights
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ProbeFile {
            format: PROBE_FORMAT.into(),
            version: PROBE_VERSION,
            layer: self.layer,
            position_kind: self.position.kind(),
            position_index: self.position.index(),
            c: self.classifier.c,
            bias: self.classifier.bias,
            weights: encode_f64s(&self.classifier.weights),
            mean: encode_f64s(&self.standardizer.mean),
            std: encode_f64s(&self.standardizer.std),
            cv_auroc: self.cv_auroc,
            training_fingerprint: self.training_fingerprint.clone(),
        };
        let mut s = serde_json::to_string_pretty(&file)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: ProbeFile = serde_json::from_str(s)?;
        if f.format != PROBE_FORMAT || f.version != PROBE_VERSION {
            return Err(Error::VersionMismatch {
                found: f.version,
                expected: PROBE_VERSION,
            });
        }
        let weights = decode_f64s(&f.weights)?;
        let mean = decode_f64s(&f.mean)?;
        let std = decode_f64s(&f.std)?;
        if weights.len() != mean.len() || mean.len() != std.len() {
            return Err(Error::DimensionMismatch {
                expected: weights.len(),
                found: mean.len().max(std.len()),
            });
        }
        Ok(Probe {
            layer: f.layer,
            position: Position::from_parts(f.position_kind, f.position_index),
            classifier: LinearClassifier {
                weights,
                bias: f.bias,
                c: f.c,
            },
            standardizer: Standardizer { mean, std },
            cv_auroc: f.cv_auroc,
            training_fingerprint: f.training_fingerprint,
        })
    }
}

const PROBE_FORMAT: &str = "probekit-probe";
const PROBE_VERSION: u32 = 1;

/// Serialized probe; float arrays are base64 of little-endian `f64`.
#[derive(Debug, Serialize, Deserialize)]
struct ProbeFile {
    format: String,
    version: u32,
    layer: usize,
    position_kind: PositionKind,
    position_index: usize,
    c: f64,
    bias: f64,
    weights: String,
    mean: String,
    std: String,
    cv_auroc: f64,
    training_fingerprint: String,
}

fn encode_f64s(v: &[f64]) -> String {
    let bytes: Vec<u8> = v.iter().flat_map(|x| x.to_le_bytes()).collect();
    B64.encode(bytes)
}

fn decode_f64s(s: &str) -> Result<Vec<f64>> {
    let bytes = B64
        .decode(s)
        .map_err(|e| Error::MalformedManifest(format!("probe array: {e}")))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::MalformedManifest("probe array length".into()));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSetting {
    HeldOut,
    Transfer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub setting: EvalSetting,
    pub metric: MetricResult,
}

/// Held-out AUROC with bootstrap CI. The stored standardizer is applied as is.
pub fn eval_probe(
    probe: &Probe,
    dataset: &Dataset,
    n_boot: usize,
    seed: u64,
) -> Result<MetricResult> {
    let scores = probe.score_dataset(dataset)?;
    bootstrap_ci(&scores, &dataset.labels(), n_boot, seed)
}

/// Same computation as [`eval_probe`], tagged as a cross-dataset transfer.
pub fn transfer_eval(
    probe: &Probe,
    foreign: &Dataset,
    n_boot: usize,
    seed: u64,
) -> Result<EvalResult> {
    Ok(EvalResult {
        setting: EvalSetting::Transfer,
        metric: eval_probe(probe, foreign, n_boot, seed)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionalMode {
    /// An independent CV probe per position at the probe's layer.
    PerPositionProbes,
    /// The given probe applied unchanged to every position.
    ReuseFullTraceProbe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionRow {
    FirstStep,
    LastStep,
    MaxOverSteps,
    MeanOverSteps,
    FullTrace,
}

impl PositionRow {
    pub const ALL: [PositionRow; 5] = [
        PositionRow::FirstStep,
        PositionRow::LastStep,
        PositionRow::MaxOverSteps,
        PositionRow::MeanOverSteps,
        PositionRow::FullTrace,
    ];

    pub fn label(self) -> &'static str {
        match self {
            PositionRow::FirstStep => "first_step",
            PositionRow::LastStep => "last_step",
            PositionRow::MaxOverSteps => "max_over_steps",
            PositionRow::MeanOverSteps => "mean_over_steps",
            PositionRow::FullTrace => "full_trace",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionalTable {
    pub mode: PositionalMode,
    pub layer: usize,
    pub rows: Vec<(PositionRow, MetricResult)>,
    pub n_records: usize,
    pub skipped_zero_step: usize,
}

impl PositionalTable {
    pub fn get(&self, row: PositionRow) -> Option<&MetricResult> {
        self.rows.iter().find(|(r, _)| *r == row).map(|(_, m)| m)
    }
}

/// AUROC from first step, last step, max/mean over steps and the full trace.
///
/// In per-position mode each row is a mean fold AUROC over the same
/// stratified folds; the max/mean rows come from a probe fit on all step
/// vectors of the training records, aggregated per test record. Confidence
/// intervals bootstrap the pooled out-of-fold scores.
pub fn positional_auroc(
    dataset: &Dataset,
    probe: &Probe,
    mode: PositionalMode,
    cfg: &TrainConfig,
    n_boot: usize,
) -> Result<PositionalTable> {
    probe.check_compatible(dataset)?;
    let eligible: Vec<usize> = (0..dataset.len())
        .filter(|&r| dataset.records()[r].num_steps() > 0)
        .collect();
    let skipped = dataset.len() - eligible.len();
    let labels: Vec<bool> = eligible
        .iter()
        .map(|&r| dataset.records()[r].is_error())
        .collect();
    check_both_classes(&labels)?;
    let layer = probe.layer;
    let last_slot = |r: usize| VectorSlot::step_end(dataset.records()[r].num_steps() - 1, layer);
    let boot_seed = cfg.seed;

    let rows = match mode {
        PositionalMode::ReuseFullTraceProbe => {
            let score = |f: &dyn Fn(usize) -> Result<f64>| -> Result<Vec<f64>> {
                eligible.iter().map(|&r| f(r)).collect()
            };
            let steps_of = |r: usize| -> Result<Vec<f64>> {
                (0..dataset.records()[r].num_steps())
                    .map(|k| probe.score_slot(dataset, r, VectorSlot::step_end(k, layer)))
                    .collect()
            };
            let first = score(&|r| probe.score_slot(dataset, r, VectorSlot::step_end(0, layer)))?;
            let last = score(&|r| probe.score_slot(dataset, r, last_slot(r)))?;
            let max = score(&|r| Ok(steps_of(r)?.into_iter().fold(f64::MIN, f64::max)))?;
            let avg = score(&|r| Ok(mean(&steps_of(r)?)))?;
            let full = score(&|r| probe.score_slot(dataset, r, VectorSlot::trace_last(layer)))?;
            let mut rows = Vec::with_capacity(5);
            for (row, s) in PositionRow::ALL
                .into_iter()
                .zip([first, last, max, avg, full])
            {
                rows.push((row, bootstrap_ci(&s, &labels, n_boot, boot_seed)?));
            }
            rows
        }
        PositionalMode::PerPositionProbes => {
            let folds = stratified_kfold(&labels, cfg.folds, cfg.seed)?;
            let matrix = |slot: &dyn Fn(usize) -> VectorSlot| -> Result<Matrix> {
                let mut data = Vec::with_capacity(eligible.len() * dataset.hidden_dim());
                for &r in &eligible {
                    data.extend(dataset.vector_f64(r, slot(r))?);
                }
                Matrix::from_vec(eligible.len(), dataset.hidden_dim(), data)
            };
            let first = cross_validate(
                &matrix(&|_| VectorSlot::step_end(0, layer))?,
                &labels,
                cfg.c,
                &folds,
            )?;
            let last = cross_validate(&matrix(&last_slot)?, &labels, cfg.c, &folds)?;
            let full = cross_validate(
                &matrix(&|_| VectorSlot::trace_last(layer))?,
                &labels,
                cfg.c,
                &folds,
            )?;
            let (max, avg) = pooled_step_cv(dataset, &eligible, &labels, layer, cfg.c, &folds)?;

            let mut rows = Vec::with_capacity(5);
            for (row, cv) in PositionRow::ALL
                .into_iter()
                .zip([first, last, max, avg, full])
            {
                rows.push((row, cv_metric(&cv, &labels, n_boot, boot_seed)?));
            }
            rows
        }
    };
    Ok(PositionalTable {
        mode,
        layer,
        rows,
        n_records: eligible.len(),
        skipped_zero_step: skipped,
    })
}

/// Mean fold AUROC with a bootstrap interval over the pooled out-of-fold scores.
pub fn cv_metric(cv: &CvResult, labels: &[bool], n_boot: usize, seed: u64) -> Result<MetricResult> {
    let mut m = bootstrap_ci(&cv.oof_scores, labels, n_boot, seed)?;
    m.auroc = cv.mean_auroc();
    m.ci_low = m.ci_low.map(|l| l.min(m.auroc));
    m.ci_high = m.ci_high.map(|h| h.max(m.auroc));
    Ok(m)
}

/// CV over a probe trained on every step vector of the training records;
/// test records are scored by the max and by the mean of their step scores.
fn pooled_step_cv(
    dataset: &Dataset,
    eligible: &[usize],
    labels: &[bool],
    layer: usize,
    c: f64,
    folds: &[Fold],
) -> Result<(CvResult, CvResult)> {
    let mut max_oof = vec![f64::NAN; eligible.len()];
    let mut avg_oof = vec![f64::NAN; eligible.len()];
    let mut max_folds = Vec::with_capacity(folds.len());
    let mut avg_folds = Vec::with_capacity(folds.len());
    for fold in folds {
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for &i in &fold.train {
            let r = eligible[i];
            for k in 0..dataset.records()[r].num_steps() {
                rows.push(dataset.vector_f64(r, VectorSlot::step_end(k, layer))?);
                y.push(labels[i]);
            }
        }
        let (scaler, clf) = fit_scaled(&Matrix::from_rows(&rows)?, &y, c)?;
        let mut fold_max = Vec::with_capacity(fold.test.len());
        let mut fold_avg = Vec::with_capacity(fold.test.len());
        for &i in &fold.test {
            let r = eligible[i];
            let scores = (0..dataset.records()[r].num_steps())
                .map(|k| {
                    let v = dataset.vector_f64(r, VectorSlot::step_end(k, layer))?;
                    clf.predict_row(&scaler.transform_row(&v)?)
                })
                .collect::<Result<Vec<f64>>>()?;
            let mx = scores.iter().copied().fold(f64::MIN, f64::max);
            let av = mean(&scores);
            max_oof[i] = mx;
            avg_oof[i] = av;
            fold_max.push(mx);
            fold_avg.push(av);
        }
        let y_test: Vec<bool> = fold.test.iter().map(|&i| labels[i]).collect();
        max_folds.push(auroc_value(&fold_max, &y_test)?);
        avg_folds.push(auroc_value(&fold_avg, &y_test)?);
    }
    Ok((
        CvResult {
            fold_aurocs: max_folds,
            oof_scores: max_oof,
        },
        CvResult {
            fold_aurocs: avg_folds,
            oof_scores: avg_oof,
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataEfficiencyRow {
    pub size: usize,
    pub cv_auroc: f64,
    pub best_layer: usize,
}

/// Stratified subsample of `size` records (sorted indices; identity at full size).
pub fn stratified_subsample(labels: &[bool], size: usize, seed: u64) -> Result<Vec<usize>> {
    let n = labels.len();
    if size > n {
        return Err(Error::InvalidArgument(format!(
            "subsample size {size} exceeds dataset size {n}"
        )));
    }
    if size == n {
        return Ok((0..n).collect());
    }
    let mut pos: Vec<usize> = (0..n).filter(|&i| labels[i]).collect();
    let mut neg: Vec<usize> = (0..n).filter(|&i| !labels[i]).collect();
    let take_pos = ((size as f64) * pos.len() as f64 / n as f64).round() as usize;
    let take_pos = take_pos.min(pos.len()).min(size);
    let take_neg = (size - take_pos).min(neg.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let mut out: Vec<usize> = pos[..take_pos]
        .iter()
        .chain(&neg[..take_neg])
        .copied()
        .collect();
    out.sort_unstable();
    Ok(out)
}

/// Full layer sweep on stratified subsamples of increasing size.
pub fn data_efficiency_sweep(
    dataset: &Dataset,
    sizes: &[usize],
    position: Position,
    cfg: &TrainConfig,
) -> Result<Vec<DataEfficiencyRow>> {
    let labels = dataset.labels();
    let mut rows = Vec::with_capacity(sizes.len());
    for &size in sizes {
        let idx = stratified_subsample(&labels, size, cfg.seed)?;
        let sub_labels: Vec<bool> = idx.iter().map(|&i| labels[i]).collect();
        let n_pos = sub_labels.iter().filter(|&&l| l).count();
        let n_neg = sub_labels.len() - n_pos;
        if n_pos < cfg.folds || n_neg < cfg.folds {
            return Err(Error::InvalidArgument(format!(
                "subsample of {size} keeps {n_pos} wrong / {n_neg} correct records, too few for {} folds",
                cfg.folds
            )));
        }
        let sub = dataset.subset(&idx)?;
        let (probe, _) = train_probe(&sub, position, cfg)?;
        rows.push(DataEfficiencyRow {
            size,
            cv_auroc: probe.cv_auroc,
            best_layer: probe.layer,
        });
    }
    Ok(rows)
}

/// Default bootstrap resample count for probe evaluation.
pub const EVAL_BOOTSTRAP: usize = DEFAULT_BOOTSTRAP;
