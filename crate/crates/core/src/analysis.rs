//! Step-level score trajectories, within-problem difficulty control and
//! report builders for the probe pipeline outputs.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::numerics::{
    cohens_d, mean, pooled_std, spearman, stratified_kfold, welch_t, MetricResult,
};
use crate::probe::{
    cross_validate, features, DataEfficiencyRow, EvalSetting, LayerSweepResult, PositionalTable,
    Probe, TrainConfig,
};
use crate::report::{opt_real, real, Column, ColumnType, Provenance, Report, ReportKind};
use crate::text::{ConcealmentReport, UnfaithfulRegion};
use crate::trace_store::{group_by_problem, Dataset, VectorSlot};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryMode {
    ReuseFullTraceProbe,
    /// Out-of-fold scores from an independent probe per step index.
    PerStepProbes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    FrontLoaded,
    Accumulating,
    Mixed,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Regime::FrontLoaded => "front_loaded",
            Regime::Accumulating => "accumulating",
            Regime::Mixed => "mixed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeThresholds {
    /// Front-loaded when the step-1 gap reaches this share of the max gap.
    pub front_share: f64,
    pub accumulating_rho: f64,
    /// Accumulating requires the step-1 gap below this share of the max gap.
    pub accumulating_share: f64,
}

impl Default for RegimeThresholds {
    fn default() -> Self {
        Self {
            front_share: 0.9,
            accumulating_rho: 0.8,
            accumulating_share: 0.5,
        }
    }
}

pub fn classify_regime(gaps: &[f64], t: &RegimeThresholds) -> Regime {
    let Some(&g1) = gaps.first() else {
        return Regime::Mixed;
    };
    let max = gaps.iter().copied().fold(f64::MIN, f64::max);
    if max <= 0.0 {
        return Regime::Mixed;
    }
    if g1 >= t.front_share * max {
        return Regime::FrontLoaded;
    }
    let idx: Vec<f64> = (0..gaps.len()).map(|i| i as f64).collect();
    if gaps.len() >= 2
        && spearman(gaps, &idx) >= t.accumulating_rho
        && g1 < t.accumulating_share * max
    {
        return Regime::Accumulating;
    }
    Regime::Mixed
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepPoint {
    /// 1-based step index.
    pub step: usize,
    pub n_correct: usize,
    pub n_wrong: usize,
    pub correct_mean: f64,
    pub wrong_mean: f64,
    /// `wrong_mean - correct_mean`.
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTrajectory {
    pub mode: TrajectoryMode,
    pub layer: usize,
    pub points: Vec<StepPoint>,
    pub max_gap: f64,
    pub gap_at_step1: f64,
    pub regime: Regime,
    /// Raw per-record step scores (`None` where not scored).
    pub scores: Vec<Vec<Option<f64>>>,
}

impl StepTrajectory {
    pub fn gaps(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.gap).collect()
    }
}

/// Per-step probe error probabilities, aligned by absolute step index.
pub fn step_scores(
    dataset: &Dataset,
    probe: &Probe,
    mode: TrajectoryMode,
    cfg: &TrainConfig,
) -> Result<Vec<Vec<Option<f64>>>> {
    let layer = probe.layer;
    let steps: Vec<usize> = dataset.records().iter().map(|r| r.num_steps()).collect();
    let mut scores: Vec<Vec<Option<f64>>> = steps.iter().map(|&s| vec![None; s]).collect();
    match mode {
        TrajectoryMode::ReuseFullTraceProbe => {
            for (r, row) in scores.iter_mut().enumerate() {
                for (k, cell) in row.iter_mut().enumerate() {
                    *cell = Some(probe.score_slot(dataset, r, VectorSlot::step_end(k, layer))?);
                }
            }
        }
        TrajectoryMode::PerStepProbes => {
            let max_steps = steps.iter().copied().max().unwrap_or(0);
            for k in 0..max_steps {
                let recs: Vec<usize> = (0..dataset.len()).filter(|&r| steps[r] > k).collect();
                let labels: Vec<bool> = recs
                    .iter()
                    .map(|&r| dataset.records()[r].is_error())
                    .collect();
                let Ok(folds) = stratified_kfold(&labels, cfg.folds, cfg.seed) else {
                    continue;
                };
                let x = features(dataset, &recs, VectorSlot::step_end(k, layer))?;
                let cv = cross_validate(&x, &labels, cfg.c, &folds)?;
                for (&r, s) in recs.iter().zip(cv.oof_scores) {
                    scores[r][k] = Some(s);
                }
            }
        }
    }
    Ok(scores)
}

/// Mean probe score per step for correct and wrong traces.
pub fn trajectory_from_scores(
    dataset: &Dataset,
    scores: Vec<Vec<Option<f64>>>,
    mode: TrajectoryMode,
    layer: usize,
    thresholds: &RegimeThresholds,
) -> Result<StepTrajectory> {
    let labels = dataset.labels();
    let n_pos = labels.iter().filter(|&&l| l).count();
    if n_pos == 0 || n_pos == labels.len() {
        return Err(Error::SingleClass {
            n_pos,
            n_neg: labels.len() - n_pos,
        });
    }
    if !dataset.records().iter().any(|r| r.num_steps() >= 2) {
        return Err(Error::InvalidArgument("no multi-step traces".into()));
    }
    let max_steps = scores.iter().map(Vec::len).max().unwrap_or(0);
    let mut points = Vec::new();
    for k in 0..max_steps {
        let (mut c, mut w) = (Vec::new(), Vec::new());
        for (row, &l) in scores.iter().zip(&labels) {
            if let Some(Some(s)) = row.get(k) {
                if l { &mut w } else { &mut c }.push(*s);
            }
        }
        if c.is_empty() || w.is_empty() {
            continue;
        }
        let (cm, wm) = (mean(&c), mean(&w));
        points.push(StepPoint {
            step: k + 1,
            n_correct: c.len(),
            n_wrong: w.len(),
            correct_mean: cm,
            wrong_mean: wm,
            gap: wm - cm,
        });
    }
    if points.first().is_none_or(|p| p.step != 1) {
        return Err(Error::InvalidArgument(
            "step 1 could not be scored for both classes".into(),
        ));
    }
    let gaps: Vec<f64> = points.iter().map(|p| p.gap).collect();
    Ok(StepTrajectory {
        mode,
        layer,
        max_gap: gaps.iter().copied().fold(f64::MIN, f64::max),
        gap_at_step1: gaps[0],
        regime: classify_regime(&gaps, thresholds),
        points,
        scores,
    })
}

pub fn step_trajectories(
    dataset: &Dataset,
    probe: &Probe,
    mode: TrajectoryMode,
    cfg: &TrainConfig,
    thresholds: &RegimeThresholds,
) -> Result<StepTrajectory> {
    let labels = dataset.labels();
    let n_pos = labels.iter().filter(|&&l| l).count();
    if n_pos == 0 || n_pos == labels.len() {
        return Err(Error::SingleClass {
            n_pos,
            n_neg: labels.len() - n_pos,
        });
    }
    let scores = step_scores(dataset, probe, mode, cfg)?;
    trajectory_from_scores(dataset, scores, mode, probe.layer, thresholds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupComparison {
    pub mean_correct: f64,
    pub mean_wrong: f64,
    pub welch_p: Option<f64>,
    /// Wrong minus correct, in pooled standard deviations.
    pub cohens_d: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifficultyResult {
    pub mixed_problems: usize,
    pub total_problems: usize,
    pub n_correct: usize,
    pub n_wrong: usize,
    /// Raw scores of traces from mixed problems.
    pub pooled: GroupComparison,
    /// Scores centered on their problem mean; d uses the raw pooled SD.
    pub within_problem: GroupComparison,
}

/// Probe scores of correct versus wrong traces restricted to problems that
/// have both outcomes.
pub fn difficulty_control(dataset: &Dataset, scores: &[f64]) -> Result<DifficultyResult> {
    if scores.len() != dataset.len() {
        return Err(Error::DimensionMismatch {
            expected: dataset.len(),
            found: scores.len(),
        });
    }
    let groups = group_by_problem(dataset.records());
    let (mut c, mut w, mut cc, mut wc) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut mixed = 0;
    let mut summary = Vec::new();
    for (pid, idx) in &groups {
        let n_wrong = idx
            .iter()
            .filter(|&&i| dataset.records()[i].is_error())
            .count();
        summary.push(format!(
            "{pid} ({} correct/{n_wrong} wrong)",
            idx.len() - n_wrong
        ));
        if n_wrong == 0 || n_wrong == idx.len() {
            continue;
        }
        mixed += 1;
        let m = mean(&idx.iter().map(|&i| scores[i]).collect::<Vec<_>>());
        for &i in idx {
            let (raw, cen) = if dataset.records()[i].is_error() {
                (&mut w, &mut wc)
            } else {
                (&mut c, &mut cc)
            };
            let d = scores[i] - m;
            raw.push(scores[i]);
            cen.push(if d.abs() <= 1e-12 * m.abs().max(1.0) {
                0.0
            } else {
                d
            });
        }
    }
    if mixed == 0 {
        let shown: Vec<&str> = summary.iter().take(10).map(String::as_str).collect();
        let more = if summary.len() > 10 {
            format!(", ... {} more", summary.len() - 10)
        } else {
            String::new()
        };
        return Err(Error::InvalidArgument(format!(
            "no mixed-outcome problem among {}: {}{more}",
            groups.len(),
            shown.join(", ")
        )));
    }
    let sd = pooled_std(&w, &c);
    let pooled = GroupComparison {
        mean_correct: mean(&c),
        mean_wrong: mean(&w),
        welch_p: welch_t(&w, &c).ok().map(|r| r.p),
        cohens_d: cohens_d(&w, &c).ok(),
    };
    let within = GroupComparison {
        mean_correct: mean(&cc),
        mean_wrong: mean(&wc),
        welch_p: welch_t(&wc, &cc).ok().map(|r| r.p),
        cohens_d: (sd > 0.0 && sd.is_finite() && w.len() + c.len() > 2)
            .then(|| (mean(&wc) - mean(&cc)) / sd),
    };
    Ok(DifficultyResult {
        mixed_problems: mixed,
        total_problems: groups.len(),
        n_correct: c.len(),
        n_wrong: w.len(),
        pooled,
        within_problem: within,
    })
}

fn prov_probe(dataset: Option<&Dataset>, probe: Option<&Probe>) -> Provenance {
    Provenance {
        dataset_fingerprint: dataset.map(Dataset::fingerprint),
        probe_fingerprint: probe.map(|p| p.training_fingerprint.clone()),
        ..Default::default()
    }
}

pub fn difficulty_report(
    res: &DifficultyResult,
    dataset: &Dataset,
    probe: &Probe,
) -> Result<Report> {
    let mut r = Report::new(
        ReportKind::DifficultyControl,
        vec![
            Column::new("comparison", ColumnType::Text),
            Column::new("mixed_problems", ColumnType::Integer),
            Column::new("n_correct", ColumnType::Integer),
            Column::new("n_wrong", ColumnType::Integer),
            Column::new("mean_correct", ColumnType::Real),
            Column::new("mean_wrong", ColumnType::Real),
            Column::nullable("welch_p", ColumnType::Real),
            Column::nullable("cohens_d", ColumnType::Real),
        ],
        prov_probe(Some(dataset), Some(probe))
            .set("total_problems", res.total_problems)
            .note("within_problem centers scores on each problem's mean; d divides by the raw pooled SD"),
    );
    for (name, g) in [
        ("pooled", &res.pooled),
        ("within_problem", &res.within_problem),
    ] {
        r.push(vec![
            json!(name),
            json!(res.mixed_problems),
            json!(res.n_correct),
            json!(res.n_wrong),
            real(g.mean_correct),
            real(g.mean_wrong),
            opt_real(g.welch_p),
            opt_real(g.cohens_d),
        ])?;
    }
    Ok(r)
}

/// Rows of `(layer, depth fraction, CV AUROC, best)`; depth is `layer / total_layers`.
pub fn layer_sweep_report(
    sweep: &LayerSweepResult,
    total_layers: Option<usize>,
    model_name: &str,
) -> Result<Report> {
    let total = total_layers.unwrap_or(sweep.num_layers);
    if total == 0 {
        return Err(Error::InvalidArgument(
            "total layer count must be positive".into(),
        ));
    }
    let depth = |l: usize| l as f64 / total as f64;
    let mut r = Report::new(
        ReportKind::LayerSweep,
        vec![
            Column::new("layer", ColumnType::Integer),
            Column::new("depth_fraction", ColumnType::Real),
            Column::nullable("cv_auroc", ColumnType::Real),
            Column::new("best", ColumnType::Bool),
        ],
        Provenance::default()
            .set("model_name", model_name)
            .set("total_layers", total)
            .set("best_layer", sweep.best_layer)
            .set("best_depth_fraction", real(depth(sweep.best_layer))),
    );
    for (&layer, &auroc) in &sweep.per_layer {
        r.push(vec![
            json!(layer),
            real(depth(layer)),
            real(auroc),
            json!(layer == sweep.best_layer),
        ])?;
    }
    Ok(r)
}

pub fn trajectory_report(t: &StepTrajectory, dataset: &Dataset, probe: &Probe) -> Result<Report> {
    let mut r = Report::new(
        ReportKind::StepTrajectory,
        vec![
            Column::new("step", ColumnType::Integer),
            Column::new("n_correct", ColumnType::Integer),
            Column::new("n_wrong", ColumnType::Integer),
            Column::new("correct_mean", ColumnType::Real),
            Column::new("wrong_mean", ColumnType::Real),
            Column::new("gap", ColumnType::Real),
        ],
        prov_probe(Some(dataset), Some(probe))
            .set("mode", serde_json::to_value(t.mode)?)
            .set("layer", t.layer)
            .set("regime", t.regime.as_str())
            .set("max_gap", real(t.max_gap))
            .set("gap_at_step1", real(t.gap_at_step1))
            .note("values are raw probe error probabilities"),
    );
    for p in &t.points {
        r.push(vec![
            json!(p.step),
            json!(p.n_correct),
            json!(p.n_wrong),
            real(p.correct_mean),
            real(p.wrong_mean),
            real(p.gap),
        ])?;
    }
    Ok(r)
}

fn metric_cells(m: &MetricResult) -> Vec<Value> {
    vec![
        real(m.auroc),
        opt_real(m.ci_low),
        opt_real(m.ci_high),
        json!(m.n_pos),
        json!(m.n_neg),
    ]
}

fn metric_columns() -> Vec<Column> {
    vec![
        Column::new("auroc", ColumnType::Real),
        Column::nullable("ci_low", ColumnType::Real),
        Column::nullable("ci_high", ColumnType::Real),
        Column::new("n_wrong", ColumnType::Integer),
        Column::new("n_correct", ColumnType::Integer),
    ]
}

pub fn eval_report(
    setting: EvalSetting,
    m: &MetricResult,
    dataset: &Dataset,
    probe: &Probe,
    n_boot: usize,
    seed: u64,
) -> Result<Report> {
    let mut cols = vec![
        Column::new("setting", ColumnType::Text),
        Column::new("cv_auroc", ColumnType::Real),
    ];
    cols.extend(metric_columns());
    let mut r = Report::new(
        ReportKind::Eval,
        cols,
        prov_probe(Some(dataset), Some(probe))
            .seed("bootstrap", seed)
            .set("n_boot", n_boot)
            .set("layer", probe.layer)
            .note("stored standardizer applied without refitting"),
    );
    let mut row = vec![json!(serde_json::to_value(setting)?), real(probe.cv_auroc)];
    row.extend(metric_cells(m));
    r.push(row)?;
    Ok(r)
}

pub fn positional_report(
    t: &PositionalTable,
    dataset: &Dataset,
    probe: &Probe,
    cfg: &TrainConfig,
) -> Result<Report> {
    let mut cols = vec![Column::new("position", ColumnType::Text)];
    cols.extend(metric_columns());
    let mut r = Report::new(
        ReportKind::Positional,
        cols,
        prov_probe(Some(dataset), Some(probe))
            .seed("cv", cfg.seed)
            .set("mode", serde_json::to_value(t.mode)?)
            .set("layer", t.layer)
            .set("folds", cfg.folds)
            .set("C", cfg.c)
            .set("skipped_zero_step", t.skipped_zero_step),
    );
    for (row, m) in &t.rows {
        let mut cells = vec![json!(row.label())];
        cells.extend(metric_cells(m));
        r.push(cells)?;
    }
    Ok(r)
}

pub fn data_efficiency_report(
    rows: &[DataEfficiencyRow],
    dataset: &Dataset,
    cfg: &TrainConfig,
) -> Result<Report> {
    let mut r = Report::new(
        ReportKind::DataEfficiency,
        vec![
            Column::new("size", ColumnType::Integer),
            Column::new("cv_auroc", ColumnType::Real),
            Column::new("best_layer", ColumnType::Integer),
        ],
        prov_probe(Some(dataset), None)
            .seed("subsample", cfg.seed)
            .set("folds", cfg.folds)
            .set("C", cfg.c),
    );
    for row in rows {
        r.push(vec![
            json!(row.size),
            real(row.cv_auroc),
            json!(row.best_layer),
        ])?;
    }
    Ok(r)
}

pub fn concealment_report(
    c: &ConcealmentReport,
    dataset: &Dataset,
    probe: &Probe,
    text_c: f64,
    folds: usize,
    seed: u64,
) -> Result<Report> {
    let mut r = Report::new(
        ReportKind::Concealment,
        vec![
            Column::new("statistic", ColumnType::Text),
            Column::nullable("value", ColumnType::Real),
            Column::nullable("p_value", ColumnType::Real),
        ],
        prov_probe(Some(dataset), Some(probe))
            .seed("cv", seed)
            .set("folds", folds)
            .set("text_C", text_c)
            .set("layer", c.layer)
            .set("n_records", c.n_records)
            .set("skipped_zero_step", c.skipped_zero_step)
            .note("first-step text and first-step hidden states share folds")
            .note("number density is the share of digit-bearing tokens"),
    );
    let s = &c.surface;
    let rows: [(&str, Option<f64>, Option<f64>); 10] = [
        ("s_text", Some(c.s_text), None),
        ("s_hidden", Some(c.s_hidden), None),
        ("concealment_gap", Some(c.gap), None),
        ("mean_length_correct", Some(s.mean_length_correct), None),
        ("mean_length_wrong", Some(s.mean_length_wrong), None),
        ("length_tokens", None, s.length_p),
        ("number_density", None, s.number_density_p),
        ("hedging_rate_correct", Some(s.hedging_rate_correct), None),
        ("hedging_rate_wrong", Some(s.hedging_rate_wrong), None),
        ("vocab_jaccard", Some(s.vocab_jaccard), None),
    ];
    for (name, v, p) in rows {
        r.push(vec![json!(name), opt_real(v), opt_real(p)])?;
    }
    Ok(r)
}

/// Per-record probe score, confidence and unfaithful flag.
pub fn score_distribution_report(
    u: &UnfaithfulRegion,
    dataset: &Dataset,
    probe: &Probe,
    conf_threshold: u8,
    score_threshold: f64,
) -> Result<Report> {
    let mut r = Report::new(
        ReportKind::ScoreDistribution,
        vec![
            Column::new("record_id", ColumnType::Text),
            Column::new("label", ColumnType::Integer),
            Column::new("probe_score", ColumnType::Real),
            Column::nullable("verbalized_confidence", ColumnType::Integer),
            Column::nullable("unfaithful", ColumnType::Bool),
        ],
        prov_probe(Some(dataset), Some(probe))
            .set("conf_threshold", conf_threshold)
            .set("score_threshold", score_threshold)
            .set("wrong_considered", u.wrong_considered)
            .set("wrong_flagged", u.wrong_flagged)
            .set("fraction_wrong_flagged", real(u.fraction_wrong_flagged))
            .set("excluded_missing_confidence", u.excluded),
    );
    for ((rec, &s), f) in dataset.records().iter().zip(&u.scores).zip(&u.flags) {
        r.push(vec![
            json!(rec.record_id),
            json!(rec.label),
            real(s),
            rec.verbalized_confidence.map_or(Value::Null, |c| json!(c)),
            f.map_or(Value::Null, Value::Bool),
        ])?;
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regime_rules() {
        let t = RegimeThresholds::default();
        assert_eq!(classify_regime(&[0.41, 0.30, 0.2], &t), Regime::FrontLoaded);
        assert_eq!(
            classify_regime(&[0.11, 0.2, 0.3, 0.38], &t),
            Regime::Accumulating
        );
        assert_eq!(classify_regime(&[0.3, 0.5, 0.2], &t), Regime::Mixed);
        assert_eq!(classify_regime(&[-0.1, -0.2], &t), Regime::Mixed);
        assert_eq!(classify_regime(&[], &t), Regime::Mixed);
    }

    #[test]
    fn depth_fractions() {
        let mk = |layers: &[(usize, f64)], best, n| LayerSweepResult {
            per_layer: layers.iter().copied().collect(),
            best_layer: best,
            num_layers: n,
            depth_fraction: best as f64 / n as f64,
        };
        let s = mk(&[(26, 0.9), (27, 0.953)], 27, 36);
        let r = layer_sweep_report(&s, None, "m").unwrap();
        assert_eq!(r.provenance.config["best_depth_fraction"], json!(0.75));
        let s = mk(&[(5, 0.8)], 5, 36);
        let r = layer_sweep_report(&s, Some(5), "m").unwrap();
        assert_eq!(r.column_f64("depth_fraction"), vec![1.0]);
        let s = mk(&[(12, 0.9)], 12, 28);
        let r = layer_sweep_report(&s, None, "m").unwrap();
        assert!((r.column_f64("depth_fraction")[0] - 0.4286).abs() < 1e-3);
    }
}
