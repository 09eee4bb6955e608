use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_BOOTSTRAP: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricResult {
    pub auroc: f64,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub n_pos: usize,
    pub n_neg: usize,
}

fn class_counts(labels: &[bool]) -> (usize, usize) {
    let n_pos = labels.iter().filter(|&&l| l).count();
    (n_pos, labels.len() - n_pos)
}

/// Mann-Whitney AUROC: the fraction of (positive, negative) pairs in which the
/// positive scores higher, ties credited 0.5. Computed from mid-ranks.
pub fn auroc_value(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            found: scores.len(),
        });
    }
    let (n_pos, n_neg) = class_counts(labels);
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass { n_pos, n_neg });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("scores".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks are 1-based; the tie group spans ranks i+1..=j+1
        let mid_rank = (i + j) as f64 / 2.0 + 1.0;
        let pos_in_group = order[i..=j].iter().filter(|&&k| labels[k]).count();
        rank_sum_pos += mid_rank * pos_in_group as f64;
        i = j + 1;
    }
    let np = n_pos as f64;
    Ok((rank_sum_pos - np * (np + 1.0) / 2.0) / (np * n_neg as f64))
}

pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<MetricResult> {
    let value = auroc_value(scores, labels)?;
    let (n_pos, n_neg) = class_counts(labels);
    Ok(MetricResult {
        auroc: value,
        ci_low: None,
        ci_high: None,
        n_pos,
        n_neg,
    })
}

/// AUROC with a 95% percentile interval over stratified bootstrap resamples.
///
/// Positives and negatives are resampled separately so every replicate keeps
/// the original class counts. The interval is widened, if needed, to contain
/// the point estimate.
pub fn bootstrap_ci(
    scores: &[f64],
    labels: &[bool],
    n_boot: usize,
    seed: u64,
) -> Result<MetricResult> {
    if n_boot < 100 {
        return Err(Error::InvalidArgument(format!(
            "bootstrap needs at least 100 resamples, got {n_boot}"
        )));
    }
    let mut base = auroc(scores, labels)?;
    let pos: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l)
        .map(|(s, _)| *s)
        .collect();
    let neg: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, &l)| !l)
        .map(|(s, _)| *s)
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sample_scores = Vec::with_capacity(scores.len());
    let mut sample_labels = Vec::with_capacity(scores.len());
    sample_labels.extend(std::iter::repeat_n(true, pos.len()));
    sample_labels.extend(std::iter::repeat_n(false, neg.len()));
    let mut stats = Vec::with_capacity(n_boot);
    for _ in 0..n_boot {
        sample_scores.clear();
        sample_scores.extend((0..pos.len()).map(|_| pos[rng.random_range(0..pos.len())]));
        sample_scores.extend((0..neg.len()).map(|_| neg[rng.random_range(0..neg.len())]));
        stats.push(auroc_value(&sample_scores, &sample_labels)?);
    }
    stats.sort_by(f64::total_cmp);
    let lo = percentile_sorted(&stats, 0.025);
    let hi = percentile_sorted(&stats, 0.975);
    base.ci_low = Some(lo.min(base.auroc));
    base.ci_high = Some(hi.max(base.auroc));
    Ok(base)
}

/// Linear-interpolated quantile of sorted data (`q` in [0, 1]).
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let h = (n - 1) as f64 * q.clamp(0.0, 1.0);
            let lo = h.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_separation() {
        assert_eq!(auroc_value(&[0.9, 0.1], &[true, false]).unwrap(), 1.0);
    }

    #[test]
    fn all_ties_is_half() {
        let s = [0.3; 6];
        let l = [true, false, true, false, false, true];
        assert_eq!(auroc_value(&s, &l).unwrap(), 0.5);
    }

    #[test]
    fn tie_and_win_pairs() {
        // pairs: (0.5 vs 0.5) tie -> 0.5, (0.5 vs 0.2) win -> 1
        let v = auroc_value(&[0.5, 0.5, 0.2], &[true, false, false]).unwrap();
        assert!((v - 0.75).abs() < 1e-15);
    }

    #[test]
    fn single_class_is_error() {
        assert!(matches!(
            auroc_value(&[0.1, 0.2], &[false, false]),
            Err(Error::SingleClass { n_pos: 0, n_neg: 2 })
        ));
    }

    #[test]
    fn bootstrap_is_deterministic_and_bounded() {
        let scores: Vec<f64> = (0..60).map(|i| ((i * 37) % 60) as f64 / 60.0).collect();
        let labels: Vec<bool> = (0..60).map(|i| i % 3 == 0).collect();
        let a = bootstrap_ci(&scores, &labels, 500, 7).unwrap();
        let b = bootstrap_ci(&scores, &labels, 500, 7).unwrap();
        assert_eq!(a, b);
        assert!(a.ci_low.unwrap() <= a.auroc && a.auroc <= a.ci_high.unwrap());
    }

    #[test]
    fn bootstrap_perfect_separation_upper_is_one() {
        let scores: Vec<f64> = (0..200).map(|i| i as f64).collect();
        let labels: Vec<bool> = (0..200).map(|i| i >= 100).collect();
        let m = bootstrap_ci(&scores, &labels, 200, 1).unwrap();
        assert_eq!(m.ci_high, Some(1.0));
        assert_eq!(m.ci_low, Some(1.0));
    }

    #[test]
    fn bootstrap_needs_enough_resamples() {
        assert!(bootstrap_ci(&[0.1, 0.9], &[false, true], 10, 0).is_err());
    }

    #[test]
    fn percentile_interpolates() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(percentile_sorted(&v, 0.0), 1.0);
        assert_eq!(percentile_sorted(&v, 1.0), 4.0);
        assert!((percentile_sorted(&v, 0.5) - 2.5).abs() < 1e-15);
    }
}
