//! Text-only error detection and surface statistics of reasoning steps.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{
    auroc_value, mean, stratified_kfold, welch_t, Fold, LogisticRegression, Matrix, DEFAULT_FOLDS,
};
use crate::probe::{cross_validate, features, Probe};
use crate::trace_store::{Dataset, VectorSlot};

/// Default hedging phrases, one per line.
pub const HEDGING_LEXICON: &str = include_str!("../data/hedging_lexicon.txt");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfidfSettings {
    pub lowercase: bool,
    pub ngram_min: usize,
    pub ngram_max: usize,
    pub smooth_idf: bool,
    pub l2_norm: bool,
}

impl Default for TfidfSettings {
    fn default() -> Self {
        Self {
            lowercase: true,
            ngram_min: 1,
            ngram_max: 1,
            smooth_idf: true,
            l2_norm: true,
        }
    }
}

impl TfidfSettings {
    /// Token pattern description recorded alongside results.
    pub const TOKEN_PATTERN: &'static str = "unicode alphanumeric runs";
}

/// Splits on every non-alphanumeric character; numeric tokens are kept.
pub fn tokenize(text: &str, lowercase: bool) -> Vec<String> {
    let text = if lowercase {
        text.to_lowercase()
    } else {
        text.to_string()
    };
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

fn terms(text: &str, s: &TfidfSettings) -> Vec<String> {
    let toks = tokenize(text, s.lowercase);
    let mut out = Vec::new();
    for n in s.ngram_min.max(1)..=s.ngram_max.max(s.ngram_min.max(1)) {
        if toks.len() >= n {
            out.extend(toks.windows(n).map(|w| w.join(" ")));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfidfModel {
    pub vocabulary: BTreeMap<String, usize>,
    pub idf: Vec<f64>,
    pub settings: TfidfSettings,
}

/// Sparse row as sorted `(column, value)` pairs.
pub type SparseRow = Vec<(usize, f64)>;

pub fn fit_tfidf<S: AsRef<str>>(corpus: &[S], settings: &TfidfSettings) -> Result<TfidfModel> {
    if corpus.is_empty() {
        return Err(Error::InvalidArgument("empty corpus".into()));
    }
    let mut df: BTreeMap<String, usize> = BTreeMap::new();
    for doc in corpus {
        let uniq: BTreeSet<String> = terms(doc.as_ref(), settings).into_iter().collect();
        for t in uniq {
            *df.entry(t).or_default() += 1;
        }
    }
    if df.is_empty() {
        return Err(Error::Degenerate(
            "empty vocabulary after tokenization".into(),
        ));
    }
    let n = corpus.len() as f64;
    let mut vocabulary = BTreeMap::new();
    let mut idf = Vec::with_capacity(df.len());
    for (i, (term, count)) in df.into_iter().enumerate() {
        let c = count as f64;
        idf.push(if settings.smooth_idf {
            ((1.0 + n) / (1.0 + c)).ln() + 1.0
        } else {
            (n / c).ln() + 1.0
        });
        vocabulary.insert(term, i);
    }
    Ok(TfidfModel {
        vocabulary,
        idf,
        settings: settings.clone(),
    })
}

impl TfidfModel {
    pub fn len(&self) -> usize {
        self.idf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.idf.is_empty()
    }

    pub fn transform_one(&self, text: &str) -> SparseRow {
        let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
        for t in terms(text, &self.settings) {
            if let Some(&j) = self.vocabulary.get(&t) {
                *counts.entry(j).or_default() += 1.0;
            }
        }
        let mut row: SparseRow = counts
            .into_iter()
            .map(|(j, tf)| (j, tf * self.idf[j]))
            .collect();
        if self.settings.l2_norm {
            let norm = row.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.iter_mut().for_each(|(_, v)| *v /= norm);
            }
        }
        row
    }

    pub fn transform<S: AsRef<str>>(&self, texts: &[S]) -> Vec<SparseRow> {
        texts
            .iter()
            .map(|t| self.transform_one(t.as_ref()))
            .collect()
    }

    pub fn transform_dense<S: AsRef<str>>(&self, texts: &[S]) -> Result<Matrix> {
        let mut m = Matrix::zeros(texts.len(), self.len());
        for (i, t) in texts.iter().enumerate() {
            for (j, v) in self.transform_one(t.as_ref()) {
                m.row_mut(i)[j] = v;
            }
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextConfig {
    pub tfidf: TfidfSettings,
    /// Inverse regularization strength of the text classifier.
    pub c: f64,
    pub folds: usize,
    pub seed: u64,
}

impl Default for TextConfig {
    fn default() -> Self {
        Self {
            tfidf: TfidfSettings::default(),
            c: 1.0,
            folds: DEFAULT_FOLDS,
            seed: 0,
        }
    }
}

/// Cross-validated text classifier outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct TextCv {
    pub fold_aurocs: Vec<f64>,
    pub oof_scores: Vec<f64>,
    /// Vectorizer fitted inside each training fold.
    pub fold_models: Vec<TfidfModel>,
}

impl TextCv {
    pub fn mean_auroc(&self) -> f64 {
        mean(&self.fold_aurocs)
    }
}

/// TF-IDF + logistic regression over fixed folds; the vectorizer is refit per fold.
pub fn text_cv<S: AsRef<str>>(
    texts: &[S],
    labels: &[bool],
    folds: &[Fold],
    cfg: &TextConfig,
) -> Result<TextCv> {
    if texts.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            found: texts.len(),
        });
    }
    let mut oof = vec![f64::NAN; texts.len()];
    let mut fold_aurocs = Vec::with_capacity(folds.len());
    let mut fold_models = Vec::with_capacity(folds.len());
    for fold in folds {
        let train: Vec<&str> = fold.train.iter().map(|&i| texts[i].as_ref()).collect();
        let test: Vec<&str> = fold.test.iter().map(|&i| texts[i].as_ref()).collect();
        let y_train: Vec<bool> = fold.train.iter().map(|&i| labels[i]).collect();
        let y_test: Vec<bool> = fold.test.iter().map(|&i| labels[i]).collect();
        let model = fit_tfidf(&train, &cfg.tfidf)?;
        let clf =
            LogisticRegression::with_c(cfg.c).fit(&model.transform_dense(&train)?, &y_train)?;
        let scores = clf.predict_proba(&model.transform_dense(&test)?)?;
        fold_aurocs.push(auroc_value(&scores, &y_test)?);
        for (&i, s) in fold.test.iter().zip(scores) {
            oof[i] = s;
        }
        fold_models.push(model);
    }
    Ok(TextCv {
        fold_aurocs,
        oof_scores: oof,
        fold_models,
    })
}

/// k-fold CV AUROC of the text classifier.
pub fn text_classifier_auroc<S: AsRef<str>>(
    texts: &[S],
    labels: &[bool],
    cfg: &TextConfig,
) -> Result<f64> {
    let folds = stratified_kfold(labels, cfg.folds, cfg.seed)?;
    Ok(text_cv(texts, labels, &folds, cfg)?.mean_auroc())
}

/// Parses a lexicon file: one lowercase phrase per line, `#` comments allowed.
pub fn parse_lexicon(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| tokenize(l, true))
        .filter(|t| !t.is_empty())
        .collect()
}

/// Whether any lexicon phrase occurs as a contiguous token sequence.
pub fn contains_hedge(text: &str, lexicon: &[Vec<String>]) -> bool {
    let toks = tokenize(text, true);
    lexicon
        .iter()
        .any(|phrase| toks.windows(phrase.len()).any(|w| w == phrase.as_slice()))
}

/// Share of digit-bearing tokens.
pub fn number_density(text: &str) -> f64 {
    let toks = tokenize(text, true);
    if toks.is_empty() {
        return 0.0;
    }
    toks.iter()
        .filter(|t| t.chars().any(|c| c.is_ascii_digit()))
        .count() as f64
        / toks.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceStats {
    /// Welch p for token counts, correct vs wrong; `None` if degenerate.
    pub length_p: Option<f64>,
    pub number_density_p: Option<f64>,
    pub hedging_rate_correct: f64,
    pub hedging_rate_wrong: f64,
    pub vocab_jaccard: f64,
    pub mean_length_correct: f64,
    pub mean_length_wrong: f64,
}

pub fn surface_stats<S: AsRef<str>>(
    texts: &[S],
    labels: &[bool],
    lexicon: &[Vec<String>],
) -> Result<SurfaceStats> {
    let split = |f: &dyn Fn(&str) -> f64| -> (Vec<f64>, Vec<f64>) {
        let mut c = Vec::new();
        let mut w = Vec::new();
        for (t, &l) in texts.iter().zip(labels) {
            if l { &mut w } else { &mut c }.push(f(t.as_ref()));
        }
        (c, w)
    };
    let (len_c, len_w) = split(&|t| tokenize(t, true).len() as f64);
    if len_c.is_empty() || len_w.is_empty() {
        return Err(Error::SingleClass {
            n_pos: len_w.len(),
            n_neg: len_c.len(),
        });
    }
    let (nd_c, nd_w) = split(&|t| number_density(t));
    let (h_c, h_w) = split(&|t| f64::from(u8::from(contains_hedge(t, lexicon))));
    let vocab = |want: bool| -> BTreeSet<String> {
        texts
            .iter()
            .zip(labels)
            .filter(|(_, &l)| l == want)
            .flat_map(|(t, _)| tokenize(t.as_ref(), true))
            .collect()
    };
    let (vc, vw) = (vocab(false), vocab(true));
    let union = vc.union(&vw).count();
    let jaccard = if union == 0 {
        0.0
    } else {
        vc.intersection(&vw).count() as f64 / union as f64
    };
    Ok(SurfaceStats {
        length_p: welch_t(&len_c, &len_w).ok().map(|r| r.p),
        number_density_p: welch_t(&nd_c, &nd_w).ok().map(|r| r.p),
        hedging_rate_correct: mean(&h_c),
        hedging_rate_wrong: mean(&h_w),
        vocab_jaccard: jaccard,
        mean_length_correct: mean(&len_c),
        mean_length_wrong: mean(&len_w),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcealmentReport {
    pub s_text: f64,
    pub s_hidden: f64,
    /// Always `s_hidden - s_text`.
    pub gap: f64,
    pub layer: usize,
    pub n_records: usize,
    pub skipped_zero_step: usize,
    pub surface: SurfaceStats,
}

impl ConcealmentReport {
    pub fn new(
        s_hidden: f64,
        s_text: f64,
        layer: usize,
        n_records: usize,
        skipped: usize,
        surface: SurfaceStats,
    ) -> Self {
        Self {
            s_text,
            s_hidden,
            gap: s_hidden - s_text,
            layer,
            n_records,
            skipped_zero_step: skipped,
            surface,
        }
    }
}

/// Hidden-state versus text AUROC on first steps, over shared folds.
///
/// `s_hidden` is a first-step probe cross-validated at the probe's layer
/// with the probe's C; `s_text` is the TF-IDF classifier on first-step text.
pub fn concealment_gap(
    dataset: &Dataset,
    probe: &Probe,
    cfg: &TextConfig,
    lexicon: &[Vec<String>],
) -> Result<ConcealmentReport> {
    let eligible: Vec<usize> = (0..dataset.len())
        .filter(|&r| dataset.records()[r].num_steps() > 0)
        .collect();
    if eligible.is_empty() {
        return Err(Error::InvalidArgument("no record has a first step".into()));
    }
    let labels: Vec<bool> = eligible
        .iter()
        .map(|&r| dataset.records()[r].is_error())
        .collect();
    let texts: Vec<String> = eligible
        .iter()
        .map(|&r| dataset.records()[r].step_text(0).unwrap_or_default())
        .collect();
    let folds = stratified_kfold(&labels, cfg.folds, cfg.seed)?;
    let x = features(dataset, &eligible, VectorSlot::step_end(0, probe.layer))?;
    let s_hidden = cross_validate(&x, &labels, probe.classifier.c, &folds)?.mean_auroc();
    let s_text = text_cv(&texts, &labels, &folds, cfg)?.mean_auroc();
    let surface = surface_stats(&texts, &labels, lexicon)?;
    Ok(ConcealmentReport::new(
        s_hidden,
        s_text,
        probe.layer,
        eligible.len(),
        dataset.len() - eligible.len(),
        surface,
    ))
}

pub const DEFAULT_CONF_THRESHOLD: u8 = 4;
pub const DEFAULT_SCORE_THRESHOLD: f64 = 0.5;

/// High stated confidence together with a high probe error score.
pub fn is_unfaithful(confidence: u8, score: f64, conf_threshold: u8, score_threshold: f64) -> bool {
    confidence >= conf_threshold && score > score_threshold
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnfaithfulRegion {
    /// Per record; `None` where confidence is missing.
    pub flags: Vec<Option<bool>>,
    pub scores: Vec<f64>,
    pub excluded: usize,
    pub wrong_considered: usize,
    pub wrong_flagged: usize,
    /// Share of wrong traces (with confidence) that are flagged.
    pub fraction_wrong_flagged: f64,
}

pub fn unfaithful_region(
    dataset: &Dataset,
    probe: &Probe,
    conf_threshold: u8,
    score_threshold: f64,
) -> Result<UnfaithfulRegion> {
    let scores = probe.score_dataset(dataset)?;
    let mut flags = Vec::with_capacity(dataset.len());
    let (mut excluded, mut considered, mut flagged) = (0, 0, 0);
    for (r, &s) in dataset.records().iter().zip(&scores) {
        match r.verbalized_confidence {
            None => {
                excluded += 1;
                flags.push(None);
            }
            Some(c) => {
                let f = is_unfaithful(c, s, conf_threshold, score_threshold);
                if r.is_error() {
                    considered += 1;
                    flagged += usize::from(f);
                }
                flags.push(Some(f));
            }
        }
    }
    if excluded == dataset.len() {
        return Err(Error::InvalidArgument(
            "no record carries a verbalized confidence".into(),
        ));
    }
    Ok(UnfaithfulRegion {
        flags,
        scores,
        excluded,
        wrong_considered: considered,
        wrong_flagged: flagged,
        fraction_wrong_flagged: if considered == 0 {
            0.0
        } else {
            flagged as f64 / considered as f64
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn idf_hand_computed() {
        let m = fit_tfidf(&["a b", "a c"], &TfidfSettings::default()).unwrap();
        assert_eq!(m.vocabulary.keys().collect::<Vec<_>>(), ["a", "b", "c"]);
        assert!((m.idf[0] - 1.0).abs() < 1e-15);
        assert!((m.idf[1] - ((3.0f64 / 2.0).ln() + 1.0)).abs() < 1e-15);
        let row = m.transform_one("a b");
        let norm: f64 = row.iter().map(|(_, v)| v * v).sum();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn oov_text_is_zero_and_duplicates_match() {
        let m = fit_tfidf(&["alpha beta", "gamma"], &TfidfSettings::default()).unwrap();
        assert!(m.transform_one("zeta eta").is_empty());
        assert_eq!(
            m.transform_one("alpha beta"),
            m.transform_one("Alpha, BETA!")
        );
    }

    #[test]
    fn empty_vocabulary_errors() {
        assert!(fit_tfidf(&["...", "  "], &TfidfSettings::default()).is_err());
        assert!(fit_tfidf::<&str>(&[], &TfidfSettings::default()).is_err());
    }

    #[test]
    fn tokenizer_keeps_numbers() {
        assert_eq!(
            tokenize("Step 1: 3*4=12.", true),
            ["step", "1", "3", "4", "12"]
        );
        assert!((number_density("x 1 y 22") - 0.5).abs() < 1e-15);
    }

    #[test]
    fn bigrams() {
        let s = TfidfSettings {
            ngram_max: 2,
            ..Default::default()
        };
        let m = fit_tfidf(&["not sure now"], &s).unwrap();
        assert!(m.vocabulary.contains_key("not sure"));
        assert_eq!(m.len(), 5);
    }

    #[test]
    fn hedge_phrases_match_whole_tokens() {
        let lex = parse_lexicon(HEDGING_LEXICON);
        assert_eq!(lex.len(), 8);
        assert!(contains_hedge("I think it is 4", &lex));
        assert!(contains_hedge("Maybe 4", &lex));
        assert!(!contains_hedge("mighty thinking", &lex));
        assert!(!contains_hedge("think I", &lex));
    }

    #[test]
    fn unfaithful_thresholds() {
        assert!(is_unfaithful(5, 0.932, 4, 0.5));
        assert!(!is_unfaithful(3, 0.99, 4, 0.5));
        assert!(!is_unfaithful(4, 0.5, 4, 0.5));
    }

    #[test]
    fn gap_is_exact_difference() {
        let s = SurfaceStats {
            length_p: None,
            number_density_p: None,
            hedging_rate_correct: 0.0,
            hedging_rate_wrong: 0.0,
            vocab_jaccard: 0.0,
            mean_length_correct: 0.0,
            mean_length_wrong: 0.0,
        };
        let r = ConcealmentReport::new(0.787, 0.590, 0, 1, 0, s);
        assert_eq!(r.gap, 0.787 - 0.590);
    }
}
