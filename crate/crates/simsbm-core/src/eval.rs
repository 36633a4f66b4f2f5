//! Train/test splitting, ranking metrics, and the two reference baselines.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{Dataset, Observation};
use crate::error::{Error, Result};
use crate::model::Model;

/// Rows of (true output, score vector). Scores from probabilistic models are
/// validated as distributions; `new_unchecked` admits arbitrary finite
/// scores since every metric only uses score order.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPredictions {
    output_count: usize,
    rows: Vec<(usize, Vec<f64>)>,
}

impl ScoredPredictions {
    pub fn new(output_count: usize, rows: Vec<(usize, Vec<f64>)>) -> Result<Self> {
        for (i, (truth, scores)) in rows.iter().enumerate() {
            if *truth >= output_count {
                return Err(Error::DataMismatch(format!(
                    "row {i}: true output {truth} out of range"
                )));
            }
            if scores.len() != output_count {
                return Err(Error::DataMismatch(format!(
                    "row {i}: {} scores, expected {output_count}",
                    scores.len()
                )));
            }
            let mut sum = 0.0;
            for &s in scores {
                if !s.is_finite() || s < 0.0 {
                    return Err(Error::DataMismatch(format!(
                        "row {i}: score {s} is not a probability"
                    )));
                }
                sum += s;
            }
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::DataMismatch(format!(
                    "row {i}: scores sum to {sum}, expected 1"
                )));
            }
        }
        Ok(ScoredPredictions { output_count, rows })
    }

    /// Skips the probability-vector validation; scores must still be finite.
    pub fn new_unchecked(output_count: usize, rows: Vec<(usize, Vec<f64>)>) -> Self {
        ScoredPredictions { output_count, rows }
    }

    pub fn output_count(&self) -> usize {
        self.output_count
    }

    pub fn rows(&self) -> &[(usize, Vec<f64>)] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// All fields lie in [0,1]; `coverage_error_normalized` is the only
/// lower-is-better one.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MetricReport {
    pub f1_max: f64,
    pub p_at_1: f64,
    pub auc_roc_weighted: f64,
    pub auc_pr_weighted: f64,
    pub rank_avg_precision: f64,
    pub coverage_error_normalized: f64,
}

impl MetricReport {
    pub fn fields() -> [&'static str; 6] {
        [
            "f1_max",
            "p_at_1",
            "auc_roc_weighted",
            "auc_pr_weighted",
            "rank_avg_precision",
            "coverage_error_normalized",
        ]
    }

    pub fn values(&self) -> [f64; 6] {
        [
            self.f1_max,
            self.p_at_1,
            self.auc_roc_weighted,
            self.auc_pr_weighted,
            self.rank_avg_precision,
            self.coverage_error_normalized,
        ]
    }
}

/// Splits the observation multiset: each of the `count` units of every
/// observation goes to the training side with probability `train_fraction`,
/// independently, in a fixed order driven by `seed`. Counts may therefore
/// split across sides. Errors if either side ends up empty.
pub fn split(data: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train fraction must be in (0,1), got {train_fraction}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train_rows = Vec::new();
    let mut test_rows = Vec::new();
    for obs in data.observations() {
        let mut train_count = 0u64;
        for _ in 0..obs.count {
            if rng.random::<f64>() < train_fraction {
                train_count += 1;
            }
        }
        if train_count > 0 {
            train_rows.push(Observation { count: train_count, ..obs.clone() });
        }
        if train_count < obs.count {
            test_rows.push(Observation { count: obs.count - train_count, ..obs.clone() });
        }
    }
    if train_rows.is_empty() {
        return Err(Error::EmptySplit { side: "training" });
    }
    if test_rows.is_empty() {
        return Err(Error::EmptySplit { side: "test" });
    }
    let train = Dataset::new(data.spec().clone(), train_rows)?;
    let test = Dataset::new(data.spec().clone(), test_rows)?;
    Ok((train, test))
}

/// Index of the row's highest score, lowest index on ties.
fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Competition rank of the true output: 1 + number of strictly greater
/// scores.
fn rank_of_truth(scores: &[f64], truth: usize) -> usize {
    1 + scores.iter().filter(|&&s| s > scores[truth]).count()
}

/// The full metric suite. Per-class metrics are weighted by each class's
/// true-instance count; ROC AUC skips (with a warning) classes that lack
/// positives or negatives, since the area is undefined there.
pub fn compute_metrics(preds: &ScoredPredictions) -> Result<MetricReport> {
    let o = preds.output_count();
    let rows = preds.rows();
    if rows.is_empty() {
        return Err(Error::DataMismatch("no prediction rows".into()));
    }
    let n = rows.len() as f64;

    let mut hits = 0usize;
    let mut rank_sum = 0.0;
    let mut recip_rank_sum = 0.0;
    for (truth, scores) in rows {
        if argmax(scores) == *truth {
            hits += 1;
        }
        let rank = rank_of_truth(scores, *truth) as f64;
        rank_sum += rank;
        recip_rank_sum += 1.0 / rank;
    }
    let p_at_1 = hits as f64 / n;
    let rank_avg_precision = recip_rank_sum / n;
    let coverage_error_normalized = rank_sum / n / o as f64;

    // Per-class score columns, split by truth and sorted ascending.
    let mut pos: Vec<Vec<f64>> = vec![Vec::new(); o];
    let mut neg: Vec<Vec<f64>> = vec![Vec::new(); o];
    for (truth, scores) in rows {
        for (c, &s) in scores.iter().enumerate() {
            if c == *truth {
                pos[c].push(s);
            } else {
                neg[c].push(s);
            }
        }
    }
    for c in 0..o {
        pos[c].sort_unstable_by(f64::total_cmp);
        neg[c].sort_unstable_by(f64::total_cmp);
    }

    // F1 only changes at observed scores, so sweeping those is exhaustive.
    let mut thresholds: Vec<f64> = rows
        .iter()
        .flat_map(|(_, scores)| scores.iter().copied())
        .collect();
    thresholds.sort_unstable_by(f64::total_cmp);
    thresholds.dedup();
    let mut f1_max = 0.0f64;
    for &tau in &thresholds {
        let mut weighted = 0.0;
        for c in 0..o {
            let n_pos = pos[c].len();
            if n_pos == 0 {
                continue;
            }
            let tp = n_pos - pos[c].partition_point(|&s| s < tau);
            let fp = neg[c].len() - neg[c].partition_point(|&s| s < tau);
            let fn_ = n_pos - tp;
            let denom = 2 * tp + fp + fn_;
            let f1 = if denom > 0 { 2.0 * tp as f64 / denom as f64 } else { 0.0 };
            weighted += n_pos as f64 * f1;
        }
        f1_max = f1_max.max(weighted / n);
    }

    // ROC AUC by rank sum with tie-averaged ranks.
    let mut roc_num = 0.0;
    let mut roc_weight = 0.0;
    for c in 0..o {
        let (n_pos, n_neg) = (pos[c].len(), neg[c].len());
        if n_pos == 0 {
            continue;
        }
        if n_neg == 0 {
            log::warn!(
                "ROC AUC undefined for class {c}: no negative instances; class excluded"
            );
            continue;
        }
        let mut all: Vec<(f64, bool)> = pos[c]
            .iter()
            .map(|&s| (s, true))
            .chain(neg[c].iter().map(|&s| (s, false)))
            .collect();
        all.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
        let mut pos_rank_sum = 0.0;
        let mut i = 0;
        while i < all.len() {
            let mut j = i;
            while j < all.len() && all[j].0 == all[i].0 {
                j += 1;
            }
            let avg_rank = (i + 1 + j) as f64 / 2.0;
            let pos_in_group = all[i..j].iter().filter(|x| x.1).count();
            pos_rank_sum += avg_rank * pos_in_group as f64;
            i = j;
        }
        let u = pos_rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
        let auc = u / (n_pos as f64 * n_neg as f64);
        roc_num += n_pos as f64 * auc;
        roc_weight += n_pos as f64;
    }
    if roc_weight == 0.0 {
        return Err(Error::DataMismatch(
            "ROC AUC undefined: every class lacks positives or negatives".into(),
        ));
    }
    let auc_roc_weighted = roc_num / roc_weight;

    // Average precision as the step integral over descending thresholds.
    let mut pr_num = 0.0;
    for c in 0..o {
        let n_pos = pos[c].len();
        if n_pos == 0 {
            continue;
        }
        let mut all: Vec<(f64, bool)> = pos[c]
            .iter()
            .map(|&s| (s, true))
            .chain(neg[c].iter().map(|&s| (s, false)))
            .collect();
        all.sort_unstable_by(|a, b| b.0.total_cmp(&a.0));
        let mut tp = 0usize;
        let mut fp = 0usize;
        let mut prev_recall = 0.0;
        let mut ap = 0.0;
        let mut i = 0;
        while i < all.len() {
            let mut j = i;
            while j < all.len() && all[j].0 == all[i].0 {
                if all[j].1 {
                    tp += 1;
                } else {
                    fp += 1;
                }
                j += 1;
            }
            let recall = tp as f64 / n_pos as f64;
            let precision = tp as f64 / (tp + fp) as f64;
            ap += (recall - prev_recall) * precision;
            prev_recall = recall;
            i = j;
        }
        pr_num += n_pos as f64 * ap;
    }
    let auc_pr_weighted = pr_num / n;

    Ok(MetricReport {
        f1_max,
        p_at_1,
        auc_roc_weighted,
        auc_pr_weighted,
        rank_avg_precision,
        coverage_error_normalized,
    })
}

/// Anything that scores a context with a distribution over outputs.
pub trait Scorer {
    fn score(&self, context: &[usize]) -> Result<Vec<f64>>;
}

impl Scorer for Model {
    fn score(&self, context: &[usize]) -> Result<Vec<f64>> {
        self.predict(context)
    }
}

/// Context-independent scorer: the empirical output frequencies of the
/// training set.
#[derive(Debug, Clone)]
pub struct FrequencyBaseline {
    probs: Vec<f64>,
}

impl FrequencyBaseline {
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

impl Scorer for FrequencyBaseline {
    fn score(&self, _context: &[usize]) -> Result<Vec<f64>> {
        Ok(self.probs.clone())
    }
}

pub fn baseline_frequency(train: &Dataset) -> Result<FrequencyBaseline> {
    if train.is_empty() {
        return Err(Error::EmptyData);
    }
    let mut probs = vec![0.0; train.spec().output_count];
    for obs in train.observations() {
        probs[obs.output] += obs.count as f64;
    }
    let total = train.total_weight() as f64;
    for p in &mut probs {
        *p /= total;
    }
    Ok(FrequencyBaseline { probs })
}

/// P(o | context) proportional to P(o) * prod_n P(entity_n | o), with
/// add-one smoothing on each per-(type, output) conditional table and the
/// unsmoothed empirical prior. Computed in log space.
#[derive(Debug, Clone)]
pub struct NaiveBayesBaseline {
    layer_types: Vec<usize>,
    output_count: usize,
    log_prior: Vec<f64>,
    /// Per type, entity-major F_t x O table of log P(entity | output).
    log_cond: Vec<Vec<f64>>,
}

impl Scorer for NaiveBayesBaseline {
    fn score(&self, context: &[usize]) -> Result<Vec<f64>> {
        if context.len() != self.layer_types.len() {
            return Err(Error::DataMismatch(format!(
                "context has {} layers, expected {}",
                context.len(),
                self.layer_types.len()
            )));
        }
        let mut log_scores = self.log_prior.clone();
        for (&e, &t) in context.iter().zip(&self.layer_types) {
            for (o, ls) in log_scores.iter_mut().enumerate() {
                *ls += self.log_cond[t][e * self.output_count + o];
            }
        }
        let max = log_scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut scores: Vec<f64> =
            log_scores.iter().map(|&ls| (ls - max).exp()).collect();
        let total: f64 = scores.iter().sum();
        for s in &mut scores {
            *s /= total;
        }
        Ok(scores)
    }
}

pub fn baseline_naive_bayes(train: &Dataset) -> Result<NaiveBayesBaseline> {
    if train.is_empty() {
        return Err(Error::EmptyData);
    }
    let spec = train.spec();
    let o = spec.output_count;
    let layer_types = spec.layer_type_indices();

    let mut prior = vec![0.0f64; o];
    let mut counts: Vec<Vec<f64>> = spec
        .types
        .iter()
        .map(|t| vec![0.0; t.entity_count * o])
        .collect();
    let mut class_totals: Vec<Vec<f64>> = vec![vec![0.0; o]; spec.types.len()];
    for obs in train.observations() {
        let w = obs.count as f64;
        prior[obs.output] += w;
        for (&e, &t) in obs.context.iter().zip(&layer_types) {
            counts[t][e * o + obs.output] += w;
            class_totals[t][obs.output] += w;
        }
    }
    let total = train.total_weight() as f64;
    let log_prior: Vec<f64> = prior.iter().map(|&p| (p / total).ln()).collect();
    let log_cond: Vec<Vec<f64>> = counts
        .iter()
        .enumerate()
        .map(|(t, table)| {
            let f_t = spec.types[t].entity_count as f64;
            table
                .iter()
                .enumerate()
                .map(|(i, &c)| ((c + 1.0) / (class_totals[t][i % o] + f_t)).ln())
                .collect()
        })
        .collect();
    Ok(NaiveBayesBaseline { layer_types, output_count: o, log_prior, log_cond })
}

/// Scores every test observation, one row per multiset unit (counts expand
/// into repeated rows).
pub fn score_dataset(scorer: &dyn Scorer, test: &Dataset) -> Result<ScoredPredictions> {
    let mut rows = Vec::with_capacity(test.total_weight() as usize);
    for obs in test.observations() {
        let scores = scorer.score(&obs.context)?;
        for _ in 0..obs.count {
            rows.push((obs.output, scores.clone()));
        }
    }
    ScoredPredictions::new(test.spec().output_count, rows)
}

pub fn evaluate_scorer(scorer: &dyn Scorer, test: &Dataset) -> Result<MetricReport> {
    compute_metrics(&score_dataset(scorer, test)?)
}

pub fn evaluate_model(model: &Model, test: &Dataset) -> Result<MetricReport> {
    if test.spec() != model.spec() {
        return Err(Error::DataMismatch("test spec does not match model spec".into()));
    }
    evaluate_scorer(model, test)
}
