//! Test-set construction, non-answer sampling and the evaluation metrics.

use std::collections::{BTreeMap, HashSet};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, QuestionRecord, QuestionType};
use crate::error::{Error, Result};
use crate::moe::{predict_binary, predict_preference, ModelParams};
use crate::similarity::StatsTable;

/// Thresholds reported for accuracy@a.
pub const ACCURACY_GRID: [f64; 10] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

/// FNV-1a, 64 bit.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Two thirds of questions train, keyed on a hash of the id.
pub fn is_train_question(question_id: &str) -> bool {
    fnv1a(question_id.as_bytes()) % 3 != 0
}

/// `(train, test)` question indices.
pub fn split_questions(corpus: &Corpus) -> (Vec<usize>, Vec<usize>) {
    (0..corpus.questions.len()).partition(|&i| is_train_question(&corpus.questions[i].question_id))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Standard {
    Silver,
    Gold,
}

impl Standard {
    pub fn name(self) -> &'static str {
        match self {
            Standard::Silver => "silver",
            Standard::Gold => "gold",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestItem {
    pub question_id: String,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryTestSet {
    pub standard: Standard,
    pub items: Vec<TestItem>,
}

/// Majority label; ties are dropped.
pub fn build_silver<'a>(questions: impl IntoIterator<Item = &'a QuestionRecord>) -> BinaryTestSet {
    let items = questions
        .into_iter()
        .filter(|q| q.n_total > 0 && q.n_pos != q.n_neg)
        .map(|q| TestItem {
            question_id: q.question_id.clone(),
            label: u8::from(q.n_pos > q.n_neg),
        })
        .collect();
    BinaryTestSet {
        standard: Standard::Silver,
        items,
    }
}

/// Unanimously labeled questions only.
pub fn build_gold<'a>(questions: impl IntoIterator<Item = &'a QuestionRecord>) -> BinaryTestSet {
    let items = questions
        .into_iter()
        .filter(|q| q.n_total > 0 && (q.n_pos == 0 || q.n_neg == 0))
        .map(|q| TestItem {
            question_id: q.question_id.clone(),
            label: u8::from(q.n_pos > 0),
        })
        .collect();
    BinaryTestSet {
        standard: Standard::Gold,
        items,
    }
}

fn check_lengths(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    Ok(())
}

/// Area under the ROC curve by the rank-sum formula; tied scores count 1/2.
pub fn auc_binary(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(
            "AUC needs both positive and negative questions".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the midrank of each tie group, summed over positives.
    let mut doubled_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let doubled_mid = (i + 1 + j + 1) as u128;
        for &k in &order[i..=j] {
            if labels[k] == 1 {
                doubled_rank_sum += doubled_mid;
            }
        }
        i = j + 1;
    }
    let (p, n) = (n_pos as u128, n_neg as u128);
    let doubled_u = doubled_rank_sum - p * (p + 1);
    Ok(doubled_u as f64 / (2 * p * n) as f64)
}

/// AUC as the trapezoidal area under the curve traced by sweeping the
/// decision threshold over every distinct score.
pub fn auc_threshold_sweep(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let n_pos = labels.iter().filter(|&&y| y == 1).count() as f64;
    let n_neg = labels.len() as f64 - n_pos;
    if n_pos == 0.0 || n_neg == 0.0 {
        return Err(Error::UndefinedMetric(
            "AUC needs both positive and negative questions".into(),
        ));
    }
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut area = 0.0;
    for t in thresholds {
        let (mut dtp, mut dfp) = (0.0, 0.0);
        for (s, &y) in scores.iter().zip(labels) {
            if *s == t {
                if y == 1 {
                    dtp += 1.0;
                } else {
                    dfp += 1.0;
                }
            }
        }
        area += dfp * (tp + dtp / 2.0);
        tp += dtp;
        fp += dfp;
    }
    debug_assert_eq!(fp, n_neg);
    Ok(area / (n_pos * n_neg))
}

/// `ceil(share * n)`, immune to representation error in `share`.
pub fn fraction_count(n: usize, share: f64) -> usize {
    let raw = share * n as f64;
    // (1 - 0.1) * 10 is 9.000000000000002 in floating point
    let k = (raw - 1e-9 * raw.max(1.0)).ceil();
    (k.max(0.0) as usize).min(n)
}

/// Number of questions accuracy@a keeps: `ceil((1 - a) * n)`.
pub fn kept_count(n: usize, a: f64) -> usize {
    fraction_count(n, 1.0 - a)
}

/// Accuracy over the `ceil((1 - a) n)` questions with the largest
/// `|p - 0.5|`, ties by question id. `p = 0.5` predicts yes.
pub fn accuracy_at(scores: &[f64], labels: &[u8], question_ids: &[String], a: f64) -> Result<f64> {
    check_lengths(scores, labels)?;
    if question_ids.len() != scores.len() {
        return Err(Error::InvalidArgument("one question id per score required".into()));
    }
    if !(0.0..1.0).contains(&a) {
        return Err(Error::InvalidArgument(format!("accuracy threshold {a} outside [0, 1)")));
    }
    let k = kept_count(scores.len(), a);
    if k == 0 {
        return Err(Error::UndefinedMetric("accuracy over an empty set".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&x, &y| {
        (scores[y] - 0.5)
            .abs()
            .total_cmp(&(scores[x] - 0.5).abs())
            .then_with(|| question_ids[x].cmp(&question_ids[y]))
    });
    let correct = order[..k]
        .iter()
        .filter(|&&i| u8::from(scores[i] >= 0.5) == labels[i])
        .count();
    Ok(correct as f64 / k as f64)
}

/// Position of an answer inside a corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AnswerRef {
    pub question: usize,
    pub answer: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenItem {
    /// Index into `Corpus::questions`.
    pub question: usize,
    /// `non_answers[i]` are the non-answers drawn for answer `i`.
    pub non_answers: Vec<Vec<AnswerRef>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenEvalSet {
    pub rng_seed: u64,
    pub neg_per_answer: usize,
    pub items: Vec<OpenItem>,
}

/// For every answer of the given questions, draws `neg_per_answer`
/// answers of other questions uniformly from the whole corpus, without
/// repeats within a question.
pub fn sample_non_answers(
    corpus: &Corpus,
    question_indices: &[usize],
    neg_per_answer: usize,
    seed: u64,
) -> Result<OpenEvalSet> {
    if neg_per_answer < 1 {
        return Err(Error::InvalidArgument("neg_per_answer must be at least 1".into()));
    }
    let pool: Vec<AnswerRef> = corpus
        .questions
        .iter()
        .enumerate()
        .flat_map(|(qi, q)| (0..q.answers.len()).map(move |ai| AnswerRef { question: qi, answer: ai }))
        .collect();
    let items = question_indices
        .par_iter()
        .map(|&qi| {
            let own = corpus.questions[qi].answers.len();
            let needed = own * neg_per_answer;
            let available = pool.len() - own;
            if needed > available {
                return Err(Error::PoolTooSmall { needed, available });
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(qi as u64);
            let drawn: Vec<AnswerRef> = if 2 * needed <= available {
                let mut seen = HashSet::with_capacity(needed);
                let mut out = Vec::with_capacity(needed);
                while out.len() < needed {
                    let r = pool[rng.random_range(0..pool.len())];
                    if r.question != qi && seen.insert(r) {
                        out.push(r);
                    }
                }
                out
            } else {
                let eligible: Vec<AnswerRef> = pool.iter().copied().filter(|r| r.question != qi).collect();
                eligible.choose_multiple(&mut rng, needed).copied().collect()
            };
            Ok(OpenItem {
                question: qi,
                non_answers: drawn.chunks(neg_per_answer).map(<[AnswerRef]>::to_vec).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(OpenEvalSet {
        rng_seed: seed,
        neg_per_answer,
        items,
    })
}

/// Mean over questions of the mean over answers of `1[p > 0.5]`.
/// `pair_probs[q][a]` holds the probabilities of answer `a` against each
/// of its non-answers; they are averaged per answer.
pub fn auc_open(pair_probs: &[Vec<Vec<f64>>]) -> Result<f64> {
    let per_question: Vec<f64> = pair_probs
        .iter()
        .filter(|answers| !answers.is_empty())
        .map(|answers| {
            let per_answer: f64 = answers
                .iter()
                .map(|probs| {
                    let wins = probs.iter().filter(|&&p| p > 0.5).count();
                    wins as f64 / probs.len() as f64
                })
                .sum();
            per_answer / answers.len() as f64
        })
        .collect();
    if per_question.is_empty() {
        return Err(Error::UndefinedMetric("AUC_o over no questions".into()));
    }
    Ok(per_question.iter().sum::<f64>() / per_question.len() as f64)
}

/// `p_q` for each question, `None` when its product has no review sentences.
pub fn predict_questions(
    corpus: &Corpus,
    stats: &StatsTable,
    params: &ModelParams,
    question_indices: &[usize],
) -> Vec<Option<f64>> {
    question_indices
        .par_iter()
        .map(|&qi| {
            let q = &corpus.questions[qi];
            let experts = corpus.experts(&q.product_id);
            let cat = stats.get(corpus.category_of(&q.product_id)?)?;
            predict_binary(q, &experts, cat, params).ok().map(|m| m.combined)
        })
        .collect()
}

/// Preference probabilities for every sampled pair, grouped as `auc_open` expects.
/// Questions on products without reviews are skipped.
pub fn open_pair_probabilities(
    corpus: &Corpus,
    stats: &StatsTable,
    params: &ModelParams,
    set: &OpenEvalSet,
) -> Vec<Vec<Vec<f64>>> {
    set.items
        .par_iter()
        .filter_map(|item| {
            let q = &corpus.questions[item.question];
            let experts = corpus.experts(&q.product_id);
            let cat = stats.get(corpus.category_of(&q.product_id)?)?;
            if experts.is_empty() {
                return None;
            }
            let rows = q
                .answers
                .iter()
                .zip(&item.non_answers)
                .map(|(a, negs)| {
                    negs.iter()
                        .map(|r| {
                            let na = &corpus.questions[r.question].answers[r.answer];
                            predict_preference(q, a, na, &experts, cat, params)
                                .map(|m| m.combined)
                                .unwrap_or(0.5)
                        })
                        .collect()
                })
                .collect();
            Some(rows)
        })
        .collect()
}

/// One row of `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub category: String,
    pub variant: String,
    /// `None` for open-ended variants, which have no binary test set.
    pub standard: Option<Standard>,
    pub auc_b: Option<f64>,
    /// Keys "0.0" through "0.9".
    pub accuracy_at: Option<BTreeMap<String, f64>>,
    pub auc_o: Option<f64>,
    pub n_test: usize,
}

fn by_category(corpus: &Corpus, question_indices: &[usize]) -> BTreeMap<String, Vec<usize>> {
    let mut out: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for &qi in question_indices {
        if let Some(cat) = corpus.category_of(&corpus.questions[qi].product_id) {
            out.entry(cat.to_string()).or_default().push(qi);
        }
    }
    out
}

/// Binary metrics for one test set given aligned predictions.
pub fn binary_metrics(
    set: &BinaryTestSet,
    predictions: &BTreeMap<String, f64>,
) -> (Option<f64>, Option<BTreeMap<String, f64>>, usize) {
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    let mut ids = Vec::new();
    for item in &set.items {
        if let Some(&p) = predictions.get(&item.question_id) {
            scores.push(p);
            labels.push(item.label);
            ids.push(item.question_id.clone());
        }
    }
    let auc = auc_binary(&scores, &labels).ok();
    let acc: BTreeMap<String, f64> = ACCURACY_GRID
        .iter()
        .filter_map(|&a| {
            accuracy_at(&scores, &labels, &ids, a)
                .ok()
                .map(|v| (format!("{a:.1}"), v))
        })
        .collect();
    let n = scores.len();
    (auc, (!acc.is_empty()).then_some(acc), n)
}

/// Per-category metrics on the test questions: AUC_b and accuracy@a for
/// both standards (binary variants), or AUC_o (open-ended variants).
pub fn evaluate(
    corpus: &Corpus,
    stats: &StatsTable,
    params: &ModelParams,
    test_indices: &[usize],
    neg_per_answer: usize,
    seed: u64,
) -> Result<Vec<MetricsRecord>> {
    let variant = params.variant.name().to_string();
    let mut out = Vec::new();
    for (category, indices) in by_category(corpus, test_indices) {
        if params.variant.is_open() {
            let open: Vec<usize> = indices
                .iter()
                .copied()
                .filter(|&qi| {
                    let q = &corpus.questions[qi];
                    q.qtype == QuestionType::Open && !q.answers.is_empty()
                })
                .collect();
            if open.is_empty() {
                continue;
            }
            let set = sample_non_answers(corpus, &open, neg_per_answer, seed)?;
            let probs = open_pair_probabilities(corpus, stats, params, &set);
            out.push(MetricsRecord {
                category,
                variant: variant.clone(),
                standard: None,
                auc_b: None,
                accuracy_at: None,
                auc_o: auc_open(&probs).ok(),
                n_test: probs.len(),
            });
            continue;
        }
        let binary: Vec<usize> = indices
            .iter()
            .copied()
            .filter(|&qi| corpus.questions[qi].n_total > 0)
            .collect();
        if binary.is_empty() {
            continue;
        }
        let predictions: BTreeMap<String, f64> = binary
            .iter()
            .zip(predict_questions(corpus, stats, params, &binary))
            .filter_map(|(&qi, p)| p.map(|p| (corpus.questions[qi].question_id.clone(), p)))
            .collect();
        let questions = binary.iter().map(|&qi| &corpus.questions[qi]);
        for set in [build_silver(questions.clone()), build_gold(questions.clone())] {
            let (auc_b, accuracy_at, n_test) = binary_metrics(&set, &predictions);
            out.push(MetricsRecord {
                category: category.clone(),
                variant: variant.clone(),
                standard: Some(set.standard),
                auc_b,
                accuracy_at,
                auc_o: None,
                n_test,
            });
        }
    }
    Ok(out)
}
