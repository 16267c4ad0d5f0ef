//! Binary-question detection and yes/no answer labeling.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, Corpus, QuestionRecord, QuestionType, SparseVec, Vocabulary};
use crate::error::{Error, Result};
use crate::eval::fraction_count;
use crate::moe::sigmoid;
use crate::train::{maximize, LbfgsConfig};

const FILLERS: &[&str] = &["so", "ok", "hi", "please"];

const AUXILIARIES: &[&str] = &[
    "is", "are", "was", "were", "am", "do", "does", "did", "can", "could", "will", "would",
    "should", "has", "have", "had", "may", "might", "must",
];

pub const DEFAULT_KEEP_FRACTION: f64 = 0.5;
pub const DEFAULT_LABELER_LAMBDA: f64 = 1e-3;
const LABELER_VOCAB_SIZE: usize = 5000;

/// True when the question opens (after fillers such as "so" or "please")
/// with an auxiliary or modal verb and does not end as a statement.
pub fn is_binary_question(text: &str) -> bool {
    let tokens = tokenize(text);
    let first = tokens.iter().find(|t| !FILLERS.contains(&t.as_str()));
    let Some(first) = first else {
        return false;
    };
    if !AUXILIARIES.contains(&first.as_str()) {
        return false;
    }
    let trimmed = text.trim_end();
    trimmed.ends_with('?') || !(trimmed.ends_with('.') || trimmed.ends_with('!'))
}

/// One manually labeled answer used to fit the labeler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedAnswer {
    pub answer_text: String,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledAnswer {
    pub answer_id: String,
    pub label: u8,
    pub confidence: f64,
}

/// A question from the bundled detection set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionExample {
    pub text: String,
    pub binary: bool,
}

fn parse_bundled<T: serde::de::DeserializeOwned>(raw: &str) -> Vec<T> {
    raw.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).expect("bundled data is valid"))
        .collect()
}

/// Small hand-labeled seed set shipped with the library.
pub fn bundled_seeds() -> Vec<SeedAnswer> {
    parse_bundled(include_str!("../data/seeds.jsonl"))
}

/// Fifty questions hand-labeled as yes/no or not.
pub fn bundled_detection_set() -> Vec<DetectionExample> {
    parse_bundled(include_str!("../data/binary_questions.jsonl"))
}

/// Logistic regression over unigram frequencies plus "first word is yes"
/// and "first word is no" indicators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelerModel {
    pub vocabulary: Vocabulary,
    /// One weight per vocabulary entry, then the yes and no indicators.
    pub weights: Vec<f64>,
    pub bias: f64,
}

struct LabelerFeatures {
    unigrams: SparseVec,
    first_yes: f64,
    first_no: f64,
}

fn answer_features(vocab: &Vocabulary, text: &str) -> LabelerFeatures {
    let tokens = tokenize(text);
    let first = tokens.first().map(String::as_str);
    LabelerFeatures {
        unigrams: vocab.featurize(&tokens).as_sparse().clone(),
        first_yes: f64::from(u8::from(first == Some("yes"))),
        first_no: f64::from(u8::from(first == Some("no"))),
    }
}

/// `ln(1 + e^x)`.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn linear(weights: &[f64], bias: f64, f: &LabelerFeatures) -> f64 {
    let v = weights.len() - 2;
    f.unigrams.dot_dense(&weights[..v]) + weights[v] * f.first_yes + weights[v + 1] * f.first_no + bias
}

impl LabelerModel {
    pub fn score(&self, text: &str) -> f64 {
        linear(&self.weights, self.bias, &answer_features(&self.vocabulary, text))
    }

    pub fn prob_yes(&self, text: &str) -> f64 {
        sigmoid(self.score(text))
    }

    /// `(label, confidence)` with confidence `sigmoid(|score|)` in [0.5, 1).
    pub fn predict(&self, text: &str) -> (u8, f64) {
        let s = self.score(text);
        (u8::from(s >= 0.0), sigmoid(s.abs()))
    }

    pub fn yes_indicator_weight(&self) -> f64 {
        self.weights[self.weights.len() - 2]
    }

    pub fn no_indicator_weight(&self) -> f64 {
        self.weights[self.weights.len() - 1]
    }
}

/// Fits the labeler with L2 penalty `lambda` on all weights except the bias.
pub fn train_answer_labeler(seeds: &[SeedAnswer], lambda: f64) -> Result<LabelerModel> {
    if seeds.iter().any(|s| s.label > 1) {
        return Err(Error::InvalidArgument("seed labels must be 0 or 1".into()));
    }
    let n_pos = seeds.iter().filter(|s| s.label == 1).count();
    if n_pos == 0 || n_pos == seeds.len() {
        return Err(Error::SingleClass);
    }
    let token_docs: Vec<Vec<String>> = seeds.iter().map(|s| tokenize(&s.answer_text)).collect();
    let vocabulary = Vocabulary::from_documents(&token_docs, LABELER_VOCAB_SIZE)?;
    let features: Vec<LabelerFeatures> = seeds
        .iter()
        .map(|s| answer_features(&vocabulary, &s.answer_text))
        .collect();
    let n_weights = vocabulary.len() + 2;
    let objective = |theta: &[f64]| {
        let (weights, bias) = (&theta[..n_weights], theta[n_weights]);
        let mut grad = vec![0.0; theta.len()];
        let mut value = 0.0;
        for (f, seed) in features.iter().zip(seeds) {
            let z = linear(weights, bias, f);
            let y = f64::from(seed.label);
            value -= softplus(if y == 1.0 { -z } else { z });
            let d = y - sigmoid(z);
            for &(i, x) in f.unigrams.entries() {
                grad[i as usize] += d * x;
            }
            grad[n_weights - 2] += d * f.first_yes;
            grad[n_weights - 1] += d * f.first_no;
            grad[n_weights] += d;
        }
        for (g, w) in grad.iter_mut().zip(weights) {
            value -= lambda * w * w;
            *g -= 2.0 * lambda * w;
        }
        (value, grad)
    };
    let res = maximize(objective, &vec![0.0; n_weights + 1], &LbfgsConfig::default())?;
    Ok(LabelerModel {
        vocabulary,
        bias: res.point[n_weights],
        weights: res.point[..n_weights].to_vec(),
    })
}

/// Scores every `(answer_id, text)` pair and keeps the `ceil(keep * n)`
/// most confident, ties by answer id.
pub fn label_answers(
    answers: &[(String, String)],
    labeler: &LabelerModel,
    keep_fraction: f64,
) -> Result<Vec<LabeledAnswer>> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "keep fraction {keep_fraction} outside (0, 1]"
        )));
    }
    let mut scored: Vec<(f64, LabeledAnswer)> = answers
        .iter()
        .map(|(id, text)| {
            let s = labeler.score(text);
            let (label, confidence) = (u8::from(s >= 0.0), sigmoid(s.abs()));
            (
                s.abs(),
                LabeledAnswer {
                    answer_id: id.clone(),
                    label,
                    confidence,
                },
            )
        })
        .collect();
    scored.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then_with(|| a.1.answer_id.cmp(&b.1.answer_id))
    });
    scored.truncate(fraction_count(answers.len(), keep_fraction));
    Ok(scored.into_iter().map(|(_, l)| l).collect())
}

/// Recomputes label counts and the ambiguity flag from the answers' labels.
pub fn aggregate_labels(question: &mut QuestionRecord) {
    let (mut pos, mut neg) = (0, 0);
    for label in question.labels() {
        if label == 1 {
            pos += 1;
        } else {
            neg += 1;
        }
    }
    question.n_pos = pos;
    question.n_neg = neg;
    question.n_total = pos + neg;
    question.ambiguous = pos > 0 && neg > 0;
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelReport {
    pub binary_questions: usize,
    pub labeled_questions: usize,
    pub candidate_answers: usize,
    pub labeled_answers: usize,
    pub positive_share: f64,
    pub ambiguous_questions: usize,
    /// Ambiguous share among labeled questions.
    pub ambiguous_rate: f64,
}

/// Sets labels on the listed answers, marks their questions (and any
/// question the detector accepts) binary, and re-aggregates every question.
/// Labels on answers not listed are cleared.
pub fn apply_labels(corpus: &mut Corpus, labels: &[LabeledAnswer]) -> LabelReport {
    let by_id: HashMap<&str, &LabeledAnswer> = labels.iter().map(|l| (l.answer_id.as_str(), l)).collect();
    let mut candidates = 0;
    for q in &mut corpus.questions {
        let detected = is_binary_question(&q.text);
        let mut any = false;
        for a in &mut q.answers {
            match by_id.get(a.answer_id.as_str()) {
                Some(l) => {
                    a.label = Some(l.label);
                    a.label_confidence = l.confidence;
                    any = true;
                }
                None => {
                    a.label = None;
                    a.label_confidence = 0.0;
                }
            }
        }
        q.qtype = if detected || any {
            QuestionType::Binary
        } else {
            QuestionType::Open
        };
        if q.qtype == QuestionType::Binary {
            candidates += q.answers.len();
        }
        aggregate_labels(q);
    }
    let mut report = summarize(corpus);
    report.candidate_answers = candidates;
    report
}

/// Detection, scoring, confidence filtering and aggregation. With
/// `per_category`, the keep fraction is applied within each category.
pub fn run_pipeline(
    corpus: &mut Corpus,
    labeler: &LabelerModel,
    keep_fraction: f64,
    per_category: bool,
) -> Result<(Vec<LabeledAnswer>, LabelReport)> {
    let mut groups: BTreeMap<String, Vec<(String, String)>> = BTreeMap::new();
    for q in &corpus.questions {
        if !is_binary_question(&q.text) {
            continue;
        }
        let key = if per_category {
            corpus.category_of(&q.product_id).unwrap_or_default().to_string()
        } else {
            String::new()
        };
        groups
            .entry(key)
            .or_default()
            .extend(q.answers.iter().map(|a| (a.answer_id.clone(), a.text.clone())));
    }
    let mut labels = Vec::new();
    for answers in groups.values() {
        labels.extend(label_answers(answers, labeler, keep_fraction)?);
    }
    labels.sort_by(|a, b| a.answer_id.cmp(&b.answer_id));
    let report = apply_labels(corpus, &labels);
    Ok((labels, report))
}

/// Label statistics of a corpus.
pub fn summarize(corpus: &Corpus) -> LabelReport {
    let mut r = LabelReport::default();
    let mut pos = 0usize;
    for q in &corpus.questions {
        if q.qtype == QuestionType::Binary {
            r.binary_questions += 1;
            r.candidate_answers += q.answers.len();
        }
        if q.n_total > 0 {
            r.labeled_questions += 1;
            r.labeled_answers += q.n_total as usize;
            pos += q.n_pos as usize;
            if q.ambiguous {
                r.ambiguous_questions += 1;
            }
        }
    }
    if r.labeled_answers > 0 {
        r.positive_share = pos as f64 / r.labeled_answers as f64;
    }
    if r.labeled_questions > 0 {
        r.ambiguous_rate = r.ambiguous_questions as f64 / r.labeled_questions as f64;
    }
    r
}
