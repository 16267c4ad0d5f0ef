//! Synthetic corpora with a planted model and noisy crowd labels.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    write_jsonl, AnswerRow, Corpus, IngestOptions, ProductRow, QuestionRow, ReviewRow, Vocabulary,
    DEFAULT_VOCAB_SIZE,
};
use crate::error::{Error, Result};
use crate::eval::predict_questions;
use crate::labeling::{apply_labels, LabeledAnswer};
use crate::moe::{ModelParams, Variant};
use crate::similarity::StatsTable;

const SENTIMENT_WORDS: usize = 5;
const SENTENCES_PER_REVIEW: usize = 3;
const ZIPF_EXPONENT: f64 = 1.1;
const TOPICS_PER_QUESTION: usize = 3;
const LABEL_STREAM_SALT: u64 = 0x5eed_1abe_15c0_ffee;

fn positive_word(i: usize) -> String {
    format!("pos{i}")
}

fn negative_word(i: usize) -> String {
    format!("neg{i}")
}

/// Planted weights keyed by token; resolved against a vocabulary once
/// the corpus has been featurized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedParams {
    pub kappa: [f64; 2],
    pub eta: BTreeMap<String, f64>,
    pub mu: BTreeMap<String, f64>,
    pub xi: BTreeMap<String, f64>,
}

impl PlantedParams {
    /// BM25-driven relevance and sentiment words voting `+/- strength`.
    pub fn sentiment(bm25_weight: f64, strength: f64) -> Self {
        let mut xi = BTreeMap::new();
        for i in 0..SENTIMENT_WORDS {
            xi.insert(positive_word(i), strength);
            xi.insert(negative_word(i), -strength);
        }
        PlantedParams {
            kappa: [bm25_weight, 0.0],
            eta: BTreeMap::new(),
            mu: BTreeMap::new(),
            xi,
        }
    }

    pub fn resolve(&self, vocab: &Vocabulary) -> ModelParams {
        let mut p = ModelParams::zeros(Variant::Moe, vocab.len(), 0.0);
        p.kappa = self.kappa;
        let fill = |dst: &mut Vec<f64>, src: &BTreeMap<String, f64>| {
            for (t, &w) in src {
                if let Some(i) = vocab.index_of(t) {
                    dst[i as usize] = w;
                }
            }
        };
        fill(&mut p.eta, &self.eta);
        fill(&mut p.mu, &self.mu);
        fill(&mut p.xi, &self.xi);
        p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n_questions: usize,
    pub sentences_per_question: usize,
    pub vocab_size: usize,
    pub n_categories: usize,
    pub n_reviewers: usize,
    pub planted_params: PlantedParams,
    /// Relative weights of drawing 1, 2, 3, 4 or 5 labels for a question.
    pub labels_per_question: [f64; 5],
    pub planted_alpha: f64,
    pub planted_beta: f64,
    /// When set, single-label questions are mixed in so that the expected
    /// share of ambiguous questions equals this rate.
    pub target_ambiguity_rate: Option<f64>,
    /// Share of questions generated as open-ended (no labels).
    pub open_fraction: f64,
    pub max_open_answers: usize,
    /// Probability that a sentence discusses the question's topic.
    pub relevant_fraction: f64,
    /// Probability that a relevant sentence agrees with the question's stance.
    pub stance_agreement: f64,
    pub rng_seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_questions: 2000,
            sentences_per_question: 30,
            vocab_size: 500,
            n_categories: 1,
            n_reviewers: 200,
            planted_params: PlantedParams::sentiment(0.5, 4.0),
            labels_per_question: [0.0, 0.0, 1.0, 0.0, 0.0],
            planted_alpha: 0.85,
            planted_beta: 0.90,
            target_ambiguity_rate: None,
            open_fraction: 0.0,
            max_open_answers: 3,
            relevant_fraction: 0.3,
            stance_agreement: 0.85,
            rng_seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if self.n_questions < 1 || self.sentences_per_question < 1 || self.n_categories < 1 {
            return bad("n_questions, sentences_per_question and n_categories must be at least 1".into());
        }
        if self.vocab_size < TOPICS_PER_QUESTION || self.n_reviewers < 1 {
            return bad(format!("vocab_size must be at least {TOPICS_PER_QUESTION} and n_reviewers at least 1"));
        }
        for (name, v) in [("planted_alpha", self.planted_alpha), ("planted_beta", self.planted_beta)] {
            if !(v > 0.5 && v <= 1.0) {
                return bad(format!("{name} = {v} outside (0.5, 1]"));
            }
        }
        if let Some(t) = self.target_ambiguity_rate {
            if !unit(t) {
                return bad(format!("target_ambiguity_rate = {t} outside [0, 1]"));
            }
        }
        if self.labels_per_question.iter().any(|&w| !(w >= 0.0)) || self.labels_per_question.iter().sum::<f64>() <= 0.0 {
            return bad("labels_per_question weights must be non-negative and not all zero".into());
        }
        for (name, v) in [
            ("open_fraction", self.open_fraction),
            ("relevant_fraction", self.relevant_fraction),
            ("stance_agreement", self.stance_agreement),
        ] {
            if !unit(v) {
                return bad(format!("{name} = {v} outside [0, 1]"));
            }
        }
        if self.open_fraction > 0.0 && self.max_open_answers < 1 {
            return bad("max_open_answers must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub question_id: String,
    pub y_true: u8,
    pub p_true: f64,
}

/// Probability that `n` labels of a question disagree, given `P(y = 1) = pi`.
pub fn ambiguity_probability(n: usize, pi: f64, alpha: f64, beta: f64) -> f64 {
    let mixed = |f: f64| 1.0 - f.powi(n as i32) - (1.0 - f).powi(n as i32);
    pi * mixed(alpha) + (1.0 - pi) * mixed(beta)
}

/// A generated corpus: the four input tables plus labels and hidden truth.
#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub products: Vec<ProductRow>,
    pub reviews: Vec<ReviewRow>,
    pub questions: Vec<QuestionRow>,
    pub answers: Vec<AnswerRow>,
    pub labels: Vec<LabeledAnswer>,
    pub ground_truth: Vec<GroundTruth>,
    /// Label-count weights after ambiguity calibration.
    pub label_count_weights: [f64; 5],
    /// Expected share of ambiguous questions among labeled ones.
    pub analytic_ambiguity_rate: f64,
    pub planted: ModelParams,
    pub vocabulary: Vocabulary,
}

impl SynthCorpus {
    /// Links, featurizes and labels the generated tables.
    pub fn corpus(&self) -> Result<Corpus> {
        let mut corpus = Corpus::from_rows(
            &self.products,
            &self.reviews,
            &self.questions,
            &self.answers,
            IngestOptions::default(),
        )?;
        corpus.apply_vocabulary(&self.vocabulary);
        apply_labels(&mut corpus, &self.labels);
        Ok(corpus)
    }

    /// Writes the four input files, `labels.jsonl` and `ground_truth.jsonl`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_jsonl(&dir.join("products.jsonl"), &self.products)?;
        write_jsonl(&dir.join("reviews.jsonl"), &self.reviews)?;
        write_jsonl(&dir.join("questions.jsonl"), &self.questions)?;
        write_jsonl(&dir.join("answers.jsonl"), &self.answers)?;
        write_jsonl(&dir.join("labels.jsonl"), &self.labels)?;
        write_jsonl(&dir.join("ground_truth.jsonl"), &self.ground_truth)?;
        Ok(())
    }
}

struct Draft {
    product: ProductRow,
    reviews: Vec<ReviewRow>,
    question: QuestionRow,
    open_answers: Vec<AnswerRow>,
    topics: Vec<String>,
    open: bool,
}

fn sentence_text(tokens: &[String]) -> String {
    let mut text = tokens.join(" ");
    if let Some(first) = text.get(..1) {
        let upper = first.to_uppercase();
        text.replace_range(..1, &upper);
    }
    text.push('.');
    text
}

struct Words {
    zipf: Zipf<f64>,
    vocab_size: usize,
}

impl Words {
    fn filler(&self, rng: &mut ChaCha8Rng) -> String {
        let k = self.zipf.sample(rng) as usize;
        format!("w{}", k.clamp(1, self.vocab_size) - 1)
    }

    fn fillers(&self, rng: &mut ChaCha8Rng, n: usize) -> Vec<String> {
        (0..n).map(|_| self.filler(rng)).collect()
    }

    fn sentiment(rng: &mut ChaCha8Rng, positive: bool) -> String {
        let i = rng.random_range(0..SENTIMENT_WORDS);
        if positive {
            positive_word(i)
        } else {
            negative_word(i)
        }
    }
}

fn draft_question(spec: &SynthSpec, words: &Words, q: usize) -> Draft {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    rng.set_stream(q as u64);
    let product_id = format!("p{q:05}");
    let question_id = format!("q{q:05}");
    let category = format!("cat{}", q % spec.n_categories);
    let open = rng.random_bool(spec.open_fraction);
    let stance = rng.random_bool(0.5);
    let all: Vec<usize> = (0..spec.vocab_size).collect();
    let topics: Vec<String> = all
        .choose_multiple(&mut rng, TOPICS_PER_QUESTION)
        .map(|k| format!("w{k}"))
        .collect();

    let mut sentences = Vec::with_capacity(spec.sentences_per_question);
    for _ in 0..spec.sentences_per_question {
        let mut tokens = if rng.random_bool(spec.relevant_fraction) {
            let mut t: Vec<String> = topics.choose_multiple(&mut rng, 2).cloned().collect();
            let agrees = rng.random_bool(spec.stance_agreement);
            t.push(Words::sentiment(&mut rng, stance == agrees));
            t.extend(words.fillers(&mut rng, 4));
            t
        } else {
            let mut t = words.fillers(&mut rng, 6);
            let positive = rng.random_bool(0.5);
            t.push(Words::sentiment(&mut rng, positive));
            t
        };
        tokens.shuffle(&mut rng);
        sentences.push(sentence_text(&tokens));
    }
    let reviews = sentences
        .chunks(SENTENCES_PER_REVIEW)
        .enumerate()
        .map(|(k, chunk)| {
            let helpful_total = rng.random_range(0..=20u32);
            ReviewRow {
                review_id: format!("r{q:05}_{k}"),
                product_id: product_id.clone(),
                reviewer_id: format!("u{:04}", rng.random_range(0..spec.n_reviewers)),
                text: chunk.join(" "),
                rating: rng.random_range(1..=5u8),
                helpful_yes: rng.random_range(0..=helpful_total),
                helpful_total,
            }
        })
        .collect();

    let lead = if open { "What about" } else { "Does" };
    let question = QuestionRow {
        question_id: question_id.clone(),
        product_id: product_id.clone(),
        asker_id: Some(format!("asker{q}")),
        text: format!("{lead} {} {}?", topics.join(" "), words.filler(&mut rng)),
    };
    let mut open_answers = Vec::new();
    if open {
        let n = rng.random_range(1..=spec.max_open_answers);
        let top = rng.random_range(0..n);
        for j in 0..n {
            let mut t: Vec<String> = topics.choose_multiple(&mut rng, 2).cloned().collect();
            t.push(Words::sentiment(&mut rng, stance));
            t.extend(words.fillers(&mut rng, 3));
            t.shuffle(&mut rng);
            open_answers.push(AnswerRow {
                answer_id: format!("a{q:05}_{j}"),
                question_id: question_id.clone(),
                text: sentence_text(&t),
                top_voted: j == top,
            });
        }
    }
    Draft {
        product: ProductRow { product_id, category },
        reviews,
        question,
        open_answers,
        topics,
        open,
    }
}

fn calibrate(spec: &SynthSpec, pi: f64) -> Result<([f64; 5], f64)> {
    let total: f64 = spec.labels_per_question.iter().sum();
    let mut weights = spec.labels_per_question.map(|w| w / total);
    let rate = |w: &[f64; 5]| -> f64 {
        w.iter()
            .enumerate()
            .map(|(i, &wi)| wi * ambiguity_probability(i + 1, pi, spec.planted_alpha, spec.planted_beta))
            .sum()
    };
    let base = rate(&weights);
    if let Some(target) = spec.target_ambiguity_rate {
        if target > base + 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "target ambiguity {target:.4} exceeds the {base:.4} reachable with these label counts"
            )));
        }
        let single = if base > 0.0 { 1.0 - target / base } else { 0.0 };
        weights = weights.map(|w| w * (1.0 - single));
        weights[0] += single;
    }
    let analytic = rate(&weights);
    Ok((weights, analytic))
}

/// Samples a corpus from the planted model: topics and sentiment words
/// shape the review sentences, `p_q` comes from the mixture under the
/// planted parameters, `y_q ~ Bernoulli(p_q)`, and each observed label
/// equals `y_q` with probability alpha (y = 1) or beta (y = 0).
pub fn generate(spec: &SynthSpec) -> Result<SynthCorpus> {
    spec.validate()?;
    let words = Words {
        zipf: Zipf::new(spec.vocab_size as f64, ZIPF_EXPONENT)
            .map_err(|e| Error::InvalidArgument(format!("zipf: {e}")))?,
        vocab_size: spec.vocab_size,
    };
    let drafts: Vec<Draft> = (0..spec.n_questions)
        .into_par_iter()
        .map(|q| draft_question(spec, &words, q))
        .collect();

    let mut products = Vec::with_capacity(drafts.len());
    let mut reviews = Vec::new();
    let mut questions = Vec::with_capacity(drafts.len());
    let mut answers = Vec::new();
    for d in &drafts {
        products.push(d.product.clone());
        reviews.extend(d.reviews.iter().cloned());
        questions.push(d.question.clone());
        answers.extend(d.open_answers.iter().cloned());
    }

    let mut corpus = Corpus::from_rows(&products, &reviews, &questions, &[], IngestOptions::default())?;
    let vocabulary = corpus.build_vocabulary(DEFAULT_VOCAB_SIZE)?;
    corpus.apply_vocabulary(&vocabulary);
    let stats = StatsTable::from_corpus(&corpus)?;
    let planted = spec.planted_params.resolve(&vocabulary);
    let binary: Vec<usize> = (0..drafts.len()).filter(|&q| !drafts[q].open).collect();
    let p_true: Vec<f64> = predict_questions(&corpus, &stats, &planted, &binary)
        .into_iter()
        .map(|p| p.expect("every synthetic product has sentences"))
        .collect();
    let pi = if p_true.is_empty() {
        0.5
    } else {
        p_true.iter().sum::<f64>() / p_true.len() as f64
    };
    let (label_count_weights, analytic_ambiguity_rate) = calibrate(spec, pi)?;
    let counts: Vec<usize> = (1..=5).collect();

    let labeled: Vec<(GroundTruth, Vec<AnswerRow>, Vec<LabeledAnswer>)> = binary
        .par_iter()
        .zip(&p_true)
        .map(|(&q, &p)| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed ^ LABEL_STREAM_SALT);
            rng.set_stream(q as u64);
            let y = rng.random_bool(p);
            let n = *counts
                .choose_weighted(&mut rng, |&c| label_count_weights[c - 1])
                .expect("weights validated");
            let faithful = if y { spec.planted_alpha } else { spec.planted_beta };
            let top = rng.random_range(0..n);
            let d = &drafts[q];
            let mut rows = Vec::with_capacity(n);
            let mut labels = Vec::with_capacity(n);
            for j in 0..n {
                let label = if rng.random_bool(faithful) { y } else { !y };
                let answer_id = format!("a{q:05}_{j}");
                let mut t = vec![d.topics[j % TOPICS_PER_QUESTION].clone()];
                t.extend(words.fillers(&mut rng, 3));
                let lead = if label { "Yes," } else { "No," };
                rows.push(AnswerRow {
                    answer_id: answer_id.clone(),
                    question_id: d.question.question_id.clone(),
                    text: format!("{lead} {}.", t.join(" ")),
                    top_voted: j == top,
                });
                labels.push(LabeledAnswer {
                    answer_id,
                    label: u8::from(label),
                    confidence: 1.0,
                });
            }
            let truth = GroundTruth {
                question_id: d.question.question_id.clone(),
                y_true: u8::from(y),
                p_true: p,
            };
            (truth, rows, labels)
        })
        .collect();

    let mut ground_truth = Vec::with_capacity(labeled.len());
    let mut labels = Vec::new();
    for (truth, rows, l) in labeled {
        ground_truth.push(truth);
        answers.extend(rows);
        labels.extend(l);
    }
    answers.sort_by(|a, b| a.answer_id.cmp(&b.answer_id));
    labels.sort_by(|a, b| a.answer_id.cmp(&b.answer_id));

    Ok(SynthCorpus {
        products,
        reviews,
        questions,
        answers,
        labels,
        ground_truth,
        label_count_weights,
        analytic_ambiguity_rate,
        planted,
        vocabulary,
    })
}
