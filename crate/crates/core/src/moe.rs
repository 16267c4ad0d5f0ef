//! Mixture-of-experts scoring.
//!
//! Every review sentence is an expert. Its relevance score `v` feeds a
//! softmax over the product's sentences; its prediction score `w` becomes a
//! sigmoid vote. The combined output is the relevance-weighted mean vote.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{ExpertSentence, QuestionRecord, SparseVec};
use crate::error::{Error, Result};
use crate::similarity::{similarity_vector, CorpusStats};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Moe,
    KlMoe,
    EmMoe,
    EmMoeS,
    SMoe,
    MMoe,
    MMoeS,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Moe,
        Variant::KlMoe,
        Variant::EmMoe,
        Variant::EmMoeS,
        Variant::SMoe,
        Variant::MMoe,
        Variant::MMoeS,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Moe => "moe",
            Variant::KlMoe => "kl-moe",
            Variant::EmMoe => "em-moe",
            Variant::EmMoeS => "em-moe-s",
            Variant::SMoe => "s-moe",
            Variant::MMoe => "m-moe",
            Variant::MMoeS => "m-moe-s",
        }
    }

    /// Helpfulness, rating and per-reviewer terms are active.
    pub fn is_subjective(self) -> bool {
        matches!(self, Variant::EmMoeS | Variant::MMoeS)
    }

    /// Trained on answer preferences rather than yes/no labels.
    pub fn is_open(self) -> bool {
        matches!(self, Variant::SMoe | Variant::MMoe | Variant::MMoeS)
    }

    /// Uses the per-question sensitivity/specificity model.
    pub fn is_em(self) -> bool {
        matches!(self, Variant::EmMoe | Variant::EmMoeS)
    }

    /// The same variant without subjective features.
    pub fn text_only(self) -> Variant {
        match self {
            Variant::EmMoeS => Variant::EmMoe,
            Variant::MMoeS => Variant::MMoe,
            v => v,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown variant `{s}`")))
    }
}

/// All learned weights. Vocabulary-sized vectors are indexed like
/// [`crate::corpus::Vocabulary`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub variant: Variant,
    pub lambda: f64,
    /// Weights of (bm25, rouge-l).
    pub kappa: [f64; 2],
    pub eta: Vec<f64>,
    pub mu: Vec<f64>,
    pub xi: Vec<f64>,
    pub gamma1: Vec<f64>,
    pub gamma1_bias: f64,
    pub gamma2: Vec<f64>,
    pub gamma2_bias: f64,
    /// Weights of the (helpful, not helpful) fractions.
    pub g: [f64; 2],
    pub c: f64,
    /// Sorted reviewer ids; `expertise[i]` and `user_bias[i]` belong to `reviewers[i]`.
    pub reviewers: Vec<String>,
    pub expertise: Vec<f64>,
    pub user_bias: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(variant: Variant, vocab_size: usize, lambda: f64) -> Self {
        ModelParams {
            variant,
            lambda,
            kappa: [0.0; 2],
            eta: vec![0.0; vocab_size],
            mu: vec![0.0; vocab_size],
            xi: vec![0.0; vocab_size],
            gamma1: vec![0.0; vocab_size],
            gamma1_bias: 0.0,
            gamma2: vec![0.0; vocab_size],
            gamma2_bias: 0.0,
            g: [0.0; 2],
            c: 0.0,
            reviewers: Vec::new(),
            expertise: Vec::new(),
            user_bias: Vec::new(),
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.eta.len()
    }

    /// Registers reviewers (with zero weights); `ids` need not be sorted or unique.
    pub fn with_reviewers<I, S>(mut self, ids: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut all: Vec<String> = ids.into_iter().map(Into::into).collect();
        all.sort();
        all.dedup();
        self.expertise = vec![0.0; all.len()];
        self.user_bias = vec![0.0; all.len()];
        self.reviewers = all;
        self
    }

    pub fn reviewer_index(&self, reviewer_id: &str) -> Option<usize> {
        self.reviewers
            .binary_search_by(|r| r.as_str().cmp(reviewer_id))
            .ok()
    }

    /// Expertise `e_u`; unseen reviewers get zero.
    pub fn expertise_of(&self, reviewer_id: &str) -> f64 {
        self.reviewer_index(reviewer_id)
            .map_or(0.0, |i| self.expertise[i])
    }

    /// Bias `b_u`; unseen reviewers get zero.
    pub fn bias_of(&self, reviewer_id: &str) -> f64 {
        self.reviewer_index(reviewer_id)
            .map_or(0.0, |i| self.user_bias[i])
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Sentence-side inputs to the scoring functions.
#[derive(Debug, Clone, Copy)]
pub struct ExpertInputs<'a> {
    pub features: &'a SparseVec,
    pub helpfulness: [f64; 2],
    pub centered_rating: f64,
    pub reviewer: Option<usize>,
}

impl<'a> ExpertInputs<'a> {
    pub fn new(sentence: &'a ExpertSentence, params: &ModelParams) -> Self {
        ExpertInputs {
            features: sentence.features.as_sparse(),
            helpfulness: [sentence.helpfulness.0, sentence.helpfulness.1],
            centered_rating: sentence.centered_rating(),
            reviewer: params.reviewer_index(&sentence.reviewer_id),
        }
    }
}

/// `v = <kappa, s> + <eta, overlap>`, plus `<g, h> + e_u` when subjective.
pub fn relevance_from_parts(
    sim: [f64; 2],
    overlap: &SparseVec,
    expert: &ExpertInputs<'_>,
    params: &ModelParams,
    subjective: bool,
) -> f64 {
    let mut v = params.kappa[0] * sim[0] + params.kappa[1] * sim[1] + overlap.dot_dense(&params.eta);
    if subjective {
        let extra = params.g[0] * expert.helpfulness[0]
            + params.g[1] * expert.helpfulness[1]
            + expert.reviewer.map_or(0.0, |u| params.expertise[u]);
        // keeps a signed zero intact so zeroed terms reproduce text-only bits
        if extra != 0.0 {
            v += extra;
        }
    }
    v
}

/// Amplifier `1 + c * rating + b_u`; exactly 1 for text-only scoring.
pub fn amplifier(expert: &ExpertInputs<'_>, params: &ModelParams, subjective: bool) -> f64 {
    if subjective {
        1.0 + params.c * expert.centered_rating + expert.reviewer.map_or(0.0, |u| params.user_bias[u])
    } else {
        1.0
    }
}

/// `(<mu, overlap> + <xi, f_r>)`, times the amplifier when subjective.
pub fn binary_prediction_from_parts(
    overlap: &SparseVec,
    expert: &ExpertInputs<'_>,
    params: &ModelParams,
    subjective: bool,
) -> f64 {
    let base = overlap.dot_dense(&params.mu) + expert.features.dot_dense(&params.xi);
    if subjective {
        base * amplifier(expert, params, subjective)
    } else {
        base
    }
}

/// `<mu, diff o f_r>`, times the amplifier when subjective.
pub fn pair_prediction_from_parts(
    answer_diff: &SparseVec,
    expert: &ExpertInputs<'_>,
    params: &ModelParams,
    subjective: bool,
) -> f64 {
    let base = answer_diff.hadamard(expert.features).dot_dense(&params.mu);
    if subjective {
        base * amplifier(expert, params, subjective)
    } else {
        base
    }
}

pub fn relevance_score(
    question: &QuestionRecord,
    sentence: &ExpertSentence,
    stats: &CorpusStats,
    params: &ModelParams,
    subjective: bool,
) -> f64 {
    let sim = similarity_vector(&question.tokens, &sentence.tokens, stats).as_array();
    let overlap = question
        .features
        .as_sparse()
        .hadamard(sentence.features.as_sparse());
    relevance_from_parts(sim, &overlap, &ExpertInputs::new(sentence, params), params, subjective)
}

pub fn prediction_score_binary(
    question: &QuestionRecord,
    sentence: &ExpertSentence,
    params: &ModelParams,
    subjective: bool,
) -> f64 {
    let overlap = question
        .features
        .as_sparse()
        .hadamard(sentence.features.as_sparse());
    binary_prediction_from_parts(&overlap, &ExpertInputs::new(sentence, params), params, subjective)
}

pub fn answer_pair_score(
    answer: &crate::corpus::AnswerRecord,
    non_answer: &crate::corpus::AnswerRecord,
    sentence: &ExpertSentence,
    params: &ModelParams,
    subjective: bool,
) -> f64 {
    let diff = answer.features.as_sparse().sub(non_answer.features.as_sparse());
    pair_prediction_from_parts(&diff, &ExpertInputs::new(sentence, params), params, subjective)
}

/// Softmax with max subtraction.
pub fn softmax(scores: &[f64]) -> Result<Vec<f64>> {
    let max = scores
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if scores.is_empty() {
        return Err(Error::InvalidArgument("softmax over no scores".into()));
    }
    let exps: Vec<f64> = scores.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureOutput {
    /// Relevance weights `P(r | X_q)`.
    pub weights: Vec<f64>,
    /// Per-expert votes `sigmoid(w)`.
    pub expert_preds: Vec<f64>,
    pub combined: f64,
}

impl MixtureOutput {
    fn from_scores(relevance: &[f64], prediction: &[f64]) -> Result<Self> {
        let weights = softmax(relevance)?;
        let expert_preds: Vec<f64> = prediction.iter().map(|&w| sigmoid(w)).collect();
        let combined = weights.iter().zip(&expert_preds).map(|(p, s)| p * s).sum();
        Ok(MixtureOutput {
            weights,
            expert_preds,
            combined,
        })
    }
}

fn no_experts(question: &QuestionRecord) -> Error {
    Error::NoExperts {
        product_id: question.product_id.clone(),
    }
}

pub fn relevance_weights(
    question: &QuestionRecord,
    sentences: &[&ExpertSentence],
    stats: &CorpusStats,
    params: &ModelParams,
) -> Result<Vec<f64>> {
    if sentences.is_empty() {
        return Err(no_experts(question));
    }
    let subjective = params.variant.is_subjective();
    let v: Vec<f64> = sentences
        .iter()
        .map(|s| relevance_score(question, s, stats, params, subjective))
        .collect();
    softmax(&v)
}

/// `p_q`: relevance-weighted mean of the experts' yes-votes.
pub fn predict_binary(
    question: &QuestionRecord,
    sentences: &[&ExpertSentence],
    stats: &CorpusStats,
    params: &ModelParams,
) -> Result<MixtureOutput> {
    if sentences.is_empty() {
        return Err(no_experts(question));
    }
    let subjective = params.variant.is_subjective();
    let (v, w): (Vec<f64>, Vec<f64>) = sentences
        .iter()
        .map(|s| {
            (
                relevance_score(question, s, stats, params, subjective),
                prediction_score_binary(question, s, params, subjective),
            )
        })
        .unzip();
    MixtureOutput::from_scores(&v, &w)
}

/// `p_{q, a > non_answer}`; relevance weights are the same as for yes/no questions.
pub fn predict_preference(
    question: &QuestionRecord,
    answer: &crate::corpus::AnswerRecord,
    non_answer: &crate::corpus::AnswerRecord,
    sentences: &[&ExpertSentence],
    stats: &CorpusStats,
    params: &ModelParams,
) -> Result<MixtureOutput> {
    if sentences.is_empty() {
        return Err(no_experts(question));
    }
    let subjective = params.variant.is_subjective();
    let (v, w): (Vec<f64>, Vec<f64>) = sentences
        .iter()
        .map(|s| {
            (
                relevance_score(question, s, stats, params, subjective),
                answer_pair_score(answer, non_answer, s, params, subjective),
            )
        })
        .unzip();
    MixtureOutput::from_scores(&v, &w)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedSentence {
    pub position: usize,
    pub sentence_id: String,
    pub weight: f64,
}

/// Orders weights descending, ties by id ascending, keeping `top_k`.
pub fn rank_by_weight<S: AsRef<str>>(ids: &[S], weights: &[f64], top_k: usize) -> Vec<RankedSentence> {
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by(|&a, &b| {
        weights[b]
            .total_cmp(&weights[a])
            .then_with(|| ids[a].as_ref().cmp(ids[b].as_ref()))
    });
    order
        .into_iter()
        .take(top_k)
        .map(|i| RankedSentence {
            position: i,
            sentence_id: ids[i].as_ref().to_string(),
            weight: weights[i],
        })
        .collect()
}

pub fn rank_reviews(
    question: &QuestionRecord,
    sentences: &[&ExpertSentence],
    stats: &CorpusStats,
    params: &ModelParams,
    top_k: usize,
) -> Result<Vec<RankedSentence>> {
    if top_k < 1 {
        return Err(Error::InvalidArgument("top_k must be at least 1".into()));
    }
    let weights = relevance_weights(question, sentences, stats, params)?;
    let ids: Vec<&str> = sentences.iter().map(|s| s.sentence_id.as_str()).collect();
    Ok(rank_by_weight(&ids, &weights, top_k))
}
