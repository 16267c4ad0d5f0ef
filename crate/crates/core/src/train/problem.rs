//! Training objectives with analytic gradients.
//!
//! All objectives are log-likelihoods to be maximized, minus the L2
//! penalty `lambda * |theta|^2` over the active parameters.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::layout::ParamLayout;
use crate::corpus::{Corpus, SparseVec};
use crate::error::{Error, Result};
use crate::eval::OpenEvalSet;
use crate::moe::{amplifier, relevance_from_parts, sigmoid, ExpertInputs, ModelParams};
use crate::similarity::{similarity_vector, StatsTable};

/// Lower/upper bound for probabilities fed to `ln`.
pub const PROB_CLIP: f64 = 1e-12;

const CHUNK: usize = 16;
const BATCH: usize = 64;

fn clip(p: f64) -> f64 {
    p.clamp(PROB_CLIP, 1.0 - PROB_CLIP)
}

/// `ln(sigmoid(z))` without overflow.
fn log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Sensitivity and specificity `(alpha_q, beta_q)` of a question's labels.
pub fn sensitivity_specificity(question: &SparseVec, params: &ModelParams) -> (f64, f64) {
    let (z1, z2) = noise_logits(question, params);
    (sigmoid(z1), sigmoid(z2))
}

fn noise_logits(question: &SparseVec, params: &ModelParams) -> (f64, f64) {
    (
        question.dot_dense(&params.gamma1) + params.gamma1_bias,
        question.dot_dense(&params.gamma2) + params.gamma2_bias,
    )
}

/// `a_q = alpha^n+ (1-alpha)^n-`, `b_q = (1-beta)^n+ beta^n-`, evaluated in log space.
pub fn label_joint(n_pos: u32, n_neg: u32, alpha: f64, beta: f64) -> (f64, f64) {
    let (np, nn) = (f64::from(n_pos), f64::from(n_neg));
    let term = |count: f64, prob: f64| if count == 0.0 { 0.0 } else { count * prob.ln() };
    let log_a = term(np, alpha) + term(nn, 1.0 - alpha);
    let log_b = term(np, 1.0 - beta) + term(nn, beta);
    (log_a.exp(), log_b.exp())
}

fn log_label_joint(n_pos: u32, n_neg: u32, z1: f64, z2: f64) -> (f64, f64) {
    let (np, nn) = (f64::from(n_pos), f64::from(n_neg));
    (
        np * log_sigmoid(z1) + nn * log_sigmoid(-z1),
        np * log_sigmoid(-z2) + nn * log_sigmoid(z2),
    )
}

/// Posterior `P(y_q = 1 | labels)` given the joint label likelihoods and `p_q`.
pub fn posterior(a: f64, b: f64, p: f64) -> f64 {
    let pc = clip(p);
    sigmoid((a.ln() + pc.ln()) - (b.ln() + (1.0 - pc).ln()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmState {
    /// Posterior of `y_q = 1`, one per training question.
    pub t: Vec<f64>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    /// Penalized observed log-likelihood after each round (first entry: start).
    pub observed_loglik: Vec<f64>,
}

#[derive(Debug, Clone)]
struct PreparedSentence {
    features: SparseVec,
    helpfulness: [f64; 2],
    rating: f64,
    reviewer: Option<usize>,
}

#[derive(Debug, Clone)]
struct PreparedExpert {
    sentence: usize,
    sim: [f64; 2],
    overlap: SparseVec,
}

#[derive(Debug, Clone)]
pub struct PreparedQuestion {
    pub question_id: String,
    features: SparseVec,
    experts: Vec<PreparedExpert>,
    pub n_pos: u32,
    pub n_neg: u32,
    /// Label of the top-voted answer.
    pub single_label: Option<u8>,
    /// Answers first (`n_answers` of them), then non-answers; each entry is
    /// the text's features multiplied elementwise with every expert.
    texts: Vec<Vec<SparseVec>>,
    n_answers: usize,
    top_answer: usize,
}

impl PreparedQuestion {
    pub fn n_experts(&self) -> usize {
        self.experts.len()
    }

    fn n_non_answers(&self) -> usize {
        self.texts.len() - self.n_answers
    }
}

/// Per-question quantities of the binary mixture.
struct BinaryForward {
    pi: Vec<f64>,
    sig: Vec<f64>,
    base: Vec<f64>,
    amp: Vec<f64>,
    p: f64,
}

/// A fixed set of training questions, their experts and precomputed
/// similarity features, for one parameter layout.
#[derive(Debug, Clone)]
pub struct TrainingProblem {
    layout: ParamLayout,
    base: ModelParams,
    sentences: Vec<PreparedSentence>,
    questions: Vec<PreparedQuestion>,
}

impl TrainingProblem {
    fn prepare<'a>(
        corpus: &Corpus,
        stats: &StatsTable,
        question_indices: impl Iterator<Item = usize>,
        base: &ModelParams,
        mut texts_for: impl FnMut(usize) -> Option<(Vec<&'a SparseVec>, usize, usize)>,
    ) -> Result<(Vec<PreparedSentence>, Vec<PreparedQuestion>)> {
        let mut sentence_map: Vec<Option<usize>> = vec![None; corpus.sentences.len()];
        let mut sentences = Vec::new();
        let mut questions = Vec::new();
        for qi in question_indices {
            let q = &corpus.questions[qi];
            let Some(product) = corpus.product(&q.product_id) else {
                continue;
            };
            if product.sentences.is_empty() {
                continue;
            }
            let Some(texts) = texts_for(qi) else {
                continue;
            };
            let cat_stats = stats.get(&product.category).ok_or_else(|| {
                Error::InvalidArgument(format!("no statistics for category `{}`", product.category))
            })?;
            let mut experts = Vec::with_capacity(product.sentences.len());
            for &si in &product.sentences {
                let s = &corpus.sentences[si];
                let local = *sentence_map[si].get_or_insert_with(|| {
                    sentences.push(PreparedSentence {
                        features: s.features.as_sparse().clone(),
                        helpfulness: [s.helpfulness.0, s.helpfulness.1],
                        rating: s.centered_rating(),
                        reviewer: base.reviewer_index(&s.reviewer_id),
                    });
                    sentences.len() - 1
                });
                experts.push(PreparedExpert {
                    sentence: local,
                    sim: similarity_vector(&q.tokens, &s.tokens, cat_stats).as_array(),
                    overlap: q.features.as_sparse().hadamard(s.features.as_sparse()),
                });
            }
            let (text_vecs, n_answers, top_answer) = texts;
            let texts = text_vecs
                .iter()
                .map(|t| {
                    experts
                        .iter()
                        .map(|e| t.hadamard(&sentences[e.sentence].features))
                        .collect()
                })
                .collect();
            questions.push(PreparedQuestion {
                question_id: q.question_id.clone(),
                features: q.features.as_sparse().clone(),
                experts,
                n_pos: q.n_pos,
                n_neg: q.n_neg,
                single_label: q.top_voted_label(),
                texts,
                n_answers,
                top_answer,
            });
        }
        Ok((sentences, questions))
    }

    /// Labeled yes/no questions among `question_indices`.
    pub fn binary(
        corpus: &Corpus,
        stats: &StatsTable,
        question_indices: &[usize],
        base: ModelParams,
        freeze_gamma: bool,
    ) -> Result<Self> {
        let labeled = question_indices
            .iter()
            .copied()
            .filter(|&qi| corpus.questions[qi].n_total > 0);
        let (sentences, questions) =
            Self::prepare(corpus, stats, labeled, &base, |_| Some((Vec::new(), 0, 0)))?;
        Ok(TrainingProblem {
            layout: ParamLayout::for_params(&base, freeze_gamma),
            base,
            sentences,
            questions,
        })
    }

    /// Answer-preference pairs from a sampled set of non-answers.
    pub fn open(
        corpus: &Corpus,
        stats: &StatsTable,
        sampled: &OpenEvalSet,
        base: ModelParams,
    ) -> Result<Self> {
        let by_question: std::collections::HashMap<usize, usize> = sampled
            .items
            .iter()
            .enumerate()
            .map(|(i, item)| (item.question, i))
            .collect();
        let order = sampled.items.iter().map(|item| item.question);
        let (sentences, questions) = Self::prepare(corpus, stats, order, &base, |qi| {
            let item = &sampled.items[by_question[&qi]];
            let q = &corpus.questions[qi];
            if q.answers.is_empty() {
                return None;
            }
            let mut texts: Vec<&SparseVec> = q.answers.iter().map(|a| a.features.as_sparse()).collect();
            for r in item.non_answers.iter().flatten() {
                texts.push(corpus.questions[r.question].answers[r.answer].features.as_sparse());
            }
            let top = q.answers.iter().position(|a| a.top_voted).unwrap_or(0);
            Some((texts, q.answers.len(), top))
        })?;
        Ok(TrainingProblem {
            layout: ParamLayout::for_params(&base, false),
            base,
            sentences,
            questions,
        })
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn base(&self) -> &ModelParams {
        &self.base
    }

    pub fn questions(&self) -> &[PreparedQuestion] {
        &self.questions
    }

    pub fn pack(&self, params: &ModelParams) -> Vec<f64> {
        self.layout.pack(params)
    }

    pub fn unpack(&self, theta: &[f64]) -> ModelParams {
        self.layout.unpack(theta, &self.base)
    }

    fn subjective(&self) -> bool {
        self.base.variant.is_subjective()
    }

    fn inputs(&self, e: &PreparedExpert) -> ExpertInputs<'_> {
        let s = &self.sentences[e.sentence];
        ExpertInputs {
            features: &s.features,
            helpfulness: s.helpfulness,
            centered_rating: s.rating,
            reviewer: s.reviewer,
        }
    }

    fn relevance(&self, q: &PreparedQuestion, p: &ModelParams) -> Vec<f64> {
        let subj = self.subjective();
        let v: Vec<f64> = q
            .experts
            .iter()
            .map(|e| relevance_from_parts(e.sim, &e.overlap, &self.inputs(e), p, subj))
            .collect();
        crate::moe::softmax(&v).expect("prepared questions have experts")
    }

    fn forward_binary(&self, q: &PreparedQuestion, p: &ModelParams) -> BinaryForward {
        let subj = self.subjective();
        let pi = self.relevance(q, p);
        let n = q.experts.len();
        let (mut sig, mut base, mut amp) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
        for e in &q.experts {
            let inputs = self.inputs(e);
            let b = e.overlap.dot_dense(&p.mu) + inputs.features.dot_dense(&p.xi);
            let a = amplifier(&inputs, p, subj);
            let w = if subj { b * a } else { b };
            sig.push(sigmoid(w));
            base.push(b);
            amp.push(a);
        }
        let prob = pi.iter().zip(&sig).map(|(x, s)| x * s).sum();
        BinaryForward {
            pi,
            sig,
            base,
            amp,
            p: prob,
        }
    }

    /// Adds `dv[r] * d v_r / d theta` to `grad`.
    fn backprop_relevance(&self, q: &PreparedQuestion, dv: &[f64], grad: &mut [f64]) {
        let l = &self.layout;
        for (e, &d) in q.experts.iter().zip(dv) {
            if d == 0.0 {
                continue;
            }
            grad[l.kappa.start] += d * e.sim[0];
            grad[l.kappa.start + 1] += d * e.sim[1];
            add_sparse(grad, l.eta.start, &e.overlap, d);
            if let Some(g) = &l.g {
                let s = &self.sentences[e.sentence];
                grad[g.start] += d * s.helpfulness[0];
                grad[g.start + 1] += d * s.helpfulness[1];
                if let (Some(r), Some(u)) = (&l.expertise, s.reviewer) {
                    grad[r.start + u] += d;
                }
            }
        }
    }

    /// Backpropagates `d ell / d p_q` through a binary mixture.
    fn backprop_binary(&self, q: &PreparedQuestion, fwd: &BinaryForward, dldp: f64, grad: &mut [f64]) {
        let l = &self.layout;
        let dv: Vec<f64> = fwd
            .pi
            .iter()
            .zip(&fwd.sig)
            .map(|(pi, s)| dldp * pi * (s - fwd.p))
            .collect();
        self.backprop_relevance(q, &dv, grad);
        for (r, e) in q.experts.iter().enumerate() {
            let dw = dldp * fwd.pi[r] * fwd.sig[r] * (1.0 - fwd.sig[r]);
            if dw == 0.0 {
                continue;
            }
            let scale = dw * fwd.amp[r];
            add_sparse(grad, l.mu.start, &e.overlap, scale);
            if let Some(xi) = &l.xi {
                add_sparse(grad, xi.start, &self.sentences[e.sentence].features, scale);
            }
            self.backprop_amplifier(e, dw * fwd.base[r], grad);
        }
    }

    /// `d` is `d ell / d w * base`, the derivative with respect to the amplifier.
    fn backprop_amplifier(&self, e: &PreparedExpert, d: f64, grad: &mut [f64]) {
        let l = &self.layout;
        if let Some(c) = l.c {
            let s = &self.sentences[e.sentence];
            grad[c] += d * s.rating;
            if let (Some(r), Some(u)) = (&l.user_bias, s.reviewer) {
                grad[r.start + u] += d;
            }
        }
    }

    /// Sums `per_question` over all questions in a fixed order, independent
    /// of the thread count, then applies the L2 penalty.
    fn accumulate<F>(&self, theta: &[f64], per_question: F) -> (f64, Vec<f64>)
    where
        F: Fn(usize, &PreparedQuestion, &ModelParams, &mut [f64]) -> f64 + Sync,
    {
        let params = self.unpack(theta);
        let n = self.layout.len();
        let mut total = 0.0;
        let mut grad = vec![0.0; n];
        for (bi, batch) in self.questions.chunks(CHUNK * BATCH).enumerate() {
            let offset = bi * CHUNK * BATCH;
            let parts: Vec<(f64, Vec<f64>)> = batch
                .par_chunks(CHUNK)
                .enumerate()
                .map(|(ci, chunk)| {
                    let mut g = vec![0.0; n];
                    let mut v = 0.0;
                    for (k, q) in chunk.iter().enumerate() {
                        v += per_question(offset + ci * CHUNK + k, q, &params, &mut g);
                    }
                    (v, g)
                })
                .collect();
            for (v, g) in parts {
                total += v;
                grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
            }
        }
        let lambda = self.base.lambda;
        total -= lambda * theta.iter().map(|x| x * x).sum::<f64>();
        grad.iter_mut()
            .zip(theta)
            .for_each(|(g, x)| *g -= 2.0 * lambda * x);
        (total, grad)
    }

    fn cross_entropy(&self, theta: &[f64], target: impl Fn(&PreparedQuestion) -> Option<f64> + Sync) -> (f64, Vec<f64>) {
        self.accumulate(theta, |_, q, p, grad| {
            let Some(y) = target(q) else {
                return 0.0;
            };
            let fwd = self.forward_binary(q, p);
            let pc = clip(fwd.p);
            let value = y * pc.ln() + (1.0 - y) * (1.0 - pc).ln();
            self.backprop_binary(q, &fwd, y / pc - (1.0 - y) / (1.0 - pc), grad);
            value
        })
    }

    /// Single-label log-likelihood on the top-voted answer's label.
    pub fn loglik_single(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        self.cross_entropy(theta, |q| q.single_label.map(f64::from))
    }

    /// Cross-entropy against the fraction of positive labels.
    pub fn loglik_kl(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        self.cross_entropy(theta, |q| {
            let n = q.n_pos + q.n_neg;
            (n > 0).then(|| f64::from(q.n_pos) / f64::from(n))
        })
    }

    /// Expected complete-data log-likelihood for fixed posteriors `t`.
    pub fn expected_complete_loglik(&self, theta: &[f64], t: &[f64]) -> (f64, Vec<f64>) {
        assert_eq!(t.len(), self.questions.len());
        self.accumulate(theta, |i, q, p, grad| {
            let t = t[i];
            let fwd = self.forward_binary(q, p);
            let pc = clip(fwd.p);
            let (z1, z2) = noise_logits(&q.features, p);
            let (log_a, log_b) = log_label_joint(q.n_pos, q.n_neg, z1, z2);
            let value = t * (log_a + pc.ln()) + (1.0 - t) * (log_b + (1.0 - pc).ln());
            self.backprop_binary(q, &fwd, t / pc - (1.0 - t) / (1.0 - pc), grad);

            let (np, nn) = (f64::from(q.n_pos), f64::from(q.n_neg));
            if let Some(r) = &self.layout.gamma1 {
                let alpha = sigmoid(z1);
                let d = t * (np * (1.0 - alpha) - nn * alpha);
                add_sparse(grad, r.start, &q.features, d);
                grad[r.end - 1] += d;
            }
            if let Some(r) = &self.layout.gamma2 {
                let beta = sigmoid(z2);
                let d = (1.0 - t) * (nn * (1.0 - beta) - np * beta);
                add_sparse(grad, r.start, &q.features, d);
                grad[r.end - 1] += d;
            }
            value
        })
    }

    fn question_log_terms(&self, q: &PreparedQuestion, p: &ModelParams) -> (f64, f64, f64, f64, f64) {
        let prob = self.forward_binary(q, p).p;
        let pc = clip(prob);
        let (z1, z2) = noise_logits(&q.features, p);
        let (log_a, log_b) = log_label_joint(q.n_pos, q.n_neg, z1, z2);
        (log_a + pc.ln(), log_b + (1.0 - pc).ln(), prob, z1, z2)
    }

    /// `sum_q ln(a_q p_q + b_q (1 - p_q))`, without the penalty.
    pub fn observed_loglik(&self, theta: &[f64]) -> f64 {
        let p = self.unpack(theta);
        let terms: Vec<f64> = self
            .questions
            .par_iter()
            .map(|q| {
                let (l1, l0, ..) = self.question_log_terms(q, &p);
                log_add_exp(l1, l0)
            })
            .collect();
        terms.into_iter().sum()
    }

    pub fn penalty(&self, theta: &[f64]) -> f64 {
        self.base.lambda * theta.iter().map(|x| x * x).sum::<f64>()
    }

    pub fn e_step(&self, theta: &[f64]) -> EmState {
        let p = self.unpack(theta);
        let rows: Vec<(f64, f64, f64)> = self
            .questions
            .par_iter()
            .map(|q| {
                let (l1, l0, _, z1, z2) = self.question_log_terms(q, &p);
                (sigmoid(l1 - l0), sigmoid(z1), sigmoid(z2))
            })
            .collect();
        EmState {
            t: rows.iter().map(|r| r.0).collect(),
            alpha: rows.iter().map(|r| r.1).collect(),
            beta: rows.iter().map(|r| r.2).collect(),
            observed_loglik: Vec::new(),
        }
    }

    /// Mixture probabilities `p_q` for every training question.
    pub fn predictions(&self, theta: &[f64]) -> Vec<f64> {
        let p = self.unpack(theta);
        self.questions
            .par_iter()
            .map(|q| self.forward_binary(q, &p).p)
            .collect()
    }

    /// Pairwise preference log-likelihood. With `multi`, every answer is
    /// paired with every sampled non-answer and weighted by `1/|A_q|`;
    /// otherwise only the top-voted answer is used.
    pub fn loglik_open(&self, theta: &[f64], multi: bool) -> (f64, Vec<f64>) {
        let subj = self.subjective();
        self.accumulate(theta, |_, q, p, grad| {
            let n_exp = q.experts.len();
            let pi = self.relevance(q, p);
            let amp: Vec<f64> = q
                .experts
                .iter()
                .map(|e| amplifier(&self.inputs(e), p, subj))
                .collect();
            let dots: Vec<Vec<f64>> = q
                .texts
                .iter()
                .map(|t| t.iter().map(|h| h.dot_dense(&p.mu)).collect())
                .collect();
            let mut coef = vec![vec![0.0; n_exp]; q.texts.len()];
            let mut dv = vec![0.0; n_exp];
            let mut amp_grad = vec![0.0; n_exp];

            let answers: Vec<usize> = if multi {
                (0..q.n_answers).collect()
            } else {
                vec![q.top_answer]
            };
            let weight = 1.0 / answers.len() as f64;
            let mut value = 0.0;
            let mut sig = vec![0.0; n_exp];
            let mut base = vec![0.0; n_exp];
            for &a in &answers {
                for k in 0..q.n_non_answers() {
                    let na = q.n_answers + k;
                    for r in 0..n_exp {
                        base[r] = dots[a][r] - dots[na][r];
                        let w = if subj { base[r] * amp[r] } else { base[r] };
                        sig[r] = sigmoid(w);
                    }
                    let prob: f64 = pi.iter().zip(&sig).map(|(x, s)| x * s).sum();
                    let pc = clip(prob);
                    value += weight * pc.ln();
                    let dldp = weight / pc;
                    for r in 0..n_exp {
                        dv[r] += dldp * pi[r] * (sig[r] - prob);
                        let dw = dldp * pi[r] * sig[r] * (1.0 - sig[r]);
                        coef[a][r] += dw * amp[r];
                        coef[na][r] -= dw * amp[r];
                        amp_grad[r] += dw * base[r];
                    }
                }
            }
            self.backprop_relevance(q, &dv, grad);
            for (t, row) in q.texts.iter().zip(&coef) {
                for (h, &c) in t.iter().zip(row) {
                    if c != 0.0 {
                        add_sparse(grad, self.layout.mu.start, h, c);
                    }
                }
            }
            for (e, &d) in q.experts.iter().zip(&amp_grad) {
                self.backprop_amplifier(e, d, grad);
            }
            value
        })
    }

    /// Number of (answer, non-answer) pairs the objective sums over.
    pub fn pair_count(&self, multi: bool) -> usize {
        self.questions
            .iter()
            .map(|q| {
                let answers = if multi { q.n_answers } else { 1 };
                answers * q.n_non_answers()
            })
            .sum()
    }
}

fn add_sparse(grad: &mut [f64], start: usize, v: &SparseVec, scale: f64) {
    for &(i, w) in v.entries() {
        grad[start + i as usize] += scale * w;
    }
}
