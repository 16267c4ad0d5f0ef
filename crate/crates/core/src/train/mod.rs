//! Objectives, the L-BFGS optimizer and the EM outer loop.

mod layout;
mod lbfgs;
mod problem;

use std::collections::BTreeSet;

use log::{info, warn};
use serde::{Deserialize, Serialize};

pub use layout::ParamLayout;
pub use lbfgs::{lbfgs_minimize, LbfgsConfig, LbfgsResult, LbfgsStatus};
pub use problem::{
    label_joint, posterior, sensitivity_specificity, EmState, PreparedQuestion, TrainingProblem,
    PROB_CLIP,
};

use crate::corpus::{Corpus, QuestionType};
use crate::error::{Error, Result};
use crate::eval::sample_non_answers;
use crate::moe::{ModelParams, Variant};
use crate::similarity::StatsTable;

/// `sigma^-1(0.8)`: labels start out mostly faithful.
pub const DEFAULT_GAMMA_BIAS: f64 = 1.3862943611198906;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub variant: Variant,
    pub lambda: f64,
    pub lbfgs_memory: usize,
    pub lbfgs_max_iters: usize,
    pub lbfgs_grad_tol: f64,
    pub em_max_rounds: usize,
    pub em_rel_tol: f64,
    pub neg_samples_per_answer: usize,
    pub rng_seed: u64,
    /// Keep the noise model fixed at its initial value during EM.
    pub freeze_gamma: bool,
    pub gamma_bias_init: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            variant: Variant::EmMoe,
            lambda: 1e-3,
            lbfgs_memory: 10,
            lbfgs_max_iters: 200,
            lbfgs_grad_tol: 1e-5,
            em_max_rounds: 50,
            em_rel_tol: 1e-6,
            neg_samples_per_answer: 1,
            rng_seed: 0,
            freeze_gamma: false,
            gamma_bias_init: DEFAULT_GAMMA_BIAS,
        }
    }
}

impl TrainConfig {
    pub fn for_variant(variant: Variant) -> Self {
        TrainConfig {
            variant,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.to_string()));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be a finite non-negative number");
        }
        if self.lbfgs_memory < 1 {
            return bad("lbfgs_memory must be at least 1");
        }
        if !(self.lbfgs_grad_tol > 0.0) || !(self.em_rel_tol > 0.0) {
            return bad("tolerances must be positive");
        }
        if self.neg_samples_per_answer < 1 {
            return bad("neg_samples_per_answer must be at least 1");
        }
        if !self.gamma_bias_init.is_finite() {
            return bad("gamma_bias_init must be finite");
        }
        Ok(())
    }

    pub fn lbfgs(&self) -> LbfgsConfig {
        LbfgsConfig {
            memory: self.lbfgs_memory,
            max_iters: self.lbfgs_max_iters,
            grad_tol: self.lbfgs_grad_tol,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    /// Final objective value (penalized; observed log-likelihood for EM variants).
    pub objective: f64,
    pub em: Option<EmState>,
    pub questions_used: usize,
}

/// Zero weights (gamma biases at `config.gamma_bias_init`) with one
/// expertise/bias slot per reviewer of the given questions' products.
pub fn initial_params(
    corpus: &Corpus,
    question_indices: &[usize],
    vocab_size: usize,
    config: &TrainConfig,
) -> ModelParams {
    let mut params = ModelParams::zeros(config.variant, vocab_size, config.lambda);
    if config.variant.is_subjective() {
        let mut reviewers = BTreeSet::new();
        for &qi in question_indices {
            if let Some(p) = corpus.product(&corpus.questions[qi].product_id) {
                reviewers.extend(p.sentences.iter().map(|&s| corpus.sentences[s].reviewer_id.as_str()));
            }
        }
        params = params.with_reviewers(reviewers);
    }
    if config.variant.is_em() {
        params.gamma1_bias = config.gamma_bias_init;
        params.gamma2_bias = config.gamma_bias_init;
    }
    params
}

/// Runs L-BFGS on the negated objective.
pub fn maximize<F>(mut objective: F, x0: &[f64], config: &LbfgsConfig) -> Result<LbfgsResult>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let mut res = lbfgs_minimize(
        |x| {
            let (v, g) = objective(x);
            (-v, g.into_iter().map(|d| -d).collect())
        },
        x0,
        config,
    )?;
    res.value = -res.value;
    res.gradient.iter_mut().for_each(|d| *d = -*d);
    if res.status == LbfgsStatus::LineSearchFailed {
        warn!(
            "line search failed after {} iterations; keeping best point (objective {:.6})",
            res.iterations, res.value
        );
    }
    Ok(res)
}

/// Trains `config.variant` on the given questions. Binary variants use the
/// labeled questions; open-ended variants use open questions with answers.
pub fn train(
    corpus: &Corpus,
    stats: &StatsTable,
    question_indices: &[usize],
    vocab_size: usize,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let base = initial_params(corpus, question_indices, vocab_size, config);
    let variant = config.variant;
    if variant.is_open() {
        let open: Vec<usize> = question_indices
            .iter()
            .copied()
            .filter(|&qi| {
                let q = &corpus.questions[qi];
                q.qtype == QuestionType::Open && !q.answers.is_empty()
            })
            .collect();
        let sampled = sample_non_answers(corpus, &open, config.neg_samples_per_answer, config.rng_seed)?;
        let problem = TrainingProblem::open(corpus, stats, &sampled, base)?;
        require_questions(&problem, variant)?;
        let multi = variant != Variant::SMoe;
        let res = maximize(
            |x| problem.loglik_open(x, multi),
            &problem.pack(problem.base()),
            &config.lbfgs(),
        )?;
        info!("{variant}: objective {:.6} after {} iterations", res.value, res.iterations);
        return Ok(TrainOutcome {
            params: problem.unpack(&res.point),
            objective: res.value,
            em: None,
            questions_used: problem.questions().len(),
        });
    }

    let problem = TrainingProblem::binary(corpus, stats, question_indices, base, config.freeze_gamma)?;
    require_questions(&problem, variant)?;
    if variant.is_em() {
        return train_em(&problem, config);
    }
    let x0 = problem.pack(problem.base());
    let res = match variant {
        Variant::Moe => {
            if problem.questions().iter().all(|q| q.single_label.is_none()) {
                return Err(Error::InvalidArgument(
                    "moe needs questions whose top-voted answer is labeled".into(),
                ));
            }
            maximize(|x| problem.loglik_single(x), &x0, &config.lbfgs())?
        }
        _ => maximize(|x| problem.loglik_kl(x), &x0, &config.lbfgs())?,
    };
    info!("{variant}: objective {:.6} after {} iterations", res.value, res.iterations);
    Ok(TrainOutcome {
        params: problem.unpack(&res.point),
        objective: res.value,
        em: None,
        questions_used: problem.questions().len(),
    })
}

fn require_questions(problem: &TrainingProblem, variant: Variant) -> Result<()> {
    if problem.questions().is_empty() {
        let what = if variant.is_open() {
            "open-ended questions with answers"
        } else {
            "labeled yes/no questions"
        };
        return Err(Error::InvalidArgument(format!(
            "{variant} needs {what} on products with reviews; none in the training split"
        )));
    }
    Ok(())
}

/// Alternates E-steps with L-BFGS M-steps on the expected complete-data
/// log-likelihood, returning the parameters with the best penalized
/// observed log-likelihood.
pub fn train_em(problem: &TrainingProblem, config: &TrainConfig) -> Result<TrainOutcome> {
    let monitor = |theta: &[f64]| problem.observed_loglik(theta) - problem.penalty(theta);
    let mut theta = problem.pack(problem.base());
    let mut current = monitor(&theta);
    if !current.is_finite() {
        return Err(Error::NonFinite("observed log-likelihood at the initial point".into()));
    }
    let mut history = vec![current];
    let mut best = (current, theta.clone());
    info!("em round 0: observed loglik {current:.8}");
    for round in 1..=config.em_max_rounds {
        let state = problem.e_step(&theta);
        let res = maximize(
            |x| problem.expected_complete_loglik(x, &state.t),
            &theta,
            &config.lbfgs(),
        )?;
        theta = res.point;
        let next = monitor(&theta);
        history.push(next);
        info!(
            "em round {round}: observed loglik {next:.8} ({} L-BFGS iterations)",
            res.iterations
        );
        if next < current - 1e-8 * current.abs() {
            warn!("observed loglik decreased from {current} to {next}");
        }
        if next > best.0 {
            best = (next, theta.clone());
        }
        let converged = (next - current).abs() < config.em_rel_tol * current.abs();
        current = next;
        if converged {
            break;
        }
    }
    let mut state = problem.e_step(&best.1);
    state.observed_loglik = history;
    Ok(TrainOutcome {
        params: problem.unpack(&best.1),
        objective: best.0,
        em: Some(state),
        questions_used: problem.questions().len(),
    })
}
