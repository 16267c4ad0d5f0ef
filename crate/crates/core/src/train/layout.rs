use std::ops::Range;

use crate::moe::{ModelParams, Variant};

/// Maps the active parameters of a variant onto one flat vector.
///
/// Inactive blocks keep whatever value the base [`ModelParams`] holds and
/// are neither optimized nor regularized.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    pub variant: Variant,
    pub vocab: usize,
    pub reviewers: usize,
    pub kappa: Range<usize>,
    pub eta: Range<usize>,
    pub mu: Range<usize>,
    pub xi: Option<Range<usize>>,
    /// Weights followed by the bias coordinate.
    pub gamma1: Option<Range<usize>>,
    pub gamma2: Option<Range<usize>>,
    pub g: Option<Range<usize>>,
    pub c: Option<usize>,
    pub expertise: Option<Range<usize>>,
    pub user_bias: Option<Range<usize>>,
    len: usize,
}

struct Cursor(usize);

impl Cursor {
    fn take(&mut self, n: usize) -> Range<usize> {
        let r = self.0..self.0 + n;
        self.0 += n;
        r
    }
}

impl ParamLayout {
    pub fn new(variant: Variant, vocab: usize, reviewers: usize, freeze_gamma: bool) -> Self {
        let mut at = Cursor(0);
        let kappa = at.take(2);
        let eta = at.take(vocab);
        let mu = at.take(vocab);
        let xi = (!variant.is_open()).then(|| at.take(vocab));
        let (gamma1, gamma2) = if variant.is_em() && !freeze_gamma {
            (Some(at.take(vocab + 1)), Some(at.take(vocab + 1)))
        } else {
            (None, None)
        };
        let subjective = variant.is_subjective();
        let g = subjective.then(|| at.take(2));
        let c = subjective.then(|| at.take(1).start);
        let expertise = subjective.then(|| at.take(reviewers));
        let user_bias = subjective.then(|| at.take(reviewers));
        ParamLayout {
            variant,
            vocab,
            reviewers,
            kappa,
            eta,
            mu,
            xi,
            gamma1,
            gamma2,
            g,
            c,
            expertise,
            user_bias,
            len: at.0,
        }
    }

    pub fn for_params(params: &ModelParams, freeze_gamma: bool) -> Self {
        ParamLayout::new(
            params.variant,
            params.vocab_size(),
            params.reviewers.len(),
            freeze_gamma,
        )
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn pack(&self, p: &ModelParams) -> Vec<f64> {
        let mut out = vec![0.0; self.len];
        out[self.kappa.clone()].copy_from_slice(&p.kappa);
        out[self.eta.clone()].copy_from_slice(&p.eta);
        out[self.mu.clone()].copy_from_slice(&p.mu);
        if let Some(r) = &self.xi {
            out[r.clone()].copy_from_slice(&p.xi);
        }
        if let Some(r) = &self.gamma1 {
            out[r.start..r.end - 1].copy_from_slice(&p.gamma1);
            out[r.end - 1] = p.gamma1_bias;
        }
        if let Some(r) = &self.gamma2 {
            out[r.start..r.end - 1].copy_from_slice(&p.gamma2);
            out[r.end - 1] = p.gamma2_bias;
        }
        if let Some(r) = &self.g {
            out[r.clone()].copy_from_slice(&p.g);
        }
        if let Some(i) = self.c {
            out[i] = p.c;
        }
        if let Some(r) = &self.expertise {
            out[r.clone()].copy_from_slice(&p.expertise);
        }
        if let Some(r) = &self.user_bias {
            out[r.clone()].copy_from_slice(&p.user_bias);
        }
        out
    }

    /// Copies `theta` into the active blocks of a clone of `base`.
    pub fn unpack(&self, theta: &[f64], base: &ModelParams) -> ModelParams {
        let mut p = base.clone();
        self.unpack_into(theta, &mut p);
        p
    }

    pub fn unpack_into(&self, theta: &[f64], p: &mut ModelParams) {
        debug_assert_eq!(theta.len(), self.len);
        p.kappa.copy_from_slice(&theta[self.kappa.clone()]);
        p.eta.copy_from_slice(&theta[self.eta.clone()]);
        p.mu.copy_from_slice(&theta[self.mu.clone()]);
        if let Some(r) = &self.xi {
            p.xi.copy_from_slice(&theta[r.clone()]);
        }
        if let Some(r) = &self.gamma1 {
            p.gamma1.copy_from_slice(&theta[r.start..r.end - 1]);
            p.gamma1_bias = theta[r.end - 1];
        }
        if let Some(r) = &self.gamma2 {
            p.gamma2.copy_from_slice(&theta[r.start..r.end - 1]);
            p.gamma2_bias = theta[r.end - 1];
        }
        if let Some(r) = &self.g {
            p.g.copy_from_slice(&theta[r.clone()]);
        }
        if let Some(i) = self.c {
            p.c = theta[i];
        }
        if let Some(r) = &self.expertise {
            p.expertise.copy_from_slice(&theta[r.clone()]);
        }
        if let Some(r) = &self.user_bias {
            p.user_bias.copy_from_slice(&theta[r.clone()]);
        }
    }
}
