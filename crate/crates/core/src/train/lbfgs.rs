//! Limited-memory BFGS with a strong-Wolfe line search.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const C1: f64 = 1e-4;
const C2: f64 = 0.9;
const MAX_LINE_SEARCH_EVALS: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LbfgsConfig {
    pub memory: usize,
    pub max_iters: usize,
    /// Stop once the largest gradient component falls below this.
    pub grad_tol: f64,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        LbfgsConfig {
            memory: 10,
            max_iters: 200,
            grad_tol: 1e-5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LbfgsStatus {
    Converged,
    MaxIterations,
    /// No step satisfying sufficient decrease was found; the best point so far is returned.
    LineSearchFailed,
}

#[derive(Debug, Clone)]
pub struct LbfgsResult {
    pub point: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub status: LbfgsStatus,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn all_finite(v: f64, g: &[f64]) -> bool {
    v.is_finite() && g.iter().all(|x| x.is_finite())
}

struct Trial {
    alpha: f64,
    value: f64,
    slope: f64,
    point: Vec<f64>,
    gradient: Vec<f64>,
}

struct LineSearch<'a, F> {
    f: &'a mut F,
    x: &'a [f64],
    dir: &'a [f64],
    f0: f64,
    slope0: f64,
    evals: usize,
}

impl<F: FnMut(&[f64]) -> (f64, Vec<f64>)> LineSearch<'_, F> {
    fn eval(&mut self, alpha: f64) -> Trial {
        self.evals += 1;
        let point: Vec<f64> = self
            .x
            .iter()
            .zip(self.dir)
            .map(|(x, d)| x + alpha * d)
            .collect();
        let (value, gradient) = (self.f)(&point);
        let slope = dot(&gradient, self.dir);
        Trial {
            alpha,
            value,
            slope,
            point,
            gradient,
        }
    }

    fn sufficient(&self, t: &Trial) -> bool {
        t.value.is_finite() && t.value <= self.f0 + C1 * t.alpha * self.slope0
    }

    fn curvature(&self, t: &Trial) -> bool {
        t.slope.abs() <= -C2 * self.slope0
    }

    /// Returns an acceptable trial, or the best sufficient-decrease trial
    /// seen when the curvature condition could not be met.
    fn search(&mut self, alpha0: f64) -> Option<Trial> {
        let mut prev: Option<Trial> = None;
        let mut alpha = alpha0;
        while self.evals < MAX_LINE_SEARCH_EVALS {
            let t = self.eval(alpha);
            let prev_value = prev.as_ref().map_or(self.f0, |p| p.value);
            if !all_finite(t.value, &t.gradient)
                || !self.sufficient(&t)
                || (prev.is_some() && t.value >= prev_value)
            {
                return self.zoom(prev, t);
            }
            if self.curvature(&t) {
                return Some(t);
            }
            if t.slope >= 0.0 {
                let hi = prev.unwrap_or_else(|| origin_trial(self.f0, self.slope0));
                return self.zoom(Some(t), hi);
            }
            alpha = t.alpha * 2.0;
            prev = Some(t);
        }
        prev
    }

    /// `lo` satisfies sufficient decrease (or is the origin when `None`);
    /// `hi` brackets a minimizer together with it.
    fn zoom(&mut self, lo: Option<Trial>, hi: Trial) -> Option<Trial> {
        let mut lo = lo;
        let mut hi = hi;
        while self.evals < MAX_LINE_SEARCH_EVALS {
            let (a_lo, f_lo, d_lo) = lo
                .as_ref()
                .map_or((0.0, self.f0, self.slope0), |t| (t.alpha, t.value, t.slope));
            let (a_hi, f_hi, d_hi) = (hi.alpha, hi.value, hi.slope);
            let width = (a_hi - a_lo).abs();
            if width <= 1e-16 * a_lo.abs().max(a_hi.abs()).max(1e-300) {
                break;
            }
            let alpha = interpolate(a_lo, f_lo, d_lo, a_hi, f_hi, d_hi);
            let t = self.eval(alpha);
            if !all_finite(t.value, &t.gradient) || !self.sufficient(&t) || t.value >= f_lo {
                hi = t;
            } else {
                if self.curvature(&t) {
                    return Some(t);
                }
                if t.slope * (a_hi - a_lo) >= 0.0 {
                    hi = match lo.take() {
                        Some(l) => l,
                        None => origin_trial(self.f0, self.slope0),
                    };
                }
                lo = Some(t);
            }
        }
        lo
    }
}

fn origin_trial(f0: f64, slope0: f64) -> Trial {
    Trial {
        alpha: 0.0,
        value: f0,
        slope: slope0,
        point: Vec::new(),
        gradient: Vec::new(),
    }
}

/// Cubic interpolation between two trials, safeguarded to the inner 80% of
/// the interval; bisection when the cubic is unusable.
fn interpolate(a0: f64, f0: f64, d0: f64, a1: f64, f1: f64, d1: f64) -> f64 {
    let (lo, hi) = if a0 < a1 { (a0, a1) } else { (a1, a0) };
    let mid = 0.5 * (a0 + a1);
    if !(f1.is_finite() && d1.is_finite() && f0.is_finite() && d0.is_finite()) {
        return mid;
    }
    let d = a1 - a0;
    let theta = 3.0 * (f0 - f1) / d + d0 + d1;
    let s = theta.abs().max(d0.abs()).max(d1.abs());
    let disc = (theta / s).powi(2) - (d0 / s) * (d1 / s);
    if disc < 0.0 {
        return mid;
    }
    let mut gamma = s * disc.sqrt();
    if a1 < a0 {
        gamma = -gamma;
    }
    let p = gamma - d0 + theta;
    let q = gamma - d0 + gamma + d1;
    let alpha = if q != 0.0 { a0 + (p / q) * d } else { mid };
    let margin = 0.1 * (hi - lo);
    if alpha.is_finite() && alpha > lo + margin && alpha < hi - margin {
        alpha
    } else {
        mid
    }
}

/// Minimizes `f`, which returns the value and gradient at a point.
///
/// Fails only when the objective is non-finite at the starting point.
pub fn lbfgs_minimize<F>(mut f: F, x0: &[f64], config: &LbfgsConfig) -> Result<LbfgsResult>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    if config.memory < 1 {
        return Err(Error::InvalidArgument("L-BFGS memory must be at least 1".into()));
    }
    let mut x = x0.to_vec();
    let (mut value, mut grad) = f(&x);
    let mut evaluations = 1;
    if !all_finite(value, &grad) {
        return Err(Error::NonFinite(format!(
            "objective is {value} at the starting point"
        )));
    }

    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(config.memory);
    let mut status = LbfgsStatus::MaxIterations;
    let mut iterations = 0;

    while iterations < config.max_iters {
        if inf_norm(&grad) < config.grad_tol {
            status = LbfgsStatus::Converged;
            break;
        }

        // two-loop recursion
        let mut dir: Vec<f64> = grad.iter().map(|g| -g).collect();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * dot(s, &dir);
            dir.iter_mut().zip(y).for_each(|(d, yi)| *d -= a * yi);
            alphas.push(a);
        }
        if let Some((s, y, _)) = history.back() {
            let scale = dot(s, y) / dot(y, y);
            dir.iter_mut().for_each(|d| *d *= scale);
        }
        for ((s, y, rho), a) in history.iter().zip(alphas.into_iter().rev()) {
            let b = rho * dot(y, &dir);
            dir.iter_mut().zip(s).for_each(|(d, si)| *d += (a - b) * si);
        }

        let mut slope = dot(&grad, &dir);
        if !(slope < 0.0) {
            history.clear();
            dir = grad.iter().map(|g| -g).collect();
            slope = dot(&grad, &dir);
        }
        let alpha0 = if history.is_empty() {
            (1.0 / dir.iter().map(|d| d * d).sum::<f64>().sqrt()).min(1.0)
        } else {
            1.0
        };

        let mut ls = LineSearch {
            f: &mut f,
            x: &x,
            dir: &dir,
            f0: value,
            slope0: slope,
            evals: 0,
        };
        let trial = ls.search(alpha0);
        evaluations += ls.evals;
        let Some(trial) = trial.filter(|t| t.alpha > 0.0 && t.value < value) else {
            if history.is_empty() {
                status = LbfgsStatus::LineSearchFailed;
                break;
            }
            // retry once along steepest descent with a fresh memory
            history.clear();
            continue;
        };

        let s: Vec<f64> = trial.point.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = trial.gradient.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() && sy > 0.0 {
            if history.len() == config.memory {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        x = trial.point;
        value = trial.value;
        grad = trial.gradient;
        iterations += 1;
    }
    if status == LbfgsStatus::MaxIterations && inf_norm(&grad) < config.grad_tol {
        status = LbfgsStatus::Converged;
    }

    Ok(LbfgsResult {
        point: x,
        value,
        gradient: grad,
        iterations,
        evaluations,
        status,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> (f64, Vec<f64>) {
        let (a, b) = (x[0], x[1]);
        let v = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = vec![
            -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
            200.0 * (b - a * a),
        ];
        (v, g)
    }

    #[test]
    fn quadratic_converges_quickly() {
        let c = [1.0, -2.0, 3.5, 0.25];
        let f = |x: &[f64]| {
            let v = x.iter().zip(&c).map(|(a, b)| (a - b).powi(2)).sum();
            let g = x.iter().zip(&c).map(|(a, b)| 2.0 * (a - b)).collect();
            (v, g)
        };
        let cfg = LbfgsConfig {
            grad_tol: 1e-9,
            ..LbfgsConfig::default()
        };
        let r = lbfgs_minimize(f, &[0.0; 4], &cfg).unwrap();
        assert_eq!(r.status, LbfgsStatus::Converged);
        assert!(r.iterations <= 10, "{}", r.iterations);
        for (a, b) in r.point.iter().zip(&c) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn rosenbrock_reaches_minimum() {
        let cfg = LbfgsConfig {
            grad_tol: 1e-10,
            max_iters: 1000,
            ..LbfgsConfig::default()
        };
        let r = lbfgs_minimize(rosenbrock, &[-1.2, 1.0], &cfg).unwrap();
        assert!((r.point[0] - 1.0).abs() < 1e-5, "{:?} {:?}", r.point, r.status);
        assert!((r.point[1] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn linear_plus_quadratic_closed_form() {
        let g0 = [0.5, -3.0, 2.0];
        let f = |x: &[f64]| {
            let v = x.iter().zip(&g0).map(|(a, g)| g * a + a * a).sum();
            let grad = x.iter().zip(&g0).map(|(a, g)| g + 2.0 * a).collect();
            (v, grad)
        };
        let r = lbfgs_minimize(f, &[0.0; 3], &LbfgsConfig::default()).unwrap();
        for (a, g) in r.point.iter().zip(&g0) {
            assert!((a + g / 2.0).abs() < 1e-6);
        }
    }

    #[test]
    fn non_finite_start_is_rejected() {
        let f = |_: &[f64]| (f64::NAN, vec![0.0]);
        let err = lbfgs_minimize(f, &[0.0], &LbfgsConfig::default()).unwrap_err();
        assert!(err.is_numerical());
    }

    #[test]
    fn overflow_region_is_backed_out_of() {
        // exp blows up for large steps; the search must shrink instead of failing
        let f = |x: &[f64]| {
            let e = x[0].exp();
            (e - 2.0 * x[0], vec![e - 2.0])
        };
        let r = lbfgs_minimize(f, &[-30.0], &LbfgsConfig::default()).unwrap();
        assert!((r.point[0] - 2f64.ln()).abs() < 1e-5, "{:?}", r.point);
    }
}
