//! One-dimensional Gaussian mixtures fitted by expectation maximization, and
//! the mode-specific normalization built on them.
//!
//! A value `x` is represented by the mixture component (mode) it most likely
//! belongs to plus a scaled offset `alpha = (x - mu_k) / (4 sigma_k)`, clamped
//! to `[-1, 1]`.

use std::f64::consts::PI;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{rng_from_seed, Rng};

pub const VARIANCE_FLOOR: f64 = 1e-6;
pub const DEFAULT_COMPONENTS: usize = 10;
pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITER: usize = 200;

/// Half-width of the normalization band, in standard deviations.
const ALPHA_SCALE: f64 = 4.0;

// Components whose total responsibility falls below this keep their
// previous mean and variance.
const DEAD_COMPONENT_MASS: f64 = 1e-200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gmm {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl Gmm {
    pub fn new(weights: Vec<f64>, means: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        let k = weights.len();
        if k == 0 || means.len() != k || variances.len() != k {
            return Err(Error::Data("mixture parameter vectors must be non-empty and equally long".into()));
        }
        if weights.iter().any(|&w| !(w >= 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Data("mixture weights must form a probability vector".into()));
        }
        if variances.iter().any(|&v| !(v >= VARIANCE_FLOOR)) || means.iter().any(|m| !m.is_finite()) {
            return Err(Error::Data("mixture variances must be at least the floor and means finite".into()));
        }
        Ok(Self { weights, means, variances })
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    fn log_terms(&self, x: f64, out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            let v = self.variances[k];
            let d = x - self.means[k];
            *o = self.weights[k].ln() - 0.5 * (2.0 * PI * v).ln() - d * d / (2.0 * v);
        }
    }

    pub fn log_pdf(&self, x: f64) -> f64 {
        let mut t = vec![0.0; self.n_components()];
        self.log_terms(x, &mut t);
        log_sum_exp(&t)
    }

    /// Mixture density `sum_k w_k N(x | mu_k, var_k)`.
    pub fn pdf(&self, x: f64) -> f64 {
        self.log_pdf(x).exp()
    }

    pub fn log_likelihood(&self, values: &[f64]) -> f64 {
        let mut t = vec![0.0; self.n_components()];
        values
            .iter()
            .map(|&x| {
                self.log_terms(x, &mut t);
                log_sum_exp(&t)
            })
            .sum()
    }

    /// Component responsibilities for `x`, computed in log space.
    pub fn posterior(&self, x: f64) -> Vec<f64> {
        let mut t = vec![0.0; self.n_components()];
        self.log_terms(x, &mut t);
        let lse = log_sum_exp(&t);
        t.iter().map(|l| (l - lse).exp()).collect()
    }

    pub fn std_dev(&self, k: usize) -> f64 {
        self.variances[k].sqrt()
    }

    pub fn encode_value(&self, x: f64, select: ModeSelect<'_>) -> ModeEncoding {
        let post = self.posterior(x);
        let mode = match select {
            ModeSelect::Argmax => argmax(&post),
            ModeSelect::Sample(rng) => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut chosen = None;
                for (k, p) in post.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        chosen = Some(k);
                        break;
                    }
                }
                // rounding can leave acc slightly below u
                chosen.unwrap_or_else(|| argmax(&post))
            }
        };
        let alpha = ((x - self.means[mode]) / (ALPHA_SCALE * self.std_dev(mode))).clamp(-1.0, 1.0);
        ModeEncoding { mode, n_modes: self.n_components(), alpha }
    }

    pub fn decode_value(&self, enc: &ModeEncoding) -> f64 {
        self.means[enc.mode] + ALPHA_SCALE * self.std_dev(enc.mode) * enc.alpha.clamp(-1.0, 1.0)
    }
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// How the mode of a value is chosen during encoding.
pub enum ModeSelect<'a> {
    Sample(&'a mut Rng),
    Argmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeEncoding {
    pub mode: usize,
    pub n_modes: usize,
    pub alpha: f64,
}

impl ModeEncoding {
    pub fn one_hot(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.n_modes];
        v[self.mode] = 1.0;
        v
    }
}

#[derive(Debug, Clone)]
pub struct GmmFit {
    pub gmm: Gmm,
    /// Log-likelihood of the initial parameters followed by one entry per
    /// completed EM update.
    pub log_likelihood: Vec<f64>,
    pub converged: bool,
}

/// Picks `k` distinct samples: the first uniformly, each next one with
/// probability proportional to its squared distance from the nearest pick.
/// Falls back to uniform choice among unpicked rows when every remaining
/// distance is zero.
fn seed_means(values: &[f64], k: usize, rng: &mut Rng) -> Vec<f64> {
    let n = values.len();
    let mut picked = vec![false; n];
    let first = rng.random_range(0..n);
    picked[first] = true;
    let mut means = vec![values[first]];
    let mut dist: Vec<f64> = values.iter().map(|v| (v - values[first]).powi(2)).collect();
    while means.len() < k {
        let total: f64 = dist.iter().zip(&picked).filter(|(_, &p)| !p).map(|(d, _)| d).sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut choice = None;
            for i in (0..n).filter(|&i| !picked[i] && dist[i] > 0.0) {
                acc += dist[i];
                choice = Some(i);
                if acc > target {
                    break;
                }
            }
            choice.expect("positive total mass")
        } else {
            let free: Vec<usize> = (0..n).filter(|&i| !picked[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        picked[next] = true;
        means.push(values[next]);
        for (d, v) in dist.iter_mut().zip(values) {
            *d = d.min((v - values[next]).powi(2));
        }
    }
    means
}

/// Fits a `k`-component mixture by EM.
///
/// Means start at `k` distinct samples chosen by distance-weighted seeding, variances at the
/// global variance and weights uniform. Iteration stops once the relative
/// log-likelihood improvement drops below `tol` or after `max_iter` updates.
pub fn fit_gmm(values: &[f64], k: usize, tol: f64, max_iter: usize, seed: u64) -> Result<GmmFit> {
    if k == 0 {
        return Err(Error::Config("mixture needs at least one component".into()));
    }
    let n = values.len();
    if n < k {
        return Err(Error::Data(format!("{n} samples cannot support {k} mixture components")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite value passed to mixture fit".into()));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let global_var = (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64).max(VARIANCE_FLOOR);

    let mut rng = rng_from_seed(seed);
    let means = seed_means(values, k, &mut rng);
    let mut gmm = Gmm { weights: vec![1.0 / k as f64; k], means, variances: vec![global_var; k] };

    let mut resp = vec![0.0; n * k];
    let mut terms = vec![0.0; k];
    let mut history = Vec::new();
    let mut converged = false;

    for iter in 0..=max_iter {
        // E-step; also yields the log-likelihood of the current parameters.
        let mut ll = 0.0;
        for (i, &x) in values.iter().enumerate() {
            gmm.log_terms(x, &mut terms);
            let lse = log_sum_exp(&terms);
            ll += lse;
            for (r, t) in resp[i * k..(i + 1) * k].iter_mut().zip(&terms) {
                *r = (t - lse).exp();
            }
        }
        if let Some(&prev) = history.last() {
            let improvement = (ll - prev) / f64::abs(prev).max(f64::MIN_POSITIVE);
            history.push(ll);
            if improvement < tol {
                converged = true;
                break;
            }
        } else {
            history.push(ll);
        }
        if iter == max_iter {
            break;
        }

        // M-step.
        let mut mass = vec![0.0; k];
        let mut first = vec![0.0; k];
        for (i, &x) in values.iter().enumerate() {
            for c in 0..k {
                let r = resp[i * k + c];
                mass[c] += r;
                first[c] += r * x;
            }
        }
        let total: f64 = mass.iter().sum();
        for c in 0..k {
            gmm.weights[c] = mass[c] / total;
            if mass[c] > DEAD_COMPONENT_MASS {
                gmm.means[c] = first[c] / mass[c];
            }
        }
        let mut second = vec![0.0; k];
        for (i, &x) in values.iter().enumerate() {
            for c in 0..k {
                let d = x - gmm.means[c];
                second[c] += resp[i * k + c] * d * d;
            }
        }
        for c in 0..k {
            if mass[c] > DEAD_COMPONENT_MASS {
                gmm.variances[c] = (second[c] / mass[c]).max(VARIANCE_FLOOR);
            }
        }
    }

    Ok(GmmFit { gmm, log_likelihood: history, converged })
}
