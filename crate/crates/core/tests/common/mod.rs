//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use ctgsm::data::Dataset;
use ctgsm::nn::{
    bce_with_logits, cross_entropy_loss, focal_loss, Activation, FocalLossConfig, LayerSpec, Mlp, OutputGrad, Pass,
};
use ctgsm::rng::{rng_from_seed, Rng};
use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng as _;

pub fn random_matrix(rows: usize, cols: usize, scale: f64, rng: &mut Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-scale..scale))
}

fn act(a: Activation, z: &Array2<f64>) -> Array2<f64> {
    match a {
        Activation::Relu => z.mapv(|v| if v > 0.0 { v } else { 0.0 }),
        Activation::LeakyRelu => z.mapv(|v| if v > 0.0 { v } else { 0.2 * v }),
        Activation::Tanh => z.mapv(|v| v.tanh()),
        Activation::Sigmoid => z.mapv(|v| 1.0 / (1.0 + (-v).exp())),
        Activation::Identity => z.clone(),
        Activation::Softmax => {
            let mut out = z.clone();
            for mut r in out.rows_mut() {
                let m = r.fold(f64::MIN, |a, &b| a.max(b));
                r.mapv_inplace(|v| (v - m).exp());
                let s: f64 = r.sum();
                r.mapv_inplace(|v| v / s);
            }
            out
        }
    }
}

/// Plain inference-mode forward pass: outputs and every pre-activation.
pub fn reference_forward(net: &Mlp, x: ArrayView2<f64>) -> (Array2<f64>, Vec<Array2<f64>>) {
    let mut h = x.to_owned();
    let mut pres = Vec::new();
    for l in &net.layers {
        let z = h.dot(&l.weights) + &l.bias;
        h = act(l.activation, &z);
        pres.push(z);
    }
    (h, pres)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossChoice {
    Focal(FocalLossConfig),
    CrossEntropy,
    /// Binary cross-entropy on a sigmoid output against target 1.
    Bce,
    /// Mean squared error against a fixed target of 0.5.
    SquaredError,
}

/// Loss value and the gradient to feed into `backward`.
pub fn loss_and_grad(out: &Array2<f64>, logits: &Array2<f64>, loss: LossChoice, targets: &[usize]) -> (f64, OutputGrad) {
    match loss {
        LossChoice::Focal(cfg) => {
            let (l, g) = focal_loss(out.view(), targets, cfg).unwrap();
            (l, OutputGrad::Logits(g))
        }
        LossChoice::CrossEntropy => {
            let (l, g) = cross_entropy_loss(out.view(), targets).unwrap();
            (l, OutputGrad::Logits(g))
        }
        LossChoice::Bce => {
            let (l, g) = bce_with_logits(logits.view(), 1.0);
            (l, OutputGrad::Logits(g))
        }
        LossChoice::SquaredError => {
            let n = out.nrows() as f64;
            let diff = out.mapv(|v| v - 0.5);
            (diff.mapv(|d| d * d).sum() / n, OutputGrad::Output(diff.mapv(|d| 2.0 * d / n)))
        }
    }
}

pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
}

fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

const MASK_SEED: u64 = 99;

/// Compares analytic parameter and input gradients with central differences
/// (step `h`). Training mode is used with a freshly seeded RNG per
/// evaluation so every evaluation sees the same dropout masks.
pub fn gradient_check(net: &Mlp, x: &Array2<f64>, loss: LossChoice, targets: &[usize], h: f64) -> GradCheck {
    let eval = |n: &Mlp, x: &Array2<f64>| -> f64 {
        let mut rng = rng_from_seed(MASK_SEED);
        let (out, cache) = n.forward(x.view(), Pass::Train(&mut rng)).unwrap();
        loss_and_grad(&out, cache.logits(), loss, targets).0
    };
    let mut rng = rng_from_seed(MASK_SEED);
    let (out, cache) = net.forward(x.view(), Pass::Train(&mut rng)).unwrap();
    let (_, g) = loss_and_grad(&out, cache.logits(), loss, targets);
    let grads = net.backward(&cache, g).unwrap();

    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut probe = net.clone();
    for (l, (dw, db)) in grads.layers.iter().enumerate() {
        for idx in ndarray::indices(dw.raw_dim()) {
            let orig = probe.layers[l].weights[idx];
            probe.layers[l].weights[idx] = orig + h;
            let up = eval(&probe, x);
            probe.layers[l].weights[idx] = orig - h;
            let down = eval(&probe, x);
            probe.layers[l].weights[idx] = orig;
            worst = worst.max(rel_error(dw[idx], (up - down) / (2.0 * h)));
            checked += 1;
        }
        for j in 0..db.len() {
            let orig = probe.layers[l].bias[j];
            probe.layers[l].bias[j] = orig + h;
            let up = eval(&probe, x);
            probe.layers[l].bias[j] = orig - h;
            let down = eval(&probe, x);
            probe.layers[l].bias[j] = orig;
            worst = worst.max(rel_error(db[j], (up - down) / (2.0 * h)));
            checked += 1;
        }
    }
    let mut xp = x.clone();
    for idx in ndarray::indices(x.raw_dim()) {
        let orig = xp[idx];
        xp[idx] = orig + h;
        let up = eval(net, &xp);
        xp[idx] = orig - h;
        let down = eval(net, &xp);
        xp[idx] = orig;
        worst = worst.max(rel_error(grads.input[idx], (up - down) / (2.0 * h)));
        checked += 1;
    }
    GradCheck { max_rel_error: worst, checked }
}

/// A random network and batch for gradient checking, drawn so that no
/// piecewise-linear unit sits within `margin` of its kink.
pub struct GradCase {
    pub net: Mlp,
    pub x: Array2<f64>,
    pub targets: Vec<usize>,
    pub loss: LossChoice,
}

pub fn random_grad_case(seed: u64, input: usize, hidden: &[usize], output: usize, loss: LossChoice) -> GradCase {
    let mut rng = rng_from_seed(seed);
    let hidden_acts = [Activation::Relu, Activation::LeakyRelu, Activation::Tanh];
    let mut specs: Vec<LayerSpec> = hidden
        .iter()
        .enumerate()
        .map(|(i, &u)| {
            let a = hidden_acts[(seed as usize + i) % hidden_acts.len()];
            LayerSpec::new(u, a).with_dropout(if i % 2 == 0 { 0.3 } else { 0.0 })
        })
        .collect();
    let out_act = match loss {
        LossChoice::Focal(_) | LossChoice::CrossEntropy => Activation::Softmax,
        LossChoice::Bce => Activation::Sigmoid,
        LossChoice::SquaredError => Activation::Tanh,
    };
    let output = if loss == LossChoice::Bce { 1 } else { output };
    specs.push(LayerSpec::new(output, out_act));
    let mut net = Mlp::new(input, &specs, seed).unwrap();
    for layer in &mut net.layers {
        layer.bias = Array1::from_shape_simple_fn(layer.bias.len(), || rng.random_range(-0.5..0.5));
    }
    let batch = 3;
    let near_kink = |pres: &[Array2<f64>]| {
        net.layers
            .iter()
            .zip(pres)
            .filter(|(l, _)| matches!(l.activation, Activation::Relu | Activation::LeakyRelu))
            .any(|(_, z)| z.iter().any(|v| v.abs() < 1e-3))
    };
    for _ in 0..1000 {
        let x = random_matrix(batch, input, 1.0, &mut rng);
        let (_, pres) = reference_forward(&net, x.view());
        // The training pass uses the same mask seed as `gradient_check`.
        let mut mask_rng = rng_from_seed(MASK_SEED);
        let (_, cache) = net.forward(x.view(), Pass::Train(&mut mask_rng)).unwrap();
        if !near_kink(&pres) && !near_kink(cache.pre_activations()) {
            let targets = (0..batch).map(|_| rng.random_range(0..output)).collect();
            return GradCase { net, x, targets, loss };
        }
    }
    panic!("could not draw a batch away from activation kinks");
}

/// Edited nearest neighbours by exhaustive sorting of all distances.
pub fn brute_force_enn(data: &Dataset, k: usize) -> Vec<usize> {
    let n = data.n_rows();
    let mut keep = Vec::new();
    for i in 0..n {
        let mut d: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| {
                let mut s = 0.0;
                for t in 0..data.n_features() {
                    let diff = data.features[[i, t]] - data.features[[j, t]];
                    s += diff * diff;
                }
                (s, j)
            })
            .collect();
        d.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let mut votes = std::collections::HashMap::new();
        for &(_, j) in &d[..k] {
            *votes.entry(data.labels[j]).or_insert(0usize) += 1;
        }
        let dropped = votes.iter().any(|(&c, &v)| c != data.labels[i] && 2 * v > k);
        if !dropped {
            keep.push(i);
        }
    }
    keep
}

/// Indices of the `k` nearest same-class rows of `i` by exhaustive sort.
pub fn brute_force_class_knn(data: &Dataset, i: usize, k: usize) -> Vec<usize> {
    let mut d: Vec<(f64, usize)> = (0..data.n_rows())
        .filter(|&j| j != i && data.labels[j] == data.labels[i])
        .map(|j| {
            let s: f64 = data.features.row(i).iter().zip(data.features.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            (s, j)
        })
        .collect();
    d.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    d.into_iter().take(k).map(|(_, j)| j).collect()
}

/// True when `p` lies on the closed segment `[a, b]`: collinear with it
/// and between its ends, both to `tol`.
pub fn on_segment(p: &[f64], a: &[f64], b: &[f64], tol: f64) -> bool {
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| y - x).collect();
    let ap: Vec<f64> = a.iter().zip(p).map(|(x, y)| y - x).collect();
    let len2: f64 = ab.iter().map(|v| v * v).sum();
    if len2 == 0.0 {
        return ap.iter().all(|v| v.abs() <= tol);
    }
    let t = ab.iter().zip(&ap).map(|(u, v)| u * v).sum::<f64>() / len2;
    let residual = ap.iter().zip(&ab).map(|(v, u)| (v - t * u).abs()).fold(0.0, f64::max);
    residual <= tol && t >= -tol && t <= 1.0 + tol
}

/// Confusion counts by explicit pair tally.
pub fn tally(y_true: &[usize], y_pred: &[usize], c: usize) -> Vec<Vec<u64>> {
    let mut m = vec![vec![0u64; c]; c];
    for i in 0..c {
        for j in 0..c {
            m[i][j] = y_true.iter().zip(y_pred).filter(|&(&t, &p)| t == i && p == j).count() as u64;
        }
    }
    m
}

/// AUC via the Mann-Whitney statistic: P(score+ > score-) + 0.5 P(tie).
pub fn mann_whitney_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let pos: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| l).map(|(&s, _)| s).collect();
    let neg: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| !l).map(|(&s, _)| s).collect();
    let mut u = 0.0;
    for &p in &pos {
        for &n in &neg {
            u += if p > n { 1.0 } else if p == n { 0.5 } else { 0.0 };
        }
    }
    u / (pos.len() * neg.len()) as f64
}

/// Random labelled dataset of overlapping uniform blobs.
pub fn random_dataset(n: usize, d: usize, classes: usize, seed: u64) -> Dataset {
    let mut rng = rng_from_seed(seed);
    let labels: Vec<usize> = (0..n).map(|i| if i < classes { i } else { rng.random_range(0..classes) }).collect();
    let mut x = Array2::zeros((n, d));
    for (i, &c) in labels.iter().enumerate() {
        for t in 0..d {
            x[[i, t]] = c as f64 * 0.7 + rng.random_range(-1.0..1.0);
        }
    }
    Dataset::from_parts(x, labels, (0..classes).map(|c| format!("c{c}")).collect()).unwrap()
}
