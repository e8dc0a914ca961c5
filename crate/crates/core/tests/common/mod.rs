#![allow(dead_code)]

use unicorn::data::{FeatureBag, ModalityMask, SampleRecord};
use unicorn::graph::Graph;
use unicorn::model::{AnyModel, Classifier, ModelConfig};
use unicorn::rng::Rng;
use unicorn::tensor::Tensor;

pub fn toy_config(feat_dim: usize, model_dim: usize) -> ModelConfig {
    ModelConfig {
        feat_dim,
        model_dim,
        n_heads: 2,
        ..ModelConfig::default()
    }
}

/// Gaussian bags for the listed modalities with the given patch counts.
pub fn random_sample(seed: u64, feat_dim: usize, bags: &[(usize, usize)], label: usize) -> SampleRecord {
    let mut rng = Rng::new(seed);
    let bags: Vec<FeatureBag> = bags
        .iter()
        .map(|&(m, n)| {
            let t = Tensor::new(&[n, feat_dim], (0..n * feat_dim).map(|_| rng.normal()).collect()).unwrap();
            FeatureBag::new(m, format!("s{seed}_m{m}"), t).unwrap()
        })
        .collect();
    SampleRecord::new(format!("s{seed}"), format!("i{seed}"), "0", label, bags).unwrap()
}

/// Cross-entropy of one sample with dropout disabled.
pub fn loss_of<M: Classifier>(model: &M, sample: &SampleRecord, mask: ModalityMask) -> f64 {
    let mut g = Graph::inference();
    let out = model.build(&mut g, sample, mask, &mut Rng::new(0), false).unwrap();
    let loss = g.cross_entropy(out.logits, sample.label).unwrap();
    g.value(loss)[0]
}

/// Analytic gradient of [`loss_of`] for every parameter, in store order.
pub fn analytic_grads<M: Classifier>(model: &M, sample: &SampleRecord, mask: ModalityMask) -> Vec<Vec<f64>> {
    let mut m = model.clone();
    m.store_mut().zero_grad();
    let grads = {
        let mut g = Graph::new();
        let out = m.build(&mut g, sample, mask, &mut Rng::new(0), false).unwrap();
        let loss = g.cross_entropy(out.logits, sample.label).unwrap();
        g.backward(loss).unwrap()
    };
    grads.accumulate_into(m.store_mut()).unwrap();
    m.store().ids().map(|id| m.store().get(id).grad().unwrap().to_vec()).collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Concatenated per-modality mean of each bag; absent modalities contribute zeros.
pub fn mean_pooled(sample: &SampleRecord, n_modalities: usize, feat_dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; n_modalities * feat_dim];
    for (m, bag) in &sample.bags {
        let t = bag.matrix();
        for i in 0..t.rows() {
            for (j, v) in t.row(i).iter().enumerate() {
                out[m * feat_dim + j] += v / t.rows() as f64;
            }
        }
    }
    out
}

/// Multinomial logistic regression fit by full-batch gradient descent on
/// standardized features (mild L2). Returns test accuracy.
pub fn linear_probe(
    train_x: &[Vec<f64>],
    train_y: &[usize],
    test_x: &[Vec<f64>],
    test_y: &[usize],
    n_classes: usize,
) -> f64 {
    let p = train_x[0].len();
    let n = train_x.len() as f64;
    let mean: Vec<f64> = (0..p).map(|j| train_x.iter().map(|x| x[j]).sum::<f64>() / n).collect();
    let sd: Vec<f64> = (0..p)
        .map(|j| {
            let v = train_x.iter().map(|x| (x[j] - mean[j]).powi(2)).sum::<f64>() / n;
            v.sqrt().max(1e-12)
        })
        .collect();
    let z = |x: &Vec<f64>| -> Vec<f64> { (0..p).map(|j| (x[j] - mean[j]) / sd[j]).collect() };
    let xs: Vec<Vec<f64>> = train_x.iter().map(z).collect();
    let mut w = vec![0.0; (p + 1) * n_classes];
    let logits = |w: &[f64], x: &[f64]| -> Vec<f64> {
        (0..n_classes)
            .map(|c| w[p * n_classes + c] + (0..p).map(|j| x[j] * w[j * n_classes + c]).sum::<f64>())
            .collect()
    };
    let (lr, l2) = (0.5, 1e-3);
    for _ in 0..300 {
        let mut g = vec![0.0; w.len()];
        for (x, &y) in xs.iter().zip(train_y) {
            let probs = unicorn::graph::softmax_vec(&logits(&w, x));
            for c in 0..n_classes {
                let d = (probs[c] - if c == y { 1.0 } else { 0.0 }) / n;
                for j in 0..p {
                    g[j * n_classes + c] += d * x[j];
                }
                g[p * n_classes + c] += d;
            }
        }
        for (k, wk) in w.iter_mut().enumerate() {
            let reg = if k < p * n_classes { l2 * *wk } else { 0.0 };
            *wk -= lr * (g[k] + reg);
        }
    }
    let correct = test_x
        .iter()
        .zip(test_y)
        .filter(|(x, y)| unicorn::model::argmax(&logits(&w, &z(x))) == **y)
        .count();
    correct as f64 / test_y.len() as f64
}

/// Brute-force rollout: explicit head mean, residual mix, renormalization and product.
pub fn rollout_oracle(layers: &[Vec<Vec<Vec<f64>>>]) -> Vec<Vec<f64>> {
    let t = layers[0][0].len();
    let mut acc: Vec<Vec<f64>> = (0..t).map(|i| (0..t).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    for heads in layers {
        let mut b = vec![vec![0.0; t]; t];
        for i in 0..t {
            for j in 0..t {
                let a = heads.iter().map(|h| h[i][j]).sum::<f64>() / heads.len() as f64;
                b[i][j] = 0.5 * a + if i == j { 0.5 } else { 0.0 };
            }
            let s: f64 = b[i].iter().sum();
            for v in &mut b[i] {
                *v /= s;
            }
        }
        let mut next = vec![vec![0.0; t]; t];
        for i in 0..t {
            for j in 0..t {
                next[i][j] = (0..t).map(|k| b[i][k] * acc[k][j]).sum();
            }
        }
        acc = next;
    }
    acc
}

/// Random row-stochastic `t x t` matrix.
pub fn stochastic(t: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    (0..t)
        .map(|_| {
            let row: Vec<f64> = (0..t).map(|_| rng.uniform() + 1e-3).collect();
            let s: f64 = row.iter().sum();
            row.into_iter().map(|v| v / s).collect()
        })
        .collect()
}

pub const H: f64 = 1e-6;
pub const REL_TOL: f64 = 1e-4;
/// Floor for the relative error denominator. Roundoff in the difference
/// quotient is about `1e-16 * loss / H`, near 1e-9 here, so entries smaller
/// than this are compared at an absolute 1e-9.
pub const ABS_FLOOR: f64 = 1e-5;

/// Worst relative error over all scalars, reported with the parameter name.
pub fn check_gradients<M: Classifier>(model: &M, sample: &SampleRecord, mask: ModalityMask) -> (f64, String) {
    let analytic = analytic_grads(model, sample, mask);
    let mut probe = model.clone();
    let mut worst = (0.0, String::new());
    let ids: Vec<_> = probe.store().ids().collect();
    for (k, id) in ids.into_iter().enumerate() {
        for j in 0..probe.store().get(id).numel() {
            let orig = probe.store().get(id).data()[j];
            probe.store_mut().get_mut(id).data_mut()[j] = orig + H;
            let up = loss_of(&probe, sample, mask);
            probe.store_mut().get_mut(id).data_mut()[j] = orig - H;
            let down = loss_of(&probe, sample, mask);
            probe.store_mut().get_mut(id).data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * H);
            let a = analytic[k][j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(ABS_FLOOR);
            if rel > worst.0 {
                worst = (rel, format!("{}[{j}] analytic {a:e} numeric {numeric:e}", probe.store().name(id)));
            }
        }
    }
    worst
}

/// Adds N(0, 0.15^2) to every parameter. At the default init scale the
/// attention gradients are around 1e-9, below what `H` can resolve.
pub fn spread(mut model: AnyModel, seed: u64) -> AnyModel {
    let mut rng = Rng::new(seed);
    let ids: Vec<_> = model.store().ids().collect();
    for id in ids {
        for v in model.store_mut().get_mut(id).data_mut() {
            *v += 0.15 * rng.normal();
        }
    }
    model
}
