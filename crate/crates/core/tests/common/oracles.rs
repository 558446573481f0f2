//! Independent reference implementations used by the integration tests and
//! the acceptance suite. Nothing here calls the routine it checks.
#![allow(dead_code)]

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sudf::hsio::{BinaryMask, SaliencyMap};
use sudf::mrank::AffinityGraph;
use sudf::nncore::{
    glorot_init, maxpool2_backward, maxpool2_forward, relu_backward, relu_forward,
    softmax_cross_entropy, upsample2_backward, upsample2_forward, BatchNorm, ConvLayer, ConvMode,
    Network, Tensor4,
};
use sudf::slic::SuperpixelMap;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut impl Rng, c: usize, h: usize, w: usize) -> Tensor4 {
    let data = (0..c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor4::from_vec(c, h, w, data).unwrap()
}

// ---------------------------------------------------------------------------
// Finite differences

pub const FD_STEP: f64 = 1e-3;

/// Central differences of `f` at `x`.
pub fn central_diff(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Worst elementwise gap scaled by the largest reference magnitude.
pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let scale = numeric
        .iter()
        .chain(analytic)
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-12);
    analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()))
        / scale
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Input, weight and bias gradients of a random conv layer under the scalar
/// loss `<layer(x), g>`. Returns the worst relative error.
pub fn conv_gradcheck(seed: u64, mode: ConvMode, k: usize) -> f64 {
    let mut r = rng(seed);
    let (cin, cout, h, w) = (2, 3, 4, 4);
    let mut layer = ConvLayer::new(cin, cout, k, mode).unwrap();
    for v in layer.weight.iter_mut().chain(layer.bias.iter_mut()) {
        *v = r.gen_range(-1.0..1.0);
    }
    let x = random_tensor(&mut r, cin, h, w);
    let g = random_tensor(&mut r, cout, h, w);
    let grads = layer.backward(&x, &g).unwrap();

    let fx = central_diff(&x.data, FD_STEP, |d| {
        let t = Tensor4::from_vec(cin, h, w, d.to_vec()).unwrap();
        dot(&layer.forward(&t).unwrap().data, &g.data)
    });
    let fw = central_diff(&layer.weight, FD_STEP, |d| {
        let mut l = layer.clone();
        l.weight = d.to_vec();
        dot(&l.forward(&x).unwrap().data, &g.data)
    });
    let fb = central_diff(&layer.bias, FD_STEP, |d| {
        let mut l = layer.clone();
        l.bias = d.to_vec();
        dot(&l.forward(&x).unwrap().data, &g.data)
    });
    rel_err(&grads.input.data, &fx)
        .max(rel_err(&grads.weight, &fw))
        .max(rel_err(&grads.bias, &fb))
}

pub fn batchnorm_gradcheck(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (c, h, w) = (2, 3, 3);
    let mut bn = BatchNorm::new(c);
    for v in bn.gamma.iter_mut() {
        *v = r.gen_range(0.5..1.5);
    }
    for v in bn.beta.iter_mut() {
        *v = r.gen_range(-0.5..0.5);
    }
    let x = random_tensor(&mut r, c, h, w);
    let g = random_tensor(&mut r, c, h, w);
    let (_, cache) = bn.forward(&x).unwrap();
    let grads = bn.backward(&cache, &g).unwrap();
    let loss = |bn: &BatchNorm, x: &Tensor4| dot(&bn.forward(x).unwrap().0.data, &g.data);
    let fx = central_diff(&x.data, FD_STEP, |d| {
        loss(&bn, &Tensor4::from_vec(c, h, w, d.to_vec()).unwrap())
    });
    let fg = central_diff(&bn.gamma, FD_STEP, |d| {
        let mut b = bn.clone();
        b.gamma = d.to_vec();
        loss(&b, &x)
    });
    let fb = central_diff(&bn.beta, FD_STEP, |d| {
        let mut b = bn.clone();
        b.beta = d.to_vec();
        loss(&b, &x)
    });
    rel_err(&grads.input.data, &fx)
        .max(rel_err(&grads.gamma, &fg))
        .max(rel_err(&grads.beta, &fb))
}

/// Inputs kept at least 0.05 away from the kink.
pub fn relu_gradcheck(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (c, h, w) = (2, 3, 3);
    let data = (0..c * h * w)
        .map(|_| {
            let m = r.gen_range(0.05..1.0);
            if r.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    let x = Tensor4::from_vec(c, h, w, data).unwrap();
    let g = random_tensor(&mut r, c, h, w);
    let an = relu_backward(&x, &g).unwrap();
    let num = central_diff(&x.data, FD_STEP, |d| {
        dot(
            &relu_forward(&Tensor4::from_vec(c, h, w, d.to_vec()).unwrap()).data,
            &g.data,
        )
    });
    rel_err(&an.data, &num)
}

/// Values are a shuffled ladder with spacing 0.01, so every block maximum is
/// unique by far more than the step.
pub fn maxpool_gradcheck(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (c, h, w) = (1, 6, 6);
    let mut data: Vec<f64> = (0..c * h * w).map(|i| i as f64 * 0.01).collect();
    for i in (1..data.len()).rev() {
        data.swap(i, r.gen_range(0..=i));
    }
    let x = Tensor4::from_vec(c, h, w, data).unwrap();
    let (out, argmax) = maxpool2_forward(&x);
    let g = random_tensor(&mut r, out.channels, out.height, out.width);
    let an = maxpool2_backward(x.shape(), &argmax, &g).unwrap();
    let num = central_diff(&x.data, FD_STEP, |d| {
        dot(
            &maxpool2_forward(&Tensor4::from_vec(c, h, w, d.to_vec()).unwrap()).0.data,
            &g.data,
        )
    });
    rel_err(&an.data, &num)
}

/// `<up(x), y> == <x, up^T(y)>`; returns the absolute gap.
pub fn upsample_adjoint_gap(seed: u64) -> f64 {
    let mut r = rng(seed);
    let x = random_tensor(&mut r, 2, 3, 4);
    let y = random_tensor(&mut r, 2, 6, 8);
    let lhs = dot(&upsample2_forward(&x).data, &y.data);
    let rhs = dot(&x.data, &upsample2_backward(&y).unwrap().data);
    (lhs - rhs).abs()
}

pub fn softmax_gradcheck(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (c, h, w) = (4, 3, 3);
    let x = random_tensor(&mut r, c, h, w);
    let labels: Vec<usize> = (0..h * w).map(|_| r.gen_range(0..c)).collect();
    let (_, grad) = softmax_cross_entropy(&x, &labels).unwrap();
    let num = central_diff(&x.data, FD_STEP, |d| {
        softmax_cross_entropy(&Tensor4::from_vec(c, h, w, d.to_vec()).unwrap(), &labels)
            .unwrap()
            .0
    });
    rel_err(&grad.data, &num)
}

pub struct NetworkCheck {
    pub worst: f64,
    pub checked: usize,
    /// Probes whose +-h perturbation changed a ReLU sign or a max-pool
    /// winner, i.e. straddled a non-differentiable point.
    pub skipped: usize,
}

/// Loss gradient through the whole network on an 8x8x3 cube, checked on
/// `probes` randomly chosen entries of every parameter tensor (always
/// including first-layer weights). Labels are fixed, so the loss is smooth
/// wherever the switching pattern does not change.
pub fn network_gradcheck(seed: u64, probes: usize, step: f64) -> NetworkCheck {
    let mut r = rng(seed);
    let (bands, h, w) = (3, 8, 8);
    let input: Vec<f64> = (0..bands * h * w).map(|_| r.gen_range(0.0..1.0)).collect();
    let view = sudf::FeatureView::new(bands, h, w, &input).unwrap();
    let net = glorot_init(Network::feature_extractor(bands), seed);
    let labels: Vec<usize> = (0..h * w).map(|_| r.gen_range(0..net.out_channels())).collect();
    let (features, cache) = net.forward(view).unwrap();
    let base_pattern = cache.switching_pattern();
    let (_, grad) = softmax_cross_entropy(&features, &labels).unwrap();
    let grads = net.backward(&cache, &grad).unwrap();
    let analytic: Vec<Vec<f64>> = grads.as_slices().iter().map(|s| s.to_vec()).collect();

    let mut out = NetworkCheck {
        worst: 0.0,
        checked: 0,
        skipped: 0,
    };
    for (t, a) in analytic.iter().enumerate() {
        let mut an = Vec::new();
        let mut num = Vec::new();
        for _ in 0..probes.min(a.len()) {
            let i = r.gen_range(0..a.len());
            let eval = |delta: f64| {
                let mut n = net.clone();
                n.params_mut()[t][i] += delta;
                let (f, c) = n.forward(view).unwrap();
                (softmax_cross_entropy(&f, &labels).unwrap().0, c.switching_pattern())
            };
            let (up, pu) = eval(step);
            let (down, pd) = eval(-step);
            if pu != base_pattern || pd != base_pattern {
                out.skipped += 1;
                continue;
            }
            out.checked += 1;
            num.push((up - down) / (2.0 * step));
            an.push(a[i]);
        }
        if !an.is_empty() {
            out.worst = out.worst.max(rel_err(&an, &num));
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Manifold ranking

/// Random connected symmetric graph: a random spanning tree plus extra
/// edges, weights in (0.05, 1].
pub fn random_graph(rng: &mut impl Rng, n: usize) -> AffinityGraph {
    let mut w = vec![0.0; n * n];
    let set = |w: &mut Vec<f64>, i: usize, j: usize, v: f64| {
        w[i * n + j] = v;
        w[j * n + i] = v;
    };
    for i in 1..n {
        let j = rng.gen_range(0..i);
        let v = rng.gen_range(0.05..=1.0);
        set(&mut w, i, j, v);
    }
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen_bool(0.3) {
                let v = rng.gen_range(0.05..=1.0);
                set(&mut w, i, j, v);
            }
        }
    }
    AffinityGraph::from_weights(n, w).unwrap()
}

/// Gauss-Jordan inverse with partial pivoting.
pub fn dense_inverse(a: &[f64], n: usize) -> Vec<f64> {
    let mut m = a.to_vec();
    let mut inv = vec![0.0; n * n];
    for i in 0..n {
        inv[i * n + i] = 1.0;
    }
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| m[x * n + col].abs().total_cmp(&m[y * n + col].abs()))
            .unwrap();
        for k in 0..n {
            m.swap(col * n + k, pivot * n + k);
            inv.swap(col * n + k, pivot * n + k);
        }
        let p = m[col * n + col];
        for k in 0..n {
            m[col * n + k] /= p;
            inv[col * n + k] /= p;
        }
        for row in 0..n {
            if row != col {
                let f = m[row * n + col];
                if f != 0.0 {
                    for k in 0..n {
                        m[row * n + k] -= f * m[col * n + k];
                        inv[row * n + k] -= f * inv[col * n + k];
                    }
                }
            }
        }
    }
    inv
}

/// `(D - alpha W)^-1 y` via the explicit inverse.
pub fn rank_by_inverse(graph: &AffinityGraph, query: &[f64], alpha: f64) -> Vec<f64> {
    let n = graph.nodes;
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let d = if i == j { graph.degrees[i] } else { 0.0 };
            a[i * n + j] = d - alpha * graph.weight(i, j);
        }
    }
    let inv = dense_inverse(&a, n);
    (0..n)
        .map(|i| (0..n).map(|j| inv[i * n + j] * query[j]).sum())
        .collect()
}

// ---------------------------------------------------------------------------
// Metrics, written from the definitions with plain loops.

pub fn level(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

pub fn random_instance(rng: &mut impl Rng) -> (SaliencyMap, BinaryMask) {
    let h = rng.gen_range(8..=32);
    let w = rng.gen_range(8..=32);
    let n = h * w;
    let values: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..=1.0)).collect();
    let mut mask: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.3)).collect();
    // both classes present
    mask[0] = true;
    mask[n - 1] = false;
    (
        SaliencyMap::new(h, w, values).unwrap(),
        BinaryMask::new(h, w, mask).unwrap(),
    )
}

pub fn cc_oracle(s: &[f64], g: &[bool]) -> f64 {
    let n = s.len() as f64;
    let gv: Vec<f64> = g.iter().map(|&b| b as u8 as f64).collect();
    let (ex, ey) = (s.iter().sum::<f64>() / n, gv.iter().sum::<f64>() / n);
    let exy = s.iter().zip(&gv).map(|(a, b)| a * b).sum::<f64>() / n;
    let exx = s.iter().map(|a| a * a).sum::<f64>() / n;
    let eyy = gv.iter().map(|b| b * b).sum::<f64>() / n;
    (exy - ex * ey) / ((exx - ex * ex).sqrt() * (eyy - ey * ey).sqrt())
}

pub fn nss_oracle(s: &[f64], g: &[bool]) -> f64 {
    let n = s.len() as f64;
    let mean = s.iter().sum::<f64>() / n;
    let sd = (s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let z: Vec<f64> = s.iter().map(|v| (v - mean) / sd).collect();
    let picked: Vec<f64> = z.iter().zip(g).filter(|(_, &b)| b).map(|(v, _)| *v).collect();
    picked.iter().sum::<f64>() / picked.len() as f64
}

pub fn kl_oracle(s: &[f64], g: &[bool]) -> f64 {
    let ssum: f64 = s.iter().sum();
    let gsum = g.iter().filter(|&&b| b).count() as f64;
    let mut kl = 0.0;
    for (v, &b) in s.iter().zip(g) {
        if b {
            let p = 1.0 / gsum;
            kl += p * (p / (v / ssum + 1e-12)).ln();
        }
    }
    kl
}

/// AUC as the Mann-Whitney statistic on the same resampled negatives the
/// library draws (one `gen_range` per negative, split after split).
pub fn auc_borji_oracle(s: &[f64], g: &[bool], splits: usize, seed: u64) -> f64 {
    let q: Vec<u8> = s.iter().map(|&v| level(v)).collect();
    let pos: Vec<u8> = q.iter().zip(g).filter(|(_, &b)| b).map(|(l, _)| *l).collect();
    let neg_pool: Vec<u8> = q.iter().zip(g).filter(|(_, &b)| !b).map(|(l, _)| *l).collect();
    let mut r = rng(seed);
    let mut total = 0.0;
    for _ in 0..splits {
        let neg: Vec<u8> = (0..pos.len())
            .map(|_| neg_pool[r.gen_range(0..neg_pool.len())])
            .collect();
        let mut wins = 0.0;
        for &p in &pos {
            for &n in &neg {
                if p > n {
                    wins += 1.0;
                } else if p == n {
                    wins += 0.5;
                }
            }
        }
        total += wins / (pos.len() * neg.len()) as f64;
    }
    total / splits as f64
}

/// `(precision, recall)` at threshold level `t`.
pub fn pr_oracle(s: &[f64], g: &[bool], t: u8) -> (f64, f64) {
    let (mut tp, mut fp, mut fnn) = (0.0, 0.0, 0.0);
    for (&v, &b) in s.iter().zip(g) {
        let predicted = level(v) >= t;
        match (predicted, b) {
            (true, true) => tp += 1.0,
            (true, false) => fp += 1.0,
            (false, true) => fnn += 1.0,
            _ => {}
        }
    }
    let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 1.0 };
    (precision, tp / (tp + fnn))
}

pub fn fbeta(p: f64, r: f64, b2: f64) -> f64 {
    if b2 * p + r == 0.0 {
        0.0
    } else {
        (1.0 + b2) * p * r / (b2 * p + r)
    }
}

/// `(f_beta, max_f, ave_f, precision, recall)`.
pub fn f_oracle(s: &[f64], g: &[bool], b2: f64) -> (f64, f64, f64, f64, f64) {
    let fs: Vec<f64> = (0..=255u8)
        .map(|t| {
            let (p, r) = pr_oracle(s, g, t);
            fbeta(p, r, b2)
        })
        .collect();
    let max_f = fs.iter().cloned().fold(f64::MIN, f64::max);
    let ave_f = fs.iter().sum::<f64>() / 256.0;
    let qs: Vec<f64> = s.iter().map(|&v| level(v) as f64 / 255.0).collect();
    let thr = (2.0 * qs.iter().sum::<f64>() / qs.len() as f64).min(1.0);
    let (mut tp, mut fp, mut pos) = (0.0, 0.0, 0.0);
    for (&v, &b) in qs.iter().zip(g) {
        if b {
            pos += 1.0;
        }
        if v >= thr {
            if b {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
        }
    }
    let p = if tp + fp > 0.0 { tp / (tp + fp) } else { 1.0 };
    let r = tp / pos;
    (fbeta(p, r, b2), max_f, ave_f, p, r)
}

// ---------------------------------------------------------------------------
// Superpixel structure

/// Labels cover every pixel, ids are exactly `0..num_segments`, and every
/// segment is a single 4-connected component (checked by BFS).
pub fn check_partition(map: &SuperpixelMap) -> Result<(), String> {
    let (h, w, k) = (map.height, map.width, map.num_segments);
    if map.labels.len() != h * w {
        return Err(format!("{} labels for {}x{}", map.labels.len(), h, w));
    }
    let mut present = vec![false; k];
    for &l in &map.labels {
        if l >= k {
            return Err(format!("label {l} >= {k}"));
        }
        present[l] = true;
    }
    if let Some(missing) = present.iter().position(|p| !p) {
        return Err(format!("segment id {missing} unused"));
    }
    let mut seen = vec![false; h * w];
    let mut components = vec![0usize; k];
    for start in 0..h * w {
        if seen[start] {
            continue;
        }
        let l = map.labels[start];
        components[l] += 1;
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(p) = queue.pop_front() {
            let (y, x) = (p / w, p % w);
            let mut nbrs = Vec::with_capacity(4);
            if y > 0 {
                nbrs.push(p - w);
            }
            if y + 1 < h {
                nbrs.push(p + w);
            }
            if x > 0 {
                nbrs.push(p - 1);
            }
            if x + 1 < w {
                nbrs.push(p + 1);
            }
            for q in nbrs {
                if !seen[q] && map.labels[q] == l {
                    seen[q] = true;
                    queue.push_back(q);
                }
            }
        }
    }
    if let Some(s) = components.iter().position(|&c| c != 1) {
        return Err(format!("segment {s} has {} components", components[s]));
    }
    Ok(())
}
