//! Independent reference implementations shared by the integration tests
//! and the acceptance target.
#![allow(dead_code)]

use corolla::numcore::Tensor;
use corolla::rng::{stream, Pcg32};
use corolla::supcon::{BatchLayout, EmbeddingBatch};
use rand::Rng;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Textbook double loop, plain `exp`/`ln` with no max shift.
pub fn naive_self_loss(z: &[Vec<f64>], pairing: &[usize], tau: f64) -> f64 {
    let n = z.len();
    let mut total = 0.0;
    for i in 0..n {
        let mut denom = 0.0;
        for a in 0..n {
            if a != i {
                denom += (dot(&z[i], &z[a]) / tau).exp();
            }
        }
        let num = (dot(&z[i], &z[pairing[i]]) / tau).exp();
        total += -(num / denom).ln();
    }
    total
}

/// Anchors without positives contribute nothing.
pub fn naive_sup_loss(z: &[Vec<f64>], labels: &[usize], tau: f64) -> f64 {
    let n = z.len();
    let mut total = 0.0;
    for i in 0..n {
        let positives: Vec<usize> = (0..n).filter(|&p| p != i && labels[p] == labels[i]).collect();
        if positives.is_empty() {
            continue;
        }
        let mut denom = 0.0;
        for a in 0..n {
            if a != i {
                denom += (dot(&z[i], &z[a]) / tau).exp();
            }
        }
        let mut inner = 0.0;
        for &p in &positives {
            inner += ((dot(&z[i], &z[p]) / tau).exp() / denom).ln();
        }
        total += -inner / positives.len() as f64;
    }
    total
}

pub fn unit_rows(rng: &mut Pcg32, rows: usize, d: usize) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| {
            let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let norm = dot(&v, &v).sqrt();
            v.iter().map(|x| x / norm).collect()
        })
        .collect()
}

pub fn to_tensor(rows: &[Vec<f64>]) -> Tensor {
    Tensor::new(vec![rows.len(), rows[0].len()], rows.concat()).unwrap()
}

/// Seeded stacked batch: `n` sources with labels in `0..classes`, two views each.
pub fn random_batch(seed: u64, n: usize, d: usize, classes: usize) -> (Vec<Vec<f64>>, EmbeddingBatch) {
    let mut rng = stream(seed, &[0xba7c]);
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
    let z = unit_rows(&mut rng, 2 * n, d);
    let batch = EmbeddingBatch::new(to_tensor(&z), BatchLayout::stacked(&labels)).unwrap();
    (z, batch)
}

/// Random orthogonal `d × d` matrix by Gram-Schmidt on a seeded Gaussian-ish matrix.
pub fn random_orthogonal(rng: &mut Pcg32, d: usize) -> Vec<Vec<f64>> {
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(d);
    while q.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        for u in &q {
            let c = dot(&v, u);
            for (vi, ui) in v.iter_mut().zip(u) {
                *vi -= c * ui;
            }
        }
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-3 {
            q.push(v.iter().map(|x| x / norm).collect());
        }
    }
    q
}

pub fn rotate(z: &[Vec<f64>], q: &[Vec<f64>]) -> Vec<Vec<f64>> {
    z.iter().map(|row| q.iter().map(|qr| dot(qr, row)).collect()).collect()
}

/// Every admissible path by odometer enumeration over `rows^cols` tuples.
/// Returns the minimum cost and, among minimizers, the path that is smallest
/// comparing the last column first.
pub fn enumerate_min_path(cost: &[f64], rows: usize, cols: usize, delta: usize) -> (f64, Vec<usize>) {
    let mut path = vec![0usize; cols];
    let mut best: Option<(f64, Vec<usize>)> = None;
    loop {
        if path.windows(2).all(|w| w[0].abs_diff(w[1]) <= delta) {
            let c: f64 = path.iter().enumerate().map(|(x, &z)| cost[z * cols + x]).sum();
            let better = match &best {
                None => true,
                Some((b, p)) => c < *b || (c == *b && path.iter().rev().lt(p.iter().rev())),
            };
            if better {
                best = Some((c, path.clone()));
            }
        }
        let mut x = 0;
        loop {
            if x == cols {
                return best.expect("delta >= 1 admits constant paths");
            }
            path[x] += 1;
            if path[x] < rows {
                break;
            }
            path[x] = 0;
            x += 1;
        }
    }
}

use corolla::numcore::{grad_check, Graph, Var};
use corolla::supcon::{self_contrastive, sup_contrastive, ContrastiveConfig};

type Probe = Box<dyn Fn(&mut Graph, Var) -> corolla::Result<Var>>;

/// Values bounded away from zero so relu and normalization stay smooth
/// within a finite-difference step.
fn away_from_zero(rng: &mut Pcg32, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(0.1..1.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Reduce `y` to a scalar through fixed random weights, so every output
/// element carries a distinct gradient.
fn weighted_sum(g: &mut Graph, y: Var, rng: &mut Pcg32) -> corolla::Result<Var> {
    let shape = g.value(y).shape().to_vec();
    let w = g.constant(away_from_zero(rng, &shape));
    let p = g.mul(y, w)?;
    g.sum(p)
}

/// One probe: input tensor plus a closure mapping it to a scalar.
fn probe(name: &str, seed: u64) -> (Tensor, Probe) {
    let mut rng = stream(seed, &[0x96ad]);
    let mut c = |shape: &[usize]| away_from_zero(&mut rng, shape);
    let (x, other) = match name {
        "matmul_left" => (c(&[3, 4]), c(&[4, 2])),
        "matmul_right" => (c(&[4, 2]), c(&[3, 4])),
        "transpose" | "add" | "sub" | "mul" | "scale" | "relu" | "sum" => (c(&[3, 4]), c(&[3, 4])),
        "row_bias_x" => (c(&[3, 4]), c(&[4])),
        "row_bias_b" => (c(&[4]), c(&[3, 4])),
        "channel_bias_x" => (c(&[2, 3, 3]), c(&[2])),
        "channel_bias_b" => (c(&[2]), c(&[2, 3, 3])),
        "conv_x" | "conv_x_stride2" => (c(&[2, 5, 5]), c(&[3, 2, 3, 3])),
        "conv_k" | "conv_k_stride2" => (c(&[3, 2, 3, 3]), c(&[2, 5, 5])),
        "avgpool" => (c(&[2, 4, 6]), c(&[1])),
        "concat0" | "concat1" => (c(&[2, 3]), c(&[2, 3])),
        "reshape" => (c(&[2, 6]), c(&[1])),
        "l2_normalize" => (c(&[3, 4]), c(&[1])),
        "logsumexp0" | "logsumexp1" => (c(&[3, 4]), c(&[1])),
        "gather" => (c(&[6]), c(&[1])),
        "cross_entropy" => (c(&[4, 3]), c(&[1])),
        "self_contrastive" | "sup_contrastive" => (c(&[6, 5]), c(&[1])),
        other => panic!("unknown probe {other}"),
    };
    let name = name.to_string();
    let f: Probe = Box::new(move |g: &mut Graph, v: Var| {
        let o = g.constant(other.clone());
        // a fresh stream per evaluation, so every call sees the same weights
        let mut wr = stream(seed, &[0x3e16]);
        let y = match name.as_str() {
            "matmul_left" => g.matmul(v, o)?,
            "matmul_right" => g.matmul(o, v)?,
            "transpose" => g.transpose(v)?,
            "add" => g.add(v, o)?,
            "sub" => g.sub(o, v)?,
            "mul" => g.mul(v, o)?,
            "scale" => g.scale(v, -1.7)?,
            "relu" => g.relu(v)?,
            "sum" => g.sum(v)?,
            "row_bias_x" => g.add_row_bias(v, o)?,
            "row_bias_b" => g.add_row_bias(o, v)?,
            "channel_bias_x" => g.add_channel_bias(v, o)?,
            "channel_bias_b" => g.add_channel_bias(o, v)?,
            "conv_x" => g.conv2d(v, o, 1)?,
            "conv_k" => g.conv2d(o, v, 1)?,
            "conv_x_stride2" => g.conv2d(v, o, 2)?,
            "conv_k_stride2" => g.conv2d(o, v, 2)?,
            "avgpool" => g.avgpool(v, (2, 3))?,
            "concat0" => g.concat(&[v, o], 0)?,
            "concat1" => g.concat(&[o, v], 1)?,
            "reshape" => g.reshape(v, &[3, 4])?,
            "l2_normalize" => g.l2_normalize(v, 1, 1e-12)?,
            "logsumexp0" => g.logsumexp(v, 0)?,
            "logsumexp1" => g.logsumexp(v, 1)?,
            "gather" => g.gather(v, &[5, 0, 0, 3])?,
            "cross_entropy" => return corolla::fusion::cross_entropy(g, v, &[0, 2, 1, 2]),
            "self_contrastive" | "sup_contrastive" => {
                let z = g.l2_normalize(v, 1, 1e-12)?;
                let layout = BatchLayout::stacked(&[0, 1, 0]);
                let cfg = ContrastiveConfig::default();
                let out = if name == "self_contrastive" {
                    self_contrastive(g, z, &layout, &cfg)?
                } else {
                    sup_contrastive(g, z, &layout, &cfg)?
                };
                return Ok(out.loss);
            }
            _ => unreachable!(),
        };
        weighted_sum(g, y, &mut wr)
    });
    (x, f)
}

pub const GRADIENT_PROBES: &[&str] = &[
    "matmul_left", "matmul_right", "transpose", "add", "sub", "mul", "scale", "relu", "sum", "row_bias_x",
    "row_bias_b", "channel_bias_x", "channel_bias_b", "conv_x", "conv_k", "conv_x_stride2", "conv_k_stride2",
    "avgpool", "concat0", "concat1", "reshape", "l2_normalize", "logsumexp0", "logsumexp1", "gather",
    "cross_entropy", "self_contrastive", "sup_contrastive",
];

/// Worst relative error of each probe over `trials` seeded inputs.
pub fn gradient_suite(trials: u64, h: f64) -> Vec<(&'static str, f64)> {
    GRADIENT_PROBES
        .iter()
        .map(|&name| {
            let worst = (0..trials)
                .map(|t| {
                    let (x, f) = probe(name, t);
                    grad_check(|g, v| f(g, v), &x, h, f64::INFINITY).unwrap().max_rel_error
                })
                .fold(0.0, f64::max);
            (name, worst)
        })
        .collect()
}
