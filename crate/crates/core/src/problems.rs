//! Seeded, differentiable test problems and the minibatch sampler.
//!
//! All randomness comes from [`ChaCha8Rng`], a counter-based generator whose
//! output is fixed by its seed and stream number on every platform. Each
//! problem draws from `seed_from_u64(seed)` with a distinct stream per role
//! (data, teacher, initial point), so adding a draw in one role never shifts
//! another.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::vecops::{dot, norm};

const STREAM_DATA: u64 = 0;
const STREAM_TEACHER: u64 = 1;
const STREAM_INIT: u64 = 2;
const STREAM_LABEL_NOISE: u64 = 3;

pub(crate) fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn normals(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// A finite-sum objective `f(x) = (1/n) Σ_i f(x, i)`.
///
/// Batch losses are means over the batch indices.
pub trait Problem: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn n_samples(&self) -> usize;

    /// `f(x, i)`.
    fn sample_loss(&self, x: &[f64], i: usize) -> f64;

    /// Returns `f(x, i)` and adds `weight · ∇f(x, i)` into `grad`.
    fn sample_loss_grad(&self, x: &[f64], i: usize, weight: f64, grad: &mut [f64]) -> f64;

    fn x_star(&self) -> Option<&[f64]> {
        None
    }

    fn f_star(&self) -> Option<f64> {
        None
    }

    fn interpolating(&self) -> bool {
        false
    }

    fn initial_point(&self) -> Vec<f64>;

    fn loss(&self, x: &[f64], batch: &[usize]) -> f64 {
        let total = batch.iter().fold(0.0, |acc, &i| acc + self.sample_loss(x, i));
        total / batch.len() as f64
    }

    fn loss_grad(&self, x: &[f64], batch: &[usize]) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.dim()];
        let w = 1.0 / batch.len() as f64;
        let total = batch
            .iter()
            .fold(0.0, |acc, &i| acc + self.sample_loss_grad(x, i, w, &mut grad));
        (total / batch.len() as f64, grad)
    }

    fn grad(&self, x: &[f64], batch: &[usize]) -> Vec<f64> {
        self.loss_grad(x, batch).1
    }

    fn full_loss(&self, x: &[f64]) -> f64 {
        let all: Vec<usize> = (0..self.n_samples()).collect();
        self.loss(x, &all)
    }

    fn full_loss_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let all: Vec<usize> = (0..self.n_samples()).collect();
        self.loss_grad(x, &all)
    }
}

fn numerical_rank(rows: usize, cols: usize, data: &[f64]) -> usize {
    let m = DMatrix::from_row_slice(rows, cols, data);
    let sv = m.svd(false, false).singular_values;
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let tol = rows.max(cols) as f64 * f64::EPSILON * smax;
    sv.iter().filter(|s| **s > tol).count()
}

/// Rows `a_i`, targets `b_i`, per-sample loss `½(a_iᵀx − b_i)²`.
#[derive(Debug, Clone, PartialEq)]
pub struct LeastSquares {
    n: usize,
    d: usize,
    /// Row-major `n × d`.
    a: Vec<f64>,
    b: Vec<f64>,
    x_star: Vec<f64>,
    f_star: f64,
    interpolating: bool,
    seed_used: u64,
}

const RANK_RETRIES: u64 = 16;

impl LeastSquares {
    /// Gaussian `A` and `x̂`, `b = A x̂`; regenerates with `seed + 1, …` while
    /// `A` is numerically rank deficient.
    pub fn interpolating(n: usize, d: usize, seed: u64) -> Result<Self> {
        Self::generate(n, d, seed, 0.0)
    }

    /// As [`interpolating`](Self::interpolating) but with `b = A x̂ + σ ε`;
    /// `x_star` is the least-squares solution.
    pub fn noisy(n: usize, d: usize, seed: u64, sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0) {
            return Err(invalid("noise", format!("must be non-negative, got {sigma}")));
        }
        Self::generate(n, d, seed, sigma)
    }

    fn generate(n: usize, d: usize, seed: u64, sigma: f64) -> Result<Self> {
        if d == 0 || n < d {
            return Err(invalid("n", format!("need n >= d >= 1, got n = {n}, d = {d}")));
        }
        let mut last_rank = 0;
        for attempt in 0..RANK_RETRIES {
            let s = seed.wrapping_add(attempt);
            let mut rng = rng_for(s, STREAM_DATA);
            let a = normals(&mut rng, n * d);
            let x_hat = normals(&mut rng, d);
            let rank = numerical_rank(n, d, &a);
            if rank < d {
                log::warn!("least-squares seed {s}: rank {rank} < {d}, regenerating");
                last_rank = rank;
                continue;
            }
            let mut b: Vec<f64> = a.chunks_exact(d).map(|row| dot(row, &x_hat)).collect();
            if sigma == 0.0 {
                return Ok(Self {
                    n,
                    d,
                    a,
                    b,
                    x_star: x_hat,
                    f_star: 0.0,
                    interpolating: true,
                    seed_used: s,
                });
            }
            let noise = normals(&mut rng, n);
            for (bi, e) in b.iter_mut().zip(noise) {
                *bi += sigma * e;
            }
            let mut p = Self {
                n,
                d,
                a,
                b,
                x_star: Vec::new(),
                f_star: 0.0,
                interpolating: false,
                seed_used: s,
            };
            p.x_star = p.solve_normal_equations()?;
            p.f_star = p.full_loss(&p.x_star);
            return Ok(p);
        }
        Err(Error::RankDeficient { rank: last_rank, dim: d })
    }

    fn solve_normal_equations(&self) -> Result<Vec<f64>> {
        let a = DMatrix::from_row_slice(self.n, self.d, &self.a);
        let b = DVector::from_column_slice(&self.b);
        let svd = a.svd(true, true);
        let x = svd
            .solve(&b, f64::EPSILON * self.n as f64)
            .map_err(|e| invalid("least-squares", e.to_string()))?;
        Ok(x.iter().copied().collect())
    }

    pub fn seed_used(&self) -> u64 {
        self.seed_used
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.a[i * self.d..(i + 1) * self.d]
    }

    pub fn targets(&self) -> &[f64] {
        &self.b
    }

    pub fn features(&self) -> &[f64] {
        &self.a
    }

    /// Flat binary form; see [`encode_dataset`].
    pub fn to_bytes(&self) -> Vec<u8> {
        encode_dataset(&Dataset {
            kind: DatasetKind::LeastSquares,
            n: self.n,
            d: self.d,
            features: self.a.clone(),
            targets: self.b.clone(),
            extra: self.x_star.clone(),
        })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let ds = decode_dataset(bytes)?;
        if ds.kind != DatasetKind::LeastSquares || ds.extra.len() != ds.d {
            return Err(Error::Format("not a least-squares problem".into()));
        }
        let mut p = Self {
            n: ds.n,
            d: ds.d,
            a: ds.features,
            b: ds.targets,
            x_star: ds.extra,
            f_star: 0.0,
            interpolating: false,
            seed_used: 0,
        };
        p.f_star = p.full_loss(&p.x_star);
        p.interpolating = p.f_star == 0.0;
        Ok(p)
    }
}

impl Problem for LeastSquares {
    fn name(&self) -> &str {
        if self.interpolating {
            "least-squares"
        } else {
            "least-squares-noisy"
        }
    }

    fn dim(&self) -> usize {
        self.d
    }

    fn n_samples(&self) -> usize {
        self.n
    }

    fn sample_loss(&self, x: &[f64], i: usize) -> f64 {
        let r = dot(self.row(i), x) - self.b[i];
        0.5 * r * r
    }

    fn sample_loss_grad(&self, x: &[f64], i: usize, weight: f64, grad: &mut [f64]) -> f64 {
        let row = self.row(i);
        let r = dot(row, x) - self.b[i];
        let s = weight * r;
        for (g, a) in grad.iter_mut().zip(row) {
            *g += s * a;
        }
        0.5 * r * r
    }

    fn x_star(&self) -> Option<&[f64]> {
        Some(&self.x_star)
    }

    fn f_star(&self) -> Option<f64> {
        Some(self.f_star)
    }

    fn interpolating(&self) -> bool {
        self.interpolating
    }

    fn initial_point(&self) -> Vec<f64> {
        vec![0.0; self.d]
    }
}

/// `log(1 + e^{−z})` without overflow.
fn softplus_neg(z: f64) -> f64 {
    if z > 0.0 {
        (-z).exp().ln_1p()
    } else {
        -z + z.exp().ln_1p()
    }
}

/// `1 / (1 + e^{z})`, the derivative of `softplus_neg` up to sign.
fn sigmoid_neg(z: f64) -> f64 {
    if z > 0.0 {
        let e = (-z).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + z.exp())
    }
}

/// Binary logistic regression with labels in `{−1, +1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogReg {
    n: usize,
    d: usize,
    a: Vec<f64>,
    y: Vec<f64>,
    separable: bool,
    x_star: Option<Vec<f64>>,
    f_star: f64,
    separator: Vec<f64>,
}

pub const LOGREG_FLIP_PROB: f64 = 0.1;
pub const NEWTON_TOL: f64 = 1e-10;
pub const NEWTON_BUDGET: usize = 100;

impl LogReg {
    /// Gaussian features, labels from a Gaussian teacher.
    ///
    /// Separable data are labelled by the teacher and the teacher is rescaled
    /// to margin one (available as [`separator`](Self::separator)); there is
    /// no finite minimiser and `f_star = 0`. Otherwise each label is flipped
    /// with probability 0.1 and the minimiser is found by Newton's method.
    pub fn new(n: usize, d: usize, seed: u64, separable: bool) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(invalid("n", format!("need n, d >= 1, got n = {n}, d = {d}")));
        }
        let mut rng = rng_for(seed, STREAM_DATA);
        let a = normals(&mut rng, n * d);
        let w = normals(&mut rng_for(seed, STREAM_TEACHER), d);
        let margins: Vec<f64> = a.chunks_exact(d).map(|row| dot(row, &w)).collect();
        let mut y: Vec<f64> = margins.iter().map(|m| if *m >= 0.0 { 1.0 } else { -1.0 }).collect();
        let min_margin = margins.iter().map(|m| m.abs()).fold(f64::INFINITY, f64::min);
        let separator: Vec<f64> = if min_margin > 0.0 {
            w.iter().map(|v| v / min_margin).collect()
        } else {
            w.clone()
        };

        if separable {
            return Ok(Self {
                n,
                d,
                a,
                y,
                separable,
                x_star: None,
                f_star: 0.0,
                separator,
            });
        }
        let mut flip_rng = rng_for(seed, STREAM_LABEL_NOISE);
        for yi in y.iter_mut() {
            if flip_rng.random::<f64>() < LOGREG_FLIP_PROB {
                *yi = -*yi;
            }
        }
        let mut p = Self {
            n,
            d,
            a,
            y,
            separable,
            x_star: None,
            f_star: 0.0,
            separator,
        };
        let x = p.newton()?;
        p.f_star = p.full_loss(&x);
        p.x_star = Some(x);
        Ok(p)
    }

    pub fn separator(&self) -> &[f64] {
        &self.separator
    }

    pub fn labels(&self) -> &[f64] {
        &self.y
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.a[i * self.d..(i + 1) * self.d]
    }

    fn newton(&self) -> Result<Vec<f64>> {
        let d = self.d;
        let mut x = vec![0.0; d];
        let mut grad_norm = f64::INFINITY;
        for _ in 0..NEWTON_BUDGET {
            let (f, g) = self.full_loss_grad(&x);
            grad_norm = norm(&g);
            if grad_norm <= NEWTON_TOL {
                return Ok(x);
            }
            let mut hess = DMatrix::<f64>::zeros(d, d);
            for i in 0..self.n {
                let row = self.row(i);
                let z = self.y[i] * dot(row, &x);
                let s = sigmoid_neg(z);
                let w = s * (1.0 - s) / self.n as f64;
                for r in 0..d {
                    for c in 0..d {
                        hess[(r, c)] += w * row[r] * row[c];
                    }
                }
            }
            let rhs = DVector::from_column_slice(&g);
            let dir = match hess.clone().cholesky() {
                Some(ch) => ch.solve(&rhs),
                None => hess
                    .lu()
                    .solve(&rhs)
                    .ok_or(Error::SolverNonConvergence {
                        iterations: NEWTON_BUDGET,
                        grad_norm,
                    })?,
            };
            let slope = -dot(&g, dir.as_slice());
            // Decrease below the resolution of f: Armijo cannot see it, take the full step.
            if -slope <= 1e-12 * f.abs().max(1.0) {
                for (xi, di) in x.iter_mut().zip(dir.iter()) {
                    *xi -= di;
                }
                continue;
            }
            let mut t = 1.0;
            loop {
                let trial: Vec<f64> = x.iter().zip(dir.iter()).map(|(xi, di)| xi - t * di).collect();
                if self.full_loss(&trial) <= f + 1e-4 * t * slope || t < 1e-12 {
                    x = trial;
                    break;
                }
                t *= 0.5;
            }
        }
        Err(Error::SolverNonConvergence {
            iterations: NEWTON_BUDGET,
            grad_norm,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut extra = vec![if self.separable { 1.0 } else { 0.0 }];
        extra.extend(self.x_star.iter().flatten());
        encode_dataset(&Dataset {
            kind: DatasetKind::LogReg,
            n: self.n,
            d: self.d,
            features: self.a.clone(),
            targets: self.y.clone(),
            extra,
        })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let ds = decode_dataset(bytes)?;
        if ds.kind != DatasetKind::LogReg || ds.extra.is_empty() {
            return Err(Error::Format("not a logistic-regression problem".into()));
        }
        let separable = ds.extra[0] != 0.0;
        let x_star = (ds.extra.len() == ds.d + 1).then(|| ds.extra[1..].to_vec());
        let mut p = Self {
            n: ds.n,
            d: ds.d,
            a: ds.features,
            y: ds.targets,
            separable,
            x_star,
            f_star: 0.0,
            separator: Vec::new(),
        };
        if let Some(x) = p.x_star.clone() {
            p.f_star = p.full_loss(&x);
        }
        Ok(p)
    }
}

impl Problem for LogReg {
    fn name(&self) -> &str {
        "logreg"
    }

    fn dim(&self) -> usize {
        self.d
    }

    fn n_samples(&self) -> usize {
        self.n
    }

    fn sample_loss(&self, x: &[f64], i: usize) -> f64 {
        softplus_neg(self.y[i] * dot(self.row(i), x))
    }

    fn sample_loss_grad(&self, x: &[f64], i: usize, weight: f64, grad: &mut [f64]) -> f64 {
        let row = self.row(i);
        let z = self.y[i] * dot(row, x);
        let s = -weight * self.y[i] * sigmoid_neg(z);
        for (g, a) in grad.iter_mut().zip(row) {
            *g += s * a;
        }
        softplus_neg(z)
    }

    fn x_star(&self) -> Option<&[f64]> {
        self.x_star.as_deref()
    }

    fn f_star(&self) -> Option<f64> {
        Some(self.f_star)
    }

    fn initial_point(&self) -> Vec<f64> {
        vec![0.0; self.d]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            _ => Err(invalid("activation", format!("expected tanh or relu, got `{s}`"))),
        }
    }
}

/// Fully connected classifier with softmax cross-entropy.
///
/// Parameters are packed layer by layer as `W_l` (row-major, `out × in`)
/// followed by `b_l`. Labels are the argmax of a frozen teacher of the same
/// shape on Gaussian inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<usize>,
    activation: Activation,
    n: usize,
    inputs: Vec<f64>,
    labels: Vec<usize>,
    teacher: Vec<f64>,
    teacher_loss: f64,
    init: Vec<f64>,
}

/// Teacher weights are drawn this many times larger than the student's so
/// that its logits are confident.
const TEACHER_SCALE: f64 = 3.0;

impl Mlp {
    /// `layers = [input, hidden…, classes]`.
    pub fn new(layers: &[usize], n: usize, seed: u64, activation: Activation) -> Result<Self> {
        if layers.len() < 3 {
            return Err(invalid("layers", "need an input size, at least one hidden layer and a class count"));
        }
        if layers.contains(&0) || layers[layers.len() - 1] < 2 || n == 0 {
            return Err(invalid("layers", format!("widths must be positive with >= 2 classes, got {layers:?}")));
        }
        let dim = Self::param_count(layers);
        let inputs = normals(&mut rng_for(seed, STREAM_DATA), n * layers[0]);
        let teacher = Self::random_params(layers, &mut rng_for(seed, STREAM_TEACHER), TEACHER_SCALE);
        let init = Self::random_params(layers, &mut rng_for(seed, STREAM_INIT), 1.0);
        debug_assert_eq!(teacher.len(), dim);
        let mut p = Self {
            layers: layers.to_vec(),
            activation,
            n,
            inputs,
            labels: vec![0; n],
            teacher,
            teacher_loss: 0.0,
            init,
        };
        for i in 0..n {
            let logits = p.forward(&p.teacher, i).0.pop().expect("output layer");
            p.labels[i] = argmax(&logits);
        }
        p.teacher_loss = p.full_loss(&p.teacher);
        Ok(p)
    }

    pub fn param_count(layers: &[usize]) -> usize {
        layers.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
    }

    fn random_params(layers: &[usize], rng: &mut ChaCha8Rng, scale: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(Self::param_count(layers));
        for w in layers.windows(2) {
            let std = scale / (w[0] as f64).sqrt();
            out.extend(normals(rng, w[0] * w[1]).into_iter().map(|v| std * v));
            out.extend(std::iter::repeat_n(0.0, w[1]));
        }
        out
    }

    pub fn classes(&self) -> usize {
        self.layers[self.layers.len() - 1]
    }

    pub fn teacher(&self) -> &[f64] {
        &self.teacher
    }

    /// Full-data loss of the teacher, recorded at construction.
    pub fn teacher_loss(&self) -> f64 {
        self.teacher_loss
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    fn input(&self, i: usize) -> &[f64] {
        let w = self.layers[0];
        &self.inputs[i * w..(i + 1) * w]
    }

    /// Returns activations per layer (input first, logits last) and the
    /// pre-activations of the hidden layers.
    fn forward(&self, params: &[f64], i: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut acts = vec![self.input(i).to_vec()];
        let mut pre = Vec::new();
        let mut offset = 0;
        let last = self.layers.len() - 2;
        for (l, w) in self.layers.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let weights = &params[offset..offset + fan_in * fan_out];
            let bias = &params[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
            offset += fan_in * fan_out + fan_out;
            let prev = acts.last().expect("input present");
            let z: Vec<f64> = (0..fan_out)
                .map(|r| dot(&weights[r * fan_in..(r + 1) * fan_in], prev) + bias[r])
                .collect();
            if l == last {
                acts.push(z);
            } else {
                acts.push(z.iter().map(|v| self.activation.apply(*v)).collect());
                pre.push(z);
            }
        }
        (acts, pre)
    }
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, x)| if *x > best.1 { (i, *x) } else { best })
        .0
}

/// Returns `(−log softmax(z)_label, softmax(z))`.
fn cross_entropy(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = sum.ln() - (logits[label] - m);
    (loss, exps.into_iter().map(|e| e / sum).collect())
}

impl Problem for Mlp {
    fn name(&self) -> &str {
        "mlp"
    }

    fn dim(&self) -> usize {
        Self::param_count(&self.layers)
    }

    fn n_samples(&self) -> usize {
        self.n
    }

    fn sample_loss(&self, x: &[f64], i: usize) -> f64 {
        let (mut acts, _) = self.forward(x, i);
        cross_entropy(&acts.pop().expect("logits"), self.labels[i]).0
    }

    fn sample_loss_grad(&self, x: &[f64], i: usize, weight: f64, grad: &mut [f64]) -> f64 {
        let (acts, pre) = self.forward(x, i);
        let logits = acts.last().expect("logits");
        let (loss, probs) = cross_entropy(logits, self.labels[i]);
        let mut delta = probs;
        delta[self.labels[i]] -= 1.0;

        let mut offsets = Vec::with_capacity(self.layers.len() - 1);
        let mut off = 0;
        for w in self.layers.windows(2) {
            offsets.push(off);
            off += w[0] * w[1] + w[1];
        }
        for l in (0..self.layers.len() - 1).rev() {
            let (fan_in, fan_out) = (self.layers[l], self.layers[l + 1]);
            let o = offsets[l];
            let input = &acts[l];
            for r in 0..fan_out {
                let s = weight * delta[r];
                for c in 0..fan_in {
                    grad[o + r * fan_in + c] += s * input[c];
                }
                grad[o + fan_in * fan_out + r] += s;
            }
            if l == 0 {
                break;
            }
            let weights = &x[o..o + fan_in * fan_out];
            delta = (0..fan_in)
                .map(|c| {
                    let back = (0..fan_out).fold(0.0, |acc, r| acc + weights[r * fan_in + c] * delta[r]);
                    back * self.activation.derivative(pre[l - 1][c], acts[l][c])
                })
                .collect();
        }
        loss
    }

    fn initial_point(&self) -> Vec<f64> {
        self.init.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingMode {
    WithReplacement,
    #[default]
    EpochShuffle,
}

/// Deterministic minibatch indices as a pure function of `(seed, k)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchSampler {
    pub n_samples: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub mode: SamplingMode,
}

/// Offset separating shuffle streams from problem-construction streams.
const SAMPLER_STREAM_BASE: u64 = 1 << 32;

impl BatchSampler {
    pub fn new(n_samples: usize, batch_size: usize, seed: u64, mode: SamplingMode) -> Result<Self> {
        if n_samples == 0 || batch_size == 0 || batch_size > n_samples {
            return Err(invalid(
                "batch_size",
                format!("must lie in 1..={n_samples}, got {batch_size}"),
            ));
        }
        Ok(Self {
            n_samples,
            batch_size,
            seed,
            mode,
        })
    }

    pub fn steps_per_epoch(&self) -> u64 {
        self.n_samples.div_ceil(self.batch_size) as u64
    }

    /// Zero-based epoch of iteration `k ≥ 1`.
    pub fn epoch(&self, k: u64) -> u64 {
        (k.max(1) - 1) / self.steps_per_epoch()
    }

    /// Batch for iteration `k ≥ 1`.
    pub fn sample(&self, k: u64) -> Vec<usize> {
        let k0 = k.max(1) - 1;
        match self.mode {
            SamplingMode::WithReplacement => {
                let mut rng = rng_for(self.seed, SAMPLER_STREAM_BASE + k0);
                (0..self.batch_size).map(|_| rng.random_range(0..self.n_samples)).collect()
            }
            SamplingMode::EpochShuffle => {
                let spe = self.steps_per_epoch();
                let perm = self.permutation(k0 / spe);
                let start = (k0 % spe) as usize * self.batch_size;
                let end = (start + self.batch_size).min(self.n_samples);
                perm[start..end].to_vec()
            }
        }
    }

    /// The shuffle used in epoch `epoch` (zero-based).
    pub fn permutation(&self, epoch: u64) -> Vec<usize> {
        let mut rng = rng_for(self.seed, SAMPLER_STREAM_BASE + epoch);
        let mut perm: Vec<usize> = (0..self.n_samples).collect();
        perm.shuffle(&mut rng);
        perm
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    LeastSquares = 1,
    LogReg = 2,
}

/// Raw contents of a serialized problem.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub kind: DatasetKind,
    pub n: usize,
    pub d: usize,
    /// Row-major `n × d`.
    pub features: Vec<f64>,
    pub targets: Vec<f64>,
    /// Kind-specific trailer (e.g. `x_star`).
    pub extra: Vec<f64>,
}

pub const MAGIC: &[u8; 8] = b"MOMOPRB\0";
pub const FORMAT_VERSION: u32 = 1;

/// Layout, all little-endian:
///
/// ```text
/// magic[8] version:u32 kind:u32 n:u64 d:u64 extra_len:u64
/// features: n·d f64 (row-major)   targets: n f64   extra: extra_len f64
/// ```
pub fn encode_dataset(ds: &Dataset) -> Vec<u8> {
    let floats = ds.features.len() + ds.targets.len() + ds.extra.len();
    let mut out = Vec::with_capacity(40 + 8 * floats);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(ds.kind as u32).to_le_bytes());
    for v in [ds.n, ds.d, ds.extra.len()] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    for v in ds.features.iter().chain(&ds.targets).chain(&ds.extra) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    let fmt = |m: &str| Error::Format(m.to_string());
    if bytes.len() < 40 || &bytes[..8] != MAGIC {
        return Err(fmt("bad magic or truncated header"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
    let version = u32_at(8);
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let kind = match u32_at(12) {
        1 => DatasetKind::LeastSquares,
        2 => DatasetKind::LogReg,
        k => return Err(Error::Format(format!("unknown problem kind {k}"))),
    };
    let to_usize = |v: u64| usize::try_from(v).map_err(|_| fmt("size overflows usize"));
    let (n, d, extra) = (to_usize(u64_at(16))?, to_usize(u64_at(24))?, to_usize(u64_at(32))?);
    let floats = n
        .checked_mul(d)
        .and_then(|nd| nd.checked_add(n))
        .and_then(|v| v.checked_add(extra))
        .ok_or_else(|| fmt("size overflow"))?;
    if bytes.len() != 40 + 8 * floats {
        return Err(Error::Format(format!(
            "body length {} does not match header ({floats} values)",
            bytes.len() - 40
        )));
    }
    let mut vals = bytes[40..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let features: Vec<f64> = vals.by_ref().take(n * d).collect();
    let targets: Vec<f64> = vals.by_ref().take(n).collect();
    let extra: Vec<f64> = vals.collect();
    Ok(Dataset {
        kind,
        n,
        d,
        features,
        targets,
        extra,
    })
}

/// Problem family selector for configs and the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemKind {
    #[default]
    LeastSquares,
    LeastSquaresNoisy,
    Logreg,
    Mlp,
}

impl ProblemKind {
    pub fn name(&self) -> &'static str {
        match self {
            ProblemKind::LeastSquares => "least-squares",
            ProblemKind::LeastSquaresNoisy => "least-squares-noisy",
            ProblemKind::Logreg => "logreg",
            ProblemKind::Mlp => "mlp",
        }
    }
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ProblemKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            ProblemKind::LeastSquares,
            ProblemKind::LeastSquaresNoisy,
            ProblemKind::Logreg,
            ProblemKind::Mlp,
        ]
        .into_iter()
        .find(|k| k.name() == s)
        .ok_or_else(|| invalid("problem", format!("unknown problem `{s}`")))
    }
}

/// Everything needed to rebuild a problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    pub n: usize,
    pub d: usize,
    pub seed: u64,
    /// Label noise for `least-squares-noisy`.
    pub noise: f64,
    pub separable: bool,
    /// Hidden widths for `mlp`; `d` is the input width.
    pub hidden: Vec<usize>,
    pub classes: usize,
    pub activation: Activation,
}

impl Default for ProblemSpec {
    fn default() -> Self {
        Self {
            kind: ProblemKind::LeastSquares,
            n: 200,
            d: 10,
            seed: 0,
            noise: 0.1,
            separable: false,
            hidden: vec![16],
            classes: 3,
            activation: Activation::Tanh,
        }
    }
}

impl ProblemSpec {
    pub fn build(&self) -> Result<Box<dyn Problem>> {
        Ok(match self.kind {
            ProblemKind::LeastSquares => Box::new(LeastSquares::interpolating(self.n, self.d, self.seed)?),
            ProblemKind::LeastSquaresNoisy => Box::new(LeastSquares::noisy(self.n, self.d, self.seed, self.noise)?),
            ProblemKind::Logreg => Box::new(LogReg::new(self.n, self.d, self.seed, self.separable)?),
            ProblemKind::Mlp => {
                let mut layers = vec![self.d];
                layers.extend(&self.hidden);
                layers.push(self.classes);
                Box::new(Mlp::new(&layers, self.n, self.seed, self.activation)?)
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::fd_gradient;

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        norm(&diff) / norm(b).max(1e-12)
    }

    #[test]
    fn least_squares_optimum() {
        let p = LeastSquares::interpolating(200, 10, 7).unwrap();
        let xs = p.x_star().unwrap().to_vec();
        assert_eq!(p.f_star(), Some(0.0));
        assert!(p.interpolating());
        for i in 0..p.n_samples() {
            assert!(p.sample_loss(&xs, i) < 1e-24);
        }
        let (_, g) = p.full_loss_grad(&xs);
        assert!(norm(&g) < 1e-10);
    }

    #[test]
    fn least_squares_is_pure() {
        let a = LeastSquares::interpolating(50, 5, 3).unwrap();
        let b = LeastSquares::interpolating(50, 5, 3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, LeastSquares::interpolating(50, 5, 4).unwrap());
    }

    #[test]
    fn least_squares_rejects_wide() {
        assert!(LeastSquares::interpolating(5, 10, 0).is_err());
    }

    #[test]
    fn noisy_least_squares_is_stationary() {
        let p = LeastSquares::noisy(100, 6, 1, 0.5).unwrap();
        assert!(!p.interpolating());
        assert!(p.f_star().unwrap() > 0.0);
        let (_, g) = p.full_loss_grad(p.x_star().unwrap());
        assert!(norm(&g) < 1e-10);
    }

    #[test]
    fn logreg_at_origin_is_log_two() {
        for sep in [true, false] {
            let p = LogReg::new(40, 4, 2, sep).unwrap();
            for i in 0..40 {
                assert!((p.sample_loss(&[0.0; 4], i) - 2f64.ln()).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn logreg_separable_loss_vanishes() {
        let p = LogReg::new(100, 5, 4, true).unwrap();
        let sep = p.separator().to_vec();
        for i in 0..100 {
            assert!(p.labels()[i] * dot(p.row(i), &sep) >= 1.0 - 1e-12);
        }
        let mut prev = f64::INFINITY;
        for t in [1.0, 10.0, 100.0] {
            let x: Vec<f64> = sep.iter().map(|v| t * v).collect();
            let f = p.full_loss(&x);
            assert!(f < prev);
            prev = f;
        }
        assert!(prev < 1e-30);
        assert!(p.x_star().is_none());
        assert_eq!(p.f_star(), Some(0.0));
    }

    #[test]
    fn logreg_newton_solution() {
        let p = LogReg::new(200, 10, 5, false).unwrap();
        let (_, g) = p.full_loss_grad(p.x_star().unwrap());
        assert!(norm(&g) <= NEWTON_TOL);
        assert!(p.f_star().unwrap() > 0.0);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let ls = LeastSquares::interpolating(30, 4, 1).unwrap();
        let lr = LogReg::new(30, 4, 1, false).unwrap();
        let problems: [&dyn Problem; 2] = [&ls, &lr];
        let mut rng = rng_for(99, 0);
        for p in problems {
            for _ in 0..10 {
                let x = normals(&mut rng, p.dim());
                let batch = [0, 3, 7];
                let g = p.grad(&x, &batch);
                let fd = fd_gradient(p, &x, &batch, 1e-6);
                assert!(rel_err(&fd, &g) < 1e-5, "{}: {}", p.name(), rel_err(&fd, &g));
            }
        }
    }

    #[test]
    fn mlp_gradient_and_baselines() {
        let p = Mlp::new(&[4, 6, 5, 3], 40, 11, Activation::Tanh).unwrap();
        assert_eq!(p.dim(), 4 * 6 + 6 + 6 * 5 + 5 + 5 * 3 + 3);
        let zero = vec![0.0; p.dim()];
        assert!((p.full_loss(&zero) - 3f64.ln()).abs() < 1e-15);
        assert!(p.teacher_loss() < 3f64.ln());
        let mut rng = rng_for(5, 0);
        for _ in 0..5 {
            let x = normals(&mut rng, p.dim());
            let g = p.grad(&x, &[0, 1, 2, 3]);
            let fd = fd_gradient(&p, &x, &[0, 1, 2, 3], 1e-6);
            assert!(rel_err(&fd, &g) < 1e-4);
        }
    }

    #[test]
    fn mlp_rejects_missing_hidden_layer() {
        assert!(Mlp::new(&[4, 3], 10, 0, Activation::Tanh).is_err());
        assert!(Mlp::new(&[4, 5, 1], 10, 0, Activation::Tanh).is_err());
    }

    #[test]
    fn sampler_partition_and_determinism() {
        let s = BatchSampler::new(23, 5, 8, SamplingMode::EpochShuffle).unwrap();
        assert_eq!(s.steps_per_epoch(), 5);
        let mut seen: Vec<usize> = (1..=5).flat_map(|k| s.sample(k)).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..23).collect::<Vec<_>>());
        assert_eq!(s.epoch(5), 0);
        assert_eq!(s.epoch(6), 1);
        let again = BatchSampler::new(23, 5, 8, SamplingMode::EpochShuffle).unwrap();
        for k in 1..30 {
            assert_eq!(s.sample(k), again.sample(k));
        }
        let full = BatchSampler::new(10, 10, 1, SamplingMode::EpochShuffle).unwrap();
        let mut b = full.sample(3);
        b.sort_unstable();
        assert_eq!(b, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn sampler_with_replacement_in_range() {
        let s = BatchSampler::new(7, 4, 2, SamplingMode::WithReplacement).unwrap();
        for k in 1..50 {
            let b = s.sample(k);
            assert_eq!(b.len(), 4);
            assert!(b.iter().all(|&i| i < 7));
            assert_eq!(b, s.sample(k));
        }
        assert!(BatchSampler::new(7, 8, 2, SamplingMode::WithReplacement).is_err());
    }

    #[test]
    fn serialization_round_trip() {
        let p = LeastSquares::interpolating(20, 3, 6).unwrap();
        let q = LeastSquares::from_bytes(&p.to_bytes()).unwrap();
        assert_eq!(q.features(), p.features());
        assert_eq!(q.targets(), p.targets());
        assert_eq!(q.x_star(), p.x_star());
        let lr = LogReg::new(20, 3, 6, false).unwrap();
        let back = LogReg::from_bytes(&lr.to_bytes()).unwrap();
        assert_eq!(back.x_star(), lr.x_star());
        assert_eq!(back.labels(), lr.labels());

        let mut bad = p.to_bytes();
        bad[0] = b'X';
        assert!(matches!(LeastSquares::from_bytes(&bad), Err(Error::Format(_))));
        let short = &p.to_bytes()[..50];
        assert!(matches!(decode_dataset(short), Err(Error::Format(_))));
        assert!(LogReg::from_bytes(&p.to_bytes()).is_err());
    }

    #[test]
    fn spec_builds_every_kind() {
        for kind in [
            ProblemKind::LeastSquares,
            ProblemKind::LeastSquaresNoisy,
            ProblemKind::Logreg,
            ProblemKind::Mlp,
        ] {
            let spec = ProblemSpec {
                kind,
                n: 30,
                d: 4,
                ..ProblemSpec::default()
            };
            let p = spec.build().unwrap();
            assert_eq!(p.name(), kind.name());
            assert_eq!(p.initial_point().len(), p.dim());
            assert!(p.full_loss(&p.initial_point()).is_finite());
            assert_eq!(kind.name().parse::<ProblemKind>().unwrap(), kind);
        }
    }
}
