//! Flat parameter storage with named groups, dense-layer kernels and Adam.
//!
//! Values are held in f64 for computation but rounded to f32 after
//! initialization and after every optimizer step, so a 32-bit checkpoint
//! restores them exactly.

use std::ops::Range;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    pub name: String,
    pub shape: Vec<usize>,
    pub range: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    pub groups: Vec<Group>,
    pub values: Vec<f64>,
}

impl ParamStore {
    /// Appends a zero-filled group and returns its range.
    pub fn add(&mut self, name: &str, shape: &[usize]) -> Range<usize> {
        let len: usize = shape.iter().product();
        let range = self.values.len()..self.values.len() + len;
        self.values.resize(range.end, 0.0);
        self.groups.push(Group {
            name: name.to_string(),
            shape: shape.to_vec(),
            range: range.clone(),
        });
        range
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn group(&self, name: &str) -> Option<&Group> {
        self.groups.iter().find(|g| g.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.group(name).map(|g| &self.values[g.range.clone()])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let r = self.group(name)?.range.clone();
        Some(&mut self.values[r])
    }

    /// Gaussian fill with standard deviation `scale`.
    pub fn randn(&mut self, range: Range<usize>, scale: f64, rng: &mut impl Rng) {
        for v in &mut self.values[range] {
            let n: f64 = StandardNormal.sample(rng);
            *v = n * scale;
        }
    }

    pub fn fill(&mut self, range: Range<usize>, v: f64) {
        self.values[range].iter_mut().for_each(|x| *x = v);
    }

    pub fn quantize(&mut self) {
        quantize(&mut self.values);
    }

    /// Copies values from `other`, requiring identical group names and shapes.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<()> {
        if self.groups.len() != other.groups.len() {
            return Err(Error::Shape(format!(
                "expected {} parameter groups, found {}",
                self.groups.len(),
                other.groups.len()
            )));
        }
        for (a, b) in self.groups.iter().zip(&other.groups) {
            if a.name != b.name || a.shape != b.shape {
                return Err(Error::Shape(format!(
                    "group {} {:?} does not match {} {:?}",
                    a.name, a.shape, b.name, b.shape
                )));
            }
        }
        self.values.copy_from_slice(&other.values);
        Ok(())
    }
}

pub fn quantize(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = *x as f32 as f64);
}

/// `y = W x + b` with `W` stored row-major as `[out][in]`.
pub fn affine(w: &[f64], b: Option<&[f64]>, x: &[f64], y: &mut [f64]) {
    let n_in = x.len();
    debug_assert_eq!(w.len(), y.len() * n_in);
    for (o, yo) in y.iter_mut().enumerate() {
        let row = &w[o * n_in..(o + 1) * n_in];
        let mut acc = b.map_or(0.0, |b| b[o]);
        for (wi, xi) in row.iter().zip(x) {
            acc += wi * xi;
        }
        *yo = acc;
    }
}

/// Accumulates `dW += dy xᵀ` and, if given, `dx += Wᵀ dy`.
pub fn affine_backward(w: &[f64], x: &[f64], dy: &[f64], dw: &mut [f64], dx: Option<&mut [f64]>) {
    let n_in = x.len();
    for (o, &g) in dy.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        let row = &mut dw[o * n_in..(o + 1) * n_in];
        for (r, xi) in row.iter_mut().zip(x) {
            *r += g * xi;
        }
    }
    if let Some(dx) = dx {
        for (o, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let row = &w[o * n_in..(o + 1) * n_in];
            for (d, wi) in dx.iter_mut().zip(row) {
                *d += g * wi;
            }
        }
    }
}

pub fn relu_inplace(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = x.max(0.0));
}

/// Zeroes gradient entries whose forward activation was clipped.
pub fn relu_mask(pre_or_post: &[f64], grad: &mut [f64]) {
    for (g, &a) in grad.iter_mut().zip(pre_or_post) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub fn softplus_inverse(y: f64) -> f64 {
    y.exp_m1().ln()
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= s);
    p
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    /// One update; parameters are re-rounded to f32 afterwards.
    pub fn update(&mut self, params: &mut [f64], grad: &[f64]) {
        self.step += 1;
        let b1t = 1.0 - self.beta1.powi(self.step as i32);
        let b2t = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / b1t;
            let vh = self.v[i] / b2t;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
        quantize(params);
    }
}
