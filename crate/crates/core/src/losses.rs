//! Training objectives and their gradients.

use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::grid::Grid;
use crate::nn::sigmoid;
use crate::raster::HeatmapSequence;
use crate::util::sig6;

/// Floor applied to every log argument.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    /// Penetration.
    pub zeta: f64,
    /// Inconsistency.
    pub eta: f64,
    /// Dispersion.
    pub mu: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            zeta: 1.0,
            eta: 0.1,
            mu: 0.01,
        }
    }
}

impl LossWeights {
    pub const NONE: LossWeights = LossWeights {
        zeta: 0.0,
        eta: 0.0,
        mu: 0.0,
    };
}

/// Unweighted loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossTerms {
    /// Reconstruction log-likelihood (≤ 0 for normalized targets).
    pub recon: f64,
    pub kl: f64,
    pub ce: f64,
    pub penetration: f64,
    pub inconsistency: f64,
    pub dispersion: f64,
}

impl LossTerms {
    pub fn add(&mut self, o: &LossTerms) {
        self.recon += o.recon;
        self.kl += o.kl;
        self.ce += o.ce;
        self.penetration += o.penetration;
        self.inconsistency += o.inconsistency;
        self.dispersion += o.dispersion;
    }

    pub fn scale(&self, s: f64) -> LossTerms {
        LossTerms {
            recon: self.recon * s,
            kl: self.kl * s,
            ce: self.ce * s,
            penetration: self.penetration * s,
            inconsistency: self.inconsistency * s,
            dispersion: self.dispersion * s,
        }
    }

    fn named(&self) -> [(&'static str, f64); 6] {
        [
            ("recon", self.recon),
            ("kl", self.kl),
            ("ce", self.ce),
            ("penetration", self.penetration),
            ("inconsistency", self.inconsistency),
            ("dispersion", self.dispersion),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub terms: LossTerms,
    pub total: f64,
    pub weights: LossWeights,
}

impl LossBreakdown {
    pub fn compose(terms: LossTerms, weights: LossWeights) -> Result<LossBreakdown> {
        Ok(LossBreakdown {
            total: total_loss(&terms, &weights)?,
            terms,
            weights,
        })
    }

    /// One training-log line.
    pub fn log_line(&self, step: u64, wall_ms: u128) -> String {
        let t = &self.terms;
        format!(
            "step {step} recon {} kl {} ce {} penetration {} inconsistency {} dispersion {} total {} ms {wall_ms}",
            sig6(t.recon),
            sig6(t.kl),
            sig6(t.ce),
            sig6(t.penetration),
            sig6(t.inconsistency),
            sig6(t.dispersion),
            sig6(self.total)
        )
    }
}

/// `(kl − recon) + ce + ζ·pen + η·incon + μ·disp`; a non-finite term is
/// reported by name.
pub fn total_loss(t: &LossTerms, w: &LossWeights) -> Result<f64> {
    if let Some((name, _)) = t.named().iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFinite {
            term: name.to_string(),
            step: 0,
        });
    }
    Ok((t.kl - t.recon) + t.ce + w.zeta * t.penetration + w.eta * t.inconsistency + w.mu * t.dispersion)
}

/// KL(N(mu, diag(exp(logvar))) ‖ N(0, I)).
pub fn kl_unit_gaussian(mu: &[f64], logvar: &[f64]) -> f64 {
    0.5 * mu
        .iter()
        .zip(logvar)
        .map(|(m, lv)| lv.exp() + m * m - 1.0 - lv)
        .sum::<f64>()
}

/// Gradients of `kl_unit_gaussian` with respect to mu and logvar.
pub fn kl_grad(mu: &[f64], logvar: &[f64]) -> (Vec<f64>, Vec<f64>) {
    (mu.to_vec(), logvar.iter().map(|lv| 0.5 * (lv.exp() - 1.0)).collect())
}

/// `Σ_t Σ_j target·log(pred + floor)`.
pub fn recon_loglik(pred: &HeatmapSequence, target: &HeatmapSequence) -> Result<f64> {
    check_same(pred, target)?;
    let mut s = 0.0;
    for (p, t) in pred.maps.iter().zip(&target.maps) {
        for (pv, tv) in p.data.iter().zip(&t.data) {
            if *tv != 0.0 {
                s += tv * (pv + LOG_FLOOR).ln();
            }
        }
    }
    Ok(s)
}

/// Gradient of `recon_loglik` with respect to the predicted grids.
pub fn recon_grad(pred: &HeatmapSequence, target: &HeatmapSequence) -> Result<Vec<Grid<f64>>> {
    check_same(pred, target)?;
    Ok(pred
        .maps
        .iter()
        .zip(&target.maps)
        .map(|(p, t)| {
            Grid::from_vec(p.h, p.w, p.data.iter().zip(&t.data).map(|(pv, tv)| tv / (pv + LOG_FLOOR)).collect())
        })
        .collect())
}

fn check_same(a: &HeatmapSequence, b: &HeatmapSequence) -> Result<()> {
    let same = a.maps.len() == b.maps.len() && a.maps.iter().zip(&b.maps).all(|(x, y)| x.h == y.h && x.w == y.w);
    if same {
        Ok(())
    } else {
        Err(Error::Shape(format!(
            "heatmap sequences differ in shape ({} vs {} steps)",
            a.maps.len(),
            b.maps.len()
        )))
    }
}

/// `−log S_g` for a 1-based zone id.
pub fn intention_ce(probs: &[f64], true_g: usize) -> Result<f64> {
    if true_g == 0 || true_g > probs.len() {
        return Err(Error::Range(format!("zone {true_g} outside 1..={}", probs.len())));
    }
    Ok(-probs[true_g - 1].max(LOG_FLOOR).ln())
}

/// Threshold on pixel likelihood: half of the uniform level over `j` pixels.
pub fn eps_b(j: usize) -> f64 {
    0.5 / j as f64
}

pub fn b_hard(p: f64, eps: f64) -> f64 {
    if p > eps {
        1.0
    } else {
        0.0
    }
}

/// Smooth stand-in for the threshold: `σ(p/ε − 1) − σ(−1)`, zero at p = 0.
pub fn b_soft(p: f64, eps: f64) -> f64 {
    sigmoid(p / eps - 1.0) - sigmoid(-1.0)
}

pub fn b_soft_grad(p: f64, eps: f64) -> f64 {
    let s = sigmoid(p / eps - 1.0);
    s * (1.0 - s) / eps
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Threshold {
    Hard,
    Soft,
}

/// `(1/δ) Σ_t Σ_j D_j B(Ĥ_tj)`.
pub fn penetration(pred: &HeatmapSequence, mask: &Grid<u8>, eps: f64, mode: Threshold) -> Result<f64> {
    if pred.maps.iter().any(|m| m.h != mask.h || m.w != mask.w) {
        return Err(Error::Shape("mask and heatmaps differ in size".into()));
    }
    if pred.maps.is_empty() {
        return Ok(0.0);
    }
    let b = match mode {
        Threshold::Hard => b_hard,
        Threshold::Soft => b_soft,
    };
    let mut s = 0.0;
    for m in &pred.maps {
        for (p, d) in m.data.iter().zip(&mask.data) {
            if *d != 0 {
                s += b(*p, eps);
            }
        }
    }
    Ok(s / pred.maps.len() as f64)
}

/// Gradient of the soft penetration with respect to each predicted grid.
pub fn penetration_grad(pred: &HeatmapSequence, mask: &Grid<u8>, eps: f64) -> Vec<Grid<f64>> {
    let inv = 1.0 / pred.maps.len().max(1) as f64;
    pred.maps
        .iter()
        .map(|m| {
            let data = m
                .data
                .iter()
                .zip(&mask.data)
                .map(|(p, d)| if *d != 0 { inv * b_soft_grad(*p, eps) } else { 0.0 })
                .collect();
            Grid::from_vec(m.h, m.w, data)
        })
        .collect()
}

/// Distance of `x` outside the interval spanned by `a` and `b`.
pub fn range_penalty(a: f64, x: f64, b: f64) -> f64 {
    (a.min(b) - x).max(0.0) + (x - a.max(b)).max(0.0)
}

/// Mean range penalty over interior points of a speed series.
pub fn inconsistency(v: &[f64]) -> Result<f64> {
    if v.len() < 3 {
        return Err(Error::Range(format!("speed series of length {} needs at least 3", v.len())));
    }
    let n = v.len() - 2;
    Ok((1..=n).map(|t| range_penalty(v[t - 1], v[t], v[t + 1])).sum::<f64>() / n as f64)
}

pub fn inconsistency_grad(v: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; v.len()];
    if v.len() < 3 {
        return g;
    }
    let n = v.len() - 2;
    let w = 1.0 / n as f64;
    for t in 1..=n {
        let (a, x, b) = (v[t - 1], v[t], v[t + 1]);
        let (lo, hi) = if a <= b { (t - 1, t + 1) } else { (t + 1, t - 1) };
        if x < v[lo] {
            g[t] -= w;
            g[lo] += w;
        } else if x > v[hi] {
            g[t] += w;
            g[hi] -= w;
        }
    }
    g
}

/// Population variance.
pub fn dispersion(d: &[f64]) -> f64 {
    if d.is_empty() {
        return 0.0;
    }
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    d.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n
}

pub fn dispersion_grad(d: &[f64]) -> Vec<f64> {
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    d.iter().map(|x| 2.0 * (x - mean) / n).collect()
}

/// Per-frame speeds: from the last observation to the first prediction, then
/// between consecutive predictions.
pub fn velocities_from_points(anchor: Vec2, pts: &[Vec2]) -> Vec<f64> {
    let mut prev = anchor;
    pts.iter()
        .map(|p| {
            let v = p.dist(prev);
            prev = *p;
            v
        })
        .collect()
}

pub fn distance_errors(pred: &[Vec2], truth: &[Vec2]) -> Vec<f64> {
    pred.iter().zip(truth).map(|(p, t)| p.dist(*t)).collect()
}

fn unit(v: Vec2) -> Vec2 {
    let n = v.norm();
    if n > 0.0 {
        v * (1.0 / n)
    } else {
        Vec2::ZERO
    }
}

/// Inconsistency and dispersion on decoded points, plus the weighted gradient
/// `η·∂incon/∂pts + μ·∂disp/∂pts`. The speed series starts with `v0`, the
/// last observed speed, followed by the δ predicted speeds.
pub fn point_penalties(
    anchor: Vec2,
    v0: f64,
    pts: &[Vec2],
    truth: &[Vec2],
    eta: f64,
    mu: f64,
) -> Result<(f64, f64, Vec<Vec2>)> {
    let mut v = vec![v0];
    v.extend(velocities_from_points(anchor, pts));
    let incon = inconsistency(&v)?;
    let dv = &inconsistency_grad(&v)[1..];
    let d = distance_errors(pts, truth);
    let disp = dispersion(&d);
    let dd = dispersion_grad(&d);
    let mut g = vec![Vec2::ZERO; pts.len()];
    let mut prev = anchor;
    for k in 0..pts.len() {
        let u = unit(pts[k] - prev) * (eta * dv[k]);
        g[k] = g[k] + u;
        if k > 0 {
            g[k - 1] = g[k - 1] - u;
        }
        prev = pts[k];
        g[k] = g[k] + unit(pts[k] - truth[k]) * (mu * dd[k]);
    }
    Ok((incon, disp, g))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_default() {
        let w = LossWeights::default();
        assert_eq!((w.zeta, w.eta, w.mu), (1.0, 0.1, 0.01));
    }

    #[test]
    fn total_names_bad_term() {
        let t = LossTerms {
            dispersion: f64::NAN,
            ..Default::default()
        };
        match total_loss(&t, &LossWeights::default()) {
            Err(Error::NonFinite { term, .. }) => assert_eq!(term, "dispersion"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn inconsistency_grad_matches_differences() {
        let v = [1.0, 2.5, 0.7, 3.1, 3.0, 0.2];
        let g = inconsistency_grad(&v);
        for i in 0..v.len() {
            let mut a = v;
            let mut b = v;
            a[i] += 1e-6;
            b[i] -= 1e-6;
            let fd = (inconsistency(&a).unwrap() - inconsistency(&b).unwrap()) / 2e-6;
            assert!((fd - g[i]).abs() < 1e-6, "{i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn point_penalty_grad_matches_differences() {
        let anchor = Vec2::new(0.1, -0.2);
        let pts = vec![Vec2::new(1.0, 0.3), Vec2::new(2.3, 0.1), Vec2::new(2.9, 1.2), Vec2::new(4.4, 1.0)];
        let truth = vec![Vec2::new(1.1, 0.0), Vec2::new(2.0, 0.5), Vec2::new(3.0, 0.8), Vec2::new(4.5, 1.9)];
        let f = |p: &[Vec2]| {
            let (i, d, _) = point_penalties(anchor, 0.9, p, &truth, 0.7, 0.3).unwrap();
            0.7 * i + 0.3 * d
        };
        let (_, _, g) = point_penalties(anchor, 0.9, &pts, &truth, 0.7, 0.3).unwrap();
        for k in 0..pts.len() {
            for axis in 0..2 {
                let mut a = pts.clone();
                let mut b = pts.clone();
                let h = Vec2::new(if axis == 0 { 1e-6 } else { 0.0 }, if axis == 1 { 1e-6 } else { 0.0 });
                a[k] = a[k] + h;
                b[k] = b[k] - h;
                let fd = (f(&a) - f(&b)) / 2e-6;
                let an = if axis == 0 { g[k].x } else { g[k].y };
                assert!((fd - an).abs() < 1e-6, "{k}/{axis}: {fd} vs {an}");
            }
        }
    }

    #[test]
    fn soft_threshold_shape() {
        let eps = eps_b(100);
        assert_eq!(b_soft(0.0, eps), 0.0);
        assert!(b_soft(10.0 * eps, eps) > b_soft(eps, eps));
        let fd = (b_soft(0.005 + 1e-8, eps) - b_soft(0.005 - 1e-8, eps)) / 2e-8;
        assert!((b_soft_grad(0.005, eps) - fd).abs() < 1e-5 * fd.abs());
    }
}
