//! Displacement metrics, intention mAP, penetration audit and the
//! constant-velocity baseline.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::grid::{Grid, GridSpec};

/// Evaluation horizons in frames (1–4 s at 10 Hz).
pub const HORIZONS: [usize; 4] = [10, 20, 30, 40];

fn check_horizon(pred: &[Vec2], truth: &[Vec2], h: usize) -> Result<()> {
    if h == 0 {
        return Err(Error::Range("horizon must be at least 1".into()));
    }
    if h > pred.len() || h > truth.len() {
        return Err(Error::Range(format!(
            "horizon {h} exceeds trajectory length {}",
            pred.len().min(truth.len())
        )));
    }
    Ok(())
}

/// Mean Euclidean error over the first `h` steps.
pub fn ade(pred: &[Vec2], truth: &[Vec2], h: usize) -> Result<f64> {
    check_horizon(pred, truth, h)?;
    Ok(pred[..h].iter().zip(truth).map(|(p, t)| p.dist(*t)).sum::<f64>() / h as f64)
}

/// Error at step `h`.
pub fn fde(pred: &[Vec2], truth: &[Vec2], h: usize) -> Result<f64> {
    check_horizon(pred, truth, h)?;
    Ok(pred[h - 1].dist(truth[h - 1]))
}

/// Smallest ADE over samples and the first index attaining it.
pub fn min_ade_over_samples(samples: &[Vec<Vec2>], truth: &[Vec2], h: usize) -> Result<(f64, usize)> {
    min_over(samples, |s| ade(s, truth, h))
}

pub fn min_fde_over_samples(samples: &[Vec<Vec2>], truth: &[Vec2], h: usize) -> Result<(f64, usize)> {
    min_over(samples, |s| fde(s, truth, h))
}

fn min_over(samples: &[Vec<Vec2>], f: impl Fn(&[Vec2]) -> Result<f64>) -> Result<(f64, usize)> {
    if samples.is_empty() {
        return Err(Error::Range("need at least one sample".into()));
    }
    let mut best = (f64::INFINITY, 0);
    for (i, s) in samples.iter().enumerate() {
        let v = f(s)?;
        if v < best.0 {
            best = (v, i);
        }
    }
    Ok(best)
}

/// Ranked average precision: Σ (R_k − R_{k−1})·P_k over distinct score
/// thresholds, highest first. `None` without positives.
pub fn average_precision(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let total = positive.iter().filter(|p| **p).count();
    if total == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(std::cmp::Ordering::Equal));
    let (mut tp, mut seen, mut ap, mut prev_recall) = (0usize, 0usize, 0.0, 0.0);
    let mut k = 0;
    while k < order.len() {
        let s = scores[order[k]];
        while k < order.len() && scores[order[k]] == s {
            tp += usize::from(positive[order[k]]);
            seen += 1;
            k += 1;
        }
        let recall = tp as f64 / total as f64;
        ap += (recall - prev_recall) * tp as f64 / seen as f64;
        prev_recall = recall;
    }
    Some(ap)
}

/// Per-zone AP from the predicted zone probabilities, averaged over zones
/// that occur in `truths` (1-based).
pub fn intention_map(dists: &[Vec<f64>], truths: &[usize]) -> Result<f64> {
    if dists.is_empty() || dists.len() != truths.len() {
        return Err(Error::Range(format!(
            "{} distributions for {} truths",
            dists.len(),
            truths.len()
        )));
    }
    let g = dists[0].len();
    let mut aps = Vec::new();
    for zone in 1..=g {
        let scores: Vec<f64> = dists.iter().map(|d| d[zone - 1]).collect();
        let pos: Vec<bool> = truths.iter().map(|t| *t == zone).collect();
        if let Some(ap) = average_precision(&scores, &pos) {
            aps.push(ap);
        }
    }
    Ok(aps.iter().sum::<f64>() / aps.len().max(1) as f64)
}

/// Number of points on non-drivable cells (points off the raster count as
/// off-road) and the number of points.
pub fn offroad_counts(trajs: &[Vec<Vec2>], mask: &Grid<u8>, spec: &GridSpec) -> (usize, usize) {
    let mut off = 0;
    let mut n = 0;
    for p in trajs.iter().flatten() {
        n += 1;
        off += usize::from(spec.cell_of(*p).is_none_or(|(r, c)| mask.get(r, c) != 0));
    }
    (off, n)
}

pub fn penetration_rate(trajs: &[Vec<Vec2>], mask: &Grid<u8>, spec: &GridSpec) -> f64 {
    let (off, n) = offroad_counts(trajs, mask, spec);
    if n == 0 {
        0.0
    } else {
        off as f64 / n as f64
    }
}

/// Extrapolates the last per-frame displacement for `delta` steps.
pub fn const_vel_predict(past: &[Vec2], delta: usize) -> Result<Vec<Vec2>> {
    let n = past.len();
    if n < 2 {
        return Err(Error::Range(format!("need at least 2 past points, got {n}")));
    }
    let v = past[n - 1] - past[n - 2];
    Ok((1..=delta).map(|k| past[n - 1] + v * k as f64).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol {
    Single,
    Multi,
}

impl std::fmt::Display for Protocol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Protocol::Single => "single",
            Protocol::Multi => "multi",
        })
    }
}

impl std::str::FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(Protocol::Single),
            "multi" => Ok(Protocol::Multi),
            _ => Err(Error::Config(format!("unknown protocol {s:?} (single, multi)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HorizonMetrics {
    pub frames: usize,
    pub ade: f64,
    pub fde: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub protocol: Protocol,
    pub samples: usize,
    pub agents: usize,
    pub horizons: Vec<HorizonMetrics>,
    /// Independent min-FDE per horizon (multi protocol only).
    pub min_fde: Option<Vec<f64>>,
    pub intention_map: Option<f64>,
    pub intention_accuracy: Option<f64>,
    pub penetration_rate: f64,
}

impl EvalReport {
    /// Human-readable table.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "protocol {} S={} agents={}", self.protocol, self.samples, self.agents);
        let _ = writeln!(s, "{:>8} {:>16}", "horizon", "ADE / FDE (m)");
        for h in &self.horizons {
            let _ = writeln!(s, "{:>7}s {:>7.2} / {:<7.2}", h.frames / 10, h.ade, h.fde);
        }
        if let Some(m) = self.intention_map {
            let _ = writeln!(s, "intention mAP {:.1}%", 100.0 * m);
        }
        if let Some(a) = self.intention_accuracy {
            let _ = writeln!(s, "intention accuracy {:.1}%", 100.0 * a);
        }
        let _ = writeln!(s, "penetration rate {:.4}", self.penetration_rate);
        s
    }

    /// `key = value` lines.
    pub fn record(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "protocol = {}", self.protocol);
        let _ = writeln!(s, "samples = {}", self.samples);
        let _ = writeln!(s, "agents = {}", self.agents);
        for (i, h) in self.horizons.iter().enumerate() {
            let sec = h.frames / 10;
            let _ = writeln!(s, "ade_{sec}s = {:.2}", h.ade);
            let _ = writeln!(s, "fde_{sec}s = {:.2}", h.fde);
            if let Some(m) = &self.min_fde {
                let _ = writeln!(s, "min_fde_{sec}s = {:.2}", m[i]);
            }
        }
        if let Some(m) = self.intention_map {
            let _ = writeln!(s, "intention_map = {m:.4}");
        }
        if let Some(a) = self.intention_accuracy {
            let _ = writeln!(s, "intention_accuracy = {a:.4}");
        }
        let _ = writeln!(s, "penetration_rate = {:.6}", self.penetration_rate);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(n: usize, dy: f64) -> Vec<Vec2> {
        (0..n).map(|i| Vec2::new(i as f64, dy)).collect()
    }

    #[test]
    fn ade_fde_examples() {
        let t = line(4, 0.0);
        assert_eq!(ade(&t, &t, 4).unwrap(), 0.0);
        let off: Vec<Vec2> = t.iter().map(|p| *p + Vec2::new(1.0, 1.0)).collect();
        assert!((ade(&off, &t, 3).unwrap() - 2f64.sqrt()).abs() < 1e-12);
        let p = vec![Vec2::new(0.0, 0.0), Vec2::new(1.0, 2.0)];
        let q = vec![Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0)];
        assert_eq!(ade(&p, &q, 2).unwrap(), 1.0);
        assert_eq!(fde(&p, &q, 2).unwrap(), 2.0);
        assert!(matches!(ade(&p, &q, 3), Err(Error::Range(_))));
        let f = vec![Vec2::new(3.0, 4.0)];
        assert_eq!(fde(&f, &[Vec2::ZERO], 1).unwrap(), 5.0);
    }

    #[test]
    fn min_ade_example() {
        let t = line(2, 0.0);
        let s = vec![line(2, 2.0), line(2, 1.0), line(2, 3.0)];
        assert_eq!(min_ade_over_samples(&s, &t, 2).unwrap(), (1.0, 1));
    }

    #[test]
    fn ap_examples() {
        assert_eq!(average_precision(&[0.9, 0.1, 0.8], &[true, false, true]), Some(1.0));
        assert!((average_precision(&[0.5; 4], &[true, false, false, false]).unwrap() - 0.25).abs() < 1e-12);
        assert_eq!(average_precision(&[0.2], &[false]), None);
        let m = intention_map(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[1, 2]).unwrap();
        assert_eq!(m, 1.0);
    }

    #[test]
    fn penetration_and_const_vel() {
        let spec = GridSpec::new(2, 2, 1.0, Vec2::ZERO);
        let mask = Grid::from_vec(2, 2, vec![0, 0, 0, 1]);
        let pts = vec![vec![
            Vec2::new(0.5, 0.5),
            Vec2::new(1.5, 0.5),
            Vec2::new(0.5, 1.5),
            Vec2::new(1.5, 1.5),
        ]];
        assert_eq!(penetration_rate(&pts, &mask, &spec), 0.25);
        let cv = const_vel_predict(&[Vec2::new(4.0, 5.0), Vec2::new(5.0, 5.0)], 3).unwrap();
        assert_eq!(cv[0], Vec2::new(6.0, 5.0));
        assert_eq!(cv[2], Vec2::new(8.0, 5.0));
        assert!(const_vel_predict(&[Vec2::ZERO], 3).is_err());
    }
}
