//! Intention head, conditional VAE (posterior encoder, fixed unit prior,
//! heatmap decoder) and the Best/Prob sampling strategies.
//!
//! Each decoded step is a Gaussian-shaped logit field around
//! `last + t·v + RESIDUAL_SCALE·Δ_t` plus a learned gain on the static map.
//! The softmax runs over the cells whose logit lies within `LOGIT_SPAN` of the
//! peak; cells outside that support get probability zero.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::grid::{Grid, GridSpec};
use crate::losses::{b_soft, b_soft_grad, eps_b, kl_grad, kl_unit_gaussian, point_penalties, LossBreakdown, LossTerms, LossWeights, LOG_FLOOR};
use crate::model::{Mlp, Model, KIN, MIN_SPREAD_CELLS, PAIRS, POS_SCALE, RESIDUAL_SCALE};
use crate::nn::{affine, affine_backward, relu_inplace, relu_mask, sigmoid, softmax, softplus};
use crate::raster::{soft_argmax, HeatmapSequence};
use crate::relnet::{self, SceneEncoding, TargetEncoding};
use crate::sample::{SceneSample, TargetSample, TargetStep};

/// Logit range kept in each step's softmax support.
pub const LOGIT_SPAN: f64 = 30.0;
/// Bound on |logvar|.
pub const LOGVAR_BOUND: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct IntentionDistribution {
    pub probs: Vec<f64>,
}

impl IntentionDistribution {
    pub fn from_logits(logits: &[f64]) -> Self {
        IntentionDistribution { probs: softmax(logits) }
    }

    /// 1-based zone with the highest probability (lowest id on ties).
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, p) in self.probs.iter().enumerate() {
            if *p > self.probs[best] {
                best = i;
            }
        }
        best + 1
    }
}

/// Last observed position and per-frame velocity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kinematics {
    pub last: Vec2,
    pub vel: Vec2,
}

impl Kinematics {
    pub fn from_past(past: &[Vec2]) -> Kinematics {
        let n = past.len();
        let last = past.last().copied().unwrap_or_default();
        let vel = if n >= 2 { past[n - 1] - past[n - 2] } else { Vec2::ZERO };
        Kinematics { last, vel }
    }

    fn features(&self, center: Vec2) -> [f64; KIN] {
        [
            (self.last.x - center.x) / POS_SCALE,
            (self.last.y - center.y) / POS_SCALE,
            self.vel.x,
            self.vel.y,
        ]
    }

    /// Constant-velocity position `t` frames ahead.
    pub fn extrapolate(&self, t: usize) -> Vec2 {
        self.last + self.vel * t as f64
    }
}

/// `c = q ⧺ onehot(g)` plus the kinematic anchor of the decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub q: Vec<f64>,
    /// 1-based zone; `None` when the model has no intention branch.
    pub g: Option<usize>,
    pub kin: Kinematics,
}

impl Condition {
    pub fn vector(&self, zones: usize) -> Vec<f64> {
        let mut c = self.q.clone();
        c.extend(onehot(self.g, zones));
        c
    }
}

fn onehot(g: Option<usize>, zones: usize) -> Vec<f64> {
    let mut v = vec![0.0; zones];
    if let Some(g) = g {
        if (1..=zones).contains(&g) {
            v[g - 1] = 1.0;
        }
    }
    v
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorParams {
    pub mu: Vec<f64>,
    pub logvar: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LatentSource {
    Posterior,
    Prior,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentSample {
    pub z: Vec<f64>,
    pub source: LatentSource,
}

/// `z = mu + exp(logvar/2)·noise`.
pub fn sample_posterior(p: &PosteriorParams, noise: &[f64]) -> Result<LatentSample> {
    if noise.len() != p.mu.len() {
        return Err(Error::Shape(format!("noise has {} entries, latent {}", noise.len(), p.mu.len())));
    }
    Ok(LatentSample {
        z: p.mu
            .iter()
            .zip(&p.logvar)
            .zip(noise)
            .map(|((m, lv), n)| m + (0.5 * lv).exp() * n)
            .collect(),
        source: LatentSource::Posterior,
    })
}

struct MlpOut {
    x: Vec<f64>,
    h: Vec<f64>,
    o: Vec<f64>,
}

fn mlp_forward(model: &Model, m: &Mlp, x: Vec<f64>) -> MlpOut {
    let mut h = vec![0.0; m.n_hidden];
    affine(model.p(&m.w1), Some(model.p(&m.b1)), &x, &mut h);
    relu_inplace(&mut h);
    let mut o = vec![0.0; m.n_out];
    affine(model.p(&m.w2), Some(model.p(&m.b2)), &h, &mut o);
    MlpOut { x, h, o }
}

fn mlp_backward(model: &Model, m: &Mlp, out: &MlpOut, dout: &[f64], grad: &mut [f64]) -> Vec<f64> {
    let mut dh = vec![0.0; m.n_hidden];
    affine_backward(model.p(&m.w2), &out.h, dout, &mut grad[m.w2.clone()], Some(&mut dh));
    grad[m.b2.clone()].iter_mut().zip(dout).for_each(|(g, d)| *g += d);
    relu_mask(&out.h, &mut dh);
    let mut dx = vec![0.0; m.n_in];
    affine_backward(model.p(&m.w1), &out.x, &dh, &mut grad[m.w1.clone()], Some(&mut dx));
    grad[m.b1.clone()].iter_mut().zip(&dh).for_each(|(g, d)| *g += d);
    dx
}

fn scaled(f: &[f64]) -> Vec<f64> {
    f.iter().map(|v| v / PAIRS as f64).collect()
}

fn require<'a, T>(x: &'a Option<T>, what: &str) -> Result<&'a T> {
    x.as_ref()
        .ok_or_else(|| Error::Config(format!("model was built without the {what}")))
}

fn intention_logits(model: &Model, fbar: &[f64]) -> Result<MlpOut> {
    Ok(mlp_forward(model, require(&model.lay.intent, "intention head")?, fbar.to_vec()))
}

/// Softmax over zone logits from the relational feature F.
pub fn estimate_intention(model: &Model, f: &[f64]) -> Result<IntentionDistribution> {
    Ok(IntentionDistribution::from_logits(&intention_logits(model, &scaled(f))?.o))
}

fn posterior_input(model: &Model, soft: &[Vec2], cond: &Condition) -> Vec<f64> {
    let cfg = &model.cfg;
    let mut y = Vec::with_capacity(cfg.posterior_in());
    for (t, s) in soft.iter().enumerate() {
        let r = (*s - cond.kin.extrapolate(t + 1)) * (1.0 / RESIDUAL_SCALE);
        y.push(r.x);
        y.push(r.y);
    }
    y.extend_from_slice(&cond.q);
    y.extend(onehot(cond.g, cfg.g));
    y.extend(cond.kin.features(cfg.center()));
    y
}

fn posterior_split(o: &[f64], latent: usize) -> PosteriorParams {
    PosteriorParams {
        mu: o[..latent].to_vec(),
        logvar: o[latent..].iter().map(|v| LOGVAR_BOUND * (v / LOGVAR_BOUND).tanh()).collect(),
    }
}

/// Encodes target heatmaps (through their soft-argmax points) with c.
pub fn posterior_encode(model: &Model, target: &HeatmapSequence, cond: &Condition) -> Result<PosteriorParams> {
    let cfg = &model.cfg;
    let spec = cfg.spec();
    if target.maps.len() != cfg.delta || target.maps.iter().any(|m| m.h != cfg.h || m.w != cfg.w) {
        return Err(Error::Config(format!(
            "posterior expects {} heatmaps of {}×{}",
            cfg.delta, cfg.h, cfg.w
        )));
    }
    if cond.q.len() != cfg.m {
        return Err(Error::Config(format!("q has {} entries, expected {}", cond.q.len(), cfg.m)));
    }
    let soft: Vec<Vec2> = target.maps.iter().map(|m| soft_argmax(m, &spec)).collect();
    let mlp = require(&model.lay.post, "posterior encoder")?;
    let out = mlp_forward(model, mlp, posterior_input(model, &soft, cond));
    Ok(posterior_split(&out.o, cfg.latent))
}

/// One decoded step over its softmax support.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDist {
    /// Row-major cell indices in ascending order.
    pub cells: Vec<u32>,
    pub p: Vec<f64>,
    pub mu: Vec2,
    /// Spread in meters.
    pub sigma: f64,
    logz: f64,
}

impl StepDist {
    /// Row-major index of the first most likely cell.
    pub fn argmax_cell(&self) -> usize {
        let mut best = 0;
        for (k, p) in self.p.iter().enumerate() {
            if *p > self.p[best] {
                best = k;
            }
        }
        self.cells[best] as usize
    }

    pub fn to_grid(&self, h: usize, w: usize) -> Grid<f64> {
        let mut g = Grid::new(h, w);
        for (c, p) in self.cells.iter().zip(&self.p) {
            g.data[*c as usize] = *p;
        }
        g
    }

    pub fn soft_point(&self, spec: &GridSpec) -> Vec2 {
        let mut acc = Vec2::ZERO;
        for (c, p) in self.cells.iter().zip(&self.p) {
            acc = acc + cell_center(spec, *c) * *p;
        }
        acc
    }
}

fn cell_center(spec: &GridSpec, c: u32) -> Vec2 {
    let c = c as usize;
    spec.center(c / spec.w, c % spec.w)
}

/// Cells inside the circle of radius `radius` around `mu`, unioned with an
/// optional inclusive box `(r0, r1, c0, c1)`; the whole grid if that is empty.
pub(crate) fn support(spec: &GridSpec, mu: Vec2, radius: f64, extra: Option<(usize, usize, usize, usize)>) -> Vec<u32> {
    let (h, w, res) = (spec.h as i64, spec.w as i64, spec.res);
    let mut out = Vec::new();
    let (cy, cx) = ((mu.y - spec.origin.y) / res, (mu.x - spec.origin.x) / res);
    let rad = radius / res;
    let mut lo = ((cy - rad).floor() as i64).max(0);
    let mut hi = ((cy + rad).floor() as i64).min(h - 1);
    if !(cy.is_finite() && cx.is_finite() && rad.is_finite()) {
        lo = 1;
        hi = 0;
    }
    let (blo, bhi) = extra.map_or((i64::MAX, i64::MIN), |(r0, r1, _, _)| (r0 as i64, r1 as i64));
    for r in lo.min(blo)..=hi.max(bhi) {
        let mut a = (1i64, 0i64);
        if r >= lo && r <= hi {
            let dy = r as f64 + 0.5 - cy;
            let span2 = rad * rad - dy * dy;
            if span2 >= 0.0 {
                let s = span2.sqrt();
                let c0 = ((cx - s - 0.5).ceil() as i64).max(0);
                let c1 = ((cx + s - 0.5).floor() as i64).min(w - 1);
                a = (c0, c1);
            }
        }
        let b = match extra {
            Some((r0, r1, c0, c1)) if r >= r0 as i64 && r <= r1 as i64 => (c0 as i64, c1 as i64),
            _ => (1, 0),
        };
        let mut push = |lo: i64, hi: i64| {
            for c in lo..=hi {
                out.push((r * w + c) as u32);
            }
        };
        let a_ok = a.0 <= a.1;
        let b_ok = b.0 <= b.1;
        match (a_ok, b_ok) {
            (true, false) => push(a.0, a.1),
            (false, true) => push(b.0, b.1),
            (true, true) if a.1 + 1 < b.0 => {
                push(a.0, a.1);
                push(b.0, b.1);
            }
            (true, true) if b.1 + 1 < a.0 => {
                push(b.0, b.1);
                push(a.0, a.1);
            }
            (true, true) => push(a.0.min(b.0), a.1.max(b.1)),
            _ => {}
        }
    }
    if out.is_empty() {
        out = (0..(h * w) as u32).collect();
    }
    out
}

fn step_forward(
    spec: &GridSpec,
    map: Option<&Grid<f32>>,
    gain: f64,
    mu: Vec2,
    sigma: f64,
    extra: Option<(usize, usize, usize, usize)>,
) -> StepDist {
    let radius = sigma * (2.0 * (LOGIT_SPAN + gain.abs())).sqrt();
    let cells = support(spec, mu, radius, extra);
    let inv = 1.0 / (2.0 * sigma * sigma);
    let logits: Vec<f64> = cells
        .iter()
        .map(|&c| {
            let d2 = (cell_center(spec, c) - mu).dot(cell_center(spec, c) - mu);
            -d2 * inv + map.map_or(0.0, |m| gain * m.data[c as usize] as f64)
        })
        .collect();
    let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= s);
    StepDist {
        cells,
        p,
        mu,
        sigma,
        logz: mx + s.ln(),
    }
}

struct DecoderOut {
    mlp: MlpOut,
    pz: Vec<f64>,
    steps: Vec<StepDist>,
}

fn decode(
    model: &Model,
    z: Option<&[f64]>,
    fbar: &[f64],
    cond: &Condition,
    map: &Grid<f32>,
    targets: Option<&[TargetStep]>,
) -> Result<DecoderOut> {
    let cfg = &model.cfg;
    let spec = cfg.spec();
    // Without the latent branch F̄ passes through unmasked.
    let mut pz = vec![1.0; cfg.feat];
    if let Some(proj) = &model.lay.proj {
        pz.iter_mut().for_each(|v| *v = 0.0);
        if let Some(z) = z {
            affine(model.p(proj), None, z, &mut pz);
        }
    }
    let mut x: Vec<f64> = pz.iter().zip(fbar).map(|(a, b)| a * b).collect();
    x.extend_from_slice(&cond.q);
    x.extend(onehot(cond.g, cfg.g));
    x.extend(cond.kin.features(cfg.center()));
    let mlp = mlp_forward(model, &model.lay.dec, x);
    let gain = model.map_gain();
    let map = model.lay.map_gain.as_ref().map(|_| map);
    let mut steps = Vec::with_capacity(cfg.delta);
    for t in 0..cfg.delta {
        let o = &mlp.o[3 * t..3 * t + 3];
        let mu = cond.kin.extrapolate(t + 1) + Vec2::new(o[0], o[1]) * RESIDUAL_SCALE;
        let sigma = (MIN_SPREAD_CELLS + softplus(o[2])) * cfg.res;
        if !(mu.x.is_finite() && mu.y.is_finite() && sigma.is_finite()) {
            return Err(Error::NonFinite {
                term: "decoder".into(),
                step: 0,
            });
        }
        let extra = targets.map(|ts| {
            let s = &ts[t];
            (*s.rows().start(), *s.rows().end(), *s.cols().start(), *s.cols().end())
        });
        steps.push(step_forward(&spec, map, gain, mu, sigma, extra));
    }
    Ok(DecoderOut { mlp, pz, steps })
}

/// Decodes `P·z ⊙ F̄` with the condition into δ normalized grids.
pub fn predict_heatmaps(
    model: &Model,
    z: Option<&LatentSample>,
    f: &[f64],
    cond: &Condition,
    map: &Grid<f32>,
) -> Result<HeatmapSequence> {
    let cfg = &model.cfg;
    let out = decode(model, z.map(|z| z.z.as_slice()), &scaled(f), cond, map, None)?;
    Ok(HeatmapSequence {
        maps: out.steps.iter().map(|s| s.to_grid(cfg.h, cfg.w)).collect(),
        agent_id: 0,
    })
}

/// Scene and target encodings of one observed agent.
#[derive(Debug, Clone)]
pub struct Observation {
    pub target: TargetEncoding,
    pub kin: Kinematics,
}

impl Observation {
    pub fn new(model: &Model, scene: &SceneEncoding, past: &[Vec2]) -> Result<Observation> {
        Ok(Observation {
            target: relnet::encode_target(model, scene, past)?,
            kin: Kinematics::from_past(past),
        })
    }

    pub fn condition(&self, g: Option<usize>) -> Condition {
        Condition {
            q: self.target.q.clone(),
            g,
            kin: self.kin,
        }
    }

    pub fn intention(&self, model: &Model) -> Option<IntentionDistribution> {
        estimate_intention(model, &self.target.f).ok()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    Best,
    Prob,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Best => "best",
            Strategy::Prob => "prob",
        })
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "best" => Ok(Strategy::Best),
            "prob" => Ok(Strategy::Prob),
            _ => Err(Error::Config(format!("unknown strategy {s:?} (best, prob)"))),
        }
    }
}

/// One generated future with the zone it was conditioned on.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub zone: Option<usize>,
    pub steps: Vec<StepDist>,
}

impl Prediction {
    pub fn heatmaps(&self, spec: &GridSpec, agent_id: u32) -> HeatmapSequence {
        HeatmapSequence {
            maps: self.steps.iter().map(|s| s.to_grid(spec.h, spec.w)).collect(),
            agent_id,
        }
    }

    /// Argmax cell centers.
    pub fn points(&self, spec: &GridSpec) -> Vec<Vec2> {
        self.steps.iter().map(|s| cell_center(spec, s.argmax_cell() as u32)).collect()
    }
}

/// Integer counts summing to `s`, proportional to `probs`: floors first, then
/// the largest remainders (lower index on ties).
pub fn apportion(probs: &[f64], s: usize) -> Vec<usize> {
    let quotas: Vec<f64> = probs.iter().map(|p| p * s as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| (q + 1e-9).floor().max(0.0) as usize).collect();
    let mut assigned: usize = counts.iter().sum();
    while assigned > s {
        let i = (0..counts.len()).rev().find(|&i| counts[i] > 0).unwrap_or(0);
        counts[i] -= 1;
        assigned -= 1;
    }
    let mut order: Vec<usize> = (0..probs.len()).collect();
    let rem = |i: usize| quotas[i] - counts[i] as f64;
    order.sort_by(|&a, &b| rem(b).partial_cmp(&rem(a)).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
    for &i in order.iter().cycle().take(s - assigned) {
        counts[i] += 1;
    }
    counts
}

fn decode_prediction(model: &Model, obs: &Observation, map: &Grid<f32>, g: Option<usize>, z: Option<&[f64]>) -> Result<Prediction> {
    let out = decode(model, z, &obs.target.fbar, &obs.condition(g), map, None)?;
    Ok(Prediction { zone: g, steps: out.steps })
}

/// `s` futures; latent draws come from one seeded stream in zone order.
pub fn generate(
    model: &Model,
    obs: &Observation,
    map: &Grid<f32>,
    strategy: Strategy,
    s: usize,
    seed: u64,
) -> Result<Vec<Prediction>> {
    if s == 0 {
        return Err(Error::Range("sample count must be at least 1".into()));
    }
    if !model.cfg.use_intention {
        let one = decode_prediction(model, obs, map, None, None)?;
        return Ok(vec![one; s]);
    }
    let dist = obs.intention(model).expect("intention head present");
    let counts = match strategy {
        Strategy::Best => {
            let mut c = vec![0; model.cfg.g];
            c[dist.argmax() - 1] = s;
            c
        }
        Strategy::Prob => apportion(&dist.probs, s),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(s);
    for (zi, &n) in counts.iter().enumerate() {
        for _ in 0..n {
            let z: Vec<f64> = (0..model.cfg.latent).map(|_| StandardNormal.sample(&mut rng)).collect();
            out.push(decode_prediction(model, obs, map, Some(zi + 1), Some(&z))?);
        }
    }
    Ok(out)
}

/// Argmax intention with the prior mode z = 0.
pub fn single_modal_predict(model: &Model, obs: &Observation, map: &Grid<f32>) -> Result<Prediction> {
    if !model.cfg.use_intention {
        return decode_prediction(model, obs, map, None, None);
    }
    let g = obs.intention(model).expect("intention head present").argmax();
    let z = vec![0.0; model.cfg.latent];
    decode_prediction(model, obs, map, Some(g), Some(&z))
}

/// Decodes with an explicit zone and latent (prior mode when `z` is `None`).
pub fn predict_conditioned(model: &Model, obs: &Observation, map: &Grid<f32>, g: usize, z: Option<&[f64]>) -> Result<Prediction> {
    if !model.cfg.use_intention {
        return decode_prediction(model, obs, map, None, None);
    }
    let zero = vec![0.0; model.cfg.latent];
    decode_prediction(model, obs, map, Some(g), Some(z.unwrap_or(&zero)))
}

/// Loss of one (scene, target) pair and its gradient, scaled by `scale`, added
/// to `grad`. Gradients reaching the shared scene encoding go to `acc`.
#[allow(clippy::too_many_arguments)]
pub fn target_objective(
    model: &Model,
    scene: &SceneEncoding,
    sample: &SceneSample,
    target: &TargetSample,
    noise: &[f64],
    weights: &LossWeights,
    scale: f64,
    grad: &mut [f64],
    acc: &mut [f64],
) -> Result<LossTerms> {
    let cfg = &model.cfg;
    let spec = sample.spec;
    let delta = cfg.delta;
    let te = relnet::encode_target(model, scene, &target.past)?;
    let kin = Kinematics::from_past(&target.past);
    let use_int = cfg.use_intention;
    let cond = Condition {
        q: te.q.clone(),
        g: use_int.then_some(target.goal),
        kin,
    };
    let mut terms = LossTerms::default();

    let intent = if use_int { Some(intention_logits(model, &te.fbar)?) } else { None };
    let probs = intent.as_ref().map(|o| softmax(&o.o));
    if let Some(p) = &probs {
        terms.ce = -p[target.goal - 1].max(LOG_FLOOR).ln();
    }

    let soft: Vec<Vec2> = target.steps.iter().map(|s| s.soft).collect();
    let post = match &model.lay.post {
        Some(m) if use_int => Some(mlp_forward(model, m, posterior_input(model, &soft, &cond))),
        _ => None,
    };
    let pp = post.as_ref().map(|o| posterior_split(&o.o, cfg.latent));
    let z = match &pp {
        Some(pp) => Some(sample_posterior(pp, noise)?.z),
        None => None,
    };
    if let Some(pp) = &pp {
        terms.kl = kl_unit_gaussian(&pp.mu, &pp.logvar);
    }

    let dec = decode(model, z.as_deref(), &te.fbar, &cond, &sample.map, Some(&target.steps))?;
    let eps = eps_b(spec.len());
    let gain = model.map_gain();
    let use_map = model.lay.map_gain.is_some();

    // Point-level penalties on the soft-argmax positions.
    let pts: Vec<Vec2> = dec.steps.iter().map(|s| s.soft_point(&spec)).collect();
    let (incon, disp, dpts) = point_penalties(kin.last, kin.vel.norm(), &pts, &target.future, weights.eta, weights.mu)?;
    terms.inconsistency = incon;
    terms.dispersion = disp;

    let mut d_out = vec![0.0; 3 * delta];
    let mut d_gain = 0.0;
    for (t, (st, ts)) in dec.steps.iter().zip(&target.steps).enumerate() {
        let inv_s2 = 1.0 / (st.sigma * st.sigma);
        // Reconstruction over the target window.
        let mut tsum = 0.0;
        let mut dmu = Vec2::ZERO;
        let mut dsig = 0.0;
        for (i, r) in ts.rows().enumerate() {
            for (j, c) in ts.cols().enumerate() {
                let tv = ts.wy[i] * ts.wx[j];
                let cc = spec.center(r, c);
                let diff = cc - st.mu;
                let d2 = diff.dot(diff);
                let m = if use_map { sample.map.get(r, c) as f64 } else { 0.0 };
                let l = -0.5 * d2 * inv_s2 + gain * m;
                terms.recon += tv * (l - st.logz);
                tsum += tv;
                // dL/dl = −T on these cells (L includes −recon).
                let dl = -tv;
                dmu = dmu + diff * (dl * inv_s2);
                dsig += dl * d2 * inv_s2 / st.sigma;
                d_gain += dl * m;
            }
        }
        // Penetration and soft point gradients with respect to p.
        let mut a = vec![0.0; st.cells.len()];
        let mut pa = 0.0;
        for (k, (&c, &p)) in st.cells.iter().zip(&st.p).enumerate() {
            let cc = cell_center(&spec, c);
            let mut ak = dpts[t].dot(cc);
            if sample.drivable.data[c as usize] != 0 {
                terms.penetration += b_soft(p, eps) / delta as f64;
                ak += weights.zeta * b_soft_grad(p, eps) / delta as f64;
            }
            a[k] = ak;
            pa += p * ak;
        }
        for (k, (&c, &p)) in st.cells.iter().zip(&st.p).enumerate() {
            let dl = p * (a[k] - pa) + tsum * p;
            if dl == 0.0 {
                continue;
            }
            let cc = cell_center(&spec, c);
            let diff = cc - st.mu;
            let d2 = diff.dot(diff);
            dmu = dmu + diff * (dl * inv_s2);
            dsig += dl * d2 * inv_s2 / st.sigma;
            if use_map {
                d_gain += dl * sample.map.data[c as usize] as f64;
            }
        }
        let o_s = dec.mlp.o[3 * t + 2];
        d_out[3 * t] = dmu.x * RESIDUAL_SCALE;
        d_out[3 * t + 1] = dmu.y * RESIDUAL_SCALE;
        d_out[3 * t + 2] = dsig * cfg.res * sigmoid(o_s);
    }
    d_out.iter_mut().for_each(|g| *g *= scale);
    if let Some(r) = &model.lay.map_gain {
        grad[r.start] += d_gain * scale;
    }

    // Decoder MLP and the z ⊙ P·F̄ mask.
    let dx = mlp_backward(model, &model.lay.dec, &dec.mlp, &d_out, grad);
    let fw = cfg.feat;
    let du = &dx[..fw];
    let mut dfbar: Vec<f64> = du.iter().zip(&dec.pz).map(|(a, b)| a * b).collect();
    let mut dq: Vec<f64> = dx[fw..fw + cfg.m].to_vec();
    let mut dz = vec![0.0; cfg.latent];
    if let (Some(z), Some(proj)) = (&z, &model.lay.proj) {
        let dpz: Vec<f64> = du.iter().zip(&te.fbar).map(|(a, b)| a * b).collect();
        affine_backward(model.p(proj), z, &dpz, &mut grad[proj.clone()], Some(&mut dz));
    }

    // Posterior encoder.
    if let (Some(out), Some(pp), Some(m)) = (&post, &pp, &model.lay.post) {
        let (kmu, klv) = kl_grad(&pp.mu, &pp.logvar);
        let l = cfg.latent;
        let mut d_o = vec![0.0; 2 * l];
        for i in 0..l {
            // dz already carries the scale.
            d_o[i] = kmu[i] * scale + dz[i];
            let dlv = klv[i] * scale + dz[i] * noise[i] * 0.5 * (0.5 * pp.logvar[i]).exp();
            let th = (out.o[l + i] / LOGVAR_BOUND).tanh();
            d_o[l + i] = dlv * (1.0 - th * th);
        }
        let dy = mlp_backward(model, m, out, &d_o, grad);
        let q0 = 2 * delta;
        dq.iter_mut().zip(&dy[q0..q0 + cfg.m]).for_each(|(a, b)| *a += b);
    }

    // Intention head.
    if let (Some(out), Some(p), Some(m)) = (&intent, &probs, &model.lay.intent) {
        let mut dl: Vec<f64> = p.iter().map(|v| v * scale).collect();
        if p[target.goal - 1] > LOG_FLOOR {
            dl[target.goal - 1] -= scale;
        } else {
            dl.iter_mut().for_each(|v| *v = 0.0);
        }
        let d = mlp_backward(model, m, out, &dl, grad);
        dfbar.iter_mut().zip(&d).for_each(|(a, b)| *a += b);
    }

    relnet::backward_target(model, &te, &dfbar, &dq, grad, acc);
    Ok(terms)
}

/// One (scene, target) pair of a batch with its posterior noise.
#[derive(Debug, Clone)]
pub struct BatchItem<'a> {
    pub scene: &'a SceneSample,
    pub target: usize,
    pub noise: Vec<f64>,
}

/// Mean loss over the batch and its gradient. Consecutive items from the same
/// scene share one scene encoding.
pub fn batch_objective(model: &Model, items: &[BatchItem], weights: &LossWeights) -> Result<(LossBreakdown, Vec<f64>)> {
    let mut grad = vec![0.0; model.num_params()];
    let mut terms = LossTerms::default();
    if items.is_empty() {
        return Ok((LossBreakdown::compose(terms, *weights)?, grad));
    }
    let scale = 1.0 / items.len() as f64;
    let mut i = 0;
    while i < items.len() {
        let scene = items[i].scene;
        let enc = relnet::encode_scene(model, &scene.pooled)?;
        let mut acc = relnet::scene_accumulator(model);
        while i < items.len() && std::ptr::eq(items[i].scene, scene) {
            let it = &items[i];
            let t = target_objective(model, &enc, scene, &scene.targets[it.target], &it.noise, weights, scale, &mut grad, &mut acc)?;
            terms.add(&t.scale(scale));
            i += 1;
        }
        relnet::backward_scene(model, &enc, &acc, &mut grad);
    }
    Ok((LossBreakdown::compose(terms, *weights)?, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    #[test]
    fn apportion_examples() {
        assert_eq!(apportion(&[0.2; 5], 20), vec![4; 5]);
        assert_eq!(apportion(&[0.5, 0.3, 0.2, 0.0, 0.0], 20), vec![10, 6, 4, 0, 0]);
        assert_eq!(apportion(&[0.0, 1.0, 0.0], 7), vec![0, 7, 0]);
        assert_eq!(apportion(&[1.0 / 3.0; 3], 4), vec![2, 1, 1]);
        assert_eq!(apportion(&[0.5, 0.5], 1), vec![1, 0]);
    }

    #[test]
    fn support_covers_circle_and_box() {
        let spec = GridSpec::new(20, 20, 0.5, Vec2::ZERO);
        let s = support(&spec, Vec2::new(5.0, 5.0), 1.0, None);
        assert!(s.windows(2).all(|w| w[0] < w[1]));
        let brute: Vec<u32> = (0..400u32)
            .filter(|&c| cell_center(&spec, c).dist(Vec2::new(5.0, 5.0)) <= 1.0)
            .collect();
        assert_eq!(s, brute);
        let b = support(&spec, Vec2::new(1.0, 1.0), 0.6, Some((15, 17, 15, 18)));
        assert!(b.windows(2).all(|w| w[0] < w[1]));
        assert!(b.contains(&(16 * 20 + 18)) && b.contains(&(2 * 20 + 1)));
        assert_eq!(support(&spec, Vec2::new(-50.0, -50.0), 1.0, None).len(), 400);
    }

    #[test]
    fn zero_posterior_and_reparameterization() {
        let cfg = ModelConfig::test_dims(20, 3, 4, 5);
        let m = Model::zeros(cfg).unwrap();
        let spec = cfg.spec();
        let target = HeatmapSequence {
            maps: (0..4)
                .map(|t| crate::raster::encode_heatmap(Vec2::new(2.0 + t as f64, 5.0), 1.0, &spec).unwrap())
                .collect(),
            agent_id: 1,
        };
        let cond = Condition {
            q: vec![0.0; 8],
            g: Some(2),
            kin: Kinematics::from_past(&[Vec2::new(1.0, 5.0), Vec2::new(1.5, 5.0)]),
        };
        let pp = posterior_encode(&m, &target, &cond).unwrap();
        assert!(pp.mu.iter().chain(&pp.logvar).all(|v| *v == 0.0));
        let p = PosteriorParams {
            mu: vec![1.0],
            logvar: vec![2.0 * 2f64.ln()],
        };
        assert!((sample_posterior(&p, &[0.5]).unwrap().z[0] - 2.0).abs() < 1e-12);
        assert!(sample_posterior(&p, &[0.5, 1.0]).is_err());
    }
}
