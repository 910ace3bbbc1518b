//! Relational encoder: grid nodes from the raster stack, pairwise edge
//! functions φ and θ, per-target aggregation F, and the motion context q.
//!
//! The scene-level half (nodes, φ, and the `θ.r · r_ij` products) is computed
//! once per raster and shared by every target; the target-level half adds the
//! motion term and sums the rectified messages.

use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::grid::Grid;
use crate::model::{Model, ModelConfig, NODES, NODE_GRID, PAIRS, POOLED, POS_SCALE};
use crate::nn::{affine, affine_backward, relu_inplace, relu_mask};
use crate::raster::{RasterFrame, SceneRaster};

/// Node vectors in row-major order over the 5×5 partition.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeSet {
    pub nodes: Vec<Vec<f64>>,
}

impl NodeSet {
    /// (row, col) of the region behind node `i`.
    pub fn region(i: usize) -> (usize, usize) {
        (i / NODE_GRID, i % NODE_GRID)
    }
}

/// Ordered pairs `(i, j)`, `i ≠ j`, in the order messages are summed.
pub fn pairs() -> impl Iterator<Item = (usize, usize)> {
    (0..NODES).flat_map(|i| (0..NODES).filter(move |&j| j != i).map(move |j| (i, j)))
}

/// Average-pools the frame channels (plus the map, when the model uses it)
/// to a `POOLED × POOLED` channel-last block.
pub fn pool_input(frames: &[RasterFrame], map: &Grid<f32>, cfg: &ModelConfig) -> Result<Vec<f64>> {
    if frames.len() != cfg.tau {
        return Err(Error::Config(format!("expected τ = {} frames, got {}", cfg.tau, frames.len())));
    }
    let bad = frames.iter().any(|f| f.h != cfg.h || f.w != cfg.w) || map.h != cfg.h || map.w != cfg.w;
    if bad {
        return Err(Error::Config(format!("raster does not match configured {}×{}", cfg.h, cfg.w)));
    }
    let c = cfg.channels();
    let (by, bx) = (cfg.h / POOLED, cfg.w / POOLED);
    let inv = 1.0 / (by * bx) as f64;
    let mut out = vec![0.0; POOLED * POOLED * c];
    for r in 0..cfg.h {
        for col in 0..cfg.w {
            let base = ((r / by) * POOLED + col / bx) * c;
            for (k, f) in frames.iter().enumerate() {
                let v = f.get(r, col);
                for ch in 0..3 {
                    out[base + 3 * k + ch] += v[ch] as f64 * inv;
                }
            }
            if cfg.use_map {
                out[base + 3 * cfg.tau] += map.get(r, col) as f64 * inv;
            }
        }
    }
    Ok(out)
}

pub fn pool_raster(raster: &SceneRaster, cfg: &ModelConfig) -> Result<Vec<f64>> {
    pool_input(&raster.frames, &raster.map, cfg)
}

/// Gathers 2×2 stride-2 patches of a channel-last `side × side × c` block.
fn patches(x: &[f64], side: usize, c: usize) -> Vec<f64> {
    let half = side / 2;
    let mut out = Vec::with_capacity(half * half * 4 * c);
    for oy in 0..half {
        for ox in 0..half {
            for ky in 0..2 {
                for kx in 0..2 {
                    let base = ((2 * oy + ky) * side + 2 * ox + kx) * c;
                    out.extend_from_slice(&x[base..base + c]);
                }
            }
        }
    }
    out
}

/// Inverse scatter of `patches` for gradients.
fn unpatch(dp: &[f64], side: usize, c: usize, dx: &mut [f64]) {
    let half = side / 2;
    let mut k = 0;
    for oy in 0..half {
        for ox in 0..half {
            for ky in 0..2 {
                for kx in 0..2 {
                    let base = ((2 * oy + ky) * side + 2 * ox + kx) * c;
                    for ch in 0..c {
                        dx[base + ch] += dp[k];
                        k += 1;
                    }
                }
            }
        }
    }
}

/// Scene-level activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct SceneEncoding {
    patches1: Vec<f64>,
    h1: Vec<f64>,
    patches2: Vec<f64>,
    /// 25 × d, row-major by node.
    pub nodes: Vec<f64>,
    phi_pre: Vec<f64>,
    r: Vec<f64>,
    /// `θ.r · r_ij` for every pair, PAIRS × feat.
    s: Vec<f64>,
}

pub fn encode_scene(model: &Model, pooled: &[f64]) -> Result<SceneEncoding> {
    let cfg = &model.cfg;
    let l = &model.lay;
    let c = cfg.channels();
    if pooled.len() != POOLED * POOLED * c {
        return Err(Error::Config(format!(
            "pooled input holds {} values, expected {}",
            pooled.len(),
            POOLED * POOLED * c
        )));
    }
    let half1 = POOLED / 2;
    let patches1 = patches(pooled, POOLED, c);
    let mut h1 = vec![0.0; half1 * half1 * cfg.c1];
    for (o, out) in h1.chunks_mut(cfg.c1).enumerate() {
        affine(model.p(&l.conv1_w), Some(model.p(&l.conv1_b)), &patches1[o * 4 * c..(o + 1) * 4 * c], out);
    }
    relu_inplace(&mut h1);
    let patches2 = patches(&h1, half1, cfg.c1);
    let mut nodes = vec![0.0; NODES * cfg.d];
    for (o, out) in nodes.chunks_mut(cfg.d).enumerate() {
        let p = &patches2[o * 4 * cfg.c1..(o + 1) * 4 * cfg.c1];
        affine(model.p(&l.conv2_w), Some(model.p(&l.conv2_b)), p, out);
    }
    relu_inplace(&mut nodes);

    let e = cfg.edge;
    let mut a = vec![0.0; NODES * e];
    let mut b = vec![0.0; NODES * e];
    for i in 0..NODES {
        let v = &nodes[i * cfg.d..(i + 1) * cfg.d];
        affine(model.p(&l.phi_a), None, v, &mut a[i * e..(i + 1) * e]);
        affine(model.p(&l.phi_b), None, v, &mut b[i * e..(i + 1) * e]);
    }
    let bias = model.p(&l.phi_bias);
    let mut phi_pre = vec![0.0; PAIRS * e];
    for (k, (i, j)) in pairs().enumerate() {
        let out = &mut phi_pre[k * e..(k + 1) * e];
        for x in 0..e {
            out[x] = a[i * e + x] + b[j * e + x] + bias[x];
        }
    }
    let mut r = phi_pre.clone();
    relu_inplace(&mut r);
    let f = cfg.feat;
    let mut s = vec![0.0; PAIRS * f];
    for k in 0..PAIRS {
        affine(model.p(&l.theta_r), None, &r[k * e..(k + 1) * e], &mut s[k * f..(k + 1) * f]);
    }
    Ok(SceneEncoding {
        patches1,
        h1,
        patches2,
        nodes,
        phi_pre,
        r,
        s,
    })
}

pub fn extract_nodes(model: &Model, raster: &SceneRaster) -> Result<NodeSet> {
    let enc = encode_scene(model, &pool_raster(raster, &model.cfg)?)?;
    Ok(NodeSet {
        nodes: enc.nodes.chunks(model.cfg.d).map(<[f64]>::to_vec).collect(),
    })
}

/// `φ(v_i ⧺ v_j) = relu(A v_i + B v_j + b)`.
pub fn edge_phi(model: &Model, vi: &[f64], vj: &[f64]) -> Vec<f64> {
    let l = &model.lay;
    let e = model.cfg.edge;
    let mut a = vec![0.0; e];
    let mut b = vec![0.0; e];
    affine(model.p(&l.phi_a), Some(model.p(&l.phi_bias)), vi, &mut a);
    affine(model.p(&l.phi_b), None, vj, &mut b);
    a.iter().zip(&b).map(|(x, y)| (x + y).max(0.0)).collect()
}

/// `θ(r, q) = relu(C r + D q + b)`.
pub fn edge_theta(model: &Model, r: &[f64], q: &[f64]) -> Vec<f64> {
    let l = &model.lay;
    let f = model.cfg.feat;
    let mut x = vec![0.0; f];
    let mut y = vec![0.0; f];
    affine(model.p(&l.theta_r), Some(model.p(&l.theta_bias)), r, &mut x);
    affine(model.p(&l.theta_q), None, q, &mut y);
    x.iter().zip(&y).map(|(a, b)| (a + b).max(0.0)).collect()
}

/// Element-wise sum of messages.
pub fn aggregate(messages: &[Vec<f64>]) -> Vec<f64> {
    let Some(first) = messages.first() else {
        return Vec::new();
    };
    let mut out = vec![0.0; first.len()];
    for m in messages {
        out.iter_mut().zip(m).for_each(|(o, v)| *o += v);
    }
    out
}

#[derive(Debug, Clone)]
struct MotionCache {
    inputs: Vec<[f64; 4]>,
    /// Hidden states h_0 = 0 … h_τ.
    hs: Vec<Vec<f64>>,
}

fn motion_forward(model: &Model, past: &[Vec2]) -> Result<MotionCache> {
    let cfg = &model.cfg;
    if past.len() != cfg.tau {
        return Err(Error::Range(format!("expected {} past positions, got {}", cfg.tau, past.len())));
    }
    let l = &model.lay;
    let c = cfg.center();
    let mut inputs = Vec::with_capacity(cfg.tau);
    let mut hs = vec![vec![0.0; cfg.m]];
    for (t, p) in past.iter().enumerate() {
        let d = if t == 0 { Vec2::ZERO } else { *p - past[t - 1] };
        let u = [(p.x - c.x) / POS_SCALE, (p.y - c.y) / POS_SCALE, d.x, d.y];
        let mut a = vec![0.0; cfg.m];
        let mut hh = vec![0.0; cfg.m];
        affine(model.p(&l.motion_wx), Some(model.p(&l.motion_b)), &u, &mut a);
        affine(model.p(&l.motion_wh), None, &hs[t], &mut hh);
        let h: Vec<f64> = a.iter().zip(&hh).map(|(x, y)| (x + y).tanh()).collect();
        inputs.push(u);
        hs.push(h);
    }
    Ok(MotionCache { inputs, hs })
}

/// Elman-tanh encoding of τ local positions.
pub fn encode_motion(model: &Model, past: &[Vec2]) -> Result<Vec<f64>> {
    Ok(motion_forward(model, past)?.hs.pop().unwrap_or_default())
}

fn motion_backward(model: &Model, cache: &MotionCache, dq: &[f64], grad: &mut [f64]) {
    let l = &model.lay;
    let m = model.cfg.m;
    let mut dh = dq.to_vec();
    for t in (0..cache.inputs.len()).rev() {
        let h = &cache.hs[t + 1];
        let da: Vec<f64> = dh.iter().zip(h).map(|(g, h)| g * (1.0 - h * h)).collect();
        affine_backward(model.p(&l.motion_wx), &cache.inputs[t], &da, &mut grad[l.motion_wx.clone()], None);
        grad[l.motion_b.clone()].iter_mut().zip(&da).for_each(|(g, d)| *g += d);
        let mut dprev = vec![0.0; m];
        affine_backward(model.p(&l.motion_wh), &cache.hs[t], &da, &mut grad[l.motion_wh.clone()], Some(&mut dprev));
        dh = dprev;
    }
}

/// Target-level activations: q, the θ pre-activations and F.
#[derive(Debug, Clone)]
pub struct TargetEncoding {
    pub q: Vec<f64>,
    motion: MotionCache,
    theta_pre: Vec<f64>,
    /// Σ f_ij.
    pub f: Vec<f64>,
    /// F / PAIRS, the scale consumed by the heads.
    pub fbar: Vec<f64>,
}

pub fn encode_target(model: &Model, scene: &SceneEncoding, past: &[Vec2]) -> Result<TargetEncoding> {
    let motion = motion_forward(model, past)?;
    let q = motion.hs.last().cloned().unwrap_or_default();
    let l = &model.lay;
    let fw = model.cfg.feat;
    let mut dq = vec![0.0; fw];
    affine(model.p(&l.theta_q), Some(model.p(&l.theta_bias)), &q, &mut dq);
    let mut theta_pre = scene.s.clone();
    let mut f = vec![0.0; fw];
    for k in 0..PAIRS {
        let row = &mut theta_pre[k * fw..(k + 1) * fw];
        for x in 0..fw {
            row[x] += dq[x];
            f[x] += row[x].max(0.0);
        }
    }
    let fbar = f.iter().map(|v| v / PAIRS as f64).collect();
    Ok(TargetEncoding {
        q,
        motion,
        theta_pre,
        f,
        fbar,
    })
}

/// F for one target over a raster, from scratch.
pub fn relational_feature(model: &Model, raster: &SceneRaster, past: &[Vec2]) -> Result<Vec<f64>> {
    let scene = encode_scene(model, &pool_raster(raster, &model.cfg)?)?;
    Ok(encode_target(model, &scene, past)?.f)
}

/// Per-scene accumulator of θ pre-activation gradients across targets.
pub fn scene_accumulator(model: &Model) -> Vec<f64> {
    vec![0.0; PAIRS * model.cfg.feat]
}

/// Backpropagates `dL/dF̄` and `dL/dq` through θ and the motion encoder.
/// Gradients reaching the shared `θ.r · r_ij` products are summed into `acc`
/// for a single `backward_scene` call.
pub fn backward_target(
    model: &Model,
    t: &TargetEncoding,
    dfbar: &[f64],
    dq_in: &[f64],
    grad: &mut [f64],
    acc: &mut [f64],
) {
    let l = &model.lay;
    let fw = model.cfg.feat;
    let df: Vec<f64> = dfbar.iter().map(|g| g / PAIRS as f64).collect();
    let mut dterm = vec![0.0; fw];
    for k in 0..PAIRS {
        let pre = &t.theta_pre[k * fw..(k + 1) * fw];
        let a = &mut acc[k * fw..(k + 1) * fw];
        for x in 0..fw {
            if pre[x] > 0.0 {
                a[x] += df[x];
                dterm[x] += df[x];
            }
        }
    }
    let mut dq = dq_in.to_vec();
    affine_backward(model.p(&l.theta_q), &t.q, &dterm, &mut grad[l.theta_q.clone()], Some(&mut dq));
    grad[l.theta_bias.clone()].iter_mut().zip(&dterm).for_each(|(g, d)| *g += d);
    motion_backward(model, &t.motion, &dq, grad);
}

pub fn backward_scene(model: &Model, scene: &SceneEncoding, acc: &[f64], grad: &mut [f64]) {
    let cfg = &model.cfg;
    let l = &model.lay;
    let (e, fw, d) = (cfg.edge, cfg.feat, cfg.d);
    let mut dpre = vec![0.0; PAIRS * e];
    for k in 0..PAIRS {
        let g = &acc[k * fw..(k + 1) * fw];
        if g.iter().all(|v| *v == 0.0) {
            continue;
        }
        let dr = &mut dpre[k * e..(k + 1) * e];
        affine_backward(model.p(&l.theta_r), &scene.r[k * e..(k + 1) * e], g, &mut grad[l.theta_r.clone()], Some(dr));
        relu_mask(&scene.phi_pre[k * e..(k + 1) * e], dr);
    }
    let mut da = vec![0.0; NODES * e];
    let mut db = vec![0.0; NODES * e];
    for (k, (i, j)) in pairs().enumerate() {
        for x in 0..e {
            let g = dpre[k * e + x];
            da[i * e + x] += g;
            db[j * e + x] += g;
        }
    }
    let mut dnodes = vec![0.0; NODES * d];
    for i in 0..NODES {
        let v = &scene.nodes[i * d..(i + 1) * d];
        let dv = &mut dnodes[i * d..(i + 1) * d];
        affine_backward(model.p(&l.phi_a), v, &da[i * e..(i + 1) * e], &mut grad[l.phi_a.clone()], Some(&mut *dv));
        affine_backward(model.p(&l.phi_b), v, &db[i * e..(i + 1) * e], &mut grad[l.phi_b.clone()], Some(dv));
        for x in 0..e {
            grad[l.phi_bias.start + x] += da[i * e + x];
        }
    }
    relu_mask(&scene.nodes, &mut dnodes);

    let c1 = cfg.c1;
    let mut dpatch2 = vec![0.0; scene.patches2.len()];
    for o in 0..NODES {
        let g = &dnodes[o * d..(o + 1) * d];
        let p = &scene.patches2[o * 4 * c1..(o + 1) * 4 * c1];
        affine_backward(model.p(&l.conv2_w), p, g, &mut grad[l.conv2_w.clone()], Some(&mut dpatch2[o * 4 * c1..(o + 1) * 4 * c1]));
        grad[l.conv2_b.clone()].iter_mut().zip(g).for_each(|(a, b)| *a += b);
    }
    let half1 = POOLED / 2;
    let mut dh1 = vec![0.0; half1 * half1 * c1];
    unpatch(&dpatch2, half1, c1, &mut dh1);
    relu_mask(&scene.h1, &mut dh1);
    let c = cfg.channels();
    for o in 0..half1 * half1 {
        let g = &dh1[o * c1..(o + 1) * c1];
        let p = &scene.patches1[o * 4 * c..(o + 1) * 4 * c];
        affine_backward(model.p(&l.conv1_w), p, g, &mut grad[l.conv1_w.clone()], None);
        grad[l.conv1_b.clone()].iter_mut().zip(g).for_each(|(a, b)| *a += b);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> ModelConfig {
        ModelConfig::test_dims(20, 3, 4, 5)
    }

    fn random_pooled(seed: u64, c: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..POOLED * POOLED * c).map(|_| rng.random_range(0.0..1.0)).collect()
    }

    fn track(seed: u64, n: usize) -> Vec<Vec2> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| Vec2::new(rng.random_range(0.0..10.0), rng.random_range(0.0..10.0))).collect()
    }

    #[test]
    fn pairs_are_ordered_and_complete() {
        let all: Vec<_> = pairs().collect();
        assert_eq!(all.len(), 600);
        assert!(all.iter().all(|(i, j)| i != j));
        assert!(all.contains(&(3, 7)) && all.contains(&(7, 3)));
    }

    #[test]
    fn zero_model_gives_zero_features() {
        let m = Model::zeros(cfg()).unwrap();
        let scene = encode_scene(&m, &random_pooled(1, cfg().channels())).unwrap();
        assert!(scene.nodes.iter().all(|v| *v == 0.0));
        assert!(edge_phi(&m, &[1.0; 8], &[2.0; 8]).iter().all(|v| *v == 0.0));
        assert!(edge_theta(&m, &[1.0; 16], &[1.0; 8]).iter().all(|v| *v == 0.0));
        assert!(encode_motion(&m, &track(2, 3)).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn fused_feature_matches_explicit_pairs() {
        let m = Model::init(cfg(), 4).unwrap();
        let scene = encode_scene(&m, &random_pooled(5, cfg().channels())).unwrap();
        let past = track(6, 3);
        let t = encode_target(&m, &scene, &past).unwrap();
        let nodes: Vec<&[f64]> = scene.nodes.chunks(8).collect();
        let msgs: Vec<Vec<f64>> = pairs()
            .map(|(i, j)| edge_theta(&m, &edge_phi(&m, nodes[i], nodes[j]), &t.q))
            .collect();
        let f = aggregate(&msgs);
        for (a, b) in f.iter().zip(&t.f) {
            assert!((a - b).abs() < 1e-9 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn motion_rejects_wrong_length_and_orders_time() {
        let m = Model::init(cfg(), 4).unwrap();
        assert!(matches!(encode_motion(&m, &track(1, 4)), Err(Error::Range(_))));
        let p = track(2, 3);
        let mut rev = p.clone();
        rev.reverse();
        assert_ne!(encode_motion(&m, &p).unwrap(), encode_motion(&m, &rev).unwrap());
        let still = vec![Vec2::new(3.0, 3.0); 3];
        assert!(encode_motion(&m, &still).unwrap().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn pooled_shape_is_checked() {
        let m = Model::zeros(cfg()).unwrap();
        assert!(matches!(encode_scene(&m, &[0.0; 10]), Err(Error::Config(_))));
        let frames = vec![Grid::new(20, 20); 2];
        assert!(matches!(pool_input(&frames, &Grid::new(20, 20), &cfg()), Err(Error::Config(_))));
    }
}
