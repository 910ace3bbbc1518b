//! Central finite-difference checks for hand-written gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::geometry::Vec2;
use crate::grid::{Grid, GridSpec};
use crate::losses::LossWeights;
use crate::model::{Model, POOLED};
use crate::predictor::{batch_objective, BatchItem};
use crate::raster::LocalFrame;
use crate::sample::{SceneSample, TargetSample, TargetStep};
use crate::scenegen::Maneuver;

/// Outcome of one directional derivative comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectionalCheck {
    pub analytic: f64,
    pub numeric: f64,
}

impl DirectionalCheck {
    pub fn rel_err(&self) -> f64 {
        (self.analytic - self.numeric).abs() / self.analytic.abs().max(self.numeric.abs()).max(1e-12)
    }
}

/// Compares `grad · dir` with `(f(x + h·dir) − f(x − h·dir)) / 2h`.
pub fn directional(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], grad: &[f64], dir: &[f64], h: f64) -> DirectionalCheck {
    let analytic = grad.iter().zip(dir).map(|(g, d)| g * d).sum();
    let plus: Vec<f64> = x.iter().zip(dir).map(|(a, d)| a + h * d).collect();
    let minus: Vec<f64> = x.iter().zip(dir).map(|(a, d)| a - h * d).collect();
    DirectionalCheck {
        analytic,
        numeric: (f(&plus) - f(&minus)) / (2.0 * h),
    }
}

/// Random direction supported on `range`, unit norm.
pub fn random_direction(n: usize, range: std::ops::Range<usize>, rng: &mut impl Rng) -> Vec<f64> {
    let mut d = vec![0.0; n];
    for v in &mut d[range] {
        *v = StandardNormal.sample(rng);
    }
    let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
    d.iter_mut().for_each(|v| *v /= norm);
    d
}

/// Small synthetic scene for gradient checks at `model`'s dimensions: random
/// pooled input, map and mask, and `targets` random-walk agents.
pub fn synthetic_scene(model: &Model, targets: usize, seed: u64) -> SceneSample {
    let cfg = &model.cfg;
    let spec = GridSpec::new(cfg.h, cfg.w, cfg.res, Vec2::ZERO);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pooled = (0..POOLED * POOLED * cfg.channels()).map(|_| rng.random_range(0.0..1.0)).collect();
    let map = Grid::from_vec(cfg.h, cfg.w, (0..spec.len()).map(|_| rng.random_range(0.0..1.0f32)).collect());
    let drivable = Grid::from_vec(cfg.h, cfg.w, (0..spec.len()).map(|_| u8::from(rng.random_bool(0.4))).collect());
    let extent = cfg.w as f64 * cfg.res;
    let mut ts = Vec::new();
    for k in 0..targets {
        let mut p = Vec2::new(rng.random_range(0.3..0.5) * extent, rng.random_range(0.3..0.7) * extent);
        let mut v = Vec2::new(rng.random_range(0.1..0.4), rng.random_range(-0.2..0.2));
        let mut pts = Vec::new();
        for _ in 0..cfg.tau + cfg.delta {
            pts.push(p);
            v = v + Vec2::new(rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05));
            p = p + v;
            p = Vec2::new(p.x.clamp(0.1, extent - 0.1), p.y.clamp(0.1, extent - 0.1));
        }
        let future = pts[cfg.tau..].to_vec();
        ts.push(TargetSample {
            agent_id: k as u32,
            maneuver: Maneuver::Straight,
            goal: rng.random_range(1..=cfg.g),
            past: pts[..cfg.tau].to_vec(),
            steps: future.iter().map(|p| TargetStep::new(*p, &spec).expect("inside")).collect(),
            future,
        });
    }
    SceneSample {
        seed,
        spec,
        pooled,
        map,
        drivable,
        frame: LocalFrame::new(Vec2::ZERO, 0.0, Vec2::ZERO),
        targets: ts,
    }
}

/// Directional checks of the full training objective on every parameter
/// group of `model`, `per_group` random directions each.
pub fn check_objective(model: &Model, scene: &SceneSample, weights: &LossWeights, per_group: usize, seed: u64) -> Vec<(String, DirectionalCheck)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let items: Vec<BatchItem> = (0..scene.targets.len())
        .map(|t| BatchItem {
            scene,
            target: t,
            noise: (0..model.cfg.latent).map(|_| StandardNormal.sample(&mut rng)).collect(),
        })
        .collect();
    let (_, grad) = batch_objective(model, &items, weights).expect("objective");
    let mut probe = model.clone();
    let mut f = |x: &[f64]| {
        probe.params.values.copy_from_slice(x);
        batch_objective(&probe, &items, weights).expect("objective").0.total
    };
    let mut out = Vec::new();
    for g in &model.params.groups {
        for _ in 0..per_group {
            let dir = random_direction(model.num_params(), g.range.clone(), &mut rng);
            out.push((g.name.clone(), directional(&mut f, &model.params.values, &grad, &dir, 1e-5)));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    #[test]
    fn objective_gradients_match_differences() {
        for (use_map, use_intention) in [(true, true), (false, false)] {
            let cfg = ModelConfig {
                use_map,
                use_intention,
                ..ModelConfig::test_dims(20, 3, 4, 5)
            };
            let model = Model::init(cfg, 3).unwrap();
            let scene = synthetic_scene(&model, 2, 4);
            let weights = LossWeights { zeta: 1.0, eta: 0.5, mu: 0.3 };
            for (name, c) in check_objective(&model, &scene, &weights, 2, 5) {
                assert!(c.rel_err() < 1e-4, "{name}: {c:?}");
                assert!(c.analytic.abs() > 1e-8, "{name} receives no gradient");
            }
        }
    }
}
