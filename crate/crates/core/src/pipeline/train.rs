//! Training loop over (scene, target) pairs with Adam.

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::losses::LossBreakdown;
use crate::model::Model;
use crate::predictor::{batch_objective, BatchItem};
use crate::sample::SceneSample;
use crate::util::derive_seed;

use super::checkpoint::Checkpoint;
use super::config::RunConfig;

const INIT_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;
const ORDER_STREAM: u64 = 3;
const PROBE_STREAM: u64 = 4;

pub fn init_checkpoint(cfg: &RunConfig) -> Result<Checkpoint> {
    cfg.validate()?;
    let model = Model::init(cfg.model(), derive_seed(cfg.seed, INIT_STREAM))?;
    Ok(Checkpoint::fresh(*cfg, model))
}

fn latent_noise(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Runs `cfg.epochs` epochs from a fresh initialization. Scenes are visited
/// in a per-epoch shuffled order; the targets of one scene stay adjacent so
/// they share a scene encoding. One log line per optimizer step, after the
/// config echo.
pub fn train(cfg: &RunConfig, scenes: &[SceneSample], log: &mut dyn Write) -> Result<Checkpoint> {
    let ck = init_checkpoint(cfg)?;
    continue_training(ck, scenes, cfg.epochs, log)
}

pub fn continue_training(mut ck: Checkpoint, scenes: &[SceneSample], epochs: usize, log: &mut dyn Write) -> Result<Checkpoint> {
    let cfg = ck.config;
    for line in cfg.echo().lines() {
        writeln!(log, "# {line}")?;
    }
    if scenes.iter().all(|s| s.targets.is_empty()) && epochs > 0 {
        return Err(Error::Config("training set has no eligible targets".into()));
    }
    let weights = cfg.weights();
    let mut noise_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, NOISE_STREAM ^ (ck.adam.step << 8)));
    let first_epoch = ck.adam.step;
    for epoch in 0..epochs as u64 {
        let mut order: Vec<usize> = (0..scenes.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, ORDER_STREAM ^ ((first_epoch + epoch) << 8)));
        order.shuffle(&mut rng);
        let pairs: Vec<(usize, usize)> = order
            .iter()
            .flat_map(|&s| (0..scenes[s].targets.len()).map(move |t| (s, t)))
            .collect();
        for chunk in pairs.chunks(cfg.batch_size) {
            let items: Vec<BatchItem> = chunk
                .iter()
                .map(|&(s, t)| BatchItem {
                    scene: &scenes[s],
                    target: t,
                    noise: latent_noise(&mut noise_rng, cfg.latent),
                })
                .collect();
            let start = Instant::now();
            let step = ck.adam.step + 1;
            let (loss, grad) = batch_objective(&ck.model, &items, &weights).map_err(|e| relabel(e, step))?;
            if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
                let name = ck
                    .model
                    .params
                    .groups
                    .iter()
                    .find(|g| g.range.contains(&i))
                    .map_or("gradient".to_string(), |g| format!("gradient of {}", g.name));
                return Err(Error::NonFinite { term: name, step });
            }
            ck.adam.update(&mut ck.model.params.values, &grad);
            writeln!(log, "{}", loss.log_line(step, start.elapsed().as_millis()))?;
        }
    }
    Ok(ck)
}

fn relabel(e: Error, step: u64) -> Error {
    match e {
        Error::NonFinite { term, .. } => Error::NonFinite { term, step },
        other => other,
    }
}

/// Mean loss over every (scene, target) pair with a fixed noise stream, so
/// two models can be compared on equal draws.
pub fn dataset_loss(model: &Model, cfg: &RunConfig, scenes: &[SceneSample]) -> Result<LossBreakdown> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, PROBE_STREAM));
    let items: Vec<BatchItem> = scenes
        .iter()
        .flat_map(|s| (0..s.targets.len()).map(move |t| (s, t)))
        .map(|(scene, target)| BatchItem {
            scene,
            target,
            noise: latent_noise(&mut rng, cfg.latent),
        })
        .collect();
    Ok(batch_objective(model, &items, &cfg.weights())?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::data::{build_samples, Split};
    use crate::scenegen::{generate_dataset, GeneratorConfig};

    fn small() -> (RunConfig, Vec<SceneSample>) {
        let mut cfg = RunConfig::test_dims();
        cfg.batch_size = 3;
        cfg.epochs = 1;
        let data = generate_dataset(3, 5, &GeneratorConfig::default()).unwrap();
        let scenes = build_samples(&data, &cfg, Split::All).unwrap();
        (cfg, scenes)
    }

    #[test]
    fn zero_epochs_is_init_and_runs_repeat() {
        let (mut cfg, scenes) = small();
        cfg.epochs = 0;
        let mut log = Vec::new();
        let ck = train(&cfg, &scenes, &mut log).unwrap();
        assert_eq!(ck, init_checkpoint(&cfg).unwrap());
        let text = String::from_utf8(log).unwrap();
        assert!(text.starts_with("# tau = 20\n"));

        cfg.epochs = 1;
        let a = train(&cfg, &scenes, &mut Vec::new()).unwrap();
        let b = train(&cfg, &scenes, &mut Vec::new()).unwrap();
        assert_eq!(a, b);
        assert!(a.step() > 0);
        assert_ne!(a.model, ck.model);
    }
}
