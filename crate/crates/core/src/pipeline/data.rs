//! Dataset split and model-ready samples.

use crate::error::Result;
use crate::sample::{build_scene_sample, SceneSample};
use crate::scenegen::Scenario;
use crate::util::mix64;

use super::config::RunConfig;

/// One in five scenarios, chosen by a hash of the scenario seed.
pub fn is_held_out(seed: u64) -> bool {
    mix64(seed) % 5 == 0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
    All,
}

impl Split {
    pub fn contains(self, seed: u64) -> bool {
        match self {
            Split::Train => !is_held_out(seed),
            Split::Test => is_held_out(seed),
            Split::All => true,
        }
    }
}

impl std::str::FromStr for Split {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            "all" => Ok(Split::All),
            _ => Err(crate::Error::Config(format!("unknown split {s:?} (train, test, all)"))),
        }
    }
}

pub fn select<'a>(scenarios: &'a [Scenario], split: Split) -> Vec<&'a Scenario> {
    scenarios.iter().filter(|s| split.contains(s.seed)).collect()
}

/// Samples for the scenarios of `split`, in dataset order. Scenes without an
/// eligible target are dropped.
pub fn build_samples(scenarios: &[Scenario], cfg: &RunConfig, split: Split) -> Result<Vec<SceneSample>> {
    let model = cfg.model();
    let mut out = Vec::new();
    for s in select(scenarios, split) {
        let sample = build_scene_sample(s, &model, cfg.mode)?;
        if !sample.targets.is_empty() {
            out.push(sample);
        }
    }
    Ok(out)
}
