//! Held-out evaluation of a checkpoint or of the constant-velocity baseline.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::evalkit::{
    ade, const_vel_predict, fde, intention_map, min_ade_over_samples, min_fde_over_samples, offroad_counts,
    EvalReport, HorizonMetrics, Protocol, HORIZONS,
};
use crate::geometry::Vec2;
use crate::model::Model;
use crate::predictor::{generate, single_modal_predict, Observation, Strategy};
use crate::relnet::encode_scene;
use crate::sample::SceneSample;
use crate::scenegen::Maneuver;
use crate::util::{derive_seed, mix64};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub protocol: Protocol,
    pub samples: usize,
    pub strategy: Strategy,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            protocol: Protocol::Single,
            samples: 20,
            strategy: Strategy::Best,
            seed: 0,
        }
    }
}

/// Per-agent errors at each reported horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentResult {
    pub scene_seed: u64,
    pub agent_id: u32,
    pub maneuver: Maneuver,
    pub goal: usize,
    pub predicted_goal: Option<usize>,
    pub ade: Vec<f64>,
    pub fde: Vec<f64>,
    pub min_fde: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: EvalReport,
    pub agents: Vec<AgentResult>,
}

impl Evaluation {
    /// Mean ADE at horizon index `k` over agents passing `keep`.
    pub fn subset_ade(&self, k: usize, keep: impl Fn(&AgentResult) -> bool) -> Option<f64> {
        let v: Vec<f64> = self.agents.iter().filter(|a| keep(a)).map(|a| a.ade[k]).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

impl Evaluation {
    /// ADE per horizon for each maneuver present, plus the turning subset.
    pub fn maneuver_table(&self) -> String {
        let mut s = String::new();
        let mut rows: Vec<(String, Box<dyn Fn(&AgentResult) -> bool>)> = Maneuver::ALL
            .iter()
            .map(|m| {
                let m = *m;
                (m.as_str().to_string(), Box::new(move |a: &AgentResult| a.maneuver == m) as Box<dyn Fn(&AgentResult) -> bool>)
            })
            .collect();
        rows.push(("turning".into(), Box::new(|a: &AgentResult| a.maneuver.is_turn())));
        for (name, keep) in rows {
            let n = self.agents.iter().filter(|a| keep(a)).count();
            if n == 0 {
                continue;
            }
            let cols: Vec<String> = (0..self.report.horizons.len())
                .map(|k| format!("{:.2}", self.subset_ade(k, &keep).unwrap_or(0.0)))
                .collect();
            let _ = writeln!(s, "{name:>13} n={n:<4} ADE {}", cols.join(" "));
        }
        s
    }
}

fn horizons(delta: usize) -> Vec<usize> {
    let h: Vec<usize> = HORIZONS.iter().copied().filter(|h| *h <= delta).collect();
    if h.is_empty() {
        vec![delta]
    } else {
        h
    }
}

struct Scored {
    ade: Vec<f64>,
    fde: Vec<f64>,
    min_fde: Option<Vec<f64>>,
}

fn score(trajs: &[Vec<Vec2>], truth: &[Vec2], hs: &[usize], multi: bool) -> Result<Scored> {
    let mut s = Scored {
        ade: Vec::new(),
        fde: Vec::new(),
        min_fde: multi.then(Vec::new),
    };
    for &h in hs {
        if multi {
            let (a, i) = min_ade_over_samples(trajs, truth, h)?;
            s.ade.push(a);
            s.fde.push(fde(&trajs[i], truth, h)?);
            if let Some(m) = &mut s.min_fde {
                m.push(min_fde_over_samples(trajs, truth, h)?.0);
            }
        } else {
            s.ade.push(ade(&trajs[0], truth, h)?);
            s.fde.push(fde(&trajs[0], truth, h)?);
        }
    }
    Ok(s)
}

/// Evaluates `model` (or the constant-velocity baseline when `None`) on every
/// target of `scenes`. Multi-protocol FDE comes from the min-ADE sample; the
/// independent min-FDE is reported alongside.
pub fn evaluate(model: Option<&Model>, scenes: &[SceneSample], delta: usize, opts: &EvalOptions) -> Result<Evaluation> {
    if let Some(m) = model {
        if m.cfg.delta != delta {
            return Err(Error::Config(format!("model horizon {} differs from {delta}", m.cfg.delta)));
        }
    }
    let multi = opts.protocol == Protocol::Multi;
    if multi && opts.samples == 0 {
        return Err(Error::Config("multi protocol needs at least one sample".into()));
    }
    let hs = horizons(delta);
    let mut agents = Vec::new();
    let mut dists = Vec::new();
    let mut truths = Vec::new();
    let (mut off, mut total) = (0usize, 0usize);
    for scene in scenes {
        let enc = match model {
            Some(m) => Some(encode_scene(m, &scene.pooled)?),
            None => None,
        };
        for t in &scene.targets {
            let mut predicted_goal = None;
            let trajs: Vec<Vec<Vec2>> = match (model, &enc) {
                (Some(m), Some(enc)) => {
                    let obs = Observation::new(m, enc, &t.past)?;
                    if let Some(d) = obs.intention(m) {
                        predicted_goal = Some(d.argmax());
                        dists.push(d.probs);
                        truths.push(t.goal);
                    }
                    let preds = if multi {
                        let seed = derive_seed(opts.seed, mix64(scene.seed) ^ u64::from(t.agent_id));
                        generate(m, &obs, &scene.map, opts.strategy, opts.samples, seed)?
                    } else {
                        vec![single_modal_predict(m, &obs, &scene.map)?]
                    };
                    preds.iter().map(|p| p.points(&scene.spec)).collect()
                }
                _ => vec![const_vel_predict(&t.past, delta)?],
            };
            let (o, n) = offroad_counts(&trajs, &scene.drivable, &scene.spec);
            off += o;
            total += n;
            let s = score(&trajs, &t.future, &hs, multi)?;
            agents.push(AgentResult {
                scene_seed: scene.seed,
                agent_id: t.agent_id,
                maneuver: t.maneuver,
                goal: t.goal,
                predicted_goal,
                ade: s.ade,
                fde: s.fde,
                min_fde: s.min_fde,
            });
        }
    }
    let n = agents.len();
    let mean = |f: &dyn Fn(&AgentResult) -> f64| agents.iter().map(f).sum::<f64>() / n.max(1) as f64;
    let horizons_out = hs
        .iter()
        .enumerate()
        .map(|(k, &frames)| HorizonMetrics {
            frames,
            ade: mean(&|a| a.ade[k]),
            fde: mean(&|a| a.fde[k]),
        })
        .collect();
    let min_fde = multi.then(|| (0..hs.len()).map(|k| mean(&|a| a.min_fde.as_ref().map_or(0.0, |m| m[k]))).collect());
    let (intention_map_v, accuracy) = if dists.is_empty() {
        (None, None)
    } else {
        let hits = agents.iter().filter(|a| a.predicted_goal == Some(a.goal)).count();
        (Some(intention_map(&dists, &truths)?), Some(hits as f64 / dists.len() as f64))
    };
    let report = EvalReport {
        protocol: opts.protocol,
        samples: if multi { opts.samples } else { 1 },
        agents: n,
        horizons: horizons_out,
        min_fde,
        intention_map: intention_map_v,
        intention_accuracy: accuracy,
        penetration_rate: if total == 0 { 0.0 } else { off as f64 / total as f64 },
    };
    Ok(Evaluation { report, agents })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::config::RunConfig;
    use crate::pipeline::data::{build_samples, Split};
    use crate::scenegen::{generate_dataset, GeneratorConfig};

    #[test]
    fn baseline_and_protocol_equivalence() {
        let mut cfg = RunConfig::test_dims();
        cfg.no_intention = true;
        let data = generate_dataset(2, 8, &GeneratorConfig::default()).unwrap();
        let scenes = build_samples(&data, &cfg, Split::All).unwrap();
        let base = evaluate(None, &scenes, cfg.delta, &EvalOptions::default()).unwrap();
        assert!(base.report.agents > 0);
        assert!(base.report.intention_map.is_none());

        let m = Model::init(cfg.model(), 1).unwrap();
        let single = evaluate(Some(&m), &scenes, cfg.delta, &EvalOptions::default()).unwrap();
        let multi = evaluate(
            Some(&m),
            &scenes,
            cfg.delta,
            &EvalOptions {
                protocol: Protocol::Multi,
                samples: 1,
                ..EvalOptions::default()
            },
        )
        .unwrap();
        assert_eq!(single.report.horizons, multi.report.horizons);
    }
}
