//! Model-ready views of a scenario: pooled raster input, static map,
//! drivable mask and per-target past/future in the local frame.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::grid::{Grid, GridSpec};
use crate::model::ModelConfig;
use crate::raster::{build_scene_raster, gaussian_axis, local_drivable, LocalFrame, HEATMAP_SIGMA_CELLS};
use crate::relnet::pool_raster;
use crate::scenegen::{Maneuver, Scenario};

/// Half-width, in cells, of the window that holds a target bump's mass.
pub const TARGET_RADIUS_CELLS: usize = 12;

/// How goal zones are labelled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GoalMode {
    /// Five intersection zones (G = 5).
    Intersection,
    /// 5×5 partition of the local raster holding the final position (G = 25).
    Grid25,
}

impl GoalMode {
    pub fn zones(self) -> usize {
        match self {
            GoalMode::Intersection => 5,
            GoalMode::Grid25 => 25,
        }
    }
}

impl fmt::Display for GoalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GoalMode::Intersection => "intersection",
            GoalMode::Grid25 => "grid25",
        })
    }
}

impl FromStr for GoalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "intersection" => Ok(GoalMode::Intersection),
            "grid25" => Ok(GoalMode::Grid25),
            _ => Err(Error::Config(format!("unknown mode {s:?} (intersection, grid25)"))),
        }
    }
}

/// Target bump for one future step, stored as separable row/column weights
/// normalized over the full grid and truncated to a window.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetStep {
    pub row: usize,
    pub col: usize,
    pub r0: usize,
    pub c0: usize,
    pub wy: Vec<f64>,
    pub wx: Vec<f64>,
    /// Probability-weighted center of the full bump.
    pub soft: Vec2,
}

impl TargetStep {
    pub fn new(p: Vec2, spec: &GridSpec) -> Result<TargetStep> {
        let (row, col) = spec
            .cell_of(p)
            .ok_or_else(|| Error::Range(format!("({}, {}) lies outside the raster", p.x, p.y)))?;
        let gy = gaussian_axis(spec.h, row, HEATMAP_SIGMA_CELLS);
        let gx = gaussian_axis(spec.w, col, HEATMAP_SIGMA_CELLS);
        let soft = Vec2::new(
            gx.iter().enumerate().map(|(c, w)| w * spec.center(0, c).x).sum(),
            gy.iter().enumerate().map(|(r, w)| w * spec.center(r, 0).y).sum(),
        );
        let k = TARGET_RADIUS_CELLS;
        let (r0, r1) = (row.saturating_sub(k), (row + k).min(spec.h - 1));
        let (c0, c1) = (col.saturating_sub(k), (col + k).min(spec.w - 1));
        Ok(TargetStep {
            row,
            col,
            r0,
            c0,
            wy: gy[r0..=r1].to_vec(),
            wx: gx[c0..=c1].to_vec(),
            soft,
        })
    }

    pub fn rows(&self) -> std::ops::RangeInclusive<usize> {
        self.r0..=self.r0 + self.wy.len() - 1
    }

    pub fn cols(&self) -> std::ops::RangeInclusive<usize> {
        self.c0..=self.c0 + self.wx.len() - 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetSample {
    pub agent_id: u32,
    pub maneuver: Maneuver,
    /// 1-based goal zone.
    pub goal: usize,
    pub past: Vec<Vec2>,
    pub future: Vec<Vec2>,
    pub steps: Vec<TargetStep>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSample {
    pub seed: u64,
    pub spec: GridSpec,
    pub pooled: Vec<f64>,
    pub map: Grid<f32>,
    /// 1 = not drivable.
    pub drivable: Grid<u8>,
    pub frame: LocalFrame,
    pub targets: Vec<TargetSample>,
}

/// Goal zone of a local final position under `mode`.
pub fn grid25_zone(p: Vec2, spec: &GridSpec) -> Option<usize> {
    let (r, c) = spec.cell_of(p)?;
    Some((r * 5 / spec.h) * 5 + c * 5 / spec.w + 1)
}

/// Builds the observation window ending at frame `τ − 1` and collects every
/// agent whose full track stays inside the raster.
pub fn build_scene_sample(scenario: &Scenario, cfg: &ModelConfig, mode: GoalMode) -> Result<SceneSample> {
    let spec = cfg.spec();
    let t0 = cfg.tau - 1;
    let total = cfg.tau + cfg.delta;
    if scenario.frame_count() < total {
        return Err(Error::Config(format!(
            "scenario has {} frames, τ + δ = {total}",
            scenario.frame_count()
        )));
    }
    let raster = build_scene_raster(scenario, t0, cfg.tau, &spec)?;
    let pooled = pool_raster(&raster, cfg)?;
    let drivable = local_drivable(&scenario.layout, &raster.frame, &spec);
    let mut targets = Vec::new();
    for track in &scenario.tracks {
        let local: Vec<Vec2> = (0..total)
            .filter_map(|t| track.state_at(t as u32))
            .map(|s| raster.frame.to_local(s.pos))
            .collect();
        if local.len() != total || !local.iter().all(|p| spec.contains(*p)) {
            continue;
        }
        let goal = match mode {
            GoalMode::Intersection => track.goal_zone as usize,
            GoalMode::Grid25 => grid25_zone(local[total - 1], &spec).unwrap_or(0),
        };
        if goal == 0 || goal > mode.zones() {
            continue;
        }
        let future = local[cfg.tau..].to_vec();
        let steps = future.iter().map(|p| TargetStep::new(*p, &spec)).collect::<Result<_>>()?;
        targets.push(TargetSample {
            agent_id: track.agent_id,
            maneuver: track.maneuver,
            goal,
            past: local[..cfg.tau].to_vec(),
            future,
            steps,
        });
    }
    Ok(SceneSample {
        seed: scenario.seed,
        spec,
        pooled,
        map: raster.map,
        drivable,
        frame: raster.frame,
        targets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::encode_heatmap;
    use crate::scenegen::{generate_scenario, GeneratorConfig};

    #[test]
    fn target_step_matches_full_heatmap() {
        let spec = GridSpec::new(40, 40, 0.5, Vec2::ZERO);
        let p = Vec2::new(3.2, 17.9);
        let st = TargetStep::new(p, &spec).unwrap();
        let full = encode_heatmap(p, HEATMAP_SIGMA_CELLS * spec.res, &spec).unwrap();
        for (i, r) in st.rows().enumerate() {
            for (j, c) in st.cols().enumerate() {
                assert!((st.wy[i] * st.wx[j] - full.get(r, c)).abs() < 1e-15);
            }
        }
        let soft = crate::raster::soft_argmax(&full, &spec);
        assert!(soft.dist(st.soft) < 1e-9);
    }

    #[test]
    fn grid25_zones() {
        let spec = GridSpec::new(160, 160, 0.5, Vec2::ZERO);
        assert_eq!(grid25_zone(Vec2::new(0.1, 0.1), &spec), Some(1));
        assert_eq!(grid25_zone(Vec2::new(79.9, 79.9), &spec), Some(25));
        assert_eq!(grid25_zone(Vec2::new(17.0, 0.1), &spec), Some(2));
        assert_eq!(grid25_zone(Vec2::new(0.1, 17.0), &spec), Some(6));
    }

    #[test]
    fn ego_is_usually_a_target() {
        let cfg = ModelConfig::test_dims(160, 20, 40, 5);
        let mut ego_hits = 0;
        for seed in 0..10 {
            let sc = generate_scenario(seed, None, &GeneratorConfig::default()).unwrap();
            let s = build_scene_sample(&sc, &cfg, GoalMode::Intersection).unwrap();
            assert_eq!(s.pooled.len(), 20 * 20 * cfg.channels());
            for t in &s.targets {
                assert_eq!(t.past.len(), 20);
                assert_eq!(t.future.len(), 40);
                assert!((1..=5).contains(&t.goal));
            }
            ego_hits += usize::from(s.targets.iter().any(|t| t.agent_id == 0));
            let ego = s.targets.iter().find(|t| t.agent_id == 0);
            if let Some(e) = ego {
                assert!(e.past[0].dist(s.frame.anchor) < 1e-9);
            }
        }
        assert!(ego_hits >= 7, "{ego_hits}");
    }
}
