use super::layout::WorldLayout;
use super::Scenario;
use crate::error::{Error, Result};
use crate::geometry::Vec2;

/// One pseudo-LiDAR return.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanPoint {
    pub pos: Vec2,
    pub height: f64,
    pub intensity: f64,
}

pub const VEHICLE_LENGTH: f64 = 4.5;
pub const VEHICLE_WIDTH: f64 = 1.8;
pub const VEHICLE_HEIGHT: f64 = 1.5;
const VEHICLE_INTENSITY: f64 = 0.35;
const VEHICLE_SPACING: f64 = 0.3;

/// Static road surface: four returns per drivable world cell.
pub fn road_points(layout: &WorldLayout) -> Vec<ScanPoint> {
    let spec = layout.spec;
    let mut out = Vec::new();
    for r in 0..spec.h {
        for c in 0..spec.w {
            if layout.drivable.get(r, c) != 0 {
                continue;
            }
            let corner = spec.origin + Vec2::new(c as f64 * spec.res, r as f64 * spec.res);
            let intensity = layout.road_intensity(spec.center(r, c)) as f64;
            for (dx, dy) in [(0.25, 0.25), (0.75, 0.25), (0.25, 0.75), (0.75, 0.75)] {
                out.push(ScanPoint {
                    pos: corner + Vec2::new(dx * spec.res, dy * spec.res),
                    height: 0.0,
                    intensity,
                });
            }
        }
    }
    out
}

/// Box-shaped return cluster for a vehicle at `pos` facing `heading`.
pub fn agent_points(pos: Vec2, heading: f64) -> Vec<ScanPoint> {
    let nx = (VEHICLE_LENGTH / VEHICLE_SPACING).round() as usize;
    let ny = (VEHICLE_WIDTH / VEHICLE_SPACING).round() as usize;
    let mut out = Vec::with_capacity(nx * ny);
    for i in 0..nx {
        for j in 0..ny {
            let local = Vec2::new(
                (i as f64 + 0.5) * VEHICLE_SPACING - VEHICLE_LENGTH / 2.0,
                (j as f64 + 0.5) * VEHICLE_SPACING - VEHICLE_WIDTH / 2.0,
            );
            out.push(ScanPoint {
                pos: pos + local.rotate(heading),
                height: VEHICLE_HEIGHT,
                intensity: VEHICLE_INTENSITY,
            });
        }
    }
    out
}

/// World-frame point sets for frames `t0-τ+1 ..= t0`, oldest first.
pub fn render_synthetic_frames(scenario: &Scenario, t0: usize, tau: usize) -> Result<Vec<Vec<ScanPoint>>> {
    if tau == 0 || t0 + 1 < tau {
        return Err(Error::Range(format!(
            "window of {tau} frames ending at {t0} starts before frame 0"
        )));
    }
    if t0 >= scenario.frame_count().max(1) {
        return Err(Error::Range(format!(
            "frame {t0} beyond the scenario's {} frames",
            scenario.frame_count()
        )));
    }
    let road = road_points(&scenario.layout);
    Ok((t0 + 1 - tau..=t0)
        .map(|t| {
            let mut pts = road.clone();
            for track in &scenario.tracks {
                if let Some(st) = track.state_at(t as u32) {
                    pts.extend(agent_points(st.pos, st.heading));
                }
            }
            pts
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenegen::{generate_scenario, GeneratorConfig};
    use std::collections::BTreeSet;

    fn footprint(points: &[ScanPoint], res: f64) -> BTreeSet<(i64, i64)> {
        points
            .iter()
            .map(|p| ((p.pos.x / res).floor() as i64, (p.pos.y / res).floor() as i64))
            .collect()
    }

    #[test]
    fn empty_scene_renders_road_only() {
        let mut s = generate_scenario(1, None, &GeneratorConfig::default()).unwrap();
        let n = s.frame_count();
        s.tracks.iter_mut().for_each(|t| t.states.retain(|st| st.t == n as u32 - 1));
        let frames = render_synthetic_frames(&s, 10, 5).unwrap();
        let road = road_points(&s.layout);
        assert!(frames.iter().all(|f| f == &road));
        assert!(frames[0].iter().all(|p| p.height == 0.0));
    }

    #[test]
    fn parked_agent_cluster_is_constant() {
        let a = agent_points(Vec2::new(3.0, 4.0), 0.7);
        let b = agent_points(Vec2::new(3.0, 4.0), 0.7);
        assert_eq!(a, b);
        assert!(a.iter().all(|p| p.height == VEHICLE_HEIGHT));
    }

    #[test]
    fn distant_agents_have_disjoint_footprints() {
        let a = agent_points(Vec2::new(0.0, 0.0), 0.3);
        let b = agent_points(Vec2::new(30.0, 0.0), 1.2);
        let fa = footprint(&a, 0.5);
        let fb = footprint(&b, 0.5);
        assert!(fa.is_disjoint(&fb));
    }

    #[test]
    fn window_bounds() {
        let s = generate_scenario(2, None, &GeneratorConfig::default()).unwrap();
        assert!(matches!(render_synthetic_frames(&s, 3, 5), Err(Error::Range(_))));
        assert_eq!(render_synthetic_frames(&s, 19, 20).unwrap().len(), 20);
    }
}
