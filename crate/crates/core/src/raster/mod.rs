//! Point sets to top-down raster channels, the static map, the ego-anchored
//! local frame, and the heatmap codecs.

mod plot;
mod tensor;

pub use plot::{write_ppm, Overlay, Rgb};
pub use tensor::{read_tensor, write_tensor, Tensor};

use crate::error::{Error, Result};
use crate::geometry::{wrap_pi, Vec2};
use crate::grid::{Grid, GridSpec};
use crate::scenegen::{render_synthetic_frames, road_points, AgentTrack, ScanPoint, Scenario, WorldLayout};

pub const RASTER_CELLS: usize = 160;
pub const RASTER_RES: f64 = 0.5;
/// Heights are clipped to this value before scaling to [0, 1].
pub const HEIGHT_CAP: f64 = 3.0;
/// Width of the Gaussian heatmap targets, in cells.
pub const HEATMAP_SIGMA_CELLS: f64 = 2.0;

/// Per-cell height, intensity and density.
pub type RasterFrame = Grid<[f32; 3]>;

/// `min(1, log(count + 1) / log 64)`.
pub fn density_channel(count: u32) -> f64 {
    ((count as f64 + 1.0).ln() / 64f64.ln()).min(1.0)
}

/// Max height (capped, scaled), max intensity and log-density per cell.
/// Points must already be in the grid's frame; points outside are dropped.
pub fn rasterize_frame(points: &[ScanPoint], spec: &GridSpec) -> RasterFrame {
    let mut counts = vec![0u32; spec.len()];
    let mut out: RasterFrame = Grid::new(spec.h, spec.w);
    for p in points {
        let Some((r, c)) = spec.cell_of(p.pos) else {
            continue;
        };
        let i = r * spec.w + c;
        counts[i] += 1;
        let h = (p.height.clamp(0.0, HEIGHT_CAP) / HEIGHT_CAP) as f32;
        let it = p.intensity.clamp(0.0, 1.0) as f32;
        let cell = &mut out.data[i];
        cell[0] = cell[0].max(h);
        cell[1] = cell[1].max(it);
    }
    for (cell, &n) in out.data.iter_mut().zip(&counts) {
        cell[2] = density_channel(n) as f32;
    }
    out
}

/// Rigid transform placing the ego pose at `t_ref` on a fixed anchor, facing +x.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalFrame {
    pub ego_pos: Vec2,
    pub ego_heading: f64,
    pub anchor: Vec2,
}

impl LocalFrame {
    /// Anchor for an `h × w` raster: a fifth of the way in along x, centered in y.
    pub fn anchor_for(spec: &GridSpec) -> Vec2 {
        spec.origin + Vec2::new(0.2 * spec.w as f64 * spec.res, 0.5 * spec.h as f64 * spec.res)
    }

    pub fn new(ego_pos: Vec2, ego_heading: f64, anchor: Vec2) -> Self {
        LocalFrame {
            ego_pos,
            ego_heading,
            anchor,
        }
    }

    /// Frame anchored on the ego state at `t_ref`.
    pub fn from_scenario(scenario: &Scenario, t_ref: usize, spec: &GridSpec) -> Result<Self> {
        let ego = scenario
            .ego()
            .ok_or_else(|| Error::Range(format!("scenario has no ego agent {}", scenario.ego_id)))?;
        let st = ego
            .state_at(t_ref as u32)
            .ok_or_else(|| Error::Range(format!("ego has no state at frame {t_ref}")))?;
        Ok(LocalFrame::new(st.pos, st.heading, LocalFrame::anchor_for(spec)))
    }

    pub fn to_local(&self, p: Vec2) -> Vec2 {
        (p - self.ego_pos).rotate(-self.ego_heading) + self.anchor
    }

    pub fn to_world(&self, p: Vec2) -> Vec2 {
        (p - self.anchor).rotate(self.ego_heading) + self.ego_pos
    }

    pub fn heading_to_local(&self, heading: f64) -> f64 {
        wrap_pi(heading - self.ego_heading)
    }

    pub fn points_to_local(&self, points: &[ScanPoint]) -> Vec<ScanPoint> {
        points
            .iter()
            .map(|p| ScanPoint {
                pos: self.to_local(p.pos),
                ..*p
            })
            .collect()
    }

    pub fn track_to_local(&self, track: &AgentTrack) -> AgentTrack {
        let mut out = track.clone();
        for st in &mut out.states {
            st.pos = self.to_local(st.pos);
            st.heading = self.heading_to_local(st.heading);
        }
        out
    }
}

/// Observation window rendered into the ego-anchored frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneRaster {
    pub frames: Vec<RasterFrame>,
    pub map: Grid<f32>,
    pub spec: GridSpec,
    /// Frame index of the last observation.
    pub t0: usize,
    pub frame: LocalFrame,
}

impl SceneRaster {
    pub fn tau(&self) -> usize {
        self.frames.len()
    }
}

/// Local raster spec: `h × w` cells with cell (0, 0) at the local origin.
pub fn local_spec(h: usize, w: usize, res: f64) -> GridSpec {
    GridSpec::new(h, w, res, Vec2::ZERO)
}

pub fn build_scene_raster(scenario: &Scenario, t0: usize, tau: usize, spec: &GridSpec) -> Result<SceneRaster> {
    let t_ref = (t0 + 1)
        .checked_sub(tau)
        .ok_or_else(|| Error::Range(format!("τ = {tau} exceeds t0 + 1 = {}", t0 + 1)))?;
    let frame = LocalFrame::from_scenario(scenario, t_ref, spec)?;
    let frames = render_synthetic_frames(scenario, t0, tau)?
        .iter()
        .map(|pts| rasterize_frame(&frame.points_to_local(pts), spec))
        .collect();
    Ok(SceneRaster {
        frames,
        map: static_map(&scenario.layout, &frame, spec),
        spec: *spec,
        t0,
        frame,
    })
}

/// Intensity of the static road surface in the frame at `t0 - τ + 1`.
pub fn build_map(scenario: &Scenario, t0: usize, tau: usize, spec: &GridSpec) -> Result<Grid<f32>> {
    let t_ref = (t0 + 1)
        .checked_sub(tau)
        .ok_or_else(|| Error::Range(format!("τ = {tau} exceeds t0 + 1 = {}", t0 + 1)))?;
    let frame = LocalFrame::from_scenario(scenario, t_ref, spec)?;
    Ok(static_map(&scenario.layout, &frame, spec))
}

fn static_map(layout: &WorldLayout, frame: &LocalFrame, spec: &GridSpec) -> Grid<f32> {
    let raster = rasterize_frame(&frame.points_to_local(&road_points(layout)), spec);
    Grid::from_vec(spec.h, spec.w, raster.data.iter().map(|c| c[1]).collect())
}

/// Drivable mask resampled into the local frame (1 = not drivable; cells
/// outside the world extent count as not drivable).
pub fn local_drivable(layout: &WorldLayout, frame: &LocalFrame, spec: &GridSpec) -> Grid<u8> {
    let mut out = Grid::filled(spec.h, spec.w, 1u8);
    for r in 0..spec.h {
        for c in 0..spec.w {
            if layout.is_drivable(frame.to_world(spec.center(r, c))) {
                out.set(r, c, 0);
            }
        }
    }
    out
}

/// δ per-step likelihood grids for one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapSequence {
    pub maps: Vec<Grid<f64>>,
    pub agent_id: u32,
}

impl HeatmapSequence {
    pub fn delta(&self) -> usize {
        self.maps.len()
    }

    /// Checks positivity and unit mass of every grid.
    pub fn validate(&self, tol: f64) -> Result<()> {
        for (t, m) in self.maps.iter().enumerate() {
            if !m.data.iter().any(|&v| v > 0.0) {
                return Err(Error::Degenerate(format!("step {t} has no positive cell")));
            }
            let s: f64 = m.data.iter().sum();
            if (s - 1.0).abs() > tol || m.data.iter().any(|&v| v < 0.0 || !v.is_finite()) {
                return Err(Error::Degenerate(format!("step {t} sums to {s}")));
            }
        }
        Ok(())
    }

    pub fn decode(&self, spec: &GridSpec) -> Result<Vec<Vec2>> {
        self.maps.iter().map(|m| decode_heatmap(m, spec)).collect()
    }
}

/// Normalized 1D Gaussian weights over `n` cells centered on cell `center`.
pub fn gaussian_axis(n: usize, center: usize, sigma_cells: f64) -> Vec<f64> {
    let inv = 1.0 / (2.0 * sigma_cells * sigma_cells);
    let mut g: Vec<f64> = (0..n)
        .map(|i| {
            let d = i as f64 - center as f64;
            (-d * d * inv).exp()
        })
        .collect();
    let s: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= s);
    g
}

/// Isotropic Gaussian bump on the cell containing `coord`, summing to 1.
pub fn encode_heatmap(coord: Vec2, sigma: f64, spec: &GridSpec) -> Result<Grid<f64>> {
    if !(sigma > 0.0) {
        return Err(Error::Range(format!("sigma must be positive, got {sigma}")));
    }
    let (row, col) = spec
        .cell_of(coord)
        .ok_or_else(|| Error::Range(format!("({}, {}) lies outside the raster", coord.x, coord.y)))?;
    let s = sigma / spec.res;
    let gx = gaussian_axis(spec.w, col, s);
    let gy = gaussian_axis(spec.h, row, s);
    let mut g = Grid::new(spec.h, spec.w);
    for r in 0..spec.h {
        for c in 0..spec.w {
            g.set(r, c, gy[r] * gx[c]);
        }
    }
    Ok(g)
}

/// Center of the argmax cell; ties resolve to the first cell in row-major order.
pub fn decode_heatmap(grid: &Grid<f64>, spec: &GridSpec) -> Result<Vec2> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in grid.data.iter().enumerate() {
        if v > 0.0 && best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    let (i, _) = best.ok_or_else(|| Error::Degenerate("heatmap has no positive cell".into()))?;
    Ok(spec.center(i / grid.w, i % grid.w))
}

/// Probability-weighted mean cell center.
pub fn soft_argmax(grid: &Grid<f64>, spec: &GridSpec) -> Vec2 {
    let mut acc = Vec2::ZERO;
    let mut mass = 0.0;
    for r in 0..grid.h {
        for c in 0..grid.w {
            let p = grid.get(r, c);
            acc = acc + spec.center(r, c) * p;
            mass += p;
        }
    }
    if mass > 0.0 {
        acc * (1.0 / mass)
    } else {
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenegen::{generate_scenario, GeneratorConfig};

    fn spec() -> GridSpec {
        local_spec(RASTER_CELLS, RASTER_CELLS, RASTER_RES)
    }

    #[test]
    fn density_values() {
        assert_eq!(density_channel(0), 0.0);
        assert!((density_channel(63) - 1.0).abs() < 1e-12);
        assert!((density_channel(7) - 0.5).abs() < 1e-12);
        assert_eq!(density_channel(1000), 1.0);
    }

    #[test]
    fn rasterize_max_rule() {
        let s = spec();
        assert!(rasterize_frame(&[], &s).data.iter().all(|c| *c == [0.0; 3]));
        let pts = [
            ScanPoint { pos: Vec2::new(10.1, 10.1), height: 1.0, intensity: 0.2 },
            ScanPoint { pos: Vec2::new(10.2, 10.3), height: 2.0, intensity: 0.1 },
        ];
        let g = rasterize_frame(&pts, &s);
        let cell = g.get(20, 20);
        assert!((cell[0] as f64 - 2.0 / 3.0).abs() < 1e-6);
        assert!((cell[1] as f64 - 0.2).abs() < 1e-6);
        assert!((cell[2] as f64 - density_channel(2)).abs() < 1e-6);
        let one = rasterize_frame(&[ScanPoint { pos: Vec2::ZERO, height: 1.0, intensity: 1.0 }], &s);
        assert_eq!(one.data.iter().filter(|c| **c != [0.0; 3]).count(), 1);
    }

    #[test]
    fn local_frame_anchor_and_round_trip() {
        let sc = generate_scenario(3, None, &GeneratorConfig::default()).unwrap();
        let s = spec();
        let f = LocalFrame::from_scenario(&sc, 0, &s).unwrap();
        let ego0 = sc.ego().unwrap().states[0];
        assert!(f.to_local(ego0.pos).dist(f.anchor) < 1e-12);
        let ahead = ego0.pos + Vec2::from_angle(ego0.heading) * 5.0;
        let l = f.to_local(ahead);
        assert!((l.x - (f.anchor.x + 5.0)).abs() < 1e-9 && (l.y - f.anchor.y).abs() < 1e-9);
        let p = Vec2::new(12.3, -7.7);
        assert!(f.to_local(f.to_world(p)).dist(p) < 1e-9);
        assert!(LocalFrame::from_scenario(&sc, 500, &s).is_err());
    }

    #[test]
    fn map_ignores_agents() {
        let sc = generate_scenario(4, None, &GeneratorConfig::default()).unwrap();
        let s = spec();
        let with = build_map(&sc, 19, 20, &s).unwrap();
        let mut alone = sc.clone();
        alone.tracks.retain(|t| t.agent_id == sc.ego_id);
        assert_eq!(build_map(&alone, 19, 20, &s).unwrap(), with);
        let raster = build_scene_raster(&sc, 19, 20, &s).unwrap();
        assert_eq!(raster.map, with);
        assert_eq!(raster.frames.len(), 20);
        assert!(raster
            .frames
            .iter()
            .flat_map(|f| f.data.iter())
            .all(|c| c.iter().all(|v| (0.0..=1.0).contains(v))));
    }

    #[test]
    fn heatmap_codec() {
        let s = spec();
        let c = Vec2::new(23.3, 51.8);
        let g = encode_heatmap(c, 1.0, &s).unwrap();
        assert!((g.data.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let d = decode_heatmap(&g, &s).unwrap();
        assert_eq!(s.cell_of(d), s.cell_of(c));
        let g1 = encode_heatmap(Vec2::new(40.1, 40.1), 0.5, &s).unwrap();
        let (r, col) = s.cell_of(Vec2::new(40.1, 40.1)).unwrap();
        let ratio = g1.get(r, col) / g1.get(r, col + 1);
        assert!((ratio - 0.5f64.exp()).abs() < 1e-9);
        assert!(encode_heatmap(Vec2::new(-1.0, 3.0), 1.0, &s).is_err());
    }

    #[test]
    fn decode_ties_and_degenerate() {
        let s = spec();
        let mut g = Grid::new(s.h, s.w);
        g.set(10, 20, 1.0);
        assert_eq!(decode_heatmap(&g, &s).unwrap(), s.center(10, 20));
        let mut t = Grid::new(s.h, s.w);
        t.set(7, 7, 0.5);
        t.set(3, 3, 0.5);
        assert_eq!(decode_heatmap(&t, &s).unwrap(), s.center(3, 3));
        assert!(matches!(decode_heatmap(&Grid::new(s.h, s.w), &s), Err(Error::Degenerate(_))));
    }
}
