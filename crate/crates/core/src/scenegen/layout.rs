use crate::error::{Error, Result};
use crate::geometry::{line_intersection, wrap_two_pi, Polygon, Vec2};
use crate::grid::{Grid, GridSpec};
use crate::util::{mix64, unit_f64};

/// Cells per side of the world extent.
pub const WORLD_CELLS: usize = 160;
pub const WORLD_RES: f64 = 0.5;
/// Lanes per travel direction on every arm.
pub const LANES_PER_DIRECTION: u32 = 2;
/// Distance from the intersection center where arm goal zones begin.
pub const ZONE_START: f64 = 20.0;
pub const BOX_ZONE: u32 = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arm {
    /// Outward direction of the arm, radians.
    pub heading: f64,
    pub lane_width: f64,
    pub lanes: u32,
}

impl Arm {
    pub fn dir(&self) -> Vec2 {
        Vec2::from_angle(self.heading)
    }

    /// Left normal of the outward direction.
    pub fn normal(&self) -> Vec2 {
        self.dir().perp()
    }

    pub fn half_width(&self) -> f64 {
        self.lane_width * self.lanes as f64
    }

    /// Center line of inbound lane `lane` (0 = next to the median).
    /// Right-hand traffic puts inbound lanes on the arm's left normal.
    pub fn inbound_offset(&self, lane: usize) -> Vec2 {
        self.normal() * (self.lane_width * (lane as f64 + 0.5))
    }

    pub fn outbound_offset(&self, lane: usize) -> Vec2 {
        -self.normal() * (self.lane_width * (lane as f64 + 0.5))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Zone {
    pub id: u32,
    pub polygon: Polygon,
}

/// Static geometry of a four-way intersection centered on the world origin.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldLayout {
    pub spec: GridSpec,
    /// `arms[0]` is the ego approach arm.
    pub arms: Vec<Arm>,
    /// Zone id of each arm's outbound end, parallel to `arms`.
    pub arm_zone: Vec<u32>,
    /// 1 = not drivable, 0 = road.
    pub drivable: Grid<u8>,
    /// Sorted by id, ids `1..=G`.
    pub zones: Vec<Zone>,
    pub road_polygons: Vec<Polygon>,
    pub box_polygon: Polygon,
    pub seed: u64,
    base_intensity: f32,
}

impl WorldLayout {
    pub fn zone_count(&self) -> u32 {
        self.zones.len() as u32
    }

    pub fn lane_width(&self) -> f64 {
        self.arms[0].lane_width
    }

    pub fn half_width(&self) -> f64 {
        self.arms[0].half_width()
    }

    /// Arm indices in clockwise order starting at the ego approach arm.
    pub fn clockwise_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.arms.len()).collect();
        order.sort_by_key(|&k| self.arm_zone[k]);
        order
    }

    pub fn next_clockwise(&self, arm: usize) -> usize {
        let order = self.clockwise_order();
        let pos = order.iter().position(|&k| k == arm).expect("arm index");
        order[(pos + 1) % order.len()]
    }

    pub fn next_counter_clockwise(&self, arm: usize) -> usize {
        let order = self.clockwise_order();
        let pos = order.iter().position(|&k| k == arm).expect("arm index");
        order[(pos + order.len() - 1) % order.len()]
    }

    pub fn opposite(&self, arm: usize) -> usize {
        self.next_clockwise(self.next_clockwise(arm))
    }

    /// Where the inbound lane of `arm` enters the interior box.
    pub fn box_entry(&self, arm: usize, lane: usize) -> Option<Vec2> {
        let a = &self.arms[arm];
        let (right, left) = self.box_edge(arm);
        line_intersection(a.inbound_offset(lane), -a.dir(), right, left - right)
    }

    /// Box corners on the right and left edge of `arm`.
    fn box_edge(&self, arm: usize) -> (Vec2, Vec2) {
        let poly = &self.road_polygons[arm];
        (poly.vertices[1], poly.vertices[4])
    }

    pub fn is_drivable(&self, p: Vec2) -> bool {
        self.spec
            .cell_of(p)
            .is_some_and(|(r, c)| self.drivable.get(r, c) == 0)
    }

    /// Road-surface intensity at a world point, fixed per layout seed.
    pub fn road_intensity(&self, p: Vec2) -> f32 {
        let (cx, cy) = self.spec.to_cell_coords(p);
        let key = mix64(
            self.seed ^ mix64((cx.floor() as i64 as u64) ^ ((cy.floor() as i64 as u64) << 32)),
        );
        let noise = (unit_f64(key) - 0.5) * 0.06;
        (self.base_intensity as f64 + noise) as f32
    }
}

/// Builds a four-arm intersection. `headings[0]` is the ego approach arm and
/// anchors the clockwise zone enumeration; zone 5 is the interior box.
pub fn make_intersection(headings: [f64; 4], lane_width: f64, seed: u64) -> Result<WorldLayout> {
    if !(lane_width.is_finite() && lane_width > 0.0) {
        return Err(Error::Construction(format!(
            "lane width must be positive, got {lane_width}"
        )));
    }
    if headings.iter().any(|h| !h.is_finite()) {
        return Err(Error::Construction("non-finite arm heading".into()));
    }
    for i in 0..4 {
        for j in i + 1..4 {
            let d = wrap_two_pi(headings[i] - headings[j]);
            if d < 1e-9 || std::f64::consts::TAU - d < 1e-9 {
                return Err(Error::Construction(format!(
                    "arms {i} and {j} share a heading"
                )));
            }
        }
    }
    let arms: Vec<Arm> = headings
        .iter()
        .map(|&heading| Arm {
            heading,
            lane_width,
            lanes: LANES_PER_DIRECTION,
        })
        .collect();
    let hw = arms[0].half_width();

    // Clockwise rank from the ego arm gives the zone id.
    let mut cw: Vec<usize> = (0..4).collect();
    cw.sort_by(|&a, &b| {
        let ka = wrap_two_pi(headings[0] - headings[a]);
        let kb = wrap_two_pi(headings[0] - headings[b]);
        ka.total_cmp(&kb)
    });
    let mut arm_zone = vec![0u32; 4];
    for (rank, &k) in cw.iter().enumerate() {
        arm_zone[k] = rank as u32 + 1;
    }
    // Counter-clockwise order is the reverse ring.
    let ccw: Vec<usize> = std::iter::once(cw[0]).chain(cw[1..].iter().rev().copied()).collect();

    // corner[k] joins arm k's left edge with its counter-clockwise neighbour's right edge.
    let mut left_corner = vec![Vec2::ZERO; 4];
    let mut right_corner = vec![Vec2::ZERO; 4];
    for i in 0..4 {
        let k = ccw[i];
        let next = ccw[(i + 1) % 4];
        let gap = wrap_two_pi(headings[next] - headings[k]);
        if gap >= std::f64::consts::PI - 1e-9 {
            return Err(Error::Construction(format!(
                "arms {k} and {next} are {gap:.3} rad apart; no closed interior box"
            )));
        }
        let (a, b) = (&arms[k], &arms[next]);
        let corner = line_intersection(a.normal() * hw, a.dir(), -b.normal() * hw, b.dir())
            .ok_or_else(|| Error::Construction("parallel arm edges".into()))?;
        if corner.norm() >= ZONE_START {
            return Err(Error::Construction(format!(
                "arms {k} and {next} overlap beyond the interior box"
            )));
        }
        left_corner[k] = corner;
        right_corner[next] = corner;
    }

    let side = WORLD_CELLS as f64 * WORLD_RES;
    let spec = GridSpec::new(
        WORLD_CELLS,
        WORLD_CELLS,
        WORLD_RES,
        Vec2::new(-side / 2.0, -side / 2.0),
    );
    let far = side;
    let road_polygons: Vec<Polygon> = arms
        .iter()
        .enumerate()
        .map(|(k, a)| {
            let (u, n) = (a.dir(), a.normal());
            Polygon::new(vec![
                Vec2::ZERO,
                right_corner[k],
                u * far - n * hw,
                u * far + n * hw,
                left_corner[k],
            ])
        })
        .collect();
    let box_polygon = Polygon::new(ccw.iter().map(|&k| left_corner[k]).collect());

    let mut zones = Vec::with_capacity(5);
    for (k, a) in arms.iter().enumerate() {
        let (u, n) = (a.dir(), a.normal());
        let rect = Polygon::new(vec![
            u * ZONE_START - n * hw,
            u * far - n * hw,
            u * far + n * hw,
            u * ZONE_START + n * hw,
        ]);
        let clipped = rect.clip_to_rect(spec.lo(), spec.hi());
        if clipped.vertices.len() < 3 {
            return Err(Error::Construction(format!(
                "arm {k} zone falls outside the extent"
            )));
        }
        zones.push(Zone {
            id: arm_zone[k],
            polygon: clipped,
        });
    }
    zones.push(Zone {
        id: BOX_ZONE,
        polygon: box_polygon.clone(),
    });
    zones.sort_by_key(|z| z.id);

    let mut drivable = Grid::filled(spec.h, spec.w, 1u8);
    for r in 0..spec.h {
        for c in 0..spec.w {
            let p = spec.center(r, c);
            if road_polygons.iter().any(|poly| poly.contains(p)) {
                drivable.set(r, c, 0);
            }
        }
    }

    Ok(WorldLayout {
        spec,
        arms,
        arm_zone,
        drivable,
        zones,
        road_polygons,
        box_polygon,
        seed,
        base_intensity: (0.7 + 0.2 * unit_f64(mix64(seed ^ 0x7e57_u64))) as f32,
    })
}

/// Zone containing `p`; otherwise the zone with the nearest boundary.
/// Distances within 1e-9 m count as ties and go to the lower id.
pub fn zone_assign(p: Vec2, layout: &WorldLayout) -> u32 {
    if let Some(z) = layout.zones.iter().find(|z| z.polygon.contains(p)) {
        return z.id;
    }
    let mut best = (f64::INFINITY, 0u32);
    for z in &layout.zones {
        let d = z.polygon.boundary_distance(p);
        if d < best.0 - 1e-9 {
            best = (d, z.id);
        }
    }
    best.1
}
