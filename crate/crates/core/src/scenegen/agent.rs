use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layout::{zone_assign, WorldLayout};
use crate::error::{Error, Result};
use crate::geometry::{line_intersection, wrap_pi, Vec2};

pub const FPS: f64 = 10.0;
pub const DT: f64 = 1.0 / FPS;
/// Tightest arc the generator will drive.
pub const MIN_TURN_RADIUS: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Maneuver {
    Straight,
    Left,
    Right,
    UTurn,
    StopThenGo,
    Parked,
}

impl Maneuver {
    pub const ALL: [Maneuver; 6] = [
        Maneuver::Straight,
        Maneuver::Left,
        Maneuver::Right,
        Maneuver::UTurn,
        Maneuver::StopThenGo,
        Maneuver::Parked,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Maneuver::Straight => "straight",
            Maneuver::Left => "left",
            Maneuver::Right => "right",
            Maneuver::UTurn => "uturn",
            Maneuver::StopThenGo => "stop-then-go",
            Maneuver::Parked => "parked",
        }
    }

    pub fn is_turn(self) -> bool {
        matches!(self, Maneuver::Left | Maneuver::Right | Maneuver::UTurn)
    }
}

impl fmt::Display for Maneuver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Maneuver {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Maneuver::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::format("maneuver", s))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentState {
    pub t: u32,
    pub pos: Vec2,
    pub heading: f64,
    /// m/s; `speed·DT` is the distance to the next state.
    pub speed: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentTrack {
    pub agent_id: u32,
    pub states: Vec<AgentState>,
    pub maneuver: Maneuver,
    pub goal_zone: u32,
}

impl AgentTrack {
    pub fn state_at(&self, t: u32) -> Option<&AgentState> {
        let first = self.states.first()?.t;
        let idx = t.checked_sub(first)? as usize;
        self.states.get(idx)
    }

    pub fn final_position(&self) -> Vec2 {
        self.states.last().map(|s| s.pos).unwrap_or_default()
    }
}

/// Kinematic parameters of one simulated agent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeedProfile {
    /// Approach and exit speed, m/s.
    pub cruise: f64,
    /// Speed held through the turning arc, m/s.
    pub turn: f64,
    /// Comfortable braking and acceleration magnitudes, m/s².
    pub decel: f64,
    pub accel: f64,
    /// Path distance from the spawn point to the box entry at frame 0. For
    /// parked agents, the distance of the parking spot beyond the box edge.
    pub start_gap: f64,
    /// Frames spent at the stop line (stop-then-go only).
    pub dwell: u32,
    pub frames: usize,
}

impl Default for SpeedProfile {
    fn default() -> Self {
        SpeedProfile {
            cruise: 9.0,
            turn: 5.5,
            decel: 3.0,
            accel: 2.0,
            start_gap: 15.0,
            dwell: 10,
            frames: 60,
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Segment {
    Line { start: Vec2, dir: Vec2, len: f64 },
    Arc { center: Vec2, radius: f64, start_angle: f64, sweep: f64 },
}

impl Segment {
    fn len(&self) -> f64 {
        match *self {
            Segment::Line { len, .. } => len,
            Segment::Arc { radius, sweep, .. } => radius * sweep.abs(),
        }
    }

    fn at(&self, s: f64) -> (Vec2, f64) {
        match *self {
            Segment::Line { start, dir, .. } => (start + dir * s, dir.angle()),
            Segment::Arc {
                center,
                radius,
                start_angle,
                sweep,
            } => {
                let sign = sweep.signum();
                let a = start_angle + sign * s / radius;
                let pos = center + Vec2::from_angle(a) * radius;
                (pos, wrap_pi(a + sign * std::f64::consts::FRAC_PI_2))
            }
        }
    }
}

/// Arc-length parameterized lane path. `s` beyond either end extrapolates
/// along the first or last segment.
#[derive(Debug, Clone)]
struct Path {
    segments: Vec<Segment>,
    /// Arc length where the box entry (turn start or stop line) lies.
    entry_s: f64,
    /// Arc length where the turn ends.
    exit_s: f64,
}

impl Path {
    fn at(&self, s: f64) -> (Vec2, f64) {
        let mut offset = 0.0;
        for (i, seg) in self.segments.iter().enumerate() {
            let l = seg.len();
            if s < offset + l || i + 1 == self.segments.len() {
                return seg.at((s - offset).max(if i == 0 { f64::NEG_INFINITY } else { 0.0 }));
            }
            offset += l;
        }
        unreachable!("path has at least one segment")
    }
}

const APPROACH_LEN: f64 = 80.0;
const EXIT_LEN: f64 = 120.0;

fn build_path(layout: &WorldLayout, maneuver: Maneuver, entry: usize, lane: usize) -> Result<Path> {
    let arm = &layout.arms[entry];
    let lw = arm.lane_width;
    let (exit, lane_in, lane_out) = match maneuver {
        Maneuver::Left => (layout.next_clockwise(entry), 0, 0),
        Maneuver::Right => (layout.next_counter_clockwise(entry), 1, 1),
        Maneuver::UTurn => (entry, 0, 1),
        Maneuver::Straight | Maneuver::StopThenGo => (layout.opposite(entry), lane, lane),
        Maneuver::Parked => unreachable!("parked agents have no path"),
    };
    let d1 = -arm.dir();
    let c_in = arm.inbound_offset(lane_in);
    let t1 = layout
        .box_entry(entry, lane_in)
        .ok_or_else(|| Error::Generation("inbound lane misses the box edge".into()))?;
    let approach = Segment::Line {
        start: t1 - d1 * APPROACH_LEN,
        dir: d1,
        len: APPROACH_LEN,
    };

    if maneuver == Maneuver::UTurn {
        let radius = lw * (lane_in as f64 + 0.5 + lane_out as f64 + 0.5) / 2.0;
        if radius < MIN_TURN_RADIUS {
            return Err(Error::Generation(format!(
                "u-turn radius {radius:.2} m below the {MIN_TURN_RADIUS} m minimum"
            )));
        }
        let center = t1 + d1.perp() * radius;
        let arc = Segment::Arc {
            center,
            radius,
            start_angle: (t1 - center).angle(),
            sweep: std::f64::consts::PI,
        };
        let end = center * 2.0 - t1;
        let exit_line = Segment::Line {
            start: end,
            dir: -d1,
            len: EXIT_LEN,
        };
        return Ok(Path {
            segments: vec![approach, arc, exit_line],
            entry_s: APPROACH_LEN,
            exit_s: APPROACH_LEN + radius * std::f64::consts::PI,
        });
    }

    let out = &layout.arms[exit];
    let d2 = out.dir();
    let c_out = out.outbound_offset(lane_out);
    let delta = wrap_pi(d2.angle() - d1.angle());
    if delta.abs() < 1e-6 {
        if (c_out - c_in).cross(d1).abs() > 1e-6 {
            return Err(Error::Generation("straight lanes are not collinear".into()));
        }
        let through = Segment::Line {
            start: t1,
            dir: d1,
            len: EXIT_LEN + 2.0 * APPROACH_LEN,
        };
        return Ok(Path {
            segments: vec![approach, through],
            entry_s: APPROACH_LEN,
            exit_s: APPROACH_LEN,
        });
    }
    let p = line_intersection(c_in, d1, c_out, d2)
        .ok_or_else(|| Error::Generation("lane lines do not meet".into()))?;
    let to_apex = (p - t1).dot(d1);
    if to_apex <= 0.0 {
        return Err(Error::Generation("turn apex lies behind the box edge".into()));
    }
    // Tight corners (outer lane to outer lane) start the arc on the approach
    // so the radius stays drivable; 1.5 lane widths clears the box corner.
    let radius = (to_apex / (delta.abs() / 2.0).tan()).max(1.5 * lw);
    if radius < MIN_TURN_RADIUS {
        return Err(Error::Generation(format!(
            "turn radius {radius:.2} m below the {MIN_TURN_RADIUS} m minimum"
        )));
    }
    let tangent = radius * (delta.abs() / 2.0).tan();
    let arc_start = p - d1 * tangent;
    let early = (t1 - arc_start).dot(d1);
    let approach = Segment::Line {
        start: t1 - d1 * APPROACH_LEN,
        dir: d1,
        len: APPROACH_LEN - early,
    };
    let center = arc_start + d1.perp() * (delta.signum() * radius);
    let t2 = p + d2 * tangent;
    let arc = Segment::Arc {
        center,
        radius,
        start_angle: (arc_start - center).angle(),
        sweep: delta,
    };
    let exit_line = Segment::Line {
        start: t2,
        dir: d2,
        len: EXIT_LEN,
    };
    Ok(Path {
        segments: vec![approach, arc, exit_line],
        entry_s: APPROACH_LEN,
        exit_s: APPROACH_LEN - early + radius * delta.abs(),
    })
}

/// Arc-length positions per frame under the speed profile.
fn drive(path: &Path, maneuver: Maneuver, profile: &SpeedProfile) -> Vec<f64> {
    let target = match maneuver {
        Maneuver::Left | Maneuver::Right | Maneuver::UTurn => profile.turn.min(profile.cruise),
        Maneuver::StopThenGo => 0.0,
        _ => profile.cruise,
    };
    let stop_s = path.entry_s - 1.0;
    let mut s = path.entry_s - profile.start_gap;
    let mut v = profile.cruise;
    let mut dwell_left = profile.dwell;
    let mut stopped = false;
    let mut released = false;
    let mut out = Vec::with_capacity(profile.frames);
    for _ in 0..profile.frames {
        out.push(s);
        let mut accel = 0.0;
        if maneuver == Maneuver::StopThenGo && !released {
            if stopped {
                if dwell_left == 0 {
                    released = true;
                } else {
                    dwell_left -= 1;
                    continue;
                }
            } else {
                let dist = stop_s - s;
                if dist <= 0.05 || v <= 1e-3 {
                    stopped = true;
                    v = 0.0;
                    continue;
                }
                let need = v * v / (2.0 * dist);
                if need >= profile.decel * 0.999 {
                    accel = -need;
                }
            }
        }
        if released || maneuver != Maneuver::StopThenGo {
            if s < path.entry_s && v > target && !released {
                let dist = path.entry_s - s;
                let need = (v * v - target * target) / (2.0 * dist.max(1e-6));
                if need >= profile.decel * 0.999 {
                    accel = -need;
                }
            } else if s >= path.exit_s && v < profile.cruise {
                accel = profile.accel;
            } else if released && v < profile.cruise {
                accel = profile.accel;
            }
        }
        let mut v_next = (v + accel * DT).max(0.0);
        if accel > 0.0 {
            v_next = v_next.min(profile.cruise);
        }
        if s < path.entry_s && accel < 0.0 {
            v_next = v_next.max(target);
        }
        s += 0.5 * (v + v_next) * DT;
        v = v_next;
    }
    out
}

/// Simulates one agent entering the intersection from `entry_arm`.
pub fn simulate_agent(
    layout: &WorldLayout,
    maneuver: Maneuver,
    entry_arm: usize,
    profile: &SpeedProfile,
    seed: u64,
) -> Result<AgentTrack> {
    if entry_arm >= layout.arms.len() {
        return Err(Error::Generation(format!("no arm {entry_arm}")));
    }
    if profile.frames == 0 {
        return Err(Error::Generation("empty track".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let arm = &layout.arms[entry_arm];
    let states: Vec<AgentState> = if maneuver == Maneuver::Parked {
        let edge = layout
            .box_entry(entry_arm, 1)
            .ok_or_else(|| Error::Generation("inbound lane misses the box edge".into()))?;
        let lateral = arm.normal() * (arm.lane_width * rng.random_range(0.3..0.6));
        let pos = edge + arm.dir() * profile.start_gap + lateral;
        let heading = (-arm.dir()).angle();
        (0..profile.frames)
            .map(|t| AgentState {
                t: t as u32,
                pos,
                heading,
                speed: 0.0,
            })
            .collect()
    } else {
        let lane = rng.random_range(0..arm.lanes as usize);
        let path = build_path(layout, maneuver, entry_arm, lane)?;
        let arc = drive(&path, maneuver, profile);
        let poses: Vec<(Vec2, f64)> = arc.iter().map(|&s| path.at(s)).collect();
        let mut states: Vec<AgentState> = poses
            .iter()
            .enumerate()
            .map(|(t, &(pos, heading))| AgentState {
                t: t as u32,
                pos,
                heading,
                speed: 0.0,
            })
            .collect();
        for t in 0..states.len().saturating_sub(1) {
            states[t].speed = states[t + 1].pos.dist(states[t].pos) / DT;
        }
        if states.len() >= 2 {
            let n = states.len();
            states[n - 1].speed = states[n - 2].speed;
        }
        states
    };

    for st in &states {
        if !layout.spec.contains(st.pos) {
            return Err(Error::Generation(format!(
                "{maneuver} track leaves the extent at frame {}",
                st.t
            )));
        }
        if !layout.is_drivable(st.pos) {
            return Err(Error::Generation(format!(
                "{maneuver} track leaves the road at frame {}",
                st.t
            )));
        }
    }
    let goal_zone = zone_assign(states.last().expect("non-empty").pos, layout);
    Ok(AgentTrack {
        agent_id: 0,
        states,
        maneuver,
        goal_zone,
    })
}
