//! Plain-text dataset format: a `manifest` plus one record per scenario.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::agent::{AgentState, AgentTrack, Maneuver};
use super::layout::make_intersection;
use super::Scenario;
use crate::error::{Error, Result};
use crate::geometry::Vec2;

pub const MANIFEST_FILE: &str = "manifest";
const RECORD_MAGIC: &str = "zonecast-scenario 1";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetManifest {
    pub version: u32,
    pub g: u32,
    pub h: usize,
    pub w: usize,
    pub res: f64,
    pub fps: f64,
    pub tau: usize,
    pub delta: usize,
}

impl DatasetManifest {
    pub fn to_text(&self) -> String {
        format!(
            "version = {}\nG = {}\nH = {}\nW = {}\nres = {}\nfps = {}\ntau = {}\ndelta = {}\n",
            self.version, self.g, self.h, self.w, self.res, self.fps, self.tau, self.delta
        )
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut m = DatasetManifest {
            version: 0,
            g: 0,
            h: 0,
            w: 0,
            res: 0.0,
            fps: 0.0,
            tau: 0,
            delta: 0,
        };
        let mut seen = 0u8;
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::format("manifest", line))?;
            let v = v.trim();
            let bad = || Error::format("manifest", line);
            let bit = match k.trim() {
                "version" => {
                    m.version = v.parse().map_err(|_| bad())?;
                    0
                }
                "G" => {
                    m.g = v.parse().map_err(|_| bad())?;
                    1
                }
                "H" => {
                    m.h = v.parse().map_err(|_| bad())?;
                    2
                }
                "W" => {
                    m.w = v.parse().map_err(|_| bad())?;
                    3
                }
                "res" => {
                    m.res = v.parse().map_err(|_| bad())?;
                    4
                }
                "fps" => {
                    m.fps = v.parse().map_err(|_| bad())?;
                    5
                }
                "tau" => {
                    m.tau = v.parse().map_err(|_| bad())?;
                    6
                }
                "delta" => {
                    m.delta = v.parse().map_err(|_| bad())?;
                    7
                }
                other => return Err(Error::format("manifest", format!("unknown key {other}"))),
            };
            seen |= 1 << bit;
        }
        if seen != 0xff {
            return Err(Error::format("manifest", "missing keys"));
        }
        Ok(m)
    }
}

pub fn scenario_to_text(s: &Scenario) -> String {
    let mut out = String::new();
    let l = &s.layout;
    writeln!(out, "{RECORD_MAGIC}").unwrap();
    writeln!(out, "seed {}", s.seed).unwrap();
    writeln!(out, "ego {}", s.ego_id).unwrap();
    writeln!(out, "layout").unwrap();
    writeln!(out, "texture_seed {}", l.seed).unwrap();
    writeln!(out, "arms {}", l.arms.len()).unwrap();
    for a in &l.arms {
        writeln!(out, "arm {} {} {}", a.heading, a.lane_width, a.lanes).unwrap();
    }
    let runs = rle(&l.drivable.data);
    write!(out, "mask {} {} {}", l.drivable.h, l.drivable.w, runs.len()).unwrap();
    for (v, n) in runs {
        write!(out, " {v}:{n}").unwrap();
    }
    out.push('\n');
    writeln!(out, "zones {}", l.zones.len()).unwrap();
    for z in &l.zones {
        write!(out, "zone {} {}", z.id, z.polygon.vertices.len()).unwrap();
        for v in &z.polygon.vertices {
            write!(out, " {} {}", v.x, v.y).unwrap();
        }
        out.push('\n');
    }
    writeln!(out, "tracks {}", s.tracks.len()).unwrap();
    for t in &s.tracks {
        writeln!(
            out,
            "track {} {} {} {}",
            t.agent_id,
            t.maneuver,
            t.goal_zone,
            t.states.len()
        )
        .unwrap();
        for st in &t.states {
            writeln!(out, "{} {} {} {} {}", st.t, st.pos.x, st.pos.y, st.heading, st.speed).unwrap();
        }
    }
    writeln!(out, "end").unwrap();
    out
}

fn rle(data: &[u8]) -> Vec<(u8, usize)> {
    let mut runs: Vec<(u8, usize)> = Vec::new();
    for &v in data {
        match runs.last_mut() {
            Some((last, n)) if *last == v => *n += 1,
            _ => runs.push((v, 1)),
        }
    }
    runs
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn next_tokens(&mut self) -> Result<(usize, Vec<&'a str>)> {
        for (i, line) in self.inner.by_ref() {
            let toks: Vec<&str> = line.split_whitespace().collect();
            if !toks.is_empty() {
                return Ok((i + 1, toks));
            }
        }
        Err(Error::format("scenario record", "unexpected end of record"))
    }

    fn expect(&mut self, key: &str, arity: usize) -> Result<(usize, Vec<&'a str>)> {
        let (n, toks) = self.next_tokens()?;
        if toks[0] != key || toks.len() < arity + 1 {
            return Err(Error::format(
                "scenario record",
                format!("line {n}: expected `{key}` with {arity} fields"),
            ));
        }
        Ok((n, toks))
    }
}

fn num<T: std::str::FromStr>(tok: &str, line: usize) -> Result<T> {
    tok.parse()
        .map_err(|_| Error::format("scenario record", format!("line {line}: bad number `{tok}`")))
}

pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
    };
    let (n, magic) = lines.next_tokens()?;
    if magic.join(" ") != RECORD_MAGIC {
        return Err(Error::format("scenario record", format!("line {n}: bad header")));
    }
    let (n, t) = lines.expect("seed", 1)?;
    let seed: u64 = num(t[1], n)?;
    let (n, t) = lines.expect("ego", 1)?;
    let ego_id: u32 = num(t[1], n)?;
    lines.expect("layout", 0)?;
    let (n, t) = lines.expect("texture_seed", 1)?;
    let texture_seed: u64 = num(t[1], n)?;
    let (n, t) = lines.expect("arms", 1)?;
    let arm_count: usize = num(t[1], n)?;
    if arm_count != 4 {
        return Err(Error::format("scenario record", "only four-arm layouts are supported"));
    }
    let mut headings = [0.0; 4];
    let mut lane_width = 0.0;
    for h in headings.iter_mut() {
        let (n, t) = lines.expect("arm", 3)?;
        *h = num(t[1], n)?;
        lane_width = num(t[2], n)?;
    }
    let (n, t) = lines.expect("mask", 3)?;
    let (mh, mw, nruns): (usize, usize, usize) = (num(t[1], n)?, num(t[2], n)?, num(t[3], n)?);
    if t.len() != 4 + nruns {
        return Err(Error::format("scenario record", format!("line {n}: run count mismatch")));
    }
    let mut mask = Vec::with_capacity(mh * mw);
    for run in &t[4..] {
        let (v, c) = run
            .split_once(':')
            .ok_or_else(|| Error::format("scenario record", format!("line {n}: bad run `{run}`")))?;
        let v: u8 = num(v, n)?;
        let c: usize = num(c, n)?;
        mask.extend(std::iter::repeat_n(v, c));
    }
    let (n, t) = lines.expect("zones", 1)?;
    let zone_count: usize = num(t[1], n)?;
    let mut zones = Vec::with_capacity(zone_count);
    for _ in 0..zone_count {
        let (n, t) = lines.expect("zone", 2)?;
        let id: u32 = num(t[1], n)?;
        let nv: usize = num(t[2], n)?;
        if t.len() != 3 + 2 * nv {
            return Err(Error::format("scenario record", format!("line {n}: vertex count")));
        }
        let verts: Vec<Vec2> = (0..nv)
            .map(|i| Ok(Vec2::new(num(t[3 + 2 * i], n)?, num(t[4 + 2 * i], n)?)))
            .collect::<Result<_>>()?;
        zones.push((id, verts));
    }

    let layout = make_intersection(headings, lane_width, texture_seed)?;
    let zones_match = layout.zones.len() == zones.len()
        && layout
            .zones
            .iter()
            .zip(&zones)
            .all(|(z, (id, v))| z.id == *id && &z.polygon.vertices == v);
    if layout.drivable.h != mh || layout.drivable.w != mw || layout.drivable.data != mask || !zones_match {
        return Err(Error::format(
            "scenario record",
            "mask or zones disagree with the arm parameters",
        ));
    }

    let (n, t) = lines.expect("tracks", 1)?;
    let track_count: usize = num(t[1], n)?;
    let mut tracks = Vec::with_capacity(track_count);
    for _ in 0..track_count {
        let (n, t) = lines.expect("track", 4)?;
        let agent_id: u32 = num(t[1], n)?;
        let maneuver: Maneuver = t[2].parse()?;
        let goal_zone: u32 = num(t[3], n)?;
        let ns: usize = num(t[4], n)?;
        let mut states = Vec::with_capacity(ns);
        for _ in 0..ns {
            let (n, t) = lines.next_tokens()?;
            if t.len() != 5 {
                return Err(Error::format("scenario record", format!("line {n}: state needs 5 fields")));
            }
            states.push(AgentState {
                t: num(t[0], n)?,
                pos: Vec2::new(num(t[1], n)?, num(t[2], n)?),
                heading: num(t[3], n)?,
                speed: num(t[4], n)?,
            });
        }
        tracks.push(AgentTrack {
            agent_id,
            states,
            maneuver,
            goal_zone,
        });
    }
    lines.expect("end", 0)?;
    Ok(Scenario {
        layout,
        tracks,
        ego_id,
        seed,
    })
}

fn record_name(i: usize) -> String {
    format!("scenario_{i:05}.txt")
}

pub fn write_dataset(dir: &Path, manifest: &DatasetManifest, scenarios: &[Scenario]) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(MANIFEST_FILE), manifest.to_text())?;
    for (i, s) in scenarios.iter().enumerate() {
        fs::write(dir.join(record_name(i)), scenario_to_text(s))?;
    }
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(dir.join(MANIFEST_FILE)).map_err(|e| {
        Error::Config(format!("cannot read manifest in {}: {e}", dir.display()))
    })?;
    DatasetManifest::parse(&text)
}

/// Manifest plus every record, in file-name order.
pub fn load_dataset(dir: &Path) -> Result<(DatasetManifest, Vec<Scenario>)> {
    let manifest = read_manifest(dir)?;
    let mut names: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.starts_with("scenario_") && n.ends_with(".txt"))
        .collect();
    names.sort();
    let scenarios = names
        .iter()
        .map(|n| parse_scenario(&fs::read_to_string(dir.join(n))?))
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, scenarios))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenegen::{generate_scenario, GeneratorConfig};

    #[test]
    fn record_round_trip_is_exact() {
        let s = generate_scenario(77, None, &GeneratorConfig::default()).unwrap();
        let text = scenario_to_text(&s);
        let back = parse_scenario(&text).unwrap();
        assert_eq!(back, s);
        assert_eq!(scenario_to_text(&back), text);
    }

    #[test]
    fn tampered_mask_is_rejected() {
        let s = generate_scenario(5, None, &GeneratorConfig::default()).unwrap();
        let text = scenario_to_text(&s).replacen(" 1:", " 0:", 1);
        assert!(parse_scenario(&text).is_err());
    }

    #[test]
    fn manifest_round_trip_and_unknown_key() {
        let m = DatasetManifest {
            version: 1,
            g: 5,
            h: 160,
            w: 160,
            res: 0.5,
            fps: 10.0,
            tau: 20,
            delta: 40,
        };
        assert_eq!(DatasetManifest::parse(&m.to_text()).unwrap(), m);
        assert!(DatasetManifest::parse(&(m.to_text() + "extra = 1\n")).is_err());
    }
}
