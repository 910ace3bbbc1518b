//! Checkpoint files: a text header (version, step, config echo, parameter
//! groups) followed by little-endian parameters (f32) and Adam moments (f64).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::Model;
use crate::nn::Adam;

use super::config::RunConfig;

const MAGIC: &str = "zonecast-checkpoint 1";
const END: &str = "end\n";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub model: Model,
    pub adam: Adam,
}

impl Checkpoint {
    pub fn fresh(config: RunConfig, model: Model) -> Checkpoint {
        let adam = Adam::new(model.num_params(), config.lr);
        Checkpoint { config, model, adam }
    }

    pub fn step(&self) -> u64 {
        self.adam.step
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut head = String::new();
        let _ = writeln!(head, "{MAGIC}");
        let _ = writeln!(head, "step {}", self.adam.step);
        for line in self.config.echo().lines() {
            let _ = writeln!(head, "config {line}");
        }
        for g in &self.model.params.groups {
            let shape: Vec<String> = g.shape.iter().map(|s| s.to_string()).collect();
            let _ = writeln!(head, "group {} {}", g.name, shape.join(" "));
        }
        head.push_str(END);
        let n = self.model.num_params();
        let mut out = head.into_bytes();
        out.reserve(n * 20);
        for v in &self.model.params.values {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        for v in self.adam.m.iter().chain(&self.adam.v) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        let bad = |d: &str| Error::format("checkpoint", d);
        let split = bytes
            .windows(END.len() + 1)
            .position(|w| w[0] == b'\n' && &w[1..] == END.as_bytes())
            .ok_or_else(|| bad("missing header terminator"))?;
        let head = std::str::from_utf8(&bytes[..split + 1]).map_err(|_| bad("header is not UTF-8"))?;
        let body = &bytes[split + 1 + END.len()..];
        let mut lines = head.lines();
        if lines.next() != Some(MAGIC) {
            return Err(bad("unknown version tag"));
        }
        let step: u64 = lines
            .next()
            .and_then(|l| l.strip_prefix("step "))
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("missing step"))?;
        let mut config_text = String::new();
        let mut groups = Vec::new();
        for line in lines {
            if let Some(c) = line.strip_prefix("config ") {
                config_text.push_str(c);
                config_text.push('\n');
            } else if let Some(g) = line.strip_prefix("group ") {
                let mut it = g.split_whitespace();
                let name = it.next().ok_or_else(|| bad(line))?.to_string();
                let shape = it.map(|s| s.parse::<usize>().map_err(|_| bad(line))).collect::<Result<Vec<_>>>()?;
                groups.push((name, shape));
            } else {
                return Err(bad(line));
            }
        }
        let config = RunConfig::from_text(&config_text)?;
        let mut model = Model::zeros(config.model())?;
        let expected: Vec<(String, Vec<usize>)> =
            model.params.groups.iter().map(|g| (g.name.clone(), g.shape.clone())).collect();
        if groups != expected {
            return Err(Error::Shape("checkpoint parameter groups do not match its config".into()));
        }
        let n = model.num_params();
        if body.len() != n * 4 + n * 16 {
            return Err(bad(&format!("body has {} bytes, expected {}", body.len(), n * 20)));
        }
        let (pv, rest) = body.split_at(n * 4);
        for (v, c) in model.params.values.iter_mut().zip(pv.chunks_exact(4)) {
            *v = f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64;
        }
        let f64s: Vec<f64> = rest
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let mut adam = Adam::new(n, config.lr);
        adam.m.copy_from_slice(&f64s[..n]);
        adam.v.copy_from_slice(&f64s[n..]);
        adam.step = step;
        Ok(Checkpoint { config, model, adam })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        Checkpoint::from_bytes(&fs::read(path)?)
    }
}
