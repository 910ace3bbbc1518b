//! Run configuration: defaults, `key = value` files, and the echo written at
//! the top of every log and checkpoint.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::model::{ModelConfig, NODES};
use crate::predictor::Strategy;
use crate::sample::GoalMode;
use crate::scenegen::DatasetManifest;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunConfig {
    pub tau: usize,
    pub delta: usize,
    pub h: usize,
    pub w: usize,
    pub res: f64,
    pub n: usize,
    pub d: usize,
    pub m: usize,
    pub c1: usize,
    pub edge: usize,
    pub feat: usize,
    pub hidden: usize,
    pub latent: usize,
    pub zeta: f64,
    pub eta: f64,
    pub mu: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub no_intention: bool,
    pub no_map: bool,
    pub no_penalty: bool,
    pub mode: GoalMode,
    pub samples: usize,
    pub strategy: Strategy,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            tau: 20,
            delta: 40,
            h: 160,
            w: 160,
            res: 0.5,
            n: NODES,
            d: 64,
            m: 32,
            c1: 32,
            edge: 64,
            feat: 64,
            hidden: 128,
            latent: 32,
            zeta: 1.0,
            eta: 0.1,
            mu: 0.01,
            lr: 1e-3,
            batch_size: 4,
            epochs: 50,
            seed: 0,
            no_intention: false,
            no_map: false,
            no_penalty: false,
            mode: GoalMode::Intersection,
            samples: 20,
            strategy: Strategy::Best,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean {value:?} for {key}"))),
    }
}

impl RunConfig {
    /// Reduced model widths for tests and the desk-scale benchmark.
    pub fn test_dims() -> Self {
        RunConfig {
            d: 8,
            m: 8,
            c1: 8,
            edge: 16,
            feat: 16,
            hidden: 32,
            latent: 8,
            ..RunConfig::default()
        }
    }

    pub fn g(&self) -> usize {
        self.mode.zones()
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "tau" => self.tau = parse(key, v)?,
            "delta" => self.delta = parse(key, v)?,
            "H" | "h" => self.h = parse(key, v)?,
            "W" | "w" => self.w = parse(key, v)?,
            "res" => self.res = parse(key, v)?,
            "n" => self.n = parse(key, v)?,
            "G" | "g" => {
                let g: usize = parse(key, v)?;
                if g != self.g() {
                    self.mode = match g {
                        5 => GoalMode::Intersection,
                        25 => GoalMode::Grid25,
                        _ => return Err(Error::Config(format!("G must be 5 or 25, got {g}"))),
                    };
                }
            }
            "d" => self.d = parse(key, v)?,
            "m" => self.m = parse(key, v)?,
            "c1" => self.c1 = parse(key, v)?,
            "edge" => self.edge = parse(key, v)?,
            "feat" => self.feat = parse(key, v)?,
            "hidden" => self.hidden = parse(key, v)?,
            "latent" => self.latent = parse(key, v)?,
            "zeta" => self.zeta = parse(key, v)?,
            "eta" => self.eta = parse(key, v)?,
            "mu" => self.mu = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "no_intention" => self.no_intention = parse_bool(key, v)?,
            "no_map" => self.no_map = parse_bool(key, v)?,
            "no_penalty" => self.no_penalty = parse_bool(key, v)?,
            "mode" => self.mode = v.parse()?,
            "samples" => self.samples = parse(key, v)?,
            "strategy" => self.strategy = v.parse()?,
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {raw:?}", i + 1)))?;
            self.set(k, v)?;
        }
        self.validate()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = RunConfig::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn ablate(&mut self, name: &str) -> Result<()> {
        match name {
            "no_intention" => self.no_intention = true,
            "no_map" => self.no_map = true,
            "no_penalty" => self.no_penalty = true,
            _ => {
                return Err(Error::Config(format!(
                    "unknown ablation {name:?} (no_intention, no_map, no_penalty)"
                )))
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.n != NODES {
            return Err(Error::Config(format!("n must be {NODES}, got {}", self.n)));
        }
        if self.tau < 2 || self.delta < 3 {
            return Err(Error::Config(format!(
                "need τ ≥ 2 and δ ≥ 3, got τ = {}, δ = {}",
                self.tau, self.delta
            )));
        }
        for (k, v) in [("zeta", self.zeta), ("eta", self.eta), ("mu", self.mu)] {
            if !(v >= 0.0) {
                return Err(Error::Config(format!("{k} must be nonnegative, got {v}")));
            }
        }
        if !(self.lr > 0.0) || self.batch_size == 0 || self.samples == 0 {
            return Err(Error::Config("lr, batch_size and samples must be positive".into()));
        }
        self.model().validate()
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            h: self.h,
            w: self.w,
            res: self.res,
            tau: self.tau,
            delta: self.delta,
            g: self.g(),
            d: self.d,
            m: self.m,
            c1: self.c1,
            edge: self.edge,
            feat: self.feat,
            hidden: self.hidden,
            latent: self.latent,
            use_map: !self.no_map,
            use_intention: !self.no_intention,
        }
    }

    /// Loss weights after the penalty ablation.
    pub fn weights(&self) -> LossWeights {
        if self.no_penalty {
            LossWeights::NONE
        } else {
            LossWeights {
                zeta: self.zeta,
                eta: self.eta,
                mu: self.mu,
            }
        }
    }

    /// Every field as `key = value`, readable by `from_text`.
    pub fn echo(&self) -> String {
        let mut s = String::new();
        let fields: [(&str, String); 27] = [
            ("tau", self.tau.to_string()),
            ("delta", self.delta.to_string()),
            ("H", self.h.to_string()),
            ("W", self.w.to_string()),
            ("res", self.res.to_string()),
            ("G", self.g().to_string()),
            ("n", self.n.to_string()),
            ("d", self.d.to_string()),
            ("m", self.m.to_string()),
            ("c1", self.c1.to_string()),
            ("edge", self.edge.to_string()),
            ("feat", self.feat.to_string()),
            ("hidden", self.hidden.to_string()),
            ("latent", self.latent.to_string()),
            ("zeta", self.zeta.to_string()),
            ("eta", self.eta.to_string()),
            ("mu", self.mu.to_string()),
            ("lr", self.lr.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("epochs", self.epochs.to_string()),
            ("seed", self.seed.to_string()),
            ("no_intention", self.no_intention.to_string()),
            ("no_map", self.no_map.to_string()),
            ("no_penalty", self.no_penalty.to_string()),
            ("mode", self.mode.to_string()),
            ("samples", self.samples.to_string()),
            ("strategy", self.strategy.to_string()),
        ];
        for (k, v) in fields {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn manifest(&self) -> DatasetManifest {
        DatasetManifest {
            version: 1,
            g: self.g() as u32,
            h: self.h,
            w: self.w,
            res: self.res,
            fps: crate::scenegen::FPS,
            tau: self.tau,
            delta: self.delta,
        }
    }

    /// Rejects datasets whose window or raster shape differs from the run.
    pub fn check_manifest(&self, m: &DatasetManifest) -> Result<()> {
        let ok = m.tau == self.tau
            && m.delta == self.delta
            && m.h == self.h
            && m.w == self.w
            && m.g as usize == self.g()
            && (m.res - self.res).abs() < 1e-12;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "dataset (τ {}, δ {}, {}×{}, G {}, res {}) does not match run (τ {}, δ {}, {}×{}, G {}, res {})",
                m.tau, m.delta, m.h, m.w, m.g, m.res, self.tau, self.delta, self.h, self.w, self.g(), self.res
            )))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_round_trips() {
        let mut c = RunConfig::test_dims();
        c.no_map = true;
        c.mode = GoalMode::Grid25;
        c.seed = 17;
        assert_eq!(RunConfig::from_text(&c.echo()).unwrap(), c);
    }

    #[test]
    fn parses_comments_and_rejects_unknown() {
        let c = RunConfig::from_text("# run\nepochs = 3  # short\n\nlr=0.002\n").unwrap();
        assert_eq!(c.epochs, 3);
        assert_eq!(c.lr, 0.002);
        assert!(matches!(RunConfig::from_text("bogus = 1"), Err(Error::Config(_))));
        assert!(RunConfig::from_text("epochs 3").is_err());
        assert!(RunConfig::from_text("H = 150").is_err());
        assert!(RunConfig::from_text("n = 16").is_err());
    }

    #[test]
    fn ablations_shape_model_and_weights() {
        let mut c = RunConfig::default();
        c.ablate("no_penalty").unwrap();
        assert_eq!(c.weights(), LossWeights::NONE);
        c.ablate("no_map").unwrap();
        assert!(!c.model().use_map);
        assert!(c.ablate("no_everything").is_err());
    }
}
