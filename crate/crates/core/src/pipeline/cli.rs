//! `zonecast` command line: gen, train, eval, predict, plot, config.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::evalkit::Protocol;
use crate::grid::Grid;
use crate::predictor::{generate, Observation, Strategy};
use crate::raster::{write_ppm, Overlay};
use crate::raster::{write_tensor, Tensor};
use crate::raster::build_scene_raster;
use crate::relnet::encode_scene;
use crate::sample::build_scene_sample;
use crate::scenegen::{generate_dataset, load_dataset, write_dataset, DatasetManifest, GeneratorConfig, Scenario};
use crate::util::derive_seed;

use super::checkpoint::Checkpoint;
use super::config::RunConfig;
use super::data::{build_samples, Split};
use super::eval::{evaluate, EvalOptions};
use super::train::train;

/// Environment variable naming the default dataset directory.
pub const DATA_ENV: &str = "ZONECAST_DATA";

#[derive(Debug, Parser)]
#[command(name = "zonecast", version, about = "Goal-conditioned trajectory forecasting on synthetic intersections")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// File of `key = value` lines applied over the defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Single `key=value` override, applied after --config.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut c = RunConfig::default();
        if let Some(p) = &self.config {
            c.apply_text(&fs::read_to_string(p)?)?;
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            c.set(k, v)?;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Args)]
struct DataArg {
    /// Dataset directory (default: $ZONECAST_DATA).
    #[arg(long)]
    data: Option<PathBuf>,
}

impl DataArg {
    fn dir(&self) -> Result<PathBuf> {
        self.data
            .clone()
            .or_else(|| std::env::var_os(DATA_ENV).map(PathBuf::from))
            .ok_or_else(|| Error::Config(format!("no dataset directory: pass --data or set {DATA_ENV}")))
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Gen {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value_t = 250)]
        count: usize,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (default: $ZONECAST_DATA).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train on the training split and write a checkpoint.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        out: PathBuf,
        /// Append the training log here instead of stdout.
        #[arg(long)]
        log: Option<PathBuf>,
        /// no_intention, no_map or no_penalty; repeatable.
        #[arg(long)]
        ablate: Vec<String>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a checkpoint or a baseline on the held-out split.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        data: DataArg,
        #[arg(long, required_unless_present = "baseline", conflicts_with = "baseline")]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_parser = ["const-vel"])]
        baseline: Option<String>,
        #[arg(long, default_value = "single")]
        protocol: String,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        strategy: Option<String>,
        /// Seed of the latent draws.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "test")]
        split: String,
        /// Also write the key = value record here.
        #[arg(long)]
        record: Option<PathBuf>,
        /// Print ADE per maneuver.
        #[arg(long)]
        by_maneuver: bool,
    },
    /// Decode futures for every target of one scenario and plot them.
    Predict {
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Scenario index within the dataset.
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        strategy: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// PPM image of the summed step heatmaps with trajectories.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render one raster channel, the static map or the drivable mask.
    Plot {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        data: DataArg,
        #[arg(long, default_value_t = 0)]
        index: usize,
        /// height, intensity, density, map or drivable.
        #[arg(long, default_value = "density")]
        what: String,
        /// Observation frame (default: last).
        #[arg(long)]
        frame: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Also dump the full observation raster as a tensor file.
        #[arg(long)]
        tensor: Option<PathBuf>,
    },
    /// Print the resolved configuration.
    Config {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

/// Parses `args` (including the program name) and runs the command. Returns
/// the process exit status: 0 success, 2 usage or configuration error, 1
/// runtime failure.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    match dispatch(cli.cmd, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            if e.is_config() {
                2
            } else {
                1
            }
        }
    }
}

fn load_checked(dir: &Path, cfg: &RunConfig) -> Result<Vec<Scenario>> {
    let (manifest, scenarios) = load_dataset(dir)?;
    cfg.check_manifest(&manifest)?;
    Ok(scenarios)
}

fn scenario_at(dir: &Path, cfg: &RunConfig, index: usize) -> Result<Scenario> {
    let mut all = load_checked(dir, cfg)?;
    if index >= all.len() {
        return Err(Error::Config(format!("index {index} out of range ({} scenarios)", all.len())));
    }
    Ok(all.swap_remove(index))
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::Gen { cfg, count, seed, out: dir } => {
            let c = cfg.resolve()?;
            let dir = DataArg { data: dir }.dir()?;
            let gen = GeneratorConfig {
                frames: c.tau + c.delta,
                ..GeneratorConfig::default()
            };
            let scenarios = generate_dataset(count, seed.unwrap_or(c.seed), &gen)?;
            let manifest: DatasetManifest = c.manifest();
            write_dataset(&dir, &manifest, &scenarios)?;
            writeln!(out, "wrote {count} scenarios to {}", dir.display())?;
        }
        Command::Train {
            cfg,
            data,
            out: path,
            log,
            ablate,
            epochs,
            seed,
        } => {
            let mut c = cfg.resolve()?;
            for a in &ablate {
                c.ablate(a)?;
            }
            if let Some(e) = epochs {
                c.epochs = e;
            }
            if let Some(s) = seed {
                c.seed = s;
            }
            let scenarios = load_checked(&data.dir()?, &c)?;
            let scenes = build_samples(&scenarios, &c, Split::Train)?;
            let ck = match log {
                Some(p) => {
                    let mut f = fs::OpenOptions::new().create(true).append(true).open(p)?;
                    train(&c, &scenes, &mut f)?
                }
                None => train(&c, &scenes, out)?,
            };
            ck.save(&path)?;
            writeln!(out, "checkpoint {} after {} steps", path.display(), ck.step())?;
        }
        Command::Eval {
            cfg,
            data,
            checkpoint,
            baseline: _,
            protocol,
            samples,
            strategy,
            seed,
            split,
            record,
            by_maneuver,
        } => {
            let ck = checkpoint.as_deref().map(Checkpoint::load).transpose()?;
            let mut c = match &ck {
                Some(k) => k.config,
                None => cfg.resolve()?,
            };
            if let Some(s) = samples {
                c.samples = s;
            }
            if let Some(s) = strategy {
                c.strategy = s.parse()?;
            }
            let scenarios = load_checked(&data.dir()?, &c)?;
            let scenes = build_samples(&scenarios, &c, split.parse()?)?;
            let opts = EvalOptions {
                protocol: protocol.parse::<Protocol>()?,
                samples: c.samples,
                strategy: c.strategy,
                seed,
            };
            let ev = evaluate(ck.as_ref().map(|k| &k.model), &scenes, c.delta, &opts)?;
            write!(out, "{}", ev.report.table())?;
            if by_maneuver {
                write!(out, "{}", ev.maneuver_table())?;
            }
            if let Some(p) = record {
                fs::write(p, ev.report.record())?;
            }
        }
        Command::Predict {
            data,
            checkpoint,
            index,
            samples,
            strategy,
            seed,
            out: img,
        } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let c = ck.config;
            let scenario = scenario_at(&data.dir()?, &c, index)?;
            let sample = build_scene_sample(&scenario, &c.model(), c.mode)?;
            let model = &ck.model;
            let enc = encode_scene(model, &sample.pooled)?;
            let strategy: Strategy = strategy.map_or(Ok(c.strategy), |s| s.parse())?;
            let s = samples.unwrap_or(c.samples);
            let spec = sample.spec;
            let mut heat = Grid::<f64>::new(spec.h, spec.w);
            let mut overlays = Vec::new();
            for t in &sample.targets {
                let obs = Observation::new(model, &enc, &t.past)?;
                let preds = generate(model, &obs, &sample.map, strategy, s, derive_seed(seed, u64::from(t.agent_id)))?;
                if let Some(d) = obs.intention(model) {
                    let probs: Vec<String> = d.probs.iter().map(|p| format!("{p:.3}")).collect();
                    writeln!(out, "agent {} goal {} intention {}", t.agent_id, t.goal, probs.join(" "))?;
                }
                for (k, p) in preds.iter().enumerate() {
                    let pts = p.points(&spec);
                    let xy: Vec<String> = pts.iter().map(|q| format!("{:.2},{:.2}", q.x, q.y)).collect();
                    let zone = p.zone.map_or("-".to_string(), |z| z.to_string());
                    writeln!(out, "agent {} sample {k} zone {zone} {}", t.agent_id, xy.join(" "))?;
                    for st in &p.steps {
                        for (cell, pr) in st.cells.iter().zip(&st.p) {
                            heat.data[*cell as usize] += pr;
                        }
                    }
                    overlays.push(Overlay { points: pts, color: [0, 220, 255] });
                }
                overlays.push(Overlay { points: t.past.clone(), color: [255, 255, 255] });
                overlays.push(Overlay { points: t.future.clone(), color: [0, 255, 0] });
            }
            if let Some(p) = img {
                write_ppm(&p, &heat, Some(&sample.drivable), &spec, &overlays)?;
            }
        }
        Command::Plot {
            cfg,
            data,
            index,
            what,
            frame,
            out: img,
            tensor,
        } => {
            let c = cfg.resolve()?;
            let scenario = scenario_at(&data.dir()?, &c, index)?;
            let spec = c.model().spec();
            let raster = build_scene_raster(&scenario, c.tau - 1, c.tau, &spec)?;
            let drivable = crate::raster::local_drivable(&scenario.layout, &raster.frame, &spec);
            let k = frame.unwrap_or(c.tau - 1);
            if k >= c.tau {
                return Err(Error::Config(format!("frame {k} outside the observation window 0..{}", c.tau)));
            }
            let channel = |ch: usize| Grid::from_vec(spec.h, spec.w, raster.frames[k].data.iter().map(|v| v[ch] as f64).collect());
            let values = match what.as_str() {
                "height" => channel(0),
                "intensity" => channel(1),
                "density" => channel(2),
                "map" => Grid::from_vec(spec.h, spec.w, raster.map.data.iter().map(|v| *v as f64).collect()),
                "drivable" => Grid::from_vec(spec.h, spec.w, drivable.data.iter().map(|v| 1.0 - *v as f64).collect()),
                _ => {
                    return Err(Error::Config(format!(
                        "unknown plot {what:?} (height, intensity, density, map, drivable)"
                    )))
                }
            };
            write_ppm(&img, &values, Some(&drivable), &spec, &[])?;
            if let Some(p) = tensor {
                let data = raster.frames.iter().flat_map(|f| f.data.iter().flatten().copied()).collect();
                let t = Tensor {
                    h: spec.h,
                    w: spec.w,
                    channels: 3,
                    tau: c.tau,
                    origin: spec.origin,
                    res: spec.res,
                    data,
                };
                write_tensor(&p, &t)?;
            }
        }
        Command::Config { cfg } => {
            write!(out, "{}", cfg.resolve()?.echo())?;
        }
    }
    Ok(())
}
