//! Model dimensions and the named parameter layout shared by the relational
//! encoder and the predictor heads.

use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::nn::{softplus_inverse, ParamStore};
use crate::raster::local_spec;

/// Side of the node partition; n = NODE_GRID².
pub const NODE_GRID: usize = 5;
pub const NODES: usize = NODE_GRID * NODE_GRID;
/// Ordered node pairs with i ≠ j.
pub const PAIRS: usize = NODES * (NODES - 1);
/// Side of the average-pooled input fed to the convolutions.
pub const POOLED: usize = 4 * NODE_GRID;
/// Width of the per-step kinematic features.
pub const KIN: usize = 4;
/// Meters per unit of the decoder's position residuals.
pub const RESIDUAL_SCALE: f64 = 5.0;
/// Position scale of the motion and kinematic features, meters.
pub const POS_SCALE: f64 = 20.0;
/// Initial per-step spread of the decoded heatmaps, cells.
pub const INIT_SPREAD_CELLS: f64 = 4.0;
pub const MIN_SPREAD_CELLS: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub h: usize,
    pub w: usize,
    pub res: f64,
    pub tau: usize,
    pub delta: usize,
    /// Intention classes.
    pub g: usize,
    /// Node width.
    pub d: usize,
    /// Motion-context width.
    pub m: usize,
    /// Hidden channels of the first convolution.
    pub c1: usize,
    /// Width of φ outputs.
    pub edge: usize,
    /// Width of θ outputs and of F.
    pub feat: usize,
    pub hidden: usize,
    pub latent: usize,
    pub use_map: bool,
    pub use_intention: bool,
}

impl ModelConfig {
    /// Reduced dimensions used by tests and the acceptance benchmark.
    pub fn test_dims(h: usize, tau: usize, delta: usize, g: usize) -> Self {
        ModelConfig {
            h,
            w: h,
            res: 0.5,
            tau,
            delta,
            g,
            d: 8,
            m: 8,
            c1: 8,
            edge: 16,
            feat: 16,
            hidden: 32,
            latent: 8,
            use_map: true,
            use_intention: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("H", self.h),
            ("W", self.w),
            ("tau", self.tau),
            ("delta", self.delta),
            ("G", self.g),
            ("d", self.d),
            ("m", self.m),
            ("c1", self.c1),
            ("edge", self.edge),
            ("feat", self.feat),
            ("hidden", self.hidden),
            ("latent", self.latent),
        ];
        if let Some((k, _)) = pos.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{k} must be at least 1")));
        }
        if self.h % POOLED != 0 || self.w % POOLED != 0 {
            return Err(Error::Config(format!(
                "H and W must be multiples of {POOLED}, got {}×{}",
                self.h, self.w
            )));
        }
        if !(self.res > 0.0) {
            return Err(Error::Config(format!("res must be positive, got {}", self.res)));
        }
        Ok(())
    }

    /// Input channels of the node extractor.
    pub fn channels(&self) -> usize {
        3 * self.tau + usize::from(self.use_map)
    }

    pub fn spec(&self) -> GridSpec {
        local_spec(self.h, self.w, self.res)
    }

    pub fn center(&self) -> crate::geometry::Vec2 {
        crate::geometry::Vec2::new(0.5 * self.w as f64 * self.res, 0.5 * self.h as f64 * self.res)
    }

    /// Width of the posterior input: target residuals, q, one-hot g, kinematics.
    pub fn posterior_in(&self) -> usize {
        2 * self.delta + self.m + self.g + KIN
    }

    pub fn decoder_in(&self) -> usize {
        self.feat + self.m + self.g + KIN
    }
}

/// Ranges of every parameter group inside the flat store.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub conv1_w: Range<usize>,
    pub conv1_b: Range<usize>,
    pub conv2_w: Range<usize>,
    pub conv2_b: Range<usize>,
    pub phi_a: Range<usize>,
    pub phi_b: Range<usize>,
    pub phi_bias: Range<usize>,
    pub theta_r: Range<usize>,
    pub theta_q: Range<usize>,
    pub theta_bias: Range<usize>,
    pub motion_wx: Range<usize>,
    pub motion_wh: Range<usize>,
    pub motion_b: Range<usize>,
    pub intent: Option<Mlp>,
    pub post: Option<Mlp>,
    pub proj: Option<Range<usize>>,
    pub dec: Mlp,
    pub map_gain: Option<Range<usize>>,
}

/// Two-layer perceptron `W2 relu(W1 x + b1) + b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub w1: Range<usize>,
    pub b1: Range<usize>,
    pub w2: Range<usize>,
    pub b2: Range<usize>,
    pub n_in: usize,
    pub n_hidden: usize,
    pub n_out: usize,
}

impl Mlp {
    fn add(store: &mut ParamStore, prefix: &str, n_in: usize, n_hidden: usize, n_out: usize) -> Mlp {
        Mlp {
            w1: store.add(&format!("{prefix}.w1"), &[n_hidden, n_in]),
            b1: store.add(&format!("{prefix}.b1"), &[n_hidden]),
            w2: store.add(&format!("{prefix}.w2"), &[n_out, n_hidden]),
            b2: store.add(&format!("{prefix}.b2"), &[n_out]),
            n_in,
            n_hidden,
            n_out,
        }
    }
}

impl Layout {
    pub fn build(cfg: &ModelConfig, store: &mut ParamStore) -> Layout {
        let c = cfg.channels();
        Layout {
            conv1_w: store.add("nodes.conv1.w", &[cfg.c1, 4 * c]),
            conv1_b: store.add("nodes.conv1.b", &[cfg.c1]),
            conv2_w: store.add("nodes.conv2.w", &[cfg.d, 4 * cfg.c1]),
            conv2_b: store.add("nodes.conv2.b", &[cfg.d]),
            phi_a: store.add("phi.a", &[cfg.edge, cfg.d]),
            phi_b: store.add("phi.b", &[cfg.edge, cfg.d]),
            phi_bias: store.add("phi.bias", &[cfg.edge]),
            theta_r: store.add("theta.r", &[cfg.feat, cfg.edge]),
            theta_q: store.add("theta.q", &[cfg.feat, cfg.m]),
            theta_bias: store.add("theta.bias", &[cfg.feat]),
            motion_wx: store.add("motion.wx", &[cfg.m, 4]),
            motion_wh: store.add("motion.wh", &[cfg.m, cfg.m]),
            motion_b: store.add("motion.b", &[cfg.m]),
            intent: cfg
                .use_intention
                .then(|| Mlp::add(store, "intent", cfg.feat, cfg.hidden, cfg.g)),
            post: cfg
                .use_intention
                .then(|| Mlp::add(store, "post", cfg.posterior_in(), cfg.hidden, 2 * cfg.latent)),
            proj: cfg
                .use_intention
                .then(|| store.add("dec.proj", &[cfg.feat, cfg.latent])),
            dec: Mlp::add(store, "dec", cfg.decoder_in(), cfg.hidden, 3 * cfg.delta),
            map_gain: cfg.use_map.then(|| store.add("dec.map_gain", &[1])),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub cfg: ModelConfig,
    pub params: ParamStore,
    pub lay: Layout,
}

impl Model {
    /// All-zero parameters.
    pub fn zeros(cfg: ModelConfig) -> Result<Model> {
        cfg.validate()?;
        let mut params = ParamStore::default();
        let lay = Layout::build(&cfg, &mut params);
        Ok(Model { cfg, params, lay })
    }

    /// Scaled Gaussian initialization, rounded to f32.
    pub fn init(cfg: ModelConfig, seed: u64) -> Result<Model> {
        let mut model = Model::zeros(cfg)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = model.lay.clone();
        let p = &mut model.params;
        let he = |fan: usize| (2.0 / fan as f64).sqrt();
        let xavier = |fan: usize| (1.0 / fan as f64).sqrt();
        p.randn(l.conv1_w.clone(), he(4 * cfg.channels()), &mut rng);
        p.randn(l.conv2_w.clone(), he(4 * cfg.c1), &mut rng);
        p.randn(l.phi_a.clone(), he(2 * cfg.d), &mut rng);
        p.randn(l.phi_b.clone(), he(2 * cfg.d), &mut rng);
        p.randn(l.theta_r.clone(), he(cfg.edge + cfg.m), &mut rng);
        p.randn(l.theta_q.clone(), he(cfg.edge + cfg.m), &mut rng);
        p.randn(l.motion_wx.clone(), xavier(4), &mut rng);
        p.randn(l.motion_wh.clone(), 0.5 * xavier(cfg.m), &mut rng);
        if let Some(m) = &l.intent {
            p.randn(m.w1.clone(), he(m.n_in), &mut rng);
            p.randn(m.w2.clone(), 0.1 * xavier(m.n_hidden), &mut rng);
        }
        if let Some(m) = &l.post {
            p.randn(m.w1.clone(), he(m.n_in), &mut rng);
            p.randn(m.w2.clone(), 0.1 * xavier(m.n_hidden), &mut rng);
        }
        if let Some(r) = &l.proj {
            p.randn(r.clone(), xavier(cfg.latent), &mut rng);
        }
        p.randn(l.dec.w1.clone(), he(l.dec.n_in), &mut rng);
        p.randn(l.dec.w2.clone(), 0.1 * xavier(l.dec.n_hidden), &mut rng);
        let spread = softplus_inverse(INIT_SPREAD_CELLS - MIN_SPREAD_CELLS);
        for t in 0..cfg.delta {
            p.values[l.dec.b2.start + 3 * t + 2] = spread;
        }
        p.quantize();
        Ok(model)
    }

    pub fn p(&self, r: &Range<usize>) -> &[f64] {
        &self.params.values[r.clone()]
    }

    pub fn map_gain(&self) -> f64 {
        self.lay.map_gain.as_ref().map_or(0.0, |r| self.params.values[r.start])
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }
}
