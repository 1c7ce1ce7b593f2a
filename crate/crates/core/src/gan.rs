//! Progressive conditional generator and critic.

use serde::{Deserialize, Serialize};
use tch::{Kind, Tensor};

use crate::encoders::{stack_volume, Encoder, EncoderKind};
use crate::layers::{area_resize, lrelu, minibatch_stddev, pixel_norm, upsample2x, EqConv, EqLinear, PIXELNORM_EPS};
use crate::params::ParamStore;
use crate::{CoreError, Result, FEATURE_DIM};

pub const START_SCALE: i64 = 4;
pub const MAX_SCALE: i64 = 64;
pub const COND_CHANNELS: i64 = 63;
/// Condition plus the RGB image.
pub const CRITIC_IN_CHANNELS: i64 = COND_CHANNELS + 3;
const BASE_CHANNELS: i64 = 256;
const LEAKY_GAIN: f64 = std::f64::consts::SQRT_2;

/// Feature channels per level; level `l` works at `4 * 2^l` pixels.
pub const CHANNELS: [i64; 5] = [256, 256, 128, 64, 32];

pub fn level_of(scale: i64) -> Result<usize> {
    (0..CHANNELS.len())
        .find(|&l| START_SCALE << l == scale)
        .ok_or_else(|| CoreError::Config(format!("scale must be one of 4, 8, 16, 32, 64; got {scale}")))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleState {
    pub scale: i64,
    pub alpha: f64,
}

impl ScaleState {
    pub fn new(scale: i64, alpha: f64) -> Result<Self> {
        let state = Self { scale, alpha };
        state.validate()?;
        Ok(state)
    }

    pub fn validate(&self) -> Result<()> {
        level_of(self.scale)?;
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(CoreError::Config(format!("alpha must be in [0, 1], got {}", self.alpha)));
        }
        if self.scale == START_SCALE && self.alpha != 1.0 {
            return Err(CoreError::Config("the 4x4 stage has nothing to fade from; alpha must be 1".into()));
        }
        Ok(())
    }
}

fn blend(new: Tensor, old: Tensor, alpha: f64) -> Tensor {
    new * alpha + old * (1.0 - alpha)
}

struct GenBlock {
    conv1: EqConv,
    conv2: EqConv,
}

pub struct Generator {
    prefix: String,
    blocks: Vec<GenBlock>,
    to_rgb: Vec<EqConv>,
}

impl Generator {
    pub fn new(store: &mut ParamStore, prefix: &str) -> Result<Self> {
        let mut g = Self {
            prefix: prefix.to_string(),
            blocks: Vec::new(),
            to_rgb: Vec::new(),
        };
        g.add_level(store)?;
        Ok(g)
    }

    fn add_level(&mut self, store: &mut ParamStore) -> Result<()> {
        let l = self.blocks.len();
        let s = START_SCALE << l;
        let c = CHANNELS[l];
        let cin = if l == 0 { BASE_CHANNELS } else { CHANNELS[l - 1] };
        let p = &self.prefix;
        self.blocks.push(GenBlock {
            conv1: EqConv::new(store, &format!("{p}.b{s}.conv1"), cin, c, &[3, 3], &[1, 1], &[1, 1], LEAKY_GAIN)?,
            conv2: EqConv::new(store, &format!("{p}.b{s}.conv2"), c, c, &[3, 3], &[1, 1], &[1, 1], LEAKY_GAIN)?,
        });
        self.to_rgb
            .push(EqConv::new(store, &format!("{p}.rgb{s}"), c, 3, &[1, 1], &[1, 1], &[0, 0], 1.0)?);
        Ok(())
    }

    pub fn scale(&self) -> i64 {
        START_SCALE << (self.blocks.len() - 1)
    }

    fn run_block(&self, store: &ParamStore, l: usize, x: &Tensor) -> Tensor {
        let b = &self.blocks[l];
        let x = if l > 0 { upsample2x(x) } else { x.shallow_clone() };
        let x = pixel_norm(&lrelu(&b.conv1.forward(store, &x)), PIXELNORM_EPS);
        pixel_norm(&lrelu(&b.conv2.forward(store, &x)), PIXELNORM_EPS)
    }

    /// `(batch, 4096)` features to a `(batch, 3, scale, scale)` image.
    pub fn forward(&self, store: &ParamStore, features: &Tensor, state: ScaleState) -> Result<Tensor> {
        state.validate()?;
        if state.scale != self.scale() {
            return Err(CoreError::Config(format!(
                "generator is at scale {}, asked for {}",
                self.scale(),
                state.scale
            )));
        }
        let s = features.size();
        if s.len() != 2 || s[1] != FEATURE_DIM {
            return Err(CoreError::Shape(format!("features must be (batch, {FEATURE_DIM}), got {s:?}")));
        }
        let mut x = pixel_norm(&features.view([s[0], BASE_CHANNELS, 4, 4]), PIXELNORM_EPS);
        let top = self.blocks.len() - 1;
        let mut prev = None;
        for l in 0..=top {
            if l == top {
                prev = Some(x.shallow_clone());
            }
            x = self.run_block(store, l, &x);
        }
        let new = self.to_rgb[top].forward(store, &x);
        if top == 0 || state.alpha == 1.0 {
            return Ok(new);
        }
        let old = upsample2x(&self.to_rgb[top - 1].forward(store, &prev.unwrap()));
        Ok(blend(new, old, state.alpha))
    }
}

struct CriticBlock {
    conv1: EqConv,
    conv2: EqConv,
}

pub struct Discriminator {
    prefix: String,
    from_rgb: Vec<EqConv>,
    blocks: Vec<Option<CriticBlock>>,
    final_conv: EqConv,
    final_dense: EqConv,
    out: EqLinear,
}

impl Discriminator {
    pub fn new(store: &mut ParamStore, prefix: &str) -> Result<Self> {
        let c = CHANNELS[0];
        let mut d = Self {
            prefix: prefix.to_string(),
            from_rgb: Vec::new(),
            blocks: Vec::new(),
            final_conv: EqConv::new(store, &format!("{prefix}.final.conv"), c + 1, c, &[3, 3], &[1, 1], &[1, 1], LEAKY_GAIN)?,
            final_dense: EqConv::new(store, &format!("{prefix}.final.dense"), c, c, &[4, 4], &[1, 1], &[0, 0], LEAKY_GAIN)?,
            out: EqLinear::new(store, &format!("{prefix}.final.out"), c, 1, 1.0)?,
        };
        d.add_level(store)?;
        Ok(d)
    }

    fn add_level(&mut self, store: &mut ParamStore) -> Result<()> {
        let l = self.from_rgb.len();
        let s = START_SCALE << l;
        let c = CHANNELS[l];
        let p = &self.prefix;
        self.from_rgb.push(EqConv::new(
            store,
            &format!("{p}.from{s}"),
            CRITIC_IN_CHANNELS,
            c,
            &[1, 1],
            &[1, 1],
            &[0, 0],
            LEAKY_GAIN,
        )?);
        self.blocks.push(if l == 0 {
            None
        } else {
            Some(CriticBlock {
                conv1: EqConv::new(store, &format!("{p}.b{s}.conv1"), c, c, &[3, 3], &[1, 1], &[1, 1], LEAKY_GAIN)?,
                conv2: EqConv::new(store, &format!("{p}.b{s}.conv2"), c, CHANNELS[l - 1], &[3, 3], &[1, 1], &[1, 1], LEAKY_GAIN)?,
            })
        });
        Ok(())
    }

    pub fn scale(&self) -> i64 {
        START_SCALE << (self.from_rgb.len() - 1)
    }

    /// Input channel count of every fromRGB adapter.
    pub fn input_channels(&self, store: &ParamStore) -> Vec<i64> {
        self.from_rgb.iter().map(|c| store.get(c.weight_name()).size()[1]).collect()
    }

    fn adapter(&self, store: &ParamStore, l: usize, image: &Tensor, cond64: &Tensor) -> Result<Tensor> {
        let cond = area_resize(cond64, START_SCALE << l)?;
        Ok(lrelu(&self.from_rgb[l].forward(store, &Tensor::cat(&[image, &cond], 1))))
    }

    fn run_block(&self, store: &ParamStore, l: usize, x: &Tensor) -> Tensor {
        let b = self.blocks[l].as_ref().expect("level 0 has no block");
        let x = lrelu(&b.conv1.forward(store, x));
        let x = lrelu(&b.conv2.forward(store, &x));
        x.avg_pool2d([2, 2], [2, 2], [0, 0], false, true, None)
    }

    /// Unbounded critic score per sample. `cond64` is the full-resolution
    /// `(batch, 63, 64, 64)` stacked observation window; it is area-resized
    /// to whichever scale each adapter works at.
    pub fn forward(&self, store: &ParamStore, image: &Tensor, cond64: &Tensor, state: ScaleState) -> Result<Tensor> {
        state.validate()?;
        let top = self.from_rgb.len() - 1;
        let s = image.size();
        if state.scale != self.scale() || s.len() != 4 || s[1] != 3 || s[2] != state.scale || s[3] != state.scale {
            return Err(CoreError::Shape(format!(
                "critic at scale {} got image {s:?} for state {state:?}",
                self.scale()
            )));
        }
        let cs = cond64.size();
        if cs != [s[0], COND_CHANNELS, MAX_SCALE, MAX_SCALE] {
            return Err(CoreError::Shape(format!("condition must be (batch, 63, 64, 64), got {cs:?}")));
        }
        let mut x = self.adapter(store, top, image, cond64)?;
        if top > 0 {
            x = self.run_block(store, top, &x);
            if state.alpha < 1.0 {
                let small = image.avg_pool2d([2, 2], [2, 2], [0, 0], false, true, None);
                let old = self.adapter(store, top - 1, &small, cond64)?;
                x = blend(x, old, state.alpha);
            }
            for l in (1..top).rev() {
                x = self.run_block(store, l, &x);
            }
        }
        let x = minibatch_stddev(&x);
        let x = lrelu(&self.final_conv.forward(store, &x));
        let x = lrelu(&self.final_dense.forward(store, &x)).flatten(1, -1);
        Ok(self.out.forward(store, &x).squeeze_dim(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub encoder: EncoderKind,
    pub seed: u64,
    pub routing_iterations: usize,
}

/// Encoder, generator and critic sharing one parameter store under the
/// prefixes `enc.`, `gen.` and `disc.`.
pub struct Networks {
    pub spec: ModelSpec,
    pub store: ParamStore,
    pub encoder: Encoder,
    pub generator: Generator,
    pub critic: Discriminator,
}

impl Networks {
    pub fn new(spec: ModelSpec) -> Result<Self> {
        let mut store = ParamStore::new(spec.seed);
        let encoder = Encoder::new(spec.encoder, &mut store, "enc", spec.routing_iterations)?;
        let generator = Generator::new(&mut store, "gen")?;
        let critic = Discriminator::new(&mut store, "disc")?;
        Ok(Self {
            spec,
            store,
            encoder,
            generator,
            critic,
        })
    }

    /// Builds the networks already grown to `scale`.
    pub fn at_scale(spec: ModelSpec, scale: i64) -> Result<Self> {
        let level = level_of(scale)?;
        let mut n = Self::new(spec)?;
        for l in 1..=level {
            n.grow(START_SCALE << l)?;
        }
        Ok(n)
    }

    pub fn scale(&self) -> i64 {
        self.generator.scale()
    }

    /// Adds the next generator block and critic block with their adapters.
    pub fn grow(&mut self, new_scale: i64) -> Result<()> {
        if new_scale != 2 * self.scale() || new_scale > MAX_SCALE {
            return Err(CoreError::Config(format!(
                "can only grow from {} to {}, not to {new_scale}",
                self.scale(),
                2 * self.scale()
            )));
        }
        self.generator.add_level(&mut self.store)?;
        self.critic.add_level(&mut self.store)?;
        Ok(())
    }

    pub fn encode(&self, volume: &Tensor) -> Result<Tensor> {
        self.encoder.forward(&self.store, volume)
    }

    pub fn generate(&self, features: &Tensor, state: ScaleState) -> Result<Tensor> {
        self.generator.forward(&self.store, features, state)
    }

    pub fn critic_score(&self, image: &Tensor, cond64: &Tensor, state: ScaleState) -> Result<Tensor> {
        self.critic.forward(&self.store, image, cond64, state)
    }

    /// Generated image in `[-1, 1]` units for a `(batch, 21, 3, 64, 64)` window.
    pub fn predict(&self, volume: &Tensor, state: ScaleState) -> Result<Tensor> {
        self.generate(&self.encode(volume)?, state)
    }

    /// Parameter names for the generator side (encoder and generator) and
    /// the critic side.
    pub fn partition(&self) -> (Vec<String>, Vec<String>) {
        self.store.names().into_iter().partition(|n| !n.starts_with("disc."))
    }

    pub fn stack_condition(volume: &Tensor) -> Result<Tensor> {
        stack_volume(volume)
    }
}

/// Maps `[0, 1]` images to the generator's `[-1, 1]` range.
pub fn to_signed(x: &Tensor) -> Tensor {
    x * 2.0 - 1.0
}

/// Maps generator output back to `[0, 1]`, clamping.
pub fn to_unit(x: &Tensor) -> Tensor {
    ((x + 1.0) * 0.5).clamp(0.0, 1.0).to_kind(Kind::Float)
}
