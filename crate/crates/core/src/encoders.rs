//! Observation encoders. Every variant takes a `(batch, 21, 3, 64, 64)`
//! window volume (oldest frame first) and returns `(batch, 4096)` features.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use tch::{Kind, Tensor};

use crate::capsule::{ConvCapsule, PrimaryCapsules};
use crate::layers::{lrelu, EqConv};
use crate::params::ParamStore;
use crate::{CoreError, Result, FEATURE_DIM};

const FRAMES: i64 = topdown_envgen::WINDOW as i64;
const SIDE: i64 = topdown_envgen::IMAGE_SIZE as i64;
const STACKED: i64 = 3 * FRAMES;
const LEAKY_GAIN: f64 = std::f64::consts::SQRT_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Baseline,
    Conv3d,
    Conv2d1d,
    Capsule,
}

impl EncoderKind {
    pub const ALL: [EncoderKind; 4] = [Self::Baseline, Self::Conv3d, Self::Conv2d1d, Self::Capsule];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Baseline => "baseline",
            Self::Conv3d => "conv3d",
            Self::Conv2d1d => "conv2d1d",
            Self::Capsule => "capsule",
        }
    }

    /// The per-frame 2D + temporal 1D variant fails to learn from the data;
    /// it is kept runnable but reported as such.
    pub fn known_nonlearning(self) -> bool {
        self == Self::Conv2d1d
    }
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EncoderKind {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| CoreError::Config(format!("unknown encoder {s:?} (baseline|conv3d|conv2d1d|capsule)")))
    }
}

fn check_volume(x: &Tensor) -> Result<i64> {
    let s = x.size();
    if s.len() != 5 || s[1..] != [FRAMES, 3, SIDE, SIDE] {
        return Err(CoreError::Shape(format!(
            "encoder input must be (batch, {FRAMES}, 3, {SIDE}, {SIDE}), got {s:?}"
        )));
    }
    Ok(s[0])
}

/// Channel-stacked view: channel `3j + k` is channel `k` of frame `j`.
pub fn stack_volume(x: &Tensor) -> Result<Tensor> {
    let b = check_volume(x)?;
    Ok(x.contiguous().view([b, STACKED, SIDE, SIDE]))
}

/// Nine 3x3 convolutions on the 63-channel stacked image.
pub struct BaselineEncoder {
    convs: Vec<EqConv>,
    last: EqConv,
}

impl BaselineEncoder {
    pub const CHANNELS: [i64; 8] = [64, 64, 128, 128, 256, 256, 512, 512];

    pub fn new(store: &mut ParamStore, prefix: &str) -> Result<Self> {
        let mut convs = Vec::new();
        let mut cin = STACKED;
        for (i, &c) in Self::CHANNELS.iter().enumerate() {
            let s = if i % 2 == 1 { 2 } else { 1 };
            convs.push(EqConv::new(store, &format!("{prefix}.conv{i}"), cin, c, &[3, 3], &[s, s], &[1, 1], LEAKY_GAIN)?);
            cin = c;
        }
        let last = EqConv::new(store, &format!("{prefix}.conv8"), cin, 256, &[3, 3], &[1, 1], &[1, 1], 1.0)?;
        Ok(Self { convs, last })
    }

    pub fn forward(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        let mut h = stack_volume(x)?;
        for conv in &self.convs {
            h = lrelu(&conv.forward(store, &h));
        }
        Ok(self.last.forward(store, &h).flatten(1, -1))
    }
}

/// 3D convolutions over (time, height, width). Temporal kernel 3 with stride
/// 1 and no temporal padding, so each layer removes two time steps; a final
/// layer spans the remaining depth.
pub struct Conv3dEncoder {
    convs: Vec<EqConv>,
    collapse: EqConv,
}

impl Conv3dEncoder {
    pub const CHANNELS: [i64; 8] = [16, 16, 32, 32, 64, 64, 128, 128];
    pub const TEMPORAL_KERNEL: i64 = 3;
    pub const SPATIAL_KERNEL: i64 = 4;

    pub fn new(store: &mut ParamStore, prefix: &str) -> Result<Self> {
        let (kt, ks) = (Self::TEMPORAL_KERNEL, Self::SPATIAL_KERNEL);
        let mut convs = Vec::new();
        let mut cin = 3;
        for (i, &c) in Self::CHANNELS.iter().enumerate() {
            let name = format!("{prefix}.conv{i}");
            let conv = if i % 2 == 1 {
                EqConv::new(store, &name, cin, c, &[kt, ks, ks], &[1, 2, 2], &[0, 1, 1], LEAKY_GAIN)?
            } else {
                // even kernel at stride 1: pad one before and two after
                EqConv::new(store, &name, cin, c, &[kt, ks, ks], &[1, 1, 1], &[0, 0, 0], LEAKY_GAIN)?
                    .with_pre_pad(&[1, 2, 1, 2, 0, 0])
            };
            convs.push(conv);
            cin = c;
        }
        let depth = *Self::depth_trace().last().unwrap();
        let collapse = EqConv::new(
            store,
            &format!("{prefix}.collapse"),
            cin,
            256,
            &[depth, 3, 3],
            &[1, 1, 1],
            &[0, 1, 1],
            1.0,
        )?;
        Ok(Self { convs, collapse })
    }

    /// Temporal depth entering each layer, ending with the depth before the
    /// collapse layer.
    pub fn depth_trace() -> Vec<i64> {
        let mut d = vec![FRAMES];
        for _ in Self::CHANNELS {
            d.push(d.last().unwrap() - (Self::TEMPORAL_KERNEL - 1));
        }
        d
    }

    /// Activations after every layer, `(batch, channels, depth, h, w)`.
    pub fn forward_trace(&self, store: &ParamStore, x: &Tensor) -> Result<Vec<Tensor>> {
        check_volume(x)?;
        let mut h = x.permute([0, 2, 1, 3, 4]);
        let mut out = Vec::new();
        for conv in &self.convs {
            h = lrelu(&conv.forward(store, &h));
            out.push(h.shallow_clone());
        }
        out.push(self.collapse.forward(store, &h));
        Ok(out)
    }

    pub fn forward(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        let last = self.forward_trace(store, x)?.pop().unwrap();
        Ok(last.flatten(1, -1))
    }
}

/// Shared per-frame 2D CNN to 4096 features per frame, then 1D convolutions
/// along time and a mean over the remaining steps.
pub struct Conv2d1dEncoder {
    frame_convs: Vec<EqConv>,
    temporal: [EqConv; 2],
}

impl Conv2d1dEncoder {
    pub const FRAME_CHANNELS: [i64; 5] = [16, 32, 64, 128, 256];

    pub fn new(store: &mut ParamStore, prefix: &str) -> Result<Self> {
        let mut frame_convs = Vec::new();
        let mut cin = 3;
        for (i, &c) in Self::FRAME_CHANNELS.iter().enumerate() {
            let s = if i + 1 == Self::FRAME_CHANNELS.len() { 1 } else { 2 };
            frame_convs.push(EqConv::new(store, &format!("{prefix}.frame{i}"), cin, c, &[3, 3], &[s, s], &[1, 1], LEAKY_GAIN)?);
            cin = c;
        }
        let t0 = EqConv::new(store, &format!("{prefix}.time0"), FEATURE_DIM, 1024, &[3], &[1], &[0], LEAKY_GAIN)?;
        let t1 = EqConv::new(store, &format!("{prefix}.time1"), 1024, FEATURE_DIM, &[3], &[1], &[0], 1.0)?;
        Ok(Self {
            frame_convs,
            temporal: [t0, t1],
        })
    }

    /// Per-frame features, `(batch, 21, 4096)`.
    pub fn frame_features(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        let b = check_volume(x)?;
        let mut h = x.contiguous().view([b * FRAMES, 3, SIDE, SIDE]);
        for conv in &self.frame_convs {
            h = lrelu(&conv.forward(store, &h));
        }
        Ok(h.view([b, FRAMES, FEATURE_DIM]))
    }

    pub fn forward(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        let f = self.frame_features(store, x)?.transpose(1, 2);
        let h = lrelu(&self.temporal[0].forward(store, &f));
        let h = self.temporal[1].forward(store, &h);
        Ok(h.mean_dim(2, false, None::<Kind>))
    }
}

/// Stem convolution, primary capsules and two routed convolutional capsule
/// layers ending in one 16-dimensional capsule type on a 16x16 grid.
pub struct CapsuleEncoder {
    stem: EqConv,
    caps1: PrimaryCapsules,
    caps2: ConvCapsule,
    caps3: ConvCapsule,
}

impl CapsuleEncoder {
    pub const CAPS1: (i64, i64) = (32, 8);
    pub const CAPS2: (i64, i64) = (16, 8);
    pub const CAPS3: (i64, i64) = (1, 16);

    pub fn new(store: &mut ParamStore, prefix: &str, iterations: usize) -> Result<Self> {
        let stem = EqConv::new(store, &format!("{prefix}.stem"), STACKED, 64, &[3, 3], &[2, 2], &[1, 1], LEAKY_GAIN)?;
        let caps1 = PrimaryCapsules::new(store, &format!("{prefix}.caps1"), 64, Self::CAPS1.0, Self::CAPS1.1)?;
        let caps2 = ConvCapsule::new(store, &format!("{prefix}.caps2"), Self::CAPS1, Self::CAPS2, 3, 2, 1, iterations)?;
        let caps3 = ConvCapsule::new(store, &format!("{prefix}.caps3"), Self::CAPS2, Self::CAPS3, 3, 1, 1, iterations)?;
        Ok(Self {
            stem,
            caps1,
            caps2,
            caps3,
        })
    }

    /// Outputs of the three capsule layers.
    pub fn forward_trace(&self, store: &ParamStore, x: &Tensor) -> Result<[Tensor; 3]> {
        let h = lrelu(&self.stem.forward(store, &stack_volume(x)?));
        let c1 = self.caps1.forward(store, &h);
        let c2 = self.caps2.forward(store, &c1)?;
        let c3 = self.caps3.forward(store, &c2)?;
        Ok([c1, c2, c3])
    }

    pub fn forward(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        let [_, _, c3] = self.forward_trace(store, x)?;
        Ok(c3.flatten(1, -1))
    }
}

pub enum Encoder {
    Baseline(BaselineEncoder),
    Conv3d(Conv3dEncoder),
    Conv2d1d(Conv2d1dEncoder),
    Capsule(CapsuleEncoder),
}

impl Encoder {
    pub fn new(kind: EncoderKind, store: &mut ParamStore, prefix: &str, routing_iterations: usize) -> Result<Self> {
        Ok(match kind {
            EncoderKind::Baseline => Self::Baseline(BaselineEncoder::new(store, prefix)?),
            EncoderKind::Conv3d => Self::Conv3d(Conv3dEncoder::new(store, prefix)?),
            EncoderKind::Conv2d1d => Self::Conv2d1d(Conv2d1dEncoder::new(store, prefix)?),
            EncoderKind::Capsule => Self::Capsule(CapsuleEncoder::new(store, prefix, routing_iterations)?),
        })
    }

    pub fn kind(&self) -> EncoderKind {
        match self {
            Self::Baseline(_) => EncoderKind::Baseline,
            Self::Conv3d(_) => EncoderKind::Conv3d,
            Self::Conv2d1d(_) => EncoderKind::Conv2d1d,
            Self::Capsule(_) => EncoderKind::Capsule,
        }
    }

    pub fn forward(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        match self {
            Self::Baseline(e) => e.forward(store, x),
            Self::Conv3d(e) => e.forward(store, x),
            Self::Conv2d1d(e) => e.forward(store, x),
            Self::Capsule(e) => e.forward(store, x),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn volume(b: i64, seed: i64) -> Tensor {
        tch::manual_seed(seed);
        Tensor::rand([b, FRAMES, 3, SIDE, SIDE], (Kind::Float, tch::Device::Cpu))
    }

    #[test]
    fn kind_round_trip() {
        for k in EncoderKind::ALL {
            assert_eq!(k.as_str().parse::<EncoderKind>().unwrap(), k);
        }
        assert!("lstm".parse::<EncoderKind>().is_err());
        assert!(EncoderKind::Conv2d1d.known_nonlearning());
        assert!(!EncoderKind::Capsule.known_nonlearning());
    }

    #[test]
    fn stacking_matches_observation_layout() {
        let x = volume(2, 0);
        let s = stack_volume(&x).unwrap();
        for (j, k) in [(0, 0), (7, 2), (20, 1)] {
            assert!(s.get(1).get(3 * j + k).equal(&x.get(1).get(j).get(k)));
        }
    }

    #[test]
    fn baseline_is_pure_and_sensitive() {
        let mut store = ParamStore::new(9);
        let enc = BaselineEncoder::new(&mut store, "enc").unwrap();
        let zeros = Tensor::zeros([1, FRAMES, 3, SIDE, SIDE], (Kind::Float, tch::Device::Cpu));
        let a = enc.forward(&store, &zeros).unwrap();
        assert!(a.equal(&enc.forward(&store, &zeros).unwrap()));
        let x = volume(1, 1);
        let y = x.copy();
        let _ = y.get(0).get(4).get(1).f_add_scalar_(0.5).unwrap();
        let fx = enc.forward(&store, &x).unwrap();
        let fy = enc.forward(&store, &y).unwrap();
        assert_eq!(fx.size(), vec![1, FEATURE_DIM]);
        assert!(!fx.equal(&fy));
    }

    #[test]
    fn conv3d_depth_and_temporal_sensitivity() {
        assert_eq!(Conv3dEncoder::depth_trace(), vec![21, 19, 17, 15, 13, 11, 9, 7, 5]);
        let mut store = ParamStore::new(2);
        let enc = Conv3dEncoder::new(&mut store, "enc").unwrap();
        let x = volume(1, 2);
        let trace = enc.forward_trace(&store, &x).unwrap();
        let depths: Vec<i64> = trace.iter().map(|t| t.size()[2]).collect();
        assert_eq!(depths, vec![19, 17, 15, 13, 11, 9, 7, 5, 1]);
        assert_eq!(trace.last().unwrap().size(), vec![1, 256, 1, 4, 4]);
        let swapped = Tensor::cat(&[x.narrow(1, 1, 1), x.narrow(1, 0, 1), x.narrow(1, 2, 19)], 1);
        assert!(!enc.forward(&store, &x).unwrap().equal(&enc.forward(&store, &swapped).unwrap()));
        let too_deep = Tensor::zeros([1, 22, 3, SIDE, SIDE], (Kind::Float, tch::Device::Cpu));
        assert!(matches!(enc.forward(&store, &too_deep), Err(CoreError::Shape(_))));
    }

    #[test]
    fn conv2d1d_shares_frame_weights() {
        let mut store = ParamStore::new(3);
        let enc = Conv2d1dEncoder::new(&mut store, "enc").unwrap();
        let frame = volume(1, 3).narrow(1, 0, 1);
        let x = frame.expand([2, FRAMES, 3, SIDE, SIDE], false).contiguous();
        let f = enc.frame_features(&store, &x).unwrap();
        assert_eq!(f.size(), vec![2, FRAMES, FEATURE_DIM]);
        for j in 1..FRAMES {
            assert!(f.get(0).get(j).equal(&f.get(0).get(0)));
        }
        assert_eq!(enc.forward(&store, &x).unwrap().size(), vec![2, FEATURE_DIM]);
    }

    #[test]
    fn capsule_norms_below_one() {
        let mut store = ParamStore::new(4);
        let enc = CapsuleEncoder::new(&mut store, "enc", 3).unwrap();
        let x = volume(2, 4);
        let trace = enc.forward_trace(&store, &x).unwrap();
        let dims = [CapsuleEncoder::CAPS1, CapsuleEncoder::CAPS2, CapsuleEncoder::CAPS3];
        let sides = [32, 16, 16];
        for ((t, (types, dim)), side) in trace.iter().zip(dims).zip(sides) {
            assert_eq!(t.size(), vec![2, types * dim, side, side]);
            let norms = t.view([2, types, dim, side, side]).square().sum_dim_intlist(2, false, None::<Kind>).sqrt();
            assert!(norms.max().double_value(&[]) < 1.0);
        }
        assert_eq!(enc.forward(&store, &x).unwrap().size(), vec![2, FEATURE_DIM]);
    }
}
