//! Equalized-learning-rate layers and the feature normalizers.

use tch::{Kind, Tensor};

use crate::params::ParamStore;
use crate::{CoreError, Result};

pub const LRELU_SLOPE: f64 = 0.2;
pub const PIXELNORM_EPS: f64 = 1e-8;

/// Runtime weight multiplier `gain / sqrt(fan_in)`.
pub fn equalized_scale(fan_in: i64, gain: f64) -> Result<f64> {
    if fan_in < 1 {
        return Err(CoreError::Config(format!("fan_in must be at least 1, got {fan_in}")));
    }
    Ok(gain / (fan_in as f64).sqrt())
}

pub fn lrelu(x: &Tensor) -> Tensor {
    x.maximum(&(x * LRELU_SLOPE))
}

/// Divides every spatial position's channel vector by its RMS.
pub fn pixel_norm(x: &Tensor, eps: f64) -> Tensor {
    let ms = x.square().mean_dim(1, true, Kind::Float);
    x / (ms + eps).sqrt()
}

/// Appends one channel holding the batch-wide mean of per-feature,
/// per-position population standard deviations.
pub fn minibatch_stddev(x: &Tensor) -> Tensor {
    let size = x.size();
    let var = x.var_dim(0, false, true);
    // sqrt has an infinite slope at zero; clamp first and mask the exact zeros
    let std = var.clamp_min(1e-30).sqrt().where_self(&var.gt(0.0), &var.zeros_like());
    let mean = std.mean(Kind::Float);
    let mut shape = size.clone();
    shape[1] = 1;
    let channel = mean.expand(shape.as_slice(), false);
    Tensor::cat(&[x.shallow_clone(), channel], 1)
}

pub fn upsample2x(x: &Tensor) -> Tensor {
    let s = x.size();
    x.upsample_nearest2d([s[2] * 2, s[3] * 2], None, None)
}

/// Box-filter downsampling of an NCHW batch to `size x size`.
pub fn area_resize(x: &Tensor, size: i64) -> Result<Tensor> {
    let s = x.size();
    if s.len() != 4 || s[2] != s[3] || size < 1 || s[2] % size != 0 {
        return Err(CoreError::Shape(format!("cannot area-resize {s:?} to {size}")));
    }
    let f = s[2] / size;
    if f == 1 {
        return Ok(x.shallow_clone());
    }
    Ok(x.avg_pool2d([f, f], [f, f], [0, 0], false, true, None))
}

/// Convolution over 1, 2 or 3 spatial dims with a runtime-scaled weight.
#[derive(Debug, Clone)]
pub struct EqConv {
    weight: String,
    bias: Option<String>,
    scale: f64,
    stride: Vec<i64>,
    padding: Vec<i64>,
    pre_pad: Option<Vec<i64>>,
}

impl EqConv {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_ch: i64,
        out_ch: i64,
        kernel: &[i64],
        stride: &[i64],
        padding: &[i64],
        gain: f64,
    ) -> Result<Self> {
        let mut shape = vec![out_ch, in_ch];
        shape.extend_from_slice(kernel);
        let fan_in = in_ch * kernel.iter().product::<i64>();
        let weight = format!("{name}.w");
        let bias = format!("{name}.b");
        store.normal(&weight, &shape)?;
        store.zeros(&bias, &[out_ch])?;
        Ok(Self {
            weight,
            bias: Some(bias),
            scale: equalized_scale(fan_in, gain)?,
            stride: stride.to_vec(),
            padding: padding.to_vec(),
            pre_pad: None,
        })
    }

    /// Zero padding applied before the convolution, in `constant_pad_nd`
    /// order (last dim first). Used for asymmetric "same" padding.
    pub fn with_pre_pad(mut self, pad: &[i64]) -> Self {
        self.pre_pad = Some(pad.to_vec());
        self
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn weight_name(&self) -> &str {
        &self.weight
    }

    pub fn forward(&self, store: &ParamStore, x: &Tensor) -> Tensor {
        let w = store.get(&self.weight) * self.scale;
        let b = self.bias.as_ref().map(|b| store.get(b));
        let padded;
        let x = match &self.pre_pad {
            Some(p) => {
                padded = x.constant_pad_nd(p.as_slice());
                &padded
            }
            None => x,
        };
        let dims = self.stride.len();
        let dilation = vec![1i64; dims];
        match dims {
            1 => x.conv1d(&w, b, self.stride.as_slice(), self.padding.as_slice(), dilation.as_slice(), 1),
            2 => x.conv2d(&w, b, self.stride.as_slice(), self.padding.as_slice(), dilation.as_slice(), 1),
            3 => x.conv3d(&w, b, self.stride.as_slice(), self.padding.as_slice(), dilation.as_slice(), 1),
            d => panic!("unsupported convolution rank {d}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EqLinear {
    weight: String,
    bias: String,
    scale: f64,
}

impl EqLinear {
    pub fn new(store: &mut ParamStore, name: &str, in_f: i64, out_f: i64, gain: f64) -> Result<Self> {
        let weight = format!("{name}.w");
        let bias = format!("{name}.b");
        store.normal(&weight, &[out_f, in_f])?;
        store.zeros(&bias, &[out_f])?;
        Ok(Self {
            weight,
            bias,
            scale: equalized_scale(in_f, gain)?,
        })
    }

    pub fn forward(&self, store: &ParamStore, x: &Tensor) -> Tensor {
        x.matmul(&(store.get(&self.weight) * self.scale).tr()) + store.get(&self.bias)
    }
}
