use crate::stats::CompensatedSum;
use crate::{Image, MetricError, Result};

fn check_shapes(a: &Image, b: &Image) -> Result<()> {
    if a.dimensions() != b.dimensions() {
        return Err(MetricError::Shape(a.dimensions(), b.dimensions()));
    }
    Ok(())
}

/// Mean squared error over all pixels and channels.
pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    check_shapes(a, b)?;
    let mut acc = CompensatedSum::default();
    for (x, y) in a.as_raw().iter().zip(b.as_raw()) {
        let d = f64::from(*x) - f64::from(*y);
        acc.add(d * d);
    }
    Ok(acc.value() / a.as_raw().len().max(1) as f64)
}

/// Peak signal-to-noise ratio in dB. Identical images give `f64::INFINITY`.
pub fn psnr(a: &Image, b: &Image, max_val: f64) -> Result<f64> {
    if !(max_val > 0.0) {
        return Err(MetricError::Param(format!("max_val must be positive, got {max_val}")));
    }
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (max_val * max_val / m).log10())
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    /// Dynamic range of the pixel values.
    pub range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            range: 1.0,
        }
    }
}

impl SsimParams {
    pub fn c1(&self) -> f64 {
        (self.k1 * self.range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.range).powi(2)
    }

    /// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
    pub fn taps(&self) -> Vec<f64> {
        let half = (self.window as f64 - 1.0) / 2.0;
        let raw: Vec<f64> = (0..self.window)
            .map(|i| {
                let d = i as f64 - half;
                (-d * d / (2.0 * self.sigma * self.sigma)).exp()
            })
            .collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / total).collect()
    }

    fn validate(&self) -> Result<()> {
        if self.window == 0 || !(self.sigma > 0.0) || !(self.range > 0.0) {
            return Err(MetricError::Param(format!("bad SSIM parameters {self:?}")));
        }
        Ok(())
    }
}

/// BT.601 luma as a row-major plane.
pub fn luma(img: &Image) -> Vec<f64> {
    img.pixels()
        .map(|p| 0.299 * f64::from(p[0]) + 0.587 * f64::from(p[1]) + 0.114 * f64::from(p[2]))
        .collect()
}

/// Valid-mode separable filtering of a `w x h` plane.
fn filter_valid(plane: &[f64], w: usize, h: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (ow, oh) = (w - k + 1, h - k + 1);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..k).map(|i| taps[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|i| taps[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// SSIM between two single-channel planes of size `w x h`.
pub fn ssim_plane(a: &[f64], b: &[f64], w: usize, h: usize, params: &SsimParams) -> Result<f64> {
    params.validate()?;
    if a.len() != w * h || b.len() != w * h {
        return Err(MetricError::Param(format!("plane length does not match {w}x{h}")));
    }
    let k = params.window;
    if w < k || h < k {
        return Err(MetricError::TooSmall(w as u32, h as u32, k));
    }
    let taps = params.taps();
    let prod = |f: &dyn Fn(usize) -> f64| (0..w * h).map(f).collect::<Vec<f64>>();
    let mu_a = filter_valid(a, w, h, &taps);
    let mu_b = filter_valid(b, w, h, &taps);
    let aa = filter_valid(&prod(&|i| a[i] * a[i]), w, h, &taps);
    let bb = filter_valid(&prod(&|i| b[i] * b[i]), w, h, &taps);
    let ab = filter_valid(&prod(&|i| a[i] * b[i]), w, h, &taps);
    let (c1, c2) = (params.c1(), params.c2());
    let mut acc = CompensatedSum::default();
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        acc.add(((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2)));
    }
    Ok(acc.value() / mu_a.len() as f64)
}

/// SSIM of the luma channels of two RGB images.
pub fn ssim(a: &Image, b: &Image, params: &SsimParams) -> Result<f64> {
    check_shapes(a, b)?;
    let (w, h) = a.dimensions();
    if a.as_raw() == b.as_raw() {
        return Ok(1.0);
    }
    ssim_plane(&luma(a), &luma(b), w as usize, h as usize, params)
}
