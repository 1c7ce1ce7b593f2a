//! Table-style evaluation of a top-down predictor over dataset splits.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize, Serializer};
use topdown_envgen::{Episode, Frame, IMAGE_SIZE};

use crate::quality::{psnr, ssim, SsimParams};
use crate::stats::{mean_std, CompensatedSum};
use crate::{Image, MetricError, Result};

/// Something that maps `(episode, step)` pairs to top-down images in `[0, 1]`.
pub trait TopDownPredictor {
    fn label(&self) -> String;

    /// Side length of the produced images.
    fn output_size(&self) -> u32;

    fn known_nonlearning(&self) -> bool {
        false
    }

    fn predict(&self, samples: &[(&Episode, usize)]) -> Result<Vec<Image>>;
}

pub fn frame_to_float(frame: &Frame) -> Image {
    Image::from_fn(frame.width(), frame.height(), |x, y| {
        image::Rgb(frame.get_pixel(x, y).0.map(|v| f32::from(v) / 255.0))
    })
}

/// Box-filter downsampling to `size x size`; the side must divide evenly.
pub fn area_downsample(img: &Image, size: u32) -> Result<Image> {
    let (w, h) = img.dimensions();
    if size == 0 || w != h || w % size != 0 {
        return Err(MetricError::Param(format!("cannot area-downsample {w}x{h} to {size}")));
    }
    let f = w / size;
    let norm = (f * f) as f64;
    Ok(Image::from_fn(size, size, |x, y| {
        let mut acc = [0.0f64; 3];
        for dy in 0..f {
            for dx in 0..f {
                let p = img.get_pixel(x * f + dx, y * f + dy);
                for c in 0..3 {
                    acc[c] += f64::from(p[c]);
                }
            }
        }
        image::Rgb(acc.map(|v| (v / norm) as f32))
    }))
}

/// Per-pixel mean of every target in the given episodes.
pub fn mean_target_image(episodes: &[Episode]) -> Result<Image> {
    let n = IMAGE_SIZE * IMAGE_SIZE * 3;
    let mut acc = vec![CompensatedSum::default(); n];
    let mut count = 0usize;
    for t in episodes.iter().flat_map(|e| &e.targets) {
        for (a, v) in acc.iter_mut().zip(t.as_raw()) {
            a.add(f64::from(*v) / 255.0);
        }
        count += 1;
    }
    if count == 0 {
        return Err(MetricError::Empty("no targets to average".into()));
    }
    let data = acc.iter().map(|a| (a.value() / count as f64) as f32).collect();
    Ok(Image::from_raw(IMAGE_SIZE as u32, IMAGE_SIZE as u32, data).expect("buffer size"))
}

/// Returns the ground truth; a debugging oracle.
pub struct GroundTruthPredictor;

impl TopDownPredictor for GroundTruthPredictor {
    fn label(&self) -> String {
        "oracle".into()
    }

    fn output_size(&self) -> u32 {
        IMAGE_SIZE as u32
    }

    fn predict(&self, samples: &[(&Episode, usize)]) -> Result<Vec<Image>> {
        Ok(samples.iter().map(|(e, i)| frame_to_float(&e.targets[*i])).collect())
    }
}

/// Emits the same image for every input.
pub struct ConstantPredictor {
    pub label: String,
    pub image: Image,
}

impl ConstantPredictor {
    pub fn gray(value: f32) -> Self {
        let s = IMAGE_SIZE as u32;
        Self {
            label: "constant-gray".into(),
            image: Image::from_pixel(s, s, image::Rgb([value; 3])),
        }
    }

    pub fn mean_of(episodes: &[Episode]) -> Result<Self> {
        Ok(Self {
            label: "constant-mean".into(),
            image: mean_target_image(episodes)?,
        })
    }
}

impl TopDownPredictor for ConstantPredictor {
    fn label(&self) -> String {
        self.label.clone()
    }

    fn output_size(&self) -> u32 {
        self.image.width()
    }

    fn predict(&self, samples: &[(&Episode, usize)]) -> Result<Vec<Image>> {
        Ok(vec![self.image.clone(); samples.len()])
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EvalSampling {
    /// Number of `(episode, step)` pairs drawn per split.
    pub count: usize,
    pub seed: u64,
    pub batch_size: usize,
    /// Evaluate a model below 64x64 against area-downsampled targets.
    pub allow_reduced_scale: bool,
    pub peak: f64,
    pub ssim: SsimParams,
}

impl Default for EvalSampling {
    fn default() -> Self {
        Self {
            count: 512,
            seed: 0,
            batch_size: 16,
            allow_reduced_scale: false,
            peak: 1.0,
            ssim: SsimParams::default(),
        }
    }
}

impl EvalSampling {
    /// Uniform episode, then uniform step within it.
    pub fn draw(&self, episodes: &[Episode]) -> Vec<(usize, usize)> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let usable: Vec<usize> = (0..episodes.len()).filter(|&i| !episodes[i].is_empty()).collect();
        if usable.is_empty() {
            return Vec::new();
        }
        (0..self.count)
            .map(|_| {
                let e = usable[rng.gen_range(0..usable.len())];
                (e, rng.gen_range(0..episodes[e].len()))
            })
            .collect()
    }
}

fn ser_db<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_infinite() {
        s.serialize_str(if *v > 0.0 { "inf" } else { "-inf" })
    } else {
        s.serialize_f64(*v)
    }
}

fn de_db<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Db {
        Num(f64),
        Text(String),
    }
    match Db::deserialize(d)? {
        Db::Num(v) => Ok(v),
        Db::Text(t) if t == "inf" => Ok(f64::INFINITY),
        Db::Text(t) if t == "-inf" => Ok(f64::NEG_INFINITY),
        Db::Text(t) => Err(serde::de::Error::custom(format!("bad PSNR value {t:?}"))),
    }
}

/// Aggregates for one split. Infinite PSNR values are counted separately and
/// left out of the PSNR mean; if every value is infinite the mean is infinite.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SplitMetrics {
    pub count: usize,
    #[serde(serialize_with = "ser_db", deserialize_with = "de_db")]
    pub psnr_mean: f64,
    pub psnr_std: f64,
    pub psnr_infinite: usize,
    pub ssim_mean: f64,
    pub ssim_std: f64,
}

impl SplitMetrics {
    pub fn from_values(psnrs: &[f64], ssims: &[f64]) -> Result<Self> {
        if ssims.is_empty() || psnrs.len() != ssims.len() {
            return Err(MetricError::Empty("no evaluated pairs".into()));
        }
        let finite: Vec<f64> = psnrs.iter().copied().filter(|v| v.is_finite()).collect();
        let (psnr_mean, psnr_std) = mean_std(&finite).unwrap_or((f64::INFINITY, 0.0));
        let (ssim_mean, ssim_std) = mean_std(ssims).expect("nonempty");
        Ok(Self {
            count: ssims.len(),
            psnr_mean,
            psnr_std,
            psnr_infinite: psnrs.len() - finite.len(),
            ssim_mean,
            ssim_std,
        })
    }

    pub fn psnr_cell(&self) -> String {
        if self.psnr_mean.is_infinite() {
            "inf".into()
        } else {
            format!("{:.1} ± {:.1}", self.psnr_mean, self.psnr_std)
        }
    }

    pub fn ssim_cell(&self) -> String {
        format!("{:.4} ± {:.4}", self.ssim_mean, self.ssim_std)
    }
}

/// Metrics of one split for a predictor. Never mutates the predictor.
pub fn evaluate_model(
    model: &dyn TopDownPredictor,
    episodes: &[Episode],
    sampling: &EvalSampling,
) -> Result<SplitMetrics> {
    let size = model.output_size();
    if size != IMAGE_SIZE as u32 && !sampling.allow_reduced_scale {
        return Err(MetricError::ScaleMismatch {
            got: size,
            want: IMAGE_SIZE as u32,
        });
    }
    if sampling.count == 0 || sampling.batch_size == 0 {
        return Err(MetricError::Param("sample count and batch size must be positive".into()));
    }
    let pairs = sampling.draw(episodes);
    if pairs.is_empty() {
        return Err(MetricError::Empty("split has no steps".into()));
    }
    let params = sampling.ssim;
    let mut psnrs = Vec::with_capacity(pairs.len());
    let mut ssims = Vec::with_capacity(pairs.len());
    for chunk in pairs.chunks(sampling.batch_size) {
        let samples: Vec<(&Episode, usize)> = chunk.iter().map(|&(e, i)| (&episodes[e], i)).collect();
        let preds = model.predict(&samples)?;
        if preds.len() != samples.len() {
            return Err(MetricError::Predictor(format!(
                "expected {} images, got {}",
                samples.len(),
                preds.len()
            )));
        }
        for (pred, (ep, i)) in preds.iter().zip(&samples) {
            if pred.dimensions() != (size, size) {
                return Err(MetricError::Shape(pred.dimensions(), (size, size)));
            }
            let mut target = frame_to_float(&ep.targets[*i]);
            if size != target.width() {
                target = area_downsample(&target, size)?;
            }
            psnrs.push(psnr(pred, &target, sampling.peak)?);
            ssims.push(ssim(pred, &target, &params)?);
        }
    }
    SplitMetrics::from_values(&psnrs, &ssims)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetricReport {
    pub method: String,
    pub scale: u32,
    pub known_nonlearning: bool,
    pub train: Option<SplitMetrics>,
    pub test: Option<SplitMetrics>,
}

impl MetricReport {
    /// Evaluates both splits; an empty split is an error.
    pub fn evaluate(
        model: &dyn TopDownPredictor,
        train: &[Episode],
        test: &[Episode],
        sampling: &EvalSampling,
    ) -> Result<Self> {
        let train_sampling = EvalSampling {
            seed: sampling.seed,
            ..sampling.clone()
        };
        let test_sampling = EvalSampling {
            seed: sampling.seed ^ 0x9e37_79b9_7f4a_7c15,
            ..sampling.clone()
        };
        if train.is_empty() {
            return Err(MetricError::Empty("training split is empty".into()));
        }
        if test.is_empty() {
            return Err(MetricError::Empty("test split is empty".into()));
        }
        Ok(Self {
            method: model.label(),
            scale: model.output_size(),
            known_nonlearning: model.known_nonlearning(),
            train: Some(evaluate_model(model, train, &train_sampling)?),
            test: Some(evaluate_model(model, test, &test_sampling)?),
        })
    }

    pub fn row_label(&self) -> String {
        let mut label = self.method.clone();
        if self.scale != IMAGE_SIZE as u32 {
            write!(label, " @{}px", self.scale).unwrap();
        }
        if self.known_nonlearning {
            label.push_str(" (known-nonlearning)");
        }
        label
    }

    fn cells(&self) -> [String; 4] {
        let dash = || "-".to_string();
        [
            self.train.as_ref().map_or_else(dash, SplitMetrics::psnr_cell),
            self.test.as_ref().map_or_else(dash, SplitMetrics::psnr_cell),
            self.train.as_ref().map_or_else(dash, SplitMetrics::ssim_cell),
            self.test.as_ref().map_or_else(dash, SplitMetrics::ssim_cell),
        ]
    }
}

pub const CSV_HEADER: &str = "method,psnr_train,psnr_test,ssim_train,ssim_test";

pub fn reports_to_csv(reports: &[MetricReport]) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    for r in reports {
        let [a, b, c, d] = r.cells();
        writeln!(out, "{},{a},{b},{c},{d}", r.row_label().replace(',', ";")).unwrap();
    }
    out
}

/// Fixed-width text table with one row per method.
pub fn reports_to_table(reports: &[MetricReport]) -> String {
    let header = ["Method", "PSNR (train)", "PSNR (test)", "SSIM (train)", "SSIM (test)"];
    let rows: Vec<[String; 5]> = reports
        .iter()
        .map(|r| {
            let [a, b, c, d] = r.cells();
            [r.row_label(), a, b, c, d]
        })
        .collect();
    let mut widths = header.map(|h| h.chars().count());
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let fmt_row = |cells: &[String]| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
            .collect();
        format!("| {} |", parts.join(" | "))
    };
    let mut out = String::new();
    let header: Vec<String> = header.iter().map(|s| s.to_string()).collect();
    writeln!(out, "{}", fmt_row(&header)).unwrap();
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    writeln!(out, "|-{}-|", rule.join("-|-")).unwrap();
    for row in &rows {
        writeln!(out, "{}", fmt_row(row)).unwrap();
    }
    for r in reports {
        for (name, m) in [("train", &r.train), ("test", &r.test)] {
            if let Some(m) = m {
                if m.psnr_infinite > 0 {
                    writeln!(
                        out,
                        "{} {name}: {} of {} pairs had zero error (PSNR inf, excluded from mean)",
                        r.method, m.psnr_infinite, m.count
                    )
                    .unwrap();
                }
            }
        }
    }
    out
}
