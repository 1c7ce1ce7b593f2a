//! Episode steps to tensors and back.

use rand::Rng;
use tch::{Kind, Tensor};
use topdown_envgen::{make_observation_set, Episode, Frame, IMAGE_SIZE, WINDOW};
use topdown_metrics::Image;

use crate::gan::to_signed;
use crate::layers::area_resize;
use crate::{CoreError, Result};

const S: i64 = IMAGE_SIZE as i64;

/// `(batch, 21, 3, 64, 64)` observation windows in `[0, 1]`.
pub fn observation_volume(samples: &[(&Episode, usize)]) -> Result<Tensor> {
    let mut buf = Vec::with_capacity(samples.len() * WINDOW * 3 * IMAGE_SIZE * IMAGE_SIZE);
    for &(ep, i) in samples {
        make_observation_set(ep, i)?.write_volume_chw(&mut buf);
    }
    Ok(Tensor::from_slice(&buf).view([samples.len() as i64, WINDOW as i64, 3, S, S]))
}

fn frame_chw(frame: &Frame, out: &mut Vec<f32>) {
    let raw = frame.as_raw();
    let n = IMAGE_SIZE * IMAGE_SIZE;
    for ch in 0..3 {
        out.extend((0..n).map(|i| f32::from(raw[i * 3 + ch]) / 255.0));
    }
}

/// `(batch, 3, 64, 64)` targets in `[0, 1]`.
pub fn target_tensor(samples: &[(&Episode, usize)]) -> Result<Tensor> {
    let mut buf = Vec::with_capacity(samples.len() * 3 * IMAGE_SIZE * IMAGE_SIZE);
    for &(ep, i) in samples {
        let t = ep.targets.get(i).ok_or(topdown_envgen::EnvGenError::IndexOutOfRange {
            index: i,
            len: ep.len(),
        })?;
        frame_chw(t, &mut buf);
    }
    Ok(Tensor::from_slice(&buf).view([samples.len() as i64, 3, S, S]))
}

/// Targets in generator units, area-downsampled to `scale`.
pub fn signed_targets(samples: &[(&Episode, usize)], scale: i64) -> Result<Tensor> {
    area_resize(&to_signed(&target_tensor(samples)?), scale)
}

/// `(batch, 3, h, w)` tensor in `[0, 1]` to images.
pub fn tensor_to_images(t: &Tensor) -> Result<Vec<Image>> {
    let s = t.size();
    if s.len() != 4 || s[1] != 3 {
        return Err(CoreError::Shape(format!("expected (batch, 3, h, w), got {s:?}")));
    }
    let (h, w) = (s[2] as u32, s[3] as u32);
    let hwc = t.to_kind(Kind::Float).permute([0, 2, 3, 1]).contiguous();
    (0..s[0])
        .map(|b| {
            let data = Vec::<f32>::try_from(hwc.get(b).flatten(0, -1))?;
            Ok(Image::from_raw(w, h, data).expect("buffer size"))
        })
        .collect()
}

/// Every `(episode, step)` pair, in dataset order.
pub fn all_pairs(episodes: &[Episode]) -> Vec<(usize, usize)> {
    episodes
        .iter()
        .enumerate()
        .flat_map(|(e, ep)| (0..ep.len()).map(move |i| (e, i)))
        .collect()
}

/// Uniform draw with replacement from `pairs`.
pub fn draw_batch<R: Rng>(pairs: &[(usize, usize)], batch: usize, rng: &mut R) -> Vec<(usize, usize)> {
    (0..batch).map(|_| pairs[rng.gen_range(0..pairs.len())]).collect()
}
