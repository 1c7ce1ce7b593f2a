use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::Args;
use image::{imageops, Rgb, RgbImage};
use topdown_core::data::tensor_to_images;
use topdown_core::ModelPredictor;
use topdown_envgen::{make_observation_set, read_dataset, Episode, Split, IMAGE_SIZE, WINDOW};

use crate::eval::resolve_checkpoint_path;
use crate::failure::{io_failure, Failure, Outcome};
use crate::settings::{put, RunManifest, Settings, GLOBAL_KEYS, SAMPLE_KEYS};
use crate::{default_data_root, DataArg, Globals};

#[derive(Args, Debug)]
pub struct SampleArgs {
    /// Checkpoint directory, or a run directory (latest checkpoint).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[command(flatten)]
    data: DataArg,
    /// train | test
    #[arg(long)]
    split: Option<String>,
    #[arg(long)]
    episode: Option<usize>,
    /// Comma-separated step indices, one grid row each.
    #[arg(long)]
    steps: Option<String>,
    /// Observation frames shown per row, evenly spaced over the window.
    #[arg(long)]
    frames: Option<usize>,
}

const GAP: u32 = 2;
const BACKGROUND: Rgb<u8> = Rgb([32, 32, 32]);

/// Window slots shown for `frames` columns; the last is the current frame.
fn frame_slots(frames: usize) -> Vec<usize> {
    let last = WINDOW - 1;
    if frames <= 1 {
        return vec![last];
    }
    (0..frames).map(|k| k * last / (frames - 1)).collect()
}

fn to_rgb8(img: &topdown_metrics::Image) -> RgbImage {
    RgbImage::from_fn(img.width(), img.height(), |x, y| {
        Rgb(img.get_pixel(x, y).0.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8))
    })
}

/// Rows of observation frames, ground truth and prediction.
pub fn render_grid(model: &ModelPredictor, episode: &Episode, steps: &[usize], frames: usize) -> Outcome<RgbImage> {
    let tile = IMAGE_SIZE as u32;
    let cols = frames as u32 + 2;
    let mut grid = RgbImage::from_pixel(cols * (tile + GAP) + GAP, steps.len() as u32 * (tile + GAP) + GAP, BACKGROUND);
    let samples: Vec<(&Episode, usize)> = steps.iter().map(|&i| (episode, i)).collect();
    let preds = tensor_to_images(&model.predict_tensor(&samples)?)?;
    for (row, (&step, pred)) in steps.iter().zip(&preds).enumerate() {
        let set = make_observation_set(episode, step)?;
        let mut tiles: Vec<RgbImage> = frame_slots(frames).iter().map(|&s| set.frames()[s].clone()).collect();
        tiles.push(episode.targets[step].clone());
        tiles.push(imageops::resize(&to_rgb8(pred), tile, tile, imageops::FilterType::Nearest));
        let y = GAP + row as u32 * (tile + GAP);
        for (c, t) in tiles.iter().enumerate() {
            imageops::replace(&mut grid, t, i64::from(GAP + c as u32 * (tile + GAP)), i64::from(y));
        }
    }
    Ok(grid)
}

pub fn run(args: SampleArgs, g: Globals) -> Outcome {
    let mut cli = g.cli;
    put(&mut cli, "checkpoint", args.checkpoint.as_ref().map(|p| p.display()));
    put(&mut cli, "data", args.data.data.as_ref().map(|p| p.display()));
    put(&mut cli, "split", args.split);
    put(&mut cli, "episode", args.episode);
    put(&mut cli, "steps", args.steps);
    put(&mut cli, "frames", args.frames);
    let defaults: BTreeMap<String, String> = [
        ("seed", "0"),
        ("deterministic", "false"),
        ("out", "samples"),
        ("split", "train"),
        ("episode", "0"),
        ("steps", "0"),
        ("frames", "4"),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .chain([("data".to_string(), default_data_root())])
    .collect();
    let s = Settings::resolve(&[GLOBAL_KEYS, SAMPLE_KEYS], defaults, &g.file, cli)?;
    eprint!("{}", s.describe());

    let checkpoint = resolve_checkpoint_path(&PathBuf::from(s.require::<String>("checkpoint")?))?;
    let split = match s.require::<String>("split")?.as_str() {
        "train" => Split::Train,
        "test" => Split::Test,
        other => return Err(Failure::Config(format!("split must be train or test, got {other:?}"))),
    };
    let episode_idx: usize = s.require("episode")?;
    let steps: Vec<usize> = s
        .require::<String>("steps")?
        .split(',')
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|_| Failure::Config(format!("bad step index {t:?}")))
        })
        .collect::<Outcome<_>>()?;
    let frames: usize = s.require("frames")?;
    if frames == 0 || frames > WINDOW {
        return Err(Failure::Config(format!("frames must be in 1..={WINDOW}")));
    }
    let data = PathBuf::from(s.require::<String>("data")?);
    let out = PathBuf::from(s.require::<String>("out")?);
    let dataset = read_dataset(&data)?;
    let episodes = dataset.split(split);
    let episode = episodes.get(episode_idx).ok_or_else(|| {
        Failure::Config(format!("episode {episode_idx} out of range ({} in {split})", episodes.len()))
    })?;
    if let Some(&bad) = steps.iter().find(|&&i| i >= episode.len()) {
        return Err(Failure::Config(format!(
            "step {bad} out of range for an episode of length {}",
            episode.len()
        )));
    }
    let manifest = RunManifest::new("sample", &s, s.require("seed")?, Some(dataset.manifest.sha256.clone()));
    manifest.write(&out)?;

    let result = (|| {
        let (_, model) = ModelPredictor::from_checkpoint(&checkpoint)?;
        let grid = render_grid(&model, episode, &steps, frames)?;
        let path = out.join(format!("grid_{split}_ep{episode_idx}.png"));
        grid.save(&path)
            .map_err(|e| io_failure(&path)(std::io::Error::other(e.to_string())))?;
        println!(
            "wrote {} ({} rows: {frames} observation frames, ground truth, {} prediction at {}px)",
            path.display(),
            steps.len(),
            model.label,
            model.state().scale
        );
        Ok(())
    })();
    manifest.finish(&out, &result)?;
    result
}
