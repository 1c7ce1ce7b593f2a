//! On-disk dataset layout.
//!
//! ```text
//! <root>/manifest.json
//! <root>/<split>/ep_<seed>/obs_00000.png        first-person frames (8-bit RGB)
//!                         /target_00000.png     masked top-down maps
//!                         /visibility_00000.pbm cumulative visibility (P4)
//!                         /poses.csv            step,x,z,yaw
//! ```
//!
//! The manifest is written last through a temporary file and a rename, so a
//! directory with a manifest is always complete.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::ImageFormat;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::env::{sample_environment, EnvironmentSpec, GenConfig, Rgb8, AGENT_COLOR, SKY_COLOR, UNKNOWN_COLOR};
use crate::episode::{simulate_episode, Episode, Pose, RotationPolicy, VisibilityGrid};
use crate::render::RenderConfig;
use crate::{io_err, EnvGenError, Frame, Result, IMAGE_SIZE, WINDOW};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub seed: u64,
    pub train_envs: usize,
    pub test_envs: usize,
    pub episodes_per_env: usize,
    pub episode_len: usize,
    pub policy: RotationPolicy,
    pub render: RenderConfig,
    pub generation: GenConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            train_envs: 64,
            test_envs: 16,
            episodes_per_env: 1,
            episode_len: 40,
            policy: RotationPolicy::default(),
            render: RenderConfig::default(),
            generation: GenConfig::default(),
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.train_envs == 0 {
            return Err(EnvGenError::Config("train_envs must be at least 1".into()));
        }
        if self.episode_len == 0 {
            return Err(EnvGenError::Config("episode_len must be at least 1".into()));
        }
        if !(1..=1000).contains(&self.episodes_per_env) {
            return Err(EnvGenError::Config("episodes_per_env must be in 1..=1000".into()));
        }
        if !(self.render.fov_deg > 0.0 && self.render.fov_deg < 180.0) {
            return Err(EnvGenError::Config(format!("fov_deg {} out of range", self.render.fov_deg)));
        }
        self.generation.validate()
    }

    /// First environment seed of the training range. Testing seeds follow the
    /// training range directly, so the two splits never share a seed.
    pub fn seed_base(&self) -> u64 {
        splitmix64(self.seed) >> 24
    }

    pub fn env_seed_range(&self, split: Split) -> std::ops::Range<u64> {
        let base = self.seed_base();
        let train_end = base + self.train_envs as u64;
        match split {
            Split::Train => base..train_end,
            Split::Test => train_end..train_end + self.test_envs as u64,
        }
    }

    pub fn episode_seed(&self, env_seed: u64, k: usize) -> u64 {
        env_seed * self.episodes_per_env as u64 + k as u64
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColorTable {
    pub unknown: Rgb8,
    pub agent: Rgb8,
    pub sky: Rgb8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeEntry {
    pub dir: String,
    pub env_seed: u64,
    pub episode_seed: u64,
    pub steps: usize,
    pub sha256: String,
    pub env: EnvironmentSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub split: Split,
    pub env_seed_start: u64,
    pub env_seed_end: u64,
    pub episodes: Vec<EpisodeEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub image_size: usize,
    pub window: usize,
    pub fov_deg: f64,
    pub colors: ColorTable,
    pub config: DatasetConfig,
    pub splits: Vec<SplitManifest>,
    /// Digest over the config and every split entry, episode digests included.
    pub sha256: String,
}

impl Manifest {
    pub fn split(&self, split: Split) -> Option<&SplitManifest> {
        self.splits.iter().find(|s| s.split == split)
    }

    pub fn episode_count(&self) -> usize {
        self.splits.iter().map(|s| s.episodes.len()).sum()
    }
}

/// A dataset loaded into memory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: Manifest,
    pub train: Vec<Episode>,
    pub test: Vec<Episode>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[Episode] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }
}

/// Generates every episode of both splits. Each episode depends only on its
/// own seeds, so the parallel schedule does not affect the result.
pub fn generate_dataset(cfg: &DatasetConfig) -> Result<BTreeMap<Split, Vec<Episode>>> {
    cfg.validate()?;
    let mut out = BTreeMap::new();
    for split in [Split::Train, Split::Test] {
        let jobs: Vec<(u64, usize)> = cfg
            .env_seed_range(split)
            .flat_map(|s| (0..cfg.episodes_per_env).map(move |k| (s, k)))
            .collect();
        let episodes = jobs
            .par_iter()
            .map(|&(env_seed, k)| {
                let env = sample_environment(env_seed, &cfg.generation)?;
                simulate_episode(&env, cfg.episode_len, cfg.policy, cfg.episode_seed(env_seed, k), &cfg.render)
            })
            .collect::<Result<Vec<_>>>()?;
        out.insert(split, episodes);
    }
    Ok(out)
}

fn encode_png(img: &Frame, path: &Path) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png).map_err(|source| EnvGenError::Image {
        path: path.display().to_string(),
        source,
    })?;
    Ok(buf.into_inner())
}

fn decode_png(bytes: &[u8], path: &Path) -> Result<Frame> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png).map_err(|source| EnvGenError::Image {
        path: path.display().to_string(),
        source,
    })?;
    let img = img.into_rgb8();
    if img.dimensions() != (IMAGE_SIZE as u32, IMAGE_SIZE as u32) {
        return Err(EnvGenError::Corrupt(format!(
            "{} has size {:?}",
            path.display(),
            img.dimensions()
        )));
    }
    Ok(img)
}

/// Binary portable bitmap; a set bit (black) marks a visible cell.
pub fn encode_pbm(grid: &VisibilityGrid) -> Vec<u8> {
    let n = grid.size();
    let mut out = format!("P4\n{n} {n}\n").into_bytes();
    let row_bytes = n.div_ceil(8);
    for row in 0..n {
        let mut packed = vec![0u8; row_bytes];
        for col in 0..n {
            if grid.get(row, col) {
                packed[col / 8] |= 0x80 >> (col % 8);
            }
        }
        out.extend_from_slice(&packed);
    }
    out
}

/// Reads P4 (binary) or P1 (ASCII) bitmaps.
pub fn decode_pbm(bytes: &[u8]) -> Result<VisibilityGrid> {
    let corrupt = |m: &str| EnvGenError::Corrupt(format!("pbm: {m}"));
    // header tokens: magic, width, height; comments start with '#'
    let mut pos = 0;
    let mut tokens = Vec::new();
    while tokens.len() < 3 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(corrupt("truncated header"));
        }
        tokens.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| corrupt("header not ascii"))?);
    }
    let width: usize = tokens[1].parse().map_err(|_| corrupt("bad width"))?;
    let height: usize = tokens[2].parse().map_err(|_| corrupt("bad height"))?;
    if width != height {
        return Err(corrupt("grid must be square"));
    }
    let mut cells = Vec::with_capacity(width * height);
    match tokens[0] {
        "P4" => {
            let body = &bytes[(pos + 1).min(bytes.len())..];
            let row_bytes = width.div_ceil(8);
            if body.len() < row_bytes * height {
                return Err(corrupt("truncated raster"));
            }
            for row in 0..height {
                for col in 0..width {
                    cells.push(body[row * row_bytes + col / 8] & (0x80 >> (col % 8)) != 0);
                }
            }
        }
        "P1" => {
            cells.extend(bytes[pos..].iter().filter_map(|b| match b {
                b'0' => Some(false),
                b'1' => Some(true),
                _ => None,
            }));
            cells.truncate(width * height);
        }
        other => return Err(corrupt(&format!("unsupported magic {other}"))),
    }
    VisibilityGrid::from_cells(width, cells)
}

fn poses_csv(poses: &[Pose]) -> String {
    let mut s = String::from("step,x,z,yaw\n");
    for (i, p) in poses.iter().enumerate() {
        let _ = writeln!(s, "{i},{},{},{}", p.position[0], p.position[1], p.yaw);
    }
    s
}

fn parse_poses(text: &str) -> Result<Vec<Pose>> {
    let corrupt = |m: String| EnvGenError::Corrupt(format!("poses.csv: {m}"));
    let mut lines = text.lines();
    if lines.next() != Some("step,x,z,yaw") {
        return Err(corrupt("missing header".into()));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 4 || fields[0].parse::<usize>().ok() != Some(i) {
                return Err(corrupt(format!("bad row {line:?}")));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| corrupt(format!("bad number {s:?}")));
            Ok(Pose {
                position: [num(fields[1])?, num(fields[2])?],
                yaw: num(fields[3])?,
            })
        })
        .collect()
}

fn episode_files(ep: &Episode, dir: &Path) -> Result<BTreeMap<String, Vec<u8>>> {
    let mut files = BTreeMap::new();
    for (i, (frame, target)) in ep.frames.iter().zip(&ep.targets).enumerate() {
        let obs = format!("obs_{i:05}.png");
        files.insert(obs.clone(), encode_png(frame, &dir.join(&obs))?);
        let tgt = format!("target_{i:05}.png");
        files.insert(tgt.clone(), encode_png(target, &dir.join(&tgt))?);
        files.insert(format!("visibility_{i:05}.pbm"), encode_pbm(&ep.visibility[i]));
    }
    files.insert("poses.csv".into(), poses_csv(&ep.poses).into_bytes());
    Ok(files)
}

fn digest_files<'a>(files: impl IntoIterator<Item = (&'a String, &'a Vec<u8>)>) -> String {
    let mut h = Sha256::new();
    for (name, bytes) in files {
        h.update(name.as_bytes());
        h.update([0u8]);
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(bytes);
    }
    hex::encode(h.finalize())
}

fn manifest_digest(config: &DatasetConfig, splits: &[SplitManifest]) -> Result<String> {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(config)?);
    h.update(serde_json::to_vec(splits)?);
    Ok(hex::encode(h.finalize()))
}

fn episode_dir_name(ep: &Episode) -> String {
    format!("ep_{}", ep.episode_seed)
}

/// Writes both splits and the manifest under `root`.
pub fn write_dataset(
    cfg: &DatasetConfig,
    episodes: &BTreeMap<Split, Vec<Episode>>,
    root: &Path,
) -> Result<Manifest> {
    fs::create_dir_all(root).map_err(io_err(root))?;
    let mut splits = Vec::new();
    for split in [Split::Train, Split::Test] {
        let eps = episodes.get(&split).map(Vec::as_slice).unwrap_or(&[]);
        let split_dir = root.join(split.as_str());
        fs::create_dir_all(&split_dir).map_err(io_err(&split_dir))?;
        let entries = eps
            .par_iter()
            .map(|ep| {
                let dir_name = episode_dir_name(ep);
                let dir = split_dir.join(&dir_name);
                fs::create_dir_all(&dir).map_err(io_err(&dir))?;
                let files = episode_files(ep, &dir)?;
                for (name, bytes) in &files {
                    let path = dir.join(name);
                    fs::write(&path, bytes).map_err(io_err(&path))?;
                }
                Ok(EpisodeEntry {
                    dir: dir_name,
                    env_seed: ep.env.seed,
                    episode_seed: ep.episode_seed,
                    steps: ep.len(),
                    sha256: digest_files(&files),
                    env: ep.env.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let range = cfg.env_seed_range(split);
        splits.push(SplitManifest {
            split,
            env_seed_start: range.start,
            env_seed_end: range.end,
            episodes: entries,
        });
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        image_size: IMAGE_SIZE,
        window: WINDOW,
        fov_deg: cfg.render.fov_deg,
        colors: ColorTable {
            unknown: UNKNOWN_COLOR,
            agent: AGENT_COLOR,
            sky: SKY_COLOR,
        },
        config: cfg.clone(),
        sha256: manifest_digest(cfg, &splits)?,
        splits,
    };
    let tmp = root.join(format!("{MANIFEST_FILE}.tmp"));
    fs::write(&tmp, serde_json::to_vec_pretty(&manifest)?).map_err(io_err(&tmp))?;
    let path = root.join(MANIFEST_FILE);
    fs::rename(&tmp, &path).map_err(io_err(&path))?;
    Ok(manifest)
}

pub fn read_manifest(root: &Path) -> Result<Manifest> {
    let path = root.join(MANIFEST_FILE);
    let bytes = fs::read(&path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            EnvGenError::Corrupt(format!("missing {}", path.display()))
        } else {
            EnvGenError::Io {
                path: path.display().to_string(),
                source: e,
            }
        }
    })?;
    let manifest: Manifest =
        serde_json::from_slice(&bytes).map_err(|e| EnvGenError::Corrupt(format!("{}: {e}", path.display())))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(EnvGenError::Corrupt(format!(
            "unsupported format version {}",
            manifest.format_version
        )));
    }
    let actual = manifest_digest(&manifest.config, &manifest.splits)?;
    if manifest.sha256 != actual {
        return Err(EnvGenError::Checksum {
            path: path.display().to_string(),
            expected: manifest.sha256.clone(),
            actual,
        });
    }
    Ok(manifest)
}

fn read_episode(dir: &Path, entry: &EpisodeEntry) -> Result<Episode> {
    let mut files = BTreeMap::new();
    for i in 0..entry.steps {
        for name in [
            format!("obs_{i:05}.png"),
            format!("target_{i:05}.png"),
            format!("visibility_{i:05}.pbm"),
        ] {
            let path = dir.join(&name);
            files.insert(name, fs::read(&path).map_err(io_err(&path))?);
        }
    }
    let poses_path = dir.join("poses.csv");
    files.insert("poses.csv".into(), fs::read(&poses_path).map_err(io_err(&poses_path))?);

    let actual = digest_files(&files);
    if actual != entry.sha256 {
        return Err(EnvGenError::Checksum {
            path: dir.display().to_string(),
            expected: entry.sha256.clone(),
            actual,
        });
    }

    let mut ep = Episode {
        env: entry.env.clone(),
        episode_seed: entry.episode_seed,
        frames: Vec::with_capacity(entry.steps),
        poses: parse_poses(std::str::from_utf8(&files["poses.csv"]).map_err(|_| {
            EnvGenError::Corrupt(format!("{} is not utf-8", poses_path.display()))
        })?)?,
        visibility: Vec::with_capacity(entry.steps),
        targets: Vec::with_capacity(entry.steps),
    };
    if ep.poses.len() != entry.steps {
        return Err(EnvGenError::Corrupt(format!(
            "{} lists {} poses, manifest says {}",
            poses_path.display(),
            ep.poses.len(),
            entry.steps
        )));
    }
    for i in 0..entry.steps {
        let obs = format!("obs_{i:05}.png");
        ep.frames.push(decode_png(&files[&obs], &dir.join(&obs))?);
        let tgt = format!("target_{i:05}.png");
        ep.targets.push(decode_png(&files[&tgt], &dir.join(&tgt))?);
        let grid = decode_pbm(&files[&format!("visibility_{i:05}.pbm")])?;
        if grid.size() != IMAGE_SIZE {
            return Err(EnvGenError::Corrupt(format!("visibility grid {i} has size {}", grid.size())));
        }
        ep.visibility.push(grid);
    }
    Ok(ep)
}

/// Loads and verifies a dataset written by [`write_dataset`].
pub fn read_dataset(root: &Path) -> Result<Dataset> {
    let manifest = read_manifest(root)?;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for sm in &manifest.splits {
        let split_dir = root.join(sm.split.as_str());
        let on_disk = match fs::read_dir(&split_dir) {
            Ok(rd) => rd
                .filter_map(|e| e.ok())
                .filter(|e| e.file_name().to_string_lossy().starts_with("ep_") && e.path().is_dir())
                .count(),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => 0,
            Err(e) => {
                return Err(EnvGenError::Io {
                    path: split_dir.display().to_string(),
                    source: e,
                })
            }
        };
        if on_disk != sm.episodes.len() {
            return Err(EnvGenError::Corrupt(format!(
                "manifest lists {} {} episodes, found {} directories",
                sm.episodes.len(),
                sm.split,
                on_disk
            )));
        }
        let episodes = sm
            .episodes
            .par_iter()
            .map(|entry| read_episode(&split_dir.join(&entry.dir), entry))
            .collect::<Result<Vec<_>>>()?;
        match sm.split {
            Split::Train => train = episodes,
            Split::Test => test = episodes,
        }
    }
    Ok(Dataset { manifest, train, test })
}

/// Path of an episode directory inside a dataset root.
pub fn episode_path(root: &Path, split: Split, entry: &EpisodeEntry) -> PathBuf {
    root.join(split.as_str()).join(&entry.dir)
}
