//! Checkpoint directories: parameters, optimizer moments and a JSON state
//! file. Tensors are stored as little-endian f32 records:
//! `u32 name_len, name, u32 ndim, u64 dims[ndim], f32 data[..]`.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Cursor, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tch::{Kind, Tensor};

use crate::gan::{ModelSpec, Networks, ScaleState};
use crate::optim::{Adam, AdamConfig, Moments};
use crate::{io_err, CoreError, Result};

pub const STATE_FILE: &str = "state.json";
pub const PARAMS_FILE: &str = "params.bin";
pub const ADAM_G_FILE: &str = "adam_g.bin";
pub const ADAM_D_FILE: &str = "adam_d.bin";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointState {
    pub format_version: u32,
    /// Number of completed iterations.
    pub iteration: u64,
    pub scale: i64,
    pub alpha: f64,
    pub spec: ModelSpec,
    pub config: BTreeMap<String, String>,
    pub adam_steps_g: BTreeMap<String, u64>,
    pub adam_steps_d: BTreeMap<String, u64>,
    /// Set when the checkpoint was written because training hit a fault.
    pub fault: Option<String>,
}

impl CheckpointState {
    pub fn scale_state(&self) -> Result<ScaleState> {
        ScaleState::new(self.scale, self.alpha)
    }
}

pub fn checkpoint_dir(run_dir: &Path, iteration: u64) -> PathBuf {
    run_dir.join("checkpoints").join(format!("iter_{iteration:08}"))
}

/// Checkpoint directories under a run, sorted by iteration.
pub fn list_checkpoints(run_dir: &Path) -> Result<Vec<(u64, PathBuf)>> {
    let root = run_dir.join("checkpoints");
    if !root.exists() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for entry in fs::read_dir(&root).map_err(io_err(&root))? {
        let path = entry.map_err(io_err(&root))?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        if let Some(k) = name.strip_prefix("iter_").and_then(|s| s.parse().ok()) {
            if path.join(STATE_FILE).exists() {
                out.push((k, path));
            }
        }
    }
    out.sort();
    Ok(out)
}

pub fn write_tensors<'a>(path: &Path, tensors: impl IntoIterator<Item = (&'a str, &'a Tensor)>) -> Result<()> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let mut put = |bytes: &[u8]| w.write_all(bytes).map_err(io_err(path));
    for (name, t) in tensors {
        put(&(name.len() as u32).to_le_bytes())?;
        put(name.as_bytes())?;
        let dims = t.size();
        put(&(dims.len() as u32).to_le_bytes())?;
        for d in &dims {
            put(&(*d as u64).to_le_bytes())?;
        }
        let data = Vec::<f32>::try_from(t.detach().to_kind(Kind::Float).contiguous().flatten(0, -1))?;
        let mut bytes = Vec::with_capacity(data.len() * 4);
        for v in data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        put(&bytes)?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_tensors(path: &Path) -> Result<BTreeMap<String, Tensor>> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let corrupt = || CoreError::Checkpoint(format!("{} is truncated or corrupt", path.display()));
    let mut cur = Cursor::new(bytes.as_slice());
    let take = |cur: &mut Cursor<&[u8]>, n: usize| -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        cur.read_exact(&mut buf).map_err(|_| corrupt())?;
        Ok(buf)
    };
    let mut out = BTreeMap::new();
    while (cur.position() as usize) < bytes.len() {
        let len = u32::from_le_bytes(take(&mut cur, 4)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(&mut cur, len)?).map_err(|_| corrupt())?;
        let ndim = u32::from_le_bytes(take(&mut cur, 4)?.try_into().unwrap()) as usize;
        if ndim > 8 {
            return Err(corrupt());
        }
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(u64::from_le_bytes(take(&mut cur, 8)?.try_into().unwrap()) as i64);
        }
        let n: i64 = dims.iter().product();
        let raw = take(&mut cur, n as usize * 4)?;
        let data: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        out.insert(name, Tensor::from_slice(&data).view(dims.as_slice()));
    }
    Ok(out)
}

fn write_moments(path: &Path, opt: &Adam) -> Result<BTreeMap<String, u64>> {
    let names: Vec<(String, &Tensor)> = opt
        .moments()
        .iter()
        .flat_map(|(k, m)| [(format!("{k}.m"), &m.m), (format!("{k}.v"), &m.v)])
        .collect();
    write_tensors(path, names.iter().map(|(k, t)| (k.as_str(), *t)))?;
    Ok(opt.moments().iter().map(|(k, m)| (k.clone(), m.step)).collect())
}

fn read_moments(path: &Path, steps: &BTreeMap<String, u64>, config: AdamConfig) -> Result<Adam> {
    let mut tensors = read_tensors(path)?;
    let mut opt = Adam::new(config);
    for (name, &step) in steps {
        let mut get = |suffix: &str| {
            tensors
                .remove(&format!("{name}.{suffix}"))
                .ok_or_else(|| CoreError::Checkpoint(format!("missing moment {name}.{suffix}")))
        };
        let (m, v) = (get("m")?, get("v")?);
        opt.insert_moments(name, Moments { m, v, step });
    }
    Ok(opt)
}

pub struct Snapshot<'a> {
    pub iteration: u64,
    pub state: ScaleState,
    pub networks: &'a Networks,
    pub opt_g: &'a Adam,
    pub opt_d: &'a Adam,
    pub config: BTreeMap<String, String>,
    pub fault: Option<String>,
}

/// Writes a checkpoint atomically: everything goes to a sibling temporary
/// directory that is renamed into place.
pub fn save(dir: &Path, snap: &Snapshot) -> Result<()> {
    let tmp = dir.with_extension("partial");
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(io_err(&tmp))?;
    }
    fs::create_dir_all(&tmp).map_err(io_err(&tmp))?;
    let store = &snap.networks.store;
    write_tensors(&tmp.join(PARAMS_FILE), store.iter().map(|(k, t)| (k.as_str(), t)))?;
    let adam_steps_g = write_moments(&tmp.join(ADAM_G_FILE), snap.opt_g)?;
    let adam_steps_d = write_moments(&tmp.join(ADAM_D_FILE), snap.opt_d)?;
    let state = CheckpointState {
        format_version: FORMAT_VERSION,
        iteration: snap.iteration,
        scale: snap.state.scale,
        alpha: snap.state.alpha,
        spec: snap.networks.spec,
        config: snap.config.clone(),
        adam_steps_g,
        adam_steps_d,
        fault: snap.fault.clone(),
    };
    let state_path = tmp.join(STATE_FILE);
    fs::write(&state_path, serde_json::to_string_pretty(&state)?).map_err(io_err(&state_path))?;
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::rename(&tmp, dir).map_err(io_err(dir))
}

pub fn read_state(dir: &Path) -> Result<CheckpointState> {
    let path = dir.join(STATE_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let state: CheckpointState = serde_json::from_str(&text)?;
    if state.format_version != FORMAT_VERSION {
        return Err(CoreError::Checkpoint(format!(
            "checkpoint format {} is not supported (expected {FORMAT_VERSION})",
            state.format_version
        )));
    }
    Ok(state)
}

/// Rebuilds the networks at the checkpoint's scale and loads every parameter.
pub fn load_networks(dir: &Path) -> Result<(CheckpointState, Networks)> {
    let state = read_state(dir)?;
    let mut nets = Networks::at_scale(state.spec, state.scale)?;
    let params = read_tensors(&dir.join(PARAMS_FILE))?;
    if params.len() != nets.store.len() {
        return Err(CoreError::Checkpoint(format!(
            "checkpoint has {} parameters, the model at scale {} has {}",
            params.len(),
            state.scale,
            nets.store.len()
        )));
    }
    for (name, t) in &params {
        nets.store.assign(name, t)?;
    }
    Ok((state, nets))
}

pub fn load(dir: &Path, adam_g: AdamConfig, adam_d: AdamConfig) -> Result<(CheckpointState, Networks, Adam, Adam)> {
    let (state, nets) = load_networks(dir)?;
    let opt_g = read_moments(&dir.join(ADAM_G_FILE), &state.adam_steps_g, adam_g)?;
    let opt_d = read_moments(&dir.join(ADAM_D_FILE), &state.adam_steps_d, adam_d)?;
    Ok((state, nets, opt_g, opt_d))
}
