//! Training configuration and its flat `key = value` text form.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::capsule::DEFAULT_ROUTING_ITERATIONS;
use crate::encoders::EncoderKind;
use crate::losses::LossConfig;
use crate::optim::AdamConfig;
use crate::schedule::ScaleSchedule;
use crate::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// 25,000 iterations per scale, 12,500 fade, up to 64x64.
    Paper,
    /// 500 iterations per scale, 250 fade, up to 32x32, batch 16.
    Desk,
}

impl FromStr for Profile {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Self::Paper),
            "desk" => Ok(Self::Desk),
            _ => Err(CoreError::Config(format!("unknown profile {s:?} (paper|desk)"))),
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Paper => "paper",
            Self::Desk => "desk",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub encoder: EncoderKind,
    pub batch_size: usize,
    pub total_iterations: u64,
    pub schedule: ScaleSchedule,
    pub adam_g: AdamConfig,
    pub adam_d: AdamConfig,
    pub loss: LossConfig,
    pub n_critic: usize,
    pub seed: u64,
    pub checkpoint_every: u64,
    pub deterministic: bool,
    pub routing_iterations: usize,
    pub data: Option<String>,
}

impl TrainConfig {
    pub fn profile(profile: Profile) -> Self {
        match profile {
            Profile::Paper => Self {
                encoder: EncoderKind::Baseline,
                batch_size: 16,
                total_iterations: 125_000,
                schedule: ScaleSchedule::default(),
                adam_g: AdamConfig::default(),
                adam_d: AdamConfig::default(),
                loss: LossConfig::default(),
                n_critic: 1,
                seed: 0,
                checkpoint_every: 5_000,
                deterministic: false,
                routing_iterations: DEFAULT_ROUTING_ITERATIONS,
                data: None,
            },
            Profile::Desk => Self {
                total_iterations: 2_000,
                schedule: ScaleSchedule {
                    final_scale: 32,
                    iterations_per_scale: 500,
                    fade_iterations: 250,
                },
                checkpoint_every: 100,
                ..Self::profile(Profile::Paper)
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        let positive = [
            ("batch_size", self.batch_size as f64),
            ("total_iterations", self.total_iterations as f64),
            ("n_critic", self.n_critic as f64),
            ("checkpoint_every", self.checkpoint_every as f64),
            ("routing_iterations", self.routing_iterations as f64),
            ("adam_eps", self.adam_g.eps.min(self.adam_d.eps)),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| !(*v > 0.0)) {
            return Err(CoreError::Config(format!("{k} must be positive")));
        }
        for (k, v) in [
            ("lr_g", self.adam_g.lr),
            ("lr_d", self.adam_d.lr),
            ("lambda_gp", self.loss.lambda_gp),
            ("drift_epsilon", self.loss.drift_epsilon),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(CoreError::Config(format!("{k} must be a finite non-negative number")));
            }
        }
        for (k, v) in [
            ("beta1_g", self.adam_g.beta1),
            ("beta2_g", self.adam_g.beta2),
            ("beta1_d", self.adam_d.beta1),
            ("beta2_d", self.adam_d.beta2),
        ] {
            if !(0.0..1.0).contains(&v) {
                return Err(CoreError::Config(format!("{k} must be in [0, 1)")));
            }
        }
        Ok(())
    }

    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| CoreError::Config(format!("bad value {value:?} for {key}")))
        }
        match key {
            "profile" => {
                let keep = (self.encoder, self.seed, self.data.clone(), self.deterministic);
                *self = Self::profile(parse(key, value)?);
                (self.encoder, self.seed, self.data, self.deterministic) = keep;
            }
            "encoder" => self.encoder = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "total_iterations" => self.total_iterations = parse(key, value)?,
            "final_scale" => self.schedule.final_scale = parse(key, value)?,
            "iterations_per_scale" => self.schedule.iterations_per_scale = parse(key, value)?,
            "fade_iterations" => self.schedule.fade_iterations = parse(key, value)?,
            "lr_g" => self.adam_g.lr = parse(key, value)?,
            "beta1_g" => self.adam_g.beta1 = parse(key, value)?,
            "beta2_g" => self.adam_g.beta2 = parse(key, value)?,
            "lr_d" => self.adam_d.lr = parse(key, value)?,
            "beta1_d" => self.adam_d.beta1 = parse(key, value)?,
            "beta2_d" => self.adam_d.beta2 = parse(key, value)?,
            "adam_eps" => {
                let e = parse(key, value)?;
                self.adam_g.eps = e;
                self.adam_d.eps = e;
            }
            "lambda_gp" => self.loss.lambda_gp = parse(key, value)?,
            "use_drift" => self.loss.use_drift = parse(key, value)?,
            "drift_epsilon" => self.loss.drift_epsilon = parse(key, value)?,
            "n_critic" => self.n_critic = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            "deterministic" => self.deterministic = parse(key, value)?,
            "routing_iterations" => self.routing_iterations = parse(key, value)?,
            "data" => self.data = Some(value.to_string()),
            _ => return Err(CoreError::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Every key with its resolved value.
    pub fn to_map(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("encoder", self.encoder.to_string());
        put("batch_size", self.batch_size.to_string());
        put("total_iterations", self.total_iterations.to_string());
        put("final_scale", self.schedule.final_scale.to_string());
        put("iterations_per_scale", self.schedule.iterations_per_scale.to_string());
        put("fade_iterations", self.schedule.fade_iterations.to_string());
        put("lr_g", self.adam_g.lr.to_string());
        put("beta1_g", self.adam_g.beta1.to_string());
        put("beta2_g", self.adam_g.beta2.to_string());
        put("lr_d", self.adam_d.lr.to_string());
        put("beta1_d", self.adam_d.beta1.to_string());
        put("beta2_d", self.adam_d.beta2.to_string());
        put("adam_eps", self.adam_g.eps.to_string());
        put("lambda_gp", self.loss.lambda_gp.to_string());
        put("use_drift", self.loss.use_drift.to_string());
        put("drift_epsilon", self.loss.drift_epsilon.to_string());
        put("n_critic", self.n_critic.to_string());
        put("seed", self.seed.to_string());
        put("checkpoint_every", self.checkpoint_every.to_string());
        put("deterministic", self.deterministic.to_string());
        put("routing_iterations", self.routing_iterations.to_string());
        if let Some(d) = &self.data {
            put("data", d.clone());
        }
        m
    }

    pub fn to_text(&self) -> String {
        self.to_map().iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CoreError::Config(format!("line {}: expected key = value, got {raw:?}", n + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}
