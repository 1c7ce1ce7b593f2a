//! Progressive training loop with checkpointing and a CSV loss log.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;
use tch::Tensor;
use topdown_envgen::Episode;

use crate::checkpoint::{self, checkpoint_dir, Snapshot};
use crate::config::TrainConfig;
use crate::data::{all_pairs, draw_batch, observation_volume, signed_targets};
use crate::gan::{ModelSpec, Networks, ScaleState};
use crate::losses::{total_d_loss, wgan_g_loss, LossReport};
use crate::optim::Adam;
use crate::seeds;
use crate::{io_err, CoreError, Result};

pub const LOG_FILE: &str = "log.csv";
pub const LOG_HEADER: &str = "iteration,scale,alpha,d_loss,g_loss,gp,wdist";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub iteration: u64,
    pub state: ScaleState,
    pub report: LossReport,
}

impl LogRow {
    pub fn csv_line(&self) -> String {
        let r = &self.report;
        format!(
            "{},{},{},{},{},{},{}",
            self.iteration,
            self.state.scale,
            self.state.alpha,
            r.d_loss,
            r.g_loss,
            r.gradient_penalty_term,
            r.wasserstein_estimate
        )
    }
}

/// One minibatch: observation windows, real targets at the active scale and
/// one interpolation weight per sample.
pub struct Batch {
    pub volume: Tensor,
    pub real: Tensor,
    pub eps: Vec<f64>,
}

impl Batch {
    pub fn from_samples(samples: &[(&Episode, usize)], scale: i64, eps: Vec<f64>) -> Result<Self> {
        Ok(Self {
            volume: observation_volume(samples)?,
            real: signed_targets(samples, scale)?,
            eps,
        })
    }
}

fn fault(iteration: u64, what: &str, report: &LossReport) -> CoreError {
    CoreError::NumericFault {
        iteration,
        detail: format!("{what}: {report:?}"),
    }
}

/// One critic update per batch, then one generator+encoder update on the
/// last batch. Real and fake images of a batch are judged under the same
/// condition tensor.
#[allow(clippy::too_many_arguments)]
pub fn train_step(
    nets: &mut Networks,
    opt_g: &mut Adam,
    opt_d: &mut Adam,
    config: &TrainConfig,
    batches: &[Batch],
    state: ScaleState,
    iteration: u64,
) -> Result<LossReport> {
    if batches.is_empty() {
        return Err(CoreError::Config("train_step needs at least one batch".into()));
    }
    let (gen_names, disc_names) = nets.partition();
    let mut report = LossReport::default();
    let mut last_fake = None;
    for (k, batch) in batches.iter().enumerate() {
        let cond = Networks::stack_condition(&batch.volume)?;
        let fake = if k + 1 == batches.len() {
            nets.predict(&batch.volume, state)?
        } else {
            tch::no_grad(|| nets.predict(&batch.volume, state))?
        };
        nets.store.zero_grads();
        let critic = |x: &Tensor| nets.critic_score(x, &cond, state);
        let obj = total_d_loss(&critic, &batch.real, &fake.detach(), &batch.eps, &config.loss)?;
        report = obj.report;
        if !report.is_finite() {
            return Err(fault(iteration, "critic loss", &report));
        }
        obj.loss.backward();
        opt_d.step(&nets.store, &disc_names);
        last_fake = Some((fake, cond));
    }
    let (fake, cond) = last_fake.unwrap();
    nets.store.zero_grads();
    let g_loss = wgan_g_loss(&nets.critic_score(&fake, &cond, state)?)?;
    report.g_loss = g_loss.double_value(&[]);
    if !report.is_finite() {
        return Err(fault(iteration, "generator loss", &report));
    }
    g_loss.backward();
    opt_g.step(&nets.store, &gen_names);
    nets.store.zero_grads();
    Ok(report)
}

pub struct Trainer {
    config: TrainConfig,
    episodes: Vec<Episode>,
    pairs: Vec<(usize, usize)>,
    nets: Networks,
    opt_g: Adam,
    opt_d: Adam,
    /// Completed iterations.
    iteration: u64,
    last_state: ScaleState,
    out: Option<PathBuf>,
}

pub fn model_spec(config: &TrainConfig) -> ModelSpec {
    ModelSpec {
        encoder: config.encoder,
        seed: seeds::derive_seed(config.seed, seeds::INIT, &[]),
        routing_iterations: config.routing_iterations,
    }
}

impl Trainer {
    /// Fresh run. With `out` set, checkpoints go to `out/checkpoints` and the
    /// loss log to `out/log.csv`.
    pub fn new(config: TrainConfig, episodes: Vec<Episode>, out: Option<PathBuf>) -> Result<Self> {
        Self::check_inputs(&config, &episodes)?;
        let nets = Networks::new(model_spec(&config))?;
        let t = Self {
            pairs: all_pairs(&episodes),
            opt_g: Adam::new(config.adam_g),
            opt_d: Adam::new(config.adam_d),
            last_state: config.schedule.state(0),
            config,
            episodes,
            nets,
            iteration: 0,
            out,
        };
        if let Some(out) = &t.out {
            fs::create_dir_all(out).map_err(io_err(out))?;
            let log = out.join(LOG_FILE);
            fs::write(&log, format!("{LOG_HEADER}\n")).map_err(io_err(&log))?;
        }
        Ok(t)
    }

    /// Continues from a checkpoint written by a run with the same config.
    /// Log rows at or after the checkpoint's iteration are dropped.
    pub fn resume(config: TrainConfig, episodes: Vec<Episode>, out: Option<PathBuf>, from: &Path) -> Result<Self> {
        Self::check_inputs(&config, &episodes)?;
        let (state, nets, opt_g, opt_d) = checkpoint::load(from, config.adam_g, config.adam_d)?;
        if state.spec != model_spec(&config) {
            return Err(CoreError::Config(format!(
                "checkpoint model {:?} does not match the config's {:?}",
                state.spec,
                model_spec(&config)
            )));
        }
        if let Some(f) = &state.fault {
            return Err(CoreError::Checkpoint(format!("cannot resume from a fault checkpoint ({f})")));
        }
        if let Some(out) = &out {
            fs::create_dir_all(out).map_err(io_err(out))?;
            truncate_log(&out.join(LOG_FILE), state.iteration)?;
        }
        Ok(Self {
            pairs: all_pairs(&episodes),
            last_state: state.scale_state()?,
            config,
            episodes,
            nets,
            opt_g,
            opt_d,
            iteration: state.iteration,
            out,
        })
    }

    fn check_inputs(config: &TrainConfig, episodes: &[Episode]) -> Result<()> {
        config.validate()?;
        if episodes.iter().all(Episode::is_empty) {
            return Err(CoreError::Config("the training split has no steps to sample".into()));
        }
        if config.deterministic {
            tch::set_num_threads(1);
        }
        Ok(())
    }

    pub fn networks(&self) -> &Networks {
        &self.nets
    }

    /// Generator-side and critic-side optimizers.
    pub fn optimizers(&self) -> (&Adam, &Adam) {
        (&self.opt_g, &self.opt_d)
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    fn batch(&self, iteration: u64, k: usize, scale: i64) -> Result<Batch> {
        let mut rng = seeds::rng(self.config.seed, seeds::BATCH, &[iteration, k as u64]);
        let idx = draw_batch(&self.pairs, self.config.batch_size, &mut rng);
        let samples: Vec<(&Episode, usize)> = idx.iter().map(|&(e, i)| (&self.episodes[e], i)).collect();
        let mut rng = seeds::rng(self.config.seed, seeds::EPS, &[iteration, k as u64]);
        let eps = (0..samples.len()).map(|_| rng.gen::<f64>()).collect();
        Batch::from_samples(&samples, scale, eps)
    }

    /// Runs the next iteration, growing the networks first if the schedule
    /// moved to a larger scale.
    pub fn step(&mut self) -> Result<LogRow> {
        let it = self.iteration;
        let state = self.config.schedule.state(it);
        while self.nets.scale() < state.scale {
            let next = self.nets.scale() * 2;
            self.nets.grow(next)?;
        }
        let batches = (0..self.config.n_critic)
            .map(|k| self.batch(it, k, state.scale))
            .collect::<Result<Vec<_>>>()?;
        let report = train_step(
            &mut self.nets,
            &mut self.opt_g,
            &mut self.opt_d,
            &self.config,
            &batches,
            state,
            it,
        )?;
        self.iteration += 1;
        self.last_state = state;
        Ok(LogRow {
            iteration: it,
            state,
            report,
        })
    }

    fn snapshot(&self, fault: Option<String>) -> Snapshot<'_> {
        Snapshot {
            iteration: self.iteration,
            state: self.last_state,
            networks: &self.nets,
            opt_g: &self.opt_g,
            opt_d: &self.opt_d,
            config: self.config.to_map(),
            fault,
        }
    }

    pub fn save_checkpoint(&self, dir: &Path) -> Result<()> {
        checkpoint::save(dir, &self.snapshot(None))
    }

    fn checkpoint_due(&self) -> bool {
        let k = self.iteration;
        k % self.config.checkpoint_every == 0
            || k == self.config.total_iterations
            || self.config.schedule.state(k).scale > self.nets.scale()
    }

    /// Trains up to `total_iterations`, calling `on_row` after every
    /// iteration. Returns the rows produced by this call.
    pub fn run_with(&mut self, mut on_row: impl FnMut(&LogRow)) -> Result<Vec<LogRow>> {
        self.run_until(self.config.total_iterations, &mut on_row)
    }

    pub fn run(&mut self) -> Result<Vec<LogRow>> {
        self.run_with(|_| {})
    }

    pub fn run_until(&mut self, end: u64, on_row: &mut dyn FnMut(&LogRow)) -> Result<Vec<LogRow>> {
        let end = end.min(self.config.total_iterations);
        let mut rows = Vec::new();
        let mut log = match &self.out {
            Some(out) => {
                let path = out.join(LOG_FILE);
                Some((
                    fs::OpenOptions::new().append(true).open(&path).map_err(io_err(&path))?,
                    path,
                ))
            }
            None => None,
        };
        while self.iteration < end {
            let row = match self.step() {
                Ok(row) => row,
                Err(e @ CoreError::NumericFault { .. }) => {
                    if let Some(out) = &self.out {
                        let dir = out.join(format!("fault_iter_{:08}", self.iteration));
                        checkpoint::save(&dir, &self.snapshot(Some(e.to_string())))?;
                    }
                    return Err(e);
                }
                Err(e) => return Err(e),
            };
            if let Some((file, path)) = &mut log {
                if let Err(source) = writeln!(file, "{}", row.csv_line()) {
                    let out = self.out.as_ref().unwrap();
                    let _ = self.save_checkpoint(&checkpoint_dir(out, self.iteration));
                    return Err(CoreError::Io {
                        path: path.display().to_string(),
                        source,
                    });
                }
            }
            on_row(&row);
            rows.push(row);
            if let Some(out) = &self.out {
                if self.checkpoint_due() {
                    self.save_checkpoint(&checkpoint_dir(out, self.iteration))?;
                }
            }
        }
        Ok(rows)
    }
}

/// Keeps the header and the rows for iterations before `keep_below`.
fn truncate_log(path: &Path, keep_below: u64) -> Result<()> {
    let text = if path.exists() {
        fs::read_to_string(path).map_err(io_err(path))?
    } else {
        String::new()
    };
    let mut out = format!("{LOG_HEADER}\n");
    for line in text.lines().skip(1) {
        let it: Option<u64> = line.split(',').next().and_then(|s| s.parse().ok());
        if matches!(it, Some(i) if i < keep_below) {
            out.push_str(line);
            out.push('\n');
        }
    }
    fs::write(path, out).map_err(io_err(path))
}

pub fn read_log(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    Ok(text.lines().skip(1).map(str::to_string).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_truncation_keeps_earlier_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(LOG_FILE);
        let rows: String = (0..5).map(|i| format!("{i},4,1,0,0,0,0\n")).collect();
        fs::write(&path, format!("{LOG_HEADER}\n{rows}")).unwrap();
        truncate_log(&path, 3).unwrap();
        let kept = read_log(&path).unwrap();
        assert_eq!(kept.len(), 3);
        assert!(kept[2].starts_with("2,"));
    }
}
