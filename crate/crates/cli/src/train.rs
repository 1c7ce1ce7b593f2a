use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Args;
use topdown_core::checkpoint::list_checkpoints;
use topdown_core::{EncoderKind, LogRow, Profile, TrainConfig, Trainer};
use topdown_envgen::read_dataset;

use crate::failure::{Failure, Outcome};
use crate::settings::{put, RunManifest, Settings, GLOBAL_KEYS, TRAIN_KEYS};
use crate::{default_data_root, DataArg, Globals};

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// baseline | conv3d | conv2d1d | capsule
    #[arg(long)]
    encoder: Option<String>,
    /// paper (25000/12500 up to 64px) | desk (500/250 up to 32px)
    #[arg(long)]
    profile: Option<String>,
    #[command(flatten)]
    data: DataArg,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    total_iterations: Option<u64>,
    #[arg(long)]
    iterations_per_scale: Option<u64>,
    #[arg(long)]
    fade_iterations: Option<u64>,
    #[arg(long)]
    final_scale: Option<i64>,
    #[arg(long)]
    checkpoint_every: Option<u64>,
    #[arg(long)]
    n_critic: Option<usize>,
    #[arg(long)]
    lr_g: Option<f64>,
    #[arg(long)]
    lr_d: Option<f64>,
    #[arg(long)]
    lambda_gp: Option<f64>,
    /// Continue from a checkpoint directory, or `latest` under --out.
    #[arg(long)]
    resume: Option<String>,
    /// Print a progress line every N iterations.
    #[arg(long)]
    log_every: Option<u64>,
    /// Start over even if --out already holds checkpoints.
    #[arg(long)]
    force: bool,
    /// Any other config key, e.g. `--set beta2_d=0.9`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

/// Config keys that are not `TrainConfig` fields.
const RUN_ONLY: &[&str] = &["profile", "resume", "log_every", "force", "out"];

pub fn run(args: TrainArgs, g: Globals) -> Outcome {
    let mut cli = g.cli;
    for kv in &args.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Failure::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        if !TRAIN_KEYS.contains(&k.trim()) && !GLOBAL_KEYS.contains(&k.trim()) {
            return Err(Failure::Config(format!("unknown training key {k:?}")));
        }
        cli.insert(k.trim().to_string(), v.trim().to_string());
    }
    put(&mut cli, "encoder", args.encoder);
    put(&mut cli, "profile", args.profile);
    put(&mut cli, "data", args.data.data.as_ref().map(|p| p.display()));
    put(&mut cli, "batch_size", args.batch_size);
    put(&mut cli, "total_iterations", args.total_iterations);
    put(&mut cli, "iterations_per_scale", args.iterations_per_scale);
    put(&mut cli, "fade_iterations", args.fade_iterations);
    put(&mut cli, "final_scale", args.final_scale);
    put(&mut cli, "checkpoint_every", args.checkpoint_every);
    put(&mut cli, "n_critic", args.n_critic);
    put(&mut cli, "lr_g", args.lr_g);
    put(&mut cli, "lr_d", args.lr_d);
    put(&mut cli, "lambda_gp", args.lambda_gp);
    put(&mut cli, "resume", args.resume);
    put(&mut cli, "log_every", args.log_every);
    if args.force {
        cli.insert("force".into(), "true".into());
    }

    let profile_text = cli
        .get("profile")
        .cloned()
        .or_else(|| g.file.iter().rev().find(|(k, _)| k == "profile").map(|(_, v)| v.clone()))
        .unwrap_or_else(|| "paper".into());
    let profile: Profile = profile_text.parse()?;
    let mut defaults: BTreeMap<String, String> = TrainConfig::profile(profile).to_map();
    defaults.insert("profile".into(), profile.to_string());
    defaults.insert("log_every".into(), "50".into());
    defaults.insert("force".into(), "false".into());
    defaults.insert("data".into(), default_data_root());
    let mut s = Settings::resolve(&[GLOBAL_KEYS, TRAIN_KEYS], defaults, &g.file, cli)?;
    let encoder: EncoderKind = s.require::<String>("encoder")?.parse()?;
    s.default_for("out", format!("runs/{encoder}"));
    eprint!("{}", s.describe());

    let mut cfg = TrainConfig::profile(profile);
    for (k, v) in s.values() {
        if !RUN_ONLY.contains(&k.as_str()) {
            cfg.set(&k, &v)?;
        }
    }
    cfg.validate()?;
    if encoder.known_nonlearning() {
        eprintln!(
            "warning: the {encoder} encoder is known not to learn from this data; \
             its reports are flagged known-nonlearning"
        );
    }
    let out = PathBuf::from(s.require::<String>("out")?);
    let resume = resolve_resume(s.get("resume"), &out)?;
    if resume.is_none() && !list_checkpoints(&out)?.is_empty() && !s.flag("force")? {
        return Err(Failure::Config(format!(
            "{} already has checkpoints; pass --resume latest to continue or --force to start over",
            out.display()
        )));
    }
    let data = PathBuf::from(s.require::<String>("data")?);
    let dataset = read_dataset(&data)?;
    let manifest = RunManifest::new("train", &s, cfg.seed, Some(dataset.manifest.sha256.clone()));
    let path = manifest.write(&out)?;
    eprintln!("run manifest: {}", path.display());

    let log_every: u64 = s.require("log_every")?;
    let result = train(cfg, dataset.train, &out, resume.as_deref(), log_every);
    manifest.finish(&out, &result)?;
    result
}

fn resolve_resume(value: Option<&str>, out: &Path) -> Outcome<Option<PathBuf>> {
    match value {
        None | Some("") => Ok(None),
        Some("latest") => list_checkpoints(out)?
            .pop()
            .map(|(_, p)| Some(p))
            .ok_or_else(|| Failure::Data(format!("no checkpoints under {}", out.display()))),
        Some(p) => Ok(Some(PathBuf::from(p))),
    }
}

fn train(
    cfg: TrainConfig,
    episodes: Vec<topdown_envgen::Episode>,
    out: &Path,
    resume: Option<&Path>,
    log_every: u64,
) -> Outcome {
    let total = cfg.total_iterations;
    let mut trainer = match resume {
        Some(ck) => {
            eprintln!("resuming from {}", ck.display());
            Trainer::resume(cfg, episodes, Some(out.to_path_buf()), ck)?
        }
        None => Trainer::new(cfg, episodes, Some(out.to_path_buf()))?,
    };
    let start = Instant::now();
    let first = trainer.iteration();
    let log_every = log_every.max(1);
    trainer.run_with(|row: &LogRow| {
        if row.iteration % log_every == 0 || row.iteration + 1 == total {
            let r = &row.report;
            let rate = (row.iteration + 1 - first) as f64 / start.elapsed().as_secs_f64();
            println!(
                "iter {:>7}  scale {:>2}  alpha {:.3}  d {:>9.4}  g {:>9.4}  gp {:>8.4}  w {:>8.4}  ({rate:.2} it/s)",
                row.iteration, row.state.scale, row.state.alpha, r.d_loss, r.g_loss, r.gradient_penalty_term, r.wasserstein_estimate
            );
        }
    })?;
    let cks = list_checkpoints(out)?;
    println!(
        "finished {} iterations in {:.1}s; {} checkpoints, latest {}",
        trainer.iteration(),
        start.elapsed().as_secs_f64(),
        cks.len(),
        cks.last().map_or_else(|| "-".into(), |(_, p)| p.display().to_string())
    );
    Ok(())
}
