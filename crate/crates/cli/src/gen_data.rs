use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use clap::Args;
use topdown_envgen::dataset::MANIFEST_FILE as MANIFEST_FILE_NAME;
use topdown_envgen::{generate_dataset, write_dataset, DatasetConfig};

use crate::failure::{io_failure, Failure, Outcome};
use crate::settings::{put, RunManifest, Settings, GEN_KEYS, GLOBAL_KEYS};
use crate::{default_data_root, Globals};

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[arg(long)]
    train_envs: Option<usize>,
    #[arg(long)]
    test_envs: Option<usize>,
    #[arg(long)]
    episode_len: Option<usize>,
    #[arg(long)]
    episodes_per_env: Option<usize>,
    /// Overwrite a nonempty output directory.
    #[arg(long)]
    force: bool,
}

pub fn run(args: GenDataArgs, g: Globals) -> Outcome {
    let d = DatasetConfig::default();
    let defaults: BTreeMap<String, String> = [
        ("seed", d.seed.to_string()),
        ("deterministic", "false".into()),
        ("out", default_data_root()),
        ("train_envs", d.train_envs.to_string()),
        ("test_envs", d.test_envs.to_string()),
        ("episode_len", d.episode_len.to_string()),
        ("episodes_per_env", d.episodes_per_env.to_string()),
        ("force", "false".into()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    let mut cli = g.cli;
    put(&mut cli, "train_envs", args.train_envs);
    put(&mut cli, "test_envs", args.test_envs);
    put(&mut cli, "episode_len", args.episode_len);
    put(&mut cli, "episodes_per_env", args.episodes_per_env);
    if args.force {
        cli.insert("force".into(), "true".into());
    }
    let s = Settings::resolve(&[GLOBAL_KEYS, GEN_KEYS], defaults, &g.file, cli)?;
    eprint!("{}", s.describe());

    let cfg = DatasetConfig {
        seed: s.require("seed")?,
        train_envs: s.require("train_envs")?,
        test_envs: s.require("test_envs")?,
        episode_len: s.require("episode_len")?,
        episodes_per_env: s.require("episodes_per_env")?,
        ..d
    };
    cfg.validate()?;
    let out = PathBuf::from(s.require::<String>("out")?);
    let nonempty = out.exists() && fs::read_dir(&out).map_err(io_failure(&out))?.next().is_some();
    if nonempty {
        if !s.flag("force")? {
            return Err(Failure::Config(format!(
                "{} is not empty; pass --force to overwrite",
                out.display()
            )));
        }
        for name in ["train", "test", MANIFEST_FILE_NAME] {
            let p = out.join(name);
            if p.is_dir() {
                fs::remove_dir_all(&p).map_err(io_failure(&p))?;
            } else if p.exists() {
                fs::remove_file(&p).map_err(io_failure(&p))?;
            }
        }
    }
    let manifest = RunManifest::new("gen-data", &s, cfg.seed, None);
    manifest.write(&out)?;

    let result = (|| {
        let episodes = generate_dataset(&cfg)?;
        let m = write_dataset(&cfg, &episodes, &out)?;
        println!(
            "wrote {} episodes ({} train, {} test) to {}",
            m.episode_count(),
            m.split(topdown_envgen::Split::Train).map_or(0, |s| s.episodes.len()),
            m.split(topdown_envgen::Split::Test).map_or(0, |s| s.episodes.len()),
            out.display()
        );
        println!("manifest: {} (sha256 {})", out.join(MANIFEST_FILE_NAME).display(), m.sha256);
        Ok(())
    })();
    manifest.finish(&out, &result)?;
    result
}
