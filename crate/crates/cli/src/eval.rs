use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::Serialize;
use topdown_core::checkpoint::{list_checkpoints, STATE_FILE};
use topdown_core::seeds::{derive_seed, EVAL};
use topdown_core::ModelPredictor;
use topdown_envgen::{read_dataset, IMAGE_SIZE};
use topdown_metrics::{
    area_downsample, mean_target_image, reports_to_csv, reports_to_table, ConstantPredictor, EvalSampling,
    GroundTruthPredictor, MetricReport, TopDownPredictor,
};

use crate::failure::{io_failure, Failure, Outcome};
use crate::settings::{put, RunManifest, Settings, EVAL_KEYS, GLOBAL_KEYS};
use crate::{default_data_root, DataArg, Globals};

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Checkpoint directory, or a run directory (its latest checkpoint is
    /// used). Repeat to build a comparison table.
    #[arg(long = "checkpoint")]
    checkpoints: Vec<PathBuf>,
    #[command(flatten)]
    data: DataArg,
    /// Sampled (episode, step) pairs per split.
    #[arg(long)]
    count: Option<usize>,
    /// Add a row for a predictor that returns the ground truth.
    #[arg(long)]
    oracle: bool,
    /// Add constant mean-image and mid-gray rows.
    #[arg(long)]
    baselines: bool,
    /// Accept models below 64px that were not trained to their profile's
    /// final scale.
    #[arg(long)]
    allow_reduced_scale: bool,
}

#[derive(Serialize)]
struct ReportEntry {
    checkpoint: Option<String>,
    iteration: Option<u64>,
    report: MetricReport,
}

pub const CSV_FILE: &str = "report.csv";
pub const TABLE_FILE: &str = "report.txt";
pub const JSON_FILE: &str = "report.json";

pub fn resolve_checkpoint_path(p: &Path) -> Outcome<PathBuf> {
    if p.join(STATE_FILE).exists() {
        return Ok(p.to_path_buf());
    }
    list_checkpoints(p)?
        .pop()
        .map(|(_, d)| d)
        .ok_or_else(|| Failure::Data(format!("{} is neither a checkpoint nor a run with checkpoints", p.display())))
}

pub fn run(args: EvalArgs, g: Globals) -> Outcome {
    let mut cli = g.cli;
    if !args.checkpoints.is_empty() {
        let joined: Vec<String> = args.checkpoints.iter().map(|p| p.display().to_string()).collect();
        cli.insert("checkpoints".into(), joined.join(","));
    }
    put(&mut cli, "data", args.data.data.as_ref().map(|p| p.display()));
    put(&mut cli, "eval_count", args.count);
    for (k, on) in [
        ("oracle", args.oracle),
        ("baselines", args.baselines),
        ("allow_reduced_scale", args.allow_reduced_scale),
    ] {
        if on {
            cli.insert(k.into(), "true".into());
        }
    }
    let defaults: BTreeMap<String, String> = [
        ("seed", "0".to_string()),
        ("deterministic", "false".into()),
        ("out", "eval".into()),
        ("data", default_data_root()),
        ("checkpoints", String::new()),
        ("eval_count", EvalSampling::default().count.to_string()),
        ("oracle", "false".into()),
        ("baselines", "false".into()),
        ("allow_reduced_scale", "false".into()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    let s = Settings::resolve(&[GLOBAL_KEYS, EVAL_KEYS], defaults, &g.file, cli)?;
    eprint!("{}", s.describe());

    let checkpoints: Vec<PathBuf> = s
        .get("checkpoints")
        .unwrap_or("")
        .split(',')
        .filter(|c| !c.trim().is_empty())
        .map(|c| resolve_checkpoint_path(Path::new(c.trim())))
        .collect::<Outcome<_>>()?;
    let oracle = s.flag("oracle")?;
    let baselines = s.flag("baselines")?;
    if checkpoints.is_empty() && !oracle && !baselines {
        return Err(Failure::Config("nothing to evaluate: pass --checkpoint, --oracle or --baselines".into()));
    }
    let seed: u64 = s.require("seed")?;
    let data = PathBuf::from(s.require::<String>("data")?);
    let out = PathBuf::from(s.require::<String>("out")?);
    let dataset = read_dataset(&data)?;
    let manifest = RunManifest::new("eval", &s, seed, Some(dataset.manifest.sha256.clone()));
    manifest.write(&out)?;

    let result = (|| {
        let base = EvalSampling {
            count: s.require("eval_count")?,
            seed: derive_seed(seed, EVAL, &[]),
            ..EvalSampling::default()
        };
        let mut entries = Vec::new();
        let mut labels: BTreeMap<String, usize> = BTreeMap::new();
        let mut models = Vec::new();
        for ck in &checkpoints {
            let (state, model) = ModelPredictor::from_checkpoint(ck)?;
            let trained_to_final = state.config.get("final_scale").map(String::as_str) == Some(&state.scale.to_string());
            *labels.entry(model.label()).or_default() += 1;
            models.push((ck, state, model, trained_to_final));
        }
        for (ck, state, mut model, trained_to_final) in models {
            if labels[&model.label()] > 1 {
                model.label = format!("{} iter {}", model.label, state.iteration);
            }
            if (state.scale as usize) < base.ssim.window {
                // too small for the SSIM window: score a nearest-upsampled copy
                model.label = format!("{} ({}px upsampled)", model.label, state.scale);
                model.present_at = Some(IMAGE_SIZE as i64);
            }
            let sampling = EvalSampling {
                allow_reduced_scale: s.flag("allow_reduced_scale")? || trained_to_final,
                ..base.clone()
            };
            eprintln!("evaluating {} ({})", model.label(), ck.display());
            let report = MetricReport::evaluate(&model, &dataset.train, &dataset.test, &sampling)?;
            entries.push(ReportEntry {
                checkpoint: Some(ck.display().to_string()),
                iteration: Some(state.iteration),
                report,
            });
        }
        let reduced = EvalSampling {
            allow_reduced_scale: true,
            ..base.clone()
        };
        if baselines {
            let scale = entries.first().map_or(64, |e| e.report.scale);
            let mean = mean_target_image(&dataset.train)?;
            let mean = ConstantPredictor {
                label: "constant-mean".into(),
                image: if scale == mean.width() { mean } else { area_downsample(&mean, scale)? },
            };
            let mut gray = ConstantPredictor::gray(0.5);
            if scale != gray.image.width() {
                gray.image = area_downsample(&gray.image, scale)?;
            }
            for p in [&mean as &dyn TopDownPredictor, &gray] {
                entries.push(ReportEntry {
                    checkpoint: None,
                    iteration: None,
                    report: MetricReport::evaluate(p, &dataset.train, &dataset.test, &reduced)?,
                });
            }
        }
        if oracle {
            entries.push(ReportEntry {
                checkpoint: None,
                iteration: None,
                report: MetricReport::evaluate(&GroundTruthPredictor, &dataset.train, &dataset.test, &base)?,
            });
        }
        let reports: Vec<MetricReport> = entries.iter().map(|e| e.report.clone()).collect();
        let table = reports_to_table(&reports);
        print!("{table}");
        fs::create_dir_all(&out).map_err(io_failure(&out))?;
        let write = |name: &str, text: String| {
            let p = out.join(name);
            fs::write(&p, text).map_err(io_failure(&p))
        };
        write(CSV_FILE, reports_to_csv(&reports))?;
        write(TABLE_FILE, table)?;
        write(
            JSON_FILE,
            serde_json::to_string_pretty(&entries).map_err(|e| Failure::Internal(e.to_string()))?,
        )?;
        println!("reports written to {}", out.display());
        Ok(())
    })();
    manifest.finish(&out, &result)?;
    result
}
