//! `topdown`: generate datasets, train, evaluate and render sample grids.

mod eval;
mod failure;
mod gen_data;
mod sample;
mod settings;
mod train;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use failure::Outcome;

#[derive(Parser, Debug)]
#[command(name = "topdown", version, about = "Top-down view synthesis from first-person observations")]
struct Cli {
    /// Flat `key = value` config file; command-line flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed; every random stream of the command derives from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Single-threaded kernels so runs with equal manifests match exactly.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a dataset of rotation episodes.
    GenData(gen_data::GenDataArgs),
    /// Train an encoder + progressive GAN.
    Train(train::TrainArgs),
    /// Evaluate checkpoints and write a comparison table.
    Eval(eval::EvalArgs),
    /// Render observation / ground truth / prediction grids.
    Sample(sample::SampleArgs),
}

/// Dataset location shared by the commands that read one.
#[derive(Args, Debug, Clone)]
pub struct DataArg {
    /// Dataset root [default: $TOPDOWN_DATA_ROOT, else ./data]
    #[arg(long)]
    pub data: Option<PathBuf>,
}

pub struct Globals {
    pub file: Vec<(String, String)>,
    pub cli: BTreeMap<String, String>,
}

impl Globals {
    fn new(cli: &Cli) -> Outcome<Self> {
        let file = settings::read_config_file(cli.config.as_deref())?;
        let mut map = BTreeMap::new();
        settings::put(&mut map, "seed", cli.seed);
        if cli.deterministic {
            map.insert("deterministic".into(), "true".into());
        }
        settings::put(&mut map, "out", cli.out.as_ref().map(|p| p.display()));
        Ok(Self { file, cli: map })
    }
}

pub fn default_data_root() -> String {
    std::env::var("TOPDOWN_DATA_ROOT").unwrap_or_else(|_| "data".into())
}

fn run(cli: Cli) -> Outcome {
    let globals = Globals::new(&cli)?;
    match cli.command {
        Command::GenData(a) => gen_data::run(a, globals),
        Command::Train(a) => train::run(a, globals),
        Command::Eval(a) => eval::run(a, globals),
        Command::Sample(a) => sample::run(a, globals),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
