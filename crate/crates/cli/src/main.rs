use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dhs_core::error::{Error, Result};
use dhs_core::experience_memory::MemoryStore;
use dhs_core::harness::dataset::{generate_toy_dataset, ToyDatasetSpec};
use dhs_core::harness::scenarios::DEFAULT_SCENARIO_COUNT;
use dhs_core::harness::{format_table, make_dyn_scenarios, run_benchmark, run_scenario, train_pipeline, PipelineConfig, RunConfig, RunContext, Scenario, VARIANTS};
use dhs_core::voxel::{BoxScene, OccupancyGrid};

#[derive(Parser)]
#[command(name = "dhs", version, about = "Text-conditioned human-scene interaction in dynamic voxel scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone, Copy)]
struct Ablation {
    /// Straight-line trajectories with confidence 1.
    #[arg(long)]
    no_navigation: bool,
    /// Gaussian primes instead of retrieved ones.
    #[arg(long)]
    no_memory: bool,
    /// Fixed uniform condition weights.
    #[arg(long)]
    no_adapter: bool,
}

#[derive(Args, Clone)]
struct ModelArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    memory: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the procedural toy dataset.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Build dynamic evaluation scenarios from a dataset's scenes.
    MakeScenarios {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SCENARIO_COUNT)]
        n: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Train all networks and fill the experience memory.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Generate and evaluate one scenario.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        ablation: Ablation,
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate every scenario of a directory under all variants.
    Bench {
        #[arg(long)]
        scenarios: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Experience-memory utilities.
    Memory {
        #[command(subcommand)]
        command: MemoryCommand,
    },
    /// Occupancy-grid utilities.
    Grid {
        #[command(subcommand)]
        command: GridCommand,
    },
}

#[derive(Subcommand)]
enum MemoryCommand {
    /// Print bucket sizes and entry summaries.
    Inspect { path: PathBuf },
}

#[derive(Subcommand)]
enum GridCommand {
    /// Convert between box-scene JSON and the binary `.grid` format (by extension).
    Convert { input: PathBuf, output: PathBuf },
}

fn read_config<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        Some(p) => Ok(serde_json::from_str(&fs::read_to_string(p)?)?),
        None => Ok(T::default()),
    }
}

fn run_config(common: &Common, model: &ModelArgs) -> Result<RunConfig> {
    let mut cfg: RunConfig = read_config(common.config.as_deref())?;
    if let Some(c) = &model.checkpoint {
        cfg.checkpoint = c.clone();
    }
    if let Some(m) = &model.memory {
        cfg.memory = Some(m.clone());
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn is_grid(p: &Path) -> bool {
    p.extension().is_some_and(|e| e == "grid")
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { common } => {
            let mut spec: ToyDatasetSpec = read_config(common.config.as_deref())?;
            if let Some(s) = common.seed {
                spec.seed = s;
            }
            let m = generate_toy_dataset(&spec, &common.out)?;
            println!("{} scenes, {} clips -> {}", m.scenes.len(), m.clips.len(), common.out.display());
        }
        Command::MakeScenarios { dataset, n, common } => {
            let made = make_dyn_scenarios(&dataset, n, common.seed.unwrap_or(0), &common.out)?;
            println!("{} scenarios -> {}", made.len(), common.out.display());
        }
        Command::Train { dataset, common } => {
            let mut cfg: PipelineConfig = read_config(common.config.as_deref())?;
            if let Some(s) = common.seed {
                cfg.train.seed = s;
                cfg.init_seed = s;
            }
            let (_, memory, losses) = train_pipeline(&dataset, &cfg, &common.out)?;
            if let (Some(first), Some(last)) = (losses.first(), losses.last()) {
                println!("loss {:.5} -> {:.5} over {} epochs, memory {} entries", first.total, last.total, losses.len(), memory.len());
            }
        }
        Command::Run { scenario, model, ablation, common } => {
            let mut cfg = run_config(&common, &model)?;
            cfg.navigation &= !ablation.no_navigation;
            cfg.use_memory &= !ablation.no_memory;
            cfg.adapter &= !ablation.no_adapter;
            let ctx = RunContext::load(cfg)?;
            let s = Scenario::load(&scenario)?;
            let dir = scenario.parent().unwrap_or(Path::new("."));
            let run = run_scenario(&ctx, &s, dir, "full", Some(&common.out))?;
            println!("{}", serde_json::to_string_pretty(&run.report)?);
        }
        Command::Bench { scenarios, model, common } => {
            let ctx = RunContext::load(run_config(&common, &model)?)?;
            let result = run_benchmark(&ctx, &scenarios, &VARIANTS, Some(&common.out))?;
            print!("{}", format_table(&result));
        }
        Command::Memory { command: MemoryCommand::Inspect { path } } => {
            let store = MemoryStore::load(&path)?;
            println!("{} entries (k_mem {}, tau_l {})", store.len(), store.cfg.k_mem, store.cfg.tau_l);
            for (verb, bucket) in &store.buckets {
                println!("{verb}: {} entries", bucket.len());
                for (e, score) in bucket.iter().zip(store.member_scores(verb)?) {
                    println!("  loss {:.6}  mean similarity {:.4}  {:?}", e.loss, score, e.prompt);
                }
            }
        }
        Command::Grid { command: GridCommand::Convert { input, output } } => match (is_grid(&input), is_grid(&output)) {
            (false, true) => BoxScene::from_json(&fs::read_to_string(&input)?)?.voxelize()?.save(&output)?,
            (true, false) => fs::write(&output, BoxScene::from_grid(&OccupancyGrid::load(&input)?).to_json()?)?,
            _ => return Err(Error::input("convert needs one .grid file and one box JSON file")),
        },
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
