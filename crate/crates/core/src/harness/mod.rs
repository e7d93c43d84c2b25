//! Dataset and scenario tooling, end-to-end runs and benchmark aggregation.

pub mod dataset;
pub mod fixtures;
pub mod scenarios;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experience_memory::{MemoryConfig, MemoryStore};
use crate::geom::{self, Vec3};
use crate::hsi_diffusion::generate::{generate_sequence, GenerateOptions, Generation, GenerationTask};
use crate::hsi_diffusion::train::{train, LossRecord, TrainConfig};
use crate::hsi_diffusion::{NoiseSchedule, ScheduleConfig};
use crate::metrics::{self, EvalReport, DEFAULT_TRAJ_TAU};
use crate::model::{ModelConfig, Models};
use crate::navigation::{nearest_free_cell, oracle_navigator, planning_grid, OracleConfig, WALK_SPEED};
use crate::voxel::{OccupancyGrid, SceneTimeline, DEFAULT_INFLATION_RADIUS};

use dataset::load_samples;
pub use scenarios::make_dyn_scenarios;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneChange {
    pub frame: usize,
    /// `.grid` path relative to the scenario file.
    pub grid: String,
}

/// A task in a (possibly changing) scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub prompt: String,
    pub start: Vec3,
    pub goal: Vec3,
    /// `.grid` path relative to the scenario file.
    pub scene_begin: String,
    pub scene_changes: Vec<SceneChange>,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if self.scene_changes.first().is_some_and(|c| c.frame == 0) || self.scene_changes.windows(2).any(|w| w[1].frame <= w[0].frame) {
            return Err(Error::input(format!("scenario {}: change frames must be positive and strictly increasing", self.id)));
        }
        if !geom::is_finite(self.start) || !geom::is_finite(self.goal) {
            return Err(Error::input(format!("scenario {}: start and goal must be finite", self.id)));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s: Scenario = serde_json::from_str(&fs::read_to_string(path)?)?;
        s.validate()?;
        Ok(s)
    }

    /// Scene timeline with grids resolved next to `path`'s directory.
    pub fn timeline(&self, dir: &Path) -> Result<SceneTimeline> {
        let mut states = vec![(0, OccupancyGrid::load(&dir.join(&self.scene_begin))?)];
        for c in &self.scene_changes {
            states.push((c.frame, OccupancyGrid::load(&dir.join(&c.grid))?));
        }
        let tl = SceneTimeline::new(states)?;
        let (lo, hi) = tl.spec().bounds();
        let inside = |p: Vec3| p[0] >= lo[0] && p[0] <= hi[0] && p[2] >= lo[2] && p[2] <= hi[2];
        if !inside(self.start) || !inside(self.goal) {
            return Err(Error::input(format!("scenario {}: start or goal outside the scene", self.id)));
        }
        Ok(tl)
    }
}

/// Settings of a run or benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub checkpoint: PathBuf,
    pub memory: Option<PathBuf>,
    /// When set, must match the checkpoint's schedule.
    pub schedule: Option<ScheduleConfig>,
    pub inflation_radius: f64,
    pub traj_tau: f64,
    pub seed: u64,
    pub navigation: bool,
    pub use_memory: bool,
    pub adapter: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            checkpoint: PathBuf::from("model.ckpt"),
            memory: Some(PathBuf::from("memory.mem")),
            schedule: None,
            inflation_radius: DEFAULT_INFLATION_RADIUS,
            traj_tau: DEFAULT_TRAJ_TAU,
            seed: 0,
            navigation: true,
            use_memory: true,
            adapter: true,
        }
    }
}

impl RunConfig {
    pub fn options(&self) -> GenerateOptions {
        GenerateOptions { navigation: self.navigation, memory: self.use_memory, adapter: self.adapter, inflation_radius: self.inflation_radius }
    }
}

/// Loaded models and memory for a run.
pub struct RunContext {
    pub config: RunConfig,
    pub models: Models,
    pub memory: MemoryStore,
}

impl RunContext {
    pub fn load(config: RunConfig) -> Result<Self> {
        let models = Models::load(&config.checkpoint)?;
        if let Some(s) = &config.schedule {
            if *s != models.cfg.schedule {
                return Err(Error::config("run schedule does not match the checkpoint"));
            }
        }
        let memory = match &config.memory {
            Some(p) => MemoryStore::load(p)?,
            None => MemoryStore::new(MemoryConfig::default())?,
        };
        Self::new(config, models, memory)
    }

    pub fn new(config: RunConfig, models: Models, memory: MemoryStore) -> Result<Self> {
        if !(config.inflation_radius >= 0.0) || !(config.traj_tau > 0.0) {
            return Err(Error::config("inflation radius must be >= 0 and tau > 0"));
        }
        Ok(RunContext { config, models, memory })
    }
}

/// Ablation variants reported by the benchmark.
pub const VARIANTS: [&str; 4] = ["full", "no-navigation", "no-memory", "no-adapter"];

pub fn variant_options(base: &GenerateOptions, variant: &str) -> Result<GenerateOptions> {
    let mut o = *base;
    match variant {
        "full" => {}
        "no-navigation" => o.navigation = false,
        "no-memory" => o.memory = false,
        "no-adapter" => o.adapter = false,
        other => return Err(Error::input(format!("unknown variant {other}"))),
    }
    Ok(o)
}

/// Scores a generated motion against the scenario and an oracle reference path.
pub fn evaluate(gen: &Generation, task: &GenerationTask, inflation_radius: f64, tau: f64) -> Result<EvalReport> {
    let m = &gen.motion;
    let pred: Vec<Vec3> = m.root_positions().iter().map(|p| [p[0], 0.0, p[2]]).collect();
    // The reference walks to the goal, or to the free cell next to it when the goal is blocked.
    let nav = planning_grid(task.timeline.grid_at(0), inflation_radius)?;
    let mut end = [task.goal[0], 0.0, task.goal[2]];
    if nav.blocked_at(end[0], end[2]) {
        if let Some((x, z)) = nearest_free_cell(&nav, [end[0], end[2]]) {
            let c = nav.center(x, z);
            end = [c[0], 0.0, c[1]];
        }
    }
    let cfg = OracleConfig { speed: WALK_SPEED, inflation_radius };
    let reference = oracle_navigator(task.timeline, task.start, end, m.frames, 0, &cfg)?.positions();
    let traj_sim = metrics::traj_similarity(&pred, &reference, tau)?;
    let traj_err = metrics::traj_err(&pred, &reference)?;
    let last = pred[pred.len() - 1];
    let goal_err = geom::dist_xz(last, task.goal);
    let pene = metrics::penetration(m, task.timeline)?;
    Ok(EvalReport::from_parts(traj_sim, traj_err, goal_err, pene, None, metrics::foot_skating(m)?))
}

/// Result of one scenario run.
#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub generation: Generation,
    pub report: EvalReport,
}

#[derive(Serialize)]
struct RunRecord<'a> {
    scenario: &'a str,
    variant: &'a str,
    seed: u64,
    change_frames: Vec<usize>,
    report: &'a EvalReport,
    keypoints: &'a [Vec3],
    segments: &'a [crate::hsi_diffusion::generate::SegmentDiagnostics],
}

/// Generates and evaluates one scenario. With `out`, writes
/// `<id>.<variant>.motion.jsonl` and `<id>.<variant>.report.json` there.
pub fn run_scenario(ctx: &RunContext, scenario: &Scenario, dir: &Path, variant: &str, out: Option<&Path>) -> Result<ScenarioRun> {
    let wrap = |e: Error| Error::Scenario { id: scenario.id.clone(), source: Box::new(e) };
    let timeline = scenario.timeline(dir).map_err(wrap)?;
    let task = GenerationTask { timeline: &timeline, prompt: &scenario.prompt, start: scenario.start, goal: scenario.goal };
    let opts = variant_options(&ctx.config.options(), variant)?;
    let generation = generate_sequence(&ctx.models, &ctx.memory, &task, &opts, ctx.config.seed).map_err(wrap)?;
    let report = evaluate(&generation, &task, ctx.config.inflation_radius, ctx.config.traj_tau).map_err(wrap)?;
    if let Some(out) = out {
        fs::create_dir_all(out)?;
        let stem = format!("{}.{variant}", scenario.id);
        generation.motion.write_jsonl(std::io::BufWriter::new(fs::File::create(out.join(format!("{stem}.motion.jsonl")))?))?;
        let record = RunRecord {
            scenario: &scenario.id,
            variant,
            seed: ctx.config.seed,
            change_frames: timeline.change_frames(),
            report: &report,
            keypoints: &generation.keypoints,
            segments: &generation.segments,
        };
        fs::write(out.join(format!("{stem}.report.json")), serde_json::to_string_pretty(&record)?)?;
    }
    Ok(ScenarioRun { generation, report })
}

/// Scenario files (`*.json`) of a directory in name order.
pub fn scenario_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json") && p.file_name().is_some_and(|n| n.to_string_lossy().starts_with("scenario_")))
        .collect();
    files.sort();
    Ok(files)
}

fn mean_opt(xs: &[Option<f64>]) -> Option<f64> {
    let v: Vec<f64> = xs.iter().flatten().copied().collect();
    (v.len() == xs.len() && !v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Per-metric mean over `(id, report)` pairs. Reports are summed in id order,
/// so the result does not depend on the input order.
pub fn aggregate(reports: &[(String, EvalReport)]) -> Result<EvalReport> {
    if reports.is_empty() {
        return Err(Error::input("nothing to aggregate"));
    }
    let mut sorted: Vec<&(String, EvalReport)> = reports.iter().collect();
    sorted.sort_by(|a, b| a.0.cmp(&b.0));
    let n = sorted.len() as f64;
    let mean = |f: &dyn Fn(&EvalReport) -> f64| sorted.iter().map(|(_, r)| f(r)).sum::<f64>() / n;
    let opt = |f: &dyn Fn(&EvalReport) -> Option<f64>| mean_opt(&sorted.iter().map(|(_, r)| f(r)).collect::<Vec<_>>());
    Ok(EvalReport {
        traj_sim: mean(&|r| r.traj_sim),
        traj_err: mean(&|r| r.traj_err),
        goal_err: mean(&|r| r.goal_err),
        pene_value: mean(&|r| r.pene_value),
        pene_rate: mean(&|r| r.pene_rate),
        pene_mean: mean(&|r| r.pene_mean),
        pene_max: mean(&|r| r.pene_max),
        mpjpe: opt(&|r| r.mpjpe),
        diversity: opt(&|r| r.diversity),
        foot_skating: mean(&|r| r.foot_skating),
        fid_proxy: opt(&|r| r.fid_proxy),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResult {
    pub scenarios: usize,
    pub variants: BTreeMap<String, EvalReport>,
    pub per_scenario: BTreeMap<String, BTreeMap<String, EvalReport>>,
}

/// Runs every scenario of `scenario_dir` under `variants`.
pub fn run_benchmark(ctx: &RunContext, scenario_dir: &Path, variants: &[&str], out: Option<&Path>) -> Result<BenchmarkResult> {
    let files = scenario_files(scenario_dir)?;
    if files.is_empty() {
        return Err(Error::input(format!("no scenario files in {}", scenario_dir.display())));
    }
    let scenarios: Vec<Scenario> = files.iter().map(|f| Scenario::load(f)).collect::<Result<_>>()?;
    let mut per_scenario: BTreeMap<String, BTreeMap<String, EvalReport>> = BTreeMap::new();
    let mut by_variant = BTreeMap::new();
    for v in variants {
        let mut reports = Vec::with_capacity(scenarios.len());
        for s in &scenarios {
            let run = run_scenario(ctx, s, scenario_dir, v, out)?;
            log::info!("{} [{v}] goal_err {:.3} pene_rate {:.3}", s.id, run.report.goal_err, run.report.pene_rate);
            per_scenario.entry(s.id.clone()).or_default().insert(v.to_string(), run.report.clone());
            reports.push((s.id.clone(), run.report));
        }
        by_variant.insert(v.to_string(), aggregate(&reports)?);
    }
    let result = BenchmarkResult { scenarios: scenarios.len(), variants: by_variant, per_scenario };
    if let Some(out) = out {
        fs::create_dir_all(out)?;
        fs::write(out.join("benchmark.json"), serde_json::to_string_pretty(&result)?)?;
        fs::write(out.join("benchmark.txt"), format_table(&result))?;
    }
    Ok(result)
}

/// Aligned text table: one row per variant, one column per metric.
pub fn format_table(result: &BenchmarkResult) -> String {
    let cols: [(&str, fn(&EvalReport) -> f64); 8] = [
        ("traj_sim", |r| r.traj_sim),
        ("traj_err", |r| r.traj_err),
        ("goal_err", |r| r.goal_err),
        ("pene_value", |r| r.pene_value),
        ("pene_rate", |r| r.pene_rate),
        ("pene_mean", |r| r.pene_mean),
        ("pene_max", |r| r.pene_max),
        ("foot_skate", |r| r.foot_skating),
    ];
    let mut s = String::new();
    let _ = write!(s, "{:<14}", "variant");
    for (name, _) in &cols {
        let _ = write!(s, " {name:>11}");
    }
    s.push('\n');
    for v in VARIANTS.iter().filter(|v| result.variants.contains_key(**v)) {
        let r = &result.variants[*v];
        let _ = write!(s, "{v:<14}");
        for (_, f) in &cols {
            let _ = write!(s, " {:>11.4}", f(r));
        }
        s.push('\n');
    }
    let _ = writeln!(s, "({} scenarios)", result.scenarios);
    s
}

/// Everything a training run needs besides the data.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub memory: MemoryConfig,
    /// Seed of the parameter initialization.
    pub init_seed: u64,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.memory.validate()?;
        NoiseSchedule::from_config(&self.model.schedule)?;
        Ok(())
    }
}

/// Trains on the dataset at `dataset_dir` and writes `model.ckpt`,
/// `memory.mem`, `losses.json` and `config.json` to `out`.
pub fn train_pipeline(dataset_dir: &Path, cfg: &PipelineConfig, out: &Path) -> Result<(Models, MemoryStore, Vec<LossRecord>)> {
    cfg.validate()?;
    let samples = load_samples(dataset_dir, false)?;
    log::info!("{} training windows", samples.len());
    let mut models = Models::new(cfg.model, cfg.init_seed)?;
    let mut memory = MemoryStore::new(cfg.memory)?;
    let losses = train(&mut models, &samples, &cfg.train, &mut memory)?;
    fs::create_dir_all(out)?;
    models.save(&out.join("model.ckpt"))?;
    memory.save(&out.join("memory.mem"))?;
    fs::write(out.join("losses.json"), serde_json::to_string_pretty(&losses)?)?;
    fs::write(out.join("config.json"), serde_json::to_string_pretty(cfg)?)?;
    Ok((models, memory, losses))
}
