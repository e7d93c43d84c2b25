//! Dynamic evaluation scenarios: a box moves onto the planned route while the
//! character walks.

use std::fs;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::dataset::{displace_onto_path, prompt_for, random_free_point, write_scene, Manifest, MAX_ORACLE_FRAMES, MOVABLE_TAG};
use super::{SceneChange, Scenario};
use crate::error::{Error, Result};
use crate::geom;
use crate::navigation::{oracle_navigator, plan_global, planning_grid, OracleConfig, WALK_SPEED};
use crate::voxel::{BoxScene, SceneTimeline, DEFAULT_INFLATION_RADIUS};

pub const DEFAULT_SCENARIO_COUNT: usize = 70;
/// Actions used for scenario prompts (no seated goals).
pub const SCENARIO_ACTIONS: [&str; 3] = ["walk", "reach", "drink"];
/// Frames at which the scenario obstacle moves.
pub const CHANGE_FRAMES: std::ops::RangeInclusive<usize> = 40..=100;
const ATTEMPTS_PER_SCENARIO: usize = 200;

/// Builds `n` dynamic scenarios from the scenes of the dataset at `dataset_dir`
/// and writes them to `out`. Scenes without a movable box are skipped.
pub fn make_dyn_scenarios(dataset_dir: &Path, n: usize, seed: u64, out: &Path) -> Result<Vec<Scenario>> {
    let manifest = Manifest::load(dataset_dir)?;
    let mut scenes = Vec::new();
    for rec in &manifest.scenes {
        let scene = BoxScene::from_json(&fs::read_to_string(dataset_dir.join(&rec.boxes))?)?;
        if scene.boxes.iter().any(|b| b.tag == MOVABLE_TAG) {
            scenes.push((rec.id.clone(), scene));
        } else {
            log::warn!("{}: no movable box, skipped", rec.id);
        }
    }
    if scenes.is_empty() {
        return Err(Error::input("no scene with a movable box"));
    }
    fs::create_dir_all(out.join("scenes"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut made = Vec::with_capacity(n);
    let mut failures = 0;
    while made.len() < n {
        let (scene_id, scene) = scenes.choose(&mut rng).expect("non-empty");
        let id = format!("scenario_{:03}", made.len());
        match candidate(&mut rng, scene)? {
            Some((start, goal, change_frame, moved)) => {
                let action = SCENARIO_ACTIONS[made.len() % SCENARIO_ACTIONS.len()];
                let (_, begin) = write_scene(out, &format!("{id}_begin"), scene)?;
                let (_, changed) = write_scene(out, &format!("{id}_change1"), &moved)?;
                let scenario = Scenario {
                    id: id.clone(),
                    prompt: prompt_for(action, &mut rng),
                    start,
                    goal,
                    scene_begin: begin,
                    scene_changes: vec![SceneChange { frame: change_frame, grid: changed }],
                };
                fs::write(out.join(format!("{id}.json")), serde_json::to_string_pretty(&scenario)?)?;
                log::debug!("{id} from {scene_id}: change at frame {change_frame}");
                made.push(scenario);
            }
            None => {
                failures += 1;
                if failures > ATTEMPTS_PER_SCENARIO * n.max(1) {
                    return Err(Error::input("could not place dynamic obstacles in the dataset scenes"));
                }
            }
        }
    }
    Ok(made)
}

type Candidate = (geom::Vec3, geom::Vec3, usize, BoxScene);

fn candidate(rng: &mut ChaCha8Rng, scene: &BoxScene) -> Result<Option<Candidate>> {
    let grid0 = scene.voxelize()?;
    let nav0 = planning_grid(&grid0, DEFAULT_INFLATION_RADIUS)?;
    let (Some(start), Some(goal)) = (random_free_point(rng, &nav0), random_free_point(rng, &nav0)) else { return Ok(None) };
    if !(2.0..=4.0).contains(&geom::dist_xz(start, goal)) {
        return Ok(None);
    }
    let Ok(plan) = plan_global(&nav0, [start[0], start[2]], [goal[0], goal[2]]) else { return Ok(None) };
    let Some((frame, moved)) = displace_onto_path(rng, scene, &plan.world_points, &[start, goal], DEFAULT_INFLATION_RADIUS, CHANGE_FRAMES) else {
        return Ok(None);
    };
    let grid1 = moved.voxelize()?;
    let nav1 = planning_grid(&grid1, DEFAULT_INFLATION_RADIUS)?;
    if nav1.blocked_at(start[0], start[2]) || nav1.blocked_at(goal[0], goal[2]) || plan_global(&nav1, [start[0], start[2]], [goal[0], goal[2]]).is_err() {
        return Ok(None);
    }
    let timeline = SceneTimeline::new(vec![(0, grid0), (frame, grid1)])?;
    let cfg = OracleConfig { speed: WALK_SPEED, inflation_radius: DEFAULT_INFLATION_RADIUS };
    let Ok(oracle) = oracle_navigator(&timeline, start, goal, MAX_ORACLE_FRAMES, 0, &cfg) else { return Ok(None) };
    if !oracle.positions().iter().any(|p| geom::dist_xz(*p, goal) < 1e-9) {
        return Ok(None);
    }
    Ok(Some((start, goal, frame, moved)))
}
