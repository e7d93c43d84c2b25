//! Full-sequence generation: plan, split into segments, and for each segment
//! retrieve a prime, roll out the navigator, and sample the denoiser with the
//! previous two frames stitched in.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::train::{motion_to_local, motion_to_world, segment_canon};
use super::{sample_segment, CondBatch, ConditionWeights, X0Predictor, FRAME_DIM, STITCH_FRAMES, TRAJ_DIM};
use crate::encoders::{embed_text, PATCH_COUNT, TEXT_DIM};
use crate::error::{Error, Result};
use crate::experience_memory::{gaussian_prime, MemoryStore, PrimeSource};
use crate::geom::{self, Vec3};
use crate::model::Models;
use crate::navigation::{
    is_seated_verb, local_patches, nearest_free_cell, plan_global, planning_grid, rollout_in_frame, segment_count, select_keypoints,
    support_height_near, RolloutDiagnostics, Waypoint, WALK_SPEED,
};
use crate::nn::{Graph, Mat};
use crate::skeleton::{lead_in, Motion, NUM_JOINTS, PELVIS, SEGMENT_FRAMES};
use crate::voxel::{SceneTimeline, DEFAULT_INFLATION_RADIUS};

/// Extra path length reserved for the closing action of non-walking prompts
/// (24 frames at walking speed).
pub const ACTION_MARGIN: f64 = 0.96;
/// Search radius for the seat under a seated goal.
pub const SEAT_SEARCH_RADIUS: f64 = 0.15;
/// Highest surface considered a seat.
pub const SEAT_MAX_HEIGHT: f64 = 1.2;

/// Denoiser bound to one segment's conditions.
pub struct ModelPredictor<'a> {
    pub models: &'a Models,
    pub cond: CondBatch,
}

impl X0Predictor for ModelPredictor<'_> {
    fn predict_x0(&self, x_t: &[f64], t: usize) -> Result<Vec<f64>> {
        let m = &self.models;
        let x = Mat::from_shape_vec((x_t.len() / FRAME_DIM, FRAME_DIM), x_t.to_vec()).map_err(|_| Error::input("segment size is not a whole number of frames"))?;
        let mut g = Graph::new(&m.store);
        let y = m.den.forward(&mut g, &m.enc, &m.adapter, &x, &[t], &self.cond);
        Ok(g.value(y).iter().copied().collect())
    }
}

/// What to generate.
#[derive(Debug, Clone, Copy)]
pub struct GenerationTask<'a> {
    pub timeline: &'a SceneTimeline,
    pub prompt: &'a str,
    pub start: Vec3,
    pub goal: Vec3,
}

/// Component switches for ablations and planning parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerateOptions {
    /// Off: straight-line trajectory between keypoints with confidence 1.
    pub navigation: bool,
    /// Off: every prime is fresh Gaussian noise.
    pub memory: bool,
    /// Off: condition weights fixed at 0.25.
    pub adapter: bool,
    pub inflation_radius: f64,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        GenerateOptions { navigation: true, memory: true, adapter: true, inflation_radius: DEFAULT_INFLATION_RADIUS }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentDiagnostics {
    pub index: usize,
    pub frame_offset: usize,
    pub keypoint: Vec3,
    pub prime: PrimeSource,
    pub weights: ConditionWeights,
    /// World-frame trajectory condition.
    pub trajectory: Vec<Waypoint>,
    pub rollout: Option<RolloutDiagnostics>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub motion: Motion,
    pub keypoints: Vec<Vec3>,
    pub plan_length: f64,
    pub segments: Vec<SegmentDiagnostics>,
}

impl Generation {
    /// World trajectory conditions of all segments, concatenated.
    pub fn trajectory(&self) -> Vec<Vec3> {
        self.segments.iter().flat_map(|s| s.trajectory.iter().map(|w| w.position)).collect()
    }
}

fn in_segment<T>(segment: usize, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Segment { segment, source: Box::new(e) })
}

/// Keypoints for a task: A* on the initial scene, `k` arc-length keypoints,
/// and the final keypoint moved onto the goal (raised to the seat for seated
/// prompts). Returns the keypoints, the path length and the first path
/// point after the start.
pub fn plan_keypoints(task: &GenerationTask, verb: &str, inflation_radius: f64) -> Result<(Vec<Vec3>, f64, Vec3)> {
    let grid = task.timeline.grid_at(0);
    let nav = planning_grid(grid, inflation_radius)?;
    let start = [task.start[0], task.start[2]];
    let mut goal = [task.goal[0], task.goal[2]];
    let seated = is_seated_verb(verb);
    if seated && nav.cell_of(goal[0], goal[1]).is_some_and(|(x, z)| nav.is_blocked(x, z)) {
        let (x, z) = nearest_free_cell(&nav, goal).ok_or(Error::NoPath)?;
        goal = nav.center(x, z);
    }
    let plan = plan_global(&nav, start, goal)?;
    let margin = if verb == "walk" { 0.0 } else { ACTION_MARGIN };
    let k = segment_count(plan.length() + margin);
    let mut keys = select_keypoints(&plan, k)?;
    let y = if seated { support_height_near(grid, task.goal[0], task.goal[2], SEAT_SEARCH_RADIUS, SEAT_MAX_HEIGHT) } else { 0.0 };
    keys[k - 1] = [task.goal[0], y, task.goal[2]];
    let next = plan.world_points.get(1).copied().unwrap_or(goal);
    Ok((keys, plan.length(), [next[0], 0.0, next[1]]))
}

/// Generates `k·48` frames for `task`, where `k` is the planned segment count.
pub fn generate_sequence(models: &Models, memory: &MemoryStore, task: &GenerationTask, opts: &GenerateOptions, seed: u64) -> Result<Generation> {
    let text = embed_text(task.prompt)?;
    let (keypoints, plan_length, first_point) = in_segment(0, plan_keypoints(task, &text.verb, opts.inflation_radius))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut prev = lead_in(task.start, first_point, WALK_SPEED);
    let mut motion = Motion::zeros(0, NUM_JOINTS);
    let mut segments = Vec::with_capacity(keypoints.len());
    for (s, &key) in keypoints.iter().enumerate() {
        let seg_seed: u64 = rng.random();
        let frame_offset = s * SEGMENT_FRAMES;
        let (world, diag) = in_segment(s, generate_segment(models, memory, task, &text, &prev, key, frame_offset, opts, seg_seed))?;
        let mut diag = diag;
        diag.index = s;
        prev = vec![world.frame(SEGMENT_FRAMES - 2), world.frame(SEGMENT_FRAMES - 1)];
        in_segment(s, motion.append(&world))?;
        segments.push(diag);
    }
    Ok(Generation { motion, keypoints, plan_length, segments })
}

#[allow(clippy::too_many_arguments)]
fn generate_segment(
    models: &Models,
    memory: &MemoryStore,
    task: &GenerationTask,
    text: &crate::encoders::TextEmbedding,
    prev: &[Vec<Vec3>],
    key: Vec3,
    frame_offset: usize,
    opts: &GenerateOptions,
    seed: u64,
) -> Result<(Motion, SegmentDiagnostics)> {
    let canon = segment_canon(&prev[0], key);
    let root = prev[0][PELVIS];
    let start = [root[0], 0.0, root[2]];
    let grid = task.timeline.grid_at(frame_offset);
    let patches = local_patches(grid, &canon, [0.0; 3], 0.0);
    let feature = models.enc.encode_scene_patches(&models.store, &patches);

    let (prime, source) = if opts.memory {
        let (m, src) = memory.retrieve(task.prompt, &feature, seed)?;
        (m.data, src)
    } else {
        (gaussian_prime(seed).data, PrimeSource::Gaussian)
    };

    let (trajectory, rollout) = if opts.navigation {
        let (t, d) = rollout_in_frame(&models.nav, &models.enc, &models.store, &canon, start, key, task.timeline, text, SEGMENT_FRAMES, frame_offset)?;
        (t.waypoints, Some(d))
    } else {
        let last = (SEGMENT_FRAMES - 1) as f64;
        let w = (0..SEGMENT_FRAMES).map(|i| Waypoint { position: geom::lerp(start, key, i as f64 / last), confidence: 1.0 }).collect();
        (w, None)
    };

    let mut cond = CondBatch {
        patches: Mat::from_shape_vec((1, PATCH_COUNT), patches).expect("patch row"),
        traj: Mat::zeros((1, TRAJ_DIM)),
        text: Mat::from_shape_vec((1, TEXT_DIM), text.vector.clone()).expect("text row"),
        goal: Mat::from_shape_vec((1, 3), canon.to_local(key).to_vec()).expect("goal row"),
        fixed_weights: (!opts.adapter).then_some(ConditionWeights::UNIFORM),
    };
    for (i, w) in trajectory.iter().enumerate() {
        let p = canon.to_local(w.position);
        for c in 0..3 {
            cond.traj[[0, 3 * i + c]] = p[c] * w.confidence;
        }
    }
    let weights = match cond.fixed_weights {
        Some(w) => w,
        None => models.adapter.weights(&models.store, &text.vector),
    };

    let prev_motion = Motion::from_frames(prev)?;
    let prev_local = models.stats.normalize(&motion_to_local(&prev_motion, &canon));
    debug_assert_eq!(prev_local.len(), STITCH_FRAMES * FRAME_DIM);
    let predictor = ModelPredictor { models, cond };
    let x0 = sample_segment(&predictor, &models.schedule, &prime, Some(&prev_local), seed)?;
    let mut world = motion_to_world(&models.stats.denormalize(&x0), &canon)?;
    for f in 0..STITCH_FRAMES {
        world.frame_slice_mut(f).copy_from_slice(prev_motion.frame_slice(f));
    }
    if !world.is_finite() {
        return Err(Error::Numeric("generated motion is not finite".into()));
    }
    let diag = SegmentDiagnostics { index: 0, frame_offset, keypoint: key, prime: source, weights, trajectory, rollout };
    Ok((world, diag))
}
