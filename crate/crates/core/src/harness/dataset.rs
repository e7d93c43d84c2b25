//! Procedural toy dataset: box rooms, oracle-driven ground-truth motions,
//! templated prompts and a manifest tying them together.
//!
//! Layout of a dataset directory:
//!
//! ```text
//! manifest.json
//! scenes/scene_000.json   box scene
//! scenes/scene_000.grid   its voxelization
//! scenes/clip_0003_change1.json / .grid   moved-box states of dynamic clips
//! motions/clip_0003.jsonl          one frame per line
//! motions/clip_0003.traj.json      ground-truth root trajectory
//! ```

use std::fs;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{self, Vec2, Vec3};
use crate::hsi_diffusion::train::SegmentSample;
use crate::metrics::penetration_counts;
use crate::navigation::{nearest_free_cell, oracle_navigator, plan_global, planning_grid, point_at_arc, OracleConfig, WALK_SPEED};
use crate::skeleton::{animate_track, Motion, TrackFrame, FPS, SEGMENT_FRAMES};
use crate::voxel::{BoxScene, OccupancyGrid, SceneTimeline, TaggedBox};

pub const ROOM_SIZE: f64 = 5.0;
pub const ROOM_HEIGHT: f64 = 2.0;
pub const SCENE_VOXEL: f64 = 0.05;
/// Frames spent on the closing sit / reach / drink action.
pub const ACTION_FRAMES: usize = 24;
/// Frames held still at the end of every clip.
pub const HOLD_FRAMES: usize = 8;
/// Gap between the seat top and the seated pelvis.
pub const SEAT_OFFSET: f64 = 0.01;
/// Frames between consecutive training windows (48 minus the two stitched frames).
pub const WINDOW_STRIDE: usize = SEGMENT_FRAMES - 2;
pub const SEAT_TAG: &str = "seat";
pub const MOVABLE_TAG: &str = "movable";

/// Frames at which a training clip's obstacle may move.
pub const TRAIN_CHANGE_FRAMES: std::ops::RangeInclusive<usize> = 8..=100;
pub(crate) const MAX_ORACLE_FRAMES: usize = 600;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyDatasetSpec {
    pub num_scenes: usize,
    /// Inclusive range of boxes per scene, one of which is a seat.
    pub boxes_per_scene: (usize, usize),
    pub actions: Vec<String>,
    pub clips_per_scene: usize,
    /// Longest accepted clip, in frames.
    pub max_clip_frames: usize,
    /// Probability that a clip has a box moved onto its path mid-walk.
    pub dynamic_fraction: f64,
    /// Inflation radius used by the ground-truth planner.
    pub clearance_radius: f64,
    /// Every n-th clip is held out for validation.
    pub validation_every: usize,
    pub seed: u64,
}

impl Default for ToyDatasetSpec {
    fn default() -> Self {
        ToyDatasetSpec {
            num_scenes: 32,
            boxes_per_scene: (3, 5),
            actions: ["walk", "sit", "reach", "drink"].map(String::from).to_vec(),
            clips_per_scene: 6,
            max_clip_frames: 4 * WINDOW_STRIDE + 2,
            dynamic_fraction: 0.5,
            clearance_radius: 0.35,
            validation_every: 10,
            seed: 7,
        }
    }
}

pub const SUPPORTED_ACTIONS: [&str; 4] = ["walk", "sit", "reach", "drink"];

impl ToyDatasetSpec {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.boxes_per_scene;
        if self.num_scenes == 0 || lo == 0 || lo > hi || self.clips_per_scene == 0 || self.actions.is_empty() || self.validation_every == 0 {
            return Err(Error::config("dataset counts must be at least 1 and box range ordered"));
        }
        if let Some(a) = self.actions.iter().find(|a| !SUPPORTED_ACTIONS.contains(&a.as_str())) {
            return Err(Error::config(format!("unsupported action {a:?}")));
        }
        if self.max_clip_frames < SEGMENT_FRAMES || !(0.0..=1.0).contains(&self.dynamic_fraction) || !(self.clearance_radius >= 0.0) {
            return Err(Error::config("invalid clip length, dynamic fraction or clearance"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub id: String,
    pub boxes: String,
    pub grid: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangeRecord {
    pub frame: usize,
    pub boxes: String,
    pub grid: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipRecord {
    pub id: String,
    pub scene: String,
    pub prompt: String,
    pub verb: String,
    pub start: Vec3,
    pub goal: Vec3,
    pub frames: usize,
    pub changes: Vec<ChangeRecord>,
    pub motion: String,
    pub trajectory: String,
    pub validation: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: ToyDatasetSpec,
    pub scenes: Vec<SceneRecord>,
    pub clips: Vec<ClipRecord>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join("manifest.json"))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn scene(&self, id: &str) -> Result<&SceneRecord> {
        self.scenes.iter().find(|s| s.id == id).ok_or_else(|| Error::format(format!("manifest has no scene {id}")))
    }
}

/// Templated prompt for an action.
pub fn prompt_for(action: &str, rng: &mut impl Rng) -> String {
    fn pick(rng: &mut impl Rng, xs: &[&str]) -> String {
        xs.choose(rng).expect("non-empty").to_string()
    }
    match action {
        "walk" => {
            let t = pick(rng, &["walk to the {}", "walk over to the {}", "walk across the room to the {}", "walking toward the {}"]);
            t.replace("{}", &pick(rng, &["door", "window", "corner", "lamp", "shelf", "plant"]))
        }
        "sit" => {
            let t = pick(rng, &["sit on the {}", "sit down on the {}", "go and sit on the {}"]);
            t.replace("{}", &pick(rng, &["chair", "stool", "bench", "box"]))
        }
        "reach" => {
            let t = pick(rng, &["reach for the {}", "reach up to the {}", "reach out for the {}"]);
            t.replace("{}", &pick(rng, &["cup", "book", "lamp", "shelf"]))
        }
        _ => {
            let t = pick(rng, &["drink from the {}", "drink water from the {}", "drink from a {}"]);
            t.replace("{}", &pick(rng, &["cup", "glass", "bottle", "mug"]))
        }
    }
}

fn snap(v: f64) -> f64 {
    (v / SCENE_VOXEL).round() * SCENE_VOXEL
}

fn footprint_gap(a: &TaggedBox, b: &TaggedBox) -> f64 {
    let dx = (a.min[0] - b.max[0]).max(b.min[0] - a.max[0]).max(0.0);
    let dz = (a.min[2] - b.max[2]).max(b.min[2] - a.max[2]).max(0.0);
    dx.hypot(dz)
}

/// Horizontal distance from `p` to a box footprint (0 inside).
pub fn footprint_distance(b: &TaggedBox, p: Vec3) -> f64 {
    let dx = (b.min[0] - p[0]).max(p[0] - b.max[0]).max(0.0);
    let dz = (b.min[2] - p[2]).max(p[2] - b.max[2]).max(0.0);
    dx.hypot(dz)
}

pub(crate) fn box_at(center: Vec2, half: Vec2, height: f64, tag: &str) -> TaggedBox {
    TaggedBox {
        min: [snap(center[0] - half[0]), 0.0, snap(center[1] - half[1])],
        max: [snap(center[0] + half[0]), snap(height), snap(center[1] + half[1])],
        tag: tag.to_string(),
    }
}

/// Random room with one seat and movable obstacles.
pub fn random_scene(rng: &mut impl Rng, boxes: (usize, usize)) -> Result<BoxScene> {
    let n = rng.random_range(boxes.0..=boxes.1);
    let mut placed: Vec<TaggedBox> = Vec::with_capacity(n);
    let mut attempts = 0;
    while placed.len() < n && attempts < 500 {
        attempts += 1;
        let seat = placed.is_empty();
        let (half, height, tag) = if seat {
            let h = rng.random_range(0.2..=0.25);
            ([h, h], rng.random_range(0.42..=0.5), SEAT_TAG)
        } else {
            ([rng.random_range(0.15..=0.45), rng.random_range(0.15..=0.45)], rng.random_range(0.6..=1.1), MOVABLE_TAG)
        };
        let c = [rng.random_range(0.8..ROOM_SIZE - 0.8), rng.random_range(0.8..ROOM_SIZE - 0.8)];
        let b = box_at(c, half, height, tag);
        if placed.iter().all(|o| footprint_gap(o, &b) >= 0.9) {
            placed.push(b);
        }
    }
    let dims = [(ROOM_SIZE / SCENE_VOXEL).round() as usize, (ROOM_SIZE / SCENE_VOXEL).round() as usize, (ROOM_HEIGHT / SCENE_VOXEL).round() as usize];
    Ok(BoxScene { voxel_size: SCENE_VOXEL, origin: [0.0; 3], dims, boxes: placed })
}

/// A synthesized clip before it is written out.
#[derive(Debug, Clone)]
pub struct ClipData {
    pub prompt: String,
    pub verb: String,
    pub start: Vec3,
    pub goal: Vec3,
    pub changes: Vec<(usize, BoxScene)>,
    pub motion: Motion,
    pub trajectory: Vec<Vec3>,
}

pub(crate) fn random_free_point(rng: &mut impl Rng, nav: &crate::voxel::NavGrid2D) -> Option<Vec3> {
    for _ in 0..200 {
        let p = [rng.random_range(0.5..ROOM_SIZE - 0.5), 0.0, rng.random_range(0.5..ROOM_SIZE - 0.5)];
        if !nav.blocked_at(p[0], p[2]) {
            let (ix, iz) = nav.cell_of(p[0], p[2])?;
            let c = nav.center(ix, iz);
            return Some([c[0], 0.0, c[1]]);
        }
    }
    None
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

/// Tries to move one movable box onto the oracle path ahead of the walker.
pub(crate) fn displace_onto_path(
    rng: &mut impl Rng,
    scene: &BoxScene,
    path: &[Vec2],
    protect: &[Vec3],
    clearance: f64,
    frames: std::ops::RangeInclusive<usize>,
) -> Option<(usize, BoxScene)> {
    let length = crate::navigation::polyline_length(path);
    let step = WALK_SPEED / FPS;
    let movable: Vec<usize> = (0..scene.boxes.len()).filter(|&i| scene.boxes[i].tag == MOVABLE_TAG).collect();
    if movable.is_empty() {
        return None;
    }
    for _ in 0..40 {
        let change = rng.random_range(frames.clone());
        let at = (change as f64 * step).min(length);
        let ahead = at + rng.random_range(0.8..1.4);
        if ahead > length - 0.8 {
            continue;
        }
        let idx = *movable.choose(rng)?;
        let old = &scene.boxes[idx];
        let half = [(old.max[0] - old.min[0]) / 2.0, (old.max[2] - old.min[2]) / 2.0];
        let c = point_at_arc(path, ahead);
        let jitter = [rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)];
        let moved = box_at([c[0] + jitter[0], c[1] + jitter[1]], half, old.max[1], MOVABLE_TAG);
        let walker = point_at_arc(path, at);
        let in_room = moved.min[0] >= 0.2 && moved.min[2] >= 0.2 && moved.max[0] <= ROOM_SIZE - 0.2 && moved.max[2] <= ROOM_SIZE - 0.2;
        let clear_of_walker = footprint_distance(&moved, [walker[0], 0.0, walker[1]]) >= 0.6;
        let clear_of_points = protect.iter().all(|p| footprint_distance(&moved, *p) >= clearance + 0.15);
        let clear_of_boxes = scene.boxes.iter().enumerate().all(|(j, o)| j == idx || footprint_gap(o, &moved) >= 0.5);
        if in_room && clear_of_walker && clear_of_points && clear_of_boxes {
            let mut next = scene.clone();
            next.boxes[idx] = moved;
            return Some((change, next));
        }
    }
    None
}

/// One ground-truth clip in `scene`, or `None` when sampling fails.
pub fn synthesize_clip(rng: &mut impl Rng, scene: &BoxScene, action: &str, spec: &ToyDatasetSpec) -> Result<Option<ClipData>> {
    let grid0 = scene.voxelize()?;
    let nav0 = planning_grid(&grid0, spec.clearance_radius)?;
    let Some(start) = random_free_point(rng, &nav0) else { return Ok(None) };
    let seat = scene.boxes.iter().find(|b| b.tag == SEAT_TAG);
    let (goal, target, seat_info) = if action == "sit" {
        let Some(seat) = seat else { return Ok(None) };
        let c = [(seat.min[0] + seat.max[0]) / 2.0, (seat.min[2] + seat.max[2]) / 2.0];
        let Some((x, z)) = nearest_free_cell(&nav0, c) else { return Ok(None) };
        let t = nav0.center(x, z);
        ([c[0], seat.max[1], c[1]], [t[0], 0.0, t[1]], Some((c, seat.max[1])))
    } else {
        let Some(g) = random_free_point(rng, &nav0) else { return Ok(None) };
        (g, g, None)
    };
    let d = geom::dist_xz(start, target);
    if !(1.2..=4.0).contains(&d) {
        return Ok(None);
    }
    let Ok(plan) = plan_global(&nav0, [start[0], start[2]], [target[0], target[2]]) else { return Ok(None) };

    let mut changes = Vec::new();
    let mut states = vec![(0, grid0.clone())];
    if rng.random_bool(spec.dynamic_fraction) {
        if let Some((frame, moved)) = displace_onto_path(rng, scene, &plan.world_points, &[start, target, goal], spec.clearance_radius, TRAIN_CHANGE_FRAMES) {
            states.push((frame, moved.voxelize()?));
            changes.push((frame, moved));
        }
    }
    let timeline = SceneTimeline::new(states)?;
    let cfg = OracleConfig { speed: WALK_SPEED, inflation_radius: spec.clearance_radius };
    let Ok(oracle) = oracle_navigator(&timeline, start, target, MAX_ORACLE_FRAMES, 0, &cfg) else { return Ok(None) };
    let roots = oracle.positions();
    let Some(arrival) = roots.iter().position(|p| geom::dist_xz(*p, target) < 1e-9) else { return Ok(None) };
    if changes.first().is_some_and(|(f, _)| *f + 10 >= arrival) {
        return Ok(None);
    }
    let action_frames = if action == "walk" { 0 } else { ACTION_FRAMES };
    let needed = arrival + 1 + action_frames + HOLD_FRAMES;
    let k = (needed - 2).div_ceil(WINDOW_STRIDE);
    let total = k * WINDOW_STRIDE + 2;
    if total > spec.max_clip_frames {
        return Ok(None);
    }

    let mut track = Vec::with_capacity(total);
    let mut trajectory = Vec::with_capacity(total);
    for (f, root) in roots.iter().take(total).enumerate() {
        let u = smoothstep((f as f64 - arrival as f64) / ACTION_FRAMES as f64);
        let mut t = TrackFrame::walking(*root);
        let mut traj = *root;
        match (action, seat_info) {
            ("sit", Some((c, top))) => {
                let seat_ground = [c[0], 0.0, c[1]];
                t.root = geom::lerp(*root, seat_ground, u);
                t.sit = u;
                t.seat_height = top + SEAT_OFFSET;
                if f >= arrival {
                    t.face = Some(geom::yaw_of(target[0] - c[0], target[2] - c[1]));
                }
                traj = [t.root[0], u * top, t.root[2]];
            }
            ("reach", _) => t.arm_raise = u,
            ("drink", _) => t.arm_raise = 0.75 * u,
            _ => {}
        }
        track.push(t);
        trajectory.push(traj);
    }
    let first = plan.world_points.get(1).copied().unwrap_or([target[0], target[2]]);
    let yaw0 = geom::yaw_of(first[0] - start[0], first[1] - start[2]);
    let motion = Motion::from_frames(&animate_track(&track, yaw0))?;

    // Walking portions must be collision-free; a seated pelvis may touch its seat.
    let check_until = if action == "sit" { arrival } else { total };
    let counts = penetration_counts(&motion.slice_frames(0, check_until), &timeline);
    if counts.iter().any(|(hits, _)| *hits > 0) {
        return Ok(None);
    }
    let prompt = prompt_for(action, rng);
    Ok(Some(ClipData { prompt, verb: action.to_string(), start, goal, changes, motion, trajectory }))
}

pub(crate) fn write_scene(dir: &Path, stem: &str, scene: &BoxScene) -> Result<(String, String)> {
    let json = format!("scenes/{stem}.json");
    let grid = format!("scenes/{stem}.grid");
    fs::write(dir.join(&json), scene.to_json()?)?;
    scene.voxelize()?.save(&dir.join(&grid))?;
    Ok((json, grid))
}

/// Writes a full toy dataset to `out` and returns its manifest.
pub fn generate_toy_dataset(spec: &ToyDatasetSpec, out: &Path) -> Result<Manifest> {
    spec.validate()?;
    fs::create_dir_all(out.join("scenes"))?;
    fs::create_dir_all(out.join("motions"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut scenes = Vec::with_capacity(spec.num_scenes);
    let mut clips = Vec::new();
    for s in 0..spec.num_scenes {
        let scene = random_scene(&mut rng, spec.boxes_per_scene)?;
        let id = format!("scene_{s:03}");
        let (boxes, grid) = write_scene(out, &id, &scene)?;
        scenes.push(SceneRecord { id: id.clone(), boxes, grid });
        for c in 0..spec.clips_per_scene {
            let action = &spec.actions[c % spec.actions.len()];
            let mut clip = None;
            for _ in 0..30 {
                if let Some(found) = synthesize_clip(&mut rng, &scene, action, spec)? {
                    clip = Some(found);
                    break;
                }
            }
            let Some(clip) = clip else {
                log::warn!("{id}: no valid {action} clip found");
                continue;
            };
            let n = clips.len();
            let cid = format!("clip_{n:04}");
            let mut change_records = Vec::new();
            for (i, (frame, moved)) in clip.changes.iter().enumerate() {
                let (boxes, grid) = write_scene(out, &format!("{cid}_change{}", i + 1), moved)?;
                change_records.push(ChangeRecord { frame: *frame, boxes, grid });
            }
            let motion = format!("motions/{cid}.jsonl");
            let trajectory = format!("motions/{cid}.traj.json");
            clip.motion.write_jsonl(std::io::BufWriter::new(fs::File::create(out.join(&motion))?))?;
            fs::write(out.join(&trajectory), serde_json::to_string(&clip.trajectory)?)?;
            clips.push(ClipRecord {
                id: cid,
                scene: id.clone(),
                prompt: clip.prompt,
                verb: clip.verb,
                start: clip.start,
                goal: clip.goal,
                frames: clip.motion.frames,
                changes: change_records,
                motion,
                trajectory,
                validation: n % spec.validation_every == spec.validation_every - 1,
            });
        }
    }
    let manifest = Manifest { spec: spec.clone(), scenes, clips };
    fs::write(out.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Timeline of a clip's scene states.
pub fn clip_timeline(dir: &Path, manifest: &Manifest, clip: &ClipRecord) -> Result<SceneTimeline> {
    let scene = manifest.scene(&clip.scene)?;
    let mut states = vec![(0, OccupancyGrid::load(&dir.join(&scene.grid))?)];
    for c in &clip.changes {
        states.push((c.frame, OccupancyGrid::load(&dir.join(&c.grid))?));
    }
    SceneTimeline::new(states)
}

pub fn load_clip(dir: &Path, clip: &ClipRecord) -> Result<(Motion, Vec<Vec3>)> {
    let motion = Motion::read_jsonl(std::io::BufReader::new(fs::File::open(dir.join(&clip.motion))?))?;
    let traj: Vec<Vec3> = serde_json::from_str(&fs::read_to_string(dir.join(&clip.trajectory))?)?;
    if traj.len() != motion.frames {
        return Err(Error::format(format!("{}: trajectory and motion lengths differ", clip.id)));
    }
    Ok((motion, traj))
}

/// Training windows of one clip: frames `46s .. 46s + 48`, goal at the last frame.
pub fn clip_samples(motion: &Motion, traj: &[Vec3], prompt: &str, timeline: &SceneTimeline) -> Result<Vec<SegmentSample>> {
    let mut out = Vec::new();
    let mut s = 0;
    while s + SEGMENT_FRAMES <= motion.frames {
        let window = motion.slice_frames(s, s + SEGMENT_FRAMES);
        let t = &traj[s..s + SEGMENT_FRAMES];
        out.push(SegmentSample::from_window(prompt, &window, t, t[SEGMENT_FRAMES - 1], timeline, s)?);
        s += WINDOW_STRIDE;
    }
    Ok(out)
}

/// Training (or validation) samples of a dataset directory.
pub fn load_samples(dir: &Path, validation: bool) -> Result<Vec<SegmentSample>> {
    let manifest = Manifest::load(dir)?;
    let mut out = Vec::new();
    for clip in manifest.clips.iter().filter(|c| c.validation == validation) {
        let timeline = clip_timeline(dir, &manifest, clip)?;
        let (motion, traj) = load_clip(dir, clip)?;
        out.extend(clip_samples(&motion, &traj, &clip.prompt, &timeline)?);
    }
    Ok(out)
}
