//! Joint training of the navigator and the denoiser.
//!
//! Each optimizer step runs the navigator with teacher forcing over the
//! ground-truth trajectories of a batch, then the denoiser on noised clean
//! segments. The trajectory condition is the ground-truth trajectory scaled
//! by the navigator's (detached) confidence. The objective is
//! `L_motion + λ_t·L_traj + λ_c·L_conf`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{q_sample, standard_normal, CondBatch, MotionStats, FRAME_DIM, SEGMENT_LEN, TRAJ_DIM};
use crate::encoders::{TextEmbedding, PATCH_COUNT, TEXT_DIM};
use crate::error::{Error, Result};
use crate::experience_memory::{MemoryEntry, MemoryStore};
use crate::geom::{self, Canon, Vec3};
use crate::model::Models;
use crate::navigation::{apply_displacement, batch_from_steps, local_patches, teacher_steps, NavBatch};
use crate::nn::{Adam, GradAccum, Graph, Mat, Var};
use crate::skeleton::{body_yaw, Motion, PELVIS, SEGMENT_FRAMES};
use crate::voxel::{extract_local, LocalGrid, SceneTimeline};

/// Horizontal distance below which a segment frame keeps the body heading
/// instead of facing its goal.
pub const FACE_GOAL_MIN: f64 = 0.3;

/// Frame of a segment that starts at `first` (a posed frame) and heads to `goal`.
pub fn segment_canon(first: &[Vec3], goal: Vec3) -> Canon {
    let root = first[PELVIS];
    if geom::dist_xz(root, goal) > FACE_GOAL_MIN {
        Canon::facing(root, goal)
    } else {
        Canon { origin: [root[0], root[2]], yaw: body_yaw(first) }
    }
}

/// Motion expressed in `canon`, flattened frame by frame.
pub fn motion_to_local(m: &Motion, canon: &Canon) -> Vec<f64> {
    m.map_points(|p| canon.to_local(p)).data
}

pub fn motion_to_world(data: &[f64], canon: &Canon) -> Result<Motion> {
    let local = Motion::from_vec(data.len() / FRAME_DIM, FRAME_DIM / 3, data.to_vec())?;
    Ok(local.map_points(|p| canon.to_world(p)))
}

/// One 48-frame training window in its segment frame.
#[derive(Debug, Clone)]
pub struct SegmentSample {
    pub prompt: String,
    pub text: TextEmbedding,
    pub canon: Canon,
    /// Canonical clean motion (un-normalized).
    pub motion: Vec<f64>,
    /// Canonical ground-truth waypoints, one per frame.
    pub traj: Vec<Vec3>,
    pub goal: Vec3,
    /// Local-grid patch means at the segment start.
    pub patches: Vec<f64>,
    pub scene_context: LocalGrid,
    pub nav: NavBatch,
}

impl SegmentSample {
    /// Builds a sample from a world-frame window, its trajectory and goal.
    /// `frame_offset` indexes the window's first frame in `timeline`.
    pub fn from_window(prompt: &str, window: &Motion, traj: &[Vec3], goal: Vec3, timeline: &SceneTimeline, frame_offset: usize) -> Result<Self> {
        window.check_segment()?;
        if traj.len() != SEGMENT_FRAMES {
            return Err(Error::input("training trajectory must have one waypoint per frame"));
        }
        let text = crate::encoders::embed_text(prompt)?;
        let canon = segment_canon(&window.frame(0), goal);
        let local_traj: Vec<Vec3> = traj.iter().map(|p| canon.to_local(*p)).collect();
        let local_goal = canon.to_local(goal);
        let grid = timeline.grid_at(frame_offset);
        let scene_context = extract_local(grid, canon.to_world([0.0; 3]), canon.yaw);
        let patches = local_patches(grid, &canon, [0.0; 3], 0.0);
        let steps = teacher_steps(timeline, &canon, &local_traj, local_goal, frame_offset);
        let nav = batch_from_steps(&steps, &text);
        Ok(SegmentSample {
            prompt: prompt.to_string(),
            text,
            canon,
            motion: motion_to_local(window, &canon),
            traj: local_traj,
            goal: local_goal,
            patches,
            scene_context,
            nav,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lambda_traj: f64,
    pub lambda_conf: f64,
    pub clip_norm: f64,
    pub seed: u64,
    /// Fraction of training samples whose noisy input comes from a foreign
    /// source (another clip, or a standard normal prime at `t = T`).
    #[serde(default)]
    pub prime_mix: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 30, batch_size: 16, lr: 1e-3, lambda_traj: 0.5, lambda_conf: 0.01, clip_norm: 1.0, seed: 0, prime_mix: 0.5 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || !(self.lr > 0.0) || self.lambda_traj < 0.0 || self.lambda_conf < 0.0 || !(self.clip_norm > 0.0) || !(0.0..=1.0).contains(&self.prime_mix) {
            return Err(Error::config("invalid training configuration"));
        }
        Ok(())
    }
}

/// Epoch means of the loss components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub motion: f64,
    pub traj: f64,
    pub conf: f64,
    pub total: f64,
    pub memory_size: usize,
}

/// Graph nodes for the three losses of one batch.
pub struct BatchLosses {
    pub motion: Var,
    pub traj: Var,
    pub conf: Var,
    /// Per-sample motion loss values.
    pub per_sample_motion: Vec<f64>,
    /// Per-waypoint confidence used to weight the trajectory condition.
    pub confidence: Mat,
    /// Soft confidence targets.
    pub conf_target: Mat,
}

/// Denoiser inputs for one batch.
#[derive(Debug, Clone)]
pub struct DiffusionBatch {
    /// `B·48 × 66` noisy normalized motions.
    pub x_t: Mat,
    /// `B·48 × 66` clean normalized motions.
    pub x0: Mat,
    pub ts: Vec<usize>,
}

/// Builds the loss graph. `frozen` supplies fixed `(confidence, target)`
/// matrices instead of reading them off the forward pass; gradient checks
/// need this since both are treated as constants.
pub fn batch_losses(g: &mut Graph, models: &Models, samples: &[&SegmentSample], diff: &DiffusionBatch, frozen: Option<(&Mat, &Mat)>) -> BatchLosses {
    let b = samples.len();
    let n = SEGMENT_FRAMES;
    let navs: Vec<&NavBatch> = samples.iter().map(|s| &s.nav).collect();
    let nav = NavBatch::concat(&navs);
    let (disp, logit) = models.nav.forward(g, &models.enc, &nav);
    let pred = apply_displacement(g, disp, &nav);
    let mut gt = Mat::zeros((b * n, 3));
    for (k, s) in samples.iter().enumerate() {
        for (i, p) in s.traj.iter().enumerate() {
            for c in 0..3 {
                gt[[k * n + i, c]] = p[c];
            }
        }
    }
    let traj_mse = g.mse(pred, &gt);
    let traj = g.scale(traj_mse, 3.0);
    let (confidence, conf_target) = match frozen {
        Some((c, t)) => (c.clone(), t.clone()),
        None => {
            let pv = g.value(pred);
            let target = Mat::from_shape_fn((b * n, 1), |(r, _)| {
                let e = (0..3).map(|c| (pv[[r, c]] - gt[[r, c]]).powi(2)).sum::<f64>().sqrt();
                (-e).exp()
            });
            let conf = g.value(logit).mapv(crate::nn::sigmoid);
            (conf, target)
        }
    };
    let conf = g.bce_logits(logit, &conf_target);

    let mut cond = CondBatch {
        patches: Mat::zeros((b, PATCH_COUNT)),
        traj: Mat::zeros((b, TRAJ_DIM)),
        text: Mat::zeros((b, TEXT_DIM)),
        goal: Mat::zeros((b, 3)),
        fixed_weights: None,
    };
    for (k, s) in samples.iter().enumerate() {
        for (j, v) in s.patches.iter().enumerate() {
            cond.patches[[k, j]] = *v;
        }
        for (i, p) in s.traj.iter().enumerate() {
            for c in 0..3 {
                cond.traj[[k, 3 * i + c]] = p[c] * confidence[[k * n + i, 0]];
            }
        }
        for (j, v) in s.text.vector.iter().enumerate() {
            cond.text[[k, j]] = *v;
        }
        for c in 0..3 {
            cond.goal[[k, c]] = s.goal[c];
        }
    }
    let x0_hat = models.den.forward(g, &models.enc, &models.adapter, &diff.x_t, &diff.ts, &cond);
    // The error is measured in metres: normalized coordinates are scaled back per axis.
    let axis_scale = Mat::from_shape_fn((b * n, FRAME_DIM), |(_, c)| models.stats.scale[c % 3]);
    let target = g.input(diff.x0.clone());
    let err = g.sub(x0_hat, target);
    let scale = g.input(axis_scale);
    let err_m = g.mul(err, scale);
    let motion = g.mse(err_m, &Mat::zeros((b * n, FRAME_DIM)));
    let ev = g.value(err_m);
    let per_sample_motion = (0..b)
        .map(|k| ev.slice(ndarray::s![k * n..(k + 1) * n, ..]).mapv(|v| v * v).mean().unwrap_or(0.0))
        .collect();
    BatchLosses { motion, traj, conf, per_sample_motion, confidence, conf_target }
}

/// Noised inputs for a batch at uniformly drawn steps.
pub fn diffusion_batch(models: &Models, samples: &[&SegmentSample], rng: &mut impl Rng) -> Result<DiffusionBatch> {
    let b = samples.len();
    let n = SEGMENT_FRAMES;
    let mut x_t = Mat::zeros((b * n, FRAME_DIM));
    let mut x0 = Mat::zeros((b * n, FRAME_DIM));
    let mut ts = Vec::with_capacity(b);
    for (k, s) in samples.iter().enumerate() {
        let t = rng.random_range(1..=models.schedule.steps);
        let clean = models.stats.normalize(&s.motion);
        let noise = standard_normal(rng, SEGMENT_LEN);
        let noisy = q_sample(&clean, t, &noise, &models.schedule)?;
        for i in 0..SEGMENT_LEN {
            x0[[k * n + i / FRAME_DIM, i % FRAME_DIM]] = clean[i];
            x_t[[k * n + i / FRAME_DIM, i % FRAME_DIM]] = noisy[i];
        }
        ts.push(t);
    }
    Ok(DiffusionBatch { x_t, x0, ts })
}

/// Replaces the noisy input of about `p` of the batch with a foreign one:
/// half the time a standard normal prime at `t = T`, otherwise another
/// sample's motion noised to the same step. The target stays the sample's
/// own motion. Returns which rows were replaced.
pub fn mix_foreign_inputs(models: &Models, diff: &mut DiffusionBatch, pool: &[SegmentSample], p: f64, rng: &mut impl Rng) -> Result<Vec<bool>> {
    let n = SEGMENT_FRAMES;
    let steps = models.schedule.steps;
    let mut mixed = vec![false; diff.ts.len()];
    for (k, flag) in mixed.iter_mut().enumerate() {
        if p <= 0.0 || !rng.random_bool(p) {
            continue;
        }
        *flag = true;
        let noise = standard_normal(rng, SEGMENT_LEN);
        let x = if rng.random_bool(0.5) || pool.len() < 2 {
            diff.ts[k] = steps;
            noise
        } else {
            let other = models.stats.normalize(&pool[rng.random_range(0..pool.len())].motion);
            q_sample(&other, diff.ts[k], &noise, &models.schedule)?
        };
        for (i, v) in x.into_iter().enumerate() {
            diff.x_t[[k * n + i / FRAME_DIM, i % FRAME_DIM]] = v;
        }
    }
    Ok(mixed)
}

fn memory_entry(models: &Models, s: &SegmentSample, loss: f64, rng: &mut impl Rng) -> Result<MemoryEntry> {
    let clean = models.stats.normalize(&s.motion);
    let noise = standard_normal(rng, SEGMENT_LEN);
    let noisy = q_sample(&clean, models.schedule.steps, &noise, &models.schedule)?;
    let joints = FRAME_DIM / 3;
    Ok(MemoryEntry {
        noisy_motion: Motion::from_vec(SEGMENT_FRAMES, joints, noisy)?,
        clean_motion: Motion::from_vec(SEGMENT_FRAMES, joints, clean)?,
        scene_context: s.scene_context.clone(),
        scene_feature: models.enc.encode_scene_patches(&models.store, &s.patches),
        text_embedding: s.text.clone(),
        prompt: s.prompt.clone(),
        admission_similarity: 0.0,
        loss,
    })
}

/// Trains `models` in place. Motion statistics are fitted on `samples`
/// first. Every optimizer step offers each sample of the batch to `memory`
/// with its motion loss. Returns one record per epoch.
pub fn train(models: &mut Models, samples: &[SegmentSample], cfg: &TrainConfig, memory: &mut MemoryStore) -> Result<Vec<LossRecord>> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Training { epoch: 0, msg: "empty dataset".into() });
    }
    let refs: Vec<&[f64]> = samples.iter().map(|s| s.motion.as_slice()).collect();
    models.stats = MotionStats::fit(&refs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::new(&models.store, cfg.lr);
    opt.clip_norm = Some(cfg.clip_norm);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut records = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sums = [0.0; 4];
        let mut count = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&SegmentSample> = chunk.iter().map(|&i| &samples[i]).collect();
            let mut diff = diffusion_batch(models, &batch, &mut rng)?;
            let foreign = mix_foreign_inputs(models, &mut diff, samples, cfg.prime_mix, &mut rng)?;
            let (grads, parts, per_sample) = {
                let mut g = Graph::new(&models.store);
                let l = batch_losses(&mut g, models, &batch, &diff, None);
                let t = g.scale(l.traj, cfg.lambda_traj);
                let c = g.scale(l.conf, cfg.lambda_conf);
                let tc = g.add(t, c);
                let total = g.add(l.motion, tc);
                let parts = [g.scalar(l.motion), g.scalar(l.traj), g.scalar(l.conf), g.scalar(total)];
                if parts.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Training { epoch, msg: "non-finite loss".into() });
                }
                (g.backward(total), parts, l.per_sample_motion)
            };
            let mut acc = GradAccum::zeros_like(&models.store);
            acc.add(&grads, 1.0);
            if !acc.is_finite() {
                return Err(Error::Training { epoch, msg: "non-finite gradient".into() });
            }
            opt.step(&mut models.store, &acc);
            if !models.store.all_finite() {
                return Err(Error::Training { epoch, msg: "non-finite parameters".into() });
            }
            let w = batch.len() as f64;
            for k in 0..4 {
                sums[k] += parts[k] * w;
            }
            count += w;
            for ((s, loss), foreign) in batch.iter().zip(per_sample).zip(foreign) {
                // Entries over the loss threshold are rejected without building them.
                if !foreign && loss <= memory.cfg.tau_l {
                    memory.consider_store(memory_entry(models, s, loss, &mut rng)?, loss)?;
                }
            }
        }
        let rec = LossRecord {
            epoch,
            motion: sums[0] / count,
            traj: sums[1] / count,
            conf: sums[2] / count,
            total: sums[3] / count,
            memory_size: memory.len(),
        };
        log::info!("epoch {epoch}: total {:.5} motion {:.5} traj {:.5} conf {:.5} memory {}", rec.total, rec.motion, rec.traj, rec.conf, rec.memory_size);
        records.push(rec);
    }
    refresh_scene_features(models, memory);
    Ok(records)
}

/// Recomputes stored scene features with the final encoder.
pub fn refresh_scene_features(models: &Models, memory: &mut MemoryStore) {
    for bucket in memory.buckets.values_mut() {
        for e in bucket.iter_mut() {
            e.scene_feature = models.enc.encode_scene_patches(&models.store, &e.scene_context.patch_means());
        }
    }
}
