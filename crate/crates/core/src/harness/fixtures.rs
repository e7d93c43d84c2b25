//! Small random training instances for gradient checks and smoke runs.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::geom;
use crate::hsi_diffusion::train::{batch_losses, diffusion_batch, DiffusionBatch, SegmentSample};
use crate::hsi_diffusion::MotionStats;
use crate::model::{ModelConfig, Models};
use crate::navigation::WALK_SPEED;
use crate::nn::{check_entries, GradSample, Graph, Mat, ParamId};
use crate::skeleton::{animate_track, Motion, TrackFrame, FPS, SEGMENT_FRAMES};
use crate::voxel::{BoxScene, SceneTimeline, TaggedBox};

/// Tiny models with perturbed parameters and a batch of synthetic segments.
pub struct GradInstance {
    pub models: Models,
    pub samples: Vec<SegmentSample>,
    pub diff: DiffusionBatch,
    /// Confidence and its target from the unperturbed forward pass.
    pub frozen: (Mat, Mat),
}

const PROMPTS: [&str; 4] = ["walk to the door", "sit on the chair", "reach for the cup", "drink from the glass"];

/// A straight walk past one random box, as a training sample.
pub fn random_sample(rng: &mut impl Rng) -> Result<SegmentSample> {
    let c = [rng.random_range(1.0..2.0), rng.random_range(1.0..2.0)];
    let h = rng.random_range(0.1..0.3);
    let scene = BoxScene {
        voxel_size: 0.05,
        origin: [0.0; 3],
        dims: [60, 60, 40],
        boxes: vec![TaggedBox { min: [c[0] - h, 0.0, c[1] - h], max: [c[0] + h, rng.random_range(0.4..1.0), c[1] + h], tag: String::new() }],
    };
    let timeline = SceneTimeline::fixed(scene.voxelize()?);
    let start = [rng.random_range(0.3..1.0), 0.0, rng.random_range(0.3..1.0)];
    let yaw = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    let speed = WALK_SPEED * rng.random_range(0.5..1.0);
    let dir = geom::rotate_y([0.0, 0.0, 1.0], yaw);
    let track: Vec<TrackFrame> = (0..SEGMENT_FRAMES).map(|i| TrackFrame::walking(geom::add(start, geom::scale(dir, speed * i as f64 / FPS)))).collect();
    let motion = Motion::from_frames(&animate_track(&track, yaw))?;
    let traj: Vec<_> = track.iter().map(|t| t.root).collect();
    let prompt = PROMPTS.choose(rng).expect("non-empty");
    SegmentSample::from_window(prompt, &motion, &traj, traj[SEGMENT_FRAMES - 1], &timeline, 0)
}

pub fn grad_instance(seed: u64, batch: usize) -> Result<GradInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut models = Models::new(ModelConfig::tiny(), seed)?;
    // Zero-initialized heads would hide most of the graph from the check.
    let noise = Normal::new(0.0, 0.05).expect("valid std");
    let ids: Vec<ParamId> = models.store.ids().collect();
    for id in ids {
        models.store.get_mut(id).mapv_inplace(|v| v + noise.sample(&mut rng));
    }
    let samples: Vec<SegmentSample> = (0..batch).map(|_| random_sample(&mut rng)).collect::<Result<_>>()?;
    let refs: Vec<&[f64]> = samples.iter().map(|s| s.motion.as_slice()).collect();
    models.stats = MotionStats::fit(&refs)?;
    let batch_refs: Vec<&SegmentSample> = samples.iter().collect();
    let diff = diffusion_batch(&models, &batch_refs, &mut rng)?;
    let frozen = {
        let mut g = Graph::new(&models.store);
        let l = batch_losses(&mut g, &models, &batch_refs, &diff, None);
        (l.confidence, l.conf_target)
    };
    Ok(GradInstance { models, samples, diff, frozen })
}

/// Loss components of [`batch_losses`] by index: motion, trajectory, confidence.
pub const LOSS_NAMES: [&str; 3] = ["motion", "traj", "conf"];

/// Checks `entries` random parameter entries of each loss component, drawn
/// from the tensors that receive a nonzero gradient.
pub fn check_instance(inst: &GradInstance, entries: usize, seed: u64) -> [Vec<GradSample>; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let refs: Vec<&SegmentSample> = inst.samples.iter().collect();
    let store = &inst.models.store;
    std::array::from_fn(|which| {
        let loss = |g: &mut Graph| {
            let l = batch_losses(g, &inst.models, &refs, &inst.diff, Some((&inst.frozen.0, &inst.frozen.1)));
            [l.motion, l.traj, l.conf][which]
        };
        let grads = {
            let mut g = Graph::new(store);
            let l = loss(&mut g);
            g.backward(l)
        };
        let live: Vec<ParamId> = store.ids().filter(|&id| grads.get(id).is_some_and(|m| m.iter().any(|v| *v != 0.0))).collect();
        let picks: Vec<(ParamId, usize, usize)> = (0..entries)
            .filter_map(|_| {
                let id = *live.choose(&mut rng)?;
                let (r, c) = store.get(id).dim();
                Some((id, rng.random_range(0..r), rng.random_range(0..c)))
            })
            .collect();
        check_entries(store, &picks, 1e-6, loss)
    })
}
