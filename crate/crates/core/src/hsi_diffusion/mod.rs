//! Conditional motion diffusion.
//!
//! The denoiser predicts the clean segment `x̂₀` from a noisy one. Its input
//! is a token sequence: one condition token followed by 48 frame tokens. The
//! condition token is built from four features, scene `S_f`, trajectory
//! waypoints (each scaled by its confidence), text `T_f` and goal `G_f`.
//! Each feature is scaled by a weight from the condition adapter, and the
//! weighted features are concatenated and projected. A learned timestep
//! embedding is added to the result.
//!
//! Motions are diffused in a normalized space. The clean motion is expressed
//! in the segment frame (origin at the start root on the floor, +Z toward the
//! segment goal), and then per-coordinate mean and per-axis scale are
//! removed; see [`MotionStats`].

pub mod generate;
pub mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::encoders::{Encoders, Mlp2, FEATURE_DIM, TEXT_DIM};
use crate::error::{Error, Result};
use crate::nn::{Block, Graph, LayerNorm, Linear, Mat, ParamId, ParamStore, Var};
use crate::skeleton::{Motion, NUM_JOINTS, SEGMENT_FRAMES};

pub const FRAME_DIM: usize = NUM_JOINTS * 3;
pub const SEGMENT_LEN: usize = SEGMENT_FRAMES * FRAME_DIM;
/// Flattened trajectory condition: 48 waypoints × 3.
pub const TRAJ_DIM: usize = SEGMENT_FRAMES * 3;
pub const COND_DIM: usize = FEATURE_DIM + TRAJ_DIM + TEXT_DIM + FEATURE_DIM;
/// Frames copied from the previous segment.
pub const STITCH_FRAMES: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig { steps: 100, beta_start: 1e-4, beta_end: 0.02 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    pub steps: usize,
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear betas from `beta_start` to `beta_end` over `steps` steps, both ends exact.
    pub fn new(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps < 2 || !(beta_start > 0.0 && beta_start < beta_end && beta_end < 1.0) {
            return Err(Error::config(format!("invalid noise schedule: T={steps}, betas {beta_start}..{beta_end}")));
        }
        let mut betas: Vec<f64> = (0..steps).map(|i| beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64).collect();
        betas[steps - 1] = beta_end;
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(steps);
        let mut acc = 1.0;
        for a in &alphas {
            acc *= a;
            alpha_bars.push(acc);
        }
        Ok(NoiseSchedule { steps, betas, alphas, alpha_bars })
    }

    pub fn from_config(c: &ScheduleConfig) -> Result<Self> {
        Self::new(c.steps, c.beta_start, c.beta_end)
    }

    /// `beta_t` for `t` in `1..=T`.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    /// `alpha_bar_t`, with `alpha_bar_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps {
            return Err(Error::input(format!("diffusion step {t} outside 1..={}", self.steps)));
        }
        Ok(())
    }

    /// Posterior `q(x_{t−1} | x_t, x₀)`: coefficients on `x₀` and `x_t`, and the variance.
    pub fn posterior(&self, t: usize) -> (f64, f64, f64) {
        let ab = self.alpha_bar(t);
        let ab_prev = self.alpha_bar(t - 1);
        let beta = self.beta(t);
        let c0 = ab_prev.sqrt() * beta / (1.0 - ab);
        let ct = self.alphas[t - 1].sqrt() * (1.0 - ab_prev) / (1.0 - ab);
        let var = beta * (1.0 - ab_prev) / (1.0 - ab);
        (c0, ct, var)
    }
}

/// `√ᾱ_t·x₀ + √(1−ᾱ_t)·noise`.
pub fn q_sample(x0: &[f64], t: usize, noise: &[f64], sched: &NoiseSchedule) -> Result<Vec<f64>> {
    sched.check_t(t)?;
    if x0.len() != noise.len() {
        return Err(Error::input("q_sample shapes differ"));
    }
    let ab = sched.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x0.iter().zip(noise).map(|(x, n)| a * x + b * n).collect())
}

pub fn q_sample_motion(x0: &Motion, t: usize, noise: &Motion, sched: &NoiseSchedule) -> Result<Motion> {
    if x0.frames != noise.frames || x0.joints != noise.joints {
        return Err(Error::input("q_sample shapes differ"));
    }
    Motion::from_vec(x0.frames, x0.joints, q_sample(&x0.data, t, &noise.data, sched)?)
}

pub fn standard_normal(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Anything that predicts `x̂₀` from `(x_t, t)`.
pub trait X0Predictor {
    fn predict_x0(&self, x_t: &[f64], t: usize) -> Result<Vec<f64>>;
}

/// One reverse step from the posterior given the predicted `x̂₀`. No noise is added at `t = 1`.
pub fn denoise_step<P: X0Predictor + ?Sized>(model: &P, x_t: &[f64], t: usize, sched: &NoiseSchedule, rng: &mut impl Rng) -> Result<Vec<f64>> {
    sched.check_t(t)?;
    let x0 = model.predict_x0(x_t, t)?;
    if x0.len() != x_t.len() {
        return Err(Error::input("predictor returned the wrong size"));
    }
    let (c0, ct, var) = sched.posterior(t);
    let sd = var.sqrt();
    let out: Vec<f64> = if t > 1 {
        x0.iter().zip(x_t).map(|(a, b)| c0 * a + ct * b + sd * { let z: f64 = StandardNormal.sample(rng); z }).collect()
    } else {
        x0.iter().zip(x_t).map(|(a, b)| c0 * a + ct * b).collect()
    };
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("reverse step {t} produced non-finite values")));
    }
    Ok(out)
}

/// Reverse diffusion from `prime` (taken as `x_T`). With `prev`, the first
/// `prev.len() / frame_dim` frames are replaced by `q_sample(prev, t)` before
/// every prediction and by `prev` itself at the end.
pub fn sample_segment<P: X0Predictor + ?Sized>(
    model: &P,
    sched: &NoiseSchedule,
    prime: &[f64],
    prev: Option<&[f64]>,
    seed: u64,
) -> Result<Vec<f64>> {
    if let Some(p) = prev {
        if p.len() > prime.len() {
            return Err(Error::input("stitching frames exceed the segment"));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = prime.to_vec();
    for t in (1..=sched.steps).rev() {
        if let Some(p) = prev {
            let noise = standard_normal(&mut rng, p.len());
            let noisy = q_sample(p, t, &noise, sched)?;
            x[..p.len()].copy_from_slice(&noisy);
        }
        x = denoise_step(model, &x, t, sched, &mut rng)?;
    }
    if let Some(p) = prev {
        x[..p.len()].copy_from_slice(p);
    }
    Ok(x)
}

/// Importance weights of the scene, trajectory, text and goal conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionWeights(pub [f64; 4]);

impl ConditionWeights {
    pub const UNIFORM: ConditionWeights = ConditionWeights([0.25; 4]);

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// `Softmax(MLP(T_f))` over the four condition types.
#[derive(Debug, Clone, Copy)]
pub struct ConditionAdapter {
    pub mlp: Mlp2,
}

impl ConditionAdapter {
    /// Random hidden layer, zero output layer (uniform weights at start).
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R) -> Self {
        let l1 = Linear::new(store, "adapter.l1", TEXT_DIM, FEATURE_DIM, rng);
        let l2 = Linear::zeros(store, "adapter.l2", FEATURE_DIM, 4);
        ConditionAdapter { mlp: Mlp2 { l1, l2 } }
    }

    pub fn lookup(store: &ParamStore) -> Option<Self> {
        Mlp2::lookup(store, "adapter").map(|mlp| ConditionAdapter { mlp })
    }

    pub fn logits(&self, store: &ParamStore, text: &[f64]) -> Vec<f64> {
        let x = Mat::from_shape_vec((1, text.len()), text.to_vec()).expect("text row");
        self.mlp.apply(store, &x).into_raw_vec_and_offset().0
    }

    pub fn weights(&self, store: &ParamStore, text: &[f64]) -> ConditionWeights {
        let p = softmax(&self.logits(store, text));
        ConditionWeights([p[0], p[1], p[2], p[3]])
    }

    pub fn forward(&self, g: &mut Graph, text: Var) -> Var {
        let z = self.mlp.forward(g, text);
        g.softmax_rows(z)
    }
}

/// Concatenation `[R1·S_f; R2·(C ⊙ traj); R3·T_f; R4·G_f]` before projection.
/// `traj` holds the canonical waypoints flattened frame by frame.
pub fn assemble_conditions(scene: &[f64], traj: &[f64], confidence: &[f64], text: &[f64], goal: &[f64], r: &ConditionWeights) -> Result<Vec<f64>> {
    if scene.len() != FEATURE_DIM || goal.len() != FEATURE_DIM || text.len() != TEXT_DIM || traj.len() != 3 * confidence.len() || traj.len() != TRAJ_DIM {
        return Err(Error::input("condition shapes do not match"));
    }
    let mut out = Vec::with_capacity(COND_DIM);
    out.extend(scene.iter().map(|v| r.0[0] * v));
    out.extend(traj.iter().enumerate().map(|(i, v)| r.0[1] * confidence[i / 3] * v));
    out.extend(text.iter().map(|v| r.0[2] * v));
    out.extend(goal.iter().map(|v| r.0[3] * v));
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub width: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig { width: 128, layers: 4, heads: 4, ff: 256 }
    }
}

#[derive(Debug, Clone)]
pub struct Denoiser {
    pub cfg: DenoiserConfig,
    pub input: Linear,
    pub pos: ParamId,
    pub cond: Linear,
    pub temb: ParamId,
    pub blocks: Vec<Block>,
    pub ln: LayerNorm,
    pub output: Linear,
}

/// Per-sample condition inputs for a batch, one row per sample.
#[derive(Debug, Clone)]
pub struct CondBatch {
    /// `B × 512` local-grid patch means at the segment start.
    pub patches: Mat,
    /// `B × 144` confidence-weighted canonical waypoints.
    pub traj: Mat,
    pub text: Mat,
    /// `B × 3` canonical segment goal.
    pub goal: Mat,
    /// Fixed weights replacing the adapter (ablation).
    pub fixed_weights: Option<ConditionWeights>,
}

impl Denoiser {
    pub fn new<R: Rng>(store: &mut ParamStore, cfg: DenoiserConfig, steps: usize, rng: &mut R) -> Self {
        let w = cfg.width;
        Denoiser {
            cfg,
            input: Linear::new(store, "den.in", FRAME_DIM, w, rng),
            pos: store.add_normal("den.pos", SEGMENT_FRAMES, w, 0.02, rng),
            cond: Linear::new(store, "den.cond", COND_DIM, w, rng),
            temb: store.add_normal("den.temb", steps, w, 0.02, rng),
            blocks: (0..cfg.layers).map(|l| Block::new(store, &format!("den.block{l}"), w, cfg.heads, cfg.ff, rng)).collect(),
            ln: LayerNorm::new(store, "den.ln", w),
            output: Linear::new(store, "den.out", w, FRAME_DIM, rng),
        }
    }

    pub fn lookup(store: &ParamStore, cfg: DenoiserConfig) -> Option<Self> {
        Some(Denoiser {
            cfg,
            input: Linear::lookup(store, "den.in")?,
            pos: store.id("den.pos")?,
            cond: Linear::lookup(store, "den.cond")?,
            temb: store.id("den.temb")?,
            blocks: (0..cfg.layers)
                .map(|l| Block::lookup(store, &format!("den.block{l}"), cfg.width, cfg.heads))
                .collect::<Option<Vec<_>>>()?,
            ln: LayerNorm::lookup(store, "den.ln")?,
            output: Linear::lookup(store, "den.out")?,
        })
    }

    /// Condition tokens (`B × W`) without the timestep embedding, and the adapter weights (`B × 4`).
    pub fn condition_tokens(&self, g: &mut Graph, enc: &Encoders, adapter: &ConditionAdapter, c: &CondBatch) -> (Var, Var) {
        let b = c.text.nrows();
        let text = g.input(c.text.clone());
        let r = match c.fixed_weights {
            Some(w) => g.input(Mat::from_shape_fn((b, 4), |(_, k)| w.0[k])),
            None => adapter.forward(g, text),
        };
        let patches = g.input(c.patches.clone());
        let scene = enc.scene.forward(g, patches);
        let goal_in = g.input(c.goal.clone());
        let goal = enc.goal.forward(g, goal_in);
        let traj = g.input(c.traj.clone());
        let parts = [scene, traj, text, goal];
        let mut scaled = Vec::with_capacity(4);
        for (k, p) in parts.into_iter().enumerate() {
            let rk = g.slice_cols(r, k, k + 1);
            scaled.push(g.mul_col(p, rk));
        }
        let cat = g.concat_cols(&scaled);
        (self.cond.forward(g, cat), r)
    }

    /// Predicted `x̂₀` rows (`B·48 × 66`) for noisy inputs `x_t` (`B·48 × 66`) at steps `ts`.
    pub fn forward(&self, g: &mut Graph, enc: &Encoders, adapter: &ConditionAdapter, x_t: &Mat, ts: &[usize], c: &CondBatch) -> Var {
        let b = ts.len();
        let f = SEGMENT_FRAMES;
        let (cond, _) = self.condition_tokens(g, enc, adapter, c);
        let temb = g.param(self.temb);
        let t_rows: Vec<Var> = ts.iter().map(|&t| g.slice_rows(temb, t - 1, t)).collect();
        let t_rows = g.concat_rows(&t_rows);
        let cls = g.add(cond, t_rows);
        let x = g.input(x_t.clone());
        let frames = self.input.forward(g, x);
        let pos = g.param(self.pos);
        let mut seq = Vec::with_capacity(2 * b);
        for i in 0..b {
            seq.push(g.slice_rows(cls, i, i + 1));
            let fr = g.slice_rows(frames, i * f, (i + 1) * f);
            seq.push(g.add(fr, pos));
        }
        let mut h = g.concat_rows(&seq);
        for blk in &self.blocks {
            h = blk.forward(g, h, f + 1, false);
        }
        let h = self.ln.forward(g, h);
        let rows: Vec<Var> = (0..b).map(|i| g.slice_rows(h, i * (f + 1) + 1, (i + 1) * (f + 1))).collect();
        let h = g.concat_rows(&rows);
        self.output.forward(g, h)
    }
}

/// Per-coordinate mean and per-axis scale of canonical training segments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionStats {
    pub mean: Vec<f64>,
    pub scale: [f64; 3],
}

pub const MIN_SCALE: f64 = 0.05;

impl MotionStats {
    pub fn identity() -> Self {
        MotionStats { mean: vec![0.0; SEGMENT_LEN], scale: [1.0; 3] }
    }

    pub fn fit(segments: &[&[f64]]) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::input("cannot fit motion statistics without data"));
        }
        let n = segments.len() as f64;
        let mut mean = vec![0.0; SEGMENT_LEN];
        for s in segments {
            for (m, v) in mean.iter_mut().zip(s.iter()) {
                *m += v / n;
            }
        }
        let mut var = [0.0; 3];
        let mut count = [0.0; 3];
        for s in segments {
            for (i, v) in s.iter().enumerate() {
                var[i % 3] += (v - mean[i]).powi(2);
                count[i % 3] += 1.0;
            }
        }
        let scale = [0, 1, 2].map(|k| (var[k] / count[k]).sqrt().max(MIN_SCALE));
        Ok(MotionStats { mean, scale })
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter().enumerate().map(|(i, v)| (v - self.mean[i]) / self.scale[i % 3]).collect()
    }

    pub fn denormalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter().enumerate().map(|(i, v)| v * self.scale[i % 3] + self.mean[i]).collect()
    }
}
