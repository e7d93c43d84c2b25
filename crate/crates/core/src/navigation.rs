//! Global planning and step-wise navigation.
//!
//! [`plan_global`] runs A* on an inflated [`NavGrid2D`]. [`select_keypoints`]
//! cuts the resulting polyline into per-segment goals. The learned
//! [`Navigator`] is a small causal transformer that, one frame at a time,
//! predicts the next root position and a confidence score while looking at
//! the local occupancy around the current position. [`oracle_navigator`]
//! is the deterministic teacher that replans whenever the scene changes.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoders::{position_input, Encoders, GoalFeature, SceneDelta, SceneFeature, TextEmbedding, FEATURE_DIM, POS_INPUT, TEXT_DIM};
use crate::error::{Error, Result};
use crate::geom::{self, Canon, Vec2, Vec3};
use crate::nn::{sigmoid, Block, Graph, LayerNorm, Linear, Mat, ParamStore, Var};
use crate::skeleton::FPS;
use crate::voxel::{extract_local, inflate, project_2d, NavGrid2D, OccupancyGrid, SceneTimeline, DEFAULT_HEIGHT_BAND};

pub const SQRT2: f64 = std::f64::consts::SQRT_2;
pub const WALK_SPEED: f64 = 1.2;
/// Horizontal distance covered in one 48-frame segment, less a small margin.
pub const SEGMENT_REACH: f64 = 1.84;
/// Displacements shorter than this leave the heading unchanged.
pub const HEADING_EPS: f64 = 1e-3;

/// Path cost kept as (axis moves, diagonal moves) so equal paths compare exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MoveCount {
    pub axis: u32,
    pub diagonal: u32,
}

impl MoveCount {
    pub fn cost(self) -> f64 {
        self.axis as f64 + self.diagonal as f64 * SQRT2
    }

    fn step(self, diagonal: bool) -> Self {
        if diagonal {
            MoveCount { diagonal: self.diagonal + 1, ..self }
        } else {
            MoveCount { axis: self.axis + 1, ..self }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathPlan {
    pub cells: Vec<(usize, usize)>,
    /// X-Z meters; interior points are cell centers, the ends are the exact endpoints.
    pub world_points: Vec<Vec2>,
    pub moves: MoveCount,
}

impl PathPlan {
    pub fn cost(&self) -> f64 {
        self.moves.cost()
    }

    pub fn length(&self) -> f64 {
        polyline_length(&self.world_points)
    }
}

pub fn polyline_length(pts: &[Vec2]) -> f64 {
    pts.windows(2).map(|w| ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt()).sum()
}

/// Octile distance between cells.
pub fn octile(a: (usize, usize), b: (usize, usize)) -> f64 {
    let dx = a.0.abs_diff(b.0) as f64;
    let dz = a.1.abs_diff(b.1) as f64;
    dx.max(dz) - dx.min(dz) + SQRT2 * dx.min(dz)
}

/// 8-neighbourhood without corner cutting: a diagonal move needs both
/// orthogonal neighbours free. Yields `(ix, iz, diagonal)`.
pub fn neighbours(nav: &NavGrid2D, ix: usize, iz: usize) -> impl Iterator<Item = (usize, usize, bool)> + '_ {
    const OFFS: [(i64, i64); 8] = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)];
    let (nx, nz) = (nav.dims[0] as i64, nav.dims[1] as i64);
    let free = move |x: i64, z: i64| x >= 0 && z >= 0 && x < nx && z < nz && !nav.is_blocked(x as usize, z as usize);
    OFFS.iter().filter_map(move |&(dx, dz)| {
        let (x, z) = (ix as i64 + dx, iz as i64 + dz);
        if !free(x, z) {
            return None;
        }
        let diagonal = dx != 0 && dz != 0;
        if diagonal && !(free(ix as i64 + dx, iz as i64) && free(ix as i64, iz as i64 + dz)) {
            return None;
        }
        Some((x as usize, z as usize, diagonal))
    })
}

#[derive(Debug, Clone, Copy)]
struct Open {
    f: f64,
    h: f64,
    idx: usize,
}

impl PartialEq for Open {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}
impl Eq for Open {}
impl PartialOrd for Open {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Open {
    // Reversed so the max-heap pops the smallest (f, h, idx).
    fn cmp(&self, o: &Self) -> Ordering {
        o.f.total_cmp(&self.f).then(o.h.total_cmp(&self.h)).then(o.idx.cmp(&self.idx))
    }
}

fn endpoint_cell(nav: &NavGrid2D, p: Vec2) -> Result<(usize, usize)> {
    match nav.cell_of(p[0], p[1]) {
        Some((ix, iz)) if !nav.is_blocked(ix, iz) => Ok((ix, iz)),
        _ => Err(Error::UnreachableEndpoint { x: p[0], z: p[1] }),
    }
}

/// A* on the inflated grid with unit axis cost, √2 diagonal cost and the
/// octile heuristic. Ties on `f` go to the smaller heuristic, then to the
/// smaller linear cell index.
pub fn plan_global(nav: &NavGrid2D, start: Vec2, goal: Vec2) -> Result<PathPlan> {
    let s = endpoint_cell(nav, start)?;
    let t = endpoint_cell(nav, goal)?;
    let n = nav.dims[0] * nav.dims[1];
    let mut g: Vec<Option<MoveCount>> = vec![None; n];
    let mut parent = vec![usize::MAX; n];
    let mut closed = vec![false; n];
    let mut heap = BinaryHeap::new();
    let si = nav.idx(s.0, s.1);
    let ti = nav.idx(t.0, t.1);
    g[si] = Some(MoveCount::default());
    let h0 = octile(s, t);
    heap.push(Open { f: h0, h: h0, idx: si });
    while let Some(Open { idx, .. }) = heap.pop() {
        if closed[idx] {
            continue;
        }
        closed[idx] = true;
        if idx == ti {
            break;
        }
        let (ix, iz) = (idx / nav.dims[1], idx % nav.dims[1]);
        let gc = g[idx].expect("popped node has a cost");
        for (x, z, diag) in neighbours(nav, ix, iz) {
            let j = nav.idx(x, z);
            if closed[j] {
                continue;
            }
            let cand = gc.step(diag);
            if g[j].is_none_or(|old| cand.cost() < old.cost()) {
                g[j] = Some(cand);
                parent[j] = idx;
                let h = octile((x, z), t);
                heap.push(Open { f: cand.cost() + h, h, idx: j });
            }
        }
    }
    let Some(moves) = g[ti] else {
        return Err(Error::NoPath);
    };
    let mut cells = vec![t];
    let mut cur = ti;
    while cur != si {
        cur = parent[cur];
        cells.push((cur / nav.dims[1], cur % nav.dims[1]));
    }
    cells.reverse();
    let mut world_points: Vec<Vec2> = cells.iter().map(|&(x, z)| nav.center(x, z)).collect();
    let last = world_points.len() - 1;
    world_points[0] = start;
    world_points[last] = goal;
    Ok(PathPlan { cells, world_points, moves })
}

/// Point at arc length `s` along a polyline (clamped to its ends).
pub fn point_at_arc(pts: &[Vec2], s: f64) -> Vec2 {
    let mut acc = 0.0;
    for w in pts.windows(2) {
        let seg = ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt();
        if seg > 0.0 && acc + seg >= s {
            let f = ((s - acc) / seg).clamp(0.0, 1.0);
            return [w[0][0] + f * (w[1][0] - w[0][0]), w[0][1] + f * (w[1][1] - w[0][1])];
        }
        acc += seg;
    }
    *pts.last().expect("non-empty polyline")
}

/// `k` points at arc-length fractions `i/k`, `i = 1..=k`, with Y = 0. The last
/// one is the path endpoint.
pub fn select_keypoints(plan: &PathPlan, k: usize) -> Result<Vec<Vec3>> {
    if k < 1 {
        return Err(Error::input("keypoint count must be at least 1"));
    }
    if plan.world_points.is_empty() {
        return Err(Error::input("path is empty"));
    }
    let total = plan.length();
    let mut out: Vec<Vec3> = (1..=k)
        .map(|i| {
            let p = point_at_arc(&plan.world_points, total * i as f64 / k as f64);
            [p[0], 0.0, p[1]]
        })
        .collect();
    let end = plan.world_points[plan.world_points.len() - 1];
    out[k - 1] = [end[0], 0.0, end[1]];
    Ok(out)
}

/// Segment count for a path: one segment per [`SEGMENT_REACH`] meters, at least one.
pub fn segment_count(path_length: f64) -> usize {
    ((path_length / SEGMENT_REACH).ceil() as usize).max(1)
}

/// Verbs whose final keypoint rests on a support surface.
pub fn is_seated_verb(verb: &str) -> bool {
    matches!(verb, "sit" | "lie")
}

/// Height of the highest support surface within `radius` of `(x, z)` below `max_y`, or 0.
pub fn support_height_near(grid: &OccupancyGrid, x: f64, z: f64, radius: f64, max_y: f64) -> f64 {
    let vs = grid.spec().voxel_size;
    let r = (radius / vs).ceil() as i64;
    let mut best = grid.support_top(x, z, max_y).unwrap_or(0.0);
    for dx in -r..=r {
        for dz in -r..=r {
            let (ox, oz) = (dx as f64 * vs, dz as f64 * vs);
            if ox * ox + oz * oz > radius * radius {
                continue;
            }
            if let Some(t) = grid.support_top(x + ox, z + oz, max_y) {
                best = best.max(t);
            }
        }
    }
    best
}

/// Blocked-cell map used for planning: band projection plus inflation.
pub fn planning_grid(grid: &OccupancyGrid, radius: f64) -> Result<NavGrid2D> {
    inflate(&project_2d(grid, DEFAULT_HEIGHT_BAND)?, radius)
}

/// Free cell whose center is closest to `p` (ties to the smaller index).
pub fn nearest_free_cell(nav: &NavGrid2D, p: Vec2) -> Option<(usize, usize)> {
    let mut best: Option<(f64, usize)> = None;
    for i in 0..nav.blocked.len() {
        if nav.blocked[i] {
            continue;
        }
        let c = nav.center(i / nav.dims[1], i % nav.dims[1]);
        let d = (c[0] - p[0]).powi(2) + (c[1] - p[1]).powi(2);
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, i));
        }
    }
    best.map(|(_, i)| (i / nav.dims[1], i % nav.dims[1]))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub position: Vec3,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySegment {
    pub waypoints: Vec<Waypoint>,
    pub frame_offset: usize,
}

impl TrajectorySegment {
    pub fn positions(&self) -> Vec<Vec3> {
        self.waypoints.iter().map(|w| w.position).collect()
    }

    pub fn confidences(&self) -> Vec<f64> {
        self.waypoints.iter().map(|w| w.confidence).collect()
    }

    pub fn len(&self) -> usize {
        self.waypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waypoints.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub speed: f64,
    pub inflation_radius: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig { speed: WALK_SPEED, inflation_radius: crate::voxel::DEFAULT_INFLATION_RADIUS }
    }
}

/// Plans from `from`, snapping a blocked start to the nearest free cell.
fn replan(nav: &NavGrid2D, from: Vec2, goal: Vec2) -> Result<Vec<Vec2>> {
    let start_free = nav.cell_of(from[0], from[1]).is_some_and(|(x, z)| !nav.is_blocked(x, z));
    if start_free {
        return Ok(plan_global(nav, from, goal)?.world_points);
    }
    let (x, z) = nearest_free_cell(nav, from).ok_or(Error::NoPath)?;
    let mut pts = vec![from];
    pts.extend(plan_global(nav, nav.center(x, z), goal)?.world_points);
    Ok(pts)
}

/// Teacher trajectory: plans on the scene at `frame_offset`, replans whenever
/// the timeline switches state, and walks the current path at a fixed speed.
/// Waypoint `i` is the position at frame `frame_offset + i`; Y is zero and
/// every confidence is 1.
pub fn oracle_navigator(
    timeline: &SceneTimeline,
    start: Vec3,
    goal: Vec3,
    frames: usize,
    frame_offset: usize,
    cfg: &OracleConfig,
) -> Result<TrajectorySegment> {
    if frames == 0 {
        return Err(Error::input("oracle navigator needs at least one frame"));
    }
    let goal2 = [goal[0], goal[2]];
    let mut pos = [start[0], start[2]];
    let mut state = timeline.state_index_at(frame_offset);
    let nav = planning_grid(timeline.grid_at(frame_offset), cfg.inflation_radius)?;
    let first = endpoint_cell(&nav, pos).and_then(|_| endpoint_cell(&nav, goal2));
    first?;
    let mut path = plan_global(&nav, pos, goal2)?.world_points;
    let mut travelled = 0.0;
    let step = cfg.speed / FPS;
    let mut out = Vec::with_capacity(frames);
    for i in 0..frames {
        let f = frame_offset + i;
        let st = timeline.state_index_at(f);
        if st != state {
            state = st;
            let nav = planning_grid(timeline.grid_at(f), cfg.inflation_radius)?;
            path = replan(&nav, pos, goal2)?;
            travelled = 0.0;
        }
        out.push(Waypoint { position: [pos[0], 0.0, pos[1]], confidence: 1.0 });
        travelled = (travelled + step).min(polyline_length(&path));
        pos = point_at_arc(&path, travelled);
    }
    Ok(TrajectorySegment { waypoints: out, frame_offset })
}

/// Per-step soft confidence target `exp(-‖gt − pred‖)`.
pub fn confidence_target(gt: &[Vec3], pred: &[Vec3]) -> Result<Vec<f64>> {
    if gt.len() != pred.len() {
        return Err(Error::input(format!("trajectory lengths differ: {} vs {}", gt.len(), pred.len())));
    }
    Ok(gt.iter().zip(pred).map(|(a, b)| (-geom::dist(*a, *b)).exp()).collect())
}

pub const CONF_CLAMP: f64 = 1e-12;

/// `(L_traj, L_conf)`: mean squared Euclidean error over steps, and the mean
/// binary cross-entropy of the predicted confidences against [`confidence_target`].
pub fn nav_loss(pred: &[Vec3], gt: &[Vec3], conf_pred: &[f64]) -> Result<(f64, f64)> {
    if pred.len() != gt.len() || conf_pred.len() != pred.len() {
        return Err(Error::input("navigation loss needs equally long inputs"));
    }
    if pred.is_empty() {
        return Err(Error::input("navigation loss needs at least one step"));
    }
    let n = pred.len() as f64;
    let l_traj = pred.iter().zip(gt).map(|(a, b)| geom::dot(geom::sub(*a, *b), geom::sub(*a, *b))).sum::<f64>() / n;
    let target = confidence_target(gt, pred)?;
    let l_conf = conf_pred
        .iter()
        .zip(&target)
        .map(|(&p, &c)| {
            let p = p.clamp(CONF_CLAMP, 1.0 - CONF_CLAMP);
            -(c * p.ln() + (1.0 - c) * (1.0 - p).ln())
        })
        .sum::<f64>()
        / n;
    Ok((l_traj, l_conf))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NavigatorConfig {
    pub width: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff: usize,
}

impl Default for NavigatorConfig {
    fn default() -> Self {
        NavigatorConfig { width: 32, layers: 4, heads: 4, ff: 64 }
    }
}

/// Width of the concatenated condition `[T_f; G_f; S_f; Δ_S]`.
pub const NAV_COND: usize = 4 * FEATURE_DIM;

/// Causal decoder over per-step tokens. Each token sums the encoded
/// position/step with a projection of `[T_f; G_f; S_f; Δ_S]`; the heads
/// emit a displacement in the heading frame and a confidence logit.
#[derive(Debug, Clone)]
pub struct Navigator {
    pub cfg: NavigatorConfig,
    pub text: Linear,
    pub cond: Linear,
    pub blocks: Vec<Block>,
    pub ln: LayerNorm,
    pub head_pos: Linear,
    pub head_conf: Linear,
}

impl Navigator {
    pub fn new<R: Rng>(store: &mut ParamStore, cfg: NavigatorConfig, rng: &mut R) -> Self {
        let w = cfg.width;
        Navigator {
            cfg,
            text: Linear::new(store, "nav.text", TEXT_DIM, FEATURE_DIM, rng),
            cond: Linear::new(store, "nav.cond", NAV_COND, w, rng),
            blocks: (0..cfg.layers).map(|l| Block::new(store, &format!("nav.block{l}"), w, cfg.heads, cfg.ff, rng)).collect(),
            ln: LayerNorm::new(store, "nav.ln", w),
            head_pos: Linear::zeros(store, "nav.head_pos", w, 3),
            head_conf: Linear::zeros(store, "nav.head_conf", w, 1),
        }
    }

    pub fn lookup(store: &ParamStore, cfg: NavigatorConfig) -> Option<Self> {
        Some(Navigator {
            cfg,
            text: Linear::lookup(store, "nav.text")?,
            cond: Linear::lookup(store, "nav.cond")?,
            blocks: (0..cfg.layers)
                .map(|l| Block::lookup(store, &format!("nav.block{l}"), cfg.width, cfg.heads))
                .collect::<Option<Vec<_>>>()?,
            ln: LayerNorm::lookup(store, "nav.ln")?,
            head_pos: Linear::lookup(store, "nav.head_pos")?,
            head_conf: Linear::lookup(store, "nav.head_conf")?,
        })
    }

    /// Decoder over feature-level inputs: rows are steps of `rows / seq`
    /// stacked sequences. Returns `(displacement n×3, logit n×1)`.
    pub fn decode(&self, g: &mut Graph, pos_feat: Var, text: Var, goal: Var, scene: Var, delta: Var, seq: usize) -> (Var, Var) {
        let t = self.text.forward(g, text);
        let c = g.concat_cols(&[t, goal, scene, delta]);
        let c = self.cond.forward(g, c);
        let mut x = g.add(pos_feat, c);
        for b in &self.blocks {
            x = b.forward(g, x, seq, true);
        }
        let x = self.ln.forward(g, x);
        (self.head_pos.forward(g, x), self.head_conf.forward(g, x))
    }

    /// Full forward from raw step inputs, computing features with `enc`.
    pub fn forward(&self, g: &mut Graph, enc: &Encoders, batch: &NavBatch) -> (Var, Var) {
        let pos_in = g.input(batch.pos_in.clone());
        let pos = enc.position.forward(g, pos_in);
        let text = g.input(batch.text.clone());
        let goal_in = g.input(batch.goal_in.clone());
        let goal = enc.goal.forward(g, goal_in);
        let patches = g.input(batch.patches.clone());
        let scene = enc.scene.forward(g, patches);
        let delta = scene_deltas(g, scene, batch.seq);
        self.decode(g, pos, text, goal, scene, delta, batch.seq)
    }

    /// Single token without history. The position is `P_i + R(yaw)·disp`.
    #[allow(clippy::too_many_arguments)]
    pub fn predict_step(
        &self,
        store: &ParamStore,
        enc: &Encoders,
        p: Vec3,
        yaw: f64,
        text: &TextEmbedding,
        goal: &GoalFeature,
        scene: &SceneFeature,
        delta: &SceneDelta,
        step: usize,
    ) -> Result<Waypoint> {
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !geom::is_finite(p) || !yaw.is_finite() || !finite(&text.vector) || !finite(&goal.0) || !finite(&scene.0) || !finite(&delta.0) {
            return Err(Error::Numeric("navigator inputs must be finite".into()));
        }
        let row = |v: &[f64]| Mat::from_shape_vec((1, v.len()), v.to_vec()).expect("row");
        let mut g = Graph::new(store);
        let pin = g.input(row(&position_input(p, step)));
        let pos = enc.position.forward(&mut g, pin);
        let t = g.input(row(&text.vector));
        let gf = g.input(row(&goal.0));
        let sf = g.input(row(&scene.0));
        let df = g.input(row(&delta.0));
        let (d, l) = self.decode(&mut g, pos, t, gf, sf, df, 1);
        let d = g.value(d);
        let disp = geom::rotate_y([d[[0, 0]], d[[0, 1]], d[[0, 2]]], yaw);
        let out = Waypoint { position: geom::add(p, disp), confidence: sigmoid(g.value(l)[[0, 0]]) };
        if !geom::is_finite(out.position) || !out.confidence.is_finite() {
            return Err(Error::Numeric("navigator produced a non-finite step".into()));
        }
        Ok(out)
    }
}

/// `S_i − S_{i−1}` within each sequence, zero at each sequence start.
pub fn scene_deltas(g: &mut Graph, scene: Var, seq: usize) -> Var {
    let rows = g.value(scene).nrows();
    let mut prev = Vec::with_capacity(2 * rows / seq);
    for b in 0..rows / seq {
        let first = g.slice_rows(scene, b * seq, b * seq + 1);
        prev.push(first);
        if seq > 1 {
            prev.push(g.slice_rows(scene, b * seq, b * seq + seq - 1));
        }
    }
    let prev = g.concat_rows(&prev);
    g.sub(scene, prev)
}

/// Stacked raw inputs for [`Navigator::forward`].
#[derive(Debug, Clone)]
pub struct NavBatch {
    pub seq: usize,
    pub pos_in: Mat,
    pub text: Mat,
    /// Goal relative to the step's input position, in its heading frame.
    pub goal_in: Mat,
    pub patches: Mat,
    /// Canonical input positions and headings, used to map displacements back.
    pub base: Mat,
    pub cos: Mat,
    pub sin: Mat,
}

impl NavBatch {
    pub fn concat(parts: &[&NavBatch]) -> NavBatch {
        let cat = |f: &dyn Fn(&NavBatch) -> &Mat| {
            let views: Vec<_> = parts.iter().map(|p| f(p).view()).collect();
            ndarray::concatenate(ndarray::Axis(0), &views).expect("matching widths")
        };
        NavBatch {
            seq: parts[0].seq,
            pos_in: cat(&|p| &p.pos_in),
            text: cat(&|p| &p.text),
            goal_in: cat(&|p| &p.goal_in),
            patches: cat(&|p| &p.patches),
            base: cat(&|p| &p.base),
            cos: cat(&|p| &p.cos),
            sin: cat(&|p| &p.sin),
        }
    }

    pub fn rows(&self) -> usize {
        self.pos_in.nrows()
    }
}

/// Canonical predicted positions `base + R(yaw)·disp` as a graph node.
pub fn apply_displacement(g: &mut Graph, disp: Var, batch: &NavBatch) -> Var {
    let dx = g.slice_cols(disp, 0, 1);
    let dy = g.slice_cols(disp, 1, 2);
    let dz = g.slice_cols(disp, 2, 3);
    let c = g.input(batch.cos.clone());
    let s = g.input(batch.sin.clone());
    let a = g.mul(dx, c);
    let b = g.mul(dz, s);
    let px = g.add(a, b);
    let a = g.mul(dz, c);
    let b = g.mul(dx, s);
    let pz = g.sub(a, b);
    let d = g.concat_cols(&[px, dy, pz]);
    let base = g.input(batch.base.clone());
    g.add(base, d)
}

/// One step's raw inputs.
#[derive(Debug, Clone)]
pub struct StepInput {
    pub position: Vec3,
    pub yaw: f64,
    pub goal_rel: Vec3,
    pub patches: Vec<f64>,
    pub step: usize,
}

pub fn batch_from_steps(steps: &[StepInput], text: &TextEmbedding) -> NavBatch {
    let n = steps.len();
    let mut b = NavBatch {
        seq: n,
        pos_in: Mat::zeros((n, POS_INPUT)),
        text: Mat::zeros((n, TEXT_DIM)),
        goal_in: Mat::zeros((n, 3)),
        patches: Mat::zeros((n, crate::encoders::PATCH_COUNT)),
        base: Mat::zeros((n, 3)),
        cos: Mat::zeros((n, 1)),
        sin: Mat::zeros((n, 1)),
    };
    for (i, s) in steps.iter().enumerate() {
        for (k, v) in position_input(s.position, s.step).into_iter().enumerate() {
            b.pos_in[[i, k]] = v;
        }
        for (k, v) in text.vector.iter().enumerate() {
            b.text[[i, k]] = *v;
        }
        for k in 0..3 {
            b.goal_in[[i, k]] = s.goal_rel[k];
            b.base[[i, k]] = s.position[k];
        }
        for (k, v) in s.patches.iter().enumerate() {
            b.patches[[i, k]] = *v;
        }
        b.cos[[i, 0]] = s.yaw.cos();
        b.sin[[i, 0]] = s.yaw.sin();
    }
    b
}

/// Heading after each displacement: the yaw of the last displacement longer
/// than [`HEADING_EPS`], else the previous heading.
pub fn next_heading(yaw: f64, disp: Vec3) -> f64 {
    if disp[0].hypot(disp[2]) > HEADING_EPS {
        geom::yaw_of(disp[0], disp[2])
    } else {
        yaw
    }
}

/// Local occupancy patches around a canonical position.
pub fn local_patches(grid: &OccupancyGrid, canon: &Canon, p: Vec3, yaw: f64) -> Vec<f64> {
    let anchor = canon.to_world([p[0], 0.0, p[2]]);
    extract_local(grid, anchor, canon.yaw + yaw).patch_means()
}

/// Teacher-forced inputs for a canonical ground-truth trajectory `gt`
/// (waypoint 0 is the segment start). Step `i` sees position `gt[i−1]`
/// (`gt[0]` at step 0) and must predict `gt[i]`.
pub fn teacher_steps(timeline: &SceneTimeline, canon: &Canon, gt: &[Vec3], goal: Vec3, frame_offset: usize) -> Vec<StepInput> {
    let mut yaw = 0.0;
    let mut out = Vec::with_capacity(gt.len());
    for i in 0..gt.len() {
        let p = gt[i.saturating_sub(1)];
        if i >= 2 {
            yaw = next_heading(yaw, geom::sub(gt[i - 1], gt[i - 2]));
        }
        let grid = timeline.grid_at(frame_offset + i);
        out.push(StepInput {
            position: p,
            yaw,
            goal_rel: geom::unrotate_y(geom::sub(goal, p), yaw),
            patches: local_patches(grid, canon, p, yaw),
            step: i,
        });
    }
    out
}

/// Per-step rollout diagnostics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RolloutDiagnostics {
    /// `‖Δ_S‖` at each step.
    pub delta_norms: Vec<f64>,
    /// Changed local cells between consecutive steps' windows.
    pub voxel_changes: Vec<usize>,
}

/// Autoregressive rollout from `start` toward `segment_goal` (world frame).
/// Before each step the local grid is re-extracted from the timeline at the
/// current position and heading. Works in the frame at `start` facing the goal.
#[allow(clippy::too_many_arguments)]
pub fn rollout(
    nav: &Navigator,
    enc: &Encoders,
    store: &ParamStore,
    start: Vec3,
    segment_goal: Vec3,
    timeline: &SceneTimeline,
    text: &TextEmbedding,
    frames: usize,
    frame_offset: usize,
) -> Result<(TrajectorySegment, RolloutDiagnostics)> {
    rollout_in_frame(nav, enc, store, &Canon::facing(start, segment_goal), start, segment_goal, timeline, text, frames, frame_offset)
}

/// [`rollout`] in a caller-chosen horizontal frame.
#[allow(clippy::too_many_arguments)]
pub fn rollout_in_frame(
    nav: &Navigator,
    enc: &Encoders,
    store: &ParamStore,
    canon: &Canon,
    start: Vec3,
    segment_goal: Vec3,
    timeline: &SceneTimeline,
    text: &TextEmbedding,
    frames: usize,
    frame_offset: usize,
) -> Result<(TrajectorySegment, RolloutDiagnostics)> {
    if frames == 0 {
        return Err(Error::input("rollout needs at least one frame"));
    }
    let goal = canon.to_local(segment_goal);
    let mut p = canon.to_local(start);
    let mut yaw = 0.0;
    let mut steps: Vec<StepInput> = Vec::with_capacity(frames);
    let mut waypoints = Vec::with_capacity(frames);
    let mut diag = RolloutDiagnostics::default();
    let mut prev_local: Option<(crate::voxel::LocalGrid, SceneFeature)> = None;
    for i in 0..frames {
        let grid = timeline.grid_at(frame_offset + i);
        let local = extract_local(grid, canon.to_world([p[0], 0.0, p[2]]), canon.yaw + yaw);
        let patches = local.patch_means();
        let feat = enc.encode_scene_patches(store, &patches);
        match &prev_local {
            Some((pl, pf)) => {
                diag.voxel_changes.push(crate::voxel::voxel_delta(pl, &local).0);
                diag.delta_norms.push(crate::encoders::scene_feature_delta(&feat, pf)?.norm());
            }
            None => {
                diag.voxel_changes.push(0);
                diag.delta_norms.push(0.0);
            }
        }
        prev_local = Some((local, feat));
        steps.push(StepInput { position: p, yaw, goal_rel: geom::unrotate_y(geom::sub(goal, p), yaw), patches, step: i });
        let batch = batch_from_steps(&steps, text);
        let mut g = Graph::new(store);
        let (d, l) = nav.forward(&mut g, enc, &batch);
        let last = steps.len() - 1;
        let dv = g.value(d);
        let disp = geom::rotate_y([dv[[last, 0]], dv[[last, 1]], dv[[last, 2]]], yaw);
        let conf = sigmoid(g.value(l)[[last, 0]]);
        let next = geom::add(p, disp);
        if !geom::is_finite(next) || !conf.is_finite() {
            return Err(Error::Numeric(format!("navigator diverged at step {i}")));
        }
        waypoints.push(Waypoint { position: canon.to_world(next), confidence: conf });
        if i > 0 {
            yaw = next_heading(yaw, disp);
        }
        p = next;
    }
    Ok((TrajectorySegment { waypoints, frame_offset }, diag))
}

/// Cell-level Dijkstra used as an independent reference in tests.
#[doc(hidden)]
pub fn dijkstra_cost(nav: &NavGrid2D, s: (usize, usize), t: (usize, usize)) -> Option<MoveCount> {
    let n = nav.dims[0] * nav.dims[1];
    let mut best: Vec<Option<MoveCount>> = vec![None; n];
    let mut done = vec![false; n];
    best[nav.idx(s.0, s.1)] = Some(MoveCount::default());
    loop {
        let mut cur: Option<(usize, MoveCount)> = None;
        for i in 0..n {
            if let (false, Some(c)) = (done[i], best[i]) {
                if cur.is_none_or(|(_, b)| c.cost() < b.cost()) {
                    cur = Some((i, c));
                }
            }
        }
        let (i, c) = cur?;
        if i == nav.idx(t.0, t.1) {
            return Some(c);
        }
        done[i] = true;
        for (x, z, diag) in neighbours(nav, i / nav.dims[1], i % nav.dims[1]) {
            let j = nav.idx(x, z);
            let cand = c.step(diag);
            if !done[j] && best[j].is_none_or(|b| cand.cost() < b.cost()) {
                best[j] = Some(cand);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::voxel::{build_from_boxes, Aabb, GridSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_grid(rng: &mut ChaCha8Rng, n: usize, p: f64) -> NavGrid2D {
        let mut g = NavGrid2D::free([0.0, 0.0], 0.1, [n, n]);
        for x in 0..n {
            for z in 0..n {
                if rng.random_bool(p) {
                    g.set_blocked(x, z, true);
                }
            }
        }
        g
    }

    #[test]
    fn trivial_and_open_grid_paths() {
        let g = NavGrid2D::free([0.0, 0.0], 1.0, [10, 10]);
        let p = plan_global(&g, [3.5, 3.5], [3.5, 3.5]).unwrap();
        assert_eq!(p.cells, vec![(3, 3)]);
        assert_eq!(p.cost(), 0.0);
        let p = plan_global(&g, [0.5, 0.5], [9.5, 9.5]).unwrap();
        assert_eq!(p.cost(), 9.0 * SQRT2);
        assert_eq!(p.cells.len(), 10);
    }

    #[test]
    fn wall_with_single_gap() {
        let mut g = NavGrid2D::free([0.0, 0.0], 1.0, [12, 12]);
        for z in 0..12 {
            if z != 8 {
                g.set_blocked(6, z, true);
            }
        }
        let p = plan_global(&g, [1.5, 1.5], [10.5, 1.5]).unwrap();
        assert!(p.cells.contains(&(6, 8)));
        assert_eq!(p.moves, dijkstra_cost(&g, (1, 1), (10, 1)).unwrap());
    }

    #[test]
    fn endpoint_errors() {
        let mut g = NavGrid2D::free([0.0, 0.0], 1.0, [5, 5]);
        g.set_blocked(0, 0, true);
        assert!(matches!(plan_global(&g, [0.5, 0.5], [3.5, 3.5]), Err(Error::UnreachableEndpoint { .. })));
        assert!(matches!(plan_global(&g, [1.5, 0.5], [30.0, 3.5]), Err(Error::UnreachableEndpoint { .. })));
        for z in 0..5 {
            g.set_blocked(2, z, true);
        }
        assert!(matches!(plan_global(&g, [1.5, 0.5], [3.5, 3.5]), Err(Error::NoPath)));
    }

    #[test]
    fn astar_matches_dijkstra_on_random_grids() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..60 {
            let g = random_grid(&mut rng, 24, 0.3);
            let free: Vec<usize> = (0..g.blocked.len()).filter(|&i| !g.blocked[i]).collect();
            let a = free[rng.random_range(0..free.len())];
            let b = free[rng.random_range(0..free.len())];
            let (sa, sb) = ((a / 24, a % 24), (b / 24, b % 24));
            let oracle = dijkstra_cost(&g, sa, sb);
            match plan_global(&g, g.center(sa.0, sa.1), g.center(sb.0, sb.1)) {
                Ok(p) => {
                    assert_eq!(Some(p.moves), oracle);
                    assert!(p.cells.iter().all(|&(x, z)| !g.is_blocked(x, z)));
                    for w in p.cells.windows(2) {
                        assert!(w[0].0.abs_diff(w[1].0) <= 1 && w[0].1.abs_diff(w[1].1) <= 1 && w[0] != w[1]);
                    }
                    assert_eq!(p.cells[0], sa);
                    assert_eq!(*p.cells.last().unwrap(), sb);
                }
                Err(Error::NoPath) => assert!(oracle.is_none()),
                Err(e) => panic!("{e}"),
            }
        }
    }

    #[test]
    fn planning_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = random_grid(&mut rng, 20, 0.2);
        let free: Vec<usize> = (0..g.blocked.len()).filter(|&i| !g.blocked[i]).collect();
        let (a, b) = (free[0], free[free.len() - 1]);
        let p1 = plan_global(&g, g.center(a / 20, a % 20), g.center(b / 20, b % 20));
        let p2 = plan_global(&g, g.center(a / 20, a % 20), g.center(b / 20, b % 20));
        assert_eq!(p1.ok(), p2.ok());
    }

    fn plan_of(points: Vec<Vec2>) -> PathPlan {
        PathPlan { cells: vec![(0, 0); points.len()], world_points: points, moves: MoveCount::default() }
    }

    #[test]
    fn keypoints_on_straight_path() {
        let p = plan_of(vec![[0.0, 0.0], [4.0, 0.0], [10.0, 0.0]]);
        assert_eq!(select_keypoints(&p, 1).unwrap(), vec![[10.0, 0.0, 0.0]]);
        let k = select_keypoints(&p, 2).unwrap();
        assert!((k[0][0] - 5.0).abs() < 1e-12 && k[1] == [10.0, 0.0, 0.0]);
        assert!(select_keypoints(&p, 0).is_err());
    }

    #[test]
    fn keypoints_match_dense_resampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pts: Vec<Vec2> = (0..7).map(|_| [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)]).collect();
        let plan = plan_of(pts.clone());
        let k = select_keypoints(&plan, 5).unwrap();
        // Dense resampling: walk each segment in tiny steps accumulating length.
        let total = polyline_length(&pts);
        let sub = 200_000;
        let mut dense = vec![(0.0, pts[0])];
        let mut acc = 0.0;
        for w in pts.windows(2) {
            let len = ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt();
            for j in 1..=sub {
                let f = j as f64 / sub as f64;
                dense.push((acc + len * f, [w[0][0] + f * (w[1][0] - w[0][0]), w[0][1] + f * (w[1][1] - w[0][1])]));
            }
            acc += len;
        }
        for (i, kp) in k.iter().enumerate() {
            let target = total * (i + 1) as f64 / 5.0;
            let idx = dense.partition_point(|d| d.0 < target).min(dense.len() - 1);
            let (s0, p0) = dense[idx.saturating_sub(1)];
            let (s1, p1) = dense[idx];
            let f = if s1 > s0 { (target - s0) / (s1 - s0) } else { 0.0 };
            let o = [p0[0] + f * (p1[0] - p0[0]), p0[1] + f * (p1[1] - p0[1])];
            assert!((kp[0] - o[0]).abs() < 1e-6 && (kp[2] - o[1]).abs() < 1e-6);
        }
        let mut last = 0.0;
        for kp in &k {
            let mut best = f64::MAX;
            let mut at = 0.0;
            for (s, p) in &dense {
                let d = (p[0] - kp[0]).hypot(p[1] - kp[2]);
                if d < best {
                    best = d;
                    at = *s;
                }
            }
            assert!(at > last);
            last = at;
        }
    }

    #[test]
    fn confidence_law() {
        let z = [[0.0; 3]];
        assert_eq!(confidence_target(&z, &z).unwrap(), vec![1.0]);
        let c = confidence_target(&z, &[[2f64.ln(), 0.0, 0.0]]).unwrap();
        assert!((c[0] - 0.5).abs() < 1e-12);
        assert!(confidence_target(&z, &[]).is_err());
    }

    #[test]
    fn nav_loss_cases() {
        let gt = vec![[0.0, 0.0, 1.0], [0.5, 0.0, 2.0]];
        let (lt, lc) = nav_loss(&gt, &gt, &[1.0, 1.0]).unwrap();
        assert_eq!(lt, 0.0);
        assert!(lc < 1e-9);
        let off: Vec<Vec3> = gt.iter().map(|p| [p[0] + 0.3, p[1], p[2] + 0.4]).collect();
        assert!((nav_loss(&off, &gt, &[0.5, 0.5]).unwrap().0 - 0.25).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 12;
        let pred: Vec<Vec3> = (0..n).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
        let gt: Vec<Vec3> = (0..n).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
        let conf: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..0.99)).collect();
        let (mut lt, mut lc) = (0.0, 0.0);
        for i in 0..n {
            let mut e2 = 0.0;
            for k in 0..3 {
                e2 += (pred[i][k] - gt[i][k]) * (pred[i][k] - gt[i][k]);
            }
            lt += e2;
            let c = (-e2.sqrt()).exp();
            lc += -(c * conf[i].ln() + (1.0 - c) * (1.0 - conf[i]).ln());
        }
        let (a, b) = nav_loss(&pred, &gt, &conf).unwrap();
        assert!((a - lt / n as f64).abs() < 1e-9 && (b - lc / n as f64).abs() < 1e-9);
        assert!(nav_loss(&pred, &gt[..3], &conf).is_err());
    }

    fn scene_spec() -> GridSpec {
        GridSpec::new([0.0, 0.0, 0.0], 0.1, [40, 40, 20]).unwrap()
    }

    #[test]
    fn oracle_walks_straight_in_empty_scene() {
        let tl = SceneTimeline::fixed(OccupancyGrid::empty(scene_spec()).unwrap());
        let seg = oracle_navigator(&tl, [0.55, 0.0, 0.55], [3.55, 0.0, 0.55], 48, 0, &OracleConfig::default()).unwrap();
        assert_eq!(seg.len(), 48);
        for (i, w) in seg.waypoints.iter().enumerate() {
            assert!((w.position[2] - 0.55).abs() < 1e-9);
            assert!((w.position[0] - (0.55 + (i as f64 * 0.04).min(3.0))).abs() < 1e-9);
            assert_eq!(w.confidence, 1.0);
        }
        assert!(oracle_navigator(&tl, [0.55, 0.0, 0.55], [3.55, 0.0, 0.55], 0, 0, &OracleConfig::default()).is_err());
    }

    #[test]
    fn oracle_avoids_appearing_obstacle() {
        let empty = OccupancyGrid::empty(scene_spec()).unwrap();
        let obstacle = Aabb::new([1.8, 0.0, 0.2], [2.2, 1.0, 1.2]);
        let blocked = build_from_boxes(&[obstacle], scene_spec()).unwrap();
        let tl = SceneTimeline::new(vec![(0, empty), (20, blocked.clone())]).unwrap();
        let cfg = OracleConfig::default();
        let seg = oracle_navigator(&tl, [0.55, 0.0, 0.65], [3.55, 0.0, 0.65], 120, 0, &cfg).unwrap();
        let nav = planning_grid(&blocked, cfg.inflation_radius).unwrap();
        for w in &seg.waypoints[20..] {
            assert!(!nav.blocked_at(w.position[0], w.position[2]), "{:?}", w.position);
        }
        let end = seg.waypoints.last().unwrap().position;
        assert!((end[0] - 3.55).abs() < 1e-9 && (end[2] - 0.65).abs() < 1e-9);
    }

    fn model(seed: u64) -> (ParamStore, Encoders, Navigator) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::default();
        let enc = Encoders::new(&mut store, &mut rng);
        let nav = Navigator::new(&mut store, NavigatorConfig::default(), &mut rng);
        (store, enc, nav)
    }

    fn features(store: &ParamStore, enc: &Encoders) -> (TextEmbedding, GoalFeature, SceneFeature, SceneDelta) {
        let text = crate::encoders::embed_text("walk to the door").unwrap();
        let goal = enc.encode_goal(store, [0.0, 0.0, 1.5]);
        let scene = enc.encode_scene_patches(store, &vec![0.1; crate::encoders::PATCH_COUNT]);
        (text, goal, scene, SceneDelta(vec![0.0; FEATURE_DIM]))
    }

    #[test]
    fn zero_heads_give_bias_and_half_confidence() {
        let (mut store, enc, nav) = model(1);
        let (text, goal, scene, delta) = features(&store, &enc);
        let w = nav.predict_step(&store, &enc, [0.0; 3], 0.0, &text, &goal, &scene, &delta, 0).unwrap();
        assert_eq!(w.position, [0.0; 3]);
        assert_eq!(w.confidence, 0.5);
        store.get_mut(nav.head_pos.b).assign(&ndarray::array![[0.1, -0.2, 0.3]]);
        let w2 = nav.predict_step(&store, &enc, [0.0; 3], 0.0, &text, &goal, &scene, &delta, 0).unwrap();
        assert_eq!(w2.position, [0.1, -0.2, 0.3]);
        let w3 = nav.predict_step(&store, &enc, [0.0; 3], 0.0, &text, &goal, &scene, &delta, 0).unwrap();
        assert_eq!(w2, w3);
        let bad = SceneDelta(vec![f64::NAN; FEATURE_DIM]);
        assert!(nav.predict_step(&store, &enc, [0.0; 3], 0.0, &text, &goal, &scene, &bad, 0).is_err());
    }

    #[test]
    fn rollout_shapes_and_determinism() {
        let (store, enc, nav) = model(2);
        let tl = SceneTimeline::fixed(build_from_boxes(&[Aabb::new([1.5, 0.0, 1.0], [2.0, 1.0, 1.5])], scene_spec()).unwrap());
        let text = crate::encoders::embed_text("walk to the box").unwrap();
        let (a, da) = rollout(&nav, &enc, &store, [1.0, 0.0, 1.0], [2.5, 0.0, 2.5], &tl, &text, 12, 0).unwrap();
        let (b, db) = rollout(&nav, &enc, &store, [1.0, 0.0, 1.0], [2.5, 0.0, 2.5], &tl, &text, 12, 0).unwrap();
        assert_eq!(a, b);
        assert_eq!(da, db);
        assert_eq!(a.len(), 12);
        let (one, _) = rollout(&nav, &enc, &store, [1.0, 0.0, 1.0], [2.5, 0.0, 2.5], &tl, &text, 1, 0).unwrap();
        assert_eq!(one.len(), 1);
        assert!(rollout(&nav, &enc, &store, [1.0, 0.0, 1.0], [2.5, 0.0, 2.5], &tl, &text, 0, 0).is_err());
    }

    #[test]
    fn scene_delta_fires_at_the_switch() {
        let (store, enc, nav) = model(3);
        let empty = OccupancyGrid::empty(scene_spec()).unwrap();
        let near = build_from_boxes(&[Aabb::new([1.2, 0.0, 1.2], [1.5, 0.8, 1.5])], scene_spec()).unwrap();
        let far = build_from_boxes(&[Aabb::new([3.2, 0.0, 3.2], [3.5, 0.8, 3.5])], scene_spec()).unwrap();
        let text = crate::encoders::embed_text("walk").unwrap();
        // Zero heads keep the position fixed, so the window only changes with the scene.
        let start = [1.0, 0.0, 1.0];
        let tl = SceneTimeline::new(vec![(0, empty.clone()), (24, near)]).unwrap();
        let (_, d) = rollout(&nav, &enc, &store, start, [1.0, 0.0, 2.0], &tl, &text, 48, 0).unwrap();
        for i in 0..48 {
            assert_eq!(d.voxel_changes[i] > 0, i == 24, "step {i}");
            assert_eq!(d.delta_norms[i] > 0.0, i == 24, "step {i}");
        }
        let tl = SceneTimeline::new(vec![(0, empty), (24, far)]).unwrap();
        let (_, d) = rollout(&nav, &enc, &store, start, [1.0, 0.0, 2.0], &tl, &text, 48, 0).unwrap();
        assert!(d.delta_norms.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn scene_deltas_reset_per_sequence() {
        let store = ParamStore::default();
        let mut g = Graph::new(&store);
        let s = g.input(Mat::from_shape_fn((6, 2), |(i, j)| (i * i + j) as f64));
        let d = scene_deltas(&mut g, s, 3);
        let v = g.value(d);
        assert_eq!(v.row(0).to_vec(), vec![0.0, 0.0]);
        assert_eq!(v.row(1).to_vec(), vec![1.0, 1.0]);
        assert_eq!(v.row(3).to_vec(), vec![0.0, 0.0]);
        assert_eq!(v.row(5).to_vec(), vec![9.0, 9.0]);
    }

    #[test]
    fn teacher_forced_positions_match_rollout_convention() {
        let (store, enc, nav) = model(4);
        let tl = SceneTimeline::fixed(OccupancyGrid::empty(scene_spec()).unwrap());
        let canon = Canon::IDENTITY;
        let gt: Vec<Vec3> = (0..6).map(|i| [0.0, 0.0, 0.04 * i as f64]).collect();
        let steps = teacher_steps(&tl, &canon, &gt, [0.0, 0.0, 1.0], 0);
        assert_eq!(steps[0].position, gt[0]);
        assert_eq!(steps[3].position, gt[2]);
        let batch = batch_from_steps(&steps, &crate::encoders::embed_text("walk").unwrap());
        let mut g = Graph::new(&store);
        let (d, _) = nav.forward(&mut g, &enc, &batch);
        let p = apply_displacement(&mut g, d, &batch);
        // Zero heads: every prediction equals its input position.
        for i in 0..6 {
            for k in 0..3 {
                assert_eq!(g.value(p)[[i, k]], steps[i].position[k]);
            }
        }
    }

    #[test]
    fn support_height_near_box() {
        let g = build_from_boxes(&[Aabb::new([1.0, 0.0, 1.0], [1.5, 0.45, 1.5])], scene_spec()).unwrap();
        assert!((support_height_near(&g, 1.25, 1.25, 0.2, 1.5) - 0.5).abs() < 1e-12);
        assert_eq!(support_height_near(&g, 3.0, 3.0, 0.2, 1.5), 0.0);
    }
}
