//! Evaluation metrics: trajectory/goal error, trajectory similarity,
//! penetration (value, rate, mean, max), MPJPE, foot skating, diversity and
//! a Fréchet distance over kinematic features (`fid_proxy`).
//!
//! Trajectory metrics use the pelvis (joint 0). Penetration tests a fixed
//! set of 253 body sample points per frame: the 22 joints, 3 points along
//! each of the 21 bones and an 8-point ring of radius 0.05 m around each
//! bone midpoint.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{self, Vec3};
use crate::skeleton::{bones, Motion, FPS, LEFT_FOOT, NUM_JOINTS, PELVIS, RIGHT_FOOT};
use crate::voxel::SceneTimeline;

pub const PENETRATION_SCALE: f64 = 100.0;
pub const DEFAULT_TRAJ_TAU: f64 = 0.1;
pub const FOOT_HEIGHT_THRESHOLD: f64 = 0.05;
pub const BONE_FRACTIONS: [f64; 3] = [0.25, 0.5, 0.75];
pub const RING_POINTS: usize = 8;
pub const RING_RADIUS: f64 = 0.05;
pub const FID_REGULARIZER: f64 = 1e-6;

fn check_pair(pred: &[Vec3], gt: &[Vec3]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::input(format!("trajectory lengths differ: {} vs {}", pred.len(), gt.len())));
    }
    if pred.is_empty() {
        return Err(Error::input("trajectories must be non-empty"));
    }
    Ok(())
}

/// Mean per-frame Euclidean position error.
pub fn traj_err(pred: &[Vec3], gt: &[Vec3]) -> Result<f64> {
    check_pair(pred, gt)?;
    Ok(pred.iter().zip(gt).map(|(a, b)| geom::dist(*a, *b)).sum::<f64>() / pred.len() as f64)
}

/// Position error at the last frame.
pub fn goal_err(pred: &[Vec3], gt: &[Vec3]) -> Result<f64> {
    check_pair(pred, gt)?;
    Ok(geom::dist(pred[pred.len() - 1], gt[gt.len() - 1]))
}

/// Fraction of frames whose position error is strictly below `tau`.
pub fn traj_similarity(pred: &[Vec3], gt: &[Vec3], tau: f64) -> Result<f64> {
    check_pair(pred, gt)?;
    if !(tau > 0.0) {
        return Err(Error::input("tau must be positive"));
    }
    let hits = pred.iter().zip(gt).filter(|(a, b)| geom::dist(**a, **b) < tau).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// Number of body sample points per frame for a skeleton with `joints` joints.
pub fn samples_per_frame(joints: usize) -> usize {
    let bones = joints.saturating_sub(1);
    joints + bones * (BONE_FRACTIONS.len() + RING_POINTS)
}

/// Deterministic body sample points for one frame: joints first, then for
/// each bone (in child order) its interpolation points and ring points.
pub fn body_samples(frame: &[Vec3]) -> Vec<Vec3> {
    let mut out = Vec::with_capacity(samples_per_frame(frame.len()));
    out.extend_from_slice(frame);
    for (p, c) in bones() {
        if p >= frame.len() || c >= frame.len() {
            continue;
        }
        let (a, b) = (frame[p], frame[c]);
        for &f in &BONE_FRACTIONS {
            out.push(geom::lerp(a, b, f));
        }
        let d = geom::sub(b, a);
        let len = geom::norm(d);
        let mid = geom::lerp(a, b, 0.5);
        if len < 1e-12 {
            out.extend(std::iter::repeat_n(mid, RING_POINTS));
            continue;
        }
        let dir = geom::scale(d, 1.0 / len);
        let helper = if dir[1].abs() < 0.9 { [0.0, 1.0, 0.0] } else { [1.0, 0.0, 0.0] };
        let u = normalize(cross(dir, helper));
        let v = cross(dir, u);
        for r in 0..RING_POINTS {
            let th = 2.0 * std::f64::consts::PI * r as f64 / RING_POINTS as f64;
            let off = geom::add(geom::scale(u, RING_RADIUS * th.cos()), geom::scale(v, RING_RADIUS * th.sin()));
            out.push(geom::add(mid, off));
        }
    }
    out
}

fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn normalize(a: Vec3) -> Vec3 {
    geom::scale(a, 1.0 / geom::norm(a))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Penetration {
    pub pene_value: f64,
    pub pene_rate: f64,
    pub pene_mean: f64,
    pub pene_max: f64,
}

/// Per-frame count of intersecting samples and samples per frame.
pub fn penetration_counts(motion: &Motion, timeline: &SceneTimeline) -> Vec<(usize, usize)> {
    (0..motion.frames)
        .map(|t| {
            let grid = timeline.grid_at(t);
            let samples = body_samples(&motion.frame(t));
            let hits = samples.iter().filter(|p| grid.query(**p)).count();
            (hits, samples.len())
        })
        .collect()
}

pub fn penetration(motion: &Motion, timeline: &SceneTimeline) -> Result<Penetration> {
    if motion.frames == 0 {
        return Err(Error::input("penetration needs a non-empty motion"));
    }
    Ok(penetration_from_counts(&penetration_counts(motion, timeline)))
}

pub fn penetration_from_counts(counts: &[(usize, usize)]) -> Penetration {
    let frames = counts.len() as f64;
    let value = counts
        .iter()
        .map(|&(h, v)| {
            let f = h as f64 / v as f64;
            f * f
        })
        .sum::<f64>()
        / frames;
    let hits: usize = counts.iter().map(|c| c.0).sum();
    let total: usize = counts.iter().map(|c| c.1).sum();
    Penetration {
        pene_value: PENETRATION_SCALE * value,
        pene_rate: hits as f64 / total as f64,
        pene_mean: hits as f64 / frames,
        pene_max: counts.iter().map(|c| c.0).max().unwrap_or(0) as f64,
    }
}

pub fn mpjpe(pred: &Motion, gt: &Motion) -> Result<f64> {
    if pred.frames != gt.frames || pred.joints != gt.joints {
        return Err(Error::input("mpjpe needs equal motion shapes"));
    }
    if pred.frames == 0 {
        return Err(Error::input("mpjpe needs a non-empty motion"));
    }
    let mut total = 0.0;
    for f in 0..pred.frames {
        for j in 0..pred.joints {
            total += geom::dist(pred.joint(f, j), gt.joint(f, j));
        }
    }
    Ok(total / (pred.frames * pred.joints) as f64)
}

/// Height-damped foot slip: mean over frame transitions and both feet of
/// `speed · max(0, 2 − 2^(h/H))`, with horizontal speed in m/s and `h` the
/// foot height at the start of the transition.
pub fn foot_skating(motion: &Motion) -> Result<f64> {
    if motion.joints <= RIGHT_FOOT {
        return Err(Error::input("foot skating needs the foot joints"));
    }
    if motion.frames < 2 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for t in 0..motion.frames - 1 {
        for foot in [LEFT_FOOT, RIGHT_FOOT] {
            let a = motion.joint(t, foot);
            let b = motion.joint(t + 1, foot);
            let speed = geom::dist_xz(a, b) * FPS;
            let weight = (2.0 - 2f64.powf(a[1] / FOOT_HEIGHT_THRESHOLD)).max(0.0);
            total += speed * weight;
        }
    }
    Ok(total / (2 * (motion.frames - 1)) as f64)
}

/// Disjoint index pairs drawn from seeded shuffles, `floor(n/2)` per shuffle.
pub fn diversity_pairs(n: usize, pairs: usize, seed: u64) -> Vec<(usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(pairs);
    let mut idx: Vec<usize> = (0..n).collect();
    while out.len() < pairs && n >= 2 {
        idx.shuffle(&mut rng);
        for c in idx.chunks_exact(2) {
            if out.len() == pairs {
                break;
            }
            out.push((c[0], c[1]));
        }
    }
    out
}

/// Mean Euclidean distance between seeded random pairs of flattened motions.
pub fn diversity(motions: &[Motion], pairs: usize, seed: u64) -> Result<f64> {
    if motions.len() < 2 {
        return Err(Error::input("diversity needs at least two motions"));
    }
    if pairs == 0 {
        return Err(Error::input("diversity needs at least one pair"));
    }
    let len = motions[0].data.len();
    if motions.iter().any(|m| m.data.len() != len) {
        return Err(Error::input("diversity needs motions of equal shape"));
    }
    let sel = diversity_pairs(motions.len(), pairs, seed);
    let total: f64 = sel
        .iter()
        .map(|&(a, b)| {
            motions[a]
                .data
                .iter()
                .zip(&motions[b].data)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt()
        })
        .sum();
    Ok(total / sel.len() as f64)
}

/// Kinematic descriptor of a motion: per-joint mean speed, root horizontal
/// speed mean and spread, root vertical velocity spread, per-joint pose variance.
pub fn kinematic_features(m: &Motion) -> Vec<f64> {
    let mut f = Vec::with_capacity(2 * m.joints + 3);
    let steps = m.frames.saturating_sub(1).max(1) as f64;
    for j in 0..m.joints {
        let s: f64 = (1..m.frames).map(|t| geom::dist(m.joint(t, j), m.joint(t - 1, j)) * FPS).sum();
        f.push(s / steps);
    }
    let speeds: Vec<f64> = (1..m.frames).map(|t| geom::dist_xz(m.joint(t, PELVIS), m.joint(t - 1, PELVIS)) * FPS).collect();
    let vy: Vec<f64> = (1..m.frames).map(|t| (m.joint(t, PELVIS)[1] - m.joint(t - 1, PELVIS)[1]) * FPS).collect();
    let (sm, ss) = mean_std(&speeds);
    let (_, vs) = mean_std(&vy);
    f.extend([sm, ss, vs]);
    for j in 0..m.joints {
        // Variance of the joint relative to the pelvis.
        let rel: Vec<Vec3> = (0..m.frames).map(|t| geom::sub(m.joint(t, j), m.joint(t, PELVIS))).collect();
        let n = rel.len().max(1) as f64;
        let mean = rel.iter().fold([0.0; 3], |a, r| geom::add(a, *r));
        let mean = geom::scale(mean, 1.0 / n);
        let var = rel.iter().map(|r| geom::dot(geom::sub(*r, mean), geom::sub(*r, mean))).sum::<f64>() / n;
        f.push(var);
    }
    f
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, var.sqrt())
}

/// Sample mean and unbiased covariance of row vectors.
pub fn gaussian_fit(rows: &[Vec<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let n = rows.len();
    let d = rows[0].len();
    let mut mu = DVector::zeros(d);
    for r in rows {
        mu += DVector::from_column_slice(r);
    }
    mu /= n as f64;
    let mut cov = DMatrix::zeros(d, d);
    for r in rows {
        let x = DVector::from_column_slice(r) - &mu;
        cov += &x * x.transpose();
    }
    cov /= (n.max(2) - 1) as f64;
    (mu, cov)
}

fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

/// Fréchet distance between two Gaussians, computed through symmetric
/// square roots: `|μ1−μ2|² + tr(Σ1 + Σ2 − 2 (Σ1^½ Σ2 Σ1^½)^½)`.
pub fn frechet_distance(mu1: &DVector<f64>, cov1: &DMatrix<f64>, mu2: &DVector<f64>, cov2: &DMatrix<f64>) -> f64 {
    let diff = mu1 - mu2;
    let s1 = sym_sqrt(cov1);
    let inner = &s1 * cov2 * &s1;
    let cross = sym_sqrt(&inner);
    diff.dot(&diff) + cov1.trace() + cov2.trace() - 2.0 * cross.trace()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FidProxy {
    pub value: f64,
    /// Set when a covariance was singular and `1e-6·I` was added to both.
    pub regularized: bool,
}

/// Fréchet distance of Gaussian fits to [`kinematic_features`] of two batches.
pub fn fid_proxy(generated: &[Motion], reference: &[Motion]) -> Result<FidProxy> {
    if generated.len() < 2 || reference.len() < 2 {
        return Err(Error::input("fid_proxy needs at least two motions per batch"));
    }
    let fg: Vec<Vec<f64>> = generated.iter().map(kinematic_features).collect();
    let fr: Vec<Vec<f64>> = reference.iter().map(kinematic_features).collect();
    let (mu1, mut c1) = gaussian_fit(&fg);
    let (mu2, mut c2) = gaussian_fit(&fr);
    let min_eig = |c: &DMatrix<f64>| SymmetricEigen::new(c.clone()).eigenvalues.min();
    let regularized = min_eig(&c1) <= 1e-12 || min_eig(&c2) <= 1e-12;
    if regularized {
        let eye = DMatrix::identity(c1.nrows(), c1.ncols()) * FID_REGULARIZER;
        c1 += &eye;
        c2 += &eye;
    }
    let value = frechet_distance(&mu1, &c1, &mu2, &c2).max(0.0);
    Ok(FidProxy { value, regularized })
}

/// Metric record for one evaluated sequence or an aggregate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub traj_sim: f64,
    pub traj_err: f64,
    pub goal_err: f64,
    pub pene_value: f64,
    pub pene_rate: f64,
    pub pene_mean: f64,
    pub pene_max: f64,
    pub mpjpe: Option<f64>,
    pub diversity: Option<f64>,
    pub foot_skating: f64,
    pub fid_proxy: Option<f64>,
}

impl EvalReport {
    pub fn from_parts(traj_sim: f64, traj_err: f64, goal_err: f64, pene: Penetration, mpjpe: Option<f64>, foot_skating: f64) -> Self {
        EvalReport {
            traj_sim,
            traj_err,
            goal_err,
            pene_value: pene.pene_value,
            pene_rate: pene.pene_rate,
            pene_mean: pene.pene_mean,
            pene_max: pene.pene_max,
            mpjpe,
            diversity: None,
            foot_skating,
            fid_proxy: None,
        }
    }
}

pub fn root_trajectory(m: &Motion) -> Vec<Vec3> {
    m.root_positions()
}

pub const DEFAULT_JOINTS: usize = NUM_JOINTS;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::{procedural_pose, PoseControl};
    use crate::voxel::{build_from_boxes, Aabb, GridSpec, OccupancyGrid};
    use rand::Rng;

    fn rand_traj(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec3> {
        (0..n).map(|_| [rng.random_range(-2.0..2.0), rng.random_range(0.0..1.0), rng.random_range(-2.0..2.0)]).collect()
    }

    #[test]
    fn trajectory_error_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = rand_traj(&mut rng, 30);
        assert_eq!(traj_err(&a, &a).unwrap(), 0.0);
        assert_eq!(goal_err(&a, &a).unwrap(), 0.0);
        let shifted: Vec<Vec3> = a.iter().map(|p| [p[0] + 0.3, p[1], p[2] - 0.4]).collect();
        assert!((traj_err(&shifted, &a).unwrap() - 0.5).abs() < 1e-12);
        assert!((goal_err(&shifted, &a).unwrap() - 0.5).abs() < 1e-12);
        let b = rand_traj(&mut rng, 30);
        let mut total = 0.0;
        for i in 0..30 {
            let d = ((a[i][0] - b[i][0]).powi(2) + (a[i][1] - b[i][1]).powi(2) + (a[i][2] - b[i][2]).powi(2)).sqrt();
            total += d;
        }
        assert!((traj_err(&a, &b).unwrap() - total / 30.0).abs() < 1e-9);
        let last = ((a[29][0] - b[29][0]).powi(2) + (a[29][1] - b[29][1]).powi(2) + (a[29][2] - b[29][2]).powi(2)).sqrt();
        assert!((goal_err(&a, &b).unwrap() - last).abs() < 1e-9);
        assert!(traj_err(&a, &b[..3]).is_err());
        assert!(traj_err(&[], &[]).is_err());
    }

    #[test]
    fn trajectory_similarity_cases() {
        let tau = 0.1;
        let a: Vec<Vec3> = (0..10).map(|i| [i as f64, 0.0, 0.0]).collect();
        assert_eq!(traj_similarity(&a, &a, tau).unwrap(), 1.0);
        let far: Vec<Vec3> = a.iter().map(|p| [p[0] + 2.0 * tau, 0.0, 0.0]).collect();
        assert_eq!(traj_similarity(&far, &a, tau).unwrap(), 0.0);
        let half: Vec<Vec3> = a
            .iter()
            .enumerate()
            .map(|(i, p)| if i % 2 == 0 { [p[0] + 0.05, 0.0, 0.0] } else { [p[0] + 0.5, 0.0, 0.0] })
            .collect();
        assert_eq!(traj_similarity(&half, &a, tau).unwrap(), 0.5);
        assert!(traj_similarity(&a, &a, 0.0).is_err());
    }

    #[test]
    fn body_sample_layout() {
        let pose = procedural_pose(&PoseControl {
            root: [0.0; 3],
            yaw: 0.0,
            phase: 0.3,
            stride: 1.0,
            sit: 0.0,
            seat_height: 0.0,
            arm_raise: 0.0,
        });
        let s = body_samples(&pose);
        assert_eq!(s.len(), 253);
        assert_eq!(samples_per_frame(22), 253);
        let shift = [0.4, -0.2, 1.5];
        let moved: Vec<Vec3> = pose.iter().map(|p| geom::add(*p, shift)).collect();
        for (a, b) in s.iter().zip(body_samples(&moved)) {
            for k in 0..3 {
                assert!((a[k] + shift[k] - b[k]).abs() < 1e-12);
            }
        }
        let degenerate = vec![[1.0, 1.0, 1.0]; NUM_JOINTS];
        assert!(body_samples(&degenerate).iter().all(|p| *p == [1.0, 1.0, 1.0]));
    }

    fn scene(boxes: &[Aabb]) -> SceneTimeline {
        let spec = GridSpec::new([-2.0, 0.0, -2.0], 0.1, [40, 40, 20]).unwrap();
        SceneTimeline::fixed(build_from_boxes(boxes, spec).unwrap())
    }

    #[test]
    fn penetration_zero_and_saturated() {
        let mut m = Motion::zeros(5, NUM_JOINTS);
        for f in 0..5 {
            for j in 0..NUM_JOINTS {
                m.set_joint(f, j, [0.1 * j as f64 / 22.0, 1.0, 0.0]);
            }
        }
        let free = penetration(&m, &scene(&[])).unwrap();
        assert_eq!(free, Penetration { pene_value: 0.0, pene_rate: 0.0, pene_mean: 0.0, pene_max: 0.0 });
        let full = penetration(&m, &scene(&[Aabb::new([-3.0; 3], [3.0; 3])])).unwrap();
        assert_eq!(full.pene_value, 100.0);
        assert_eq!(full.pene_rate, 1.0);
        assert_eq!(full.pene_mean, 253.0);
        assert_eq!(full.pene_max, 253.0);
    }

    #[test]
    fn static_timeline_equals_duplicated_states() {
        let boxes = [Aabb::new([0.0, 0.0, 0.0], [0.5, 1.0, 0.5])];
        let tl = scene(&boxes);
        let g: OccupancyGrid = tl.grid_at(0).clone();
        let twice = SceneTimeline::new(vec![(0, g.clone()), (3, g)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut m = Motion::zeros(6, NUM_JOINTS);
        for v in m.data.iter_mut() {
            *v = rng.random_range(-0.5..1.2);
        }
        assert_eq!(penetration(&m, &tl).unwrap(), penetration(&m, &twice).unwrap());
    }

    #[test]
    fn mpjpe_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut a = Motion::zeros(4, NUM_JOINTS);
        a.data.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        assert_eq!(mpjpe(&a, &a).unwrap(), 0.0);
        let b = a.map_points(|p| [p[0], p[1] + 0.25, p[2]]);
        assert!((mpjpe(&b, &a).unwrap() - 0.25).abs() < 1e-12);
        let mut c = Motion::zeros(4, NUM_JOINTS);
        c.data.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        let mut total = 0.0;
        for i in 0..4 * NUM_JOINTS {
            let d: f64 = (0..3).map(|k| (a.data[i * 3 + k] - c.data[i * 3 + k]).powi(2)).sum();
            total += d.sqrt();
        }
        assert!((mpjpe(&a, &c).unwrap() - total / (4 * NUM_JOINTS) as f64).abs() < 1e-9);
        assert!(mpjpe(&a, &Motion::zeros(3, NUM_JOINTS)).is_err());
    }

    #[test]
    fn foot_skating_cases() {
        let mut high = Motion::zeros(10, NUM_JOINTS);
        let mut planted = Motion::zeros(10, NUM_JOINTS);
        let mut sliding = Motion::zeros(10, NUM_JOINTS);
        for t in 0..10 {
            for foot in [LEFT_FOOT, RIGHT_FOOT] {
                high.set_joint(t, foot, [t as f64, 0.2, 0.0]);
                planted.set_joint(t, foot, [0.3, 0.0, 0.0]);
                sliding.set_joint(t, foot, [t as f64 / FPS, 0.0, 0.0]);
            }
        }
        assert_eq!(foot_skating(&high).unwrap(), 0.0);
        assert_eq!(foot_skating(&planted).unwrap(), 0.0);
        assert!((foot_skating(&sliding).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn diversity_cases() {
        let a = Motion::zeros(2, NUM_JOINTS);
        assert_eq!(diversity(&[a.clone(), a.clone(), a.clone()], 5, 1).unwrap(), 0.0);
        let mut b = a.clone();
        b.data[0] = 3.0;
        b.data[1] = 4.0;
        assert!((diversity(&[a.clone(), b.clone()], 4, 2).unwrap() - 5.0).abs() < 1e-12);
        assert!(diversity(&[a.clone()], 1, 0).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let batch: Vec<Motion> = (0..7)
            .map(|_| {
                let mut m = Motion::zeros(3, NUM_JOINTS);
                m.data.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
                m
            })
            .collect();
        let pairs = diversity_pairs(7, 10, 42);
        assert_eq!(pairs.len(), 10);
        let mut total = 0.0;
        for (i, j) in &pairs {
            assert_ne!(i, j);
            let mut s = 0.0;
            for k in 0..batch[*i].data.len() {
                s += (batch[*i].data[k] - batch[*j].data[k]).powi(2);
            }
            total += s.sqrt();
        }
        assert!((diversity(&batch, 10, 42).unwrap() - total / 10.0).abs() < 1e-9);
    }

    #[test]
    fn frechet_closed_form_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let a: DMatrix<f64> = DMatrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0));
        let cov = &a * a.transpose() + DMatrix::identity(4, 4) * 0.1;
        let mu1 = DVector::from_vec(vec![0.0, 1.0, 2.0, 3.0]);
        let mu2 = DVector::from_vec(vec![0.5, 1.0, 2.0, 3.0]);
        let d = frechet_distance(&mu1, &cov, &mu2, &cov);
        assert!((d - 0.25).abs() < 1e-9);
    }

    #[test]
    fn frechet_matches_product_eigenvalue_route() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..10 {
            let n = 5;
            let a: DMatrix<f64> = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let b: DMatrix<f64> = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let c1 = &a * a.transpose() + DMatrix::identity(n, n) * 0.05;
            let c2 = &b * b.transpose() + DMatrix::identity(n, n) * 0.05;
            let mu1: DVector<f64> = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            let mu2: DVector<f64> = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            // tr((Σ1Σ2)^½) = Σ sqrt(λ_i(Σ1Σ2)); the product has a real non-negative spectrum.
            let prod = &c1 * &c2;
            let eig = prod.clone().schur().complex_eigenvalues();
            let tr_sqrt: f64 = eig.iter().map(|z| z.re.max(0.0).sqrt()).sum();
            let diff = &mu1 - &mu2;
            let oracle = diff.dot(&diff) + c1.trace() + c2.trace() - 2.0 * tr_sqrt;
            let ours = frechet_distance(&mu1, &c1, &mu2, &c2);
            assert!((ours - oracle).abs() < 1e-6, "{ours} vs {oracle}");
        }
    }

    #[test]
    fn fid_proxy_identical_batches_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let batch: Vec<Motion> = (0..6)
            .map(|_| {
                let mut m = Motion::zeros(8, NUM_JOINTS);
                m.data.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
                m
            })
            .collect();
        let r = fid_proxy(&batch, &batch).unwrap();
        assert!(r.value.abs() < 1e-6, "{r:?}");
        assert!(r.regularized);
        assert!(fid_proxy(&batch[..1], &batch).is_err());
    }
}
