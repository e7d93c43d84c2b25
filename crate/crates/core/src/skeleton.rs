//! 22-joint marker skeleton, motion containers and a procedural pose generator.
//!
//! Joint order: 0 pelvis, 1 left hip, 2 right hip, 3 spine1, 4 left knee,
//! 5 right knee, 6 spine2, 7 left ankle, 8 right ankle, 9 spine3, 10 left foot,
//! 11 right foot, 12 neck, 13 left collar, 14 right collar, 15 head,
//! 16 left shoulder, 17 right shoulder, 18 left elbow, 19 right elbow,
//! 20 left wrist, 21 right wrist.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{self, Vec3};

pub const NUM_JOINTS: usize = 22;
pub const SEGMENT_FRAMES: usize = 48;
pub const FPS: f64 = 30.0;

pub const PELVIS: usize = 0;
pub const LEFT_FOOT: usize = 10;
pub const RIGHT_FOOT: usize = 11;
pub const RIGHT_WRIST: usize = 21;

/// Parent of every joint; the pelvis is the root.
pub const PARENTS: [Option<usize>; NUM_JOINTS] = [
    None,
    Some(0),
    Some(0),
    Some(0),
    Some(1),
    Some(2),
    Some(3),
    Some(4),
    Some(5),
    Some(6),
    Some(7),
    Some(8),
    Some(9),
    Some(9),
    Some(9),
    Some(12),
    Some(13),
    Some(14),
    Some(16),
    Some(17),
    Some(18),
    Some(19),
];

/// `(parent, child)` pairs, one per non-root joint.
pub fn bones() -> impl Iterator<Item = (usize, usize)> {
    PARENTS.iter().enumerate().filter_map(|(c, p)| p.map(|p| (p, c)))
}

/// Dense motion: `frames × joints × 3` meters, frame-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Motion {
    pub frames: usize,
    pub joints: usize,
    pub data: Vec<f64>,
}

/// A fixed 48-frame block.
pub type MotionSegment = Motion;

impl Motion {
    pub fn zeros(frames: usize, joints: usize) -> Self {
        Motion {
            frames,
            joints,
            data: vec![0.0; frames * joints * 3],
        }
    }

    pub fn segment_zeros() -> Self {
        Motion::zeros(SEGMENT_FRAMES, NUM_JOINTS)
    }

    pub fn from_frames(frames: &[Vec<Vec3>]) -> Result<Self> {
        let joints = frames.first().map_or(NUM_JOINTS, Vec::len);
        let mut data = Vec::with_capacity(frames.len() * joints * 3);
        for f in frames {
            if f.len() != joints {
                return Err(Error::input("frames have differing joint counts"));
            }
            for j in f {
                data.extend_from_slice(j);
            }
        }
        Ok(Motion {
            frames: frames.len(),
            joints,
            data,
        })
    }

    pub fn from_vec(frames: usize, joints: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != frames * joints * 3 {
            return Err(Error::input(format!(
                "motion data has {} values, expected {}",
                data.len(),
                frames * joints * 3
            )));
        }
        Ok(Motion { frames, joints, data })
    }

    pub fn is_segment(&self) -> bool {
        self.frames == SEGMENT_FRAMES && self.joints == NUM_JOINTS
    }

    pub fn check_segment(&self) -> Result<()> {
        if !self.is_segment() {
            return Err(Error::input(format!(
                "expected a {SEGMENT_FRAMES}x{NUM_JOINTS}x3 segment, got {}x{}x3",
                self.frames, self.joints
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn joint(&self, frame: usize, joint: usize) -> Vec3 {
        let o = (frame * self.joints + joint) * 3;
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    #[inline]
    pub fn set_joint(&mut self, frame: usize, joint: usize, v: Vec3) {
        let o = (frame * self.joints + joint) * 3;
        self.data[o..o + 3].copy_from_slice(&v);
    }

    pub fn frame(&self, frame: usize) -> Vec<Vec3> {
        (0..self.joints).map(|j| self.joint(frame, j)).collect()
    }

    pub fn frame_slice(&self, frame: usize) -> &[f64] {
        let w = self.joints * 3;
        &self.data[frame * w..(frame + 1) * w]
    }

    pub fn frame_slice_mut(&mut self, frame: usize) -> &mut [f64] {
        let w = self.joints * 3;
        &mut self.data[frame * w..(frame + 1) * w]
    }

    pub fn root_positions(&self) -> Vec<Vec3> {
        (0..self.frames).map(|f| self.joint(f, PELVIS)).collect()
    }

    /// Frames `[start, end)` as a new motion.
    pub fn slice_frames(&self, start: usize, end: usize) -> Motion {
        let w = self.joints * 3;
        Motion {
            frames: end - start,
            joints: self.joints,
            data: self.data[start * w..end * w].to_vec(),
        }
    }

    pub fn append(&mut self, other: &Motion) -> Result<()> {
        if other.joints != self.joints {
            return Err(Error::input("cannot append motions with different joint counts"));
        }
        self.frames += other.frames;
        self.data.extend_from_slice(&other.data);
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Applies `f` to every joint position.
    pub fn map_points(&self, f: impl Fn(Vec3) -> Vec3) -> Motion {
        let mut out = self.clone();
        for c in out.data.chunks_exact_mut(3) {
            let p = f([c[0], c[1], c[2]]);
            c.copy_from_slice(&p);
        }
        out
    }

    /// JSON lines, one `{"t": i, "joints": [[x,y,z], ...]}` object per frame.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for t in 0..self.frames {
            let line = FrameRecord {
                t,
                joints: self.frame(t),
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut frames = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: FrameRecord = serde_json::from_str(&line)?;
            if rec.t != i {
                return Err(Error::format(format!("frame index {} out of order at line {i}", rec.t)));
            }
            frames.push(rec.joints);
        }
        Motion::from_frames(&frames)
    }
}

#[derive(Serialize, Deserialize)]
struct FrameRecord {
    t: usize,
    joints: Vec<Vec3>,
}

/// Controls for one procedurally generated frame.
#[derive(Debug, Clone, Copy)]
pub struct PoseControl {
    /// Ground-projected root position; the feet rest at this height.
    pub root: Vec3,
    pub yaw: f64,
    /// Gait phase in radians.
    pub phase: f64,
    /// 0 standing still, 1 full walking stride.
    pub stride: f64,
    /// 0 standing, 1 fully seated with the pelvis at `seat_height`.
    pub sit: f64,
    pub seat_height: f64,
    /// 0 arm down, 1 right arm raised forward to head height.
    pub arm_raise: f64,
}

/// Heading of a posed frame from its hip line (left hip sits on local +X).
pub fn body_yaw(frame: &[Vec3]) -> f64 {
    let (l, r) = (frame[1], frame[2]);
    let (lx, lz) = (l[0] - r[0], l[2] - r[2]);
    geom::yaw_of(-lz, lx)
}

pub const STAND_PELVIS_HEIGHT: f64 = 0.92;
const THIGH: f64 = 0.40;
const SHIN: f64 = 0.38;
const HIP_DROP: f64 = 0.07;
const ANKLE_HEIGHT: f64 = 0.07;

fn rot_pitch(v: Vec3, angle: f64) -> Vec3 {
    // Rotation about the lateral (X) axis; positive swings -Y toward +Z.
    let (s, c) = angle.sin_cos();
    [v[0], v[1] * c - v[2] * s, -v[1] * s + v[2] * c]
}

/// Joint positions for one frame in world coordinates.
pub fn procedural_pose(ctl: &PoseControl) -> Vec<Vec3> {
    let mut body = vec![[0.0; 3]; NUM_JOINTS];
    let stride = ctl.stride.clamp(0.0, 1.0);
    let sit = ctl.sit.clamp(0.0, 1.0);
    let ground = ctl.root[1];
    let bob = 0.015 * stride * (2.0 * ctl.phase).cos();
    let pelvis_y = (1.0 - sit) * (ground + STAND_PELVIS_HEIGHT + bob) + sit * ctl.seat_height;
    body[PELVIS] = [0.0, pelvis_y, 0.0];

    let swing = 0.35 * stride * ctl.phase.sin();
    for (side, hip, knee, ankle, foot) in [(1.0, 1, 4, 7, 10), (-1.0, 2, 5, 8, 11)] {
        let hip_p = [0.09 * side, pelvis_y - HIP_DROP, 0.0];
        let leg_swing = swing * side;
        let lift = (0.07 * stride * (ctl.phase * side).sin()).max(0.0);
        let thigh_angle = (1.0 - sit) * leg_swing + sit * std::f64::consts::FRAC_PI_2;
        let knee_p = geom::add(hip_p, rot_pitch([0.0, -THIGH, 0.0], thigh_angle));
        let shin_angle = (1.0 - sit) * (leg_swing - 4.0 * lift);
        let mut ankle_p = geom::add(knee_p, rot_pitch([0.0, -SHIN, 0.0], shin_angle));
        ankle_p[1] = if sit > 0.0 {
            ankle_p[1].max(ground + ANKLE_HEIGHT)
        } else {
            ground + ANKLE_HEIGHT + lift
        };
        body[hip] = hip_p;
        body[knee] = knee_p;
        body[ankle] = ankle_p;
        body[foot] = [ankle_p[0], ankle_p[1] - 0.05, ankle_p[2] + 0.12];
    }

    let spine1 = [0.0, pelvis_y + 0.11, 0.0];
    let spine2 = [0.0, spine1[1] + 0.13, 0.0];
    let spine3 = [0.0, spine2[1] + 0.06, 0.0];
    body[3] = spine1;
    body[6] = spine2;
    body[9] = spine3;
    body[12] = [0.0, spine3[1] + 0.22, 0.0];
    body[15] = [0.0, body[12][1] + 0.12, 0.02];
    for (side, collar, shoulder, elbow, wrist) in [(1.0, 13, 16, 18, 20), (-1.0, 14, 17, 19, 21)] {
        let c = [0.07 * side, spine3[1] + 0.15, 0.0];
        let s = [0.18 * side, c[1], 0.0];
        let raise = if side < 0.0 { ctl.arm_raise.clamp(0.0, 1.0) } else { 0.0 };
        let arm_swing = -swing * side * 0.8 * (1.0 - raise);
        let angle = arm_swing + raise * 1.45;
        let e = geom::add(s, rot_pitch([0.0, -0.27, 0.0], angle));
        let w = geom::add(e, rot_pitch([0.0, -0.25, 0.0], angle + 0.15 * (1.0 - raise)));
        body[collar] = c;
        body[shoulder] = s;
        body[elbow] = e;
        body[wrist] = w;
    }

    body.iter()
        .map(|p| {
            let r = geom::rotate_y(*p, ctl.yaw);
            [r[0] + ctl.root[0], r[1], r[2] + ctl.root[2]]
        })
        .collect()
}

/// Meters of travel per full gait cycle.
pub const CYCLE_LENGTH: f64 = 1.4;
/// Largest heading change per frame, radians.
pub const MAX_TURN: f64 = 0.12;
/// Speed at which the stride reaches full amplitude, m/s.
pub const FULL_STRIDE_SPEED: f64 = 1.2;

/// Per-frame controls of an animated root track.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackFrame {
    /// Ground-projected root position.
    pub root: Vec3,
    pub sit: f64,
    pub seat_height: f64,
    pub arm_raise: f64,
    /// Heading to turn toward instead of the direction of travel.
    pub face: Option<f64>,
}

impl TrackFrame {
    pub fn walking(root: Vec3) -> Self {
        TrackFrame { root, sit: 0.0, seat_height: 0.0, arm_raise: 0.0, face: None }
    }
}

fn wrap_angle(a: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    (a + std::f64::consts::PI).rem_euclid(tau) - std::f64::consts::PI
}

/// Poses along a root track. The heading turns toward the direction of
/// travel at no more than [`MAX_TURN`] per frame, the gait phase advances
/// with distance, and the stride scales with speed.
pub fn animate_track(track: &[TrackFrame], initial_yaw: f64) -> Vec<Vec<Vec3>> {
    let mut yaw = initial_yaw;
    let mut phase = 0.0;
    let mut out = Vec::with_capacity(track.len());
    for f in 0..track.len() {
        let step = if f + 1 < track.len() {
            geom::sub(track[f + 1].root, track[f].root)
        } else if f > 0 {
            geom::sub(track[f].root, track[f - 1].root)
        } else {
            [0.0; 3]
        };
        let step_len = step[0].hypot(step[2]);
        if f > 0 {
            let target = match track[f].face {
                Some(y) => y,
                None if step_len > 1e-3 => geom::yaw_of(step[0], step[2]),
                None => yaw,
            };
            yaw += wrap_angle(target - yaw).clamp(-MAX_TURN, MAX_TURN);
            let moved = geom::dist_xz(track[f].root, track[f - 1].root);
            phase += std::f64::consts::TAU * moved / CYCLE_LENGTH;
        }
        let t = &track[f];
        let speed = step_len * FPS;
        out.push(procedural_pose(&PoseControl {
            root: t.root,
            yaw,
            phase,
            stride: (speed / FULL_STRIDE_SPEED).clamp(0.0, 1.0) * (1.0 - t.sit.clamp(0.0, 1.0)),
            sit: t.sit,
            seat_height: t.seat_height,
            arm_raise: t.arm_raise,
        }));
    }
    out
}

/// First two frames of a walk leaving `start` toward `toward` at `speed`.
pub fn lead_in(start: Vec3, toward: Vec3, speed: f64) -> Vec<Vec<Vec3>> {
    let root = [start[0], 0.0, start[2]];
    let d = geom::sub(toward, root);
    let len = d[0].hypot(d[2]);
    let yaw = if len > 1e-9 { geom::yaw_of(d[0], d[2]) } else { 0.0 };
    let step = geom::rotate_y([0.0, 0.0, speed / FPS], yaw);
    let track: Vec<TrackFrame> = (0..3).map(|i| TrackFrame::walking(geom::add(root, geom::scale(step, i as f64)))).collect();
    let mut frames = animate_track(&track, yaw);
    frames.truncate(2);
    frames
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn skeleton_has_21_bones() {
        assert_eq!(bones().count(), 21);
        for (p, c) in bones() {
            assert!(p < c);
        }
    }

    #[test]
    fn standing_pose_is_upright_and_grounded() {
        let pose = procedural_pose(&PoseControl {
            root: [1.0, 0.0, 2.0],
            yaw: 0.4,
            phase: 0.0,
            stride: 0.0,
            sit: 0.0,
            seat_height: 0.0,
            arm_raise: 0.0,
        });
        assert_eq!(pose.len(), NUM_JOINTS);
        assert!((pose[PELVIS][1] - STAND_PELVIS_HEIGHT).abs() < 1e-12);
        assert!((pose[PELVIS][0] - 1.0).abs() < 1e-12 && (pose[PELVIS][2] - 2.0).abs() < 1e-12);
        assert!(pose[LEFT_FOOT][1] >= 0.0 && pose[LEFT_FOOT][1] < 0.05);
        assert!(pose[15][1] > 1.5);
        assert!((body_yaw(&pose) - 0.4).abs() < 1e-12);
    }

    #[test]
    fn seated_pelvis_at_support_height() {
        let pose = procedural_pose(&PoseControl {
            root: [0.0, 0.0, 0.0],
            yaw: 0.0,
            phase: 0.0,
            stride: 0.0,
            sit: 1.0,
            seat_height: 0.45,
            arm_raise: 0.0,
        });
        assert!((pose[PELVIS][1] - 0.45).abs() < 1e-12);
    }

    #[test]
    fn jsonl_round_trip() {
        let mut m = Motion::zeros(3, 2);
        m.set_joint(1, 1, [0.5, -1.0, 2.25]);
        let mut buf = Vec::new();
        m.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("{\"t\":0,\"joints\":[[0.0,0.0,0.0],[0.0,0.0,0.0]]}\n"));
        let back = Motion::read_jsonl(buf.as_slice()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn animated_track_follows_direction_and_turns_gradually() {
        let track: Vec<TrackFrame> = (0..40)
            .map(|i| {
                let p = if i < 20 { [0.0, 0.0, 0.04 * i as f64] } else { [0.04 * (i - 20) as f64, 0.0, 0.76] };
                TrackFrame::walking(p)
            })
            .collect();
        let frames = animate_track(&track, 0.0);
        assert_eq!(frames.len(), 40);
        assert!(body_yaw(&frames[5]).abs() < 1e-9);
        for w in frames.windows(2) {
            let d = wrap_angle(body_yaw(&w[1]) - body_yaw(&w[0])).abs();
            assert!(d <= MAX_TURN + 1e-9);
        }
        assert!((body_yaw(&frames[39]) - std::f64::consts::FRAC_PI_2).abs() < 1e-6);
        for (f, t) in frames.iter().zip(&track) {
            assert!((f[PELVIS][0] - t.root[0]).abs() < 1e-12 && (f[PELVIS][2] - t.root[2]).abs() < 1e-12);
        }
    }

    #[test]
    fn lead_in_matches_track_animation() {
        let frames = lead_in([1.0, 0.0, 1.0], [2.0, 0.0, 1.0], 1.2);
        assert_eq!(frames.len(), 2);
        assert!((body_yaw(&frames[0]) - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        assert!((frames[1][PELVIS][0] - 1.04).abs() < 1e-12);
    }
}
