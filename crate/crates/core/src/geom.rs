//! Small fixed-size vector helpers. World axes: X and Z span the floor, Y is up.

pub type Vec3 = [f64; 3];
pub type Vec2 = [f64; 2];

#[inline]
pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn dist(a: Vec3, b: Vec3) -> f64 {
    norm(sub(a, b))
}

#[inline]
pub fn lerp(a: Vec3, b: Vec3, t: f64) -> Vec3 {
    [
        a[0] + (b[0] - a[0]) * t,
        a[1] + (b[1] - a[1]) * t,
        a[2] + (b[2] - a[2]) * t,
    ]
}

/// Horizontal (X-Z) distance.
#[inline]
pub fn dist_xz(a: Vec3, b: Vec3) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Heading angle of a horizontal direction; yaw 0 faces +Z, yaw π/2 faces +X.
#[inline]
pub fn yaw_of(dx: f64, dz: f64) -> f64 {
    dx.atan2(dz)
}

/// `yaw.sin_cos()`, exact at multiples of a quarter turn.
pub fn sin_cos_exact(yaw: f64) -> (f64, f64) {
    let q = yaw / std::f64::consts::FRAC_PI_2;
    let r = q.round();
    if (q - r).abs() < 1e-12 {
        match (r as i64).rem_euclid(4) {
            0 => (0.0, 1.0),
            1 => (1.0, 0.0),
            2 => (0.0, -1.0),
            _ => (-1.0, 0.0),
        }
    } else {
        yaw.sin_cos()
    }
}

/// Rotates a vector about the vertical axis so that local +Z maps to the `yaw` heading.
#[inline]
pub fn rotate_y(v: Vec3, yaw: f64) -> Vec3 {
    let (s, c) = yaw.sin_cos();
    [v[0] * c + v[2] * s, v[1], -v[0] * s + v[2] * c]
}

/// Inverse of [`rotate_y`].
#[inline]
pub fn unrotate_y(v: Vec3, yaw: f64) -> Vec3 {
    rotate_y(v, -yaw)
}

pub fn is_finite(v: Vec3) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Horizontal rigid frame: an origin on the floor plane and a heading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Canon {
    pub origin: Vec2,
    pub yaw: f64,
}

impl Canon {
    pub const IDENTITY: Canon = Canon { origin: [0.0, 0.0], yaw: 0.0 };

    /// Frame at `from` whose +Z axis points at `to`; yaw 0 when they coincide horizontally.
    pub fn facing(from: Vec3, to: Vec3) -> Self {
        let (dx, dz) = (to[0] - from[0], to[2] - from[2]);
        let yaw = if dx.abs() + dz.abs() > 1e-12 { yaw_of(dx, dz) } else { 0.0 };
        Canon { origin: [from[0], from[2]], yaw }
    }

    pub fn to_local(&self, p: Vec3) -> Vec3 {
        unrotate_y([p[0] - self.origin[0], p[1], p[2] - self.origin[1]], self.yaw)
    }

    pub fn to_world(&self, p: Vec3) -> Vec3 {
        let r = rotate_y(p, self.yaw);
        [r[0] + self.origin[0], r[1], r[2] + self.origin[1]]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canon_maps_target_onto_positive_z() {
        let c = Canon::facing([1.0, 0.0, 2.0], [4.0, 0.5, 6.0]);
        let l = c.to_local([4.0, 0.5, 6.0]);
        assert!(l[0].abs() < 1e-12 && (l[1] - 0.5).abs() < 1e-12 && (l[2] - 5.0).abs() < 1e-12);
        let w = c.to_world(l);
        assert!(dist(w, [4.0, 0.5, 6.0]) < 1e-12);
        assert_eq!(c.to_local([1.0, 0.0, 2.0]), [0.0, 0.0, 0.0]);
    }

    #[test]
    fn rotation_round_trip() {
        let v = [0.3, 1.0, -2.0];
        let r = unrotate_y(rotate_y(v, 0.7), 0.7);
        for i in 0..3 {
            assert!((r[i] - v[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_maps_to_heading() {
        let yaw = yaw_of(1.0, 0.0);
        let f = rotate_y([0.0, 0.0, 1.0], yaw);
        assert!((f[0] - 1.0).abs() < 1e-12 && f[2].abs() < 1e-12);
    }
}
