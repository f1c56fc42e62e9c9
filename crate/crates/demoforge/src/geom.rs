//! Minimal geometry toolkit: 3-vectors, unit quaternions, axis-aligned boxes.
//!
//! Everything downstream (keyframe repair, rendering, localization) runs on
//! these few primitives, so they are kept dependency-free and in `f64`.
//! Storage types (point clouds, rasters) narrow to `f32` at their own edges.

use serde::{Deserialize, Serialize};

/// World-space vector/position. The world frame is z-up.
pub type Vec3 = [f64; 3];

pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

/// Linear interpolation `a + t * (b - a)`, componentwise.
pub fn lerp(a: Vec3, b: Vec3, t: f64) -> Vec3 {
    add(a, scale(sub(b, a), t))
}

pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub fn dist(a: Vec3, b: Vec3) -> f64 {
    norm(sub(a, b))
}

/// Quaternion in (x, y, z, w) component order, w the scalar part.
///
/// All public constructors produce unit quaternions; consumers that ingest
/// external data check unitness explicitly (see `demo::Pose::is_unit`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quat {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub w: f64,
}

impl Quat {
    pub const IDENTITY: Quat = Quat { x: 0.0, y: 0.0, z: 0.0, w: 1.0 };

    pub fn new(x: f64, y: f64, z: f64, w: f64) -> Quat {
        Quat { x, y, z, w }
    }

    /// Rotation of `angle` radians about the world vertical (+z) axis.
    pub fn from_yaw(angle: f64) -> Quat {
        let half = 0.5 * angle;
        Quat { x: 0.0, y: 0.0, z: half.sin(), w: half.cos() }
    }

    /// Rotation of `angle` radians about `axis` (need not be unit length).
    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Quat {
        let n = norm(axis);
        if n == 0.0 {
            return Quat::IDENTITY;
        }
        let half = 0.5 * angle;
        let s = half.sin() / n;
        Quat { x: axis[0] * s, y: axis[1] * s, z: axis[2] * s, w: half.cos() }
    }

    pub fn norm(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z + self.w * self.w).sqrt()
    }

    pub fn normalized(&self) -> Quat {
        let n = self.norm();
        if n == 0.0 {
            return Quat::IDENTITY;
        }
        Quat { x: self.x / n, y: self.y / n, z: self.z / n, w: self.w / n }
    }

    pub fn dot(&self, other: &Quat) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z + self.w * other.w
    }

    pub fn conjugate(&self) -> Quat {
        Quat { x: -self.x, y: -self.y, z: -self.z, w: self.w }
    }

    fn neg(&self) -> Quat {
        Quat { x: -self.x, y: -self.y, z: -self.z, w: -self.w }
    }

    /// Hamilton product `self * rhs` (apply `rhs` first, then `self`).
    pub fn mul(&self, rhs: &Quat) -> Quat {
        Quat {
            x: self.w * rhs.x + self.x * rhs.w + self.y * rhs.z - self.z * rhs.y,
            y: self.w * rhs.y - self.x * rhs.z + self.y * rhs.w + self.z * rhs.x,
            z: self.w * rhs.z + self.x * rhs.y - self.y * rhs.x + self.z * rhs.w,
            w: self.w * rhs.w - self.x * rhs.x - self.y * rhs.y - self.z * rhs.z,
        }
    }

    /// Rotate a vector by this quaternion (assumed unit).
    pub fn rotate(&self, v: Vec3) -> Vec3 {
        // q * (v, 0) * q^-1, expanded to avoid building intermediates.
        let u = [self.x, self.y, self.z];
        let uv = cross(u, v);
        let uuv = cross(u, uv);
        add(v, add(scale(uv, 2.0 * self.w), scale(uuv, 2.0)))
    }

    /// Shortest rotation angle (radians, in `[0, pi]`) taking `self` to `other`.
    pub fn angle_to(&self, other: &Quat) -> f64 {
        let rel = self.conjugate().mul(other);
        let vec_norm = (rel.x * rel.x + rel.y * rel.y + rel.z * rel.z).sqrt();
        2.0 * vec_norm.atan2(rel.w.abs())
    }

    /// Spherical linear interpolation along the shortest arc.
    ///
    /// `t = 0` yields `self`, `t = 1` yields `other` (up to sign, which
    /// represents the same rotation). Falls back to normalized lerp when the
    /// inputs are nearly parallel.
    pub fn slerp(&self, other: &Quat, t: f64) -> Quat {
        let mut d = self.dot(other);
        let mut end = *other;
        if d < 0.0 {
            end = end.neg();
            d = -d;
        }
        if d > 1.0 - 1e-10 {
            return Quat {
                x: self.x + t * (end.x - self.x),
                y: self.y + t * (end.y - self.y),
                z: self.z + t * (end.z - self.z),
                w: self.w + t * (end.w - self.w),
            }
            .normalized();
        }
        let theta = d.clamp(-1.0, 1.0).acos();
        let sin_theta = theta.sin();
        let wa = ((1.0 - t) * theta).sin() / sin_theta;
        let wb = (t * theta).sin() / sin_theta;
        Quat {
            x: wa * self.x + wb * end.x,
            y: wa * self.y + wb * end.y,
            z: wa * self.z + wb * end.z,
            w: wa * self.w + wb * end.w,
        }
        .normalized()
    }
}

pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Axis-aligned box, `min <= max` componentwise. Bounds are inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Aabb {
        Aabb { min, max }
    }

    pub fn contains(&self, p: Vec3) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }

    pub fn center(&self) -> Vec3 {
        [
            0.5 * (self.min[0] + self.max[0]),
            0.5 * (self.min[1] + self.max[1]),
            0.5 * (self.min[2] + self.max[2]),
        ]
    }

    /// Edge length along one axis.
    pub fn side(&self, axis: usize) -> f64 {
        self.max[axis] - self.min[axis]
    }

    /// Signed distance from `p` to the nearest face: positive inside,
    /// negative (or zero) outside/on the boundary.
    pub fn face_distance(&self, p: Vec3) -> f64 {
        (0..3)
            .map(|a| (p[a] - self.min[a]).min(self.max[a] - p[a]))
            .fold(f64::INFINITY, f64::min)
    }

    /// Entry parameter `t in [0, 1]` at which the segment `a -> b` first
    /// touches the box, or `None` if the segment misses it entirely.
    ///
    /// Slab clipping; axes along which the segment is (numerically) parallel
    /// reject immediately when the start point lies outside that slab.
    pub fn segment_entry(&self, a: Vec3, b: Vec3) -> Option<f64> {
        let d = sub(b, a);
        let mut t0 = 0.0_f64;
        let mut t1 = 1.0_f64;
        for axis in 0..3 {
            if d[axis].abs() < 1e-15 {
                if a[axis] < self.min[axis] || a[axis] > self.max[axis] {
                    return None;
                }
            } else {
                let inv = 1.0 / d[axis];
                let mut ta = (self.min[axis] - a[axis]) * inv;
                let mut tb = (self.max[axis] - a[axis]) * inv;
                if ta > tb {
                    std::mem::swap(&mut ta, &mut tb);
                }
                t0 = t0.max(ta);
                t1 = t1.min(tb);
                if t0 > t1 {
                    return None;
                }
            }
        }
        Some(t0)
    }

    pub fn intersects_segment(&self, a: Vec3, b: Vec3) -> bool {
        self.segment_entry(a, b).is_some()
    }
}
