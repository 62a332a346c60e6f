//! Rigid transforms in continuous `(x = col, y = row)` coordinates.

use serde::{Deserialize, Serialize};

use crate::domain::Displacement;

/// Rotation by `angle` radians about `center`, followed by `translation`:
/// `p ↦ R(angle)·(p − center) + center + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub angle: f64,
    pub translation: [f64; 2],
    pub center: [f64; 2],
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

#[inline]
fn rotate(angle: f64, [x, y]: [f64; 2]) -> [f64; 2] {
    let (s, c) = angle.sin_cos();
    [c * x - s * y, s * x + c * y]
}

impl RigidTransform {
    pub const fn identity() -> Self {
        Self {
            angle: 0.0,
            translation: [0.0, 0.0],
            center: [0.0, 0.0],
        }
    }

    pub const fn translation(tx: f64, ty: f64) -> Self {
        Self {
            angle: 0.0,
            translation: [tx, ty],
            center: [0.0, 0.0],
        }
    }

    /// Pure translation moving a point by `-χ`. This is the map from the
    /// shifted floating frame back onto the reference frame.
    pub fn from_displacement(chi: Displacement) -> Self {
        Self::translation(-(chi.col as f64), -(chi.row as f64))
    }

    pub const fn rotation_about(angle: f64, center: [f64; 2]) -> Self {
        Self {
            angle,
            translation: [0.0, 0.0],
            center,
        }
    }

    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        let [rx, ry] = rotate(self.angle, [p[0] - self.center[0], p[1] - self.center[1]]);
        [
            rx + self.center[0] + self.translation[0],
            ry + self.center[1] + self.translation[1],
        ]
    }

    /// Affine offset `d` in `p ↦ R·p + d`.
    fn offset(&self) -> [f64; 2] {
        let [rx, ry] = rotate(self.angle, self.center);
        [
            self.center[0] - rx + self.translation[0],
            self.center[1] - ry + self.translation[1],
        ]
    }

    /// Rebuilds a transform with rotation `angle`, offset `d` and the given pivot.
    fn from_offset(angle: f64, d: [f64; 2], center: [f64; 2]) -> Self {
        let [rx, ry] = rotate(angle, center);
        Self {
            angle,
            translation: [d[0] - center[0] + rx, d[1] - center[1] + ry],
            center,
        }
    }

    pub fn inverse(&self) -> Self {
        let d = self.offset();
        let [ix, iy] = rotate(-self.angle, d);
        Self::from_offset(-self.angle, [-ix, -iy], self.center)
    }

    /// Applies `inner` first, then `outer`. The result keeps `inner`'s pivot.
    pub fn compose(outer: &RigidTransform, inner: &RigidTransform) -> RigidTransform {
        let d_in = inner.offset();
        let d_out = outer.offset();
        let [rx, ry] = rotate(outer.angle, d_in);
        let angle = wrap_angle(outer.angle + inner.angle);
        Self::from_offset(angle, [rx + d_out[0], ry + d_out[1]], inner.center)
    }

    /// `self` followed by `next`.
    pub fn then(&self, next: &RigidTransform) -> RigidTransform {
        Self::compose(next, self)
    }
}

/// Wraps an angle into `[-π, π)`.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let mut w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w >= PI {
        w -= 2.0 * PI;
    }
    w
}

/// Smallest absolute difference between two angles.
pub fn angle_distance(a: f64, b: f64) -> f64 {
    wrap_angle(a - b).abs()
}
