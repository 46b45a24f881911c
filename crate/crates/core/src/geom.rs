//! Planar geometry helpers shared by the map, controller and metric code.

use std::f64::consts::PI;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

/// A point or vector in the scene frame, meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    /// Unit vector pointing along `heading` (radians, counterclockwise from +x).
    pub fn from_heading(heading: f64) -> Self {
        Self::new(heading.cos(), heading.sin())
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// z-component of the 3D cross product; positive when `other` is to the left.
    pub fn cross(self, other: Vec2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, other: Vec2) -> f64 {
        (self - other).norm()
    }

    pub fn heading(self) -> f64 {
        self.y.atan2(self.x)
    }

    /// Left-hand normal (rotated +90°).
    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    pub fn normalized(self) -> Vec2 {
        let n = self.norm();
        Vec2::new(self.x / n, self.y / n)
    }

    pub fn rotate(self, angle: f64) -> Vec2 {
        let (s, c) = angle.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn lerp(self, other: Vec2, t: f64) -> Vec2 {
        Vec2::new(
            self.x + (other.x - self.x) * t,
            self.y + (other.y - self.y) * t,
        )
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl From<[f64; 2]> for Vec2 {
    fn from(v: [f64; 2]) -> Self {
        Vec2::new(v[0], v[1])
    }
}

impl From<Vec2> for [f64; 2] {
    fn from(v: Vec2) -> Self {
        [v.x, v.y]
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl AddAssign for Vec2 {
    fn add_assign(&mut self, o: Vec2) {
        self.x += o.x;
        self.y += o.y;
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.y * k)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Wraps an angle into (-π, π].
pub fn wrap_angle(angle: f64) -> f64 {
    let mut a = angle % (2.0 * PI);
    if a <= -PI {
        a += 2.0 * PI;
    } else if a > PI {
        a -= 2.0 * PI;
    }
    a
}

/// Closest point on segment `[a, b]` to `p`, returned as the clamped segment parameter.
pub fn segment_param(a: Vec2, b: Vec2, p: Vec2) -> f64 {
    let d = b - a;
    let len2 = d.dot(d);
    if len2 == 0.0 {
        return 0.0;
    }
    ((p - a).dot(d) / len2).clamp(0.0, 1.0)
}

/// Euclidean distance from `p` to segment `[a, b]`.
pub fn segment_distance(a: Vec2, b: Vec2, p: Vec2) -> f64 {
    let t = segment_param(a, b, p);
    a.lerp(b, t).distance(p)
}

/// Cumulative arc length at every vertex of `points`; first entry is 0.
pub fn cumulative_lengths(points: &[Vec2]) -> Vec<f64> {
    let mut cum = Vec::with_capacity(points.len());
    let mut acc = 0.0;
    cum.push(0.0);
    for w in points.windows(2) {
        acc += w[0].distance(w[1]);
        cum.push(acc);
    }
    cum
}

/// Result of projecting a point onto a polyline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolylineProjection {
    /// Arc length of the foot point.
    pub arc_s: f64,
    /// Euclidean distance to the foot point.
    pub distance: f64,
    /// Signed offset, positive left of the travel direction; |lateral| == distance.
    pub lateral: f64,
    /// Direction of the segment holding the foot point.
    pub heading: f64,
    pub segment: usize,
}

/// Projects `p` onto the polyline restricted to segments overlapping `[s_min, s_max]`.
///
/// Ties between segments keep the lowest arc position.
pub fn project_polyline(
    points: &[Vec2],
    cum: &[f64],
    p: Vec2,
    s_min: f64,
    s_max: f64,
) -> Option<PolylineProjection> {
    let mut best: Option<PolylineProjection> = None;
    for i in 0..points.len().saturating_sub(1) {
        let (s0, s1) = (cum[i], cum[i + 1]);
        if s1 < s_min || s0 > s_max || s1 <= s0 {
            continue;
        }
        let (a, b) = (points[i], points[i + 1]);
        let seg_len = s1 - s0;
        let t_lo = ((s_min - s0) / seg_len).clamp(0.0, 1.0);
        let t_hi = ((s_max - s0) / seg_len).clamp(0.0, 1.0);
        let t = segment_param(a, b, p).clamp(t_lo, t_hi);
        let foot = a.lerp(b, t);
        let dist = foot.distance(p);
        if best.is_none_or(|bp| dist < bp.distance) {
            let dir = b - a;
            let sign = if dir.cross(p - foot) >= 0.0 { 1.0 } else { -1.0 };
            best = Some(PolylineProjection {
                arc_s: s0 + t * seg_len,
                distance: dist,
                lateral: sign * dist,
                heading: dir.heading(),
                segment: i,
            });
        }
    }
    best
}

/// Point and heading at arc length `s` along a polyline.
///
/// At an interior vertex the heading of the following segment is used.
pub fn sample_polyline(points: &[Vec2], cum: &[f64], s: f64) -> (Vec2, f64) {
    let n = points.len();
    debug_assert!(n >= 2);
    // last segment with cum[i] <= s
    let mut i = match cum.binary_search_by(|c| c.total_cmp(&s)) {
        Ok(i) => i,
        Err(i) => i.saturating_sub(1),
    };
    if i >= n - 1 {
        i = n - 2;
    }
    // skip zero-length segments so headings stay defined
    while i + 1 < n - 1 && cum[i + 1] <= cum[i] {
        i += 1;
    }
    let seg_len = cum[i + 1] - cum[i];
    let t = if seg_len > 0.0 {
        ((s - cum[i]) / seg_len).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let heading = (points[i + 1] - points[i]).heading();
    (points[i].lerp(points[i + 1], t), heading)
}
