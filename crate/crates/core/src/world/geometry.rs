//! Planar primitives: oriented boxes, simple polygons, polylines.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec2 = [f64; 2];

const EDGE_EPS: f64 = 1e-9;

#[inline]
pub fn sub(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
pub fn add(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] + b[0], a[1] + b[1]]
}

#[inline]
pub fn scale(a: Vec2, s: f64) -> Vec2 {
    [a[0] * s, a[1] * s]
}

#[inline]
pub fn dot(a: Vec2, b: Vec2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

#[inline]
pub fn cross(a: Vec2, b: Vec2) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

#[inline]
pub fn norm(a: Vec2) -> f64 {
    a[0].hypot(a[1])
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    r
}

/// Position plus heading (radians, CCW from +x).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pose {
    pub position: Vec2,
    pub heading: f64,
}

/// Oriented rectangle given by center, heading and half extents.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Obb {
    pub center: Vec2,
    pub heading: f64,
    pub half_length: f64,
    pub half_width: f64,
}

impl Obb {
    pub fn new(center: Vec2, heading: f64, half_length: f64, half_width: f64) -> Self {
        Self {
            center,
            heading,
            half_length,
            half_width,
        }
    }

    pub fn axes(&self) -> [Vec2; 2] {
        let (s, c) = self.heading.sin_cos();
        [[c, s], [-s, c]]
    }

    /// Corners in CCW order starting rear-right.
    pub fn corners(&self) -> [Vec2; 4] {
        let [u, v] = self.axes();
        let l = scale(u, self.half_length);
        let w = scale(v, self.half_width);
        let c = self.center;
        [
            sub(sub(c, l), w),
            sub(add(c, l), w),
            add(add(c, l), w),
            add(sub(c, l), w),
        ]
    }

    pub fn bounding_radius(&self) -> f64 {
        self.half_length.hypot(self.half_width)
    }

    fn project(&self, axis: Vec2) -> (f64, f64) {
        let [u, v] = self.axes();
        let c = dot(self.center, axis);
        let r = self.half_length * dot(u, axis).abs() + self.half_width * dot(v, axis).abs();
        (c - r, c + r)
    }

    /// Separating-axis test. Touching boxes count as overlapping.
    pub fn overlaps(&self, other: &Obb) -> bool {
        let d = sub(self.center, other.center);
        let reach = self.bounding_radius() + other.bounding_radius();
        if dot(d, d) > reach * reach {
            return false;
        }
        self.axes().iter().chain(other.axes().iter()).all(|&axis| {
            let (a0, a1) = self.project(axis);
            let (b0, b1) = other.project(axis);
            a1 >= b0 && b1 >= a0
        })
    }

    /// Smallest interval overlap over the four candidate axes; negative when
    /// the boxes are separated.
    pub fn penetration(&self, other: &Obb) -> f64 {
        self.axes()
            .iter()
            .chain(other.axes().iter())
            .map(|&axis| {
                let (a0, a1) = self.project(axis);
                let (b0, b1) = other.project(axis);
                a1.min(b1) - a0.max(b0)
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Boundary-inclusive containment of a point.
    pub fn contains(&self, p: Vec2) -> bool {
        let [u, v] = self.axes();
        let d = sub(p, self.center);
        dot(d, u).abs() <= self.half_length + EDGE_EPS && dot(d, v).abs() <= self.half_width + EDGE_EPS
    }
}

/// True when segments `p0p1` and `q0q1` share at least one point.
pub fn segments_intersect(p0: Vec2, p1: Vec2, q0: Vec2, q1: Vec2) -> bool {
    let d1 = cross(sub(q1, q0), sub(p0, q0));
    let d2 = cross(sub(q1, q0), sub(p1, q0));
    let d3 = cross(sub(p1, p0), sub(q0, p0));
    let d4 = cross(sub(p1, p0), sub(q1, p0));
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(q0, q1, p0))
        || (d2 == 0.0 && on_segment(q0, q1, p1))
        || (d3 == 0.0 && on_segment(p0, p1, q0))
        || (d4 == 0.0 && on_segment(p0, p1, q1))
}

fn on_segment(a: Vec2, b: Vec2, p: Vec2) -> bool {
    p[0] >= a[0].min(b[0]) && p[0] <= a[0].max(b[0]) && p[1] >= a[1].min(b[1]) && p[1] <= a[1].max(b[1])
}

fn point_segment_dist(p: Vec2, a: Vec2, b: Vec2) -> (f64, f64) {
    let ab = sub(b, a);
    let len2 = dot(ab, ab);
    let t = if len2 > 0.0 {
        (dot(sub(p, a), ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (norm(sub(p, add(a, scale(ab, t)))), t)
}

/// Simple polygon with counter-clockwise vertex order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Polygon {
    pub vertices: Vec<Vec2>,
}

impl Polygon {
    pub fn new(vertices: Vec<Vec2>) -> Result<Self> {
        let p = Self { vertices };
        p.validate()?;
        Ok(p)
    }

    /// Axis-aligned rectangle `[x0, x1] × [y0, y1]`.
    pub fn rect(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        Self {
            vertices: vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]],
        }
    }

    pub fn signed_area(&self) -> f64 {
        let n = self.vertices.len();
        (0..n)
            .map(|i| cross(self.vertices[i], self.vertices[(i + 1) % n]))
            .sum::<f64>()
            * 0.5
    }

    pub fn centroid(&self) -> Vec2 {
        let n = self.vertices.len();
        let a = self.signed_area();
        let (mut cx, mut cy) = (0.0, 0.0);
        for i in 0..n {
            let p = self.vertices[i];
            let q = self.vertices[(i + 1) % n];
            let w = cross(p, q);
            cx += (p[0] + q[0]) * w;
            cy += (p[1] + q[1]) * w;
        }
        [cx / (6.0 * a), cy / (6.0 * a)]
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        if n < 3 {
            return Err(Error::invalid("polygon needs at least 3 vertices"));
        }
        if self.vertices.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("polygon vertex not finite"));
        }
        if self.signed_area() <= 0.0 {
            return Err(Error::invalid("polygon must be counter-clockwise"));
        }
        for i in 0..n {
            let (a0, a1) = (self.vertices[i], self.vertices[(i + 1) % n]);
            for j in (i + 1)..n {
                let adjacent = j == i + 1 || (i == 0 && j == n - 1);
                if adjacent {
                    continue;
                }
                let (b0, b1) = (self.vertices[j], self.vertices[(j + 1) % n]);
                if segments_intersect(a0, a1, b0, b1) {
                    return Err(Error::invalid(format!(
                        "polygon edges {i} and {j} intersect"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Point-in-polygon; points on the boundary count as inside.
    pub fn contains(&self, p: Vec2) -> bool {
        let n = self.vertices.len();
        let mut inside = false;
        for i in 0..n {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            if point_segment_dist(p, a, b).0 <= EDGE_EPS {
                return true;
            }
            if (a[1] > p[1]) != (b[1] > p[1]) {
                let x = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
                if p[0] < x {
                    inside = !inside;
                }
            }
        }
        inside
    }
}

/// Projection of a point onto a polyline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    /// Arc-length coordinate of the foot point.
    pub s: f64,
    /// Distance from the point to the foot point.
    pub dist: f64,
    /// Unit tangent of the segment holding the foot point.
    pub tangent: Vec2,
}

/// Closest-point projection onto an open polyline (at least 2 vertices).
pub fn project_onto_polyline(points: &[Vec2], p: Vec2) -> Projection {
    debug_assert!(points.len() >= 2);
    let mut best = Projection {
        s: 0.0,
        dist: f64::INFINITY,
        tangent: [1.0, 0.0],
    };
    let mut s0 = 0.0;
    for w in points.windows(2) {
        let seg = sub(w[1], w[0]);
        let len = norm(seg);
        let (d, t) = point_segment_dist(p, w[0], w[1]);
        if d < best.dist {
            let tangent = if len > 0.0 {
                scale(seg, 1.0 / len)
            } else {
                best.tangent
            };
            best = Projection {
                s: s0 + t * len,
                dist: d,
                tangent,
            };
        }
        s0 += len;
    }
    best
}

/// Point at arc length `s` along a polyline, clamped to its ends, with the
/// local unit tangent.
pub fn point_at_arclength(points: &[Vec2], s: f64) -> (Vec2, Vec2) {
    let mut remaining = s.max(0.0);
    let mut last_t = [1.0, 0.0];
    for w in points.windows(2) {
        let seg = sub(w[1], w[0]);
        let len = norm(seg);
        if len == 0.0 {
            continue;
        }
        last_t = scale(seg, 1.0 / len);
        if remaining <= len {
            return (add(w[0], scale(last_t, remaining)), last_t);
        }
        remaining -= len;
    }
    let end = *points.last().expect("non-empty polyline");
    (add(end, scale(last_t, remaining)), last_t)
}

pub fn polyline_length(points: &[Vec2]) -> f64 {
    points.windows(2).map(|w| norm(sub(w[1], w[0]))).sum()
}
