//! Planar geometry for polylines, frames, and headings.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn dist(&self, other: Point) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }
}

/// Wrap an angle into (−π, π].
pub fn wrap_angle(theta: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    let mut w = theta.rem_euclid(tau);
    if w > std::f64::consts::PI {
        w -= tau;
    }
    w
}

/// A rigid 2-D pose used to move coordinates between frames.
#[derive(Debug, Clone, Copy)]
pub struct Frame {
    pub origin: Point,
    pub heading: f64,
}

impl Frame {
    /// Express a world-frame point in this frame.
    pub fn to_local(&self, p: Point) -> Point {
        let dx = p.x - self.origin.x;
        let dy = p.y - self.origin.y;
        let (s, c) = self.heading.sin_cos();
        Point::new(c * dx + s * dy, -s * dx + c * dy)
    }

    /// Express a local point back in the world frame.
    pub fn to_world(&self, p: Point) -> Point {
        let (s, c) = self.heading.sin_cos();
        Point::new(
            self.origin.x + c * p.x - s * p.y,
            self.origin.y + s * p.x + c * p.y,
        )
    }

    pub fn heading_to_local(&self, h: f64) -> f64 {
        wrap_angle(h - self.heading)
    }

    pub fn heading_to_world(&self, h: f64) -> f64 {
        wrap_angle(h + self.heading)
    }

    /// Rotate a vector (velocity) into this frame without translating.
    pub fn vec_to_local(&self, vx: f64, vy: f64) -> (f64, f64) {
        let (s, c) = self.heading.sin_cos();
        (c * vx + s * vy, -s * vx + c * vy)
    }

    pub fn vec_to_world(&self, vx: f64, vy: f64) -> (f64, f64) {
        let (s, c) = self.heading.sin_cos();
        (c * vx - s * vy, s * vx + c * vy)
    }
}

/// Total arc length of a polyline.
pub fn polyline_length(pts: &[Point]) -> f64 {
    pts.windows(2).map(|w| w[0].dist(w[1])).sum()
}

/// Point at arc position `s`, clamped to the polyline's ends.
pub fn point_at_arc(pts: &[Point], s: f64) -> Point {
    debug_assert!(pts.len() >= 2);
    if s <= 0.0 {
        return pts[0];
    }
    let mut acc = 0.0;
    for w in pts.windows(2) {
        let seg = w[0].dist(w[1]);
        if acc + seg >= s {
            let t = if seg > 0.0 { (s - acc) / seg } else { 0.0 };
            return Point::new(w[0].x + t * (w[1].x - w[0].x), w[0].y + t * (w[1].y - w[0].y));
        }
        acc += seg;
    }
    *pts.last().unwrap()
}

/// Unit tangent heading at arc position `s`.
pub fn heading_at_arc(pts: &[Point], s: f64) -> f64 {
    debug_assert!(pts.len() >= 2);
    let mut acc = 0.0;
    for w in pts.windows(2) {
        let seg = w[0].dist(w[1]);
        if acc + seg >= s && seg > 0.0 {
            return (w[1].y - w[0].y).atan2(w[1].x - w[0].x);
        }
        acc += seg;
    }
    let n = pts.len();
    (pts[n - 1].y - pts[n - 2].y).atan2(pts[n - 1].x - pts[n - 2].x)
}

/// Arc position of the closest point on the polyline to `p`, together with
/// the signed lateral offset (positive to the left of travel).
pub fn project_onto_polyline(pts: &[Point], p: Point) -> (f64, f64) {
    debug_assert!(pts.len() >= 2);
    let mut best = (0.0, f64::INFINITY, 0.0); // (arc, dist2, signed lateral)
    let mut acc = 0.0;
    for w in pts.windows(2) {
        let (ax, ay) = (w[0].x, w[0].y);
        let (bx, by) = (w[1].x, w[1].y);
        let (ex, ey) = (bx - ax, by - ay);
        let seg2 = ex * ex + ey * ey;
        let t = if seg2 > 0.0 {
            (((p.x - ax) * ex + (p.y - ay) * ey) / seg2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let cx = ax + t * ex;
        let cy = ay + t * ey;
        let d2 = (p.x - cx).powi(2) + (p.y - cy).powi(2);
        if d2 < best.1 {
            let seg = seg2.sqrt();
            let cross = ex * (p.y - ay) - ey * (p.x - ax);
            let lateral = if seg > 0.0 { cross / seg } else { 0.0 };
            best = (acc + t * seg, d2, lateral);
        }
        acc += seg2.sqrt();
    }
    (best.0, best.2)
}

/// Resample a polyline at (approximately) fixed spacing, always keeping both
/// endpoints. Returns at least two points.
pub fn resample_polyline(pts: &[Point], spacing: f64) -> Vec<Point> {
    debug_assert!(pts.len() >= 2);
    let total = polyline_length(pts);
    let n_seg = ((total / spacing).ceil() as usize).max(1);
    let mut out = Vec::with_capacity(n_seg + 1);
    for i in 0..=n_seg {
        out.push(point_at_arc(pts, total * i as f64 / n_seg as f64));
    }
    out
}

/// Downsample to at most `max_points` while keeping endpoints.
pub fn downsample_polyline(pts: &[Point], max_points: usize) -> Vec<Point> {
    debug_assert!(max_points >= 2);
    if pts.len() <= max_points {
        return pts.to_vec();
    }
    let mut out = Vec::with_capacity(max_points);
    for i in 0..max_points {
        let idx = i * (pts.len() - 1) / (max_points - 1);
        out.push(pts[idx]);
    }
    out
}

/// Even-odd point-in-polygon test.
pub fn point_in_polygon(p: Point, poly: &[Point]) -> bool {
    let mut inside = false;
    let n = poly.len();
    let mut j = n - 1;
    for i in 0..n {
        let (pi, pj) = (poly[i], poly[j]);
        if (pi.y > p.y) != (pj.y > p.y) {
            let x_cross = pi.x + (p.y - pi.y) * (pj.x - pi.x) / (pj.y - pi.y);
            if p.x < x_cross {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}
