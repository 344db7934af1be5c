//! Oriented-rectangle overlap via the separating-axis test.

use crate::scene::geometry::Point;
use crate::scene::AgentState;

/// An oriented rectangle: center, heading, full extents.
#[derive(Debug, Clone, Copy)]
pub struct OrientedRect {
    pub center: Point,
    pub heading: f64,
    pub length: f64,
    pub width: f64,
}

impl OrientedRect {
    pub fn from_state(s: &AgentState) -> Self {
        OrientedRect {
            center: s.position(),
            heading: s.heading,
            length: s.length,
            width: s.width,
        }
    }

    pub fn corners(&self) -> [Point; 4] {
        let (sin, cos) = self.heading.sin_cos();
        let hl = self.length / 2.0;
        let hw = self.width / 2.0;
        let mk = |dx: f64, dy: f64| {
            Point::new(
                self.center.x + cos * dx - sin * dy,
                self.center.y + sin * dx + cos * dy,
            )
        };
        [mk(hl, hw), mk(hl, -hw), mk(-hl, -hw), mk(-hl, hw)]
    }

    fn axes(&self) -> [(f64, f64); 2] {
        let (sin, cos) = self.heading.sin_cos();
        [(cos, sin), (-sin, cos)]
    }
}

/// True when the rectangles overlap. Two convex polygons are disjoint iff
/// some edge normal separates their corner projections; rectangles only have
/// four distinct normals in total.
pub fn rects_overlap(a: &OrientedRect, b: &OrientedRect) -> bool {
    let ca = a.corners();
    let cb = b.corners();
    for axis in a.axes().iter().chain(b.axes().iter()) {
        let (a_min, a_max) = project(&ca, *axis);
        let (b_min, b_max) = project(&cb, *axis);
        if a_min > b_max || b_min > a_max {
            return false;
        }
    }
    true
}

fn project(corners: &[Point; 4], axis: (f64, f64)) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for c in corners {
        let d = c.x * axis.0 + c.y * axis.1;
        lo = lo.min(d);
        hi = hi.max(d);
    }
    (lo, hi)
}

/// True when `p` lies inside the rectangle (boundary counts as inside).
pub fn point_in_rect(p: Point, r: &OrientedRect) -> bool {
    let (sin, cos) = r.heading.sin_cos();
    let dx = p.x - r.center.x;
    let dy = p.y - r.center.y;
    let local_x = cos * dx + sin * dy;
    let local_y = -sin * dx + cos * dy;
    local_x.abs() <= r.length / 2.0 && local_y.abs() <= r.width / 2.0
}
