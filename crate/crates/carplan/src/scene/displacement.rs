//! Ground-truth displacement vectors between the AV and every surrounding
//! scene element over the prediction horizon: entry (a, t) is x_a^t − x_0^t.
//!
//! Agents use their logged futures (holding the last valid position once an
//! agent disappears, with those steps masked out). Map elements are static:
//! each polyline is represented by its point nearest the AV at t = 0, so its
//! target is that point minus the AV's future position.

use super::geometry::Point;
use super::Scenario;

/// Row-major targets: element index (agents then map polylines) × timestep
/// × (dx, dy), plus a validity mask per (element, timestep).
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementTargets {
    pub num_elements: usize,
    pub horizon: usize,
    /// Length num_elements × horizon × 2.
    pub data: Vec<f64>,
    /// Length num_elements × horizon.
    pub valid: Vec<bool>,
}

impl DisplacementTargets {
    pub fn at(&self, element: usize, t: usize) -> (f64, f64) {
        let base = (element * self.horizon + t) * 2;
        (self.data[base], self.data[base + 1])
    }

    pub fn is_valid(&self, element: usize, t: usize) -> bool {
        self.valid[element * self.horizon + t]
    }
}

pub fn compute_displacement_targets(scenario: &Scenario, horizon: usize) -> DisplacementTargets {
    assert!(
        horizon <= scenario.future_steps,
        "displacement horizon {horizon} exceeds logged future {}",
        scenario.future_steps
    );
    let n_agents = scenario.agents.len();
    let n_map = scenario.map.len();
    let num_elements = n_agents + n_map;
    let mut data = vec![0.0; num_elements * horizon * 2];
    let mut valid = vec![false; num_elements * horizon];

    let av_future: Vec<Point> = (1..=horizon)
        .map(|k| scenario.av.states[scenario.index_at(k as isize)].position())
        .collect();

    for (a, track) in scenario.agents.iter().enumerate() {
        for t in 0..horizon {
            let idx = scenario.index_at((t + 1) as isize);
            let (pos, is_live) = match track.last_valid_at_or_before(idx) {
                Some(i) => (track.states[i].position(), track.valid[idx]),
                None => (track.states[idx].position(), false),
            };
            let base = (a * horizon + t) * 2;
            data[base] = pos.x - av_future[t].x;
            data[base + 1] = pos.y - av_future[t].y;
            valid[a * horizon + t] = is_live;
        }
    }

    let av0 = scenario.av.current(scenario.history_steps).position();
    for (m, pl) in scenario.map.iter().enumerate() {
        let rep = representative_point(&pl.points, av0);
        let row = n_agents + m;
        for t in 0..horizon {
            let base = (row * horizon + t) * 2;
            data[base] = rep.x - av_future[t].x;
            data[base + 1] = rep.y - av_future[t].y;
            valid[row * horizon + t] = true;
        }
    }

    DisplacementTargets { num_elements, horizon, data, valid }
}

/// The polyline point nearest to `anchor`.
pub fn representative_point(points: &[Point], anchor: Point) -> Point {
    *points
        .iter()
        .min_by(|a, b| a.dist(anchor).partial_cmp(&b.dist(anchor)).unwrap())
        .unwrap()
}
