//! Driving-scene data model, synthetic scenario generation, displacement
//! ground truth, and corpus serialization.
//!
//! Every stored scenario is expressed in the AV frame at t = 0: the AV sits
//! at the origin heading along +x, and its ground-truth future is the logged
//! expert trajectory.

mod displacement;
pub mod generator;
pub mod geometry;
mod io;

pub use displacement::{compute_displacement_targets, DisplacementTargets};
pub use generator::{generate_scenario, GeneratorConfig, Topology};
pub use io::{load_corpus, load_scenario, serialize_scenario, write_corpus};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use geometry::{wrap_angle, Frame, Point};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("generation error: {0}")]
    Generation(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("schema version {found} unsupported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Vehicle,
    Pedestrian,
    Bicycle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub vx: f64,
    pub vy: f64,
    pub length: f64,
    pub width: f64,
    pub category: Category,
}

impl AgentState {
    pub fn position(&self) -> Point {
        Point::new(self.x, self.y)
    }

    pub fn speed(&self) -> f64 {
        (self.vx * self.vx + self.vy * self.vy).sqrt()
    }
}

/// States over [−T_h, T_f] at 10 Hz; index `history_steps` is t = 0.
/// Invalid steps carry zeroed placeholders that must never be read.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTrack {
    pub states: Vec<AgentState>,
    pub valid: Vec<bool>,
}

impl AgentTrack {
    pub fn current<'a>(&'a self, history_steps: usize) -> &'a AgentState {
        &self.states[history_steps]
    }

    /// Last valid index at or before `idx`, if any.
    pub fn last_valid_at_or_before(&self, idx: usize) -> Option<usize> {
        (0..=idx).rev().find(|&i| self.valid[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolylineKind {
    LaneCenter,
    RoadBoundary,
    Crosswalk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapPolyline {
    pub points: Vec<Point>,
    pub kind: PolylineKind,
}

/// Goal-directed lane polyline, arc-length parameterized at fixed spacing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Centerline {
    pub points: Vec<Point>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub version: u32,
    pub seed: u64,
    pub topology: Topology,
    pub dt: f64,
    pub history_steps: usize,
    pub future_steps: usize,
    /// Track index 0 of the scene; ground truth future lives here.
    pub av: AgentTrack,
    pub agents: Vec<AgentTrack>,
    pub map: Vec<MapPolyline>,
    pub centerlines: Vec<Centerline>,
    pub goal: Point,
    pub drivable: Vec<Vec<Point>>,
}

impl Scenario {
    pub fn track_len(&self) -> usize {
        self.history_steps + 1 + self.future_steps
    }

    /// Track index for a signed step offset from t = 0.
    pub fn index_at(&self, step: isize) -> usize {
        (self.history_steps as isize + step) as usize
    }

    pub fn num_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn num_polylines(&self) -> usize {
        self.map.len()
    }

    /// Ground-truth AV future over the first `horizon` steps after t = 0,
    /// as (x, y, heading) rows.
    pub fn gt_future(&self, horizon: usize) -> Vec<[f64; 3]> {
        assert!(horizon <= self.future_steps, "horizon exceeds logged future");
        (1..=horizon)
            .map(|k| {
                let s = &self.av.states[self.index_at(k as isize)];
                [s.x, s.y, s.heading]
            })
            .collect()
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        if self.version != SCHEMA_VERSION {
            return Err(SceneError::Version { found: self.version, expected: SCHEMA_VERSION });
        }
        let len = self.track_len();
        let check_track = |track: &AgentTrack, who: &str| -> Result<(), SceneError> {
            if track.states.len() != len || track.valid.len() != len {
                return Err(SceneError::Invalid(format!(
                    "{who}: track length {} != {len}",
                    track.states.len()
                )));
            }
            if !track.valid[self.history_steps] {
                return Err(SceneError::Invalid(format!("{who}: state at t=0 must be valid")));
            }
            let cat = track.states[self.history_steps].category;
            for (i, st) in track.states.iter().enumerate() {
                if !track.valid[i] {
                    continue;
                }
                if st.length <= 0.0 || st.width <= 0.0 {
                    return Err(SceneError::Invalid(format!("{who}: non-positive size")));
                }
                if !(st.heading > -std::f64::consts::PI - 1e-12
                    && st.heading <= std::f64::consts::PI + 1e-12)
                {
                    return Err(SceneError::Invalid(format!(
                        "{who}: heading {} out of (−π, π]",
                        st.heading
                    )));
                }
                if st.category != cat {
                    return Err(SceneError::Invalid(format!("{who}: category changed mid-episode")));
                }
            }
            Ok(())
        };
        check_track(&self.av, "av")?;
        if !self.av.valid.iter().all(|&v| v) {
            return Err(SceneError::Invalid("av track must be fully valid".into()));
        }
        for (i, a) in self.agents.iter().enumerate() {
            check_track(a, &format!("agent {i}"))?;
        }
        for (i, pl) in self.map.iter().enumerate() {
            if pl.points.len() < 2 {
                return Err(SceneError::Invalid(format!("polyline {i}: fewer than 2 points")));
            }
            for w in pl.points.windows(2) {
                if w[0].dist(w[1]) == 0.0 {
                    return Err(SceneError::Invalid(format!(
                        "polyline {i}: consecutive duplicate points"
                    )));
                }
            }
        }
        if self.centerlines.is_empty() {
            return Err(SceneError::Invalid("scenario needs at least one centerline".into()));
        }
        for (i, cl) in self.centerlines.iter().enumerate() {
            if cl.points.len() < 2 {
                return Err(SceneError::Invalid(format!("centerline {i}: fewer than 2 points")));
            }
            let end = cl.points.last().unwrap();
            if end.dist(self.goal) > 1.0 {
                return Err(SceneError::Invalid(format!(
                    "centerline {i}: ends {:.2} m from goal",
                    end.dist(self.goal)
                )));
            }
        }
        // Frame normalization: AV at origin heading +x at t = 0.
        let av0 = self.av.current(self.history_steps);
        if av0.x.abs() > 1e-9 || av0.y.abs() > 1e-9 || av0.heading.abs() > 1e-9 {
            return Err(SceneError::Invalid(format!(
                "scenario not in AV frame (av at ({}, {}, {}))",
                av0.x, av0.y, av0.heading
            )));
        }
        Ok(())
    }

    /// Re-express every coordinate in the frame of the AV's t = 0 state.
    /// Idempotent: a normalized scenario maps to itself exactly.
    pub fn normalize_to_av_frame(&self) -> Scenario {
        let av0 = self.av.current(self.history_steps);
        let frame = Frame { origin: av0.position(), heading: av0.heading };
        let mut out = self.clone();
        let map_state = |s: &AgentState| -> AgentState {
            let p = frame.to_local(s.position());
            let (vx, vy) = frame.vec_to_local(s.vx, s.vy);
            AgentState {
                x: p.x,
                y: p.y,
                heading: wrap_angle(frame.heading_to_local(s.heading)),
                vx,
                vy,
                ..*s
            }
        };
        let map_track = |t: &AgentTrack| AgentTrack {
            states: t.states.iter().map(&map_state).collect(),
            valid: t.valid.clone(),
        };
        out.av = map_track(&self.av);
        out.agents = self.agents.iter().map(map_track).collect();
        for pl in &mut out.map {
            for p in &mut pl.points {
                *p = frame.to_local(*p);
            }
        }
        for cl in &mut out.centerlines {
            for p in &mut cl.points {
                *p = frame.to_local(*p);
            }
        }
        for poly in &mut out.drivable {
            for p in poly.iter_mut() {
                *p = frame.to_local(*p);
            }
        }
        out.goal = frame.to_local(self.goal);
        out
    }
}
