//! Scripted expert: pure-pursuit lateral tracking of a route centerline plus
//! IDM longitudinal control against the nearest leader in the route corridor.
//! The scenario generator records this controller's trajectory as the
//! ground-truth demonstration.

use crate::scene::geometry::{
    heading_at_arc, point_at_arc, polyline_length, project_onto_polyline, wrap_angle, Point,
};

use super::idm::{idm_accel, IdmParams};

#[derive(Debug, Clone, Copy)]
pub struct ExpertParams {
    pub idm: IdmParams,
    /// Pure-pursuit lookahead = clamp(gain · v, min, max) meters.
    pub lookahead_gain: f64,
    pub lookahead_min: f64,
    pub lookahead_max: f64,
    /// Half-width of the corridor around the route in which a vehicle counts
    /// as a leader.
    pub corridor_halfwidth: f64,
    pub max_yaw_rate: f64,
}

impl ExpertParams {
    pub fn with_cruise(v0: f64) -> Self {
        ExpertParams {
            idm: IdmParams { v0, ..IdmParams::default() },
            lookahead_gain: 0.6,
            lookahead_min: 3.0,
            lookahead_max: 8.0,
            corridor_halfwidth: 2.0,
            max_yaw_rate: 1.2,
        }
    }
}

/// A snapshot of some other traffic participant, as seen by a controller.
#[derive(Debug, Clone, Copy)]
pub struct Obstacle {
    pub position: Point,
    pub speed_along: (f64, f64), // velocity vector
    pub half_length: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct EgoState {
    pub position: Point,
    pub heading: f64,
    pub speed: f64,
    pub half_length: f64,
}

/// (acceleration, yaw rate) command toward the route under IDM spacing.
pub fn expert_control(
    route: &[Point],
    ego: &EgoState,
    obstacles: &[Obstacle],
    p: &ExpertParams,
) -> (f64, f64) {
    let (s_ego, _) = project_onto_polyline(route, ego.position);
    let lead = find_route_leader(route, s_ego, ego.half_length, obstacles, p.corridor_halfwidth);
    let accel = idm_accel(ego.speed, lead, &p.idm);

    let lookahead = (p.lookahead_gain * ego.speed).clamp(p.lookahead_min, p.lookahead_max);
    let route_len = polyline_length(route);
    let target = point_at_arc(route, (s_ego + lookahead).min(route_len));
    let to_target = ((target.y - ego.position.y), (target.x - ego.position.x));
    let alpha = wrap_angle(to_target.0.atan2(to_target.1) - ego.heading);
    let dist = ego.position.dist(target).max(1e-6);
    let curvature = 2.0 * alpha.sin() / dist;
    let yaw_rate = (ego.speed * curvature).clamp(-p.max_yaw_rate, p.max_yaw_rate);
    (accel, yaw_rate)
}

/// Nearest obstacle ahead of arc position `s_ego` inside the route corridor,
/// as an IDM (v_lead, bumper gap) pair.
pub fn find_route_leader(
    route: &[Point],
    s_ego: f64,
    ego_half_length: f64,
    obstacles: &[Obstacle],
    corridor_halfwidth: f64,
) -> Option<(f64, f64)> {
    let mut best: Option<(f64, f64)> = None;
    for ob in obstacles {
        let (s, lat) = project_onto_polyline(route, ob.position);
        if lat.abs() > corridor_halfwidth {
            continue;
        }
        let ds = s - s_ego;
        if ds <= 0.0 || ds > 80.0 {
            continue;
        }
        let gap = ds - ob.half_length - ego_half_length;
        let tangent = heading_at_arc(route, s);
        let v_lead = ob.speed_along.0 * tangent.cos() + ob.speed_along.1 * tangent.sin();
        match best {
            Some((_, g)) if gap >= g => {}
            _ => best = Some((v_lead, gap)),
        }
    }
    best
}

/// Kinematic unicycle step at fixed dt; speed never goes negative.
pub fn integrate_unicycle(
    position: Point,
    heading: f64,
    speed: f64,
    accel: f64,
    yaw_rate: f64,
    dt: f64,
) -> (Point, f64, f64) {
    let new_heading = wrap_angle(heading + yaw_rate * dt);
    let new_speed = (speed + accel * dt).max(0.0);
    let next = Point::new(
        position.x + new_speed * new_heading.cos() * dt,
        position.y + new_speed * new_heading.sin() * dt,
    );
    (next, new_heading, new_speed)
}
