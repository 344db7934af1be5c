//! Synthetic driving scenarios: lane geometry per topology, IDM-consistent
//! traffic placement, and a scripted-expert demonstration recorded as the
//! ground-truth future. Generation is a pure function of (config, seed).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::sim::expert::{
    expert_control, integrate_unicycle, EgoState, ExpertParams, Obstacle,
};
use crate::sim::idm::{idm_accel, safe_spawn_gap, IdmParams};

use super::geometry::{
    downsample_polyline, heading_at_arc, point_at_arc, polyline_length, project_onto_polyline,
    resample_polyline, Point,
};
use super::{
    AgentState, AgentTrack, Category, Centerline, MapPolyline, PolylineKind, Scenario, SceneError,
    SCHEMA_VERSION,
};

pub const LANE_WIDTH: f64 = 3.5;
pub const SHOULDER: f64 = 0.5;
pub const CENTERLINE_SPACING: f64 = 2.0;
pub const MAP_POINT_BUDGET: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    Straight,
    Curved,
    Intersection,
    LaneChange,
}

impl Topology {
    pub const ALL: [Topology; 4] =
        [Topology::Straight, Topology::Curved, Topology::Intersection, Topology::LaneChange];
}

impl std::fmt::Display for Topology {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Topology::Straight => "straight",
            Topology::Curved => "curved",
            Topology::Intersection => "intersection",
            Topology::LaneChange => "lane_change",
        };
        write!(f, "{s}")
    }
}

impl std::str::FromStr for Topology {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "straight" => Ok(Topology::Straight),
            "curved" => Ok(Topology::Curved),
            "intersection" => Ok(Topology::Intersection),
            "lane_change" => Ok(Topology::LaneChange),
            other => Err(format!("unknown topology: {other}")),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneratorConfig {
    /// None means a seed-determined mix over all four topologies.
    pub topology: Option<Topology>,
    pub min_agents: usize,
    pub max_agents: usize,
    /// Initial agent speed range (m/s); bicycles use half of a fresh draw.
    pub agent_speed: (f64, f64),
    pub ego_cruise: (f64, f64),
    pub goal_distance: f64,
    pub history_steps: usize,
    pub future_steps: usize,
    pub dt: f64,
    /// Probability that an agent's early history is marked invalid
    /// (appeared recently).
    pub history_dropout: f64,
    /// Probability that an agent disappears partway through the future.
    pub future_dropout: f64,
    pub pedestrians: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            topology: None,
            min_agents: 0,
            max_agents: 6,
            agent_speed: (3.0, 10.0),
            ego_cruise: (8.0, 12.0),
            goal_distance: 40.0,
            history_steps: 20,
            future_steps: 80,
            dt: 0.1,
            history_dropout: 0.15,
            future_dropout: 0.1,
            pedestrians: true,
        }
    }
}

/// Static geometry for one sampled scene.
struct RoadPlan {
    /// Ego route polyline over the whole episode (world frame).
    route: Vec<Point>,
    /// Alternative goal-directed routes (centerline variants).
    alt_routes: Vec<Vec<Point>>,
    /// Lanes that vehicle agents may occupy.
    lanes: Vec<LanePlan>,
    boundaries: Vec<Vec<Point>>,
    crosswalks: Vec<Vec<Point>>,
    drivable: Vec<Vec<Point>>,
    ego_start: Point,
    ego_heading: f64,
}

struct LanePlan {
    path: Vec<Point>,
    /// Spawnable arc window.
    window: (f64, f64),
    /// Arc of the conflict point with the ego road, for cross traffic.
    conflict: Option<CrossConflict>,
    /// Whether the ego travels this lane (its projection occupies it).
    is_ego_lane: bool,
}

struct CrossConflict {
    conflict_arc: f64,
    /// Earliest time the ego could plausibly reach the shared point (s from
    /// simulation start); cross traffic must clear well before it.
    t_ego_min: f64,
}

/// One moving participant during world simulation.
struct SimEntity {
    path: Vec<Point>,
    arc: f64,
    speed: f64,
    length: f64,
    width: f64,
    category: Category,
    idm: IdmParams,
    /// Pedestrians hold speed; vehicles follow IDM.
    reactive: bool,
}

impl SimEntity {
    fn position(&self) -> Point {
        point_at_arc(&self.path, self.arc)
    }

    fn heading(&self) -> f64 {
        heading_at_arc(&self.path, self.arc)
    }

    fn state(&self) -> AgentState {
        let p = self.position();
        let h = self.heading();
        AgentState {
            x: p.x,
            y: p.y,
            heading: h,
            vx: self.speed * h.cos(),
            vy: self.speed * h.sin(),
            length: self.length,
            width: self.width,
            category: self.category,
        }
    }

    fn obstacle(&self) -> Obstacle {
        let h = self.heading();
        Obstacle {
            position: self.position(),
            speed_along: (self.speed * h.cos(), self.speed * h.sin()),
            half_length: self.length / 2.0,
        }
    }
}

pub fn generate_scenario(config: &GeneratorConfig, seed: u64) -> Result<Scenario, SceneError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let topology = match config.topology {
        Some(t) => t,
        None => Topology::ALL[rng.gen_range(0..Topology::ALL.len())],
    };
    let cruise = rng.gen_range(config.ego_cruise.0..=config.ego_cruise.1);
    let plan = build_road_plan(topology, cruise, config, &mut rng);

    let mut agents = place_agents(&plan, cruise, topology, config, &mut rng)?;
    let ego_params = ExpertParams::with_cruise(cruise);

    // Simulate the whole episode: history warm-up, then the logged future.
    let total_steps = config.history_steps + config.future_steps;
    let mut ego_pos = plan.ego_start;
    let mut ego_heading = plan.ego_heading;
    let mut ego_speed = cruise;
    let ego_len = 4.8;
    let ego_wid = 2.0;

    let mut ego_states: Vec<AgentState> = Vec::with_capacity(total_steps + 1);
    let mut agent_states: Vec<Vec<AgentState>> =
        agents.iter().map(|_| Vec::with_capacity(total_steps + 1)).collect();

    let record =
        |ego_pos: Point, ego_heading: f64, ego_speed: f64, agents: &[SimEntity],
         ego_states: &mut Vec<AgentState>, agent_states: &mut Vec<Vec<AgentState>>| {
            ego_states.push(AgentState {
                x: ego_pos.x,
                y: ego_pos.y,
                heading: ego_heading,
                vx: ego_speed * ego_heading.cos(),
                vy: ego_speed * ego_heading.sin(),
                length: ego_len,
                width: ego_wid,
                category: Category::Vehicle,
            });
            for (i, a) in agents.iter().enumerate() {
                agent_states[i].push(a.state());
            }
        };

    record(ego_pos, ego_heading, ego_speed, &agents, &mut ego_states, &mut agent_states);
    for _ in 0..total_steps {
        // Ego follows the scripted expert.
        let obstacles: Vec<Obstacle> = agents.iter().map(|a| a.obstacle()).collect();
        let ego = EgoState {
            position: ego_pos,
            heading: ego_heading,
            speed: ego_speed,
            half_length: ego_len / 2.0,
        };
        let (acc, yaw) = expert_control(&plan.route, &ego, &obstacles, &ego_params);
        let (np, nh, nv) = integrate_unicycle(ego_pos, ego_heading, ego_speed, acc, yaw, config.dt);

        // Agents follow IDM along their own paths, reacting to everyone.
        let mut next_arcs = Vec::with_capacity(agents.len());
        for (i, a) in agents.iter().enumerate() {
            if !a.reactive {
                next_arcs.push((a.arc + a.speed * config.dt, a.speed));
                continue;
            }
            let (s_self, _) = project_onto_polyline(&a.path, a.position());
            let mut others: Vec<Obstacle> = Vec::with_capacity(agents.len());
            for (j, b) in agents.iter().enumerate() {
                if j != i {
                    others.push(b.obstacle());
                }
            }
            others.push(Obstacle {
                position: ego_pos,
                speed_along: (ego_speed * ego_heading.cos(), ego_speed * ego_heading.sin()),
                half_length: ego_len / 2.0,
            });
            let lead = crate::sim::expert::find_route_leader(
                &a.path,
                s_self,
                a.length / 2.0,
                &others,
                2.0,
            );
            let acc = idm_accel(a.speed, lead, &a.idm);
            let nv = (a.speed + acc * config.dt).max(0.0);
            next_arcs.push((a.arc + nv * config.dt, nv));
        }
        ego_pos = np;
        ego_heading = nh;
        ego_speed = nv;
        for (a, (arc, v)) in agents.iter_mut().zip(next_arcs) {
            a.arc = arc;
            a.speed = v;
        }
        record(ego_pos, ego_heading, ego_speed, &agents, &mut ego_states, &mut agent_states);
    }

    // Goal and centerlines relative to the ego's t = 0 pose.
    let t0 = config.history_steps;
    let ego_t0 = ego_states[t0].position();
    let (s_ego_t0, _) = project_onto_polyline(&plan.route, ego_t0);
    let route_len = polyline_length(&plan.route);
    let s_goal = (s_ego_t0 + config.goal_distance).min(route_len - 1.0);
    let goal = point_at_arc(&plan.route, s_goal);

    let mut centerlines = vec![slice_route(&plan.route, s_ego_t0, s_goal)];
    for alt in &plan.alt_routes {
        let (s_from, _) = project_onto_polyline(alt, ego_t0);
        let (s_to, _) = project_onto_polyline(alt, goal);
        if s_to > s_from + 2.0 * CENTERLINE_SPACING {
            centerlines.push(slice_route(alt, s_from, s_to));
        }
    }

    // Map polylines: lane centers, boundaries, crosswalks.
    let mut map = Vec::new();
    for lane in &plan.lanes {
        map.push(MapPolyline {
            points: downsample_polyline(&lane.path, MAP_POINT_BUDGET),
            kind: PolylineKind::LaneCenter,
        });
    }
    for b in &plan.boundaries {
        map.push(MapPolyline {
            points: downsample_polyline(b, MAP_POINT_BUDGET),
            kind: PolylineKind::RoadBoundary,
        });
    }
    for cw in &plan.crosswalks {
        map.push(MapPolyline {
            points: downsample_polyline(cw, MAP_POINT_BUDGET),
            kind: PolylineKind::Crosswalk,
        });
    }
    map.truncate(32);

    // Validity flags with appearance/disappearance dropout.
    let track_len = total_steps + 1;
    let mut agent_tracks = Vec::with_capacity(agents.len());
    for (i, states) in agent_states.into_iter().enumerate() {
        let mut valid = vec![true; track_len];
        if rng.gen_bool(config.history_dropout) {
            let appear = rng.gen_range(1..=config.history_steps);
            for v in valid.iter_mut().take(appear) {
                *v = false;
            }
        }
        if rng.gen_bool(config.future_dropout) {
            let vanish = t0 + 1 + rng.gen_range(config.future_steps / 2..config.future_steps);
            for v in valid.iter_mut().skip(vanish) {
                *v = false;
            }
        }
        let _ = i;
        agent_tracks.push(AgentTrack { states, valid });
    }

    let scenario = Scenario {
        version: SCHEMA_VERSION,
        seed,
        topology,
        dt: config.dt,
        history_steps: config.history_steps,
        future_steps: config.future_steps,
        av: AgentTrack { states: ego_states, valid: vec![true; track_len] },
        agents: agent_tracks,
        map,
        centerlines,
        goal,
        drivable: plan.drivable.clone(),
    };
    let normalized = scenario.normalize_to_av_frame();
    normalized.validate()?;
    Ok(normalized)
}

fn slice_route(route: &[Point], s_from: f64, s_to: f64) -> Centerline {
    let n = ((s_to - s_from) / CENTERLINE_SPACING).ceil().max(1.0) as usize;
    let mut pts = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let s = s_from + (s_to - s_from) * i as f64 / n as f64;
        pts.push(point_at_arc(route, s));
    }
    Centerline { points: resample_polyline(&pts, CENTERLINE_SPACING) }
}

fn straight_lane(y: f64, x0: f64, x1: f64) -> Vec<Point> {
    let n = ((x1 - x0) / 5.0).ceil() as usize;
    (0..=n).map(|i| Point::new(x0 + (x1 - x0) * i as f64 / n as f64, y)).collect()
}

fn arc_lane(center: Point, radius: f64, a0: f64, a1: f64) -> Vec<Point> {
    let arc_len = radius * (a1 - a0).abs();
    let n = (arc_len / 4.0).ceil().max(8.0) as usize;
    (0..=n)
        .map(|i| {
            let a = a0 + (a1 - a0) * i as f64 / n as f64;
            Point::new(center.x + radius * a.cos(), center.y + radius * a.sin())
        })
        .collect()
}

fn rect_poly(x0: f64, x1: f64, y0: f64, y1: f64) -> Vec<Point> {
    vec![Point::new(x0, y0), Point::new(x1, y0), Point::new(x1, y1), Point::new(x0, y1)]
}

fn build_road_plan(
    topology: Topology,
    cruise: f64,
    config: &GeneratorConfig,
    rng: &mut ChaCha8Rng,
) -> RoadPlan {
    let horizon_m = cruise * (config.history_steps + config.future_steps) as f64 * config.dt
        + config.goal_distance;
    let reach = horizon_m.max(120.0) + 60.0;
    match topology {
        Topology::Straight => {
            let lane0 = straight_lane(0.0, -30.0, reach);
            let lane1 = straight_lane(LANE_WIDTH, -30.0, reach);
            RoadPlan {
                route: lane0.clone(),
                alt_routes: vec![],
                lanes: vec![
                    LanePlan {
                        path: lane0,
                        window: (5.0, reach - 10.0),
                        conflict: None,
                        is_ego_lane: true,
                    },
                    LanePlan {
                        path: lane1,
                        window: (5.0, reach - 10.0),
                        conflict: None,
                        is_ego_lane: false,
                    },
                ],
                boundaries: vec![
                    straight_lane(-LANE_WIDTH / 2.0, -30.0, reach),
                    straight_lane(LANE_WIDTH * 1.5, -30.0, reach),
                ],
                crosswalks: vec![],
                drivable: vec![rect_poly(
                    -35.0,
                    reach + 5.0,
                    -LANE_WIDTH / 2.0 - SHOULDER,
                    LANE_WIDTH * 1.5 + SHOULDER,
                )],
                ego_start: Point::new(0.0, 0.0),
                ego_heading: 0.0,
            }
        }
        Topology::Curved => {
            let radius = rng.gen_range(45.0..75.0);
            let left = rng.gen_bool(0.5);
            // The ego starts at the origin heading +x with the circle center
            // to one side; the arc extends 30 m behind it and sweeps enough
            // to cover the episode.
            let back = 30.0 / radius;
            let sweep = (reach / radius).min(std::f64::consts::PI * 1.5);
            let (center, a0, a1) = if left {
                (
                    Point::new(0.0, radius),
                    -std::f64::consts::FRAC_PI_2 - back,
                    -std::f64::consts::FRAC_PI_2 + sweep,
                )
            } else {
                (
                    Point::new(0.0, -radius),
                    std::f64::consts::FRAC_PI_2 + back,
                    std::f64::consts::FRAC_PI_2 - sweep,
                )
            };
            let lane = arc_lane(center, radius, a0, a1);
            let (inner, outer) = (radius - LANE_WIDTH / 2.0, radius + LANE_WIDTH / 2.0);
            let b_in = arc_lane(center, inner, a0, a1);
            let b_out = arc_lane(center, outer, a0, a1);
            let drive_in = arc_lane(center, inner - SHOULDER, a0, a1);
            let drive_out = arc_lane(center, outer + SHOULDER, a0, a1);
            let mut drivable = drive_out;
            drivable.extend(drive_in.into_iter().rev());
            let lane_len = polyline_length(&lane);
            RoadPlan {
                route: lane.clone(),
                alt_routes: vec![],
                lanes: vec![LanePlan {
                    path: lane,
                    window: (5.0, lane_len - 10.0),
                    conflict: None,
                    is_ego_lane: true,
                }],
                boundaries: vec![b_in, b_out],
                crosswalks: vec![],
                drivable: vec![drivable],
                ego_start: Point::new(0.0, 0.0),
                ego_heading: 0.0,
            }
        }
        Topology::Intersection => {
            let x_cross = rng.gen_range(45.0..70.0);
            let lane0 = straight_lane(0.0, -30.0, reach);
            let cross_y0 = -60.0;
            let cross_y1 = reach.min(140.0);
            let n = ((cross_y1 - cross_y0) / 5.0).ceil() as usize;
            let cross_lane: Vec<Point> = (0..=n)
                .map(|i| Point::new(x_cross, cross_y0 + (cross_y1 - cross_y0) * i as f64 / n as f64))
                .collect();
            let conflict_arc = -cross_y0; // arc where the cross lane meets y = 0
            let t_ego_min = (x_cross - 0.0 - 3.0) / (cruise * 1.15);
            let half = LANE_WIDTH / 2.0;
            let boundaries = vec![
                straight_lane(-half, -30.0, x_cross - half),
                straight_lane(-half, x_cross + half, reach),
                straight_lane(half, -30.0, x_cross - half),
                straight_lane(half, x_cross + half, reach),
            ];
            let crosswalk_x = -8.0;
            let crosswalks = vec![vec![
                Point::new(crosswalk_x, -half - 1.0),
                Point::new(crosswalk_x, half + 1.0),
            ]];
            RoadPlan {
                route: lane0.clone(),
                alt_routes: vec![],
                lanes: vec![
                    LanePlan {
                        path: lane0,
                        window: (5.0, reach - 10.0),
                        conflict: None,
                        is_ego_lane: true,
                    },
                    LanePlan {
                        path: cross_lane,
                        window: (5.0, cross_y1 - cross_y0 - 10.0),
                        conflict: Some(CrossConflict { conflict_arc, t_ego_min }),
                        is_ego_lane: false,
                    },
                ],
                boundaries,
                crosswalks,
                drivable: vec![
                    rect_poly(-35.0, reach + 5.0, -half - SHOULDER, half + SHOULDER),
                    rect_poly(
                        x_cross - half - SHOULDER,
                        x_cross + half + SHOULDER,
                        cross_y0,
                        cross_y1,
                    ),
                ],
                ego_start: Point::new(0.0, 0.0),
                ego_heading: 0.0,
            }
        }
        Topology::LaneChange => {
            let lane0 = straight_lane(0.0, -30.0, reach);
            let lane1 = straight_lane(LANE_WIDTH, -30.0, reach);
            // The route merges into the left lane ahead of the ego's t = 0
            // position; a later-merging variant gives a second centerline.
            let warmup = cruise * config.history_steps as f64 * config.dt;
            let merge_a = warmup + 8.0;
            let merge_b = warmup + 14.0;
            let route = merge_route(-30.0, reach, merge_a, merge_a + 20.0);
            let alt = merge_route(-30.0, reach, merge_b, merge_b + 20.0);
            RoadPlan {
                route,
                alt_routes: vec![alt],
                lanes: vec![
                    LanePlan {
                        path: lane0,
                        window: (5.0, reach - 10.0),
                        conflict: None,
                        is_ego_lane: true,
                    },
                    LanePlan {
                        // Spawn left-lane traffic beyond the merge region.
                        path: lane1,
                        window: (warmup + 60.0, reach - 10.0),
                        conflict: None,
                        is_ego_lane: false,
                    },
                ],
                boundaries: vec![
                    straight_lane(-LANE_WIDTH / 2.0, -30.0, reach),
                    straight_lane(LANE_WIDTH * 1.5, -30.0, reach),
                ],
                crosswalks: vec![],
                drivable: vec![rect_poly(
                    -35.0,
                    reach + 5.0,
                    -LANE_WIDTH / 2.0 - SHOULDER,
                    LANE_WIDTH * 1.5 + SHOULDER,
                )],
                ego_start: Point::new(0.0, 0.0),
                ego_heading: 0.0,
            }
        }
    }
}

/// Lane-0 path that blends into lane 1 between `x_from` and `x_to` with a
/// smoothstep lateral profile.
fn merge_route(x0: f64, x1: f64, x_from: f64, x_to: f64) -> Vec<Point> {
    let n = ((x1 - x0) / 2.0).ceil() as usize;
    (0..=n)
        .map(|i| {
            let x = x0 + (x1 - x0) * i as f64 / n as f64;
            let t = ((x - x_from) / (x_to - x_from)).clamp(0.0, 1.0);
            let blend = t * t * (3.0 - 2.0 * t);
            Point::new(x, LANE_WIDTH * blend)
        })
        .collect()
}

fn place_agents(
    plan: &RoadPlan,
    cruise: f64,
    topology: Topology,
    config: &GeneratorConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<SimEntity>, SceneError> {
    let count = if config.max_agents >= config.min_agents {
        rng.gen_range(config.min_agents..=config.max_agents)
    } else {
        return Err(SceneError::Generation("min_agents exceeds max_agents".into()));
    };
    let mut agents: Vec<SimEntity> = Vec::with_capacity(count);
    // Per-lane occupancy: (arc, speed, half_length); ego occupies its lane.
    let mut occupancy: Vec<Vec<(f64, f64, f64)>> = plan
        .lanes
        .iter()
        .map(|lane| {
            if lane.is_ego_lane {
                let (s, _) = project_onto_polyline(&lane.path, plan.ego_start);
                vec![(s, cruise, 2.4)]
            } else {
                Vec::new()
            }
        })
        .collect();

    for k in 0..count {
        let is_bike = rng.gen_bool(0.15);
        let speed = if is_bike {
            rng.gen_range(config.agent_speed.0..=config.agent_speed.1) * 0.5
        } else {
            rng.gen_range(config.agent_speed.0..=config.agent_speed.1)
        };
        let (length, width, category) = if is_bike {
            (1.8, 0.6, Category::Bicycle)
        } else {
            (rng.gen_range(4.2..5.0), rng.gen_range(1.8..2.1), Category::Vehicle)
        };

        let mut placed = false;
        'lanes: for attempt in 0..40 {
            // The first agent goes ahead on the ego lane; the rest anywhere.
            let lane_idx = if k == 0 {
                plan.lanes.iter().position(|l| l.is_ego_lane).unwrap_or(0)
            } else {
                rng.gen_range(0..plan.lanes.len())
            };
            let lane = &plan.lanes[lane_idx];
            let (w_lo, w_hi) = lane.window;
            if w_hi <= w_lo {
                continue;
            }
            let mut s = rng.gen_range(w_lo..w_hi);
            if k == 0 && lane.is_ego_lane {
                let (s_ego, _) = project_onto_polyline(&lane.path, plan.ego_start);
                let ahead = safe_spawn_gap(cruise, speed, &IdmParams::default()) + 8.0;
                s = s_ego + ahead + rng.gen_range(0.0..25.0);
                if s >= w_hi {
                    s = w_hi - 1.0;
                }
            }
            // Cross-lane timing: clear the conflict before the ego could arrive,
            // or spawn already past it.
            if let Some(conflict) = &lane.conflict {
                let clear_time = (conflict.conflict_arc + 8.0 - s) / speed.max(0.5);
                let past = s > conflict.conflict_arc + 5.0;
                if !past && clear_time + 1.5 > conflict.t_ego_min {
                    if attempt < 20 {
                        continue 'lanes;
                    }
                    s = conflict.conflict_arc + 5.0 + rng.gen_range(0.0..30.0);
                    if s >= w_hi {
                        continue 'lanes;
                    }
                }
            }
            // Spacing against everything already on this lane.
            let ok = occupancy[lane_idx].iter().all(|&(so, vo, hlo)| {
                let gap = (s - so).abs() - hlo - length / 2.0;
                let needed = if s > so {
                    safe_spawn_gap(vo, speed, &IdmParams::default())
                } else {
                    safe_spawn_gap(speed, vo, &IdmParams::default())
                };
                gap >= needed
            });
            if !ok {
                continue;
            }
            occupancy[lane_idx].push((s, speed, length / 2.0));
            agents.push(SimEntity {
                path: lane.path.clone(),
                arc: s,
                speed,
                length,
                width,
                category,
                idm: IdmParams { v0: speed.max(1.0), ..IdmParams::default() },
                reactive: true,
            });
            placed = true;
            break;
        }
        if !placed {
            return Err(SceneError::Generation(format!(
                "could not place agent {k} of {count} at required spacing"
            )));
        }
    }

    // Pedestrians on the crosswalk (behind the ego start, so no conflict).
    if config.pedestrians && topology == Topology::Intersection && !plan.crosswalks.is_empty() {
        let n_peds = rng.gen_range(0..=2usize);
        for _ in 0..n_peds {
            let cw = &plan.crosswalks[0];
            let reversed: Vec<Point> = cw.iter().rev().cloned().collect();
            let path = if rng.gen_bool(0.5) { cw.clone() } else { reversed };
            agents.push(SimEntity {
                arc: rng.gen_range(0.0..polyline_length(&path) * 0.4),
                speed: rng.gen_range(1.0..1.4),
                length: 0.6,
                width: 0.6,
                category: Category::Pedestrian,
                idm: IdmParams::default(),
                reactive: false,
                path,
            });
        }
    }
    Ok(agents)
}
