//! Receding-horizon closed-loop simulation. The ego executes a planner's
//! best mode through a kinematic unicycle tracker; surrounding agents either
//! replay their logs (non-reactive) or follow IDM along their logged path
//! geometry (reactive). Pedestrians always replay.

use serde::{Deserialize, Serialize};

use crate::model::{accumulate_usage, CarPlan, ExpertUsage, PlanOutput};
use crate::scene::geometry::{
    heading_at_arc, point_at_arc, polyline_length, project_onto_polyline, wrap_angle, Frame, Point,
};
use crate::scene::{AgentState, AgentTrack, Category, Centerline, Scenario};

use super::collision::{rects_overlap, OrientedRect};
use super::expert::{find_route_leader, integrate_unicycle, Obstacle};
use super::idm::{idm_accel, IdmParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentMode {
    NonReactive,
    Reactive,
}

impl std::str::FromStr for AgentMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "nr" => Ok(AgentMode::NonReactive),
            "r" => Ok(AgentMode::Reactive),
            other => Err(format!("unknown agent mode: {other} (expected nr|r)")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RolloutConfig {
    pub mode: AgentMode,
    /// Defaults to the scenario's logged future length.
    pub horizon_steps: Option<usize>,
    /// Replan every this many steps (1 s at 10 Hz).
    pub replan_interval: usize,
    pub seed: u64,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        RolloutConfig {
            mode: AgentMode::NonReactive,
            horizon_steps: None,
            replan_interval: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SimEvent {
    Collision { step: usize, agent: usize },
    OffRoad { step: usize },
    Arrived { step: usize },
    PlannerFailure { step: usize, detail: String },
}

impl SimEvent {
    pub fn step(&self) -> usize {
        match self {
            SimEvent::Collision { step, .. }
            | SimEvent::OffRoad { step }
            | SimEvent::Arrived { step }
            | SimEvent::PlannerFailure { step, .. } => *step,
        }
    }
}

/// One 10 Hz tick of the rollout.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimRecord {
    pub step: usize,
    pub ego: AgentState,
    /// Absent agents (disappeared from the log) are None.
    pub agents: Vec<Option<AgentState>>,
    /// Present on replanning steps only; trajectories are in the ego frame
    /// captured at that step.
    pub plan: Option<PlanOutput>,
    pub events: Vec<SimEvent>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RolloutTrace {
    pub mode: AgentMode,
    pub seed: u64,
    pub dt: f64,
    pub records: Vec<SimRecord>,
    pub events: Vec<SimEvent>,
}

/// A planner consumes an ego-frame window and produces candidate
/// trajectories in that frame.
pub trait Planner {
    fn plan(&mut self, window: &Scenario, ctx: &PlanContext) -> Result<PlanOutput, String>;
    fn horizon_steps(&self) -> usize;
}

/// Rollout-side context handed to planners alongside the window.
pub struct PlanContext<'a> {
    /// Steps elapsed since the rollout began (t = 0 of the scenario).
    pub step: usize,
    /// Current ego pose in the scenario frame.
    pub ego_pose: Frame,
    pub ego_speed: f64,
    pub scenario: &'a Scenario,
}

/// Wraps a trained model; records routing telemetry across calls.
pub struct ModelPlanner {
    pub model: CarPlan,
    pub usage: Vec<ExpertUsage>,
}

impl ModelPlanner {
    pub fn new(model: CarPlan) -> Self {
        ModelPlanner { model, usage: Vec::new() }
    }
}

impl Planner for ModelPlanner {
    fn plan(&mut self, window: &Scenario, _ctx: &PlanContext) -> Result<PlanOutput, String> {
        let (plan, decisions) = self.model.infer(window);
        accumulate_usage(&mut self.usage, &decisions);
        Ok(plan)
    }

    fn horizon_steps(&self) -> usize {
        self.model.config.future_steps
    }
}

/// Replays the scenario's logged expert trajectory (the Table-style
/// log-replay upper-bound planner).
pub struct ExpertReplayPlanner {
    horizon: usize,
}

impl ExpertReplayPlanner {
    pub fn new(horizon: usize) -> Self {
        ExpertReplayPlanner { horizon }
    }
}

impl Planner for ExpertReplayPlanner {
    fn plan(&mut self, _window: &Scenario, ctx: &PlanContext) -> Result<PlanOutput, String> {
        let s = ctx.scenario;
        let mut traj = Vec::with_capacity(self.horizon);
        for k in 1..=self.horizon {
            let idx = (s.history_steps + ctx.step + k).min(s.track_len() - 1);
            let st = &s.av.states[idx];
            let local = ctx.ego_pose.to_local(st.position());
            traj.push([local.x, local.y, ctx.ego_pose.heading_to_local(st.heading)]);
        }
        Ok(PlanOutput { trajectories: vec![traj], scores: vec![1.0] })
    }

    fn horizon_steps(&self) -> usize {
        self.horizon
    }
}

/// Brakes hard in a straight line; used to probe reactive-agent divergence.
pub struct StopPlanner {
    pub horizon: usize,
    pub decel: f64,
    pub dt: f64,
}

impl Planner for StopPlanner {
    fn plan(&mut self, _window: &Scenario, ctx: &PlanContext) -> Result<PlanOutput, String> {
        let mut traj = Vec::with_capacity(self.horizon);
        let mut v = ctx.ego_speed;
        let mut x = 0.0;
        for _ in 0..self.horizon {
            v = (v - self.decel * self.dt).max(0.0);
            x += v * self.dt;
            traj.push([x, 0.0, 0.0]);
        }
        Ok(PlanOutput { trajectories: vec![traj], scores: vec![1.0] })
    }

    fn horizon_steps(&self) -> usize {
        self.horizon
    }
}

/// Reactive-agent runtime state: IDM speed control along the agent's logged
/// path geometry, extended straight beyond the log's end.
struct ReactiveAgent {
    path: Vec<Point>,
    arc: f64,
    speed: f64,
}

struct AgentRuntime {
    template: AgentState,
    history: Vec<AgentState>,
    present: bool,
    reactive: Option<ReactiveAgent>,
}

/// Build the ego-frame planning window at the current sim state.
pub fn planning_window(
    scenario: &Scenario,
    ego_pose: &Frame,
    ego_history: &[AgentState],
    agents: &[(bool, Vec<AgentState>)],
    future_steps: usize,
) -> Scenario {
    let hist = scenario.history_steps;
    let to_local_state = |s: &AgentState| -> AgentState {
        let p = ego_pose.to_local(s.position());
        let (vx, vy) = ego_pose.vec_to_local(s.vx, s.vy);
        AgentState {
            x: p.x,
            y: p.y,
            heading: wrap_angle(ego_pose.heading_to_local(s.heading)),
            vx,
            vy,
            ..*s
        }
    };

    let window_track = |history: &[AgentState], pad_future_valid: bool| -> AgentTrack {
        let mut states = Vec::with_capacity(hist + 1 + future_steps);
        let mut valid = Vec::with_capacity(hist + 1 + future_steps);
        // History buffer holds at least one state; older gaps are invalid.
        let have = history.len().min(hist + 1);
        let missing = hist + 1 - have;
        let first = to_local_state(&history[history.len() - have]);
        for _ in 0..missing {
            states.push(first);
            valid.push(false);
        }
        for s in &history[history.len() - have..] {
            states.push(to_local_state(s));
            valid.push(true);
        }
        let last = *states.last().unwrap();
        for _ in 0..future_steps {
            states.push(last);
            valid.push(pad_future_valid);
        }
        AgentTrack { states, valid }
    };

    let av = window_track(ego_history, true);
    let window_agents: Vec<AgentTrack> = agents
        .iter()
        .filter(|(present, _)| *present)
        .map(|(_, history)| window_track(history, false))
        .collect();

    let map = scenario
        .map
        .iter()
        .map(|pl| crate::scene::MapPolyline {
            points: pl.points.iter().map(|&p| ego_pose.to_local(p)).collect(),
            kind: pl.kind,
        })
        .collect();

    // Remaining route toward the goal, re-expressed around the ego. The
    // slice is extended along the route's final tangent so its length
    // matches what training centerlines look like even near the goal.
    let route = &scenario.centerlines[0].points;
    let (s_now, _) = project_onto_polyline(route, ego_pose.origin);
    let route_len = polyline_length(route);
    let s_from = s_now.min(route_len - 4.0).max(0.0);
    const WINDOW_CENTERLINE_LEN: f64 = 40.0;
    let centerlines = vec![Centerline {
        points: {
            let remaining = route_len - s_from;
            let n = ((remaining / 2.0).ceil() as usize).max(1);
            let mut pts: Vec<Point> = (0..=n)
                .map(|i| {
                    let s = s_from + remaining * i as f64 / n as f64;
                    ego_pose.to_local(point_at_arc(route, s))
                })
                .collect();
            if remaining < WINDOW_CENTERLINE_LEN {
                let tail = heading_at_arc(route, route_len);
                let local_tail = ego_pose.heading_to_local(tail);
                let end = *pts.last().unwrap();
                let extend = WINDOW_CENTERLINE_LEN - remaining;
                let m = (extend / 2.0).ceil() as usize;
                for i in 1..=m {
                    let d = extend * i as f64 / m as f64;
                    pts.push(Point::new(
                        end.x + d * local_tail.cos(),
                        end.y + d * local_tail.sin(),
                    ));
                }
            }
            pts
        },
    }];

    Scenario {
        version: scenario.version,
        seed: scenario.seed,
        topology: scenario.topology,
        dt: scenario.dt,
        history_steps: hist,
        future_steps,
        av,
        agents: window_agents,
        map,
        centerlines,
        goal: ego_pose.to_local(scenario.goal),
        drivable: scenario
            .drivable
            .iter()
            .map(|poly| poly.iter().map(|&p| ego_pose.to_local(p)).collect())
            .collect(),
    }
}

pub fn rollout(
    planner: &mut dyn Planner,
    scenario: &Scenario,
    config: &RolloutConfig,
) -> RolloutTrace {
    let dt = scenario.dt;
    let hist = scenario.history_steps;
    let horizon = config.horizon_steps.unwrap_or(scenario.future_steps);
    let reactive = config.mode == AgentMode::Reactive;

    // Ego starts from the logged t = 0 state.
    let av0 = scenario.av.current(hist);
    let mut ego_pos = av0.position();
    let mut ego_heading = av0.heading;
    let mut ego_speed = av0.speed();
    let (ego_len, ego_wid) = (av0.length, av0.width);
    let mut ego_history: Vec<AgentState> = scenario.av.states[..=hist].to_vec();

    let mut agents: Vec<AgentRuntime> = scenario
        .agents
        .iter()
        .map(|track| {
            let t0 = track.current(hist);
            let history: Vec<AgentState> = (0..=hist)
                .filter(|&i| track.valid[i])
                .map(|i| track.states[i])
                .collect();
            let reactive_state = if reactive && t0.category != Category::Pedestrian {
                Some(ReactiveAgent {
                    path: logged_path(track, hist),
                    arc: {
                        let path = logged_path(track, hist);
                        let (s, _) = project_onto_polyline(&path, t0.position());
                        s
                    },
                    speed: t0.speed(),
                })
            } else {
                None
            };
            AgentRuntime {
                template: *t0,
                history,
                present: true,
                reactive: reactive_state,
            }
        })
        .collect();

    let route = &scenario.centerlines[0].points;
    let (s_start, _) = project_onto_polyline(route, ego_pos);
    let (s_goal, _) = project_onto_polyline(route, scenario.goal);

    let mut trace = RolloutTrace {
        mode: config.mode,
        seed: config.seed,
        dt,
        records: Vec::with_capacity(horizon + 1),
        events: Vec::new(),
    };
    let mut current_plan: Option<(PlanOutput, Frame, usize)> = None;
    let mut collided: Vec<bool> = vec![false; agents.len()];
    let mut went_offroad = false;
    let mut arrived = false;

    for step in 0..=horizon {
        let ego_pose = Frame { origin: ego_pos, heading: ego_heading };
        let mut step_events: Vec<SimEvent> = Vec::new();
        let mut plan_for_record = None;

        // Replan on schedule.
        if step < horizon && step % config.replan_interval == 0 {
            let window_agents: Vec<(bool, Vec<AgentState>)> = agents
                .iter()
                .map(|a| (a.present, a.history.clone()))
                .collect();
            let window = planning_window(
                scenario,
                &ego_pose,
                &ego_history,
                &window_agents,
                planner.horizon_steps(),
            );
            let ctx = PlanContext { step, ego_pose, ego_speed, scenario };
            match planner.plan(&window, &ctx) {
                Ok(plan) => {
                    plan_for_record = Some(plan.clone());
                    current_plan = Some((plan, ego_pose, step));
                }
                Err(detail) => {
                    let ev = SimEvent::PlannerFailure { step, detail };
                    step_events.push(ev.clone());
                    trace.events.push(ev);
                    trace.records.push(SimRecord {
                        step,
                        ego: ego_state(ego_pos, ego_heading, ego_speed, ego_len, ego_wid),
                        agents: agents.iter().map(|a| a.present.then_some(*a.history.last().unwrap())).collect(),
                        plan: None,
                        events: step_events,
                    });
                    return trace;
                }
            }
        }

        // Score the current tick: collisions, drivable compliance, arrival.
        let ego_now = ego_state(ego_pos, ego_heading, ego_speed, ego_len, ego_wid);
        let ego_rect = OrientedRect::from_state(&ego_now);
        let agent_states: Vec<Option<AgentState>> = agents
            .iter()
            .map(|a| a.present.then_some(*a.history.last().unwrap()))
            .collect();
        for (i, st) in agent_states.iter().enumerate() {
            if let Some(st) = st {
                if !collided[i] && rects_overlap(&ego_rect, &OrientedRect::from_state(st)) {
                    collided[i] = true;
                    let ev = SimEvent::Collision { step, agent: i };
                    step_events.push(ev.clone());
                    trace.events.push(ev);
                }
            }
        }
        if !went_offroad && !footprint_inside(&ego_rect, &scenario.drivable) {
            went_offroad = true;
            let ev = SimEvent::OffRoad { step };
            step_events.push(ev.clone());
            trace.events.push(ev);
        }
        if !arrived {
            let (s_now, _) = project_onto_polyline(route, ego_pos);
            let denom = (s_goal - s_start).max(1e-9);
            if (s_now - s_start) / denom >= 0.95 {
                arrived = true;
                let ev = SimEvent::Arrived { step };
                step_events.push(ev.clone());
                trace.events.push(ev);
            }
        }

        trace.records.push(SimRecord {
            step,
            ego: ego_now,
            agents: agent_states,
            plan: plan_for_record,
            events: step_events,
        });
        // The episode ends at the goal; past it there is no route to follow.
        if step == horizon || arrived {
            break;
        }

        // Advance the ego along the active plan, aiming a few waypoints
        // ahead so single-waypoint noise does not excite the tracker.
        const TRACK_LOOKAHEAD: usize = 3;
        let (plan, plan_pose, plan_step) = current_plan.as_ref().expect("plan exists after replan");
        let best = plan.best_mode();
        let last_idx = plan.trajectories[best].len() - 1;
        let elapsed = step - plan_step;
        let idx = (elapsed + TRACK_LOOKAHEAD).min(last_idx);
        let reach_steps = (idx - elapsed).max(1);
        let target_local = plan.trajectories[best][idx];
        let target = plan_pose.to_world(Point::new(target_local[0], target_local[1]));
        let (np, nh, nv) =
            track_waypoint(ego_pos, ego_heading, ego_speed, target, dt, reach_steps);
        ego_pos = np;
        ego_heading = nh;
        ego_speed = nv;
        ego_history.push(ego_state(ego_pos, ego_heading, ego_speed, ego_len, ego_wid));
        if ego_history.len() > hist + 1 {
            let excess = ego_history.len() - (hist + 1);
            ego_history.drain(..excess);
        }

        // Advance agents.
        let snapshot: Vec<Option<AgentState>> = agents
            .iter()
            .map(|a| a.present.then_some(*a.history.last().unwrap()))
            .collect();
        let log_idx = hist + step + 1;
        for i in 0..agents.len() {
            let template = agents[i].template;
            let next_state: Option<AgentState> = match &mut agents[i].reactive {
                None => {
                    // Log replay: follow the recorded track while it lasts.
                    let track = &scenario.agents[i];
                    if log_idx < track.states.len() {
                        track.valid[log_idx].then_some(track.states[log_idx])
                    } else {
                        agents[i].present.then_some(*agents[i].history.last().unwrap())
                    }
                }
                Some(r) => {
                    // Disappearance still follows the log's validity.
                    let track = &scenario.agents[i];
                    let still_logged = log_idx >= track.states.len() || track.valid[log_idx];
                    if !still_logged {
                        None
                    } else {
                        let mut obstacles: Vec<Obstacle> = Vec::with_capacity(snapshot.len());
                        for (j, st) in snapshot.iter().enumerate() {
                            if j == i {
                                continue;
                            }
                            if let Some(st) = st {
                                obstacles.push(Obstacle {
                                    position: st.position(),
                                    speed_along: (st.vx, st.vy),
                                    half_length: st.length / 2.0,
                                });
                            }
                        }
                        obstacles.push(Obstacle {
                            position: ego_pos,
                            speed_along: (
                                ego_speed * ego_heading.cos(),
                                ego_speed * ego_heading.sin(),
                            ),
                            half_length: ego_len / 2.0,
                        });
                        let lead = find_route_leader(
                            &r.path,
                            r.arc,
                            template.length / 2.0,
                            &obstacles,
                            2.0,
                        );
                        let idm = IdmParams {
                            v0: template.speed().max(1.0),
                            ..IdmParams::default()
                        };
                        let acc = idm_accel(r.speed, lead, &idm);
                        r.speed = (r.speed + acc * dt).max(0.0);
                        r.arc += r.speed * dt;
                        let p = point_at_arc(&r.path, r.arc);
                        let h = heading_at_arc(&r.path, r.arc);
                        Some(AgentState {
                            x: p.x,
                            y: p.y,
                            heading: h,
                            vx: r.speed * h.cos(),
                            vy: r.speed * h.sin(),
                            ..template
                        })
                    }
                }
            };
            match next_state {
                Some(st) => {
                    agents[i].present = true;
                    agents[i].history.push(st);
                    if agents[i].history.len() > hist + 1 {
                        let excess = agents[i].history.len() - (hist + 1);
                        agents[i].history.drain(..excess);
                    }
                }
                None => agents[i].present = false,
            }
        }
    }
    trace
}

fn ego_state(pos: Point, heading: f64, speed: f64, length: f64, width: f64) -> AgentState {
    AgentState {
        x: pos.x,
        y: pos.y,
        heading,
        vx: speed * heading.cos(),
        vy: speed * heading.sin(),
        length,
        width,
        category: Category::Vehicle,
    }
}

/// Direct waypoint tracking under unicycle kinematics with yaw-rate and
/// acceleration limits. `reach_steps` is how many ticks remain to reach the
/// target waypoint.
fn track_waypoint(
    pos: Point,
    heading: f64,
    speed: f64,
    target: Point,
    dt: f64,
    reach_steps: usize,
) -> (Point, f64, f64) {
    const MAX_YAW_RATE: f64 = 2.0;
    const MAX_ACCEL: f64 = 5.0;
    let dx = target.x - pos.x;
    let dy = target.y - pos.y;
    let dist = (dx * dx + dy * dy).sqrt();
    let horizon = reach_steps.max(1) as f64 * dt;
    let (yaw_rate, accel) = if dist < 1e-6 {
        (0.0, (-speed / dt).clamp(-MAX_ACCEL, MAX_ACCEL))
    } else {
        let desired_heading = dy.atan2(dx);
        let err = wrap_angle(desired_heading - heading);
        let yaw = (err / dt).clamp(-MAX_YAW_RATE, MAX_YAW_RATE);
        // Approach speed projected along the heading; a target behind the
        // ego means brake, not turn around.
        let v_des = (dist / horizon) * err.cos().max(0.0);
        let acc = ((v_des - speed) / dt).clamp(-MAX_ACCEL, MAX_ACCEL);
        (yaw, acc)
    };
    integrate_unicycle(pos, heading, speed, accel, yaw_rate, dt)
}

/// The agent's logged positions (valid steps only) extended straight beyond
/// the final heading, giving a lane-consistent path for IDM control.
fn logged_path(track: &AgentTrack, hist: usize) -> Vec<Point> {
    let mut pts: Vec<Point> = Vec::new();
    for (i, st) in track.states.iter().enumerate() {
        if !track.valid[i] {
            continue;
        }
        let p = st.position();
        if pts.last().map_or(true, |q: &Point| q.dist(p) > 0.05) {
            pts.push(p);
        }
        let _ = hist;
    }
    if pts.len() < 2 {
        let st = track.current(hist);
        let p = st.position();
        pts = vec![p, Point::new(p.x + st.heading.cos(), p.y + st.heading.sin())];
    }
    let n = pts.len();
    let tail_heading = {
        let a = pts[n - 2];
        let b = pts[n - 1];
        (b.y - a.y).atan2(b.x - a.x)
    };
    let end = pts[n - 1];
    pts.push(Point::new(end.x + 200.0 * tail_heading.cos(), end.y + 200.0 * tail_heading.sin()));
    pts
}

fn footprint_inside(rect: &OrientedRect, drivable: &[Vec<Point>]) -> bool {
    let mut probes: Vec<Point> = rect.corners().to_vec();
    probes.push(rect.center);
    let corners = rect.corners();
    for i in 0..4 {
        let a = corners[i];
        let b = corners[(i + 1) % 4];
        probes.push(Point::new((a.x + b.x) / 2.0, (a.y + b.y) / 2.0));
    }
    probes.iter().all(|&p| {
        drivable
            .iter()
            .any(|poly| crate::scene::geometry::point_in_polygon(p, poly))
    })
}
