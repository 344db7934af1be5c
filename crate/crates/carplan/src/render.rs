//! Static top-down SVG rendering of scenarios and rollout traces, with an
//! optional per-layer expert-score panel. Geometry is written in meters
//! inside a flipped-y group, so tests can parse coordinates directly.

use std::fmt::Write;

use crate::model::{ExpertUsage, PlanOutput};
use crate::scene::geometry::Point;
use crate::scene::{AgentState, Category, PolylineKind, Scenario};
use crate::sim::{RolloutTrace, SimEvent};

const SCALE: f64 = 6.0;

pub struct RenderInput<'a> {
    pub scenario: &'a Scenario,
    pub plan: Option<&'a PlanOutput>,
    pub trace: Option<&'a RolloutTrace>,
    pub usage: Option<&'a [ExpertUsage]>,
}

pub fn render_svg(input: &RenderInput) -> String {
    let s = input.scenario;
    let (min, max) = bounds(s);
    let w = ((max.x - min.x) * SCALE).ceil().max(100.0);
    let h = ((max.y - min.y) * SCALE).ceil().max(100.0);
    let hist_h = input.usage.map_or(0.0, |u| if u.is_empty() { 0.0 } else { 140.0 });

    let mut out = String::new();
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{:.0}\" height=\"{:.0}\" viewBox=\"0 0 {:.0} {:.0}\">",
        w,
        h + hist_h,
        w,
        h + hist_h
    );
    let _ = writeln!(out, "<rect width=\"100%\" height=\"100%\" fill=\"#fafafa\"/>");
    // Flip y so +y in scene coordinates points up on screen.
    let _ = writeln!(
        out,
        "<g transform=\"translate({:.2},{:.2}) scale({SCALE},-{SCALE})\" stroke-linecap=\"round\">",
        -min.x * SCALE,
        max.y * SCALE
    );

    for poly in &s.drivable {
        let _ = writeln!(
            out,
            "<polygon class=\"drivable\" points=\"{}\" fill=\"#e8e8e8\" stroke=\"none\"/>",
            points_attr(poly)
        );
    }
    for pl in &s.map {
        let (class, style) = match pl.kind {
            PolylineKind::LaneCenter => ("map lane_center", "stroke=\"#b0b0b0\" stroke-width=\"0.15\" stroke-dasharray=\"1.2,1.2\""),
            PolylineKind::RoadBoundary => ("map road_boundary", "stroke=\"#404040\" stroke-width=\"0.2\""),
            PolylineKind::Crosswalk => ("map crosswalk", "stroke=\"#9090d0\" stroke-width=\"0.5\" stroke-dasharray=\"0.4,0.4\""),
        };
        let _ = writeln!(
            out,
            "<polyline class=\"{class}\" points=\"{}\" fill=\"none\" {style}/>",
            points_attr(&pl.points)
        );
    }
    for cl in &s.centerlines {
        let _ = writeln!(
            out,
            "<polyline class=\"centerline\" points=\"{}\" fill=\"none\" stroke=\"#70c070\" stroke-width=\"0.12\"/>",
            points_attr(&cl.points)
        );
    }
    let _ = writeln!(
        out,
        "<circle class=\"goal\" cx=\"{:.2}\" cy=\"{:.2}\" r=\"1.0\" fill=\"none\" stroke=\"#208020\" stroke-width=\"0.3\"/>",
        s.goal.x, s.goal.y
    );

    // Ground-truth future vs predicted candidates.
    let gt = s.gt_future(s.future_steps);
    let gt_pts: Vec<Point> = gt.iter().map(|p| Point::new(p[0], p[1])).collect();
    let _ = writeln!(
        out,
        "<polyline class=\"gt-trajectory\" points=\"{}\" fill=\"none\" stroke=\"#e0a000\" stroke-width=\"0.3\"/>",
        points_attr(&gt_pts)
    );
    if let Some(plan) = input.plan {
        let best = plan.best_mode();
        for (m, traj) in plan.trajectories.iter().enumerate() {
            let pts: Vec<Point> = traj.iter().map(|p| Point::new(p[0], p[1])).collect();
            let class = if m == best { "pred-trajectory best" } else { "pred-trajectory" };
            let stroke = if m == best { "#d02020" } else { "#e8a0a0" };
            let _ = writeln!(
                out,
                "<polyline class=\"{class}\" points=\"{}\" fill=\"none\" stroke=\"{stroke}\" stroke-width=\"0.25\"/>",
                points_attr(&pts)
            );
        }
    }

    // Executed path and events from a trace, if present.
    let mut collided_agents: Vec<usize> = Vec::new();
    if let Some(trace) = input.trace {
        let path: Vec<Point> = trace.records.iter().map(|r| r.ego.position()).collect();
        let _ = writeln!(
            out,
            "<polyline class=\"ego-path\" points=\"{}\" fill=\"none\" stroke=\"#2040c0\" stroke-width=\"0.25\"/>",
            points_attr(&path)
        );
        for ev in &trace.events {
            if let SimEvent::Collision { step, agent } = ev {
                collided_agents.push(*agent);
                let at = trace.records[*step].ego.position();
                let _ = writeln!(
                    out,
                    "<circle class=\"event collision\" cx=\"{:.2}\" cy=\"{:.2}\" r=\"1.4\" fill=\"none\" stroke=\"#ff0000\" stroke-width=\"0.4\"/>",
                    at.x, at.y
                );
            }
        }
    }

    // Agent boxes at t = 0 (or final trace state).
    let hist = s.history_steps;
    for (i, track) in s.agents.iter().enumerate() {
        let st = match input.trace.and_then(|t| t.records.last().unwrap().agents[i]) {
            Some(st) => st,
            None => {
                if !track.valid[hist] || input.trace.is_some() {
                    continue;
                }
                *track.current(hist)
            }
        };
        let kind = match st.category {
            Category::Vehicle => "vehicle",
            Category::Pedestrian => "pedestrian",
            Category::Bicycle => "bicycle",
        };
        let collided = collided_agents.contains(&i);
        let class = if collided { format!("agent {kind} collided") } else { format!("agent {kind}") };
        let fill = if collided { "#ff3030" } else { "#606060" };
        let _ = writeln!(out, "{}", rect_svg(&st, &class, fill));
    }
    let ego = input
        .trace
        .map(|t| t.records.last().unwrap().ego)
        .unwrap_or(*s.av.current(hist));
    let _ = writeln!(out, "{}", rect_svg(&ego, "ego", "#8b0000"));
    let _ = writeln!(out, "</g>");

    // Expert-score histogram panel: one group per MoE layer, one bar per
    // routed expert.
    if let Some(usage) = input.usage {
        if !usage.is_empty() {
            let panel_y = h + 10.0;
            let per_layer_w = w / usage.len() as f64;
            for (li, u) in usage.iter().enumerate() {
                let x0 = li as f64 * per_layer_w + 8.0;
                let _ = writeln!(
                    out,
                    "<g class=\"expert-hist layer{}\" transform=\"translate({:.1},{:.1})\">",
                    u.layer, x0, panel_y
                );
                let total: u64 = u.counts.iter().sum::<u64>().max(1);
                let bar_w = (per_layer_w - 16.0) / u.counts.len() as f64;
                for (e, &c) in u.counts.iter().enumerate() {
                    let bh = 100.0 * c as f64 / total as f64;
                    let _ = writeln!(
                        out,
                        "<rect class=\"bar expert{e}\" x=\"{:.1}\" y=\"{:.1}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"#4060c0\"/>",
                        e as f64 * bar_w,
                        110.0 - bh,
                        (bar_w - 1.0).max(0.5),
                        bh
                    );
                }
                let _ = writeln!(
                    out,
                    "<text x=\"0\" y=\"125\" font-size=\"10\" fill=\"#202020\">layer {}</text>",
                    u.layer
                );
                let _ = writeln!(out, "</g>");
            }
        }
    }
    out.push_str("</svg>\n");
    out
}

fn points_attr(pts: &[Point]) -> String {
    let mut s = String::with_capacity(pts.len() * 12);
    for (i, p) in pts.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        let _ = write!(s, "{:.2},{:.2}", p.x, p.y);
    }
    s
}

fn rect_svg(st: &AgentState, class: &str, fill: &str) -> String {
    let r = crate::sim::collision::OrientedRect::from_state(st);
    let corners = r.corners();
    format!(
        "<polygon class=\"{class}\" points=\"{}\" fill=\"{fill}\" stroke=\"#202020\" stroke-width=\"0.08\"/>",
        points_attr(&corners)
    )
}

fn bounds(s: &Scenario) -> (Point, Point) {
    let mut min = Point::new(f64::INFINITY, f64::INFINITY);
    let mut max = Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mut take = |p: Point| {
        min.x = min.x.min(p.x);
        min.y = min.y.min(p.y);
        max.x = max.x.max(p.x);
        max.y = max.y.max(p.y);
    };
    for poly in &s.drivable {
        for &p in poly {
            take(p);
        }
    }
    for pl in &s.map {
        for &p in &pl.points {
            take(p);
        }
    }
    take(s.goal);
    if !min.x.is_finite() {
        (Point::new(-10.0, -10.0), Point::new(10.0, 10.0))
    } else {
        (Point::new(min.x - 5.0, min.y - 5.0), Point::new(max.x + 5.0, max.y + 5.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{generate_scenario, GeneratorConfig, Topology};

    fn gen(agents: usize) -> Scenario {
        generate_scenario(
            &GeneratorConfig {
                topology: Some(Topology::Straight),
                min_agents: agents,
                max_agents: agents,
                ..GeneratorConfig::default()
            },
            5,
        )
        .unwrap()
    }

    #[test]
    fn empty_scene_renders_map_only() {
        let s = gen(0);
        let svg = render_svg(&RenderInput { scenario: &s, plan: None, trace: None, usage: None });
        assert!(svg.contains("class=\"map lane_center\""));
        assert!(svg.contains("class=\"ego\""));
        assert!(!svg.contains("class=\"agent "));
        assert!(svg.contains("class=\"gt-trajectory\""));
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn agents_and_modes_appear_with_expected_counts() {
        let s = gen(3);
        let plan = PlanOutput {
            trajectories: vec![vec![[1.0, 0.0, 0.0]; 5]; 4],
            scores: vec![0.1, 0.9, 0.2, 0.3],
        };
        let svg = render_svg(&RenderInput {
            scenario: &s,
            plan: Some(&plan),
            trace: None,
            usage: None,
        });
        assert_eq!(svg.matches("class=\"agent ").count(), 3);
        assert_eq!(svg.matches("class=\"pred-trajectory").count(), 4);
        assert_eq!(svg.matches("class=\"pred-trajectory best\"").count(), 1);
    }

    #[test]
    fn histogram_panel_has_one_bar_per_expert_per_layer() {
        let s = gen(1);
        let usage = vec![
            ExpertUsage { layer: 0, counts: vec![3, 1, 0, 2] },
            ExpertUsage { layer: 1, counts: vec![1, 1, 1, 3] },
        ];
        let svg = render_svg(&RenderInput {
            scenario: &s,
            plan: None,
            trace: None,
            usage: Some(&usage),
        });
        assert_eq!(svg.matches("class=\"expert-hist").count(), 2);
        assert_eq!(svg.matches("class=\"bar expert").count(), 8);
    }

    #[test]
    fn collision_event_highlights_the_agent() {
        use crate::sim::{rollout, RolloutConfig, StopPlanner};
        let s = gen(2);
        let mut planner = StopPlanner { horizon: 40, decel: 6.0, dt: s.dt };
        let mut trace = rollout(&mut planner, &s, &RolloutConfig::default());
        // Inject a synthetic collision event to exercise the highlight path.
        trace.events.push(SimEvent::Collision { step: 0, agent: 1 });
        let svg = render_svg(&RenderInput {
            scenario: &s,
            plan: None,
            trace: Some(&trace),
            usage: None,
        });
        assert!(svg.contains("collided"));
        assert!(svg.contains("class=\"event collision\""));
        assert!(svg.contains("class=\"ego-path\""));
    }

    #[test]
    fn geometry_roundtrips_through_the_svg_text() {
        // Golden-style check on parsed geometry: the goal circle's center
        // must match the scenario's goal to two decimals.
        let s = gen(0);
        let svg = render_svg(&RenderInput { scenario: &s, plan: None, trace: None, usage: None });
        let marker = "class=\"goal\" cx=\"";
        let at = svg.find(marker).unwrap() + marker.len();
        let rest = &svg[at..];
        let cx: f64 = rest[..rest.find('"').unwrap()].parse().unwrap();
        assert!((cx - s.goal.x).abs() < 0.005);
    }
}
