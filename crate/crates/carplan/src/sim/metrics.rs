//! Closed-loop scoring: safety gates, route progress, arrival, and comfort.

use serde::Serialize;

use crate::scene::geometry::project_onto_polyline;
use crate::scene::Scenario;

use super::rollout::{RolloutTrace, SimEvent};

/// Jerk level (m/s³) at which the comfort score reaches zero.
const JERK_CEILING: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub collision_free: u8,
    pub drivable_compliance: u8,
    pub progress_ratio: f64,
    pub arrived: u8,
    /// RMS of longitudinal jerk over the rollout (m/s³).
    pub comfort_rms_jerk: f64,
    pub comfort_score: f64,
    /// 0–100; zero whenever a collision or off-road event occurred.
    pub composite: f64,
}

pub fn score(trace: &RolloutTrace, scenario: &Scenario) -> MetricsReport {
    let collided = trace
        .events
        .iter()
        .any(|e| matches!(e, SimEvent::Collision { .. }));
    let offroad = trace.events.iter().any(|e| matches!(e, SimEvent::OffRoad { .. }));
    let failed = trace
        .events
        .iter()
        .any(|e| matches!(e, SimEvent::PlannerFailure { .. }));

    let route = &scenario.centerlines[0].points;
    let first = trace.records.first().expect("trace has at least one record");
    let last = trace.records.last().unwrap();
    let (s0, _) = project_onto_polyline(route, first.ego.position());
    let (s1, _) = project_onto_polyline(route, last.ego.position());
    let (s_goal, _) = project_onto_polyline(route, scenario.goal);
    let denom = (s_goal - s0).max(1e-9);
    let progress = ((s1 - s0) / denom).clamp(0.0, 1.0);

    let comfort_rms_jerk = rms_jerk(trace);
    let comfort_score = (1.0 - comfort_rms_jerk / JERK_CEILING).clamp(0.0, 1.0);

    let collision_free = u8::from(!collided);
    let drivable_compliance = u8::from(!offroad);
    let arrived = u8::from(progress >= 0.95 && !collided && !offroad && !failed);
    let composite = if collided || offroad || failed {
        0.0
    } else {
        100.0 * (0.8 * progress + 0.2 * comfort_score)
    };
    MetricsReport {
        collision_free,
        drivable_compliance,
        progress_ratio: progress,
        arrived,
        comfort_rms_jerk,
        comfort_score,
        composite,
    }
}

/// RMS of the second finite difference of speed.
fn rms_jerk(trace: &RolloutTrace) -> f64 {
    let speeds: Vec<f64> = trace.records.iter().map(|r| r.ego.speed()).collect();
    if speeds.len() < 3 {
        return 0.0;
    }
    let dt = trace.dt;
    let accels: Vec<f64> = speeds.windows(2).map(|w| (w[1] - w[0]) / dt).collect();
    let jerks: Vec<f64> = accels.windows(2).map(|w| (w[1] - w[0]) / dt).collect();
    let ms = jerks.iter().map(|j| j * j).sum::<f64>() / jerks.len() as f64;
    ms.sqrt()
}

#[cfg(test)]
mod tests {
    use super::super::rollout::{AgentMode, RolloutTrace, SimRecord};
    use super::*;
    use crate::scene::{AgentState, Category};

    fn still_ego() -> AgentState {
        AgentState {
            x: 0.0,
            y: 0.0,
            heading: 0.0,
            vx: 0.0,
            vy: 0.0,
            length: 4.8,
            width: 2.0,
            category: Category::Vehicle,
        }
    }

    fn trace_with(records: Vec<SimRecord>, events: Vec<SimEvent>) -> RolloutTrace {
        RolloutTrace { mode: AgentMode::NonReactive, seed: 0, dt: 0.1, records, events }
    }

    #[test]
    fn motionless_ego_scores_idle() {
        let s = crate::scene::generate_scenario(
            &crate::scene::GeneratorConfig {
                topology: Some(crate::scene::Topology::Straight),
                min_agents: 0,
                max_agents: 0,
                ..Default::default()
            },
            1,
        )
        .unwrap();
        let records: Vec<SimRecord> = (0..20)
            .map(|step| SimRecord {
                step,
                ego: still_ego(),
                agents: vec![],
                plan: None,
                events: vec![],
            })
            .collect();
        let report = score(&trace_with(records, vec![]), &s);
        assert_eq!(report.collision_free, 1);
        assert_eq!(report.drivable_compliance, 1);
        assert!(report.progress_ratio < 0.05);
        assert_eq!(report.arrived, 0);
        assert_eq!(report.comfort_rms_jerk, 0.0);
        assert!(report.composite > 0.0, "no safety event, so not gated to zero");
    }

    #[test]
    fn collision_gates_composite_to_zero() {
        let s = crate::scene::generate_scenario(&Default::default(), 2).unwrap();
        let records = vec![SimRecord {
            step: 0,
            ego: still_ego(),
            agents: vec![],
            plan: None,
            events: vec![],
        }];
        let events = vec![SimEvent::Collision { step: 0, agent: 0 }];
        let report = score(&trace_with(records, events), &s);
        assert_eq!(report.collision_free, 0);
        assert_eq!(report.composite, 0.0);
    }
}
