//! Closed-loop evaluation harness and the scripted controllers it shares
//! with the scenario generator.

pub mod collision;
pub mod expert;
pub mod idm;
pub mod metrics;
mod rollout;

pub use metrics::{score, MetricsReport};
pub use rollout::{
    planning_window, rollout, AgentMode, ExpertReplayPlanner, ModelPlanner, PlanContext, Planner,
    RolloutConfig, RolloutTrace, SimEvent, SimRecord, StopPlanner,
};
