//! Imitation-learning motion planner with a displacement-aware scene encoder,
//! a mixture-of-experts trajectory decoder, a synthetic scenario generator,
//! and a closed-loop evaluation harness.

pub mod model;
pub mod numerics;
pub mod render;
pub mod scene;
pub mod sim;
pub mod training;
