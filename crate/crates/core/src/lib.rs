pub mod actions;
pub mod codec;
pub mod exec;
pub mod kinematics;
pub mod metrics;
pub mod objectives;
pub mod planner;
pub mod render;
pub mod world_model;
