//! Model-predictive control over learned world models and the outer
//! model-based loop that alternates fitting and data collection.

mod mbrl;
mod planner;

pub use mbrl::{
    build_model, mpc_episode, resolve_partition, run_mbrl, run_oracle, write_learning_curve,
    IterationStats, MbrlLoopConfig, MbrlRun, ModelShape, PartitionSource,
};
pub use planner::{plan_action, PlanReport, PlannerConfig, PlannerMode};
