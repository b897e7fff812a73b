//! Relational operator layer: scan/map stages, key joins, aggregation,
//! stage materialization, and the composite row-wise operators.

mod rowwise;
mod stage;

pub use rowwise::{layer_norm, softmax_aggregate_divide, softmax_exp_scan, softmax_two_phase};
pub use stage::{
    materialize, residual_add, run_pipeline, ExecMode, MemoryStore, Pipeline, SetStore, Stage,
    StageOp, StageTrace, TensorSet,
};
