//! Synchronous split-network training: per-client forward passes producing
//! intermediate outputs, a coordinator-hosted top model fusing them, error
//! feedback to clients, and the epoch loop.

pub mod engine;
pub mod tap;

pub use engine::{
    client_backward, run, top_step, BatchCtx, ClientState, CoordinatorState, DefenseHook,
    EpochObserver, EpochRecord, EvalMetric, IntermediateOutput, GradFeedback, NoDefense,
    NoObserver, TaskKind, TopModel, TopStep, TrainHistory, VflSession,
};
pub use tap::{read_tap_jsonl, FeatureTap, TapRecord};
