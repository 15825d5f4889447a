//! The diagnosis model: differentiable layers, the five-network graph, and
//! checkpoint serialization.

pub mod checkpoint;
pub mod layers;
pub mod net;

pub use net::{
    backward, extract, forward_eval, forward_train, instance_stats, transform, BackwardPlan,
    Grads, HeadGrads, ModelConfig, ModelParams, ModuleGroup, NoiseDraw, Stage, TrainForward,
    SIGMA_FLOOR,
};
