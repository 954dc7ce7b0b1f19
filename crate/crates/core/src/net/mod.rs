//! Minimal point network: shared per-point layers, a simplified EdgeConv,
//! global max pooling and a dense classifier head, with exact reverse-mode
//! gradients.

mod feature_map;
mod layers;
mod model;
mod optim;

pub use feature_map::FeatureMap;
pub use layers::{
    cross_entropy, edge_conv_forward, edge_conv_forward_with_table, global_max_pool, head_forward,
    shared_linear_forward, Dense,
};
pub use model::{backward, forward, predict, LayerSpec, LayerWidth, ModelSpec, Params, Sample, Tape};
pub use optim::{optimizer_step, Optimizer, OptimizerConfig, OptimizerKind};
