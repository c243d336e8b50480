//! The DeXpression graph: declarative layer specs wired into a DAG, shape
//! inference validated against the published per-layer output sizes, and
//! forward/backward execution over the graph.

mod checkpoint;
mod graph;
mod run;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta, CHECKPOINT_VERSION};
pub use graph::{
    build_dexpression, build_dexpression_with, infer_shapes, DexpressionConfig, LayerKind,
    LayerSpec, NetworkGraph,
};
pub use run::{
    backward, check_network_gradients, forward, init_params, ForwardOutput, ParamSet,
};
