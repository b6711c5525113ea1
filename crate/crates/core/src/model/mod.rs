//! Network architecture, parameters and checkpoints.

pub mod checkpoint;
pub mod network;
pub mod spec;

pub use checkpoint::Checkpoint;
pub use network::{Gradients, Network, Trace};
pub use spec::{
    ActivationOrder, CellSpec, LayerRole, LayerShape, NetworkSpec, ParameterCount,
    ProjectionUnitSpec, SkipKind, SkipPolicy, VariantKind,
};
