//! Minimal deterministic tensor, layer, backprop and optimizer kernel.

pub mod checkpoint;
pub mod layers;
pub mod mlp;
pub mod optim;
pub mod sequential;
pub mod tensor;

pub use layers::{receptive_field, sigmoid, Activation, Layer, LayerSpec, Param};
pub use mlp::{MlpOutput, SkipMlp};
pub use optim::{LrSchedule, RmsProp};
pub use sequential::Sequential;
pub use tensor::{Real, Tensor};
