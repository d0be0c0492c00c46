//! Toy detector, reverse-mode autodiff tape and checkpoints.

pub mod align;
pub mod gradcheck;
pub mod net;
pub mod params;
pub mod tape;

pub use align::{align_sequence, AlignMethod};
pub use gradcheck::{gradient_check, GradCheckReport};
pub use net::{is_embedder_param, BoundParams, ForwardOutput, ModelConfig, ParamGroup, ToyModel};
pub use params::{load_checkpoint, save_checkpoint, ParamStore};
pub use tape::{Tape, Tensor, Var};
