//! Minimal neural-network toolkit: autodiff tape, parameter store, layers and Adam.

pub mod gradcheck;
pub mod layers;
pub mod optim;
pub mod params;
pub mod tape;

pub use gradcheck::{check_entries, GradSample};
pub use layers::{sinusoidal, Block, LayerNorm, Linear};
pub use optim::{Adam, GradAccum};
pub use params::{ParamId, ParamStore};
pub use tape::{sigmoid, Gradients, Graph, Mat, Var};
