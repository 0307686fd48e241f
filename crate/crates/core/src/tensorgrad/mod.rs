//! Small reverse-mode differentiation engine and feed-forward networks.

mod adam;
mod checkpoint;
mod matrix;
mod mlp;
mod tape;

pub use adam::{Adam, StepOutcome};
pub use checkpoint::{MlpDocument, MLP_FORMAT, MLP_FORMAT_VERSION};
pub use matrix::Matrix;
pub use mlp::{Activation, Mlp, MlpVars};
pub use tape::{Gradients, Tape, Var};

pub(crate) use tape::softplus;
