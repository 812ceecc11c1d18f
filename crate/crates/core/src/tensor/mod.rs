//! Dense matrices, parameters and the reverse-mode tape.

mod matrix;
mod param;
mod tape;

pub use matrix::Matrix;
pub use param::{init_matrix, GradMap, InitScheme, ParamGroup, ParamId, ParamSet, ParamTensor};
pub use tape::{Gradients, Tape, Var};

#[cfg(test)]
pub(crate) use tape::sigmoid;
