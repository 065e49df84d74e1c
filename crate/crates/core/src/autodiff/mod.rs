//! Reverse-mode automatic differentiation over dense float64 tensors.

mod gradcheck;
mod ops;
mod tape;
mod tensor;

pub use gradcheck::{gradcheck, gradcheck_many, DEFAULT_EPS};
pub use ops::{apply_custom, apply_primitive, CustomOp, GatherPlan, Primitive, SourceLayout};
pub use tape::{is_recording, no_grad, Gradients, Tape};
pub use tensor::{numel, ParamId, Tensor};
