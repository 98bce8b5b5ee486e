//! Dense matrices, a differentiable tape, fully connected networks and Adam.

pub mod adam;
pub mod mlp;
pub mod tape;
pub mod tensor;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use mlp::{
    forward_batch, forward_on, grad_input_differentiable, grad_params, input_gradient_on, mlp_forward, mlp_infer,
    Activation, Forward, InputGradient, MlpNodes, MlpSpec, NamedTensor, ParameterSet,
};
pub use tape::{NodeId, Op, Tape};
pub use tensor::{matmul, Tensor2};
