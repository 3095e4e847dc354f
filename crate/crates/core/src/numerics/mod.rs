//! Dense tensor math, layers, losses and optimizers.
//!
//! Everything here is a deterministic function of its inputs plus an explicit
//! [`RngState`]; nothing mutates its arguments except the optimizer updates,
//! which take parameters and state by `&mut`.

mod layers;
mod loss;
mod ops;
mod optim;
mod rng;
mod tensor;

pub use layers::{
    backward_stack, dropout, fully_connected_forward, glorot_init, stack_fully_connected, Activation,
    BackwardOutput, DenseGrads, DenseLayerParams, LayerCache,
};
pub use loss::{mean_squared_error, sigmoid_cross_entropy, softmax_cross_entropy};
pub use ops::{argmax_rows, log_softmax_rows, matmul, one_hot, relu, sigmoid, softmax_rows};
pub use optim::{
    adagrad_update, sgd_update, AdagradState, NamedTensors, Optimizer, OptimizerSpec,
    ADAGRAD_SLOT_SUFFIX, DEFAULT_ADAGRAD_EPSILON, DEFAULT_ADAGRAD_INITIAL_ACCUMULATOR,
};
pub use rng::RngState;
pub use tensor::{Shape, Tensor};
