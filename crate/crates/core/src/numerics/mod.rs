//! Dense numerics with hand-written forward and backward passes.
//!
//! Every layer is a pair of free functions: `*_forward` returns the output and a
//! cache, `*_backward` consumes the cache and an upstream gradient. Gradients
//! share the layout of the parameter struct they differentiate, so the optimizer
//! and gradient accumulation only need [`ParamSet`].

mod activation;
mod adam;
mod conv1d;
mod dense;
mod gradcheck;
mod init;
mod loss;
mod lstm;
mod params;
mod tensor;

pub use activation::{relu_backward, relu_forward, sigmoid};
pub use adam::{adam_step, AdamConfig, AdamState};
pub use conv1d::{conv1d_backward, conv1d_forward, conv_output_len, Conv1dCache, Conv1dParams};
pub use dense::{dense_backward, dense_forward, DenseCache, DenseParams};
pub use gradcheck::{finite_diff_check, relative_error, GradCheckReport, DEFAULT_FD_EPS};
pub use init::{glorot_limit, ParamRng};
pub use loss::mse_loss;
pub use lstm::{lstm_backward, lstm_forward, LstmCache, LstmLayerParams, LstmParams};
pub use params::{accumulate, scale_params, zeros_like, ParamSet};
pub use tensor::Tensor;
