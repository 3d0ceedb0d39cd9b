//! Layer primitives with forward and backward semantics, the optimizer and
//! initialization. All operations are pure functions of their inputs plus
//! explicit state objects.

pub mod activation;
pub mod adam;
pub mod batchnorm;
pub mod conv;
pub mod dense;
pub mod init;
pub mod matmul;
pub mod pool;

pub use activation::{relu, relu_backward, softmax, softmax_xent};
pub use adam::{adam_step, AdamHyper, AdamState};
pub use batchnorm::{batchnorm_backward, batchnorm_forward, BatchNormParams, BnCache, BnMode, RunningStats};
pub use conv::{conv2d_backward, conv2d_same};
pub use dense::{dense_backward, dense_forward};
pub use init::{filter_gram, he_uniform, orthogonal_init, orthogonal_init_semi};
pub use pool::{global_max_pool, global_max_pool_backward, maxpool2x2, maxpool2x2_backward};
