//! Layer primitives: forward and backward passes plus gradient checking.

pub mod conv;
pub mod fc;
pub mod gradcheck;
pub mod lrn;
pub mod pool;
pub mod relu;
pub mod softmax;

pub use conv::{conv_backward, conv_forward, ConvGrads, ConvParams};
pub use fc::{fc_backward, fc_forward, FcGrads, FcParams};
pub use gradcheck::{
    check_conv, check_fc, check_lrn, check_maxpool, check_relu, GradCheckReport,
    DEFAULT_EPSILON, DEFAULT_TOLERANCE,
};
pub use lrn::{lrn_backward, lrn_forward, LrnParams};
pub use pool::{maxpool_backward, maxpool_forward, ArgmaxMap, PoolParams};
pub use relu::{relu_backward, relu_forward};
pub use softmax::{argmax_class, log_sum_exp, softmax};
