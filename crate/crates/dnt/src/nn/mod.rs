//! Minimal differentiable tensor runtime.
//!
//! Every layer the DNT model needs, each with a forward contract, a
//! hand-written backward pass, and a finite-difference check. There is no
//! autodiff graph: the op set is small and fixed, and each backward is
//! unit-tested against central differences.
//!
//! All arithmetic is double precision. Ops are pure with respect to their
//! inputs; forward/backward over distinct samples may run in parallel with
//! gradients reduced by summation afterward.

pub mod conv;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod lstm;
pub mod optim;
pub mod pool;
pub mod resize;
pub mod tensor;

pub use conv::Conv2d;
pub use gradcheck::{check_gradient, relative_error, GradCheckReport, DEFAULT_STEP};
pub use layers::{dropout_backward, dropout_forward, relu, relu_backward, BatchNorm, Dense};
pub use loss::{softmax, softmax_cross_entropy, softmax_cross_entropy_backward};
pub use lstm::LstmCell;
pub use optim::sgd_step;
pub use pool::{global_average_pool, global_average_pool_backward, maxpool2, maxpool2_backward};
pub use resize::{bilinear_resize, bilinear_resize_backward};
pub use tensor::{Parameter, Tensor};
