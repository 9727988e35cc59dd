//! Plain stochastic gradient descent.

use crate::error::{Error, Result};
use crate::nn::tensor::Parameter;

/// value <- value - lr·grad for every parameter, then grads are zeroed.
pub fn sgd_step<'a, I>(params: I, lr: f64) -> Result<()>
where
    I: IntoIterator<Item = &'a mut Parameter>,
{
    if lr <= 0.0 {
        return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
    }
    for p in params {
        for (v, g) in p.value.data_mut().iter_mut().zip(p.grad.data()) {
            *v -= lr * g;
        }
        p.zero_grad();
    }
    Ok(())
}
