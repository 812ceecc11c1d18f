use crate::error::{Error, Result};
use crate::tensor::{Matrix, ParamTensor};

pub const ADAGRAD_EPS: f64 = 1e-8;

/// `acc += g^2; value -= lr * g / (sqrt(acc) + eps)`, elementwise.
pub fn adagrad_update(param: &mut ParamTensor, grad: &Matrix, lr: f64) -> Result<()> {
    if grad.shape() != param.shape() {
        return Err(Error::shape(format!(
            "gradient {:?} for parameter {} of shape {:?}",
            grad.shape(),
            param.name(),
            param.shape()
        )));
    }
    let acc = param.accumulator.as_mut_slice();
    let value = param.value.as_mut_slice();
    for ((v, a), &g) in value.iter_mut().zip(acc.iter_mut()).zip(grad.as_slice()) {
        if g == 0.0 {
            continue;
        }
        *a += g * g;
        *v -= lr * g / (a.sqrt() + ADAGRAD_EPS);
    }
    Ok(())
}
