//! Elementwise ops and the regression loss.

use crate::error::{shape_err, Result};
use crate::tensor::{Real, Tensor4};

pub fn relu_forward<T: Real>(input: &Tensor4<T>) -> Tensor4<T> {
    input.map(|v| if v > T::ZERO { v } else { T::ZERO })
}

/// Passes the gradient where `input > 0`; the derivative at exactly zero is 0.
pub fn relu_backward<T: Real>(input: &Tensor4<T>, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
    same_dims(input, grad_out, "relu_backward")?;
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > T::ZERO { g } else { T::ZERO })
        .collect();
    Tensor4::from_vec(input.dims(), data)
}

pub fn add<T: Real>(a: &Tensor4<T>, b: &Tensor4<T>) -> Result<Tensor4<T>> {
    same_dims(a, b, "add")?;
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
    Tensor4::from_vec(a.dims(), data)
}

pub fn add_assign<T: Real>(a: &mut Tensor4<T>, b: &Tensor4<T>) -> Result<()> {
    same_dims(a, b, "add_assign")?;
    for (x, &y) in a.data_mut().iter_mut().zip(b.data()) {
        *x += y;
    }
    Ok(())
}

/// Mean squared error over every element, accumulated in `f64`.
///
/// Returns the loss and `d loss / d prediction = 2 (prediction - target) / count`.
pub fn mse_loss<T: Real>(prediction: &Tensor4<T>, target: &Tensor4<T>) -> Result<(f64, Tensor4<T>)> {
    same_dims(prediction, target, "mse_loss")?;
    let count = prediction.len();
    if count == 0 {
        return Ok((0.0, Tensor4::zeros(prediction.dims())));
    }
    let scale = 2.0 / count as f64;
    let mut sum = 0.0f64;
    let grad = prediction
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let d = p.to_f64() - t.to_f64();
            sum += d * d;
            T::from_f64(scale * d)
        })
        .collect();
    Ok((sum / count as f64, Tensor4::from_vec(prediction.dims(), grad)?))
}

fn same_dims<T: Real>(a: &Tensor4<T>, b: &Tensor4<T>, what: &str) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(shape_err!("{what}: {} vs {}", a.dims(), b.dims()));
    }
    Ok(())
}
