//! Central finite-difference gradient verification.
//!
//! This is the independent oracle for the backward pass: it never inspects
//! the graph, only re-evaluates the loss function under coordinate-wise
//! perturbations of the input.

use super::{Tensor, TensorError};

/// Compare the analytic gradient of a scalar-valued function against central
/// finite differences, coordinate by coordinate.
///
/// Returns the maximum of `|analytic - central| / max(1, |analytic|)` across
/// coordinates. `x` must be a leaf with `requires_grad`; its gradient buffer
/// is cleared before and after the analytic pass, and its values are restored
/// after perturbation. Non-finite values abort with the offending coordinate.
pub fn finite_diff_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64, TensorError>
where
    F: Fn(&Tensor) -> Result<Tensor, TensorError>,
{
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(TensorError::InvalidEps { eps });
    }
    if !x.requires_grad() {
        return Err(TensorError::NotALeaf {
            op: "finite_diff_check",
        });
    }

    x.clear_grad();
    let loss = f(x)?;
    if loss.numel() != 1 {
        return Err(TensorError::NonScalarLoss {
            shape: loss.shape().to_vec(),
        });
    }
    loss.backward()?;
    let analytic = x.grad().unwrap_or_else(|| vec![0.0; x.numel()]);
    x.clear_grad();

    let mut max_err = 0.0f64;
    for i in 0..x.numel() {
        let orig = x.data()[i];
        set_coord(x, i, orig + eps)?;
        let fp = f(x)?.item();
        set_coord(x, i, orig - eps)?;
        let fm = f(x)?.item();
        set_coord(x, i, orig)?;

        let central = (fp - fm) / (2.0 * eps);
        if !central.is_finite() || !analytic[i].is_finite() {
            return Err(TensorError::NonFinite { coordinate: i });
        }
        let err = (analytic[i] - central).abs() / analytic[i].abs().max(1.0);
        if err > max_err {
            max_err = err;
        }
    }
    Ok(max_err)
}

fn set_coord(x: &Tensor, i: usize, value: f64) -> Result<(), TensorError> {
    x.update_data(|d| d[i] = value)
}
