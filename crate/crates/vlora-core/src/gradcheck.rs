//! Finite-difference verification of the backward pass.
//!
//! The checker treats the model as a black-box scalar function of its
//! parameters: it runs one analytic backward pass, then re-evaluates the
//! function with each sampled coordinate nudged by ±h and compares the
//! central difference `(f(θ+h) − f(θ−h)) / 2h` against the stored gradient.
//! Run it in 64-bit; in 32-bit the subtraction loses too many digits for
//! the tolerances used here to mean anything.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Outcome of a finite-difference comparison.
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    /// Worst `|analytic − numeric| / max(|analytic|, |numeric|, 1e-8)` seen.
    pub max_rel_err: f64,
    /// Number of coordinates compared.
    pub coords_checked: usize,
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Checks every coordinate of every parameter.
pub fn finite_diff_check<F>(params: &[Tensor<f64>], h_step: f64, f: F) -> Result<GradCheck>
where
    F: FnMut() -> Result<Tensor<f64>>,
{
    let mut rng = Rng::new(0);
    finite_diff_check_sampled(params, h_step, usize::MAX, &mut rng, f)
}

/// Checks at most `coords_per_param` randomly chosen coordinates of each
/// parameter. `f` must rebuild the loss graph from the live parameter
/// tensors on every call; their buffers are perturbed in place and restored.
pub fn finite_diff_check_sampled<F>(
    params: &[Tensor<f64>],
    h_step: f64,
    coords_per_param: usize,
    rng: &mut Rng,
    f: F,
) -> Result<GradCheck>
where
    F: FnMut() -> Result<Tensor<f64>>,
{
    finite_diff_check_where(params, h_step, coords_per_param, 0.0, rng, f)
}

/// Like [`finite_diff_check_sampled`], but draws only from coordinates
/// whose analytic gradient magnitude is at least `min_abs_grad`.
///
/// A central difference carries rounding noise of about `ε·|f|/h`;
/// derivatives below that are invisible to it, and comparing against them
/// measures the noise, not the backward pass. The floor keeps every
/// sampled comparison a real discriminator at tight tolerances. A
/// parameter with no eligible coordinate is an error — listing it was
/// presumably a mistake.
pub fn finite_diff_check_where<F>(
    params: &[Tensor<f64>],
    h_step: f64,
    coords_per_param: usize,
    min_abs_grad: f64,
    rng: &mut Rng,
    mut f: F,
) -> Result<GradCheck>
where
    F: FnMut() -> Result<Tensor<f64>>,
{
    if params.is_empty() || h_step <= 0.0 {
        return Err(Error::InvalidConfig(String::from(
            "finite_diff_check needs at least one parameter and a positive step",
        )));
    }
    if let Some(p) = params.iter().find(|p| !p.requires_grad()) {
        return Err(Error::InvalidConfig(alloc::format!(
            "finite_diff_check parameter {:?} does not require grad",
            p
        )));
    }

    for p in params {
        p.zero_grad();
    }
    f()?.backward()?;
    let analytic: Vec<Vec<f64>> = params.iter().map(|p| p.grad_or_zeros()).collect();

    let mut result = GradCheck {
        max_rel_err: 0.0,
        coords_checked: 0,
    };
    for (p, grads) in params.iter().zip(&analytic) {
        let mut eligible: Vec<usize> = (0..p.numel())
            .filter(|&i| grads[i].abs() >= min_abs_grad)
            .collect();
        if eligible.is_empty() {
            return Err(Error::InvalidConfig(alloc::format!(
                "no gradient coordinate of a {} parameter reaches {min_abs_grad:e}",
                p.shape()
            )));
        }
        if eligible.len() > coords_per_param {
            rng.shuffle(&mut eligible);
            eligible.truncate(coords_per_param);
        }
        for idx in eligible {
            let original = p.data()[idx];
            p.apply_update(|buf| buf[idx] = original + h_step);
            let plus = f()?.scalar_value()?;
            p.apply_update(|buf| buf[idx] = original - h_step);
            let minus = f()?.scalar_value()?;
            p.apply_update(|buf| buf[idx] = original);
            let numeric = (plus - minus) / (2.0 * h_step);
            let err = relative_error(grads[idx], numeric);
            if err > result.max_rel_err {
                result.max_rel_err = err;
            }
            result.coords_checked += 1;
        }
    }
    Ok(result)
}
