//! Central finite-difference verification of reverse-mode gradients.
//!
//! The checker re-evaluates the loss from plain tensors only, so it is
//! independent of the tape's backward pass. Used by the test suite and by
//! the `gradcheck` CLI subcommand.

use crate::error::Result;
use crate::exec::{map_indices, ExecMode};
use crate::tensor::Tensor;

/// Step size for central differences.
pub const FD_STEP: f64 = 1e-4;

/// Relative-error bound every gradient must meet.
pub const FD_TOLERANCE: f64 = 1e-3;

/// Floor in the relative-error denominator; differences below it are
/// finite-difference roundoff, not gradient error.
pub const FD_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GradCheck {
    /// Largest relative error over all checked parameter elements.
    pub max_rel_err: f64,
    /// Number of scalar parameters checked.
    pub checked: usize,
}

impl GradCheck {
    pub fn passes(&self) -> bool {
        self.max_rel_err < FD_TOLERANCE
    }
}

/// Compare analytic `grads` against central finite differences of `f` at
/// `params`, element by element.
pub fn check_gradients<F>(
    mode: ExecMode,
    params: &[Tensor],
    grads: &[Tensor],
    f: F,
) -> Result<GradCheck>
where
    F: Fn(&[Tensor]) -> Result<f64> + Sync,
{
    assert_eq!(params.len(), grads.len(), "one gradient per parameter");
    let mut max_rel = 0.0f64;
    let mut checked = 0usize;
    for (pi, param) in params.iter().enumerate() {
        let n = param.numel();
        let errs = map_indices(mode, n, |e| -> Result<f64> {
            let fp = f(&perturbed(params, pi, e, FD_STEP))?;
            let fm = f(&perturbed(params, pi, e, -FD_STEP))?;
            let fd = (fp - fm) / (2.0 * FD_STEP);
            let ad = grads[pi].data()[e];
            Ok((ad - fd).abs() / ad.abs().max(fd.abs()).max(FD_FLOOR))
        });
        for err in errs {
            max_rel = max_rel.max(err?);
            checked += 1;
        }
    }
    Ok(GradCheck {
        max_rel_err: max_rel,
        checked,
    })
}

fn perturbed(params: &[Tensor], pi: usize, elem: usize, delta: f64) -> Vec<Tensor> {
    let mut out = params.to_vec();
    let mut data = params[pi].data().to_vec();
    data[elem] += delta;
    out[pi] = Tensor::from_shape_vec(params[pi].shape().to_vec(), data)
        .expect("perturbation preserves shape");
    out
}
