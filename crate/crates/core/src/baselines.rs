//! Density-estimation baselines for the classifier swap: a single
//! diagonal Gaussian fit (GDE) and a Gaussian kernel density estimate
//! (KDE). Both score with negative log density, higher = more anomalous.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const LN_2PI: f64 = 1.837877066409345; // ln(2 * pi)

/// Variance floor added to every diagonal entry.
const COV_EPS: f64 = 1e-6;

/// A Gaussian fit with sample mean and regularized diagonal covariance.
#[derive(Debug, Clone)]
pub struct GdeModel {
    mean: Vec<f64>,
    var: Vec<f64>,
}

impl GdeModel {
    /// Fit on at least two training latents.
    pub fn fit(train: &[Tensor]) -> Result<Self> {
        if train.len() < 2 {
            return Err(Error::EmptyInput(format!(
                "GDE needs at least 2 training latents, got {}",
                train.len()
            )));
        }
        let d = train[0].numel();
        let n = train.len() as f64;
        let mut mean = vec![0.0; d];
        for t in train {
            for (m, x) in mean.iter_mut().zip(t.data()) {
                *m += x / n;
            }
        }
        let mut var = vec![0.0; d];
        for t in train {
            for ((v, x), m) in var.iter_mut().zip(t.data()).zip(&mean) {
                *v += (x - m) * (x - m) / n;
            }
        }
        let mut floored = 0usize;
        for v in var.iter_mut() {
            if *v < COV_EPS {
                floored += 1;
            }
            *v += COV_EPS;
        }
        if floored > 0 {
            log::warn!("GDE: {floored} near-singular variance entries regularized at {COV_EPS}");
        }
        Ok(Self { mean, var })
    }

    /// Negative log density of `x` under the fitted Gaussian.
    pub fn score(&self, x: &Tensor) -> Result<f64> {
        if x.numel() != self.mean.len() {
            return Err(Error::DimensionMismatch(format!(
                "GDE fitted on dim {}, scoring dim {}",
                self.mean.len(),
                x.numel()
            )));
        }
        let mut nll = 0.0;
        for ((xi, m), v) in x.data().iter().zip(&self.mean).zip(&self.var) {
            nll += 0.5 * ((xi - m) * (xi - m) / v + v.ln() + LN_2PI);
        }
        Ok(nll)
    }
}

/// Fit-and-score in one call.
pub fn gde_score(train: &[Tensor], x: &Tensor) -> Result<f64> {
    GdeModel::fit(train)?.score(x)
}

/// Negative log of the mean isotropic Gaussian kernel value at `x`:
/// `-ln( mean_i (2 pi h^2)^(-D/2) exp(-||x - x_i||^2 / (2 h^2)) )`.
pub fn kde_score(train: &[Tensor], x: &Tensor, bandwidth: f64) -> Result<f64> {
    if train.len() < 2 {
        return Err(Error::EmptyInput(format!(
            "KDE needs at least 2 training latents, got {}",
            train.len()
        )));
    }
    if !(bandwidth > 0.0) {
        return Err(Error::Contract(format!(
            "KDE bandwidth must be positive, got {bandwidth}"
        )));
    }
    kde_score_unchecked(train, x, bandwidth)
}

fn kde_score_unchecked(train: &[Tensor], x: &Tensor, bandwidth: f64) -> Result<f64> {
    let d = x.numel() as f64;
    let h2 = bandwidth * bandwidth;
    // log-mean-exp over kernels, stabilized by the largest exponent
    let mut exponents = Vec::with_capacity(train.len());
    for t in train {
        if t.numel() != x.numel() {
            return Err(Error::DimensionMismatch(format!(
                "KDE latent dim {} vs query dim {}",
                t.numel(),
                x.numel()
            )));
        }
        let sq: f64 = t
            .data()
            .iter()
            .zip(x.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        exponents.push(-sq / (2.0 * h2));
    }
    let m = exponents.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mean_kernel: f64 =
        exponents.iter().map(|e| (e - m).exp()).sum::<f64>() / train.len() as f64;
    let log_norm = -0.5 * d * (LN_2PI + 2.0 * bandwidth.ln());
    Ok(-(m + mean_kernel.ln() + log_norm))
}

/// Scott's rule bandwidth: mean per-dimension standard deviation scaled
/// by `n^(-1 / (D + 4))`.
pub fn scott_bandwidth(train: &[Tensor]) -> Result<f64> {
    if train.len() < 2 {
        return Err(Error::EmptyInput("bandwidth needs at least 2 latents".into()));
    }
    let model = GdeModel::fit(train)?;
    let d = model.mean.len() as f64;
    let mean_std =
        model.var.iter().map(|v| v.sqrt()).sum::<f64>() / model.mean.len() as f64;
    let n = train.len() as f64;
    Ok((mean_std * n.powf(-1.0 / (d + 4.0))).max(1e-6))
}
