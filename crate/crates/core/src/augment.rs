//! Two-view augmentation for vector-valued samples.
//!
//! Each training example is expanded into two independent stochastic
//! views. For tabular/flattened inputs the policies are additive gaussian
//! noise and random feature dropout (or their composition); `identity`
//! disables augmentation.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::encoder::standard_normal;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Two stochastic views of one sample.
#[derive(Debug, Clone)]
pub struct ViewPair {
    pub x: Tensor,
    pub x_hat: Tensor,
}

/// How a view is produced from a sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AugmentPolicy {
    Identity,
    GaussianNoise { sigma: f64 },
    FeatureDropout { rate: f64 },
    /// Gaussian noise followed by feature dropout; the default two-view
    /// policy for vector data.
    NoiseDropout { sigma: f64, rate: f64 },
}

impl AugmentPolicy {
    /// Parse a policy name from configuration; `sigma`/`rate` supply the
    /// parameters for the policies that use them.
    pub fn parse(name: &str, sigma: f64, rate: f64) -> Result<Self> {
        match name {
            "identity" => Ok(Self::Identity),
            "gaussian-noise" => Ok(Self::GaussianNoise { sigma }),
            "feature-dropout" => Ok(Self::FeatureDropout { rate }),
            "noise-dropout" => Ok(Self::NoiseDropout { sigma, rate }),
            other => Err(Error::Contract(format!("unknown augment policy '{other}'"))),
        }
    }

    fn apply(&self, sample: &Tensor, rng: &mut ChaCha8Rng) -> Tensor {
        match *self {
            AugmentPolicy::Identity => sample.clone(),
            AugmentPolicy::GaussianNoise { sigma } => {
                sample.map_with_rng(rng, |v, r| v + sigma * standard_normal(r))
            }
            AugmentPolicy::FeatureDropout { rate } => sample.map_with_rng(rng, |v, r| {
                if r.gen::<f64>() < rate {
                    0.0
                } else {
                    v
                }
            }),
            AugmentPolicy::NoiseDropout { sigma, rate } => sample.map_with_rng(rng, |v, r| {
                let noisy = v + sigma * standard_normal(r);
                if r.gen::<f64>() < rate {
                    0.0
                } else {
                    noisy
                }
            }),
        }
    }
}

trait MapWithRng {
    fn map_with_rng(&self, rng: &mut ChaCha8Rng, f: impl FnMut(f64, &mut ChaCha8Rng) -> f64)
        -> Tensor;
}

impl MapWithRng for Tensor {
    fn map_with_rng(
        &self,
        rng: &mut ChaCha8Rng,
        mut f: impl FnMut(f64, &mut ChaCha8Rng) -> f64,
    ) -> Tensor {
        let data: Vec<f64> = self.data().iter().map(|&v| f(v, rng)).collect();
        Tensor::from_shape_vec(self.shape().to_vec(), data).expect("shape unchanged")
    }
}

/// Produce two independent views of `sample` under `policy`, drawing from
/// the caller's named stream.
pub fn augment_pair(sample: &Tensor, policy: &AugmentPolicy, rng: &mut ChaCha8Rng) -> ViewPair {
    ViewPair {
        x: policy.apply(sample, rng),
        x_hat: policy.apply(sample, rng),
    }
}

/// Augment a batch of rank-1 samples into two `[n, dim]` view matrices.
pub fn augment_batch(
    samples: &[&Tensor],
    policy: &AugmentPolicy,
    rng: &mut ChaCha8Rng,
) -> (Tensor, Tensor) {
    let n = samples.len();
    let dim = samples[0].numel();
    let mut a = Vec::with_capacity(n * dim);
    let mut b = Vec::with_capacity(n * dim);
    for s in samples {
        let pair = augment_pair(s, policy, rng);
        a.extend_from_slice(pair.x.data());
        b.extend_from_slice(pair.x_hat.data());
    }
    (
        Tensor::from_shape_vec(vec![n, dim], a).expect("batch shape"),
        Tensor::from_shape_vec(vec![n, dim], b).expect("batch shape"),
    )
}
