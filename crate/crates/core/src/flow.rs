//! Per-client one-class classifier: a stack of affine coupling layers
//! trained on encoder latents, scored by negative log-likelihood.
//!
//! Direction convention: `forward` maps base-space `z` to latent-space
//! `r`; `inverse` maps `r` back to `z` and accumulates the analytic
//! log-determinant of the inverse Jacobian, `-sum(s)` per layer over the
//! transformed coordinates. The anomaly score of a sample is
//! `||z||^2 / 2 - logdet` (its negative log-likelihood up to a dropped
//! constant); higher means more anomalous.

use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{augment_batch, AugmentPolicy};
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::losses::{phase2_loss_var, Phase2Weights};
use crate::optim::{Optimizer, OptimizerConfig};
use crate::params::{Layout, ParamVector};
use crate::rng::RngFactory;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Flow architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    pub latent_dim: usize,
    /// Number of coupling layers; masks alternate between even and odd
    /// coordinate halves.
    pub layers: usize,
    pub subnet_hidden: Vec<usize>,
    /// Scale subnet outputs pass through `clamp * tanh(.)` for stability.
    pub scale_clamp: f64,
    /// Multiplier on the He-scaled hidden weight init. Values below 1
    /// keep the subnets near-linear away from the data.
    pub subnet_init_gain: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            latent_dim: 32,
            layers: 8,
            subnet_hidden: vec![64, 64],
            scale_clamp: 2.0,
            subnet_init_gain: 0.3,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.latent_dim < 2 {
            problems.push("flow latent_dim must be at least 2 (coupling masks need both halves)".into());
        }
        if self.layers == 0 {
            problems.push("flow needs at least one coupling layer".into());
        }
        if self.subnet_hidden.is_empty() || self.subnet_hidden.iter().any(|&h| h == 0) {
            problems.push("flow subnet_hidden must be non-empty positive widths".into());
        }
        if !(self.scale_clamp > 0.0) {
            problems.push("flow scale_clamp must be positive".into());
        }
        if !(self.subnet_init_gain >= 0.0) {
            problems.push("flow subnet_init_gain must be non-negative".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }
}

/// One affine coupling layer: coordinates at `kept_idx` pass through and
/// feed the subnets; coordinates at `trans_idx` are scaled and shifted.
#[derive(Debug, Clone)]
struct CouplingMask {
    kept_idx: Arc<[usize]>,
    trans_idx: Arc<[usize]>,
}

/// The flow: masks plus the subnet parameters of every layer.
#[derive(Debug, Clone)]
pub struct FlowModel {
    config: FlowConfig,
    masks: Vec<CouplingMask>,
    /// All subnet tensors, in layout order.
    params: Vec<Tensor>,
    /// Tensors per coupling layer (scale subnet + translate subnet).
    per_layer: usize,
}

impl FlowModel {
    /// Zero-initialized subnet heads make the initial flow the identity.
    pub fn init(config: FlowConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let masks = alternating_masks(config.latent_dim, config.layers);
        let mut params = Vec::new();
        let subnet_tensors = 2 * (config.subnet_hidden.len() + 1);
        for mask in &masks {
            for _ in 0..2 {
                // scale subnet then translate subnet
                push_subnet_params(
                    &mut params,
                    mask.kept_idx.len(),
                    &config.subnet_hidden,
                    mask.trans_idx.len(),
                    config.subnet_init_gain,
                    rng,
                );
            }
        }
        Ok(Self {
            config,
            masks,
            params,
            per_layer: 2 * subnet_tensors,
        })
    }

    pub fn config(&self) -> &FlowConfig {
        &self.config
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn set_params(&mut self, params: Vec<Tensor>) {
        debug_assert_eq!(params.len(), self.params.len());
        self.params = params;
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    /// Indices transformed by layer `i` (for coverage checks).
    pub fn transformed_coords(&self, layer: usize) -> &[usize] {
        &self.masks[layer].trans_idx
    }

    pub fn layout(&self) -> Layout {
        let mut entries = Vec::new();
        for (li, mask) in self.masks.iter().enumerate() {
            for net in ["scale", "translate"] {
                let mut fan_in = mask.kept_idx.len();
                for (j, &h) in self.config.subnet_hidden.iter().enumerate() {
                    entries.push((format!("coupling{li}.{net}.linear{j}.weight"), vec![fan_in, h]));
                    entries.push((format!("coupling{li}.{net}.linear{j}.bias"), vec![1, h]));
                    fan_in = h;
                }
                let out = mask.trans_idx.len();
                entries.push((format!("coupling{li}.{net}.head.weight"), vec![fan_in, out]));
                entries.push((format!("coupling{li}.{net}.head.bias"), vec![1, out]));
            }
        }
        Layout::new(entries)
    }

    pub fn to_param_vector(&self) -> ParamVector {
        ParamVector::flatten(self.layout(), &self.params)
            .expect("flow parameters always match their own layout")
    }

    pub fn from_param_vector(config: FlowConfig, pv: &ParamVector) -> Result<Self> {
        let mut model = {
            let mut rng = RngFactory::new(0).stream("flow/shape-only");
            Self::init(config, &mut rng)?
        };
        if *pv.layout() != model.layout() {
            return Err(Error::LayoutMismatch(
                "parameter vector layout does not match flow config".into(),
            ));
        }
        model.params = pv.unflatten();
        Ok(model)
    }

    /// Inverse pass `r -> (z, logdet)` over tape handles. `logdet` has
    /// shape `[n, 1]`: the log|det| of the inverse Jacobian per row.
    pub fn inverse_vars<'t>(
        &self,
        tape: &'t Tape,
        r: Var<'t>,
        params: &[Var<'t>],
    ) -> Result<(Var<'t>, Var<'t>)> {
        let n = r.shape()[0];
        let mut cur = r;
        let mut logdet = tape.constant(Tensor::zeros(&[n, 1]));
        for li in (0..self.masks.len()).rev() {
            let mask = &self.masks[li];
            let kept = cur.select_cols(mask.kept_idx.clone());
            let (s, t) = self.subnets(li, kept, params);
            let trans = cur.select_cols(mask.trans_idx.clone());
            // divide by the same exp(s) the forward pass multiplies with,
            // so a round trip cancels to machine precision
            let out = trans.sub(t).div(s.exp());
            logdet = logdet.sub(s.sum_axis(1));
            cur = kept.merge_cols(
                mask.kept_idx.clone(),
                out,
                mask.trans_idx.clone(),
                self.config.latent_dim,
            );
            if !cur.value().is_finite() {
                return Err(Error::NonFinite(format!(
                    "flow inverse produced non-finite values at layer {li}"
                )));
            }
        }
        Ok((cur, logdet))
    }

    /// Forward pass `z -> r` over tape handles.
    pub fn forward_vars<'t>(
        &self,
        tape: &'t Tape,
        z: Var<'t>,
        params: &[Var<'t>],
    ) -> Result<Var<'t>> {
        let _ = tape;
        let mut cur = z;
        for (li, mask) in self.masks.iter().enumerate() {
            let kept = cur.select_cols(mask.kept_idx.clone());
            let (s, t) = self.subnets(li, kept, params);
            let trans = cur.select_cols(mask.trans_idx.clone());
            let out = trans.mul(s.exp()).add(t);
            cur = kept.merge_cols(
                mask.kept_idx.clone(),
                out,
                mask.trans_idx.clone(),
                self.config.latent_dim,
            );
            if !cur.value().is_finite() {
                return Err(Error::NonFinite(format!(
                    "flow forward produced non-finite values at layer {li}"
                )));
            }
        }
        Ok(cur)
    }

    /// Clamped scale and translation for layer `li` given the kept half.
    fn subnets<'t>(&self, li: usize, kept: Var<'t>, params: &[Var<'t>]) -> (Var<'t>, Var<'t>) {
        let half = self.per_layer / 2;
        let base = li * self.per_layer;
        let scale_params = &params[base..base + half];
        let translate_params = &params[base + half..base + self.per_layer];
        let s_raw = subnet_forward(kept, scale_params);
        let s = s_raw.tanh().scale(self.config.scale_clamp);
        let t = subnet_forward(kept, translate_params);
        (s, t)
    }

    /// Inverse-map a batch of latents `[n, D]`, returning `z` and the
    /// per-row log-determinants `[n]`.
    pub fn inverse_batch(&self, r: &Tensor) -> Result<(Tensor, Tensor)> {
        self.check_width(r)?;
        let tape = Tape::new();
        let rv = tape.constant(r.clone());
        let params: Vec<Var> = self.params.iter().map(|p| tape.constant(p.clone())).collect();
        let (z, logdet) = self.inverse_vars(&tape, rv, &params)?;
        let n = r.shape()[0];
        Ok((z.value(), logdet.value().reshape(vec![n])?))
    }

    /// Inverse-map one latent vector, returning `(z, logdet)`.
    pub fn inverse(&self, r: &Tensor) -> Result<(Tensor, f64)> {
        let row = self.as_row(r)?;
        let (z, logdet) = self.inverse_batch(&row)?;
        Ok((z.reshape(vec![self.config.latent_dim])?, logdet.data()[0]))
    }

    /// Forward-map a batch of base vectors `[n, D]`.
    pub fn forward_batch(&self, z: &Tensor) -> Result<Tensor> {
        self.check_width(z)?;
        let tape = Tape::new();
        let zv = tape.constant(z.clone());
        let params: Vec<Var> = self.params.iter().map(|p| tape.constant(p.clone())).collect();
        Ok(self.forward_vars(&tape, zv, &params)?.value())
    }

    /// Forward-map one base vector.
    pub fn forward(&self, z: &Tensor) -> Result<Tensor> {
        let row = self.as_row(z)?;
        Ok(self.forward_batch(&row)?.reshape(vec![self.config.latent_dim])?)
    }

    /// Anomaly scores of a latent batch: `||z||^2 / 2 - logdet` per row.
    pub fn score_latents(&self, latents: &Tensor) -> Result<Vec<f64>> {
        let (z, logdet) = self.inverse_batch(latents)?;
        let (n, d) = z.dims2()?;
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let sq: f64 = z.data()[i * d..(i + 1) * d].iter().map(|v| v * v).sum();
            let score = 0.5 * sq - logdet.data()[i];
            if !score.is_finite() {
                return Err(Error::NonFinite(format!("anomaly score of row {i} is {score}")));
            }
            out.push(score);
        }
        Ok(out)
    }

    fn as_row(&self, v: &Tensor) -> Result<Tensor> {
        if v.rank() != 1 || v.numel() != self.config.latent_dim {
            return Err(Error::DimensionMismatch(format!(
                "expected a rank-1 vector of dim {}, got shape {:?}",
                self.config.latent_dim,
                v.shape()
            )));
        }
        v.clone().reshape(vec![1, self.config.latent_dim])
    }

    fn check_width(&self, m: &Tensor) -> Result<()> {
        let (_, d) = m.dims2()?;
        if d != self.config.latent_dim {
            return Err(Error::DimensionMismatch(format!(
                "flow expects width {}, got {d}",
                self.config.latent_dim
            )));
        }
        Ok(())
    }
}

fn alternating_masks(dim: usize, layers: usize) -> Vec<CouplingMask> {
    let even: Arc<[usize]> = (0..dim).step_by(2).collect::<Vec<_>>().into();
    let odd: Arc<[usize]> = (1..dim).step_by(2).collect::<Vec<_>>().into();
    (0..layers)
        .map(|i| {
            if i % 2 == 0 {
                CouplingMask {
                    kept_idx: even.clone(),
                    trans_idx: odd.clone(),
                }
            } else {
                CouplingMask {
                    kept_idx: odd.clone(),
                    trans_idx: even.clone(),
                }
            }
        })
        .collect()
}

fn push_subnet_params(
    params: &mut Vec<Tensor>,
    input: usize,
    hidden: &[usize],
    output: usize,
    gain: f64,
    rng: &mut ChaCha8Rng,
) {
    use crate::encoder::standard_normal;
    let mut fan_in = input;
    for &h in hidden {
        let std = gain * (2.0 / fan_in as f64).sqrt();
        let w: Vec<f64> = (0..fan_in * h).map(|_| standard_normal(rng) * std).collect();
        params.push(Tensor::from_shape_vec(vec![fan_in, h], w).expect("subnet weight"));
        params.push(Tensor::zeros(&[1, h]));
        fan_in = h;
    }
    // zero head: the layer starts as identity
    params.push(Tensor::zeros(&[fan_in, output]));
    params.push(Tensor::zeros(&[1, output]));
}

fn subnet_forward<'t>(x: Var<'t>, params: &[Var<'t>]) -> Var<'t> {
    let layers = params.len() / 2;
    let mut h = x;
    for i in 0..layers - 1 {
        h = h.matmul(params[2 * i]).add(params[2 * i + 1]).relu();
    }
    h.matmul(params[2 * (layers - 1)]).add(params[2 * layers - 1])
}

// ---------------------------------------------------------------------------
// Training and scoring
// ---------------------------------------------------------------------------

/// Phase-2 training settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub lambda: f64,
}

impl Default for FlowTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            batch_size: 32,
            optimizer: OptimizerConfig::sgd(5e-3),
            lambda: Phase2Weights::default().lambda,
        }
    }
}

/// Train a per-client flow on `samples` against a frozen encoder.
///
/// `encoder == None` treats the samples as latents directly (an identity
/// encoder). Two augmented views are drawn per sample each epoch; the
/// likelihood term uses the first view and the cosine regularizer ties
/// the two. Returns the trained model and the per-epoch mean loss.
pub fn train_ocnf(
    flow_config: &FlowConfig,
    encoder: Option<&Encoder>,
    samples: &[Tensor],
    train: &FlowTrainConfig,
    augment: &AugmentPolicy,
    rng: &RngFactory,
    stream_label: &str,
) -> Result<(FlowModel, Vec<f64>)> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("flow training needs a non-empty shard".into()));
    }
    if let Some(enc) = encoder {
        if enc.latent_dim() != flow_config.latent_dim {
            return Err(Error::DimensionMismatch(format!(
                "flow width {} != encoder latent width {}",
                flow_config.latent_dim,
                enc.latent_dim()
            )));
        }
    }
    let weights = Phase2Weights { lambda: train.lambda };
    weights.validate()?;
    let mut init_rng = rng.stream(&format!("{stream_label}/init"));
    let mut model = FlowModel::init(flow_config.clone(), &mut init_rng)?;
    let mut opt = Optimizer::new(train.optimizer, &model.params)?;
    let n = samples.len();
    let batch = train.batch_size.max(1);
    let mut epoch_losses = Vec::with_capacity(train.epochs);
    for epoch in 0..train.epochs {
        let order = shuffled_indices(n, &mut rng.stream(&format!("{stream_label}/shuffle/{epoch}")));
        let mut aug_rng = rng.stream(&format!("{stream_label}/augment/{epoch}"));
        let mut loss_sum = 0.0;
        for chunk in order.chunks(batch) {
            let refs: Vec<&Tensor> = chunk.iter().map(|&i| &samples[i]).collect();
            let (x, x_hat) = augment_batch(&refs, augment, &mut aug_rng);
            let (r, r_hat) = match encoder {
                Some(enc) => (enc.encode_batch(&x)?, enc.encode_batch(&x_hat)?),
                None => (x, x_hat),
            };
            let tape = Tape::new();
            let params: Vec<Var> = model.params.iter().map(|p| tape.leaf(p.clone())).collect();
            let (z, logdet) = model.inverse_vars(&tape, tape.constant(r), &params)?;
            let (z_hat, _) = model.inverse_vars(&tape, tape.constant(r_hat), &params)?;
            let loss = phase2_loss_var(z, z_hat, logdet, weights);
            let loss_value = loss.value().item()?;
            if !loss_value.is_finite() {
                return Err(Error::NonFinite(format!(
                    "flow training loss became {loss_value} at epoch {epoch}"
                )));
            }
            let grads_all = tape.backward(loss)?;
            let grads: Vec<Tensor> = params.iter().map(|p| grads_all.get(*p)).collect();
            let mut current = model.params.clone();
            opt.step(&mut current, &grads)?;
            model.params = current;
            loss_sum += loss_value * chunk.len() as f64;
        }
        epoch_losses.push(loss_sum / n as f64);
    }
    Ok((model, epoch_losses))
}

/// Score one raw sample: encode it once (no augmentation) and return its
/// negative log-likelihood up to the dropped constant.
pub fn score_sample(model: &FlowModel, encoder: Option<&Encoder>, sample: &Tensor) -> Result<f64> {
    let latent = match encoder {
        Some(enc) => enc.encode(sample)?,
        None => sample.clone(),
    };
    let row = latent.reshape(vec![1, model.latent_dim()])?;
    Ok(model.score_latents(&row)?[0])
}

fn shuffled_indices(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx
}
