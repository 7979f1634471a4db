//! The client encoder: an MLP with group normalization, plus the codec
//! that flattens its parameters for federation.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{Layout, ParamVector};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

const GROUP_NORM_EPS: f64 = 1e-5;

/// Hidden-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

/// Architecture of an [`Encoder`]: input width, hidden widths, latent
/// width and the group count of each normalization layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub latent_dim: usize,
    pub groups: usize,
    pub activation: Activation,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            input_dim: 16,
            hidden_dims: vec![64, 64],
            latent_dim: 32,
            groups: 8,
            activation: Activation::Relu,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.input_dim == 0 {
            problems.push("encoder input_dim must be positive".to_string());
        }
        if self.latent_dim == 0 {
            problems.push("encoder latent_dim must be positive".to_string());
        }
        if self.hidden_dims.is_empty() {
            problems.push("encoder needs at least one hidden layer".to_string());
        }
        if self.groups == 0 {
            problems.push("encoder groups must be positive".to_string());
        }
        for (i, &h) in self.hidden_dims.iter().enumerate() {
            if h == 0 {
                problems.push(format!("hidden layer {i} has zero width"));
            } else if self.groups != 0 && h % self.groups != 0 {
                problems.push(format!(
                    "groups ({}) must divide hidden layer {i} width ({h})",
                    self.groups
                ));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    /// Parameter layout implied by this architecture. Identical configs
    /// always produce identical layouts.
    pub fn layout(&self) -> Layout {
        let mut entries = Vec::new();
        let mut fan_in = self.input_dim;
        for (i, &h) in self.hidden_dims.iter().enumerate() {
            entries.push((format!("linear{i}.weight"), vec![fan_in, h]));
            entries.push((format!("linear{i}.bias"), vec![1, h]));
            entries.push((format!("norm{i}.gamma"), vec![1, h]));
            entries.push((format!("norm{i}.beta"), vec![1, h]));
            fan_in = h;
        }
        entries.push(("head.weight".to_string(), vec![fan_in, self.latent_dim]));
        entries.push(("head.bias".to_string(), vec![1, self.latent_dim]));
        Layout::new(entries)
    }

    /// Number of parameter tensors.
    pub fn tensor_count(&self) -> usize {
        self.hidden_dims.len() * 4 + 2
    }

    /// Forward pass over tape handles: linear -> group norm -> relu per
    /// hidden layer, then an unnormalized linear head.
    pub fn forward<'t>(&self, tape: &'t Tape, x: Var<'t>, params: &[Var<'t>]) -> Var<'t> {
        assert_eq!(params.len(), self.tensor_count(), "parameter count");
        let mut h = x;
        let mut p = 0;
        for _ in 0..self.hidden_dims.len() {
            let w = params[p];
            let b = params[p + 1];
            let gamma = params[p + 2];
            let beta = params[p + 3];
            p += 4;
            h = h.matmul(w).add(b);
            h = group_norm(tape, h, self.groups, gamma, beta);
            h = match self.activation {
                Activation::Relu => h.relu(),
                Activation::Tanh => h.tanh(),
            };
        }
        let w = params[p];
        let b = params[p + 1];
        h.matmul(w).add(b)
    }
}

/// Per-sample group normalization of a `[n, c]` activation: each group of
/// `c / groups` channels is standardized to mean 0 / variance 1 (biased),
/// then scaled and shifted by the learnable affine pair.
pub fn group_norm<'t>(
    _tape: &'t Tape,
    x: Var<'t>,
    groups: usize,
    gamma: Var<'t>,
    beta: Var<'t>,
) -> Var<'t> {
    let shape = x.shape();
    let (n, c) = (shape[0], shape[1]);
    debug_assert_eq!(c % groups, 0, "groups must divide channel count");
    let per = c / groups;
    let g = x.reshape(vec![n * groups, per]);
    let mean = g.sum_axis(1).scale(1.0 / per as f64);
    let centered = g.sub(mean);
    let var = centered.mul(centered).sum_axis(1).scale(1.0 / per as f64);
    let std = var.add_scalar(GROUP_NORM_EPS).sqrt();
    let normalized = centered.div(std).reshape(vec![n, c]);
    normalized.mul(gamma).add(beta)
}

/// The encoder: an architecture plus its current parameters.
#[derive(Debug, Clone)]
pub struct Encoder {
    config: EncoderConfig,
    params: Vec<Tensor>,
}

impl Encoder {
    /// Seeded initialization: He-scaled hidden weights, zero biases,
    /// identity norm affine, Xavier-scaled head.
    pub fn init(config: EncoderConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let mut params = Vec::with_capacity(config.tensor_count());
        let mut fan_in = config.input_dim;
        for &h in &config.hidden_dims {
            params.push(random_weight(rng, fan_in, h, (2.0 / fan_in as f64).sqrt()));
            params.push(Tensor::zeros(&[1, h]));
            params.push(Tensor::ones(&[1, h]));
            params.push(Tensor::zeros(&[1, h]));
            fan_in = h;
        }
        params.push(random_weight(
            rng,
            fan_in,
            config.latent_dim,
            (1.0 / fan_in as f64).sqrt(),
        ));
        params.push(Tensor::zeros(&[1, config.latent_dim]));
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn set_params(&mut self, params: Vec<Tensor>) {
        debug_assert_eq!(params.len(), self.config.tensor_count());
        self.params = params;
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    /// Flatten parameters into a [`ParamVector`] in layout order.
    pub fn to_param_vector(&self) -> ParamVector {
        ParamVector::flatten(self.config.layout(), &self.params)
            .expect("encoder parameters always match their own layout")
    }

    /// Rebuild an encoder from a flat vector; the vector's layout must
    /// equal the one implied by `config`.
    pub fn from_param_vector(config: EncoderConfig, pv: &ParamVector) -> Result<Self> {
        config.validate()?;
        if *pv.layout() != config.layout() {
            return Err(Error::LayoutMismatch(
                "parameter vector layout does not match encoder config".into(),
            ));
        }
        Ok(Self {
            config,
            params: pv.unflatten(),
        })
    }

    /// Encode a batch `[n, input_dim]` to latents `[n, latent_dim]`.
    pub fn encode_batch(&self, x: &Tensor) -> Result<Tensor> {
        let (_, cols) = x.dims2()?;
        if cols != self.config.input_dim {
            return Err(Error::DimensionMismatch(format!(
                "encoder expects input width {}, got {cols}",
                self.config.input_dim
            )));
        }
        let tape = Tape::new();
        let xv = tape.constant(x.clone());
        let params: Vec<Var> = self.params.iter().map(|p| tape.constant(p.clone())).collect();
        Ok(self.config.forward(&tape, xv, &params).value())
    }

    /// Encode one sample to its latent vector.
    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        if x.rank() != 1 {
            return Err(Error::DimensionMismatch(format!(
                "encode expects a rank-1 sample, got shape {:?}",
                x.shape()
            )));
        }
        let batch = x.clone().reshape(vec![1, x.numel()])?;
        let out = self.encode_batch(&batch)?;
        out.reshape(vec![self.config.latent_dim])
    }
}

fn random_weight(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Tensor {
    let data: Vec<f64> = (0..rows * cols)
        .map(|_| standard_normal(rng) * std)
        .collect();
    Tensor::from_shape_vec(vec![rows, cols], data).expect("shape matches data")
}

/// One standard-normal draw (Box-Muller; two uniform draws per call keeps
/// the stream layout fixed).
pub fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngFactory;

    fn small_config() -> EncoderConfig {
        EncoderConfig {
            input_dim: 4,
            hidden_dims: vec![8, 6],
            latent_dim: 5,
            groups: 2,
            activation: Activation::Relu,
        }
    }

    fn sample_encoder(seed: u64) -> Encoder {
        let mut rng = RngFactory::new(seed).stream("enc");
        Encoder::init(small_config(), &mut rng).unwrap()
    }

    #[test]
    fn zero_head_outputs_bias() {
        let mut enc = sample_encoder(3);
        let n = enc.params.len();
        let head_w_shape = enc.params[n - 2].shape().to_vec();
        enc.params[n - 2] = Tensor::zeros(&head_w_shape);
        enc.params[n - 1] = Tensor::matrix(1, 5, vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        for probe in [vec![0.0; 4], vec![1.0, -2.0, 0.5, 9.0]] {
            let out = enc.encode(&Tensor::vector(probe)).unwrap();
            assert_eq!(out.data(), &[1.0, 2.0, 3.0, 4.0, 5.0]);
        }
    }

    #[test]
    fn encode_is_deterministic() {
        let enc = sample_encoder(5);
        let x = Tensor::vector(vec![0.3, -0.7, 1.1, 0.0]);
        assert_eq!(enc.encode(&x).unwrap(), enc.encode(&x).unwrap());
    }

    #[test]
    fn encode_gradient_matches_finite_difference() {
        use crate::exec::ExecMode;
        use crate::gradcheck::check_gradients;
        let enc = sample_encoder(7);
        let x = Tensor::matrix(2, 4, vec![0.1, 0.4, -0.2, 0.9, -1.0, 0.3, 0.0, 0.5]).unwrap();
        let cfg = enc.config().clone();
        let loss = |ps: &[Tensor]| -> crate::error::Result<f64> {
            let tape = Tape::new();
            let xv = tape.constant(x.clone());
            let vars: Vec<Var> = ps.iter().map(|p| tape.leaf(p.clone())).collect();
            let out = cfg.forward(&tape, xv, &vars);
            out.mul(out).sum().value().item()
        };
        let tape = Tape::new();
        let xv = tape.constant(x.clone());
        let vars: Vec<Var> = enc.params().iter().map(|p| tape.leaf(p.clone())).collect();
        let out = enc.config().forward(&tape, xv, &vars);
        let scalar = out.mul(out).sum();
        let grads_all = tape.backward(scalar).unwrap();
        let grads: Vec<Tensor> = vars.iter().map(|v| grads_all.get(*v)).collect();
        let check = check_gradients(ExecMode::Sequential, enc.params(), &grads, loss).unwrap();
        assert!(check.passes(), "max rel err {}", check.max_rel_err);
    }

    #[test]
    fn group_norm_standardizes_each_group() {
        let tape = Tape::new();
        let mut rng = RngFactory::new(11).stream("gn");
        use rand::Rng;
        let n = 6;
        let c = 8;
        let groups = 2;
        let data: Vec<f64> = (0..n * c).map(|_| rng.gen_range(-3.0..5.0)).collect();
        let x = tape.constant(Tensor::matrix(n, c, data).unwrap());
        let gamma = tape.constant(Tensor::ones(&[1, c]));
        let beta = tape.constant(Tensor::zeros(&[1, c]));
        let y = group_norm(&tape, x, groups, gamma, beta).value();
        let per = c / groups;
        for row in 0..n {
            for g in 0..groups {
                let vals: Vec<f64> = (0..per).map(|j| y.data()[row * c + g * per + j]).collect();
                let mean: f64 = vals.iter().sum::<f64>() / per as f64;
                let var: f64 =
                    vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / per as f64;
                assert!(mean.abs() < 1e-6, "group mean {mean}");
                assert!((var - 1.0).abs() < 1e-4, "group var {var}");
            }
        }
    }

    #[test]
    fn flatten_unflatten_round_trip() {
        let enc = sample_encoder(13);
        let pv = enc.to_param_vector();
        let back = Encoder::from_param_vector(small_config(), &pv).unwrap();
        let pv2 = back.to_param_vector();
        assert_eq!(pv.values(), pv2.values());
    }

    #[test]
    fn same_config_same_layout() {
        let a = sample_encoder(1);
        let b = sample_encoder(2);
        assert_eq!(a.config().layout(), b.config().layout());
    }

    #[test]
    fn layout_element_count_matches_architecture() {
        let cfg = small_config();
        let expect = (4 * 8 + 8 + 8 + 8) + (8 * 6 + 6 + 6 + 6) + (6 * 5 + 5);
        assert_eq!(cfg.layout().total_len(), expect);
    }

    #[test]
    fn groups_must_divide_hidden_width() {
        let cfg = EncoderConfig {
            input_dim: 4,
            hidden_dims: vec![9],
            latent_dim: 3,
            groups: 2,
            activation: Activation::Relu,
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn wrong_input_width_is_error() {
        let enc = sample_encoder(17);
        let bad = Tensor::vector(vec![1.0, 2.0, 3.0]);
        assert!(enc.encode(&bad).is_err());
    }
}
