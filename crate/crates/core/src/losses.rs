//! Training objectives for both phases.
//!
//! Phase 1 combines a two-view positive cosine loss with a prototypical
//! distillation term: the KL divergence from the prototype's
//! temperature-softmax distribution to each encoded view's. Phase 2
//! trains the flow with a mean negative log-likelihood (additive
//! constants dropped) plus a cosine regularizer on the flow outputs of
//! the two views.
//!
//! Latent vectors enter the KL as categorical distributions via a
//! temperature softmax over coordinates; the target (prototype) side is
//! the first KL argument.

use serde::{Deserialize, Serialize};

use crate::augment::ViewPair;
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::tape::{log_softmax_rows, row_cosine, Tape, Var};
use crate::tensor::Tensor;

/// Norm floor in cosine computations; vectors below it are treated as
/// having this norm and a warning is logged.
pub const COSINE_NORM_EPS: f64 = 1e-12;

/// Phase-1 mixing weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Phase1Weights {
    /// Weight of the two-view cosine term; `1 - alpha` weighs distillation.
    pub alpha: f64,
}

impl Default for Phase1Weights {
    fn default() -> Self {
        Self { alpha: 0.1 }
    }
}

impl Phase1Weights {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Contract(format!(
                "alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Phase-2 regularization weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Phase2Weights {
    pub lambda: f64,
}

impl Default for Phase2Weights {
    fn default() -> Self {
        Self { lambda: 0.01 }
    }
}

impl Phase2Weights {
    pub fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 {
            return Err(Error::Contract(format!(
                "lambda must be non-negative, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Tape-level builders (the single implementation of each objective)
// ---------------------------------------------------------------------------

/// Mean over rows of `1 - cosine(a_i, b_i)`, shape `[1]`.
pub fn mean_cosine_loss_var<'t>(a: Var<'t>, b: Var<'t>) -> Var<'t> {
    warn_on_tiny_norms(&a.value());
    warn_on_tiny_norms(&b.value());
    row_cosine(a, b, COSINE_NORM_EPS).mean().neg().add_scalar(1.0)
}

/// Per-row `KL(p || softmax(logits_i / tau))` against fixed target
/// probabilities `p`, shape `[n, 1]`.
fn kl_rows_var<'t>(tape: &'t Tape, target_probs: &[f64], logits: Var<'t>, tau: f64) -> Var<'t> {
    let d = target_probs.len();
    let p_log_p: f64 = target_probs
        .iter()
        .map(|&p| if p > 0.0 { p * p.ln() } else { 0.0 })
        .sum();
    let p = tape.constant(
        Tensor::from_shape_vec(vec![1, d], target_probs.to_vec()).expect("target shape"),
    );
    let lsm = log_softmax_rows(tape, logits, tau);
    let cross = p.mul(lsm).sum_axis(1);
    cross.neg().add_scalar(p_log_p)
}

/// Distillation loss: mean over the batch of
/// `KL(proto || r_i) + KL(proto || r_hat_i)` under temperature softmax.
pub fn loss_pd_var<'t>(
    tape: &'t Tape,
    r: Var<'t>,
    r_hat: Var<'t>,
    prototype: &Tensor,
    tau: f64,
) -> Var<'t> {
    let probs = softmax(prototype.data(), tau);
    let kl_r = kl_rows_var(tape, &probs, r, tau);
    let kl_r_hat = kl_rows_var(tape, &probs, r_hat, tau);
    kl_r.add(kl_r_hat).mean()
}

/// Phase-1 objective: `(1 - alpha) * L_pd + alpha * L_p`.
pub fn phase1_loss_var<'t>(
    tape: &'t Tape,
    r: Var<'t>,
    r_hat: Var<'t>,
    prototype: &Tensor,
    tau: f64,
    weights: Phase1Weights,
) -> Var<'t> {
    let pd = loss_pd_var(tape, r, r_hat, prototype, tau);
    let p = mean_cosine_loss_var(r, r_hat);
    pd.scale(1.0 - weights.alpha).add(p.scale(weights.alpha))
}

/// Flow likelihood objective: mean of `||z_i||^2 / 2 - logdet_i`, additive
/// constants dropped.
pub fn loss_mle_var<'t>(z: Var<'t>, logdet: Var<'t>) -> Var<'t> {
    z.mul(z).sum_axis(1).scale(0.5).sub(logdet).mean()
}

/// Phase-2 objective: `L_mle + lambda * L_reg`.
pub fn phase2_loss_var<'t>(
    z: Var<'t>,
    z_hat: Var<'t>,
    logdet: Var<'t>,
    weights: Phase2Weights,
) -> Var<'t> {
    let mle = loss_mle_var(z, logdet);
    let reg = mean_cosine_loss_var(z, z_hat);
    mle.add(reg.scale(weights.lambda))
}

// ---------------------------------------------------------------------------
// Scalar-valued entry points
// ---------------------------------------------------------------------------

/// `1 - cosine(a, b)` for two nonzero vectors; 0 iff positively parallel,
/// 2 iff antiparallel.
pub fn cosine_loss(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.rank() != 1 || b.rank() != 1 || a.numel() != b.numel() {
        return Err(Error::DimensionMismatch(format!(
            "cosine_loss expects equal-length vectors, got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let tape = Tape::new();
    let av = tape.constant(a.clone().reshape(vec![1, a.numel()])?);
    let bv = tape.constant(b.clone().reshape(vec![1, b.numel()])?);
    mean_cosine_loss_var(av, bv).value().item()
}

/// Mean two-view cosine loss of a batch encoded by `encoder`.
pub fn loss_p(pairs: &[ViewPair], encoder: &Encoder) -> Result<f64> {
    let (r, r_hat) = encode_views(pairs, encoder)?;
    let tape = Tape::new();
    mean_cosine_loss_var(tape.constant(r), tape.constant(r_hat))
        .value()
        .item()
}

/// Mean distillation loss of a batch toward `prototype`.
pub fn loss_pd(pairs: &[ViewPair], encoder: &Encoder, prototype: &Tensor, tau: f64) -> Result<f64> {
    if prototype.numel() != encoder.latent_dim() {
        return Err(Error::DimensionMismatch(format!(
            "prototype has {} coordinates, encoder latent dim is {}",
            prototype.numel(),
            encoder.latent_dim()
        )));
    }
    let (r, r_hat) = encode_views(pairs, encoder)?;
    let tape = Tape::new();
    loss_pd_var(&tape, tape.constant(r), tape.constant(r_hat), prototype, tau)
        .value()
        .item()
}

/// Full phase-1 objective for a batch.
pub fn phase1_loss(
    pairs: &[ViewPair],
    encoder: &Encoder,
    prototype: &Tensor,
    tau: f64,
    weights: Phase1Weights,
) -> Result<f64> {
    weights.validate()?;
    let (r, r_hat) = encode_views(pairs, encoder)?;
    let tape = Tape::new();
    phase1_loss_var(
        &tape,
        tape.constant(r),
        tape.constant(r_hat),
        prototype,
        tau,
        weights,
    )
    .value()
    .item()
}

/// Mean `||z||^2 / 2 - logdet` over a batch of flow outputs.
pub fn loss_mle(z: &Tensor, logdets: &Tensor) -> Result<f64> {
    let (n, _) = z.dims2()?;
    if logdets.numel() != n {
        return Err(Error::DimensionMismatch(format!(
            "{n} flow outputs but {} log-determinants",
            logdets.numel()
        )));
    }
    for (i, &ld) in logdets.data().iter().enumerate() {
        if !ld.is_finite() {
            return Err(Error::NonFinite(format!(
                "log-determinant of sample {i} is {ld}"
            )));
        }
    }
    let tape = Tape::new();
    let zc = tape.constant(z.clone());
    let ld = tape.constant(logdets.clone().reshape(vec![n, 1])?);
    loss_mle_var(zc, ld).value().item()
}

/// Cosine regularizer between the flow outputs of the two views.
pub fn loss_reg(z: &Tensor, z_hat: &Tensor) -> Result<f64> {
    if z.shape() != z_hat.shape() {
        return Err(Error::DimensionMismatch(format!(
            "view batches differ: {:?} vs {:?}",
            z.shape(),
            z_hat.shape()
        )));
    }
    let tape = Tape::new();
    mean_cosine_loss_var(tape.constant(z.clone()), tape.constant(z_hat.clone()))
        .value()
        .item()
}

/// Full phase-2 objective for a batch.
pub fn phase2_loss(
    z: &Tensor,
    z_hat: &Tensor,
    logdets: &Tensor,
    weights: Phase2Weights,
) -> Result<f64> {
    weights.validate()?;
    if z.shape() != z_hat.shape() {
        return Err(Error::DimensionMismatch(format!(
            "view batches differ: {:?} vs {:?}",
            z.shape(),
            z_hat.shape()
        )));
    }
    let (n, _) = z.dims2()?;
    let tape = Tape::new();
    let zc = tape.constant(z.clone());
    let zhc = tape.constant(z_hat.clone());
    let ld = tape.constant(logdets.clone().reshape(vec![n, 1])?);
    phase2_loss_var(zc, zhc, ld, weights).value().item()
}

/// Softmax of `logits / tau` with the usual max-shift stabilization.
pub fn softmax(logits: &[f64], tau: f64) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| ((v - m) / tau).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn encode_views(pairs: &[ViewPair], encoder: &Encoder) -> Result<(Tensor, Tensor)> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("loss over an empty batch".into()));
    }
    let dim = pairs[0].x.numel();
    let mut a = Vec::with_capacity(pairs.len() * dim);
    let mut b = Vec::with_capacity(pairs.len() * dim);
    for pair in pairs {
        a.extend_from_slice(pair.x.data());
        b.extend_from_slice(pair.x_hat.data());
    }
    let xa = Tensor::from_shape_vec(vec![pairs.len(), dim], a)?;
    let xb = Tensor::from_shape_vec(vec![pairs.len(), dim], b)?;
    Ok((encoder.encode_batch(&xa)?, encoder.encode_batch(&xb)?))
}

fn warn_on_tiny_norms(batch: &Tensor) {
    if batch.rank() != 2 {
        return;
    }
    let (n, d) = (batch.shape()[0], batch.shape()[1]);
    for i in 0..n {
        let row = &batch.data()[i * d..(i + 1) * d];
        let norm: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < COSINE_NORM_EPS {
            log::warn!("cosine: row {i} has near-zero norm {norm:e}; clamped");
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderConfig;
    use crate::rng::RngFactory;

    fn toy_encoder(seed: u64) -> Encoder {
        let cfg = EncoderConfig {
            input_dim: 4,
            hidden_dims: vec![8],
            latent_dim: 6,
            groups: 2,
            activation: crate::encoder::Activation::Relu,
        };
        let mut rng = RngFactory::new(seed).stream("loss-enc");
        Encoder::init(cfg, &mut rng).unwrap()
    }

    fn identity_pairs(n: usize, seed: u64) -> Vec<ViewPair> {
        use rand::Rng;
        let mut rng = RngFactory::new(seed).stream("loss-data");
        (0..n)
            .map(|_| {
                let s = Tensor::vector((0..4).map(|_| rng.gen_range(-1.0..1.0)).collect());
                ViewPair {
                    x: s.clone(),
                    x_hat: s,
                }
            })
            .collect()
    }

    #[test]
    fn cosine_loss_parallel_orthogonal_antiparallel() {
        let a = Tensor::vector(vec![1.0, 2.0, 0.0]);
        assert!(cosine_loss(&a, &a).unwrap().abs() < 1e-12);
        let x = Tensor::vector(vec![1.0, 0.0]);
        let y = Tensor::vector(vec![0.0, 1.0]);
        assert!((cosine_loss(&x, &y).unwrap() - 1.0).abs() < 1e-12);
        let neg = a.neg();
        assert!((cosine_loss(&a, &neg).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn loss_p_identity_views_is_zero() {
        let enc = toy_encoder(1);
        let pairs = identity_pairs(5, 2);
        assert!(loss_p(&pairs, &enc).unwrap().abs() < 1e-12);
    }

    #[test]
    fn loss_p_single_pair_equals_cosine_loss() {
        let enc = toy_encoder(3);
        let mut pairs = identity_pairs(1, 4);
        pairs[0].x_hat = Tensor::vector(vec![0.9, -0.3, 0.2, 0.4]);
        let via_batch = loss_p(&pairs, &enc).unwrap();
        let r = enc.encode(&pairs[0].x).unwrap();
        let r_hat = enc.encode(&pairs[0].x_hat).unwrap();
        let direct = cosine_loss(&r, &r_hat).unwrap();
        assert!((via_batch - direct).abs() < 1e-12);
    }

    #[test]
    fn loss_p_equals_mean_of_per_pair_losses() {
        use rand::Rng;
        let enc = toy_encoder(5);
        let mut rng = RngFactory::new(6).stream("pairs");
        let pairs: Vec<ViewPair> = (0..7)
            .map(|_| ViewPair {
                x: Tensor::vector((0..4).map(|_| rng.gen_range(-1.0..1.0)).collect()),
                x_hat: Tensor::vector((0..4).map(|_| rng.gen_range(-1.0..1.0)).collect()),
            })
            .collect();
        let batch = loss_p(&pairs, &enc).unwrap();
        let mean: f64 = pairs
            .iter()
            .map(|p| {
                let r = enc.encode(&p.x).unwrap();
                let rh = enc.encode(&p.x_hat).unwrap();
                cosine_loss(&r, &rh).unwrap()
            })
            .sum::<f64>()
            / pairs.len() as f64;
        assert!((batch - mean).abs() < 1e-12);
    }

    #[test]
    fn empty_batch_is_error() {
        let enc = toy_encoder(7);
        assert!(matches!(
            loss_p(&[], &enc),
            Err(Error::EmptyInput(_))
        ));
    }

    // Closed-form oracle: v = [ln 2, 0], r = [0, 0], tau = 1 gives
    // KL = (2/3) ln(4/3) + (1/3) ln(2/3) = 0.056633... per view.
    #[test]
    fn loss_pd_matches_two_category_closed_form() {
        let tape = Tape::new();
        let proto = Tensor::vector(vec![2.0f64.ln(), 0.0]);
        let r = tape.constant(Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap());
        let r_hat = tape.constant(Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap());
        let loss = loss_pd_var(&tape, r, r_hat, &proto, 1.0).value().item().unwrap();
        let per_view = (2.0 / 3.0) * (4.0f64 / 3.0).ln() + (1.0 / 3.0) * (2.0f64 / 3.0).ln();
        assert!((loss - 2.0 * per_view).abs() < 1e-12, "got {loss}");
        assert!((per_view - 0.0566).abs() < 1e-4);
    }

    #[test]
    fn loss_pd_zero_when_logits_match_prototype() {
        let tape = Tape::new();
        let proto = Tensor::vector(vec![0.5, -1.0, 2.0]);
        let r = tape.constant(Tensor::matrix(1, 3, vec![0.5, -1.0, 2.0]).unwrap());
        let loss = loss_pd_var(&tape, r, r, &proto, 1.0).value().item().unwrap();
        assert!(loss.abs() < 1e-12);
    }

    #[test]
    fn loss_pd_is_shift_invariant() {
        let tape = Tape::new();
        let proto = Tensor::vector(vec![0.3, 1.2, -0.4]);
        let shifted_proto = proto.add_scalar(5.0);
        let r = Tensor::matrix(2, 3, vec![0.0, 0.5, 1.0, -1.0, 0.0, 1.0]).unwrap();
        let shifted_r = r.add_scalar(5.0);
        let base = loss_pd_var(
            &tape,
            tape.constant(r.clone()),
            tape.constant(r),
            &proto,
            1.0,
        )
        .value()
        .item()
        .unwrap();
        let shifted = loss_pd_var(
            &tape,
            tape.constant(shifted_r.clone()),
            tape.constant(shifted_r),
            &shifted_proto,
            1.0,
        )
        .value()
        .item()
        .unwrap();
        assert!((base - shifted).abs() < 1e-9, "{base} vs {shifted}");
    }

    #[test]
    fn phase1_boundaries_reduce_exactly() {
        let enc = toy_encoder(8);
        let mut pairs = identity_pairs(3, 9);
        pairs[1].x_hat = Tensor::vector(vec![0.1, 0.2, 0.3, 0.4]);
        let proto = Tensor::vector(vec![0.1; 6]);
        let p = loss_p(&pairs, &enc).unwrap();
        let pd = loss_pd(&pairs, &enc, &proto, 1.0).unwrap();
        let at1 = phase1_loss(&pairs, &enc, &proto, 1.0, Phase1Weights { alpha: 1.0 }).unwrap();
        let at0 = phase1_loss(&pairs, &enc, &proto, 1.0, Phase1Weights { alpha: 0.0 }).unwrap();
        assert_eq!(at1, p);
        assert_eq!(at0, pd);
    }

    #[test]
    fn phase1_is_exact_convex_combination() {
        // mirror of the 0.5 * 0.4 + 0.5 * 0.2 = 0.3 arithmetic example
        let pd = 0.4f64;
        let p = 0.2f64;
        let alpha = 0.5f64;
        assert!(((1.0 - alpha) * pd + alpha * p - 0.3).abs() < 1e-15);
    }

    #[test]
    fn alpha_out_of_range_is_error() {
        let enc = toy_encoder(10);
        let pairs = identity_pairs(2, 11);
        let proto = Tensor::vector(vec![0.0; 6]);
        assert!(phase1_loss(&pairs, &enc, &proto, 1.0, Phase1Weights { alpha: 1.5 }).is_err());
    }

    #[test]
    fn loss_mle_standard_normal_mode_and_unit_vector() {
        let z0 = Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap();
        let ld = Tensor::vector(vec![0.0]);
        assert_eq!(loss_mle(&z0, &ld).unwrap(), 0.0);
        let z1 = Tensor::matrix(1, 2, vec![1.0, 1.0]).unwrap();
        assert!((loss_mle(&z1, &ld).unwrap() - 1.0).abs() < 1e-15);
    }

    // Monte-Carlo oracle: E ||z||^2 / 2 = D / 2 for z ~ N(0, I_D).
    #[test]
    fn loss_mle_identity_flow_matches_expected_norm() {
        let d = 4;
        let n = 10_000;
        let mut rng = RngFactory::new(12).stream("mle-mc");
        let data: Vec<f64> = (0..n * d)
            .map(|_| crate::encoder::standard_normal(&mut rng))
            .collect();
        let z = Tensor::matrix(n, d, data).unwrap();
        let ld = Tensor::vector(vec![0.0; n]);
        let got = loss_mle(&z, &ld).unwrap();
        let expect = d as f64 / 2.0;
        // Var(||z||^2 / 2) = D / 2, so the MC standard error is sqrt(D/2/n).
        let sigma = (d as f64 / 2.0 / n as f64).sqrt();
        assert!(
            (got - expect).abs() < 3.0 * sigma,
            "{got} vs {expect} (3 sigma = {})",
            3.0 * sigma
        );
    }

    #[test]
    fn non_finite_logdet_reports_sample_index() {
        let z = Tensor::matrix(2, 2, vec![0.0; 4]).unwrap();
        let ld = Tensor::vector(vec![0.0, f64::NAN]);
        match loss_mle(&z, &ld) {
            Err(Error::NonFinite(msg)) => assert!(msg.contains("sample 1"), "{msg}"),
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }

    #[test]
    fn loss_reg_mirrors_cosine_contract() {
        let z = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 2.0]).unwrap();
        assert!(loss_reg(&z, &z).unwrap().abs() < 1e-12);
        let anti = z.neg();
        assert!((loss_reg(&z, &anti).unwrap() - 2.0).abs() < 1e-12);
        let bad = Tensor::matrix(3, 2, vec![0.0; 6]).unwrap();
        assert!(loss_reg(&z, &bad).is_err());
    }

    #[test]
    fn loss_reg_equals_mean_per_pair() {
        use rand::Rng;
        let mut rng = RngFactory::new(13).stream("reg");
        let n = 6;
        let d = 3;
        let za: Vec<f64> = (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let zb: Vec<f64> = (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let z = Tensor::matrix(n, d, za.clone()).unwrap();
        let zh = Tensor::matrix(n, d, zb.clone()).unwrap();
        let batch = loss_reg(&z, &zh).unwrap();
        let mean: f64 = (0..n)
            .map(|i| {
                let a = Tensor::vector(za[i * d..(i + 1) * d].to_vec());
                let b = Tensor::vector(zb[i * d..(i + 1) * d].to_vec());
                cosine_loss(&a, &b).unwrap()
            })
            .sum::<f64>()
            / n as f64;
        assert!((batch - mean).abs() < 1e-12);
    }

    #[test]
    fn phase2_boundaries_and_arithmetic() {
        let z = Tensor::matrix(2, 2, vec![0.5, 1.0, -0.5, 0.2]).unwrap();
        let zh = Tensor::matrix(2, 2, vec![0.4, 1.1, -0.6, 0.1]).unwrap();
        let ld = Tensor::vector(vec![0.1, -0.2]);
        let mle = loss_mle(&z, &ld).unwrap();
        let at0 = phase2_loss(&z, &zh, &ld, Phase2Weights { lambda: 0.0 }).unwrap();
        assert_eq!(at0, mle);
        // mirror of 1.0 + 0.01 * 0.5 = 1.005
        assert!((1.0 + 0.01 * 0.5 - 1.005f64).abs() < 1e-15);
        assert!(phase2_loss(&z, &zh, &ld, Phase2Weights { lambda: -0.1 }).is_err());
    }

    #[test]
    fn losses_are_nonnegative_and_finite_on_random_input() {
        use rand::Rng;
        let enc = toy_encoder(14);
        let mut rng = RngFactory::new(15).stream("nonneg");
        for _ in 0..20 {
            let pairs: Vec<ViewPair> = (0..4)
                .map(|_| ViewPair {
                    x: Tensor::vector((0..4).map(|_| rng.gen_range(-2.0..2.0)).collect()),
                    x_hat: Tensor::vector((0..4).map(|_| rng.gen_range(-2.0..2.0)).collect()),
                })
                .collect();
            let proto = Tensor::vector((0..6).map(|_| rng.gen_range(-1.0..1.0)).collect());
            let p = loss_p(&pairs, &enc).unwrap();
            let pd = loss_pd(&pairs, &enc, &proto, 1.0).unwrap();
            assert!(p >= 0.0 && p.is_finite());
            assert!(pd >= 0.0 && pd.is_finite());
        }
    }
}
