//! Experiment harnesses: the one-vs-rest runner, the new-joiner
//! scalability experiment, the component-ablation sweep and the
//! classifier-swap comparison.
//!
//! A [`TrainedPipeline`] is the product of both phases: the frozen global
//! encoder, one flow per client, the audit records. Evaluation scores the
//! full held-out test set per client (its class is the target/normal
//! class, everything else is non-target) and aggregates AUROC/EER.

use crate::baselines::{kde_score, scott_bandwidth, GdeModel};
use crate::config::{ClassifierKind, RunConfig};
use crate::data::{gen_synthetic_blobs, load_idx_images, load_tabular, partition_extreme,
    with_native_split, ClientShard, LabeledDataset, Scaler};
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::exec::map_ordered;
use crate::federation::{run_phase1, FederatedClient, IsolationProbe, Resource, RoundRecord};
use crate::flow::{score_sample, train_ocnf, FlowModel};
use crate::losses::Phase2Weights;
use crate::mediator::{Prototype, PrototypeRegistry};
use crate::metrics::{auroc, eer, mean, population_std, ScoredExample};
use crate::params::ParamVector;
use crate::rng::RngFactory;
use crate::tensor::Tensor;
use crate::ClientId;

/// Everything both phases produce for one run.
pub struct TrainedPipeline {
    pub config: RunConfig,
    pub dataset: LabeledDataset,
    pub scaler: Option<Scaler>,
    pub shards: Vec<ClientShard>,
    pub veterans: Vec<ClientId>,
    pub new_joiners: Vec<ClientId>,
    pub prototypes: Vec<Option<Prototype>>,
    pub global_params: ParamVector,
    pub encoder: Encoder,
    pub flows: Vec<FlowModel>,
    pub records: Vec<RoundRecord>,
    /// Per-flow training curves (mean loss per epoch).
    pub flow_losses: Vec<Vec<f64>>,
}

/// Per-client evaluation outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientMetrics {
    pub client: ClientId,
    pub label: usize,
    pub is_new_joiner: bool,
    pub auroc: f64,
    pub eer: f64,
}

/// Aggregated evaluation of one classifier over all clients.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub classifier: ClassifierKind,
    pub ablation: String,
    pub gamma: usize,
    pub per_client: Vec<ClientMetrics>,
    pub mean_auroc: f64,
    pub std_auroc: f64,
    pub mean_eer: f64,
    pub std_eer: f64,
    pub veteran_mean_auroc: f64,
    pub joiner_mean_auroc: Option<f64>,
    pub config_hash: String,
    pub config_echo: String,
}

impl ExperimentReport {
    /// Structured text: one record per client plus the aggregate block.
    /// Deterministic; contains no timestamps.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        out.push_str("experiment report\n");
        out.push_str(&format!("config-hash: {}\n", self.config_hash));
        out.push_str(&format!("classifier: {}\n", self.classifier));
        out.push_str(&format!("ablation: {}\n", self.ablation));
        out.push_str(&format!("gamma: {}\n", self.gamma));
        out.push_str("[per-client]\n");
        for m in &self.per_client {
            out.push_str(&format!(
                "client {} label {} {} auroc {:.6} eer {:.6}\n",
                m.client,
                m.label,
                if m.is_new_joiner { "joiner" } else { "veteran" },
                m.auroc,
                m.eer
            ));
        }
        out.push_str("[aggregate]\n");
        out.push_str(&format!(
            "mean-auroc {:.6}\nstd-auroc {:.6}\nmean-eer {:.6}\nstd-eer {:.6}\n",
            self.mean_auroc, self.std_auroc, self.mean_eer, self.std_eer
        ));
        out.push_str(&format!("veteran-mean-auroc {:.6}\n", self.veteran_mean_auroc));
        if let Some(j) = self.joiner_mean_auroc {
            out.push_str(&format!("joiner-mean-auroc {j:.6}\n"));
        }
        out.push_str("[config]\n");
        for line in self.config_echo.lines() {
            out.push_str(&format!("# {line}\n"));
        }
        out
    }

    /// Delimited summary suitable for plotting.
    pub fn render_csv(&self) -> String {
        let mut out = String::from("client,label,group,auroc,eer\n");
        for m in &self.per_client {
            out.push_str(&format!(
                "{},{},{},{:.6},{:.6}\n",
                m.client,
                m.label,
                if m.is_new_joiner { "joiner" } else { "veteran" },
                m.auroc,
                m.eer
            ));
        }
        out
    }
}

/// Build the dataset a config describes. Tabular loads also return the
/// fitted scaler for persistence.
pub fn build_dataset(config: &RunConfig) -> Result<(LabeledDataset, Option<Scaler>)> {
    let spec = &config.dataset;
    let rng = RngFactory::new(config.seed);
    match spec.kind.as_str() {
        "synthetic" => {
            let ds = gen_synthetic_blobs(
                spec.classes,
                spec.per_class,
                spec.dim,
                spec.separation,
                rng.derive_seed("dataset"),
            )?;
            Ok((ds, None))
        }
        "tabular" => {
            let path = spec.path.as_ref().expect("validated");
            let label = spec.label_column.as_ref().expect("validated");
            let (ds, scaler) = load_tabular(
                std::path::Path::new(path),
                label,
                rng.derive_seed("dataset/split"),
            )?;
            Ok((ds, Some(scaler)))
        }
        "idx-images" => {
            let p = |o: &Option<String>| std::path::PathBuf::from(o.as_ref().expect("validated"));
            let train = load_idx_images(&p(&spec.train_images), &p(&spec.train_labels))?;
            let test = load_idx_images(&p(&spec.test_images), &p(&spec.test_labels))?;
            Ok((with_native_split(train, test), None))
        }
        other => Err(Error::Config(vec![format!("unknown dataset kind '{other}'")])),
    }
}

/// Run both phases under `config`. The `gamma` highest client ids are the
/// new joiners: they skip registration and phase 1 entirely, download the
/// final global model and train only their local flow.
pub fn train_pipeline(config: &RunConfig, probe: Option<&IsolationProbe>) -> Result<TrainedPipeline> {
    config.validate()?;
    let (dataset, scaler) = build_dataset(config)?;
    dataset.validate()?;
    let client_count = dataset.class_count;
    if config.gamma >= client_count {
        return Err(Error::Config(vec![format!(
            "gamma ({}) must be below the client count ({client_count})",
            config.gamma
        )]));
    }
    let shards = partition_extreme(&dataset, client_count)?;
    for shard in &shards {
        if shard.samples.is_empty() {
            return Err(Error::EmptyInput(format!(
                "class {} has no training samples",
                shard.label
            )));
        }
    }
    let input_dim = dataset.feature_dim();
    let encoder_config = config.encoder.to_config(input_dim);
    let rng = RngFactory::new(config.seed);
    let augment = config.augment.to_policy()?;

    let veteran_count = client_count - config.gamma;
    let veterans: Vec<ClientId> = (0..veteran_count).map(ClientId).collect();
    let new_joiners: Vec<ClientId> = (veteran_count..client_count).map(ClientId).collect();

    // mediator: register veterans only; prototypes are issued exactly once
    let mediator_config = config.mediator.to_config(
        rng.derive_seed("mediator"),
        input_dim,
        config.encoder.latent_dim,
    );
    let mut registry = PrototypeRegistry::new(&mediator_config)?;
    let mut prototypes: Vec<Option<Prototype>> = vec![None; client_count];
    let mut federated: Vec<FederatedClient> = Vec::with_capacity(veteran_count);
    for &id in &veterans {
        let prototype = registry.register_client(id)?;
        prototypes[id.0] = Some(prototype.clone());
        federated.push(FederatedClient {
            shard: shards[id.0].clone(),
            prototype,
        });
    }

    // phase 1: federated representation learning over the veterans
    let mut phase1 = config.phase1.clone();
    phase1.alpha = config.effective_alpha();
    let (global_params, records) = run_phase1(
        &federated,
        &encoder_config,
        &phase1,
        &augment,
        &rng,
        config.execution,
        probe,
    )?;
    let encoder = Encoder::from_param_vector(encoder_config, &global_params)?;

    // phase 2: every client (veterans and joiners) trains its own flow on
    // its own shard against the frozen global encoder
    let flow_config = config.flow.to_config(config.encoder.latent_dim);
    let mut phase2 = config.phase2.clone();
    phase2.lambda = config.effective_lambda();
    let trained: Vec<Result<(FlowModel, Vec<f64>)>> =
        map_ordered(config.execution, &shards, |shard| {
            let samples = probed_samples(shard, probe);
            train_ocnf(
                &flow_config,
                Some(&encoder),
                samples,
                &phase2,
                &augment,
                &rng,
                &format!("phase2/client/{}", shard.client),
            )
        });
    let mut flows = Vec::with_capacity(client_count);
    let mut flow_losses = Vec::with_capacity(client_count);
    for (k, result) in trained.into_iter().enumerate() {
        let (flow, losses) = result.map_err(|e| Error::Client {
            round: config.phase1.rounds,
            client: k,
            source: Box::new(e),
        })?;
        flows.push(flow);
        flow_losses.push(losses);
    }

    Ok(TrainedPipeline {
        config: config.clone(),
        dataset,
        scaler,
        shards,
        veterans,
        new_joiners,
        prototypes,
        global_params,
        encoder,
        flows,
        records,
        flow_losses,
    })
}

fn probed_samples<'a>(shard: &'a ClientShard, probe: Option<&IsolationProbe>) -> &'a [Tensor] {
    if let Some(p) = probe {
        p.record(shard.client, Resource::Shard(shard.client));
    }
    &shard.samples
}

/// Score the full test set for every client under `classifier` and
/// aggregate. The pipeline's global encoder and test pipeline are shared;
/// only the scorer differs.
pub fn evaluate_pipeline(
    pipeline: &TrainedPipeline,
    classifier: ClassifierKind,
) -> Result<ExperimentReport> {
    let config = &pipeline.config;
    let dataset = &pipeline.dataset;
    if dataset.test.is_empty() {
        return Err(Error::EmptyInput("evaluation needs a non-empty test set".into()));
    }
    let dim = dataset.feature_dim();
    let n_test = dataset.test.len();
    let mut flat = Vec::with_capacity(n_test * dim);
    for (t, _) in &dataset.test {
        flat.extend_from_slice(t.data());
    }
    let test_matrix = Tensor::from_shape_vec(vec![n_test, dim], flat)?;
    let test_latents = pipeline.encoder.encode_batch(&test_matrix)?;
    let latent_dim = pipeline.encoder.latent_dim();

    let client_ids: Vec<usize> = (0..pipeline.shards.len()).collect();
    let metrics: Vec<Result<ClientMetrics>> = map_ordered(config.execution, &client_ids, |&k| {
        let shard = &pipeline.shards[k];
        let scores = match classifier {
            ClassifierKind::Ocnf => pipeline.flows[k].score_latents(&test_latents)?,
            ClassifierKind::Gde | ClassifierKind::Kde => {
                let train_latents = shard_latents(&pipeline.encoder, shard)?;
                match classifier {
                    ClassifierKind::Gde => {
                        let model = GdeModel::fit(&train_latents)?;
                        rows(&test_latents, latent_dim)
                            .map(|row| model.score(&row))
                            .collect::<Result<Vec<f64>>>()?
                    }
                    ClassifierKind::Kde => {
                        let bandwidth = match config.kde_bandwidth {
                            Some(b) => b,
                            None => scott_bandwidth(&train_latents)?,
                        };
                        rows(&test_latents, latent_dim)
                            .map(|row| kde_score(&train_latents, &row, bandwidth))
                            .collect::<Result<Vec<f64>>>()?
                    }
                    ClassifierKind::Ocnf => unreachable!(),
                }
            }
        };
        let scored: Vec<ScoredExample> = scores
            .iter()
            .enumerate()
            .map(|(i, &score)| ScoredExample::new(i, dataset.test[i].1 == shard.label, score))
            .collect();
        Ok(ClientMetrics {
            client: shard.client,
            label: shard.label,
            is_new_joiner: pipeline.new_joiners.contains(&shard.client),
            auroc: auroc(&scored)?,
            eer: eer(&scored)?,
        })
    });
    let per_client: Vec<ClientMetrics> = metrics
        .into_iter()
        .enumerate()
        .map(|(k, m)| {
            m.map_err(|e| Error::Client {
                round: config.phase1.rounds,
                client: k,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let aurocs: Vec<f64> = per_client.iter().map(|m| m.auroc).collect();
    let eers: Vec<f64> = per_client.iter().map(|m| m.eer).collect();
    let veteran_aurocs: Vec<f64> = per_client
        .iter()
        .filter(|m| !m.is_new_joiner)
        .map(|m| m.auroc)
        .collect();
    let joiner_aurocs: Vec<f64> = per_client
        .iter()
        .filter(|m| m.is_new_joiner)
        .map(|m| m.auroc)
        .collect();
    Ok(ExperimentReport {
        classifier,
        ablation: config.ablation.to_string(),
        gamma: config.gamma,
        mean_auroc: mean(&aurocs),
        std_auroc: population_std(&aurocs),
        mean_eer: mean(&eers),
        std_eer: population_std(&eers),
        veteran_mean_auroc: mean(&veteran_aurocs),
        joiner_mean_auroc: if joiner_aurocs.is_empty() {
            None
        } else {
            Some(mean(&joiner_aurocs))
        },
        per_client,
        config_hash: config.hash_hex(),
        config_echo: config.canonical_toml(),
    })
}

/// Latents of one shard under the frozen global encoder.
pub fn shard_latents(encoder: &Encoder, shard: &ClientShard) -> Result<Vec<Tensor>> {
    let dim = shard.samples[0].numel();
    let n = shard.samples.len();
    let mut flat = Vec::with_capacity(n * dim);
    for s in &shard.samples {
        flat.extend_from_slice(s.data());
    }
    let latents = encoder.encode_batch(&Tensor::from_shape_vec(vec![n, dim], flat)?)?;
    let d = encoder.latent_dim();
    Ok(rows(&latents, d).collect())
}

fn rows(matrix: &Tensor, width: usize) -> impl Iterator<Item = Tensor> + '_ {
    let n = matrix.shape()[0];
    (0..n).map(move |i| Tensor::vector(matrix.data()[i * width..(i + 1) * width].to_vec()))
}

/// Train and evaluate under the configured classifier.
pub fn run_one_vs_rest(config: &RunConfig) -> Result<ExperimentReport> {
    let pipeline = train_pipeline(config, None)?;
    evaluate_pipeline(&pipeline, config.classifier)
}

/// The new-joiner experiment: phase 1 runs without the `gamma` highest
/// client ids, every client runs phase 2, metrics split by group.
pub fn run_scalability(config: &RunConfig, gamma: usize) -> Result<ExperimentReport> {
    let mut cfg = config.clone();
    cfg.gamma = gamma;
    run_one_vs_rest(&cfg)
}

/// One ablation variant: flags map onto the effective loss weights.
pub fn run_ablation(
    config: &RunConfig,
    flags: crate::config::AblationFlags,
) -> Result<ExperimentReport> {
    let mut cfg = config.clone();
    cfg.ablation = flags;
    run_one_vs_rest(&cfg)
}

/// Per-sample score rows for the score dump: (sample id, true label,
/// score), one file per client.
pub fn score_dump_rows(
    pipeline: &TrainedPipeline,
    client: ClientId,
) -> Result<String> {
    let flow = pipeline
        .flows
        .get(client.0)
        .ok_or_else(|| Error::Contract(format!("no flow for client {client}")))?;
    let mut out = String::from("sample_id,true_label,score\n");
    for (i, (sample, label)) in pipeline.dataset.test.iter().enumerate() {
        let score = score_sample(flow, Some(&pipeline.encoder), sample)?;
        out.push_str(&format!("{i},{label},{score:.9}\n"));
    }
    Ok(out)
}
