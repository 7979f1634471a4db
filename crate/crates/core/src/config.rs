//! Run configuration: one strict key-value file drives an end-to-end
//! experiment. Unknown keys are rejected, every violated constraint is
//! reported at once, and the canonical serialization (hashed) is embedded
//! in every artifact a run writes.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::encoder::{Activation, EncoderConfig};
use crate::error::{Error, Result};
use crate::exec::ExecMode;
use crate::flow::{FlowConfig, FlowTrainConfig};
use crate::mediator::MediatorConfig;
use crate::augment::AugmentPolicy;
use crate::federation::Phase1Config;

/// Which per-client classifier scores the test set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassifierKind {
    Ocnf,
    Gde,
    Kde,
}

impl std::fmt::Display for ClassifierKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ClassifierKind::Ocnf => write!(f, "ocnf"),
            ClassifierKind::Gde => write!(f, "gde"),
            ClassifierKind::Kde => write!(f, "kde"),
        }
    }
}

/// Which loss components stay enabled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationFlags {
    pub use_pd: bool,
    pub use_p: bool,
    pub use_reg: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        Self {
            use_pd: true,
            use_p: true,
            use_reg: true,
        }
    }
}

impl std::fmt::Display for AblationFlags {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let onoff = |b: bool| if b { "on" } else { "off" };
        write!(
            f,
            "pd={} p={} reg={}",
            onoff(self.use_pd),
            onoff(self.use_p),
            onoff(self.use_reg)
        )
    }
}

/// Data source description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    /// "synthetic", "tabular" or "idx-images".
    pub kind: String,
    // synthetic
    pub classes: usize,
    pub per_class: usize,
    pub dim: usize,
    pub separation: f64,
    // tabular
    pub path: Option<String>,
    pub label_column: Option<String>,
    // idx-images
    pub train_images: Option<String>,
    pub train_labels: Option<String>,
    pub test_images: Option<String>,
    pub test_labels: Option<String>,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            kind: "synthetic".into(),
            classes: 8,
            per_class: 300,
            dim: 16,
            separation: 8.0,
            path: None,
            label_column: None,
            train_images: None,
            train_labels: None,
            test_images: None,
            test_labels: None,
        }
    }
}

impl DatasetSpec {
    fn collect_problems(&self, problems: &mut Vec<String>) {
        match self.kind.as_str() {
            "synthetic" => {
                if self.classes < 2 {
                    problems.push("dataset.classes must be at least 2".into());
                }
                if self.per_class < 5 {
                    problems.push("dataset.per_class must be at least 5".into());
                }
                if self.dim == 0 {
                    problems.push("dataset.dim must be positive".into());
                }
                if self.classes > self.dim {
                    problems.push(format!(
                        "dataset.dim ({}) must be >= dataset.classes ({})",
                        self.dim, self.classes
                    ));
                }
                if !(self.separation > 0.0) {
                    problems.push("dataset.separation must be positive".into());
                }
            }
            "tabular" => {
                if self.path.is_none() {
                    problems.push("dataset.path is required for kind = \"tabular\"".into());
                }
                if self.label_column.is_none() {
                    problems.push("dataset.label_column is required for kind = \"tabular\"".into());
                }
            }
            "idx-images" => {
                for (name, v) in [
                    ("train_images", &self.train_images),
                    ("train_labels", &self.train_labels),
                    ("test_images", &self.test_images),
                    ("test_labels", &self.test_labels),
                ] {
                    if v.is_none() {
                        problems.push(format!(
                            "dataset.{name} is required for kind = \"idx-images\""
                        ));
                    }
                }
            }
            other => problems.push(format!(
                "dataset.kind '{other}' is not one of synthetic | tabular | idx-images"
            )),
        }
    }
}

/// Encoder architecture without the input width (derived from the data).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderSettings {
    pub hidden_dims: Vec<usize>,
    pub latent_dim: usize,
    pub groups: usize,
    pub activation: Activation,
}

impl Default for EncoderSettings {
    fn default() -> Self {
        let d = EncoderConfig::default();
        Self {
            hidden_dims: d.hidden_dims,
            latent_dim: d.latent_dim,
            groups: d.groups,
            activation: d.activation,
        }
    }
}

impl EncoderSettings {
    pub fn to_config(&self, input_dim: usize) -> EncoderConfig {
        EncoderConfig {
            input_dim,
            hidden_dims: self.hidden_dims.clone(),
            latent_dim: self.latent_dim,
            groups: self.groups,
            activation: self.activation,
        }
    }
}

/// Mediator settings without dims already fixed elsewhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MediatorSettings {
    pub hidden_dims: Vec<usize>,
    pub groups: usize,
    pub pool_size: usize,
}

impl Default for MediatorSettings {
    fn default() -> Self {
        let d = MediatorConfig::default();
        Self {
            hidden_dims: d.hidden_dims,
            groups: d.groups,
            pool_size: d.pool_size,
        }
    }
}

impl MediatorSettings {
    pub fn to_config(&self, seed: u64, input_dim: usize, latent_dim: usize) -> MediatorConfig {
        MediatorConfig {
            seed,
            input_dim,
            latent_dim,
            hidden_dims: self.hidden_dims.clone(),
            groups: self.groups,
            pool_size: self.pool_size,
        }
    }
}

/// Flow architecture without the latent width (taken from the encoder).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowShape {
    pub layers: usize,
    pub subnet_hidden: Vec<usize>,
    pub scale_clamp: f64,
    pub subnet_init_gain: f64,
}

impl Default for FlowShape {
    fn default() -> Self {
        let d = FlowConfig::default();
        Self {
            layers: d.layers,
            subnet_hidden: d.subnet_hidden,
            scale_clamp: d.scale_clamp,
            subnet_init_gain: d.subnet_init_gain,
        }
    }
}

impl FlowShape {
    pub fn to_config(&self, latent_dim: usize) -> FlowConfig {
        FlowConfig {
            latent_dim,
            layers: self.layers,
            subnet_hidden: self.subnet_hidden.clone(),
            scale_clamp: self.scale_clamp,
            subnet_init_gain: self.subnet_init_gain,
        }
    }
}

/// Two-view augmentation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSettings {
    pub policy: String,
    pub sigma: f64,
    pub dropout: f64,
}

impl Default for AugmentSettings {
    fn default() -> Self {
        Self {
            policy: "noise-dropout".into(),
            sigma: 0.1,
            dropout: 0.1,
        }
    }
}

impl AugmentSettings {
    pub fn to_policy(&self) -> Result<AugmentPolicy> {
        AugmentPolicy::parse(&self.policy, self.sigma, self.dropout)
    }
}

/// The complete, hashable description of one experiment run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: Option<String>,
    pub execution: ExecMode,
    pub classifier: ClassifierKind,
    /// New joiners: the `gamma` highest client ids skip phase 1.
    pub gamma: usize,
    /// KDE bandwidth; `None` uses Scott's rule per client.
    pub kde_bandwidth: Option<f64>,
    pub ablation: AblationFlags,
    pub dataset: DatasetSpec,
    pub encoder: EncoderSettings,
    pub mediator: MediatorSettings,
    pub phase1: Phase1Config,
    pub phase2: FlowTrainConfig,
    pub flow: FlowShape,
    pub augment: AugmentSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: None,
            execution: ExecMode::default(),
            classifier: ClassifierKind::Ocnf,
            gamma: 0,
            kde_bandwidth: None,
            ablation: AblationFlags::default(),
            dataset: DatasetSpec::default(),
            encoder: EncoderSettings::default(),
            mediator: MediatorSettings::default(),
            phase1: Phase1Config::default(),
            phase2: FlowTrainConfig::default(),
            flow: FlowShape::default(),
            augment: AugmentSettings::default(),
        }
    }
}

impl RunConfig {
    /// Parse from strict TOML; unknown keys fail.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(vec![e.to_string()]))
    }

    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    /// Canonical serialization; the basis of the config hash.
    pub fn canonical_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// SHA-256 of the canonical serialization.
    pub fn hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.canonical_toml().as_bytes());
        h.finalize().into()
    }

    pub fn hash_hex(&self) -> String {
        crate::params::hex_string(&self.hash())
    }

    /// Validate every constraint; all violations are reported together.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        self.dataset.collect_problems(&mut problems);
        if self.gamma > 0 && self.dataset.kind == "synthetic" && self.gamma >= self.dataset.classes
        {
            problems.push(format!(
                "gamma ({}) must be below the client count ({})",
                self.gamma, self.dataset.classes
            ));
        }
        if !self.ablation.use_pd && !self.ablation.use_p {
            problems.push("ablation disables both phase-1 terms; at least one must stay".into());
        }
        if self.encoder.latent_dim < 2 {
            problems.push("encoder.latent_dim must be at least 2 for the flow".into());
        }
        collect(&mut problems, self.encoder.to_config(16).validate());
        collect(&mut problems, self.flow.to_config(self.encoder.latent_dim.max(2)).validate());
        collect(&mut problems, self.phase1.validate(usize::MAX));
        collect(&mut problems, self.phase2.optimizer.validate());
        if self.phase2.epochs == 0 {
            problems.push("phase2.epochs must be at least 1".into());
        }
        if self.phase2.batch_size == 0 {
            problems.push("phase2.batch_size must be at least 1".into());
        }
        if self.phase2.lambda < 0.0 {
            problems.push("phase2.lambda must be non-negative".into());
        }
        if let Some(bw) = self.kde_bandwidth {
            if !(bw > 0.0) {
                problems.push("kde_bandwidth must be positive when set".into());
            }
        }
        if self.mediator.pool_size == 0 {
            problems.push("mediator.pool_size must be positive".into());
        }
        if self.augment.to_policy().is_err() {
            problems.push(format!(
                "augment.policy '{}' is not one of identity | gaussian-noise | feature-dropout | noise-dropout",
                self.augment.policy
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    /// Effective phase-1 mixing weight after ablation flags.
    pub fn effective_alpha(&self) -> f64 {
        if !self.ablation.use_pd {
            1.0
        } else if !self.ablation.use_p {
            0.0
        } else {
            self.phase1.alpha
        }
    }

    /// Effective phase-2 regularization weight after ablation flags.
    pub fn effective_lambda(&self) -> f64 {
        if !self.ablation.use_reg {
            0.0
        } else {
            self.phase2.lambda
        }
    }

    /// Output directory resolution: explicit field, else `runs/<hash8>`.
    pub fn resolved_out_dir(&self) -> PathBuf {
        match &self.out_dir {
            Some(d) => PathBuf::from(d),
            None => PathBuf::from("runs").join(&self.hash_hex()[..8]),
        }
    }
}

fn collect(problems: &mut Vec<String>, result: Result<()>) {
    match result {
        Err(Error::Config(mut list)) => problems.append(&mut list),
        Err(Error::Contract(msg)) => problems.push(msg),
        _ => {}
    }
}
