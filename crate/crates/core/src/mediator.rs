//! Central-mediator duties: the frozen teacher, the off-the-shelf sample
//! pool, one-time prototype issuance and teacher-affinity scoring.
//!
//! The teacher is a seeded, frozen MLP and the pool holds seeded random
//! samples; the protocol only needs fixed, well-separated, client-specific
//! targets. Prototypes whose embedding lies too close to an already issued
//! one are skipped in favor of the next pool sample.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::{standard_normal, Activation, Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::params::hex_string;
use crate::rng::RngFactory;
use crate::tensor::Tensor;
use crate::ClientId;

/// Mediator construction parameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MediatorConfig {
    /// Seed for both the teacher weights and the sample pool.
    pub seed: u64,
    /// Input width of teacher and pool samples (matches the client data).
    pub input_dim: usize,
    /// Teacher output width; must equal the encoders' latent width.
    pub latent_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub groups: usize,
    /// Number of off-the-shelf samples available for prototype issuance.
    pub pool_size: usize,
}

impl Default for MediatorConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            input_dim: 16,
            hidden_dims: vec![64, 64],
            latent_dim: 32,
            groups: 8,
            pool_size: 256,
        }
    }
}

/// Issued prototypes with pairwise cosine similarity above this are
/// rejected and the next pool sample is tried.
const SEPARATION_LIMIT: f64 = 0.5;

/// The frozen teacher model.
#[derive(Debug, Clone)]
pub struct Teacher {
    seed: u64,
    encoder: Encoder,
}

impl Teacher {
    pub fn new(config: &MediatorConfig) -> Result<Self> {
        let enc_cfg = EncoderConfig {
            input_dim: config.input_dim,
            hidden_dims: config.hidden_dims.clone(),
            latent_dim: config.latent_dim,
            groups: config.groups,
            activation: Activation::Tanh,
        };
        let mut rng = RngFactory::new(config.seed).stream("mediator/teacher");
        Ok(Self {
            seed: config.seed,
            encoder: Encoder::init(enc_cfg, &mut rng)?,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.latent_dim()
    }

    pub fn embed(&self, sample: &Tensor) -> Result<Tensor> {
        self.encoder.encode(sample)
    }

    pub fn embed_batch(&self, samples: &Tensor) -> Result<Tensor> {
        self.encoder.encode_batch(samples)
    }
}

/// A prototype issued once to one client.
#[derive(Debug, Clone, PartialEq)]
pub struct Prototype {
    pub client: ClientId,
    pub teacher_seed: u64,
    pub vector: Tensor,
}

/// The mediator's registry: teacher, pool and issued prototypes.
///
/// Prototype vectors are the teacher's pool embeddings whitened by the
/// pool-embedding mean and covariance. A random-weight teacher produces
/// strongly anisotropic embeddings; whitening restores the separation a
/// trained teacher would provide, which is all the protocol needs from
/// its targets.
pub struct PrototypeRegistry {
    teacher: Teacher,
    pool: Vec<Tensor>,
    pool_embeddings: Vec<Tensor>,
    whitened: Vec<Tensor>,
    used: Vec<bool>,
    issued: BTreeMap<ClientId, Prototype>,
}

impl PrototypeRegistry {
    pub fn new(config: &MediatorConfig) -> Result<Self> {
        if config.pool_size == 0 {
            return Err(Error::Config(vec!["mediator pool_size must be positive".into()]));
        }
        let teacher = Teacher::new(config)?;
        let mut rng = RngFactory::new(config.seed).stream("mediator/pool");
        let pool: Vec<Tensor> = (0..config.pool_size)
            .map(|_| {
                Tensor::vector(
                    (0..config.input_dim)
                        .map(|_| standard_normal(&mut rng))
                        .collect(),
                )
            })
            .collect();
        let pool_embeddings = pool
            .iter()
            .map(|s| teacher.embed(s))
            .collect::<Result<Vec<_>>>()?;
        let whitened = whiten(&pool_embeddings);
        let used = vec![false; pool.len()];
        Ok(Self {
            teacher,
            pool,
            pool_embeddings,
            whitened,
            used,
            issued: BTreeMap::new(),
        })
    }

    pub fn teacher(&self) -> &Teacher {
        &self.teacher
    }

    pub fn issued_count(&self) -> usize {
        self.issued.len()
    }

    pub fn prototype(&self, client: ClientId) -> Option<&Prototype> {
        self.issued.get(&client)
    }

    /// Issue a prototype to `client`. Re-registering an already known
    /// client returns its stored prototype unchanged; otherwise the first
    /// unused pool sample whose embedding is sufficiently separated from
    /// every issued prototype is consumed.
    pub fn register_client(&mut self, client: ClientId) -> Result<Prototype> {
        if let Some(existing) = self.issued.get(&client) {
            return Ok(existing.clone());
        }
        let candidate = self.whitened.iter().enumerate().position(|(i, emb)| {
            !self.used[i]
                && self
                    .issued
                    .values()
                    .all(|p| cosine(&p.vector, emb).abs() < SEPARATION_LIMIT)
        });
        let Some(idx) = candidate else {
            return Err(Error::Capacity(format!(
                "no unused pool sample separated from the {} issued prototypes (pool size {})",
                self.issued.len(),
                self.pool.len()
            )));
        };
        self.used[idx] = true;
        let proto = Prototype {
            client,
            teacher_seed: self.teacher.seed,
            vector: self.whitened[idx].clone(),
        };
        self.issued.insert(client, proto.clone());
        Ok(proto)
    }

    /// Mean pairwise cosine similarity between the teacher embeddings of
    /// `samples` and of the pool.
    pub fn teacher_affinity(&self, samples: &[Tensor]) -> Result<f64> {
        if samples.is_empty() {
            return Err(Error::EmptyInput("teacher_affinity over empty set".into()));
        }
        let embedded = samples
            .iter()
            .map(|s| self.teacher.embed(s))
            .collect::<Result<Vec<_>>>()?;
        Ok(mean_pairwise_cosine(&embedded, &self.pool_embeddings))
    }
}

/// Mean of `cosine(a_i, b_j)` over all pairs.
pub fn mean_pairwise_cosine(a: &[Tensor], b: &[Tensor]) -> f64 {
    let mut total = 0.0;
    for x in a {
        for y in b {
            total += cosine(x, y);
        }
    }
    total / (a.len() * b.len()) as f64
}

fn cosine(a: &Tensor, b: &Tensor) -> f64 {
    let dot = a.dot(b).expect("equal dims");
    let na = a.norm().max(1e-12);
    let nb = b.norm().max(1e-12);
    dot / (na * nb)
}

/// Whiten `embeddings` by their (uncentered) second moment: project onto
/// the moment eigenbasis and rescale each direction to unit energy.
/// Degenerate directions are floored so the map stays finite.
fn whiten(embeddings: &[Tensor]) -> Vec<Tensor> {
    let n = embeddings.len();
    let d = embeddings[0].numel();
    let mut moment = vec![vec![0.0; d]; d];
    for e in embeddings {
        let data = e.data();
        for i in 0..d {
            for j in i..d {
                moment[i][j] += data[i] * data[j] / n as f64;
            }
        }
    }
    for i in 0..d {
        for j in 0..i {
            moment[i][j] = moment[j][i];
        }
    }
    let (eigvals, eigvecs) = jacobi_eigen(moment);
    let floor = eigvals.iter().cloned().fold(0.0f64, f64::max) * 1e-12 + 1e-12;
    embeddings
        .iter()
        .map(|e| {
            let data = e.data();
            let coords: Vec<f64> = (0..d)
                .map(|k| {
                    let proj: f64 = (0..d).map(|i| eigvecs[i][k] * data[i]).sum();
                    proj / eigvals[k].max(floor).sqrt()
                })
                .collect();
            Tensor::vector(coords)
        })
        .collect()
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns
/// (eigenvalues, column eigenvectors).
fn jacobi_eigen(mut a: Vec<Vec<f64>>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut v = vec![vec![0.0; n]; n];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                off += a[i][j] * a[i][j];
            }
        }
        if off < 1e-20 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-15 {
                    continue;
                }
                let theta = 0.5 * (a[q][q] - a[p][p]) / a[p][q];
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k][p];
                    let vkq = v[k][q];
                    v[k][p] = c * vkp - s * vkq;
                    v[k][q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let eig = (0..n).map(|i| a[i][i]).collect();
    (eig, v)
}

// ---------------------------------------------------------------------------
// Prototype export files
// ---------------------------------------------------------------------------

const PROTOTYPE_MAGIC: &[u8; 4] = b"FOPR";
const PROTOTYPE_VERSION: u32 = 1;

/// Write a prototype export: client id, teacher seed, dimension and the
/// vector values as little-endian 64-bit floats.
pub fn write_prototype(path: &Path, proto: &Prototype, config_hash: &[u8; 32]) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(PROTOTYPE_MAGIC);
    buf.extend_from_slice(&PROTOTYPE_VERSION.to_le_bytes());
    buf.extend_from_slice(config_hash);
    buf.extend_from_slice(&(proto.client.0 as u64).to_le_bytes());
    buf.extend_from_slice(&proto.teacher_seed.to_le_bytes());
    buf.extend_from_slice(&(proto.vector.numel() as u64).to_le_bytes());
    for v in proto.vector.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

/// Read a prototype export, verifying magic, version and (when given) the
/// configuration hash.
pub fn read_prototype(path: &Path, expected_hash: Option<&[u8; 32]>) -> Result<Prototype> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let need = |n: usize, pos: &mut usize| -> Result<Vec<u8>> {
        if *pos + n > bytes.len() {
            return Err(Error::Artifact(format!("{}: truncated file", path.display())));
        }
        let out = bytes[*pos..*pos + n].to_vec();
        *pos += n;
        Ok(out)
    };
    let mut pos = 0usize;
    if need(4, &mut pos)? != PROTOTYPE_MAGIC {
        return Err(Error::Artifact(format!(
            "{}: not a prototype file (bad magic)",
            path.display()
        )));
    }
    let version = u32::from_le_bytes(need(4, &mut pos)?.try_into().unwrap());
    if version != PROTOTYPE_VERSION {
        return Err(Error::Artifact(format!(
            "{}: unsupported prototype version {version}",
            path.display()
        )));
    }
    let hash: [u8; 32] = need(32, &mut pos)?.try_into().unwrap();
    if let Some(expect) = expected_hash {
        if &hash != expect {
            return Err(Error::Artifact(format!(
                "{}: config hash mismatch (file {}, expected {})",
                path.display(),
                hex_string(&hash),
                hex_string(expect)
            )));
        }
    }
    let client = u64::from_le_bytes(need(8, &mut pos)?.try_into().unwrap()) as usize;
    let teacher_seed = u64::from_le_bytes(need(8, &mut pos)?.try_into().unwrap());
    let dim = u64::from_le_bytes(need(8, &mut pos)?.try_into().unwrap()) as usize;
    let mut values = Vec::with_capacity(dim);
    for _ in 0..dim {
        values.push(f64::from_le_bytes(need(8, &mut pos)?.try_into().unwrap()));
    }
    Ok(Prototype {
        client: ClientId(client),
        teacher_seed,
        vector: Tensor::vector(values),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(seed: u64, pool: usize) -> MediatorConfig {
        MediatorConfig {
            seed,
            input_dim: 8,
            hidden_dims: vec![16],
            latent_dim: 32,
            groups: 4,
            pool_size: pool,
        }
    }

    #[test]
    fn registration_is_idempotent() {
        let mut reg = PrototypeRegistry::new(&config(1, 16)).unwrap();
        let a = reg.register_client(ClientId(3)).unwrap();
        let b = reg.register_client(ClientId(3)).unwrap();
        assert_eq!(a.vector, b.vector);
        assert_eq!(reg.issued_count(), 1);
    }

    #[test]
    fn distinct_clients_consume_distinct_pool_samples() {
        let mut reg = PrototypeRegistry::new(&config(2, 16)).unwrap();
        let protos: Vec<Prototype> = (0..6)
            .map(|k| reg.register_client(ClientId(k)).unwrap())
            .collect();
        for i in 0..protos.len() {
            for j in i + 1..protos.len() {
                assert_ne!(protos[i].vector, protos[j].vector);
            }
        }
        assert_eq!(reg.used.iter().filter(|u| **u).count(), 6);
    }

    #[test]
    fn prototypes_reproduce_across_restarts() {
        let make = || {
            let mut reg = PrototypeRegistry::new(&config(3, 16)).unwrap();
            (0..4)
                .map(|k| reg.register_client(ClientId(k)).unwrap().vector)
                .collect::<Vec<_>>()
        };
        assert_eq!(make(), make());
    }

    #[test]
    fn pool_exhaustion_is_capacity_error() {
        let mut reg = PrototypeRegistry::new(&config(4, 2)).unwrap();
        reg.register_client(ClientId(0)).unwrap();
        reg.register_client(ClientId(1)).unwrap();
        assert!(matches!(
            reg.register_client(ClientId(2)),
            Err(Error::Capacity(_))
        ));
    }

    #[test]
    fn issued_prototypes_are_pairwise_separated() {
        // 64 targets at |cos| < 0.5 in 32 dimensions needs an embedding
        // cloud of full effective rank, so the teacher input is wide here.
        for seed in [5u64, 6, 7] {
            let cfg = MediatorConfig {
                seed,
                input_dim: 48,
                hidden_dims: vec![64, 64],
                latent_dim: 32,
                groups: 4,
                pool_size: 512,
            };
            let mut reg = PrototypeRegistry::new(&cfg).unwrap();
            let protos: Vec<Prototype> = (0..64)
                .map(|k| reg.register_client(ClientId(k)).unwrap())
                .collect();
            for i in 0..protos.len() {
                for j in i + 1..protos.len() {
                    let c = cosine(&protos[i].vector, &protos[j].vector);
                    assert!(
                        c.abs() < SEPARATION_LIMIT,
                        "seed {seed}: |cos({i},{j})| = {} >= {SEPARATION_LIMIT}",
                        c.abs()
                    );
                }
            }
        }
    }

    #[test]
    fn benchmark_scale_registration_succeeds_across_seeds() {
        // The end-to-end benchmarks issue 8 prototypes from 16-wide data.
        for seed in 0..10u64 {
            let cfg = MediatorConfig {
                seed,
                input_dim: 16,
                hidden_dims: vec![64, 64],
                latent_dim: 32,
                groups: 8,
                pool_size: 256,
            };
            let mut reg = PrototypeRegistry::new(&cfg).unwrap();
            let protos: Vec<Prototype> = (0..8)
                .map(|k| reg.register_client(ClientId(k)).unwrap())
                .collect();
            for i in 0..protos.len() {
                for j in i + 1..protos.len() {
                    assert!(cosine(&protos[i].vector, &protos[j].vector).abs() < SEPARATION_LIMIT);
                }
            }
        }
    }

    #[test]
    fn mean_pairwise_cosine_degenerate_cases() {
        let v = Tensor::vector(vec![1.0, 1.0]);
        let identical = vec![v.clone(), v.clone(), v];
        assert!((mean_pairwise_cosine(&identical, &identical) - 1.0).abs() < 1e-12);
        let e1 = Tensor::vector(vec![1.0, 0.0]);
        let e2 = Tensor::vector(vec![0.0, 1.0]);
        assert!(mean_pairwise_cosine(&[e1], &[e2]).abs() < 1e-12);
    }

    // Brute-force oracle: self-affinity of the pool is at least its
    // cross-affinity with a disjoint far-away set under the same teacher.
    #[test]
    fn self_affinity_dominates_cross_affinity() {
        let cfg = config(8, 12);
        let reg = PrototypeRegistry::new(&cfg).unwrap();
        let pool_samples = reg.pool.clone();
        let self_affinity = reg.teacher_affinity(&pool_samples).unwrap();
        let far: Vec<Tensor> = pool_samples.iter().map(|s| s.scale(-3.0)).collect();
        let cross_affinity = reg.teacher_affinity(&far).unwrap();
        assert!(
            self_affinity >= cross_affinity,
            "self {self_affinity} < cross {cross_affinity}"
        );
        assert!(reg.teacher_affinity(&[]).is_err());
    }

    #[test]
    fn prototype_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("proto.bin");
        let proto = Prototype {
            client: ClientId(5),
            teacher_seed: 99,
            vector: Tensor::vector(vec![0.25, -1.5, 3.75]),
        };
        let hash = [1u8; 32];
        write_prototype(&path, &proto, &hash).unwrap();
        let back = read_prototype(&path, Some(&hash)).unwrap();
        assert_eq!(back, proto);
        assert!(read_prototype(&path, Some(&[2u8; 32])).is_err());
    }
}
