//! Data ingestion and the extreme non-i.i.d. partitioner.
//!
//! Every client holds the training samples of exactly one class; shards
//! are pairwise disjoint and their union is the training set. Sources:
//! seeded synthetic Gaussian blobs, delimited-text tabular files (with a
//! persisted min-max scaler fit on the training split only) and
//! big-endian IDX image files.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::encoder::standard_normal;
use crate::error::{Error, Result};
use crate::rng::RngFactory;
use crate::tensor::Tensor;
use crate::ClientId;

/// Labeled samples with a train/test split.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    pub train: Vec<(Tensor, usize)>,
    pub test: Vec<(Tensor, usize)>,
    pub class_count: usize,
}

impl LabeledDataset {
    pub fn feature_dim(&self) -> usize {
        self.train
            .first()
            .or(self.test.first())
            .map(|(t, _)| t.numel())
            .unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_count < 2 {
            return Err(Error::Contract(
                "one-vs-rest evaluation needs at least 2 classes".into(),
            ));
        }
        for (t, label) in self.train.iter().chain(&self.test) {
            if *label >= self.class_count {
                return Err(Error::Contract(format!(
                    "label {label} outside [0, {})",
                    self.class_count
                )));
            }
            if !t.is_finite() {
                return Err(Error::NonFinite("dataset contains non-finite features".into()));
            }
        }
        Ok(())
    }
}

/// One client's private training shard: samples of a single class.
#[derive(Debug, Clone)]
pub struct ClientShard {
    pub client: ClientId,
    pub label: usize,
    pub samples: Vec<Tensor>,
}

impl ClientShard {
    pub fn cardinality(&self) -> usize {
        self.samples.len()
    }
}

/// Group the training set by class: shard `k` holds exactly the training
/// samples of class `k`. Requires `clients == class_count`.
pub fn partition_extreme(dataset: &LabeledDataset, clients: usize) -> Result<Vec<ClientShard>> {
    if clients != dataset.class_count {
        return Err(Error::Config(vec![format!(
            "extreme partitioning requires clients ({clients}) == classes ({})",
            dataset.class_count
        )]));
    }
    let mut shards: Vec<ClientShard> = (0..clients)
        .map(|k| ClientShard {
            client: ClientId(k),
            label: k,
            samples: Vec::new(),
        })
        .collect();
    for (sample, label) in &dataset.train {
        shards[*label].samples.push(sample.clone());
    }
    Ok(shards)
}

/// Seeded Gaussian blobs: `classes` unit-covariance clusters whose means
/// sit at pairwise distance exactly `separation` (scaled orthonormal
/// directions), split 80/20 per class into train and test.
pub fn gen_synthetic_blobs(
    classes: usize,
    per_class: usize,
    dim: usize,
    separation: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if classes < 2 || per_class < 2 || dim == 0 {
        return Err(Error::Config(vec![format!(
            "blobs need >= 2 classes, >= 2 samples per class and positive dim \
             (got {classes}, {per_class}, {dim})"
        )]));
    }
    if !(separation > 0.0) {
        return Err(Error::Config(vec!["blob separation must be positive".into()]));
    }
    if classes > dim {
        return Err(Error::Config(vec![format!(
            "infeasible separation geometry: {classes} classes need dim >= {classes}, got {dim}"
        )]));
    }
    let factory = RngFactory::new(seed);
    let mut mean_rng = factory.stream("blobs/means");
    // random orthonormal directions via Gram-Schmidt on gaussian draws
    let mut means: Vec<Vec<f64>> = Vec::with_capacity(classes);
    for _ in 0..classes {
        let mut tries = 0;
        loop {
            let mut v: Vec<f64> = (0..dim).map(|_| standard_normal(&mut mean_rng)).collect();
            for prev in &means {
                let proj: f64 = v.iter().zip(prev).map(|(a, b)| a * b).sum();
                for (vi, pi) in v.iter_mut().zip(prev) {
                    *vi -= proj * pi;
                }
            }
            let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-6 {
                for vi in v.iter_mut() {
                    *vi /= norm;
                }
                means.push(v);
                break;
            }
            tries += 1;
            if tries > 100 {
                return Err(Error::Config(vec![
                    "infeasible separation/dim combination: orthonormalization failed".into(),
                ]));
            }
        }
    }
    // orthonormal means scaled by separation / sqrt(2) sit at pairwise
    // distance exactly `separation`
    let scale = separation / std::f64::consts::SQRT_2;
    let mut sample_rng = factory.stream("blobs/samples");
    let mut train = Vec::new();
    let mut test = Vec::new();
    let train_n = (per_class * 4) / 5;
    for (label, mean) in means.iter().enumerate() {
        for i in 0..per_class {
            let features: Vec<f64> = mean
                .iter()
                .map(|m| m * scale + standard_normal(&mut sample_rng))
                .collect();
            let sample = (Tensor::vector(features), label);
            if i < train_n {
                train.push(sample);
            } else {
                test.push(sample);
            }
        }
    }
    Ok(LabeledDataset {
        train,
        test,
        class_count: classes,
    })
}

// ---------------------------------------------------------------------------
// Min-max scaler
// ---------------------------------------------------------------------------

/// Per-feature min-max scaler fit on the training split only. Constant
/// features map to 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Scaler {
    mins: Vec<f64>,
    maxs: Vec<f64>,
}

impl Scaler {
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyInput("scaler fit on no rows".into()));
        }
        let d = rows[0].len();
        let mut mins = vec![f64::INFINITY; d];
        let mut maxs = vec![f64::NEG_INFINITY; d];
        for row in rows {
            for ((v, lo), hi) in row.iter().zip(mins.iter_mut()).zip(maxs.iter_mut()) {
                *lo = lo.min(*v);
                *hi = hi.max(*v);
            }
        }
        Ok(Self { mins, maxs })
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(&self.mins)
            .zip(&self.maxs)
            .map(|((v, lo), hi)| {
                let range = hi - lo;
                if range > 0.0 {
                    (v - lo) / range
                } else {
                    0.0
                }
            })
            .collect()
    }

    /// Persist as delimited text: one `index,min,max` line per feature.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::from("# min-max scaler v1\n");
        for (i, (lo, hi)) in self.mins.iter().zip(&self.maxs).enumerate() {
            out.push_str(&format!("{i},{lo:e},{hi:e}\n"));
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut mins = Vec::new();
        let mut maxs = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 3 {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line: lineno + 1,
                    message: "expected index,min,max".into(),
                });
            }
            let lo: f64 = parts[1].parse().map_err(|_| Error::Parse {
                path: path.display().to_string(),
                line: lineno + 1,
                message: format!("bad min '{}'", parts[1]),
            })?;
            let hi: f64 = parts[2].parse().map_err(|_| Error::Parse {
                path: path.display().to_string(),
                line: lineno + 1,
                message: format!("bad max '{}'", parts[2]),
            })?;
            mins.push(lo);
            maxs.push(hi);
        }
        if mins.is_empty() {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: 0,
                message: "scaler file holds no features".into(),
            });
        }
        Ok(Self { mins, maxs })
    }
}

// ---------------------------------------------------------------------------
// Tabular loader
// ---------------------------------------------------------------------------

/// Load a comma-delimited text file with a header row. The `label_column`
/// holds class labels (mapped to ids by sorted order); every other column
/// is parsed as a real feature. Features are min-max scaled to [0, 1]
/// with the scaler fit on the seeded 80/20 per-class training split.
pub fn load_tabular(
    path: &Path,
    label_column: &str,
    split_seed: u64,
) -> Result<(LabeledDataset, Scaler)> {
    let text = std::fs::read_to_string(path)?;
    let display = path.display().to_string();
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::Parse {
        path: display.clone(),
        line: 1,
        message: "empty file, expected a header row".into(),
    })?;
    let columns: Vec<&str> = header.split(',').map(str::trim).collect();
    let label_idx = columns
        .iter()
        .position(|c| *c == label_column)
        .ok_or_else(|| Error::Parse {
            path: display.clone(),
            line: 1,
            message: format!("label column '{label_column}' not in header {columns:?}"),
        })?;
    let mut raw_rows: Vec<(Vec<f64>, String)> = Vec::new();
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != columns.len() {
            return Err(Error::Parse {
                path: display.clone(),
                line: lineno + 1,
                message: format!(
                    "row has {} fields, header has {}",
                    fields.len(),
                    columns.len()
                ),
            });
        }
        let mut features = Vec::with_capacity(columns.len() - 1);
        for (ci, field) in fields.iter().enumerate() {
            if ci == label_idx {
                continue;
            }
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                path: display.clone(),
                line: lineno + 1,
                message: format!("cannot parse feature '{}' in column '{}'", field, columns[ci]),
            })?;
            features.push(v);
        }
        let label_text = fields[label_idx].to_string();
        if label_text.is_empty() {
            return Err(Error::Parse {
                path: display.clone(),
                line: lineno + 1,
                message: "empty label".into(),
            });
        }
        raw_rows.push((features, label_text));
    }
    if raw_rows.is_empty() {
        return Err(Error::Parse {
            path: display,
            line: 1,
            message: "no data rows".into(),
        });
    }
    // deterministic label ids: sorted unique label strings
    let mut names: Vec<String> = raw_rows.iter().map(|(_, l)| l.clone()).collect();
    names.sort();
    names.dedup();
    let label_map: BTreeMap<String, usize> =
        names.into_iter().enumerate().map(|(i, n)| (n, i)).collect();
    let class_count = label_map.len();

    // per-class seeded 80/20 split
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, (_, l)) in raw_rows.iter().enumerate() {
        by_class.entry(label_map[l]).or_default().push(i);
    }
    let factory = RngFactory::new(split_seed);
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    for (label, mut idx) in by_class {
        let mut rng = factory.stream(&format!("split/{label}"));
        idx.shuffle(&mut rng);
        let train_n = (idx.len() * 4) / 5;
        train_idx.extend(idx[..train_n].iter().copied());
        test_idx.extend(idx[train_n..].iter().copied());
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();

    let train_rows: Vec<Vec<f64>> = train_idx.iter().map(|&i| raw_rows[i].0.clone()).collect();
    let scaler = Scaler::fit(&train_rows)?;
    let to_sample = |i: usize| -> (Tensor, usize) {
        let (features, label_text) = &raw_rows[i];
        (
            Tensor::vector(scaler.apply(features)),
            label_map[label_text],
        )
    };
    Ok((
        LabeledDataset {
            train: train_idx.into_iter().map(to_sample).collect(),
            test: test_idx.into_iter().map(to_sample).collect(),
            class_count,
        },
        scaler,
    ))
}

// ---------------------------------------------------------------------------
// IDX image loader
// ---------------------------------------------------------------------------

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Load one IDX image/label file pair (big-endian headers, u8 payloads).
/// Pixels are flattened row-major and scaled to [0, 1]; all samples land
/// in `train` — combine two loads with [`with_native_split`].
pub fn load_idx_images(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset> {
    let images = read_all(images_path)?;
    let labels = read_all(labels_path)?;
    let img_disp = images_path.display().to_string();
    let lbl_disp = labels_path.display().to_string();

    let (magic, rest) = split_u32(&images, &img_disp, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Parse {
            path: img_disp,
            line: 0,
            message: format!("bad image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"),
        });
    }
    let (count, rest) = split_u32(rest, &img_disp, 4)?;
    let (rows, rest) = split_u32(rest, &img_disp, 8)?;
    let (cols, pixels) = split_u32(rest, &img_disp, 12)?;
    let expected = count as usize * rows as usize * cols as usize;
    if pixels.len() != expected {
        return Err(Error::Parse {
            path: img_disp,
            line: 0,
            message: format!(
                "payload holds {} bytes, header implies {expected}",
                pixels.len()
            ),
        });
    }

    let (lmagic, lrest) = split_u32(&labels, &lbl_disp, 0)?;
    if lmagic != IDX_LABELS_MAGIC {
        return Err(Error::Parse {
            path: lbl_disp,
            line: 0,
            message: format!("bad label magic {lmagic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"),
        });
    }
    let (lcount, label_bytes) = split_u32(lrest, &lbl_disp, 4)?;
    if lcount != count || label_bytes.len() != count as usize {
        return Err(Error::Parse {
            path: lbl_disp,
            line: 0,
            message: format!("{lcount} labels for {count} images"),
        });
    }

    let dim = rows as usize * cols as usize;
    let mut train = Vec::with_capacity(count as usize);
    let mut max_label = 0usize;
    for i in 0..count as usize {
        let base = i * dim;
        let features: Vec<f64> = pixels[base..base + dim]
            .iter()
            .map(|&b| b as f64 / 255.0)
            .collect();
        let label = label_bytes[i] as usize;
        max_label = max_label.max(label);
        train.push((Tensor::vector(features), label));
    }
    Ok(LabeledDataset {
        train,
        test: Vec::new(),
        class_count: max_label + 1,
    })
}

/// Combine natively split loads into one dataset.
pub fn with_native_split(train: LabeledDataset, test: LabeledDataset) -> LabeledDataset {
    let class_count = train.class_count.max(test.class_count);
    LabeledDataset {
        train: train.train,
        test: test.train,
        class_count,
    }
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    Ok(bytes)
}

fn split_u32<'a>(bytes: &'a [u8], path: &str, offset: usize) -> Result<(u32, &'a [u8])> {
    if bytes.len() < 4 {
        return Err(Error::Parse {
            path: path.to_string(),
            line: offset,
            message: "truncated header".into(),
        });
    }
    let v = u32::from_be_bytes(bytes[..4].try_into().unwrap());
    Ok((v, &bytes[4..]))
}

/// Uniformly sample `count` distinct ids from `0..n` (client selection).
pub fn sample_without_replacement(
    n: usize,
    count: usize,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Vec<usize> {
    debug_assert!(count <= n);
    let mut ids: Vec<usize> = (0..n).collect();
    for i in 0..count {
        let j = rng.gen_range(i..n);
        ids.swap(i, j);
    }
    let mut chosen = ids[..count].to_vec();
    chosen.sort_unstable();
    chosen
}
