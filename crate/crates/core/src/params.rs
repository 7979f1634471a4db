//! Flat, ordered parameter vectors: the unit of aggregation, broadcast and
//! checkpointing.
//!
//! A [`Layout`] names every tensor and fixes its shape and order; two
//! parameter vectors are element-wise combinable exactly when their
//! layouts are identical. Checkpoint files store the layout descriptor
//! followed by the values as little-endian 64-bit floats under a
//! versioned header.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Ordered (name, shape) descriptor of a parameter set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    entries: Arc<Vec<(String, Vec<usize>)>>,
}

impl Layout {
    pub fn new(entries: Vec<(String, Vec<usize>)>) -> Self {
        Self {
            entries: Arc::new(entries),
        }
    }

    pub fn entries(&self) -> &[(String, Vec<usize>)] {
        &self.entries
    }

    pub fn total_len(&self) -> usize {
        self.entries
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }
}

/// A parameter set flattened into one contiguous vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    layout: Layout,
    values: Vec<f64>,
}

impl ParamVector {
    pub fn new(layout: Layout, values: Vec<f64>) -> Result<Self> {
        if layout.total_len() != values.len() {
            return Err(Error::LayoutMismatch(format!(
                "layout expects {} values, got {}",
                layout.total_len(),
                values.len()
            )));
        }
        Ok(Self { layout, values })
    }

    /// Flatten tensors in layout order.
    pub fn flatten(layout: Layout, tensors: &[Tensor]) -> Result<Self> {
        if tensors.len() != layout.entries().len() {
            return Err(Error::LayoutMismatch(format!(
                "layout has {} entries, got {} tensors",
                layout.entries().len(),
                tensors.len()
            )));
        }
        let mut values = Vec::with_capacity(layout.total_len());
        for ((name, shape), t) in layout.entries().iter().zip(tensors) {
            if t.shape() != shape.as_slice() {
                return Err(Error::LayoutMismatch(format!(
                    "tensor for '{name}' has shape {:?}, layout expects {:?}",
                    t.shape(),
                    shape
                )));
            }
            values.extend_from_slice(t.data());
        }
        Ok(Self { layout, values })
    }

    /// Rebuild the tensors described by the layout.
    pub fn unflatten(&self) -> Vec<Tensor> {
        let mut out = Vec::with_capacity(self.layout.entries().len());
        let mut off = 0usize;
        for (_, shape) in self.layout.entries() {
            let n: usize = shape.iter().product();
            let t = Tensor::from_shape_vec(shape.clone(), self.values[off..off + n].to_vec())
                .expect("layout shapes are valid");
            out.push(t);
            off += n;
        }
        out
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// SHA-256 of the little-endian value bytes, as lowercase hex.
    pub fn checksum(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for v in &self.values {
            h.update(v.to_le_bytes());
        }
        hex_string(&h.finalize())
    }
}

pub fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

// ---------------------------------------------------------------------------
// Checkpoint files
// ---------------------------------------------------------------------------

const CHECKPOINT_MAGIC: &[u8; 4] = b"FOCK";
const CHECKPOINT_VERSION: u32 = 1;

/// Write a parameter checkpoint. `config_hash` ties the artifact to the
/// run configuration that produced it.
pub fn write_checkpoint(path: &Path, pv: &ParamVector, config_hash: &[u8; 32]) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(config_hash);
    buf.extend_from_slice(&(pv.layout.entries().len() as u32).to_le_bytes());
    for (name, shape) in pv.layout.entries() {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
    }
    buf.extend_from_slice(&(pv.values.len() as u64).to_le_bytes());
    for v in &pv.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

/// Read a checkpoint, verifying magic, version and (when given) the
/// expected configuration hash.
pub fn read_checkpoint(path: &Path, expected_hash: Option<&[u8; 32]>) -> Result<ParamVector> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut r = ByteReader::new(&bytes, path);
    let magic = r.take(4)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::Artifact(format!(
            "{}: not a checkpoint file (bad magic)",
            path.display()
        )));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Artifact(format!(
            "{}: unsupported checkpoint version {version}",
            path.display()
        )));
    }
    let hash: [u8; 32] = r.take(32)?.try_into().unwrap();
    if let Some(expect) = expected_hash {
        if &hash != expect {
            return Err(Error::Artifact(format!(
                "{}: config hash mismatch (checkpoint {}, expected {})",
                path.display(),
                hex_string(&hash),
                hex_string(expect)
            )));
        }
    }
    let entry_count = r.u32()? as usize;
    let mut entries = Vec::with_capacity(entry_count);
    for _ in 0..entry_count {
        let name_len = r.u32()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| Error::Artifact(format!("{}: invalid entry name", path.display())))?;
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64()? as usize);
        }
        entries.push((name, shape));
    }
    let layout = Layout::new(entries);
    let value_count = r.u64()? as usize;
    let mut values = Vec::with_capacity(value_count);
    for _ in 0..value_count {
        values.push(f64::from_le_bytes(r.take(8)?.try_into().unwrap()));
    }
    ParamVector::new(layout, values)
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: String,
}

impl<'a> ByteReader<'a> {
    fn new(bytes: &'a [u8], path: &Path) -> Self {
        Self {
            bytes,
            pos: 0,
            path: path.display().to_string(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Artifact(format!("{}: truncated file", self.path)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
