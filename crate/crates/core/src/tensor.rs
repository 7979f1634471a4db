//! Dense row-major f64 tensors of rank 1 or 2.
//!
//! Tensors are immutable values; every operation allocates a fresh result.
//! Data is shared behind `Arc`, so clones are cheap and tensors can cross
//! threads freely.

use std::sync::Arc;

use crate::error::{Error, Result};

/// A dense real tensor. Rank 1 (`[n]`) and rank 2 (`[rows, cols]`) cover
/// everything the networks in this crate need.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<[f64]>,
}

impl Tensor {
    pub fn from_shape_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(Error::DimensionMismatch(format!(
                "shape {shape:?} has a zero or missing dimension"
            )));
        }
        if numel != data.len() {
            return Err(Error::DimensionMismatch(format!(
                "shape {shape:?} implies {numel} elements, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape,
            data: Arc::from(data),
        })
    }

    /// A rank-1 tensor.
    pub fn vector(data: Vec<f64>) -> Self {
        let n = data.len();
        assert!(n > 0, "vector must be non-empty");
        Self {
            shape: vec![n],
            data: Arc::from(data),
        }
    }

    /// A rank-2 tensor from row-major data.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::from_shape_vec(vec![rows, cols], data)
    }

    /// A single-element tensor of shape `[1]`.
    pub fn scalar(v: f64) -> Self {
        Self::vector(vec![v])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: Arc::from(vec![0.0; numel]),
        }
    }

    pub fn ones(shape: &[usize]) -> Self {
        let numel: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: Arc::from(vec![1.0; numel]),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.numel() != 1 {
            return Err(Error::Contract(format!(
                "item() requires exactly one element, shape is {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Rows and columns of a rank-2 tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        if self.rank() != 2 {
            return Err(Error::DimensionMismatch(format!(
                "expected rank-2 tensor, got shape {:?}",
                self.shape
            )));
        }
        Ok((self.shape[0], self.shape[1]))
    }

    /// Matrix product of two rank-2 tensors.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, ka) = self.dims2()?;
        let (kb, n) = other.dims2()?;
        if ka != kb {
            return Err(Error::DimensionMismatch(format!(
                "matmul inner dimensions differ: {:?} x {:?}",
                self.shape, other.shape
            )));
        }
        let a = &self.data;
        let b = &other.data;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &a[i * ka..(i + 1) * ka];
            let out_row = &mut out[i * n..(i + 1) * n];
            for (k, &aik) in row.iter().enumerate() {
                let b_row = &b[k * n..(k + 1) * n];
                for (o, &bkj) in out_row.iter_mut().zip(b_row.iter()) {
                    *o += aik * bkj;
                }
            }
        }
        Tensor::from_shape_vec(vec![m, n], out)
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (m, n) = self.dims2()?;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Tensor::from_shape_vec(vec![n, m], out)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.map(|v| v * c)
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        self.map(|v| v + c)
    }

    pub fn neg(&self) -> Tensor {
        self.map(|v| -v)
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.broadcast_zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.broadcast_zip(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.broadcast_zip(other, |a, b| a * b)
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        self.broadcast_zip(other, |a, b| a / b)
    }

    pub fn sum_all(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean_all(&self) -> f64 {
        self.sum_all() / self.numel() as f64
    }

    /// Sum along `axis` of a rank-2 tensor, keeping the reduced axis as 1.
    pub fn sum_axis(&self, axis: usize) -> Result<Tensor> {
        let (m, n) = self.dims2()?;
        match axis {
            0 => {
                let mut out = vec![0.0; n];
                for i in 0..m {
                    for j in 0..n {
                        out[j] += self.data[i * n + j];
                    }
                }
                Tensor::from_shape_vec(vec![1, n], out)
            }
            1 => {
                let mut out = vec![0.0; m];
                for i in 0..m {
                    out[i] = self.data[i * n..(i + 1) * n].iter().sum();
                }
                Tensor::from_shape_vec(vec![m, 1], out)
            }
            _ => Err(Error::DimensionMismatch(format!(
                "sum_axis: axis {axis} out of range for rank-2 tensor"
            ))),
        }
    }

    /// Per-row maximum of a rank-2 tensor, shape `[rows, 1]`.
    pub fn row_max(&self) -> Result<Tensor> {
        let (m, n) = self.dims2()?;
        let mut out = vec![f64::NEG_INFINITY; m];
        for i in 0..m {
            for j in 0..n {
                out[i] = out[i].max(self.data[i * n + j]);
            }
        }
        Tensor::from_shape_vec(vec![m, 1], out)
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if numel != self.numel() {
            return Err(Error::DimensionMismatch(format!(
                "reshape {:?} -> {:?} changes element count",
                self.shape, shape
            )));
        }
        Ok(Tensor {
            shape,
            data: self.data.clone(),
        })
    }

    /// Columns of a rank-2 tensor at `idx`, in the given order.
    pub fn select_cols(&self, idx: &[usize]) -> Result<Tensor> {
        let (m, n) = self.dims2()?;
        if let Some(&bad) = idx.iter().find(|&&j| j >= n) {
            return Err(Error::DimensionMismatch(format!(
                "select_cols: column {bad} out of range for {n} columns"
            )));
        }
        let mut out = Vec::with_capacity(m * idx.len());
        for i in 0..m {
            let row = &self.data[i * n..(i + 1) * n];
            out.extend(idx.iter().map(|&j| row[j]));
        }
        Tensor::from_shape_vec(vec![m, idx.len()], out)
    }

    /// Scatter this tensor's columns into a zero tensor of `width` columns
    /// at positions `idx`.
    pub fn scatter_cols(&self, idx: &[usize], width: usize) -> Result<Tensor> {
        let (m, n) = self.dims2()?;
        if n != idx.len() {
            return Err(Error::DimensionMismatch(format!(
                "scatter_cols: {n} columns but {} indices",
                idx.len()
            )));
        }
        let mut out = vec![0.0; m * width];
        for i in 0..m {
            for (c, &j) in idx.iter().enumerate() {
                out[i * width + j] = self.data[i * n + c];
            }
        }
        Tensor::from_shape_vec(vec![m, width], out)
    }

    /// Dot product of two rank-1 tensors.
    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        if self.rank() != 1 || other.rank() != 1 || self.numel() != other.numel() {
            return Err(Error::DimensionMismatch(format!(
                "dot requires equal-length vectors, got {:?} and {:?}",
                self.shape, other.shape
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| a * b)
            .sum())
    }

    /// Euclidean norm.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    fn broadcast_zip(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let out_shape = broadcast_shape(&self.shape, &other.shape)?;
        let numel: usize = out_shape.iter().product();
        let rank = out_shape.len();
        let a_pad = pad_left(&self.shape, rank);
        let b_pad = pad_left(&other.shape, rank);
        let a_strides = broadcast_strides(&a_pad, &out_shape);
        let b_strides = broadcast_strides(&b_pad, &out_shape);
        let mut out = Vec::with_capacity(numel);
        let mut coords = vec![0usize; rank];
        for _ in 0..numel {
            let ai: usize = coords.iter().zip(&a_strides).map(|(c, s)| c * s).sum();
            let bi: usize = coords.iter().zip(&b_strides).map(|(c, s)| c * s).sum();
            out.push(f(self.data[ai], other.data[bi]));
            for d in (0..rank).rev() {
                coords[d] += 1;
                if coords[d] < out_shape[d] {
                    break;
                }
                coords[d] = 0;
            }
        }
        Tensor::from_shape_vec(out_shape, out)
    }
}

/// Right-aligned broadcast result shape, or an error when incompatible.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let a = pad_left(a, rank);
    let b = pad_left(b, rank);
    let mut out = vec![0usize; rank];
    for d in 0..rank {
        out[d] = match (a[d], b[d]) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            (x, y) => {
                return Err(Error::DimensionMismatch(format!(
                    "cannot broadcast {x} against {y} in dimension {d}"
                )))
            }
        };
    }
    Ok(out)
}

/// Reduce `grad` (of `from` shape) back to `to` shape by summing the
/// broadcast dimensions. Inverse of broadcasting for gradient flow.
pub fn reduce_to_shape(grad: &Tensor, to: &[usize]) -> Result<Tensor> {
    if grad.shape() == to {
        return Ok(grad.clone());
    }
    let rank = grad.rank();
    let to_pad = pad_left(to, rank);
    let to_numel: usize = to.iter().product();
    let mut out = vec![0.0; to_numel];
    let strides = broadcast_strides(&to_pad, grad.shape());
    let mut coords = vec![0usize; rank];
    for g in grad.data() {
        let ti: usize = coords.iter().zip(&strides).map(|(c, s)| c * s).sum();
        out[ti] += g;
        for d in (0..rank).rev() {
            coords[d] += 1;
            if coords[d] < grad.shape()[d] {
                break;
            }
            coords[d] = 0;
        }
    }
    Tensor::from_shape_vec(to.to_vec(), out)
}

fn pad_left(shape: &[usize], rank: usize) -> Vec<usize> {
    let mut p = vec![1usize; rank];
    p[rank - shape.len()..].copy_from_slice(shape);
    p
}

/// Element strides for indexing `shape` as if broadcast to `out_shape`
/// (stride 0 along broadcast dimensions).
fn broadcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let rank = shape.len();
    let mut strides = vec![0usize; rank];
    let mut acc = 1usize;
    for d in (0..rank).rev() {
        if shape[d] == out_shape[d] {
            strides[d] = acc;
        } else {
            strides[d] = 0; // broadcast
        }
        acc *= shape[d];
    }
    strides
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Naive triple-loop product, the independent oracle for matmul.
    fn matmul_oracle(a: &Tensor, b: &Tensor) -> Tensor {
        let (m, k) = a.dims2().unwrap();
        let (_, n) = b.dims2().unwrap();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..k {
                    s += a.data()[i * k + p] * b.data()[p * n + j];
                }
                out[i * n + j] = s;
            }
        }
        Tensor::from_shape_vec(vec![m, n], out).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let i2 = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let a = Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(i2.matmul(&a).unwrap(), a);
    }

    #[test]
    fn matmul_projector() {
        let p = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let a = Tensor::matrix(2, 2, vec![5.0, 6.0, 7.0, 8.0]).unwrap();
        let out = p.matmul(&a).unwrap();
        assert_eq!(out.data(), &[5.0, 6.0, 0.0, 0.0]);
    }

    #[test]
    fn matmul_matches_triple_loop_oracle() {
        use rand::Rng;
        let mut rng = crate::rng::RngFactory::new(11).stream("matmul-oracle");
        let a = Tensor::matrix(3, 4, (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let b = Tensor::matrix(4, 2, (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let fast = a.matmul(&b).unwrap();
        let slow = matmul_oracle(&a, &b);
        for (x, y) in fast.data().iter().zip(slow.data()) {
            assert!((x - y).abs() < 1e-12, "matmul deviates from oracle");
        }
    }

    #[test]
    fn matmul_shape_mismatch_is_error() {
        let a = Tensor::matrix(2, 3, vec![0.0; 6]).unwrap();
        let b = Tensor::matrix(2, 2, vec![0.0; 4]).unwrap();
        assert!(matches!(
            a.matmul(&b),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn broadcast_row_and_col() {
        let m = Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let row = Tensor::matrix(1, 3, vec![10.0, 20.0, 30.0]).unwrap();
        let col = Tensor::matrix(2, 1, vec![100.0, 200.0]).unwrap();
        assert_eq!(
            m.add(&row).unwrap().data(),
            &[11.0, 22.0, 33.0, 14.0, 25.0, 36.0]
        );
        assert_eq!(
            m.add(&col).unwrap().data(),
            &[101.0, 102.0, 103.0, 204.0, 205.0, 206.0]
        );
    }

    #[test]
    fn broadcast_incompatible_is_error() {
        let a = Tensor::matrix(2, 3, vec![0.0; 6]).unwrap();
        let b = Tensor::matrix(2, 2, vec![0.0; 4]).unwrap();
        assert!(a.add(&b).is_err());
    }

    #[test]
    fn reduce_to_shape_sums_broadcast_dims() {
        let g = Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let r = reduce_to_shape(&g, &[1, 3]).unwrap();
        assert_eq!(r.data(), &[5.0, 7.0, 9.0]);
        let c = reduce_to_shape(&g, &[2, 1]).unwrap();
        assert_eq!(c.data(), &[6.0, 15.0]);
    }

    #[test]
    fn select_and_scatter_cols_round_trip() {
        let m = Tensor::matrix(2, 4, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]).unwrap();
        let even = m.select_cols(&[0, 2]).unwrap();
        assert_eq!(even.data(), &[1.0, 3.0, 5.0, 7.0]);
        let back = even.scatter_cols(&[0, 2], 4).unwrap();
        assert_eq!(back.data(), &[1.0, 0.0, 3.0, 0.0, 5.0, 0.0, 7.0, 0.0]);
    }

    #[test]
    fn sum_axis_and_row_max() {
        let m = Tensor::matrix(2, 3, vec![1.0, 5.0, 3.0, 4.0, 2.0, 6.0]).unwrap();
        assert_eq!(m.sum_axis(0).unwrap().data(), &[5.0, 7.0, 9.0]);
        assert_eq!(m.sum_axis(1).unwrap().data(), &[9.0, 12.0]);
        assert_eq!(m.row_max().unwrap().data(), &[5.0, 6.0]);
    }

    #[test]
    fn shape_data_disagreement_is_error() {
        assert!(Tensor::from_shape_vec(vec![2, 2], vec![0.0; 3]).is_err());
    }
}
