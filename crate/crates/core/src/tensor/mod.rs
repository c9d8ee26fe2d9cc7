//! Dense N-dimensional tensors and the unfold/fold/mode-product algebra.
//!
//! All data is stored column-major: the first index varies fastest. Every
//! unfolding in this crate enumerates its row and column multi-indices with
//! the same rule (first listed mode fastest), so a matrix produced by
//! [`DenseTensor::permuted_unfold`] is just a relabelled view of the
//! permuted tensor's linear storage.

mod fctn;

pub use fctn::{compose_excluding, fctn_compose, fctn_element, kron_diag, FactorSet, FctnRanks, RANK_PAIRS};

use ndarray::{Array2, ShapeBuilder};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("mode {mode} out of range for a tensor of order {order}")]
    ModeOutOfRange { mode: usize, order: usize },
    #[error("shape entries must be >= 1, got {0:?}")]
    InvalidShape(Vec<usize>),
    #[error("data length {actual} does not match shape product {expected}")]
    DataLength { expected: usize, actual: usize },
    #[error("row/column modes {rows:?} / {cols:?} are not a permutation of 0..{order}")]
    InvalidModes {
        rows: Vec<usize>,
        cols: Vec<usize>,
        order: usize,
    },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("rank mismatch: {0}")]
    RankMismatch(String),
    #[error("index {index:?} out of range for shape {shape:?}")]
    IndexOutOfRange { index: Vec<usize>, shape: Vec<usize> },
    #[error("rank entries must be >= 1: {0}")]
    InvalidRanks(String),
}

/// N-dimensional real array, column-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(TensorError::InvalidShape(shape));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::DataLength {
                expected,
                actual: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self, TensorError> {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f64) -> Result<Self, TensorError> {
        let len = shape.iter().product();
        Self::new(shape.to_vec(), vec![value; len])
    }

    /// Builds a tensor by evaluating `f` at every multi-index, in storage order.
    pub fn from_fn<F>(shape: &[usize], mut f: F) -> Result<Self, TensorError>
    where
        F: FnMut(&[usize]) -> f64,
    {
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        let mut idx = vec![0usize; shape.len()];
        for _ in 0..len {
            data.push(f(&idx));
            increment(&mut idx, shape);
        }
        Self::new(shape.to_vec(), data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn order(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn offset(&self, index: &[usize]) -> Result<usize, TensorError> {
        if index.len() != self.shape.len() || index.iter().zip(&self.shape).any(|(i, d)| i >= d) {
            return Err(TensorError::IndexOutOfRange {
                index: index.to_vec(),
                shape: self.shape.clone(),
            });
        }
        let mut off = 0;
        let mut stride = 1;
        for (i, d) in index.iter().zip(&self.shape) {
            off += i * stride;
            stride *= d;
        }
        Ok(off)
    }

    pub fn get(&self, index: &[usize]) -> Result<f64, TensorError> {
        Ok(self.data[self.offset(index)?])
    }

    pub fn set(&mut self, index: &[usize], value: f64) -> Result<(), TensorError> {
        let off = self.offset(index)?;
        self.data[off] = value;
        Ok(())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Squared Frobenius distance to `other`.
    pub fn sq_distance(&self, other: &DenseTensor) -> Result<f64, TensorError> {
        self.check_same_shape(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| (a - b) * (a - b)).sum())
    }

    pub fn check_same_shape(&self, other: &DenseTensor) -> Result<(), TensorError> {
        if self.shape != other.shape {
            return Err(TensorError::DimensionMismatch(format!(
                "{:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    pub fn map<F: Fn(f64) -> f64>(&self, f: F) -> DenseTensor {
        DenseTensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, alpha: f64) -> DenseTensor {
        self.map(|v| alpha * v)
    }

    /// Reorders modes so that output mode `k` is input mode `perm[k]`.
    pub fn permute(&self, perm: &[usize]) -> Result<DenseTensor, TensorError> {
        let order = self.order();
        if !is_permutation(perm, order) {
            return Err(TensorError::InvalidModes {
                rows: perm.to_vec(),
                cols: vec![],
                order,
            });
        }
        if perm.iter().enumerate().all(|(k, &p)| k == p) {
            return Ok(self.clone());
        }
        let in_strides = strides(&self.shape);
        let out_shape: Vec<usize> = perm.iter().map(|&p| self.shape[p]).collect();
        let step: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
        let mut data = Vec::with_capacity(self.data.len());
        let mut idx = vec![0usize; order];
        let mut src = 0usize;
        for _ in 0..self.data.len() {
            data.push(self.data[src]);
            // odometer over the output index, tracking the source offset
            for k in 0..order {
                idx[k] += 1;
                src += step[k];
                if idx[k] < out_shape[k] {
                    break;
                }
                src -= step[k] * out_shape[k];
                idx[k] = 0;
            }
        }
        Ok(DenseTensor { shape: out_shape, data })
    }

    /// Mode-`mode` unfolding (0-based): rows index `mode`, columns enumerate
    /// the remaining modes in ascending order, first remaining mode fastest.
    pub fn unfold(&self, mode: usize) -> Result<Array2<f64>, TensorError> {
        self.check_mode(mode)?;
        let cols: Vec<usize> = (0..self.order()).filter(|&m| m != mode).collect();
        self.permuted_unfold(&[mode], &cols)
    }

    /// Generalised unfolding. Rows enumerate `row_modes` (first listed
    /// fastest), columns enumerate `col_modes` likewise.
    pub fn permuted_unfold(&self, row_modes: &[usize], col_modes: &[usize]) -> Result<Array2<f64>, TensorError> {
        let perm: Vec<usize> = row_modes.iter().chain(col_modes).copied().collect();
        if !is_permutation(&perm, self.order()) {
            return Err(TensorError::InvalidModes {
                rows: row_modes.to_vec(),
                cols: col_modes.to_vec(),
                order: self.order(),
            });
        }
        let rows: usize = row_modes.iter().map(|&m| self.shape[m]).product();
        let cols: usize = col_modes.iter().map(|&m| self.shape[m]).product();
        let permuted = self.permute(&perm)?;
        Ok(Array2::from_shape_vec((rows, cols).f(), permuted.data).expect("permuted data length equals rows * cols"))
    }

    /// Inverse of [`DenseTensor::unfold`].
    pub fn fold(mat: &Array2<f64>, mode: usize, shape: &[usize]) -> Result<DenseTensor, TensorError> {
        if mode >= shape.len() {
            return Err(TensorError::ModeOutOfRange {
                mode,
                order: shape.len(),
            });
        }
        let cols: Vec<usize> = (0..shape.len()).filter(|&m| m != mode).collect();
        Self::fold_permuted(mat, &[mode], &cols, shape)
    }

    /// Inverse of [`DenseTensor::permuted_unfold`].
    pub fn fold_permuted(
        mat: &Array2<f64>,
        row_modes: &[usize],
        col_modes: &[usize],
        shape: &[usize],
    ) -> Result<DenseTensor, TensorError> {
        let perm: Vec<usize> = row_modes.iter().chain(col_modes).copied().collect();
        if !is_permutation(&perm, shape.len()) {
            return Err(TensorError::InvalidModes {
                rows: row_modes.to_vec(),
                cols: col_modes.to_vec(),
                order: shape.len(),
            });
        }
        let rows: usize = row_modes.iter().map(|&m| shape[m]).product();
        let cols: usize = col_modes.iter().map(|&m| shape[m]).product();
        if mat.dim() != (rows, cols) {
            return Err(TensorError::DimensionMismatch(format!(
                "matrix is {:?}, expected ({rows}, {cols}) for shape {shape:?}",
                mat.dim()
            )));
        }
        let permuted_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
        let permuted = DenseTensor::new(permuted_shape, matrix_to_col_major(mat))?;
        let mut inverse = vec![0usize; perm.len()];
        for (k, &p) in perm.iter().enumerate() {
            inverse[p] = k;
        }
        permuted.permute(&inverse)
    }

    /// `self ×_mode p`: replaces dimension `mode` by the row count of `p`.
    pub fn mode_product(&self, p: &Array2<f64>, mode: usize) -> Result<DenseTensor, TensorError> {
        self.check_mode(mode)?;
        if p.ncols() != self.shape[mode] {
            return Err(TensorError::DimensionMismatch(format!(
                "operator has {} columns but mode {mode} has size {}",
                p.ncols(),
                self.shape[mode]
            )));
        }
        let unfolded = self.unfold(mode)?;
        let product = p.dot(&unfolded);
        let mut shape = self.shape.clone();
        shape[mode] = p.nrows();
        DenseTensor::fold(&product, mode, &shape)
    }

    fn check_mode(&self, mode: usize) -> Result<(), TensorError> {
        if mode >= self.order() {
            return Err(TensorError::ModeOutOfRange {
                mode,
                order: self.order(),
            });
        }
        Ok(())
    }
}

/// Column-major linearisation of a matrix.
pub(crate) fn matrix_to_col_major(mat: &Array2<f64>) -> Vec<f64> {
    mat.t().iter().copied().collect()
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = Vec::with_capacity(shape.len());
    let mut acc = 1;
    for &d in shape {
        s.push(acc);
        acc *= d;
    }
    s
}

fn increment(idx: &mut [usize], shape: &[usize]) {
    for (i, &d) in idx.iter_mut().zip(shape) {
        *i += 1;
        if *i < d {
            return;
        }
        *i = 0;
    }
}

fn is_permutation(perm: &[usize], order: usize) -> bool {
    if perm.len() != order {
        return false;
    }
    let mut seen = vec![false; order];
    for &p in perm {
        if p >= order || seen[p] {
            return false;
        }
        seen[p] = true;
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(shape: &[usize], seed: u64) -> DenseTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DenseTensor::from_fn(shape, |_| rng.random_range(-1.0..1.0)).unwrap()
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(DenseTensor::new(vec![2, 0], vec![]).is_err());
        assert!(DenseTensor::new(vec![2, 2], vec![0.0; 3]).is_err());
    }

    #[test]
    fn zero_tensor_unfolds_to_zero_matrix() {
        let t = DenseTensor::zeros(&[2, 3, 4]).unwrap();
        let m = t.unfold(0).unwrap();
        assert_eq!(m.dim(), (2, 12));
        assert!(m.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unfold_matches_index_bijection() {
        // t(i,j,k) = i + 10 j + 100 k on a 2x3x4 tensor, unfolded at the
        // second mode: column index = i + 2 k.
        let t = DenseTensor::from_fn(&[2, 3, 4], |ix| (ix[0] + 10 * ix[1] + 100 * ix[2]) as f64).unwrap();
        let m = t.unfold(1).unwrap();
        assert_eq!(m.dim(), (3, 8));
        for i in 0..2 {
            for j in 0..3 {
                for k in 0..4 {
                    assert_eq!(m[(j, i + 2 * k)], (i + 10 * j + 100 * k) as f64);
                }
            }
        }
    }

    #[test]
    fn fold_inverts_unfold_on_every_mode() {
        let t = random_tensor(&[3, 3, 3, 3], 7);
        for n in 0..4 {
            let back = DenseTensor::fold(&t.unfold(n).unwrap(), n, t.shape()).unwrap();
            assert_eq!(back, t);
        }
    }

    #[test]
    fn unfold_rejects_bad_mode() {
        let t = DenseTensor::zeros(&[2, 2]).unwrap();
        assert!(matches!(t.unfold(2), Err(TensorError::ModeOutOfRange { .. })));
    }

    #[test]
    fn permuted_unfold_reduces_to_standard_unfold() {
        let t = random_tensor(&[2, 3, 4], 1);
        assert_eq!(t.permuted_unfold(&[0], &[1, 2]).unwrap(), t.unfold(0).unwrap());
    }

    #[test]
    fn permuted_unfold_swap_is_transpose() {
        let t = random_tensor(&[2, 3, 2, 2], 2);
        let a = t.permuted_unfold(&[2, 0], &[3, 1]).unwrap();
        let b = t.permuted_unfold(&[3, 1], &[2, 0]).unwrap();
        assert_eq!(a.t(), b);
    }

    #[test]
    fn permuted_unfold_exhaustive_2x2x2x2() {
        let t = random_tensor(&[2, 2, 2, 2], 3);
        let m = t.permuted_unfold(&[3, 1], &[0, 2]).unwrap();
        for a in 0..2 {
            for b in 0..2 {
                for c in 0..2 {
                    for d in 0..2 {
                        let row = d + 2 * b;
                        let col = a + 2 * c;
                        assert_eq!(m[(row, col)], t.get(&[a, b, c, d]).unwrap());
                    }
                }
            }
        }
        let back = DenseTensor::fold_permuted(&m, &[3, 1], &[0, 2], t.shape()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn permuted_unfold_rejects_duplicates() {
        let t = random_tensor(&[2, 2, 2], 4);
        assert!(t.permuted_unfold(&[0, 0], &[1]).is_err());
        assert!(t.permuted_unfold(&[0], &[1]).is_err());
    }

    #[test]
    fn mode_product_identity_and_sum() {
        let t = random_tensor(&[3, 4, 2], 5);
        let eye = Array2::<f64>::eye(4);
        assert_eq!(t.mode_product(&eye, 1).unwrap(), t);

        let ones = Array2::<f64>::ones((1, 4));
        let s = t.mode_product(&ones, 1).unwrap();
        assert_eq!(s.shape(), &[3, 1, 2]);
        for i in 0..3 {
            for k in 0..2 {
                let direct: f64 = (0..4).map(|j| t.get(&[i, j, k]).unwrap()).sum();
                assert!((s.get(&[i, 0, k]).unwrap() - direct).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn mode_product_dimension_mismatch() {
        let t = random_tensor(&[3, 4], 6);
        let p = Array2::<f64>::zeros((2, 3));
        assert!(matches!(t.mode_product(&p, 1), Err(TensorError::DimensionMismatch(_))));
    }
}
