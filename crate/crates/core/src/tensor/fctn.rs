//! Fourth-order fully-connected tensor network (FCTN) factors and contraction.
//!
//! Factor `n` (0-based) has its physical mode at position `n`; every other
//! position `j` holds the bond shared with factor `j`. So factor 0 is
//! `I1 x R12 x R13 x R14` and factor 2 is `R13 x R23 x I3 x R34`.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{DenseTensor, TensorError};

/// Bond pairs in storage order: (1,2), (1,3), (1,4), (2,3), (2,4), (3,4),
/// written 0-based.
pub const RANK_PAIRS: [(usize, usize); 6] = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];

/// FCTN ranks `(R12, R13, R14, R23, R24, R34)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct FctnRanks {
    pub r12: usize,
    pub r13: usize,
    pub r14: usize,
    pub r23: usize,
    pub r24: usize,
    pub r34: usize,
}

impl FctnRanks {
    pub fn new(values: [usize; 6]) -> Result<Self, TensorError> {
        if values.contains(&0) {
            return Err(TensorError::InvalidRanks(format!("{values:?}")));
        }
        let [r12, r13, r14, r23, r24, r34] = values;
        Ok(Self {
            r12,
            r13,
            r14,
            r23,
            r24,
            r34,
        })
    }

    pub fn uniform(r: usize) -> Result<Self, TensorError> {
        Self::new([r; 6])
    }

    pub fn as_array(&self) -> [usize; 6] {
        [self.r12, self.r13, self.r14, self.r23, self.r24, self.r34]
    }

    /// Position of the unordered pair `{a, b}` in [`RANK_PAIRS`].
    pub fn pair_index(a: usize, b: usize) -> usize {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        RANK_PAIRS
            .iter()
            .position(|&p| p == (lo, hi))
            .unwrap_or_else(|| panic!("no bond between modes {a} and {b}"))
    }

    /// Bond dimension between factors `a` and `b` (0-based, `a != b`).
    pub fn get(&self, a: usize, b: usize) -> usize {
        self.as_array()[Self::pair_index(a, b)]
    }

    /// Shape of factor `n` for physical size `dim`.
    pub fn factor_shape(&self, n: usize, dim: usize) -> [usize; 4] {
        let mut s = [0; 4];
        for (j, slot) in s.iter_mut().enumerate() {
            *slot = if j == n { dim } else { self.get(n, j) };
        }
        s
    }

    /// Product of the bond dimensions attached to factor `n`.
    pub fn bond_product(&self, n: usize) -> usize {
        (0..4).filter(|&j| j != n).map(|j| self.get(n, j)).product()
    }
}

impl fmt::Display for FctnRanks {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let a = self.as_array();
        write!(f, "{},{},{},{},{},{}", a[0], a[1], a[2], a[3], a[4], a[5])
    }
}

impl FromStr for FctnRanks {
    type Err = TensorError;

    /// Accepts six comma separated positive integers, optionally in brackets,
    /// e.g. `35,4,12,4,12,4` or `[35, 4, 12, 4, 12, 4]`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let trimmed = s.trim().trim_start_matches('[').trim_end_matches(']');
        let parts: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        if parts.len() != 6 {
            return Err(TensorError::InvalidRanks(format!(
                "expected 6 comma separated ranks, got {:?}",
                s
            )));
        }
        let mut values = [0usize; 6];
        for (slot, part) in values.iter_mut().zip(&parts) {
            *slot = part
                .parse()
                .map_err(|_| TensorError::InvalidRanks(format!("bad rank {part:?}")))?;
        }
        Self::new(values)
    }
}

/// The four factor tensors of a 4th-order FCTN.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorSet {
    factors: [DenseTensor; 4],
    ranks: FctnRanks,
}

impl FactorSet {
    pub fn new(factors: [DenseTensor; 4], ranks: FctnRanks) -> Result<Self, TensorError> {
        for (n, t) in factors.iter().enumerate() {
            if t.order() != 4 {
                return Err(TensorError::RankMismatch(format!(
                    "factor {n} has order {}, expected 4",
                    t.order()
                )));
            }
            for j in (0..4).filter(|&j| j != n) {
                if t.shape()[j] != ranks.get(n, j) {
                    return Err(TensorError::RankMismatch(format!(
                        "factor {n} dim {j} is {} but rank R{}{} is {}",
                        t.shape()[j],
                        n.min(j) + 1,
                        n.max(j) + 1,
                        ranks.get(n, j)
                    )));
                }
            }
        }
        Ok(Self { factors, ranks })
    }

    /// Factors with i.i.d. `N(0, scale^2)` entries.
    pub fn random<R: Rng + ?Sized>(
        dims: [usize; 4],
        ranks: FctnRanks,
        scale: f64,
        rng: &mut R,
    ) -> Result<Self, TensorError> {
        let normal = Normal::new(0.0, scale.abs()).expect("finite scale");
        Self::from_sampler(dims, ranks, |r| normal.sample(r), rng)
    }

    /// Factors with entries drawn by `sample`.
    pub fn from_sampler<R, F>(
        dims: [usize; 4],
        ranks: FctnRanks,
        mut sample: F,
        rng: &mut R,
    ) -> Result<Self, TensorError>
    where
        R: Rng + ?Sized,
        F: FnMut(&mut R) -> f64,
    {
        let mut make = |n: usize| {
            let shape = ranks.factor_shape(n, dims[n]);
            DenseTensor::from_fn(&shape, |_| sample(rng))
        };
        let factors = [make(0)?, make(1)?, make(2)?, make(3)?];
        Self::new(factors, ranks)
    }

    pub fn ranks(&self) -> FctnRanks {
        self.ranks
    }

    pub fn factor(&self, n: usize) -> &DenseTensor {
        &self.factors[n]
    }

    pub fn factors(&self) -> &[DenseTensor; 4] {
        &self.factors
    }

    /// Physical dimensions `(I1, I2, I3, I4)`.
    pub fn dims(&self) -> [usize; 4] {
        [
            self.factors[0].shape()[0],
            self.factors[1].shape()[1],
            self.factors[2].shape()[2],
            self.factors[3].shape()[3],
        ]
    }

    /// Replaces factor `n`; the bond dimensions must be unchanged.
    pub fn set_factor(&mut self, n: usize, t: DenseTensor) -> Result<(), TensorError> {
        let mut factors = self.factors.clone();
        factors[n] = t;
        *self = Self::new(factors, self.ranks)?;
        Ok(())
    }

    /// Copy with factor `n` replaced by `T_n ×_n p`.
    pub fn with_mode_product(&self, n: usize, p: &Array2<f64>) -> Result<Self, TensorError> {
        let mut out = self.clone();
        out.factors[n] = self.factors[n].mode_product(p, n)?;
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Leg {
    Phys(usize),
    Bond(usize, usize),
}

fn factor_legs(n: usize) -> [Leg; 4] {
    let mut legs = [Leg::Phys(n); 4];
    for (j, leg) in legs.iter_mut().enumerate() {
        if j != n {
            *leg = Leg::Bond(n.min(j), n.max(j));
        }
    }
    legs
}

struct Labeled {
    tensor: DenseTensor,
    legs: Vec<Leg>,
}

impl Labeled {
    fn factor(f: &FactorSet, n: usize) -> Self {
        Self {
            tensor: f.factors[n].clone(),
            legs: factor_legs(n).to_vec(),
        }
    }

    fn position(&self, leg: Leg) -> usize {
        self.legs.iter().position(|&l| l == leg).expect("leg present")
    }

    /// Contracts every leg shared with `other`. The result keeps `self`'s
    /// free legs followed by `other`'s free legs.
    fn contract(&self, other: &Labeled) -> Labeled {
        let shared: Vec<Leg> = self.legs.iter().copied().filter(|l| other.legs.contains(l)).collect();
        let a_free: Vec<usize> = (0..self.legs.len())
            .filter(|&k| !shared.contains(&self.legs[k]))
            .collect();
        let b_free: Vec<usize> = (0..other.legs.len())
            .filter(|&k| !shared.contains(&other.legs[k]))
            .collect();
        let a_shared: Vec<usize> = shared.iter().map(|&l| self.position(l)).collect();
        let b_shared: Vec<usize> = shared.iter().map(|&l| other.position(l)).collect();

        let a = self
            .tensor
            .permuted_unfold(&a_free, &a_shared)
            .expect("valid partition");
        let b = other
            .tensor
            .permuted_unfold(&b_shared, &b_free)
            .expect("valid partition");
        let c = a.dot(&b);

        let mut shape: Vec<usize> = a_free.iter().map(|&k| self.tensor.shape()[k]).collect();
        shape.extend(b_free.iter().map(|&k| other.tensor.shape()[k]));
        let mut legs: Vec<Leg> = a_free.iter().map(|&k| self.legs[k]).collect();
        legs.extend(b_free.iter().map(|&k| other.legs[k]));
        let tensor = DenseTensor::new(shape, super::matrix_to_col_major(&c)).expect("contraction shape is consistent");
        Labeled { tensor, legs }
    }
}

/// Full composition `FCTN(T1, T2, T3, T4)`, shape `I1 x I2 x I3 x I4`.
///
/// Contraction order is fixed: T1 with T2 over R12, then T3, then T4.
pub fn fctn_compose(f: &FactorSet) -> DenseTensor {
    let t12 = Labeled::factor(f, 0).contract(&Labeled::factor(f, 1));
    let t123 = t12.contract(&Labeled::factor(f, 2));
    let all = t123.contract(&Labeled::factor(f, 3));
    let perm: Vec<usize> = (0..4).map(|n| all.position(Leg::Phys(n))).collect();
    all.tensor.permute(&perm).expect("four physical legs")
}

/// Literal evaluation of one entry as the sextuple sum over all bond
/// indices. Slow; used as a reference.
pub fn fctn_element(f: &FactorSet, index: [usize; 4]) -> Result<f64, TensorError> {
    let dims = f.dims();
    if index.iter().zip(&dims).any(|(i, d)| i >= d) {
        return Err(TensorError::IndexOutOfRange {
            index: index.to_vec(),
            shape: dims.to_vec(),
        });
    }
    let r = f.ranks().as_array();
    let [i1, i2, i3, i4] = index;
    let [t1, t2, t3, t4] = f.factors();
    let mut sum = 0.0;
    for r12 in 0..r[0] {
        for r13 in 0..r[1] {
            for r14 in 0..r[2] {
                for r23 in 0..r[3] {
                    for r24 in 0..r[4] {
                        for r34 in 0..r[5] {
                            sum += t1.get(&[i1, r12, r13, r14])?
                                * t2.get(&[r12, i2, r23, r24])?
                                * t3.get(&[r13, r23, i3, r34])?
                                * t4.get(&[r14, r24, r34, i4])?;
                        }
                    }
                }
            }
        }
    }
    Ok(sum)
}

/// The matrix `G` with `unfold(FCTN(f), n) = unfold(T_n, n) · G`.
///
/// Rows enumerate the bonds of factor `n` in the same order as the columns of
/// `unfold(T_n, n)`; columns enumerate the remaining physical modes in
/// ascending order, matching `unfold(FCTN(f), n)`. `T_n` itself is not read.
pub fn compose_excluding(f: &FactorSet, n: usize) -> Result<Array2<f64>, TensorError> {
    if n >= 4 {
        return Err(TensorError::ModeOutOfRange { mode: n, order: 4 });
    }
    let others: Vec<usize> = (0..4).filter(|&j| j != n).collect();
    let mut acc = Labeled::factor(f, others[0]);
    for &j in &others[1..] {
        acc = acc.contract(&Labeled::factor(f, j));
    }
    let rows: Vec<usize> = others
        .iter()
        .map(|&j| acc.position(Leg::Bond(n.min(j), n.max(j))))
        .collect();
    let cols: Vec<usize> = others.iter().map(|&j| acc.position(Leg::Phys(j))).collect();
    acc.tensor.permuted_unfold(&rows, &cols)
}

/// Kronecker product of diagonal weight vectors, first vector fastest.
///
/// Entry `i1 + n1 * (i2 + n2 * ...)` is `v1[i1] * v2[i2] * ...`, i.e. the
/// diagonal of `diag(v_k) ⊗ ... ⊗ diag(v_1)`, which lines up with the column
/// enumeration of [`DenseTensor::unfold`].
pub fn kron_diag(vectors: &[&[f64]]) -> Result<Vec<f64>, TensorError> {
    if vectors.is_empty() {
        return Err(TensorError::DimensionMismatch(
            "kron_diag needs at least one vector".into(),
        ));
    }
    let mut out = vec![1.0];
    for v in vectors {
        if v.is_empty() || v.iter().any(|&x| !(x > 0.0)) {
            return Err(TensorError::DimensionMismatch(
                "kron_diag entries must be positive".into(),
            ));
        }
        let mut next = Vec::with_capacity(out.len() * v.len());
        for &x in v.iter() {
            next.extend(out.iter().map(|&o| o * x));
        }
        out = next;
    }
    Ok(out)
}
