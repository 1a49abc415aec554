//! Pointwise dense tensor algebra.
//!
//! Components are stored row-major over `dim^rank` entries. Every slot carries
//! a [`Variance`]; mixed tensors such as an almost complex structure are stored
//! with the covariant slot first, so `J[[i, j]]` is `J_i^j`, the `j`-th
//! component of `J(∂_i)`.
//!
//! All operations are generic over [`Scalar`], which is implemented for `f64`
//! and for [`crate::jet::Jet`]. The latter lets the same formulas carry exact
//! first and second partial derivatives.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub trait Scalar:
    Clone
    + Debug
    + Send
    + Sync
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Mul<f64, Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + 'static
{
    fn zero() -> Self;
    fn from_f64(v: f64) -> Self;
    fn value(&self) -> f64;
    fn recip(&self) -> Self;
}

impl Scalar for f64 {
    fn zero() -> Self {
        0.0
    }
    fn from_f64(v: f64) -> Self {
        v
    }
    fn value(&self) -> f64 {
        *self
    }
    fn recip(&self) -> Self {
        1.0 / self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variance {
    /// Contravariant (upper) slot.
    Up,
    /// Covariant (lower) slot.
    Down,
}

impl Variance {
    pub fn flip(self) -> Self {
        match self {
            Variance::Up => Variance::Down,
            Variance::Down => Variance::Up,
        }
    }
}

use Variance::{Down, Up};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("dimension must be even and positive, got {0}")]
    OddDimension(usize),
    #[error("slot {slot} out of range for rank {rank}")]
    SlotOutOfRange { slot: usize, rank: usize },
    #[error("contraction requires one upper and one lower slot, got {0:?} and {1:?}")]
    VarianceMismatch(Variance, Variance),
    #[error("expected variance {expected:?}, found {found:?}")]
    WrongVariance {
        expected: Vec<Variance>,
        found: Vec<Variance>,
    },
    #[error("component count {found} does not match dim^rank = {expected}")]
    ComponentCount { expected: usize, found: usize },
    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("slots {0} and {1} must be distinct")]
    SameSlot(usize, usize),
    #[error("matrix is singular or not positive definite")]
    Singular,
    #[error("{what} violated: residual {residual:e} exceeds {tol:e}")]
    Constraint {
        what: &'static str,
        residual: f64,
        tol: f64,
    },
}

pub type Result<T> = std::result::Result<T, TensorError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor<S = f64> {
    dim: usize,
    variance: Vec<Variance>,
    comps: Vec<S>,
}

/// Iterates over all multi-indices of the given rank in row-major order.
pub(crate) fn for_each_index(dim: usize, rank: usize, mut f: impl FnMut(&[usize])) {
    let mut idx = vec![0usize; rank];
    let total = dim.pow(rank as u32);
    for _ in 0..total {
        f(&idx);
        for s in (0..rank).rev() {
            idx[s] += 1;
            if idx[s] < dim {
                break;
            }
            idx[s] = 0;
        }
    }
}

/// Sum of `f(p)` for `p` in `0..n`.
#[inline]
pub fn sum<S: Scalar>(n: usize, mut f: impl FnMut(usize) -> S) -> S {
    let mut acc = f(0);
    for p in 1..n {
        acc += f(p);
    }
    acc
}

impl<S: Scalar> Tensor<S> {
    pub fn zeros(dim: usize, variance: &[Variance]) -> Self {
        let len = dim.pow(variance.len() as u32);
        Tensor {
            dim,
            variance: variance.to_vec(),
            comps: vec![S::zero(); len],
        }
    }

    pub fn scalar(v: S) -> Self {
        Tensor {
            dim: 0,
            variance: Vec::new(),
            comps: vec![v],
        }
    }

    pub fn from_vec(dim: usize, variance: &[Variance], comps: Vec<S>) -> Result<Self> {
        let expected = dim.pow(variance.len() as u32);
        if comps.len() != expected {
            return Err(TensorError::ComponentCount {
                expected,
                found: comps.len(),
            });
        }
        Ok(Tensor {
            dim,
            variance: variance.to_vec(),
            comps,
        })
    }

    pub fn from_fn(dim: usize, variance: &[Variance], mut f: impl FnMut(&[usize]) -> S) -> Self {
        let rank = variance.len();
        let mut comps = Vec::with_capacity(dim.pow(rank as u32));
        for_each_index(dim, rank, |idx| comps.push(f(idx)));
        Tensor {
            dim,
            variance: variance.to_vec(),
            comps,
        }
    }

    /// The identity endomorphism `δ_i^j`.
    pub fn identity(dim: usize) -> Self {
        Tensor::from_fn(dim, &[Down, Up], |ix| {
            S::from_f64(if ix[0] == ix[1] { 1.0 } else { 0.0 })
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rank(&self) -> usize {
        self.variance.len()
    }

    pub fn variance(&self) -> &[Variance] {
        &self.variance
    }

    pub fn comps(&self) -> &[S] {
        &self.comps
    }

    pub fn comps_mut(&mut self) -> &mut [S] {
        &mut self.comps
    }

    pub fn into_comps(self) -> Vec<S> {
        self.comps
    }

    #[inline]
    pub fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.rank());
        idx.iter().fold(0, |acc, &i| acc * self.dim + i)
    }

    #[inline]
    pub fn at(&self, idx: &[usize]) -> &S {
        &self.comps[self.offset(idx)]
    }

    pub fn with_variance(mut self, variance: &[Variance]) -> Result<Self> {
        if variance.len() != self.rank() {
            return Err(TensorError::WrongVariance {
                expected: variance.to_vec(),
                found: self.variance,
            });
        }
        self.variance = variance.to_vec();
        Ok(self)
    }

    pub fn expect_variance(&self, expected: &[Variance]) -> Result<()> {
        if self.variance != expected {
            return Err(TensorError::WrongVariance {
                expected: expected.to_vec(),
                found: self.variance.clone(),
            });
        }
        Ok(())
    }

    pub fn map<T: Scalar>(&self, f: impl FnMut(&S) -> T) -> Tensor<T> {
        Tensor {
            dim: self.dim,
            variance: self.variance.clone(),
            comps: self.comps.iter().map(f).collect(),
        }
    }

    pub fn zip_with(&self, other: &Tensor<S>, mut f: impl FnMut(&S, &S) -> S) -> Tensor<S> {
        assert_eq!(self.dim, other.dim, "dimension mismatch");
        assert_eq!(self.comps.len(), other.comps.len(), "shape mismatch");
        Tensor {
            dim: self.dim,
            variance: self.variance.clone(),
            comps: self
                .comps
                .iter()
                .zip(&other.comps)
                .map(|(a, b)| f(a, b))
                .collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Tensor<S> {
        self.map(|x| x.clone() * s)
    }

    /// Componentwise values as an `f64` tensor.
    pub fn values(&self) -> Tensor<f64> {
        self.map(|x| x.value())
    }

    /// Max-norm of the component values.
    pub fn max_abs(&self) -> f64 {
        self.comps
            .iter()
            .map(|x| x.value().abs())
            .fold(0.0, f64::max)
    }

    /// Reorders slots: slot `s` of the result is slot `perm[s]` of `self`.
    pub fn permute(&self, perm: &[usize]) -> Tensor<S> {
        let rank = self.rank();
        assert_eq!(perm.len(), rank);
        let variance: Vec<Variance> = perm.iter().map(|&p| self.variance[p]).collect();
        let mut src = vec![0usize; rank];
        Tensor::from_fn(self.dim, &variance, |idx| {
            for s in 0..rank {
                src[perm[s]] = idx[s];
            }
            self.at(&src).clone()
        })
    }

    /// Applies `J` to one covariant slot: `(J_s T)_{..i..} = J_i^a T_{..a..}`.
    pub fn twist_slot(&self, slot: usize, j: &Tensor<S>) -> Tensor<S> {
        let n = self.dim;
        let stride = n.pow((self.rank() - slot - 1) as u32);
        let (c, jc) = (&self.comps, &j.comps);
        let comps = (0..c.len())
            .map(|k| {
                let i = (k / stride) % n;
                let base = k - i * stride;
                sum(n, |a| jc[i * n + a].clone() * c[base + a * stride].clone())
            })
            .collect();
        Tensor {
            dim: n,
            variance: self.variance.clone(),
            comps,
        }
    }

    /// Contracts a covariant slot with a vector (or covector with upper slot).
    pub fn contract_slot_with(&self, slot: usize, v: &[S]) -> Tensor<S> {
        let n = self.dim;
        let rank = self.rank();
        let mut variance = self.variance.clone();
        variance.remove(slot);
        let mut src = vec![0usize; rank];
        Tensor::from_fn(n, &variance, |idx| {
            for s in 0..slot {
                src[s] = idx[s];
            }
            for s in slot + 1..rank {
                src[s] = idx[s - 1];
            }
            sum(n, |a| {
                src[slot] = a;
                v[a].clone() * self.at(&src).clone()
            })
        })
    }
}

impl Tensor<crate::jet::Jet> {
    /// Partial derivative of every component in direction `i`.
    pub fn partial(&self, i: usize) -> Self {
        self.map(|x| x.partial(i))
    }

    pub fn truncate(&self, order: u8) -> Self {
        self.map(|x| x.truncate(order))
    }
}

impl<S, const R: usize> Index<[usize; R]> for Tensor<S> {
    type Output = S;
    #[inline]
    fn index(&self, idx: [usize; R]) -> &S {
        debug_assert_eq!(R, self.variance.len());
        let off = idx.iter().fold(0, |acc, &i| acc * self.dim + i);
        &self.comps[off]
    }
}

impl<S, const R: usize> IndexMut<[usize; R]> for Tensor<S> {
    #[inline]
    fn index_mut(&mut self, idx: [usize; R]) -> &mut S {
        let off = idx.iter().fold(0, |acc, &i| acc * self.dim + i);
        &mut self.comps[off]
    }
}

impl<S: Scalar> Add for &Tensor<S> {
    type Output = Tensor<S>;
    fn add(self, rhs: &Tensor<S>) -> Tensor<S> {
        self.zip_with(rhs, |a, b| a.clone() + b.clone())
    }
}

impl<S: Scalar> Sub for &Tensor<S> {
    type Output = Tensor<S>;
    fn sub(self, rhs: &Tensor<S>) -> Tensor<S> {
        self.zip_with(rhs, |a, b| a.clone() - b.clone())
    }
}

/// Max-norm distance between the values of two tensors.
pub fn max_diff<S: Scalar, T: Scalar>(a: &Tensor<S>, b: &Tensor<T>) -> f64 {
    assert_eq!(a.comps().len(), b.comps().len(), "shape mismatch");
    a.comps()
        .iter()
        .zip(b.comps())
        .map(|(x, y)| (x.value() - y.value()).abs())
        .fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// Dense matrices (rank-2 tensors viewed as n x n arrays)

/// Inverse of an `n x n` row-major component matrix by Gauss-Jordan
/// elimination with partial pivoting on the values.
pub fn invert_matrix<S: Scalar>(n: usize, m: &[S]) -> Result<Vec<S>> {
    let mut a: Vec<S> = m.to_vec();
    let mut inv: Vec<S> = (0..n * n)
        .map(|k| S::from_f64(if k / n == k % n { 1.0 } else { 0.0 }))
        .collect();
    let scale = m.iter().map(|x| x.value().abs()).fold(0.0, f64::max);
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&r, &s| {
                a[r * n + col]
                    .value()
                    .abs()
                    .total_cmp(&a[s * n + col].value().abs())
            })
            .unwrap();
        if a[pivot * n + col].value().abs() <= 1e-14 * scale.max(f64::MIN_POSITIVE) {
            return Err(TensorError::Singular);
        }
        if pivot != col {
            for k in 0..n {
                a.swap(pivot * n + k, col * n + k);
                inv.swap(pivot * n + k, col * n + k);
            }
        }
        let p = a[col * n + col].recip();
        for k in 0..n {
            a[col * n + k] = a[col * n + k].clone() * p.clone();
            inv[col * n + k] = inv[col * n + k].clone() * p.clone();
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = a[r * n + col].clone();
            for k in 0..n {
                let t = f.clone() * a[col * n + k].clone();
                a[r * n + k] -= t;
                let t = f.clone() * inv[col * n + k].clone();
                inv[r * n + k] -= t;
            }
        }
    }
    Ok(inv)
}

/// Cholesky test for positive definiteness of the values of a symmetric matrix.
pub fn is_positive_definite(n: usize, m: &[f64]) -> bool {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = m[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return false;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    true
}

/// Product of two (1,1) or (0,2)-shaped rank-2 tensors as matrices:
/// `(A B)_{ij} = A_{ia} B_{aj}`. The variance is taken from the outer slots.
pub fn matmul<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Tensor<S> {
    let n = a.dim();
    let var = [a.variance()[0], b.variance()[1]];
    Tensor::from_fn(n, &var, |ix| {
        sum(n, |p| a[[ix[0], p]].clone() * b[[p, ix[1]]].clone())
    })
}

/// The standard complex structure `J(e_{2k}) = e_{2k+1}` (zero-based).
pub fn j_standard<S: Scalar>(n: usize) -> Tensor<S> {
    Tensor::from_fn(n, &[Down, Up], |ix| {
        let (i, j) = (ix[0], ix[1]);
        let v = if i % 2 == 0 && j == i + 1 {
            1.0
        } else if i % 2 == 1 && j + 1 == i {
            -1.0
        } else {
            0.0
        };
        S::from_f64(v)
    })
}

// ---------------------------------------------------------------------------
// Domain types

#[derive(Clone, Debug)]
pub struct Metric<S = f64> {
    pub g: Tensor<S>,
    pub g_inv: Tensor<S>,
}

impl<S: Scalar> Metric<S> {
    pub fn new(g: Tensor<S>) -> Result<Self> {
        g.expect_variance(&[Down, Down])?;
        let n = g.dim();
        let vals: Vec<f64> = g.comps().iter().map(|x| x.value()).collect();
        let scale = g.max_abs().max(1.0);
        let asym = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .map(|(i, j)| (vals[i * n + j] - vals[j * n + i]).abs())
            .fold(0.0, f64::max);
        if asym > 1e-12 * scale {
            return Err(TensorError::Constraint {
                what: "metric symmetry",
                residual: asym,
                tol: 1e-12,
            });
        }
        if !is_positive_definite(n, &vals) {
            return Err(TensorError::Singular);
        }
        let inv = invert_matrix(n, g.comps())?;
        let g_inv = Tensor::from_vec(n, &[Up, Up], inv)?;
        Ok(Metric { g, g_inv })
    }

    pub fn dim(&self) -> usize {
        self.g.dim()
    }

    /// `g^{ab} ξ_a ξ_b`.
    pub fn norm_sq_covector(&self, xi: &[f64]) -> f64 {
        let n = self.dim();
        let mut s = 0.0;
        for a in 0..n {
            for b in 0..n {
                s += self.g_inv[[a, b]].value() * xi[a] * xi[b];
            }
        }
        s
    }
}

#[derive(Clone, Debug)]
pub struct AlmostComplex<S = f64> {
    pub j: Tensor<S>,
}

impl<S: Scalar> AlmostComplex<S> {
    pub fn new(j: Tensor<S>) -> Result<Self> {
        j.expect_variance(&[Down, Up])?;
        let n = j.dim();
        if n == 0 || n % 2 != 0 {
            return Err(TensorError::OddDimension(n));
        }
        let sq = matmul(&j, &j);
        let res = max_diff(&sq, &Tensor::<f64>::identity(n).scale(-1.0));
        if res > 1e-12 * j.max_abs().powi(2).max(1.0) {
            return Err(TensorError::Constraint {
                what: "J^2 = -Id",
                residual: res,
                tol: 1e-12,
            });
        }
        Ok(AlmostComplex { j })
    }

    pub fn standard(n: usize) -> Result<Self> {
        if n == 0 || n % 2 != 0 {
            return Err(TensorError::OddDimension(n));
        }
        Ok(AlmostComplex {
            j: j_standard(n),
        })
    }
}

// ---------------------------------------------------------------------------
// Operations

fn check_slot(t_rank: usize, slot: usize) -> Result<()> {
    if slot >= t_rank {
        return Err(TensorError::SlotOutOfRange {
            slot,
            rank: t_rank,
        });
    }
    Ok(())
}

/// Traces slot `a` against slot `b`; one must be upper and one lower.
pub fn contract<S: Scalar>(t: &Tensor<S>, slot_a: usize, slot_b: usize) -> Result<Tensor<S>> {
    let rank = t.rank();
    check_slot(rank, slot_a)?;
    check_slot(rank, slot_b)?;
    if slot_a == slot_b {
        return Err(TensorError::SameSlot(slot_a, slot_b));
    }
    let (va, vb) = (t.variance()[slot_a], t.variance()[slot_b]);
    if va == vb {
        return Err(TensorError::VarianceMismatch(va, vb));
    }
    let n = t.dim();
    let keep: Vec<usize> = (0..rank).filter(|&s| s != slot_a && s != slot_b).collect();
    let variance: Vec<Variance> = keep.iter().map(|&s| t.variance()[s]).collect();
    let mut src = vec![0usize; rank];
    if keep.is_empty() {
        let v = sum(n, |p| {
            src[slot_a] = p;
            src[slot_b] = p;
            t.at(&src).clone()
        });
        return Ok(Tensor::scalar(v));
    }
    Ok(Tensor::from_fn(n, &variance, |idx| {
        for (k, &s) in keep.iter().enumerate() {
            src[s] = idx[k];
        }
        sum(n, |p| {
            src[slot_a] = p;
            src[slot_b] = p;
            t.at(&src).clone()
        })
    }))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Up,
    Down,
}

/// Raises or lowers a single slot with the metric.
pub fn raise_lower<S: Scalar>(
    t: &Tensor<S>,
    slot: usize,
    m: &Metric<S>,
    dir: Direction,
) -> Result<Tensor<S>> {
    check_slot(t.rank(), slot)?;
    let current = t.variance()[slot];
    let (needed, factor) = match dir {
        Direction::Up => (Variance::Down, &m.g_inv),
        Direction::Down => (Variance::Up, &m.g),
    };
    if current != needed {
        return Err(TensorError::VarianceMismatch(current, needed));
    }
    let n = t.dim();
    let rank = t.rank();
    let mut variance = t.variance().to_vec();
    variance[slot] = current.flip();
    let mut src = vec![0usize; rank];
    Ok(Tensor::from_fn(n, &variance, |idx| {
        src.copy_from_slice(idx);
        sum(n, |p| {
            src[slot] = p;
            factor[[idx[slot], p]].clone() * t.at(&src).clone()
        })
    }))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Part2 {
    /// The J-invariant `(1,1)` part.
    JInv,
    /// The J-anti-invariant `(2,0)+(0,2)` part.
    JAnti,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Part3 {
    /// `(2,1)+(1,2)`.
    Mixed,
    /// `(3,0)+(0,3)`.
    Pure,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SymPart {
    Sym,
    Skew,
}

fn expect_covariant<S: Scalar>(t: &Tensor<S>, rank: usize) -> Result<()> {
    let v = vec![Down; rank];
    t.expect_variance(&v)
}

/// `A_{ab} J_i^a J_j^b`.
pub fn j_twist2<S: Scalar>(a: &Tensor<S>, j: &Tensor<S>) -> Tensor<S> {
    a.twist_slot(0, j).twist_slot(1, j)
}

/// Type projection of a covariant 2-tensor: `½(A ± A(J·, J·))`.
pub fn project2<S: Scalar>(a: &Tensor<S>, part: Part2, j: &AlmostComplex<S>) -> Result<Tensor<S>> {
    expect_covariant(a, 2)?;
    if a.dim() != j.j.dim() {
        return Err(TensorError::DimMismatch(a.dim(), j.j.dim()));
    }
    let tw = j_twist2(a, &j.j);
    let sign = match part {
        Part2::JInv => 1.0,
        Part2::JAnti => -1.0,
    };
    Ok(a.zip_with(&tw, |x, y| (x.clone() + y.clone() * sign) * 0.5))
}

/// Type projection of a covariant 3-tensor.
pub fn project3<S: Scalar>(b: &Tensor<S>, part: Part3, j: &AlmostComplex<S>) -> Result<Tensor<S>> {
    expect_covariant(b, 3)?;
    if b.dim() != j.j.dim() {
        return Err(TensorError::DimMismatch(b.dim(), j.j.dim()));
    }
    let jj = &j.j;
    let t1 = b.twist_slot(1, jj).twist_slot(2, jj);
    let t2 = b.twist_slot(0, jj).twist_slot(2, jj);
    let t3 = b.twist_slot(0, jj).twist_slot(1, jj);
    let n = b.comps().len();
    let mut out = b.clone();
    for k in 0..n {
        let twisted = t1.comps()[k].clone() + t2.comps()[k].clone() + t3.comps()[k].clone();
        out.comps_mut()[k] = match part {
            Part3::Pure => (b.comps()[k].clone() - twisted) * 0.25,
            Part3::Mixed => b.comps()[k].clone() * 0.75 + twisted * 0.25,
        };
    }
    Ok(out)
}

/// `½(a_{ij} ± a_{ji})`.
pub fn sym_skew<S: Scalar>(a: &Tensor<S>, part: SymPart) -> Result<Tensor<S>> {
    if a.rank() != 2 {
        return Err(TensorError::WrongVariance {
            expected: vec![Down, Down],
            found: a.variance().to_vec(),
        });
    }
    let sign = match part {
        SymPart::Sym => 1.0,
        SymPart::Skew => -1.0,
    };
    Ok(Tensor::from_fn(a.dim(), a.variance(), |ix| {
        (a[[ix[0], ix[1]]].clone() + a[[ix[1], ix[0]]].clone() * sign) * 0.5
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rng: &mut ChaCha8Rng, n: usize, var: &[Variance]) -> Tensor {
        Tensor::from_fn(n, var, |_| rng.gen_range(-1.0..1.0))
    }

    fn random_structure(rng: &mut ChaCha8Rng, n: usize) -> (Metric, AlmostComplex) {
        // J = A J_std A^{-1}, g = ½(h + JᵀhJ)
        let a = Tensor::from_fn(n, &[Down, Up], |ix| {
            (ix[0] == ix[1]) as u8 as f64 + 0.3 * rng.gen_range(-1.0..1.0)
        });
        let ainv = Tensor::from_vec(n, &[Down, Up], invert_matrix(n, a.comps()).unwrap()).unwrap();
        let js = j_standard::<f64>(n);
        let j = matmul(&matmul(&ainv, &js), &a);
        let r = random_tensor(rng, n, &[Down, Down]);
        let h = Tensor::from_fn(n, &[Down, Down], |ix| {
            (ix[0] == ix[1]) as u8 as f64 + 0.15 * (r[[ix[0], ix[1]]] + r[[ix[1], ix[0]]])
        });
        let g = Tensor::from_fn(n, &[Down, Down], |ix| {
            0.5 * (h[[ix[0], ix[1]]] + j2(&h, &j, ix[0], ix[1]))
        });
        (Metric::new(g).unwrap(), AlmostComplex::new(j).unwrap())
    }

    fn j2(h: &Tensor, j: &Tensor, i: usize, k: usize) -> f64 {
        let n = h.dim();
        let mut s = 0.0;
        for a in 0..n {
            for b in 0..n {
                s += j[[i, a]] * j[[k, b]] * h[[a, b]];
            }
        }
        s
    }

    #[test]
    fn trace_of_identity_and_j_squared() {
        let id = Tensor::<f64>::identity(4);
        assert_eq!(contract(&id, 0, 1).unwrap().comps()[0], 4.0);
        let j = j_standard::<f64>(6);
        let trace = contract(&matmul(&j, &j), 0, 1).unwrap().comps()[0];
        assert_eq!(trace, -6.0);
    }

    #[test]
    fn contraction_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let t = random_tensor(&mut rng, 4, &[Down, Up, Down]);
        let c = contract(&t, 1, 2).unwrap();
        for i in 0..4 {
            let mut s = 0.0;
            for p in 0..4 {
                s += t.comps()[i * 16 + p * 4 + p];
            }
            assert!((c[[i]] - s).abs() < 1e-14);
        }
        let c2 = contract(&t, 1, 0).unwrap();
        for k in 0..4 {
            let mut s = 0.0;
            for p in 0..4 {
                s += t.comps()[p * 16 + p * 4 + k];
            }
            assert!((c2[[k]] - s).abs() < 1e-14);
        }
    }

    #[test]
    fn contraction_errors() {
        let t = Tensor::<f64>::zeros(4, &[Down, Down, Up]);
        assert!(matches!(
            contract(&t, 0, 1),
            Err(TensorError::VarianceMismatch(..))
        ));
        assert!(matches!(
            contract(&t, 0, 3),
            Err(TensorError::SlotOutOfRange { .. })
        ));
        assert!(matches!(contract(&t, 2, 2), Err(TensorError::SameSlot(..))));
    }

    #[test]
    fn lowering_j_on_flat_structure_gives_standard_form() {
        let m = Metric::new(Tensor::<f64>::identity(4).with_variance(&[Down, Down]).unwrap()).unwrap();
        let j = j_standard::<f64>(4);
        let w = raise_lower(&j, 1, &m, Direction::Down).unwrap();
        assert_eq!(w[[0, 1]], 1.0);
        assert_eq!(w[[1, 0]], -1.0);
        assert_eq!(w[[2, 3]], 1.0);
        assert_eq!(w[[0, 2]], 0.0);
        assert!(matches!(
            raise_lower(&j, 0, &m, Direction::Down),
            Err(TensorError::VarianceMismatch(..))
        ));
    }

    #[test]
    fn raise_then_lower_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (m, _) = random_structure(&mut rng, 6);
        let t = random_tensor(&mut rng, 6, &[Down, Down, Up]);
        let up = raise_lower(&t, 1, &m, Direction::Up).unwrap();
        let back = raise_lower(&up, 1, &m, Direction::Down).unwrap();
        assert!(max_diff(&t, &back) < 1e-13);
    }

    #[test]
    fn omega_inverse_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [4, 6, 8] {
            let (m, j) = random_structure(&mut rng, n);
            // ω_ij = J_i^a g_ja
            let w = Tensor::from_fn(n, &[Down, Down], |ix| {
                (0..n).map(|a| j.j[[ix[0], a]] * m.g[[ix[1], a]]).sum::<f64>()
            });
            let winv = invert_matrix(n, w.comps()).unwrap();
            for a in 0..n {
                for b in 0..n {
                    let s: f64 = (0..n).map(|c| winv[a * n + c] * w[[c, b]]).sum();
                    let d = if a == b { 1.0 } else { 0.0 };
                    assert!((s - d).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn projections_of_compatible_pair() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (m, j) = random_structure(&mut rng, 6);
        let anti = project2(&m.g, Part2::JAnti, &j).unwrap();
        assert!(anti.max_abs() < 1e-12);
        let w = raise_lower(&j.j, 1, &m, Direction::Down).unwrap();
        let inv = project2(&w, Part2::JInv, &j).unwrap();
        assert!(max_diff(&inv, &w) < 1e-12);
    }

    #[test]
    fn project2_matches_literal_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (_, j) = random_structure(&mut rng, 4);
        let a = random_tensor(&mut rng, 4, &[Down, Down]);
        let p = project2(&a, Part2::JAnti, &j).unwrap();
        let q = project2(&a, Part2::JInv, &j).unwrap();
        for i in 0..4 {
            for k in 0..4 {
                let tw = j2(&a, &j.j, i, k);
                assert!((p[[i, k]] - 0.5 * (a[[i, k]] - tw)).abs() < 1e-14);
                assert!((q[[i, k]] - 0.5 * (a[[i, k]] + tw)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn zero_three_tensor_projects_to_zero() {
        let j = AlmostComplex::<f64>::standard(6).unwrap();
        let b = Tensor::<f64>::zeros(6, &[Down, Down, Down]);
        assert_eq!(project3(&b, Part3::Pure, &j).unwrap().max_abs(), 0.0);
        assert_eq!(project3(&b, Part3::Mixed, &j).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn sym_skew_conventions() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (m, j) = random_structure(&mut rng, 4);
        let w = raise_lower(&j.j, 1, &m, Direction::Down).unwrap();
        assert!(sym_skew(&w, SymPart::Sym).unwrap().max_abs() < 1e-15);
        assert!(sym_skew(&m.g, SymPart::Skew).unwrap().max_abs() < 1e-15);
        let a = random_tensor(&mut rng, 4, &[Down, Down]);
        let s = sym_skew(&a, SymPart::Sym).unwrap();
        let k = sym_skew(&a, SymPart::Skew).unwrap();
        assert!(max_diff(&(&s + &k), &a) < 1e-15);
    }

    #[test]
    fn odd_dimension_rejected() {
        assert!(matches!(
            AlmostComplex::<f64>::standard(3),
            Err(TensorError::OddDimension(3))
        ));
    }
}
