//! Deterministic random streams, Laplace sampling, and the small dense linear
//! algebra the rest of the crate is built on.
//!
//! Everything here is pure 64-bit float arithmetic. Values are immutable once
//! constructed and safe to share across threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;
use thiserror::Error;

/// Errors raised by the numeric primitives.
#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("laplace scale must be positive, got {0}")]
    NonPositiveScale(f64),
    #[error("dimension must be at least 1")]
    EmptyDimension,
    #[error("dimension mismatch: {context} ({left} vs {right})")]
    DimMismatch {
        context: &'static str,
        left: usize,
        right: usize,
    },
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
}

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

/// Stable 64-bit mixer (splitmix64 finalizer). Used to derive stream ids so
/// they do not depend on process-dependent hashing.
fn mix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn mix3(tag: u64, a: u64, b: u64) -> u64 {
    mix64(mix64(mix64(tag) ^ a) ^ b)
}

/// Identifies an independent random stream by purpose and the client or
/// directed edge it belongs to. Keeping one stream per (purpose, owner) pair
/// means a change of aggregation rule never perturbs unrelated randomness,
/// which is what makes shared-seed trajectory comparisons meaningful.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamKey {
    /// Model weight initialization for one client.
    ModelInit { client: usize },
    /// Per-round batch sampling for one client.
    Batch { client: usize },
    /// Noise sent along one directed edge (receiver <- sender).
    EdgeNoise { receiver: usize, sender: usize },
    /// Independent noise added by the DP baseline for one client.
    DpNoise { client: usize },
    /// Synthetic dataset generation.
    Synthetic,
    /// Client partitioning.
    Partition,
    /// Train/test splitting.
    TestSplit,
    /// Attack dummy-data initialization, one stream per restart.
    AttackInit { restart: usize },
}

impl StreamKey {
    pub fn id(self) -> u64 {
        match self {
            StreamKey::ModelInit { client } => mix3(1, client as u64, 0),
            StreamKey::Batch { client } => mix3(2, client as u64, 0),
            StreamKey::EdgeNoise { receiver, sender } => mix3(3, receiver as u64, sender as u64),
            StreamKey::DpNoise { client } => mix3(4, client as u64, 0),
            StreamKey::Synthetic => mix3(5, 0, 0),
            StreamKey::Partition => mix3(6, 0, 0),
            StreamKey::TestSplit => mix3(7, 0, 0),
            StreamKey::AttackInit { restart } => mix3(8, restart as u64, 0),
        }
    }
}

/// Counter-based RNG with an explicit (seed, stream) identity. Identical
/// (seed, stream) pairs reproduce the same sample sequence on every platform;
/// distinct stream ids give independent streams of the same seed.
#[derive(Debug, Clone)]
pub struct SeededRng {
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { inner }
    }

    pub fn from_key(seed: u64, key: StreamKey) -> Self {
        Self::new(seed, key.id())
    }

    /// Uniform draw in [0, 1).
    pub fn next_f64(&mut self) -> f64 {
        self.inner.random()
    }

    /// Uniform draw in [lo, hi).
    pub fn next_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in [0, bound).
    pub fn next_index(&mut self, bound: usize) -> usize {
        debug_assert!(bound > 0);
        self.inner.random_range(0..bound)
    }

    /// Standard normal draw.
    pub fn next_normal(&mut self) -> f64 {
        rand_distr::StandardNormal.sample(&mut self.inner)
    }

    /// Gamma(shape, 1) draw; building block for Dirichlet sampling.
    pub fn next_gamma(&mut self, shape: f64) -> f64 {
        debug_assert!(shape > 0.0);
        rand_distr::Gamma::new(shape, 1.0)
            .expect("positive gamma shape")
            .sample(&mut self.inner)
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, slice: &mut [T]) {
        for i in (1..slice.len()).rev() {
            let j = self.next_index(i + 1);
            slice.swap(i, j);
        }
    }
}

/// Zero-centered Laplace distribution with scale parameter beta.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaplaceSpec {
    scale: f64,
}

impl LaplaceSpec {
    pub fn new(scale: f64) -> Result<Self, NumericsError> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(NumericsError::NonPositiveScale(scale));
        }
        Ok(Self { scale })
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }
}

/// Inverse-CDF transform of one uniform draw u in (-1/2, 1/2]:
/// x = -beta * sign(u) * ln(1 - 2|u|).
pub fn laplace_from_uniform(u: f64, scale: f64) -> f64 {
    let t = (1.0 - 2.0 * u.abs()).max(f64::MIN_POSITIVE);
    -scale * u.signum() * t.ln()
}

/// One Laplace(0, beta) variate, consuming exactly one uniform draw.
pub fn laplace_sample(rng: &mut SeededRng, spec: &LaplaceSpec) -> f64 {
    let u = 0.5 - rng.next_f64();
    laplace_from_uniform(u, spec.scale())
}

/// `dim` i.i.d. Laplace(0, beta) coordinates, consuming exactly `dim` draws.
pub fn laplace_vector(
    rng: &mut SeededRng,
    dim: usize,
    spec: &LaplaceSpec,
) -> Result<DenseVector, NumericsError> {
    if dim == 0 {
        return Err(NumericsError::EmptyDimension);
    }
    Ok(DenseVector::from_fn(dim, |_| laplace_sample(rng, spec)))
}

/// Flat vector of 64-bit floats.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseVector {
    entries: Vec<f64>,
}

impl DenseVector {
    pub fn new(entries: Vec<f64>) -> Self {
        Self { entries }
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            entries: vec![0.0; len],
        }
    }

    pub fn from_fn(len: usize, f: impl FnMut(usize) -> f64) -> Self {
        Self {
            entries: (0..len).map(f).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.entries
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.entries
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.entries.iter()
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self, context: &'static str) -> Result<(), NumericsError> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(NumericsError::NonFinite(context))
        }
    }

    pub fn add(&self, other: &DenseVector) -> DenseVector {
        assert_eq!(self.len(), other.len());
        DenseVector::from_fn(self.len(), |i| self.entries[i] + other.entries[i])
    }

    pub fn sub(&self, other: &DenseVector) -> DenseVector {
        assert_eq!(self.len(), other.len());
        DenseVector::from_fn(self.len(), |i| self.entries[i] - other.entries[i])
    }

    pub fn scaled(&self, c: f64) -> DenseVector {
        DenseVector::from_fn(self.len(), |i| c * self.entries[i])
    }

    /// self += c * other
    pub fn axpy(&mut self, c: f64, other: &DenseVector) {
        assert_eq!(self.len(), other.len());
        for (a, b) in self.entries.iter_mut().zip(other.entries.iter()) {
            *a += c * b;
        }
    }

    pub fn dot(&self, other: &DenseVector) -> f64 {
        assert_eq!(self.len(), other.len());
        self.entries
            .iter()
            .zip(other.entries.iter())
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn norm2(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn norm1(&self) -> f64 {
        self.entries.iter().map(|v| v.abs()).sum()
    }

    pub fn norm_inf(&self) -> f64 {
        self.entries.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl std::ops::Index<usize> for DenseVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.entries[i]
    }
}

impl std::ops::IndexMut<usize> for DenseVector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.entries[i]
    }
}

/// Row-major dense matrix of 64-bit floats.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            entries: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        assert!(rows.iter().all(|row| row.len() == c));
        Self {
            rows: r,
            cols: c,
            entries: rows.into_iter().flatten().collect(),
        }
    }

    /// Stacks vectors as matrix rows; all vectors must share a length.
    pub fn from_row_vectors(rows: &[DenseVector]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |v| v.len());
        assert!(rows.iter().all(|v| v.len() == c));
        let mut entries = Vec::with_capacity(r * c);
        for v in rows {
            entries.extend_from_slice(v.as_slice());
        }
        Self {
            rows: r,
            cols: c,
            entries,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.rows
    }

    pub fn n_cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_vector(&self, i: usize) -> DenseVector {
        DenseVector::new(self.row(i).to_vec())
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|v| v.is_finite())
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|i| self.row(i).iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (j, s) in sums.iter_mut().enumerate() {
                *s += self[(i, j)];
            }
        }
        sums
    }

    pub fn sub(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let entries = self
            .entries
            .iter()
            .zip(other.entries.iter())
            .map(|(a, b)| a - b)
            .collect();
        Self {
            rows: self.rows,
            cols: self.cols,
            entries,
        }
    }

    pub fn max_abs_entry(&self) -> f64 {
        self.entries.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Matrix-vector product.
    pub fn mat_vec(&self, v: &DenseVector) -> Result<DenseVector, NumericsError> {
        if self.cols != v.len() {
            return Err(NumericsError::DimMismatch {
                context: "mat_vec",
                left: self.cols,
                right: v.len(),
            });
        }
        Ok(DenseVector::from_fn(self.rows, |i| {
            self.row(i).iter().zip(v.iter()).map(|(a, b)| a * b).sum()
        }))
    }
}

impl std::ops::Index<(usize, usize)> for DenseMatrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.entries[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.entries[i * self.cols + j]
    }
}

/// a * b with conformability check.
pub fn mat_mul(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix, NumericsError> {
    if a.n_cols() != b.n_rows() {
        return Err(NumericsError::DimMismatch {
            context: "mat_mul",
            left: a.n_cols(),
            right: b.n_rows(),
        });
    }
    let mut out = DenseMatrix::zeros(a.n_rows(), b.n_cols());
    for i in 0..a.n_rows() {
        for k in 0..a.n_cols() {
            let aik = a[(i, k)];
            if aik == 0.0 {
                continue;
            }
            for j in 0..b.n_cols() {
                out[(i, j)] += aik * b[(k, j)];
            }
        }
    }
    Ok(out)
}

/// w^t by repeated multiplication; w^0 is the exact identity.
pub fn mat_pow(w: &DenseMatrix, t: usize) -> Result<DenseMatrix, NumericsError> {
    if w.n_rows() != w.n_cols() {
        return Err(NumericsError::DimMismatch {
            context: "mat_pow",
            left: w.n_rows(),
            right: w.n_cols(),
        });
    }
    let mut acc = DenseMatrix::identity(w.n_rows());
    for _ in 0..t {
        acc = mat_mul(w, &acc)?;
    }
    Ok(acc)
}

/// Central-difference gradient (f(x + h e_k) - f(x - h e_k)) / (2h); the test
/// oracle for every analytic gradient in the crate.
pub fn finite_diff_gradient<F>(f: F, x: &DenseVector, h: f64) -> Result<DenseVector, NumericsError>
where
    F: Fn(&DenseVector) -> f64,
{
    let mut grad = DenseVector::zeros(x.len());
    let mut probe = x.clone();
    for k in 0..x.len() {
        let orig = probe[k];
        probe[k] = orig + h;
        let up = f(&probe);
        probe[k] = orig - h;
        let down = f(&probe);
        probe[k] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(NumericsError::NonFinite("finite_diff_gradient evaluation"));
        }
        grad[k] = (up - down) / (2.0 * h);
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_and_stream_reproduces() {
        let mut a = SeededRng::new(7, 3);
        let mut b = SeededRng::new(7, 3);
        for _ in 0..100 {
            assert_eq!(a.next_f64().to_bits(), b.next_f64().to_bits());
        }
    }

    #[test]
    fn distinct_streams_differ() {
        let mut a = SeededRng::new(7, 3);
        let mut b = SeededRng::new(7, 4);
        let xs: Vec<f64> = (0..16).map(|_| a.next_f64()).collect();
        let ys: Vec<f64> = (0..16).map(|_| b.next_f64()).collect();
        assert_ne!(xs, ys);
    }

    #[test]
    fn stream_keys_are_distinct() {
        let keys = [
            StreamKey::ModelInit { client: 0 },
            StreamKey::Batch { client: 0 },
            StreamKey::EdgeNoise {
                receiver: 0,
                sender: 0,
            },
            StreamKey::EdgeNoise {
                receiver: 0,
                sender: 1,
            },
            StreamKey::EdgeNoise {
                receiver: 1,
                sender: 0,
            },
            StreamKey::DpNoise { client: 0 },
            StreamKey::Synthetic,
            StreamKey::Partition,
        ];
        for (i, a) in keys.iter().enumerate() {
            for b in keys.iter().skip(i + 1) {
                assert_ne!(a.id(), b.id(), "{a:?} vs {b:?}");
            }
        }
    }

    #[test]
    fn laplace_median_is_zero() {
        assert_eq!(laplace_from_uniform(0.0, 0.025), 0.0);
    }

    #[test]
    fn laplace_rejects_bad_scale() {
        assert!(LaplaceSpec::new(0.0).is_err());
        assert!(LaplaceSpec::new(-1.0).is_err());
        assert!(LaplaceSpec::new(f64::NAN).is_err());
    }

    #[test]
    fn laplace_moments_match_analytic_values() {
        let beta = 0.025;
        let spec = LaplaceSpec::new(beta).unwrap();
        let mut rng = SeededRng::new(42, 9);
        let n = 1_000_000usize;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let x = laplace_sample(&mut rng, &spec);
            sum += x;
            sum_sq += x * x;
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;
        // CLT band: 3 * beta*sqrt(2)/sqrt(n).
        let mean_tol = 3.0 * beta * 2.0_f64.sqrt() / 1e3;
        assert!(mean.abs() <= mean_tol, "mean {mean} beyond {mean_tol}");
        let target_var = 2.0 * beta * beta;
        assert!(
            (var - target_var).abs() <= 0.05 * target_var,
            "variance {var} not within 5% of {target_var}"
        );
    }

    #[test]
    fn laplace_vector_shape_and_determinism() {
        let spec = LaplaceSpec::new(0.025).unwrap();
        let mut rng = SeededRng::new(1, 2);
        let v = laplace_vector(&mut rng, 3, &spec).unwrap();
        assert_eq!(v.len(), 3);
        assert!(v.is_finite());

        let mut rng2 = SeededRng::new(1, 2);
        let v2 = laplace_vector(&mut rng2, 3, &spec).unwrap();
        assert_eq!(v, v2);
    }

    #[test]
    fn laplace_vector_consumes_exactly_dim_draws() {
        let spec = LaplaceSpec::new(0.1).unwrap();
        let mut split = SeededRng::new(5, 11);
        let a = laplace_vector(&mut split, 2, &spec).unwrap();
        let b = laplace_vector(&mut split, 2, &spec).unwrap();

        let mut whole = SeededRng::new(5, 11);
        let c = laplace_vector(&mut whole, 4, &spec).unwrap();
        let concat: Vec<f64> = a.iter().chain(b.iter()).copied().collect();
        assert_eq!(concat, c.as_slice());
    }

    #[test]
    fn laplace_vector_rejects_zero_dim() {
        let spec = LaplaceSpec::new(0.1).unwrap();
        let mut rng = SeededRng::new(0, 0);
        assert!(matches!(
            laplace_vector(&mut rng, 0, &spec),
            Err(NumericsError::EmptyDimension)
        ));
    }

    #[test]
    fn mat_pow_identity_fixed_point() {
        let id = DenseMatrix::identity(4);
        assert_eq!(mat_pow(&id, 7).unwrap(), id);
    }

    #[test]
    fn mat_pow_one_is_w() {
        let w = DenseMatrix::from_rows(vec![vec![0.5, 0.5], vec![0.25, 0.75]]);
        assert_eq!(mat_pow(&w, 1).unwrap(), w);
    }

    #[test]
    fn mat_pow_preserves_row_sums_of_doubly_stochastic() {
        // 3-ring with self loops, balanced by hand symmetry: each row (1/2, 1/2, 0) pattern.
        let w = DenseMatrix::from_rows(vec![
            vec![0.5, 0.0, 0.5],
            vec![0.5, 0.5, 0.0],
            vec![0.0, 0.5, 0.5],
        ]);
        for t in 0..=50 {
            let p = mat_pow(&w, t).unwrap();
            for s in p.row_sums() {
                assert!((s - 1.0).abs() <= 1e-9, "row sum {s} at power {t}");
            }
        }
    }

    #[test]
    fn mat_pow_is_additive_in_exponent() {
        let w = DenseMatrix::from_rows(vec![
            vec![0.5, 0.0, 0.5],
            vec![0.5, 0.5, 0.0],
            vec![0.0, 0.5, 0.5],
        ]);
        for &(s, t) in &[(0usize, 5usize), (1, 1), (3, 7), (12, 13), (25, 25)] {
            let lhs = mat_pow(&w, s + t).unwrap();
            let rhs = mat_mul(&mat_pow(&w, s).unwrap(), &mat_pow(&w, t).unwrap()).unwrap();
            assert!(lhs.sub(&rhs).max_abs_entry() <= 1e-10);
        }
    }

    #[test]
    fn mat_mul_rejects_mismatched_dims() {
        let a = DenseMatrix::zeros(2, 3);
        let b = DenseMatrix::zeros(2, 3);
        assert!(matches!(
            mat_mul(&a, &b),
            Err(NumericsError::DimMismatch { .. })
        ));
    }

    #[test]
    fn finite_diff_quadratic() {
        let f = |x: &DenseVector| x.dot(x);
        let x = DenseVector::new(vec![1.0, 2.0]);
        let g = finite_diff_gradient(f, &x, 1e-5).unwrap();
        assert!((g[0] - 2.0).abs() <= 1e-6);
        assert!((g[1] - 4.0).abs() <= 1e-6);
    }

    #[test]
    fn finite_diff_constant_is_zero() {
        let f = |_: &DenseVector| 3.5;
        let x = DenseVector::new(vec![0.3, -0.7, 4.0]);
        let g = finite_diff_gradient(f, &x, 1e-5).unwrap();
        assert!(g.norm_inf() == 0.0);
    }

    #[test]
    fn finite_diff_reports_non_finite() {
        let f = |x: &DenseVector| 1.0 / (x[0] - 1.0);
        let x = DenseVector::new(vec![1.0 - 1e-5]);
        // Probing at x+h lands exactly on the pole.
        assert!(finite_diff_gradient(f, &x, 1e-5).is_err());
    }
}
