//! Vector arithmetic, seeded random streams and a finite-difference oracle.

use std::ops::Index;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default probe width for [`finite_difference_gradient`].
pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// A dense, non-empty vector of finite reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct RealVector(Vec<f64>);

impl RealVector {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidInput(
                "vector must have dimension >= 1".into(),
            ));
        }
        if let Some(i) = entries.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "entry {i} is not finite ({})",
                entries[i]
            )));
        }
        Ok(RealVector(entries))
    }

    /// Panics if `dim == 0`.
    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1, "vector dimension must be >= 1");
        RealVector(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }

    pub fn dot(&self, other: &RealVector) -> Result<f64> {
        ensure_same_dim(self.dim(), other.dim())?;
        Ok(dot(&self.0, &other.0))
    }

    /// `self - other`.
    pub fn sub(&self, other: &RealVector) -> Result<RealVector> {
        elementwise_combine(self, other, |a, b| a - b)
    }

    /// `self + scale * other`.
    pub fn add_scaled(&self, scale: f64, other: &RealVector) -> Result<RealVector> {
        elementwise_combine(self, other, |a, b| a + scale * b)
    }

    pub fn scaled(&self, factor: f64) -> Result<RealVector> {
        RealVector::new(self.0.iter().map(|v| v * factor).collect())
            .map_err(|e| Error::numeric(format!("scaling by {factor}: {e}")))
    }

    /// Euclidean distance.
    pub fn distance(&self, other: &RealVector) -> Result<f64> {
        ensure_same_dim(self.dim(), other.dim())?;
        Ok(self
            .0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    }
}

impl Index<usize> for RealVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl TryFrom<Vec<f64>> for RealVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        RealVector::new(v)
    }
}

impl From<RealVector> for Vec<f64> {
    fn from(v: RealVector) -> Self {
        v.0
    }
}

pub(crate) fn ensure_same_dim(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::Shape { expected, actual });
    }
    Ok(())
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Squared Euclidean norm `Σ vᵢ²`.
pub fn l2_norm_sq(v: &RealVector) -> Result<f64> {
    let s: f64 = v.0.iter().map(|x| x * x).sum();
    if !s.is_finite() {
        return Err(Error::InvalidInput("squared norm is not finite".into()));
    }
    Ok(s)
}

pub(crate) fn norm_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// Applies `f` coordinate-wise to `a` and `b`.
pub fn elementwise_combine<F>(a: &RealVector, b: &RealVector, f: F) -> Result<RealVector>
where
    F: Fn(f64, f64) -> f64,
{
    ensure_same_dim(a.dim(), b.dim())?;
    let mut out = Vec::with_capacity(a.dim());
    for (i, (&x, &y)) in a.0.iter().zip(&b.0).enumerate() {
        let z = f(x, y);
        if !z.is_finite() {
            return Err(Error::numeric(format!("coordinate {i}: f({x}, {y}) = {z}")));
        }
        out.push(z);
    }
    Ok(RealVector(out))
}

/// Central-difference gradient `(f(x + h eᵢ) - f(x - h eᵢ)) / 2h`.
pub fn finite_difference_gradient<F>(f: F, x: &RealVector, h: f64) -> Result<RealVector>
where
    F: Fn(&RealVector) -> f64,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "probe width h = {h} must be > 0"
        )));
    }
    let mut probe = x.clone();
    let mut grad = Vec::with_capacity(x.dim());
    for i in 0..x.dim() {
        let xi = x.0[i];
        probe.0[i] = xi + h;
        let fp = f(&probe);
        probe.0[i] = xi - h;
        let fm = f(&probe);
        probe.0[i] = xi;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::numeric(format!(
                "objective not finite at probe along coordinate {i}"
            )));
        }
        grad.push((fp - fm) / (2.0 * h));
    }
    Ok(RealVector(grad))
}

/// Neumaier (improved Kahan) summation.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, value: f64) {
        let t = self.sum + value;
        if self.sum.abs() >= value.abs() {
            self.carry += (self.sum - t) + value;
        } else {
            self.carry += (value - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = CompensatedSum::new();
        for v in iter {
            s.add(v);
        }
        s
    }
}

pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    values.into_iter().collect::<CompensatedSum>().value()
}

/// A reproducible random stream identified by `(seed, stream_id)`.
///
/// Backed by ChaCha20, whose 64-bit stream parameter gives independent
/// sequences for distinct ids under one seed. Child streams are derived with
/// [`RngStream::substream`] so callers can key draws by (round, slot) without
/// coordinating.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha20Rng,
}

pub fn spawn_rng_stream(seed: u64, stream_id: u64) -> RngStream {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream_id);
    RngStream {
        seed,
        stream_id,
        rng,
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Child stream keyed by `index`; depends only on `(seed, stream_id, index)`,
    /// never on how far `self` has been advanced.
    pub fn substream(&self, index: u64) -> RngStream {
        let id = splitmix64(self.stream_id ^ splitmix64(index.wrapping_add(0x5851_F42D_4C95_7F2D)));
        spawn_rng_stream(self.seed, id)
    }

    pub fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn sign(&mut self) -> f64 {
        if self.rng.random::<bool>() {
            1.0
        } else {
            -1.0
        }
    }

    pub fn normal_vec(&mut self, dim: usize, scale: f64) -> Vec<f64> {
        (0..dim).map(|_| scale * self.normal()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn v(x: &[f64]) -> RealVector {
        RealVector::new(x.to_vec()).unwrap()
    }

    #[test]
    fn norm_sq_examples() {
        assert_eq!(l2_norm_sq(&v(&[0.0, 0.0, 0.0])).unwrap(), 0.0);
        assert_eq!(l2_norm_sq(&v(&[3.0, 4.0])).unwrap(), 25.0);
        assert_eq!(l2_norm_sq(&v(&[1.0, 1.0, 1.0, 1.0])).unwrap(), 4.0);
    }

    #[test]
    fn rejects_non_finite_and_empty() {
        assert!(matches!(
            RealVector::new(vec![1.0, f64::NAN]),
            Err(Error::InvalidInput(_))
        ));
        assert!(RealVector::new(vec![f64::INFINITY]).is_err());
        assert!(RealVector::new(vec![]).is_err());
        let bad: std::result::Result<RealVector, _> = serde_json::from_str("[]");
        assert!(bad.is_err());
    }

    #[test]
    fn combine_examples() {
        assert_eq!(
            elementwise_combine(&v(&[1.0, 2.0]), &v(&[3.0, 4.0]), |a, b| a + b).unwrap(),
            v(&[4.0, 6.0])
        );
        assert_eq!(
            elementwise_combine(&v(&[4.0, 9.0]), &v(&[4.0, 9.0]), |a, b| a / b.sqrt()).unwrap(),
            v(&[2.0, 3.0])
        );
        assert_eq!(
            elementwise_combine(&v(&[1.0, 0.0]), &v(&[1.0, 0.0]), |a, b| a * b).unwrap(),
            v(&[1.0, 0.0])
        );
    }

    #[test]
    fn combine_errors() {
        assert_eq!(
            elementwise_combine(&v(&[1.0]), &v(&[1.0, 2.0]), |a, b| a + b),
            Err(Error::Shape {
                expected: 1,
                actual: 2
            })
        );
        let err = elementwise_combine(&v(&[1.0, 0.0]), &v(&[1.0, 0.0]), |a, b| a / b).unwrap_err();
        match err {
            Error::Numeric(msg) => assert!(msg.contains("coordinate 1")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn finite_difference_examples() {
        let g = finite_difference_gradient(|x| x[0] * x[0], &v(&[3.0]), 1e-5).unwrap();
        assert_abs_diff_eq!(g[0], 6.0, epsilon = 1e-6);

        let g = finite_difference_gradient(|_| 2.5, &v(&[0.3, -1.0, 7.0]), 1e-5).unwrap();
        for i in 0..3 {
            assert_abs_diff_eq!(g[i], 0.0, epsilon = 1e-12);
        }

        // d/dx sin(x) at 0 is cos(0) = 1.
        let g = finite_difference_gradient(|x| x[0].sin(), &v(&[0.0]), 1e-5).unwrap();
        assert_abs_diff_eq!(g[0], 0.0f64.cos(), epsilon = 1e-9);
    }

    #[test]
    fn finite_difference_errors() {
        assert!(finite_difference_gradient(|x| x[0], &v(&[0.0]), 0.0).is_err());
        let err = finite_difference_gradient(|x| 1.0 / x[0], &v(&[1e-6]), 1e-6).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
    }

    #[test]
    fn rng_determinism() {
        let mut a = spawn_rng_stream(42, 0);
        let mut b = spawn_rng_stream(42, 0);
        for _ in 0..100 {
            assert_eq!(a.normal().to_bits(), b.normal().to_bits());
        }
    }

    #[test]
    fn rng_streams_differ() {
        let mut a = spawn_rng_stream(42, 0);
        let mut b = spawn_rng_stream(42, 1);
        assert_ne!(a.normal(), b.normal());
        let s = spawn_rng_stream(42, 0);
        let mut c1 = s.substream(3);
        let mut c2 = s.substream(4);
        assert_ne!(c1.normal(), c2.normal());
    }

    #[test]
    fn substream_ignores_parent_position() {
        let mut s = spawn_rng_stream(7, 11);
        let mut before = s.substream(5);
        for _ in 0..10 {
            s.normal();
        }
        let mut after = s.substream(5);
        assert_eq!(before.normal().to_bits(), after.normal().to_bits());
    }

    #[test]
    fn rng_normal_mean_clt() {
        let mut s = spawn_rng_stream(42, 0);
        let n = 1_000_000;
        let mean = compensated_sum((0..n).map(|_| s.normal())) / n as f64;
        assert!(mean.abs() <= 4.0 / (n as f64).sqrt(), "mean {mean}");
    }

    #[test]
    fn compensated_sum_recovers_lost_bits() {
        let vals = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(compensated_sum(vals), 2.0);
    }
}
