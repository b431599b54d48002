//! Huber loss, score function, and per-shard loss/gradient evaluation.
//!
//! Everything here is a pure function of its arguments. Row sums always run
//! in fixed forward order so that repeated evaluations are bit-identical.

use crate::error::{Error, Result};

/// Huber loss: `0.5 u^2` for `|u| <= tau`, `tau |u| - 0.5 tau^2` beyond.
///
/// Continuous and once-differentiable everywhere; C1 but not C2 at `|u| = tau`.
/// `tau = f64::INFINITY` yields the plain squared-error loss.
#[inline]
pub fn huber_loss(u: f64, tau: f64) -> f64 {
    debug_assert!(tau > 0.0);
    let a = u.abs();
    if a <= tau {
        0.5 * u * u
    } else {
        tau * a - 0.5 * tau * tau
    }
}

/// Score function `psi_tau(u) = sign(u) * min(|u|, tau)`, the derivative of
/// [`huber_loss`] in `u`. Odd, 1-Lipschitz, bounded by `tau`.
#[inline]
pub fn huber_psi(u: f64, tau: f64) -> f64 {
    debug_assert!(tau > 0.0);
    if u.abs() <= tau {
        u
    } else if u > 0.0 {
        tau
    } else {
        -tau
    }
}

/// Coefficient vector; the first entry is the intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct Coefficients(Vec<f64>);

impl Coefficients {
    /// Wraps a vector, rejecting NaN/Inf entries and empty input.
    pub fn new(beta: Vec<f64>) -> Result<Self> {
        if beta.is_empty() {
            return Err(Error::InvalidArgument("empty coefficient vector".into()));
        }
        if beta.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "coefficient vector has non-finite entries".into(),
            ));
        }
        Ok(Coefficients(beta))
    }

    pub fn zeros(p: usize) -> Self {
        Coefficients(vec![0.0; p])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn intercept(&self) -> f64 {
        self.0[0]
    }

    /// Slope coordinates (everything after the intercept).
    pub fn slopes(&self) -> &[f64] {
        &self.0[1..]
    }

    pub fn l2_distance(&self, other: &Coefficients) -> f64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

impl std::ops::Index<usize> for Coefficients {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl AsRef<[f64]> for Coefficients {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Local (`kappa`) and global (`tau`) robustification parameters plus the
/// tuning multiplier `c` used to set `tau = c * sqrt(m) * kappa`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobustConfig {
    pub kappa: f64,
    pub tau: f64,
    pub c_mult: f64,
}

impl RobustConfig {
    pub fn new(kappa: f64, tau: f64, c_mult: f64) -> Result<Self> {
        if !(kappa > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "kappa must be positive, got {kappa}"
            )));
        }
        if !(tau >= kappa) {
            return Err(Error::InvalidArgument(format!(
                "tau must satisfy tau >= kappa, got tau={tau}, kappa={kappa}"
            )));
        }
        if !(c_mult > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "c_mult must be positive, got {c_mult}"
            )));
        }
        Ok(RobustConfig { kappa, tau, c_mult })
    }
}

/// One machine's block of observations: `n` responses and an `n x p`
/// row-major design matrix whose first column is identically 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Shard {
    id: usize,
    y: Vec<f64>,
    x: Vec<f64>,
    n: usize,
    p: usize,
}

impl Shard {
    /// Builds a shard from a response vector and a row-major design matrix.
    ///
    /// Validates sizes, finiteness, and the intercept column.
    pub fn new(id: usize, y: Vec<f64>, x: Vec<f64>, p: usize) -> Result<Self> {
        let n = y.len();
        if n == 0 || p == 0 {
            return Err(Error::InvalidArgument(
                "shard must have n >= 1 and p >= 1".into(),
            ));
        }
        if x.len() != n * p {
            return Err(Error::DimensionMismatch {
                expected: n * p,
                got: x.len(),
            });
        }
        if y.iter().any(|v| !v.is_finite()) || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "shard data has non-finite entries".into(),
            ));
        }
        for i in 0..n {
            if x[i * p] != 1.0 {
                return Err(Error::InvalidArgument(format!(
                    "design row {i} does not start with an intercept 1 (got {})",
                    x[i * p]
                )));
            }
        }
        Ok(Shard { id, y, x, n, p })
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    /// Raw row-major design storage.
    pub fn x_data(&self) -> &[f64] {
        &self.x
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    /// Residual `y_i - x_i . beta` of one row.
    #[inline]
    pub fn residual(&self, i: usize, beta: &[f64]) -> f64 {
        self.y[i] - dot(self.row(i), beta)
    }

    fn check_dim(&self, beta: &Coefficients) -> Result<()> {
        if beta.len() != self.p {
            return Err(Error::DimensionMismatch {
                expected: self.p,
                got: beta.len(),
            });
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for i in 0..a.len() {
        acc += a[i] * b[i];
    }
    acc
}

/// Mean Huber loss of the shard residuals at `beta`.
pub fn shard_loss(shard: &Shard, beta: &Coefficients, tau: f64) -> Result<f64> {
    shard.check_dim(beta)?;
    let b = beta.as_slice();
    let mut acc = 0.0;
    for i in 0..shard.n {
        acc += huber_loss(shard.residual(i, b), tau);
    }
    Ok(acc / shard.n as f64)
}

/// Gradient of [`shard_loss`]: `-(1/n) sum psi_tau(y_i - x_i.beta) x_i`.
pub fn shard_gradient(shard: &Shard, beta: &Coefficients, tau: f64) -> Result<Vec<f64>> {
    shard.check_dim(beta)?;
    let b = beta.as_slice();
    let mut grad = vec![0.0; shard.p];
    for i in 0..shard.n {
        let w = huber_psi(shard.residual(i, b), tau);
        let row = shard.row(i);
        for j in 0..shard.p {
            grad[j] -= w * row[j];
        }
    }
    let inv_n = 1.0 / shard.n as f64;
    for g in &mut grad {
        *g *= inv_n;
    }
    Ok(grad)
}

/// Raw (unnormalized) loss sum over a shard.
pub(crate) fn shard_loss_sum(shard: &Shard, beta: &[f64], tau: f64) -> f64 {
    let mut acc = 0.0;
    for i in 0..shard.n {
        acc += huber_loss(shard.residual(i, beta), tau);
    }
    acc
}

/// Fused single-pass evaluation of the raw (unnormalized) loss sum and
/// gradient sum over a shard. Callers divide by their own sample count, which
/// keeps pooled and per-shard evaluations bit-compatible.
pub(crate) fn shard_sums(shard: &Shard, beta: &[f64], tau: f64, grad_sum: &mut [f64]) -> f64 {
    debug_assert_eq!(grad_sum.len(), shard.p);
    let mut loss = 0.0;
    for i in 0..shard.n {
        let r = shard.residual(i, beta);
        loss += huber_loss(r, tau);
        let w = huber_psi(r, tau);
        let row = shard.row(i);
        for j in 0..shard.p {
            grad_sum[j] -= w * row[j];
        }
    }
    loss
}

/// An ordered collection of equal-sized shards partitioning one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    shards: Vec<Shard>,
}

impl Dataset {
    /// Validates equal shard sizes, a common dimension, and ids `0..m-1`.
    pub fn new(shards: Vec<Shard>) -> Result<Self> {
        if shards.is_empty() {
            return Err(Error::InvalidArgument("dataset has no shards".into()));
        }
        let n = shards[0].n();
        let p = shards[0].p();
        for (j, s) in shards.iter().enumerate() {
            if s.id() != j {
                return Err(Error::InvalidArgument(format!(
                    "shard ids must be 0..m-1 in order; shard {j} has id {}",
                    s.id()
                )));
            }
            if s.n() != n {
                return Err(Error::InvalidArgument(format!(
                    "unequal shard sizes: shard 0 has n={n}, shard {j} has n={}",
                    s.n()
                )));
            }
            if s.p() != p {
                return Err(Error::DimensionMismatch {
                    expected: p,
                    got: s.p(),
                });
            }
        }
        Ok(Dataset { shards })
    }

    /// Partitions `total_n` rows (row-major `x`, length `total_n * p`) into
    /// `m` contiguous equal-sized shards. Rejects `total_n` not divisible by
    /// `m`.
    pub fn from_rows(y: Vec<f64>, x: Vec<f64>, p: usize, m: usize) -> Result<Self> {
        let total_n = y.len();
        if m == 0 || total_n == 0 {
            return Err(Error::InvalidArgument(
                "need at least one shard and one row".into(),
            ));
        }
        if total_n % m != 0 {
            return Err(Error::InvalidArgument(format!(
                "total rows {total_n} not divisible by shard count {m}"
            )));
        }
        if x.len() != total_n * p {
            return Err(Error::DimensionMismatch {
                expected: total_n * p,
                got: x.len(),
            });
        }
        let n = total_n / m;
        let mut shards = Vec::with_capacity(m);
        for j in 0..m {
            let ys = y[j * n..(j + 1) * n].to_vec();
            let xs = x[j * n * p..(j + 1) * n * p].to_vec();
            shards.push(Shard::new(j, ys, xs, p)?);
        }
        Dataset::new(shards)
    }

    pub fn shards(&self) -> &[Shard] {
        &self.shards
    }

    pub fn shard(&self, j: usize) -> &Shard {
        &self.shards[j]
    }

    pub fn m(&self) -> usize {
        self.shards.len()
    }

    /// Per-shard sample size.
    pub fn n(&self) -> usize {
        self.shards[0].n()
    }

    pub fn p(&self) -> usize {
        self.shards[0].p()
    }

    pub fn total_n(&self) -> usize {
        self.n() * self.m()
    }
}
