//! Distributed variance estimation and normal-based confidence intervals.
//!
//! Each shard reports the diagonal of its local sandwich
//! `Sigma_k^{-1} Lambda_k Sigma_k^{-1}`; the central machine averages those
//! rows. A homoscedastic variant pools the clipped residual second moment and
//! averages the inverse-Gram diagonals instead.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{huber_psi, Coefficients, Shard};
use crate::runtime::CommLedger;

/// Per-coordinate standard deviations estimated both ways, plus the total
/// sample size used to scale interval widths.
#[derive(Debug, Clone)]
pub struct VarianceReport {
    /// Heteroscedasticity-robust (sandwich) standard deviations.
    pub sigma_hat: Vec<f64>,
    /// Homoscedastic standard deviations.
    pub sigma_tilde: Vec<f64>,
    pub total_n: usize,
}

/// A two-sided confidence interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfInterval {
    pub lo: f64,
    pub hi: f64,
    /// Confidence level `1 - alpha`.
    pub level: f64,
}

impl ConfInterval {
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn covers(&self, value: f64) -> bool {
        self.lo <= value && value <= self.hi
    }
}

/// One shard's contribution to the averaged variance estimator: the local
/// Gram matrix `Sigma_k`, the clipped-score matrix `Lambda_k`, and the
/// diagonal of the sandwich `Sigma_k^{-1} Lambda_k Sigma_k^{-1}`.
///
/// `ridge > 0` adds `ridge * I` to `Sigma_k` before inversion; with
/// `ridge = 0` an ill-conditioned Gram matrix (condition number above 1e12)
/// is an error.
pub fn shard_sandwich(
    shard: &Shard,
    beta_hat: &Coefficients,
    tau: f64,
    ridge: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>, Vec<f64>)> {
    let p = shard.p();
    if beta_hat.len() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            got: beta_hat.len(),
        });
    }
    let n = shard.n() as f64;
    let mut sigma = DMatrix::<f64>::zeros(p, p);
    let mut lambda = DMatrix::<f64>::zeros(p, p);
    let b = beta_hat.as_slice();
    for i in 0..shard.n() {
        let row = shard.row(i);
        let psi = huber_psi(shard.residual(i, b), tau);
        let psi2 = psi * psi;
        for j in 0..p {
            for k in j..p {
                let xx = row[j] * row[k];
                sigma[(j, k)] += xx;
                lambda[(j, k)] += psi2 * xx;
            }
        }
    }
    // symmetrize and normalize
    for j in 0..p {
        for k in j..p {
            sigma[(j, k)] /= n;
            lambda[(j, k)] /= n;
            sigma[(k, j)] = sigma[(j, k)];
            lambda[(k, j)] = lambda[(j, k)];
        }
    }
    let sigma_inv = invert_spd(&sigma, ridge)?;
    let sandwich = &sigma_inv * &lambda * &sigma_inv;
    let diag: Vec<f64> = (0..p).map(|j| sandwich[(j, j)]).collect();
    Ok((sigma, lambda, diag))
}

const MAX_CONDITION: f64 = 1e12;

fn invert_spd(mat: &DMatrix<f64>, ridge: f64) -> Result<DMatrix<f64>> {
    let p = mat.nrows();
    let work = if ridge > 0.0 {
        mat + DMatrix::<f64>::identity(p, p) * ridge
    } else {
        mat.clone()
    };
    let eig = nalgebra::SymmetricEigen::new(work);
    let max_ev = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(*v));
    let min_ev = eig.eigenvalues.iter().fold(f64::INFINITY, |a, v| a.min(*v));
    if !(min_ev > 0.0) || max_ev / min_ev > MAX_CONDITION {
        return Err(Error::SingularDesign(format!(
            "Gram matrix condition number {:.2e} exceeds {MAX_CONDITION:.0e}",
            if min_ev > 0.0 { max_ev / min_ev } else { f64::INFINITY }
        )));
    }
    let mut inv = DMatrix::<f64>::zeros(p, p);
    for k in 0..p {
        let col = eig.eigenvectors.column(k);
        let w = 1.0 / eig.eigenvalues[k];
        for i in 0..p {
            for j in 0..p {
                inv[(i, j)] += w * col[i] * col[j];
            }
        }
    }
    Ok(inv)
}

/// Coordinatewise mean of per-shard sandwich diagonals: the averaged
/// heteroscedasticity-robust variance estimate.
pub fn averaged_variance(per_shard_rows: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = per_shard_rows
        .first()
        .ok_or_else(|| Error::InvalidArgument("no per-shard rows".into()))?;
    let p = first.len();
    let mut mean = vec![0.0; p];
    for row in per_shard_rows {
        if row.len() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: row.len(),
            });
        }
        for j in 0..p {
            mean[j] += row[j];
        }
    }
    let inv = 1.0 / per_shard_rows.len() as f64;
    for v in &mut mean {
        *v *= inv;
    }
    Ok(mean)
}

/// Homoscedastic variance estimate
/// `sigma_tilde_j^2 = (sigma_eps^2 / m) sum_k (Sigma_k^{-1})_jj` with
/// `sigma_eps^2 = (N - p)^{-1} sum_i psi_tau^2(residual_i)` pooled over all
/// shards.
pub fn homoscedastic_variance(
    shards: &[Shard],
    beta_hat: &Coefficients,
    tau: f64,
    ridge: f64,
) -> Result<Vec<f64>> {
    if shards.is_empty() {
        return Err(Error::InvalidArgument("no shards".into()));
    }
    let p = shards[0].p();
    let total_n: usize = shards.iter().map(|s| s.n()).sum();
    if total_n <= p {
        return Err(Error::InvalidArgument(format!(
            "need N > p for the residual variance, got N={total_n}, p={p}"
        )));
    }
    let b = beta_hat.as_slice();
    let per_shard: Vec<(f64, Vec<f64>)> = shards
        .par_iter()
        .map(|shard| -> Result<(f64, Vec<f64>)> {
            let mut psi2_sum = 0.0;
            let n = shard.n() as f64;
            let mut sigma = DMatrix::<f64>::zeros(p, p);
            for i in 0..shard.n() {
                let row = shard.row(i);
                let psi = huber_psi(shard.residual(i, b), tau);
                psi2_sum += psi * psi;
                for j in 0..p {
                    for k in j..p {
                        sigma[(j, k)] += row[j] * row[k];
                    }
                }
            }
            for j in 0..p {
                for k in j..p {
                    sigma[(j, k)] /= n;
                    sigma[(k, j)] = sigma[(j, k)];
                }
            }
            let inv = invert_spd(&sigma, ridge)?;
            Ok((psi2_sum, (0..p).map(|j| inv[(j, j)]).collect()))
        })
        .collect::<Result<_>>()?;
    let sigma_eps2 = per_shard.iter().map(|(s, _)| s).sum::<f64>() / (total_n - p) as f64;
    let m = shards.len() as f64;
    let mut out = vec![0.0; p];
    for (_, diag) in &per_shard {
        for j in 0..p {
            out[j] += diag[j];
        }
    }
    for v in &mut out {
        *v *= sigma_eps2 / m;
    }
    Ok(out)
}

/// Computes both variance estimates in one pass over the shards, optionally
/// charging the extra communication round to `ledger`.
pub fn variance_report(
    shards: &[Shard],
    beta_hat: &Coefficients,
    tau: f64,
    ridge: f64,
    ledger: Option<&mut CommLedger>,
) -> Result<VarianceReport> {
    if shards.is_empty() {
        return Err(Error::InvalidArgument("no shards".into()));
    }
    let p = shards[0].p();
    let rows: Vec<Vec<f64>> = shards
        .par_iter()
        .map(|s| shard_sandwich(s, beta_hat, tau, ridge).map(|(_, _, d)| d))
        .collect::<Result<_>>()?;
    let sigma_hat2 = averaged_variance(&rows)?;
    let sigma_tilde2 = homoscedastic_variance(shards, beta_hat, tau, ridge)?;
    if let Some(ledger) = ledger {
        ledger.record_gradient_round(shards.len(), p);
    }
    Ok(VarianceReport {
        sigma_hat: sigma_hat2.iter().map(|v| v.sqrt()).collect(),
        sigma_tilde: sigma_tilde2.iter().map(|v| v.sqrt()).collect(),
        total_n: shards.iter().map(|s| s.n()).sum(),
    })
}

/// Normal-based confidence interval
/// `beta_j -+ z_{alpha/2} sigma_j / sqrt(N)`.
pub fn conf_interval(beta_j: f64, sigma_j: f64, total_n: usize, alpha: f64) -> ConfInterval {
    assert!(alpha > 0.0 && alpha < 1.0, "alpha must be in (0, 1)");
    assert!(sigma_j >= 0.0, "sigma must be nonnegative");
    let z = normal_quantile(1.0 - alpha / 2.0);
    let half = z * sigma_j / (total_n as f64).sqrt();
    ConfInterval {
        lo: beta_j - half,
        hi: beta_j + half,
        level: 1.0 - alpha,
    }
}

/// Standard normal quantile function (inverse CDF), rational approximation
/// with relative error below 1.2e-9 everywhere on (0, 1).
#[allow(clippy::excessive_precision)] // coefficients quoted at published precision
pub fn normal_quantile(prob: f64) -> f64 {
    assert!(prob > 0.0 && prob < 1.0, "probability must be in (0, 1)");
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    if prob < P_LOW {
        let q = (-2.0 * prob.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if prob <= 1.0 - P_LOW {
        let q = prob - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - prob).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, ErrorDist, GenConfig, Regime};
    use crate::model::Dataset;
    use crate::solvers::ols_solve;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn gen(n: usize, p: usize, m: usize, seed: u64) -> Dataset {
        let cfg = GenConfig {
            n,
            p,
            m,
            dist: ErrorDist::Normal,
            regime: Regime::LowDim,
            s: None,
            seed,
        };
        generate(&cfg, &cfg.default_beta_star()).unwrap()
    }

    #[test]
    fn quantile_reference_values() {
        // frozen table values of the standard normal quantile
        assert!((normal_quantile(0.975) - 1.959963984540054).abs() < 1e-8);
        assert!((normal_quantile(0.95) - 1.6448536269514722).abs() < 1e-8);
        assert!((normal_quantile(0.5)).abs() < 1e-12);
        assert!((normal_quantile(0.025) + 1.959963984540054).abs() < 1e-8);
        assert!((normal_quantile(0.9999) - 3.719016485455709).abs() < 1e-7);
    }

    #[test]
    fn interval_basics() {
        let ci = conf_interval(1.0, 2.0, 400, 0.05);
        assert!(ci.lo <= ci.hi);
        assert!((ci.width() - 2.0 * 1.959963984540054 * 2.0 / 20.0).abs() < 1e-9);
        assert!(ci.covers(1.0));
        // alpha -> 1 collapses the interval
        let tight = conf_interval(1.0, 2.0, 400, 0.999999);
        assert!(tight.width() < 1e-4);
    }

    #[test]
    fn sandwich_collapses_under_identity_gram() {
        // synthetic shard with orthonormal-ish design: p = 1 (intercept only)
        // keeps Sigma exactly 1, so the sandwich is just mean psi^2 x^2.
        let y = vec![0.5, -1.5, 2.5, 0.0];
        let x = vec![1.0; 4];
        let shard = Shard::new(0, y.clone(), x, 1).unwrap();
        let beta = Coefficients::zeros(1);
        let tau = 10.0;
        let (sigma, lambda, diag) = shard_sandwich(&shard, &beta, tau, 0.0).unwrap();
        assert!((sigma[(0, 0)] - 1.0).abs() < 1e-15);
        let expect = y.iter().map(|v| v * v).sum::<f64>() / 4.0;
        assert!((lambda[(0, 0)] - expect).abs() < 1e-12);
        assert!((diag[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn sandwich_matches_brute_force_oracle() {
        let ds = gen(30, 3, 1, 8);
        let shard = ds.shard(0);
        let beta = ols_solve(ds.shards(), 0.0).unwrap();
        let tau = 1.7;
        let (sigma, lambda, diag) = shard_sandwich(shard, &beta, tau, 0.0).unwrap();
        // brute-force dense oracle via explicit matrices
        let n = shard.n();
        let x = nalgebra::DMatrix::from_fn(n, 3, |i, j| shard.row(i)[j]);
        let mut w = nalgebra::DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            let psi = huber_psi(shard.residual(i, beta.as_slice()), tau);
            w[(i, i)] = psi * psi;
        }
        let sig_o = x.transpose() * &x / n as f64;
        let lam_o = x.transpose() * &w * &x / n as f64;
        let sand_o = sig_o.clone().try_inverse().unwrap()
            * &lam_o
            * sig_o.clone().try_inverse().unwrap();
        for j in 0..3 {
            for k in 0..3 {
                assert!((sigma[(j, k)] - sig_o[(j, k)]).abs() < 1e-10);
                assert!((lambda[(j, k)] - lam_o[(j, k)]).abs() < 1e-10);
                // symmetry
                assert_eq!(sigma[(j, k)], sigma[(k, j)]);
                assert_eq!(lambda[(j, k)], lambda[(k, j)]);
            }
            assert!((diag[j] - sand_o[(j, j)]).abs() < 1e-10);
            assert!(diag[j] >= 0.0);
        }
    }

    #[test]
    fn unclipped_sandwich_matches_ols_sandwich_oracle() {
        let ds = gen(60, 4, 1, 99);
        let shard = ds.shard(0);
        let beta = ols_solve(ds.shards(), 0.0).unwrap();
        // tau far above every residual: psi is the identity
        let tau = 1e9;
        let (_, lambda, diag) = shard_sandwich(shard, &beta, tau, 0.0).unwrap();
        let n = shard.n();
        let x = nalgebra::DMatrix::from_fn(n, 4, |i, j| shard.row(i)[j]);
        let mut w = nalgebra::DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            let r = shard.residual(i, beta.as_slice());
            w[(i, i)] = r * r;
        }
        let sig_o = x.transpose() * &x / n as f64;
        let lam_o = x.transpose() * &w * &x / n as f64;
        let sand_o = sig_o.clone().try_inverse().unwrap()
            * &lam_o
            * sig_o.try_inverse().unwrap();
        for j in 0..4 {
            assert!((lambda[(j, j)] - lam_o[(j, j)]).abs() < 1e-10);
            assert!((diag[j] - sand_o[(j, j)]).abs() < 1e-10);
        }
    }

    #[test]
    fn averaged_variance_cases() {
        let single = vec![vec![1.0, 2.0]];
        assert_eq!(averaged_variance(&single).unwrap(), vec![1.0, 2.0]);
        let equal = vec![vec![3.0, 4.0], vec![3.0, 4.0]];
        assert_eq!(averaged_variance(&equal).unwrap(), vec![3.0, 4.0]);
        let two = vec![vec![1.0, 5.0], vec![3.0, 7.0]];
        assert_eq!(averaged_variance(&two).unwrap(), vec![2.0, 6.0]);
        assert!(averaged_variance(&[]).is_err());
    }

    #[test]
    fn homoscedastic_constant_residual_formula() {
        // residuals identically c with |c| < tau on an intercept-only design:
        // sigma_tilde^2 = c^2 N / (N - p)
        let c = 0.75;
        let m = 3;
        let n = 20;
        let shards: Vec<Shard> = (0..m)
            .map(|j| Shard::new(j, vec![c; n], vec![1.0; n], 1).unwrap())
            .collect();
        let beta = Coefficients::zeros(1);
        let out = homoscedastic_variance(&shards, &beta, 10.0, 0.0).unwrap();
        let total = (m * n) as f64;
        let expect = c * c * total / (total - 1.0);
        assert!((out[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn homoscedastic_matches_ols_variance_oracle_for_large_tau() {
        let ds = gen(80, 3, 1, 5);
        let shard = ds.shard(0);
        let beta = ols_solve(ds.shards(), 0.0).unwrap();
        let out = homoscedastic_variance(ds.shards(), &beta, 1e9, 0.0).unwrap();
        // classical homoscedastic OLS estimate: s^2 * diag((X'X/n)^{-1})
        let n = shard.n();
        let x = nalgebra::DMatrix::from_fn(n, 3, |i, j| shard.row(i)[j]);
        let s2 = (0..n)
            .map(|i| shard.residual(i, beta.as_slice()).powi(2))
            .sum::<f64>()
            / (n - 3) as f64;
        let gram_inv = (x.transpose() * &x / n as f64).try_inverse().unwrap();
        for j in 0..3 {
            let oracle = s2 * gram_inv[(j, j)];
            assert!((out[j] - oracle).abs() / oracle < 1e-8);
        }
    }

    #[test]
    fn homoscedastic_single_machine_matches_pooled_formula() {
        let ds = gen(50, 3, 1, 6);
        let beta = ols_solve(ds.shards(), 0.0).unwrap();
        let a = homoscedastic_variance(ds.shards(), &beta, 2.0, 0.0).unwrap();
        // m = 1: the formula is the plain pooled one; recompute directly
        let shard = ds.shard(0);
        let n = shard.n();
        let psi2 = (0..n)
            .map(|i| huber_psi(shard.residual(i, beta.as_slice()), 2.0).powi(2))
            .sum::<f64>()
            / (n - 3) as f64;
        let x = nalgebra::DMatrix::from_fn(n, 3, |i, j| shard.row(i)[j]);
        let gram_inv = (x.transpose() * &x / n as f64).try_inverse().unwrap();
        for j in 0..3 {
            assert!((a[j] - psi2 * gram_inv[(j, j)]).abs() < 1e-10);
        }
    }

    #[test]
    fn variance_flavors_agree_when_errors_are_independent_of_x() {
        // homogeneous errors: both estimators target the same quantity
        let mut rng = StdRng::seed_from_u64(17);
        let (n, p, m) = (2500, 4, 4);
        let total = n * m;
        let mut y = Vec::with_capacity(total);
        let mut x = Vec::with_capacity(total * p);
        for _ in 0..total {
            x.push(1.0);
            for _ in 1..p {
                x.push(rng.sample::<f64, _>(rand_distr::StandardNormal));
            }
            let row = &x[x.len() - p..];
            let signal: f64 = row.iter().sum::<f64>();
            y.push(signal + rng.sample::<f64, _>(rand_distr::StandardNormal));
        }
        let ds = Dataset::from_rows(y, x, p, m).unwrap();
        let beta = ols_solve(ds.shards(), 0.0).unwrap();
        let report = variance_report(ds.shards(), &beta, 1e9, 0.0, None).unwrap();
        for j in 0..p {
            let rel = (report.sigma_hat[j] - report.sigma_tilde[j]).abs() / report.sigma_tilde[j];
            assert!(rel < 0.10, "coord {j}: rel gap {rel}");
        }
    }

    #[test]
    fn variance_report_charges_one_round() {
        let ds = gen(30, 3, 4, 2);
        let beta = ols_solve(ds.shards(), 0.0).unwrap();
        let mut ledger = CommLedger::new();
        variance_report(ds.shards(), &beta, 2.0, 0.0, Some(&mut ledger)).unwrap();
        assert_eq!(ledger.rounds(), 1);
        assert_eq!(ledger.values_sent(), 2 * 3 * 3);
    }

    #[test]
    fn singular_gram_is_rejected_unless_ridged() {
        // duplicate covariate column makes the Gram singular
        let n = 10;
        let mut x = Vec::new();
        for i in 0..n {
            let v = i as f64;
            x.extend_from_slice(&[1.0, v, v]);
        }
        let shard = Shard::new(0, vec![1.0; n], x, 3).unwrap();
        let beta = Coefficients::zeros(3);
        assert!(shard_sandwich(&shard, &beta, 1.0, 0.0).is_err());
        assert!(shard_sandwich(&shard, &beta, 1.0, 1e-8).is_ok());
    }
}
