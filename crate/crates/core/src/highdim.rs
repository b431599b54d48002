//! l1-penalized variants for sparse high-dimensional models: centralized
//! penalized Huber and lasso fits, divide-and-conquer averaging, and the
//! multi-round distributed regularized fit with a decaying penalty schedule.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimators::{FitTrace, PooledHuber, RoundRecord, ShiftedLossSpec};
use crate::model::{Coefficients, Shard};
use crate::runtime::{gather_gradients, CommLedger};
use crate::solvers::{inf_norm, lamm_minimize, LammOptions};

/// Penalty level plus the coordinates it exempts (the intercept by default).
#[derive(Debug, Clone)]
pub struct PenaltyConfig {
    pub lambda: f64,
    pub unpenalized: Vec<usize>,
}

impl PenaltyConfig {
    pub fn new(lambda: f64) -> Result<Self> {
        if lambda < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "penalty level must be nonnegative, got {lambda}"
            )));
        }
        Ok(PenaltyConfig {
            lambda,
            unpenalized: vec![0],
        })
    }

    pub fn with_unpenalized(mut self, coords: Vec<usize>) -> Self {
        self.unpenalized = coords;
        self
    }

    /// Solver options carrying this penalty's exemption set.
    pub fn options(&self, base: &LammOptions) -> LammOptions {
        LammOptions {
            unpenalized: self.unpenalized.clone(),
            ..base.clone()
        }
    }
}

/// Decaying penalty schedule
/// `lambda_t = base + coeff * ratio^t`, `t = 0, 1, 2, ...`, with
/// `base = a * sigma * sqrt(log p / N)`,
/// `coeff = b * sigma * sqrt(log p / n)` and
/// `ratio = sqrt(s^2 log p / n)`.
///
/// Non-increasing in `t` with floor `base`; construction rejects `ratio > 1`
/// (the contraction regime requires `n > s^2 log p`).
#[derive(Debug, Clone, Copy)]
pub struct LambdaSchedule {
    base: f64,
    coeff: f64,
    ratio: f64,
}

impl LambdaSchedule {
    /// Builds the schedule from calibration constants `(a, b)`, a noise-scale
    /// plug-in `sigma`, sparsity `s`, dimension `p`, local size `n`, and total
    /// size `total_n`.
    pub fn from_calibration(
        a: f64,
        b: f64,
        sigma: f64,
        s: usize,
        p: usize,
        n: usize,
        total_n: usize,
    ) -> Result<Self> {
        if !(a > 0.0) || !(b > 0.0) || !(sigma > 0.0) {
            return Err(Error::InvalidArgument(
                "schedule constants and scale must be positive".into(),
            ));
        }
        let log_p = (p as f64).ln();
        let ratio = ((s * s) as f64 * log_p / n as f64).sqrt();
        if ratio > 1.0 {
            return Err(Error::InvalidArgument(format!(
                "decay ratio {ratio:.3} exceeds 1 (need n > s^2 log p)"
            )));
        }
        Ok(LambdaSchedule {
            base: a * sigma * (log_p / total_n as f64).sqrt(),
            coeff: b * sigma * (log_p / n as f64).sqrt(),
            ratio,
        })
    }

    /// A flat schedule pinned at `lambda` (one-off fits).
    pub fn constant(lambda: f64) -> Result<Self> {
        if !(lambda > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "penalty level must be positive, got {lambda}"
            )));
        }
        Ok(LambdaSchedule {
            base: lambda,
            coeff: 0.0,
            ratio: 0.0,
        })
    }

    /// Penalty level at round `t` (`t = 0` is the initialization level).
    pub fn lambda_at(&self, t: usize) -> f64 {
        self.base + self.coeff * self.ratio.powi(t as i32)
    }

    /// The floor the schedule approaches as `t` grows.
    pub fn floor(&self) -> f64 {
        self.base
    }
}

/// Robust noise-scale plug-in: median absolute deviation about the median,
/// scaled by 1.4826 for consistency at the normal distribution.
pub fn mad_scale(residuals: &[f64]) -> Result<f64> {
    if residuals.is_empty() {
        return Err(Error::InvalidArgument("no residuals".into()));
    }
    let med = median(residuals);
    let dev: Vec<f64> = residuals.iter().map(|r| (r - med).abs()).collect();
    let mad = median(&dev);
    if mad == 0.0 {
        return Err(Error::DegenerateInput(
            "median absolute deviation is zero".into(),
        ));
    }
    Ok(1.4826 * mad)
}

fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Self-tuned robustification level for the sparse regime: solves
/// `(1/n) sum_i min(r_i^2, kappa^2) / kappa^2 = log(p) / n`, matching the
/// theoretical order `kappa ~ sigma sqrt(n / log p)` when `p` can exceed `n`.
pub fn tune_kappa_sparse(residuals: &[f64], p: usize) -> Result<f64> {
    let n = residuals.len();
    if n == 0 {
        return Err(Error::InvalidArgument("no residuals".into()));
    }
    let target = (p as f64).ln() / n as f64;
    crate::estimators::tune_kappa_with(residuals, target, n as f64)
}

/// l1-penalized Huber fit over the pooled rows of `shards` (intercept
/// unpenalized unless `opts` says otherwise).
pub fn l1_ahr_fit(
    shards: &[Shard],
    tau: f64,
    lambda: f64,
    beta0: &Coefficients,
    opts: &LammOptions,
) -> Result<Coefficients> {
    let problem = PooledHuber::new(shards, tau)?;
    Ok(lamm_minimize(&problem, lambda, beta0, opts)?.beta_hat)
}

/// Lasso: l1-penalized squared loss via the same majorize-minimize machinery
/// (the unclipped `tau = +inf` code path). Requires `lambda > 0` when the
/// dimension exceeds the pooled sample size.
pub fn lasso_fit(
    shards: &[Shard],
    lambda: f64,
    beta0: &Coefficients,
    opts: &LammOptions,
) -> Result<Coefficients> {
    let p = shards.first().map(|s| s.p()).unwrap_or(0);
    let total_n: usize = shards.iter().map(|s| s.n()).sum();
    if lambda == 0.0 && p > total_n {
        return Err(Error::InvalidArgument(
            "lambda must be positive when p exceeds the sample size".into(),
        ));
    }
    l1_ahr_fit(shards, f64::INFINITY, lambda, beta0, opts)
}

/// Divide-and-conquer l1-penalized Huber: averages per-shard fits run at a
/// common `(kappa, lambda)` from cold starts.
pub fn dc_l1_ahr(
    shards: &[Shard],
    kappa: f64,
    lambda: f64,
    opts: &LammOptions,
) -> Result<Coefficients> {
    if shards.is_empty() {
        return Err(Error::InvalidArgument("no shards".into()));
    }
    let p = shards[0].p();
    let fits: Vec<Coefficients> = shards
        .par_iter()
        .map(|s| {
            l1_ahr_fit(
                std::slice::from_ref(s),
                kappa,
                lambda,
                &Coefficients::zeros(p),
                opts,
            )
        })
        .collect::<Result<_>>()?;
    crate::estimators::dc_average(&fits)
}

/// Multi-round distributed regularized fit: each round gathers the global
/// `tau`-gradient, forms the shifted loss on the central shard, and solves it
/// with the round's penalty level `schedule.lambda_at(t)`, warm-started at
/// the previous iterate. Runs a fixed `t_rounds` rounds (no early stopping).
#[allow(clippy::too_many_arguments)]
pub fn dist_reg_ahr(
    shards: &[Shard],
    kappa: f64,
    tau: f64,
    schedule: &LambdaSchedule,
    t_rounds: usize,
    beta0: &Coefficients,
    opts: &LammOptions,
    ledger: &mut CommLedger,
) -> Result<(Coefficients, FitTrace)> {
    if shards.is_empty() {
        return Err(Error::InvalidArgument("no shards".into()));
    }
    if !(kappa > 0.0) || !(tau >= kappa) {
        return Err(Error::InvalidArgument(format!(
            "need tau >= kappa > 0, got kappa={kappa}, tau={tau}"
        )));
    }
    if t_rounds == 0 {
        return Err(Error::InvalidArgument("need at least one round".into()));
    }
    let ledger_start = *ledger;
    let mut beta = beta0.clone();
    let mut rounds: Vec<RoundRecord> = Vec::new();
    for t in 1..=t_rounds {
        let gather = gather_gradients(shards, &beta, tau, ledger)?;
        let g_t = inf_norm(&gather.mean_gradient);
        let shifted = ShiftedLossSpec::new(&shards[0], kappa, beta.clone(), &gather.mean_gradient)?;
        match lamm_minimize(&shifted, schedule.lambda_at(t), &beta, opts) {
            Ok(report) => {
                beta = report.beta_hat;
                rounds.push(RoundRecord {
                    beta: beta.clone(),
                    grad_infnorm: g_t,
                    inner_iterations: report.iterations,
                });
            }
            Err(e) => {
                return Err(Error::FitAborted {
                    context: e.to_string(),
                    trace: Box::new(FitTrace {
                        rounds,
                        ledger: ledger.since(&ledger_start),
                    }),
                })
            }
        }
    }
    let trace = FitTrace {
        rounds,
        ledger: ledger.since(&ledger_start),
    };
    Ok((beta, trace))
}
