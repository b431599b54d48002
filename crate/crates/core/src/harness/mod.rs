//! Monte Carlo experiment driver: per-replication method runs, aggregation
//! into per-(method, m) summaries, and deterministic CSV output.
//!
//! Every replication derives its own data streams from
//! `(seed, m, replication index)`, so cells can run on any number of worker
//! threads without changing a single output byte.

pub mod config;
pub mod output;

pub use config::{ExperimentConfig, Method};
pub use output::fmt_sig;

use std::path::Path;

use rayon::prelude::*;

use crate::data::{generate, mix_seed, GenConfig};
use crate::error::{Error, Result};
use crate::estimators::{
    ahr_fit_auto, centralized_ahr, dc_average, distributed_ahr, distributed_ols,
    pooled_residuals, tune_kappa, tune_tau_global, DistOptions, FitTrace, PooledHuber,
};
use crate::highdim::{
    dist_reg_ahr, l1_ahr_fit, mad_scale, tune_kappa_sparse, LambdaSchedule,
};
use crate::inference::{conf_interval, variance_report};
use crate::model::{Coefficients, Dataset};
use crate::runtime::CommLedger;
use crate::solvers::{ols_solve, GdBbOptions, LammOptions, SmoothProblem};

const TAG_TRAIN: u64 = 1;
const TAG_VALIDATION: u64 = 2;

/// Outcome of one method on one replication.
#[derive(Debug, Clone)]
pub struct MethodRecord {
    pub method: Method,
    pub m: usize,
    pub rep: usize,
    /// `NaN` when the method failed on this replication.
    pub l2_error: f64,
    pub rounds: u64,
    pub comm_values: u64,
    /// Proportion of slope coefficients covered by their CIs (inference
    /// methods only).
    pub coverage: Option<f64>,
    /// Mean CI width over slope coefficients.
    pub mean_width: Option<f64>,
    pub failed: bool,
}

/// Per-(method, m, dist) aggregate over replications.
#[derive(Debug, Clone)]
pub struct McSummary {
    pub method: Method,
    pub m: usize,
    pub dist: &'static str,
    pub l2_mean: f64,
    pub l2_sd: f64,
    pub coverage_mean: Option<f64>,
    pub coverage_sd: Option<f64>,
    pub width_mean: Option<f64>,
    pub width_sd: Option<f64>,
    pub rounds_mean: f64,
    pub comm_values_mean: f64,
    pub failures: usize,
}

/// Everything a finished experiment produced.
#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub records: Vec<MethodRecord>,
    pub summaries: Vec<McSummary>,
    pub estimation_csv: String,
    pub coverage_csv: String,
}

struct RepContext<'a> {
    cfg: &'a ExperimentConfig,
    m: usize,
    rep: usize,
    beta_star: Coefficients,
    train: Dataset,
    validation: Dataset,
}

/// Lazily shared per-replication intermediates (identical across the methods
/// that need them).
#[derive(Default)]
struct RepCache {
    dc_ols: Option<Coefficients>,
    /// Central-shard penalized initializer for the sparse regime (best of a
    /// lasso path and a penalized-Huber path by validation score), with the
    /// tuned local robustification level and a robust residual scale.
    central_init: Option<(Coefficients, f64, f64)>,
}

fn inner_opts() -> GdBbOptions {
    GdBbOptions::default()
}

fn dist_opts() -> DistOptions {
    DistOptions::default()
}

fn lamm_opts() -> LammOptions {
    LammOptions::default()
}

/// Runs every configured method on the replication `(m, rep)`. Method
/// failures become failed-cell markers rather than errors; only setup
/// problems (e.g. an invalid configuration) abort.
pub fn run_replication(cfg: &ExperimentConfig, m: usize, rep: usize) -> Result<Vec<MethodRecord>> {
    let gen_train = GenConfig {
        n: cfg.n,
        p: cfg.p,
        m,
        dist: cfg.dist,
        regime: cfg.regime,
        s: cfg.s,
        seed: mix_seed(cfg.seed, &[TAG_TRAIN, m as u64, rep as u64]),
    };
    let beta_star = gen_train.default_beta_star();
    let train = generate(&gen_train, &beta_star)?;
    let vn = ((cfg.validation_fraction * train.total_n() as f64).floor() as usize).max(1);
    let gen_val = GenConfig {
        n: vn,
        m: 1,
        seed: mix_seed(cfg.seed, &[TAG_VALIDATION, m as u64, rep as u64]),
        ..gen_train
    };
    let validation = generate(&gen_val, &beta_star)?;
    let ctx = RepContext {
        cfg,
        m,
        rep,
        beta_star,
        train,
        validation,
    };
    let mut cache = RepCache::default();
    Ok(cfg
        .methods
        .iter()
        .map(|&method| match try_method(&ctx, &mut cache, method) {
            Ok(rec) => rec,
            Err(_) => MethodRecord {
                method,
                m,
                rep,
                l2_error: f64::NAN,
                rounds: 0,
                comm_values: 0,
                coverage: None,
                mean_width: None,
                failed: true,
            },
        })
        .collect())
}

/// Mean squared prediction error on the held-out set.
fn validation_mse(validation: &Dataset, beta: &Coefficients) -> f64 {
    let res = pooled_residuals(validation.shards(), beta);
    res.iter().map(|r| r * r).sum::<f64>() / res.len() as f64
}

fn central_residuals(ctx: &RepContext, beta: &Coefficients) -> Vec<f64> {
    pooled_residuals(&ctx.train.shards()[..1], beta)
}

impl RepCache {
    fn dc_ols(&mut self, ctx: &RepContext) -> Result<&Coefficients> {
        if self.dc_ols.is_none() {
            let locals: Vec<Coefficients> = ctx
                .train
                .shards()
                .par_iter()
                .map(|s| ols_solve(std::slice::from_ref(s), 0.0))
                .collect::<Result<_>>()?;
            self.dc_ols = Some(dc_average(&locals)?);
        }
        Ok(self.dc_ols.as_ref().unwrap())
    }

    fn central_init(&mut self, ctx: &RepContext) -> Result<&(Coefficients, f64, f64)> {
        if self.central_init.is_none() {
            let central = &ctx.train.shards()[..1];
            let p = ctx.train.p();
            // validation-scored penalty path on the central shard
            let path_best = |tau: f64, warm0: Coefficients| -> Option<(f64, Coefficients)> {
                let problem = PooledHuber::new(central, tau).ok()?;
                let mut warm = warm0;
                let mut best: Option<(f64, Coefficients)> = None;
                for &lam in &lambda_grid(lambda_max(&problem, p)) {
                    let Ok(fit) = l1_ahr_fit(central, tau, lam, &warm, &lamm_opts()) else {
                        continue;
                    };
                    warm = fit.clone();
                    let score = validation_mse(&ctx.validation, &fit);
                    if best.as_ref().map_or(true, |(s, _)| score < *s) {
                        best = Some((score, fit));
                    }
                }
                best
            };
            // lasso initializer, plus a robust penalized-Huber alternative for
            // the draws whose extremes poison a squared-loss path
            let lasso = path_best(f64::INFINITY, Coefficients::zeros(p));
            let robust = lasso.as_ref().and_then(|(_, fit)| {
                let res = central_residuals(ctx, fit);
                let kappa_pilot = tune_kappa_sparse(&res, p).ok()?;
                path_best(kappa_pilot, fit.clone())
            });
            let init = match (lasso, robust) {
                (Some((ls, lf)), Some((rs, rf))) => {
                    if rs < ls {
                        rf
                    } else {
                        lf
                    }
                }
                (Some((_, lf)), None) => lf,
                (None, Some((_, rf))) => rf,
                (None, None) => {
                    return Err(Error::DegenerateInput("local initializer failed".into()))
                }
            };
            let res = central_residuals(ctx, &init);
            let kappa = tune_kappa_sparse(&res, p)?;
            let sigma = mad_scale(&res)?;
            self.central_init = Some((init, kappa, sigma));
        }
        Ok(self.central_init.as_ref().unwrap())
    }
}

/// Largest penalty level worth trying: the gradient infinity norm over
/// penalized coordinates at zero.
fn lambda_max(problem: &dyn SmoothProblem, p: usize) -> f64 {
    let grad = problem.gradient(&vec![0.0; p]);
    grad.iter()
        .skip(1)
        .fold(0.0f64, |acc, g| acc.max(g.abs()))
        .max(1e-12)
}

/// Log-spaced grid from `lam_max` down 1.8 decades. The theoretical optimum
/// sits mid-grid; going much lower buys nothing and makes the proximal
/// solves drastically slower (near-dense iterates).
fn lambda_grid(lam_max: f64) -> Vec<f64> {
    const POINTS: usize = 6;
    (0..POINTS)
        .map(|i| lam_max * 10f64.powf(-1.8 * i as f64 / (POINTS - 1) as f64))
        .collect()
}

/// Calibration grids for the decaying penalty schedule of the multi-round
/// regularized fit.
const CALIBRATION_A: &[f64] = &[0.5, 1.0, 2.0];
const CALIBRATION_B: &[f64] = &[0.5, 1.0, 2.0];

fn try_method(ctx: &RepContext, cache: &mut RepCache, method: Method) -> Result<MethodRecord> {
    let shards = ctx.train.shards();
    let p = ctx.train.p();
    let record = |fit: &Coefficients, rounds: u64, comm: u64, cov: Option<(f64, f64)>| MethodRecord {
        method,
        m: ctx.m,
        rep: ctx.rep,
        l2_error: fit.l2_distance(&ctx.beta_star),
        rounds,
        comm_values: comm,
        coverage: cov.map(|c| c.0),
        mean_width: cov.map(|c| c.1),
        failed: false,
    };

    match method {
        Method::GlobalAhr => {
            let fit = centralized_ahr(&ctx.train, None, None, &inner_opts())?;
            Ok(record(&fit, 0, 0, None))
        }
        Method::DcAhr => {
            let locals: Vec<Coefficients> = shards
                .par_iter()
                .map(|s| ahr_fit_auto(std::slice::from_ref(s), None, &inner_opts()))
                .collect::<Result<_>>()?;
            let fit = dc_average(&locals)?;
            let mut ledger = CommLedger::new();
            ledger.record_one_shot_gather(ctx.m, p);
            Ok(record(&fit, ledger.rounds(), ledger.values_sent(), None))
        }
        Method::DcOls => {
            let fit = cache.dc_ols(ctx)?.clone();
            let mut ledger = CommLedger::new();
            ledger.record_one_shot_gather(ctx.m, p);
            Ok(record(&fit, ledger.rounds(), ledger.values_sent(), None))
        }
        Method::DistOls => {
            let init = cache.dc_ols(ctx)?.clone();
            let mut ledger = CommLedger::new();
            let (fit, trace) = distributed_ols(shards, &init, &dist_opts(), &mut ledger)?;
            let cov = slope_coverage(ctx, &fit, f64::INFINITY)?;
            Ok(record(
                &fit,
                trace.ledger.rounds(),
                trace.ledger.values_sent(),
                Some(cov),
            ))
        }
        Method::DistAhr => {
            let init = cache.dc_ols(ctx)?.clone();
            let mut best = dist_ahr_over_c_grid(ctx, &init)?;
            // A heavy-tailed draw can wreck a local least-squares fit badly
            // enough that the averaged initializer fails the g_0 = 1 gate and
            // every candidate returns it unchanged. Retry from the averaged
            // robust local fits, the other standard one-shot initializer.
            let round_one_stall = best
                .as_ref()
                .map_or(true, |(_, _, trace, _)| trace.accepted_rounds() == 0);
            if round_one_stall && ctx.m > 1 {
                let locals: Vec<Coefficients> = shards
                    .par_iter()
                    .map(|s| ahr_fit_auto(std::slice::from_ref(s), None, &inner_opts()))
                    .collect::<Result<_>>()?;
                let robust_init = dc_average(&locals)?;
                if let Some(cand) = dist_ahr_over_c_grid(ctx, &robust_init)? {
                    if best.as_ref().map_or(true, |(s, ..)| cand.0 < *s) {
                        best = Some(cand);
                    }
                }
            }
            let (_, fit, trace, tau) = best.ok_or_else(|| {
                Error::DegenerateInput("every multiplier in the c grid failed".into())
            })?;
            let cov = slope_coverage(ctx, &fit, tau)?;
            Ok(record(
                &fit,
                trace.ledger.rounds(),
                trace.ledger.values_sent(),
                Some(cov),
            ))
        }
        Method::L1Ahr => {
            let (init, ..) = cache.central_init(ctx)?.clone();
            let pooled = pooled_residuals(shards, &init);
            let tau = tune_kappa_sparse(&pooled, p)?;
            let problem = PooledHuber::new(shards, tau)?;
            let fit = best_on_lambda_path(ctx, |lam, warm| {
                l1_ahr_fit(shards, tau, lam, warm, &lamm_opts())
            }, lambda_max(&problem, p))?;
            Ok(record(&fit, 0, 0, None))
        }
        Method::Lasso => {
            let problem = PooledHuber::new(shards, f64::INFINITY)?;
            let fit = best_on_lambda_path(ctx, |lam, warm| {
                l1_ahr_fit(shards, f64::INFINITY, lam, warm, &lamm_opts())
            }, lambda_max(&problem, p))?;
            Ok(record(&fit, 0, 0, None))
        }
        Method::DcL1Ahr => {
            let (_, kappa, _) = *cache.central_init(ctx)?;
            let central_problem = PooledHuber::new(&shards[..1], kappa)?;
            let grid = lambda_grid(lambda_max(&central_problem, p));
            // per-shard fits along the whole grid (warm-started), then pick
            // the penalty whose shard average validates best
            let paths: Vec<Vec<Option<Coefficients>>> = shards
                .par_iter()
                .map(|s| {
                    let local = std::slice::from_ref(s);
                    let mut warm = Coefficients::zeros(p);
                    let mut fits = Vec::with_capacity(grid.len());
                    for &lam in &grid {
                        match l1_ahr_fit(local, kappa, lam, &warm, &lamm_opts()) {
                            Ok(fit) => {
                                warm = fit.clone();
                                fits.push(Some(fit));
                            }
                            Err(_) => fits.push(None),
                        }
                    }
                    fits
                })
                .collect();
            let mut best: Option<(f64, Coefficients)> = None;
            for (k, _) in grid.iter().enumerate() {
                // an average at this penalty needs every shard's fit
                let at_k: Option<Vec<Coefficients>> =
                    paths.iter().map(|path| path[k].clone()).collect();
                let Some(at_k) = at_k else { continue };
                let avg = dc_average(&at_k)?;
                let score = validation_mse(&ctx.validation, &avg);
                if best.as_ref().map_or(true, |(s, _)| score < *s) {
                    best = Some((score, avg));
                }
            }
            let fit = best
                .ok_or_else(|| Error::DegenerateInput("every penalty level failed".into()))?
                .1;
            let mut ledger = CommLedger::new();
            ledger.record_one_shot_gather(ctx.m, p);
            Ok(record(&fit, ledger.rounds(), ledger.values_sent(), None))
        }
        Method::DistRegAhr => {
            let (init, kappa, sigma) = cache.central_init(ctx)?.clone();
            let s = ctx.cfg.s.expect("validated: sparse regime has s");
            let tau = tune_tau_global(kappa, ctx.m, 1.0).max(kappa);
            let t_rounds = ((ctx.m as f64).ln().floor() as usize).max(1);
            let mut best: Option<(f64, Coefficients, FitTrace)> = None;
            for &a in CALIBRATION_A {
                for &b in CALIBRATION_B {
                    let schedule = LambdaSchedule::from_calibration(
                        a,
                        b,
                        sigma,
                        s,
                        p,
                        ctx.train.n(),
                        ctx.train.total_n(),
                    )?;
                    let mut ledger = CommLedger::new();
                    let Ok((fit, trace)) = dist_reg_ahr(
                        shards,
                        kappa,
                        tau,
                        &schedule,
                        t_rounds,
                        &init,
                        &lamm_opts(),
                        &mut ledger,
                    ) else {
                        continue; // an underpenalized cell diverged; skip it
                    };
                    let score = validation_mse(&ctx.validation, &fit);
                    if best.as_ref().map_or(true, |(sc, ..)| score < *sc) {
                        best = Some((score, fit, trace));
                    }
                }
            }
            let (_, fit, trace) = best.ok_or_else(|| {
                Error::DegenerateInput("every calibration-grid cell failed".into())
            })?;
            Ok(record(
                &fit,
                trace.ledger.rounds(),
                trace.ledger.values_sent(),
                None,
            ))
        }
    }
}

/// Validation-scored sweep of the global-level multipliers: each candidate
/// runs a distributed fit, refreshes the tuned local level once on its own
/// central-shard residuals, and refits. Failing cells are skipped.
fn dist_ahr_over_c_grid(
    ctx: &RepContext,
    init: &Coefficients,
) -> Result<Option<(f64, Coefficients, FitTrace, f64)>> {
    let shards = ctx.train.shards();
    let p = ctx.train.p();
    let res0 = central_residuals(ctx, init);
    let kappa1 = tune_kappa(&res0, p)?;
    let mut best: Option<(f64, Coefficients, FitTrace, f64)> = None;
    for &c in &ctx.cfg.c_grid {
        let attempt = || -> Result<(Coefficients, FitTrace, f64)> {
            let tau1 = tune_tau_global(kappa1, ctx.m, c).max(kappa1);
            let mut ledger = CommLedger::new();
            let (fit1, _) = distributed_ahr(shards, kappa1, tau1, init, &dist_opts(), &mut ledger)?;
            let res1 = central_residuals(ctx, &fit1);
            let kappa2 = tune_kappa(&res1, p)?;
            let tau2 = tune_tau_global(kappa2, ctx.m, c).max(kappa2);
            let mut ledger2 = CommLedger::new();
            let (fit2, trace2) =
                distributed_ahr(shards, kappa2, tau2, &fit1, &dist_opts(), &mut ledger2)?;
            Ok((fit2, trace2, tau2))
        };
        let Ok((fit2, trace2, tau2)) = attempt() else {
            continue;
        };
        let score = validation_mse(&ctx.validation, &fit2);
        if best.as_ref().map_or(true, |(s, ..)| score < *s) {
            best = Some((score, fit2, trace2, tau2));
        }
    }
    Ok(best)
}

/// Warm-started descent along a penalty grid, returning the fit with the best
/// validation score.
fn best_on_lambda_path(
    ctx: &RepContext,
    mut fit_at: impl FnMut(f64, &Coefficients) -> Result<Coefficients>,
    lam_max: f64,
) -> Result<Coefficients> {
    let p = ctx.train.p();
    let mut warm = Coefficients::zeros(p);
    let mut best: Option<(f64, Coefficients)> = None;
    for &lam in &lambda_grid(lam_max) {
        let Ok(fit) = fit_at(lam, &warm) else { continue };
        warm = fit.clone();
        let score = validation_mse(&ctx.validation, &fit);
        if best.as_ref().map_or(true, |(s, _)| score < *s) {
            best = Some((score, fit));
        }
    }
    Ok(best
        .ok_or_else(|| Error::DegenerateInput("every penalty level failed".into()))?
        .1)
}

/// Per-replication coverage proportion and mean CI width over the slope
/// coefficients, using the averaged sandwich standard deviations.
fn slope_coverage(ctx: &RepContext, fit: &Coefficients, tau: f64) -> Result<(f64, f64)> {
    let report = variance_report(ctx.train.shards(), fit, tau, 0.0, None)?;
    let total_n = ctx.train.total_n();
    let p = fit.len();
    let mut covered = 0usize;
    let mut width_sum = 0.0;
    for j in 1..p {
        let ci = conf_interval(fit[j], report.sigma_hat[j], total_n, ctx.cfg.alpha);
        if ci.covers(ctx.beta_star[j]) {
            covered += 1;
        }
        width_sum += ci.width();
    }
    let slopes = (p - 1) as f64;
    Ok((covered as f64 / slopes, width_sum / slopes))
}

/// Runs the whole experiment grid, aggregates summaries, renders the CSVs,
/// and (optionally) writes them into `out_dir` as `estimation.csv` and
/// `coverage.csv`.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: Option<&Path>) -> Result<ExperimentResult> {
    cfg.validate()?;
    let cells: Vec<(usize, usize)> = cfg
        .m_grid
        .iter()
        .flat_map(|&m| (0..cfg.reps).map(move |rep| (m, rep)))
        .collect();
    let per_cell: Vec<Result<Vec<MethodRecord>>> = cells
        .par_iter()
        .map(|&(m, rep)| run_replication(cfg, m, rep))
        .collect();
    let mut records = Vec::with_capacity(cells.len() * cfg.methods.len());
    for cell in per_cell {
        records.extend(cell?);
    }
    let summaries = summarize(cfg, &records);
    let estimation_csv = output::render_estimation_csv(&records, cfg.dist.tag());
    let coverage_csv = output::render_coverage_csv(&summaries, cfg.dist.tag());
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let est_path = dir.join("estimation.csv");
        std::fs::write(&est_path, &estimation_csv).map_err(|e| Error::io(est_path.clone(), e))?;
        let cov_path = dir.join("coverage.csv");
        std::fs::write(&cov_path, &coverage_csv).map_err(|e| Error::io(cov_path.clone(), e))?;
    }
    Ok(ExperimentResult {
        records,
        summaries,
        estimation_csv,
        coverage_csv,
    })
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn summarize(cfg: &ExperimentConfig, records: &[MethodRecord]) -> Vec<McSummary> {
    let mut out = Vec::new();
    for &m in &cfg.m_grid {
        for &method in &cfg.methods {
            let cell: Vec<&MethodRecord> = records
                .iter()
                .filter(|r| r.m == m && r.method == method)
                .collect();
            let ok: Vec<&&MethodRecord> = cell.iter().filter(|r| !r.failed).collect();
            let l2: Vec<f64> = ok.iter().map(|r| r.l2_error).collect();
            let (l2_mean, l2_sd) = mean_sd(&l2);
            let rounds: Vec<f64> = ok.iter().map(|r| r.rounds as f64).collect();
            let comm: Vec<f64> = ok.iter().map(|r| r.comm_values as f64).collect();
            let coverage: Vec<f64> = ok.iter().filter_map(|r| r.coverage).collect();
            let widths: Vec<f64> = ok.iter().filter_map(|r| r.mean_width).collect();
            let (coverage_mean, coverage_sd, width_mean, width_sd) = if coverage.is_empty() {
                (None, None, None, None)
            } else {
                let (cm, cs) = mean_sd(&coverage);
                let (wm, ws) = mean_sd(&widths);
                (Some(cm), Some(cs), Some(wm), Some(ws))
            };
            out.push(McSummary {
                method,
                m,
                dist: cfg.dist.tag(),
                l2_mean,
                l2_sd,
                coverage_mean,
                coverage_sd,
                width_mean,
                width_sd,
                rounds_mean: mean_sd(&rounds).0,
                comm_values_mean: mean_sd(&comm).0,
                failures: cell.len() - ok.len(),
            });
        }
    }
    out
}
