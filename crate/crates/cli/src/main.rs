//! Command-line driver: seeded Monte Carlo simulation runs, one-off fits on
//! CSV data, and robustification-parameter tuning.

// `!(x > 0.0)` rejects NaN as well; keep the guard as written.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use huberdist::data::read_csv;
use huberdist::estimators::{
    ahr_fit_auto, centralized_ahr, dc_average, distributed_ahr, distributed_ols,
    pooled_residuals, tune_kappa, tune_tau_global, DistOptions, FitTrace,
};
use huberdist::harness::{fmt_sig, run_experiment, ExperimentConfig, Method};
use huberdist::highdim::{
    dc_l1_ahr, dist_reg_ahr, l1_ahr_fit, lasso_fit, tune_kappa_sparse, LambdaSchedule,
    PenaltyConfig,
};
use huberdist::model::{Coefficients, Dataset};
use huberdist::runtime::CommLedger;
use huberdist::solvers::{ols_solve, GdBbOptions, LammOptions};

#[derive(Parser)]
#[command(name = "huberdist", version, about = "Distributed adaptive Huber regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte Carlo experiment from a config file and write CSV results.
    Simulate {
        /// Flat `key = value` experiment configuration.
        #[arg(long)]
        config: PathBuf,
        /// Output directory for estimation.csv / coverage.csv.
        #[arg(long, default_value = "sim_out")]
        out_dir: PathBuf,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker thread count (default: all cores).
        #[arg(long)]
        threads: Option<usize>,
        /// Expand the desk-scale grid to the full study size.
        #[arg(long)]
        full_scale: bool,
    },
    /// Fit one method to a CSV dataset (`y,x1,...,xp`; x1 must be 1).
    Fit {
        #[arg(long)]
        data: PathBuf,
        /// One of: global_ahr dc_ahr dc_ols dist_ols dist_ahr l1_ahr
        /// dc_l1_ahr lasso dist_reg_ahr.
        #[arg(long)]
        method: String,
        /// Shard count; rows are split into m contiguous equal blocks.
        #[arg(long, default_value_t = 1)]
        m: usize,
        /// Global robustification level (default: self-tuned).
        #[arg(long)]
        tau: Option<f64>,
        /// Local robustification level (default: self-tuned).
        #[arg(long)]
        kappa: Option<f64>,
        /// Penalty level; required by the penalized methods.
        #[arg(long)]
        lambda: Option<f64>,
        /// Multiplier c in tau = c sqrt(m) kappa.
        #[arg(long, default_value_t = 1.0)]
        c_mult: f64,
        /// Rounds for dist_reg_ahr (default: floor(ln m), at least 1).
        #[arg(long)]
        rounds: Option<usize>,
    },
    /// Print the self-tuned robustification parameters for a CSV dataset.
    Tune {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 1)]
        m: usize,
        /// Multiplier c in tau = c sqrt(m) kappa.
        #[arg(long, default_value_t = 1.0)]
        c: f64,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Simulate {
            config,
            out_dir,
            seed,
            threads,
            full_scale,
        } => simulate(config, out_dir, seed, threads, full_scale),
        Command::Fit {
            data,
            method,
            m,
            tau,
            kappa,
            lambda,
            c_mult,
            rounds,
        } => fit(data, &method, m, tau, kappa, lambda, c_mult, rounds),
        Command::Tune { data, m, c } => tune(data, m, c),
    }
}

fn simulate(
    config: PathBuf,
    out_dir: PathBuf,
    seed: Option<u64>,
    threads: Option<usize>,
    full_scale: bool,
) -> Result<()> {
    if let Some(k) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .context("worker pool")?;
    }
    let mut cfg = ExperimentConfig::parse_file(&config)
        .with_context(|| format!("loading {}", config.display()))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if full_scale {
        cfg.make_full_scale();
    }
    let result = run_experiment(&cfg, Some(&out_dir))?;
    println!(
        "wrote {} and {}",
        out_dir.join("estimation.csv").display(),
        out_dir.join("coverage.csv").display()
    );
    println!("method,m,dist,l2_mean,l2_sd,rounds_mean,comm_values_mean,failures");
    for s in &result.summaries {
        println!(
            "{},{},{},{},{},{},{},{}",
            s.method.name(),
            s.m,
            s.dist,
            fmt_sig(s.l2_mean),
            fmt_sig(s.l2_sd),
            fmt_sig(s.rounds_mean),
            fmt_sig(s.comm_values_mean),
            s.failures
        );
    }
    Ok(())
}

fn print_fit(method: &str, beta: &Coefficients, trace: Option<&FitTrace>) {
    println!("method: {method}");
    if let Some(trace) = trace {
        println!("rounds: {}", trace.num_rounds());
        println!("comm_values: {}", trace.ledger.values_sent());
    }
    let rendered: Vec<String> = beta.as_slice().iter().map(|v| fmt_sig(*v)).collect();
    println!("beta: {}", rendered.join(","));
}

/// Local robustification level for the data at hand: least-squares pilot
/// residuals on the central shard when it is overdetermined, a lasso pilot
/// with the sparse tuning target otherwise.
fn tuned_kappa(data: &Dataset) -> Result<f64> {
    let central = &data.shards()[..1];
    let p = data.p();
    if data.n() > p {
        let pilot = ols_solve(central, 0.0)?;
        let res = pooled_residuals(central, &pilot);
        Ok(tune_kappa(&res, p)?)
    } else {
        let pilot = lasso_fit(central, 0.1, &Coefficients::zeros(p), &LammOptions::default())?;
        let res = pooled_residuals(central, &pilot);
        Ok(tune_kappa_sparse(&res, p)?)
    }
}

#[allow(clippy::too_many_arguments)]
fn fit(
    data: PathBuf,
    method: &str,
    m: usize,
    tau: Option<f64>,
    kappa: Option<f64>,
    lambda: Option<f64>,
    c_mult: f64,
    rounds: Option<usize>,
) -> Result<()> {
    let method = Method::parse(method)?;
    let ds = read_csv(&data, m).with_context(|| format!("loading {}", data.display()))?;
    let p = ds.p();
    let inner = GdBbOptions::default();
    let lamm = LammOptions::default();
    let need_lambda = || {
        lambda.ok_or_else(|| {
            anyhow::anyhow!("--lambda is required for {}", method.name())
        })
    };
    match method {
        Method::GlobalAhr => {
            let beta = centralized_ahr(&ds, tau, None, &inner)?;
            print_fit(method.name(), &beta, None);
        }
        Method::DcAhr => {
            let locals: Vec<Coefficients> = ds
                .shards()
                .iter()
                .map(|s| ahr_fit_auto(std::slice::from_ref(s), None, &inner))
                .collect::<huberdist::Result<_>>()?;
            print_fit(method.name(), &dc_average(&locals)?, None);
        }
        Method::DcOls => {
            let locals: Vec<Coefficients> = ds
                .shards()
                .iter()
                .map(|s| ols_solve(std::slice::from_ref(s), 0.0))
                .collect::<huberdist::Result<_>>()?;
            print_fit(method.name(), &dc_average(&locals)?, None);
        }
        Method::DistOls => {
            let init = dc_ols_init(&ds)?;
            let mut ledger = CommLedger::new();
            let (beta, trace) =
                distributed_ols(ds.shards(), &init, &DistOptions::default(), &mut ledger)?;
            print_fit(method.name(), &beta, Some(&trace));
        }
        Method::DistAhr => {
            let init = dc_ols_init(&ds)?;
            let k = match kappa {
                Some(k) => k,
                None => tuned_kappa(&ds)?,
            };
            let t = tau.unwrap_or_else(|| tune_tau_global(k, m, c_mult)).max(k);
            let mut ledger = CommLedger::new();
            let (beta, trace) =
                distributed_ahr(ds.shards(), k, t, &init, &DistOptions::default(), &mut ledger)?;
            print_fit(method.name(), &beta, Some(&trace));
        }
        Method::L1Ahr => {
            let penalty = PenaltyConfig::new(need_lambda()?)?;
            let opts = penalty.options(&lamm);
            let t = match tau {
                Some(t) => t,
                None => {
                    let pilot = lasso_fit(
                        ds.shards(),
                        penalty.lambda.max(1e-6),
                        &Coefficients::zeros(p),
                        &opts,
                    )?;
                    let res = pooled_residuals(ds.shards(), &pilot);
                    tune_kappa_sparse(&res, p)?
                }
            };
            let beta = l1_ahr_fit(ds.shards(), t, penalty.lambda, &Coefficients::zeros(p), &opts)?;
            print_fit(method.name(), &beta, None);
        }
        Method::Lasso => {
            let penalty = PenaltyConfig::new(need_lambda()?)?;
            let beta = lasso_fit(
                ds.shards(),
                penalty.lambda,
                &Coefficients::zeros(p),
                &penalty.options(&lamm),
            )?;
            print_fit(method.name(), &beta, None);
        }
        Method::DcL1Ahr => {
            let penalty = PenaltyConfig::new(need_lambda()?)?;
            let k = match kappa {
                Some(k) => k,
                None => tuned_kappa(&ds)?,
            };
            let beta = dc_l1_ahr(ds.shards(), k, penalty.lambda, &penalty.options(&lamm))?;
            print_fit(method.name(), &beta, None);
        }
        Method::DistRegAhr => {
            let lam = need_lambda()?;
            let k = match kappa {
                Some(k) => k,
                None => tuned_kappa(&ds)?,
            };
            let t = tau.unwrap_or_else(|| tune_tau_global(k, m, 1.0)).max(k);
            let t_rounds = rounds.unwrap_or_else(|| ((m as f64).ln().floor() as usize).max(1));
            // constant penalty schedule at the requested level
            let schedule = LambdaSchedule::constant(lam)?;
            let init = lasso_fit(ds.shards(), lam, &Coefficients::zeros(p), &lamm)
                .or_else(|_| l1_ahr_fit(&ds.shards()[..1], k, lam, &Coefficients::zeros(p), &lamm))?;
            let mut ledger = CommLedger::new();
            let (beta, trace) = dist_reg_ahr(
                ds.shards(),
                k,
                t,
                &schedule,
                t_rounds,
                &init,
                &lamm,
                &mut ledger,
            )?;
            print_fit(method.name(), &beta, Some(&trace));
        }
    }
    Ok(())
}

fn dc_ols_init(ds: &Dataset) -> Result<Coefficients> {
    let locals: Vec<Coefficients> = ds
        .shards()
        .iter()
        .map(|s| ols_solve(std::slice::from_ref(s), 0.0))
        .collect::<huberdist::Result<_>>()?;
    Ok(dc_average(&locals)?)
}

fn tune(data: PathBuf, m: usize, c: f64) -> Result<()> {
    if !(c > 0.0) {
        bail!("c must be positive");
    }
    let ds = read_csv(&data, m).with_context(|| format!("loading {}", data.display()))?;
    let kappa = tuned_kappa(&ds)?;
    let tau = tune_tau_global(kappa, m, c).max(kappa);
    println!("kappa: {}", fmt_sig(kappa));
    println!("tau: {}", fmt_sig(tau));
    println!("c: {}", fmt_sig(c));
    Ok(())
}
