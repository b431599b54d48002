//! Low-dimensional estimators: the multi-round distributed adaptive Huber
//! fit with early stopping, its centralized counterpart, divide-and-conquer
//! averaging, the distributed least-squares baseline, and robustification
//! parameter tuning.

use crate::error::{Error, Result};
use crate::model::{
    shard_gradient, shard_loss_sum, shard_sums, Coefficients, Dataset, Shard,
};
use crate::runtime::{gather_gradients, CommLedger};
use crate::solvers::{gd_bb_minimize, inf_norm, ols_solve, GdBbOptions, SmoothProblem};

/// Mean Huber loss over the pooled rows of a shard group, evaluated in
/// shard-id order. With a single shard this is bit-identical to the
/// per-shard loss.
pub(crate) struct PooledHuber<'a> {
    shards: &'a [Shard],
    tau: f64,
    total_n: f64,
}

impl<'a> PooledHuber<'a> {
    pub(crate) fn new(shards: &'a [Shard], tau: f64) -> Result<Self> {
        if shards.is_empty() {
            return Err(Error::InvalidArgument("no shards".into()));
        }
        if !(tau > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "tau must be positive, got {tau}"
            )));
        }
        let p = shards[0].p();
        for s in shards {
            if s.p() != p {
                return Err(Error::DimensionMismatch {
                    expected: p,
                    got: s.p(),
                });
            }
        }
        let total_n = shards.iter().map(|s| s.n()).sum::<usize>() as f64;
        Ok(PooledHuber {
            shards,
            tau,
            total_n,
        })
    }
}

impl SmoothProblem for PooledHuber<'_> {
    fn dim(&self) -> usize {
        self.shards[0].p()
    }

    fn value(&self, beta: &[f64]) -> f64 {
        let mut acc = 0.0;
        for s in self.shards {
            acc += shard_loss_sum(s, beta, self.tau);
        }
        acc / self.total_n
    }

    fn value_and_gradient(&self, beta: &[f64]) -> (f64, Vec<f64>) {
        let p = self.dim();
        let mut grad = vec![0.0; p];
        let mut acc = 0.0;
        for s in self.shards {
            acc += shard_sums(s, beta, self.tau, &mut grad);
        }
        let inv = 1.0 / self.total_n;
        for g in &mut grad {
            *g *= inv;
        }
        (acc * inv, grad)
    }
}

/// The shifted loss solved on the central shard each round:
/// `L_tilde(beta) = L_{1,kappa}(beta) - <shift, beta>` with
/// `shift = grad L_{1,kappa}(anchor) - global_gradient(anchor)`.
///
/// Its gradient at any `beta` is the central shard's local gradient minus the
/// shift, so at the anchor it coincides with the global gradient.
pub struct ShiftedLossSpec<'a> {
    central: &'a Shard,
    kappa: f64,
    anchor: Coefficients,
    shift: Vec<f64>,
}

impl<'a> ShiftedLossSpec<'a> {
    pub fn new(
        central: &'a Shard,
        kappa: f64,
        anchor: Coefficients,
        global_gradient: &[f64],
    ) -> Result<Self> {
        if global_gradient.len() != central.p() {
            return Err(Error::DimensionMismatch {
                expected: central.p(),
                got: global_gradient.len(),
            });
        }
        let local = shard_gradient(central, &anchor, kappa)?;
        let shift: Vec<f64> = local
            .iter()
            .zip(global_gradient.iter())
            .map(|(l, g)| l - g)
            .collect();
        Ok(ShiftedLossSpec {
            central,
            kappa,
            anchor,
            shift,
        })
    }

    pub fn anchor(&self) -> &Coefficients {
        &self.anchor
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// The precomputed gradient-shift vector.
    pub fn shift(&self) -> &[f64] {
        &self.shift
    }
}

impl SmoothProblem for ShiftedLossSpec<'_> {
    fn dim(&self) -> usize {
        self.central.p()
    }

    fn value(&self, beta: &[f64]) -> f64 {
        let n = self.central.n() as f64;
        shard_loss_sum(self.central, beta, self.kappa) / n
            - crate::model::dot(&self.shift, beta)
    }

    fn value_and_gradient(&self, beta: &[f64]) -> (f64, Vec<f64>) {
        let p = self.dim();
        let n = self.central.n() as f64;
        let mut grad = vec![0.0; p];
        let loss = shard_sums(self.central, beta, self.kappa, &mut grad) / n;
        for j in 0..p {
            grad[j] = grad[j] / n - self.shift[j];
        }
        (loss - crate::model::dot(&self.shift, beta), grad)
    }
}

/// One communication round of a multi-round fit.
#[derive(Debug, Clone)]
pub struct RoundRecord {
    /// The iterate held after this round (unchanged when the round stopped
    /// the fit).
    pub beta: Coefficients,
    /// `g_t`: infinity norm of the gathered global gradient, exactly as
    /// tested by the early-stop rule.
    pub grad_infnorm: f64,
    /// Inner-solver iterations spent this round; 0 for a stopping round.
    pub inner_iterations: usize,
}

/// Per-round history of a multi-round fit plus the communication it cost.
#[derive(Debug, Clone, Default)]
pub struct FitTrace {
    pub rounds: Vec<RoundRecord>,
    /// This fit's own communication (delta of the caller's ledger).
    pub ledger: CommLedger,
}

impl FitTrace {
    /// Rounds that ran an inner solve (as opposed to triggering the stop).
    pub fn accepted_rounds(&self) -> usize {
        self.rounds.iter().filter(|r| r.inner_iterations > 0).count()
    }

    pub fn num_rounds(&self) -> usize {
        self.rounds.len()
    }
}

#[derive(Debug, Clone)]
pub struct DistOptions {
    /// Cap on communication rounds; the early-stop rule usually fires first.
    pub t_max: usize,
    /// Stop once the global gradient infinity norm falls to this level.
    pub g_stop: f64,
    pub inner: GdBbOptions,
}

impl Default for DistOptions {
    fn default() -> Self {
        DistOptions {
            t_max: 50,
            g_stop: 1e-5,
            inner: GdBbOptions::default(),
        }
    }
}

/// Multi-round distributed adaptive Huber regression.
///
/// Starting from `beta0` with `g_0 = 1`, each round gathers the global
/// `tau`-gradient at the current iterate, stops if its infinity norm `g_t`
/// failed to decrease or is already below `g_stop`, and otherwise minimizes
/// the shifted loss on the central shard, warm-started at the current
/// iterate.
pub fn distributed_ahr(
    shards: &[Shard],
    kappa: f64,
    tau: f64,
    beta0: &Coefficients,
    opts: &DistOptions,
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
    let ledger_start = *ledger;
    let mut beta = beta0.clone();
    let mut g_prev = 1.0; // g_0
    let mut rounds: Vec<RoundRecord> = Vec::new();
    for _t in 1..=opts.t_max {
        let gather = gather_gradients(shards, &beta, tau, ledger)?;
        let g_t = inf_norm(&gather.mean_gradient);
        if g_t >= g_prev || g_t <= opts.g_stop {
            rounds.push(RoundRecord {
                beta: beta.clone(),
                grad_infnorm: g_t,
                inner_iterations: 0,
            });
            break;
        }
        let shifted = ShiftedLossSpec::new(&shards[0], kappa, beta.clone(), &gather.mean_gradient)?;
        match gd_bb_minimize(&shifted, &beta, &opts.inner) {
            Ok(report) => {
                beta = report.beta_hat;
                rounds.push(RoundRecord {
                    beta: beta.clone(),
                    grad_infnorm: g_t,
                    inner_iterations: report.iterations,
                });
                g_prev = g_t;
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

/// Distributed least squares: the same loop as [`distributed_ahr`] with the
/// Huber loss replaced by squared loss, i.e. `tau = kappa = +inf` on the
/// unclipped code path.
pub fn distributed_ols(
    shards: &[Shard],
    beta0: &Coefficients,
    opts: &DistOptions,
    ledger: &mut CommLedger,
) -> Result<(Coefficients, FitTrace)> {
    distributed_ahr(shards, f64::INFINITY, f64::INFINITY, beta0, opts, ledger)
}

/// Coordinatewise arithmetic mean of local fits (divide-and-conquer
/// aggregation).
pub fn dc_average(local_fits: &[Coefficients]) -> Result<Coefficients> {
    let first = local_fits
        .first()
        .ok_or_else(|| Error::InvalidArgument("no local fits to average".into()))?;
    let p = first.len();
    let mut mean = vec![0.0; p];
    for fit in local_fits {
        if fit.len() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: fit.len(),
            });
        }
        for j in 0..p {
            mean[j] += fit[j];
        }
    }
    let inv = 1.0 / local_fits.len() as f64;
    for v in &mut mean {
        *v *= inv;
    }
    Coefficients::new(mean)
}

/// Residuals over the pooled rows of `shards` at `beta`, in shard-id order.
pub fn pooled_residuals(shards: &[Shard], beta: &Coefficients) -> Vec<f64> {
    let b = beta.as_slice();
    let mut out = Vec::with_capacity(shards.iter().map(|s| s.n()).sum());
    for s in shards {
        for i in 0..s.n() {
            out.push(s.residual(i, b));
        }
    }
    out
}

/// Self-tuned robustification level: the root `kappa` of
/// `(1/(n-p)) sum_i min(r_i^2, kappa^2) / kappa^2 = (p + log n) / n`,
/// found by bisection. Returns `max |r_i|` (effectively unclipped) when the
/// target is >= 1 or the equation has no sign change.
pub fn tune_kappa(residuals: &[f64], p: usize) -> Result<f64> {
    let n = residuals.len();
    if n == 0 {
        return Err(Error::InvalidArgument("no residuals".into()));
    }
    let target = (p as f64 + (n as f64).ln()) / n as f64;
    let dof = n.saturating_sub(p).max(1) as f64;
    tune_kappa_with(residuals, target, dof)
}

/// Shared bisection core: solves
/// `(1/dof) sum_i min(r_i^2, kappa^2) / kappa^2 = target`.
pub(crate) fn tune_kappa_with(residuals: &[f64], target: f64, dof: f64) -> Result<f64> {
    let max_abs = residuals.iter().fold(0.0f64, |a, r| a.max(r.abs()));
    if max_abs == 0.0 {
        return Err(Error::DegenerateInput("all residuals are zero".into()));
    }
    if target >= 1.0 {
        return Ok(max_abs);
    }
    let f = |kappa: f64| -> f64 {
        let k2 = kappa * kappa;
        let mut acc = 0.0;
        for r in residuals {
            acc += (r * r).min(k2);
        }
        acc / k2 / dof - target
    };
    let mut lo = 1e-10 * max_abs;
    if f(lo) <= 0.0 {
        return Ok(max_abs);
    }
    let mut hi = max_abs;
    while f(hi) > 0.0 {
        hi *= 2.0;
        if !hi.is_finite() {
            return Ok(max_abs);
        }
    }
    for _ in 0..200 {
        if hi - lo <= 1e-12 * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Global robustification level `tau = c sqrt(m) kappa`.
pub fn tune_tau_global(kappa: f64, m: usize, c_mult: f64) -> f64 {
    c_mult * (m as f64).sqrt() * kappa
}

/// Huber fit at a fixed robustification level over the pooled rows of
/// `shards`, warm-started at `beta0`.
pub fn ahr_fit(
    shards: &[Shard],
    tau: f64,
    beta0: &Coefficients,
    inner: &GdBbOptions,
) -> Result<Coefficients> {
    let problem = PooledHuber::new(shards, tau)?;
    Ok(gd_bb_minimize(&problem, beta0, inner)?.beta_hat)
}

/// Self-tuned Huber fit: a pilot least-squares fit supplies residuals for the
/// tuning equation, the model is fit once, the level is re-tuned on the new
/// residuals, and the model is refit once.
pub fn ahr_fit_auto(
    shards: &[Shard],
    beta0: Option<&Coefficients>,
    inner: &GdBbOptions,
) -> Result<Coefficients> {
    let pilot = ols_solve(shards, 0.0)?;
    let start = beta0.unwrap_or(&pilot).clone();
    let p = shards[0].p();
    let res = pooled_residuals(shards, &pilot);
    if res.iter().all(|r| *r == 0.0) {
        return Ok(pilot); // already an exact fit
    }
    let tau1 = tune_kappa(&res, p)?;
    let fit1 = ahr_fit(shards, tau1, &start, inner)?;
    let res2 = pooled_residuals(shards, &fit1);
    if res2.iter().all(|r| *r == 0.0) {
        return Ok(fit1);
    }
    let tau2 = tune_kappa(&res2, p)?;
    ahr_fit(shards, tau2, &fit1, inner)
}

/// Centralized adaptive Huber regression on the pooled dataset.
///
/// `tau = None` runs the self-tuning procedure of [`ahr_fit_auto`];
/// `beta0 = None` starts from the pooled least-squares pilot.
pub fn centralized_ahr(
    data: &Dataset,
    tau: Option<f64>,
    beta0: Option<&Coefficients>,
    inner: &GdBbOptions,
) -> Result<Coefficients> {
    match tau {
        Some(t) => {
            let start = match beta0 {
                Some(b) => b.clone(),
                None => ols_solve(data.shards(), 0.0)?,
            };
            ahr_fit(data.shards(), t, &start, inner)
        }
        None => ahr_fit_auto(data.shards(), beta0, inner),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, generate_noiseless, ErrorDist, GenConfig, Regime};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn gen(n: usize, p: usize, m: usize, dist: ErrorDist, seed: u64) -> Dataset {
        let cfg = GenConfig {
            n,
            p,
            m,
            dist,
            regime: Regime::LowDim,
            s: None,
            seed,
        };
        generate(&cfg, &cfg.default_beta_star()).unwrap()
    }

    #[test]
    fn tau_global_arithmetic() {
        assert_eq!(tune_tau_global(2.0, 4, 1.0), 4.0);
        assert_eq!(tune_tau_global(1.7, 1, 1.0), 1.7);
        assert!((tune_tau_global(1.0, 2, 3.0) - 3.0 * 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn tune_kappa_equal_residuals_closed_form() {
        // all |r_i| = r: on the kappa > r branch the tuning equation gives
        // kappa^2 = n^2 r^2 / ((n - p)(p + log n)); cross-checked against the
        // bisection implementation.
        let (n, p, r) = (2000usize, 5usize, 0.8f64);
        let residuals = vec![r; n];
        let kappa = tune_kappa(&residuals, p).unwrap();
        let nf = n as f64;
        let closed = r * (nf * nf / ((nf - p as f64) * (p as f64 + nf.ln()))).sqrt();
        assert!(
            (kappa - closed).abs() / closed < 1e-9,
            "kappa={kappa}, closed={closed}"
        );
        // and kappa ~ r sqrt(n / (p + log n)) for n >> p
        let approx = r * (nf / (p as f64 + nf.ln())).sqrt();
        assert!((kappa - approx).abs() / approx < 0.01);
    }

    #[test]
    fn tune_kappa_matches_grid_scan_oracle() {
        // independent oracle: sorted prefix sums allow O(log n) evaluation of
        // the tuning function on a fine grid; locate the sign change there.
        let mut rng = StdRng::seed_from_u64(1234);
        let (n, p) = (500usize, 20usize);
        let residuals: Vec<f64> = (0..n)
            .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        let kappa = tune_kappa(&residuals, p).unwrap();

        let mut sq: Vec<f64> = residuals.iter().map(|r| r * r).collect();
        sq.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut prefix = vec![0.0];
        for v in &sq {
            prefix.push(prefix.last().unwrap() + v);
        }
        let target = (p as f64 + (n as f64).ln()) / n as f64;
        let dof = (n - p) as f64;
        let f = |kappa: f64| {
            let k2 = kappa * kappa;
            let idx = sq.partition_point(|v| *v <= k2);
            let acc = prefix[idx] + k2 * (n - idx) as f64;
            acc / k2 / dof - target
        };
        let max_abs = residuals.iter().fold(0.0f64, |a, r| a.max(r.abs()));
        let grid = 1_000_000usize;
        let mut root = None;
        let mut prev = f(max_abs * 1e-6);
        for i in 1..=grid {
            let k = max_abs * 1e-6 + (2.0 * max_abs - max_abs * 1e-6) * i as f64 / grid as f64;
            let cur = f(k);
            if prev > 0.0 && cur <= 0.0 {
                root = Some(k);
                break;
            }
            prev = cur;
        }
        let root = root.expect("grid scan found no sign change");
        assert!(
            (kappa - root).abs() / root < 1e-4,
            "bisection {kappa} vs grid {root}"
        );
    }

    #[test]
    fn tuning_function_is_non_increasing() {
        let mut rng = StdRng::seed_from_u64(9);
        let residuals: Vec<f64> = (0..200).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let dof = 195.0;
        let eval = |kappa: f64| {
            let k2 = kappa * kappa;
            residuals.iter().map(|r| (r * r).min(k2)).sum::<f64>() / k2 / dof
        };
        let mut prev = f64::INFINITY;
        let mut k = 0.01;
        while k < 10.0 {
            let cur = eval(k);
            assert!(cur <= prev + 1e-12);
            prev = cur;
            k *= 1.3;
        }
    }

    #[test]
    fn tune_kappa_degenerate_and_unclipped_cases() {
        assert!(matches!(
            tune_kappa(&[0.0; 50], 2),
            Err(Error::DegenerateInput(_))
        ));
        // target >= 1: p + log n >= n
        let r = vec![1.0, -2.0, 0.5, 0.25];
        let kappa = tune_kappa(&r, 10).unwrap();
        assert_eq!(kappa, 2.0); // max |r_i|
    }

    #[test]
    fn shift_cancels_for_single_shard_equal_taus() {
        let ds = gen(60, 4, 1, ErrorDist::StudentT2, 31);
        let shard = ds.shard(0);
        let anchor = Coefficients::new(vec![1.0, 0.5, -0.2, 0.3]).unwrap();
        let tau = 2.5;
        let mut ledger = CommLedger::new();
        let gather = gather_gradients(ds.shards(), &anchor, tau, &mut ledger).unwrap();
        let shifted = ShiftedLossSpec::new(shard, tau, anchor, &gather.mean_gradient).unwrap();
        assert!(shifted.shift().iter().all(|v| *v == 0.0));
        // shifted loss gradient equals the local Huber gradient at random betas
        let mut rng = StdRng::seed_from_u64(3);
        for _ in 0..10 {
            let beta =
                Coefficients::new((0..4).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap();
            let (_, shifted_grad) = shifted.value_and_gradient(beta.as_slice());
            let local = shard_gradient(shard, &beta, tau).unwrap();
            for j in 0..4 {
                assert!((shifted_grad[j] - local[j]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn single_machine_equals_centralized() {
        let ds = gen(150, 5, 1, ErrorDist::Normal, 77);
        let tau = 3.0;
        let beta0 = ols_solve(ds.shards(), 0.0).unwrap();
        let inner = GdBbOptions::default();
        let central = centralized_ahr(&ds, Some(tau), Some(&beta0), &inner).unwrap();
        let mut ledger = CommLedger::new();
        let (dist, _) = distributed_ahr(
            ds.shards(),
            tau,
            tau,
            &beta0,
            &DistOptions::default(),
            &mut ledger,
        )
        .unwrap();
        assert!(central.l2_distance(&dist) <= 1e-6);
    }

    #[test]
    fn noiseless_fit_stops_immediately() {
        let cfg = GenConfig {
            n: 80,
            p: 6,
            m: 4,
            dist: ErrorDist::Normal,
            regime: Regime::LowDim,
            s: None,
            seed: 11,
        };
        let beta_star = cfg.default_beta_star();
        let ds = generate_noiseless(&cfg, &beta_star).unwrap();
        let beta0 = ols_solve(ds.shards(), 0.0).unwrap();
        let mut ledger = CommLedger::new();
        let (fit, trace) = distributed_ahr(
            ds.shards(),
            1.0,
            2.0,
            &beta0,
            &DistOptions::default(),
            &mut ledger,
        )
        .unwrap();
        assert!(fit.l2_distance(&beta_star) < 1e-6);
        assert!(trace.num_rounds() <= 2, "rounds: {}", trace.num_rounds());
        assert!(trace.rounds.last().unwrap().grad_infnorm <= 1e-5);
    }

    #[test]
    fn early_stop_at_round_one_returns_initializer() {
        // an absurd initializer makes g_1 >= g_0 = 1
        let ds = gen(50, 3, 2, ErrorDist::Normal, 5);
        let beta0 = Coefficients::new(vec![1e4, -1e4, 1e4]).unwrap();
        let mut ledger = CommLedger::new();
        let (fit, trace) = distributed_ahr(
            ds.shards(),
            5.0,
            10.0,
            &beta0,
            &DistOptions::default(),
            &mut ledger,
        )
        .unwrap();
        assert_eq!(fit, beta0);
        assert_eq!(trace.num_rounds(), 1);
        assert_eq!(trace.accepted_rounds(), 0);
    }

    #[test]
    fn returned_iterate_has_minimal_accepted_gradient() {
        let ds = gen(100, 8, 5, ErrorDist::StudentT2, 404);
        let beta0 = ols_solve(&ds.shards()[..1], 0.0).unwrap(); // local init: room to improve
        let mut ledger = CommLedger::new();
        let (_, trace) = distributed_ahr(
            ds.shards(),
            2.0,
            4.0,
            &beta0,
            &DistOptions::default(),
            &mut ledger,
        )
        .unwrap();
        let accepted: Vec<f64> = trace
            .rounds
            .iter()
            .filter(|r| r.inner_iterations > 0)
            .map(|r| r.grad_infnorm)
            .collect();
        if accepted.len() >= 2 {
            let min = accepted.iter().cloned().fold(f64::INFINITY, f64::min);
            assert_eq!(*accepted.last().unwrap(), min);
            for w in accepted.windows(2) {
                assert!(w[1] < w[0]);
            }
        }
        // a T-round fit logs exactly T gather rounds
        assert_eq!(trace.ledger.rounds(), trace.num_rounds() as u64);
    }

    #[test]
    fn warm_start_is_exact() {
        // with the inner solver disabled every round keeps the initializer
        let ds = gen(40, 3, 3, ErrorDist::Normal, 2);
        let beta0 = ols_solve(ds.shards(), 0.0).unwrap();
        let opts = DistOptions {
            t_max: 3,
            inner: GdBbOptions {
                max_iter: 0,
                ..Default::default()
            },
            ..Default::default()
        };
        let mut ledger = CommLedger::new();
        let (fit, trace) = distributed_ahr(ds.shards(), 2.0, 2.0, &beta0, &opts, &mut ledger).unwrap();
        assert_eq!(fit, beta0);
        for r in &trace.rounds {
            assert_eq!(r.beta, beta0);
        }
    }

    #[test]
    fn dc_average_cases() {
        let a = Coefficients::new(vec![1.0, 2.0]).unwrap();
        assert_eq!(dc_average(std::slice::from_ref(&a)).unwrap(), a);
        let b = Coefficients::new(vec![-1.0, -2.0]).unwrap();
        assert_eq!(
            dc_average(&[a.clone(), b]).unwrap(),
            Coefficients::zeros(2)
        );
        let c = Coefficients::new(vec![4.0, 5.0]).unwrap();
        let d = Coefficients::new(vec![1.0, -1.0]).unwrap();
        let e = Coefficients::new(vec![1.0, 2.0]).unwrap();
        assert_eq!(
            dc_average(&[c, d, e]).unwrap(),
            Coefficients::new(vec![2.0, 2.0]).unwrap()
        );
        assert!(dc_average(&[]).is_err());
    }

    #[test]
    fn unclipped_centralized_fit_matches_ols() {
        let ds = gen(120, 4, 2, ErrorDist::Normal, 13);
        let inner = GdBbOptions {
            grad_tol: 1e-12,
            max_iter: 5000,
            ..Default::default()
        };
        let fit = centralized_ahr(&ds, Some(f64::INFINITY), None, &inner).unwrap();
        let ols = ols_solve(ds.shards(), 0.0).unwrap();
        assert!(fit.l2_distance(&ols) < 1e-8, "{}", fit.l2_distance(&ols));
    }

    #[test]
    fn noiseless_centralized_auto_recovers_truth() {
        let cfg = GenConfig {
            n: 100,
            p: 5,
            m: 2,
            dist: ErrorDist::Normal,
            regime: Regime::LowDim,
            s: None,
            seed: 21,
        };
        let beta_star = cfg.default_beta_star();
        let ds = generate_noiseless(&cfg, &beta_star).unwrap();
        let fit = centralized_ahr(&ds, None, None, &GdBbOptions::default()).unwrap();
        assert!(fit.l2_distance(&beta_star) < 1e-8);
    }

    #[test]
    fn adaptive_fit_beats_ols_under_t2_errors() {
        // paired Monte Carlo: centralized adaptive Huber vs least squares on
        // t2 errors, N = 8000, p = 20; the robust fit should win most
        // replications.
        let mut wins = 0;
        let reps = 100;
        for rep in 0..reps {
            let cfg = GenConfig {
                n: 8000,
                p: 20,
                m: 1,
                dist: ErrorDist::StudentT2,
                regime: Regime::LowDim,
                s: None,
                seed: 9000 + rep,
            };
            let beta_star = cfg.default_beta_star();
            let ds = generate(&cfg, &beta_star).unwrap();
            let huber = centralized_ahr(&ds, None, None, &GdBbOptions::default()).unwrap();
            let ols = ols_solve(ds.shards(), 0.0).unwrap();
            if huber.l2_distance(&beta_star) < ols.l2_distance(&beta_star) {
                wins += 1;
            }
        }
        assert!(wins >= 80, "adaptive fit won only {wins}/{reps}");
    }

    #[test]
    fn distributed_ols_single_machine_is_local_ols() {
        let ds = gen(90, 4, 1, ErrorDist::Normal, 55);
        let beta0 = ols_solve(ds.shards(), 0.0).unwrap();
        let mut ledger = CommLedger::new();
        let opts = DistOptions {
            inner: GdBbOptions {
                grad_tol: 1e-10,
                ..Default::default()
            },
            ..Default::default()
        };
        let (fit, _) = distributed_ols(ds.shards(), &beta0, &opts, &mut ledger).unwrap();
        assert!(fit.l2_distance(&beta0) < 1e-8);
    }

    #[test]
    fn distributed_ols_matches_pooled_ols_from_dc_init() {
        // 10-shard desk case with normal errors: one or two rounds from the
        // divide-and-conquer initializer land on the pooled least-squares fit.
        let ds = gen(200, 5, 10, ErrorDist::Normal, 808);
        let locals: Vec<Coefficients> = ds
            .shards()
            .iter()
            .map(|s| ols_solve(std::slice::from_ref(s), 0.0).unwrap())
            .collect();
        let dc = dc_average(&locals).unwrap();
        let mut ledger = CommLedger::new();
        let opts = DistOptions {
            inner: GdBbOptions {
                grad_tol: 1e-9,
                ..Default::default()
            },
            g_stop: 1e-8,
            ..Default::default()
        };
        let (fit, _) = distributed_ols(ds.shards(), &dc, &opts, &mut ledger).unwrap();
        let pooled = ols_solve(ds.shards(), 0.0).unwrap();
        assert!(fit.l2_distance(&pooled) < 1e-6, "{}", fit.l2_distance(&pooled));
    }
}
