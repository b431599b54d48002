//! Simulated distributed fabric: broadcast/gather of coefficient and gradient
//! vectors across shards with communication-cost accounting.
//!
//! Shard gradients may be computed on worker threads, but the reduction into
//! the mean always runs in ascending shard-id order, so results do not depend
//! on the execution schedule.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{shard_gradient, Coefficients, Shard};

/// Running count of communication rounds and scalar values moved between the
/// central machine and the locals. One full gradient round moves `2(m-1)p`
/// values: the p-vector iterate down to each of the `m-1` locals and a
/// p-vector gradient back up from each.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CommLedger {
    rounds: u64,
    values_sent: u64,
}

impl CommLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn rounds(&self) -> u64 {
        self.rounds
    }

    pub fn values_sent(&self) -> u64 {
        self.values_sent
    }

    /// The ledger counts scalar values; this is the 64-bit-float bit view.
    pub fn bits_sent(&self) -> u64 {
        self.values_sent * 64
    }

    pub fn record_gradient_round(&mut self, m: usize, p: usize) {
        self.rounds += 1;
        self.values_sent += 2 * (m as u64 - 1) * p as u64;
    }

    /// One-shot aggregation (e.g. divide-and-conquer averaging): `m-1`
    /// p-vectors travel up, nothing is broadcast.
    pub fn record_one_shot_gather(&mut self, m: usize, p: usize) {
        self.rounds += 1;
        self.values_sent += (m as u64 - 1) * p as u64;
    }

    /// Counters accumulated since `start` (for per-fit reporting on a shared
    /// ledger).
    pub fn since(&self, start: &CommLedger) -> CommLedger {
        CommLedger {
            rounds: self.rounds - start.rounds,
            values_sent: self.values_sent - start.values_sent,
        }
    }
}

/// Result of one gradient gather.
#[derive(Debug, Clone)]
pub struct GatherResult {
    /// Equi-weighted mean of the per-shard gradients, reduced in shard-id
    /// order.
    pub mean_gradient: Vec<f64>,
    /// Per-shard gradients, when requested via [`gather_gradients_full`].
    pub per_shard: Option<Vec<Vec<f64>>>,
}

/// Broadcasts `beta`, evaluates every shard's Huber gradient at level `tau`,
/// and returns their mean. Accounts one gradient round on the ledger.
///
/// `tau = f64::INFINITY` gives the unclipped (squared-loss) gradients.
pub fn gather_gradients(
    shards: &[Shard],
    beta: &Coefficients,
    tau: f64,
    ledger: &mut CommLedger,
) -> Result<GatherResult> {
    gather_impl(shards, beta, tau, ledger, false)
}

/// As [`gather_gradients`], additionally retaining every shard's gradient.
pub fn gather_gradients_full(
    shards: &[Shard],
    beta: &Coefficients,
    tau: f64,
    ledger: &mut CommLedger,
) -> Result<GatherResult> {
    gather_impl(shards, beta, tau, ledger, true)
}

fn gather_impl(
    shards: &[Shard],
    beta: &Coefficients,
    tau: f64,
    ledger: &mut CommLedger,
    keep_per_shard: bool,
) -> Result<GatherResult> {
    if shards.is_empty() {
        return Err(Error::InvalidArgument("no shards to gather from".into()));
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
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "tau must be positive, got {tau}"
        )));
    }
    // Fan out; collect() preserves input order, so the reduction below is in
    // ascending shard-id order no matter how the work was scheduled.
    let per_shard: Vec<Vec<f64>> = shards
        .par_iter()
        .map(|s| shard_gradient(s, beta, tau))
        .collect::<Result<_>>()?;
    let m = shards.len() as f64;
    let mut mean = vec![0.0; p];
    for g in &per_shard {
        for j in 0..p {
            mean[j] += g[j];
        }
    }
    for v in &mut mean {
        *v /= m;
    }
    ledger.record_gradient_round(shards.len(), p);
    Ok(GatherResult {
        mean_gradient: mean,
        per_shard: if keep_per_shard { Some(per_shard) } else { None },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, ErrorDist, GenConfig, Regime};
    use crate::model::{huber_psi, Dataset};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn small_dataset(n: usize, p: usize, m: usize, seed: u64) -> Dataset {
        let cfg = GenConfig {
            n,
            p,
            m,
            dist: ErrorDist::StudentT2,
            regime: Regime::LowDim,
            s: None,
            seed,
        };
        generate(&cfg, &cfg.default_beta_star()).unwrap()
    }

    /// Independent pooled-data oracle: gradient of the full-sample Huber loss
    /// over the concatenation of all shards.
    fn pooled_gradient_oracle(shards: &[Shard], beta: &[f64], tau: f64) -> Vec<f64> {
        let p = shards[0].p();
        let total: usize = shards.iter().map(|s| s.n()).sum();
        let mut grad = vec![0.0; p];
        for s in shards {
            for i in 0..s.n() {
                let r = s.y()[i] - crate::model::dot(s.row(i), beta);
                let w = huber_psi(r, tau);
                for j in 0..p {
                    grad[j] -= w * s.row(i)[j];
                }
            }
        }
        for g in &mut grad {
            *g /= total as f64;
        }
        grad
    }

    #[test]
    fn single_shard_gather_is_its_gradient() {
        let ds = small_dataset(30, 4, 1, 9);
        let beta = Coefficients::zeros(4);
        let mut ledger = CommLedger::new();
        let res = gather_gradients(ds.shards(), &beta, 2.0, &mut ledger).unwrap();
        let direct = shard_gradient(ds.shard(0), &beta, 2.0).unwrap();
        assert_eq!(res.mean_gradient, direct);
        assert_eq!(ledger.rounds(), 1);
        assert_eq!(ledger.values_sent(), 0); // no remote machines
    }

    #[test]
    fn identical_shards_average_to_one() {
        let ds = small_dataset(25, 3, 1, 4);
        let shard = ds.shard(0);
        let copies = vec![
            shard.clone(),
            Shard::new(1, shard.y().to_vec(), shard.x_data().to_vec(), 3).unwrap(),
            Shard::new(2, shard.y().to_vec(), shard.x_data().to_vec(), 3).unwrap(),
        ];
        let beta = Coefficients::new(vec![0.5, -0.1, 0.3]).unwrap();
        let mut ledger = CommLedger::new();
        let res = gather_gradients(&copies, &beta, 1.5, &mut ledger).unwrap();
        let direct = shard_gradient(shard, &beta, 1.5).unwrap();
        for j in 0..3 {
            assert!((res.mean_gradient[j] - direct[j]).abs() < 1e-15);
        }
    }

    #[test]
    fn gather_matches_pooled_oracle() {
        let mut rng = StdRng::seed_from_u64(2024);
        for case in 0..20 {
            let m = rng.gen_range(2..6);
            let ds = small_dataset(40, 5, m, 1000 + case);
            let beta =
                Coefficients::new((0..5).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            let tau = rng.gen_range(0.5..4.0);
            let mut ledger = CommLedger::new();
            let res = gather_gradients(ds.shards(), &beta, tau, &mut ledger).unwrap();
            let oracle = pooled_gradient_oracle(ds.shards(), beta.as_slice(), tau);
            for j in 0..5 {
                let denom = oracle[j].abs().max(1e-12);
                assert!(
                    (res.mean_gradient[j] - oracle[j]).abs() / denom <= 1e-10,
                    "case {case}, coord {j}"
                );
            }
        }
    }

    #[test]
    fn ledger_arithmetic_is_exact() {
        let ds = small_dataset(10, 7, 5, 77);
        let beta = Coefficients::zeros(7);
        let mut ledger = CommLedger::new();
        for t in 1..=13u64 {
            gather_gradients(ds.shards(), &beta, 1.0, &mut ledger).unwrap();
            assert_eq!(ledger.rounds(), t);
            assert_eq!(ledger.values_sent(), 2 * 4 * 7 * t);
        }
        assert_eq!(ledger.bits_sent(), 64 * ledger.values_sent());
    }

    #[test]
    fn gather_is_schedule_independent() {
        let ds = small_dataset(20, 4, 6, 5);
        let beta = Coefficients::new(vec![0.1, 0.2, -0.4, 0.0]).unwrap();
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| {
                let mut ledger = CommLedger::new();
                gather_gradients(ds.shards(), &beta, 2.5, &mut ledger)
                    .unwrap()
                    .mean_gradient
            })
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn heterogeneous_dimensions_rejected() {
        let a = Shard::new(0, vec![1.0], vec![1.0, 2.0], 2).unwrap();
        let b = Shard::new(1, vec![1.0], vec![1.0, 2.0, 3.0], 3).unwrap();
        let beta = Coefficients::zeros(2);
        let mut ledger = CommLedger::new();
        assert!(gather_gradients(&[a, b], &beta, 1.0, &mut ledger).is_err());
    }
}
