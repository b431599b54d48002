//! Synthetic heteroscedastic regression data with heavy-tailed error
//! distributions, generated reproducibly from derived per-shard streams.
//!
//! The model is `y = x.beta* + c^{-1} (x.beta*)^2 eps` with `x1 = 1`,
//! `x_j ~ N(0,1)` for `j >= 2`, and `c = sqrt(3) ||beta*||_2^2`, which makes
//! the second moment of the noise multiplier approximately one.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::{Coefficients, Dataset, Shard};

/// Problem regime: dense low-dimensional or sparse high-dimensional.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    LowDim,
    HighDim,
}

impl Regime {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "lowdim" => Ok(Regime::LowDim),
            "highdim" => Ok(Regime::HighDim),
            other => Err(Error::Parse(format!("unknown regime `{other}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Regime::LowDim => "lowdim",
            Regime::HighDim => "highdim",
        }
    }
}

/// Error distribution of the regression noise. All draws are centered so the
/// noise has mean zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ErrorDist {
    /// Standard normal.
    Normal,
    /// Student t with 2 degrees of freedom (symmetric, infinite variance).
    StudentT2,
    /// Pareto, sampled by inverse CDF and centered at its mean
    /// `shape * scale / (shape - 1)`. Requires `shape > 1`.
    Pareto { scale: f64, shape: f64 },
    /// Burr XII (Singh-Maddala) with CDF `1 - (1 + (x/scale)^c)^{-k}`,
    /// sampled by inverse CDF and centered at its mean. Requires `c k > 1`.
    Burr { c: f64, k: f64, scale: f64 },
}

impl ErrorDist {
    /// Default Pareto used throughout the simulations: scale 4, shape 2.
    pub fn pareto_default() -> Self {
        ErrorDist::Pareto {
            scale: 4.0,
            shape: 2.0,
        }
    }

    /// Default Burr XII used throughout the simulations: (c, k, scale) = (1, 2, 1).
    pub fn burr_default() -> Self {
        ErrorDist::Burr {
            c: 1.0,
            k: 2.0,
            scale: 1.0,
        }
    }

    pub fn parse(tag: &str) -> Result<Self> {
        match tag {
            "normal" => Ok(ErrorDist::Normal),
            "t2" => Ok(ErrorDist::StudentT2),
            "pareto" => Ok(ErrorDist::pareto_default()),
            "burr" => Ok(ErrorDist::burr_default()),
            other => Err(Error::InvalidArgument(format!(
                "unknown error distribution `{other}` (expected normal|t2|pareto|burr)"
            ))),
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            ErrorDist::Normal => "normal",
            ErrorDist::StudentT2 => "t2",
            ErrorDist::Pareto { .. } => "pareto",
            ErrorDist::Burr { .. } => "burr",
        }
    }

    /// Mean of the raw (uncentered) draw; subtracted during sampling.
    pub fn raw_mean(&self) -> Result<f64> {
        match *self {
            ErrorDist::Normal | ErrorDist::StudentT2 => Ok(0.0),
            ErrorDist::Pareto { scale, shape } => {
                if shape <= 1.0 {
                    return Err(Error::InvalidArgument(format!(
                        "Pareto shape must exceed 1 for a finite mean, got {shape}"
                    )));
                }
                Ok(shape * scale / (shape - 1.0))
            }
            ErrorDist::Burr { c, k, scale } => {
                if c * k <= 1.0 {
                    return Err(Error::InvalidArgument(format!(
                        "Burr needs c*k > 1 for a finite mean, got c={c}, k={k}"
                    )));
                }
                // E X = scale * Gamma(1 + 1/c) * Gamma(k - 1/c) / Gamma(k)
                let ln_mean = ln_gamma(1.0 + 1.0 / c) + ln_gamma(k - 1.0 / c) - ln_gamma(k);
                Ok(scale * ln_mean.exp())
            }
        }
    }
}

/// One centered draw from `dist`.
///
/// Pareto and Burr are sampled by inverting the survival function with a
/// uniform on (0, 1]; t2 uses the exact ratio `z / sqrt(chi2_2 / 2)` with
/// `chi2_2 = -2 ln u` from the same stream.
pub fn sample_error(dist: &ErrorDist, rng: &mut ChaCha8Rng) -> f64 {
    match *dist {
        ErrorDist::Normal => rng.sample(StandardNormal),
        ErrorDist::StudentT2 => {
            let z: f64 = rng.sample(StandardNormal);
            let u = open_closed_unit(rng);
            let chi2 = -2.0 * u.ln();
            z / (chi2 / 2.0).sqrt()
        }
        ErrorDist::Pareto { scale, shape } => {
            let v = open_closed_unit(rng);
            let raw = scale * v.powf(-1.0 / shape);
            raw - shape * scale / (shape - 1.0)
        }
        ErrorDist::Burr { c, k, scale } => {
            let v = open_closed_unit(rng);
            let raw = scale * (v.powf(-1.0 / k) - 1.0).powf(1.0 / c);
            let ln_mean = ln_gamma(1.0 + 1.0 / c) + ln_gamma(k - 1.0 / c) - ln_gamma(k);
            raw - scale * ln_mean.exp()
        }
    }
}

/// Uniform on (0, 1]: survival-scale draw that keeps `v^(-1/a)` finite.
#[inline]
fn open_closed_unit(rng: &mut ChaCha8Rng) -> f64 {
    1.0 - rng.gen::<f64>()
}

/// Lanczos approximation of `ln Gamma(x)` for `x > 0`.
fn ln_gamma(x: f64) -> f64 {
    // g = 7, n = 9 coefficients, quoted at published precision
    #[allow(clippy::excessive_precision)]
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    debug_assert!(x > 0.0);
    if x < 0.5 {
        // reflection formula
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEF[0];
    for (i, &c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Configuration for one synthetic dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    /// Per-shard sample size.
    pub n: usize,
    pub p: usize,
    /// Shard count.
    pub m: usize,
    pub dist: ErrorDist,
    pub regime: Regime,
    /// Sparsity (number of nonzero coefficients, intercept included);
    /// high-dimensional regime only.
    pub s: Option<usize>,
    pub seed: u64,
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.p == 0 || self.m == 0 {
            return Err(Error::InvalidArgument("n, p, m must all be >= 1".into()));
        }
        if self.regime == Regime::HighDim {
            match self.s {
                Some(s) if (1..self.p).contains(&s) => {}
                Some(s) => {
                    return Err(Error::InvalidArgument(format!(
                        "sparsity s={s} out of range 1..=p-1 (p={})",
                        self.p
                    )))
                }
                None => {
                    return Err(Error::InvalidArgument(
                        "high-dimensional regime requires s".into(),
                    ))
                }
            }
        }
        self.dist.raw_mean()?;
        Ok(())
    }

    /// The default coefficient vector for this regime: all entries 1.5 in the
    /// dense regime, the first `s` entries 1.5 (rest zero) in the sparse one.
    pub fn default_beta_star(&self) -> Coefficients {
        let mut beta = vec![0.0; self.p];
        match self.regime {
            Regime::LowDim => beta.iter_mut().for_each(|b| *b = 1.5),
            Regime::HighDim => {
                let s = self.s.unwrap_or(1).min(self.p);
                beta[..s].iter_mut().for_each(|b| *b = 1.5);
            }
        }
        Coefficients::new(beta).expect("finite by construction")
    }
}

/// Noise-scale constant `c = sqrt(3) ||beta*||_2^2` of the heteroscedastic
/// model.
pub fn noise_scale_constant(beta_star: &Coefficients) -> f64 {
    let norm2: f64 = beta_star.as_slice().iter().map(|b| b * b).sum();
    3f64.sqrt() * norm2
}

/// Generates `m` shards of `n` rows each. The same `(config, beta_star)`
/// always yields a bit-identical dataset; each shard draws from its own
/// stream derived from `(config.seed, shard id)`, so shards may be produced
/// in any order or in parallel.
pub fn generate(config: &GenConfig, beta_star: &Coefficients) -> Result<Dataset> {
    generate_impl(config, beta_star, true)
}

/// Zero-noise variant of [`generate`]: identical covariate draws, `y = X beta*`
/// exactly. The error stream is still advanced so covariates match the noisy
/// dataset row for row.
pub fn generate_noiseless(config: &GenConfig, beta_star: &Coefficients) -> Result<Dataset> {
    generate_impl(config, beta_star, false)
}

fn generate_impl(config: &GenConfig, beta_star: &Coefficients, noisy: bool) -> Result<Dataset> {
    config.validate()?;
    if beta_star.len() != config.p {
        return Err(Error::DimensionMismatch {
            expected: config.p,
            got: beta_star.len(),
        });
    }
    let c = noise_scale_constant(beta_star);
    if !(c > 0.0) {
        return Err(Error::InvalidArgument(
            "beta_star must be nonzero so the noise scale c is positive".into(),
        ));
    }
    let (n, p) = (config.n, config.p);
    let b = beta_star.as_slice();
    let mut shards = Vec::with_capacity(config.m);
    for j in 0..config.m {
        let mut rng = stream_rng(config.seed, &[STREAM_SHARD, j as u64]);
        let mut x = Vec::with_capacity(n * p);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let base = x.len();
            x.push(1.0);
            for _ in 1..p {
                x.push(rng.sample::<f64, _>(StandardNormal));
            }
            let mean = crate::model::dot(&x[base..base + p], b);
            let eps = sample_error(&config.dist, &mut rng);
            let noise = if noisy { mean * mean / c * eps } else { 0.0 };
            y.push(mean + noise);
        }
        shards.push(Shard::new(j, y, x, p)?);
    }
    Dataset::new(shards)
}

const STREAM_SHARD: u64 = 0x5348_4152; // "SHAR"

/// Mixes a base seed with tags into a new 64-bit seed (splitmix64 chain).
/// Used to give every (replication, shard, purpose) its own stream.
pub fn mix_seed(base: u64, tags: &[u64]) -> u64 {
    let mut state = base;
    for &t in tags {
        state = splitmix64(state ^ splitmix64(t));
    }
    splitmix64(state)
}

/// A ChaCha stream keyed by `(seed, tags)`.
pub fn stream_rng(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    let mut state = seed;
    for &t in tags {
        state = splitmix64(state ^ splitmix64(t));
    }
    for chunk in key.chunks_mut(8) {
        state = splitmix64(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Writes a dataset as plain CSV (`y,x1,...,xp`, one row per observation,
/// shards as contiguous blocks). Values use Rust's shortest round-trip float
/// formatting so a read-back is bit-exact.
pub fn write_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let p = dataset.p();
    let mut header = String::from("y");
    for j in 1..=p {
        header.push_str(&format!(",x{j}"));
    }
    writeln!(w, "{header}").map_err(|e| Error::io(path, e))?;
    for shard in dataset.shards() {
        for i in 0..shard.n() {
            let mut line = format!("{}", shard.y()[i]);
            for v in shard.row(i) {
                line.push(',');
                line.push_str(&format!("{v}"));
            }
            writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a dataset written by [`write_csv`] (or any CSV with the same
/// schema), splitting the rows into `m` contiguous equal-sized shards.
pub fn read_csv(path: &Path, m: usize) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?
        .clone();
    if headers.is_empty() || headers.get(0) != Some("y") {
        return Err(Error::Parse(format!(
            "{}: expected header starting with `y`",
            path.display()
        )));
    }
    let p = headers.len() - 1;
    let mut y = Vec::new();
    let mut x = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        if record.len() != p + 1 {
            return Err(Error::Parse(format!(
                "{}: row {i} has {} fields, expected {}",
                path.display(),
                record.len(),
                p + 1
            )));
        }
        for (k, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                Error::Parse(format!(
                    "{}: row {i}, column {k}: bad float `{field}`",
                    path.display()
                ))
            })?;
            if k == 0 {
                y.push(v);
            } else {
                x.push(v);
            }
        }
    }
    Dataset::from_rows(y, x, p, m)
}
