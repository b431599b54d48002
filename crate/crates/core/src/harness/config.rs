//! Experiment configuration: flat `key = value` text with exactly the
//! documented keys; unknown keys are rejected.

use std::collections::BTreeSet;
use std::path::Path;

use crate::data::{ErrorDist, Regime};
use crate::error::{Error, Result};

/// Estimation method names accepted by the harness and CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    GlobalAhr,
    DcAhr,
    DcOls,
    DistOls,
    DistAhr,
    L1Ahr,
    DcL1Ahr,
    Lasso,
    DistRegAhr,
}

impl Method {
    pub const ALL: [Method; 9] = [
        Method::GlobalAhr,
        Method::DcAhr,
        Method::DcOls,
        Method::DistOls,
        Method::DistAhr,
        Method::L1Ahr,
        Method::DcL1Ahr,
        Method::Lasso,
        Method::DistRegAhr,
    ];

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "global_ahr" => Method::GlobalAhr,
            "dc_ahr" => Method::DcAhr,
            "dc_ols" => Method::DcOls,
            "dist_ols" => Method::DistOls,
            "dist_ahr" => Method::DistAhr,
            "l1_ahr" => Method::L1Ahr,
            "dc_l1_ahr" => Method::DcL1Ahr,
            "lasso" => Method::Lasso,
            "dist_reg_ahr" => Method::DistRegAhr,
            other => {
                return Err(Error::Parse(format!(
                    "unknown method `{other}` (expected one of {})",
                    Method::ALL.map(|m| m.name()).join(", ")
                )))
            }
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::GlobalAhr => "global_ahr",
            Method::DcAhr => "dc_ahr",
            Method::DcOls => "dc_ols",
            Method::DistOls => "dist_ols",
            Method::DistAhr => "dist_ahr",
            Method::L1Ahr => "l1_ahr",
            Method::DcL1Ahr => "dc_l1_ahr",
            Method::Lasso => "lasso",
            Method::DistRegAhr => "dist_reg_ahr",
        }
    }

    /// Whether confidence intervals are produced for this method.
    pub fn supports_inference(self) -> bool {
        matches!(self, Method::DistAhr | Method::DistOls)
    }

    pub fn regime(self) -> Regime {
        match self {
            Method::GlobalAhr | Method::DcAhr | Method::DcOls | Method::DistOls | Method::DistAhr => {
                Regime::LowDim
            }
            Method::L1Ahr | Method::DcL1Ahr | Method::Lasso | Method::DistRegAhr => Regime::HighDim,
        }
    }
}

/// One Monte Carlo experiment: a data-generating setting, a shard-count grid,
/// the methods to compare, and replication/tuning controls.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub regime: Regime,
    /// Per-shard sample size.
    pub n: usize,
    pub p: usize,
    /// Shard counts to sweep (strictly increasing).
    pub m_grid: Vec<usize>,
    /// Sparsity (high-dimensional regime only).
    pub s: Option<usize>,
    pub dist: ErrorDist,
    pub methods: Vec<Method>,
    pub reps: usize,
    pub seed: u64,
    /// CI miscoverage level.
    pub alpha: f64,
    /// Candidate multipliers for the global robustification level.
    pub c_grid: Vec<f64>,
    /// Held-out validation set size as a fraction of N.
    pub validation_fraction: f64,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.p == 0 {
            return Err(Error::InvalidArgument("n and p must be >= 1".into()));
        }
        if self.reps == 0 {
            return Err(Error::InvalidArgument("reps must be >= 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidArgument("methods must be nonempty".into()));
        }
        if self.m_grid.is_empty() {
            return Err(Error::InvalidArgument("m grid must be nonempty".into()));
        }
        for w in self.m_grid.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::InvalidArgument(
                    "m grid must be strictly increasing".into(),
                ));
            }
        }
        if self.m_grid[0] == 0 {
            return Err(Error::InvalidArgument("m must be >= 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidArgument("alpha must be in (0, 1)".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::InvalidArgument(
                "validation_fraction must be in (0, 1)".into(),
            ));
        }
        if self.c_grid.is_empty() || self.c_grid.iter().any(|c| !(*c > 0.0)) {
            return Err(Error::InvalidArgument(
                "c_grid must be nonempty and positive".into(),
            ));
        }
        if self.regime == Regime::HighDim {
            match self.s {
                Some(s) if (1..self.p).contains(&s) => {}
                _ => {
                    return Err(Error::InvalidArgument(
                        "high-dimensional regime requires 1 <= s <= p-1".into(),
                    ))
                }
            }
        }
        let dedup: BTreeSet<&str> = self.methods.iter().map(|m| m.name()).collect();
        if dedup.len() != self.methods.len() {
            return Err(Error::InvalidArgument("duplicate methods".into()));
        }
        for method in &self.methods {
            if method.regime() != self.regime {
                return Err(Error::InvalidArgument(format!(
                    "method `{}` does not apply to the {} regime",
                    method.name(),
                    self.regime.name()
                )));
            }
        }
        self.dist.raw_mean()?;
        Ok(())
    }

    /// Parses the flat `key = value` format. Blank lines and `#` comments are
    /// allowed; unknown keys are errors.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut regime = None;
        let mut n = None;
        let mut p = None;
        let mut m_grid: Option<Vec<usize>> = None;
        let mut s = None;
        let mut dist = None;
        let mut methods: Option<Vec<Method>> = None;
        let mut reps = None;
        let mut seed = None;
        let mut alpha = None;
        let mut c_grid: Option<Vec<f64>> = None;
        let mut validation_fraction = None;

        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Parse(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            let bad = |what: &str| Error::Parse(format!("line {}: bad {what}: `{value}`", lineno + 1));
            match key {
                "regime" => regime = Some(Regime::parse(value)?),
                "n" => n = Some(value.parse().map_err(|_| bad("n"))?),
                "p" => p = Some(value.parse().map_err(|_| bad("p"))?),
                "m" => {
                    m_grid = Some(
                        value
                            .split(',')
                            .map(|v| v.trim().parse().map_err(|_| bad("m")))
                            .collect::<Result<_>>()?,
                    )
                }
                "s" => s = Some(value.parse().map_err(|_| bad("s"))?),
                "dist" => dist = Some(ErrorDist::parse(value)?),
                "methods" => {
                    methods = Some(
                        value
                            .split(',')
                            .map(|v| Method::parse(v.trim()))
                            .collect::<Result<_>>()?,
                    )
                }
                "reps" => reps = Some(value.parse().map_err(|_| bad("reps"))?),
                "seed" => seed = Some(value.parse().map_err(|_| bad("seed"))?),
                "alpha" => alpha = Some(value.parse().map_err(|_| bad("alpha"))?),
                "c_grid" => {
                    c_grid = Some(
                        value
                            .split(',')
                            .map(|v| v.trim().parse().map_err(|_| bad("c_grid")))
                            .collect::<Result<_>>()?,
                    )
                }
                "validation_fraction" => {
                    validation_fraction = Some(value.parse().map_err(|_| bad("validation_fraction"))?)
                }
                other => {
                    return Err(Error::Parse(format!(
                        "line {}: unknown key `{other}`",
                        lineno + 1
                    )))
                }
            }
        }

        let missing = |what: &str| Error::Parse(format!("missing required key `{what}`"));
        let cfg = ExperimentConfig {
            regime: regime.ok_or_else(|| missing("regime"))?,
            n: n.ok_or_else(|| missing("n"))?,
            p: p.ok_or_else(|| missing("p"))?,
            m_grid: m_grid.ok_or_else(|| missing("m"))?,
            s,
            dist: dist.ok_or_else(|| missing("dist"))?,
            methods: methods.ok_or_else(|| missing("methods"))?,
            reps: reps.ok_or_else(|| missing("reps"))?,
            seed: seed.unwrap_or(1),
            alpha: alpha.unwrap_or(0.05),
            c_grid: c_grid.unwrap_or_else(|| vec![1.0, 2.0, 3.0, 4.0, 5.0]),
            validation_fraction: validation_fraction.unwrap_or(0.25),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_str(&text)
    }

    /// Expands the desk-scale grid to the full study: 500 replications with
    /// shard counts up to 500 in the dense regime, 100 replications with
    /// shard counts up to 50 in the sparse one.
    pub fn make_full_scale(&mut self) {
        match self.regime {
            Regime::LowDim => {
                self.reps = 500;
                self.m_grid = vec![10, 50, 100, 200, 300, 400, 500];
            }
            Regime::HighDim => {
                self.reps = 100;
                self.m_grid = vec![10, 20, 30, 40, 50];
            }
        }
    }
}
