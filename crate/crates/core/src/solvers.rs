//! Inner optimizers: gradient descent with Barzilai-Borwein step sizes for
//! smooth problems, a locally adaptive majorize-minimize loop for
//! l1-penalized problems, and a QR-based dense least-squares solver.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{dot, Coefficients, Shard};

/// A smooth objective exposed through value/gradient evaluations.
pub trait SmoothProblem: Sync {
    fn dim(&self) -> usize;
    fn value(&self, beta: &[f64]) -> f64;
    fn value_and_gradient(&self, beta: &[f64]) -> (f64, Vec<f64>);

    fn gradient(&self, beta: &[f64]) -> Vec<f64> {
        self.value_and_gradient(beta).1
    }
}

/// Which Barzilai-Borwein quotient to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BbVariant {
    /// `<s, s> / <s, g_diff>`
    #[default]
    Bb1,
    /// `<s, g_diff> / <g_diff, g_diff>`
    Bb2,
}

/// Barzilai-Borwein step size from the last displacement
/// `s = beta_k - beta_{k-1}` and gradient difference
/// `g_diff = grad_k - grad_{k-1}`.
///
/// Returns `None` when the denominator is zero or negative (the caller falls
/// back to a unit step).
pub fn bb_stepsize(s: &[f64], g_diff: &[f64], variant: BbVariant) -> Option<f64> {
    let sg = dot(s, g_diff);
    let eta = match variant {
        BbVariant::Bb1 => {
            if sg <= 0.0 {
                return None;
            }
            dot(s, s) / sg
        }
        BbVariant::Bb2 => {
            let gg = dot(g_diff, g_diff);
            if gg <= 0.0 || sg <= 0.0 {
                return None;
            }
            sg / gg
        }
    };
    if eta.is_finite() && eta > 0.0 {
        Some(eta)
    } else {
        None
    }
}

/// Outcome of an inner solve.
#[derive(Debug, Clone)]
pub struct SolverReport {
    pub beta_hat: Coefficients,
    /// Number of accepted update steps.
    pub iterations: usize,
    /// Infinity norm of the gradient at `beta_hat` (GD-BB).
    pub final_grad_infnorm: Option<f64>,
    /// l2 norm of the last step (LAMM).
    pub final_step_norm: Option<f64>,
    pub converged: bool,
    /// Penalized objective after each accepted LAMM step, starting with the
    /// initial point. Empty for GD-BB.
    pub objective_trace: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct GdBbOptions {
    /// Stop once the gradient infinity norm falls to this level.
    pub grad_tol: f64,
    /// Upper bound on the applied step size.
    pub step_cap: f64,
    pub max_iter: usize,
    pub variant: BbVariant,
}

impl Default for GdBbOptions {
    fn default() -> Self {
        GdBbOptions {
            grad_tol: 1e-4,
            step_cap: 10.0,
            max_iter: 1000,
            variant: BbVariant::Bb1,
        }
    }
}

/// Gradient descent with Barzilai-Borwein step sizes.
///
/// The first step uses a unit step size; afterwards the BB quotient is capped
/// at `step_cap` and replaced by 1 whenever its denominator is non-positive.
/// Stops when the gradient infinity norm reaches `grad_tol`.
pub fn gd_bb_minimize(
    problem: &dyn SmoothProblem,
    beta0: &Coefficients,
    opts: &GdBbOptions,
) -> Result<SolverReport> {
    let p = problem.dim();
    if beta0.len() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            got: beta0.len(),
        });
    }
    let mut beta = beta0.as_slice().to_vec();
    let (val, mut grad) = problem.value_and_gradient(&beta);
    if !val.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NumericFailure {
            context: "non-finite loss/gradient at the starting point".into(),
            last_iterate: beta,
        });
    }
    let mut gnorm = inf_norm(&grad);
    let mut s = vec![0.0; p];
    let mut g_diff = vec![0.0; p];
    let mut iterations = 0usize;
    let mut converged = gnorm <= opts.grad_tol;
    while !converged && iterations < opts.max_iter {
        let eta = if iterations == 0 {
            1.0
        } else {
            bb_stepsize(&s, &g_diff, opts.variant)
                .map(|e| e.min(opts.step_cap))
                .unwrap_or(1.0)
        };
        debug_assert!(eta > 0.0 && eta <= opts.step_cap);
        let mut next = vec![0.0; p];
        for j in 0..p {
            next[j] = beta[j] - eta * grad[j];
        }
        let (val_next, grad_next) = problem.value_and_gradient(&next);
        if !val_next.is_finite() || grad_next.iter().any(|g| !g.is_finite()) {
            return Err(Error::NumericFailure {
                context: format!("non-finite loss/gradient at iteration {}", iterations + 1),
                last_iterate: beta,
            });
        }
        for j in 0..p {
            s[j] = next[j] - beta[j];
            g_diff[j] = grad_next[j] - grad[j];
        }
        beta = next;
        grad = grad_next;
        gnorm = inf_norm(&grad);
        iterations += 1;
        converged = gnorm <= opts.grad_tol;
    }
    Ok(SolverReport {
        beta_hat: Coefficients::new(beta).expect("finite by the checks above"),
        iterations,
        final_grad_infnorm: Some(gnorm),
        final_step_norm: None,
        converged,
        objective_trace: Vec::new(),
    })
}

/// Soft-thresholding operator `S(u, lam) = sign(u) max(|u| - lam, 0)`.
#[inline]
pub fn soft_threshold(u: f64, lam: f64) -> f64 {
    debug_assert!(lam >= 0.0);
    if u > lam {
        u - lam
    } else if u < -lam {
        u + lam
    } else {
        0.0
    }
}

#[derive(Debug, Clone)]
pub struct LammOptions {
    /// Floor of the isotropic majorizer curvature.
    pub phi0: f64,
    /// Multiplicative inflation factor for the curvature.
    pub inflate: f64,
    /// Stop once the l2 norm of a step falls to this level.
    pub step_tol: f64,
    pub max_iter: usize,
    /// Hard ceiling on the curvature; exceeding it is a numeric failure.
    pub phi_ceiling: f64,
    /// Coordinates exempt from the l1 penalty (plain gradient steps).
    pub unpenalized: Vec<usize>,
}

impl Default for LammOptions {
    fn default() -> Self {
        LammOptions {
            phi0: 1e-4,
            inflate: 1.1,
            step_tol: 1e-5,
            max_iter: 5000,
            phi_ceiling: 1e12,
            unpenalized: vec![0],
        }
    }
}

/// Locally adaptive majorize-minimize loop for
/// `min L(beta) + lam * sum_{j penalized} |beta_j|`.
///
/// Each step minimizes an isotropic quadratic majorizer, giving a closed-form
/// update: a plain gradient step on unpenalized coordinates and a
/// soft-threshold step elsewhere. The curvature `phi` is inflated until the
/// majorizer dominates the loss at the candidate, which makes the penalized
/// objective non-increasing across iterations.
pub fn lamm_minimize(
    problem: &dyn SmoothProblem,
    lam: f64,
    beta0: &Coefficients,
    opts: &LammOptions,
) -> Result<SolverReport> {
    let p = problem.dim();
    if beta0.len() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            got: beta0.len(),
        });
    }
    if lam < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "penalty level must be nonnegative, got {lam}"
        )));
    }
    let mut penalized = vec![true; p];
    for &j in &opts.unpenalized {
        if j >= p {
            return Err(Error::InvalidArgument(format!(
                "unpenalized coordinate {j} out of range for dimension {p}"
            )));
        }
        penalized[j] = false;
    }
    let penalty = |beta: &[f64]| -> f64 {
        let mut acc = 0.0;
        for j in 0..p {
            if penalized[j] {
                acc += beta[j].abs();
            }
        }
        lam * acc
    };

    let mut beta = beta0.as_slice().to_vec();
    let mut phi_prev = opts.phi0;
    let mut trace = Vec::with_capacity(64);
    let mut step_norm = f64::INFINITY;
    let mut iterations = 0usize;
    let mut converged = false;
    trace.push(problem.value(&beta) + penalty(&beta));
    // Iterates this far out mean the penalized objective is unbounded below
    // (a too-weak penalty cannot contain the linear shift term).
    const DIVERGENCE_LIMIT: f64 = 1e10;

    while iterations < opts.max_iter {
        let (val, grad) = problem.value_and_gradient(&beta);
        if !val.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NumericFailure {
                context: format!("non-finite loss/gradient at iteration {iterations}"),
                last_iterate: beta,
            });
        }
        let mut phi = (phi_prev / opts.inflate).max(opts.phi0);
        let (cand, cand_val, cand_step) = loop {
            let mut cand = vec![0.0; p];
            for j in 0..p {
                let step = beta[j] - grad[j] / phi;
                cand[j] = if penalized[j] {
                    soft_threshold(step, lam / phi)
                } else {
                    step
                };
            }
            let cand_val = problem.value(&cand);
            // majorizer value at the candidate
            let mut quad = 0.0;
            let mut lin = 0.0;
            for j in 0..p {
                let d = cand[j] - beta[j];
                lin += grad[j] * d;
                quad += d * d;
            }
            let g_val = val + lin + 0.5 * phi * quad;
            // A vanishing step also ends the outer loop, so accept it even
            // when the majorization margin is below rounding noise.
            if g_val >= cand_val || quad.sqrt() <= opts.step_tol {
                break (cand, cand_val, quad.sqrt());
            }
            phi *= opts.inflate;
            if phi > opts.phi_ceiling {
                return Err(Error::NumericFailure {
                    context: format!("majorizer curvature exceeded {:.1e}", opts.phi_ceiling),
                    last_iterate: beta,
                });
            }
        };
        step_norm = cand_step;
        beta = cand;
        phi_prev = phi;
        iterations += 1;
        trace.push(cand_val + penalty(&beta));
        if step_norm <= opts.step_tol {
            converged = true;
            break;
        }
        if inf_norm(&beta) > DIVERGENCE_LIMIT {
            return Err(Error::NumericFailure {
                context: "iterates diverged; penalized objective appears unbounded below".into(),
                last_iterate: beta,
            });
        }
    }

    Ok(SolverReport {
        beta_hat: Coefficients::new(beta).expect("finite by the checks above"),
        iterations,
        final_grad_infnorm: None,
        final_step_norm: Some(step_norm),
        converged,
        objective_trace: trace,
    })
}

/// Worst-case stationarity violation of the penalized problem at `beta`:
/// `|g_j|` on unpenalized coordinates, `|g_j + lam sign(beta_j)|` on active
/// penalized coordinates, and `max(0, |g_j| - lam)` on inactive ones.
pub fn kkt_residual(
    problem: &dyn SmoothProblem,
    lam: f64,
    beta: &Coefficients,
    unpenalized: &[usize],
) -> f64 {
    let grad = problem.gradient(beta.as_slice());
    let mut worst: f64 = 0.0;
    for j in 0..beta.len() {
        let g = grad[j];
        let r = if unpenalized.contains(&j) {
            g.abs()
        } else if beta[j] > 0.0 {
            (g + lam).abs()
        } else if beta[j] < 0.0 {
            (g - lam).abs()
        } else {
            (g.abs() - lam).max(0.0)
        };
        worst = worst.max(r);
    }
    worst
}

/// Least squares over the pooled rows of `shards` via a thin QR
/// factorization. `ridge_eps > 0` augments the system with `sqrt(ridge_eps) I`
/// rows, which also covers rank-deficient designs.
pub fn ols_solve(shards: &[Shard], ridge_eps: f64) -> Result<Coefficients> {
    if shards.is_empty() {
        return Err(Error::InvalidArgument("no shards".into()));
    }
    let p = shards[0].p();
    let total_n: usize = shards.iter().map(|s| s.n()).sum();
    if ridge_eps < 0.0 {
        return Err(Error::InvalidArgument("ridge_eps must be >= 0".into()));
    }
    if total_n < p && ridge_eps == 0.0 {
        return Err(Error::SingularDesign(format!(
            "{total_n} rows < {p} columns and no ridge requested"
        )));
    }
    let rows = total_n + if ridge_eps > 0.0 { p } else { 0 };
    let mut a = DMatrix::<f64>::zeros(rows, p);
    let mut b = DVector::<f64>::zeros(rows);
    let mut r = 0;
    for s in shards {
        if s.p() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: s.p(),
            });
        }
        for i in 0..s.n() {
            let row = s.row(i);
            for j in 0..p {
                a[(r, j)] = row[j];
            }
            b[r] = s.y()[i];
            r += 1;
        }
    }
    if ridge_eps > 0.0 {
        let sq = ridge_eps.sqrt();
        for j in 0..p {
            a[(r + j, j)] = sq;
        }
    }
    let qr = a.qr();
    let rmat = qr.r();
    let mut max_diag = 0.0f64;
    let mut min_diag = f64::INFINITY;
    for j in 0..p {
        let d = rmat[(j, j)].abs();
        max_diag = max_diag.max(d);
        min_diag = min_diag.min(d);
    }
    if min_diag <= 1e-12 * max_diag {
        return Err(Error::SingularDesign(format!(
            "rank-deficient design (R diagonal ratio {:.2e})",
            if max_diag > 0.0 { min_diag / max_diag } else { 0.0 }
        )));
    }
    let qty = qr.q().transpose() * b;
    let beta = rmat
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::SingularDesign("triangular solve failed".into()))?;
    Coefficients::new(beta.iter().copied().collect())
}

#[inline]
pub(crate) fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |acc, x| acc.max(x.abs()))
}
