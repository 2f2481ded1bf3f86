//! Block solvers for the SPPS likelihood.
//!
//! - [`fit_plain_glm`]: `β` with `ε = δ = 0` (an ordinary binary GLM).
//! - [`beta_step`]: `β` with `(ε, δ)` held fixed, warm-started.
//! - [`epsilon_step`] / [`delta_step`]: one bound with everything else fixed.
//!
//! The `β` solver is a damped Newton iteration. The SPPS link is not
//! canonical, so the observed information can be indefinite away from the
//! optimum; in that case the expected (Fisher) information is used for the
//! direction instead. Each step is halved until the likelihood does not
//! decrease.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::link::LinkFunction;
use crate::model::{compensated_sum, loglik_from_eta, row_terms, Dataset};
use crate::optimize::maximize_bounded;

/// Relative size of the last Newton step below which the iterate is considered settled.
const STEP_TOL: f64 = 1e-6;

/// Evaluation budget for the bounded scalar searches.
const SCALAR_MAX_EVALS: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverControls {
    pub max_newton_iters: usize,
    /// Convergence threshold on the max-norm of the `β` gradient.
    pub newton_tol: f64,
    pub max_step_halvings: usize,
    /// Distance kept from the `ε`/`δ` boundary by the scalar steps.
    pub bound_margin: f64,
    /// Bracket width at which the scalar searches stop.
    pub scalar_opt_tol: f64,
    /// Iterates with `‖β‖₂` above this are treated as diverging (separation).
    pub beta_norm_cap: f64,
}

impl Default for SolverControls {
    fn default() -> Self {
        SolverControls {
            max_newton_iters: 50,
            newton_tol: 1e-8,
            max_step_halvings: 30,
            bound_margin: 1e-6,
            scalar_opt_tol: 1e-9,
            beta_norm_cap: 1e3,
        }
    }
}

impl SolverControls {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.newton_tol,
            self.bound_margin,
            self.scalar_opt_tol,
            self.beta_norm_cap,
        ];
        if self.max_newton_iters == 0 || positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::input("solver controls must all be positive"));
        }
        if self.bound_margin >= 0.5 {
            return Err(Error::input("bound_margin must be < 0.5"));
        }
        Ok(())
    }
}

/// Result of one block update.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepResult<T> {
    pub value: T,
    /// Log-likelihood at the returned parameters.
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Scalar steps only: the optimum sits on an end of the search interval.
    pub at_boundary: bool,
}

struct Derivatives {
    grad: DVector<f64>,
    observed: DMatrix<f64>,
    fisher_weights: DVector<f64>,
}

fn weighted_crossprod(x: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let p = x.ncols();
    let w = w.as_slice();
    let mut out = DMatrix::zeros(p, p);
    for j in 0..p {
        let xj = x.column(j);
        let xj = xj.as_slice();
        for k in 0..=j {
            let xk = x.column(k);
            let v: f64 = xj.iter().zip(xk.as_slice()).zip(w).map(|((a, b), c)| a * b * c).sum();
            out[(j, k)] = v;
            out[(k, j)] = v;
        }
    }
    out
}

fn derivatives(data: &Dataset, eta: &DVector<f64>, epsilon: f64, delta: f64, link: LinkFunction) -> Derivatives {
    let n = data.n();
    let span = 1.0 - epsilon - delta;
    let mut grad_w = DVector::zeros(n);
    let mut obs_w = DVector::zeros(n);
    let mut fisher_w = DVector::zeros(n);
    for (i, (&e, &a)) in eta.iter().zip(data.indicator()).enumerate() {
        let t = row_terms(e, epsilon, delta, link);
        // dℓ/dπ and d²ℓ/dπ² for one Bernoulli term
        let (d1, d2) = if a {
            (1.0 / t.pi, -1.0 / (t.pi * t.pi))
        } else {
            (-1.0 / t.one_minus_pi, -1.0 / (t.one_minus_pi * t.one_minus_pi))
        };
        let dpi = span * link.density(e);
        let d2pi = span * link.density_slope(e);
        grad_w[i] = d1 * dpi;
        obs_w[i] = -(d2 * dpi * dpi + d1 * d2pi);
        fisher_w[i] = dpi * dpi / (t.pi * t.one_minus_pi);
    }
    let x = data.design();
    Derivatives {
        grad: x.tr_mul(&grad_w),
        observed: weighted_crossprod(x, &obs_w),
        fisher_weights: fisher_w,
    }
}

fn newton_direction(data: &Dataset, d: &Derivatives) -> Option<DVector<f64>> {
    if let Some(chol) = d.observed.clone().cholesky() {
        return Some(chol.solve(&d.grad));
    }
    let fisher = weighted_crossprod(data.design(), &d.fisher_weights);
    fisher.cholesky().map(|c| c.solve(&d.grad))
}

fn maximize_beta(
    data: &Dataset,
    link: LinkFunction,
    epsilon: f64,
    delta: f64,
    beta_init: &[f64],
    controls: &SolverControls,
) -> Result<StepResult<Vec<f64>>> {
    if beta_init.len() != data.p() {
        return Err(Error::input(format!(
            "beta_init has length {} but the design has {} columns",
            beta_init.len(),
            data.p()
        )));
    }
    if !(epsilon >= 0.0 && delta >= 0.0 && epsilon + delta < 1.0) {
        return Err(Error::input(format!(
            "invalid bounds epsilon = {epsilon}, delta = {delta}"
        )));
    }
    let x = data.design();
    let indicator = data.indicator();
    let mut beta = DVector::from_column_slice(beta_init);
    let mut eta = x * &beta;
    let mut ll = loglik_from_eta(eta.as_slice(), indicator, epsilon, delta, link);
    if !ll.is_finite() {
        return Err(Error::input("log-likelihood is not finite at the starting value"));
    }
    let non_convergence = |iterations: usize, reason: &str, beta: &DVector<f64>| Error::NonConvergence {
        iterations,
        reason: reason.to_string(),
        last_beta: beta.as_slice().to_vec(),
    };

    let mut last_step = 0.0_f64;
    for iter in 0..=controls.max_newton_iters {
        let d = derivatives(data, &eta, epsilon, delta, link);
        let settled = last_step <= STEP_TOL * (1.0 + beta.amax());
        if d.grad.amax() <= controls.newton_tol && settled {
            return Ok(StepResult {
                value: beta.as_slice().to_vec(),
                loglik: ll,
                iterations: iter,
                converged: true,
                at_boundary: false,
            });
        }
        if iter == controls.max_newton_iters {
            break;
        }

        let Some(dir) = newton_direction(data, &d) else {
            if data.rank_and_condition().0 < data.p() {
                return Err(Error::input("information matrix is singular: design is rank deficient"));
            }
            return Err(non_convergence(
                iter,
                "information matrix is numerically singular (saturated fitted probabilities)",
                &beta,
            ));
        };
        let slack = f64::EPSILON * ll.abs().max(1.0);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=controls.max_step_halvings {
            let cand = &beta + &dir * t;
            let eta_c = x * &cand;
            let ll_c = loglik_from_eta(eta_c.as_slice(), indicator, epsilon, delta, link);
            if ll_c.is_finite() && ll_c >= ll - slack {
                accepted = Some((cand, eta_c, ll_c));
                break;
            }
            t *= 0.5;
        }

        match accepted {
            Some((cand, eta_c, ll_c)) => {
                last_step = (&cand - &beta).amax();
                beta = cand;
                eta = eta_c;
                ll = ll_c;
                if beta.norm() > controls.beta_norm_cap {
                    return Err(non_convergence(
                        iter + 1,
                        "iterate norm exceeded the cap (separation)",
                        &beta,
                    ));
                }
            }
            None => {
                // No representable ascent along the direction: stationary to working precision
                // when the predicted gain is at rounding level.
                let predicted_gain = 0.5 * d.grad.dot(&dir);
                if predicted_gain <= 1e3 * slack {
                    return Ok(StepResult {
                        value: beta.as_slice().to_vec(),
                        loglik: ll,
                        iterations: iter + 1,
                        converged: true,
                        at_boundary: false,
                    });
                }
                return Err(non_convergence(iter + 1, "step halving found no ascent", &beta));
            }
        }
    }

    let saturated = eta.iter().any(|e| e.abs() > 30.0);
    let reason = if saturated {
        "iteration limit reached with saturated fitted probabilities (separation)"
    } else {
        "iteration limit reached"
    };
    Err(non_convergence(controls.max_newton_iters, reason, &beta))
}

/// Maximum likelihood for the plain GLM (`ε = δ = 0`), started at `β = 0`.
pub fn fit_plain_glm(data: &Dataset, link: LinkFunction, controls: &SolverControls) -> Result<StepResult<Vec<f64>>> {
    controls.validate()?;
    let ones = data.count_ones();
    if ones == 0 || ones == data.n() {
        return Err(Error::input("indicator has a single class; the GLM fit is degenerate"));
    }
    let (rank, _) = data.rank_and_condition();
    if rank < data.p() {
        return Err(Error::input(format!(
            "design is rank deficient (rank {rank} < {} columns)",
            data.p()
        )));
    }
    maximize_beta(data, link, 0.0, 0.0, &vec![0.0; data.p()], controls)
}

/// Maximizes the SPPS likelihood in `β` with `(ε, δ)` fixed, starting from `beta_init`.
///
/// The returned log-likelihood never falls below the value at `beta_init`
/// by more than rounding.
pub fn beta_step(
    data: &Dataset,
    link: LinkFunction,
    epsilon: f64,
    delta: f64,
    beta_init: &[f64],
    controls: &SolverControls,
) -> Result<StepResult<Vec<f64>>> {
    controls.validate()?;
    maximize_beta(data, link, epsilon, delta, beta_init, controls)
}

/// Link values at fixed `β`, split by indicator, so each scalar evaluation is just logs.
struct ScalarProblem {
    cdf_ones: Vec<f64>,
    survival_zeros: Vec<f64>,
}

impl ScalarProblem {
    fn new(data: &Dataset, link: LinkFunction, beta: &[f64]) -> Result<Self> {
        if beta.len() != data.p() {
            return Err(Error::input(format!(
                "beta has length {} but the design has {} columns",
                beta.len(),
                data.p()
            )));
        }
        let eta = data.linear_predictor(beta);
        let mut p = ScalarProblem {
            cdf_ones: Vec::new(),
            survival_zeros: Vec::new(),
        };
        for (&e, &a) in eta.iter().zip(data.indicator()) {
            if a {
                p.cdf_ones.push(link.cdf(e));
            } else {
                p.survival_zeros.push(link.survival(e));
            }
        }
        Ok(p)
    }

    fn loglik(&self, epsilon: f64, delta: f64) -> f64 {
        let span = 1.0 - epsilon - delta;
        compensated_sum(
            self.cdf_ones
                .iter()
                .map(|&c| (epsilon + span * c).ln())
                .chain(self.survival_zeros.iter().map(|&s| (delta + span * s).ln())),
        )
    }
}

fn scalar_result(opt: crate::optimize::ScalarOptimum) -> StepResult<f64> {
    StepResult {
        value: opt.x,
        loglik: opt.value,
        iterations: opt.evaluations,
        converged: opt.converged,
        at_boundary: opt.at_lower || opt.at_upper,
    }
}

/// Maximizes the SPPS likelihood in `ε` over `[m, 1 − δ − m]` (`m` = `bound_margin`).
pub fn epsilon_step(
    data: &Dataset,
    link: LinkFunction,
    beta: &[f64],
    delta: f64,
    controls: &SolverControls,
) -> Result<StepResult<f64>> {
    controls.validate()?;
    let m = controls.bound_margin;
    if !(0.0..1.0 - 2.0 * m).contains(&delta) {
        return Err(Error::input(format!(
            "epsilon search interval is empty for delta = {delta}"
        )));
    }
    let problem = ScalarProblem::new(data, link, beta)?;
    let opt = maximize_bounded(
        |eps| problem.loglik(eps, delta),
        m,
        1.0 - delta - m,
        controls.scalar_opt_tol,
        SCALAR_MAX_EVALS,
    );
    Ok(scalar_result(opt))
}

/// Maximizes the SPPS likelihood in `δ` over `[m, 1 − ε − m]`. Not used in missing-data mode.
pub fn delta_step(
    data: &Dataset,
    link: LinkFunction,
    beta: &[f64],
    epsilon: f64,
    controls: &SolverControls,
) -> Result<StepResult<f64>> {
    controls.validate()?;
    let m = controls.bound_margin;
    if !(0.0..1.0 - 2.0 * m).contains(&epsilon) {
        return Err(Error::input(format!(
            "delta search interval is empty for epsilon = {epsilon}"
        )));
    }
    let problem = ScalarProblem::new(data, link, beta)?;
    let opt = maximize_bounded(
        |del| problem.loglik(epsilon, del),
        m,
        1.0 - epsilon - m,
        controls.scalar_opt_tol,
        SCALAR_MAX_EVALS,
    );
    Ok(scalar_result(opt))
}
