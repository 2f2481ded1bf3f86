//! Coordinate-ascent maximum likelihood for the SPPS model.
//!
//! 1. Fit the plain GLM (`ε = δ = 0`) to get `β̂₀` and `π̂ᵢ = φ(β̂₀ᵀxᵢ)`.
//! 2. Start from `ε̂ = min π̂ᵢ`, `δ̂ = 1 − max π̂ᵢ` (`δ̂ = 0` for missing data).
//!    In treatment mode, if `ε̂ + δ̂ > 0.6` the plain GLM is returned unchanged.
//! 3. Cycle `β` (Newton), `ε` (bounded search), `δ` (bounded search) until the
//!    log-likelihood gain of a full cycle drops below `outer_tol`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glm::{beta_step, delta_step, epsilon_step, fit_plain_glm, SolverControls, StepResult};
use crate::link::LinkFunction;
use crate::model::{fitted_propensities, log_likelihood, loglik_from_eta, Dataset, Mode, Theta};

/// Linear-predictor ranges narrower than this (in link units) trigger a warning.
const NARROW_PREDICTOR_RANGE: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub controls: SolverControls,
    pub max_outer_iters: usize,
    pub outer_tol: f64,
    /// Treatment mode falls back to the plain GLM when the initial `ε̂ + δ̂` exceeds this.
    pub guard_threshold: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            controls: SolverControls::default(),
            max_outer_iters: 200,
            outer_tol: 1e-8,
            guard_threshold: 0.6,
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        self.controls.validate()?;
        if self.max_outer_iters == 0 || !(self.outer_tol > 0.0) {
            return Err(Error::input("max_outer_iters and outer_tol must be positive"));
        }
        if !(self.guard_threshold > 0.0) {
            return Err(Error::input("guard_threshold must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TracePoint {
    pub iteration: usize,
    pub loglik: f64,
}

/// Identifiability checks that can be made from a finite sample.
///
/// Full column rank is required. Unboundedness of the linear predictor's
/// support cannot be verified from data; a narrow observed range is only
/// reported as a warning.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    pub n: usize,
    pub p: usize,
    pub rank: usize,
    pub condition_number: f64,
    pub min_linear_predictor: Option<f64>,
    pub max_linear_predictor: Option<f64>,
    pub warnings: Vec<String>,
}

impl Diagnostics {
    pub fn rank_deficient(&self) -> bool {
        self.rank < self.p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitResult {
    pub theta_hat: Theta,
    pub link: LinkFunction,
    /// `π(xᵢ, θ̂)` for every row.
    pub fitted: Vec<f64>,
    pub loglik: f64,
    /// Log-likelihood of the plain GLM (absent for warm-started fits).
    pub plain_loglik: Option<f64>,
    /// Starting bounds before clamping into the search interval.
    pub initial_epsilon: f64,
    pub initial_delta: f64,
    pub trace: Vec<TracePoint>,
    pub guard_triggered: bool,
    pub fallback_plain_glm: bool,
    pub converged: bool,
    pub epsilon_at_boundary: bool,
    pub delta_at_boundary: bool,
    pub outer_iterations: usize,
    pub assumption_diagnostics: Diagnostics,
}

fn predictor_diagnostics(data: &Dataset, beta: Option<&[f64]>, mut warnings: Vec<String>) -> Diagnostics {
    let (rank, condition_number) = data.rank_and_condition();
    if rank < data.p() {
        warnings.push(format!(
            "design is rank deficient (rank {rank} < {} columns): covariates lie on a hyperplane",
            data.p()
        ));
    }
    let (mut lo, mut hi) = (None, None);
    if let Some(beta) = beta {
        let eta = data.linear_predictor(beta);
        let min = eta.iter().copied().fold(f64::INFINITY, f64::min);
        let max = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max - min < NARROW_PREDICTOR_RANGE {
            warnings.push(format!(
                "linear predictor spans only [{min:.3}, {max:.3}]; the data give little support for \
                 unbounded predictor tails, so the bounds may be weakly identified"
            ));
        }
        lo = Some(min);
        hi = Some(max);
    }
    Diagnostics {
        n: data.n(),
        p: data.p(),
        rank,
        condition_number,
        min_linear_predictor: lo,
        max_linear_predictor: hi,
        warnings,
    }
}

/// Rank, conditioning and predictor-range checks, using a logistic plain fit for the range.
/// Never fails: problems are reported as warnings.
pub fn check_identifiability(data: &Dataset) -> Diagnostics {
    let (rank, _) = data.rank_and_condition();
    if rank < data.p() {
        return predictor_diagnostics(data, None, Vec::new());
    }
    match fit_plain_glm(data, LinkFunction::Logistic, &SolverControls::default()) {
        Ok(r) => predictor_diagnostics(data, Some(&r.value), Vec::new()),
        Err(e) => predictor_diagnostics(data, None, vec![format!("plain GLM fit failed: {e}")]),
    }
}

/// Full SPPS fit from scratch.
pub fn fit_spps(data: &Dataset, link: LinkFunction, mode: Mode, options: &FitOptions) -> Result<FitResult> {
    options.validate()?;
    let plain = fit_plain_glm(data, link, &options.controls)?;
    fit_spps_given_plain(data, link, mode, options, &plain)
}

/// SPPS fit reusing an already computed plain GLM fit.
pub(crate) fn fit_spps_given_plain(
    data: &Dataset,
    link: LinkFunction,
    mode: Mode,
    options: &FitOptions,
    plain: &StepResult<Vec<f64>>,
) -> Result<FitResult> {
    let plain_theta = Theta::plain(plain.value.clone(), mode)?;
    let plain_fitted = fitted_propensities(data, &plain_theta, link)?;
    let min = plain_fitted.iter().copied().fold(f64::INFINITY, f64::min);
    let max = plain_fitted.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let initial_epsilon = min;
    let initial_delta = match mode {
        Mode::Treatment => 1.0 - max,
        Mode::MissingData => 0.0,
    };
    let diagnostics = predictor_diagnostics(data, Some(&plain.value), Vec::new());

    let plain_result = |trace: Vec<TracePoint>, guard: bool, diagnostics: Diagnostics| FitResult {
        theta_hat: plain_theta.clone(),
        link,
        fitted: plain_fitted.clone(),
        loglik: plain.loglik,
        plain_loglik: Some(plain.loglik),
        initial_epsilon,
        initial_delta,
        trace,
        guard_triggered: guard,
        fallback_plain_glm: true,
        converged: plain.converged,
        epsilon_at_boundary: false,
        delta_at_boundary: false,
        outer_iterations: 0,
        assumption_diagnostics: diagnostics,
    };

    if mode == Mode::Treatment && initial_epsilon + initial_delta > options.guard_threshold {
        let trace = vec![TracePoint {
            iteration: 0,
            loglik: plain.loglik,
        }];
        return Ok(plain_result(trace, true, diagnostics));
    }

    let m = options.controls.bound_margin;
    let (mut eps, mut del) = if max > min {
        (initial_epsilon, initial_delta)
    } else {
        (m, 0.0)
    };
    eps = eps.max(m);
    if mode == Mode::Treatment {
        del = del.max(m);
    }
    eps = eps.min(1.0 - del - m);
    let start = Theta::new(eps, del, plain.value.clone(), mode)?;
    let cycles = coordinate_ascent(data, link, options, &start)?;

    if plain.loglik > cycles.loglik {
        // The plain GLM is the ε = δ = 0 boundary of the model, which the bounded
        // scalar searches cannot reach exactly.
        let mut trace = cycles.trace;
        trace.push(TracePoint {
            iteration: cycles.outer_iterations + 1,
            loglik: plain.loglik,
        });
        let mut result = plain_result(trace, false, diagnostics);
        result.converged = cycles.converged;
        result.outer_iterations = cycles.outer_iterations;
        return Ok(result);
    }

    let fitted = fitted_propensities(data, &cycles.theta, link)?;
    Ok(FitResult {
        theta_hat: cycles.theta,
        link,
        fitted,
        loglik: cycles.loglik,
        plain_loglik: Some(plain.loglik),
        initial_epsilon,
        initial_delta,
        trace: cycles.trace,
        guard_triggered: false,
        fallback_plain_glm: false,
        converged: cycles.converged,
        epsilon_at_boundary: cycles.epsilon_at_boundary,
        delta_at_boundary: cycles.delta_at_boundary,
        outer_iterations: cycles.outer_iterations,
        assumption_diagnostics: diagnostics,
    })
}

/// Runs the `β → ε → δ` cycles from `start`, skipping the plain fit and the guard.
///
/// Bounds in `start` are pulled inside `[bound_margin, 1 − bound_margin]` first.
pub fn fit_spps_from(data: &Dataset, link: LinkFunction, options: &FitOptions, start: &Theta) -> Result<FitResult> {
    options.validate()?;
    let mode = start.mode();
    let m = options.controls.bound_margin;
    let del = match mode {
        Mode::Treatment => start.delta().max(m),
        Mode::MissingData => 0.0,
    };
    let eps = start.epsilon().max(m).min(1.0 - del - m);
    let start = Theta::new(eps, del, start.beta().to_vec(), mode)?;
    let cycles = coordinate_ascent(data, link, options, &start)?;
    let fitted = fitted_propensities(data, &cycles.theta, link)?;
    Ok(FitResult {
        theta_hat: cycles.theta.clone(),
        link,
        fitted,
        loglik: cycles.loglik,
        plain_loglik: None,
        initial_epsilon: start.epsilon(),
        initial_delta: start.delta(),
        trace: cycles.trace,
        guard_triggered: false,
        fallback_plain_glm: false,
        converged: cycles.converged,
        epsilon_at_boundary: cycles.epsilon_at_boundary,
        delta_at_boundary: cycles.delta_at_boundary,
        outer_iterations: cycles.outer_iterations,
        assumption_diagnostics: predictor_diagnostics(data, Some(cycles.theta.beta()), Vec::new()),
    })
}

struct Cycles {
    theta: Theta,
    loglik: f64,
    trace: Vec<TracePoint>,
    converged: bool,
    epsilon_at_boundary: bool,
    delta_at_boundary: bool,
    outer_iterations: usize,
}

/// Longest extrapolation is `2^(MAX_PATTERN_DOUBLINGS−1)` times the last cycle's displacement.
const MAX_PATTERN_DOUBLINGS: usize = 8;

/// Extrapolates along the displacement of the last full cycle, doubling the
/// step while the log-likelihood keeps increasing. Returns the best strictly
/// improving point that stays inside the bound margins.
fn pattern_move(
    data: &Dataset,
    link: LinkFunction,
    margin: f64,
    from: &(f64, f64, Vec<f64>),
    to: (f64, f64, &[f64]),
    ll_to: f64,
) -> Option<(f64, f64, Vec<f64>, f64)> {
    let (de, dd) = (to.0 - from.0, to.1 - from.1);
    let db: Vec<f64> = to.2.iter().zip(&from.2).map(|(a, b)| a - b).collect();
    let fixed_delta = from.1 == 0.0 && to.1 == 0.0;
    let mut best: Option<(f64, f64, Vec<f64>, f64)> = None;
    let mut best_ll = ll_to;
    let mut s = 1.0;
    for _ in 0..MAX_PATTERN_DOUBLINGS {
        let e = to.0 + s * de;
        let d = to.1 + s * dd;
        let delta_ok = if fixed_delta { d == 0.0 } else { d >= margin };
        if !(e >= margin && delta_ok && e + d <= 1.0 - margin) {
            break;
        }
        let b: Vec<f64> = to.2.iter().zip(&db).map(|(v, g)| v + s * g).collect();
        let eta = data.linear_predictor(&b);
        let l = loglik_from_eta(eta.as_slice(), data.indicator(), e, d, link);
        if !(l > best_ll) {
            break;
        }
        best_ll = l;
        best = Some((e, d, b, l));
        s *= 2.0;
    }
    best
}

fn coordinate_ascent(data: &Dataset, link: LinkFunction, options: &FitOptions, start: &Theta) -> Result<Cycles> {
    let controls = &options.controls;
    let mode = start.mode();
    let treatment = mode == Mode::Treatment;
    let (mut eps, mut del) = (start.epsilon(), start.delta());
    let mut beta = start.beta().to_vec();
    let mut ll = log_likelihood(data, start, link)?;
    let mut trace = vec![TracePoint {
        iteration: 0,
        loglik: ll,
    }];
    // (ε, δ) before the most recent scalar updates, for the β-step retry.
    let mut previous_bounds: Option<(f64, f64)> = None;
    let mut converged = false;
    let (mut eps_boundary, mut del_boundary) = (false, false);
    let mut iterations = 0;

    for k in 1..=options.max_outer_iters {
        iterations = k;
        let cycle_start = ll;
        let start_point = (eps, del, beta.clone());

        let step = match beta_step(data, link, eps, del, &beta, controls) {
            Ok(r) => r,
            Err(Error::NonConvergence { .. }) => {
                // Halve the last (ε, δ) update once; with no history, halve toward the margin.
                let floor = if treatment { controls.bound_margin } else { 0.0 };
                let (pe, pd) = previous_bounds.unwrap_or((controls.bound_margin, floor));
                let (re, rd) = (0.5 * (eps + pe), 0.5 * (del + pd));
                match beta_step(data, link, re, rd, &beta, controls) {
                    Ok(r) if r.loglik >= ll => {
                        eps = re;
                        del = rd;
                        r
                    }
                    Ok(_) | Err(Error::NonConvergence { .. }) => break,
                    Err(e) => return Err(e),
                }
            }
            Err(e) => return Err(e),
        };
        beta = step.value;
        ll = step.loglik;

        let before = (eps, del);
        let e = epsilon_step(data, link, &beta, del, controls)?;
        if e.loglik >= ll {
            eps = e.value;
            ll = e.loglik;
            eps_boundary = e.at_boundary;
        }
        if treatment {
            let d = delta_step(data, link, &beta, eps, controls)?;
            if d.loglik >= ll {
                del = d.value;
                ll = d.loglik;
                del_boundary = d.at_boundary;
            }
        }
        previous_bounds = Some(before);
        if let Some((e, d, b, l)) = pattern_move(data, link, controls.bound_margin, &start_point, (eps, del, &beta), ll)
        {
            let m = controls.bound_margin;
            eps = e;
            del = d;
            beta = b;
            ll = l;
            eps_boundary = eps <= m || eps >= 1.0 - del - m;
            del_boundary = treatment && (del <= m || del >= 1.0 - eps - m);
        }
        trace.push(TracePoint {
            iteration: k,
            loglik: ll,
        });

        if ll - cycle_start < options.outer_tol {
            converged = true;
            break;
        }
    }

    Ok(Cycles {
        theta: Theta::new(eps, del, beta, mode)?,
        loglik: ll,
        trace,
        converged,
        epsilon_at_boundary: eps_boundary,
        delta_at_boundary: del_boundary,
        outer_iterations: iterations,
    })
}
