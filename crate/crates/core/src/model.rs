//! The SPPS propensity model: parameters, data, likelihood and score.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::link::LinkFunction;

/// Floor applied to `φ` (and `1 − φ`) in log terms when `ε = δ = 0`.
pub const PLAIN_PROBABILITY_FLOOR: f64 = 1e-12;

/// Which setting the indicator column describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Indicator is the response indicator `A`; only a lower bound `ε` is modelled (`δ ≡ 0`).
    #[serde(alias = "missing")]
    MissingData,
    /// Indicator is the treatment `T`; both bounds `ε` and `δ` are modelled.
    Treatment,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::MissingData => "missing",
            Mode::Treatment => "treatment",
        })
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "missing" | "missing_data" | "missing-data" => Ok(Mode::MissingData),
            "treatment" => Ok(Mode::Treatment),
            other => Err(format!("unknown mode '{other}' (expected missing or treatment)")),
        }
    }
}

/// Parameter vector `(ε, δ, β)` of the SPPS model.
///
/// Invariants enforced at construction: `ε, δ ∈ [0, 1)`, `ε + δ < 1`, and
/// `δ = 0` exactly in [`Mode::MissingData`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theta {
    epsilon: f64,
    delta: f64,
    beta: Vec<f64>,
    mode: Mode,
}

impl Theta {
    pub fn new(epsilon: f64, delta: f64, beta: Vec<f64>, mode: Mode) -> Result<Self> {
        if !(0.0..1.0).contains(&epsilon) {
            return Err(Error::input(format!("epsilon must lie in [0, 1), got {epsilon}")));
        }
        if !(0.0..1.0).contains(&delta) {
            return Err(Error::input(format!("delta must lie in [0, 1), got {delta}")));
        }
        if epsilon + delta >= 1.0 {
            return Err(Error::input(format!(
                "epsilon + delta must be < 1, got {epsilon} + {delta}"
            )));
        }
        if mode == Mode::MissingData && delta != 0.0 {
            return Err(Error::input("delta must be exactly 0 in missing-data mode"));
        }
        if beta.is_empty() || beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::input("beta must be a non-empty finite vector"));
        }
        Ok(Theta {
            epsilon,
            delta,
            beta,
            mode,
        })
    }

    /// The plain GLM submodel `ε = δ = 0`.
    pub fn plain(beta: Vec<f64>, mode: Mode) -> Result<Self> {
        Theta::new(0.0, 0.0, beta, mode)
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// `1 − ε − δ`, the height of the rescaled link.
    pub fn span(&self) -> f64 {
        1.0 - self.epsilon - self.delta
    }

    pub fn with_beta(&self, beta: Vec<f64>) -> Result<Self> {
        Theta::new(self.epsilon, self.delta, beta, self.mode)
    }
}

/// Design matrix with a leading intercept column, binary indicator, and optional outcome.
///
/// Missing outcome entries are stored as `NaN` and are only allowed on rows
/// whose indicator is 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    design: DMatrix<f64>,
    indicator: Vec<bool>,
    outcome: Option<Vec<f64>>,
}

impl Dataset {
    pub fn new(design: DMatrix<f64>, indicator: Vec<bool>, outcome: Option<Vec<f64>>) -> Result<Self> {
        let (n, p) = design.shape();
        if p == 0 {
            return Err(Error::input("design matrix has no columns"));
        }
        if indicator.len() != n {
            return Err(Error::input(format!(
                "indicator has {} entries but design has {n} rows",
                indicator.len()
            )));
        }
        if n < p {
            return Err(Error::input(format!(
                "need at least as many rows as columns (n = {n}, p = {p})"
            )));
        }
        if design.column(0).iter().any(|&v| v != 1.0) {
            return Err(Error::input("first design column must be the all-ones intercept"));
        }
        if let Some((idx, _)) = design.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::input(format!(
                "non-finite design entry at row {}, column {}",
                idx % n,
                idx / n
            )));
        }
        if let Some(y) = &outcome {
            if y.len() != n {
                return Err(Error::input(format!(
                    "outcome has {} entries but design has {n} rows",
                    y.len()
                )));
            }
            for (i, (&yi, &a)) in y.iter().zip(&indicator).enumerate() {
                if yi.is_nan() && a {
                    return Err(Error::input(format!("outcome missing at row {i} where indicator is 1")));
                }
                if yi.is_infinite() {
                    return Err(Error::input(format!("outcome is infinite at row {i}")));
                }
            }
        }
        Ok(Dataset {
            design,
            indicator,
            outcome,
        })
    }

    /// Builds a dataset from covariate rows, prepending the intercept column.
    pub fn from_covariates(rows: &[Vec<f64>], indicator: Vec<bool>, outcome: Option<Vec<f64>>) -> Result<Self> {
        let k = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::input("covariate rows have differing lengths"));
        }
        let design = DMatrix::from_fn(rows.len(), k + 1, |i, j| if j == 0 { 1.0 } else { rows[i][j - 1] });
        Dataset::new(design, indicator, outcome)
    }

    pub fn n(&self) -> usize {
        self.design.nrows()
    }

    pub fn p(&self) -> usize {
        self.design.ncols()
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }

    pub fn indicator(&self) -> &[bool] {
        &self.indicator
    }

    pub fn outcome(&self) -> Option<&[f64]> {
        self.outcome.as_deref()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.design.row(i).iter().copied().collect()
    }

    /// Number of rows with indicator 1.
    pub fn count_ones(&self) -> usize {
        self.indicator.iter().filter(|&&a| a).count()
    }

    /// Row-subset (with repetition) used by resampling.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Dataset> {
        if rows.iter().any(|&r| r >= self.n()) {
            return Err(Error::input("row index out of range"));
        }
        let design = self.design.select_rows(rows);
        let indicator = rows.iter().map(|&r| self.indicator[r]).collect();
        let outcome = self.outcome.as_ref().map(|y| rows.iter().map(|&r| y[r]).collect());
        Dataset::new(design, indicator, outcome)
    }

    /// Numerical rank from the singular values, with the usual `max(n, p) · σ_max · eps` cutoff.
    pub fn rank_and_condition(&self) -> (usize, f64) {
        let sv = self.design.clone().singular_values();
        let smax = sv.iter().copied().fold(0.0, f64::max);
        let smin = sv.iter().copied().fold(f64::INFINITY, f64::min);
        let tol = self.n().max(self.p()) as f64 * smax * f64::EPSILON;
        let rank = sv.iter().filter(|&&s| s > tol).count();
        let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
        (rank, cond)
    }

    pub(crate) fn linear_predictor(&self, beta: &[f64]) -> DVector<f64> {
        &self.design * DVector::from_column_slice(beta)
    }
}

/// Per-row quantities of the SPPS model at one linear predictor.
#[derive(Debug, Clone, Copy)]
pub(crate) struct RowTerms {
    pub pi: f64,
    pub one_minus_pi: f64,
    pub cdf: f64,
    pub survival: f64,
}

#[inline]
pub(crate) fn row_terms(eta: f64, epsilon: f64, delta: f64, link: LinkFunction) -> RowTerms {
    let cdf = link.cdf(eta);
    let survival = link.survival(eta);
    let span = 1.0 - epsilon - delta;
    let (pi, one_minus_pi) = if epsilon == 0.0 && delta == 0.0 {
        (
            cdf.clamp(PLAIN_PROBABILITY_FLOOR, 1.0 - PLAIN_PROBABILITY_FLOOR),
            survival.clamp(PLAIN_PROBABILITY_FLOOR, 1.0 - PLAIN_PROBABILITY_FLOOR),
        )
    } else {
        (epsilon + span * cdf, delta + span * survival)
    };
    RowTerms {
        pi,
        one_minus_pi,
        cdf,
        survival,
    }
}

/// Neumaier-compensated summation.
pub(crate) fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0_f64;
    let mut comp = 0.0_f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Log-likelihood given precomputed linear predictors.
pub(crate) fn loglik_from_eta(eta: &[f64], indicator: &[bool], epsilon: f64, delta: f64, link: LinkFunction) -> f64 {
    compensated_sum(eta.iter().zip(indicator).map(|(&e, &a)| {
        let t = row_terms(e, epsilon, delta, link);
        if a {
            t.pi.ln()
        } else {
            t.one_minus_pi.ln()
        }
    }))
}

fn check_dims(data: &Dataset, theta: &Theta) -> Result<()> {
    if theta.beta().len() != data.p() {
        return Err(Error::input(format!(
            "beta has length {} but the design has {} columns",
            theta.beta().len(),
            data.p()
        )));
    }
    Ok(())
}

/// `ε + (1 − δ − ε) φ`, capped so rounding never pushes it above `1 − δ`.
#[inline]
fn bounded_propensity(theta: &Theta, cdf: f64) -> f64 {
    (theta.epsilon() + theta.span() * cdf).min(1.0 - theta.delta())
}

/// `ε + (1 − δ − ε) φ(βᵀx)` for one covariate vector (intercept included).
pub fn evaluate_propensity(x: &[f64], theta: &Theta, link: LinkFunction) -> Result<f64> {
    if x.len() != theta.beta().len() {
        return Err(Error::input(format!(
            "covariate vector has length {} but beta has length {}",
            x.len(),
            theta.beta().len()
        )));
    }
    let eta: f64 = x.iter().zip(theta.beta()).map(|(a, b)| a * b).sum();
    Ok(bounded_propensity(theta, link.cdf(eta)))
}

/// Fitted propensities for every row of `data`.
pub fn fitted_propensities(data: &Dataset, theta: &Theta, link: LinkFunction) -> Result<Vec<f64>> {
    check_dims(data, theta)?;
    let eta = data.linear_predictor(theta.beta());
    Ok(eta.iter().map(|&e| bounded_propensity(theta, link.cdf(e))).collect())
}

/// Bernoulli log-likelihood `Σ Aᵢ log πᵢ + (1 − Aᵢ) log(1 − πᵢ)`.
pub fn log_likelihood(data: &Dataset, theta: &Theta, link: LinkFunction) -> Result<f64> {
    check_dims(data, theta)?;
    let eta = data.linear_predictor(theta.beta());
    Ok(loglik_from_eta(
        eta.as_slice(),
        data.indicator(),
        theta.epsilon(),
        theta.delta(),
        link,
    ))
}

/// Gradient of [`log_likelihood`] with respect to `(ε, δ, β₁, …, β_p)`.
///
/// The `δ` coordinate is reported in missing-data mode as well; callers that
/// hold `δ` fixed at zero simply ignore it.
pub fn score(data: &Dataset, theta: &Theta, link: LinkFunction) -> Result<Vec<f64>> {
    check_dims(data, theta)?;
    let eta = data.linear_predictor(theta.beta());
    let span = theta.span();
    let mut grad = vec![0.0; data.p() + 2];
    let mut beta_weights = DVector::zeros(data.n());
    for (i, (&e, &a)) in eta.iter().zip(data.indicator()).enumerate() {
        let t = row_terms(e, theta.epsilon(), theta.delta(), link);
        let resid = if a { 1.0 / t.pi } else { -1.0 / t.one_minus_pi };
        grad[0] += resid * t.survival;
        grad[1] -= resid * t.cdf;
        beta_weights[i] = resid * span * link.density(e);
    }
    let beta_grad = data.design().tr_mul(&beta_weights);
    grad[2..].copy_from_slice(beta_grad.as_slice());
    Ok(grad)
}
