//! Fit-then-estimate glue shared by the bootstrap, the simulation and the CLI.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{estimate_ate, estimate_mean_ipw, EstimateReport, PropensityFit, Variant};
use crate::fit::{fit_spps_given_plain, FitOptions, FitResult};
use crate::glm::fit_plain_glm;
use crate::link::LinkFunction;
use crate::model::{Dataset, Mode};

/// Propensities from the plain GLM and, when requested, from the SPPS model.
#[derive(Debug, Clone)]
pub struct FittedPropensities {
    pub plain: Vec<f64>,
    pub plain_beta: Vec<f64>,
    pub spps: Option<FitResult>,
}

impl FittedPropensities {
    /// Fits the plain GLM once and reuses it as the starting point of the SPPS fit.
    pub fn compute(
        data: &Dataset,
        link: LinkFunction,
        mode: Mode,
        with_spps: bool,
        options: &FitOptions,
    ) -> Result<Self> {
        options.validate()?;
        let plain = fit_plain_glm(data, link, &options.controls)?;
        let eta = data.linear_predictor(&plain.value);
        let plain_fitted = eta.iter().map(|&u| link.cdf(u)).collect();
        let spps = if with_spps {
            Some(fit_spps_given_plain(data, link, mode, options, &plain)?)
        } else {
            None
        };
        Ok(FittedPropensities {
            plain: plain_fitted,
            plain_beta: plain.value,
            spps,
        })
    }

    pub fn get(&self, fit: PropensityFit) -> Option<&[f64]> {
        match fit {
            PropensityFit::Plain => Some(&self.plain),
            PropensityFit::Spps => self.spps.as_ref().map(|f| f.fitted.as_slice()),
        }
    }
}

/// Evaluates one variant on already fitted propensities.
///
/// Missing-data mode estimates the population mean and only admits `O` and `P`.
pub fn estimate_with(
    data: &Dataset,
    mode: Mode,
    variant: Variant,
    fits: &FittedPropensities,
) -> Result<EstimateReport> {
    let fitted = fits
        .get(variant.propensity_fit())
        .ok_or_else(|| Error::input(format!("variant {variant} needs the SPPS fit")))?;
    let mut report = match mode {
        Mode::Treatment => estimate_ate(data, fitted, variant)?,
        Mode::MissingData if variant.corrected() => {
            return Err(Error::input(format!(
                "variant {variant} is only defined for the ATE (treatment mode)"
            )))
        }
        Mode::MissingData => estimate_mean_ipw(data, fitted, variant.propensity_fit())?,
    };
    if let (PropensityFit::Spps, Some(fit)) = (variant.propensity_fit(), &fits.spps) {
        if fit.guard_triggered {
            report
                .warnings
                .push("initial bound estimates exceeded the guard; plain GLM propensities used".to_owned());
        } else if fit.fallback_plain_glm {
            report
                .warnings
                .push("SPPS fit did not improve on the plain GLM; plain GLM propensities used".to_owned());
        }
        if !fit.converged {
            report
                .warnings
                .push("SPPS fit did not converge; estimate uses the best iterate".to_owned());
        }
    }
    Ok(report)
}

/// Full pipeline for several variants, fitting each propensity model once.
pub fn estimate_variants(
    data: &Dataset,
    link: LinkFunction,
    mode: Mode,
    variants: &[Variant],
    options: &FitOptions,
) -> Result<Vec<EstimateReport>> {
    let with_spps = variants.iter().any(|v| v.propensity_fit() == PropensityFit::Spps);
    let fits = FittedPropensities::compute(data, link, mode, with_spps, options)?;
    variants.iter().map(|&v| estimate_with(data, mode, v, &fits)).collect()
}

/// What to estimate and how to fit the propensities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EstimatorSpec {
    pub variant: Variant,
    #[serde(default)]
    pub link: LinkFunction,
    pub mode: Mode,
}

impl EstimatorSpec {
    pub fn new(variant: Variant, link: LinkFunction, mode: Mode) -> Self {
        EstimatorSpec { variant, link, mode }
    }

    /// Refits the propensity model on `data` and evaluates the estimator.
    pub fn estimate(&self, data: &Dataset, options: &FitOptions) -> Result<EstimateReport> {
        let with_spps = self.variant.propensity_fit() == PropensityFit::Spps;
        let fits = FittedPropensities::compute(data, self.link, self.mode, with_spps, options)?;
        estimate_with(data, self.mode, self.variant, &fits)
    }
}
