//! Inverse-probability-weighted estimators of a population mean and of the ATE.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bootstrap::BootstrapReport;
use crate::error::{Error, Result};
use crate::model::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimand {
    PopulationMean,
    Ate,
}

/// Which propensity fit feeds the weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropensityFit {
    /// Plain GLM (`ε = δ = 0`).
    Plain,
    Spps,
}

/// Estimator variants.
///
/// * `O`: IPW with plain-GLM propensities.
/// * `P`: IPW with SPPS propensities.
/// * `LD`: Lunceford–Davidian weights with plain-GLM propensities.
/// * `PLD`: Lunceford–Davidian weights with SPPS propensities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    O,
    P,
    LD,
    PLD,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::O, Variant::P, Variant::LD, Variant::PLD];

    pub fn propensity_fit(self) -> PropensityFit {
        match self {
            Variant::O | Variant::LD => PropensityFit::Plain,
            Variant::P | Variant::PLD => PropensityFit::Spps,
        }
    }

    pub fn corrected(self) -> bool {
        matches!(self, Variant::LD | Variant::PLD)
    }

    fn from_parts(fit: PropensityFit, corrected: bool) -> Variant {
        match (fit, corrected) {
            (PropensityFit::Plain, false) => Variant::O,
            (PropensityFit::Spps, false) => Variant::P,
            (PropensityFit::Plain, true) => Variant::LD,
            (PropensityFit::Spps, true) => Variant::PLD,
        }
    }

    /// Parses a comma-separated list such as `O,P,LD,PLD`.
    pub fn parse_list(s: &str) -> std::result::Result<Vec<Variant>, String> {
        s.split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(str::parse)
            .collect()
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::O => "O",
            Variant::P => "P",
            Variant::LD => "LD",
            Variant::PLD => "PLD",
        })
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "O" => Ok(Variant::O),
            "P" => Ok(Variant::P),
            "LD" => Ok(Variant::LD),
            "PLD" => Ok(Variant::PLD),
            _ => Err(format!("unknown variant '{s}' (expected O, P, LD or PLD)")),
        }
    }
}

/// Summary of the per-row inverse-probability weights actually applied.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeightsSummary {
    pub min: f64,
    pub max: f64,
    /// `Σ Iᵢ/π̂ᵢ`
    pub treated_sum: f64,
    /// `Σ (1−Iᵢ)/(1−π̂ᵢ)`; absent for the population mean.
    pub control_sum: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateReport {
    pub estimand: Estimand,
    pub variant: Variant,
    pub value: f64,
    pub weights_summary: WeightsSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c1: Option<f64>,
    pub warnings: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bootstrap: Option<BootstrapReport>,
}

fn check_len(data: &Dataset, fitted: &[f64]) -> Result<()> {
    if fitted.len() != data.n() {
        return Err(Error::input(format!(
            "{} fitted propensities for {} rows",
            fitted.len(),
            data.n()
        )));
    }
    Ok(())
}

/// Outcomes and propensities for the ATE estimators, with `0 < π̂ < 1` and both arms non-empty.
fn ate_inputs<'a>(data: &'a Dataset, fitted: &[f64]) -> Result<&'a [f64]> {
    check_len(data, fitted)?;
    let y = data
        .outcome()
        .ok_or_else(|| Error::input("the ATE needs an outcome column"))?;
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::input(format!(
            "outcome missing at row {i}; the ATE needs it everywhere"
        )));
    }
    if let Some(i) = fitted.iter().position(|&p| !(p > 0.0 && p < 1.0)) {
        return Err(Error::degenerate(format!(
            "fitted propensity {} at row {i} is outside (0, 1)",
            fitted[i]
        )));
    }
    let treated = data.count_ones();
    if treated == 0 || treated == data.n() {
        return Err(Error::degenerate("one treatment arm is empty"));
    }
    Ok(y)
}

fn weight_range(weights: impl Iterator<Item = f64>) -> (f64, f64) {
    weights.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), w| (lo.min(w), hi.max(w)))
}

/// `n⁻¹ Σ AᵢYᵢ/π̂ᵢ`.
///
/// With no respondents the empty sum `0` is returned together with a warning.
pub fn estimate_mean_ipw(data: &Dataset, fitted: &[f64], fit: PropensityFit) -> Result<EstimateReport> {
    check_len(data, fitted)?;
    let y = data
        .outcome()
        .ok_or_else(|| Error::input("the population mean needs an outcome column"))?;
    let ind = data.indicator();
    let mut sum = 0.0;
    let mut weight_sum = 0.0;
    let mut warnings = Vec::new();
    for i in (0..data.n()).filter(|&i| ind[i]) {
        let p = fitted[i];
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::degenerate(format!(
                "fitted propensity {p} at respondent row {i} is not strictly positive"
            )));
        }
        sum += y[i] / p;
        weight_sum += 1.0 / p;
    }
    let (mut min, mut max) = weight_range((0..data.n()).filter(|&i| ind[i]).map(|i| 1.0 / fitted[i]));
    if weight_sum == 0.0 {
        warnings.push("no rows have indicator 1; the estimate is an empty sum".to_owned());
        min = 0.0;
        max = 0.0;
    }
    Ok(EstimateReport {
        estimand: Estimand::PopulationMean,
        variant: Variant::from_parts(fit, false),
        value: sum / data.n() as f64,
        weights_summary: WeightsSummary {
            min,
            max,
            treated_sum: weight_sum,
            control_sum: None,
        },
        c0: None,
        c1: None,
        warnings,
        bootstrap: None,
    })
}

fn ate_weights_summary(ind: &[bool], fitted: &[f64]) -> WeightsSummary {
    let w = |i: usize| {
        if ind[i] {
            1.0 / fitted[i]
        } else {
            1.0 / (1.0 - fitted[i])
        }
    };
    let (min, max) = weight_range((0..ind.len()).map(w));
    WeightsSummary {
        min,
        max,
        treated_sum: (0..ind.len()).filter(|&i| ind[i]).map(w).sum(),
        control_sum: Some((0..ind.len()).filter(|&i| !ind[i]).map(w).sum()),
    }
}

/// `Pₙ{TY/π̂} − Pₙ{(1−T)Y/(1−π̂)}`.
pub fn estimate_ate_ipw(data: &Dataset, fitted: &[f64], fit: PropensityFit) -> Result<EstimateReport> {
    let y = ate_inputs(data, fitted)?;
    let ind = data.indicator();
    let (mut treated, mut control) = (0.0, 0.0);
    for i in 0..data.n() {
        if ind[i] {
            treated += y[i] / fitted[i];
        } else {
            control += y[i] / (1.0 - fitted[i]);
        }
    }
    let n = data.n() as f64;
    Ok(EstimateReport {
        estimand: Estimand::Ate,
        variant: Variant::from_parts(fit, false),
        value: treated / n - control / n,
        weights_summary: ate_weights_summary(ind, fitted),
        c0: None,
        c1: None,
        warnings: Vec::new(),
        bootstrap: None,
    })
}

/// Lunceford–Davidian constants `(C₁, C₀)`.
///
/// `C₁ = Pₙ{r₁}/Pₙ{r₁²}` with `r₁ = (T−π̂)/π̂`, and
/// `C₀ = −Pₙ{r₀}/Pₙ{r₀²}` with `r₀ = (T−π̂)/(1−π̂)`.
pub fn ld_correction_constants(indicator: &[bool], fitted: &[f64]) -> Result<(f64, f64)> {
    if indicator.len() != fitted.len() || indicator.is_empty() {
        return Err(Error::input(
            "indicator and fitted propensities must be non-empty and equally long",
        ));
    }
    if let Some(i) = fitted.iter().position(|&p| !(p > 0.0 && p < 1.0)) {
        return Err(Error::degenerate(format!(
            "fitted propensity {} at row {i} is outside (0, 1)",
            fitted[i]
        )));
    }
    let (mut s1, mut ss1, mut s0, mut ss0) = (0.0, 0.0, 0.0, 0.0);
    for (&t, &p) in indicator.iter().zip(fitted) {
        let resid = if t { 1.0 - p } else { -p };
        let r1 = resid / p;
        let r0 = resid / (1.0 - p);
        s1 += r1;
        ss1 += r1 * r1;
        s0 += r0;
        ss0 += r0 * r0;
    }
    if ss1 == 0.0 || ss0 == 0.0 {
        return Err(Error::degenerate("all propensity residuals are zero"));
    }
    // The common 1/n factors cancel.
    Ok((s1 / ss1, -s0 / ss0))
}

/// Lunceford–Davidian corrected ATE: a ratio estimator per arm with weights
/// `T/π̂·(1 − C₁/π̂)` and `(1−T)/(1−π̂)·(1 − C₀/(1−π̂))`.
pub fn estimate_ate_ld(data: &Dataset, fitted: &[f64], fit: PropensityFit) -> Result<EstimateReport> {
    let y = ate_inputs(data, fitted)?;
    let ind = data.indicator();
    let (c1, c0) = ld_correction_constants(ind, fitted)?;
    let (mut num1, mut den1, mut num0, mut den0) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..data.n() {
        let p = fitted[i];
        if ind[i] {
            let w = (1.0 - c1 / p) / p;
            num1 += w * y[i];
            den1 += w;
        } else {
            let q = 1.0 - p;
            let w = (1.0 - c0 / q) / q;
            num0 += w * y[i];
            den0 += w;
        }
    }
    if den1 == 0.0 || den0 == 0.0 {
        return Err(Error::degenerate("a corrected weight sum is zero"));
    }
    Ok(EstimateReport {
        estimand: Estimand::Ate,
        variant: Variant::from_parts(fit, true),
        value: num1 / den1 - num0 / den0,
        weights_summary: ate_weights_summary(ind, fitted),
        c0: Some(c0),
        c1: Some(c1),
        warnings: Vec::new(),
        bootstrap: None,
    })
}

/// Dispatches on `variant.corrected()`; the caller supplies the matching propensities.
pub fn estimate_ate(data: &Dataset, fitted: &[f64], variant: Variant) -> Result<EstimateReport> {
    if variant.corrected() {
        estimate_ate_ld(data, fitted, variant.propensity_fit())
    } else {
        estimate_ate_ipw(data, fitted, variant.propensity_fit())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ds(ind: &[u8], y: &[f64]) -> Dataset {
        // Intercept-only: estimators never look at covariates.
        let rows = vec![Vec::new(); ind.len()];
        Dataset::from_covariates(&rows, ind.iter().map(|&a| a == 1).collect(), Some(y.to_vec())).unwrap()
    }

    fn random_instance(n: usize, seed: u64) -> (Vec<bool>, Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        loop {
            let t: Vec<bool> = (0..n).map(|_| rng.random::<bool>()).collect();
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
            let p: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..0.95)).collect();
            if t.iter().any(|&a| a) && t.iter().any(|&a| !a) {
                return (t, y, p);
            }
        }
    }

    fn dataset(t: &[bool], y: &[f64]) -> Dataset {
        let rows = vec![Vec::new(); t.len()];
        Dataset::from_covariates(&rows, t.to_vec(), Some(y.to_vec())).unwrap()
    }

    // Literal transcriptions, term by term with explicit averages.
    fn mean_of(v: impl Iterator<Item = f64>, n: usize) -> f64 {
        v.sum::<f64>() / n as f64
    }

    fn oracle_ipw(t: &[bool], y: &[f64], p: &[f64]) -> f64 {
        let n = t.len();
        let tt = |i: usize| if t[i] { 1.0 } else { 0.0 };
        mean_of((0..n).map(|i| tt(i) * y[i] / p[i]), n)
            - mean_of((0..n).map(|i| (1.0 - tt(i)) * y[i] / (1.0 - p[i])), n)
    }

    fn oracle_constants(t: &[bool], p: &[f64]) -> (f64, f64) {
        let n = t.len();
        let tt = |i: usize| if t[i] { 1.0 } else { 0.0 };
        let c1 = mean_of((0..n).map(|i| (tt(i) - p[i]) / p[i]), n)
            / mean_of((0..n).map(|i| ((tt(i) - p[i]) / p[i]).powi(2)), n);
        let c0 = -mean_of((0..n).map(|i| (tt(i) - p[i]) / (1.0 - p[i])), n)
            / mean_of((0..n).map(|i| ((tt(i) - p[i]) / (1.0 - p[i])).powi(2)), n);
        (c1, c0)
    }

    fn oracle_ld(t: &[bool], y: &[f64], p: &[f64]) -> f64 {
        let n = t.len();
        let (c1, c0) = oracle_constants(t, p);
        let tt = |i: usize| if t[i] { 1.0 } else { 0.0 };
        let a1 = mean_of((0..n).map(|i| tt(i) / p[i] * (1.0 - c1 / p[i])), n);
        let b1 = mean_of((0..n).map(|i| tt(i) * y[i] / p[i] * (1.0 - c1 / p[i])), n);
        let a0 = mean_of(
            (0..n).map(|i| (1.0 - tt(i)) / (1.0 - p[i]) * (1.0 - c0 / (1.0 - p[i]))),
            n,
        );
        let b0 = mean_of(
            (0..n).map(|i| (1.0 - tt(i)) * y[i] / (1.0 - p[i]) * (1.0 - c0 / (1.0 - p[i]))),
            n,
        );
        b1 / a1 - b0 / a0
    }

    #[test]
    fn mean_examples() {
        let r = estimate_mean_ipw(
            &ds(&[1, 1, 1], &[1.0, 2.0, 6.0]),
            &[1.0, 1.0, 1.0],
            PropensityFit::Plain,
        )
        .unwrap();
        assert_eq!(r.value, 3.0);
        assert_eq!(r.variant, Variant::O);

        let r = estimate_mean_ipw(
            &ds(&[1, 0, 1], &[2.0, f64::NAN, 4.0]),
            &[0.5, 0.5, 0.8],
            PropensityFit::Spps,
        )
        .unwrap();
        assert!((r.value - 3.0).abs() < 1e-15);
        assert_eq!(r.variant, Variant::P);
        assert_eq!(r.weights_summary.max, 2.0);
        assert_eq!(r.weights_summary.min, 1.25);

        let r = estimate_mean_ipw(&ds(&[0, 0], &[f64::NAN, f64::NAN]), &[0.3, 0.3], PropensityFit::Plain).unwrap();
        assert_eq!(r.value, 0.0);
        assert_eq!(r.warnings.len(), 1);
    }

    #[test]
    fn mean_rejects_zero_propensity_for_respondent() {
        let e = estimate_mean_ipw(&ds(&[1, 0], &[1.0, 2.0]), &[0.0, 0.5], PropensityFit::Plain).unwrap_err();
        assert!(matches!(e, Error::Degenerate(_)));
        // A zero propensity on a non-respondent never enters the sum.
        assert!(estimate_mean_ipw(&ds(&[1, 0], &[1.0, 2.0]), &[0.5, 0.0], PropensityFit::Plain).is_ok());
    }

    #[test]
    fn ate_examples() {
        let d = ds(&[1, 0], &[3.0, 1.0]);
        let r = estimate_ate_ipw(&d, &[0.5, 0.5], PropensityFit::Plain).unwrap();
        assert_eq!(r.value, 2.0);
        assert_eq!(r.weights_summary.treated_sum, 2.0);
        assert_eq!(r.weights_summary.control_sum, Some(2.0));

        let r = estimate_ate_ld(&d, &[0.5, 0.5], PropensityFit::Plain).unwrap();
        assert_eq!(r.c1, Some(0.0));
        assert_eq!(r.c0, Some(0.0));
        assert_eq!(r.value, 2.0);
        assert_eq!(r.variant, Variant::LD);
    }

    #[test]
    fn balanced_constant_outcome_gives_zero() {
        // Σ T/π = Σ (1−T)/(1−π) = n.
        let d = ds(&[1, 0, 0, 1], &[5.0; 4]);
        let p = [0.5, 0.5, 0.5, 0.5];
        assert_eq!(estimate_ate_ipw(&d, &p, PropensityFit::Spps).unwrap().value, 0.0);
    }

    #[test]
    fn ate_errors() {
        let d = ds(&[1, 0], &[3.0, 1.0]);
        assert!(matches!(
            estimate_ate_ipw(&d, &[1.0, 0.5], PropensityFit::Plain),
            Err(Error::Degenerate(_))
        ));
        let d = ds(&[1, 1], &[3.0, 1.0]);
        assert!(matches!(
            estimate_ate_ld(&d, &[0.4, 0.5], PropensityFit::Plain),
            Err(Error::Degenerate(_))
        ));
        let rows = vec![Vec::new(); 2];
        let d = Dataset::from_covariates(&rows, vec![true, false], None).unwrap();
        assert!(matches!(
            estimate_ate_ipw(&d, &[0.5, 0.5], PropensityFit::Plain),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn constants_examples() {
        assert_eq!(
            ld_correction_constants(&[true, false], &[0.5, 0.5]).unwrap(),
            (0.0, 0.0)
        );
        let (c1, c0) = ld_correction_constants(&[true, true, true], &[0.5, 0.5, 0.5]).unwrap();
        assert_eq!(c1, 1.0);
        assert_eq!(c0, -1.0);
    }

    #[test]
    fn seeded_instances_match_transcriptions() {
        for seed in 0..20 {
            let n = 10 + (seed as usize * 2);
            let (t, y, p) = random_instance(n, seed);
            let d = dataset(&t, &y);
            let ipw = estimate_ate_ipw(&d, &p, PropensityFit::Plain).unwrap().value;
            assert!((ipw - oracle_ipw(&t, &y, &p)).abs() < 1e-12);
            let (c1, c0) = ld_correction_constants(&t, &p).unwrap();
            let (o1, o0) = oracle_constants(&t, &p);
            assert!((c1 - o1).abs() < 1e-12 && (c0 - o0).abs() < 1e-12);
            let ld = estimate_ate_ld(&d, &p, PropensityFit::Spps).unwrap().value;
            assert!((ld - oracle_ld(&t, &y, &p)).abs() < 1e-10);
        }
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.to_string().parse::<Variant>().unwrap(), v);
        }
        assert_eq!(Variant::parse_list("o, pld").unwrap(), vec![Variant::O, Variant::PLD]);
        assert!("X".parse::<Variant>().is_err());
    }

    proptest! {
        #[test]
        fn location_and_scale(seed in 0u64..1000, c in -10.0f64..10.0, a in -5.0f64..5.0) {
            let (t, y, p) = random_instance(30, seed);
            let d = dataset(&t, &y);
            let shifted = dataset(&t, &y.iter().map(|v| v + c).collect::<Vec<_>>());
            let scaled = dataset(&t, &y.iter().map(|v| a * v).collect::<Vec<_>>());

            let base = estimate_ate_ipw(&d, &p, PropensityFit::Plain).unwrap();
            let n = t.len() as f64;
            let ws = base.weights_summary;
            let expected_shift = c * (ws.treated_sum - ws.control_sum.unwrap()) / n;
            let moved = estimate_ate_ipw(&shifted, &p, PropensityFit::Plain).unwrap().value;
            prop_assert!((moved - base.value - expected_shift).abs() < 1e-9);
            let s = estimate_ate_ipw(&scaled, &p, PropensityFit::Plain).unwrap().value;
            prop_assert!((s - a * base.value).abs() < 1e-9 * (1.0 + base.value.abs()));

            let ld = estimate_ate_ld(&d, &p, PropensityFit::Plain).unwrap().value;
            let ld_moved = estimate_ate_ld(&shifted, &p, PropensityFit::Plain).unwrap().value;
            prop_assert!((ld_moved - ld).abs() < 1e-9);
            let ld_scaled = estimate_ate_ld(&scaled, &p, PropensityFit::Plain).unwrap().value;
            prop_assert!((ld_scaled - a * ld).abs() < 1e-9 * (1.0 + ld.abs()));

            let m = estimate_mean_ipw(&d, &p, PropensityFit::Plain).unwrap();
            let m_moved = estimate_mean_ipw(&shifted, &p, PropensityFit::Plain).unwrap().value;
            prop_assert!((m_moved - m.value - c * m.weights_summary.treated_sum / n).abs() < 1e-9);
        }
    }
}
