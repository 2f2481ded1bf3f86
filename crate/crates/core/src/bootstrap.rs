//! Stratified nonparametric bootstrap with normal confidence intervals.
//!
//! Rows are resampled with replacement separately within the `indicator = 1`
//! and `indicator = 0` groups, keeping both group sizes. Resample `b` draws from
//! ChaCha8 stream `b` of the configured seed.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::EstimateReport;
use crate::exec::Execution;
use crate::fit::FitOptions;
use crate::model::Dataset;
use crate::pipeline::EstimatorSpec;
use crate::simulation::replicate_rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapConfig {
    pub n_boot: usize,
    pub z_value: f64,
    pub seed: u64,
    /// Fraction of failed resamples above which the run is reported unreliable.
    pub max_failure_rate: f64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            n_boot: 1000,
            z_value: 1.96,
            seed: 2016,
            max_failure_rate: 0.2,
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_boot < 2 {
            return Err(Error::input("n_boot must be at least 2"));
        }
        if !(self.z_value > 0.0 && self.z_value.is_finite()) {
            return Err(Error::input("z_value must be positive"));
        }
        if !(0.0..=1.0).contains(&self.max_failure_rate) {
            return Err(Error::input("max_failure_rate must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BootstrapReport {
    /// Statistic on the original data.
    pub estimate: f64,
    /// Sample SD of the successful replicates (denominator `k − 1`).
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// `z · se`
    pub half_width: f64,
    pub n_boot: usize,
    pub n_boot_effective: usize,
    pub n_fail: usize,
    /// Successful replicate values in resample order.
    #[serde(skip)]
    pub replicates: Vec<f64>,
}

/// Row indices of one stratified resample: first the `indicator = 1` group, then the rest.
pub fn stratified_resample_indices<R: Rng + ?Sized>(indicator: &[bool], rng: &mut R) -> Vec<usize> {
    let ones: Vec<usize> = (0..indicator.len()).filter(|&i| indicator[i]).collect();
    let zeros: Vec<usize> = (0..indicator.len()).filter(|&i| !indicator[i]).collect();
    let mut out = Vec::with_capacity(indicator.len());
    for group in [&ones, &zeros] {
        for _ in 0..group.len() {
            out.push(group[rng.random_range(0..group.len())]);
        }
    }
    out
}

/// Indices of resample `b` under `seed`.
pub fn resample_indices(indicator: &[bool], seed: u64, b: usize) -> Vec<usize> {
    stratified_resample_indices(indicator, &mut replicate_rng(seed, b))
}

fn check_groups(data: &Dataset) -> Result<()> {
    let ones = data.count_ones();
    if ones == 0 || ones == data.n() {
        return Err(Error::input("both indicator groups must be non-empty"));
    }
    Ok(())
}

fn bootstrap_around<F>(
    data: &Dataset,
    config: &BootstrapConfig,
    exec: Execution,
    estimate: f64,
    f: F,
) -> Result<BootstrapReport>
where
    F: Fn(&Dataset) -> Result<f64> + Sync + Send,
{
    let values = exec.map_indexed(config.n_boot, |b| {
        let idx = resample_indices(data.indicator(), config.seed, b);
        data.select_rows(&idx)
            .and_then(|d| f(&d))
            .ok()
            .filter(|v| v.is_finite())
    })?;
    let replicates: Vec<f64> = values.into_iter().flatten().collect();
    let k = replicates.len();
    let n_fail = config.n_boot - k;
    let se = if k >= 2 {
        let mean = replicates.iter().sum::<f64>() / k as f64;
        (replicates.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1) as f64).sqrt()
    } else {
        f64::NAN
    };
    let half_width = config.z_value * se;
    let report = BootstrapReport {
        estimate,
        se,
        ci_low: estimate - half_width,
        ci_high: estimate + half_width,
        half_width,
        n_boot: config.n_boot,
        n_boot_effective: k,
        n_fail,
        replicates,
    };
    if k < 2 || n_fail as f64 > config.max_failure_rate * config.n_boot as f64 {
        return Err(Error::BootstrapUnreliable {
            n_fail,
            n_boot: config.n_boot,
            partial: Box::new(report),
        });
    }
    Ok(report)
}

/// Bootstraps an arbitrary statistic; `f` is also evaluated on `data` for the point estimate.
pub fn bootstrap_statistic<F>(
    data: &Dataset,
    config: &BootstrapConfig,
    exec: Execution,
    f: F,
) -> Result<BootstrapReport>
where
    F: Fn(&Dataset) -> Result<f64> + Sync + Send,
{
    config.validate()?;
    check_groups(data)?;
    let estimate = f(data)?;
    bootstrap_around(data, config, exec, estimate, f)
}

/// Point estimate plus bootstrap SE and CI, refitting the propensity model on every resample.
pub fn bootstrap_estimate(
    data: &Dataset,
    spec: &EstimatorSpec,
    options: &FitOptions,
    config: &BootstrapConfig,
    exec: Execution,
) -> Result<EstimateReport> {
    config.validate()?;
    check_groups(data)?;
    let mut report = spec.estimate(data, options)?;
    let boot = bootstrap_around(data, config, exec, report.value, |d| {
        spec.estimate(d, options).map(|r| r.value)
    })?;
    report.bootstrap = Some(boot);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n: usize) -> Dataset {
        let rows: Vec<Vec<f64>> = (0..n).map(|i| vec![(i % 7) as f64]).collect();
        let ind = (0..n).map(|i| i % 3 == 0).collect();
        let y = (0..n).map(|i| i as f64).collect();
        Dataset::from_covariates(&rows, ind, Some(y)).unwrap()
    }

    #[test]
    fn constant_statistic_has_zero_se() {
        let cfg = BootstrapConfig {
            n_boot: 50,
            ..Default::default()
        };
        let r = bootstrap_statistic(&toy(30), &cfg, Execution::Sequential, |_| Ok(7.0)).unwrap();
        assert_eq!(r.se, 0.0);
        assert_eq!((r.ci_low, r.ci_high), (7.0, 7.0));
        assert_eq!(r.n_boot_effective, 50);
    }

    #[test]
    fn resamples_keep_group_sizes() {
        let d = toy(40);
        for b in 0..20 {
            let idx = resample_indices(d.indicator(), 3, b);
            assert_eq!(idx.len(), 40);
            let ones = idx.iter().filter(|&&i| d.indicator()[i]).count();
            assert_eq!(ones, d.count_ones());
            let first_block = &idx[..ones];
            assert!(first_block.iter().all(|&i| d.indicator()[i]));
        }
    }

    #[test]
    fn failures_are_counted_and_bounded() {
        let d = toy(30);
        let cfg = BootstrapConfig {
            n_boot: 40,
            ..Default::default()
        };
        // Fails on resamples whose first row index is even: roughly half.
        let stat = |x: &Dataset| {
            if (x.outcome().unwrap()[0] as usize).is_multiple_of(2) {
                Err(Error::degenerate("stub"))
            } else {
                Ok(1.0)
            }
        };
        match bootstrap_around(&d, &cfg, Execution::Sequential, 1.0, stat) {
            Err(Error::BootstrapUnreliable {
                n_fail,
                n_boot,
                partial,
            }) => {
                assert_eq!(n_boot, 40);
                assert_eq!(partial.n_fail, n_fail);
                assert_eq!(partial.n_boot_effective + n_fail, 40);
            }
            other => panic!("expected unreliable, got {other:?}"),
        }
    }

    #[test]
    fn seed_determinism_and_worker_independence() {
        let d = toy(60);
        let cfg = BootstrapConfig {
            n_boot: 64,
            ..Default::default()
        };
        let mean = |x: &Dataset| Ok(x.outcome().unwrap().iter().sum::<f64>() / x.n() as f64);
        let a = bootstrap_statistic(&d, &cfg, Execution::Sequential, mean).unwrap();
        let b = bootstrap_statistic(&d, &cfg, Execution::Workers(4), mean).unwrap();
        assert_eq!(a, b);
        assert!(a.se > 0.0);
    }

    #[test]
    fn rejects_bad_config() {
        let d = toy(10);
        let cfg = BootstrapConfig {
            n_boot: 1,
            ..Default::default()
        };
        assert!(bootstrap_statistic(&d, &cfg, Execution::Sequential, |_| Ok(0.0)).is_err());
    }
}
