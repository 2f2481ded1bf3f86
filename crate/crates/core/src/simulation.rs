//! Monte Carlo comparison of the four ATE estimators.
//!
//! Covariates: `X₃ ~ Bernoulli(0.2)`, `V₃ | X₃ ~ Bernoulli(0.75·X₃ + 0.25·(1−X₃))`,
//! `(X₁, V₁, X₂, V₂) | X₃ ~ N(ρ_{X₃}, Σ)`. Treatment follows the SPPS model with
//! `(ε₀, δ₀, β₀)`, and `Y = ν₀ + ν₁X₁ + ν₂X₂ + ν₃X₃ + ν₄T + ξᵀV + Z`.
//!
//! Every replicate draws from its own ChaCha8 stream (`seed`, stream = replicate
//! index). Normal deviates come from the `rand_distr` ziggurat sampler and MVN
//! vectors from the lower Cholesky factor of `Σ`.

use nalgebra::{Matrix4, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{estimate_ate_ipw, estimate_ate_ld, PropensityFit, Variant};
use crate::exec::Execution;
use crate::fit::FitOptions;
use crate::link::LinkFunction;
use crate::model::{Dataset, Mode};
use crate::pipeline::{estimate_with, FittedPropensities};

/// Default levels for both `ε₀` (columns) and `δ₀` (rows).
pub const GRID_LEVELS: [f64; 7] = [0.0, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5];

/// Sign convention of the data-generating link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropensitySign {
    /// `{1 + exp(+β₀ᵀX)}⁻¹`
    #[default]
    Printed,
    /// `{1 + exp(−β₀ᵀX)}⁻¹`
    Standard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationConfig {
    pub epsilon0: f64,
    pub delta0: f64,
    /// Coefficients on `(1, X₁, X₂, X₃, V₁, V₂, V₃)`.
    pub beta0: Vec<f64>,
    /// `(ν₀, ν₁, ν₂, ν₃, ν₄)`: intercept, `X₁..X₃`, `T`.
    pub nu: Vec<f64>,
    /// Coefficients on `V₁..V₃`.
    pub xi: Vec<f64>,
    /// Mean of `(X₁, V₁, X₂, V₂)` given `X₃ = 0`.
    pub rho0: Vec<f64>,
    /// Mean of `(X₁, V₁, X₂, V₂)` given `X₃ = 1`.
    pub rho1: Vec<f64>,
    pub sigma: [[f64; 4]; 4],
    pub x3_prob: f64,
    /// `P(V₃ = 1 | X₃ = 1)` and `P(V₃ = 1 | X₃ = 0)`.
    pub v3_given_x3: [f64; 2],
    pub n: usize,
    pub nrep: usize,
    pub seed: u64,
    pub tau_true: f64,
    pub propensity_sign: PropensitySign,
    pub fit_link: LinkFunction,
    pub fit_options: FitOptions,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            epsilon0: 0.0,
            delta0: 0.0,
            beta0: vec![0.0, 0.6, -0.6, 0.6, 0.0, 0.0, 0.0],
            nu: vec![0.0, -1.0, 1.0, -1.0, 2.0],
            xi: vec![-1.0, 1.0, 1.0],
            rho0: vec![1.0, 1.0, -1.0, -1.0],
            rho1: vec![-1.0, -1.0, 1.0, 1.0],
            sigma: [
                [1.0, 0.5, -0.5, -0.5],
                [0.5, 1.0, -0.5, -0.5],
                [-0.5, -0.5, 1.0, 0.5],
                [-0.5, -0.5, 0.5, 1.0],
            ],
            x3_prob: 0.2,
            v3_given_x3: [0.75, 0.25],
            n: 1000,
            nrep: 1000,
            seed: 2016,
            tau_true: 2.0,
            propensity_sign: PropensitySign::Printed,
            fit_link: LinkFunction::Logistic,
            fit_options: FitOptions::default(),
        }
    }
}

impl SimulationConfig {
    pub fn with_cell(&self, epsilon0: f64, delta0: f64) -> Self {
        SimulationConfig {
            epsilon0,
            delta0,
            ..self.clone()
        }
    }

    fn sigma_matrix(&self) -> Matrix4<f64> {
        Matrix4::from_fn(|i, j| self.sigma[i][j])
    }

    /// Lower Cholesky factor of `Σ`.
    fn cholesky_factor(&self) -> Result<Matrix4<f64>> {
        nalgebra::Cholesky::new(self.sigma_matrix())
            .map(|c| c.l())
            .ok_or_else(|| Error::input("sigma is not positive definite"))
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |v: f64| (0.0..1.0).contains(&v);
        if !prob(self.epsilon0) || !prob(self.delta0) || self.epsilon0 + self.delta0 >= 1.0 {
            return Err(Error::input(format!(
                "need epsilon0, delta0 in [0, 1) with epsilon0 + delta0 < 1 (got {}, {})",
                self.epsilon0, self.delta0
            )));
        }
        let lens = [
            ("beta0", self.beta0.len(), 7),
            ("nu", self.nu.len(), 5),
            ("xi", self.xi.len(), 3),
            ("rho0", self.rho0.len(), 4),
            ("rho1", self.rho1.len(), 4),
        ];
        for (name, got, want) in lens {
            if got != want {
                return Err(Error::input(format!("{name} must have {want} entries, got {got}")));
            }
        }
        let all = self
            .beta0
            .iter()
            .chain(&self.nu)
            .chain(&self.xi)
            .chain(&self.rho0)
            .chain(&self.rho1)
            .chain(self.sigma.iter().flatten());
        if all.clone().any(|v| !v.is_finite()) {
            return Err(Error::input("simulation coefficients must be finite"));
        }
        let s = self.sigma_matrix();
        if (s - s.transpose()).abs().max() > 0.0 {
            return Err(Error::input("sigma must be symmetric"));
        }
        self.cholesky_factor()?;
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.x3_prob) || !unit(self.v3_given_x3[0]) || !unit(self.v3_given_x3[1]) {
            return Err(Error::input("x3_prob and v3_given_x3 must be probabilities"));
        }
        if self.n < 8 || self.nrep == 0 {
            return Err(Error::input("need n >= 8 and nrep >= 1"));
        }
        self.fit_options.validate()
    }

    /// `ε₀ + (1 − δ₀ − ε₀)·φ(±β₀ᵀx)` with the configured sign.
    pub fn true_propensity(&self, x: &[f64]) -> f64 {
        let eta: f64 = self.beta0.iter().zip(x).map(|(b, v)| b * v).sum();
        let u = match self.propensity_sign {
            PropensitySign::Printed => -eta,
            PropensitySign::Standard => eta,
        };
        self.epsilon0 + (1.0 - self.delta0 - self.epsilon0) * LinkFunction::Logistic.cdf(u)
    }
}

/// One generated data set.
#[derive(Debug, Clone)]
pub struct SimulatedSample {
    /// Columns `(1, X₁, X₂, X₃, V₁, V₂, V₃)`, indicator `T`, outcome `Y`.
    pub data: Dataset,
    pub true_propensity: Vec<f64>,
}

/// RNG for one replicate.
pub fn replicate_rng(seed: u64, replicate: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate as u64);
    rng
}

/// Draws one sample of size `config.n`.
pub fn generate_sample<R: Rng + ?Sized>(config: &SimulationConfig, rng: &mut R) -> Result<SimulatedSample> {
    config.validate()?;
    let l = config.cholesky_factor()?;
    let rho0 = Vector4::from_column_slice(&config.rho0);
    let rho1 = Vector4::from_column_slice(&config.rho1);
    let n = config.n;
    let mut design = nalgebra::DMatrix::zeros(n, 7);
    let mut t = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut props = Vec::with_capacity(n);
    let (nu, xi) = (&config.nu, &config.xi);
    for i in 0..n {
        let x3 = rng.random::<f64>() < config.x3_prob;
        let p_v3 = if x3 {
            config.v3_given_x3[0]
        } else {
            config.v3_given_x3[1]
        };
        let v3 = rng.random::<f64>() < p_v3;
        let z = Vector4::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
        let mvn = if x3 { rho1 } else { rho0 } + l * z;
        let (x1, v1, x2, v2) = (mvn[0], mvn[1], mvn[2], mvn[3]);
        let (x3, v3) = (f64::from(u8::from(x3)), f64::from(u8::from(v3)));
        let row = [1.0, x1, x2, x3, v1, v2, v3];
        for (j, v) in row.iter().enumerate() {
            design[(i, j)] = *v;
        }
        let p = config.true_propensity(&row);
        let treated = rng.random::<f64>() < p;
        let noise: f64 = rng.sample(StandardNormal);
        let tf = if treated { 1.0 } else { 0.0 };
        y.push(
            nu[0] + nu[1] * x1 + nu[2] * x2 + nu[3] * x3 + nu[4] * tf + xi[0] * v1 + xi[1] * v2 + xi[2] * v3 + noise,
        );
        t.push(treated);
        props.push(p);
    }
    Ok(SimulatedSample {
        data: Dataset::new(design, t, Some(y))?,
        true_propensity: props,
    })
}

/// Cells of the default grid with `ε₀ + δ₀ < 1`, ordered by `δ₀` then `ε₀`.
pub fn default_grid(base: &SimulationConfig) -> Vec<SimulationConfig> {
    GRID_LEVELS
        .iter()
        .flat_map(|&d| GRID_LEVELS.iter().map(move |&e| (e, d)))
        .filter(|(e, d)| e + d < 1.0)
        .map(|(e, d)| base.with_cell(e, d))
        .collect()
}

/// Per-replicate output of an estimator bundle, indexed like [`Variant::ALL`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ReplicateEstimates {
    pub values: [Option<f64>; 4],
    pub guard_triggered: bool,
    /// `false` only when an SPPS fit ran and did not converge.
    pub spps_converged: bool,
}

/// Plain and SPPS fits, then `O`, `P`, `LD`, `PLD`. Failures become `None`.
pub fn fitted_estimators(sample: &SimulatedSample, config: &SimulationConfig) -> ReplicateEstimates {
    let mut out = ReplicateEstimates {
        spps_converged: true,
        ..Default::default()
    };
    let data = &sample.data;
    let fits = match FittedPropensities::compute(data, config.fit_link, Mode::Treatment, true, &config.fit_options) {
        Ok(f) => f,
        Err(_) => {
            // Retry without the SPPS fit so the plain variants still count.
            let Ok(f) = FittedPropensities::compute(data, config.fit_link, Mode::Treatment, false, &config.fit_options)
            else {
                return out;
            };
            out.spps_converged = false;
            f
        }
    };
    if let Some(s) = &fits.spps {
        out.guard_triggered = s.guard_triggered;
        out.spps_converged = s.converged;
    }
    for (k, v) in Variant::ALL.iter().enumerate() {
        out.values[k] = estimate_with(data, Mode::Treatment, *v, &fits).ok().map(|r| r.value);
    }
    out
}

/// The four estimators evaluated with the true propensities (IPW for `O`/`P`,
/// corrected for `LD`/`PLD`).
pub fn true_propensity_estimators(sample: &SimulatedSample, _config: &SimulationConfig) -> ReplicateEstimates {
    let (d, p) = (&sample.data, &sample.true_propensity);
    let ipw = estimate_ate_ipw(d, p, PropensityFit::Plain).ok().map(|r| r.value);
    let ld = estimate_ate_ld(d, p, PropensityFit::Plain).ok().map(|r| r.value);
    ReplicateEstimates {
        values: [ipw, ipw, ld, ld],
        guard_triggered: false,
        spps_converged: true,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantSummary {
    pub variant: Variant,
    /// `Nrep⁻¹ Σ (τ̂ − τ)²` over successful replicates.
    pub mse: f64,
    /// Sample SD of the squared errors over `√(successes)`.
    pub mc_se: f64,
    pub n_fail: usize,
    pub mean_estimate: f64,
    /// Sample SD of the estimates.
    pub sd_estimate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MseRow {
    pub delta0: f64,
    pub epsilon0: f64,
    pub nrep: usize,
    pub variants: Vec<VariantSummary>,
    /// Fraction of replicates where the SPPS fit fell back to the plain GLM via the guard.
    pub guard_rate: f64,
    pub spps_nonconverged: usize,
    /// Median over replicates of `|τ̂_P − τ̂_O|`.
    pub median_abs_p_minus_o: Option<f64>,
    /// Median over replicates of `|τ̂_PLD − τ̂_LD|`.
    pub median_abs_pld_minus_ld: Option<f64>,
}

impl MseRow {
    pub fn get(&self, v: Variant) -> &VariantSummary {
        self.variants
            .iter()
            .find(|s| s.variant == v)
            .expect("every variant is summarized")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MseTable {
    pub tau_true: f64,
    pub rows: Vec<MseRow>,
}

impl MseTable {
    pub fn row(&self, epsilon0: f64, delta0: f64) -> Option<&MseRow> {
        self.rows.iter().find(|r| r.epsilon0 == epsilon0 && r.delta0 == delta0)
    }

    /// Columns `delta0,epsilon0,variant,mse,mc_se,n_fail`, one line per cell and variant.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("delta0,epsilon0,variant,mse,mc_se,n_fail\n");
        for r in &self.rows {
            for v in &r.variants {
                out.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    r.delta0, r.epsilon0, v.variant, v.mse, v.mc_se, v.n_fail
                ));
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serializes")
    }
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let k = v.len() as f64;
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = v.iter().sum::<f64>() / k;
    if v.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (mean, var.sqrt())
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    })
}

fn summarize(config: &SimulationConfig, reps: &[ReplicateEstimates]) -> MseRow {
    let variants = Variant::ALL
        .iter()
        .enumerate()
        .map(|(k, &variant)| {
            let est: Vec<f64> = reps
                .iter()
                .filter_map(|r| r.values[k])
                .filter(|v| v.is_finite())
                .collect();
            let sq: Vec<f64> = est.iter().map(|t| (t - config.tau_true).powi(2)).collect();
            let (mse, sd_sq) = mean_sd(&sq);
            let (mean_estimate, sd_estimate) = mean_sd(&est);
            VariantSummary {
                variant,
                mse,
                mc_se: sd_sq / (sq.len() as f64).sqrt(),
                n_fail: reps.len() - est.len(),
                mean_estimate,
                sd_estimate,
            }
        })
        .collect();
    let abs_diff = |a: usize, b: usize| {
        median(
            reps.iter()
                .filter_map(|r| Some((r.values[a]? - r.values[b]?).abs()))
                .collect(),
        )
    };
    MseRow {
        delta0: config.delta0,
        epsilon0: config.epsilon0,
        nrep: reps.len(),
        variants,
        guard_rate: reps.iter().filter(|r| r.guard_triggered).count() as f64 / reps.len() as f64,
        spps_nonconverged: reps.iter().filter(|r| !r.spps_converged).count(),
        median_abs_p_minus_o: abs_diff(1, 0),
        median_abs_pld_minus_ld: abs_diff(3, 2),
    }
}

/// Runs every cell with the SPPS and plain fits.
pub fn run_monte_carlo(grid: &[SimulationConfig], exec: Execution) -> Result<MseTable> {
    run_monte_carlo_with(grid, exec, fitted_estimators)
}

/// Runs every cell with a caller-supplied estimator bundle.
///
/// Replicate `r` of every cell draws from stream `r` of that cell's seed, so the
/// table does not depend on `exec`.
pub fn run_monte_carlo_with<F>(grid: &[SimulationConfig], exec: Execution, estimators: F) -> Result<MseTable>
where
    F: Fn(&SimulatedSample, &SimulationConfig) -> ReplicateEstimates + Sync + Send,
{
    if grid.is_empty() {
        return Err(Error::input("empty simulation grid"));
    }
    for c in grid {
        c.validate()?;
    }
    let tau_true = grid[0].tau_true;
    if grid.iter().any(|c| c.tau_true != tau_true) {
        return Err(Error::input("all grid cells must share tau_true"));
    }
    let offsets: Vec<usize> = grid
        .iter()
        .scan(0, |acc, c| {
            let start = *acc;
            *acc += c.nrep;
            Some(start)
        })
        .collect();
    let total: usize = grid.iter().map(|c| c.nrep).sum();
    let results = exec.map_indexed(total, |job| {
        let cell = offsets.partition_point(|&o| o <= job) - 1;
        let config = &grid[cell];
        let rep = job - offsets[cell];
        let mut rng = replicate_rng(config.seed, rep);
        match generate_sample(config, &mut rng) {
            Ok(sample) => estimators(&sample, config),
            Err(_) => ReplicateEstimates::default(),
        }
    })?;
    let rows = grid
        .iter()
        .zip(&offsets)
        .map(|(c, &o)| summarize(c, &results[o..o + c.nrep]))
        .collect();
    Ok(MseTable { tau_true, rows })
}
