//! Command-line front end for SPPS fitting, estimation, simulation and bootstrap.

pub mod data;
pub mod manifest;

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser};
use serde::Serialize;
use spps_core::bootstrap::bootstrap_estimate;
use spps_core::pipeline::estimate_variants;
use spps_core::simulation::{default_grid, generate_sample, replicate_rng, run_monte_carlo, PropensitySign};
use spps_core::{
    fit_spps, BootstrapConfig, Dataset, EstimatorSpec, Execution, LinkFunction, Mode, SimulationConfig, Variant,
};

pub use data::{parse_csv, write_sample, ColumnRoles};
pub use manifest::{CommandKind, RunManifest, SolverOverrides};

/// Problem with the command line, manifest or input file (exit code 2).
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct InputError(pub String);

#[derive(Debug, Parser)]
#[command(
    name = "spps",
    version,
    about = "Strictly positive propensity score fitting and IPW estimation"
)]
pub struct Cli {
    /// Command to run; may instead come from the manifest.
    #[arg(value_enum)]
    pub command: Option<CommandKind>,
    #[command(flatten)]
    pub flags: Flags,
}

/// Every flag can also be set through the `SPPS_<FLAG>` environment variable.
#[derive(Debug, Default, Args)]
pub struct Flags {
    /// JSON run manifest; flags given here override its fields.
    #[arg(long, env = "SPPS_MANIFEST")]
    pub manifest: Option<PathBuf>,
    /// Input CSV with a header row.
    #[arg(long, env = "SPPS_INPUT")]
    pub input: Option<PathBuf>,
    #[arg(long, env = "SPPS_INDICATOR_COL")]
    pub indicator_col: Option<String>,
    #[arg(long, env = "SPPS_OUTCOME_COL")]
    pub outcome_col: Option<String>,
    /// Comma-separated covariate columns (default: all other columns).
    #[arg(long, env = "SPPS_COVARIATES", value_delimiter = ',')]
    pub covariates: Option<Vec<String>>,
    /// logistic or probit
    #[arg(long, env = "SPPS_LINK", value_parser = parse_link)]
    pub link: Option<LinkFunction>,
    /// missing or treatment
    #[arg(long, env = "SPPS_MODE", value_parser = parse_mode)]
    pub mode: Option<Mode>,
    /// Comma-separated list of O, P, LD, PLD.
    #[arg(long, env = "SPPS_VARIANT", value_delimiter = ',', value_parser = parse_variant)]
    pub variant: Option<Vec<Variant>>,
    #[arg(long, env = "SPPS_SEED")]
    pub seed: Option<u64>,
    #[arg(long, env = "SPPS_NREP")]
    pub nrep: Option<usize>,
    /// Simulated sample size.
    #[arg(long, env = "SPPS_N")]
    pub n: Option<usize>,
    #[arg(long, env = "SPPS_NBOOT")]
    pub nboot: Option<usize>,
    #[arg(long, env = "SPPS_Z_VALUE")]
    pub z_value: Option<f64>,
    /// Worker threads; 1 runs sequentially, 0 uses one per core.
    #[arg(long, env = "SPPS_WORKERS")]
    pub workers: Option<usize>,
    /// Directory receiving every simulated sample as CSV.
    #[arg(long, env = "SPPS_EMIT_SAMPLES")]
    pub emit_samples: Option<PathBuf>,
    /// Output file (default: stdout). `simulate` writes JSON for a `.json` path, CSV otherwise.
    #[arg(long, env = "SPPS_OUTPUT")]
    pub output: Option<PathBuf>,
    /// Comma-separated ε₀ levels for `simulate`.
    #[arg(long, env = "SPPS_EPSILON_GRID", value_delimiter = ',')]
    pub epsilon_grid: Option<Vec<f64>>,
    /// Comma-separated δ₀ levels for `simulate`.
    #[arg(long, env = "SPPS_DELTA_GRID", value_delimiter = ',')]
    pub delta_grid: Option<Vec<f64>>,
    /// Sign inside the simulated propensity: printed (exp(+βᵀx)) or standard.
    #[arg(long, env = "SPPS_PROPENSITY_SIGN", value_parser = parse_sign)]
    pub propensity_sign: Option<PropensitySign>,
    #[arg(long, env = "SPPS_MAX_NEWTON_ITERS")]
    pub max_newton_iters: Option<usize>,
    #[arg(long, env = "SPPS_NEWTON_TOL")]
    pub newton_tol: Option<f64>,
    #[arg(long, env = "SPPS_BOUND_MARGIN")]
    pub bound_margin: Option<f64>,
    #[arg(long, env = "SPPS_MAX_OUTER_ITERS")]
    pub max_outer_iters: Option<usize>,
    #[arg(long, env = "SPPS_OUTER_TOL")]
    pub outer_tol: Option<f64>,
    #[arg(long, env = "SPPS_GUARD_THRESHOLD")]
    pub guard_threshold: Option<f64>,
}

fn parse_link(s: &str) -> std::result::Result<LinkFunction, String> {
    s.parse()
}

fn parse_variant(s: &str) -> std::result::Result<Variant, String> {
    s.trim().parse()
}

fn parse_mode(s: &str) -> std::result::Result<Mode, String> {
    s.parse()
}

fn parse_sign(s: &str) -> std::result::Result<PropensitySign, String> {
    match s.to_ascii_lowercase().as_str() {
        "printed" => Ok(PropensitySign::Printed),
        "standard" => Ok(PropensitySign::Standard),
        other => Err(format!(
            "unknown propensity sign '{other}' (expected printed or standard)"
        )),
    }
}

impl Flags {
    fn into_manifest(self) -> RunManifest {
        RunManifest {
            command: None,
            input_path: self.input,
            indicator_col: self.indicator_col,
            outcome_col: self.outcome_col,
            covariates: self.covariates,
            link: self.link,
            mode: self.mode,
            variants: self.variant,
            seed: self.seed,
            nrep: self.nrep,
            n: self.n,
            n_boot: self.nboot,
            z_value: self.z_value,
            workers: self.workers,
            emit_samples: self.emit_samples,
            output: self.output,
            epsilon_grid: self.epsilon_grid,
            delta_grid: self.delta_grid,
            propensity_sign: self.propensity_sign,
            solver: SolverOverrides {
                max_newton_iters: self.max_newton_iters,
                newton_tol: self.newton_tol,
                bound_margin: self.bound_margin,
                max_outer_iters: self.max_outer_iters,
                outer_tol: self.outer_tol,
                guard_threshold: self.guard_threshold,
            },
        }
    }
}

impl Cli {
    /// Merges the manifest (if any) under the flags.
    pub fn resolve(self) -> Result<RunManifest> {
        let manifest_path = self.flags.manifest.clone();
        let mut m = self.flags.into_manifest();
        m.command = self.command;
        if let Some(p) = manifest_path {
            m = m.or(RunManifest::load(&p)?);
        }
        Ok(m)
    }
}

/// Exit code for an error chain: input 2, non-convergence 3, degenerate 4, bootstrap 5, anything else 1.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.downcast_ref::<InputError>().is_some() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<spps_core::Error>() {
            return match e {
                spps_core::Error::Input(_) => 2,
                spps_core::Error::NonConvergence { .. } => 3,
                spps_core::Error::Degenerate(_) => 4,
                spps_core::Error::BootstrapUnreliable { .. } => 5,
            };
        }
    }
    1
}

fn error_kind(code: i32) -> &'static str {
    match code {
        2 => "input",
        3 => "non_convergence",
        4 => "degenerate_estimation",
        5 => "bootstrap_unreliable",
        _ => "internal",
    }
}

/// Structured error document written to stderr on failure.
pub fn error_json(err: &anyhow::Error) -> serde_json::Value {
    let code = exit_code(err);
    let mut doc = serde_json::json!({
        "error": {
            "kind": error_kind(code),
            "exit_code": code,
            "message": format!("{err:#}"),
        }
    });
    for cause in err.chain() {
        match cause.downcast_ref::<spps_core::Error>() {
            Some(spps_core::Error::BootstrapUnreliable { partial, .. }) => {
                doc["error"]["partial"] = serde_json::to_value(partial).unwrap_or_default();
            }
            Some(spps_core::Error::NonConvergence {
                iterations, last_beta, ..
            }) => {
                doc["error"]["iterations"] = (*iterations).into();
                doc["error"]["last_beta"] = serde_json::to_value(last_beta).unwrap_or_default();
            }
            _ => continue,
        }
        break;
    }
    doc
}

fn emit(output: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match output {
        Some(p) => std::fs::write(p, bytes).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(bytes)?;
            out.flush()?;
            Ok(())
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut s = serde_json::to_vec_pretty(value)?;
    s.push(b'\n');
    Ok(s)
}

fn load_input(m: &RunManifest, mode: Mode, need_outcome: bool) -> Result<Dataset> {
    let path = m
        .input_path
        .as_deref()
        .ok_or_else(|| InputError("--input is required".into()))?;
    let indicator = m
        .indicator_col
        .clone()
        .ok_or_else(|| InputError("--indicator-col is required".into()))?;
    if need_outcome && m.outcome_col.is_none() {
        bail!(InputError("--outcome-col is required".into()));
    }
    let roles = ColumnRoles {
        indicator,
        outcome: m.outcome_col.clone(),
        covariates: m.covariates.clone().unwrap_or_default(),
    };
    parse_csv(path, &roles, mode)
}

fn execution(m: &RunManifest) -> Execution {
    Execution::from_workers(m.workers)
}

/// Path of the fitted-propensity CSV written next to the `fit` JSON.
pub fn fitted_sidecar(output: &Path) -> PathBuf {
    output.with_extension("fitted.csv")
}

fn run_fit(m: &RunManifest) -> Result<()> {
    let mode = m.mode.unwrap_or(Mode::Treatment);
    let data = load_input(m, mode, false)?;
    let fit = fit_spps(&data, m.link.unwrap_or_default(), mode, &m.fit_options()?)?;
    if let Some(out) = m.output.as_deref() {
        let mut w = csv::Writer::from_path(fitted_sidecar(out))?;
        w.write_record(["row", "pi_hat"])?;
        for (i, p) in fit.fitted.iter().enumerate() {
            w.write_record([(i + 1).to_string(), p.to_string()])?;
        }
        w.flush()?;
    }
    emit(m.output.as_deref(), &to_json(&fit)?)
}

fn run_estimate(m: &RunManifest, mode: Mode) -> Result<()> {
    if m.mode.is_some_and(|given| given != mode) {
        bail!(InputError(format!(
            "this command runs in {mode} mode; --mode conflicts"
        )));
    }
    let default_variants = match mode {
        Mode::MissingData => vec![Variant::O, Variant::P],
        Mode::Treatment => Variant::ALL.to_vec(),
    };
    let variants = m.variants.clone().unwrap_or(default_variants);
    if variants.is_empty() {
        bail!(InputError("--variant lists no estimators".into()));
    }
    let data = load_input(m, mode, true)?;
    let reports = estimate_variants(&data, m.link.unwrap_or_default(), mode, &variants, &m.fit_options()?)?;
    emit(m.output.as_deref(), &to_json(&reports)?)
}

/// Grid and base configuration for `simulate`.
pub fn simulation_grid(m: &RunManifest) -> Result<Vec<SimulationConfig>> {
    let defaults = SimulationConfig::default();
    let base = SimulationConfig {
        n: m.n.unwrap_or(defaults.n),
        nrep: m.nrep.unwrap_or(defaults.nrep),
        seed: m.seed.unwrap_or(defaults.seed),
        propensity_sign: m.propensity_sign.unwrap_or_default(),
        fit_link: m.link.unwrap_or_default(),
        fit_options: m.fit_options()?,
        ..defaults
    };
    let grid = match (&m.epsilon_grid, &m.delta_grid) {
        (None, None) => default_grid(&base),
        (eps, del) => {
            let levels = spps_core::simulation::GRID_LEVELS.to_vec();
            let eps = eps.clone().unwrap_or_else(|| levels.clone());
            let del = del.clone().unwrap_or(levels);
            del.iter()
                .flat_map(|&d| eps.iter().map(move |&e| (e, d)))
                .filter(|(e, d)| e + d < 1.0)
                .map(|(e, d)| base.with_cell(e, d))
                .collect()
        }
    };
    if grid.is_empty() {
        bail!(InputError(
            "simulation grid has no cells with epsilon0 + delta0 < 1".into()
        ));
    }
    for cell in &grid {
        cell.validate()?;
    }
    Ok(grid)
}

fn run_simulate(m: &RunManifest) -> Result<()> {
    let grid = simulation_grid(m)?;
    if let Some(dir) = m.emit_samples.as_deref() {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for cell in &grid {
            for rep in 0..cell.nrep {
                let sample = generate_sample(cell, &mut replicate_rng(cell.seed, rep))?;
                let name = format!("sample_eps{}_delta{}_rep{rep}.csv", cell.epsilon0, cell.delta0);
                write_sample(File::create(dir.join(name))?, &sample.data)?;
            }
        }
    }
    let table = run_monte_carlo(&grid, execution(m))?;
    let json = m
        .output
        .as_deref()
        .and_then(Path::extension)
        .is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let body = if json { table.to_json() + "\n" } else { table.to_csv() };
    emit(m.output.as_deref(), body.as_bytes())
}

fn run_bootstrap(m: &RunManifest) -> Result<()> {
    let mode = m.mode.unwrap_or(Mode::Treatment);
    let variant = match m.variants.as_deref() {
        None => Variant::PLD,
        Some([v]) => *v,
        Some(_) => bail!(InputError("bootstrap takes exactly one --variant".into())),
    };
    let defaults = BootstrapConfig::default();
    let config = BootstrapConfig {
        n_boot: m.n_boot.unwrap_or(defaults.n_boot),
        z_value: m.z_value.unwrap_or(defaults.z_value),
        seed: m.seed.unwrap_or(defaults.seed),
        ..defaults
    };
    let data = load_input(m, mode, true)?;
    let spec = EstimatorSpec::new(variant, m.link.unwrap_or_default(), mode);
    let report = bootstrap_estimate(&data, &spec, &m.fit_options()?, &config, execution(m))?;
    emit(m.output.as_deref(), &to_json(&report)?)
}

/// Executes a resolved manifest.
pub fn run(m: &RunManifest) -> Result<()> {
    let command = m
        .command
        .ok_or_else(|| InputError("no command given (fit, estimate-mean, estimate-ate, simulate, bootstrap)".into()))?;
    match command {
        CommandKind::Fit => run_fit(m),
        CommandKind::EstimateMean => run_estimate(m, Mode::MissingData),
        CommandKind::EstimateAte => run_estimate(m, Mode::Treatment),
        CommandKind::Simulate => run_simulate(m),
        CommandKind::Bootstrap => run_bootstrap(m),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_error_kind() {
        let e = anyhow::Error::from(InputError("x".into()));
        assert_eq!(exit_code(&e), 2);
        let e = anyhow::Error::from(spps_core::Error::Degenerate("d".into())).context("while estimating");
        assert_eq!(exit_code(&e), 4);
        let e = anyhow::Error::from(spps_core::Error::NonConvergence {
            iterations: 3,
            reason: "r".into(),
            last_beta: vec![1.0],
        });
        assert_eq!(exit_code(&e), 3);
        assert_eq!(error_json(&e)["error"]["last_beta"][0], 1.0);
        assert_eq!(exit_code(&anyhow::anyhow!("boom")), 1);
    }

    #[test]
    fn default_grid_has_48_cells() {
        let m = RunManifest::default();
        assert_eq!(simulation_grid(&m).unwrap().len(), 48);
        let m = RunManifest {
            epsilon_grid: Some(vec![0.5]),
            delta_grid: Some(vec![0.5, 0.3]),
            ..Default::default()
        };
        let g = simulation_grid(&m).unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!((g[0].epsilon0, g[0].delta0), (0.5, 0.3));
    }

    #[test]
    fn cli_parses_flags() {
        let cli = Cli::try_parse_from([
            "spps",
            "estimate-ate",
            "--variant",
            "O,pld",
            "--link",
            "probit",
            "--covariates",
            "a,b",
            "--workers",
            "2",
        ])
        .unwrap();
        let m = cli.resolve().unwrap();
        assert_eq!(m.command, Some(CommandKind::EstimateAte));
        assert_eq!(m.variants, Some(vec![Variant::O, Variant::PLD]));
        assert_eq!(m.link, Some(LinkFunction::Probit));
        assert_eq!(m.covariates, Some(vec!["a".to_owned(), "b".to_owned()]));
        assert_eq!(execution(&m), Execution::Workers(2));
    }
}
