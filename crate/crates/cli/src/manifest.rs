//! JSON run manifest. Every field is optional; command-line flags override it.

use std::path::{Path, PathBuf};

use anyhow::Result;
use serde::{Deserialize, Serialize};
use spps_core::simulation::PropensitySign;
use spps_core::{FitOptions, LinkFunction, Mode, Variant};

use crate::InputError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum CommandKind {
    Fit,
    EstimateMean,
    EstimateAte,
    Simulate,
    Bootstrap,
}

/// Solver settings that may be overridden individually.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverOverrides {
    pub max_newton_iters: Option<usize>,
    pub newton_tol: Option<f64>,
    pub bound_margin: Option<f64>,
    pub max_outer_iters: Option<usize>,
    pub outer_tol: Option<f64>,
    pub guard_threshold: Option<f64>,
}

impl SolverOverrides {
    fn or(self, other: SolverOverrides) -> SolverOverrides {
        SolverOverrides {
            max_newton_iters: self.max_newton_iters.or(other.max_newton_iters),
            newton_tol: self.newton_tol.or(other.newton_tol),
            bound_margin: self.bound_margin.or(other.bound_margin),
            max_outer_iters: self.max_outer_iters.or(other.max_outer_iters),
            outer_tol: self.outer_tol.or(other.outer_tol),
            guard_threshold: self.guard_threshold.or(other.guard_threshold),
        }
    }

    pub fn apply(&self, mut options: FitOptions) -> FitOptions {
        let c = &mut options.controls;
        if let Some(v) = self.max_newton_iters {
            c.max_newton_iters = v;
        }
        if let Some(v) = self.newton_tol {
            c.newton_tol = v;
        }
        if let Some(v) = self.bound_margin {
            c.bound_margin = v;
        }
        if let Some(v) = self.max_outer_iters {
            options.max_outer_iters = v;
        }
        if let Some(v) = self.outer_tol {
            options.outer_tol = v;
        }
        if let Some(v) = self.guard_threshold {
            options.guard_threshold = v;
        }
        options
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub command: Option<CommandKind>,
    pub input_path: Option<PathBuf>,
    pub indicator_col: Option<String>,
    pub outcome_col: Option<String>,
    pub covariates: Option<Vec<String>>,
    pub link: Option<LinkFunction>,
    pub mode: Option<Mode>,
    pub variants: Option<Vec<Variant>>,
    pub seed: Option<u64>,
    pub nrep: Option<usize>,
    pub n: Option<usize>,
    pub n_boot: Option<usize>,
    pub z_value: Option<f64>,
    pub workers: Option<usize>,
    pub emit_samples: Option<PathBuf>,
    pub output: Option<PathBuf>,
    /// `ε₀` levels of the simulation grid.
    pub epsilon_grid: Option<Vec<f64>>,
    /// `δ₀` levels of the simulation grid.
    pub delta_grid: Option<Vec<f64>>,
    pub propensity_sign: Option<PropensitySign>,
    #[serde(default)]
    pub solver: SolverOverrides,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| InputError(format!("cannot read manifest {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| InputError(format!("invalid manifest {}: {e}", path.display())).into())
    }

    /// Fields set in `self` win over those in `base`.
    pub fn or(self, base: RunManifest) -> RunManifest {
        RunManifest {
            command: self.command.or(base.command),
            input_path: self.input_path.or(base.input_path),
            indicator_col: self.indicator_col.or(base.indicator_col),
            outcome_col: self.outcome_col.or(base.outcome_col),
            covariates: self.covariates.or(base.covariates),
            link: self.link.or(base.link),
            mode: self.mode.or(base.mode),
            variants: self.variants.or(base.variants),
            seed: self.seed.or(base.seed),
            nrep: self.nrep.or(base.nrep),
            n: self.n.or(base.n),
            n_boot: self.n_boot.or(base.n_boot),
            z_value: self.z_value.or(base.z_value),
            workers: self.workers.or(base.workers),
            emit_samples: self.emit_samples.or(base.emit_samples),
            output: self.output.or(base.output),
            epsilon_grid: self.epsilon_grid.or(base.epsilon_grid),
            delta_grid: self.delta_grid.or(base.delta_grid),
            propensity_sign: self.propensity_sign.or(base.propensity_sign),
            solver: self.solver.or(base.solver),
        }
    }

    pub fn fit_options(&self) -> Result<FitOptions> {
        let options = self.solver.apply(FitOptions::default());
        options.validate()?;
        Ok(options)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_manifest() {
        let base: RunManifest = serde_json::from_str(
            r#"{"command":"estimate-ate","seed":5,"link":"probit","mode":"missing",
                "variants":["O","PLD"],"solver":{"outer_tol":1e-6,"guard_threshold":0.5}}"#,
        )
        .unwrap();
        let flags = RunManifest {
            seed: Some(9),
            solver: SolverOverrides {
                guard_threshold: Some(0.7),
                ..Default::default()
            },
            ..Default::default()
        };
        let m = flags.or(base);
        assert_eq!(m.command, Some(CommandKind::EstimateAte));
        assert_eq!(m.seed, Some(9));
        assert_eq!(m.link, Some(LinkFunction::Probit));
        assert_eq!(m.mode, Some(Mode::MissingData));
        assert_eq!(m.variants, Some(vec![Variant::O, Variant::PLD]));
        let o = m.fit_options().unwrap();
        assert_eq!((o.outer_tol, o.guard_threshold), (1e-6, 0.7));
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(serde_json::from_str::<RunManifest>(r#"{"sede": 1}"#).is_err());
    }
}
