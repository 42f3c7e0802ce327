//! TOML run configuration.
//!
//! Only the `[grid]` table is required; every other block falls back to its
//! defaults. Unknown keys are rejected. Syntax and schema errors carry a
//! line/column, semantic errors the dotted key path.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::background::{build_background, BackgroundConfig, BackgroundState};
use crate::dynamics::{DynamicsOptions, InitialCondition, Model, Variant};
use crate::error::{Error, Result};
use crate::inversion::{Inverter, SolverOptions};
use crate::microphysics::MicrophysicsParams;
use crate::spectral::Grid;
use crate::thermo::{Regime, ThermoParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegimeConfig {
    /// 0 or 1.
    pub alpha: i64,
    pub epsilon: f64,
}

impl Default for RegimeConfig {
    fn default() -> Self {
        RegimeConfig { alpha: 0, epsilon: 0.1 }
    }
}

impl RegimeConfig {
    pub fn regime(&self) -> Result<Regime> {
        Regime::from_alpha(self.alpha)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynamicsConfig {
    pub variant: Variant,
    /// Time step [s].
    pub dt: f64,
    /// End time [s]; must be a whole number of steps.
    pub t_end: f64,
    /// Steps between output frames.
    pub output_every: usize,
    pub seed: u64,
    pub lagged_mask: bool,
    pub cfl_limit: f64,
    pub initial: InitialCondition,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        let options = DynamicsOptions::default();
        DynamicsConfig {
            variant: Variant::Continuous,
            dt: 600.0,
            t_end: 0.0,
            output_every: 10,
            seed: 0,
            lagged_mask: options.lagged_mask,
            cfl_limit: options.cfl_limit,
            initial: InitialCondition::default(),
        }
    }
}

impl DynamicsConfig {
    pub fn options(&self) -> DynamicsOptions {
        DynamicsOptions {
            lagged_mask: self.lagged_mask,
            cfl_limit: self.cfl_limit,
        }
    }

    /// Number of steps to reach `t_end`.
    pub fn steps(&self) -> Result<usize> {
        let n = (self.t_end / self.dt).round();
        if (n * self.dt - self.t_end).abs() > 1e-9 * self.t_end.max(self.dt) {
            return Err(Error::config("dynamics.t_end", "must be a whole multiple of dynamics.dt"));
        }
        Ok(n as usize)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub grid: Grid,
    #[serde(default)]
    pub thermo: ThermoParams,
    #[serde(default)]
    pub regime: RegimeConfig,
    #[serde(default)]
    pub background: BackgroundConfig,
    #[serde(default)]
    pub microphysics: MicrophysicsParams,
    #[serde(default)]
    pub dynamics: DynamicsConfig,
    #[serde(default)]
    pub solver: SolverOptions,
}

fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.chars().rev().take_while(|&c| c != '\n').count() + 1;
    (line, column)
}

impl RunConfig {
    /// Parses and validates a configuration document. Relative table paths
    /// are resolved against `base`.
    pub fn parse_str(text: &str, base: Option<&Path>) -> Result<RunConfig> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let (line, column) = e.span().map_or((0, 0), |s| line_column(text, s.start));
            Error::Parse {
                line,
                column,
                message: e.message().to_string(),
            }
        })?;
        if let (Some(base), Some(tables)) = (base, cfg.background.tables.as_mut()) {
            for p in [&mut tables.rho, &mut tables.theta_e, &mut tables.q_vs] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("config", e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.thermo.validate()?;
        self.regime.regime()?;
        if !(self.regime.epsilon > 0.0 && self.regime.epsilon < 1.0) {
            return Err(Error::config("regime.epsilon", "must lie in (0, 1)"));
        }
        self.microphysics.validate()?;
        self.solver.validate()?;
        let d = &self.dynamics;
        if !(d.dt > 0.0 && d.dt.is_finite()) {
            return Err(Error::config("dynamics.dt", "must be positive"));
        }
        if !(d.t_end >= 0.0 && d.t_end.is_finite()) {
            return Err(Error::config("dynamics.t_end", "must be >= 0"));
        }
        if d.output_every == 0 {
            return Err(Error::config("dynamics.output_every", "must be >= 1"));
        }
        if !(d.cfl_limit > 0.0) {
            return Err(Error::config("dynamics.cfl_limit", "must be positive"));
        }
        d.steps()?;
        d.initial.validate()?;
        self.build_background()?;
        Ok(())
    }

    pub fn build_background(&self) -> Result<BackgroundState> {
        build_background(&self.background, self.grid.nz, self.grid.h, &self.thermo)
    }

    pub fn build_model(&self) -> Result<Model> {
        let bg = self.build_background()?;
        let inverter = Inverter::new(self.grid, bg, &self.thermo, self.solver.lids)?;
        Model::new(
            inverter,
            self.thermo,
            self.microphysics,
            self.solver,
            self.dynamics.variant,
            self.dynamics.options(),
        )
    }
}

pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config("config", format!("cannot read {}: {e}", path.display())))?;
    RunConfig::parse_str(&text, path.parent())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = RunConfig::parse_str("[grid]\nnx = 16\nny = 16\nnz = 8\n[dynamics]\nvariant = \"fast\"\n", None).unwrap();
        assert_eq!(cfg.grid.nx, 16);
        assert_eq!(cfg.dynamics.variant, Variant::Fast);
        assert_eq!(cfg.thermo, ThermoParams::default());
        assert_eq!(cfg.microphysics, MicrophysicsParams::default());
    }

    #[test]
    fn unstable_profile_names_invariant() {
        let err = RunConfig::parse_str("[grid]\n[background]\ntheta_e_gradient = -1e-3\n", None).unwrap_err();
        match err {
            Error::Config { key, message } => {
                assert_eq!(key, "background.theta_e_gradient");
                assert!(message.contains("stability invariant"));
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn bad_alpha_rejected() {
        let err = RunConfig::parse_str("[grid]\n[regime]\nalpha = 2\n", None).unwrap_err();
        assert!(err.to_string().contains("regime selector must be 0 or 1"));
    }

    #[test]
    fn syntax_error_has_position() {
        let err = RunConfig::parse_str("[grid]\nnx = = 3\n", None).unwrap_err();
        match err {
            Error::Parse { line, column, .. } => {
                assert_eq!(line, 2);
                assert!(column > 1);
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn unknown_key_rejected() {
        let err = RunConfig::parse_str("[grid]\nnq = 3\n", None).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn missing_grid_rejected() {
        assert!(RunConfig::parse_str("[dynamics]\nvariant = \"fast\"\n", None).unwrap_err().is_config());
    }

    #[test]
    fn round_trip() {
        let cfg = RunConfig::parse_str("[grid]\nnx = 8\nny = 8\nnz = 4\n[dynamics]\ndt = 300.0\nt_end = 900.0\n", None).unwrap();
        let again = RunConfig::parse_str(&cfg.to_toml().unwrap(), None).unwrap();
        assert_eq!(cfg, again);
    }
}
