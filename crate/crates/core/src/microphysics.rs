//! Kessler-type warm-rain closures, saturation adjustment and the
//! sedimentation balance that fixes the rain profile of a column.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ode::{self, Tolerances};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MicrophysicsParams {
    /// Rain evaporation rate.
    pub c_ev: f64,
    /// Heterogeneous nucleation rate.
    pub c_cn: f64,
    /// Condensation rate onto existing cloud water.
    pub c_cd: f64,
    /// Autoconversion rate.
    pub c_ac: f64,
    /// Collection of cloud water by rain.
    pub c_cr: f64,
    /// Condensation-nuclei density proxy.
    pub q_cn: f64,
    /// Autoconversion threshold.
    pub q_ac: f64,
    /// Terminal rain velocity [m s⁻¹].
    pub v_r: f64,
    /// Exponent of the fast-condensation rescaling ε⁻ⁿ.
    pub n: u32,
    pub epsilon: f64,
}

impl Default for MicrophysicsParams {
    fn default() -> Self {
        MicrophysicsParams {
            c_ev: 1.0e-3,
            c_cn: 1.0e-4,
            c_cd: 1.0e-1,
            c_ac: 1.0e-3,
            c_cr: 2.0,
            q_cn: 1.0,
            q_ac: 1.0e-4,
            v_r: 5.0,
            n: 1,
            epsilon: 0.1,
        }
    }
}

impl MicrophysicsParams {
    pub fn validate(&self) -> Result<()> {
        for (key, v) in [
            ("microphysics.c_ev", self.c_ev),
            ("microphysics.c_cn", self.c_cn),
            ("microphysics.c_cd", self.c_cd),
            ("microphysics.c_ac", self.c_ac),
            ("microphysics.c_cr", self.c_cr),
            ("microphysics.q_cn", self.q_cn),
            ("microphysics.q_ac", self.q_ac),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(key, format!("must be finite and >= 0, got {v}")));
            }
        }
        if !(self.v_r.is_finite() && self.v_r > 0.0) {
            return Err(Error::config("microphysics.v_r", "terminal velocity must be positive"));
        }
        if self.n < 1 {
            return Err(Error::config("microphysics.n", "rescaling exponent must be >= 1"));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::config("microphysics.epsilon", "must lie in (0, 1)"));
        }
        Ok(())
    }

    /// ε⁻ⁿ, the factor applied to nucleation and condensation rates in the
    /// fast-condensation rescaling.
    pub fn fast_factor(&self) -> f64 {
        self.epsilon.powi(-(self.n as i32))
    }

    /// Copy with `c_cn`, `c_cd` multiplied by ε⁻ⁿ.
    pub fn with_fast_condensation(&self) -> Self {
        let factor = self.fast_factor();
        MicrophysicsParams {
            c_cn: self.c_cn * factor,
            c_cd: self.c_cd * factor,
            ..*self
        }
    }

    /// Dimensionless rate set used by the relaxation study.
    pub fn relaxation_reference() -> Self {
        MicrophysicsParams {
            c_ev: 1.0,
            c_cn: 1.0,
            c_cd: 1.0,
            c_ac: 1.0,
            c_cr: 1.0,
            q_cn: 1.0,
            q_ac: 0.5,
            v_r: 1.0,
            n: 1,
            epsilon: 0.1,
        }
    }
}

/// Moisture content of one grid cell. `q_v` and `q_vs` may be signed
/// perturbations; `q_c` and `q_r` are non-negative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MoistureCell {
    pub q_v: f64,
    pub q_c: f64,
    pub q_r: f64,
    pub q_vs: f64,
}

impl MoistureCell {
    pub fn total_water(&self) -> f64 {
        self.q_v + self.q_c + self.q_r
    }

    /// Supersaturated start used by the relaxation study.
    pub fn standard_supersaturated() -> Self {
        MoistureCell {
            q_v: 1.5,
            q_c: 0.2,
            q_r: 0.1,
            q_vs: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Sources {
    pub ev: f64,
    pub cd: f64,
    pub ac: f64,
    pub cr: f64,
}

#[inline]
fn pos(x: f64) -> f64 {
    x.max(0.0)
}

/// Evaporation, condensation (nucleation plus growth), autoconversion and
/// collection rates. Only `cd` can be negative.
pub fn source_terms(cell: &MoistureCell, mp: &MicrophysicsParams) -> Sources {
    let excess = cell.q_v - cell.q_vs;
    Sources {
        ev: mp.c_ev * pos(-excess) * cell.q_r,
        cd: mp.c_cn * pos(excess) * mp.q_cn + mp.c_cd * excess * cell.q_c,
        ac: mp.c_ac * pos(cell.q_c - mp.q_ac),
        cr: mp.c_cr * cell.q_c * cell.q_r,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Adjusted {
    pub q_v: f64,
    pub q_c: f64,
}

/// Instantaneous condensation: vapour is capped at saturation and the
/// excess of non-precipitating water becomes cloud.
#[inline]
pub fn saturation_adjust(q_t: f64, q_r: f64, q_vs: f64) -> Adjusted {
    let q_vc = q_t - q_r;
    Adjusted {
        q_v: q_vs.min(q_vc),
        q_c: (q_vc - q_vs).max(0.0),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelaxationTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<MoistureCell>,
}

impl RelaxationTrajectory {
    pub fn end(&self) -> MoistureCell {
        *self.states.last().expect("trajectory holds the initial state")
    }

    /// Largest deviation of the end state from the saturation-adjusted state
    /// with the same total water and rain.
    pub fn end_error(&self) -> f64 {
        let end = self.end();
        let adj = saturation_adjust(end.total_water(), end.q_r, end.q_vs);
        (end.q_v - adj.q_v).abs().max((end.q_c - adj.q_c).abs())
    }
}

/// Integrates the 0-D moisture budget with nucleation and condensation
/// rescaled by ε⁻ⁿ. Transport and sedimentation are off.
pub fn column_relaxation(initial: &MoistureCell, mp: &MicrophysicsParams, t_end: f64) -> Result<RelaxationTrajectory> {
    let fast = mp.with_fast_condensation();
    let q_vs = initial.q_vs;
    let mut traj = RelaxationTrajectory {
        times: Vec::new(),
        states: Vec::new(),
    };
    let rhs = |_t: f64, y: &[f64; 3]| {
        let cell = MoistureCell {
            q_v: y[0],
            q_c: y[1],
            q_r: y[2],
            q_vs,
        };
        let s = source_terms(&cell, &fast);
        [s.ev - s.cd, s.cd - s.ac - s.cr, s.ac + s.cr - s.ev]
    };
    ode::integrate(
        rhs,
        0.0,
        [initial.q_v, initial.q_c, initial.q_r],
        t_end,
        Tolerances::default(),
        |t, y| {
            traj.times.push(t);
            traj.states.push(MoistureCell {
                q_v: y[0],
                q_c: y[1],
                q_r: y[2],
                q_vs,
            });
        },
    )?;
    Ok(traj)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RainColumn {
    /// Rain mixing ratio per cell, bottom to top.
    pub q_r: Vec<f64>,
    /// Downward rain mass flux ρ̄ V_r q_r at the faces, bottom (0) to top (nz).
    pub flux: Vec<f64>,
}

/// Diagnoses rain from the steady sedimentation balance
/// d(ρ̄ V_r q_r)/dz = -ρ̄ (S_ac + S_cr - S_ev), marching down from q_r = 0 at
/// the lid. The flux leaving a cell through its lower face carries the cell
/// value, and the local q_r dependence of S_cr and S_ev is solved implicitly.
pub fn rain_column_solve(
    q_c: &[f64],
    q_v: &[f64],
    q_vs: &[f64],
    rho: &[f64],
    dz: f64,
    mp: &MicrophysicsParams,
) -> Result<RainColumn> {
    let nz = q_c.len();
    let mut q_r = vec![0.0; nz];
    let mut flux = vec![0.0; nz + 1];
    for k in (0..nz).rev() {
        let autoconversion = mp.c_ac * pos(q_c[k] - mp.q_ac);
        // S_cr - S_ev = rate * q_r
        let rate = mp.c_cr * q_c[k] - mp.c_ev * pos(q_vs[k] - q_v[k]);
        let denominator = rho[k] * (mp.v_r - dz * rate);
        let numerator = flux[k + 1] + rho[k] * dz * autoconversion;
        if !(denominator > 0.0) || !numerator.is_finite() {
            return Err(Error::Solver {
                level: k,
                message: format!(
                    "no non-negative rain solution: collection rate {:.3e} exceeds sedimentation V_r/dz = {:.3e}",
                    rate,
                    mp.v_r / dz
                ),
            });
        }
        q_r[k] = numerator / denominator;
        flux[k] = rho[k] * mp.v_r * q_r[k];
    }
    Ok(RainColumn { q_r, flux })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn unit_params() -> MicrophysicsParams {
        MicrophysicsParams::relaxation_reference()
    }

    #[test]
    fn dry_cell_has_no_sources() {
        let mp = unit_params();
        let cell = MoistureCell {
            q_v: 0.5,
            q_c: 0.0,
            q_r: 0.0,
            q_vs: 1.0,
        };
        let s = source_terms(&cell, &mp);
        assert_eq!((s.ev, s.cd, s.ac, s.cr), (0.0, 0.0, 0.0, 0.0));
        let supersat = MoistureCell { q_v: 1.5, ..cell };
        assert_eq!(source_terms(&supersat, &mp).cd, 0.5 * mp.c_cn * mp.q_cn);
    }

    #[test]
    fn autoconversion_kink() {
        let mp = MicrophysicsParams {
            c_ac: 3.0,
            ..unit_params()
        };
        let at = MoistureCell {
            q_v: 1.0,
            q_c: mp.q_ac,
            q_r: 0.0,
            q_vs: 1.0,
        };
        assert_eq!(source_terms(&at, &mp).ac, 0.0);
        let above = MoistureCell { q_c: mp.q_ac + 0.25, ..at };
        assert_relative_eq!(source_terms(&above, &mp).ac, 3.0 * 0.25, max_relative = 1e-15);
    }

    #[test]
    fn subsaturated_rain_evaporates() {
        let mp = unit_params();
        let cell = MoistureCell {
            q_v: 0.5,
            q_c: 0.3,
            q_r: 0.2,
            q_vs: 1.0,
        };
        let s = source_terms(&cell, &mp);
        assert_relative_eq!(s.ev, 0.1, max_relative = 1e-15);
        assert!(s.cd < 0.0);
    }

    #[test]
    fn adjustment_examples() {
        assert_eq!(saturation_adjust(3.0, 1.0, 1.0), Adjusted { q_v: 1.0, q_c: 1.0 });
        let a = saturation_adjust(0.5, 0.2, 1.0);
        assert_relative_eq!(a.q_v, 0.3, max_relative = 1e-15);
        assert_eq!(a.q_c, 0.0);
        let edge = saturation_adjust(1.0 + 0.5, 0.5, 1.0);
        assert_eq!(edge, Adjusted { q_v: 1.0, q_c: 0.0 });
    }

    #[test]
    fn quiescent_column_stays_constant() {
        let mp = unit_params();
        let cell = MoistureCell {
            q_v: 0.8,
            q_c: 0.0,
            q_r: 0.0,
            q_vs: 1.0,
        };
        let traj = column_relaxation(&cell, &mp, 5.0).unwrap();
        for s in &traj.states {
            assert_eq!(*s, cell);
        }
    }

    #[test]
    fn relaxation_conserves_water_and_reaches_adjustment() {
        let mp = MicrophysicsParams { n: 4, ..unit_params() };
        let start = MoistureCell::standard_supersaturated();
        let traj = column_relaxation(&start, &mp, 1.0).unwrap();
        let total = start.total_water();
        for s in &traj.states {
            assert!((s.total_water() - total).abs() < 1e-9);
        }
        assert!(traj.end_error() < 1e-3, "error {}", traj.end_error());
    }

    #[test]
    fn rain_vanishes_without_sources() {
        let mp = MicrophysicsParams {
            q_ac: 0.5,
            ..unit_params()
        };
        let col = rain_column_solve(&[0.2; 6], &[1.0; 6], &[0.9; 6], &[1.0; 6], 0.1, &mp).unwrap();
        assert!(col.q_r.iter().all(|&q| q == 0.0));
    }

    #[test]
    fn rain_solver_reports_level_on_breakdown() {
        let mp = MicrophysicsParams {
            c_cr: 100.0,
            ..unit_params()
        };
        let err = rain_column_solve(&[1.0; 4], &[1.0; 4], &[1.0; 4], &[1.0; 4], 0.5, &mp).unwrap_err();
        assert!(matches!(err, Error::Solver { level: 3, .. }));
    }

    #[test]
    fn fast_factor_scales_only_condensation() {
        let mp = MicrophysicsParams { n: 3, ..unit_params() };
        let fast = mp.with_fast_condensation();
        assert_relative_eq!(fast.c_cd, 1000.0, max_relative = 1e-12);
        assert_relative_eq!(fast.c_cn, 1000.0, max_relative = 1e-12);
        assert_eq!(fast.c_ac, mp.c_ac);
    }
}
