//! Time integration of the two PQG variants.
//!
//! Prognostic fields are the PV anomaly `q = PV_e - βy`, the moisture
//! variable M̃ and, in the continuous variant, cloud water. Everything else is
//! recovered each stage by [`Model::close_diagnostics`].
//!
//! Moisture perturbations are mixing ratios; θ̃, θ̃_e and M̃ are in kelvin.
//! With X = c2 (M̃ - θ̃) / L_c and q̃_vs = γ θ̃:
//!
//! * continuous: q̃_v = X, θ̃_e = θ̃ + L_c q̃_v;
//! * fast: q_vc = X where X ≤ q̃_vs, else q̃_vs + (X - q̃_vs) / c1, then
//!   (q̃_v, q_c) follows from saturation adjustment of q_vc.

use std::str::FromStr;

use log::debug;
use ndarray::{Array3, Axis, Zip};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inversion::{Inverter, LidConditions, SaturationMask, SolverOptions};
use crate::microphysics::{rain_column_solve, saturation_adjust, source_terms, MicrophysicsParams, MoistureCell};
use crate::thermo::ThermoParams;
use crate::transport::{advect_muscl, courant_rate, face_velocities};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Continuous,
    Fast,
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "continuous" => Ok(Variant::Continuous),
            "fast" => Ok(Variant::Fast),
            other => Err(Error::config(
                "dynamics.variant",
                format!("expected `continuous` or `fast`, got `{other}`"),
            )),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Continuous => "continuous",
            Variant::Fast => "fast",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrognosticState {
    pub variant: Variant,
    /// PV_e - βy [s⁻¹].
    pub q: Array3<f64>,
    /// M̃ [K].
    pub m: Array3<f64>,
    /// Cloud water; present only in the continuous variant.
    pub q_c: Option<Array3<f64>>,
    /// Model time [s].
    pub t: f64,
}

#[derive(Debug, Clone)]
pub struct DiagnosticState {
    pub phi: Array3<f64>,
    pub u: Array3<f64>,
    pub v: Array3<f64>,
    pub zeta: Array3<f64>,
    pub theta: Array3<f64>,
    pub theta_e: Array3<f64>,
    pub q_v: Array3<f64>,
    /// q̃_vs = γ θ̃.
    pub q_vs: Array3<f64>,
    /// Prognostic copy (continuous) or diagnosed cloud water (fast).
    pub q_c: Array3<f64>,
    pub q_r: Array3<f64>,
    /// Downward rain flux ρ̄ V_r q_r on faces, shape `(nz + 1, ny, nx)`.
    pub rain_flux: Array3<f64>,
    /// Vertical velocity; filled by [`Model::vertical_velocity`].
    pub w: Option<Array3<f64>>,
    /// Face saturation mask of the fast inversion.
    pub mask: Option<SaturationMask>,
}

impl DiagnosticState {
    /// Cells with q̃_v ≥ q̃_vs.
    pub fn saturated_fraction(&self) -> f64 {
        let n = Zip::from(&self.q_v)
            .and(&self.q_vs)
            .fold(0usize, |n, &v, &s| n + usize::from(v >= s));
        n as f64 / self.q_v.len() as f64
    }
}

#[derive(Debug, Clone)]
pub struct Tendencies {
    pub q: Array3<f64>,
    pub m: Array3<f64>,
    pub q_c: Option<Array3<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynamicsOptions {
    /// Freeze the fast-variant mask at its first-stage value within a step.
    pub lagged_mask: bool,
    /// Largest admissible dt · max(|u|/dx + |v|/dy).
    pub cfl_limit: f64,
}

impl Default for DynamicsOptions {
    fn default() -> Self {
        DynamicsOptions {
            lagged_mask: false,
            cfl_limit: 0.5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub state: PrognosticState,
    /// ρ̄-weighted cloud-water mass removed by clipping [kg].
    pub clipped_mass: f64,
    /// Mask of the last closure, useful as a warm start.
    pub mask: Option<SaturationMask>,
}

pub struct Model {
    inverter: Inverter,
    /// Zero-lid copy for inverting tendencies.
    increment: Inverter,
    tp: ThermoParams,
    /// Rates with the ε⁻ⁿ condensation rescaling applied.
    mp: MicrophysicsParams,
    solver: SolverOptions,
    variant: Variant,
    options: DynamicsOptions,
}

impl std::fmt::Debug for Model {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Model")
            .field("grid", self.inverter.grid())
            .field("variant", &self.variant)
            .finish()
    }
}

fn max_abs(a: &Array3<f64>) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

impl Model {
    pub fn new(
        inverter: Inverter,
        tp: ThermoParams,
        mp: MicrophysicsParams,
        solver: SolverOptions,
        variant: Variant,
        options: DynamicsOptions,
    ) -> Result<Self> {
        mp.validate()?;
        solver.validate()?;
        if !(options.cfl_limit > 0.0) {
            return Err(Error::config("dynamics.cfl_limit", "must be positive"));
        }
        let increment = inverter.with_lids(LidConditions::default());
        Ok(Model {
            inverter,
            increment,
            tp,
            mp: mp.with_fast_condensation(),
            solver,
            variant,
            options,
        })
    }

    pub fn inverter(&self) -> &Inverter {
        &self.inverter
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn thermo(&self) -> &ThermoParams {
        &self.tp
    }

    /// Microphysics rates in effect (after the ε⁻ⁿ rescaling).
    pub fn microphysics(&self) -> &MicrophysicsParams {
        &self.mp
    }

    pub fn zero_state(&self) -> PrognosticState {
        let g = self.inverter.grid();
        PrognosticState {
            variant: self.variant,
            q: g.zeros(),
            m: g.zeros(),
            q_c: (self.variant == Variant::Continuous).then(|| g.zeros()),
            t: 0.0,
        }
    }

    fn check_state(&self, s: &PrognosticState) -> Result<()> {
        if s.variant != self.variant {
            return Err(Error::config("dynamics.variant", "state variant differs from the model variant"));
        }
        if (self.variant == Variant::Continuous) != s.q_c.is_some() {
            return Err(Error::config("dynamics.variant", "cloud water is prognostic only in the continuous variant"));
        }
        Ok(())
    }

    pub fn close_diagnostics(&self, s: &PrognosticState) -> Result<DiagnosticState> {
        self.close_with(s, None, false)
    }

    /// Closure with an optional starting mask; with `frozen` the mask is used
    /// as is instead of iterating.
    pub fn close_with(&self, s: &PrognosticState, mask: Option<&SaturationMask>, frozen: bool) -> Result<DiagnosticState> {
        self.check_state(s)?;
        let inv = &self.inverter;
        let (phi, mask) = match self.variant {
            Variant::Continuous => (inv.invert_moist_linear(&s.q, &s.m)?, None),
            Variant::Fast => match (mask, frozen) {
                (Some(mk), true) => (inv.solve_with_mask(&s.q, &s.m, mk, &self.solver, None)?, Some(mk.clone())),
                (start, _) => {
                    let initial = start.cloned().unwrap_or_else(|| SaturationMask::uniform(inv.grid(), false));
                    let r = inv.invert_moist_fast_from(&s.q, &s.m, &self.solver, initial, None)?;
                    (r.phi, Some(r.mask))
                }
            },
        };
        let bal = inv.diagnose_balances(&phi);
        let bg = inv.background();
        let latent = bg.latent;
        let g = *inv.grid();
        let mut q_v = g.zeros();
        let mut q_vs = g.zeros();
        let mut q_c = match &s.q_c {
            Some(c) => c.clone(),
            None => g.zeros(),
        };
        for k in 0..g.nz {
            let (c1, c2, gamma) = (bg.c1.centers[k], bg.c2.centers[k], bg.qvs_theta.centers[k]);
            let theta = bal.theta.index_axis(Axis(0), k);
            let m = s.m.index_axis(Axis(0), k);
            Zip::from(q_v.index_axis_mut(Axis(0), k))
                .and(q_vs.index_axis_mut(Axis(0), k))
                .and(q_c.index_axis_mut(Axis(0), k))
                .and(theta)
                .and(m)
                .for_each(|qv, qs, qc, &t, &mm| {
                    let x = c2 * (mm - t) / latent;
                    *qs = gamma * t;
                    match self.variant {
                        Variant::Continuous => *qv = x,
                        Variant::Fast => {
                            let q_vc = if x > *qs { *qs + (x - *qs) / c1 } else { x };
                            let adj = saturation_adjust(q_vc, 0.0, *qs);
                            *qv = adj.q_v;
                            *qc = adj.q_c;
                        }
                    }
                });
        }
        let theta_e = &bal.theta + &(latent * &q_v);
        let (q_r, rain_flux) = self.rain(&q_c, &q_v, &q_vs)?;
        Ok(DiagnosticState {
            phi,
            u: bal.u,
            v: bal.v,
            zeta: bal.zeta,
            theta: bal.theta,
            theta_e,
            q_v,
            q_vs,
            q_c,
            q_r,
            rain_flux,
            w: None,
            mask,
        })
    }

    fn rain(&self, q_c: &Array3<f64>, q_v: &Array3<f64>, q_vs: &Array3<f64>) -> Result<(Array3<f64>, Array3<f64>)> {
        let g = *self.inverter.grid();
        let bg = self.inverter.background();
        let columns: Vec<(usize, usize)> = (0..g.ny).flat_map(|j| (0..g.nx).map(move |i| (j, i))).collect();
        let solved = columns
            .par_iter()
            .map(|&(j, i)| {
                let col = |a: &Array3<f64>| -> Vec<f64> { (0..g.nz).map(|k| a[[k, j, i]]).collect() };
                rain_column_solve(&col(q_c), &col(q_v), &col(q_vs), &bg.rho.centers, bg.dz, &self.mp)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut q_r = g.zeros();
        let mut flux = Array3::zeros((g.nz + 1, g.ny, g.nx));
        for (&(j, i), col) in columns.iter().zip(solved) {
            for k in 0..g.nz {
                q_r[[k, j, i]] = col.q_r[k];
            }
            for k in 0..=g.nz {
                flux[[k, j, i]] = col.flux[k];
            }
        }
        Ok((q_r, flux))
    }

    /// B = L_c c1 / c2 at cell level `k`, zero in dry cells.
    fn stability_ratio(&self, k: usize) -> f64 {
        let bg = self.inverter.background();
        let c2 = bg.c2.centers[k];
        if c2 > 0.0 {
            bg.latent * bg.c1.centers[k] / c2
        } else {
            0.0
        }
    }

    /// Largest advective Courant rate of the diagnosed flow [s⁻¹].
    pub fn courant_rate(&self, d: &DiagnosticState) -> f64 {
        let g = self.inverter.grid();
        let spectral = Zip::from(&d.u)
            .and(&d.v)
            .fold(0.0f64, |m, &u, &v| m.max(u.abs() / g.dx() + v.abs() / g.dy()));
        let psi = d.phi.mapv(|p| p / self.tp.f);
        spectral.max(courant_rate(&face_velocities(&psi, g), g))
    }

    pub fn tendencies(&self, s: &PrognosticState, d: &DiagnosticState) -> Result<Tendencies> {
        self.check_state(s)?;
        let inv = &self.inverter;
        let sp = inv.spectral();
        let g = *inv.grid();
        let bg = inv.background();
        let tp = &self.tp;

        let mut dq = sp.advection(&d.u, &d.v, &s.q);
        Zip::from(&mut dq).and(&d.v).for_each(|t, &v| *t = -*t - tp.beta * v);
        let latent_vapor = d.q_v.mapv(|v| bg.latent * v);
        if max_abs(&latent_vapor) > 0.0 {
            let jac = sp.jacobian(&d.theta, &latent_vapor);
            for k in 0..g.nz {
                let factor = tp.g / (tp.theta_ref * bg.dtheta_e_dz.centers[k]);
                Zip::from(dq.index_axis_mut(Axis(0), k))
                    .and(jac.index_axis(Axis(0), k))
                    .for_each(|t, &j| *t -= factor * j);
            }
        }

        let mut dm = sp.advection(&d.u, &d.v, &s.m).mapv(|a| -a);
        match self.variant {
            Variant::Continuous => {
                for ((k, j, i), t) in dm.indexed_iter_mut() {
                    let b = self.stability_ratio(k);
                    if b == 0.0 {
                        continue;
                    }
                    let cell = MoistureCell {
                        q_v: d.q_v[[k, j, i]],
                        q_c: d.q_c[[k, j, i]],
                        q_r: d.q_r[[k, j, i]],
                        q_vs: d.q_vs[[k, j, i]],
                    };
                    let src = source_terms(&cell, &self.mp);
                    *t += b * (src.ev - src.cd);
                }
            }
            Variant::Fast => {
                for ((k, j, i), t) in dm.indexed_iter_mut() {
                    let b = self.stability_ratio(k);
                    let div = (d.rain_flux[[k + 1, j, i]] - d.rain_flux[[k, j, i]]) / bg.dz;
                    *t += b * div / bg.rho.centers[k];
                }
            }
        }

        let dqc = match &s.q_c {
            Some(qc) => {
                let psi = d.phi.mapv(|p| p / tp.f);
                let vel = face_velocities(&psi, &g);
                let mut t = advect_muscl(qc, &vel, &g);
                for ((k, j, i), v) in t.indexed_iter_mut() {
                    let cell = MoistureCell {
                        q_v: d.q_v[[k, j, i]],
                        q_c: qc[[k, j, i]],
                        q_r: d.q_r[[k, j, i]],
                        q_vs: d.q_vs[[k, j, i]],
                    };
                    let src = source_terms(&cell, &self.mp);
                    *v += src.cd - src.ac - src.cr;
                }
                Some(t)
            }
            None => None,
        };
        Ok(Tendencies { q: dq, m: dm, q_c: dqc })
    }

    /// Tendency of the dry QG system for the same PV anomaly, used as a
    /// reference for the moist code path.
    pub fn dry_tendency(&self, q: &Array3<f64>) -> Result<Array3<f64>> {
        let inv = &self.inverter;
        let phi = inv.invert_dry(q)?;
        let bal = inv.diagnose_balances(&phi);
        let mut dq = inv.spectral().advection(&bal.u, &bal.v, q);
        Zip::from(&mut dq).and(&bal.v).for_each(|t, &v| *t = -*t - self.tp.beta * v);
        Ok(dq)
    }

    /// w̃ = -(∂t θ̃_e + u·∇θ̃_e) / (dθ̄_e/dz), with ∂t θ̃_e from inverting the
    /// tendencies (frozen mask in the fast variant).
    pub fn vertical_velocity(&self, d: &DiagnosticState, tend: &Tendencies) -> Result<Array3<f64>> {
        let inv = &self.increment;
        let g = *inv.grid();
        let bg = inv.background();
        let dphi = match (&self.variant, &d.mask) {
            (Variant::Fast, Some(mask)) => inv.solve_with_mask(&tend.q, &tend.m, mask, &self.solver, None)?,
            _ => inv.invert_moist_linear(&tend.q, &tend.m)?,
        };
        let dtheta = inv.centers_from_faces(&inv.theta_faces(&dphi));
        let adv = inv.spectral().advection(&d.u, &d.v, &d.theta_e);
        Ok(Array3::from_shape_fn(g.shape(), |(k, j, i)| {
            let saturated = self.variant == Variant::Fast && d.q_v[[k, j, i]] >= d.q_vs[[k, j, i]];
            let rate = if saturated {
                (1.0 + bg.latent * bg.qvs_theta.centers[k]) * dtheta[[k, j, i]]
            } else {
                bg.c1.centers[k] * dtheta[[k, j, i]] + bg.c2.centers[k] * tend.m[[k, j, i]]
            };
            -(rate + adv[[k, j, i]]) / bg.dtheta_e_dz.centers[k]
        }))
    }

    fn clip(&self, s: &mut PrognosticState) -> f64 {
        let Some(qc) = s.q_c.as_mut() else { return 0.0 };
        let g = *self.inverter.grid();
        let bg = self.inverter.background();
        let volume = g.dx() * g.dy() * g.dz();
        let mut clipped = 0.0;
        for (k, mut level) in qc.outer_iter_mut().enumerate() {
            let mut lost = 0.0;
            level.mapv_inplace(|v| {
                if v < 0.0 {
                    lost -= v;
                    0.0
                } else {
                    v
                }
            });
            clipped += bg.rho.centers[k] * lost * volume;
        }
        clipped
    }

    fn combine(&self, a: f64, s: &PrognosticState, b: f64, base: &PrognosticState, tend: &Tendencies, dt: f64) -> PrognosticState {
        // a * s + b * (base + dt * tend)
        let mix = |x: &Array3<f64>, y: &Array3<f64>, t: &Array3<f64>| -> Array3<f64> {
            Zip::from(x).and(y).and(t).map_collect(|&x, &y, &t| a * x + b * (y + dt * t))
        };
        PrognosticState {
            variant: s.variant,
            q: mix(&s.q, &base.q, &tend.q),
            m: mix(&s.m, &base.m, &tend.m),
            q_c: match (&s.q_c, &base.q_c, &tend.q_c) {
                (Some(x), Some(y), Some(t)) => Some(mix(x, y, t)),
                _ => None,
            },
            t: a * s.t + b * (base.t + dt),
        }
    }

    fn stage(&self, s: &PrognosticState, dt: f64, mask: Option<&SaturationMask>, frozen: bool) -> Result<(Tendencies, DiagnosticState)> {
        let d = self.close_with(s, mask, frozen)?;
        let courant = self.courant_rate(&d) * dt;
        if courant > self.options.cfl_limit {
            return Err(Error::StepSize {
                quantity: "courant number",
                value: courant,
                limit: self.options.cfl_limit,
            });
        }
        Ok((self.tendencies(s, &d)?, d))
    }

    /// One third-order SSP Runge–Kutta step (Shu–Osher form), re-closing the
    /// diagnostics at every stage and clipping negative cloud water.
    pub fn step(&self, s: &PrognosticState, dt: f64) -> Result<StepOutcome> {
        self.step_from(s, dt, None)
    }

    /// As [`Model::step`], warm-starting the fast inversion from `mask`.
    pub fn step_from(&self, s: &PrognosticState, dt: f64, mask: Option<&SaturationMask>) -> Result<StepOutcome> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::config("dynamics.dt", "time step must be positive"));
        }
        let lagged = self.options.lagged_mask && self.variant == Variant::Fast;
        let (t1, d1) = self.stage(s, dt, mask, false)?;
        let first_mask = d1.mask;
        let mut s1 = self.combine(0.0, s, 1.0, s, &t1, dt);
        let mut clipped = self.clip(&mut s1);
        let (t2, d2) = self.stage(&s1, dt, first_mask.as_ref(), lagged)?;
        let mut s2 = self.combine(0.75, s, 0.25, &s1, &t2, dt);
        clipped += self.clip(&mut s2);
        let (t3, d3) = self.stage(&s2, dt, d2.mask.as_ref().or(first_mask.as_ref()), lagged)?;
        let mut s3 = self.combine(1.0 / 3.0, s, 2.0 / 3.0, &s2, &t3, dt);
        clipped += self.clip(&mut s3);
        s3.t = s.t + dt;
        if clipped > 0.0 {
            debug!("clipped cloud water mass={clipped:.6e} t={:.1}", s3.t);
        }
        Ok(StepOutcome {
            state: s3,
            clipped_mass: clipped,
            mask: d3.mask.or(first_mask),
        })
    }

    /// Total water ∫ρ̄ (q̄_vs + q̃_v + q_c + q_r) dV [kg], taking the background
    /// as saturated.
    pub fn total_water(&self, d: &DiagnosticState) -> f64 {
        let g = *self.inverter.grid();
        let bg = self.inverter.background();
        let volume = g.dx() * g.dy() * g.dz();
        (0..g.nz)
            .map(|k| {
                let level = Zip::from(d.q_v.index_axis(Axis(0), k))
                    .and(d.q_c.index_axis(Axis(0), k))
                    .and(d.q_r.index_axis(Axis(0), k))
                    .fold(0.0, |acc, &v, &c, &r| acc + bg.q_vs.centers[k] + v + c + r);
                bg.rho.centers[k] * level * volume
            })
            .sum()
    }

    pub fn scalar_diagnostics(&self, step: usize, s: &PrognosticState, d: &DiagnosticState, clipped_mass: f64) -> ScalarDiagnostics {
        let g = *self.inverter.grid();
        let bg = self.inverter.background();
        let beta = self.tp.beta;
        let n = g.cells() as f64;
        let pv = |k: usize, j: usize, i: usize| s.q[[k, j, i]] + beta * g.y(j);
        let mut mean = 0.0;
        for ((k, j, i), _) in s.q.indexed_iter() {
            mean += pv(k, j, i);
        }
        mean /= n;
        let mut variance = 0.0;
        for ((k, j, i), _) in s.q.indexed_iter() {
            variance += (pv(k, j, i) - mean).powi(2);
        }
        variance /= n;
        let f2 = self.tp.f * self.tp.f;
        let energy = Zip::from(&d.u).and(&d.v).fold(0.0, |acc, &u, &v| acc + f2 * (u * u + v * v)) / n;
        let rain_column = (0..g.nz)
            .map(|k| bg.rho.centers[k] * bg.dz * d.q_r.index_axis(Axis(0), k).sum())
            .sum::<f64>()
            / (g.nx * g.ny) as f64;
        ScalarDiagnostics {
            step,
            time: s.t,
            energy,
            pv_mean: mean,
            pv_variance: variance,
            saturated_fraction: d.saturated_fraction(),
            rain_column,
            clipped_mass,
        }
    }
}

/// One row of the scalar diagnostics table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarDiagnostics {
    pub step: usize,
    pub time: f64,
    /// ⟨|∇_h φ̃|²⟩ [m² s⁻⁴ · m²]
    pub energy: f64,
    pub pv_mean: f64,
    pub pv_variance: f64,
    pub saturated_fraction: f64,
    /// Horizontal mean of ∫ρ̄ q_r dz [kg m⁻²].
    pub rain_column: f64,
    /// Cumulative clipped cloud-water mass [kg].
    pub clipped_mass: f64,
}

impl ScalarDiagnostics {
    pub const COLUMNS: [&'static str; 8] = [
        "step",
        "time",
        "energy",
        "pv_mean",
        "pv_variance",
        "saturated_fraction",
        "rain_column",
        "clipped_mass",
    ];

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
            self.step,
            self.time,
            self.energy,
            self.pv_mean,
            self.pv_variance,
            self.saturated_fraction,
            self.rain_column,
            self.clipped_mass
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialFamily {
    /// Random smooth φ̃ with a spectral peak at `wavenumber`.
    Random,
    /// Baroclinic sinusoidal jet plus a small random perturbation.
    ZonalJet,
    /// Single Gaussian vortex in the domain centre.
    Vortex,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialCondition {
    pub family: InitialFamily,
    /// Peak horizontal wind speed [m s⁻¹].
    pub amplitude: f64,
    /// M̃ - θ̃ offset [K]; raising it raises the saturated fraction.
    pub moisture_offset: f64,
    /// Peak mode number of the random family.
    pub wavenumber: f64,
    /// Vortex radius or jet perturbation scale as a fraction of Lx.
    pub width: f64,
    /// Relative amplitude of the random perturbation on the jet.
    pub perturbation: f64,
}

impl Default for InitialCondition {
    fn default() -> Self {
        InitialCondition {
            family: InitialFamily::Random,
            amplitude: 10.0,
            moisture_offset: 0.0,
            wavenumber: 4.0,
            width: 0.1,
            perturbation: 0.01,
        }
    }
}

impl InitialCondition {
    pub fn validate(&self) -> Result<()> {
        for (key, v) in [
            ("dynamics.initial.amplitude", self.amplitude),
            ("dynamics.initial.wavenumber", self.wavenumber),
            ("dynamics.initial.width", self.width),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(key, format!("must be positive, got {v}")));
            }
        }
        for (key, v) in [
            ("dynamics.initial.moisture_offset", self.moisture_offset),
            ("dynamics.initial.perturbation", self.perturbation),
        ] {
            if !v.is_finite() {
                return Err(Error::config(key, "must be finite"));
            }
        }
        Ok(())
    }
}

fn random_streamfunction(model: &Model, peak: f64, rng: &mut ChaCha8Rng) -> Array3<f64> {
    let inv = model.inverter();
    let g = *inv.grid();
    let mut spec = Array3::<Complex64>::zeros(g.shape());
    let signed = |i: usize, n: usize| if i <= n / 2 { i as f64 } else { i as f64 - n as f64 };
    let (nx, ny) = (g.nx, g.ny);
    for j in 0..ny {
        for i in 0..nx {
            // Draw for every bin so the stream does not depend on the band.
            let phase: f64 = rng.random::<f64>() * std::f64::consts::TAU;
            let vertical: [f64; 3] = [rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5];
            let kappa = (signed(i, nx).powi(2) + signed(j, ny).powi(2)).sqrt();
            if kappa == 0.0 || 3.0 * signed(i, nx).abs() >= nx as f64 || 3.0 * signed(j, ny).abs() >= ny as f64 {
                continue;
            }
            let amp = (-(kappa - peak).powi(2) / 2.0).exp() / kappa;
            for k in 0..g.nz {
                let z = (k as f64 + 0.5) / g.nz as f64;
                let structure: f64 = vertical
                    .iter()
                    .enumerate()
                    .map(|(m, c)| c * (m as f64 * std::f64::consts::PI * z).cos())
                    .sum();
                spec[[k, j, i]] = Complex64::from_polar(amp * structure, phase);
            }
        }
    }
    inv.spectral().inverse(spec)
}

fn normalise(model: &Model, mut phi: Array3<f64>, speed: f64) -> Array3<f64> {
    let mean = phi.mean().unwrap_or(0.0);
    phi.mapv_inplace(|v| v - mean);
    let bal = model.inverter().diagnose_balances(&phi);
    let peak = Zip::from(&bal.u)
        .and(&bal.v)
        .fold(0.0f64, |m, &u, &v| m.max((u * u + v * v).sqrt()));
    if peak > 0.0 {
        phi.mapv_inplace(|v| v * speed / peak);
    }
    phi
}

/// Builds a balanced initial state: φ̃ from the chosen family, M̃ = θ̃ +
/// offset, and the PV anomaly from the forward inversion operator.
pub fn initial_state(model: &Model, ic: &InitialCondition, seed: u64) -> Result<PrognosticState> {
    ic.validate()?;
    let inv = model.inverter();
    let g = *inv.grid();
    let f = model.thermo().f;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phi = match ic.family {
        InitialFamily::Random => normalise(model, random_streamfunction(model, ic.wavenumber, &mut rng), ic.amplitude),
        InitialFamily::ZonalJet => {
            let jet = Array3::from_shape_fn(g.shape(), |(k, j, _)| {
                let z = (k as f64 + 0.5) / g.nz as f64;
                let y = g.y(j) / g.ly;
                -f * g.ly / std::f64::consts::TAU * (std::f64::consts::TAU * y).sin() * (2.0 * z - 1.0)
            });
            let jet = normalise(model, jet, ic.amplitude);
            let noise = normalise(model, random_streamfunction(model, 1.0 / ic.width, &mut rng), ic.amplitude * ic.perturbation);
            jet + noise
        }
        InitialFamily::Vortex => {
            let radius = ic.width * g.lx;
            let blob = Array3::from_shape_fn(g.shape(), |(k, j, i)| {
                let wrap = |d: f64, l: f64| d - l * (d / l).round();
                let dx = wrap(g.x(i) - 0.5 * g.lx, g.lx);
                let dy = wrap(g.y(j) - 0.5 * g.ly, g.ly);
                let z = (k as f64 + 0.5) / g.nz as f64;
                -(-(dx * dx + dy * dy) / (2.0 * radius * radius)).exp() * (std::f64::consts::PI * z).cos()
            });
            normalise(model, blob, ic.amplitude)
        }
    };
    let theta = inv.diagnose_balances(&phi).theta;
    let m = theta.mapv(|t| t + ic.moisture_offset);
    let q = match model.variant() {
        Variant::Continuous => inv.apply_moist_linear(&phi, &m),
        Variant::Fast => inv.apply_moist_fast(&phi, &m),
    };
    Ok(PrognosticState {
        variant: model.variant(),
        q,
        m,
        q_c: (model.variant() == Variant::Continuous).then(|| g.zeros()),
        t: 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::background::{build_background, BackgroundConfig, ProfileFamily};
    use crate::spectral::Grid;

    fn model(variant: Variant, family: ProfileFamily) -> Model {
        let tp = ThermoParams::default();
        let grid = Grid::new(16, 16, 6, 2.0e6, 2.0e6, 1.0e4);
        let cfg = BackgroundConfig {
            family,
            ..Default::default()
        };
        let bg = build_background(&cfg, grid.nz, grid.h, &tp).unwrap();
        let inv = Inverter::new(grid, bg, &tp, LidConditions::default()).unwrap();
        Model::new(inv, tp, MicrophysicsParams::default(), SolverOptions::default(), variant, DynamicsOptions::default()).unwrap()
    }

    #[test]
    fn rest_state_is_fixed_point() {
        let m = model(Variant::Continuous, ProfileFamily::Exponential);
        let s = m.zero_state();
        let out = m.step(&s, 600.0).unwrap();
        assert!(out.state.q.iter().all(|&v| v == 0.0));
        assert!(out.state.m.iter().all(|&v| v == 0.0));
        assert_eq!(out.clipped_mass, 0.0);
    }

    #[test]
    fn horizontally_uniform_state_has_no_wind() {
        let m = model(Variant::Continuous, ProfileFamily::Exponential);
        let mut s = m.zero_state();
        let g = *m.inverter().grid();
        s.m = Array3::from_shape_fn(g.shape(), |(k, _, _)| k as f64 * 0.1);
        let d = m.close_diagnostics(&s).unwrap();
        assert!(max_abs(&d.u) < 1e-12 && max_abs(&d.v) < 1e-12);
    }

    #[test]
    fn barotropic_flow_has_no_moist_source() {
        let m = model(Variant::Continuous, ProfileFamily::Exponential);
        let g = *m.inverter().grid();
        let phi = Array3::from_shape_fn(g.shape(), |(_, j, i)| (std::f64::consts::TAU * g.x(i) / g.lx).sin() * (std::f64::consts::TAU * g.y(j) / g.ly).cos() * 1.0e3);
        let moist = Array3::from_shape_fn(g.shape(), |(_, j, _)| (std::f64::consts::TAU * g.y(j) / g.ly).sin());
        let mut s = m.zero_state();
        s.m = moist.clone();
        s.q = m.inverter().apply_moist_linear(&phi, &moist);
        let d = m.close_diagnostics(&s).unwrap();
        assert!(max_abs(&d.theta) < 1e-9);
        let t = m.tendencies(&s, &d).unwrap();
        // Moisture here only enters through the source, which needs shear.
        let adv = m.inverter().spectral().advection(&d.u, &d.v, &s.q);
        let expected = Zip::from(&adv).and(&d.v).map_collect(|&a, &v| -a - m.thermo().beta * v);
        assert!(max_abs(&(&t.q - &expected)) <= 1e-12 * max_abs(&expected).max(1e-30));
    }

    #[test]
    fn cfl_violation_is_reported() {
        let m = model(Variant::Continuous, ProfileFamily::Exponential);
        let ic = InitialCondition {
            amplitude: 50.0,
            ..Default::default()
        };
        let s = initial_state(&m, &ic, 3).unwrap();
        let err = m.step(&s, 1.0e6).unwrap_err();
        assert!(matches!(err, Error::StepSize { .. }));
    }

    #[test]
    fn fast_closure_is_complementary() {
        let m = model(Variant::Fast, ProfileFamily::Exponential);
        let ic = InitialCondition {
            moisture_offset: 0.5,
            ..Default::default()
        };
        let s = initial_state(&m, &ic, 11).unwrap();
        let d = m.close_diagnostics(&s).unwrap();
        for ((&v, &c), &qs) in d.q_v.iter().zip(&d.q_c).zip(&d.q_vs) {
            assert!(v <= qs);
            assert!(c >= 0.0);
            assert_eq!(c * (qs - v), 0.0);
        }
    }

    #[test]
    fn variant_parse() {
        assert_eq!("fast".parse::<Variant>().unwrap(), Variant::Fast);
        assert!("slow".parse::<Variant>().unwrap_err().is_config());
    }
}
