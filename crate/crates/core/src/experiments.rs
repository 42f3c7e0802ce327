//! Experiment drivers behind the CLI subcommands. Each writes its tables into
//! an output directory together with a `summary.json` listing its checks.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use ndarray::Array3;
use serde::Serialize;

use crate::background::{build_background, BackgroundConfig, ProfileFamily};
use crate::config::RunConfig;
use crate::dynamics::{initial_state, ScalarDiagnostics};
use crate::error::{Error, Result};
use crate::frame::{write_frame, Frame};
use crate::inversion::{Inverter, LidConditions};
use crate::microphysics::{column_relaxation, MicrophysicsParams, MoistureCell};
use crate::spectral::Grid;
use crate::thermo::{regime_consistency_report, DerivedQuantities, Regime, ThermoParams};

/// One pass/fail line of a summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub target: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    /// |measured - target| / |target| <= tolerance.
    pub fn relative(name: impl Into<String>, measured: f64, target: f64, tolerance: f64) -> Check {
        let rel = ((measured - target) / target).abs();
        Check {
            name: name.into(),
            measured,
            target,
            tolerance,
            passed: rel <= tolerance,
        }
    }

    /// measured < bound.
    pub fn below(name: impl Into<String>, measured: f64, bound: f64) -> Check {
        Check {
            name: name.into(),
            measured,
            target: 0.0,
            tolerance: bound,
            passed: measured < bound,
        }
    }

    pub fn flag(name: impl Into<String>, ok: bool) -> Check {
        Check {
            name: name.into(),
            measured: if ok { 1.0 } else { 0.0 },
            target: 1.0,
            tolerance: 0.0,
            passed: ok,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary<T: Serialize> {
    pub experiment: &'static str,
    pub passed: bool,
    pub runtime_seconds: f64,
    pub checks: Vec<Check>,
    pub results: T,
}

impl<T: Serialize> Summary<T> {
    fn new(experiment: &'static str, started: Instant, checks: Vec<Check>, results: T) -> Self {
        Summary {
            experiment,
            passed: checks.iter().all(|c| c.passed),
            runtime_seconds: started.elapsed().as_secs_f64(),
            checks,
            results,
        }
    }

    pub fn write(&self, out: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))?;
        fs::write(out.join("summary.json"), text)?;
        Ok(())
    }
}

fn ensure_dir(out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    Ok(())
}

// ---------------------------------------------------------------- cc-tables

/// Published reference values for the default parameters.
pub const REFERENCE_DERIVED: [(&str, f64); 5] = [
    ("rho_ref", 1.25),
    ("h_sc", 11.0e3),
    ("c_ref", 330.0),
    ("c_int", 110.0),
    ("u_ref", 12.0),
];
pub const REFERENCE_PI: [(&str, f64); 3] = [("pi1", 1.6e-3), ("pi2", 1.5e-1), ("pi3", 4.7e-1)];

#[derive(Debug, Clone, Serialize)]
pub struct CcTables {
    pub derived: DerivedQuantities,
    pub pi: crate::thermo::PiParameters,
    pub regimes: Vec<crate::thermo::RegimeReport>,
    /// (T [K], e_s [Pa], L(T) [J kg⁻¹]).
    pub saturation_curve: Vec<(f64, f64, f64)>,
}

pub fn cc_tables(tp: &ThermoParams, epsilon: f64) -> Result<Summary<CcTables>> {
    let started = Instant::now();
    let derived = tp.derived_quantities();
    let pi = tp.pi_parameters();
    let regimes = vec![
        regime_consistency_report(Regime::Consistent, epsilon, tp),
        regime_consistency_report(Regime::ValueBased, epsilon, tp),
    ];
    let saturation_curve = (0..=80)
        .map(|i| {
            let t = 230.0 + i as f64;
            Ok((t, tp.saturation_vapor_pressure(t)?, tp.latent_heat(t)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let measured_derived = [derived.rho_ref, derived.h_sc, derived.c_ref, derived.c_int, derived.u_ref];
    let measured_pi = [pi.pi1, pi.pi2, pi.pi3];
    let mut checks: Vec<Check> = REFERENCE_DERIVED
        .iter()
        .zip(measured_derived)
        .map(|(&(name, target), m)| Check::relative(name, m, target, 0.05))
        .collect();
    checks.extend(
        REFERENCE_PI
            .iter()
            .zip(measured_pi)
            .map(|(&(name, target), m)| Check::relative(name, m, target, 0.10)),
    );
    Ok(Summary::new(
        "cc-tables",
        started,
        checks,
        CcTables {
            derived,
            pi,
            regimes,
            saturation_curve,
        },
    ))
}

pub fn write_cc_tables(summary: &Summary<CcTables>, out: &Path) -> Result<()> {
    ensure_dir(out)?;
    let r = &summary.results;
    let mut derived = String::from("quantity,value,reference\n");
    let d = r.derived;
    for ((name, reference), value) in REFERENCE_DERIVED.iter().zip([d.rho_ref, d.h_sc, d.c_ref, d.c_int, d.u_ref]) {
        writeln!(derived, "{name},{value:e},{reference:e}").unwrap();
    }
    for ((name, reference), value) in REFERENCE_PI.iter().zip([r.pi.pi1, r.pi.pi2, r.pi.pi3]) {
        writeln!(derived, "{name},{value:e},{reference:e}").unwrap();
    }
    fs::write(out.join("derived.csv"), derived)?;

    let mut regimes = String::from("alpha,symbol,name,value,assigned_power,implied_power,prefactor,consistent\n");
    for report in &r.regimes {
        for row in report.rows.iter().chain(&report.dry_limit) {
            let implied = row.implied_power.map(|p| p.to_string()).unwrap_or_default();
            writeln!(
                regimes,
                "{},{},\"{}\",{:e},{},{},{:e},{}",
                report.regime.alpha(),
                row.symbol,
                row.name,
                row.value,
                row.assigned_power,
                implied,
                row.prefactor,
                row.consistent
            )
            .unwrap();
        }
    }
    fs::write(out.join("prefactors.csv"), regimes)?;

    let mut curve = String::from("t,e_s,latent_heat\n");
    for (t, es, l) in &r.saturation_curve {
        writeln!(curve, "{t},{es:e},{l:e}").unwrap();
    }
    fs::write(out.join("saturation.csv"), curve)?;
    summary.write(out)
}

// --------------------------------------------------------- relaxation-study

/// Integration window of the relaxation study, in units of the unit rates.
pub const RELAXATION_T_END: f64 = 1.0e-5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RelaxationRow {
    pub n: u32,
    pub end: MoistureCell,
    pub error: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RelaxationResults {
    pub epsilon: f64,
    pub t_end: f64,
    pub rows: Vec<RelaxationRow>,
    pub monotone: bool,
    #[serde(skip)]
    pub trajectories: Vec<crate::microphysics::RelaxationTrajectory>,
}

/// Relaxes the standard supersaturated cell for each exponent n and compares
/// the end state with saturation adjustment.
pub fn relaxation_study(ns: &[u32], epsilon: f64, t_end: f64) -> Result<Summary<RelaxationResults>> {
    let started = Instant::now();
    let initial = MoistureCell::standard_supersaturated();
    let mut rows = Vec::new();
    let mut trajectories = Vec::new();
    for &n in ns {
        let mp = MicrophysicsParams {
            n,
            epsilon,
            ..MicrophysicsParams::relaxation_reference()
        };
        let traj = column_relaxation(&initial, &mp, t_end)?;
        rows.push(RelaxationRow {
            n,
            end: traj.end(),
            error: traj.end_error(),
            steps: traj.times.len() - 1,
        });
        trajectories.push(traj);
    }
    let monotone = rows.windows(2).all(|w| w[1].error < w[0].error);
    let mut checks = vec![Check::flag("error decreases with n", monotone)];
    if let Some(last) = rows.last() {
        checks.push(Check::below(format!("error at n = {}", last.n), last.error, 1.0e-3));
    }
    Ok(Summary::new(
        "relaxation-study",
        started,
        checks,
        RelaxationResults {
            epsilon,
            t_end,
            rows,
            monotone,
            trajectories,
        },
    ))
}

pub fn write_relaxation(summary: &Summary<RelaxationResults>, out: &Path) -> Result<()> {
    ensure_dir(out)?;
    let r = &summary.results;
    let mut errors = String::from("n,q_v,q_c,q_r,error\n");
    for (row, traj) in r.rows.iter().zip(&r.trajectories) {
        writeln!(errors, "{},{:e},{:e},{:e},{:e}", row.n, row.end.q_v, row.end.q_c, row.end.q_r, row.error).unwrap();
        let mut csv = String::from("t,q_v,q_c,q_r\n");
        for (t, c) in traj.times.iter().zip(&traj.states) {
            writeln!(csv, "{t:e},{:e},{:e},{:e}", c.q_v, c.q_c, c.q_r).unwrap();
        }
        fs::write(out.join(format!("trajectory_n{}.csv", row.n)), csv)?;
    }
    fs::write(out.join("errors.csv"), errors)?;
    summary.write(out)
}

// --------------------------------------------------------- inversion-verify

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub nz: usize,
    pub error: f64,
    /// log2 of the error ratio to the previous (coarser) row.
    pub order: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InversionResults {
    pub matched_mode_error: f64,
    pub convergence: Vec<ConvergenceRow>,
}

const VERIFY_H: f64 = 1.0e4;
const VERIFY_L: f64 = 4.0e6;

fn verify_inverter(nx: usize, nz: usize, family: ProfileFamily, tp: &ThermoParams) -> Result<Inverter> {
    let grid = Grid::new(nx, nx, nz, VERIFY_L, VERIFY_L, VERIFY_H);
    let cfg = BackgroundConfig {
        family,
        ..Default::default()
    };
    let bg = build_background(&cfg, nz, VERIFY_H, tp)?;
    Inverter::new(grid, bg, tp, LidConditions::default())
}

/// Horizontal pattern cos(2πx/L) cos(4πy/L) and its K².
fn pattern(grid: &Grid) -> (Array3<f64>, f64) {
    let (kx, ky) = (2.0 * std::f64::consts::PI / grid.lx, 4.0 * std::f64::consts::PI / grid.ly);
    let s = Array3::from_shape_fn((1, grid.ny, grid.nx), |(_, j, i)| (kx * grid.x(i)).cos() * (ky * grid.y(j)).cos());
    (s, kx * kx + ky * ky)
}

fn relative_max_error(a: &Array3<f64>, b: &Array3<f64>) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

/// φ = S(x, y) cos(πz/H) against the discrete vertical eigenvalue on a
/// constant-density column. Exact up to round-off.
pub fn matched_mode_error(nx: usize, nz: usize, tp: &ThermoParams) -> Result<f64> {
    let inv = verify_inverter(nx, nz, ProfileFamily::Boussinesq, tp)?;
    let g = *inv.grid();
    let n2 = inv.background().n2.centers[0];
    let (s, k2) = pattern(&g);
    let dz = g.dz();
    let lambda = -(4.0 / (dz * dz)) * (std::f64::consts::PI * dz / (2.0 * g.h)).sin().powi(2);
    let vertical = |k: usize| (std::f64::consts::PI * (k as f64 + 0.5) * dz / g.h).cos();
    let phi = Array3::from_shape_fn(g.shape(), |(k, j, i)| s[[0, j, i]] * vertical(k));
    let symbol = -k2 / tp.f + tp.f / n2 * lambda;
    let q = phi.mapv(|p| p * symbol);
    Ok(relative_max_error(&inv.invert_dry(&q)?, &phi))
}

/// Recovers φ = S cos(πz/H) from its continuous PV on the exponential-density
/// background at one vertical resolution.
pub fn variable_density_error(nx: usize, nz: usize, tp: &ThermoParams) -> Result<f64> {
    let inv = verify_inverter(nx, nz, ProfileFamily::Exponential, tp)?;
    let g = *inv.grid();
    let bg = inv.background();
    let n2 = bg.n2.centers[0];
    if bg.n2.centers.iter().chain(&bg.n2.faces).any(|&v| (v - n2).abs() > 1e-12 * n2) {
        return Err(Error::config("background", "verification needs constant N²"));
    }
    // ρ̄ = ρ0 exp(-z/h_ρ): recover h_ρ from the profile.
    let h_rho = bg.dz / (bg.rho.centers[0] / bg.rho.centers[1]).ln();
    let (s, k2) = pattern(&g);
    let pi_h = std::f64::consts::PI / g.h;
    let z = |k: usize| (k as f64 + 0.5) * g.dz();
    let phi = Array3::from_shape_fn(g.shape(), |(k, j, i)| s[[0, j, i]] * (pi_h * z(k)).cos());
    let q = Array3::from_shape_fn(g.shape(), |(k, j, i)| {
        let c = (pi_h * z(k)).cos();
        let sn = (pi_h * z(k)).sin();
        s[[0, j, i]] * (c * (-k2 / tp.f - tp.f / n2 * pi_h * pi_h) + tp.f / n2 * pi_h / h_rho * sn)
    });
    Ok(relative_max_error(&inv.invert_dry(&q)?, &phi))
}

pub fn inversion_verify(nx: usize, resolutions: &[usize], tp: &ThermoParams) -> Result<Summary<InversionResults>> {
    let started = Instant::now();
    let matched = matched_mode_error(nx, resolutions.first().copied().unwrap_or(16), tp)?;
    let mut convergence: Vec<ConvergenceRow> = Vec::new();
    for &nz in resolutions {
        let error = variable_density_error(nx, nz, tp)?;
        let order = convergence
            .last()
            .map(|prev| (prev.error / error).ln() / (nz as f64 / prev.nz as f64).ln());
        info!("inversion-verify nz={nz} error={error:.3e} order={order:?}");
        convergence.push(ConvergenceRow { nz, error, order });
    }
    let mut checks = vec![Check::below("matched-mode relative error", matched, 1.0e-10)];
    for row in &convergence {
        if let Some(order) = row.order {
            checks.push(Check::relative(format!("vertical order at nz = {}", row.nz), order, 2.0, 0.1));
        }
    }
    Ok(Summary::new(
        "inversion-verify",
        started,
        checks,
        InversionResults {
            matched_mode_error: matched,
            convergence,
        },
    ))
}

pub fn write_inversion(summary: &Summary<InversionResults>, out: &Path) -> Result<()> {
    ensure_dir(out)?;
    let mut csv = String::from("nz,error,order\n");
    for row in &summary.results.convergence {
        let order = row.order.map(|o| o.to_string()).unwrap_or_default();
        writeln!(csv, "{},{:e},{order}", row.nz, row.error).unwrap();
    }
    fs::write(out.join("convergence.csv"), csv)?;
    summary.write(out)
}

// ---------------------------------------------------------------------- run

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunResults {
    pub steps: usize,
    pub frames: Vec<PathBuf>,
    pub initial_pv_mean: f64,
    pub final_pv_mean: f64,
    pub total_water: f64,
    pub clipped_mass: f64,
    pub min_cloud_water: f64,
    pub min_rain_water: f64,
}

#[derive(Debug, Serialize)]
struct FailureRecord<'a> {
    experiment: &'static str,
    step: usize,
    time: f64,
    error: String,
    config: &'a RunConfig,
}

/// Integrates the model, writing `frame_NNNNN.pqgf` every `output_every`
/// steps (and at the start), `diagnostics.csv` and `summary.json`. On a
/// numerical failure a `failure.json` is left behind and the error returned.
pub fn run(cfg: &RunConfig, out: &Path) -> Result<Summary<RunResults>> {
    let started = Instant::now();
    ensure_dir(out)?;
    let model = cfg.build_model()?;
    let steps = cfg.dynamics.steps()?;
    let mut state = initial_state(&model, &cfg.dynamics.initial, cfg.dynamics.seed)?;
    let mut csv = ScalarDiagnostics::COLUMNS.join(",") + "\n";
    let mut frames = Vec::new();
    let mut clipped = 0.0;
    let mut mask = None;
    let (mut min_qc, mut min_qr) = (f64::INFINITY, f64::INFINITY);
    let mut initial_pv = None;
    let mut water = 0.0;
    let mut step = 0;

    let mut emit = |step: usize, state: &crate::dynamics::PrognosticState, clipped: f64| -> Result<f64> {
        let mut d = model.close_diagnostics(state)?;
        let tend = model.tendencies(state, &d)?;
        d.w = Some(model.vertical_velocity(&d, &tend)?);
        let row = model.scalar_diagnostics(step, state, &d, clipped);
        info!("output step={step} t={:.0} saturated={:.3}", row.time, row.saturated_fraction);
        csv.push_str(&row.csv_row());
        csv.push('\n');
        min_qc = min_qc.min(d.q_c.iter().copied().fold(f64::INFINITY, f64::min));
        min_qr = min_qr.min(d.q_r.iter().copied().fold(f64::INFINITY, f64::min));
        water = model.total_water(&d);
        let path = out.join(format!("frame_{step:05}.pqgf"));
        write_frame(&Frame::from_state(state, &d), &path)?;
        frames.push(path);
        Ok(row.pv_mean)
    };

    let mut outcome = emit(0, &state, 0.0).map(|pv| initial_pv = Some(pv));
    let mut final_pv = initial_pv.unwrap_or(f64::NAN);
    while outcome.is_ok() && step < steps {
        outcome = model.step_from(&state, cfg.dynamics.dt, mask.as_ref()).and_then(|o| {
            step += 1;
            state = o.state;
            mask = o.mask;
            clipped += o.clipped_mass;
            if step % cfg.dynamics.output_every == 0 || step == steps {
                final_pv = emit(step, &state, clipped)?;
            }
            Ok(())
        });
    }
    fs::write(out.join("diagnostics.csv"), &csv)?;
    if let Err(e) = outcome {
        let record = FailureRecord {
            experiment: "run",
            step,
            time: state.t,
            error: e.to_string(),
            config: cfg,
        };
        let text = serde_json::to_string_pretty(&record).map_err(|e| Error::Format(e.to_string()))?;
        fs::write(out.join("failure.json"), text)?;
        return Err(e);
    }

    let initial_pv_mean = initial_pv.unwrap_or(f64::NAN);
    let drift = ((final_pv - initial_pv_mean) / initial_pv_mean).abs();
    let checks = vec![
        Check::below("relative drift of mean PV", drift, 1.0e-8),
        Check::flag("cloud and rain water non-negative", min_qc >= 0.0 && min_qr >= 0.0),
        Check::below("clipped mass / total water", clipped / water, 1.0e-6),
    ];
    let summary = Summary::new(
        "run",
        started,
        checks,
        RunResults {
            steps,
            frames,
            initial_pv_mean,
            final_pv_mean: final_pv,
            total_water: water,
            clipped_mass: clipped,
            min_cloud_water: min_qc,
            min_rain_water: min_qr,
        },
    );
    summary.write(out)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matched_mode_is_exact() {
        let e = matched_mode_error(16, 8, &ThermoParams::default()).unwrap();
        assert!(e < 1e-10, "{e}");
    }

    #[test]
    fn variable_density_converges() {
        let tp = ThermoParams::default();
        let coarse = variable_density_error(8, 8, &tp).unwrap();
        let fine = variable_density_error(8, 16, &tp).unwrap();
        let order = (coarse / fine).log2();
        assert!((order - 2.0).abs() < 0.3, "{order}");
    }

    #[test]
    fn relaxation_error_shrinks() {
        let s = relaxation_study(&[1, 3], 0.1, RELAXATION_T_END).unwrap();
        assert!(s.results.rows[1].error < s.results.rows[0].error);
    }

    #[test]
    fn check_tolerances() {
        assert!(Check::relative("x", 1.04, 1.0, 0.05).passed);
        assert!(!Check::relative("x", 1.06, 1.0, 0.05).passed);
        assert!(!Check::below("x", 1.0, 1.0).passed);
    }
}
