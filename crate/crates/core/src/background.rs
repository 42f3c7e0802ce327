//! Vertical background state and the stability coefficients derived from it.
//!
//! The column `[0, H]` is split into `nz` uniform cells. Profiles are kept on
//! both the `nz + 1` faces (levels `0..=nz`) and the `nz` cell centres.
//! Face derivatives use second-order centred differences of the face samples
//! with one-sided second-order stencils at the lids; centre derivatives use
//! the two neighbouring faces.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::thermo::ThermoParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProfileFamily {
    /// ρ̄ = ρ_ref exp(-z/h), linear θ̄_e, exponential q̄_vs.
    Exponential,
    /// ρ̄ ≡ ρ_ref, linear θ̄_e and q̄_vs.
    Boussinesq,
    /// Profiles read from two-column text tables.
    Tabulated,
    /// Exponential ρ̄, linear θ̄_e, q̄_vs from Clausius–Clapeyron on a
    /// hydrostatic constant-lapse-rate column.
    ClausiusClapeyron,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableFiles {
    pub rho: PathBuf,
    pub theta_e: PathBuf,
    pub q_vs: PathBuf,
}

/// Background block of the run configuration. Units: K, m, kg kg⁻¹.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackgroundConfig {
    pub family: ProfileFamily,
    /// θ̄_e at z = 0 [K]; defaults to θ_ref.
    pub theta_e_surface: Option<f64>,
    /// dθ̄_e/dz [K m⁻¹].
    pub theta_e_gradient: f64,
    /// q̄_vs at z = 0.
    pub q_vs_surface: f64,
    /// e-folding height of q̄_vs for the exponential family [m].
    pub q_vs_scale_height: f64,
    /// Decrease of q̄_vs per metre for the Boussinesq family [m⁻¹].
    pub q_vs_lapse: f64,
    /// Density scale height [m]; defaults to h_sc.
    pub density_scale_height: Option<f64>,
    /// Column used by the Clausius–Clapeyron family and the consistency check.
    pub column: CcColumn,
    pub tables: Option<TableFiles>,
    /// Fixed ∂q̃_vs/∂θ̃ [K⁻¹]. When absent it is q̄_vs L_ref / (R_v T_ref²).
    pub qvs_theta: Option<f64>,
}

impl Default for BackgroundConfig {
    fn default() -> Self {
        BackgroundConfig {
            family: ProfileFamily::Exponential,
            theta_e_surface: None,
            theta_e_gradient: 3.0e-3,
            q_vs_surface: 0.008,
            q_vs_scale_height: 2500.0,
            q_vs_lapse: 0.0,
            density_scale_height: None,
            column: CcColumn::default(),
            tables: None,
            qvs_theta: None,
        }
    }
}

/// Hydrostatic column with constant temperature lapse rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CcColumn {
    pub t_surface: f64,
    /// [K m⁻¹]
    pub lapse_rate: f64,
}

impl Default for CcColumn {
    fn default() -> Self {
        CcColumn {
            t_surface: 288.15,
            lapse_rate: 6.5e-3,
        }
    }
}

impl CcColumn {
    pub fn temperature(&self, z: f64) -> f64 {
        self.t_surface - self.lapse_rate * z
    }

    pub fn pressure(&self, z: f64, tp: &ThermoParams) -> f64 {
        if self.lapse_rate == 0.0 {
            tp.p_ref * (-tp.g * z / (tp.r_d * self.t_surface)).exp()
        } else {
            tp.p_ref * (self.temperature(z) / self.t_surface).powf(tp.g / (tp.r_d * self.lapse_rate))
        }
    }

    pub fn q_vs(&self, z: f64, tp: &ThermoParams) -> Result<f64> {
        tp.saturation_mixing_ratio(self.pressure(z, tp), self.temperature(z))
    }
}

/// Values of one profile on faces and centres.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Staggered {
    pub faces: Vec<f64>,
    pub centers: Vec<f64>,
}

impl Staggered {
    fn from_fn(nz: usize, dz: f64, mut f: impl FnMut(f64) -> f64) -> Self {
        Staggered {
            faces: (0..=nz).map(|k| f(k as f64 * dz)).collect(),
            centers: (0..nz).map(|k| f((k as f64 + 0.5) * dz)).collect(),
        }
    }

    fn map2(&self, other: &Staggered, f: impl Fn(f64, f64) -> f64) -> Staggered {
        Staggered {
            faces: self.faces.iter().zip(&other.faces).map(|(&a, &b)| f(a, b)).collect(),
            centers: self.centers.iter().zip(&other.centers).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    fn derivative(&self, dz: f64) -> Staggered {
        let v = &self.faces;
        let n = v.len();
        let mut faces = vec![0.0; n];
        faces[0] = (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * dz);
        faces[n - 1] = (3.0 * v[n - 1] - 4.0 * v[n - 2] + v[n - 3]) / (2.0 * dz);
        for k in 1..n - 1 {
            faces[k] = (v[k + 1] - v[k - 1]) / (2.0 * dz);
        }
        let centers = v.windows(2).map(|w| (w[1] - w[0]) / dz).collect();
        Staggered { faces, centers }
    }

    fn all(&self, pred: impl Fn(f64) -> bool) -> Option<usize> {
        self.faces.iter().chain(&self.centers).position(|&x| !pred(x))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BackgroundState {
    pub nz: usize,
    pub h: f64,
    pub dz: f64,
    /// L_ref / c_pd [K].
    pub latent: f64,
    pub z: Staggered,
    pub rho: Staggered,
    pub theta_e: Staggered,
    pub q_vs: Staggered,
    pub dtheta_e_dz: Staggered,
    pub dq_vs_dz: Staggered,
    /// g (dθ̄_e/dz) / θ_ref.
    pub n2: Staggered,
    /// B / (L + B), evaluated as θ̄_e' / (θ̄_e' - L q̄_vs').
    pub c1: Staggered,
    /// L / (L + B).
    pub c2: Staggered,
    /// ∂q̃_vs/∂θ̃.
    pub qvs_theta: Staggered,
}

/// Two-column (z, value) table, sorted by z.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table(pub Vec<(f64, f64)>);

impl Table {
    pub fn parse(text: &str, key: &str) -> Result<Table> {
        let mut rows = Vec::new();
        for (line_no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut cols = line.split(|c: char| c.is_whitespace() || c == ',').filter(|s| !s.is_empty());
            let parse = |s: Option<&str>| -> Result<f64> {
                s.and_then(|s| s.parse::<f64>().ok()).ok_or_else(|| {
                    Error::config(key, format!("line {}: expected two numeric columns", line_no + 1))
                })
            };
            let z = parse(cols.next())?;
            let v = parse(cols.next())?;
            rows.push((z, v));
        }
        if rows.len() < 2 {
            return Err(Error::config(key, "table needs at least two rows"));
        }
        if rows.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::config(key, "heights must be strictly increasing"));
        }
        Ok(Table(rows))
    }

    pub fn read(path: &Path, key: &str) -> Result<Table> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(key, format!("cannot read {}: {e}", path.display())))?;
        Table::parse(&text, key)
    }

    /// Piecewise-linear interpolation; extrapolates linearly past the ends.
    pub fn eval(&self, z: f64) -> f64 {
        let rows = &self.0;
        let i = match rows.iter().position(|&(zi, _)| zi > z) {
            Some(0) => 0,
            Some(i) => i - 1,
            None => rows.len() - 2,
        }
        .min(rows.len() - 2);
        let (z0, v0) = rows[i];
        let (z1, v1) = rows[i + 1];
        v0 + (v1 - v0) * (z - z0) / (z1 - z0)
    }
}

/// In-memory profile tables for the tabulated family.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileTables {
    pub rho: Table,
    pub theta_e: Table,
    pub q_vs: Table,
}

pub fn build_background(config: &BackgroundConfig, nz: usize, h: f64, tp: &ThermoParams) -> Result<BackgroundState> {
    let tables = match (config.family, &config.tables) {
        (ProfileFamily::Tabulated, Some(files)) => Some(ProfileTables {
            rho: Table::read(&files.rho, "background.tables.rho")?,
            theta_e: Table::read(&files.theta_e, "background.tables.theta_e")?,
            q_vs: Table::read(&files.q_vs, "background.tables.q_vs")?,
        }),
        (ProfileFamily::Tabulated, None) => {
            return Err(Error::config("background.tables", "tabulated family needs rho, theta_e and q_vs files"))
        }
        _ => None,
    };
    build_background_with(config, tables.as_ref(), nz, h, tp)
}

/// As [`build_background`], with tabulated profiles supplied directly.
pub fn build_background_with(
    config: &BackgroundConfig,
    tables: Option<&ProfileTables>,
    nz: usize,
    h: f64,
    tp: &ThermoParams,
) -> Result<BackgroundState> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::config("grid.h", "column height must be positive"));
    }
    if nz < 4 {
        return Err(Error::config("grid.nz", format!("need at least 4 levels, got {nz}")));
    }
    let dz = h / nz as f64;
    let theta_0 = config.theta_e_surface.unwrap_or(tp.theta_ref);
    let gradient = config.theta_e_gradient;
    let rho_ref = tp.derived_quantities().rho_ref;
    let h_rho = config
        .density_scale_height
        .unwrap_or_else(|| tp.derived_quantities().h_sc);
    if !(h_rho > 0.0) {
        return Err(Error::config("background.density_scale_height", "must be positive"));
    }

    let z = Staggered::from_fn(nz, dz, |z| z);
    let (rho, theta_e, q_vs) = match config.family {
        ProfileFamily::Exponential => {
            if !(config.q_vs_scale_height > 0.0) {
                return Err(Error::config("background.q_vs_scale_height", "must be positive"));
            }
            (
                Staggered::from_fn(nz, dz, |z| rho_ref * (-z / h_rho).exp()),
                Staggered::from_fn(nz, dz, |z| theta_0 + gradient * z),
                Staggered::from_fn(nz, dz, |z| config.q_vs_surface * (-z / config.q_vs_scale_height).exp()),
            )
        }
        ProfileFamily::Boussinesq => (
            Staggered::from_fn(nz, dz, |_| rho_ref),
            Staggered::from_fn(nz, dz, |z| theta_0 + gradient * z),
            Staggered::from_fn(nz, dz, |z| config.q_vs_surface - config.q_vs_lapse * z),
        ),
        ProfileFamily::ClausiusClapeyron => {
            let column = config.column;
            let mut failure = None;
            let q = Staggered::from_fn(nz, dz, |z| match column.q_vs(z, tp) {
                Ok(q) => q,
                Err(e) => {
                    failure.get_or_insert(e);
                    f64::NAN
                }
            });
            if let Some(e) = failure {
                return Err(Error::config("background.column", e.to_string()));
            }
            (
                Staggered::from_fn(nz, dz, |z| rho_ref * (-z / h_rho).exp()),
                Staggered::from_fn(nz, dz, |z| theta_0 + gradient * z),
                q,
            )
        }
        ProfileFamily::Tabulated => {
            let t = tables.ok_or_else(|| Error::config("background.tables", "tabulated family needs tables"))?;
            (
                Staggered::from_fn(nz, dz, |z| t.rho.eval(z)),
                Staggered::from_fn(nz, dz, |z| t.theta_e.eval(z)),
                Staggered::from_fn(nz, dz, |z| t.q_vs.eval(z)),
            )
        }
    };

    let dtheta_e_dz = theta_e.derivative(dz);
    let dq_vs_dz = q_vs.derivative(dz);
    let latent = tp.latent_coefficient();

    if let Some(i) = rho.all(|r| r > 0.0 && r.is_finite()) {
        return Err(Error::config("background", format!("density must be positive (sample {i})")));
    }
    if let Some(i) = dtheta_e_dz.all(|d| d > 0.0 && d.is_finite()) {
        return Err(Error::config(
            "background.theta_e_gradient",
            format!("stability invariant violated: dθ̄_e/dz must be > 0 everywhere (sample {i})"),
        ));
    }
    if let Some(i) = dq_vs_dz.all(|d| d <= 0.0) {
        return Err(Error::config(
            "background.q_vs",
            format!("dq̄_vs/dz must be <= 0 everywhere (sample {i})"),
        ));
    }
    if let Some(i) = q_vs.all(|q| q >= 0.0 && q.is_finite()) {
        return Err(Error::config("background.q_vs", format!("q̄_vs must be non-negative (sample {i})")));
    }

    let n2 = dtheta_e_dz.map2(&dtheta_e_dz, |d, _| tp.g * d / tp.theta_ref);
    let c1 = dtheta_e_dz.map2(&dq_vs_dz, |dt, dq| dt / (dt - latent * dq));
    let c2 = dtheta_e_dz.map2(&dq_vs_dz, |dt, dq| -latent * dq / (dt - latent * dq));
    let qvs_theta = match config.qvs_theta {
        Some(c) => {
            if !(c >= 0.0 && c.is_finite()) {
                return Err(Error::config("background.qvs_theta", "must be finite and >= 0"));
            }
            q_vs.map2(&q_vs, |_, _| c)
        }
        None => {
            let factor = tp.l_ref / (tp.r_v * tp.t_ref * tp.t_ref);
            q_vs.map2(&q_vs, |q, _| q * factor)
        }
    };

    Ok(BackgroundState {
        nz,
        h,
        dz,
        latent,
        z,
        rho,
        theta_e,
        q_vs,
        dtheta_e_dz,
        dq_vs_dz,
        n2,
        c1,
        c2,
        qvs_theta,
    })
}

impl BackgroundState {
    /// Moist stability ratio B = -θ̄_e'/q̄_vs' at cell `k`; `None` where the
    /// column is locally dry and B is unbounded.
    pub fn b_center(&self, k: usize) -> Option<f64> {
        let dq = self.dq_vs_dz.centers[k];
        (dq < 0.0).then(|| -self.dtheta_e_dz.centers[k] / dq)
    }

    /// 1 / (L + B) at cell `k`, zero in dry cells.
    pub fn vapor_factor(&self, k: usize) -> f64 {
        self.c2.centers[k] / self.latent
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConsistencyReport {
    pub max_relative_deviation: f64,
    /// Height of the largest deviation [m].
    pub at_height: f64,
    pub warning: bool,
}

/// Relative deviation above which the check raises its warning flag.
pub const CONSISTENCY_WARNING: f64 = 0.25;

/// Compares q̄_vs with Clausius–Clapeyron evaluated on a hydrostatic column.
pub fn consistency_check(bg: &BackgroundState, tp: &ThermoParams, column: &CcColumn) -> Result<ConsistencyReport> {
    let mut worst = (0.0f64, 0.0);
    for (&z, &q) in bg.z.faces.iter().zip(&bg.q_vs.faces) {
        let reference = column.q_vs(z, tp)?;
        let dev = ((q - reference) / reference).abs();
        if dev > worst.0 {
            worst = (dev, z);
        }
    }
    Ok(ConsistencyReport {
        max_relative_deviation: worst.0,
        at_height: worst.1,
        warning: worst.0 > CONSISTENCY_WARNING,
    })
}

/// Exponential (q0, scale height) approximating the Clausius–Clapeyron column
/// on `[0, h]`, minimising the largest relative deviation.
pub fn fit_exponential(column: &CcColumn, h: f64, tp: &ThermoParams) -> Result<(f64, f64)> {
    let samples: Vec<(f64, f64)> = (0..=200)
        .map(|i| {
            let z = h * i as f64 / 200.0;
            column.q_vs(z, tp).map(|q| (z, q.ln()))
        })
        .collect::<Result<_>>()?;
    // For fixed scale height the best log-offset centres the residual band.
    let band = |scale: f64| {
        let (lo, hi) = samples.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(z, lq)| {
            let r = lq + z / scale;
            (lo.min(r), hi.max(r))
        });
        (hi - lo, 0.5 * (hi + lo))
    };
    let (mut a, mut b) = (0.05 * h, 5.0 * h);
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..200 {
        let x1 = b - phi * (b - a);
        let x2 = a + phi * (b - a);
        if band(x1).0 < band(x2).0 {
            b = x2;
        } else {
            a = x1;
        }
    }
    let scale = 0.5 * (a + b);
    Ok((band(scale).1.exp(), scale))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn tp() -> ThermoParams {
        ThermoParams::default()
    }

    #[test]
    fn balanced_boussinesq_column_splits_evenly() {
        let tp = tp();
        let gradient = 3.0e-3;
        let cfg = BackgroundConfig {
            family: ProfileFamily::Boussinesq,
            theta_e_gradient: gradient,
            q_vs_surface: 0.02,
            q_vs_lapse: gradient / tp.latent_coefficient(),
            ..Default::default()
        };
        let bg = build_background(&cfg, 8, 1.0e4, &tp).unwrap();
        for k in 0..8 {
            assert_relative_eq!(bg.b_center(k).unwrap(), bg.latent, max_relative = 1e-12);
            assert_relative_eq!(bg.c1.centers[k], 0.5, max_relative = 1e-12);
            assert_relative_eq!(bg.c2.centers[k], 0.5, max_relative = 1e-12);
        }
    }

    #[test]
    fn dry_column_reduces_to_unit_coefficient() {
        let cfg = BackgroundConfig {
            family: ProfileFamily::Boussinesq,
            q_vs_lapse: 0.0,
            ..Default::default()
        };
        let bg = build_background(&cfg, 6, 1.0e4, &tp()).unwrap();
        assert!(bg.c1.faces.iter().chain(&bg.c1.centers).all(|&c| c == 1.0));
        assert!(bg.c2.faces.iter().chain(&bg.c2.centers).all(|&c| c == 0.0));
        assert!(bg.b_center(2).is_none());
        assert_eq!(bg.vapor_factor(2), 0.0);
    }

    #[test]
    fn exponential_density_at_surface() {
        let tp = tp();
        let bg = build_background(&BackgroundConfig::default(), 10, 1.0e4, &tp).unwrap();
        assert_eq!(bg.rho.faces[0], tp.derived_quantities().rho_ref);
    }

    #[test]
    fn unstable_profile_rejected() {
        let cfg = BackgroundConfig {
            theta_e_gradient: -1.0e-3,
            ..Default::default()
        };
        let err = build_background(&cfg, 8, 1.0e4, &tp()).unwrap_err();
        assert!(err.is_config());
        assert!(err.to_string().contains("stability"));
    }

    #[test]
    fn moistening_with_height_rejected() {
        let cfg = BackgroundConfig {
            family: ProfileFamily::Boussinesq,
            q_vs_lapse: -1.0e-7,
            ..Default::default()
        };
        assert!(build_background(&cfg, 8, 1.0e4, &tp()).is_err());
    }

    #[test]
    fn coefficient_invariants() {
        let bg = build_background(&BackgroundConfig::default(), 16, 1.0e4, &tp()).unwrap();
        for (c1, c2) in bg.c1.faces.iter().zip(&bg.c2.faces).chain(bg.c1.centers.iter().zip(&bg.c2.centers)) {
            assert!(*c1 > 0.0 && *c1 <= 1.0);
            assert!(*c2 >= 0.0 && *c2 < 1.0);
            assert!((c1 + c2 - 1.0).abs() <= 2.0 * f64::EPSILON);
        }
        for k in 0..16 {
            let b = bg.b_center(k).unwrap();
            assert_relative_eq!(b * bg.dq_vs_dz.centers[k], -bg.dtheta_e_dz.centers[k], max_relative = 1e-14);
        }
    }

    #[test]
    fn rebuild_is_bit_identical() {
        let a = build_background(&BackgroundConfig::default(), 12, 9.0e3, &tp()).unwrap();
        let b = build_background(&BackgroundConfig::default(), 12, 9.0e3, &tp()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn tabulated_profiles_and_derivatives() {
        let tp = tp();
        let rows = |f: &dyn Fn(f64) -> f64| Table((0..=20).map(|i| (i as f64 * 500.0, f(i as f64 * 500.0))).collect());
        let tables = ProfileTables {
            rho: rows(&|z| 1.2 - 5e-5 * z),
            theta_e: rows(&|z| 280.0 + 4e-3 * z),
            q_vs: rows(&|z| 0.01 - 5e-7 * z),
        };
        let cfg = BackgroundConfig {
            family: ProfileFamily::Tabulated,
            ..Default::default()
        };
        let bg = build_background_with(&cfg, Some(&tables), 8, 8.0e3, &tp).unwrap();
        for &d in bg.dtheta_e_dz.faces.iter().chain(&bg.dtheta_e_dz.centers) {
            assert_relative_eq!(d, 4e-3, max_relative = 1e-10);
        }
        for &d in &bg.dq_vs_dz.faces {
            assert_relative_eq!(d, -5e-7, max_relative = 1e-8);
        }
    }

    #[test]
    fn one_sided_derivative_is_second_order() {
        let tp = tp();
        let quad = |z: f64| 280.0 + 1e-3 * z + 1e-7 * z * z;
        let tables = ProfileTables {
            rho: Table(vec![(0.0, 1.0), (1.0e4, 1.0)]),
            theta_e: Table((0..=4000).map(|i| (i as f64 * 2.5, quad(i as f64 * 2.5))).collect()),
            q_vs: Table(vec![(0.0, 0.0), (1.0e4, 0.0)]),
        };
        let cfg = BackgroundConfig {
            family: ProfileFamily::Tabulated,
            ..Default::default()
        };
        let bg = build_background_with(&cfg, Some(&tables), 10, 1.0e4, &tp).unwrap();
        // exact for quadratics up to interpolation error of the table
        assert_relative_eq!(bg.dtheta_e_dz.faces[0], 1e-3, max_relative = 1e-6);
        assert_relative_eq!(bg.dtheta_e_dz.faces[10], 1e-3 + 2e-7 * 1e4, max_relative = 1e-6);
    }

    #[test]
    fn table_parsing() {
        let t = Table::parse("# z value\n0 1.0\n100, 2.0\n\n200 4.0\n", "x").unwrap();
        assert_eq!(t.eval(50.0), 1.5);
        assert_eq!(t.eval(300.0), 6.0);
        assert!(Table::parse("0 1\n0 2\n", "x").is_err());
        assert!(Table::parse("0 a\n1 2\n", "x").unwrap_err().to_string().contains("line 1"));
    }

    #[test]
    fn consistency_against_clausius_clapeyron() {
        let tp = tp();
        let column = CcColumn::default();
        let cc = BackgroundConfig {
            family: ProfileFamily::ClausiusClapeyron,
            column,
            ..Default::default()
        };
        let bg = build_background(&cc, 20, 1.0e4, &tp).unwrap();
        let same = consistency_check(&bg, &tp, &column).unwrap();
        assert_eq!(same.max_relative_deviation, 0.0);
        assert!(!same.warning);

        let (q0, scale) = fit_exponential(&column, 1.0e4, &tp).unwrap();
        let fitted = BackgroundConfig {
            q_vs_surface: q0,
            q_vs_scale_height: scale,
            ..Default::default()
        };
        let bg = build_background(&fitted, 20, 1.0e4, &tp).unwrap();
        let report = consistency_check(&bg, &tp, &column).unwrap();
        assert!(report.max_relative_deviation < 0.2, "{report:?}");
        assert!(!report.warning);

        let flat = BackgroundConfig {
            family: ProfileFamily::Boussinesq,
            q_vs_surface: q0,
            q_vs_lapse: 0.0,
            ..Default::default()
        };
        let bg = build_background(&flat, 20, 1.0e4, &tp).unwrap();
        let report = consistency_check(&bg, &tp, &column).unwrap();
        assert!(report.max_relative_deviation > 1.0);
        assert!(report.warning);
    }
}
