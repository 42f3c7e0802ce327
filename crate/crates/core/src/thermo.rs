//! Thermodynamic constants of moist air, the Clausius–Clapeyron relation and
//! the two moist distinguished-limit regimes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Temperatures accepted by the latent-heat and saturation formulas [K].
pub const T_MIN: f64 = 150.0;
pub const T_MAX: f64 = 350.0;

/// Scale-separation parameter at which regime prefactors are fitted.
pub const REFERENCE_EPSILON: f64 = 0.1;

/// Dimensional constants of a cloudy, ice-free atmosphere (SI units).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThermoParams {
    /// Gas constant of dry air [J kg⁻¹ K⁻¹].
    pub r_d: f64,
    /// Gas constant of water vapour [J kg⁻¹ K⁻¹].
    pub r_v: f64,
    pub c_pd: f64,
    pub c_pv: f64,
    pub c_l: f64,
    /// Vaporisation enthalpy at `t_ref` [J kg⁻¹].
    pub l_ref: f64,
    pub t_ref: f64,
    /// Sea-level pressure [Pa].
    pub p_ref: f64,
    /// Saturation vapour pressure at `t_ref` [Pa].
    pub es_ref: f64,
    pub g: f64,
    /// Planetary radius [m].
    pub a: f64,
    /// Rotation rate [s⁻¹].
    pub omega: f64,
    /// Tropospheric potential-temperature difference [K].
    pub delta_theta: f64,
    /// Coriolis parameter at the reference latitude [s⁻¹].
    pub f: f64,
    /// Meridional Coriolis gradient [m⁻¹ s⁻¹].
    pub beta: f64,
    pub theta_ref: f64,
}

impl Default for ThermoParams {
    fn default() -> Self {
        ThermoParams {
            r_d: 287.0,
            r_v: 462.0,
            c_pd: 1005.0,
            c_pv: 1850.0,
            c_l: 4218.0,
            l_ref: 2.5e6,
            t_ref: 273.15,
            p_ref: 1.0e5,
            es_ref: 611.0,
            g: 9.81,
            a: 6.0e6,
            omega: 1.0e-4,
            delta_theta: 40.0,
            f: 1.0e-4,
            beta: 1.6e-11,
            theta_ref: 273.15,
        }
    }
}

/// Quantities derived from the universal characteristics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DerivedQuantities {
    /// Sea-level air density [kg m⁻³].
    pub rho_ref: f64,
    /// Density scale height [m].
    pub h_sc: f64,
    /// Speed of sound [m s⁻¹].
    pub c_ref: f64,
    /// Internal wave speed [m s⁻¹].
    pub c_int: f64,
    /// Thermal wind velocity [m s⁻¹].
    pub u_ref: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PiParameters {
    pub pi1: f64,
    pub pi2: f64,
    pub pi3: f64,
}

impl ThermoParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("thermo.r_d", self.r_d),
            ("thermo.r_v", self.r_v),
            ("thermo.c_pd", self.c_pd),
            ("thermo.c_pv", self.c_pv),
            ("thermo.c_l", self.c_l),
            ("thermo.l_ref", self.l_ref),
            ("thermo.t_ref", self.t_ref),
            ("thermo.p_ref", self.p_ref),
            ("thermo.es_ref", self.es_ref),
            ("thermo.g", self.g),
            ("thermo.a", self.a),
            ("thermo.omega", self.omega),
            ("thermo.f", self.f),
            ("thermo.beta", self.beta),
            ("thermo.theta_ref", self.theta_ref),
        ];
        for (key, value) in fields {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::config(key, format!("must be finite and positive, got {value}")));
            }
        }
        if !(self.delta_theta.is_finite() && self.delta_theta >= 0.0) {
            return Err(Error::config("thermo.delta_theta", "must be finite and non-negative"));
        }
        if !(self.c_l > self.c_pv && self.c_pv > self.c_pd) {
            return Err(Error::config("thermo.c_l", "heat capacities must satisfy c_l > c_pv > c_pd"));
        }
        if self.r_v <= self.r_d {
            return Err(Error::config("thermo.r_v", "must exceed r_d"));
        }
        if self.es_ref / self.p_ref >= 0.05 {
            return Err(Error::config("thermo.es_ref", "es_ref / p_ref must stay below 0.05"));
        }
        Ok(())
    }

    /// Isentropic exponent of dry air, c_pd / (c_pd - R_d).
    pub fn gamma(&self) -> f64 {
        self.c_pd / (self.c_pd - self.r_d)
    }

    /// L_ref / c_pd [K], the conversion factor between vapour and θ_e.
    pub fn latent_coefficient(&self) -> f64 {
        self.l_ref / self.c_pd
    }

    pub fn derived_quantities(&self) -> DerivedQuantities {
        let gamma = self.gamma();
        let rho_ref = self.p_ref / (self.r_d * self.t_ref);
        let h_sc = gamma * self.p_ref / (self.g * rho_ref);
        let c_ref = (gamma * self.p_ref / rho_ref).sqrt();
        let stratification = self.delta_theta / self.t_ref;
        let c_int = (self.g * h_sc * stratification).sqrt();
        let u_ref = 2.0 / std::f64::consts::PI * self.g * h_sc / (self.omega * self.a) * stratification;
        DerivedQuantities {
            rho_ref,
            h_sc,
            c_ref,
            c_int,
            u_ref,
        }
    }

    pub fn pi_parameters(&self) -> PiParameters {
        let d = self.derived_quantities();
        PiParameters {
            pi1: d.h_sc / self.a,
            pi2: self.delta_theta / self.t_ref,
            pi3: d.c_ref / (self.omega * self.a),
        }
    }

    fn check_temperature(t: f64) -> Result<()> {
        if (T_MIN..=T_MAX).contains(&t) {
            Ok(())
        } else {
            Err(Error::Domain {
                quantity: "temperature",
                value: t,
                min: T_MIN,
                max: T_MAX,
            })
        }
    }

    /// Linearised vaporisation enthalpy L(T) [J kg⁻¹].
    pub fn latent_heat(&self, t: f64) -> Result<f64> {
        Self::check_temperature(t)?;
        Ok(self.l_ref - (self.c_l - self.c_pv) * (t - self.t_ref))
    }

    /// Saturation vapour pressure over liquid water [Pa], from the exact
    /// integral of d ln e_s / dT = L(T) / (R_v T²) with affine L(T).
    pub fn saturation_vapor_pressure(&self, t: f64) -> Result<f64> {
        Self::check_temperature(t)?;
        let power = (self.c_l - self.c_pv) / self.r_v;
        let exponent = (self.l_ref / (self.r_v * self.t_ref) + power) * (t - self.t_ref) / t;
        Ok(self.es_ref * (self.t_ref / t).powf(power) * exponent.exp())
    }

    /// Saturation mixing ratio q_vs = (R_d/R_v) e_s / (p - e_s).
    pub fn saturation_mixing_ratio(&self, p_total: f64, t: f64) -> Result<f64> {
        let e_s = self.saturation_vapor_pressure(t)?;
        if p_total <= e_s {
            return Err(Error::SaturationBreakdown { p_total, e_s });
        }
        Ok(self.r_d / self.r_v * e_s / (p_total - e_s))
    }
}

/// Regime selector for the moist extension of the distinguished limit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Regime {
    /// Formally consistent regime (alpha = 0).
    Consistent,
    /// Value-based regime (alpha = 1).
    ValueBased,
}

impl Regime {
    pub fn from_alpha(alpha: i64) -> Result<Self> {
        match alpha {
            0 => Ok(Regime::Consistent),
            1 => Ok(Regime::ValueBased),
            other => Err(Error::config(
                "regime.alpha",
                format!("regime selector must be 0 or 1, got {other}"),
            )),
        }
    }

    pub fn alpha(self) -> u8 {
        match self {
            Regime::Consistent => 0,
            Regime::ValueBased => 1,
        }
    }
}

/// O(1) prefactors of one regime, each fitted as (physical ratio) / ε^power.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegimeScalings {
    pub regime: Regime,
    pub epsilon: f64,
    pub gamma: f64,
    pub k_v: f64,
    pub k_l: f64,
    pub latent: f64,
    pub e: f64,
    pub a: f64,
    pub kappa_v: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
}

/// One row of the regime table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegimeRow {
    pub name: &'static str,
    pub symbol: &'static str,
    /// Dimensionless physical value.
    pub value: f64,
    /// Power of ε assigned by the regime.
    pub assigned_power: f64,
    /// Power implied by the primary rows, for derived rows only.
    pub implied_power: Option<f64>,
    pub prefactor: f64,
    /// False where the assigned and implied powers disagree.
    pub consistent: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegimeReport {
    pub regime: Regime,
    pub epsilon: f64,
    /// L_ref / (c_pd T_ref).
    pub latent_ratio: f64,
    /// R_d / R_v.
    pub gas_constant_ratio: f64,
    /// (c_pv/c_pd)(R_d/c_pd) - R_v/c_pd.
    pub sigma_coefficient: f64,
    pub rows: Vec<RegimeRow>,
    /// Prefactor implied for e_s,ref / p_ref = O(ε^(1+alpha)); reported only.
    pub es_ref_prefactor: f64,
    pub dry_limit: [RegimeRow; 3],
}

impl RegimeReport {
    /// Rows whose assigned power contradicts the power implied by the others.
    pub fn inconsistencies(&self) -> Vec<&RegimeRow> {
        self.rows.iter().filter(|r| !r.consistent).collect()
    }

    pub fn row(&self, symbol: &str) -> Option<&RegimeRow> {
        self.rows.iter().find(|r| r.symbol == symbol)
    }
}

fn row(name: &'static str, symbol: &'static str, value: f64, power: f64, eps: f64) -> RegimeRow {
    RegimeRow {
        name,
        symbol,
        value,
        assigned_power: power,
        implied_power: None,
        prefactor: value / eps.powf(power),
        consistent: true,
    }
}

pub fn regime_consistency_report(regime: Regime, epsilon: f64, p: &ThermoParams) -> RegimeReport {
    let value_based = regime == Regime::ValueBased;
    let rd_cpd = p.r_d / p.c_pd;
    let cpv_cpd = p.c_pv / p.c_pd;
    let rv_cpd = p.r_v / p.c_pd;
    let cl_cpd = p.c_l / p.c_pd;
    let latent_ratio = p.l_ref / (p.c_pd * p.t_ref);
    let gas_constant_ratio = p.r_d / p.r_v;
    let sigma_coefficient = cpv_cpd * rd_cpd - rv_cpd;

    let p_rd = 1.0;
    let p_cpv = if value_based { 0.0 } else { -1.0 };
    let p_rv = 0.0;
    let mut rows = vec![
        row("R_d/c_pd", "Gamma", rd_cpd, p_rd, epsilon),
        row("c_pv/c_pd", "k_v", cpv_cpd, p_cpv, epsilon),
        row("R_v/c_pd", "1/A", rv_cpd, p_rv, epsilon),
        row("c_l/c_pd", "k_l", cl_cpd, -1.0, epsilon),
        row("L_ref/(c_pd T_ref)", "L", latent_ratio, -1.0, epsilon),
    ];

    // R_d/R_v = (R_d/c_pd) / (R_v/c_pd)
    let mut ratio = row(
        "R_d/R_v",
        "E",
        gas_constant_ratio,
        if value_based { 0.0 } else { 1.0 },
        epsilon,
    );
    let implied = p_rd - p_rv;
    ratio.implied_power = Some(implied);
    ratio.consistent = implied == ratio.assigned_power;

    // Leading order of a difference is the smaller of the two powers.
    let mut sigma = row(
        "(c_pv/c_pd)(R_d/c_pd) - R_v/c_pd",
        "kappa_v",
        sigma_coefficient,
        if value_based { 1.0 } else { 0.0 },
        epsilon,
    );
    let implied = (p_cpv + p_rd).min(p_rv);
    sigma.implied_power = Some(implied);
    sigma.consistent = implied == sigma.assigned_power;

    rows.push(ratio);
    rows.push(sigma);

    let pi = p.pi_parameters();
    let dry_limit = [
        row("h_sc/a", "c1", pi.pi1, 3.0, epsilon),
        row("DeltaTheta/T_ref", "c2", pi.pi2, 1.0, epsilon),
        row("c_ref/(Omega a)", "c3", pi.pi3, 0.5, epsilon),
    ];

    RegimeReport {
        regime,
        epsilon,
        latent_ratio,
        gas_constant_ratio,
        sigma_coefficient,
        rows,
        es_ref_prefactor: p.es_ref / p.p_ref / epsilon.powi(1 + regime.alpha() as i32),
        dry_limit,
    }
}

impl RegimeScalings {
    pub fn fit(regime: Regime, epsilon: f64, p: &ThermoParams) -> Self {
        let report = regime_consistency_report(regime, epsilon, p);
        let get = |s: &str| report.row(s).map(|r| r.prefactor).unwrap_or(f64::NAN);
        RegimeScalings {
            regime,
            epsilon,
            gamma: get("Gamma"),
            k_v: get("k_v"),
            k_l: get("k_l"),
            latent: get("L"),
            e: get("E"),
            a: 1.0 / get("1/A"),
            kappa_v: get("kappa_v"),
            c1: report.dry_limit[0].prefactor,
            c2: report.dry_limit[1].prefactor,
            c3: report.dry_limit[2].prefactor,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayRow {
    pub epsilon: f64,
    /// (L_ref / (R_v T_ref)) (T - T_ref) / T with the O(1) prefactors held
    /// at their `REFERENCE_EPSILON` fit.
    pub exponent: f64,
}

/// Dominant Clausius–Clapeyron exponent under the standard O(1) scaling of
/// R_d/c_pd, for a sequence of ε. Its magnitude grows like 1/ε.
pub fn dry_limit_decay_demo(t: f64, epsilons: &[f64], p: &ThermoParams) -> Result<Vec<DecayRow>> {
    if !(t < p.t_ref) {
        return Err(Error::Domain {
            quantity: "temperature (dry-limit demo needs T < T_ref)",
            value: t,
            min: T_MIN,
            max: p.t_ref,
        });
    }
    ThermoParams::check_temperature(t)?;
    let at_reference = p.l_ref / (p.r_v * p.t_ref) * (t - p.t_ref) / t;
    Ok(epsilons
        .iter()
        .map(|&epsilon| DecayRow {
            epsilon,
            exponent: at_reference * REFERENCE_EPSILON / epsilon,
        })
        .collect())
}

/// e_s(T; ε) / e_s(T; 2ε) under the dry-limit scaling.
pub fn dry_limit_ratio(t: f64, epsilon: f64, p: &ThermoParams) -> Result<f64> {
    let rows = dry_limit_decay_demo(t, &[epsilon, 2.0 * epsilon], p)?;
    Ok((rows[0].exponent - rows[1].exponent).exp())
}
