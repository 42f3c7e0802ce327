//! Potential-vorticity inversion.
//!
//! All three inversions share one discretisation: Fourier in the horizontal,
//! second-order finite volumes in the vertical with φ̃ at cell centres. For a
//! face coefficient `a` and face offset `b` the discrete operator reads
//!
//! ```text
//! (Aφ)_k = Δ_hφ_k / f + (f / (ρ̄_k dz)) (G_{k+1/2} - G_{k-1/2})
//! G      = (ρ̄ / N²) (a ∂zφ + (g/θ_ref) b)         on interior faces
//! G      = (ρ̄ / N²) (g/θ_ref) θ̃_bc                at the lids
//! ```
//!
//! with N² = g (dθ̄_e/dz) / θ_ref. The dry problem has `a = 1, b = 0`, the
//! linear moist problem `a = c1, b = c2 M̃`, and the fast-condensation problem
//! picks per face the branch with the smaller θ̃_e: `a = c1, b = c2 M̃`
//! (unsaturated) or `a = 1 + L_c γ, b = 0` (saturated), where
//! γ = ∂q̃_vs/∂θ̃.
//!
//! Right-hand sides are the PV anomaly `q = PV - βy`; the analytic βy part is
//! never stored.

use log::debug;
use ndarray::{s, Array3, Axis, Zip};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::background::BackgroundState;
use crate::error::{Error, Result};
use crate::spectral::{Grid, Spectral};
use crate::thermo::ThermoParams;

/// Prescribed θ̃ (θ̃_e in the moist problems) at the lids [K].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LidConditions {
    pub bottom: f64,
    pub top: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    /// Active-set iterations before giving up.
    pub max_iter: usize,
    /// Branch gap a face must exceed before it changes state [K].
    pub mask_tolerance: f64,
    /// Relative residual at which the inner conjugate-gradient solve stops.
    pub pcg_tolerance: f64,
    pub pcg_max_iter: usize,
    pub lids: LidConditions,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_iter: 50,
            mask_tolerance: 1e-12,
            pcg_tolerance: 1e-12,
            pcg_max_iter: 2000,
            lids: LidConditions::default(),
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(Error::config("solver.max_iter", "must be >= 1"));
        }
        if self.pcg_max_iter == 0 {
            return Err(Error::config("solver.pcg_max_iter", "must be >= 1"));
        }
        if !(self.mask_tolerance >= 0.0 && self.mask_tolerance.is_finite()) {
            return Err(Error::config("solver.mask_tolerance", "must be finite and >= 0"));
        }
        if !(self.pcg_tolerance > 0.0 && self.pcg_tolerance < 1.0) {
            return Err(Error::config("solver.pcg_tolerance", "must lie in (0, 1)"));
        }
        for (key, v) in [("solver.lids.bottom", self.lids.bottom), ("solver.lids.top", self.lids.top)] {
            if !v.is_finite() {
                return Err(Error::config(key, "must be finite"));
            }
        }
        Ok(())
    }
}

/// Saturation state of the interior faces, shape `(nz + 1, ny, nx)`. The lid
/// faces carry prescribed fluxes and are always `false`.
#[derive(Debug, Clone, PartialEq)]
pub struct SaturationMask {
    pub faces: Array3<bool>,
}

impl SaturationMask {
    pub fn uniform(grid: &Grid, saturated: bool) -> Self {
        let mut faces = Array3::from_elem((grid.nz + 1, grid.ny, grid.nx), saturated);
        faces.index_axis_mut(Axis(0), 0).fill(false);
        faces.index_axis_mut(Axis(0), grid.nz).fill(false);
        SaturationMask { faces }
    }

    fn interior(&self) -> impl Iterator<Item = &bool> {
        let nz = self.faces.len_of(Axis(0)) - 1;
        self.faces.slice(s![1..nz, .., ..]).into_iter()
    }

    pub fn saturated_count(&self) -> usize {
        self.interior().filter(|&&b| b).count()
    }

    pub fn interior_count(&self) -> usize {
        self.interior().count()
    }

    pub fn saturated_fraction(&self) -> f64 {
        self.saturated_count() as f64 / self.interior_count() as f64
    }

    /// Per face level, `Some(state)` when the level is horizontally uniform.
    fn level_states(&self) -> Vec<Option<bool>> {
        self.faces
            .outer_iter()
            .map(|level| {
                let first = level[[0, 0]];
                level.iter().all(|&b| b == first).then_some(first)
            })
            .collect()
    }

    fn differences(&self, other: &SaturationMask) -> usize {
        Zip::from(&self.faces)
            .and(&other.faces)
            .fold(0, |n, &a, &b| n + usize::from(a != b))
    }
}

/// Tridiagonal vertical operator of one horizontal wavenumber.
#[derive(Debug, Clone, PartialEq)]
pub struct Tridiagonal {
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Vertical part of the inversion operator with horizontally uniform face
/// coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct VerticalOperator {
    /// f ρ̄ a / (N² dz²) on faces; zero at the lids.
    pub face: Vec<f64>,
    pub rho: Vec<f64>,
    pub f: f64,
}

impl VerticalOperator {
    pub fn matrix(&self, k2: f64) -> Tridiagonal {
        let nz = self.rho.len();
        let mut m = Tridiagonal {
            lower: vec![0.0; nz],
            diag: vec![0.0; nz],
            upper: vec![0.0; nz],
        };
        for k in 0..nz {
            m.lower[k] = self.face[k] / self.rho[k];
            m.upper[k] = self.face[k + 1] / self.rho[k];
            m.diag[k] = -k2 / self.f - m.lower[k] - m.upper[k];
        }
        m
    }
}

fn thomas(m: &Tridiagonal, rhs: &mut [Complex64]) -> Result<()> {
    let n = rhs.len();
    let mut c = vec![0.0; n];
    let mut beta = m.diag[0];
    for k in 0..n {
        if k > 0 {
            c[k - 1] = m.upper[k - 1] / beta;
            beta = m.diag[k] - m.lower[k] * c[k - 1];
        }
        if beta == 0.0 || !beta.is_finite() {
            return Err(Error::Solver {
                level: k,
                message: "singular vertical operator".into(),
            });
        }
        let prev = if k > 0 { rhs[k - 1] * m.lower[k] } else { Complex64::new(0.0, 0.0) };
        rhs[k] = (rhs[k] - prev) / beta;
    }
    for k in (0..n - 1).rev() {
        let next = rhs[k + 1] * c[k];
        rhs[k] -= next;
    }
    Ok(())
}

/// Horizontal-mean column: cumulative flux march after removing the
/// ρ̄-weighted mean of the right-hand side, gauged to zero vertical mean.
fn mean_mode(op: &VerticalOperator, rhs: &mut [Complex64]) -> Result<()> {
    let nz = rhs.len();
    let mass: f64 = op.rho.iter().sum();
    let excess = rhs.iter().zip(&op.rho).map(|(r, &w)| r * w).sum::<Complex64>() / mass;
    let mut flux = Complex64::new(0.0, 0.0);
    let mut phi = vec![Complex64::new(0.0, 0.0); nz];
    for k in 0..nz - 1 {
        flux += (rhs[k] - excess) * op.rho[k];
        if op.face[k + 1] == 0.0 {
            return Err(Error::Solver {
                level: k + 1,
                message: "vanishing vertical coefficient in the mean mode".into(),
            });
        }
        phi[k + 1] = phi[k] + flux / op.face[k + 1];
    }
    let mean = phi.iter().sum::<Complex64>() / nz as f64;
    for (r, p) in rhs.iter_mut().zip(phi) {
        *r = p - mean;
    }
    Ok(())
}

/// Face coefficient `a`: either one value per face level or a full field.
enum FaceA<'a> {
    Levels(&'a [f64]),
    Field(&'a Array3<f64>),
}

impl FaceA<'_> {
    #[inline]
    fn at(&self, k: usize, j: usize, i: usize) -> f64 {
        match self {
            FaceA::Levels(a) => a[k],
            FaceA::Field(a) => a[[k, j, i]],
        }
    }
}

/// Balanced fields recovered from φ̃.
#[derive(Debug, Clone)]
pub struct Balances {
    pub u: Array3<f64>,
    pub v: Array3<f64>,
    pub zeta: Array3<f64>,
    /// θ̃ at cell centres.
    pub theta: Array3<f64>,
}

#[derive(Debug, Clone)]
pub struct FastInversion {
    pub phi: Array3<f64>,
    pub mask: SaturationMask,
    /// Number of linear solves performed.
    pub iterations: usize,
    /// Largest |θ̃_e - min(unsaturated, saturated)| over interior faces [K].
    pub min_residual: f64,
    /// Max-norm residual of the nonlinear equation relative to max |q|.
    pub nonlinear_residual: f64,
}

#[derive(Clone)]
pub struct Inverter {
    spectral: Spectral,
    bg: BackgroundState,
    f: f64,
    /// g / θ_ref
    g_theta: f64,
    lids: LidConditions,
    /// f ρ̄ / N² on faces.
    weight: Vec<f64>,
}

impl std::fmt::Debug for Inverter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Inverter").field("grid", self.grid()).finish()
    }
}

impl Inverter {
    pub fn new(grid: Grid, bg: BackgroundState, tp: &ThermoParams, lids: LidConditions) -> Result<Self> {
        grid.validate()?;
        if grid.nz != bg.nz || (grid.h - bg.h).abs() > 1e-9 * grid.h {
            return Err(Error::config("grid", "background column does not match the grid"));
        }
        let weight = bg
            .rho
            .faces
            .iter()
            .zip(&bg.n2.faces)
            .map(|(&r, &n2)| tp.f * r / n2)
            .collect();
        Ok(Inverter {
            spectral: Spectral::new(grid),
            bg,
            f: tp.f,
            g_theta: tp.g / tp.theta_ref,
            lids,
            weight,
        })
    }

    pub fn grid(&self) -> &Grid {
        self.spectral.grid()
    }

    pub fn spectral(&self) -> &Spectral {
        &self.spectral
    }

    pub fn background(&self) -> &BackgroundState {
        &self.bg
    }

    pub fn lids(&self) -> LidConditions {
        self.lids
    }

    /// Copy with different lid values.
    pub fn with_lids(&self, lids: LidConditions) -> Inverter {
        Inverter { lids, ..self.clone() }
    }

    fn face_shape(&self) -> (usize, usize, usize) {
        let g = self.grid();
        (g.nz + 1, g.ny, g.nx)
    }

    pub fn vertical_operator(&self, a: &[f64]) -> VerticalOperator {
        let nz = self.grid().nz;
        let dz2 = self.bg.dz * self.bg.dz;
        let face = (0..=nz)
            .map(|k| if k == 0 || k == nz { 0.0 } else { self.weight[k] * a[k] / dz2 })
            .collect();
        VerticalOperator {
            face,
            rho: self.bg.rho.centers.clone(),
            f: self.f,
        }
    }

    pub fn dry_operator(&self) -> VerticalOperator {
        self.vertical_operator(&vec![1.0; self.grid().nz + 1])
    }

    pub fn moist_linear_operator(&self) -> VerticalOperator {
        self.vertical_operator(&self.bg.c1.faces)
    }

    /// Face offsets that are zero inside and hold the lid values.
    fn lid_offsets(&self) -> Array3<f64> {
        let nz = self.grid().nz;
        let mut b = Array3::zeros(self.face_shape());
        b.index_axis_mut(Axis(0), 0).fill(self.lids.bottom);
        b.index_axis_mut(Axis(0), nz).fill(self.lids.top);
        b
    }

    /// M̃ averaged onto faces (lid faces left at zero).
    pub fn to_faces(&self, m: &Array3<f64>) -> Array3<f64> {
        let nz = self.grid().nz;
        let mut out = Array3::zeros(self.face_shape());
        for k in 1..nz {
            let mut level = out.index_axis_mut(Axis(0), k);
            Zip::from(&mut level)
                .and(m.index_axis(Axis(0), k - 1))
                .and(m.index_axis(Axis(0), k))
                .for_each(|o, &lo, &hi| *o = 0.5 * (lo + hi));
        }
        out
    }

    fn moist_offsets(&self, m: &Array3<f64>) -> Array3<f64> {
        let nz = self.grid().nz;
        let mut b = self.to_faces(m);
        for k in 1..nz {
            let c2 = self.bg.c2.faces[k];
            b.index_axis_mut(Axis(0), k).mapv_inplace(|v| c2 * v);
        }
        b.index_axis_mut(Axis(0), 0).fill(self.lids.bottom);
        b.index_axis_mut(Axis(0), nz).fill(self.lids.top);
        b
    }

    /// (f / (ρ̄_k dz)) Δ_k[(ρ̄/N²)(g/θ_ref) b].
    fn offset_divergence(&self, b: &Array3<f64>) -> Array3<f64> {
        let g = *self.grid();
        let dz = self.bg.dz;
        Array3::from_shape_fn(g.shape(), |(k, j, i)| {
            let hi = self.weight[k + 1] * b[[k + 1, j, i]];
            let lo = self.weight[k] * b[[k, j, i]];
            self.g_theta * (hi - lo) / (self.bg.rho.centers[k] * dz)
        })
    }

    fn apply_with(&self, phi: &Array3<f64>, a: FaceA<'_>, b: Option<&Array3<f64>>) -> Array3<f64> {
        let g = *self.grid();
        let dz = self.bg.dz;
        let mut out = self.spectral.laplacian(phi);
        out.mapv_inplace(|v| v / self.f);
        let flux = |k: usize, j: usize, i: usize| -> f64 {
            let offset = b.map_or(0.0, |b| self.g_theta * b[[k, j, i]]);
            if k == 0 || k == g.nz {
                self.weight[k] * offset
            } else {
                let grad = (phi[[k, j, i]] - phi[[k - 1, j, i]]) / dz;
                self.weight[k] * (a.at(k, j, i) * grad + offset)
            }
        };
        for ((k, j, i), o) in out.indexed_iter_mut() {
            *o += (flux(k + 1, j, i) - flux(k, j, i)) / (self.bg.rho.centers[k] * dz);
        }
        out
    }

    /// Direct solve for horizontally uniform face coefficients.
    fn solve_levels(&self, a: &[f64], rhs: &Array3<f64>) -> Result<Array3<f64>> {
        let g = *self.grid();
        let op = self.vertical_operator(a);
        let spec = self.spectral.forward(rhs);
        let bins: Vec<(usize, usize)> = (0..g.ny).flat_map(|j| (0..g.nx).map(move |i| (j, i))).collect();
        let columns: Vec<Vec<Complex64>> = bins
            .par_iter()
            .map(|&(j, i)| {
                let mut col: Vec<Complex64> = (0..g.nz).map(|k| spec[[k, j, i]]).collect();
                if j == 0 && i == 0 {
                    mean_mode(&op, &mut col)?;
                } else {
                    thomas(&op.matrix(self.spectral.k2(j, i)), &mut col)?;
                }
                Ok(col)
            })
            .collect::<Result<_>>()?;
        let mut out = spec;
        for (&(j, i), col) in bins.iter().zip(columns) {
            for (k, v) in col.into_iter().enumerate() {
                out[[k, j, i]] = v;
            }
        }
        Ok(self.spectral.inverse(out))
    }

    fn rhs(&self, q: &Array3<f64>, b: &Array3<f64>) -> Array3<f64> {
        q - &self.offset_divergence(b)
    }

    pub fn invert_dry(&self, q: &Array3<f64>) -> Result<Array3<f64>> {
        let rhs = self.rhs(q, &self.lid_offsets());
        self.solve_levels(&vec![1.0; self.grid().nz + 1], &rhs)
    }

    pub fn invert_moist_linear(&self, q: &Array3<f64>, m: &Array3<f64>) -> Result<Array3<f64>> {
        let rhs = self.rhs(q, &self.moist_offsets(m));
        self.solve_levels(&self.bg.c1.faces, &rhs)
    }

    pub fn apply_dry(&self, phi: &Array3<f64>) -> Array3<f64> {
        let a = vec![1.0; self.grid().nz + 1];
        self.apply_with(phi, FaceA::Levels(&a), Some(&self.lid_offsets()))
    }

    pub fn apply_moist_linear(&self, phi: &Array3<f64>, m: &Array3<f64>) -> Array3<f64> {
        self.apply_with(phi, FaceA::Levels(&self.bg.c1.faces), Some(&self.moist_offsets(m)))
    }

    /// Nonlinear fast-condensation operator, branch chosen per face by the
    /// smaller θ̃_e.
    pub fn apply_moist_fast(&self, phi: &Array3<f64>, m: &Array3<f64>) -> Array3<f64> {
        let mask = self.mask_from_gap(&self.fast_gap(phi, m), None, 0.0);
        let (a, b) = self.branch_coefficients(&mask, m, None);
        self.apply_with(phi, FaceA::Field(&a), Some(&b))
    }

    /// θ̃ on faces: hydrostatic differences inside, lid values at the ends.
    pub fn theta_faces(&self, phi: &Array3<f64>) -> Array3<f64> {
        let g = *self.grid();
        let scale = 1.0 / (self.g_theta * self.bg.dz);
        Array3::from_shape_fn(self.face_shape(), |(k, j, i)| {
            if k == 0 {
                self.lids.bottom
            } else if k == g.nz {
                self.lids.top
            } else {
                scale * (phi[[k, j, i]] - phi[[k - 1, j, i]])
            }
        })
    }

    pub fn centers_from_faces(&self, faces: &Array3<f64>) -> Array3<f64> {
        let g = *self.grid();
        Array3::from_shape_fn(g.shape(), |(k, j, i)| 0.5 * (faces[[k, j, i]] + faces[[k + 1, j, i]]))
    }

    pub fn diagnose_balances(&self, phi: &Array3<f64>) -> Balances {
        let spec = self.spectral.forward(phi);
        let inv_f = 1.0 / self.f;
        let u = self.spectral.inverse(self.spectral.ddy_spec(&spec)).mapv(|v| -inv_f * v);
        let v = self.spectral.inverse(self.spectral.ddx_spec(&spec)).mapv(|v| inv_f * v);
        let zeta = self
            .spectral
            .inverse(self.spectral.scale(&spec, |j, i| Complex64::new(-self.spectral.k2(j, i) * inv_f, 0.0)));
        Balances {
            u,
            v,
            zeta,
            theta: self.centers_from_faces(&self.theta_faces(phi)),
        }
    }

    /// Unsaturated minus saturated θ̃_e on faces [K]; positive where the
    /// saturated branch is the minimum. Lid entries are zero.
    pub fn fast_gap(&self, phi: &Array3<f64>, m: &Array3<f64>) -> Array3<f64> {
        let theta = self.theta_faces(phi);
        let m_faces = self.to_faces(m);
        let nz = self.grid().nz;
        let mut gap = Array3::zeros(self.face_shape());
        for k in 1..nz {
            let slope = self.bg.c1.faces[k] - self.saturated_slope(k);
            let c2 = self.bg.c2.faces[k];
            Zip::from(gap.index_axis_mut(Axis(0), k))
                .and(theta.index_axis(Axis(0), k))
                .and(m_faces.index_axis(Axis(0), k))
                .for_each(|gp, &t, &mf| *gp = slope * t + c2 * mf);
        }
        gap
    }

    /// 1 + L_c γ on face `k`.
    fn saturated_slope(&self, k: usize) -> f64 {
        1.0 + self.bg.latent * self.bg.qvs_theta.faces[k]
    }

    /// A face becomes saturated when the gap exceeds `tol`, unsaturated when
    /// it falls below `-tol`, and otherwise keeps its previous state
    /// (unsaturated when there is none).
    fn mask_from_gap(&self, gap: &Array3<f64>, previous: Option<&SaturationMask>, tol: f64) -> SaturationMask {
        let nz = self.grid().nz;
        let mut faces = Array3::from_elem(self.face_shape(), false);
        for ((k, j, i), out) in faces.indexed_iter_mut() {
            if k == 0 || k == nz {
                continue;
            }
            let d = gap[[k, j, i]];
            *out = if d > tol {
                true
            } else if d < -tol {
                false
            } else {
                previous.is_some_and(|p| p.faces[[k, j, i]])
            };
        }
        SaturationMask { faces }
    }

    /// Face fields `(a, b)` for a mask; faces in `blend` take the mean of
    /// both branches.
    fn branch_coefficients(
        &self,
        mask: &SaturationMask,
        m: &Array3<f64>,
        blend: Option<&Array3<bool>>,
    ) -> (Array3<f64>, Array3<f64>) {
        let nz = self.grid().nz;
        let unsat_b = self.moist_offsets(m);
        let mut a = Array3::zeros(self.face_shape());
        let mut b = unsat_b.clone();
        for ((k, j, i), av) in a.indexed_iter_mut() {
            if k == 0 || k == nz {
                continue;
            }
            let (au, bu) = (self.bg.c1.faces[k], unsat_b[[k, j, i]]);
            let (as_, bs) = (self.saturated_slope(k), 0.0);
            let (ak, bk) = if blend.is_some_and(|bl| bl[[k, j, i]]) {
                (0.5 * (au + as_), 0.5 * (bu + bs))
            } else if mask.faces[[k, j, i]] {
                (as_, bs)
            } else {
                (au, bu)
            };
            *av = ak;
            b[[k, j, i]] = bk;
        }
        (a, b)
    }

    /// Solves the linear problem selected by a fixed mask. Masks that are
    /// horizontally uniform on every face level use the direct spectral
    /// solve; others use conjugate gradients preconditioned by it.
    pub fn solve_with_mask(
        &self,
        q: &Array3<f64>,
        m: &Array3<f64>,
        mask: &SaturationMask,
        opts: &SolverOptions,
        guess: Option<&Array3<f64>>,
    ) -> Result<Array3<f64>> {
        self.solve_masked(q, m, mask, None, opts, guess)
    }

    fn solve_masked(
        &self,
        q: &Array3<f64>,
        m: &Array3<f64>,
        mask: &SaturationMask,
        blend: Option<&Array3<bool>>,
        opts: &SolverOptions,
        guess: Option<&Array3<f64>>,
    ) -> Result<Array3<f64>> {
        let nz = self.grid().nz;
        let states = mask.level_states();
        let uniform = blend.is_none() && states.iter().all(Option::is_some);
        if uniform {
            let a: Vec<f64> = (0..=nz)
                .map(|k| match states[k] {
                    Some(true) if k > 0 && k < nz => self.saturated_slope(k),
                    _ => self.bg.c1.faces[k],
                })
                .collect();
            let (_, b) = self.branch_coefficients(mask, m, None);
            let rhs = self.rhs(q, &b);
            return self.solve_levels(&a, &rhs);
        }
        let (a, b) = self.branch_coefficients(mask, m, blend);
        let rhs = self.rhs(q, &b);
        self.pcg(&a, &rhs, opts, guess)
    }

    fn weighted_dot(&self, x: &Array3<f64>, y: &Array3<f64>) -> f64 {
        x.outer_iter()
            .zip(y.outer_iter())
            .zip(&self.bg.rho.centers)
            .map(|((xl, yl), &r)| r * Zip::from(&xl).and(&yl).fold(0.0, |s, &a, &b| s + a * b))
            .sum()
    }

    /// ⟨x, y⟩ weighted by ρ̄ and the cell volume.
    pub fn inner_product(&self, x: &Array3<f64>, y: &Array3<f64>) -> f64 {
        let g = self.grid();
        self.weighted_dot(x, y) * g.dx() * g.dy() * g.dz()
    }

    /// Removes the ρ̄-weighted volume mean, the part of a right-hand side the
    /// lid-flux problem cannot match.
    fn project(&self, r: &mut Array3<f64>) {
        let g = *self.grid();
        let mass: f64 = self.bg.rho.centers.iter().sum::<f64>() * (g.nx * g.ny) as f64;
        let ones = Array3::from_elem(g.shape(), 1.0);
        let mean = self.weighted_dot(r, &ones) / mass;
        r.mapv_inplace(|v| v - mean);
    }

    fn pcg(&self, a: &Array3<f64>, rhs: &Array3<f64>, opts: &SolverOptions, guess: Option<&Array3<f64>>) -> Result<Array3<f64>> {
        let nz = self.grid().nz;
        // Preconditioner: horizontally averaged coefficients.
        let a_mean: Vec<f64> = a
            .outer_iter()
            .enumerate()
            .map(|(k, level)| if k == 0 || k == nz { 1.0 } else { level.mean().unwrap_or(1.0) })
            .collect();
        let op = |x: &Array3<f64>| self.apply_with(x, FaceA::Field(a), None);
        let mut b = rhs.clone();
        self.project(&mut b);
        let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut x = match guess {
            Some(g) => g.clone(),
            None => self.solve_levels(&a_mean, &b)?,
        };
        if scale == 0.0 {
            return Ok(self.grid().zeros());
        }
        let mut r = &b - &op(&x);
        self.project(&mut r);
        let mut z = self.solve_levels(&a_mean, &r)?;
        let mut p = z.clone();
        let mut rz = self.weighted_dot(&r, &z);
        for it in 0..opts.pcg_max_iter {
            let res = r.iter().fold(0.0f64, |m, v| m.max(v.abs())) / scale;
            if res <= opts.pcg_tolerance {
                debug!("pcg converged iterations={it} residual={res:.3e}");
                let mean = x.mean().unwrap_or(0.0);
                x.mapv_inplace(|v| v - mean);
                return Ok(x);
            }
            let ap = op(&p);
            let pap = self.weighted_dot(&p, &ap);
            if pap == 0.0 || !pap.is_finite() {
                break;
            }
            let alpha = rz / pap;
            x.scaled_add(alpha, &p);
            r.scaled_add(-alpha, &ap);
            self.project(&mut r);
            z = self.solve_levels(&a_mean, &r)?;
            let rz_new = self.weighted_dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            p = &z + &(beta * &p);
        }
        Err(Error::Solver {
            level: 0,
            message: format!("conjugate gradients did not reach {:e} in {} iterations", opts.pcg_tolerance, opts.pcg_max_iter),
        })
    }

    /// Free-boundary inversion by active-set iteration over the face mask,
    /// starting from an all-unsaturated guess.
    pub fn invert_moist_fast(&self, q: &Array3<f64>, m: &Array3<f64>, opts: &SolverOptions) -> Result<FastInversion> {
        self.invert_moist_fast_from(q, m, opts, SaturationMask::uniform(self.grid(), false), None)
    }

    /// As [`Inverter::invert_moist_fast`] with an initial mask and guess.
    pub fn invert_moist_fast_from(
        &self,
        q: &Array3<f64>,
        m: &Array3<f64>,
        opts: &SolverOptions,
        initial: SaturationMask,
        guess: Option<&Array3<f64>>,
    ) -> Result<FastInversion> {
        let mut mask = initial;
        let mut before: Option<SaturationMask> = None;
        let mut blend: Option<Array3<bool>> = None;
        let mut phi = guess.cloned();
        let mut last_flips = 0;
        for it in 1..=opts.max_iter {
            let solved = self.solve_masked(q, m, &mask, blend.as_ref(), opts, phi.as_ref())?;
            let gap = self.fast_gap(&solved, m);
            let next = self.mask_from_gap(&gap, Some(&mask), opts.mask_tolerance);
            let flips = next.differences(&mask);
            debug!(
                "active-set iteration={it} flipped={flips} saturated={} blended={}",
                next.saturated_count(),
                blend.as_ref().map_or(0, |b| b.iter().filter(|&&x| x).count())
            );
            phi = Some(solved);
            if flips == 0 && blend.is_none() {
                let phi = phi.expect("solved above");
                let min_residual = self.min_residual(&phi, m, &mask);
                let nonlinear_residual = self.nonlinear_residual(&phi, q, m);
                return Ok(FastInversion {
                    phi,
                    mask,
                    iterations: it,
                    min_residual,
                    nonlinear_residual,
                });
            }
            let cycling = before.as_ref().is_some_and(|b| b == &next) && flips > 0;
            blend = if cycling && blend.is_none() {
                Some(Zip::from(&next.faces).and(&mask.faces).map_collect(|&a, &b| a != b))
            } else {
                None
            };
            last_flips = flips;
            before = Some(std::mem::replace(&mut mask, next));
            if blend.is_some() {
                // Freeze the mask for the blended iteration.
                mask = before.clone().expect("just set");
            }
        }
        Err(Error::NonConvergence {
            iterations: opts.max_iter,
            oscillating: last_flips,
        })
    }

    /// Largest |θ̃_e(mask) - min(branches)| over interior faces [K].
    pub fn min_residual(&self, phi: &Array3<f64>, m: &Array3<f64>, mask: &SaturationMask) -> f64 {
        let theta = self.theta_faces(phi);
        let m_faces = self.to_faces(m);
        let nz = self.grid().nz;
        let mut worst = 0.0f64;
        for ((k, j, i), &sat) in mask.faces.indexed_iter() {
            if k == 0 || k == nz {
                continue;
            }
            let t = theta[[k, j, i]];
            let unsat = self.bg.c1.faces[k] * t + self.bg.c2.faces[k] * m_faces[[k, j, i]];
            let saturated = self.saturated_slope(k) * t;
            let used = if sat { saturated } else { unsat };
            worst = worst.max((used - unsat.min(saturated)).abs());
        }
        worst
    }

    /// Max-norm residual of the fast operator against `q` (after removing the
    /// unmatched ρ̄-weighted mean), relative to max |q|.
    pub fn nonlinear_residual(&self, phi: &Array3<f64>, q: &Array3<f64>, m: &Array3<f64>) -> f64 {
        let mut r = &self.apply_moist_fast(phi, m) - q;
        self.project(&mut r);
        let scale = q.iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(f64::MIN_POSITIVE);
        r.iter().fold(0.0f64, |acc, v| acc.max(v.abs())) / scale
    }

    /// Unsaturated-branch operator with horizontally averaged coefficients
    /// of the given mask; exposed for preconditioned fixed-point schemes.
    pub fn solve_mean_branch(&self, mask: &SaturationMask, rhs: &Array3<f64>) -> Result<Array3<f64>> {
        let nz = self.grid().nz;
        let a: Vec<f64> = (0..=nz)
            .map(|k| {
                if k == 0 || k == nz {
                    return 1.0;
                }
                let frac = mask.faces.index_axis(Axis(0), k).iter().filter(|&&b| b).count() as f64
                    / (self.grid().nx * self.grid().ny) as f64;
                frac * self.saturated_slope(k) + (1.0 - frac) * self.bg.c1.faces[k]
            })
            .collect();
        let mut r = rhs.clone();
        self.project(&mut r);
        self.solve_levels(&a, &r)
    }

    /// Direct solve with arbitrary horizontally uniform face coefficients and
    /// no offsets.
    pub fn solve_uniform(&self, a: &[f64], rhs: &Array3<f64>) -> Result<Array3<f64>> {
        self.solve_levels(a, rhs)
    }

    /// 1 + L_c γ on every face.
    pub fn saturated_slopes(&self) -> Vec<f64> {
        (0..=self.grid().nz).map(|k| self.saturated_slope(k)).collect()
    }
}
