//! Doubly periodic horizontal grid and the per-level Fourier transforms used
//! for horizontal derivatives, inversion and dealiased products.
//!
//! Fields are `Array3<f64>` with shape `(nz, ny, nx)`, so x varies fastest.

use std::sync::Arc;

use ndarray::{Array3, Zip};
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    /// Domain length in x [m].
    pub lx: f64,
    /// Domain length in y [m].
    pub ly: f64,
    /// Column height [m].
    pub h: f64,
}

impl Default for Grid {
    fn default() -> Self {
        Grid {
            nx: 64,
            ny: 64,
            nz: 16,
            lx: 4.0e6,
            ly: 4.0e6,
            h: 1.0e4,
        }
    }
}

impl Grid {
    pub fn new(nx: usize, ny: usize, nz: usize, lx: f64, ly: f64, h: f64) -> Self {
        Grid { nx, ny, nz, lx, ly, h }
    }

    pub fn validate(&self) -> Result<()> {
        for (key, n) in [("grid.nx", self.nx), ("grid.ny", self.ny)] {
            if n < 4 || !n.is_power_of_two() {
                return Err(Error::config(key, format!("must be a power of two >= 4, got {n}")));
            }
        }
        if self.nz < 4 {
            return Err(Error::config("grid.nz", format!("need at least 4 levels, got {}", self.nz)));
        }
        for (key, v) in [("grid.lx", self.lx), ("grid.ly", self.ly), ("grid.h", self.h)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(key, format!("must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn dx(&self) -> f64 {
        self.lx / self.nx as f64
    }

    pub fn dy(&self) -> f64 {
        self.ly / self.ny as f64
    }

    pub fn dz(&self) -> f64 {
        self.h / self.nz as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        i as f64 * self.dx()
    }

    pub fn y(&self, j: usize) -> f64 {
        j as f64 * self.dy()
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.nz, self.ny, self.nx)
    }

    pub fn zeros(&self) -> Array3<f64> {
        Array3::zeros(self.shape())
    }

    pub fn cells(&self) -> usize {
        self.nx * self.ny * self.nz
    }
}

/// Signed mode index of FFT bin `i` of an `n`-point transform.
fn mode(i: usize, n: usize) -> i64 {
    if i <= n / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

#[derive(Clone)]
pub struct Spectral {
    grid: Grid,
    fft_x: Arc<dyn Fft<f64>>,
    ifft_x: Arc<dyn Fft<f64>>,
    fft_y: Arc<dyn Fft<f64>>,
    ifft_y: Arc<dyn Fft<f64>>,
    kx: Vec<f64>,
    ky: Vec<f64>,
    // First-derivative multipliers; the Nyquist bin is zeroed so derivatives
    // of real fields stay real.
    dx_mult: Vec<f64>,
    dy_mult: Vec<f64>,
    keep_x: Vec<bool>,
    keep_y: Vec<bool>,
}

impl std::fmt::Debug for Spectral {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Spectral").field("grid", &self.grid).finish()
    }
}

impl Spectral {
    pub fn new(grid: Grid) -> Self {
        let mut planner = FftPlanner::new();
        let (nx, ny) = (grid.nx, grid.ny);
        let wave = |n: usize, l: f64| -> Vec<f64> {
            (0..n).map(|i| 2.0 * std::f64::consts::PI * mode(i, n) as f64 / l).collect()
        };
        let kx = wave(nx, grid.lx);
        let ky = wave(ny, grid.ly);
        let odd = |k: &[f64], n: usize| -> Vec<f64> {
            k.iter().enumerate().map(|(i, &v)| if i == n / 2 { 0.0 } else { v }).collect()
        };
        let keep = |n: usize| -> Vec<bool> { (0..n).map(|i| 3 * mode(i, n).unsigned_abs() < n as u64).collect() };
        Spectral {
            grid,
            fft_x: planner.plan_fft_forward(nx),
            ifft_x: planner.plan_fft_inverse(nx),
            fft_y: planner.plan_fft_forward(ny),
            ifft_y: planner.plan_fft_inverse(ny),
            dx_mult: odd(&kx, nx),
            dy_mult: odd(&ky, ny),
            kx,
            ky,
            keep_x: keep(nx),
            keep_y: keep(ny),
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Squared horizontal wavenumber of bin `(j, i)`.
    pub fn k2(&self, j: usize, i: usize) -> f64 {
        self.kx[i] * self.kx[i] + self.ky[j] * self.ky[j]
    }

    fn transform_level(&self, level: &mut [Complex64], inverse: bool) {
        let (nx, ny) = (self.grid.nx, self.grid.ny);
        let (px, py) = if inverse {
            (&self.ifft_x, &self.ifft_y)
        } else {
            (&self.fft_x, &self.fft_y)
        };
        px.process(level);
        let mut columns = vec![Complex64::new(0.0, 0.0); nx * ny];
        for j in 0..ny {
            for i in 0..nx {
                columns[i * ny + j] = level[j * nx + i];
            }
        }
        py.process(&mut columns);
        for j in 0..ny {
            for i in 0..nx {
                level[j * nx + i] = columns[i * ny + j];
            }
        }
    }

    fn transform(&self, data: &mut Array3<Complex64>, inverse: bool) {
        let plane = self.grid.nx * self.grid.ny;
        data.as_slice_mut()
            .expect("standard layout")
            .par_chunks_mut(plane)
            .for_each(|level| self.transform_level(level, inverse));
    }

    pub fn forward(&self, f: &Array3<f64>) -> Array3<Complex64> {
        let mut s = f.mapv(|v| Complex64::new(v, 0.0));
        if !s.is_standard_layout() {
            s = s.as_standard_layout().to_owned();
        }
        self.transform(&mut s, false);
        s
    }

    pub fn inverse(&self, mut s: Array3<Complex64>) -> Array3<f64> {
        self.transform(&mut s, true);
        let norm = 1.0 / (self.grid.nx * self.grid.ny) as f64;
        s.mapv(|c| c.re * norm)
    }

    /// Multiplies every bin by `m(j, i)`.
    pub fn scale(&self, s: &Array3<Complex64>, m: impl Fn(usize, usize) -> Complex64 + Sync) -> Array3<Complex64> {
        let mut out = s.clone();
        for ((_, j, i), v) in out.indexed_iter_mut() {
            *v *= m(j, i);
        }
        out
    }

    pub fn ddx_spec(&self, s: &Array3<Complex64>) -> Array3<Complex64> {
        self.scale(s, |_, i| Complex64::new(0.0, self.dx_mult[i]))
    }

    pub fn ddy_spec(&self, s: &Array3<Complex64>) -> Array3<Complex64> {
        self.scale(s, |j, _| Complex64::new(0.0, self.dy_mult[j]))
    }

    pub fn ddx(&self, f: &Array3<f64>) -> Array3<f64> {
        self.inverse(self.ddx_spec(&self.forward(f)))
    }

    pub fn ddy(&self, f: &Array3<f64>) -> Array3<f64> {
        self.inverse(self.ddy_spec(&self.forward(f)))
    }

    pub fn laplacian(&self, f: &Array3<f64>) -> Array3<f64> {
        let s = self.forward(f);
        self.inverse(self.scale(&s, |j, i| Complex64::new(-self.k2(j, i), 0.0)))
    }

    /// Zeroes the bins outside the 2/3 truncation.
    pub fn dealias(&self, s: &mut Array3<Complex64>) {
        for ((_, j, i), v) in s.indexed_iter_mut() {
            if !(self.keep_x[i] && self.keep_y[j]) {
                *v = Complex64::new(0.0, 0.0);
            }
        }
    }

    /// Field truncated to the 2/3 band, in physical space.
    pub fn truncate(&self, f: &Array3<f64>) -> Array3<f64> {
        let mut s = self.forward(f);
        self.dealias(&mut s);
        self.inverse(s)
    }

    /// Truncated field and its truncated x and y derivatives.
    fn truncated_gradient(&self, f: &Array3<f64>) -> (Array3<f64>, Array3<f64>) {
        let mut s = self.forward(f);
        self.dealias(&mut s);
        (self.inverse(self.ddx_spec(&s)), self.inverse(self.ddy_spec(&s)))
    }

    /// Dealiased `a_x b_y - a_y b_x`.
    pub fn jacobian(&self, a: &Array3<f64>, b: &Array3<f64>) -> Array3<f64> {
        let (ax, ay) = self.truncated_gradient(a);
        let (bx, by) = self.truncated_gradient(b);
        let mut prod = self.grid.zeros();
        Zip::from(&mut prod)
            .and(&ax)
            .and(&ay)
            .and(&bx)
            .and(&by)
            .for_each(|p, &ax, &ay, &bx, &by| *p = ax * by - ay * bx);
        self.truncate(&prod)
    }

    /// Dealiased `u ∂x q + v ∂y q`.
    pub fn advection(&self, u: &Array3<f64>, v: &Array3<f64>, q: &Array3<f64>) -> Array3<f64> {
        let ut = self.truncate(u);
        let vt = self.truncate(v);
        let (qx, qy) = self.truncated_gradient(q);
        let mut prod = self.grid.zeros();
        Zip::from(&mut prod)
            .and(&ut)
            .and(&vt)
            .and(&qx)
            .and(&qy)
            .for_each(|p, &u, &v, &qx, &qy| *p = u * qx + v * qy);
        self.truncate(&prod)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn grid() -> Grid {
        Grid::new(16, 8, 4, 2.0, 3.0, 1.0)
    }

    fn sample(g: &Grid, f: impl Fn(f64, f64, usize) -> f64) -> Array3<f64> {
        Array3::from_shape_fn(g.shape(), |(k, j, i)| f(g.x(i), g.y(j), k))
    }

    #[test]
    fn round_trip() {
        let g = grid();
        let sp = Spectral::new(g);
        let f = sample(&g, |x, y, k| (x * 3.1).sin() + y * y + k as f64);
        let back = sp.inverse(sp.forward(&f));
        let err = (&back - &f).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(err < 1e-13, "{err}");
    }

    #[test]
    fn derivatives_of_single_modes_are_exact() {
        let g = grid();
        let sp = Spectral::new(g);
        let (kx, ky) = (2.0 * PI * 3.0 / g.lx, 2.0 * PI * 2.0 / g.ly);
        let f = sample(&g, |x, y, _| (kx * x).sin() * (ky * y).cos());
        let fx = sp.ddx(&f);
        let fy = sp.ddy(&f);
        let lap = sp.laplacian(&f);
        for ((k, j, i), &v) in fx.indexed_iter() {
            let (x, y) = (g.x(i), g.y(j));
            assert!((v - kx * (kx * x).cos() * (ky * y).cos()).abs() < 1e-12);
            assert!((fy[[k, j, i]] + ky * (kx * x).sin() * (ky * y).sin()).abs() < 1e-12);
            assert!((lap[[k, j, i]] + (kx * kx + ky * ky) * f[[k, j, i]]).abs() < 1e-11);
        }
    }

    #[test]
    fn dealias_keeps_low_modes_only() {
        let g = Grid::new(16, 16, 4, 1.0, 1.0, 1.0);
        let sp = Spectral::new(g);
        let low = sample(&g, |x, _, _| (2.0 * PI * 5.0 * x).cos());
        let high = sample(&g, |x, _, _| (2.0 * PI * 6.0 * x).cos());
        let kept = sp.truncate(&low);
        assert!((&kept - &low).iter().all(|v| v.abs() < 1e-12));
        assert!(sp.truncate(&high).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn nonpower_of_two_rejected() {
        let g = Grid { nx: 12, ..Grid::default() };
        assert!(g.validate().unwrap_err().is_config());
    }
}
