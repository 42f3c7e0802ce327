//! Positivity-preserving horizontal transport of cloud water: finite volumes
//! with MUSCL reconstruction and a minmod limiter, driven by face velocities
//! taken from a corner streamfunction so the discrete flow is divergence free.

use ndarray::Array3;

use crate::spectral::Grid;

/// Face-normal velocities on a periodic C-grid.
#[derive(Debug, Clone)]
pub struct FaceVelocities {
    /// u on the west face of cell (k, j, i).
    pub u: Array3<f64>,
    /// v on the south face of cell (k, j, i).
    pub v: Array3<f64>,
}

#[inline]
fn wrap(i: usize, d: isize, n: usize) -> usize {
    (i as isize + d).rem_euclid(n as isize) as usize
}

#[inline]
fn minmod(a: f64, b: f64) -> f64 {
    if a * b <= 0.0 {
        0.0
    } else if a.abs() < b.abs() {
        a
    } else {
        b
    }
}

/// u = -∂yψ and v = ∂xψ on cell faces from ψ at cell centres. ψ is first
/// averaged to cell corners, so each face velocity is a difference of two
/// corner values and the discrete divergence telescopes to zero.
pub fn face_velocities(psi: &Array3<f64>, grid: &Grid) -> FaceVelocities {
    let (nz, ny, nx) = grid.shape();
    // Corner (k, j, i) sits at the south-west corner of cell (k, j, i).
    let corner = Array3::from_shape_fn((nz, ny, nx), |(k, j, i)| {
        let (im, jm) = (wrap(i, -1, nx), wrap(j, -1, ny));
        0.25 * (psi[[k, j, i]] + psi[[k, j, im]] + psi[[k, jm, i]] + psi[[k, jm, im]])
    });
    let (dx, dy) = (grid.dx(), grid.dy());
    let u = Array3::from_shape_fn((nz, ny, nx), |(k, j, i)| {
        -(corner[[k, wrap(j, 1, ny), i]] - corner[[k, j, i]]) / dy
    });
    let v = Array3::from_shape_fn((nz, ny, nx), |(k, j, i)| {
        (corner[[k, j, wrap(i, 1, nx)]] - corner[[k, j, i]]) / dx
    });
    FaceVelocities { u, v }
}

/// Flux-form tendency -∇·(u q) with upwind MUSCL face values.
pub fn advect_muscl(q: &Array3<f64>, vel: &FaceVelocities, grid: &Grid) -> Array3<f64> {
    let (nz, ny, nx) = grid.shape();
    let (dx, dy) = (grid.dx(), grid.dy());
    let face_value = |k: usize, j: usize, i: usize, along_x: bool, speed: f64| -> f64 {
        // Face between cell `m` (minus side) and cell `p` (plus side).
        let at = |dj: isize, di: isize| q[[k, wrap(j, dj, ny), wrap(i, di, nx)]];
        let (mm, m, p, pp) = if along_x {
            (at(0, -2), at(0, -1), at(0, 0), at(0, 1))
        } else {
            (at(-2, 0), at(-1, 0), at(0, 0), at(1, 0))
        };
        if speed >= 0.0 {
            m + 0.5 * minmod(m - mm, p - m)
        } else {
            p - 0.5 * minmod(p - m, pp - p)
        }
    };
    let fx = Array3::from_shape_fn((nz, ny, nx), |(k, j, i)| {
        let s = vel.u[[k, j, i]];
        s * face_value(k, j, i, true, s)
    });
    let fy = Array3::from_shape_fn((nz, ny, nx), |(k, j, i)| {
        let s = vel.v[[k, j, i]];
        s * face_value(k, j, i, false, s)
    });
    Array3::from_shape_fn((nz, ny, nx), |(k, j, i)| {
        -(fx[[k, j, wrap(i, 1, nx)]] - fx[[k, j, i]]) / dx - (fy[[k, wrap(j, 1, ny), i]] - fy[[k, j, i]]) / dy
    })
}

/// Discrete divergence of face velocities, for checks.
pub fn divergence(vel: &FaceVelocities, grid: &Grid) -> Array3<f64> {
    let (nz, ny, nx) = grid.shape();
    Array3::from_shape_fn((nz, ny, nx), |(k, j, i)| {
        (vel.u[[k, j, wrap(i, 1, nx)]] - vel.u[[k, j, i]]) / grid.dx()
            + (vel.v[[k, wrap(j, 1, ny), i]] - vel.v[[k, j, i]]) / grid.dy()
    })
}

/// Largest advective Courant sum max(|u|/dx + |v|/dy) per unit time.
pub fn courant_rate(vel: &FaceVelocities, grid: &Grid) -> f64 {
    let (nz, ny, nx) = grid.shape();
    let mut worst = 0.0f64;
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let u = vel.u[[k, j, i]].abs().max(vel.u[[k, j, wrap(i, 1, nx)]].abs());
                let v = vel.v[[k, j, i]].abs().max(vel.v[[k, wrap(j, 1, ny), i]].abs());
                worst = worst.max(u / grid.dx() + v / grid.dy());
            }
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn grid() -> Grid {
        Grid::new(16, 16, 2, 1.0, 1.0, 1.0)
    }

    fn vortex(g: &Grid) -> Array3<f64> {
        Array3::from_shape_fn(g.shape(), |(_, j, i)| (2.0 * PI * g.x(i)).sin() * (2.0 * PI * g.y(j)).sin() * 0.1)
    }

    #[test]
    fn faces_are_divergence_free() {
        let g = grid();
        let vel = face_velocities(&vortex(&g), &g);
        assert!(divergence(&vel, &g).iter().all(|d| d.abs() < 1e-13));
    }

    #[test]
    fn mass_conserved_and_positive() {
        let g = grid();
        let vel = face_velocities(&vortex(&g), &g);
        let dt = 0.4 / courant_rate(&vel, &g);
        let mut q = Array3::from_shape_fn(g.shape(), |(_, j, i)| if (4..8).contains(&i) && (4..8).contains(&j) { 1.0 } else { 0.0 });
        let total: f64 = q.sum();
        for _ in 0..50 {
            // SSP-RK3
            let q1 = &q + &(dt * &advect_muscl(&q, &vel, &g));
            let q2 = 0.75 * &q + 0.25 * (&q1 + &(dt * &advect_muscl(&q1, &vel, &g)));
            q = (1.0 / 3.0) * &q + (2.0 / 3.0) * (&q2 + &(dt * &advect_muscl(&q2, &vel, &g)));
        }
        assert!((q.sum() - total).abs() < 1e-12 * total);
        assert!(q.iter().all(|&v| v >= -1e-14));
    }

    #[test]
    fn uniform_field_is_steady() {
        let g = grid();
        let vel = face_velocities(&vortex(&g), &g);
        let q = Array3::from_elem(g.shape(), 3.0);
        assert!(advect_muscl(&q, &vel, &g).iter().all(|d| d.abs() < 1e-12));
    }
}
