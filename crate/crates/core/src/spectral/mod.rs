//! Pseudo-spectral machinery for the forced 2D vorticity equation on a
//! periodic square.
//!
//! Transforms are unnormalised in the forward direction and carry the full
//! `1/(nx*ny)` factor on the way back, so `inverse(forward(f)) == f`.

mod ic;
mod ops;
mod solver;

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::field::Grid;

pub use ic::{gaussian_random_field, IcSpec};
pub use ops::{
    advect, forcing_field, laplacian, poisson_solve, relative_divergence, velocity_from_stream, StreamVelocity,
};
pub(crate) use ops::shell_of;
pub use solver::{generate_trajectory, step, Solver, SolverConfig, Trajectory};

/// FFT plans, wavenumber tables and scratch space for one grid.
///
/// Not `Sync`: every worker builds its own. Planning a 64-point transform is
/// cheap next to a single solver step.
pub struct Spectral {
    grid: Grid,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
    scratch: Vec<Complex64>,
    transposed: Vec<Complex64>,
    /// Angular wavenumbers per x bin.
    kx: Vec<f64>,
    /// Angular wavenumbers per y bin.
    ky: Vec<f64>,
    /// Wavenumbers used for first derivatives: Nyquist bins zeroed so that
    /// derivatives of real fields stay real.
    dkx: Vec<f64>,
    dky: Vec<f64>,
    /// `1/|k|^2`, zero at the mean mode.
    inv_k2: Vec<f64>,
    /// 1.0 inside the 2/3-rule band, 0.0 outside.
    dealias: Vec<f64>,
}

impl Spectral {
    pub fn new(grid: Grid) -> Self {
        let (nx, ny) = (grid.nx, grid.ny);
        let mut planner = FftPlanner::new();
        let row_fwd = planner.plan_fft_forward(nx);
        let row_inv = planner.plan_fft_inverse(nx);
        let col_fwd = planner.plan_fft_forward(ny);
        let col_inv = planner.plan_fft_inverse(ny);
        let scratch_len = [&row_fwd, &row_inv, &col_fwd, &col_inv]
            .iter()
            .map(|p| p.get_inplace_scratch_len())
            .max()
            .unwrap_or(0);

        let kx: Vec<f64> = (0..nx).map(|i| grid.wavenumber(i, nx)).collect();
        let ky: Vec<f64> = (0..ny).map(|j| grid.wavenumber(j, ny)).collect();
        let dkx = kx
            .iter()
            .enumerate()
            .map(|(i, &k)| if i == nx / 2 { 0.0 } else { k })
            .collect();
        let dky = ky
            .iter()
            .enumerate()
            .map(|(j, &k)| if j == ny / 2 { 0.0 } else { k })
            .collect();

        let mut inv_k2 = vec![0.0; nx * ny];
        let mut dealias = vec![0.0; nx * ny];
        for j in 0..ny {
            let mj = signed_index(j, ny).unsigned_abs() as usize;
            for i in 0..nx {
                let mi = signed_index(i, nx).unsigned_abs() as usize;
                let idx = j * nx + i;
                let k2 = kx[i] * kx[i] + ky[j] * ky[j];
                if k2 > 0.0 {
                    inv_k2[idx] = 1.0 / k2;
                }
                if 3 * mi < nx && 3 * mj < ny {
                    dealias[idx] = 1.0;
                }
            }
        }

        Self {
            grid,
            row_fwd,
            row_inv,
            col_fwd,
            col_inv,
            scratch: vec![Complex64::default(); scratch_len],
            transposed: vec![Complex64::default(); nx * ny],
            kx,
            ky,
            dkx,
            dky,
            inv_k2,
            dealias,
        }
    }

    #[inline]
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.grid.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn kx(&self) -> &[f64] {
        &self.kx
    }

    pub fn ky(&self) -> &[f64] {
        &self.ky
    }

    /// Whether bin `idx` survives the 2/3 truncation.
    #[inline]
    pub fn in_band(&self, idx: usize) -> bool {
        self.dealias[idx] != 0.0
    }

    /// Unnormalised forward transform of a real field.
    pub fn forward_real(&mut self, values: &[f64], out: &mut [Complex64]) {
        debug_assert_eq!(values.len(), self.len());
        for (o, &v) in out.iter_mut().zip(values) {
            *o = Complex64::new(v, 0.0);
        }
        self.forward(out);
    }

    /// In-place unnormalised forward transform.
    pub fn forward(&mut self, data: &mut [Complex64]) {
        self.transform(data, true);
    }

    /// In-place inverse transform including the `1/(nx*ny)` factor.
    pub fn inverse(&mut self, data: &mut [Complex64]) {
        self.transform(data, false);
        let scale = 1.0 / self.len() as f64;
        for v in data.iter_mut() {
            *v *= scale;
        }
    }

    /// Inverse transform into a real buffer. Returns the largest imaginary
    /// residue so callers can check realness.
    pub fn inverse_real(&mut self, hat: &[Complex64], out: &mut [f64]) -> f64 {
        let mut buf = hat.to_vec();
        self.inverse(&mut buf);
        let mut residue = 0.0f64;
        for (o, v) in out.iter_mut().zip(&buf) {
            *o = v.re;
            residue = residue.max(v.im.abs());
        }
        residue
    }

    fn transform(&mut self, data: &mut [Complex64], forward: bool) {
        let (nx, ny) = (self.grid.nx, self.grid.ny);
        let (row, col) = if forward {
            (&self.row_fwd, &self.col_fwd)
        } else {
            (&self.row_inv, &self.col_inv)
        };
        row.process_with_scratch(data, &mut self.scratch);
        transpose(data, &mut self.transposed, nx, ny);
        col.process_with_scratch(&mut self.transposed, &mut self.scratch);
        transpose(&self.transposed, data, ny, nx);
    }
}

/// `src` is `rows x cols` row-major; `dst` becomes `cols x rows`.
fn transpose(src: &[Complex64], dst: &mut [Complex64], cols: usize, rows: usize) {
    const BLOCK: usize = 16;
    for rb in (0..rows).step_by(BLOCK) {
        for cb in (0..cols).step_by(BLOCK) {
            for r in rb..(rb + BLOCK).min(rows) {
                for c in cb..(cb + BLOCK).min(cols) {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
}

#[inline]
pub(crate) fn signed_index(i: usize, n: usize) -> i64 {
    if i <= n / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}
