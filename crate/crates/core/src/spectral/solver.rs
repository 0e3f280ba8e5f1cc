use num_complex::Complex64;

use super::ic::{gaussian_random_field, IcSpec};
use super::ops::forcing_field;
use super::Spectral;
use crate::error::{Error, Result};
use crate::field::{Grid, VorticityField};

/// Physical and numerical parameters of one simulated regime.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub grid: Grid,
    /// Kinematic viscosity ν.
    pub nu: f64,
    /// Forcing wavenumber.
    pub k_f: u32,
    pub forcing_amplitude: f64,
    pub dt: f64,
    /// Simulation time between saved frames.
    pub record_interval: f64,
    pub spinup_time: f64,
    pub seed: u64,
    pub ic: IcSpec,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            grid: Grid::default(),
            nu: 1e-3,
            k_f: 4,
            forcing_amplitude: 0.1,
            dt: 1e-3,
            record_interval: 1.0,
            spinup_time: 10.0,
            seed: 0,
            ic: IcSpec::default(),
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        let bad = |what: &str, v: f64| Err(Error::InvalidArgument(format!("{what} = {v}")));
        if !(self.nu.is_finite() && self.nu >= 0.0) {
            return bad("nu", self.nu);
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return bad("dt", self.dt);
        }
        if !(self.record_interval.is_finite() && self.record_interval > 0.0) {
            return bad("record_interval", self.record_interval);
        }
        if !(self.spinup_time.is_finite() && self.spinup_time >= 0.0) {
            return bad("spinup_time", self.spinup_time);
        }
        let steps = self.steps_per_frame();
        if steps == 0 || (self.dt * steps as f64 - self.record_interval).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "record_interval {} is not a whole number of dt = {} steps",
                self.record_interval, self.dt
            )));
        }
        // Also validates k_f against the dealiased band.
        forcing_field(self.grid, self.k_f, self.forcing_amplitude)?;
        Ok(())
    }

    pub fn steps_per_frame(&self) -> u64 {
        (self.record_interval / self.dt).round() as u64
    }

    pub fn spinup_steps(&self) -> u64 {
        (self.spinup_time / self.dt).round() as u64
    }
}

/// Recorded frames of one simulation run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub frames: Vec<VorticityField>,
    pub config: SolverConfig,
    pub trajectory_id: u32,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn grid(&self) -> &Grid {
        &self.config.grid
    }
}

/// Fourth-order Runge–Kutta integrator for the forced vorticity equation,
/// with the viscous term folded into an exact integrating factor.
///
/// The state is the vorticity spectrum. Each right-hand side evaluation
/// costs three complex 2D transforms: one packs `(ux, uy)`, one packs
/// `∇ω`, one brings the product back.
pub struct Solver {
    config: SolverConfig,
    sp: Spectral,
    forcing_hat: Vec<Complex64>,
    decay_half: Vec<f64>,
    decay_full: Vec<f64>,
    n1: Vec<Complex64>,
    n2: Vec<Complex64>,
    n3: Vec<Complex64>,
    n4: Vec<Complex64>,
    stage: Vec<Complex64>,
    vel: Vec<Complex64>,
    grad: Vec<Complex64>,
    steps_taken: u64,
}

impl Solver {
    pub fn new(config: SolverConfig) -> Result<Self> {
        config.validate()?;
        let grid = config.grid;
        let n = grid.len();
        let mut sp = Spectral::new(grid);
        let forcing = forcing_field(grid, config.k_f, config.forcing_amplitude)?;
        let mut forcing_hat = vec![Complex64::default(); n];
        sp.forward_real(forcing.values(), &mut forcing_hat);
        forcing_hat[0] = Complex64::default();

        let nx = grid.nx;
        let mut decay_half = vec![0.0; n];
        let mut decay_full = vec![0.0; n];
        for idx in 0..n {
            let (i, j) = (idx % nx, idx / nx);
            let k2 = sp.kx[i] * sp.kx[i] + sp.ky[j] * sp.ky[j];
            decay_half[idx] = (-config.nu * k2 * config.dt * 0.5).exp();
            decay_full[idx] = (-config.nu * k2 * config.dt).exp();
        }
        let zeros = vec![Complex64::default(); n];
        Ok(Self {
            config,
            sp,
            forcing_hat,
            decay_half,
            decay_full,
            n1: zeros.clone(),
            n2: zeros.clone(),
            n3: zeros.clone(),
            n4: zeros.clone(),
            stage: zeros.clone(),
            vel: zeros.clone(),
            grad: zeros,
            steps_taken: 0,
        })
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn steps_taken(&self) -> u64 {
        self.steps_taken
    }

    /// Spectrum of a physical field with the mean mode pinned to zero.
    pub fn spectrum_of(&mut self, omega: &VorticityField) -> Vec<Complex64> {
        let mut hat = vec![Complex64::default(); self.sp.len()];
        self.sp.forward_real(omega.values(), &mut hat);
        hat[0] = Complex64::default();
        hat
    }

    pub fn physical(&mut self, omega_hat: &[Complex64]) -> VorticityField {
        let mut values = vec![0.0; self.sp.len()];
        self.sp.inverse_real(omega_hat, &mut values);
        VorticityField::from_values(self.config.grid, values).expect("grid-sized buffer")
    }

    /// Writes `-P[u·∇ω] + f` into `out` and returns `max|u|`.
    fn rhs(&mut self, omega_hat: &[Complex64], which: Stage) -> f64 {
        let nx = self.config.grid.nx;
        let sp = &mut self.sp;
        for (idx, (v, g)) in self.vel.iter_mut().zip(self.grad.iter_mut()).enumerate() {
            let (i, j) = (idx % nx, idx / nx);
            let w = omega_hat[idx];
            let psi = w * sp.inv_k2[idx];
            let (dkx, dky) = (sp.dkx[i], sp.dky[j]);
            // ux = i ky ψ, uy = -i kx ψ; packed as ux + i uy.
            let ux = Complex64::new(-dky * psi.im, dky * psi.re);
            let uy = Complex64::new(dkx * psi.im, -dkx * psi.re);
            *v = Complex64::new(ux.re - uy.im, ux.im + uy.re);
            // ∂xω + i ∂yω.
            let wx = Complex64::new(-dkx * w.im, dkx * w.re);
            let wy = Complex64::new(-dky * w.im, dky * w.re);
            *g = Complex64::new(wx.re - wy.im, wx.im + wy.re);
        }
        sp.inverse(&mut self.vel);
        sp.inverse(&mut self.grad);

        let mut max_u2 = 0.0f64;
        for (v, g) in self.vel.iter().zip(self.grad.iter_mut()) {
            let (ux, uy) = (v.re, v.im);
            max_u2 = max_u2.max(ux * ux + uy * uy);
            *g = Complex64::new(ux * g.re + uy * g.im, 0.0);
        }
        sp.forward(&mut self.grad);

        let out = match which {
            Stage::One => &mut self.n1,
            Stage::Two => &mut self.n2,
            Stage::Three => &mut self.n3,
            Stage::Four => &mut self.n4,
        };
        for ((o, &p), (&m, &f)) in out
            .iter_mut()
            .zip(self.grad.iter())
            .zip(sp.dealias.iter().zip(&self.forcing_hat))
        {
            *o = f - p * m;
        }
        out[0] = Complex64::default();
        max_u2.sqrt()
    }

    /// Advances the spectral state by one `dt`.
    pub fn advance(&mut self, omega_hat: &mut [Complex64]) -> Result<()> {
        let dt = self.config.dt;
        let half = 0.5 * dt;
        let state: Vec<Complex64> = omega_hat.to_vec();

        let max_u = self.rhs(&state, Stage::One);
        let admissible_dt = if max_u > 0.0 {
            0.5 * self.config.grid.dx() / max_u
        } else {
            f64::INFINITY
        };
        if !max_u.is_finite() {
            return Err(Error::NonFiniteState {
                step: self.steps_taken,
            });
        }
        if dt > admissible_dt {
            return Err(Error::Cfl {
                max_velocity: max_u,
                dt,
                admissible_dt,
            });
        }

        for idx in 0..state.len() {
            self.stage[idx] = self.decay_half[idx] * (state[idx] + half * self.n1[idx]);
        }
        let stage = std::mem::take(&mut self.stage);
        self.rhs(&stage, Stage::Two);
        let mut stage = stage;
        for idx in 0..state.len() {
            stage[idx] = self.decay_half[idx] * state[idx] + half * self.n2[idx];
        }
        self.rhs(&stage, Stage::Three);
        for idx in 0..state.len() {
            stage[idx] = self.decay_full[idx] * state[idx] + dt * self.decay_half[idx] * self.n3[idx];
        }
        self.rhs(&stage, Stage::Four);
        self.stage = stage;

        let sixth = dt / 6.0;
        for idx in 0..state.len() {
            let (e, eh) = (self.decay_full[idx], self.decay_half[idx]);
            omega_hat[idx] = e * state[idx]
                + sixth * (e * self.n1[idx] + 2.0 * eh * (self.n2[idx] + self.n3[idx]) + self.n4[idx]);
        }
        omega_hat[0] = Complex64::default();
        self.steps_taken += 1;

        if omega_hat.iter().any(|c| !(c.re.is_finite() && c.im.is_finite())) {
            return Err(Error::NonFiniteState {
                step: self.steps_taken,
            });
        }
        Ok(())
    }
}

#[derive(Clone, Copy)]
enum Stage {
    One,
    Two,
    Three,
    Four,
}

/// Advances a physical vorticity field by one `dt`.
pub fn step(omega: &VorticityField, config: &SolverConfig) -> Result<VorticityField> {
    omega.check_finite("omega")?;
    if omega.grid().nx != config.grid.nx || omega.grid().ny != config.grid.ny {
        return Err(Error::GridMismatch {
            expected_nx: config.grid.nx,
            expected_ny: config.grid.ny,
            nx: omega.grid().nx,
            ny: omega.grid().ny,
        });
    }
    let mut solver = Solver::new(config.clone())?;
    let mut hat = solver.spectrum_of(omega);
    solver.advance(&mut hat)?;
    Ok(solver.physical(&hat))
}

/// Draws the configured random initial condition, spins up without
/// recording, then records `n_frames` frames `record_interval` apart.
///
/// Recorded frames are rounded to `f32`, the precision of the trajectory
/// file format, so a write/read cycle is lossless.
pub fn generate_trajectory(config: &SolverConfig, n_frames: usize, trajectory_id: u32) -> Result<Trajectory> {
    if n_frames == 0 {
        return Err(Error::InvalidArgument("n_frames must be >= 1".into()));
    }
    let mut solver = Solver::new(config.clone())?;
    let ic = gaussian_random_field(config.grid, &config.ic, config.seed);
    let mut hat = solver.spectrum_of(&ic);
    for _ in 0..config.spinup_steps() {
        solver.advance(&mut hat)?;
    }
    let per_frame = config.steps_per_frame();
    let mut frames = Vec::with_capacity(n_frames);
    for frame in 0..n_frames {
        if frame > 0 {
            for _ in 0..per_frame {
                solver.advance(&mut hat)?;
            }
        }
        let mut field = solver.physical(&hat);
        field.quantize_f32();
        frames.push(field);
    }
    Ok(Trajectory {
        frames,
        config: config.clone(),
        trajectory_id,
    })
}
