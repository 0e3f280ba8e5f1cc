use num_complex::Complex64;

use super::{signed_index, Spectral};
use crate::error::{Error, Result};
use crate::field::{Grid, VorticityField};

/// Stream function and the divergence-free velocity it induces.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamVelocity {
    pub psi: VorticityField,
    pub ux: VorticityField,
    pub uy: VorticityField,
}

/// Solves `Δψ = -ω` spectrally. The mean mode of `ω` is projected out.
pub fn poisson_solve(omega: &VorticityField) -> Result<VorticityField> {
    omega.check_finite("omega")?;
    let grid = *omega.grid();
    let mut sp = Spectral::new(grid);
    let mut hat = vec![Complex64::default(); grid.len()];
    sp.forward_real(omega.values(), &mut hat);
    for (h, &w) in hat.iter_mut().zip(&sp.inv_k2) {
        *h *= w;
    }
    let mut psi = vec![0.0; grid.len()];
    sp.inverse_real(&hat, &mut psi);
    VorticityField::from_values(grid, psi)
}

/// `ux = ∂ψ/∂y`, `uy = -∂ψ/∂x`, computed spectrally.
pub fn velocity_from_stream(psi: &VorticityField) -> Result<(VorticityField, VorticityField)> {
    psi.check_finite("psi")?;
    let grid = *psi.grid();
    let mut sp = Spectral::new(grid);
    let mut hat = vec![Complex64::default(); grid.len()];
    sp.forward_real(psi.values(), &mut hat);
    let (ux, uy) = velocity_from_stream_hat(&mut sp, &hat);
    Ok((
        VorticityField::from_values(grid, ux)?,
        VorticityField::from_values(grid, uy)?,
    ))
}

/// Velocity from a stream-function spectrum. Both components come out of a
/// single complex inverse transform, `ux + i·uy`.
pub(crate) fn velocity_from_stream_hat(sp: &mut Spectral, psi_hat: &[Complex64]) -> (Vec<f64>, Vec<f64>) {
    let nx = sp.grid.nx;
    let mut packed = vec![Complex64::default(); psi_hat.len()];
    for (idx, (p, &ph)) in packed.iter_mut().zip(psi_hat).enumerate() {
        let (i, j) = (idx % nx, idx / nx);
        let ux = Complex64::new(0.0, sp.dky[j]) * ph;
        let uy = -Complex64::new(0.0, sp.dkx[i]) * ph;
        *p = ux + Complex64::i() * uy;
    }
    sp.inverse(&mut packed);
    packed.iter().map(|c| (c.re, c.im)).unzip()
}

/// Dealiased advection term `u·∇ω`.
pub fn advect(omega: &VorticityField, ux: &VorticityField, uy: &VorticityField) -> Result<VorticityField> {
    omega.check_same_grid(ux)?;
    omega.check_same_grid(uy)?;
    omega.check_finite("omega")?;
    ux.check_finite("ux")?;
    uy.check_finite("uy")?;
    let grid = *omega.grid();
    let nx = grid.nx;
    let mut sp = Spectral::new(grid);
    let mut hat = vec![Complex64::default(); grid.len()];
    sp.forward_real(omega.values(), &mut hat);

    let mut grad = vec![Complex64::default(); grid.len()];
    for (idx, (g, &h)) in grad.iter_mut().zip(&hat).enumerate() {
        let (i, j) = (idx % nx, idx / nx);
        let dx = Complex64::new(0.0, sp.dkx[i]) * h;
        let dy = Complex64::new(0.0, sp.dky[j]) * h;
        *g = dx + Complex64::i() * dy;
    }
    sp.inverse(&mut grad);

    let mut product: Vec<Complex64> = grad
        .iter()
        .zip(ux.values().iter().zip(uy.values()))
        .map(|(g, (&u, &v))| Complex64::new(u * g.re + v * g.im, 0.0))
        .collect();
    sp.forward(&mut product);
    for (p, &m) in product.iter_mut().zip(&sp.dealias) {
        *p *= m;
    }
    let mut out = vec![0.0; grid.len()];
    sp.inverse_real(&product, &mut out);
    VorticityField::from_values(grid, out)
}

/// Stationary Kolmogorov forcing `amplitude · cos(k_f · y)`.
pub fn forcing_field(grid: Grid, k_f: u32, amplitude: f64) -> Result<VorticityField> {
    let limit = grid.nx.min(grid.ny);
    if k_f == 0 || 3 * k_f as usize >= limit {
        return Err(Error::InvalidArgument(format!(
            "forcing wavenumber {k_f} outside the dealiased band (0, {limit}/3)"
        )));
    }
    if !amplitude.is_finite() {
        return Err(Error::InvalidArgument(format!("forcing amplitude {amplitude}")));
    }
    let scale = 2.0 * std::f64::consts::PI / grid.domain_length;
    let k = k_f as f64 * scale;
    Ok(VorticityField::from_fn(grid, |_, y| amplitude * (k * y).cos()))
}

/// Spectral divergence `i kx ûx + i ky ûy`, relative to the velocity norm.
/// Used by tests and invariant checks.
pub fn relative_divergence(ux: &VorticityField, uy: &VorticityField) -> f64 {
    let grid = *ux.grid();
    let nx = grid.nx;
    let mut sp = Spectral::new(grid);
    let mut hx = vec![Complex64::default(); grid.len()];
    let mut hy = vec![Complex64::default(); grid.len()];
    sp.forward_real(ux.values(), &mut hx);
    sp.forward_real(uy.values(), &mut hy);
    let mut div = vec![Complex64::default(); grid.len()];
    for (idx, d) in div.iter_mut().enumerate() {
        let (i, j) = (idx % nx, idx / nx);
        *d = Complex64::new(0.0, sp.kx[i]) * hx[idx] + Complex64::new(0.0, sp.ky[j]) * hy[idx];
    }
    let mut div_real = vec![0.0; grid.len()];
    sp.inverse_real(&div, &mut div_real);
    let vnorm = (ux.norm().powi(2) + uy.norm().powi(2)).sqrt();
    if vnorm == 0.0 {
        return crate::field::norm(&div_real);
    }
    crate::field::norm(&div_real) / vnorm
}

/// Spectral Laplacian, for checking Poisson solutions.
pub fn laplacian(field: &VorticityField) -> VorticityField {
    let grid = *field.grid();
    let nx = grid.nx;
    let mut sp = Spectral::new(grid);
    let mut hat = vec![Complex64::default(); grid.len()];
    sp.forward_real(field.values(), &mut hat);
    for (idx, h) in hat.iter_mut().enumerate() {
        let (i, j) = (idx % nx, idx / nx);
        *h *= -(sp.kx[i] * sp.kx[i] + sp.ky[j] * sp.ky[j]);
    }
    let mut out = vec![0.0; grid.len()];
    sp.inverse_real(&hat, &mut out);
    VorticityField::from_values(grid, out).expect("grid-sized buffer")
}

/// Integer shell `round(|k|)` of bin `idx`, in units of the fundamental.
pub(crate) fn shell_of(grid: &Grid, idx: usize) -> usize {
    let (i, j) = (idx % grid.nx, idx / grid.nx);
    let mi = signed_index(i, grid.nx) as f64;
    let mj = signed_index(j, grid.ny) as f64;
    (mi * mi + mj * mj).sqrt().round() as usize
}
