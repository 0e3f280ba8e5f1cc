use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::Spectral;
use crate::field::{Grid, VorticityField};

/// Initial-condition distribution: a zero-mean Gaussian random field with a
/// spectral amplitude envelope
///
/// `A(k) ∝ (k/k_p) · (1 + (k/k_p)^2)^(-(1 + decay)/2)`
///
/// which rises linearly, turns over near `k_p / sqrt(decay)` and falls off as
/// `k^-decay`. The field is rescaled to the requested RMS vorticity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IcSpec {
    pub peak_wavenumber: f64,
    pub decay: f64,
    pub rms: f64,
}

impl Default for IcSpec {
    fn default() -> Self {
        Self {
            peak_wavenumber: 4.0,
            decay: 1.0,
            rms: 1.0,
        }
    }
}

impl IcSpec {
    fn envelope(&self, k: f64) -> f64 {
        let r = k / self.peak_wavenumber;
        r * (1.0 + r * r).powf(-(1.0 + self.decay) / 2.0)
    }
}

/// Draws a band-limited (2/3 rule) random field, deterministic in `seed`.
pub fn gaussian_random_field(grid: Grid, spec: &IcSpec, seed: u64) -> VorticityField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise: Vec<f64> = (0..grid.len()).map(|_| StandardNormal.sample(&mut rng)).collect();

    let mut sp = Spectral::new(grid);
    let mut hat = vec![Complex64::default(); grid.len()];
    sp.forward_real(&noise, &mut hat);
    let nx = grid.nx;
    for (idx, h) in hat.iter_mut().enumerate() {
        let (i, j) = (idx % nx, idx / nx);
        let k = (sp.kx[i] * sp.kx[i] + sp.ky[j] * sp.ky[j]).sqrt();
        let nyquist = i == nx / 2 || j == grid.ny / 2;
        if k == 0.0 || nyquist || !sp.in_band(idx) {
            *h = Complex64::default();
        } else {
            *h *= spec.envelope(k);
        }
    }
    let mut values = vec![0.0; grid.len()];
    sp.inverse_real(&hat, &mut values);
    let rms = (values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64).sqrt();
    if rms > 0.0 {
        let s = spec.rms / rms;
        values.iter_mut().for_each(|v| *v *= s);
    }
    VorticityField::from_values(grid, values).expect("grid-sized buffer")
}
