//! Error metrics and spectral diagnostics for rollouts.
//!
//! Spectral quantities use the forward transform scaled by `1/(nx*ny)`, so
//! that `Σ_k ½|ω̂_k|² = ½ mean(ω²)`. Shells are integer, `round(|k|)`, from
//! 0 to `nx/2`; modes in the corners beyond `nx/2` are tallied separately.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::field::VorticityField;
use crate::spectral::Spectral;

/// Shells holding less than this fraction of the total are treated as empty.
const EMPTY_SHELL: f64 = 1e-24;

/// Relative L2 error in percent, averaged over trajectories and steps.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    pub per_step: Vec<f64>,
    pub mean: f64,
    pub per_trajectory_means: Vec<f64>,
}

/// `100/(NT) Σ_n Σ_t |ω̂ - ω| / |ω|`, with per-step and per-trajectory marginals.
pub fn relative_l2(preds: &[Vec<VorticityField>], truth: &[Vec<VorticityField>]) -> Result<ErrorReport> {
    if preds.len() != truth.len() || preds.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{} predicted vs {} true trajectories",
            preds.len(),
            truth.len()
        )));
    }
    let steps = truth[0].len();
    if steps == 0 {
        return Err(Error::InvalidArgument("zero-length rollouts".into()));
    }
    let mut per_step = vec![0.0; steps];
    let mut per_trajectory_means = Vec::with_capacity(preds.len());
    for (n, (p, t)) in preds.iter().zip(truth).enumerate() {
        if p.len() != steps || t.len() != steps {
            return Err(Error::InvalidArgument(format!(
                "trajectory {n}: {} predicted vs {} true steps, expected {steps}",
                p.len(),
                t.len()
            )));
        }
        let mut acc = 0.0;
        for (s, (pf, tf)) in p.iter().zip(t).enumerate() {
            let tn = tf.norm();
            if tn == 0.0 {
                return Err(Error::ZeroNormTruth { trajectory: n, step: s });
            }
            let e = 100.0 * pf.sub(tf)?.norm() / tn;
            per_step[s] += e;
            acc += e;
        }
        per_trajectory_means.push(acc / steps as f64);
    }
    let n = preds.len() as f64;
    per_step.iter_mut().for_each(|v| *v /= n);
    let mean = per_step.iter().sum::<f64>() / steps as f64;
    Ok(ErrorReport {
        per_step,
        mean,
        per_trajectory_means,
    })
}

/// Cosine similarity of a borrowed and an actual transition. `None` when
/// either has (near-)zero norm.
pub fn dynamics_cosine(borrowed: &VorticityField, actual: &VorticityField) -> Option<f64> {
    let (nb, na) = (borrowed.norm(), actual.norm());
    if !(nb > 1e-12 && na > 1e-12) {
        return None;
    }
    Some((borrowed.dot(actual) / (nb * na)).clamp(-1.0, 1.0))
}

/// Mean of the defined entries and the number of undefined ones.
pub fn mean_defined(values: &[Option<f64>]) -> (Option<f64>, usize) {
    let defined: Vec<f64> = values.iter().flatten().copied().collect();
    let undefined = values.len() - defined.len();
    if defined.is_empty() {
        (None, undefined)
    } else {
        (Some(defined.iter().sum::<f64>() / defined.len() as f64), undefined)
    }
}

/// Shell-binned enstrophy `Z(k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumProfile {
    /// Indexed by shell `k = 0..=nx/2`.
    pub values: Vec<f64>,
    /// Enstrophy in modes with `round(|k|) > nx/2`.
    pub overflow: f64,
}

impl SpectrumProfile {
    pub fn k_max(&self) -> usize {
        self.values.len() - 1
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum::<f64>() + self.overflow
    }

    /// Elementwise `self / other`; shells where `other` is empty (zero up to
    /// round-off) are `None`.
    pub fn ratio(&self, other: &SpectrumProfile) -> Vec<Option<f64>> {
        let floor = EMPTY_SHELL * other.total();
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (*b > floor && *b > 0.0).then(|| a / b))
            .collect()
    }
}

struct ShellTransform {
    hat: Vec<Complex64>,
    shells: Vec<usize>,
    k_max: usize,
}

fn normalised_spectrum(omega: &VorticityField) -> Result<ShellTransform> {
    omega.check_finite("omega")?;
    let grid = *omega.grid();
    let mut sp = Spectral::new(grid);
    let mut hat = vec![Complex64::default(); grid.len()];
    sp.forward_real(omega.values(), &mut hat);
    let scale = 1.0 / grid.len() as f64;
    hat.iter_mut().for_each(|h| *h *= scale);
    let shells = (0..grid.len()).map(|idx| crate::spectral::shell_of(&grid, idx)).collect();
    Ok(ShellTransform {
        hat,
        shells,
        k_max: grid.nx / 2,
    })
}

pub fn enstrophy_spectrum(omega: &VorticityField) -> Result<SpectrumProfile> {
    let st = normalised_spectrum(omega)?;
    let mut values = vec![0.0; st.k_max + 1];
    let mut overflow = 0.0;
    for (h, &k) in st.hat.iter().zip(&st.shells) {
        let z = 0.5 * h.norm_sqr();
        if k <= st.k_max {
            values[k] += z;
        } else {
            overflow += z;
        }
    }
    Ok(SpectrumProfile { values, overflow })
}

/// Per-shell `|P̂ - T̂| / |T̂|` over the complex coefficients of each shell.
/// Shells where the truth has no energy are `None`.
pub fn spectral_relative_error(pred: &VorticityField, truth: &VorticityField) -> Result<Vec<Option<f64>>> {
    pred.check_same_grid(truth)?;
    let p = normalised_spectrum(pred)?;
    let t = normalised_spectrum(truth)?;
    let mut num = vec![0.0; t.k_max + 1];
    let mut den = vec![0.0; t.k_max + 1];
    for ((ph, th), &k) in p.hat.iter().zip(&t.hat).zip(&t.shells) {
        if k <= t.k_max {
            num[k] += (ph - th).norm_sqr();
            den[k] += th.norm_sqr();
        }
    }
    let floor = EMPTY_SHELL * den.iter().sum::<f64>();
    Ok(num
        .iter()
        .zip(&den)
        .map(|(n, d)| (*d > floor && *d > 0.0).then(|| (n / d).sqrt()))
        .collect())
}

/// Percentile bootstrap interval for the mean.
pub fn bootstrap_ci(values: &[f64], n_boot: usize, level: f64, seed: u64) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("bootstrap over empty sample".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!("level must be in (0, 1), got {level}")));
    }
    if n_boot == 0 {
        return Err(Error::InvalidArgument("n_boot must be >= 1".into()));
    }
    let n = values.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means: Vec<f64> = (0..n_boot)
        .map(|_| (0..n).map(|_| values[rng.gen_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    Ok((
        quantile_sorted(&means, (1.0 - level) / 2.0),
        quantile_sorted(&means, (1.0 + level) / 2.0),
    ))
}

/// Linear-interpolation quantile of sorted data.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}
