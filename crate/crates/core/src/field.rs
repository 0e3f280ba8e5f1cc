//! Periodic grids and the real-valued fields that live on them.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// A square periodic grid. Values are stored row-major with `y` as the row
/// index, so entry `(ix, iy)` sits at `iy * nx + ix`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub domain_length: f64,
}

impl Default for Grid {
    fn default() -> Self {
        Self {
            nx: 64,
            ny: 64,
            domain_length: 2.0 * PI,
        }
    }
}

impl Grid {
    pub fn new(nx: usize, ny: usize) -> Result<Self> {
        let grid = Self {
            nx,
            ny,
            domain_length: 2.0 * PI,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn square(n: usize) -> Result<Self> {
        Self::new(n, n)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.nx.is_power_of_two() || !self.ny.is_power_of_two() || self.nx < 2 {
            return Err(Error::InvalidArgument(format!(
                "grid sides must be powers of two >= 2, got {}x{}",
                self.nx, self.ny
            )));
        }
        if self.nx != self.ny {
            return Err(Error::InvalidArgument(format!(
                "grid must be square, got {}x{}",
                self.nx, self.ny
            )));
        }
        if !(self.domain_length.is_finite() && self.domain_length > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "domain length must be positive, got {}",
                self.domain_length
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn dx(&self) -> f64 {
        self.domain_length / self.nx as f64
    }

    #[inline]
    pub fn x(&self, ix: usize) -> f64 {
        ix as f64 * self.domain_length / self.nx as f64
    }

    #[inline]
    pub fn y(&self, iy: usize) -> f64 {
        iy as f64 * self.domain_length / self.ny as f64
    }

    /// Angular wavenumber of FFT bin `i` along an axis of `n` points.
    #[inline]
    pub fn wavenumber(&self, i: usize, n: usize) -> f64 {
        let signed = if i <= n / 2 { i as f64 } else { i as f64 - n as f64 };
        signed * 2.0 * PI / self.domain_length
    }

    fn check_same(&self, other: &Grid) -> Result<()> {
        if self.nx != other.nx || self.ny != other.ny {
            return Err(Error::GridMismatch {
                expected_nx: self.nx,
                expected_ny: self.ny,
                nx: other.nx,
                ny: other.ny,
            });
        }
        Ok(())
    }
}

/// Vorticity (or any scalar) sampled on a [`Grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct VorticityField {
    grid: Grid,
    values: Vec<f64>,
}

impl VorticityField {
    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::DimensionMismatch {
                expected: grid.len(),
                actual: values.len(),
            });
        }
        Ok(Self { grid, values })
    }

    /// Samples `f(x, y)` at the grid nodes.
    pub fn from_fn(grid: Grid, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.len());
        for iy in 0..grid.ny {
            let y = grid.y(iy);
            for ix in 0..grid.nx {
                values.push(f(grid.x(ix), y));
            }
        }
        Self { grid, values }
    }

    #[inline]
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn at(&self, ix: usize, iy: usize) -> f64 {
        self.values[iy * self.grid.nx + ix]
    }

    pub fn check_finite(&self, what: &'static str) -> Result<()> {
        check_finite(&self.values, what)
    }

    pub fn check_same_grid(&self, other: &VorticityField) -> Result<()> {
        self.grid.check_same(&other.grid)
    }

    pub fn norm(&self) -> f64 {
        norm(&self.values)
    }

    pub fn dot(&self, other: &VorticityField) -> f64 {
        dot(&self.values, &other.values)
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// `self - other`, elementwise.
    pub fn sub(&self, other: &VorticityField) -> Result<VorticityField> {
        self.check_same_grid(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Self {
            grid: self.grid,
            values,
        })
    }

    /// `self + scale * other`, elementwise.
    pub fn add_scaled(&self, other: &VorticityField, scale: f64) -> Result<VorticityField> {
        self.check_same_grid(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + scale * b)
            .collect();
        Ok(Self {
            grid: self.grid,
            values,
        })
    }

    pub fn scaled(&self, scale: f64) -> VorticityField {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|v| v * scale).collect(),
        }
    }

    /// Rounds every entry to the nearest `f32`, the precision of the on-disk format.
    pub fn quantize_f32(&mut self) {
        for v in &mut self.values {
            *v = *v as f32 as f64;
        }
    }
}

pub(crate) fn check_finite(values: &[f64], what: &'static str) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite {
            what,
            index,
            value: values[index],
        }),
        None => Ok(()),
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
