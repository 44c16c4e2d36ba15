//! Periodic 1-D grid and spectral calculus.
//!
//! Everything downstream (KdV hierarchy, Euler-Poisson stepping, the
//! expansion audits) does its x-calculus through this module: FFT-based
//! derivatives, the mean-zero antiderivative, and 2/3-rule dealiased
//! products.

use num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("grid size {0} must be an even power of two with n >= 8")]
    BadSize(usize),
    #[error("domain length must be positive, got {0}")]
    BadLength(f64),
    #[error("field has {got} samples but grid has {want}")]
    LengthMismatch { got: usize, want: usize },
    #[error("field contains non-finite values")]
    NonFinite,
    #[error("derivative order {0} unsupported (expected 1..=4)")]
    BadOrder(usize),
    #[error("antiderivative of non-periodic integrand: |mean| = {mean:e} exceeds {tol:e}")]
    NonZeroMean { mean: f64, tol: f64 },
}

/// Uniform periodic grid on `[0, L)` with cached FFT plans.
///
/// Nodes are `x_j = j L / n`; wavenumbers `k_m = 2 pi m / L` stored in FFT
/// ordering (m = 0..n/2, -n/2+1..-1, with the Nyquist slot carrying +n/2).
#[derive(Clone)]
pub struct SpatialGrid {
    n: usize,
    length: f64,
    nodes: Vec<f64>,
    wavenumbers: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for SpatialGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpatialGrid")
            .field("n", &self.n)
            .field("length", &self.length)
            .finish()
    }
}

impl SpatialGrid {
    pub fn new(n: usize, length: f64) -> Result<Self, GridError> {
        if n < 8 || !n.is_power_of_two() {
            return Err(GridError::BadSize(n));
        }
        if !(length > 0.0) || !length.is_finite() {
            return Err(GridError::BadLength(length));
        }
        let dx = length / n as f64;
        let nodes = (0..n).map(|j| j as f64 * dx).collect();
        let base = 2.0 * PI / length;
        let wavenumbers = (0..n)
            .map(|j| {
                let m = if j <= n / 2 { j as i64 } else { j as i64 - n as i64 };
                base * m as f64
            })
            .collect();
        let mut planner = FftPlanner::new();
        Ok(Self {
            n,
            length,
            nodes,
            wavenumbers,
            fft: planner.plan_fft_forward(n),
            ifft: planner.plan_fft_inverse(n),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn dx(&self) -> f64 {
        self.length / self.n as f64
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Signed wavenumbers in FFT ordering.
    pub fn wavenumbers(&self) -> &[f64] {
        &self.wavenumbers
    }

    /// Largest mode index kept by the 2/3 rule.
    pub fn dealias_cutoff(&self) -> usize {
        self.n / 3
    }

    fn mode_index(&self, j: usize) -> i64 {
        if j <= self.n / 2 {
            j as i64
        } else {
            j as i64 - self.n as i64
        }
    }

    pub fn to_spectral(&self, f: &Field1D) -> Vec<Complex<f64>> {
        let mut buf: Vec<Complex<f64>> =
            f.values().iter().map(|&v| Complex::new(v, 0.0)).collect();
        self.fft.process(&mut buf);
        buf
    }

    pub fn to_physical(&self, mut coeffs: Vec<Complex<f64>>) -> Field1D {
        self.ifft.process(&mut coeffs);
        let scale = 1.0 / self.n as f64;
        Field1D::new(coeffs.iter().map(|c| c.re * scale).collect())
    }

    /// Zero all modes above the 2/3 cutoff, in place.
    pub fn truncate_spectrum(&self, coeffs: &mut [Complex<f64>]) {
        let cut = self.dealias_cutoff() as i64;
        for (j, c) in coeffs.iter_mut().enumerate() {
            if self.mode_index(j).abs() > cut {
                *c = Complex::new(0.0, 0.0);
            }
        }
    }
}

/// Real samples on the nodes of a [`SpatialGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct Field1D {
    values: Vec<f64>,
}

impl Field1D {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn zeros(n: usize) -> Self {
        Self { values: vec![0.0; n] }
    }

    pub fn constant(n: usize, c: f64) -> Self {
        Self { values: vec![c; n] }
    }

    /// Sample a function on the grid nodes.
    pub fn from_fn(grid: &SpatialGrid, f: impl Fn(f64) -> f64) -> Self {
        Self {
            values: grid.nodes().iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Pointwise map into a new field.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Pointwise combination of two fields of equal length.
    pub fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert_eq!(self.len(), other.len());
        Self {
            values: self
                .values
                .iter()
                .zip(other.values.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| s * v)
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a - b)
    }

    /// a*self + b*other
    pub fn axpy(&self, a: f64, other: &Self, b: f64) -> Self {
        self.zip_with(other, |x, y| a * x + b * y)
    }
}

fn check_field(f: &Field1D, grid: &SpatialGrid) -> Result<(), GridError> {
    if f.len() != grid.n() {
        return Err(GridError::LengthMismatch {
            got: f.len(),
            want: grid.n(),
        });
    }
    if !f.is_finite() {
        return Err(GridError::NonFinite);
    }
    Ok(())
}

/// FFT derivative: multiply by `(ik)^order` and transform back.
///
/// The Nyquist mode is zeroed for odd orders so the result stays a real,
/// symmetric trigonometric interpolant.
pub fn spectral_derivative(
    f: &Field1D,
    grid: &SpatialGrid,
    order: usize,
) -> Result<Field1D, GridError> {
    if !(1..=4).contains(&order) {
        return Err(GridError::BadOrder(order));
    }
    check_field(f, grid)?;
    let mut coeffs = grid.to_spectral(f);
    let nyquist = grid.n() / 2;
    for (j, c) in coeffs.iter_mut().enumerate() {
        if order % 2 == 1 && j == nyquist {
            *c = Complex::new(0.0, 0.0);
            continue;
        }
        let ik = Complex::new(0.0, grid.wavenumbers()[j]);
        *c *= ik.powu(order as u32);
    }
    Ok(grid.to_physical(coeffs))
}

/// The unique mean-zero primitive of a mean-zero periodic field.
///
/// Fails when the integrand is not (numerically) an exact derivative,
/// i.e. its mean exceeds `1e-10 * max|f|`.
pub fn spectral_antiderivative(f: &Field1D, grid: &SpatialGrid) -> Result<Field1D, GridError> {
    check_field(f, grid)?;
    let sup = f.max_abs();
    if sup == 0.0 {
        return Ok(Field1D::zeros(grid.n()));
    }
    let mean = f.mean();
    let tol = 1e-10 * sup;
    if mean.abs() > tol {
        return Err(GridError::NonZeroMean {
            mean: mean.abs(),
            tol,
        });
    }
    let mut coeffs = grid.to_spectral(f);
    let nyquist = grid.n() / 2;
    for (j, c) in coeffs.iter_mut().enumerate() {
        if j == 0 || j == nyquist {
            *c = Complex::new(0.0, 0.0);
        } else {
            *c /= Complex::new(0.0, grid.wavenumbers()[j]);
        }
    }
    Ok(grid.to_physical(coeffs))
}

/// `(l2, linf)` norms; l2 is the trapezoid rule, exact on the periodic grid.
pub fn field_norms(f: &Field1D, grid: &SpatialGrid) -> Result<(f64, f64), GridError> {
    check_field(f, grid)?;
    let dx = grid.dx();
    let l2 = (f.values().iter().map(|v| v * v).sum::<f64>() * dx).sqrt();
    Ok((l2, f.max_abs()))
}

/// Pointwise product with 2/3-rule dealiasing.
///
/// Both factors are truncated to the retained band, multiplied on the
/// collocation grid, and the product truncated again, so the retained
/// modes are alias-free for quadratic nonlinearities.
pub fn dealiased_product(
    f: &Field1D,
    g: &Field1D,
    grid: &SpatialGrid,
) -> Result<Field1D, GridError> {
    check_field(f, grid)?;
    check_field(g, grid)?;
    let mut fh = grid.to_spectral(f);
    let mut gh = grid.to_spectral(g);
    grid.truncate_spectrum(&mut fh);
    grid.truncate_spectrum(&mut gh);
    let fp = grid.to_physical(fh);
    let gp = grid.to_physical(gh);
    let prod = fp.zip_with(&gp, |a, b| a * b);
    let mut ph = grid.to_spectral(&prod);
    grid.truncate_spectrum(&mut ph);
    Ok(grid.to_physical(ph))
}

/// Dealiased square, `f*f`; keeps the exact-derivative forms used by the
/// conservative nonlinear terms cheap.
pub fn dealiased_square(f: &Field1D, grid: &SpatialGrid) -> Result<Field1D, GridError> {
    dealiased_product(f, f, grid)
}

/// Discrete L2 inner product.
pub fn inner_product(f: &Field1D, g: &Field1D, grid: &SpatialGrid) -> f64 {
    let dx = grid.dx();
    f.values()
        .iter()
        .zip(g.values().iter())
        .map(|(a, b)| a * b)
        .sum::<f64>()
        * dx
}

/// Integral of `f` over one period.
pub fn integrate(f: &Field1D, grid: &SpatialGrid) -> f64 {
    f.values().iter().sum::<f64>() * grid.dx()
}
