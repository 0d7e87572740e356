//! Uniform periodic grids, Fourier differentiation, rectangle-rule quadrature
//! and orthonormalization of sampled function families.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{invalid, Result};

/// Relative pivot size below which a Gram-Schmidt column counts as dependent.
pub const RANK_DEFICIENCY_TOL: f64 = 1e-14;

/// Periodic grid on `[a, b)` with `n` equispaced points.
#[derive(Clone)]
pub struct Grid {
    n: usize,
    a: f64,
    b: f64,
    wavenumbers: Vec<f64>,
    derivative_wavenumbers: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid")
            .field("n", &self.n)
            .field("a", &self.a)
            .field("b", &self.b)
            .finish()
    }
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n && self.a == other.a && self.b == other.b
    }
}

impl Grid {
    pub fn new(n: usize, a: f64, b: f64) -> Result<Self> {
        if n == 0 {
            return invalid("grid must have at least one point");
        }
        if !(a.is_finite() && b.is_finite() && b > a) {
            return invalid(format!("grid interval ({a}, {b}) is empty or not finite"));
        }
        let length = b - a;
        let wavenumbers: Vec<f64> = (0..n)
            .map(|m| {
                let signed = if m <= n / 2 { m as f64 } else { m as f64 - n as f64 };
                2.0 * PI * signed / length
            })
            .collect();
        let mut derivative_wavenumbers = wavenumbers.clone();
        if n % 2 == 0 {
            derivative_wavenumbers[n / 2] = 0.0;
        }
        let mut planner = FftPlanner::new();
        Ok(Self {
            n,
            a,
            b,
            wavenumbers,
            derivative_wavenumbers,
            fft: planner.plan_fft_forward(n),
            ifft: planner.plan_fft_inverse(n),
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn start(&self) -> f64 {
        self.a
    }

    pub fn end(&self) -> f64 {
        self.b
    }

    pub fn length(&self) -> f64 {
        self.b - self.a
    }

    pub fn spacing(&self) -> f64 {
        (self.b - self.a) / self.n as f64
    }

    pub fn point(&self, i: usize) -> f64 {
        self.a + i as f64 * self.spacing()
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.point(i)).collect()
    }

    /// Angular wavenumbers `2 pi m / (b - a)` in standard FFT ordering.
    pub fn wavenumbers(&self) -> &[f64] {
        &self.wavenumbers
    }

    /// Wavenumbers used for odd-order operators: the Nyquist entry is zero so
    /// that real input stays real.
    pub fn derivative_wavenumbers(&self) -> &[f64] {
        &self.derivative_wavenumbers
    }

    pub fn forward(&self, buf: &mut [Complex64]) {
        self.fft.process(buf);
    }

    /// Inverse transform including the `1/n` normalization.
    pub fn inverse(&self, buf: &mut [Complex64]) {
        self.ifft.process(buf);
        let scale = 1.0 / self.n as f64;
        for z in buf.iter_mut() {
            *z *= scale;
        }
    }

    pub(crate) fn check_len(&self, len: usize, what: &str) -> Result<()> {
        if len != self.n {
            return invalid(format!(
                "{what} has {len} samples but the grid has {} points",
                self.n
            ));
        }
        Ok(())
    }

    /// Low-frequency Fourier mode number `m` (0 = constant, odd = cosine,
    /// even = sine), normalized to unit L2 norm on this grid.
    pub fn fourier_mode(&self, m: usize) -> Vec<f64> {
        let length = self.length();
        let harmonic = m.div_ceil(2) as f64;
        let raw: Vec<f64> = self
            .points()
            .into_iter()
            .map(|x| {
                let phase = 2.0 * PI * harmonic * (x - self.a) / length;
                if m == 0 {
                    1.0
                } else if m % 2 == 1 {
                    phase.cos()
                } else {
                    phase.sin()
                }
            })
            .collect();
        let norm = inner_product_unchecked(&raw, &raw, self.spacing()).sqrt();
        raw.into_iter().map(|v| v / norm).collect()
    }
}

fn inner_product_unchecked(f: &[f64], g: &[f64], h: f64) -> f64 {
    h * f.iter().zip(g).map(|(a, b)| a * b).sum::<f64>()
}

/// Rectangle-rule L2 inner product `h * sum_i f_i g_i`.
pub fn inner_product(f: &[f64], g: &[f64], grid: &Grid) -> Result<f64> {
    grid.check_len(f.len(), "first argument")?;
    grid.check_len(g.len(), "second argument")?;
    Ok(inner_product_unchecked(f, g, grid.spacing()))
}

pub fn integral(f: &[f64], grid: &Grid) -> Result<f64> {
    grid.check_len(f.len(), "integrand")?;
    Ok(grid.spacing() * f.iter().sum::<f64>())
}

/// Fourier derivative with the Nyquist mode of the result zeroed.
pub fn spectral_derivative(f: &[f64], grid: &Grid) -> Result<Vec<f64>> {
    grid.check_len(f.len(), "input")?;
    let mut buf: Vec<Complex64> = f.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    derivative_in_place(&mut buf, grid);
    Ok(buf.into_iter().map(|z| z.re).collect())
}

fn derivative_in_place(buf: &mut [Complex64], grid: &Grid) {
    grid.forward(buf);
    for (z, &k) in buf.iter_mut().zip(grid.derivative_wavenumbers()) {
        *z *= Complex64::new(0.0, k);
    }
    grid.inverse(buf);
}

/// A set of functions sampled on one grid, stored column-wise (`n x count`).
#[derive(Clone, Debug)]
pub struct FunctionFamily {
    grid: Grid,
    values: DMatrix<f64>,
}

impl FunctionFamily {
    pub fn new(grid: Grid, values: DMatrix<f64>) -> Result<Self> {
        grid.check_len(values.nrows(), "function family")?;
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Grid, count: usize) -> Self {
        let n = grid.len();
        Self {
            grid,
            values: DMatrix::zeros(n, count),
        }
    }

    pub fn from_columns(grid: Grid, columns: &[Vec<f64>]) -> Result<Self> {
        for c in columns {
            grid.check_len(c.len(), "family member")?;
        }
        let n = grid.len();
        let values = DMatrix::from_fn(n, columns.len(), |i, j| columns[j][i]);
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: Grid, count: usize, f: impl Fn(usize, f64) -> f64) -> Self {
        let points = grid.points();
        let values = DMatrix::from_fn(grid.len(), count, |i, j| f(j, points[i]));
        Self { grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.values
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }

    pub fn count(&self) -> usize {
        self.values.ncols()
    }

    pub fn member(&self, j: usize) -> &[f64] {
        let n = self.grid.len();
        &self.values.as_slice()[j * n..(j + 1) * n]
    }

    /// `G_ik = <f_i, g_k>`.
    pub fn gram(&self, other: &FunctionFamily) -> DMatrix<f64> {
        self.values.tr_mul(&other.values) * self.grid.spacing()
    }

    /// `G_ik = <f_i, w f_k>` for a pointwise weight `w`.
    pub fn weighted_gram(&self, weight: &[f64], other: &FunctionFamily) -> DMatrix<f64> {
        let mut scaled = other.values.clone();
        for mut col in scaled.column_iter_mut() {
            for (v, w) in col.iter_mut().zip(weight) {
                *v *= w;
            }
        }
        self.values.tr_mul(&scaled) * self.grid.spacing()
    }

    pub fn integrals(&self) -> DVector<f64> {
        let h = self.grid.spacing();
        DVector::from_iterator(
            self.count(),
            self.values.column_iter().map(|c| h * c.sum()),
        )
    }

    pub fn weighted_integrals(&self, weight: &[f64]) -> DVector<f64> {
        let h = self.grid.spacing();
        DVector::from_iterator(
            self.count(),
            self.values
                .column_iter()
                .map(|c| h * c.iter().zip(weight).map(|(a, b)| a * b).sum::<f64>()),
        )
    }

    pub fn derivative(&self) -> FunctionFamily {
        let n = self.grid.len();
        let mut out = self.values.clone();
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for mut col in out.column_iter_mut() {
            for (z, &v) in buf.iter_mut().zip(col.iter()) {
                *z = Complex64::new(v, 0.0);
            }
            derivative_in_place(&mut buf, &self.grid);
            for (v, z) in col.iter_mut().zip(&buf) {
                *v = z.re;
            }
        }
        Self {
            grid: self.grid.clone(),
            values: out,
        }
    }

    /// Members `g_j = sum_i f_i coeff_ij`.
    pub fn combine(&self, coeff: &DMatrix<f64>) -> FunctionFamily {
        Self {
            grid: self.grid.clone(),
            values: &self.values * coeff,
        }
    }
}

/// Modified Gram-Schmidt with one re-orthogonalization pass under the grid
/// inner product. Returns `(Q, R)` with `family_j = sum_i Q_i R_ij`, `R` upper
/// triangular with non-negative diagonal.
///
/// Members whose remaining norm drops below `RANK_DEFICIENCY_TOL` times the
/// largest member norm are replaced by a low-frequency Fourier mode
/// orthogonalized against the previous members, with `R_jj = 0`.
pub fn orthonormalize(family: &FunctionFamily) -> (FunctionFamily, DMatrix<f64>) {
    let grid = family.grid().clone();
    let h = grid.spacing();
    let n = grid.len();
    let count = family.count();
    let a = family.values();

    let scale = a
        .column_iter()
        .map(|c| (h * c.norm_squared()).sqrt())
        .fold(0.0_f64, f64::max);

    let mut q = DMatrix::<f64>::zeros(n, count);
    let mut r = DMatrix::<f64>::zeros(count, count);
    let mut next_mode = 0usize;

    for j in 0..count {
        let mut v: DVector<f64> = a.column(j).into_owned();
        for _ in 0..2 {
            for i in 0..j {
                let c = h * q.column(i).dot(&v);
                v.axpy(-c, &q.column(i), 1.0);
                r[(i, j)] += c;
            }
        }
        let pivot = (h * v.norm_squared()).sqrt();
        if pivot > RANK_DEFICIENCY_TOL * scale && pivot > 0.0 {
            r[(j, j)] = pivot;
            q.set_column(j, &(v / pivot));
            continue;
        }
        // dependent member: complete with a smooth orthonormal direction
        loop {
            assert!(next_mode < n, "no orthogonal complement left on a grid of {n} points");
            let candidate = DVector::from_vec(grid.fourier_mode(next_mode));
            next_mode += 1;
            let mut w = candidate.clone();
            for _ in 0..2 {
                for i in 0..j {
                    let c = h * q.column(i).dot(&w);
                    w.axpy(-c, &q.column(i), 1.0);
                }
            }
            let norm = (h * w.norm_squared()).sqrt();
            if norm > 0.1 {
                q.set_column(j, &(w / norm));
                break;
            }
        }
    }
    (FunctionFamily { grid, values: q }, r)
}
