//! Charge density, periodic Poisson solves and separable field tables.

use std::sync::atomic::{AtomicBool, Ordering};

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{invalid, Result};
use crate::grid::{FunctionFamily, Grid};
use crate::linalg::svd;

/// Charge density `rho` on a 1D periodic grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ChargeDensity {
    pub grid: Grid,
    pub values: Vec<f64>,
}

/// Charge density on a 2D tensor grid, stored as an `n1 x n2` table.
#[derive(Clone, Debug, PartialEq)]
pub struct ChargeDensity2D {
    pub grid1: Grid,
    pub grid2: Grid,
    pub values: DMatrix<f64>,
}

/// Electric field on a 1D periodic grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ElectricField {
    pub grid: Grid,
    pub values: Vec<f64>,
}

/// One field component written as `sum_mu first[:, mu] (x1) second[:, mu] (x2)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SeparableComponent {
    pub first: DMatrix<f64>,
    pub second: DMatrix<f64>,
}

impl SeparableComponent {
    pub fn rank(&self) -> usize {
        self.first.ncols()
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.first * self.second.transpose()
    }
}

/// Two-component field on a 2D tensor grid with an optional separable form.
#[derive(Clone, Debug, PartialEq)]
pub struct ElectricField2D {
    pub grid1: Grid,
    pub grid2: Grid,
    pub components: [DMatrix<f64>; 2],
    pub separable: Option<[SeparableComponent; 2]>,
}

/// Truncation rule for [`lowrank_field`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Truncation {
    /// Absolute Frobenius-norm tolerance on the discarded part of each
    /// component table (unweighted grid values).
    pub tol: f64,
    pub max_rank: usize,
}

impl Default for Truncation {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_rank: 16,
        }
    }
}

/// `rho(x) = -sum_j K_j(x) int V_j dv`.
pub fn charge_density(k: &FunctionFamily, v: &FunctionFamily) -> Result<ChargeDensity> {
    if k.count() != v.count() {
        return invalid(format!(
            "charge density needs matching counts, got {} x-functions and {} v-functions",
            k.count(),
            v.count()
        ));
    }
    Ok(ChargeDensity {
        grid: k.grid().clone(),
        values: density_values(k, v),
    })
}

static NON_NEUTRAL_REPORTED: AtomicBool = AtomicBool::new(false);

fn neutrality_check(mean_mode: Complex64, norm: f64, n: usize) {
    // mean_mode is the unnormalized FFT coefficient, so its size is n * mean
    if mean_mode.norm() / n as f64 > 1e-8 * norm.max(f64::MIN_POSITIVE)
        && !NON_NEUTRAL_REPORTED.swap(true, Ordering::Relaxed)
    {
        log::warn!(
            "plasma is not neutral: mean of rho + 1 is {:.3e}; mean mode of E set to zero",
            mean_mode.re / n as f64
        );
    }
}

/// `E = -phi'` with `-phi'' = rho + 1`, mean mode zeroed.
pub fn solve_poisson(rho: &ChargeDensity) -> Result<ElectricField> {
    rho.grid.check_len(rho.values.len(), "charge density")?;
    Ok(ElectricField {
        grid: rho.grid.clone(),
        values: poisson_values(&rho.values, &rho.grid),
    })
}

pub(crate) fn poisson_values(rho: &[f64], grid: &Grid) -> Vec<f64> {
    let n = grid.len();
    let mut buf: Vec<Complex64> = rho.iter().map(|r| Complex64::new(r + 1.0, 0.0)).collect();
    let rms = (rho.iter().map(|r| (r + 1.0).powi(2)).sum::<f64>() / n as f64).sqrt();
    grid.forward(&mut buf);
    neutrality_check(buf[0], rms, n);
    for (z, &k) in buf.iter_mut().zip(grid.derivative_wavenumbers()) {
        *z = if k == 0.0 {
            Complex64::new(0.0, 0.0)
        } else {
            // E^ = -i (rho + 1)^ / k
            Complex64::new(z.im / k, -z.re / k)
        };
    }
    grid.inverse(&mut buf);
    buf.iter().map(|z| z.re).collect()
}

/// `rho = -sum_j k_j int v_j` without the count check.
pub(crate) fn density_values(k: &FunctionFamily, v: &FunctionFamily) -> Vec<f64> {
    let weights = -v.integrals();
    (k.values() * weights).as_slice().to_vec()
}

fn fft2(table: &DMatrix<Complex64>, g1: &Grid, g2: &Grid, inverse: bool) -> DMatrix<Complex64> {
    let mut out = table.clone();
    let mut col = vec![Complex64::new(0.0, 0.0); g1.len()];
    for j in 0..out.ncols() {
        for i in 0..g1.len() {
            col[i] = out[(i, j)];
        }
        if inverse {
            g1.inverse(&mut col);
        } else {
            g1.forward(&mut col);
        }
        for i in 0..g1.len() {
            out[(i, j)] = col[i];
        }
    }
    let mut row = vec![Complex64::new(0.0, 0.0); g2.len()];
    for i in 0..out.nrows() {
        for j in 0..g2.len() {
            row[j] = out[(i, j)];
        }
        if inverse {
            g2.inverse(&mut row);
        } else {
            g2.forward(&mut row);
        }
        for j in 0..g2.len() {
            out[(i, j)] = row[j];
        }
    }
    out
}

/// 2D solve: `E_m^(k) = -i k_m (rho + 1)^(k) / |k|^2`, no separable form.
pub fn solve_poisson_2d(rho: &ChargeDensity2D) -> Result<ElectricField2D> {
    let (g1, g2) = (&rho.grid1, &rho.grid2);
    if rho.values.nrows() != g1.len() || rho.values.ncols() != g2.len() {
        return invalid(format!(
            "charge table is {}x{} but the grids have {}x{} points",
            rho.values.nrows(),
            rho.values.ncols(),
            g1.len(),
            g2.len()
        ));
    }
    let shifted = rho.values.map(|r| Complex64::new(r + 1.0, 0.0));
    let count = shifted.len();
    let rms = (shifted.iter().map(|z| z.re * z.re).sum::<f64>() / count as f64).sqrt();
    let spec = fft2(&shifted, g1, g2, false);
    neutrality_check(spec[(0, 0)], rms, count);
    let mut comps = [spec.clone(), spec];
    for i in 0..g1.len() {
        for j in 0..g2.len() {
            let (k1, k2) = (g1.wavenumbers()[i], g2.wavenumbers()[j]);
            let ksq = k1 * k1 + k2 * k2;
            let km = [g1.derivative_wavenumbers()[i], g2.derivative_wavenumbers()[j]];
            for (m, comp) in comps.iter_mut().enumerate() {
                let z = comp[(i, j)];
                comp[(i, j)] = if ksq == 0.0 || km[m] == 0.0 {
                    Complex64::new(0.0, 0.0)
                } else {
                    Complex64::new(0.0, -km[m] / ksq) * z
                };
            }
        }
    }
    let [c1, c2] = comps;
    Ok(ElectricField2D {
        grid1: g1.clone(),
        grid2: g2.clone(),
        components: [
            fft2(&c1, g1, g2, true).map(|z| z.re),
            fft2(&c2, g1, g2, true).map(|z| z.re),
        ],
        separable: None,
    })
}

/// Truncated SVD of each component table.
pub fn lowrank_field(field: &ElectricField2D, rule: Truncation) -> ElectricField2D {
    let split = |table: &DMatrix<f64>| {
        let (u, sigma, v) = svd(table);
        // smallest rank whose discarded tail is within tolerance
        let mut rank = sigma.len();
        let mut tail = 0.0;
        for (pos, s) in sigma.iter().enumerate().rev() {
            tail += s * s;
            if tail.sqrt() > rule.tol {
                rank = pos + 1;
                break;
            }
            rank = pos;
        }
        let rank = rank.clamp(1, rule.max_rank.max(1)).min(sigma.len());
        let first = DMatrix::from_fn(table.nrows(), rank, |i, mu| u[(i, mu)] * sigma[mu]);
        let second = v.columns(0, rank).into_owned();
        SeparableComponent { first, second }
    };
    let mut out = field.clone();
    out.separable = Some([split(&field.components[0]), split(&field.components[1])]);
    out
}

pub fn electric_energy(field: &ElectricField) -> f64 {
    0.5 * field.grid.spacing() * field.values.iter().map(|e| e * e).sum::<f64>()
}

pub fn electric_energy_2d(field: &ElectricField2D) -> f64 {
    let area = field.grid1.spacing() * field.grid2.spacing();
    0.5 * area * (field.components[0].norm_squared() + field.components[1].norm_squared())
}
