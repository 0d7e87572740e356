//! Time integrators for coupled advection-reaction systems of the form
//!
//! ```text
//! d/dt u_j(x) = - sum_l G_jl d/dx u_l(x) - sum_l B_jl(x) u_l(x)
//! ```
//!
//! with a constant symmetric speed matrix `G` and a pointwise antisymmetric
//! coupling `B(x)`. Every K-, L-, M- and N-type sub-flow reduces to this form.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::grid::FunctionFamily;
use crate::linalg::{expm_skew, symmetric_eigen, SkewExponential};

/// Sub-solver used for the advection-reaction sub-flows.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SubSolver {
    /// Exact advection half steps around an exact pointwise rotation, with the
    /// coupling evaluated at the midpoint state. Norm preserving.
    #[default]
    Split,
    /// First-order exponential Euler: advection exact per Fourier mode,
    /// coupling treated explicitly through `phi_1`.
    ExponentialEuler,
}

/// `phi_1(z) = (e^z - 1) / z`, with a series branch near zero.
pub fn phi1(z: Complex64) -> Complex64 {
    if z.norm() < 1e-4 {
        Complex64::new(1.0, 0.0) + z / 2.0 + z * z / 6.0 + z * z * z / 24.0
    } else {
        (z.exp() - 1.0) / z
    }
}

/// Symmetric speed matrix in its eigenbasis.
#[derive(Clone, Debug)]
pub struct Advection {
    speeds: DVector<f64>,
    basis: DMatrix<f64>,
}

impl Advection {
    pub fn new(g: &DMatrix<f64>) -> Self {
        let (speeds, basis) = symmetric_eigen(g);
        Self { speeds, basis }
    }

    pub fn speeds(&self) -> &DVector<f64> {
        &self.speeds
    }

    /// Exact flow of `u_t = -G u_x` over time `t`: each eigencomponent is a
    /// rigid translation with its eigenvalue as speed.
    pub fn advect(&self, u: &mut FunctionFamily, t: f64) {
        if t == 0.0 {
            return;
        }
        let grid = u.grid().clone();
        let n = grid.len();
        let mut eigen = u.values() * &self.basis;
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for (j, mut col) in eigen.column_iter_mut().enumerate() {
            let speed = self.speeds[j];
            for (z, &v) in buf.iter_mut().zip(col.iter()) {
                *z = Complex64::new(v, 0.0);
            }
            grid.forward(&mut buf);
            for (z, &k) in buf.iter_mut().zip(grid.derivative_wavenumbers()) {
                let phase = -k * speed * t;
                *z *= Complex64::new(phase.cos(), phase.sin());
            }
            grid.inverse(&mut buf);
            for (v, z) in col.iter_mut().zip(&buf) {
                *v = z.re;
            }
        }
        *u.values_mut() = eigen * self.basis.transpose();
    }
}

/// Pointwise coupling `B(x) = sum_t profile_t(x) M_t` with antisymmetric `M_t`.
#[derive(Clone, Debug, Default)]
pub struct Reaction {
    terms: Vec<(Vec<f64>, DMatrix<f64>)>,
}

impl Reaction {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn scaled(profile: Vec<f64>, matrix: DMatrix<f64>) -> Self {
        Self {
            terms: vec![(profile, matrix)],
        }
    }

    pub fn push(&mut self, profile: Vec<f64>, matrix: DMatrix<f64>) {
        self.terms.push((profile, matrix));
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// `B(x_p)` at grid index `p`.
    pub fn at(&self, p: usize, r: usize) -> DMatrix<f64> {
        let mut b = DMatrix::zeros(r, r);
        for (profile, m) in &self.terms {
            b += m * profile[p];
        }
        b
    }

    /// `-B(x) u(x)` stored row-wise like the family values.
    pub fn evaluate(&self, u: &FunctionFamily) -> DMatrix<f64> {
        let values = u.values();
        let mut out = DMatrix::zeros(values.nrows(), values.ncols());
        for (profile, m) in &self.terms {
            let mt = values * m.transpose();
            for (p, &s) in profile.iter().enumerate() {
                for j in 0..values.ncols() {
                    out[(p, j)] -= s * mt[(p, j)];
                }
            }
        }
        out
    }

    /// Exact flow of `u_t = -B(x) u` over time `t`.
    pub fn flow(&self, u: &mut FunctionFamily, t: f64) {
        if t == 0.0 || self.terms.is_empty() {
            return;
        }
        let r = u.count();
        if self.terms.len() == 1 {
            let (profile, m) = &self.terms[0];
            let scale: Vec<f64> = profile.iter().map(|s| -t * s).collect();
            SkewExponential::new(m).apply_rows(u.values_mut(), &scale);
            return;
        }
        let values = u.values_mut();
        for p in 0..values.nrows() {
            let prop = expm_skew(&(self.at(p, r) * (-t)));
            let row = values.row(p).transpose();
            let new = prop * row;
            values.set_row(p, &new.transpose());
        }
    }
}

/// One sub-flow step of length `tau` for a state-dependent coupling.
/// `coupling` builds `B(x)` from the state it is handed. [`SubSolver::Split`]
/// evaluates it twice, at the start of the rotation and again after half a
/// predicted rotation, so the coupling is taken at the midpoint of the
/// reaction; [`SubSolver::ExponentialEuler`] evaluates it once at the
/// initial state.
pub fn propagate<F>(
    solver: SubSolver,
    u: &FunctionFamily,
    advection: &Advection,
    coupling: F,
    tau: f64,
) -> FunctionFamily
where
    F: Fn(&FunctionFamily) -> Reaction,
{
    if tau == 0.0 {
        return u.clone();
    }
    match solver {
        SubSolver::Split => {
            let mut out = u.clone();
            advection.advect(&mut out, 0.5 * tau);
            let mut predicted = out.clone();
            coupling(&out).flow(&mut predicted, 0.5 * tau);
            coupling(&predicted).flow(&mut out, tau);
            advection.advect(&mut out, 0.5 * tau);
            out
        }
        SubSolver::ExponentialEuler => exponential_euler(u, advection, &coupling(u), tau),
    }
}

/// [`propagate`] for a coupling that does not depend on the state.
pub fn propagate_fixed(
    solver: SubSolver,
    u: &FunctionFamily,
    advection: &Advection,
    reaction: &Reaction,
    tau: f64,
) -> FunctionFamily {
    if tau == 0.0 {
        return u.clone();
    }
    match solver {
        SubSolver::Split => {
            let mut out = u.clone();
            advection.advect(&mut out, 0.5 * tau);
            reaction.flow(&mut out, tau);
            advection.advect(&mut out, 0.5 * tau);
            out
        }
        SubSolver::ExponentialEuler => exponential_euler(u, advection, reaction, tau),
    }
}

/// `u^(k)(tau) = e^{tau A(k)} u^(k)(0) + tau phi_1(tau A(k)) F(u(0))^(k)` per
/// Fourier mode, with `A(k) = -i k G` diagonal in the eigenbasis of `G`.
pub fn exponential_euler(
    u: &FunctionFamily,
    advection: &Advection,
    reaction: &Reaction,
    tau: f64,
) -> FunctionFamily {
    let grid = u.grid().clone();
    let n = grid.len();
    let forcing = reaction.evaluate(u) * &advection.basis;
    let mut eigen = u.values() * &advection.basis;
    let mut ub = vec![Complex64::new(0.0, 0.0); n];
    let mut fb = vec![Complex64::new(0.0, 0.0); n];
    for j in 0..eigen.ncols() {
        let speed = advection.speeds[j];
        for p in 0..n {
            ub[p] = Complex64::new(eigen[(p, j)], 0.0);
            fb[p] = Complex64::new(forcing[(p, j)], 0.0);
        }
        grid.forward(&mut ub);
        grid.forward(&mut fb);
        for ((zu, zf), &k) in ub.iter_mut().zip(&fb).zip(grid.derivative_wavenumbers()) {
            let z = Complex64::new(0.0, -k * speed * tau);
            *zu = z.exp() * *zu + phi1(z) * *zf * tau;
        }
        grid.inverse(&mut ub);
        for p in 0..n {
            eigen[(p, j)] = ub[p].re;
        }
    }
    let mut out = u.clone();
    *out.values_mut() = eigen * advection.basis.transpose();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use std::f64::consts::PI;

    #[test]
    fn phi1_branches_agree() {
        for &z in &[
            Complex64::new(0.0, 0.0),
            Complex64::new(1e-5, -3e-5),
            Complex64::new(0.0, 9e-5),
        ] {
            let series = Complex64::new(1.0, 0.0) + z / 2.0 + z * z / 6.0 + z * z * z / 24.0 + z.powi(4) / 120.0;
            assert!((phi1(z) - series).norm() < 1e-15, "z = {z}");
        }
        // just above the switch the closed form still agrees with the series
        let z = Complex64::new(0.0, 1.1e-4);
        let series = Complex64::new(1.0, 0.0) + z / 2.0 + z * z / 6.0;
        assert!((phi1(z) - series).norm() < 1e-11);
    }

    #[test]
    fn advection_translates_eigencomponents() {
        let grid = Grid::new(64, 0.0, 2.0 * PI).unwrap();
        // speeds 0.5 and -1.5 in a rotated basis
        let c = (0.3_f64).cos();
        let s = (0.3_f64).sin();
        let t = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
        let g = &t * DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, -1.5])) * t.transpose();
        let adv = Advection::new(&g);
        let w0 = |x: f64| (x.sin()).exp();
        let w1 = |x: f64| (2.0 * x).cos();
        let u0 = FunctionFamily::from_fn(grid.clone(), 2, |j, x| {
            // u = T w
            if j == 0 {
                c * w0(x) - s * w1(x)
            } else {
                s * w0(x) + c * w1(x)
            }
        });
        let mut u = u0.clone();
        adv.advect(&mut u, 0.7);
        for (p, x) in grid.points().into_iter().enumerate() {
            let a = w0(x - 0.5 * 0.7);
            let b = w1(x + 1.5 * 0.7);
            assert!((u.values()[(p, 0)] - (c * a - s * b)).abs() < 1e-12);
            assert!((u.values()[(p, 1)] - (s * a + c * b)).abs() < 1e-12);
        }
    }

    #[test]
    fn split_and_exponential_euler_agree_to_first_order() {
        let grid = Grid::new(32, 0.0, 2.0 * PI).unwrap();
        let g = DMatrix::from_row_slice(2, 2, &[0.4, 0.1, 0.1, -0.2]);
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let profile: Vec<f64> = grid.points().iter().map(|x| 0.3 * x.cos()).collect();
        let u0 = FunctionFamily::from_fn(grid.clone(), 2, |j, x| ((j + 1) as f64 * x).sin() + 1.0);
        let adv = Advection::new(&g);
        let mut errs = Vec::new();
        for &tau in &[0.02, 0.01] {
            let reaction = Reaction::scaled(profile.clone(), m.clone());
            let a = propagate_fixed(SubSolver::Split, &u0, &adv, &reaction, tau);
            let b = propagate_fixed(SubSolver::ExponentialEuler, &u0, &adv, &reaction, tau);
            errs.push((a.values() - b.values()).amax());
        }
        // local difference is O(tau^2)
        let ratio = errs[0] / errs[1];
        assert!(ratio > 3.0 && ratio < 5.0, "ratio {ratio}");
    }

    #[test]
    fn reaction_flow_preserves_pointwise_norm() {
        let grid = Grid::new(16, 0.0, 1.0).unwrap();
        let m1 = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 2.0, -1.0, 0.0, 0.5, -2.0, -0.5, 0.0]);
        let m2 = DMatrix::from_row_slice(3, 3, &[0.0, -0.3, 0.0, 0.3, 0.0, 1.0, 0.0, -1.0, 0.0]);
        let mut reaction = Reaction::new();
        reaction.push(grid.points(), m1);
        reaction.push(vec![1.0; 16], m2);
        let u0 = FunctionFamily::from_fn(grid, 3, |j, x| (j as f64 + x).cos());
        let mut u = u0.clone();
        reaction.flow(&mut u, 0.9);
        for p in 0..16 {
            let a = u0.values().row(p).norm();
            let b = u.values().row(p).norm();
            assert!((a - b).abs() < 1e-13);
        }
    }
}
