//! Dense full-grid split-step solver for one space and one velocity
//! dimension. Used as a reference for the low-rank integrators.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::diagnostics::Observables;
use crate::field::{electric_energy, poisson_values, ElectricField};
use crate::grid::Grid;
use crate::lowrank::FieldModel;

/// `f` sampled on `n_x x n_v` points.
#[derive(Clone, Debug)]
pub struct DenseState {
    pub gx: Grid,
    pub gv: Grid,
    pub f: DMatrix<f64>,
    pub t: f64,
}

impl DenseState {
    pub fn from_fn(gx: &Grid, gv: &Grid, f: impl Fn(f64, f64) -> f64) -> Self {
        let xs = gx.points();
        let vs = gv.points();
        Self {
            gx: gx.clone(),
            gv: gv.clone(),
            f: DMatrix::from_fn(gx.len(), gv.len(), |p, q| f(xs[p], vs[q])),
            t: 0.0,
        }
    }

    pub fn charge_density(&self) -> Vec<f64> {
        let h = self.gv.spacing();
        self.f.row_iter().map(|row| -h * row.sum()).collect()
    }

    pub fn electric_field(&self) -> ElectricField {
        ElectricField {
            grid: self.gx.clone(),
            values: poisson_values(&self.charge_density(), &self.gx),
        }
    }
}

impl Observables for DenseState {
    fn time(&self) -> f64 {
        self.t
    }
    fn mass(&self) -> f64 {
        self.f.sum() * self.gx.spacing() * self.gv.spacing()
    }
    fn kinetic_energy(&self) -> f64 {
        let vs = self.gv.points();
        let weights = nalgebra::DVector::from_iterator(vs.len(), vs.iter().map(|v| 0.5 * v * v));
        (&self.f * weights).sum() * self.gx.spacing() * self.gv.spacing()
    }
    fn electric_energy(&self) -> f64 {
        electric_energy(&self.electric_field())
    }
    fn l2_norm(&self) -> f64 {
        self.f.norm() * (self.gx.spacing() * self.gv.spacing()).sqrt()
    }
}

/// Shifts every column (or every row) of `table` by its
/// own distance: `g(y) <- g(y - shift)`.
fn shift_lines(table: &mut DMatrix<f64>, grid: &Grid, shifts: &[f64], along_columns: bool) {
    let n = grid.len();
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let lines = if along_columns { table.ncols() } else { table.nrows() };
    for line in 0..lines {
        for i in 0..n {
            let v = if along_columns { table[(i, line)] } else { table[(line, i)] };
            buf[i] = Complex64::new(v, 0.0);
        }
        grid.forward(&mut buf);
        for (z, &k) in buf.iter_mut().zip(grid.derivative_wavenumbers()) {
            let phase = -k * shifts[line];
            *z *= Complex64::new(phase.cos(), phase.sin());
        }
        grid.inverse(&mut buf);
        for i in 0..n {
            if along_columns {
                table[(i, line)] = buf[i].re;
            } else {
                table[(line, i)] = buf[i].re;
            }
        }
    }
}

/// Strang split step: half x-advection, full v-advection in the field of
/// the intermediate state, half x-advection.
pub fn eulerian_reference_step(state: &DenseState, tau: f64, field: FieldModel) -> DenseState {
    let mut next = state.clone();
    let half: Vec<f64> = state.gv.points().iter().map(|v| v * 0.5 * tau).collect();
    shift_lines(&mut next.f, &state.gx, &half, true);
    let e = match field {
        FieldModel::SelfConsistent => next.electric_field().values,
        FieldModel::Zero => vec![0.0; state.gx.len()],
    };
    // f_t = E f_v, so f(v) <- f(v + E tau)
    let kick: Vec<f64> = e.iter().map(|e| -e * tau).collect();
    shift_lines(&mut next.f, &state.gv, &kick, false);
    shift_lines(&mut next.f, &state.gx, &half, true);
    next.t += tau;
    next
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn free_streaming_matches_analytic() {
        let gx = Grid::new(32, 0.0, 4.0 * PI).unwrap();
        let gv = Grid::new(128, -6.0, 6.0).unwrap();
        let f0 = |x: f64, v: f64| (0.5 * x).cos() * (-v * v / 2.0).exp();
        let mut st = DenseState::from_fn(&gx, &gv, f0);
        for _ in 0..20 {
            st = eulerian_reference_step(&st, 0.05, FieldModel::Zero);
        }
        let exact = DenseState::from_fn(&gx, &gv, |x, v| f0(x - v * 1.0, v));
        assert!((st.f - exact.f).amax() < 1e-12);
    }

    #[test]
    fn landau_initial_energy() {
        let gx = Grid::new(64, 0.0, 4.0 * PI).unwrap();
        let gv = Grid::new(256, -6.0, 6.0).unwrap();
        let st = DenseState::from_fn(&gx, &gv, |x, v| (1.0 + 0.01 * (0.5 * x).cos()) * (-v * v / 2.0).exp() / (2.0 * PI).sqrt());
        assert!((st.electric_energy() - 4.0 * PI * 1e-4).abs() < 1e-11);
    }
}
