//! Rank-r projector-splitting integrator for one space and one velocity
//! dimension: `f(x, v) = sum_ij X_i(x) S_ij V_j(v)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Result};
use crate::field::{density_values, poisson_values, ChargeDensity, ElectricField};
use crate::grid::{orthonormalize, FunctionFamily, Grid};
use crate::linalg::{rk4, spectral_norm, RK4_STEP_NORM};
use crate::propagate::{propagate, propagate_fixed, Advection, Reaction, SubSolver};

/// Orthonormality tolerance checked on construction.
pub const ORTHONORMALITY_TOL: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct LowRankState2D {
    pub x: FunctionFamily,
    pub s: DMatrix<f64>,
    pub v: FunctionFamily,
    pub t: f64,
}

pub(crate) fn orthonormality_defect(f: &FunctionFamily) -> f64 {
    let r = f.count();
    (f.gram(f) - DMatrix::identity(r, r)).amax()
}

impl LowRankState2D {
    pub fn new(x: FunctionFamily, s: DMatrix<f64>, v: FunctionFamily, t: f64) -> Result<Self> {
        let r = x.count();
        if v.count() != r || s.nrows() != r || s.ncols() != r {
            return invalid(format!(
                "rank mismatch: {} x-functions, {}x{} coupling, {} v-functions",
                r,
                s.nrows(),
                s.ncols(),
                v.count()
            ));
        }
        for (fam, name) in [(&x, "x"), (&v, "v")] {
            let defect = orthonormality_defect(fam);
            if defect > ORTHONORMALITY_TOL {
                return invalid(format!("{name}-basis is not orthonormal (defect {defect:.2e})"));
            }
        }
        Ok(Self { x, s, v, t })
    }

    /// Builds a rank-`rank` state from arbitrary (not necessarily orthonormal)
    /// factors `f = sum_ij x_i s_ij v_j` with at most `rank` members each.
    /// Missing directions are filled with low Fourier modes and zero
    /// couplings.
    pub fn from_factors(x: &FunctionFamily, s: &DMatrix<f64>, v: &FunctionFamily, rank: usize, t: f64) -> Result<Self> {
        if x.count() > rank || v.count() > rank {
            return invalid(format!(
                "initial data needs rank {} but only {rank} was requested",
                x.count().max(v.count())
            ));
        }
        if s.nrows() != x.count() || s.ncols() != v.count() {
            return invalid("coupling shape does not match the factor counts");
        }
        let pad = |f: &FunctionFamily| {
            let mut values = DMatrix::zeros(f.grid().len(), rank);
            values.columns_mut(0, f.count()).copy_from(f.values());
            orthonormalize(&FunctionFamily::new(f.grid().clone(), values).expect("padded shape"))
        };
        let (qx, rx) = pad(x);
        let (qv, rv) = pad(v);
        let mut core = DMatrix::zeros(rank, rank);
        core.view_mut((0, 0), (s.nrows(), s.ncols())).copy_from(s);
        let coupling = &rx * core * rv.transpose();
        Self::new(qx, coupling, qv, t)
    }

    pub fn rank(&self) -> usize {
        self.s.nrows()
    }

    pub fn x_grid(&self) -> &Grid {
        self.x.grid()
    }

    pub fn v_grid(&self) -> &Grid {
        self.v.grid()
    }

    /// `K_j = sum_i X_i S_ij`.
    pub fn k(&self) -> FunctionFamily {
        self.x.combine(&self.s)
    }

    /// `L_i = sum_j S_ij V_j`.
    pub fn l(&self) -> FunctionFamily {
        self.v.combine(&self.s.transpose())
    }

    pub fn l2_norm(&self) -> f64 {
        self.s.norm()
    }

    pub fn mass(&self) -> f64 {
        self.x.integrals().dot(&(&self.s * self.v.integrals()))
    }

    pub fn kinetic_energy(&self) -> f64 {
        let v2: Vec<f64> = self.v_grid().points().iter().map(|v| v * v).collect();
        0.5 * self.x.integrals().dot(&(&self.s * self.v.weighted_integrals(&v2)))
    }

    pub fn charge_density(&self) -> ChargeDensity {
        ChargeDensity {
            grid: self.x_grid().clone(),
            values: density_values(&self.k(), &self.v),
        }
    }

    pub fn electric_field(&self) -> ElectricField {
        ElectricField {
            grid: self.x_grid().clone(),
            values: poisson_values(&density_values(&self.k(), &self.v), self.x_grid()),
        }
    }

    /// Dense `n_x x n_v` table of `f`.
    pub fn to_dense(&self) -> DMatrix<f64> {
        self.x.values() * &self.s * self.v.values().transpose()
    }
}

/// `c1_jl = <V_j, v V_l>`, `c2_jl = <V_j, V_l'>`.
pub fn compute_c(v: &FunctionFamily) -> (DMatrix<f64>, DMatrix<f64>) {
    let points = v.grid().points();
    (v.weighted_gram(&points, v), v.gram(&v.derivative()))
}

/// `d1_ik = <X_i, E X_k>`, `d2_ik = <X_i, X_k'>`.
pub fn compute_d(x: &FunctionFamily, e: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
    (x.weighted_gram(e, x), x.gram(&x.derivative()))
}

/// Whether the field is computed from the state or switched off.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum FieldModel {
    #[default]
    SelfConsistent,
    /// `E = 0`: free streaming.
    Zero,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Splitting {
    Lie,
    #[default]
    Strang,
}

/// Sub-steps per K-flow used unless configured otherwise.
pub const DEFAULT_FIELD_SUBSTEPS: usize = 4;

#[derive(Clone, Copy, Debug)]
pub struct Integrator2D {
    pub solver: SubSolver,
    pub field: FieldModel,
    /// Number of sub-solver steps the K-flow is divided into. That flow
    /// carries the self-consistent field, and its sub-solver error is what
    /// keeps the K and S contributions to the mass from cancelling.
    pub field_substeps: usize,
}

impl Default for Integrator2D {
    fn default() -> Self {
        Self::new(SubSolver::default(), FieldModel::default())
    }
}

impl Integrator2D {
    pub fn new(solver: SubSolver, field: FieldModel) -> Self {
        Self {
            solver,
            field,
            field_substeps: DEFAULT_FIELD_SUBSTEPS,
        }
    }

    pub fn with_field_substeps(mut self, substeps: usize) -> Self {
        self.field_substeps = substeps.max(1);
        self
    }

    /// Field of `f = sum_j k_j v_j` (also usable as `sum_i x_i l_i`).
    fn field_of(&self, k: &FunctionFamily, v: &FunctionFamily) -> Vec<f64> {
        match self.field {
            FieldModel::SelfConsistent => poisson_values(&density_values(k, v), k.grid()),
            FieldModel::Zero => vec![0.0; k.grid().len()],
        }
    }

    /// `K_t = -c1 K_x + c2 E(K) K` with `V` fixed.
    pub fn k_step(&self, k: &FunctionFamily, v: &FunctionFamily, c1: &DMatrix<f64>, c2: &DMatrix<f64>, tau: f64) -> FunctionFamily {
        let advection = Advection::new(c1);
        let coupling = |kk: &FunctionFamily| {
            let e = self.field_of(kk, v);
            Reaction::scaled(e.iter().map(|v| -v).collect(), c2.clone())
        };
        let h = tau / self.field_substeps as f64;
        let mut k = k.clone();
        for _ in 0..self.field_substeps {
            k = propagate(self.solver, &k, &advection, coupling, h);
        }
        k
    }

    /// `S' = d2 S c1^T - d1[E(S)] S c2^T` with `X`, `V` fixed and the field
    /// recomputed from `S` at every stage.
    pub fn s_step(&self, x: &FunctionFamily, s: &DMatrix<f64>, v: &FunctionFamily, c1: &DMatrix<f64>, c2: &DMatrix<f64>, tau: f64) -> DMatrix<f64> {
        if tau == 0.0 {
            return s.clone();
        }
        let d2 = x.gram(&x.derivative());
        let d1_of = |s: &DMatrix<f64>| x.weighted_gram(&self.field_of(&x.combine(s), v), x);
        // the field term is quadratic in S, hence the factor two in its Lipschitz bound
        let bound = spectral_norm(&d2) * spectral_norm(c1) + 2.0 * spectral_norm(&d1_of(s)) * spectral_norm(c2);
        rk4(s, |y| &d2 * y * c1.transpose() - d1_of(y) * y * c2.transpose(), bound, tau, RK4_STEP_NORM)
    }

    /// `L_t = d1 L_v - v d2 L` with `X` and `d1` fixed.
    pub fn l_step(&self, l: &FunctionFamily, d1: &DMatrix<f64>, d2: &DMatrix<f64>, tau: f64) -> FunctionFamily {
        let advection = Advection::new(&(-d1));
        let points = l.grid().points();
        propagate_fixed(self.solver, l, &advection, &Reaction::scaled(points, d2.clone()), tau)
    }

    fn k_substep(&self, x: &FunctionFamily, s: &DMatrix<f64>, v: &FunctionFamily, tau: f64) -> (FunctionFamily, DMatrix<f64>) {
        let (c1, c2) = compute_c(v);
        let k = self.k_step(&x.combine(s), v, &c1, &c2, tau);
        orthonormalize(&k)
    }

    fn s_substep(&self, x: &FunctionFamily, s: &DMatrix<f64>, v: &FunctionFamily, tau: f64) -> DMatrix<f64> {
        let (c1, c2) = compute_c(v);
        self.s_step(x, s, v, &c1, &c2, tau)
    }

    /// Returns the new `V` and coupling.
    fn l_substep(&self, x: &FunctionFamily, l: &FunctionFamily, d1: &DMatrix<f64>, tau: f64) -> (FunctionFamily, DMatrix<f64>) {
        let d2 = x.gram(&x.derivative());
        let (v, r) = orthonormalize(&self.l_step(l, d1, &d2, tau));
        (v, r.transpose())
    }

    fn d1_from_l(&self, x: &FunctionFamily, l: &FunctionFamily) -> DMatrix<f64> {
        x.weighted_gram(&self.field_of(x, l), x)
    }

    pub fn lie_step(&self, state: &LowRankState2D, tau: f64) -> LowRankState2D {
        let (x1, s1) = self.k_substep(&state.x, &state.s, &state.v, tau);
        let s2 = self.s_substep(&x1, &s1, &state.v, tau);
        let l = state.v.combine(&s2.transpose());
        let d1 = self.d1_from_l(&x1, &l);
        let (v1, s3) = self.l_substep(&x1, &l, &d1, tau);
        LowRankState2D { x: x1, s: s3, v: v1, t: state.t + tau }
    }

    pub fn strang_step(&self, state: &LowRankState2D, tau: f64) -> LowRankState2D {
        let half = 0.5 * tau;
        let (x1, s1) = self.k_substep(&state.x, &state.s, &state.v, half);
        let s2 = self.s_substep(&x1, &s1, &state.v, half);
        let l0 = state.v.combine(&s2.transpose());
        let d1 = self.d1_from_l(&x1, &l0);
        let d2 = x1.gram(&x1.derivative());
        let l_half = self.l_step(&l0, &d1, &d2, half);
        let d1_half = self.d1_from_l(&x1, &l_half);
        let (v1, s3) = self.l_substep(&x1, &l0, &d1_half, tau);
        let s4 = self.s_substep(&x1, &s3, &v1, half);
        let (x2, s5) = self.k_substep(&x1, &s4, &v1, half);
        LowRankState2D { x: x2, s: s5, v: v1, t: state.t + tau }
    }

    pub fn step(&self, state: &LowRankState2D, tau: f64, splitting: Splitting) -> LowRankState2D {
        match splitting {
            Splitting::Lie => self.lie_step(state, tau),
            Splitting::Strang => self.strang_step(state, tau),
        }
    }
}

/// Values `sum_ij X_i(x_p) S_ij V_j(v_q)` at index pairs.
pub fn evaluate_at(state: &LowRankState2D, points: &[(usize, usize)]) -> Vec<f64> {
    points
        .iter()
        .map(|&(p, q)| {
            let xr: DVector<f64> = state.x.values().row(p).transpose();
            let vr: DVector<f64> = state.v.values().row(q).transpose();
            xr.dot(&(&state.s * vr))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn grids() -> (Grid, Grid) {
        (Grid::new(32, 0.0, 4.0 * PI).unwrap(), Grid::new(64, -6.0, 6.0).unwrap())
    }

    fn landau(rank: usize) -> LowRankState2D {
        let (gx, gv) = grids();
        let x = FunctionFamily::from_fn(gx, 1, |_, x| 1.0 + 0.01 * (0.5 * x).cos());
        let v = FunctionFamily::from_fn(gv, 1, |_, v| (-v * v / 2.0).exp() / (2.0 * PI).sqrt());
        LowRankState2D::from_factors(&x, &DMatrix::identity(1, 1), &v, rank, 0.0).unwrap()
    }

    #[test]
    fn padded_state_reproduces_data() {
        let st = landau(4);
        assert!(orthonormality_defect(&st.x) < 1e-13);
        let (gx, gv) = grids();
        let dense = st.to_dense();
        for (p, x) in gx.points().iter().enumerate() {
            for (q, v) in gv.points().iter().enumerate() {
                let f = (1.0 + 0.01 * (0.5 * x).cos()) * (-v * v / 2.0).exp() / (2.0 * PI).sqrt();
                assert!((dense[(p, q)] - f).abs() < 1e-12);
            }
        }
        assert!(LowRankState2D::from_factors(&st.x, &st.s, &st.v, 3, 0.0).is_err());
    }

    #[test]
    fn coefficient_structure() {
        let (_, gv) = grids();
        let c = FunctionFamily::from_fn(gv.clone(), 1, |_, _| 1.0 / 12f64.sqrt());
        let (c1, c2) = compute_c(&c);
        // the grid starts at -6 and stops short of 6, so sum_i v_i = -6 exactly
        assert!((c1[(0, 0)] + 0.5 * gv.spacing()).abs() < 1e-14);
        assert!(c2[(0, 0)].abs() < 1e-14);
        let st = landau(5);
        let (c1, c2) = compute_c(&st.v);
        assert!((&c1 - c1.transpose()).amax() < 1e-10);
        assert!((&c2 + c2.transpose()).amax() < 1e-10);
        let e = st.electric_field();
        let (d1, d2) = compute_d(&st.x, &e.values);
        assert!((&d1 - d1.transpose()).amax() < 1e-10);
        assert!((&d2 + d2.transpose()).amax() < 1e-10);
    }

    fn midpoint(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
        let n = 400_000;
        let h = (b - a) / n as f64;
        (0..n).map(|i| f(a + (i as f64 + 0.5) * h)).sum::<f64>() * h
    }

    #[test]
    fn fourier_mode_coefficients_match_quadrature() {
        let (_, gv) = grids();
        let v = FunctionFamily::from_columns(gv.clone(), &[gv.fourier_mode(1), gv.fourier_mode(2)]).unwrap();
        let (_, c2) = compute_c(&v);
        let w = 2.0 * PI / 12.0;
        let d = midpoint(|v| (w * (v + 6.0)).cos().powi(2) * w / 6.0, -6.0, 6.0);
        assert!((c2[(0, 1)] - d).abs() < 1e-10);
        assert!((c2[(1, 0)] + d).abs() < 1e-10);
        assert!(c2[(0, 0)].abs() < 1e-12);

        // v-weighted integrals are only spectrally accurate for members that
        // vanish at the ends of the periodic velocity box
        let g0 = |v: f64| (-v * v / 2.0).exp();
        let g1 = |v: f64| v * (-v * v / 2.0).exp();
        let fam = FunctionFamily::from_fn(gv, 2, |j, v| if j == 0 { g0(v) } else { g1(v) });
        let (c1, _) = compute_c(&fam);
        assert!((c1[(0, 1)] - midpoint(|v| v * g0(v) * g1(v), -6.0, 6.0)).abs() < 1e-10);
        assert!((c1[(1, 1)] - midpoint(|v| v * g1(v) * g1(v), -6.0, 6.0)).abs() < 1e-10);
    }

    #[test]
    fn zero_step_is_identity_up_to_gauge() {
        let st = landau(3);
        let int = Integrator2D::default();
        for split in [Splitting::Lie, Splitting::Strang] {
            let next = int.step(&st, 0.0, split);
            assert!((next.to_dense() - st.to_dense()).amax() < 1e-14);
        }
    }

    #[test]
    fn maxwellian_k_step_is_trivial() {
        let (gx, gv) = grids();
        let v = FunctionFamily::from_fn(gv, 1, |_, v| (-v * v / 2.0).exp());
        let (v, _) = orthonormalize(&v);
        let (c1, c2) = compute_c(&v);
        assert!(c1.amax() < 1e-14 && c2.amax() < 1e-14);
        let k = FunctionFamily::from_fn(gx, 1, |_, x| 2.0 + x.sin());
        let out = Integrator2D::default().k_step(&k, &v, &c1, &c2, 0.3);
        assert!((out.values() - k.values()).amax() < 1e-13);
    }

    #[test]
    fn l_step_translates_with_diagonal_d1() {
        let (_, gv) = grids();
        let l = FunctionFamily::from_fn(gv.clone(), 2, |j, v| (-(v - j as f64).powi(2)).exp());
        let d1 = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, -0.25]));
        let out = Integrator2D::default().l_step(&l, &d1, &DMatrix::zeros(2, 2), 0.8);
        // L_t = d1 L_v: shift towards negative v by d1 * t
        for (q, v) in gv.points().iter().enumerate() {
            assert!((out.values()[(q, 0)] - (-(v + 0.4f64).powi(2)).exp()).abs() < 1e-10);
            assert!((out.values()[(q, 1)] - (-(v - 0.2 - 1.0f64).powi(2)).exp()).abs() < 1e-10);
        }
    }

    #[test]
    fn s_step_matches_exponential_with_zero_field() {
        let st = landau(3);
        let int = Integrator2D::new(SubSolver::Split, FieldModel::Zero);
        let (c1, c2) = compute_c(&st.v);
        let d2 = st.x.gram(&st.x.derivative());
        let s = DMatrix::from_fn(3, 3, |i, j| (i as f64 - j as f64 * 0.5).sin());
        let out = int.s_step(&st.x, &s, &st.v, &c1, &c2, 0.025);
        // vec(S)' = (c1 (x) d2) vec(S) for column-major vec
        let gen = c1.kronecker(&d2);
        let exact = (gen * 0.025).exp() * DVector::from_column_slice(s.as_slice());
        assert!((DVector::from_column_slice(out.as_slice()) - exact).amax() < 1e-12);
    }

    #[test]
    fn gauge_invariant_observables() {
        let st = Integrator2D::default().strang_step(&landau(4), 0.1);
        let q1 = crate::linalg::expm_skew(&DMatrix::from_fn(4, 4, |i, j| (i as f64 - j as f64) * 0.3));
        let q2 = crate::linalg::expm_skew(&DMatrix::from_fn(4, 4, |i, j| ((i * j) as f64).sin() - ((j * i) as f64).sin() + (i as f64 - j as f64)));
        let rot = LowRankState2D::new(st.x.combine(&q1), q1.transpose() * &st.s * &q2, st.v.combine(&q2), st.t).unwrap();
        assert!((rot.mass() - st.mass()).abs() < 1e-12);
        assert!((rot.l2_norm() - st.l2_norm()).abs() < 1e-12);
        assert!((rot.kinetic_energy() - st.kinetic_energy()).abs() < 1e-12);
        let (a, b) = (rot.electric_field(), st.electric_field());
        assert!(a.values.iter().zip(&b.values).all(|(p, q)| (p - q).abs() < 1e-12));
    }
}
