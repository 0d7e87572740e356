//! Hierarchical integrator for two space and two velocity dimensions.
//!
//! `f = sum_ij X_i S_ij V_j`, where every `X_i` (and every `V_j`) is a Tucker
//! tensor `sum_ab first_a(y1) C_i[a, b] second_b(y2)` over two orthonormal 1D
//! families. Both halves of a step run one sweep on the generic flow
//!
//! `K_j' = -sum_l (G0_jl d/dy1 + G1_jl d/dy2) K_l - sum_m sum_l P_m,jl F_m K_l`
//!
//! with `F = -E` for the space half and `F_m = v_m` for the velocity half.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Result};
use crate::field::{lowrank_field, solve_poisson_2d, ChargeDensity2D, ElectricField2D, SeparableComponent, Truncation};
use crate::grid::{orthonormalize, FunctionFamily, RANK_DEFICIENCY_TOL};
use crate::linalg::{qr, rk4, spectral_norm, RK4_STEP_NORM};
use crate::lowrank::{FieldModel, DEFAULT_FIELD_SUBSTEPS};
use crate::propagate::{propagate, propagate_fixed, Advection, Reaction, SubSolver};

const ORTHONORMALITY_TOL: f64 = 1e-10;

/// `r` functions of two variables as core slices over two 1D families.
#[derive(Clone, Debug)]
pub struct TuckerFactor {
    pub core: Vec<DMatrix<f64>>,
    pub first: FunctionFamily,
    pub second: FunctionFamily,
}

fn check_orthonormal(family: &FunctionFamily, what: &str) -> Result<()> {
    let n = family.count();
    let dev = (family.gram(family) - DMatrix::identity(n, n)).amax();
    if dev > ORTHONORMALITY_TOL {
        return invalid(format!("{what} family is not orthonormal (deviation {dev:.2e})"));
    }
    Ok(())
}

impl TuckerFactor {
    pub fn new(core: Vec<DMatrix<f64>>, first: FunctionFamily, second: FunctionFamily) -> Result<Self> {
        let (r1, r2) = (first.count(), second.count());
        if core.is_empty() || r1 == 0 || r2 == 0 {
            return invalid("a Tucker factor needs at least one slice and one member per family");
        }
        if let Some(c) = core.iter().find(|c| c.shape() != (r1, r2)) {
            return invalid(format!(
                "core slice is {}x{} but the families have {r1} and {r2} members",
                c.nrows(),
                c.ncols()
            ));
        }
        let r = core.len();
        if r1 > r * r2 || r2 > r * r1 || r > r1 * r2 {
            return invalid(format!("Tucker ranks ({r}, {r1}, {r2}) are not compatible"));
        }
        check_orthonormal(&first, "first")?;
        check_orthonormal(&second, "second")?;
        Ok(Self { core, first, second })
    }

    pub fn rank(&self) -> usize {
        self.core.len()
    }

    /// `(r, r1, r2)`.
    pub fn ranks(&self) -> (usize, usize, usize) {
        (self.core.len(), self.first.count(), self.second.count())
    }

    /// Member `i` on the tensor grid, `n1 x n2`.
    pub fn table(&self, i: usize) -> DMatrix<f64> {
        self.first.values() * &self.core[i] * self.second.values().transpose()
    }

    pub fn value_at(&self, i: usize, p: usize, q: usize) -> f64 {
        (self.first.values().row(p) * &self.core[i] * self.second.values().row(q).transpose())[(0, 0)]
    }

    /// `sum_i weights_i C_i`.
    pub fn contract(&self, weights: &DVector<f64>) -> DMatrix<f64> {
        contract(&self.core, weights)
    }

    /// `int g1(y1) g2(y2) X_i(y1, y2)` for every member.
    pub fn weighted_integrals(&self, g1: &[f64], g2: &[f64]) -> DVector<f64> {
        let a = self.first.weighted_integrals(g1);
        let b = self.second.weighted_integrals(g2);
        DVector::from_iterator(self.rank(), self.core.iter().map(|c| a.dot(&(c * &b))))
    }

    pub fn integrals(&self) -> DVector<f64> {
        let g1 = vec![1.0; self.first.grid().len()];
        let g2 = vec![1.0; self.second.grid().len()];
        self.weighted_integrals(&g1, &g2)
    }

    /// `<X_j, (A (x) B) X_l>` for operators given by their matrices `A` on
    /// the first family and `B` on the second: `<C_j, A C_l B^T>`.
    pub fn pairing(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mapped: Vec<DMatrix<f64>> = self.core.iter().map(|c| a * c * b.transpose()).collect();
        DMatrix::from_fn(self.rank(), self.rank(), |j, l| self.core[j].dot(&mapped[l]))
    }

    /// `<X_j, X_l>`.
    pub fn slice_gram(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.rank(), self.rank(), |j, l| self.core[j].dot(&self.core[l]))
    }

    /// The same functions with the two variables swapped.
    pub fn transposed(&self) -> Self {
        Self {
            core: self.core.iter().map(|c| c.transpose()).collect(),
            first: self.second.clone(),
            second: self.first.clone(),
        }
    }

    /// Slices `sum_i C_i m_ij`.
    pub fn recombined(&self, m: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
        (0..m.ncols()).map(|j| contract(&self.core, &m.column(j).into_owned())).collect()
    }
}

fn contract(core: &[DMatrix<f64>], weights: &DVector<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(core[0].nrows(), core[0].ncols());
    for (c, &w) in core.iter().zip(weights.iter()) {
        out += c * w;
    }
    out
}

/// A function of two variables `first * core * second^T` over arbitrary
/// (not necessarily orthonormal) families.
#[derive(Clone, Debug)]
pub struct SeparableSum {
    pub first: FunctionFamily,
    pub core: DMatrix<f64>,
    pub second: FunctionFamily,
}

/// Full state on the two-level format.
#[derive(Clone, Debug)]
pub struct HierarchicalState4D {
    pub s: DMatrix<f64>,
    pub x: TuckerFactor,
    pub v: TuckerFactor,
    pub t: f64,
}

/// How a 1D family is completed to its rank.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Padding {
    /// Low Fourier modes.
    Fourier,
    /// Moments `y^m g(y)` of the first member `g`, then Fourier modes.
    Moments,
}

fn pad(family: &FunctionFamily, count: usize, padding: Padding, what: &str) -> Result<(FunctionFamily, DMatrix<f64>)> {
    let given = family.count();
    if given > count {
        return invalid(format!("{what} needs {given} members but the rank is {count}"));
    }
    if count > family.grid().len() {
        return invalid(format!("{what} rank {count} exceeds the {} grid points", family.grid().len()));
    }
    let mut values = DMatrix::zeros(family.grid().len(), count);
    values.columns_mut(0, given).copy_from(family.values());
    if padding == Padding::Moments {
        let points = family.grid().points();
        let base = family.member(0);
        for (m, j) in (given..count).enumerate() {
            for (i, (y, g)) in points.iter().zip(base).enumerate() {
                values[(i, j)] = y.powi(m as i32 + 1) * g;
            }
        }
    }
    let (q, r) = orthonormalize(&FunctionFamily::new(family.grid().clone(), values)?);
    Ok((q, r.columns(0, given).into_owned()))
}

/// Core positions `(a, b)` ordered so that the slices varying in one index
/// only come first, alternating between the two indices.
fn cross_order(r1: usize, r2: usize) -> Vec<(usize, usize)> {
    let mut out = vec![(0, 0)];
    for d in 1..r1.max(r2) {
        if d < r1 {
            out.push((d, 0));
        }
        if d < r2 {
            out.push((0, d));
        }
    }
    let mut mixed: Vec<(usize, usize)> = (1..r1).flat_map(|a| (1..r2).map(move |b| (a, b))).collect();
    mixed.sort_by_key(|&(a, b)| (a + b, a));
    out.extend(mixed);
    out
}

fn factor_from(f: &SeparableSum, rank: usize, count: usize, padding: Padding, what: &str) -> Result<(TuckerFactor, f64)> {
    if f.core.shape() != (f.first.count(), f.second.count()) {
        return invalid(format!("{what} core does not match its families"));
    }
    let (first, r1) = pad(&f.first, count, padding, what)?;
    let (second, r2) = pad(&f.second, count, padding, what)?;
    let core = &r1 * &f.core * r2.transpose();
    let norm = core.norm();
    if norm == 0.0 {
        return invalid(format!("{what} is identically zero"));
    }
    if rank > count * count {
        return invalid(format!("rank {rank} exceeds the {} available core slices", count * count));
    }
    // complete the data slice by unit slices in cross order
    let mut slices = vec![core / norm];
    for (a, b) in cross_order(count, count) {
        if slices.len() == rank {
            break;
        }
        let mut w = DMatrix::zeros(count, count);
        w[(a, b)] = 1.0;
        for _ in 0..2 {
            for s in &slices {
                w -= s * s.dot(&w);
            }
        }
        let n = w.norm();
        if n > 1e-6 {
            slices.push(w / n);
        }
    }
    let (core, _) = core_gram_schmidt(&slices);
    Ok((TuckerFactor::new(core, first, second)?, norm))
}

impl HierarchicalState4D {
    pub fn new(s: DMatrix<f64>, x: TuckerFactor, v: TuckerFactor, t: f64) -> Result<Self> {
        let r = s.nrows();
        if s.ncols() != r || x.rank() != r || v.rank() != r {
            return invalid(format!(
                "S is {}x{} but the factors have ranks {} and {}",
                s.nrows(),
                s.ncols(),
                x.rank(),
                v.rank()
            ));
        }
        for (factor, what) in [(&x, "x"), (&v, "v")] {
            let dev = (factor.slice_gram() - DMatrix::identity(r, r)).amax();
            if dev > ORTHONORMALITY_TOL {
                return invalid(format!("{what} core slices are not orthonormal (deviation {dev:.2e})"));
            }
        }
        Ok(Self { s, x, v, t })
    }

    /// `f = X(x) V(v)`, padded to ranks `(r, r_x, r_v)`. Space families are
    /// completed by Fourier modes, velocity families by the moments
    /// `v^m g(v)` of their first member, and the core slices by unit slices
    /// that vary in one index only before mixed ones, so the padded state
    /// already contains the directions of the linear response.
    pub fn from_product(x: &SeparableSum, v: &SeparableSum, ranks: (usize, usize, usize)) -> Result<Self> {
        let (r, rx, rv) = ranks;
        if r == 0 || rx == 0 || rv == 0 {
            return invalid("ranks must be at least 1");
        }
        let (xf, nx) = factor_from(x, r, rx, Padding::Fourier, "x factor")?;
        let (vf, nv) = factor_from(v, r, rv, Padding::Moments, "v factor")?;
        let mut s = DMatrix::zeros(r, r);
        s[(0, 0)] = nx * nv;
        Self::new(s, xf, vf, 0.0)
    }

    pub fn rank(&self) -> usize {
        self.s.nrows()
    }

    /// `(r, r_x, r_v)`.
    pub fn ranks(&self) -> (usize, usize, usize) {
        (self.rank(), self.x.first.count(), self.v.first.count())
    }

    pub fn l2_norm(&self) -> f64 {
        self.s.norm()
    }

    pub fn mass(&self) -> f64 {
        self.x.integrals().dot(&(&self.s * self.v.integrals()))
    }

    pub fn kinetic_energy(&self) -> f64 {
        let v1 = self.v.first.grid().points();
        let v2 = self.v.second.grid().points();
        let sq = |p: &[f64]| p.iter().map(|v| v * v).collect::<Vec<f64>>();
        let ones = |p: &[f64]| vec![1.0; p.len()];
        let weights = self.v.weighted_integrals(&sq(&v1), &ones(&v2)) + self.v.weighted_integrals(&ones(&v1), &sq(&v2));
        0.5 * self.x.integrals().dot(&(&self.s * weights))
    }

    /// Slices of `K_j = sum_i X_i S_ij`.
    pub fn k_core(&self) -> Vec<DMatrix<f64>> {
        self.x.recombined(&self.s)
    }

    pub fn electric_field(&self) -> ElectricField2D {
        let z = contract(&self.x.core, &(&self.s * self.v.integrals()));
        field_of(&self.x.first, &z, &self.x.second)
    }

    /// `f` at grid indices `(x1, x2, v1, v2)`.
    pub fn value_at(&self, (p1, p2, q1, q2): (usize, usize, usize, usize)) -> f64 {
        let r = self.rank();
        let xs = DVector::from_fn(r, |i, _| self.x.value_at(i, p1, p2));
        let vs = DVector::from_fn(r, |j, _| self.v.value_at(j, q1, q2));
        xs.dot(&(&self.s * vs))
    }

    /// Dense `(n_x1 n_x2) x (n_v1 n_v2)` table, rows and columns ordered with
    /// the first index fastest. Only for small grids.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let flatten = |f: &TuckerFactor| {
            let cols: Vec<DVector<f64>> = (0..f.rank())
                .map(|i| {
                    let t = f.table(i);
                    DVector::from_column_slice(t.as_slice())
                })
                .collect();
            DMatrix::from_columns(&cols)
        };
        flatten(&self.x) * &self.s * flatten(&self.v).transpose()
    }
}

/// Field of the charge `rho = -first Z second^T`.
pub fn field_of(first: &FunctionFamily, z: &DMatrix<f64>, second: &FunctionFamily) -> ElectricField2D {
    let rho = ChargeDensity2D {
        grid1: first.grid().clone(),
        grid2: second.grid().clone(),
        values: -(first.values() * z * second.values().transpose()),
    };
    solve_poisson_2d(&rho).expect("density table matches its grids")
}

/// The multiplier `F` of the generic flow.
#[derive(Clone, Debug)]
pub enum Forcing {
    /// `F = -E` for the charge `rho = -sum_j weights_j K_j`.
    Field { weights: DVector<f64>, rule: Truncation },
    /// `F_m = y_m`.
    Coordinate,
    Zero,
}

impl Forcing {
    /// Separable components of `F` for `K_j = first C_j second^T`.
    pub fn profiles(&self, first: &FunctionFamily, core: &[DMatrix<f64>], second: &FunctionFamily) -> [SeparableComponent; 2] {
        let (n1, n2) = (first.grid().len(), second.grid().len());
        match self {
            Forcing::Zero => [0, 1].map(|_| SeparableComponent {
                first: DMatrix::zeros(n1, 0),
                second: DMatrix::zeros(n2, 0),
            }),
            Forcing::Coordinate => [
                SeparableComponent {
                    first: DMatrix::from_vec(n1, 1, first.grid().points()),
                    second: DMatrix::from_element(n2, 1, 1.0),
                },
                SeparableComponent {
                    first: DMatrix::from_element(n1, 1, 1.0),
                    second: DMatrix::from_vec(n2, 1, second.grid().points()),
                },
            ],
            Forcing::Field { weights, rule } => {
                let e = lowrank_field(&field_of(first, &contract(core, weights), second), *rule);
                e.separable.expect("set by lowrank_field").map(|c| SeparableComponent {
                    first: -c.first,
                    second: c.second,
                })
            }
        }
    }

    fn is_static(&self) -> bool {
        !matches!(self, Forcing::Field { .. })
    }
}

/// [`Forcing`] seen from a factor update; `swapped` when the updated
/// direction is the second variable.
#[derive(Clone, Copy)]
struct Oriented<'a> {
    forcing: &'a Forcing,
    swapped: bool,
}

impl Oriented<'_> {
    fn profiles(&self, own: &FunctionFamily, core: &[DMatrix<f64>], other: &FunctionFamily) -> [SeparableComponent; 2] {
        if !self.swapped {
            return self.forcing.profiles(own, core, other);
        }
        let canonical: Vec<DMatrix<f64>> = core.iter().map(|c| c.transpose()).collect();
        self.forcing.profiles(other, &canonical, own).map(|c| SeparableComponent {
            first: c.second,
            second: c.first,
        })
    }
}

/// `<X, F_m X>` for both components of `F`.
pub fn profile_coefficients(x: &TuckerFactor, comps: &[SeparableComponent; 2]) -> [DMatrix<f64>; 2] {
    comps.clone().map(|c| {
        let mut out = DMatrix::zeros(x.rank(), x.rank());
        for mu in 0..c.rank() {
            let a = x.first.weighted_gram(c.first.column(mu).as_slice(), &x.first);
            let b = x.second.weighted_gram(c.second.column(mu).as_slice(), &x.second);
            out += x.pairing(&a, &b);
        }
        out
    })
}

/// `<X, d/dy_m X>`.
pub fn derivative_coefficients(x: &TuckerFactor) -> [DMatrix<f64>; 2] {
    let d1 = x.first.gram(&x.first.derivative());
    let d2 = x.second.gram(&x.second.derivative());
    let i1 = DMatrix::identity(x.first.count(), x.first.count());
    let i2 = DMatrix::identity(x.second.count(), x.second.count());
    [x.pairing(&d1, &i2), x.pairing(&i1, &d2)]
}

/// `(<V, v_m V>, <V, d/dv_m V>)`.
pub fn velocity_coefficients(v: &TuckerFactor) -> ([DMatrix<f64>; 2], [DMatrix<f64>; 2]) {
    let c1 = profile_coefficients(v, &Forcing::Coordinate.profiles(&v.first, &v.core, &v.second));
    (c1, derivative_coefficients(v))
}

/// Which core index a QR unfolding isolates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    First,
    Second,
}

/// `C_j = R Q_j` (first mode) or `C_j = Q_j R^T` (second mode), with the
/// unfolded slices orthonormal: `sum_j Q_j Q_j^T = I` (first mode) or
/// `sum_j Q_j^T Q_j = I` (second mode). `R` is lower triangular.
#[derive(Clone, Debug)]
pub struct UnfoldQr {
    pub mode: Mode,
    pub q: Vec<DMatrix<f64>>,
    pub r: DMatrix<f64>,
}

impl UnfoldQr {
    pub fn reconstruct(&self) -> Vec<DMatrix<f64>> {
        self.q
            .iter()
            .map(|q| match self.mode {
                Mode::First => &self.r * q,
                Mode::Second => q * self.r.transpose(),
            })
            .collect()
    }

    /// `W_j`, slice `j` contracted with the family of the other index.
    pub fn contracted(&self, j: usize, other: &FunctionFamily) -> FunctionFamily {
        match self.mode {
            Mode::First => other.combine(&self.q[j].transpose()),
            Mode::Second => other.combine(&self.q[j]),
        }
    }
}

/// QR of the core matricized with the `mode` index as columns.
pub fn unfold_qr(core: &[DMatrix<f64>], mode: Mode) -> UnfoldQr {
    match mode {
        Mode::First => {
            let (r1, r2) = core[0].shape();
            let mut a = DMatrix::zeros(core.len() * r2, r1);
            for (j, c) in core.iter().enumerate() {
                a.view_mut((j * r2, 0), (r2, r1)).copy_from(&c.transpose());
            }
            let (q, r) = qr(&a);
            UnfoldQr {
                mode,
                q: (0..core.len()).map(|j| q.view((j * r2, 0), (r2, r1)).transpose()).collect(),
                r: r.transpose(),
            }
        }
        Mode::Second => {
            let swapped: Vec<DMatrix<f64>> = core.iter().map(|c| c.transpose()).collect();
            let u = unfold_qr(&swapped, Mode::First);
            UnfoldQr {
                mode,
                q: u.q.iter().map(|q| q.transpose()).collect(),
                r: u.r,
            }
        }
    }
}

/// `sum_jl P_jl Q_j T Q_l^T`, summed right to left: first `sum_l P_jl Q_l`,
/// then one product per `j`, so the cost is `O(r^2 R^2 + r R^3)`.
pub fn mode_coupling(q: &[DMatrix<f64>], p: &DMatrix<f64>, inner: &DMatrix<f64>) -> DMatrix<f64> {
    let (r1, r2) = q[0].shape();
    let mut out = DMatrix::zeros(r1, r1);
    for j in 0..q.len() {
        let mut pq = DMatrix::zeros(r1, r2);
        for (l, ql) in q.iter().enumerate() {
            if p[(j, l)] != 0.0 {
                pq += ql * p[(j, l)];
            }
        }
        out += &q[j] * (inner * pq.transpose());
    }
    out
}

/// Modified Gram-Schmidt on the core slices under the Frobenius pairing,
/// with one re-orthogonalization pass: `C_j = sum_i C'_i S_ij`, `S` upper
/// triangular with non-negative diagonal. A slice with no component left is
/// replaced by an orthonormal unit-tensor complement and gets `S_jj = 0`.
pub fn core_gram_schmidt(core: &[DMatrix<f64>]) -> (Vec<DMatrix<f64>>, DMatrix<f64>) {
    let r = core.len();
    let (r1, r2) = core[0].shape();
    let scale = core.iter().map(|c| c.norm()).fold(0.0_f64, f64::max);
    let mut out: Vec<DMatrix<f64>> = core.to_vec();
    let mut s = DMatrix::zeros(r, r);
    let mut next_unit = 0usize;
    for j in 0..r {
        for _ in 0..2 {
            for k in 0..j {
                let c = out[k].dot(&out[j]);
                s[(k, j)] += c;
                let ck = out[k].clone();
                out[j] -= ck * c;
            }
        }
        let norm = out[j].norm();
        if norm > RANK_DEFICIENCY_TOL * scale && norm > 0.0 {
            s[(j, j)] = norm;
            out[j] /= norm;
            continue;
        }
        loop {
            assert!(next_unit < r1 * r2, "no complement left for {r} slices of {r1}x{r2}");
            let mut w = DMatrix::zeros(r1, r2);
            w[(next_unit % r1, next_unit / r1)] = 1.0;
            next_unit += 1;
            for _ in 0..2 {
                for k in 0..j {
                    let c = out[k].dot(&w);
                    w -= &out[k] * c;
                }
            }
            let n = w.norm();
            if n > 0.5 {
                out[j] = w / n;
                break;
            }
        }
    }
    (out, s)
}

/// Settings of the hierarchical Lie step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HierarchicalIntegrator {
    pub solver: SubSolver,
    pub field: FieldModel,
    /// Sub-steps of every flow whose coupling follows the field.
    pub field_substeps: usize,
    pub field_rule: Truncation,
}

impl Default for HierarchicalIntegrator {
    fn default() -> Self {
        Self {
            solver: SubSolver::default(),
            field: FieldModel::default(),
            field_substeps: DEFAULT_FIELD_SUBSTEPS,
            field_rule: Truncation::default(),
        }
    }
}

/// Norm used to size the RK4 sub-steps.
fn norm(a: &DMatrix<f64>) -> f64 {
    spectral_norm(a)
}

impl HierarchicalIntegrator {
    fn space_forcing(&self, v: &TuckerFactor) -> Forcing {
        match self.field {
            FieldModel::SelfConsistent => Forcing::Field {
                weights: v.integrals(),
                rule: self.field_rule,
            },
            FieldModel::Zero => Forcing::Zero,
        }
    }

    /// Updates `first` and the core: flow of `M = first R` over `tau`, QR,
    /// then the backward flow of the new `R` over `tau`.
    fn own_factor_update(
        &self,
        t: &TuckerFactor,
        own: &DMatrix<f64>,
        other: &DMatrix<f64>,
        coupling: &[DMatrix<f64>; 2],
        forcing: Oriented,
        tau: f64,
    ) -> TuckerFactor {
        let unfolded = unfold_qr(&t.core, Mode::First);
        let q = &unfolded.q;
        let r2 = t.second.count();
        let a1 = mode_coupling(q, own, &DMatrix::identity(r2, r2));
        let a2 = mode_coupling(q, other, &t.second.gram(&t.second.derivative()));
        // (profile on the own grid, coefficient matrix) for every separable term
        let terms = |own_family: &FunctionFamily, core: &[DMatrix<f64>]| {
            let comps = forcing.profiles(own_family, core, &t.second);
            let mut out = Vec::new();
            for (m, comp) in comps.iter().enumerate() {
                for mu in 0..comp.rank() {
                    let inner = t.second.weighted_gram(comp.second.column(mu).as_slice(), &t.second);
                    out.push((comp.first.column(mu).into_owned(), mode_coupling(q, &coupling[m], &inner)));
                }
            }
            out
        };

        let n1 = t.first.grid().len();
        let reaction = |m: &FunctionFamily| {
            let mut reaction = Reaction::scaled(vec![1.0; n1], a2.clone());
            for (profile, matrix) in terms(m, q) {
                reaction.push(profile.as_slice().to_vec(), matrix);
            }
            reaction
        };
        let advection = Advection::new(&a1);
        let mut m = t.first.combine(&unfolded.r);
        if forcing.forcing.is_static() {
            m = propagate_fixed(self.solver, &m, &advection, &reaction(&m), tau);
        } else {
            let substeps = self.field_substeps.max(1);
            for _ in 0..substeps {
                m = propagate(self.solver, &m, &advection, reaction, tau / substeps as f64);
            }
        }
        let (first, r_start) = orthonormalize(&m);

        let b1 = first.gram(&first.derivative());
        let linear = norm(&b1) * norm(&a1) + norm(&a2);
        let slices = |r: &DMatrix<f64>| q.iter().map(|qj| r * qj).collect::<Vec<_>>();
        let rhs = |r: &DMatrix<f64>| {
            let mut out = &b1 * r * a1.transpose() + r * a2.transpose();
            for (profile, a3) in terms(&first, &slices(r)) {
                let h = first.weighted_gram(profile.as_slice(), &first);
                out += h * r * a3.transpose();
            }
            out
        };
        let nonlinear: f64 = terms(&first, &slices(&r_start))
            .iter()
            .map(|(profile, a3)| norm(&first.weighted_gram(profile.as_slice(), &first)) * norm(a3))
            .sum();
        let r_end = rk4(&r_start, rhs, linear + 2.0 * nonlinear, tau, RK4_STEP_NORM);
        TuckerFactor {
            core: slices(&r_end),
            first,
            second: t.second.clone(),
        }
    }

    /// First step of the sweep: updates the first family and the core.
    pub fn first_factor_update(
        &self,
        t: &TuckerFactor,
        transport: &[DMatrix<f64>; 2],
        coupling: &[DMatrix<f64>; 2],
        forcing: &Forcing,
        tau: f64,
    ) -> TuckerFactor {
        let oriented = Oriented { forcing, swapped: false };
        self.own_factor_update(t, &transport[0], &transport[1], coupling, oriented, tau)
    }

    /// Second step of the sweep: updates the second family and the core.
    pub fn second_factor_update(
        &self,
        t: &TuckerFactor,
        transport: &[DMatrix<f64>; 2],
        coupling: &[DMatrix<f64>; 2],
        forcing: &Forcing,
        tau: f64,
    ) -> TuckerFactor {
        let oriented = Oriented { forcing, swapped: true };
        self.own_factor_update(&t.transposed(), &transport[1], &transport[0], coupling, oriented, tau)
            .transposed()
    }

    /// Third step of the sweep: Galerkin flow of the core slices with both
    /// families fixed.
    pub fn core_update(
        &self,
        t: &TuckerFactor,
        transport: &[DMatrix<f64>; 2],
        coupling: &[DMatrix<f64>; 2],
        forcing: &Forcing,
        tau: f64,
    ) -> TuckerFactor {
        let (r, r1, _) = t.ranks();
        let b1 = t.first.gram(&t.first.derivative());
        let d2 = t.second.gram(&t.second.derivative());
        let stack = |core: &[DMatrix<f64>]| {
            let mut out = DMatrix::zeros(r * r1, core[0].ncols());
            for (j, c) in core.iter().enumerate() {
                out.view_mut((j * r1, 0), c.shape()).copy_from(c);
            }
            out
        };
        let unstack = |y: &DMatrix<f64>| (0..r).map(|j| y.rows(j * r1, r1).into_owned()).collect::<Vec<_>>();
        let field_terms = |core: &[DMatrix<f64>]| {
            let comps = forcing.profiles(&t.first, core, &t.second);
            comps.map(|c| {
                (0..c.rank())
                    .map(|mu| {
                        (
                            t.first.weighted_gram(c.first.column(mu).as_slice(), &t.first),
                            t.second.weighted_gram(c.second.column(mu).as_slice(), &t.second),
                        )
                    })
                    .collect::<Vec<_>>()
            })
        };
        let mix = |p: &DMatrix<f64>, core: &[DMatrix<f64>], j: usize| {
            let mut out = DMatrix::zeros(core[0].nrows(), core[0].ncols());
            for (l, c) in core.iter().enumerate() {
                if p[(j, l)] != 0.0 {
                    out += c * p[(j, l)];
                }
            }
            out
        };
        let rhs = |y: &DMatrix<f64>| {
            let core = unstack(y);
            let field = field_terms(&core);
            let out: Vec<DMatrix<f64>> = (0..r)
                .map(|j| {
                    let mut acc = &b1 * mix(&transport[0], &core, j) + mix(&transport[1], &core, j) * d2.transpose();
                    for m in 0..2 {
                        if field[m].is_empty() {
                            continue;
                        }
                        let pc = mix(&coupling[m], &core, j);
                        for (h1, h2) in &field[m] {
                            acc += h1 * &pc * h2.transpose();
                        }
                    }
                    -acc
                })
                .collect();
            stack(&out)
        };
        let field_bound: f64 = field_terms(&t.core)
            .iter()
            .zip(coupling)
            .map(|(terms, p)| norm(p) * terms.iter().map(|(h1, h2)| norm(h1) * norm(h2)).sum::<f64>())
            .sum();
        let bound = norm(&transport[0]) * norm(&b1) + norm(&transport[1]) * norm(&d2) + 2.0 * field_bound;
        let y = rk4(&stack(&t.core), rhs, bound, tau, RK4_STEP_NORM);
        TuckerFactor {
            core: unstack(&y),
            first: t.first.clone(),
            second: t.second.clone(),
        }
    }

    /// The three sweep steps on `K`; the returned core is not orthonormalized.
    pub fn sweep(
        &self,
        t: &TuckerFactor,
        transport: &[DMatrix<f64>; 2],
        coupling: &[DMatrix<f64>; 2],
        forcing: &Forcing,
        tau: f64,
    ) -> TuckerFactor {
        let t = self.first_factor_update(t, transport, coupling, forcing, tau);
        let t = self.second_factor_update(&t, transport, coupling, forcing, tau);
        self.core_update(&t, transport, coupling, forcing, tau)
    }

    /// Space half: sweep on `K_j = sum_i X_i S_ij` with `F = -E`, then
    /// Gram-Schmidt on the core to split off the new `S`.
    pub fn x_update(&self, state: &HierarchicalState4D, tau: f64) -> HierarchicalState4D {
        let (c1, c2) = velocity_coefficients(&state.v);
        let k = TuckerFactor {
            core: state.k_core(),
            first: state.x.first.clone(),
            second: state.x.second.clone(),
        };
        let swept = self.sweep(&k, &c1, &c2, &self.space_forcing(&state.v), tau);
        let (core, s) = core_gram_schmidt(&swept.core);
        HierarchicalState4D {
            s,
            x: TuckerFactor { core, ..swept },
            v: state.v.clone(),
            t: state.t,
        }
    }

    /// `<X, E_m X>` for the field of the state with coupling `s`.
    fn field_coefficients(&self, state: &HierarchicalState4D, s: &DMatrix<f64>) -> [DMatrix<f64>; 2] {
        let forcing = self.space_forcing(&state.v);
        let comps = forcing.profiles(&state.x.first, &state.x.recombined(s), &state.x.second);
        profile_coefficients(&state.x, &comps).map(|m| -m)
    }

    /// `S' = sum_m d2_m S c1_m^T - d1_m[E(S)] S c2_m^T`, the field following
    /// `S` at every RK4 stage.
    pub fn s_step(&self, state: &HierarchicalState4D, tau: f64) -> DMatrix<f64> {
        let (c1, c2) = velocity_coefficients(&state.v);
        let d2 = derivative_coefficients(&state.x);
        let rhs = |s: &DMatrix<f64>| {
            let d1 = self.field_coefficients(state, s);
            let mut out = DMatrix::zeros(s.nrows(), s.ncols());
            for m in 0..2 {
                out += &d2[m] * s * c1[m].transpose() - &d1[m] * s * c2[m].transpose();
            }
            out
        };
        let d1 = self.field_coefficients(state, &state.s);
        let bound: f64 = (0..2).map(|m| norm(&d2[m]) * norm(&c1[m]) + 2.0 * norm(&d1[m]) * norm(&c2[m])).sum();
        rk4(&state.s, rhs, bound, tau, RK4_STEP_NORM)
    }

    /// Velocity half: sweep on `L_i = sum_j S_ij V_j` with `F_m = v_m`, the
    /// field frozen at the start.
    pub fn v_update(&self, state: &HierarchicalState4D, tau: f64) -> HierarchicalState4D {
        let d1 = self.field_coefficients(state, &state.s);
        let d2 = derivative_coefficients(&state.x);
        let l = TuckerFactor {
            core: state.v.recombined(&state.s.transpose()),
            first: state.v.first.clone(),
            second: state.v.second.clone(),
        };
        let transport = d1.map(|m| -m);
        let swept = self.sweep(&l, &transport, &d2, &Forcing::Coordinate, tau);
        let (core, r) = core_gram_schmidt(&swept.core);
        HierarchicalState4D {
            s: r.transpose(),
            x: state.x.clone(),
            v: TuckerFactor { core, ..swept },
            t: state.t,
        }
    }

    pub fn lie_step(&self, state: &HierarchicalState4D, tau: f64) -> HierarchicalState4D {
        let mut next = self.x_update(state, tau);
        next.s = self.s_step(&next, tau);
        let mut next = self.v_update(&next, tau);
        next.t = state.t + tau;
        next
    }
}
