//! Initial data for the benchmark runs and the echo perturbation.

use std::f64::consts::PI;

use nalgebra::DMatrix;

use crate::error::{invalid, Result};
use crate::grid::{orthonormalize, FunctionFamily, Grid};
use crate::hierarchical::{HierarchicalState4D, SeparableSum};
use crate::linalg::svd;
use crate::lowrank::LowRankState2D;

/// Checks that `cos(k x)` is periodic on `grid`.
pub fn check_wavenumber(k: f64, grid: &Grid) -> Result<()> {
    let periods = k * grid.length() / (2.0 * PI);
    if !k.is_finite() || (periods - periods.round()).abs() > 1e-9 * periods.abs().max(1.0) {
        return invalid(format!(
            "wavenumber {k} does not fit the periodic interval of length {}",
            grid.length()
        ));
    }
    Ok(())
}

fn maxwellian(v: f64) -> f64 {
    (-v * v / 2.0).exp() / (2.0 * PI).sqrt()
}

fn rank_one(x: FunctionFamily, v: FunctionFamily, rank: usize) -> Result<LowRankState2D> {
    LowRankState2D::from_factors(&x, &DMatrix::identity(1, 1), &v, rank, 0.0)
}

/// `f0 = e^{-v^2/2} (1 + alpha cos(k x)) / sqrt(2 pi)`.
pub fn init_landau_2d(alpha: f64, k: f64, gx: &Grid, gv: &Grid, rank: usize) -> Result<LowRankState2D> {
    check_wavenumber(k, gx)?;
    let x = FunctionFamily::from_fn(gx.clone(), 1, |_, x| 1.0 + alpha * (k * x).cos());
    let v = FunctionFamily::from_fn(gv.clone(), 1, |_, v| maxwellian(v));
    rank_one(x, v, rank)
}

/// Two counter-streaming Maxwellians at `+-v0` with a `cos(k x)` perturbation.
pub fn init_twostream_2d(alpha: f64, k: f64, v0: f64, gx: &Grid, gv: &Grid, rank: usize) -> Result<LowRankState2D> {
    check_wavenumber(k, gx)?;
    let x = FunctionFamily::from_fn(gx.clone(), 1, |_, x| 1.0 + alpha * (k * x).cos());
    let v = FunctionFamily::from_fn(gv.clone(), 1, |_, v| 0.5 * (maxwellian(v - v0) + maxwellian(v + v0)));
    rank_one(x, v, rank)
}

/// `f0 = e^{-v^2/2} (1 + alpha cos(k x)) / (2 pi)`.
///
/// The `1/(2 pi)` prefactor is kept as published; it makes the background
/// non-neutral and the Poisson solve discards the resulting mean charge.
pub fn init_echo(alpha: f64, k: f64, gx: &Grid, gv: &Grid, rank: usize) -> Result<LowRankState2D> {
    check_wavenumber(k, gx)?;
    let x = FunctionFamily::from_fn(gx.clone(), 1, |_, x| 1.0 + alpha * (k * x).cos());
    let v = FunctionFamily::from_fn(gv.clone(), 1, |_, v| (-v * v / 2.0).exp() / (2.0 * PI));
    rank_one(x, v, rank)
}

/// Adds `alpha e^{-v^2/2} cos(k x) / (2 pi)` to `state` and recompresses to
/// the original rank. Returns the new state and the Frobenius norm of the
/// discarded part.
pub fn inject_echo_perturbation(state: &LowRankState2D, alpha: f64, k: f64) -> Result<(LowRankState2D, f64)> {
    check_wavenumber(k, state.x_grid())?;
    let px = FunctionFamily::from_fn(state.x_grid().clone(), 1, |_, x| (k * x).cos());
    let pv = FunctionFamily::from_fn(state.v_grid().clone(), 1, |_, v| alpha * (-v * v / 2.0).exp() / (2.0 * PI));
    add_rank_one(state, &px, &pv)
}

/// `f + px (x) pv`, truncated back to rank `r` by an SVD of the coupling.
pub fn add_rank_one(state: &LowRankState2D, px: &FunctionFamily, pv: &FunctionFamily) -> Result<(LowRankState2D, f64)> {
    let r = state.rank();
    let append = |base: &FunctionFamily, extra: &FunctionFamily| {
        let mut values = DMatrix::zeros(base.grid().len(), r + 1);
        values.columns_mut(0, r).copy_from(base.values());
        values.column_mut(r).copy_from(&extra.values().column(0));
        orthonormalize(&FunctionFamily::new(base.grid().clone(), values).expect("appended shape"))
    };
    let (qx, rx) = append(&state.x, px);
    let (qv, rv) = append(&state.v, pv);
    let mut core = DMatrix::zeros(r + 1, r + 1);
    core.view_mut((0, 0), (r, r)).copy_from(&state.s);
    core[(r, r)] = 1.0;
    let coupling = &rx * core * rv.transpose();
    let (u, sigma, w) = svd(&coupling);
    let remainder = sigma[r..].iter().map(|s| s * s).sum::<f64>().sqrt();
    let ur = u.columns(0, r).into_owned();
    let wr = w.columns(0, r).into_owned();
    let s = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&sigma[..r]));
    let next = LowRankState2D::new(qx.combine(&ur), s, qv.combine(&wr), state.t)?;
    Ok((next, remainder))
}

/// One grid per phase-space direction `(x, y, v, w)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Grids4D {
    pub x: Grid,
    pub y: Grid,
    pub v: Grid,
    pub w: Grid,
}

impl Grids4D {
    /// Square space box `(0, lx)^2` and velocity box `(-vmax, vmax)^2`.
    pub fn square(nx: usize, lx: f64, nv: usize, vmax: f64) -> Result<Self> {
        let x = Grid::new(nx, 0.0, lx)?;
        let v = Grid::new(nv, -vmax, vmax)?;
        Ok(Self { x: x.clone(), y: x, v: v.clone(), w: v })
    }
}

fn cos_pair(grid: &Grid, k: f64) -> FunctionFamily {
    FunctionFamily::from_fn(grid.clone(), 2, move |i, x| if i == 0 { 1.0 } else { (k * x).cos() })
}

fn space_part(grids: &Grids4D, k1: f64, k2: f64, core: DMatrix<f64>) -> Result<SeparableSum> {
    check_wavenumber(k1, &grids.x)?;
    check_wavenumber(k2, &grids.y)?;
    Ok(SeparableSum {
        first: cos_pair(&grids.x, k1),
        core,
        second: cos_pair(&grids.y, k2),
    })
}

fn velocity_part(grids: &Grids4D, profile_v: impl Fn(f64) -> f64, profile_w: impl Fn(f64) -> f64) -> SeparableSum {
    SeparableSum {
        first: FunctionFamily::from_fn(grids.v.clone(), 1, |_, v| profile_v(v)),
        core: DMatrix::identity(1, 1),
        second: FunctionFamily::from_fn(grids.w.clone(), 1, |_, w| profile_w(w)),
    }
}

/// `e^{-(v^2+w^2)/2} (1 + alpha cos(k1 x) + alpha cos(k2 y)) / (2 pi)`.
pub fn init_landau_4d(alpha: f64, k1: f64, k2: f64, grids: &Grids4D, ranks: (usize, usize, usize)) -> Result<HierarchicalState4D> {
    let x = space_part(grids, k1, k2, DMatrix::from_row_slice(2, 2, &[1.0, alpha, alpha, 0.0]))?;
    HierarchicalState4D::from_product(&x, &velocity_part(grids, maxwellian, maxwellian), ranks)
}

/// `e^{-(v^2+w^2)/2} (1 + alpha cos(k1 x) cos(k2 y)) / (2 pi)`.
pub fn init_landau_4d_nonaligned(alpha: f64, k1: f64, k2: f64, grids: &Grids4D, ranks: (usize, usize, usize)) -> Result<HierarchicalState4D> {
    let x = space_part(grids, k1, k2, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, alpha]))?;
    HierarchicalState4D::from_product(&x, &velocity_part(grids, maxwellian, maxwellian), ranks)
}

/// Four beams at `(+-v0, +-w0)` with `1 + alpha cos(k1 x) + alpha cos(k2 y)`.
pub fn init_twostream_4d(
    alpha: f64,
    k1: f64,
    k2: f64,
    v0: f64,
    w0: f64,
    grids: &Grids4D,
    ranks: (usize, usize, usize),
) -> Result<HierarchicalState4D> {
    let x = space_part(grids, k1, k2, DMatrix::from_row_slice(2, 2, &[1.0, alpha, alpha, 0.0]))?;
    let beams = |c: f64| move |v: f64| 0.5 * (maxwellian(v - c) + maxwellian(v + c));
    HierarchicalState4D::from_product(&x, &velocity_part(grids, beams(v0), beams(w0)), ranks)
}

/// The benchmark runs the command line knows by name.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ScenarioKind {
    Landau2D,
    TwoStream2D,
    Echo,
    Landau4D,
    Landau4DNonaligned,
    TwoStream4D,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 6] = [
        ScenarioKind::Landau2D,
        ScenarioKind::TwoStream2D,
        ScenarioKind::Echo,
        ScenarioKind::Landau4D,
        ScenarioKind::Landau4DNonaligned,
        ScenarioKind::TwoStream4D,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::Landau2D => "landau_2d",
            ScenarioKind::TwoStream2D => "twostream_2d",
            ScenarioKind::Echo => "echo",
            ScenarioKind::Landau4D => "landau_4d",
            ScenarioKind::Landau4DNonaligned => "landau_4d_nonaligned",
            ScenarioKind::TwoStream4D => "twostream_4d",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }

    pub fn is_hierarchical(self) -> bool {
        matches!(
            self,
            ScenarioKind::Landau4D | ScenarioKind::Landau4DNonaligned | ScenarioKind::TwoStream4D
        )
    }
}

/// What the energy series of a run is fitted for.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RateFit {
    /// Envelope of the maxima, see [`crate::diagnostics::fit_rate`].
    Damping,
    /// Monotone exponential phase, see [`crate::diagnostics::fit_growth_rate`].
    Growth,
    None,
}

/// Domain, physical parameters and reference values of a benchmark.
///
/// Space directions run over `(0, space_length)`, velocity directions over
/// `(-velocity_max, velocity_max)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub space_length: f64,
    pub velocity_max: f64,
    pub alpha: f64,
    /// `(k1, k2)`: the two space directions in 4D; in 2D only `k1` is used,
    /// except for the echo where `k2` is the wavenumber of the pulse.
    pub wavenumbers: (f64, f64),
    /// Beam velocity of the two-stream runs.
    pub drift: f64,
    pub fit: RateFit,
    pub fit_window: (f64, f64),
    /// Known field damping rate, where one exists.
    pub reference_rate: Option<f64>,
}

impl Scenario {
    pub fn new(kind: ScenarioKind) -> Self {
        let base = Scenario {
            kind,
            space_length: 4.0 * PI,
            velocity_max: 6.0,
            alpha: 1e-2,
            wavenumbers: (0.5, 0.5),
            drift: 0.0,
            fit: RateFit::Damping,
            fit_window: (0.0, f64::INFINITY),
            reference_rate: Some(-0.153),
        };
        let two_stream = Scenario {
            space_length: 10.0 * PI,
            velocity_max: 9.0,
            alpha: 1e-3,
            wavenumbers: (0.2, 0.2),
            drift: 2.4,
            fit: RateFit::Growth,
            fit_window: (15.0, 30.0),
            reference_rate: None,
            ..base.clone()
        };
        match kind {
            ScenarioKind::Landau2D | ScenarioKind::Landau4D => base,
            ScenarioKind::Landau4DNonaligned => Scenario {
                space_length: 5.0 * PI,
                wavenumbers: (0.4, 0.4),
                reference_rate: None,
                ..base
            },
            ScenarioKind::TwoStream2D | ScenarioKind::TwoStream4D => two_stream,
            ScenarioKind::Echo => Scenario {
                space_length: 100.0,
                velocity_max: 8.0,
                alpha: 1e-3,
                wavenumbers: (12.0 * PI / 100.0, 24.0 * PI / 100.0),
                fit: RateFit::None,
                reference_rate: None,
                ..base
            },
        }
    }

    /// Initial state on an `nx` by `nv` grid.
    pub fn init_2d(&self, nx: usize, nv: usize, rank: usize) -> Result<LowRankState2D> {
        let gx = Grid::new(nx, 0.0, self.space_length)?;
        let gv = Grid::new(nv, -self.velocity_max, self.velocity_max)?;
        let k = self.wavenumbers.0;
        match self.kind {
            ScenarioKind::Landau2D => init_landau_2d(self.alpha, k, &gx, &gv, rank),
            ScenarioKind::TwoStream2D => init_twostream_2d(self.alpha, k, self.drift, &gx, &gv, rank),
            ScenarioKind::Echo => init_echo(self.alpha, k, &gx, &gv, rank),
            other => invalid(format!("{} is not a 2D scenario", other.name())),
        }
    }

    /// Initial state on grids of sizes `[nx, ny, nv, nw]`.
    pub fn init_4d(&self, sizes: [usize; 4], ranks: (usize, usize, usize)) -> Result<HierarchicalState4D> {
        let space = |n| Grid::new(n, 0.0, self.space_length);
        let velocity = |n| Grid::new(n, -self.velocity_max, self.velocity_max);
        let grids = Grids4D {
            x: space(sizes[0])?,
            y: space(sizes[1])?,
            v: velocity(sizes[2])?,
            w: velocity(sizes[3])?,
        };
        let (k1, k2) = self.wavenumbers;
        match self.kind {
            ScenarioKind::Landau4D => init_landau_4d(self.alpha, k1, k2, &grids, ranks),
            ScenarioKind::Landau4DNonaligned => init_landau_4d_nonaligned(self.alpha, k1, k2, &grids, ranks),
            ScenarioKind::TwoStream4D => init_twostream_4d(self.alpha, k1, k2, self.drift, self.drift, &grids, ranks),
            other => invalid(format!("{} is not a 4D scenario", other.name())),
        }
    }

    /// The echo pulse with this scenario's amplitude and second wavenumber.
    pub fn pulse(&self, state: &LowRankState2D) -> Result<(LowRankState2D, f64)> {
        if self.kind != ScenarioKind::Echo {
            return invalid(format!("{} has no pulse", self.kind.name()));
        }
        inject_echo_perturbation(state, self.alpha, self.wavenumbers.1)
    }

    /// Time of the `n`-th order echo of a pulse at `t2`, `n k2 t2 / (n k2 - m k1)`
    /// with the smallest `m` that puts it after the pulse.
    pub fn echo_time(&self, t2: f64, order: u32) -> f64 {
        let (k1, k2) = self.wavenumbers;
        let n = order as f64;
        let m = (n * k2 / k1 - 1e-12).ceil() - 1.0;
        n * k2 * t2 / (n * k2 - m * k1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn landau_grids() -> (Grid, Grid) {
        (Grid::new(64, 0.0, 4.0 * PI).unwrap(), Grid::new(256, -6.0, 6.0).unwrap())
    }

    #[test]
    fn landau_matches_f0_at_random_points() {
        let (gx, gv) = landau_grids();
        let st = init_landau_2d(0.01, 0.5, &gx, &gv, 10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let points: Vec<(usize, usize)> = (0..100).map(|_| (rng.gen_range(0..64), rng.gen_range(0..256))).collect();
        let vals = crate::lowrank::evaluate_at(&st, &points);
        for (&(p, q), f) in points.iter().zip(vals) {
            let exact = maxwellian(gv.point(q)) * (1.0 + 0.01 * (0.5 * gx.point(p)).cos());
            assert!((f - exact).abs() < 1e-12);
        }
    }

    #[test]
    fn landau_mass_and_neutral_limit() {
        let (gx, gv) = landau_grids();
        let st = init_landau_2d(0.01, 0.5, &gx, &gv, 5).unwrap();
        let erf_6 = 1.0 - 1.973_175_290_075_034_4e-9;
        assert!((st.mass() - 4.0 * PI * erf_6).abs() < 1e-8);
        let flat = init_landau_2d(0.0, 0.5, &gx, &gv, 5).unwrap();
        assert!(flat.electric_field().values.iter().all(|e| e.abs() < 1e-14));
        assert!(init_landau_2d(0.01, 0.3, &gx, &gv, 5).is_err());
    }

    #[test]
    fn twostream_has_no_momentum() {
        let gx = Grid::new(128, 0.0, 10.0 * PI).unwrap();
        let gv = Grid::new(128, -9.0, 9.0).unwrap();
        let st = init_twostream_2d(1e-3, 0.2, 2.4, &gx, &gv, 10).unwrap();
        let momentum = st.x.integrals().dot(&(&st.s * st.v.weighted_integrals(&gv.points())));
        // grid points are symmetric about 0 except the lone -9, where f ~ 1e-10
        assert!(momentum.abs() < 1e-12 + 9.0 * gv.spacing() * 10.0 * PI * maxwellian(6.6));
        let flat = init_twostream_2d(0.0, 0.2, 2.4, &gx, &gv, 3).unwrap();
        assert!(flat.electric_field().values.iter().all(|e| e.abs() < 1e-14));
    }

    #[test]
    fn injection_adds_perturbation_mass() {
        let gx = Grid::new(128, 0.0, 100.0).unwrap();
        let gv = Grid::new(256, -8.0, 8.0).unwrap();
        let st = init_echo(1e-3, 12.0 * PI / 100.0, &gx, &gv, 4).unwrap();
        let (next, rem) = inject_echo_perturbation(&st, 1e-3, 24.0 * PI / 100.0).unwrap();
        // the padded basis does not contain cos(k2 x) exactly but rank 2 data fits
        assert!(rem < 1e-14);
        let dx = gx.spacing();
        let pert_mass: f64 = gx.points().iter().map(|x| (24.0 * PI / 100.0 * x).cos()).sum::<f64>() * dx
            * gv.points().iter().map(|v| 1e-3 * (-v * v / 2.0).exp() / (2.0 * PI)).sum::<f64>() * gv.spacing();
        assert!((next.mass() - st.mass() - pert_mass).abs() < 1e-10);
        let expect = st.to_dense()
            + DMatrix::from_fn(128, 256, |p, q| (24.0 * PI / 100.0 * gx.point(p)).cos() * 1e-3 * (-gv.point(q).powi(2) / 2.0).exp() / (2.0 * PI));
        assert!((next.to_dense() - expect).amax() < 1e-14);
    }

    #[test]
    fn injection_inside_span_has_no_remainder() {
        let (gx, gv) = landau_grids();
        let st = init_landau_2d(0.01, 0.5, &gx, &gv, 3).unwrap();
        let px = FunctionFamily::from_columns(gx.clone(), &[st.x.member(0).to_vec()]).unwrap();
        let pv = FunctionFamily::from_columns(gv.clone(), &[st.v.member(0).to_vec()]).unwrap();
        let (next, rem) = add_rank_one(&st, &px, &pv).unwrap();
        assert!(rem < 1e-14);
        assert_eq!(next.rank(), 3);
    }

    #[test]
    fn truncation_reports_the_discarded_norm() {
        let (gx, gv) = landau_grids();
        let st = init_landau_2d(0.01, 0.5, &gx, &gv, 1).unwrap();
        let px = FunctionFamily::from_columns(gx.clone(), &[gx.fourier_mode(3)]).unwrap();
        let pv = FunctionFamily::from_columns(gv.clone(), &[gv.fourier_mode(2).iter().map(|v| 1e-3 * v).collect()]).unwrap();
        let (_, rem) = add_rank_one(&st, &px, &pv).unwrap();
        // odd in v and orthogonal in x to the data, so it is the discarded part
        assert!((rem - 1e-3).abs() < 1e-15);
    }

    fn check_4d(st: &HierarchicalState4D, grids: &Grids4D, f0: impl Fn(f64, f64, f64, f64) -> f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let idx = (
                rng.gen_range(0..grids.x.len()),
                rng.gen_range(0..grids.y.len()),
                rng.gen_range(0..grids.v.len()),
                rng.gen_range(0..grids.w.len()),
            );
            let exact = f0(grids.x.point(idx.0), grids.y.point(idx.1), grids.v.point(idx.2), grids.w.point(idx.3));
            assert!((st.value_at(idx) - exact).abs() < 1e-12, "{idx:?}");
        }
    }

    #[test]
    fn landau_4d_variants_match_f0() {
        let grids = Grids4D::square(16, 4.0 * PI, 32, 6.0).unwrap();
        let st = init_landau_4d(0.01, 0.5, 0.5, &grids, (5, 5, 5)).unwrap();
        assert_eq!(st.ranks(), (5, 5, 5));
        check_4d(&st, &grids, |x, y, v, w| {
            maxwellian(v) * maxwellian(w) * (1.0 + 0.01 * (0.5 * x).cos() + 0.01 * (0.5 * y).cos())
        });
        let grids = Grids4D::square(16, 5.0 * PI, 32, 6.0).unwrap();
        let st = init_landau_4d_nonaligned(0.01, 0.4, 0.4, &grids, (3, 4, 2)).unwrap();
        check_4d(&st, &grids, |x, y, v, w| {
            maxwellian(v) * maxwellian(w) * (1.0 + 0.01 * (0.4 * x).cos() * (0.4 * y).cos())
        });
        assert!(init_landau_4d(0.01, 0.3, 0.5, &Grids4D::square(16, 4.0 * PI, 32, 6.0).unwrap(), (5, 5, 5)).is_err());
    }

    #[test]
    fn twostream_4d_matches_f0() {
        let grids = Grids4D::square(16, 10.0 * PI, 32, 9.0).unwrap();
        let st = init_twostream_4d(1e-3, 0.2, 0.2, 2.4, 2.4, &grids, (4, 4, 4)).unwrap();
        let beam = |v: f64| (-(v - 2.4f64).powi(2) / 2.0).exp() + (-(v + 2.4f64).powi(2) / 2.0).exp();
        check_4d(&st, &grids, |x, y, v, w| {
            beam(v) * beam(w) * (1.0 + 1e-3 * (0.2 * x).cos() + 1e-3 * (0.2 * y).cos()) / (8.0 * PI)
        });
    }

    #[test]
    fn ranks_below_the_data_are_rejected() {
        let grids = Grids4D::square(16, 4.0 * PI, 32, 6.0).unwrap();
        // the aligned space core has rank 2
        assert!(init_landau_4d(0.01, 0.5, 0.5, &grids, (5, 1, 5)).is_err());
        assert!(init_landau_4d(0.01, 0.5, 0.5, &grids, (0, 5, 5)).is_err());
    }

    #[test]
    fn catalogue_round_trips_names_and_builds() {
        for kind in ScenarioKind::ALL {
            assert_eq!(ScenarioKind::from_name(kind.name()), Some(kind));
            let sc = Scenario::new(kind);
            if kind.is_hierarchical() {
                assert!(sc.init_4d([8, 8, 16, 16], (4, 4, 4)).is_ok());
                assert!(sc.init_2d(8, 16, 4).is_err());
            } else {
                assert!(sc.init_2d(16, 32, 4).is_ok());
                assert!(sc.init_4d([8, 8, 16, 16], (4, 4, 4)).is_err());
            }
        }
        assert_eq!(ScenarioKind::from_name("landau"), None);
    }

    #[test]
    fn echo_times_for_doubled_wavenumber() {
        let sc = Scenario::new(ScenarioKind::Echo);
        assert!((sc.echo_time(200.0, 1) - 400.0).abs() < 1e-9);
        assert!((sc.echo_time(200.0, 2) - 800.0).abs() < 1e-9);
    }
}
