//! Conserved quantities, run records and rate fitting.

use crate::error::{Error, Result};
use crate::field::{electric_energy, electric_energy_2d};
use crate::hierarchical::HierarchicalState4D;
use crate::lowrank::LowRankState2D;

/// Quantities every solver state exposes for diagnostics.
pub trait Observables {
    fn time(&self) -> f64;
    fn mass(&self) -> f64;
    fn kinetic_energy(&self) -> f64;
    fn electric_energy(&self) -> f64;
    fn l2_norm(&self) -> f64;
}

impl Observables for LowRankState2D {
    fn time(&self) -> f64 {
        self.t
    }
    fn mass(&self) -> f64 {
        LowRankState2D::mass(self)
    }
    fn kinetic_energy(&self) -> f64 {
        LowRankState2D::kinetic_energy(self)
    }
    fn electric_energy(&self) -> f64 {
        electric_energy(&self.electric_field())
    }
    fn l2_norm(&self) -> f64 {
        LowRankState2D::l2_norm(self)
    }
}

impl Observables for HierarchicalState4D {
    fn time(&self) -> f64 {
        self.t
    }
    fn mass(&self) -> f64 {
        HierarchicalState4D::mass(self)
    }
    fn kinetic_energy(&self) -> f64 {
        HierarchicalState4D::kinetic_energy(self)
    }
    fn electric_energy(&self) -> f64 {
        electric_energy_2d(&self.electric_field())
    }
    fn l2_norm(&self) -> f64 {
        HierarchicalState4D::l2_norm(self)
    }
}

/// Reference values for relative errors.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Baseline {
    pub mass: f64,
    pub total_energy: f64,
    pub l2_norm: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub mass: f64,
    pub electric_energy: f64,
    pub kinetic_energy: f64,
    pub total_energy: f64,
    pub l2_norm: f64,
    pub mass_rel_err: f64,
    pub energy_rel_err: f64,
    pub l2_rel_err: f64,
}

fn relative(value: f64, reference: f64) -> f64 {
    if reference == 0.0 {
        value.abs()
    } else {
        ((value - reference) / reference).abs()
    }
}

impl DiagnosticsRecord {
    pub fn baseline(&self) -> Baseline {
        Baseline {
            mass: self.mass,
            total_energy: self.total_energy,
            l2_norm: self.l2_norm,
        }
    }

    pub fn is_finite(&self) -> bool {
        [
            self.t,
            self.mass,
            self.electric_energy,
            self.kinetic_energy,
            self.total_energy,
            self.l2_norm,
        ]
        .iter()
        .all(|v| v.is_finite())
    }

    pub const CSV_HEADER: &'static str =
        "t,electric_energy,mass,mass_rel_err,total_energy,energy_rel_err,l2_norm,l2_rel_err";

    pub fn csv_row(&self) -> String {
        format!(
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            self.t,
            self.electric_energy,
            self.mass,
            self.mass_rel_err,
            self.total_energy,
            self.energy_rel_err,
            self.l2_norm,
            self.l2_rel_err
        )
    }
}

/// Snapshot of `state`; relative errors are taken against `baseline`, or
/// are zero when no baseline is given.
pub fn diagnostics<S: Observables + ?Sized>(state: &S, baseline: Option<&Baseline>) -> DiagnosticsRecord {
    let mass = state.mass();
    let electric = state.electric_energy();
    let kinetic = state.kinetic_energy();
    let total = electric + kinetic;
    let l2 = state.l2_norm();
    let (mass_rel_err, energy_rel_err, l2_rel_err) = match baseline {
        Some(b) => (relative(mass, b.mass), relative(total, b.total_energy), relative(l2, b.l2_norm)),
        None => (0.0, 0.0, 0.0),
    };
    DiagnosticsRecord {
        t: state.time(),
        mass,
        electric_energy: electric,
        kinetic_energy: kinetic,
        total_energy: total,
        l2_norm: l2,
        mass_rel_err,
        energy_rel_err,
        l2_rel_err,
    }
}

fn in_window(series: &[(f64, f64)], window: (f64, f64)) -> Vec<(f64, f64)> {
    series
        .iter()
        .copied()
        .filter(|&(t, _)| t >= window.0 && t <= window.1)
        .collect()
}

fn least_squares_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mt = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mt).powi(2)).sum();
    sxy / sxx
}

/// Local maxima of the series (a point not smaller than both neighbours),
/// refined by a parabola through the log values.
pub fn local_maxima(series: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for i in 1..series.len().saturating_sub(1) {
        let (t0, e0) = series[i - 1];
        let (t1, e1) = series[i];
        let (t2, e2) = series[i + 1];
        if !(e1 >= e0 && e1 >= e2 && e1 > 0.0 && e0 > 0.0 && e2 > 0.0) {
            continue;
        }
        let (y0, y1, y2) = (e0.ln(), e1.ln(), e2.ln());
        let h = 0.5 * (t2 - t0);
        let curvature = y0 - 2.0 * y1 + y2;
        let (t, y) = if curvature < 0.0 && (t1 - t0 - h).abs() < 1e-9 * h.max(1.0) {
            let shift = 0.5 * (y0 - y2) / curvature;
            (t1 + shift * h, y1 - 0.25 * (y0 - y2) * shift)
        } else {
            (t1, y1)
        };
        out.push((t, y.exp()));
    }
    out
}

/// Field-amplitude damping or growth rate from the maxima of an
/// electric-energy series inside `window`: half the least-squares slope of
/// their logarithms.
pub fn fit_rate(series: &[(f64, f64)], window: (f64, f64)) -> Result<f64> {
    let inside = in_window(series, window);
    if inside.iter().any(|p| p.1 <= 0.0) {
        return Err(Error::InsufficientData("energies must be positive inside the fit window".into()));
    }
    let maxima: Vec<(f64, f64)> = local_maxima(&inside)
        .into_iter()
        .map(|(t, e)| (t, e.ln()))
        .collect();
    if maxima.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "{} maxima in [{}, {}], need at least 3",
            maxima.len(),
            window.0,
            window.1
        )));
    }
    Ok(0.5 * least_squares_slope(&maxima))
}

/// Rate of a monotone exponential phase: half the least-squares slope of the
/// log energy over all samples inside `window`.
pub fn fit_growth_rate(series: &[(f64, f64)], window: (f64, f64)) -> Result<f64> {
    let inside = in_window(series, window);
    if inside.len() < 3 || inside.iter().any(|p| p.1 <= 0.0) {
        return Err(Error::InsufficientData(
            "need at least 3 positive samples in the growth window".into(),
        ));
    }
    let logs: Vec<(f64, f64)> = inside.iter().map(|&(t, e)| (t, e.ln())).collect();
    Ok(0.5 * least_squares_slope(&logs))
}

/// Time and value of the largest sample inside `window`.
pub fn peak_in(series: &[(f64, f64)], window: (f64, f64)) -> Result<(f64, f64)> {
    in_window(series, window)
        .into_iter()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .ok_or_else(|| Error::InsufficientData(format!("no samples in [{}, {}]", window.0, window.1)))
}
