//! Executes a [`RunConfig`]: steps the scenario, streams diagnostics to CSV
//! and fits the electric-energy series.

use std::fs::File;
use std::io::{BufWriter, Write};

use log::{info, warn};

use crate::config::{EventKind, RunConfig};
use crate::diagnostics::{diagnostics, fit_growth_rate, fit_rate, peak_in, Baseline, DiagnosticsRecord};
use crate::error::{Error, Result};
use crate::field::Truncation;
use crate::hierarchical::{HierarchicalIntegrator, HierarchicalState4D};
use crate::lowrank::{Integrator2D, LowRankState2D};
use crate::scenarios::{RateFit, Scenario};

/// Fitted rate of the field amplitude.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateReport {
    pub fit: RateFit,
    pub window: (f64, f64),
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub rows: usize,
    pub final_time: f64,
    pub rate: Option<RateReport>,
    /// `(order, time, energy)` of the echoes found after the last pulse.
    pub echo_peaks: Vec<(u32, f64, f64)>,
    /// Norm discarded by each pulse when recompressing to the run rank.
    pub pulse_remainders: Vec<f64>,
    /// Largest relative errors since the last baseline reset.
    pub max_mass_err: f64,
    pub max_energy_err: f64,
    pub max_l2_err: f64,
    /// `(t, electric_energy)` of every row.
    pub series: Vec<(f64, f64)>,
}

/// What the step loop needs from a solver state.
trait Simulated {
    fn advance(&mut self, config: &RunConfig);
    fn record(&self, baseline: Option<&Baseline>) -> DiagnosticsRecord;
    fn pulse(&mut self, scenario: &Scenario) -> Result<f64>;
}

enum State {
    Flat(LowRankState2D, Integrator2D),
    Tucker(HierarchicalState4D, HierarchicalIntegrator),
}

impl State {
    fn build(config: &RunConfig, scenario: &Scenario) -> Result<Self> {
        match config.hierarchical_ranks() {
            Some(ranks) => {
                let sizes = [config.grid[0], config.grid[1], config.grid[2], config.grid[3]];
                let mut integrator = HierarchicalIntegrator::default();
                if let Some(r) = config.rank_field {
                    integrator.field_rule = Truncation {
                        max_rank: r,
                        ..Truncation::default()
                    };
                }
                Ok(State::Tucker(scenario.init_4d(sizes, ranks)?, integrator))
            }
            None => Ok(State::Flat(
                scenario.init_2d(config.grid[0], config.grid[1], config.rank)?,
                Integrator2D::default(),
            )),
        }
    }
}

impl Simulated for State {
    fn advance(&mut self, config: &RunConfig) {
        match self {
            State::Flat(st, integrator) => *st = integrator.step(st, config.tau, config.integrator),
            State::Tucker(st, integrator) => *st = integrator.lie_step(st, config.tau),
        }
    }

    fn record(&self, baseline: Option<&Baseline>) -> DiagnosticsRecord {
        match self {
            State::Flat(st, _) => diagnostics(st, baseline),
            State::Tucker(st, _) => diagnostics(st, baseline),
        }
    }

    fn pulse(&mut self, scenario: &Scenario) -> Result<f64> {
        match self {
            State::Flat(st, _) => {
                let (next, remainder) = scenario.pulse(st)?;
                *st = next;
                Ok(remainder)
            }
            State::Tucker(..) => Err(Error::InvalidInput("pulses need a 2D state".into())),
        }
    }
}

/// Runs `config` and writes the CSV to `config.output`.
pub fn run(config: &RunConfig) -> Result<RunSummary> {
    let mut out = BufWriter::new(File::create(&config.output)?);
    let summary = run_to(config, &mut out);
    out.flush()?;
    summary
}

/// Runs `config` and writes the CSV to `out`. A non-finite diagnostic stops
/// the run; the rows up to the last good one are kept.
pub fn run_to<W: Write>(config: &RunConfig, out: &mut W) -> Result<RunSummary> {
    let scenario = Scenario::new(config.scenario);
    let mut state = State::build(config, &scenario)?;
    drive(config, &scenario, &mut state, out)
}

fn drive<S: Simulated, W: Write>(config: &RunConfig, scenario: &Scenario, state: &mut S, out: &mut W) -> Result<RunSummary> {
    let steps = config.steps();
    let pulse_steps: Vec<(usize, EventKind)> = config
        .events
        .iter()
        .map(|e| (((e.t / config.tau).round() as usize).min(steps), e.kind))
        .collect();

    let mut summary = RunSummary {
        rows: 0,
        final_time: 0.0,
        rate: None,
        echo_peaks: Vec::new(),
        pulse_remainders: Vec::new(),
        max_mass_err: 0.0,
        max_energy_err: 0.0,
        max_l2_err: 0.0,
        series: Vec::with_capacity(config.rows()),
    };
    let mut baseline: Option<Baseline> = None;
    let mut last_good = 0.0;
    let mut last_pulse = None;
    writeln!(out, "{}", DiagnosticsRecord::CSV_HEADER)?;

    for n in 0..=steps {
        if n > 0 {
            state.advance(config);
        }
        for &(_, kind) in pulse_steps.iter().filter(|(at, _)| *at == n) {
            match kind {
                EventKind::Pulse => {
                    let remainder = state.pulse(scenario)?;
                    info!("pulse at t = {:.4}, discarded norm {remainder:.3e}", n as f64 * config.tau);
                    summary.pulse_remainders.push(remainder);
                    last_pulse = Some(n as f64 * config.tau);
                    baseline = None;
                    summary.max_mass_err = 0.0;
                    summary.max_energy_err = 0.0;
                    summary.max_l2_err = 0.0;
                }
            }
        }
        let reset = baseline.is_none();
        if n % config.stride != 0 && !reset {
            continue;
        }
        let mut record = state.record(baseline.as_ref());
        if !record.is_finite() {
            return Err(Error::NonFinite { last_good_t: last_good });
        }
        if reset {
            baseline = Some(record.baseline());
            record = state.record(baseline.as_ref());
        }
        if n % config.stride != 0 {
            continue;
        }
        last_good = record.t;
        summary.max_mass_err = summary.max_mass_err.max(record.mass_rel_err);
        summary.max_energy_err = summary.max_energy_err.max(record.energy_rel_err);
        summary.max_l2_err = summary.max_l2_err.max(record.l2_rel_err);
        summary.series.push((record.t, record.electric_energy));
        writeln!(out, "{}", record.csv_row())?;
        summary.rows += 1;
        if steps >= 10 && n % (steps / 10) == 0 && n > 0 {
            info!("t = {:.3}: electric energy {:.4e}, mass error {:.2e}", record.t, record.electric_energy, record.mass_rel_err);
        }
    }
    summary.final_time = last_good;

    let window = (scenario.fit_window.0, scenario.fit_window.1.min(config.t_final));
    let fitted = match scenario.fit {
        RateFit::Damping => Some(fit_rate(&summary.series, window)),
        RateFit::Growth => Some(fit_growth_rate(&summary.series, window)),
        RateFit::None => None,
    };
    match fitted {
        Some(Ok(value)) => {
            summary.rate = Some(RateReport {
                fit: scenario.fit,
                window,
                value,
            })
        }
        Some(Err(e)) => warn!("no rate: {e}"),
        None => {}
    }
    if let Some(t2) = last_pulse {
        summary.echo_peaks = echo_peaks(scenario, &summary.series, t2, config.t_final);
    }
    Ok(summary)
}

/// Echo of order `n` is searched within a quarter of its delay around the
/// predicted time and accepted only as an interior maximum.
fn echo_peaks(scenario: &Scenario, series: &[(f64, f64)], t2: f64, t_final: f64) -> Vec<(u32, f64, f64)> {
    let mut peaks = Vec::new();
    for order in 1..=2 {
        let predicted = scenario.echo_time(t2, order);
        let half = 0.25 * (predicted - t2);
        let window = (predicted - half, (predicted + half).min(t_final));
        if window.0 >= window.1 {
            continue;
        }
        if let Ok((t, e)) = peak_in(series, window) {
            let margin = 0.02 * (window.1 - window.0);
            if t > window.0 + margin && t < window.1 - margin {
                peaks.push((order, t, e));
            }
        }
    }
    peaks
}
