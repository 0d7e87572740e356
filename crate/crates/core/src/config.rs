//! Run configuration: one `key = value` per line, `#` starts a comment.
//!
//! ```text
//! scenario = landau_2d
//! integrator = strang
//! rank = 10
//! grid = 64, 256
//! tau = 0.025
//! t_final = 40
//! ```
//!
//! Keys are the field names of [`RunConfig`]. Lists are comma separated.
//! `grid` holds one size per direction (`nx, nv` or `nx, ny, nv, nw`; a 4D
//! run also accepts `nx, nv` for both directions of each kind). Events are
//! `kind@time`, the only kind being `pulse` (the echo perturbation).

use std::collections::HashMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::lowrank::Splitting;
use crate::scenarios::ScenarioKind;

/// Diagnostics stride used when the config does not set one.
pub const DEFAULT_STRIDE_2D: usize = 1;
pub const DEFAULT_STRIDE_4D: usize = 40;

/// Upper limit on the number of outer steps of one run.
const MAX_STEPS: f64 = 1e9;

/// Upper limit on the points of one grid direction.
const MAX_POINTS: usize = 1 << 24;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EventKind {
    /// Echo perturbation added to the state, with a reset of the
    /// conservation baselines.
    Pulse,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Event {
    pub kind: EventKind,
    pub t: f64,
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            EventKind::Pulse => write!(f, "pulse@{}", self.t),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub scenario: ScenarioKind,
    pub integrator: Splitting,
    pub rank: usize,
    /// Tucker ranks of the space and velocity factors; hierarchical runs only.
    pub rank_x: Option<usize>,
    pub rank_v: Option<usize>,
    /// Largest rank of the separable field approximation; hierarchical runs only.
    pub rank_field: Option<usize>,
    pub grid: Vec<usize>,
    pub tau: f64,
    pub t_final: f64,
    pub stride: usize,
    pub output: PathBuf,
    pub events: Vec<Event>,
}

impl RunConfig {
    /// Number of outer steps.
    pub fn steps(&self) -> usize {
        (self.t_final / self.tau + 1e-9).floor() as usize
    }

    /// Number of CSV rows the run writes.
    pub fn rows(&self) -> usize {
        self.steps() / self.stride + 1
    }

    pub fn hierarchical_ranks(&self) -> Option<(usize, usize, usize)> {
        Some((self.rank, self.rank_x?, self.rank_v?))
    }
}

const KEYS: [&str; 12] = [
    "scenario",
    "integrator",
    "rank",
    "rank_x",
    "rank_v",
    "rank_field",
    "grid",
    "tau",
    "t_final",
    "stride",
    "output",
    "events",
];

fn error(line: Option<usize>, key: &str, message: impl Into<String>) -> Error {
    Error::Config {
        line,
        key: key.to_string(),
        message: message.into(),
    }
}

/// Raw `key -> (line, value)` table.
struct Entries(HashMap<&'static str, (usize, String)>);

impl Entries {
    fn get(&self, key: &str) -> Option<(usize, &str)> {
        self.0.get(key).map(|(l, v)| (*l, v.as_str()))
    }

    fn line(&self, key: &str) -> Option<usize> {
        self.0.get(key).map(|e| e.0)
    }

    fn required(&self, key: &str) -> Result<(usize, &str)> {
        self.get(key).ok_or_else(|| error(None, key, "missing required key"))
    }

    fn parse<T: FromStr>(&self, key: &str, what: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some((line, v)) => v
                .parse()
                .map(Some)
                .map_err(|_| error(Some(line), key, format!("expected {what}, found `{v}`"))),
        }
    }

    fn parse_required<T: FromStr>(&self, key: &str, what: &str) -> Result<T> {
        self.required(key)?;
        Ok(self.parse(key, what)?.expect("present"))
    }
}

fn tokenize(text: &str) -> Result<Entries> {
    let mut entries = HashMap::new();
    for (index, raw) in text.lines().enumerate() {
        let line = index + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(error(Some(line), content, "expected `key = value`"));
        };
        let (key, value) = (key.trim(), value.trim());
        let Some(&known) = KEYS.iter().find(|k| **k == key) else {
            return Err(error(Some(line), key, "unknown key"));
        };
        if value.is_empty() {
            return Err(error(Some(line), key, "empty value"));
        }
        if let Some((first, _)) = entries.insert(known, (line, value.to_string())) {
            return Err(error(Some(line), key, format!("duplicate key, first set on line {first}")));
        }
    }
    Ok(Entries(entries))
}

fn list<T: FromStr>(entries: &Entries, key: &str, what: &str) -> Result<Vec<T>> {
    let Some((line, value)) = entries.get(key) else {
        return Ok(Vec::new());
    };
    value
        .split(',')
        .map(|item| {
            let item = item.trim();
            item.parse()
                .map_err(|_| error(Some(line), key, format!("expected {what}, found `{item}`")))
        })
        .collect()
}

fn parse_event(item: &str) -> Option<Event> {
    let (kind, t) = item.split_once('@')?;
    let kind = match kind.trim() {
        "pulse" => EventKind::Pulse,
        _ => return None,
    };
    Some(Event { kind, t: t.trim().parse().ok()? })
}

/// Parses and validates a run configuration.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let entries = tokenize(text)?;

    let (line, name) = entries.required("scenario")?;
    let scenario = ScenarioKind::from_name(name).ok_or_else(|| {
        let known: Vec<&str> = ScenarioKind::ALL.iter().map(|k| k.name()).collect();
        error(Some(line), "scenario", format!("unknown scenario `{name}`; known: {}", known.join(", ")))
    })?;
    let hierarchical = scenario.is_hierarchical();

    let integrator = match entries.get("integrator") {
        None if hierarchical => Splitting::Lie,
        None => Splitting::Strang,
        Some((_, "lie")) => Splitting::Lie,
        Some((_, "strang")) if !hierarchical => Splitting::Strang,
        Some((line, "strang")) => {
            return Err(error(Some(line), "integrator", "strang is only available for 2D scenarios"))
        }
        Some((line, other)) => {
            return Err(error(Some(line), "integrator", format!("expected `lie` or `strang`, found `{other}`")))
        }
    };

    let positive = |key: &str, value: usize| {
        if value == 0 {
            Err(error(entries.line(key), key, "must be at least 1"))
        } else {
            Ok(value)
        }
    };
    let rank = positive("rank", entries.parse_required("rank", "an integer")?)?;
    let extra = |key: &str| -> Result<Option<usize>> {
        let value: Option<usize> = entries.parse(key, "an integer")?;
        match value {
            Some(_) if !hierarchical => Err(error(entries.line(key), key, "only valid for 4D scenarios")),
            Some(v) => positive(key, v).map(Some),
            None if hierarchical && key != "rank_field" => Ok(Some(rank)),
            None => Ok(None),
        }
    };
    let rank_x = extra("rank_x")?;
    let rank_v = extra("rank_v")?;
    let rank_field = extra("rank_field")?;
    entries.required("grid")?;
    let mut grid: Vec<usize> = list(&entries, "grid", "an integer")?;
    let grid_line = entries.line("grid");
    match (hierarchical, grid.len()) {
        (false, 2) | (true, 4) => {}
        (true, 2) => grid = vec![grid[0], grid[0], grid[1], grid[1]],
        (false, n) => return Err(error(grid_line, "grid", format!("2D runs take 2 sizes, found {n}"))),
        (true, n) => return Err(error(grid_line, "grid", format!("4D runs take 2 or 4 sizes, found {n}"))),
    }
    if grid.iter().any(|&n| n < 2) {
        return Err(error(grid_line, "grid", "every direction needs at least 2 points"));
    }

    if grid.iter().any(|&n| n > MAX_POINTS) {
        return Err(error(grid_line, "grid", format!("at most {MAX_POINTS} points per direction")));
    }
    // an orthonormal family cannot have more members than grid points
    let (space_points, velocity_points) = if hierarchical {
        (grid[0].min(grid[1]), grid[2].min(grid[3]))
    } else {
        (grid[0], grid[1])
    };
    let mut limits = vec![("rank", rank, space_points.min(velocity_points))];
    if let (Some(rx), Some(rv)) = (rank_x, rank_v) {
        limits = vec![
            ("rank_x", rx, space_points),
            ("rank_v", rv, velocity_points),
            ("rank", rank, rx.saturating_mul(rx).min(rv.saturating_mul(rv))),
        ];
    }
    for (key, value, limit) in limits {
        if value > limit {
            return Err(error(
                entries.line(key).or(grid_line),
                key,
                format!("{value} exceeds the largest representable rank {limit}"),
            ));
        }
    }

    let tau: f64 = entries.parse_required("tau", "a number")?;
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(error(entries.line("tau"), "tau", "must be positive and finite"));
    }
    let t_final: f64 = entries.parse_required("t_final", "a number")?;
    if !(t_final >= 0.0 && t_final.is_finite()) {
        return Err(error(entries.line("t_final"), "t_final", "must be non-negative and finite"));
    }
    if t_final / tau > MAX_STEPS {
        return Err(error(entries.line("tau"), "tau", format!("more than {MAX_STEPS:e} steps")));
    }

    let stride = match entries.parse::<usize>("stride", "an integer")? {
        Some(s) => positive("stride", s)?,
        None if hierarchical => DEFAULT_STRIDE_4D,
        None => DEFAULT_STRIDE_2D,
    };

    let output = entries
        .get("output")
        .map(|(_, v)| PathBuf::from(v))
        .unwrap_or_else(|| PathBuf::from(format!("{}.csv", scenario.name())));

    let events_line = entries.line("events");
    let mut events = Vec::new();
    if let Some((_, value)) = entries.get("events") {
        for item in value.split(',').map(str::trim) {
            let event = parse_event(item)
                .ok_or_else(|| error(events_line, "events", format!("expected `pulse@<time>`, found `{item}`")))?;
            if !(event.t >= 0.0 && event.t <= t_final) {
                return Err(error(events_line, "events", format!("event time {} outside [0, {t_final}]", event.t)));
            }
            if event.kind == EventKind::Pulse && scenario != ScenarioKind::Echo {
                return Err(error(events_line, "events", "pulse events need the echo scenario"));
            }
            events.push(event);
        }
        events.sort_by(|a, b| a.t.total_cmp(&b.t));
    }

    Ok(RunConfig {
        scenario,
        integrator,
        rank,
        rank_x,
        rank_v,
        rank_field,
        grid,
        tau,
        t_final,
        stride,
        output,
        events,
    })
}

impl FromStr for RunConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_config(s)
    }
}

fn join<T: fmt::Display>(items: &[T]) -> String {
    items.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(", ")
}

/// Canonical text form; parses back to an equal config.
impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "scenario = {}", self.scenario.name())?;
        let integrator = match self.integrator {
            Splitting::Lie => "lie",
            Splitting::Strang => "strang",
        };
        writeln!(f, "integrator = {integrator}")?;
        writeln!(f, "rank = {}", self.rank)?;
        for (key, value) in [("rank_x", self.rank_x), ("rank_v", self.rank_v), ("rank_field", self.rank_field)] {
            if let Some(v) = value {
                writeln!(f, "{key} = {v}")?;
            }
        }
        writeln!(f, "grid = {}", join(&self.grid))?;
        writeln!(f, "tau = {}", self.tau)?;
        writeln!(f, "t_final = {}", self.t_final)?;
        writeln!(f, "stride = {}", self.stride)?;
        writeln!(f, "output = {}", self.output.display())?;
        if !self.events.is_empty() {
            writeln!(f, "events = {}", join(&self.events))?;
        }
        Ok(())
    }
}
