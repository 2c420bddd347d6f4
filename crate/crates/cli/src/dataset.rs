//! Synthetic data generation and the CSV layouts shared by all commands.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use hcebnn::reference::{
    add_noise, fd_solve, fd_solve_with, lhs_sample, FdOverrides, place_sensors, FieldSnapshot, Grid, Measurement,
};
use hcebnn::{ObservationTag, Result as CoreResult};

use crate::config::{RunConfig, Truth};
use crate::error::CliError;

pub const OBSERVATIONS_HEADER: &str = "# hcebnn observations v1";
pub const COLLOCATION_HEADER: &str = "# hcebnn collocation v1";
pub const TRUTH_HEADER: &str = "# hcebnn truth v1";
pub const PREDICTION_HEADER: &str = "# hcebnn prediction v1";
pub const TRACE_HEADER: &str = "# hcebnn trace v1";
pub const SORTED_HEADER: &str = "# hcebnn sorted v1";
pub const SWEEP_HEADER: &str = "# hcebnn sweep v1";

const AXES: [&str; 3] = ["x", "y", "z"];

/// A space-time location in physical units.
#[derive(Clone, Debug, PartialEq)]
pub struct Location {
    pub coords: Vec<f64>,
    pub time: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TruthTable {
    pub locations: Vec<Location>,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub observations: Vec<Measurement>,
    pub collocation: Vec<Location>,
    pub truth: TruthTable,
}

/// Ground-truth field evaluable anywhere in the space-time box.
pub enum TruthField {
    Analytic(hcebnn::AnalyticCase),
    Snapshots(Vec<FieldSnapshot>),
}

impl TruthField {
    pub fn build(cfg: &RunConfig) -> CoreResult<Self> {
        Ok(match &cfg.problem.truth {
            Truth::Analytic { case } => TruthField::Analytic(*case),
            Truth::FiniteDifference { solver, initial_bump } => {
                let domain = &cfg.problem.domain;
                match (initial_bump, domain.initial_temperature) {
                    (Some(a), Some(t0)) if domain.time_horizon.is_some() => {
                        let grid = Grid::uniform(&domain.extents, &solver.nodes)?;
                        let init: Vec<f64> = grid
                            .points()
                            .iter()
                            .map(|p| t0 + a * bump(p, &domain.extents))
                            .collect();
                        let overrides = FdOverrides {
                            initial: Some(&init),
                            ..Default::default()
                        };
                        TruthField::Snapshots(fd_solve_with(domain, solver, overrides)?)
                    }
                    _ => TruthField::Snapshots(fd_solve(domain, solver)?),
                }
            }
        })
    }

    pub fn eval(&self, coords: &[f64], time: Option<f64>) -> CoreResult<f64> {
        match self {
            TruthField::Analytic(case) => case.evaluate(coords, time),
            TruthField::Snapshots(snaps) => {
                let t = match time {
                    None => return snaps[0].interpolate(coords),
                    Some(t) => t,
                };
                let i = snaps.partition_point(|s| s.time.unwrap_or(0.0) <= t);
                if i == 0 {
                    return snaps[0].interpolate(coords);
                }
                if i == snaps.len() {
                    return snaps[i - 1].interpolate(coords);
                }
                let (a, b) = (&snaps[i - 1], &snaps[i]);
                let (ta, tb) = (a.time.unwrap_or(0.0), b.time.unwrap_or(0.0));
                let f = (t - ta) / (tb - ta);
                Ok((1.0 - f) * a.interpolate(coords)? + f * b.interpolate(coords)?)
            }
        }
    }
}

/// Product over axes of `(s - 2s^3 + s^4) / 0.3125`: peak 1 at the centre,
/// zero value and zero curvature at every facet.
pub fn bump(coords: &[f64], extents: &[f64]) -> f64 {
    coords
        .iter()
        .zip(extents)
        .map(|(&x, &l)| {
            let s = x / l;
            (s - 2.0 * s.powi(3) + s.powi(4)) / 0.3125
        })
        .product()
}

fn even_times(horizon: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n).map(|j| horizon * j as f64 / (n - 1) as f64).collect(),
    }
}

fn on_boundary(coords: &[f64], extents: &[f64]) -> bool {
    coords
        .iter()
        .zip(extents)
        .any(|(&x, &l)| x.abs() <= 1e-12 * l || (x - l).abs() <= 1e-12 * l)
}

/// Noise stream seed, kept apart from the placement stream.
fn noise_seed(seed: u64) -> u64 {
    seed ^ 0x9e37_79b9_7f4a_7c15
}

/// Evaluation grid in physical units.
pub fn evaluation_locations(cfg: &RunConfig) -> CoreResult<Vec<Location>> {
    let ext = &cfg.problem.domain.extents;
    let grid = if cfg.evaluation.interior {
        Grid::interior(ext, &cfg.evaluation.nodes)?
    } else {
        Grid::uniform(ext, &cfg.evaluation.nodes)?
    };
    let times: Vec<Option<f64>> = match cfg.problem.domain.time_horizon {
        Some(h) => even_times(h, cfg.evaluation.times).into_iter().map(Some).collect(),
        None => vec![None],
    };
    let mut out = Vec::with_capacity(grid.len() * times.len());
    for &time in &times {
        for coords in grid.points() {
            out.push(Location { coords, time });
        }
    }
    Ok(out)
}

pub fn generate(cfg: &RunConfig) -> Result<Dataset, CliError> {
    let domain = &cfg.problem.domain;
    let truth = TruthField::build(cfg)?;
    let mut clean = Vec::new();
    if cfg.data.sensors > 0 {
        let sensors = place_sensors(
            domain,
            cfg.data.sensors,
            cfg.data.scheme,
            cfg.data.seed,
            cfg.data.snap.as_deref(),
        )?;
        let times: Vec<Option<f64>> = match domain.time_horizon {
            Some(h) => even_times(h, cfg.data.time_samples.unwrap_or(21))
                .into_iter()
                .map(Some)
                .collect(),
            None => vec![None],
        };
        for &time in &times {
            for s in &sensors {
                let tag = if on_boundary(s, &domain.extents) {
                    ObservationTag::Boundary
                } else {
                    ObservationTag::Interior
                };
                clean.push(Measurement {
                    coords: s.clone(),
                    time,
                    temperature: truth.eval(s, time)?,
                    tag,
                });
            }
        }
    }
    if let (Some(_), Some(nodes)) = (domain.time_horizon, &cfg.data.initial_nodes) {
        let grid = Grid::uniform(&domain.extents, nodes)?;
        for coords in grid.points() {
            clean.push(Measurement {
                temperature: truth.eval(&coords, Some(0.0))?,
                coords,
                time: Some(0.0),
                tag: ObservationTag::Initial,
            });
        }
    }
    let observations = add_noise(&clean, cfg.data.noise, noise_seed(cfg.data.seed))?;

    let mut bounds = domain.bounds();
    if let Some(h) = domain.time_horizon {
        bounds.push((0.0, h));
    }
    let collocation = if cfg.training.collocation == 0 {
        Vec::new()
    } else {
        lhs_sample(cfg.training.collocation, &bounds, cfg.data.collocation_seed)?
            .into_iter()
            .map(|mut p| {
                let time = domain.time_horizon.map(|_| p.pop().expect("time axis"));
                Location { coords: p, time }
            })
            .collect()
    };

    let locations = evaluation_locations(cfg)?;
    let values = locations
        .iter()
        .map(|l| truth.eval(&l.coords, l.time))
        .collect::<CoreResult<Vec<_>>>()?;
    Ok(Dataset {
        observations,
        collocation,
        truth: TruthTable { locations, values },
    })
}

fn location_header(dims: usize, has_time: bool) -> Vec<String> {
    let mut h: Vec<String> = AXES[..dims].iter().map(|s| s.to_string()).collect();
    if has_time {
        h.push("t".into());
    }
    h
}

fn location_fields(l: &Location) -> Vec<String> {
    let mut f: Vec<String> = l.coords.iter().map(|v| v.to_string()).collect();
    if let Some(t) = l.time {
        f.push(t.to_string());
    }
    f
}

/// Writes a versioned CSV: one comment line, a header row, then records.
pub fn write_csv(path: &Path, comment: &str, header: &[String], rows: &[Vec<String>]) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut out = BufWriter::new(file);
    writeln!(out, "{comment}").map_err(|e| CliError::io(path, e))?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header).map_err(|e| CliError::parse(path, e))?;
    for r in rows {
        w.write_record(r).map_err(|e| CliError::parse(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))?;
    Ok(())
}

/// Reads a CSV written by [`write_csv`], checking its version line.
pub fn read_csv(path: &Path, comment: &str) -> Result<(Vec<String>, Vec<Vec<String>>), CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let first = text.lines().next().unwrap_or_default();
    if first.trim() != comment {
        return Err(CliError::parse(path, format!("expected version line {comment:?}, found {first:?}")));
    }
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let header = r
        .headers()
        .map_err(|e| CliError::parse(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| CliError::parse(path, e))?;
        rows.push(rec.iter().map(str::to_string).collect());
    }
    Ok((header, rows))
}

fn parse_f64(path: &Path, row: usize, s: &str) -> Result<f64, CliError> {
    s.trim()
        .parse()
        .map_err(|_| CliError::parse(path, format!("row {}: {s:?} is not a number", row + 1)))
}

/// Splits a header into spatial axis count and time presence.
fn layout(path: &Path, header: &[String], trailing: &[&str]) -> Result<(usize, bool), CliError> {
    let n = header.len();
    if n < trailing.len() + 1 || header[n - trailing.len()..] != *trailing {
        return Err(CliError::parse(path, format!("header must end with {trailing:?}")));
    }
    let lead = &header[..n - trailing.len()];
    let has_time = lead.last().is_some_and(|h| h == "t");
    let dims = lead.len() - usize::from(has_time);
    if dims == 0 || dims > 3 || lead[..dims] != AXES[..dims] {
        return Err(CliError::parse(path, format!("unexpected coordinate columns {lead:?}")));
    }
    Ok((dims, has_time))
}

fn parse_location(path: &Path, i: usize, row: &[String], dims: usize, has_time: bool) -> Result<Location, CliError> {
    let coords = row[..dims]
        .iter()
        .map(|s| parse_f64(path, i, s))
        .collect::<Result<Vec<_>, _>>()?;
    let time = if has_time {
        Some(parse_f64(path, i, &row[dims])?)
    } else {
        None
    };
    Ok(Location { coords, time })
}

pub fn write_observations(path: &Path, obs: &[Measurement]) -> Result<(), CliError> {
    let dims = obs.first().map_or(1, |m| m.coords.len());
    let has_time = obs.first().is_some_and(|m| m.time.is_some());
    let mut header = location_header(dims, has_time);
    header.extend(["T".to_string(), "tag".to_string()]);
    let rows: Vec<Vec<String>> = obs
        .iter()
        .map(|m| {
            let mut r = location_fields(&Location {
                coords: m.coords.clone(),
                time: m.time,
            });
            r.push(m.temperature.to_string());
            r.push(m.tag.as_str().to_string());
            r
        })
        .collect();
    write_csv(path, OBSERVATIONS_HEADER, &header, &rows)
}

pub fn read_observations(path: &Path) -> Result<Vec<Measurement>, CliError> {
    let (header, rows) = read_csv(path, OBSERVATIONS_HEADER)?;
    let (dims, has_time) = layout(path, &header, &["T", "tag"])?;
    rows.iter()
        .enumerate()
        .map(|(i, row)| {
            let loc = parse_location(path, i, row, dims, has_time)?;
            let k = dims + usize::from(has_time);
            Ok(Measurement {
                coords: loc.coords,
                time: loc.time,
                temperature: parse_f64(path, i, &row[k])?,
                tag: row[k + 1].parse().map_err(|e| CliError::parse(path, format!("row {}: {e}", i + 1)))?,
            })
        })
        .collect()
}

pub fn write_collocation(path: &Path, pts: &[Location], dims: usize, has_time: bool) -> Result<(), CliError> {
    let header = location_header(dims, has_time);
    let rows: Vec<Vec<String>> = pts.iter().map(location_fields).collect();
    write_csv(path, COLLOCATION_HEADER, &header, &rows)
}

pub fn read_collocation(path: &Path) -> Result<Vec<Location>, CliError> {
    let (header, rows) = read_csv(path, COLLOCATION_HEADER)?;
    let (dims, has_time) = layout(path, &header, &[])?;
    rows.iter()
        .enumerate()
        .map(|(i, row)| parse_location(path, i, row, dims, has_time))
        .collect()
}

pub fn write_truth(path: &Path, truth: &TruthTable) -> Result<(), CliError> {
    let dims = truth.locations.first().map_or(1, |l| l.coords.len());
    let has_time = truth.locations.first().is_some_and(|l| l.time.is_some());
    let mut header = location_header(dims, has_time);
    header.push("T".into());
    let rows: Vec<Vec<String>> = truth
        .locations
        .iter()
        .zip(&truth.values)
        .map(|(l, v)| {
            let mut r = location_fields(l);
            r.push(v.to_string());
            r
        })
        .collect();
    write_csv(path, TRUTH_HEADER, &header, &rows)
}

pub fn read_truth(path: &Path) -> Result<TruthTable, CliError> {
    let (header, rows) = read_csv(path, TRUTH_HEADER)?;
    let (dims, has_time) = layout(path, &header, &["T"])?;
    let mut locations = Vec::with_capacity(rows.len());
    let mut values = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        locations.push(parse_location(path, i, row, dims, has_time)?);
        values.push(parse_f64(path, i, &row[dims + usize::from(has_time)])?);
    }
    Ok(TruthTable { locations, values })
}

pub const OBSERVATIONS_FILE: &str = "observations.csv";
pub const COLLOCATION_FILE: &str = "collocation.csv";
pub const TRUTH_FILE: &str = "truth.csv";

pub fn write_dataset(dir: &Path, cfg: &RunConfig, data: &Dataset) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    write_observations(&dir.join(OBSERVATIONS_FILE), &data.observations)?;
    write_collocation(
        &dir.join(COLLOCATION_FILE),
        &data.collocation,
        cfg.problem.domain.spatial_dims(),
        cfg.is_transient(),
    )?;
    write_truth(&dir.join(TRUTH_FILE), &data.truth)
}

pub fn read_dataset(dir: &Path) -> Result<Dataset, CliError> {
    Ok(Dataset {
        observations: read_observations(&dir.join(OBSERVATIONS_FILE))?,
        collocation: read_collocation(&dir.join(COLLOCATION_FILE))?,
        truth: read_truth(&dir.join(TRUTH_FILE))?,
    })
}
