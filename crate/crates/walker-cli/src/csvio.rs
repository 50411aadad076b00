//! Versioned CSV writers and readers for simulation logs.
//!
//! Every file starts with a `# schema: <name>-v1` comment line followed by
//! a header row; readers skip `#` lines.  Floats are written with Rust's
//! shortest round-trip formatting, so identical runs produce byte-identical
//! files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use thiserror::Error;
use walker_core::lip::{orbital_energy, LipParams};
use walker_core::sim::{SimLog, SimOutcome};
use walker_core::ReducedState;

pub const TRAJECTORY_SCHEMA: &str = "walker-trajectory-v1";
pub const STEPS_SCHEMA: &str = "walker-steps-v1";
pub const PHASE_SCHEMA: &str = "walker-phase-v1";
pub const SWEEP_SCHEMA: &str = "walker-sweep-v1";

pub const TRAJECTORY_HEADER: [&str; 34] = [
    "t",
    "step",
    "s",
    "q_base_x",
    "q_base_z",
    "q_torso",
    "q_stance_hip",
    "q_stance_knee",
    "q_swing_hip",
    "q_swing_knee",
    "dq_base_x",
    "dq_base_z",
    "dq_torso",
    "dq_stance_hip",
    "dq_stance_knee",
    "dq_swing_hip",
    "dq_swing_knee",
    "y_torso",
    "y_z_com",
    "y_x_sw",
    "y_z_sw",
    "yd_torso",
    "yd_z_com",
    "yd_x_sw",
    "yd_z_sw",
    "tau_stance_hip",
    "tau_stance_knee",
    "tau_swing_hip",
    "tau_swing_knee",
    "f_x",
    "f_z",
    "x_com",
    "l_y",
    "energy",
];

pub const STEPS_HEADER: [&str; 13] = [
    "step",
    "stone_l",
    "stone_h",
    "t_s_planned",
    "t_s",
    "u_des",
    "dz_minus",
    "e_plus",
    "speed",
    "x_minus",
    "l_minus",
    "placement_error",
    "viable",
];

#[derive(Debug, Error)]
pub enum CsvError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Format {
        path: String,
        source: csv::Error,
    },
    #[error("{path}: missing column {name}")]
    MissingColumn { path: String, name: &'static str },
    #[error("{path} line {line}: {message}")]
    BadField {
        path: String,
        line: usize,
        message: String,
    },
}

fn io_err(path: &Path, source: std::io::Error) -> CsvError {
    CsvError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn fmt_err(path: &Path, source: csv::Error) -> CsvError {
    CsvError::Format {
        path: path.display().to_string(),
        source,
    }
}

fn schema_writer(path: &Path, schema: &str) -> Result<csv::Writer<BufWriter<File>>, CsvError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut buf = BufWriter::new(file);
    writeln!(buf, "# schema: {schema}").map_err(|e| io_err(path, e))?;
    Ok(csv::Writer::from_writer(buf))
}

fn fmt(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        "nan".to_string()
    }
}

/// Writes per-cycle telemetry.  The `energy` column is the orbital energy
/// of the reduced state in the step plan's slope-normal frame.
pub fn write_trajectory(path: &Path, log: &SimLog, g: f64) -> Result<(), CsvError> {
    let mut w = schema_writer(path, TRAJECTORY_SCHEMA)?;
    w.write_record(TRAJECTORY_HEADER).map_err(|e| fmt_err(path, e))?;
    for s in &log.samples {
        let energy = LipParams::new(s.z_tilde, g)
            .map(|p| orbital_energy(ReducedState::new(s.x_com, s.l_y), &p))
            .unwrap_or(f64::NAN);
        let mut rec: Vec<String> = Vec::with_capacity(TRAJECTORY_HEADER.len());
        rec.push(fmt(s.t));
        rec.push(s.step.to_string());
        rec.push(fmt(s.s));
        rec.extend(s.q.iter().map(|&v| fmt(v)));
        rec.extend(s.dq.iter().map(|&v| fmt(v)));
        rec.extend(s.y.iter().map(|&v| fmt(v)));
        rec.extend(s.y_des.iter().map(|&v| fmt(v)));
        rec.extend(s.tau.iter().map(|&v| fmt(v)));
        rec.push(fmt(s.force.x));
        rec.push(fmt(s.force.y));
        rec.push(fmt(s.x_com));
        rec.push(fmt(s.l_y));
        rec.push(fmt(energy));
        w.write_record(&rec).map_err(|e| fmt_err(path, e))?;
    }
    let mut buf = w.into_inner().map_err(|e| CsvError::Io {
        path: path.display().to_string(),
        source: std::io::Error::other(e.to_string()),
    })?;
    buf.flush().map_err(|e| io_err(path, e))?;
    Ok(())
}

/// Writes the per-step summary.  Trailing comment lines record the
/// requested step count and the outcome so `metrics` can flag failures.
pub fn write_steps(path: &Path, log: &SimLog, requested: usize) -> Result<(), CsvError> {
    let mut w = schema_writer(path, STEPS_SCHEMA)?;
    w.write_record(STEPS_HEADER).map_err(|e| fmt_err(path, e))?;
    for r in &log.steps {
        let speed = if r.actual_duration > 0.0 {
            r.stone.l_des() / r.actual_duration
        } else {
            f64::NAN
        };
        w.write_record([
            r.index.to_string(),
            fmt(r.stone.l_des()),
            fmt(r.stone.h_des()),
            fmt(r.planned_duration),
            fmt(r.actual_duration),
            fmt(r.u_des_final),
            fmt(r.dz_com_minus),
            fmt(r.energy_plus),
            fmt(speed),
            fmt(r.x_com_minus),
            fmt(r.l_minus),
            fmt(r.placement_error),
            r.viable.to_string(),
        ])
        .map_err(|e| fmt_err(path, e))?;
    }
    let mut buf = w.into_inner().map_err(|e| CsvError::Io {
        path: path.display().to_string(),
        source: std::io::Error::other(e.to_string()),
    })?;
    writeln!(buf, "# requested: {requested}").map_err(|e| io_err(path, e))?;
    writeln!(buf, "# outcome: {}", outcome_tag(&log.outcome)).map_err(|e| io_err(path, e))?;
    buf.flush().map_err(|e| io_err(path, e))?;
    Ok(())
}

pub fn outcome_tag(outcome: &SimOutcome) -> String {
    match outcome {
        SimOutcome::Completed => "completed".to_string(),
        SimOutcome::Fell { step, t } => format!("fell step {step} t {t:.3}"),
        SimOutcome::Stalled { step, t } => format!("stalled step {step} t {t:.3}"),
        SimOutcome::ControllerFailure { step, t, reason } => {
            format!("controller failure step {step} t {t:.3}: {reason}")
        }
    }
}

/// A parsed per-step summary file.
#[derive(Debug, Clone)]
pub struct StepsFile {
    pub rows: Vec<StepRow>,
    /// From the trailing comment, when present.
    pub requested: Option<usize>,
    pub outcome: Option<String>,
}

#[derive(Debug, Clone, Copy)]
pub struct StepRow {
    pub step: usize,
    pub stone_l: f64,
    pub stone_h: f64,
    pub t_s: f64,
    pub u_des: f64,
    pub dz_minus: f64,
    pub e_plus: f64,
    pub speed: f64,
    pub x_minus: f64,
    pub l_minus: f64,
}

pub fn read_steps(path: &Path) -> Result<StepsFile, CsvError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut requested = None;
    let mut outcome = None;
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix("# requested:") {
            requested = rest.trim().parse().ok();
        } else if let Some(rest) = line.strip_prefix("# outcome:") {
            outcome = Some(rest.trim().to_string());
        }
    }
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| fmt_err(path, e))?.clone();
    let col = |name: &'static str| -> Result<usize, CsvError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or(CsvError::MissingColumn {
                path: path.display().to_string(),
                name,
            })
    };
    let (c_step, c_l, c_h, c_ts, c_u, c_dz, c_e, c_v, c_x, c_ly) = (
        col("step")?,
        col("stone_l")?,
        col("stone_h")?,
        col("t_s")?,
        col("u_des")?,
        col("dz_minus")?,
        col("e_plus")?,
        col("speed")?,
        col("x_minus")?,
        col("l_minus")?,
    );
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| fmt_err(path, e))?;
        let get = |c: usize| -> Result<f64, CsvError> {
            rec.get(c)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| CsvError::BadField {
                    path: path.display().to_string(),
                    line: i + 3,
                    message: format!("column {c} is not a number"),
                })
        };
        rows.push(StepRow {
            step: rec
                .get(c_step)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| CsvError::BadField {
                    path: path.display().to_string(),
                    line: i + 3,
                    message: "step index is not an integer".to_string(),
                })?,
            stone_l: get(c_l)?,
            stone_h: get(c_h)?,
            t_s: get(c_ts)?,
            u_des: get(c_u)?,
            dz_minus: get(c_dz)?,
            e_plus: get(c_e)?,
            speed: get(c_v)?,
            x_minus: get(c_x)?,
            l_minus: get(c_ly)?,
        });
    }
    Ok(StepsFile {
        rows,
        requested,
        outcome,
    })
}

/// Reads the `(x_com, l_y)` columns of a trajectory file for the phase
/// portrait.
pub fn read_trajectory_phase(path: &Path) -> Result<Vec<(f64, f64)>, CsvError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| fmt_err(path, e))?.clone();
    let cx = headers
        .iter()
        .position(|h| h == "x_com")
        .ok_or(CsvError::MissingColumn {
            path: path.display().to_string(),
            name: "x_com",
        })?;
    let cl = headers
        .iter()
        .position(|h| h == "l_y")
        .ok_or(CsvError::MissingColumn {
            path: path.display().to_string(),
            name: "l_y",
        })?;
    let mut pts = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| fmt_err(path, e))?;
        let parse = |c: usize| -> Result<f64, CsvError> {
            rec.get(c)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| CsvError::BadField {
                    path: path.display().to_string(),
                    line: i + 3,
                    message: format!("column {c} is not a number"),
                })
        };
        pts.push((parse(cx)?, parse(cl)?));
    }
    Ok(pts)
}

/// Writes the phase-portrait file: measured `(x, L)` points plus the
/// nominal LIP orbit of the target energy for overlay.
pub fn write_phase(
    path: &Path,
    measured: &[(f64, f64)],
    nominal: &[(f64, f64)],
) -> Result<(), CsvError> {
    let mut w = schema_writer(path, PHASE_SCHEMA)?;
    w.write_record(["source", "x", "l"]).map_err(|e| fmt_err(path, e))?;
    for &(x, l) in measured {
        w.write_record(["measured", &fmt(x), &fmt(l)])
            .map_err(|e| fmt_err(path, e))?;
    }
    for &(x, l) in nominal {
        w.write_record(["nominal", &fmt(x), &fmt(l)])
            .map_err(|e| fmt_err(path, e))?;
    }
    let mut buf = w.into_inner().map_err(|e| CsvError::Io {
        path: path.display().to_string(),
        source: std::io::Error::other(e.to_string()),
    })?;
    buf.flush().map_err(|e| io_err(path, e))?;
    Ok(())
}

/// Writes the sweep success-rate table.
pub fn write_sweep(
    path: &Path,
    rows: &[(f64, f64, usize, usize)],
) -> Result<(), CsvError> {
    let mut w = schema_writer(path, SWEEP_SCHEMA)?;
    w.write_record(["epsilon", "e_star", "successes", "runs", "rate"])
        .map_err(|e| fmt_err(path, e))?;
    for &(eps, e_star, ok, runs) in rows {
        let rate = if runs > 0 {
            ok as f64 / runs as f64
        } else {
            f64::NAN
        };
        w.write_record([
            fmt(eps),
            fmt(e_star),
            ok.to_string(),
            runs.to_string(),
            fmt(rate),
        ])
        .map_err(|e| fmt_err(path, e))?;
    }
    let mut buf = w.into_inner().map_err(|e| CsvError::Io {
        path: path.display().to_string(),
        source: std::io::Error::other(e.to_string()),
    })?;
    buf.flush().map_err(|e| io_err(path, e))?;
    Ok(())
}
