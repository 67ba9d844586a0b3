//! CSV emitters. Column layouts are listed in `docs/formats.md`.

use std::fs::File;
use std::path::Path;

use csv::Writer;

use crate::dataprep::InputSequence;
use crate::error::{Error, IoContext, Result};
use crate::fusenet::AttentionRecord;
use crate::linalg::{Cov4, State};
use crate::mb::FusionOutput;
use crate::metrics::MetricReport;
use crate::tpmb::TrajectoryEstimate;

pub const LOCAL_HEADER: [&str; 9] = ["run", "sensor", "track", "time", "x", "y", "vx", "vy", "existence"];
pub const TRUTH_HEADER: [&str; 6] = ["run", "object", "x", "y", "vx", "vy"];
pub const FUSED_HEADER: [&str; 21] = [
    "run",
    "method",
    "component",
    "existence",
    "x",
    "y",
    "vx",
    "vy",
    "p_x_x",
    "p_x_y",
    "p_x_vx",
    "p_x_vy",
    "p_y_y",
    "p_y_vx",
    "p_y_vy",
    "p_vx_vx",
    "p_vx_vy",
    "p_vy_vy",
    "ellipse_major",
    "ellipse_minor",
    "ellipse_angle",
];
pub const ATTENTION_HEADER: [&str; 4] = ["layer", "query", "position", "weight"];
pub const INPUT_HEADER: [&str; 9] = [
    "position",
    "sensor",
    "time",
    "traj_index",
    "x",
    "y",
    "vx",
    "vy",
    "existence",
];
pub const RESULT_HEADER: [&str; 15] = [
    "scenario",
    "task",
    "method",
    "run",
    "gospa_total",
    "gospa_localization",
    "gospa_missed",
    "gospa_false",
    "nll_total",
    "nll_localization",
    "nll_missed",
    "nll_false",
    "nll_exact",
    "estimates",
    "truths",
];
pub const SUMMARY_ROWS: [&str; 8] = [
    "gospa_total",
    "gospa_localization",
    "gospa_missed",
    "gospa_false",
    "nll_total",
    "nll_localization",
    "nll_missed",
    "nll_false",
];

pub fn create(path: &Path, header: &[&str]) -> Result<Writer<File>> {
    let mut w = Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    Ok(w)
}

pub fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::Io {
            context: Some(format!("writing {}", path.display())),
            source,
        },
        other => Error::Format {
            what: "csv",
            detail: format!("{}: {other:?}", path.display()),
        },
    }
}

/// Thin wrapper that remembers its path for error messages.
pub struct Table {
    path: std::path::PathBuf,
    w: Writer<File>,
}

impl Table {
    pub fn create(path: &Path, header: &[&str]) -> Result<Self> {
        Ok(Table {
            path: path.to_path_buf(),
            w: create(path, header)?,
        })
    }

    pub fn row<I, S>(&mut self, fields: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.w.write_record(fields).map_err(|e| csv_err(&self.path, e))
    }

    pub fn finish(mut self) -> Result<()> {
        self.w.flush().io_context(|| format!("writing {}", self.path.display()))
    }
}

fn f(x: f64) -> String {
    format!("{x}")
}

/// 3-sigma ellipse of the position block: `(major, minor, angle)`, the angle
/// of the major axis measured from the x axis.
pub fn ellipse(cov: &Cov4) -> (f64, f64, f64) {
    let (a, b, c) = (cov[(0, 0)], cov[(0, 1)], cov[(1, 1)]);
    let mid = 0.5 * (a + c);
    let rad = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    let l1 = (mid + rad).max(0.0);
    let l2 = (mid - rad).max(0.0);
    let angle = 0.5 * (2.0 * b).atan2(a - c);
    (3.0 * l1.sqrt(), 3.0 * l2.sqrt(), angle)
}

pub fn write_local(t: &mut Table, run: usize, sensor: usize, estimates: &[TrajectoryEstimate]) -> Result<()> {
    for (track, e) in estimates.iter().enumerate() {
        for (j, s) in e.states.iter().enumerate() {
            t.row([
                run.to_string(),
                sensor.to_string(),
                track.to_string(),
                (e.start_time + j).to_string(),
                f(s[0]),
                f(s[1]),
                f(s[2]),
                f(s[3]),
                f(e.existence),
            ])?;
        }
    }
    Ok(())
}

pub fn write_truth(t: &mut Table, run: usize, truth: &[State]) -> Result<()> {
    for (i, s) in truth.iter().enumerate() {
        t.row([run.to_string(), i.to_string(), f(s[0]), f(s[1]), f(s[2]), f(s[3])])?;
    }
    Ok(())
}

pub fn write_fused(t: &mut Table, run: usize, method: &str, out: &FusionOutput) -> Result<()> {
    for (i, c) in out.components.iter().enumerate() {
        let mut row = vec![run.to_string(), method.to_string(), i.to_string(), f(c.existence)];
        row.extend(c.mean.iter().map(|v| f(*v)));
        for r in 0..4 {
            for col in r..4 {
                row.push(f(c.cov[(r, col)]));
            }
        }
        let (major, minor, angle) = ellipse(&c.cov);
        row.extend([f(major), f(minor), f(angle)]);
        t.row(row)?;
    }
    Ok(())
}

pub fn write_attention(t: &mut Table, att: &AttentionRecord) -> Result<()> {
    for (l, layer) in att.layers.iter().enumerate() {
        for (q, weights) in layer.iter().enumerate() {
            for (p, w) in weights.iter().enumerate() {
                t.row([l.to_string(), q.to_string(), p.to_string(), f(*w)])?;
            }
        }
    }
    Ok(())
}

pub fn write_inputs(t: &mut Table, seq: &InputSequence) -> Result<()> {
    for (p, v) in seq.vectors.iter().enumerate() {
        let x = v.state();
        t.row([
            p.to_string(),
            v.sensor.to_string(),
            v.time.to_string(),
            v.traj_index.to_string(),
            f(x[0]),
            f(x[1]),
            f(x[2]),
            f(x[3]),
            f(v.existence()),
        ])?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn write_result(
    t: &mut Table,
    scenario: u8,
    task: u8,
    method: &str,
    run: usize,
    gospa: &MetricReport,
    nll: &MetricReport,
    exact: bool,
    estimates: usize,
    truths: usize,
) -> Result<()> {
    t.row([
        scenario.to_string(),
        task.to_string(),
        method.to_string(),
        run.to_string(),
        f(gospa.total),
        f(gospa.localization),
        f(gospa.missed),
        f(gospa.false_detection),
        f(nll.total),
        f(nll.localization),
        f(nll.missed),
        f(nll.false_detection),
        exact.to_string(),
        estimates.to_string(),
        truths.to_string(),
    ])
}

/// Eight metric values in `SUMMARY_ROWS` order.
pub fn summary_values(gospa: &MetricReport, nll: &MetricReport) -> [f64; 8] {
    [
        gospa.total,
        gospa.localization,
        gospa.missed,
        gospa.false_detection,
        nll.total,
        nll.localization,
        nll.missed,
        nll.false_detection,
    ]
}

pub fn write_summary(path: &Path, methods: &[(&str, [f64; 8])]) -> Result<()> {
    let mut header = vec!["metric"];
    header.extend(methods.iter().map(|(m, _)| *m));
    let mut t = Table::create(path, &header)?;
    for (i, name) in SUMMARY_ROWS.iter().enumerate() {
        let mut row = vec![name.to_string()];
        row.extend(methods.iter().map(|(_, v)| f(v[i])));
        t.row(row)?;
    }
    t.finish()
}
