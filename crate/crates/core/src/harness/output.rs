//! Tick-log CSV, JSON reports and SVG figures.

use std::fs;
use std::path::{Path, PathBuf};

use plotters::prelude::*;
use serde::{Deserialize, Serialize};

use super::run::RunResult;
use crate::certificates::{BoundViolation, CertificateConstants, TrajectoryReport};
use crate::error::{Error, Result};
use crate::schedule::{self, ScheduleParams};
use crate::types::{Mode, PowerSample, TickRecord, IDLE_RATIO};

/// Column order of the tick log.
pub const LOG_HEADER: [&str; 11] = [
    "t",
    "m_star",
    "m",
    "p_human_raw",
    "p_human_filt",
    "p_motor_target",
    "p_motor_actual",
    "y",
    "p_threshold",
    "mode",
    "vr",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct LogRow {
    t: f64,
    m_star: f64,
    m: f64,
    p_human_raw: f64,
    p_human_filt: f64,
    p_motor_target: f64,
    p_motor_actual: f64,
    y: f64,
    p_threshold: f64,
    mode: Mode,
    vr: f64,
}

impl From<&TickRecord> for LogRow {
    fn from(r: &TickRecord) -> Self {
        Self {
            t: r.sample.t,
            m_star: r.m_star,
            m: r.sample.ratio_m,
            p_human_raw: r.sample.p_human_raw,
            p_human_filt: r.sample.p_human_out,
            p_motor_target: r.p_motor_target,
            p_motor_actual: r.p_motor_actual,
            y: r.y_control,
            p_threshold: r.p_threshold,
            mode: r.mode,
            vr: r.ventilation_rate,
        }
    }
}

impl From<LogRow> for TickRecord {
    /// The filtered motor power is not logged; it is recovered from `m`.
    fn from(r: LogRow) -> Self {
        let p_motor_out = if r.p_human_filt == 0.0 {
            if r.m == IDLE_RATIO {
                0.0
            } else {
                r.p_motor_actual
            }
        } else {
            r.p_human_filt * (1.0 - r.m) / r.m
        };
        let idle = r.p_human_filt == 0.0 && p_motor_out == 0.0;
        TickRecord {
            sample: PowerSample {
                t: r.t,
                p_human_raw: r.p_human_raw,
                p_human_out: r.p_human_filt,
                p_motor_out,
                ratio_m: r.m,
            },
            m_star: r.m_star,
            p_motor_target: r.p_motor_target,
            p_motor_actual: r.p_motor_actual,
            y_control: r.y,
            p_threshold: r.p_threshold,
            mode: r.mode,
            ventilation_rate: r.vr,
            idle,
        }
    }
}

pub fn write_log<W: std::io::Write>(log: &[TickRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for rec in log {
        w.serialize(LogRow::from(rec))?;
    }
    if log.is_empty() {
        w.write_record(LOG_HEADER)?;
    }
    w.flush().map_err(|e| Error::io("<log>", e))?;
    Ok(())
}

pub fn log_to_csv_string(log: &[TickRecord]) -> Result<String> {
    let mut buf = Vec::new();
    write_log(log, &mut buf)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

pub fn read_log<R: std::io::Read>(reader: R) -> Result<Vec<TickRecord>> {
    let mut r = csv::Reader::from_reader(reader);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != LOG_HEADER {
        return Err(Error::Config(format!(
            "unexpected log header {header:?}, expected {LOG_HEADER:?}"
        )));
    }
    r.deserialize::<LogRow>()
        .map(|row| Ok(TickRecord::from(row?)))
        .collect()
}

pub fn read_log_file(path: impl AsRef<Path>) -> Result<Vec<TickRecord>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_log(file)
}

pub fn write_violations<W: std::io::Write>(violations: &[BoundViolation], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["t", "bound_name", "lhs", "rhs", "margin"])?;
    for v in violations {
        w.write_record([
            v.t.to_string(),
            v.bound_name.as_str().to_string(),
            v.lhs.to_string(),
            v.rhs.to_string(),
            v.margin.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<violations>", e))?;
    Ok(())
}

/// Certificate constants together with the outcome of the trajectory check.
#[derive(Debug, Clone, Serialize)]
pub struct CertificateFile<'a> {
    pub constants: &'a CertificateConstants,
    pub checked: crate::certificates::BoundCounts,
    pub skipped: crate::certificates::BoundCounts,
    pub violations: usize,
}

impl<'a> CertificateFile<'a> {
    pub fn new(constants: &'a CertificateConstants, report: &TrajectoryReport) -> Self {
        Self {
            constants,
            checked: report.checked,
            skipped: report.skipped,
            violations: report.violations.len(),
        }
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Write the log, reports and figures of `result` into `out_dir`.
pub fn emit_outputs(result: &RunResult, out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = out_dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = vec![];

    let path = dir.join("ticks.csv");
    write_file(&path, log_to_csv_string(&result.log)?.as_bytes())?;
    written.push(path);

    let path = dir.join("summary.json");
    write_file(&path, &to_json(&result.summary)?)?;
    written.push(path);

    if let (Some(constants), Some(report)) = (&result.constants, &result.report) {
        let path = dir.join("certificate.json");
        write_file(&path, &to_json(&CertificateFile::new(constants, report))?)?;
        written.push(path);

        let path = dir.join("violations.csv");
        let mut buf = Vec::new();
        write_violations(&report.violations, &mut buf)?;
        write_file(&path, &buf)?;
        written.push(path);
    }

    written.extend(plot_run(&result.log, dir)?);
    Ok(written)
}

fn plot_err(e: impl std::fmt::Display) -> Error {
    Error::Plot(e.to_string())
}

struct Series<'a> {
    label: &'a str,
    color: RGBColor,
    points: Vec<(f64, f64)>,
}

fn bounds(series: &[Series<'_>]) -> (f64, f64, f64, f64) {
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for s in series {
        for &(x, y) in &s.points {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
    }
    if !x0.is_finite() {
        return (0.0, 1.0, 0.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    let pad = 0.05 * (y1 - y0).max(1e-6);
    (x0, x1, y0 - pad, y1 + pad)
}

fn line_chart(path: &Path, title: &str, x_label: &str, y_label: &str, series: &[Series<'_>]) -> Result<()> {
    let (x0, x1, y0, y1) = bounds(series);
    let root = SVGBackend::new(path, (960, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc(x_label)
        .y_desc(y_label)
        .draw()
        .map_err(plot_err)?;
    for s in series {
        let color = s.color;
        chart
            .draw_series(LineSeries::new(s.points.iter().copied(), color.stroke_width(2)))
            .map_err(plot_err)?
            .label(s.label)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2)));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}

/// Horizontal axis of the scatter figure: zero to just past the largest
/// human power, raw or filtered.
pub fn scatter_x_range(log: &[TickRecord]) -> (f64, f64) {
    let x_max = log
        .iter()
        .map(|r| r.sample.p_human_out.max(r.sample.p_human_raw))
        .fold(0.0, f64::max)
        .max(1.0);
    (0.0, x_max * 1.05)
}

/// Motor power against human power, coloured by mode.
fn scatter_chart(path: &Path, log: &[TickRecord]) -> Result<()> {
    let (x0, x1) = scatter_x_range(log);
    let y_max = log
        .iter()
        .map(|r| r.p_motor_actual.max(r.p_motor_target))
        .fold(0.0, f64::max)
        .max(1.0);
    let root = SVGBackend::new(path, (640, 560)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("motor vs human power", ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(x0..x1, 0.0..y_max * 1.05)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("filtered human power (W)")
        .y_desc("motor power (W)")
        .draw()
        .map_err(plot_err)?;
    for (mode, color) in [(Mode::Cooperative, BLUE), (Mode::Competitive, RED)] {
        chart
            .draw_series(
                log.iter()
                    .filter(|r| r.mode == mode)
                    .map(|r| Circle::new((r.sample.p_human_out, r.p_motor_actual), 3, color.filled())),
            )
            .map_err(plot_err)?
            .label(mode.as_str())
            .legend(move |(x, y)| Circle::new((x + 8, y), 4, color.filled()));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}

/// Ratio, power and scatter figures, plus ventilation when it was modelled.
pub fn plot_run(log: &[TickRecord], dir: &Path) -> Result<Vec<PathBuf>> {
    let pts = |f: fn(&TickRecord) -> f64| log.iter().map(|r| (r.t(), f(r))).collect::<Vec<_>>();
    let mut out = vec![];

    let path = dir.join("ratio.svg");
    line_chart(
        &path,
        "human power ratio",
        "t (s)",
        "m",
        &[
            Series {
                label: "m",
                color: BLUE,
                points: pts(|r| r.sample.ratio_m),
            },
            Series {
                label: "m*",
                color: BLACK,
                points: pts(|r| r.m_star),
            },
        ],
    )?;
    out.push(path);

    let path = dir.join("powers.svg");
    line_chart(
        &path,
        "powers",
        "t (s)",
        "W",
        &[
            Series {
                label: "human (filtered)",
                color: GREEN,
                points: pts(|r| r.sample.p_human_out),
            },
            Series {
                label: "motor target",
                color: MAGENTA,
                points: pts(|r| r.p_motor_target),
            },
            Series {
                label: "motor delivered",
                color: BLUE,
                points: pts(|r| r.p_motor_actual),
            },
            Series {
                label: "threshold",
                color: RED,
                points: pts(|r| r.p_threshold),
            },
        ],
    )?;
    out.push(path);

    let path = dir.join("scatter.svg");
    scatter_chart(&path, log)?;
    out.push(path);

    if log.iter().any(|r| r.ventilation_rate != 0.0) {
        let path = dir.join("ventilation.svg");
        line_chart(
            &path,
            "ventilation rate",
            "t (s)",
            "L/min",
            &[Series {
                label: "VR",
                color: CYAN,
                points: pts(|r| r.ventilation_rate),
            }],
        )?;
        out.push(path);
    }
    Ok(out)
}

/// Equilibrium motor power `sqrt(f)` against human power at fixed `m_star`,
/// sampled at `n` points over `[0, p_max]`.
pub fn schedule_curve(m_star: f64, params: &ScheduleParams, p_max: f64, n: usize) -> Result<Vec<(f64, f64)>> {
    if !(p_max.is_finite() && p_max > 0.0) {
        return Err(Error::domain("p_max", p_max, "(0, inf) W"));
    }
    let n = n.max(2);
    (0..n)
        .map(|i| {
            let p = p_max * i as f64 / (n - 1) as f64;
            Ok((p, schedule::f_gain(p, m_star, params)?.sqrt()))
        })
        .collect()
}

/// Figure of the schedule at `m_star`: the bifurcation equilibrium, the
/// cooperative line it follows below the threshold, and the threshold.
pub fn plot_schedule(m_star: f64, params: &ScheduleParams, p_max: f64, path: &Path) -> Result<()> {
    let curve = schedule_curve(m_star, params, p_max, 400)?;
    let r = (1.0 - m_star) / m_star;
    let pt = schedule::threshold(m_star, params)?;
    let top = curve.iter().map(|&(p, x)| x.max(r * p)).fold(1.0, f64::max);
    line_chart(
        path,
        &format!("assist schedule at m* = {m_star}"),
        "filtered human power (W)",
        "motor power (W)",
        &[
            Series {
                label: "sqrt(f)",
                color: BLUE,
                points: curve.clone(),
            },
            Series {
                label: "cooperative line",
                color: BLACK,
                points: curve.iter().map(|&(p, _)| (p, r * p)).collect(),
            },
            Series {
                label: "threshold",
                color: RED,
                points: vec![(pt, 0.0), (pt, top)],
            },
        ],
    )
}
