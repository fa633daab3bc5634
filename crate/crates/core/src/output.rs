//! CSV and SVG artifacts.

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use crate::domain::ProblemParams;
use crate::error::{Error, Result};
use crate::functionals::EnergySnapshot;
use crate::integrator::{Sample, Termination, Trajectory};

pub const TRAJECTORY_HEADER: [&str; 13] = [
    "t",
    "E",
    "I",
    "J",
    "kinetic",
    "boundary_kinetic",
    "grad_sq",
    "lp_term",
    "trace_u",
    "diss_interior",
    "diss_boundary",
    "theta",
    "dt",
];

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Csv(format!("{other:?}")),
    }
}

fn sample_row(s: &Sample) -> [f64; 13] {
    let n = &s.snapshot;
    [
        n.t,
        n.energy,
        n.nehari,
        n.potential,
        n.kinetic,
        n.boundary_kinetic,
        n.grad_sq,
        n.lp_term,
        n.trace_u,
        s.diss_interior,
        s.diss_boundary,
        s.theta,
        n.dt_used,
    ]
}

/// Shortest decimal that parses back to `x`, in exponent form outside
/// `[1e-5, 1e16)`.
pub fn format_float(x: f64) -> String {
    let a = x.abs();
    if a == 0.0 || !a.is_finite() || (1e-5..1e16).contains(&a) {
        x.to_string()
    } else {
        format!("{x:e}")
    }
}

/// Writes the trajectory table. Floats use [`format_float`].
pub fn write_trajectory<W: Write>(trajectory: &Trajectory, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRAJECTORY_HEADER).map_err(csv_err)?;
    for s in &trajectory.samples {
        w.write_record(sample_row(s).iter().map(|x| format_float(*x)))
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trajectory_csv(trajectory: &Trajectory, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_trajectory(trajectory, std::io::BufWriter::new(file))
}

/// Metadata a trajectory table does not carry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReadContext {
    pub params: ProblemParams,
    /// Configured `t_end`.
    pub horizon: f64,
    /// Blow-up threshold Θ on `‖∇u‖₂ + ‖u_t‖₂`.
    pub blowup_threshold: f64,
}

/// Reads a trajectory table written by [`write_trajectory`].
///
/// The termination is inferred: a run that stops short of the horizon is
/// `BlownUp` when its last row exceeds Θ and `Collapsed` otherwise. Cross
/// terms are not stored, so `terms` is `None` on every sample.
pub fn read_trajectory<R: Read>(input: R, ctx: &ReadContext) -> Result<Trajectory> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers().map_err(csv_err)?;
    if header.iter().ne(TRAJECTORY_HEADER) {
        return Err(Error::Csv(format!(
            "unexpected header `{}`",
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut samples = Vec::new();
    for (i, record) in r.records().enumerate() {
        let record = record.map_err(csv_err)?;
        let mut row = [0.0; 13];
        for (j, field) in record.iter().enumerate() {
            row[j] = field.parse().map_err(|_| {
                Error::Csv(format!(
                    "row {}, column {}: not a number: {field}",
                    i + 2,
                    TRAJECTORY_HEADER[j]
                ))
            })?;
        }
        let [t, energy, nehari, potential, kinetic, boundary_kinetic, grad_sq, lp_term, trace_u, diss_interior, diss_boundary, theta, dt_used] =
            row;
        samples.push(Sample {
            snapshot: EnergySnapshot {
                t,
                nehari,
                potential,
                energy,
                kinetic,
                boundary_kinetic,
                grad_sq,
                lp_term,
                trace_u,
                dt_used,
            },
            diss_interior,
            diss_boundary,
            int_grad_sq: 0.0,
            int_trace_sq: 0.0,
            int_cross: 0.0,
            theta,
            terms: None,
        });
    }
    let last = samples
        .last()
        .ok_or_else(|| Error::InsufficientData("trajectory table has no rows".into()))?
        .snapshot;
    let termination = if last.t >= ctx.horizon * (1.0 - 1e-12) {
        Termination::Completed
    } else {
        let norm = last.grad_sq.max(0.0).sqrt() + (2.0 * last.kinetic).max(0.0).sqrt();
        if norm > ctx.blowup_threshold {
            Termination::BlownUp {
                t_star: last.t,
                dt_final: last.dt_used,
                norm,
            }
        } else {
            Termination::Collapsed {
                t: last.t,
                reason: "table ends before the horizon".into(),
            }
        }
    };
    Ok(Trajectory {
        params: ctx.params,
        horizon: ctx.horizon,
        samples,
        termination,
        final_state: None,
        accepted_steps: 0,
        rejected_steps: 0,
    })
}

pub fn read_trajectory_csv(path: &Path, ctx: &ReadContext) -> Result<Trajectory> {
    read_trajectory(std::fs::File::open(path)?, ctx)
}

/// Writes a two-column `quantity,value` table.
pub fn write_key_values(rows: &[(String, String)], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["quantity", "value"]).map_err(csv_err)?;
    for (k, v) in rows {
        w.write_record([k, v]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a table with the given header and already formatted rows.
pub fn write_table(header: &[&str], rows: &[Vec<String>], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

const PANEL_W: f64 = 420.0;
const PANEL_H: f64 = 260.0;
const MARGIN: f64 = 50.0;

fn panel(svg: &mut String, title: &str, x0: f64, y0: f64, t: &[f64], y: &[f64]) {
    let pts: Vec<(f64, f64)> = t
        .iter()
        .zip(y)
        .filter(|(a, b)| a.is_finite() && b.is_finite())
        .map(|(a, b)| (*a, *b))
        .collect();
    let (w, h) = (PANEL_W - 1.5 * MARGIN, PANEL_H - 1.5 * MARGIN);
    let (left, top) = (x0 + MARGIN, y0 + MARGIN / 2.0);
    let _ = writeln!(
        svg,
        r##"<rect x="{left}" y="{top}" width="{w}" height="{h}" fill="none" stroke="#888"/>"##
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">{title}</text>"#,
        left + w / 2.0,
        top - 6.0
    );
    if pts.is_empty() {
        return;
    }
    let (tmin, tmax) = pts
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.0), b.max(p.0)));
    let (ymin, ymax) = pts
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.1), b.max(p.1)));
    let tspan = if tmax > tmin { tmax - tmin } else { 1.0 };
    let yspan = if ymax > ymin { ymax - ymin } else { 1.0 };
    let path: Vec<String> = pts
        .iter()
        .map(|(a, b)| {
            format!(
                "{:.2},{:.2}",
                left + (a - tmin) / tspan * w,
                top + h - (b - ymin) / yspan * h
            )
        })
        .collect();
    let _ = writeln!(
        svg,
        r##"<polyline fill="none" stroke="#1f5fa8" stroke-width="1.5" points="{}"/>"##,
        path.join(" ")
    );
    let label = |v: f64| format!("{v:.4e}");
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
        left - 4.0,
        top + 10.0,
        label(ymax)
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
        left - 4.0,
        top + h,
        label(ymin)
    );
    let _ = writeln!(svg, r#"<text x="{left}" y="{}">{}</text>"#, top + h + 14.0, label(tmin));
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
        left + w,
        top + h + 14.0,
        label(tmax)
    );
}

/// Four line charts against `t`: `E`, `I`, `‖∇u‖₂` and θ.
pub fn trajectory_svg(trajectory: &Trajectory) -> String {
    let t = trajectory.times();
    let series = |f: fn(&Sample) -> f64| trajectory.samples.iter().map(f).collect::<Vec<_>>();
    let panels: [(&str, Vec<f64>); 4] = [
        ("E(t)", series(|s| s.snapshot.energy)),
        ("I(t)", series(|s| s.snapshot.nehari)),
        ("‖∇u‖₂", series(|s| s.snapshot.grad_sq.max(0.0).sqrt())),
        ("θ(t)", series(|s| s.theta)),
    ];
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" font-family="sans-serif" font-size="10">"#,
        2.0 * PANEL_W,
        2.0 * PANEL_H
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (k, (title, y)) in panels.iter().enumerate() {
        let x0 = (k % 2) as f64 * PANEL_W;
        let y0 = (k / 2) as f64 * PANEL_H;
        panel(&mut svg, title, x0, y0, &t, y);
    }
    svg.push_str("</svg>\n");
    svg
}

pub fn write_trajectory_svg(trajectory: &Trajectory, path: &Path) -> Result<()> {
    std::fs::write(path, trajectory_svg(trajectory))?;
    Ok(())
}
