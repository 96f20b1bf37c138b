//! Text reports and CSV serialization for the command layer.

use std::io::Write;

use mshj_core::{ChartPoint, Error, ErrorPolicy, GridSpec, ResidualOp, ResidualReport};

use crate::config::CliError;

pub fn io_err(e: std::io::Error) -> CliError {
    CliError::Core(Error::Io(e.to_string()))
}

/// `name=value` pairs for a coordinate tuple.
pub fn coords_line(axes: &[String], coords: &[f64]) -> String {
    axes.iter()
        .zip(coords)
        .map(|(a, c)| format!("{a}={c}"))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Multi-line text for one residual report; the final line is the verdict.
pub fn residual_report_text(title: &str, rep: &ResidualReport) -> String {
    let mut out = format!(
        "{title}\ngrid: {} points ({} evaluated, {} skipped), tolerance {:e}\n",
        rep.points, rep.evaluated, rep.skipped, rep.tol
    );
    for fam in &rep.families {
        let gate = if fam.gating { "" } else { "  [informational]" };
        if fam.argmax.is_empty() {
            out.push_str(&format!(
                "  {}: max {:.6e}  rms {:.6e}{gate}\n",
                fam.name, fam.max_abs, fam.rms
            ));
        } else {
            out.push_str(&format!(
                "  {}: max {:.6e}  rms {:.6e}  at ({}) [{}]{gate}\n",
                fam.name,
                fam.max_abs,
                fam.rms,
                coords_line(&rep.axes, &fam.argmax),
                fam.argmax_component
            ));
        }
    }
    out.push_str(&format!(
        "verdict: {}",
        if rep.pass { "PASS" } else { "FAIL" }
    ));
    out
}

/// RFC-4180 field quoting: only fields containing a comma, quote, or newline
/// are wrapped.
fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Streams per-point residual values: one row per grid point (row-major),
/// columns are the grid coordinates followed by every residual component.
/// Returns (rows written, points skipped).
pub fn write_point_csv<W: Write>(
    mut w: W,
    op: &dyn ResidualOp,
    grid: &GridSpec,
    policy: ErrorPolicy,
) -> Result<(usize, usize), CliError> {
    let chart = op.chart();
    let axes = grid.axes();
    let slots = axes
        .iter()
        .map(|a| chart.resolve(&a.name))
        .collect::<Result<Vec<_>, _>>()?;
    let specs = op.families();

    let mut header: Vec<String> = axes.iter().map(|a| a.name.clone()).collect();
    for spec in &specs {
        for label in &spec.labels {
            header.push(format!("{}[{}]", spec.name, label));
        }
    }
    writeln!(
        w,
        "{}",
        header
            .iter()
            .map(|h| csv_field(h))
            .collect::<Vec<_>>()
            .join(",")
    )
    .map_err(io_err)?;

    let total = grid.total()?;
    let mut pt = ChartPoint::zero(&chart);
    let mut row = String::new();
    let mut written = 0usize;
    let mut skipped = 0usize;
    for idx in 0..total {
        let coords = grid.coords(idx);
        for (slot, c) in slots.iter().zip(&coords) {
            pt.set(*slot, *c);
        }
        let outcome = op.eval_at(&pt).and_then(|values| {
            if values.iter().flatten().all(|v| v.is_finite()) {
                Ok(values)
            } else {
                Err(Error::OutOfDomain("residual is not finite".into()))
            }
        });
        match outcome {
            Ok(values) => {
                row.clear();
                for (k, c) in coords.iter().enumerate() {
                    if k > 0 {
                        row.push(',');
                    }
                    row.push_str(&c.to_string());
                }
                for v in values.iter().flatten() {
                    row.push(',');
                    row.push_str(&v.to_string());
                }
                writeln!(w, "{row}").map_err(io_err)?;
                written += 1;
            }
            Err(e) => match policy {
                ErrorPolicy::FailFast => {
                    return Err(Error::AtPoint {
                        location: coords,
                        source: Box::new(e),
                    }
                    .into())
                }
                ErrorPolicy::Skip => skipped += 1,
            },
        }
    }
    w.flush().map_err(io_err)?;
    Ok((written, skipped))
}
