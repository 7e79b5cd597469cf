use std::path::{Path, PathBuf};

use plotters::prelude::*;

use super::EvalReport;
use crate::error::{Error, Result};

fn plot_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::io(path, std::io::Error::other(e.to_string()))
}

/// Per-object ODSC bars; unseen objects are drawn in orange.
pub fn plot_odsc_bars(report: &EvalReport, path: &Path) -> Result<()> {
    let objects = report.by_object();
    let n = objects.len().max(1);
    let root = SVGBackend::new(path, (120 + 90 * n as u32, 420)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| plot_err(path, e))?;
    let mut chart = ChartBuilder::on(&root)
        .margin(20)
        .x_label_area_size(40)
        .y_label_area_size(50)
        .build_cartesian_2d(0f64..n as f64, 0f64..1f64)
        .map_err(|e| plot_err(path, e))?;
    let labels: Vec<String> = objects.iter().map(|(name, seen, _)| format!("{name}{}", if *seen { "" } else { "*" })).collect();
    chart
        .configure_mesh()
        .disable_x_mesh()
        .x_labels(n)
        .x_label_formatter(&|x| labels.get(x.floor() as usize).cloned().unwrap_or_default())
        .y_desc("ODSC")
        .draw()
        .map_err(|e| plot_err(path, e))?;
    chart
        .draw_series(objects.iter().enumerate().map(|(i, (_, seen, v))| {
            let colour = if *seen { BLUE.filled() } else { RGBColor(230, 140, 20).filled() };
            Rectangle::new([(i as f64 + 0.15, 0.0), (i as f64 + 0.85, *v)], colour)
        }))
        .map_err(|e| plot_err(path, e))?;
    root.present().map_err(|e| plot_err(path, e))
}

/// `total` (and `l_seg` when nonzero) against `j` from a training metrics file.
pub fn plot_loss_curve(metrics_csv: &Path, path: &Path) -> Result<()> {
    let mut reader = csv::Reader::from_path(metrics_csv).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(io) if io.kind() == std::io::ErrorKind::NotFound => Error::MissingFile(metrics_csv.to_path_buf()),
        _ => plot_err(metrics_csv, e),
    })?;
    let malformed = |reason: String| Error::Malformed {
        path: metrics_csv.to_path_buf(),
        reason,
    };
    let headers = reader.headers().map_err(|e| malformed(e.to_string()))?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name).ok_or_else(|| malformed(format!("no `{name}` column")));
    let (cj, ct, cs) = (col("j")?, col("total")?, col("l_seg")?);
    let mut total = Vec::new();
    let mut seg = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| malformed(e.to_string()))?;
        let num = |c: usize| rec[c].parse::<f64>().map_err(|e| malformed(e.to_string()));
        let j = num(cj)?;
        total.push((j, num(ct)?));
        seg.push((j, num(cs)?));
    }
    let has_total = total.iter().any(|p| p.1 != 0.0);
    let has_seg = seg.iter().any(|p| p.1 != 0.0);
    let x_max = total.iter().map(|p| p.0).fold(1.0, f64::max);
    let y_max = total.iter().chain(&seg).map(|p| p.1).filter(|v| v.is_finite()).fold(1e-3, f64::max) * 1.05;

    let root = SVGBackend::new(path, (720, 420)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| plot_err(path, e))?;
    let mut chart = ChartBuilder::on(&root)
        .margin(20)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(0f64..x_max, 0f64..y_max)
        .map_err(|e| plot_err(path, e))?;
    chart
        .configure_mesh()
        .x_desc("iteration")
        .y_desc("loss")
        .draw()
        .map_err(|e| plot_err(path, e))?;
    if has_total {
        chart
            .draw_series(LineSeries::new(total, &BLUE))
            .map_err(|e| plot_err(path, e))?
            .label("total")
            .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], BLUE));
    }
    if has_seg {
        chart
            .draw_series(LineSeries::new(seg, &RED))
            .map_err(|e| plot_err(path, e))?
            .label("l_seg")
            .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], RED));
    }
    if has_total || has_seg {
        chart
            .configure_series_labels()
            .border_style(BLACK)
            .background_style(WHITE)
            .draw()
            .map_err(|e| plot_err(path, e))?;
    }
    root.present().map_err(|e| plot_err(path, e))
}

/// Writes `odsc_by_object.svg`, plus `loss_curve.svg` when a metrics file is given.
pub fn emit_plots(report: &EvalReport, dir: &Path, metrics_csv: Option<&Path>) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let bars = dir.join("odsc_by_object.svg");
    plot_odsc_bars(report, &bars)?;
    let mut out = vec![bars];
    if let Some(m) = metrics_csv {
        let curve = dir.join("loss_curve.svg");
        plot_loss_curve(m, &curve)?;
        out.push(curve);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::{ReportRow, REPORT_SCHEMA_VERSION};

    #[test]
    fn plots_are_written() {
        let dir = tempfile::tempdir().unwrap();
        let report = EvalReport {
            schema_version: REPORT_SCHEMA_VERSION,
            rows: vec![ReportRow {
                object_name: "disk".into(),
                pose_id: "cup".into(),
                seen: false,
                odsc: 0.7,
                sample_count: 2,
                empty_overlap: 0,
            }],
            aggregate: 0.7,
            fingerprint: String::new(),
        };
        let metrics = dir.path().join("metrics.csv");
        std::fs::write(&metrics, "j,lr,l_p,l_s,total,l_seg\n1,0.01,0.5,0.1,0.9,0\n2,0.009,0.4,0.1,0.7,0\n").unwrap();
        let files = emit_plots(&report, &dir.path().join("plots"), Some(&metrics)).unwrap();
        assert_eq!(files.len(), 2);
        for f in files {
            assert!(std::fs::metadata(&f).unwrap().len() > 0);
        }
    }
}
