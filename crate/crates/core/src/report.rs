//! Heatmap and correlation output files.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{map_indexed, Execution};
use crate::fom::{Fom, FomConfig};
use crate::greedy::{
    estimate_or_fallback, fit_error_correlation, max_relative_error, pearson, residual_indicator,
    ErrorCorrelation, ErrorRecord,
};
use crate::parameter_space::{DiscreteParamSpace, SampleSet};
use crate::rom::{FomCache, Heatmap, Rom};

fn cell(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{v:.6e}"),
        None => String::new(),
    }
}

/// CSV of a heatmap. Two-parameter grids become a table (rows: first
/// parameter, columns: second); other grids are written one point per line.
pub fn heatmap_csv(
    space: &DiscreteParamSpace,
    map: &Heatmap,
    k: usize,
    config_hash: &str,
) -> String {
    let mut out = format!("# config_hash={config_hash}\n# k={k} max={:.6e}\n", map.max);
    if space.dim() == 2 {
        let (r0, r1) = (&space.ranges()[0], &space.ranges()[1]);
        out.push_str("p0\\p1");
        for v in r1.values() {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
        for (i, a) in r0.values().into_iter().enumerate() {
            let _ = write!(out, "{a}");
            for j in 0..r1.count {
                let _ = write!(out, ",{}", cell(map.values[space.flat_index(&[i, j])]));
            }
            out.push('\n');
        }
    } else {
        out.push_str("index");
        for d in 0..space.dim() {
            let _ = write!(out, ",p{d}");
        }
        out.push_str(",e_max\n");
        for (i, p) in space.points().iter().enumerate() {
            let _ = write!(out, "{i}");
            for c in &p.coords {
                let _ = write!(out, ",{c}");
            }
            let _ = writeln!(out, ",{}", cell(map.values[i]));
        }
    }
    out
}

/// Reads the cell values back from [`heatmap_csv`] output (tables only).
pub fn parse_heatmap_csv(text: &str) -> Result<Vec<Vec<Option<f64>>>> {
    let bad = |m: &str| Error::InvalidArgument(format!("heatmap CSV: {m}"));
    let mut rows = text.lines().filter(|l| !l.starts_with('#'));
    rows.next().ok_or_else(|| bad("missing header"))?;
    rows.map(|line| {
        line.split(',')
            .skip(1)
            .map(|c| {
                if c.is_empty() {
                    Ok(None)
                } else {
                    c.parse().map(Some).map_err(|_| bad(c))
                }
            })
            .collect()
    })
    .collect()
}

/// White-to-red color for `v` in `[0, vmax]`.
fn color(v: f64, vmax: f64) -> String {
    let t = if vmax > 0.0 && v.is_finite() {
        (v / vmax).clamp(0.0, 1.0)
    } else {
        1.0
    };
    let g = (255.0 * (1.0 - t)).round() as u8;
    format!("#ff{g:02x}{g:02x}")
}

/// SVG heatmap of a two-parameter grid, values in percent, sampled points
/// outlined.
pub fn heatmap_svg(
    space: &DiscreteParamSpace,
    map: &Heatmap,
    samples: &SampleSet,
    title: &str,
) -> Result<String> {
    if space.dim() != 2 {
        return Err(Error::InvalidArgument(
            "SVG heatmaps need a two-parameter grid".into(),
        ));
    }
    let (r0, r1) = (&space.ranges()[0], &space.ranges()[1]);
    let cs = 44.0;
    let (left, top) = (60.0, 40.0);
    let w = left + cs * r1.count as f64 + 20.0;
    let h = top + cs * r0.count as f64 + 50.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="10">"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{left}" y="20" font-size="13">{}</text>"#,
        escape(title)
    );
    for i in 0..r0.count {
        // first parameter increases upwards
        let y = top + cs * (r0.count - 1 - i) as f64;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{:.3}</text>"#,
            left - 4.0,
            y + cs / 2.0 + 3.0,
            r0.value(i)
        );
        for j in 0..r1.count {
            let x = left + cs * j as f64;
            let idx = space.flat_index(&[i, j]);
            let v = map.values[idx];
            let fill = v.map_or("#cccccc".to_string(), |v| color(v, map.max));
            let _ = writeln!(
                s,
                r##"<rect x="{x}" y="{y}" width="{cs}" height="{cs}" fill="{fill}" stroke="#ffffff"/>"##
            );
            if samples.contains(idx) {
                let _ = writeln!(
                    s,
                    r##"<rect class="sampled" data-index="{idx}" x="{}" y="{}" width="{}" height="{}" fill="none" stroke="#000000" stroke-width="2.5"/>"##,
                    x + 2.0,
                    y + 2.0,
                    cs - 4.0,
                    cs - 4.0
                );
            }
            let label = v.map_or("-".to_string(), |v| format!("{:.1}", 100.0 * v));
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="middle">{label}</text>"#,
                x + cs / 2.0,
                y + cs / 2.0 + 3.0
            );
        }
    }
    for j in 0..r1.count {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{:.3}</text>"#,
            left + cs * j as f64 + cs / 2.0,
            top + cs * r0.count as f64 + 14.0,
            r1.value(j)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{left}" y="{}">max relative error {:.2}% (cells in %)</text>"#,
        h - 10.0,
        100.0 * map.max
    );
    s.push_str("</svg>\n");
    Ok(s)
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Grid indices marked as sampled in an SVG from [`heatmap_svg`].
pub fn svg_sampled_indices(svg: &str) -> Vec<usize> {
    svg.lines()
        .filter_map(|l| l.split("data-index=\"").nth(1))
        .filter_map(|r| r.split('"').next()?.parse().ok())
        .collect()
}

/// Residual indicator against true error at a set of grid points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub indices: Vec<usize>,
    pub record: ErrorRecord,
    pub fit: Option<ErrorCorrelation>,
    /// Used when the fit is degenerate: `max(e_max)`.
    pub fallback_estimate: Option<f64>,
    pub pearson: Option<f64>,
}

/// Evaluates `e_res` and `e_max` at `indices`. Points where the
/// prediction blows up or the reference solve fails are dropped.
#[allow(clippy::too_many_arguments)]
pub fn correlate(
    rom: &Rom,
    fom: &Fom,
    fom_config: &FomConfig,
    cache: &FomCache,
    indices: &[usize],
    k: usize,
    n_ts: usize,
    exec: Execution,
) -> Result<CorrelationReport> {
    let rows = map_indexed(indices.len(), exec, |i| -> Result<Option<(f64, f64)>> {
        let p = rom.space.point(indices[i]);
        let truth = match cache.solve(fom_config, fom, p) {
            Ok(t) => t,
            Err(Error::NonConvergence { .. }) => return Ok(None),
            Err(e) => return Err(e),
        };
        let pred = match rom.predict(fom, p, k) {
            Ok(pred) => pred,
            Err(Error::LatentBlowup { .. }) => return Ok(None),
            Err(e) => return Err(e),
        };
        Ok(Some((
            residual_indicator(fom, pred.snapshots.view(), n_ts)?,
            max_relative_error(truth.snapshots.view(), pred.snapshots.view())?,
        )))
    });
    let mut kept = Vec::new();
    let mut record = ErrorRecord::default();
    for (i, r) in indices.iter().zip(rows) {
        if let Some((res, max)) = r? {
            kept.push(*i);
            record.e_res.push(res);
            record.e_max.push(max);
        }
    }
    let fit = fit_error_correlation(&record).ok();
    let fallback_estimate = if fit.is_none() {
        Some(estimate_or_fallback(&record).0)
    } else {
        None
    };
    Ok(CorrelationReport {
        indices: kept,
        pearson: pearson(&record.e_res, &record.e_max),
        record,
        fit,
        fallback_estimate,
    })
}

pub fn correlation_csv(
    space: &DiscreteParamSpace,
    report: &CorrelationReport,
    config_hash: &str,
) -> String {
    let mut out = format!("# config_hash={config_hash}\n");
    match (&report.fit, report.fallback_estimate) {
        (Some(f), _) => {
            let _ = writeln!(out, "# slope={:.6e} intercept={:.6e}", f.slope, f.intercept);
        }
        (None, Some(e)) => {
            let _ = writeln!(out, "# degenerate fit, estimate=max(e_max)={e:.6e}");
        }
        _ => {}
    }
    if let Some(r) = report.pearson {
        let _ = writeln!(out, "# pearson_r={r:.6}");
    }
    out.push_str("index");
    for d in 0..space.dim() {
        let _ = write!(out, ",p{d}");
    }
    out.push_str(",e_res,e_max\n");
    for (n, &i) in report.indices.iter().enumerate() {
        let _ = write!(out, "{i}");
        for c in &space.point(i).coords {
            let _ = write!(out, ",{c}");
        }
        let _ = writeln!(
            out,
            ",{:.6e},{:.6e}",
            report.record.e_res[n], report.record.e_max[n]
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parameter_space::build_grid;

    fn map(n: usize) -> Heatmap {
        let mut values: Vec<Option<f64>> = (0..n).map(|i| Some(0.01 * i as f64)).collect();
        values[1] = None;
        Heatmap {
            values,
            missing: vec![1],
            argmax: Some(n - 1),
            max: 0.01 * (n - 1) as f64,
        }
    }

    #[test]
    fn csv_table_layout() {
        let g = build_grid(&[(0.7, 0.9), (0.9, 1.1)], &[3, 4]).unwrap();
        let m = map(12);
        let csv = heatmap_csv(&g, &m, 3, "abc");
        assert!(csv.starts_with("# config_hash=abc\n"));
        let cells = parse_heatmap_csv(&csv).unwrap();
        assert_eq!(cells.len(), 3);
        assert!(cells.iter().all(|r| r.len() == 4));
        assert_eq!(cells[0][1], None);
        assert_eq!(cells[2][3], Some(0.11));
        let max = cells
            .iter()
            .flatten()
            .flatten()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(max, m.max);
    }

    #[test]
    fn csv_long_layout_for_other_dims() {
        let g = build_grid(&[(0.0, 1.0)], &[3]).unwrap();
        let csv = heatmap_csv(&g, &map(3), 1, "h");
        assert_eq!(csv.lines().count(), 2 + 1 + 3);
        assert!(csv.contains("index,p0,e_max"));
    }

    #[test]
    fn svg_marks_samples() {
        let g = build_grid(&[(0.7, 0.9), (0.9, 1.1)], &[3, 3]).unwrap();
        let s = SampleSet::from_indices(vec![0, 2, 6, 8, 4], 9).unwrap();
        let svg = heatmap_svg(&g, &map(9), &s, "t<1>").unwrap();
        let mut marked = svg_sampled_indices(&svg);
        marked.sort();
        assert_eq!(marked, vec![0, 2, 4, 6, 8]);
        assert!(svg.contains("t&lt;1&gt;"));
        assert_eq!(svg.matches("<rect").count(), 9 + 5);
        let g1 = build_grid(&[(0.0, 1.0)], &[3]).unwrap();
        assert!(heatmap_svg(&g1, &map(3), &SampleSet::new(), "").is_err());
    }

    #[test]
    fn colors_span_white_to_red() {
        assert_eq!(color(0.0, 1.0), "#ffffff");
        assert_eq!(color(1.0, 1.0), "#ff0000");
        assert_eq!(color(f64::INFINITY, 1.0), "#ff0000");
    }
}
