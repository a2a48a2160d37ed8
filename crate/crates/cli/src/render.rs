//! Hand-built SVG charts: latent scatter plots and per-class bar charts.

use std::fmt::Write as _;
use std::path::Path;

use clvae_core::metrics::anomaly_distribution_rmse;
use clvae_core::LatentSet;

use crate::error::CliError;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 560.0;
const PLOT_LEFT: f64 = 50.0;
const PLOT_TOP: f64 = 30.0;
const PLOT_SIZE: f64 = 480.0;
const LEGEND_X: f64 = 560.0;

const PALETTE: [&str; 20] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
    "#aec7e8", "#ffbb78", "#98df8a", "#ff9896", "#c5b0d5", "#c49c94", "#f7b6d2", "#c7c7c7", "#dbdb8d", "#9edae5",
];
/// Dark blue to yellow ramp for continuous values.
const RAMP: [(f64, f64, f64); 5] = [
    (68.0, 1.0, 84.0),
    (59.0, 82.0, 139.0),
    (33.0, 145.0, 140.0),
    (94.0, 201.0, 98.0),
    (253.0, 231.0, 37.0),
];

/// How scatter markers are coloured.
#[derive(Clone, Debug, PartialEq)]
pub enum Coloring {
    Class { names: Vec<String> },
    Cluster { assignment: Vec<usize> },
    /// Indices drawn highlighted.
    AnomalyFlag { flagged: Vec<usize> },
    /// One value per point, mapped onto a colour ramp.
    Deviation { values: Vec<f64> },
}

impl Coloring {
    pub fn name(&self) -> &'static str {
        match self {
            Coloring::Class { .. } => "class",
            Coloring::Cluster { .. } => "cluster",
            Coloring::AnomalyFlag { .. } => "anomaly",
            Coloring::Deviation { .. } => "deviation",
        }
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn category_color(i: usize) -> &'static str {
    PALETTE[i % PALETTE.len()]
}

fn ramp_color(t: f64) -> String {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let pos = t * (RAMP.len() - 1) as f64;
    let i = (pos.floor() as usize).min(RAMP.len() - 2);
    let f = pos - i as f64;
    let (a, b) = (RAMP[i], RAMP[i + 1]);
    let mix = |x: f64, y: f64| (x + f * (y - x)).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(a.0, b.0), mix(a.1, b.1), mix(a.2, b.2))
}

fn header(out: &mut String, title: &str) {
    let _ = write!(
        out,
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"12\">\n<title>{}</title>\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n",
        escape(title)
    );
}

fn legend_entry(out: &mut String, row: usize, color: &str, label: &str) {
    let y = PLOT_TOP + 10.0 + 18.0 * row as f64;
    let _ = writeln!(
        out,
        "<g class=\"legend-entry\"><rect x=\"{LEGEND_X}\" y=\"{:.1}\" width=\"12\" height=\"12\" fill=\"{color}\"/><text x=\"{:.1}\" y=\"{:.1}\">{}</text></g>",
        y - 10.0,
        LEGEND_X + 18.0,
        y,
        escape(label)
    );
}

/// SVG text of a 2-D latent scatter with one `circle.pt` per point.
pub fn scatter_svg(latent: &LatentSet, coloring: &Coloring, title: &str) -> Result<String, CliError> {
    let n = latent.len();
    if latent.dim() != 2 {
        return Err(CliError::UnsupportedRendering { dim: latent.dim() });
    }
    let per_point_len = match coloring {
        Coloring::Cluster { assignment } => Some(assignment.len()),
        Coloring::Deviation { values } => Some(values.len()),
        _ => None,
    };
    if per_point_len.is_some_and(|l| l != n) {
        return Err(CliError::Stage {
            stage: "report",
            source: clvae_core::Error::Contract("colouring length differs from point count".into()),
        });
    }

    let pts = &latent.points;
    let bounds = |d: usize| {
        let (lo, hi) = pts
            .row_iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p[d]), hi.max(p[d])));
        if n == 0 {
            (-1.0, 1.0)
        } else if hi > lo {
            let pad = 0.05 * (hi - lo);
            (lo - pad, hi + pad)
        } else {
            (lo - 1.0, hi + 1.0)
        }
    };
    let (x0, x1) = bounds(0);
    let (y0, y1) = bounds(1);
    let sx = |x: f64| PLOT_LEFT + (x - x0) / (x1 - x0) * PLOT_SIZE;
    let sy = |y: f64| PLOT_TOP + PLOT_SIZE - (y - y0) / (y1 - y0) * PLOT_SIZE;

    let mut out = String::with_capacity(96 * n + 4096);
    header(&mut out, title);
    let _ = writeln!(
        out,
        "<rect class=\"frame\" x=\"{PLOT_LEFT}\" y=\"{PLOT_TOP}\" width=\"{PLOT_SIZE}\" height=\"{PLOT_SIZE}\" fill=\"none\" stroke=\"#444\"/>"
    );
    let _ = writeln!(
        out,
        "<text x=\"{PLOT_LEFT}\" y=\"{:.1}\">z1 [{x0:.3}, {x1:.3}]   z2 [{y0:.3}, {y1:.3}]</text>",
        PLOT_TOP + PLOT_SIZE + 20.0
    );
    let _ = writeln!(out, "<text x=\"{PLOT_LEFT}\" y=\"18\" font-size=\"14\">{}</text>", escape(title));

    let flagged: Vec<bool> = match coloring {
        Coloring::AnomalyFlag { flagged } => {
            let mut mask = vec![false; n];
            for &i in flagged {
                if i >= n {
                    return Err(CliError::Config(format!("flagged index {i} out of range")));
                }
                mask[i] = true;
            }
            mask
        }
        _ => vec![false; n],
    };
    let (dev_lo, dev_hi) = match coloring {
        Coloring::Deviation { values } => values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v))),
        _ => (0.0, 1.0),
    };

    out.push_str("<g class=\"points\">\n");
    // Highlighted markers go last so they stay on top.
    let order: Vec<usize> = (0..n).filter(|&i| !flagged[i]).chain((0..n).filter(|&i| flagged[i])).collect();
    for i in order {
        let p = pts.row(i);
        let (cx, cy) = (sx(p[0]), sy(p[1]));
        match coloring {
            Coloring::Class { .. } => {
                let _ = writeln!(
                    out,
                    "<circle class=\"pt\" cx=\"{cx:.2}\" cy=\"{cy:.2}\" r=\"2\" fill=\"{}\"/>",
                    category_color(latent.labels[i])
                );
            }
            Coloring::Cluster { assignment } => {
                let _ = writeln!(
                    out,
                    "<circle class=\"pt\" cx=\"{cx:.2}\" cy=\"{cy:.2}\" r=\"2\" fill=\"{}\"/>",
                    category_color(assignment[i])
                );
            }
            Coloring::AnomalyFlag { .. } => {
                if flagged[i] {
                    let _ = writeln!(
                        out,
                        "<circle class=\"pt hl\" cx=\"{cx:.2}\" cy=\"{cy:.2}\" r=\"5\" fill=\"#d62728\" stroke=\"black\"/>"
                    );
                } else {
                    let _ = writeln!(
                        out,
                        "<circle class=\"pt\" cx=\"{cx:.2}\" cy=\"{cy:.2}\" r=\"2\" fill=\"#bbbbbb\"/>"
                    );
                }
            }
            Coloring::Deviation { values } => {
                let t = if dev_hi > dev_lo { (values[i] - dev_lo) / (dev_hi - dev_lo) } else { 0.0 };
                let _ = writeln!(
                    out,
                    "<circle class=\"pt\" cx=\"{cx:.2}\" cy=\"{cy:.2}\" r=\"2\" fill=\"{}\"/>",
                    ramp_color(t)
                );
            }
        }
    }
    out.push_str("</g>\n<g class=\"legend\">\n");
    match coloring {
        Coloring::Class { names } => {
            let classes = latent.labels.iter().max().map_or(0, |m| m + 1).max(names.len());
            for c in 0..classes {
                let label = names.get(c).cloned().unwrap_or_else(|| c.to_string());
                legend_entry(&mut out, c, category_color(c), &label);
            }
        }
        Coloring::Cluster { assignment } => {
            let k = assignment.iter().max().map_or(0, |m| m + 1);
            for c in 0..k {
                legend_entry(&mut out, c, category_color(c), &format!("cluster {c}"));
            }
        }
        Coloring::AnomalyFlag { flagged } => {
            legend_entry(&mut out, 0, "#bbbbbb", "normal");
            legend_entry(&mut out, 1, "#d62728", &format!("top {} anomalies", flagged.len()));
        }
        Coloring::Deviation { .. } => {
            for (row, t) in [0.0, 0.25, 0.5, 0.75, 1.0].into_iter().enumerate() {
                let v = dev_lo + t * (dev_hi - dev_lo);
                legend_entry(&mut out, row, &ramp_color(t), &format!("{v:.4}"));
            }
        }
    }
    out.push_str("</g>\n</svg>\n");
    Ok(out)
}

pub fn render_scatter(latent: &LatentSet, coloring: &Coloring, title: &str, path: &Path) -> Result<(), CliError> {
    let svg = scatter_svg(latent, coloring, title)?;
    write_file(path, &svg)
}

/// A named per-class fraction vector.
#[derive(Clone, Debug, PartialEq)]
pub struct BarSeries {
    pub name: String,
    pub values: Vec<f64>,
}

/// RMSE of each series against `reference`, in series order.
pub fn series_rmse(series: &[BarSeries], reference: &[f64]) -> Result<Vec<f64>, CliError> {
    series
        .iter()
        .map(|s| anomaly_distribution_rmse(&s.values, reference).map_err(CliError::stage("report")))
        .collect()
}

/// Grouped bars (one `rect.bar` per series and class), reference marks and
/// an RMSE annotation per series.
pub fn class_bars_svg(
    series: &[BarSeries],
    reference: &[f64],
    class_names: &[String],
    title: &str,
) -> Result<String, CliError> {
    let classes = reference.len();
    if series.is_empty() || series.iter().any(|s| s.values.len() != classes) || class_names.len() != classes {
        return Err(CliError::Stage {
            stage: "report",
            source: clvae_core::Error::Contract("bar series, reference and class names differ in length".into()),
        });
    }
    let rmse = series_rmse(series, reference)?;
    let top = series
        .iter()
        .flat_map(|s| s.values.iter())
        .chain(reference)
        .fold(0.0f64, |m, &v| m.max(v));
    let top = if top > 0.0 { top * 1.1 } else { 1.0 };
    let group = PLOT_SIZE / classes.max(1) as f64;
    let bar = 0.8 * group / series.len() as f64;
    let sy = |v: f64| PLOT_TOP + PLOT_SIZE - v / top * PLOT_SIZE;

    let mut out = String::with_capacity(4096 + 160 * classes * series.len());
    header(&mut out, title);
    let _ = writeln!(out, "<text x=\"{PLOT_LEFT}\" y=\"18\" font-size=\"14\">{}</text>", escape(title));
    let _ = writeln!(
        out,
        "<line class=\"axis\" x1=\"{PLOT_LEFT}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"#444\"/>",
        PLOT_TOP + PLOT_SIZE,
        PLOT_LEFT + PLOT_SIZE,
        PLOT_TOP + PLOT_SIZE
    );
    let _ = writeln!(out, "<text x=\"4\" y=\"{:.2}\">{:.1}%</text>", PLOT_TOP + 4.0, 100.0 * top);
    out.push_str("<g class=\"bars\">\n");
    for c in 0..classes {
        let gx = PLOT_LEFT + group * c as f64 + 0.1 * group;
        for (s, ser) in series.iter().enumerate() {
            let v = ser.values[c];
            let y = sy(v);
            let _ = writeln!(
                out,
                "<rect class=\"bar\" x=\"{:.2}\" y=\"{y:.2}\" width=\"{bar:.2}\" height=\"{:.2}\" fill=\"{}\"><title>{}: {:.4}</title></rect>",
                gx + bar * s as f64,
                PLOT_TOP + PLOT_SIZE - y,
                category_color(s),
                escape(&ser.name),
                v
            );
        }
        let ry = sy(reference[c]);
        let _ = writeln!(
            out,
            "<line class=\"ref\" x1=\"{gx:.2}\" y1=\"{ry:.2}\" x2=\"{:.2}\" y2=\"{ry:.2}\" stroke=\"black\" stroke-dasharray=\"3,2\"/>",
            gx + 0.8 * group
        );
        let _ = writeln!(
            out,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>",
            gx + 0.4 * group,
            PLOT_TOP + PLOT_SIZE + 16.0,
            escape(&class_names[c])
        );
    }
    out.push_str("</g>\n<g class=\"legend\">\n");
    for (s, (ser, r)) in series.iter().zip(&rmse).enumerate() {
        legend_entry(&mut out, s, category_color(s), &ser.name);
        let y = PLOT_TOP + 10.0 + 18.0 * (series.len() + 1 + s) as f64;
        let _ = writeln!(
            out,
            "<text class=\"rmse\" x=\"{LEGEND_X}\" y=\"{y:.1}\" data-series=\"{}\" data-rmse=\"{r:e}\">{} RMSE {r:.4}</text>",
            escape(&ser.name),
            escape(&ser.name)
        );
    }
    out.push_str("</g>\n</svg>\n");
    Ok(out)
}

pub fn render_class_bars(
    series: &[BarSeries],
    reference: &[f64],
    class_names: &[String],
    title: &str,
    path: &Path,
) -> Result<(), CliError> {
    let svg = class_bars_svg(series, reference, class_names, title)?;
    write_file(path, &svg)
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|source| CliError::Output {
        stage: "report",
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ramp_endpoints() {
        assert_eq!(ramp_color(0.0), "#440154");
        assert_eq!(ramp_color(1.0), "#fde725");
        assert_eq!(ramp_color(f64::NAN), "#440154");
    }

    #[test]
    fn names_are_escaped() {
        assert_eq!(escape("a<b & \"c\""), "a&lt;b &amp; &quot;c&quot;");
    }
}
