//! SVG rendering for MDS scatters and aP@k curves.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use crate::clusterkit::Clustering;
use crate::error::{AuditError, Result};
use crate::fsutil::{fmt_sig, write_atomic};
use crate::retrieval::{ApkCurve, BaselineBand, RatioCurve};

use super::{csv_field, MdsSolution};

const UNCOVERED: &str = "#bbbbbb";

#[derive(Debug, Clone, Default)]
pub struct ScatterOptions {
    /// Draw the convex hull of every cluster of the first coloring.
    pub hulls: bool,
    /// Print cluster names at member centroids of the first coloring.
    pub labels: bool,
    pub title: Option<String>,
    /// Lines written as XML comments after the root element.
    pub meta: Vec<String>,
}

fn color(i: usize, total: usize, dark: bool) -> String {
    let hue = i as f64 * 360.0 / total.max(1) as f64;
    let light = if dark { 32 } else { 55 };
    format!("hsl({hue:.1},70%,{light}%)")
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn comment_safe(s: &str) -> String {
    s.replace("--", "- -")
}

fn header(out: &mut String, w: f64, h: f64, meta: &[String]) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.0} {h:.0}" font-family="sans-serif">"#
    );
    for m in meta {
        let _ = writeln!(out, "<!-- {} -->", comment_safe(m));
    }
    let _ = writeln!(out, r#"<rect width="{w:.0}" height="{h:.0}" fill="white"/>"#);
}

fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Andrew's monotone chain; counter-clockwise, collinear points dropped.
/// Fewer than three distinct points come back as-is (deduplicated).
pub fn convex_hull(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut lower: Vec<(f64, f64)> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<(f64, f64)> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Scatter of a 2-D layout. The first coloring fills large dots, the second
/// (if any) small inner dots, so two partitions show at once.
pub fn render_scatter_svg(
    sol: &MdsSolution,
    colorings: &[&Clustering],
    opts: &ScatterOptions,
) -> Result<String> {
    let n = sol.coordinates.len();
    if sol.m != 2 {
        return Err(AuditError::BadDimension { m: sol.m, n });
    }
    if colorings.iter().any(|c| c.vocab() != &sol.vocab) {
        return Err(AuditError::VocabMismatch);
    }
    let (plot, margin, legend_w): (f64, f64, f64) = (640.0, 40.0, 260.0);
    let entries: usize = colorings.iter().map(|c| c.len() + 1).sum();
    let width = plot + 2.0 * margin + legend_w;
    let height = (plot + 2.0 * margin).max(margin * 2.0 + 14.0 * entries as f64);

    let xs = sol.coordinates.iter().map(|r| r[0]);
    let ys = sol.coordinates.iter().map(|r| r[1]);
    let (x0, x1) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    let (y0, y1) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), y| (a.min(y), b.max(y)));
    let span = (x1 - x0).max(y1 - y0);
    let scale = if span > 0.0 { plot / span } else { 1.0 };
    let cx = (x0 + x1) / 2.0;
    let cy = (y0 + y1) / 2.0;
    let map = |p: &[f64]| -> (f64, f64) {
        (
            margin + plot / 2.0 + (p[0] - cx) * scale,
            margin + plot / 2.0 - (p[1] - cy) * scale,
        )
    };
    let screen: Vec<(f64, f64)> = sol.coordinates.iter().map(|p| map(p)).collect();

    let mut out = String::new();
    header(&mut out, width, height, &opts.meta);
    if let Some(t) = &opts.title {
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="24" font-size="16" text-anchor="middle">{}</text>"#,
            margin + plot / 2.0,
            escape(t)
        );
    }

    if opts.hulls {
        if let Some(first) = colorings.first() {
            let _ = writeln!(out, r#"<g id="hulls" fill-opacity="0.12" stroke-width="1">"#);
            for (ci, cl) in first.clusters().iter().enumerate() {
                let pts: Vec<(f64, f64)> = cl.members.iter().map(|&i| screen[i]).collect();
                let hull = convex_hull(&pts);
                let col = color(ci, first.len(), false);
                let coords: Vec<String> =
                    hull.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
                let _ = writeln!(
                    out,
                    r#"<polygon points="{}" fill="{col}" stroke="{col}"/>"#,
                    coords.join(" ")
                );
            }
            let _ = writeln!(out, "</g>");
        }
    }

    let owners: Vec<Vec<Option<usize>>> = colorings.iter().map(|c| c.assignment()).collect();
    let _ = writeln!(out, r#"<g id="points">"#);
    for (i, &(x, y)) in screen.iter().enumerate() {
        let big = match owners.first() {
            Some(o) => o[i].map_or(UNCOVERED.to_string(), |c| color(c, colorings[0].len(), false)),
            None => UNCOVERED.to_string(),
        };
        let _ = writeln!(
            out,
            r#"<circle cx="{x:.2}" cy="{y:.2}" r="6" fill="{big}"><title>{}</title></circle>"#,
            escape(sol.vocab.label(i))
        );
        if let Some(o) = owners.get(1) {
            let small = o[i].map_or(UNCOVERED.to_string(), |c| color(c, colorings[1].len(), true));
            let _ = writeln!(out, r#"<circle cx="{x:.2}" cy="{y:.2}" r="2.5" fill="{small}"/>"#);
        }
    }
    let _ = writeln!(out, "</g>");

    if opts.labels {
        if let Some(first) = colorings.first() {
            let _ = writeln!(out, r#"<g id="labels" font-size="10" text-anchor="middle">"#);
            for cl in first.clusters() {
                let k = cl.members.len() as f64;
                let mx = cl.members.iter().map(|&i| screen[i].0).sum::<f64>() / k;
                let my = cl.members.iter().map(|&i| screen[i].1).sum::<f64>() / k;
                let _ = writeln!(
                    out,
                    r#"<text x="{mx:.2}" y="{my:.2}">{}</text>"#,
                    escape(&cl.name)
                );
            }
            let _ = writeln!(out, "</g>");
        }
    }

    let lx = plot + 2.0 * margin;
    let mut ly = margin;
    let _ = writeln!(out, r#"<g id="legend" font-size="11">"#);
    for (gi, c) in colorings.iter().enumerate() {
        let dark = gi == 1;
        let r = if dark { 2.5 } else { 6.0 };
        let _ = writeln!(
            out,
            r#"<text x="{lx:.2}" y="{ly:.2}" font-weight="bold">{}</text>"#,
            escape(c.source_tag())
        );
        ly += 14.0;
        for (ci, cl) in c.clusters().iter().enumerate() {
            let _ = writeln!(
                out,
                r#"<circle cx="{:.2}" cy="{:.2}" r="{r}" fill="{}"/><text x="{:.2}" y="{:.2}">{}</text>"#,
                lx + 6.0,
                ly - 4.0,
                color(ci, c.len(), dark),
                lx + 16.0,
                ly,
                escape(&cl.name)
            );
            ly += 14.0;
        }
    }
    let _ = writeln!(out, "</g>");
    out.push_str("</svg>\n");
    Ok(out)
}

pub fn emit_scatter_svg(
    sol: &MdsSolution,
    colorings: &[&Clustering],
    opts: &ScatterOptions,
    path: &Path,
) -> Result<()> {
    let svg = render_scatter_svg(sol, colorings, opts)?;
    write_atomic(path, svg.as_bytes())
}

struct Series<'a> {
    name: &'a str,
    ks: &'a [usize],
    values: &'a [f64],
}

fn render_lines(
    series: &[Series<'_>],
    band: Option<&BaselineBand>,
    y_label: &str,
    fixed_unit_range: bool,
    meta: &[String],
) -> String {
    let (w, h) = (820.0, 480.0);
    let (left, right, top, bottom) = (60.0, 200.0, 20.0, 50.0);
    let pw = w - left - right;
    let ph = h - top - bottom;

    let mut all_k: Vec<usize> = series.iter().flat_map(|s| s.ks.iter().copied()).collect();
    let mut all_y: Vec<f64> = series.iter().flat_map(|s| s.values.iter().copied()).collect();
    if let Some(b) = band {
        all_k.extend(&b.ks);
        all_y.extend(&b.ci_high);
        all_y.extend(&b.ci_low);
    }
    let kmin = all_k.iter().copied().min().unwrap_or(1) as f64;
    let kmax = all_k.iter().copied().max().unwrap_or(1) as f64;
    let (ymin, ymax) = if fixed_unit_range {
        (0.0, 1.0)
    } else {
        let lo = all_y.iter().copied().fold(f64::INFINITY, f64::min).min(0.0);
        let hi = all_y.iter().copied().fold(f64::NEG_INFINITY, f64::max).max(0.0);
        let pad = ((hi - lo) * 0.05).max(1e-9);
        (lo - pad, hi + pad)
    };
    let fx = |k: f64| left + if kmax > kmin { (k - kmin) / (kmax - kmin) * pw } else { pw / 2.0 };
    let fy = |y: f64| top + ph - (y - ymin) / (ymax - ymin) * ph;

    let mut out = String::new();
    header(&mut out, w, h, meta);
    let _ = writeln!(
        out,
        r##"<g stroke="#333" stroke-width="1"><line x1="{left:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}"/><line x1="{left:.2}" y1="{top:.2}" x2="{left:.2}" y2="{:.2}"/></g>"##,
        top + ph,
        left + pw,
        top + ph,
        top + ph
    );
    let _ = writeln!(out, r#"<g font-size="10">"#);
    for t in 0..=4 {
        let y = ymin + (ymax - ymin) * t as f64 / 4.0;
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            left - 4.0,
            fy(y) + 3.0,
            fmt_sig(y, 3)
        );
    }
    for t in 0..=4 {
        let k = (kmin + (kmax - kmin) * t as f64 / 4.0).round();
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            fx(k),
            top + ph + 14.0,
            k
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">k</text><text x="14" y="{:.2}" transform="rotate(-90 14 {:.2})" text-anchor="middle">{}</text>"#,
        left + pw / 2.0,
        h - 12.0,
        top + ph / 2.0,
        top + ph / 2.0,
        escape(y_label)
    );
    let _ = writeln!(out, "</g>");

    let mut legend: Vec<(String, String, bool)> = Vec::new();
    if let Some(b) = band {
        let upper: Vec<String> = b
            .ks
            .iter()
            .zip(&b.ci_high)
            .map(|(&k, &y)| format!("{:.2},{:.2}", fx(k as f64), fy(y)))
            .collect();
        let lower: Vec<String> = b
            .ks
            .iter()
            .zip(&b.ci_low)
            .rev()
            .map(|(&k, &y)| format!("{:.2},{:.2}", fx(k as f64), fy(y)))
            .collect();
        let _ = writeln!(
            out,
            r##"<polygon points="{} {}" fill="#999" fill-opacity="0.3" stroke="none"/>"##,
            upper.join(" "),
            lower.join(" ")
        );
        let mean: Vec<String> = b
            .ks
            .iter()
            .zip(&b.mean)
            .map(|(&k, &y)| format!("{:.2},{:.2}", fx(k as f64), fy(y)))
            .collect();
        let _ = writeln!(
            out,
            r##"<polyline points="{}" fill="none" stroke="#555" stroke-dasharray="4 3"/>"##,
            mean.join(" ")
        );
        legend.push(("random baseline".into(), "#555".into(), true));
    }
    for (i, s) in series.iter().enumerate() {
        let col = color(i, series.len(), true);
        let pts: Vec<String> = s
            .ks
            .iter()
            .zip(s.values)
            .map(|(&k, &y)| format!("{:.2},{:.2}", fx(k as f64), fy(y)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{col}" stroke-width="1.5"/>"#,
            pts.join(" ")
        );
        legend.push((s.name.to_string(), col, false));
    }
    let _ = writeln!(out, r#"<g font-size="11">"#);
    for (i, (name, col, dashed)) in legend.iter().enumerate() {
        let x = left + pw + 12.0;
        let y = top + 10.0 + 16.0 * i as f64;
        let dash = if *dashed { r#" stroke-dasharray="4 3""# } else { "" };
        let _ = writeln!(
            out,
            r#"<line x1="{x:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{col}" stroke-width="1.5"{dash}/><text x="{:.2}" y="{y:.2}">{}</text>"#,
            y - 4.0,
            x + 18.0,
            y - 4.0,
            x + 24.0,
            escape(name)
        );
    }
    let _ = writeln!(out, "</g>");
    out.push_str("</svg>\n");
    out
}

fn curve_name(c: &ApkCurve) -> String {
    format!("{} vs {}", c.label_u, c.label_v)
}

pub fn render_curve_svg(curves: &[ApkCurve], band: Option<&BaselineBand>, meta: &[String]) -> String {
    let names: Vec<String> = curves.iter().map(curve_name).collect();
    let series: Vec<Series<'_>> = curves
        .iter()
        .zip(&names)
        .map(|(c, name)| Series {
            name,
            ks: &c.ks,
            values: &c.values,
        })
        .collect();
    render_lines(&series, band, "aP@k", true, meta)
}

pub fn render_ratio_svg(ratios: &[RatioCurve], meta: &[String]) -> String {
    let names: Vec<String> = ratios
        .iter()
        .map(|r| format!("{} / {}", r.numerator, r.denominator))
        .collect();
    let series: Vec<Series<'_>> = ratios
        .iter()
        .zip(&names)
        .map(|(r, name)| Series {
            name,
            ks: &r.ks,
            values: &r.values,
        })
        .collect();
    render_lines(&series, None, "relative change", false, meta)
}

fn table_csv(
    columns: &[(String, &[usize], &[f64])],
    band: Option<&BaselineBand>,
    comments: &[String],
) -> String {
    let mut ks: BTreeSet<usize> = columns.iter().flat_map(|c| c.1.iter().copied()).collect();
    if let Some(b) = band {
        ks.extend(&b.ks);
    }
    let mut out = String::new();
    for c in comments {
        let _ = writeln!(out, "# {c}");
    }
    out.push('k');
    for (name, _, _) in columns {
        let _ = write!(out, ",{}", csv_field(name));
    }
    if band.is_some() {
        out.push_str(",baseline_mean,baseline_hi,baseline_lo");
    }
    out.push('\n');
    if columns.is_empty() {
        return out;
    }
    let cell = |ks: &[usize], vs: &[f64], k: usize| {
        ks.iter()
            .position(|&x| x == k)
            .map_or(String::new(), |i| fmt_sig(vs[i], 9))
    };
    for k in ks {
        let _ = write!(out, "{k}");
        for (_, cks, cvs) in columns {
            let _ = write!(out, ",{}", cell(cks, cvs, k));
        }
        if let Some(b) = band {
            let _ = write!(
                out,
                ",{},{},{}",
                cell(&b.ks, &b.mean, k),
                cell(&b.ks, &b.ci_high, k),
                cell(&b.ks, &b.ci_low, k)
            );
        }
        out.push('\n');
    }
    out
}

/// Companion table of a curve figure: `k`, one column per curve, then the
/// baseline columns. `names` overrides the default `u vs v` headers. An
/// empty curve list gives the header line only.
pub fn curve_table_csv(
    curves: &[ApkCurve],
    names: Option<&[String]>,
    band: Option<&BaselineBand>,
    comments: &[String],
) -> String {
    let columns: Vec<(String, &[usize], &[f64])> = curves
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let name = names
                .and_then(|n| n.get(i).cloned())
                .unwrap_or_else(|| curve_name(c));
            (name, c.ks.as_slice(), c.values.as_slice())
        })
        .collect();
    table_csv(&columns, band, comments)
}

/// Writes the CSV table and, unless `curves` is empty, the SVG figure.
pub fn emit_curve_svg(
    curves: &[ApkCurve],
    band: Option<&BaselineBand>,
    svg_path: &Path,
    csv_path: &Path,
    meta: &[String],
) -> Result<()> {
    write_atomic(csv_path, curve_table_csv(curves, None, band, meta).as_bytes())?;
    if curves.is_empty() {
        return Ok(());
    }
    write_atomic(svg_path, render_curve_svg(curves, band, meta).as_bytes())
}

/// `k` plus one `numerator/denominator` column per ratio curve.
pub fn ratio_table_csv(ratios: &[RatioCurve], comments: &[String]) -> String {
    let columns: Vec<(String, &[usize], &[f64])> = ratios
        .iter()
        .map(|r| {
            (
                format!("{}/{}", r.numerator, r.denominator),
                r.ks.as_slice(),
                r.values.as_slice(),
            )
        })
        .collect();
    table_csv(&columns, None, comments)
}

pub fn emit_ratio_svg(
    ratios: &[RatioCurve],
    svg_path: &Path,
    csv_path: &Path,
    meta: &[String],
) -> Result<()> {
    write_atomic(csv_path, ratio_table_csv(ratios, meta).as_bytes())?;
    if ratios.is_empty() {
        return Ok(());
    }
    write_atomic(svg_path, render_ratio_svg(ratios, meta).as_bytes())
}
