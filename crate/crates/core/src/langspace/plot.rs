//! Projection artifacts: a TSV table and a standalone SVG scatter.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{check_labels, Projection2D};
use crate::error::{Error, Result};

pub const PALETTE: [&str; 10] = [
    "#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1", "#ff9da7",
    "#9c755f", "#17becf",
];
pub const OTHER_COLOR: &str = "#b0b0b0";

const PLOT_SIZE: f64 = 480.0;
const MARGIN: f64 = 24.0;
const LEGEND_WIDTH: f64 = 180.0;

/// Families by descending frequency, ties by name.
pub fn family_order(families: &[String]) -> Vec<(String, usize)> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for f in families {
        *counts.entry(f.as_str()).or_default() += 1;
    }
    let mut order: Vec<(String, usize)> = counts
        .into_iter()
        .map(|(f, c)| (f.to_string(), c))
        .collect();
    order.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    order
}

fn check(projection: &Projection2D, codes: &[String], families: &[String]) -> Result<()> {
    check_labels(families, projection.coords.len())?;
    if codes.len() != projection.coords.len() {
        return Err(Error::shape(
            "emit_plot",
            &[projection.coords.len()],
            &[codes.len()],
        ));
    }
    Ok(())
}

/// `lang<TAB>x<TAB>y<TAB>family` rows after `#` provenance lines.
pub fn render_plot_tsv(
    projection: &Projection2D,
    codes: &[String],
    families: &[String],
    provenance: &BTreeMap<String, String>,
) -> Result<String> {
    check(projection, codes, families)?;
    let mut out = String::new();
    for (k, v) in provenance {
        let _ = writeln!(out, "# {k}={v}");
    }
    let _ = writeln!(out, "# kl={}", projection.kl);
    for ((c, f), [x, y]) in codes.iter().zip(families).zip(&projection.coords) {
        let _ = writeln!(out, "{c}\t{x}\t{y}\t{f}");
    }
    Ok(out)
}

/// Reads a table written by [`render_plot_tsv`] back into coordinates,
/// codes and families. The `# kl=` header restores the KL value.
pub fn parse_plot_tsv(text: &str, path: &Path) -> Result<(Projection2D, Vec<String>, Vec<String>)> {
    let (mut coords, mut codes, mut families, mut kl) =
        (Vec::new(), Vec::new(), Vec::new(), f64::NAN);
    for (i, line) in text.lines().enumerate() {
        if let Some(v) = line.strip_prefix("# kl=") {
            kl = v.parse().unwrap_or(f64::NAN);
        }
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(parse_err("expected `lang<TAB>x<TAB>y<TAB>family`".into()));
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| parse_err(format!("bad coordinate `{s}`: {e}")))
        };
        coords.push([num(cols[1])?, num(cols[2])?]);
        codes.push(cols[0].to_string());
        families.push(cols[3].to_string());
    }
    let projection = Projection2D {
        iterations: 0,
        seed: 0,
        kl_after_exaggeration: None,
        kl,
        coords,
    };
    Ok((projection, codes, families))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

pub fn render_plot_svg(
    projection: &Projection2D,
    codes: &[String],
    families: &[String],
    top_k: usize,
) -> Result<String> {
    check(projection, codes, families)?;
    let legend: Vec<String> = family_order(families)
        .into_iter()
        .take(top_k.min(PALETTE.len()))
        .map(|(f, _)| f)
        .collect();
    let color = |f: &str| {
        legend
            .iter()
            .position(|x| x == f)
            .map_or(OTHER_COLOR, |i| PALETTE[i])
    };

    let xs = projection.coords.iter().map(|c| c[0]);
    let ys = projection.coords.iter().map(|c| c[1]);
    let (x0, x1) = (
        xs.clone().fold(f64::INFINITY, f64::min),
        xs.fold(f64::NEG_INFINITY, f64::max),
    );
    let (y0, y1) = (
        ys.clone().fold(f64::INFINITY, f64::min),
        ys.fold(f64::NEG_INFINITY, f64::max),
    );
    let span = (x1 - x0).max(y1 - y0);
    let inner = PLOT_SIZE - 2.0 * MARGIN;
    let scale = if span > 0.0 { inner / span } else { 0.0 };
    let (cx, cy) = ((x0 + x1) / 2.0, (y0 + y1) / 2.0);
    let px = |x: f64| PLOT_SIZE / 2.0 + (x - cx) * scale;
    let py = |y: f64| PLOT_SIZE / 2.0 - (y - cy) * scale;

    let width = PLOT_SIZE + LEGEND_WIDTH;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{PLOT_SIZE}\" viewBox=\"0 0 {width} {PLOT_SIZE}\">"
    );
    let _ = writeln!(
        out,
        "<rect width=\"{width}\" height=\"{PLOT_SIZE}\" fill=\"#ffffff\"/>"
    );
    out.push_str("<g font-family=\"sans-serif\" font-size=\"10\">\n");
    for ((c, f), [x, y]) in codes.iter().zip(families).zip(&projection.coords) {
        let (sx, sy) = (px(*x), py(*y));
        let _ = writeln!(
            out,
            "<circle cx=\"{sx:.2}\" cy=\"{sy:.2}\" r=\"5\" fill=\"{}\"><title>{} ({})</title></circle>",
            color(f),
            escape(c),
            escape(f)
        );
        let _ = writeln!(
            out,
            "<text x=\"{:.2}\" y=\"{:.2}\">{}</text>",
            sx + 7.0,
            sy + 3.0,
            escape(c)
        );
    }
    for (i, f) in legend.iter().enumerate() {
        let y = MARGIN + 18.0 * i as f64;
        let _ = writeln!(
            out,
            "<rect x=\"{}\" y=\"{y}\" width=\"12\" height=\"12\" fill=\"{}\"/><text x=\"{}\" y=\"{}\">{}</text>",
            PLOT_SIZE + 8.0,
            PALETTE[i],
            PLOT_SIZE + 26.0,
            y + 10.0,
            escape(f)
        );
    }
    out.push_str("</g>\n</svg>\n");
    Ok(out)
}

/// Writes `<stem>.tsv` and `<stem>.svg` next to `path`.
pub fn emit_plot(
    projection: &Projection2D,
    codes: &[String],
    families: &[String],
    top_k: usize,
    path: &Path,
    provenance: &BTreeMap<String, String>,
) -> Result<()> {
    let tsv = render_plot_tsv(projection, codes, families, provenance)?;
    let svg = render_plot_svg(projection, codes, families, top_k)?;
    for (ext, body) in [("tsv", tsv), ("svg", svg)] {
        let p = path.with_extension(ext);
        fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}
