//! Learning-curve SVGs: one line per run group (mean over its runs) with a
//! shaded band spanning the per-iteration minimum and maximum.

use std::fmt::Write as _;
use std::path::Path;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;
const COLORS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// `(x, y)` points of one run.
pub type Curve = Vec<(f64, f64)>;

/// Reads two columns from a metrics CSV. Rows with the wrong number of
/// cells or non-numeric values are skipped and reported in `warnings`.
pub fn read_curve(path: &Path, x: &str, y: &str, warnings: &mut Vec<String>) -> Curve {
    let mut reader = match csv::ReaderBuilder::new().flexible(true).from_path(path) {
        Ok(r) => r,
        Err(e) => {
            warnings.push(format!("{}: {e}", path.display()));
            return Vec::new();
        }
    };
    let header = match reader.headers() {
        Ok(h) if !h.is_empty() => h.clone(),
        _ => {
            warnings.push(format!("{}: empty file", path.display()));
            return Vec::new();
        }
    };
    let col = |name: &str| header.iter().position(|h| h == name);
    let (Some(xi), Some(yi)) = (col(x), col(y)) else {
        warnings.push(format!("{}: no `{x}` and `{y}` columns", path.display()));
        return Vec::new();
    };
    let mut curve = Vec::new();
    for (n, record) in reader.records().enumerate() {
        let line = n + 2;
        let parsed = record.ok().filter(|r| r.len() == header.len()).and_then(|r| {
            let all_numeric = r.iter().all(|c| c.trim().parse::<f64>().is_ok());
            let px = r[xi].trim().parse::<f64>().ok()?;
            let py = r[yi].trim().parse::<f64>().ok()?;
            all_numeric.then_some((px, py))
        });
        match parsed {
            Some(p) => curve.push(p),
            None => warnings.push(format!("{}: skipped malformed row at line {line}", path.display())),
        }
    }
    curve
}

/// Per-x mean, minimum and maximum over a group's runs.
pub fn summarize(runs: &[Curve]) -> Vec<(f64, f64, f64, f64)> {
    let mut xs: Vec<f64> = runs.iter().flatten().map(|p| p.0).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    xs.into_iter()
        .map(|x| {
            let ys: Vec<f64> = runs.iter().flatten().filter(|p| p.0 == x).map(|p| p.1).collect();
            let mean = ys.iter().sum::<f64>() / ys.len() as f64;
            let lo = ys.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            (x, mean, lo, hi)
        })
        .collect()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn tick(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

/// Renders groups of runs, each `(label, runs)`, as a standalone SVG.
pub fn render(groups: &[(String, Vec<Curve>)], x_label: &str, y_label: &str) -> String {
    let summaries: Vec<_> = groups.iter().map(|(l, runs)| (l, summarize(runs))).collect();
    let points = summaries.iter().flat_map(|(_, s)| s.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, _, lo, hi) in points {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(lo);
        y1 = y1.max(hi);
    }
    let empty = !x0.is_finite();
    if empty {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    if y1 == y0 {
        (y0, y1) = (y0 - 0.5, y1 + 0.5);
    }
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + (1.0 - (y - y0) / (y1 - y0)) * ph;

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            sx(xv),
            TOP + ph + 18.0,
            tick(xv)
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            LEFT - 6.0,
            sy(yv) + 4.0,
            tick(yv)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 10.0,
        escape(x_label)
    );
    let _ = writeln!(
        svg,
        r#"<text transform="translate(16 {:.1}) rotate(-90)" text-anchor="middle">{}</text>"#,
        TOP + ph / 2.0,
        escape(y_label)
    );
    if empty {
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">no data</text>"#,
            LEFT + pw / 2.0,
            TOP + ph / 2.0
        );
    }
    for (g, (label, summary)) in summaries.iter().enumerate() {
        let color = COLORS[g % COLORS.len()];
        if summary.is_empty() {
            continue;
        }
        let upper = summary.iter().map(|p| format!("{:.2},{:.2}", sx(p.0), sy(p.3)));
        let lower = summary.iter().rev().map(|p| format!("{:.2},{:.2}", sx(p.0), sy(p.2)));
        let band: Vec<String> = upper.chain(lower).collect();
        let _ = writeln!(
            svg,
            r#"<polygon class="band" points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#,
            band.join(" ")
        );
        let line: Vec<String> = summary
            .iter()
            .map(|p| format!("{:.2},{:.2}", sx(p.0), sy(p.1)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline class="mean" points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            line.join(" ")
        );
        let ly = TOP + 14.0 + 18.0 * g as f64;
        let _ = writeln!(
            svg,
            r#"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="3"/>"#,
            WIDTH - RIGHT + 12.0,
            WIDTH - RIGHT + 32.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}">{}</text>"#,
            WIDTH - RIGHT + 38.0,
            ly + 4.0,
            escape(label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}
