//! Minimal SVG line plots: fixed layout and fixed number formatting, so the
//! output is byte-deterministic.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">"
    );
    let _ = writeln!(out, "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>");
    let _ = writeln!(
        out,
        "<text x=\"{:.1}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">{}</text>",
        W / 2.0,
        escape(title)
    );
}

/// Line plot of the series; with `loglog` both axes are `log10` and
/// non-positive points are dropped.
pub fn line_plot(title: &str, xlabel: &str, ylabel: &str, series: &[Series], loglog: bool) -> String {
    let tr = |v: f64| if loglog { v.log10() } else { v };
    let pts: Vec<Vec<(f64, f64)>> = series
        .iter()
        .map(|s| {
            s.points
                .iter()
                .filter(|(x, y)| x.is_finite() && y.is_finite() && (!loglog || (*x > 0.0 && *y > 0.0)))
                .map(|&(x, y)| (tr(x), tr(y)))
                .collect()
        })
        .collect();
    let all = pts.iter().flatten();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 <= 0.0 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 <= 0.0 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let px = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let py = |y: f64| TOP + (1.0 - (y - y0) / (y1 - y0)) * ph;

    let mut out = String::new();
    header(&mut out, title);
    let _ = writeln!(
        out,
        "<rect x=\"{LEFT}\" y=\"{TOP}\" width=\"{pw}\" height=\"{ph}\" fill=\"none\" stroke=\"black\"/>"
    );
    let axis = |v: f64| if loglog { format!("1e{v:.2}") } else { format!("{v:.4}") };
    for (i, frac) in [0.0, 0.5, 1.0].iter().enumerate() {
        let xv = x0 + frac * (x1 - x0);
        let yv = y0 + frac * (y1 - y0);
        let anchor = ["start", "middle", "end"][i];
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"{anchor}\" font-family=\"sans-serif\" font-size=\"11\">{}</text>",
            px(xv),
            H - BOTTOM + 15.0,
            axis(xv)
        );
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">{}</text>",
            LEFT - 4.0,
            py(yv) + 4.0,
            axis(yv)
        );
    }
    let _ = writeln!(
        out,
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">{}</text>",
        LEFT + pw / 2.0,
        H - 12.0,
        escape(xlabel)
    );
    let _ = writeln!(
        out,
        "<text x=\"14\" y=\"{:.1}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(-90 14 {:.1})\">{}</text>",
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        escape(ylabel)
    );
    for (k, (s, p)) in series.iter().zip(&pts).enumerate() {
        let color = COLORS[k % COLORS.len()];
        if !p.is_empty() {
            let path: Vec<String> = p.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
            let _ = writeln!(
                out,
                "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>",
                path.join(" ")
            );
        }
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\" fill=\"{color}\">{}</text>",
            LEFT + 10.0,
            TOP + 16.0 * (k as f64 + 1.0),
            escape(&s.name)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// One row per flag, one cell per sample: green where the inequality holds.
pub fn flag_timeline(title: &str, labels: &[&str], s: &[f64], rows: &[Vec<bool>]) -> String {
    let mut out = String::new();
    header(&mut out, title);
    let pw = W - LEFT - RIGHT;
    let n = s.len().max(1);
    let cell = pw / n as f64;
    let row_h = ((H - TOP - BOTTOM) / labels.len().max(1) as f64).min(60.0);
    for (r, label) in labels.iter().enumerate() {
        let y = TOP + r as f64 * row_h;
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"12\">{}</text>",
            LEFT - 6.0,
            y + row_h / 2.0 + 4.0,
            escape(label)
        );
        if let Some(row) = rows.get(r) {
            for (i, ok) in row.iter().enumerate() {
                let color = if *ok { "#2ca02c" } else { "#d62728" };
                let _ = writeln!(
                    out,
                    "<rect x=\"{:.2}\" y=\"{:.1}\" width=\"{:.2}\" height=\"{:.1}\" fill=\"{color}\"/>",
                    LEFT + i as f64 * cell,
                    y + 2.0,
                    cell,
                    row_h - 4.0
                );
            }
        }
    }
    if let (Some(a), Some(b)) = (s.first(), s.last()) {
        let base = TOP + labels.len() as f64 * row_h + 16.0;
        let _ = writeln!(
            out,
            "<text x=\"{LEFT}\" y=\"{base:.1}\" font-family=\"sans-serif\" font-size=\"11\">s = {a:.4}</text>"
        );
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{base:.1}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">s = {b:.4}</text>",
            W - RIGHT
        );
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loglog_drops_non_positive_points() {
        let s = Series {
            name: "y".into(),
            points: vec![(1.0, 1.0), (0.0, 2.0), (10.0, 100.0)],
        };
        let svg = line_plot("t", "x", "y", &[s], true);
        let line = svg.lines().find(|l| l.starts_with("<polyline")).unwrap();
        assert_eq!(line.matches(',').count(), 2);
    }

    #[test]
    fn empty_series_still_renders() {
        let svg = line_plot("t", "x", "y", &[], false);
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        let svg = flag_timeline("f", &["E"], &[], &[vec![]]);
        assert!(svg.ends_with("</svg>\n"));
    }
}
