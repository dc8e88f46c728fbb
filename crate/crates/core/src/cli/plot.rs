//! Minimal SVG charts. The CSV written next to each chart is the data contract.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 400.0;
const M: f64 = 56.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

fn header(title: &str) -> String {
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    );
    s.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    let _ = writeln!(s, "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">{}</text>", W / 2.0, escape(title));
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    (lo, hi)
}

fn axes(s: &mut String, x_label: &str, y_label: &str, (y0, y1): (f64, f64)) {
    let _ = writeln!(
        s,
        "<line x1=\"{M}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/><line x1=\"{M}\" y1=\"{M}\" x2=\"{M}\" y2=\"{b}\" stroke=\"black\"/>",
        b = H - M,
        r = W - M
    );
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>", W / 2.0, H - 12.0, escape(x_label));
    let _ = writeln!(
        s,
        "<text x=\"16\" y=\"{y}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {y})\">{}</text>",
        escape(y_label),
        y = H / 2.0
    );
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{:.3}</text>", M - 4.0, H - M, y0);
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{:.3}</text>", M - 4.0, M + 4.0, y1);
}

/// Line chart of one or more `(x, y)` series.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let (x0, x1) = range(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let (y0, y1) = range(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
    let px = |x: f64| M + (x - x0) / (x1 - x0) * (W - 2.0 * M);
    let py = |y: f64| H - M - (y - y0) / (y1 - y0) * (H - 2.0 * M);
    let mut s = header(title);
    axes(&mut s, x_label, y_label, (y0, y1));
    let _ = writeln!(s, "<text x=\"{M}\" y=\"{}\" text-anchor=\"middle\">{x0}</text>", H - M + 14.0);
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{x1}</text>", W - M, H - M + 14.0);
    for (i, ser) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = ser
            .points
            .iter()
            .filter(|p| p.1.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        let _ = writeln!(s, "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>", pts.join(" "));
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" fill=\"{color}\" text-anchor=\"end\">{}</text>",
            W - M,
            M + 14.0 * i as f64,
            escape(&ser.name)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Vertical bars, one per label.
pub fn bar_chart(title: &str, y_label: &str, labels: &[String], values: &[f64]) -> String {
    let (y0, y1) = range(values.iter().copied().chain([0.0]));
    let py = |y: f64| H - M - (y - y0) / (y1 - y0) * (H - 2.0 * M);
    let mut s = header(title);
    axes(&mut s, "", y_label, (y0, y1));
    let slot = (W - 2.0 * M) / values.len().max(1) as f64;
    for (i, (label, v)) in labels.iter().zip(values).enumerate() {
        let x = M + slot * i as f64 + slot * 0.1;
        let (top, bottom) = (py(v.max(0.0)), py(v.min(0.0)));
        let _ = writeln!(
            s,
            "<rect x=\"{x:.2}\" y=\"{top:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{}\"/>",
            slot * 0.8,
            bottom - top,
            PALETTE[0]
        );
        let _ = writeln!(
            s,
            "<text x=\"{:.2}\" y=\"{}\" text-anchor=\"middle\" font-size=\"9\">{}</text>",
            x + slot * 0.4,
            H - M + 12.0,
            escape(label)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// One bar per row, split into segments by the row's fractions.
pub fn stacked_bars(title: &str, labels: &[String], rows: &[Vec<f64>], legend: &[String]) -> String {
    let mut s = header(title);
    axes(&mut s, "", "proportion", (0.0, 1.0));
    let slot = (W - 2.0 * M) / rows.len().max(1) as f64;
    for (i, row) in rows.iter().enumerate() {
        let x = M + slot * i as f64 + slot * 0.1;
        let mut acc = 0.0;
        for (c, p) in row.iter().enumerate() {
            let top = H - M - (acc + p) * (H - 2.0 * M);
            let _ = writeln!(
                s,
                "<rect x=\"{x:.2}\" y=\"{top:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{}\"/>",
                slot * 0.8,
                p * (H - 2.0 * M),
                PALETTE[c % PALETTE.len()]
            );
            acc += p;
        }
        if let Some(label) = labels.get(i) {
            let _ = writeln!(
                s,
                "<text x=\"{:.2}\" y=\"{}\" text-anchor=\"middle\" font-size=\"9\">{}</text>",
                x + slot * 0.4,
                H - M + 12.0,
                escape(label)
            );
        }
    }
    for (c, name) in legend.iter().enumerate() {
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" fill=\"{}\" text-anchor=\"end\">{}</text>",
            W - M,
            M + 14.0 * c as f64,
            PALETTE[c % PALETTE.len()],
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Grayscale raster, brightest at the maximum value.
pub fn heatmap(title: &str, height: usize, width: usize, values: &[f64]) -> String {
    let (lo, hi) = range(values.iter().copied());
    let cell = ((W - 2.0 * M) / width as f64).min((H - 2.0 * M) / height as f64);
    let mut s = header(title);
    for r in 0..height {
        for c in 0..width {
            let v = ((values[r * width + c] - lo) / (hi - lo)).clamp(0.0, 1.0);
            let g = (v * 255.0).round() as u8;
            let _ = writeln!(
                s,
                "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{cell:.2}\" height=\"{cell:.2}\" fill=\"rgb({g},{g},{g})\"/>",
                M + c as f64 * cell,
                M + r as f64 * cell
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn charts_are_closed_svg() {
        let line = line_chart(
            "t",
            "x",
            "y",
            &[Series {
                name: "a<b".into(),
                points: vec![(0.0, 1.0), (1.0, 2.0)],
            }],
        );
        assert!(line.starts_with("<svg") && line.ends_with("</svg>\n"));
        assert!(line.contains("a&lt;b"));
        let bars = bar_chart("t", "y", &["0".into(), "1".into()], &[1.0, -1.0]);
        assert_eq!(bars.matches("<rect").count(), 3);
        let stacked = stacked_bars("t", &["p0".into()], &[vec![0.25, 0.75]], &["bg".into(), "fg".into()]);
        assert_eq!(stacked.matches("<rect").count(), 3);
        assert_eq!(heatmap("t", 2, 3, &[0.0; 6]).matches("<rect").count(), 7);
    }
}
