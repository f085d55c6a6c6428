//! Minimal SVG plots: line charts for numeric sweeps, bar charts for
//! categorical ones. No drawing dependencies; the output is plain SVG text.

use std::fmt::Write as _;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN_L: f64 = 64.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 36.0;
const MARGIN_B: f64 = 56.0;

pub struct Series<'a> {
    pub label: &'a str,
    /// (x, y) points, already sorted by x for line plots.
    pub points: Vec<(f64, f64)>,
}

fn color(i: usize) -> &'static str {
    const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];
    PALETTE[i % PALETTE.len()]
}

fn axis_bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if (hi - lo).abs() < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = (hi - lo) * 0.08;
    (lo - pad, hi + pad)
}

fn fmt_tick(v: f64) -> String {
    if v.abs() >= 100.0 || v == v.trunc() {
        format!("{v:.0}")
    } else if v.abs() >= 1.0 {
        format!("{v:.2}")
    } else {
        format!("{v:.3}")
    }
}

/// Line plot of one or more series over a numeric x axis.
pub fn line_plot(title: &str, x_label: &str, y_label: &str, series: &[Series<'_>]) -> String {
    let (x_lo, x_hi) = axis_bounds(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let (y_lo, y_hi) = {
        let (lo, hi) = axis_bounds(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
        (lo.min(0.0), hi.max(0.05))
    };
    let sx = |x: f64| MARGIN_L + (x - x_lo) / (x_hi - x_lo) * (WIDTH - MARGIN_L - MARGIN_R);
    let sy = |y: f64| HEIGHT - MARGIN_B - (y - y_lo) / (y_hi - y_lo) * (HEIGHT - MARGIN_T - MARGIN_B);

    let mut svg = svg_header(title, x_label, y_label);
    for tick in 0..=4 {
        let xv = x_lo + (x_hi - x_lo) * tick as f64 / 4.0;
        let yv = y_lo + (y_hi - y_lo) * tick as f64 / 4.0;
        let _ = write!(
            svg,
            r#"<line x1="{x}" y1="{yb}" x2="{x}" y2="{yt}" stroke="#ddd"/><text x="{x}" y="{ylab}" text-anchor="middle" font-size="12">{xt}</text>"#,
            x = sx(xv),
            yb = HEIGHT - MARGIN_B,
            yt = MARGIN_T,
            ylab = HEIGHT - MARGIN_B + 18.0,
            xt = fmt_tick(xv),
        );
        let _ = write!(
            svg,
            r#"<line x1="{xl}" y1="{y}" x2="{xr}" y2="{y}" stroke="#ddd"/><text x="{xlab}" y="{y}" text-anchor="end" font-size="12" dominant-baseline="middle">{yt}</text>"#,
            xl = MARGIN_L,
            xr = WIDTH - MARGIN_R,
            y = sy(yv),
            xlab = MARGIN_L - 8.0,
            yt = fmt_tick(yv),
        );
    }
    for (i, s) in series.iter().enumerate() {
        let path: Vec<String> = s
            .points
            .iter()
            .enumerate()
            .map(|(j, &(x, y))| format!("{}{:.2},{:.2}", if j == 0 { "M" } else { "L" }, sx(x), sy(y)))
            .collect();
        let _ = write!(
            svg,
            r#"<path d="{d}" fill="none" stroke="{c}" stroke-width="2"/>"#,
            d = path.join(" "),
            c = color(i),
        );
        for &(x, y) in &s.points {
            let _ = write!(
                svg,
                r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="3" fill="{c}"/>"#,
                cx = sx(x),
                cy = sy(y),
                c = color(i),
            );
        }
        let _ = write!(
            svg,
            r#"<text x="{x}" y="{y}" font-size="12" fill="{c}">{label}</text>"#,
            x = WIDTH - MARGIN_R - 150.0,
            y = MARGIN_T + 16.0 * (i + 1) as f64,
            c = color(i),
            label = s.label,
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Bar plot over categorical x values (per-user leakage, decoding strategy).
pub fn bar_plot(title: &str, x_label: &str, y_label: &str, bars: &[(String, f64)]) -> String {
    let (_, y_hi) = axis_bounds(bars.iter().map(|b| b.1));
    let y_hi = y_hi.max(0.05);
    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let slot = plot_w / bars.len().max(1) as f64;
    let bar_w = slot * 0.6;
    let sy = |y: f64| HEIGHT - MARGIN_B - y / y_hi * (HEIGHT - MARGIN_T - MARGIN_B);

    let mut svg = svg_header(title, x_label, y_label);
    for tick in 0..=4 {
        let yv = y_hi * tick as f64 / 4.0;
        let _ = write!(
            svg,
            r#"<line x1="{xl}" y1="{y}" x2="{xr}" y2="{y}" stroke="#ddd"/><text x="{xlab}" y="{y}" text-anchor="end" font-size="12" dominant-baseline="middle">{yt}</text>"#,
            xl = MARGIN_L,
            xr = WIDTH - MARGIN_R,
            y = sy(yv),
            xlab = MARGIN_L - 8.0,
            yt = fmt_tick(yv),
        );
    }
    for (i, (label, value)) in bars.iter().enumerate() {
        let x = MARGIN_L + slot * i as f64 + (slot - bar_w) / 2.0;
        let y = sy(*value);
        let _ = write!(
            svg,
            r#"<rect x="{x:.2}" y="{y:.2}" width="{w:.2}" height="{h:.2}" fill="{c}"/>"#,
            w = bar_w,
            h = (HEIGHT - MARGIN_B - y).max(0.0),
            c = color(0),
        );
        let _ = write!(
            svg,
            r#"<text x="{tx:.2}" y="{ty}" text-anchor="middle" font-size="11">{label}</text>"#,
            tx = x + bar_w / 2.0,
            ty = HEIGHT - MARGIN_B + 18.0,
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn svg_header(title: &str, x_label: &str, y_label: &str) -> String {
    let mut svg = format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = write!(
        svg,
        r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/><text x="{tx}" y="22" text-anchor="middle" font-size="15" font-weight="bold">{title}</text>"#,
        tx = WIDTH / 2.0,
    );
    let _ = write!(
        svg,
        r#"<text x="{tx}" y="{ty}" text-anchor="middle" font-size="13">{x_label}</text>"#,
        tx = WIDTH / 2.0,
        ty = HEIGHT - 12.0,
    );
    let _ = write!(
        svg,
        r#"<text x="16" y="{ty}" text-anchor="middle" font-size="13" transform="rotate(-90 16 {ty})">{y_label}</text>"#,
        ty = HEIGHT / 2.0,
    );
    let _ = write!(
        svg,
        r#"<line x1="{l}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/><line x1="{l}" y1="{t}" x2="{l}" y2="{b}" stroke="black"/>"#,
        l = MARGIN_L,
        r = WIDTH - MARGIN_R,
        t = MARGIN_T,
        b = HEIGHT - MARGIN_B,
    );
    svg
}
