//! Minimal SVG box and line plots for result summaries.

use std::fmt::Write;

use crate::metrics::quantile;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Axis {
    min: f64,
    max: f64,
}

impl Axis {
    fn from_values<'a>(values: impl Iterator<Item = &'a f64>) -> Axis {
        let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values.filter(|v| v.is_finite()) {
            min = min.min(*v);
            max = max.max(*v);
        }
        if !min.is_finite() {
            return Axis { min: 0.0, max: 1.0 };
        }
        if max - min < 1e-9 {
            min -= 0.5;
            max += 0.5;
        }
        let pad = 0.05 * (max - min);
        Axis {
            min: min - pad,
            max: max + pad,
        }
    }

    fn y(&self, v: f64) -> f64 {
        let v = v.clamp(self.min, self.max);
        TOP + (HEIGHT - TOP - BOTTOM) * (self.max - v) / (self.max - self.min)
    }
}

fn frame(out: &mut String, title: &str, y_label: &str, axis: &Axis) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    let bottom = HEIGHT - BOTTOM;
    let _ = writeln!(
        out,
        r#"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{bottom}" stroke="black"/><line x1="{LEFT}" y1="{bottom}" x2="{}" y2="{bottom}" stroke="black"/>"#,
        WIDTH - RIGHT
    );
    for i in 0..=4 {
        let v = axis.min + (axis.max - axis.min) * i as f64 / 4.0;
        let y = axis.y(v);
        let _ = writeln!(
            out,
            r#"<line x1="{}" y1="{y:.1}" x2="{LEFT}" y2="{y:.1}" stroke="black"/><text x="{}" y="{:.1}" text-anchor="end">{v:.2}</text>"#,
            LEFT - 4.0,
            LEFT - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="14" y="{}" transform="rotate(-90 14 {})" text-anchor="middle">{}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(y_label)
    );
}

/// One box (quartiles, whiskers at min/max of finite values) per group.
pub fn boxplot_svg(title: &str, y_label: &str, groups: &[(String, Vec<f64>)]) -> String {
    let axis = Axis::from_values(groups.iter().flat_map(|(_, v)| v.iter()));
    let mut out = String::new();
    frame(&mut out, title, y_label, &axis);
    let slot = (WIDTH - LEFT - RIGHT) / groups.len().max(1) as f64;
    for (i, (name, values)) in groups.iter().enumerate() {
        let cx = LEFT + slot * (i as f64 + 0.5);
        let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
        let color = PALETTE[i % PALETTE.len()];
        if !finite.is_empty() {
            let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let (q1, med, q3) = (quantile(&finite, 0.25), quantile(&finite, 0.5), quantile(&finite, 0.75));
            let w = slot * 0.3;
            let _ = writeln!(
                out,
                r#"<g class="series" data-name="{}"><line x1="{cx:.1}" y1="{:.1}" x2="{cx:.1}" y2="{:.1}" stroke="{color}"/><rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="{color}" fill-opacity="0.3" stroke="{color}"/><line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="{color}" stroke-width="2"/></g>"#,
                escape(name),
                axis.y(hi),
                axis.y(lo),
                cx - w,
                axis.y(q3),
                2.0 * w,
                (axis.y(q1) - axis.y(q3)).max(0.5),
                cx - w,
                axis.y(med),
                cx + w,
                axis.y(med),
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{cx:.1}" y="{}" text-anchor="middle">{}</text>"#,
            HEIGHT - BOTTOM + 18.0,
            escape(name)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// One polyline per series over shared numeric x values.
pub fn line_svg(title: &str, x_label: &str, y_label: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let axis = Axis::from_values(series.iter().flat_map(|(_, pts)| pts.iter().map(|p| &p.1)));
    let xs = Axis::from_values(series.iter().flat_map(|(_, pts)| pts.iter().map(|p| &p.0)));
    let x_of = |x: f64| LEFT + (WIDTH - LEFT - RIGHT) * (x - xs.min) / (xs.max - xs.min);
    let mut out = String::new();
    frame(&mut out, title, y_label, &axis);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 10.0,
        escape(x_label)
    );
    let mut ticks: Vec<f64> = series.iter().flat_map(|(_, p)| p.iter().map(|q| q.0)).collect();
    ticks.sort_by(f64::total_cmp);
    ticks.dedup();
    for x in ticks {
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{x}</text>"#,
            x_of(x),
            HEIGHT - BOTTOM + 16.0
        );
    }
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let coords: Vec<String> = pts
            .iter()
            .filter(|p| p.1.is_finite())
            .map(|p| format!("{:.1},{:.1}", x_of(p.0), axis.y(p.1)))
            .collect();
        let _ = writeln!(
            out,
            r#"<g class="series" data-name="{}"><polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/><text x="{}" y="{}" fill="{color}">{}</text></g>"#,
            escape(name),
            coords.join(" "),
            WIDTH - RIGHT - 90.0,
            TOP + 14.0 * (i as f64 + 1.0),
            escape(name)
        );
    }
    out.push_str("</svg>\n");
    out
}
