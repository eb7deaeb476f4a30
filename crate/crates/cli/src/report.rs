//! Text tables and SVG rendering.

use std::fmt::Write;

/// Left-aligned first column, right-aligned rest, two spaces between.
pub fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    let cols = header.len();
    let mut width: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in width.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    let mut line = |cells: &[String]| {
        let parts: Vec<String> = (0..cols)
            .map(|i| {
                let c = cells.get(i).map_or("", String::as_str);
                if i == 0 {
                    format!("{c:<w$}", w = width[i])
                } else {
                    format!("{c:>w$}", w = width[i])
                }
            })
            .collect();
        out.push_str(parts.join("  ").trim_end());
        out.push('\n');
    };
    line(&header.iter().map(|h| h.to_string()).collect::<Vec<_>>());
    for r in rows {
        line(r);
    }
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// White (min) to dark blue (max).
fn ramp(t: f64) -> String {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    format!("#{:02x}{:02x}{:02x}", lerp(255.0, 8.0), lerp(255.0, 48.0), lerp(255.0, 107.0))
}

/// Layer-by-head grid shaded by value; rows are layers.
pub fn heatmap_svg(title: &str, values: &[Vec<f64>]) -> String {
    const CELL: usize = 48;
    const LEFT: usize = 60;
    const TOP: usize = 40;
    let layers = values.len();
    let heads = values.iter().map(Vec::len).max().unwrap_or(0);
    let flat = values.iter().flatten().copied().filter(|v| v.is_finite());
    let (lo, hi) = flat.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let w = LEFT + heads * CELL + 20;
    let h = TOP + layers * CELL + 40;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(s, r#"<text x="{LEFT}" y="20" font-size="13">{}</text>"#, escape(title));
    for (l, row) in values.iter().enumerate() {
        let y = TOP + l * CELL;
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">L{l}</text>"#, LEFT - 6, y + CELL / 2 + 4);
        for (hd, &v) in row.iter().enumerate() {
            let x = LEFT + hd * CELL;
            let t = (v - lo) / span;
            let ink = if t > 0.5 { "#ffffff" } else { "#000000" };
            let _ = writeln!(s, r##"<rect x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="{}" stroke="#999"/>"##, ramp(t));
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="middle" fill="{ink}">{v:.2}</text>"#,
                x + CELL / 2,
                y + CELL / 2 + 4
            );
        }
    }
    for hd in 0..heads {
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">H{hd}</text>"#, LEFT + hd * CELL + CELL / 2, TOP + layers * CELL + 16);
    }
    s.push_str("</svg>\n");
    s
}

/// One named series of `(x, y)` points.
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

/// Stacked panels, one per series, sharing the x axis.
pub fn curves_svg(title: &str, series: &[Series]) -> String {
    const W: f64 = 560.0;
    const PH: f64 = 160.0;
    const LEFT: f64 = 60.0;
    const TOP: f64 = 36.0;
    const GAP: f64 = 40.0;
    let all_x = series.iter().flat_map(|s| s.points.iter().map(|p| p.0));
    let (x0, x1) = all_x.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let xspan = if x1 > x0 { x1 - x0 } else { 1.0 };
    let height = TOP + series.len() as f64 * (PH + GAP) + 10.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{height}" font-family="sans-serif" font-size="11">"#,
        W + LEFT + 20.0
    );
    let _ = writeln!(s, r#"<text x="{LEFT}" y="20" font-size="13">{}</text>"#, escape(title));
    for (i, ser) in series.iter().enumerate() {
        let top = TOP + i as f64 * (PH + GAP);
        let ys = ser.points.iter().map(|p| p.1).filter(|v| v.is_finite());
        let (y0, y1) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        let (y0, y1) = if y0.is_finite() { (y0, y1) } else { (0.0, 1.0) };
        let yspan = if y1 > y0 { y1 - y0 } else { 1.0 };
        let _ = writeln!(s, r##"<rect x="{LEFT}" y="{top}" width="{W}" height="{PH}" fill="none" stroke="#999"/>"##);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, LEFT + 4.0, top + 14.0, escape(&ser.name));
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{y1:.3}</text>"#, LEFT - 4.0, top + 10.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{y0:.3}</text>"#, LEFT - 4.0, top + PH);
        let _ = writeln!(s, r#"<text x="{LEFT}" y="{}">{x0}</text>"#, top + PH + 14.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{x1}</text>"#, LEFT + W, top + PH + 14.0);
        let pts: Vec<String> = ser
            .points
            .iter()
            .filter(|p| p.1.is_finite())
            .map(|&(x, y)| {
                format!(
                    "{:.2},{:.2}",
                    LEFT + (x - x0) / xspan * W,
                    top + PH - (y - y0) / yspan * PH
                )
            })
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
            COLORS[i % COLORS.len()],
            pts.join(" ")
        );
    }
    s.push_str("</svg>\n");
    s
}
