use std::fmt::Write;

use adaseg::LearningCurve;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: (f64, f64, f64, f64) = (60.0, 150.0, 30.0, 50.0); // left, right, top, bottom
const PALETTE: [&str; 8] = ["#1f77b4", "#2ca02c", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"];
const HIGHLIGHT: &str = "#d62728";

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Validation DSC per structure against epoch. `highlight` is drawn thicker in
/// red; a dashed vertical line marks `curve.epoch_added`.
pub fn learning_curve(curve: &LearningCurve, title: &str, highlight: Option<&str>) -> String {
    let (left, right, top, bottom) = MARGIN;
    let plot_w = WIDTH - left - right;
    let plot_h = HEIGHT - top - bottom;
    let first = curve.rows.first().map_or(0, |r| r.epoch).min(1) as f64;
    let last = (curve.last_epoch() as f64).max(first + 1.0);
    let x = |e: f64| left + (e - first) / (last - first) * plot_w;
    let y = |d: f64| top + (1.0 - d.clamp(0.0, 1.0)) * plot_h;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{:.1}" y="18" text-anchor="middle" font-size="14">{}</text>"#, left + plot_w / 2.0, escape(title));

    // axes and grid
    for i in 0..=5 {
        let d = f64::from(i) / 5.0;
        let _ = writeln!(
            s,
            r##"<line x1="{left:.1}" y1="{0:.1}" x2="{1:.1}" y2="{0:.1}" stroke="#dddddd"/><text x="{2:.1}" y="{3:.1}" text-anchor="end">{d:.1}</text>"##,
            y(d),
            left + plot_w,
            left - 6.0,
            y(d) + 4.0
        );
    }
    let step = ((last - first) / 8.0).ceil().max(1.0) as usize;
    let mut e = first as usize;
    while e as f64 <= last {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{e}</text>"#,
            x(e as f64),
            top + plot_h + 18.0
        );
        e += step;
    }
    let _ = writeln!(
        s,
        r#"<rect x="{left:.1}" y="{top:.1}" width="{plot_w:.1}" height="{plot_h:.1}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">epoch</text>"#,
        left + plot_w / 2.0,
        HEIGHT - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">validation DSC</text>"#,
        top + plot_h / 2.0,
        top + plot_h / 2.0
    );

    if let Some(added) = curve.epoch_added {
        let xa = x(added as f64);
        let _ = writeln!(
            s,
            r#"<line x1="{xa:.1}" y1="{top:.1}" x2="{xa:.1}" y2="{:.1}" stroke="black" stroke-dasharray="5,4"/><text x="{:.1}" y="{:.1}">added at {added}</text>"#,
            top + plot_h,
            xa + 4.0,
            top + 14.0
        );
    }

    let mut colour = PALETTE.iter().cycle();
    for (k, name) in curve.structures.iter().enumerate() {
        let hl = highlight == Some(name.as_str());
        let stroke = if hl { HIGHLIGHT } else { colour.next().copied().unwrap_or("black") };
        let width = if hl { 3.0 } else { 1.5 };
        let points: Vec<String> = curve
            .rows
            .iter()
            .filter_map(|r| r.dsc[k].map(|d| format!("{:.1},{:.1}", x(r.epoch as f64), y(d))))
            .collect();
        if !points.is_empty() {
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{stroke}" stroke-width="{width}" points="{}"/>"#,
                points.join(" ")
            );
        }
        let ly = top + 16.0 + 20.0 * k as f64;
        let lx = left + plot_w + 14.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{stroke}" stroke-width="{width}"/><text x="{:.1}" y="{:.1}"{}>{}</text>"#,
            lx + 24.0,
            lx + 30.0,
            ly + 4.0,
            if hl { r#" font-weight="bold""# } else { "" },
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}
