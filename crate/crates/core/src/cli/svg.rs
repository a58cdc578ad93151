//! Plain-text SVG for scatter plots and metric curves.

use std::fmt::Write as _;

pub const SCATTER_SIZE: f64 = 640.0;
pub const SCATTER_RANGE: f64 = 1.1;

const PALETTE: &[&str] = &[
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

pub fn color(label: usize) -> &'static str {
    PALETTE[label % PALETTE.len()]
}

fn to_px(v: f64) -> f64 {
    (v + SCATTER_RANGE) / (2.0 * SCATTER_RANGE) * SCATTER_SIZE
}

/// 640×640 scatter over `[−1.1, 1.1]²`, one color per label. `y` grows
/// upward. Points outside the range are drawn at the clipped edge.
pub fn scatter(points: &[[f64; 2]], labels: &[usize]) -> String {
    let s = SCATTER_SIZE;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{s}" height="{s}" viewBox="0 0 {s} {s}">"#
    );
    let _ = writeln!(out, r#"<rect x="0" y="0" width="{s}" height="{s}" fill="white" stroke="black"/>"#);
    let (o, top) = (to_px(0.0), to_px(1.0));
    let _ = writeln!(out, r##"<line x1="0" y1="{o}" x2="{s}" y2="{o}" stroke="#cccccc"/>"##);
    let _ = writeln!(out, r##"<line x1="{o}" y1="0" x2="{o}" y2="{s}" stroke="#cccccc"/>"##);
    let bottom = to_px(-1.0);
    let _ = writeln!(
        out,
        r##"<rect x="{bottom:.2}" y="{bottom:.2}" width="{w:.2}" height="{w:.2}" fill="none" stroke="#eeeeee"/>"##,
        w = top - bottom
    );
    for (i, p) in points.iter().enumerate() {
        let label = labels.get(i).copied().unwrap_or(0);
        let cx = to_px(p[0].clamp(-SCATTER_RANGE, SCATTER_RANGE));
        let cy = s - to_px(p[1].clamp(-SCATTER_RANGE, SCATTER_RANGE));
        let _ = writeln!(
            out,
            r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="2" fill="{}" fill-opacity="0.6"/>"#,
            color(label)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// One panel per series, stacked vertically, each scaled to its own range.
/// Every series becomes a single `<polyline>`.
pub fn curves(xs: &[f64], series: &[(String, Vec<f64>)]) -> String {
    let (w, panel, margin) = (800.0, 140.0, 40.0);
    let h = panel * series.len().max(1) as f64;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(out, r#"<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>"#);
    let range = |v: &[f64]| {
        let lo = v.iter().copied().filter(|x| x.is_finite()).fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().filter(|x| x.is_finite()).fold(f64::NEG_INFINITY, f64::max);
        if lo.is_finite() && hi > lo {
            (lo, hi)
        } else if lo.is_finite() {
            (lo - 1.0, lo + 1.0)
        } else {
            (0.0, 1.0)
        }
    };
    let (x_lo, x_hi) = range(xs);
    for (k, (name, ys)) in series.iter().enumerate() {
        let top = panel * k as f64;
        let (y_lo, y_hi) = range(ys);
        let (pw, ph) = (w - 2.0 * margin, panel - 2.0 * 20.0);
        let _ = writeln!(
            out,
            r##"<rect x="{margin}" y="{:.2}" width="{pw}" height="{ph}" fill="none" stroke="#999999"/>"##,
            top + 20.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{margin}" y="{:.2}" font-family="monospace" font-size="12">{name} [{y_lo:.4}, {y_hi:.4}]</text>"#,
            top + 14.0
        );
        let pts: Vec<String> = xs
            .iter()
            .zip(ys)
            .filter(|(_, y)| y.is_finite())
            .map(|(&x, &y)| {
                let px = margin + (x - x_lo) / (x_hi - x_lo) * pw;
                let py = top + 20.0 + ph - (y - y_lo) / (y_hi - y_lo) * ph;
                format!("{px:.2},{py:.2}")
            })
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
            color(k),
            pts.join(" ")
        );
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_scatter_is_complete_svg() {
        let s = scatter(&[], &[]);
        assert!(s.starts_with("<svg") && s.trim_end().ends_with("</svg>"));
        assert!(!s.contains("<circle"));
        assert!(s.contains(r#"width="640""#));
    }

    #[test]
    fn scatter_maps_range_to_viewport() {
        let s = scatter(&[[-1.1, 1.1], [1.1, -1.1]], &[0, 1]);
        assert!(s.contains(r##"cx="0.00" cy="0.00" r="2" fill="#1f77b4""##), "{s}");
        assert!(s.contains(r##"cx="640.00" cy="640.00" r="2" fill="#ff7f0e""##), "{s}");
    }

    #[test]
    fn one_polyline_per_series() {
        let s = curves(
            &[1.0, 2.0, 3.0],
            &[("a".into(), vec![1.0, 2.0, 0.5]), ("b".into(), vec![3.0, 3.0, 3.0])],
        );
        assert_eq!(s.matches("<polyline").count(), 2);
    }
}
