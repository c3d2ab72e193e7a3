//! Self-contained SVG scatter plots with the fitted line. No plotting
//! dependencies; output is deterministic for a given fit.

use std::fmt::Write;

use super::RegressionFit;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 30.0;
const MARGIN_TOP: f64 = 46.0;
const MARGIN_BOTTOM: f64 = 64.0;

/// Render one fit as an SVG document: points, least-squares line, unit axes,
/// and the axis convention spelled out under the title.
pub fn scatter_svg(fit: &RegressionFit, title: &str) -> String {
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;

    let (mut min_x, mut max_x, mut min_y, mut max_y) = (0.0f64, 1.0f64, 0.0f64, 1.0f64);
    for p in &fit.points {
        min_x = min_x.min(p.x);
        max_x = max_x.max(p.x);
        min_y = min_y.min(p.y);
        max_y = max_y.max(p.y);
    }
    let sx = |x: f64| MARGIN_LEFT + (x - min_x) / (max_x - min_x) * plot_w;
    let sy = |y: f64| MARGIN_TOP + plot_h - (y - min_y) / (max_y - min_y) * plot_h;

    let mut svg = String::new();
    let _ = write!(
        svg,
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"##
    );
    let _ = write!(
        svg,
        r##"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"##
    );

    // title and convention note
    let _ = write!(
        svg,
        r##"<text x="{:.1}" y="20" font-family="sans-serif" font-size="15" text-anchor="middle">{}</text>"##,
        WIDTH / 2.0,
        escape(title)
    );
    let _ = write!(
        svg,
        r##"<text x="{:.1}" y="38" font-family="sans-serif" font-size="11" fill="#555" text-anchor="middle">slope {:.4}, intercept {:.4}, n={}, axes: {}</text>"##,
        WIDTH / 2.0,
        fit.slope,
        fit.intercept,
        fit.n_points,
        fit.axis_convention
    );

    // gridlines and ticks at fifths of the unit interval
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let gx = sx(min_x + t * (max_x - min_x));
        let gy = sy(min_y + t * (max_y - min_y));
        let _ = write!(
            svg,
            r##"<line x1="{gx:.1}" y1="{:.1}" x2="{gx:.1}" y2="{:.1}" stroke="#ddd"/>"##,
            MARGIN_TOP,
            MARGIN_TOP + plot_h
        );
        let _ = write!(
            svg,
            r##"<line x1="{:.1}" y1="{gy:.1}" x2="{:.1}" y2="{gy:.1}" stroke="#ddd"/>"##,
            MARGIN_LEFT,
            MARGIN_LEFT + plot_w
        );
        let _ = write!(
            svg,
            r##"<text x="{gx:.1}" y="{:.1}" font-family="sans-serif" font-size="10" text-anchor="middle">{:.2}</text>"##,
            MARGIN_TOP + plot_h + 16.0,
            min_x + t * (max_x - min_x)
        );
        let _ = write!(
            svg,
            r##"<text x="{:.1}" y="{gy:.1}" font-family="sans-serif" font-size="10" text-anchor="end" dominant-baseline="middle">{:.2}</text>"##,
            MARGIN_LEFT - 8.0,
            min_y + t * (max_y - min_y)
        );
    }

    // axes
    let _ = write!(
        svg,
        r##"<rect x="{MARGIN_LEFT}" y="{MARGIN_TOP}" width="{plot_w:.1}" height="{plot_h:.1}" fill="none" stroke="#333"/>"##
    );
    let _ = write!(
        svg,
        r##"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="12" text-anchor="middle">{}</text>"##,
        MARGIN_LEFT + plot_w / 2.0,
        HEIGHT - 18.0,
        escape(fit.axis_convention.x_label())
    );
    let _ = write!(
        svg,
        r##"<text x="18" y="{:.1}" font-family="sans-serif" font-size="12" text-anchor="middle" transform="rotate(-90 18 {:.1})">{}</text>"##,
        MARGIN_TOP + plot_h / 2.0,
        MARGIN_TOP + plot_h / 2.0,
        escape(fit.axis_convention.y_label())
    );

    // fitted line across the x range
    let y0 = fit.intercept + fit.slope * min_x;
    let y1 = fit.intercept + fit.slope * max_x;
    let _ = write!(
        svg,
        r##"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="#d62728" stroke-width="1.5"/>"##,
        sx(min_x),
        sy(y0.clamp(min_y, max_y.max(y0))),
        sx(max_x),
        sy(y1.clamp(min_y.min(y1), max_y.max(y1)))
    );

    // points, with provenance tooltips
    for p in &fit.points {
        let _ = write!(
            svg,
            r##"<circle cx="{:.1}" cy="{:.1}" r="4" fill="#1f77b4" fill-opacity="0.8"><title>{} / {} / {}: ({:.4}, {:.4})</title></circle>"##,
            sx(p.x),
            sy(p.y),
            p.adv_benchmark,
            p.ood_benchmark,
            p.strategy,
            p.x,
            p.y
        );
    }

    svg.push_str("</svg>");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
