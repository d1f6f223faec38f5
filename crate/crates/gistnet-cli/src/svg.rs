//! Minimal self-contained SVG line and scatter plots; no external renderer.

use gistnet_core::eval::CurveSeries;
use std::fmt::Write;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 56.0;

struct Frame {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Frame {
    fn from_ranges(xs: impl Iterator<Item = f64>, ys: impl Iterator<Item = f64>) -> Frame {
        let mut f = Frame {
            x_min: f64::INFINITY,
            x_max: f64::NEG_INFINITY,
            y_min: f64::INFINITY,
            y_max: f64::NEG_INFINITY,
        };
        for x in xs {
            f.x_min = f.x_min.min(x);
            f.x_max = f.x_max.max(x);
        }
        for y in ys {
            f.y_min = f.y_min.min(y);
            f.y_max = f.y_max.max(y);
        }
        if f.x_min == f.x_max {
            f.x_min -= 0.5;
            f.x_max += 0.5;
        }
        if f.y_min == f.y_max {
            f.y_min -= 0.5;
            f.y_max += 0.5;
        }
        f
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x_min) / (self.x_max - self.x_min) * (WIDTH - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - MARGIN - (y - self.y_min) / (self.y_max - self.y_min) * (HEIGHT - 2.0 * MARGIN)
    }
}

fn header(title: &str) -> String {
    format!(
        concat!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" ",
            "viewBox=\"0 0 {w} {h}\">\n",
            "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n",
            "<text x=\"{tx}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" ",
            "font-size=\"16\">{title}</text>\n"
        ),
        w = WIDTH,
        h = HEIGHT,
        tx = WIDTH / 2.0,
        title = title
    )
}

fn axes(out: &mut String, frame: &Frame, x_label: &str, y_label: &str) {
    let x0 = MARGIN;
    let x1 = WIDTH - MARGIN;
    let y0 = HEIGHT - MARGIN;
    let y1 = MARGIN;
    let _ = write!(
        out,
        concat!(
            "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>\n",
            "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"black\"/>\n",
            "<text x=\"{x0}\" y=\"{ylab}\" font-family=\"sans-serif\" font-size=\"11\" ",
            "text-anchor=\"start\">{xmin:.3}</text>\n",
            "<text x=\"{x1}\" y=\"{ylab}\" font-family=\"sans-serif\" font-size=\"11\" ",
            "text-anchor=\"end\">{xmax:.3}</text>\n",
            "<text x=\"{xt}\" y=\"{ylab2}\" font-family=\"sans-serif\" font-size=\"12\" ",
            "text-anchor=\"middle\">{x_label}</text>\n",
            "<text x=\"{xnum}\" y=\"{y0}\" font-family=\"sans-serif\" font-size=\"11\" ",
            "text-anchor=\"end\">{ymin:.3}</text>\n",
            "<text x=\"{xnum}\" y=\"{y1v}\" font-family=\"sans-serif\" font-size=\"11\" ",
            "text-anchor=\"end\">{ymax:.3}</text>\n",
            "<text x=\"16\" y=\"{yt}\" font-family=\"sans-serif\" font-size=\"12\" ",
            "text-anchor=\"middle\" transform=\"rotate(-90 16 {yt})\">{y_label}</text>\n"
        ),
        x0 = x0,
        x1 = x1,
        y0 = y0,
        y1 = y1,
        y1v = y1 + 4.0,
        ylab = y0 + 18.0,
        ylab2 = y0 + 36.0,
        xt = (x0 + x1) / 2.0,
        yt = (y0 + y1) / 2.0,
        xnum = x0 - 6.0,
        xmin = frame.x_min,
        xmax = frame.x_max,
        ymin = frame.y_min,
        ymax = frame.y_max,
        x_label = x_label,
        y_label = y_label,
    );
}

/// Line plot of one or more series sharing axes. Colors cycle through a
/// fixed palette; a legend names each series.
pub fn line_plot(title: &str, series: &[(&str, &CurveSeries)]) -> String {
    const COLORS: [&str; 4] = ["#1f77b4", "#2ca02c", "#d62728", "#9467bd"];
    let frame = Frame::from_ranges(
        series.iter().flat_map(|(_, s)| s.points.iter().map(|p| p.x)),
        series.iter().flat_map(|(_, s)| s.points.iter().map(|p| p.y)),
    );
    let mut out = header(title);
    let (x_label, y_label) = series
        .first()
        .map(|(_, s)| (s.x_label.as_str(), s.y_label.as_str()))
        .unwrap_or(("x", "y"));
    axes(&mut out, &frame, x_label, y_label);
    for (i, (name, s)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .map(|p| format!("{:.2},{:.2}", frame.px(p.x), frame.py(p.y)))
            .collect();
        let _ = write!(
            out,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>\n",
            pts.join(" ")
        );
        let _ = write!(
            out,
            concat!(
                "<rect x=\"{lx}\" y=\"{ly}\" width=\"12\" height=\"12\" fill=\"{color}\"/>\n",
                "<text x=\"{tx}\" y=\"{ty}\" font-family=\"sans-serif\" font-size=\"12\">{name}</text>\n"
            ),
            lx = WIDTH - MARGIN - 150.0,
            ly = MARGIN + 18.0 * i as f64,
            tx = WIDTH - MARGIN - 132.0,
            ty = MARGIN + 18.0 * i as f64 + 10.0,
            color = color,
            name = name
        );
    }
    out.push_str("</svg>\n");
    out
}

/// One scatter point: 2D position plus a binary class for the fill.
pub struct ScatterPoint {
    pub x: f64,
    pub y: f64,
    /// 0 renders black, 1 renders white (gray stroke keeps it visible).
    pub class: u8,
}

/// Scatter plot with class-coded fills (black/white dots).
pub fn scatter_plot(title: &str, points: &[ScatterPoint], x_label: &str, y_label: &str) -> String {
    let frame = Frame::from_ranges(points.iter().map(|p| p.x), points.iter().map(|p| p.y));
    let mut out = header(title);
    axes(&mut out, &frame, x_label, y_label);
    for p in points {
        let fill = if p.class == 0 { "black" } else { "white" };
        let _ = write!(
            out,
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{fill}\" stroke=\"#555\" stroke-width=\"0.6\"/>\n",
            frame.px(p.x),
            frame.py(p.y),
        );
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use gistnet_core::eval::CurvePoint;

    fn series() -> CurveSeries {
        CurveSeries {
            x_label: "x".into(),
            y_label: "y".into(),
            points: (0..10)
                .map(|i| CurvePoint {
                    x: i as f64,
                    y: (i * i) as f64,
                    n: 5,
                })
                .collect(),
        }
    }

    #[test]
    fn line_plot_is_self_contained_svg() {
        let s = series();
        let svg = line_plot("t", &[("curve", &s)]);
        assert!(svg.starts_with("<svg xmlns="));
        assert!(svg.ends_with("</svg>\n"));
        assert!(svg.contains("<polyline"));
    }

    #[test]
    fn scatter_has_one_circle_per_point() {
        let pts: Vec<ScatterPoint> = (0..25)
            .map(|i| ScatterPoint {
                x: i as f64,
                y: (25 - i) as f64,
                class: (i % 2) as u8,
            })
            .collect();
        let svg = scatter_plot("s", &pts, "a", "b");
        assert_eq!(svg.matches("<circle").count(), 25);
        assert!(svg.contains("fill=\"black\""));
        assert!(svg.contains("fill=\"white\""));
    }

    #[test]
    fn degenerate_ranges_do_not_divide_by_zero() {
        let s = CurveSeries {
            x_label: "x".into(),
            y_label: "y".into(),
            points: vec![CurvePoint { x: 1.0, y: 2.0, n: 1 }],
        };
        let svg = line_plot("t", &[("p", &s)]);
        assert!(!svg.contains("NaN"));
    }
}
