use std::fmt::Write as _;
use std::path::Path;

use crate::aero::ClassGrid;
use crate::geometry::{Point2, Profile};
use crate::{Error, Result};

use super::experiments::{ConditionalReport, ScatterPoint};

pub const WIDTH: f64 = 800.0;
pub const HEIGHT: f64 = 400.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 130.0;
const MARGIN_T: f64 = 36.0;
const MARGIN_B: f64 = 48.0;
const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    /// Outlines on equal axes, one vertex per profile point.
    Profiles,
    /// Markers; hollow markers for series flagged as misses.
    Scatter,
    /// Line series.
    Curves,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<Point2>,
    pub hollow: bool,
    /// Palette index; defaults to the series position.
    pub color: Option<usize>,
}

impl Series {
    pub fn new(name: impl Into<String>, points: Vec<Point2>) -> Self {
        Self {
            name: name.into(),
            points,
            hollow: false,
            color: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Figure {
    pub kind: PlotKind,
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    /// Reference lines, e.g. class-grid edges.
    pub x_lines: Vec<f64>,
    pub y_lines: Vec<f64>,
    pub log_y: bool,
}

impl Figure {
    fn empty(kind: PlotKind, title: &str, x_label: &str, y_label: &str) -> Self {
        Self {
            kind,
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            series: Vec::new(),
            x_lines: Vec::new(),
            y_lines: Vec::new(),
            log_y: false,
        }
    }

    pub fn profiles<'a>(title: &str, profiles: impl IntoIterator<Item = (String, &'a Profile)>) -> Self {
        let mut f = Self::empty(PlotKind::Profiles, title, "x / c", "y / c");
        f.series = profiles
            .into_iter()
            .map(|(n, p)| Series::new(n, p.points.clone()))
            .collect();
        f
    }

    pub fn curves(title: &str, x_label: &str, y_label: &str, series: Vec<Series>, log_y: bool) -> Self {
        let mut f = Self::empty(PlotKind::Curves, title, x_label, y_label);
        f.series = series;
        f.log_y = log_y;
        f
    }

    pub fn scatter(title: &str, x_label: &str, y_label: &str, series: Vec<Series>) -> Self {
        let mut f = Self::empty(PlotKind::Scatter, title, x_label, y_label);
        f.series = series;
        f
    }

    /// CD-CL scatter of a conditional run: one colour per target class,
    /// filled when the sample lands in its class, hollow otherwise, with
    /// the class grid drawn behind.
    pub fn conditional(report: &ConditionalReport, grid: &ClassGrid) -> Self {
        Self::class_scatter(
            &format!("conditional samples, omega = {}", report.omega),
            &report.points,
            Some(grid),
        )
    }

    pub fn class_scatter(title: &str, points: &[ScatterPoint], grid: Option<&ClassGrid>) -> Self {
        let classes = points.iter().map(|p| p.target + 1).max().unwrap_or(0);
        let mut series = Vec::new();
        for c in 0..classes {
            for hit in [true, false] {
                let pts: Vec<Point2> = points
                    .iter()
                    .filter(|p| p.target == c && p.hit == hit)
                    .map(|p| Point2::new(p.cd, p.cl))
                    .collect();
                if !pts.is_empty() {
                    series.push(Series {
                        name: format!("class {c}{}", if hit { "" } else { " miss" }),
                        points: pts,
                        hollow: !hit,
                        color: Some(c),
                    });
                }
            }
        }
        let mut f = Self::scatter(title, "CD", "CL", series);
        if let Some(g) = grid {
            f.x_lines = g.cd_edges.clone();
            f.y_lines = g.cl_edges.clone();
        }
        f
    }

    fn is_empty(&self) -> bool {
        self.series.iter().all(|s| s.points.is_empty())
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Round step in {1, 2, 5} x 10^k giving about `n` ticks over `span`.
fn tick_step(span: f64, n: f64) -> f64 {
    let raw = span / n;
    let mag = 10f64.powf(raw.log10().floor());
    let r = raw / mag;
    mag * if r < 1.5 {
        1.0
    } else if r < 3.5 {
        2.0
    } else if r < 7.5 {
        5.0
    } else {
        10.0
    }
}

fn fmt_tick(v: f64, step: f64) -> String {
    let digits = (-step.log10().floor()).max(0.0) as usize;
    let s = format!("{v:.digits$}");
    if s.starts_with('-') && s[1..].chars().all(|c| c == '0' || c == '.') {
        s[1..].to_string()
    } else {
        s
    }
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
    left: f64,
    top: f64,
    w: f64,
    h: f64,
    log_y: bool,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        self.left + (x - self.x0) / (self.x1 - self.x0) * self.w
    }

    fn py(&self, y: f64) -> f64 {
        let y = if self.log_y { y.log10() } else { y };
        self.top + (self.y1 - y) / (self.y1 - self.y0) * self.h
    }
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    let span = hi - lo;
    let pad = if span > 0.0 {
        0.05 * span
    } else {
        0.5 * lo.abs().max(1.0)
    };
    (lo - pad, hi + pad)
}

fn frame(fig: &Figure) -> Result<Frame> {
    let pts = fig.series.iter().flat_map(|s| &s.points);
    let (mut xl, mut xh, mut yl, mut yh) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in pts {
        let y = if fig.log_y { p.y.log10() } else { p.y };
        if !p.x.is_finite() || !y.is_finite() {
            return Err(Error::domain("plot data must be finite (and positive on a log axis)"));
        }
        xl = xl.min(p.x);
        xh = xh.max(p.x);
        yl = yl.min(y);
        yh = yh.max(y);
    }
    for &x in &fig.x_lines {
        xl = xl.min(x);
        xh = xh.max(x);
    }
    for &y in &fig.y_lines {
        yl = yl.min(y);
        yh = yh.max(y);
    }
    let (left, top) = (MARGIN_L, MARGIN_T);
    let (w, h) = (WIDTH - MARGIN_L - MARGIN_R, HEIGHT - MARGIN_T - MARGIN_B);
    let (mut x0, mut x1) = padded(xl, xh);
    let (mut y0, mut y1) = padded(yl, yh);
    if fig.kind == PlotKind::Profiles {
        let scale = (w / (x1 - x0)).min(h / (y1 - y0));
        let (cx, cy) = (0.5 * (x0 + x1), 0.5 * (y0 + y1));
        x0 = cx - 0.5 * w / scale;
        x1 = cx + 0.5 * w / scale;
        y0 = cy - 0.5 * h / scale;
        y1 = cy + 0.5 * h / scale;
    }
    Ok(Frame {
        x0,
        x1,
        y0,
        y1,
        left,
        top,
        w,
        h,
        log_y: fig.log_y,
    })
}

fn series_color(i: usize, s: &Series) -> &'static str {
    PALETTE[s.color.unwrap_or(i) % PALETTE.len()]
}

fn points_attr(fr: &Frame, pts: &[Point2]) -> String {
    let mut s = String::new();
    for (i, p) in pts.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        let _ = write!(s, "{:.2},{:.2}", fr.px(p.x), fr.py(p.y));
    }
    s
}

/// Renders a figure as a standalone SVG document on the fixed canvas.
pub fn render_svg(fig: &Figure) -> Result<String> {
    if fig.is_empty() {
        return Err(Error::domain("nothing to plot"));
    }
    let fr = frame(fig)?;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        fr.left + fr.w / 2.0,
        escape(&fig.title)
    );

    // Axes, ticks and labels.
    let _ = writeln!(s, r##"<g class="axes" stroke="#333" fill="none">"##);
    let _ = writeln!(
        s,
        r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}"/>"#,
        fr.left, fr.top, fr.w, fr.h
    );
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, r##"<g class="ticks" fill="#333">"##);
    let xs = tick_step(fr.x1 - fr.x0, 6.0);
    let mut v = (fr.x0 / xs).ceil() * xs;
    while v <= fr.x1 + 1e-12 {
        let x = fr.px(v);
        let yb = fr.top + fr.h;
        let _ = writeln!(
            s,
            r##"<line x1="{x:.2}" y1="{yb:.2}" x2="{x:.2}" y2="{:.2}" stroke="#333"/>"##,
            yb + 4.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            yb + 16.0,
            fmt_tick(v, xs)
        );
        v += xs;
    }
    let ys = tick_step(fr.y1 - fr.y0, 5.0);
    let mut v = (fr.y0 / ys).ceil() * ys;
    while v <= fr.y1 + 1e-12 {
        let y = fr.top + (fr.y1 - v) / (fr.y1 - fr.y0) * fr.h;
        let label = if fig.log_y {
            format!("1e{}", fmt_tick(v, ys))
        } else {
            fmt_tick(v, ys)
        };
        let _ = writeln!(
            s,
            r##"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#333"/>"##,
            fr.left - 4.0,
            fr.left
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{label}</text>"#,
            fr.left - 7.0,
            y + 4.0
        );
        v += ys;
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        fr.left + fr.w / 2.0,
        HEIGHT - 10.0,
        escape(&fig.x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
        fr.top + fr.h / 2.0,
        fr.top + fr.h / 2.0,
        escape(&fig.y_label)
    );

    if !fig.x_lines.is_empty() || !fig.y_lines.is_empty() {
        let _ = writeln!(s, r##"<g class="grid" stroke="#bbb" stroke-dasharray="4 3">"##);
        for &x in &fig.x_lines {
            let x = fr.px(x);
            let _ = writeln!(
                s,
                r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}"/>"#,
                fr.top,
                fr.top + fr.h
            );
        }
        for &y in &fig.y_lines {
            let y = fr.py(y);
            let _ = writeln!(
                s,
                r#"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}"/>"#,
                fr.left,
                fr.left + fr.w
            );
        }
        let _ = writeln!(s, "</g>");
    }

    let _ = writeln!(s, r#"<g class="data" fill="none" stroke-width="1.2">"#);
    for (i, series) in fig.series.iter().enumerate() {
        let color = series_color(i, series);
        match fig.kind {
            PlotKind::Profiles => {
                let _ = writeln!(
                    s,
                    r#"<polyline stroke="{color}" points="{}"/>"#,
                    points_attr(&fr, &series.points)
                );
            }
            PlotKind::Curves => {
                let _ = writeln!(
                    s,
                    r#"<polyline stroke="{color}" points="{}"/>"#,
                    points_attr(&fr, &series.points)
                );
            }
            PlotKind::Scatter => {
                let fill = if series.hollow { "none" } else { color };
                let _ = writeln!(s, r#"<g stroke="{color}" fill="{fill}">"#);
                for p in &series.points {
                    let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="2"/>"#, fr.px(p.x), fr.py(p.y));
                }
                let _ = writeln!(s, "</g>");
            }
        }
    }
    let _ = writeln!(s, "</g>");

    // Legend, capped so large scatter plots stay readable.
    let _ = writeln!(s, r#"<g class="legend">"#);
    let lx = WIDTH - MARGIN_R + 12.0;
    for (i, series) in fig.series.iter().take(20).enumerate() {
        let y = MARGIN_T + 8.0 + 16.0 * i as f64;
        let color = series_color(i, series);
        let _ = writeln!(
            s,
            r#"<rect x="{lx:.2}" y="{:.2}" width="10" height="3" fill="{color}"/>"#,
            y - 4.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{y:.2}">{}</text>"#,
            lx + 14.0,
            escape(&series.name)
        );
    }
    let _ = writeln!(s, "</g>");
    s.push_str("</svg>\n");
    Ok(s)
}

/// Renders and writes a figure. Nothing is written when rendering fails.
pub fn plot_svg(fig: &Figure, path: &Path) -> Result<()> {
    let svg = render_svg(fig)?;
    std::fs::write(path, svg).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{naca4_profile, DEFAULT_PROFILE_LEN};

    fn naca0012() -> Profile {
        naca4_profile(0.0, 0.0, 0.12, DEFAULT_PROFILE_LEN).unwrap()
    }

    #[test]
    fn profile_outline_keeps_every_point() {
        let p = naca0012();
        let svg = render_svg(&Figure::profiles("NACA 0012", [("0012".to_string(), &p)])).unwrap();
        let start = svg.find("<polyline").unwrap();
        let attr = &svg[start..];
        let pts = &attr[attr.find("points=\"").unwrap() + 8..];
        let pts = &pts[..pts.find('"').unwrap()];
        assert_eq!(pts.split(' ').count(), p.len());
        assert!(svg.starts_with(r#"<svg xmlns="http://www.w3.org/2000/svg" width="800" height="400""#));
        assert!(svg.contains("x / c") && svg.contains("y / c"));
    }

    #[test]
    fn rendering_is_deterministic() {
        let p = naca0012();
        let fig = Figure::profiles("a", [("a".to_string(), &p)]);
        assert_eq!(render_svg(&fig).unwrap(), render_svg(&fig.clone()).unwrap());
        let curves = Figure::curves(
            "loss",
            "epoch",
            "loss",
            vec![Series::new(
                "train",
                (1..20).map(|i| Point2::new(i as f64, 1.0 / i as f64)).collect(),
            )],
            true,
        );
        assert_eq!(render_svg(&curves).unwrap(), render_svg(&curves).unwrap());
    }

    #[test]
    fn empty_input_writes_nothing() {
        let dir = std::env::temp_dir().join(format!("foilgen-plot-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("empty.svg");
        let fig = Figure::scatter("x", "a", "b", vec![Series::new("s", vec![])]);
        assert!(matches!(plot_svg(&fig, &path), Err(Error::Domain(_))));
        assert!(!path.exists());
        let bad = dir.join("missing").join("x.svg");
        let fig = Figure::scatter("x", "a", "b", vec![Series::new("s", vec![Point2::new(0.0, 1.0)])]);
        assert!(matches!(plot_svg(&fig, &bad), Err(Error::Io { .. })));
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn log_axis_rejects_non_positive_values() {
        let fig = Figure::curves("l", "x", "y", vec![Series::new("s", vec![Point2::new(0.0, 0.0)])], true);
        assert!(render_svg(&fig).is_err());
    }

    #[test]
    fn ticks_are_round() {
        assert_eq!(tick_step(1.0, 5.0), 0.2);
        assert_eq!(tick_step(0.003, 6.0), 0.0005);
        assert_eq!(fmt_tick(-0.0, 0.1), "0.0");
    }
}
