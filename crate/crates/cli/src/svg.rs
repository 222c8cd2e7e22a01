//! Self-contained static SVG line charts and heat grids. Data files are
//! the primary artifact; these plots are conveniences for quick looks.

use std::fmt::Write;

const COLORS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf", "#7f7f7f",
];

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

pub struct LineChart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub x_log: bool,
    pub y_log: bool,
    pub series: Vec<Series>,
}

struct Frame {
    w: f64,
    h: f64,
    l: f64,
    r: f64,
    t: f64,
    b: f64,
}

const FRAME: Frame = Frame {
    w: 760.0,
    h: 480.0,
    l: 70.0,
    r: 20.0,
    t: 36.0,
    b: 52.0,
};

impl LineChart {
    pub fn render(&self) -> String {
        let f = &FRAME;
        let mut xs: Vec<f64> = vec![];
        let mut ys: Vec<f64> = vec![];
        for s in &self.series {
            for &(x, y) in &s.points {
                if self.x_log && x <= 0.0 || self.y_log && y <= 0.0 {
                    continue;
                }
                if x.is_finite() && y.is_finite() {
                    xs.push(if self.x_log { x.log10() } else { x });
                    ys.push(if self.y_log { y.log10() } else { y });
                }
            }
        }
        let (x_lo, x_hi) = pad_range(min_max(&xs));
        let (y_lo, y_hi) = pad_range(min_max(&ys));
        let px = |x: f64| f.l + (x - x_lo) / (x_hi - x_lo) * (f.w - f.l - f.r);
        let py = |y: f64| f.h - f.b - (y - y_lo) / (y_hi - y_lo) * (f.h - f.t - f.b);

        let mut svg = String::new();
        let _ = write!(
            svg,
            r##"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" viewBox="0 0 {} {}" font-family="sans-serif" font-size="12">"##,
            f.w, f.h, f.w, f.h
        );
        let _ = write!(
            svg,
            r##"<rect width="{}" height="{}" fill="white"/><text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"##,
            f.w,
            f.h,
            f.w / 2.0,
            esc(&self.title)
        );
        // frame
        let _ = write!(
            svg,
            r##"<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="#333"/>"##,
            f.l,
            f.t,
            f.w - f.l - f.r,
            f.h - f.t - f.b
        );
        // ticks
        for t in ticks(x_lo, x_hi, self.x_log) {
            let x = px(t);
            let _ = write!(
                svg,
                r##"<line x1="{x}" y1="{}" x2="{x}" y2="{}" stroke="#ccc"/><text x="{x}" y="{}" text-anchor="middle">{}</text>"##,
                f.t,
                f.h - f.b,
                f.h - f.b + 16.0,
                tick_label(t, self.x_log)
            );
        }
        for t in ticks(y_lo, y_hi, self.y_log) {
            let y = py(t);
            let _ = write!(
                svg,
                r##"<line x1="{}" y1="{y}" x2="{}" y2="{y}" stroke="#ccc"/><text x="{}" y="{}" text-anchor="end">{}</text>"##,
                f.l,
                f.w - f.r,
                f.l - 6.0,
                y + 4.0,
                tick_label(t, self.y_log)
            );
        }
        // axis labels
        let _ = write!(
            svg,
            r##"<text x="{}" y="{}" text-anchor="middle">{}</text>"##,
            f.w / 2.0,
            f.h - 12.0,
            esc(&self.x_label)
        );
        let _ = write!(
            svg,
            r##"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"##,
            f.h / 2.0,
            f.h / 2.0,
            esc(&self.y_label)
        );
        // series
        for (si, s) in self.series.iter().enumerate() {
            let color = COLORS[si % COLORS.len()];
            let mut path = String::new();
            let mut pen_up = true;
            for &(x, y) in &s.points {
                if (self.x_log && x <= 0.0) || (self.y_log && y <= 0.0) || !x.is_finite() || !y.is_finite() {
                    pen_up = true;
                    continue;
                }
                let xx = px(if self.x_log { x.log10() } else { x });
                let yy = py(if self.y_log { y.log10() } else { y });
                let _ = write!(path, "{}{:.2} {:.2} ", if pen_up { "M" } else { "L" }, xx, yy);
                pen_up = false;
            }
            let _ = write!(
                svg,
                r##"<path d="{}" fill="none" stroke="{color}" stroke-width="1.6"/>"##,
                path.trim_end()
            );
            let ly = f.t + 16.0 + 16.0 * si as f64;
            let _ = write!(
                svg,
                r##"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="3"/><text x="{}" y="{}">{}</text>"##,
                f.l + 8.0,
                f.l + 30.0,
                f.l + 36.0,
                ly + 4.0,
                esc(&s.label)
            );
        }
        svg.push_str("</svg>\n");
        svg
    }
}

/// Grid of colored cells for sweep verdicts.
pub struct HeatGrid {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub x_values: Vec<f64>,
    pub y_values: Vec<f64>,
    /// Row-major over (x index, y index); color per cell.
    pub colors: Vec<String>,
    pub legend: Vec<(String, String)>,
}

impl HeatGrid {
    pub fn render(&self) -> String {
        let f = &FRAME;
        let (nx, ny) = (self.x_values.len(), self.y_values.len());
        let cw = (f.w - f.l - f.r) / nx as f64;
        let ch = (f.h - f.t - f.b) / ny as f64;
        let mut svg = String::new();
        let _ = write!(
            svg,
            r##"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" viewBox="0 0 {} {}" font-family="sans-serif" font-size="12">"##,
            f.w + 160.0,
            f.h,
            f.w + 160.0,
            f.h
        );
        let _ = write!(
            svg,
            r##"<rect width="{}" height="{}" fill="white"/><text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"##,
            f.w + 160.0,
            f.h,
            f.w / 2.0,
            esc(&self.title)
        );
        for i in 0..nx {
            for j in 0..ny {
                let color = &self.colors[i * ny + j];
                let x = f.l + cw * i as f64;
                // y axis increases upward
                let y = f.h - f.b - ch * (j + 1) as f64;
                let _ = write!(
                    svg,
                    r##"<rect x="{x:.2}" y="{y:.2}" width="{cw:.2}" height="{ch:.2}" fill="{color}" stroke="#eee"/>"##
                );
            }
        }
        // edge tick labels
        let step_x = (nx / 4).max(1);
        for i in (0..nx).step_by(step_x) {
            let _ = write!(
                svg,
                r##"<text x="{:.1}" y="{}" text-anchor="middle">{:.2}</text>"##,
                f.l + cw * (i as f64 + 0.5),
                f.h - f.b + 16.0,
                self.x_values[i]
            );
        }
        let step_y = (ny / 4).max(1);
        for j in (0..ny).step_by(step_y) {
            let _ = write!(
                svg,
                r##"<text x="{}" y="{:.1}" text-anchor="end">{:.2}</text>"##,
                f.l - 6.0,
                f.h - f.b - ch * (j as f64 + 0.5) + 4.0,
                self.y_values[j]
            );
        }
        let _ = write!(
            svg,
            r##"<text x="{}" y="{}" text-anchor="middle">{}</text>"##,
            f.w / 2.0,
            f.h - 12.0,
            esc(&self.x_label)
        );
        let _ = write!(
            svg,
            r##"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"##,
            f.h / 2.0,
            f.h / 2.0,
            esc(&self.y_label)
        );
        for (k, (label, color)) in self.legend.iter().enumerate() {
            let ly = f.t + 20.0 + 20.0 * k as f64;
            let _ = write!(
                svg,
                r##"<rect x="{}" y="{}" width="14" height="14" fill="{color}"/><text x="{}" y="{}">{}</text>"##,
                f.w + 10.0,
                ly - 11.0,
                f.w + 30.0,
                ly,
                esc(label)
            );
        }
        svg.push_str("</svg>\n");
        svg
    }
}

fn min_max(v: &[f64]) -> (f64, f64) {
    let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() || !hi.is_finite() {
        (0.0, 1.0)
    } else {
        (lo, hi)
    }
}

fn pad_range((lo, hi): (f64, f64)) -> (f64, f64) {
    if lo == hi {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.04 * (hi - lo);
    (lo - pad, hi + pad)
}

fn ticks(lo: f64, hi: f64, log: bool) -> Vec<f64> {
    if log {
        let a = lo.ceil() as i64;
        let b = hi.floor() as i64;
        let step = (((b - a) / 8).max(1)) as usize;
        return (a..=b).step_by(step).map(|e| e as f64).collect();
    }
    let span = hi - lo;
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| span / s <= 6.0)
        .unwrap_or(mag * 10.0);
    let first = (lo / step).ceil() * step;
    let mut out = vec![];
    let mut t = first;
    while t <= hi + 1e-12 * span {
        out.push(t);
        t += step;
    }
    out
}

fn tick_label(t: f64, log: bool) -> String {
    if log {
        format!("1e{}", t.round() as i64)
    } else if t.abs() >= 1e4 || (t != 0.0 && t.abs() < 1e-3) {
        format!("{t:.1e}")
    } else {
        let s = format!("{t:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
