//! Minimal SVG figures. Output depends only on the inputs, so identical data
//! gives identical bytes.

use std::fmt::Write as _;

use cvscir::stats::FiveNumber;

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"];

pub fn color(i: usize) -> &'static str {
    PALETTE[i % PALETTE.len()]
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Round limits with a little headroom; a flat range is widened.
fn padded_range(lo: f64, hi: f64) -> (f64, f64) {
    if hi.partial_cmp(&lo) != Some(std::cmp::Ordering::Greater) {
        let d = if lo == 0.0 { 1.0 } else { lo.abs() * 0.1 };
        return (lo - d, hi + d);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn ticks(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    (0..=count).map(|i| lo + (hi - lo) * i as f64 / count as f64).collect()
}

fn fmt_tick(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-3..1e5).contains(&a) {
        format!("{v:.2e}")
    } else if a >= 100.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.3}")
    }
}

struct Frame {
    x0: f64,
    y0: f64,
    w: f64,
    h: f64,
    ylo: f64,
    yhi: f64,
}

impl Frame {
    fn y(&self, v: f64) -> f64 {
        self.y0 + self.h * (1.0 - (v - self.ylo) / (self.yhi - self.ylo))
    }

    fn axes(&self, out: &mut String, title: &str) {
        let _ = writeln!(
            out,
            r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="black"/>"#,
            self.x0, self.y0, self.w, self.h
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="13">{}</text>"#,
            self.x0 + self.w / 2.0,
            self.y0 - 8.0,
            escape(title)
        );
        for t in ticks(self.ylo, self.yhi, 4) {
            let y = self.y(t);
            let _ = writeln!(
                out,
                r#"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end" font-size="10">{}</text>"#,
                self.x0 - 4.0,
                self.x0,
                self.x0 - 6.0,
                y + 3.0,
                fmt_tick(t)
            );
        }
    }
}

fn header(width: f64, height: f64) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" viewBox=\"0 0 {width:.0} {height:.0}\" font-family=\"sans-serif\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    )
}

/// One panel per entry, each with a box per labelled five-number summary.
pub fn boxplot(panels: &[(String, Vec<(String, FiveNumber)>)]) -> String {
    let (pw, ph) = (260.0, 300.0);
    let mut out = header(pw * panels.len().max(1) as f64, ph + 90.0);
    for (p, (title, boxes)) in panels.iter().enumerate() {
        let lo = boxes.iter().map(|(_, f)| f.min).fold(f64::INFINITY, f64::min);
        let hi = boxes.iter().map(|(_, f)| f.max).fold(f64::NEG_INFINITY, f64::max);
        let (ylo, yhi) = padded_range(lo, hi);
        let frame = Frame { x0: p as f64 * pw + 70.0, y0: 30.0, w: pw - 90.0, h: ph - 20.0, ylo, yhi };
        frame.axes(&mut out, title);
        let slot = frame.w / boxes.len().max(1) as f64;
        for (i, (label, f)) in boxes.iter().enumerate() {
            let cx = frame.x0 + slot * (i as f64 + 0.5);
            let half = slot * 0.3;
            let c = color(i);
            let _ = writeln!(
                out,
                r#"<line x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="{c}"/>"#,
                frame.y(f.min),
                frame.y(f.max)
            );
            let _ = writeln!(
                out,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="white" stroke="{c}"/>"#,
                cx - half,
                frame.y(f.q3),
                2.0 * half,
                (frame.y(f.q1) - frame.y(f.q3)).max(0.5)
            );
            let _ = writeln!(
                out,
                r#"<line x1="{:.2}" y1="{m:.2}" x2="{:.2}" y2="{m:.2}" stroke="{c}" stroke-width="2"/>"#,
                cx - half,
                cx + half,
                m = frame.y(f.median)
            );
            let ly = frame.y0 + frame.h + 14.0;
            let _ = writeln!(
                out,
                r#"<text x="{cx:.2}" y="{ly:.2}" font-size="10" text-anchor="end" transform="rotate(-40 {cx:.2} {ly:.2})">{}</text>"#,
                escape(label)
            );
        }
    }
    out.push_str("</svg>\n");
    out
}

pub struct Series {
    pub name: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// Optional (lower, upper) envelope drawn as a shaded band.
    pub band: Option<(Vec<f64>, Vec<f64>)>,
}

fn polyline(frame: &Frame, xlo: f64, xhi: f64, x: &[f64], y: &[f64]) -> String {
    x.iter()
        .zip(y)
        .map(|(&a, &b)| format!("{:.2},{:.2}", frame.x0 + frame.w * (a - xlo) / (xhi - xlo), frame.y(b)))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Line plot with optional bands and a dashed horizontal reference line.
pub fn line_plot(title: &str, x_label: &str, series: &[Series], reference: Option<(f64, &str)>) -> String {
    let mut values: Vec<f64> = series.iter().flat_map(|s| s.y.iter().copied()).collect();
    for s in series {
        if let Some((lo, hi)) = &s.band {
            values.extend(lo.iter().chain(hi));
        }
    }
    if let Some((r, _)) = reference {
        values.push(r);
    }
    values.retain(|v| v.is_finite());
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (ylo, yhi) = if values.is_empty() { (0.0, 1.0) } else { padded_range(lo, hi) };
    let xs: Vec<f64> = series.iter().flat_map(|s| s.x.iter().copied()).collect();
    let xlo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let xhi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (xlo, xhi) = if xs.is_empty() || xhi <= xlo { (xlo.min(0.0), xlo.max(0.0) + 1.0) } else { (xlo, xhi) };

    let frame = Frame { x0: 80.0, y0: 40.0, w: 560.0, h: 340.0, ylo, yhi };
    let mut out = header(820.0, 440.0);
    frame.axes(&mut out, title);
    for t in ticks(xlo, xhi, 5) {
        let x = frame.x0 + frame.w * (t - xlo) / (xhi - xlo);
        let yb = frame.y0 + frame.h;
        let _ = writeln!(
            out,
            r#"<line x1="{x:.2}" y1="{yb:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/><text x="{x:.2}" y="{:.2}" text-anchor="middle" font-size="10">{}</text>"#,
            yb + 4.0,
            yb + 16.0,
            fmt_tick(t)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="12">{}</text>"#,
        frame.x0 + frame.w / 2.0,
        frame.y0 + frame.h + 34.0,
        escape(x_label)
    );
    for (i, s) in series.iter().enumerate() {
        let c = color(i);
        if let Some((lo, hi)) = &s.band {
            let upper = polyline(&frame, xlo, xhi, &s.x, hi);
            let rx: Vec<f64> = s.x.iter().rev().copied().collect();
            let rl: Vec<f64> = lo.iter().rev().copied().collect();
            let lower = polyline(&frame, xlo, xhi, &rx, &rl);
            let _ = writeln!(out, r#"<polygon points="{upper} {lower}" fill="{c}" fill-opacity="0.2" stroke="none"/>"#);
        }
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{c}" stroke-width="1.5"/>"#,
            polyline(&frame, xlo, xhi, &s.x, &s.y)
        );
        let ly = frame.y0 + 14.0 + 18.0 * i as f64;
        let _ = writeln!(
            out,
            r#"<line x1="660" y1="{ly:.2}" x2="680" y2="{ly:.2}" stroke="{c}" stroke-width="2"/><text x="686" y="{:.2}" font-size="11">{}</text>"#,
            ly + 4.0,
            escape(&s.name)
        );
    }
    if let Some((r, label)) = reference {
        let y = frame.y(r);
        let _ = writeln!(
            out,
            r#"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="gray" stroke-dasharray="5,4"/><text x="{:.2}" y="{:.2}" font-size="10" fill="gray">{}</text>"#,
            frame.x0,
            frame.x0 + frame.w,
            frame.x0 + 4.0,
            y - 4.0,
            escape(label)
        );
    }
    out.push_str("</svg>\n");
    out
}
