//! Minimal SVG figures: bars with whiskers, step curves, shaded bands, forest plots.

use std::fmt::Write as _;

use crate::error::CliResult;
use crate::tables::Table;

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

struct Canvas {
    svg: String,
    x: (f64, f64),
    y: (f64, f64),
}

impl Canvas {
    fn new(title: &str, x: (f64, f64), y: (f64, f64)) -> Self {
        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
            W / 2.0,
            escape(title)
        );
        let (x, y) = (pad(x), pad(y));
        Self { svg, x, y }
    }

    fn px(&self, v: f64) -> f64 {
        LEFT + (v - self.x.0) / (self.x.1 - self.x.0) * (W - LEFT - RIGHT)
    }

    fn py(&self, v: f64) -> f64 {
        H - BOTTOM - (v - self.y.0) / (self.y.1 - self.y.0) * (H - TOP - BOTTOM)
    }

    fn line(&mut self, a: (f64, f64), b: (f64, f64), stroke: &str, extra: &str) {
        let _ = writeln!(
            self.svg,
            r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{stroke}" {extra}/>"#,
            self.px(a.0),
            self.py(a.1),
            self.px(b.0),
            self.py(b.1)
        );
    }

    fn polyline(&mut self, pts: &[(f64, f64)], stroke: &str) {
        let p: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", self.px(x), self.py(y))).collect();
        let _ = writeln!(
            self.svg,
            r#"<polyline points="{}" fill="none" stroke="{stroke}" stroke-width="1.8"/>"#,
            p.join(" ")
        );
    }

    fn polygon(&mut self, pts: &[(f64, f64)], fill: &str, opacity: f64) {
        let p: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", self.px(x), self.py(y))).collect();
        let _ = writeln!(
            self.svg,
            r#"<polygon points="{}" fill="{fill}" fill-opacity="{opacity}" stroke="none"/>"#,
            p.join(" ")
        );
    }

    fn text(&mut self, x: f64, y: f64, s: &str, anchor: &str) {
        let _ = writeln!(
            self.svg,
            r#"<text x="{x:.2}" y="{y:.2}" text-anchor="{anchor}">{}</text>"#,
            escape(s)
        );
    }

    fn axes(&mut self, xlabel: &str, ylabel: &str, x_ticks: bool) {
        let (x0, x1, y0, y1) = (self.px(self.x.0), self.px(self.x.1), self.py(self.y.0), self.py(self.y.1));
        let _ = writeln!(
            self.svg,
            r#"<path d="M{x0:.2},{y1:.2} L{x0:.2},{y0:.2} L{x1:.2},{y0:.2}" fill="none" stroke="black"/>"#
        );
        for v in ticks(self.y) {
            let y = self.py(v);
            let _ = writeln!(self.svg, r#"<line x1="{:.2}" y1="{y:.2}" x2="{x0:.2}" y2="{y:.2}" stroke="black"/>"#, x0 - 4.0);
            self.text(x0 - 7.0, y + 4.0, &fmt_tick(v), "end");
        }
        if x_ticks {
            for v in ticks(self.x) {
                let x = self.px(v);
                let _ = writeln!(self.svg, r#"<line x1="{x:.2}" y1="{y0:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#, y0 + 4.0);
                self.text(x, y0 + 18.0, &fmt_tick(v), "middle");
            }
        }
        self.text((x0 + x1) / 2.0, H - 15.0, xlabel, "middle");
        let _ = writeln!(
            self.svg,
            r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
            (y0 + y1) / 2.0,
            (y0 + y1) / 2.0,
            escape(ylabel)
        );
    }

    fn legend(&mut self, names: &[String]) {
        for (i, n) in names.iter().enumerate() {
            let y = TOP + 10.0 + 16.0 * i as f64;
            let x = W - RIGHT - 150.0;
            let _ = writeln!(
                self.svg,
                r#"<rect x="{x:.2}" y="{:.2}" width="12" height="12" fill="{}"/>"#,
                y - 10.0,
                PALETTE[i % PALETTE.len()]
            );
            self.text(x + 18.0, y, n, "start");
        }
    }

    fn finish(mut self) -> String {
        self.svg.push_str("</svg>\n");
        self.svg
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn pad((lo, hi): (f64, f64)) -> (f64, f64) {
    if (hi - lo).abs() < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn ticks((lo, hi): (f64, f64)) -> Vec<f64> {
    let raw = (hi - lo) / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(raw);
    let mut v = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while v <= hi + step * 1e-9 {
        out.push(if v.abs() < step * 1e-9 { 0.0 } else { v });
        v += step;
    }
    out
}

fn fmt_tick(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.into() }
}

fn extent(vals: impl Iterator<Item = f64>, include_zero: bool) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in vals.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if include_zero {
        lo = lo.min(0.0);
        hi = hi.max(0.0);
    }
    let m = (hi - lo) * 0.08;
    (lo - m, hi + m)
}

/// Metric deltas (B − A) as bars with 95% CI whiskers.
pub fn metric_bars(t: &Table) -> CliResult<String> {
    let (m, d, lo, hi) = (t.col("metric")?, t.col("delta")?, t.col("ci_low")?, t.col("ci_high")?);
    let n = t.rows.len();
    let mut rows = Vec::new();
    for i in 0..n {
        rows.push((t.rows[i][m].clone(), t.f64_at(i, d)?, t.f64_at(i, lo)?, t.f64_at(i, hi)?));
    }
    let y = extent(rows.iter().flat_map(|r| [r.1, r.2, r.3]), true);
    let mut c = Canvas::new("Metric differences (B - A) with 95% CI", (0.0, n.max(1) as f64), y);
    c.axes("", "delta", false);
    c.line((0.0, 0.0), (n as f64, 0.0), "#555", r#"stroke-dasharray="4 3""#);
    for (i, (name, delta, l, h)) in rows.iter().enumerate() {
        let x = i as f64 + 0.5;
        let (a, b) = (c.py(delta.max(0.0)), c.py(delta.min(0.0)));
        let (x0, x1) = (c.px(x - 0.3), c.px(x + 0.3));
        let _ = writeln!(
            c.svg,
            r#"<rect x="{x0:.2}" y="{a:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
            x1 - x0,
            (b - a).max(0.5),
            PALETTE[0]
        );
        c.line((x, *l), (x, *h), "black", r#"stroke-width="1.5""#);
        c.line((x - 0.1, *l), (x + 0.1, *l), "black", "");
        c.line((x - 0.1, *h), (x + 0.1, *h), "black", "");
        let label_y = H - BOTTOM + 16.0;
        c.text(c.px(x), label_y, name, "middle");
    }
    Ok(c.finish())
}

/// ROC step curves per model with the chance diagonal.
pub fn roc(t: &Table) -> CliResult<String> {
    let (m, f, tp) = (t.col("model")?, t.col("fpr")?, t.col("tpr")?);
    let mut models: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    for i in 0..t.rows.len() {
        let name = &t.rows[i][m];
        let pt = (t.f64_at(i, f)?, t.f64_at(i, tp)?);
        match models.iter_mut().find(|(n, _)| n == name) {
            Some((_, pts)) => pts.push(pt),
            None => models.push((name.clone(), vec![pt])),
        }
    }
    let mut c = Canvas::new("ROC", (0.0, 1.0), (0.0, 1.0));
    c.axes("false positive rate", "true positive rate", true);
    c.line((0.0, 0.0), (1.0, 1.0), "#999", r#"stroke-dasharray="4 3""#);
    for (k, (_, pts)) in models.iter().enumerate() {
        c.polyline(pts, PALETTE[k % PALETTE.len()]);
    }
    c.legend(&models.iter().map(|m| m.0.clone()).collect::<Vec<_>>());
    Ok(c.finish())
}

/// Precision difference across recall with its bootstrap band.
pub fn pr_band(t: &Table) -> CliResult<String> {
    let (r, d, lo, hi) = (t.col("recall")?, t.col("mean_delta")?, t.col("ci_low")?, t.col("ci_high")?);
    let mut pts = Vec::new();
    for i in 0..t.rows.len() {
        pts.push((t.f64_at(i, r)?, t.f64_at(i, d)?, t.f64_at(i, lo)?, t.f64_at(i, hi)?));
    }
    let y = extent(pts.iter().flat_map(|p| [p.1, p.2, p.3]), true);
    let mut c = Canvas::new("Precision difference (B - A) across recall", (0.0, 1.0), y);
    c.axes("recall", "precision difference", true);
    let mut band: Vec<(f64, f64)> = pts.iter().map(|p| (p.0, p.3)).collect();
    band.extend(pts.iter().rev().map(|p| (p.0, p.2)));
    c.polygon(&band, PALETTE[0], 0.25);
    c.line((0.0, 0.0), (1.0, 0.0), "#555", r#"stroke-dasharray="4 3""#);
    c.polyline(&pts.iter().map(|p| (p.0, p.1)).collect::<Vec<_>>(), PALETTE[0]);
    Ok(c.finish())
}

/// Forest plot: per-task effects with CIs, pooled rows as diamonds.
pub fn forest(t: &Table) -> CliResult<String> {
    let (l, e, lo, hi) = (t.col("label")?, t.col("effect")?, t.col("ci_low")?, t.col("ci_high")?);
    let n = t.rows.len();
    let mut rows = Vec::new();
    for i in 0..n {
        rows.push((t.rows[i][l].clone(), t.f64_at(i, e)?, t.f64_at(i, lo)?, t.f64_at(i, hi)?));
    }
    let x = extent(rows.iter().flat_map(|r| [r.2, r.3]), true);
    let mut c = Canvas::new("Meta-analysis", x, (0.0, n.max(1) as f64));
    c.x = x;
    let (x0, y0) = (c.px(c.x.0), c.py(c.y.0));
    let _ = writeln!(c.svg, r#"<line x1="{x0:.2}" y1="{y0:.2}" x2="{:.2}" y2="{y0:.2}" stroke="black"/>"#, c.px(c.x.1));
    for v in ticks(c.x) {
        let px = c.px(v);
        c.text(px, y0 + 18.0, &fmt_tick(v), "middle");
    }
    c.text(W / 2.0, H - 15.0, "effect (95% CI)", "middle");
    c.line((0.0, 0.0), (0.0, n as f64), "#555", r#"stroke-dasharray="4 3""#);
    for (i, (name, eff, l, h)) in rows.iter().enumerate() {
        let y = n as f64 - i as f64 - 0.5;
        let pooled = name.starts_with("pooled");
        if pooled {
            let pts = [(*l, y), (*eff, y + 0.2), (*h, y), (*eff, y - 0.2)];
            c.polygon(&pts, PALETTE[1], 0.9);
        } else {
            c.line((*l, y), (*h, y), "black", r#"stroke-width="1.5""#);
            let _ = writeln!(
                c.svg,
                r#"<rect x="{:.2}" y="{:.2}" width="8" height="8" fill="{}"/>"#,
                c.px(*eff) - 4.0,
                c.py(y) - 4.0,
                PALETTE[0]
            );
        }
        let py = c.py(y) + 4.0;
        c.text(LEFT - 6.0, py, name, "end");
    }
    Ok(c.finish())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ticks_cover_range_with_round_steps() {
        assert_eq!(ticks((0.0, 1.0)), vec![0.0, 0.2, 0.4, 0.6000000000000001, 0.8, 1.0]);
        assert_eq!(fmt_tick(0.6000000000000001), "0.6");
        assert_eq!(fmt_tick(-0.0), "0");
    }
}
