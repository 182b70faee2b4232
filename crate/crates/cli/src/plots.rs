//! Standalone SVG plots. Coordinates are printed with two decimals so the
//! files are byte-stable.

use std::fmt::Write as _;

use canopy::grid::Extent;
use canopy::treeseg::Crown;

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD: f64 = 48.0;
const LAYER_COLORS: [&str; 6] = ["#2e7d32", "#1565c0", "#ef6c00", "#6a1b9a", "#c62828", "#00838f"];

struct Svg {
    body: String,
}

impl Svg {
    fn new(title: &str) -> Svg {
        let mut body = String::new();
        let _ = writeln!(
            body,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(body, r##"<rect width="{W}" height="{H}" fill="#ffffff"/>"##);
        let _ = writeln!(body, r#"<text x="{:.2}" y="20" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title));
        Svg { body }
    }

    fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, style: &str) {
        let _ = writeln!(self.body, r#"<line x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}" {style}/>"#);
    }

    fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, style: &str) {
        let _ = writeln!(self.body, r#"<rect x="{x:.2}" y="{y:.2}" width="{w:.2}" height="{h:.2}" {style}/>"#);
    }

    fn text(&mut self, x: f64, y: f64, anchor: &str, s: &str) {
        let _ = writeln!(self.body, r#"<text x="{x:.2}" y="{y:.2}" text-anchor="{anchor}">{}</text>"#, escape(s));
    }

    fn axes(&mut self, xlabel: &str, ylabel: &str) {
        let axis = r##"stroke="#000000" stroke-width="1""##;
        self.line(PAD, H - PAD, W - PAD, H - PAD, axis);
        self.line(PAD, PAD, PAD, H - PAD, axis);
        self.text(W / 2.0, H - 10.0, "middle", xlabel);
        let _ = writeln!(
            self.body,
            r#"<text x="14" y="{:.2}" text-anchor="middle" transform="rotate(-90 14 {:.2})">{}</text>"#,
            H / 2.0,
            H / 2.0,
            escape(ylabel)
        );
    }

    fn finish(mut self) -> String {
        self.body.push_str("</svg>\n");
        self.body
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Maps `[lo, hi]` onto `[a, b]`.
fn scale(lo: f64, hi: f64, a: f64, b: f64) -> impl Fn(f64) -> f64 {
    let span = if hi > lo { hi - lo } else { 1.0 };
    move |v| a + (v - lo) / span * (b - a)
}

/// Height histogram with the layer height ranges shaded behind the bars.
pub fn height_histogram(heights: &[f64], bin: f64, ranges: &[(f64, f64)]) -> String {
    let mut svg = Svg::new("Height histogram");
    svg.axes("height above ground (m)", "points");
    let top = heights.iter().copied().fold(0.0, f64::max).max(bin);
    let nbins = (top / bin).floor() as usize + 1;
    let mut counts = vec![0usize; nbins];
    for &h in heights {
        counts[((h.max(0.0) / bin) as usize).min(nbins - 1)] += 1;
    }
    let cmax = counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let sx = scale(0.0, nbins as f64 * bin, PAD, W - PAD);
    let sy = scale(0.0, cmax, H - PAD, PAD);
    for (k, &(lo, hi)) in ranges.iter().enumerate() {
        let (x0, x1) = (sx(lo.max(0.0)), sx(hi.min(nbins as f64 * bin)));
        let color = LAYER_COLORS[k % LAYER_COLORS.len()];
        svg.rect(x0, PAD, (x1 - x0).max(0.0), H - 2.0 * PAD, &format!(r#"fill="{color}" fill-opacity="0.15""#));
        svg.text((x0 + x1) / 2.0, PAD - 4.0, "middle", &format!("layer {}", k + 1));
    }
    for (i, &c) in counts.iter().enumerate() {
        if c == 0 {
            continue;
        }
        let (x0, x1) = (sx(i as f64 * bin), sx((i + 1) as f64 * bin));
        svg.rect(x0, sy(c as f64), x1 - x0, H - PAD - sy(c as f64), r##"fill="#455a64""##);
    }
    svg.text(W - PAD, H - PAD + 14.0, "end", &format!("{:.1}", nbins as f64 * bin));
    svg.text(PAD - 4.0, PAD + 4.0, "end", &format!("{}", cmax as usize));
    svg.finish()
}

/// Observed layer fractions (dots) against the fitted model (line).
pub fn fit_curve(observed: &[(u32, f64)], fitted: &[(u32, f64)], theta: f64) -> String {
    let mut svg = Svg::new(&format!("Layer fractions, theta = {theta:.4}"));
    svg.axes("layer from the top", "fraction of returns");
    let nmax = observed.iter().chain(fitted).map(|p| p.0).max().unwrap_or(1).max(2) as f64;
    let pmax = observed.iter().chain(fitted).map(|p| p.1).fold(0.0, f64::max).max(1e-9);
    let sx = scale(1.0, nmax, PAD + 20.0, W - PAD - 20.0);
    let sy = scale(0.0, pmax * 1.05, H - PAD, PAD);
    let path: Vec<String> = fitted.iter().map(|&(n, p)| format!("{:.2},{:.2}", sx(n as f64), sy(p))).collect();
    let _ = writeln!(svg.body, r##"<polyline points="{}" fill="none" stroke="#c62828" stroke-width="2"/>"##, path.join(" "));
    for &(n, p) in observed {
        let _ = writeln!(svg.body, r##"<circle cx="{:.2}" cy="{:.2}" r="4" fill="#1565c0"/>"##, sx(n as f64), sy(p));
    }
    for n in 1..=nmax as u32 {
        svg.text(sx(n as f64), H - PAD + 14.0, "middle", &n.to_string());
    }
    svg.text(PAD - 4.0, sy(pmax) + 4.0, "end", &format!("{pmax:.3}"));
    svg.finish()
}

/// Crown hulls and apexes in map view, colored by layer.
pub fn crown_map(extent: &Extent, crowns: &[Crown]) -> String {
    let mut svg = Svg::new(&format!("Crown map, {} crowns", crowns.len()));
    let span = extent.width().max(extent.height()).max(1e-9);
    let k = (H - 2.0 * PAD).min(W - 2.0 * PAD) / span;
    let px = |x: f64| PAD + (x - extent.xmin) * k;
    let py = |y: f64| H - PAD - (y - extent.ymin) * k;
    svg.rect(px(extent.xmin), py(extent.ymax), extent.width() * k, extent.height() * k, r##"fill="none" stroke="#000000""##);
    for c in crowns {
        let color = LAYER_COLORS[c.layer.map_or(0, |l| l as usize - 1) % LAYER_COLORS.len()];
        let pts: Vec<String> = c.hull.vertices.iter().map(|v| format!("{:.2},{:.2}", px(v.x), py(v.y))).collect();
        let _ = writeln!(
            svg.body,
            r#"<polygon points="{}" fill="{color}" fill-opacity="0.25" stroke="{color}" stroke-width="0.8"/>"#,
            pts.join(" ")
        );
        let _ = writeln!(svg.body, r##"<circle cx="{:.2}" cy="{:.2}" r="1.2" fill="#000000"/>"##, px(c.apex.x), py(c.apex.y));
    }
    svg.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_is_well_formed_and_stable() {
        let h = [1.0, 2.0, 2.2, 15.0, 16.5];
        let a = height_histogram(&h, 0.5, &[(10.0, 18.0), (0.0, 4.0)]);
        assert_eq!(a, height_histogram(&h, 0.5, &[(10.0, 18.0), (0.0, 4.0)]));
        assert!(a.starts_with("<svg") && a.ends_with("</svg>\n"));
        assert_eq!(a.matches("layer ").count(), 2);
    }

    #[test]
    fn empty_inputs_still_plot() {
        assert!(height_histogram(&[], 0.5, &[]).contains("</svg>"));
        assert!(fit_curve(&[], &[], 0.5).contains("</svg>"));
        assert!(crown_map(&Extent::new(0.0, 0.0, 0.0, 0.0), &[]).contains("0 crowns"));
    }
}
