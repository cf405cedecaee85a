//! Minimal SVG 1.1 charts.

use std::fmt::Write as _;

const W: f64 = 720.0;
const H: f64 = 360.0;
const MARGIN: f64 = 50.0;
const COLORS: [&str; 8] = ["#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860", "#da8bc3", "#8c8c8c"];

pub fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn header(title: &str) -> String {
    format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n<rect x=\"0\" y=\"0\" width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n<text x=\"{}\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\" text-anchor=\"middle\">{}</text>\n",
        W / 2.0,
        escape(title)
    )
}

fn finite_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn axes(s: &mut String, lo: f64, hi: f64) {
    let _ = writeln!(
        s,
        "<line x1=\"{MARGIN}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n<line x1=\"{MARGIN}\" y1=\"{MARGIN}\" x2=\"{MARGIN}\" y2=\"{}\" stroke=\"black\"/>",
        H - MARGIN,
        W - MARGIN,
        H - MARGIN,
        H - MARGIN
    );
    for (v, y) in [(hi, MARGIN), (lo, H - MARGIN)] {
        let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"end\">{v:.3}</text>", MARGIN - 4.0, y + 3.0);
    }
}

fn legend(s: &mut String, names: &[String]) {
    for (i, n) in names.iter().enumerate() {
        let y = MARGIN + 14.0 * i as f64;
        let _ = writeln!(
            s,
            "<rect x=\"{}\" y=\"{}\" width=\"10\" height=\"10\" fill=\"{}\"/>\n<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\">{}</text>",
            W - MARGIN - 110.0,
            y - 9.0,
            COLORS[i % COLORS.len()],
            W - MARGIN - 96.0,
            y,
            escape(n)
        );
    }
}

/// Grouped bars: one group per label, one bar per series name.
pub fn bar_chart(title: &str, groups: &[(String, Vec<(String, f64)>)]) -> String {
    let mut names: Vec<String> = Vec::new();
    for (_, bars) in groups {
        for (n, _) in bars {
            if !names.contains(n) {
                names.push(n.clone());
            }
        }
    }
    let (lo, hi) = finite_range(groups.iter().flat_map(|(_, b)| b.iter().map(|x| x.1)).chain([0.0]));
    let mut s = header(title);
    axes(&mut s, lo, hi);
    let plot_w = W - 2.0 * MARGIN - 120.0;
    let gw = plot_w / groups.len().max(1) as f64;
    let bw = gw * 0.8 / names.len().max(1) as f64;
    let y_of = |v: f64| H - MARGIN - (v - lo) / (hi - lo) * (H - 2.0 * MARGIN);
    for (g, (label, bars)) in groups.iter().enumerate() {
        let x0 = MARGIN + g as f64 * gw + gw * 0.1;
        for (name, v) in bars {
            if !v.is_finite() {
                continue;
            }
            let k = names.iter().position(|n| n == name).unwrap_or(0);
            let (top, bottom) = (y_of(v.max(0.0)), y_of(v.min(0.0)));
            let _ = writeln!(
                s,
                "<rect x=\"{:.2}\" y=\"{top:.2}\" width=\"{bw:.2}\" height=\"{:.2}\" fill=\"{}\"/>",
                x0 + k as f64 * bw,
                (bottom - top).max(0.5),
                COLORS[k % COLORS.len()]
            );
        }
        let _ = writeln!(
            s,
            "<text x=\"{:.2}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{}</text>",
            x0 + gw * 0.4,
            H - MARGIN + 16.0,
            escape(label)
        );
    }
    legend(&mut s, &names);
    s.push_str("</svg>\n");
    s
}

/// One polyline with point markers per series.
pub fn line_chart(title: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let (xlo, xhi) = finite_range(series.iter().flat_map(|(_, p)| p.iter().map(|q| q.0)));
    let (ylo, yhi) = finite_range(series.iter().flat_map(|(_, p)| p.iter().map(|q| q.1)));
    let mut s = header(title);
    axes(&mut s, ylo, yhi);
    let plot_w = W - 2.0 * MARGIN - 120.0;
    let px = |x: f64| MARGIN + (x - xlo) / (xhi - xlo) * plot_w;
    let py = |y: f64| H - MARGIN - (y - ylo) / (yhi - ylo) * (H - 2.0 * MARGIN);
    for (k, (_, pts)) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let finite: Vec<_> = pts.iter().filter(|p| p.0.is_finite() && p.1.is_finite()).collect();
        if finite.is_empty() {
            continue;
        }
        let path: Vec<String> = finite.iter().map(|p| format!("{:.2},{:.2}", px(p.0), py(p.1))).collect();
        let _ = writeln!(s, "<polyline fill=\"none\" stroke=\"{color}\" points=\"{}\"/>", path.join(" "));
        for p in finite {
            let _ = writeln!(s, "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2\" fill=\"{color}\"/>", px(p.0), py(p.1));
        }
    }
    let names: Vec<String> = series.iter().map(|s| s.0.clone()).collect();
    legend(&mut s, &names);
    s.push_str("</svg>\n");
    s
}
