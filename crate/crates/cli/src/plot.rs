//! Static SVG summary of a simulation: estimator bias with MC error bars and
//! test rejection rates against the nominal level.

use std::fmt::Write;

use crowdcorr::McReport;

const W: f64 = 720.0;
const H: f64 = 320.0;
const PANEL: f64 = 300.0;
const TOP: f64 = 40.0;
const PLOT_H: f64 = 220.0;

fn bar(out: &mut String, x: f64, y0: f64, y1: f64, fill: &str) {
    let (top, h) = if y1 < y0 { (y1, y0 - y1) } else { (y0, y1 - y0) };
    let _ = writeln!(out, r#"<rect x="{x:.2}" y="{top:.2}" width="50" height="{h:.2}" fill="{fill}"/>"#);
}

fn text(out: &mut String, x: f64, y: f64, anchor: &str, s: &str) {
    let _ = writeln!(out, r#"<text x="{x:.2}" y="{y:.2}" text-anchor="{anchor}" font-size="12">{s}</text>"#);
}

pub fn svg(report: &McReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);

    // Bias panel, symmetric around zero.
    let e = &report.estimators[0];
    let bars = [("naive", e.bias_naive, e.bias_naive_mc_se), ("weighted", e.bias_weighted, e.bias_weighted_mc_se)];
    let span = bars.iter().map(|(_, b, se)| b.abs() + 2.0 * se).fold(1e-9, f64::max) * 1.1;
    let x0 = 60.0;
    let zero = TOP + PLOT_H / 2.0;
    let y = |v: f64| zero - v / span * (PLOT_H / 2.0);
    text(&mut s, x0 + PANEL / 2.0, 24.0, "middle", "Bias of the outcome mean");
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{zero:.2}" x2="{:.2}" y2="{zero:.2}" stroke="black"/>"#, x0 + PANEL);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{TOP}" x2="{x0}" y2="{:.2}" stroke="black"/>"#, TOP + PLOT_H);
    text(&mut s, x0 - 6.0, y(span) + 4.0, "end", &format!("{span:.3}"));
    text(&mut s, x0 - 6.0, y(-span) + 4.0, "end", &format!("{:.3}", -span));
    for (i, (label, b, se)) in bars.iter().enumerate() {
        let bx = x0 + 60.0 + i as f64 * 120.0;
        bar(&mut s, bx, zero, y(*b), if i == 0 { "#c0504d" } else { "#4f81bd" });
        let cx = bx + 25.0;
        let _ = writeln!(
            s,
            r#"<line x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="black"/>"#,
            y(b + 2.0 * se),
            y(b - 2.0 * se)
        );
        text(&mut s, cx, TOP + PLOT_H + 18.0, "middle", label);
    }

    // Rejection-rate panel on [0, 1] with the nominal level marked.
    let x0 = 420.0;
    let base = TOP + PLOT_H;
    let y = |v: f64| base - v * PLOT_H;
    text(&mut s, x0 + PANEL / 2.0 - 30.0, 24.0, "middle", "Rejection rate");
    let _ =
        writeln!(s, r#"<line x1="{x0}" y1="{base:.2}" x2="{:.2}" y2="{base:.2}" stroke="black"/>"#, x0 + PANEL - 60.0);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{TOP}" x2="{x0}" y2="{base:.2}" stroke="black"/>"#);
    text(&mut s, x0 - 6.0, y(1.0) + 4.0, "end", "1");
    text(&mut s, x0 - 6.0, y(0.0) + 4.0, "end", "0");
    let alpha = report.tests.nominal_alpha;
    let _ = writeln!(
        s,
        r##"<line x1="{x0}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#888" stroke-dasharray="4 3"/>"##,
        y(alpha),
        x0 + PANEL - 60.0,
        y(alpha)
    );
    for (i, v) in report.tests.variants.iter().enumerate() {
        let bx = x0 + 15.0 + i as f64 * 75.0;
        bar(&mut s, bx, base, y(v.rate), "#9bbb59");
        let label =
            serde_json::to_value(v.variant).ok().and_then(|j| j.as_str().map(str::to_string)).unwrap_or_default();
        text(&mut s, bx + 25.0, base + 18.0, "middle", &label);
        text(&mut s, bx + 25.0, y(v.rate) - 4.0, "middle", &format!("{:.3}", v.rate));
    }
    s.push_str("</svg>\n");
    s
}
