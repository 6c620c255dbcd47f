//! SVG renderings of constructions and phase diagrams.

use std::fmt::Write;

use microbranch::algebra::{dist_to_wells, Well, WellSpec};
use microbranch::bounds::{PhaseDiagram, Regime};
use microbranch::field::PiecewiseDeformation;

const WIDTH: f64 = 800.0;
const MAX_CURVES: usize = 20_000;

fn header(w: f64, h: f64) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.0}\" height=\"{h:.0}\" viewBox=\"0 0 {w:.3} {h:.3}\" shape-rendering=\"crispEdges\">\n"
    )
}

/// Nearest-well colour with lightness set by the optimal rotation angle.
fn well_colour(well: Well, angle: f64, alpha: f64) -> String {
    let hue = match well {
        Well::A => 210.0,
        Well::B => 28.0,
    };
    let light = 55.0 + 25.0 * (angle / alpha).tanh();
    format!("hsl({hue:.0},70%,{light:.1}%)")
}

/// Pixel map of the nearest well with the jump curves on top.
pub fn construction_svg(def: &PiecewiseDeformation, spec: &WellSpec, pixels: usize) -> String {
    let d = def.domain();
    let scale = WIDTH / d.width.max(d.height);
    let (w, h) = (d.width * scale, d.height * scale);
    let nx = ((pixels as f64) * d.width / d.width.max(d.height)).ceil().max(1.0) as usize;
    let ny = ((pixels as f64) * d.height / d.width.max(d.height)).ceil().max(1.0) as usize;
    let (px, py) = (w / nx as f64, h / ny as f64);
    let mut s = header(w, h);
    let _ = writeln!(s, "<g id=\"wells\">");
    for j in 0..ny {
        for i in 0..nx {
            let p = [d.x0 + (i as f64 + 0.5) * d.width / nx as f64, d.y0 + (j as f64 + 0.5) * d.height / ny as f64];
            let colour = match def.evaluate(p) {
                Ok((_, du)) => {
                    let r = dist_to_wells(&du, spec);
                    well_colour(r.nearest_well, r.optimal_angle, spec.alpha())
                }
                Err(_) => "black".to_string(),
            };
            let y = h - (j as f64 + 1.0) * py;
            let _ = writeln!(
                s,
                "<rect x=\"{:.3}\" y=\"{y:.3}\" width=\"{:.3}\" height=\"{:.3}\" fill=\"{colour}\"/>",
                i as f64 * px,
                px + 0.05,
                py + 0.05
            );
        }
    }
    let _ = writeln!(s, "</g>\n<g id=\"jumps\" fill=\"none\" stroke=\"black\" stroke-width=\"0.6\">");
    let curves = def.jump_curves();
    for c in curves.iter().take(MAX_CURVES) {
        let pts: Vec<String> = (0..=8)
            .map(|k| {
                let q = def.curve_point(c, k as f64 / 8.0);
                format!("{:.3},{:.3}", (q[0] - d.x0) * scale, h - (q[1] - d.y0) * scale)
            })
            .collect();
        let _ = writeln!(s, "<polyline points=\"{}\"/>", pts.join(" "));
    }
    let _ = writeln!(s, "</g>");
    if curves.len() > MAX_CURVES {
        let _ = writeln!(s, "<!-- {} of {} jump curves drawn -->", MAX_CURVES, curves.len());
    }
    s.push_str("</svg>\n");
    s
}

fn regime_colour(r: Regime) -> &'static str {
    match r {
        Regime::A => "#e8e8e8",
        Regime::BR => "#4c72b0",
        Regime::HL => "#dd8452",
        Regime::VB1 => "#55a868",
        Regime::VB2 => "#c44e52",
        Regime::VL => "#8172b3",
    }
}

/// Regime map with `log₁₀(L/ε)` to the right and `log₁₀(H/ε)` upwards.
pub fn phase_svg(d: &PhaseDiagram) -> String {
    let g = d.grid;
    let margin = 40.0;
    let (pw, ph) = (WIDTH / g.nx as f64, WIDTH / g.ny as f64);
    let total = WIDTH + 2.0 * margin;
    let mut s = header(total, total + 30.0);
    for j in 0..g.ny {
        for i in 0..g.nx {
            let p = d.at(i, j);
            let _ = writeln!(
                s,
                "<rect x=\"{:.3}\" y=\"{:.3}\" width=\"{:.3}\" height=\"{:.3}\" fill=\"{}\"><title>{}</title></rect>",
                margin + i as f64 * pw,
                margin + WIDTH - (j as f64 + 1.0) * ph,
                pw + 0.05,
                ph + 0.05,
                regime_colour(p.regime),
                p.regime
            );
        }
    }
    let _ = writeln!(
        s,
        "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"14\" text-anchor=\"middle\">log10(L/eps) from {} to {}</text>",
        margin + WIDTH / 2.0,
        margin + WIDTH + 24.0,
        g.log_l.0,
        g.log_l.1
    );
    let _ = writeln!(
        s,
        "<text x=\"14\" y=\"{:.1}\" font-size=\"14\" text-anchor=\"middle\" transform=\"rotate(-90 14 {:.1})\">log10(H/eps) from {} to {}</text>",
        margin + WIDTH / 2.0,
        margin + WIDTH / 2.0,
        g.log_h.0,
        g.log_h.1
    );
    let mut x = margin;
    for r in d.regimes() {
        let y = total + 10.0;
        let _ = writeln!(s, "<rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"14\" height=\"14\" fill=\"{}\" stroke=\"black\"/>", regime_colour(r));
        let _ = writeln!(s, "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"14\">{r}</text>", x + 20.0, y + 12.0);
        x += 80.0;
    }
    let _ = writeln!(
        s,
        "<text x=\"{:.1}\" y=\"24\" font-size=\"16\" text-anchor=\"middle\">{} alpha={}</text>",
        total / 2.0,
        d.case.name(),
        d.alpha
    );
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use microbranch::algebra::WellCase;
    use microbranch::bounds::{phase_diagram, PhaseGridSpec};
    use microbranch::field::Rect;

    #[test]
    fn identity_is_one_colour() {
        let spec = WellSpec::new(WellCase::K2, 0.1).unwrap();
        let id = PiecewiseDeformation::identity(Rect::domain(1.0, 1.0).unwrap());
        let s = construction_svg(&id, &spec, 20);
        let fills: std::collections::BTreeSet<&str> =
            s.match_indices("fill=\"").map(|(i, _)| s[i + 6..].split('"').next().unwrap()).filter(|f| *f != "none").collect();
        assert_eq!(fills.len(), 1, "{fills:?}");
        assert!(!s.contains("<polyline"));
    }

    #[test]
    fn phase_svg_lists_regimes() {
        let g = PhaseGridSpec { nx: 20, ny: 20, ..Default::default() };
        let d = phase_diagram(WellCase::K2, 0.1, g).unwrap();
        let s = phase_svg(&d);
        assert_eq!(s.matches("<rect").count(), 400 + 3);
        assert!(s.starts_with("<svg") && s.ends_with("</svg>\n"));
    }
}
