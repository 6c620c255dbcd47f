//! `E[u] = ∫ dist²(Du, K) + ε |D²u|(Ω)` for piecewise-analytic fields.
//!
//! Bulk integrals are computed once per distinct (template, frame linear part)
//! and multiplied by the number of blocks sharing it. The surface term splits
//! into the absolutely continuous part inside cells and the jump part along
//! sub-cell interfaces and block seams.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::algebra::{Mat2, WellSpec};
use crate::field::{BlockTemplate, Frame, JumpCurve, PiecewiseDeformation};
use crate::quadrature::{integrate_graph_region, integrate_interval, AdaptiveOptions, GaussRule, Integral};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadratureSpec {
    pub base_order: usize,
    pub max_refinement_depth: usize,
    pub rel_tol: f64,
    pub line_points: usize,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self { base_order: 8, max_refinement_depth: 12, rel_tol: 1e-8, line_points: 16 }
    }
}

impl QuadratureSpec {
    pub fn validate(&self) -> Result<(), String> {
        if self.base_order < 2 {
            return Err(format!("base_order must be at least 2, got {}", self.base_order));
        }
        if self.line_points < 2 {
            return Err(format!("line_points must be at least 2, got {}", self.line_points));
        }
        if !(self.rel_tol > 0.0) {
            return Err(format!("rel_tol must be positive, got {}", self.rel_tol));
        }
        Ok(())
    }

    fn area_options(&self, area: f64) -> AdaptiveOptions {
        AdaptiveOptions {
            order: self.base_order,
            max_depth: self.max_refinement_depth,
            rel_tol: self.rel_tol,
            abs_tol: 1e-18 * area,
            max_panels: 50_000,
        }
    }

    fn line_options(&self, length: f64) -> AdaptiveOptions {
        AdaptiveOptions {
            order: self.line_points,
            max_depth: 30,
            rel_tol: self.rel_tol,
            abs_tol: 1e-18 * length,
            max_panels: 10_000,
        }
    }
}

/// Split of the energy into its parts.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct EnergyBreakdown {
    pub elastic: f64,
    pub tv_bulk: f64,
    pub tv_jump: f64,
    pub epsilon: f64,
    /// `elastic + epsilon * (tv_bulk + tv_jump)`.
    pub total: f64,
    pub error_estimate: f64,
    /// Some integral hit the refinement limit.
    pub truncated: bool,
}

impl EnergyBreakdown {
    pub fn new(elastic: f64, tv_bulk: f64, tv_jump: f64, epsilon: f64, error_estimate: f64, truncated: bool) -> Self {
        Self {
            elastic,
            tv_bulk,
            tv_jump,
            epsilon,
            total: elastic + epsilon * (tv_bulk + tv_jump),
            error_estimate,
            truncated,
        }
    }

    pub fn tv(&self) -> f64 {
        self.tv_bulk + self.tv_jump
    }
}

/// `min` over both orbits of `|F - QG|²`.
pub(crate) fn dist_sq(f: &Mat2, spec: &WellSpec) -> f64 {
    spec.dist_sq(f).0
}

fn template_elastic(t: &BlockTemplate, frame: &Frame, spec: &WellSpec, quad: &QuadratureSpec) -> Integral {
    let mut out = Integral::default();
    for (k, c) in t.cells.iter().enumerate() {
        let area = t.sub_area(k);
        if area <= 0.0 {
            continue;
        }
        if t.is_affine(k) {
            let x = 0.5 * t.ell;
            let y = 0.5 * (c.lower.at(t.jet(x)[0]) + c.upper.at(t.jet(x)[0]));
            let g = frame.push_gradient(&t.gradient(k, x, y));
            out.value += dist_sq(&g, spec) * area;
            continue;
        }
        let r = integrate_graph_region(
            |x, y| dist_sq(&frame.push_gradient(&t.gradient(k, x, y)), spec),
            0.0,
            t.ell,
            |x| c.lower.at(t.jet(x)[0]),
            |x| c.upper.at(t.jet(x)[0]),
            &quad.area_options(area),
        );
        out.add(r);
    }
    out
}

fn template_tv_bulk(t: &BlockTemplate, quad: &QuadratureSpec) -> Integral {
    let mut out = Integral::default();
    for (k, c) in t.cells.iter().enumerate() {
        let area = t.sub_area(k);
        if area <= 0.0 || t.is_affine(k) {
            continue;
        }
        let r = integrate_graph_region(
            |x, y| t.second_gradient(k, x, y).norm(),
            0.0,
            t.ell,
            |x| c.lower.at(t.jet(x)[0]),
            |x| c.upper.at(t.jet(x)[0]),
            &quad.area_options(area),
        );
        out.add(r);
    }
    out
}

/// Jumps across the interfaces between consecutive sub-cells of a template.
fn template_tv_internal(t: &BlockTemplate, quad: &QuadratureSpec) -> Integral {
    let mut out = Integral::default();
    for k in 0..t.cells.len() - 1 {
        let curve = t.cells[k].upper;
        let f = |x: f64| {
            let j = t.jet(x);
            let y = curve.at(j[0]);
            let slope = curve.c1 * j[1] / t.ell;
            let d = t.gradient(k + 1, x, y) - t.gradient(k, x, y);
            d.norm() * (1.0 + slope * slope).sqrt()
        };
        out.add(integrate_interval(f, 0.0, t.ell, &quad.line_options(t.ell)));
    }
    out
}

fn seam_integral(def: &PiecewiseDeformation, c: &JumpCurve, quad: &QuadratureSpec) -> Integral {
    let rule = GaussRule::get(quad.line_points);
    let f = |t: f64| def.gradient_jump(c, t).norm() * def.curve_speed(c, t);
    let first = rule.integrate(0.0, 1.0, f);
    let len = def.curve_speed(c, 0.5);
    if first == 0.0 {
        return Integral { value: first, error: 0.0, truncated: false, panels: 1 };
    }
    // floor relative to |Du| on the seam so near-cancelling jumps stay cheap
    let scale = def.gradient_scale(c, 0.5);
    let mut opts = quad.line_options(len);
    opts.abs_tol = opts.abs_tol.max(1e-2 * quad.rel_tol * len * scale);
    integrate_interval(f, 0.0, 1.0, &opts)
}

type FrameKey = (u64, [u64; 8]);

/// Distinct (template, linear frame) pairs with multiplicities, in order of
/// first appearance.
fn frame_classes(def: &PiecewiseDeformation) -> Vec<(usize, usize)> {
    let mut seen: HashMap<FrameKey, usize> = HashMap::new();
    let mut classes: Vec<(usize, usize)> = Vec::new();
    for b in 0..def.block_count() {
        let key = (def.blocks()[b].template.id(), def.effective_frame(b).linear_key());
        match seen.get(&key) {
            Some(&i) => classes[i].1 += 1,
            None => {
                seen.insert(key, classes.len());
                classes.push((b, 1));
            }
        }
    }
    classes
}

fn template_classes(def: &PiecewiseDeformation) -> Vec<(usize, usize)> {
    let mut seen: HashMap<u64, usize> = HashMap::new();
    let mut classes: Vec<(usize, usize)> = Vec::new();
    for (b, blk) in def.blocks().iter().enumerate() {
        match seen.get(&blk.template.id()) {
            Some(&i) => classes[i].1 += 1,
            None => {
                seen.insert(blk.template.id(), classes.len());
                classes.push((b, 1));
            }
        }
    }
    classes
}

fn weighted_sum(parts: &[(Integral, usize)]) -> Integral {
    let mut out = Integral::default();
    for (r, n) in parts {
        let w = *n as f64;
        out.value += r.value * w;
        out.error += r.error * w;
        out.truncated |= r.truncated;
        out.panels += r.panels;
    }
    out
}

pub fn elastic_integral(def: &PiecewiseDeformation, spec: &WellSpec, quad: &QuadratureSpec) -> Integral {
    let classes = frame_classes(def);
    let parts: Vec<(Integral, usize)> = classes
        .par_iter()
        .map(|&(b, n)| {
            let t = &def.blocks()[b].template;
            (template_elastic(t, &def.effective_frame(b), spec, quad), n)
        })
        .collect();
    weighted_sum(&parts)
}

pub fn tv_bulk_integral(def: &PiecewiseDeformation, quad: &QuadratureSpec) -> Integral {
    let parts: Vec<(Integral, usize)> = template_classes(def)
        .par_iter()
        .map(|&(b, n)| (template_tv_bulk(&def.blocks()[b].template, quad), n))
        .collect();
    weighted_sum(&parts)
}

pub fn tv_jump_integral(def: &PiecewiseDeformation, quad: &QuadratureSpec) -> Integral {
    let parts: Vec<(Integral, usize)> = template_classes(def)
        .par_iter()
        .map(|&(b, n)| (template_tv_internal(&def.blocks()[b].template, quad), n))
        .collect();
    let mut out = weighted_sum(&parts);
    let seams = def.seams();
    let seam_parts: Vec<Integral> = seams.par_iter().map(|c| seam_integral(def, c, quad)).collect();
    for r in seam_parts {
        out.add(r);
    }
    out
}

/// `∫ dist²(Du, K)`.
pub fn elastic_energy(def: &PiecewiseDeformation, spec: &WellSpec, quad: &QuadratureSpec) -> f64 {
    elastic_integral(def, spec, quad).value
}

/// `∫ |D²u|` over cell interiors.
pub fn tv_bulk(def: &PiecewiseDeformation, quad: &QuadratureSpec) -> f64 {
    tv_bulk_integral(def, quad).value
}

/// `∫ |[Du]|` over all interfaces.
pub fn tv_jump(def: &PiecewiseDeformation, quad: &QuadratureSpec) -> f64 {
    tv_jump_integral(def, quad).value
}

pub fn total_energy(def: &PiecewiseDeformation, spec: &WellSpec, eps: f64, quad: &QuadratureSpec) -> EnergyBreakdown {
    let e = elastic_integral(def, spec, quad);
    let b = tv_bulk_integral(def, quad);
    let j = tv_jump_integral(def, quad);
    EnergyBreakdown::new(
        e.value,
        b.value,
        j.value,
        eps,
        e.error + eps * (b.error + j.error),
        e.truncated || b.truncated || j.truncated,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::WellCase;
    use crate::constructions::*;
    use crate::field::Rect;
    use crate::profile::Profile;

    fn q() -> QuadratureSpec {
        QuadratureSpec::default()
    }

    #[test]
    fn identity_energies() {
        let id = PiecewiseDeformation::identity(Rect::domain(1.0, 1.0).unwrap());
        let k2 = WellSpec::new(WellCase::K2, 0.2).unwrap();
        assert!((elastic_energy(&id, &k2, &q()) - 0.04).abs() < 1e-15);
        let k1 = WellSpec::new(WellCase::K1, 0.2).unwrap();
        let a2 = 0.04_f64;
        let exact = 4.0 + a2 - 2.0 * (4.0 + a2).sqrt();
        assert!((elastic_energy(&id, &k1, &q()) - exact).abs() < 1e-15);
        let k2b = WellSpec::new(WellCase::K2, 0.1).unwrap();
        let e = total_energy(&id, &k2b, 123.0, &q());
        assert!((e.total - 0.01).abs() < 1e-16);
        assert_eq!(e.tv(), 0.0);
    }

    #[test]
    fn laminate_energies() {
        let a = 0.2;
        for case in [WellCase::K1, WellCase::K2] {
            let spec = WellSpec::new(case, a).unwrap();
            let w = laminate(case, a, 0.1, Rect::new(0.0, 0.0, 0.7, 0.1).unwrap()).unwrap();
            let e = total_energy(&w, &spec, 1.0, &q());
            assert!(e.elastic < 1e-28, "{e:?}");
            assert_eq!(e.tv_bulk, 0.0);
            // two interior interfaces of length 0.7, |B - A| = 2α
            assert!((e.tv_jump - 2.0 * 0.7 * 2.0 * a).abs() < 1e-13, "{e:?}");
            let w3 = laminate(case, a, 0.1, Rect::new(0.0, 0.0, 0.7, 0.3).unwrap()).unwrap();
            assert!((tv_jump(&w3, &q()) - 6.0 * 0.7 * 2.0 * a).abs() < 1e-13);
            let j = w.jump_curves();
            let mid = w.gradient_jump(&j[0], 0.5);
            let expected = match case {
                WellCase::K2 => Mat2::diag(0.0, -2.0 * a),
                WellCase::K1 => Mat2::new(0.0, -2.0 * a, 0.0, 0.0),
            };
            assert!((mid - expected).norm() < 1e-15, "{mid}");
        }
    }

    #[test]
    fn eps_zero_total_is_elastic() {
        let spec = WellSpec::new(WellCase::K2, 0.1).unwrap();
        let c = k2_cell([0.0, 0.0], 1.0, 0.25, 0.1).unwrap();
        let e = total_energy(&c, &spec, 0.0, &q());
        assert_eq!(e.total, e.elastic);
    }

    #[test]
    fn tv_bulk_is_homogeneous_of_degree_one() {
        let a = 0.1;
        let c1 = k2_cell([0.0, 0.0], 1.0, 0.25, a).unwrap();
        let c2 = k2_cell([0.0, 0.0], 2.0, 0.5, a).unwrap();
        let (b1, b2) = (tv_bulk(&c1, &q()), tv_bulk(&c2, &q()));
        assert!(b1 > 0.0);
        assert!((b2 / b1 - 2.0).abs() < 1e-6, "{b1} {b2}");
    }

    #[test]
    fn k2_cell_tv_bulk_bound() {
        let a = 0.1;
        for (ell, h) in [(1.0, 0.25), (1.0, 0.0625), (0.5, 0.125)] {
            let c = k2_cell([0.0, 0.0], ell, h, a).unwrap();
            let b = tv_bulk(&c, &q());
            let ratio = b / (a * h * ell * h / (ell * ell));
            assert!(ratio < 10.0, "ratio {ratio}");
        }
    }

    #[test]
    fn quadrature_converges_under_order_doubling() {
        let spec = WellSpec::new(WellCase::K2, 0.1).unwrap();
        let c = k2_cell([0.0, 0.0], 1.0, 0.125, 0.1).unwrap();
        let e8 = total_energy(&c, &spec, 1e-3, &q());
        let e16 = total_energy(&c, &spec, 1e-3, &QuadratureSpec { base_order: 16, ..q() });
        assert!((e8.elastic - e16.elastic).abs() <= 10.0 * 1e-8 * e16.elastic);
        assert!((e8.tv_bulk - e16.tv_bulk).abs() <= 10.0 * 1e-8 * e16.tv_bulk);
        assert!((e8.tv_jump - e16.tv_jump).abs() <= 10.0 * 1e-8 * e16.tv_jump);
    }

    #[test]
    fn energy_is_invariant_under_value_rotation() {
        let spec = WellSpec::new(WellCase::K1, 0.2).unwrap();
        let c = k1_cell([0.0, 0.0], 1.0, 0.25, 0.2, Profile::Quintic).unwrap();
        let r = c.rotate_values(0.83);
        let (e, er) = (total_energy(&c, &spec, 1e-2, &q()), total_energy(&r, &spec, 1e-2, &q()));
        assert!((e.elastic - er.elastic).abs() < 1e-8 * e.elastic);
        assert!((e.tv() - er.tv()).abs() < 1e-10 * e.tv());
    }

    #[test]
    fn mirror_preserves_energy() {
        let spec = WellSpec::new(WellCase::K2, 0.1).unwrap();
        let c = k2_cell([0.0, 0.0], 1.0, 0.25, 0.1).unwrap();
        let m = c.mirror_x(1.0).unwrap();
        let (e, em) = (total_energy(&c, &spec, 1e-2, &q()), total_energy(&m, &spec, 1e-2, &q()));
        assert!((e.elastic - em.elastic).abs() < 1e-8 * e.elastic);
        assert!((e.total - em.total).abs() < 1e-8 * e.total);
    }

    #[test]
    fn additivity_over_joined_halves() {
        let spec = WellSpec::new(WellCase::K1, 0.1).unwrap();
        let a = k1_cell([0.0, 0.0], 1.0, 0.25, 0.1, Profile::Quintic).unwrap();
        let b = a.mirror_x(1.0).unwrap();
        let whole = a.join(&b).unwrap();
        let ea = elastic_energy(&a, &spec, &q());
        let eb = elastic_energy(&b, &spec, &q());
        assert!((elastic_energy(&whole, &spec, &q()) - ea - eb).abs() < 1e-8 * (ea + eb));
    }
}
