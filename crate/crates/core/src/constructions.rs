//! Explicit upper-bound constructions: exact laminates, the period-doubling
//! and boundary-layer cells for both well sets, branching schedules and the
//! assembled global fields.

use std::sync::Arc;

use thiserror::Error;

use crate::algebra::{WellCase, WellSpec};
use crate::energy::{total_energy, EnergyBreakdown, QuadratureSpec};
use crate::field::{Block, BlockTemplate, CellMap, Component, Curve, FieldError, Frame, MapFamily, PiecewiseDeformation, Rect, SubCell};
use crate::profile::Profile;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConstructionError {
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error(transparent)]
    Field(#[from] FieldError),
}

fn check_cell(ell: f64, h: f64, alpha: f64) -> Result<(), ConstructionError> {
    if !(h > 0.0 && ell > 0.0 && h.is_finite() && ell.is_finite()) {
        return Err(ConstructionError::Precondition(format!("cell sizes must be positive, got l={ell}, h={h}")));
    }
    if h > ell {
        return Err(ConstructionError::Precondition(format!("cell requires h <= l, got h={h} > l={ell}")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(ConstructionError::Precondition(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

fn x_only() -> Component {
    Component::affine(0.0, 1.0, 0.0)
}

fn y_only() -> Component {
    Component::affine(0.0, 0.0, 1.0)
}

fn sub(region: &'static str, lower: Curve, upper: Curve, u1: Component, u2: Component) -> SubCell {
    SubCell { region, lower, upper, map: CellMap::new(u1, u2) }
}

/// Interfaces of the period-doubling cells: at `X = 0` they sit at odd
/// multiples of `h/8`, at `X = ℓ` at `h/4, h/2, h/2, 3h/4`.
fn doubling_curves(h: f64) -> [Curve; 4] {
    [
        Curve::new(h / 8.0, h / 8.0),
        Curve::new(3.0 * h / 8.0, h / 8.0),
        Curve::new(5.0 * h / 8.0, -h / 8.0),
        Curve::new(7.0 * h / 8.0, -h / 8.0),
    ]
}

/// Interfaces of the boundary-layer cells.
fn boundary_curves(h: f64) -> [Curve; 4] {
    [
        Curve::new(0.0, h / 4.0),
        Curve::new(h / 2.0, -h / 4.0),
        Curve::new(h / 2.0, h / 4.0),
        Curve::new(h, -h / 4.0),
    ]
}

fn five(regions: [&'static str; 5], curves: [Curve; 4], h: f64, maps: [(Component, Component); 5]) -> Vec<SubCell> {
    let bounds = [Curve::flat(0.0), curves[0], curves[1], curves[2], curves[3], Curve::flat(h)];
    (0..5)
        .map(|k| sub(regions[k], bounds[k], bounds[k + 1], maps[k].0, maps[k].1))
        .collect()
}

const DOUBLING_REGIONS: [&str; 5] = ["w1", "w2", "w3", "w4", "w5"];
const BOUNDARY_REGIONS: [&str; 5] = ["B'", "M'", "A", "M''", "B''"];

/// Period-doubling cell for the stretch wells: sawtooth of period `h/2` in
/// `u₂` at `X = 0`, period `h` at `X = ℓ`, identity on `Y ∈ {0, h}`.
pub fn k2_cell_template(ell: f64, h: f64, alpha: f64) -> Arc<BlockTemplate> {
    let a = alpha;
    let kappa = a * (1.0 - a) * h / (4.0 * ell);
    let u2 = |c0: f64, cy: f64, cg: f64| Component { c0, cy, cg, ..Default::default() };
    let u1 = |d0: f64, dg: f64, dy: f64| Component { cx: 1.0, d0, dg, dy, ..Default::default() };
    let maps = [
        (x_only(), u2(0.0, 1.0 + a, 0.0)),
        (u1(kappa * h / 8.0, kappa * h / 8.0, -kappa), u2(a * h / 4.0, 1.0 - a, a * h / 4.0)),
        (u1(-kappa * h / 4.0, 0.0, 0.0), u2(-a * h / 2.0, 1.0 + a, 0.0)),
        (u1(-7.0 * kappa * h / 8.0, kappa * h / 8.0, kappa), u2(3.0 * a * h / 4.0, 1.0 - a, -a * h / 4.0)),
        (x_only(), u2(-a * h, 1.0 + a, 0.0)),
    ];
    BlockTemplate::new(
        MapFamily::K2Cell { ell, h, alpha },
        ell,
        h,
        Profile::Quintic,
        five(DOUBLING_REGIONS, doubling_curves(h), h, maps),
    )
}

/// Boundary-layer cell for the stretch wells: identity at `X = 0`, sawtooth
/// of period `h` at `X = ℓ`.
pub fn k2_boundary_template(ell: f64, h: f64, alpha: f64) -> Arc<BlockTemplate> {
    let a = alpha;
    let u2 = |c0: f64, cy: f64, cg: f64| Component { c0, cy, cg, ..Default::default() };
    let maps = [
        (x_only(), u2(0.0, 1.0 + a, 0.0)),
        (x_only(), u2(0.0, 1.0, a * h / 4.0)),
        (x_only(), u2(a * h / 2.0, 1.0 - a, 0.0)),
        (x_only(), u2(0.0, 1.0, -a * h / 4.0)),
        (x_only(), u2(-a * h, 1.0 + a, 0.0)),
    ];
    BlockTemplate::new(
        MapFamily::K2Boundary { ell, h, alpha },
        ell,
        h,
        Profile::Quintic,
        five(BOUNDARY_REGIONS, boundary_curves(h), h, maps),
    )
}

/// Period-doubling cell for the shear wells; the sawtooth sits in `u₁`.
pub fn k1_cell_template(ell: f64, h: f64, alpha: f64, profile: Profile) -> Arc<BlockTemplate> {
    let a = alpha;
    let u1 = |c0: f64, cy: f64, cg: f64| Component { c0, cx: 1.0, cy, cg, ..Default::default() };
    let maps = [
        (u1(0.0, a, 0.0), y_only()),
        (u1(a * h / 4.0, -a, a * h / 4.0), y_only()),
        (u1(-a * h / 2.0, a, 0.0), y_only()),
        (u1(3.0 * a * h / 4.0, -a, -a * h / 4.0), y_only()),
        (u1(-a * h, a, 0.0), y_only()),
    ];
    BlockTemplate::new(
        MapFamily::K1Cell { ell, h, alpha },
        ell,
        h,
        profile,
        five(DOUBLING_REGIONS, doubling_curves(h), h, maps),
    )
}

/// Boundary-layer cell for the shear wells.
pub fn k1_boundary_template(ell: f64, h: f64, alpha: f64, profile: Profile) -> Arc<BlockTemplate> {
    let a = alpha;
    let u1 = |c0: f64, cy: f64, cg: f64| Component { c0, cx: 1.0, cy, cg, ..Default::default() };
    let maps = [
        (u1(0.0, a, 0.0), y_only()),
        (u1(0.0, 0.0, a * h / 4.0), y_only()),
        (u1(a * h / 2.0, -a, 0.0), y_only()),
        (u1(0.0, 0.0, -a * h / 4.0), y_only()),
        (u1(-a * h, a, 0.0), y_only()),
    ];
    BlockTemplate::new(
        MapFamily::K1Boundary { ell, h, alpha },
        ell,
        h,
        profile,
        five(BOUNDARY_REGIONS, boundary_curves(h), h, maps),
    )
}

/// One period of the exact laminate `w_h` on `[0, w] × [0, h]`.
pub fn laminate_template(case: WellCase, alpha: f64, w: f64, h: f64) -> Arc<BlockTemplate> {
    let a = alpha;
    let pieces = [(0.0, 1.0), (a * h / 2.0, -1.0), (-a * h, 1.0)];
    let bounds = [0.0, h / 4.0, 3.0 * h / 4.0, h];
    let regions = ["up", "down", "up"];
    let cells = (0..3)
        .map(|k| {
            let (c0, slope) = pieces[k];
            let (u1, u2) = match case {
                WellCase::K2 => (x_only(), Component::affine(c0, 0.0, 1.0 + a * slope)),
                WellCase::K1 => (Component::affine(c0, 1.0, a * slope), y_only()),
            };
            sub(regions[k], Curve::flat(bounds[k]), Curve::flat(bounds[k + 1]), u1, u2)
        })
        .collect();
    BlockTemplate::new(MapFamily::SawtoothShear { h, alpha, case }, w, h, Profile::Quintic, cells)
}

fn single(template: Arc<BlockTemplate>, origin: [f64; 2]) -> Result<PiecewiseDeformation, ConstructionError> {
    let d = Rect::new(origin[0], origin[1], template.ell, template.h)?;
    Ok(PiecewiseDeformation::from_blocks(d, vec![Block::at(template, origin)])?)
}

/// Period-doubling cell for `K₂` on `origin + (0, ℓ) × (0, h)`.
pub fn k2_cell(origin: [f64; 2], ell: f64, h: f64, alpha: f64) -> Result<PiecewiseDeformation, ConstructionError> {
    check_cell(ell, h, alpha)?;
    single(k2_cell_template(ell, h, alpha), origin)
}

/// Boundary-layer cell for `K₂`.
pub fn k2_boundary_cell(origin: [f64; 2], ell: f64, h: f64, alpha: f64) -> Result<PiecewiseDeformation, ConstructionError> {
    check_cell(ell, h, alpha)?;
    single(k2_boundary_template(ell, h, alpha), origin)
}

/// Period-doubling cell for `K₁`.
pub fn k1_cell(origin: [f64; 2], ell: f64, h: f64, alpha: f64, profile: Profile) -> Result<PiecewiseDeformation, ConstructionError> {
    check_cell(ell, h, alpha)?;
    single(k1_cell_template(ell, h, alpha, profile), origin)
}

/// Boundary-layer cell for `K₁`.
pub fn k1_boundary_cell(
    origin: [f64; 2],
    ell: f64,
    h: f64,
    alpha: f64,
    profile: Profile,
) -> Result<PiecewiseDeformation, ConstructionError> {
    check_cell(ell, h, alpha)?;
    single(k1_boundary_template(ell, h, alpha, profile), origin)
}

/// Exact laminate `w_h` on `rect`; the height must be a multiple of `h`.
pub fn laminate(case: WellCase, alpha: f64, h: f64, rect: Rect) -> Result<PiecewiseDeformation, ConstructionError> {
    let periods = rect.height / h;
    let count = periods.round();
    if count < 1.0 || (periods - count).abs() > 1e-9 * periods {
        return Err(ConstructionError::Precondition(format!(
            "laminate height {} is not a multiple of the period {h}",
            rect.height
        )));
    }
    let count = count as usize;
    let t = laminate_template(case, alpha, rect.width, h);
    let blocks = (0..count)
        .map(|m| Block::at(t.clone(), [rect.x0, rect.y0 + rect.height * (m as f64 / count as f64)]))
        .collect();
    Ok(PiecewiseDeformation::from_blocks(rect, blocks)?)
}

/// Geometric refinement schedule of a branched assembly.
#[derive(Clone, Debug, PartialEq)]
pub struct BranchingSchedule {
    pub case: WellCase,
    pub theta: f64,
    pub n: usize,
    pub tau: usize,
    /// `x_i = (L/2) θⁱ`, `i = 0..=τ`.
    pub x: Vec<f64>,
    /// `h_i = H / (2ⁱ N)`.
    pub h: Vec<f64>,
    /// `ℓ_i = θⁱ (1 - θ) L / 2`.
    pub ell: Vec<f64>,
    /// `h₀ > ℓ₀`: the half domain is a single boundary-layer column.
    pub degenerate: bool,
    pub length: f64,
    pub height: f64,
}

impl BranchingSchedule {
    /// Number of blocks in the full (two-sided) assembly.
    pub fn cell_count(&self) -> usize {
        let stripes: usize = (0..self.tau).map(|i| self.n << i).sum();
        2 * (stripes + (self.n << self.tau))
    }
}

/// Default geometric factor: `2^{-5/4}` for `K₂`, `1/3` for `K₁`.
pub fn default_theta(case: WellCase) -> f64 {
    match case {
        WellCase::K2 => 2f64.powf(-1.25),
        WellCase::K1 => 1.0 / 3.0,
    }
}

/// `⌈v⌉`, treating values within a few ulps of an integer as that integer.
fn tolerant_ceil(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() <= 1e-12 * v.abs().max(1.0) {
        r
    } else {
        v.ceil()
    }
}

/// Oscillation count at the centre line.
pub fn oscillation_count(case: WellCase, alpha: f64, eps: f64, l: f64, h: f64) -> usize {
    let v = match case {
        WellCase::K2 => alpha.powf(0.2) * h / (eps.powf(0.2) * l.powf(0.8)) + 4.0 * h / l,
        WellCase::K1 => alpha.powf(1.0 / 3.0) * h / (eps.powf(1.0 / 3.0) * l.powf(2.0 / 3.0)) + 4.0 * h / l,
    };
    tolerant_ceil(v).max(1.0) as usize
}

pub fn branching_schedule(case: WellCase, alpha: f64, eps: f64, l: f64, h: f64) -> Result<BranchingSchedule, ConstructionError> {
    branching_schedule_with(case, alpha, eps, l, h, None)
}

/// As [`branching_schedule`] with an optional `θ ∈ (1/4, 1/2)` override.
pub fn branching_schedule_with(
    case: WellCase,
    alpha: f64,
    eps: f64,
    l: f64,
    h: f64,
    theta: Option<f64>,
) -> Result<BranchingSchedule, ConstructionError> {
    for (name, v) in [("epsilon", eps), ("L", l), ("H", h)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(ConstructionError::Precondition(format!("{name} must be positive, got {v}")));
        }
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(ConstructionError::Precondition(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let theta = theta.unwrap_or_else(|| default_theta(case));
    if !(theta > 0.25 && theta < 0.5) {
        return Err(ConstructionError::Precondition(format!("theta must lie in (1/4, 1/2), got {theta}")));
    }
    let n = oscillation_count(case, alpha, eps, l, h);
    let hi = |i: usize| h / ((1u64 << i) as f64 * n as f64);
    let li = |i: usize| theta.powi(i as i32) * (1.0 - theta) * l / 2.0;
    let degenerate = hi(0) > li(0);
    let mut tau = 0;
    if !degenerate {
        while tau < 60 && hi(tau + 1) <= li(tau + 1) {
            tau += 1;
        }
    }
    Ok(BranchingSchedule {
        case,
        theta,
        n,
        tau,
        x: (0..=tau).map(|i| l / 2.0 * theta.powi(i as i32)).collect(),
        h: (0..=tau).map(hi).collect(),
        ell: (0..=tau).map(li).collect(),
        degenerate,
        length: l,
        height: h,
    })
}

/// Options for the global assemblies.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct AssemblyOptions {
    /// Profile of the shear cells; the stretch cells always use the quintic.
    pub k1_profile: Profile,
}

/// Left half of the branched assembly on `(0, L/2) × (0, H)`.
fn left_half(spec: &WellSpec, s: &BranchingSchedule, opts: AssemblyOptions) -> Result<PiecewiseDeformation, ConstructionError> {
    let alpha = spec.alpha();
    let (l, hh) = (s.length, s.height);
    let mut blocks = Vec::with_capacity(s.cell_count() / 2);
    let column = |blocks: &mut Vec<Block>, t: Arc<BlockTemplate>, x: f64, count: usize| {
        for m in 0..count {
            blocks.push(Block::new(t.clone(), Frame::at([x, hh * (m as f64 / count as f64)])));
        }
    };
    for i in 0..s.tau {
        let t = match spec.case() {
            WellCase::K2 => k2_cell_template(s.ell[i], s.h[i], alpha),
            WellCase::K1 => k1_cell_template(s.ell[i], s.h[i], alpha, opts.k1_profile),
        };
        column(&mut blocks, t, s.x[i + 1], s.n << i);
    }
    let (xb, hb) = (s.x[s.tau], s.h[s.tau]);
    let t = match spec.case() {
        WellCase::K2 => k2_boundary_template(xb, hb, alpha),
        WellCase::K1 => k1_boundary_template(xb, hb, alpha, opts.k1_profile),
    };
    column(&mut blocks, t, 0.0, s.n << s.tau);
    Ok(PiecewiseDeformation::from_blocks(Rect::domain(l / 2.0, hh)?, blocks)?)
}

/// Branched field on `Ω = (0, L) × (0, H)`.
///
/// The left half refines towards `x = 0`. The right half is its mirror image
/// for `K₂` and its point reflection through the centre for `K₁`; the plain
/// mirror would flip the sign of the shear sawtooth at `x = L/2`.
pub fn assemble_branched(spec: &WellSpec, schedule: &BranchingSchedule, omega: Rect) -> Result<PiecewiseDeformation, ConstructionError> {
    assemble_branched_with(spec, schedule, omega, AssemblyOptions::default())
}

pub fn assemble_branched_with(
    spec: &WellSpec,
    schedule: &BranchingSchedule,
    omega: Rect,
    opts: AssemblyOptions,
) -> Result<PiecewiseDeformation, ConstructionError> {
    let tol = 1e-12 * omega.scale();
    if omega.x0 != 0.0 || omega.y0 != 0.0 || (omega.width - schedule.length).abs() > tol || (omega.height - schedule.height).abs() > tol {
        return Err(ConstructionError::Precondition(format!(
            "schedule built for (0,{})x(0,{}) does not match domain {:?}",
            schedule.length, schedule.height, omega
        )));
    }
    if schedule.case != spec.case() {
        return Err(ConstructionError::Precondition("schedule and well set disagree on the case".into()));
    }
    let left = left_half(spec, schedule, opts)?;
    let right = match spec.case() {
        WellCase::K2 => left.mirror_x(omega.width / 2.0)?,
        WellCase::K1 => left.point_reflect([omega.width / 2.0, omega.height / 2.0]),
    };
    Ok(left.join(&right)?)
}

/// Shear construction with stripes along `e₂`: the horizontal assembly on
/// `(0, H) × (0, L)` conjugated by the coordinate swap.
pub fn vertical_branched_k1(spec: &WellSpec, eps: f64, l: f64, h: f64) -> Result<PiecewiseDeformation, ConstructionError> {
    vertical_branched_k1_with(spec, eps, l, h, None, AssemblyOptions::default())
}

pub fn vertical_branched_k1_with(
    spec: &WellSpec,
    eps: f64,
    l: f64,
    h: f64,
    theta: Option<f64>,
    opts: AssemblyOptions,
) -> Result<PiecewiseDeformation, ConstructionError> {
    if spec.case() != WellCase::K1 {
        return Err(ConstructionError::Precondition("the rotated construction is only defined for K1".into()));
    }
    let s = branching_schedule_with(WellCase::K1, spec.alpha(), eps, h, l, theta)?;
    let u = assemble_branched_with(spec, &s, Rect::domain(h, l)?, opts)?;
    Ok(u.rotate_90())
}

/// Horizontal branched field with the default schedule.
pub fn horizontal_branched(spec: &WellSpec, eps: f64, l: f64, h: f64) -> Result<PiecewiseDeformation, ConstructionError> {
    let s = branching_schedule(spec.case(), spec.alpha(), eps, l, h)?;
    assemble_branched(spec, &s, Rect::domain(l, h)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ConstructionKind {
    Identity,
    Horizontal,
    Vertical,
}

impl ConstructionKind {
    pub fn label(&self) -> &'static str {
        match self {
            ConstructionKind::Identity => "identity",
            ConstructionKind::Horizontal => "horizontal",
            ConstructionKind::Vertical => "vertical",
        }
    }
}

#[derive(Clone, Debug)]
pub struct BestConstruction {
    pub field: PiecewiseDeformation,
    pub energy: EnergyBreakdown,
    pub kind: ConstructionKind,
    /// Every candidate that was evaluated, in evaluation order.
    pub candidates: Vec<(ConstructionKind, EnergyBreakdown)>,
}

/// Lowest-energy field among identity, horizontal and (for `K₁`) vertical.
pub fn best_construction(
    spec: &WellSpec,
    eps: f64,
    l: f64,
    h: f64,
    quad: &QuadratureSpec,
) -> Result<BestConstruction, ConstructionError> {
    let omega = Rect::domain(l, h)?;
    let mut fields = vec![
        (ConstructionKind::Identity, PiecewiseDeformation::identity(omega)),
        (ConstructionKind::Horizontal, horizontal_branched(spec, eps, l, h)?),
    ];
    if spec.case() == WellCase::K1 {
        fields.push((ConstructionKind::Vertical, vertical_branched_k1(spec, eps, l, h)?));
    }
    let mut candidates = Vec::new();
    let mut best: Option<(usize, EnergyBreakdown)> = None;
    for (i, (kind, f)) in fields.iter().enumerate() {
        let e = total_energy(f, spec, eps, quad);
        candidates.push((*kind, e));
        if best.as_ref().map_or(true, |(_, b)| e.total < b.total) {
            best = Some((i, e));
        }
    }
    let (i, energy) = best.expect("at least one candidate");
    let (kind, field) = fields.swap_remove(i);
    Ok(BestConstruction { field, energy, kind, candidates })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::{dist_to_wells, Mat2};
    use crate::profile::sawtooth;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn max_trace_residual(f: &PiecewiseDeformation, expected: impl Fn([f64; 2]) -> [f64; 2], pts: &[[f64; 2]]) -> f64 {
        pts.iter()
            .map(|&p| {
                let u = f.value(p).unwrap();
                let e = expected(p);
                (u[0] - e[0]).hypot(u[1] - e[1])
            })
            .fold(0.0, f64::max)
    }

    fn edge_points(x0: f64, y0: f64, ell: f64, h: f64) -> [Vec<[f64; 2]>; 4] {
        let s: Vec<f64> = (0..=200).map(|k| k as f64 / 200.0).collect();
        [
            s.iter().map(|t| [x0 + t * ell, y0]).collect(),
            s.iter().map(|t| [x0 + t * ell, y0 + h]).collect(),
            s.iter().map(|t| [x0, y0 + t * h]).collect(),
            s.iter().map(|t| [x0 + ell, y0 + t * h]).collect(),
        ]
    }

    #[test]
    fn k2_cell_traces() {
        let (x0, y0, ell, h, a) = (0.3, 0.2, 0.5, 0.1, 0.2);
        let c = k2_cell([x0, y0], ell, h, a).unwrap();
        let [bot, top, left, right] = edge_points(x0, y0, ell, h);
        assert!(max_trace_residual(&c, |p| p, &bot) < 1e-15);
        assert!(max_trace_residual(&c, |p| p, &top) < 1e-15);
        assert!(max_trace_residual(&c, |p| [p[0], p[1] + a * sawtooth(h / 2.0, p[1] - y0)], &left) < 1e-15);
        assert!(max_trace_residual(&c, |p| [p[0], p[1] + a * sawtooth(h, p[1] - y0)], &right) < 1e-15);
        assert!(c.coverage_check().continuity_residual < 1e-15);
    }

    #[test]
    fn k2_boundary_cell_traces() {
        let (x0, y0, ell, h, a) = (0.0, 0.4, 0.3, 0.05, 0.1);
        let c = k2_boundary_cell([x0, y0], ell, h, a).unwrap();
        let [bot, top, left, right] = edge_points(x0, y0, ell, h);
        for e in [&bot, &top, &left] {
            assert!(max_trace_residual(&c, |p| p, e) < 1e-15);
        }
        assert!(max_trace_residual(&c, |p| [p[0], p[1] + a * sawtooth(h, p[1] - y0)], &right) < 1e-15);
        assert!(c.coverage_check().continuity_residual < 1e-15);
    }

    #[test]
    fn k1_cell_traces() {
        for profile in [Profile::Quintic, Profile::Linear] {
            let (x0, y0, ell, h, a) = (1.0, 0.0, 0.4, 0.2, 0.3);
            let c = k1_cell([x0, y0], ell, h, a, profile).unwrap();
            let [bot, top, left, right] = edge_points(x0, y0, ell, h);
            assert!(max_trace_residual(&c, |p| p, &bot) < 1e-15);
            assert!(max_trace_residual(&c, |p| p, &top) < 1e-15);
            assert!(max_trace_residual(&c, |p| [p[0] + a * sawtooth(h / 2.0, p[1] - y0), p[1]], &left) < 1e-15);
            assert!(max_trace_residual(&c, |p| [p[0] + a * sawtooth(h, p[1] - y0), p[1]], &right) < 1e-15);
            assert!(c.coverage_check().continuity_residual < 1e-15);
        }
    }

    #[test]
    fn k1_boundary_cell_traces() {
        let (x0, y0, ell, h, a) = (0.0, 0.0, 0.3, 0.1, 0.1);
        let c = k1_boundary_cell([x0, y0], ell, h, a, Profile::Quintic).unwrap();
        let [bot, top, left, right] = edge_points(x0, y0, ell, h);
        for e in [&bot, &top, &left] {
            assert!(max_trace_residual(&c, |p| p, e) < 1e-15);
        }
        assert!(max_trace_residual(&c, |p| [p[0] + a * sawtooth(h, p[1] - y0), p[1]], &right) < 1e-15);
    }

    #[test]
    fn exact_well_regions() {
        let a = 0.2;
        let k2 = WellSpec::new(WellCase::K2, a).unwrap();
        let k1 = WellSpec::new(WellCase::K1, a).unwrap();
        let (ell, h) = (1.0, 0.25);
        let c = k2_cell([0.0, 0.0], ell, h, a).unwrap();
        // deep inside ω₁ and ω₅
        for p in [[0.5, 0.01], [0.5, 0.245], [0.02, 0.02]] {
            assert_eq!(c.evaluate(p).unwrap().1, k2.b());
        }
        let b = k2_boundary_cell([0.0, 0.0], ell, h, a).unwrap();
        assert_eq!(b.evaluate([0.9, 0.02]).unwrap().1, k2.b());
        assert_eq!(b.evaluate([0.9, 0.125]).unwrap().1, k2.a());
        assert_eq!(b.evaluate([0.9, 0.24]).unwrap().1, k2.b());
        let c1 = k1_cell([0.0, 0.0], ell, h, a, Profile::Quintic).unwrap();
        assert_eq!(c1.evaluate([0.5, 0.01]).unwrap().1, k1.b());
        let b1 = k1_boundary_cell([0.0, 0.0], ell, h, a, Profile::Quintic).unwrap();
        for p in [[0.9, 0.02], [0.9, 0.125], [0.9, 0.24]] {
            assert!(dist_to_wells(&b1.evaluate(p).unwrap().1, &k1).distance < 1e-15);
        }
        assert_eq!(b1.evaluate([0.9, 0.125]).unwrap().1, k1.a());
    }

    #[test]
    fn k2_middle_region_gradient_estimate() {
        let a = 0.1;
        let spec = WellSpec::new(WellCase::K2, a).unwrap();
        let (ell, h) = (1.0, 0.125);
        let c = k2_cell([0.0, 0.0], ell, h, a).unwrap();
        let mut worst = 0.0_f64;
        for k in 1..50 {
            let x = k as f64 / 50.0 * ell;
            let g = crate::profile::quintic_jet(x / ell)[0];
            let y = h / 2.0 + 0.0;
            let lo = 3.0 * h / 8.0 + h * g / 8.0;
            let up = 5.0 * h / 8.0 - h * g / 8.0;
            if up - lo < 1e-9 {
                continue;
            }
            let y = y.clamp(lo + 1e-12, up - 1e-12);
            let d = c.evaluate([x, y]).unwrap().1 - spec.b();
            worst = worst.max(d.norm() / (a * h * h / (ell * ell)));
        }
        // |∂₁v₁ - 1| = α(1-α)|γ''| h²/(16ℓ²) with max|γ''| = 10/√3
        assert!(worst <= (1.0 - a) * 10.0 / 3f64.sqrt() / 16.0 + 1e-12, "{worst}");
    }

    #[test]
    fn oversized_cells_are_rejected() {
        assert!(k2_cell([0.0, 0.0], 0.1, 0.2, 0.1).is_err());
        assert!(k1_boundary_cell([0.0, 0.0], 0.1, 0.2, 0.1, Profile::Quintic).is_err());
        assert!(k2_cell([0.0, 0.0], 0.2, 0.2, 1.5).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cells = [
            k2_cell([0.0, 0.0], 1.0, 0.25, 0.2).unwrap(),
            k2_boundary_cell([0.0, 0.0], 1.0, 0.25, 0.2).unwrap(),
            k1_cell([0.0, 0.0], 1.0, 0.25, 0.2, Profile::Quintic).unwrap(),
            k1_boundary_cell([0.0, 0.0], 1.0, 0.25, 0.2, Profile::Quintic).unwrap(),
        ];
        let step = 1e-6 * 0.25;
        for c in &cells {
            let mut checked = 0;
            while checked < 250 {
                let p = [rng.gen_range(0.01..0.99), rng.gen_range(0.005..0.245)];
                let cell = c.locate(p).unwrap();
                // stay clear of interfaces so both stencil points see one map
                let ok = [[step, 0.0], [-step, 0.0], [0.0, step], [0.0, -step]]
                    .iter()
                    .all(|d| c.locate([p[0] + d[0] * 4.0, p[1] + d[1] * 4.0]).unwrap() == cell);
                if !ok {
                    continue;
                }
                checked += 1;
                let (_, g) = c.evaluate(p).unwrap();
                let fd = |d: [f64; 2]| {
                    let up = c.value([p[0] + d[0], p[1] + d[1]]).unwrap();
                    let dn = c.value([p[0] - d[0], p[1] - d[1]]).unwrap();
                    [(up[0] - dn[0]) / (2.0 * step), (up[1] - dn[1]) / (2.0 * step)]
                };
                let gx = fd([step, 0.0]);
                let gy = fd([0.0, step]);
                let num = Mat2::new(gx[0], gy[0], gx[1], gy[1]);
                assert!((num - g).norm() <= 1e-6 * g.norm(), "{p:?}: {num} vs {g}");

                let t = c.second_gradient(p).unwrap();
                let gpx = c.evaluate([p[0] + step, p[1]]).unwrap().1;
                let gmx = c.evaluate([p[0] - step, p[1]]).unwrap().1;
                let gpy = c.evaluate([p[0], p[1] + step]).unwrap().1;
                let gmy = c.evaluate([p[0], p[1] - step]).unwrap().1;
                let dx = (gpx - gmx) * (1.0 / (2.0 * step));
                let dy = (gpy - gmy) * (1.0 / (2.0 * step));
                let fdt = [[[dx.a11, dy.a11], [dx.a12, dy.a12]], [[dx.a21, dy.a21], [dx.a22, dy.a22]]];
                let mut err = 0.0_f64;
                for i in 0..2 {
                    for a in 0..2 {
                        for b in 0..2 {
                            err = err.max((fdt[i][b][a] - t.0[i][a][b]).abs());
                        }
                    }
                }
                assert!(err <= 1e-6 * t.norm().max(1e-3), "{p:?} err {err} norm {}", t.norm());
            }
        }
    }

    #[test]
    fn schedule_examples() {
        let s = branching_schedule(WellCase::K2, 0.1, 1e-6, 1.0, 1.0).unwrap();
        assert_eq!(s.n, 14);
        assert_eq!(s.theta, 2f64.powf(-1.25));
        let s1 = branching_schedule(WellCase::K1, 0.1, 1e-6, 1.0, 1.0).unwrap();
        // 0.1^{1/3} · 10² + 4 = 50.4159…
        assert_eq!(s1.n, 51);
        assert_eq!(s1.theta, 1.0 / 3.0);
        for s in [&s, &s1] {
            assert!(!s.degenerate);
            assert_eq!(s.x.len(), s.tau + 1);
            for i in 0..=s.tau {
                assert!(s.h[i] <= s.ell[i]);
            }
            let next_h = s.height / ((1u64 << (s.tau + 1)) as f64 * s.n as f64);
            let next_l = s.theta.powi(s.tau as i32 + 1) * (1.0 - s.theta) * s.length / 2.0;
            assert!(next_h > next_l);
            if s.tau >= 1 {
                assert!(s.ell[s.tau] <= 2.0 * s.h[s.tau]);
            }
            assert!(s.height / s.n as f64 <= (1.0 - s.theta) * s.length / 2.0);
        }
        assert!(branching_schedule_with(WellCase::K1, 0.1, 1e-6, 1.0, 1.0, Some(0.6)).is_err());
        assert!(branching_schedule(WellCase::K1, 0.1, -1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn assembled_fields_are_continuous_with_identity_trace() {
        for case in [WellCase::K1, WellCase::K2] {
            let spec = WellSpec::new(case, 0.1).unwrap();
            let s = branching_schedule(case, 0.1, 1e-4, 1.0, 0.7).unwrap();
            let f = assemble_branched(&spec, &s, Rect::domain(1.0, 0.7).unwrap()).unwrap();
            assert_eq!(f.block_count(), s.cell_count());
            let r = f.coverage_check();
            assert!(r.passes(1e-12), "{case:?}: {r:?}");
            // stripe lines carry the sawtooth of the local period
            for i in 0..s.tau {
                for k in 0..97 {
                    let y = 0.7 * k as f64 / 96.0;
                    let u = f.value([s.x[i], y]).unwrap();
                    let z = 0.1 * sawtooth(s.h[i], y);
                    let e = match case {
                        WellCase::K2 => [s.x[i], y + z],
                        WellCase::K1 => [s.x[i] + z, y],
                    };
                    assert!((u[0] - e[0]).abs() < 1e-13 && (u[1] - e[1]).abs() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn vertical_field_has_identity_trace() {
        let spec = WellSpec::new(WellCase::K1, 0.1).unwrap();
        let v = vertical_branched_k1(&spec, 1e-4, 0.3, 1.0).unwrap();
        assert_eq!(v.domain(), Rect::domain(0.3, 1.0).unwrap());
        let r = v.coverage_check();
        assert!(r.passes(1e-12), "{r:?}");
    }
}
