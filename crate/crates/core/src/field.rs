//! Piecewise-analytic deformations.
//!
//! A field is a list of blocks. Each block places a shared [`BlockTemplate`]
//! (a lemma cell in local coordinates `[0, ℓ] × [0, h]`, split into graph
//! bounded sub-cells with closed-form maps) through an affine isometry on the
//! domain and one on the values. Mirrors and rotations of a whole field are
//! kept on a lazy transform stack and only baked into the block frames by
//! [`PiecewiseDeformation::join`].

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use crate::algebra::{swap_matrix, Mat2, WellCase};
use crate::profile::Profile;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("rectangle must have positive finite size, got {width} x {height}")]
    InvalidRect { width: f64, height: f64 },
    #[error("point ({0}, {1}) lies outside the domain")]
    OutsideDomain(f64, f64),
    #[error("point ({0}, {1}) lies on a cell boundary")]
    OnBoundary(f64, f64),
    #[error("block {0} extends outside the domain")]
    BlockOutsideDomain(usize),
    #[error("fields cannot be joined: {0}")]
    Join(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
}

/// Axis-parallel rectangle `(x0, x0 + width) × (y0, y0 + height)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub width: f64,
    pub height: f64,
}

impl Rect {
    pub fn new(x0: f64, y0: f64, width: f64, height: f64) -> Result<Self, FieldError> {
        if !(width > 0.0 && height > 0.0 && width.is_finite() && height.is_finite()) {
            return Err(FieldError::InvalidRect { width, height });
        }
        Ok(Self { x0, y0, width, height })
    }

    /// `(0, L) × (0, H)`.
    pub fn domain(l: f64, h: f64) -> Result<Self, FieldError> {
        Self::new(0.0, 0.0, l, h)
    }

    pub fn x1(&self) -> f64 {
        self.x0 + self.width
    }

    pub fn y1(&self) -> f64 {
        self.y0 + self.height
    }

    pub fn area(&self) -> f64 {
        self.width * self.height
    }

    pub fn scale(&self) -> f64 {
        self.width.max(self.height)
    }

    pub fn contains(&self, p: [f64; 2], tol: f64) -> bool {
        p[0] >= self.x0 - tol && p[0] <= self.x1() + tol && p[1] >= self.y0 - tol && p[1] <= self.y1() + tol
    }

    fn from_corners(a: [f64; 2], b: [f64; 2]) -> Self {
        Self {
            x0: a[0].min(b[0]),
            y0: a[1].min(b[1]),
            width: (a[0] - b[0]).abs(),
            height: (a[1] - b[1]).abs(),
        }
    }

    fn map(&self, iso: &Isometry) -> Self {
        Self::from_corners(iso.apply([self.x0, self.y0]), iso.apply([self.x1(), self.y1()]))
    }
}

/// Boundary curve `y = c0 + c1 γ(x / ℓ)` in local block coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Curve {
    pub c0: f64,
    pub c1: f64,
}

impl Curve {
    pub const fn new(c0: f64, c1: f64) -> Self {
        Self { c0, c1 }
    }

    pub const fn flat(c0: f64) -> Self {
        Self { c0, c1: 0.0 }
    }

    pub fn at(&self, gamma: f64) -> f64 {
        self.c0 + self.c1 * gamma
    }
}

/// One scalar component of a cell map,
/// `c0 + cx X + cy Y + cg γ(s) + γ'(s) (d0 + dg γ(s) + dy Y)` with `s = X / ℓ`.
///
/// Every map in the period-doubling and boundary-layer cells has this form.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Component {
    pub c0: f64,
    pub cx: f64,
    pub cy: f64,
    pub cg: f64,
    pub d0: f64,
    pub dg: f64,
    pub dy: f64,
}

impl Component {
    pub fn affine(c0: f64, cx: f64, cy: f64) -> Self {
        Self { c0, cx, cy, ..Default::default() }
    }

    fn value(&self, x: f64, y: f64, j: &[f64; 4]) -> f64 {
        self.c0 + self.cx * x + self.cy * y + self.cg * j[0] + j[1] * (self.d0 + self.dg * j[0] + self.dy * y)
    }

    fn grad(&self, y: f64, j: &[f64; 4], ell: f64) -> [f64; 2] {
        let inner = self.d0 + self.dg * j[0] + self.dy * y;
        [
            self.cx + (self.cg * j[1] + j[2] * inner + self.dg * j[1] * j[1]) / ell,
            self.cy + self.dy * j[1],
        ]
    }

    fn hess(&self, y: f64, j: &[f64; 4], ell: f64) -> [[f64; 2]; 2] {
        let inner = self.d0 + self.dg * j[0] + self.dy * y;
        let xx = (self.cg * j[2] + j[3] * inner + 3.0 * self.dg * j[1] * j[2]) / (ell * ell);
        let xy = self.dy * j[2] / ell;
        [[xx, xy], [xy, 0.0]]
    }

    fn is_affine(&self, profile: Profile) -> bool {
        match profile {
            Profile::Linear => true,
            Profile::Quintic => self.cg == 0.0 && self.d0 == 0.0 && self.dg == 0.0 && self.dy == 0.0,
        }
    }
}

/// Closed-form map of a sub-cell, in local coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct CellMap {
    pub u: [Component; 2],
}

impl CellMap {
    pub fn new(u1: Component, u2: Component) -> Self {
        Self { u: [u1, u2] }
    }
}

/// `T[i][a][b] = ∂_a ∂_b u_i`.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Tensor3(pub [[[f64; 2]; 2]; 2]);

impl Tensor3 {
    pub fn norm(&self) -> f64 {
        let mut s = 0.0;
        for i in 0..2 {
            for a in 0..2 {
                for b in 0..2 {
                    s += self.0[i][a][b] * self.0[i][a][b];
                }
            }
        }
        s.sqrt()
    }

    /// `T'[i][a][b] = V_ij T[j][c][d] W_ca W_db`.
    fn transform(&self, v: &Mat2, w: &Mat2) -> Tensor3 {
        let ve = [[v.a11, v.a12], [v.a21, v.a22]];
        let we = [[w.a11, w.a12], [w.a21, w.a22]];
        let mut out = [[[0.0; 2]; 2]; 2];
        for (i, oi) in out.iter_mut().enumerate() {
            for (a, oia) in oi.iter_mut().enumerate() {
                for (b, o) in oia.iter_mut().enumerate() {
                    let mut s = 0.0;
                    for j in 0..2 {
                        for c in 0..2 {
                            for d in 0..2 {
                                s += ve[i][j] * self.0[j][c][d] * we[c][a] * we[d][b];
                            }
                        }
                    }
                    *o = s;
                }
            }
        }
        Tensor3(out)
    }
}

/// Which analytic family a block template belongs to, with its parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MapFamily {
    Identity,
    /// `w_h`: the exact laminate with sawtooth period `h`.
    SawtoothShear { h: f64, alpha: f64, case: WellCase },
    K2Cell { ell: f64, h: f64, alpha: f64 },
    K2Boundary { ell: f64, h: f64, alpha: f64 },
    K1Cell { ell: f64, h: f64, alpha: f64 },
    K1Boundary { ell: f64, h: f64, alpha: f64 },
}

impl MapFamily {
    pub fn name(&self) -> &'static str {
        match self {
            MapFamily::Identity => "identity",
            MapFamily::SawtoothShear { .. } => "sawtooth",
            MapFamily::K2Cell { .. } => "k2_cell",
            MapFamily::K2Boundary { .. } => "k2_boundary",
            MapFamily::K1Cell { .. } => "k1_cell",
            MapFamily::K1Boundary { .. } => "k1_boundary",
        }
    }
}

/// Graph-bounded piece of a template: `lower(X) < Y < upper(X)`, `0 < X < ℓ`.
#[derive(Clone, Debug, PartialEq)]
pub struct SubCell {
    pub region: &'static str,
    pub lower: Curve,
    pub upper: Curve,
    pub map: CellMap,
}

static NEXT_TEMPLATE_ID: AtomicU64 = AtomicU64::new(1);

/// A lemma cell in local coordinates; sub-cells are ordered bottom to top.
#[derive(Debug)]
pub struct BlockTemplate {
    id: u64,
    pub family: MapFamily,
    pub ell: f64,
    pub h: f64,
    pub profile: Profile,
    pub cells: Vec<SubCell>,
}

impl BlockTemplate {
    pub fn new(family: MapFamily, ell: f64, h: f64, profile: Profile, cells: Vec<SubCell>) -> Arc<Self> {
        assert!(!cells.is_empty());
        Arc::new(Self {
            id: NEXT_TEMPLATE_ID.fetch_add(1, Ordering::Relaxed),
            family,
            ell,
            h,
            profile,
            cells,
        })
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn jet(&self, x: f64) -> [f64; 4] {
        self.profile.jet(x / self.ell)
    }

    fn tol(&self) -> f64 {
        1e-12 * self.ell.max(self.h)
    }

    /// Sub-cell containing `(x, y)`; points on an interface go to the lower cell.
    pub fn locate(&self, x: f64, y: f64) -> usize {
        let g = self.jet(x)[0];
        let tol = self.tol();
        let last = self.cells.len() - 1;
        self.cells[..last]
            .iter()
            .position(|c| y <= c.upper.at(g) + tol)
            .unwrap_or(last)
    }

    pub fn value(&self, k: usize, x: f64, y: f64) -> [f64; 2] {
        let j = self.jet(x);
        let m = &self.cells[k].map;
        [m.u[0].value(x, y, &j), m.u[1].value(x, y, &j)]
    }

    pub fn gradient(&self, k: usize, x: f64, y: f64) -> Mat2 {
        let j = self.jet(x);
        let m = &self.cells[k].map;
        let g1 = m.u[0].grad(y, &j, self.ell);
        let g2 = m.u[1].grad(y, &j, self.ell);
        Mat2::new(g1[0], g1[1], g2[0], g2[1])
    }

    pub fn value_and_gradient(&self, k: usize, x: f64, y: f64) -> ([f64; 2], Mat2) {
        let j = self.jet(x);
        let m = &self.cells[k].map;
        let g1 = m.u[0].grad(y, &j, self.ell);
        let g2 = m.u[1].grad(y, &j, self.ell);
        (
            [m.u[0].value(x, y, &j), m.u[1].value(x, y, &j)],
            Mat2::new(g1[0], g1[1], g2[0], g2[1]),
        )
    }

    pub fn second_gradient(&self, k: usize, x: f64, y: f64) -> Tensor3 {
        let j = self.jet(x);
        let m = &self.cells[k].map;
        Tensor3([m.u[0].hess(y, &j, self.ell), m.u[1].hess(y, &j, self.ell)])
    }

    /// The map of sub-cell `k` has constant gradient.
    pub fn is_affine(&self, k: usize) -> bool {
        let m = &self.cells[k].map;
        m.u[0].is_affine(self.profile) && m.u[1].is_affine(self.profile)
    }

    /// Exact area of sub-cell `k`.
    pub fn sub_area(&self, k: usize) -> f64 {
        let c = &self.cells[k];
        self.ell * ((c.upper.c0 - c.lower.c0) + (c.upper.c1 - c.lower.c1) * self.profile.mean())
    }

    pub fn area(&self) -> f64 {
        (0..self.cells.len()).map(|k| self.sub_area(k)).sum()
    }

    /// Abscissae in `(0, ℓ)` where an interior interface crosses height `y`.
    fn crossings_at_height(&self, y: f64) -> Vec<f64> {
        let mut out = Vec::new();
        for c in &self.cells[..self.cells.len() - 1] {
            let curve = c.upper;
            if curve.c1 == 0.0 {
                continue;
            }
            let target = (y - curve.c0) / curve.c1;
            if !(target > 0.0 && target < 1.0) {
                continue;
            }
            // γ is increasing on [0, 1]
            let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                if self.profile.jet(mid)[0] < target {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            out.push(0.5 * (lo + hi) * self.ell);
        }
        out
    }

    /// Heights at which interior interfaces meet the vertical line `X = x`.
    fn crossings_at_abscissa(&self, x: f64) -> Vec<f64> {
        let g = self.jet(x)[0];
        self.cells[..self.cells.len() - 1].iter().map(|c| c.upper.at(g)).collect()
    }
}

/// `p ↦ lin p + shift` with orthogonal `lin`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Isometry {
    pub lin: Mat2,
    pub shift: [f64; 2],
}

impl Isometry {
    pub fn identity() -> Self {
        Self { lin: Mat2::identity(), shift: [0.0, 0.0] }
    }

    pub fn translation(shift: [f64; 2]) -> Self {
        Self { lin: Mat2::identity(), shift }
    }

    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        let q = self.lin.apply(p);
        [q[0] + self.shift[0], q[1] + self.shift[1]]
    }

    pub fn apply_inverse(&self, p: [f64; 2]) -> [f64; 2] {
        self.lin.transpose().apply([p[0] - self.shift[0], p[1] - self.shift[1]])
    }

    /// `self ∘ inner`.
    pub fn compose(&self, inner: &Isometry) -> Isometry {
        Isometry {
            lin: self.lin * inner.lin,
            shift: self.apply(inner.shift),
        }
    }

    fn is_signed_permutation(&self) -> bool {
        self.lin.entries().iter().all(|v| *v == 0.0 || v.abs() == 1.0)
    }
}

/// Placement of a template: `u(pos(q)) = val(v(q))` for local `q`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Frame {
    pub pos: Isometry,
    pub val: Isometry,
}

impl Frame {
    pub fn identity() -> Self {
        Self { pos: Isometry::identity(), val: Isometry::identity() }
    }

    /// Local origin at `origin`, values offset the same way.
    pub fn at(origin: [f64; 2]) -> Self {
        Self {
            pos: Isometry::translation(origin),
            val: Isometry::translation(origin),
        }
    }

    pub fn compose(&self, inner: &Frame) -> Frame {
        Frame {
            pos: self.pos.compose(&inner.pos),
            val: self.val.compose(&inner.val),
        }
    }

    /// Physical gradient from a local one.
    pub fn push_gradient(&self, dv: &Mat2) -> Mat2 {
        self.val.lin * *dv * self.pos.lin.transpose()
    }

    pub fn push_second(&self, t: &Tensor3) -> Tensor3 {
        t.transform(&self.val.lin, &self.pos.lin.transpose())
    }

    /// Bit pattern of the linear parts, used as a memoisation key.
    pub fn linear_key(&self) -> [u64; 8] {
        let a = self.pos.lin.entries();
        let b = self.val.lin.entries();
        [
            a[0].to_bits(),
            a[1].to_bits(),
            a[2].to_bits(),
            a[3].to_bits(),
            b[0].to_bits(),
            b[1].to_bits(),
            b[2].to_bits(),
            b[3].to_bits(),
        ]
    }
}

/// A whole-field transformation, `u'(p) = V(u(D⁻¹ p))`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Transform {
    /// `u'(x, y) = (2a - u₁(2a - x, y), u₂(2a - x, y))`.
    MirrorX { axis: f64 },
    /// `v(p) = Z u(Z p)`.
    Rotate90,
    /// `u'(p) = 2c - u(2c - p)`.
    PointReflect { center: [f64; 2] },
    /// `u'(p) = R(angle) u(p)`.
    RotateValues { angle: f64 },
}

impl Transform {
    fn isometries(&self) -> Frame {
        match *self {
            Transform::MirrorX { axis } => {
                let m = Isometry { lin: Mat2::diag(-1.0, 1.0), shift: [2.0 * axis, 0.0] };
                Frame { pos: m, val: m }
            }
            Transform::Rotate90 => {
                let z = Isometry { lin: swap_matrix(), shift: [0.0, 0.0] };
                Frame { pos: z, val: z }
            }
            Transform::PointReflect { center } => {
                let m = Isometry {
                    lin: Mat2::diag(-1.0, -1.0),
                    shift: [2.0 * center[0], 2.0 * center[1]],
                };
                Frame { pos: m, val: m }
            }
            Transform::RotateValues { angle } => Frame {
                pos: Isometry::identity(),
                val: Isometry { lin: Mat2::rotation(angle), shift: [0.0, 0.0] },
            },
        }
    }

    fn describe(&self) -> String {
        match self {
            Transform::MirrorX { axis } => format!("mirror_x({axis})"),
            Transform::Rotate90 => "rotate_90".to_string(),
            Transform::PointReflect { center } => format!("point_reflect({}, {})", center[0], center[1]),
            Transform::RotateValues { angle } => format!("rotate_values({angle})"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Block {
    pub template: Arc<BlockTemplate>,
    pub frame: Frame,
}

impl Block {
    pub fn new(template: Arc<BlockTemplate>, frame: Frame) -> Self {
        Self { template, frame }
    }

    pub fn at(template: Arc<BlockTemplate>, origin: [f64; 2]) -> Self {
        Self { template, frame: Frame::at(origin) }
    }

    /// Footprint in the coordinates the block frame maps into.
    pub fn footprint(&self) -> Rect {
        let t = &self.template;
        Rect::from_corners(self.frame.pos.apply([0.0, 0.0]), self.frame.pos.apply([t.ell, t.h]))
    }
}

/// Reference to sub-cell `sub` of block `block`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct CellRef {
    pub block: usize,
    pub sub: usize,
}

/// Read-only view of one analytic cell.
#[derive(Clone, Copy, Debug)]
pub struct AnalyticCell<'a> {
    pub cell: CellRef,
    pub template: &'a BlockTemplate,
    /// Local-to-physical frame of the enclosing block.
    pub frame: Frame,
}

impl AnalyticCell<'_> {
    pub fn x_interval(&self) -> (f64, f64) {
        (0.0, self.template.ell)
    }

    pub fn sub(&self) -> &SubCell {
        &self.template.cells[self.cell.sub]
    }

    pub fn lower(&self) -> Curve {
        self.sub().lower
    }

    pub fn upper(&self) -> Curve {
        self.sub().upper
    }

    pub fn family(&self) -> MapFamily {
        self.template.family
    }

    pub fn area(&self) -> f64 {
        self.template.sub_area(self.cell.sub)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum JumpGeometry {
    /// `Y = curve(X)` for `X ∈ [x0, x1]` in the local frame of `block`.
    Graph { block: usize, x0: f64, x1: f64, curve: Curve },
    /// Straight segment in the coordinates of the block frames.
    Segment { a: [f64; 2], b: [f64; 2] },
}

/// Interface across which `Du` may jump. `minus` is the cell below or to the
/// left, `plus` the one above or to the right.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JumpCurve {
    pub geometry: JumpGeometry,
    pub minus: CellRef,
    pub plus: CellRef,
}

#[derive(Clone, Debug)]
struct Column {
    x0: f64,
    x1: f64,
    /// Block indices sorted by lower edge.
    blocks: Vec<usize>,
    spans: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, Default)]
struct BlockIndex {
    columns: Vec<Column>,
    tol: f64,
}

impl BlockIndex {
    fn build(blocks: &[Block], scale: f64) -> Self {
        let mut groups: HashMap<(u64, u64), Vec<usize>> = HashMap::new();
        let mut order = Vec::new();
        for (i, b) in blocks.iter().enumerate() {
            let r = b.footprint();
            let key = (r.x0.to_bits(), r.x1().to_bits());
            groups
                .entry(key)
                .or_insert_with(|| {
                    order.push(key);
                    Vec::new()
                })
                .push(i);
        }
        let mut columns: Vec<Column> = order
            .into_iter()
            .map(|key| {
                let mut ids = groups.remove(&key).unwrap();
                ids.sort_by(|&a, &b| {
                    let ra = blocks[a].footprint();
                    let rb = blocks[b].footprint();
                    ra.y0.partial_cmp(&rb.y0).unwrap()
                });
                let spans = ids
                    .iter()
                    .map(|&i| {
                        let r = blocks[i].footprint();
                        (r.y0, r.y1())
                    })
                    .collect();
                Column { x0: f64::from_bits(key.0), x1: f64::from_bits(key.1), blocks: ids, spans }
            })
            .collect();
        columns.sort_by(|a, b| a.x0.partial_cmp(&b.x0).unwrap().then(a.x1.partial_cmp(&b.x1).unwrap()));
        Self { columns, tol: 1e-12 * scale }
    }

    fn locate(&self, p: [f64; 2]) -> Option<usize> {
        let tol = self.tol;
        let start = self.columns.partition_point(|c| c.x1 < p[0] - tol);
        for col in &self.columns[start..] {
            if col.x0 > p[0] + tol {
                break;
            }
            if p[0] > col.x1 + tol {
                continue;
            }
            let k = col.spans.partition_point(|s| s.1 < p[1] - tol);
            if k < col.spans.len() && col.spans[k].0 <= p[1] + tol {
                return Some(col.blocks[k]);
            }
        }
        None
    }
}

/// Summary of [`PiecewiseDeformation::coverage_check`].
#[derive(Clone, Debug, PartialEq)]
pub struct CoverageReport {
    pub domain_area: f64,
    pub cell_area: f64,
    /// `|Σ cell areas - |Ω|| / |Ω|`.
    pub area_residual: f64,
    /// Largest value mismatch across sampled jump curves.
    pub continuity_residual: f64,
    /// Largest `|u(x) - x|` over sampled boundary points.
    pub boundary_residual: f64,
    pub curves_checked: usize,
    pub blocks_outside: usize,
}

impl CoverageReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.area_residual <= 1e-9
            && self.continuity_residual <= tol
            && self.boundary_residual <= tol
            && self.blocks_outside == 0
    }

    pub fn tiles(&self) -> bool {
        self.area_residual <= 1e-9 && self.blocks_outside == 0
    }
}

/// Deformation of a rectangle as a union of analytic cells.
#[derive(Clone, Debug)]
pub struct PiecewiseDeformation {
    domain: Rect,
    inner_domain: Rect,
    blocks: Vec<Block>,
    stack: Vec<Transform>,
    outer: Frame,
    index: BlockIndex,
}

impl PiecewiseDeformation {
    /// `u(x) = x` on `domain`.
    pub fn identity(domain: Rect) -> Self {
        let t = identity_template(domain.width, domain.height);
        Self::from_blocks(domain, vec![Block::at(t, [domain.x0, domain.y0])]).expect("identity block fits")
    }

    pub fn from_blocks(domain: Rect, blocks: Vec<Block>) -> Result<Self, FieldError> {
        let tol = 1e-9 * domain.scale();
        for (i, b) in blocks.iter().enumerate() {
            if !b.frame.pos.is_signed_permutation() {
                return Err(FieldError::Precondition(format!("block {i} is not axis aligned")));
            }
            let r = b.footprint();
            if r.x0 < domain.x0 - tol || r.x1() > domain.x1() + tol || r.y0 < domain.y0 - tol || r.y1() > domain.y1() + tol {
                return Err(FieldError::BlockOutsideDomain(i));
            }
        }
        let index = BlockIndex::build(&blocks, domain.scale());
        Ok(Self {
            domain,
            inner_domain: domain,
            blocks,
            stack: Vec::new(),
            outer: Frame::identity(),
            index,
        })
    }

    pub fn domain(&self) -> Rect {
        self.domain
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn transforms(&self) -> &[Transform] {
        &self.stack
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn cell_count(&self) -> usize {
        self.blocks.iter().map(|b| b.template.cells.len()).sum()
    }

    /// Local-to-physical frame of block `b`, including the transform stack.
    pub fn effective_frame(&self, b: usize) -> Frame {
        self.outer.compose(&self.blocks[b].frame)
    }

    pub fn cells(&self) -> impl Iterator<Item = AnalyticCell<'_>> + '_ {
        self.blocks.iter().enumerate().flat_map(move |(bi, b)| {
            let frame = self.effective_frame(bi);
            (0..b.template.cells.len()).map(move |sub| AnalyticCell {
                cell: CellRef { block: bi, sub },
                template: &b.template,
                frame,
            })
        })
    }

    fn tol(&self) -> f64 {
        1e-12 * self.domain.scale()
    }

    fn locate_inner(&self, q: [f64; 2]) -> Option<(usize, usize, [f64; 2])> {
        let b = self.index.locate(q)?;
        let blk = &self.blocks[b];
        let local = blk.frame.pos.apply_inverse(q);
        let sub = blk.template.locate(local[0], local[1]);
        Some((b, sub, local))
    }

    /// Containing cell of a physical point.
    pub fn locate(&self, p: [f64; 2]) -> Result<CellRef, FieldError> {
        if !self.domain.contains(p, self.tol()) {
            return Err(FieldError::OutsideDomain(p[0], p[1]));
        }
        let q = self.outer.pos.apply_inverse(p);
        self.locate_inner(q)
            .map(|(block, sub, _)| CellRef { block, sub })
            .ok_or(FieldError::OutsideDomain(p[0], p[1]))
    }

    /// `(u(p), Du(p))`.
    pub fn evaluate(&self, p: [f64; 2]) -> Result<([f64; 2], Mat2), FieldError> {
        let cell = self.locate(p)?;
        Ok(self.eval_cell_physical(cell, p))
    }

    pub fn value(&self, p: [f64; 2]) -> Result<[f64; 2], FieldError> {
        self.evaluate(p).map(|(v, _)| v)
    }

    /// Closed form of `cell` at physical point `p`, extended beyond the cell if needed.
    pub fn eval_cell_physical(&self, cell: CellRef, p: [f64; 2]) -> ([f64; 2], Mat2) {
        let frame = self.effective_frame(cell.block);
        let q = frame.pos.apply_inverse(p);
        let (v, dv) = self.blocks[cell.block].template.value_and_gradient(cell.sub, q[0], q[1]);
        (frame.val.apply(v), frame.push_gradient(&dv))
    }

    fn eval_cell_inner(&self, cell: CellRef, q: [f64; 2]) -> ([f64; 2], Mat2) {
        self.eval_cell_physical(cell, self.outer.pos.apply(q))
    }

    /// `D²u(p)`; undefined on cell boundaries.
    pub fn second_gradient(&self, p: [f64; 2]) -> Result<Tensor3, FieldError> {
        if !self.domain.contains(p, self.tol()) {
            return Err(FieldError::OutsideDomain(p[0], p[1]));
        }
        let q = self.outer.pos.apply_inverse(p);
        let (b, sub, local) = self.locate_inner(q).ok_or(FieldError::OutsideDomain(p[0], p[1]))?;
        let t = &self.blocks[b].template;
        let tol = 1e-10 * t.ell.max(t.h);
        let g = t.jet(local[0])[0];
        let c = &t.cells[sub];
        let on_edge = local[0] <= tol
            || local[0] >= t.ell - tol
            || (local[1] - c.lower.at(g)).abs() <= tol
            || (local[1] - c.upper.at(g)).abs() <= tol;
        if on_edge {
            return Err(FieldError::OnBoundary(p[0], p[1]));
        }
        Ok(self.effective_frame(b).push_second(&t.second_gradient(sub, local[0], local[1])))
    }

    /// Point on `curve` at parameter `t ∈ [0, 1]`, in block-frame coordinates.
    fn curve_point_inner(&self, curve: &JumpCurve, t: f64) -> [f64; 2] {
        match curve.geometry {
            JumpGeometry::Graph { block, x0, x1, curve: c } => {
                let b = &self.blocks[block];
                let x = x0 + t * (x1 - x0);
                let y = c.at(b.template.jet(x)[0]);
                b.frame.pos.apply([x, y])
            }
            JumpGeometry::Segment { a, b } => [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])],
        }
    }

    /// Physical point on `curve` at parameter `t`.
    pub fn curve_point(&self, curve: &JumpCurve, t: f64) -> [f64; 2] {
        self.outer.pos.apply(self.curve_point_inner(curve, t))
    }

    /// `|dp/dt|` along `curve`.
    pub fn curve_speed(&self, curve: &JumpCurve, t: f64) -> f64 {
        match curve.geometry {
            JumpGeometry::Graph { block, x0, x1, curve: c } => {
                let tmp = &self.blocks[block].template;
                let x = x0 + t * (x1 - x0);
                let slope = c.c1 * tmp.jet(x)[1] / tmp.ell;
                (x1 - x0) * (1.0 + slope * slope).sqrt()
            }
            JumpGeometry::Segment { a, b } => (b[0] - a[0]).hypot(b[1] - a[1]),
        }
    }

    /// `Du⁺ - Du⁻` at parameter `t`.
    pub fn gradient_jump(&self, curve: &JumpCurve, t: f64) -> Mat2 {
        let q = self.curve_point_inner(curve, t);
        let (_, gp) = self.eval_cell_inner(curve.plus, q);
        let (_, gm) = self.eval_cell_inner(curve.minus, q);
        let d = gp - gm;
        // rounding noise between two evaluations of the same gradient
        if d.norm() <= 64.0 * f64::EPSILON * (gp.norm() + gm.norm()) {
            Mat2::zero()
        } else {
            d
        }
    }

    /// `|Du⁺| + |Du⁻|` at parameter `t`.
    pub fn gradient_scale(&self, curve: &JumpCurve, t: f64) -> f64 {
        let q = self.curve_point_inner(curve, t);
        let (_, gp) = self.eval_cell_inner(curve.plus, q);
        let (_, gm) = self.eval_cell_inner(curve.minus, q);
        gp.norm() + gm.norm()
    }

    /// `|u⁺ - u⁻|` at parameter `t`; zero for a continuous field.
    pub fn value_mismatch(&self, curve: &JumpCurve, t: f64) -> f64 {
        let q = self.curve_point_inner(curve, t);
        let (vp, _) = self.eval_cell_inner(curve.plus, q);
        let (vm, _) = self.eval_cell_inner(curve.minus, q);
        (vp[0] - vm[0]).hypot(vp[1] - vm[1])
    }

    /// Interfaces between sub-cells of block `b`.
    pub fn internal_jumps(&self, b: usize) -> impl Iterator<Item = JumpCurve> + '_ {
        let t = &self.blocks[b].template;
        (0..t.cells.len() - 1).map(move |k| JumpCurve {
            geometry: JumpGeometry::Graph { block: b, x0: 0.0, x1: t.ell, curve: t.cells[k].upper },
            minus: CellRef { block: b, sub: k },
            plus: CellRef { block: b, sub: k + 1 },
        })
    }

    /// Interfaces between neighbouring blocks, split so that each piece has a
    /// single sub-cell on either side.
    pub fn seams(&self) -> Vec<JumpCurve> {
        let tol = 1e-9 * self.domain.scale();
        let mut out = Vec::new();
        let cols = &self.index.columns;
        for col in cols {
            for w in 0..col.blocks.len().saturating_sub(1) {
                let (lo, hi) = (col.blocks[w], col.blocks[w + 1]);
                let y = col.spans[w].1;
                if (col.spans[w + 1].0 - y).abs() <= tol {
                    self.push_segment_pieces(&mut out, [col.x0, y], [col.x1, y], lo, hi);
                }
            }
        }
        for (i, left) in cols.iter().enumerate() {
            for right in &cols[i + 1..] {
                if right.x0 > left.x1 + tol {
                    break;
                }
                if (right.x0 - left.x1).abs() > tol {
                    continue;
                }
                let x = left.x1;
                let (mut a, mut b) = (0, 0);
                while a < left.blocks.len() && b < right.blocks.len() {
                    let (la, lb) = left.spans[a];
                    let (ra, rb) = right.spans[b];
                    let y0 = la.max(ra);
                    let y1 = lb.min(rb);
                    if y1 - y0 > tol {
                        self.push_segment_pieces(&mut out, [x, y0], [x, y1], left.blocks[a], right.blocks[b]);
                    }
                    if lb < rb {
                        a += 1;
                    } else {
                        b += 1;
                    }
                }
            }
        }
        out
    }

    /// Parameters in `(0, 1)` where the sub-cell of `block` changes along `a → b`.
    fn segment_breaks(&self, block: usize, a: [f64; 2], b: [f64; 2], out: &mut Vec<f64>) {
        let blk = &self.blocks[block];
        let t = &blk.template;
        let la = blk.frame.pos.apply_inverse(a);
        let lb = blk.frame.pos.apply_inverse(b);
        let eps = 1e-12;
        if (la[0] - lb[0]).abs() <= 1e-12 * t.ell.max(t.h) {
            let dy = lb[1] - la[1];
            for y in t.crossings_at_abscissa(la[0]) {
                let s = (y - la[1]) / dy;
                if s > eps && s < 1.0 - eps {
                    out.push(s);
                }
            }
        } else {
            let dx = lb[0] - la[0];
            for x in t.crossings_at_height(la[1]) {
                let s = (x - la[0]) / dx;
                if s > eps && s < 1.0 - eps {
                    out.push(s);
                }
            }
        }
    }

    fn push_segment_pieces(&self, out: &mut Vec<JumpCurve>, a: [f64; 2], b: [f64; 2], minus: usize, plus: usize) {
        let mut breaks = vec![0.0, 1.0];
        self.segment_breaks(minus, a, b, &mut breaks);
        self.segment_breaks(plus, a, b, &mut breaks);
        breaks.sort_by(|x, y| x.partial_cmp(y).unwrap());
        breaks.dedup_by(|x, y| (*x - *y).abs() < 1e-12);
        let at = |s: f64| [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])];
        for w in breaks.windows(2) {
            let (pa, pb) = (at(w[0]), at(w[1]));
            let mid = at(0.5 * (w[0] + w[1]));
            let sub_of = |blk: usize| {
                let bl = &self.blocks[blk];
                let l = bl.frame.pos.apply_inverse(mid);
                bl.template.locate(l[0], l[1])
            };
            out.push(JumpCurve {
                geometry: JumpGeometry::Segment { a: pa, b: pb },
                minus: CellRef { block: minus, sub: sub_of(minus) },
                plus: CellRef { block: plus, sub: sub_of(plus) },
            });
        }
    }

    /// All gradient-jump curves: sub-cell interfaces and block seams.
    pub fn jump_curves(&self) -> Vec<JumpCurve> {
        let mut out: Vec<JumpCurve> = (0..self.blocks.len()).flat_map(|b| self.internal_jumps(b)).collect();
        out.extend(self.seams());
        out
    }

    fn with_transform(&self, t: Transform, domain: Rect) -> Self {
        let mut out = self.clone();
        out.outer = t.isometries().compose(&self.outer);
        out.stack.push(t);
        out.domain = domain;
        out
    }

    /// Reflection across the vertical line `x = axis_x`, which must be the
    /// right edge of the domain.
    pub fn mirror_x(&self, axis_x: f64) -> Result<Self, FieldError> {
        let tol = 1e-12 * self.domain.scale();
        if (self.domain.x1() - axis_x).abs() > tol {
            return Err(FieldError::Precondition(format!(
                "mirror axis {axis_x} is not the right domain edge {}",
                self.domain.x1()
            )));
        }
        let t = Transform::MirrorX { axis: axis_x };
        let d = self.domain.map(&t.isometries().pos);
        Ok(self.with_transform(t, d))
    }

    /// `v(p) = Z u(Z p)` on the transposed domain.
    pub fn rotate_90(&self) -> Self {
        let t = Transform::Rotate90;
        let d = self.domain.map(&t.isometries().pos);
        self.with_transform(t, d)
    }

    /// `u'(p) = 2c - u(2c - p)`.
    pub fn point_reflect(&self, center: [f64; 2]) -> Self {
        let t = Transform::PointReflect { center };
        let d = self.domain.map(&t.isometries().pos);
        self.with_transform(t, d)
    }

    /// `R u` for the rotation by `angle`; boundary values are not preserved.
    pub fn rotate_values(&self, angle: f64) -> Self {
        self.with_transform(Transform::RotateValues { angle }, self.domain)
    }

    fn baked_blocks(&self) -> Vec<Block> {
        self.blocks
            .iter()
            .map(|b| Block { template: b.template.clone(), frame: self.outer.compose(&b.frame) })
            .collect()
    }

    /// Union of two fields on adjacent rectangles; transform stacks are baked
    /// into the block frames.
    pub fn join(&self, other: &Self) -> Result<Self, FieldError> {
        let a = self.domain;
        let b = other.domain;
        let x0 = a.x0.min(b.x0);
        let y0 = a.y0.min(b.y0);
        let x1 = a.x1().max(b.x1());
        let y1 = a.y1().max(b.y1());
        let union = Rect::new(x0, y0, x1 - x0, y1 - y0)?;
        let ox = (a.x1().min(b.x1()) - a.x0.max(b.x0)).max(0.0);
        let oy = (a.y1().min(b.y1()) - a.y0.max(b.y0)).max(0.0);
        let tol = 1e-9 * union.area();
        if ox * oy > tol || (a.area() + b.area() - union.area()).abs() > tol {
            return Err(FieldError::Join("domains overlap or do not form a rectangle".into()));
        }
        let mut blocks = self.baked_blocks();
        blocks.extend(other.baked_blocks());
        Self::from_blocks(union, blocks)
    }

    /// Area, continuity and boundary-trace diagnostics.
    pub fn coverage_check(&self) -> CoverageReport {
        let domain_area = self.domain.area();
        let cell_area: f64 = self.blocks.iter().map(|b| b.template.area()).sum();
        let tol = 1e-9 * self.domain.scale();
        let inner = self.inner_domain;
        let blocks_outside = self
            .blocks
            .iter()
            .filter(|b| {
                let r = b.footprint();
                r.x0 < inner.x0 - tol || r.x1() > inner.x1() + tol || r.y0 < inner.y0 - tol || r.y1() > inner.y1() + tol
            })
            .count();

        let curves = self.jump_curves();
        let continuity_residual = curves
            .par_iter()
            .map(|c| {
                (0..64)
                    .map(|k| self.value_mismatch(c, (k as f64 + 0.5) / 64.0))
                    .fold(0.0_f64, f64::max)
                    .max(self.value_mismatch(c, 0.0))
                    .max(self.value_mismatch(c, 1.0))
            })
            .reduce(|| 0.0, f64::max);

        let d = self.domain;
        let mut boundary_residual = 0.0_f64;
        for k in 0..64 {
            let s = k as f64 / 64.0;
            let pts = [
                [d.x0 + s * d.width, d.y0],
                [d.x1(), d.y0 + s * d.height],
                [d.x1() - s * d.width, d.y1()],
                [d.x0, d.y1() - s * d.height],
            ];
            for p in pts {
                let r = match self.value(p) {
                    Ok(u) => (u[0] - p[0]).hypot(u[1] - p[1]),
                    Err(_) => f64::INFINITY,
                };
                boundary_residual = boundary_residual.max(r);
            }
        }
        CoverageReport {
            domain_area,
            cell_area,
            area_residual: (cell_area - domain_area).abs() / domain_area,
            continuity_residual,
            boundary_residual,
            curves_checked: curves.len(),
            blocks_outside,
        }
    }

    /// Drop block `b`; used to build negative controls.
    #[doc(hidden)]
    pub fn without_block(&self, b: usize) -> Self {
        let mut out = self.clone();
        out.blocks.remove(b);
        out.index = BlockIndex::build(&out.blocks, out.inner_domain.scale());
        out
    }

    /// Plain-text listing, one line per cell.
    pub fn to_manifest(&self) -> String {
        let mut s = String::new();
        let d = self.domain;
        let _ = writeln!(s, "# domain {} {} {} {}", d.x0, d.y0, d.width, d.height);
        for t in &self.stack {
            let _ = writeln!(s, "# transform {}", t.describe());
        }
        for c in self.cells() {
            let f = c.frame;
            let sub = c.sub();
            let comps: Vec<String> = sub
                .map
                .u
                .iter()
                .map(|m| format!("{};{};{};{};{};{};{}", m.c0, m.cx, m.cy, m.cg, m.d0, m.dg, m.dy))
                .collect();
            let _ = writeln!(
                s,
                "block={} sub={} family={} region={} ell={} h={} profile={} pos=[{};{}] val=[{};{}] lower={};{} upper={};{} u1={} u2={}",
                c.cell.block,
                c.cell.sub,
                c.family().name(),
                sub.region,
                c.template.ell,
                c.template.h,
                c.template.profile.name(),
                fmt_mat(&f.pos.lin),
                fmt_vec(f.pos.shift),
                fmt_mat(&f.val.lin),
                fmt_vec(f.val.shift),
                sub.lower.c0,
                sub.lower.c1,
                sub.upper.c0,
                sub.upper.c1,
                comps[0],
                comps[1],
            );
        }
        s
    }
}

fn fmt_mat(m: &Mat2) -> String {
    format!("{};{};{};{}", m.a11, m.a12, m.a21, m.a22)
}

fn fmt_vec(v: [f64; 2]) -> String {
    format!("{};{}", v[0], v[1])
}

/// Single-cell identity map on `[0, w] × [0, h]`.
pub fn identity_template(w: f64, h: f64) -> Arc<BlockTemplate> {
    BlockTemplate::new(
        MapFamily::Identity,
        w,
        h,
        Profile::Quintic,
        vec![SubCell {
            region: "id",
            lower: Curve::flat(0.0),
            upper: Curve::flat(h),
            map: CellMap::new(Component::affine(0.0, 1.0, 0.0), Component::affine(0.0, 0.0, 1.0)),
        }],
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit() -> Rect {
        Rect::domain(1.0, 1.0).unwrap()
    }

    #[test]
    fn rect_rejects_nonpositive_size() {
        assert!(Rect::new(0.0, 0.0, 0.0, 1.0).is_err());
        assert!(Rect::new(0.0, 0.0, 1.0, -1.0).is_err());
    }

    #[test]
    fn identity_evaluates_to_identity() {
        let d = PiecewiseDeformation::identity(Rect::new(1.0, 2.0, 3.0, 0.5).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let p = [1.0 + 3.0 * rng.gen::<f64>(), 2.0 + 0.5 * rng.gen::<f64>()];
            let (u, g) = d.evaluate(p).unwrap();
            assert_eq!(u, p);
            assert_eq!(g, Mat2::identity());
        }
        assert!(d.evaluate([0.0, 2.1]).is_err());
        assert_eq!(d.second_gradient([2.0, 2.2]).unwrap().norm(), 0.0);
        assert!(matches!(d.second_gradient([1.0, 2.2]), Err(FieldError::OnBoundary(..))));
    }

    #[test]
    fn identity_coverage_is_clean() {
        let r = PiecewiseDeformation::identity(unit()).coverage_check();
        assert_eq!(r.area_residual, 0.0);
        assert_eq!(r.continuity_residual, 0.0);
        assert_eq!(r.boundary_residual, 0.0);
        assert!(r.passes(1e-12));
    }

    #[test]
    fn transforms_of_identity_are_identity() {
        let id = PiecewiseDeformation::identity(unit());
        let m = id.mirror_x(1.0).unwrap();
        assert_eq!(m.domain(), Rect::new(1.0, 0.0, 1.0, 1.0).unwrap());
        let (u, g) = m.evaluate([1.25, 0.5]).unwrap();
        assert!((u[0] - 1.25).abs() < 1e-15 && u[1] == 0.5);
        assert_eq!(g, Mat2::identity());

        let tall = PiecewiseDeformation::identity(Rect::domain(2.0, 1.0).unwrap());
        let r = tall.rotate_90();
        assert_eq!(r.domain(), Rect::domain(1.0, 2.0).unwrap());
        let (u, g) = r.evaluate([0.3, 1.7]).unwrap();
        assert_eq!(u, [0.3, 1.7]);
        assert_eq!(g, Mat2::identity());
        assert!(r.coverage_check().passes(1e-14));

        assert!(id.mirror_x(0.5).is_err());
    }

    #[test]
    fn join_of_two_halves() {
        let left = PiecewiseDeformation::identity(Rect::domain(0.5, 1.0).unwrap());
        let right = left.mirror_x(0.5).unwrap();
        let whole = left.join(&right).unwrap();
        assert_eq!(whole.domain(), unit());
        assert!(whole.transforms().is_empty());
        let rep = whole.coverage_check();
        assert!(rep.passes(1e-14), "{rep:?}");
        assert_eq!(whole.seams().len(), 1);
        let (u, _) = whole.evaluate([0.75, 0.25]).unwrap();
        assert!((u[0] - 0.75).abs() < 1e-15);
        assert!(left.join(&left).is_err());
    }

    #[test]
    fn dropped_block_shows_in_area_residual() {
        let left = PiecewiseDeformation::identity(Rect::domain(0.5, 1.0).unwrap());
        let whole = left.join(&left.mirror_x(0.5).unwrap()).unwrap();
        let broken = whole.without_block(1);
        let rep = broken.coverage_check();
        assert!((rep.area_residual - 0.5).abs() < 1e-15);
        assert!(!rep.tiles());
        assert!(rep.boundary_residual.is_infinite());
    }

    #[test]
    fn tensor_transform_preserves_norm_under_isometries() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut t = Tensor3::default();
        for i in 0..2 {
            for a in 0..2 {
                for b in a..2 {
                    let v: f64 = rng.gen_range(-1.0..1.0);
                    t.0[i][a][b] = v;
                    t.0[i][b][a] = v;
                }
            }
        }
        for w in [Mat2::identity(), swap_matrix(), Mat2::diag(-1.0, 1.0)] {
            let r = Mat2::rotation(0.7);
            assert!((t.transform(&r, &w).norm() - t.norm()).abs() < 1e-14);
        }
    }
}
