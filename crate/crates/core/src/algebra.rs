//! 2×2 matrix algebra and the two well sets.
//!
//! Each well set is a union of two rotation orbits `SO(2)A ∪ SO(2)B`. The
//! distance from a matrix to an orbit has a closed form in the Frobenius norm:
//! with `M = F Gᵀ`,
//!
//! ```text
//! min_Q |F - Q G|² = |F|² + |G|² - 2 √((M₁₁ + M₂₂)² + (M₂₁ - M₁₂)²)
//! ```
//!
//! and the optimal rotation angle points along `(M₁₁ + M₂₂, M₂₁ - M₁₂)`.

use std::f64::consts::PI;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AlgebraError {
    #[error("alpha must lie in (0, 1), got {0}")]
    InvalidAlpha(f64),
    #[error("expected {expected} rank-one connections, found {} ({found:?})", found.len())]
    RootCount { expected: usize, found: Vec<f64> },
    #[error("direction vector must have unit length, |v| = {0}")]
    NotUnit(f64),
}

/// A real 2×2 matrix, row-major.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Mat2 {
    pub a11: f64,
    pub a12: f64,
    pub a21: f64,
    pub a22: f64,
}

impl Mat2 {
    pub const fn new(a11: f64, a12: f64, a21: f64, a22: f64) -> Self {
        Self { a11, a12, a21, a22 }
    }

    pub const fn identity() -> Self {
        Self::new(1.0, 0.0, 0.0, 1.0)
    }

    pub const fn zero() -> Self {
        Self::new(0.0, 0.0, 0.0, 0.0)
    }

    pub const fn diag(d1: f64, d2: f64) -> Self {
        Self::new(d1, 0.0, 0.0, d2)
    }

    /// Counter-clockwise rotation by `phi`.
    pub fn rotation(phi: f64) -> Self {
        let (s, c) = phi.sin_cos();
        Self::new(c, -s, s, c)
    }

    /// `a ⊗ b`, i.e. the matrix with entries `aᵢ bⱼ`.
    pub fn outer(a: [f64; 2], b: [f64; 2]) -> Self {
        Self::new(a[0] * b[0], a[0] * b[1], a[1] * b[0], a[1] * b[1])
    }

    pub fn transpose(&self) -> Self {
        Self::new(self.a11, self.a21, self.a12, self.a22)
    }

    pub fn det(&self) -> f64 {
        self.a11 * self.a22 - self.a12 * self.a21
    }

    pub fn trace(&self) -> f64 {
        self.a11 + self.a22
    }

    pub fn norm_sq(&self) -> f64 {
        self.a11 * self.a11 + self.a12 * self.a12 + self.a21 * self.a21 + self.a22 * self.a22
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn apply(&self, v: [f64; 2]) -> [f64; 2] {
        [
            self.a11 * v[0] + self.a12 * v[1],
            self.a21 * v[0] + self.a22 * v[1],
        ]
    }

    pub fn inverse(&self) -> Option<Self> {
        let d = self.det();
        if d == 0.0 || !d.is_finite() {
            return None;
        }
        Some(Self::new(self.a22 / d, -self.a12 / d, -self.a21 / d, self.a11 / d))
    }

    pub fn is_finite(&self) -> bool {
        self.a11.is_finite() && self.a12.is_finite() && self.a21.is_finite() && self.a22.is_finite()
    }

    pub fn entries(&self) -> [f64; 4] {
        [self.a11, self.a12, self.a21, self.a22]
    }
}

impl Add for Mat2 {
    type Output = Mat2;
    fn add(self, o: Mat2) -> Mat2 {
        Mat2::new(self.a11 + o.a11, self.a12 + o.a12, self.a21 + o.a21, self.a22 + o.a22)
    }
}

impl Sub for Mat2 {
    type Output = Mat2;
    fn sub(self, o: Mat2) -> Mat2 {
        Mat2::new(self.a11 - o.a11, self.a12 - o.a12, self.a21 - o.a21, self.a22 - o.a22)
    }
}

impl Neg for Mat2 {
    type Output = Mat2;
    fn neg(self) -> Mat2 {
        Mat2::new(-self.a11, -self.a12, -self.a21, -self.a22)
    }
}

impl Mul for Mat2 {
    type Output = Mat2;
    fn mul(self, o: Mat2) -> Mat2 {
        Mat2::new(
            self.a11 * o.a11 + self.a12 * o.a21,
            self.a11 * o.a12 + self.a12 * o.a22,
            self.a21 * o.a11 + self.a22 * o.a21,
            self.a21 * o.a12 + self.a22 * o.a22,
        )
    }
}

impl Mul<f64> for Mat2 {
    type Output = Mat2;
    fn mul(self, s: f64) -> Mat2 {
        Mat2::new(self.a11 * s, self.a12 * s, self.a21 * s, self.a22 * s)
    }
}

impl Mul<Mat2> for f64 {
    type Output = Mat2;
    fn mul(self, m: Mat2) -> Mat2 {
        m * self
    }
}

impl fmt::Display for Mat2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[[{}, {}], [{}, {}]]", self.a11, self.a12, self.a21, self.a22)
    }
}

/// The coordinate swap `Z = [[0, 1], [1, 0]]`.
pub const fn swap_matrix() -> Mat2 {
    Mat2::new(0.0, 1.0, 1.0, 0.0)
}

/// The rotation `R_a = (1 + α²)^{-1/2} [[1, -α], [α, 1]]` which brings
/// `Z A₁ Z` back to within `α²` of `A₁`.
pub fn shear_alignment_rotation(alpha: f64) -> Mat2 {
    let s = (1.0 + alpha * alpha).sqrt();
    Mat2::new(1.0 / s, -alpha / s, alpha / s, 1.0 / s)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum WellCase {
    /// Shears `Id ∓ α e₁⊗e₂`: equal determinants, two rank-one connections.
    K1,
    /// Stretches `diag(1, 1 ∓ α)`: one degenerate rank-one connection.
    K2,
}

impl WellCase {
    pub fn name(&self) -> &'static str {
        match self {
            WellCase::K1 => "k1",
            WellCase::K2 => "k2",
        }
    }

    /// Number of distinct rotations `Q` with `det(A - QB) = 0`.
    pub fn expected_rank_one_connections(&self) -> usize {
        match self {
            WellCase::K1 => 2,
            WellCase::K2 => 1,
        }
    }
}

impl fmt::Display for WellCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for WellCase {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "k1" | "1" => Ok(WellCase::K1),
            "k2" | "2" => Ok(WellCase::K2),
            other => Err(format!("unknown case '{other}', expected k1 or k2")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Well {
    A,
    B,
}

/// A well set `SO(2)A ∪ SO(2)B` together with its parameter `α ∈ (0, 1)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WellSpec {
    case: WellCase,
    alpha: f64,
    a: Mat2,
    b: Mat2,
}

impl WellSpec {
    pub fn new(case: WellCase, alpha: f64) -> Result<Self, AlgebraError> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(AlgebraError::InvalidAlpha(alpha));
        }
        let (a, b) = raw_well_matrices(case, alpha);
        Ok(Self { case, alpha, a, b })
    }

    pub fn case(&self) -> WellCase {
        self.case
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn a(&self) -> Mat2 {
        self.a
    }

    pub fn b(&self) -> Mat2 {
        self.b
    }

    /// The lower bound for K₂ is only claimed for `α < 1/2`.
    pub fn lower_bound_applies(&self) -> bool {
        match self.case {
            WellCase::K1 => true,
            WellCase::K2 => self.alpha < 0.5,
        }
    }

    /// Test hook: the same spec with a perturbed first well.
    #[doc(hidden)]
    pub fn with_corrupted_well(mut self, delta: f64) -> Self {
        self.a.a11 += delta;
        self
    }

    /// `dist²(F, K)` together with the nearest well and the optimal rotation.
    pub fn dist_sq(&self, f: &Mat2) -> (f64, Well, Mat2) {
        let (da, qa) = orbit_dist_sq(f, &self.a);
        let (db, qb) = orbit_dist_sq(f, &self.b);
        if da <= db {
            (da, Well::A, qa)
        } else {
            (db, Well::B, qb)
        }
    }
}

fn raw_well_matrices(case: WellCase, alpha: f64) -> (Mat2, Mat2) {
    match case {
        WellCase::K1 => (Mat2::new(1.0, -alpha, 0.0, 1.0), Mat2::new(1.0, alpha, 0.0, 1.0)),
        WellCase::K2 => (Mat2::diag(1.0, 1.0 - alpha), Mat2::diag(1.0, 1.0 + alpha)),
    }
}

/// `(A_j, B_j)` for the given well set.
pub fn well_matrices(spec: &WellSpec) -> (Mat2, Mat2) {
    (spec.a, spec.b)
}

/// Distance from a matrix to a single rotation orbit `SO(2)G`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OrbitDistance {
    pub distance: f64,
    /// Angle in `(-π, π]` of the minimising rotation.
    pub angle: f64,
    /// The minimiser is not unique (`F Gᵀ` has no rotational part).
    pub degenerate: bool,
}

/// Optimal rotation for `min_Q |F - QG|` and the attained squared distance.
///
/// The squared distance is evaluated as `|F - Q*G|²` rather than through the
/// `|F|² + |G|² - 2√…` form, which loses all relative accuracy for matrices
/// close to the orbit.
fn orbit_dist_sq(f: &Mat2, g: &Mat2) -> (f64, Mat2) {
    let m = *f * g.transpose();
    let a = m.a11 + m.a22;
    let b = m.a21 - m.a12;
    let r = a.hypot(b);
    let q = if r > 0.0 {
        Mat2::new(a / r, -b / r, b / r, a / r)
    } else {
        Mat2::identity()
    };
    ((*f - q * *g).norm_sq(), q)
}

pub fn dist_to_rotated_well(f: &Mat2, g: &Mat2) -> OrbitDistance {
    let m = *f * g.transpose();
    let a = m.a11 + m.a22;
    let b = m.a21 - m.a12;
    let scale = f.norm() * g.norm();
    let degenerate = a.hypot(b) <= f64::EPSILON * scale;
    let (d2, _) = orbit_dist_sq(f, g);
    OrbitDistance {
        distance: d2.max(0.0).sqrt(),
        angle: if degenerate { 0.0 } else { b.atan2(a) },
        degenerate,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WellDistanceResult {
    pub distance: f64,
    pub nearest_well: Well,
    pub optimal_angle: f64,
    pub degenerate: bool,
}

/// Distance to the nearer of the two orbits; exact ties go to well A.
pub fn dist_to_wells(f: &Mat2, spec: &WellSpec) -> WellDistanceResult {
    let da = dist_to_rotated_well(f, &spec.a);
    let db = dist_to_rotated_well(f, &spec.b);
    let (d, well) = if da.distance <= db.distance {
        (da, Well::A)
    } else {
        (db, Well::B)
    };
    WellDistanceResult {
        distance: d.distance,
        nearest_well: well,
        optimal_angle: d.angle,
        degenerate: d.degenerate,
    }
}

const ROOT_GRID: usize = 10_000;
const ROOT_TOL: f64 = 1e-12;

/// All angles `φ ∈ [0, 2π)` with `det(A - Q(φ)B) = 0`.
///
/// Sign changes on a uniform grid are refined by bisection. Touching zeros
/// (the double root of the K₂ case) do not change sign, so grid-local minima
/// of `|det|` are additionally refined by golden-section search and kept when
/// they reach zero.
pub fn rank_one_connections(spec: &WellSpec) -> Result<Vec<f64>, AlgebraError> {
    let roots = det_roots(&spec.a, &spec.b);
    let expected = spec.case.expected_rank_one_connections();
    if roots.len() != expected {
        return Err(AlgebraError::RootCount { expected, found: roots });
    }
    Ok(roots)
}

/// Roots of `φ ↦ det(A - Q(φ)B)` on `[0, 2π)`, without the count check.
pub fn det_roots(a: &Mat2, b: &Mat2) -> Vec<f64> {
    let f = |phi: f64| (*a - Mat2::rotation(phi) * *b).det();
    let n = ROOT_GRID;
    let step = 2.0 * PI / n as f64;
    let vals: Vec<f64> = (0..n).map(|k| f(k as f64 * step)).collect();
    let scale = vals.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let zero_tol = 1e-14 * scale;

    let mut roots = Vec::new();
    let is_zero: Vec<bool> = vals.iter().map(|v| v.abs() <= zero_tol).collect();
    for k in 0..n {
        if is_zero[k] {
            roots.push(k as f64 * step);
        }
    }
    for k in 0..n {
        let k1 = (k + 1) % n;
        if is_zero[k] || is_zero[k1] {
            continue;
        }
        if vals[k].signum() != vals[k1].signum() {
            let lo = k as f64 * step;
            roots.push(bisect(&f, lo, lo + step));
        }
    }
    // tangential zeros: local minima of |f| that are not next to a known root
    for k in 0..n {
        let prev = (k + n - 1) % n;
        let next = (k + 1) % n;
        if is_zero[k] || is_zero[prev] || is_zero[next] {
            continue;
        }
        let (vp, vk, vn) = (vals[prev].abs(), vals[k].abs(), vals[next].abs());
        let same_sign = vals[prev].signum() == vals[k].signum() && vals[k].signum() == vals[next].signum();
        if same_sign && vk < vp && vk <= vn {
            let lo = (k as f64 - 1.0) * step;
            let (x, fx) = golden_min(&|p: f64| f(p).abs(), lo, lo + 2.0 * step);
            if fx <= 1e-10 * scale {
                roots.push(x);
            }
        }
    }

    let mut normalized: Vec<f64> = roots.into_iter().map(|r| r.rem_euclid(2.0 * PI)).collect();
    normalized.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let mut out: Vec<f64> = Vec::new();
    for r in normalized {
        let dup = out.iter().any(|&o| {
            let d = (r - o).abs();
            d.min(2.0 * PI - d) < 1e-9
        });
        if !dup {
            out.push(r);
        }
    }
    out
}

fn bisect(f: &impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let mut flo = f(lo);
    while hi - lo > ROOT_TOL {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm == 0.0 {
            return mid;
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

pub(crate) fn golden_min(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> (f64, f64) {
    let inv_phi = (5.0_f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > ROOT_TOL {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}

/// `|A v| - |B v|` for a unit direction `v`.
pub fn interface_degeneracy_gap(spec: &WellSpec, v: [f64; 2]) -> Result<f64, AlgebraError> {
    let n = v[0].hypot(v[1]);
    if (n - 1.0).abs() > 1e-9 {
        return Err(AlgebraError::NotUnit(n));
    }
    let av = spec.a.apply(v);
    let bv = spec.b.apply(v);
    Ok(av[0].hypot(av[1]) - bv[0].hypot(bv[1]))
}
