//! Direct minimisation of a P1 finite-element discretisation of the energy.
//!
//! Each grid cell is split along its lower-left to upper-right diagonal. The
//! gradient is constant on triangles, so the surface term of a continuous
//! piecewise-affine field is the jump of `Du` across interior edges, smoothed
//! by a Huber function near zero to make it differentiable.

use std::collections::HashMap;
use std::io::Write;

use rayon::prelude::*;
use thiserror::Error;

use crate::algebra::{Mat2, Well, WellSpec};
use crate::field::{FieldError, MapFamily, PiecewiseDeformation, Rect};

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("mesh needs at least 2 cells per axis, got {nx}x{ny}")]
    TooCoarse { nx: usize, ny: usize },
    #[error("degenerate triangle {0}")]
    Degenerate(usize),
    #[error("field has {found} nodes, mesh has {expected}")]
    NodeCount { expected: usize, found: usize },
    #[error("field domain {field:?} differs from mesh domain {mesh:?}")]
    Domain { field: Rect, mesh: Rect },
    #[error(transparent)]
    Field(#[from] FieldError),
}

#[derive(Clone, Copy, Debug)]
struct Edge {
    tri: [usize; 2],
    len: f64,
}

/// Regular triangulated grid on a rectangle.
#[derive(Clone, Debug)]
pub struct Mesh {
    pub nx: usize,
    pub ny: usize,
    pub rect: Rect,
    triangles: Vec<[usize; 3]>,
    /// `E⁻¹` for `E = [x_b - x_a | x_c - x_a]`, per triangle.
    inv_edges: Vec<Mat2>,
    areas: Vec<f64>,
    edges: Vec<Edge>,
}

impl Mesh {
    pub fn new(nx: usize, ny: usize, rect: Rect) -> Result<Self, MeshError> {
        if nx < 2 || ny < 2 {
            return Err(MeshError::TooCoarse { nx, ny });
        }
        let mut mesh = Mesh { nx, ny, rect, triangles: Vec::new(), inv_edges: Vec::new(), areas: Vec::new(), edges: Vec::new() };
        for j in 0..ny {
            for i in 0..nx {
                let p00 = mesh.node(i, j);
                let p10 = mesh.node(i + 1, j);
                let p11 = mesh.node(i + 1, j + 1);
                let p01 = mesh.node(i, j + 1);
                mesh.triangles.push([p00, p10, p11]);
                mesh.triangles.push([p00, p11, p01]);
            }
        }
        let mut owners: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        for t in 0..mesh.triangles.len() {
            let [a, b, c] = mesh.triangles[t];
            let (xa, xb, xc) = (mesh.position(a), mesh.position(b), mesh.position(c));
            let e = Mat2::new(xb[0] - xa[0], xc[0] - xa[0], xb[1] - xa[1], xc[1] - xa[1]);
            let det = e.det();
            if !(det > 0.0) {
                return Err(MeshError::Degenerate(t));
            }
            mesh.inv_edges.push(e.inverse().ok_or(MeshError::Degenerate(t))?);
            mesh.areas.push(0.5 * det);
            for (p, q) in [(a, b), (b, c), (c, a)] {
                owners.entry((p.min(q), p.max(q))).or_default().push(t);
            }
        }
        let mut edges: Vec<((usize, usize), Edge)> = owners
            .into_iter()
            .filter(|(_, ts)| ts.len() == 2)
            .map(|((p, q), ts)| {
                let (xp, xq) = (mesh.position(p), mesh.position(q));
                ((p, q), Edge { tri: [ts[0], ts[1]], len: (xp[0] - xq[0]).hypot(xp[1] - xq[1]) })
            })
            .collect();
        edges.sort_by_key(|(k, _)| *k);
        mesh.edges = edges.into_iter().map(|(_, e)| e).collect();
        Ok(mesh)
    }

    pub fn node_count(&self) -> usize {
        (self.nx + 1) * (self.ny + 1)
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    pub fn interior_edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn node(&self, i: usize, j: usize) -> usize {
        j * (self.nx + 1) + i
    }

    pub fn spacing(&self) -> (f64, f64) {
        (self.rect.width / self.nx as f64, self.rect.height / self.ny as f64)
    }

    pub fn position(&self, k: usize) -> [f64; 2] {
        let (i, j) = (k % (self.nx + 1), k / (self.nx + 1));
        // exact edges so boundary nodes coincide with the rectangle
        let x = if i == self.nx { self.rect.x1() } else { self.rect.x0 + i as f64 * self.spacing().0 };
        let y = if j == self.ny { self.rect.y1() } else { self.rect.y0 + j as f64 * self.spacing().1 };
        [x, y]
    }

    pub fn is_boundary(&self, k: usize) -> bool {
        let (i, j) = (k % (self.nx + 1), k / (self.nx + 1));
        i == 0 || j == 0 || i == self.nx || j == self.ny
    }

    pub fn free_nodes(&self) -> Vec<usize> {
        (0..self.node_count()).filter(|&k| !self.is_boundary(k)).collect()
    }

    fn triangle_gradient(&self, t: usize, u: &[[f64; 2]]) -> Mat2 {
        let [a, b, c] = self.triangles[t];
        let du = Mat2::new(u[b][0] - u[a][0], u[c][0] - u[a][0], u[b][1] - u[a][1], u[c][1] - u[a][1]);
        du * self.inv_edges[t]
    }
}

/// Nodal deformation values on a mesh; boundary nodes carry the identity.
#[derive(Clone, Debug)]
pub struct DiscreteField {
    pub mesh: Mesh,
    pub values: Vec<[f64; 2]>,
}

impl DiscreteField {
    pub fn identity(mesh: Mesh) -> Self {
        let values = (0..mesh.node_count()).map(|k| mesh.position(k)).collect();
        Self { mesh, values }
    }

    pub fn from_values(mesh: Mesh, values: Vec<[f64; 2]>) -> Result<Self, MeshError> {
        if values.len() != mesh.node_count() {
            return Err(MeshError::NodeCount { expected: mesh.node_count(), found: values.len() });
        }
        let mut f = Self { mesh, values };
        f.pin_boundary();
        Ok(f)
    }

    pub fn pin_boundary(&mut self) {
        for k in 0..self.mesh.node_count() {
            if self.mesh.is_boundary(k) {
                self.values[k] = self.mesh.position(k);
            }
        }
    }

    /// Largest deviation of a boundary node from the identity.
    pub fn boundary_residual(&self) -> f64 {
        (0..self.mesh.node_count())
            .filter(|&k| self.mesh.is_boundary(k))
            .map(|k| {
                let x = self.mesh.position(k);
                (self.values[k][0] - x[0]).hypot(self.values[k][1] - x[1])
            })
            .fold(0.0, f64::max)
    }

    /// Rows `x,y,u1,u2`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "x,y,u1,u2")?;
        for (k, u) in self.values.iter().enumerate() {
            let x = self.mesh.position(k);
            writeln!(w, "{:.16e},{:.16e},{:.16e},{:.16e}", x[0], x[1], u[0], u[1])?;
        }
        Ok(())
    }

    fn free_vector(&self, free: &[usize]) -> Vec<f64> {
        free.iter().flat_map(|&k| self.values[k]).collect()
    }

    fn set_free(&mut self, free: &[usize], x: &[f64]) {
        for (n, &k) in free.iter().enumerate() {
            self.values[k] = [x[2 * n], x[2 * n + 1]];
        }
    }
}

/// Discrete energy split.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DiscreteEnergy {
    pub elastic: f64,
    pub tv: f64,
    pub total: f64,
}

/// `r²/(2δ)` below `δ`, `r - δ/2` above; `δ = 0` gives `r`.
fn huber(r: f64, delta: f64) -> (f64, f64) {
    if delta <= 0.0 {
        (r, 1.0)
    } else if r <= delta {
        (r * r / (2.0 * delta), r / delta)
    } else {
        (r - 0.5 * delta, 1.0)
    }
}

pub fn default_huber(spec: &WellSpec) -> f64 {
    1e-6 * spec.alpha()
}

fn check_field(field: &DiscreteField) -> Result<(), MeshError> {
    if field.values.len() != field.mesh.node_count() {
        return Err(MeshError::NodeCount { expected: field.mesh.node_count(), found: field.values.len() });
    }
    Ok(())
}

pub fn discrete_energy(field: &DiscreteField, spec: &WellSpec, eps: f64, delta: f64) -> Result<DiscreteEnergy, MeshError> {
    check_field(field)?;
    let mesh = &field.mesh;
    let grads: Vec<Mat2> = (0..mesh.triangle_count())
        .into_par_iter()
        .map(|t| mesh.triangle_gradient(t, &field.values))
        .collect();
    let elastic_parts: Vec<f64> = grads
        .par_iter()
        .enumerate()
        .map(|(t, g)| mesh.areas[t] * spec.dist_sq(g).0)
        .collect();
    let tv_parts: Vec<f64> = mesh
        .edges
        .par_iter()
        .map(|e| e.len * huber((grads[e.tri[0]] - grads[e.tri[1]]).norm(), delta).0)
        .collect();
    let elastic: f64 = elastic_parts.iter().sum();
    let tv: f64 = tv_parts.iter().sum();
    Ok(DiscreteEnergy { elastic, tv, total: elastic + eps * tv })
}

/// Gradient of [`discrete_energy`]'s total with respect to every nodal
/// value; boundary entries are zero.
pub fn discrete_gradient(field: &DiscreteField, spec: &WellSpec, eps: f64, delta: f64) -> Result<Vec<[f64; 2]>, MeshError> {
    check_field(field)?;
    Ok(energy_and_gradient(field, spec, eps, delta).1)
}

fn energy_and_gradient(field: &DiscreteField, spec: &WellSpec, eps: f64, delta: f64) -> (DiscreteEnergy, Vec<[f64; 2]>) {
    let mesh = &field.mesh;
    let grads: Vec<Mat2> = (0..mesh.triangle_count())
        .into_par_iter()
        .map(|t| mesh.triangle_gradient(t, &field.values))
        .collect();
    // dE/dF per triangle
    let tri: Vec<(f64, Mat2)> = grads
        .par_iter()
        .enumerate()
        .map(|(t, f)| {
            let (d, well, q) = spec.dist_sq(f);
            let target = q * if well == Well::A { spec.a() } else { spec.b() };
            (mesh.areas[t] * d, (*f - target) * (2.0 * mesh.areas[t]))
        })
        .collect();
    let edge: Vec<(f64, Mat2)> = mesh
        .edges
        .par_iter()
        .map(|e| {
            let j = grads[e.tri[0]] - grads[e.tri[1]];
            let r = j.norm();
            let (h, dh) = huber(r, delta);
            let g = if r > 0.0 { j * (eps * e.len * dh / r) } else { Mat2::zero() };
            (e.len * h, g)
        })
        .collect();
    let mut dfs: Vec<Mat2> = tri.iter().map(|(_, g)| *g).collect();
    for (e, (_, g)) in mesh.edges.iter().zip(&edge) {
        dfs[e.tri[0]] = dfs[e.tri[0]] + *g;
        dfs[e.tri[1]] = dfs[e.tri[1]] - *g;
    }
    let mut out = vec![[0.0; 2]; mesh.node_count()];
    for (t, df) in dfs.iter().enumerate() {
        // dE/dU = dE/dF · E⁻ᵀ; column k belongs to the k-th edge vector
        let g = *df * mesh.inv_edges[t].transpose();
        let [a, b, c] = mesh.triangles[t];
        for r in 0..2 {
            let (gb, gc) = if r == 0 { (g.a11, g.a12) } else { (g.a21, g.a22) };
            out[b][r] += gb;
            out[c][r] += gc;
            out[a][r] -= gb + gc;
        }
    }
    for (k, o) in out.iter_mut().enumerate() {
        if mesh.is_boundary(k) {
            *o = [0.0; 2];
        }
    }
    let elastic: f64 = tri.iter().map(|(e, _)| e).sum();
    let tv: f64 = edge.iter().map(|(t, _)| t).sum();
    (DiscreteEnergy { elastic, tv, total: elastic + eps * tv }, out)
}

/// Largest relative mismatch between [`discrete_gradient`] and central
/// differences at the given nodes.
///
/// Errors are measured against `max(|g|, 1e-3 · spacing)` so that components
/// near zero are compared absolutely.
pub fn gradient_fd_error(field: &DiscreteField, spec: &WellSpec, eps: f64, delta: f64, nodes: &[usize]) -> Result<f64, MeshError> {
    const STEP: f64 = 1e-7;
    let g = discrete_gradient(field, spec, eps, delta)?;
    let floor = 1e-3 * field.mesh.spacing().0.min(field.mesh.spacing().1);
    let mut worst = 0.0_f64;
    let mut probe = field.clone();
    for &k in nodes {
        for c in 0..2 {
            let x = field.values[k][c];
            probe.values[k][c] = x + STEP;
            let ep = discrete_energy(&probe, spec, eps, delta)?.total;
            probe.values[k][c] = x - STEP;
            let em = discrete_energy(&probe, spec, eps, delta)?.total;
            probe.values[k][c] = x;
            let fd = (ep - em) / (2.0 * STEP);
            worst = worst.max((fd - g[k][c]).abs() / g[k][c].abs().max(floor));
        }
    }
    Ok(worst)
}

/// Settings for [`minimize`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MinimizeOptions {
    pub max_iter: usize,
    /// Defaults to `1e-8 · √(free node count)`.
    pub grad_tol: Option<f64>,
    pub memory: usize,
    /// Defaults to `1e-6 · α`.
    pub huber_delta: Option<f64>,
    pub armijo: f64,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        Self { max_iter: 5000, grad_tol: None, memory: 8, huber_delta: None, armijo: 1e-4 }
    }
}

#[derive(Clone, Debug)]
pub struct MinimizeResult {
    pub field: DiscreteField,
    /// Smoothed total after each accepted step, starting with the initial one.
    pub energy_trace: Vec<f64>,
    /// Energy at the final field without smoothing.
    pub final_energy: DiscreteEnergy,
    pub iterations: usize,
    pub converged: bool,
    pub gradient_norm: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Limited-memory BFGS with backtracking on the interior nodes.
pub fn minimize(initial: &DiscreteField, spec: &WellSpec, eps: f64, opts: &MinimizeOptions) -> Result<MinimizeResult, MeshError> {
    check_field(initial)?;
    let delta = opts.huber_delta.unwrap_or_else(|| default_huber(spec));
    let mut field = initial.clone();
    field.pin_boundary();
    let free = field.mesh.free_nodes();
    let tol = opts.grad_tol.unwrap_or(1e-8 * (free.len() as f64).sqrt());
    let eval = |f: &DiscreteField| {
        let (e, g) = energy_and_gradient(f, spec, eps, delta);
        let gv: Vec<f64> = free.iter().flat_map(|&k| g[k]).collect();
        (e.total, gv)
    };
    let mut x = field.free_vector(&free);
    let (mut fx, mut g) = eval(&field);
    let mut trace = vec![fx];
    let mut history: Vec<(Vec<f64>, Vec<f64>, f64)> = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut trial = field.clone();
    while iterations < opts.max_iter {
        let gnorm = dot(&g, &g).sqrt();
        if gnorm <= tol {
            converged = true;
            break;
        }
        // two-loop recursion
        let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * dot(s, &d);
            for (di, yi) in d.iter_mut().zip(y) {
                *di -= a * yi;
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = history.last() {
            let scale = dot(s, y) / dot(y, y);
            d.iter_mut().for_each(|v| *v *= scale);
        } else {
            // first step moves at most ~ one mesh spacing
            let h = field.mesh.spacing().0.min(field.mesh.spacing().1);
            let s = 0.1 * h / gnorm;
            d.iter_mut().for_each(|v| *v *= s);
        }
        for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &d);
            for (di, si) in d.iter_mut().zip(s) {
                *di += (a - b) * si;
            }
        }
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            history.clear();
            let h = field.mesh.spacing().0.min(field.mesh.spacing().1);
            d = g.iter().map(|v| -v * 0.1 * h / gnorm).collect();
            slope = dot(&g, &d);
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let xn: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + step * di).collect();
            trial.set_free(&free, &xn);
            let (fn_, gn) = eval(&trial);
            if fn_ <= fx + opts.armijo * step * slope {
                accepted = Some((xn, fn_, gn));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fn_, gn)) = accepted else { break };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-16 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
            history.push((s, y, 1.0 / sy));
            if history.len() > opts.memory {
                history.remove(0);
            }
        }
        x = xn;
        fx = fn_;
        g = gn;
        field.set_free(&free, &x);
        trace.push(fx);
        iterations += 1;
    }
    let gradient_norm = dot(&g, &g).sqrt();
    if gradient_norm <= tol {
        converged = true;
    }
    let final_energy = discrete_energy(&field, spec, eps, 0.0)?;
    Ok(MinimizeResult { field, energy_trace: trace, final_energy, iterations, converged, gradient_norm })
}

/// How well a mesh resolves the finest period of a construction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Resolution {
    /// Smallest period among non-identity blocks, if any.
    pub finest_period: Option<f64>,
    /// Mesh spacing across the layers of that block.
    pub spacing: f64,
    pub cells_per_period: f64,
    /// At least two mesh cells per period.
    pub resolved: bool,
}

pub fn resolution(def: &PiecewiseDeformation, mesh: &Mesh) -> Resolution {
    let (dx, dy) = mesh.spacing();
    let mut best: Option<(f64, f64)> = None;
    for b in 0..def.block_count() {
        let t = &def.blocks()[b].template;
        if t.family == MapFamily::Identity {
            continue;
        }
        let dir = def.effective_frame(b).pos.lin.apply([0.0, 1.0]);
        let spacing = dir[0].abs() * dx + dir[1].abs() * dy;
        if best.map_or(true, |(h, s)| t.h / spacing < h / s) {
            best = Some((t.h, spacing));
        }
    }
    match best {
        Some((h, s)) => Resolution { finest_period: Some(h), spacing: s, cells_per_period: h / s, resolved: h >= 2.0 * s },
        None => Resolution { finest_period: None, spacing: dx.max(dy), cells_per_period: f64::INFINITY, resolved: true },
    }
}

/// Nodal interpolant of `def`, with the resolution report.
pub fn seed_from_construction(def: &PiecewiseDeformation, mesh: &Mesh) -> Result<(DiscreteField, Resolution), MeshError> {
    let d = def.domain();
    let m = mesh.rect;
    let tol = 1e-12 * d.scale();
    if (d.x0 - m.x0).abs() > tol || (d.y0 - m.y0).abs() > tol || (d.width - m.width).abs() > tol || (d.height - m.height).abs() > tol {
        return Err(MeshError::Domain { field: d, mesh: m });
    }
    let values: Result<Vec<[f64; 2]>, FieldError> = (0..mesh.node_count())
        .into_par_iter()
        .map(|k| def.value(mesh.position(k)))
        .collect();
    let field = DiscreteField::from_values(mesh.clone(), values?)?;
    Ok((field, resolution(def, mesh)))
}

/// Result of minimising from several starting fields.
#[derive(Clone, Debug)]
pub struct MultiStart {
    pub runs: Vec<(String, MinimizeResult)>,
    /// Index of the run with the lowest unsmoothed final energy.
    pub best: usize,
}

impl MultiStart {
    pub fn best_run(&self) -> &(String, MinimizeResult) {
        &self.runs[self.best]
    }
}

/// Minimises from each labelled start in parallel.
pub fn multi_start(
    starts: Vec<(String, DiscreteField)>,
    spec: &WellSpec,
    eps: f64,
    opts: &MinimizeOptions,
) -> Result<MultiStart, MeshError> {
    let runs: Result<Vec<(String, MinimizeResult)>, MeshError> = starts
        .into_par_iter()
        .map(|(label, f)| minimize(&f, spec, eps, opts).map(|r| (label, r)))
        .collect();
    let runs = runs?;
    let best = runs
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .1.final_energy.total.total_cmp(&b.1 .1.final_energy.total))
        .map(|(i, _)| i)
        .unwrap_or(0);
    Ok(MultiStart { runs, best })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::WellCase;
    use crate::constructions::{horizontal_branched, laminate};
    use crate::energy::{total_energy, QuadratureSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_mesh(n: usize) -> Mesh {
        Mesh::new(n, n, Rect::domain(1.0, 1.0).unwrap()).unwrap()
    }

    #[test]
    fn mesh_counts_and_orientation() {
        let m = Mesh::new(3, 2, Rect::domain(1.5, 1.0).unwrap()).unwrap();
        assert_eq!(m.node_count(), 12);
        assert_eq!(m.triangle_count(), 12);
        // horizontal + vertical + diagonal interior edges
        assert_eq!(m.interior_edge_count(), 3 + 4 + 6);
        assert!(m.areas.iter().all(|a| (a - 0.125).abs() < 1e-15));
        assert!(matches!(Mesh::new(1, 4, m.rect), Err(MeshError::TooCoarse { .. })));
    }

    #[test]
    fn identity_energy() {
        let spec = WellSpec::new(WellCase::K2, 0.2).unwrap();
        let f = DiscreteField::identity(unit_mesh(8));
        let e = discrete_energy(&f, &spec, 1.0, 1e-7).unwrap();
        assert!((e.elastic - 0.04).abs() < 1e-14);
        assert_eq!(e.tv, 0.0);
    }

    #[test]
    fn aligned_laminate_energy() {
        let a = 0.1;
        let spec = WellSpec::new(WellCase::K2, a).unwrap();
        let rect = Rect::domain(1.0, 1.0).unwrap();
        // period 1/4 on a 16x16 mesh
        let lam = laminate(WellCase::K2, a, 0.25, rect).unwrap();
        let mesh = Mesh::new(16, 16, rect).unwrap();
        let values: Vec<[f64; 2]> = (0..mesh.node_count()).map(|k| lam.value(mesh.position(k)).unwrap()).collect();
        let f = DiscreteField { mesh, values };
        let e = discrete_energy(&f, &spec, 1.0, 0.0).unwrap();
        assert!(e.elastic < 1e-28, "{}", e.elastic);
        // interfaces at odd multiples of 1/16, length 1, jump |B - A| = 2α
        assert!((e.tv - 8.0 * 2.0 * a).abs() < 1e-12, "{}", e.tv);
    }

    #[test]
    fn huber_limit_on_two_triangles() {
        let spec = WellSpec::new(WellCase::K1, 0.3).unwrap();
        let mesh = Mesh::new(2, 2, Rect::domain(1.0, 1.0).unwrap()).unwrap();
        let mut f = DiscreteField::identity(mesh);
        let c = f.mesh.node(1, 1);
        f.values[c] = [0.6, 0.45];
        let exact = discrete_energy(&f, &spec, 1.0, 0.0).unwrap().tv;
        let smooth = discrete_energy(&f, &spec, 1.0, 1e-9).unwrap().tv;
        assert!(exact > 0.0 && (exact - smooth).abs() < 1e-8);
    }

    fn fd_check(field: &DiscreteField, spec: &WellSpec, eps: f64, delta: f64, rng: &mut ChaCha8Rng, samples: usize) -> f64 {
        let free = field.mesh.free_nodes();
        let nodes: Vec<usize> = (0..samples).map(|_| free[rng.gen_range(0..free.len())]).collect();
        gradient_fd_error(field, spec, eps, delta, &nodes).unwrap()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for case in [WellCase::K1, WellCase::K2] {
            let spec = WellSpec::new(case, 0.1).unwrap();
            let mut f = DiscreteField::identity(unit_mesh(6));
            let worst = fd_check(&f, &spec, 0.01, 1e-2, &mut rng, 10);
            assert!(worst < 1e-5, "{case:?} identity {worst}");
            for k in f.mesh.free_nodes() {
                f.values[k][0] += rng.gen_range(-0.03..0.03);
                f.values[k][1] += rng.gen_range(-0.03..0.03);
            }
            let worst = fd_check(&f, &spec, 0.01, 1e-2, &mut rng, 20);
            assert!(worst < 1e-5, "{case:?} random {worst}");
        }
    }

    #[test]
    fn zero_eps_gradient_has_no_edge_part() {
        let spec = WellSpec::new(WellCase::K2, 0.1).unwrap();
        let mut f = DiscreteField::identity(unit_mesh(4));
        let k = f.mesh.node(2, 2);
        f.values[k][0] += 0.05;
        let g0 = discrete_gradient(&f, &spec, 0.0, 1e-3).unwrap();
        let ge = discrete_gradient(&f, &spec, 1e-12, 1e-3).unwrap();
        for (a, b) in g0.iter().zip(&ge) {
            assert!((a[0] - b[0]).abs() < 1e-9 && (a[1] - b[1]).abs() < 1e-9);
        }
    }

    #[test]
    fn identity_stays_for_huge_eps() {
        let spec = WellSpec::new(WellCase::K2, 0.1).unwrap();
        let f = DiscreteField::identity(unit_mesh(6));
        let r = minimize(&f, &spec, 10.0, &MinimizeOptions { max_iter: 200, ..Default::default() }).unwrap();
        assert!((r.final_energy.total - 0.01).abs() < 1e-6, "{:?}", r.final_energy);
    }

    #[test]
    fn descent_is_monotone() {
        let spec = WellSpec::new(WellCase::K2, 0.1).unwrap();
        let def = horizontal_branched(&spec, 1e-3, 1.0, 1.0).unwrap();
        let (seed, _) = seed_from_construction(&def, &unit_mesh(24)).unwrap();
        let r = minimize(&seed, &spec, 1e-3, &MinimizeOptions { max_iter: 100, ..Default::default() }).unwrap();
        for w in r.energy_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
        assert!(r.energy_trace.last().unwrap() <= &r.energy_trace[0]);
        assert_eq!(r.field.boundary_residual(), 0.0);
    }

    #[test]
    fn seed_of_identity_is_identity() {
        let rect = Rect::domain(1.0, 1.0).unwrap();
        let (f, res) = seed_from_construction(&PiecewiseDeformation::identity(rect), &unit_mesh(5)).unwrap();
        for (k, v) in f.values.iter().enumerate() {
            assert_eq!(*v, f.mesh.position(k));
        }
        assert!(res.resolved && res.finest_period.is_none());
    }

    #[test]
    fn resolved_seed_tracks_analytic_energy() {
        let spec = WellSpec::new(WellCase::K2, 0.1).unwrap();
        let eps = 0.1;
        let def = horizontal_branched(&spec, eps, 1.0, 1.0).unwrap();
        let (seed, res) = seed_from_construction(&def, &unit_mesh(128)).unwrap();
        assert!(res.cells_per_period >= 4.0, "{res:?}");
        let d = discrete_energy(&seed, &spec, eps, 0.0).unwrap();
        let a = total_energy(&def, &spec, eps, &QuadratureSpec::default());
        assert!((d.total / a.total - 1.0).abs() < 0.25, "{} vs {}", d.total, a.total);
    }

    #[test]
    fn coarse_mesh_is_flagged() {
        let spec = WellSpec::new(WellCase::K2, 0.1).unwrap();
        let def = horizontal_branched(&spec, 1e-5, 1.0, 1.0).unwrap();
        let (_, res) = seed_from_construction(&def, &unit_mesh(16)).unwrap();
        assert!(!res.resolved);
    }

    #[test]
    fn csv_has_header_and_rows() {
        let f = DiscreteField::identity(unit_mesh(2));
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s.lines().next(), Some("x,y,u1,u2"));
        assert_eq!(s.lines().count(), 10);
    }
}
