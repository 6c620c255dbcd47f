//! Invariant suite behind the `validate` subcommand.

use std::f64::consts::PI;

use microbranch::algebra::{
    det_roots, dist_to_wells, shear_alignment_rotation, swap_matrix, Mat2, WellCase, WellSpec,
};
use microbranch::bounds::{check_average_lemma, sample_average_lemma_field};
use microbranch::constructions::{branching_schedule_with, assemble_branched, k1_boundary_cell, k1_cell, k2_boundary_cell, k2_cell, laminate};
use microbranch::energy::{total_energy, QuadratureSpec};
use microbranch::field::{PiecewiseDeformation, Rect};
use microbranch::minimizer::{gradient_fd_error, DiscreteField, Mesh};
use microbranch::profile::{sawtooth, Profile};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;

pub struct CheckResult {
    pub name: &'static str,
    pub outcome: Result<String, String>,
}

fn ensure(ok: bool, msg: String) -> Result<String, String> {
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn reference_wells(case: WellCase, alpha: f64) -> (Mat2, Mat2) {
    match case {
        WellCase::K1 => (Mat2::new(1.0, -alpha, 0.0, 1.0), Mat2::new(1.0, alpha, 0.0, 1.0)),
        WellCase::K2 => (Mat2::new(1.0, 0.0, 0.0, 1.0 - alpha), Mat2::new(1.0, 0.0, 0.0, 1.0 + alpha)),
    }
}

fn random_matrix(rng: &mut ChaCha8Rng) -> Mat2 {
    Mat2::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0))
}

fn angle_scan(f: &Mat2, g: &Mat2) -> f64 {
    let dist = |phi: f64| (*f - Mat2::rotation(phi) * *g).norm();
    let n = 4000;
    let step = 2.0 * PI / n as f64;
    let k = (0..n).min_by(|&a, &b| dist(a as f64 * step).total_cmp(&dist(b as f64 * step))).unwrap();
    let (mut lo, mut hi) = ((k as f64 - 1.0) * step, (k as f64 + 1.0) * step);
    for _ in 0..200 {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if dist(m1) < dist(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    dist(0.5 * (lo + hi))
}

fn wells_match_definition(spec: &WellSpec) -> Result<String, String> {
    let (a, b) = reference_wells(spec.case(), spec.alpha());
    let err = (spec.a() - a).norm().max((spec.b() - b).norm());
    ensure(err <= 1e-15, format!("well matrices differ from their definition by {err:.2e}"))
}

fn orbit_distances(spec: &WellSpec, rng: &mut ChaCha8Rng) -> Result<String, String> {
    let mut worst = 0.0_f64;
    for _ in 0..200 {
        let f = random_matrix(rng);
        let scan = angle_scan(&f, &spec.a()).min(angle_scan(&f, &spec.b()));
        worst = worst.max((dist_to_wells(&f, spec).distance - scan).abs());
    }
    ensure(worst < 1e-9, format!("200 matrices, max deviation from angle scan {worst:.2e}"))
}

fn rank_one(spec: &WellSpec) -> Result<String, String> {
    let n = det_roots(&spec.a(), &spec.b()).len();
    let expected = spec.case().expected_rank_one_connections();
    ensure(n == expected, format!("{n} rank-one connections, expected {expected}"))
}

fn identity_energy(spec: &WellSpec) -> Result<String, String> {
    let a = spec.alpha();
    let exact = match spec.case() {
        WellCase::K2 => a * a,
        WellCase::K1 => 4.0 + a * a - 2.0 * (4.0 + a * a).sqrt(),
    };
    let id = PiecewiseDeformation::identity(Rect::domain(1.0, 1.0).unwrap());
    let e = total_energy(&id, spec, 1e-3, &QuadratureSpec::default()).total;
    let rel = (e - exact).abs() / exact;
    ensure(rel <= 1e-6, format!("identity energy {e:.12e} vs closed form {exact:.12e}"))
}

fn trace_residual(f: &PiecewiseDeformation, edge: impl Fn(f64) -> [f64; 2], expected: impl Fn([f64; 2]) -> [f64; 2]) -> f64 {
    (0..=200)
        .map(|k| {
            let p = edge(k as f64 / 200.0);
            let u = f.value(p).unwrap_or([f64::INFINITY; 2]);
            let e = expected(p);
            (u[0] - e[0]).hypot(u[1] - e[1])
        })
        .fold(0.0, f64::max)
}

fn cell_traces(rng: &mut ChaCha8Rng) -> Result<String, String> {
    let mut worst = 0.0_f64;
    for _ in 0..10 {
        let (x0, y0) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let h = rng.gen_range(0.01..0.5);
        let ell = h * rng.gen_range(1.0..10.0);
        let a = rng.gen_range(0.01..0.9);
        let cells: Vec<(PiecewiseDeformation, bool, bool)> = vec![
            (k2_cell([x0, y0], ell, h, a).map_err(|e| e.to_string())?, false, false),
            (k2_boundary_cell([x0, y0], ell, h, a).map_err(|e| e.to_string())?, false, true),
            (k1_cell([x0, y0], ell, h, a, Profile::Quintic).map_err(|e| e.to_string())?, true, false),
            (k1_boundary_cell([x0, y0], ell, h, a, Profile::Quintic).map_err(|e| e.to_string())?, true, true),
        ];
        for (c, shear, boundary) in cells {
            let saw = |period: f64, p: [f64; 2]| {
                let s = a * sawtooth(period, p[1] - y0);
                if shear {
                    [p[0] + s, p[1]]
                } else {
                    [p[0], p[1] + s]
                }
            };
            let id = |p: [f64; 2]| p;
            worst = worst
                .max(trace_residual(&c, |t| [x0 + t * ell, y0], id))
                .max(trace_residual(&c, |t| [x0 + t * ell, y0 + h], id))
                .max(trace_residual(&c, |t| [x0 + ell, y0 + t * h], |p| saw(h, p)))
                .max(if boundary {
                    trace_residual(&c, |t| [x0, y0 + t * h], id)
                } else {
                    trace_residual(&c, |t| [x0, y0 + t * h], |p| saw(h / 2.0, p))
                })
                .max(c.coverage_check().continuity_residual);
        }
    }
    ensure(worst < 1e-10, format!("40 cells, max trace residual {worst:.2e}"))
}

fn laminate_on_wells(spec: &WellSpec) -> Result<String, String> {
    let lam = laminate(spec.case(), spec.alpha(), 0.25, Rect::domain(1.0, 1.0).unwrap()).map_err(|e| e.to_string())?;
    let mut worst = 0.0_f64;
    for i in 0..40 {
        for j in 0..40 {
            let p = [(i as f64 + 0.5) / 40.0, (j as f64 + 0.5) / 40.0 + 1e-3];
            let (_, du) = lam.evaluate(p).map_err(|e| e.to_string())?;
            worst = worst.max(dist_to_wells(&du, spec).distance);
        }
    }
    ensure(worst < 1e-12, format!("laminate gradients within {worst:.2e} of the wells"))
}

fn assembled_field(cfg: &RunConfig, spec: &WellSpec) -> Result<String, String> {
    let s = branching_schedule_with(cfg.case, spec.alpha(), cfg.epsilon, cfg.length, cfg.height, cfg.theta).map_err(|e| e.to_string())?;
    let f = assemble_branched(spec, &s, Rect::domain(cfg.length, cfg.height).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let c = f.coverage_check();
    ensure(
        c.tiles() && c.continuity_residual < 1e-10 && c.boundary_residual < 1e-10,
        format!(
            "{} cells, area residual {:.1e}, continuity {:.1e}, boundary {:.1e}",
            f.cell_count(),
            c.area_residual,
            c.continuity_residual,
            c.boundary_residual
        ),
    )
}

fn averaging_lemma(rng: &mut ChaCha8Rng) -> Result<String, String> {
    for k in 0..1000 {
        let n = rng.gen_range(2..200);
        let s = sample_average_lemma_field(rng, n);
        let r = check_average_lemma(&s.v, &s.d, s.e, s.area).map_err(|e| e.to_string())?;
        if !r.holds() {
            return Err(format!("field {k} fails: {r:?}"));
        }
    }
    Ok("1000 fields".into())
}

fn swap_conjugation(rng: &mut ChaCha8Rng) -> Result<String, String> {
    let z = swap_matrix();
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..1000 {
        let alpha = rng.gen_range(0.01..0.99);
        let spec = WellSpec::new(WellCase::K1, alpha).unwrap();
        let f = random_matrix(rng);
        worst = worst.max(dist_to_wells(&(z * f * z), &spec).distance - dist_to_wells(&f, &spec).distance - alpha * alpha);
        let a1 = spec.a();
        worst = worst.max((shear_alignment_rotation(alpha) * z * a1 * z - a1).norm() - alpha * alpha);
    }
    ensure(worst <= 1e-12, format!("1000 matrices, max excess {worst:.2e}"))
}

fn gradient_fd(spec: &WellSpec, rng: &mut ChaCha8Rng) -> Result<String, String> {
    let mesh = Mesh::new(8, 8, Rect::domain(1.0, 1.0).unwrap()).map_err(|e| e.to_string())?;
    let mut f = DiscreteField::identity(mesh);
    let free = f.mesh.free_nodes();
    for &k in &free {
        f.values[k][0] += rng.gen_range(-0.03..0.03);
        f.values[k][1] += rng.gen_range(-0.03..0.03);
    }
    let nodes: Vec<usize> = (0..20).map(|_| free[rng.gen_range(0..free.len())]).collect();
    let err = gradient_fd_error(&f, spec, 0.01, 1e-2, &nodes).map_err(|e| e.to_string())?;
    ensure(err < 1e-5, format!("max relative FD mismatch {err:.2e}"))
}

pub fn run_suite(cfg: &RunConfig) -> Result<Vec<CheckResult>, String> {
    let spec = WellSpec::new(cfg.case, cfg.alpha).map_err(|e| e.to_string())?;
    let spec = if cfg.corrupt_well != 0.0 { spec.with_corrupted_well(cfg.corrupt_well) } else { spec };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::new();
    let mut push = |name, outcome| out.push(CheckResult { name, outcome });
    push("well definitions", wells_match_definition(&spec));
    push("orbit distance vs angle scan", orbit_distances(&spec, &mut rng));
    push("rank-one connections", rank_one(&spec));
    push("identity energy", identity_energy(&spec));
    push("cell boundary traces", cell_traces(&mut rng));
    push("laminate on wells", laminate_on_wells(&spec));
    push("assembled field residuals", assembled_field(cfg, &spec));
    push("averaging lemma", averaging_lemma(&mut rng));
    push("swap conjugation", swap_conjugation(&mut rng));
    push("gradient vs finite differences", gradient_fd(&spec, &mut rng));
    Ok(out)
}
