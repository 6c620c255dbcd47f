use microbranch::algebra::{WellCase, WellSpec};
use microbranch::bounds::{classify_regime, scaling_bound, Regime};
use microbranch::constructions::{best_construction, horizontal_branched, vertical_branched_k1, ConstructionKind};
use microbranch::energy::{total_energy, QuadratureSpec};
use microbranch::field::{PiecewiseDeformation, Rect};
use microbranch::minimizer::{discrete_energy, seed_from_construction, Mesh};
use microbranch::sweep::{evaluate_point, SweepConstruction};
use proptest::prelude::*;

fn case_of(k1: bool) -> WellCase {
    if k1 {
        WellCase::K1
    } else {
        WellCase::K2
    }
}

#[test]
fn resolved_seed_energy_tracks_the_continuum_energy() {
    let eps = 1e-2;
    for case in [WellCase::K1, WellCase::K2] {
        let spec = WellSpec::new(case, 0.1).unwrap();
        let f = horizontal_branched(&spec, eps, 1.0, 1.0).unwrap();
        let e = total_energy(&f, &spec, eps, &QuadratureSpec::default());
        let mesh = Mesh::new(96, 96, f.domain()).unwrap();
        let (seed, res) = seed_from_construction(&f, &mesh).unwrap();
        assert!(res.resolved, "{res:?}");
        let d = discrete_energy(&seed, &spec, eps, 0.0).unwrap();
        assert!(d.total / e.total > 0.5 && d.total / e.total < 2.0, "{case:?}: {} vs {}", d.total, e.total);
    }
}

#[test]
fn best_construction_follows_the_regime() {
    let q = QuadratureSpec::default();
    for case in [WellCase::K1, WellCase::K2] {
        let spec = WellSpec::new(case, 0.1).unwrap();
        assert_eq!(classify_regime(case, 0.1, 10.0, 1.0, 1.0), Regime::A);
        assert_eq!(best_construction(&spec, 10.0, 1.0, 1.0, &q).unwrap().kind, ConstructionKind::Identity);
        assert_eq!(classify_regime(case, 0.1, 1e-6, 1.0, 1.0), Regime::BR);
        let best = best_construction(&spec, 1e-6, 1.0, 1.0, &q).unwrap();
        assert_ne!(best.kind, ConstructionKind::Identity);
        assert!(best.candidates.iter().all(|(_, e)| e.total >= best.energy.total));
    }
}

#[test]
fn sweep_row_agrees_with_direct_evaluation() {
    let spec = WellSpec::new(WellCase::K1, 0.2).unwrap();
    let q = QuadratureSpec::default();
    let row = evaluate_point(&spec, 1e-4, 2.0, 1.0, SweepConstruction::Vertical, &q).unwrap();
    let direct = total_energy(&vertical_branched_k1(&spec, 1e-4, 2.0, 1.0).unwrap(), &spec, 1e-4, &q);
    assert_eq!(row.energy.total, direct.total);
    assert_eq!(row.bound, scaling_bound(WellCase::K1, 0.2, 1e-4, 2.0, 1.0).value);
    assert_eq!(row.construction, ConstructionKind::Vertical);
}

#[test]
fn identity_energy_scales_with_area() {
    let q = QuadratureSpec::default();
    let spec = WellSpec::new(WellCase::K1, 0.3).unwrap();
    let small = total_energy(&PiecewiseDeformation::identity(Rect::domain(1.0, 0.5).unwrap()), &spec, 1e-3, &q);
    let large = total_energy(&PiecewiseDeformation::identity(Rect::domain(3.0, 2.0).unwrap()), &spec, 1e-3, &q);
    assert!((large.total / small.total - 12.0).abs() < 1e-10);
    assert_eq!(large.tv(), 0.0);
}

#[test]
fn branched_energy_beats_identity_in_branching_regime() {
    let q = QuadratureSpec::default();
    for case in [WellCase::K1, WellCase::K2] {
        let spec = WellSpec::new(case, 0.1).unwrap();
        let omega = Rect::domain(1.0, 1.0).unwrap();
        let id = total_energy(&PiecewiseDeformation::identity(omega), &spec, 1e-5, &q).total;
        let br = total_energy(&horizontal_branched(&spec, 1e-5, 1.0, 1.0).unwrap(), &spec, 1e-5, &q);
        assert!(!br.truncated);
        assert!(br.total < 0.5 * id, "{case:?}: {} vs {id}", br.total);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn assembled_fields_tile_and_match_identity_on_the_boundary(
        k1 in any::<bool>(),
        alpha in 0.02f64..0.6,
        log_eps in -5.0f64..-2.0,
        l in 0.3f64..3.0,
        h in 0.3f64..3.0,
    ) {
        let spec = WellSpec::new(case_of(k1), alpha).unwrap();
        let eps = 10f64.powf(log_eps);
        let f = horizontal_branched(&spec, eps, l, h).unwrap();
        let c = f.coverage_check();
        prop_assert!(c.tiles(), "{c:?}");
        prop_assert!(c.continuity_residual < 1e-10 && c.boundary_residual < 1e-10, "{c:?}");
        if k1 {
            let v = vertical_branched_k1(&spec, eps, l, h).unwrap().coverage_check();
            prop_assert!(v.passes(1e-10), "{v:?}");
        }
    }

    #[test]
    fn energy_parts_are_nonnegative_and_add_up(
        k1 in any::<bool>(),
        alpha in 0.05f64..0.4,
        log_eps in -4.0f64..-2.0,
    ) {
        let spec = WellSpec::new(case_of(k1), alpha).unwrap();
        let eps = 10f64.powf(log_eps);
        let f = horizontal_branched(&spec, eps, 1.0, 1.0).unwrap();
        let e = total_energy(&f, &spec, eps, &QuadratureSpec::default());
        prop_assert!(e.elastic >= 0.0 && e.tv_bulk >= 0.0 && e.tv_jump >= 0.0);
        let sum = e.elastic + eps * (e.tv_bulk + e.tv_jump);
        prop_assert!((e.total - sum).abs() <= 1e-14 * sum);
    }
}
