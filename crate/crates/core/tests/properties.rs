use horolab::boundary::{ball_distance, mobius, BallPoint};
use horolab::comparison::{angle_from_sides, law_of_cosines, ModelCurvature};
use horolab::jacobi::{self, epsilon_bound};
use horolab::profile::{RossFamily, RossProfile};
use horolab::quadrature::integrate;
use nalgebra::DVector;
use proptest::prelude::*;

fn ball_point(v: [f64; 3], scale: f64) -> BallPoint {
    let d = DVector::from_row_slice(&v);
    let n = d.norm().max(1e-12);
    BallPoint::new((d * (scale / n)).as_slice()).unwrap()
}

fn family() -> impl Strategy<Value = RossProfile> {
    prop_oneof![
        (2usize..5, 0.3f64..2.5).prop_map(|(d, a)| RossProfile::new(RossFamily::Real, d, a).unwrap()),
        (0.3f64..2.5).prop_map(|a| RossProfile::new(RossFamily::Complex, 4, a).unwrap()),
        (0.3f64..2.5).prop_map(|a| RossProfile::new(RossFamily::Quaternionic, 8, a).unwrap()),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn angle_recovers_law_of_cosines(a in 0.0f64..3.0, r1 in 0.05f64..4.0, r2 in 0.05f64..4.0, alpha in 0.05f64..3.09) {
        let k = ModelCurvature::new(a).unwrap();
        let d = law_of_cosines(k, r1, r2, alpha).unwrap();
        let back = angle_from_sides(k, r1, r2, d).unwrap();
        let again = law_of_cosines(k, r1, r2, back).unwrap();
        prop_assert!((again - d).abs() <= 1e-9 * (1.0 + d), "{back} vs {alpha}");
        prop_assert!(d <= r1 + r2 + 1e-12 && d >= (r1 - r2).abs() - 1e-12);
    }

    #[test]
    fn epsilon_bound_decreases_to_zero(a in 0.1f64..3.0, n in 1usize..16, r in 0.1f64..20.0) {
        let k = ModelCurvature::new(a).unwrap();
        let e1 = epsilon_bound(k, n, r).unwrap();
        let e2 = epsilon_bound(k, n, r * 1.5).unwrap();
        prop_assert!(e1 > 0.0 && e2 <= e1);
    }

    #[test]
    fn mobius_translation_preserves_distance(
        u in prop::array::uniform3(-1.0f64..1.0), w in prop::array::uniform3(-1.0f64..1.0),
        z in prop::array::uniform3(-1.0f64..1.0), s in 0.0f64..0.9, t in 0.0f64..0.9, q in 0.0f64..0.9,
    ) {
        let k = ModelCurvature::new(1.0).unwrap();
        let (x, y, c) = (ball_point(u, s), ball_point(w, t), ball_point(z, q));
        let d0 = ball_distance(k, &x, &y).unwrap();
        let mx = BallPoint::new(mobius(c.coords(), x.coords()).as_slice()).unwrap();
        let my = BallPoint::new(mobius(c.coords(), y.coords()).as_slice()).unwrap();
        let d1 = ball_distance(k, &mx, &my).unwrap();
        prop_assert!((d0 - d1).abs() <= 1e-9 * (1.0 + d0));
    }

    #[test]
    fn kronrod_is_exact_on_low_degree_polynomials(c in prop::array::uniform8(-3.0f64..3.0), lo in -2.0f64..0.0, hi in 0.1f64..2.0) {
        let p = |x: f64| c.iter().rev().fold(0.0, |acc, ci| acc * x + ci);
        let anti = |x: f64| c.iter().enumerate().map(|(i, ci)| ci * x.powi(i as i32 + 1) / (i as f64 + 1.0)).sum::<f64>();
        let r = integrate(p, lo, hi, 0.0, 1e-13).unwrap();
        let scale: f64 = c.iter().map(|v| v.abs()).sum::<f64>() * 4f64.powi(8);
        prop_assert!((r.value - (anti(hi) - anti(lo))).abs() <= 1e-13 * scale);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn sphere_operator_dominates_horosphere_operator(p in family(), r in 0.1f64..25.0) {
        let prof = p.profile();
        let u = jacobi::horosphere_shape_operator(&prof, jacobi::default_r_max(&prof).unwrap()).unwrap();
        let s = jacobi::sphere_shape_operator(&prof, r).unwrap();
        let gap = horolab::jacobi::ShapeOperator::new(r, &s.a - &u.op.a);
        let e = gap.eigenvalues();
        prop_assert!(e[0] >= -1e-9, "sphere below horosphere: {:?}", e);
        prop_assert!(e[e.len() - 1] <= 1.0 / r + 1e-9, "sphere too far above horosphere: {:?}", e);
    }
}
