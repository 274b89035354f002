//! Property tests for invariants that hold across parameter ranges.

use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use num_complex::Complex64;
use proptest::prelude::*;

use lbmcf_core::barriers::{capped_kappa, polar_e_by_differences};
use lbmcf_core::geometry::phase;
use lbmcf_core::{
    build_polar_interpolant, construct_semistable, CurveProblem, CurveState, GraphFlowState,
    GraphProblem, HyperbolaBarrier, KahlerData, MonotoneCubic, PolarInterpolant, PotentialProfile,
    RateVariant,
};

fn interpolant() -> &'static PolarInterpolant {
    static PI_CELL: OnceLock<PolarInterpolant> = OnceLock::new();
    PI_CELL.get_or_init(|| {
        let d = construct_semistable(3, 10.0, None).unwrap();
        let prof = PotentialProfile::quadratic(&d.kd, 1.0).unwrap();
        build_polar_interpolant(&d, &prof, 1e-3).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn phase_is_argument_of_the_product(x in 1.0f64..20.0, f in -30.0f64..30.0, fp in -50.0f64..50.0, n in 1u32..6) {
        let z = Complex64::new(x, f).powi(n as i32 - 1) * Complex64::new(1.0, fp);
        let th = phase(x, f, fp, n);
        let d = (th - z.arg()).rem_euclid(2.0 * PI);
        prop_assert!(d.min(2.0 * PI - d) < 1e-9);
    }

    #[test]
    fn ivp_follows_implicit_relation(r in 2.0f64..64.0, frac in 0.0f64..1.0, inner in any::<bool>()) {
        let v = if inner { RateVariant::InnerSquared } else { RateVariant::OuterSquared };
        let hb = HyperbolaBarrier::standard(3, r, capped_kappa(6.0 * r, r, 0.9), v).unwrap();
        let t = frac * hb.hitting_time(2.0 * r);
        let b = hb.solve_b_ivp(t).unwrap();
        prop_assert!(b > 2.0 * r - 1e-9 && b <= 5.0 * r);
        prop_assert!(hb.closed_form_residual(t, b) < 1e-8 * hb.c0.abs());
    }

    #[test]
    fn polar_algebra_matches_differences(lb in -3.0f64..4.0, s in 0.05f64..0.95) {
        let pi = interpolant();
        let b = 10f64.powf(lb);
        let t = pi.theta_min + s * (pi.theta_max - pi.theta_min);
        let p = pi.point(t, b);
        let fd = polar_e_by_differences(pi, t, b, 1e-4);
        prop_assert!((p.e - fd).abs() < 1e-5 * (1.0 + p.e.abs()), "{} vs {}", p.e, fd);
        prop_assert!(p.e > 0.0);
    }

    #[test]
    fn monotone_cubic_preserves_order(steps in prop::collection::vec((0.01f64..1.0, 0.0f64..2.0), 3..20)) {
        let mut xs = vec![0.0];
        let mut ys = vec![0.0];
        for (dx, dy) in &steps {
            xs.push(xs.last().unwrap() + dx);
            ys.push(ys.last().unwrap() + dy);
        }
        let m = MonotoneCubic::new(xs.clone(), ys.clone()).unwrap();
        let x_end = *xs.last().unwrap();
        let mut prev = m.eval(0.0);
        for k in 1..=400 {
            let v = m.eval(x_end * k as f64 / 400.0);
            prop_assert!(v >= prev - 1e-12);
            prev = v;
        }
        for (x, y) in xs.iter().zip(&ys) {
            prop_assert!((m.eval(*x) - y).abs() < 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 6, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn curve_flow_tracks_graph_flow(amp in -0.2f64..0.2, mode in 1u32..3) {
        let kd = KahlerData::new(3, 3.0, 3.0, 1.0).unwrap();
        let prof = PotentialProfile::quadratic(&kd, 1.0).unwrap();
        let n = 256;
        let f0 = move |x: f64| x + amp * (PI * mode as f64 * (x - 1.0) / 2.0).sin();
        let t_end = 0.01;

        let mut g = GraphFlowState::from_fn(GraphProblem::new(kd, prof.clone(), n).unwrap(), f0).unwrap();
        g.advance_to(t_end).unwrap();
        let dx = g.dx();
        // f′ > 0 for these data, so the shape-preserving interpolant applies
        let gi = MonotoneCubic::new(g.xs().to_vec(), g.f.clone()).unwrap();

        let problem: Arc<CurveProblem> = CurveProblem::new(kd, prof, dx).unwrap();
        let mut c = CurveState::from_graph(problem, n, f0).unwrap();
        c.advance_to(t_end).unwrap();
        let err = c.pts.iter().map(|p| (gi.eval(p[0]) - p[1]).abs()).fold(0.0, f64::max);
        prop_assert!(err < 20.0 * dx * dx, "curve vs graph {err:e}, dx^2 {:e}", dx * dx);
    }
}
