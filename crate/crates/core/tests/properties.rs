use std::sync::Arc;

use carleman_core::fields::{ConstantMetric, ExpWeight, ExprMetric, ExprWeight, MetricField, WeightFunction};
use carleman_core::grid::{make_bump, DivergenceOperator, GridDomain, Region};
use carleman_core::pseudoconvexity::{normal_direction, q_form, Q_form, PointFrame};
use carleman_core::three_sphere::{tau_tilde, theta};
use proptest::prelude::*;

fn pairs() -> Vec<(Box<dyn MetricField>, Box<dyn WeightFunction>)> {
    let radial = ExpWeight::new(Arc::new(ExprWeight::neg_abs2(2)), 8.0).unwrap();
    vec![
        (Box::new(ConstantMetric::identity(2)), Box::new(radial.clone())),
        (
            Box::new(ConstantMetric::diag(&[2.0, 0.5]).unwrap()),
            Box::new(ExprWeight::parse(2, "x1 - 0.3*x1^2 + 0.2*x1*x2").unwrap()),
        ),
        (Box::new(ExprMetric::sin_perturbed(2, 0.1).unwrap()), Box::new(radial)),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn q_form_splits_on_characteristic_directions(
        which in 0usize..3,
        r in 0.5f64..1.0,
        ang in 0.0f64..std::f64::consts::TAU,
        xi in prop::array::uniform2(-5.0f64..5.0),
        tau in 0.1f64..10.0,
    ) {
        let (metric, phi) = &pairs()[which];
        let x = [r * ang.cos(), r * ang.sin()];
        let big = Q_form(metric.as_ref(), phi.as_ref(), &x, &xi, tau).unwrap();
        let f = PointFrame::new(metric.as_ref(), phi.as_ref(), &x).unwrap();
        let xg = f.metric.g_inv.mul_vec(&xi);
        let n = normal_direction(metric.as_ref(), phi.as_ref(), &x).unwrap();
        let split = q_form(metric.as_ref(), phi.as_ref(), &x, &xg).unwrap()
            + tau * tau * f.norm_g_phi * f.norm_g_phi * q_form(metric.as_ref(), phi.as_ref(), &x, &n).unwrap();
        prop_assert!((big - split).abs() <= 1e-9 * (1.0 + big.abs()), "{big} vs {split}");
    }

    #[test]
    fn q_form_is_quadratic(
        which in 0usize..3,
        x in prop::array::uniform2(-0.9f64..0.9),
        t in prop::array::uniform2(-3.0f64..3.0),
        s in -4.0f64..4.0,
    ) {
        prop_assume!(x[0].hypot(x[1]) > 0.1);
        let (metric, phi) = &pairs()[which];
        let q = q_form(metric.as_ref(), phi.as_ref(), &x, &t).unwrap();
        let ts = [s * t[0], s * t[1]];
        let qs = q_form(metric.as_ref(), phi.as_ref(), &x, &ts).unwrap();
        prop_assert!((qs - s * s * q).abs() <= 1e-10 * (1.0 + qs.abs()));
    }

    #[test]
    fn theta_in_unit_interval_and_decreasing(
        r0 in 0.01f64..0.49,
        a in 0.0f64..1.0,
        b in 0.0f64..1.0,
        mu0 in 0.5f64..2000.0,
    ) {
        let lo = 0.5 * r0;
        let span = 0.5 - lo;
        let (p, q) = (lo + span * (0.01 + 0.98 * a.min(b)), lo + span * (0.01 + 0.98 * a.max(b)));
        let tp = theta(r0, p, mu0).unwrap();
        let tq = theta(r0, q, mu0).unwrap();
        prop_assert!(tp > 0.0 && tp < 1.0);
        prop_assert!(tq <= tp);
    }

    #[test]
    fn tau_tilde_is_logarithmic(ratio in 1.0f64..1e6, n0 in 1e-6f64..1e3) {
        let t1 = tau_tilde(n0, n0 * ratio, 0.25, 8.0).unwrap();
        let t2 = tau_tilde(n0, n0 * ratio * ratio, 0.25, 8.0).unwrap();
        prop_assert!((t2 - 2.0 * t1).abs() <= 1e-12 * (1.0 + t2.abs()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn grid_operator_is_symmetric(seed_u in 0u64..1000, seed_v in 0u64..1000, eps in 0.0f64..0.2) {
        let metric = ExprMetric::sin_perturbed(2, eps).unwrap();
        let grid = Arc::new(GridDomain::new(2, 1.0, 33, Region::Ball { radius: 1.0 }).unwrap());
        let op = DivergenceOperator::new(&metric, grid.clone()).unwrap();
        let u = make_bump(&grid, &[0.1, 0.0], 0.7, Some(seed_u)).unwrap();
        let v = make_bump(&grid, &[-0.1, 0.1], 0.7, Some(seed_v)).unwrap();
        let lhs = grid.inner(&op.apply(&u.values), &v.values);
        let rhs = grid.inner(&u.values, &op.apply(&v.values));
        prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
    }
}
