//! Optimality checks for the ball projections, independent of how they are computed.

use dataenrich::{project_l1, project_l2};
use ndarray::Array1;
use proptest::prelude::*;

fn vectors() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, 1..40)
}

/// `z` is the projection of `x` onto a convex set iff `<x - z, w - z> <= 0`
/// for every `w` in the set. For an l1 ball it is enough to check vertices.
fn l1_variational_gap(x: &Array1<f64>, z: &Array1<f64>, center: &Array1<f64>, d: f64) -> f64 {
    let r = x - z;
    let mut worst = f64::NEG_INFINITY;
    for i in 0..x.len() {
        for sign in [-1.0, 1.0] {
            let mut w = center.clone();
            w[i] += sign * d;
            worst = worst.max(r.dot(&(&w - z)));
        }
    }
    worst
}

proptest! {
    // Pi_{Omega - b}(x - b) = Pi_Omega(x) - b, with Omega - b the l1 ball centred at -b.
    #[test]
    fn l1_translation(pair in vectors().prop_flat_map(|v| {
        let p = v.len();
        (Just(v), prop::collection::vec(-5.0f64..5.0, p))
    }), d in 0.1f64..15.0) {
        let (x, b) = (Array1::from(pair.0), Array1::from(pair.1));
        let z = project_l1(x.view(), d).unwrap() - &b;
        let shifted = &x - &b;
        let center = -&b;
        // z lies in the translated ball...
        let norm: f64 = (&z - &center).iter().map(|v| v.abs()).sum();
        prop_assert!(norm <= d * (1.0 + 1e-12));
        // ...and satisfies the optimality condition there.
        let scale = 1.0 + shifted.dot(&shifted);
        prop_assert!(l1_variational_gap(&shifted, &z, &center, d) <= 1e-9 * scale);
    }

    #[test]
    fn l2_translation(pair in vectors().prop_flat_map(|v| {
        let p = v.len();
        (Just(v), prop::collection::vec(-5.0f64..5.0, p))
    }), d in 0.1f64..15.0) {
        let (x, b) = (Array1::from(pair.0), Array1::from(pair.1));
        let z = project_l2(x.view(), d).unwrap() - &b;
        let shifted = &x - &b;
        let center = -&b;
        let r = &shifted - &z;
        // max over the ball of <r, w - z> is <r, center - z> + d ||r||.
        let gap = r.dot(&(&center - &z)) + d * r.dot(&r).sqrt();
        prop_assert!(gap <= 1e-9 * (1.0 + shifted.dot(&shifted)));
    }

    #[test]
    fn l1_projection_is_optimal(x in vectors(), d in 0.01f64..15.0) {
        let x = Array1::from(x);
        let z = project_l1(x.view(), d).unwrap();
        let center = Array1::zeros(x.len());
        prop_assert!(l1_variational_gap(&x, &z, &center, d) <= 1e-9 * (1.0 + x.dot(&x)));
    }

    #[test]
    fn l1_keeps_signs_and_order(x in vectors(), d in 0.01f64..15.0) {
        let x = Array1::from(x);
        let z = project_l1(x.view(), d).unwrap();
        for i in 0..x.len() {
            prop_assert!(z[i] == 0.0 || z[i].signum() == x[i].signum());
            prop_assert!(z[i].abs() <= x[i].abs());
            for j in 0..x.len() {
                if x[i].abs() > x[j].abs() {
                    prop_assert!(z[i].abs() >= z[j].abs());
                }
            }
        }
    }
}
