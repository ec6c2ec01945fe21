use dislocation_iga::basis::{make_graded_knot_vector, Grading, KnotVector, TensorBasis3D};
use proptest::prelude::*;

fn graded(n: usize, p: usize, gamma: f64) -> KnotVector {
    make_graded_knot_vector(n, p, Grading::centered(gamma)).unwrap()
}

proptest! {
    #[test]
    fn partition_of_unity_and_nonnegativity(
        n in 3usize..20, p in 1usize..4, gamma in 1.0f64..3.0, t in 0.0f64..=1.0
    ) {
        prop_assume!(n > p);
        let kv = graded(n, p, gamma);
        let e = kv.eval(t).unwrap();
        let sum: f64 = e.values().iter().sum();
        prop_assert!((sum - 1.0).abs() <= 1e-12);
        prop_assert!(e.values().iter().all(|&v| v >= -1e-15));
        prop_assert!(e.first + p < n);
    }

    #[test]
    fn derivative_sums_vanish(n in 4usize..16, p in 1usize..4, t in 0.0f64..=1.0) {
        prop_assume!(n > p);
        let kv = graded(n, p, 2.0);
        let e = kv.eval_derivatives(t, 1).unwrap();
        let s: f64 = e.derivs[1].iter().sum();
        prop_assert!(s.abs() <= 1e-9 * n as f64);
    }

    #[test]
    fn tensor_gradient_matches_differences(
        t0 in 0.05f64..0.95, t1 in 0.05f64..0.95, t2 in 0.05f64..0.95
    ) {
        let b = TensorBasis3D::with_unit_weights([graded(7, 2, 2.0), graded(6, 2, 2.0), KnotVector::uniform(5, 2).unwrap()]);
        let t = [t0, t1, t2];
        let e = b.eval(t).unwrap();
        let h = 1e-6;
        for d in 0..3 {
            let (mut tp, mut tm) = (t, t);
            tp[d] += h;
            tm[d] -= h;
            let (ep, em) = (b.eval(tp).unwrap(), b.eval(tm).unwrap());
            for (k, &alpha) in e.indices.iter().enumerate() {
                let val = |ev: &dislocation_iga::basis::TensorBasisEval| {
                    ev.indices.iter().position(|&a| a == alpha).map_or(0.0, |i| ev.values[i])
                };
                let fd = (val(&ep) - val(&em)) / (2.0 * h);
                let g = e.grads[k][d];
                prop_assert!((fd - g).abs() <= 1e-6 * g.abs().max(1.0), "{} vs {}", fd, g);
            }
        }
    }

    #[test]
    fn flat_index_round_trip(i in 0usize..5, j in 0usize..6, k in 0usize..7) {
        let b = TensorBasis3D::with_unit_weights([
            KnotVector::uniform(5, 2).unwrap(),
            KnotVector::uniform(6, 2).unwrap(),
            KnotVector::uniform(7, 3).unwrap(),
        ]);
        let a = b.flat_index([i, j, k]);
        prop_assert_eq!(a, i + 5 * (j + 6 * k));
        prop_assert_eq!(b.multi_index(a), [i, j, k]);
    }
}

#[test]
fn grading_clusters_knots_at_the_center() {
    let kv = graded(48, 2, 2.0);
    let spans = kv.spans();
    let mid = spans.iter().map(|s| s.length()).fold(f64::INFINITY, f64::min);
    let end = spans[0].length();
    assert!(end > 10.0 * mid);
    let u = graded(48, 2, 1.0);
    let l: Vec<f64> = u.spans().iter().map(|s| s.length()).collect();
    assert!(l.iter().all(|&x| (x - l[0]).abs() < 1e-14));
}
