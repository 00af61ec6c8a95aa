mod common;

use aenet::numerics::{aent, gradcheck, Graph, Rng, Tensor};
use common::{gaussian, op_cases, op_worst_error, FD_STEP, GRAD_TOL};
use proptest::prelude::*;

fn triple_loop(a: &Tensor, b: &Tensor) -> Vec<f64> {
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            for p in 0..k {
                out[i * n + j] += a.at(i, p) * b.at(p, j);
            }
        }
    }
    out
}

proptest! {
    #[test]
    fn matmul_matches_triple_loop(m in 1usize..6, k in 1usize..6, n in 1usize..6, seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let a = gaussian(&mut rng, &[m, k]);
        let b = gaussian(&mut rng, &[k, n]);
        let got = a.matmul(&b).unwrap();
        for (x, y) in got.data().iter().zip(triple_loop(&a, &b)) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn softmax_rows_are_distributions(m in 1usize..5, n in 1usize..7, seed in any::<u64>(), shift in -50.0f64..50.0) {
        let mut rng = Rng::new(seed);
        let x = gaussian(&mut rng, &[m, n]).map(|v| 10.0 * v);
        let p = x.softmax();
        for r in 0..m {
            let row = p.row_slice(r);
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&v| v >= 0.0));
        }
        // shift invariance
        let q = x.map(|v| v + shift).softmax();
        prop_assert!(p.max_abs_diff(&q) < 1e-12);
    }

    #[test]
    fn gmp_is_permutation_invariant_and_bounds_rows(m in 1usize..6, n in 1usize..5, seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let x = gaussian(&mut rng, &[m, n]);
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let pooled = g.gmp_rows(xv).unwrap();
        let pooled = g.value(pooled).clone();
        for r in 0..m {
            for c in 0..n {
                prop_assert!(pooled.at(0, c) >= x.at(r, c));
            }
        }
        let perm = rng.permutation(m);
        let rows: Vec<Vec<f64>> = perm.iter().map(|&r| x.row_slice(r).to_vec()).collect();
        let mut g2 = Graph::new();
        let yv = g2.constant(Tensor::from_rows(&rows).unwrap());
        let pooled2 = g2.gmp_rows(yv).unwrap();
        prop_assert_eq!(g2.value(pooled2), &pooled);
    }

    #[test]
    fn aent_roundtrip_through_files(m in 1usize..5, n in 1usize..5, seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let t = gaussian(&mut rng, &[m, n]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.aent");
        aent::write(&path, &t).unwrap();
        prop_assert_eq!(aent::read(&path).unwrap(), aent::f32_rounded(&t));
    }
}

#[test]
fn every_operation_passes_gradcheck() {
    for (i, case) in op_cases().iter().enumerate() {
        let worst = op_worst_error(case, 100, 1000 + i as u64);
        assert!(worst < GRAD_TOL, "{}: max relative error {worst:e}", case.name);
    }
}

#[test]
fn shared_subexpression_accumulates_from_both_consumers() {
    // y = sum(x ⊙ x) + sum(3x) reuses x twice; dy/dx = 2x + 3
    let x = Tensor::row(&[0.5, -1.0, 2.0]);
    let mut g = Graph::new();
    let xv = g.param(x.clone());
    let sq = g.mul(xv, xv).unwrap();
    let lin = g.scale(xv, 3.0).unwrap();
    let a = g.sum(sq).unwrap();
    let b = g.sum(lin).unwrap();
    let y = g.add(a, b).unwrap();
    g.backward(y).unwrap();
    assert_eq!(g.grad(xv).data(), &[4.0, 1.0, 7.0]);
}

#[test]
fn wrong_backward_is_flagged() {
    // square with a deliberately halved derivative
    let report = gradcheck(
        |g, v| {
            let x = g.value(v[0]).clone();
            let value = x.map(|t| t * t);
            let y = g.custom(
                &[v[0]],
                value,
                Box::new(|inputs, _out, grad| {
                    vec![inputs[0].zip_map(grad, "bad square", |x, g| x * g).unwrap()]
                }),
            )?;
            g.sum(y)
        },
        &[("x".into(), Tensor::row(&[0.7, -1.3, 2.1]))],
        FD_STEP,
    )
    .unwrap();
    assert!(report.max_rel_error() > 1e-2);
    assert_eq!(report.flagged(GRAD_TOL).len(), 1);
    assert!(!report.passed(GRAD_TOL));
}

#[test]
fn correct_custom_backward_passes() {
    let report = gradcheck(
        |g, v| {
            let x = g.value(v[0]).clone();
            let y = g.custom(
                &[v[0]],
                x.map(|t| t * t),
                Box::new(|inputs, _out, grad| {
                    vec![inputs[0].zip_map(grad, "square", |x, g| 2.0 * x * g).unwrap()]
                }),
            )?;
            g.sum(y)
        },
        &[("x".into(), Tensor::row(&[0.7, -1.3, 2.1]))],
        FD_STEP,
    )
    .unwrap();
    assert!(report.passed(GRAD_TOL));
}

#[test]
fn substreams_are_independent_of_draw_order() {
    let mut a = Rng::substream(42, "data");
    let first: Vec<u64> = (0..4).map(|_| a.next_u64()).collect();
    let mut other = Rng::substream(42, "init");
    for _ in 0..100 {
        other.next_u64();
    }
    let mut b = Rng::substream(42, "data");
    let second: Vec<u64> = (0..4).map(|_| b.next_u64()).collect();
    assert_eq!(first, second);
    assert_ne!(Rng::substream(42, "data").next_u64(), Rng::substream(42, "batch").next_u64());
}

#[test]
fn gaussian_moments() {
    let mut rng = Rng::new(9);
    let xs: Vec<f64> = (0..200_000).map(|_| rng.gaussian()).collect();
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
    assert!(mean.abs() < 0.01, "mean {mean}");
    assert!((var - 1.0).abs() < 0.02, "var {var}");
}
