mod common;

use common::*;
use nalgebra::DMatrix;
use proctensor::datagen::{
    generate_dataset, generate_dataset_from_process, sample_input_state, sample_inputs, sample_rng, total_trace,
    validate_dataset,
};
use proctensor::model::ModelParams;
use proctensor::process::{apply_process, build_exact_process_mpo};
use proctensor::serialize::write_dataset;
use proctensor::C64;
use proptest::prelude::*;
use rand::Rng;

fn bloch_length(rho: &DMatrix<C64>) -> f64 {
    let x = 2.0 * rho[(0, 1)].re;
    let y = -2.0 * rho[(0, 1)].im;
    let z = (rho[(0, 0)] - rho[(1, 1)]).re;
    (x * x + y * y + z * z).sqrt()
}

fn mean_and_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

fn bytes(d: &proctensor::datagen::Dataset) -> Vec<u8> {
    let mut buf = Vec::new();
    write_dataset(d, &mut buf).unwrap();
    buf
}

#[test]
fn sampled_states_are_valid_and_reproducible() {
    let mut r = sample_rng(3, 0);
    for _ in 0..10_000 {
        let rho = sample_input_state(&mut r);
        assert_eq!(rho[(0, 0)].re + rho[(1, 1)].re, 1.0);
        assert_eq!(rho[(0, 0)].im, 0.0);
        assert_eq!(rho[(1, 1)].im, 0.0);
        assert_eq!(rho[(0, 1)], rho[(1, 0)].conj());
        for ev in rho.symmetric_eigenvalues().iter() {
            assert!((-1e-15..=1.0 + 1e-15).contains(ev), "{ev}");
        }
    }
    let a = sample_input_state(&mut sample_rng(99, 5));
    let b = sample_input_state(&mut sample_rng(99, 5));
    assert_eq!(a, b);
}

#[test]
fn bloch_length_matches_monte_carlo_oracle() {
    let lib: Vec<f64> = (0..10_000)
        .map(|m| bloch_length(&sample_input_state(&mut sample_rng(2024, m))))
        .collect();
    let mut g = rng(77);
    let oracle: Vec<f64> = (0..1_000_000)
        .map(|_| {
            let gm = rand_matrix(&mut g, 2, 2);
            let w = &gm * gm.adjoint();
            let t = w.trace().re;
            bloch_length(&(w / c(t, 0.0)))
        })
        .collect();
    let (m1, v1) = mean_and_var(&lib);
    let (m2, v2) = mean_and_var(&oracle);
    let se = (v1 / lib.len() as f64 + v2 / oracle.len() as f64).sqrt();
    assert!((m1 - m2).abs() <= 3.0 * se, "{m1} vs {m2} (se {se})");
}

#[test]
fn empty_dataset() {
    let d = generate_dataset(&ModelParams::default(), 3, 0, 1).unwrap();
    assert!(d.is_empty());
    assert_eq!(d.len(), 0);
}

#[test]
fn outputs_agree_with_exact_process() {
    let p = ModelParams::default();
    let n = 4;
    let d = generate_dataset(&p, n, 40, 5).unwrap();
    let (u, _) = build_exact_process_mpo(&p, n, usize::MAX, 1e-12).unwrap();
    for (xs, y) in d.inputs.iter().zip(&d.outputs) {
        let want = apply_process(&u, xs).unwrap().to_dense();
        assert!(dist(&y.to_dense(), &want) < 1e-8);
    }
    let from_mpo = generate_dataset_from_process(&u, &p, 40, 5).unwrap();
    assert_eq!(from_mpo.inputs, d.inputs);
    validate_dataset(&d, 1e-10).unwrap();
    validate_dataset(&from_mpo, 1e-10).unwrap();
}

#[test]
fn smaller_datasets_are_prefixes() {
    let p = ModelParams {
        l: 2,
        ..ModelParams::default()
    };
    let big = generate_dataset(&p, 3, 12, 8).unwrap();
    let small = generate_dataset(&p, 3, 5, 8).unwrap();
    assert_eq!(big.truncated(5), small);
}

proptest! {
    #![proptest_config(cases(200))]

    #[test]
    fn generation_is_deterministic(seed in any::<u64>(), n in 1usize..4, m in 0usize..5) {
        let mut g = rng(seed);
        let p = rand_params(&mut g, 2);
        let a = generate_dataset(&p, n, m, seed).unwrap();
        let b = generate_dataset(&p, n, m, seed).unwrap();
        prop_assert_eq!(bytes(&a), bytes(&b));
    }

    #[test]
    fn distinct_seeds_give_disjoint_inputs(s1 in any::<u64>(), s2 in any::<u64>(), n in 1usize..7) {
        prop_assume!(s1 != s2);
        let a: Vec<_> = (0..100).map(|m| sample_inputs(s1, m, n)).collect();
        let b: Vec<_> = (0..100).map(|m| sample_inputs(s2, m, n)).collect();
        for x in &a {
            prop_assert!(!b.contains(x));
        }
    }

    #[test]
    fn outputs_have_unit_total_trace(seed in any::<u64>(), n in 1usize..4) {
        let mut g = rng(seed);
        let p = rand_params(&mut g, 2);
        let m = g.random_range(1..4);
        let d = generate_dataset(&p, n, m, seed).unwrap();
        for y in &d.outputs {
            let dense = y.to_dense();
            let mut t = c(0.0, 0.0);
            for (idx, z) in dense.iter().enumerate() {
                if (0..n).all(|k| matches!((idx >> (2 * k)) & 3, 0 | 3)) {
                    t += z;
                }
            }
            prop_assert!((t - c(1.0, 0.0)).norm() < 1e-8);
            prop_assert!((total_trace(y) - c(1.0, 0.0)).norm() < 1e-8);
        }
    }
}
