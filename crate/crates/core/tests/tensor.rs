mod common;

use common::*;
use nalgebra::{DMatrix, SymmetricEigen};
use proctensor::tensor::{contract, expm, herm_eig, svd_truncate, DenseTensor};
use proctensor::C64;
use proptest::prelude::*;
use rand::Rng;

fn unravel(mut k: usize, shape: &[usize]) -> Vec<usize> {
    let mut idx = vec![0; shape.len()];
    for a in (0..shape.len()).rev() {
        idx[a] = k % shape[a];
        k /= shape[a];
    }
    idx
}

fn ravel(idx: &[usize], shape: &[usize]) -> usize {
    idx.iter().zip(shape).fold(0, |acc, (&i, &d)| acc * d + i)
}

/// Brute force over every pair of entries.
fn contract_oracle(a: &DenseTensor, b: &DenseTensor, pairs: &[(usize, usize)]) -> DenseTensor {
    let free_a: Vec<usize> = (0..a.rank()).filter(|x| pairs.iter().all(|p| p.0 != *x)).collect();
    let free_b: Vec<usize> = (0..b.rank()).filter(|x| pairs.iter().all(|p| p.1 != *x)).collect();
    let mut shape: Vec<usize> = free_a.iter().map(|&x| a.shape()[x]).collect();
    shape.extend(free_b.iter().map(|&x| b.shape()[x]));
    let mut out_shape = shape.clone();
    if out_shape.is_empty() {
        out_shape.push(1);
    }
    let mut out = vec![c(0.0, 0.0); shape.iter().product()];
    for ka in 0..a.len() {
        let ia = unravel(ka, a.shape());
        for kb in 0..b.len() {
            let ib = unravel(kb, b.shape());
            if pairs.iter().any(|&(x, y)| ia[x] != ib[y]) {
                continue;
            }
            let mut io: Vec<usize> = free_a.iter().map(|&x| ia[x]).collect();
            io.extend(free_b.iter().map(|&x| ib[x]));
            out[ravel(&io, &shape)] += a.data()[ka] * b.data()[kb];
        }
    }
    DenseTensor::new(out_shape, out).unwrap()
}

/// Random operands of rank 1..=3 and dims 1..=5 (each at most 125
/// entries) with up to two contracted axis pairs.
fn rand_contraction(seed: u64) -> (DenseTensor, DenseTensor, Vec<(usize, usize)>) {
    let mut g = rng(seed);
    let ra = g.random_range(1..=3usize);
    let rb = g.random_range(1..=3usize);
    let np = g.random_range(0..=ra.min(rb).min(2));
    let sa: Vec<usize> = (0..ra).map(|_| g.random_range(1..=5)).collect();
    let mut sb: Vec<usize> = (0..rb).map(|_| g.random_range(1..=5)).collect();
    let mut axes_a: Vec<usize> = (0..ra).collect();
    let mut axes_b: Vec<usize> = (0..rb).collect();
    let mut pairs = Vec::new();
    for _ in 0..np {
        let x = axes_a.remove(g.random_range(0..axes_a.len()));
        let y = axes_b.remove(g.random_range(0..axes_b.len()));
        sb[y] = sa[x];
        pairs.push((x, y));
    }
    let a = rand_tensor(&mut g, &sa);
    let b = rand_tensor(&mut g, &sb);
    (a, b, pairs)
}

fn tensor_dist(a: &DenseTensor, b: &DenseTensor) -> f64 {
    assert_eq!(a.shape(), b.shape());
    dist(a.data(), b.data())
}

/// Singular values from the eigenvalues of `m†m`, computed in the real
/// representation `[[Re, -Im], [Im, Re]]` (each eigenvalue appears twice).
fn singular_values_oracle(m: &DMatrix<C64>) -> Vec<f64> {
    let g = m.adjoint() * m;
    let n = g.nrows();
    let real = DMatrix::<f64>::from_fn(2 * n, 2 * n, |i, j| {
        let z = g[(i % n, j % n)];
        match (i < n, j < n) {
            (true, true) | (false, false) => z.re,
            (true, false) => -z.im,
            (false, true) => z.im,
        }
    });
    let mut ev: Vec<f64> = SymmetricEigen::new(real).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| b.partial_cmp(a).unwrap());
    ev.iter().step_by(2).map(|&x| x.max(0.0).sqrt()).collect()
}

/// Scaling-and-squaring around a plain Taylor sum.
fn expm_oracle(m: &DMatrix<C64>, terms: usize) -> DMatrix<C64> {
    let mut s = 0;
    let mut scaled = m.clone();
    while scaled.norm() > 0.5 {
        scaled /= c(2.0, 0.0);
        s += 1;
    }
    let n = m.nrows();
    let mut term = DMatrix::<C64>::identity(n, n);
    let mut sum = term.clone();
    for k in 1..terms {
        term = &term * &scaled / c(k as f64, 0.0);
        sum += &term;
    }
    for _ in 0..s {
        sum = &sum * &sum;
    }
    sum
}

fn taylor_plain(m: &DMatrix<C64>, terms: usize) -> DMatrix<C64> {
    let n = m.nrows();
    let mut term = DMatrix::<C64>::identity(n, n);
    let mut sum = term.clone();
    for k in 1..terms {
        term = &term * m / c(k as f64, 0.0);
        sum += &term;
    }
    sum
}

#[test]
fn contraction_matches_triple_loop() {
    let mut g = rng(1);
    let a = rand_tensor(&mut g, &[2, 3, 2]);
    let b = rand_tensor(&mut g, &[3, 2]);
    let got = contract(&a, &b, &[(1, 0)]).unwrap();
    assert_eq!(got.shape(), &[2, 2, 2]);
    for i in 0..2 {
        for k in 0..2 {
            for l in 0..2 {
                let mut s = c(0.0, 0.0);
                for j in 0..3 {
                    s += a.get(&[i, j, k]) * b.get(&[j, l]);
                }
                assert!((got.get(&[i, k, l]) - s).norm() < 1e-13);
            }
        }
    }
}

#[test]
fn contraction_rejects_mismatched_axes() {
    let mut g = rng(2);
    let a = rand_tensor(&mut g, &[2, 3]);
    let b = rand_tensor(&mut g, &[2, 3]);
    assert!(contract(&a, &b, &[(1, 0)]).is_err());
}

#[test]
fn truncated_svd_against_eigen_oracle() {
    let mut g = rng(3);
    let m = rand_matrix(&mut g, 6, 6);
    let oracle = singular_values_oracle(&m);
    let full = svd_truncate(&m, 6, 0.0).unwrap();
    for (s, o) in full.s.iter().zip(&oracle) {
        assert!((s - o).abs() < 1e-10 * oracle[0], "{s} vs {o}");
    }
    let t = svd_truncate(&m, 3, 0.0).unwrap();
    assert_eq!(t.rank(), 3);
    let dropped: f64 = oracle[3..].iter().map(|s| s * s).sum();
    assert!((t.discarded_weight - dropped).abs() < 1e-10 * dropped);
    let err = (&m - t.reconstruct()).norm_squared();
    assert!((err - t.discarded_weight).abs() < 1e-10 * m.norm_squared());
}

#[test]
fn svd_cutoff_is_relative_to_largest_value() {
    let mut d = DMatrix::<C64>::zeros(4, 4);
    for (k, s) in [10.0, 1.0, 0.05, 0.001].iter().enumerate() {
        d[(k, k)] = c(*s, 0.0);
    }
    let t = svd_truncate(&d, 8, 0.004).unwrap();
    assert_eq!(t.s, vec![10.0, 1.0, 0.05]);
    assert!((t.discarded_weight - 1e-6).abs() < 1e-18);
}

#[test]
fn taylor_oracle_for_random_matrix() {
    let mut g = rng(4);
    let mut m = rand_matrix(&mut g, 16, 16);
    m *= c(2.0 / m.norm(), 0.0);
    let want = taylor_plain(&m, 60);
    assert!(rel_err(&expm(&m).unwrap(), &want) < 1e-10);
}

#[test]
fn hermitian_eigendecomposition_reconstructs() {
    let mut g = rng(5);
    let m = rand_hermitian(&mut g, 8);
    let (vals, v) = herm_eig(&m).unwrap();
    assert!(vals.windows(2).all(|w| w[0] <= w[1]));
    let d = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(8, vals.iter().map(|&x| c(x, 0.0))));
    assert!(rel_err(&(&v * d * v.adjoint()), &m) < 1e-10);
    assert!((v.adjoint() * &v - DMatrix::identity(8, 8)).norm() < 1e-10);
}

proptest! {
    #![proptest_config(cases(256))]

    #[test]
    fn contract_is_bilinear(seed in any::<u64>(), re in -3.0f64..3.0, im in -3.0f64..3.0) {
        let (a, b, pairs) = rand_contraction(seed);
        let alpha = c(re, im);
        let base = contract(&a, &b, &pairs).unwrap();
        let left = contract(&a.scale(alpha), &b, &pairs).unwrap();
        let right = contract(&a, &b.scale(alpha), &pairs).unwrap();
        let want = base.scale(alpha);
        let tol = 1e-12 * (1.0 + want.norm());
        prop_assert!(tensor_dist(&left, &want) < tol);
        prop_assert!(tensor_dist(&right, &want) < tol);

        let mut g = rng(seed ^ 0x5eed);
        let a2 = rand_tensor(&mut g, a.shape());
        let sum = DenseTensor::new(
            a.shape().to_vec(),
            a.data().iter().zip(a2.data()).map(|(x, y)| x + y).collect(),
        ).unwrap();
        let lhs = contract(&sum, &b, &pairs).unwrap();
        let r2 = contract(&a2, &b, &pairs).unwrap();
        let rhs = DenseTensor::new(
            base.shape().to_vec(),
            base.data().iter().zip(r2.data()).map(|(x, y)| x + y).collect(),
        ).unwrap();
        prop_assert!(tensor_dist(&lhs, &rhs) < 1e-12 * (1.0 + rhs.norm()));
    }

    #[test]
    fn contract_matches_nested_loops(seed in any::<u64>()) {
        let (a, b, pairs) = rand_contraction(seed);
        prop_assert!(a.len() <= 256 && b.len() <= 256);
        let got = contract(&a, &b, &pairs).unwrap();
        let want = contract_oracle(&a, &b, &pairs);
        prop_assert_eq!(got.shape(), want.shape());
        prop_assert!(tensor_dist(&got, &want) < 1e-12 * (1.0 + want.norm()));
    }

    #[test]
    fn untruncated_svd_reconstructs(seed in any::<u64>(), rows in 1usize..12, cols in 1usize..12, kind in 0u8..4) {
        let mut g = rng(seed);
        let m = match kind {
            0 => rand_matrix(&mut g, rows, cols),
            1 => {
                let r = g.random_range(1..=rows.min(cols));
                rand_matrix(&mut g, rows, r) * rand_matrix(&mut g, r, cols)
            }
            2 => {
                let mut m = rand_matrix(&mut g, rows, cols);
                for z in m.iter_mut() {
                    if g.random_bool(0.7) {
                        *z = c(0.0, 0.0);
                    }
                }
                m * c(1e-15, 0.0)
            }
            _ => {
                let mut m = rand_matrix(&mut g, rows, cols);
                for (k, mut col) in m.column_iter_mut().enumerate() {
                    col *= c(10f64.powi(-(k as i32) * 2), 0.0);
                }
                m
            }
        };
        let svd = svd_truncate(&m, rows.min(cols), 0.0).unwrap();
        let scale = m.norm().max(f64::MIN_POSITIVE);
        prop_assert!((&m - svd.reconstruct()).norm() <= 1e-10 * scale);
        prop_assert!(svd.s.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(svd.discarded_weight <= 1e-20 * scale * scale);
    }

    #[test]
    fn truncated_svd_error_is_discarded_weight(seed in any::<u64>(), rows in 1usize..10, cols in 1usize..10, keep in 1usize..10, cut in 0.0f64..0.5) {
        let mut g = rng(seed);
        let m = rand_matrix(&mut g, rows, cols);
        let svd = svd_truncate(&m, keep, cut).unwrap();
        prop_assert!(svd.rank() <= keep);
        prop_assert!(svd.s.iter().all(|&s| s >= cut * svd.s[0]));
        let err = (&m - svd.reconstruct()).norm_squared();
        prop_assert!((err - svd.discarded_weight).abs() <= 1e-10 * m.norm_squared());
    }

    #[test]
    fn expm_of_commuting_sum_factorizes(seed in any::<u64>(), n in 1usize..8, rotate in any::<bool>()) {
        let mut g = rng(seed);
        let diag = |g: &mut rand_chacha::ChaCha8Rng| {
            DMatrix::from_diagonal(&nalgebra::DVector::from_fn(n, |_, _| {
                c(g.random_range(-2.0..2.0), g.random_range(-3.0..3.0))
            }))
        };
        let mut a = diag(&mut g);
        let mut b = diag(&mut g);
        if rotate {
            let q = rand_matrix(&mut g, n, n).qr().q();
            a = &q * a * q.adjoint();
            b = &q * b * q.adjoint();
        }
        let lhs = expm(&(&a + &b)).unwrap();
        let rhs = expm(&a).unwrap() * expm(&b).unwrap();
        prop_assert!(rel_err(&lhs, &rhs) < 1e-10);
    }

    #[test]
    fn expm_matches_scaled_taylor(seed in any::<u64>(), n in 1usize..10, size in 0.0f64..10.0) {
        let mut g = rng(seed);
        let mut m = rand_matrix(&mut g, n, n);
        m *= c(size / m.norm(), 0.0);
        prop_assert!(rel_err(&expm(&m).unwrap(), &expm_oracle(&m, 30)) < 1e-10);
    }

    #[test]
    fn herm_eig_reconstructs(seed in any::<u64>(), n in 1usize..10) {
        let mut g = rng(seed);
        let m = rand_hermitian(&mut g, n);
        let (vals, v) = herm_eig(&m).unwrap();
        prop_assert!(vals.windows(2).all(|w| w[0] <= w[1]));
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(n, vals.iter().map(|&x| c(x, 0.0))));
        prop_assert!(rel_err(&(&v * d * v.adjoint()), &m) < 1e-10);
    }
}
