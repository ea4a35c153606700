//! Random instances and dense reference helpers shared by the test targets.
#![allow(dead_code)]

use nalgebra::DMatrix;
use proctensor::model::ModelParams;
use proctensor::tensor::DenseTensor;
use proctensor::tn::{Mpo, Mps};
use proctensor::C64;
use proptest::test_runner::Config;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn cases(n: u32) -> Config {
    Config {
        cases: n,
        failure_persistence: None,
        ..Config::default()
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn cgauss(rng: &mut ChaCha8Rng) -> C64 {
    c(rng.sample(StandardNormal), rng.sample(StandardNormal))
}

pub fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<C64> {
    (0..n).map(|_| cgauss(rng)).collect()
}

pub fn rand_matrix(rng: &mut ChaCha8Rng, r: usize, cols: usize) -> DMatrix<C64> {
    DMatrix::from_fn(r, cols, |_, _| cgauss(rng))
}

pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> DenseTensor {
    let n = shape.iter().product();
    DenseTensor::new(shape.to_vec(), rand_vec(rng, n)).unwrap()
}

pub fn rand_hermitian(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<C64> {
    let g = rand_matrix(rng, d, d);
    (&g + g.adjoint()).scale(0.5)
}

pub fn rand_density(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<C64> {
    let g = rand_matrix(rng, d, d);
    let w = &g * g.adjoint();
    let t = w.trace();
    let rho = w / t;
    (&rho + rho.adjoint()).scale(0.5)
}

pub fn rand_pure(rng: &mut ChaCha8Rng, d: usize) -> Vec<C64> {
    let v = rand_vec(rng, d);
    let n = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    v.into_iter().map(|z| z / n).collect()
}

fn bonds(rng: &mut ChaCha8Rng, n: usize, max_bond: usize) -> Vec<usize> {
    let mut b = vec![1; n + 1];
    for x in b.iter_mut().take(n).skip(1) {
        *x = rng.random_range(1..=max_bond);
    }
    b
}

pub fn rand_mps(rng: &mut ChaCha8Rng, phys: &[usize], max_bond: usize) -> Mps {
    let b = bonds(rng, phys.len(), max_bond);
    let sites = phys
        .iter()
        .enumerate()
        .map(|(k, &d)| rand_tensor(rng, &[b[k], d, b[k + 1]]))
        .collect();
    Mps::new(sites).unwrap()
}

pub fn rand_mps_exact_bond(rng: &mut ChaCha8Rng, phys: &[usize], bond: usize) -> Mps {
    let n = phys.len();
    let sites = phys
        .iter()
        .enumerate()
        .map(|(k, &d)| {
            let l = if k == 0 { 1 } else { bond };
            let r = if k + 1 == n { 1 } else { bond };
            rand_tensor(rng, &[l, d, r])
        })
        .collect();
    Mps::new(sites).unwrap()
}

pub fn rand_mpo(rng: &mut ChaCha8Rng, ins: &[usize], outs: &[usize], max_bond: usize) -> Mpo {
    let b = bonds(rng, ins.len(), max_bond);
    let sites = ins
        .iter()
        .zip(outs)
        .enumerate()
        .map(|(k, (&i, &o))| rand_tensor(rng, &[b[k], i, o, b[k + 1]]))
        .collect();
    Mpo::new(sites).unwrap()
}

pub fn normalized(s: &Mps) -> Mps {
    s.scale(c(1.0 / s.norm_sqr().sqrt(), 0.0))
}

pub fn norm(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn dist(a: &[C64], b: &[C64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt()
}

pub fn kron_vecs(vs: &[Vec<C64>]) -> Vec<C64> {
    let mut acc = vec![c(1.0, 0.0)];
    for v in vs {
        acc = acc.iter().flat_map(|a| v.iter().map(move |b| a * b)).collect();
    }
    acc
}

pub fn vec_rm(m: &DMatrix<C64>) -> Vec<C64> {
    let (r, cols) = m.shape();
    (0..r * cols).map(|k| m[(k / cols, k % cols)]).collect()
}

pub fn rand_params(rng: &mut ChaCha8Rng, max_l: usize) -> ModelParams {
    ModelParams {
        l: rng.random_range(1..=max_l),
        j: rng.random_range(-5.0..5.0),
        j_e: rng.random_range(-2.0..2.0),
        h: rng.random_range(-2.0..2.0),
        delta: rng.random_range(-2.0..2.0),
        gamma: rng.random_range(0.0..5.0),
        r: rng.random_range(0.0..=1.0),
        dt: rng.random_range(0.01..0.5),
    }
}

/// Pauli matrices in the `σz|0⟩ = |0⟩` basis, built independently of the
/// library.
pub fn paulis() -> [DMatrix<C64>; 3] {
    let z = c(0.0, 0.0);
    let o = c(1.0, 0.0);
    let i = c(0.0, 1.0);
    [
        DMatrix::from_row_slice(2, 2, &[z, o, o, z]),
        DMatrix::from_row_slice(2, 2, &[z, -i, i, z]),
        DMatrix::from_row_slice(2, 2, &[o, z, z, -o]),
    ]
}

pub fn bloch_state(w: [f64; 3]) -> DMatrix<C64> {
    let [x, y, z] = w;
    DMatrix::from_row_slice(
        2,
        2,
        &[
            c(0.5 * (1.0 + z), 0.0),
            c(0.5 * x, -0.5 * y),
            c(0.5 * x, 0.5 * y),
            c(0.5 * (1.0 - z), 0.0),
        ],
    )
}

pub fn rel_err(a: &DMatrix<C64>, b: &DMatrix<C64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

/// Uniform point in the Bloch ball of radius `r`.
pub fn rand_bloch(rng: &mut ChaCha8Rng, r: f64) -> [f64; 3] {
    loop {
        let w: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        if w.iter().map(|x| x * x).sum::<f64>() <= 1.0 {
            return w.map(|x| x * r);
        }
    }
}

pub fn frob2(a: &DMatrix<C64>, b: &DMatrix<C64>) -> f64 {
    (0..2)
        .flat_map(|i| (0..2).map(move |j| (i, j)))
        .map(|(i, j)| (a[(i, j)] - b[(i, j)]).norm_sqr())
        .sum()
}

pub fn bloch_of(m: &DMatrix<C64>) -> [f64; 3] {
    let [x, y, z] = paulis();
    [(&x * m).trace().re, (&y * m).trace().re, (&z * m).trace().re]
}

pub fn bloch_dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Every 0.01 grid point of the Bloch ball within `radius` of `centre`.
pub fn ball_grid(centre: [f64; 3], radius: f64) -> Vec<[f64; 3]> {
    let step = 0.01;
    let idx = |x: f64| (x / step).round() as i64;
    let mut pts = Vec::new();
    let (lo, hi) = (
        |k: usize| idx((centre[k] - radius).max(-1.0)),
        |k: usize| idx((centre[k] + radius).min(1.0)),
    );
    for i in lo(0)..=hi(0) {
        for j in lo(1)..=hi(1) {
            let (x, y) = (i as f64 * step, j as f64 * step);
            let rest = radius * radius - (x - centre[0]).powi(2) - (y - centre[1]).powi(2);
            let unit = 1.0 - x * x - y * y;
            if rest < 0.0 || unit < 0.0 {
                continue;
            }
            let za = (centre[2] - rest.sqrt()).max(-unit.sqrt());
            let zb = (centre[2] + rest.sqrt()).min(unit.sqrt());
            for k in idx(za) - 1..=idx(zb) + 1 {
                let z = k as f64 * step;
                if x * x + y * y + z * z <= 1.0 {
                    pts.push([x, y, z]);
                }
            }
        }
    }
    pts
}

/// A 0.01 grid state strictly closer to `m` than `got`, if one exists. Only
/// grid points within `|u − w*|` of the Bloch vector `u` of `m` can be closer.
pub fn closer_grid_point(m: &DMatrix<C64>, got: &DMatrix<C64>) -> Option<[f64; 3]> {
    let h = (m + m.adjoint()).scale(0.5);
    let u = bloch_of(&h);
    let best = frob2(got, m);
    let radius = bloch_dist(bloch_of(got), u) + 1e-9;
    ball_grid(u, radius)
        .into_iter()
        .find(|&w| frob2(&bloch_state(w), m) < best - 1e-12)
}
