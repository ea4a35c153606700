//! Random input states and training/testing datasets.
//!
//! Sample `m` of a dataset with seed `s` draws from ChaCha20 seeded with
//! `s` (`seed_from_u64`) on stream `m`, so every sample is reproducible on
//! its own and a dataset of size `M` is a prefix of any larger one. Each
//! input state takes four complex Gaussians `G00, G01, G10, G11` (real part
//! first), each real Gaussian from Box–Muller on two uniforms
//! `u = (next_u64 >> 11) · 2⁻⁵³`: `√(−2 ln(1 − u₁)) · cos(2π u₂)`.

use nalgebra::DMatrix;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use crate::model::{vectorize, ModelParams};
use crate::process::{
    apply_process, validate_density_matrix, DenseSimulator, ProcessMpo, MAX_DENSE_QUBITS, QUBIT_VEC_DIM,
};
use crate::tn::Mps;
use crate::{Error, Result, C64};

/// Cutoff used when splitting dense outputs into an MPS.
pub const OUTPUT_CUTOFF: f64 = 1e-12;

/// Paired input sequences and multi-time outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub params: ModelParams,
    pub steps: usize,
    pub seed: u64,
    /// `inputs[m][n]` is the state fed before step `n + 1`.
    pub inputs: Vec<Vec<DMatrix<C64>>>,
    pub outputs: Vec<Mps>,
}

impl Dataset {
    pub fn new(
        params: ModelParams,
        steps: usize,
        seed: u64,
        inputs: Vec<Vec<DMatrix<C64>>>,
        outputs: Vec<Mps>,
    ) -> Result<Self> {
        if inputs.len() != outputs.len() {
            return Err(Error::Shape(format!(
                "{} input sequences but {} outputs",
                inputs.len(),
                outputs.len()
            )));
        }
        for (m, (xs, y)) in inputs.iter().zip(&outputs).enumerate() {
            if xs.len() != steps {
                return Err(Error::Shape(format!(
                    "sample {m}: {} inputs for {steps} steps",
                    xs.len()
                )));
            }
            if y.phys_dims() != vec![QUBIT_VEC_DIM; steps] {
                return Err(Error::Shape(format!("sample {m}: output dims {:?}", y.phys_dims())));
            }
            for x in xs {
                if x.shape() != (2, 2) {
                    return Err(Error::Shape(format!("sample {m}: input shape {:?}", x.shape())));
                }
            }
        }
        Ok(Self {
            params,
            steps,
            seed,
            inputs,
            outputs,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Vectorised inputs of sample `m`.
    pub fn input_vectors(&self, m: usize) -> Vec<Vec<C64>> {
        self.inputs[m]
            .iter()
            .map(|x| vectorize(x).as_slice().to_vec())
            .collect()
    }

    /// First `m` samples.
    pub fn truncated(&self, m: usize) -> Self {
        let m = m.min(self.len());
        Self {
            params: self.params,
            steps: self.steps,
            seed: self.seed,
            inputs: self.inputs[..m].to_vec(),
            outputs: self.outputs[..m].to_vec(),
        }
    }
}

fn uniform(rng: &mut ChaCha20Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

pub(crate) fn gaussian(rng: &mut ChaCha20Rng) -> f64 {
    let u1 = uniform(rng);
    let u2 = uniform(rng);
    (-2.0 * (1.0 - u1).ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Hilbert–Schmidt random qubit state `G G† / tr(G G†)`.
pub fn sample_input_state(rng: &mut ChaCha20Rng) -> DMatrix<C64> {
    loop {
        let mut g = DMatrix::<C64>::zeros(2, 2);
        for i in 0..2 {
            for j in 0..2 {
                let re = gaussian(rng);
                let im = gaussian(rng);
                g[(i, j)] = C64::new(re, im);
            }
        }
        let rho = &g * g.adjoint();
        let t = rho.trace().re;
        if t > 0.0 {
            let mut rho = rho.unscale(t);
            // exact Hermiticity and unit trace
            let off = (rho[(0, 1)] + rho[(1, 0)].conj()) * 0.5;
            rho[(0, 1)] = off;
            rho[(1, 0)] = off.conj();
            let a = rho[(0, 0)].re;
            rho[(0, 0)] = C64::new(a, 0.0);
            rho[(1, 1)] = C64::new(1.0 - a, 0.0);
            return rho;
        }
    }
}

/// Generator for sample `m` of a dataset with the given seed.
pub fn sample_rng(seed: u64, m: usize) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(m as u64);
    rng
}

/// Input sequence of sample `m`.
pub fn sample_inputs(seed: u64, m: usize, steps: usize) -> Vec<DMatrix<C64>> {
    let mut rng = sample_rng(seed, m);
    (0..steps).map(|_| sample_input_state(&mut rng)).collect()
}

/// `count` samples with outputs from the dense sequential oracle.
pub fn generate_dataset(p: &ModelParams, steps: usize, count: usize, seed: u64) -> Result<Dataset> {
    p.validate()?;
    if steps == 0 {
        return Err(Error::Validation("dataset needs at least one step".into()));
    }
    if steps + p.l > MAX_DENSE_QUBITS {
        return Err(Error::Capability(format!(
            "dense data generation supports N + L ≤ {MAX_DENSE_QUBITS}, got {}",
            steps + p.l
        )));
    }
    let sim = DenseSimulator::new(p)?;
    let samples = (0..count)
        .into_par_iter()
        .map(|m| {
            let xs = sample_inputs(seed, m, steps);
            let y = sim.apply(&xs)?;
            let y = Mps::from_dense(y.as_slice(), &vec![QUBIT_VEC_DIM; steps], OUTPUT_CUTOFF)?;
            Ok((xs, y))
        })
        .collect::<Result<Vec<_>>>()?;
    let (inputs, outputs) = samples.into_iter().unzip();
    Dataset::new(*p, steps, seed, inputs, outputs)
}

/// `count` samples with outputs produced by a given process MPO, so the
/// data is exactly realisable at that MPO's bond dimension.
pub fn generate_dataset_from_process(u: &ProcessMpo, params: &ModelParams, count: usize, seed: u64) -> Result<Dataset> {
    let steps = u.steps();
    let samples = (0..count)
        .into_par_iter()
        .map(|m| {
            let xs = sample_inputs(seed, m, steps);
            Ok((xs.clone(), apply_process(u, &xs)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let (inputs, outputs) = samples.into_iter().unzip();
    Dataset::new(*params, steps, seed, inputs, outputs)
}

/// Checks the stored inputs are states and each output has unit total trace.
pub fn validate_dataset(d: &Dataset, tol: f64) -> Result<()> {
    for (m, (xs, y)) in d.inputs.iter().zip(&d.outputs).enumerate() {
        for x in xs {
            validate_density_matrix(x, tol).map_err(|e| Error::Validation(format!("sample {m}: {e}")))?;
        }
        let t = total_trace(y);
        if (t - C64::new(1.0, 0.0)).norm() > 1e-8 {
            return Err(Error::Validation(format!("sample {m}: output trace {t}")));
        }
    }
    Ok(())
}

/// Contraction of every slot with the trace covector.
pub fn total_trace(y: &Mps) -> C64 {
    let mut env = vec![C64::new(1.0, 0.0)];
    for site in y.sites() {
        let sh = site.shape();
        let mut next = vec![C64::new(0.0, 0.0); sh[2]];
        for (a, &e) in env.iter().enumerate() {
            for s in [0usize, 3] {
                for (b, nb) in next.iter_mut().enumerate() {
                    *nb += e * site.data()[(a * sh[1] + s) * sh[2] + b];
                }
            }
        }
        env = next;
    }
    env[0]
}
