//! Fidelity, physical projection, median infidelities with bootstrap bands,
//! and process/output distances.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use crate::datagen::Dataset;
use crate::process::{apply_process, validate_density_matrix, ProcessMpo, QUBIT_VEC_DIM};
use crate::tensor::herm_eig;
use crate::tn::{mps_inner, Mps};
use crate::{Error, Result, C64};

/// Largest step count [`process_distance`] expands densely.
pub const MAX_DISTANCE_STEPS: usize = 6;

/// Tolerance on the inputs of [`fidelity`].
pub const STATE_TOL: f64 = 1e-8;

/// Eigenvalues at rounding level relative to the largest are set to zero, so
/// a square root does not lift them to `√ε`.
fn clip_spectrum(vals: &[f64]) -> Vec<f64> {
    let top = vals.iter().fold(0.0f64, |a, &v| a.max(v));
    let floor = 16.0 * f64::EPSILON * vals.len() as f64 * top;
    vals.iter().map(|&v| if v <= floor { 0.0 } else { v }).collect()
}

fn sqrt_psd(m: &DMatrix<C64>) -> Result<DMatrix<C64>> {
    let (vals, vecs) = herm_eig(m)?;
    let mut scaled = vecs.clone();
    for (j, &v) in clip_spectrum(vals.as_slice()).iter().enumerate() {
        scaled.column_mut(j).scale_mut(v.sqrt());
    }
    Ok(scaled * vecs.adjoint())
}

/// `F(a, b) = [tr √(√a b √a)]²`.
pub fn fidelity(a: &DMatrix<C64>, b: &DMatrix<C64>) -> Result<f64> {
    validate_density_matrix(a, STATE_TOL)?;
    validate_density_matrix(b, STATE_TOL)?;
    if a.shape() != b.shape() {
        return Err(Error::Validation(format!(
            "state shapes differ: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let sa = sqrt_psd(a)?;
    let inner = &sa * b * &sa;
    let inner = (&inner + inner.adjoint()).scale(0.5);
    let (vals, _) = herm_eig(&inner)?;
    let t: f64 = clip_spectrum(vals.as_slice()).iter().map(|v| v.sqrt()).sum();
    Ok(t * t)
}

fn bloch(m: &DMatrix<C64>) -> [f64; 3] {
    [2.0 * m[(0, 1)].re, -2.0 * m[(0, 1)].im, (m[(0, 0)] - m[(1, 1)]).re]
}

/// Nearest (in the 2-norm) qubit state: Hermitise, normalise the trace,
/// and pull the Bloch vector back into the unit ball.
pub fn project_physical(m: &DMatrix<C64>) -> Result<DMatrix<C64>> {
    if m.shape() != (2, 2) {
        return Err(Error::Shape(format!(
            "project_physical needs a 2x2 matrix, got {:?}",
            m.shape()
        )));
    }
    let h = (m + m.adjoint()).scale(0.5);
    let t = h.trace().re;
    if t.abs() < 1e-12 || !t.is_finite() {
        return Err(Error::Validation(format!("degenerate input with trace {t:e}")));
    }
    // already a state: leave it untouched, which makes the map idempotent
    if h == *m && t == 1.0 {
        let v = bloch(m);
        if (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt() <= 1.0 + 1e-12 {
            return Ok(m.clone());
        }
    }
    let h = h.unscale(t);
    let v = bloch(&h);
    let len = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    let s = 1.0 / len.max(1.0);
    let (x, y, z) = (v[0] * s, v[1] * s, v[2] * s);
    let p00 = 0.5 * (1.0 + z);
    let off = C64::new(0.5 * x, -0.5 * y);
    Ok(DMatrix::from_row_slice(
        2,
        2,
        &[C64::new(p00, 0.0), off, off.conj(), C64::new(1.0 - p00, 0.0)],
    ))
}

/// Reduced operator of slot `n` (1-based): every other slot contracted with
/// the trace covector.
pub fn local_outputs(y: &Mps, n: usize) -> Result<DMatrix<C64>> {
    let steps = y.len();
    if n == 0 || n > steps {
        return Err(Error::Validation(format!("slot {n} out of range 1..={steps}")));
    }
    if y.phys_dims().iter().any(|&d| d != QUBIT_VEC_DIM) {
        return Err(Error::Shape(format!(
            "output slots must have dim 4, got {:?}",
            y.phys_dims()
        )));
    }
    let traced = |site: &crate::tensor::DenseTensor, a: usize, b: usize| {
        let sh = site.shape();
        site.data()[(a * 4) * sh[2] + b] + site.data()[(a * 4 + 3) * sh[2] + b]
    };
    let mut left = vec![C64::new(1.0, 0.0)];
    for site in &y.sites()[..n - 1] {
        let r = site.shape()[2];
        left = (0..r)
            .map(|b| left.iter().enumerate().map(|(a, &l)| l * traced(site, a, b)).sum())
            .collect();
    }
    let mut right = vec![C64::new(1.0, 0.0)];
    for site in y.sites()[n..].iter().rev() {
        let l = site.shape()[0];
        right = (0..l)
            .map(|a| right.iter().enumerate().map(|(b, &r)| traced(site, a, b) * r).sum())
            .collect();
    }
    let site = y.site(n - 1);
    let sh = site.shape();
    let mut v = [C64::new(0.0, 0.0); 4];
    for (a, &l) in left.iter().enumerate() {
        for (s, vs) in v.iter_mut().enumerate() {
            for (b, &r) in right.iter().enumerate() {
                *vs += l * site.data()[(a * sh[1] + s) * sh[2] + b] * r;
            }
        }
    }
    Ok(DMatrix::from_row_slice(2, 2, &v))
}

/// Median; the mean of the two middle values for even counts.
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of an empty slice");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

/// Linear-interpolation quantile of sorted data.
fn quantile_sorted(v: &[f64], q: f64) -> f64 {
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bootstrap {
    pub resamples: usize,
    pub seed: u64,
}

impl Default for Bootstrap {
    fn default() -> Self {
        Self {
            resamples: 1000,
            seed: 0,
        }
    }
}

/// Percentile 95% band of `stat` over resampled index sets, widened if
/// needed to contain `point`.
fn percentile_band(point: f64, mut draws: Vec<f64>) -> (f64, f64) {
    if draws.is_empty() {
        return (point, point);
    }
    draws.sort_by(f64::total_cmp);
    let lo = quantile_sorted(&draws, 0.025).min(point);
    let hi = quantile_sorted(&draws, 0.975).max(point);
    (lo, hi)
}

#[derive(Clone, Debug, PartialEq)]
pub struct InfidelityStats {
    /// Median over steps of the per-step medians.
    pub i: f64,
    pub i_n: Vec<f64>,
    pub ci: (f64, f64),
    pub ci_n: Vec<(f64, f64)>,
    /// `infidelities[m][n]`.
    pub infidelities: Vec<Vec<f64>>,
}

/// Median infidelities from a table `inf[m][n]`, with bootstrap bands:
/// over samples for each step, over samples and steps for the overall value.
pub fn infidelity_summary(inf: &[Vec<f64>], boot: Bootstrap) -> Result<InfidelityStats> {
    let m = inf.len();
    if m == 0 {
        return Err(Error::Validation("empty test set".into()));
    }
    let n = inf[0].len();
    if n == 0 || inf.iter().any(|r| r.len() != n) {
        return Err(Error::Validation("ragged or empty infidelity table".into()));
    }
    let column = |k: usize| inf.iter().map(|r| r[k]).collect::<Vec<_>>();
    let i_n: Vec<f64> = (0..n).map(|k| median(&column(k))).collect();
    let i = median(&i_n);

    let mut rng = ChaCha20Rng::seed_from_u64(boot.seed);
    let mut draws_n = vec![Vec::with_capacity(boot.resamples); n];
    let mut draws = Vec::with_capacity(boot.resamples);
    let mut buf = vec![0.0; m];
    for _ in 0..boot.resamples {
        let rows: Vec<usize> = (0..m).map(|_| rng.random_range(0..m)).collect();
        let steps: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        let mut meds = vec![0.0; n];
        for (k, med) in meds.iter_mut().enumerate() {
            for (b, &r) in buf.iter_mut().zip(&rows) {
                *b = inf[r][k];
            }
            *med = median(&buf);
            draws_n[k].push(*med);
        }
        let picked: Vec<f64> = steps.iter().map(|&k| meds[k]).collect();
        draws.push(median(&picked));
    }
    let ci_n = i_n.iter().zip(draws_n).map(|(&p, d)| percentile_band(p, d)).collect();
    let ci = percentile_band(i, draws);
    Ok(InfidelityStats {
        i,
        i_n,
        ci,
        ci_n,
        infidelities: inf.to_vec(),
    })
}

/// Infidelities `1 − F(project(Ŷ_n), Y_n)` of predictions against a dataset.
pub fn infidelity_table(pred: &[Mps], truth: &Dataset) -> Result<Vec<Vec<f64>>> {
    if pred.len() != truth.len() {
        return Err(Error::Validation(format!(
            "{} predictions for {} samples",
            pred.len(),
            truth.len()
        )));
    }
    pred.par_iter()
        .zip(truth.outputs.par_iter())
        .map(|(p, y)| {
            if p.len() != y.len() {
                return Err(Error::Validation(format!(
                    "prediction has {} slots, truth {}",
                    p.len(),
                    y.len()
                )));
            }
            (1..=y.len())
                .map(|n| {
                    let yhat = project_physical(&local_outputs(p, n)?)?;
                    let ytrue = local_outputs(y, n)?;
                    Ok((1.0 - fidelity(&yhat, &ytrue)?).max(0.0))
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect()
}

pub fn infidelity_stats(pred: &[Mps], truth: &Dataset, boot: Bootstrap) -> Result<InfidelityStats> {
    if truth.is_empty() {
        return Err(Error::Validation("empty test set".into()));
    }
    infidelity_summary(&infidelity_table(pred, truth)?, boot)
}

/// `‖Υ̂ − Υ‖ / ‖Υ‖` on dense expansions.
pub fn process_distance(approx: &ProcessMpo, exact: &ProcessMpo) -> Result<f64> {
    let n = exact.steps();
    if approx.steps() != n {
        return Err(Error::Validation(format!(
            "step counts differ: {} vs {n}",
            approx.steps()
        )));
    }
    if n > MAX_DISTANCE_STEPS {
        return Err(Error::Capability(format!(
            "dense process distance supports at most {MAX_DISTANCE_STEPS} steps, got {n}"
        )));
    }
    let same_dims =
        approx.mpo.input_dims() == exact.mpo.input_dims() && approx.mpo.output_dims() == exact.mpo.output_dims();
    if !same_dims {
        return Err(Error::Validation("physical dims differ".into()));
    }
    let a = approx.mpo.to_dense_vector();
    let e = exact.mpo.to_dense_vector();
    let norm: f64 = e.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::Numeric("exact process tensor has zero norm".into()));
    }
    let diff: f64 = a.iter().zip(&e).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt();
    Ok(diff / norm)
}

/// `M⁻¹ Σ_m ⟨ΔY_m|ΔY_m⟩` through the bilinear expansion.
pub fn output_distance(pred: &[Mps], truth: &Dataset) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::Validation(format!(
            "{} predictions for {} samples",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Validation("empty test set".into()));
    }
    let terms = pred
        .par_iter()
        .zip(truth.outputs.par_iter())
        .map(|(p, y)| {
            let r = mps_inner(y, y)?.re - 2.0 * mps_inner(y, p)?.re + mps_inner(p, p)?.re;
            Ok(r.max(0.0))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(terms.iter().sum::<f64>() / pred.len() as f64)
}

/// Outputs of `u` on every input sequence of `data`.
pub fn predict(u: &ProcessMpo, data: &Dataset) -> Result<Vec<Mps>> {
    if u.steps() != data.steps {
        return Err(Error::Validation(format!(
            "process has {} steps, dataset {}",
            u.steps(),
            data.steps
        )));
    }
    data.inputs.par_iter().map(|xs| apply_process(u, xs)).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub i: f64,
    pub i_n: Vec<f64>,
    pub ci: (f64, f64),
    pub ci_n: Vec<(f64, f64)>,
    pub delta_upsilon: Option<f64>,
    pub delta_y: f64,
    pub m_test: usize,
    pub steps: usize,
    pub bond: usize,
}

/// All metrics of a trained process on a test set.
pub fn evaluate(u: &ProcessMpo, exact: Option<&ProcessMpo>, test: &Dataset, boot: Bootstrap) -> Result<EvalReport> {
    let pred = predict(u, test)?;
    let stats = infidelity_stats(&pred, test, boot)?;
    let delta_y = output_distance(&pred, test)?;
    let delta_upsilon = match exact {
        Some(e) => Some(process_distance(u, e)?),
        None => None,
    };
    Ok(EvalReport {
        i: stats.i,
        i_n: stats.i_n,
        ci: stats.ci,
        ci_n: stats.ci_n,
        delta_upsilon,
        delta_y,
        m_test: test.len(),
        steps: test.steps,
        bond: u.mpo.max_bond(),
    })
}
