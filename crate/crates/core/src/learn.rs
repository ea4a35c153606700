//! Sweeping least-squares regression of a process MPO.
//!
//! The loss is `Σ_m ‖Y_m − Ŷ_m‖² + μ ‖Υ̂‖²`, where `Ŷ_m` is the trained MPO
//! applied to the product input of sample `m`. Each local step solves the
//! normal equations of one site exactly, with every other site fixed and
//! the MPO held in mixed canonical form around that site, so the
//! regulariser reduces to `μ ‖W‖²`. A sweep is one unidirectional pass
//! over all sites; consecutive sweeps alternate direction, starting
//! left-to-right.

use std::fmt::Write as _;
use std::time::Instant;

use nalgebra::{Cholesky, DMatrix, Dyn};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use crate::datagen::{gaussian, Dataset};
use crate::process::{apply_to_vectors, ProcessMpo, Provenance, QUBIT_VEC_DIM};
use crate::tensor::{zgemm_acc, DenseTensor};
use crate::tn::{mps_inner, Mpo};
use crate::{Error, Result, C64};

const D: usize = QUBIT_VEC_DIM;

/// Samples per block of the normal-equation accumulation.
const CHUNK: usize = 128;

/// Contiguous groups of blocks reduced in a fixed order.
const GROUPS: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Target bond dimension.
    pub bond: usize,
    /// Regularisation weight.
    pub mu: f64,
    pub sweeps: usize,
    /// Seed of the random initial MPO.
    pub seed: u64,
    /// Base jitter, relative to `tr(A) / dim(A)`, added when the normal
    /// matrix is not numerically positive definite.
    pub jitter: f64,
}

impl TrainConfig {
    /// Ten sweeps and `μ = 1e-6 · m_train`.
    pub fn new(bond: usize, m_train: usize) -> Self {
        Self {
            bond,
            mu: 1e-6 * m_train as f64,
            sweeps: 10,
            seed: 0,
            jitter: 1e-12,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.bond == 0 {
            return Err(Error::Validation("bond dimension must be at least 1".into()));
        }
        if self.sweeps == 0 {
            return Err(Error::Validation("at least one sweep is required".into()));
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(Error::Validation(format!("invalid mu {}", self.mu)));
        }
        if !(self.jitter >= 0.0 && self.jitter.is_finite()) {
            return Err(Error::Validation(format!("invalid jitter {}", self.jitter)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct JitterEvent {
    pub sweep: usize,
    pub site: usize,
    /// Absolute jitter that made the factorisation succeed.
    pub jitter: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub bond: usize,
    pub mu: f64,
    pub sweeps: usize,
    /// Loss before training followed by the loss after each sweep.
    pub loss_history: Vec<f64>,
    /// Loss after every local update, in order.
    pub local_losses: Vec<f64>,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub wall_time_s: f64,
    /// Per site, the condition estimate of the last local solve.
    pub condition: Vec<f64>,
    pub jitter_events: Vec<JitterEvent>,
    pub bond_dims: Vec<usize>,
}

impl TrainReport {
    /// True when no recorded loss exceeds its predecessor by more than
    /// `slack · (1 + previous)`.
    pub fn is_monotone(&self, slack: f64) -> bool {
        let mut all = vec![self.initial_loss];
        all.extend_from_slice(&self.local_losses);
        all.windows(2).all(|w| w[1] <= w[0] + slack * (1.0 + w[0]))
    }

    /// `key = value` lines; lists are comma separated.
    pub fn to_text(&self) -> String {
        let list = |v: &[f64]| v.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(",");
        let mut s = String::new();
        let _ = writeln!(s, "bond = {}", self.bond);
        let _ = writeln!(s, "mu = {:e}", self.mu);
        let _ = writeln!(s, "sweeps = {}", self.sweeps);
        let _ = writeln!(
            s,
            "sweep_definition = one unidirectional pass, alternating, first left-to-right"
        );
        let _ = writeln!(s, "initial_loss = {:e}", self.initial_loss);
        let _ = writeln!(s, "final_loss = {:e}", self.final_loss);
        let _ = writeln!(s, "wall_time_s = {:.3}", self.wall_time_s);
        let _ = writeln!(
            s,
            "bond_dims = {}",
            self.bond_dims
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join(",")
        );
        let _ = writeln!(s, "jitter_events = {}", self.jitter_events.len());
        for e in &self.jitter_events {
            let _ = writeln!(s, "jitter = sweep {} site {} value {:e}", e.sweep, e.site, e.jitter);
        }
        let _ = writeln!(s, "condition = {}", list(&self.condition));
        let _ = writeln!(s, "loss_history = {}", list(&self.loss_history));
        let _ = writeln!(s, "local_losses = {}", list(&self.local_losses));
        s
    }
}

/// Internal bond dims `min(D, 16^k, 16^(N−k))`, boundaries included.
pub fn bond_caps(n: usize, bond: usize) -> Vec<usize> {
    let fused = D * D;
    let cap = |k: usize| {
        let mut c = 1usize;
        for _ in 0..k {
            c = c.saturating_mul(fused);
            if c >= bond {
                return bond;
            }
        }
        c.min(bond)
    };
    (0..=n).map(|k| cap(k.min(n - k))).collect()
}

/// Random MPO of unit Frobenius norm with capped bonds.
pub fn init_mpo(n: usize, bond: usize, seed: u64) -> Result<Mpo> {
    if n == 0 || bond == 0 {
        return Err(Error::Validation(format!(
            "init_mpo needs N ≥ 1 and D ≥ 1, got N={n}, D={bond}"
        )));
    }
    let dims = bond_caps(n, bond);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let sites = (0..n)
        .map(|k| {
            let shape = vec![dims[k], D, D, dims[k + 1]];
            let len = shape.iter().product();
            let data = (0..len)
                .map(|_| {
                    let re = gaussian(&mut rng);
                    let im = gaussian(&mut rng);
                    C64::new(re, im)
                })
                .collect();
            DenseTensor::new(shape, data)
        })
        .collect::<Result<Vec<_>>>()?;
    let mpo = Mpo::new(sites)?;
    let norm = mpo.norm_sqr().sqrt();
    Ok(mpo.scale(C64::new(1.0 / norm, 0.0)))
}

fn check_shapes(u: &Mpo, data: &Dataset) -> Result<()> {
    if u.len() != data.steps {
        return Err(Error::Validation(format!(
            "MPO has {} sites, dataset {} steps",
            u.len(),
            data.steps
        )));
    }
    if u.input_dims().iter().chain(u.output_dims().iter()).any(|&d| d != D) {
        return Err(Error::Validation(format!(
            "MPO legs must have dim {D}: {:?} / {:?}",
            u.input_dims(),
            u.output_dims()
        )));
    }
    Ok(())
}

/// `Σ_m ‖Y_m − Ŷ_m‖² + μ ‖Υ̂‖²`.
pub fn loss(u: &Mpo, data: &Dataset, mu: f64) -> Result<f64> {
    check_shapes(u, data)?;
    let residuals = (0..data.len())
        .into_par_iter()
        .map(|m| {
            let y = &data.outputs[m];
            let yh = apply_to_vectors(u, &data.input_vectors(m))?;
            let r = mps_inner(y, y)?.re - 2.0 * mps_inner(y, &yh)?.re + mps_inner(&yh, &yh)?.re;
            Ok(r)
        })
        .collect::<Result<Vec<f64>>>()?;
    let total: f64 = residuals.iter().sum::<f64>() + mu * u.norm_sqr();
    Ok(total.max(0.0))
}

// ---- environment contractions on row-major buffers ----

/// `E'[p2, q2] = Σ E[p, q] conj(bra[p, s, p2]) ket[q, s, q2]`.
#[allow(clippy::too_many_arguments)]
fn left_step(e: &[C64], bra: &[C64], ket: &[C64], p: usize, q: usize, d: usize, p2: usize, q2: usize) -> Vec<C64> {
    let mut t = vec![C64::new(0.0, 0.0); p * d * q2];
    for i in 0..p {
        for j in 0..q {
            let eij = e[i * q + j];
            if eij == C64::new(0.0, 0.0) {
                continue;
            }
            let krow = &ket[j * d * q2..(j + 1) * d * q2];
            let trow = &mut t[i * d * q2..(i + 1) * d * q2];
            for (tv, &kv) in trow.iter_mut().zip(krow) {
                *tv += eij * kv;
            }
        }
    }
    let mut out = vec![C64::new(0.0, 0.0); p2 * q2];
    for i in 0..p {
        for s in 0..d {
            let trow = &t[(i * d + s) * q2..(i * d + s + 1) * q2];
            for a in 0..p2 {
                let b = bra[(i * d + s) * p2 + a].conj();
                if b == C64::new(0.0, 0.0) {
                    continue;
                }
                let orow = &mut out[a * q2..(a + 1) * q2];
                for (ov, &tv) in orow.iter_mut().zip(trow) {
                    *ov += b * tv;
                }
            }
        }
    }
    out
}

/// `E'[p, q] = Σ conj(bra[p, s, p2]) ket[q, s, q2] E[p2, q2]`.
#[allow(clippy::too_many_arguments)]
fn right_step(e: &[C64], bra: &[C64], ket: &[C64], p: usize, q: usize, d: usize, p2: usize, q2: usize) -> Vec<C64> {
    // t[q, s, p2] = Σ_{q2} ket[q, s, q2] E[p2, q2]
    let mut t = vec![C64::new(0.0, 0.0); q * d * p2];
    for qs in 0..q * d {
        let krow = &ket[qs * q2..(qs + 1) * q2];
        for a in 0..p2 {
            let erow = &e[a * q2..(a + 1) * q2];
            let mut acc = C64::new(0.0, 0.0);
            for (&kv, &ev) in krow.iter().zip(erow) {
                acc += kv * ev;
            }
            t[qs * p2 + a] = acc;
        }
    }
    let mut out = vec![C64::new(0.0, 0.0); p * q];
    for i in 0..p {
        let brow = &bra[i * d * p2..(i + 1) * d * p2];
        for j in 0..q {
            let trow = &t[j * d * p2..(j + 1) * d * p2];
            let mut acc = C64::new(0.0, 0.0);
            for (&bv, &tv) in brow.iter().zip(trow) {
                acc += bv.conj() * tv;
            }
            out[i * q + j] = acc;
        }
    }
    out
}

/// `P[a, y, b] = Σ_x x[x] W[a, x, y, b]`.
fn predicted_site(w: &DenseTensor, x: &[C64]) -> Vec<C64> {
    let s = w.shape();
    let (dl, dr) = (s[0], s[3]);
    let data = w.data();
    let mut p = vec![C64::new(0.0, 0.0); dl * D * dr];
    for a in 0..dl {
        for (xi, &xv) in x.iter().enumerate() {
            if xv == C64::new(0.0, 0.0) {
                continue;
            }
            for y in 0..D {
                let src = &data[((a * D + xi) * D + y) * dr..((a * D + xi) * D + y + 1) * dr];
                let dst = &mut p[(a * D + y) * dr..(a * D + y + 1) * dr];
                for (dv, &sv) in dst.iter_mut().zip(src) {
                    *dv += xv * sv;
                }
            }
        }
    }
    p
}

/// Per-sample cached environments.
struct SampleEnv {
    x: Vec<Vec<C64>>,
    y: Vec<DenseTensor>,
    /// `⟨Ŷ|Ŷ⟩` left environments, indexed by bond.
    nl: Vec<Vec<C64>>,
    nr: Vec<Vec<C64>>,
    /// `⟨Y|Ŷ⟩` left environments, `[c, a]`.
    el: Vec<Vec<C64>>,
    er: Vec<Vec<C64>>,
}

impl SampleEnv {
    fn new(x: Vec<Vec<C64>>, y: Vec<DenseTensor>) -> Self {
        let n = x.len();
        let one = vec![C64::new(1.0, 0.0)];
        let mut nl = vec![Vec::new(); n + 1];
        let mut nr = vec![Vec::new(); n + 1];
        let mut el = vec![Vec::new(); n + 1];
        let mut er = vec![Vec::new(); n + 1];
        nl[0] = one.clone();
        el[0] = one.clone();
        nr[n] = one.clone();
        er[n] = one;
        Self { x, y, nl, nr, el, er }
    }

    fn update_left(&mut self, k: usize, w: &DenseTensor) {
        let s = w.shape();
        let p = predicted_site(w, &self.x[k]);
        self.nl[k + 1] = left_step(&self.nl[k], &p, &p, s[0], s[0], D, s[3], s[3]);
        let ys = self.y[k].shape();
        self.el[k + 1] = left_step(&self.el[k], self.y[k].data(), &p, ys[0], s[0], D, ys[2], s[3]);
    }

    fn update_right(&mut self, k: usize, w: &DenseTensor) {
        let s = w.shape();
        let p = predicted_site(w, &self.x[k]);
        self.nr[k] = right_step(&self.nr[k + 1], &p, &p, s[0], s[0], D, s[3], s[3]);
        let ys = self.y[k].shape();
        self.er[k] = right_step(&self.er[k + 1], self.y[k].data(), &p, ys[0], s[0], D, ys[2], s[3]);
    }
}

/// Normal equations of one site: `A w = b`, `w` indexed `[(a, x, b), y]`.
struct LocalSystem {
    a: DMatrix<C64>,
    b: DMatrix<C64>,
}

/// Accumulates the data part of the local normal equations at site `k`.
fn assemble(envs: &[SampleEnv], k: usize, dl: usize, dr: usize) -> LocalSystem {
    let n1 = dl * D;
    let n = n1 * dr;
    let u_len = n1 * n1;
    let r_len = dr * dr;
    let chunks: Vec<&[SampleEnv]> = envs.chunks(CHUNK).collect();
    let per_group = chunks.len().div_ceil(GROUPS).max(1);
    let partials: Vec<(Vec<C64>, Vec<C64>)> = chunks
        .par_chunks(per_group)
        .map(|group| {
            let mut a2 = vec![C64::new(0.0, 0.0); u_len * r_len];
            let mut bm = vec![C64::new(0.0, 0.0); n * D];
            for chunk in group {
                let s = chunk.len();
                let mut us = vec![C64::new(0.0, 0.0); u_len * s];
                let mut rs = vec![C64::new(0.0, 0.0); r_len * s];
                for (si, env) in chunk.iter().enumerate() {
                    let x = &env.x[k];
                    let l = &env.nl[k];
                    let u = &mut us[si * u_len..(si + 1) * u_len];
                    for ab in 0..dl {
                        for xb in 0..D {
                            let cx = x[xb].conj();
                            let row = (ab * D + xb) * n1;
                            for a in 0..dl {
                                let lv = l[ab * dl + a] * cx;
                                for (xi, &xv) in x.iter().enumerate() {
                                    u[row + a * D + xi] = lv * xv;
                                }
                            }
                        }
                    }
                    rs[si * r_len..(si + 1) * r_len].copy_from_slice(&env.nr[k + 1]);

                    // g[a, y, b] = Σ el[c, a] conj(Y[c, y, c']) er[c', b]
                    let ys = env.y[k].shape();
                    let (cl, cr) = (ys[0], ys[2]);
                    let yd = env.y[k].data();
                    let el = &env.el[k];
                    let er = &env.er[k + 1];
                    let mut t = vec![C64::new(0.0, 0.0); dl * D * cr];
                    for c in 0..cl {
                        for a in 0..dl {
                            let ev = el[c * dl + a];
                            if ev == C64::new(0.0, 0.0) {
                                continue;
                            }
                            for yy in 0..D {
                                for cp in 0..cr {
                                    t[(a * D + yy) * cr + cp] += ev * yd[(c * D + yy) * cr + cp].conj();
                                }
                            }
                        }
                    }
                    for a in 0..dl {
                        for yy in 0..D {
                            let trow = &t[(a * D + yy) * cr..(a * D + yy + 1) * cr];
                            for bb in 0..dr {
                                let mut g = C64::new(0.0, 0.0);
                                for (cp, &tv) in trow.iter().enumerate() {
                                    g += tv * er[cp * dr + bb];
                                }
                                let g = g.conj();
                                for (xi, &xv) in x.iter().enumerate() {
                                    bm[((a * D + xi) * dr + bb) * D + yy] += xv.conj() * g;
                                }
                            }
                        }
                    }
                }
                // a2[(i, j), (b̄, b)] += Σ_s us[s][(i, j)] rs[s][(b̄, b)]
                zgemm_acc(u_len, s, r_len, &us, 1, u_len, &rs, r_len, 1, &mut a2, r_len, 1);
            }
            (a2, bm)
        })
        .collect();
    let mut a2 = vec![C64::new(0.0, 0.0); u_len * r_len];
    let mut bm = vec![C64::new(0.0, 0.0); n * D];
    for (pa, pb) in &partials {
        for (t, &v) in a2.iter_mut().zip(pa) {
            *t += v;
        }
        for (t, &v) in bm.iter_mut().zip(pb) {
            *t += v;
        }
    }
    let a = DMatrix::from_fn(n, n, |r, c| {
        let (i, bb) = (r / dr, r % dr);
        let (j, b) = (c / dr, c % dr);
        a2[(i * n1 + j) * r_len + bb * dr + b]
    });
    let b = DMatrix::from_row_slice(n, D, &bm);
    LocalSystem { a, b }
}

struct Solution {
    w: DMatrix<C64>,
    condition: f64,
    jitter: Option<f64>,
}

fn solve(a: &DMatrix<C64>, b: &DMatrix<C64>, base_jitter: f64) -> Result<Solution> {
    let n = a.nrows();
    let herm = (a + a.adjoint()).scale(0.5);
    let scale = (herm.trace().re / n as f64).max(f64::MIN_POSITIVE);
    let mut jitter = None;
    let mut tau = base_jitter.max(1e-16) * scale;
    let mut attempt = herm.clone();
    for tries in 0..=24 {
        if let Some(ch) = Cholesky::<C64, Dyn>::new(attempt.clone()) {
            let l = ch.l_dirty();
            let diag: Vec<f64> = (0..n).map(|i| l[(i, i)].re).collect();
            let hi = diag.iter().cloned().fold(0.0, f64::max);
            let lo = diag.iter().cloned().fold(f64::INFINITY, f64::min);
            let w = ch.solve(b);
            if w.iter().all(|z| z.is_finite()) {
                return Ok(Solution {
                    w,
                    condition: (hi / lo).powi(2),
                    jitter,
                });
            }
        }
        if tries == 24 {
            break;
        }
        attempt = herm.clone();
        for i in 0..n {
            attempt[(i, i)] += C64::new(tau, 0.0);
        }
        jitter = Some(tau);
        tau *= 10.0;
    }
    Err(Error::Numeric(format!(
        "normal equations of dim {n} could not be factorised"
    )))
}

/// `C − 2 Re⟨b, w⟩ + ⟨w, A w⟩`.
fn quadratic_loss(c: f64, a: &DMatrix<C64>, b: &DMatrix<C64>, w: &DMatrix<C64>) -> f64 {
    let bw: C64 = b.iter().zip(w.iter()).map(|(x, y)| x.conj() * y).sum();
    let aw = a * w;
    let waw: C64 = w.iter().zip(aw.iter()).map(|(x, y)| x.conj() * y).sum();
    (c - 2.0 * bw.re + waw.re).max(0.0)
}

fn site_to_w(t: &DenseTensor) -> DMatrix<C64> {
    let s = t.shape();
    let (dl, dr) = (s[0], s[3]);
    let data = t.data();
    DMatrix::from_fn(dl * D * dr, D, |r, y| {
        let (ax, b) = (r / dr, r % dr);
        data[(ax * D + y) * dr + b]
    })
}

fn w_to_site(w: &DMatrix<C64>, dl: usize, dr: usize) -> DenseTensor {
    let mut data = vec![C64::new(0.0, 0.0); dl * D * D * dr];
    for ax in 0..dl * D {
        for y in 0..D {
            for b in 0..dr {
                data[(ax * D + y) * dr + b] = w[(ax * dr + b, y)];
            }
        }
    }
    DenseTensor::new(vec![dl, D, D, dr], data).expect("w has the site size")
}

fn norm_envs(sites: &[DenseTensor]) -> (Vec<Vec<C64>>, Vec<Vec<C64>>) {
    let n = sites.len();
    let mut gl = vec![vec![C64::new(1.0, 0.0)]; n + 1];
    let mut gr = vec![vec![C64::new(1.0, 0.0)]; n + 1];
    for k in 0..n {
        let s = sites[k].shape();
        gl[k + 1] = left_step(&gl[k], sites[k].data(), sites[k].data(), s[0], s[0], D * D, s[3], s[3]);
    }
    for k in (0..n).rev() {
        let s = sites[k].shape();
        gr[k] = right_step(
            &gr[k + 1],
            sites[k].data(),
            sites[k].data(),
            s[0],
            s[0],
            D * D,
            s[3],
            s[3],
        );
    }
    (gl, gr)
}

fn build_envs(sites: &[DenseTensor], data: &Dataset) -> Vec<SampleEnv> {
    (0..data.len())
        .into_par_iter()
        .map(|m| {
            let mut env = SampleEnv::new(data.input_vectors(m), data.outputs[m].sites().to_vec());
            for (k, w) in sites.iter().enumerate().rev() {
                env.update_right(k, w);
            }
            env
        })
        .collect()
}

fn total_norm(data: &Dataset) -> Result<f64> {
    data.outputs.iter().map(|y| Ok(mps_inner(y, y)?.re)).sum()
}

/// Exact minimisation over site `site` with the rest of `u` fixed, in
/// whatever gauge `u` is in. Returns the new site tensor and the loss.
pub fn local_update(u: &Mpo, site: usize, data: &Dataset, mu: f64) -> Result<(DenseTensor, f64)> {
    check_shapes(u, data)?;
    if site >= u.len() {
        return Err(Error::Validation(format!(
            "site {site} out of range for {} sites",
            u.len()
        )));
    }
    if !(mu >= 0.0 && mu.is_finite()) {
        return Err(Error::Validation(format!("invalid mu {mu}")));
    }
    let sites = u.sites();
    let mut envs = build_envs(sites, data);
    envs.par_iter_mut().for_each(|env| {
        for (k, w) in sites.iter().enumerate().take(site) {
            env.update_left(k, w);
        }
    });
    let s = sites[site].shape();
    let (dl, dr) = (s[0], s[3]);
    let mut sys = assemble(&envs, site, dl, dr);
    let (gl, gr) = norm_envs(sites);
    let (gl, gr) = (&gl[site], &gr[site + 1]);
    let n = dl * D * dr;
    for r in 0..n {
        let (ab, xb, bb) = (r / (D * dr), (r / dr) % D, r % dr);
        for a in 0..dl {
            for b in 0..dr {
                let c = (a * D + xb) * dr + b;
                sys.a[(r, c)] += gl[ab * dl + a] * gr[bb * dr + b] * mu;
            }
        }
    }
    let sol = solve(&sys.a, &sys.b, 1e-12)?;
    let c = total_norm(data)?;
    let l = quadratic_loss(c, &sys.a, &sys.b, &sol.w);
    Ok((w_to_site(&sol.w, dl, dr), l))
}

fn shift_right(sites: &mut [DenseTensor], k: usize) {
    let s = sites[k].shape().to_vec();
    let qr = sites[k].to_matrix(3).qr();
    let (q, r) = (qr.q(), qr.r());
    let chi = q.ncols();
    sites[k] = DenseTensor::from_matrix(&q)
        .reshape(vec![s[0], s[1], s[2], chi])
        .expect("QR shape");
    let ns = sites[k + 1].shape().to_vec();
    let merged = r * sites[k + 1].to_matrix(1);
    sites[k + 1] = DenseTensor::from_matrix(&merged)
        .reshape(vec![chi, ns[1], ns[2], ns[3]])
        .expect("QR shape");
}

fn shift_left(sites: &mut [DenseTensor], k: usize) {
    let s = sites[k].shape().to_vec();
    let qr = sites[k].to_matrix(1).adjoint().qr();
    let q = qr.q().adjoint();
    let l = qr.r().adjoint();
    let chi = q.nrows();
    sites[k] = DenseTensor::from_matrix(&q)
        .reshape(vec![chi, s[1], s[2], s[3]])
        .expect("LQ shape");
    let ps = sites[k - 1].shape().to_vec();
    let merged = sites[k - 1].to_matrix(3) * l;
    sites[k - 1] = DenseTensor::from_matrix(&merged)
        .reshape(vec![ps[0], ps[1], ps[2], chi])
        .expect("LQ shape");
}

/// Trains a process MPO of bond `cfg.bond` on `data`.
pub fn train(data: &Dataset, cfg: &TrainConfig) -> Result<(ProcessMpo, TrainReport)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Validation("cannot train on an empty dataset".into()));
    }
    let start = Instant::now();
    let n = data.steps;
    let mut sites = init_mpo(n, cfg.bond, cfg.seed)?.into_sites();
    for k in (1..n).rev() {
        shift_left(&mut sites, k);
    }
    let c = total_norm(data)?;
    let mut envs = build_envs(&sites, data);

    let mut local_losses = Vec::with_capacity(cfg.sweeps * n);
    let mut loss_history = Vec::with_capacity(cfg.sweeps + 1);
    let mut condition = vec![f64::NAN; n];
    let mut jitter_events = Vec::new();
    let mut initial_loss = None;

    for sweep in 0..cfg.sweeps {
        let forward = sweep % 2 == 0;
        let order: Vec<usize> = if forward {
            (0..n).collect()
        } else {
            (0..n).rev().collect()
        };
        for &k in &order {
            let s = sites[k].shape().to_vec();
            let (dl, dr) = (s[0], s[3]);
            let mut sys = assemble(&envs, k, dl, dr);
            for i in 0..sys.a.nrows() {
                sys.a[(i, i)] += C64::new(cfg.mu, 0.0);
            }
            if initial_loss.is_none() {
                let l0 = quadratic_loss(c, &sys.a, &sys.b, &site_to_w(&sites[k]));
                initial_loss = Some(l0);
                loss_history.push(l0);
            }
            let sol = solve(&sys.a, &sys.b, cfg.jitter)?;
            let l = quadratic_loss(c, &sys.a, &sys.b, &sol.w);
            if !l.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss at sweep {sweep}, site {k} (condition {:e})",
                    sol.condition
                )));
            }
            condition[k] = sol.condition;
            if let Some(j) = sol.jitter {
                jitter_events.push(JitterEvent {
                    sweep,
                    site: k,
                    jitter: j,
                });
            }
            local_losses.push(l);
            sites[k] = w_to_site(&sol.w, dl, dr);
            if forward && k + 1 < n {
                shift_right(&mut sites, k);
                let w = &sites[k];
                envs.par_iter_mut().for_each(|e| e.update_left(k, w));
            } else if !forward && k > 0 {
                shift_left(&mut sites, k);
                let w = &sites[k];
                envs.par_iter_mut().for_each(|e| e.update_right(k, w));
            }
        }
        loss_history.push(*local_losses.last().expect("at least one site"));
    }

    let mpo = Mpo::new(sites)?;
    let bond_dims = mpo.bond_dims();
    let process = ProcessMpo::new(mpo, data.params.dt, Provenance::Trained)?;
    let initial_loss = initial_loss.expect("at least one sweep");
    let report = TrainReport {
        bond: cfg.bond,
        mu: cfg.mu,
        sweeps: cfg.sweeps,
        final_loss: *loss_history.last().expect("nonempty"),
        loss_history,
        local_losses,
        initial_loss,
        wall_time_s: start.elapsed().as_secs_f64(),
        condition,
        jitter_events,
        bond_dims,
    };
    Ok((process, report))
}
