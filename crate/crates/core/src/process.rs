//! Process tensors of the system qubit.
//!
//! A [`ProcessMpo`] has one site per time step. Site `n` (0-based) carries
//! the input leg `x_n` (the vectorised state fed to the system before step
//! `n + 1`) and the output leg `y_{n+1}` (the vectorised system state after
//! that step). The bond carries the vectorised environment.
//!
//! Multi-time outputs are vectors in `⊗_n C⁴`, slot 1 slowest, each slot
//! being the row-major vectorisation of a qubit operator.

use nalgebra::{DMatrix, DVector};

use crate::model::{channel_superop, choi_of, env_steady_state, vectorize, ModelParams, Superoperator};
use crate::tensor::{contract, herm_eig, matmul, DenseTensor};
use crate::tn::{compress_mpo, Mpo, Mps};
use crate::{Error, Result, C64};

/// Dimension of a vectorised qubit operator.
pub const QUBIT_VEC_DIM: usize = 4;

/// Largest `N + L` the dense sequential oracle accepts.
pub const MAX_DENSE_QUBITS: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    Exact,
    Trained,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProcessMpo {
    pub mpo: Mpo,
    pub dt: f64,
    pub provenance: Provenance,
}

impl ProcessMpo {
    pub fn new(mpo: Mpo, dt: f64, provenance: Provenance) -> Result<Self> {
        let ok = mpo
            .input_dims()
            .iter()
            .chain(mpo.output_dims().iter())
            .all(|&d| d == QUBIT_VEC_DIM);
        if !ok {
            return Err(Error::Shape(format!(
                "process MPO legs must all have dim {QUBIT_VEC_DIM}: inputs {:?}, outputs {:?}",
                mpo.input_dims(),
                mpo.output_dims()
            )));
        }
        Ok(Self { mpo, dt, provenance })
    }

    pub fn steps(&self) -> usize {
        self.mpo.len()
    }

    pub fn bond_dims(&self) -> Vec<usize> {
        self.mpo.bond_dims()
    }
}

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// `vec(I₂)`: contracting a slot with it takes the trace.
pub fn trace_covector() -> [C64; 4] {
    [c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)]
}

/// Checks Hermiticity, unit trace and positivity, each to `tol`.
pub fn validate_density_matrix(rho: &DMatrix<C64>, tol: f64) -> Result<()> {
    if !rho.is_square() {
        return Err(Error::Validation(format!(
            "density matrix must be square, got {:?}",
            rho.shape()
        )));
    }
    let skew = (rho - rho.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
    if skew > tol {
        return Err(Error::Validation(format!("not Hermitian (deviation {skew:.3e})")));
    }
    let tr = rho.trace();
    if (tr - c(1.0, 0.0)).norm() > tol {
        return Err(Error::Validation(format!("trace {tr} is not 1")));
    }
    let (vals, _) = herm_eig(rho)?;
    if vals[0] < -tol {
        return Err(Error::Validation(format!("negative eigenvalue {:.3e}", vals[0])));
    }
    Ok(())
}

/// The uncompressed exact process MPO; internal bonds are `4^L`.
pub fn exact_process_mpo_raw(p: &ModelParams, steps: usize) -> Result<ProcessMpo> {
    if steps == 0 {
        return Err(Error::Validation("a process needs at least one step".into()));
    }
    let s = channel_superop(p)?;
    let de = p.env_dim();
    let ee = de * de;
    // superoperator axes (out: s e s' e', in: s e s' e') ->
    // (env in, system in, system out, env out)
    let site = DenseTensor::from_matrix(&s.matrix)
        .reshape(vec![2, de, 2, de, 2, de, 2, de])?
        .permute(&[5, 7, 4, 6, 0, 2, 1, 3])?
        .reshape(vec![ee, QUBIT_VEC_DIM, QUBIT_VEC_DIM, ee])?;

    let rho_e = DenseTensor::new(vec![1, ee], vectorize(&env_steady_state(p)?).as_slice().to_vec())?;
    let tr_e = DenseTensor::new(vec![ee, 1], vectorize(&DMatrix::identity(de, de)).as_slice().to_vec())?;

    let mut sites = vec![site; steps];
    sites[0] = contract(&rho_e, &sites[0], &[(1, 0)])?;
    let last = steps - 1;
    sites[last] = contract(&sites[last], &tr_e, &[(3, 0)])?;
    ProcessMpo::new(Mpo::new(sites)?, p.dt, Provenance::Exact)
}

/// Exact process MPO compressed to `max_bond`/`cutoff`, with the total
/// discarded weight of the compression.
pub fn build_exact_process_mpo(
    p: &ModelParams,
    steps: usize,
    max_bond: usize,
    cutoff: f64,
) -> Result<(ProcessMpo, f64)> {
    let raw = exact_process_mpo_raw(p, steps)?;
    let (mpo, discarded) = compress_mpo(&raw.mpo, max_bond, cutoff)?;
    Ok((ProcessMpo::new(mpo, p.dt, Provenance::Exact)?, discarded))
}

/// Multi-time output MPS for the product input `X_0 ⊗ ⋯ ⊗ X_{N−1}`.
pub fn apply_process(u: &ProcessMpo, inputs: &[DMatrix<C64>]) -> Result<Mps> {
    if inputs.len() != u.steps() {
        return Err(Error::Validation(format!(
            "{}-step process needs {} inputs, got {}",
            u.steps(),
            u.steps(),
            inputs.len()
        )));
    }
    for (n, x) in inputs.iter().enumerate() {
        if x.shape() != (2, 2) {
            return Err(Error::Validation(format!("input {n} is not a qubit state")));
        }
        validate_density_matrix(x, 1e-8).map_err(|e| Error::Validation(format!("input {n}: {e}")))?;
    }
    let vecs: Vec<Vec<C64>> = inputs.iter().map(|x| vectorize(x).as_slice().to_vec()).collect();
    apply_to_vectors(&u.mpo, &vecs)
}

/// Contracts every input leg with the given vectors (no state validation).
pub(crate) fn apply_to_vectors(mpo: &Mpo, vecs: &[Vec<C64>]) -> Result<Mps> {
    let sites = mpo
        .sites()
        .iter()
        .zip(vecs)
        .map(|(w, v)| {
            let x = DenseTensor::from_vector(v);
            // (l, x, y, r) · x -> (l, y, r)
            contract(w, &x, &[(1, 0)])
        })
        .collect::<Result<Vec<_>>>()?;
    Mps::new(sites)
}

fn apply_channel_blocks(s: &DMatrix<C64>, rho: &mut DMatrix<C64>, dse: usize) {
    let blocks = rho.nrows() / dse;
    let mut psi = DMatrix::<C64>::zeros(dse * dse, blocks * blocks);
    for a in 0..blocks {
        for b in 0..blocks {
            let col = a * blocks + b;
            for i in 0..dse {
                for j in 0..dse {
                    psi[(i * dse + j, col)] = rho[(a * dse + i, b * dse + j)];
                }
            }
        }
    }
    let out = matmul(s, &psi);
    for a in 0..blocks {
        for b in 0..blocks {
            let col = a * blocks + b;
            for i in 0..dse {
                for j in 0..dse {
                    rho[(a * dse + i, b * dse + j)] = out[(i * dse + j, col)];
                }
            }
        }
    }
}

fn check_dense_inputs(p: &ModelParams, inputs: &[DMatrix<C64>]) -> Result<()> {
    if inputs.is_empty() {
        return Err(Error::Validation("need at least one input".into()));
    }
    if inputs.len() + p.l > MAX_DENSE_QUBITS {
        return Err(Error::Capability(format!(
            "dense sequential oracle supports N + L ≤ {MAX_DENSE_QUBITS}, got {}",
            inputs.len() + p.l
        )));
    }
    for (n, x) in inputs.iter().enumerate() {
        if x.shape() != (2, 2) {
            return Err(Error::Validation(format!("input {n} is not a qubit state")));
        }
        validate_density_matrix(x, 1e-8).map_err(|e| Error::Validation(format!("input {n}: {e}")))?;
    }
    Ok(())
}

/// Dense system-environment simulator of one model. Building it computes
/// the step channel once; [`apply_process_dense`] and
/// [`probability_oracle_dense`] are one-shot wrappers.
#[derive(Clone, Debug)]
pub struct DenseSimulator {
    params: ModelParams,
    channel: Superoperator,
    rho_e: DMatrix<C64>,
}

impl DenseSimulator {
    pub fn new(p: &ModelParams) -> Result<Self> {
        Ok(Self {
            params: *p,
            channel: channel_superop(p)?,
            rho_e: env_steady_state(p)?,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    /// Sequential simulation of the multi-time output: start from
    /// `X_0 ⊗ ρ_E`; after each step the system qubit is parked in a fresh
    /// output slot and the next input takes its place; the environment is
    /// traced at the end.
    pub fn apply(&self, inputs: &[DMatrix<C64>]) -> Result<DVector<C64>> {
        check_dense_inputs(&self.params, inputs)?;
        let steps = inputs.len();
        let s = &self.channel.matrix;
        let de = self.params.env_dim();
        let dse = 2 * de;

        let mut rho = inputs[0].kronecker(&self.rho_e);
        for n in 1..=steps {
            apply_channel_blocks(s, &mut rho, dse);
            if let Some(x) = inputs.get(n) {
                let slots = rho.nrows() / de;
                let dim = slots * dse;
                let mut next = DMatrix::<C64>::zeros(dim, dim);
                for a in 0..slots {
                    for b in 0..slots {
                        for e in 0..de {
                            for f in 0..de {
                                let v = rho[(a * de + e, b * de + f)];
                                if v == c(0.0, 0.0) {
                                    continue;
                                }
                                for s1 in 0..2 {
                                    for s2 in 0..2 {
                                        next[((a * 2 + s1) * de + e, (b * 2 + s2) * de + f)] = v * x[(s1, s2)];
                                    }
                                }
                            }
                        }
                    }
                }
                rho = next;
            }
        }
        let slots = rho.nrows() / de;
        let mut joint = DMatrix::<C64>::zeros(slots, slots);
        for a in 0..slots {
            for b in 0..slots {
                joint[(a, b)] = (0..de).map(|e| rho[(a * de + e, b * de + e)]).sum();
            }
        }
        Ok(joint_to_multitime(&joint, steps))
    }

    /// Direct evaluation of `Tr[Λ_N E ⋯ Λ_1 E (ρ_0 ⊗ ρ_E)]` on the full
    /// system-environment density matrix.
    pub fn probability(&self, elements: &[InstrumentElement]) -> Result<f64> {
        let steps = elements.len().saturating_sub(1);
        if steps == 0 {
            return Err(Error::Validation(
                "need a preparation and at least one further element".into(),
            ));
        }
        check_sequence(steps, elements)?;
        let de = self.params.env_dim();
        let rho0 = DMatrix::from_row_slice(2, 2, elements[0].superop.as_slice());
        let mut rho = rho0.kronecker(&self.rho_e);
        for (n, e) in elements.iter().enumerate().skip(1) {
            rho = self.channel.apply(&rho)?;
            rho = apply_system_map(&rho, &e.superop, e.dout, de);
            if n == steps {
                return Ok(rho.trace().re);
            }
        }
        unreachable!("loop returns at the final element")
    }
}

/// Sequential dense simulation of the multi-time output (see
/// [`DenseSimulator::apply`]).
pub fn apply_process_dense(p: &ModelParams, inputs: &[DMatrix<C64>]) -> Result<DVector<C64>> {
    p.validate()?;
    check_dense_inputs(p, inputs)?;
    DenseSimulator::new(p)?.apply(inputs)
}

/// Rearranges a joint `2^N × 2^N` operator of N qubits into the multi-time
/// vector layout (slot-wise row-major vectorisation, slot 1 slowest).
pub fn joint_to_multitime(joint: &DMatrix<C64>, steps: usize) -> DVector<C64> {
    let total = 1usize << (2 * steps);
    DVector::from_fn(total, |idx, _| {
        let (mut row, mut col) = (0usize, 0usize);
        for n in 0..steps {
            let pair = (idx >> (2 * (steps - 1 - n))) & 3;
            row = row * 2 + (pair >> 1);
            col = col * 2 + (pair & 1);
        }
        joint[(row, col)]
    })
}

/// A CP map between operators of dimension `din` and `dout` (1 stands for
/// the trivial system), stored as its `(dout² × din²)` superoperator.
#[derive(Clone, Debug, PartialEq)]
pub struct InstrumentElement {
    pub superop: DMatrix<C64>,
    pub din: usize,
    pub dout: usize,
    pub label: String,
}

impl InstrumentElement {
    pub fn new(superop: DMatrix<C64>, din: usize, dout: usize, label: impl Into<String>) -> Result<Self> {
        if superop.shape() != (dout * dout, din * din) {
            return Err(Error::Shape(format!(
                "element {din}→{dout} needs a {}x{} superoperator, got {:?}",
                dout * dout,
                din * din,
                superop.shape()
            )));
        }
        Ok(Self {
            superop,
            din,
            dout,
            label: label.into(),
        })
    }

    /// Preparation of `rho` from the trivial system.
    pub fn preparation(rho: &DMatrix<C64>) -> Self {
        let d = rho.nrows();
        let v = vectorize(rho);
        Self {
            superop: DMatrix::from_column_slice(d * d, 1, v.as_slice()),
            din: 1,
            dout: d,
            label: "prep".into(),
        }
    }

    /// `rho ↦ Σ_k K rho Kᴴ`.
    pub fn from_kraus(kraus: &[DMatrix<C64>], label: impl Into<String>) -> Result<Self> {
        let first = kraus
            .first()
            .ok_or_else(|| Error::Validation("no Kraus operators".into()))?;
        let (dout, din) = first.shape();
        let mut m = DMatrix::zeros(dout * dout, din * din);
        for k in kraus {
            if k.shape() != (dout, din) {
                return Err(Error::Shape("Kraus operators differ in shape".into()));
            }
            m += k.kronecker(&k.conjugate());
        }
        Self::new(m, din, dout, label)
    }

    pub fn identity(d: usize) -> Self {
        Self::from_kraus(&[DMatrix::identity(d, d)], "id").expect("identity Kraus operator")
    }

    /// Projective outcome `|ψ⟩⟨ψ| rho |ψ⟩⟨ψ|` for a normalised `psi`.
    pub fn projector(psi: &[C64], label: impl Into<String>) -> Result<Self> {
        let v = DVector::from_column_slice(psi);
        Self::from_kraus(&[&v * v.adjoint()], label)
    }

    /// Discards the system, `rho ↦ tr(rho)`.
    pub fn trace(d: usize) -> Self {
        let v = vectorize(&DMatrix::identity(d, d));
        Self {
            superop: DMatrix::from_row_slice(1, d * d, v.as_slice()),
            din: d,
            dout: 1,
            label: "trace".into(),
        }
    }

    pub fn choi(&self) -> DMatrix<C64> {
        choi_of(&self.superop, self.din, self.dout)
    }

    pub fn is_cp(&self, tol: f64) -> Result<bool> {
        let (vals, _) = herm_eig(&self.choi())?;
        Ok(vals[0] >= -tol)
    }

    /// Covector `⟨⟨I| S` giving the trace of the element's output.
    fn traced(&self) -> DMatrix<C64> {
        if self.dout == 1 {
            self.superop.clone()
        } else {
            let id = vectorize(&DMatrix::identity(self.dout, self.dout));
            DMatrix::from_row_slice(1, id.len(), id.as_slice()) * &self.superop
        }
    }
}

/// Whether the elements sum to a trace-preserving map, within `tol`.
pub fn instrument_is_complete(elements: &[InstrumentElement], tol: f64) -> bool {
    let Some(first) = elements.first() else {
        return false;
    };
    let mut total = DMatrix::<C64>::zeros(1, first.din * first.din);
    for e in elements {
        if e.din != first.din {
            return false;
        }
        total += e.traced();
    }
    let id = vectorize(&DMatrix::identity(first.din, first.din));
    (total - DMatrix::from_row_slice(1, id.len(), id.as_slice()))
        .iter()
        .all(|z| z.norm() <= tol)
}

fn check_sequence(steps: usize, ops: &[InstrumentElement]) -> Result<()> {
    if ops.len() != steps + 1 {
        return Err(Error::Validation(format!(
            "{steps}-step process needs {} elements (preparation, {} maps, final), got {}",
            steps + 1,
            steps.saturating_sub(1),
            ops.len()
        )));
    }
    if ops[0].din != 1 || ops[0].dout != 2 {
        return Err(Error::Validation("element 0 must prepare a qubit from nothing".into()));
    }
    for (n, e) in ops.iter().enumerate().take(steps).skip(1) {
        if e.din != 2 || e.dout != 2 {
            return Err(Error::Validation(format!("element {n} must map a qubit to a qubit")));
        }
    }
    if ops[steps].din != 2 {
        return Err(Error::Validation("final element must act on a qubit".into()));
    }
    Ok(())
}

/// Born-rule expectation of a sequence of instrument elements: a
/// preparation feeding step 1, one qubit map between each pair of steps,
/// and a final element whose output is traced.
pub fn expectation_born(u: &ProcessMpo, ops: &[InstrumentElement]) -> Result<C64> {
    let steps = u.steps();
    check_sequence(steps, ops)?;
    let sites = u.mpo.sites();
    // env axes: (bond, dangling output y)
    let prep = DenseTensor::from_vector(ops[0].superop.as_slice());
    let w0 = contract(&prep, &sites[0], &[(0, 1)])?; // (l=1, y, r)
    let mut env = w0.permute(&[0, 2, 1])?; // (1, r, y)
    let sh = env.shape().to_vec();
    env = env.reshape(vec![sh[1], sh[2]])?;
    for (n, w) in sites.iter().enumerate().skip(1) {
        let map = DenseTensor::from_matrix(&ops[n].superop); // (x out, y in)
        let fed = contract(&env, &map, &[(1, 1)])?; // (a, x)
        env = contract(&fed, w, &[(0, 0), (1, 1)])?; // (y, a')
        env = env.permute(&[1, 0])?;
    }
    let fin = DenseTensor::from_matrix(&ops[steps].traced()); // (1, y)
    let out = contract(&env, &fin, &[(1, 1)])?;
    Ok(out.data()[0])
}

fn apply_system_map(rho: &DMatrix<C64>, superop: &DMatrix<C64>, dout: usize, de: usize) -> DMatrix<C64> {
    let mut out = DMatrix::<C64>::zeros(dout * de, dout * de);
    for e in 0..de {
        for f in 0..de {
            let block = DVector::from_fn(4, |k, _| rho[((k >> 1) * de + e, (k & 1) * de + f)]);
            let mapped = superop * block;
            for i in 0..dout {
                for j in 0..dout {
                    out[(i * de + e, j * de + f)] = mapped[i * dout + j];
                }
            }
        }
    }
    out
}

/// Born probability by direct dense superoperator composition (see
/// [`DenseSimulator::probability`]).
pub fn probability_oracle_dense(p: &ModelParams, elements: &[InstrumentElement]) -> Result<f64> {
    let steps = elements.len().saturating_sub(1);
    if steps == 0 {
        return Err(Error::Validation(
            "need a preparation and at least one further element".into(),
        ));
    }
    check_sequence(steps, elements)?;
    DenseSimulator::new(p)?.probability(elements)
}
