//! Dissipative spin chain: one system spin (site 0) coupled in a star to
//! every spin of an open XXZ environment chain (sites 1..=L), each
//! environment spin pumped toward `|0⟩` at rate `γr` and toward `|1⟩` at
//! rate `γ(1 − r)`.

use nalgebra::{DMatrix, DVector};

use crate::tensor::{expm, herm_eig, DenseTensor};
use crate::{Error, Result, C64};

/// Largest environment the dense Liouvillian supports (dimension 4^6).
pub const MAX_ENV_SITES: usize = 5;

/// Parameters of the spin-chain model. Energies are in units of the
/// environment coupling `j_e`, with ħ = 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelParams {
    /// Number of environment spins.
    pub l: usize,
    /// System-environment coupling.
    pub j: f64,
    /// Environment nearest-neighbour coupling.
    pub j_e: f64,
    /// Uniform field.
    pub h: f64,
    /// Environment anisotropy.
    pub delta: f64,
    /// Dissipation strength.
    pub gamma: f64,
    /// Average occupation of `|0⟩` in the environment steady state.
    pub r: f64,
    /// Step duration.
    pub dt: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            l: 3,
            j: 4.0,
            j_e: 1.0,
            h: 0.5,
            delta: 1.5,
            gamma: 1.0,
            r: 0.0,
            dt: 0.1,
        }
    }
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.j, self.j_e, self.h, self.delta, self.gamma, self.r, self.dt]
            .iter()
            .all(|x| x.is_finite());
        if !finite {
            return Err(Error::Validation(format!("non-finite model parameter in {self:?}")));
        }
        if self.l == 0 {
            return Err(Error::Validation("L must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.r) {
            return Err(Error::Validation(format!("r = {} outside [0, 1]", self.r)));
        }
        if self.gamma < 0.0 {
            return Err(Error::Validation(format!("gamma = {} is negative", self.gamma)));
        }
        if self.dt <= 0.0 {
            return Err(Error::Validation(format!("dt = {} must be positive", self.dt)));
        }
        Ok(())
    }

    /// Rate weight of the raising jump `σ⁺ = |0⟩⟨1|`.
    pub fn nu_plus(&self) -> f64 {
        self.r
    }

    /// Rate weight of the lowering jump `σ⁻ = |1⟩⟨0|`.
    pub fn nu_minus(&self) -> f64 {
        1.0 - self.r
    }

    /// Hilbert dimension of system plus environment.
    pub fn hilbert_dim(&self) -> usize {
        1 << (self.l + 1)
    }

    pub fn env_dim(&self) -> usize {
        1 << self.l
    }

    pub(crate) fn check_dense_cap(&self) -> Result<()> {
        self.validate()?;
        if self.l > MAX_ENV_SITES {
            return Err(Error::Capability(format!(
                "dense Liouvillian supports L ≤ {MAX_ENV_SITES}, got L = {}",
                self.l
            )));
        }
        Ok(())
    }
}

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn pauli_x() -> DMatrix<C64> {
    DMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)])
}

pub fn pauli_y() -> DMatrix<C64> {
    DMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(0.0, -1.0), c(0.0, 1.0), c(0.0, 0.0)])
}

pub fn pauli_z() -> DMatrix<C64> {
    DMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(-1.0, 0.0)])
}

/// `σ⁺ = |0⟩⟨1|`.
pub fn sigma_plus() -> DMatrix<C64> {
    DMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)])
}

/// `σ⁻ = |1⟩⟨0|`.
pub fn sigma_minus() -> DMatrix<C64> {
    sigma_plus().transpose()
}

/// `op` on qubit `site` of an `n`-qubit register, identity elsewhere.
pub fn site_operator(op: &DMatrix<C64>, site: usize, n: usize) -> DMatrix<C64> {
    let mut acc = DMatrix::identity(1, 1);
    for k in 0..n {
        acc = if k == site {
            acc.kronecker(op)
        } else {
            acc.kronecker(&DMatrix::<C64>::identity(2, 2))
        };
    }
    acc
}

/// Row-major vectorisation, `v[i * d + j] = rho[i, j]`.
pub fn vectorize(rho: &DMatrix<C64>) -> DVector<C64> {
    DVector::from_column_slice(rho.transpose().as_slice())
}

pub fn unvectorize(v: &[C64], d: usize) -> Result<DMatrix<C64>> {
    if v.len() != d * d {
        return Err(Error::Shape(format!(
            "vector of length {} is not a {d}x{d} matrix",
            v.len()
        )));
    }
    Ok(DMatrix::from_row_slice(d, d, v))
}

/// Linear map on `d×d` matrices acting on [`vectorize`]d operands.
#[derive(Clone, Debug, PartialEq)]
pub struct Superoperator {
    pub dim: usize,
    pub matrix: DMatrix<C64>,
}

impl Superoperator {
    pub fn new(dim: usize, matrix: DMatrix<C64>) -> Result<Self> {
        if matrix.shape() != (dim * dim, dim * dim) {
            return Err(Error::Shape(format!(
                "superoperator on dim {dim} needs a {0}x{0} matrix, got {1:?}",
                dim * dim,
                matrix.shape()
            )));
        }
        Ok(Self { dim, matrix })
    }

    /// Superoperator of `rho ↦ a rho b`.
    pub fn sandwich(a: &DMatrix<C64>, b: &DMatrix<C64>) -> Self {
        Self {
            dim: a.nrows(),
            matrix: a.kronecker(&b.transpose()),
        }
    }

    pub fn apply(&self, rho: &DMatrix<C64>) -> Result<DMatrix<C64>> {
        if rho.shape() != (self.dim, self.dim) {
            return Err(Error::Shape(format!(
                "operand {:?} does not match superoperator dim {}",
                rho.shape(),
                self.dim
            )));
        }
        let out = &self.matrix * vectorize(rho);
        unvectorize(out.as_slice(), self.dim)
    }

    pub fn compose(&self, first: &Superoperator) -> Superoperator {
        Superoperator {
            dim: self.dim,
            matrix: &self.matrix * &first.matrix,
        }
    }

    /// Largest entry of `⟨⟨I| S`; zero for a generator whose flow is trace
    /// preserving.
    pub fn trace_annihilation_residual(&self) -> f64 {
        let id = vectorize(&DMatrix::identity(self.dim, self.dim));
        (id.transpose() * &self.matrix)
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }

    /// Largest entry of `⟨⟨I| S − ⟨⟨I|`; zero for a trace-preserving map.
    pub fn trace_preservation_residual(&self) -> f64 {
        let id = vectorize(&DMatrix::identity(self.dim, self.dim));
        (id.transpose() * &self.matrix - id.transpose())
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }

    /// Choi matrix `Σ_ij |i⟩⟨j| ⊗ S(|i⟩⟨j|)`.
    pub fn choi(&self) -> DMatrix<C64> {
        choi_of(&self.matrix, self.dim, self.dim)
    }

    pub fn min_choi_eigenvalue(&self) -> Result<f64> {
        let (vals, _) = herm_eig(&self.choi())?;
        Ok(vals[0])
    }
}

/// Choi matrix of a map from `din×din` to `dout×dout` matrices expressed
/// as a `(dout² × din²)` matrix on row-major vectorisations.
pub(crate) fn choi_of(matrix: &DMatrix<C64>, din: usize, dout: usize) -> DMatrix<C64> {
    // entries S[(k,l),(i,j)] -> C[(i,k),(j,l)]
    let t = DenseTensor::from_matrix(matrix)
        .reshape(vec![dout, dout, din, din])
        .expect("superoperator shape");
    t.permute(&[2, 0, 3, 1]).expect("valid permutation").to_matrix(2)
}

/// `H = h Σ_l σz_l + J Σ_l (σx_0 σx_l + σy_0 σy_l)
///    + J_E Σ_{l=1}^{L−1} (σx_l σx_{l+1} + σy_l σy_{l+1} + Δ σz_l σz_{l+1})`.
pub fn build_hamiltonian(p: &ModelParams) -> Result<DMatrix<C64>> {
    p.check_dense_cap()?;
    let n = p.l + 1;
    let d = p.hilbert_dim();
    let (sx, sy, sz) = (pauli_x(), pauli_y(), pauli_z());
    let x: Vec<_> = (0..n).map(|k| site_operator(&sx, k, n)).collect();
    let y: Vec<_> = (0..n).map(|k| site_operator(&sy, k, n)).collect();
    let z: Vec<_> = (0..n).map(|k| site_operator(&sz, k, n)).collect();

    let mut h = DMatrix::<C64>::zeros(d, d);
    for zk in &z {
        h += zk.scale(p.h);
    }
    for l in 1..n {
        h += (&x[0] * &x[l] + &y[0] * &y[l]).scale(p.j);
    }
    for l in 1..n - 1 {
        let bond = &x[l] * &x[l + 1] + &y[l] * &y[l + 1] + (&z[l] * &z[l + 1]).scale(p.delta);
        h += bond.scale(p.j_e);
    }
    Ok(h)
}

/// `L(rho) = −i[H, rho] + γ Σ_l Σ_± ν_± (2 σ rho σᴴ − {σᴴσ, rho})`, the
/// dissipator acting on environment sites only.
pub fn build_liouvillian(p: &ModelParams) -> Result<Superoperator> {
    let h = build_hamiltonian(p)?;
    let n = p.l + 1;
    let d = p.hilbert_dim();
    let id = DMatrix::<C64>::identity(d, d);
    let mut lv = (h.kronecker(&id) - id.kronecker(&h.transpose())) * c(0.0, -1.0);

    if p.gamma > 0.0 {
        for l in 1..n {
            for (rate, op) in [(p.nu_plus(), sigma_plus()), (p.nu_minus(), sigma_minus())] {
                let w = p.gamma * rate;
                if w == 0.0 {
                    continue;
                }
                let s = site_operator(&op, l, n);
                let sds = s.adjoint() * &s;
                let jump = s.kronecker(&s.conjugate()).scale(2.0);
                let anti = sds.kronecker(&id) + id.kronecker(&sds.transpose());
                lv += (jump - anti).scale(w);
            }
        }
    }
    Superoperator::new(d, lv)
}

/// Step channel `exp(L dt)`; fails if its Choi matrix has an eigenvalue
/// below −1e-8.
pub fn channel_superop(p: &ModelParams) -> Result<Superoperator> {
    let lv = build_liouvillian(p)?;
    let s = Superoperator::new(lv.dim, expm(&lv.matrix.scale(p.dt))?)?;
    let min_eig = s.min_choi_eigenvalue()?;
    if min_eig < -1e-8 {
        return Err(Error::Numeric(format!(
            "step channel is not completely positive: Choi eigenvalue {min_eig:.3e}"
        )));
    }
    Ok(s)
}

/// `(r|0⟩⟨0| + (1 − r)|1⟩⟨1|)^{⊗L}`.
pub fn env_steady_state(p: &ModelParams) -> Result<DMatrix<C64>> {
    p.validate()?;
    let single = DMatrix::from_row_slice(2, 2, &[c(p.r, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(1.0 - p.r, 0.0)]);
    let mut acc = DMatrix::identity(1, 1);
    for _ in 0..p.l {
        acc = acc.kronecker(&single);
    }
    Ok(acc)
}
