//! Matrix product states and operators with open boundaries.
//!
//! MPS site tensors have axes `(left, physical, right)`; MPO site tensors
//! have axes `(left, input, output, right)`. Boundary bonds are always 1.

use nalgebra::DMatrix;

use crate::tensor::{contract, svd_truncate, DenseTensor};
use crate::{Error, Result, C64};

#[derive(Clone, Debug, PartialEq)]
pub struct Mps {
    sites: Vec<DenseTensor>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mpo {
    sites: Vec<DenseTensor>,
}

fn check_chain(sites: &[DenseTensor], rank: usize, what: &str) -> Result<()> {
    if sites.is_empty() {
        return Err(Error::Shape(format!("{what} needs at least one site")));
    }
    for (k, t) in sites.iter().enumerate() {
        if t.rank() != rank {
            return Err(Error::Shape(format!(
                "{what} site {k} has rank {}, expected {rank}",
                t.rank()
            )));
        }
    }
    if sites[0].shape()[0] != 1 || sites[sites.len() - 1].shape()[rank - 1] != 1 {
        return Err(Error::Shape(format!("{what} boundary bonds must be 1")));
    }
    for k in 1..sites.len() {
        let left = sites[k - 1].shape()[rank - 1];
        let right = sites[k].shape()[0];
        if left != right {
            return Err(Error::Shape(format!("{what} bond {k} mismatch: {left} vs {right}")));
        }
    }
    Ok(())
}

impl Mps {
    pub fn new(sites: Vec<DenseTensor>) -> Result<Self> {
        check_chain(&sites, 3, "MPS")?;
        Ok(Self { sites })
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn sites(&self) -> &[DenseTensor] {
        &self.sites
    }

    pub fn site(&self, k: usize) -> &DenseTensor {
        &self.sites[k]
    }

    pub fn into_sites(self) -> Vec<DenseTensor> {
        self.sites
    }

    pub fn phys_dims(&self) -> Vec<usize> {
        self.sites.iter().map(|t| t.shape()[1]).collect()
    }

    /// Bond dimensions of all `len() + 1` links, boundaries included.
    pub fn bond_dims(&self) -> Vec<usize> {
        bond_dims(&self.sites)
    }

    pub fn max_bond(&self) -> usize {
        self.bond_dims().into_iter().max().unwrap_or(1)
    }

    /// Dense expansion; the first site is the slowest index.
    pub fn to_dense(&self) -> Vec<C64> {
        let mut acc = DenseTensor::scalar(C64::new(1.0, 0.0));
        for t in &self.sites {
            let r = acc.rank();
            acc = contract(&acc, t, &[(r - 1, 0)]).expect("chain validated at construction");
        }
        acc.into_data()
    }

    /// Exact (up to `cutoff`) MPS of a dense vector by successive SVDs.
    pub fn from_dense(v: &[C64], phys_dims: &[usize], cutoff: f64) -> Result<Self> {
        let total: usize = phys_dims.iter().product();
        if total != v.len() || phys_dims.is_empty() {
            return Err(Error::Shape(format!(
                "vector of length {} does not factor as {phys_dims:?}",
                v.len()
            )));
        }
        let mut sites = Vec::with_capacity(phys_dims.len());
        let mut rest = DenseTensor::new(vec![1, total], v.to_vec())?;
        let mut left = 1;
        for (k, &d) in phys_dims.iter().enumerate() {
            if k + 1 == phys_dims.len() {
                sites.push(rest.reshape(vec![left, d, 1])?);
                break;
            }
            let remaining = rest.len() / (left * d);
            let m = rest.reshape(vec![left * d, remaining])?.to_matrix(1);
            let svd = svd_truncate(&m, usize::MAX, cutoff)?;
            let chi = svd.rank();
            sites.push(DenseTensor::from_matrix(&svd.u).reshape(vec![left, d, chi])?);
            let mut sv = svd.v.adjoint();
            for (i, &s) in svd.s.iter().enumerate() {
                sv.row_mut(i).scale_mut(s);
            }
            rest = DenseTensor::from_matrix(&sv);
            left = chi;
        }
        Self::new(sites)
    }

    pub fn scale(&self, alpha: C64) -> Self {
        let mut sites = self.sites.clone();
        sites[0] = sites[0].scale(alpha);
        Self { sites }
    }

    pub fn norm_sqr(&self) -> f64 {
        mps_inner(self, self).map(|z| z.re).unwrap_or(0.0)
    }

    /// Brings every site but the last into left-orthonormal form.
    pub fn left_canonicalize(&mut self) {
        left_canonicalize(&mut self.sites);
    }

    /// Brings every site but the first into right-orthonormal form.
    pub fn right_canonicalize(&mut self) {
        right_canonicalize(&mut self.sites);
    }
}

impl Mpo {
    pub fn new(sites: Vec<DenseTensor>) -> Result<Self> {
        check_chain(&sites, 4, "MPO")?;
        Ok(Self { sites })
    }

    /// Product of single-site operators `ops[k]` given as (output × input)
    /// matrices.
    pub fn from_local_ops(ops: &[DMatrix<C64>]) -> Result<Self> {
        let sites = ops
            .iter()
            .map(|op| {
                let (dout, din) = op.shape();
                let t = DenseTensor::from_matrix(op).reshape(vec![1, dout, din, 1])?;
                t.permute(&[0, 2, 1, 3])
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(sites)
    }

    pub fn identity(dims: &[usize]) -> Self {
        let ops: Vec<_> = dims.iter().map(|&d| DMatrix::identity(d, d)).collect();
        Self::from_local_ops(&ops).expect("identity sites are well formed")
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn sites(&self) -> &[DenseTensor] {
        &self.sites
    }

    pub fn site(&self, k: usize) -> &DenseTensor {
        &self.sites[k]
    }

    pub fn into_sites(self) -> Vec<DenseTensor> {
        self.sites
    }

    /// Replaces site `k`; the new tensor must keep the bond dimensions.
    pub fn set_site(&mut self, k: usize, t: DenseTensor) -> Result<()> {
        if t.shape() != self.sites[k].shape() {
            return Err(Error::Shape(format!(
                "site {k} shape {:?} cannot be replaced by {:?}",
                self.sites[k].shape(),
                t.shape()
            )));
        }
        self.sites[k] = t;
        Ok(())
    }

    pub fn input_dims(&self) -> Vec<usize> {
        self.sites.iter().map(|t| t.shape()[1]).collect()
    }

    pub fn output_dims(&self) -> Vec<usize> {
        self.sites.iter().map(|t| t.shape()[2]).collect()
    }

    pub fn bond_dims(&self) -> Vec<usize> {
        bond_dims(&self.sites)
    }

    pub fn max_bond(&self) -> usize {
        self.bond_dims().into_iter().max().unwrap_or(1)
    }

    pub fn scale(&self, alpha: C64) -> Self {
        let mut sites = self.sites.clone();
        sites[0] = sites[0].scale(alpha);
        Self { sites }
    }

    /// The MPO as an MPS whose site legs fuse `(input, output)`; the fused
    /// index is `input * d_out + output`. No data moves.
    pub fn to_fused_mps(&self) -> Mps {
        let sites = self
            .sites
            .iter()
            .map(|t| {
                let s = t.shape();
                t.clone()
                    .reshape(vec![s[0], s[1] * s[2], s[3]])
                    .expect("fused sizes agree")
            })
            .collect();
        Mps { sites }
    }

    pub(crate) fn from_fused_mps(mps: Mps, input_dims: &[usize], output_dims: &[usize]) -> Self {
        let sites = mps
            .sites
            .into_iter()
            .enumerate()
            .map(|(k, t)| {
                let s = t.shape().to_vec();
                t.reshape(vec![s[0], input_dims[k], output_dims[k], s[2]])
                    .expect("fused sizes agree")
            })
            .collect();
        Self { sites }
    }

    /// Row-major vector of all entries with per-site `(input, output)`
    /// fused, first site slowest. Its 2-norm is the Frobenius norm.
    pub fn to_dense_vector(&self) -> Vec<C64> {
        self.to_fused_mps().to_dense()
    }

    /// The operator as an (outputs × inputs) matrix.
    pub fn to_dense_matrix(&self) -> DMatrix<C64> {
        let n = self.len();
        let mut acc = DenseTensor::scalar(C64::new(1.0, 0.0));
        for t in &self.sites {
            let r = acc.rank();
            acc = contract(&acc, t, &[(r - 1, 0)]).expect("chain validated at construction");
        }
        // axes: (x0, y0, x1, y1, ..., 1) -> (y0..y_{n-1}, x0..x_{n-1}, 1)
        let mut perm: Vec<usize> = (0..n).map(|k| 1 + 2 * k).collect();
        perm.extend((0..n).map(|k| 2 * k));
        perm.push(2 * n);
        acc.permute(&perm).expect("valid permutation").to_matrix(n)
    }

    /// Frobenius norm squared, `tr(OᴴO)`.
    pub fn norm_sqr(&self) -> f64 {
        let f = self.to_fused_mps();
        mps_inner(&f, &f).map(|z| z.re).unwrap_or(0.0)
    }
}

fn bond_dims(sites: &[DenseTensor]) -> Vec<usize> {
    let mut b: Vec<usize> = sites.iter().map(|t| t.shape()[0]).collect();
    let last = sites.last().expect("nonempty chain");
    b.push(last.shape()[last.rank() - 1]);
    b
}

/// `⟨a|b⟩`, conjugate-linear in `a`.
pub fn mps_inner(a: &Mps, b: &Mps) -> Result<C64> {
    if a.len() != b.len() {
        return Err(Error::Validation(format!(
            "inner product of MPS with {} and {} sites",
            a.len(),
            b.len()
        )));
    }
    if a.phys_dims() != b.phys_dims() {
        return Err(Error::Validation(format!(
            "physical dims differ: {:?} vs {:?}",
            a.phys_dims(),
            b.phys_dims()
        )));
    }
    // env axes: (bond of a, bond of b)
    let mut env = DenseTensor::new(vec![1, 1], vec![C64::new(1.0, 0.0)])?;
    for (ta, tb) in a.sites.iter().zip(&b.sites) {
        let t = contract(&env, &ta.conj(), &[(0, 0)])?; // (b, s, a')
        env = contract(&t, tb, &[(0, 0), (1, 1)])?; // (a', b')
    }
    Ok(env.data()[0])
}

/// Applies an MPO to an MPS; bond dimensions multiply.
pub fn mpo_apply(o: &Mpo, s: &Mps) -> Result<Mps> {
    if o.len() != s.len() || o.input_dims() != s.phys_dims() {
        return Err(Error::Validation(format!(
            "MPO inputs {:?} do not match MPS physical dims {:?}",
            o.input_dims(),
            s.phys_dims()
        )));
    }
    let sites = o
        .sites
        .iter()
        .zip(&s.sites)
        .map(|(w, a)| {
            let (lw, dy, rw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
            let (la, ra) = (a.shape()[0], a.shape()[2]);
            let t = contract(w, a, &[(1, 1)])?; // (lw, y, rw, la, ra)
            t.permute(&[0, 3, 1, 2, 4])?.reshape(vec![lw * la, dy, rw * ra])
        })
        .collect::<Result<Vec<_>>>()?;
    Mps::new(sites)
}

/// Bond-1 MPS of a Kronecker product.
pub fn mps_from_product(states: &[Vec<C64>]) -> Result<Mps> {
    let sites = states
        .iter()
        .map(|v| {
            if v.is_empty() {
                return Err(Error::Validation("empty local state".into()));
            }
            DenseTensor::new(vec![1, v.len(), 1], v.clone())
        })
        .collect::<Result<Vec<_>>>()?;
    Mps::new(sites)
}

fn left_canonicalize(sites: &mut [DenseTensor]) {
    for k in 0..sites.len().saturating_sub(1) {
        let s = sites[k].shape().to_vec();
        let m = sites[k].to_matrix(2);
        let qr = m.qr();
        let q = qr.q();
        let r = qr.r();
        let chi = q.ncols();
        sites[k] = DenseTensor::from_matrix(&q)
            .reshape(vec![s[0], s[1], chi])
            .expect("QR shape");
        let next = &sites[k + 1];
        let ns = next.shape().to_vec();
        let merged = r * next.to_matrix(1);
        let mut shape = ns.clone();
        shape[0] = chi;
        sites[k + 1] = DenseTensor::from_matrix(&merged).reshape(shape).expect("QR shape");
    }
}

fn right_canonicalize(sites: &mut [DenseTensor]) {
    for k in (1..sites.len()).rev() {
        let s = sites[k].shape().to_vec();
        let rank = s.len();
        // LQ of the (left × rest) matrix via QR of its adjoint
        let m = sites[k].to_matrix(1);
        let qr = m.adjoint().qr();
        let q = qr.q().adjoint();
        let l = qr.r().adjoint();
        let chi = q.nrows();
        let mut shape = s.clone();
        shape[0] = chi;
        sites[k] = DenseTensor::from_matrix(&q).reshape(shape).expect("LQ shape");
        let prev = &sites[k - 1];
        let ps = prev.shape().to_vec();
        let merged = prev.to_matrix(rank - 1) * l;
        let mut shape = ps;
        shape[rank - 1] = chi;
        sites[k - 1] = DenseTensor::from_matrix(&merged).reshape(shape).expect("LQ shape");
    }
}

/// Two-pass compression: left canonicalization, then a right-to-left sweep
/// of truncated SVDs. Returns the compressed state and the total discarded
/// weight, which equals the squared 2-norm error.
pub fn compress_mps(s: &Mps, max_bond: usize, cutoff: f64) -> Result<(Mps, f64)> {
    if max_bond == 0 {
        return Err(Error::Validation("max_bond must be at least 1".into()));
    }
    let mut sites = s.sites.clone();
    left_canonicalize(&mut sites);
    let mut discarded = 0.0;
    for k in (1..sites.len()).rev() {
        let sh = sites[k].shape().to_vec();
        let m = sites[k].to_matrix(1);
        let svd = svd_truncate(&m, max_bond, cutoff)?;
        discarded += svd.discarded_weight;
        let chi = svd.rank();
        sites[k] = DenseTensor::from_matrix(&svd.v.adjoint()).reshape(vec![chi, sh[1], sh[2]])?;
        let mut us = svd.u;
        for (j, &sj) in svd.s.iter().enumerate() {
            us.column_mut(j).scale_mut(sj);
        }
        let ps = sites[k - 1].shape().to_vec();
        let merged = sites[k - 1].to_matrix(2) * us;
        sites[k - 1] = DenseTensor::from_matrix(&merged).reshape(vec![ps[0], ps[1], chi])?;
    }
    Ok((Mps::new(sites)?, discarded))
}

/// MPO compression through the fused-leg MPS.
pub fn compress_mpo(o: &Mpo, max_bond: usize, cutoff: f64) -> Result<(Mpo, f64)> {
    let (c, w) = compress_mps(&o.to_fused_mps(), max_bond, cutoff)?;
    Ok((Mpo::from_fused_mps(c, &o.input_dims(), &o.output_dims()), w))
}
