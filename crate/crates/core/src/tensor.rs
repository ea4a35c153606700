//! Dense complex tensor algebra.
//!
//! [`DenseTensor`] stores its entries row-major: the first axis is the
//! slowest-varying one. Matrix kernels (SVD, Hermitian eigendecomposition,
//! Cholesky) are delegated to `nalgebra`; the matrix exponential is a
//! scaling-and-squaring Taylor scheme.

use nalgebra::{DMatrix, DMatrixView};

use crate::{Error, Result, C64};

/// Arbitrary-rank complex array, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<C64>,
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, data: Vec<C64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::Shape(format!("zero-length axis in {shape:?}")));
        }
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {len} entries, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![C64::new(0.0, 0.0); len],
        }
    }

    pub fn scalar(value: C64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// Rank-2 tensor holding the entries of `m`.
    pub fn from_matrix(m: &DMatrix<C64>) -> Self {
        let (r, c) = m.shape();
        // nalgebra is column-major; the transpose's storage is our row-major order.
        let data = m.transpose().as_slice().to_vec();
        Self {
            shape: vec![r, c],
            data,
        }
    }

    pub fn from_vector(v: &[C64]) -> Self {
        Self {
            shape: vec![v.len()],
            data: v.to_vec(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<C64> {
        self.data
    }

    fn offset(&self, index: &[usize]) -> usize {
        index.iter().zip(&self.shape).fold(0, |acc, (&i, &d)| acc * d + i)
    }

    pub fn get(&self, index: &[usize]) -> C64 {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: C64) {
        let k = self.offset(index);
        self.data[k] = value;
    }

    /// Reinterprets the data under a new shape; entries are untouched.
    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    /// Reorders axes so that new axis `k` is old axis `perm[k]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::Shape(format!("{perm:?} is not a permutation of {rank} axes")));
        }
        if perm.iter().enumerate().all(|(k, &p)| k == p) {
            return Ok(self.clone());
        }
        let old_strides = strides(&self.shape);
        let new_shape: Vec<usize> = perm.iter().map(|&p| self.shape[p]).collect();
        let step: Vec<usize> = perm.iter().map(|&p| old_strides[p]).collect();
        let mut data = Vec::with_capacity(self.data.len());
        let mut idx = vec![0usize; rank];
        let mut off = 0usize;
        for _ in 0..self.data.len() {
            data.push(self.data[off]);
            // odometer increment over the new shape, tracking the old offset
            for ax in (0..rank).rev() {
                idx[ax] += 1;
                off += step[ax];
                if idx[ax] < new_shape[ax] {
                    break;
                }
                off -= step[ax] * new_shape[ax];
                idx[ax] = 0;
            }
        }
        Ok(Self { shape: new_shape, data })
    }

    /// Views the tensor as a matrix whose rows are the first `row_axes` axes.
    pub fn to_matrix(&self, row_axes: usize) -> DMatrix<C64> {
        let rows: usize = self.shape[..row_axes].iter().product();
        let cols = self.data.len() / rows;
        DMatrixView::from_slice(&self.data, cols, rows).transpose()
    }

    pub fn conj(&self) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|z| z.conj()).collect(),
        }
    }

    pub fn scale(&self, alpha: C64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|z| z * alpha).collect(),
        }
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.is_finite())
    }
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for k in (0..shape.len().saturating_sub(1)).rev() {
        s[k] = s[k + 1] * shape[k + 1];
    }
    s
}

/// `c ← c + a · b` on complex buffers with explicit strides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn zgemm_acc(
    m: usize,
    k: usize,
    n: usize,
    a: &[C64],
    rsa: usize,
    csa: usize,
    b: &[C64],
    rsb: usize,
    csb: usize,
    c: &mut [C64],
    rsc: usize,
    csc: usize,
) {
    if m == 0 || k == 0 || n == 0 {
        return;
    }
    assert!((m - 1) * rsa + (k - 1) * csa < a.len());
    assert!((k - 1) * rsb + (n - 1) * csb < b.len());
    assert!((m - 1) * rsc + (n - 1) * csc < c.len());
    // SAFETY: Complex<f64> is repr(C) with layout [re, im]; the asserts keep
    // every strided access inside the slices.
    unsafe {
        matrixmultiply::zgemm(
            matrixmultiply::CGemmOption::Standard,
            matrixmultiply::CGemmOption::Standard,
            m,
            k,
            n,
            [1.0, 0.0],
            a.as_ptr() as *const [f64; 2],
            rsa as isize,
            csa as isize,
            b.as_ptr() as *const [f64; 2],
            rsb as isize,
            csb as isize,
            [1.0, 0.0],
            c.as_mut_ptr() as *mut [f64; 2],
            rsc as isize,
            csc as isize,
        );
    }
}

/// Sums over paired axes. The result carries the unpaired axes of `a`
/// followed by the unpaired axes of `b`, each in original order. A full
/// contraction yields a scalar of shape `[1]`.
pub fn contract(a: &DenseTensor, b: &DenseTensor, pairs: &[(usize, usize)]) -> Result<DenseTensor> {
    let mut used_a = vec![false; a.rank()];
    let mut used_b = vec![false; b.rank()];
    for &(ia, ib) in pairs {
        if ia >= a.rank() || ib >= b.rank() {
            return Err(Error::Shape(format!(
                "pair ({ia}, {ib}) out of range for ranks {} and {}",
                a.rank(),
                b.rank()
            )));
        }
        if used_a[ia] || used_b[ib] {
            return Err(Error::Shape(format!("axis repeated in pairs {pairs:?}")));
        }
        if a.shape[ia] != b.shape[ib] {
            return Err(Error::Shape(format!(
                "cannot contract axis {ia} (len {}) with axis {ib} (len {})",
                a.shape[ia], b.shape[ib]
            )));
        }
        used_a[ia] = true;
        used_b[ib] = true;
    }
    let free_a: Vec<usize> = (0..a.rank()).filter(|&k| !used_a[k]).collect();
    let free_b: Vec<usize> = (0..b.rank()).filter(|&k| !used_b[k]).collect();

    let perm_a: Vec<usize> = free_a.iter().copied().chain(pairs.iter().map(|p| p.0)).collect();
    let perm_b: Vec<usize> = pairs.iter().map(|p| p.1).chain(free_b.iter().copied()).collect();
    let ap = a.permute(&perm_a)?;
    let bp = b.permute(&perm_b)?;

    let k: usize = pairs.iter().map(|p| a.shape[p.0]).product();
    let m: usize = free_a.iter().map(|&i| a.shape[i]).product();
    let n: usize = free_b.iter().map(|&i| b.shape[i]).product();

    let mut out = vec![C64::new(0.0, 0.0); m * n];
    zgemm_acc(m, k, n, &ap.data, k, 1, &bp.data, n, 1, &mut out, n, 1);

    let mut shape: Vec<usize> = free_a
        .iter()
        .map(|&i| a.shape[i])
        .chain(free_b.iter().map(|&i| b.shape[i]))
        .collect();
    if shape.is_empty() {
        shape.push(1);
    }
    DenseTensor::new(shape, out)
}

/// Output of [`svd_truncate`]: `m ≈ u · diag(s) · vᴴ`.
#[derive(Clone, Debug)]
pub struct SvdResult {
    pub u: DMatrix<C64>,
    pub s: Vec<f64>,
    pub v: DMatrix<C64>,
    /// Sum of squares of the dropped singular values.
    pub discarded_weight: f64,
}

impl SvdResult {
    pub fn rank(&self) -> usize {
        self.s.len()
    }

    pub fn reconstruct(&self) -> DMatrix<C64> {
        let mut us = self.u.clone();
        for (j, &sj) in self.s.iter().enumerate() {
            us.column_mut(j).scale_mut(sj);
        }
        us * self.v.adjoint()
    }
}

/// Truncated SVD keeping at most `max_rank` values and dropping every value
/// below `cutoff` times the largest one. At least one value is always kept.
pub fn svd_truncate(m: &DMatrix<C64>, max_rank: usize, cutoff: f64) -> Result<SvdResult> {
    if max_rank == 0 {
        return Err(Error::Validation("max_rank must be at least 1".into()));
    }
    if cutoff < 0.0 || !cutoff.is_finite() {
        return Err(Error::Validation(format!("invalid cutoff {cutoff}")));
    }
    let (rows, cols) = m.shape();
    if m.iter().any(|z| !z.is_finite()) {
        return Err(Error::Numeric(format!("non-finite entries in {rows}x{cols} matrix")));
    }
    let (u_full, sv, v_full) = thin_svd(m)?;

    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&i, &j| sv[j].total_cmp(&sv[i]));

    let largest = order.first().map_or(0.0, |&i| sv[i]);
    let threshold = cutoff * largest;
    let mut keep = 0;
    for &i in order.iter().take(max_rank) {
        if keep > 0 && sv[i] < threshold {
            break;
        }
        keep += 1;
    }
    let keep = keep.max(1);
    let discarded_weight = order[keep..].iter().map(|&i| sv[i] * sv[i]).sum();

    let mut u = DMatrix::zeros(rows, keep);
    let mut v = DMatrix::zeros(cols, keep);
    let mut s = Vec::with_capacity(keep);
    for (j, &i) in order[..keep].iter().enumerate() {
        u.set_column(j, &u_full.column(i));
        v.set_column(j, &v_full.column(i));
        s.push(sv[i].max(0.0));
    }
    Ok(SvdResult {
        u,
        s,
        v,
        discarded_weight,
    })
}

/// Thin SVD `m = u · diag(s) · vᴴ`, unordered. nalgebra's bidiagonal
/// solver occasionally returns a wrong decomposition on sparse rank-deficient
/// input, so its result is checked and replaced by one-sided Jacobi on failure.
fn thin_svd(m: &DMatrix<C64>) -> Result<(DMatrix<C64>, Vec<f64>, DMatrix<C64>)> {
    let (rows, cols) = m.shape();
    let scale = m.norm();
    if scale == 0.0 {
        let k = rows.min(cols);
        return Ok((DMatrix::identity(rows, k), vec![0.0; k], DMatrix::identity(cols, k)));
    }
    if let Some(svd) = m.clone().try_svd(true, true, 1e-15, 10_000) {
        let u = svd.u.expect("requested U");
        let v = svd.v_t.expect("requested Vᴴ").adjoint();
        let s: Vec<f64> = svd.singular_values.iter().copied().collect();
        let mut us = u.clone();
        for (j, &sj) in s.iter().enumerate() {
            us.column_mut(j).scale_mut(sj);
        }
        if (us * v.adjoint() - m).norm() <= 1e-12 * scale {
            return Ok((u, s, v));
        }
    }
    if rows >= cols {
        jacobi_svd(m.clone())
    } else {
        let (u, s, v) = jacobi_svd(m.adjoint())?;
        Ok((v, s, u))
    }
}

/// One-sided Jacobi on the columns of a tall matrix.
fn jacobi_svd(mut a: DMatrix<C64>) -> Result<(DMatrix<C64>, Vec<f64>, DMatrix<C64>)> {
    let (rows, n) = a.shape();
    let mut v = DMatrix::<C64>::identity(n, n);
    let eps = f64::EPSILON;
    let floor = (eps * a.norm()).powi(2);
    let mut converged = false;
    for _ in 0..80 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = a.column(p).norm_squared();
                let beta = a.column(q).norm_squared();
                let gamma = a.column(p).dotc(&a.column(q));
                let g = gamma.norm();
                if g <= floor || g <= eps * (rows as f64) * alpha.sqrt() * beta.sqrt() {
                    continue;
                }
                rotated = true;
                let phase = gamma / g;
                let zeta = (beta - alpha) / (2.0 * g);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for mat in [&mut a, &mut v] {
                    for i in 0..mat.nrows() {
                        let xp = mat[(i, p)];
                        let xq = mat[(i, q)] * phase.conj();
                        mat[(i, p)] = xp * c - xq * s;
                        mat[(i, q)] = xp * s + xq * c;
                    }
                }
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Numeric(format!(
            "Jacobi SVD did not converge on {rows}x{n} matrix"
        )));
    }
    let s: Vec<f64> = (0..n).map(|j| a.column(j).norm()).collect();
    let smax = s.iter().cloned().fold(0.0, f64::max);
    let mut u = DMatrix::<C64>::zeros(rows, n);
    let mut filled = Vec::with_capacity(n);
    for (j, &sj) in s.iter().enumerate() {
        if sj > eps * smax * (rows as f64) {
            u.set_column(j, &a.column(j).unscale(sj));
            filled.push(j);
        }
    }
    // complete the columns of vanishing singular values by Gram–Schmidt
    let mut seed = 0;
    for j in 0..n {
        if filled.contains(&j) {
            continue;
        }
        loop {
            let mut cand = nalgebra::DVector::<C64>::zeros(rows);
            cand[seed % rows] = C64::new(1.0, 0.0);
            seed += 1;
            for _ in 0..2 {
                for &k in &filled {
                    let proj = u.column(k).dotc(&cand);
                    cand -= u.column(k) * proj;
                }
            }
            let nrm = cand.norm();
            if nrm > 1e-6 {
                u.set_column(j, &cand.unscale(nrm));
                filled.push(j);
                break;
            }
        }
    }
    Ok((u, s, v))
}

/// Eigendecomposition of a Hermitian matrix: eigenvalues ascending and the
/// unitary whose columns are the matching eigenvectors.
pub fn herm_eig(m: &DMatrix<C64>) -> Result<(Vec<f64>, DMatrix<C64>)> {
    if !m.is_square() {
        return Err(Error::Shape(format!(
            "herm_eig needs a square matrix, got {:?}",
            m.shape()
        )));
    }
    let scale = m.norm();
    let skew = (m - m.adjoint()).norm();
    if skew > 1e-8 * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::Validation(format!(
            "matrix is not Hermitian: ‖m − mᴴ‖ = {skew:.3e}, ‖m‖ = {scale:.3e}"
        )));
    }
    let herm = (m + m.adjoint()).scale(0.5);
    let eig = herm.symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(m.nrows(), m.ncols());
    for (j, &i) in order.iter().enumerate() {
        vectors.set_column(j, &eig.eigenvectors.column(i));
    }
    Ok((values, vectors))
}

/// `a · b` through the packed complex GEMM kernel.
pub(crate) fn matmul(a: &DMatrix<C64>, b: &DMatrix<C64>) -> DMatrix<C64> {
    let (m, k) = a.shape();
    let n = b.ncols();
    assert_eq!(k, b.nrows(), "matmul inner dimensions");
    let mut out = DMatrix::zeros(m, n);
    // column-major storage: row stride 1, column stride = rows
    zgemm_acc(
        m,
        k,
        n,
        a.as_slice(),
        1,
        m,
        b.as_slice(),
        1,
        k,
        out.as_mut_slice(),
        1,
        m,
    );
    out
}

/// Matrix exponential by scaling and squaring.
pub fn expm(m: &DMatrix<C64>) -> Result<DMatrix<C64>> {
    if !m.is_square() {
        return Err(Error::Shape(format!("expm needs a square matrix, got {:?}", m.shape())));
    }
    if m.iter().any(|z| !z.is_finite()) {
        return Err(Error::Numeric("expm of non-finite matrix".into()));
    }
    let n = m.nrows();
    let norm1 = (0..n)
        .map(|j| m.column(j).iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max);
    // Scale to ‖A‖₁ ≤ 1/2; at most 20 Taylor terms then give error below 1e-25.
    let squarings = if norm1 > 0.5 {
        (norm1 / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let a = m.scale(0.5f64.powi(squarings));
    let mut result = DMatrix::identity(n, n);
    let mut term = DMatrix::identity(n, n);
    for k in 1..=20 {
        term = matmul(&term, &a).unscale(k as f64);
        result += &term;
        if term.norm() <= 1e-18 * result.norm() {
            break;
        }
    }
    for _ in 0..squarings {
        result = matmul(&result, &result);
    }
    Ok(result)
}
