//! Dense multilinear algebra: colexicographic index ranking, flattenings,
//! Tucker maps, Kronecker lifting, norms and HOSVD.
//!
//! All tensors are stored in a single contiguous buffer in colexicographic
//! order (the first index varies fastest), so `vec` is the identity on the
//! buffer and the mode-1 matricization is a plain column-major reshape.

use nalgebra::{DMatrix, DMatrixView, DMatrixViewMut, DVector};
use rand::Rng;
use rand_chacha::{rand_core::SeedableRng, ChaCha8Rng};

use crate::error::{Result, TpcaError};

/// Largest admissible number of entries for a single tensor.
pub const MAX_ENTRIES: usize = 1 << 31;

/// Dimensions (n_1, ..., n_r) of an order-r tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shape {
    dims: Vec<usize>,
}

impl Shape {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.is_empty() {
            return Err(TpcaError::validation("shape must have order >= 1"));
        }
        let mut product: usize = 1;
        for &d in &dims {
            if d == 0 {
                return Err(TpcaError::validation("shape dimensions must be >= 1"));
            }
            product = product
                .checked_mul(d)
                .filter(|&p| p <= MAX_ENTRIES)
                .ok_or_else(|| {
                    TpcaError::validation(format!(
                        "shape product overflows the {} entry cap",
                        MAX_ENTRIES
                    ))
                })?;
        }
        Ok(Shape { dims })
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    /// Total number of entries.
    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Colexicographic rank of a 1-based multi-index: 1 + sum (i_k - 1) prod_{l<k} n_l.
    pub fn colex_rank(&self, index: &[usize]) -> Result<usize> {
        if index.len() != self.order() {
            return Err(TpcaError::validation(format!(
                "index of length {} for order-{} shape",
                index.len(),
                self.order()
            )));
        }
        let mut rank = 0usize;
        let mut stride = 1usize;
        for (k, (&i, &n)) in index.iter().zip(&self.dims).enumerate() {
            if i < 1 || i > n {
                return Err(TpcaError::validation(format!(
                    "index {} out of range [1, {}] at mode {}",
                    i,
                    n,
                    k + 1
                )));
            }
            rank += (i - 1) * stride;
            stride *= n;
        }
        Ok(rank + 1)
    }

    /// Inverse of `colex_rank` (1-based in both directions).
    pub fn colex_unrank(&self, rank: usize) -> Result<Vec<usize>> {
        if rank < 1 || rank > self.len() {
            return Err(TpcaError::validation(format!(
                "rank {} out of range [1, {}]",
                rank,
                self.len()
            )));
        }
        let mut rem = rank - 1;
        let mut index = Vec::with_capacity(self.order());
        for &n in &self.dims {
            index.push(rem % n + 1);
            rem /= n;
        }
        Ok(index)
    }
}

/// An order-r real tensor with colexicographically ordered storage.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: Shape,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(TpcaError::validation(format!(
                "buffer length {} does not match shape product {}",
                data.len(),
                shape.len()
            )));
        }
        Ok(DenseTensor { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        let len = shape.len();
        DenseTensor {
            shape,
            data: vec![0.0; len],
        }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Entry at a 1-based multi-index.
    pub fn entry(&self, index: &[usize]) -> Result<f64> {
        Ok(self.data[self.shape.colex_rank(index)? - 1])
    }

    pub fn set_entry(&mut self, index: &[usize], value: f64) -> Result<()> {
        let rank = self.shape.colex_rank(index)?;
        self.data[rank - 1] = value;
        Ok(())
    }

    /// vec(T): the flattened buffer as a column vector.
    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.data)
    }

    /// unvec: rebuild a tensor from its flattened form.
    pub fn from_vector(v: &[f64], shape: Shape) -> Result<Self> {
        DenseTensor::new(shape, v.to_vec())
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn inner(&self, other: &DenseTensor) -> Result<f64> {
        if self.shape != other.shape {
            return Err(TpcaError::validation("inner product shape mismatch"));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a * b)
            .sum())
    }

    pub fn scale(&mut self, c: f64) {
        for x in &mut self.data {
            *x *= c;
        }
    }

    /// self += c * other.
    pub fn axpy(&mut self, c: f64, other: &DenseTensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(TpcaError::validation("axpy shape mismatch"));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += c * b;
        }
        Ok(())
    }

    /// Rank-one tensor v_1 ⊗ ... ⊗ v_r.
    pub fn rank_one(vectors: &[DVector<f64>]) -> Result<Self> {
        let dims: Vec<usize> = vectors.iter().map(|v| v.len()).collect();
        let shape = Shape::new(dims)?;
        let mut out = vec![0.0; shape.len()];
        for (lin, slot) in out.iter_mut().enumerate() {
            let mut rem = lin;
            let mut val = 1.0;
            for v in vectors {
                val *= v[rem % v.len()];
                rem /= v.len();
            }
            *slot = val;
        }
        DenseTensor::new(shape, out)
    }

    /// Mode-k matricization (k is 1-based): an n_k x prod_{l != k} n_l matrix
    /// whose columns are mode-k fibers in colexicographic order of the
    /// remaining indices.
    pub fn mode_matricize(&self, k: usize) -> Result<DMatrix<f64>> {
        let r = self.shape.order();
        if k < 1 || k > r {
            return Err(TpcaError::validation(format!(
                "mode {} out of range [1, {}]",
                k, r
            )));
        }
        let k = k - 1;
        let dims = self.shape.dims();
        let n_k = dims[k];
        let left: usize = dims[..k].iter().product();
        let right: usize = dims[k + 1..].iter().product();
        let mut out = DMatrix::<f64>::zeros(n_k, left * right);
        for ir in 0..right {
            for i in 0..n_k {
                for il in 0..left {
                    out[(i, il + left * ir)] = self.data[il + left * (i + n_k * ir)];
                }
            }
        }
        Ok(out)
    }

    /// Inverse of `mode_matricize` for a known shape.
    pub fn from_mode_matricization(m: &DMatrix<f64>, shape: Shape, k: usize) -> Result<Self> {
        let r = shape.order();
        if k < 1 || k > r {
            return Err(TpcaError::validation("bad mode index"));
        }
        let k = k - 1;
        let dims = shape.dims().to_vec();
        let n_k = dims[k];
        let left: usize = dims[..k].iter().product();
        let right: usize = dims[k + 1..].iter().product();
        if m.nrows() != n_k || m.ncols() != left * right {
            return Err(TpcaError::validation("matricization size mismatch"));
        }
        let mut data = vec![0.0; shape.len()];
        for ir in 0..right {
            for i in 0..n_k {
                for il in 0..left {
                    data[il + left * (i + n_k * ir)] = m[(i, il + left * ir)];
                }
            }
        }
        DenseTensor::new(shape, data)
    }

    /// Replace each mode-`k` fiber v (1-based mode) by wᵀv, changing the mode
    /// size from n_k to w.ncols(). This is the single-mode building block of a
    /// Tucker contraction and avoids materializing identity factors on the
    /// untouched modes.
    pub fn mode_multiply(&self, k: usize, w: &DMatrix<f64>) -> Result<DenseTensor> {
        let r = self.shape.order();
        if k < 1 || k > r {
            return Err(TpcaError::validation("bad mode index"));
        }
        let dims = self.shape.dims();
        if w.nrows() != dims[k - 1] {
            return Err(TpcaError::validation(format!(
                "mode_multiply: matrix has {} rows, mode {} has size {}",
                w.nrows(),
                k,
                dims[k - 1]
            )));
        }
        let data = mode_multiply_raw(&self.data, dims, k - 1, w.as_view());
        let mut out_dims = dims.to_vec();
        out_dims[k - 1] = w.ncols();
        DenseTensor::new(Shape::new(out_dims)?, data)
    }
}

/// Multiply mode `k` (0-based) of a colex buffer by `w` on the right of each
/// (left x dim_k) block: out_block = in_block * w. Returns the new buffer; the
/// caller updates dims[k] = w.ncols().
fn mode_multiply_raw(data: &[f64], dims: &[usize], k: usize, w: DMatrixView<f64>) -> Vec<f64> {
    let n_k = dims[k];
    debug_assert_eq!(w.nrows(), n_k);
    let p = w.ncols();
    let left: usize = dims[..k].iter().product();
    let right: usize = dims[k + 1..].iter().product();
    let mut out = vec![0.0; left * p * right];
    if left == 1 {
        // First mode: the colex buffer is an n_k × right matrix; one gemm
        // instead of `right` vector products.
        let in_mat = DMatrixView::from_slice(data, n_k, right);
        let mut out_mat = DMatrixViewMut::from_slice(&mut out, p, right);
        out_mat.gemm_tr(1.0, &w, &in_mat, 0.0);
    } else if right == 1 {
        let in_mat = DMatrixView::from_slice(data, left, n_k);
        let mut out_mat = DMatrixViewMut::from_slice(&mut out, left, p);
        out_mat.gemm(1.0, &in_mat, &w, 0.0);
    } else {
        for ir in 0..right {
            let in_block =
                DMatrixView::from_slice(&data[ir * left * n_k..(ir + 1) * left * n_k], left, n_k);
            let mut out_block =
                DMatrixViewMut::from_slice(&mut out[ir * left * p..(ir + 1) * left * p], left, p);
            out_block.gemm(1.0, &in_block, &w, 0.0);
        }
    }
    out
}

/// An ordered list of factor matrices A_k (n_k x m_k) defining the Tucker map
/// T -> (A_1, ..., A_r) . T from R^{m_1 x ... x m_r} to R^{n_1 x ... x n_r}.
#[derive(Debug, Clone, PartialEq)]
pub struct TuckerFactors {
    factors: Vec<DMatrix<f64>>,
}

impl TuckerFactors {
    pub fn new(factors: Vec<DMatrix<f64>>) -> Result<Self> {
        if factors.is_empty() {
            return Err(TpcaError::validation("at least one factor required"));
        }
        // Validate the shapes are representable.
        Shape::new(factors.iter().map(|a| a.nrows()).collect())?;
        Shape::new(factors.iter().map(|a| a.ncols()).collect())?;
        Ok(TuckerFactors { factors })
    }

    pub fn order(&self) -> usize {
        self.factors.len()
    }

    pub fn factors(&self) -> &[DMatrix<f64>] {
        &self.factors
    }

    pub fn factor(&self, k: usize) -> &DMatrix<f64> {
        &self.factors[k]
    }

    pub fn input_shape(&self) -> Shape {
        Shape::new(self.factors.iter().map(|a| a.ncols()).collect()).expect("validated")
    }

    pub fn output_shape(&self) -> Shape {
        Shape::new(self.factors.iter().map(|a| a.nrows()).collect()).expect("validated")
    }

    /// Apply the Tucker map (or its adjoint A^T . T when `adjoint`).
    pub fn apply(&self, t: &DenseTensor, adjoint: bool) -> Result<DenseTensor> {
        let expect = if adjoint {
            self.output_shape()
        } else {
            self.input_shape()
        };
        if t.shape() != &expect {
            return Err(TpcaError::validation(format!(
                "tucker_apply shape mismatch: got {:?}, expected {:?}",
                t.shape().dims(),
                expect.dims()
            )));
        }
        let mut data = t.data().to_vec();
        let mut dims = t.shape().dims().to_vec();
        for (k, a) in self.factors.iter().enumerate() {
            // Forward: out_block = in_block * A^T; adjoint: out_block = in_block * A.
            let w = if adjoint { a.clone() } else { a.transpose() };
            data = mode_multiply_raw(&data, &dims, k, w.as_view());
            dims[k] = w.ncols();
        }
        DenseTensor::new(Shape::new(dims)?, data)
    }

    /// mat of the Tucker map: A_r (x)_K ... (x)_K A_1 (matrix Kronecker product).
    pub fn mat(&self) -> DMatrix<f64> {
        let mut acc = self.factors[self.order() - 1].clone();
        for k in (0..self.order() - 1).rev() {
            acc = kron_mat(&acc, &self.factors[k]);
        }
        acc
    }

    /// Operator norm of the Tucker map: prod_k ||A_k||_2.
    pub fn spectral_norm(&self) -> f64 {
        self.factors
            .iter()
            .map(|a| a.clone().svd(false, false).singular_values[0])
            .product()
    }
}

/// Standard matrix Kronecker product X (x) Y.
pub fn kron_mat(x: &DMatrix<f64>, y: &DMatrix<f64>) -> DMatrix<f64> {
    let (p, q) = (y.nrows(), y.ncols());
    let mut out = DMatrix::<f64>::zeros(x.nrows() * p, x.ncols() * q);
    for jx in 0..x.ncols() {
        for ix in 0..x.nrows() {
            let v = x[(ix, jx)];
            if v != 0.0 {
                out.view_mut((ix * p, jx * q), (p, q))
                    .copy_from(&(y * v));
            }
        }
    }
    out
}

/// Kronecker product between same-order tensors: the output has mode sizes
/// n_k * m_k and entry [A (x)_K B] at the paired index (j_k, i_k) equal to
/// A_{i_1..i_r} B_{j_1..j_r} (B's index varies fastest within each mode).
pub fn kron_tensor(a: &DenseTensor, b: &DenseTensor) -> Result<DenseTensor> {
    if a.shape().order() != b.shape().order() {
        return Err(TpcaError::validation("kron_tensor order mismatch"));
    }
    let na = a.shape().dims();
    let mb = b.shape().dims();
    let dims: Vec<usize> = na.iter().zip(mb).map(|(&n, &m)| n * m).collect();
    let shape = Shape::new(dims.clone())?;
    let mut out = vec![0.0; shape.len()];
    for (lin, slot) in out.iter_mut().enumerate() {
        let mut rem = lin;
        let mut ai = 0usize;
        let mut bi = 0usize;
        let mut astride = 1usize;
        let mut bstride = 1usize;
        for k in 0..dims.len() {
            let c = rem % dims[k];
            rem /= dims[k];
            let j = c % mb[k];
            let i = c / mb[k];
            ai += i * astride;
            bi += j * bstride;
            astride *= na[k];
            bstride *= mb[k];
        }
        *slot = a.data()[ai] * b.data()[bi];
    }
    DenseTensor::new(shape, out)
}

/// An explicit linear operator from U = R^{m_1 x ... x m_r} to
/// V = R^{n_1 x ... x n_r}, stored as the order-2r coefficient tensor with
/// dims (n_1, ..., n_r, m_1, ..., m_r).
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorTensor {
    output_shape: Shape,
    input_shape: Shape,
    coeffs: DenseTensor,
}

impl OperatorTensor {
    pub fn new(output_shape: Shape, input_shape: Shape, coeffs: DenseTensor) -> Result<Self> {
        if output_shape.order() != input_shape.order() {
            return Err(TpcaError::validation("operator order mismatch"));
        }
        let mut dims = output_shape.dims().to_vec();
        dims.extend_from_slice(input_shape.dims());
        if coeffs.shape().dims() != dims.as_slice() {
            return Err(TpcaError::validation(
                "operator coefficient tensor has wrong shape",
            ));
        }
        Ok(OperatorTensor {
            output_shape,
            input_shape,
            coeffs,
        })
    }

    /// Build from a dense matricization (n x m, colex on both sides).
    pub fn from_mat(mat: &DMatrix<f64>, output_shape: Shape, input_shape: Shape) -> Result<Self> {
        if mat.nrows() != output_shape.len() || mat.ncols() != input_shape.len() {
            return Err(TpcaError::validation("operator matrix size mismatch"));
        }
        let mut dims = output_shape.dims().to_vec();
        dims.extend_from_slice(input_shape.dims());
        let coeffs = DenseTensor::new(Shape::new(dims)?, mat.as_slice().to_vec())?;
        OperatorTensor::new(output_shape, input_shape, coeffs)
    }

    /// Build the operator tensor of a Tucker map.
    pub fn from_tucker(f: &TuckerFactors) -> Result<Self> {
        OperatorTensor::from_mat(&f.mat(), f.output_shape(), f.input_shape())
    }

    pub fn output_shape(&self) -> &Shape {
        &self.output_shape
    }

    pub fn input_shape(&self) -> &Shape {
        &self.input_shape
    }

    pub fn coeffs(&self) -> &DenseTensor {
        &self.coeffs
    }

    pub fn order(&self) -> usize {
        self.output_shape.order()
    }

    /// mat(F): since the 2r-tensor is colex over (outputs, inputs), this is a
    /// column-major reshape of the buffer into an n x m matrix.
    pub fn mat(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(
            self.output_shape.len(),
            self.input_shape.len(),
            self.coeffs.data(),
        )
    }

    pub fn apply(&self, s: &DenseTensor) -> Result<DenseTensor> {
        if s.shape() != &self.input_shape {
            return Err(TpcaError::validation("operator apply shape mismatch"));
        }
        let v = self.mat() * s.to_vector();
        DenseTensor::from_vector(v.as_slice(), self.output_shape.clone())
    }

    /// pair(F): reshape to (n_1 m_1, ..., n_r m_r) pairing the k-th input and
    /// output indices, with the output index varying fastest in each pair.
    pub fn pair(&self) -> Result<DenseTensor> {
        let r = self.order();
        let n = self.output_shape.dims();
        let m = self.input_shape.dims();
        let dims: Vec<usize> = n.iter().zip(m).map(|(&a, &b)| a * b).collect();
        let shape = Shape::new(dims.clone())?;
        let mut out = vec![0.0; shape.len()];
        let src = self.coeffs.data();
        for (lin, &val) in src.iter().enumerate() {
            // lin is colex over (i_1..i_r, j_1..j_r).
            let mut rem = lin;
            let mut i_idx = vec![0usize; r];
            let mut j_idx = vec![0usize; r];
            for k in 0..r {
                i_idx[k] = rem % n[k];
                rem /= n[k];
            }
            for k in 0..r {
                j_idx[k] = rem % m[k];
                rem /= m[k];
            }
            let mut pos = 0usize;
            let mut stride = 1usize;
            for k in 0..r {
                pos += (i_idx[k] + j_idx[k] * n[k]) * stride;
                stride *= dims[k];
            }
            out[pos] = val;
        }
        DenseTensor::new(shape, out)
    }
}

/// pair of a Tucker map as its rank-one decomposition: (vec(A_1), ..., vec(A_r)).
/// The outer product of these vectors equals `OperatorTensor::from_tucker(f).pair()`.
pub fn pair_of_tucker(f: &TuckerFactors) -> Vec<DVector<f64>> {
    f.factors()
        .iter()
        .map(|a| DVector::from_column_slice(a.as_slice()))
        .collect()
}

/// Contract the given modes of a tensor with vectors, leaving the rest.
/// `assignments[k]` is `Some(v)` to contract mode k (0-based) with v.
pub fn contract_modes(t: &DenseTensor, assignments: &[Option<&[f64]>]) -> Result<DenseTensor> {
    if assignments.len() != t.shape().order() {
        return Err(TpcaError::validation("contract_modes arity mismatch"));
    }
    let mut data = t.data().to_vec();
    let mut dims = t.shape().dims().to_vec();
    for (k, a) in assignments.iter().enumerate() {
        if let Some(v) = a {
            if v.len() != dims[k] {
                return Err(TpcaError::validation("contraction vector length mismatch"));
            }
            let w = DMatrixView::from_slice(v, v.len(), 1);
            data = mode_multiply_raw(&data, &dims, k, w);
            dims[k] = 1;
        }
    }
    DenseTensor::new(Shape::new(dims)?, data)
}

/// Options for the multilinear-norm lower-bound search.
#[derive(Debug, Clone)]
pub struct MlNormOptions {
    pub restarts: usize,
    pub tol: f64,
    pub max_sweeps: usize,
    pub seed: u64,
    /// Refuse operators with more coefficient entries than this.
    pub entry_cap: usize,
}

impl Default for MlNormOptions {
    fn default() -> Self {
        MlNormOptions {
            restarts: 32,
            tol: 1e-10,
            max_sweeps: 500,
            seed: 0,
            entry_cap: 1 << 22,
        }
    }
}

/// Multi-start alternating maximization of <F(u_1 ⊗ ... ⊗ u_r), v_1 ⊗ ... ⊗ v_r>
/// over unit vectors. Returns a certified lower bound for ||F||_ml (each block
/// update is exact, so every reported value is attained by some rank-one pair).
pub fn ml_norm_estimate(op: &OperatorTensor, opts: &MlNormOptions) -> Result<f64> {
    if op.coeffs().shape().len() > opts.entry_cap {
        return Err(TpcaError::validation(format!(
            "operator has {} entries, over the ml-norm cap {}",
            op.coeffs().shape().len(),
            opts.entry_cap
        )));
    }
    if opts.restarts == 0 {
        return Err(TpcaError::validation("ml_norm_estimate needs restarts >= 1"));
    }
    let r = op.order();
    let n = op.output_shape().dims().to_vec();
    let m = op.input_shape().dims().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best = 0.0f64;

    for _ in 0..opts.restarts {
        // Unit vectors: v side first (output modes 0..r), then u side (input modes r..2r).
        let mut vs: Vec<Vec<f64>> = n.iter().map(|&d| random_unit(&mut rng, d)).collect();
        let mut us: Vec<Vec<f64>> = m.iter().map(|&d| random_unit(&mut rng, d)).collect();
        let mut value = f64::NEG_INFINITY;
        for _ in 0..opts.max_sweeps {
            let mut current = 0.0;
            for k in 0..r {
                // Gradient w.r.t. v_k: contract everything except output mode k.
                let mut assign: Vec<Option<&[f64]>> = Vec::with_capacity(2 * r);
                for (j, v) in vs.iter().enumerate() {
                    assign.push(if j == k { None } else { Some(v.as_slice()) });
                }
                for u in &us {
                    assign.push(Some(u.as_slice()));
                }
                let grad = contract_modes(op.coeffs(), &assign)?;
                current = update_block(&mut vs[k], grad.data(), &mut rng);
            }
            for k in 0..r {
                let mut assign: Vec<Option<&[f64]>> = Vec::with_capacity(2 * r);
                for v in &vs {
                    assign.push(Some(v.as_slice()));
                }
                for (j, u) in us.iter().enumerate() {
                    assign.push(if j == k { None } else { Some(u.as_slice()) });
                }
                let grad = contract_modes(op.coeffs(), &assign)?;
                current = update_block(&mut us[k], grad.data(), &mut rng);
            }
            if (current - value).abs() <= opts.tol * current.abs().max(1.0) {
                value = current;
                break;
            }
            value = current;
        }
        best = best.max(value);
    }
    Ok(best)
}

fn random_unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d)
            .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn update_block(block: &mut [f64], grad: &[f64], rng: &mut ChaCha8Rng) -> f64 {
    let norm = grad.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm <= 1e-300 {
        // Stuck at a zero gradient; re-randomize the block.
        let fresh = random_unit(rng, block.len());
        block.copy_from_slice(&fresh);
        return 0.0;
    }
    for (b, g) in block.iter_mut().zip(grad) {
        *b = g / norm;
    }
    norm
}

/// Symmetric eigendecomposition with eigenvalues sorted nonincreasing and a
/// deterministic sign/tie convention: each eigenvector's largest-magnitude
/// entry (first such, scanning from index 0) is made positive; equal
/// eigenvalues are ordered by lexicographic comparison of the sign-fixed
/// eigenvectors.
pub fn sym_eig_desc(mat: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = mat.nrows();
    let sym = (mat + mat.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut cols: Vec<(f64, Vec<f64>)> = (0..n)
        .map(|j| {
            let mut col: Vec<f64> = eig.eigenvectors.column(j).iter().copied().collect();
            fix_sign(&mut col);
            (eig.eigenvalues[j], col)
        })
        .collect();
    cols.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap()
            .then_with(|| a.1.partial_cmp(&b.1).unwrap())
    });
    let values: Vec<f64> = cols.iter().map(|c| c.0).collect();
    let mut vectors = DMatrix::<f64>::zeros(n, n);
    for (j, (_, col)) in cols.iter().enumerate() {
        for (i, &x) in col.iter().enumerate() {
            vectors[(i, j)] = x;
        }
    }
    (values, vectors)
}

pub(crate) fn fix_sign(col: &mut [f64]) {
    let mut lead = 0.0f64;
    let mut lead_val = 0.0f64;
    for &x in col.iter() {
        if x.abs() > lead {
            lead = x.abs();
            lead_val = x;
        }
    }
    if lead_val < 0.0 {
        for x in col.iter_mut() {
            *x = -*x;
        }
    }
}

/// Classical truncated higher-order SVD: A_k holds the top-m_k left singular
/// vectors of the mode-k matricization (computed through the mode-k Gram
/// matrix), and the core is A^T . T.
pub fn hosvd(t: &DenseTensor, ranks: &[usize]) -> Result<(TuckerFactors, DenseTensor)> {
    let r = t.shape().order();
    if ranks.len() != r {
        return Err(TpcaError::validation("hosvd rank arity mismatch"));
    }
    let mut factors = Vec::with_capacity(r);
    for (k, (&m_k, &n_k)) in ranks.iter().zip(t.shape().dims()).enumerate() {
        if m_k == 0 || m_k > n_k {
            return Err(TpcaError::validation(format!(
                "hosvd rank {} invalid for mode {} of size {}",
                m_k,
                k + 1,
                n_k
            )));
        }
        let unfold = t.mode_matricize(k + 1)?;
        let gram = &unfold * unfold.transpose();
        let (_, vecs) = sym_eig_desc(&gram);
        factors.push(vecs.columns(0, m_k).into_owned());
    }
    let f = TuckerFactors::new(factors)?;
    let core = f.apply(t, true)?;
    Ok((f, core))
}

/// Tail-energy bound for a truncated HOSVD: the squared reconstruction error
/// is at most the sum over modes of the discarded squared singular values.
pub fn hosvd_tail_energy(t: &DenseTensor, ranks: &[usize]) -> Result<f64> {
    let mut total = 0.0;
    for (k, &m_k) in ranks.iter().enumerate() {
        let unfold = t.mode_matricize(k + 1)?;
        let gram = &unfold * unfold.transpose();
        let (vals, _) = sym_eig_desc(&gram);
        total += vals.iter().skip(m_k).map(|&v| v.max(0.0)).sum::<f64>();
    }
    Ok(total)
}
