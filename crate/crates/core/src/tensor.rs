//! Dense K-way tensors, mode-n unfolding and the higher-order SVD.
//!
//! Storage is colexicographic: the first index varies fastest, so the flat
//! buffer of an `n_1 × … × n_K` tensor viewed column-major as an
//! `n_1 × (n_2⋯n_K)` matrix is exactly the mode-0 unfolding. The mode-k
//! unfolding orders its columns by the remaining modes in ascending order,
//! earlier modes varying fastest.
//!
//! Modes are zero-based in this API.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DMatrixView, DMatrixViewMut};
use rayon::prelude::*;

use crate::binio;
use crate::error::{arg_err, Error, Result};
use crate::linalg;
use crate::Matrix;

/// Magic bytes of the tensor file format.
pub const TENSOR_MAGIC: &[u8] = b"TEMU1\n";

/// Gram matrices are used for the mode SVDs up to this mode size.
pub const GRAM_SVD_LIMIT: usize = 2000;

/// How the left singular vectors of an unfolding are computed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ModeSvd {
    /// Householder QR of the transposed unfolding followed by an SVD of the
    /// square triangular factor. Backward stable.
    #[default]
    Qr,
    /// Eigendecomposition of the unfolding's Gram matrix. Cheaper, but
    /// squares the condition number, so small trailing directions lose
    /// accuracy.
    Gram,
}

/// Extend the first `filled` orthonormal columns of `u` to a full
/// orthonormal set by Gram-Schmidt against the unit vectors.
fn complete_orthonormal_basis(u: &mut Matrix, filled: usize) {
    let n = u.nrows();
    let mut col = filled;
    for e in 0..n {
        if col == u.ncols() {
            break;
        }
        let mut v = nalgebra::DVector::<f64>::zeros(n);
        v[e] = 1.0;
        for _ in 0..2 {
            for j in 0..col {
                let proj = u.column(j).dot(&v);
                v.axpy(-proj, &u.column(j), 1.0);
            }
        }
        let norm = v.norm();
        if norm > 1e-8 {
            u.set_column(col, &(v / norm));
            col += 1;
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

/// (product of dims before `mode`, dims[mode], product of dims after `mode`)
fn split_dims(dims: &[usize], mode: usize) -> (usize, usize, usize) {
    let left = dims[..mode].iter().product();
    let right = dims[mode + 1..].iter().product();
    (left, dims[mode], right)
}

fn check_dims(dims: &[usize]) -> Result<usize> {
    if dims.is_empty() {
        return arg_err("a tensor needs at least one mode");
    }
    if let Some(k) = dims.iter().position(|&n| n == 0) {
        return arg_err(format!("mode {k} has zero length"));
    }
    dims.iter()
        .try_fold(1usize, |acc, &n| acc.checked_mul(n))
        .ok_or_else(|| Error::Argument("tensor size overflows".into()))
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let len = check_dims(&dims)?;
        if data.len() != len {
            return arg_err(format!("data length {} does not match dims {:?} (product {len})", data.len(), dims));
        }
        Ok(Tensor { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Result<Self> {
        let len = check_dims(&dims)?;
        Ok(Tensor { dims, data: vec![0.0; len] })
    }

    /// Build a tensor by evaluating `f` at every multi-index.
    pub fn from_fn<F: FnMut(&[usize]) -> f64>(dims: Vec<usize>, mut f: F) -> Result<Self> {
        let len = check_dims(&dims)?;
        let mut idx = vec![0usize; dims.len()];
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(f(&idx));
            for (i, n) in idx.iter_mut().zip(&dims) {
                *i += 1;
                if *i < *n {
                    break;
                }
                *i = 0;
            }
        }
        Ok(Tensor { dims, data })
    }

    /// Order-2 tensor holding a matrix.
    pub fn from_matrix(m: &Matrix) -> Self {
        Tensor { dims: vec![m.nrows(), m.ncols()], data: m.as_slice().to_vec() }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn linear_index(&self, idx: &[usize]) -> Result<usize> {
        if idx.len() != self.dims.len() {
            return arg_err(format!("index of order {} for a tensor of order {}", idx.len(), self.dims.len()));
        }
        let mut lin = 0;
        let mut stride = 1;
        for (k, (&i, &n)) in idx.iter().zip(&self.dims).enumerate() {
            if i >= n {
                return arg_err(format!("index {i} out of range for mode {k} of length {n}"));
            }
            lin += i * stride;
            stride *= n;
        }
        Ok(lin)
    }

    pub fn get(&self, idx: &[usize]) -> Result<f64> {
        Ok(self.data[self.linear_index(idx)?])
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn check_mode(&self, mode: usize) -> Result<()> {
        if mode >= self.order() {
            return arg_err(format!("mode {mode} out of range for a tensor of order {}", self.order()));
        }
        Ok(())
    }

    /// Mode-`mode` unfolding: an `n_mode × ∏_{k≠mode} n_k` matrix.
    pub fn unfold(&self, mode: usize) -> Result<Matrix> {
        self.check_mode(mode)?;
        let (left, n, right) = split_dims(&self.dims, mode);
        let cols = left * right;
        let mut out = Matrix::zeros(n, cols);
        for b in 0..right {
            for i in 0..n {
                let src = left * (i + n * b);
                for a in 0..left {
                    out[(i, a + left * b)] = self.data[src + a];
                }
            }
        }
        Ok(out)
    }

    /// Inverse of [`unfold`](Self::unfold) for a tensor of shape `dims`.
    pub fn fold(m: &Matrix, mode: usize, dims: &[usize]) -> Result<Tensor> {
        let len = check_dims(dims)?;
        if mode >= dims.len() {
            return arg_err(format!("mode {mode} out of range for order {}", dims.len()));
        }
        let (left, n, right) = split_dims(dims, mode);
        if m.nrows() != n || m.ncols() != left * right {
            return arg_err(format!(
                "matrix {}×{} cannot fold into mode {mode} of dims {:?}",
                m.nrows(),
                m.ncols(),
                dims
            ));
        }
        let mut data = vec![0.0; len];
        for b in 0..right {
            for i in 0..n {
                let dst = left * (i + n * b);
                for a in 0..left {
                    data[dst + a] = m[(i, a + left * b)];
                }
            }
        }
        Ok(Tensor { dims: dims.to_vec(), data })
    }

    /// Mode product `t ×_mode m` for `m` of shape `q × n_mode`: every
    /// mode-`mode` fiber `z` is replaced by `m z`.
    pub fn mode_multiply(&self, m: &Matrix, mode: usize) -> Result<Tensor> {
        self.check_mode(mode)?;
        let (left, n, right) = split_dims(&self.dims, mode);
        if m.ncols() != n {
            return arg_err(format!(
                "mode {mode} product: matrix has {} columns but the mode has length {n}",
                m.ncols()
            ));
        }
        let q = m.nrows();
        if q == 0 {
            return arg_err("mode product with a matrix of zero rows");
        }
        let mut dims = self.dims.clone();
        dims[mode] = q;
        let mut data = vec![0.0; left * q * right];
        if left == 1 {
            let a = DMatrixView::from_slice(&self.data, n, right);
            let mut out = DMatrixViewMut::from_slice(&mut data, q, right);
            out.gemm(1.0, m, &a, 0.0);
        } else {
            let mt = m.transpose();
            for (src, dst) in self.data.chunks_exact(left * n).zip(data.chunks_exact_mut(left * q)) {
                let block = DMatrixView::from_slice(src, left, n);
                let mut out = DMatrixViewMut::from_slice(dst, left, q);
                out.gemm(1.0, &block, &mt, 0.0);
            }
        }
        Ok(Tensor { dims, data })
    }

    /// Gram matrix `A Aᵀ` of the mode-`mode` unfolding `A`, without forming `A`.
    pub fn unfolding_gram(&self, mode: usize) -> Result<Matrix> {
        self.check_mode(mode)?;
        let (left, n, right) = split_dims(&self.dims, mode);
        let mut g = Matrix::zeros(n, n);
        if left == 1 {
            let a = DMatrixView::from_slice(&self.data, n, right);
            g.gemm(1.0, &a, &a.transpose(), 0.0);
        } else {
            for src in self.data.chunks_exact(left * n) {
                let block = DMatrixView::from_slice(src, left, n);
                g.gemm_tr(1.0, &block, &block, 1.0);
            }
        }
        Ok(g)
    }

    /// Leading `rank` left singular vectors of the mode-`mode` unfolding,
    /// sign-normalized (largest-magnitude entry positive).
    pub fn mode_singular_vectors(&self, mode: usize, rank: usize) -> Result<Matrix> {
        self.mode_singular_vectors_with(mode, rank, ModeSvd::default())
    }

    pub fn mode_singular_vectors_with(&self, mode: usize, rank: usize, method: ModeSvd) -> Result<Matrix> {
        self.check_mode(mode)?;
        let n = self.dims[mode];
        if rank == 0 || rank > n {
            return arg_err(format!("rank {rank} for mode {mode} must lie in 1..={n}"));
        }
        let non_convergence = || Error::Numerical(format!("SVD did not converge for mode {mode}"));
        let cols = self.len() / n;
        if method == ModeSvd::Gram && n <= GRAM_SVD_LIMIT {
            let gram = self.unfolding_gram(mode)?;
            let (u, _) = linalg::leading_eigenvectors(gram, rank).ok_or_else(non_convergence)?;
            return Ok(u);
        }
        // A = Rᵀ Qᵀ from the QR factorization of Aᵀ; the left singular
        // vectors of A are those of the small square factor Rᵀ.
        let small = if cols > n {
            let at = self.unfold_transposed(mode);
            at.qr().r().transpose()
        } else {
            self.unfold(mode)?
        };
        let svd = nalgebra::SVD::try_new(small, true, false, f64::EPSILON, 0).ok_or_else(non_convergence)?;
        let u_full = svd.u.expect("left vectors requested");
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));
        let mut u = Matrix::zeros(n, rank);
        for (j, &src) in order.iter().take(rank).enumerate() {
            u.set_column(j, &u_full.column(src));
        }
        if rank > order.len() {
            // wide-unfolding case with rank beyond the column count: complete
            // the basis from the orthogonal complement
            complete_orthonormal_basis(&mut u, order.len());
        }
        linalg::fix_column_signs(&mut u);
        Ok(u)
    }

    /// Transpose of the mode-`mode` unfolding.
    fn unfold_transposed(&self, mode: usize) -> Matrix {
        let (left, n, right) = split_dims(&self.dims, mode);
        let mut out = Matrix::zeros(left * right, n);
        for b in 0..right {
            for i in 0..n {
                let src = left * (i + n * b);
                out.column_mut(i).rows_mut(left * b, left).copy_from_slice(&self.data[src..src + left]);
            }
        }
        out
    }

    /// Element-wise difference.
    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        if self.dims != other.dims {
            return arg_err(format!("dims {:?} and {:?} differ", self.dims, other.dims));
        }
        Ok(Tensor { dims: self.dims.clone(), data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect() })
    }

    /// Drop modes of length one, keeping at least one mode.
    pub fn squeeze(mut self) -> Tensor {
        self.dims.retain(|&n| n != 1);
        if self.dims.is_empty() {
            self.dims.push(1);
        }
        self
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(TENSOR_MAGIC)?;
        let dims: Vec<String> = self.dims.iter().map(|n| n.to_string()).collect();
        writeln!(w, "{} {}", self.dims.len(), dims.join(" "))?;
        binio::write_f64s(&mut w, &self.data)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Tensor> {
        binio::expect_magic(&mut r, TENSOR_MAGIC)?;
        let header = binio::read_line(&mut r, 4096)?;
        let fields: Vec<usize> = header
            .split_ascii_whitespace()
            .map(|s| s.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Format(format!("tensor header {header:?}: {e}")))?;
        let (&k, dims) = fields.split_first().ok_or_else(|| Error::Format("empty tensor header".into()))?;
        if dims.len() != k {
            return Err(Error::Format(format!("header declares K = {k} but lists {} dims", dims.len())));
        }
        let len = check_dims(dims).map_err(|e| Error::Format(e.to_string()))?;
        let data = binio::read_f64s(&mut r, len)?;
        Ok(Tensor { dims: dims.to_vec(), data })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Tensor> {
        Tensor::read_from(BufReader::new(File::open(path)?))
    }
}

/// Tucker factors from a (truncated) HOSVD.
#[derive(Clone, Debug, PartialEq)]
pub struct HosvdFactors {
    core: Tensor,
    factors: Vec<Matrix>,
}

impl HosvdFactors {
    /// Assemble factors, checking shapes: factor k must be `n_k × r_k` where
    /// `r_k` is the k-th core dimension.
    pub fn new(core: Tensor, factors: Vec<Matrix>) -> Result<Self> {
        if factors.len() != core.order() {
            return arg_err(format!("{} factors for a core of order {}", factors.len(), core.order()));
        }
        for (k, (f, &r)) in factors.iter().zip(core.dims()).enumerate() {
            if f.ncols() != r || f.nrows() < r {
                return arg_err(format!("factor {k} is {}×{} but core rank is {r}", f.nrows(), f.ncols()));
            }
        }
        Ok(HosvdFactors { core, factors })
    }

    pub fn core(&self) -> &Tensor {
        &self.core
    }

    pub fn factors(&self) -> &[Matrix] {
        &self.factors
    }

    pub fn ranks(&self) -> &[usize] {
        self.core.dims()
    }

    /// Dimensions of the tensor these factors approximate.
    pub fn dims(&self) -> Vec<usize> {
        self.factors.iter().map(|f| f.nrows()).collect()
    }

    pub fn order(&self) -> usize {
        self.factors.len()
    }

    /// `core ×_1 U_1 ×_2 U_2 … ×_K U_K`.
    pub fn reconstruct(&self) -> Tensor {
        let mut t = self.core.clone();
        for (k, f) in self.factors.iter().enumerate() {
            t = t.mode_multiply(f, k).expect("factor shapes validated at construction");
        }
        t
    }
}

/// Truncated higher-order SVD with per-mode ranks.
///
/// Factor k holds the leading `ranks[k]` left singular vectors of the
/// mode-k unfolding; the core is the tensor multiplied by each factor
/// transposed along its mode.
pub fn hosvd(t: &Tensor, ranks: &[usize]) -> Result<HosvdFactors> {
    hosvd_with(t, ranks, ModeSvd::default())
}

/// [`hosvd`] with an explicit mode-SVD method.
pub fn hosvd_with(t: &Tensor, ranks: &[usize], method: ModeSvd) -> Result<HosvdFactors> {
    if ranks.len() != t.order() {
        return arg_err(format!("{} ranks for a tensor of order {}", ranks.len(), t.order()));
    }
    for (k, (&r, &n)) in ranks.iter().zip(t.dims()).enumerate() {
        if r == 0 || r > n {
            return arg_err(format!("rank {r} for mode {k} must lie in 1..={n}"));
        }
    }
    let factors: Vec<Matrix> = (0..t.order())
        .into_par_iter()
        .map(|k| t.mode_singular_vectors_with(k, ranks[k], method))
        .collect::<Result<_>>()?;
    let mut core = t.clone();
    for (k, f) in factors.iter().enumerate() {
        core = core.mode_multiply(&f.transpose(), k)?;
    }
    HosvdFactors::new(core, factors)
}

/// Full-rank HOSVD.
pub fn hosvd_full(t: &Tensor) -> Result<HosvdFactors> {
    hosvd(t, t.dims())
}

/// `‖t − reconstruct(f)‖_F`.
pub fn frobenius_residual(t: &Tensor, f: &HosvdFactors) -> Result<f64> {
    if f.dims() != t.dims() {
        return arg_err(format!("factors approximate dims {:?}, tensor has {:?}", f.dims(), t.dims()));
    }
    Ok(t.sub(&f.reconstruct())?.frobenius_norm())
}

/// Multiply `t` by one matrix per mode (`None` leaves the mode unchanged),
/// processing modes in the given order.
pub fn multi_mode_product(t: &Tensor, mats: &[(usize, &DMatrix<f64>)]) -> Result<Tensor> {
    let mut out: Option<Tensor> = None;
    for &(k, m) in mats {
        out = Some(out.as_ref().unwrap_or(t).mode_multiply(m, k)?);
    }
    Ok(out.unwrap_or_else(|| t.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::orthonormality_defect;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn random_tensor(dims: Vec<usize>, seed: u64) -> Tensor {
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
        Tensor::from_fn(dims, |_| rng.random::<f64>() * 2.0 - 1.0).unwrap()
    }

    fn random_matrix(r: usize, c: usize, seed: u64) -> Matrix {
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
        Matrix::from_fn(r, c, |_, _| rng.random::<f64>() * 2.0 - 1.0)
    }

    /// Entry of the mode-k unfolding by direct index enumeration.
    fn unfold_oracle(t: &Tensor, mode: usize) -> Matrix {
        let dims = t.dims().to_vec();
        let others: Vec<usize> = (0..dims.len()).filter(|&k| k != mode).collect();
        let cols: usize = others.iter().map(|&k| dims[k]).product();
        let mut m = Matrix::zeros(dims[mode], cols);
        let mut idx = vec![0usize; dims.len()];
        for _ in 0..t.len() {
            let mut col = 0;
            let mut stride = 1;
            for &k in &others {
                col += idx[k] * stride;
                stride *= dims[k];
            }
            m[(idx[mode], col)] = t.get(&idx).unwrap();
            for (i, n) in idx.iter_mut().zip(&dims) {
                *i += 1;
                if *i < *n {
                    break;
                }
                *i = 0;
            }
        }
        m
    }

    #[test]
    fn gram_and_qr_routes_agree_on_well_conditioned_modes() {
        let t = random_tensor(vec![5, 6, 7], 31);
        for k in 0..3 {
            let a = t.mode_singular_vectors_with(k, 3, ModeSvd::Qr).unwrap();
            let b = t.mode_singular_vectors_with(k, 3, ModeSvd::Gram).unwrap();
            assert!((&a - &b).abs().max() < 1e-8, "mode {k}");
        }
    }

    #[test]
    fn wide_mode_rank_beyond_column_count_completes_basis() {
        // mode 0 has 6 rows but only 2 columns in its unfolding
        let t = random_tensor(vec![6, 2], 5);
        let u = t.mode_singular_vectors(0, 4).unwrap();
        assert!(orthonormality_defect(&u) < 1e-12);
        let f = hosvd(&t, &[4, 2]).unwrap();
        assert!(frobenius_residual(&t, &f).unwrap() < 1e-12);
    }

    #[test]
    fn low_multilinear_rank_is_recovered_to_roundoff() {
        // rank (2, 2, 2) tensor with a wide spread of scales
        let a = random_matrix(40, 2, 1);
        let b = random_matrix(30, 2, 2);
        let c = random_matrix(50, 2, 3);
        let t = Tensor::from_fn(vec![40, 30, 50], |i| {
            3000.0 * a[(i[0], 0)] * b[(i[1], 0)] * c[(i[2], 0)] + 1e-3 * a[(i[0], 1)] * b[(i[1], 1)] * c[(i[2], 1)]
        })
        .unwrap();
        let f = hosvd(&t, &[10, 10, 10]).unwrap();
        let res = frobenius_residual(&t, &f).unwrap();
        assert!(res < 1e-9 * t.frobenius_norm(), "residual {res}");
    }

    #[test]
    fn construction_validates_shape() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![], vec![]).is_err());
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn unfold_of_matrix_is_identity_view() {
        let m = random_matrix(3, 4, 1);
        let t = Tensor::from_matrix(&m);
        assert_eq!(t.unfold(0).unwrap(), m);
        assert_eq!(t.unfold(1).unwrap(), m.transpose());
    }

    #[test]
    fn unfold_of_zero_tensor() {
        let t = Tensor::zeros(vec![2, 3, 4]).unwrap();
        for (k, (r, c)) in [(2, 12), (3, 8), (4, 6)].into_iter().enumerate() {
            assert_eq!(t.unfold(k).unwrap(), Matrix::zeros(r, c));
        }
    }

    #[test]
    fn unfold_2x2x2_by_hand() {
        // entries 1..8 in linearization order: t[i,j,k] = 1 + i + 2j + 4k
        let t = Tensor::new(vec![2, 2, 2], (1..=8).map(f64::from).collect()).unwrap();
        // hand enumeration: columns (j,k) = (0,0),(1,0),(0,1),(1,1)
        let mode0 = Matrix::from_row_slice(2, 4, &[1., 3., 5., 7., 2., 4., 6., 8.]);
        // columns (i,k) = (0,0),(1,0),(0,1),(1,1)
        let mode1 = Matrix::from_row_slice(2, 4, &[1., 2., 5., 6., 3., 4., 7., 8.]);
        // columns (i,j) = (0,0),(1,0),(0,1),(1,1)
        let mode2 = Matrix::from_row_slice(2, 4, &[1., 2., 3., 4., 5., 6., 7., 8.]);
        assert_eq!(t.unfold(0).unwrap(), mode0);
        assert_eq!(t.unfold(1).unwrap(), mode1);
        assert_eq!(t.unfold(2).unwrap(), mode2);
        for k in 0..3 {
            assert_eq!(t.unfold(k).unwrap(), unfold_oracle(&t, k));
        }
    }

    #[test]
    fn unfold_rejects_bad_mode() {
        let t = Tensor::zeros(vec![2, 2]).unwrap();
        assert!(matches!(t.unfold(2), Err(Error::Argument(_))));
        assert!(t.mode_multiply(&Matrix::identity(2, 2), 5).is_err());
    }

    #[test]
    fn mode_multiply_identity_and_matrix_product() {
        let t = random_tensor(vec![3, 4, 5], 2);
        for k in 0..3 {
            let n = t.dims()[k];
            assert_eq!(t.mode_multiply(&Matrix::identity(n, n), k).unwrap(), t);
        }
        let m = random_matrix(3, 4, 3);
        let a = random_matrix(2, 3, 4);
        let prod = Tensor::from_matrix(&m).mode_multiply(&a, 0).unwrap();
        let expected = &a * &m;
        assert!((Matrix::from_column_slice(2, 4, prod.data()) - expected).abs().max() < 1e-14);
        assert!(Tensor::from_matrix(&m).mode_multiply(&random_matrix(2, 2, 1), 0).is_err());
    }

    #[test]
    fn mode_multiply_matches_loop_oracle() {
        let t = random_tensor(vec![3, 4, 5], 5);
        for mode in 0..3 {
            let n = t.dims()[mode];
            let m = random_matrix(2, n, 6 + mode as u64);
            let got = t.mode_multiply(&m, mode).unwrap();
            let mut dims = t.dims().to_vec();
            dims[mode] = 2;
            let expected = Tensor::from_fn(dims, |idx| {
                let mut src = idx.to_vec();
                (0..n)
                    .map(|i| {
                        src[mode] = i;
                        m[(idx[mode], i)] * t.get(&src).unwrap()
                    })
                    .sum()
            })
            .unwrap();
            let diff = got.sub(&expected).unwrap().max_abs();
            assert!(diff < 1e-13, "mode {mode}: {diff}");
        }
    }

    #[test]
    fn gram_matches_explicit_unfolding() {
        let t = random_tensor(vec![3, 4, 2, 3], 9);
        for k in 0..4 {
            let a = t.unfold(k).unwrap();
            let g = t.unfolding_gram(k).unwrap();
            assert!((g - &a * a.transpose()).abs().max() < 1e-12);
        }
    }

    #[test]
    fn full_rank_hosvd_is_lossless_and_orthonormal() {
        let t = random_tensor(vec![4, 3, 5], 11);
        let f = hosvd_full(&t).unwrap();
        let rel = frobenius_residual(&t, &f).unwrap() / t.frobenius_norm();
        assert!(rel < 1e-10, "{rel}");
        for u in f.factors() {
            assert!(orthonormality_defect(u) < 1e-10);
        }
    }

    #[test]
    fn full_rank_core_is_all_orthogonal() {
        let t = random_tensor(vec![3, 4, 3], 12);
        let f = hosvd_full(&t).unwrap();
        for k in 0..3 {
            let a = f.core().unfold(k).unwrap();
            let g = &a * a.transpose();
            for i in 0..g.nrows() {
                for j in 0..g.ncols() {
                    if i != j {
                        assert!(g[(i, j)].abs() < 1e-8, "mode {k} ({i},{j}) = {}", g[(i, j)]);
                    }
                }
            }
        }
    }

    #[test]
    fn rank_one_outer_product() {
        let a = [1.0, -2.0, 0.5];
        let b = [0.3, 0.7];
        let c = [2.0, 1.0, -1.0, 4.0];
        let t = Tensor::from_fn(vec![3, 2, 4], |i| a[i[0]] * b[i[1]] * c[i[2]]).unwrap();
        let f = hosvd(&t, &[1, 1, 1]).unwrap();
        let rel = frobenius_residual(&t, &f).unwrap() / t.frobenius_norm();
        assert!(rel < 1e-10, "{rel}");
    }

    #[test]
    fn order_two_agrees_with_matrix_svd() {
        let m = random_matrix(6, 4, 13);
        let t = Tensor::from_matrix(&m);
        let f = hosvd_full(&t).unwrap();
        let svd = nalgebra::SVD::new(m.clone(), true, true);
        let mut u = svd.u.unwrap();
        let mut v = svd.v_t.unwrap().transpose();
        // nalgebra sorts singular values descending; apply the same sign rule
        crate::linalg::fix_column_signs(&mut u);
        crate::linalg::fix_column_signs(&mut v);
        let u4 = u.columns(0, 4).into_owned();
        assert!((f.factors()[0].columns(0, 4) - &u4).abs().max() < 1e-8);
        assert!((&f.factors()[1] - &v).abs().max() < 1e-8);
        // core = Uᵀ M V is diagonal with the singular values (up to sign)
        let core = Matrix::from_column_slice(6, 4, f.core().data());
        for j in 0..4 {
            assert!((core[(j, j)].abs() - svd.singular_values[j]).abs() < 1e-10);
        }
        // principal angles: projectors agree
        let pu = f.factors()[0].columns(0, 4) * f.factors()[0].columns(0, 4).transpose();
        let pref = &u * u.transpose();
        assert!((pu - pref).abs().max() < 1e-8);
    }

    #[test]
    fn hosvd_rank_validation() {
        let t = random_tensor(vec![3, 3], 1);
        assert!(hosvd(&t, &[0, 1]).is_err());
        assert!(hosvd(&t, &[4, 1]).is_err());
        assert!(hosvd(&t, &[1]).is_err());
    }

    #[test]
    fn residual_of_zero_tensor_is_zero() {
        let t = Tensor::zeros(vec![3, 2, 2]).unwrap();
        let f = hosvd(&t, &[2, 1, 2]).unwrap();
        assert_eq!(frobenius_residual(&t, &f).unwrap(), 0.0);
    }

    #[test]
    fn truncated_residual_matches_explicit_reconstruction() {
        let t = random_tensor(vec![5, 4, 6], 21);
        let f = hosvd(&t, &[2, 3, 2]).unwrap();
        // explicit oracle: rebuild every entry from the core and factors
        let recon = Tensor::from_fn(t.dims().to_vec(), |idx| {
            let mut s = 0.0;
            for a in 0..2 {
                for b in 0..3 {
                    for c in 0..2 {
                        s += f.core().get(&[a, b, c]).unwrap()
                            * f.factors()[0][(idx[0], a)]
                            * f.factors()[1][(idx[1], b)]
                            * f.factors()[2][(idx[2], c)];
                    }
                }
            }
            s
        })
        .unwrap();
        let oracle: f64 = t.data().iter().zip(recon.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let got = frobenius_residual(&t, &f).unwrap();
        assert!((got - oracle).abs() < 1e-12 * t.frobenius_norm(), "{got} vs {oracle}");
        let other = Tensor::zeros(vec![5, 4, 5]).unwrap();
        assert!(frobenius_residual(&other, &f).is_err());
    }

    #[test]
    fn file_round_trip_and_layout() {
        let t = Tensor::new(vec![2, 1, 2], vec![1.0, 2.0, 3.0, -0.5]).unwrap();
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        assert!(buf.starts_with(b"TEMU1\n3 2 1 2\n"));
        assert_eq!(buf.len(), 6 + 8 + 4 * 8);
        assert_eq!(&buf[14..22], &1.0f64.to_le_bytes());
        assert_eq!(Tensor::read_from(&buf[..]).unwrap(), t);
        assert!(Tensor::read_from(&b"TEMU2\n1 1\n"[..]).is_err());
        assert!(Tensor::read_from(&buf[..buf.len() - 1]).is_err());
        assert!(Tensor::read_from(&b"TEMU1\n2 3\n"[..]).is_err());
    }

    #[test]
    fn squeeze_drops_unit_modes() {
        let t = Tensor::zeros(vec![1, 3, 1, 2]).unwrap().squeeze();
        assert_eq!(t.dims(), &[3, 2]);
        assert_eq!(Tensor::zeros(vec![1, 1]).unwrap().squeeze().dims(), &[1]);
    }

    fn dims_strategy(max_order: usize, max_dim: usize) -> impl Strategy<Value = Vec<usize>> {
        proptest::collection::vec(1..=max_dim, 1..=max_order)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn fold_inverts_unfold(dims in dims_strategy(5, 4), seed in any::<u64>()) {
            let t = random_tensor(dims.clone(), seed);
            for k in 0..dims.len() {
                let back = Tensor::fold(&t.unfold(k).unwrap(), k, &dims).unwrap();
                prop_assert_eq!(&back, &t);
            }
        }

        #[test]
        fn distinct_mode_products_commute(d0 in 1usize..5, d1 in 1usize..5, d2 in 1usize..4, q0 in 1usize..4, q1 in 1usize..4, seed in any::<u64>()) {
            let t = random_tensor(vec![d0, d1, d2], seed);
            let a = random_matrix(q0, d0, seed ^ 1);
            let b = random_matrix(q1, d1, seed ^ 2);
            let ab = t.mode_multiply(&a, 0).unwrap().mode_multiply(&b, 1).unwrap();
            let ba = t.mode_multiply(&b, 1).unwrap().mode_multiply(&a, 0).unwrap();
            prop_assert!(ab.sub(&ba).unwrap().max_abs() <= 1e-12);
        }

        #[test]
        fn factors_are_orthonormal(dims in dims_strategy(4, 5), seed in any::<u64>()) {
            let t = random_tensor(dims.clone(), seed);
            let ranks: Vec<usize> = dims.iter().map(|&n| 1 + (seed as usize) % n).collect();
            let f = hosvd(&t, &ranks).unwrap();
            for u in f.factors() {
                prop_assert!(orthonormality_defect(u) <= 1e-10);
            }
        }

        #[test]
        fn residual_never_grows_with_rank(d0 in 2usize..6, d1 in 2usize..6, d2 in 2usize..6, mode in 0usize..3, seed in any::<u64>()) {
            let dims = vec![d0, d1, d2];
            let t = random_tensor(dims.clone(), seed);
            let mut ranks: Vec<usize> = dims.iter().map(|&n| (n / 2).max(1)).collect();
            let mut prev = frobenius_residual(&t, &hosvd(&t, &ranks).unwrap()).unwrap();
            while ranks[mode] < dims[mode] {
                ranks[mode] += 1;
                let next = frobenius_residual(&t, &hosvd(&t, &ranks).unwrap()).unwrap();
                prop_assert!(next <= prev + 1e-12 * t.frobenius_norm(), "{} > {}", next, prev);
                prev = next;
            }
        }

        #[test]
        fn tensor_file_round_trip(dims in dims_strategy(4, 4), seed in any::<u64>()) {
            let t = random_tensor(dims, seed);
            let mut buf = Vec::new();
            t.write_to(&mut buf).unwrap();
            prop_assert_eq!(Tensor::read_from(&buf[..]).unwrap(), t);
        }
    }
}
