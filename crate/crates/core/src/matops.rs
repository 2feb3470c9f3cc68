//! Dense linear-algebra primitives shared by every solver in the crate.
//!
//! All matrices are [`nalgebra::DMatrix<f64>`]. Storage is column-major;
//! whenever this crate reads or writes a matrix as text it walks entries in
//! row-major order (row 0 left to right, then row 1, ...).
//!
//! Factorizations follow one sign convention: every singular or eigen vector
//! is flipped so that its entry of largest magnitude (first such entry on a
//! tie) is positive. For SVDs the left vector decides and the paired right
//! vector is flipped with it.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type DenseMatrix = DMatrix<f64>;

/// Relative rank tolerance used when a caller does not supply one.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

const SYMMETRY_TOL: f64 = 1e-10;
const PSD_CLAMP_TOL: f64 = 1e-6;

/// Thin SVD restricted to the numerically nonzero singular triplets.
#[derive(Debug, Clone, PartialEq)]
pub struct ThinSvd {
    /// `rows x numeric_rank`, orthonormal columns.
    pub left: DenseMatrix,
    /// Nonincreasing, all above the rank threshold.
    pub singular_values: DVector<f64>,
    /// `cols x numeric_rank`, orthonormal columns.
    pub right: DenseMatrix,
    pub numeric_rank: usize,
}

impl ThinSvd {
    /// The factorization of the transposed matrix.
    pub fn transpose(&self) -> ThinSvd {
        ThinSvd {
            left: self.right.clone(),
            singular_values: self.singular_values.clone(),
            right: self.left.clone(),
            numeric_rank: self.numeric_rank,
        }
    }

    pub fn reconstruct(&self) -> DenseMatrix {
        let mut scaled = self.left.clone();
        for (j, s) in self.singular_values.iter().enumerate() {
            scaled.column_mut(j).scale_mut(*s);
        }
        scaled * self.right.transpose()
    }

    pub fn rows(&self) -> usize {
        self.left.nrows()
    }

    pub fn cols(&self) -> usize {
        self.right.nrows()
    }

    pub fn largest(&self) -> Option<f64> {
        self.singular_values.iter().next().copied()
    }

    /// Smallest retained (nonzero) singular value.
    pub fn smallest_nonzero(&self) -> Option<f64> {
        self.singular_values.iter().next_back().copied()
    }
}

/// SVD with square orthogonal factors on both sides.
#[derive(Debug, Clone, PartialEq)]
pub struct FullSvd {
    /// `rows x rows` orthogonal.
    pub left: DenseMatrix,
    /// `min(rows, cols)` values, nonincreasing, zeros included.
    pub singular_values: DVector<f64>,
    /// `cols x cols` orthogonal.
    pub right: DenseMatrix,
}

impl FullSvd {
    /// Number of singular values strictly above `tol` (absolute).
    pub fn rank_above(&self, tol: f64) -> usize {
        self.singular_values.iter().filter(|s| **s > tol).count()
    }
}

/// Eigendecomposition of a symmetric positive semidefinite matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SymEig {
    /// `n x n` orthonormal eigenvectors, one per column.
    pub vectors: DenseMatrix,
    /// Nonincreasing; tiny negative values are clamped to zero.
    pub values: DVector<f64>,
    /// Count of values above `rank_tol * max value`.
    pub numeric_rank: usize,
}

impl SymEig {
    /// Leading `numeric_rank` eigenvectors.
    pub fn range_vectors(&self) -> DenseMatrix {
        self.vectors.columns(0, self.numeric_rank).into_owned()
    }

    pub fn range_values(&self) -> DVector<f64> {
        self.values.rows(0, self.numeric_rank).into_owned()
    }
}

pub fn check_finite(a: &DenseMatrix, what: &str) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::invalid(format!("{what} contains non-finite entries")))
    }
}

fn check_rank_tol(rank_tol: f64) -> Result<()> {
    if rank_tol > 0.0 && rank_tol < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "rank tolerance must lie in (0, 1), got {rank_tol}"
        )))
    }
}

/// Index of the first entry with the largest magnitude.
fn dominant_index<'a>(values: impl Iterator<Item = &'a f64>) -> usize {
    let mut best = 0;
    let mut best_abs = -1.0;
    for (i, v) in values.enumerate() {
        if v.abs() > best_abs {
            best_abs = v.abs();
            best = i;
        }
    }
    best
}

/// Flip column `j` of `primary` (and of `paired`, if given) so that the
/// dominant entry of `primary`'s column is positive.
fn normalize_column_sign(primary: &mut DenseMatrix, paired: Option<&mut DenseMatrix>, j: usize) {
    let idx = dominant_index(primary.column(j).iter());
    if primary[(idx, j)] < 0.0 {
        primary.column_mut(j).neg_mut();
        if let Some(p) = paired {
            p.column_mut(j).neg_mut();
        }
    }
}

/// Descending order, stable so ties keep the order they were discovered in.
fn descending_order(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    order
}

fn select_columns(m: &DenseMatrix, order: &[usize]) -> DenseMatrix {
    DenseMatrix::from_fn(m.nrows(), order.len(), |i, j| m[(i, order[j])])
}

struct RawSvd {
    u: DenseMatrix,
    values: Vec<f64>,
    v: DenseMatrix,
}

/// Sorted, sign-normalized SVD with `min(rows, cols)` triplets.
fn to_faer(a: &DenseMatrix) -> faer::Mat<f64> {
    faer::Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)])
}

fn from_faer(a: faer::MatRef<'_, f64>) -> DenseMatrix {
    DenseMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)])
}

fn raw_svd(a: &DenseMatrix) -> Result<RawSvd> {
    let k = a.nrows().min(a.ncols());
    if k == 0 {
        return Ok(RawSvd {
            u: DenseMatrix::zeros(a.nrows(), 0),
            values: Vec::new(),
            v: DenseMatrix::zeros(a.ncols(), 0),
        });
    }
    let svd = to_faer(a)
        .thin_svd()
        .map_err(|e| Error::NumericalFailure(format!("SVD did not converge: {e:?}")))?;
    let u = from_faer(svd.U());
    let v = from_faer(svd.V());
    let values: Vec<f64> = svd.S().column_vector().iter().copied().collect();
    let order = descending_order(&values);
    let mut u = select_columns(&u, &order);
    let mut v = select_columns(&v, &order);
    let values: Vec<f64> = order.iter().map(|&i| values[i]).collect();
    for j in 0..k {
        normalize_column_sign(&mut u, Some(&mut v), j);
    }
    Ok(RawSvd { u, values, v })
}

/// Thin SVD keeping only singular values above `rank_tol * sigma_max`.
pub fn thin_svd(a: &DenseMatrix, rank_tol: f64) -> Result<ThinSvd> {
    check_rank_tol(rank_tol)?;
    check_finite(a, "matrix")?;
    let raw = raw_svd(a)?;
    let sigma_max = raw.values.first().copied().unwrap_or(0.0);
    let rank = if sigma_max > 0.0 {
        raw.values
            .iter()
            .take_while(|s| **s > rank_tol * sigma_max)
            .count()
    } else {
        0
    };
    Ok(ThinSvd {
        left: raw.u.columns(0, rank).into_owned(),
        singular_values: DVector::from_iterator(rank, raw.values.into_iter().take(rank)),
        right: raw.v.columns(0, rank).into_owned(),
        numeric_rank: rank,
    })
}

/// SVD with square orthogonal factors; singular vectors for zero singular
/// values and for the surplus dimension are orthonormal completions.
pub fn full_svd(a: &DenseMatrix) -> Result<FullSvd> {
    check_finite(a, "matrix")?;
    let raw = raw_svd(a)?;
    let left = complete_basis(&raw.u)?;
    let right = complete_basis(&raw.v)?;
    Ok(FullSvd {
        left,
        singular_values: DVector::from_vec(raw.values),
        right,
    })
}

/// Append an orthonormal basis of the complement of `q`'s column space.
fn complete_basis(q: &DenseMatrix) -> Result<DenseMatrix> {
    let complement = orthonormal_complement(q)?;
    if complement.ncols() == 0 {
        return Ok(q.clone());
    }
    let n = q.nrows();
    let k = q.ncols();
    let mut out = DenseMatrix::zeros(n, n);
    out.columns_mut(0, k).copy_from(q);
    out.columns_mut(k, n - k).copy_from(&complement);
    Ok(out)
}

/// Orthonormal basis of the orthogonal complement of the column space of
/// `q`, which must have orthonormal columns.
pub fn orthonormal_complement(q: &DenseMatrix) -> Result<DenseMatrix> {
    let n = q.nrows();
    let k = q.ncols();
    if k >= n {
        return Ok(DenseMatrix::zeros(n, 0));
    }
    let projector = DenseMatrix::identity(n, n) - q * q.transpose();
    let eig = raw_sym_eig(&projector)?;
    Ok(eig.0.columns(0, n - k).into_owned())
}

/// Sorted, sign-normalized eigenpairs of an exactly symmetric matrix.
fn raw_sym_eig(a: &DenseMatrix) -> Result<(DenseMatrix, Vec<f64>)> {
    let n = a.nrows();
    if n == 0 {
        return Ok((DenseMatrix::zeros(0, 0), Vec::new()));
    }
    let eig = to_faer(a)
        .self_adjoint_eigen(faer::Side::Lower)
        .map_err(|e| Error::NumericalFailure(format!("symmetric eigensolver did not converge: {e:?}")))?;
    let values: Vec<f64> = eig.S().column_vector().iter().copied().collect();
    let order = descending_order(&values);
    let mut vectors = select_columns(&from_faer(eig.U()), &order);
    for j in 0..n {
        normalize_column_sign(&mut vectors, None, j);
    }
    Ok((vectors, order.iter().map(|&i| values[i]).collect()))
}

fn symmetry_defect(a: &DenseMatrix) -> f64 {
    let mut worst: f64 = 0.0;
    for j in 0..a.ncols() {
        for i in 0..j {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

/// Eigendecomposition of a symmetric PSD matrix.
pub fn sym_eig(a: &DenseMatrix, rank_tol: f64) -> Result<SymEig> {
    check_rank_tol(rank_tol)?;
    check_finite(a, "matrix")?;
    if !a.is_square() {
        return Err(Error::invalid(format!(
            "symmetric eigensolve needs a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    let scale = a.amax();
    let defect = symmetry_defect(a);
    if defect > SYMMETRY_TOL * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::invalid(format!(
            "matrix is not symmetric (max defect {defect:e})"
        )));
    }
    let sym = (a + a.transpose()) * 0.5;
    let (vectors, mut values) = raw_sym_eig(&sym)?;
    let max_value = values.first().copied().unwrap_or(0.0).max(0.0);
    for v in values.iter_mut() {
        if *v < 0.0 {
            if *v < -PSD_CLAMP_TOL * max_value || max_value == 0.0 && *v < 0.0 {
                return Err(Error::NotPositiveSemidefinite(format!(
                    "eigenvalue {v:e} against largest {max_value:e}"
                )));
            }
            *v = 0.0;
        }
    }
    let numeric_rank = if max_value > 0.0 {
        values.iter().filter(|v| **v > rank_tol * max_value).count()
    } else {
        0
    };
    Ok(SymEig {
        vectors,
        values: DVector::from_vec(values),
        numeric_rank,
    })
}

/// Minimum-norm action `A^+ b` using the retained singular triplets of `A`.
pub fn pinv_times(svd: &ThinSvd, b: &DenseMatrix) -> Result<DenseMatrix> {
    if b.nrows() != svd.rows() {
        return Err(Error::invalid(format!(
            "pseudoinverse of a {}x{} matrix cannot act on {} rows",
            svd.rows(),
            svd.cols(),
            b.nrows()
        )));
    }
    let mut coeffs = svd.left.transpose() * b;
    for (i, s) in svd.singular_values.iter().enumerate() {
        coeffs.row_mut(i).scale_mut(1.0 / s);
    }
    Ok(&svd.right * coeffs)
}

/// Mean of each row (the mean sample).
pub fn row_means(a: &DenseMatrix) -> DVector<f64> {
    let n = a.ncols().max(1) as f64;
    DVector::from_iterator(a.nrows(), a.row_iter().map(|r| r.sum() / n))
}

/// Subtract the mean sample from every column.
pub fn center_columns(a: &DenseMatrix) -> DenseMatrix {
    subtract_means(a, &row_means(a))
}

/// Subtract a fixed mean sample from every column.
pub fn subtract_means(a: &DenseMatrix, means: &DVector<f64>) -> DenseMatrix {
    let mut out = a.clone();
    for mut col in out.column_iter_mut() {
        col -= means;
    }
    out
}
