//! Kernel functions, Gram matrices and feature-space centering.

use std::sync::Arc;

use nalgebra::{DVector, DVectorView};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matops::{check_finite, DenseMatrix};

const SYMMETRY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelSpec {
    /// `a . b`
    Linear,
    /// `(gamma1 (a . b) + gamma2)^degree`
    Polynomial { gamma1: f64, gamma2: f64, degree: f64 },
    /// `exp(-||a - b||^2 / (2 sigma^2))`
    Gaussian { sigma: f64 },
    /// Gram matrices supplied by the caller.
    Precomputed,
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Gaussian { sigma } if !(sigma > 0.0 && sigma.is_finite()) => {
                Err(Error::invalid(format!("Gaussian sigma must be positive, got {sigma}")))
            }
            KernelSpec::Polynomial { degree, .. } if !(degree > 0.0 && degree.is_finite()) => {
                Err(Error::invalid(format!("polynomial degree must be positive, got {degree}")))
            }
            _ => Ok(()),
        }
    }
}

/// Evaluate the kernel on two vectors of equal length.
pub fn kernel_eval(spec: &KernelSpec, a: DVectorView<f64>, b: DVectorView<f64>) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "kernel arguments have lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    spec.validate()?;
    Ok(match *spec {
        KernelSpec::Linear => a.dot(&b),
        KernelSpec::Polynomial { gamma1, gamma2, degree } => (gamma1 * a.dot(&b) + gamma2).powf(degree),
        KernelSpec::Gaussian { sigma } => (-squared_distance(a, b) / (2.0 * sigma * sigma)).exp(),
        KernelSpec::Precomputed => {
            return Err(Error::invalid("precomputed kernels cannot be evaluated pointwise"))
        }
    })
}

fn squared_distance(a: DVectorView<f64>, b: DVectorView<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Row means and grand mean of an uncentered training Gram matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CenteringCache {
    pub row_means: DVector<f64>,
    pub grand_mean: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    pub values: DenseMatrix,
    pub centered: bool,
    pub spec: KernelSpec,
    /// Present once the matrix has been centered.
    pub cache: Option<CenteringCache>,
    /// Training samples the matrix was built from (absent when precomputed).
    pub source: Option<Arc<DenseMatrix>>,
}

impl GramMatrix {
    /// Wrap a caller-supplied Gram matrix. Only symmetry is validated here;
    /// positive semidefiniteness is checked when the matrix is factorized.
    pub fn precomputed(values: DenseMatrix) -> Result<Self> {
        check_finite(&values, "Gram matrix")?;
        if !values.is_square() || values.nrows() < 2 {
            return Err(Error::invalid(format!(
                "Gram matrix must be square with n >= 2, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        let scale = values.amax().max(f64::MIN_POSITIVE);
        let defect = (&values - values.transpose()).amax();
        if defect > SYMMETRY_TOL * scale {
            return Err(Error::invalid(format!(
                "Gram matrix is not symmetric (max defect {defect:e})"
            )));
        }
        let values = (&values + values.transpose()) * 0.5;
        Ok(Self {
            values,
            centered: false,
            spec: KernelSpec::Precomputed,
            cache: None,
            source: None,
        })
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }
}

/// Gram matrix of the columns of `data` (`d x n`).
pub fn gram(spec: &KernelSpec, data: &DenseMatrix) -> Result<GramMatrix> {
    check_finite(data, "data")?;
    if data.ncols() < 2 {
        return Err(Error::invalid("a Gram matrix needs at least two samples"));
    }
    let values = cross_gram(spec, data, data)?;
    Ok(GramMatrix {
        values,
        centered: false,
        spec: *spec,
        cache: None,
        source: Some(Arc::new(data.clone())),
    })
}

/// `K[i][j] = k(left_i, right_j)` for the columns of two data matrices.
///
/// When both arguments are the same matrix the upper triangle is computed
/// once and mirrored, so the result is exactly symmetric.
pub fn cross_gram(spec: &KernelSpec, left: &DenseMatrix, right: &DenseMatrix) -> Result<DenseMatrix> {
    spec.validate()?;
    if matches!(spec, KernelSpec::Precomputed) {
        return Err(Error::invalid("precomputed kernels cannot be evaluated pointwise"));
    }
    if left.nrows() != right.nrows() {
        return Err(Error::invalid(format!(
            "feature dimensions differ: {} vs {}",
            left.nrows(),
            right.nrows()
        )));
    }
    let symmetric = std::ptr::eq(left, right);
    let n = left.ncols();
    let m = right.ncols();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let a = left.column(i);
            let start = if symmetric { i } else { 0 };
            (start..m)
                .map(|j| kernel_eval(spec, a.as_view(), right.column(j).as_view()))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = DenseMatrix::zeros(n, m);
    for (i, row) in rows.into_iter().enumerate() {
        let start = if symmetric { i } else { 0 };
        for (offset, v) in row.into_iter().enumerate() {
            let j = start + offset;
            out[(i, j)] = v;
            if symmetric {
                out[(j, i)] = v;
            }
        }
    }
    Ok(out)
}

/// `(I - ee^T/n) K (I - ee^T/n)`, caching the means needed to center test
/// kernels later.
pub fn center_train(k: &GramMatrix) -> Result<GramMatrix> {
    if k.centered {
        return Err(Error::InvalidState("Gram matrix is already centered".into()));
    }
    let n = k.n();
    let row_means = DVector::from_iterator(n, k.values.row_iter().map(|r| r.sum() / n as f64));
    let grand_mean = row_means.sum() / n as f64;
    // K is symmetric, so column means equal row means.
    let values = DenseMatrix::from_fn(n, n, |i, j| {
        k.values[(i, j)] - row_means[i] - row_means[j] + grand_mean
    });
    Ok(GramMatrix {
        values,
        centered: true,
        spec: k.spec,
        cache: Some(CenteringCache { row_means, grand_mean }),
        source: k.source.clone(),
    })
}

/// Center an uncentered `n x N` cross kernel between training and test
/// samples consistently with the centered training Gram matrix.
pub fn center_test(k_train: &GramMatrix, k_cross: &DenseMatrix) -> Result<DenseMatrix> {
    let cache = k_train
        .cache
        .as_ref()
        .ok_or_else(|| Error::InvalidState("training Gram matrix carries no centering cache".into()))?;
    center_cross(cache, k_cross)
}

/// [`center_test`] from the cached training means alone.
pub fn center_cross(cache: &CenteringCache, k_cross: &DenseMatrix) -> Result<DenseMatrix> {
    let n = cache.row_means.len();
    if k_cross.nrows() != n {
        return Err(Error::invalid(format!(
            "cross kernel has {} rows, training set has {n} samples",
            k_cross.nrows()
        )));
    }
    check_finite(k_cross, "cross kernel")?;
    let col_means: Vec<f64> = k_cross.column_iter().map(|c| c.sum() / n as f64).collect();
    Ok(DenseMatrix::from_fn(n, k_cross.ncols(), |i, j| {
        k_cross[(i, j)] - col_means[j] - cache.row_means[i] + cache.grand_mean
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SigmaMode {
    MaxDistance,
    MinDistance,
}

/// Largest, or smallest nonzero, pairwise Euclidean distance between columns.
pub fn default_sigma(data: &DenseMatrix, mode: SigmaMode) -> Result<f64> {
    check_finite(data, "data")?;
    let n = data.ncols();
    if n < 2 {
        return Err(Error::invalid("need at least two samples"));
    }
    let per_row: Vec<(f64, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let a = data.column(i);
            let mut max: f64 = 0.0;
            let mut min = f64::INFINITY;
            for j in i + 1..n {
                let d2 = squared_distance(a.as_view(), data.column(j).as_view()).max(0.0);
                max = max.max(d2);
                if d2 > 0.0 {
                    min = min.min(d2);
                }
            }
            (max, min)
        })
        .collect();
    let max = per_row.iter().map(|p| p.0).fold(0.0, f64::max);
    let min = per_row.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    match mode {
        SigmaMode::MaxDistance if max > 0.0 => Ok(max.sqrt()),
        SigmaMode::MinDistance if min.is_finite() => Ok(min.sqrt()),
        _ => Err(Error::DegenerateData("all samples are identical".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use crate::matops::sym_eig;

    fn random(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DenseMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    fn vector(values: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(values)
    }

    fn eval(spec: &KernelSpec, a: &[f64], b: &[f64]) -> f64 {
        kernel_eval(spec, vector(a).as_view(), vector(b).as_view()).unwrap()
    }

    #[test]
    fn kernel_examples() {
        let g = KernelSpec::Gaussian { sigma: 0.7 };
        assert_eq!(eval(&g, &[1.0, -2.0], &[1.0, -2.0]), 1.0);
        assert_eq!(eval(&KernelSpec::Linear, &[1.0, 2.0], &[3.0, -1.0]), 1.0);
        let poly = KernelSpec::Polynomial { gamma1: 1.0, gamma2: 0.0, degree: 1.0 };
        let data = random(3, 200, 1);
        for p in 0..100 {
            let a = data.column(2 * p);
            let b = data.column(2 * p + 1);
            let lin = kernel_eval(&KernelSpec::Linear, a.as_view(), b.as_view()).unwrap();
            let pol = kernel_eval(&poly, a.as_view(), b.as_view()).unwrap();
            assert_abs_diff_eq!(lin, pol, epsilon = 1e-14);
        }
    }

    #[test]
    fn kernel_errors() {
        let a = vector(&[1.0]);
        assert!(kernel_eval(&KernelSpec::Precomputed, a.as_view(), a.as_view()).is_err());
        assert!(kernel_eval(&KernelSpec::Linear, a.as_view(), vector(&[1.0, 2.0]).as_view()).is_err());
        assert!(kernel_eval(&KernelSpec::Gaussian { sigma: 0.0 }, a.as_view(), a.as_view()).is_err());
        let bad_poly = KernelSpec::Polynomial { gamma1: 1.0, gamma2: 1.0, degree: -1.0 };
        assert!(kernel_eval(&bad_poly, a.as_view(), a.as_view()).is_err());
    }

    #[test]
    fn kernel_is_symmetric() {
        let data = random(4, 2, 2);
        for spec in [
            KernelSpec::Linear,
            KernelSpec::Gaussian { sigma: 1.3 },
            KernelSpec::Polynomial { gamma1: 0.5, gamma2: 1.0, degree: 3.0 },
        ] {
            let ab = kernel_eval(&spec, data.column(0).as_view(), data.column(1).as_view()).unwrap();
            let ba = kernel_eval(&spec, data.column(1).as_view(), data.column(0).as_view()).unwrap();
            assert_eq!(ab, ba);
        }
    }

    #[test]
    fn linear_gram_is_inner_product_matrix() {
        let x = random(3, 6, 3);
        let k = gram(&KernelSpec::Linear, &x).unwrap();
        assert!((&k.values - x.transpose() * &x).amax() < 1e-12);
        assert_eq!(k.values, k.values.transpose());
    }

    #[test]
    fn gaussian_gram_has_unit_diagonal_and_full_rank() {
        let x = random(2, 20, 4);
        let k = gram(&KernelSpec::Gaussian { sigma: 0.5 }, &x).unwrap();
        assert!(k.values.diagonal().iter().all(|v| *v == 1.0));
        let eig = sym_eig(&k.values, 1e-12).unwrap();
        assert!(eig.values[19] > 0.0);
        assert_eq!(eig.numeric_rank, 20);
    }

    #[test]
    fn gram_needs_two_samples() {
        assert!(gram(&KernelSpec::Linear, &random(3, 1, 5)).is_err());
    }

    #[test]
    fn constant_kernel_centers_to_zero() {
        let k = GramMatrix::precomputed(DenseMatrix::from_element(5, 5, 1.0)).unwrap();
        let c = center_train(&k).unwrap();
        assert!(c.values.amax() < 1e-15);
        assert!(matches!(center_train(&c), Err(Error::InvalidState(_))));
    }

    #[test]
    fn centering_matches_projector_and_elementwise_oracles() {
        let g = random(6, 9, 6);
        let k = GramMatrix::precomputed(g.transpose() * &g).unwrap();
        let n = 9;
        let c = center_train(&k).unwrap();
        let h = DenseMatrix::identity(n, n) - DenseMatrix::from_element(n, n, 1.0 / n as f64);
        let projected = &h * &k.values * &h;
        assert!((&c.values - &projected).amax() < 1e-12);
        // Double-loop oracle.
        for i in 0..n {
            for j in 0..n {
                let ri: f64 = (0..n).map(|t| k.values[(i, t)]).sum::<f64>() / n as f64;
                let rj: f64 = (0..n).map(|t| k.values[(j, t)]).sum::<f64>() / n as f64;
                let all: f64 = k.values.iter().sum::<f64>() / (n * n) as f64;
                assert_abs_diff_eq!(c.values[(i, j)], k.values[(i, j)] - ri - rj + all, epsilon = 1e-12);
            }
        }
        // Projector idempotence.
        let again = &h * &c.values * &h;
        assert!((again - &c.values).amax() < 1e-12);
        let scale = k.values.amax() * n as f64;
        for i in 0..n {
            assert!(c.values.row(i).sum().abs() <= 1e-9 * scale);
            assert!(c.values.column(i).sum().abs() <= 1e-9 * scale);
        }
        let eig = sym_eig(&c.values, 1e-10).unwrap();
        assert!(eig.values.iter().all(|v| *v >= -1e-9 * eig.values[0]));
    }

    #[test]
    fn test_centering_matches_explicit_projectors() {
        let x = random(3, 8, 7);
        let t = random(3, 4, 8);
        let spec = KernelSpec::Gaussian { sigma: 0.9 };
        let k = gram(&spec, &x).unwrap();
        let c = center_train(&k).unwrap();
        let cross = cross_gram(&spec, &x, &t).unwrap();
        let centered = center_test(&c, &cross).unwrap();
        let n = 8;
        let big_n = 4;
        let h = DenseMatrix::identity(n, n) - DenseMatrix::from_element(n, n, 1.0 / n as f64);
        let ones = DenseMatrix::from_element(n, big_n, 1.0 / n as f64);
        let oracle = &h * &cross - &h * &k.values * ones;
        assert!((centered - oracle).amax() < 1e-12);
    }

    #[test]
    fn test_point_equal_to_training_point() {
        let x = random(2, 7, 9);
        let spec = KernelSpec::Gaussian { sigma: 1.1 };
        let c = center_train(&gram(&spec, &x).unwrap()).unwrap();
        let probe = x.columns(3, 1).into_owned();
        let cross = cross_gram(&spec, &x, &probe).unwrap();
        let centered = center_test(&c, &cross).unwrap();
        assert!((centered.column(0) - c.values.column(3)).amax() <= 1e-10);
    }

    #[test]
    fn constant_cross_kernel_centers_to_zero() {
        let k = GramMatrix::precomputed(DenseMatrix::from_element(4, 4, 2.0)).unwrap();
        let c = center_train(&k).unwrap();
        let out = center_test(&c, &DenseMatrix::from_element(4, 3, 2.0)).unwrap();
        assert!(out.amax() < 1e-15);
    }

    #[test]
    fn test_centering_needs_cache() {
        let k = GramMatrix::precomputed(DenseMatrix::identity(3, 3)).unwrap();
        assert!(matches!(
            center_test(&k, &DenseMatrix::zeros(3, 1)),
            Err(Error::InvalidState(_))
        ));
        let c = center_train(&k).unwrap();
        assert!(center_test(&c, &DenseMatrix::zeros(2, 1)).is_err());
    }

    #[test]
    fn precomputed_must_be_symmetric() {
        let m = DenseMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(GramMatrix::precomputed(m).is_err());
    }

    #[test]
    fn sigma_examples() {
        let two = DenseMatrix::from_row_slice(1, 2, &[0.0, 3.0]);
        assert_eq!(default_sigma(&two, SigmaMode::MaxDistance).unwrap(), 3.0);
        assert_eq!(default_sigma(&two, SigmaMode::MinDistance).unwrap(), 3.0);
        let line = DenseMatrix::from_row_slice(1, 3, &[0.0, 1.0, 4.0]);
        assert_eq!(default_sigma(&line, SigmaMode::MaxDistance).unwrap(), 4.0);
        assert_eq!(default_sigma(&line, SigmaMode::MinDistance).unwrap(), 1.0);
        let same = DenseMatrix::from_element(2, 3, 1.5);
        assert!(matches!(
            default_sigma(&same, SigmaMode::MinDistance),
            Err(Error::DegenerateData(_))
        ));
    }

    #[test]
    fn sigma_matches_double_loop() {
        let x = random(3, 50, 10);
        let mut max: f64 = 0.0;
        let mut min = f64::INFINITY;
        for i in 0..50 {
            for j in 0..50 {
                if i != j {
                    let d = (x.column(i) - x.column(j)).norm();
                    max = max.max(d);
                    min = min.min(d);
                }
            }
        }
        assert_abs_diff_eq!(default_sigma(&x, SigmaMode::MaxDistance).unwrap(), max, epsilon = 1e-12);
        assert_abs_diff_eq!(default_sigma(&x, SigmaMode::MinDistance).unwrap(), min, epsilon = 1e-12);
    }
}
