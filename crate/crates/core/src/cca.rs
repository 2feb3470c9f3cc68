//! Linear CCA through its least-squares characterization.
//!
//! With the thin SVDs `X = U1 S1 Q1^T`, `Y = V1 S2 Q2^T` of the centered data
//! and the coupling SVD `Q1^T Q2 = P1 S P2^T`, every CCA solution is built
//! from `U1 S1^-1 P1` and `V1 S2^-1 P2`. The same transforms are the
//! minimum-norm solutions of `min ||X^T Wx - Tx||` with targets
//! `Tx = Q2 P2 S^-1` (and symmetrically for `Y`), which is what makes an
//! `l1`-penalized, sparse variant possible.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::eval::pearson;
use crate::fpc::{fpc_solve_from, FpcConfig, FpcResult, L1LsProblem};
use crate::matops::{
    center_columns, check_finite, full_svd, orthonormal_complement, pinv_times, row_means,
    subtract_means, sym_eig, thin_svd, DenseMatrix, ThinSvd,
};

/// Relative tolerance under which two coupling singular values count as equal.
pub const GROUPING_TOL: f64 = 1e-8;
const ORTHOGONALITY_TOL: f64 = 1e-10;

/// SVD of `Q1^T Q2` with square factors.
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    /// `r x r` orthogonal.
    pub p1: DenseMatrix,
    /// `s x s` orthogonal.
    pub p2: DenseMatrix,
    /// `min(r, s)` cosines of the principal angles, nonincreasing.
    pub values: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CcaFactorization {
    /// Centered training data.
    pub x: DenseMatrix,
    pub y: DenseMatrix,
    pub mean_x: DVector<f64>,
    pub mean_y: DVector<f64>,
    /// `X = U1 S1 Q1^T` (`left = U1`, `right = Q1`).
    pub svd_x: ThinSvd,
    /// `Y = V1 S2 Q2^T`.
    pub svd_y: ThinSvd,
    pub coupling: Coupling,
    pub r: usize,
    pub s: usize,
    /// Number of nonzero canonical correlations.
    pub m: usize,
    pub t: usize,
    /// Multiplicities of the distinct nonzero coupling values, in order.
    pub groups: Vec<usize>,
}

impl CcaFactorization {
    pub fn d1(&self) -> usize {
        self.x.nrows()
    }

    pub fn d2(&self) -> usize {
        self.y.nrows()
    }

    pub fn n(&self) -> usize {
        self.x.ncols()
    }

    /// `trace(Wx^T X Y^T Wy)` on the centered training data.
    pub fn objective(&self, wx: &DenseMatrix, wy: &DenseMatrix) -> f64 {
        (wx.tr_mul(&self.x) * self.y.tr_mul(wy)).trace()
    }

    /// `sum_{i <= l} sigma_i(Q1^T Q2)`, the optimal objective value.
    pub fn optimal_objective(&self, l: usize) -> f64 {
        self.coupling.values.iter().take(l).sum()
    }

    /// `U1 S1^-1 P1(:, cols)`.
    fn x_basis(&self, p1_block: &DenseMatrix) -> DenseMatrix {
        scaled_inverse(&self.svd_x) * p1_block
    }

    fn y_basis(&self, p2_block: &DenseMatrix) -> DenseMatrix {
        scaled_inverse(&self.svd_y) * p2_block
    }
}

/// `left * diag(1 / sigma)`.
fn scaled_inverse(svd: &ThinSvd) -> DenseMatrix {
    let mut out = svd.left.clone();
    for (j, s) in svd.singular_values.iter().enumerate() {
        out.column_mut(j).scale_mut(1.0 / s);
    }
    out
}

fn group_multiplicities(values: &[f64]) -> Vec<usize> {
    let mut groups = Vec::new();
    let mut leader = f64::NAN;
    for &v in values {
        if groups.is_empty() || (leader - v).abs() > GROUPING_TOL * leader {
            groups.push(1);
            leader = v;
        } else {
            *groups.last_mut().unwrap() += 1;
        }
    }
    groups
}

/// Center both views and compute the SVDs of `X`, `Y` and `Q1^T Q2`.
pub fn factorize(x: &DenseMatrix, y: &DenseMatrix, rank_tol: f64) -> Result<CcaFactorization> {
    check_finite(x, "x")?;
    check_finite(y, "y")?;
    if x.ncols() != y.ncols() {
        return Err(Error::invalid(format!(
            "views have {} and {} samples",
            x.ncols(),
            y.ncols()
        )));
    }
    if x.ncols() < 2 {
        return Err(Error::invalid("CCA needs at least two samples"));
    }
    let mean_x = row_means(x);
    let mean_y = row_means(y);
    let xc = center_columns(x);
    let yc = center_columns(y);
    let svd_x = thin_svd(&xc, rank_tol)?;
    let svd_y = thin_svd(&yc, rank_tol)?;
    if svd_x.numeric_rank == 0 || svd_y.numeric_rank == 0 {
        return Err(Error::DegenerateData(
            "a view has rank zero after centering".into(),
        ));
    }
    let product = svd_x.right.tr_mul(&svd_y.right);
    let full = full_svd(&product)?;
    // Cosines of principal angles are scale-free, so the tolerance is absolute.
    let m = full.rank_above(rank_tol);
    let values: Vec<f64> = full.singular_values.iter().copied().collect();
    let groups = group_multiplicities(&values[..m]);
    let r = svd_x.numeric_rank;
    let s = svd_y.numeric_rank;
    Ok(CcaFactorization {
        x: xc,
        y: yc,
        mean_x,
        mean_y,
        svd_x,
        svd_y,
        coupling: Coupling {
            p1: full.left,
            p2: full.right,
            values: full.singular_values,
        },
        r,
        s,
        m,
        t: r.min(s),
        groups,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum CcaVariant {
    Exact,
    LeastSquares,
    General,
    Sparse(Box<SparseFit>),
}

/// Solver diagnostics kept with a sparse model.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseFit {
    pub lambdas_x: Vec<f64>,
    pub lambdas_y: Vec<f64>,
    pub fit_x: FpcResult,
    pub fit_y: FpcResult,
}

impl SparseFit {
    pub fn zero_columns_x(&self) -> Vec<bool> {
        self.fit_x.zero_columns()
    }

    pub fn zero_columns_y(&self) -> Vec<bool> {
        self.fit_y.zero_columns()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CcaModel {
    /// `d1 x l`.
    pub wx: DenseMatrix,
    /// `d2 x l`.
    pub wy: DenseMatrix,
    pub correlations: Vec<f64>,
    pub l: usize,
    pub mean_x: DVector<f64>,
    pub mean_y: DVector<f64>,
    pub variant: CcaVariant,
}

impl CcaModel {
    /// Flip column pairs so the largest-magnitude entry of each `Wx` column
    /// is positive (`Wy` decides for an all-zero `Wx` column).
    pub fn align_signs(&mut self) {
        align_pair(&mut self.wx, &mut self.wy);
    }
}

pub(crate) fn align_pair(a: &mut DenseMatrix, b: &mut DenseMatrix) {
    for j in 0..a.ncols() {
        let decider = if a.column(j).iter().any(|v| *v != 0.0) { &*a } else { &*b };
        let mut best = 0.0f64;
        for v in decider.column(j).iter() {
            if v.abs() > best.abs() {
                best = *v;
            }
        }
        if best < 0.0 {
            a.column_mut(j).neg_mut();
            b.column_mut(j).neg_mut();
        }
    }
}

fn check_l(l: usize, upper: usize, what: &str) -> Result<()> {
    if l == 0 || l > upper {
        Err(Error::invalid(format!("l = {l} outside 1..={upper} ({what})")))
    } else {
        Ok(())
    }
}

/// Canonical solution `Wx = U1 S1^-1 P1(:, 1:l)`, `Wy = V1 S2^-1 P2(:, 1:l)`.
pub fn cca_exact(f: &CcaFactorization, l: usize) -> Result<CcaModel> {
    check_l(l, f.t, "min(rank X, rank Y)")?;
    let wx = f.x_basis(&f.coupling.p1.columns(0, l).into_owned());
    let wy = f.y_basis(&f.coupling.p2.columns(0, l).into_owned());
    let mut model = CcaModel {
        wx,
        wy,
        correlations: f.coupling.values.iter().take(l).copied().collect(),
        l,
        mean_x: f.mean_x.clone(),
        mean_y: f.mean_y.clone(),
        variant: CcaVariant::Exact,
    };
    model.align_signs();
    Ok(model)
}

/// Free blocks of the general solution, chosen by how `l` sits against the
/// multiplicities of the coupling values.
#[derive(Debug, Clone, PartialEq)]
pub enum Completion {
    /// `l` ends exactly at a group boundary.
    None,
    /// `l` splits a group of multiplicity `m_k`: `m_k x (l - alpha)` column-orthogonal.
    Partial(DenseMatrix),
    /// `l > m`: `(r - m) x (l - m)` and `(s - m) x (l - m)` column-orthogonal blocks.
    Free { g1: DenseMatrix, g2: DenseMatrix },
}

fn check_column_orthogonal(g: &DenseMatrix, rows: usize, cols: usize, what: &str) -> Result<()> {
    if g.shape() != (rows, cols) {
        return Err(Error::invalid(format!(
            "{what} must be {rows}x{cols}, got {}x{}",
            g.nrows(),
            g.ncols()
        )));
    }
    let defect = (g.tr_mul(g) - DenseMatrix::identity(cols, cols)).amax();
    if defect > ORTHOGONALITY_TOL {
        return Err(Error::invalid(format!(
            "{what} is not column-orthogonal (defect {defect:e})"
        )));
    }
    Ok(())
}

/// Any member of the CCA solution family for `l` directions.
///
/// `mix` is an `l x l` orthogonal rotation, `completion` the case-dependent
/// free block, `e` (`(d1 - r) x l`) and `fmat` (`(d2 - s) x l`) arbitrary
/// components outside the data ranges.
pub fn general_solution(
    f: &CcaFactorization,
    l: usize,
    mix: &DenseMatrix,
    completion: &Completion,
    e: &DenseMatrix,
    fmat: &DenseMatrix,
) -> Result<CcaModel> {
    check_l(l, f.t, "min(rank X, rank Y)")?;
    check_column_orthogonal(mix, l, l, "mix")?;
    for (block, rows, what) in [(e, f.d1() - f.r, "e"), (fmat, f.d2() - f.s, "fmat")] {
        if block.shape() != (rows, l) {
            return Err(Error::invalid(format!(
                "{what} must be {rows}x{l}, got {}x{}",
                block.nrows(),
                block.ncols()
            )));
        }
    }
    let p1 = &f.coupling.p1;
    let p2 = &f.coupling.p2;
    let (core_x, core_y) = if l <= f.m {
        let mut alpha = 0;
        let mut split = None;
        for &mk in &f.groups {
            if alpha + mk == l {
                break;
            }
            if alpha + mk > l {
                split = Some((alpha, mk));
                break;
            }
            alpha += mk;
        }
        match (split, completion) {
            (None, Completion::None) => (
                p1.columns(0, l).into_owned(),
                p2.columns(0, l).into_owned(),
            ),
            (Some((alpha, mk)), Completion::Partial(g)) => {
                check_column_orthogonal(g, mk, l - alpha, "g")?;
                let mut cx = DenseMatrix::zeros(f.r, l);
                let mut cy = DenseMatrix::zeros(f.s, l);
                cx.columns_mut(0, alpha).copy_from(&p1.columns(0, alpha));
                cy.columns_mut(0, alpha).copy_from(&p2.columns(0, alpha));
                cx.columns_mut(alpha, l - alpha)
                    .copy_from(&(p1.columns(alpha, mk) * g));
                cy.columns_mut(alpha, l - alpha)
                    .copy_from(&(p2.columns(alpha, mk) * g));
                (cx, cy)
            }
            (None, _) => {
                return Err(Error::invalid(format!(
                    "l = {l} ends on a group boundary; no completion block is allowed"
                )))
            }
            (Some(_), _) => {
                return Err(Error::invalid(format!(
                    "l = {l} splits a group of equal correlations; a partial block is required"
                )))
            }
        }
    } else {
        let Completion::Free { g1, g2 } = completion else {
            return Err(Error::invalid(format!(
                "l = {l} exceeds m = {}; free blocks are required",
                f.m
            )));
        };
        let m = f.m;
        check_column_orthogonal(g1, f.r - m, l - m, "g1")?;
        check_column_orthogonal(g2, f.s - m, l - m, "g2")?;
        let mut cx = DenseMatrix::zeros(f.r, l);
        let mut cy = DenseMatrix::zeros(f.s, l);
        cx.columns_mut(0, m).copy_from(&p1.columns(0, m));
        cy.columns_mut(0, m).copy_from(&p2.columns(0, m));
        cx.columns_mut(m, l - m)
            .copy_from(&(p1.columns(m, f.r - m) * g1));
        cy.columns_mut(m, l - m)
            .copy_from(&(p2.columns(m, f.s - m) * g2));
        (cx, cy)
    };
    let mut wx = f.x_basis(&core_x) * mix;
    let mut wy = f.y_basis(&core_y) * mix;
    if e.nrows() > 0 {
        wx += orthonormal_complement(&f.svd_x.left)? * e;
    }
    if fmat.nrows() > 0 {
        wy += orthonormal_complement(&f.svd_y.left)? * fmat;
    }
    let cross = wx.tr_mul(&f.x) * f.y.tr_mul(&wy);
    Ok(CcaModel {
        correlations: cross.diagonal().iter().copied().collect(),
        wx,
        wy,
        l,
        mean_x: f.mean_x.clone(),
        mean_y: f.mean_y.clone(),
        variant: CcaVariant::General,
    })
}

/// Least-squares targets (`n x l` each).
#[derive(Debug, Clone, PartialEq)]
pub struct CcaTargets {
    /// `Q2 P2(:, 1:l) S(1:l)^-1`, regressed on `X^T`.
    pub tx: DenseMatrix,
    /// `Q1 P1(:, 1:l) S(1:l)^-1`, regressed on `Y^T`.
    pub ty: DenseMatrix,
}

fn scale_columns(mut m: DenseMatrix, factors: &[f64]) -> DenseMatrix {
    for (j, s) in factors.iter().enumerate() {
        m.column_mut(j).scale_mut(*s);
    }
    m
}

fn inverse_correlations(f: &CcaFactorization, l: usize) -> Vec<f64> {
    f.coupling.values.iter().take(l).map(|s| 1.0 / s).collect()
}

pub fn cca_targets(f: &CcaFactorization, l: usize) -> Result<CcaTargets> {
    check_l(l, f.m, "number of nonzero canonical correlations")?;
    let inv = inverse_correlations(f, l);
    let tx = scale_columns(&f.svd_y.right * f.coupling.p2.columns(0, l), &inv);
    let ty = scale_columns(&f.svd_x.right * f.coupling.p1.columns(0, l), &inv);
    Ok(CcaTargets { tx, ty })
}

/// The targets in their pseudoinverse form,
/// `Tx = Y^T [(Y Y^T)^(1/2)]^+ V1 P2(:, 1:l) S^-1`, computed from an
/// eigendecomposition of `Y Y^T` rather than from the stored SVDs.
pub fn targets_via_pseudoinverse(f: &CcaFactorization, l: usize) -> Result<CcaTargets> {
    check_l(l, f.m, "number of nonzero canonical correlations")?;
    let inv = inverse_correlations(f, l);
    let half_pinv = |data: &DenseMatrix, rank: usize| -> Result<DenseMatrix> {
        let eig = sym_eig(&(data * data.transpose()), crate::matops::DEFAULT_RANK_TOL)?;
        let mut scaled = eig.vectors.columns(0, rank).into_owned();
        for j in 0..rank {
            scaled.column_mut(j).scale_mut(1.0 / eig.values[j].sqrt());
        }
        Ok(&scaled * eig.vectors.columns(0, rank).transpose())
    };
    let tx = f.y.transpose()
        * half_pinv(&f.y, f.s)?
        * &f.svd_y.left
        * f.coupling.p2.columns(0, l);
    let ty = f.x.transpose()
        * half_pinv(&f.x, f.r)?
        * &f.svd_x.left
        * f.coupling.p1.columns(0, l);
    Ok(CcaTargets {
        tx: scale_columns(tx, &inv),
        ty: scale_columns(ty, &inv),
    })
}

/// CCA by the two minimum-norm least-squares problems `min ||X^T Wx - Tx||`
/// and `min ||Y^T Wy - Ty||`.
pub fn cca_ls(x: &DenseMatrix, y: &DenseMatrix, l: usize, rank_tol: f64) -> Result<CcaModel> {
    let f = factorize(x, y, rank_tol)?;
    cca_ls_factored(&f, l)
}

pub fn cca_ls_factored(f: &CcaFactorization, l: usize) -> Result<CcaModel> {
    let targets = cca_targets(f, l)?;
    let wx = pinv_times(&f.svd_x.transpose(), &targets.tx)?;
    let wy = pinv_times(&f.svd_y.transpose(), &targets.ty)?;
    let mut model = CcaModel {
        wx,
        wy,
        correlations: f.coupling.values.iter().take(l).copied().collect(),
        l,
        mean_x: f.mean_x.clone(),
        mean_y: f.mean_y.clone(),
        variant: CcaVariant::LeastSquares,
    };
    model.align_signs();
    Ok(model)
}

/// Sparse CCA: `l1`-penalized versions of the two least-squares problems,
/// solved by fixed-point continuation.
pub fn scca_ls(
    x: &DenseMatrix,
    y: &DenseMatrix,
    l: usize,
    lambdas_x: &[f64],
    lambdas_y: &[f64],
    config: &FpcConfig,
) -> Result<CcaModel> {
    let f = factorize(x, y, crate::matops::DEFAULT_RANK_TOL)?;
    scca_ls_factored(&f, l, lambdas_x, lambdas_y, config, None)
}

/// [`scca_ls`] on an existing factorization, optionally warm-starting the
/// two solvers from `(Wx0, Wy0)`.
pub fn scca_ls_factored(
    f: &CcaFactorization,
    l: usize,
    lambdas_x: &[f64],
    lambdas_y: &[f64],
    config: &FpcConfig,
    start: Option<(&DenseMatrix, &DenseMatrix)>,
) -> Result<CcaModel> {
    let targets = cca_targets(f, l)?;
    let px = L1LsProblem::new(f.x.clone(), targets.tx, lambdas_x.to_vec())?;
    let py = L1LsProblem::new(f.y.clone(), targets.ty, lambdas_y.to_vec())?;
    let zero_x = DenseMatrix::zeros(f.d1(), l);
    let zero_y = DenseMatrix::zeros(f.d2(), l);
    let (sx, sy) = start.unwrap_or((&zero_x, &zero_y));
    let (fit_x, fit_y) = rayon::join(
        || fpc_solve_from(&px, config, sx),
        || fpc_solve_from(&py, config, sy),
    );
    let (fit_x, fit_y) = (fit_x?, fit_y?);
    let wx = fit_x.solution.clone();
    let wy = fit_y.solution.clone();
    let correlations = empirical_correlations(&f.x, &f.y, &wx, &wy);
    let mut model = CcaModel {
        wx,
        wy,
        correlations,
        l,
        mean_x: f.mean_x.clone(),
        mean_y: f.mean_y.clone(),
        variant: CcaVariant::Sparse(Box::new(SparseFit {
            lambdas_x: lambdas_x.to_vec(),
            lambdas_y: lambdas_y.to_vec(),
            fit_x,
            fit_y,
        })),
    };
    model.align_signs();
    Ok(model)
}

/// Pearson correlation of each projected pair `X^T Wx(:, i)`, `Y^T Wy(:, i)`.
pub fn empirical_correlations(
    x: &DenseMatrix,
    y: &DenseMatrix,
    wx: &DenseMatrix,
    wy: &DenseMatrix,
) -> Vec<f64> {
    let px = x.tr_mul(wx);
    let py = y.tr_mul(wy);
    (0..wx.ncols())
        .map(|i| pearson(px.column(i).as_slice(), py.column(i).as_slice()))
        .collect()
}

/// `(Wx^T (x_new - mean_x), Wy^T (y_new - mean_y))`, one column per sample.
pub fn project(
    model: &CcaModel,
    x_new: &DenseMatrix,
    y_new: Option<&DenseMatrix>,
) -> Result<(DenseMatrix, Option<DenseMatrix>)> {
    let side = |w: &DenseMatrix, mean: &DVector<f64>, data: &DenseMatrix, name: &str| {
        if data.nrows() != w.nrows() {
            return Err(Error::invalid(format!(
                "{name} has {} features, model expects {}",
                data.nrows(),
                w.nrows()
            )));
        }
        check_finite(data, name)?;
        Ok(w.tr_mul(&subtract_means(data, mean)))
    };
    let px = side(&model.wx, &model.mean_x, x_new, "x")?;
    let py = y_new
        .map(|y| side(&model.wy, &model.mean_y, y, "y"))
        .transpose()?;
    Ok((px, py))
}

/// `||W^T A A^T W - I_l||_F / sqrt(l)` for `l = W.ncols()`.
///
/// `data` is the (centered) matrix whose columns are samples; pass a Gram
/// matrix to measure the dual constraint `W^T K^2 W = I`.
pub fn orth_violation(w: &DenseMatrix, data: &DenseMatrix) -> Result<f64> {
    if w.nrows() != data.nrows() {
        return Err(Error::invalid(format!(
            "transform has {} rows, data has {} features",
            w.nrows(),
            data.nrows()
        )));
    }
    let l = w.ncols();
    if l == 0 {
        return Ok(0.0);
    }
    let proj = data.tr_mul(w);
    let gram = proj.tr_mul(&proj);
    Ok((gram - DenseMatrix::identity(l, l)).norm() / (l as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrthBound {
    /// Uses the subgradient support size.
    pub tight: f64,
    /// Worst case over all supports.
    pub loose: f64,
}

/// Upper bound on `orth_violation` of an `l1`-penalized solution.
pub fn orth_bound(
    lambda: f64,
    sigma_min_nonzero: f64,
    d1: usize,
    l: usize,
    nnz_subgradient: usize,
) -> Result<OrthBound> {
    if sigma_min_nonzero.is_nan() || sigma_min_nonzero <= 0.0 {
        return Err(Error::invalid("smallest singular value must be positive"));
    }
    if l == 0 || nnz_subgradient > d1 * l {
        return Err(Error::invalid(format!(
            "subgradient support {nnz_subgradient} exceeds d1 * l = {}",
            d1 * l
        )));
    }
    let ratio = lambda / sigma_min_nonzero;
    let nx = nnz_subgradient as f64;
    let lf = l as f64;
    let d = d1 as f64;
    Ok(OrthBound {
        tight: ratio / lf.sqrt() * (2.0 * nx.sqrt() + ratio * nx),
        loose: ratio * d.sqrt() * (2.0 + ratio * (lf * d).sqrt()),
    })
}

/// Nonzero entries of the subgradient `G = -grad / lambda` recovered from a
/// solver's final gradient.
pub fn subgradient_support(final_gradient: &DenseMatrix, lambdas: &[f64]) -> usize {
    final_gradient
        .column_iter()
        .zip(lambdas)
        .map(|(c, lambda)| c.iter().filter(|g| g.abs() > 1e-12 * lambda).count())
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    use crate::fpc::max_lambda;
    use crate::matops::DEFAULT_RANK_TOL;

    fn random(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DenseMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
    }

    fn same_up_to_column_sign(a: &DenseMatrix, b: &DenseMatrix, tol: f64) -> bool {
        a.column_iter().zip(b.column_iter()).all(|(ca, cb)| {
            (ca - cb).amax() <= tol * cb.amax().max(1.0) || (ca + cb).amax() <= tol * cb.amax().max(1.0)
        })
    }

    #[test]
    fn self_coupling_gives_unit_correlations() {
        let x = random(3, 12, 1);
        let f = factorize(&x, &x, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(f.m, 3);
        assert_eq!(f.groups, vec![3]);
        for v in f.coupling.values.iter() {
            assert_abs_diff_eq!(*v, 1.0, epsilon = 1e-10);
        }
        let model = cca_exact(&f, 3).unwrap();
        for c in &model.correlations {
            assert_abs_diff_eq!(*c, 1.0, epsilon = 1e-10);
        }
        let t = cca_targets(&f, 1).unwrap();
        assert!(same_up_to_column_sign(&t.tx, &t.ty, 1e-8));
        let ls = cca_ls(&x, &x, 1, DEFAULT_RANK_TOL).unwrap();
        let (px, py) = project(&ls, &x, Some(&x)).unwrap();
        assert!((px - py.unwrap()).amax() < 1e-8);
    }

    #[test]
    fn orthogonal_row_spaces_have_no_coupling() {
        // Samples supported on disjoint, mean-free coordinate patterns.
        let mut x = DenseMatrix::zeros(1, 8);
        let mut y = DenseMatrix::zeros(1, 8);
        for (j, v) in [1.0, -1.0, 1.0, -1.0].iter().enumerate() {
            x[(0, j)] = *v;
            y[(0, 4 + j)] = *v;
        }
        let f = factorize(&x, &y, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(f.m, 0);
        assert!(cca_targets(&f, 1).is_err());
        assert!(cca_exact(&f, 1).is_ok());
    }

    #[test]
    fn coupling_matches_principal_angle_oracle() {
        let x = random(5, 20, 2);
        let y = random(4, 20, 3);
        let f = factorize(&x, &y, DEFAULT_RANK_TOL).unwrap();
        // Independent route: orthonormal bases from symmetric eigensolves of
        // the sample Gram matrices, then the SVD of their product.
        let basis = |a: &DenseMatrix| {
            let c = center_columns(a);
            let eig = nalgebra::SymmetricEigen::new(c.transpose() * &c);
            let mut idx: Vec<usize> = (0..20).collect();
            idx.sort_by(|p, q| eig.eigenvalues[*q].total_cmp(&eig.eigenvalues[*p]));
            DenseMatrix::from_fn(20, a.nrows(), |i, j| eig.eigenvectors[(i, idx[j])])
        };
        let cosines = nalgebra::SVD::new(basis(&x).transpose() * basis(&y), false, false)
            .singular_values;
        let mut expected: Vec<f64> = cosines.iter().copied().collect();
        expected.sort_by(|a, b| b.total_cmp(a));
        for (got, want) in f.coupling.values.iter().zip(&expected) {
            assert_abs_diff_eq!(*got, *want, epsilon = 1e-8);
        }
        assert!(f.coupling.values.iter().all(|v| *v >= 0.0 && *v <= 1.0 + 1e-10));
    }

    #[test]
    fn factorize_errors() {
        assert!(matches!(
            factorize(&random(2, 5, 1), &random(2, 6, 2), DEFAULT_RANK_TOL),
            Err(Error::InvalidInput(_))
        ));
        let constant = DenseMatrix::from_element(2, 6, 3.0);
        assert!(matches!(
            factorize(&constant, &random(2, 6, 2), DEFAULT_RANK_TOL),
            Err(Error::DegenerateData(_))
        ));
    }

    #[test]
    fn exact_solution_attains_trace_identity() {
        let x = random(6, 25, 4);
        let y = random(5, 25, 5);
        let f = factorize(&x, &y, DEFAULT_RANK_TOL).unwrap();
        for l in 1..=f.t {
            let m = cca_exact(&f, l).unwrap();
            assert_abs_diff_eq!(f.objective(&m.wx, &m.wy), f.optimal_objective(l), epsilon = 1e-8);
            assert!(orth_violation(&m.wx, &f.x).unwrap() <= 1e-8);
            assert!(orth_violation(&m.wy, &f.y).unwrap() <= 1e-8);
        }
        assert!(cca_exact(&f, 0).is_err());
        assert!(cca_exact(&f, f.t + 1).is_err());
    }

    #[test]
    fn one_dimensional_pair_matches_pearson() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = DenseMatrix::from_fn(1, 40, |_, _| rng.random_range(-2.0..2.0));
        let y = x.map(|v| 2.0 * v) + random(1, 40, 7) * 0.1;
        let f = factorize(&x, &y, DEFAULT_RANK_TOL).unwrap();
        let m = cca_exact(&f, 1).unwrap();
        let r = pearson(x.row(0).transpose().as_slice(), y.row(0).transpose().as_slice());
        assert_abs_diff_eq!(m.correlations[0], r.abs(), epsilon = 1e-10);
    }

    #[test]
    fn targets_agree_in_both_forms() {
        let x = random(4, 15, 8);
        let y = random(6, 15, 9);
        let f = factorize(&x, &y, DEFAULT_RANK_TOL).unwrap();
        let reduced = cca_targets(&f, f.m).unwrap();
        let pinv = targets_via_pseudoinverse(&f, f.m).unwrap();
        assert!((&reduced.tx - &pinv.tx).amax() <= 1e-8);
        assert!((&reduced.ty - &pinv.ty).amax() <= 1e-8);
        for (j, s) in f.coupling.values.iter().take(f.m).enumerate() {
            assert_abs_diff_eq!(reduced.tx.column(j).norm(), 1.0 / s, epsilon = 1e-8);
        }
        // Normal-equation consistency: X Tx = U1 S1 P1(:, 1:l).
        let lhs = &f.x * &reduced.tx;
        let mut rhs = f.svd_x.left.clone();
        for (j, s) in f.svd_x.singular_values.iter().enumerate() {
            rhs.column_mut(j).scale_mut(*s);
        }
        let rhs = rhs * f.coupling.p1.columns(0, f.m);
        assert!((lhs - rhs).amax() <= 1e-8);
        assert!(reduced.tx.iter().all(|v| v.is_finite()));
        assert!(cca_targets(&f, f.m + 1).is_err());
    }

    #[test]
    fn least_squares_equals_exact_solution() {
        for seed in 0..10 {
            let x = random(5, 18, 100 + seed);
            let y = random(4, 18, 200 + seed);
            let f = factorize(&x, &y, DEFAULT_RANK_TOL).unwrap();
            let exact = cca_exact(&f, f.m).unwrap();
            let ls = cca_ls_factored(&f, f.m).unwrap();
            assert!((&exact.wx - &ls.wx).amax() <= 1e-8 * exact.wx.amax());
            assert!((&exact.wy - &ls.wy).amax() <= 1e-8 * exact.wy.amax());
        }
    }

    #[test]
    fn rank_deficient_views_use_minimum_norm_solutions() {
        // d1 > n - 1 forces a nontrivial U2 block.
        let x = random(12, 8, 10);
        let y = random(3, 8, 11);
        let f = factorize(&x, &y, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(f.r, 7);
        let ls = cca_ls_factored(&f, f.m).unwrap();
        // Minimum norm: no component outside range(X).
        let u2 = orthonormal_complement(&f.svd_x.left).unwrap();
        assert!(u2.tr_mul(&ls.wx).amax() < 1e-10);
        assert!(orth_violation(&ls.wx, &f.x).unwrap() <= 1e-8);
    }

    #[test]
    fn exchange_symmetry() {
        let x = random(4, 16, 12);
        let y = random(3, 16, 13);
        let a = cca_exact(&factorize(&x, &y, DEFAULT_RANK_TOL).unwrap(), 3).unwrap();
        let b = cca_exact(&factorize(&y, &x, DEFAULT_RANK_TOL).unwrap(), 3).unwrap();
        for (p, q) in a.correlations.iter().zip(&b.correlations) {
            assert_abs_diff_eq!(*p, *q, epsilon = 1e-10);
        }
        assert!(same_up_to_column_sign(&a.wx, &b.wy, 1e-8));
        assert!(same_up_to_column_sign(&a.wy, &b.wx, 1e-8));
    }

    #[test]
    fn sample_relabeling_leaves_correlations_unchanged() {
        let x = random(4, 14, 14);
        let y = random(4, 14, 15);
        let mut order: Vec<usize> = (0..14).collect();
        order.reverse();
        order.swap(2, 9);
        let perm = |m: &DenseMatrix| DenseMatrix::from_fn(m.nrows(), 14, |i, j| m[(i, order[j])]);
        let a = factorize(&x, &y, DEFAULT_RANK_TOL).unwrap();
        let b = factorize(&perm(&x), &perm(&y), DEFAULT_RANK_TOL).unwrap();
        for (p, q) in a.coupling.values.iter().zip(b.coupling.values.iter()) {
            assert_abs_diff_eq!(*p, *q, epsilon = 1e-10);
        }
    }

    #[test]
    fn general_solution_canonical_representative() {
        let x = random(5, 20, 16);
        let y = random(4, 20, 17);
        let f = factorize(&x, &y, DEFAULT_RANK_TOL).unwrap();
        let l = 2;
        let gen = general_solution(
            &f,
            l,
            &DenseMatrix::identity(l, l),
            &Completion::None,
            &DenseMatrix::zeros(f.d1() - f.r, l),
            &DenseMatrix::zeros(f.d2() - f.s, l),
        )
        .unwrap();
        let mut gen = gen;
        gen.align_signs();
        let exact = cca_exact(&f, l).unwrap();
        assert!((&gen.wx - &exact.wx).amax() < 1e-12);
        assert!((&gen.wy - &exact.wy).amax() < 1e-12);
    }

    #[test]
    fn general_solution_rejects_wrong_blocks() {
        let x = random(3, 10, 18);
        let y = random(3, 10, 19);
        let f = factorize(&x, &y, DEFAULT_RANK_TOL).unwrap();
        let zx = DenseMatrix::zeros(0, 2);
        let not_orthogonal = DenseMatrix::from_element(2, 2, 1.0);
        assert!(general_solution(&f, 2, &not_orthogonal, &Completion::None, &zx, &zx).is_err());
        let g = DenseMatrix::identity(1, 1);
        assert!(general_solution(&f, 2, &DenseMatrix::identity(2, 2), &Completion::Partial(g), &zx, &zx)
            .is_err());
        assert!(general_solution(&f, 2, &DenseMatrix::identity(2, 2), &Completion::None, &DenseMatrix::zeros(1, 2), &zx)
            .is_err());
    }

    #[test]
    fn sparse_with_tiny_lambda_matches_least_squares() {
        let x = random(4, 30, 20);
        let y = random(3, 30, 21);
        let f = factorize(&x, &y, DEFAULT_RANK_TOL).unwrap();
        let ls = cca_ls_factored(&f, 2).unwrap();
        let cfg = FpcConfig { xtol: 1e-10, max_iters: 100_000, ..FpcConfig::default() };
        let sparse = scca_ls_factored(&f, 2, &[1e-9; 2], &[1e-9; 2], &cfg, None).unwrap();
        assert!((&sparse.wx - &ls.wx).amax() <= 1e-3 * ls.wx.amax());
        assert!((&sparse.wy - &ls.wy).amax() <= 1e-3 * ls.wy.amax());
        for (a, b) in sparse.correlations.iter().zip(&ls.correlations) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-3);
        }
    }

    #[test]
    fn huge_lambda_zeroes_and_flags_columns() {
        let x = random(5, 20, 22);
        let y = random(4, 20, 23);
        let f = factorize(&x, &y, DEFAULT_RANK_TOL).unwrap();
        let t = cca_targets(&f, 2).unwrap();
        let lx: Vec<f64> = (0..2)
            .map(|i| max_lambda(&f.x, &t.tx.column(i).into_owned()).unwrap())
            .collect();
        let ly = vec![1e-3; 2];
        let model = scca_ls_factored(&f, 2, &[lx[0], 1e-3], &ly, &FpcConfig::default(), None).unwrap();
        assert!(model.wx.column(0).iter().all(|v| *v == 0.0));
        let CcaVariant::Sparse(fit) = &model.variant else { panic!("sparse variant expected") };
        assert_eq!(fit.zero_columns_x(), vec![true, false]);
        assert_eq!(model.correlations[0], 0.0);
    }

    #[test]
    fn sparse_recovers_planted_support() {
        // Only features 0..3 of x carry the shared signal.
        let n = 200;
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let mut x = random(50, n, 25);
        for j in 0..n {
            for i in 0..3 {
                x[(i, j)] += 3.0 * z[j];
            }
        }
        let mut y = random(5, n, 26) * 0.5;
        for j in 0..n {
            y[(0, j)] += z[j];
        }
        let f = factorize(&x, &y, DEFAULT_RANK_TOL).unwrap();
        let t = cca_targets(&f, 1).unwrap();
        let ml = max_lambda(&f.x, &t.tx.column(0).into_owned()).unwrap();
        let model = scca_ls_factored(&f, 1, &[0.3 * ml], &[1e-3], &FpcConfig::default(), None).unwrap();
        let support: Vec<usize> = (0..50).filter(|i| model.wx[(*i, 0)] != 0.0).collect();
        assert!(support.iter().filter(|i| **i < 3).count() >= 1);
        let zeros = model.wx.iter().filter(|v| **v == 0.0).count();
        assert!(zeros as f64 / 50.0 >= 0.8, "support {support:?}");
        assert!(support.iter().filter(|i| **i >= 3).count() <= 7);
    }

    #[test]
    fn optimal_gradient_is_shared_by_different_starts() {
        let x = random(12, 10, 27);
        let y = random(4, 10, 28);
        let f = factorize(&x, &y, DEFAULT_RANK_TOL).unwrap();
        let l = 2;
        let cfg = FpcConfig { xtol: 1e-12, max_iters: 200_000, ..FpcConfig::default() };
        let lam = [1e-2; 2];
        let a = scca_ls_factored(&f, l, &lam, &lam, &cfg, None).unwrap();
        let (s1, s2) = (random(12, l, 29), random(4, l, 30));
        let b = scca_ls_factored(&f, l, &lam, &lam, &cfg, Some((&s1, &s2))).unwrap();
        let t = cca_targets(&f, l).unwrap();
        let xt = &f.x * &t.tx;
        let xx = &f.x * f.x.transpose();
        // Columns may have been sign-aligned independently; compare after undoing.
        let ga = &xx * &a.wx;
        let gb = &xx * &b.wx;
        assert!((&ga - &gb).norm() <= 1e-4 * xt.norm());
        let q = |w: &DenseMatrix, d: &DenseMatrix| {
            let p = d.tr_mul(w);
            p.tr_mul(&p)
        };
        assert!((q(&a.wx, &f.x) - q(&b.wx, &f.x)).amax() <= 1e-3);
        assert!((q(&a.wy, &f.y) - q(&b.wy, &f.y)).amax() <= 1e-3);
        let cross = |m: &CcaModel| m.wx.tr_mul(&f.x) * f.y.tr_mul(&m.wy);
        assert!((cross(&a) - cross(&b)).amax() <= 1e-3);
    }

    #[test]
    fn projection_examples() {
        let x = random(4, 30, 31);
        let y = random(3, 30, 32);
        let f = factorize(&x, &y, DEFAULT_RANK_TOL).unwrap();
        let m = cca_exact(&f, 3).unwrap();
        let (px, py) = project(&m, &x, Some(&y)).unwrap();
        let py = py.unwrap();
        for i in 0..3 {
            let r = pearson(px.row(i).transpose().as_slice(), py.row(i).transpose().as_slice());
            assert_abs_diff_eq!(r, m.correlations[i], epsilon = 1e-8);
        }
        let at_mean = DenseMatrix::from_column_slice(4, 1, m.mean_x.as_slice());
        let (p0, none) = project(&m, &at_mean, None).unwrap();
        assert!(none.is_none());
        assert!(p0.amax() < 1e-12);
        assert!(project(&m, &random(5, 2, 1), None).is_err());
    }

    #[test]
    fn held_out_correlations_drop() {
        let mut lower = 0;
        for seed in 0..10 {
            let z = random(2, 80, 300 + seed);
            let make = |d: usize, s: u64| {
                let a = random(d, 2, s);
                &a * &z + random(d, 80, s + 1000) * 1.5
            };
            let x = make(6, 400 + seed);
            let y = make(5, 500 + seed);
            let train = |m: &DenseMatrix| m.columns(0, 40).into_owned();
            let test = |m: &DenseMatrix| m.columns(40, 40).into_owned();
            let f = factorize(&train(&x), &train(&y), DEFAULT_RANK_TOL).unwrap();
            let model = cca_exact(&f, 1).unwrap();
            let (px, py) = project(&model, &test(&x), Some(&test(&y))).unwrap();
            let r = pearson(px.row(0).transpose().as_slice(), py.unwrap().row(0).transpose().as_slice());
            if r < model.correlations[0] {
                lower += 1;
            }
        }
        assert!(lower >= 8, "held-out correlation dropped on {lower}/10 seeds");
    }

    #[test]
    fn orth_violation_examples() {
        let x = random(3, 10, 33);
        assert_abs_diff_eq!(orth_violation(&DenseMatrix::zeros(3, 2), &x).unwrap(), 1.0, epsilon = 1e-15);
        assert!(orth_violation(&DenseMatrix::zeros(2, 2), &x).is_err());
    }

    #[test]
    fn orth_bound_examples() {
        assert_eq!(orth_bound(0.0, 2.0, 5, 2, 3).unwrap().tight, 0.0);
        let b = orth_bound(1.5, 1.5, 4, 1, 1).unwrap();
        assert_abs_diff_eq!(b.tight, 3.0, epsilon = 1e-15);
        assert!(b.tight <= b.loose);
        assert!(orth_bound(1.0, 0.0, 4, 1, 1).is_err());
        assert!(orth_bound(1.0, 1.0, 4, 1, 5).is_err());
    }

    #[test]
    fn sparse_solution_respects_deviation_bound() {
        let x = random(6, 40, 34);
        let y = random(5, 40, 35);
        let f = factorize(&x, &y, DEFAULT_RANK_TOL).unwrap();
        let l = 3;
        let lam = 1e-2;
        let m = scca_ls_factored(&f, l, &[lam; 3], &[lam; 3], &FpcConfig::default(), None).unwrap();
        let CcaVariant::Sparse(fit) = &m.variant else { unreachable!() };
        let nnz = subgradient_support(&fit.fit_x.final_gradient, &fit.lambdas_x);
        let bound = orth_bound(lam, f.svd_x.smallest_nonzero().unwrap(), f.d1(), l, nnz).unwrap();
        let err = orth_violation(&m.wx, &f.x).unwrap();
        assert!(err <= bound.tight, "{err} > {}", bound.tight);
    }
}
