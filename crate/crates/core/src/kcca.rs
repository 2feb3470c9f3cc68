//! Kernel CCA: exact, sparse (l1-penalized dual least squares) and
//! regularized, with projection of new samples through cross kernels.

use std::sync::Arc;

use nalgebra::DVector;

use crate::cca::{align_pair, empirical_correlations, Coupling};
use crate::error::{Error, Result};
use crate::fpc::{fpc_solve, max_lambda, FpcConfig, FpcResult, L1LsProblem};
use crate::kernels::{center_cross, cross_gram, CenteringCache, GramMatrix, KernelSpec};
use crate::matops::{full_svd, sym_eig, DenseMatrix, SymEig};

#[derive(Debug, Clone, PartialEq)]
pub struct KccaFactorization {
    pub kx: GramMatrix,
    pub ky: GramMatrix,
    /// `Kx = U1 P1 U1^T` over the numerical range.
    pub eig_x: SymEig,
    pub eig_y: SymEig,
    /// SVD of `U1^T V1`.
    pub coupling: Coupling,
    pub r_hat: usize,
    pub s_hat: usize,
    pub m_hat: usize,
}

impl KccaFactorization {
    pub fn n(&self) -> usize {
        self.kx.n()
    }

    pub fn u1(&self) -> DenseMatrix {
        self.eig_x.range_vectors()
    }

    pub fn v1(&self) -> DenseMatrix {
        self.eig_y.range_vectors()
    }

    /// Number of coupling values that are numerically 1.
    pub fn unit_correlations(&self, tol: f64) -> usize {
        self.coupling.values.iter().filter(|v| **v >= 1.0 - tol).count()
    }
}

fn require_centered(k: &GramMatrix, name: &str) -> Result<()> {
    if !k.centered || k.cache.is_none() {
        return Err(Error::InvalidState(format!("{name} must be a centered Gram matrix")));
    }
    Ok(())
}

pub fn kcca_factorize(kx: &GramMatrix, ky: &GramMatrix, rank_tol: f64) -> Result<KccaFactorization> {
    require_centered(kx, "kx")?;
    require_centered(ky, "ky")?;
    if kx.n() != ky.n() {
        return Err(Error::invalid(format!(
            "Gram matrices have {} and {} samples",
            kx.n(),
            ky.n()
        )));
    }
    let eig_x = sym_eig(&kx.values, rank_tol)?;
    let eig_y = sym_eig(&ky.values, rank_tol)?;
    if eig_x.numeric_rank == 0 || eig_y.numeric_rank == 0 {
        return Err(Error::DegenerateData("a centered Gram matrix is zero".into()));
    }
    let product = eig_x.range_vectors().tr_mul(&eig_y.range_vectors());
    let full = full_svd(&product)?;
    let m_hat = full.rank_above(rank_tol);
    Ok(KccaFactorization {
        kx: kx.clone(),
        ky: ky.clone(),
        r_hat: eig_x.numeric_rank,
        s_hat: eig_y.numeric_rank,
        m_hat,
        eig_x,
        eig_y,
        coupling: Coupling {
            p1: full.left,
            p2: full.right,
            values: full.singular_values,
        },
    })
}

/// Everything needed to center and project new samples of one view.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelView {
    pub spec: KernelSpec,
    /// Training samples; `None` for precomputed kernels.
    pub source: Option<Arc<DenseMatrix>>,
    pub cache: CenteringCache,
}

impl KernelView {
    fn from_gram(k: &GramMatrix) -> Self {
        Self {
            spec: k.spec,
            source: k.source.clone(),
            cache: k.cache.clone().expect("centered Gram matrix has a cache"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseKernelFit {
    /// Multipliers used to derive `rho`, when given that way.
    pub gamma: Option<(f64, f64)>,
    pub rho_x: Vec<f64>,
    pub rho_y: Vec<f64>,
    pub fit_x: FpcResult,
    pub fit_y: FpcResult,
}

#[derive(Debug, Clone, PartialEq)]
pub enum KccaVariant {
    Exact,
    /// `regularized` holds the singular values of the shrunken coupling; the
    /// model's `correlations` are the empirical training ones.
    Regularized {
        rho_x: f64,
        rho_y: f64,
        regularized: Vec<f64>,
    },
    Sparse(Box<SparseKernelFit>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct KccaModel {
    /// `n x l`.
    pub dual_x: DenseMatrix,
    /// `n x l`.
    pub dual_y: DenseMatrix,
    pub correlations: Vec<f64>,
    pub l: usize,
    pub view_x: KernelView,
    pub view_y: KernelView,
    pub variant: KccaVariant,
}

fn check_l(l: usize, upper: usize, what: &str) -> Result<()> {
    if l == 0 || l > upper {
        Err(Error::invalid(format!("l = {l} outside 1..={upper} ({what})")))
    } else {
        Ok(())
    }
}

/// `U1 diag(factors) block`.
fn weighted_basis(vectors: &DenseMatrix, factors: &[f64], block: &DenseMatrix) -> DenseMatrix {
    let mut scaled = vectors.clone();
    for (j, s) in factors.iter().enumerate() {
        scaled.column_mut(j).scale_mut(*s);
    }
    scaled * block
}

fn build_model(
    f: &KccaFactorization,
    mut dual_x: DenseMatrix,
    mut dual_y: DenseMatrix,
    correlations: Vec<f64>,
    variant: KccaVariant,
) -> KccaModel {
    align_pair(&mut dual_x, &mut dual_y);
    KccaModel {
        l: dual_x.ncols(),
        dual_x,
        dual_y,
        correlations,
        view_x: KernelView::from_gram(&f.kx),
        view_y: KernelView::from_gram(&f.ky),
        variant,
    }
}

/// `Wx = U1 P1^-1 P(:, 1:l)`, `Wy = V1 P2^-1 Q(:, 1:l)`.
pub fn kcca_exact(f: &KccaFactorization, l: usize) -> Result<KccaModel> {
    check_l(l, f.r_hat.min(f.s_hat), "min(rank Kx, rank Ky)")?;
    let inv_x: Vec<f64> = f.eig_x.range_values().iter().map(|p| 1.0 / p).collect();
    let inv_y: Vec<f64> = f.eig_y.range_values().iter().map(|p| 1.0 / p).collect();
    let dual_x = weighted_basis(&f.u1(), &inv_x, &f.coupling.p1.columns(0, l).into_owned());
    let dual_y = weighted_basis(&f.v1(), &inv_y, &f.coupling.p2.columns(0, l).into_owned());
    let correlations = f.coupling.values.iter().take(l).copied().collect();
    Ok(build_model(f, dual_x, dual_y, correlations, KccaVariant::Exact))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualTargets {
    /// `U1 P(:, 1:l)`.
    pub tx: DenseMatrix,
    /// `V1 Q(:, 1:l)`.
    pub ty: DenseMatrix,
}

/// Targets of the dual least-squares problems `min ||Kx W - Tx||`.
pub fn dual_targets(f: &KccaFactorization, l: usize) -> Result<DualTargets> {
    check_l(l, f.m_hat, "number of nonzero canonical correlations")?;
    Ok(DualTargets {
        tx: f.u1() * f.coupling.p1.columns(0, l),
        ty: f.v1() * f.coupling.p2.columns(0, l),
    })
}

/// The targets in pseudoinverse form, `Kx Kx^+ V1 Q(:, 1:l) S^-1`, built from
/// the Gram matrices themselves. Agrees with [`dual_targets`] up to the
/// conditioning of the Gram matrices.
pub fn dual_targets_pinv_form(f: &KccaFactorization, l: usize) -> Result<DualTargets> {
    check_l(l, f.m_hat, "number of nonzero canonical correlations")?;
    let inv_sigma: Vec<f64> = f.coupling.values.iter().take(l).map(|s| 1.0 / s).collect();
    let side = |k: &DenseMatrix, eig: &SymEig, other: &DenseMatrix, p: &DenseMatrix| {
        let u = eig.range_vectors();
        let inv: Vec<f64> = eig.range_values().iter().map(|v| 1.0 / v).collect();
        let mut rhs = other * p.columns(0, l);
        for (j, s) in inv_sigma.iter().enumerate() {
            rhs.column_mut(j).scale_mut(*s);
        }
        let pinv_rhs = weighted_basis(&u, &inv, &u.tr_mul(&rhs));
        k * pinv_rhs
    };
    Ok(DualTargets {
        tx: side(&f.kx.values, &f.eig_x, &f.v1(), &f.coupling.p2),
        ty: side(&f.ky.values, &f.eig_y, &f.u1(), &f.coupling.p1),
    })
}

fn check_gamma(gamma: f64, name: &str) -> Result<()> {
    if gamma > 0.0 && gamma < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must lie in (0, 1), got {gamma}")))
    }
}

/// Sparse kernel CCA with per-column penalties
/// `rho_i = gamma * ||Kx^T Tx(:, i)||_inf`.
pub fn skcca(
    f: &KccaFactorization,
    l: usize,
    gamma_x: f64,
    gamma_y: f64,
    config: &FpcConfig,
) -> Result<KccaModel> {
    check_gamma(gamma_x, "gamma_x")?;
    check_gamma(gamma_y, "gamma_y")?;
    skcca_scaled(f, l, gamma_x, gamma_y, config)
}

fn skcca_scaled(
    f: &KccaFactorization,
    l: usize,
    gamma_x: f64,
    gamma_y: f64,
    config: &FpcConfig,
) -> Result<KccaModel> {
    let targets = dual_targets(f, l)?;
    let rhos = |k: &DenseMatrix, t: &DenseMatrix, gamma: f64| -> Result<Vec<f64>> {
        t.column_iter()
            .map(|c| Ok(gamma * max_lambda(k, &c.into_owned())?))
            .collect()
    };
    let rho_x = rhos(&f.kx.values, &targets.tx, gamma_x)?;
    let rho_y = rhos(&f.ky.values, &targets.ty, gamma_y)?;
    solve_sparse(f, targets, rho_x, rho_y, Some((gamma_x, gamma_y)), config)
}

/// Sparse kernel CCA with the penalties given directly.
pub fn skcca_with_rho(
    f: &KccaFactorization,
    l: usize,
    rho_x: &[f64],
    rho_y: &[f64],
    config: &FpcConfig,
) -> Result<KccaModel> {
    let targets = dual_targets(f, l)?;
    solve_sparse(f, targets, rho_x.to_vec(), rho_y.to_vec(), None, config)
}

fn solve_sparse(
    f: &KccaFactorization,
    targets: DualTargets,
    rho_x: Vec<f64>,
    rho_y: Vec<f64>,
    gamma: Option<(f64, f64)>,
    config: &FpcConfig,
) -> Result<KccaModel> {
    let px = L1LsProblem::new(f.kx.values.clone(), targets.tx, rho_x.clone())?;
    let py = L1LsProblem::new(f.ky.values.clone(), targets.ty, rho_y.clone())?;
    let (fit_x, fit_y) = rayon::join(|| fpc_solve(&px, config), || fpc_solve(&py, config));
    let (fit_x, fit_y) = (fit_x?, fit_y?);
    let dual_x = fit_x.solution.clone();
    let dual_y = fit_y.solution.clone();
    let correlations = empirical_correlations(&f.kx.values, &f.ky.values, &dual_x, &dual_y);
    let variant = KccaVariant::Sparse(Box::new(SparseKernelFit {
        gamma,
        rho_x,
        rho_y,
        fit_x,
        fit_y,
    }));
    Ok(build_model(f, dual_x, dual_y, correlations, variant))
}

/// Regularized kernel CCA with Tikhonov terms `rho a^T K a` in the constraints.
pub fn rkcca(f: &KccaFactorization, l: usize, rho_x: f64, rho_y: f64) -> Result<KccaModel> {
    for (rho, name) in [(rho_x, "rho_x"), (rho_y, "rho_y")] {
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::invalid(format!("{name} must be positive, got {rho}")));
        }
    }
    rkcca_unchecked(f, l, rho_x, rho_y)
}

/// [`rkcca`] without the positivity guard, so `rho = 0` can be used as a limit.
pub(crate) fn rkcca_unchecked(f: &KccaFactorization, l: usize, rho_x: f64, rho_y: f64) -> Result<KccaModel> {
    check_l(l, f.m_hat, "number of nonzero canonical correlations")?;
    let pi1 = f.eig_x.range_values();
    let pi2 = f.eig_y.range_values();
    let shrink = |pi: &DVector<f64>, rho: f64| -> Vec<f64> {
        pi.iter().map(|p| (p / (p + rho)).sqrt()).collect()
    };
    let (d1, d2) = (shrink(&pi1, rho_x), shrink(&pi2, rho_y));
    let mut middle = f.u1().tr_mul(&f.v1());
    for (i, s) in d1.iter().enumerate() {
        middle.row_mut(i).scale_mut(*s);
    }
    for (j, s) in d2.iter().enumerate() {
        middle.column_mut(j).scale_mut(*s);
    }
    let svd = full_svd(&middle)?;
    let inv_root = |pi: &DVector<f64>, rho: f64| -> Vec<f64> {
        pi.iter().map(|p| 1.0 / (p * p + rho * p).sqrt()).collect()
    };
    let dual_x = weighted_basis(&f.u1(), &inv_root(&pi1, rho_x), &svd.left.columns(0, l).into_owned());
    let dual_y = weighted_basis(&f.v1(), &inv_root(&pi2, rho_y), &svd.right.columns(0, l).into_owned());
    let regularized: Vec<f64> = svd.singular_values.iter().take(l).copied().collect();
    let correlations = empirical_correlations(&f.kx.values, &f.ky.values, &dual_x, &dual_y);
    let variant = KccaVariant::Regularized {
        rho_x,
        rho_y,
        regularized,
    };
    Ok(build_model(f, dual_x, dual_y, correlations, variant))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum View {
    X,
    Y,
}

/// New samples of one view, either raw or as the uncentered `n x N` cross
/// kernel against the training samples.
#[derive(Debug, Clone, Copy)]
pub enum ProjectionInput<'a> {
    Data(&'a DenseMatrix),
    CrossGram(&'a DenseMatrix),
}

/// `W^T K_t,c` for new samples of the chosen view (`l x N`).
pub fn kcca_project(model: &KccaModel, view: View, input: ProjectionInput<'_>) -> Result<DenseMatrix> {
    let (kv, dual) = match view {
        View::X => (&model.view_x, &model.dual_x),
        View::Y => (&model.view_y, &model.dual_y),
    };
    let cross = match input {
        ProjectionInput::CrossGram(k) => k.clone(),
        ProjectionInput::Data(data) => {
            let source = kv.source.as_ref().ok_or_else(|| {
                Error::invalid("model uses a precomputed kernel; supply the cross Gram matrix")
            })?;
            cross_gram(&kv.spec, source, data)?
        }
    };
    Ok(dual.tr_mul(&center_cross(&kv.cache, &cross)?))
}

/// Guaranteed number of unit canonical correlations, `max(r + s - n, 0)`.
pub fn unit_correlation_floor(r_hat: usize, s_hat: usize, n: usize) -> usize {
    (r_hat + s_hat).saturating_sub(n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::{Cholesky, SymmetricEigen};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    use crate::cca::{cca_exact, factorize, orth_violation, project};
    use crate::eval::pearson;
    use crate::kernels::{center_train, gram, SigmaMode, default_sigma};
    use crate::matops::{center_columns, DEFAULT_RANK_TOL};

    fn random(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DenseMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
    }

    fn centered(spec: KernelSpec, data: &DenseMatrix) -> GramMatrix {
        center_train(&gram(&spec, data).unwrap()).unwrap()
    }

    fn linear_pair(d1: usize, d2: usize, n: usize, seed: u64) -> (DenseMatrix, DenseMatrix, KccaFactorization) {
        let x = random(d1, n, seed);
        let y = random(d2, n, seed + 1);
        let f = kcca_factorize(
            &centered(KernelSpec::Linear, &x),
            &centered(KernelSpec::Linear, &y),
            DEFAULT_RANK_TOL,
        )
        .unwrap();
        (x, y, f)
    }

    fn narrow_gaussian(data: &DenseMatrix) -> GramMatrix {
        let sigma = default_sigma(data, SigmaMode::MinDistance).unwrap();
        centered(KernelSpec::Gaussian { sigma }, data)
    }

    /// Generalized eigenvalues of `[0 C; C^T 0] v = mu diag(B1, B2) v`,
    /// descending, via a Cholesky reduction.
    fn gevp(c: &DenseMatrix, b1: &DenseMatrix, b2: &DenseMatrix) -> Vec<f64> {
        let (p, q) = (b1.nrows(), b2.nrows());
        let mut a = DenseMatrix::zeros(p + q, p + q);
        a.view_mut((0, p), (p, q)).copy_from(c);
        a.view_mut((p, 0), (q, p)).copy_from(&c.transpose());
        let mut b = DenseMatrix::zeros(p + q, p + q);
        b.view_mut((0, 0), (p, p)).copy_from(b1);
        b.view_mut((p, p), (q, q)).copy_from(b2);
        let l = Cholesky::new(b).expect("positive definite").l();
        let linv = l.clone().try_inverse().unwrap();
        let s = &linv * a * linv.transpose();
        let s = (&s + s.transpose()) * 0.5;
        let mut ev: Vec<f64> = SymmetricEigen::new(s).eigenvalues.iter().copied().collect();
        ev.sort_by(|x, y| y.total_cmp(x));
        ev
    }

    /// Orthonormal basis of the mean-free subspace (Helmert contrasts).
    fn helmert(n: usize) -> DenseMatrix {
        DenseMatrix::from_fn(n, n - 1, |i, j| {
            let k = (j + 1) as f64;
            let norm = (k * (k + 1.0)).sqrt();
            if i <= j {
                1.0 / norm
            } else if i == j + 1 {
                -k / norm
            } else {
                0.0
            }
        })
    }

    #[test]
    fn identical_views_couple_perfectly() {
        let x = random(3, 10, 1);
        let k = centered(KernelSpec::Linear, &x);
        let f = kcca_factorize(&k, &k, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(f.m_hat, 3);
        for v in f.coupling.values.iter().take(f.m_hat) {
            assert_abs_diff_eq!(*v, 1.0, epsilon = 1e-10);
        }
        let model = kcca_exact(&f, 3).unwrap();
        for c in &model.correlations {
            assert_abs_diff_eq!(*c, 1.0, epsilon = 1e-10);
        }
        let t = dual_targets(&f, 1).unwrap();
        let u = f.u1();
        let same = (&t.tx - &t.ty).amax() < 1e-8 || (&t.tx + &t.ty).amax() < 1e-8;
        assert!(same);
        // All coupling values tie, so any unit vector of range(U1) is a valid target.
        assert_abs_diff_eq!(t.tx.column(0).norm(), 1.0, epsilon = 1e-10);
        let residual = t.tx.column(0) - &u * u.tr_mul(&t.tx.column(0));
        assert!(residual.amax() < 1e-10);
    }

    #[test]
    fn factorize_guards() {
        let x = random(2, 6, 2);
        let raw = gram(&KernelSpec::Linear, &x).unwrap();
        let c = center_train(&raw).unwrap();
        assert!(matches!(kcca_factorize(&raw, &c, DEFAULT_RANK_TOL), Err(Error::InvalidState(_))));
        let other = centered(KernelSpec::Linear, &random(2, 7, 3));
        assert!(matches!(kcca_factorize(&c, &other, DEFAULT_RANK_TOL), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn narrow_gaussian_kernels_saturate_the_coupling() {
        let n = 14;
        let x = random(3, n, 4);
        let y = random(2, n, 5);
        let f = kcca_factorize(&narrow_gaussian(&x), &narrow_gaussian(&y), DEFAULT_RANK_TOL).unwrap();
        assert_eq!(f.r_hat, n - 1);
        assert_eq!(f.s_hat, n - 1);
        for v in f.coupling.values.iter().take(f.m_hat) {
            assert_abs_diff_eq!(*v, 1.0, epsilon = 1e-6);
        }
        let model = kcca_exact(&f, n - 1).unwrap();
        assert!(model.correlations.iter().all(|c| *c >= 1.0 - 1e-6));
    }

    #[test]
    fn low_rank_coupling_matches_generalized_eigenproblem() {
        // Linear Grams: the dual pencil reduces to the primal one on the data.
        let (x, y, f) = linear_pair(3, 2, 12, 6);
        assert_eq!((f.r_hat, f.s_hat), (3, 2));
        let (xc, yc) = (center_columns(&x), center_columns(&y));
        let ev = gevp(&(&xc * yc.transpose()), &(&xc * xc.transpose()), &(&yc * yc.transpose()));
        for (got, want) in f.coupling.values.iter().zip(&ev) {
            assert_abs_diff_eq!(*got, *want, epsilon = 1e-8);
        }
        assert!(f.coupling.values[0] < 1.0 - 1e-3);
    }

    #[test]
    fn linear_kernel_agrees_with_primal_cca() {
        let (x, y, f) = linear_pair(4, 3, 25, 7);
        let dual = kcca_exact(&f, 3).unwrap();
        let primal = cca_exact(&factorize(&x, &y, DEFAULT_RANK_TOL).unwrap(), 3).unwrap();
        let dx = dual.dual_x.tr_mul(&f.kx.values);
        let dy = dual.dual_y.tr_mul(&f.ky.values);
        let (px, py) = project(&primal, &x, Some(&y)).unwrap();
        let py = py.unwrap();
        for i in 0..3 {
            let a = pearson(dx.row(i).transpose().as_slice(), dy.row(i).transpose().as_slice());
            let b = pearson(px.row(i).transpose().as_slice(), py.row(i).transpose().as_slice());
            assert_abs_diff_eq!(a, b, epsilon = 1e-6);
            assert_abs_diff_eq!(a, dual.correlations[i], epsilon = 1e-6);
        }
        assert!(orth_violation(&dual.dual_x, &f.kx.values).unwrap() <= 1e-6);
        assert!(orth_violation(&dual.dual_y, &f.ky.values).unwrap() <= 1e-6);
        assert!(kcca_exact(&f, 4).is_err());
        assert!(kcca_exact(&f, 0).is_err());
    }

    #[test]
    fn target_forms_agree() {
        for seed in 0..5 {
            let n = 12;
            let (_, _, f) = linear_pair(5, 4, n, 10 + seed);
            let t = dual_targets(&f, f.m_hat).unwrap();
            let p = dual_targets_pinv_form(&f, f.m_hat).unwrap();
            assert!((&t.tx - &p.tx).amax() <= 1e-8);
            assert!((&t.ty - &p.ty).amax() <= 1e-8);
            let l = f.m_hat;
            assert!((t.tx.tr_mul(&t.tx) - DenseMatrix::identity(l, l)).amax() <= 1e-10);
            assert!((t.ty.tr_mul(&t.ty) - DenseMatrix::identity(l, l)).amax() <= 1e-10);
            assert!(dual_targets(&f, f.m_hat + 1).is_err());
        }
    }

    #[test]
    fn unit_floor_formula() {
        assert_eq!(unit_correlation_floor(9, 9, 10), 8);
        assert_eq!(unit_correlation_floor(4, 5, 10), 0);
        assert_eq!(unit_correlation_floor(8, 7, 10), 5);
    }

    #[test]
    fn excess_rank_forces_unit_correlations() {
        for seed in 0..5 {
            let (_, _, f) = linear_pair(8, 7, 10, 20 + seed);
            assert_eq!((f.r_hat, f.s_hat), (8, 7));
            let floor = unit_correlation_floor(f.r_hat, f.s_hat, f.n());
            assert_eq!(floor, 5);
            assert!(f.unit_correlations(1e-8) >= floor);
        }
    }

    #[test]
    fn regularized_matches_its_pencil() {
        let n = 12;
        let x = random(3, n, 30);
        let y = random(3, n, 31);
        let f = kcca_factorize(&narrow_gaussian(&x), &narrow_gaussian(&y), DEFAULT_RANK_TOL).unwrap();
        let z = helmert(n);
        let kx = z.transpose() * &f.kx.values * &z;
        let ky = z.transpose() * &f.ky.values * &z;
        for rho in [0.1, 1.0, 10.0] {
            let model = rkcca(&f, 3, rho, rho).unwrap();
            let KccaVariant::Regularized { regularized, .. } = &model.variant else {
                panic!("wrong variant");
            };
            let ev = gevp(&(&kx * &ky), &(&kx * &kx + &kx * rho), &(&ky * &ky + &ky * rho));
            for (got, want) in regularized.iter().zip(&ev) {
                assert_abs_diff_eq!(*got, *want, epsilon = 1e-8);
            }
            let pearson = empirical_correlations(&f.kx.values, &f.ky.values, &model.dual_x, &model.dual_y);
            assert_eq!(model.correlations, pearson);
            // Regularized constraint W^T (K^2 + rho K) W = I.
            let w = &model.dual_x;
            let k = &f.kx.values;
            let c = w.transpose() * (k * k + k * rho) * w;
            assert!((c - DenseMatrix::identity(3, 3)).amax() <= 1e-8);
        }
    }

    #[test]
    fn regularization_free_limit_is_exact_kcca() {
        let (_, _, f) = linear_pair(4, 3, 15, 32);
        let exact = kcca_exact(&f, 3).unwrap();
        let limit = rkcca_unchecked(&f, 3, 0.0, 0.0).unwrap();
        assert!((&exact.dual_x - &limit.dual_x).amax() <= 1e-8 * exact.dual_x.amax());
        assert!((&exact.dual_y - &limit.dual_y).amax() <= 1e-8 * exact.dual_y.amax());
        assert!(rkcca(&f, 3, 0.0, 1.0).is_err());
        assert!(rkcca(&f, 3, 1.0, -1.0).is_err());
    }

    #[test]
    fn regularized_correlations_decrease_with_rho() {
        let n = 16;
        let x = random(2, n, 33);
        let y = random(2, n, 34);
        let f = kcca_factorize(&narrow_gaussian(&x), &narrow_gaussian(&y), DEFAULT_RANK_TOL).unwrap();
        let grid = [1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0, 1e4, 1e6];
        let series: Vec<Vec<f64>> = grid
            .iter()
            .map(|r| match rkcca(&f, 3, *r, *r).unwrap().variant {
                KccaVariant::Regularized { regularized, .. } => regularized,
                _ => unreachable!(),
            })
            .collect();
        for w in series.windows(2) {
            for (a, b) in w[0].iter().zip(&w[1]) {
                assert!(b <= &(a + 1e-12));
            }
        }
        assert!(series.last().unwrap()[0] < 1.0);
        assert!(series[0][0] > series.last().unwrap()[0]);
    }

    #[test]
    fn sparse_small_gamma_approaches_exact() {
        let (_, _, f) = linear_pair(3, 3, 12, 35);
        let exact = kcca_exact(&f, 2).unwrap();
        let cfg = FpcConfig { xtol: 1e-10, max_iters: 200_000, ..FpcConfig::default() };
        let sparse = skcca(&f, 2, 1e-6, 1e-6, &cfg).unwrap();
        for (a, b) in sparse.correlations.iter().zip(&exact.correlations) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-3);
        }
    }

    #[test]
    fn gamma_guards_and_zero_columns() {
        let (_, _, f) = linear_pair(6, 5, 20, 36);
        assert!(skcca(&f, 2, 0.0, 0.5, &FpcConfig::default()).is_err());
        assert!(skcca(&f, 2, 0.5, 1.0, &FpcConfig::default()).is_err());
        let near = skcca(&f, 2, 0.99, 0.99, &FpcConfig::default()).unwrap();
        let KccaVariant::Sparse(fit) = &near.variant else { unreachable!() };
        assert!(crate::eval::sparsity(&near.dual_x, 0.0) >= 0.5);
        assert_eq!(fit.fit_x.zero_columns().len(), 2);
        // A multiplier of one puts every column at its zero threshold.
        let full = skcca_scaled(&f, 2, 1.0, 1.0, &FpcConfig::default()).unwrap();
        assert!(full.dual_x.iter().all(|v| *v == 0.0));
        assert!(full.dual_y.iter().all(|v| *v == 0.0));
        let KccaVariant::Sparse(fit) = &full.variant else { unreachable!() };
        assert_eq!(fit.fit_x.zero_columns(), vec![true, true]);
    }

    #[test]
    fn rho_entry_point_matches_gamma_entry_point() {
        let (_, _, f) = linear_pair(5, 4, 18, 37);
        let a = skcca(&f, 2, 0.3, 0.4, &FpcConfig::default()).unwrap();
        let KccaVariant::Sparse(fit) = &a.variant else { unreachable!() };
        let b = skcca_with_rho(&f, 2, &fit.rho_x, &fit.rho_y, &FpcConfig::default()).unwrap();
        assert_eq!(a.dual_x, b.dual_x);
        assert_eq!(a.dual_y, b.dual_y);
    }

    #[test]
    fn projection_reproduces_training_scores() {
        let n = 15;
        let x = random(3, n, 38);
        let y = random(2, n, 39);
        let sx = default_sigma(&x, SigmaMode::MaxDistance).unwrap();
        let sy = default_sigma(&y, SigmaMode::MaxDistance).unwrap();
        let kx = centered(KernelSpec::Gaussian { sigma: sx }, &x);
        let ky = centered(KernelSpec::Gaussian { sigma: sy }, &y);
        let f = kcca_factorize(&kx, &ky, DEFAULT_RANK_TOL).unwrap();
        let model = rkcca(&f, 2, 0.1, 0.1).unwrap();
        let train = model.dual_x.tr_mul(&kx.values);
        let again = kcca_project(&model, View::X, ProjectionInput::Data(&x)).unwrap();
        assert!((&train - &again).amax() <= 1e-10);
        let one = x.columns(4, 1).into_owned();
        let single = kcca_project(&model, View::X, ProjectionInput::Data(&one)).unwrap();
        assert!((single.column(0) - train.column(4)).amax() <= 1e-10);
        let trainy = model.dual_y.tr_mul(&ky.values);
        let raw = gram(&KernelSpec::Gaussian { sigma: sy }, &y).unwrap().values;
        let viacross = kcca_project(&model, View::Y, ProjectionInput::CrossGram(&raw)).unwrap();
        assert!((&trainy - &viacross).amax() <= 1e-10);
    }

    #[test]
    fn precomputed_models_need_cross_grams() {
        let x = random(3, 8, 40);
        let raw = gram(&KernelSpec::Linear, &x).unwrap().values;
        let k = center_train(&GramMatrix::precomputed(raw.clone()).unwrap()).unwrap();
        let f = kcca_factorize(&k, &k, DEFAULT_RANK_TOL).unwrap();
        let model = kcca_exact(&f, 2).unwrap();
        assert!(matches!(
            kcca_project(&model, View::X, ProjectionInput::Data(&x)),
            Err(Error::InvalidInput(_))
        ));
        let p = kcca_project(&model, View::X, ProjectionInput::CrossGram(&raw)).unwrap();
        assert!((p - model.dual_x.tr_mul(&k.values)).amax() <= 1e-10);
    }

    #[test]
    fn exchange_symmetry() {
        let (x, y, f) = linear_pair(4, 3, 14, 41);
        let g = kcca_factorize(&f.ky, &f.kx, DEFAULT_RANK_TOL).unwrap();
        let a = kcca_exact(&f, 3).unwrap();
        let b = kcca_exact(&g, 3).unwrap();
        for (p, q) in a.correlations.iter().zip(&b.correlations) {
            assert_abs_diff_eq!(*p, *q, epsilon = 1e-10);
        }
        let close = |p: &DenseMatrix, q: &DenseMatrix| {
            p.column_iter().zip(q.column_iter()).all(|(c, d)| {
                let tol = 1e-8 * d.amax();
                (c - d).amax() <= tol || (c + d).amax() <= tol
            })
        };
        assert!(close(&a.dual_x, &b.dual_y));
        assert!(close(&a.dual_y, &b.dual_x));
        let _ = (x, y);
    }
}
