//! Fixed-point continuation for multi-column `l1`-regularized least squares.
//!
//! Each target column `t_i` defines an independent problem
//!
//! ```text
//! min_w  1/2 ||A^T w - t_i||^2 + lambda_i ||w||_1
//! ```
//!
//! solved by the iteration `w <- S_{tau lambda_i}(w - tau A (A^T w - t_i))`
//! where `S` is soft-thresholding. The step is `1 / lambda_max(A A^T)` by
//! default. With Barzilai-Borwein steps enabled the step is the BB ratio,
//! accepted under a nonmonotone sufficient-decrease test against the last
//! few objective values and halved toward the default step otherwise.
//! Continuation solves a decreasing sequence of regularizers ending at
//! `lambda_i`, warm-starting each stage from the previous one.

use std::collections::VecDeque;

use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matops::{check_finite, thin_svd, DenseMatrix, DEFAULT_RANK_TOL};

const BB_MAX_STEP_FACTOR: f64 = 1e10;
const NONMONOTONE_MEMORY: usize = 10;
const SUFFICIENT_DECREASE: f64 = 1e-4;
const RESIDUAL_TOL: f64 = 1e-4;
const GRAM_LIMIT: usize = 1 << 24;

/// `sign(w) * max(|w| - nu, 0)`, returning an exact zero inside the threshold.
#[inline]
pub fn soft_threshold(w: f64, nu: f64) -> f64 {
    if w > nu {
        w - nu
    } else if w < -nu {
        w + nu
    } else {
        0.0
    }
}

pub fn soft_threshold_matrix(w: &DenseMatrix, nu: f64) -> DenseMatrix {
    w.map(|v| soft_threshold(v, nu))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSize {
    /// `1 / lambda_max(A A^T)`.
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FpcConfig {
    pub step: StepSize,
    /// Stop when `||w_{k+1} - w_k|| / max(||w_k||, 1)` falls below this.
    pub xtol: f64,
    /// Iteration budget per column, shared by all continuation stages.
    pub max_iters: usize,
    pub use_bb_steps: bool,
    pub continuation_stages: usize,
    pub continuation_factor: f64,
    /// Keep the per-iteration objective of every column.
    pub record_history: bool,
}

impl Default for FpcConfig {
    fn default() -> Self {
        Self {
            step: StepSize::Auto,
            xtol: 1e-5,
            max_iters: 10_000,
            use_bb_steps: true,
            continuation_stages: 4,
            continuation_factor: 4.0,
            record_history: false,
        }
    }
}

impl FpcConfig {
    /// Plain fixed-point iteration: fixed default step, no continuation.
    pub fn plain() -> Self {
        Self {
            use_bb_steps: false,
            continuation_stages: 1,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.xtol > 0.0 && self.xtol.is_finite()) {
            return Err(Error::invalid("xtol must be positive"));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be at least 1"));
        }
        if self.continuation_stages == 0 {
            return Err(Error::invalid("continuation_stages must be at least 1"));
        }
        if !(self.continuation_factor > 1.0 && self.continuation_factor.is_finite()) {
            return Err(Error::invalid("continuation_factor must exceed 1"));
        }
        Ok(())
    }
}

/// Problem `min 1/2 ||A^T W - T||_F^2 + sum_i lambda_i ||W_i||_1`.
///
/// `a` is `d x p` (solutions live in `R^d`), `targets` is `p x k`.
#[derive(Debug, Clone, PartialEq)]
pub struct L1LsProblem {
    pub a: DenseMatrix,
    pub targets: DenseMatrix,
    pub lambdas: Vec<f64>,
}

impl L1LsProblem {
    pub fn new(a: DenseMatrix, targets: DenseMatrix, lambdas: Vec<f64>) -> Result<Self> {
        check_finite(&a, "design matrix")?;
        check_finite(&targets, "targets")?;
        if targets.nrows() != a.ncols() {
            return Err(Error::invalid(format!(
                "targets have {} rows but the design has {} samples",
                targets.nrows(),
                a.ncols()
            )));
        }
        if lambdas.len() != targets.ncols() {
            return Err(Error::invalid(format!(
                "{} regularizers for {} target columns",
                lambdas.len(),
                targets.ncols()
            )));
        }
        if let Some(bad) = lambdas.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
            return Err(Error::invalid(format!("regularizer {bad} is not positive")));
        }
        Ok(Self { a, targets, lambdas })
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn columns(&self) -> usize {
        self.targets.ncols()
    }

    /// `A (A^T W - T)`.
    pub fn gradient(&self, w: &DenseMatrix) -> DenseMatrix {
        &self.a * (self.a.tr_mul(w) - &self.targets)
    }

    /// Per-column objective value.
    pub fn objective(&self, w: &DenseMatrix) -> Vec<f64> {
        let resid = self.a.tr_mul(w) - &self.targets;
        (0..self.columns())
            .map(|i| {
                0.5 * resid.column(i).norm_squared() + self.lambdas[i] * w.column(i).lp_norm(1)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FpcResult {
    /// `d x k`, one column per target.
    pub solution: DenseMatrix,
    pub iterations: Vec<usize>,
    pub converged: Vec<bool>,
    /// `A (A^T W - T)` at the returned solution.
    pub final_gradient: DenseMatrix,
    pub objective: Vec<f64>,
    /// Objective after every iteration, per column (only when requested).
    pub history: Option<Vec<Vec<f64>>>,
}

impl FpcResult {
    /// Columns that came back identically zero.
    pub fn zero_columns(&self) -> Vec<bool> {
        self.solution
            .column_iter()
            .map(|c| c.iter().all(|v| *v == 0.0))
            .collect()
    }
}

/// `||A t||_inf`: every `lambda` at or above it makes `w = 0` optimal.
pub fn max_lambda(a: &DenseMatrix, t: &DVector<f64>) -> Result<f64> {
    if t.len() != a.ncols() {
        return Err(Error::invalid(format!(
            "target of length {} against design with {} samples",
            t.len(),
            a.ncols()
        )));
    }
    Ok((a * t).amax())
}

/// Largest eigenvalue of `A A^T`.
pub fn lipschitz_constant(a: &DenseMatrix) -> Result<f64> {
    let svd = thin_svd(a, DEFAULT_RANK_TOL)?;
    match svd.largest() {
        Some(s) if s > 0.0 => Ok(s * s),
        _ => Err(Error::invalid("design matrix is zero")),
    }
}

/// `1 / lambda_max(A A^T)`, inside the convergent interval `(0, 2 / lambda_max)`.
pub fn default_step(a: &DenseMatrix) -> Result<f64> {
    Ok(1.0 / lipschitz_constant(a)?)
}

/// Max violation of the subgradient optimality condition, per column.
pub fn optimality_residual(problem: &L1LsProblem, w: &DenseMatrix) -> Result<Vec<f64>> {
    if w.shape() != (problem.dim(), problem.columns()) {
        return Err(Error::invalid(format!(
            "solution is {}x{}, expected {}x{}",
            w.nrows(),
            w.ncols(),
            problem.dim(),
            problem.columns()
        )));
    }
    let g = problem.gradient(w);
    Ok((0..problem.columns())
        .map(|i| column_residual(g.column(i).iter(), w.column(i).iter(), problem.lambdas[i]))
        .collect())
}

fn column_residual<'a>(
    g: impl Iterator<Item = &'a f64>,
    w: impl Iterator<Item = &'a f64>,
    lambda: f64,
) -> f64 {
    g.zip(w)
        .map(|(gj, wj)| {
            if *wj != 0.0 {
                (gj + lambda * wj.signum()).abs()
            } else {
                (gj.abs() - lambda).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

pub fn fpc_solve(problem: &L1LsProblem, config: &FpcConfig) -> Result<FpcResult> {
    let start = DenseMatrix::zeros(problem.dim(), problem.columns());
    fpc_solve_from(problem, config, &start)
}

/// Like [`fpc_solve`] but starting from `start` instead of zero.
pub fn fpc_solve_from(
    problem: &L1LsProblem,
    config: &FpcConfig,
    start: &DenseMatrix,
) -> Result<FpcResult> {
    config.validate()?;
    if start.shape() != (problem.dim(), problem.columns()) {
        return Err(Error::invalid("warm start has the wrong shape"));
    }
    let lipschitz = lipschitz_constant(&problem.a)?;
    let step = match config.step {
        StepSize::Auto => 1.0 / lipschitz,
        StepSize::Fixed(tau) => {
            if !(tau > 0.0 && tau < 2.0 / lipschitz) {
                return Err(Error::invalid(format!(
                    "step {tau} outside (0, {})",
                    2.0 / lipschitz
                )));
            }
            tau
        }
    };
    let design = Design::new(&problem.a);
    let solver = ColumnSolver { problem, config, design: &design, lipschitz, step };

    let outcomes: Vec<Result<ColumnOutcome>> = (0..problem.columns())
        .into_par_iter()
        .map(|i| solver.solve(i, start.column(i).into_owned()))
        .collect();

    let d = problem.dim();
    let k = problem.columns();
    let mut solution = DenseMatrix::zeros(d, k);
    let mut final_gradient = DenseMatrix::zeros(d, k);
    let mut iterations = Vec::with_capacity(k);
    let mut converged = Vec::with_capacity(k);
    let mut objective = Vec::with_capacity(k);
    let mut history = config.record_history.then(Vec::new);
    for (i, outcome) in outcomes.into_iter().enumerate() {
        let out = outcome?;
        solution.set_column(i, &out.w);
        final_gradient.set_column(i, &out.gradient);
        iterations.push(out.iterations);
        converged.push(out.converged);
        objective.push(out.objective);
        if let Some(h) = history.as_mut() {
            h.push(out.history);
        }
    }
    Ok(FpcResult {
        solution,
        iterations,
        converged,
        final_gradient,
        objective,
        history,
    })
}

struct ColumnOutcome {
    w: DVector<f64>,
    gradient: DVector<f64>,
    iterations: usize,
    converged: bool,
    objective: f64,
    history: Vec<f64>,
}

/// `A^T` with contiguous columns, plus `A A^T` when it fits in memory, so
/// both the residual and the gradient cost only `O(nnz(w))` columns.
struct Design {
    at: DenseMatrix,
    gram: Option<DenseMatrix>,
}

impl Design {
    fn new(a: &DenseMatrix) -> Self {
        let gram = (a.nrows() * a.nrows() <= GRAM_LIMIT).then(|| a * a.transpose());
        Self { at: a.transpose(), gram }
    }

    fn residual(&self, w: &DVector<f64>, t: &DVector<f64>) -> DVector<f64> {
        let mut r = -t;
        for (j, wj) in w.iter().enumerate() {
            if *wj != 0.0 {
                r.axpy(*wj, &self.at.column(j), 1.0);
            }
        }
        r
    }

    /// `A r` given `w` and `r = A^T w - t`; `b = A t`.
    fn gradient(&self, w: &DVector<f64>, r: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
        match &self.gram {
            Some(m) => {
                let mut g = -b;
                for (j, wj) in w.iter().enumerate() {
                    if *wj != 0.0 {
                        g.axpy(*wj, &m.column(j), 1.0);
                    }
                }
                g
            }
            None => self.at.tr_mul(r),
        }
    }
}

struct ColumnSolver<'a> {
    problem: &'a L1LsProblem,
    config: &'a FpcConfig,
    design: &'a Design,
    lipschitz: f64,
    step: f64,
}

impl ColumnSolver<'_> {
    fn solve(&self, col: usize, mut w: DVector<f64>) -> Result<ColumnOutcome> {
        let cfg = self.config;
        let t = self.problem.targets.column(col).into_owned();
        let b = &self.problem.a * &t;
        let lambda = self.problem.lambdas[col];
        let residual_tol = RESIDUAL_TOL * (1.0 + t.norm());
        let max_step = BB_MAX_STEP_FACTOR / self.lipschitz;
        let objective = |r: &DVector<f64>, w: &DVector<f64>, lam: f64| 0.5 * r.norm_squared() + lam * w.lp_norm(1);

        let mut r = self.design.residual(&w, &t);
        let mut gradient = self.design.gradient(&w, &r, &b);
        let mut tau = self.step;
        let mut iterations = 0;
        let mut converged = false;
        let mut history = Vec::new();

        'stages: for stage in 0..cfg.continuation_stages {
            let remaining = (cfg.continuation_stages - 1 - stage) as i32;
            let stage_lambda = lambda * cfg.continuation_factor.powi(remaining);
            let final_stage = remaining == 0;
            let mut recent = VecDeque::with_capacity(NONMONOTONE_MEMORY);
            recent.push_back(objective(&r, &w, stage_lambda));

            while iterations < cfg.max_iters {
                let reference = recent.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let (w_next, r_next, f_next) = loop {
                    let nu = tau * stage_lambda;
                    let trial = (&w - tau * &gradient).map(|v| soft_threshold(v, nu));
                    if !trial.iter().all(|v| v.is_finite()) {
                        return Err(Error::NumericalFailure(format!(
                            "non-finite iterate in column {col} after {iterations} iterations"
                        )));
                    }
                    let r_trial = self.design.residual(&trial, &t);
                    let f_trial = objective(&r_trial, &trial, stage_lambda);
                    let sufficient = reference - SUFFICIENT_DECREASE / (2.0 * tau) * (&trial - &w).norm_squared();
                    if tau <= self.step || f_trial <= sufficient {
                        break (trial, r_trial, f_trial);
                    }
                    tau = (tau / 2.0).max(self.step);
                };
                let g_next = self.design.gradient(&w_next, &r_next, &b);
                let step_vec = &w_next - &w;
                let change = step_vec.norm() / w.norm().max(1.0);
                if cfg.use_bb_steps {
                    let sy = step_vec.dot(&(&g_next - &gradient));
                    if sy > 0.0 {
                        tau = (step_vec.norm_squared() / sy).clamp(self.step, max_step);
                    }
                }
                debug_assert!(
                    cfg.use_bb_steps || f_next <= recent[recent.len() - 1] + 1e-12 * f_next.abs().max(1.0),
                    "objective increased with a fixed step"
                );
                w = w_next;
                r = r_next;
                gradient = g_next;
                iterations += 1;
                if recent.len() == NONMONOTONE_MEMORY {
                    recent.pop_front();
                }
                recent.push_back(f_next);
                if cfg.record_history {
                    history.push(f_next);
                }

                if change < cfg.xtol {
                    if !final_stage {
                        continue 'stages;
                    }
                    let residual = column_residual(gradient.iter(), w.iter(), lambda);
                    if residual <= residual_tol {
                        converged = true;
                        break 'stages;
                    }
                }
            }
            break;
        }

        let r = self.problem.a.tr_mul(&w) - &t;
        Ok(ColumnOutcome {
            objective: objective(&r, &w, lambda),
            gradient: &self.problem.a * r,
            w,
            iterations,
            converged,
            history,
        })
    }
}
