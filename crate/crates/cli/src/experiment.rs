//! Experiment orchestration: load or generate data, train, project, score.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sparse_cca::cca::{self, CcaModel, CcaVariant};
use sparse_cca::eval::{self, CvOutcome};
use sparse_cca::fpc::FpcConfig;
use sparse_cca::kcca::{self, KccaModel, KccaVariant, ProjectionInput, View};
use sparse_cca::kernels::{center_test, center_train, cross_gram, default_sigma, gram, GramMatrix, KernelSpec};
use sparse_cca::matops::{center_columns, DEFAULT_RANK_TOL};
use sparse_cca::{DenseMatrix, Error};

use crate::config::{
    kernel_label, DataSource, ExperimentConfig, FileFormat, KernelChoice, LSetting, Method, Regularizer,
    SigmaSetting,
};
use crate::error::{CliError, CliResult, Context};
use crate::io::{format_dense, format_value, load_dense, load_sparse_triplets};
use crate::synth::{labels_to_indicator, synth_nonlinear, synth_paired_topics};

/// Training and optional test views. Precomputed-kernel views hold Gram
/// matrices (`n x n` for training, `n x N` cross kernels for test).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DenseMatrix,
    pub y: DenseMatrix,
    pub x_test: Option<DenseMatrix>,
    pub y_test: Option<DenseMatrix>,
    pub labels: Option<Vec<usize>>,
    pub labels_test: Option<Vec<usize>>,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.x.ncols()
    }
}

fn split(m: DenseMatrix, n: usize) -> (DenseMatrix, Option<DenseMatrix>) {
    if m.ncols() == n {
        return (m, None);
    }
    let test = m.columns(n, m.ncols() - n).into_owned();
    (m.columns(0, n).into_owned(), Some(test))
}

fn load_labels(path: &Path) -> CliResult<Vec<usize>> {
    let m = load_dense(path, false)?;
    m.iter()
        .map(|v| {
            if *v >= 0.0 && v.fract() == 0.0 && *v < u32::MAX as f64 {
                Ok(*v as usize)
            } else {
                Err(CliError::format(
                    &path.display().to_string(),
                    0,
                    None,
                    format!("label {v} is not a nonnegative integer"),
                ))
            }
        })
        .collect()
}

pub fn load_dataset(cfg: &ExperimentConfig) -> CliResult<Dataset> {
    match &cfg.data {
        DataSource::Nonlinear { n, n_test, noise } => {
            let (x, y) = synth_nonlinear(n + n_test, *noise, cfg.seed)?;
            let (x, x_test) = split(x, *n);
            let (y, y_test) = split(y, *n);
            Ok(Dataset { x, y, x_test, y_test, labels: None, labels_test: None })
        }
        DataSource::Topics { n, n_test, d1, d2, topics, noise } => {
            let data = synth_paired_topics(n + n_test, *d1, *d2, *topics, *noise, cfg.seed)?;
            let (x, x_test) = split(data.x, *n);
            let (y, y_test) = split(data.y, *n);
            Ok(Dataset { x, y, x_test, y_test, labels: None, labels_test: None })
        }
        DataSource::Files { x, y, x_test, y_test, labels, labels_test, format, header } => {
            let load = |p: &Path| match format {
                FileFormat::Dense => load_dense(p, *header),
                FileFormat::Triplets => load_sparse_triplets(p),
            };
            let xm = load(x)?;
            let labels = labels.as_deref().map(load_labels).transpose()?;
            let ym = match (y, &labels) {
                (Some(p), _) => load(p)?,
                (None, Some(l)) => labels_to_indicator(l)?,
                (None, None) => return Err(CliError::Config("no y view".into())),
            };
            if ym.ncols() != xm.ncols() {
                return Err(Error::InvalidInput(format!(
                    "x has {} samples, y has {}",
                    xm.ncols(),
                    ym.ncols()
                )))
                .context("load data");
            }
            Ok(Dataset {
                x: xm,
                y: ym,
                x_test: x_test.as_deref().map(load).transpose()?,
                y_test: y_test.as_deref().map(load).transpose()?,
                labels,
                labels_test: labels_test.as_deref().map(load_labels).transpose()?,
            })
        }
    }
}

pub fn resolve_kernel(choice: KernelChoice, sigma: SigmaSetting, data: &DenseMatrix) -> CliResult<KernelSpec> {
    Ok(match choice {
        KernelChoice::Linear => KernelSpec::Linear,
        KernelChoice::Polynomial { gamma1, gamma2, degree } => KernelSpec::Polynomial { gamma1, gamma2, degree },
        KernelChoice::Precomputed => KernelSpec::Precomputed,
        KernelChoice::Gaussian(Some(sigma)) => KernelSpec::Gaussian { sigma },
        KernelChoice::Gaussian(None) => KernelSpec::Gaussian {
            sigma: match sigma {
                SigmaSetting::Value(v) => v,
                SigmaSetting::Mode(mode) => default_sigma(data, mode).context("default_sigma")?,
            },
        },
    })
}

/// A trained model together with what is needed to score it.
#[derive(Debug, Clone)]
pub enum Fitted {
    Primal { model: CcaModel, xc: DenseMatrix, yc: DenseMatrix },
    Dual { model: Box<KccaModel>, kx: GramMatrix, ky: GramMatrix },
}

impl Fitted {
    pub fn transforms(&self) -> (&DenseMatrix, &DenseMatrix) {
        match self {
            Fitted::Primal { model, .. } => (&model.wx, &model.wy),
            Fitted::Dual { model, .. } => (&model.dual_x, &model.dual_y),
        }
    }

    pub fn correlations(&self) -> &[f64] {
        match self {
            Fitted::Primal { model, .. } => &model.correlations,
            Fitted::Dual { model, .. } => &model.correlations,
        }
    }

    pub fn l(&self) -> usize {
        self.transforms().0.ncols()
    }

    pub fn train_projections(&self) -> (DenseMatrix, DenseMatrix) {
        match self {
            Fitted::Primal { model, xc, yc } => (model.wx.tr_mul(xc), model.wy.tr_mul(yc)),
            Fitted::Dual { model, kx, ky } => (model.dual_x.tr_mul(&kx.values), model.dual_y.tr_mul(&ky.values)),
        }
    }

    /// Project new samples (cross Gram matrices for precomputed kernels).
    pub fn project(&self, x: &DenseMatrix, y: Option<&DenseMatrix>) -> CliResult<(DenseMatrix, Option<DenseMatrix>)> {
        match self {
            Fitted::Primal { model, .. } => cca::project(model, x, y).context("cca::project"),
            Fitted::Dual { model, .. } => {
                let one = |view: View, spec: &KernelSpec, m: &DenseMatrix| {
                    let arg = if matches!(spec, KernelSpec::Precomputed) {
                        ProjectionInput::CrossGram(m)
                    } else {
                        ProjectionInput::Data(m)
                    };
                    kcca::kcca_project(model, view, arg).context("kcca::kcca_project")
                };
                let px = one(View::X, &model.view_x.spec, x)?;
                let py = y.map(|y| one(View::Y, &model.view_y.spec, y)).transpose()?;
                Ok((px, py))
            }
        }
    }

    /// `Err` of both transforms against the training data (or Gram matrices).
    pub fn orthogonality_errors(&self) -> CliResult<(f64, f64)> {
        let (a, b) = match self {
            Fitted::Primal { model, xc, yc } => (
                cca::orth_violation(&model.wx, xc),
                cca::orth_violation(&model.wy, yc),
            ),
            Fitted::Dual { model, kx, ky } => (
                cca::orth_violation(&model.dual_x, &kx.values),
                cca::orth_violation(&model.dual_y, &ky.values),
            ),
        };
        Ok((a.context("orth_violation")?, b.context("orth_violation")?))
    }

    /// Solver and regularization details as `(key, value)` pairs.
    pub fn details(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        let mut fits = |fx: &sparse_cca::fpc::FpcResult, fy: &sparse_cca::fpc::FpcResult| {
            out.push(("fpc.converged_x".into(), fx.converged.iter().all(|c| *c).to_string()));
            out.push(("fpc.converged_y".into(), fy.converged.iter().all(|c| *c).to_string()));
            let its = |f: &sparse_cca::fpc::FpcResult| {
                f.iterations.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
            };
            out.push(("fpc.iterations_x".into(), its(fx)));
            out.push(("fpc.iterations_y".into(), its(fy)));
        };
        match self {
            Fitted::Primal { model, .. } => {
                if let CcaVariant::Sparse(fit) = &model.variant {
                    fits(&fit.fit_x, &fit.fit_y);
                }
            }
            Fitted::Dual { model, .. } => match &model.variant {
                KccaVariant::Sparse(fit) => {
                    fits(&fit.fit_x, &fit.fit_y);
                    let join = |v: &[f64]| v.iter().map(|r| format_value(*r)).collect::<Vec<_>>().join(",");
                    out.push(("rho_x".into(), join(&fit.rho_x)));
                    out.push(("rho_y".into(), join(&fit.rho_y)));
                }
                KccaVariant::Regularized { regularized, .. } => {
                    for (i, c) in regularized.iter().enumerate() {
                        out.push((format!("regularized_correlation.{}", i + 1), format_value(*c)));
                    }
                }
                KccaVariant::Exact => {}
            },
        }
        out
    }
}

fn gram_for(spec: &KernelSpec, data: &DenseMatrix) -> CliResult<GramMatrix> {
    let raw = match spec {
        KernelSpec::Precomputed => GramMatrix::precomputed(data.clone()),
        _ => gram(spec, data),
    }
    .context("kernels::gram")?;
    center_train(&raw).context("kernels::center_train")
}

fn resolve_l(l: LSetting, available: usize) -> usize {
    match l {
        LSetting::Count(l) => l,
        LSetting::All => available,
    }
}

/// Train the configured method on one training set.
pub fn fit(
    method: Method,
    l: LSetting,
    regularizer: &Regularizer,
    kernels: (&KernelSpec, &KernelSpec),
    x: &DenseMatrix,
    y: &DenseMatrix,
) -> CliResult<Fitted> {
    let config = FpcConfig::default();
    if !method.is_kernel() {
        let f = cca::factorize(x, y, DEFAULT_RANK_TOL).context("cca::factorize")?;
        let l = resolve_l(l, f.m);
        let model = match (method, regularizer) {
            (Method::Cca, _) => cca::cca_exact(&f, l).context("cca::cca_exact")?,
            (Method::Scca, Regularizer::Lambda(lambda)) => {
                let lambdas = broadcast(lambda, l)?;
                cca::scca_ls_factored(&f, l, &lambdas, &lambdas, &config, None).context("cca::scca_ls")?
            }
            _ => return Err(CliError::Config(format!("method {method} needs a lambda"))),
        };
        return Ok(Fitted::Primal { model, xc: center_columns(x), yc: center_columns(y) });
    }
    let kx = gram_for(kernels.0, x)?;
    let ky = gram_for(kernels.1, y)?;
    let f = kcca::kcca_factorize(&kx, &ky, DEFAULT_RANK_TOL).context("kcca::kcca_factorize")?;
    let l = resolve_l(l, f.m_hat);
    let model = match (method, regularizer) {
        (Method::Kcca, _) => kcca::kcca_exact(&f, l).context("kcca::kcca_exact")?,
        (Method::Rkcca, Regularizer::Rho(rho)) => kcca::rkcca(&f, l, *rho, *rho).context("kcca::rkcca")?,
        (Method::Skcca, Regularizer::Gamma(gx, gy)) => kcca::skcca(&f, l, *gx, *gy, &config).context("kcca::skcca")?,
        (Method::Skcca, Regularizer::Rho(rho)) => {
            kcca::skcca_with_rho(&f, l, &vec![*rho; l], &vec![*rho; l], &config).context("kcca::skcca_with_rho")?
        }
        _ => return Err(CliError::Config(format!("method {method} has no matching regularizer"))),
    };
    Ok(Fitted::Dual { model: Box::new(model), kx, ky })
}

fn broadcast(values: &[f64], l: usize) -> CliResult<Vec<f64>> {
    match values.len() {
        1 => Ok(vec![values[0]; l]),
        len if len == l => Ok(values.to_vec()),
        len => Err(CliError::Config(format!("{len} lambda values for l = {l}"))),
    }
}

/// One row of the results table.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRecord {
    pub method: Method,
    pub l: usize,
    /// `("aroc" | "accuracy", value)` when test data allow it.
    pub score: Option<(String, f64)>,
    pub corr_sum: f64,
    /// `"test"` or `"train"`.
    pub corr_sum_data: String,
    /// Correlations reported by the model.
    pub correlations: Vec<f64>,
    /// Pearson correlations of the training projection pairs.
    pub train_pearson: Vec<f64>,
    pub sparsity: (f64, f64),
    pub err: (f64, f64),
    pub parameters: Vec<(String, String)>,
    pub wall_time: f64,
}

impl ResultRecord {
    /// Machine-readable `key=value` lines. Wall time is left out so that
    /// repeated runs are byte-identical.
    pub fn to_key_value(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "method={}", self.method);
        let _ = writeln!(s, "l={}", self.l);
        for (k, v) in &self.parameters {
            let _ = writeln!(s, "{k}={v}");
        }
        if let Some((name, v)) = &self.score {
            let _ = writeln!(s, "{name}={}", format_value(*v));
        }
        let _ = writeln!(s, "corr_sum={}", format_value(self.corr_sum));
        let _ = writeln!(s, "corr_sum_data={}", self.corr_sum_data);
        for (i, c) in self.correlations.iter().enumerate() {
            let _ = writeln!(s, "correlation.{}={}", i + 1, format_value(*c));
        }
        for (i, c) in self.train_pearson.iter().enumerate() {
            let _ = writeln!(s, "train_pearson.{}={}", i + 1, format_value(*c));
        }
        let _ = writeln!(s, "sparsity_x={}", format_value(self.sparsity.0));
        let _ = writeln!(s, "sparsity_y={}", format_value(self.sparsity.1));
        let _ = writeln!(s, "err_x={}", format_value(self.err.0));
        let _ = writeln!(s, "err_y={}", format_value(self.err.1));
        s
    }

    pub fn table_header() -> String {
        format!(
            "{:<8} {:>10} {:>10} {:>8} {:>8} {:>10} {:>10} {:>4} {:>9}",
            "method", "score", "corr", "spars_x", "spars_y", "err_x", "err_y", "l", "time_s"
        )
    }

    pub fn table_row(&self) -> String {
        let score = self
            .score
            .as_ref()
            .map(|(_, v)| format!("{v:.4}"))
            .unwrap_or_else(|| "-".into());
        format!(
            "{:<8} {:>10} {:>10.4} {:>8.4} {:>8.4} {:>10.4} {:>10.4} {:>4} {:>9.4}",
            self.method.name(),
            score,
            self.corr_sum,
            self.sparsity.0,
            self.sparsity.1,
            self.err.0,
            self.err.1,
            self.l,
            self.wall_time
        )
    }
}

/// Held-out score used for model selection and `l` sweeps.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub score: Option<(String, f64)>,
    pub corr_sum: f64,
    pub corr_sum_data: String,
    pub test_pairs: Option<(DenseMatrix, DenseMatrix)>,
}

impl Evaluation {
    /// The task score if there is one, the correlation sum otherwise.
    pub fn primary(&self) -> (String, f64) {
        self.score.clone().unwrap_or_else(|| ("corr_sum".into(), self.corr_sum))
    }
}

pub fn evaluate(fitted: &Fitted, data: &Dataset) -> CliResult<Evaluation> {
    let (train_x, train_y) = fitted.train_projections();
    let mut score = None;
    let mut test_pairs = None;
    if let Some(xt) = &data.x_test {
        let (px, py) = fitted.project(xt, data.y_test.as_ref())?;
        if let (Some(labels), Some(truth)) = (&data.labels, &data.labels_test) {
            let pred = eval::knn1_classify(&train_x, labels, &px).context("eval::knn1_classify")?;
            score = Some(("accuracy".to_string(), eval::accuracy(&pred, truth).context("eval::accuracy")?));
        }
        if let Some(py) = py {
            if data.labels.is_none() {
                let r = eval::retrieval_aroc(&px, &py).context("eval::retrieval_aroc")?;
                score = Some(("aroc".to_string(), r.mean_aroc));
            }
            test_pairs = Some((px, py));
        }
    }
    let (corr_sum, corr_sum_data) = match &test_pairs {
        Some((px, py)) => (eval::corr_sum(px, py).context("eval::corr_sum")?, "test"),
        None => (eval::corr_sum(&train_x, &train_y).context("eval::corr_sum")?, "train"),
    };
    Ok(Evaluation {
        score,
        corr_sum,
        corr_sum_data: corr_sum_data.into(),
        test_pairs,
    })
}

/// Everything a run produces; files are written by [`write_outputs`].
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub record: ResultRecord,
    pub fitted: Fitted,
    pub cv: Option<CvOutcome>,
    /// `(file name, contents)`.
    pub files: Vec<(String, String)>,
}

fn resolved_kernels(cfg: &ExperimentConfig, data: &Dataset) -> CliResult<(KernelSpec, KernelSpec)> {
    if !cfg.method.is_kernel() {
        return Ok((KernelSpec::Linear, KernelSpec::Linear));
    }
    Ok((
        resolve_kernel(cfg.kernel_x, cfg.sigma, &data.x)?,
        resolve_kernel(cfg.kernel_y, cfg.sigma, &data.y)?,
    ))
}

fn regularizer_for(method: Method, value: f64) -> CliResult<Regularizer> {
    match method {
        Method::Scca => Ok(Regularizer::Lambda(vec![value])),
        Method::Rkcca => Ok(Regularizer::Rho(value)),
        Method::Skcca => Ok(Regularizer::Gamma(value, value)),
        Method::Cca | Method::Kcca => Err(CliError::Config(format!("method {method} has nothing to cross-validate"))),
    }
}

fn take_columns(m: &DenseMatrix, idx: &[usize]) -> DenseMatrix {
    DenseMatrix::from_fn(m.nrows(), idx.len(), |i, j| m[(i, idx[j])])
}

fn take_block(m: &DenseMatrix, rows: &[usize], cols: &[usize]) -> DenseMatrix {
    DenseMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

/// Restrict a view to training indices and held-out indices.
fn fold_view(m: &DenseMatrix, spec: &KernelSpec, train: &[usize], test: &[usize]) -> (DenseMatrix, DenseMatrix) {
    if matches!(spec, KernelSpec::Precomputed) {
        (take_block(m, train, train), take_block(m, train, test))
    } else {
        (take_columns(m, train), take_columns(m, test))
    }
}

/// k-fold cross-validation of the method's regularizer on the training set.
pub fn cross_validate(cfg: &ExperimentConfig, data: &Dataset, grid: &[f64], folds: usize) -> CliResult<CvOutcome> {
    let (kx, ky) = resolved_kernels(cfg, data)?;
    regularizer_for(cfg.method, grid.first().copied().unwrap_or(1.0))?;
    let score = |value: f64, train: &[usize], test: &[usize]| -> sparse_cca::Result<f64> {
        let inner = || -> CliResult<f64> {
            let (xa, xb) = fold_view(&data.x, &kx, train, test);
            let (ya, yb) = fold_view(&data.y, &ky, train, test);
            let fitted = fit(cfg.method, cfg.l, &regularizer_for(cfg.method, value)?, (&kx, &ky), &xa, &ya)?;
            let fold = Dataset {
                x: xa,
                y: ya,
                x_test: Some(xb),
                y_test: if data.labels.is_some() { None } else { Some(yb) },
                labels: data.labels.as_ref().map(|l| train.iter().map(|i| l[*i]).collect()),
                labels_test: data.labels.as_ref().map(|l| test.iter().map(|i| l[*i]).collect()),
            };
            let ev = evaluate(&fitted, &fold)?;
            Ok(if data.labels.is_some() { ev.primary().1 } else { ev.corr_sum })
        };
        inner().map_err(|e| match e {
            CliError::Core { source, .. } => source,
            other => Error::InvalidInput(other.to_string()),
        })
    };
    eval::kfold_cv(data.n(), grid, folds, cfg.seed, score).context("eval::kfold_cv")
}

fn parameter_list(cfg: &ExperimentConfig, kernels: &(KernelSpec, KernelSpec), reg: &Regularizer) -> Vec<(String, String)> {
    let mut p = vec![("seed".to_string(), cfg.seed.to_string())];
    if cfg.method.is_kernel() {
        p.push(("kernel_x".into(), kernel_label(&kernels.0)));
        p.push(("kernel_y".into(), kernel_label(&kernels.1)));
    }
    match reg {
        Regularizer::None => {}
        Regularizer::Lambda(l) => p.push((
            "lambda".into(),
            l.iter().map(|v| format_value(*v)).collect::<Vec<_>>().join(","),
        )),
        Regularizer::Gamma(gx, gy) => {
            p.push(("gamma_x".into(), format_value(*gx)));
            p.push(("gamma_y".into(), format_value(*gy)));
        }
        Regularizer::Rho(r) => p.push(("rho".into(), format_value(*r))),
    }
    p
}

fn pairs_csv(px: &DenseMatrix, py: &DenseMatrix) -> String {
    let l = px.nrows();
    let mut header = Vec::with_capacity(2 * l);
    let mut m = DenseMatrix::zeros(px.ncols(), 2 * l);
    for i in 0..l {
        header.push(format!("x{}", i + 1));
        header.push(format!("y{}", i + 1));
        m.column_mut(2 * i).copy_from(&px.row(i).transpose());
        m.column_mut(2 * i + 1).copy_from(&py.row(i).transpose());
    }
    format_dense(&m, Some(&header))
}

/// Saved model description read back by the `project` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub method: String,
    pub l: usize,
    pub kernel_x: Option<String>,
    pub kernel_y: Option<String>,
}

/// Train, evaluate and assemble the artifacts of one experiment.
pub fn run(cfg: &ExperimentConfig) -> CliResult<RunOutput> {
    let start = Instant::now();
    let data = load_dataset(cfg)?;
    run_on(cfg, &data, start)
}

pub fn run_on(cfg: &ExperimentConfig, data: &Dataset, start: Instant) -> CliResult<RunOutput> {
    let kernels = resolved_kernels(cfg, data)?;
    let (regularizer, cv) = match &cfg.cv {
        Some(settings) => {
            let outcome = cross_validate(cfg, data, &settings.grid, settings.folds)?;
            (regularizer_for(cfg.method, outcome.selected)?, Some(outcome))
        }
        None => (cfg.regularizer.clone(), None),
    };
    let fitted = fit(cfg.method, cfg.l, &regularizer, (&kernels.0, &kernels.1), &data.x, &data.y)?;
    let ev = evaluate(&fitted, data)?;
    let (train_x, train_y) = fitted.train_projections();
    let (wx, wy) = fitted.transforms();
    let train_pearson: Vec<f64> = (0..fitted.l())
        .map(|i| {
            let a: Vec<f64> = train_x.row(i).iter().copied().collect();
            let b: Vec<f64> = train_y.row(i).iter().copied().collect();
            eval::pearson(&a, &b)
        })
        .collect();
    let mut parameters = parameter_list(cfg, &kernels, &regularizer);
    parameters.extend(fitted.details());
    let record = ResultRecord {
        method: cfg.method,
        l: fitted.l(),
        score: ev.score.clone(),
        corr_sum: ev.corr_sum,
        corr_sum_data: ev.corr_sum_data.clone(),
        correlations: fitted.correlations().to_vec(),
        train_pearson,
        sparsity: (eval::sparsity(wx, 0.0), eval::sparsity(wy, 0.0)),
        err: fitted.orthogonality_errors()?,
        parameters,
        wall_time: start.elapsed().as_secs_f64(),
    };

    let mut files = vec![
        ("transform_x.csv".to_string(), format_dense(wx, None)),
        ("transform_y.csv".to_string(), format_dense(wy, None)),
        ("result.txt".to_string(), record.to_key_value()),
        (
            "result_table.txt".to_string(),
            format!("{}\n{}\n", ResultRecord::table_header(), record.table_row()),
        ),
        ("canonical_pairs_train.csv".to_string(), pairs_csv(&train_x, &train_y)),
    ];
    if let Some((px, py)) = &ev.test_pairs {
        files.push(("canonical_pairs_test.csv".to_string(), pairs_csv(px, py)));
    }
    let model_file = ModelFile {
        method: cfg.method.name().to_string(),
        l: fitted.l(),
        kernel_x: cfg.method.is_kernel().then(|| kernel_label(&kernels.0)),
        kernel_y: cfg.method.is_kernel().then(|| kernel_label(&kernels.1)),
    };
    files.push((
        "model.toml".to_string(),
        toml::to_string(&model_file).map_err(|e| CliError::Config(e.to_string()))?,
    ));
    match &fitted {
        Fitted::Primal { model, .. } => {
            for (name, mean) in [("mean_x.csv", &model.mean_x), ("mean_y.csv", &model.mean_y)] {
                let col = DenseMatrix::from_column_slice(mean.len(), 1, mean.as_slice());
                files.push((name.to_string(), format_dense(&col, None)));
            }
        }
        Fitted::Dual { .. } => {
            files.push(("train_x.csv".to_string(), format_dense(&data.x, None)));
            files.push(("train_y.csv".to_string(), format_dense(&data.y, None)));
        }
    }
    if let Some(outcome) = &cv {
        files.push(("cv.csv".to_string(), cv_csv(outcome)));
    }
    Ok(RunOutput { record, fitted, cv, files })
}

pub fn cv_csv(outcome: &CvOutcome) -> String {
    let k = outcome.fold_scores.first().map_or(0, Vec::len);
    let mut header = vec!["candidate".to_string(), "mean".to_string()];
    header.extend((1..=k).map(|f| format!("fold{f}")));
    let m = DenseMatrix::from_fn(outcome.grid.len(), k + 2, |i, j| match j {
        0 => outcome.grid[i],
        1 => outcome.mean_scores[i],
        _ => outcome.fold_scores[i][j - 2],
    });
    format_dense(&m, Some(&header))
}

/// Train and score for every `l` in `1..=l_max`; returns `(l, score)` rows
/// and the score name.
pub fn sweep_l(cfg: &ExperimentConfig, l_max: usize) -> CliResult<(String, Vec<(usize, f64)>)> {
    let data = load_dataset(cfg)?;
    let kernels = resolved_kernels(cfg, &data)?;
    let mut name = String::from("corr_sum");
    let mut rows = Vec::with_capacity(l_max);
    for l in 1..=l_max {
        let fitted = fit(cfg.method, LSetting::Count(l), &cfg.regularizer, (&kernels.0, &kernels.1), &data.x, &data.y)?;
        let (n, v) = evaluate(&fitted, &data)?.primary();
        name = n;
        rows.push((l, v));
    }
    Ok((name, rows))
}

pub fn sweep_csv(name: &str, rows: &[(usize, f64)]) -> String {
    let mut s = format!("l,{name}\n");
    for (l, v) in rows {
        let _ = writeln!(s, "{l},{}", format_value(*v));
    }
    s
}

/// Write all files into `dir`, creating it if needed.
pub fn write_outputs(dir: &Path, files: &[(String, String)]) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    for (name, contents) in files {
        let path = dir.join(name);
        fs::write(&path, contents).map_err(|e| CliError::io(&path, e))?;
    }
    Ok(())
}

/// Project new samples with a model saved by [`run`]. For precomputed
/// kernels `x` and `y` are cross Gram matrices against the training samples.
pub fn project_saved(
    dir: &Path,
    x: &DenseMatrix,
    y: Option<&DenseMatrix>,
) -> CliResult<(DenseMatrix, Option<DenseMatrix>)> {
    let path = dir.join("model.toml");
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let model: ModelFile = toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let wx = load_dense(&dir.join("transform_x.csv"), false)?;
    let wy = load_dense(&dir.join("transform_y.csv"), false)?;
    let (Some(kx), Some(ky)) = (&model.kernel_x, &model.kernel_y) else {
        let mean = |name: &str| -> CliResult<DenseMatrix> { load_dense(&dir.join(name), false) };
        let side = |w: &DenseMatrix, mean: DenseMatrix, data: &DenseMatrix| -> CliResult<DenseMatrix> {
            if data.nrows() != w.nrows() {
                return Err(Error::InvalidInput(format!(
                    "data has {} features, model expects {}",
                    data.nrows(),
                    w.nrows()
                )))
                .context("project");
            }
            let centered = DenseMatrix::from_fn(data.nrows(), data.ncols(), |i, j| data[(i, j)] - mean[(i, 0)]);
            Ok(w.tr_mul(&centered))
        };
        let px = side(&wx, mean("mean_x.csv")?, x)?;
        let py = y.map(|y| side(&wy, mean("mean_y.csv")?, y)).transpose()?;
        return Ok((px, py));
    };
    let side = |label: &str, w: &DenseMatrix, train_file: &str, data: &DenseMatrix| -> CliResult<DenseMatrix> {
        let choice: KernelChoice = label.parse().map_err(CliError::Config)?;
        let spec = resolve_kernel(choice, SigmaSetting::Value(1.0), data)?;
        let train = load_dense(&dir.join(train_file), false)?;
        let k = gram_for(&spec, &train)?;
        let cross = match spec {
            KernelSpec::Precomputed => data.clone(),
            _ => cross_gram(&spec, &train, data).context("kernels::cross_gram")?,
        };
        Ok(w.tr_mul(&center_test(&k, &cross).context("kernels::center_test")?))
    };
    let px = side(kx, &wx, "train_x.csv", x)?;
    let py = y.map(|y| side(ky, &wy, "train_y.csv", y)).transpose()?;
    Ok((px, py))
}
