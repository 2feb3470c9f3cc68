//! Metrics and model selection.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matops::DenseMatrix;

pub use crate::cca::orth_violation;

/// ChaCha stream used for fold shuffling.
pub const CV_STREAM: u64 = 1;

/// Fraction of entries with `|w_ij| <= zero_tol`.
pub fn sparsity(w: &DenseMatrix, zero_tol: f64) -> f64 {
    if w.is_empty() {
        return 0.0;
    }
    w.iter().filter(|v| v.abs() <= zero_tol).count() as f64 / w.len() as f64
}

/// Sample Pearson correlation; 0 when either side has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "pearson: length mismatch");
    let n = a.len() as f64;
    if a.is_empty() {
        return 0.0;
    }
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    (sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0)
}

/// Sum over rows of the Pearson correlation between `px` and `py`.
pub fn corr_sum(px: &DenseMatrix, py: &DenseMatrix) -> Result<f64> {
    if px.shape() != py.shape() {
        return Err(Error::invalid(format!(
            "projection shapes differ: {:?} vs {:?}",
            px.shape(),
            py.shape()
        )));
    }
    if px.ncols() < 2 {
        return Err(Error::invalid("corr_sum needs at least two samples"));
    }
    Ok((0..px.nrows())
        .map(|i| {
            let a: Vec<f64> = px.row(i).iter().copied().collect();
            let b: Vec<f64> = py.row(i).iter().copied().collect();
            pearson(&a, &b)
        })
        .sum())
}

/// Area under the ROC curve as the Mann-Whitney statistic, ties counted as half.
pub fn aroc(scores: &[f64], relevant: &[bool]) -> Result<f64> {
    if scores.len() != relevant.len() {
        return Err(Error::invalid("scores and relevance flags differ in length"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::invalid("scores must be finite"));
    }
    let n_rel = relevant.iter().filter(|r| **r).count();
    let n_irr = relevant.len() - n_rel;
    if n_rel == 0 || n_irr == 0 {
        return Err(Error::invalid(
            "need at least one relevant and one irrelevant candidate",
        ));
    }
    // Rank-sum form: sort once, average ranks over tie blocks.
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|a, b| scores[*a].total_cmp(&scores[*b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += avg_rank * order[i..=j].iter().filter(|k| relevant[**k]).count() as f64;
        i = j + 1;
    }
    let (nr, ni) = (n_rel as f64, n_irr as f64);
    Ok((rank_sum - nr * (nr + 1.0) / 2.0) / (nr * ni))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalScore {
    pub per_query_aroc: Vec<f64>,
    pub mean_aroc: f64,
}

fn cosine(a: nalgebra::DVectorView<f64>, b: nalgebra::DVectorView<f64>) -> f64 {
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        a.dot(&b) / (na * nb)
    }
}

/// Cross-modal retrieval: every column of `queries` ranks all columns of
/// `candidates` by cosine similarity; the candidate with the same index is
/// the relevant one.
pub fn retrieval_aroc(queries: &DenseMatrix, candidates: &DenseMatrix) -> Result<RetrievalScore> {
    if queries.shape() != candidates.shape() {
        return Err(Error::invalid(format!(
            "query and candidate projections differ: {:?} vs {:?}",
            queries.shape(),
            candidates.shape()
        )));
    }
    let n = queries.ncols();
    if n < 2 {
        return Err(Error::invalid("retrieval needs at least two pairs"));
    }
    let per_query_aroc = (0..n)
        .into_par_iter()
        .map(|q| {
            let scores: Vec<f64> = (0..n)
                .map(|c| cosine(queries.column(q), candidates.column(c)))
                .collect();
            let relevant: Vec<bool> = (0..n).map(|c| c == q).collect();
            aroc(&scores, &relevant)
        })
        .collect::<Result<Vec<f64>>>()?;
    let mean_aroc = per_query_aroc.iter().sum::<f64>() / n as f64;
    Ok(RetrievalScore {
        per_query_aroc,
        mean_aroc,
    })
}

/// Label of the Euclidean-nearest training column; ties go to the lowest index.
pub fn knn1_classify(
    train_proj: &DenseMatrix,
    labels: &[usize],
    test_proj: &DenseMatrix,
) -> Result<Vec<usize>> {
    if train_proj.ncols() == 0 {
        return Err(Error::invalid("knn1 needs at least one training sample"));
    }
    if labels.len() != train_proj.ncols() {
        return Err(Error::invalid(format!(
            "{} labels for {} training samples",
            labels.len(),
            train_proj.ncols()
        )));
    }
    if train_proj.nrows() != test_proj.nrows() {
        return Err(Error::invalid("training and test projections differ in dimension"));
    }
    Ok(test_proj
        .column_iter()
        .map(|q| {
            let mut best = (f64::INFINITY, 0);
            for (j, c) in train_proj.column_iter().enumerate() {
                let d = (c - q).norm_squared();
                if d < best.0 {
                    best = (d, j);
                }
            }
            labels[best.1]
        })
        .collect())
}

/// Fraction of equal entries.
pub fn accuracy(predicted: &[usize], truth: &[usize]) -> Result<f64> {
    if predicted.len() != truth.len() || truth.is_empty() {
        return Err(Error::invalid("accuracy needs two nonempty label lists of equal length"));
    }
    Ok(predicted.iter().zip(truth).filter(|(a, b)| a == b).count() as f64 / truth.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvOutcome {
    pub grid: Vec<f64>,
    /// `fold_scores[c][f]`: score of candidate `c` on held-out fold `f`.
    pub fold_scores: Vec<Vec<f64>>,
    pub mean_scores: Vec<f64>,
    pub selected_index: usize,
    pub selected: f64,
}

/// Shuffled index list cut into `k` contiguous folds whose sizes differ by at most one.
pub fn cv_folds(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 || k > n {
        return Err(Error::invalid(format!("need 2 <= k <= n, got k = {k}, n = {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(CV_STREAM);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        folds.push(idx[start..start + len].to_vec());
        start += len;
    }
    Ok(folds)
}

/// k-fold cross-validation over a grid of regularization values.
///
/// `score(candidate, train_idx, test_idx)` trains on the training indices and
/// returns a held-out score (higher is better). The folds are shared by all
/// candidates. Among candidates with equal mean score the largest value, i.e.
/// the most strongly regularized one, is selected.
pub fn kfold_cv<F>(n: usize, grid: &[f64], k: usize, seed: u64, score: F) -> Result<CvOutcome>
where
    F: Fn(f64, &[usize], &[usize]) -> Result<f64> + Sync,
{
    if grid.is_empty() {
        return Err(Error::invalid("empty candidate grid"));
    }
    let folds = cv_folds(n, k, seed)?;
    let train_sets: Vec<Vec<usize>> = (0..k)
        .map(|f| {
            let mut train: Vec<usize> = folds
                .iter()
                .enumerate()
                .filter(|(g, _)| *g != f)
                .flat_map(|(_, fold)| fold.iter().copied())
                .collect();
            train.sort_unstable();
            train
        })
        .collect();
    let jobs: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|c| (0..k).map(move |f| (c, f)))
        .collect();
    let flat = jobs
        .par_iter()
        .map(|&(c, f)| {
            let s = score(grid[c], &train_sets[f], &folds[f])?;
            if !s.is_finite() {
                return Err(Error::NumericalFailure(format!(
                    "non-finite cross-validation score for candidate {}",
                    grid[c]
                )));
            }
            Ok(s)
        })
        .collect::<Result<Vec<f64>>>()?;
    let fold_scores: Vec<Vec<f64>> = flat.chunks(k).map(<[f64]>::to_vec).collect();
    let mean_scores: Vec<f64> = fold_scores
        .iter()
        .map(|s| s.iter().sum::<f64>() / k as f64)
        .collect();
    let mut selected_index = 0;
    for c in 1..grid.len() {
        let (best, cur) = (mean_scores[selected_index], mean_scores[c]);
        if cur > best || (cur == best && grid[c] > grid[selected_index]) {
            selected_index = c;
        }
    }
    Ok(CvOutcome {
        grid: grid.to_vec(),
        fold_scores,
        mean_scores,
        selected: grid[selected_index],
        selected_index,
    })
}
