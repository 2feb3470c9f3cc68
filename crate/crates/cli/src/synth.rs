//! Seeded synthetic data sets.
//!
//! All draws come from `ChaCha8Rng` seeded with `seed_from_u64(seed)` on
//! stream [`DATA_STREAM`], so outputs are identical across platforms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sparse_cca::{DenseMatrix, Error};

use crate::error::{CliResult, Context};

pub const DATA_STREAM: u64 = 0;

pub fn data_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(DATA_STREAM);
    rng
}

/// `Z ~ U(-2, 2)`; `X = [Z; Z]`, `Y = [Z^2 + noise e1; sin(pi Z) + noise e2]`.
pub fn synth_nonlinear(n: usize, noise: f64, seed: u64) -> CliResult<(DenseMatrix, DenseMatrix)> {
    if n < 10 {
        return Err(Error::InvalidInput(format!("need n >= 10, got {n}"))).context("synth_nonlinear");
    }
    let mut rng = data_rng(seed);
    let mut x = DenseMatrix::zeros(2, n);
    let mut y = DenseMatrix::zeros(2, n);
    for j in 0..n {
        let z: f64 = rng.random_range(-2.0..2.0);
        let e1: f64 = rng.sample(StandardNormal);
        let e2: f64 = rng.sample(StandardNormal);
        x[(0, j)] = z;
        x[(1, j)] = z;
        y[(0, j)] = z * z + noise * e1;
        y[(1, j)] = (std::f64::consts::PI * z).sin() + noise * e2;
    }
    Ok((x, y))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairedTopics {
    pub x: DenseMatrix,
    pub y: DenseMatrix,
    /// `pairs[i]` is the column of `y` relevant to column `i` of `x`.
    pub pairs: Vec<usize>,
}

/// Two views generated from shared latent topic vectors,
/// `x = A t + noise e`, `y = B t + noise e`, with Gaussian loadings.
pub fn synth_paired_topics(
    n: usize,
    d1: usize,
    d2: usize,
    topics: usize,
    noise: f64,
    seed: u64,
) -> CliResult<PairedTopics> {
    if topics == 0 || topics > d1.min(d2).min(n) {
        return Err(Error::InvalidInput(format!(
            "topics must lie in 1..=min(d1, d2, n), got {topics}"
        )))
        .context("synth_paired_topics");
    }
    let mut rng = data_rng(seed);
    let mut gaussian = |r: usize, c: usize| DenseMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal));
    let a = gaussian(d1, topics);
    let b = gaussian(d2, topics);
    let t = gaussian(topics, n);
    let ex = gaussian(d1, n);
    let ey = gaussian(d2, n);
    Ok(PairedTopics {
        x: &a * &t + ex * noise,
        y: &b * &t + ey * noise,
        pairs: (0..n).collect(),
    })
}

/// Class-indicator view: one 0/1 row per distinct label, in ascending label order.
pub fn labels_to_indicator(labels: &[usize]) -> CliResult<DenseMatrix> {
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::InvalidInput("need at least two classes".into())).context("labels_to_indicator");
    }
    Ok(DenseMatrix::from_fn(classes.len(), labels.len(), |c, j| {
        f64::from(u8::from(labels[j] == classes[c]))
    }))
}
