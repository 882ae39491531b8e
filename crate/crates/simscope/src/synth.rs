//! Shared-feature benchmark: how CKA and Procrustes similarity react to the
//! number of examples when two matrices share a known fraction of columns.
//!
//! `A` is `n × p` i.i.d. standard normal. `B`, `C` and `D` copy the first
//! 80%, 50% and 0% of `A`'s columns and draw the rest afresh. Every `n` in the
//! sweep uses the leading `n` rows of one set of matrices drawn at the largest
//! `n`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use simscope_core::similarity::similarity;
use simscope_core::{ActivationMatrix, Matrix, Metric};

use crate::{Error, Result};

pub const DEFAULT_P: usize = 50;
pub const DEFAULT_N_SWEEP: [usize; 7] = [50, 100, 250, 500, 1000, 2500, 5000];
/// Fraction of `A`'s columns kept by each matrix.
pub const SHARED_FRACTIONS: [(&str, f64); 4] = [("A", 1.0), ("B", 0.8), ("C", 0.5), ("D", 0.0)];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub p: usize,
    pub n_sweep: Vec<usize>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { p: DEFAULT_P, n_sweep: DEFAULT_N_SWEEP.to_vec(), seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthScore {
    pub left: String,
    pub right: String,
    pub shared_columns: usize,
    pub metric: Metric,
    pub score: f64,
    pub n_examples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTable {
    pub p: usize,
    pub seed: u64,
    pub scores: Vec<SynthScore>,
}

impl SynthTable {
    pub fn get(&self, right: &str, metric: Metric, n: usize) -> Option<f64> {
        self.scores.iter().find(|s| s.right == right && s.metric == metric && s.n_examples == n).map(|s| s.score)
    }
}

fn shared_columns(p: usize, fraction: f64) -> usize {
    (fraction * p as f64).round() as usize
}

pub fn synthetic_benchmark(cfg: &SynthConfig) -> Result<SynthTable> {
    let n_max = cfg.n_sweep.iter().copied().max().ok_or_else(|| Error::Config("empty n sweep".into()))?;
    if cfg.p == 0 {
        return Err(Error::Config("p must be positive".into()));
    }
    if n_max < cfg.p {
        return Err(Error::Config(format!("largest n ({n_max}) must be at least p ({})", cfg.p)));
    }
    if let Some(&n) = cfg.n_sweep.iter().find(|&&n| n < 2) {
        return Err(Error::Config(format!("n = {n} is too small; need at least 2 examples")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let a = Matrix::from_fn(n_max, cfg.p, |_, _| rng.sample(StandardNormal));
    let mut matrices = Vec::new();
    for &(name, fraction) in &SHARED_FRACTIONS {
        let keep = shared_columns(cfg.p, fraction);
        let fresh = Matrix::from_fn(n_max, cfg.p - keep, |_, _| rng.sample(StandardNormal));
        let m = Matrix::from_fn(n_max, cfg.p, |i, j| if j < keep { a[(i, j)] } else { fresh[(i, j - keep)] });
        matrices.push((name, keep, m));
    }

    let mut scores = Vec::new();
    for &n in &cfg.n_sweep {
        let rows: Vec<usize> = (0..n).collect();
        let left = ActivationMatrix::new("A", a.select_rows(&rows))?;
        for (name, keep, m) in &matrices {
            let right = ActivationMatrix::new(*name, m.select_rows(&rows))?;
            for metric in [Metric::Cka, Metric::Procrustes] {
                scores.push(SynthScore {
                    left: "A".into(),
                    right: (*name).into(),
                    shared_columns: *keep,
                    metric,
                    score: similarity(&left, &right, metric)?.value,
                    n_examples: n,
                });
            }
        }
    }
    Ok(SynthTable { p: cfg.p, seed: cfg.seed, scores })
}
