//! A procedural stand-in for dSprites: binary sprites enumerated over a full
//! grid of ground-truth factors.
//!
//! Factors, in order, are `shape`, `scale`, `x` and `y`; a dataset may use a
//! prefix of this list, missing factors taking a single value. Rendering rule
//! for a factor row `(shape, scale, x, y)` on a `W×W` canvas:
//!
//! * the sprite occupies an `s×s` box with `s = 2 + scale`;
//! * the box's left edge is `round(x·(W − s)/(n_x − 1))` (or centred,
//!   `(W − s)/2`, when there is a single x position); the top edge uses `y`
//!   the same way;
//! * inside the box, pixel `(r, c)` is on for shape 0 (square) always, for
//!   shape 1 (triangle) when `c ≤ r`, for shape 2 (cross) when `r = s/2` or
//!   `c = s/2` (integer division).
//!
//! Rendering does not depend on the seed; the seed only drives splits and
//! evaluation sampling.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::{index, SliceRandom};

use crate::matrix::Matrix;
use crate::rng;
use crate::{Error, Result};

pub const MAX_EXAMPLES: usize = 100_000;
pub const NUM_SHAPES: usize = 3;
/// Upper bound on the evaluation batch size.
pub const DEFAULT_EVAL_EXAMPLES: usize = 5000;

const SPLIT_PURPOSE: u64 = 0x7370_6c74;
const EVAL_PURPOSE: u64 = 0x6576_616c;

/// Default desk-scale factor grid: 3 shapes, 4 scales, 4×4 positions.
pub const DEFAULT_FACTOR_SIZES: [usize; 4] = [3, 4, 4, 4];
pub const DEFAULT_IMAGE_SIZE: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct FactorDataset {
    /// One flattened `image_size²` image per row, values in {0, 1}.
    pub images: Matrix,
    /// Row-major `len × factor_sizes.len()` factor indices.
    pub factors: Vec<usize>,
    pub factor_sizes: Vec<usize>,
    pub image_size: usize,
    pub seed: u64,
}

impl FactorDataset {
    pub fn len(&self) -> usize {
        self.images.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn factor_row(&self, i: usize) -> &[usize] {
        let f = self.factor_sizes.len();
        &self.factors[i * f..(i + 1) * f]
    }
}

fn factor(row: &[usize], k: usize) -> usize {
    row.get(k).copied().unwrap_or(0)
}

fn offset(idx: usize, count: usize, free: usize) -> usize {
    if count <= 1 {
        free / 2
    } else {
        (idx * free + (count - 1) / 2) / (count - 1)
    }
}

fn check_config(factor_sizes: &[usize], image_size: usize) -> Result<usize> {
    if factor_sizes.is_empty() || factor_sizes.len() > 4 {
        return Err(Error::Config(format!("expected 1 to 4 factors, got {}", factor_sizes.len())));
    }
    if factor_sizes.contains(&0) {
        return Err(Error::Config("factor sizes must be positive".into()));
    }
    if image_size < 4 {
        return Err(Error::Config(format!("image size must be at least 4, got {image_size}")));
    }
    if factor_sizes[0] > NUM_SHAPES {
        return Err(Error::Config(format!("at most {NUM_SHAPES} shapes, got {}", factor_sizes[0])));
    }
    let scales = factor_sizes.get(1).copied().unwrap_or(1);
    if 1 + scales > image_size {
        return Err(Error::Config(format!("{scales} scales do not fit a {image_size}px canvas")));
    }
    let total = factor_sizes.iter().try_fold(1usize, |acc, &s| acc.checked_mul(s).filter(|&t| t <= MAX_EXAMPLES));
    total.ok_or_else(|| Error::Config(format!("factor grid exceeds {MAX_EXAMPLES} examples")))
}

/// Renders one factor row to a flattened `image_size²` image.
pub fn render(factor_sizes: &[usize], image_size: usize, row: &[usize]) -> Vec<f64> {
    let w = image_size;
    let shape = factor(row, 0);
    let s = 2 + factor(row, 1);
    let nx = factor_sizes.get(2).copied().unwrap_or(1);
    let ny = factor_sizes.get(3).copied().unwrap_or(1);
    let left = offset(factor(row, 2), nx, w - s);
    let top = offset(factor(row, 3), ny, w - s);
    let mut img = vec![0.0; w * w];
    for r in 0..s {
        for c in 0..s {
            let on = match shape {
                0 => true,
                1 => c <= r,
                _ => r == s / 2 || c == s / 2,
            };
            if on {
                img[(top + r) * w + left + c] = 1.0;
            }
        }
    }
    img
}

/// Enumerates the full factor grid (last factor varying fastest) and renders
/// one image per combination.
pub fn generate_factor_dataset(factor_sizes: &[usize], image_size: usize, seed: u64) -> Result<FactorDataset> {
    let total = check_config(factor_sizes, image_size)?;
    let f = factor_sizes.len();
    let mut factors = Vec::with_capacity(total * f);
    let mut pixels = Vec::with_capacity(total * image_size * image_size);
    let mut row = vec![0usize; f];
    for _ in 0..total {
        factors.extend_from_slice(&row);
        pixels.extend(render(factor_sizes, image_size, &row));
        for k in (0..f).rev() {
            row[k] += 1;
            if row[k] < factor_sizes[k] {
                break;
            }
            row[k] = 0;
        }
    }
    Ok(FactorDataset {
        images: Matrix::from_vec(total, image_size * image_size, pixels)?,
        factors,
        factor_sizes: factor_sizes.to_vec(),
        image_size,
        seed,
    })
}

/// Seeded shuffle then prefix split into `(train, test)` row indices.
pub fn split_train_test(ds: &FactorDataset, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("split fraction must lie in (0, 1), got {fraction}")));
    }
    let mut idx: Vec<usize> = (0..ds.len()).collect();
    idx.shuffle(&mut rng::seeded(seed, SPLIT_PURPOSE));
    let cut = libm::round(fraction * ds.len() as f64) as usize;
    let test = idx.split_off(cut);
    Ok((idx, test))
}

/// Seeded sample of `k` distinct entries of `pool`, without replacement.
pub fn sample_indices(pool: &[usize], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k == 0 || k > pool.len() {
        return Err(Error::Config(format!("cannot draw {k} examples from {}", pool.len())));
    }
    let mut r = rng::seeded(seed, EVAL_PURPOSE);
    Ok(index::sample(&mut r, pool.len(), k).into_iter().map(|i| pool[i]).collect())
}

/// A fixed evaluation batch of `k` images, returned with their row indices.
pub fn eval_batch(ds: &FactorDataset, k: usize, seed: u64) -> Result<(Vec<usize>, Matrix)> {
    let all: Vec<usize> = (0..ds.len()).collect();
    let idx = sample_indices(&all, k, seed)?;
    let m = ds.images.select_rows(&idx);
    Ok((idx, m))
}

pub fn default_eval_size(available: usize) -> usize {
    available.min(DEFAULT_EVAL_EXAMPLES)
}
