//! Layer-by-layer comparison of trained runs.

use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use simscope_core::similarity::{average_grids, grid_from_cells, prepare_layers, score_prepared};
use simscope_core::{ActivationMatrix, Metric, SimilarityGrid};

use crate::manifest::check_fingerprints;
use crate::run::RunDir;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// One model at two snapshots.
    Epochs,
    /// One objective at two regularisation strengths.
    Regularisation,
    /// Two objectives at comparable strengths.
    Objectives,
    /// The shared-feature benchmark; see [`crate::synth`].
    Synth,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Epochs => "epochs",
            Mode::Regularisation => "regularisation",
            Mode::Objectives => "objectives",
            Mode::Synth => "synth",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "epochs" => Ok(Mode::Epochs),
            "regularisation" | "regularization" => Ok(Mode::Regularisation),
            "objectives" => Ok(Mode::Objectives),
            "synth" => Ok(Mode::Synth),
            other => Err(Error::Config(format!("unknown mode `{other}`"))),
        }
    }
}

/// Runs are paired by position: `left[i]` with `right[i]`, one pair per seed.
/// An empty `right` in epochs mode compares each run with itself.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPlan {
    pub mode: Mode,
    pub metric: Metric,
    pub left: Vec<PathBuf>,
    pub right: Vec<PathBuf>,
    /// Snapshot step on each side; the final snapshot when absent.
    pub left_step: Option<u64>,
    pub right_step: Option<u64>,
    /// Worker threads for grid cells; `Some(1)` is fully sequential.
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRef {
    pub path: String,
    pub objective: String,
    pub regularisation: f64,
    pub seed: u64,
    pub step: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonResult {
    pub mode: Mode,
    pub eval_fingerprint: String,
    pub pairs: Vec<(RunRef, RunRef)>,
    pub grid: SimilarityGrid,
    /// Cells whose CKA and Procrustes scores disagree; conservative grids only.
    pub flagged: Vec<(String, String)>,
}

fn run_ref(run: &RunDir, step: u64) -> RunRef {
    RunRef {
        path: run.path.display().to_string(),
        objective: run.manifest.objective.kind.as_str().into(),
        regularisation: run.manifest.regularisation,
        seed: run.manifest.seed,
        step,
    }
}

fn resolve_step(run: &RunDir, step: Option<u64>) -> Result<u64> {
    match step {
        None => run.final_step(),
        Some(s) if run.manifest.snapshot(s).is_some() => Ok(s),
        Some(s) => Err(Error::Config(format!("{} has no snapshot at step {s}", run.path.display()))),
    }
}

fn check_pair(mode: Mode, a: &RunDir, b: &RunDir) -> Result<()> {
    let (ma, mb) = (&a.manifest, &b.manifest);
    let fail = |what: &str| {
        Err(Error::Config(format!(
            "{} mode pairs runs with {what}, but {} and {} differ",
            mode.as_str(),
            a.path.display(),
            b.path.display()
        )))
    };
    match mode {
        Mode::Epochs if ma.objective != mb.objective || ma.seed != mb.seed || ma.latent_dim != mb.latent_dim => {
            fail("identical configuration")
        }
        Mode::Regularisation if ma.objective.kind != mb.objective.kind => fail("the same objective"),
        Mode::Synth => Err(Error::Config("synth mode has no runs to compare; use synth-bench".into())),
        _ => Ok(()),
    }
}

/// Scores every layer pair, in parallel unless one thread is requested.
/// Cells are collected in row-major order, so the result does not depend
/// on scheduling.
pub fn grid(
    left: &[ActivationMatrix],
    right: &[ActivationMatrix],
    metric: Metric,
    threads: Option<usize>,
) -> Result<SimilarityGrid> {
    let (a, b, n) = prepare_layers(left, right)?;
    let cols = b.len();
    let cell = |k: usize| score_prepared(&a[k / cols], &b[k % cols], metric);
    let cells = match threads {
        Some(1) => (0..a.len() * cols).map(cell).collect::<simscope_core::Result<Vec<_>>>()?,
        _ => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads.unwrap_or(0))
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            pool.install(|| (0..a.len() * cols).into_par_iter().map(cell).collect::<simscope_core::Result<Vec<_>>>())?
        }
    };
    Ok(grid_from_cells(&a, &b, metric, n, cells))
}

/// Loads each configured pair, computes its grid and averages over pairs.
pub fn run_experiment_matrix(plan: &ExperimentPlan) -> Result<ComparisonResult> {
    if plan.left.is_empty() {
        return Err(Error::Config("no runs given on the left".into()));
    }
    let left: Vec<RunDir> = plan.left.iter().map(RunDir::open).collect::<Result<_>>()?;
    let right: Vec<RunDir> = if plan.right.is_empty() && plan.mode == Mode::Epochs {
        left.clone()
    } else {
        plan.right.iter().map(RunDir::open).collect::<Result<_>>()?
    };
    if left.len() != right.len() {
        return Err(Error::Config(format!(
            "{} runs on the left but {} on the right; runs are paired by position",
            left.len(),
            right.len()
        )));
    }
    check_fingerprints(left.iter().chain(&right).map(|r| (r.path.as_path(), &r.manifest)))?;

    let mut grids = Vec::with_capacity(left.len());
    let mut pairs = Vec::with_capacity(left.len());
    for (a, b) in left.iter().zip(&right) {
        check_pair(plan.mode, a, b)?;
        let (sa, sb) = (resolve_step(a, plan.left_step)?, resolve_step(b, plan.right_step)?);
        grids.push(grid(&a.load(sa)?, &b.load(sb)?, plan.metric, plan.threads)?);
        pairs.push((run_ref(a, sa), run_ref(b, sb)));
    }
    let grid = average_grids(&grids)?;
    let flagged = grid.flagged_cells().into_iter().map(|(i, j)| (grid.rows[i].clone(), grid.cols[j].clone())).collect();
    Ok(ComparisonResult {
        mode: plan.mode,
        eval_fingerprint: left[0].manifest.eval_fingerprint.clone(),
        pairs,
        grid,
        flagged,
    })
}
