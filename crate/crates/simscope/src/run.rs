//! Training runs on disk: `train_run` writes one directory per run holding
//! `manifest.json`, `params.json` and `step_NNNNNN/<layer>.ssad` dumps.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use simscope_core::collapse::{self, Baseline, LatentDiagnosis, Thresholds};
use simscope_core::data::{self, FactorDataset};
use simscope_core::vae::{
    self, bernoulli_recon_loss, kl_gaussian_per_dim, Architecture, ForwardTrace, LatentStats, LossBreakdown, ModelParams,
    ObjectiveConfig, ObjectiveKind, SnapshotSink, TrainData, TrainSettings,
};
use simscope_core::ActivationMatrix;

use crate::format::{write_dump, DType};
use crate::fsutil;
use crate::manifest::{fingerprint, DatasetInfo, DumpRef, RunManifest, SnapshotEntry, MANIFEST_VERSION};
use crate::{Error, Result};

pub const TRAIN_FRACTION: f64 = 0.9;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub objective: ObjectiveKind,
    pub regularisation: f64,
    pub seed: u64,
    pub steps: u64,
    pub latent_dim: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Overrides the annealed VAE's ramp length.
    pub iteration_threshold: Option<u64>,
    /// Overrides the annealed VAE's capacity weight.
    pub gamma: Option<f64>,
    pub data_seed: u64,
    pub eval_examples: Option<usize>,
    pub dtype: DType,
}

impl RunConfig {
    pub fn new(objective: ObjectiveKind, regularisation: f64, seed: u64, steps: u64) -> Self {
        Self {
            objective,
            regularisation,
            seed,
            steps,
            latent_dim: 10,
            learning_rate: 1e-4,
            batch_size: 64,
            iteration_threshold: None,
            gamma: None,
            data_seed: 0,
            eval_examples: None,
            dtype: DType::F64,
        }
    }
}

/// The default toy dataset with its training rows and evaluation sample.
pub struct PreparedData {
    pub dataset: FactorDataset,
    pub train: Vec<usize>,
    pub eval: Vec<usize>,
    pub info: DatasetInfo,
}

pub fn prepare_data(data_seed: u64, eval_examples: Option<usize>) -> Result<PreparedData> {
    let dataset = data::generate_factor_dataset(&data::DEFAULT_FACTOR_SIZES, data::DEFAULT_IMAGE_SIZE, data_seed)?;
    let (train, _) = data::split_train_test(&dataset, TRAIN_FRACTION, data_seed)?;
    let k = eval_examples.unwrap_or_else(|| data::default_eval_size(train.len()));
    let eval = data::sample_indices(&train, k, data_seed)?;
    let info = DatasetInfo {
        factor_sizes: dataset.factor_sizes.clone(),
        image_size: dataset.image_size,
        train_fraction: TRAIN_FRACTION,
        data_seed,
        eval_examples: k,
    };
    Ok(PreparedData { dataset, train, eval, info })
}

pub fn step_dir_name(step: u64) -> String {
    format!("step_{step:06}")
}

struct DumpSink<'a> {
    dir: &'a Path,
    dtype: DType,
    manifest: RunManifest,
}

impl SnapshotSink for DumpSink<'_> {
    type Error = Error;

    fn snapshot(&mut self, step: u64, trace: &ForwardTrace, _: &LossBreakdown) -> Result<()> {
        let sub = step_dir_name(step);
        fsutil::create_dir_all(&self.dir.join(&sub))?;
        let mut layers = Vec::new();
        for m in trace.activations()? {
            let file = format!("{sub}/{}.ssad", m.layer_name());
            write_dump(&self.dir.join(&file), &m, self.dtype)?;
            layers.push(DumpRef { name: m.layer_name().to_string(), file, n: m.n(), p: m.p() });
        }
        self.manifest.snapshots.retain(|s| s.step != step);
        self.manifest.snapshots.push(SnapshotEntry { step, layers });
        self.manifest.save(self.dir)
    }
}

fn objective_config(cfg: &RunConfig, dataset_size: usize) -> ObjectiveConfig {
    let mut oc = ObjectiveConfig::from_regularisation(cfg.objective, cfg.regularisation, dataset_size);
    if let Some(t) = cfg.iteration_threshold {
        oc.iteration_threshold = t;
    }
    if let Some(g) = cfg.gamma {
        oc.gamma = g;
    }
    oc
}

/// Trains one model and writes its snapshots under `out`. Refuses to write
/// into a directory whose manifest was produced on a different evaluation
/// batch.
pub fn train_run(cfg: &RunConfig, out: &Path) -> Result<RunManifest> {
    if cfg.latent_dim == 0 {
        return Err(Error::Config("latent dimension must be positive".into()));
    }
    let data = prepare_data(cfg.data_seed, cfg.eval_examples)?;
    let eval_batch = data.dataset.images.select_rows(&data.eval);
    let fp = fingerprint(&eval_batch);
    if let Some(existing) = RunManifest::load_existing(out)? {
        if existing.eval_fingerprint != fp {
            return Err(Error::Consistency(format!(
                "{} already holds a run on a different evaluation batch",
                out.display()
            )));
        }
    }
    fsutil::create_dir_all(out)?;

    let objective = objective_config(cfg, data.train.len());
    let arch = Architecture::desk(data.dataset.images.cols(), cfg.latent_dim);
    let mut settings = TrainSettings::new(cfg.steps, cfg.seed);
    settings.adam.learning_rate = cfg.learning_rate;
    settings.batch_size = cfg.batch_size;

    let manifest = RunManifest {
        format_version: MANIFEST_VERSION,
        objective: objective.clone(),
        regularisation: cfg.regularisation,
        seed: cfg.seed,
        latent_dim: cfg.latent_dim,
        steps: cfg.steps,
        learning_rate: cfg.learning_rate,
        batch_size: cfg.batch_size,
        dataset: data.info.clone(),
        eval_fingerprint: fp,
        layers: arch.layer_names(),
        snapshots: Vec::new(),
    };
    let mut sink = DumpSink { dir: out, dtype: cfg.dtype, manifest };
    let train_data = TrainData { images: &data.dataset.images, train_indices: &data.train, eval_indices: &data.eval };
    let outcome = vae::train(ModelParams::init(&arch, cfg.seed), train_data, &objective, &settings, &mut sink)?;

    let mut params = serde_json::to_vec(&outcome.params).expect("parameters serialise");
    params.push(b'\n');
    fsutil::write_atomic(&out.join("params.json"), &params)?;
    sink.manifest.save(out)?;
    Ok(sink.manifest)
}

/// A run directory with its parsed manifest.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub path: PathBuf,
    pub manifest: RunManifest,
}

impl RunDir {
    pub fn open(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let manifest = RunManifest::load(&path)?;
        Ok(Self { path, manifest })
    }

    pub fn final_step(&self) -> Result<u64> {
        self.manifest.final_snapshot().map(|s| s.step).ok_or_else(|| Error::Manifest {
            path: crate::manifest::manifest_path(&self.path),
            message: "run has no snapshots".into(),
        })
    }

    pub fn load(&self, step: u64) -> Result<Vec<ActivationMatrix>> {
        self.manifest.load_snapshot(&self.path, step)
    }
}

fn layer<'a>(layers: &'a [ActivationMatrix], name: &str, run: &Path) -> Result<&'a ActivationMatrix> {
    layers.iter().find(|l| l.layer_name() == name).ok_or_else(|| Error::Manifest {
        path: crate::manifest::manifest_path(run),
        message: format!("snapshot has no `{name}` layer"),
    })
}

fn recon_of(layers: &[ActivationMatrix], run: &Path) -> Result<f64> {
    let logits = layer(layers, "logits", run)?;
    let input = layer(layers, "input", run)?;
    Ok(bernoulli_recon_loss(logits.matrix(), input.matrix())?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosisReport {
    pub run: String,
    pub baseline: String,
    pub step: u64,
    pub baseline_step: u64,
    pub thresholds: Thresholds,
    pub diagnosis: LatentDiagnosis,
}

/// Diagnoses the final snapshot of `run` against the final reconstruction
/// loss of `baseline`.
pub fn diagnose_runs(run: &RunDir, baseline: &RunDir, thresholds: &Thresholds) -> Result<DiagnosisReport> {
    crate::manifest::check_fingerprints([
        (run.path.as_path(), &run.manifest),
        (baseline.path.as_path(), &baseline.manifest),
    ])?;
    let step = run.final_step()?;
    let baseline_step = baseline.final_step()?;
    let layers = run.load(step)?;
    let base_layers = baseline.load(baseline_step)?;

    let mean = layer(&layers, "mean", &run.path)?;
    let logvar = layer(&layers, "logvar", &run.path)?;
    let stats = LatentStats::new(mean.matrix().clone(), logvar.matrix().clone())?;
    let kl = kl_gaussian_per_dim(&stats)?;
    let probes =
        collapse::latent_similarity_probe(layer(&layers, "input", &run.path)?, mean, layer(&layers, "sampled", &run.path)?)?;
    let recon = recon_of(&layers, &run.path)?;
    let base = Baseline { recon_loss: recon_of(&base_layers, &baseline.path)? };
    let diagnosis = collapse::diagnose(&kl, &probes, recon, Some(&base), thresholds)?;
    Ok(DiagnosisReport {
        run: run.path.display().to_string(),
        baseline: baseline.path.display().to_string(),
        step,
        baseline_step,
        thresholds: *thresholds,
        diagnosis,
    })
}
