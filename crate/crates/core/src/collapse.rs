//! Posterior-collapse and polarised-regime diagnostics from per-dimension KL
//! and CKA probes between the input, mean and sampled representations.

use alloc::vec::Vec;

use crate::matrix::ActivationMatrix;
use crate::similarity::{linear_cka, Metric, SimilarityScore};
use crate::vae::{bernoulli_recon_loss, kl_gaussian_per_dim, ForwardTrace};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Thresholds {
    /// A dimension is passive when its KL (nats) is below this.
    pub passive_kl: f64,
    /// Minimum CKA(mean, sampled) for the polarised regime.
    pub mean_sampled: f64,
    /// Reconstruction loss may exceed the baseline by at most this factor.
    pub recon_factor: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { passive_kl: 0.01, mean_sampled: 0.5, recon_factor: 1.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "SCREAMING_SNAKE_CASE"))]
pub enum Verdict {
    Healthy,
    Polarised,
    Collapsed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LatentProbes {
    pub cka_mean_sampled: SimilarityScore,
    pub cka_input_sampled: SimilarityScore,
}

/// Reference run, typically the unregularised (β = 1) model.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Baseline {
    pub recon_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LatentDiagnosis {
    pub per_dim_kl: Vec<f64>,
    pub passive_mask: Vec<bool>,
    pub cka_mean_sampled: SimilarityScore,
    pub cka_input_sampled: SimilarityScore,
    pub recon_loss: f64,
    pub baseline_recon_loss: f64,
    pub verdict: Verdict,
}

impl LatentDiagnosis {
    pub fn passive_count(&self) -> usize {
        self.passive_mask.iter().filter(|&&p| p).count()
    }
}

pub fn passive_mask(per_dim_kl: &[f64], threshold: f64) -> Vec<bool> {
    per_dim_kl.iter().map(|&kl| kl < threshold).collect()
}

/// CKA that scores a representation with no variation as 0 rather than
/// failing: a constant mean layer carries no information about the sample.
fn cka_or_zero(x: &ActivationMatrix, y: &ActivationMatrix) -> Result<SimilarityScore> {
    match linear_cka(x, y) {
        Err(Error::Degenerate(_)) => Ok(SimilarityScore { value: 0.0, metric: Metric::Cka, n_examples: x.n() }),
        other => other,
    }
}

/// `(CKA(mean, sampled), CKA(input, sampled))` over one evaluation batch.
pub fn latent_similarity_probe(
    input: &ActivationMatrix,
    mean: &ActivationMatrix,
    sampled: &ActivationMatrix,
) -> Result<LatentProbes> {
    Ok(LatentProbes {
        cka_mean_sampled: cka_or_zero(mean, sampled)?,
        cka_input_sampled: cka_or_zero(input, sampled)?,
    })
}

pub fn probe_trace(trace: &ForwardTrace) -> Result<LatentProbes> {
    latent_similarity_probe(
        &ActivationMatrix::new("input", trace.input.clone())?,
        &ActivationMatrix::new("mean", trace.stats.mean.clone())?,
        &ActivationMatrix::new("sampled", trace.sampled.clone())?,
    )
}

/// Applies the verdict rule:
/// collapsed if every dimension is passive, or if the mean/sampled CKA is
/// below threshold while reconstruction is worse than the baseline allows;
/// polarised if some dimensions are passive, the mean/sampled CKA is at or
/// above threshold and reconstruction is within the allowed factor;
/// healthy otherwise.
pub fn diagnose(
    per_dim_kl: &[f64],
    probes: &LatentProbes,
    recon_loss: f64,
    baseline: Option<&Baseline>,
    thresholds: &Thresholds,
) -> Result<LatentDiagnosis> {
    let baseline = baseline.ok_or_else(|| Error::Config("diagnosis needs a baseline reconstruction loss".into()))?;
    if per_dim_kl.iter().any(|k| !k.is_finite() || *k < -1e-12) {
        return Err(Error::InvalidInput("per-dimension KL must be finite and non-negative".into()));
    }
    let mask = passive_mask(per_dim_kl, thresholds.passive_kl);
    let passive = mask.iter().filter(|&&p| p).count();
    let ms = probes.cka_mean_sampled.value;
    let recon_ok = recon_loss <= thresholds.recon_factor * baseline.recon_loss;
    let verdict = if passive == mask.len() || (ms < thresholds.mean_sampled && !recon_ok) {
        Verdict::Collapsed
    } else if passive > 0 && ms >= thresholds.mean_sampled && recon_ok {
        Verdict::Polarised
    } else {
        Verdict::Healthy
    };
    Ok(LatentDiagnosis {
        per_dim_kl: per_dim_kl.to_vec(),
        passive_mask: mask,
        cka_mean_sampled: probes.cka_mean_sampled,
        cka_input_sampled: probes.cka_input_sampled,
        recon_loss,
        baseline_recon_loss: baseline.recon_loss,
        verdict,
    })
}

/// Runs the whole diagnosis on an evaluation trace.
pub fn diagnose_trace(trace: &ForwardTrace, baseline: Option<&Baseline>, thresholds: &Thresholds) -> Result<LatentDiagnosis> {
    let kl = kl_gaussian_per_dim(&trace.stats)?;
    let recon = bernoulli_recon_loss(&trace.logits, &trace.input)?;
    diagnose(&kl, &probe_trace(trace)?, recon, baseline, thresholds)
}
