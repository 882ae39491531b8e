//! The four learning objectives, in minimisation form.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::model::{ForwardTrace, LatentStats};
use crate::matrix::Matrix;
use crate::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ObjectiveKind {
    BetaVae,
    AnnealedVae,
    BetaTcVae,
    #[cfg_attr(feature = "serde", serde(rename = "dip_vae_ii"))]
    DipVaeII,
}

impl ObjectiveKind {
    pub const ALL: [ObjectiveKind; 4] =
        [ObjectiveKind::BetaVae, ObjectiveKind::AnnealedVae, ObjectiveKind::BetaTcVae, ObjectiveKind::DipVaeII];

    pub fn as_str(self) -> &'static str {
        match self {
            ObjectiveKind::BetaVae => "beta_vae",
            ObjectiveKind::AnnealedVae => "annealed_vae",
            ObjectiveKind::BetaTcVae => "beta_tc_vae",
            ObjectiveKind::DipVaeII => "dip_vae_ii",
        }
    }
}

impl core::fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl core::str::FromStr for ObjectiveKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ObjectiveKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown objective `{s}`")))
    }
}

/// Objective kind and hyperparameters. Only the fields relevant to `kind`
/// are read.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ObjectiveConfig {
    pub kind: ObjectiveKind,
    /// KL weight for β-VAE; total-correlation weight is `beta − 1` for β-TC.
    pub beta: f64,
    pub gamma: f64,
    pub c_max: f64,
    pub iteration_threshold: u64,
    pub lambda_od: f64,
    pub lambda_d: f64,
    /// Size of the training set, used by the minibatch TC estimator.
    pub dataset_size: usize,
}

impl ObjectiveConfig {
    fn base(kind: ObjectiveKind, dataset_size: usize) -> Self {
        Self {
            kind,
            beta: 1.0,
            gamma: 1000.0,
            c_max: 0.0,
            iteration_threshold: 100_000,
            lambda_od: 0.0,
            lambda_d: 0.0,
            dataset_size,
        }
    }

    pub fn beta_vae(beta: f64, dataset_size: usize) -> Self {
        Self { beta, ..Self::base(ObjectiveKind::BetaVae, dataset_size) }
    }

    pub fn annealed_vae(c_max: f64, dataset_size: usize) -> Self {
        Self { c_max, ..Self::base(ObjectiveKind::AnnealedVae, dataset_size) }
    }

    pub fn beta_tc_vae(beta: f64, dataset_size: usize) -> Self {
        Self { beta, ..Self::base(ObjectiveKind::BetaTcVae, dataset_size) }
    }

    /// DIP-VAE II with `λ_d = λ_od`.
    pub fn dip_vae_ii(lambda: f64, dataset_size: usize) -> Self {
        Self { lambda_od: lambda, lambda_d: lambda, ..Self::base(ObjectiveKind::DipVaeII, dataset_size) }
    }

    /// Builds a config from a single regularisation strength: β, C_max or
    /// λ depending on the kind.
    pub fn from_regularisation(kind: ObjectiveKind, value: f64, dataset_size: usize) -> Self {
        match kind {
            ObjectiveKind::BetaVae => Self::beta_vae(value, dataset_size),
            ObjectiveKind::AnnealedVae => Self::annealed_vae(value, dataset_size),
            ObjectiveKind::BetaTcVae => Self::beta_tc_vae(value, dataset_size),
            ObjectiveKind::DipVaeII => Self::dip_vae_ii(value, dataset_size),
        }
    }

    /// The headline regularisation strength for this kind.
    pub fn regularisation(&self) -> f64 {
        match self.kind {
            ObjectiveKind::BetaVae | ObjectiveKind::BetaTcVae => self.beta,
            ObjectiveKind::AnnealedVae => self.c_max,
            ObjectiveKind::DipVaeII => self.lambda_od,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| Err(Error::Config(format!("{what} must be non-negative and finite, got {v}")));
        match self.kind {
            ObjectiveKind::BetaVae | ObjectiveKind::BetaTcVae => {
                if !(self.beta >= 1.0 && self.beta.is_finite()) {
                    return Err(Error::Config(format!("beta must be >= 1, got {}", self.beta)));
                }
            }
            ObjectiveKind::AnnealedVae => {
                for (w, v) in [("gamma", self.gamma), ("c_max", self.c_max)] {
                    if !(v >= 0.0 && v.is_finite()) {
                        return bad(w, v);
                    }
                }
            }
            ObjectiveKind::DipVaeII => {
                for (w, v) in [("lambda_od", self.lambda_od), ("lambda_d", self.lambda_d)] {
                    if !(v >= 0.0 && v.is_finite()) {
                        return bad(w, v);
                    }
                }
            }
        }
        if self.dataset_size == 0 {
            return Err(Error::Config("dataset_size must be positive".into()));
        }
        Ok(())
    }
}

/// Loss value with its components.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LossBreakdown {
    pub total: f64,
    pub recon: f64,
    /// Sum over dimensions of the batch-averaged KL to the prior.
    pub kl: f64,
    pub kl_per_dim: Vec<f64>,
    /// Everything other than reconstruction.
    pub penalty: f64,
    /// Channel capacity in effect (annealed VAE).
    pub capacity: Option<f64>,
    pub total_correlation: Option<f64>,
    /// `(off-diagonal, diagonal)` covariance penalties before weighting.
    pub dip_terms: Option<(f64, f64)>,
}

#[inline]
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + libm::log1p(libm::exp(-x))
    } else {
        libm::log1p(libm::exp(x))
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// Batch mean of the per-example summed binary cross-entropy, from logits.
pub fn bernoulli_recon_loss(logits: &Matrix, targets: &Matrix) -> Result<f64> {
    if logits.rows() != targets.rows() || logits.cols() != targets.cols() {
        return Err(Error::Shape(format!(
            "logits {}x{} vs targets {}x{}",
            logits.rows(),
            logits.cols(),
            targets.rows(),
            targets.cols()
        )));
    }
    if targets.as_slice().iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(Error::InvalidInput("reconstruction targets must lie in [0, 1]".into()));
    }
    // BCE(l, t) = softplus(l) − t·l
    let total: f64 = logits.as_slice().iter().zip(targets.as_slice()).map(|(&l, &t)| softplus(l) - t * l).sum();
    Ok(total / logits.rows() as f64)
}

/// Closed-form KL to `N(0, I)` per latent dimension, averaged over the batch.
pub fn kl_gaussian_per_dim(stats: &LatentStats) -> Result<Vec<f64>> {
    if !stats.mean.is_finite() || !stats.logvar.is_finite() {
        return Err(Error::InvalidInput("non-finite latent statistics".into()));
    }
    let (m, d) = (stats.batch(), stats.latent_dim());
    let mut kl = vec![0.0; d];
    for i in 0..m {
        for (j, k) in kl.iter_mut().enumerate() {
            let mu = stats.mean[(i, j)];
            let lv = stats.logvar[(i, j)];
            *k += 0.5 * (mu * mu + libm::exp(lv) - 1.0 - lv);
        }
    }
    for k in &mut kl {
        *k /= m as f64;
    }
    Ok(kl)
}

/// Linear capacity ramp from 0 to `c_max` over `iteration_threshold` steps.
pub fn capacity_schedule(step: u64, cfg: &ObjectiveConfig) -> f64 {
    if cfg.iteration_threshold == 0 || step >= cfg.iteration_threshold {
        return cfg.c_max;
    }
    cfg.c_max * (step as f64 / cfg.iteration_threshold as f64)
}

/// Minibatch estimates of `E[log q(z)]` and `E[Σ_j log q(z_j)]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TcEstimate {
    pub log_qz: f64,
    pub log_qz_product: f64,
}

impl TcEstimate {
    pub fn total_correlation(&self) -> f64 {
        self.log_qz - self.log_qz_product
    }
}

#[inline]
pub(crate) fn gaussian_log_density(z: f64, mu: f64, logvar: f64) -> f64 {
    let d = z - mu;
    -0.5 * (LN_2PI + logvar + d * d * libm::exp(-logvar))
}

/// In-place softmax of `xs`; returns the log-sum-exp.
pub(crate) fn softmax_in_place(xs: &mut [f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in xs.iter_mut() {
        *x = libm::exp(*x - max);
        sum += *x;
    }
    for x in xs.iter_mut() {
        *x /= sum;
    }
    max + libm::log(sum)
}

pub(crate) fn check_tc_inputs(z: &Matrix, stats: &LatentStats, dataset_size: usize) -> Result<()> {
    let m = stats.batch();
    if z.rows() != m || z.cols() != stats.latent_dim() {
        return Err(Error::Shape(format!(
            "samples {}x{} do not match statistics {}x{}",
            z.rows(),
            z.cols(),
            m,
            stats.latent_dim()
        )));
    }
    if m == 0 {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    if dataset_size < m {
        return Err(Error::Config(format!("dataset size {dataset_size} is smaller than the batch ({m})")));
    }
    Ok(())
}

/// `(1/M) Σ_i log[(1/(NM)) Σ_j q(z_i | x_j)]` and its per-dimension analogue,
/// with every inner sum evaluated by log-sum-exp.
pub fn tc_minibatch_log_qz(z: &Matrix, stats: &LatentStats, dataset_size: usize) -> Result<TcEstimate> {
    check_tc_inputs(z, stats, dataset_size)?;
    let (m, d) = (stats.batch(), stats.latent_dim());
    let log_nm = libm::log((dataset_size * m) as f64);
    let mut joint = vec![0.0; m];
    let mut marginal = vec![vec![0.0; m]; d];
    let (mut log_qz, mut log_prod) = (0.0, 0.0);
    for i in 0..m {
        for j in 0..m {
            let mut s = 0.0;
            for k in 0..d {
                let l = gaussian_log_density(z[(i, k)], stats.mean[(j, k)], stats.logvar[(j, k)]);
                marginal[k][j] = l;
                s += l;
            }
            joint[j] = s;
        }
        log_qz += softmax_in_place(&mut joint) - log_nm;
        for row in marginal.iter_mut() {
            log_prod += softmax_in_place(row) - log_nm;
        }
    }
    Ok(TcEstimate { log_qz: log_qz / m as f64, log_qz_product: log_prod / m as f64 })
}

/// `Cov[μ(x)] + E[diag(exp(logvar))]` over the batch; the mean covariance
/// uses the 1/M (mixture) normalisation.
pub fn dip_covariance(stats: &LatentStats) -> Result<Matrix> {
    let (m, d) = (stats.batch(), stats.latent_dim());
    if m < 2 {
        return Err(Error::InsufficientData { needed: 2, got: m });
    }
    let means = stats.mean.column_means();
    let mut cov = Matrix::zeros(d, d);
    for i in 0..m {
        let row = stats.mean.row(i);
        for a in 0..d {
            let da = row[a] - means[a];
            for b in 0..d {
                cov[(a, b)] += da * (row[b] - means[b]);
            }
        }
    }
    for a in 0..d {
        let ev: f64 = (0..m).map(|i| libm::exp(stats.logvar[(i, a)])).sum();
        for b in 0..d {
            cov[(a, b)] /= m as f64;
        }
        cov[(a, a)] += ev / m as f64;
    }
    Ok(cov)
}

/// `(Σ_{i≠j} Cov²_ij, Σ_i (Cov_ii − 1)²)`.
pub(crate) fn dip_terms(cov: &Matrix) -> (f64, f64) {
    let (mut off, mut diag) = (0.0, 0.0);
    for a in 0..cov.rows() {
        for b in 0..cov.cols() {
            let v = cov[(a, b)];
            if a == b {
                diag += (v - 1.0) * (v - 1.0);
            } else {
                off += v * v;
            }
        }
    }
    (off, diag)
}

/// Reconstruction plus the objective-specific penalty.
pub fn objective_loss(trace: &ForwardTrace, targets: &Matrix, cfg: &ObjectiveConfig, step: u64) -> Result<LossBreakdown> {
    cfg.validate()?;
    let recon = bernoulli_recon_loss(&trace.logits, targets)?;
    let kl_per_dim = kl_gaussian_per_dim(&trace.stats)?;
    let kl: f64 = kl_per_dim.iter().sum();
    let mut out = LossBreakdown {
        total: 0.0,
        recon,
        kl,
        kl_per_dim,
        penalty: 0.0,
        capacity: None,
        total_correlation: None,
        dip_terms: None,
    };
    out.penalty = match cfg.kind {
        ObjectiveKind::BetaVae => cfg.beta * kl,
        ObjectiveKind::AnnealedVae => {
            let c = capacity_schedule(step, cfg);
            out.capacity = Some(c);
            cfg.gamma * libm::fabs(kl - c)
        }
        ObjectiveKind::BetaTcVae => {
            let tc = tc_minibatch_log_qz(&trace.sampled, &trace.stats, cfg.dataset_size)?.total_correlation();
            out.total_correlation = Some(tc);
            kl + (cfg.beta - 1.0) * tc
        }
        ObjectiveKind::DipVaeII => {
            let (off, diag) = dip_terms(&dip_covariance(&trace.stats)?);
            out.dip_terms = Some((off, diag));
            kl + cfg.lambda_od * off + cfg.lambda_d * diag
        }
    };
    out.total = out.recon + out.penalty;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats(mean: &[&[f64]], logvar: &[&[f64]]) -> LatentStats {
        LatentStats::new(Matrix::from_rows(mean), Matrix::from_rows(logvar)).unwrap()
    }

    #[test]
    fn recon_examples() {
        let half = bernoulli_recon_loss(&Matrix::zeros(1, 3), &Matrix::from_rows(&[[0.5, 0.5, 0.5]])).unwrap();
        assert!((half - 3.0 * core::f64::consts::LN_2).abs() < 1e-15);
        let sat = bernoulli_recon_loss(&Matrix::from_rows(&[[30.0]]), &Matrix::from_rows(&[[1.0]])).unwrap();
        assert!(sat < 1e-12);
        let one = bernoulli_recon_loss(&Matrix::from_rows(&[[1.0]]), &Matrix::from_rows(&[[1.0]])).unwrap();
        assert!((one - (1.0 + (-1f64).exp()).ln()).abs() < 1e-15);
        assert!((one - 0.3133).abs() < 1e-4);
        assert!(bernoulli_recon_loss(&Matrix::zeros(1, 1), &Matrix::from_rows(&[[1.5]])).is_err());
        assert!(bernoulli_recon_loss(&Matrix::zeros(1, 2), &Matrix::zeros(1, 1)).is_err());
    }

    #[test]
    fn recon_is_stable_for_large_logits() {
        let l = bernoulli_recon_loss(&Matrix::from_rows(&[[-800.0, 800.0]]), &Matrix::from_rows(&[[1.0, 0.0]])).unwrap();
        assert_eq!(l, 1600.0);
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_gaussian_per_dim(&stats(&[&[0.0]], &[&[0.0]])).unwrap(), [0.0]);
        assert_eq!(kl_gaussian_per_dim(&stats(&[&[1.0]], &[&[0.0]])).unwrap(), [0.5]);
        let k = kl_gaussian_per_dim(&stats(&[&[0.0]], &[&[2f64.ln()]])).unwrap()[0];
        assert!((k - 0.5 * (1.0 - 2f64.ln())).abs() < 1e-15);
        assert!((k - 0.1534).abs() < 1e-4);
    }

    #[test]
    fn capacity_ramp() {
        let cfg = ObjectiveConfig { iteration_threshold: 100, ..ObjectiveConfig::annealed_vae(5.0, 10) };
        assert_eq!(capacity_schedule(0, &cfg), 0.0);
        assert_eq!(capacity_schedule(50, &cfg), 2.5);
        assert_eq!(capacity_schedule(100, &cfg), 5.0);
        assert_eq!(capacity_schedule(1_000_000, &cfg), 5.0);
        let table = ObjectiveConfig::annealed_vae(25.0, 10);
        assert_eq!(table.iteration_threshold, 100_000);
        assert_eq!(capacity_schedule(100_000, &table), 25.0);
    }

    #[test]
    fn tc_single_element() {
        let d = 3;
        let s = LatentStats::new(Matrix::zeros(1, d), Matrix::zeros(1, d)).unwrap();
        let est = tc_minibatch_log_qz(&Matrix::zeros(1, d), &s, 1).unwrap();
        let want = -(d as f64) / 2.0 * (2.0 * core::f64::consts::PI).ln();
        assert!((est.log_qz - want).abs() < 1e-14);
        assert!((est.log_qz_product - want).abs() < 1e-14);
    }

    #[test]
    fn tc_identical_components() {
        let row = [0.3, -0.7];
        let lv = [0.2, -0.4];
        let s = stats(&[&row, &row, &row], &[&lv, &lv, &lv]);
        let z = Matrix::from_rows(&[[0.1, 0.2], [-1.0, 0.5], [0.9, -0.3]]);
        let n = 50;
        let est = tc_minibatch_log_qz(&z, &s, n).unwrap();
        let direct: f64 = (0..3)
            .map(|i| (0..2).map(|k| gaussian_log_density(z[(i, k)], row[k], lv[k])).sum::<f64>() - (n as f64).ln())
            .sum::<f64>()
            / 3.0;
        assert!((est.log_qz - direct).abs() < 1e-12);
    }

    #[test]
    fn tc_rejects_small_dataset() {
        let s = LatentStats::new(Matrix::zeros(3, 1), Matrix::zeros(3, 1)).unwrap();
        assert!(matches!(tc_minibatch_log_qz(&Matrix::zeros(3, 1), &s, 2), Err(Error::Config(_))));
    }

    #[test]
    fn dip_examples() {
        let s = stats(&[&[0.4, 1.0], &[0.4, 1.0], &[0.4, 1.0]], &[&[0.0, 0.0], &[0.0, 0.0], &[0.0, 0.0]]);
        assert_eq!(dip_covariance(&s).unwrap(), Matrix::identity(2));
        // Two-point means ±1 in both coordinates, perfectly correlated.
        let s = stats(&[&[1.0, 1.0], &[-1.0, -1.0]], &[&[-60.0, -60.0], &[-60.0, -60.0]]);
        let c = dip_covariance(&s).unwrap();
        for v in c.as_slice() {
            assert!((v - 1.0).abs() < 1e-12);
        }
        assert!(matches!(dip_covariance(&stats(&[&[0.0]], &[&[0.0]])), Err(Error::InsufficientData { .. })));
    }

    #[test]
    fn parse_kinds() {
        for k in ObjectiveKind::ALL {
            assert_eq!(k.as_str().parse::<ObjectiveKind>().unwrap(), k);
        }
        assert!("vae".parse::<ObjectiveKind>().is_err());
    }

    #[test]
    fn validation() {
        assert!(ObjectiveConfig::beta_vae(0.5, 10).validate().is_err());
        assert!(ObjectiveConfig::dip_vae_ii(-1.0, 10).validate().is_err());
        assert!(ObjectiveConfig::annealed_vae(5.0, 10).validate().is_ok());
        assert!(ObjectiveConfig::beta_tc_vae(2.0, 0).validate().is_err());
    }
}
