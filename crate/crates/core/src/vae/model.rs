use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use crate::matrix::{ActivationMatrix, Matrix};
use crate::rng;
use crate::{Error, Result};

/// Bounds applied to the log-variance head before exponentiation.
pub const LOGVAR_MIN: f64 = -30.0;
pub const LOGVAR_MAX: f64 = 30.0;

const INIT_PURPOSE: u64 = 0x696e_6974;

/// Layer widths of the fully-connected VAE.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Architecture {
    pub input_dim: usize,
    /// ReLU layers before the mean/log-variance heads.
    pub encoder_widths: Vec<usize>,
    pub latent_dim: usize,
    /// tanh layers before the linear logits layer.
    pub decoder_widths: Vec<usize>,
}

impl Architecture {
    /// Two 64-wide ReLU encoder layers, three 64-wide tanh decoder layers.
    pub fn desk(input_dim: usize, latent_dim: usize) -> Self {
        Self {
            input_dim,
            encoder_widths: alloc::vec![64, 64],
            latent_dim,
            decoder_widths: alloc::vec![64, 64, 64],
        }
    }

    /// Names of the recorded activations, in forward order.
    pub fn layer_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        names.push("input".into());
        for k in 0..self.encoder_widths.len() {
            names.push(format!("encoder_{}", k + 1));
        }
        names.extend(["mean".into(), "logvar".into(), "sampled".into()]);
        for k in 0..self.decoder_widths.len() {
            names.push(format!("decoder_{}", k + 1));
        }
        names.push("logits".into());
        names
    }
}

/// An affine layer `x·W + b`, with `W` stored fan-in × fan-out.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Dense {
    pub weight: Matrix,
    /// 1 × fan-out.
    pub bias: Matrix,
}

impl Dense {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self { weight: Matrix::zeros(fan_in, fan_out), bias: Matrix::zeros(1, fan_out) }
    }

    fn glorot<R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let limit = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
        let weight = Matrix::from_fn(fan_in, fan_out, |_, _| rng.random_range(-limit..limit));
        Self { weight, bias: Matrix::zeros(1, fan_out) }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.cols()
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let mut out = x.matmul(&self.weight)?;
        let b = self.bias.as_slice();
        for i in 0..out.rows() {
            for (v, bj) in out.row_mut(i).iter_mut().zip(b) {
                *v += bj;
            }
        }
        Ok(out)
    }
}

/// Weights of the VAE. Also used as the container for gradients and Adam
/// moments, which share its shape.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelParams {
    pub encoder: Vec<Dense>,
    pub mean_head: Dense,
    pub logvar_head: Dense,
    /// Hidden tanh layers followed by the linear logits layer.
    pub decoder: Vec<Dense>,
}

impl ModelParams {
    pub fn zeros(arch: &Architecture) -> Self {
        Self::build(arch, Dense::zeros)
    }

    /// Glorot-uniform weights and zero biases, seeded.
    pub fn init(arch: &Architecture, seed: u64) -> Self {
        let mut r = rng::seeded(seed, INIT_PURPOSE);
        Self::build(arch, |i, o| Dense::glorot(i, o, &mut r))
    }

    fn build(arch: &Architecture, mut layer: impl FnMut(usize, usize) -> Dense) -> Self {
        let mut encoder = Vec::new();
        let mut width = arch.input_dim;
        for &w in &arch.encoder_widths {
            encoder.push(layer(width, w));
            width = w;
        }
        let mean_head = layer(width, arch.latent_dim);
        let logvar_head = layer(width, arch.latent_dim);
        let mut decoder = Vec::new();
        width = arch.latent_dim;
        for &w in &arch.decoder_widths {
            decoder.push(layer(width, w));
            width = w;
        }
        decoder.push(layer(width, arch.input_dim));
        Self { encoder, mean_head, logvar_head, decoder }
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            input_dim: self.encoder.first().map_or(self.mean_head.fan_in(), Dense::fan_in),
            encoder_widths: self.encoder.iter().map(Dense::fan_out).collect(),
            latent_dim: self.mean_head.fan_out(),
            decoder_widths: self.decoder[..self.decoder.len() - 1].iter().map(Dense::fan_out).collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.architecture().input_dim
    }

    pub fn latent_dim(&self) -> usize {
        self.mean_head.fan_out()
    }

    fn layers(&self) -> impl Iterator<Item = &Dense> {
        self.encoder
            .iter()
            .chain([&self.mean_head, &self.logvar_head])
            .chain(self.decoder.iter())
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut Dense> {
        self.encoder
            .iter_mut()
            .chain([&mut self.mean_head, &mut self.logvar_head])
            .chain(self.decoder.iter_mut())
    }

    /// Every parameter tensor in a fixed order.
    pub fn tensors(&self) -> Vec<&Matrix> {
        self.layers().flat_map(|d| [&d.weight, &d.bias]).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        self.layers_mut().flat_map(|d| [&mut d.weight, &mut d.bias]).collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.as_slice().len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    pub fn same_shape(&self, other: &ModelParams) -> bool {
        let (a, b) = (self.tensors(), other.tensors());
        a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| x.rows() == y.rows() && x.cols() == y.cols())
    }
}

/// Per-example Gaussian posterior parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentStats {
    pub mean: Matrix,
    /// Clamped to `[LOGVAR_MIN, LOGVAR_MAX]`.
    pub logvar: Matrix,
}

impl LatentStats {
    pub fn new(mean: Matrix, logvar: Matrix) -> Result<Self> {
        if mean.rows() != logvar.rows() || mean.cols() != logvar.cols() {
            return Err(Error::Shape("mean and logvar shapes differ".into()));
        }
        if !mean.is_finite() || !logvar.is_finite() {
            return Err(Error::InvalidInput("non-finite latent statistics".into()));
        }
        let logvar = logvar.map(clamp_logvar);
        Ok(Self { mean, logvar })
    }

    pub fn batch(&self) -> usize {
        self.mean.rows()
    }

    pub fn latent_dim(&self) -> usize {
        self.mean.cols()
    }
}

#[inline]
pub(crate) fn clamp_logvar(v: f64) -> f64 {
    v.clamp(LOGVAR_MIN, LOGVAR_MAX)
}

/// Every activation of one forward pass, plus the noise that produced the
/// sampled representation.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub input: Matrix,
    /// Post-ReLU encoder activations.
    pub encoder_hidden: Vec<Matrix>,
    pub stats: LatentStats,
    /// Log-variance head output before clamping.
    pub logvar_raw: Matrix,
    pub noise: Matrix,
    pub sampled: Matrix,
    /// Post-tanh decoder activations.
    pub decoder_hidden: Vec<Matrix>,
    pub logits: Matrix,
}

impl ForwardTrace {
    pub fn batch(&self) -> usize {
        self.input.rows()
    }

    /// The recorded layers in forward order, named as in
    /// [`Architecture::layer_names`].
    pub fn activations(&self) -> Result<Vec<ActivationMatrix>> {
        let mut out = Vec::new();
        out.push(ActivationMatrix::new("input", self.input.clone())?);
        for (k, h) in self.encoder_hidden.iter().enumerate() {
            out.push(ActivationMatrix::new(format!("encoder_{}", k + 1), h.clone())?);
        }
        out.push(ActivationMatrix::new("mean", self.stats.mean.clone())?);
        out.push(ActivationMatrix::new("logvar", self.stats.logvar.clone())?);
        out.push(ActivationMatrix::new("sampled", self.sampled.clone())?);
        for (k, h) in self.decoder_hidden.iter().enumerate() {
            out.push(ActivationMatrix::new(format!("decoder_{}", k + 1), h.clone())?);
        }
        out.push(ActivationMatrix::new("logits", self.logits.clone())?);
        Ok(out)
    }
}

/// Runs the encoder, returning the hidden activations, the latent statistics
/// and the unclamped log-variance.
pub fn encode(params: &ModelParams, batch: &Matrix) -> Result<(Vec<Matrix>, LatentStats)> {
    let (hidden, stats, _) = encode_raw(params, batch)?;
    Ok((hidden, stats))
}

fn encode_raw(params: &ModelParams, batch: &Matrix) -> Result<(Vec<Matrix>, LatentStats, Matrix)> {
    let input_dim = params.input_dim();
    if batch.cols() != input_dim {
        return Err(Error::Shape(format!("batch has {} columns, model expects {input_dim}", batch.cols())));
    }
    let mut hidden = Vec::with_capacity(params.encoder.len());
    let mut h = batch.clone();
    for layer in &params.encoder {
        h = layer.forward(&h)?.map(|v| v.max(0.0));
        hidden.push(h.clone());
    }
    let mean = params.mean_head.forward(&h)?;
    let logvar_raw = params.logvar_head.forward(&h)?;
    let stats = LatentStats::new(mean, logvar_raw.clone())?;
    Ok((hidden, stats, logvar_raw))
}

/// `z = μ + exp(½·logvar) ⊙ ε`.
pub fn reparameterize(stats: &LatentStats, noise: &Matrix) -> Result<Matrix> {
    if noise.rows() != stats.mean.rows() || noise.cols() != stats.mean.cols() {
        return Err(Error::Shape(format!(
            "noise is {}x{}, latent statistics are {}x{}",
            noise.rows(),
            noise.cols(),
            stats.mean.rows(),
            stats.mean.cols()
        )));
    }
    let data = stats
        .mean
        .as_slice()
        .iter()
        .zip(stats.logvar.as_slice())
        .zip(noise.as_slice())
        .map(|((m, lv), e)| m + libm::exp(0.5 * lv) * e)
        .collect();
    Matrix::from_vec(noise.rows(), noise.cols(), data)
}

/// Runs the decoder, returning the tanh activations and the output logits.
pub fn decode(params: &ModelParams, z: &Matrix) -> Result<(Vec<Matrix>, Matrix)> {
    if z.cols() != params.latent_dim() {
        return Err(Error::Shape(format!(
            "latent batch has {} columns, model expects {}",
            z.cols(),
            params.latent_dim()
        )));
    }
    let (last, hidden_layers) = params.decoder.split_last().expect("decoder has an output layer");
    let mut hidden = Vec::with_capacity(hidden_layers.len());
    let mut h = z.clone();
    for layer in hidden_layers {
        h = layer.forward(&h)?.map(libm::tanh);
        hidden.push(h.clone());
    }
    let logits = last.forward(&h)?;
    Ok((hidden, logits))
}

/// Full forward pass with injected noise.
pub fn forward(params: &ModelParams, batch: &Matrix, noise: &Matrix) -> Result<ForwardTrace> {
    let (encoder_hidden, stats, logvar_raw) = encode_raw(params, batch)?;
    let sampled = reparameterize(&stats, noise)?;
    let (decoder_hidden, logits) = decode(params, &sampled)?;
    Ok(ForwardTrace {
        input: batch.clone(),
        encoder_hidden,
        stats,
        logvar_raw,
        noise: noise.clone(),
        sampled,
        decoder_hidden,
        logits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_arch() -> Architecture {
        Architecture { input_dim: 2, encoder_widths: alloc::vec![1], latent_dim: 1, decoder_widths: alloc::vec![2] }
    }

    #[test]
    fn zero_params_give_prior_stats() {
        let arch = Architecture::desk(4, 3);
        let p = ModelParams::zeros(&arch);
        let batch = Matrix::from_fn(5, 4, |i, j| ((i + j) % 2) as f64);
        let (_, stats) = encode(&p, &batch).unwrap();
        assert!(stats.mean.as_slice().iter().all(|&v| v == 0.0));
        assert!(stats.logvar.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mean_bias_passes_through() {
        let arch = Architecture::desk(4, 3);
        let mut p = ModelParams::zeros(&arch);
        p.mean_head.bias = Matrix::from_rows(&[[1.0, 1.0, 1.0]]);
        let (_, stats) = encode(&p, &Matrix::from_fn(2, 4, |_, _| 0.7)).unwrap();
        assert!(stats.mean.as_slice().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn hand_evaluated_encoder() {
        let mut p = ModelParams::zeros(&tiny_arch());
        p.encoder[0].weight = Matrix::from_rows(&[[2.0], [-1.0]]);
        p.encoder[0].bias = Matrix::from_rows(&[[0.5]]);
        p.mean_head.weight = Matrix::from_rows(&[[3.0]]);
        p.logvar_head.weight = Matrix::from_rows(&[[-1.0]]);
        p.logvar_head.bias = Matrix::from_rows(&[[0.25]]);
        let batch = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [0.5, 0.5]]);
        let (hidden, stats) = encode(&p, &batch).unwrap();
        // ReLU(2a − b + 0.5): 2.5, 0 (clipped from −0.5), 1.0
        assert_eq!(hidden[0].as_slice(), &[2.5, 0.0, 1.0]);
        assert_eq!(stats.mean.as_slice(), &[7.5, 0.0, 3.0]);
        assert_eq!(stats.logvar.as_slice(), &[-2.25, 0.25, -0.75]);
    }

    #[test]
    fn reparameterization_examples() {
        let mean = Matrix::from_rows(&[[1.0, -2.0]]);
        let zeros = Matrix::zeros(1, 2);
        let stats = LatentStats::new(mean.clone(), zeros.clone()).unwrap();
        assert_eq!(reparameterize(&stats, &zeros).unwrap(), mean);
        let eps = Matrix::from_rows(&[[0.5, 1.5]]);
        assert_eq!(reparameterize(&stats, &eps).unwrap().as_slice(), &[1.5, -0.5]);
        let ln4 = Matrix::from_rows(&[[4f64.ln(), 4f64.ln()]]);
        let s2 = LatentStats::new(zeros.clone(), ln4).unwrap();
        let z = reparameterize(&s2, &eps).unwrap();
        assert!((z[(0, 0)] - 1.0).abs() < 1e-15 && (z[(0, 1)] - 3.0).abs() < 1e-15);
        assert!(reparameterize(&stats, &Matrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn logvar_is_clamped() {
        let s = LatentStats::new(Matrix::zeros(1, 2), Matrix::from_rows(&[[-60.0, 45.0]])).unwrap();
        assert_eq!(s.logvar.as_slice(), &[LOGVAR_MIN, LOGVAR_MAX]);
    }

    #[test]
    fn zero_decoder_gives_half_probability() {
        let p = ModelParams::zeros(&Architecture::desk(6, 2));
        let (_, logits) = decode(&p, &Matrix::from_rows(&[[0.3, -1.0]])).unwrap();
        assert!(logits.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_decoder() {
        let arch = Architecture { input_dim: 3, encoder_widths: alloc::vec![], latent_dim: 3, decoder_widths: alloc::vec![] };
        let mut p = ModelParams::zeros(&arch);
        p.decoder[0].weight = Matrix::identity(3);
        let z = Matrix::from_rows(&[[0.1, -0.2, 0.3]]);
        assert_eq!(decode(&p, &z).unwrap().1, z);
    }

    #[test]
    fn hand_evaluated_decoder() {
        let mut p = ModelParams::zeros(&tiny_arch());
        p.decoder[0].weight = Matrix::from_rows(&[[1.0, -2.0]]);
        p.decoder[0].bias = Matrix::from_rows(&[[0.0, 0.5]]);
        p.decoder[1].weight = Matrix::from_rows(&[[1.0, 0.0], [1.0, 1.0]]);
        let (hidden, logits) = decode(&p, &Matrix::from_rows(&[[0.5]])).unwrap();
        let (h0, h1) = (0.5f64.tanh(), (-0.5f64).tanh());
        assert!((hidden[0][(0, 0)] - h0).abs() < 1e-15);
        assert!((logits[(0, 0)] - (h0 + h1)).abs() < 1e-15);
        assert!((logits[(0, 1)] - h1).abs() < 1e-15);
    }

    #[test]
    fn trace_has_ten_named_layers() {
        let arch = Architecture::desk(64, 10);
        let p = ModelParams::init(&arch, 0);
        let x = Matrix::from_fn(3, 64, |i, j| ((i * j) % 2) as f64);
        let t = forward(&p, &x, &Matrix::zeros(3, 10)).unwrap();
        let names: Vec<_> = t.activations().unwrap().iter().map(|a| String::from(a.layer_name())).collect();
        assert_eq!(names, arch.layer_names());
        assert_eq!(names.len(), 10);
        assert_eq!(p.architecture(), arch);
    }

    #[test]
    fn init_is_seeded() {
        let arch = Architecture::desk(8, 2);
        assert_eq!(ModelParams::init(&arch, 5), ModelParams::init(&arch, 5));
        assert_ne!(ModelParams::init(&arch, 5), ModelParams::init(&arch, 6));
    }
}
