//! Exact reverse-mode gradients of [`objective_loss`](super::objective_loss)
//! through the reparameterized forward pass.

use alloc::vec;
use alloc::vec::Vec;

use super::model::{Dense, ForwardTrace, ModelParams, LOGVAR_MAX, LOGVAR_MIN};
use super::objective::{
    capacity_schedule, check_tc_inputs, dip_covariance, gaussian_log_density, kl_gaussian_per_dim, sigmoid,
    softmax_in_place, ObjectiveConfig, ObjectiveKind,
};
use crate::matrix::Matrix;
use crate::{Error, Result};

/// Gradients of the total loss, shaped like the model.
pub type Gradients = ModelParams;

fn check_trace(params: &ModelParams, trace: &ForwardTrace, targets: &Matrix) -> Result<()> {
    let arch = params.architecture();
    let m = trace.batch();
    let ok = trace.input.cols() == arch.input_dim
        && trace.encoder_hidden.len() == arch.encoder_widths.len()
        && trace.encoder_hidden.iter().zip(&arch.encoder_widths).all(|(h, &w)| h.cols() == w && h.rows() == m)
        && trace.stats.mean.cols() == arch.latent_dim
        && trace.stats.mean.rows() == m
        && trace.noise.cols() == arch.latent_dim
        && trace.sampled.cols() == arch.latent_dim
        && trace.decoder_hidden.len() == arch.decoder_widths.len()
        && trace.decoder_hidden.iter().zip(&arch.decoder_widths).all(|(h, &w)| h.cols() == w && h.rows() == m)
        && trace.logits.cols() == arch.input_dim
        && trace.logits.rows() == m;
    if !ok {
        return Err(Error::Contract("forward trace does not match the model parameters".into()));
    }
    if targets.rows() != m || targets.cols() != arch.input_dim {
        return Err(Error::Shape("targets do not match the trace".into()));
    }
    Ok(())
}

/// Accumulates `dW = xᵀ·δ`, `db = Σ_rows δ` and returns `δ·Wᵀ`.
fn dense_backward(layer: &Dense, x: &Matrix, delta: &Matrix, grad: &mut Dense) -> Result<Matrix> {
    let dw = x.t_matmul(delta)?;
    for (g, v) in grad.weight.as_mut_slice().iter_mut().zip(dw.as_slice()) {
        *g += v;
    }
    let gb = grad.bias.as_mut_slice();
    for i in 0..delta.rows() {
        for (g, v) in gb.iter_mut().zip(delta.row(i)) {
            *g += v;
        }
    }
    delta.matmul_t(&layer.weight)
}

/// Gradient of the loss w.r.t. every parameter, given a trace recorded by
/// [`forward`](super::forward) with the same parameters.
pub fn backward(
    params: &ModelParams,
    trace: &ForwardTrace,
    targets: &Matrix,
    cfg: &ObjectiveConfig,
    step: u64,
) -> Result<Gradients> {
    cfg.validate()?;
    check_trace(params, trace, targets)?;
    let m = trace.batch();
    let d = params.latent_dim();
    let inv_m = 1.0 / m as f64;
    let stats = &trace.stats;
    let mut grads = ModelParams::zeros(&params.architecture());

    // Reconstruction: d/dl [softplus(l) − t·l] / M = (σ(l) − t) / M
    let mut delta = Matrix::from_vec(
        m,
        trace.logits.cols(),
        trace
            .logits
            .as_slice()
            .iter()
            .zip(targets.as_slice())
            .map(|(&l, &t)| (sigmoid(l) - t) * inv_m)
            .collect(),
    )?;

    let n_dec = params.decoder.len();
    for k in (0..n_dec).rev() {
        let x = if k == 0 { &trace.sampled } else { &trace.decoder_hidden[k - 1] };
        let dx = dense_backward(&params.decoder[k], x, &delta, &mut grads.decoder[k])?;
        delta = if k == 0 {
            dx
        } else {
            let h = &trace.decoder_hidden[k - 1];
            Matrix::from_vec(m, h.cols(), dx.as_slice().iter().zip(h.as_slice()).map(|(g, y)| g * (1.0 - y * y)).collect())?
        };
    }
    let mut d_z = delta;
    let mut d_mean = Matrix::zeros(m, d);
    let mut d_logvar = Matrix::zeros(m, d);

    let kl_weight = match cfg.kind {
        ObjectiveKind::BetaVae => cfg.beta,
        ObjectiveKind::AnnealedVae => {
            let kl: f64 = kl_gaussian_per_dim(stats)?.iter().sum();
            let gap = kl - capacity_schedule(step, cfg);
            let sign = if gap > 0.0 {
                1.0
            } else if gap < 0.0 {
                -1.0
            } else {
                0.0
            };
            cfg.gamma * sign
        }
        ObjectiveKind::BetaTcVae | ObjectiveKind::DipVaeII => 1.0,
    };
    for i in 0..m {
        for j in 0..d {
            let mu = stats.mean[(i, j)];
            let lv = stats.logvar[(i, j)];
            d_mean[(i, j)] += kl_weight * mu * inv_m;
            d_logvar[(i, j)] += kl_weight * 0.5 * (libm::exp(lv) - 1.0) * inv_m;
        }
    }

    match cfg.kind {
        ObjectiveKind::BetaTcVae if cfg.beta != 1.0 => {
            tc_backward(trace, cfg.dataset_size, cfg.beta - 1.0, &mut d_z, &mut d_mean, &mut d_logvar)?;
        }
        ObjectiveKind::DipVaeII => {
            let cov = dip_covariance(stats)?;
            // dP/dCov, symmetric.
            let g = Matrix::from_fn(d, d, |a, b| {
                if a == b {
                    2.0 * cfg.lambda_d * (cov[(a, a)] - 1.0)
                } else {
                    2.0 * cfg.lambda_od * cov[(a, b)]
                }
            });
            let means = stats.mean.column_means();
            for i in 0..m {
                let centered: Vec<f64> = stats.mean.row(i).iter().zip(&means).map(|(v, c)| v - c).collect();
                for a in 0..d {
                    let gc: f64 = (0..d).map(|b| g[(a, b)] * centered[b]).sum();
                    d_mean[(i, a)] += 2.0 * inv_m * gc;
                    d_logvar[(i, a)] += g[(a, a)] * libm::exp(stats.logvar[(i, a)]) * inv_m;
                }
            }
        }
        _ => {}
    }

    // z = μ + exp(½ lv) ε
    for i in 0..m {
        for j in 0..d {
            let gz = d_z[(i, j)];
            d_mean[(i, j)] += gz;
            d_logvar[(i, j)] += gz * 0.5 * libm::exp(0.5 * stats.logvar[(i, j)]) * trace.noise[(i, j)];
        }
    }
    // The clamp passes gradient only inside its bounds.
    for (g, &raw) in d_logvar.as_mut_slice().iter_mut().zip(trace.logvar_raw.as_slice()) {
        if !(LOGVAR_MIN..=LOGVAR_MAX).contains(&raw) {
            *g = 0.0;
        }
    }

    let n_enc = params.encoder.len();
    let top = if n_enc == 0 { &trace.input } else { &trace.encoder_hidden[n_enc - 1] };
    let mut dh = dense_backward(&params.mean_head, top, &d_mean, &mut grads.mean_head)?;
    let dh_lv = dense_backward(&params.logvar_head, top, &d_logvar, &mut grads.logvar_head)?;
    for (a, b) in dh.as_mut_slice().iter_mut().zip(dh_lv.as_slice()) {
        *a += b;
    }
    for k in (0..n_enc).rev() {
        let h = &trace.encoder_hidden[k];
        for (g, &y) in dh.as_mut_slice().iter_mut().zip(h.as_slice()) {
            if y <= 0.0 {
                *g = 0.0;
            }
        }
        let x = if k == 0 { &trace.input } else { &trace.encoder_hidden[k - 1] };
        let dx = dense_backward(&params.encoder[k], x, &dh, &mut grads.encoder[k])?;
        dh = dx;
    }
    Ok(grads)
}

/// Adds `weight · ∂TC/∂{z, μ, logvar}` for the minibatch estimator.
///
/// With `ℓ_ijk = log N(z_ik; μ_jk, σ²_jk)`, the joint term has weights
/// `softmax_j(Σ_k ℓ_ijk)` and each marginal term `softmax_j(ℓ_ijk)`; the TC
/// gradient w.r.t. `ℓ_ijk` is their difference over M.
fn tc_backward(
    trace: &ForwardTrace,
    dataset_size: usize,
    weight: f64,
    d_z: &mut Matrix,
    d_mean: &mut Matrix,
    d_logvar: &mut Matrix,
) -> Result<()> {
    let stats = &trace.stats;
    let z = &trace.sampled;
    check_tc_inputs(z, stats, dataset_size)?;
    let (m, d) = (stats.batch(), stats.latent_dim());
    let scale = weight / m as f64;
    let inv_var: Vec<f64> = stats.logvar.as_slice().iter().map(|&lv| libm::exp(-lv)).collect();
    let mut ell = vec![0.0; m * d];
    let mut joint = vec![0.0; m];
    let mut marg = vec![0.0; m];
    for i in 0..m {
        for j in 0..m {
            let mut s = 0.0;
            for k in 0..d {
                let l = gaussian_log_density(z[(i, k)], stats.mean[(j, k)], stats.logvar[(j, k)]);
                ell[j * d + k] = l;
                s += l;
            }
            joint[j] = s;
        }
        softmax_in_place(&mut joint);
        for k in 0..d {
            for j in 0..m {
                marg[j] = ell[j * d + k];
            }
            softmax_in_place(&mut marg);
            for j in 0..m {
                let c = scale * (joint[j] - marg[j]);
                if c == 0.0 {
                    continue;
                }
                let diff = z[(i, k)] - stats.mean[(j, k)];
                let iv = inv_var[j * d + k];
                d_z[(i, k)] -= c * diff * iv;
                d_mean[(j, k)] += c * diff * iv;
                d_logvar[(j, k)] += c * 0.5 * (diff * diff * iv - 1.0);
            }
        }
    }
    Ok(())
}
