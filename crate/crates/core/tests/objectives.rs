//! Objective terms against Monte-Carlo and direct-evaluation oracles.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use simscope_core::vae::{
    dip_covariance, forward, kl_gaussian_per_dim, objective_loss, tc_minibatch_log_qz, Architecture, LatentStats,
    ModelParams, ObjectiveConfig,
};
use simscope_core::Matrix;

fn normal_density(z: f64, mu: f64, var: f64) -> f64 {
    (-(z - mu) * (z - mu) / (2.0 * var)).exp() / (2.0 * PI * var).sqrt()
}

fn random_stats(rng: &mut ChaCha8Rng, m: usize, d: usize) -> LatentStats {
    let mean = Matrix::from_fn(m, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let logvar = Matrix::from_fn(m, d, |_, _| rng.random_range(-1.5..1.0));
    LatentStats::new(mean, logvar).unwrap()
}

#[test]
fn closed_form_kl_matches_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let stats = random_stats(&mut rng, 1, 4);
    let kl = kl_gaussian_per_dim(&stats).unwrap();
    let draws = 100_000;
    for (j, &want) in kl.iter().enumerate() {
        let mu = stats.mean[(0, j)];
        let var = stats.logvar[(0, j)].exp();
        let mut acc = 0.0;
        for _ in 0..draws {
            let z = mu + var.sqrt() * rng.sample::<f64, _>(StandardNormal);
            acc += normal_density(z, mu, var).ln() - normal_density(z, 0.0, 1.0).ln();
        }
        let mc = acc / draws as f64;
        assert!((mc - want).abs() <= 0.02 * want, "dim {j}: closed form {want}, Monte-Carlo {mc}");
    }
}

#[test]
fn dip_covariance_matches_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (m, d) = (6, 3);
    let stats = random_stats(&mut rng, m, d);
    let cov = dip_covariance(&stats).unwrap();
    let draws = 100_000;
    let mut samples = DMatrix::<f64>::zeros(draws, d);
    for s in 0..draws {
        let i = rng.random_range(0..m);
        for k in 0..d {
            let sd = (0.5 * stats.logvar[(i, k)]).exp();
            samples[(s, k)] = stats.mean[(i, k)] + sd * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let means = samples.row_mean();
    let centered = DMatrix::from_fn(draws, d, |r, c| samples[(r, c)] - means[c]);
    let mc = centered.transpose() * &centered / draws as f64;
    let scale = cov.as_slice().iter().fold(0.0f64, |a, v| a.max(v.abs()));
    for a in 0..d {
        for b in 0..d {
            assert!((cov[(a, b)] - mc[(a, b)]).abs() <= 0.05 * scale, "({a},{b}): {} vs {}", cov[(a, b)], mc[(a, b)]);
        }
    }
}

#[test]
fn dip_covariance_is_positive_semidefinite() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..20 {
        let stats = random_stats(&mut rng, 8, 5);
        let cov = dip_covariance(&stats).unwrap();
        let eig = DMatrix::from_row_slice(5, 5, cov.as_slice()).symmetric_eigenvalues();
        assert!(eig.iter().all(|&e| e >= -1e-12), "{eig}");
    }
}

#[test]
fn tc_estimator_matches_direct_density_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let n = 50;
    for _ in 0..10 {
        let stats = random_stats(&mut rng, 2, 1);
        let z = Matrix::from_fn(2, 1, |_, _| rng.sample::<f64, _>(StandardNormal));
        let est = tc_minibatch_log_qz(&z, &stats, n).unwrap();
        let mut direct = 0.0;
        for i in 0..2 {
            let q: f64 = (0..2)
                .map(|j| normal_density(z[(i, 0)], stats.mean[(j, 0)], stats.logvar[(j, 0)].exp()))
                .sum();
            direct += (q / (2 * n) as f64).ln();
        }
        direct /= 2.0;
        assert!((est.log_qz - direct).abs() < 1e-10);
        assert!((est.log_qz_product - direct).abs() < 1e-10);
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[test]
fn unit_beta_loss_is_the_negative_elbo() {
    let arch = Architecture::desk(6, 3);
    let params = ModelParams::init(&arch, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let x = Matrix::from_fn(5, 6, |_, _| if rng.random::<bool>() { 1.0 } else { 0.0 });
    let eps = Matrix::from_fn(5, 3, |_, _| rng.sample(StandardNormal));
    let trace = forward(&params, &x, &eps).unwrap();

    let mut neg_elbo = 0.0;
    for i in 0..5 {
        for j in 0..6 {
            let p = sigmoid(trace.logits[(i, j)]);
            let t = x[(i, j)];
            neg_elbo -= t * p.ln() + (1.0 - t) * (1.0 - p).ln();
        }
        for k in 0..3 {
            let (mu, lv) = (trace.stats.mean[(i, k)], trace.stats.logvar[(i, k)]);
            neg_elbo += -0.5 * (1.0 + lv - mu * mu - lv.exp());
        }
    }
    neg_elbo /= 5.0;

    let beta = objective_loss(&trace, &x, &ObjectiveConfig::beta_vae(1.0, 100), 0).unwrap();
    assert!((beta.total - neg_elbo).abs() < 1e-10 * neg_elbo.abs(), "{} vs {neg_elbo}", beta.total);

    let annealed = ObjectiveConfig { gamma: 1.0, c_max: 0.0, ..ObjectiveConfig::annealed_vae(0.0, 100) };
    assert_eq!(objective_loss(&trace, &x, &annealed, 7).unwrap().total, beta.total);
    let tc = objective_loss(&trace, &x, &ObjectiveConfig::beta_tc_vae(1.0, 100), 0).unwrap();
    assert_eq!(tc.total, beta.total);
}
