//! A fully-connected VAE with hand-written gradients for the β-VAE,
//! annealed VAE, β-TC VAE and DIP-VAE II objectives.

mod grad;
mod model;
mod objective;
mod train;

pub use grad::{backward, Gradients};
pub use model::{
    decode, encode, forward, reparameterize, Architecture, Dense, ForwardTrace, LatentStats, ModelParams,
    LOGVAR_MAX, LOGVAR_MIN,
};
pub use objective::{
    bernoulli_recon_loss, capacity_schedule, dip_covariance, kl_gaussian_per_dim, objective_loss,
    tc_minibatch_log_qz, LossBreakdown, ObjectiveConfig, ObjectiveKind, TcEstimate,
};
pub use train::{
    default_snapshot_schedule, eval_trace, train, Adam, AdamSettings, MemorySink, NoSnapshots, SnapshotSink,
    TrainData, TrainOutcome, TrainSettings,
};
