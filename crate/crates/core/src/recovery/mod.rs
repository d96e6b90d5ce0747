//! Self-supervised mode recovery: an encoder assigns each segment a latent
//! mode, a bank of mode-conditioned vector fields reconstructs the segment,
//! and both are trained end to end. Clustering baselines, v-measure and mode
//! pruning live alongside.

mod cluster;
mod features;
mod metrics;
mod model;
mod prune;
mod supervision;
mod train;

pub use cluster::{
    dbscan, hierarchical_cluster, inertia, kmeanspp, noise_as_cluster, KMeansResult,
    KMEANS_RESTARTS, NOISE,
};
pub use features::{feature_dim, segment_features, standardized_features, Scaler};
pub use metrics::{majority_vote_accuracy, v_measure, v_measure_scores, VMeasure};
pub use model::{
    decode_flow, reconstruct_subtrajectory, rk4_on_grid, EncoderInput, LatentKind, LossKind,
    NhaRecoveryModel, RecoveryCheckpoint, RecoveryHyper,
};
pub use prune::{field_distance, prune_modes, MergeLog};
pub use supervision::{collect_event_supervision, supervision_len, EventSample, EventSupervision};
pub use train::{
    evaluate_mse, label_segments, mixing_fraction, mixture_deviation, predict_labels,
    predict_state_labels, reconstruction_loss_tape, segment_mse, train_recovery, windows,
    RecoveryReport,
};
