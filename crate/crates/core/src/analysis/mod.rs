//! Statistics over collections of fitted presets.

pub mod cluster;
pub mod correlation;
pub mod pca;
pub mod response;

pub use cluster::{cluster_members, ward_cluster, Merge};
pub use correlation::{effect_correlation, effect_groups, minimal_labels, ranks, spearman, CorrelationMatrix, EffectCorrelation, Group};
pub use pca::{cpv, cpv_curve, curve_auc, curve_csv, pca_fit, PcaModel, PERTURB_SCALES};
pub use response::perturbation_responses;
