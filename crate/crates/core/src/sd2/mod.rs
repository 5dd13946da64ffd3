//! Sub-dynamics discovery: partitions of the action dimensions from
//! Pearson features and agglomerative clustering, complete decomposition,
//! human-authored priors, or random assignment.

mod cluster;
mod features;
mod partition;

pub use cluster::{
    cluster_similarity, cosine, rela, reference_eta, sd2_cluster, sd2_cluster_traced, ClusterStep,
    ClusterTrace,
};
pub use features::{pearson, pearson_features, FeatureMatrix};
pub use partition::{complete_decomposition, load_prior_partition, random_partition, Partition};
