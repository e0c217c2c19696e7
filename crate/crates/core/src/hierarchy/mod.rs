//! Low-dimensional projection, Gaussian-mixture soft clustering and the
//! recursive summary tree built on top of them.

pub mod gmm;
mod linalg;
pub mod projection;
pub mod tree;

pub use gmm::{
    bic, fit_gmm_em, select_cluster_count, soft_assign, BicPenalty, BicPoint, CovarianceKind, EmConfig, GaussianMixture, Selection,
    SelectionConfig, SoftAssignment,
};
pub use projection::{reduce_dimensions, PcaProjector, ProjectedPoint, Projection, Projector};
pub use tree::{build_summary_tree, LevelReport, Member, SummaryTree, SummaryTreeNode, TreeBuildFailure, TreeConfig};
