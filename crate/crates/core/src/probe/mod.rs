//! Linear probes, PCA baselines and transfer evaluation.

pub mod linalg;
pub mod metrics;
pub mod pca;
pub mod ridge;
pub mod softmax;
pub mod suite;

pub use metrics::{accuracy, kendall_tau, r2_score};
pub use pca::{Kernel, Pca};
pub use ridge::{alpha_grid, ridge_fit, ridge_solve, RidgeModel, Standardizer};
pub use softmax::{softmax_probe_fit, SoftmaxConfig, SoftmaxProbe};
pub use suite::{
    ood_csv, ood_transfer, run_probe_suite, FittedCell, FittedProbe, FittedSource, OodRow, ProbeConfig, ProbeReport, ProbeRow,
    ProbeTask, SourceKind, Target, TaskKind, MIN_OOD_SAMPLES,
};
