//! Desk-scale experiment harness: synthetic domains, a small classifier,
//! training runs, throughput and reports.

pub mod classifier;
pub mod dataset;
pub mod desk;
pub mod experiment;
pub mod report;
pub mod throughput;

pub use classifier::{Classifier, ClassifierConfig};
pub use dataset::{build_desk_domains, Dataset, DeskDomainParams, DomainKind, Shape, Split};
pub use desk::{desk_style_images, train_desk_style, DeskStyle, DeskStyleParams};
pub use experiment::{
    ablate_color_jitter, grid_search, mean_std, train_classifier, AblationTable, AugmentSnapshot,
    CellSummary, CurvePoint, ExperimentConfig, ExperimentResult, GridReport, GridSearchSpec,
    HeldOutConfiguration, Timing,
};
pub use throughput::{hardware_descriptor, measure_throughput, ThroughputReport};
