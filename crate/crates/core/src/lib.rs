//! Bias and dependence corrections for crowdsourced epidemiological line lists.
//!
//! The crate covers two problems with convenience-collected case data:
//!
//! * unequal coverage across regions, corrected with post-sampling ratio
//!   weights against a population-proportional reference design
//!   ([`design_weights`], [`estimators`]);
//! * spatial correlation between cases, measured with Moran's I and a
//!   two-level SAR model and turned into effective sample sizes and adjusted
//!   rank tests ([`spatial`], [`rank_tests`]).
//!
//! [`mc_sim`] checks both corrections against simulated ground truth.

// `!(x > 0.0)` style guards deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod design_weights;
pub mod error;
pub mod estimators;
pub mod line_list;
pub mod mc_sim;
pub mod rank_tests;
pub mod rng;
pub mod spatial;

pub use design_weights::{
    attach_weights, merge_strata, post_sampling_ratios, target_allocation, Allocation, DesignSpec, Normalization,
    PostSamplingRatio, RatioFlag, WeightedSample,
};
pub use error::{Error, ErrorKind, Result};
pub use estimators::{Estimate, SeAdjustment};
pub use line_list::{CaseRecord, DelayDays, Region, RegionTable, Sex};
pub use mc_sim::{McReport, SimConfig};
pub use rank_tests::{Adjustment, TestResult};
pub use spatial::{EssReport, Scheme, SpatialModel, WeightMatrix};
