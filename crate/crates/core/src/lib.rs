//! Gaussian graphical model selection and edge-wise inference when variables
//! are observed jointly on uneven subsets of samples.
//!
//! Pipeline: masked samples ([`obsmodel`]) → entrywise covariance
//! ([`covest`]) → projection onto a positive-definite floor ([`psdproj`]) →
//! node-wise penalized regressions ([`nblasso`]) → debiased edge statistics
//! with heterogeneous variances ([`inference`]) → multiplicity control
//! ([`multitest`]). [`simlab`] generates synthetic studies.
//!
//! All variable indices are zero-based.

extern crate self as erosegm;

pub mod covest;
pub mod error;
pub mod inference;
pub mod multitest;
pub mod nblasso;
pub mod normal;
pub mod obsmodel;
pub mod psdproj;
pub mod simlab;

#[cfg(test)]
pub(crate) mod testutil;

pub use covest::{unbiased_cov, PairwiseCovariance};
pub use error::{Error, Result};
pub use inference::{EdgeInference, EdgeRecord, EdgeTester, IndexSets, ThetaBar};
pub use multitest::{fdr_select, holm, FdrSelection, PvalueTable};
pub use nblasso::{default_penalties, LassoConfig, NeighborhoodFit, PenaltyVector};
pub use obsmodel::{pairwise_counts, MaskedDataset, ObservationIndex, PairCounts, Sample};
pub use psdproj::{project_psd_weighted, ProjectedCovariance, ProjectionConfig};
