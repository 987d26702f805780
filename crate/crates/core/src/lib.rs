//! Biosignal processing: container formats with automatic detection,
//! eval-free header parsing, NaN-tolerant statistics, AR feature extraction,
//! discriminant analysis with cross-validation, BCI metrics and a staged
//! benchmark.

pub mod bench;
pub mod classify;
pub mod evaluate;
pub mod formats;
pub mod safeparse;
pub mod nanstat;
pub mod tsa;
pub mod par;
pub mod preprocess;
pub mod rng;
