//! Transferability estimation for selecting pretrained source models.
//!
//! Scores how well a source model's features (or source-class probabilities)
//! on a small labelled probe set predict its accuracy after fine-tuning on a
//! target dataset. Includes PARC, RSA, DDS, LEEP, NCE, H-Score, 1-NN and
//! logistic baselines, a depth/data-size heuristic, PCA and normalization
//! calibration, and a harness that correlates scores with ground-truth
//! transfer outcomes.
//!
//! Module map:
//! - [`tensorio`]: PTNS tensor files, bank manifests, label files.
//! - [`stats`]: correlations, ranking, PCA, pseudo-inverse.
//! - [`embed`]: label vectorization for classification, multi-label and detection.
//! - [`methods`]: every scoring method.
//! - [`calibrate`]: feature reduction/normalization and depth ensembles.
//! - [`bench`]: probe sampling, correlation metrics and the benchmark runner.
//! - [`cli`]: the `modelpick` command line.

pub mod bench;
pub mod calibrate;
pub mod cli;
pub mod embed;
pub mod methods;
pub mod stats;
pub mod tensorio;

/// Dense real matrix used throughout; rows are probe images.
pub type Matrix = nalgebra::DMatrix<f64>;
