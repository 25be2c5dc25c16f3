//! Score and feature calibration: PCA reduction, per-column feature
//! normalization, and the depth ("capacity to change") ensembles that are
//! applied across all sources of one target.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats::{self, StatsError};
use crate::Matrix;

pub const DEFAULT_LAMBDA_ELL: f64 = 0.25;
pub const DEFAULT_ELL_MAX: u32 = 50;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ensemble {
    #[default]
    None,
    /// `(a - mean) / std + depth / ell_max`
    ZnormPlusDepth,
    /// `(a - min) / (max - min) + depth / ell_max`
    MinmaxPlusDepth,
    /// `(a - min) / (max - min) + lambda * depth / ell_max`
    MinmaxScaled,
}

impl Ensemble {
    pub const ALL: [Ensemble; 4] = [
        Ensemble::None,
        Ensemble::ZnormPlusDepth,
        Ensemble::MinmaxPlusDepth,
        Ensemble::MinmaxScaled,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ensemble::None => "none",
            Ensemble::ZnormPlusDepth => "znorm_plus_depth",
            Ensemble::MinmaxPlusDepth => "minmax_plus_depth",
            Ensemble::MinmaxScaled => "minmax_scaled",
        }
    }
}

impl fmt::Display for Ensemble {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ensemble {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ensemble::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Ensemble::ALL.iter().map(|e| e.name()).collect();
                format!("unknown ensemble '{s}' (expected one of: {})", names.join(", "))
            })
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum CalibrateError {
    #[error("ensemble needs at least 2 models, got {0}")]
    TooFewModels(usize),
    #[error("no depth for model '{0}'")]
    MissingDepth(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Per-target summary of raw scores over all sources.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationStats {
    pub target_id: String,
    pub mu: f64,
    pub sigma: f64,
    pub min: f64,
    pub max: f64,
}

impl CalibrationStats {
    pub fn from_scores(target_id: &str, scores: &[f64]) -> Self {
        let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self {
            target_id: target_id.to_string(),
            mu: stats::mean(scores),
            sigma: stats::population_std(scores),
            min,
            max,
        }
    }
}

/// PCA to `min(f, n - 1, d)` dimensions, fitted on `features` itself.
pub fn reduce_features(features: &Matrix, f: usize) -> Result<Matrix, StatsError> {
    let model = stats::pca_fit(features, f)?;
    stats::pca_transform(&model, features)
}

/// Standardizes each column to mean 0 and population std 1; constant
/// columns become 0.
pub fn normalize_features(features: &Matrix) -> Matrix {
    let mut out = features.clone();
    for mut col in out.column_iter_mut() {
        let v: Vec<f64> = col.iter().copied().collect();
        for (dst, z) in col.iter_mut().zip(stats::zscore(&v)) {
            *dst = z;
        }
    }
    out
}

/// Combines raw scores of every source for one target with the relative
/// source depth.
pub fn ensemble_depth(
    raw: &BTreeMap<String, f64>,
    depths: &BTreeMap<String, u32>,
    ell_max: u32,
    variant: Ensemble,
    lambda_ell: f64,
) -> Result<BTreeMap<String, f64>, CalibrateError> {
    if variant == Ensemble::None {
        return Ok(raw.clone());
    }
    if raw.len() < 2 {
        return Err(CalibrateError::TooFewModels(raw.len()));
    }
    if ell_max == 0 {
        return Err(CalibrateError::InvalidParameter("ell_max must be positive".into()));
    }
    if !(lambda_ell > 0.0) {
        return Err(CalibrateError::InvalidParameter(format!("lambda_ell must be > 0, got {lambda_ell}")));
    }
    let values: Vec<f64> = raw.values().copied().collect();
    let st = CalibrationStats::from_scores("", &values);
    let range = st.max - st.min;
    raw.iter()
        .map(|(model_id, &a)| {
            let depth = *depths
                .get(model_id)
                .ok_or_else(|| CalibrateError::MissingDepth(model_id.clone()))?;
            let rel = depth as f64 / ell_max as f64;
            let minmax = if range > 0.0 { (a - st.min) / range } else { 0.0 };
            let v = match variant {
                Ensemble::ZnormPlusDepth => {
                    let z = if st.sigma > 0.0 { (a - st.mu) / st.sigma } else { 0.0 };
                    z + rel
                }
                Ensemble::MinmaxPlusDepth => minmax + rel,
                Ensemble::MinmaxScaled => minmax + lambda_ell * rel,
                Ensemble::None => unreachable!(),
            };
            Ok((model_id.clone(), v))
        })
        .collect()
}
