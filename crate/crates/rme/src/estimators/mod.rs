//! The estimator suite: K-NN averaging, simple Kriging (LMMSE), kernel ridge
//! regression, a convolutional completion network, and the FRADE hybrid, all
//! behind one `fit(observations, grid) -> MapEstimate` surface.

pub mod frade;
pub mod knn;
pub mod kriging;
pub mod krr;
pub mod network;

use ndarray::Array2;

pub use frade::{frade_assemble_input, FradeParams};
pub use knn::{knn_estimate, KnnParams};
pub use kriging::{kriging_estimate, KrigingModel, KrigingParams};
pub use krr::{gram_matrix, krr_fit, krr_objective, KernelKind, KrrModel, KrrParams};
pub use network::{network_forward, ConvLayer, NetworkWeights};

use crate::error::Result;
use crate::geo::{GridSpec, Location, Measurement};

/// Estimator selection plus its trained parameters.
#[derive(Debug, Clone)]
pub enum EstimatorConfig {
    Knn(KnnParams),
    Kriging(KrigingParams),
    Krr(KrrParams),
    Cnn(NetworkWeights),
    Frade(FradeParams),
}

impl EstimatorConfig {
    pub fn id(&self) -> &'static str {
        match self {
            EstimatorConfig::Knn(_) => "knn",
            EstimatorConfig::Kriging(_) => "kriging",
            EstimatorConfig::Krr(_) => "krr",
            EstimatorConfig::Cnn(_) => "cnn",
            EstimatorConfig::Frade(_) => "frade",
        }
    }

    /// Fit on observed measurements. Grid-aware estimators quantize onto
    /// `spec`; grid-agnostic ones ignore it except when asked for grid values.
    pub fn fit(&self, obs: &[Measurement], spec: &GridSpec) -> Result<MapEstimate> {
        match self {
            EstimatorConfig::Knn(p) => {
                p.check(obs.len())?;
                Ok(MapEstimate::Knn {
                    obs: obs.to_vec(),
                    params: *p,
                })
            }
            EstimatorConfig::Kriging(p) => {
                Ok(MapEstimate::Kriging(KrigingModel::fit(obs, p)?))
            }
            EstimatorConfig::Krr(p) => Ok(MapEstimate::Krr(KrrModel::fit(obs, p)?)),
            EstimatorConfig::Cnn(w) => {
                let q = crate::geo::quantize(
                    &crate::geo::EstimationInstance {
                        measurements: obs.to_vec(),
                        patch: crate::geo::Patch {
                            corner: spec.origin,
                            side: spec.n_cols as f64 * spec.spacing,
                        },
                    },
                    spec,
                    crate::geo::CombiningMode::DbMean,
                );
                let input = ndarray::stack(
                    ndarray::Axis(0),
                    &[q.values.view(), q.mask.view()],
                )
                .expect("matching shapes");
                let values = network_forward(w, &input)?;
                Ok(MapEstimate::Grid { values, spec: *spec })
            }
            EstimatorConfig::Frade(p) => {
                let input = frade_assemble_input(obs, spec, p)?;
                let values = network_forward(&p.weights, &input)?;
                Ok(MapEstimate::Grid { values, spec: *spec })
            }
        }
    }
}

/// A fitted map estimate, evaluable at any location.
#[derive(Debug, Clone)]
pub enum MapEstimate {
    Knn { obs: Vec<Measurement>, params: KnnParams },
    Kriging(KrigingModel),
    Krr(KrrModel),
    /// Grid-aware estimate; off-grid queries return the nearest grid entry.
    Grid { values: Array2<f64>, spec: GridSpec },
}

impl MapEstimate {
    pub fn evaluate(&self, loc: &Location) -> f64 {
        match self {
            MapEstimate::Knn { obs, params } => {
                knn_estimate(obs, params, loc).expect("k checked at fit time")
            }
            MapEstimate::Kriging(m) => m.estimate(loc),
            MapEstimate::Krr(m) => m.estimate(loc),
            MapEstimate::Grid { values, spec } => {
                let (r, c) = spec.nearest(loc);
                values[[r, c]]
            }
        }
    }

    /// Evaluate on every point of `spec`, row-major matrix layout.
    pub fn grid_values(&self, spec: &GridSpec) -> Array2<f64> {
        match self {
            MapEstimate::Grid { values, spec: own } if own == spec => values.clone(),
            _ => Array2::from_shape_fn((spec.n_rows, spec.n_cols), |(r, c)| {
                self.evaluate(&spec.point0(r, c))
            }),
        }
    }
}
