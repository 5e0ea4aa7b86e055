//! FRADE: feature-rich assisted deep estimation. The completion network sees
//! five input channels — the masked dB-mean quantized measurements, the
//! occupancy mask, and full-grid K-NN, Kriging, and KRR estimates fitted on
//! the same observations.

use ndarray::{Array2, Array3};

use crate::error::Result;
use crate::geo::{
    quantize, CombiningMode, EstimationInstance, GridSpec, Measurement, Patch,
};

use super::knn::{knn_estimate, KnnParams};
use super::kriging::{KrigingModel, KrigingParams};
use super::krr::{KrrModel, KrrParams};
use super::network::NetworkWeights;

pub const FRADE_CHANNELS: usize = 5;

#[derive(Debug, Clone)]
pub struct FradeParams {
    pub knn: KnnParams,
    pub kriging: KrigingParams,
    pub krr: KrrParams,
    pub weights: NetworkWeights,
}

/// Build the five-channel network input from raw observations. The auxiliary
/// estimators are fitted on the plain (unquantized) measurements and then
/// evaluated at every grid point.
pub fn frade_assemble_input(
    obs: &[Measurement],
    spec: &GridSpec,
    params: &FradeParams,
) -> Result<Array3<f64>> {
    let q = quantize(
        &EstimationInstance {
            measurements: obs.to_vec(),
            patch: Patch {
                corner: spec.origin,
                side: spec.n_cols as f64 * spec.spacing,
            },
        },
        spec,
        CombiningMode::DbMean,
    );

    // K-NN channel degrades gracefully: when fewer than k observations exist,
    // use all of them.
    let knn = KnnParams {
        k: params.knn.k.min(obs.len()),
    };
    knn.check(obs.len())?;
    let kriging = KrigingModel::fit(obs, &params.kriging)?;
    let krr = KrrModel::fit(obs, &params.krr)?;

    let (h, w) = (spec.n_rows, spec.n_cols);
    let mut input = Array3::zeros((FRADE_CHANNELS, h, w));
    for r in 0..h {
        for c in 0..w {
            let p = spec.point0(r, c);
            input[[0, r, c]] = q.values[[r, c]];
            input[[1, r, c]] = q.mask[[r, c]];
            input[[2, r, c]] = knn_estimate(obs, &knn, &p)?;
            input[[3, r, c]] = kriging.estimate(&p);
            input[[4, r, c]] = krr.estimate(&p);
        }
    }
    Ok(input)
}

/// The two measurement channels alone, as used by the plain completion
/// network.
pub fn masked_channels(obs: &[Measurement], spec: &GridSpec) -> (Array2<f64>, Array2<f64>) {
    let q = quantize(
        &EstimationInstance {
            measurements: obs.to_vec(),
            patch: Patch {
                corner: spec.origin,
                side: spec.n_cols as f64 * spec.spacing,
            },
        },
        spec,
        CombiningMode::DbMean,
    );
    (q.values, q.mask)
}
