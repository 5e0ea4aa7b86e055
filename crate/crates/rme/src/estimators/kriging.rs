//! Simple Kriging: the LMMSE spatial interpolator under the Gudmundson
//! shadowing covariance.
//!
//! The estimate is `p(x) = mu + c(x)^T C^{-1} (p - mu 1)` with
//! `C_{nn'} = var * 2^(-d_{nn'}/half) + noise_var * 1{n=n'}` and
//! `c(x)_n = var * 2^(-|x - x_n|/half)`. The mean `mu` is the sample mean of
//! the observed powers, added back after centering.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, RmeError};
use crate::geo::{Location, Measurement};
use crate::synth::cholesky_with_jitter;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KrigingParams {
    /// Shadowing variance sigma_u^2, dB^2.
    pub shadow_variance: f64,
    /// Correlation half-distance delta_s, meters.
    pub shadow_half_distance: f64,
    /// Measurement noise variance sigma_z^2, dB^2 (also absorbs any
    /// spatially white fading term).
    pub noise_variance: f64,
}

impl KrigingParams {
    fn cov(&self, d: f64) -> f64 {
        self.shadow_variance * 2f64.powf(-d / self.shadow_half_distance)
    }
}

#[derive(Debug, Clone)]
pub struct KrigingModel {
    params: KrigingParams,
    locs: Vec<Location>,
    mean: f64,
    /// C^{-1} (p - mu 1), precomputed at fit time.
    weights: Vec<f64>,
}

impl KrigingModel {
    pub fn fit(obs: &[Measurement], params: &KrigingParams) -> Result<Self> {
        if obs.is_empty() {
            return Err(RmeError::InvalidArgument(
                "kriging requires at least one observation".into(),
            ));
        }
        let n = obs.len();
        let mean = obs.iter().map(|m| m.power_db).sum::<f64>() / n as f64;
        let mut cov = DMatrix::zeros(n, n);
        for a in 0..n {
            for b in a..n {
                let v = params.cov(obs[a].loc.distance(&obs[b].loc));
                cov[(a, b)] = v;
                cov[(b, a)] = v;
            }
        }
        for k in 0..n {
            cov[(k, k)] += params.noise_variance;
        }
        let l = cholesky_with_jitter(cov)
            .map_err(|e| RmeError::Numerical(format!("kriging covariance solve failed: {e}")))?;
        let centered = DVector::from_iterator(n, obs.iter().map(|m| m.power_db - mean));
        // Solve L L^T w = centered by two triangular solves.
        let y = l
            .clone()
            .solve_lower_triangular(&centered)
            .ok_or_else(|| RmeError::Numerical("singular Cholesky factor".into()))?;
        let w = l
            .transpose()
            .solve_upper_triangular(&y)
            .ok_or_else(|| RmeError::Numerical("singular Cholesky factor".into()))?;
        Ok(KrigingModel {
            params: *params,
            locs: obs.iter().map(|m| m.loc).collect(),
            mean,
            weights: w.iter().copied().collect(),
        })
    }

    pub fn estimate(&self, query: &Location) -> f64 {
        let cross: f64 = self
            .locs
            .iter()
            .zip(&self.weights)
            .map(|(loc, w)| self.params.cov(query.distance(loc)) * w)
            .sum();
        self.mean + cross
    }
}

/// One-shot fit-and-evaluate.
pub fn kriging_estimate(
    obs: &[Measurement],
    params: &KrigingParams,
    query: &Location,
) -> Result<f64> {
    Ok(KrigingModel::fit(obs, params)?.estimate(query))
}
