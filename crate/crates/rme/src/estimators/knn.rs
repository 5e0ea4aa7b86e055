//! K-nearest-neighbor averaging.

use crate::error::{Result, RmeError};
use crate::geo::{Location, Measurement};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KnnParams {
    pub k: usize,
}

impl KnnParams {
    pub fn check(&self, n_obs: usize) -> Result<()> {
        if self.k == 0 || self.k > n_obs {
            return Err(RmeError::InvalidArgument(format!(
                "k={} must satisfy 1 <= k <= N_obs={}",
                self.k, n_obs
            )));
        }
        Ok(())
    }
}

/// Mean of the `k` observed powers nearest to `query`. Distance ties are
/// broken by measurement index.
pub fn knn_estimate(obs: &[Measurement], params: &KnnParams, query: &Location) -> Result<f64> {
    params.check(obs.len())?;
    let mut order: Vec<usize> = (0..obs.len()).collect();
    order.sort_by(|&a, &b| {
        let da = obs[a].loc.distance(query);
        let db = obs[b].loc.distance(query);
        da.partial_cmp(&db).unwrap().then(a.cmp(&b))
    });
    let sum: f64 = order[..params.k].iter().map(|&n| obs[n].power_db).sum();
    Ok(sum / params.k as f64)
}
