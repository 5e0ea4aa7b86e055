//! Kernel ridge regression with the literal coefficient penalty
//! `(1/N) sum_n |y_n - sum_n' a_n' k(x_n, x_n')|^2 + lambda sum_n a_n^2`.
//!
//! Note this penalizes `|a|^2` rather than the RKHS norm `a^T K a`; the
//! closed form is the normal-equations solve `(K^T K + N lambda I) a = K^T y`
//! on mean-centered targets.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, RmeError};
use crate::geo::{Location, Measurement};
use crate::synth::cholesky_with_jitter;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    Gaussian,
    Laplacian,
}

impl KernelKind {
    pub fn name(&self) -> &'static str {
        match self {
            KernelKind::Gaussian => "gaussian",
            KernelKind::Laplacian => "laplacian",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(KernelKind::Gaussian),
            "laplacian" => Ok(KernelKind::Laplacian),
            other => Err(RmeError::Config(format!("unknown kernel '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KrrParams {
    /// Regularization lambda > 0.
    pub reg: f64,
    pub kernel: KernelKind,
    /// Gaussian: exp(-d^2/width) with width in m^2; Laplacian: exp(-d/width)
    /// with width in m.
    pub width: f64,
}

impl KrrParams {
    pub fn eval_kernel(&self, a: &Location, b: &Location) -> f64 {
        let d = a.distance(b);
        match self.kernel {
            KernelKind::Gaussian => (-d * d / self.width).exp(),
            KernelKind::Laplacian => (-d / self.width).exp(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct KrrModel {
    params: KrrParams,
    locs: Vec<Location>,
    mean: f64,
    pub coefficients: Vec<f64>,
}

impl KrrModel {
    pub fn fit(obs: &[Measurement], params: &KrrParams) -> Result<Self> {
        let coefficients = krr_fit(obs, params)?;
        let mean = obs.iter().map(|m| m.power_db).sum::<f64>() / obs.len() as f64;
        Ok(KrrModel {
            params: *params,
            locs: obs.iter().map(|m| m.loc).collect(),
            mean,
            coefficients,
        })
    }

    pub fn estimate(&self, query: &Location) -> f64 {
        let s: f64 = self
            .locs
            .iter()
            .zip(&self.coefficients)
            .map(|(loc, a)| a * self.params.eval_kernel(query, loc))
            .sum();
        self.mean + s
    }
}

/// Closed-form coefficients minimizing the stated objective on mean-centered
/// observed powers.
pub fn krr_fit(obs: &[Measurement], params: &KrrParams) -> Result<Vec<f64>> {
    if obs.is_empty() {
        return Err(RmeError::InvalidArgument(
            "krr requires at least one observation".into(),
        ));
    }
    if !(params.reg > 0.0) {
        return Err(RmeError::InvalidArgument("lambda must be > 0".into()));
    }
    let n = obs.len();
    let gram = gram_matrix(obs, params);
    let mean = obs.iter().map(|m| m.power_db).sum::<f64>() / n as f64;
    let y = DVector::from_iterator(n, obs.iter().map(|m| m.power_db - mean));
    let mut lhs = gram.transpose() * &gram;
    for k in 0..n {
        lhs[(k, k)] += n as f64 * params.reg;
    }
    let rhs = gram.transpose() * y;
    // SPD for lambda > 0, no jitter needed in principle.
    let l = cholesky_with_jitter(lhs)?;
    let z = l
        .clone()
        .solve_lower_triangular(&rhs)
        .ok_or_else(|| RmeError::Numerical("singular factor in krr solve".into()))?;
    let alpha = l
        .transpose()
        .solve_upper_triangular(&z)
        .ok_or_else(|| RmeError::Numerical("singular factor in krr solve".into()))?;
    Ok(alpha.iter().copied().collect())
}

pub fn gram_matrix(obs: &[Measurement], params: &KrrParams) -> DMatrix<f64> {
    let n = obs.len();
    DMatrix::from_fn(n, n, |a, b| params.eval_kernel(&obs[a].loc, &obs[b].loc))
}

/// The objective value attained by `alpha` on mean-centered targets. Shared
/// by tests and the gradient-descent oracle.
pub fn krr_objective(obs: &[Measurement], params: &KrrParams, alpha: &[f64]) -> f64 {
    let n = obs.len();
    let mean = obs.iter().map(|m| m.power_db).sum::<f64>() / n as f64;
    let gram = gram_matrix(obs, params);
    let a = DVector::from_column_slice(alpha);
    let y = DVector::from_iterator(n, obs.iter().map(|m| m.power_db - mean));
    let resid = &y - &gram * &a;
    resid.norm_squared() / n as f64 + params.reg * a.norm_squared()
}
