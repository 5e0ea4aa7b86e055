//! Synthetic measurement-set generation: log-distance path loss, correlated
//! log-normal shadowing with the Gudmundson covariance, Clarke multipath
//! fading, and additive Gaussian measurement noise.
//!
//! The shadowing field is drawn jointly on the region grid through a Cholesky
//! factor of the full covariance matrix (with escalating diagonal jitter) and
//! bilinearly interpolated off-grid. The small-scale term is a sum of 32
//! equal-amplitude plane waves with random angles and phases, normalized so
//! the envelope has unit mean power.

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use std::f64::consts::TAU;

use crate::error::{Result, RmeError};
use crate::geo::{GridSpec, Location, Measurement, MeasurementSet};
use crate::rng::{stream, Domain};

const CLARKE_WAVES: usize = 32;
const REFERENCE_DISTANCE: f64 = 1.0;

/// Propagation model parameters for one synthetic map.
#[derive(Debug, Clone)]
pub struct PropagationConfig {
    /// Transmit power plus aggregate gain, dB.
    pub tx_power_plus_gain: f64,
    /// Transmitter position; may lie outside the region.
    pub tx_location: Location,
    pub path_loss_exponent: f64,
    /// Shadowing variance, dB^2.
    pub shadow_variance: f64,
    /// Distance at which the shadowing correlation decays to 1/2, meters.
    pub shadow_half_distance: f64,
    pub fading_enabled: bool,
    /// Measurement noise standard deviation, dB.
    pub noise_std: f64,
    pub wavelength: f64,
    pub seed: u64,
}

impl PropagationConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.shadow_variance >= 0.0
            && self.shadow_half_distance > 0.0
            && self.path_loss_exponent >= 0.0
            && self.noise_std >= 0.0
            && self.wavelength > 0.0;
        if ok {
            Ok(())
        } else {
            Err(RmeError::InvalidArgument(
                "invalid propagation config".into(),
            ))
        }
    }
}

/// Gudmundson covariance of the shadowing field between two locations.
pub fn shadow_covariance(a: &Location, b: &Location, cfg: &PropagationConfig) -> f64 {
    cfg.shadow_variance * 2f64.powf(-a.distance(b) / cfg.shadow_half_distance)
}

/// One jointly sampled synthetic map over a rectangular region.
#[derive(Debug, Clone)]
pub struct GroundTruthMap {
    pub config: PropagationConfig,
    pub region: (f64, f64),
    pub grid: GridSpec,
    shadow: Array2<f64>,
    /// Clarke plane waves, `(angle, phase)` pairs. Empty if fading is off.
    waves: Vec<(f64, f64)>,
}

impl GroundTruthMap {
    /// Fading-free map: path loss plus shadowing, no small-scale term.
    pub fn fading_free(&self, loc: &Location) -> f64 {
        self.config.tx_power_plus_gain - self.path_loss(loc) - self.shadow_at(loc)
    }

    /// Full map including the multipath ripple.
    pub fn with_fading(&self, loc: &Location) -> f64 {
        self.fading_free(loc) - self.fading_loss(loc)
    }

    fn path_loss(&self, loc: &Location) -> f64 {
        // Floor the distance at one wavelength to avoid the singularity.
        let d = loc.distance(&self.config.tx_location).max(self.config.wavelength);
        10.0 * self.config.path_loss_exponent * (d / REFERENCE_DISTANCE).log10()
    }

    /// Loss in dB caused by multipath; zero when fading is disabled.
    pub fn fading_loss(&self, loc: &Location) -> f64 {
        if self.waves.is_empty() {
            return 0.0;
        }
        let k = TAU / self.config.wavelength;
        let scale = 1.0 / (self.waves.len() as f64).sqrt();
        let (mut re, mut im) = (0.0, 0.0);
        for &(angle, phase) in &self.waves {
            let arg = k * (loc.x * angle.cos() + loc.y * angle.sin()) + phase;
            re += arg.cos();
            im += arg.sin();
        }
        let envelope = scale * re.hypot(im);
        -20.0 * envelope.max(1e-12).log10()
    }

    /// Bilinear interpolation of the grid shadow sample, clamped at the
    /// region boundary.
    fn shadow_at(&self, loc: &Location) -> f64 {
        if self.config.shadow_variance == 0.0 {
            return 0.0;
        }
        let s = self.grid.spacing;
        let fx = ((loc.x - self.grid.origin.x) / s).clamp(0.0, (self.grid.n_cols - 1) as f64);
        let fy = ((loc.y - self.grid.origin.y) / s).clamp(0.0, (self.grid.n_rows - 1) as f64);
        let c0 = fx.floor() as usize;
        let c1 = (c0 + 1).min(self.grid.n_cols - 1);
        let k0 = fy.floor() as usize;
        let k1 = (k0 + 1).min(self.grid.n_rows - 1);
        let tx = fx - c0 as f64;
        let ty = fy - k0 as f64;
        // Row index runs opposite to y.
        let at = |k: usize, c: usize| self.shadow[[self.grid.n_rows - 1 - k, c]];
        let bottom = (1.0 - tx) * at(k0, c0) + tx * at(k0, c1);
        let top = (1.0 - tx) * at(k1, c0) + tx * at(k1, c1);
        (1.0 - ty) * bottom + ty * top
    }
}

/// Sample a ground-truth map over `region` with the shadowing field drawn on
/// a grid of the given spacing.
pub fn generate_map(
    region: (f64, f64),
    grid_spacing: f64,
    cfg: &PropagationConfig,
) -> Result<GroundTruthMap> {
    cfg.validate()?;
    let n_cols = (region.0 / grid_spacing).round().max(1.0) as usize;
    let n_rows = (region.1 / grid_spacing).round().max(1.0) as usize;
    let grid = GridSpec::new(n_rows, n_cols, grid_spacing, Location::new(0.0, 0.0));

    let shadow = if cfg.shadow_variance > 0.0 {
        sample_shadow_field(&grid, cfg)?
    } else {
        Array2::zeros((n_rows, n_cols))
    };

    let waves = if cfg.fading_enabled {
        let mut rng = stream(cfg.seed, Domain::Fading, 0);
        (0..CLARKE_WAVES)
            .map(|_| (rng.gen_range(0.0..TAU), rng.gen_range(0.0..TAU)))
            .collect()
    } else {
        Vec::new()
    };

    Ok(GroundTruthMap {
        config: cfg.clone(),
        region,
        grid,
        shadow,
        waves,
    })
}

fn sample_shadow_field(grid: &GridSpec, cfg: &PropagationConfig) -> Result<Array2<f64>> {
    let n = grid.n_points();
    let points: Vec<Location> = (0..grid.n_rows)
        .flat_map(|r| (0..grid.n_cols).map(move |c| (r, c)))
        .map(|(r, c)| grid.point0(r, c))
        .collect();
    let mut cov = DMatrix::zeros(n, n);
    for a in 0..n {
        for b in a..n {
            let v = shadow_covariance(&points[a], &points[b], cfg);
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    let chol = cholesky_with_jitter(cov)?;
    let mut rng = stream(cfg.seed, Domain::MapGeneration, 0);
    let z = DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(&mut rng)));
    let field = chol * z;
    Ok(Array2::from_shape_fn((grid.n_rows, grid.n_cols), |(r, c)| {
        field[r * grid.n_cols + c]
    }))
}

/// Lower Cholesky factor; on failure retries with diagonal jitter escalating
/// from 1e-9 by factors of 10 up to 1e-3 before giving up.
pub fn cholesky_with_jitter(m: DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(chol) = m.clone().cholesky() {
        return Ok(chol.l());
    }
    let n = m.nrows();
    let mut jitter = 1e-9;
    while jitter <= 1e-3 {
        let mut jittered = m.clone();
        for k in 0..n {
            jittered[(k, k)] += jitter;
        }
        if let Some(chol) = jittered.cholesky() {
            return Ok(chol.l());
        }
        jitter *= 10.0;
    }
    Err(RmeError::Numerical(
        "covariance matrix not positive definite after jitter up to 1e-3".into(),
    ))
}

/// Noisy measurements of the map at the given locations, per the measurement
/// model `p_tilde = p(x) + z` with i.i.d. zero-mean Gaussian `z`.
pub fn sample_measurements(
    map: &GroundTruthMap,
    locations: &[Location],
    cfg: &PropagationConfig,
) -> MeasurementSet {
    let mut rng = stream(cfg.seed, Domain::MeasurementNoise, 0);
    let measurements = locations
        .iter()
        .map(|loc| {
            let z: f64 = StandardNormal.sample(&mut rng);
            Measurement {
                loc: *loc,
                power_db: map.with_fading(loc) + cfg.noise_std * z,
            }
        })
        .collect();
    MeasurementSet {
        measurements,
        region: map.region,
        wavelength: cfg.wavelength,
        grid_spacing: map.grid.spacing,
    }
}

/// Serpentine flight path: parallel lines spaced `line_spacing`, one point
/// every `along_spacing`, alternating direction per line.
pub fn lawnmower_locations(
    region: (f64, f64),
    line_spacing: f64,
    along_spacing: f64,
) -> Vec<Location> {
    assert!(line_spacing > 0.0 && along_spacing > 0.0);
    let n_lines = (region.1 / line_spacing + 1e-9).floor() as usize + 1;
    let n_along = (region.0 / along_spacing + 1e-9).floor() as usize + 1;
    let mut out = Vec::with_capacity(n_lines * n_along);
    for li in 0..n_lines {
        let y = (li as f64 * line_spacing).min(region.1);
        for pi in 0..n_along {
            let k = if li % 2 == 0 { pi } else { n_along - 1 - pi };
            out.push(Location::new((k as f64 * along_spacing).min(region.0), y));
        }
    }
    out
}
