//! Measurement, grid, and patch types shared by all estimators and the
//! Monte-Carlo harness, together with grid quantization, patch sampling, and
//! observation splitting.
//!
//! Grid matrix convention: the `(i, j)`-th entry of an `N_y x N_x` grid
//! (1-based, row 1 at the top) sits at `origin + [s*(j-1), s*(N_y-i)]` where
//! `s` is the grid spacing. The bottom-left grid point is therefore
//! `(i, j) = (N_y, 1)`.

use rand::seq::index::sample as index_sample;
use rand::Rng;

use crate::error::{Result, RmeError};

pub const DB_LINEAR_BASE: f64 = 10.0;

/// Convert a dB quantity to natural (linear) units, `10^(p/10)`.
pub fn db_to_linear(db: f64) -> f64 {
    DB_LINEAR_BASE.powf(db / 10.0)
}

/// Convert natural units back to dB.
pub fn linear_to_db(lin: f64) -> f64 {
    10.0 * lin.log10()
}

/// Cartesian position in meters within the region of interest.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Location {
    pub x: f64,
    pub y: f64,
}

impl Location {
    pub fn new(x: f64, y: f64) -> Self {
        Location { x, y }
    }

    pub fn distance(&self, other: &Location) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// A geolocated scalar power sample in dB (e.g. dBm).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub loc: Location,
    pub power_db: f64,
}

/// A full collection of measurements over a rectangular region
/// `[0, region_x] x [0, region_y]`.
#[derive(Debug, Clone)]
pub struct MeasurementSet {
    pub measurements: Vec<Measurement>,
    /// Region side lengths in meters, `(L_x, L_y)`.
    pub region: (f64, f64),
    /// Carrier wavelength in meters.
    pub wavelength: f64,
    /// Spacing of the region-wide grid that patches align to.
    pub grid_spacing: f64,
}

impl MeasurementSet {
    pub fn validate(&self) -> Result<()> {
        if self.measurements.is_empty() {
            return Err(RmeError::InvalidArgument(
                "measurement set must contain at least one measurement".into(),
            ));
        }
        if !(self.wavelength > 0.0) {
            return Err(RmeError::InvalidArgument("wavelength must be > 0".into()));
        }
        if !(self.grid_spacing > 0.0) {
            return Err(RmeError::InvalidArgument("grid spacing must be > 0".into()));
        }
        for m in &self.measurements {
            if !m.power_db.is_finite() || !m.loc.x.is_finite() || !m.loc.y.is_finite() {
                return Err(RmeError::InvalidArgument(
                    "non-finite measurement".into(),
                ));
            }
            if m.loc.x < 0.0 || m.loc.x > self.region.0 || m.loc.y < 0.0 || m.loc.y > self.region.1
            {
                return Err(RmeError::InvalidArgument(format!(
                    "measurement at ({}, {}) outside region {:?}",
                    m.loc.x, m.loc.y, self.region
                )));
            }
        }
        Ok(())
    }
}

/// Rectangular grid geometry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub n_rows: usize,
    pub n_cols: usize,
    pub spacing: f64,
    pub origin: Location,
}

impl GridSpec {
    pub fn new(n_rows: usize, n_cols: usize, spacing: f64, origin: Location) -> Self {
        GridSpec {
            n_rows,
            n_cols,
            spacing,
            origin,
        }
    }

    /// Grid covering an `side x side` patch with `side/spacing` points per
    /// axis, anchored at the patch corner.
    pub fn for_patch(patch: &Patch, spacing: f64) -> Self {
        let n = (patch.side / spacing).round() as usize;
        GridSpec::new(n, n, spacing, patch.corner)
    }

    pub fn n_points(&self) -> usize {
        self.n_rows * self.n_cols
    }

    /// Location of the `(i, j)`-th grid point, 1-based matrix indices.
    pub fn point(&self, i: usize, j: usize) -> Result<Location> {
        if i < 1 || i > self.n_rows || j < 1 || j > self.n_cols {
            return Err(RmeError::IndexOutOfRange {
                i,
                j,
                n_rows: self.n_rows,
                n_cols: self.n_cols,
            });
        }
        Ok(Location::new(
            self.origin.x + self.spacing * (j - 1) as f64,
            self.origin.y + self.spacing * (self.n_rows - i) as f64,
        ))
    }

    /// Like `point` but with 0-based `(row, col)` indices; panics on
    /// out-of-range input.
    pub fn point0(&self, row: usize, col: usize) -> Location {
        self.point(row + 1, col + 1).expect("index in range")
    }

    /// 0-based `(row, col)` of the grid point nearest to `loc`.
    ///
    /// Axis-aligned geometry makes the nearest point separable per axis.
    /// Exact ties go to the smaller `(i, j)` in row-major order: the smaller
    /// row index (larger y) and the smaller column index (smaller x).
    pub fn nearest(&self, loc: &Location) -> (usize, usize) {
        let col = Self::nearest_axis(
            (loc.x - self.origin.x) / self.spacing,
            self.n_cols,
            /*tie_low=*/ true,
        );
        // Row index decreases with y, so the y tie goes to the *larger*
        // fractional index.
        let k = Self::nearest_axis(
            (loc.y - self.origin.y) / self.spacing,
            self.n_rows,
            /*tie_low=*/ false,
        );
        let row = self.n_rows - 1 - k;
        (row, col)
    }

    fn nearest_axis(frac: f64, n: usize, tie_low: bool) -> usize {
        let lo = frac.floor().clamp(0.0, (n - 1) as f64) as usize;
        let hi = frac.ceil().clamp(0.0, (n - 1) as f64) as usize;
        let d_lo = (frac - lo as f64).abs();
        let d_hi = (hi as f64 - frac).abs();
        if d_lo < d_hi || (d_lo == d_hi && tie_low) {
            lo
        } else {
            hi
        }
    }
}

/// Quantized measurement matrix and occupancy mask over a grid.
#[derive(Debug, Clone)]
pub struct QuantizedGrid {
    /// Combined dB values; exactly 0 where the mask is 0.
    pub values: ndarray::Array2<f64>,
    /// 1.0 where at least one measurement was assigned, 0.0 elsewhere.
    pub mask: ndarray::Array2<f64>,
    pub spec: GridSpec,
}

impl QuantizedGrid {
    /// 0-based `(row, col)` pairs of occupied grid points in row-major order.
    pub fn occupied(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for r in 0..self.spec.n_rows {
            for c in 0..self.spec.n_cols {
                if self.mask[[r, c]] != 0.0 {
                    out.push((r, c));
                }
            }
        }
        out
    }
}

/// Square patch with a grid-aligned bottom-left corner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Patch {
    pub corner: Location,
    pub side: f64,
}

impl Patch {
    /// Half-open containment `[x0, x0+side) x [y0, y0+side)`.
    pub fn contains(&self, loc: &Location) -> bool {
        loc.x >= self.corner.x
            && loc.x < self.corner.x + self.side
            && loc.y >= self.corner.y
            && loc.y < self.corner.y + self.side
    }
}

/// Measurements inside one patch.
#[derive(Debug, Clone)]
pub struct EstimationInstance {
    pub measurements: Vec<Measurement>,
    pub patch: Patch,
}

impl EstimationInstance {
    pub fn len(&self) -> usize {
        self.measurements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.measurements.is_empty()
    }
}

/// Partition of `{0..N}` into observed and unobserved index sets.
#[derive(Debug, Clone)]
pub struct ObservationSplit {
    pub obs: Vec<usize>,
    pub nobs: Vec<usize>,
}

/// How co-assigned measurements are combined during grid quantization.
///
/// dB modes operate on dB values directly; natural modes convert to linear
/// power with `10^(p/10)`, combine, and convert back.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CombiningMode {
    NaturalMean,
    DbMean,
    NaturalMedian,
    DbMedian,
}

impl CombiningMode {
    pub const ALL: [CombiningMode; 4] = [
        CombiningMode::NaturalMean,
        CombiningMode::DbMean,
        CombiningMode::NaturalMedian,
        CombiningMode::DbMedian,
    ];

    /// Combine the dB values assigned to one grid point.
    pub fn combine(&self, db_values: &[f64]) -> f64 {
        assert!(!db_values.is_empty());
        match self {
            CombiningMode::DbMean => mean(db_values),
            CombiningMode::DbMedian => median(db_values),
            CombiningMode::NaturalMean => {
                let lin: Vec<f64> = db_values.iter().map(|&v| db_to_linear(v)).collect();
                linear_to_db(mean(&lin))
            }
            CombiningMode::NaturalMedian => {
                let lin: Vec<f64> = db_values.iter().map(|&v| db_to_linear(v)).collect();
                linear_to_db(median(&lin))
            }
        }
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Midpoint median: mean of the two central order statistics for even counts.
fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Assign each measurement of `instance` to its nearest grid point and
/// combine co-assigned measurements with `mode`.
pub fn quantize(instance: &EstimationInstance, spec: &GridSpec, mode: CombiningMode) -> QuantizedGrid {
    let mut assigned: Vec<Vec<f64>> = vec![Vec::new(); spec.n_points()];
    for m in &instance.measurements {
        let (r, c) = spec.nearest(&m.loc);
        assigned[r * spec.n_cols + c].push(m.power_db);
    }
    let mut values = ndarray::Array2::zeros((spec.n_rows, spec.n_cols));
    let mut mask = ndarray::Array2::zeros((spec.n_rows, spec.n_cols));
    for r in 0..spec.n_rows {
        for c in 0..spec.n_cols {
            let vals = &assigned[r * spec.n_cols + c];
            if !vals.is_empty() {
                values[[r, c]] = mode.combine(vals);
                mask[[r, c]] = 1.0;
            }
        }
    }
    QuantizedGrid {
        values,
        mask,
        spec: *spec,
    }
}

/// Per-measurement assignment to 0-based grid `(row, col)` pairs.
pub fn grid_assignment(instance: &EstimationInstance, spec: &GridSpec) -> Vec<(usize, usize)> {
    instance
        .measurements
        .iter()
        .map(|m| spec.nearest(&m.loc))
        .collect()
}

const PATCH_RETRY_LIMIT: usize = 100;

/// Draw a square patch whose bottom-left corner coordinates are integer
/// multiples of the set's grid spacing and return the measurements inside it.
///
/// Retries up to a bounded count if the drawn patch contains no measurements.
pub fn sample_patch(
    set: &MeasurementSet,
    side: f64,
    rng: &mut impl Rng,
) -> Result<EstimationInstance> {
    let s = set.grid_spacing;
    let (lx, ly) = set.region;
    if side > lx.min(ly) + 1e-9 {
        return Err(RmeError::InvalidArgument(format!(
            "patch side {side} exceeds region {lx}x{ly}"
        )));
    }
    let max_ax = ((lx - side) / s + 1e-9).floor() as u64;
    let max_ay = ((ly - side) / s + 1e-9).floor() as u64;
    for _ in 0..PATCH_RETRY_LIMIT {
        let ax = rng.gen_range(0..=max_ax);
        let ay = rng.gen_range(0..=max_ay);
        let patch = Patch {
            corner: Location::new(ax as f64 * s, ay as f64 * s),
            side,
        };
        let measurements: Vec<Measurement> = set
            .measurements
            .iter()
            .copied()
            .filter(|m| patch.contains(&m.loc))
            .collect();
        if !measurements.is_empty() {
            return Ok(EstimationInstance {
                measurements,
                patch,
            });
        }
    }
    Err(RmeError::EmptyPatch {
        attempts: PATCH_RETRY_LIMIT,
    })
}

/// Number of admissible patch corners for a given side length.
pub fn admissible_corner_count(set: &MeasurementSet, side: f64) -> u64 {
    let s = set.grid_spacing;
    let nx = ((set.region.0 - side) / s + 1e-9).floor() as u64 + 1;
    let ny = ((set.region.1 - side) / s + 1e-9).floor() as u64 + 1;
    nx * ny
}

/// Observed indices drawn uniformly at random without replacement.
pub fn split_uniform(
    instance: &EstimationInstance,
    n_obs: usize,
    rng: &mut impl Rng,
) -> Result<ObservationSplit> {
    let n = instance.len();
    if n_obs == 0 || n_obs >= n {
        return Err(RmeError::InvalidArgument(format!(
            "n_obs must satisfy 1 <= n_obs < N ({n_obs} vs N={n})"
        )));
    }
    let mut obs: Vec<usize> = index_sample(rng, n, n_obs).into_vec();
    obs.sort_unstable();
    let nobs = complement(&obs, n);
    Ok(ObservationSplit { obs, nobs })
}

/// Pick `n_obs` occupied grid points uniformly at random; observe every
/// measurement assigned to a picked point (measurement clusters).
pub fn split_clustered(
    instance: &EstimationInstance,
    spec: &GridSpec,
    n_obs: usize,
    rng: &mut impl Rng,
) -> Result<ObservationSplit> {
    let assignment = grid_assignment(instance, spec);
    let mut occupied: Vec<(usize, usize)> = assignment.clone();
    occupied.sort_unstable();
    occupied.dedup();
    if n_obs == 0 || n_obs > occupied.len() {
        return Err(RmeError::InvalidArgument(format!(
            "n_obs {} exceeds occupied grid point count {}",
            n_obs,
            occupied.len()
        )));
    }
    let picked_idx = index_sample(rng, occupied.len(), n_obs).into_vec();
    let picked: std::collections::HashSet<(usize, usize)> =
        picked_idx.into_iter().map(|k| occupied[k]).collect();
    let obs: Vec<usize> = assignment
        .iter()
        .enumerate()
        .filter(|(_, rc)| picked.contains(rc))
        .map(|(n, _)| n)
        .collect();
    let nobs = complement(&obs, instance.len());
    Ok(ObservationSplit { obs, nobs })
}

fn complement(sorted_obs: &[usize], n: usize) -> Vec<usize> {
    let mut nobs = Vec::with_capacity(n - sorted_obs.len());
    let mut it = sorted_obs.iter().peekable();
    for k in 0..n {
        if it.peek() == Some(&&k) {
            it.next();
        } else {
            nobs.push(k);
        }
    }
    nobs
}
