//! Position estimation from several arrays.
//!
//! Geometric positioning averages the pairwise closest points of the AoA
//! rays. Direct position determination stacks the aligned captures of all
//! arrays into one virtual array and evaluates a MUSIC spectrum over a ball
//! of candidate points around an initial fix, re-centering the ball on the
//! spectrum maximum until it stops moving.

use nalgebra::{DMatrix, DVector, Vector3};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::aoa::{covariance_of, decompose, estimate_aoa, AoaConfig, AoaError, SubspaceDecomposition, SPECTRUM_FLOOR};
use crate::geometry::{centered_steering_local, ray_from_aoa, Ray, UraConfig};
use crate::sim::{inter_array_phase, CsiCapture};

/// Normalized determinant (`sin²` of the ray angle) below which two rays
/// count as parallel.
pub const PARALLEL_THRESHOLD: f64 = 1e-10;
pub const DEFAULT_LSOI_RADIUS: f64 = 0.1;
pub const DEFAULT_VOXEL: f64 = 0.005;
pub const DEFAULT_MAX_ITERS: usize = 4;
pub const DEFAULT_SMOOTHING_WINDOW: usize = 5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FusionError {
    #[error("rays are parallel (sin² = {0:e})")]
    ParallelRays(f64),
    #[error("at least two rays are needed, got {0}")]
    TooFewRays(usize),
    #[error("every ray pair is degenerate")]
    NoFix,
    #[error("candidate point coincides with the center of array {0}")]
    CoincidentPoint(usize),
    #[error("stacked capture has {rows} rows, steering has {steering}")]
    DimensionMismatch { rows: usize, steering: usize },
    #[error("captures disagree on snapshot count")]
    SnapshotMismatch,
    #[error("expected one array per capture ({captures} captures, {arrays} arrays)")]
    ArrayCount { captures: usize, arrays: usize },
    #[error("search radius and voxel must be positive")]
    InvalidLsoi,
    #[error("smoothing window must be odd and at least 1, got {0}")]
    InvalidWindow(usize),
    #[error("empty trajectory")]
    EmptyTrajectory,
    #[error("angle estimation: {0}")]
    Aoa(#[from] AoaError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosestPair {
    pub on_h: Vector3<f64>,
    pub on_i: Vector3<f64>,
    pub t_h: f64,
    pub t_i: f64,
}

impl ClosestPair {
    pub fn gap(&self) -> f64 {
        (self.on_h - self.on_i).norm()
    }
}

/// Closest points of two lines `c_h + t_h d_h` and `c_i + t_i d_i`.
pub fn closest_points(ray_h: &Ray, ray_i: &Ray) -> Result<ClosestPair, FusionError> {
    let (ch, dh) = (ray_h.anchor(), ray_h.direction());
    let (ci, di) = (ray_i.anchor(), ray_i.direction());
    let b = dh.dot(&di);
    let (a, c) = (dh.dot(&dh), di.dot(&di));
    let det = -a * c + b * b;
    let sin2 = -det / (a * c);
    if sin2 < PARALLEL_THRESHOLD {
        return Err(FusionError::ParallelRays(sin2));
    }
    let w = ch - ci;
    // -t_h (d_h·d_h) + t_i (d_i·d_h) = w·d_h
    // -t_h (d_h·d_i) + t_i (d_i·d_i) = w·d_i
    let (r1, r2) = (w.dot(&dh), w.dot(&di));
    let t_h = (r1 * c - b * r2) / det;
    let t_i = (-a * r2 + b * r1) / det;
    Ok(ClosestPair {
        on_h: ch + dh * t_h,
        on_i: ci + di * t_i,
        t_h,
        t_i,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeometricFix {
    pub position: Vector3<f64>,
    pub pairwise_points: Vec<(Vector3<f64>, Vector3<f64>)>,
    /// Largest pairwise gap, meters.
    pub residual: f64,
    pub degenerate_pairs: Vec<(usize, usize)>,
    /// Pairs whose closest point lies behind one of the arrays.
    pub behind_pairs: Vec<(usize, usize)>,
}

/// Mean of the pairwise closest points over all non-parallel pairs.
pub fn geometric_position(rays: &[Ray]) -> Result<GeometricFix, FusionError> {
    if rays.len() < 2 {
        return Err(FusionError::TooFewRays(rays.len()));
    }
    let mut fix = GeometricFix {
        position: Vector3::zeros(),
        pairwise_points: Vec::new(),
        residual: 0.0,
        degenerate_pairs: Vec::new(),
        behind_pairs: Vec::new(),
    };
    let mut sum = Vector3::zeros();
    for h in 0..rays.len() {
        for i in h + 1..rays.len() {
            match closest_points(&rays[h], &rays[i]) {
                Ok(pair) => {
                    sum += pair.on_h + pair.on_i;
                    fix.residual = fix.residual.max(pair.gap());
                    if pair.t_h < 0.0 || pair.t_i < 0.0 {
                        fix.behind_pairs.push((h, i));
                    }
                    fix.pairwise_points.push((pair.on_h, pair.on_i));
                }
                Err(_) => fix.degenerate_pairs.push((h, i)),
            }
        }
    }
    if fix.pairwise_points.is_empty() {
        return Err(FusionError::NoFix);
    }
    fix.position = sum / (2 * fix.pairwise_points.len()) as f64;
    Ok(fix)
}

/// Ball of lattice points of pitch `voxel` around `center`.
#[derive(Debug, Clone, PartialEq)]
pub struct Lsoi {
    pub center: Vector3<f64>,
    pub radius: f64,
    pub voxel: f64,
    pub points: Vec<Vector3<f64>>,
}

impl Lsoi {
    pub fn new(center: Vector3<f64>, radius: f64, voxel: f64) -> Result<Self, FusionError> {
        if !(radius > 0.0 && voxel > 0.0 && radius.is_finite() && voxel.is_finite()) {
            return Err(FusionError::InvalidLsoi);
        }
        let n = (radius / voxel + 1e-9).floor() as i64;
        let mut points = Vec::new();
        for i in -n..=n {
            for j in -n..=n {
                for k in -n..=n {
                    let off = Vector3::new(i as f64, j as f64, k as f64) * voxel;
                    if off.norm() <= radius * (1.0 + 1e-12) {
                        points.push(center + off);
                    }
                }
            }
        }
        Ok(Self {
            center,
            radius,
            voxel,
            points,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Stacked steering vector of all arrays for a candidate point. Each block
/// is the array's plane-wave response toward the point, referenced to the
/// array center and normalized; blocks after the first carry the model
/// phase between their center and the first array's center.
pub fn virtual_steering(uras: &[UraConfig], point: &Vector3<f64>) -> Result<DVector<Complex64>, FusionError> {
    let total: usize = uras.iter().map(|u| u.num_elements()).sum();
    let mut out = DVector::zeros(total);
    let mut row = 0;
    for (i, ura) in uras.iter().enumerate() {
        let local = ura.to_local(point);
        let range = local.norm();
        if range < 1e-9 {
            return Err(FusionError::CoincidentPoint(i));
        }
        let mut block = centered_steering_local(ura, &(local / range));
        block /= Complex64::new((ura.num_elements() as f64).sqrt(), 0.0);
        if i > 0 {
            let dg = inter_array_phase(&uras[0].center, &ura.center, point, ura.wavelength())
                .map_err(|_| FusionError::CoincidentPoint(i))?;
            block *= Complex64::cis(dg);
        }
        out.rows_mut(row, ura.num_elements()).copy_from(&block);
        row += ura.num_elements();
    }
    Ok(out)
}

/// One stacked steering column per point.
pub fn build_virtual_steering(uras: &[UraConfig], points: &[Vector3<f64>]) -> Result<DMatrix<Complex64>, FusionError> {
    let cols = points
        .iter()
        .map(|p| virtual_steering(uras, p))
        .collect::<Result<Vec<_>, _>>()?;
    if cols.is_empty() {
        let total = uras.iter().map(|u| u.num_elements()).sum();
        return Ok(DMatrix::zeros(total, 0));
    }
    Ok(DMatrix::from_columns(&cols))
}

/// Rows of every capture stacked in array order.
pub fn stack_captures(captures: &[CsiCapture]) -> Result<DMatrix<Complex64>, FusionError> {
    let t = captures.first().map_or(0, |c| c.num_snapshots());
    if captures.iter().any(|c| c.num_snapshots() != t) {
        return Err(FusionError::SnapshotMismatch);
    }
    let rows: usize = captures.iter().map(|c| c.num_elements()).sum();
    let mut out = DMatrix::zeros(rows, t);
    let mut r = 0;
    for c in captures {
        out.rows_mut(r, c.num_elements()).copy_from(&c.snapshots);
        r += c.num_elements();
    }
    Ok(out)
}

/// Subspace split of the stacked covariance.
pub fn stacked_decomposition(captures: &[CsiCapture], dimension: usize) -> Result<SubspaceDecomposition, FusionError> {
    let y = stack_captures(captures)?;
    Ok(decompose(&covariance_of(&y)?, dimension)?)
}

fn dpd_value(decomp: &SubspaceDecomposition, a: &DVector<Complex64>) -> f64 {
    let aa = a.norm_squared();
    let signal = (decomp.signal_basis.adjoint() * a).norm_squared();
    aa / ((aa - signal).max(0.0) + SPECTRUM_FLOOR * aa)
}

/// MUSIC value of the stacked decomposition at every point.
pub fn dpd_spectrum(
    decomp: &SubspaceDecomposition,
    uras: &[UraConfig],
    points: &[Vector3<f64>],
) -> Result<Vec<f64>, FusionError> {
    let rows: usize = uras.iter().map(|u| u.num_elements()).sum();
    if rows != decomp.signal_basis.nrows() {
        return Err(FusionError::DimensionMismatch {
            rows: decomp.signal_basis.nrows(),
            steering: rows,
        });
    }
    points
        .par_iter()
        .map(|p| virtual_steering(uras, p).map(|a| dpd_value(decomp, &a)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DpdConfig {
    pub radius: f64,
    pub voxel: f64,
    pub max_iters: usize,
    /// Signal dimension of the stacked covariance.
    pub dimension: usize,
}

impl Default for DpdConfig {
    fn default() -> Self {
        Self {
            radius: DEFAULT_LSOI_RADIUS,
            voxel: DEFAULT_VOXEL,
            max_iters: DEFAULT_MAX_ITERS,
            dimension: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FixMethod {
    Gp,
    Dpd,
}

impl FixMethod {
    pub fn name(&self) -> &'static str {
        match self {
            FixMethod::Gp => "gp",
            FixMethod::Dpd => "dpd",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PositionFix {
    pub position: Vector3<f64>,
    pub iterations: usize,
    pub spectrum_peak: f64,
    pub method: FixMethod,
    pub converged: bool,
    /// Center displacement of each iteration.
    pub displacements: Vec<f64>,
    pub final_lsoi: Option<Lsoi>,
    pub final_spectrum: Vec<f64>,
}

/// Progressive LSoI search from `init`: evaluate the spectrum on the ball,
/// move the center to the maximum, stop once it moves less than one voxel.
pub fn locate_dpd(
    captures: &[CsiCapture],
    uras: &[UraConfig],
    init: Vector3<f64>,
    config: &DpdConfig,
) -> Result<PositionFix, FusionError> {
    if captures.len() != uras.len() {
        return Err(FusionError::ArrayCount {
            captures: captures.len(),
            arrays: uras.len(),
        });
    }
    let decomp = stacked_decomposition(captures, config.dimension)?;
    let mut center = init;
    let mut fix = PositionFix {
        position: init,
        iterations: 0,
        spectrum_peak: 0.0,
        method: FixMethod::Dpd,
        converged: false,
        displacements: Vec::new(),
        final_lsoi: None,
        final_spectrum: Vec::new(),
    };
    for it in 1..=config.max_iters.max(1) {
        let lsoi = Lsoi::new(center, config.radius, config.voxel)?;
        let values = dpd_spectrum(&decomp, uras, &lsoi.points)?;
        let best = values
            .iter()
            .enumerate()
            .fold(0, |b, (k, v)| if *v > values[b] { k } else { b });
        let displacement = (lsoi.points[best] - center).norm();
        center = lsoi.points[best];
        fix.iterations = it;
        fix.position = center;
        fix.spectrum_peak = values[best];
        fix.displacements.push(displacement);
        fix.final_lsoi = Some(lsoi);
        fix.final_spectrum = values;
        if displacement < config.voxel {
            fix.converged = true;
            break;
        }
    }
    Ok(fix)
}

/// AoA per array, one ray each, and the geometric fix.
pub fn gp_from_captures(
    captures: &[CsiCapture],
    uras: &[UraConfig],
    aoa: &AoaConfig,
) -> Result<(GeometricFix, Vec<Ray>), FusionError> {
    if captures.len() != uras.len() {
        return Err(FusionError::ArrayCount {
            captures: captures.len(),
            arrays: uras.len(),
        });
    }
    let rays = captures
        .iter()
        .zip(uras)
        .map(|(c, u)| {
            let est = estimate_aoa(c, aoa)?;
            Ok(ray_from_aoa(u, &est.estimates[0].direction))
        })
        .collect::<Result<Vec<_>, FusionError>>()?;
    Ok((geometric_position(&rays)?, rays))
}

/// Per-axis sliding median; windows shrink at the ends.
pub fn smooth_trajectory(fixes: &[Vector3<f64>], window: usize) -> Result<Vec<Vector3<f64>>, FusionError> {
    if window == 0 || window.is_multiple_of(2) {
        return Err(FusionError::InvalidWindow(window));
    }
    if fixes.is_empty() {
        return Err(FusionError::EmptyTrajectory);
    }
    let half = window / 2;
    let n = fixes.len();
    Ok((0..n)
        .map(|i| {
            let (lo, hi) = (i.saturating_sub(half), (i + half).min(n - 1));
            Vector3::from_fn(|axis, _| median(fixes[lo..=hi].iter().map(|p| p[axis]).collect()))
        })
        .collect())
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
