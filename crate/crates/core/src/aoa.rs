//! Subspace angle-of-arrival estimation: plain MUSIC, forward spatially
//! smoothed MUSIC and forward-backward smoothed MUSIC over a 2D angle grid.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::geometry::{grid_steering, Direction};
use crate::sim::CsiCapture;

/// Relative floor added to the MUSIC denominator.
pub const SPECTRUM_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AoaError {
    #[error("capture has no snapshots")]
    NoSnapshots,
    #[error("matrix is not Hermitian (asymmetry {0:e})")]
    NonHermitian(f64),
    #[error("signal dimension {d} must satisfy 1 <= D < {m}")]
    InvalidDimension { d: usize, m: usize },
    #[error("{m1}x{m2} subarray does not fit a {mx}x{my} array")]
    SubarrayTooLarge { m1: usize, m2: usize, mx: usize, my: usize },
    #[error("steering dimension {steering} does not match subspace dimension {subspace}")]
    DimensionMismatch { steering: usize, subspace: usize },
    #[error("peak count must be at least 1")]
    NoPeaksRequested,
    #[error("invalid angle grid: {0}")]
    InvalidGrid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Covariance {
    values: DMatrix<Complex64>,
    snapshots_used: usize,
}

impl Covariance {
    /// Wraps a matrix after checking it is Hermitian to `1e-10` relative.
    pub fn from_matrix(values: DMatrix<Complex64>, snapshots_used: usize) -> Result<Self, AoaError> {
        let scale = values.iter().map(|v| v.norm()).fold(1.0, f64::max);
        let asym = (&values - values.adjoint()).iter().map(|v| v.norm()).fold(0.0, f64::max);
        if !values.is_square() || asym > 1e-10 * scale {
            return Err(AoaError::NonHermitian(asym));
        }
        Ok(Self { values, snapshots_used })
    }

    pub fn values(&self) -> &DMatrix<Complex64> {
        &self.values
    }

    pub fn snapshots_used(&self) -> usize {
        self.snapshots_used
    }

    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    pub fn trace(&self) -> f64 {
        self.values.diagonal().iter().map(|v| v.re).sum()
    }

    /// Eigenvalues in descending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = self.values.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
        ev.sort_by(|a, b| b.total_cmp(a));
        ev
    }

    /// Count of eigenvalues above `rel · trace`.
    pub fn rank(&self, rel: f64) -> usize {
        let t = self.trace();
        self.eigenvalues().iter().filter(|&&v| v > rel * t).count()
    }
}

fn hermitize(m: DMatrix<Complex64>) -> DMatrix<Complex64> {
    (&m + m.adjoint()) * Complex64::new(0.5, 0.0)
}

/// `(1/T)·Y·Yᴴ` of a snapshot matrix.
pub fn covariance_of(y: &DMatrix<Complex64>) -> Result<Covariance, AoaError> {
    let t = y.ncols();
    if t == 0 {
        return Err(AoaError::NoSnapshots);
    }
    let r = hermitize(y * y.adjoint() * Complex64::new(1.0 / t as f64, 0.0));
    Ok(Covariance {
        values: r,
        snapshots_used: t,
    })
}

pub fn sample_covariance(capture: &CsiCapture) -> Result<Covariance, AoaError> {
    covariance_of(&capture.snapshots)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceDecomposition {
    pub signal_basis: DMatrix<Complex64>,
    pub noise_basis: DMatrix<Complex64>,
    /// Descending.
    pub eigenvalues: Vec<f64>,
    pub dimension: usize,
}

pub fn decompose(r: &Covariance, d: usize) -> Result<SubspaceDecomposition, AoaError> {
    let m = r.dim();
    if d == 0 || d >= m {
        return Err(AoaError::InvalidDimension { d, m });
    }
    let eig = r.values.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let column = |k: usize| eig.eigenvectors.column(order[k]).into_owned();
    let signal_basis = DMatrix::from_columns(&(0..d).map(column).collect::<Vec<_>>());
    let noise_basis = DMatrix::from_columns(&(d..m).map(column).collect::<Vec<_>>());
    Ok(SubspaceDecomposition {
        signal_basis,
        noise_basis,
        eigenvalues: order.iter().map(|&k| eig.eigenvalues[k]).collect(),
        dimension: d,
    })
}

/// Signal dimension at the largest ratio between consecutive eigenvalues
/// (descending input), limited to `1..=max_d`.
pub fn estimate_signal_dimension(eigenvalues: &[f64], max_d: usize) -> usize {
    let top = eigenvalues.first().copied().unwrap_or(0.0).abs().max(f64::MIN_POSITIVE);
    let floor = top * 1e-15;
    let upper = max_d.min(eigenvalues.len().saturating_sub(1)).max(1);
    (1..=upper)
        .map(|k| {
            let ratio = eigenvalues[k - 1].max(floor) / eigenvalues.get(k).copied().unwrap_or(floor).max(floor);
            (k, ratio)
        })
        .fold((1, f64::NEG_INFINITY), |best, (k, r)| if r > best.1 { (k, r) } else { best })
        .0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SmoothingMode {
    Forward,
    ForwardBackward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SmoothingSpec {
    pub m1: usize,
    pub m2: usize,
    pub mode: SmoothingMode,
}

impl SmoothingSpec {
    pub fn new(m1: usize, m2: usize, mode: SmoothingMode) -> Self {
        Self { m1, m2, mode }
    }

    /// 3×3 subarrays; two of them on a 3×4 array.
    pub fn default_for(mx: usize, my: usize, mode: SmoothingMode) -> Self {
        Self::new(mx.min(3), my.min(3), mode)
    }

    pub fn validate(&self, mx: usize, my: usize) -> Result<(), AoaError> {
        if self.m1 == 0 || self.m2 == 0 || self.m1 > mx || self.m2 > my {
            return Err(AoaError::SubarrayTooLarge {
                m1: self.m1,
                m2: self.m2,
                mx,
                my,
            });
        }
        Ok(())
    }

    /// `(Hx, Hy)`.
    pub fn subarray_counts(&self, mx: usize, my: usize) -> (usize, usize) {
        (mx + 1 - self.m1, my + 1 - self.m2)
    }
}

/// Anti-identity of size `n`.
pub fn exchange_matrix(n: usize) -> DMatrix<Complex64> {
    DMatrix::from_fn(n, n, |i, j| {
        if i + j + 1 == n {
            Complex64::new(1.0, 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        }
    })
}

/// Average of the covariances of every contiguous `m1 × m2` subarray of an
/// `mx × my` covariance (x-major element order).
pub fn smooth_covariance(r: &Covariance, mx: usize, my: usize, spec: &SmoothingSpec) -> Result<Covariance, AoaError> {
    spec.validate(mx, my)?;
    if r.dim() != mx * my {
        return Err(AoaError::DimensionMismatch {
            steering: mx * my,
            subspace: r.dim(),
        });
    }
    let (hx, hy) = spec.subarray_counts(mx, my);
    let n = spec.m1 * spec.m2;
    let mut acc = DMatrix::<Complex64>::zeros(n, n);
    for oy in 0..hy {
        for ox in 0..hx {
            let idx: Vec<usize> = (0..spec.m2)
                .flat_map(|j| (0..spec.m1).map(move |i| (oy + j) * mx + ox + i))
                .collect();
            for (a, &ia) in idx.iter().enumerate() {
                for (b, &ib) in idx.iter().enumerate() {
                    acc[(a, b)] += r.values[(ia, ib)];
                }
            }
        }
    }
    acc /= Complex64::new((hx * hy) as f64, 0.0);
    let values = match spec.mode {
        SmoothingMode::Forward => acc,
        SmoothingMode::ForwardBackward => {
            let j = exchange_matrix(n);
            (&acc + &j * acc.conjugate() * &j) * Complex64::new(0.5, 0.0)
        }
    };
    Ok(Covariance {
        values: hermitize(values),
        snapshots_used: r.snapshots_used,
    })
}

pub fn forward_smooth(capture: &CsiCapture, spec: &SmoothingSpec) -> Result<Covariance, AoaError> {
    let spec = SmoothingSpec {
        mode: SmoothingMode::Forward,
        ..*spec
    };
    smooth_covariance(&sample_covariance(capture)?, capture.mx, capture.my, &spec)
}

pub fn forward_backward_smooth(capture: &CsiCapture, spec: &SmoothingSpec) -> Result<Covariance, AoaError> {
    let spec = SmoothingSpec {
        mode: SmoothingMode::ForwardBackward,
        ..*spec
    };
    smooth_covariance(&sample_covariance(capture)?, capture.mx, capture.my, &spec)
}

/// Elevation and azimuth axes, radians, strictly increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleGrid {
    pub theta: Vec<f64>,
    pub phi: Vec<f64>,
}

impl AngleGrid {
    /// `θ ∈ [0°, 90°]` inclusive, `φ ∈ [−180°, 180°)`, both at `step_deg`.
    pub fn full(step_deg: f64) -> Result<Self, AoaError> {
        if !(step_deg > 0.0 && step_deg <= 90.0) {
            return Err(AoaError::InvalidGrid(format!("step {step_deg}° out of (0, 90]")));
        }
        let nt = (90.0 / step_deg).round() as usize;
        let np = (360.0 / step_deg).round() as usize;
        Ok(Self {
            theta: (0..=nt).map(|i| (i as f64 * 90.0 / nt as f64).to_radians()).collect(),
            phi: (0..np).map(|i| (-180.0 + i as f64 * 360.0 / np as f64).to_radians()).collect(),
        })
    }

    pub fn validate(&self) -> Result<(), AoaError> {
        let increasing = |v: &[f64]| !v.is_empty() && v.windows(2).all(|w| w[1] > w[0]) && v.iter().all(|x| x.is_finite());
        if !increasing(&self.theta) || !increasing(&self.phi) {
            return Err(AoaError::InvalidGrid("axes must be nonempty, finite and strictly increasing".into()));
        }
        if self.theta[0] < 0.0 || *self.theta.last().unwrap() > FRAC_PI_2 + 1e-12 {
            return Err(AoaError::InvalidGrid("elevation outside [0°, 90°]".into()));
        }
        Ok(())
    }

    /// True when the φ axis covers the full circle at uniform spacing.
    fn phi_wraps(&self) -> bool {
        let n = self.phi.len();
        if n < 3 {
            return false;
        }
        let step = self.phi[1] - self.phi[0];
        ((self.phi[n - 1] + step - self.phi[0]) - TAU).abs() < 1e-9
    }
}

/// `Mx × My` grid of a (sub)array, spacing in wavelengths.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArrayShape {
    pub nx: usize,
    pub ny: usize,
    pub spacing_wavelengths: f64,
}

impl ArrayShape {
    pub fn of_capture(capture: &CsiCapture) -> Self {
        Self {
            nx: capture.mx,
            ny: capture.my,
            spacing_wavelengths: capture.spacing_wavelengths(),
        }
    }

    pub fn subarray(&self, spec: &SmoothingSpec) -> Self {
        Self {
            nx: spec.m1,
            ny: spec.m2,
            ..*self
        }
    }

    pub fn dim(&self) -> usize {
        self.nx * self.ny
    }
}

/// Pseudo-spectrum values, rows along θ, columns along φ.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumGrid {
    pub theta: Vec<f64>,
    pub phi: Vec<f64>,
    pub values: DMatrix<f64>,
}

/// MUSIC pseudo-spectrum `aᴴa / (aᴴ E_N E_Nᴴ a + ε·aᴴa)`.
pub fn music_value(noise_basis: &DMatrix<Complex64>, a: &nalgebra::DVector<Complex64>) -> f64 {
    let aa = a.norm_squared();
    let proj = (noise_basis.adjoint() * a).norm_squared();
    aa / (proj + SPECTRUM_FLOOR * aa)
}

pub fn music_spectrum(
    decomp: &SubspaceDecomposition,
    shape: ArrayShape,
    grid: &AngleGrid,
) -> Result<SpectrumGrid, AoaError> {
    grid.validate()?;
    if shape.dim() != decomp.noise_basis.nrows() {
        return Err(AoaError::DimensionMismatch {
            steering: shape.dim(),
            subspace: decomp.noise_basis.nrows(),
        });
    }
    let en_h = decomp.noise_basis.adjoint();
    let rows: Vec<Vec<f64>> = grid
        .theta
        .par_iter()
        .map(|&theta| {
            let (st, mut buf) = (theta.sin(), nalgebra::DVector::zeros(en_h.nrows()));
            grid.phi
                .iter()
                .map(|&phi| {
                    let a = grid_steering(shape.nx, shape.ny, shape.spacing_wavelengths, st * phi.cos(), st * phi.sin());
                    en_h.mul_to(&a, &mut buf);
                    let aa = a.len() as f64;
                    aa / (buf.norm_squared() + SPECTRUM_FLOOR * aa)
                })
                .collect()
        })
        .collect();
    let values = DMatrix::from_fn(grid.theta.len(), grid.phi.len(), |i, j| rows[i][j]);
    Ok(SpectrumGrid {
        theta: grid.theta.clone(),
        phi: grid.phi.clone(),
        values,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AoaEstimate {
    pub direction: Direction,
    pub spectrum_value: f64,
    pub array_id: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeakList {
    pub estimates: Vec<AoaEstimate>,
    /// Fewer local maxima than requested.
    pub shortfall: bool,
}

fn parabolic_offset(l: f64, c: f64, r: f64) -> f64 {
    let (l, c, r) = (l.max(f64::MIN_POSITIVE).ln(), c.max(f64::MIN_POSITIVE).ln(), r.max(f64::MIN_POSITIVE).ln());
    let denom = l - 2.0 * c + r;
    if denom >= 0.0 || !denom.is_finite() {
        return 0.0;
    }
    (0.5 * (l - r) / denom).clamp(-0.5, 0.5)
}

/// Strict local maxima over the 8-neighborhood, φ wrapping when the axis
/// spans the circle. The `θ = 0` row collapses to one direction.
pub fn find_peaks(spectrum: &SpectrumGrid, l: usize, refine: bool, array_id: usize) -> Result<PeakList, AoaError> {
    if l == 0 {
        return Err(AoaError::NoPeaksRequested);
    }
    let (nt, np) = spectrum.values.shape();
    let grid = AngleGrid {
        theta: spectrum.theta.clone(),
        phi: spectrum.phi.clone(),
    };
    let wraps = grid.phi_wraps();
    let v = &spectrum.values;
    let pole = spectrum.theta.first().is_some_and(|&t| t.abs() < 1e-12);
    let phi_index = |j: isize| -> Option<usize> {
        if wraps {
            Some(j.rem_euclid(np as isize) as usize)
        } else if (0..np as isize).contains(&j) {
            Some(j as usize)
        } else {
            None
        }
    };

    let mut cells: Vec<(usize, usize)> = Vec::new();
    if pole && nt > 1 && (0..np).all(|j| v[(0, 0)] > v[(1, j)]) {
        cells.push((0, 0));
    }
    for i in (if pole { 1 } else { 0 })..nt {
        for j in 0..np {
            let c = v[(i, j)];
            let mut is_peak = true;
            'n: for di in -1isize..=1 {
                let ii = i as isize + di;
                if ii < 0 || ii >= nt as isize {
                    continue;
                }
                for dj in -1isize..=1 {
                    if di == 0 && dj == 0 {
                        continue;
                    }
                    let Some(jj) = phi_index(j as isize + dj) else { continue };
                    let other = if pole && ii == 0 { v[(0, 0)] } else { v[(ii as usize, jj)] };
                    if other >= c {
                        is_peak = false;
                        break 'n;
                    }
                }
            }
            if is_peak {
                cells.push((i, j));
            }
        }
    }
    cells.sort_by(|&(ia, ja), &(ib, jb)| {
        v[(ib, jb)]
            .total_cmp(&v[(ia, ja)])
            .then(ia.cmp(&ib))
            .then(ja.cmp(&jb))
    });
    let shortfall = cells.len() < l;
    cells.truncate(l);

    let estimates = cells
        .into_iter()
        .map(|(i, j)| {
            let (mut theta, mut phi) = (spectrum.theta[i], spectrum.phi[j]);
            if refine && !(pole && i == 0) {
                if i > 0 && i + 1 < nt {
                    let step = spectrum.theta[i + 1] - spectrum.theta[i];
                    theta += step * parabolic_offset(v[(i - 1, j)], v[(i, j)], v[(i + 1, j)]);
                }
                if let (Some(jl), Some(jr)) = (phi_index(j as isize - 1), phi_index(j as isize + 1)) {
                    let step = if j + 1 < np { spectrum.phi[j + 1] - spectrum.phi[j] } else { spectrum.phi[j] - spectrum.phi[j - 1] };
                    phi += step * parabolic_offset(v[(i, jl)], v[(i, j)], v[(i, jr)]);
                }
            }
            AoaEstimate {
                direction: Direction::new(theta.clamp(0.0, FRAC_PI_2), phi).expect("grid angles are valid"),
                spectrum_value: v[(i, j)],
                array_id,
            }
        })
        .collect();
    Ok(PeakList { estimates, shortfall })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AoaMethod {
    /// Full-array covariance, no smoothing.
    Music,
    /// Forward spatial smoothing.
    SsMusic,
    /// Forward-backward spatial smoothing.
    ISsMusic,
}

impl AoaMethod {
    pub const ALL: [AoaMethod; 3] = [AoaMethod::Music, AoaMethod::SsMusic, AoaMethod::ISsMusic];

    pub fn name(&self) -> &'static str {
        match self {
            AoaMethod::Music => "music",
            AoaMethod::SsMusic => "ss-music",
            AoaMethod::ISsMusic => "i-ssmusic",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AoaConfig {
    pub method: AoaMethod,
    /// Subarray size for the smoothed methods; `None` picks the default.
    pub subarray: Option<(usize, usize)>,
    pub grid: AngleGrid,
    /// Number of peaks to report.
    pub sources: usize,
    /// Signal dimension; `None` uses `sources`.
    pub dimension: Option<usize>,
    pub refine: bool,
}

impl AoaConfig {
    pub fn new(method: AoaMethod, sources: usize) -> Self {
        Self {
            method,
            subarray: None,
            grid: AngleGrid::full(0.2).expect("valid step"),
            sources,
            dimension: None,
            refine: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AoaResult {
    pub estimates: Vec<AoaEstimate>,
    pub shortfall: bool,
    pub spectrum: SpectrumGrid,
    pub eigenvalues: Vec<f64>,
}

/// Covariance (smoothed per method), subspace split, spectrum and peaks.
pub fn estimate_aoa(capture: &CsiCapture, config: &AoaConfig) -> Result<AoaResult, AoaError> {
    let shape = ArrayShape::of_capture(capture);
    let raw = sample_covariance(capture)?;
    let (r, shape) = match config.method {
        AoaMethod::Music => (raw, shape),
        AoaMethod::SsMusic | AoaMethod::ISsMusic => {
            let mode = if config.method == AoaMethod::SsMusic {
                SmoothingMode::Forward
            } else {
                SmoothingMode::ForwardBackward
            };
            let spec = match config.subarray {
                Some((m1, m2)) => SmoothingSpec::new(m1, m2, mode),
                None => SmoothingSpec::default_for(capture.mx, capture.my, mode),
            };
            (smooth_covariance(&raw, capture.mx, capture.my, &spec)?, shape.subarray(&spec))
        }
    };
    let d = config.dimension.unwrap_or(config.sources).min(r.dim().saturating_sub(1));
    let decomp = decompose(&r, d)?;
    let spectrum = music_spectrum(&decomp, shape, &config.grid)?;
    let peaks = find_peaks(&spectrum, config.sources, config.refine, capture.array_id)?;
    Ok(AoaResult {
        estimates: peaks.estimates,
        shortfall: peaks.shortfall,
        spectrum,
        eigenvalues: decomp.eigenvalues,
    })
}

/// Assigns estimates to truths minimizing the worst angular error over all
/// permutations (small counts only). Returns per-truth `(Δθ, Δφ)` in
/// radians, or `None` for truths left unmatched.
pub fn match_estimates(truth: &[Direction], estimates: &[Direction]) -> Vec<Option<(f64, f64)>> {
    let n = truth.len();
    let cost = |t: &Direction, e: &Direction| {
        let dt = (t.elevation() - e.elevation()).abs();
        let dp = crate::geometry::azimuth_error(t.azimuth(), e.azimuth()).abs();
        (dt, dp)
    };
    let mut best: Option<(f64, Vec<Option<usize>>)> = None;
    let mut assign = vec![None; n];
    fn search(
        k: usize,
        used: &mut Vec<bool>,
        assign: &mut Vec<Option<usize>>,
        truth: &[Direction],
        est: &[Direction],
        cost: &dyn Fn(&Direction, &Direction) -> (f64, f64),
        best: &mut Option<(f64, Vec<Option<usize>>)>,
    ) {
        if k == truth.len() {
            let worst = assign
                .iter()
                .enumerate()
                .map(|(t, a)| match a {
                    Some(e) => {
                        let (dt, dp) = cost(&truth[t], &est[*e]);
                        dt.max(dp)
                    }
                    None => PI,
                })
                .fold(0.0, f64::max);
            if best.as_ref().is_none_or(|b| worst < b.0) {
                *best = Some((worst, assign.clone()));
            }
            return;
        }
        let free = used.iter().filter(|u| !**u).count();
        let remaining = truth.len() - k;
        for e in 0..est.len() {
            if !used[e] {
                used[e] = true;
                assign[k] = Some(e);
                search(k + 1, used, assign, truth, est, cost, best);
                used[e] = false;
            }
        }
        if free < remaining {
            assign[k] = None;
            search(k + 1, used, assign, truth, est, cost, best);
        }
    }
    let mut used = vec![false; estimates.len()];
    search(0, &mut used, &mut assign, truth, estimates, &cost, &mut best);
    let (_, assign) = best.unwrap_or((PI, vec![None; n]));
    assign
        .iter()
        .enumerate()
        .map(|(t, a)| a.map(|e| cost(&truth[t], &estimates[e])))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{steering_vector, UraConfig};
    use crate::sim::{simulate_ideal, SimOptions, SourceSpec};
    use nalgebra::DVector;

    fn ura() -> UraConfig {
        UraConfig::standard(3, 4).unwrap()
    }

    fn dir(t: f64, p: f64) -> Direction {
        Direction::from_degrees(t, p).unwrap()
    }

    fn capture(sources: &[SourceSpec], t: usize, sigma2: f64, seed: u64) -> CsiCapture {
        simulate_ideal(&[ura()], sources, t, sigma2, SimOptions::seeded(seed)).unwrap().remove(0)
    }

    fn coherent(dirs: &[(f64, f64)]) -> Vec<SourceSpec> {
        dirs.iter().map(|&(t, p)| SourceSpec::direction(dir(t, p)).coherent("c")).collect()
    }

    const FOUR: [(f64, f64); 4] = [(21.8, 90.0), (32.0, 56.0), (15.0, -60.0), (60.0, -150.0)];

    #[test]
    fn sample_covariance_basics() {
        let cap = capture(&[SourceSpec::direction(dir(20.0, 10.0))], 1, 0.0, 1);
        let r = sample_covariance(&cap).unwrap();
        assert_eq!(r.rank(1e-9), 1);
        let cap = capture(&[SourceSpec::direction(dir(20.0, 10.0))], 30, 0.5, 1);
        let r = sample_covariance(&cap).unwrap();
        assert!((r.trace() - cap.snapshots.norm_squared() / 30.0).abs() < 1e-9);
        let inc = [
            SourceSpec::direction(dir(10.0, 0.0)),
            SourceSpec::direction(dir(40.0, 100.0)),
            SourceSpec::direction(dir(70.0, -45.0)),
        ];
        assert_eq!(sample_covariance(&capture(&inc, 10_000, 0.0, 2)).unwrap().rank(1e-9), 3);
    }

    #[test]
    fn decomposition_structure() {
        let a = steering_vector(&ura(), &dir(33.0, -70.0)).into_inner();
        let r = &a * a.adjoint() + DMatrix::identity(12, 12) * Complex64::new(0.1, 0.0);
        let d = decompose(&Covariance::from_matrix(r, 1).unwrap(), 1).unwrap();
        let top = d.signal_basis.column(0);
        let cos = (top.adjoint() * &a)[(0, 0)].norm() / a.norm();
        assert!((cos - 1.0).abs() < 1e-10);
        assert!((d.signal_basis.adjoint() * &d.noise_basis).norm() < 1e-10);

        let id = Covariance::from_matrix(DMatrix::identity(4, 4), 1).unwrap();
        let d = decompose(&id, 2).unwrap();
        assert!(d.eigenvalues.iter().all(|v| (v - 1.0).abs() < 1e-12));

        let dirs = [dir(10.0, 20.0), dir(45.0, -80.0)];
        let cap = capture(&dirs.map(SourceSpec::direction), 500, 0.0, 4);
        let d = decompose(&sample_covariance(&cap).unwrap(), 2).unwrap();
        for x in &dirs {
            let a = steering_vector(&ura(), x).into_inner();
            assert!((d.noise_basis.adjoint() * a).norm() < 1e-8);
        }
    }

    #[test]
    fn non_hermitian_and_bad_dimension_rejected() {
        let mut m = DMatrix::<Complex64>::identity(3, 3);
        m[(0, 1)] = Complex64::new(1.0, 0.0);
        assert!(matches!(Covariance::from_matrix(m, 1), Err(AoaError::NonHermitian(_))));
        let id = Covariance::from_matrix(DMatrix::identity(3, 3), 1).unwrap();
        assert_eq!(decompose(&id, 3), Err(AoaError::InvalidDimension { d: 3, m: 3 }));
    }

    #[test]
    fn eigen_gap_picks_signal_count() {
        assert_eq!(estimate_signal_dimension(&[50.0, 40.0, 30.0, 0.1, 0.09, 0.08], 5), 3);
        assert_eq!(estimate_signal_dimension(&[5.0, 0.01, 0.01], 2), 1);
    }

    #[test]
    fn full_size_forward_smoothing_is_identity() {
        let cap = capture(&coherent(&FOUR), 50, 0.1, 3);
        let r = sample_covariance(&cap).unwrap();
        let f = forward_smooth(&cap, &SmoothingSpec::new(3, 4, SmoothingMode::Forward)).unwrap();
        assert!((f.values() - r.values()).norm() < 1e-14 * r.values().norm());
    }

    #[test]
    fn exchange_matrix_is_involution_and_fixes_real_persymmetric() {
        let j = exchange_matrix(9);
        assert_eq!(&j * &j, DMatrix::identity(9, 9));
        let re = DMatrix::from_fn(4, 4, |a, b| Complex64::new(1.0 / (1.0 + (a as f64 - b as f64).abs()), 0.0));
        let r = Covariance::from_matrix(re.clone(), 1).unwrap();
        let fb = smooth_covariance(&r, 2, 2, &SmoothingSpec::new(2, 2, SmoothingMode::ForwardBackward)).unwrap();
        assert!((fb.values() - re).norm() < 1e-14);
    }

    #[test]
    fn smoothing_rank_capacity() {
        let spec = SmoothingSpec::new(3, 3, SmoothingMode::Forward);
        assert_eq!(spec.subarray_counts(3, 4), (1, 2));
        for n in 3..=4 {
            let cap = capture(&coherent(&FOUR[..n]), 50, 0.0, 7);
            let fwd = forward_smooth(&cap, &spec).unwrap();
            assert!(fwd.rank(1e-9) <= 2);
        }
        let cap = capture(&coherent(&FOUR), 50, 0.0, 7);
        let fb = forward_backward_smooth(&cap, &spec).unwrap();
        assert_eq!(fb.rank(1e-9), 4);
        let two = capture(&coherent(&FOUR[..2]), 50, 0.0, 7);
        assert_eq!(forward_smooth(&two, &spec).unwrap().rank(1e-9), 2);
        let one_sub = SmoothingSpec::new(3, 4, SmoothingMode::ForwardBackward);
        assert!(forward_backward_smooth(&cap, &one_sub).unwrap().rank(1e-9) <= 2);
        assert!(matches!(
            forward_smooth(&cap, &SmoothingSpec::new(4, 3, SmoothingMode::Forward)),
            Err(AoaError::SubarrayTooLarge { .. })
        ));
    }

    #[test]
    fn single_source_spectrum_peaks_at_truth() {
        let truth = dir(37.4, -121.2);
        let cap = capture(&[SourceSpec::direction(truth)], 20, 0.0, 5);
        let mut cfg = AoaConfig::new(AoaMethod::Music, 1);
        cfg.grid = AngleGrid::full(1.0).unwrap();
        cfg.refine = false;
        let res = estimate_aoa(&cap, &cfg).unwrap();
        let (t, p) = res.estimates[0].direction.to_degrees();
        assert!((t - 37.4).abs() <= 1.0 && (p + 121.2).abs() <= 1.0, "{t} {p}");
        cfg.refine = true;
        let res = estimate_aoa(&cap, &cfg).unwrap();
        let (t, p) = res.estimates[0].direction.to_degrees();
        assert!((t - 37.4).abs() <= 0.5 && (p + 121.2).abs() <= 0.5, "{t} {p}");
    }

    #[test]
    fn spectrum_invariant_to_complex_scaling() {
        let cap = capture(&coherent(&FOUR), 50, 0.05, 8);
        let mut cfg = AoaConfig::new(AoaMethod::ISsMusic, 4);
        cfg.grid = AngleGrid::full(2.0).unwrap();
        let a = estimate_aoa(&cap, &cfg).unwrap();
        let b = estimate_aoa(&cap.scaled(Complex64::from_polar(3.7, 1.1)), &cfg).unwrap();
        let rel = (&a.spectrum.values - &b.spectrum.values).abs().max() / a.spectrum.values.max();
        assert!(rel < 1e-6);
        for (x, y) in a.estimates.iter().zip(&b.estimates) {
            assert!(x.direction.angular_distance(&y.direction) < 1e-9);
        }
    }

    #[test]
    fn tie_break_orders_by_phi() {
        let grid = AngleGrid::full(10.0).unwrap();
        let mut values = DMatrix::from_element(grid.theta.len(), grid.phi.len(), 1.0);
        let j0 = grid.phi.iter().position(|p| p.abs() < 1e-9).unwrap();
        let j90 = grid.phi.iter().position(|p| (p - FRAC_PI_2).abs() < 1e-9).unwrap();
        values[(1, j90)] = 5.0;
        values[(1, j0)] = 5.0;
        let s = SpectrumGrid {
            theta: grid.theta,
            phi: grid.phi,
            values,
        };
        let peaks = find_peaks(&s, 3, false, 0).unwrap();
        assert!(peaks.shortfall);
        assert_eq!(peaks.estimates.len(), 2);
        assert!(peaks.estimates[0].direction.azimuth().abs() < 1e-9);
        assert!((peaks.estimates[1].direction.azimuth() - FRAC_PI_2).abs() < 1e-9);
    }

    #[test]
    fn peak_on_azimuth_seam_and_pole() {
        let grid = AngleGrid::full(5.0).unwrap();
        let mut values = DMatrix::from_element(grid.theta.len(), grid.phi.len(), 1.0);
        values[(3, 0)] = 4.0; // φ = −180°
        for j in 0..grid.phi.len() {
            values[(0, j)] = 3.0;
        }
        let s = SpectrumGrid {
            theta: grid.theta,
            phi: grid.phi,
            values,
        };
        let peaks = find_peaks(&s, 2, true, 0).unwrap();
        assert!(!peaks.shortfall);
        assert!((peaks.estimates[0].direction.azimuth() + PI).abs() < 1e-9);
        assert_eq!(peaks.estimates[1].direction.elevation(), 0.0);
    }

    #[test]
    fn halving_grid_step_keeps_peaks_within_a_coarse_cell() {
        let cap = capture(&coherent(&FOUR), 50, 0.0316, 21);
        let mut cfg = AoaConfig::new(AoaMethod::ISsMusic, 4);
        cfg.refine = false;
        cfg.grid = AngleGrid::full(1.0).unwrap();
        let coarse = estimate_aoa(&cap, &cfg).unwrap();
        cfg.grid = AngleGrid::full(0.5).unwrap();
        let fine = estimate_aoa(&cap, &cfg).unwrap();
        let dirs = |r: &AoaResult| r.estimates.iter().map(|e| e.direction).collect::<Vec<_>>();
        for m in match_estimates(&dirs(&coarse), &dirs(&fine)) {
            let (dt, dp) = m.unwrap();
            assert!(dt <= 1f64.to_radians() + 1e-9 && dp <= 1f64.to_radians() + 1e-9);
        }
    }

    #[test]
    fn music_value_matches_grid_evaluation() {
        let cap = capture(&[SourceSpec::direction(dir(30.0, 30.0))], 10, 0.01, 2);
        let d = decompose(&sample_covariance(&cap).unwrap(), 1).unwrap();
        let grid = AngleGrid {
            theta: vec![0.3],
            phi: vec![0.4],
        };
        let s = music_spectrum(&d, ArrayShape::of_capture(&cap), &grid).unwrap();
        let a: DVector<Complex64> = steering_vector(&ura(), &Direction::new(0.3, 0.4).unwrap()).into_inner();
        assert!((s.values[(0, 0)] - music_value(&d.noise_basis, &a)).abs() < 1e-9 * s.values[(0, 0)]);
        let bad = ArrayShape {
            nx: 3,
            ny: 3,
            spacing_wavelengths: 0.54,
        };
        assert!(matches!(music_spectrum(&d, bad, &grid), Err(AoaError::DimensionMismatch { .. })));
    }

    #[test]
    fn method_names_round_trip() {
        for m in AoaMethod::ALL {
            assert_eq!(AoaMethod::parse(m.name()), Some(m));
        }
    }
}
