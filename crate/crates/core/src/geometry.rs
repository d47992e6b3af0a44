//! Array layouts, angle conventions and steering vectors.
//!
//! Every array is a uniform rectangular array (URA) of `mx × my` elements
//! lying in its local xy-plane with boresight along local +z. Elements are
//! indexed x-major: element `m = m_y * mx + m_x`, which is the ordering
//! produced by the Kronecker product `a_y ⊗ a_x`.
//!
//! Elevation is measured down from the local +z axis and lies in `[0, π/2]`.
//! Azimuth is measured counterclockwise from the local +x axis and is stored
//! in `[-π, π)`; inputs in `[0, 2π)` are accepted and wrapped.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use nalgebra::{DVector, Rotation3, Vector3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
/// Default carrier frequency (5 GHz band, channel 40), Hz.
pub const DEFAULT_CARRIER_HZ: f64 = 5.2e9;
/// Default element spacing in wavelengths.
pub const DEFAULT_SPACING_WAVELENGTHS: f64 = 0.54;
/// Number of receive chains that are multiplexed over the array.
pub const RF_CHAINS: usize = 3;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("elevation {0} rad outside [0, pi/2]")]
    ElevationOutOfRange(f64),
    #[error("non-finite angle or coordinate")]
    NonFinite,
    #[error("scan angle {0} rad outside [0, pi/2]")]
    ScanAngleOutOfRange(f64),
    #[error("point coincides with the array center")]
    CoincidentPoint,
    #[error("point lies behind the array plane (local z = {0})")]
    BehindArray(f64),
    #[error("array must be at least 2x2, got {mx}x{my}")]
    InvalidShape { mx: usize, my: usize },
    #[error("spacing and wavelength must be positive and finite")]
    InvalidSpacing,
    #[error("invalid grouping: {0}")]
    InvalidGrouping(String),
}

/// Wraps an angle into `[-π, π)`.
pub fn wrap_angle(angle: f64) -> f64 {
    if (-PI..PI).contains(&angle) {
        return angle;
    }
    let w = (angle + PI).rem_euclid(TAU) - PI;
    // rem_euclid can return TAU for tiny negative inputs
    if w >= PI {
        w - TAU
    } else {
        w
    }
}

/// Arrival direction in an array's local frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Direction {
    elevation: f64,
    azimuth: f64,
}

impl Direction {
    pub fn new(elevation: f64, azimuth: f64) -> Result<Self, GeometryError> {
        if !elevation.is_finite() || !azimuth.is_finite() {
            return Err(GeometryError::NonFinite);
        }
        if !(0.0..=FRAC_PI_2).contains(&elevation) {
            return Err(GeometryError::ElevationOutOfRange(elevation));
        }
        Ok(Self {
            elevation,
            azimuth: wrap_angle(azimuth),
        })
    }

    pub fn from_degrees(elevation_deg: f64, azimuth_deg: f64) -> Result<Self, GeometryError> {
        Self::new(elevation_deg.to_radians(), azimuth_deg.to_radians())
    }

    pub fn elevation(&self) -> f64 {
        self.elevation
    }

    pub fn azimuth(&self) -> f64 {
        self.azimuth
    }

    /// `(elevation, azimuth)` in degrees.
    pub fn to_degrees(&self) -> (f64, f64) {
        (self.elevation.to_degrees(), self.azimuth.to_degrees())
    }

    /// Unit propagation-source vector in the local frame.
    pub fn unit_vector(&self) -> Vector3<f64> {
        let (st, ct) = self.elevation.sin_cos();
        let (sp, cp) = self.azimuth.sin_cos();
        Vector3::new(st * cp, st * sp, ct)
    }

    /// Great-circle separation between two directions, radians.
    pub fn angular_distance(&self, other: &Direction) -> f64 {
        self.unit_vector().angle(&other.unit_vector())
    }
}

/// Signed azimuth difference wrapped to `[-π, π)`.
pub fn azimuth_error(a: f64, b: f64) -> f64 {
    wrap_angle(a - b)
}

/// Partition of the array elements into switch groups of up to three
/// elements, one per receive chain, plus one calibration-point antenna
/// (CPA) per group.
///
/// Element `k` of a group is always wired to chain `k`. Redundant
/// calibration slots are formed from sliding windows of three consecutive
/// CPAs and must therefore place every CPA of a window on a distinct chain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grouping {
    groups: Vec<Vec<usize>>,
    cpas: Vec<usize>,
}

impl Grouping {
    pub fn new(
        groups: Vec<Vec<usize>>,
        cpas: Vec<usize>,
        num_elements: usize,
    ) -> Result<Self, GeometryError> {
        let bad = |s: String| Err(GeometryError::InvalidGrouping(s));
        if groups.is_empty() {
            return bad("no groups".into());
        }
        let mut seen = vec![false; num_elements];
        for (g, group) in groups.iter().enumerate() {
            if group.is_empty() || group.len() > RF_CHAINS {
                return bad(format!("group {g} has {} elements", group.len()));
            }
            for &e in group {
                if e >= num_elements {
                    return bad(format!("element {e} out of range"));
                }
                if seen[e] {
                    return bad(format!("element {e} appears twice"));
                }
                seen[e] = true;
            }
        }
        if let Some(e) = seen.iter().position(|s| !s) {
            return bad(format!("element {e} is not in any group"));
        }
        if cpas.len() != groups.len() {
            return bad(format!(
                "{} CPAs for {} groups; need exactly one per group",
                cpas.len(),
                groups.len()
            ));
        }
        for (g, (&cpa, group)) in cpas.iter().zip(&groups).enumerate() {
            if !group.contains(&cpa) {
                return bad(format!("CPA {cpa} is not a member of group {g}"));
            }
        }
        let grouping = Self { groups, cpas };
        for (r, slot) in grouping.redundant_slots().iter().enumerate() {
            let mut chains: Vec<usize> = slot.iter().map(|&e| grouping.chain_of(e)).collect();
            chains.sort_unstable();
            chains.dedup();
            if chains.len() != slot.len() {
                return bad(format!(
                    "redundant slot {r} {slot:?} places two CPAs on the same chain"
                ));
            }
        }
        Ok(grouping)
    }

    /// Consecutive triples `{0,1,2}, {3,4,5}, ...` with CPAs chosen so that
    /// every redundant window uses three distinct chains. For twelve
    /// elements this yields CPAs `{0, 5, 7, 9}`.
    pub fn consecutive(num_elements: usize) -> Result<Self, GeometryError> {
        let groups: Vec<Vec<usize>> = (0..num_elements)
            .collect::<Vec<_>>()
            .chunks(RF_CHAINS)
            .map(|c| c.to_vec())
            .collect();
        let mut chains = Vec::with_capacity(groups.len());
        if !choose_cpa_chains(&groups, &mut chains) {
            return Err(GeometryError::InvalidGrouping(format!(
                "no CPA assignment with distinct chains for {num_elements} elements"
            )));
        }
        let cpas = groups.iter().zip(&chains).map(|(g, &c)| g[c]).collect();
        Self::new(groups, cpas, num_elements)
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn cpas(&self) -> &[usize] {
        &self.cpas
    }

    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn num_elements(&self) -> usize {
        self.groups.iter().map(Vec::len).sum()
    }

    pub fn group_of(&self, element: usize) -> Option<usize> {
        self.groups.iter().position(|g| g.contains(&element))
    }

    /// Receive chain an element is wired to.
    pub fn chain_of(&self, element: usize) -> usize {
        self.groups
            .iter()
            .find_map(|g| g.iter().position(|&e| e == element))
            .expect("element belongs to a group")
    }

    /// CPA windows sampled redundantly for inter-group alignment.
    pub fn redundant_slots(&self) -> Vec<Vec<usize>> {
        match self.cpas.len() {
            0 | 1 => Vec::new(),
            2 => vec![self.cpas.clone()],
            _ => self.cpas.windows(RF_CHAINS).map(|w| w.to_vec()).collect(),
        }
    }

    /// Total slot count: primary groups followed by redundant CPA slots.
    pub fn num_slots(&self) -> usize {
        self.groups.len() + self.redundant_slots().len()
    }

    /// Elements sampled in slot `id` (primary groups first).
    pub fn slot_elements(&self, id: usize) -> Option<Vec<usize>> {
        if id < self.groups.len() {
            return Some(self.groups[id].clone());
        }
        self.redundant_slots().get(id - self.groups.len()).cloned()
    }
}

fn choose_cpa_chains(groups: &[Vec<usize>], chains: &mut Vec<usize>) -> bool {
    let g = chains.len();
    if g == groups.len() {
        return true;
    }
    let preferred = (RF_CHAINS - g % RF_CHAINS) % RF_CHAINS;
    let order = (0..RF_CHAINS).map(|k| (preferred + k) % RF_CHAINS);
    for c in order {
        if c >= groups[g].len() {
            continue;
        }
        let clash = chains.iter().rev().take(RF_CHAINS - 1).any(|&p| p == c);
        if clash {
            continue;
        }
        chains.push(c);
        if choose_cpa_chains(groups, chains) {
            return true;
        }
        chains.pop();
    }
    false
}

/// Geometry, pose and switch grouping of one uniform rectangular array.
#[derive(Debug, Clone, PartialEq)]
pub struct UraConfig {
    pub id: usize,
    mx: usize,
    my: usize,
    spacing: f64,
    wavelength: f64,
    pub center: Vector3<f64>,
    pub orientation: Rotation3<f64>,
    grouping: Grouping,
}

impl UraConfig {
    /// Array at the origin, boresight +z, consecutive grouping.
    pub fn new(mx: usize, my: usize, spacing: f64, wavelength: f64) -> Result<Self, GeometryError> {
        if mx < 2 || my < 2 {
            return Err(GeometryError::InvalidShape { mx, my });
        }
        if !(spacing > 0.0 && spacing.is_finite() && wavelength > 0.0 && wavelength.is_finite()) {
            return Err(GeometryError::InvalidSpacing);
        }
        Ok(Self {
            id: 0,
            mx,
            my,
            spacing,
            wavelength,
            center: Vector3::zeros(),
            orientation: Rotation3::identity(),
            grouping: Grouping::consecutive(mx * my)?,
        })
    }

    /// `mx × my` array at the default carrier with `0.54 λ` spacing.
    pub fn standard(mx: usize, my: usize) -> Result<Self, GeometryError> {
        let wavelength = SPEED_OF_LIGHT / DEFAULT_CARRIER_HZ;
        Self::new(mx, my, DEFAULT_SPACING_WAVELENGTHS * wavelength, wavelength)
    }

    pub fn with_id(mut self, id: usize) -> Self {
        self.id = id;
        self
    }

    pub fn with_center(mut self, center: Vector3<f64>) -> Self {
        self.center = center;
        self
    }

    pub fn with_orientation(mut self, orientation: Rotation3<f64>) -> Self {
        self.orientation = orientation;
        self
    }

    pub fn with_grouping(mut self, grouping: Grouping) -> Result<Self, GeometryError> {
        if grouping.num_elements() != self.num_elements() {
            return Err(GeometryError::InvalidGrouping(format!(
                "grouping covers {} elements, array has {}",
                grouping.num_elements(),
                self.num_elements()
            )));
        }
        self.grouping = grouping;
        Ok(self)
    }

    pub fn mx(&self) -> usize {
        self.mx
    }

    pub fn my(&self) -> usize {
        self.my
    }

    pub fn num_elements(&self) -> usize {
        self.mx * self.my
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn wavelength(&self) -> f64 {
        self.wavelength
    }

    pub fn carrier_hz(&self) -> f64 {
        SPEED_OF_LIGHT / self.wavelength
    }

    pub fn spacing_wavelengths(&self) -> f64 {
        self.spacing / self.wavelength
    }

    pub fn grouping(&self) -> &Grouping {
        &self.grouping
    }

    /// Element position relative to the array center, local frame.
    pub fn element_offset(&self, element: usize) -> Vector3<f64> {
        let (ix, iy) = (element % self.mx, element / self.mx);
        Vector3::new(
            (ix as f64 - (self.mx - 1) as f64 / 2.0) * self.spacing,
            (iy as f64 - (self.my - 1) as f64 / 2.0) * self.spacing,
            0.0,
        )
    }

    pub fn element_position(&self, element: usize) -> Vector3<f64> {
        self.center + self.orientation * self.element_offset(element)
    }

    /// Array normal (local +z) in the world frame.
    pub fn boresight(&self) -> Vector3<f64> {
        self.orientation * Vector3::z()
    }

    pub fn to_local(&self, world: &Vector3<f64>) -> Vector3<f64> {
        self.orientation.inverse() * (world - self.center)
    }
}

/// Unit-modulus steering vector, phase referenced to element 0.
#[derive(Debug, Clone, PartialEq)]
pub struct SteeringVector(DVector<Complex64>);

impl SteeringVector {
    pub fn values(&self) -> &DVector<Complex64> {
        &self.0
    }

    pub fn into_inner(self) -> DVector<Complex64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `[1, z, z², …, z^{n-1}]` with `z = e^{jα}`.
fn phase_progression(alpha: f64, n: usize) -> impl Iterator<Item = Complex64> {
    (0..n).map(move |k| Complex64::cis(alpha * k as f64))
}

/// Steering vector `a_y ⊗ a_x` of an `nx × ny` grid with spacing given in
/// wavelengths, for local direction cosines `(ux, uy)`.
pub fn grid_steering(nx: usize, ny: usize, spacing_wavelengths: f64, ux: f64, uy: f64) -> DVector<Complex64> {
    let kx = TAU * spacing_wavelengths * ux;
    let ky = TAU * spacing_wavelengths * uy;
    let ax: Vec<Complex64> = phase_progression(kx, nx).collect();
    let ay: Vec<Complex64> = phase_progression(ky, ny).collect();
    DVector::from_iterator(nx * ny, ay.iter().flat_map(|&y| ax.iter().map(move |&x| y * x)))
}

pub fn steering_vector(ura: &UraConfig, dir: &Direction) -> SteeringVector {
    let u = dir.unit_vector();
    SteeringVector(grid_steering(ura.mx, ura.my, ura.spacing_wavelengths(), u.x, u.y))
}

/// Steering vector with phases referenced to the array center rather than
/// element 0. Accepts any local unit vector, including ones behind the
/// array plane.
pub fn centered_steering_local(ura: &UraConfig, unit_local: &Vector3<f64>) -> DVector<Complex64> {
    let k = TAU / ura.wavelength;
    DVector::from_iterator(
        ura.num_elements(),
        (0..ura.num_elements()).map(|e| Complex64::cis(k * ura.element_offset(e).dot(unit_local))),
    )
}

/// Largest element spacing, in wavelengths, that avoids grating lobes when
/// scanning up to `scan_angle` away from broadside.
pub fn max_spacing(scan_angle: f64) -> Result<f64, GeometryError> {
    if !scan_angle.is_finite() || !(0.0..=FRAC_PI_2).contains(&scan_angle) {
        return Err(GeometryError::ScanAngleOutOfRange(scan_angle));
    }
    Ok(1.0 / (1.0 + scan_angle.sin().abs()))
}

/// Direction of a world point as seen from the array.
pub fn direction_from_point(ura: &UraConfig, point: &Vector3<f64>) -> Result<Direction, GeometryError> {
    if !point.iter().all(|v| v.is_finite()) {
        return Err(GeometryError::NonFinite);
    }
    let local = ura.to_local(point);
    let r = local.norm();
    if r <= f64::EPSILON * (1.0 + ura.center.norm()) {
        return Err(GeometryError::CoincidentPoint);
    }
    let cos_t = local.z / r;
    if cos_t < -1e-12 {
        return Err(GeometryError::BehindArray(local.z));
    }
    let elevation = cos_t.clamp(0.0, 1.0).acos();
    let azimuth = local.y.atan2(local.x);
    Direction::new(elevation, azimuth)
}

/// Half-line `anchor + t * direction` with unit direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    anchor: Vector3<f64>,
    direction: Vector3<f64>,
}

impl Ray {
    /// Normalizes `direction`; returns `None` for a zero or non-finite vector.
    pub fn new(anchor: Vector3<f64>, direction: Vector3<f64>) -> Option<Self> {
        let n = direction.norm();
        if !(n > 0.0 && n.is_finite()) || !anchor.iter().all(|v| v.is_finite()) {
            return None;
        }
        Some(Self {
            anchor,
            direction: direction / n,
        })
    }

    pub fn anchor(&self) -> Vector3<f64> {
        self.anchor
    }

    pub fn direction(&self) -> Vector3<f64> {
        self.direction
    }

    pub fn at(&self, t: f64) -> Vector3<f64> {
        self.anchor + self.direction * t
    }
}

/// Ray from the array center along an estimated arrival direction.
pub fn ray_from_aoa(ura: &UraConfig, dir: &Direction) -> Ray {
    Ray {
        anchor: ura.center,
        direction: ura.orientation * dir.unit_vector(),
    }
}

/// Rotation from yaw/pitch/roll in degrees (`Rz(yaw) · Ry(pitch) · Rx(roll)`).
pub fn orientation_from_ypr_deg(yaw: f64, pitch: f64, roll: f64) -> Rotation3<f64> {
    Rotation3::from_euler_angles(roll.to_radians(), pitch.to_radians(), yaw.to_radians())
}

/// Inverse of [`orientation_from_ypr_deg`].
pub fn orientation_to_ypr_deg(rotation: &Rotation3<f64>) -> (f64, f64, f64) {
    let (roll, pitch, yaw) = rotation.euler_angles();
    (yaw.to_degrees(), pitch.to_degrees(), roll.to_degrees())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: Complex64, b: Complex64, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    /// Per-element phase `e^{j2π d/λ (m_x sinθcosφ + m_y sinθsinφ)}`.
    fn element_oracle(ura: &UraConfig, dir: &Direction) -> Vec<Complex64> {
        let (t, p) = (dir.elevation(), dir.azimuth());
        let k = TAU * ura.spacing_wavelengths();
        (0..ura.num_elements())
            .map(|m| {
                let (ix, iy) = ((m % ura.mx()) as f64, (m / ura.mx()) as f64);
                Complex64::cis(k * (ix * t.sin() * p.cos() + iy * t.sin() * p.sin()))
            })
            .collect()
    }

    #[test]
    fn broadside_steering_is_all_ones() {
        let ura = UraConfig::standard(3, 4).unwrap();
        for az in [-170.0, 0.0, 45.0, 120.0] {
            let a = steering_vector(&ura, &Direction::from_degrees(0.0, az).unwrap());
            assert!(a.values().iter().all(|&z| close(z, Complex64::new(1.0, 0.0), 1e-15)));
        }
    }

    #[test]
    fn two_by_two_half_wavelength_at_thirty_degrees() {
        let ura = UraConfig::new(2, 2, 0.5, 1.0).unwrap();
        let a = steering_vector(&ura, &Direction::from_degrees(30.0, 0.0).unwrap());
        let i = Complex64::new(0.0, 1.0);
        let one = Complex64::new(1.0, 0.0);
        for (got, want) in a.values().iter().zip([one, i, one, i]) {
            assert!(close(*got, want, 1e-12), "{got} vs {want}");
        }
    }

    #[test]
    fn kronecker_matches_element_oracle_on_one_degree_grid() {
        let ura = UraConfig::standard(3, 4).unwrap();
        for el in 0..=90 {
            for az in -180..180 {
                let dir = Direction::from_degrees(el as f64, az as f64).unwrap();
                let a = steering_vector(&ura, &dir);
                let oracle = element_oracle(&ura, &dir);
                for (x, y) in a.values().iter().zip(&oracle) {
                    assert!((x - y).norm() <= 1e-12, "el {el} az {az}");
                }
            }
        }
    }

    #[test]
    fn steering_reference_element_is_one() {
        let ura = UraConfig::standard(3, 4).unwrap();
        let dir = Direction::from_degrees(21.8, 90.0).unwrap();
        let a = steering_vector(&ura, &dir);
        assert!(close(a.values()[0], Complex64::new(1.0, 0.0), 1e-15));
        assert!(a.values().iter().all(|z| (z.norm() - 1.0).abs() < 1e-14));
        let oracle = element_oracle(&ura, &dir);
        assert!(a.values().iter().zip(&oracle).all(|(x, y)| (x - y).norm() < 1e-12));
    }

    #[test]
    fn max_spacing_values() {
        assert!((max_spacing(0.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((max_spacing(FRAC_PI_2).unwrap() - 0.5).abs() < 1e-15);
        let sixty = max_spacing(60f64.to_radians()).unwrap();
        assert!((sixty - 1.0 / (1.0 + 3f64.sqrt() / 2.0)).abs() < 1e-15);
        assert!((sixty - 0.536).abs() < 1e-3);
        assert!(max_spacing(-0.1).is_err());
        assert!(max_spacing(2.0).is_err());
    }

    #[test]
    fn azimuth_wraps_into_half_open_range() {
        let d = Direction::from_degrees(10.0, 300.0).unwrap();
        assert!((d.azimuth().to_degrees() + 60.0).abs() < 1e-12);
        let d = Direction::from_degrees(10.0, 180.0).unwrap();
        assert!((d.azimuth() + PI).abs() < 1e-12);
        assert!(Direction::from_degrees(91.0, 0.0).is_err());
        assert!(Direction::new(f64::NAN, 0.0).is_err());
    }

    #[test]
    fn wrap_twice_is_identity() {
        for x in [-7.0, -PI, -1.0, 0.0, 3.1, PI, 9.0] {
            let w = wrap_angle(x);
            assert!((-PI..PI).contains(&w));
            assert_eq!(wrap_angle(w), w);
        }
    }

    #[test]
    fn direction_from_point_axis_cases() {
        let ura = UraConfig::standard(3, 4).unwrap();
        let d = direction_from_point(&ura, &Vector3::new(0.0, 0.0, 2.0)).unwrap();
        assert_eq!(d.elevation(), 0.0);
        let d = direction_from_point(&ura, &Vector3::new(1.0, 0.0, 0.0)).unwrap();
        assert!((d.elevation() - FRAC_PI_2).abs() < 1e-15);
        assert_eq!(d.azimuth(), 0.0);
        assert_eq!(
            direction_from_point(&ura, &Vector3::zeros()),
            Err(GeometryError::CoincidentPoint)
        );
        assert!(matches!(
            direction_from_point(&ura, &Vector3::new(0.0, 0.0, -1.0)),
            Err(GeometryError::BehindArray(_))
        ));
    }

    #[test]
    fn boresight_ray_follows_orientation() {
        let ura = UraConfig::standard(3, 4)
            .unwrap()
            .with_center(Vector3::new(0.0, 2.0, 1.17))
            .with_orientation(orientation_from_ypr_deg(0.0, 90.0, 0.0));
        let ray = ray_from_aoa(&ura, &Direction::new(0.0, 0.0).unwrap());
        assert!((ray.direction() - Vector3::x()).norm() < 1e-12);
        assert_eq!(ray.anchor(), ura.center);
    }

    #[test]
    fn two_arrays_rays_meet_at_common_point() {
        let a = UraConfig::standard(3, 4)
            .unwrap()
            .with_center(Vector3::new(0.0, 2.0, 1.17))
            .with_orientation(orientation_from_ypr_deg(0.0, 90.0, 0.0));
        let b = UraConfig::standard(3, 4)
            .unwrap()
            .with_center(Vector3::new(2.0, 0.0, 1.17))
            .with_orientation(orientation_from_ypr_deg(0.0, 0.0, -90.0));
        let p = Vector3::new(1.4, 1.8, 1.0);
        let ra = ray_from_aoa(&a, &direction_from_point(&a, &p).unwrap());
        let rb = ray_from_aoa(&b, &direction_from_point(&b, &p).unwrap());
        let ta = (p - ra.anchor()).dot(&ra.direction());
        let tb = (p - rb.anchor()).dot(&rb.direction());
        assert!((ra.at(ta) - p).norm() < 1e-9);
        assert!((rb.at(tb) - p).norm() < 1e-9);
    }

    #[test]
    fn default_grouping_for_twelve_elements() {
        let g = Grouping::consecutive(12).unwrap();
        assert_eq!(g.groups(), &[vec![0, 1, 2], vec![3, 4, 5], vec![6, 7, 8], vec![9, 10, 11]]);
        assert_eq!(g.cpas(), &[0, 5, 7, 9]);
        assert_eq!(g.redundant_slots(), vec![vec![0, 5, 7], vec![5, 7, 9]]);
        assert_eq!(g.num_slots(), 6);
        assert_eq!(g.chain_of(5), 2);
    }

    #[test]
    fn grouping_handles_short_last_group() {
        for m in [4, 6, 8, 9, 10, 16, 20] {
            let g = Grouping::consecutive(m).unwrap();
            assert_eq!(g.num_elements(), m);
        }
    }

    #[test]
    fn grouping_rejects_chain_clash_and_bad_partition() {
        let groups = vec![vec![0, 1, 2], vec![3, 4, 5], vec![6, 7, 8], vec![9, 10, 11]];
        assert!(Grouping::new(groups.clone(), vec![0, 3, 7, 9], 12).is_err());
        assert!(Grouping::new(groups.clone(), vec![0, 5, 7], 12).is_err());
        assert!(Grouping::new(groups[..3].to_vec(), vec![0, 5, 7], 12).is_err());
        assert!(Grouping::new(groups, vec![0, 5, 7, 9], 12).is_ok());
    }

    #[test]
    fn ypr_round_trip() {
        let r = orientation_from_ypr_deg(30.0, -20.0, 10.0);
        let (y, p, q) = orientation_to_ypr_deg(&r);
        assert!((y - 30.0).abs() < 1e-9 && (p + 20.0).abs() < 1e-9 && (q - 10.0).abs() < 1e-9);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn point_round_trips_through_ray(
                el in 0.0f64..1.5,
                az in -3.1f64..3.1,
                range in 0.05f64..20.0,
                yaw in -180.0f64..180.0,
                pitch in -80.0f64..80.0,
            ) {
                let ura = UraConfig::standard(3, 4).unwrap()
                    .with_center(Vector3::new(0.3, -1.0, 1.2))
                    .with_orientation(orientation_from_ypr_deg(yaw, pitch, 0.0));
                let dir = Direction::new(el, az).unwrap();
                let ray = ray_from_aoa(&ura, &dir);
                prop_assert!((ray.direction().norm() - 1.0).abs() < 1e-12);
                let p = ray.at(range);
                let back = direction_from_point(&ura, &p).unwrap();
                prop_assert!((back.elevation() - el).abs() < 1e-9);
                if el > 1e-6 {
                    prop_assert!(azimuth_error(back.azimuth(), az).abs() < 1e-8);
                }
                let again = ray_from_aoa(&ura, &back);
                let t = (p - again.anchor()).dot(&again.direction());
                prop_assert!((again.at(t) - p).norm() < 1e-9);
            }
        }
    }
}
