//! Declarative scenarios and the pipeline commands built on them.
//!
//! A scenario is a TOML document whose physical quantities carry their unit
//! in the key (`_m`, `_deg`, `_hz`, `_db`, `_s`, `_ns`). It is kept in file
//! units so that parse → serialize → parse is lossless; [`Scenario::setup`]
//! converts everything to SI units and radians once per run.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::Vector3;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aoa::{estimate_aoa, match_estimates, AngleGrid, AoaConfig, AoaMethod, AoaResult};
use crate::calib::{calibrate_session, measure_intra_session, CalibrationProfile, DEFAULT_SPREAD_WARNING};
use crate::formats::{
    write_bridge, write_capture, write_lsoi_spectrum, write_spectrum, FixFile, FixRecord, PeaksFile, TruthFile,
};
use crate::fusion::{
    gp_from_captures, locate_dpd, smooth_trajectory, DpdConfig, GeometricFix, PositionFix, DEFAULT_LSOI_RADIUS,
    DEFAULT_MAX_ITERS, DEFAULT_SMOOTHING_WINDOW, DEFAULT_VOXEL,
};
use crate::geometry::{
    direction_from_point, orientation_from_ypr_deg, Direction, Grouping, UraConfig, DEFAULT_SPACING_WAVELENGTHS,
    SPEED_OF_LIGHT,
};
use crate::report::{MetricsReport, Timings};
use crate::sim::{
    broadside_source, simulate_ideal, simulate_switched, CaptureSchedule, CsiCapture, HardwareImpairments, Propagation,
    SimOptions, SourceLocation, SourceSpec, SwitchedPlan, SwitchedSession, DEFAULT_PACKETS_PER_GROUP,
    DEFAULT_PACKET_INTERVAL,
};
use crate::Error;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScenarioError {
    #[error("{0}")]
    Parse(String),
    #[error("{}{path}: {message}", line.map(|l| format!("line {l}: ")).unwrap_or_default())]
    Invalid {
        path: String,
        line: Option<usize>,
        message: String,
    },
}

fn default_name() -> String {
    "scenario".into()
}
fn default_carrier() -> f64 {
    crate::geometry::DEFAULT_CARRIER_HZ
}
fn default_packets() -> usize {
    DEFAULT_PACKETS_PER_GROUP
}
fn default_interval() -> f64 {
    DEFAULT_PACKET_INTERVAL
}
fn default_methods() -> Vec<String> {
    vec![AoaMethod::ISsMusic.name().into()]
}
fn default_locate_method() -> String {
    AoaMethod::ISsMusic.name().into()
}
fn default_step() -> f64 {
    0.2
}
fn default_true() -> bool {
    true
}
fn default_radius() -> f64 {
    DEFAULT_LSOI_RADIUS
}
fn default_voxel() -> f64 {
    DEFAULT_VOXEL
}
fn default_iters() -> usize {
    DEFAULT_MAX_ITERS
}
fn default_one() -> usize {
    1
}
fn default_window() -> usize {
    DEFAULT_SMOOTHING_WINDOW
}
fn default_positions() -> usize {
    98
}
fn default_repeats() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<usize>,
    pub mx: usize,
    pub my: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spacing_wavelengths: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spacing_m: Option<f64>,
    #[serde(default = "default_carrier")]
    pub carrier_hz: f64,
    #[serde(default)]
    pub center_m: [f64; 3],
    /// Yaw, pitch, roll.
    #[serde(default)]
    pub ypr_deg: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub groups: Option<Vec<Vec<usize>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cpas: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceBlock {
    /// Elevation, azimuth in each array's local frame.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction_deg: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position_m: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coherence_group: Option<String>,
    #[serde(default)]
    pub power_db: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImpairmentBlock {
    #[serde(default)]
    pub pll_phases_deg: [f64; 3],
    #[serde(default)]
    pub cable_delays_ns: [f64; 3],
    #[serde(default)]
    pub cfo_hz: f64,
    /// Per-element, per-snapshot SNR of a unit-power source. Absent means
    /// noiseless.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snr_db: Option<f64>,
    /// SNR of the broadside reference capture; defaults to `snr_db`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration_snr_db: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CaptureMode {
    /// Time-division capture through three chains, calibrated before use.
    #[default]
    Switched,
    /// Every element in every snapshot, perfectly synchronized.
    Ideal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PropagationMode {
    #[default]
    Exact,
    PlanePerArray,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaptureBlock {
    #[serde(default)]
    pub mode: CaptureMode,
    #[serde(default = "default_packets")]
    pub packets_per_group: usize,
    #[serde(default = "default_interval")]
    pub packet_interval_s: f64,
    #[serde(default)]
    pub propagation: PropagationMode,
    /// Slot order applied to every array; defaults to all slots in order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_order: Option<Vec<usize>>,
}

impl Default for CaptureBlock {
    fn default() -> Self {
        Self {
            mode: CaptureMode::default(),
            packets_per_group: default_packets(),
            packet_interval_s: default_interval(),
            propagation: PropagationMode::default(),
            group_order: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorBlock {
    /// Any of `music`, `ss-music`, `i-ssmusic`.
    #[serde(default = "default_methods")]
    pub methods: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subarray: Option<[usize; 2]>,
    #[serde(default = "default_step")]
    pub grid_step_deg: f64,
    /// Peaks per array; defaults to the number of sources.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sources: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dimension: Option<usize>,
    #[serde(default = "default_true")]
    pub refine: bool,
    #[serde(default = "default_true")]
    pub export_spectrum: bool,
}

impl Default for EstimatorBlock {
    fn default() -> Self {
        Self {
            methods: default_methods(),
            subarray: None,
            grid_step_deg: default_step(),
            sources: None,
            dimension: None,
            refine: true,
            export_spectrum: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocatorBlock {
    /// AoA method feeding the geometric fix.
    #[serde(default = "default_locate_method")]
    pub aoa_method: String,
    #[serde(default = "default_radius")]
    pub lsoi_radius_m: f64,
    #[serde(default = "default_voxel")]
    pub voxel_m: f64,
    #[serde(default = "default_iters")]
    pub max_iters: usize,
    #[serde(default = "default_one")]
    pub dimension: usize,
    #[serde(default = "default_true")]
    pub export_lsoi: bool,
}

impl Default for LocatorBlock {
    fn default() -> Self {
        Self {
            aoa_method: default_locate_method(),
            lsoi_radius_m: default_radius(),
            voxel_m: default_voxel(),
            max_iters: default_iters(),
            dimension: 1,
            export_lsoi: true,
        }
    }
}

/// Paired GP/DPD trials with the source drawn from a lattice region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloBlock {
    pub trials: usize,
    pub region_min_m: [f64; 3],
    pub region_pitch_m: f64,
    pub region_counts: [usize; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackBlock {
    pub waypoints_m: Vec<[f64; 3]>,
    #[serde(default = "default_positions")]
    pub positions: usize,
    #[serde(default = "default_window")]
    pub window: usize,
    /// Per-axis standard deviation of synthetic fix noise. When absent every
    /// position runs the full localization pipeline.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fix_noise_m: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchBlock {
    #[serde(default = "default_repeats")]
    pub repeats: usize,
}

impl Default for BenchBlock {
    fn default() -> Self {
        Self {
            repeats: default_repeats(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub arrays: Vec<ArrayBlock>,
    #[serde(default)]
    pub sources: Vec<SourceBlock>,
    #[serde(default)]
    pub impairments: ImpairmentBlock,
    #[serde(default)]
    pub capture: CaptureBlock,
    #[serde(default)]
    pub estimator: EstimatorBlock,
    #[serde(default)]
    pub locator: LocatorBlock,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub montecarlo: Option<MonteCarloBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub track: Option<TrackBlock>,
    #[serde(default)]
    pub bench: BenchBlock,
}

/// Line of the `index`-th `[[name]]` header, 1-based.
fn table_line(text: &str, name: &str, index: usize) -> Option<usize> {
    let header = format!("[[{name}]]");
    text.lines()
        .enumerate()
        .filter(|(_, l)| l.trim() == header)
        .nth(index)
        .map(|(n, _)| n + 1)
}

fn invalid(path: impl Into<String>, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid {
        path: path.into(),
        line: None,
        message: message.into(),
    }
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let s: Self = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        s.validate().map_err(|e| match e {
            ScenarioError::Invalid { path, line: None, message } => {
                let line = ["arrays", "sources"].iter().find_map(|t| {
                    let rest = path.strip_prefix(&format!("{t}["))?;
                    let idx: usize = rest.split(']').next()?.parse().ok()?;
                    table_line(text, t, idx)
                });
                ScenarioError::Invalid { path, line, message }
            }
            other => other,
        })?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self::from_toml(&text)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.arrays.is_empty() {
            return Err(invalid("arrays", "at least one array is required"));
        }
        for (i, a) in self.arrays.iter().enumerate() {
            let p = format!("arrays[{i}]");
            if a.mx < 2 || a.my < 2 {
                return Err(invalid(&p, format!("{}x{} array; both sides must be >= 2", a.mx, a.my)));
            }
            if a.spacing_m.is_some() && a.spacing_wavelengths.is_some() {
                return Err(invalid(&p, "give spacing_m or spacing_wavelengths, not both"));
            }
            if !(a.carrier_hz > 0.0 && a.carrier_hz.is_finite()) {
                return Err(invalid(format!("{p}.carrier_hz"), "must be positive"));
            }
            if a.groups.is_some() != a.cpas.is_some() {
                return Err(invalid(&p, "groups and cpas must be given together"));
            }
            self.ura(i).map_err(|e| invalid(&p, e))?;
        }
        let mut ids: Vec<usize> = (0..self.arrays.len()).map(|i| self.array_id(i)).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != self.arrays.len() {
            return Err(invalid("arrays", "array ids must be unique"));
        }
        if self.sources.is_empty() && self.montecarlo.is_none() && self.track.is_none() {
            return Err(invalid("sources", "at least one source is required"));
        }
        for (i, s) in self.sources.iter().enumerate() {
            let p = format!("sources[{i}]");
            match (s.direction_deg, s.position_m) {
                (Some([t, a]), None) => {
                    Direction::from_degrees(t, a).map_err(|e| invalid(format!("{p}.direction_deg"), e.to_string()))?;
                }
                (None, Some(pos)) => {
                    if pos.iter().any(|v| !v.is_finite()) {
                        return Err(invalid(format!("{p}.position_m"), "must be finite"));
                    }
                }
                _ => return Err(invalid(&p, "give exactly one of direction_deg or position_m")),
            }
            if !s.power_db.is_finite() {
                return Err(invalid(format!("{p}.power_db"), "must be finite"));
            }
        }
        let imp = &self.impairments;
        if imp.pll_phases_deg.iter().chain(&imp.cable_delays_ns).chain([&imp.cfo_hz]).any(|v| !v.is_finite()) {
            return Err(invalid("impairments", "phases, delays and CFO must be finite"));
        }
        if imp.snr_db.into_iter().chain(imp.calibration_snr_db).any(|v| !v.is_finite()) {
            return Err(invalid("impairments", "SNR values must be finite"));
        }
        let cap = &self.capture;
        let min_packets = if cap.mode == CaptureMode::Switched { 2 } else { 1 };
        if cap.packets_per_group < min_packets {
            return Err(invalid(
                "capture.packets_per_group",
                format!("must be at least {min_packets}"),
            ));
        }
        if !(cap.packet_interval_s > 0.0 && cap.packet_interval_s.is_finite()) {
            return Err(invalid("capture.packet_interval_s", "must be positive"));
        }
        for (i, m) in self.estimator.methods.iter().enumerate() {
            if AoaMethod::parse(m).is_none() {
                return Err(invalid(format!("estimator.methods[{i}]"), format!("unknown method `{m}`")));
            }
        }
        if AoaMethod::parse(&self.locator.aoa_method).is_none() {
            return Err(invalid("locator.aoa_method", format!("unknown method `{}`", self.locator.aoa_method)));
        }
        AngleGrid::full(self.estimator.grid_step_deg).map_err(|e| invalid("estimator.grid_step_deg", e.to_string()))?;
        let l = &self.locator;
        if !(l.lsoi_radius_m > 0.0 && l.voxel_m > 0.0) || l.max_iters == 0 || l.dimension == 0 {
            return Err(invalid("locator", "radius, voxel, max_iters and dimension must be positive"));
        }
        if let Some(mc) = &self.montecarlo {
            if mc.trials == 0 || mc.region_counts.contains(&0) || mc.region_pitch_m < 0.0 {
                return Err(invalid("montecarlo", "trials and region counts must be positive"));
            }
        }
        if let Some(t) = &self.track {
            if t.waypoints_m.is_empty() || t.positions == 0 {
                return Err(invalid("track", "need waypoints and at least one position"));
            }
            if t.window == 0 || t.window.is_multiple_of(2) {
                return Err(invalid("track.window", "must be odd"));
            }
            if t.fix_noise_m.is_some_and(|v| v.is_nan() || v < 0.0) {
                return Err(invalid("track.fix_noise_m", "must be >= 0"));
            }
        }
        Ok(())
    }

    fn array_id(&self, index: usize) -> usize {
        self.arrays[index].id.unwrap_or(index)
    }

    fn ura(&self, index: usize) -> Result<UraConfig, String> {
        let a = &self.arrays[index];
        let wavelength = SPEED_OF_LIGHT / a.carrier_hz;
        let spacing = match (a.spacing_m, a.spacing_wavelengths) {
            (Some(m), _) => m,
            (None, Some(w)) => w * wavelength,
            (None, None) => DEFAULT_SPACING_WAVELENGTHS * wavelength,
        };
        let [cx, cy, cz] = a.center_m;
        let [yaw, pitch, roll] = a.ypr_deg;
        let mut ura = UraConfig::new(a.mx, a.my, spacing, wavelength)
            .map_err(|e| e.to_string())?
            .with_id(self.array_id(index))
            .with_center(Vector3::new(cx, cy, cz))
            .with_orientation(orientation_from_ypr_deg(yaw, pitch, roll));
        if let (Some(g), Some(c)) = (&a.groups, &a.cpas) {
            let grouping = Grouping::new(g.clone(), c.clone(), a.mx * a.my).map_err(|e| e.to_string())?;
            ura = ura.with_grouping(grouping).map_err(|e| e.to_string())?;
        }
        Ok(ura)
    }

    /// Runtime configuration in SI units.
    pub fn setup(&self) -> Result<Setup, Error> {
        self.validate()?;
        let uras = (0..self.arrays.len())
            .map(|i| self.ura(i).map_err(|m| invalid(format!("arrays[{i}]"), m)))
            .collect::<Result<Vec<_>, _>>()?;
        let sources = self.sources.iter().map(source_spec).collect();
        let imp = &self.impairments;
        let impairments = HardwareImpairments {
            pll_phases: imp.pll_phases_deg.map(f64::to_radians),
            cable_delays: imp.cable_delays_ns.map(|v| v * 1e-9),
            cfo_hz: imp.cfo_hz,
            noise_variance: noise_variance(imp.snr_db),
        };
        let calibration_noise_variance = noise_variance(imp.calibration_snr_db.or(imp.snr_db));
        let cap = &self.capture;
        let plan = match cap.mode {
            CaptureMode::Ideal => None,
            CaptureMode::Switched => {
                let mut plan = SwitchedPlan::standard(&uras, cap.packets_per_group, cap.packet_interval_s)?;
                if let Some(order) = &cap.group_order {
                    for s in &mut plan.schedules {
                        s.group_order = order.clone();
                    }
                }
                Some(plan)
            }
        };
        let grid = AngleGrid::full(self.estimator.grid_step_deg)?;
        let peaks = self.estimator.sources.unwrap_or(self.sources.len().max(1));
        let aoa_config = |method: AoaMethod, sources: usize, dimension: Option<usize>| AoaConfig {
            method,
            subarray: self.estimator.subarray.map(|[a, b]| (a, b)),
            grid: grid.clone(),
            sources,
            dimension,
            refine: self.estimator.refine,
        };
        let aoa = self
            .estimator
            .methods
            .iter()
            .map(|m| aoa_config(AoaMethod::parse(m).expect("validated"), peaks, self.estimator.dimension))
            .collect();
        let locate_aoa = aoa_config(AoaMethod::parse(&self.locator.aoa_method).expect("validated"), 1, None);
        let l = &self.locator;
        Ok(Setup {
            uras,
            sources,
            impairments,
            plan,
            packets: cap.packets_per_group,
            propagation: match cap.propagation {
                PropagationMode::Exact => Propagation::Exact,
                PropagationMode::PlanePerArray => Propagation::PlanePerArray,
            },
            aoa,
            locate_aoa,
            dpd: DpdConfig {
                radius: l.lsoi_radius_m,
                voxel: l.voxel_m,
                max_iters: l.max_iters,
                dimension: l.dimension,
            },
            seed: self.seed,
            calibration_noise_variance,
        })
    }
}

fn noise_variance(snr_db: Option<f64>) -> f64 {
    snr_db.map_or(0.0, |s| 10f64.powf(-s / 10.0))
}

fn source_spec(s: &SourceBlock) -> SourceSpec {
    let location = match (s.direction_deg, s.position_m) {
        (Some([t, a]), _) => SourceLocation::Direction(Direction::from_degrees(t, a).expect("validated")),
        (None, Some([x, y, z])) => SourceLocation::Position(Vector3::new(x, y, z)),
        (None, None) => unreachable!("validated"),
    };
    SourceSpec {
        location,
        coherence_group: s.coherence_group.clone(),
        power: 10f64.powf(s.power_db / 10.0),
        waveform: None,
    }
}

/// Independent 64-bit seed for a numbered purpose.
pub fn derive_seed(seed: u64, purpose: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose);
    rng.next_u64()
}

const CALIBRATION_PURPOSE: u64 = 1;
const TRIAL_PURPOSE: u64 = 1 << 20;
const TRACK_PURPOSE: u64 = 1 << 21;
const TRACK_NOISE_PURPOSE: u64 = 1 << 22;
const REGION_PURPOSE: u64 = 1 << 23;

#[derive(Debug, Clone, PartialEq)]
pub struct Setup {
    pub uras: Vec<UraConfig>,
    pub sources: Vec<SourceSpec>,
    pub impairments: HardwareImpairments,
    /// `None` for synchronized (ideal) capture.
    pub plan: Option<SwitchedPlan>,
    pub packets: usize,
    pub propagation: Propagation,
    pub aoa: Vec<AoaConfig>,
    pub locate_aoa: AoaConfig,
    pub dpd: DpdConfig,
    pub seed: u64,
    pub calibration_noise_variance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Captured {
    Ideal(Vec<CsiCapture>),
    Switched {
        data: SwitchedSession,
        broadside: SwitchedSession,
    },
}

impl Setup {
    fn options(&self, seed: u64) -> SimOptions {
        SimOptions::seeded(seed).with_propagation(self.propagation)
    }

    /// Data capture plus, for switched mode, a broadside calibration capture.
    pub fn capture(&self, sources: &[SourceSpec], seed: u64) -> Result<Captured, Error> {
        match &self.plan {
            None => Ok(Captured::Ideal(simulate_ideal(
                &self.uras,
                sources,
                self.packets,
                self.impairments.noise_variance,
                self.options(seed),
            )?)),
            Some(plan) => {
                let data = simulate_switched(&self.uras, sources, &self.impairments, plan, self.options(seed))?;
                let reference = HardwareImpairments {
                    noise_variance: self.calibration_noise_variance,
                    ..self.impairments
                };
                let broadside = simulate_switched(
                    &self.uras,
                    &[broadside_source()],
                    &reference,
                    plan,
                    SimOptions::seeded(derive_seed(seed, CALIBRATION_PURPOSE)),
                )?;
                Ok(Captured::Switched { data, broadside })
            }
        }
    }

    /// Full, phase-aligned captures. `intra` overrides the offsets measured
    /// from the broadside capture.
    pub fn calibrate(&self, captured: &Captured, intra: Option<&CalibrationProfile>) -> Result<Calibrated, Error> {
        match captured {
            Captured::Ideal(caps) => Ok(Calibrated {
                captures: caps.clone(),
                profile: None,
                warnings: Vec::new(),
            }),
            Captured::Switched { data, broadside } => {
                let (measured, warnings) = match intra {
                    Some(p) => (p.clone(), Vec::new()),
                    None => measure_intra_session(broadside, DEFAULT_SPREAD_WARNING)?,
                };
                let out = calibrate_session(&measured, data)?;
                Ok(Calibrated {
                    captures: out.captures,
                    profile: Some(out.profile),
                    warnings,
                })
            }
        }
    }

    /// GP fix from per-array AoA, then the progressive DPD search from it.
    pub fn locate(&self, captures: &[CsiCapture]) -> Result<(GeometricFix, PositionFix), Error> {
        let (gp, _) = gp_from_captures(captures, &self.uras, &self.locate_aoa)?;
        let dpd = locate_dpd(captures, &self.uras, gp.position, &self.dpd)?;
        Ok((gp, dpd))
    }

    /// Simulate, calibrate and locate one point source.
    pub fn locate_source(&self, position: Vector3<f64>, power: f64, seed: u64) -> Result<LocateOutcome, Error> {
        let src = [SourceSpec::position(position).with_power(power)];
        let captured = self.capture(&src, seed)?;
        let calibrated = self.calibrate(&captured, None)?;
        let (gp, dpd) = self.locate(&calibrated.captures)?;
        Ok(LocateOutcome {
            truth: Some(position),
            gp,
            dpd,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibrated {
    pub captures: Vec<CsiCapture>,
    pub profile: Option<CalibrationProfile>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocateOutcome {
    pub truth: Option<Vector3<f64>>,
    pub gp: GeometricFix,
    pub dpd: PositionFix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRow {
    pub trial: usize,
    pub truth: Vector3<f64>,
    pub gp: Vector3<f64>,
    pub dpd: Vector3<f64>,
    pub dpd_iterations: usize,
    pub dpd_converged: bool,
}

impl TrialRow {
    pub fn gp_error(&self) -> f64 {
        (self.gp - self.truth).norm()
    }

    pub fn dpd_error(&self) -> f64 {
        (self.dpd - self.truth).norm()
    }
}

/// Paired GP/DPD Monte-Carlo over the scenario's region, in parallel with
/// one derived seed per trial.
pub fn locate_trials(scenario: &Scenario) -> Result<Vec<TrialRow>, Error> {
    let setup = scenario.setup()?;
    let mc = scenario
        .montecarlo
        .as_ref()
        .ok_or_else(|| invalid("montecarlo", "locate trials need a [montecarlo] block"))?;
    let power = scenario.sources.first().map_or(1.0, |s| 10f64.powf(s.power_db / 10.0));
    let mut region = ChaCha8Rng::seed_from_u64(scenario.seed);
    region.set_stream(REGION_PURPOSE);
    let points: Vec<Vector3<f64>> = (0..mc.trials)
        .map(|_| {
            Vector3::from_fn(|axis, _| {
                mc.region_min_m[axis] + mc.region_pitch_m * region.random_range(0..mc.region_counts[axis]) as f64
            })
        })
        .collect();
    points
        .par_iter()
        .enumerate()
        .map(|(trial, &p)| {
            let out = setup.locate_source(p, power, derive_seed(scenario.seed, TRIAL_PURPOSE + trial as u64))?;
            Ok(TrialRow {
                trial,
                truth: p,
                gp: out.gp.position,
                dpd: out.dpd.position,
                dpd_iterations: out.dpd.iterations,
                dpd_converged: out.dpd.converged,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackOutcome {
    pub truth: Vec<Vector3<f64>>,
    pub raw: Vec<Vector3<f64>>,
    pub smoothed: Vec<Vector3<f64>>,
}

impl TrackOutcome {
    pub fn raw_errors(&self) -> Vec<f64> {
        self.raw.iter().zip(&self.truth).map(|(a, b)| (a - b).norm()).collect()
    }

    pub fn smoothed_errors(&self) -> Vec<f64> {
        self.smoothed.iter().zip(&self.truth).map(|(a, b)| (a - b).norm()).collect()
    }
}

/// Points spaced evenly by arc length along the waypoint polyline.
pub fn resample_path(waypoints: &[Vector3<f64>], count: usize) -> Vec<Vector3<f64>> {
    if waypoints.len() == 1 || count == 1 {
        return vec![waypoints[0]; count];
    }
    let seg: Vec<f64> = waypoints.windows(2).map(|w| (w[1] - w[0]).norm()).collect();
    let total: f64 = seg.iter().sum();
    (0..count)
        .map(|i| {
            let mut s = total * i as f64 / (count - 1) as f64;
            for (k, &len) in seg.iter().enumerate() {
                if s <= len || k == seg.len() - 1 {
                    let f = if len > 0.0 { (s / len).min(1.0) } else { 0.0 };
                    return waypoints[k] + (waypoints[k + 1] - waypoints[k]) * f;
                }
                s -= len;
            }
            *waypoints.last().unwrap()
        })
        .collect()
}

pub fn track(scenario: &Scenario) -> Result<TrackOutcome, Error> {
    let setup = scenario.setup()?;
    let t = scenario
        .track
        .as_ref()
        .ok_or_else(|| invalid("track", "tracking needs a [track] block"))?;
    let waypoints: Vec<Vector3<f64>> = t.waypoints_m.iter().map(|&[x, y, z]| Vector3::new(x, y, z)).collect();
    let truth = resample_path(&waypoints, t.positions);
    let raw: Vec<Vector3<f64>> = match t.fix_noise_m {
        Some(sigma) => {
            let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
            rng.set_stream(TRACK_NOISE_PURPOSE);
            let normal = Normal::new(0.0, sigma).map_err(|e| invalid("track.fix_noise_m", e.to_string()))?;
            truth
                .iter()
                .map(|p| p + Vector3::from_fn(|_, _| normal.sample(&mut rng)))
                .collect()
        }
        None => {
            let power = scenario.sources.first().map_or(1.0, |s| 10f64.powf(s.power_db / 10.0));
            truth
                .par_iter()
                .enumerate()
                .map(|(i, &p)| {
                    setup
                        .locate_source(p, power, derive_seed(scenario.seed, TRACK_PURPOSE + i as u64))
                        .map(|o| o.dpd.position)
                })
                .collect::<Result<_, Error>>()?
        }
    };
    let smoothed = smooth_trajectory(&raw, t.window)?;
    Ok(TrackOutcome { truth, raw, smoothed })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AoaRun {
    pub array_id: usize,
    pub method: AoaMethod,
    pub result: AoaResult,
    /// Per true source `(Δθ, Δφ)` in degrees; `None` when unmatched.
    pub errors: Vec<Option<(f64, f64)>>,
}

/// Every configured method on every array of one (calibrated) capture set.
pub fn aoa_runs(setup: &Setup, captures: &[CsiCapture]) -> Result<Vec<AoaRun>, Error> {
    let mut runs = Vec::new();
    for cfg in &setup.aoa {
        for (cap, ura) in captures.iter().zip(&setup.uras) {
            let result = estimate_aoa(cap, cfg)?;
            let truth: Vec<Direction> = setup
                .sources
                .iter()
                .filter_map(|s| match s.location {
                    SourceLocation::Direction(d) => Some(d),
                    SourceLocation::Position(p) => direction_from_point(ura, &p).ok(),
                })
                .collect();
            let est: Vec<Direction> = result.estimates.iter().map(|e| e.direction).collect();
            let errors = match_estimates(&truth, &est)
                .into_iter()
                .map(|m| m.map(|(a, b)| (a.to_degrees(), b.to_degrees())))
                .collect();
            runs.push(AoaRun {
                array_id: cap.array_id,
                method: cfg.method,
                result,
                errors,
            });
        }
    }
    Ok(runs)
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, Error> {
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|source| Error::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

fn load_profile(path: Option<&Path>) -> Result<Option<CalibrationProfile>, Error> {
    path.map(|p| {
        let text = fs::read_to_string(p).map_err(|source| Error::Io {
            path: p.to_path_buf(),
            source,
        })?;
        Ok(CalibrationProfile::from_toml(&text)?)
    })
    .transpose()
}

fn write_captures(dir: &Path, captured: &Captured) -> Result<Vec<PathBuf>, Error> {
    let mut files = Vec::new();
    match captured {
        Captured::Ideal(caps) => {
            for c in caps {
                files.push(write(dir, &format!("array-{}.capture", c.array_id), &write_capture(c))?);
            }
        }
        Captured::Switched { data, broadside } => {
            for c in &data.arrays {
                files.push(write(dir, &format!("array-{}.capture", c.array_id), &write_capture(c))?);
            }
            for b in &data.bridges {
                let name = format!("bridge-{}-{}.capture", b.layout.reference_array, b.layout.other_array);
                files.push(write(dir, &name, &write_bridge(b))?);
            }
            let cal = dir.join("calibration");
            for c in &broadside.arrays {
                files.push(write(&cal, &format!("array-{}.capture", c.array_id), &write_capture(c))?);
            }
        }
    }
    Ok(files)
}

/// Writes data captures, the broadside calibration captures (switched
/// mode) and the ground-truth sidecar.
pub fn run_simulate(scenario: &Scenario, out: &Path) -> Result<Vec<PathBuf>, Error> {
    if scenario.sources.is_empty() {
        return Err(invalid("sources", "simulation needs at least one source").into());
    }
    let setup = scenario.setup()?;
    let captured = setup.capture(&setup.sources, setup.seed)?;
    let mut files = write_captures(out, &captured)?;
    let truth = match &captured {
        Captured::Ideal(c) => c[0].truth.clone(),
        Captured::Switched { data, .. } => data.arrays[0].truth.clone(),
    };
    files.push(write(out, "truth.toml", &TruthFile::new(setup.seed, &setup.sources, truth.as_ref()).to_toml())?);
    Ok(files)
}

/// Calibration profile, calibrated captures and any broadside warnings.
pub fn run_calibrate(scenario: &Scenario, out: &Path, profile_in: Option<&Path>) -> Result<Calibrated, Error> {
    let setup = scenario.setup()?;
    let captured = setup.capture(&setup.sources, setup.seed)?;
    let intra = load_profile(profile_in)?;
    let calibrated = setup.calibrate(&captured, intra.as_ref())?;
    if let Some(p) = &calibrated.profile {
        write(out, "profile.toml", &p.to_toml()?)?;
    }
    for c in &calibrated.captures {
        write(&out.join("calibrated"), &format!("array-{}.capture", c.array_id), &write_capture(c))?;
    }
    Ok(calibrated)
}

fn angle_report(report: &mut MetricsReport, runs: &[AoaRun]) {
    for method in AoaMethod::ALL {
        let errs: Vec<(f64, f64)> = runs
            .iter()
            .filter(|r| r.method == method)
            .flat_map(|r| r.errors.iter().map(|e| e.unwrap_or((180.0, 180.0))))
            .collect();
        if !errs.is_empty() {
            report.push(format!("{}_elevation", method.name()), "deg", errs.iter().map(|e| e.0).collect());
            report.push(format!("{}_azimuth", method.name()), "deg", errs.iter().map(|e| e.1).collect());
        }
    }
}

/// Spectra, peaks and an angle-error report for every configured method.
pub fn run_aoa(scenario: &Scenario, out: &Path, profile_in: Option<&Path>) -> Result<Vec<AoaRun>, Error> {
    let setup = scenario.setup()?;
    let captured = setup.capture(&setup.sources, setup.seed)?;
    let intra = load_profile(profile_in)?;
    let calibrated = setup.calibrate(&captured, intra.as_ref())?;
    let runs = aoa_runs(&setup, &calibrated.captures)?;
    let mut peaks = PeaksFile::default();
    for r in &runs {
        peaks.add(r.method.name(), r.array_id, &r.result.estimates, r.result.shortfall);
        if scenario.estimator.export_spectrum {
            let name = format!("spectrum-array-{}-{}.csv", r.array_id, r.method.name());
            write(out, &name, &write_spectrum(&r.result.spectrum))?;
        }
    }
    write(out, "peaks.toml", &peaks.to_toml())?;
    let mut report = MetricsReport::new("aoa", scenario.seed);
    angle_report(&mut report, &runs);
    write(out, "report.toml", &report.to_toml())?;
    Ok(runs)
}

fn trials_csv(rows: &[TrialRow]) -> String {
    let mut s = String::from(
        "trial,truth_x_m,truth_y_m,truth_z_m,gp_x_m,gp_y_m,gp_z_m,dpd_x_m,dpd_y_m,dpd_z_m,gp_error_m,dpd_error_m,dpd_iterations\n",
    );
    for r in rows {
        s += &format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.trial,
            r.truth.x,
            r.truth.y,
            r.truth.z,
            r.gp.x,
            r.gp.y,
            r.gp.z,
            r.dpd.x,
            r.dpd.y,
            r.dpd.z,
            r.gp_error(),
            r.dpd_error(),
            r.dpd_iterations
        );
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub enum LocateRun {
    Single(Box<LocateOutcome>),
    Trials(Vec<TrialRow>),
}

/// Single fix (GP and DPD) or, with a `[montecarlo]` block, paired trials.
pub fn run_locate(scenario: &Scenario, out: &Path, profile_in: Option<&Path>) -> Result<LocateRun, Error> {
    let mut report = MetricsReport::new("locate", scenario.seed);
    if scenario.montecarlo.is_some() {
        let rows = locate_trials(scenario)?;
        write(out, "trials.csv", &trials_csv(&rows))?;
        report.push("gp_3d", "m", rows.iter().map(TrialRow::gp_error).collect());
        report.push("dpd_3d", "m", rows.iter().map(TrialRow::dpd_error).collect());
        report.push("dpd_iterations", "count", rows.iter().map(|r| r.dpd_iterations as f64).collect());
        write(out, "report.toml", &report.to_toml())?;
        return Ok(LocateRun::Trials(rows));
    }
    let setup = scenario.setup()?;
    let captured = setup.capture(&setup.sources, setup.seed)?;
    let intra = load_profile(profile_in)?;
    let calibrated = setup.calibrate(&captured, intra.as_ref())?;
    let (gp, dpd) = setup.locate(&calibrated.captures)?;
    let truth = setup.sources.iter().find_map(|s| match s.location {
        SourceLocation::Position(p) => Some(p),
        SourceLocation::Direction(_) => None,
    });
    let fixes = FixFile {
        fixes: vec![FixRecord::from_gp(&gp, truth), FixRecord::from_dpd(&dpd, truth)],
    };
    write(out, "fix.toml", &fixes.to_toml())?;
    if scenario.locator.export_lsoi {
        if let Some(lsoi) = &dpd.final_lsoi {
            write(out, "lsoi-spectrum.csv", &write_lsoi_spectrum(lsoi, &dpd.final_spectrum))?;
        }
    }
    if let Some(t) = truth {
        report.push("gp_3d", "m", vec![(gp.position - t).norm()]);
        report.push("dpd_3d", "m", vec![(dpd.position - t).norm()]);
    }
    write(out, "report.toml", &report.to_toml())?;
    Ok(LocateRun::Single(Box::new(LocateOutcome { truth, gp, dpd })))
}

pub fn run_track(scenario: &Scenario, out: &Path) -> Result<TrackOutcome, Error> {
    let outcome = track(scenario)?;
    let mut csv = String::from("index,truth_x_m,truth_y_m,truth_z_m,raw_x_m,raw_y_m,raw_z_m,smooth_x_m,smooth_y_m,smooth_z_m\n");
    for (i, ((t, r), s)) in outcome.truth.iter().zip(&outcome.raw).zip(&outcome.smoothed).enumerate() {
        csv += &format!("{i},{},{},{},{},{},{},{},{},{}\n", t.x, t.y, t.z, r.x, r.y, r.z, s.x, s.y, s.z);
    }
    write(out, "track.csv", &csv)?;
    let mut report = MetricsReport::new("track", scenario.seed);
    report.push("raw_3d", "m", outcome.raw_errors());
    report.push("smoothed_3d", "m", outcome.smoothed_errors());
    write(out, "report.toml", &report.to_toml())?;
    Ok(outcome)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct BenchNumbers {
    scenario: String,
    aoa: Vec<PeaksFile>,
    fixes: Vec<FixRecord>,
}

/// Stage timings over repeated runs. Numerical outputs go to
/// `bench-results.toml`, timings to `timings.toml`.
pub fn run_bench(scenarios: &[Scenario], out: &Path) -> Result<Timings, Error> {
    let mut timings = Timings::default();
    let mut numbers = Vec::new();
    for scenario in scenarios {
        let setup = scenario.setup()?;
        let mut last = None;
        for _ in 0..scenario.bench.repeats.max(1) {
            let start = Instant::now();
            let captured = setup.capture(&setup.sources, setup.seed)?;
            timings.record(&format!("{}/simulate", scenario.name), start.elapsed());
            let start = Instant::now();
            let calibrated = setup.calibrate(&captured, None)?;
            timings.record(&format!("{}/calibrate", scenario.name), start.elapsed());
            let mut result = BenchNumbers {
                scenario: scenario.name.clone(),
                aoa: Vec::new(),
                fixes: Vec::new(),
            };
            for cfg in &setup.aoa {
                let mut peaks = PeaksFile::default();
                for cap in &calibrated.captures {
                    let start = Instant::now();
                    let r = estimate_aoa(cap, cfg)?;
                    timings.record(&format!("{}/aoa-{}", scenario.name, cfg.method.name()), start.elapsed());
                    peaks.add(cfg.method.name(), cap.array_id, &r.estimates, r.shortfall);
                }
                result.aoa.push(peaks);
            }
            let locatable = setup.uras.len() >= 2
                && setup.sources.iter().any(|s| matches!(s.location, SourceLocation::Position(_)));
            if locatable {
                let start = Instant::now();
                let (gp, _) = gp_from_captures(&calibrated.captures, &setup.uras, &setup.locate_aoa)?;
                timings.record(&format!("{}/gp", scenario.name), start.elapsed());
                let start = Instant::now();
                let dpd = locate_dpd(&calibrated.captures, &setup.uras, gp.position, &setup.dpd)?;
                timings.record(&format!("{}/dpd", scenario.name), start.elapsed());
                result.fixes = vec![FixRecord::from_gp(&gp, None), FixRecord::from_dpd(&dpd, None)];
            }
            last = Some(result);
        }
        numbers.extend(last);
    }
    #[derive(Serialize)]
    struct Doc {
        runs: Vec<BenchNumbers>,
    }
    write(out, "bench-results.toml", &toml::to_string(&Doc { runs: numbers }).expect("bench serializes"))?;
    write(out, "timings.toml", &timings.to_toml())?;
    Ok(timings)
}

/// Capture schedule of one array, for callers building their own plans.
pub fn default_schedule(ura: &UraConfig, packets: usize) -> CaptureSchedule {
    CaptureSchedule::for_grouping(ura.grouping(), packets, DEFAULT_PACKET_INTERVAL)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
name = "minimal"
seed = 4

[[arrays]]
mx = 3
my = 4

[[sources]]
direction_deg = [20.0, 45.0]
"#;

    #[test]
    fn minimal_scenario_defaults() {
        let s = Scenario::from_toml(MINIMAL).unwrap();
        let setup = s.setup().unwrap();
        assert_eq!(setup.uras.len(), 1);
        assert!((setup.uras[0].spacing_wavelengths() - 0.54).abs() < 1e-12);
        assert_eq!(setup.impairments.noise_variance, 0.0);
        assert_eq!(setup.aoa[0].method, AoaMethod::ISsMusic);
        assert_eq!(setup.aoa[0].sources, 1);
        assert_eq!(setup.plan.as_ref().unwrap().schedules[0].group_order, vec![0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn round_trip_is_lossless() {
        let mut s = Scenario::from_toml(MINIMAL).unwrap();
        s.impairments.snr_db = Some(12.5);
        s.impairments.pll_phases_deg = [10.1, -33.3, 179.9];
        s.track = Some(TrackBlock {
            waypoints_m: vec![[1.0, 1.0, 1.0], [2.0, 1.5, 1.1]],
            positions: 98,
            window: 5,
            fix_noise_m: Some(0.07),
        });
        let text = s.to_toml();
        let back = Scenario::from_toml(&text).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.to_toml(), text);
    }

    #[test]
    fn diagnostics_point_at_lines() {
        let bad = MINIMAL.replace("mx = 3", "mx = 1");
        match Scenario::from_toml(&bad) {
            Err(ScenarioError::Invalid { line, path, .. }) => {
                assert_eq!(path, "arrays[0]");
                assert_eq!(line, Some(5));
            }
            other => panic!("unexpected {other:?}"),
        }
        let typo = MINIMAL.replace("seed = 4", "sede = 4");
        let msg = Scenario::from_toml(&typo).unwrap_err().to_string();
        assert!(msg.contains("line"), "{msg}");
        let none = MINIMAL.replace("[[sources]]\ndirection_deg = [20.0, 45.0]", "");
        assert!(matches!(Scenario::from_toml(&none), Err(ScenarioError::Invalid { .. })));
        let both = MINIMAL.replace("direction_deg = [20.0, 45.0]", "direction_deg = [20.0, 45.0]\nposition_m = [1.0, 0.0, 0.0]");
        assert!(Scenario::from_toml(&both).is_err());
    }

    #[test]
    fn snr_converts_to_noise_variance() {
        let mut s = Scenario::from_toml(MINIMAL).unwrap();
        s.impairments.snr_db = Some(15.0);
        let v = s.setup().unwrap().impairments.noise_variance;
        assert!((v - 10f64.powf(-1.5)).abs() < 1e-15);
    }

    #[test]
    fn path_resampling_is_even() {
        let w = [Vector3::new(0.0, 0.0, 0.0), Vector3::new(1.0, 0.0, 0.0), Vector3::new(1.0, 1.0, 0.0)];
        let pts = resample_path(&w, 5);
        assert_eq!(pts.len(), 5);
        assert!((pts[2] - Vector3::new(1.0, 0.0, 0.0)).norm() < 1e-12);
        assert!((pts[4] - Vector3::new(1.0, 1.0, 0.0)).norm() < 1e-12);
        assert!((pts[1] - Vector3::new(0.5, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn derived_seeds_differ_by_purpose() {
        assert_ne!(derive_seed(1, 1), derive_seed(1, 2));
        assert_eq!(derive_seed(9, 3), derive_seed(9, 3));
    }
}
