//! Synthetic CSI generation.
//!
//! Ideal captures follow `Y = A·S + N`. Switched captures additionally model
//! the three-chain receiver that is multiplexed over the array: each packet
//! samples one slot (a group of up to three elements), every chain adds a
//! fixed hardware phase `φ_c + 2π f τ_c`, and every packet carries the
//! carrier-offset phase `e^{-j2π f_CFO t}` common to its chains.
//!
//! Packet `p` of every slot sees the same source waveform sample `s(p)`, so
//! slot dwells are coherent up to the per-slot carrier-offset phase. All
//! randomness comes from an explicit seed with one ChaCha stream per purpose.

use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector, Vector3};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::geometry::{
    centered_steering_local, steering_vector, Direction, GeometryError, Grouping, UraConfig,
    RF_CHAINS,
};

/// Packets collected per slot dwell.
pub const DEFAULT_PACKETS_PER_GROUP: usize = 50;
/// Packet spacing at 2000 packets per second.
pub const DEFAULT_PACKET_INTERVAL: f64 = 1.0 / 2000.0;

const WAVEFORM_STREAM: u64 = 1 << 32;
const GAIN_STREAM: u64 = 2;
const IDEAL_NOISE_STREAM: u64 = 1 << 33;
const SWITCHED_NOISE_STREAM: u64 = 1 << 34;
const BRIDGE_NOISE_STREAM: u64 = 1 << 35;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("at least one source is required")]
    NoSources,
    #[error("snapshot count must be at least 1")]
    NoSnapshots,
    #[error("source {index} coincides with the center of array {array}")]
    CoincidentSource { index: usize, array: usize },
    #[error("points coincide")]
    CoincidentPoints,
    #[error("slot {slot} out of range for array {array} ({slots} slots)")]
    SlotOutOfRange { array: usize, slot: usize, slots: usize },
    #[error("schedule for array {array} never samples group {group}")]
    GroupNotScheduled { array: usize, group: usize },
    #[error("expected one schedule per array ({expected}), got {got}")]
    ScheduleCount { expected: usize, got: usize },
    #[error("invalid impairments: {0}")]
    InvalidImpairments(String),
    #[error("waveform of source {index} has {len} samples, {needed} needed")]
    WaveformTooShort { index: usize, len: usize, needed: usize },
    #[error("invalid bridge: {0}")]
    InvalidBridge(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SourceLocation {
    /// Plane wave arriving from the same local direction at every array.
    Direction(Direction),
    /// Point source in world coordinates, meters.
    Position(Vector3<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceSpec {
    pub location: SourceLocation,
    /// Sources sharing a label emit scaled copies of one waveform.
    pub coherence_group: Option<String>,
    /// Linear power; the complex gain has modulus `sqrt(power)`.
    pub power: f64,
    /// Explicit per-snapshot waveform; generated from the seed when absent.
    pub waveform: Option<Vec<Complex64>>,
}

impl SourceSpec {
    pub fn direction(dir: Direction) -> Self {
        Self {
            location: SourceLocation::Direction(dir),
            coherence_group: None,
            power: 1.0,
            waveform: None,
        }
    }

    pub fn position(p: Vector3<f64>) -> Self {
        Self {
            location: SourceLocation::Position(p),
            coherence_group: None,
            power: 1.0,
            waveform: None,
        }
    }

    pub fn with_power(mut self, power: f64) -> Self {
        self.power = power;
        self
    }

    pub fn coherent(mut self, label: impl Into<String>) -> Self {
        self.coherence_group = Some(label.into());
        self
    }

    pub fn with_waveform(mut self, waveform: Vec<Complex64>) -> Self {
        self.waveform = Some(waveform);
        self
    }
}

/// How point sources are propagated to array elements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Propagation {
    /// Exact spherical path length to every element.
    #[default]
    Exact,
    /// Plane wave across each array, with the exact range to the array
    /// center as the common phase. Matches the steering model used for
    /// direct position determination.
    PlanePerArray,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    pub propagation: Propagation,
    pub seed: u64,
}

impl SimOptions {
    pub fn seeded(seed: u64) -> Self {
        Self {
            propagation: Propagation::Exact,
            seed,
        }
    }

    pub fn with_propagation(mut self, propagation: Propagation) -> Self {
        self.propagation = propagation;
        self
    }
}

/// Receiver impairments. Element `k` of a group is wired to chain `k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HardwareImpairments {
    /// PLL initial phase per chain, radians.
    pub pll_phases: [f64; RF_CHAINS],
    /// Cable delay per chain, seconds.
    pub cable_delays: [f64; RF_CHAINS],
    pub cfo_hz: f64,
    /// Complex noise variance per entry.
    pub noise_variance: f64,
}

impl HardwareImpairments {
    pub fn none() -> Self {
        Self {
            pll_phases: [0.0; RF_CHAINS],
            cable_delays: [0.0; RF_CHAINS],
            cfo_hz: 0.0,
            noise_variance: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let finite = self
            .pll_phases
            .iter()
            .chain(&self.cable_delays)
            .chain([&self.cfo_hz])
            .all(|v| v.is_finite());
        if !finite {
            return Err(SimError::InvalidImpairments("non-finite phase, delay or CFO".into()));
        }
        if !(self.noise_variance >= 0.0 && self.noise_variance.is_finite()) {
            return Err(SimError::InvalidImpairments(format!(
                "noise variance {} must be finite and >= 0",
                self.noise_variance
            )));
        }
        Ok(())
    }

    /// Fixed phase added by `chain`: `φ_c + 2π f τ_c`.
    pub fn chain_phase(&self, chain: usize, carrier_hz: f64) -> f64 {
        self.pll_phases[chain] + TAU * carrier_hz * self.cable_delays[chain]
    }

    /// Carrier-offset phasor at time `t`.
    pub fn cfo_phasor(&self, t: f64) -> Complex64 {
        Complex64::cis(-TAU * self.cfo_hz * t)
    }
}

/// Order in which slots are dwelt on. Slot ids `0..G` are the primary
/// groups, `G..` the redundant CPA slots of the array's grouping.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptureSchedule {
    pub group_order: Vec<usize>,
    pub packets_per_group: usize,
    pub packet_interval: f64,
}

impl CaptureSchedule {
    /// Primary groups in order, then every redundant slot.
    pub fn for_grouping(grouping: &Grouping, packets_per_group: usize, packet_interval: f64) -> Self {
        Self {
            group_order: (0..grouping.num_slots()).collect(),
            packets_per_group,
            packet_interval,
        }
    }

    pub fn total_packets(&self) -> usize {
        self.group_order.len() * self.packets_per_group
    }

    pub fn duration(&self) -> f64 {
        self.total_packets() as f64 * self.packet_interval
    }

    /// `(slot id, packet index within the dwell)` of a capture column.
    pub fn column_slot(&self, column: usize) -> Option<(usize, usize)> {
        let dwell = column / self.packets_per_group;
        self.group_order
            .get(dwell)
            .map(|&slot| (slot, column % self.packets_per_group))
    }

    pub fn validate(&self, grouping: &Grouping, array: usize) -> Result<(), SimError> {
        if self.packets_per_group == 0 {
            return Err(SimError::NoSnapshots);
        }
        if !(self.packet_interval > 0.0 && self.packet_interval.is_finite()) {
            return Err(SimError::InvalidImpairments("packet interval must be positive".into()));
        }
        let slots = grouping.num_slots();
        if let Some(&slot) = self.group_order.iter().find(|&&s| s >= slots) {
            return Err(SimError::SlotOutOfRange { array, slot, slots });
        }
        if let Some(group) = (0..grouping.num_groups()).find(|g| !self.group_order.contains(g)) {
            return Err(SimError::GroupNotScheduled { array, group });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruthSource {
    pub position: Option<Vector3<f64>>,
    /// Direction in this array's local frame, when in front of the array.
    pub direction: Option<Direction>,
    pub coherence_group: Option<String>,
    pub power: f64,
}

/// Simulation-only ground truth attached to a capture.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub sources: Vec<TruthSource>,
    pub impairments: Option<HardwareImpairments>,
}

/// Complex snapshots of one array.
///
/// Full captures sample every element in every column. Switched captures
/// carry a schedule; column `c` then samples only the elements of the slot
/// given by [`CaptureSchedule::column_slot`], other entries are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct CsiCapture {
    pub array_id: usize,
    pub mx: usize,
    pub my: usize,
    pub spacing: f64,
    pub wavelength: f64,
    pub grouping: Grouping,
    pub snapshots: DMatrix<Complex64>,
    pub timestamps: Vec<f64>,
    pub schedule: Option<CaptureSchedule>,
    pub truth: Option<GroundTruth>,
}

impl CsiCapture {
    pub fn num_elements(&self) -> usize {
        self.snapshots.nrows()
    }

    pub fn num_snapshots(&self) -> usize {
        self.snapshots.ncols()
    }

    pub fn is_switched(&self) -> bool {
        self.schedule.is_some()
    }

    /// Elements present in a column.
    pub fn sampled_elements(&self, column: usize) -> Vec<usize> {
        match &self.schedule {
            None => (0..self.num_elements()).collect(),
            Some(s) => s
                .column_slot(column)
                .and_then(|(slot, _)| self.grouping.slot_elements(slot))
                .unwrap_or_default(),
        }
    }

    /// Same capture with every entry multiplied by `factor`.
    pub fn scaled(&self, factor: Complex64) -> Self {
        let mut out = self.clone();
        out.snapshots *= factor;
        out
    }

    /// Array geometry without pose, for steering evaluation.
    pub fn spacing_wavelengths(&self) -> f64 {
        self.spacing / self.wavelength
    }
}

/// Elements sampled together in one packet across two arrays, used to
/// measure their relative phase. At most one element per chain.
#[derive(Debug, Clone, PartialEq)]
pub struct BridgeLayout {
    pub reference_array: usize,
    pub other_array: usize,
    pub reference_elements: Vec<usize>,
    pub other_elements: Vec<usize>,
}

impl BridgeLayout {
    /// The first two CPAs of the reference array plus the first CPA of the
    /// other array that sits on the remaining chain.
    pub fn between(reference: &UraConfig, other: &UraConfig) -> Result<Self, SimError> {
        let rg = reference.grouping();
        let mut reference_elements = vec![rg.cpas()[0]];
        if let Some(&second) = rg
            .cpas()
            .iter()
            .find(|&&c| rg.chain_of(c) != rg.chain_of(reference_elements[0]))
        {
            reference_elements.push(second);
        }
        let used: Vec<usize> = reference_elements.iter().map(|&e| rg.chain_of(e)).collect();
        let og = other.grouping();
        let other_element = og
            .cpas()
            .iter()
            .chain(og.groups().iter().flatten())
            .copied()
            .find(|&e| !used.contains(&og.chain_of(e)))
            .ok_or_else(|| SimError::InvalidBridge("no free chain on the other array".into()))?;
        Ok(Self {
            reference_array: reference.id,
            other_array: other.id,
            reference_elements,
            other_elements: vec![other_element],
        })
    }

    pub fn len(&self) -> usize {
        self.reference_elements.len() + self.other_elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(array id, element)` of each bridge row.
    pub fn rows(&self) -> Vec<(usize, usize)> {
        self.reference_elements
            .iter()
            .map(|&e| (self.reference_array, e))
            .chain(self.other_elements.iter().map(|&e| (self.other_array, e)))
            .collect()
    }
}

/// Packets of a bridge slot: rows follow [`BridgeLayout::rows`].
#[derive(Debug, Clone, PartialEq)]
pub struct BridgeCapture {
    pub layout: BridgeLayout,
    pub snapshots: DMatrix<Complex64>,
    pub timestamps: Vec<f64>,
}

/// Per-array schedules plus the inter-array bridge slots.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchedPlan {
    pub schedules: Vec<CaptureSchedule>,
    pub bridges: Vec<BridgeLayout>,
}

impl SwitchedPlan {
    /// Every slot of every array, then a bridge from the first array to
    /// each other array.
    pub fn standard(arrays: &[UraConfig], packets_per_group: usize, packet_interval: f64) -> Result<Self, SimError> {
        let schedules = arrays
            .iter()
            .map(|a| CaptureSchedule::for_grouping(a.grouping(), packets_per_group, packet_interval))
            .collect();
        let bridges = arrays
            .iter()
            .skip(1)
            .map(|other| BridgeLayout::between(&arrays[0], other))
            .collect::<Result<_, _>>()?;
        Ok(Self { schedules, bridges })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwitchedSession {
    pub arrays: Vec<CsiCapture>,
    pub bridges: Vec<BridgeCapture>,
}

/// Source waveforms and gains shared by every capture of one seed.
struct SignalModel {
    waveforms: Vec<Vec<Complex64>>,
    group_of: Vec<usize>,
    gains: Vec<Complex64>,
}

impl SignalModel {
    fn new(sources: &[SourceSpec], len: usize, seed: u64) -> Result<Self, SimError> {
        let mut labels: Vec<Option<&str>> = Vec::new();
        let mut group_of = Vec::with_capacity(sources.len());
        let mut waveforms: Vec<Vec<Complex64>> = Vec::new();
        for (i, src) in sources.iter().enumerate() {
            let existing = src
                .coherence_group
                .as_deref()
                .and_then(|l| labels.iter().position(|x| *x == Some(l)));
            let g = match existing {
                Some(g) => g,
                None => {
                    let g = labels.len();
                    labels.push(src.coherence_group.as_deref());
                    let w = match &src.waveform {
                        Some(w) if w.len() < len => {
                            return Err(SimError::WaveformTooShort {
                                index: i,
                                len: w.len(),
                                needed: len,
                            })
                        }
                        Some(w) => w[..len].to_vec(),
                        None => {
                            let mut rng = stream(seed, WAVEFORM_STREAM + g as u64);
                            (0..len).map(|_| Complex64::cis(rng.random::<f64>() * TAU)).collect()
                        }
                    };
                    waveforms.push(w);
                    g
                }
            };
            group_of.push(g);
        }
        let mut rng = stream(seed, GAIN_STREAM);
        let gains = sources
            .iter()
            .map(|s| Complex64::from_polar(s.power.max(0.0).sqrt(), rng.random::<f64>() * TAU))
            .collect();
        Ok(Self {
            waveforms,
            group_of,
            gains,
        })
    }

    fn amplitude(&self, source: usize, packet: usize) -> Complex64 {
        self.gains[source] * self.waveforms[self.group_of[source]][packet]
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

struct NoiseSource {
    rng: ChaCha8Rng,
    normal: Option<Normal<f64>>,
}

impl NoiseSource {
    fn new(seed: u64, id: u64, variance: f64) -> Self {
        let normal = (variance > 0.0).then(|| Normal::new(0.0, (variance / 2.0).sqrt()).expect("valid sigma"));
        Self {
            rng: stream(seed, id),
            normal,
        }
    }

    fn sample(&mut self) -> Complex64 {
        match &self.normal {
            Some(n) => Complex64::new(n.sample(&mut self.rng), n.sample(&mut self.rng)),
            None => Complex64::new(0.0, 0.0),
        }
    }
}

/// Response of every element of `ura` to one source, unit amplitude.
pub fn array_response(
    ura: &UraConfig,
    location: &SourceLocation,
    propagation: Propagation,
) -> Result<DVector<Complex64>, SimError> {
    match location {
        SourceLocation::Direction(dir) => Ok(steering_vector(ura, dir).into_inner()),
        SourceLocation::Position(p) => {
            let range = (p - ura.center).norm();
            if range < 1e-9 {
                return Err(SimError::CoincidentPoints);
            }
            let k = TAU / ura.wavelength();
            Ok(match propagation {
                Propagation::Exact => DVector::from_iterator(
                    ura.num_elements(),
                    (0..ura.num_elements()).map(|e| Complex64::cis(-k * (p - ura.element_position(e)).norm())),
                ),
                Propagation::PlanePerArray => {
                    let unit = ura.to_local(p) / range;
                    centered_steering_local(ura, &unit) * Complex64::cis(-k * range)
                }
            })
        }
    }
}

fn responses(
    arrays: &[UraConfig],
    sources: &[SourceSpec],
    propagation: Propagation,
) -> Result<Vec<Vec<DVector<Complex64>>>, SimError> {
    arrays
        .iter()
        .enumerate()
        .map(|(ai, ura)| {
            sources
                .iter()
                .enumerate()
                .map(|(si, s)| {
                    array_response(ura, &s.location, propagation).map_err(|e| match e {
                        SimError::CoincidentPoints => SimError::CoincidentSource { index: si, array: ai },
                        other => other,
                    })
                })
                .collect()
        })
        .collect()
}

fn truth_for(ura: &UraConfig, sources: &[SourceSpec], impairments: Option<HardwareImpairments>) -> GroundTruth {
    GroundTruth {
        sources: sources
            .iter()
            .map(|s| match s.location {
                SourceLocation::Direction(d) => TruthSource {
                    position: None,
                    direction: Some(d),
                    coherence_group: s.coherence_group.clone(),
                    power: s.power,
                },
                SourceLocation::Position(p) => TruthSource {
                    position: Some(p),
                    direction: crate::geometry::direction_from_point(ura, &p).ok(),
                    coherence_group: s.coherence_group.clone(),
                    power: s.power,
                },
            })
            .collect(),
        impairments,
    }
}

fn blank_capture(ura: &UraConfig, columns: usize) -> CsiCapture {
    CsiCapture {
        array_id: ura.id,
        mx: ura.mx(),
        my: ura.my(),
        spacing: ura.spacing(),
        wavelength: ura.wavelength(),
        grouping: ura.grouping().clone(),
        snapshots: DMatrix::zeros(ura.num_elements(), columns),
        timestamps: Vec::with_capacity(columns),
        schedule: None,
        truth: None,
    }
}

/// Unswitched captures of every array: `Y = A·S + N`.
pub fn simulate_ideal(
    arrays: &[UraConfig],
    sources: &[SourceSpec],
    snapshots: usize,
    noise_variance: f64,
    opts: SimOptions,
) -> Result<Vec<CsiCapture>, SimError> {
    if sources.is_empty() {
        return Err(SimError::NoSources);
    }
    if snapshots == 0 {
        return Err(SimError::NoSnapshots);
    }
    let mut check = HardwareImpairments::none();
    check.noise_variance = noise_variance;
    check.validate()?;
    let model = SignalModel::new(sources, snapshots, opts.seed)?;
    let resp = responses(arrays, sources, opts.propagation)?;
    Ok(arrays
        .iter()
        .enumerate()
        .map(|(ai, ura)| {
            let mut noise = NoiseSource::new(opts.seed, IDEAL_NOISE_STREAM + ai as u64, noise_variance);
            let mut cap = blank_capture(ura, snapshots);
            for t in 0..snapshots {
                for e in 0..ura.num_elements() {
                    let x: Complex64 = (0..sources.len()).map(|l| model.amplitude(l, t) * resp[ai][l][e]).sum();
                    cap.snapshots[(e, t)] = x + noise.sample();
                }
                cap.timestamps.push(t as f64 * DEFAULT_PACKET_INTERVAL);
            }
            let mut truth = truth_for(ura, sources, None);
            truth.impairments = None;
            cap.truth = Some(truth);
            cap
        })
        .collect())
}

/// Time-division captures through the three-chain receiver. Arrays are
/// dwelt on in list order, followed by the bridge slots; one clock runs
/// across the whole session.
pub fn simulate_switched(
    arrays: &[UraConfig],
    sources: &[SourceSpec],
    impairments: &HardwareImpairments,
    plan: &SwitchedPlan,
    opts: SimOptions,
) -> Result<SwitchedSession, SimError> {
    if sources.is_empty() {
        return Err(SimError::NoSources);
    }
    impairments.validate()?;
    if plan.schedules.len() != arrays.len() {
        return Err(SimError::ScheduleCount {
            expected: arrays.len(),
            got: plan.schedules.len(),
        });
    }
    for (ai, (ura, sched)) in arrays.iter().zip(&plan.schedules).enumerate() {
        sched.validate(ura.grouping(), ai)?;
    }
    let index_of = |id: usize| arrays.iter().position(|a| a.id == id);
    for b in &plan.bridges {
        let (Some(r), Some(o)) = (index_of(b.reference_array), index_of(b.other_array)) else {
            return Err(SimError::InvalidBridge(format!(
                "unknown array in bridge {}->{}",
                b.reference_array, b.other_array
            )));
        };
        if b.len() > RF_CHAINS || b.reference_elements.is_empty() || b.other_elements.is_empty() {
            return Err(SimError::InvalidBridge("need 2..=3 elements spanning both arrays".into()));
        }
        let mut chains: Vec<usize> = Vec::new();
        for (ai, e) in b.reference_elements.iter().map(|&e| (r, e)).chain(b.other_elements.iter().map(|&e| (o, e))) {
            if e >= arrays[ai].num_elements() {
                return Err(SimError::InvalidBridge(format!("element {e} out of range")));
            }
            let c = arrays[ai].grouping().chain_of(e);
            if chains.contains(&c) {
                return Err(SimError::InvalidBridge("two bridge elements share a chain".into()));
            }
            chains.push(c);
        }
    }

    let longest = plan
        .schedules
        .iter()
        .map(|s| s.packets_per_group)
        .max()
        .unwrap_or(1);
    let model = SignalModel::new(sources, longest, opts.seed)?;
    let resp = responses(arrays, sources, opts.propagation)?;
    let signal = |ai: usize, e: usize, p: usize| -> Complex64 {
        (0..sources.len()).map(|l| model.amplitude(l, p) * resp[ai][l][e]).sum()
    };
    let hardware = |ura: &UraConfig, e: usize| -> Complex64 {
        Complex64::cis(impairments.chain_phase(ura.grouping().chain_of(e), ura.carrier_hz()))
    };

    let mut clock = 0.0;
    let mut captures = Vec::with_capacity(arrays.len());
    for (ai, (ura, sched)) in arrays.iter().zip(&plan.schedules).enumerate() {
        let mut noise = NoiseSource::new(opts.seed, SWITCHED_NOISE_STREAM + ai as u64, impairments.noise_variance);
        let mut cap = blank_capture(ura, sched.total_packets());
        let mut column = 0;
        for &slot in &sched.group_order {
            let elements = ura.grouping().slot_elements(slot).expect("validated slot");
            for p in 0..sched.packets_per_group {
                let cfo = impairments.cfo_phasor(clock);
                for &e in &elements {
                    cap.snapshots[(e, column)] = cfo * hardware(ura, e) * signal(ai, e, p) + noise.sample();
                }
                cap.timestamps.push(clock);
                clock += sched.packet_interval;
                column += 1;
            }
        }
        cap.schedule = Some(sched.clone());
        cap.truth = Some(truth_for(ura, sources, Some(*impairments)));
        captures.push(cap);
    }

    let mut bridges = Vec::with_capacity(plan.bridges.len());
    for (bi, layout) in plan.bridges.iter().enumerate() {
        let r = index_of(layout.reference_array).expect("validated");
        let sched = &plan.schedules[r];
        let rows: Vec<(usize, usize)> = layout
            .rows()
            .into_iter()
            .map(|(id, e)| (index_of(id).expect("validated"), e))
            .collect();
        let mut noise = NoiseSource::new(opts.seed, BRIDGE_NOISE_STREAM + bi as u64, impairments.noise_variance);
        let mut snapshots = DMatrix::zeros(rows.len(), sched.packets_per_group);
        let mut timestamps = Vec::with_capacity(sched.packets_per_group);
        for p in 0..sched.packets_per_group {
            let cfo = impairments.cfo_phasor(clock);
            for (k, &(ai, e)) in rows.iter().enumerate() {
                snapshots[(k, p)] = cfo * hardware(&arrays[ai], e) * signal(ai, e, p) + noise.sample();
            }
            timestamps.push(clock);
            clock += sched.packet_interval;
        }
        bridges.push(BridgeCapture {
            layout: layout.clone(),
            snapshots,
            timestamps,
        });
    }
    Ok(SwitchedSession {
        arrays: captures,
        bridges,
    })
}

/// Far-field source straight in front of every array, used for the
/// intra-group calibration capture.
pub fn broadside_source() -> SourceSpec {
    SourceSpec::direction(Direction::new(0.0, 0.0).expect("broadside is valid"))
}

/// Phase difference between the signals received at `c1` and `c2` from a
/// source at `p`: `2π(‖p−c1‖ − ‖p−c2‖)/λ`, unwrapped.
pub fn inter_array_phase(
    c1: &Vector3<f64>,
    c2: &Vector3<f64>,
    p: &Vector3<f64>,
    wavelength: f64,
) -> Result<f64, SimError> {
    let (r1, r2) = ((p - c1).norm(), (p - c2).norm());
    if r1 < 1e-12 || r2 < 1e-12 {
        return Err(SimError::CoincidentPoints);
    }
    Ok(TAU * (r1 - r2) / wavelength)
}
