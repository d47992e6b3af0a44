//! Three-stage phase calibration of switched captures.
//!
//! 1. Intra-group: a broadside capture exposes the fixed chain offsets of
//!    every group relative to its first element.
//! 2. Inter-group: dwells that share elements (the CPA slots) reveal the
//!    carrier-offset rotation between dwells; every group is rotated onto the
//!    time reference of group 0 and the dwells are merged into one full
//!    capture.
//! 3. Inter-array: a bridge slot sampling both arrays in one packet measures
//!    their phase difference, which fixes the rotation of each further array
//!    relative to the first.

use std::collections::VecDeque;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::geometry::{wrap_angle, Grouping};
use crate::sim::{BridgeCapture, CsiCapture, SwitchedSession};

/// Per-snapshot spread (circular standard deviation, radians) above which
/// the broadside condition is reported as violated.
pub const DEFAULT_SPREAD_WARNING: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CalibError {
    #[error("group {group} has {got} calibration snapshots, at least 2 needed")]
    InsufficientSnapshots { group: usize, got: usize },
    #[error("profile has no offsets for group {group}")]
    MissingGroup { group: usize },
    #[error("profile group {group} has {got} offsets, expected {expected}")]
    GroupSizeMismatch { group: usize, expected: usize, got: usize },
    #[error("capture of array {0} carries no switching schedule")]
    NotSwitched(usize),
    #[error("groups {unreachable:?} of array {array} share no elements with the chain from group 0 (reached slots {reached:?})")]
    BrokenChain {
        array: usize,
        unreachable: Vec<usize>,
        reached: Vec<usize>,
    },
    #[error("bridge lacks elements from both arrays")]
    NoCrossArrayElements,
    #[error("no capture for array {0}")]
    UnknownArray(usize),
    #[error("array {0} is bridged before its reference array is aligned")]
    UnalignedReference(usize),
    #[error("expected calibration for {expected} arrays, got {got}")]
    ArrayCount { expected: usize, got: usize },
    #[error("profile format: {0}")]
    Format(String),
}

/// Circular mean of unit phasors: `(mean angle, resultant length)`.
pub fn circular_mean(angles: impl IntoIterator<Item = f64>) -> (f64, f64) {
    let (mut sum, mut n) = (Complex64::new(0.0, 0.0), 0usize);
    for a in angles {
        sum += Complex64::cis(a);
        n += 1;
    }
    if n == 0 {
        return (0.0, 0.0);
    }
    (wrap_angle(sum.arg()), sum.norm() / n as f64)
}

/// Circular standard deviation `sqrt(-2 ln R)`.
pub fn circular_std(resultant: f64) -> f64 {
    if resultant <= 0.0 {
        f64::INFINITY
    } else {
        (-2.0 * resultant.min(1.0).ln()).sqrt()
    }
}

/// Intra-group offsets of one array.
#[derive(Debug, Clone, PartialEq)]
pub struct IntraGroupMeasurement {
    /// Per group, offset of each further element relative to the first.
    pub offsets: Vec<Vec<f64>>,
    /// Per group, the largest per-snapshot circular spread.
    pub spread: Vec<f64>,
    pub warnings: Vec<String>,
}

fn group_columns(capture: &CsiCapture, group: usize) -> Vec<usize> {
    match &capture.schedule {
        None => (0..capture.num_snapshots()).collect(),
        Some(s) => (0..capture.num_snapshots())
            .filter(|&c| s.column_slot(c).map(|(slot, _)| slot) == Some(group))
            .collect(),
    }
}

/// Offsets from a capture of a broadside far-field source.
pub fn measure_intra_group(capture: &CsiCapture, spread_warning: f64) -> Result<IntraGroupMeasurement, CalibError> {
    let mut out = IntraGroupMeasurement {
        offsets: Vec::new(),
        spread: Vec::new(),
        warnings: Vec::new(),
    };
    for (g, members) in capture.grouping.groups().iter().enumerate() {
        let cols = group_columns(capture, g);
        if cols.len() < 2 {
            return Err(CalibError::InsufficientSnapshots { group: g, got: cols.len() });
        }
        let first = members[0];
        let mut offsets = Vec::with_capacity(members.len().saturating_sub(1));
        let mut spread: f64 = 0.0;
        for &e in &members[1..] {
            let (mean, r) = circular_mean(
                cols.iter()
                    .map(|&c| (capture.snapshots[(e, c)] * capture.snapshots[(first, c)].conj()).arg()),
            );
            offsets.push(mean);
            spread = spread.max(circular_std(r));
        }
        if spread > spread_warning {
            out.warnings.push(format!(
                "array {} group {g}: offset spread {spread:.3} rad exceeds {spread_warning} rad; source may not be broadside",
                capture.array_id
            ));
        }
        out.offsets.push(offsets);
        out.spread.push(spread);
    }
    Ok(out)
}

fn element_offsets(grouping: &Grouping, offsets: &[Vec<f64>]) -> Result<Vec<f64>, CalibError> {
    let mut per_element = vec![0.0; grouping.num_elements()];
    for (g, members) in grouping.groups().iter().enumerate() {
        let o = offsets.get(g).ok_or(CalibError::MissingGroup { group: g })?;
        if o.len() != members.len() - 1 {
            return Err(CalibError::GroupSizeMismatch {
                group: g,
                expected: members.len() - 1,
                got: o.len(),
            });
        }
        for (&e, &phase) in members[1..].iter().zip(o) {
            per_element[e] = phase;
        }
    }
    Ok(per_element)
}

/// Rotates every element by minus its group offset.
pub fn apply_intra_group(capture: &CsiCapture, offsets: &[Vec<f64>]) -> Result<CsiCapture, CalibError> {
    let per_element = element_offsets(&capture.grouping, offsets)?;
    let mut out = capture.clone();
    for (e, mut row) in out.snapshots.row_iter_mut().enumerate() {
        row *= Complex64::cis(-per_element[e]);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterGroupAlignment {
    /// Rotation per primary group; group 0 is 0.
    pub phases: Vec<f64>,
    /// Slots in the order they were reached from group 0.
    pub chain: Vec<usize>,
}

/// Rotation of every group onto group 0's time reference, chained through
/// dwells that share elements. Expects an intra-calibrated capture.
pub fn align_inter_group(capture: &CsiCapture) -> Result<InterGroupAlignment, CalibError> {
    let sched = capture.schedule.as_ref().ok_or(CalibError::NotSwitched(capture.array_id))?;
    let grouping = &capture.grouping;
    let ppg = sched.packets_per_group;
    let dwells: Vec<(usize, Vec<usize>)> = sched
        .group_order
        .iter()
        .map(|&slot| (slot, grouping.slot_elements(slot).unwrap_or_default()))
        .collect();

    let start = dwells
        .iter()
        .position(|(slot, _)| *slot == 0)
        .ok_or(CalibError::MissingGroup { group: 0 })?;
    let mut rho: Vec<Option<f64>> = vec![None; dwells.len()];
    rho[start] = Some(0.0);
    let mut queue = VecDeque::from([start]);
    let mut chain = vec![dwells[start].0];
    while let Some(u) = queue.pop_front() {
        let ru = Complex64::cis(rho[u].expect("queued dwells are solved"));
        for v in 0..dwells.len() {
            if rho[v].is_some() {
                continue;
            }
            let shared: Vec<usize> = dwells[v].1.iter().copied().filter(|e| dwells[u].1.contains(e)).collect();
            if shared.is_empty() {
                continue;
            }
            let mut acc = Complex64::new(0.0, 0.0);
            for &e in &shared {
                for p in 0..ppg {
                    acc += capture.snapshots[(e, u * ppg + p)] * ru * capture.snapshots[(e, v * ppg + p)].conj();
                }
            }
            rho[v] = Some(wrap_angle(acc.arg()));
            chain.push(dwells[v].0);
            queue.push_back(v);
        }
    }

    let mut phases = Vec::with_capacity(grouping.num_groups());
    let mut unreachable = Vec::new();
    for g in 0..grouping.num_groups() {
        let solved = dwells
            .iter()
            .enumerate()
            .find(|(_, (slot, _))| *slot == g)
            .and_then(|(i, _)| rho[i]);
        match solved {
            Some(r) => phases.push(r),
            None => {
                unreachable.push(g);
                phases.push(0.0);
            }
        }
    }
    if !unreachable.is_empty() {
        return Err(CalibError::BrokenChain {
            array: capture.array_id,
            unreachable,
            reached: chain,
        });
    }
    Ok(InterGroupAlignment { phases, chain })
}

/// Merges the first dwell of every group into one full `M × P` capture on
/// group 0's timestamps.
pub fn assemble(capture: &CsiCapture, inter_group: &[f64]) -> Result<CsiCapture, CalibError> {
    let sched = capture.schedule.as_ref().ok_or(CalibError::NotSwitched(capture.array_id))?;
    let ppg = sched.packets_per_group;
    let m = capture.num_elements();
    let mut snapshots = DMatrix::zeros(m, ppg);
    let mut timestamps = Vec::new();
    for (g, members) in capture.grouping.groups().iter().enumerate() {
        let dwell = sched
            .group_order
            .iter()
            .position(|&s| s == g)
            .ok_or(CalibError::MissingGroup { group: g })?;
        let rot = Complex64::cis(*inter_group.get(g).ok_or(CalibError::MissingGroup { group: g })?);
        for p in 0..ppg {
            for &e in members {
                snapshots[(e, p)] = capture.snapshots[(e, dwell * ppg + p)] * rot;
            }
        }
        if g == 0 {
            timestamps = capture.timestamps[dwell * ppg..(dwell + 1) * ppg].to_vec();
        }
    }
    Ok(CsiCapture {
        snapshots,
        timestamps,
        schedule: None,
        ..capture.clone()
    })
}

/// Phase of `other` relative to `reference`, measured within one packet.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BridgePair {
    pub reference_element: usize,
    pub other_element: usize,
    pub delta_gamma: f64,
}

/// Δγ̂ for every (reference, other) element pair of an intra-calibrated
/// bridge capture, wrapped to `[-π, π)`.
pub fn align_inter_array(bridge: &BridgeCapture) -> Result<Vec<BridgePair>, CalibError> {
    let l = &bridge.layout;
    if l.reference_elements.is_empty() || l.other_elements.is_empty() || l.reference_array == l.other_array {
        return Err(CalibError::NoCrossArrayElements);
    }
    let nref = l.reference_elements.len();
    let mut pairs = Vec::new();
    for (i, &a) in l.reference_elements.iter().enumerate() {
        for (j, &b) in l.other_elements.iter().enumerate() {
            let acc: Complex64 = (0..bridge.snapshots.ncols())
                .map(|p| bridge.snapshots[(nref + j, p)] * bridge.snapshots[(i, p)].conj())
                .sum();
            pairs.push(BridgePair {
                reference_element: a,
                other_element: b,
                delta_gamma: wrap_angle(acc.arg()),
            });
        }
    }
    Ok(pairs)
}

/// Rotation that puts the assembled `other` capture on the time reference
/// of the assembled `reference` capture, given the bridge phases.
pub fn inter_array_rotation(reference: &CsiCapture, other: &CsiCapture, pairs: &[BridgePair]) -> f64 {
    let p = reference.num_snapshots().min(other.num_snapshots());
    let mut acc = Complex64::new(0.0, 0.0);
    for pair in pairs {
        let rot = Complex64::cis(pair.delta_gamma);
        for k in 0..p {
            acc += rot
                * reference.snapshots[(pair.reference_element, k)]
                * other.snapshots[(pair.other_element, k)].conj();
        }
    }
    wrap_angle(acc.arg())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayCalibration {
    pub array_id: usize,
    pub intra_group: Vec<Vec<f64>>,
    #[serde(default)]
    pub inter_group: Vec<f64>,
    #[serde(default)]
    pub cpas: Vec<usize>,
    #[serde(default)]
    pub cpa_chain: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterArrayEntry {
    pub reference_array: usize,
    pub other_array: usize,
    pub pairs: Vec<BridgePair>,
    /// Rotation applied to the other array's assembled capture.
    pub alignment: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CalibrationProfile {
    pub arrays: Vec<ArrayCalibration>,
    #[serde(default)]
    pub inter_array: Vec<InterArrayEntry>,
}

impl CalibrationProfile {
    /// Profile holding only intra-group offsets, one entry per array.
    pub fn from_intra(measurements: &[(usize, &IntraGroupMeasurement)], groupings: &[&Grouping]) -> Self {
        Self {
            arrays: measurements
                .iter()
                .zip(groupings)
                .map(|((id, m), g)| ArrayCalibration {
                    array_id: *id,
                    intra_group: m.offsets.clone(),
                    inter_group: Vec::new(),
                    cpas: g.cpas().to_vec(),
                    cpa_chain: Vec::new(),
                })
                .collect(),
            inter_array: Vec::new(),
        }
    }

    pub fn array(&self, id: usize) -> Option<&ArrayCalibration> {
        self.arrays.iter().find(|a| a.array_id == id)
    }

    pub fn to_toml(&self) -> Result<String, CalibError> {
        toml::to_string(self).map_err(|e| CalibError::Format(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self, CalibError> {
        let mut p: Self = toml::from_str(text).map_err(|e| CalibError::Format(e.to_string()))?;
        for a in &mut p.arrays {
            a.intra_group.iter_mut().flatten().for_each(|v| *v = wrap_angle(*v));
            a.inter_group.iter_mut().for_each(|v| *v = wrap_angle(*v));
        }
        for e in &mut p.inter_array {
            e.alignment = wrap_angle(e.alignment);
            e.pairs.iter_mut().for_each(|pr| pr.delta_gamma = wrap_angle(pr.delta_gamma));
        }
        Ok(p)
    }
}

/// Intra-group offsets of every array from a broadside session.
pub fn measure_intra_session(
    broadside: &SwitchedSession,
    spread_warning: f64,
) -> Result<(CalibrationProfile, Vec<String>), CalibError> {
    let measured = broadside
        .arrays
        .iter()
        .map(|c| measure_intra_group(c, spread_warning))
        .collect::<Result<Vec<_>, _>>()?;
    let ids: Vec<(usize, &IntraGroupMeasurement)> =
        broadside.arrays.iter().map(|c| c.array_id).zip(measured.iter()).collect();
    let groupings: Vec<&Grouping> = broadside.arrays.iter().map(|c| &c.grouping).collect();
    let warnings = measured.iter().flat_map(|m| m.warnings.clone()).collect();
    Ok((CalibrationProfile::from_intra(&ids, &groupings), warnings))
}

fn calibrate_bridge(
    bridge: &BridgeCapture,
    reference: (&Grouping, &[Vec<f64>]),
    other: (&Grouping, &[Vec<f64>]),
) -> Result<BridgeCapture, CalibError> {
    let ref_off = element_offsets(reference.0, reference.1)?;
    let oth_off = element_offsets(other.0, other.1)?;
    let phases: Vec<f64> = bridge
        .layout
        .reference_elements
        .iter()
        .map(|&e| ref_off[e])
        .chain(bridge.layout.other_elements.iter().map(|&e| oth_off[e]))
        .collect();
    let mut out = bridge.clone();
    for (k, mut row) in out.snapshots.row_iter_mut().enumerate() {
        row *= Complex64::cis(-phases[k]);
    }
    Ok(out)
}

/// Full capture per array, all on one phase reference.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibratedSession {
    pub profile: CalibrationProfile,
    pub captures: Vec<CsiCapture>,
}

/// Runs all three stages on a data session using the intra-group offsets of
/// `intra`. Arrays are aligned through the bridges in order; an array no
/// bridge reaches keeps its own reference.
pub fn calibrate_session(intra: &CalibrationProfile, data: &SwitchedSession) -> Result<CalibratedSession, CalibError> {
    let mut profile = CalibrationProfile::default();
    let mut captures = Vec::with_capacity(data.arrays.len());
    for cap in &data.arrays {
        let entry = intra.array(cap.array_id).ok_or(CalibError::UnknownArray(cap.array_id))?;
        let corrected = apply_intra_group(cap, &entry.intra_group)?;
        let alignment = align_inter_group(&corrected)?;
        captures.push(assemble(&corrected, &alignment.phases)?);
        profile.arrays.push(ArrayCalibration {
            array_id: cap.array_id,
            intra_group: entry.intra_group.clone(),
            inter_group: alignment.phases,
            cpas: cap.grouping.cpas().to_vec(),
            cpa_chain: alignment.chain,
        });
    }

    let index_of = |id: usize| data.arrays.iter().position(|c| c.array_id == id).ok_or(CalibError::UnknownArray(id));
    let mut aligned = vec![false; captures.len()];
    if !aligned.is_empty() {
        aligned[0] = true;
    }
    for bridge in &data.bridges {
        let (r, o) = (index_of(bridge.layout.reference_array)?, index_of(bridge.layout.other_array)?);
        if !aligned[r] {
            return Err(CalibError::UnalignedReference(bridge.layout.other_array));
        }
        let corrected = calibrate_bridge(
            bridge,
            (&captures[r].grouping, &profile.arrays[r].intra_group),
            (&captures[o].grouping, &profile.arrays[o].intra_group),
        )?;
        let pairs = align_inter_array(&corrected)?;
        let rotation = inter_array_rotation(&captures[r], &captures[o], &pairs);
        captures[o].snapshots *= Complex64::cis(rotation);
        captures[o].timestamps = captures[r].timestamps.clone();
        aligned[o] = true;
        profile.inter_array.push(InterArrayEntry {
            reference_array: bridge.layout.reference_array,
            other_array: bridge.layout.other_array,
            pairs,
            alignment: rotation,
        });
    }
    Ok(CalibratedSession { profile, captures })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Direction, UraConfig};
    use crate::sim::{
        broadside_source, simulate_ideal, simulate_switched, CaptureSchedule, HardwareImpairments, SimOptions,
        SourceSpec, SwitchedPlan, DEFAULT_PACKET_INTERVAL,
    };
    use std::f64::consts::{PI, TAU};

    fn ura() -> UraConfig {
        UraConfig::standard(3, 4).unwrap()
    }

    fn plan(u: &UraConfig) -> SwitchedPlan {
        SwitchedPlan {
            schedules: vec![CaptureSchedule::for_grouping(u.grouping(), 20, DEFAULT_PACKET_INTERVAL)],
            bridges: vec![],
        }
    }

    fn impaired() -> HardwareImpairments {
        HardwareImpairments {
            pll_phases: [0.4, -1.9, 2.8],
            cable_delays: [0.0, 2.3e-10, -0.7e-10],
            cfo_hz: 1_234.5,
            noise_variance: 0.0,
        }
    }

    fn broadside(u: &UraConfig, imp: &HardwareImpairments, seed: u64) -> CsiCapture {
        simulate_switched(&[u.clone()], &[broadside_source()], imp, &plan(u), SimOptions::seeded(seed))
            .unwrap()
            .arrays
            .remove(0)
    }

    #[test]
    fn zero_impairments_give_zero_offsets() {
        let u = ura();
        let m = measure_intra_group(&broadside(&u, &HardwareImpairments::none(), 1), DEFAULT_SPREAD_WARNING).unwrap();
        assert!(m.offsets.iter().flatten().all(|v| v.abs() < 1e-12));
        assert!(m.warnings.is_empty());
    }

    #[test]
    fn injected_pll_and_cable_offsets_add() {
        let u = ura();
        let f = u.carrier_hz();
        let mut imp = HardwareImpairments::none();
        imp.pll_phases = [0.0, 0.7, 0.0];
        imp.cable_delays = [0.0, 0.3 / (TAU * f), 0.0];
        let m = measure_intra_group(&broadside(&u, &imp, 2), DEFAULT_SPREAD_WARNING).unwrap();
        for g in &m.offsets {
            assert!((g[0] - 1.0).abs() < 1e-9);
            assert!(g[1].abs() < 1e-9);
        }
    }

    #[test]
    fn circular_mean_handles_wraparound() {
        let u = ura();
        let mut imp = HardwareImpairments::none();
        imp.pll_phases = [0.0, 3.1, 0.0];
        imp.noise_variance = 0.01;
        let cap = broadside(&u, &imp, 3);
        let m = measure_intra_group(&cap, DEFAULT_SPREAD_WARNING).unwrap();
        for g in &m.offsets {
            assert!(wrap_angle(g[0] - 3.1).abs() < 0.1);
        }
        // the arithmetic mean of the same samples lands far from 3.1
        let cols = group_columns(&cap, 0);
        let arith: f64 = cols
            .iter()
            .map(|&c| (cap.snapshots[(1, c)] * cap.snapshots[(0, c)].conj()).arg())
            .sum::<f64>()
            / cols.len() as f64;
        let (circ, _) = circular_mean(cols.iter().map(|&c| (cap.snapshots[(1, c)] * cap.snapshots[(0, c)].conj()).arg()));
        assert!(wrap_angle(circ - 3.1).abs() < wrap_angle(arith - 3.1).abs());
    }

    #[test]
    fn off_broadside_source_triggers_spread_warning() {
        let u = ura();
        let mut imp = HardwareImpairments::none();
        imp.noise_variance = 4.0;
        let m = measure_intra_group(&broadside(&u, &imp, 4), DEFAULT_SPREAD_WARNING).unwrap();
        assert!(!m.warnings.is_empty());
    }

    #[test]
    fn too_few_snapshots_rejected() {
        let u = ura();
        let mut p = plan(&u);
        p.schedules[0].packets_per_group = 1;
        let cap = simulate_switched(&[u.clone()], &[broadside_source()], &impaired(), &p, SimOptions::seeded(0))
            .unwrap()
            .arrays
            .remove(0);
        assert_eq!(
            measure_intra_group(&cap, DEFAULT_SPREAD_WARNING),
            Err(CalibError::InsufficientSnapshots { group: 0, got: 1 })
        );
    }

    #[test]
    fn applying_offsets_removes_intra_group_impairment() {
        let u = ura();
        let imp = impaired();
        let cal = broadside(&u, &imp, 5);
        let m = measure_intra_group(&cal, DEFAULT_SPREAD_WARNING).unwrap();
        let fixed = apply_intra_group(&cal, &m.offsets).unwrap();
        let again = measure_intra_group(&fixed, DEFAULT_SPREAD_WARNING).unwrap();
        assert!(again.offsets.iter().flatten().all(|v| v.abs() < 1e-9));

        let zeros: Vec<Vec<f64>> = m.offsets.iter().map(|g| vec![0.0; g.len()]).collect();
        assert_eq!(apply_intra_group(&cal, &zeros).unwrap(), cal);
        assert_eq!(apply_intra_group(&cal, &m.offsets[..2]), Err(CalibError::MissingGroup { group: 2 }));
    }

    #[test]
    fn zero_cfo_gives_zero_alignment() {
        let u = ura();
        let mut imp = impaired();
        imp.cfo_hz = 0.0;
        let src = [SourceSpec::direction(Direction::from_degrees(30.0, 20.0).unwrap())];
        let cap = simulate_switched(&[u.clone()], &src, &imp, &plan(&u), SimOptions::seeded(6)).unwrap().arrays.remove(0);
        let m = measure_intra_group(&broadside(&u, &imp, 6), DEFAULT_SPREAD_WARNING).unwrap();
        let a = align_inter_group(&apply_intra_group(&cap, &m.offsets).unwrap()).unwrap();
        assert!(a.phases.iter().all(|v| v.abs() < 1e-9));
        // two redundant slots suffice to reach all four groups
        assert_eq!(a.chain.len(), 6);
    }

    fn max_phase_deviation_up_to_global(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> f64 {
        let global: Complex64 = a.iter().zip(b.iter()).map(|(x, y)| x * y.conj()).sum();
        let g = Complex64::cis(-global.arg());
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| (x * g * y.conj()).arg().abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn three_stage_round_trip_matches_unswitched_capture() {
        let u = ura();
        let imp = impaired();
        let src = [
            SourceSpec::direction(Direction::from_degrees(21.8, 90.0).unwrap()).coherent("a"),
            SourceSpec::direction(Direction::from_degrees(32.0, 56.0).unwrap()).coherent("a"),
            SourceSpec::direction(Direction::from_degrees(50.0, -120.0).unwrap()),
        ];
        let opts = SimOptions::seeded(11);
        let session = simulate_switched(&[u.clone()], &src, &imp, &plan(&u), opts).unwrap();
        let cal_session = simulate_switched(&[u.clone()], &[broadside_source()], &imp, &plan(&u), opts).unwrap();
        let (intra, _) = measure_intra_session(&cal_session, DEFAULT_SPREAD_WARNING).unwrap();
        let out = calibrate_session(&intra, &session).unwrap();
        let ideal = simulate_ideal(&[u], &src, 20, 0.0, opts).unwrap();
        let mut reference = ideal[0].snapshots.clone();
        for (p, mut col) in reference.column_iter_mut().enumerate() {
            col *= imp.cfo_phasor(out.captures[0].timestamps[p]);
        }
        assert!(max_phase_deviation_up_to_global(&out.captures[0].snapshots, &reference) < 1e-6);
        assert_eq!(out.profile.arrays[0].inter_group[0], 0.0);
    }

    #[test]
    fn calibration_is_waveform_invariant() {
        let u = ura();
        let imp = impaired();
        let a = measure_intra_group(&broadside(&u, &imp, 100), DEFAULT_SPREAD_WARNING).unwrap();
        let b = measure_intra_group(&broadside(&u, &imp, 200), DEFAULT_SPREAD_WARNING).unwrap();
        for (x, y) in a.offsets.iter().flatten().zip(b.offsets.iter().flatten()) {
            assert!(wrap_angle(x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn broken_chain_is_diagnosed() {
        let u = ura();
        let mut p = plan(&u);
        // drop the second redundant slot: group 3 is unreachable
        p.schedules[0].group_order = vec![0, 1, 2, 3, 4];
        let src = [broadside_source()];
        let cap = simulate_switched(&[u.clone()], &src, &impaired(), &p, SimOptions::seeded(0)).unwrap().arrays.remove(0);
        match align_inter_group(&cap) {
            Err(CalibError::BrokenChain { unreachable, .. }) => assert_eq!(unreachable, vec![3]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bridge_phase_matches_path_difference() {
        use crate::geometry::orientation_from_ypr_deg;
        use crate::sim::inter_array_phase;
        use nalgebra::Vector3;
        let a = ura()
            .with_id(0)
            .with_center(Vector3::new(0.0, 2.0, 1.17))
            .with_orientation(orientation_from_ypr_deg(0.0, 90.0, 0.0));
        let b = ura()
            .with_id(1)
            .with_center(Vector3::new(2.0, 0.0, 1.17))
            .with_orientation(orientation_from_ypr_deg(0.0, 0.0, -90.0));
        let arrays = [a.clone(), b.clone()];
        let imp = impaired();
        let plan = SwitchedPlan::standard(&arrays, 20, DEFAULT_PACKET_INTERVAL).unwrap();
        let opts = SimOptions::seeded(8);
        let cal = simulate_switched(&arrays, &[broadside_source()], &imp, &plan, opts).unwrap();
        let (intra, _) = measure_intra_session(&cal, DEFAULT_SPREAD_WARNING).unwrap();
        let p = Vector3::new(1.3, 1.6, 0.9);
        let data = simulate_switched(&arrays, &[SourceSpec::position(p)], &imp, &plan, opts).unwrap();
        let out = calibrate_session(&intra, &data).unwrap();
        for pair in &out.profile.inter_array[0].pairs {
            let want = inter_array_phase(
                &a.element_position(pair.reference_element),
                &b.element_position(pair.other_element),
                &p,
                a.wavelength(),
            )
            .unwrap();
            assert!(wrap_angle(pair.delta_gamma - want).abs() < 1e-9);
        }

        // both arrays end up on one reference: compare with an ideal capture
        let ideal = simulate_ideal(&arrays, &[SourceSpec::position(p)], 20, 0.0, opts).unwrap();
        let stack = |caps: &[CsiCapture]| {
            let mut m = DMatrix::zeros(24, 20);
            m.rows_mut(0, 12).copy_from(&caps[0].snapshots);
            m.rows_mut(12, 12).copy_from(&caps[1].snapshots);
            m
        };
        let mut reference = stack(&ideal);
        for (k, mut col) in reference.column_iter_mut().enumerate() {
            col *= imp.cfo_phasor(out.captures[0].timestamps[k]);
        }
        assert!(max_phase_deviation_up_to_global(&stack(&out.captures), &reference) < 1e-6);
    }

    #[test]
    fn bridge_wrapping_and_co_location() {
        let u = ura();
        let mk = |delta: f64| {
            let mut s = DMatrix::from_element(3, 4, Complex64::new(1.0, 0.0));
            for c in 0..4 {
                s[(2, c)] = Complex64::cis(delta);
            }
            BridgeCapture {
                layout: crate::sim::BridgeLayout::between(&u.clone().with_id(0), &u.clone().with_id(1)).unwrap(),
                snapshots: s,
                timestamps: vec![0.0; 4],
            }
        };
        assert!(align_inter_array(&mk(0.0)).unwrap()[0].delta_gamma.abs() < 1e-12);
        let got = align_inter_array(&mk(PI + 0.1)).unwrap()[0].delta_gamma;
        assert!((got - (-PI + 0.1)).abs() < 1e-12);
        let mut empty = mk(0.0);
        empty.layout.other_elements.clear();
        assert_eq!(align_inter_array(&empty), Err(CalibError::NoCrossArrayElements));
    }

    #[test]
    fn profile_toml_round_trip() {
        let profile = CalibrationProfile {
            arrays: vec![ArrayCalibration {
                array_id: 0,
                intra_group: vec![vec![0.1, -0.2], vec![3.0, 1.0]],
                inter_group: vec![0.0, 0.5],
                cpas: vec![0, 5],
                cpa_chain: vec![0, 2, 1],
            }],
            inter_array: vec![InterArrayEntry {
                reference_array: 0,
                other_array: 1,
                pairs: vec![BridgePair {
                    reference_element: 0,
                    other_element: 7,
                    delta_gamma: -1.25,
                }],
                alignment: 2.5,
            }],
        };
        let text = profile.to_toml().unwrap();
        assert_eq!(CalibrationProfile::from_toml(&text).unwrap(), profile);
    }
}
