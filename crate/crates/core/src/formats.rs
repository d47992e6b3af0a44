//! Text file formats.
//!
//! Capture files are a TOML header, a line holding `---`, then CSV records
//! `snapshot,timestamp_s,element,re,im`, one per sampled entry. Elements are
//! numbered x-major from 0 (`m = my·Mx + mx`). Floats use the shortest
//! representation that round-trips, so equal data gives equal bytes.

use std::fmt::Write as _;

use nalgebra::{DMatrix, Vector3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::aoa::{AoaEstimate, SpectrumGrid};
use crate::fusion::{GeometricFix, Lsoi, PositionFix};
use crate::geometry::Grouping;
use crate::sim::{BridgeCapture, BridgeLayout, CaptureSchedule, CsiCapture, GroundTruth, SourceLocation, SourceSpec};

pub const CAPTURE_FORMAT: &str = "uraloc-capture-1";
pub const BRIDGE_FORMAT: &str = "uraloc-bridge-1";
const SEPARATOR: &str = "---";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FormatError {
    #[error("missing `---` separator between header and records")]
    MissingSeparator,
    #[error("header: {0}")]
    Header(String),
    #[error("unsupported format `{0}`")]
    UnsupportedFormat(String),
    #[error("record line {line}: {message}")]
    Record { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ScheduleHeader {
    group_order: Vec<usize>,
    packets_per_group: usize,
    packet_interval_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CaptureHeader {
    format: String,
    array_id: usize,
    mx: usize,
    my: usize,
    spacing_m: f64,
    wavelength_m: f64,
    element_order: String,
    snapshots: usize,
    groups: Vec<Vec<usize>>,
    cpas: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    schedule: Option<ScheduleHeader>,
}

fn push_record(out: &mut String, snapshot: usize, t: f64, index: usize, v: Complex64) {
    writeln!(out, "{snapshot},{t},{index},{},{}", v.re, v.im).expect("write to string");
}

pub fn write_capture(capture: &CsiCapture) -> String {
    let header = CaptureHeader {
        format: CAPTURE_FORMAT.into(),
        array_id: capture.array_id,
        mx: capture.mx,
        my: capture.my,
        spacing_m: capture.spacing,
        wavelength_m: capture.wavelength,
        element_order: "x-major".into(),
        snapshots: capture.num_snapshots(),
        groups: capture.grouping.groups().to_vec(),
        cpas: capture.grouping.cpas().to_vec(),
        schedule: capture.schedule.as_ref().map(|s| ScheduleHeader {
            group_order: s.group_order.clone(),
            packets_per_group: s.packets_per_group,
            packet_interval_s: s.packet_interval,
        }),
    };
    let mut out = toml::to_string(&header).expect("header serializes");
    out.push_str(SEPARATOR);
    out.push_str("\nsnapshot,timestamp_s,element,re,im\n");
    for c in 0..capture.num_snapshots() {
        for e in capture.sampled_elements(c) {
            push_record(&mut out, c, capture.timestamps[c], e, capture.snapshots[(e, c)]);
        }
    }
    out
}

fn split(text: &str) -> Result<(&str, &str), FormatError> {
    let pos = text
        .lines()
        .scan(0usize, |offset, line| {
            let start = *offset;
            *offset += line.len() + 1;
            Some((start, line))
        })
        .find(|(_, l)| l.trim() == SEPARATOR)
        .map(|(start, _)| start)
        .ok_or(FormatError::MissingSeparator)?;
    let body = text.get(pos + SEPARATOR.len() + 1..).unwrap_or("");
    Ok((&text[..pos], body))
}

type Record = (usize, f64, usize, Complex64);

fn parse_records(body: &str, header_lines: usize) -> Result<Vec<Record>, FormatError> {
    let mut out = Vec::new();
    for (k, line) in body.lines().enumerate().skip(1) {
        let line_no = header_lines + 2 + k;
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| FormatError::Record { line: line_no, message };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(err(format!("expected 5 fields, got {}", f.len())));
        }
        let int = |s: &str| s.trim().parse::<usize>().map_err(|e| err(format!("`{s}`: {e}")));
        let float = |s: &str| s.trim().parse::<f64>().map_err(|e| err(format!("`{s}`: {e}")));
        out.push((int(f[0])?, float(f[1])?, int(f[2])?, Complex64::new(float(f[3])?, float(f[4])?)));
    }
    Ok(out)
}

pub fn read_capture(text: &str) -> Result<CsiCapture, FormatError> {
    let (head, body) = split(text)?;
    let header: CaptureHeader = toml::from_str(head).map_err(|e| FormatError::Header(e.to_string()))?;
    if header.format != CAPTURE_FORMAT {
        return Err(FormatError::UnsupportedFormat(header.format));
    }
    let m = header.mx * header.my;
    let grouping = Grouping::new(header.groups, header.cpas, m).map_err(|e| FormatError::Header(e.to_string()))?;
    let mut snapshots = DMatrix::zeros(m, header.snapshots);
    let mut timestamps = vec![0.0; header.snapshots];
    let header_lines = head.lines().count();
    for (snap, t, e, v) in parse_records(body, header_lines)? {
        if snap >= header.snapshots || e >= m {
            return Err(FormatError::Record {
                line: header_lines + 2,
                message: format!("snapshot {snap} / element {e} out of range"),
            });
        }
        snapshots[(e, snap)] = v;
        timestamps[snap] = t;
    }
    Ok(CsiCapture {
        array_id: header.array_id,
        mx: header.mx,
        my: header.my,
        spacing: header.spacing_m,
        wavelength: header.wavelength_m,
        grouping,
        snapshots,
        timestamps,
        schedule: header.schedule.map(|s| CaptureSchedule {
            group_order: s.group_order,
            packets_per_group: s.packets_per_group,
            packet_interval: s.packet_interval_s,
        }),
        truth: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BridgeHeader {
    format: String,
    reference_array: usize,
    other_array: usize,
    reference_elements: Vec<usize>,
    other_elements: Vec<usize>,
    snapshots: usize,
}

/// Bridge records use the row index (reference elements first) in place of
/// the element column.
pub fn write_bridge(bridge: &BridgeCapture) -> String {
    let l = &bridge.layout;
    let header = BridgeHeader {
        format: BRIDGE_FORMAT.into(),
        reference_array: l.reference_array,
        other_array: l.other_array,
        reference_elements: l.reference_elements.clone(),
        other_elements: l.other_elements.clone(),
        snapshots: bridge.snapshots.ncols(),
    };
    let mut out = toml::to_string(&header).expect("header serializes");
    out.push_str(SEPARATOR);
    out.push_str("\nsnapshot,timestamp_s,row,re,im\n");
    for c in 0..bridge.snapshots.ncols() {
        for r in 0..bridge.snapshots.nrows() {
            push_record(&mut out, c, bridge.timestamps[c], r, bridge.snapshots[(r, c)]);
        }
    }
    out
}

pub fn read_bridge(text: &str) -> Result<BridgeCapture, FormatError> {
    let (head, body) = split(text)?;
    let h: BridgeHeader = toml::from_str(head).map_err(|e| FormatError::Header(e.to_string()))?;
    if h.format != BRIDGE_FORMAT {
        return Err(FormatError::UnsupportedFormat(h.format));
    }
    let rows = h.reference_elements.len() + h.other_elements.len();
    let mut snapshots = DMatrix::zeros(rows, h.snapshots);
    let mut timestamps = vec![0.0; h.snapshots];
    let header_lines = head.lines().count();
    for (snap, t, r, v) in parse_records(body, header_lines)? {
        if snap >= h.snapshots || r >= rows {
            return Err(FormatError::Record {
                line: header_lines + 2,
                message: format!("snapshot {snap} / row {r} out of range"),
            });
        }
        snapshots[(r, snap)] = v;
        timestamps[snap] = t;
    }
    Ok(BridgeCapture {
        layout: BridgeLayout {
            reference_array: h.reference_array,
            other_array: h.other_array,
            reference_elements: h.reference_elements,
            other_elements: h.other_elements,
        },
        snapshots,
        timestamps,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthSourceRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position_m: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction_deg: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coherence_group: Option<String>,
    pub power: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthImpairments {
    pub pll_phases_rad: [f64; 3],
    pub cable_delays_s: [f64; 3],
    pub cfo_hz: f64,
    pub noise_variance: f64,
}

/// Ground-truth sidecar. Only simulations can produce one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthFile {
    pub simulation_only: bool,
    pub seed: u64,
    pub sources: Vec<TruthSourceRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub impairments: Option<TruthImpairments>,
}

impl TruthFile {
    pub fn new(seed: u64, sources: &[SourceSpec], truth: Option<&GroundTruth>) -> Self {
        Self {
            simulation_only: true,
            seed,
            sources: sources
                .iter()
                .map(|s| {
                    let (position_m, direction_deg) = match s.location {
                        SourceLocation::Position(p) => (Some([p.x, p.y, p.z]), None),
                        SourceLocation::Direction(d) => {
                            let (t, a) = d.to_degrees();
                            (None, Some([t, a]))
                        }
                    };
                    TruthSourceRecord {
                        position_m,
                        direction_deg,
                        coherence_group: s.coherence_group.clone(),
                        power: s.power,
                    }
                })
                .collect(),
            impairments: truth.and_then(|t| t.impairments).map(|i| TruthImpairments {
                pll_phases_rad: i.pll_phases,
                cable_delays_s: i.cable_delays,
                cfo_hz: i.cfo_hz,
                noise_variance: i.noise_variance,
            }),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("truth serializes")
    }
}

/// Degrees rounded to 1e-9 so grid axes print cleanly.
fn deg(rad: f64) -> f64 {
    (rad.to_degrees() * 1e9).round() / 1e9
}

pub fn write_spectrum(spectrum: &SpectrumGrid) -> String {
    let mut out = String::from("theta_deg,phi_deg,value\n");
    for (i, &t) in spectrum.theta.iter().enumerate() {
        let td = deg(t);
        for (j, &p) in spectrum.phi.iter().enumerate() {
            writeln!(out, "{td},{},{}", deg(p), spectrum.values[(i, j)]).expect("write to string");
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakRecord {
    pub array_id: usize,
    pub method: String,
    pub elevation_deg: f64,
    pub azimuth_deg: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakSet {
    pub array_id: usize,
    pub method: String,
    pub shortfall: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PeaksFile {
    pub sets: Vec<PeakSet>,
    pub peaks: Vec<PeakRecord>,
}

impl PeaksFile {
    pub fn add(&mut self, method: &str, array_id: usize, estimates: &[AoaEstimate], shortfall: bool) {
        self.sets.push(PeakSet {
            array_id,
            method: method.into(),
            shortfall,
        });
        for e in estimates {
            let (t, p) = e.direction.to_degrees();
            self.peaks.push(PeakRecord {
                array_id,
                method: method.into(),
                elevation_deg: t,
                azimuth_deg: p,
                value: e.spectrum_value,
            });
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("peaks serialize")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixRecord {
    pub method: String,
    pub position_m: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub converged: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spectrum_peak: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residual_m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth_m: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_m: Option<f64>,
}

fn arr(v: &Vector3<f64>) -> [f64; 3] {
    [v.x, v.y, v.z]
}

impl FixRecord {
    pub fn from_gp(fix: &GeometricFix, truth: Option<Vector3<f64>>) -> Self {
        Self {
            method: "gp".into(),
            position_m: arr(&fix.position),
            iterations: None,
            converged: None,
            spectrum_peak: None,
            residual_m: Some(fix.residual),
            truth_m: truth.as_ref().map(arr),
            error_m: truth.map(|t| (fix.position - t).norm()),
        }
    }

    pub fn from_dpd(fix: &PositionFix, truth: Option<Vector3<f64>>) -> Self {
        Self {
            method: fix.method.name().into(),
            position_m: arr(&fix.position),
            iterations: Some(fix.iterations),
            converged: Some(fix.converged),
            spectrum_peak: Some(fix.spectrum_peak),
            residual_m: None,
            truth_m: truth.as_ref().map(arr),
            error_m: truth.map(|t| (fix.position - t).norm()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FixFile {
    pub fixes: Vec<FixRecord>,
}

impl FixFile {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("fixes serialize")
    }
}

pub fn write_lsoi_spectrum(lsoi: &Lsoi, values: &[f64]) -> String {
    let mut out = String::from("x_m,y_m,z_m,value\n");
    for (p, v) in lsoi.points.iter().zip(values) {
        writeln!(out, "{},{},{},{v}", p.x, p.y, p.z).expect("write to string");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Direction, UraConfig};
    use crate::sim::{
        simulate_switched, HardwareImpairments, SimOptions, SwitchedPlan, DEFAULT_PACKET_INTERVAL,
    };

    fn session() -> crate::sim::SwitchedSession {
        let arrays = [UraConfig::standard(3, 4).unwrap().with_id(0), UraConfig::standard(3, 4).unwrap().with_id(1)];
        let mut imp = HardwareImpairments::none();
        imp.cfo_hz = 700.0;
        imp.noise_variance = 0.1;
        let plan = SwitchedPlan::standard(&arrays, 6, DEFAULT_PACKET_INTERVAL).unwrap();
        let src = [SourceSpec::direction(Direction::from_degrees(30.0, 10.0).unwrap())];
        simulate_switched(&arrays, &src, &imp, &plan, SimOptions::seeded(3)).unwrap()
    }

    #[test]
    fn capture_round_trip_is_exact() {
        let s = session();
        let cap = &s.arrays[0];
        let text = write_capture(cap);
        let back = read_capture(&text).unwrap();
        assert_eq!(back.snapshots, cap.snapshots);
        assert_eq!(back.timestamps, cap.timestamps);
        assert_eq!(back.schedule, cap.schedule);
        assert_eq!(back.grouping, cap.grouping);
        assert_eq!(write_capture(&back), text);

        let bridge = &s.bridges[0];
        let back = read_bridge(&write_bridge(bridge)).unwrap();
        assert_eq!(&back, bridge);
    }

    #[test]
    fn malformed_records_report_line() {
        let text = write_capture(&session().arrays[0]);
        let broken = text.replacen(",0,", ",zz,", 1);
        match read_capture(&broken) {
            Err(FormatError::Record { line, .. }) => assert!(line > 1),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(read_capture("format = 1"), Err(FormatError::MissingSeparator));
    }
}
