//! Error summaries and stage timings.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

/// Nearest-rank percentile: the value at rank `ceil(p/100 · n)` of the
/// sorted list (rank 1 for `p = 0`).
pub fn nearest_rank(values: &[f64], p: f64) -> Option<f64> {
    if values.is_empty() || !(0.0..=100.0).contains(&p) {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    Some(sorted[rank.min(sorted.len()) - 1])
}

pub fn median(values: &[f64]) -> Option<f64> {
    nearest_rank(values, 50.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorSeries {
    pub name: String,
    pub unit: String,
    pub count: usize,
    pub p50: f64,
    pub p90: f64,
    pub values: Vec<f64>,
}

impl ErrorSeries {
    pub fn new(name: impl Into<String>, unit: impl Into<String>, values: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            unit: unit.into(),
            count: values.len(),
            p50: nearest_rank(&values, 50.0).unwrap_or(f64::NAN),
            p90: nearest_rank(&values, 90.0).unwrap_or(f64::NAN),
            values,
        }
    }
}

/// Error series of one command. Timings are kept apart so that the
/// numerical report is reproducible byte for byte.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    pub command: String,
    pub seed: u64,
    pub series: Vec<ErrorSeries>,
}

impl MetricsReport {
    pub fn new(command: impl Into<String>, seed: u64) -> Self {
        Self {
            command: command.into(),
            seed,
            series: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, unit: impl Into<String>, values: Vec<f64>) {
        self.series.push(ErrorSeries::new(name, unit, values));
    }

    pub fn get(&self, name: &str) -> Option<&ErrorSeries> {
        self.series.iter().find(|s| s.name == name)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("report serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub runs: usize,
    pub median_s: f64,
    pub min_s: f64,
    pub max_s: f64,
}

/// Wall-clock samples per named stage, in first-seen order.
#[derive(Debug, Clone, Default)]
pub struct Timings {
    stages: Vec<(String, Vec<f64>)>,
}

impl Timings {
    pub fn record(&mut self, stage: &str, elapsed: Duration) {
        let secs = elapsed.as_secs_f64();
        match self.stages.iter_mut().find(|(s, _)| s == stage) {
            Some((_, v)) => v.push(secs),
            None => self.stages.push((stage.to_string(), vec![secs])),
        }
    }

    pub fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.record(stage, start.elapsed());
        out
    }

    pub fn summary(&self) -> Vec<StageTiming> {
        self.stages
            .iter()
            .map(|(stage, v)| StageTiming {
                stage: stage.clone(),
                runs: v.len(),
                median_s: median(v).unwrap_or(0.0),
                min_s: v.iter().copied().fold(f64::INFINITY, f64::min),
                max_s: v.iter().copied().fold(0.0, f64::max),
            })
            .collect()
    }

    pub fn to_toml(&self) -> String {
        #[derive(Serialize)]
        struct Doc {
            stages: Vec<StageTiming>,
        }
        toml::to_string(&Doc { stages: self.summary() }).expect("timings serialize")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank_by_hand() {
        let v = [15.0, 20.0, 35.0, 40.0, 50.0];
        assert_eq!(nearest_rank(&v, 5.0), Some(15.0));
        assert_eq!(nearest_rank(&v, 30.0), Some(20.0));
        assert_eq!(nearest_rank(&v, 40.0), Some(20.0));
        assert_eq!(nearest_rank(&v, 50.0), Some(35.0));
        assert_eq!(nearest_rank(&v, 100.0), Some(50.0));
        assert_eq!(median(&[3.0, 1.0, 4.0, 2.0]), Some(2.0));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn report_summaries() {
        let mut r = MetricsReport::new("locate", 3);
        r.push("dpd_3d", "m", vec![0.3, 0.1, 0.2]);
        let s = r.get("dpd_3d").unwrap();
        assert_eq!((s.count, s.p50, s.p90), (3, 0.2, 0.3));
        let back: MetricsReport = toml::from_str(&r.to_toml()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn timings_collect_per_stage() {
        let mut t = Timings::default();
        t.record("aoa", Duration::from_millis(30));
        t.record("aoa", Duration::from_millis(10));
        t.record("dpd", Duration::from_millis(5));
        let s = t.summary();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].runs, 2);
        assert!((s[0].median_s - 0.01).abs() < 1e-12);
    }
}
