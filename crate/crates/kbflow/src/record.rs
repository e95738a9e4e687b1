use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

use crate::config::ExperimentConfig;

/// Replica index used for rows that aggregate over replicas.
pub const AGGREGATE: i64 = -1;

/// Shortest round-trip decimal, switching to exponent form for very small
/// or very large magnitudes.
pub fn format_number(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || !x.is_finite() || (1e-4..1e15).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRow {
    pub t: f64,
    pub replica: i64,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Criterion {
    pub name: String,
    pub observed: f64,
    pub target: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Criterion {
    /// `|observed - target| <= tolerance`.
    pub fn within(name: impl Into<String>, observed: f64, target: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            observed,
            target,
            tolerance,
            pass: (observed - target).abs() <= tolerance,
        }
    }

    /// `observed <= target + tolerance`.
    pub fn at_most(name: impl Into<String>, observed: f64, target: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            observed,
            target,
            tolerance,
            pass: observed <= target + tolerance,
        }
    }

    /// `observed >= target - tolerance`.
    pub fn at_least(name: impl Into<String>, observed: f64, target: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            observed,
            target,
            tolerance,
            pass: observed >= target - tolerance,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub experiment: String,
    pub config: ExperimentConfig,
    #[serde(skip)]
    pub rows: Vec<MetricRow>,
    pub criteria: Vec<Criterion>,
    pub wallclock_s: f64,
}

impl RunRecord {
    pub fn passed(&self) -> bool {
        !self.criteria.is_empty() && self.criteria.iter().all(|c| c.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Criterion> {
        self.criteria.iter().filter(|c| !c.pass)
    }

    /// `t,replica,metric,value` with a header row and LF endings.
    pub fn csv(&self) -> String {
        let mut out = String::with_capacity(32 * (self.rows.len() + 1));
        out.push_str("t,replica,metric,value\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                format_number(r.t),
                r.replica,
                r.metric,
                format_number(r.value)
            );
        }
        out
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("run records serialize") + "\n"
    }

    /// Writes `<dir>/<experiment>.csv` and `<dir>/<experiment>.json`.
    pub fn write(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        let csv = dir.join(format!("{}.csv", self.experiment));
        let json = dir.join(format!("{}.json", self.experiment));
        std::fs::write(&csv, self.csv()).with_context(|| format!("cannot write {}", csv.display()))?;
        std::fs::write(&json, self.summary_json()).with_context(|| format!("cannot write {}", json.display()))?;
        Ok((csv, json))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Experiment;

    fn record() -> RunRecord {
        RunRecord {
            experiment: "metrics-selftest".into(),
            config: ExperimentConfig {
                experiment: Experiment::MetricsSelftest,
                model: None,
                dt: 1.0,
                horizon: 1.0,
                particle_counts: vec![],
                replicas: 1,
                seed: 0,
                out_dir: None,
            },
            rows: vec![
                MetricRow {
                    t: 0.5,
                    replica: 0,
                    metric: "x".into(),
                    value: 1e-12,
                },
                MetricRow {
                    t: 1.0,
                    replica: AGGREGATE,
                    metric: "y".into(),
                    value: -2.0,
                },
            ],
            criteria: vec![Criterion::within("c", 1.0, 1.05, 0.1)],
            wallclock_s: 0.25,
        }
    }

    #[test]
    fn csv_layout() {
        assert_eq!(record().csv(), "t,replica,metric,value\n0.5,0,x,1e-12\n1,-1,y,-2\n");
    }

    #[test]
    fn number_format_round_trips() {
        for x in [0.0, 1.0, -2.5, 1e-12, 3.25e20, 0.1 + 0.2, f64::MIN_POSITIVE] {
            assert_eq!(format_number(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(format_number(f64::NAN), "NaN");
    }

    #[test]
    fn summary_schema() {
        let v: serde_json::Value = serde_json::from_str(&record().summary_json()).unwrap();
        let keys: Vec<&str> = v.as_object().unwrap().keys().map(|k| k.as_str()).collect();
        assert_eq!(keys, ["config", "criteria", "experiment", "wallclock_s"]);
        let c = &v["criteria"][0];
        for k in ["name", "observed", "target", "tolerance", "pass"] {
            assert!(c.get(k).is_some(), "{k}");
        }
        assert_eq!(c["pass"], true);
    }

    #[test]
    fn criterion_relations() {
        assert!(Criterion::within("a", 1.0, 1.2, 0.25).pass);
        assert!(!Criterion::within("a", 1.0, 1.3, 0.25).pass);
        assert!(Criterion::at_most("a", 1.0, 1.0, 0.0).pass);
        assert!(!Criterion::at_least("a", 0.9, 1.0, 0.0).pass);
        assert!(!Criterion::within("a", f64::NAN, 0.0, 1.0).pass);
    }
}
