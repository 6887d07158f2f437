//! Serializable bound reports and their CSV tables.

use std::fmt::Write as _;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::dynamics::{CompactSet, InvarianceReport, SystemInfo};
use crate::error::Result;
use crate::metric::MetricDescriptor;
use crate::spd::LogSingularVector;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Units {
    BitsPerStep,
    BitsPerTime,
}

impl Units {
    pub fn label(self) -> &'static str {
        match self {
            Units::BitsPerStep => "bits/step",
            Units::BitsPerTime => "bits/time",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointRecord {
    pub state: Vec<f64>,
    /// `log₂ αᵢᴾ` (discrete time) or `ςᵢᴾ` (continuous time).
    pub spectrum: LogSingularVector,
    pub local: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExcludedRecord {
    pub state: Vec<f64>,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefinementStep {
    pub resolution: Vec<usize>,
    pub points: usize,
    pub bound: f64,
}

/// Oracle values stored next to a bound.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleSummary {
    pub resolution: Vec<usize>,
    pub horizons: Vec<f64>,
    pub values: Vec<f64>,
    pub aitken: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub schema_version: u32,
    pub system: SystemInfo,
    pub set: CompactSet,
    /// How the set was chosen.
    #[serde(default)]
    pub set_note: Option<String>,
    pub metric: MetricDescriptor,
    /// `N` for `Pₙ`, `T` for `P_T`.
    #[serde(default)]
    pub horizon: Option<f64>,
    pub resolution: Vec<usize>,
    pub units: Units,
    pub per_point: Vec<PointRecord>,
    pub excluded: Vec<ExcludedRecord>,
    pub bound: f64,
    pub maximizer: Vec<f64>,
    #[serde(default)]
    pub refinement: Vec<RefinementStep>,
    #[serde(default)]
    pub invariance: Option<InvarianceReport>,
    #[serde(default)]
    pub oracle: Option<OracleSummary>,
    #[serde(default)]
    pub seed: Option<u64>,
    pub generated_unix_ms: u64,
}

pub fn unix_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Fixed-width scientific notation with 17 significant digits.
pub fn fmt_num(v: f64) -> String {
    format!("{v:.16e}")
}

impl BoundReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// One row per evaluated point: coordinates, spectrum, local value.
    pub fn points_csv(&self) -> String {
        let n = self.system.dim;
        let mut out = String::new();
        let header: Vec<String> = (0..n)
            .map(|i| format!("x{i}"))
            .chain((0..n).map(|i| format!("s{i}")))
            .chain(std::iter::once("local".to_string()))
            .collect();
        out.push_str(&header.join(","));
        out.push('\n');
        for p in &self.per_point {
            let row: Vec<String> = p
                .state
                .iter()
                .chain(p.spectrum.values())
                .chain(std::iter::once(&p.local))
                .map(|v| fmt_num(*v))
                .collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn write_points_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.points_csv())?;
        Ok(())
    }
}

/// `(horizon, bound, excluded, maximizer…)` table for a sequence of
/// reports.
pub fn sweep_csv(reports: &[BoundReport]) -> String {
    let n = reports.first().map_or(0, |r| r.system.dim);
    let mut out = String::from("horizon,bound,points,excluded");
    for i in 0..n {
        let _ = write!(out, ",max_x{i}");
    }
    out.push('\n');
    for r in reports {
        let _ = write!(
            out,
            "{},{},{},{}",
            r.horizon.map_or_else(|| "nan".to_string(), fmt_num),
            fmt_num(r.bound),
            r.per_point.len(),
            r.excluded.len()
        );
        for v in &r.maximizer {
            let _ = write!(out, ",{}", fmt_num(*v));
        }
        out.push('\n');
    }
    out
}

/// Whether a sequence is nonincreasing up to `slack`.
pub fn nonincreasing(values: &[f64], slack: f64) -> bool {
    values.windows(2).all(|w| w[1] <= w[0] + slack)
}
