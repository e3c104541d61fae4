//! Versioned campaign report schema and JSON IO.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::client::UsageSnapshot;
use crate::defense::DefenseKind;
use crate::metrics::{LeakageFit, TokenSummary, REFERENCE_BITS_PER_QUERY};
use crate::pipeline::Mode;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        source: serde_json::Error,
    },
    #[error("{path}: schema version {found}, expected {expected}")]
    SchemaVersionMismatch {
        path: String,
        found: u32,
        expected: u32,
    },
}

/// Leakage-fit block of the report, with the reference-bound flag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeakageReport {
    pub slope: f64,
    pub bits_per_query: f64,
    pub r2: f64,
    /// True when the fit exceeds the reference bound of 1.5 bits/query.
    pub flagged: bool,
}

impl From<LeakageFit> for LeakageReport {
    fn from(fit: LeakageFit) -> Self {
        LeakageReport {
            slope: fit.slope,
            bits_per_query: fit.bits_per_query,
            r2: fit.r2,
            flagged: fit.bits_per_query > REFERENCE_BITS_PER_QUERY,
        }
    }
}

/// Final campaign summary written next to the outcome stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub model: String,
    pub mode: Mode,
    pub defense: DefenseKind,
    pub targets: usize,
    pub attempts_per_target: usize,
    pub lambda: usize,
    pub temperature: f64,
    pub top_logprobs: u8,
    pub seed: u64,
    /// pass@k keyed by k.
    pub pass_at_k: BTreeMap<usize, f64>,
    pub enq_mean: f64,
    pub tokens: TokenSummary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leakage: Option<LeakageReport>,
    /// Session ledger totals; present for live-endpoint campaigns.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<UsageSnapshot>,
}

pub fn write_report(path: &Path, report: &Report) -> Result<(), ReportError> {
    let text = serde_json::to_string_pretty(report).map_err(|source| ReportError::Json {
        path: path.display().to_string(),
        source,
    })?;
    fs::write(path, text + "\n").map_err(|source| ReportError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_report(path: &Path) -> Result<Report, ReportError> {
    let text = fs::read_to_string(path).map_err(|source| ReportError::Io {
        path: path.display().to_string(),
        source,
    })?;
    // Check the version before committing to the full schema so mismatched
    // files are named precisely.
    #[derive(Deserialize)]
    struct VersionProbe {
        schema_version: u32,
    }
    let probe: VersionProbe =
        serde_json::from_str(&text).map_err(|source| ReportError::Json {
            path: path.display().to_string(),
            source,
        })?;
    if probe.schema_version != REPORT_SCHEMA_VERSION {
        return Err(ReportError::SchemaVersionMismatch {
            path: path.display().to_string(),
            found: probe.schema_version,
            expected: REPORT_SCHEMA_VERSION,
        });
    }
    serde_json::from_str(&text).map_err(|source| ReportError::Json {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_report() -> Report {
        Report {
            schema_version: REPORT_SCHEMA_VERSION,
            model: "sim-oracle".into(),
            mode: Mode::Blackbox,
            defense: DefenseKind::None,
            targets: 10,
            attempts_per_target: 5,
            lambda: 20,
            temperature: 1.0,
            top_logprobs: 10,
            seed: 7,
            pass_at_k: [(1, 0.8), (5, 1.0)].into_iter().collect(),
            enq_mean: 3.2,
            tokens: TokenSummary {
                mean: 120.0,
                total: 6000,
            },
            leakage: None,
            usage: None,
        }
    }

    #[test]
    fn report_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.json");
        let report = sample_report();
        write_report(&path, &report).unwrap();
        assert_eq!(read_report(&path).unwrap(), report);
    }

    #[test]
    fn version_mismatch_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("old.json");
        let mut report = sample_report();
        report.schema_version = 99;
        let text = serde_json::to_string(&report).unwrap();
        fs::write(&path, text).unwrap();
        match read_report(&path) {
            Err(ReportError::SchemaVersionMismatch { path: p, found, expected }) => {
                assert!(p.ends_with("old.json"));
                assert_eq!(found, 99);
                assert_eq!(expected, REPORT_SCHEMA_VERSION);
            }
            other => panic!("expected mismatch, got {other:?}"),
        }
    }

    #[test]
    fn leakage_flagging_from_fit() {
        let fit = LeakageFit {
            slope: -1.7,
            intercept: 0.0,
            bits_per_query: 1.7,
            r2: 0.99,
        };
        let report: LeakageReport = fit.into();
        assert!(report.flagged);
    }
}
