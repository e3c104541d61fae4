//! Dataset ingestion and synthesis.
//!
//! JSONL rows follow the schema `{"id", "category", "context", "pii"}`
//! where `context` is a template with a `{{pii}}` slot. Synthetic corpora
//! are generated per the category table's format specs.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pii::{builtin_table, CategoryTable, PiiCategory, PiiError, PiiRecord, SynthKind};

pub const PII_PLACEHOLDER: &str = "{{pii}}";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}: invalid JSON: {message}")]
    ParseError { line: usize, message: String },
    #[error("line {line}: {reason}")]
    SchemaError { line: usize, reason: String },
}

/// One dataset row: a context template plus the private value planted in it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetRow {
    pub id: String,
    pub category: PiiCategory,
    pub context_template: String,
    pub pii: PiiRecord,
}

impl DatasetRow {
    pub fn new(
        id: impl Into<String>,
        context_template: impl Into<String>,
        pii: PiiRecord,
    ) -> Result<Self, PiiError> {
        let row = Self {
            id: id.into(),
            category: pii.category(),
            context_template: context_template.into(),
            pii,
        };
        row.check_template()
            .map_err(|reason| PiiError::UnknownCategory(reason))?;
        Ok(row)
    }

    fn check_template(&self) -> Result<(), String> {
        let slots = self.context_template.matches(PII_PLACEHOLDER).count();
        if slots != 1 {
            return Err(format!(
                "context template must contain {PII_PLACEHOLDER} exactly once (found {slots})"
            ));
        }
        let rendered = self.render();
        let occurrences = rendered.matches(self.pii.value()).count();
        if occurrences != 1 {
            return Err(format!(
                "rendered context contains the value {occurrences} times, expected 1"
            ));
        }
        Ok(())
    }

    /// Substitute the value into the context template.
    pub fn render(&self) -> String {
        self.context_template
            .replace(PII_PLACEHOLDER, self.pii.value())
    }
}

/// Wire shape of one JSONL row.
#[derive(Debug, Serialize, Deserialize)]
struct RawRow {
    id: String,
    category: String,
    context: String,
    pii: String,
}

/// A non-fatal problem found while loading.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineIssue {
    pub line: usize,
    pub message: String,
}

/// Loaded rows plus any skipped-line diagnostics.
#[derive(Debug)]
pub struct LoadReport {
    pub rows: Vec<DatasetRow>,
    pub issues: Vec<LineIssue>,
}

fn parse_row(raw: RawRow, line: usize) -> Result<DatasetRow, DatasetError> {
    let category = PiiCategory::parse(&raw.category).ok_or(DatasetError::SchemaError {
        line,
        reason: format!("unknown category {:?}", raw.category),
    })?;
    let pii =
        PiiRecord::new(raw.id.clone(), raw.pii, category).map_err(|e| DatasetError::SchemaError {
            line,
            reason: e.to_string(),
        })?;
    DatasetRow::new(raw.id, raw.context, pii).map_err(|e| DatasetError::SchemaError {
        line,
        reason: e.to_string(),
    })
}

/// Load a JSONL dataset. Under `strict` the first invalid row aborts;
/// otherwise invalid rows are skipped and reported with their line numbers.
/// An empty file yields an empty row list with a warning issue.
pub fn load_jsonl(path: &Path, strict: bool) -> Result<LoadReport, DatasetError> {
    let file = fs::File::open(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let reader = BufReader::new(file);
    let mut rows = Vec::new();
    let mut issues = Vec::new();
    let mut saw_line = false;

    for (idx, line_result) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line_result.map_err(|source| DatasetError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        saw_line = true;
        let parsed: Result<DatasetRow, DatasetError> = serde_json::from_str::<RawRow>(&line)
            .map_err(|e| DatasetError::ParseError {
                line: line_no,
                message: e.to_string(),
            })
            .and_then(|raw| parse_row(raw, line_no));
        match parsed {
            Ok(row) => rows.push(row),
            Err(err) => {
                if strict {
                    return Err(err);
                }
                issues.push(LineIssue {
                    line: line_no,
                    message: err.to_string(),
                });
            }
        }
    }
    if !saw_line {
        issues.push(LineIssue {
            line: 0,
            message: "dataset file is empty".to_string(),
        });
    }
    Ok(LoadReport { rows, issues })
}

/// Serialize rows back to JSONL text.
pub fn to_jsonl(rows: &[DatasetRow]) -> String {
    let mut out = String::new();
    for row in rows {
        let raw = RawRow {
            id: row.id.clone(),
            category: row.category.as_str().to_string(),
            context: row.context_template.clone(),
            pii: row.pii.value().to_string(),
        };
        out.push_str(&serde_json::to_string(&raw).expect("row serializes"));
        out.push('\n');
    }
    out
}

const BASE64_ALPHABET: &[u8] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
const ADDRESS_ALPHABET: &[u8] =
    b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789 .,-";
const ALNUM_ALPHABET: &[u8] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";

fn synth_value(kind: SynthKind, len: usize, rng: &mut ChaCha8Rng) -> String {
    let alphabet: &[u8] = match kind {
        SynthKind::Digits => b"0123456789",
        SynthKind::Alphanumeric => ALNUM_ALPHABET,
        SynthKind::Base64 => BASE64_ALPHABET,
        SynthKind::Address => ADDRESS_ALPHABET,
    };
    let mut value: String = (0..len)
        .map(|_| alphabet[rng.random_range(0..alphabet.len())] as char)
        .collect();
    // Keep printable values tidy at the edges so context embedding stays
    // unambiguous.
    if matches!(kind, SynthKind::Address) {
        let inner: Vec<char> = value.chars().collect();
        let first = inner[0];
        let last = inner[len - 1];
        if !first.is_ascii_alphanumeric() || !last.is_ascii_alphanumeric() {
            let mut chars = inner;
            if !first.is_ascii_alphanumeric() {
                chars[0] = 'A';
            }
            if !last.is_ascii_alphanumeric() {
                chars[len - 1] = '9';
            }
            value = chars.into_iter().collect();
        }
    }
    value
}

/// Generate a deterministic synthetic corpus with the requested number of
/// rows per category, using the built-in category table.
pub fn synth_corpus(mix: &BTreeMap<PiiCategory, usize>, seed: u64) -> Vec<DatasetRow> {
    synth_corpus_with_table(builtin_table(), mix, seed)
}

/// As [`synth_corpus`], against a caller-supplied category table.
pub fn synth_corpus_with_table(
    table: &CategoryTable,
    mix: &BTreeMap<PiiCategory, usize>,
    seed: u64,
) -> Vec<DatasetRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for (&category, &count) in mix {
        let entry = table.entry(category);
        for i in 0..count {
            let len = if entry.synth.min_len == entry.synth.max_len {
                entry.synth.min_len
            } else {
                rng.random_range(entry.synth.min_len..=entry.synth.max_len)
            };
            let value = synth_value(entry.synth.kind, len, &mut rng);
            let id = format!("{category}-{i:04}");
            let pii = PiiRecord::new(id.clone(), value, category)
                .expect("synthesized value satisfies its category charset");
            let row = DatasetRow::new(id, entry.context_template.clone(), pii)
                .expect("category context template embeds the value once");
            rows.push(row);
        }
    }
    rows
}

/// The default desk-scale corpus: 80 rows for each of the 7 categories.
pub fn default_corpus(seed: u64) -> Vec<DatasetRow> {
    let mix: BTreeMap<PiiCategory, usize> =
        PiiCategory::ALL.iter().map(|&c| (c, 80)).collect();
    synth_corpus(&mix, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn synth_is_deterministic() {
        let mix: BTreeMap<PiiCategory, usize> = [(PiiCategory::Ssn, 2)].into_iter().collect();
        let a = synth_corpus(&mix, 7);
        let b = synth_corpus(&mix, 7);
        assert_eq!(a, b);
        assert_eq!(a.len(), 2);
        for row in &a {
            assert_eq!(row.pii.value().len(), 9);
            assert!(row.pii.value().chars().all(|c| c.is_ascii_digit()));
        }
        let c = synth_corpus(&mix, 8);
        assert_ne!(a, c);
    }

    #[test]
    fn synth_category_formats() {
        let mix: BTreeMap<PiiCategory, usize> =
            PiiCategory::ALL.iter().map(|&c| (c, 5)).collect();
        let rows = synth_corpus(&mix, 3);
        for row in &rows {
            let len = row.pii.value().chars().count();
            match row.category {
                PiiCategory::Ssn => assert_eq!(len, 9),
                PiiCategory::BankAccount => assert!((10..=12).contains(&len)),
                PiiCategory::DriverLicense => assert_eq!(len, 8),
                PiiCategory::Phone => assert_eq!(len, 10),
                PiiCategory::PhonePassword => assert_eq!(len, 6),
                PiiCategory::SshKey => assert_eq!(len, 32),
                PiiCategory::Address => assert!((20..=40).contains(&len)),
            }
            assert!(len >= 2);
            assert!(row.pii.charset().contains_all(row.pii.value()));
        }
    }

    #[test]
    fn default_corpus_is_paper_scale() {
        assert_eq!(default_corpus(0).len(), 560);
    }

    #[test]
    fn rendered_context_contains_value_once() {
        for row in default_corpus(1) {
            let rendered = row.render();
            assert_eq!(rendered.matches(row.pii.value()).count(), 1, "{}", row.id);
        }
    }

    #[test]
    fn load_well_formed_file() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, r#"{{"id":"a","category":"ssn","context":"my ssn is {{{{pii}}}}","pii":"123456789"}}"#).unwrap();
        writeln!(f, r#"{{"id":"b","category":"phone","context":"call {{{{pii}}}}","pii":"5551234567"}}"#).unwrap();
        writeln!(f, r#"{{"id":"c","category":"address","context":"ship to {{{{pii}}}}","pii":"12 Elm Street Apt 9"}}"#).unwrap();
        let report = load_jsonl(f.path(), true).unwrap();
        assert_eq!(report.rows.len(), 3);
        assert!(report.issues.is_empty());
    }

    #[test]
    fn load_rejects_charset_violation_in_strict_mode() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, r#"{{"id":"a","category":"ssn","context":"my ssn is {{{{pii}}}}","pii":"12345678X"}}"#).unwrap();
        let err = load_jsonl(f.path(), true).unwrap_err();
        match err {
            DatasetError::SchemaError { line, .. } => assert_eq!(line, 1),
            other => panic!("expected SchemaError, got {other:?}"),
        }
    }

    #[test]
    fn load_skips_bad_rows_in_lenient_mode() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, r#"{{"id":"a","category":"ssn","context":"ok {{{{pii}}}}","pii":"123456789"}}"#).unwrap();
        writeln!(f, "not json at all").unwrap();
        let report = load_jsonl(f.path(), false).unwrap();
        assert_eq!(report.rows.len(), 1);
        assert_eq!(report.issues.len(), 1);
        assert_eq!(report.issues[0].line, 2);
    }

    #[test]
    fn load_empty_file_warns() {
        let f = tempfile::NamedTempFile::new().unwrap();
        let report = load_jsonl(f.path(), true).unwrap();
        assert!(report.rows.is_empty());
        assert_eq!(report.issues.len(), 1);
    }

    #[test]
    fn jsonl_roundtrip_is_stable() {
        let rows = default_corpus(5);
        let text = to_jsonl(&rows);
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        let report = load_jsonl(f.path(), true).unwrap();
        assert_eq!(report.rows, rows);
        assert_eq!(to_jsonl(&report.rows), text);
    }
}
