//! PII domain model: categories, their character sets, and validated records.
//!
//! The seven categories and the per-category rules (prompt label, charset
//! class, synthesis format, context template) live in a single table file,
//! `data/categories.toml`, embedded at build time and overridable at runtime
//! via [`CategoryTable::from_toml_str`].

use std::collections::BTreeMap;
use std::fmt;

use once_cell::sync::Lazy;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Printable ASCII bounds used as the global overflow guard for perturbation.
pub const PRINTABLE_MIN: u32 = 0x20;
pub const PRINTABLE_MAX: u32 = 0x7E;

/// The seven supported categories of sensitive information.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PiiCategory {
    Ssn,
    BankAccount,
    DriverLicense,
    Phone,
    PhonePassword,
    SshKey,
    Address,
}

impl PiiCategory {
    pub const ALL: [PiiCategory; 7] = [
        PiiCategory::Ssn,
        PiiCategory::BankAccount,
        PiiCategory::DriverLicense,
        PiiCategory::Phone,
        PiiCategory::PhonePassword,
        PiiCategory::SshKey,
        PiiCategory::Address,
    ];

    /// Stable snake_case identifier, matching the dataset JSONL schema.
    pub fn as_str(&self) -> &'static str {
        match self {
            PiiCategory::Ssn => "ssn",
            PiiCategory::BankAccount => "bank_account",
            PiiCategory::DriverLicense => "driver_license",
            PiiCategory::Phone => "phone",
            PiiCategory::PhonePassword => "phone_password",
            PiiCategory::SshKey => "ssh_key",
            PiiCategory::Address => "address",
        }
    }

    pub fn parse(s: &str) -> Option<PiiCategory> {
        PiiCategory::ALL.iter().copied().find(|c| c.as_str() == s)
    }

    /// Human-readable label used inside attack prompts, from the category table.
    pub fn label(&self) -> &'static str {
        &builtin_table().entry(*self).label
    }

    /// The set of permitted code points for values of this category.
    pub fn charset(&self) -> Charset {
        builtin_table().entry(*self).charset
    }
}

impl fmt::Display for PiiCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Character-set classes a category's values may draw from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Charset {
    /// ASCII decimal digits.
    Digits,
    /// ASCII letters and digits.
    Alphanumeric,
    /// Printable ASCII minus control characters, `0x20..=0x7E`.
    Printable,
}

impl Charset {
    pub fn contains(&self, c: char) -> bool {
        match self {
            Charset::Digits => c.is_ascii_digit(),
            Charset::Alphanumeric => c.is_ascii_alphanumeric(),
            Charset::Printable => (PRINTABLE_MIN..=PRINTABLE_MAX).contains(&(c as u32)),
        }
    }

    pub fn contains_all(&self, s: &str) -> bool {
        s.chars().all(|c| self.contains(c))
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PiiError {
    #[error("pii value is empty")]
    EmptyValue,
    #[error("pii value {value:?} is shorter than 2 characters")]
    TooShort { value: String },
    #[error("character {found:?} at position {position} is outside the {category} charset")]
    OutsideCharset {
        category: PiiCategory,
        position: usize,
        found: char,
    },
    #[error("unknown category {0:?}")]
    UnknownCategory(String),
}

/// A validated private string together with its category.
///
/// Construction enforces the category charset and the minimum length of 2
/// required by the perturbation model (the final character is protected, so
/// a 1-character value has no legal noise position).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PiiRecord {
    id: String,
    value: String,
    category: PiiCategory,
}

impl PiiRecord {
    pub fn new(
        id: impl Into<String>,
        value: impl Into<String>,
        category: PiiCategory,
    ) -> Result<Self, PiiError> {
        let id = id.into();
        let value = value.into();
        if value.is_empty() {
            return Err(PiiError::EmptyValue);
        }
        if value.chars().count() < 2 {
            return Err(PiiError::TooShort { value });
        }
        let charset = category.charset();
        if let Some((position, found)) =
            value.chars().enumerate().find(|(_, c)| !charset.contains(*c))
        {
            return Err(PiiError::OutsideCharset {
                category,
                position,
                found,
            });
        }
        Ok(Self {
            id,
            value,
            category,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn value(&self) -> &str {
        &self.value
    }

    pub fn category(&self) -> PiiCategory {
        self.category
    }

    pub fn charset(&self) -> Charset {
        self.category.charset()
    }
}

/// How synthetic values for a category are generated.
#[derive(Debug, Clone, Deserialize)]
pub struct SynthSpec {
    pub kind: SynthKind,
    pub min_len: usize,
    pub max_len: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    Digits,
    Alphanumeric,
    Base64,
    Address,
}

/// One row of the category table.
#[derive(Debug, Clone, Deserialize)]
pub struct CategoryEntry {
    pub label: String,
    pub charset: Charset,
    pub synth: SynthSpec,
    pub context_template: String,
}

/// The full category table, keyed by category.
#[derive(Debug, Clone)]
pub struct CategoryTable {
    entries: BTreeMap<PiiCategory, CategoryEntry>,
}

impl CategoryTable {
    /// Parse a table from TOML text. Every one of the seven categories must
    /// be present.
    pub fn from_toml_str(text: &str) -> Result<Self, PiiError> {
        let raw: BTreeMap<String, CategoryEntry> =
            toml::from_str(text).map_err(|e| PiiError::UnknownCategory(e.to_string()))?;
        let mut entries = BTreeMap::new();
        for (key, entry) in raw {
            let category =
                PiiCategory::parse(&key).ok_or_else(|| PiiError::UnknownCategory(key.clone()))?;
            entries.insert(category, entry);
        }
        for category in PiiCategory::ALL {
            if !entries.contains_key(&category) {
                return Err(PiiError::UnknownCategory(format!(
                    "missing table entry for {category}"
                )));
            }
        }
        Ok(Self { entries })
    }

    pub fn entry(&self, category: PiiCategory) -> &CategoryEntry {
        self.entries
            .get(&category)
            .expect("table validated to contain all categories")
    }
}

const BUILTIN_TABLE_TOML: &str = include_str!("../data/categories.toml");

static BUILTIN_TABLE: Lazy<CategoryTable> = Lazy::new(|| {
    CategoryTable::from_toml_str(BUILTIN_TABLE_TOML).expect("embedded category table is valid")
});

/// The built-in category table embedded from `data/categories.toml`.
pub fn builtin_table() -> &'static CategoryTable {
    &BUILTIN_TABLE
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn category_determines_charset() {
        assert_eq!(PiiCategory::Ssn.charset(), Charset::Digits);
        assert_eq!(PiiCategory::BankAccount.charset(), Charset::Digits);
        assert_eq!(PiiCategory::Phone.charset(), Charset::Digits);
        assert_eq!(PiiCategory::PhonePassword.charset(), Charset::Digits);
        assert_eq!(PiiCategory::DriverLicense.charset(), Charset::Alphanumeric);
        assert_eq!(PiiCategory::SshKey.charset(), Charset::Printable);
        assert_eq!(PiiCategory::Address.charset(), Charset::Printable);
    }

    #[test]
    fn record_rejects_charset_violation() {
        let err = PiiRecord::new("x", "12a456", PiiCategory::Ssn).unwrap_err();
        assert_eq!(
            err,
            PiiError::OutsideCharset {
                category: PiiCategory::Ssn,
                position: 2,
                found: 'a'
            }
        );
    }

    #[test]
    fn record_rejects_short_values() {
        assert_eq!(PiiError::EmptyValue, PiiRecord::new("x", "", PiiCategory::Ssn).unwrap_err());
        assert!(matches!(
            PiiRecord::new("x", "7", PiiCategory::Ssn).unwrap_err(),
            PiiError::TooShort { .. }
        ));
    }

    #[test]
    fn printable_charset_bounds() {
        assert!(Charset::Printable.contains(' '));
        assert!(Charset::Printable.contains('~'));
        assert!(!Charset::Printable.contains('\x1f'));
        assert!(!Charset::Printable.contains('\x7f'));
    }

    #[test]
    fn labels_are_not_substrings_of_each_other() {
        // Prompt category detection relies on label containment checks.
        for a in PiiCategory::ALL {
            for b in PiiCategory::ALL {
                if a != b {
                    assert!(
                        !a.label().contains(b.label()),
                        "{} contains {}",
                        a.label(),
                        b.label()
                    );
                }
            }
        }
    }
}
