//! Character-level perturbation: the noise key, the encode/decode pair,
//! and seeded noise sampling.
//!
//! The canonical noise instance shifts one character by +2 code points,
//! never touches the final character, and preserves length. Shifts are
//! bounded to printable ASCII `0x20..=0x7E`; a shift that would leave the
//! range is an overflow error rather than a wrapped character.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pii::{PiiRecord, PRINTABLE_MAX, PRINTABLE_MIN};

/// The canonical code-point offset.
pub const CANONICAL_DELTA: i32 = 2;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum NoiseError {
    #[error("noise position {position} is out of range for a value of length {len} (last character protected: {protect_last})")]
    InvalidNoisePosition {
        position: usize,
        len: usize,
        protect_last: bool,
    },
    #[error("shifting {from:?} at position {position} by {delta} leaves printable ASCII")]
    CharsetOverflow {
        position: usize,
        from: char,
        delta: i32,
    },
    #[error("no position admits a +{delta} shift inside printable ASCII")]
    NoValidPosition { delta: i32 },
}

/// The perturbation key ω: which position to shift and by how much.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// 0-based index into the value.
    pub position: usize,
    /// Signed code-point offset; canonically +2.
    pub delta: i32,
    /// Whether the final character is out of bounds for perturbation.
    pub protect_last: bool,
    /// Always true in the canonical instance; kept as an explicit parameter.
    pub preserve_length: bool,
}

impl NoiseSpec {
    pub fn canonical(position: usize) -> Self {
        Self {
            position,
            delta: CANONICAL_DELTA,
            protect_last: true,
            preserve_length: true,
        }
    }

    /// Highest legal position for a value of `len` characters.
    fn max_position(&self, len: usize) -> Option<usize> {
        if self.protect_last {
            len.checked_sub(2)
        } else {
            len.checked_sub(1)
        }
    }

    /// Check the position bound against a concrete value.
    pub fn validate_for(&self, value: &str) -> Result<(), NoiseError> {
        let len = value.chars().count();
        match self.max_position(len) {
            Some(max) if self.position <= max => Ok(()),
            _ => Err(NoiseError::InvalidNoisePosition {
                position: self.position,
                len,
                protect_last: self.protect_last,
            }),
        }
    }
}

/// The key `{ω, θ}`: a noise spec plus the opaque model identifier the
/// perturbed value was elicited from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShadowKey {
    pub noise: NoiseSpec,
    pub model_id: String,
}

impl ShadowKey {
    pub fn new(noise: NoiseSpec, model_id: impl Into<String>) -> Self {
        let model_id = model_id.into();
        debug_assert!(!model_id.is_empty(), "model_id must be non-empty");
        Self { noise, model_id }
    }
}

/// A perturbed value `p'` together with the id of the record it came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerturbedPii {
    value: String,
    source_id: String,
}

impl PerturbedPii {
    pub fn value(&self) -> &str {
        &self.value
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }
}

fn shift_char(c: char, delta: i32, position: usize) -> Result<char, NoiseError> {
    let shifted = c as i64 + delta as i64;
    if shifted < PRINTABLE_MIN as i64 || shifted > PRINTABLE_MAX as i64 {
        return Err(NoiseError::CharsetOverflow {
            position,
            from: c,
            delta,
        });
    }
    Ok(char::from_u32(shifted as u32).expect("printable ASCII is valid unicode"))
}

fn shift_at(value: &str, position: usize, delta: i32) -> Result<String, NoiseError> {
    value
        .chars()
        .enumerate()
        .map(|(i, c)| {
            if i == position {
                shift_char(c, delta, position)
            } else {
                Ok(c)
            }
        })
        .collect()
}

/// Encode: apply the key's noise to a record, producing `p'`.
///
/// The output differs from the input at exactly `noise.position` (for a
/// nonzero delta), has identical length, and keeps the final character when
/// the key protects it.
pub fn enc(p: &PiiRecord, key: &ShadowKey) -> Result<PerturbedPii, NoiseError> {
    key.noise.validate_for(p.value())?;
    let value = shift_at(p.value(), key.noise.position, key.noise.delta)?;
    Ok(PerturbedPii {
        value,
        source_id: p.id().to_string(),
    })
}

/// Decode: exact inverse of [`enc`] under the same key.
///
/// Returns the raw shifted string; whether the result satisfies a category
/// charset is the caller's check. A shift outside printable ASCII is still
/// an overflow error.
pub fn dec(p_prime: &str, key: &ShadowKey) -> Result<String, NoiseError> {
    key.noise.validate_for(p_prime)?;
    shift_at(p_prime, key.noise.position, -key.noise.delta)
}

/// Positions of `value` that admit a `+delta` shift inside printable ASCII,
/// with the final character excluded.
pub fn legal_positions(value: &str, delta: i32) -> Vec<usize> {
    let chars: Vec<char> = value.chars().collect();
    if chars.len() < 2 {
        return Vec::new();
    }
    (0..chars.len() - 1)
        .filter(|&i| shift_char(chars[i], delta, i).is_ok())
        .collect()
}

/// Sample a canonical noise spec for a record: position uniform over the
/// legal positions, delta fixed at +2. Pure in `(p, rng_seed)`.
pub fn sample_noise(p: &PiiRecord, rng_seed: u64) -> Result<NoiseSpec, NoiseError> {
    let legal = legal_positions(p.value(), CANONICAL_DELTA);
    if legal.is_empty() {
        return Err(NoiseError::NoValidPosition {
            delta: CANONICAL_DELTA,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let position = legal[rng.random_range(0..legal.len())];
    Ok(NoiseSpec::canonical(position))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pii::PiiCategory;

    fn record(value: &str, category: PiiCategory) -> PiiRecord {
        PiiRecord::new("t", value, category).unwrap()
    }

    fn key(position: usize) -> ShadowKey {
        ShadowKey::new(NoiseSpec::canonical(position), "test-model")
    }

    #[test]
    fn enc_shifts_one_character() {
        let p = record("123456", PiiCategory::PhonePassword);
        let out = enc(&p, &key(2)).unwrap();
        assert_eq!(out.value(), "125456");
        assert_eq!(out.source_id(), "t");
    }

    #[test]
    fn enc_protects_last_character() {
        let p = record("123456", PiiCategory::PhonePassword);
        let err = enc(&p, &key(5)).unwrap_err();
        assert!(matches!(err, NoiseError::InvalidNoisePosition { position: 5, .. }));
    }

    #[test]
    fn enc_rejects_printable_overflow() {
        let p = record("ab}de", PiiCategory::Address);
        let err = enc(&p, &key(2)).unwrap_err();
        assert_eq!(
            err,
            NoiseError::CharsetOverflow {
                position: 2,
                from: '}',
                delta: 2
            }
        );
    }

    #[test]
    fn dec_inverts_enc() {
        assert_eq!(dec("125456", &key(2)).unwrap(), "123456");
    }

    #[test]
    fn dec_returns_raw_shift_for_wrong_position() {
        // '0' - 2 = '.' (0x2E): still printable, so the raw string comes
        // back and charset validation is the caller's job.
        assert_eq!(dec("105456", &key(1)).unwrap(), "1.5456");
    }

    #[test]
    fn dec_overflow_below_printable() {
        let err = dec("!!23", &key(0)).unwrap_err();
        assert!(matches!(err, NoiseError::CharsetOverflow { from: '!', .. }));
    }

    #[test]
    fn zero_delta_is_identity() {
        let mut spec = NoiseSpec::canonical(1);
        spec.delta = 0;
        let k = ShadowKey::new(spec, "m");
        assert_eq!(dec("123456", &k).unwrap(), "123456");
        let p = record("123456", PiiCategory::PhonePassword);
        assert_eq!(enc(&p, &k).unwrap().value(), "123456");
    }

    #[test]
    fn sample_noise_single_legal_position() {
        let p = record("99", PiiCategory::PhonePassword);
        for seed in 0..32 {
            assert_eq!(sample_noise(&p, seed).unwrap().position, 0);
        }
    }

    #[test]
    fn sample_noise_is_seed_deterministic() {
        let p = record("1234567890", PiiCategory::Phone);
        for seed in [0u64, 1, 7, 123_456_789] {
            assert_eq!(sample_noise(&p, seed), sample_noise(&p, seed));
        }
    }

    #[test]
    fn sample_noise_no_valid_position() {
        let p = record("}}1", PiiCategory::Address);
        assert_eq!(
            sample_noise(&p, 0).unwrap_err(),
            NoiseError::NoValidPosition { delta: 2 }
        );
    }

    #[test]
    fn sample_noise_skips_overflow_positions() {
        // Positions 0 and 2 hold '}' (0x7D) which cannot take +2; only
        // position 1 is legal out of {0, 1, 2}.
        let p = record("}a}b", PiiCategory::Address);
        for seed in 0..32 {
            assert_eq!(sample_noise(&p, seed).unwrap().position, 1);
        }
    }

    #[test]
    fn sample_noise_position_distribution_uniform() {
        // chi-squared against uniform over the 5 legal positions of a
        // 6-character digit string; 4 dof, p > 0.01 means stat < 13.277.
        let p = record("123456", PiiCategory::PhonePassword);
        let mut counts = [0usize; 5];
        let trials = 10_000;
        for seed in 0..trials {
            counts[sample_noise(&p, seed as u64).unwrap().position] += 1;
        }
        let expected = trials as f64 / 5.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        assert!(chi2 < 13.277, "chi-squared {chi2} rejects uniformity");
    }
}
