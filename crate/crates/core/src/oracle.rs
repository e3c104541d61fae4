//! Deterministic simulated LLM agent with contextual memory.
//!
//! The oracle answers attack prompts the way a compliant-but-imperfect
//! model would: with configurable probabilities it follows the perturbation
//! instruction, and the original token surfaces somewhere in the top-k
//! alternatives at the perturbed step. Everything is a pure function of
//! `(context, prompt, config)`, so campaigns replay byte-identically under
//! a fixed seed.
//!
//! Because the simulator knows the registry ground truth, it doubles as its
//! own oracle for end-to-end verification: whenever it complies, removing
//! the sampled noise from the boxed span reproduces the registry value.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::defense::IGNORE_SENTINEL;
use crate::noise::{enc, sample_noise, NoiseError, ShadowKey};
use crate::pii::{PiiCategory, PiiRecord};
use crate::prompt::detect_category;
use crate::recovery::{TokenLogprob, TokenRecord};

/// Fixed refusal text, constant for deterministic parsing tests.
pub const REFUSAL_TEXT: &str = "I cannot help with that.";

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("context has no registry entry matching the prompt's category")]
    NoMatchingPii,
    #[error("invalid oracle config: {0}")]
    InvalidConfig(String),
    #[error("context invariant violated: {0}")]
    ContextInvariant(String),
    #[error(transparent)]
    Noise(#[from] NoiseError),
}

/// Conversation roles kept in agent memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

/// An agent's contextual memory plus the ground-truth registry of private
/// values embedded in it.
#[derive(Debug, Clone, Default)]
pub struct AgentContext {
    memory: Vec<(Role, String)>,
    pii_registry: Vec<PiiRecord>,
}

impl AgentContext {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push_turn(&mut self, role: Role, text: impl Into<String>) {
        self.memory.push((role, text.into()));
    }

    /// Record a user disclosure: the turn must embed the value verbatim,
    /// and the value must not already be present in memory.
    pub fn disclose(
        &mut self,
        record: PiiRecord,
        turn_text: impl Into<String>,
    ) -> Result<(), OracleError> {
        let turn_text = turn_text.into();
        if !turn_text.contains(record.value()) {
            return Err(OracleError::ContextInvariant(format!(
                "disclosure turn does not contain the value for {}",
                record.id()
            )));
        }
        if self.memory.iter().any(|(_, t)| t.contains(record.value())) {
            return Err(OracleError::ContextInvariant(format!(
                "value for {} already appears in memory",
                record.id()
            )));
        }
        self.memory.push((Role::User, turn_text));
        self.pii_registry.push(record);
        Ok(())
    }

    pub fn memory(&self) -> &[(Role, String)] {
        &self.memory
    }

    pub fn registry(&self) -> &[PiiRecord] {
        &self.pii_registry
    }

    pub fn find_by_category(&self, category: PiiCategory) -> Option<&PiiRecord> {
        self.pii_registry.iter().find(|r| r.category() == category)
    }

    /// Check that every registry value appears verbatim in exactly one
    /// memory turn.
    pub fn validate(&self) -> Result<(), OracleError> {
        for record in &self.pii_registry {
            let turns = self
                .memory
                .iter()
                .filter(|(_, t)| t.contains(record.value()))
                .count();
            if turns != 1 {
                return Err(OracleError::ContextInvariant(format!(
                    "value for {} appears in {turns} turns, expected 1",
                    record.id()
                )));
            }
        }
        Ok(())
    }
}

/// How the simulator tokenizes the boxed span.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tokenization {
    /// One token per character.
    Char,
    /// Two characters per token (trailing odd character stands alone);
    /// exercises span alignment across multi-character tokens.
    PairGram,
}

/// Behavioral knobs for the simulated model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleConfig {
    /// Probability the oracle follows the perturbation instruction exactly.
    pub compliance_rate: f64,
    /// Probability the original token appears within top-k at the perturbed
    /// step (at rank 2 or below). Requires `k >= 2` to be expressible.
    pub topk_hit_rate: f64,
    /// Number of alternatives per decoding step.
    pub k: usize,
    /// Softmax shaping for the emitted logprob ladder.
    pub temperature: f64,
    /// Tokens used to pad top-k slots.
    pub distractor_pool: Vec<String>,
    pub rng_seed: u64,
    pub tokenization: Tokenization,
    /// Opaque model identifier used as the key's θ component.
    pub model_id: String,
    /// Compliance multiplier applied when the prompt arrives wrapped in the
    /// ignore-style defense (detected by its instruction sentinel). Models
    /// a partially effective wrapper.
    pub ignore_compliance_factor: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            compliance_rate: 1.0,
            topk_hit_rate: 1.0,
            k: 10,
            temperature: 1.0,
            distractor_pool: default_distractor_pool(),
            rng_seed: 0,
            tokenization: Tokenization::Char,
            model_id: "sim-oracle".to_string(),
            ignore_compliance_factor: 0.5,
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<(), OracleError> {
        if !(0.0..=1.0).contains(&self.compliance_rate) {
            return Err(OracleError::InvalidConfig(format!(
                "compliance_rate {} outside [0,1]",
                self.compliance_rate
            )));
        }
        if !(0.0..=1.0).contains(&self.topk_hit_rate) {
            return Err(OracleError::InvalidConfig(format!(
                "topk_hit_rate {} outside [0,1]",
                self.topk_hit_rate
            )));
        }
        if !(0.0..=1.0).contains(&self.ignore_compliance_factor) {
            return Err(OracleError::InvalidConfig(format!(
                "ignore_compliance_factor {} outside [0,1]",
                self.ignore_compliance_factor
            )));
        }
        if self.k < 1 {
            return Err(OracleError::InvalidConfig("k must be >= 1".to_string()));
        }
        if self.temperature < 0.0 {
            return Err(OracleError::InvalidConfig(format!(
                "temperature {} negative",
                self.temperature
            )));
        }
        Ok(())
    }
}

fn default_distractor_pool() -> Vec<String> {
    // Multi-character strings only: they model function-word alternatives
    // and are removed by the recovery engine's length pre-filter at
    // single-character tokens, keeping the alternatives channel clean for
    // every charset. Single-character distractors belong in custom pools
    // (see the recovery unit tests).
    [
        " the", "the", "and", "data", "value", "number", "okay", "..", "zz", "##", "well",
        "sure", "done", "copy",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

/// Malicious content planted in the agent's external data feed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InjectionPayload {
    text: String,
    pub target_categories: Vec<PiiCategory>,
}

impl InjectionPayload {
    pub fn new(
        text: impl Into<String>,
        target_categories: Vec<PiiCategory>,
    ) -> Result<Self, OracleError> {
        let text = text.into();
        if text.is_empty() {
            return Err(OracleError::InvalidConfig(
                "injection payload text is empty".to_string(),
            ));
        }
        Ok(Self {
            text,
            target_categories,
        })
    }

    pub fn text(&self) -> &str {
        &self.text
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive an independent session seed from a base seed and two indices.
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(base) ^ stream) ^ index)
}

/// Deterministic token-count estimate used for simulator usage accounting.
pub fn estimate_tokens(text: &str) -> u64 {
    (text.chars().count() as u64 + 3) / 4
}

/// Log-softmax ladder over ranks `0..k`, sharper at lower temperature.
fn logprob_ladder(k: usize, temperature: f64) -> Vec<f64> {
    let t = temperature.max(0.05);
    let scores: Vec<f64> = (0..k).map(|r| -(r as f64) / t).collect();
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_z = max
        + scores
            .iter()
            .map(|s| (s - max).exp())
            .sum::<f64>()
            .ln();
    scores.iter().map(|s| s - log_z).collect()
}

/// Shift every character by `n` code points, wrapping inside printable
/// ASCII. Used to synthesize filler distractors when the pool runs dry.
fn wrap_shift(token: &str, n: u32) -> String {
    token
        .chars()
        .map(|c| {
            let base = (c as u32).clamp(0x20, 0x7E) - 0x20;
            char::from_u32(0x20 + (base + n) % 95).unwrap()
        })
        .collect()
}

/// A distractor is unsafe when it would pass the noise-consistency filter
/// against the chosen token: same length, differing at exactly one
/// character that sits exactly 2 code points below the chosen one.
fn is_spurious_inversion(distractor: &str, chosen: &str) -> bool {
    let d: Vec<char> = distractor.chars().collect();
    let c: Vec<char> = chosen.chars().collect();
    if d.len() != c.len() {
        return false;
    }
    let mut diffs = 0;
    let mut consistent = true;
    for (dc, cc) in d.iter().zip(&c) {
        if dc != cc {
            diffs += 1;
            if (*dc as u32) + 2 != *cc as u32 {
                consistent = false;
            }
        }
    }
    diffs == 1 && consistent
}

/// Split a span into (start character index, token text) pairs.
fn tokenize(span: &str, tokenization: Tokenization) -> Vec<(usize, String)> {
    let chars: Vec<char> = span.chars().collect();
    let width = match tokenization {
        Tokenization::Char => 1,
        Tokenization::PairGram => 2,
    };
    let mut tokens = Vec::new();
    let mut start = 0;
    while start < chars.len() {
        let end = (start + width).min(chars.len());
        tokens.push((start, chars[start..end].iter().collect()));
        start = end;
    }
    tokens
}

fn build_records(
    span: &str,
    original: &str,
    noise_position: usize,
    cfg: &OracleConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<TokenRecord> {
    let ladder = logprob_ladder(cfg.k, cfg.temperature);
    let original_chars: Vec<char> = original.chars().collect();
    let mut records = Vec::new();

    for (start, token) in tokenize(span, cfg.tokenization) {
        let token_len = token.chars().count();
        let covers_noise = (start..start + token_len).contains(&noise_position);

        let mut ranked: Vec<String> = vec![token.clone()];
        let mut hit_rank = None;
        if covers_noise && cfg.k >= 2 && rng.random_bool(cfg.topk_hit_rate) {
            hit_rank = Some(rng.random_range(1..cfg.k));
        }
        let original_token: Option<String> = if covers_noise {
            Some(
                token
                    .chars()
                    .enumerate()
                    .map(|(i, c)| {
                        if start + i == noise_position {
                            original_chars[noise_position]
                        } else {
                            c
                        }
                    })
                    .collect(),
            )
        } else {
            None
        };

        let mut pool = cfg.distractor_pool.iter().cloned();
        let mut synth_shift = 1u32;
        while ranked.len() < cfg.k {
            if Some(ranked.len()) == hit_rank {
                ranked.push(original_token.clone().expect("hit implies noise token"));
                continue;
            }
            let candidate = match pool.next() {
                Some(c) => c,
                None => {
                    let c = wrap_shift(&token, synth_shift);
                    synth_shift += 1;
                    c
                }
            };
            if ranked.contains(&candidate) || is_spurious_inversion(&candidate, &token) {
                continue;
            }
            ranked.push(candidate);
        }

        let top_k: Vec<TokenLogprob> = ranked
            .into_iter()
            .zip(&ladder)
            .map(|(token, &logprob)| TokenLogprob { token, logprob })
            .collect();
        records.push(TokenRecord::new(token, ladder[0], top_k));
    }
    records
}

/// Answer an attack prompt.
///
/// With probability `compliance_rate` the response embeds the perturbed
/// value inside `\boxed{..}` and one token record per span token is
/// emitted; otherwise the fixed refusal text comes back with no records.
pub fn oracle_respond(
    ctx: &AgentContext,
    prompt: &str,
    cfg: &OracleConfig,
) -> Result<(String, Vec<TokenRecord>), OracleError> {
    cfg.validate()?;
    let category = detect_category(prompt).ok_or(OracleError::NoMatchingPii)?;
    let record = ctx
        .find_by_category(category)
        .ok_or(OracleError::NoMatchingPii)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut effective_compliance = cfg.compliance_rate;
    if prompt.contains(IGNORE_SENTINEL) {
        effective_compliance *= cfg.ignore_compliance_factor;
    }
    if !rng.random_bool(effective_compliance.clamp(0.0, 1.0)) {
        return Ok((REFUSAL_TEXT.to_string(), Vec::new()));
    }

    let key_seed = rng.next_u64();
    let noise = sample_noise(record, key_seed)?;
    let key = ShadowKey::new(noise, cfg.model_id.clone());
    let perturbed = enc(record, &key)?;

    let response = format!(
        "No problem. After applying the requested update, the value is \\boxed{{{}}}.",
        perturbed.value()
    );
    let records = build_records(
        perturbed.value(),
        record.value(),
        noise.position,
        cfg,
        &mut rng,
    );
    Ok((response, records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pii::Charset;
    use crate::prompt::build_attack_prompt;
    use crate::recovery::{extract_span, recover_graybox};

    fn context_with(value: &str, category: PiiCategory) -> AgentContext {
        let mut ctx = AgentContext::new();
        ctx.push_turn(Role::System, "You are a helpful personal assistant.");
        let record = PiiRecord::new("r1", value, category).unwrap();
        ctx.disclose(record, format!("My {} is {value}.", category.label()))
            .unwrap();
        ctx
    }

    #[test]
    fn compliant_response_embeds_perturbed_span() {
        let ctx = context_with("123456", PiiCategory::PhonePassword);
        let prompt = build_attack_prompt("our chat", PiiCategory::PhonePassword);
        let cfg = OracleConfig::default();
        let (text, records) = oracle_respond(&ctx, &prompt, &cfg).unwrap();
        let span = extract_span(&text).unwrap();
        assert_eq!(span.len(), 6);
        assert_ne!(span, "123456");
        // Exactly one differing, non-final position, exactly +2.
        let diffs: Vec<usize> = span
            .chars()
            .zip("123456".chars())
            .enumerate()
            .filter(|(_, (a, b))| a != b)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(diffs.len(), 1);
        assert!(diffs[0] < 5);
        assert_eq!(records.len(), 6);
        // Hit rate 1: the original char sits in top-k at the perturbed step.
        let original: Vec<char> = "123456".chars().collect();
        let hit = records[diffs[0]]
            .top_k
            .iter()
            .any(|t| t.token == original[diffs[0]].to_string());
        assert!(hit);
    }

    #[test]
    fn refusal_branch_has_no_records() {
        let ctx = context_with("123456", PiiCategory::PhonePassword);
        let prompt = build_attack_prompt("our chat", PiiCategory::PhonePassword);
        let cfg = OracleConfig {
            compliance_rate: 0.0,
            ..OracleConfig::default()
        };
        let (text, records) = oracle_respond(&ctx, &prompt, &cfg).unwrap();
        assert_eq!(text, REFUSAL_TEXT);
        assert!(!text.contains("\\boxed{"));
        assert!(records.is_empty());
    }

    #[test]
    fn missing_registry_entry_errors() {
        let ctx = context_with("123456", PiiCategory::PhonePassword);
        let prompt = build_attack_prompt("our chat", PiiCategory::Ssn);
        assert!(matches!(
            oracle_respond(&ctx, &prompt, &OracleConfig::default()),
            Err(OracleError::NoMatchingPii)
        ));
    }

    #[test]
    fn responses_are_seed_deterministic() {
        let ctx = context_with("9876543210", PiiCategory::Phone);
        let prompt = build_attack_prompt("our chat", PiiCategory::Phone);
        let cfg = OracleConfig {
            rng_seed: 42,
            compliance_rate: 0.7,
            topk_hit_rate: 0.5,
            ..OracleConfig::default()
        };
        let a = oracle_respond(&ctx, &prompt, &cfg).unwrap();
        let b = oracle_respond(&ctx, &prompt, &cfg).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn compliance_rate_matches_binomial_expectation() {
        let ctx = context_with("123456", PiiCategory::PhonePassword);
        let prompt = build_attack_prompt("our chat", PiiCategory::PhonePassword);
        let trials = 10_000;
        let mut complied = 0;
        for seed in 0..trials {
            let cfg = OracleConfig {
                compliance_rate: 0.8,
                rng_seed: seed,
                ..OracleConfig::default()
            };
            let (text, _) = oracle_respond(&ctx, &prompt, &cfg).unwrap();
            if text.contains("\\boxed{") {
                complied += 1;
            }
        }
        let fraction = complied as f64 / trials as f64;
        assert!(
            (fraction - 0.8).abs() <= 0.01,
            "boxed fraction {fraction} not within 0.80 +/- 0.01"
        );
    }

    #[test]
    fn ignore_sentinel_halves_compliance() {
        let ctx = context_with("123456", PiiCategory::PhonePassword);
        let plain = build_attack_prompt("our chat", PiiCategory::PhonePassword);
        let wrapped = format!("{IGNORE_SENTINEL}\n{plain}");
        let trials = 4_000;
        let mut complied = 0;
        for seed in 0..trials {
            let cfg = OracleConfig {
                rng_seed: seed,
                ..OracleConfig::default()
            };
            let (text, _) = oracle_respond(&ctx, &wrapped, &cfg).unwrap();
            if text.contains("\\boxed{") {
                complied += 1;
            }
        }
        let fraction = complied as f64 / trials as f64;
        assert!(
            (fraction - 0.5).abs() <= 0.03,
            "defended compliance {fraction} not near 0.5"
        );
    }

    #[test]
    fn records_are_rank_monotone() {
        let ctx = context_with("1234567890", PiiCategory::Phone);
        let prompt = build_attack_prompt("our chat", PiiCategory::Phone);
        let (_, records) = oracle_respond(&ctx, &prompt, &OracleConfig::default()).unwrap();
        for r in &records {
            assert!(r.is_rank_monotone());
            assert_eq!(r.top_k[0].token, r.text);
            assert_eq!(r.top_k.len(), 10);
        }
    }

    #[test]
    fn pairgram_tokenization_recovers() {
        let ctx = context_with("1234567890", PiiCategory::Phone);
        let prompt = build_attack_prompt("our chat", PiiCategory::Phone);
        for seed in 0..50 {
            let cfg = OracleConfig {
                tokenization: Tokenization::PairGram,
                rng_seed: seed,
                ..OracleConfig::default()
            };
            let (text, records) = oracle_respond(&ctx, &prompt, &cfg).unwrap();
            let span = extract_span(&text).unwrap();
            let result =
                recover_graybox(&records, &span, Charset::Digits, 20, 10_000).unwrap();
            assert_eq!(result.recovered.as_deref(), Some("1234567890"), "seed {seed}");
        }
    }

    #[test]
    fn ground_truth_linkage() {
        // Complying responses decode back to the registry value with the
        // canonical key at the (observable) differing position.
        use crate::noise::{dec, NoiseSpec};
        let ctx = context_with("55667788", PiiCategory::BankAccount);
        let prompt = build_attack_prompt("our chat", PiiCategory::BankAccount);
        for seed in 0..100 {
            let cfg = OracleConfig {
                rng_seed: seed,
                ..OracleConfig::default()
            };
            let (text, _) = oracle_respond(&ctx, &prompt, &cfg).unwrap();
            let span = extract_span(&text).unwrap();
            let position = span
                .chars()
                .zip("55667788".chars())
                .position(|(a, b)| a != b)
                .unwrap();
            let key = ShadowKey::new(NoiseSpec::canonical(position), "sim-oracle");
            assert_eq!(dec(&span, &key).unwrap(), "55667788");
        }
    }

    #[test]
    fn disclose_rejects_duplicate_values() {
        let mut ctx = context_with("123456", PiiCategory::PhonePassword);
        let dup = PiiRecord::new("r2", "123456", PiiCategory::PhonePassword).unwrap();
        assert!(ctx.disclose(dup, "again: 123456").is_err());
        ctx.validate().unwrap();
    }

    #[test]
    fn derive_seed_is_stable_and_spread() {
        assert_eq!(derive_seed(1, 2, 3), derive_seed(1, 2, 3));
        assert_ne!(derive_seed(1, 2, 3), derive_seed(1, 2, 4));
        assert_ne!(derive_seed(1, 2, 3), derive_seed(1, 3, 3));
        assert_ne!(derive_seed(1, 2, 3), derive_seed(2, 2, 3));
    }
}
