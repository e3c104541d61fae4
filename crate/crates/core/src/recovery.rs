//! Information recovery from attack responses.
//!
//! Two engines share the extraction front end:
//!
//! * **Black-box**: no token-level signal is available, so every legal
//!   position inversion of the extracted span is enumerated into a small
//!   candidate set.
//! * **Gray-box**: top-k alternatives at each decoding step induce a
//!   candidate space (the product of per-token shadow vectors); filtering
//!   plus per-position code-point minimisation removes the injected noise
//!   in a single pass.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pii::Charset;

/// Default candidate trial budget λ.
pub const DEFAULT_BUDGET: usize = 20;
/// Default cap on lazily enumerated product candidates.
pub const DEFAULT_PRODUCT_CAP: usize = 10_000;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RecoveryError {
    #[error("response contains no \\boxed{{..}} span")]
    SpanNotFound,
    #[error("every position inversion leaves the charset")]
    EmptyCandidateSet,
    #[error("token concatenation {concatenated:?} does not reproduce the span {expected:?}")]
    SpanMismatch {
        concatenated: String,
        expected: String,
    },
}

/// One decoding step: the emitted token plus its ranked alternatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenRecord {
    pub text: String,
    pub logprob: f64,
    pub top_k: Vec<TokenLogprob>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogprob {
    pub token: String,
    pub logprob: f64,
}

impl TokenRecord {
    pub fn new(text: impl Into<String>, logprob: f64, top_k: Vec<TokenLogprob>) -> Self {
        Self {
            text: text.into(),
            logprob,
            top_k,
        }
    }

    /// Insert the chosen token at rank 0 when the provider omitted it from
    /// the alternatives list.
    pub fn normalized(mut self) -> Self {
        if !self.top_k.iter().any(|t| t.token == self.text) {
            self.top_k.insert(
                0,
                TokenLogprob {
                    token: self.text.clone(),
                    logprob: self.logprob,
                },
            );
        }
        self
    }

    /// Whether logprobs are non-increasing down the list.
    pub fn is_rank_monotone(&self) -> bool {
        self.top_k.windows(2).all(|w| w[0].logprob >= w[1].logprob)
    }
}

/// The ordered alternative tokens observed at one step of the span.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShadowVector {
    pub position: usize,
    pub alternatives: Vec<String>,
}

impl ShadowVector {
    /// Build from a record, deduplicating while preserving rank order. The
    /// chosen token is guaranteed present.
    pub fn from_record(record: &TokenRecord, position: usize) -> Self {
        let mut seen = HashSet::new();
        let mut alternatives: Vec<String> = record
            .top_k
            .iter()
            .filter(|t| seen.insert(t.token.clone()))
            .map(|t| t.token.clone())
            .collect();
        if alternatives.is_empty() || !alternatives.iter().any(|t| t == &record.text) {
            alternatives.insert(0, record.text.clone());
        }
        Self {
            position,
            alternatives,
        }
    }
}

/// Where a candidate came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    PositionInversion,
    ShadowProduct,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub value: String,
    pub score: f64,
    pub provenance: Provenance,
}

/// An ordered, budget-truncated set of recovery candidates.
///
/// Order is score-descending with lexicographic tie-break, so equal-score
/// sets enumerate deterministically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    candidates: Vec<Candidate>,
    budget: usize,
}

impl CandidateSet {
    pub fn new(mut candidates: Vec<Candidate>, budget: usize) -> Self {
        candidates.sort_by(compare_candidates);
        candidates.truncate(budget);
        Self { candidates, budget }
    }

    pub fn candidates(&self) -> &[Candidate] {
        &self.candidates
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn values(&self) -> impl Iterator<Item = &str> {
        self.candidates.iter().map(|c| c.value.as_str())
    }

    /// 1-based rank of a value, if present.
    pub fn rank_of(&self, value: &str) -> Option<usize> {
        self.candidates
            .iter()
            .position(|c| c.value == value)
            .map(|i| i + 1)
    }
}

fn compare_candidates(a: &Candidate, b: &Candidate) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.value.cmp(&b.value))
}

/// Ranking priors for candidate enumeration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankPrior {
    Uniform,
    Logprob,
}

/// Re-sort a candidate set under the chosen prior. Uniform ignores scores
/// entirely (pure lexicographic order); logprob keeps score-descending
/// order with the lexicographic tie-break.
pub fn rank_candidates(cs: &CandidateSet, prior: RankPrior) -> CandidateSet {
    let mut candidates = cs.candidates.clone();
    match prior {
        RankPrior::Uniform => candidates.sort_by(|a, b| a.value.cmp(&b.value)),
        RankPrior::Logprob => candidates.sort_by(compare_candidates),
    }
    CandidateSet {
        candidates,
        budget: cs.budget,
    }
}

/// Result of a gray-box recovery pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryResult {
    pub recovered: Option<String>,
    pub candidate_set: CandidateSet,
    pub attempts_used: usize,
}

const BOXED_OPEN: &str = "\\boxed{";

/// Pull the contents of the first `\boxed{..}` delimiter out of a response,
/// whitespace-trimmed. Brace-balanced, so nested braces inside the span
/// survive. Absence of the delimiter signals refusal or non-compliance.
pub fn extract_span(response_text: &str) -> Result<String, RecoveryError> {
    let start = response_text
        .find(BOXED_OPEN)
        .ok_or(RecoveryError::SpanNotFound)?;
    let body = &response_text[start + BOXED_OPEN.len()..];
    let mut depth = 1usize;
    for (i, c) in body.char_indices() {
        match c {
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Ok(body[..i].trim().to_string());
                }
            }
            _ => {}
        }
    }
    Err(RecoveryError::SpanNotFound)
}

fn shift_down_two(c: char) -> Option<char> {
    let code = (c as u32).checked_sub(2)?;
    char::from_u32(code)
}

/// Black-box recovery: invert the +2 noise at every non-final position,
/// keep the inversions that stay inside the charset, and return them as an
/// equal-score candidate set (lexicographic order, truncated to `budget`).
///
/// The set has at most `len(p') - 1` members before truncation.
pub fn recover_blackbox(
    p_prime: &str,
    charset: Charset,
    budget: usize,
) -> Result<CandidateSet, RecoveryError> {
    let chars: Vec<char> = p_prime.chars().collect();
    let mut candidates = Vec::new();
    if chars.len() >= 2 {
        for i in 0..chars.len() - 1 {
            let Some(inverted) = shift_down_two(chars[i]) else {
                continue;
            };
            let mut candidate = chars.clone();
            candidate[i] = inverted;
            let value: String = candidate.into_iter().collect();
            if charset.contains_all(&value) {
                candidates.push(Candidate {
                    value,
                    score: 0.0,
                    provenance: Provenance::PositionInversion,
                });
            }
        }
    }
    if candidates.is_empty() {
        return Err(RecoveryError::EmptyCandidateSet);
    }
    Ok(CandidateSet::new(candidates, budget))
}

/// A per-position list of filtered (token, logprob) alternatives, sorted
/// descending by logprob for best-first product enumeration.
struct ScoredVector {
    entries: Vec<(String, f64)>,
}

#[derive(PartialEq)]
struct ProductState {
    score: f64,
    indices: Vec<usize>,
}

impl Eq for ProductState {}

impl Ord for ProductState {
    fn cmp(&self, other: &Self) -> Ordering {
        // Max-heap on score; lexicographically smaller index vector wins
        // ties so enumeration order is deterministic.
        self.score
            .total_cmp(&other.score)
            .then_with(|| other.indices.cmp(&self.indices))
    }
}

impl PartialOrd for ProductState {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Lazily enumerate the Cartesian product of scored vectors in descending
/// joint-logprob order, yielding at most `cap` strings.
fn descending_product(vectors: &[ScoredVector], cap: usize) -> Vec<(String, f64)> {
    if vectors.is_empty() || vectors.iter().any(|v| v.entries.is_empty()) {
        return Vec::new();
    }
    let mut heap = BinaryHeap::new();
    let mut visited: HashSet<Vec<usize>> = HashSet::new();
    let root = vec![0usize; vectors.len()];
    let root_score: f64 = vectors.iter().map(|v| v.entries[0].1).sum();
    visited.insert(root.clone());
    heap.push(ProductState {
        score: root_score,
        indices: root,
    });

    let mut out = Vec::new();
    while let Some(state) = heap.pop() {
        let value: String = state
            .indices
            .iter()
            .zip(vectors)
            .map(|(&i, v)| v.entries[i].0.as_str())
            .collect();
        out.push((value, state.score));
        if out.len() >= cap {
            break;
        }
        for dim in 0..vectors.len() {
            let next_index = state.indices[dim] + 1;
            if next_index >= vectors[dim].entries.len() {
                continue;
            }
            let mut indices = state.indices.clone();
            indices[dim] = next_index;
            if visited.insert(indices.clone()) {
                let score = state.score - vectors[dim].entries[next_index - 1].1
                    + vectors[dim].entries[next_index].1;
                heap.push(ProductState { score, indices });
            }
        }
    }
    out
}

/// Whether `candidate` is consistent with being `p_prime` before the noise
/// was applied: identical, or lower by exactly 2 code points at exactly one
/// position.
fn noise_consistent(candidate: &[char], p_prime: &[char]) -> bool {
    if candidate.len() != p_prime.len() {
        return false;
    }
    let mut diffs = 0;
    for (c, p) in candidate.iter().zip(p_prime) {
        if c != p {
            diffs += 1;
            if diffs > 1 || (*c as u32) + 2 != *p as u32 {
                return false;
            }
        }
    }
    true
}

/// Gray-box recovery over one extracted span.
///
/// Steps: per-token filtering of alternatives (equal character length, all
/// characters in the charset), best-first capped product enumeration,
/// noise-consistency filtering of whole candidate strings, then
/// per-position code-point minimisation across survivors and the span
/// itself. The minimised composite is the recovered value; survivors plus
/// the composite form the candidate set, joint-logprob scored.
pub fn recover_graybox(
    records: &[TokenRecord],
    p_prime: &str,
    charset: Charset,
    budget: usize,
    product_cap: usize,
) -> Result<RecoveryResult, RecoveryError> {
    let concatenated: String = records.iter().map(|r| r.text.as_str()).collect();
    if concatenated != p_prime {
        return Err(RecoveryError::SpanMismatch {
            concatenated,
            expected: p_prime.to_string(),
        });
    }

    let vectors: Vec<ScoredVector> = records
        .iter()
        .map(|record| {
            let chosen_len = record.text.chars().count();
            let mut seen = HashSet::new();
            let mut entries: Vec<(String, f64)> = record
                .top_k
                .iter()
                .filter(|t| {
                    t.token.chars().count() == chosen_len
                        && charset.contains_all(&t.token)
                        && seen.insert(t.token.clone())
                })
                .map(|t| (t.token.clone(), t.logprob))
                .collect();
            // Stable by logprob so rank order survives equal scores.
            entries.sort_by(|a, b| b.1.total_cmp(&a.1));
            ScoredVector { entries }
        })
        .collect();

    let p_chars: Vec<char> = p_prime.chars().collect();
    let mut survivors: Vec<(String, f64)> = Vec::new();
    for (value, score) in descending_product(&vectors, product_cap) {
        let chars: Vec<char> = value.chars().collect();
        if noise_consistent(&chars, &p_chars) {
            survivors.push((value, score));
        }
    }

    // Per-position minimum over survivors and the span itself.
    let mut recovered_chars = p_chars.clone();
    for (value, _) in &survivors {
        for (slot, c) in recovered_chars.iter_mut().zip(value.chars()) {
            if (c as u32) < (*slot as u32) {
                *slot = c;
            }
        }
    }
    let recovered: String = recovered_chars.into_iter().collect();

    let best_score = survivors
        .iter()
        .map(|(_, s)| *s)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut candidates: Vec<Candidate> = survivors
        .into_iter()
        .map(|(value, score)| Candidate {
            value,
            score,
            provenance: Provenance::ShadowProduct,
        })
        .collect();
    if !candidates.iter().any(|c| c.value == recovered) {
        candidates.push(Candidate {
            value: recovered.clone(),
            score: if best_score.is_finite() { best_score } else { 0.0 },
            provenance: Provenance::ShadowProduct,
        });
    }

    Ok(RecoveryResult {
        recovered: Some(recovered),
        candidate_set: CandidateSet::new(candidates, budget),
        attempts_used: 1,
    })
}
