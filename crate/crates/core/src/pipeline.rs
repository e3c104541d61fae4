//! The combined attack pipeline: injection, disclosure, membership
//! probing, and extraction, executed in order against the simulated agent.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::DatasetRow;
use crate::defense::{apply_defense, redact_response, DefensePolicy};
use crate::oracle::{
    estimate_tokens, oracle_respond, AgentContext, InjectionPayload, OracleConfig, OracleError,
    Role,
};
use crate::prompt::build_attack_prompt;
use crate::recovery::{
    extract_span, recover_blackbox, recover_graybox, RecoveryError, TokenRecord,
};

/// Attack mode: which information-recovery engine runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Blackbox,
    Graybox,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Blackbox => "blackbox",
            Mode::Graybox => "graybox",
        }
    }
}

/// Pipeline stages, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Inject,
    Disclose,
    Probe,
    Attack,
    Recover,
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("phase {phase:?}: {source}")]
    Oracle {
        phase: Phase,
        #[source]
        source: OracleError,
    },
    #[error("phase {phase:?}: {source}")]
    Recovery {
        phase: Phase,
        #[source]
        source: RecoveryError,
    },
}

/// Result of one attack session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackOutcome {
    pub success: bool,
    /// LLM-facing queries issued (membership probe included).
    pub queries_used: u32,
    /// Candidate trials spent before success or exhaustion.
    pub attempts_used: u32,
    /// 1-based trial index at which the true value surfaced, when it did.
    pub rank: Option<u32>,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub recovered: Option<String>,
    pub trace: Vec<Phase>,
}

/// Session knobs shared by pipeline runs.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub mode: Mode,
    pub oracle: OracleConfig,
    pub defense: DefensePolicy,
    /// Attempt budget λ.
    pub budget: usize,
    pub product_cap: usize,
}

/// Default membership probe: exact substring match over memory turns.
pub fn substring_probe(needle: &str, ctx: &AgentContext) -> bool {
    ctx.memory().iter().any(|(_, turn)| turn.contains(needle))
}

/// The hint an attack prompt uses to point at the earlier disclosure.
pub const DEFAULT_CONTEXT_HINT: &str = "the details you stored from our earlier conversation";

/// Enumerate candidate trials against the ground truth, spending at most
/// `budget` attempts. `trials` must already be in preferred order.
pub(crate) fn verify_trials<'a>(
    trials: impl Iterator<Item = &'a str>,
    truth: &str,
    budget: usize,
) -> (Option<u32>, u32) {
    let mut tried = 0u32;
    let mut seen: Vec<&str> = Vec::new();
    for value in trials {
        if seen.contains(&value) {
            continue;
        }
        seen.push(value);
        if tried as usize >= budget {
            break;
        }
        tried += 1;
        if value == truth {
            return (Some(tried), tried);
        }
    }
    (None, tried)
}

/// Run one full attack session against the simulated agent:
///
/// 1. plant the injection payload in the external data feed,
/// 2. record the user's disclosure in agent memory,
/// 3. probe whether the target is present (short-circuits on a miss),
/// 4. issue the attack query, and
/// 5. recover per the configured mode, verifying candidates against the
///    ground truth within the λ budget.
pub fn run_pipeline(
    external_data: &mut Vec<String>,
    injection: &InjectionPayload,
    target: &DatasetRow,
    ctx: &mut AgentContext,
    probe: &dyn Fn(&str, &AgentContext) -> bool,
    cfg: &PipelineConfig,
) -> Result<AttackOutcome, PipelineError> {
    let mut trace = Vec::new();

    // Phase 1: indirect injection into the external data feed.
    external_data.push(injection.text().to_string());
    ctx.push_turn(Role::System, format!("[retrieved] {}", injection.text()));
    trace.push(Phase::Inject);

    // Phase 2: the user discloses the target value.
    ctx.disclose(target.pii.clone(), target.render())
        .map_err(|source| PipelineError::Oracle {
            phase: Phase::Disclose,
            source,
        })?;
    trace.push(Phase::Disclose);

    // Phase 3: membership probe. A miss ends the session after one query.
    trace.push(Phase::Probe);
    if !probe(target.pii.value(), ctx) {
        return Ok(AttackOutcome {
            success: false,
            queries_used: 1,
            attempts_used: 0,
            rank: None,
            prompt_tokens: 0,
            completion_tokens: 0,
            recovered: None,
            trace,
        });
    }

    // Phase 4: the attack query.
    let prompt = build_attack_prompt(DEFAULT_CONTEXT_HINT, target.category);
    let defended_prompt = apply_defense(&cfg.defense, &prompt);
    let (raw_response, records) =
        oracle_respond(ctx, &defended_prompt, &cfg.oracle).map_err(|source| {
            PipelineError::Oracle {
                phase: Phase::Attack,
                source,
            }
        })?;
    trace.push(Phase::Attack);

    let (visible_response, visible_records): (String, Vec<TokenRecord>) =
        if cfg.defense.redacts_output() {
            // The filter sits between model and attacker; token-level
            // signals are withheld along with the masked text.
            (redact_response(&raw_response), Vec::new())
        } else {
            (raw_response.clone(), records)
        };

    let prompt_tokens = estimate_tokens(&defended_prompt);
    let completion_tokens = estimate_tokens(&visible_response);
    let queries_used = 2; // probe + attack

    let span = match extract_span(&visible_response) {
        Ok(span) => span,
        Err(RecoveryError::SpanNotFound) => {
            // Refusal or filtered response: a failed attempt, never retried.
            return Ok(AttackOutcome {
                success: false,
                queries_used,
                attempts_used: 0,
                rank: None,
                prompt_tokens,
                completion_tokens,
                recovered: None,
                trace,
            });
        }
        Err(source) => {
            return Err(PipelineError::Recovery {
                phase: Phase::Attack,
                source,
            })
        }
    };

    // Phase 5: mode-dispatched recovery plus candidate verification.
    trace.push(Phase::Recover);
    let charset = target.pii.charset();
    let truth = target.pii.value();
    let (recovered, rank, attempts_used) = match cfg.mode {
        Mode::Blackbox => {
            let set = recover_blackbox(&span, charset, cfg.budget).map_err(|source| {
                PipelineError::Recovery {
                    phase: Phase::Recover,
                    source,
                }
            })?;
            let (rank, tried) = verify_trials(set.values(), truth, cfg.budget);
            (rank.map(|_| truth.to_string()), rank, tried)
        }
        Mode::Graybox => {
            let result = recover_graybox(
                &visible_records,
                &span,
                charset,
                cfg.budget,
                cfg.product_cap,
            )
            .map_err(|source| PipelineError::Recovery {
                phase: Phase::Recover,
                source,
            })?;
            let composed = result.recovered.clone().unwrap_or_else(|| span.clone());
            let trials = std::iter::once(composed.as_str())
                .chain(result.candidate_set.values());
            let (rank, tried) = verify_trials(trials, truth, cfg.budget);
            (Some(composed), rank, tried)
        }
    };

    Ok(AttackOutcome {
        success: rank.is_some(),
        queries_used,
        attempts_used,
        rank,
        prompt_tokens,
        completion_tokens,
        recovered,
        trace,
    })
}
