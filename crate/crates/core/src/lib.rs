//! # shadowprobe-core
//!
//! Red-teaming toolkit for probing privacy leakage from LLM agent memory.
//!
//! An attacker who can talk to an agent whose context holds a private value
//! asks the model to re-emit that value with one character shifted up by 2
//! code points (length and final character preserved). The shifted string
//! passes safety filtering far more often than the raw value would, and the
//! attacker removes the shift offline:
//!
//! * **black-box**: enumerate every position inversion of the extracted
//!   span into a small candidate set ([`recovery::recover_blackbox`]);
//! * **gray-box**: when the API exposes `top_logprobs`, the original
//!   character usually survives among the top-k alternatives at the shifted
//!   step, and per-position code-point minimisation recovers the value in a
//!   single pass ([`recovery::recover_graybox`]).
//!
//! The crate ships the perturbation primitives, both recovery engines, a
//! deterministic simulated agent (plus an OpenAI-compatible mock endpoint)
//! for desk-scale verification, an HTTP client for live endpoints, the
//! metrics suite (pass@k, expected attempts, token cost, leakage-slope
//! fits), a defense harness, and campaign orchestration.

pub mod campaign;
pub mod client;
pub mod dataset;
pub mod defense;
pub mod metrics;
pub mod mock_server;
pub mod noise;
pub mod oracle;
pub mod pii;
pub mod pipeline;
pub mod prompt;
pub mod recovery;
pub mod report;

pub use campaign::{analyze, run_campaign, CampaignConfig, CampaignError, TargetKind};
pub use client::{ApiClient, ChatMessage, ClientError, EndpointConfig, UsageSnapshot};
pub use dataset::{load_jsonl, synth_corpus, DatasetError, DatasetRow};
pub use defense::{apply_defense, DefenseError, DefenseKind, DefensePolicy, DetectionVerdict};
pub use metrics::{
    enq, fit_leakage_slope, min_queries_bound, pass_at_k_empirical, pass_at_k_unbiased,
    LeakageFit, LeakagePoint, MetricsError, TrialMatrix,
};
pub use mock_server::MockServer;
pub use noise::{dec, enc, sample_noise, NoiseError, NoiseSpec, PerturbedPii, ShadowKey};
pub use oracle::{
    oracle_respond, AgentContext, InjectionPayload, OracleConfig, OracleError, Role,
};
pub use pii::{Charset, PiiCategory, PiiError, PiiRecord};
pub use pipeline::{run_pipeline, AttackOutcome, Mode, Phase, PipelineConfig, PipelineError};
pub use prompt::build_attack_prompt;
pub use recovery::{
    extract_span, rank_candidates, recover_blackbox, recover_graybox, CandidateSet,
    RecoveryError, RecoveryResult, ShadowVector, TokenLogprob, TokenRecord,
};
pub use report::{read_report, write_report, Report, ReportError};
