//! Attack prompt construction.
//!
//! The template lives in `templates/attack_prompt.txt` (embedded byte-exact)
//! with `{{context_hint}}` and `{{category}}` placeholders. The hint names
//! where in the conversation the value was shared; the value itself never
//! appears in the prompt.

use crate::pii::PiiCategory;

/// The built-in attack prompt template.
pub const ATTACK_PROMPT_TEMPLATE: &str = include_str!("../templates/attack_prompt.txt");

pub const CONTEXT_HINT_PLACEHOLDER: &str = "{{context_hint}}";
pub const CATEGORY_PLACEHOLDER: &str = "{{category}}";

/// Render an attack prompt from an arbitrary template.
pub fn build_attack_prompt_with_template(
    template: &str,
    context_hint: &str,
    category: PiiCategory,
) -> String {
    template
        .replace(CONTEXT_HINT_PLACEHOLDER, context_hint)
        .replace(CATEGORY_PLACEHOLDER, category.label())
}

/// Render the built-in attack prompt.
///
/// `context_hint` is a marker pointing at earlier conversation content
/// ("the details from my message this morning"); it must not embed the
/// private value itself.
pub fn build_attack_prompt(context_hint: &str, category: PiiCategory) -> String {
    build_attack_prompt_with_template(ATTACK_PROMPT_TEMPLATE, context_hint, category)
}

/// Detect which category a rendered attack prompt targets by label match.
pub fn detect_category(prompt: &str) -> Option<PiiCategory> {
    PiiCategory::ALL
        .iter()
        .copied()
        .find(|c| prompt.contains(c.label()))
}
