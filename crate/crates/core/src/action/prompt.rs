//! The system prompt given to agents during training and evaluation.

/// First half: role description, basic actions and mobile actions.
const PART_ONE_END: &str = "3. Custom Actions for Web and Desktop Platforms";

static SYSTEM_PROMPT: &str = include_str!("../../data/system_prompt.txt");

/// Returns the full two-part system prompt. The text is compiled in, so the
/// output is byte-identical on every call.
pub fn render_system_prompt() -> &'static str {
    SYSTEM_PROMPT
}

/// The two halves, split where the web & desktop block begins.
pub fn prompt_parts() -> (&'static str, &'static str) {
    let at = SYSTEM_PROMPT.find(PART_ONE_END).expect("prompt contains the web/desktop header");
    SYSTEM_PROMPT.split_at(at)
}
