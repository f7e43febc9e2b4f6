//! Role prompt templates shipped as text assets.

use super::{Role, RoleConfig};

pub fn prompt_template(role: Role) -> &'static str {
    match role {
        Role::Brainstormer => include_str!("../../assets/prompts/brainstormer.md"),
        Role::Designer => include_str!("../../assets/prompts/designer.md"),
        Role::Refactor => include_str!("../../assets/prompts/refactor.md"),
        Role::Reviewer => include_str!("../../assets/prompts/reviewer.md"),
        Role::Validator => include_str!("../../assets/prompts/validator.md"),
        Role::Evaluator => include_str!("../../assets/prompts/evaluator.md"),
    }
}

/// The system prompt: role template, tool list, action protocol and the
/// final payload skeleton.
pub fn render_prompt(config: &RoleConfig, tools: &str) -> String {
    let body = config.prompt_template.replace("{{budget}}", &config.step_budget.to_string());
    format!(
        "{body}\n## Tools\n{tools}\n## Protocol\nReply with exactly one JSON object per turn.\n\
         To call a tool: {{\"action\": \"tool\", \"tool\": \"<name>\", \"arguments\": {{...}}}}\n\
         To finish: {{\"action\": \"final\", \"payload\": <payload>}}\n\n\
         ## Final payload\n{}\n",
        config.output_schema.skeleton()
    )
}
