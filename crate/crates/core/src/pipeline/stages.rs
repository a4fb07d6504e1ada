use crate::config::PipelineConfig;
use crate::gateway::{select_model, Gateway, GatewayError, ModelDescriptor};
use crate::stage::Stage;

use super::EvidenceBundle;

/// Longest acceptable refinement relative to the raw query.
const REFINE_GROWTH: usize = 4;
const REFINE_SLACK: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct RefineOutcome {
    pub refined: String,
    pub model: String,
    pub degradations: Vec<String>,
}

pub fn refine_prompt(raw: &str) -> String {
    format!(
        "Refine: {}\nRewrite the farming question above as one clear, self-contained question. \
         Keep the language of the question. Reply with the question only.",
        single_line(raw)
    )
}

/// Strips quotes and a leading `Refined:` label; rejects empty, symbol-only
/// or runaway completions.
pub fn parse_refinement(raw: &str, completion: &str) -> Option<String> {
    let line = completion.lines().map(str::trim).find(|l| !l.is_empty())?;
    let line = strip_label(line, "refined query:")
        .or_else(|| strip_label(line, "refined:"))
        .or_else(|| strip_label(line, "question:"))
        .unwrap_or(line);
    let line = line.trim_matches(|c| matches!(c, '"' | '\'' | '`' | '\u{201c}' | '\u{201d}')).trim();
    let limit = raw.chars().count() * REFINE_GROWTH + REFINE_SLACK;
    if line.is_empty() || !line.chars().any(char::is_alphanumeric) || line.chars().count() > limit {
        return None;
    }
    Some(line.to_string())
}

fn strip_label<'a>(line: &'a str, label: &str) -> Option<&'a str> {
    let head = line.get(..label.len())?;
    head.eq_ignore_ascii_case(label).then(|| line[label.len()..].trim())
}

/// Stage 1. Never fails: any gateway error or unusable completion (after one
/// corrective re-prompt) falls back to the raw query.
pub fn refine_query(raw: &str, gateway: &Gateway, config: &PipelineConfig) -> RefineOutcome {
    let mut degradations = Vec::new();
    let model = match gateway.small_model(Stage::Refine) {
        Ok(m) => m,
        Err(e) => {
            return RefineOutcome {
                refined: raw.to_string(),
                model: String::new(),
                degradations: vec![format!("refine skipped: {e}")],
            }
        }
    };
    let llm = gateway.invocation(model, Stage::Refine, config.stages.refine_temperature, config.stages.refine_max_tokens);
    let prompt = refine_prompt(raw);
    let refined = match llm.call(&prompt) {
        Ok(c) => parse_refinement(raw, &c).or_else(|| {
            degradations.push("refine completion unusable, re-prompted".to_string());
            let retry = format!("{prompt}\nYour previous reply was not a single question. Reply with one question.");
            llm.call(&retry).ok().and_then(|c| parse_refinement(raw, &c))
        }),
        Err(e) => {
            degradations.push(format!("refine failed: {e}"));
            None
        }
    };
    let refined = refined.unwrap_or_else(|| {
        degradations.push("raw query used unrefined".to_string());
        raw.to_string()
    });
    RefineOutcome {
        refined,
        model: model.model_id.clone(),
        degradations,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecomposeOutcome {
    pub sub_queries: Vec<String>,
    pub model: String,
    pub degradations: Vec<String>,
}

pub fn decompose_prompt(refined: &str, min: usize, max: usize) -> String {
    format!(
        "Decompose into {min}-{max} perspectives: {}\nWrite each sub-query on its own numbered line. \
         Cover distinct angles such as practice, policy, economics and environment.",
        single_line(refined)
    )
}

/// Sub-queries from numbered (`1.`, `2)`) or bulleted (`-`, `*`, `•`) lines.
/// Unmarked lines are ignored; `None` when nothing is marked.
pub fn parse_sub_queries(completion: &str) -> Option<Vec<String>> {
    let items: Vec<String> = completion
        .lines()
        .filter_map(|line| {
            let t = line.trim();
            let digits = t.chars().take_while(char::is_ascii_digit).count();
            let rest = if digits > 0 && t[digits..].starts_with(['.', ')', ':']) {
                &t[digits + 1..]
            } else {
                t.strip_prefix(['-', '*', '\u{2022}'])?
            };
            let item = rest.trim().trim_matches('"').trim();
            (!item.is_empty()).then(|| item.to_string())
        })
        .collect();
    (!items.is_empty()).then_some(items)
}

/// Stage 2. The result always holds between `subquery_min` and
/// `subquery_max` entries: short lists are padded with the refined query,
/// long ones truncated, and an unusable completion (after one re-prompt)
/// degrades to the refined query alone, padded.
pub fn decompose_query(refined: &str, gateway: &Gateway, config: &PipelineConfig) -> DecomposeOutcome {
    let (min, max) = (config.stages.subquery_min, config.stages.subquery_max);
    let mut degradations = Vec::new();
    let mut model_id = String::new();
    let parsed = match gateway.small_model(Stage::Decompose) {
        Ok(model) => {
            model_id = model.model_id.clone();
            let llm = gateway.invocation(
                model,
                Stage::Decompose,
                config.stages.decompose_temperature,
                config.stages.decompose_max_tokens,
            );
            let prompt = decompose_prompt(refined, min, max);
            match llm.call(&prompt) {
                Ok(c) => parse_sub_queries(&c).or_else(|| {
                    degradations.push("decompose completion unparseable, re-prompted".to_string());
                    let retry = format!("{prompt}\nUse the format `1. <sub-query>` with one sub-query per line.");
                    llm.call(&retry).ok().and_then(|c| parse_sub_queries(&c))
                }),
                Err(e) => {
                    degradations.push(format!("decompose failed: {e}"));
                    None
                }
            }
        }
        Err(e) => {
            degradations.push(format!("decompose skipped: {e}"));
            None
        }
    };
    let mut sub_queries = parsed.unwrap_or_else(|| {
        degradations.push("refined query used as the only sub-query".to_string());
        vec![refined.to_string()]
    });
    if sub_queries.len() > max {
        degradations.push(format!("truncated {} sub-queries to {max}", sub_queries.len()));
        sub_queries.truncate(max);
    }
    if sub_queries.len() < min {
        degradations.push(format!("padded {} sub-queries to {min}", sub_queries.len()));
        sub_queries.resize(min, refined.to_string());
    }
    let distinct: std::collections::BTreeSet<&String> = sub_queries.iter().collect();
    if distinct.len() < sub_queries.len() {
        degradations.push("duplicate sub-queries".to_string());
    }
    DecomposeOutcome {
        sub_queries,
        model: model_id,
        degradations,
    }
}

/// Prompt for stage 5. The first line carries the question; evidence
/// follows one chunk per line in label order, newlines collapsed.
pub fn synthesis_prompt(refined: &str, sub_queries: &[String], bundle: &EvidenceBundle, config: &PipelineConfig) -> String {
    let mut p = format!("Synthesize from: {}\n", single_line(refined));
    p.push_str(&format!(
        "Write a complete answer of {}-{} words using only the evidence below. \
         Do not copy the bracketed labels into the answer.\n",
        config.stages.answer_word_min, config.stages.answer_word_max
    ));
    p.push_str("Perspectives:\n");
    for (i, q) in sub_queries.iter().enumerate() {
        p.push_str(&format!("{}. {}\n", i + 1, single_line(q)));
    }
    p.push_str("Evidence:\n");
    for c in bundle.iter() {
        p.push_str(&format!("[{}] {}\n", c.label(), flatten_paragraphs(&c.chunk.text)));
    }
    p
}

/// The model stage 5 routes to for `refined`.
pub fn synthesis_model<'a>(refined: &str, gateway: &'a Gateway, config: &PipelineConfig) -> &'a ModelDescriptor {
    select_model(
        refined,
        gateway.models(),
        &config.generation.technical_keywords,
        &config.generation.policy_keywords,
    )
}

/// Stage 5. Gateway errors propagate; the caller refuses to run it on an
/// empty bundle.
pub fn synthesize(
    refined: &str,
    sub_queries: &[String],
    bundle: &EvidenceBundle,
    gateway: &Gateway,
    config: &PipelineConfig,
) -> Result<(String, String), GatewayError> {
    let model = synthesis_model(refined, gateway, config);
    let llm = gateway.invocation(model, Stage::Synthesize, config.stages.synth_temperature, config.stages.synth_max_tokens);
    let answer = llm.call(&synthesis_prompt(refined, sub_queries, bundle, config))?;
    Ok((answer.trim().to_string(), model.model_id.clone()))
}

/// Chunk text on one line; a paragraph without closing punctuation (a
/// heading) gets a full stop so it stays a sentence of its own.
fn flatten_paragraphs(text: &str) -> String {
    let paragraphs: Vec<String> = text
        .split("\n\n")
        .map(single_line)
        .filter(|p| !p.is_empty())
        .collect();
    let last = paragraphs.len().saturating_sub(1);
    paragraphs
        .iter()
        .enumerate()
        .map(|(i, p)| {
            if i < last && !p.ends_with(['.', '!', '?', ':', ';']) {
                format!("{p}.")
            } else {
                p.clone()
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn single_line(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}
