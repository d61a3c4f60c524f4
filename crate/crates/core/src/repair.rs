//! Lightweight automated program repair.
//!
//! Each round compiles the program, walks error diagnostics from the lowest
//! line up, and applies the first listed rule whose message pattern matches.
//! Rules edit only the line the diagnostic names (or append at end of file),
//! so untouched lines come out byte-identical.
//!
//! Rule templates may reference named captures of the message pattern as
//! `${name}`. In a line pattern the captured text is regex-escaped; in
//! replacement and inserted text it is used verbatim.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapters::{count_lines, AdapterError, Compiler, Diagnostic};
use crate::store::{BlobRef, MediaKind};

pub const DEFAULT_MAX_ROUNDS: u32 = 3;

#[derive(Debug, Error)]
pub enum RepairError {
    #[error("at least one repair rule is required")]
    NoRules,
    #[error("max_rounds must be at least 1")]
    ZeroRounds,
    #[error("invalid repair rule: {0}")]
    InvalidRule(String),
    #[error(transparent)]
    Compiler(#[from] AdapterError),
    #[error("cannot read rules file: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RepairAction {
    /// Replace the first match of `pattern` on the diagnostic's line
    /// (preferring a match at the diagnostic's column).
    ReplaceOnLine { pattern: String, replacement: String },
    InsertAfterLine { text: String },
    AppendEof { text: String },
}

#[derive(Debug, Clone)]
pub struct RepairRule {
    pub rule_id: String,
    pub message_pattern: Regex,
    pub action: RepairAction,
    pub max_applications: u32,
}

impl RepairRule {
    pub fn new(
        rule_id: &str,
        message_pattern: &str,
        action: RepairAction,
        max_applications: u32,
    ) -> Result<Self, RepairError> {
        let message_pattern = Regex::new(message_pattern)
            .map_err(|e| RepairError::InvalidRule(format!("{rule_id}: {e}")))?;
        if max_applications == 0 {
            return Err(RepairError::InvalidRule(format!(
                "{rule_id}: max_applications must be positive"
            )));
        }
        Ok(RepairRule {
            rule_id: rule_id.to_string(),
            message_pattern,
            action,
            max_applications,
        })
    }
}

/// The stock MiniUI rule pack.
pub fn default_rules() -> Vec<RepairRule> {
    let rules = [
        (
            "drop-unexpected-brace",
            r"unbalanced braces: unexpected `\}`",
            RepairAction::ReplaceOnLine {
                pattern: r"\}".into(),
                replacement: String::new(),
            },
            3,
        ),
        (
            "close-unclosed-brace",
            r"unbalanced braces: .*never closed",
            RepairAction::AppendEof { text: "}".into() },
            3,
        ),
        (
            "fix-component-name",
            r"unknown component `(?P<found>\w+)`; did you mean `(?P<suggest>\w+)`",
            RepairAction::ReplaceOnLine {
                pattern: r"\b${found}\b".into(),
                replacement: "${suggest}".into(),
            },
            5,
        ),
        (
            "terminate-literal",
            r"unterminated string literal",
            RepairAction::ReplaceOnLine {
                pattern: r"\s*$".into(),
                replacement: "\"".into(),
            },
            3,
        ),
        (
            "quote-bare-literal",
            r"expected string literal after `\w+`, found `(?P<found>\w+)`",
            RepairAction::ReplaceOnLine {
                pattern: r"\b${found}\b".into(),
                replacement: "\"${found}\"".into(),
            },
            3,
        ),
    ];
    rules
        .into_iter()
        .map(|(id, pat, action, max)| RepairRule::new(id, pat, action, max).expect("built-in rule"))
        .collect()
}

#[derive(Debug, Deserialize)]
struct RuleLine {
    rule_id: String,
    message_pattern: String,
    action: String,
    #[serde(default)]
    args: Vec<String>,
    #[serde(default = "one")]
    max_applications: u32,
}

fn one() -> u32 {
    1
}

/// Parses a rules file: one JSON object per line with `rule_id`,
/// `message_pattern`, `action` (`replace_on_line` | `insert_after_line` |
/// `append_eof`), `args`, and `max_applications`.
pub fn parse_rules(text: &str) -> Result<Vec<RepairRule>, RepairError> {
    let mut rules = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let raw: RuleLine = serde_json::from_str(line)
            .map_err(|e| RepairError::InvalidRule(format!("line {}: {e}", n + 1)))?;
        let arg = |i: usize| {
            raw.args.get(i).cloned().ok_or_else(|| {
                RepairError::InvalidRule(format!("{}: `{}` needs {} args", raw.rule_id, raw.action, i + 1))
            })
        };
        let action = match raw.action.as_str() {
            "replace_on_line" => RepairAction::ReplaceOnLine {
                pattern: arg(0)?,
                replacement: arg(1)?,
            },
            "insert_after_line" => RepairAction::InsertAfterLine { text: arg(0)? },
            "append_eof" => RepairAction::AppendEof { text: arg(0)? },
            other => {
                return Err(RepairError::InvalidRule(format!(
                    "{}: unknown action `{other}`",
                    raw.rule_id
                )))
            }
        };
        rules.push(RepairRule::new(
            &raw.rule_id,
            &raw.message_pattern,
            action,
            raw.max_applications,
        )?);
    }
    Ok(rules)
}

pub fn load_rules(path: impl AsRef<Path>) -> Result<Vec<RepairRule>, RepairError> {
    parse_rules(&fs::read_to_string(path)?)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppliedRepair {
    pub rule_id: String,
    /// Line the diagnostic named; for end-of-file appends, the new line.
    pub line: usize,
    pub before: String,
    pub after: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepairReport {
    pub original_ref: BlobRef,
    pub repaired_ref: BlobRef,
    pub applied: Vec<AppliedRepair>,
    pub rounds: u32,
}

fn expand(template: &str, pattern: &Regex, caps: &regex::Captures<'_>, escape: bool) -> String {
    let mut out = template.to_string();
    for name in pattern.capture_names().flatten() {
        if let Some(m) = caps.name(name) {
            let v = if escape {
                regex::escape(m.as_str())
            } else {
                m.as_str().to_string()
            };
            out = out.replace(&format!("${{{name}}}"), &v);
        }
    }
    out
}

fn char_to_byte(s: &str, char_idx: usize) -> usize {
    s.char_indices().nth(char_idx).map(|(b, _)| b).unwrap_or(s.len())
}

/// Applies `rule` for `diag`; `None` when the action does not apply.
fn apply_rule(
    source: &str,
    rule: &RepairRule,
    diag: &Diagnostic,
    caps: &regex::Captures<'_>,
) -> Result<Option<(String, AppliedRepair)>, String> {
    let total = count_lines(source);
    let mut lines: Vec<String> = source.split('\n').map(str::to_string).collect();
    match &rule.action {
        RepairAction::ReplaceOnLine {
            pattern,
            replacement,
        } => {
            if diag.line == 0 || diag.line > total {
                return Err(format!("line {} beyond end of source ({total} lines)", diag.line));
            }
            let pat = expand(pattern, &rule.message_pattern, caps, true);
            let re = Regex::new(&pat).map_err(|e| format!("expanded pattern `{pat}`: {e}"))?;
            let rep = expand(replacement, &rule.message_pattern, caps, false);
            let before = lines[diag.line - 1].clone();
            let at_column = diag
                .column
                .map(|c| char_to_byte(&before, c.saturating_sub(1)))
                .and_then(|b| re.find_iter(&before).find(|m| m.start() == b));
            let target = at_column.or_else(|| re.find(&before));
            let Some(m) = target else {
                return Ok(None);
            };
            let after = format!("{}{}{}", &before[..m.start()], rep, &before[m.end()..]);
            if after == before {
                return Ok(None);
            }
            lines[diag.line - 1] = after.clone();
            let applied = AppliedRepair {
                rule_id: rule.rule_id.clone(),
                line: diag.line,
                before,
                after,
            };
            Ok(Some((lines.join("\n"), applied)))
        }
        RepairAction::InsertAfterLine { text } => {
            if diag.line == 0 || diag.line > total {
                return Err(format!("line {} beyond end of source ({total} lines)", diag.line));
            }
            let text = expand(text, &rule.message_pattern, caps, false);
            lines.insert(diag.line, text.clone());
            let applied = AppliedRepair {
                rule_id: rule.rule_id.clone(),
                line: diag.line,
                before: String::new(),
                after: text,
            };
            Ok(Some((lines.join("\n"), applied)))
        }
        RepairAction::AppendEof { text } => {
            let text = expand(text, &rule.message_pattern, caps, false);
            let repaired = if source.is_empty() {
                text.clone()
            } else if source.ends_with('\n') {
                format!("{source}{text}\n")
            } else {
                format!("{source}\n{text}")
            };
            let applied = AppliedRepair {
                rule_id: rule.rule_id.clone(),
                line: total + 1,
                before: String::new(),
                after: text,
            };
            Ok(Some((repaired, applied)))
        }
    }
}

/// Repeatedly compiles and patches `source` until it compiles, no rule
/// applies, or `max_rounds` compile rounds have run.
pub fn apply_repairs(
    source: &str,
    rules: &[RepairRule],
    compiler: &dyn Compiler,
    max_rounds: u32,
) -> Result<(String, RepairReport), RepairError> {
    if rules.is_empty() {
        return Err(RepairError::NoRules);
    }
    if max_rounds == 0 {
        return Err(RepairError::ZeroRounds);
    }
    let mut current = source.to_string();
    let mut applied = Vec::new();
    let mut uses: HashMap<&str, u32> = HashMap::new();
    let mut rounds = 0;

    for round in 1..=max_rounds {
        rounds = round;
        let outcome = compiler.compile(&current)?;
        if outcome.success {
            break;
        }
        let mut errors: Vec<&Diagnostic> = outcome.errors().collect();
        errors.sort_by_key(|d| (d.line, d.column));

        let mut patched = None;
        'search: for diag in errors {
            for rule in rules {
                if uses.get(rule.rule_id.as_str()).copied().unwrap_or(0) >= rule.max_applications {
                    continue;
                }
                let Some(caps) = rule.message_pattern.captures(&diag.message) else {
                    continue;
                };
                match apply_rule(&current, rule, diag, &caps) {
                    Ok(Some(result)) => {
                        *uses.entry(rule.rule_id.as_str()).or_default() += 1;
                        patched = Some(result);
                        break 'search;
                    }
                    Ok(None) => {}
                    Err(reason) => {
                        log::warn!("repair rule `{}` skipped: {reason}", rule.rule_id);
                    }
                }
            }
        }
        match patched {
            Some((next, entry)) => {
                current = next;
                applied.push(entry);
            }
            None => break,
        }
    }

    let report = RepairReport {
        original_ref: BlobRef::of(source.as_bytes(), MediaKind::ProgramSource),
        repaired_ref: BlobRef::of(current.as_bytes(), MediaKind::ProgramSource),
        applied,
        rounds,
    };
    Ok((current, report))
}
