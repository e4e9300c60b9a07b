//! Template-split lint: render a system+user conversation once per message
//! and once in a single pass, token-diff the two, and name every duplicated
//! or spurious token. Clean dialects produce byte-identical streams.

use std::fmt;

use crate::model::{tokenize, ChatTemplate, Role, TemplateSet, TokenId};

#[derive(Debug, Clone, PartialEq)]
pub enum LintFinding {
    /// A special token appears more often in the split rendering.
    DuplicatedSpecial {
        token: TokenId,
        spelling: String,
        split_count: usize,
        single_count: usize,
        /// Token index in the split stream of the first surplus occurrence.
        position: usize,
    },
    /// A special token appears less often in the split rendering.
    MissingSpecial {
        token: TokenId,
        spelling: String,
        split_count: usize,
        single_count: usize,
    },
    /// The dialect's auto-injected preamble text appears more than once.
    DuplicatedPreamble {
        split_count: usize,
        single_count: usize,
    },
    /// Streams differ but no special-token count does; reports the first
    /// diverging token index.
    StreamMismatch { first_divergence: usize },
}

impl fmt::Display for LintFinding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LintFinding::DuplicatedSpecial {
                spelling,
                split_count,
                single_count,
                position,
                ..
            } => write!(
                f,
                "duplicated special {spelling}: {split_count}x in split vs {single_count}x in single pass (first surplus at token {position})"
            ),
            LintFinding::MissingSpecial {
                spelling,
                split_count,
                single_count,
                ..
            } => write!(
                f,
                "missing special {spelling}: {split_count}x in split vs {single_count}x in single pass"
            ),
            LintFinding::DuplicatedPreamble {
                split_count,
                single_count,
            } => write!(
                f,
                "duplicated preamble text: {split_count}x in split vs {single_count}x in single pass"
            ),
            LintFinding::StreamMismatch { first_divergence } => {
                write!(f, "token streams diverge at index {first_divergence}")
            }
        }
    }
}

fn count_subslice(haystack: &[u8], needle: &[u8]) -> usize {
    if needle.is_empty() || haystack.len() < needle.len() {
        return 0;
    }
    haystack.windows(needle.len()).filter(|w| w == &needle).count()
}

/// Compare the per-message ("split") and single-pass renderings of one
/// system+user conversation. Findings are empty iff the renderings are
/// byte-identical.
pub fn lint_template_split(
    system_text: &str,
    user_text: &str,
    template: &ChatTemplate,
    templates: &TemplateSet,
) -> Vec<LintFinding> {
    let messages = [(Role::System, system_text), (Role::User, user_text)];
    let single_bytes = template.render(&messages, true);
    let split_bytes = template.render(&messages, false);
    if single_bytes == split_bytes {
        return Vec::new();
    }

    let specials = templates.specials();
    let single = tokenize(&single_bytes, Some(specials));
    let split = tokenize(&split_bytes, Some(specials));

    let mut findings = Vec::new();
    for (spelling, token) in specials.iter_by_id() {
        let single_count = single.iter().filter(|&&t| t == token).count();
        let split_count = split.iter().filter(|&&t| t == token).count();
        if split_count > single_count {
            let position = split
                .iter()
                .enumerate()
                .filter(|(_, &t)| t == token)
                .map(|(i, _)| i)
                .nth(single_count)
                .unwrap_or(0);
            findings.push(LintFinding::DuplicatedSpecial {
                token,
                spelling: spelling.to_string(),
                split_count,
                single_count,
                position,
            });
        } else if split_count < single_count {
            findings.push(LintFinding::MissingSpecial {
                token,
                spelling: spelling.to_string(),
                split_count,
                single_count,
            });
        }
    }
    if let Some(preamble) = &template.preamble {
        let single_count = count_subslice(&single_bytes, preamble.as_bytes());
        let split_count = count_subslice(&split_bytes, preamble.as_bytes());
        if split_count > single_count {
            findings.push(LintFinding::DuplicatedPreamble {
                split_count,
                single_count,
            });
        }
    }
    if findings.is_empty() {
        let first_divergence = single
            .iter()
            .zip(&split)
            .position(|(a, b)| a != b)
            .unwrap_or_else(|| single.len().min(split.len()));
        findings.push(LintFinding::StreamMismatch { first_divergence });
    }
    findings
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clean_dialect_has_no_findings() {
        let set = TemplateSet::builtin();
        let t = set.get("chatml").unwrap();
        assert!(lint_template_split("facts", "question", t, &set).is_empty());
    }

    #[test]
    fn preamble_dialect_duplicates_begin_of_text() {
        let set = TemplateSet::builtin();
        let t = set.get("header").unwrap();
        let findings = lint_template_split("facts", "question", t, &set);
        assert!(findings.len() >= 2, "{findings:?}");
        let bot = set.specials().id_of("<|begin_of_text|>").unwrap();
        assert!(findings.iter().any(|f| matches!(
            f,
            LintFinding::DuplicatedSpecial { token, split_count: 2, single_count: 1, .. } if *token == bot
        )));
        assert!(findings
            .iter()
            .any(|f| matches!(f, LintFinding::DuplicatedPreamble { .. })));
    }

    #[test]
    fn content_free_case_driven_by_frame_tokens() {
        let set = TemplateSet::builtin();
        let header = set.get("header").unwrap();
        let findings = lint_template_split("", "", header, &set);
        assert!(!findings.is_empty());
        let chatml = set.get("chatml").unwrap();
        assert!(lint_template_split("", "", chatml, &set).is_empty());
    }

    #[test]
    fn findings_name_spelling_and_position() {
        let set = TemplateSet::builtin();
        let t = set.get("header").unwrap();
        let findings = lint_template_split("s", "u", t, &set);
        let text = findings
            .iter()
            .map(|f| f.to_string())
            .collect::<Vec<_>>()
            .join("\n");
        assert!(text.contains("<|begin_of_text|>"));
        assert!(text.contains("first surplus at token"));
    }
}
