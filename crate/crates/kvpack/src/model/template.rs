//! Chat template dialects: the special-token framing an instruction-tuned
//! model expects around role-tagged messages.
//!
//! Two dialects ship by default. `chatml` frames every message the same way
//! and has no implicit content, so rendering messages separately and
//! concatenating gives the same bytes as rendering them together. `header`
//! starts every render with a begin-of-text token and auto-injects a system
//! preamble, so per-message rendering duplicates both — the classic template
//! split pitfall that the lint in [`crate::verify`] detects.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use super::tokenizer::{SpecialTokens, TokenId};
use super::TemplateError;

const CHATML_DEF: &str = include_str!("../../templates/chatml.tmpl");
const HEADER_DEF: &str = include_str!("../../templates/header.tmpl");

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    System,
    User,
    Assistant,
}

impl FromStr for Role {
    type Err = TemplateError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "system" => Ok(Role::System),
            "user" => Ok(Role::User),
            "assistant" => Ok(Role::Assistant),
            other => Err(TemplateError::UnknownRole(other.to_string())),
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Role::System => write!(f, "system"),
            Role::User => write!(f, "user"),
            Role::Assistant => write!(f, "assistant"),
        }
    }
}

/// Header/footer byte strings wrapped around one role's message text.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RoleFrame {
    pub header: String,
    pub footer: String,
}

/// One template dialect: how role-tagged messages become framed text.
/// Rendering is a pure function of (messages, dialect).
#[derive(Debug, Clone, PartialEq)]
pub struct ChatTemplate {
    pub dialect: String,
    /// Emitted once at the start of every render when set.
    pub begin_of_text: Option<String>,
    /// Spelling of the token that ends a generation turn.
    pub end_of_text: Option<String>,
    /// Auto-injected system preamble. When set, every render carries a
    /// system block even if no system message was supplied.
    pub preamble: Option<String>,
    pub system: RoleFrame,
    pub user: RoleFrame,
    pub assistant: RoleFrame,
    /// Special-token spellings this dialect uses, in declaration order.
    pub specials: Vec<String>,
}

impl ChatTemplate {
    /// Parse a plain-text dialect definition: `key = value` lines, `#`
    /// comments, `\n`/`\t`/`\\` escapes in values, repeated `special` lines.
    pub fn parse(text: &str) -> Result<Self, TemplateError> {
        let mut fields: BTreeMap<String, String> = BTreeMap::new();
        let mut specials = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(TemplateError::Definition {
                line: idx + 1,
                msg: "expected `key = value`".to_string(),
            })?;
            let key = key.trim().to_string();
            let value = unescape(value.trim()).map_err(|msg| TemplateError::Definition {
                line: idx + 1,
                msg,
            })?;
            if key == "special" {
                if !specials.contains(&value) {
                    specials.push(value);
                }
                continue;
            }
            if fields.insert(key.clone(), value).is_some() {
                return Err(TemplateError::Definition {
                    line: idx + 1,
                    msg: format!("duplicate key `{key}`"),
                });
            }
        }
        let mut take = |k: &str| fields.remove(k).unwrap_or_default();
        let opt = |s: String| if s.is_empty() { None } else { Some(s) };

        let dialect = take("dialect");
        if dialect.is_empty() {
            return Err(TemplateError::Definition {
                line: 0,
                msg: "missing `dialect` key".to_string(),
            });
        }
        let template = ChatTemplate {
            dialect,
            begin_of_text: opt(take("bot")),
            end_of_text: opt(take("eot")),
            preamble: opt(take("preamble")),
            system: RoleFrame {
                header: take("system_header"),
                footer: take("system_footer"),
            },
            user: RoleFrame {
                header: take("user_header"),
                footer: take("user_footer"),
            },
            assistant: RoleFrame {
                header: take("assistant_header"),
                footer: take("assistant_footer"),
            },
            specials,
        };
        if let Some((key, _)) = fields.into_iter().next() {
            return Err(TemplateError::Definition {
                line: 0,
                msg: format!("unknown key `{key}`"),
            });
        }
        Ok(template)
    }

    fn frame(&self, role: Role) -> &RoleFrame {
        match role {
            Role::System => &self.system,
            Role::User => &self.user,
            Role::Assistant => &self.assistant,
        }
    }

    /// Render a conversation. `single_pass = true` renders all messages in
    /// one call. `single_pass = false` renders each message in its own call
    /// and concatenates the results, which deliberately reproduces the
    /// duplicate begin-of-text/preamble artifacts of dialects that have them.
    pub fn render(&self, messages: &[(Role, &str)], single_pass: bool) -> Vec<u8> {
        if single_pass {
            self.render_once(messages)
        } else {
            let mut out = Vec::new();
            for m in messages {
                out.extend_from_slice(&self.render_once(&[*m]));
            }
            out
        }
    }

    fn render_once(&self, messages: &[(Role, &str)]) -> Vec<u8> {
        let mut out = Vec::new();
        if let Some(bot) = &self.begin_of_text {
            out.extend_from_slice(bot.as_bytes());
        }
        let auto_system = self.preamble.is_some();
        if auto_system {
            // The system block always exists: preamble first, then any
            // system message text in list order.
            out.extend_from_slice(self.system.header.as_bytes());
            out.extend_from_slice(self.preamble.as_deref().unwrap_or_default().as_bytes());
            for (role, text) in messages {
                if *role == Role::System {
                    out.extend_from_slice(text.as_bytes());
                }
            }
            out.extend_from_slice(self.system.footer.as_bytes());
        }
        for (role, text) in messages {
            if auto_system && *role == Role::System {
                continue;
            }
            let frame = self.frame(*role);
            out.extend_from_slice(frame.header.as_bytes());
            out.extend_from_slice(text.as_bytes());
            out.extend_from_slice(frame.footer.as_bytes());
        }
        out
    }

    /// The opened system segment: begin-of-text, system header, preamble,
    /// and the given text — everything up to but not including the system
    /// footer. This is the part a knowledge pack's cache covers, so that
    /// later facts can be appended inside the same system block.
    pub fn open_system_segment(&self, system_text: &str) -> Vec<u8> {
        let mut out = Vec::new();
        if let Some(bot) = &self.begin_of_text {
            out.extend_from_slice(bot.as_bytes());
        }
        out.extend_from_slice(self.system.header.as_bytes());
        if let Some(p) = &self.preamble {
            out.extend_from_slice(p.as_bytes());
        }
        out.extend_from_slice(system_text.as_bytes());
        out
    }

    /// Closes the system block (when one is open), frames the question as
    /// the user turn, and opens the assistant turn for generation.
    pub fn read_segment(&self, question: &str, close_system: bool) -> Vec<u8> {
        let mut out = Vec::new();
        if close_system {
            out.extend_from_slice(self.system.footer.as_bytes());
        }
        out.extend_from_slice(self.user.header.as_bytes());
        out.extend_from_slice(question.as_bytes());
        out.extend_from_slice(self.user.footer.as_bytes());
        out.extend_from_slice(self.assistant.header.as_bytes());
        out
    }

    /// Render the full system+user conversation in one call, with the
    /// assistant turn opened, and record where the system segment ends.
    /// The two halves are exactly [`Self::open_system_segment`] and
    /// [`Self::read_segment`], so split-path and single-pass token streams
    /// agree by construction.
    pub fn conversation(&self, system_text: &str, question: &str) -> ConversationRender {
        let prefix = self.open_system_segment(system_text);
        let boundary = prefix.len();
        let mut full = prefix;
        full.extend_from_slice(&self.read_segment(question, true));
        ConversationRender { full, boundary }
    }
}

/// A rendered conversation plus the byte offset where the system segment
/// ends and the read segment begins.
#[derive(Debug, Clone)]
pub struct ConversationRender {
    pub full: Vec<u8>,
    pub boundary: usize,
}

impl ConversationRender {
    pub fn system_segment(&self) -> &[u8] {
        &self.full[..self.boundary]
    }

    pub fn read_segment(&self) -> &[u8] {
        &self.full[self.boundary..]
    }
}

fn unescape(s: &str) -> Result<String, String> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('n') => out.push('\n'),
            Some('t') => out.push('\t'),
            Some('\\') => out.push('\\'),
            Some(other) => return Err(format!("unknown escape `\\{other}`")),
            None => return Err("trailing backslash".to_string()),
        }
    }
    Ok(out)
}

/// The loaded dialects plus the unified special-token registry they share.
/// Ids are assigned from 256 upward in registration order across dialects.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    templates: BTreeMap<String, ChatTemplate>,
    order: Vec<String>,
    specials: SpecialTokens,
}

impl TemplateSet {
    pub fn empty() -> Self {
        Self {
            templates: BTreeMap::new(),
            order: Vec::new(),
            specials: SpecialTokens::new(),
        }
    }

    /// The two built-in dialects, parsed from their definition files.
    pub fn builtin() -> Self {
        let mut set = Self::empty();
        set.register_definition(CHATML_DEF)
            .expect("built-in chatml definition parses");
        set.register_definition(HEADER_DEF)
            .expect("built-in header definition parses");
        set
    }

    pub fn register(&mut self, template: ChatTemplate) -> Result<(), TemplateError> {
        if self.templates.contains_key(&template.dialect) {
            return Err(TemplateError::DuplicateDialect(template.dialect));
        }
        for s in &template.specials {
            self.specials.register(s);
        }
        self.order.push(template.dialect.clone());
        self.templates.insert(template.dialect.clone(), template);
        Ok(())
    }

    pub fn register_definition(&mut self, text: &str) -> Result<(), TemplateError> {
        self.register(ChatTemplate::parse(text)?)
    }

    pub fn get(&self, dialect: &str) -> Result<&ChatTemplate, TemplateError> {
        self.templates
            .get(dialect)
            .ok_or_else(|| TemplateError::UnknownDialect(dialect.to_string()))
    }

    pub fn specials(&self) -> &SpecialTokens {
        &self.specials
    }

    /// Dialect ids in registration order.
    pub fn dialects(&self) -> impl Iterator<Item = &str> {
        self.order.iter().map(|s| s.as_str())
    }

    /// Reserved id of a dialect's end-of-text token, if it declares one.
    pub fn eot_id(&self, template: &ChatTemplate) -> Option<TokenId> {
        template
            .end_of_text
            .as_deref()
            .and_then(|s| self.specials.id_of(s))
    }
}
