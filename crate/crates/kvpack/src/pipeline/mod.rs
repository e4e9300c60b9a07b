//! The write phase, the read phase, and cache composition.
//!
//! Write: join the facts into one system message, render the dialect's
//! opened system segment, forward it once, and keep the cache. The segment
//! is left open (no system footer) so more facts can be appended inside the
//! same block — that is what makes sequential composition land on exactly
//! the bytes a single build over all facts would produce.
//!
//! Read: tokenize the full conversation's remainder (system footer, user
//! turn, assistant header), continue from the pack's cache, and decode. The
//! question's token cost is independent of how many facts the pack holds.

use std::fmt::Write as _;

use thiserror::Error;

use crate::kv::KnowledgePack;
use crate::model::{detokenize, tokenize, Model, ModelError, TemplateError, TemplateSet, TokenId};
use crate::routing::embed_text;
use crate::verify::degeneracy_score;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("pack fingerprint {pack} does not match model {model}")]
    FingerprintMismatch { pack: String, model: String },
    #[error("cannot compose packs: {0}")]
    ComposeMismatch(String),
    #[error("tokenizing the whole conversation does not reproduce the split segments; \
             fact text collides with a special-token spelling")]
    SplitUnstable,
}

/// What to build a pack from.
#[derive(Debug, Clone)]
pub struct BuildRequest {
    /// Fact sentences, joined with single spaces into one system message.
    pub facts: Vec<String>,
    /// Template dialect id.
    pub dialect: String,
    /// False selects the raw-text ablation: facts tokenized as plain bytes
    /// with no template frame and no special tokens.
    pub use_template: bool,
}

impl BuildRequest {
    pub fn templated(facts: Vec<String>, dialect: &str) -> Self {
        Self {
            facts,
            dialect: dialect.to_string(),
            use_template: true,
        }
    }

    pub fn raw(facts: Vec<String>, dialect: &str) -> Self {
        Self {
            facts,
            dialect: dialect.to_string(),
            use_template: false,
        }
    }

    pub fn joined_facts(&self) -> String {
        self.facts.join(" ")
    }
}

/// Prompt-side token accounting for one query.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenAccounting {
    /// Tokens actually fed at read time (the question turn only).
    pub kv_prompt_tokens: usize,
    /// What the same conversation would cost with the facts in the prompt.
    pub rag_prompt_tokens: usize,
    /// Cached fact-segment tokens the pack delivered for free.
    pub fact_segment_tokens: usize,
}

impl TokenAccounting {
    pub fn savings(&self) -> usize {
        self.rag_prompt_tokens - self.kv_prompt_tokens
    }

    /// Savings as a percentage of the full-prompt cost, rounded to the
    /// nearest integer.
    pub fn savings_percent(&self) -> i64 {
        if self.rag_prompt_tokens == 0 {
            return 0;
        }
        (self.savings() as f64 / self.rag_prompt_tokens as f64 * 100.0).round() as i64
    }
}

/// Answer plus accounting from one read-phase run.
#[derive(Debug, Clone)]
pub struct QueryOutput {
    pub answer: String,
    pub answer_tokens: Vec<TokenId>,
    pub accounting: TokenAccounting,
    /// Distinct 4-gram fraction of the answer; low values flag repetition.
    pub degeneracy: f64,
}

/// Token streams for the two delivery arms of one conversation: what the
/// pack covers and what the read phase feeds.
pub(crate) struct SplitTokens {
    pub prefix: Vec<TokenId>,
    pub read: Vec<TokenId>,
}

impl SplitTokens {
    pub fn full(&self) -> Vec<TokenId> {
        self.prefix.iter().chain(&self.read).copied().collect()
    }
}

/// Tokenize the fact segment and read segment of one conversation, checking
/// that tokenizing the concatenated bytes reproduces the concatenated
/// streams (it can only differ when fact text collides with a special-token
/// spelling across the boundary).
pub(crate) fn split_tokens(
    req_facts: &str,
    use_template: bool,
    question: &str,
    templates: &TemplateSet,
    dialect: &str,
) -> Result<SplitTokens, PipelineError> {
    let template = templates.get(dialect)?;
    let specials = Some(templates.specials());
    let (prefix_bytes, read_bytes) = if use_template {
        let conv = template.conversation(req_facts, question);
        (
            conv.system_segment().to_vec(),
            conv.read_segment().to_vec(),
        )
    } else {
        // Raw ablation: bare fact bytes, then a normal user turn with no
        // system footer because no system block was opened.
        (
            req_facts.as_bytes().to_vec(),
            template.read_segment(question, false),
        )
    };
    let prefix_byte_len = prefix_bytes.len();
    let prefix = if use_template {
        tokenize(&prefix_bytes, specials)
    } else {
        tokenize(&prefix_bytes, None)
    };
    let read = tokenize(&read_bytes, specials);

    let mut joint_bytes = prefix_bytes;
    joint_bytes.extend_from_slice(&read_bytes);
    let joint = if use_template {
        tokenize(&joint_bytes, specials)
    } else {
        // The raw prefix stays special-free even next to the templated read
        // segment, so the joint stream tokenizes the halves the same way.
        let mut j = tokenize(&joint_bytes[..prefix_byte_len], None);
        j.extend(tokenize(&joint_bytes[prefix_byte_len..], specials));
        j
    };
    let split: Vec<TokenId> = prefix.iter().chain(&read).copied().collect();
    if joint != split {
        return Err(PipelineError::SplitUnstable);
    }
    Ok(SplitTokens { prefix, read })
}

pub(crate) fn fact_segment_tokens(
    req: &BuildRequest,
    templates: &TemplateSet,
) -> Result<Vec<TokenId>, PipelineError> {
    let joined = req.joined_facts();
    if req.use_template {
        let template = templates.get(&req.dialect)?;
        let bytes = template.open_system_segment(&joined);
        Ok(tokenize(&bytes, Some(templates.specials())))
    } else {
        Ok(tokenize(joined.as_bytes(), None))
    }
}

/// Write phase: render the fact segment, forward it once, store cache,
/// facts, and per-fact embeddings.
pub fn build_pack(
    req: &BuildRequest,
    model: &Model,
    templates: &TemplateSet,
) -> Result<KnowledgePack, PipelineError> {
    templates.get(&req.dialect)?;
    let tokens = fact_segment_tokens(req, templates)?;
    let cache = if tokens.is_empty() {
        model.empty_cache()
    } else {
        model.forward(&tokens, None)?.cache
    };
    Ok(KnowledgePack {
        cache,
        embeddings: req.facts.iter().map(|f| embed_text(f)).collect(),
        facts: req.facts.clone(),
        dialect: req.dialect.clone(),
        use_template: req.use_template,
        config: model.config().clone(),
    })
}

/// Read phase: frame the question as the user turn continuing the pack's
/// conversation and decode greedily against the cached prefix.
pub fn query_with_pack(
    pack: &KnowledgePack,
    question: &str,
    max_new: usize,
    model: &Model,
    templates: &TemplateSet,
) -> Result<QueryOutput, PipelineError> {
    if pack.fingerprint() != model.fingerprint() {
        return Err(PipelineError::FingerprintMismatch {
            pack: pack.fingerprint().to_string(),
            model: model.fingerprint().to_string(),
        });
    }
    let split = split_tokens(
        &pack.facts.join(" "),
        pack.use_template,
        question,
        templates,
        &pack.dialect,
    )?;
    let template = templates.get(&pack.dialect)?;
    let stop = templates.eot_id(template);
    let answer_tokens = model.generate_greedy(&split.read, Some(&pack.cache), max_new, stop)?;
    let specials = Some(templates.specials());
    let answer = String::from_utf8_lossy(&detokenize(&answer_tokens, specials)).into_owned();
    Ok(QueryOutput {
        accounting: TokenAccounting {
            kv_prompt_tokens: split.read.len(),
            rag_prompt_tokens: pack.cache.len() + split.read.len(),
            fact_segment_tokens: pack.cache.len(),
        },
        degeneracy: degeneracy_score(&answer_tokens),
        answer,
        answer_tokens,
    })
}

/// Sequential composition: process B's facts with A's cache as the prefix,
/// so B's rows take rotary positions continuing from A's length. The result
/// is bit-identical to building one pack over A's facts followed by B's.
pub fn compose_sequential(
    pack_a: &KnowledgePack,
    facts_b: &BuildRequest,
    model: &Model,
    templates: &TemplateSet,
) -> Result<KnowledgePack, PipelineError> {
    if pack_a.fingerprint() != model.fingerprint() {
        return Err(PipelineError::FingerprintMismatch {
            pack: pack_a.fingerprint().to_string(),
            model: model.fingerprint().to_string(),
        });
    }
    if facts_b.dialect != pack_a.dialect {
        return Err(PipelineError::ComposeMismatch(format!(
            "dialect {} vs {}",
            facts_b.dialect, pack_a.dialect
        )));
    }
    if facts_b.use_template != pack_a.use_template {
        return Err(PipelineError::ComposeMismatch(
            "one side is templated, the other raw".to_string(),
        ));
    }
    if facts_b.facts.is_empty() {
        return Ok(pack_a.clone());
    }
    // Continuation text inside the still-open system block: the same single
    // space the joined build would have placed between the fact groups.
    let separator = if pack_a.facts.is_empty() { "" } else { " " };
    let segment = format!("{separator}{}", facts_b.joined_facts());
    let tokens = if pack_a.use_template {
        tokenize(segment.as_bytes(), Some(templates.specials()))
    } else {
        tokenize(segment.as_bytes(), None)
    };
    let cache = model.forward(&tokens, Some(&pack_a.cache))?.cache;

    let mut facts = pack_a.facts.clone();
    facts.extend(facts_b.facts.iter().cloned());
    let mut embeddings = pack_a.embeddings.clone();
    embeddings.extend(facts_b.facts.iter().map(|f| embed_text(f)));
    Ok(KnowledgePack {
        cache,
        facts,
        embeddings,
        dialect: pack_a.dialect.clone(),
        use_template: pack_a.use_template,
        config: pack_a.config.clone(),
    })
}

/// Naive composition: raw tensor concatenation with no position correction.
/// B's rows keep the rotations of its standalone build, so the result is
/// positionally wrong whenever A is non-empty. Kept as the experimental
/// contrast arm; not for use.
pub fn compose_naive(
    pack_a: &KnowledgePack,
    pack_b: &KnowledgePack,
) -> Result<KnowledgePack, PipelineError> {
    if pack_a.fingerprint() != pack_b.fingerprint() {
        return Err(PipelineError::FingerprintMismatch {
            pack: pack_b.fingerprint().to_string(),
            model: pack_a.fingerprint().to_string(),
        });
    }
    if pack_a.dialect != pack_b.dialect || pack_a.use_template != pack_b.use_template {
        return Err(PipelineError::ComposeMismatch(
            "packs disagree on dialect or templating".to_string(),
        ));
    }
    let cache = pack_a.cache.concat_naive(&pack_b.cache);
    let mut facts = pack_a.facts.clone();
    facts.extend(pack_b.facts.iter().cloned());
    let mut embeddings = pack_a.embeddings.clone();
    embeddings.extend(pack_b.embeddings.iter().cloned());
    Ok(KnowledgePack {
        cache,
        facts,
        embeddings,
        dialect: pack_a.dialect.clone(),
        use_template: pack_a.use_template,
        config: pack_a.config.clone(),
    })
}

/// Fixed-field text table for one query's accounting.
pub fn accounting_table(acc: &TokenAccounting) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "tokens:");
    let _ = writeln!(out, "  kv prompt    {:>8}", acc.kv_prompt_tokens);
    let _ = writeln!(out, "  rag prompt   {:>8}", acc.rag_prompt_tokens);
    let _ = writeln!(
        out,
        "  savings      {:>8} ({}%)",
        acc.savings(),
        acc.savings_percent()
    );
    out
}
