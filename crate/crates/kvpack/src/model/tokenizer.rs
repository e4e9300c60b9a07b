//! Byte-level tokenizer. Ids 0–255 are raw bytes; special tokens get
//! reserved ids from 256 upward in registration order, so no vocabulary
//! files are needed.

pub type TokenId = u32;

/// First id available for special tokens.
pub const FIRST_SPECIAL_ID: TokenId = 256;

/// Registry of special-token spellings and their reserved ids.
#[derive(Debug, Clone, Default)]
pub struct SpecialTokens {
    /// (spelling, id), kept sorted by descending spelling length so greedy
    /// matching always prefers the longest spelling.
    entries: Vec<(String, TokenId)>,
}

impl SpecialTokens {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a spelling, returning its id. Re-registering is a no-op.
    pub fn register(&mut self, spelling: &str) -> TokenId {
        if let Some(id) = self.id_of(spelling) {
            return id;
        }
        let id = FIRST_SPECIAL_ID + self.entries.len() as TokenId;
        self.entries.push((spelling.to_string(), id));
        self.entries
            .sort_by(|a, b| b.0.len().cmp(&a.0.len()).then(a.1.cmp(&b.1)));
        id
    }

    pub fn id_of(&self, spelling: &str) -> Option<TokenId> {
        self.entries
            .iter()
            .find(|(s, _)| s == spelling)
            .map(|(_, id)| *id)
    }

    pub fn spelling_of(&self, id: TokenId) -> Option<&str> {
        self.entries
            .iter()
            .find(|(_, i)| *i == id)
            .map(|(s, _)| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// (spelling, id) pairs in id order.
    pub fn iter_by_id(&self) -> impl Iterator<Item = (&str, TokenId)> {
        let mut v: Vec<_> = self.entries.iter().map(|(s, i)| (s.as_str(), *i)).collect();
        v.sort_by_key(|(_, id)| *id);
        v.into_iter()
    }
}

/// Map bytes to token ids. With a registry, registered spellings map to
/// their reserved ids (longest match wins); without one, every byte maps to
/// itself, so special-token spellings are treated as ordinary bytes.
pub fn tokenize(text: &[u8], specials: Option<&SpecialTokens>) -> Vec<TokenId> {
    let mut out = Vec::with_capacity(text.len());
    let mut pos = 0;
    while pos < text.len() {
        if let Some(reg) = specials {
            if let Some((spelling, id)) = reg
                .entries
                .iter()
                .find(|(s, _)| text[pos..].starts_with(s.as_bytes()))
            {
                out.push(*id);
                pos += spelling.len();
                continue;
            }
        }
        out.push(TokenId::from(text[pos]));
        pos += 1;
    }
    out
}

/// Inverse of [`tokenize`]: byte ids become bytes, special ids become their
/// spellings. Unregistered ids at or above 256 are dropped.
pub fn detokenize(tokens: &[TokenId], specials: Option<&SpecialTokens>) -> Vec<u8> {
    let mut out = Vec::with_capacity(tokens.len());
    for &t in tokens {
        if t < FIRST_SPECIAL_ID {
            out.push(t as u8);
        } else if let Some(reg) = specials {
            if let Some(s) = reg.spelling_of(t) {
                out.extend_from_slice(s.as_bytes());
            }
        }
    }
    out
}
