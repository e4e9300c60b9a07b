//! The bank index: k-means centroids plus fact texts and embeddings, with
//! the `KVBI` file format and query routing.

use std::fmt::Write as _;

use crate::kv::format::{ByteReader, ByteWriter, FormatError, FORMAT_VERSION, INDEX_MAGIC};

use super::embed::{cosine, embed_text, EmbeddingVector};
use super::kmeans::kmeans;
use super::RouteError;

/// Default bank sizing: one bank per 20 facts, rounded up.
pub fn default_bank_count(n_facts: usize) -> usize {
    n_facts.div_ceil(20)
}

/// Centroids, per-fact bank assignments, and the fact texts + embeddings
/// needed for lazy recompute. Immutable once built; safe to share.
#[derive(Debug, Clone)]
pub struct BankIndex {
    dim: usize,
    k: usize,
    seed: u64,
    centroids: Vec<Vec<f32>>,
    assignments: Vec<u32>,
    facts: Vec<String>,
    embeddings: Vec<EmbeddingVector>,
    /// Fact ids per bank, derived from assignments.
    members: Vec<Vec<u32>>,
}

/// Outcome of routing one query.
#[derive(Debug, Clone)]
pub struct RouteResult {
    pub bank: usize,
    /// (fact id, cosine to the query), best first.
    pub ranked: Vec<(u32, f64)>,
    /// The query embedded to the zero vector; bank 0 was chosen by
    /// tie-break and the ranking is vacuous.
    pub zero_query: bool,
}

impl BankIndex {
    /// Embed every fact and cluster into `k` banks (default one per 20
    /// facts). Only texts and embeddings are stored; caches are rebuilt on
    /// demand.
    pub fn build(facts: &[String], k: Option<usize>, seed: u64) -> Result<Self, RouteError> {
        if facts.is_empty() {
            return Err(RouteError::NoFacts);
        }
        let embeddings: Vec<EmbeddingVector> = facts.iter().map(|f| embed_text(f)).collect();
        let k = k.unwrap_or_else(|| default_bank_count(facts.len()));
        let result = kmeans(&embeddings, k, seed)?;
        let assignments: Vec<u32> = result.assignments.iter().map(|&a| a as u32).collect();
        let mut members = vec![Vec::new(); k];
        for (fact, &bank) in assignments.iter().enumerate() {
            members[bank as usize].push(fact as u32);
        }
        Ok(Self {
            dim: embeddings[0].dim(),
            k,
            seed,
            centroids: result.centroids,
            assignments,
            facts: facts.to_vec(),
            embeddings,
            members,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn facts(&self) -> &[String] {
        &self.facts
    }

    pub fn embeddings(&self) -> &[EmbeddingVector] {
        &self.embeddings
    }

    pub fn assignments(&self) -> &[u32] {
        &self.assignments
    }

    pub fn bank_members(&self, bank: usize) -> &[u32] {
        &self.members[bank]
    }

    pub fn bank_of(&self, fact: usize) -> usize {
        self.assignments[fact] as usize
    }

    /// Embed the query, pick the nearest centroid by cosine (ties to the
    /// lowest bank id), and rank that bank's facts by cosine to the query
    /// (ties to the lowest fact id). Returns at most `top_m` facts.
    pub fn route(&self, query: &str, top_m: usize) -> Result<RouteResult, RouteError> {
        if top_m == 0 {
            return Err(RouteError::BadTopM);
        }
        let q = embed_text(query);
        let zero_query = q.is_zero();
        let mut bank = 0usize;
        let mut best = f64::NEG_INFINITY;
        for (i, c) in self.centroids.iter().enumerate() {
            let s = cosine(q.as_slice(), c);
            if s > best {
                best = s;
                bank = i;
            }
        }
        let mut ranked: Vec<(u32, f64)> = self.members[bank]
            .iter()
            .map(|&f| (f, q.cosine(&self.embeddings[f as usize])))
            .collect();
        // Stable ordering: cosine descending, then fact id ascending.
        ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        ranked.truncate(top_m);
        Ok(RouteResult {
            bank,
            ranked,
            zero_query,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.magic(INDEX_MAGIC);
        w.u32(self.dim as u32);
        w.u32(self.k as u32);
        w.u64(self.seed);
        w.u32(self.facts.len() as u32);
        for c in &self.centroids {
            w.f32_slice(c);
        }
        for &a in &self.assignments {
            w.u32(a);
        }
        for (fact, emb) in self.facts.iter().zip(&self.embeddings) {
            w.str(fact);
            w.f32_slice(emb.as_slice());
        }
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut r = ByteReader::new(bytes);
        r.magic(INDEX_MAGIC)?;
        let dim = r.u32()? as usize;
        let k = r.u32()? as usize;
        let seed = r.u64()?;
        let n = r.u32()? as usize;
        if k == 0 || k > n {
            return Err(FormatError::BadField(format!("k = {k} with {n} facts")));
        }
        let mut centroids = Vec::with_capacity(k);
        for _ in 0..k {
            centroids.push(r.f32_vec(dim)?);
        }
        let mut assignments = Vec::with_capacity(n);
        for _ in 0..n {
            let a = r.u32()?;
            if a as usize >= k {
                return Err(FormatError::BadField(format!(
                    "assignment {a} out of range for {k} banks"
                )));
            }
            assignments.push(a);
        }
        let mut facts = Vec::with_capacity(n);
        let mut embeddings = Vec::with_capacity(n);
        for _ in 0..n {
            facts.push(r.str()?);
            embeddings.push(EmbeddingVector::from_raw(r.f32_vec(dim)?));
        }
        r.finish()?;
        let mut members = vec![Vec::new(); k];
        for (fact, &bank) in assignments.iter().enumerate() {
            members[bank as usize].push(fact as u32);
        }
        Ok(Self {
            dim,
            k,
            seed,
            centroids,
            assignments,
            facts,
            embeddings,
            members,
        })
    }

    pub fn inspect(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "kind            index (KVBI v{FORMAT_VERSION})");
        let _ = writeln!(out, "embedding dim   {}", self.dim);
        let _ = writeln!(out, "banks           {}", self.k);
        let _ = writeln!(out, "facts           {}", self.facts.len());
        let _ = writeln!(out, "seed            {}", self.seed);
        let bytes = self.to_bytes().len();
        let _ = writeln!(
            out,
            "storage         {} bytes ({:.0} bytes/fact)",
            bytes,
            bytes as f64 / self.facts.len() as f64
        );
        for (b, m) in self.members.iter().enumerate() {
            let _ = writeln!(out, "bank {b:>3}        {} facts", m.len());
        }
        out
    }
}
