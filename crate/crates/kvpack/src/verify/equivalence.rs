//! The central check: for each case, deliver the facts once as a cached
//! prefix and once inside the prompt, then require the caches to match at
//! tolerance zero and the decoded outputs to match token for token.

use std::fmt::Write as _;

use crate::kv::caches_equal;
use crate::model::{detokenize, tokenize, Model, TemplateSet, TokenId};
use crate::pipeline::{self, BuildRequest};

use super::metrics::exact_match;
use super::VerifyError;

/// One (facts, question, optional gold) case.
#[derive(Debug, Clone)]
pub struct EquivCase {
    pub facts: Vec<String>,
    pub question: String,
    pub gold: Option<String>,
    /// Misconfiguration knob: join facts with this separator in the joint
    /// arm instead of the single space the pack arm uses. Anything but a
    /// single space makes the two arms render different conversations,
    /// which the harness must flag instead of scoring.
    pub joint_separator: Option<String>,
}

impl EquivCase {
    pub fn new(facts: Vec<String>, question: &str, gold: Option<&str>) -> Self {
        Self {
            facts,
            question: question.to_string(),
            gold: gold.map(str::to_string),
            joint_separator: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CaseOutcome {
    /// Arms rendered different token streams; excluded from divergence
    /// tallies because it is a harness bug, not a model divergence.
    pub harness_mismatch: bool,
    pub cache_diverged: bool,
    pub max_cache_diff: f64,
    /// First token index where the two outputs differ, if they do.
    pub output_first_divergence: Option<usize>,
    /// Detokenized outputs compared as bytes.
    pub bytes_identical: bool,
    pub pack_correct: Option<bool>,
    pub joint_correct: Option<bool>,
}

#[derive(Debug, Clone)]
pub struct EquivalenceReport {
    pub outcomes: Vec<CaseOutcome>,
    pub max_new: usize,
}

impl EquivalenceReport {
    pub fn cases(&self) -> usize {
        self.outcomes.len()
    }

    pub fn scored_cases(&self) -> usize {
        self.outcomes.iter().filter(|o| !o.harness_mismatch).count()
    }

    pub fn harness_mismatches(&self) -> usize {
        self.outcomes.iter().filter(|o| o.harness_mismatch).count()
    }

    pub fn cache_divergences(&self) -> usize {
        self.outcomes.iter().filter(|o| o.cache_diverged).count()
    }

    pub fn output_divergences(&self) -> usize {
        self.outcomes
            .iter()
            .filter(|o| o.output_first_divergence.is_some())
            .count()
    }

    /// (both correct, both wrong, disagree) over gold-scored cases.
    pub fn tallies(&self) -> (usize, usize, usize) {
        let mut both_correct = 0;
        let mut both_wrong = 0;
        let mut disagree = 0;
        for o in &self.outcomes {
            match (o.pack_correct, o.joint_correct) {
                (Some(true), Some(true)) => both_correct += 1,
                (Some(false), Some(false)) => both_wrong += 1,
                (Some(_), Some(_)) => disagree += 1,
                _ => {}
            }
        }
        (both_correct, both_wrong, disagree)
    }

    /// Nothing diverged, nothing was excluded.
    pub fn clean(&self) -> bool {
        self.harness_mismatches() == 0
            && self.cache_divergences() == 0
            && self.output_divergences() == 0
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        let n = self.scored_cases();
        let _ = writeln!(out, "cache divergences: {}/{n}", self.cache_divergences());
        let _ = writeln!(out, "output divergences: {}/{n}", self.output_divergences());
        let _ = writeln!(
            out,
            "divergences: {}/{n}",
            self.cache_divergences().max(self.output_divergences())
        );
        if self.harness_mismatches() > 0 {
            let _ = writeln!(
                out,
                "harness rendering mismatches: {} (excluded from tallies)",
                self.harness_mismatches()
            );
        }
        let (bc, bw, dis) = self.tallies();
        if bc + bw + dis > 0 {
            let _ = writeln!(
                out,
                "gold tallies: {bc} both correct, {bw} both wrong, {dis} disagree"
            );
        }
        out
    }

    pub fn records(&self) -> String {
        let mut out = String::new();
        for (i, o) in self.outcomes.iter().enumerate() {
            let _ = writeln!(
                out,
                "kvpack-record event=equivalence case={i} harness_mismatch={} cache_diverged={} max_cache_diff={:.3e} output_divergence={} bytes_identical={}",
                o.harness_mismatch,
                o.cache_diverged,
                o.max_cache_diff,
                o.output_first_divergence
                    .map_or("none".to_string(), |p| p.to_string()),
                o.bytes_identical,
            );
        }
        out
    }
}

/// Run both delivery arms for every case with byte-identical rendering,
/// compare caches at tolerance zero and outputs token for token, and score
/// against gold when present.
pub fn check_equivalence(
    cases: &[EquivCase],
    max_new: usize,
    dialect: &str,
    model: &Model,
    templates: &TemplateSet,
) -> Result<EquivalenceReport, VerifyError> {
    if cases.is_empty() {
        return Err(VerifyError::NoCases);
    }
    let template = templates.get(dialect).map_err(pipeline::PipelineError::from)?;
    let specials = Some(templates.specials());
    let stop = templates.eot_id(template);

    let mut outcomes = Vec::with_capacity(cases.len());
    for case in cases {
        // Pack arm.
        let req = BuildRequest::templated(case.facts.clone(), dialect);
        let pack = pipeline::build_pack(&req, model, templates)?;
        let split = match pipeline::split_tokens(
            &req.joined_facts(),
            true,
            &case.question,
            templates,
            dialect,
        ) {
            Ok(s) => s,
            Err(pipeline::PipelineError::SplitUnstable) => {
                outcomes.push(harness_mismatch_outcome());
                continue;
            }
            Err(e) => return Err(e.into()),
        };

        // Joint arm: one conversation rendered in a single pass.
        let sep = case.joint_separator.as_deref().unwrap_or(" ");
        let joint_conv = template.conversation(&case.facts.join(sep), &case.question);
        let joint_tokens = tokenize(&joint_conv.full, specials);

        // Both arms must be feeding the same token stream.
        if joint_tokens != split.full() {
            outcomes.push(harness_mismatch_outcome());
            continue;
        }

        let joint_forward = model.forward(&joint_tokens, None)?;
        let prefix_slice = joint_forward
            .cache
            .slice_prefix(split.prefix.len())
            .expect("prefix within joint cache");
        let comparison = caches_equal(&pack.cache, &prefix_slice, 0.0);

        let pack_out = model.generate_greedy(&split.read, Some(&pack.cache), max_new, stop)?;
        let joint_out = model.generate_greedy(&joint_tokens, None, max_new, stop)?;
        let output_first_divergence = first_divergence(&pack_out, &joint_out);
        let bytes_identical =
            detokenize(&pack_out, specials) == detokenize(&joint_out, specials);

        let score = |tokens: &[TokenId]| {
            case.gold.as_deref().map(|gold| {
                let text = String::from_utf8_lossy(&detokenize(tokens, specials)).into_owned();
                exact_match(&text, gold)
            })
        };
        outcomes.push(CaseOutcome {
            harness_mismatch: false,
            cache_diverged: !comparison.equal(),
            max_cache_diff: comparison.max_diff(),
            output_first_divergence,
            bytes_identical,
            pack_correct: score(&pack_out),
            joint_correct: score(&joint_out),
        });
    }
    Ok(EquivalenceReport { outcomes, max_new })
}

fn harness_mismatch_outcome() -> CaseOutcome {
    CaseOutcome {
        harness_mismatch: true,
        cache_diverged: false,
        max_cache_diff: 0.0,
        output_first_divergence: None,
        bytes_identical: true,
        pack_correct: None,
        joint_correct: None,
    }
}

fn first_divergence(a: &[TokenId], b: &[TokenId]) -> Option<usize> {
    if a == b {
        return None;
    }
    Some(
        a.iter()
            .zip(b.iter())
            .position(|(x, y)| x != y)
            .unwrap_or_else(|| a.len().min(b.len())),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn setup() -> (Model, TemplateSet) {
        (
            Model::new(ModelConfig::default()).unwrap(),
            TemplateSet::builtin(),
        )
    }

    fn cases(n: usize) -> Vec<EquivCase> {
        (0..n)
            .map(|i| {
                EquivCase::new(
                    vec![
                        format!("item {i} lives in bin {}", i * 3 % 7),
                        format!("bin {} is painted color {}", i * 3 % 7, i % 5),
                    ],
                    &format!("where is item {i}?"),
                    None,
                )
            })
            .collect()
    }

    #[test]
    fn clean_run_has_zero_divergences() {
        let (model, templates) = setup();
        let report = check_equivalence(&cases(8), 12, "chatml", &model, &templates).unwrap();
        assert_eq!(report.cases(), 8);
        assert!(report.clean(), "{}", report.summary());
        assert!(report
            .outcomes
            .iter()
            .all(|o| o.bytes_identical && o.max_cache_diff == 0.0));
    }

    #[test]
    fn both_dialects_clean() {
        let (model, templates) = setup();
        for dialect in ["chatml", "header"] {
            let report =
                check_equivalence(&cases(4), 8, dialect, &model, &templates).unwrap();
            assert!(report.clean(), "dialect {dialect}: {}", report.summary());
        }
    }

    #[test]
    fn mismatched_separator_is_harness_bug_not_divergence() {
        let (model, templates) = setup();
        let mut skewed = EquivCase::new(
            vec!["alpha beta".to_string(), "gamma delta".to_string()],
            "which letters?",
            None,
        );
        skewed.joint_separator = Some(" | ".to_string());
        let report = check_equivalence(&[skewed], 8, "chatml", &model, &templates).unwrap();
        assert_eq!(report.harness_mismatches(), 1);
        assert_eq!(report.cache_divergences(), 0);
        assert_eq!(report.output_divergences(), 0);
        assert_eq!(report.scored_cases(), 0);
        assert!(!report.clean());
    }

    #[test]
    fn gold_tallies_count_agreement() {
        let (model, templates) = setup();
        // Both arms produce identical outputs, so whatever the toy model
        // says, the tally lands in both-correct or both-wrong, never
        // disagree. Gold "a" is a near-certain substring; gold "\u{1}\u{2}"
        // a near-certain miss.
        let mut cs = cases(2);
        cs[0].gold = Some("a".to_string());
        cs[1].gold = Some("\u{1}\u{2}\u{3}\u{4}".to_string());
        let report = check_equivalence(&cs, 16, "chatml", &model, &templates).unwrap();
        let (bc, bw, dis) = report.tallies();
        assert_eq!(dis, 0);
        assert_eq!(bc + bw + dis, 2);
    }

    #[test]
    fn empty_case_list_rejected() {
        let (model, templates) = setup();
        assert!(matches!(
            check_equivalence(&[], 8, "chatml", &model, &templates),
            Err(VerifyError::NoCases)
        ));
    }
}
