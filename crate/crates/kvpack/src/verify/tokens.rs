//! Token-cost accounting: what the question costs with a cached fact prefix
//! versus with the facts re-sent in the prompt at every step.

use std::fmt::Write as _;

use super::VerifyError;

/// One accumulation step's costs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CostRow {
    pub step: usize,
    /// Prompt tokens with the facts cached: just the question.
    pub kv_tokens: usize,
    /// Prompt tokens with every fact so far in the prompt.
    pub rag_tokens: usize,
    pub savings: usize,
    /// Savings over the full-prompt cost, rounded to the nearest percent.
    pub savings_percent: i64,
}

#[derive(Debug, Clone)]
pub struct TokenCostReport {
    pub rows: Vec<CostRow>,
}

impl TokenCostReport {
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "step   kv tok   rag tok   savings");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:>4} {:>8} {:>9} {:>9} ({}%)",
                r.step, r.kv_tokens, r.rag_tokens, r.savings, r.savings_percent
            );
        }
        out
    }

    pub fn records(&self) -> String {
        let mut out = String::new();
        for r in &self.rows {
            let _ = writeln!(
                out,
                "kvpack-record event=token-cost step={} kv={} rag={} savings={} pct={}",
                r.step, r.kv_tokens, r.rag_tokens, r.savings, r.savings_percent
            );
        }
        out
    }
}

/// Cost model over `steps` accumulation steps: the cached path pays only the
/// question at every step; the prompt path pays question + frame + every
/// fact retrieved so far.
pub fn token_cost_report(
    steps: usize,
    question_tokens: usize,
    per_step_fact_tokens: &[usize],
    fixed_frame_tokens: usize,
) -> Result<TokenCostReport, VerifyError> {
    if per_step_fact_tokens.len() != steps {
        return Err(VerifyError::StepMismatch {
            got: per_step_fact_tokens.len(),
            steps,
        });
    }
    let mut rows = Vec::with_capacity(steps);
    let mut accumulated = 0usize;
    for (i, &fact_tokens) in per_step_fact_tokens.iter().enumerate() {
        accumulated += fact_tokens;
        let kv = question_tokens;
        let rag = question_tokens + fixed_frame_tokens + accumulated;
        let savings = rag - kv;
        let pct = if rag == 0 {
            0
        } else {
            (savings as f64 / rag as f64 * 100.0).round() as i64
        };
        rows.push(CostRow {
            step: i + 1,
            kv_tokens: kv,
            rag_tokens: rag,
            savings,
            savings_percent: pct,
        });
    }
    Ok(TokenCostReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn five_step_row_hits_95_percent() {
        // Per-step fact costs chosen so the running totals land on the
        // published multi-step prompt sizes: 176, 299, 438, ..., 739.
        let report = token_cost_report(5, 35, &[141, 123, 139, 150, 151], 0).unwrap();
        let last = report.rows.last().unwrap();
        assert_eq!(last.rag_tokens, 739);
        assert_eq!(last.savings, 704);
        assert_eq!(last.savings_percent, 95);
    }

    #[test]
    fn single_step_row() {
        let report = token_cost_report(1, 31, &[157], 0).unwrap();
        let row = &report.rows[0];
        assert_eq!(row.rag_tokens, 188);
        assert_eq!(row.savings, 157);
        assert_eq!(row.savings_percent, 84);
    }

    #[test]
    fn kv_constant_rag_strictly_increasing() {
        let report = token_cost_report(6, 12, &[5, 9, 1, 30, 2, 7], 4).unwrap();
        for w in report.rows.windows(2) {
            assert_eq!(w[0].kv_tokens, w[1].kv_tokens);
            assert!(w[1].rag_tokens > w[0].rag_tokens);
        }
    }

    #[test]
    fn zero_facts_zero_frame_parity() {
        let report = token_cost_report(3, 10, &[0, 0, 0], 0).unwrap();
        for r in &report.rows {
            assert_eq!(r.kv_tokens, r.rag_tokens);
            assert_eq!(r.savings, 0);
            assert_eq!(r.savings_percent, 0);
        }
    }

    #[test]
    fn length_mismatch_rejected() {
        assert!(matches!(
            token_cost_report(3, 10, &[1, 2], 0),
            Err(VerifyError::StepMismatch { got: 2, steps: 3 })
        ));
    }
}
