//! Metrics and run aggregation.
//!
//! Per step, the adjusted distribution is compared with the base (with-context
//! greedy) distribution by Spearman's ρ over the base's top-k tokens. ρ is
//! averaged over the steps of an instance, then over the instances of a
//! label. Sensitivity is `|ρ(SWAP) − ρ(SYNTH)|`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bench::{ConflictInstance, Label};
use crate::dist::{DistError, TokenDistribution};
use crate::strategy::Decoded;
use crate::TokenId;

pub const DEFAULT_TOP_K: usize = 20;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("no records to aggregate")]
    EmptyRun,
    #[error("no label known for instance {0:?}")]
    MissingLabel(String),
    #[error(transparent)]
    Dist(#[from] DistError),
}

/// Token-id equality against a single-token answer.
pub fn exact_match(emitted: &[TokenId], gold: TokenId) -> bool {
    emitted.len() == 1 && emitted[0] == gold
}

/// Average (fractional) ranks, rank 1 for the largest value.
pub fn fractional_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end share ranks start+1..=end
        let avg = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    if x == y {
        return 1.0;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
}

/// Spearman's ρ between `p_base` and `p_adj` restricted to the top-`k` ids
/// of `p_base`.
///
/// Identical rank vectors give 1; a constant rank vector on one side only
/// gives 0.
pub fn spearman_topk(p_base: &TokenDistribution, p_adj: &TokenDistribution, k: usize) -> Result<f64, DistError> {
    p_base.check_same_vocab(p_adj)?;
    let top = p_base.top_k(k)?;
    let base: Vec<f64> = top.iter().map(|&(_, p)| p).collect();
    let adj: Vec<f64> = top.iter().map(|&(t, _)| p_adj.prob(t)).collect();
    Ok(pearson(&fractional_ranks(&base), &fractional_ranks(&adj)))
}

pub fn sensitivity(rho_conflict: f64, rho_noconflict: f64) -> f64 {
    (rho_conflict - rho_noconflict).abs()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub id: String,
    pub label: Label,
    pub emitted: Vec<TokenId>,
    pub gold: TokenId,
    pub correct: bool,
    pub alpha_max: f64,
    pub mean_jsd: f64,
    pub rhos: Vec<f64>,
}

impl InstanceRecord {
    /// Summarizes the traces of one decoded instance.
    pub fn from_decoded(instance: &ConflictInstance, decoded: &Decoded, top_k: usize) -> Result<Self, DistError> {
        let mut rhos = Vec::with_capacity(decoded.traces.len());
        let mut alpha_max = 0.0f64;
        let mut jsd_sum = 0.0;
        for t in &decoded.traces {
            let k = top_k.min(t.p_ctx.vocab_size());
            rhos.push(spearman_topk(&t.p_ctx, &t.p_final, k)?);
            alpha_max = alpha_max.max(t.alpha_used);
            jsd_sum += t.jsd_value;
        }
        let steps = decoded.traces.len().max(1) as f64;
        Ok(InstanceRecord {
            id: instance.id.clone(),
            label: instance.label,
            emitted: decoded.tokens.clone(),
            gold: instance.gold,
            correct: exact_match(&decoded.tokens, instance.gold),
            alpha_max,
            mean_jsd: jsd_sum / steps,
            rhos,
        })
    }

    pub fn mean_rho(&self) -> Option<f64> {
        if self.rhos.is_empty() {
            None
        } else {
            Some(self.rhos.iter().sum::<f64>() / self.rhos.len() as f64)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelStats {
    pub n: usize,
    pub accuracy: f64,
    pub mean_alpha_max: f64,
    pub mean_rho: f64,
}

impl LabelStats {
    fn from_records<'a>(records: impl Iterator<Item = &'a InstanceRecord>) -> Option<Self> {
        let (mut n, mut correct, mut alpha, mut rho, mut n_rho) = (0usize, 0usize, 0.0, 0.0, 0usize);
        for r in records {
            n += 1;
            correct += r.correct as usize;
            alpha += r.alpha_max;
            if let Some(m) = r.mean_rho() {
                rho += m;
                n_rho += 1;
            }
        }
        (n > 0).then(|| LabelStats {
            n,
            accuracy: correct as f64 / n as f64,
            mean_alpha_max: alpha / n as f64,
            mean_rho: if n_rho > 0 { rho / n_rho as f64 } else { f64::NAN },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub strategy: String,
    pub overall: LabelStats,
    pub labels: BTreeMap<Label, LabelStats>,
    /// Absent unless both SWAP and SYNTH records exist.
    pub sensitivity: Option<f64>,
}

impl RunSummary {
    pub fn label(&self, label: Label) -> Option<&LabelStats> {
        self.labels.get(&label)
    }
}

/// Aggregates records whose labels are looked up in `labels` by id.
pub fn aggregate(
    strategy: &str,
    records: &[InstanceRecord],
    labels: &BTreeMap<String, Label>,
) -> Result<RunSummary, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyRun);
    }
    let mut sorted: Vec<(&InstanceRecord, Label)> = records
        .iter()
        .map(|r| {
            labels
                .get(&r.id)
                .map(|&l| (r, l))
                .ok_or_else(|| EvalError::MissingLabel(r.id.clone()))
        })
        .collect::<Result<_, _>>()?;
    sorted.sort_by(|a, b| a.0.id.cmp(&b.0.id));

    let overall = LabelStats::from_records(sorted.iter().map(|(r, _)| *r)).expect("non-empty");
    let mut by_label = BTreeMap::new();
    for label in Label::ALL {
        if let Some(stats) = LabelStats::from_records(sorted.iter().filter(|(_, l)| *l == label).map(|(r, _)| *r)) {
            by_label.insert(label, stats);
        }
    }
    let sensitivity = match (by_label.get(&Label::Swap), by_label.get(&Label::Synth)) {
        (Some(a), Some(b)) if a.mean_rho.is_finite() && b.mean_rho.is_finite() => {
            Some(sensitivity(a.mean_rho, b.mean_rho))
        }
        _ => None,
    };
    Ok(RunSummary {
        strategy: strategy.to_string(),
        overall,
        labels: by_label,
        sensitivity,
    })
}

/// Aggregates using the label stored in each record.
pub fn aggregate_records(strategy: &str, records: &[InstanceRecord]) -> Result<RunSummary, EvalError> {
    let labels = records.iter().map(|r| (r.id.clone(), r.label)).collect();
    aggregate(strategy, records, &labels)
}

/// One line of a results file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ResultLine {
    Instance(InstanceRecord),
    Summary(RunSummary),
    /// Written when a run stops early; the records before it are complete.
    Truncated { strategy: String, completed: usize, reason: String },
}

pub const CSV_HEADER: &str = "strategy,label,n,accuracy,mean_alpha_max,mean_rho";

fn fmt_f(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.6}")
    } else {
        "NA".to_string()
    }
}

/// CSV rows for `summaries` ordered by strategy name: one row per label, an
/// `ALL` row and a `SENSITIVITY` row (value in the `mean_rho` column).
pub fn to_csv(summaries: &[RunSummary]) -> String {
    let mut sorted: Vec<&RunSummary> = summaries.iter().collect();
    sorted.sort_by(|a, b| a.strategy.cmp(&b.strategy));
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for s in sorted {
        let name = csv_field(&s.strategy);
        let mut row = |label: &str, st: &LabelStats| {
            let _ = writeln!(
                out,
                "{name},{label},{},{},{},{}",
                st.n,
                fmt_f(st.accuracy),
                fmt_f(st.mean_alpha_max),
                fmt_f(st.mean_rho)
            );
        };
        for (label, st) in &s.labels {
            row(label.as_str(), st);
        }
        row("ALL", &s.overall);
        let n_pair: usize = [Label::Swap, Label::Synth]
            .iter()
            .filter_map(|l| s.labels.get(l))
            .map(|st| st.n)
            .sum();
        let _ = writeln!(
            out,
            "{name},SENSITIVITY,{n_pair},,,{}",
            s.sensitivity.map_or("NA".to_string(), fmt_f)
        );
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(p: &[f64]) -> TokenDistribution {
        TokenDistribution::from_probs(p).unwrap()
    }

    fn record(id: &str, label: Label, correct: bool, alpha: f64, rhos: Vec<f64>) -> InstanceRecord {
        InstanceRecord {
            id: id.into(),
            label,
            emitted: vec![5],
            gold: if correct { 5 } else { 6 },
            correct,
            alpha_max: alpha,
            mean_jsd: alpha,
            rhos,
        }
    }

    #[test]
    fn exact_match_cases() {
        assert!(exact_match(&[4], 4));
        assert!(!exact_match(&[4, 5], 4));
        assert!(!exact_match(&[], 4));
    }

    #[test]
    fn spearman_examples() {
        let base = d(&[0.5, 0.3, 0.2]);
        assert_eq!(spearman_topk(&base, &base, 3).unwrap(), 1.0);
        let reversed = d(&[0.2, 0.3, 0.5]);
        assert!((spearman_topk(&base, &reversed, 3).unwrap() + 1.0).abs() < 1e-12);
        let swapped = d(&[0.5, 0.2, 0.3]);
        assert!((spearman_topk(&base, &swapped, 3).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn spearman_errors() {
        let a = d(&[0.5, 0.5]);
        assert!(matches!(
            spearman_topk(&a, &d(&[0.2, 0.3, 0.5]), 2),
            Err(DistError::VocabMismatch { .. })
        ));
        assert!(matches!(spearman_topk(&a, &a, 3), Err(DistError::KOutOfRange { .. })));
        assert!(matches!(spearman_topk(&a, &a, 0), Err(DistError::KOutOfRange { .. })));
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(fractional_ranks(&[0.1, 0.5, 0.5, 0.2]), vec![4.0, 1.5, 1.5, 3.0]);
    }

    #[test]
    fn sensitivity_matches_reported_table() {
        let cad = sensitivity(0.56, 0.57);
        let ada = sensitivity(0.86, 0.94);
        assert!((cad - 0.01).abs() < 1e-12);
        assert!((ada - 0.08).abs() < 1e-12);
        assert_eq!(sensitivity(0.3, 0.3), 0.0);
    }

    #[test]
    fn aggregate_accuracy_and_absent_sensitivity() {
        let records = vec![
            record("a", Label::Swap, true, 0.4, vec![0.5]),
            record("b", Label::Swap, false, 0.2, vec![0.7, 0.9]),
        ];
        let s = aggregate_records("cad", &records).unwrap();
        assert_eq!(s.overall.accuracy, 0.5);
        assert!((s.overall.mean_alpha_max - 0.3).abs() < 1e-15);
        assert!((s.overall.mean_rho - 0.65).abs() < 1e-15);
        assert_eq!(s.sensitivity, None);
    }

    #[test]
    fn aggregate_sensitivity_and_errors() {
        let records = vec![
            record("a", Label::Swap, true, 0.4, vec![0.5]),
            record("b", Label::Synth, true, 0.1, vec![0.75]),
        ];
        let s = aggregate_records("adacad", &records).unwrap();
        assert_eq!(s.sensitivity, Some(0.25));
        assert_eq!(aggregate_records("x", &[]), Err(EvalError::EmptyRun));
        let labels = BTreeMap::from([("a".to_string(), Label::Swap)]);
        assert_eq!(
            aggregate("x", &records, &labels),
            Err(EvalError::MissingLabel("b".into()))
        );
    }

    #[test]
    fn csv_layout() {
        let records = vec![
            record("a", Label::Swap, true, 0.4, vec![0.5]),
            record("b", Label::Synth, false, 0.1, vec![1.0]),
        ];
        let s = aggregate_records("greedy", &records).unwrap();
        let csv = to_csv(&[s]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines[1], "greedy,SWAP,1,1.000000,0.400000,0.500000");
        assert_eq!(lines[2], "greedy,SYNTH,1,0.000000,0.100000,1.000000");
        assert_eq!(lines[3], "greedy,ALL,2,0.500000,0.250000,0.750000");
        assert_eq!(lines[4], "greedy,SENSITIVITY,2,,,0.500000");
    }

    #[test]
    fn result_line_tagging() {
        let line = ResultLine::Truncated {
            strategy: "greedy".into(),
            completed: 3,
            reason: "boom".into(),
        };
        let json = serde_json::to_string(&line).unwrap();
        assert!(json.starts_with(r#"{"type":"truncated""#));
        assert_eq!(serde_json::from_str::<ResultLine>(&json).unwrap(), line);
    }
}
