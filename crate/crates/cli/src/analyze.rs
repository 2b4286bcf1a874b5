//! Offline best-of-N analysis over completion records: per-prompt seeded
//! subsampling, selection under each requested reward, the coverage skyline,
//! and bootstrap percentile intervals over prompts.

use crate::records::CompletionRecord;
use anyhow::{bail, Result};
use serde::{Deserialize, Serialize};
use sharpen_core::decode::{bon_select, BonCandidate, SelfReward};
use sharpen_core::RngStream;
use std::collections::BTreeMap;

/// Analyzer request.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalyzeRequest {
    /// Subsample sizes, e.g. `[1, 2, 5, 10, 20, 50]`.
    pub ns: Vec<u64>,
    pub rewards: Vec<SelfReward>,
    pub seed: u64,
    /// Baseline accuracy for the lift columns (e.g. externally measured
    /// greedy accuracy). When absent, the log-likelihood accuracy at the
    /// smallest N is used.
    pub baseline: Option<f64>,
    /// Bootstrap resamples for the percentile intervals.
    pub bootstrap: usize,
}

impl Default for AnalyzeRequest {
    fn default() -> Self {
        AnalyzeRequest {
            ns: vec![1, 2, 5, 10, 20, 50],
            rewards: vec![SelfReward::LogLikelihood],
            seed: 0,
            baseline: None,
            bootstrap: 1000,
        }
    }
}

/// A 95% percentile interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

/// One `(reward, N)` row of the analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeRow {
    pub reward: SelfReward,
    pub n: u64,
    pub prompts: usize,
    pub selection_errors: usize,
    /// Fraction of prompts whose selected response is labeled correct;
    /// absent when no record carries labels.
    pub accuracy: Option<Interval>,
    /// Mean selected log-probability over prompts with a selection.
    pub mean_logprob: Interval,
    /// Fraction of prompts with any correct response among the subsample.
    pub coverage: Option<Interval>,
    /// Accuracy minus baseline, in absolute percentage points.
    pub lift_abs: Option<f64>,
    /// Accuracy over baseline, relative.
    pub lift_rel: Option<f64>,
}

/// Full analysis report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalyzeReport {
    pub rows: Vec<AnalyzeRow>,
    pub baseline: Option<f64>,
    pub version: String,
}

struct PromptOutcome {
    accuracy: Option<f64>,
    logprob: Option<f64>,
    coverage: Option<f64>,
}

/// Run the analysis. Records are grouped by prompt; for each `(reward, N)`
/// pair every prompt contributes one seeded subsample (without
/// replacement), one selection, and one skyline indicator.
pub fn bon_analyze(records: &[CompletionRecord], request: &AnalyzeRequest) -> Result<AnalyzeReport> {
    if records.is_empty() {
        bail!("no completion records to analyze");
    }
    if request.ns.is_empty() || request.rewards.is_empty() {
        bail!("need at least one N and one reward");
    }
    let mut by_prompt: BTreeMap<&str, Vec<&CompletionRecord>> = BTreeMap::new();
    for rec in records {
        by_prompt.entry(rec.prompt_id.as_str()).or_default().push(rec);
    }
    let any_labels = records.iter().any(|r| r.correct.is_some());
    let root = RngStream::new(request.seed, 0xb0a);

    let mut rows = Vec::new();
    for (reward_idx, &reward) in request.rewards.iter().enumerate() {
        for (n_idx, &n) in request.ns.iter().enumerate() {
            if n == 0 {
                bail!("subsample size N must be at least 1");
            }
            let mut outcomes = Vec::with_capacity(by_prompt.len());
            let mut selection_errors = 0usize;
            for (prompt_idx, (_, recs)) in by_prompt.iter().enumerate() {
                let mut rng = root
                    .split(reward_idx as u64)
                    .split(n_idx as u64)
                    .split(prompt_idx as u64);
                let sample = subsample(recs, n as usize, &mut rng);
                let items: Vec<BonCandidate<&CompletionRecord>> = sample
                    .iter()
                    .map(|r| BonCandidate {
                        item: *r,
                        logprob: r.logprob,
                        length: r.length as usize,
                        answer: r.answer.clone(),
                        correct: r.correct,
                    })
                    .collect();
                let coverage = if any_labels {
                    Some(if sample.iter().any(|r| r.correct == Some(true)) {
                        1.0
                    } else {
                        0.0
                    })
                } else {
                    None
                };
                match bon_select(&items, reward) {
                    Ok(sel) => {
                        let chosen = items[sel].item;
                        outcomes.push(PromptOutcome {
                            accuracy: any_labels
                                .then(|| if chosen.correct == Some(true) { 1.0 } else { 0.0 }),
                            logprob: Some(chosen.logprob),
                            coverage,
                        });
                    }
                    Err(_) => {
                        // Per-prompt selection failures are reported, not
                        // fatal; the prompt scores as incorrect.
                        selection_errors += 1;
                        outcomes.push(PromptOutcome {
                            accuracy: any_labels.then_some(0.0),
                            logprob: None,
                            coverage,
                        });
                    }
                }
            }
            let mut boot_rng = root.split(0xced).split(reward_idx as u64).split(n_idx as u64);
            let accuracy = interval_of(
                &outcomes.iter().filter_map(|o| o.accuracy).collect::<Vec<_>>(),
                request.bootstrap,
                &mut boot_rng,
            );
            let logprob = interval_of(
                &outcomes.iter().filter_map(|o| o.logprob).collect::<Vec<_>>(),
                request.bootstrap,
                &mut boot_rng,
            );
            let coverage = interval_of(
                &outcomes.iter().filter_map(|o| o.coverage).collect::<Vec<_>>(),
                request.bootstrap,
                &mut boot_rng,
            );
            rows.push(AnalyzeRow {
                reward,
                n,
                prompts: by_prompt.len(),
                selection_errors,
                accuracy,
                mean_logprob: logprob.unwrap_or(Interval { mean: f64::NAN, lo: f64::NAN, hi: f64::NAN }),
                coverage,
                lift_abs: None,
                lift_rel: None,
            });
        }
    }

    // Lift columns: both absolute percentage points and relative lift,
    // against the supplied baseline or the smallest-N log-likelihood row.
    let baseline = request.baseline.or_else(|| {
        rows.iter()
            .filter(|r| r.reward == SelfReward::LogLikelihood)
            .min_by_key(|r| r.n)
            .and_then(|r| r.accuracy.map(|i| i.mean))
    });
    if let Some(b) = baseline {
        for row in &mut rows {
            if let Some(acc) = row.accuracy {
                row.lift_abs = Some((acc.mean - b) * 100.0);
                row.lift_rel = if b > 0.0 { Some((acc.mean - b) / b * 100.0) } else { None };
            }
        }
    }

    Ok(AnalyzeReport { rows, baseline, version: crate::version_tag() })
}

fn subsample<'a>(
    recs: &[&'a CompletionRecord],
    n: usize,
    rng: &mut RngStream,
) -> Vec<&'a CompletionRecord> {
    if n >= recs.len() {
        return recs.to_vec();
    }
    // Partial Fisher-Yates over a copy of the index list.
    let mut idx: Vec<usize> = (0..recs.len()).collect();
    for i in 0..n {
        let j = i + rng.below(idx.len() - i);
        idx.swap(i, j);
    }
    idx[..n].iter().map(|&i| recs[i]).collect()
}

fn interval_of(values: &[f64], bootstrap: usize, rng: &mut RngStream) -> Option<Interval> {
    if values.is_empty() {
        return None;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    if bootstrap == 0 || values.len() == 1 {
        return Some(Interval { mean, lo: mean, hi: mean });
    }
    let mut means = Vec::with_capacity(bootstrap);
    for _ in 0..bootstrap {
        let mut acc = 0.0;
        for _ in 0..values.len() {
            acc += values[rng.below(values.len())];
        }
        means.push(acc / values.len() as f64);
    }
    means.sort_by(|a, b| a.partial_cmp(b).expect("finite means"));
    let lo = means[(0.025 * (bootstrap - 1) as f64).round() as usize];
    let hi = means[(0.975 * (bootstrap - 1) as f64).round() as usize];
    Some(Interval { mean, lo, hi })
}

/// Frozen CSV schema; new columns may only be appended.
pub const CSV_HEADER: &str = "reward,n,prompts,selection_errors,accuracy,accuracy_lo,accuracy_hi,\
mean_logprob,mean_logprob_lo,mean_logprob_hi,coverage,coverage_lo,coverage_hi,lift_abs,lift_rel";

pub fn to_csv(report: &AnalyzeReport) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    let fmt_opt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
    for row in &report.rows {
        let acc = row.accuracy;
        let cov = row.coverage;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            reward_name(row.reward),
            row.n,
            row.prompts,
            row.selection_errors,
            fmt_opt(acc.map(|i| i.mean)),
            fmt_opt(acc.map(|i| i.lo)),
            fmt_opt(acc.map(|i| i.hi)),
            row.mean_logprob.mean,
            row.mean_logprob.lo,
            row.mean_logprob.hi,
            fmt_opt(cov.map(|i| i.mean)),
            fmt_opt(cov.map(|i| i.lo)),
            fmt_opt(cov.map(|i| i.hi)),
            fmt_opt(row.lift_abs),
            fmt_opt(row.lift_rel),
        ));
    }
    out
}

pub fn reward_name(reward: SelfReward) -> &'static str {
    match reward {
        SelfReward::LogLikelihood => "log_likelihood",
        SelfReward::LengthNormalized => "length_normalized",
        SelfReward::Majority => "majority",
        SelfReward::ExternalLabel => "external_label",
    }
}
