//! Inference-time selection: greedy decoding, exact sequence-level argmax,
//! best-of-N selection under pluggable self-rewards, and the sample-size
//! formula for hitting the approximate-argmax set.

use crate::consts::{ENUM_CAP, LOG_TIE_TOL};
use crate::model::{plog, Model};
use crate::oracle::OracleSession;
use crate::{Error, Result, RngStream};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

/// Self-reward used to rank drawn responses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelfReward {
    /// Sequence-level log-probability under the base model.
    LogLikelihood,
    /// Log-probability divided by token length.
    LengthNormalized,
    /// Most frequent extracted answer; a sample-based stand-in for the
    /// answer-marginal reward.
    Majority,
    /// External correctness label (1 for correct, 0 otherwise).
    ExternalLabel,
}

/// One drawn response with everything a selector might need.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BonCandidate<T> {
    pub item: T,
    pub logprob: f64,
    /// Token length, at least 1.
    pub length: usize,
    pub answer: Option<String>,
    pub correct: Option<bool>,
}

impl<T> BonCandidate<T> {
    pub fn new(item: T, logprob: f64, length: usize) -> Self {
        BonCandidate { item, logprob, length, answer: None, correct: None }
    }
}

/// Index of the reward maximizer; ties go to the earliest (first-drawn)
/// candidate, with log-space values tied within tolerance.
pub fn bon_select<T>(items: &[BonCandidate<T>], reward: SelfReward) -> Result<usize> {
    if items.is_empty() {
        return Err(Error::Selection("empty candidate list".into()));
    }
    if items.iter().any(|c| c.length == 0) {
        return Err(Error::domain("candidate length must be at least 1"));
    }
    match reward {
        SelfReward::LogLikelihood => Ok(first_max_within_tol(
            items.iter().map(|c| c.logprob),
            LOG_TIE_TOL,
        )),
        SelfReward::LengthNormalized => Ok(first_max_within_tol(
            items.iter().map(|c| c.logprob / c.length as f64),
            LOG_TIE_TOL,
        )),
        SelfReward::ExternalLabel => Ok(first_max_within_tol(
            items
                .iter()
                .map(|c| if c.correct == Some(true) { 1.0 } else { 0.0 }),
            0.0,
        )),
        SelfReward::Majority => {
            let mut counts: HashMap<&str, usize> = HashMap::new();
            for c in items {
                if let Some(ans) = &c.answer {
                    *counts.entry(ans.as_str()).or_insert(0) += 1;
                }
            }
            if counts.is_empty() {
                return Err(Error::Selection(
                    "majority reward found no extractable answers".into(),
                ));
            }
            let best = counts.values().copied().max().expect("non-empty");
            // Earliest candidate whose answer attains the winning count.
            items
                .iter()
                .position(|c| {
                    c.answer
                        .as_deref()
                        .is_some_and(|a| counts[a] == best)
                })
                .ok_or_else(|| Error::Selection("no candidate carries a winning answer".into()))
        }
    }
}

fn first_max_within_tol(values: impl Iterator<Item = f64>, tol: f64) -> usize {
    let vals: Vec<f64> = values.collect();
    let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    vals.iter()
        .position(|&v| v >= max - tol)
        .expect("non-empty candidate list")
}

/// Per-step argmax decoding with lexicographic (lowest token index)
/// tie-breaking. Returns the decoded response index.
pub fn greedy_decode(model: &Model, x: usize) -> Result<usize> {
    let (vocab, horizon) = model.sequence_shape().ok_or_else(|| {
        Error::domain("greedy decoding requires a sequence-structured model")
    })?;
    let mut prefix = Vec::with_capacity(horizon);
    let mut idx = 0usize;
    for _ in 0..horizon {
        let row = model.step_probs(x, &prefix)?;
        let lps: Vec<f64> = row.iter().map(|&p| plog(p)).collect();
        let max = lps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let t = lps
            .iter()
            .position(|&lp| lp >= max - LOG_TIE_TOL)
            .expect("vocabulary is non-empty");
        idx = idx * vocab + t;
        prefix.push(t);
    }
    Ok(idx)
}

/// Full-enumeration sequence argmax, ties within log tolerance.
pub fn exact_sequence_argmax(model: &Model, x: usize, tol: f64) -> Result<Vec<usize>> {
    if model.response_count() as u64 > ENUM_CAP {
        return Err(Error::capacity("response space exceeds the enumeration cap"));
    }
    crate::metrics::argmax_set(model, x, tol)
}

/// Draw `n_draws` responses through the session and return the selected one.
pub fn bon_sample(
    session: &mut OracleSession<'_>,
    x: usize,
    n_draws: u64,
    reward: SelfReward,
    rng: &mut RngStream,
) -> Result<usize> {
    if n_draws == 0 {
        return Err(Error::domain("best-of-N requires N >= 1"));
    }
    let length = session
        .base()
        .sequence_shape()
        .map(|(_, h)| h)
        .unwrap_or(1);
    let mut items = Vec::with_capacity(n_draws as usize);
    for _ in 0..n_draws {
        let (y, lp) = session.draw_and_evaluate(x, rng)?;
        items.push(BonCandidate::new(y, lp, length));
    }
    let sel = bon_select(&items, reward)?;
    Ok(items[sel].item)
}

/// Sample size that lands in `Y_gamma(x)` except with probability `rho`:
/// `ceil(ln(1/rho) / mass)`.
///
/// A 1e-9 slack absorbs floating-point noise at integer boundaries (for
/// example `rho = 1/e`, `mass = 1` is exactly 1).
pub fn required_n(rho: f64, mass: f64) -> Result<u64> {
    if !(0.0 < rho && rho < 1.0) {
        return Err(Error::domain(format!("failure probability {rho} outside (0, 1)")));
    }
    if !(0.0 < mass && mass <= 1.0) {
        return Err(Error::domain(format!("target mass {mass} outside (0, 1]")));
    }
    let raw = -rho.ln() / mass;
    Ok(((raw - 1e-9).ceil() as u64).max(1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ArTabularModel, TabularModel};
    use crate::space::PromptDistribution;

    fn cand(lp: f64, len: usize) -> BonCandidate<usize> {
        BonCandidate::new(0, lp, len)
    }

    #[test]
    fn bon_select_log_likelihood() {
        let items = vec![cand(-1.0, 1), cand(-0.5, 1), cand(-2.0, 1)];
        assert_eq!(bon_select(&items, SelfReward::LogLikelihood).unwrap(), 1);
    }

    #[test]
    fn bon_select_length_normalized() {
        let items = vec![cand(-2.0, 4), cand(-1.5, 2)];
        // -0.5 vs -0.75.
        assert_eq!(bon_select(&items, SelfReward::LengthNormalized).unwrap(), 0);
    }

    #[test]
    fn bon_select_majority() {
        let mut items = vec![cand(-1.0, 1), cand(-1.0, 1), cand(-1.0, 1)];
        items[0].answer = Some("A".into());
        items[1].answer = Some("B".into());
        items[2].answer = Some("A".into());
        let sel = bon_select(&items, SelfReward::Majority).unwrap();
        assert_eq!(items[sel].answer.as_deref(), Some("A"));
    }

    #[test]
    fn bon_select_majority_without_answers_errors() {
        let items = vec![cand(-1.0, 1)];
        assert!(matches!(
            bon_select(&items, SelfReward::Majority),
            Err(Error::Selection(_))
        ));
    }

    #[test]
    fn bon_select_external_label_prefers_correct() {
        let mut items = vec![cand(-0.1, 1), cand(-5.0, 1), cand(-6.0, 1)];
        items[1].correct = Some(true);
        items[2].correct = Some(true);
        assert_eq!(bon_select(&items, SelfReward::ExternalLabel).unwrap(), 1);
        let unlabeled = vec![cand(-1.0, 1), cand(-2.0, 1)];
        // No labels: everything scores zero and the first candidate wins.
        assert_eq!(bon_select(&unlabeled, SelfReward::ExternalLabel).unwrap(), 0);
    }

    #[test]
    fn bon_select_ties_to_first_drawn() {
        let items = vec![cand(-1.0, 1), cand(-1.0, 1)];
        assert_eq!(bon_select(&items, SelfReward::LogLikelihood).unwrap(), 0);
    }

    /// pi_1 = (a: 0.4, b: 0.6); continuations from a are deterministic,
    /// from b a coin flip. Sequence probabilities are (a,c) = 0.4,
    /// (b,c) = 0.3, (b,d) = 0.3: greedy takes b and lands on mass 0.3
    /// while the argmax sequence has 0.4.
    fn greedy_counterexample() -> Model {
        Model::from(
            ArTabularModel::new(
                4,
                2,
                vec![vec![
                    vec![0.4, 0.6, 0.0, 0.0],
                    vec![
                        0.0, 0.0, 1.0, 0.0, // after a: point mass on c
                        0.0, 0.0, 0.5, 0.5, // after b: c or d
                        0.25, 0.25, 0.25, 0.25, // unreachable prefixes
                        0.25, 0.25, 0.25, 0.25,
                    ],
                ]],
            )
            .unwrap(),
        )
    }

    #[test]
    fn greedy_fails_below_half_mass() {
        let m = greedy_counterexample();
        let greedy = greedy_decode(&m, 0).unwrap();
        let argmax = exact_sequence_argmax(&m, 0, LOG_TIE_TOL).unwrap();
        // Greedy picks b then c: index 1*4 + 2 = 6. Argmax is (a, c) = 2.
        assert_eq!(greedy, 6);
        assert_eq!(argmax, vec![2]);
        assert!((m.probs(0).unwrap()[2] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn greedy_succeeds_above_half_mass() {
        // Unique argmax with sequence probability 0.81 > 1/2.
        let m = Model::from(
            ArTabularModel::new(
                2,
                2,
                vec![vec![vec![0.9, 0.1], vec![0.9, 0.1, 0.5, 0.5]]],
            )
            .unwrap(),
        );
        let greedy = greedy_decode(&m, 0).unwrap();
        let argmax = exact_sequence_argmax(&m, 0, LOG_TIE_TOL).unwrap();
        assert_eq!(vec![greedy], argmax);
    }

    #[test]
    fn horizon_one_greedy_is_the_argmax() {
        let m = Model::from(
            ArTabularModel::new(3, 1, vec![vec![vec![0.2, 0.5, 0.3]]]).unwrap(),
        );
        let greedy = greedy_decode(&m, 0).unwrap();
        assert_eq!(vec![greedy], exact_sequence_argmax(&m, 0, LOG_TIE_TOL).unwrap());
    }

    #[test]
    fn greedy_needs_sequence_structure() {
        let m = Model::from(TabularModel::uniform(1, 4));
        assert!(matches!(greedy_decode(&m, 0), Err(Error::Domain(_))));
    }

    #[test]
    fn bon_sample_deterministic_base() {
        let base = Model::from(TabularModel::point_mass(3, &[2]));
        let mu = PromptDistribution::uniform(1);
        let mut rng = RngStream::from_seed(1);
        let mut session = OracleSession::new(&base, &mu);
        let x = session.draw_prompt(&mut rng).unwrap();
        for n in [1u64, 2, 7] {
            let y = bon_sample(&mut session, x, n, SelfReward::LogLikelihood, &mut rng).unwrap();
            assert_eq!(y, 2);
        }
    }

    #[test]
    fn required_n_values() {
        assert_eq!(required_n(0.05, 0.1).unwrap(), 30);
        assert_eq!(required_n(1.0 / std::f64::consts::E, 1.0).unwrap(), 1);
        assert_eq!(
            required_n(1.0 / (std::f64::consts::E * std::f64::consts::E), 0.5).unwrap(),
            4
        );
        assert!(matches!(required_n(0.5, 0.0), Err(Error::Domain(_))));
        assert!(matches!(required_n(1.0, 0.5), Err(Error::Domain(_))));
    }
}
