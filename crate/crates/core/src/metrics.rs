//! Exact diagnostics: argmax sets, sharpness verdicts, coverage and
//! concentrability coefficients, margin, KL/Hellinger, the KL-regularized
//! value, and the tilted optimum.
//!
//! Every expectation over the prompt distribution is an exact weighted sum;
//! nothing in this module is Monte Carlo. These functions are the test-side
//! oracles for the training procedures, so they stay deliberately simple.

use crate::consts::{LOG_FLOOR, LOG_TIE_TOL};
use crate::model::{log_sum_exp, plog, Model, TabularModel};
use crate::space::PromptDistribution;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Reward function over `(prompt, response)` pairs.
///
/// The default is the model's own sequence-level log-probability; an
/// explicit table covers externally supplied rewards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Reward {
    /// `r(x, y) = ln base(y|x)`.
    LogBase,
    /// Explicit table indexed `[prompt][response]`.
    Table(Vec<Vec<f64>>),
}

impl Reward {
    /// Raw reward value; may be `-inf` under [`Reward::LogBase`].
    pub fn value(&self, base: &Model, x: usize, y: usize) -> Result<f64> {
        match self {
            Reward::LogBase => base.logprob(x, y),
            Reward::Table(t) => t
                .get(x)
                .and_then(|row| row.get(y))
                .copied()
                .ok_or_else(|| Error::domain("reward table does not cover (x, y)")),
        }
    }

    /// Reward clamped at the log floor; the flag reports whether clamping
    /// fired (losses need finite values, and the clamp count is surfaced).
    pub fn floored(&self, base: &Model, x: usize, y: usize) -> Result<(f64, bool)> {
        let v = self.value(base, x, y)?;
        if v < LOG_FLOOR {
            Ok((LOG_FLOOR, true))
        } else {
            Ok((v, false))
        }
    }
}

/// Outcome of a sharpness check: the fraction of prompt mass where the
/// candidate puts less than `1 - delta` mass on the target set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharpnessVerdict {
    pub epsilon_hat: f64,
    /// Candidate mass on the `(1-gamma)`-approximate argmax set of the base
    /// model, per prompt.
    pub per_prompt_mass: Vec<f64>,
    pub delta: f64,
    pub gamma: f64,
}

impl SharpnessVerdict {
    /// Sharp at level `epsilon`: the failing prompt mass is at most `epsilon`.
    pub fn is_sharp(&self, epsilon: f64) -> bool {
        self.epsilon_hat <= epsilon
    }
}

/// Coverage, concentrability, and margin diagnostics for one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageProfile {
    /// `E_mu[1 / base(argmax set)]`.
    pub c_cov: f64,
    /// `E_mu[1 / base(Y_gamma)]`; at most `c_cov`.
    pub c_cov_gamma: f64,
    /// `(E_mu[(1 / base(Y_gamma))^p])^(1/p)` for the requested `p`.
    pub c_cov_gamma_p: f64,
    pub gamma: f64,
    pub p: u32,
    /// `E_pi[pi / base]` per candidate, in input order.
    #[serde(with = "crate::serde_ext::float_vec")]
    pub c_conc: Vec<f64>,
    /// `E_base[(base / pi)^beta]` per candidate, in input order.
    #[serde(with = "crate::serde_ext::float_vec")]
    pub c_loss: Vec<f64>,
    pub beta: f64,
    /// Largest margin parameter the base model satisfies: the minimum over
    /// supported prompts of `max prob / best non-argmax prob - 1`, with a
    /// `+inf` sentinel when the argmax set is all of `Y`.
    #[serde(with = "crate::serde_ext::float")]
    pub margin_max: f64,
}

/// All responses within `tol` (log space) of the maximum log-probability.
pub fn argmax_set(model: &Model, x: usize, tol: f64) -> Result<Vec<usize>> {
    let lps = model.logprobs(x)?;
    let max = lps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(lps
        .iter()
        .enumerate()
        .filter(|(_, &lp)| lp >= max - tol)
        .map(|(y, _)| y)
        .collect())
}

/// Responses with probability at least `(1 - gamma) * max`.
pub fn gamma_argmax_set(model: &Model, x: usize, gamma: f64) -> Result<Vec<usize>> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::domain(format!("gamma {gamma} outside [0, 1)")));
    }
    if gamma == 0.0 {
        return argmax_set(model, x, LOG_TIE_TOL);
    }
    let probs = model.probs(x)?;
    let max = probs.iter().cloned().fold(0.0, f64::max);
    let threshold = (1.0 - gamma) * max;
    Ok(probs
        .iter()
        .enumerate()
        .filter(|(_, &p)| p >= threshold)
        .map(|(y, _)| y)
        .collect())
}

fn check_shared_spaces(a: &Model, b: &Model) -> Result<()> {
    if a.prompt_count() != b.prompt_count() || a.response_count() != b.response_count() {
        return Err(Error::domain(
            "models must share prompt and response spaces",
        ));
    }
    Ok(())
}

/// Exact per-prompt candidate mass on the base model's `Y_gamma`, and the
/// mu-weighted failing fraction.
pub fn sharpness_check(
    candidate: &Model,
    base: &Model,
    mu: &PromptDistribution,
    delta: f64,
    gamma: f64,
) -> Result<SharpnessVerdict> {
    check_shared_spaces(candidate, base)?;
    let mut per_prompt_mass = Vec::with_capacity(base.prompt_count());
    let mut epsilon_hat = 0.0;
    for x in 0..base.prompt_count() {
        let target = gamma_argmax_set(base, x, gamma)?;
        let probs = candidate.probs(x)?;
        let mass: f64 = target.iter().map(|&y| probs[y]).sum();
        if mass < 1.0 - delta {
            epsilon_hat += mu.weight(x);
        }
        per_prompt_mass.push(mass);
    }
    Ok(SharpnessVerdict { epsilon_hat, per_prompt_mass, delta, gamma })
}

/// Coverage, concentrability (per candidate), and margin, all exact.
pub fn coverage_profile(
    base: &Model,
    mu: &PromptDistribution,
    gamma: f64,
    p: u32,
    candidates: &[Model],
    beta: f64,
) -> Result<CoverageProfile> {
    if p == 0 {
        return Err(Error::domain("coverage moment p must be at least 1"));
    }
    let mut c_cov = 0.0;
    let mut c_cov_gamma = 0.0;
    let mut c_cov_gamma_pow = 0.0;
    let mut margin_max = f64::INFINITY;
    for x in 0..base.prompt_count() {
        let w = mu.weight(x);
        let probs = base.probs(x)?;
        let star = argmax_set(base, x, LOG_TIE_TOL)?;
        let star_mass: f64 = star.iter().map(|&y| probs[y]).sum();
        let ygamma = gamma_argmax_set(base, x, gamma)?;
        let gamma_mass: f64 = ygamma.iter().map(|&y| probs[y]).sum();
        c_cov += w / star_mass;
        c_cov_gamma += w / gamma_mass;
        c_cov_gamma_pow += w * (1.0 / gamma_mass).powi(p as i32);

        if w > 0.0 {
            let in_star = |y: usize| star.contains(&y);
            let best = probs.iter().cloned().fold(0.0, f64::max);
            let best_other = probs
                .iter()
                .enumerate()
                .filter(|(y, _)| !in_star(*y))
                .map(|(_, &p)| p)
                .fold(0.0, f64::max);
            let margin = if best_other > 0.0 {
                best / best_other - 1.0
            } else {
                f64::INFINITY
            };
            margin_max = margin_max.min(margin);
        }
    }

    let mut c_conc = Vec::with_capacity(candidates.len());
    let mut c_loss = Vec::with_capacity(candidates.len());
    for cand in candidates {
        check_shared_spaces(cand, base)?;
        let mut conc = 0.0;
        let mut loss = 0.0;
        for x in 0..base.prompt_count() {
            let w = mu.weight(x);
            let q = cand.probs(x)?;
            let b = base.probs(x)?;
            for y in 0..b.len() {
                if q[y] > 0.0 {
                    if b[y] > 0.0 {
                        conc += w * q[y] * q[y] / b[y];
                    } else {
                        conc = f64::INFINITY;
                    }
                }
                if b[y] > 0.0 {
                    if q[y] > 0.0 {
                        loss += w * b[y] * (b[y] / q[y]).powf(beta);
                    } else {
                        loss = f64::INFINITY;
                    }
                }
            }
        }
        c_conc.push(conc);
        c_loss.push(loss);
    }

    Ok(CoverageProfile {
        c_cov,
        c_cov_gamma,
        c_cov_gamma_p: c_cov_gamma_pow.powf(1.0 / p as f64),
        gamma,
        p,
        c_conc,
        c_loss,
        beta,
        margin_max,
    })
}

/// The KL-regularized optimum: base raised to the power `1 + 1/beta` and
/// renormalized per prompt. Returned as an exact tabular model.
pub fn tilt(base: &Model, beta: f64) -> Result<Model> {
    if !(beta > 0.0) {
        return Err(Error::domain(format!("tilt exponent requires beta > 0, got {beta}")));
    }
    let exponent = 1.0 + 1.0 / beta;
    let mut rows = Vec::with_capacity(base.prompt_count());
    for x in 0..base.prompt_count() {
        let lps = base.logprobs(x)?;
        let scaled: Vec<f64> = lps.iter().map(|&lp| exponent * lp).collect();
        let logz = log_sum_exp(&scaled);
        rows.push(scaled.iter().map(|&s| (s - logz).exp()).collect());
    }
    Ok(Model::from(TabularModel::new(rows)?))
}

/// Exact KL-regularized value `J_beta = E_pi[r] - beta * KL(pi || base)`.
///
/// Candidate mass on a base-zero response yields the `-inf` sentinel.
pub fn j_beta(
    candidate: &Model,
    base: &Model,
    mu: &PromptDistribution,
    beta: f64,
    reward: &Reward,
) -> Result<f64> {
    check_shared_spaces(candidate, base)?;
    let mut total = 0.0;
    for x in 0..base.prompt_count() {
        let w = mu.weight(x);
        if w == 0.0 {
            continue;
        }
        let q = candidate.probs(x)?;
        let qlps = candidate.logprobs(x)?;
        let blps = base.logprobs(x)?;
        for y in 0..q.len() {
            if q[y] == 0.0 {
                continue;
            }
            if blps[y] == f64::NEG_INFINITY {
                return Ok(f64::NEG_INFINITY);
            }
            let r = reward.value(base, x, y)?;
            if r == f64::NEG_INFINITY {
                return Ok(f64::NEG_INFINITY);
            }
            total += w * q[y] * (r - beta * (qlps[y] - blps[y]));
        }
    }
    Ok(total)
}

/// KL divergence and (un-halved) squared Hellinger distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Divergences {
    pub kl: f64,
    pub hellinger_sq: f64,
}

/// Exact `KL(p || q)` and squared Hellinger distance, mu-averaged.
///
/// The Hellinger convention here is `sum (sqrt p - sqrt q)^2`, without the
/// factor of one half. KL is `+inf` where `p` is unsupported by `q`.
pub fn divergences(p: &Model, q: &Model, mu: &PromptDistribution) -> Result<Divergences> {
    check_shared_spaces(p, q)?;
    let mut kl = 0.0;
    let mut hell = 0.0;
    for x in 0..p.prompt_count() {
        let w = mu.weight(x);
        if w == 0.0 {
            continue;
        }
        let pp = p.probs(x)?;
        let qq = q.probs(x)?;
        for y in 0..pp.len() {
            let (a, b) = (pp[y], qq[y]);
            hell += w * (a.sqrt() - b.sqrt()).powi(2);
            if a > 0.0 {
                if b > 0.0 {
                    kl += w * a * (plog(a) - plog(b));
                } else {
                    kl = f64::INFINITY;
                }
            }
        }
    }
    Ok(Divergences { kl, hellinger_sq: hell })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TabularModel;

    fn single(row: Vec<f64>) -> Model {
        Model::from(TabularModel::new(vec![row]).unwrap())
    }

    #[test]
    fn argmax_set_cases() {
        let m = single(vec![0.5, 0.3, 0.2]);
        assert_eq!(argmax_set(&m, 0, LOG_TIE_TOL).unwrap(), vec![0]);
        let u = single(vec![0.25; 4]);
        assert_eq!(argmax_set(&u, 0, LOG_TIE_TOL).unwrap(), vec![0, 1, 2, 3]);
        let tie = single(vec![0.4, 0.4, 0.2]);
        assert_eq!(argmax_set(&tie, 0, LOG_TIE_TOL).unwrap(), vec![0, 1]);
    }

    #[test]
    fn gamma_argmax_thresholds() {
        let m = single(vec![0.5, 0.3, 0.2]);
        assert_eq!(gamma_argmax_set(&m, 0, 0.5).unwrap(), vec![0, 1]);
        assert_eq!(
            gamma_argmax_set(&m, 0, 0.0).unwrap(),
            argmax_set(&m, 0, LOG_TIE_TOL).unwrap()
        );
        assert_eq!(gamma_argmax_set(&m, 0, 0.9).unwrap(), vec![0, 1, 2]);
        assert!(gamma_argmax_set(&m, 0, 1.0).is_err());
    }

    #[test]
    fn sharpness_point_mass_is_sharp() {
        let base = single(vec![0.5, 0.3, 0.2]);
        let cand = single(vec![1.0, 0.0, 0.0]);
        let mu = PromptDistribution::uniform(1);
        let v = sharpness_check(&cand, &base, &mu, 0.99, 0.0).unwrap();
        assert_eq!(v.epsilon_hat, 0.0);
    }

    #[test]
    fn sharpness_uniform_on_uniform_base() {
        let base = single(vec![0.25; 4]);
        let mu = PromptDistribution::uniform(1);
        let v = sharpness_check(&base, &base, &mu, 0.1, 0.0).unwrap();
        assert_eq!(v.epsilon_hat, 0.0);
        assert_eq!(v.per_prompt_mass, vec![1.0]);
    }

    #[test]
    fn sharpness_marginal_failure() {
        // base (0.6, 0.4), candidate (0.7, 0.3), delta 0.25: 0.7 < 0.75.
        let base = single(vec![0.6, 0.4]);
        let cand = single(vec![0.7, 0.3]);
        let mu = PromptDistribution::uniform(1);
        let v = sharpness_check(&cand, &base, &mu, 0.25, 0.0).unwrap();
        assert_eq!(v.epsilon_hat, 1.0);
    }

    #[test]
    fn coverage_single_prompt() {
        let base = single(vec![0.5, 0.25, 0.25]);
        let mu = PromptDistribution::uniform(1);
        let prof = coverage_profile(&base, &mu, 0.0, 1, &[], 1.0).unwrap();
        assert!((prof.c_cov - 2.0).abs() < 1e-12);
        assert!((prof.margin_max - 1.0).abs() < 1e-12);
    }

    #[test]
    fn coverage_two_prompts() {
        let base = Model::from(
            TabularModel::new(vec![vec![0.5, 0.5 / 3.0, 0.5 / 3.0, 0.5 / 3.0], vec![
                0.25, 0.25, 0.25, 0.25,
            ]])
            .unwrap(),
        );
        let mu = PromptDistribution::uniform(2);
        let prof = coverage_profile(&base, &mu, 0.0, 1, &[], 1.0).unwrap();
        // Argmax masses 0.5 and 1.0 (the uniform row ties everywhere).
        assert!((prof.c_cov - (0.5 * 2.0 + 0.5 * 1.0)).abs() < 1e-12);
        // Margin is the minimum over prompts; the uniform row is vacuous
        // (+inf) so the first row's gap decides.
        assert!((prof.margin_max - 2.0).abs() < 1e-12);
    }

    #[test]
    fn margin_is_infinite_when_argmax_is_everything() {
        let base = single(vec![0.25; 4]);
        let mu = PromptDistribution::uniform(1);
        let prof = coverage_profile(&base, &mu, 0.0, 1, &[], 1.0).unwrap();
        assert_eq!(prof.margin_max, f64::INFINITY);
    }

    #[test]
    fn tilt_closed_form() {
        let base = single(vec![0.6, 0.4]);
        let t = tilt(&base, 1.0).unwrap();
        let probs = t.probs(0).unwrap();
        assert!((probs[0] - 0.36 / 0.52).abs() < 1e-12);
        assert!((probs[1] - 0.16 / 0.52).abs() < 1e-12);
    }

    #[test]
    fn tilt_of_point_mass_is_itself() {
        let base = single(vec![0.0, 1.0, 0.0]);
        for beta in [0.1, 1.0, 10.0] {
            let t = tilt(&base, beta).unwrap();
            assert_eq!(t.probs(0).unwrap(), vec![0.0, 1.0, 0.0]);
        }
    }

    #[test]
    fn tilt_large_beta_approaches_base() {
        let base = single(vec![0.3, 0.45, 0.25]);
        let t = tilt(&base, 1e9).unwrap();
        let tv: f64 = t
            .probs(0)
            .unwrap()
            .iter()
            .zip(base.probs(0).unwrap())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv < 1e-6);
    }

    #[test]
    fn tilt_rejects_nonpositive_beta() {
        let base = single(vec![0.5, 0.5]);
        assert!(matches!(tilt(&base, 0.0), Err(Error::Domain(_))));
        assert!(matches!(tilt(&base, -1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn j_beta_uniform_self() {
        let base = single(vec![0.5, 0.5]);
        let mu = PromptDistribution::uniform(1);
        let j = j_beta(&base, &base, &mu, 1.0, &Reward::LogBase).unwrap();
        assert!((j - 0.5_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn j_beta_point_mass_pays_kl() {
        let base = single(vec![0.5, 0.5]);
        let cand = single(vec![1.0, 0.0]);
        let mu = PromptDistribution::uniform(1);
        let j = j_beta(&cand, &base, &mu, 1.0, &Reward::LogBase).unwrap();
        assert!((j - (-2.0 * 2.0_f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn j_beta_unsupported_candidate_is_neg_inf() {
        let base = single(vec![1.0, 0.0]);
        let cand = single(vec![0.5, 0.5]);
        let mu = PromptDistribution::uniform(1);
        let j = j_beta(&cand, &base, &mu, 1.0, &Reward::LogBase).unwrap();
        assert_eq!(j, f64::NEG_INFINITY);
    }

    #[test]
    fn divergences_cases() {
        let mu = PromptDistribution::uniform(1);
        let p = single(vec![0.3, 0.7]);
        let d = divergences(&p, &p, &mu).unwrap();
        assert_eq!(d.kl, 0.0);
        assert_eq!(d.hellinger_sq, 0.0);

        let a = single(vec![1.0, 0.0]);
        let b = single(vec![0.5, 0.5]);
        let d = divergences(&a, &b, &mu).unwrap();
        assert!((d.kl - 2.0_f64.ln()).abs() < 1e-12);
        // 2 - 2 * sum sqrt(p q) = 2 - sqrt 2.
        assert!((d.hellinger_sq - (2.0 - 2.0_f64.sqrt())).abs() < 1e-12);

        let d = divergences(&b, &a, &mu).unwrap();
        assert_eq!(d.kl, f64::INFINITY);
    }

    #[test]
    fn explicit_reward_table_changes_the_optimum() {
        // With a table reward favoring y1, the value of a y1 point mass
        // beats the base despite the KL cost at small beta.
        let base = single(vec![0.7, 0.3]);
        let mu = PromptDistribution::uniform(1);
        let reward = Reward::Table(vec![vec![0.0, 1.0]]);
        let beta = 0.1;
        let point = single(vec![0.0, 1.0]);
        let j_point = j_beta(&point, &base, &mu, beta, &reward).unwrap();
        let j_base = j_beta(&base, &base, &mu, beta, &reward).unwrap();
        assert!((j_point - (1.0 - beta * (1.0f64 / 0.3).ln())).abs() < 1e-12);
        assert!(j_point > j_base);
        assert!(matches!(
            reward.value(&base, 0, 5),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn reward_floor_flags() {
        let base = single(vec![1.0, 0.0]);
        let (v, clamped) = Reward::LogBase.floored(&base, 0, 1).unwrap();
        assert_eq!(v, LOG_FLOOR);
        assert!(clamped);
        let (v, clamped) = Reward::LogBase.floored(&base, 0, 0).unwrap();
        assert_eq!(v, 0.0);
        assert!(!clamped);
    }
}
