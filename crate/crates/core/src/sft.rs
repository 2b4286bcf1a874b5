//! Filter-then-fit self-training: best-of-N dataset collection, the exact
//! best-of-N distribution, maximum-likelihood fitting over a model class,
//! and the adaptive-stopping collection variant.

use crate::consts::{ADAPTIVE_DRAW_CAP, LOG_TIE_TOL};
use crate::decode::{bon_sample, SelfReward};
use crate::model::{FeatureSet, LinearSoftmaxModel, Model, TabularModel};
use crate::oracle::OracleSession;
use crate::{Error, Result, RngStream};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Prompt/selected-response pairs plus the group size that produced each
/// record; every selected response is the reward maximizer of its group and
/// can be replayed from the session log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BonDataset {
    pub prompt_count: usize,
    pub response_count: usize,
    pub records: Vec<(usize, usize)>,
    /// Realized number of draws behind each record.
    pub group_sizes: Vec<u64>,
}

impl BonDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Parametric linear-softmax family: shared features, a norm ball of
/// parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxFamily {
    pub features: Arc<FeatureSet>,
    pub norm_bound: f64,
}

impl SoftmaxFamily {
    pub fn model(&self, layers: Vec<Vec<f64>>) -> Result<LinearSoftmaxModel> {
        LinearSoftmaxModel::new(self.features.clone(), layers, self.norm_bound)
    }

    pub fn zero_model(&self) -> Result<LinearSoftmaxModel> {
        let layers = vec![vec![0.0; self.features.dim()]; self.features.layer_count()];
        self.model(layers)
    }
}

/// The class fitting operations optimize over.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum ModelClass {
    /// Explicit finite list; fitting is exhaustive comparison.
    Finite(Vec<Model>),
    /// All conditional tables over the space; the MLE is the per-prompt
    /// empirical frequency, with no smoothing.
    Tabular,
    /// Norm-bounded linear softmax family; fitting is projected gradient
    /// ascent.
    LinearSoftmax(SoftmaxFamily),
}

impl ModelClass {
    pub fn validate(&self) -> Result<()> {
        match self {
            ModelClass::Finite(models) => {
                if models.is_empty() {
                    return Err(Error::validation("finite class must be non-empty"));
                }
                Ok(())
            }
            ModelClass::Tabular => Ok(()),
            ModelClass::LinearSoftmax(fam) => fam.features.validate(),
        }
    }
}

/// Adaptive stopping rule configuration. `mu_stop` is the stopping
/// parameter (named to avoid clashing with the prompt distribution); the
/// draw cap turns non-termination into a capacity error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StoppingConfig {
    pub mu_stop: f64,
    pub draw_cap: u64,
}

impl StoppingConfig {
    pub fn new(mu_stop: f64) -> Result<Self> {
        if !(mu_stop > 0.0) {
            return Err(Error::domain("stopping parameter must be positive"));
        }
        Ok(StoppingConfig { mu_stop, draw_cap: ADAPTIVE_DRAW_CAP })
    }

    pub fn with_draw_cap(mut self, cap: u64) -> Self {
        self.draw_cap = cap;
        self
    }
}

/// Draw `n` prompts with `n_draws` responses each, keeping the per-group
/// reward maximizer. The session budget grows by exactly `n * n_draws`.
pub fn collect_bon_dataset(
    session: &mut OracleSession<'_>,
    n: u64,
    n_draws: u64,
    reward: SelfReward,
    rng: &mut RngStream,
) -> Result<BonDataset> {
    if n == 0 || n_draws == 0 {
        return Err(Error::domain("collection requires n >= 1 and N >= 1"));
    }
    let mut records = Vec::with_capacity(n as usize);
    for _ in 0..n {
        let x = session.draw_prompt(rng)?;
        let y = bon_sample(session, x, n_draws, reward, rng)?;
        records.push((x, y));
    }
    Ok(BonDataset {
        prompt_count: session.base().prompt_count(),
        response_count: session.base().response_count(),
        records,
        group_sizes: vec![n_draws; n as usize],
    })
}

/// Exact distribution of the best-of-N selected response under the
/// log-likelihood reward with first-drawn tie-breaking.
///
/// Responses are grouped by probability level (ties within `tol`, in log
/// space) and sorted descending. With `c_j` the total mass at or below the
/// level of group `j` (counting from the top) and `q_j` the group's own
/// mass, the group receives `c_j^N - (c_j - q_j)^N`, split equally among
/// members; the equal split is valid by symmetry under first-drawn
/// tie-breaking.
pub fn exact_bon_distribution(base: &Model, x: usize, n: u64, tol: f64) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::domain("best-of-N requires N >= 1"));
    }
    if n > i32::MAX as u64 {
        return Err(Error::capacity("N too large for exact powering"));
    }
    let probs = base.probs(x)?;
    let total: f64 = probs.iter().sum();
    // Work on the normalized row so the output sums to one exactly up to
    // floating error, independent of the row's own 1e-9 slack.
    let probs: Vec<f64> = probs.iter().map(|&p| p / total).collect();

    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].partial_cmp(&probs[a]).expect("finite probs"));

    // Group indices whose log-probabilities tie within tol.
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for &y in &order {
        let tied = groups.last().is_some_and(|g| {
            let rep = probs[g[0]];
            if rep == 0.0 || probs[y] == 0.0 {
                rep == probs[y]
            } else {
                (rep.ln() - probs[y].ln()).abs() <= tol
            }
        });
        if tied {
            groups.last_mut().expect("group exists").push(y);
        } else {
            groups.push(vec![y]);
        }
    }

    // Suffix masses: c[j] = mass of group j and everything below it.
    let masses: Vec<f64> = groups
        .iter()
        .map(|g| g.iter().map(|&y| probs[y]).sum())
        .collect();
    let mut suffix = vec![0.0; groups.len()];
    let mut acc = 0.0;
    for j in (0..groups.len()).rev() {
        acc += masses[j];
        suffix[j] = acc;
    }

    let mut out = vec![0.0; probs.len()];
    for (j, group) in groups.iter().enumerate() {
        let c = suffix[j];
        let below = c - masses[j];
        let share = (c.powi(n as i32) - below.powi(n as i32)).max(0.0) / group.len() as f64;
        for &y in group {
            out[y] = share;
        }
    }
    Ok(out)
}

/// Maximum-likelihood fit of `class` to a best-of-N dataset.
///
/// Finite classes are scored exhaustively (a candidate with zero probability
/// on any observed record scores `-inf` and is never selected unless every
/// candidate does; ties go to the lowest index). The tabular family yields
/// the per-prompt empirical frequencies with no smoothing; prompts with no
/// records get a uniform row, which leaves the likelihood untouched.
/// Parametric families run projected gradient ascent on the log-likelihood.
pub fn mle_fit(class: &ModelClass, data: &BonDataset) -> Result<Model> {
    if data.is_empty() {
        return Err(Error::domain("cannot fit an empty dataset"));
    }
    class.validate()?;
    match class {
        ModelClass::Finite(models) => {
            let scores: Vec<f64> = crate::exec::map_indexed(models.len(), |c| {
                finite_log_likelihood(&models[c], data)
            });
            let mut best = 0usize;
            for (c, &s) in scores.iter().enumerate() {
                if s > scores[best] + LOG_TIE_TOL {
                    best = c;
                }
            }
            Ok(models[best].clone())
        }
        ModelClass::Tabular => {
            let mut counts = vec![vec![0u64; data.response_count]; data.prompt_count];
            for &(x, y) in &data.records {
                counts[x][y] += 1;
            }
            let rows = counts
                .into_iter()
                .map(|row| {
                    let total: u64 = row.iter().sum();
                    if total == 0 {
                        vec![1.0 / data.response_count as f64; data.response_count]
                    } else {
                        row.into_iter().map(|c| c as f64 / total as f64).collect()
                    }
                })
                .collect();
            Ok(Model::from(TabularModel::new(rows)?))
        }
        ModelClass::LinearSoftmax(family) => softmax_mle(family, data).map(Model::from),
    }
}

fn finite_log_likelihood(model: &Model, data: &BonDataset) -> f64 {
    let mut ll = 0.0;
    for &(x, y) in &data.records {
        match model.logprob(x, y) {
            Ok(lp) if lp > f64::NEG_INFINITY => ll += lp,
            _ => return f64::NEG_INFINITY,
        }
    }
    ll
}

/// Log-likelihood and its gradient (per layer) for a softmax family.
pub fn softmax_log_likelihood_grad(
    family: &SoftmaxFamily,
    layers: &[Vec<f64>],
    data: &BonDataset,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let model = family.model(layers.to_vec())?;
    let dim = family.features.dim();
    let mut grad = vec![vec![0.0; dim]; layers.len()];
    let mut ll = 0.0;
    match &*family.features {
        FeatureSet::Atomic { .. } => {
            for &(x, y) in &data.records {
                ll += model.logprob(x, y);
                let probs = model.softmax_eval(x);
                let phi_y = family.features.atomic_feature(x, y);
                for k in 0..dim {
                    grad[0][k] += phi_y[k];
                }
                for (v, &p) in probs.iter().enumerate() {
                    let phi = family.features.atomic_feature(x, v);
                    for k in 0..dim {
                        grad[0][k] -= p * phi[k];
                    }
                }
            }
        }
        FeatureSet::Sequence { vocab, horizon, .. } => {
            for &(x, y) in &data.records {
                ll += model.logprob(x, y);
                let mut rest = y;
                let mut toks = vec![0usize; *horizon];
                for h in (0..*horizon).rev() {
                    toks[h] = rest % vocab;
                    rest /= vocab;
                }
                let mut prefix: Vec<usize> = Vec::new();
                for (h, &t) in toks.iter().enumerate() {
                    let row = model.step_probs(x, &prefix);
                    let mut p_idx = 0usize;
                    for &q in &prefix {
                        p_idx = p_idx * vocab + q;
                    }
                    let phi_t = step_feature(&family.features, x, p_idx * vocab + t, h);
                    for k in 0..dim {
                        grad[h][k] += phi_t[k];
                    }
                    for (v, &p) in row.iter().enumerate() {
                        let phi = step_feature(&family.features, x, p_idx * vocab + v, h);
                        for k in 0..dim {
                            grad[h][k] -= p * phi[k];
                        }
                    }
                    prefix.push(t);
                }
            }
        }
    }
    Ok((ll, grad))
}

fn step_feature(features: &FeatureSet, x: usize, prefix_incl: usize, level: usize) -> &[f64] {
    match features {
        FeatureSet::Sequence { dim, levels, .. } => {
            &levels[level][x][prefix_incl * dim..(prefix_incl + 1) * dim]
        }
        FeatureSet::Atomic { .. } => unreachable!("sequence feature lookup on atomic set"),
    }
}

fn project_to_ball(theta: &mut [f64], bound: f64) {
    let norm = theta.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > bound {
        let scale = bound / norm;
        for v in theta.iter_mut() {
            *v *= scale;
        }
    }
}

fn softmax_mle(family: &SoftmaxFamily, data: &BonDataset) -> Result<LinearSoftmaxModel> {
    let dim = family.features.dim();
    let layer_count = family.features.layer_count();
    let mut layers = vec![vec![0.0; dim]; layer_count];
    // Softmax log-likelihood is 1-smooth per record with unit features;
    // 1/n is a safe ascent step, 2/n converges faster in practice.
    let step = 2.0 / data.len() as f64;
    let tol = 1e-8 * data.len() as f64;
    let max_iters = 20_000;
    let mut grad_norm = f64::INFINITY;
    for _ in 0..max_iters {
        let (_, grad) = softmax_log_likelihood_grad(family, &layers, data)?;
        grad_norm = grad
            .iter()
            .flat_map(|g| g.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        if grad_norm <= tol {
            break;
        }
        for (theta, g) in layers.iter_mut().zip(&grad) {
            for (tv, gv) in theta.iter_mut().zip(g) {
                *tv += step * gv;
            }
            project_to_ball(theta, family.norm_bound);
        }
    }
    if grad_norm > tol * 100.0 {
        // The projected optimum can sit on the ball boundary with a
        // non-zero gradient pointing outward; accept when the projected
        // step no longer moves.
        let (ll_now, grad) = softmax_log_likelihood_grad(family, &layers, data)?;
        let mut probe = layers.clone();
        for (theta, g) in probe.iter_mut().zip(&grad) {
            for (tv, gv) in theta.iter_mut().zip(g) {
                *tv += step * gv;
            }
            project_to_ball(theta, family.norm_bound);
        }
        let (ll_probe, _) = softmax_log_likelihood_grad(family, &probe, data)?;
        if ll_probe - ll_now > 1e-9 * data.len() as f64 {
            return Err(Error::NoConvergence { grad_norm, iters: max_iters });
        }
    }
    family.model(layers)
}

/// Per prompt, draw until the stopping rule fires and keep the
/// log-likelihood maximizer among the draws.
///
/// The rule stops at the first `k` with `1 / max_j base(y_j|x) <= k / mu`;
/// the realized `k` is recorded per record.
pub fn adaptive_collect(
    session: &mut OracleSession<'_>,
    n: u64,
    cfg: StoppingConfig,
    rng: &mut RngStream,
) -> Result<BonDataset> {
    if n == 0 {
        return Err(Error::domain("collection requires n >= 1"));
    }
    if !(cfg.mu_stop > 0.0) {
        return Err(Error::domain("stopping parameter must be positive"));
    }
    let mut records = Vec::with_capacity(n as usize);
    let mut group_sizes = Vec::with_capacity(n as usize);
    for _ in 0..n {
        let x = session.draw_prompt(rng)?;
        let mut best_lp = f64::NEG_INFINITY;
        let mut best_y = None;
        let mut k = 0u64;
        loop {
            if k >= cfg.draw_cap {
                return Err(Error::capacity(format!(
                    "adaptive stopping did not fire within {} draws (mu_stop {})",
                    cfg.draw_cap, cfg.mu_stop
                )));
            }
            let (y, lp) = session.draw_and_evaluate(x, rng)?;
            k += 1;
            if lp > best_lp + LOG_TIE_TOL || best_y.is_none() {
                best_lp = lp;
                best_y = Some(y);
            }
            // 1 / max prob <= k / mu, rearranged to avoid the division.
            if k as f64 * best_lp.exp() >= cfg.mu_stop {
                break;
            }
        }
        records.push((x, best_y.expect("at least one draw")));
        group_sizes.push(k);
    }
    Ok(BonDataset {
        prompt_count: session.base().prompt_count(),
        response_count: session.base().response_count(),
        records,
        group_sizes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::tilt;
    use crate::space::PromptDistribution;

    fn single(row: Vec<f64>) -> Model {
        Model::from(TabularModel::new(vec![row]).unwrap())
    }

    #[test]
    fn bon_distribution_matches_closed_forms() {
        let base = single(vec![0.6, 0.4]);
        let d1 = exact_bon_distribution(&base, 0, 1, LOG_TIE_TOL).unwrap();
        assert!((d1[0] - 0.6).abs() < 1e-15 && (d1[1] - 0.4).abs() < 1e-15);

        let d2 = exact_bon_distribution(&base, 0, 2, LOG_TIE_TOL).unwrap();
        assert!((d2[0] - 0.84).abs() < 1e-12 && (d2[1] - 0.16).abs() < 1e-12);

        let uni = single(vec![0.5, 0.5]);
        let d3 = exact_bon_distribution(&uni, 0, 3, LOG_TIE_TOL).unwrap();
        assert!((d3[0] - 0.5).abs() < 1e-12 && (d3[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn bon_distribution_tie_group_split() {
        // base (0.4, 0.4, 0.2), N = 2, first-drawn tie-breaking. Brute
        // force over ordered draw pairs: y0 wins on (y0,y0), (y0,y1),
        // (y0,y2), (y2,y0) = 0.16 + 0.16 + 0.08 + 0.08 = 0.48, y1
        // symmetrically, y2 only on (y2,y2) = 0.04.
        let base = single(vec![0.4, 0.4, 0.2]);
        let d = exact_bon_distribution(&base, 0, 2, LOG_TIE_TOL).unwrap();
        assert!((d[0] - 0.48).abs() < 1e-12);
        assert!((d[1] - 0.48).abs() < 1e-12);
        assert!((d[2] - 0.04).abs() < 1e-12);
    }

    #[test]
    fn bon_distribution_sums_to_one_and_sharpens() {
        let base = single(vec![0.5, 0.3, 0.15, 0.05]);
        let mut prev_top = 0.0;
        for n in [1u64, 2, 5, 20, 100] {
            let d = exact_bon_distribution(&base, 0, n, LOG_TIE_TOL).unwrap();
            let total: f64 = d.iter().sum();
            assert!((total - 1.0).abs() < 1e-12, "sum {total} at N={n}");
            assert!(d[0] > prev_top);
            prev_top = d[0];
        }
    }

    #[test]
    fn collection_accounts_budget() {
        let base = single(vec![0.6, 0.3, 0.1]);
        let mu = PromptDistribution::uniform(1);
        let mut rng = RngStream::from_seed(2);
        let mut session = OracleSession::new(&base, &mu);
        let data =
            collect_bon_dataset(&mut session, 3, 5, SelfReward::LogLikelihood, &mut rng).unwrap();
        assert_eq!(data.len(), 3);
        let report = session.budget_report();
        assert_eq!((report.n, report.n_max, report.m), (3, 5, 15));
    }

    #[test]
    fn deterministic_base_collects_support_point() {
        let base = Model::from(TabularModel::point_mass(4, &[3]));
        let mu = PromptDistribution::uniform(1);
        let mut rng = RngStream::from_seed(3);
        let mut session = OracleSession::new(&base, &mu);
        let data =
            collect_bon_dataset(&mut session, 5, 2, SelfReward::LogLikelihood, &mut rng).unwrap();
        assert!(data.records.iter().all(|&(_, y)| y == 3));
    }

    #[test]
    fn collected_selections_match_the_exact_distribution() {
        // 1e5 best-of-3 records through the oracle path; empirical selected
        // frequencies against the closed-form distribution.
        let base = single(vec![0.6, 0.3, 0.1]);
        let mu = PromptDistribution::uniform(1);
        let mut rng = RngStream::from_seed(21);
        let mut session = OracleSession::new(&base, &mu);
        let records = 100_000u64;
        let data =
            collect_bon_dataset(&mut session, records, 3, SelfReward::LogLikelihood, &mut rng)
                .unwrap();
        let exact = exact_bon_distribution(&base, 0, 3, LOG_TIE_TOL).unwrap();
        let mut counts = [0u64; 3];
        for &(_, y) in &data.records {
            counts[y] += 1;
        }
        let tv: f64 = counts
            .iter()
            .zip(&exact)
            .map(|(&c, &p)| (c as f64 / records as f64 - p).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv <= 0.02, "total variation {tv}");
    }

    #[test]
    fn tabular_mle_is_empirical_frequency() {
        let data = BonDataset {
            prompt_count: 1,
            response_count: 2,
            records: vec![(0, 0), (0, 0), (0, 0), (0, 1)],
            group_sizes: vec![1; 4],
        };
        let fitted = mle_fit(&ModelClass::Tabular, &data).unwrap();
        let row = fitted.probs(0).unwrap();
        assert_eq!(row, vec![0.75, 0.25]);
    }

    #[test]
    fn singleton_class_returns_member() {
        let base = single(vec![0.6, 0.4]);
        let data = BonDataset {
            prompt_count: 1,
            response_count: 2,
            records: vec![(0, 0)],
            group_sizes: vec![1],
        };
        let fitted = mle_fit(&ModelClass::Finite(vec![base.clone()]), &data).unwrap();
        assert_eq!(fitted, base);
    }

    #[test]
    fn finite_mle_prefers_the_generating_model() {
        // Tilted model is noticeably sharper; data drawn from it selects it
        // over the base by log-likelihood-ratio concentration.
        let base = single(vec![0.6, 0.4]);
        let tilted = tilt(&base, 1.0).unwrap();
        let rng = RngStream::from_seed(11);
        let class = ModelClass::Finite(vec![base.clone(), tilted.clone()]);
        let mut wins = 0;
        for trial in 0..100 {
            let mut trial_rng = rng.split(trial);
            let mut records = Vec::new();
            for _ in 0..500 {
                records.push((0usize, tilted.sample(0, &mut trial_rng).unwrap()));
            }
            let data = BonDataset {
                prompt_count: 1,
                response_count: 2,
                group_sizes: vec![1; 500],
                records,
            };
            if mle_fit(&class, &data).unwrap() == tilted {
                wins += 1;
            }
        }
        assert!(wins >= 99, "tilt selected in {wins}/100 trials");
    }

    #[test]
    fn finite_mle_permutation_invariant() {
        let base = single(vec![0.6, 0.4]);
        let tilted = tilt(&base, 0.5).unwrap();
        let class = ModelClass::Finite(vec![base, tilted]);
        let records = vec![(0, 0), (0, 1), (0, 0), (0, 0)];
        let mut reversed = records.clone();
        reversed.reverse();
        let mk = |records: Vec<(usize, usize)>| BonDataset {
            prompt_count: 1,
            response_count: 2,
            group_sizes: vec![1; records.len()],
            records,
        };
        assert_eq!(
            mle_fit(&class, &mk(records)).unwrap(),
            mle_fit(&class, &mk(reversed)).unwrap()
        );
    }

    #[test]
    fn adaptive_stopping_deterministic_base() {
        let base = Model::from(TabularModel::point_mass(2, &[0]));
        let mu = PromptDistribution::uniform(1);
        let mut rng = RngStream::from_seed(4);
        let mut session = OracleSession::new(&base, &mu);
        let cfg = StoppingConfig::new(2.0).unwrap();
        let data = adaptive_collect(&mut session, 3, cfg, &mut rng).unwrap();
        // 1/max = 1 <= k/2 first holds at k = 2.
        assert_eq!(data.group_sizes, vec![2, 2, 2]);
        assert!(data.records.iter().all(|&(_, y)| y == 0));
    }

    #[test]
    fn adaptive_draw_cap_is_capacity_error() {
        // Uniform over 64 responses: max prob 1/64, mu_stop 16 means the
        // rule fires at k = 1024 > the cap of 100.
        let base = Model::from(TabularModel::uniform(1, 64));
        let mu = PromptDistribution::uniform(1);
        let mut rng = RngStream::from_seed(5);
        let mut session = OracleSession::new(&base, &mu);
        let cfg = StoppingConfig::new(16.0).unwrap().with_draw_cap(100);
        assert!(matches!(
            adaptive_collect(&mut session, 1, cfg, &mut rng),
            Err(Error::Capacity(_))
        ));
    }

    #[test]
    fn multilayer_softmax_mle_improves_on_zero() {
        // Two-layer family over V^2 with a planted data-generating model;
        // the fitted parameters must beat the zero model's likelihood and
        // approach the generator.
        let vocab = 2usize;
        let dim = 2usize;
        let level0 = vec![1.0, 0.0, 0.0, 1.0];
        let level1 = vec![
            0.8, 0.0, 0.0, 0.8, //
            0.6, 0.0, 0.0, 0.6,
        ];
        let features = Arc::new(FeatureSet::Sequence {
            dim,
            vocab,
            horizon: 2,
            levels: vec![vec![level0], vec![level1]],
        });
        let family = SoftmaxFamily { features, norm_bound: 6.0 };
        let generator = Model::from(family.model(vec![vec![1.2, -0.5], vec![-0.8, 0.9]]).unwrap());
        let mut rng = RngStream::from_seed(23);
        let records: Vec<(usize, usize)> = (0..800)
            .map(|_| (0usize, generator.sample(0, &mut rng).unwrap()))
            .collect();
        let data = BonDataset {
            prompt_count: 1,
            response_count: 4,
            group_sizes: vec![1; records.len()],
            records,
        };
        let fitted = mle_fit(&ModelClass::LinearSoftmax(family.clone()), &data).unwrap();
        let ll = |m: &Model| -> f64 {
            data.records.iter().map(|&(x, y)| m.logprob(x, y).unwrap()).sum()
        };
        let zero = Model::from(family.zero_model().unwrap());
        assert!(ll(&fitted) > ll(&zero));
        // Fitted distribution close to the generator at this sample size.
        let tv: f64 = fitted
            .probs(0)
            .unwrap()
            .iter()
            .zip(generator.probs(0).unwrap())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv < 0.08, "total variation {tv}");
    }

    #[test]
    fn softmax_mle_recovers_direction() {
        // Two responses, phi = (1), (-1); data heavily favors response 0.
        let features = Arc::new(FeatureSet::Atomic {
            dim: 1,
            per_prompt: vec![vec![1.0, -1.0]],
        });
        let family = SoftmaxFamily { features, norm_bound: 4.0 };
        let mut records = vec![(0usize, 0usize); 90];
        records.extend(vec![(0usize, 1usize); 10]);
        let data = BonDataset {
            prompt_count: 1,
            response_count: 2,
            group_sizes: vec![1; records.len()],
            records,
        };
        let fitted = mle_fit(&ModelClass::LinearSoftmax(family), &data).unwrap();
        let probs = fitted.probs(0).unwrap();
        assert!((probs[0] - 0.9).abs() < 1e-3, "fitted {probs:?}");
    }
}
