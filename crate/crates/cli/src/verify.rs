//! Verification suites behind `sharpen verify` and the acceptance test
//! target: property checks and desk-scale trend replications, each with its
//! tolerances pinned in code.

use anyhow::{bail, Result};
use sharpen_core::consts::LOG_TIE_TOL;
use sharpen_core::decode::{exact_sequence_argmax, greedy_decode, required_n, SelfReward};
use sharpen_core::exec;
use sharpen_core::instances::{
    lower_bound_family, maxcut_hardness, random_tabular_instance, representational_example,
    softmax_separation, Graph, RandomTabularSpec, SharpeningInstance,
};
use sharpen_core::metrics::{
    argmax_set, coverage_profile, gamma_argmax_set, j_beta, sharpness_check, tilt, Reward,
};
use sharpen_core::model::{ArTabularModel, FeatureSet, Model, TabularModel};
use sharpen_core::oracle::OracleSession;
use sharpen_core::rlhf::{dpo_fit, dpo_loss, dpo_loss_grad, xpo_run, PrefTriple, PreferenceDataset, XpoConfig};
use sharpen_core::sft::{
    adaptive_collect, collect_bon_dataset, exact_bon_distribution, mle_fit, ModelClass,
    SoftmaxFamily, StoppingConfig,
};
use sharpen_core::RngStream;

/// Calibrated constant for the filter-then-fit trend replication, frozen
/// after a one-time sweep: the smallest value in {0.5, 0.6, 0.7, 0.8} whose
/// prescribed (n, N) passes the random-tabular family at 90/100 while the
/// quarter-width run on the hard family stays below 90.
pub const SFT_TREND_C: f64 = 0.7;

/// One measured check.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub pass: bool,
    pub measured: String,
}

impl CheckResult {
    fn new(name: impl Into<String>, pass: bool, measured: impl Into<String>) -> Self {
        CheckResult { name: name.into(), pass, measured: measured.into() }
    }
}

/// All checks of one named suite.
#[derive(Debug, Clone)]
pub struct SuiteResult {
    pub suite: &'static str,
    pub checks: Vec<CheckResult>,
}

impl SuiteResult {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

pub const SUITES: &[&str] = &[
    "bon-oracle",
    "greedy-prop",
    "bon-bound",
    "adaptive",
    "sft-trend",
    "tilt-margin",
    "dpo",
    "separation",
    "maxcut",
    "representational",
    "analyzer",
    "concentrability",
];

pub fn run_suite(name: &str) -> Result<SuiteResult> {
    match name {
        "bon-oracle" => bon_oracle(),
        "greedy-prop" => greedy_prop(),
        "bon-bound" => bon_bound(),
        "adaptive" => adaptive(),
        "sft-trend" => sft_trend(),
        "tilt-margin" => tilt_margin(),
        "dpo" => dpo(),
        "separation" => separation(),
        "maxcut" => maxcut(),
        "representational" => representational(),
        "analyzer" => analyzer(),
        "concentrability" => concentrability(),
        other => bail!("unknown suite {other:?} (see `sharpen verify list`)"),
    }
}

pub fn run_all() -> Result<Vec<SuiteResult>> {
    SUITES.iter().map(|name| run_suite(name)).collect()
}

fn three_sigma(p: f64, trials: u64) -> f64 {
    3.0 * (p * (1.0 - p) / trials as f64).sqrt()
}

/// Fast categorical draw from a cumulative scan.
fn draw(probs: &[f64], rng: &mut RngStream) -> usize {
    let u = rng.uniform();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

fn random_row(len: usize, rng: &mut RngStream) -> Vec<f64> {
    let mut row: Vec<f64> = (0..len)
        .map(|_| -rng.uniform().max(f64::MIN_POSITIVE).ln())
        .collect();
    let total: f64 = row.iter().sum();
    for v in row.iter_mut() {
        *v /= total;
    }
    row
}

/// Criterion 1: Monte Carlo best-of-N frequencies match the exact
/// distribution within total variation 0.02 at 1e5 trials, for 200 random
/// bases and N in {1, 2, 5, 20}.
fn bon_oracle() -> Result<SuiteResult> {
    const INSTANCES: usize = 200;
    const TRIALS: usize = 100_000;
    const WIDTHS: [u64; 4] = [1, 2, 5, 20];
    let worst: Vec<f64> = exec::map_indexed(INSTANCES, |i| {
        let mut rng = RngStream::new(9001, i as u64);
        let y_count = 2 + rng.below(15); // up to 16
        let probs = random_row(y_count, &mut rng);
        let lps: Vec<f64> = probs.iter().map(|&p| p.ln()).collect();
        let base = Model::from(TabularModel::new(vec![probs.clone()]).unwrap());
        let mut worst_tv = 0.0f64;
        for &n in &WIDTHS {
            let exact = exact_bon_distribution(&base, 0, n, LOG_TIE_TOL).unwrap();
            let mut counts = vec![0u64; y_count];
            for _ in 0..TRIALS {
                let mut best = usize::MAX;
                let mut best_lp = f64::NEG_INFINITY;
                for _ in 0..n {
                    let y = draw(&probs, &mut rng);
                    if best == usize::MAX || lps[y] > best_lp {
                        best = y;
                        best_lp = lps[y];
                    }
                }
                counts[best] += 1;
            }
            let tv: f64 = counts
                .iter()
                .zip(&exact)
                .map(|(&c, &p)| (c as f64 / TRIALS as f64 - p).abs())
                .sum::<f64>()
                / 2.0;
            worst_tv = worst_tv.max(tv);
        }
        worst_tv
    });
    let max_tv = worst.iter().cloned().fold(0.0, f64::max);
    Ok(SuiteResult {
        suite: "bon-oracle",
        checks: vec![CheckResult::new(
            "bon monte carlo vs exact distribution",
            max_tv <= 0.02,
            format!("max TV {max_tv:.5} over {INSTANCES} instances x {:?} (cap 0.02)", WIDTHS),
        )],
    })
}

fn planted_ar_model(vocab: usize, horizon: usize, rng: &mut RngStream) -> (ArTabularModel, usize) {
    // Plant one trajectory with per-step probability in [0.86, 0.95] so the
    // sequence mass clears 1/2 at any horizon up to 4; fill the rest with
    // random rows.
    let path: Vec<usize> = (0..horizon).map(|_| rng.below(vocab)).collect();
    let mut steps = Vec::with_capacity(horizon);
    let mut planted_prefix = 0usize;
    for (h, &planted_token) in path.iter().enumerate() {
        let prefixes = vocab.pow(h as u32);
        let mut table = Vec::with_capacity(prefixes * vocab);
        for p in 0..prefixes {
            let mut row = random_row(vocab, rng);
            if p == planted_prefix {
                let q = 0.86 + 0.09 * rng.uniform();
                let rest: f64 = row
                    .iter()
                    .enumerate()
                    .filter(|(v, _)| *v != planted_token)
                    .map(|(_, &w)| w)
                    .sum();
                for (v, w) in row.iter_mut().enumerate() {
                    *w = if v == planted_token { q } else { *w * (1.0 - q) / rest };
                }
            }
            table.extend(row);
        }
        steps.push(table);
        planted_prefix = planted_prefix * vocab + planted_token;
    }
    let model = ArTabularModel::new(vocab, horizon, vec![steps]).unwrap();
    let mut idx = 0;
    for &t in &path {
        idx = idx * vocab + t;
    }
    (model, idx)
}

/// Criterion 2: greedy decoding equals the exact sequence argmax on 1000
/// models with a unique argmax above half mass, and fails on the documented
/// 0.4-mass counterexample.
fn greedy_prop() -> Result<SuiteResult> {
    const MODELS: usize = 1000;
    let failures: usize = exec::map_indexed(MODELS, |i| {
        let mut rng = RngStream::new(9002, i as u64);
        let vocab = 2 + rng.below(4); // up to 5
        let horizon = 2 + rng.below(3); // up to 4
        let (model, planted) = planted_ar_model(vocab, horizon, &mut rng);
        let model = Model::from(model);
        let mass = model.probs(0).unwrap()[planted];
        assert!(mass > 0.5, "planting failed: mass {mass}");
        let argmax = exact_sequence_argmax(&model, 0, LOG_TIE_TOL).unwrap();
        let greedy = greedy_decode(&model, 0).unwrap();
        usize::from(argmax != vec![planted] || greedy != planted)
    })
    .into_iter()
    .sum();

    // The tight counterexample: pi_1 = (0.4, 0.6), continuations from the
    // 0.6 branch split evenly; greedy lands on mass 0.3, argmax has 0.4.
    let counterexample = Model::from(
        ArTabularModel::new(
            2,
            2,
            vec![vec![vec![0.4, 0.6], vec![1.0, 0.0, 0.5, 0.5]]],
        )
        .unwrap(),
    );
    let greedy = greedy_decode(&counterexample, 0).unwrap();
    let argmax = exact_sequence_argmax(&counterexample, 0, LOG_TIE_TOL).unwrap();
    let ce_fails = argmax == vec![0] && greedy != 0;

    Ok(SuiteResult {
        suite: "greedy-prop",
        checks: vec![
            CheckResult::new(
                "greedy equals sequence argmax above half mass",
                failures == 0,
                format!("{failures}/{MODELS} disagreements"),
            ),
            CheckResult::new(
                "0.4-mass counterexample defeats greedy",
                ce_fails,
                format!("greedy sequence index {greedy}, argmax {argmax:?}"),
            ),
        ],
    })
}

/// Criterion 3: with N from the sample-size formula, the Monte Carlo
/// failure rate stays within rho plus three-sigma binomial slack.
fn bon_bound() -> Result<SuiteResult> {
    const COMBOS: usize = 50;
    const TRIALS: u64 = 10_000;
    let gammas = [0.0, 0.25, 0.5, 0.75];
    let rhos = [0.3, 0.1, 0.05, 0.02];
    let margins: Vec<(f64, f64, u64)> = exec::map_indexed(COMBOS, |i| {
        let mut rng = RngStream::new(9003, i as u64);
        let y_count = 4 + rng.below(13); // up to 16
        let probs = random_row(y_count, &mut rng);
        let base = Model::from(TabularModel::new(vec![probs.clone()]).unwrap());
        let gamma = gammas[i % gammas.len()];
        let rho = rhos[(i / gammas.len()) % rhos.len()];
        let target = gamma_argmax_set(&base, 0, gamma).unwrap();
        let mass: f64 = target.iter().map(|&y| probs[y]).sum();
        let n = required_n(rho, mass).unwrap();
        let in_target = {
            let mut mask = vec![false; y_count];
            for &y in &target {
                mask[y] = true;
            }
            mask
        };
        let mut failures = 0u64;
        for _ in 0..TRIALS {
            let mut hit = false;
            for _ in 0..n {
                if in_target[draw(&probs, &mut rng)] {
                    hit = true;
                }
            }
            if !hit {
                failures += 1;
            }
        }
        let rate = failures as f64 / TRIALS as f64;
        (rate, rho + three_sigma(rho, TRIALS), n)
    });
    let violations = margins.iter().filter(|(rate, cap, _)| rate > cap).count();
    let worst = margins
        .iter()
        .map(|(rate, cap, _)| rate - cap)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(SuiteResult {
        suite: "bon-bound",
        checks: vec![CheckResult::new(
            "failure rate at the prescribed N",
            violations == 0,
            format!("{violations}/{COMBOS} combos over the cap; worst slack {worst:.5}"),
        )],
    })
}

/// Criterion 4: adaptive stopping obeys the expected-draw bound within 5%
/// and the selection-error tail bound plus Monte Carlo slack.
fn adaptive() -> Result<SuiteResult> {
    const INSTANCES: usize = 50;
    const TRIALS: u64 = 6_000;
    let mu_stops = [0.7, 1.0, 2.0, 20.0f64.ln()];
    let results: Vec<(bool, bool, f64, f64)> = exec::map_indexed(INSTANCES, |i| {
        let mut rng = RngStream::new(9004, i as u64);
        let y_count = 3 + rng.below(10); // up to 12
        let mut probs = random_row(y_count, &mut rng);
        if i % 5 == 4 {
            // Plant an exact argmax tie so |y*| = 2 paths are exercised.
            let mut order: Vec<usize> = (0..y_count).collect();
            order.sort_by(|&a, &b| probs[b].partial_cmp(&probs[a]).unwrap());
            let (top, second) = (order[0], order[1]);
            let shared = (probs[top] + probs[second]) / 2.0;
            probs[top] = shared;
            probs[second] = shared;
        }
        let base = Model::from(TabularModel::new(vec![probs.clone()]).unwrap());
        let mu = sharpen_core::space::PromptDistribution::uniform(1);
        let star = argmax_set(&base, 0, LOG_TIE_TOL).unwrap();
        let p_star = probs[star[0]];
        let mu_stop = mu_stops[i % mu_stops.len()];

        let mut session = OracleSession::new(&base, &mu);
        let cfg = StoppingConfig::new(mu_stop).unwrap();
        let data = adaptive_collect(&mut session, TRIALS, cfg, &mut rng).unwrap();
        let mean_draws =
            data.group_sizes.iter().sum::<u64>() as f64 / data.group_sizes.len() as f64;
        let errors = data.records.iter().filter(|&&(_, y)| !star.contains(&y)).count();
        let err_rate = errors as f64 / TRIALS as f64;

        let mean_bound = (mu_stop + 1.0 / star.len() as f64) / p_star * 1.05;
        let tail = (-(star.len() as f64) * mu_stop).exp();
        let err_bound = tail + three_sigma(tail.max(1e-4), TRIALS);
        (
            mean_draws <= mean_bound,
            err_rate <= err_bound,
            mean_draws / (mean_bound / 1.05),
            err_rate - err_bound,
        )
    });
    let mean_fails = results.iter().filter(|r| !r.0).count();
    let err_fails = results.iter().filter(|r| !r.1).count();
    let worst_ratio = results.iter().map(|r| r.2).fold(0.0, f64::max);
    let worst_err = results.iter().map(|r| r.3).fold(f64::NEG_INFINITY, f64::max);
    Ok(SuiteResult {
        suite: "adaptive",
        checks: vec![
            CheckResult::new(
                "expected draws within 1.05x of the bound",
                mean_fails == 0,
                format!("{mean_fails}/{INSTANCES} over; worst mean/bound ratio {worst_ratio:.4}"),
            ),
            CheckResult::new(
                "selection error within the tail bound",
                err_fails == 0,
                format!("{err_fails}/{INSTANCES} over; worst slack {worst_err:.5}"),
            ),
        ],
    })
}

#[allow(clippy::too_many_arguments)]
fn sft_success(
    instance: &SharpeningInstance,
    class: &ModelClass,
    n: u64,
    width: u64,
    delta: f64,
    gamma: f64,
    epsilon: f64,
    rng: &mut RngStream,
) -> bool {
    let mut session = OracleSession::new(&instance.base, &instance.mu);
    let Ok(data) = collect_bon_dataset(&mut session, n, width, SelfReward::LogLikelihood, rng)
    else {
        return false;
    };
    let Ok(fitted) = mle_fit(class, &data) else {
        return false;
    };
    sharpness_check(&fitted, &instance.base, &instance.mu, delta, gamma)
        .map(|v| v.is_sharp(epsilon))
        .unwrap_or(false)
}

/// Criterion 5: with the frozen constant, the prescribed (n, N) succeeds on
/// the random-tabular family in at least 90/100 seeds, while a quarter of
/// the width drops success below 90/100 on the hard family instance.
fn sft_trend() -> Result<SuiteResult> {
    const SEEDS: usize = 100;
    let (epsilon, delta): (f64, f64) = (0.2, 0.25);
    let width_factor = (2.0 / delta).ln() / epsilon; // ln(2/delta) / epsilon

    // Random-tabular side: gamma = 0, finite best-of-k ladder class.
    let random_successes: usize = exec::map_indexed(SEEDS, |s| {
        let mut rng = RngStream::new(9005, s as u64);
        let mut spec = RandomTabularSpec::new(4, 8);
        spec.margin_range = Some((0.3, 2.0));
        spec.c_cov_range = Some((1.5, 3.0));
        let instance = random_tabular_instance(&spec, &mut rng).unwrap();
        let width = (SFT_TREND_C * instance.truth.c_cov * width_factor).ceil() as u64;
        let class = crate::experiment::bon_ladder(&instance.base, width).unwrap();
        let class_size = match &class {
            ModelClass::Finite(m) => m.len(),
            _ => unreachable!(),
        };
        let n = (SFT_TREND_C * (class_size as f64).ln() / (delta * epsilon)).ceil() as u64;
        usize::from(sft_success(&instance, &class, n, width, delta, 0.0, epsilon, &mut rng))
    })
    .into_iter()
    .sum();

    // Hard-family side: gamma = 1/2, implicit tabular family, full class
    // size in the bookkeeping.
    let mut inst_rng = RngStream::new(9006, 0);
    let hard = lower_bound_family(4, 12, 0.4, 0.5, &mut inst_rng)?;
    let hard_width =
        (SFT_TREND_C * hard.truth.c_cov_gamma * width_factor).ceil() as u64;
    let hard_n = (SFT_TREND_C * hard.truth.log_class_size.unwrap() / (delta * epsilon)).ceil() as u64;
    let quarter_width = hard_width.div_ceil(4);
    let run_hard = |width: u64| -> usize {
        exec::map_indexed(SEEDS, |s| {
            let mut rng = RngStream::new(9007 + width, s as u64);
            usize::from(sft_success(
                &hard,
                &ModelClass::Tabular,
                hard_n,
                width,
                delta,
                0.5,
                epsilon,
                &mut rng,
            ))
        })
        .into_iter()
        .sum()
    };
    let hard_full = run_hard(hard_width);
    let hard_quarter = run_hard(quarter_width);

    Ok(SuiteResult {
        suite: "sft-trend",
        checks: vec![
            CheckResult::new(
                "random-tabular success at the prescribed width",
                random_successes >= 90,
                format!("{random_successes}/100 (need >= 90, c = {SFT_TREND_C})"),
            ),
            CheckResult::new(
                "hard family succeeds at the prescribed width",
                hard_full >= 90,
                format!("{hard_full}/100 at N = {hard_width}, n = {hard_n}"),
            ),
            CheckResult::new(
                "quarter width drops the hard family below 90",
                hard_quarter < 90,
                format!("{hard_quarter}/100 at N = {quarter_width}"),
            ),
        ],
    })
}

fn simplex_grid(points_per_edge: usize) -> Vec<Vec<f64>> {
    // Compositions of k into 3 parts, k = points_per_edge.
    let k = points_per_edge;
    let mut out = Vec::new();
    for a in 0..=k {
        for b in 0..=(k - a) {
            let c = k - a - b;
            out.push(vec![a as f64 / k as f64, b as f64 / k as f64, c as f64 / k as f64]);
        }
    }
    out
}

/// Criterion 6: the tilt maximizes the KL-regularized value over a simplex
/// grid, and under the margin condition on beta it concentrates on the
/// argmax set to within delta/2, exactly.
fn tilt_margin() -> Result<SuiteResult> {
    const INSTANCES: usize = 100;
    let betas = [0.3, 1.0, 2.5];
    let grid = simplex_grid(13); // 105 points
    let grid_fail: usize = exec::map_indexed(INSTANCES, |i| {
        let mut rng = RngStream::new(9008, i as u64);
        let probs = random_row(3, &mut rng);
        let base = Model::from(TabularModel::new(vec![probs]).unwrap());
        let mu = sharpen_core::space::PromptDistribution::uniform(1);
        let beta = betas[i % betas.len()];
        let tilted = tilt(&base, beta).unwrap();
        let j_star = j_beta(&tilted, &base, &mu, beta, &Reward::LogBase).unwrap();
        let mut fails = 0usize;
        for point in &grid {
            let cand = Model::from(TabularModel::new(vec![point.clone()]).unwrap());
            let j = j_beta(&cand, &base, &mu, beta, &Reward::LogBase).unwrap();
            if j > j_star + 1e-12 {
                fails += 1;
            }
        }
        fails
    })
    .into_iter()
    .sum();

    // Margin chain: beta at the threshold implies per-prompt tilt mass of
    // at least 1 - delta/2 on the argmax set.
    let deltas = [0.25, 0.1];
    let margin_fail: usize = exec::map_indexed(INSTANCES, |i| {
        let mut rng = RngStream::new(9009, i as u64);
        let mut spec = RandomTabularSpec::new(1 + rng.below(3), 3 + rng.below(6));
        spec.margin_range = Some((0.3, 2.0));
        let instance = random_tabular_instance(&spec, &mut rng).unwrap();
        let delta = deltas[i % deltas.len()];
        let y_count = instance.base.response_count() as f64;
        let beta_cap = instance.truth.margin_max / (2.0 * (2.0 * y_count / delta).ln());
        let mut fails = 0usize;
        for beta in [beta_cap, beta_cap / 2.0] {
            let tilted = tilt(&instance.base, beta).unwrap();
            for x in 0..instance.base.prompt_count() {
                let probs = tilted.probs(x).unwrap();
                let mass: f64 = instance.truth.argmax_sets[x].iter().map(|&y| probs[y]).sum();
                if mass < 1.0 - delta / 2.0 {
                    fails += 1;
                }
            }
        }
        fails
    })
    .into_iter()
    .sum();

    Ok(SuiteResult {
        suite: "tilt-margin",
        checks: vec![
            CheckResult::new(
                "tilt maximizes the KL-regularized value on the grid",
                grid_fail == 0,
                format!("{grid_fail} grid points above the tilt over {INSTANCES} instances"),
            ),
            CheckResult::new(
                "margin-calibrated beta concentrates the tilt",
                margin_fail == 0,
                format!("{margin_fail} prompt failures over {INSTANCES} instances"),
            ),
        ],
    })
}

fn preference_data(base: &Model, n: u64, rng: &mut RngStream) -> PreferenceDataset {
    let prompts = base.prompt_count();
    let mut triples = Vec::with_capacity(n as usize);
    for _ in 0..n {
        let x = rng.below(prompts);
        let y = base.sample(x, rng).unwrap();
        let y2 = base.sample(x, rng).unwrap();
        triples.push(PrefTriple {
            prompt: x,
            first: y,
            second: y2,
            base_lp_first: base.logprob(x, y).unwrap(),
            base_lp_second: base.logprob(x, y2).unwrap(),
        });
    }
    PreferenceDataset { triples }
}

/// Criterion 7: the tilt zeroes the squared loss to 1e-18, the realizable
/// finite class recovers it every seed, and the analytic gradient matches
/// central finite differences to 1e-4 relative error.
fn dpo() -> Result<SuiteResult> {
    const IDENTITY_INSTANCES: usize = 500;
    let betas = [0.25, 0.5, 1.0, 2.0];
    let worst_loss = exec::map_indexed(IDENTITY_INSTANCES, |i| {
        let mut rng = RngStream::new(9010, i as u64);
        let prompts = 1 + rng.below(3);
        let rows: Vec<Vec<f64>> = (0..prompts)
            .map(|_| random_row(2 + rng.below(7), &mut rng))
            .collect();
        let width = rows[0].len();
        let rows = rows
            .into_iter()
            .map(|r| if r.len() == width { r } else { random_row(width, &mut rng) })
            .collect();
        let base = Model::from(TabularModel::new(rows).unwrap());
        let beta = betas[i % betas.len()];
        let data = preference_data(&base, 20, &mut rng);
        let tilted = tilt(&base, beta).unwrap();
        dpo_loss(&tilted, &base, &data, beta).unwrap().value
    })
    .into_iter()
    .fold(0.0, f64::max);

    const FIT_SEEDS: usize = 100;
    let fit_wins: usize = exec::map_indexed(FIT_SEEDS, |s| {
        let mut rng = RngStream::new(9011, s as u64);
        let rows = vec![random_row(4 + rng.below(5), &mut rng)];
        let base = Model::from(TabularModel::new(rows).unwrap());
        let beta = betas[s % betas.len()];
        let target = tilt(&base, beta).unwrap();
        let class = ModelClass::Finite(vec![
            base.clone(),
            tilt(&base, 4.0 * beta).unwrap(),
            target.clone(),
            tilt(&base, beta / 2.0).unwrap(),
        ]);
        let data = preference_data(&base, 10, &mut rng);
        usize::from(dpo_fit(&class, &base, &data, beta).unwrap() == target)
    })
    .into_iter()
    .sum();

    const GRAD_CONFIGS: usize = 50;
    let grad_worst = exec::map_indexed(GRAD_CONFIGS, |i| {
        let mut rng = RngStream::new(9012, i as u64);
        let dim = 2 + rng.below(7); // up to 8
        let y_count = 4 + rng.below(7);
        let mut feats = Vec::new();
        for _ in 0..y_count {
            let v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-9);
            feats.extend(v.into_iter().map(|a| a / norm));
        }
        let features = std::sync::Arc::new(FeatureSet::Atomic { dim, per_prompt: vec![feats] });
        let family = SoftmaxFamily { features: features.clone(), norm_bound: 10.0 };
        let base = Model::from(family.model(vec![(0..dim).map(|_| 0.3 * rng.normal()).collect()]).unwrap());
        let data = preference_data(&base, 12, &mut rng);
        let theta: Vec<f64> = (0..dim).map(|_| 0.5 * rng.normal()).collect();
        let beta = betas[i % betas.len()];
        let (_, grad) = dpo_loss_grad(&family, &theta, &data, beta).unwrap();
        let eps = 1e-6;
        let mut worst = 0.0f64;
        for k in 0..dim {
            let mut up = theta.clone();
            let mut down = theta.clone();
            up[k] += eps;
            down[k] -= eps;
            let (lu, _) = dpo_loss_grad(&family, &up, &data, beta).unwrap();
            let (ld, _) = dpo_loss_grad(&family, &down, &data, beta).unwrap();
            let fd = (lu - ld) / (2.0 * eps);
            let denom = fd.abs().max(grad[k].abs()).max(1e-8);
            worst = worst.max((grad[k] - fd).abs() / denom);
        }
        worst
    })
    .into_iter()
    .fold(0.0, f64::max);

    Ok(SuiteResult {
        suite: "dpo",
        checks: vec![
            CheckResult::new(
                "tilt zeroes the squared loss",
                worst_loss < 1e-18,
                format!("max loss {worst_loss:.3e} over {IDENTITY_INSTANCES} instances (cap 1e-18)"),
            ),
            CheckResult::new(
                "realizable finite class recovers the tilt",
                fit_wins == FIT_SEEDS,
                format!("{fit_wins}/{FIT_SEEDS} recoveries"),
            ),
            CheckResult::new(
                "analytic gradient matches finite differences",
                grad_worst <= 1e-4,
                format!("worst relative error {grad_worst:.2e} over {GRAD_CONFIGS} configs"),
            ),
        ],
    })
}

/// Criterion 8: on the sphere-packed instance, best-of-16 stays below 0.9
/// mass on the argmax while exploration reaches at least 0.9 within the
/// iteration budget in at least 8 of 10 seeds.
fn separation() -> Result<SuiteResult> {
    const BOUND: f64 = 200.0;
    const ITERATIONS: usize = 400; // well under the 5000 cap
    const SEEDS: usize = 10;
    let mut rng = RngStream::new(9013, 0);
    let instance = softmax_separation(8, 64, BOUND, &mut rng)?;
    let star = instance.truth.argmax_sets[0].clone();

    let bon16 = exact_bon_distribution(&instance.base, 0, 16, LOG_TIE_TOL)?;
    let bon16_mass: f64 = star.iter().map(|&y| bon16[y]).sum();

    let ModelClass::LinearSoftmax(family) = &instance.class else {
        bail!("separation instance should carry a parametric class");
    };
    let class = crate::experiment::direction_grid(family, &instance.base)?;
    let class_len = match &class {
        ModelClass::Finite(m) => m.len(),
        _ => unreachable!(),
    };
    // beta chosen so the exact KL-regularized optimum lies on the grid
    // (parameter B times the planted direction).
    let beta = 1.0 / (BOUND - 1.0);
    let r_max = 1.0
        + (0..instance.base.response_count())
            .map(|y| instance.base.logprob(0, y).unwrap().abs())
            .fold(0.0, f64::max);
    let sec_proxy = 8.0 * ((ITERATIONS + 1) as f64).ln();
    let alpha = beta / r_max
        * ((2.0 * class_len as f64 * ITERATIONS as f64 / 0.05).ln() / (sec_proxy * ITERATIONS as f64))
            .sqrt();

    let masses: Vec<f64> = exec::map_indexed(SEEDS, |s| {
        let mut seed_rng = RngStream::new(9014, s as u64);
        let mut session = OracleSession::relaxed(&instance.base, &instance.mu);
        let cfg = XpoConfig::new(ITERATIONS, beta, alpha).unwrap();
        let outcome = xpo_run(&class, &instance.base, &instance.mu, &cfg, &mut session, &mut seed_rng)
            .unwrap();
        let probs = outcome.model.probs(0).unwrap();
        star.iter().map(|&y| probs[y]).sum()
    });
    let xpo_wins = masses.iter().filter(|&&m| m >= 0.9).count();

    Ok(SuiteResult {
        suite: "separation",
        checks: vec![
            CheckResult::new(
                "best-of-16 stays unsharp",
                bon16_mass < 0.9,
                format!("argmax mass {bon16_mass:.4} at N = 16 (cap 0.9)"),
            ),
            CheckResult::new(
                "exploration sharpens within the iteration budget",
                xpo_wins >= 8,
                format!(
                    "{xpo_wins}/{SEEDS} seeds reached mass >= 0.9 within T = {ITERATIONS} (grid {class_len})"
                ),
            ),
        ],
    })
}


fn random_odd_graph(rng: &mut RngStream) -> Graph {
    loop {
        let vertices = 2 + rng.below(7); // up to 8
        let mut edges = Vec::new();
        for u in 0..vertices {
            for v in (u + 1)..vertices {
                if rng.uniform() < 0.5 {
                    edges.push((u, v));
                }
            }
        }
        if edges.is_empty() {
            edges.push((0, 1));
        }
        if edges.len() % 2 == 0 {
            // Toggle the lexicographically last possible edge to flip parity.
            let last = (vertices - 2, vertices - 1);
            if let Some(pos) = edges.iter().position(|&e| e == last) {
                edges.remove(pos);
            } else {
                edges.push(last);
            }
        }
        if !edges.is_empty() && edges.len() % 2 == 1 {
            return Graph::new(vertices, edges).unwrap();
        }
    }
}

/// Criterion 9: the decoded cut from the sequence argmax equals the
/// brute-force maximum cut on 50 random odd-edge graphs.
fn maxcut() -> Result<SuiteResult> {
    const GRAPHS: usize = 50;
    let matches: usize = exec::map_indexed(GRAPHS, |i| {
        let mut rng = RngStream::new(9015, i as u64);
        let graph = random_odd_graph(&mut rng);
        let mc = maxcut_hardness(graph).unwrap();
        let optimum = mc.instance.truth.external_optimum.unwrap();
        let argmax = exact_sequence_argmax(&mc.instance.base, 0, LOG_TIE_TOL).unwrap();
        let ok = !argmax.is_empty()
            && argmax.iter().all(|&y| mc.decode_cut(y).1 == optimum);
        usize::from(ok)
    })
    .into_iter()
    .sum();
    Ok(SuiteResult {
        suite: "maxcut",
        checks: vec![CheckResult::new(
            "decoded argmax cut equals brute-force max cut",
            matches == GRAPHS,
            format!("{matches}/{GRAPHS} graphs matched"),
        )],
    })
}

/// Criterion 10: in the two-layer counterexample no class member exceeds
/// half mass on the base argmax (2, 1), which is itself unique at n = 100.
fn representational() -> Result<SuiteResult> {
    let n = 100usize;
    let instance = representational_example(n, None)?;
    let target = n; // tokens (2, 1): t0 = 1, t1 = 0
    let unique = instance.truth.argmax_sets[0] == vec![target];

    let ModelClass::LinearSoftmax(family) = &instance.class else {
        bail!("representational instance should carry a parametric class");
    };
    const THETAS: usize = 1000;
    let results: Vec<(bool, bool)> = exec::map_indexed(THETAS, |i| {
        let mut rng = RngStream::new(9016, i as u64);
        let layers: Vec<Vec<f64>> = (0..2)
            .map(|_| {
                let raw: Vec<f64> = (0..2).map(|_| rng.normal()).collect();
                let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
                let scale = if norm > family.norm_bound {
                    family.norm_bound / norm
                } else {
                    1.0
                };
                raw.into_iter().map(|v| v * scale).collect()
            })
            .collect();
        let model = Model::from(family.model(layers).unwrap());
        let step = model.step_probs(0, &[]).unwrap();
        let symmetric = step[0].to_bits() == step[1].to_bits();
        let capped = model.probs(0).unwrap()[target] <= 0.5 + 1e-12;
        (symmetric, capped)
    });
    let sym_fails = results.iter().filter(|r| !r.0).count();
    let cap_fails = results.iter().filter(|r| !r.1).count();

    Ok(SuiteResult {
        suite: "representational",
        checks: vec![
            CheckResult::new(
                "base argmax (2, 1) is unique at n = 100",
                unique,
                format!("argmax set {:?}", instance.truth.argmax_sets[0]),
            ),
            CheckResult::new(
                "first-token symmetry is exact for random parameters",
                sym_fails == 0,
                format!("{sym_fails}/{THETAS} asymmetric"),
            ),
            CheckResult::new(
                "no class member exceeds half mass on (2, 1)",
                cap_fails == 0,
                format!("{cap_fails}/{THETAS} over one half"),
            ),
        ],
    })
}

/// Criterion 11: on synthetic records from a known model, the analyzer's
/// best-of-50 accuracy matches the exact best-of-N mass on correct
/// responses within 0.02, and the coverage skyline dominates every selector
/// at every N.
fn analyzer() -> Result<SuiteResult> {
    use crate::analyze::{bon_analyze, AnalyzeRequest};
    use crate::records::CompletionRecord;

    let probs = vec![0.45, 0.3, 0.15, 0.1];
    let base = Model::from(TabularModel::new(vec![probs.clone()]).unwrap());
    let star = argmax_set(&base, 0, LOG_TIE_TOL)?;
    const PROMPTS: usize = 2500;
    const PER_PROMPT: usize = 50;
    let mut rng = RngStream::new(9017, 0);
    let mut records = Vec::with_capacity(PROMPTS * PER_PROMPT);
    for p in 0..PROMPTS {
        for _ in 0..PER_PROMPT {
            let y = draw(&probs, &mut rng);
            records.push(CompletionRecord {
                prompt_id: format!("p{p:04}"),
                response_id: format!("y{y}"),
                logprob: probs[y].ln(),
                length: 1 + y as u64,
                answer: Some(format!("y{y}")),
                correct: Some(star.contains(&y)),
            });
        }
    }
    let request = AnalyzeRequest {
        ns: vec![1, 2, 5, 10, 20, 50],
        rewards: vec![
            SelfReward::LogLikelihood,
            SelfReward::LengthNormalized,
            SelfReward::Majority,
        ],
        seed: 4,
        baseline: None,
        bootstrap: 200,
    };
    let report = bon_analyze(&records, &request).map_err(|e| anyhow::anyhow!("{e}"))?;

    let exact50 = exact_bon_distribution(&base, 0, 50, LOG_TIE_TOL)?;
    let exact_mass: f64 = star.iter().map(|&y| exact50[y]).sum();
    let acc50 = report
        .rows
        .iter()
        .find(|r| r.reward == SelfReward::LogLikelihood && r.n == 50)
        .and_then(|r| r.accuracy.map(|i| i.mean))
        .unwrap_or(f64::NAN);
    let gap = (acc50 - exact_mass).abs();

    let mut dominance_fails = 0usize;
    for row in &report.rows {
        let acc = row.accuracy.map(|i| i.mean).unwrap_or(0.0);
        let cov = row.coverage.map(|i| i.mean).unwrap_or(0.0);
        if cov < acc - 1e-12 {
            dominance_fails += 1;
        }
    }

    // Sampled N = 1 accuracy should sit near the argmax-set mass.
    let acc1 = report
        .rows
        .iter()
        .find(|r| r.reward == SelfReward::LogLikelihood && r.n == 1)
        .and_then(|r| r.accuracy.map(|i| i.mean))
        .unwrap_or(f64::NAN);
    let star_mass: f64 = star.iter().map(|&y| probs[y]).sum();

    Ok(SuiteResult {
        suite: "analyzer",
        checks: vec![
            CheckResult::new(
                "best-of-50 accuracy matches the exact mass",
                gap <= 0.02,
                format!("|{acc50:.4} - {exact_mass:.4}| = {gap:.4} (cap 0.02)"),
            ),
            CheckResult::new(
                "coverage skyline dominates every selector",
                dominance_fails == 0,
                format!("{dominance_fails} rows below a selector"),
            ),
            CheckResult::new(
                "plain sample accuracy at N = 1",
                (acc1 - star_mass).abs() <= 0.03,
                format!("{acc1:.4} vs exact {star_mass:.4}"),
            ),
        ],
    })
}

/// Criterion 12: the tilted optimum's concentrability never exceeds the
/// coverage coefficient, and its loss moment never exceeds the response
/// count, exactly, on 200 random instances.
fn concentrability() -> Result<SuiteResult> {
    const INSTANCES: usize = 200;
    let betas = [0.25, 0.5, 1.0, 2.0];
    let results: Vec<(f64, f64)> = exec::map_indexed(INSTANCES, |i| {
        let mut rng = RngStream::new(9018, i as u64);
        let prompts = 1 + rng.below(4);
        let y_count = 2 + rng.below(15);
        let rows: Vec<Vec<f64>> = (0..prompts).map(|_| random_row(y_count, &mut rng)).collect();
        let base = Model::from(TabularModel::new(rows).unwrap());
        let mu = sharpen_core::space::PromptDistribution::uniform(prompts);
        let beta = betas[i % betas.len()];
        let tilted = tilt(&base, beta).unwrap();
        let profile =
            coverage_profile(&base, &mu, 0.0, 1, std::slice::from_ref(&tilted), beta).unwrap();
        (
            profile.c_conc[0] - profile.c_cov,
            profile.c_loss[0] - y_count as f64,
        )
    });
    let conc_violations = results.iter().filter(|r| r.0 > 1e-9).count();
    let loss_violations = results.iter().filter(|r| r.1 > 1e-9).count();
    let worst_conc = results.iter().map(|r| r.0).fold(f64::NEG_INFINITY, f64::max);
    let worst_loss = results.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);
    Ok(SuiteResult {
        suite: "concentrability",
        checks: vec![
            CheckResult::new(
                "tilt concentrability at most the coverage coefficient",
                conc_violations == 0,
                format!("{conc_violations}/{INSTANCES} violations; worst slack {worst_conc:.2e}"),
            ),
            CheckResult::new(
                "tilt loss moment at most the response count",
                loss_violations == 0,
                format!("{loss_violations}/{INSTANCES} violations; worst slack {worst_loss:.2e}"),
            ),
        ],
    })
}
