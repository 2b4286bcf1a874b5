//! Pipeline orchestration: build the instance, run the configured algorithm
//! once per seed (in parallel, one RNG stream each), and assemble the
//! report plus persisted query logs.

use crate::config::{Algorithm, ClassChoice, ExperimentConfig, Hyper};
use crate::report::{iterates_to_csv, SeedOutcome, SharpeningReport};
use anyhow::{bail, Context, Result};
use sharpen_core::decode::{bon_sample, required_n};
use sharpen_core::exec;
use sharpen_core::instances::SharpeningInstance;
use sharpen_core::metrics::{
    coverage_profile, gamma_argmax_set, sharpness_check, tilt, CoverageProfile, SharpnessVerdict,
};
use sharpen_core::model::{FeatureSet, Model, TabularModel};
use sharpen_core::oracle::OracleSession;
use sharpen_core::rlhf::{collect_preference_dataset, dpo_fit, xpo_run, XpoConfig};
use sharpen_core::sft::{
    adaptive_collect, collect_bon_dataset, exact_bon_distribution, mle_fit, ModelClass,
    SoftmaxFamily, StoppingConfig,
};
use sharpen_core::{consts, RngStream};
use std::collections::BTreeMap;

/// Everything one seed produces.
pub struct SeedRun {
    pub fitted: Option<Model>,
    pub verdict: Option<SharpnessVerdict>,
    pub coverage: Option<CoverageProfile>,
    pub budget: sharpen_core::oracle::BudgetReport,
    pub objective_trace: Vec<f64>,
    pub query_log: String,
    pub iterate_csv: Option<String>,
    pub extras: BTreeMap<String, f64>,
}

/// Build the candidate class the fitting step will use.
pub fn build_class(
    instance: &SharpeningInstance,
    choice: ClassChoice,
    hyper: &Hyper,
    algorithm: Algorithm,
) -> Result<ModelClass> {
    match choice {
        ClassChoice::Tabular => Ok(ModelClass::Tabular),
        ClassChoice::BonLadder => bon_ladder(&instance.base, hyper.effective_width()),
        ClassChoice::TiltLadder => tilt_ladder(&instance.base, hyper.beta),
        ClassChoice::Instance => match (&instance.class, algorithm) {
            // Exploration enumerates; expand a parametric family into the
            // default direction grid.
            (ModelClass::LinearSoftmax(fam), Algorithm::Xpo) => direction_grid(fam, &instance.base),
            (class, _) => Ok(class.clone()),
        },
    }
}

/// Exact best-of-k distributions at a ladder of widths (the run's width
/// included, so the fitted object is realizable), plus one tilt.
pub fn bon_ladder(base: &Model, width: u64) -> Result<ModelClass> {
    let mut widths = vec![1u64, 2, 5, 10, 20, 50];
    if !widths.contains(&width) {
        widths.push(width);
    }
    widths.sort_unstable();
    let mut members = Vec::with_capacity(widths.len() + 1);
    for k in widths {
        let rows = (0..base.prompt_count())
            .map(|x| exact_bon_distribution(base, x, k, consts::LOG_TIE_TOL))
            .collect::<sharpen_core::Result<Vec<_>>>()?;
        members.push(Model::from(TabularModel::new(rows)?));
    }
    members.push(tilt(base, 1.0)?);
    Ok(ModelClass::Finite(members))
}

/// Tilts of the base at exponents bracketing the run's beta.
pub fn tilt_ladder(base: &Model, beta: f64) -> Result<ModelClass> {
    let mut members = vec![base.clone()];
    for b in [4.0 * beta, 2.0 * beta, beta, beta / 2.0] {
        members.push(tilt(base, b)?);
    }
    Ok(ModelClass::Finite(members))
}

/// Default finite enumeration of a single-layer softmax family: parameters
/// `c * u` for each response feature direction `u` and a radial grid of
/// `c` up to the norm bound, plus the zero model and the base parameter
/// direction when the base is itself a member of the family.
pub fn direction_grid(family: &SoftmaxFamily, base: &Model) -> Result<ModelClass> {
    let FeatureSet::Atomic { dim, per_prompt } = &*family.features else {
        bail!("the direction grid needs a single-layer family over atomic responses");
    };
    const RADIAL_STEPS: usize = 8;
    let mut directions: Vec<Vec<f64>> = Vec::new();
    for row in per_prompt {
        for phi in row.chunks(*dim) {
            let norm = phi.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1e-12 {
                directions.push(phi.iter().map(|v| v / norm).collect());
            }
        }
    }
    if let Model::LinearSoftmax(m) = base {
        let theta = &m.layers()[0];
        let norm = theta.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-12 {
            directions.push(theta.iter().map(|v| v / norm).collect());
        }
    }
    let mut members = vec![Model::from(family.zero_model()?)];
    for dir in directions {
        for step in 1..=RADIAL_STEPS {
            let c = family.norm_bound * step as f64 / RADIAL_STEPS as f64;
            let theta: Vec<f64> = dir.iter().map(|v| v * c).collect();
            members.push(Model::from(family.model(vec![theta])?));
        }
    }
    Ok(ModelClass::Finite(members))
}

fn verdict_profile(
    instance: &SharpeningInstance,
    fitted: &Model,
    hyper: &Hyper,
) -> Result<(SharpnessVerdict, CoverageProfile)> {
    let verdict = sharpness_check(fitted, &instance.base, &instance.mu, hyper.delta, hyper.gamma)?;
    // Concentrability entries are for the fitted candidate.
    let profile = coverage_profile(
        &instance.base,
        &instance.mu,
        hyper.gamma,
        1,
        std::slice::from_ref(fitted),
        hyper.beta,
    )?;
    Ok((verdict, profile))
}

/// Run one seed of the configured pipeline.
pub fn run_seed(
    instance: &SharpeningInstance,
    config: &ExperimentConfig,
    seed: u64,
) -> Result<SeedRun> {
    let hyper = &config.hyper;
    let mut rng = RngStream::new(seed, 0);
    match config.algorithm {
        Algorithm::Sft => {
            let class = build_class(instance, hyper.class, hyper, config.algorithm)?;
            let width = hyper.effective_width();
            let mut session = OracleSession::new(&instance.base, &instance.mu)
                .with_budget(hyper.n * width);
            let data = collect_bon_dataset(&mut session, hyper.n, width, hyper.reward, &mut rng)?;
            session.seal();
            let fitted = mle_fit(&class, &data)?;
            let (verdict, profile) = verdict_profile(instance, &fitted, hyper)?;
            let mut extras = BTreeMap::new();
            extras.insert("width".into(), width as f64);
            Ok(SeedRun {
                fitted: Some(fitted),
                verdict: Some(verdict),
                coverage: Some(profile),
                budget: session.budget_report(),
                objective_trace: Vec::new(),
                query_log: session.export_log(),
                iterate_csv: None,
                extras,
            })
        }
        Algorithm::AdaSft => {
            let class = build_class(instance, hyper.class, hyper, config.algorithm)?;
            let mut session = OracleSession::new(&instance.base, &instance.mu);
            let cfg = StoppingConfig::new(hyper.mu_stop)?;
            let data = adaptive_collect(&mut session, hyper.n, cfg, &mut rng)?;
            session.seal();
            let mean_width =
                data.group_sizes.iter().sum::<u64>() as f64 / data.group_sizes.len() as f64;
            let fitted = mle_fit(&class, &data)?;
            let (verdict, profile) = verdict_profile(instance, &fitted, hyper)?;
            let mut extras = BTreeMap::new();
            extras.insert("mean_realized_width".into(), mean_width);
            extras.insert("draw_cap".into(), cfg.draw_cap as f64);
            Ok(SeedRun {
                fitted: Some(fitted),
                verdict: Some(verdict),
                coverage: Some(profile),
                budget: session.budget_report(),
                objective_trace: Vec::new(),
                query_log: session.export_log(),
                iterate_csv: None,
                extras,
            })
        }
        Algorithm::Dpo => {
            let choice = match hyper.class {
                // The implicit tabular family has no preference fitter;
                // default to a realizable tilt ladder instead.
                ClassChoice::Instance if matches!(instance.class, ModelClass::Tabular) => {
                    ClassChoice::TiltLadder
                }
                other => other,
            };
            let class = build_class(instance, choice, hyper, config.algorithm)?;
            let mut session =
                OracleSession::new(&instance.base, &instance.mu).with_budget(2 * hyper.n);
            let data = collect_preference_dataset(&mut session, hyper.n, &mut rng)?;
            session.seal();
            let fitted = dpo_fit(&class, &instance.base, &data, hyper.beta)?;
            let loss = sharpen_core::rlhf::dpo_loss(&fitted, &instance.base, &data, hyper.beta)?;
            let (verdict, profile) = verdict_profile(instance, &fitted, hyper)?;
            let mut extras = BTreeMap::new();
            extras.insert("fitted_loss".into(), loss.value);
            extras.insert("clamp_count".into(), loss.clamp_count as f64);
            Ok(SeedRun {
                fitted: Some(fitted),
                verdict: Some(verdict),
                coverage: Some(profile),
                budget: session.budget_report(),
                objective_trace: Vec::new(),
                query_log: session.export_log(),
                iterate_csv: None,
                extras,
            })
        }
        Algorithm::Xpo => {
            let class = build_class(instance, hyper.class, hyper, config.algorithm)?;
            let mut session = OracleSession::relaxed(&instance.base, &instance.mu);
            let cfg = XpoConfig::new(hyper.iterations, hyper.beta, hyper.alpha)?;
            let outcome = xpo_run(&class, &instance.base, &instance.mu, &cfg, &mut session, &mut rng)?;
            session.seal();
            let trace: Vec<f64> = outcome.iterates.iter().map(|it| it.j_value).collect();
            let (verdict, profile) = verdict_profile(instance, &outcome.model, hyper)?;
            let mut extras = BTreeMap::new();
            extras.insert("clamp_count".into(), outcome.clamp_count as f64);
            extras.insert("eval_queries".into(), session.eval_queries() as f64);
            let selected_j = trace.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            extras.insert("selected_j".into(), selected_j);
            Ok(SeedRun {
                fitted: Some(outcome.model),
                verdict: Some(verdict),
                coverage: Some(profile),
                budget: session.budget_report(),
                objective_trace: trace,
                query_log: session.export_log(),
                iterate_csv: Some(iterates_to_csv(&outcome.iterates)),
                extras,
            })
        }
        Algorithm::InferenceBon => {
            let mut session = OracleSession::new(&instance.base, &instance.mu);
            let mut failures = 0u64;
            let mut width_total = 0u64;
            for _ in 0..hyper.n {
                let x = session.draw_prompt(&mut rng)?;
                let target = gamma_argmax_set(&instance.base, x, hyper.gamma)?;
                let mass: f64 = {
                    let probs = instance.base.probs(x)?;
                    target.iter().map(|&y| probs[y]).sum()
                };
                let width = required_n(hyper.rho, mass)?;
                width_total += width;
                let y = bon_sample(&mut session, x, width, hyper.reward, &mut rng)?;
                if !target.contains(&y) {
                    failures += 1;
                }
            }
            session.seal();
            let failure_rate = failures as f64 / hyper.n as f64;
            let mut extras = BTreeMap::new();
            extras.insert("failure_rate".into(), failure_rate);
            extras.insert("rho".into(), hyper.rho);
            extras.insert("mean_required_width".into(), width_total as f64 / hyper.n as f64);
            Ok(SeedRun {
                fitted: None,
                verdict: None,
                coverage: None,
                budget: session.budget_report(),
                objective_trace: Vec::new(),
                query_log: session.export_log(),
                iterate_csv: None,
                extras,
            })
        }
    }
}

/// Execute the full experiment: one pipeline per seed, reports persisted
/// under the output directory, query logs alongside.
pub fn run_experiment(config: &ExperimentConfig) -> Result<SharpeningReport> {
    config.validate()?;
    let instance = config.instance.build(config.instance_seed)?;
    let outcomes: Vec<SeedOutcome> = exec::map_indexed(config.seeds.len(), |i| {
        let seed = config.seeds[i];
        match run_seed(&instance, config, seed) {
            Ok(run) => {
                let success = run
                    .verdict
                    .as_ref()
                    .map(|v| v.is_sharp(config.hyper.epsilon))
                    .unwrap_or_else(|| {
                        run.extras
                            .get("failure_rate")
                            .map(|&f| f <= config.hyper.rho + mc_slack(config.hyper.rho, config.hyper.n))
                            .unwrap_or(false)
                    });
                (
                    SeedOutcome {
                        seed,
                        ok: true,
                        error: None,
                        success,
                        verdict: run.verdict.clone(),
                        coverage: run.coverage.clone(),
                        budget: Some(run.budget),
                        objective_trace: run.objective_trace.clone(),
                        extras: run.extras.clone(),
                    },
                    Some(run),
                )
            }
            Err(err) => (
                SeedOutcome {
                    seed,
                    ok: false,
                    error: Some(format!("{err:#}")),
                    success: false,
                    verdict: None,
                    coverage: None,
                    budget: None,
                    objective_trace: Vec::new(),
                    extras: BTreeMap::new(),
                },
                None,
            ),
        }
    })
    .into_iter()
    .map(|(outcome, run)| persist_seed(config, outcome, run))
    .collect::<Result<Vec<_>>>()?;

    let report = SharpeningReport::new(config.clone(), outcomes);
    report.save(&config.resolved_output_dir())?;
    Ok(report)
}

/// Binomial three-sigma slack for an empirical failure rate.
pub fn mc_slack(p: f64, trials: u64) -> f64 {
    3.0 * (p * (1.0 - p) / trials.max(1) as f64).sqrt()
}

fn persist_seed(
    config: &ExperimentConfig,
    outcome: SeedOutcome,
    run: Option<SeedRun>,
) -> Result<SeedOutcome> {
    let dir = config.resolved_output_dir();
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    if let Some(run) = run {
        std::fs::write(dir.join(format!("querylog-seed{}.jsonl", outcome.seed)), &run.query_log)?;
        if let Some(csv) = &run.iterate_csv {
            std::fs::write(dir.join(format!("iterates-seed{}.csv", outcome.seed)), csv)?;
        }
    }
    Ok(outcome)
}
