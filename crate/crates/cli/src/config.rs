//! Experiment configuration: a single TOML document, schema-validated with
//! unknown keys rejected. CLI flags mirror these fields; the environment
//! may override only the output directory and thread count.

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sharpen_core::decode::SelfReward;
use sharpen_core::instances::{
    lower_bound_family, maxcut_hardness, random_tabular_instance, representational_example,
    softmax_separation, Graph, RandomTabularSpec, SharpeningInstance,
};
use sharpen_core::RngStream;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Sft,
    AdaSft,
    Dpo,
    Xpo,
    InferenceBon,
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Algorithm::Sft => "sft",
            Algorithm::AdaSft => "ada-sft",
            Algorithm::Dpo => "dpo",
            Algorithm::Xpo => "xpo",
            Algorithm::InferenceBon => "inference-bon",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Algorithm {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "sft" => Algorithm::Sft,
            "ada-sft" => Algorithm::AdaSft,
            "dpo" => Algorithm::Dpo,
            "xpo" => Algorithm::Xpo,
            "inference-bon" => Algorithm::InferenceBon,
            other => bail!("unknown algorithm {other:?}"),
        })
    }
}

/// Which instance to build (or load).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InstanceSpec {
    RandomTabular {
        prompts: usize,
        responses: usize,
        #[serde(default)]
        margin_range: Option<(f64, f64)>,
        #[serde(default)]
        c_cov_range: Option<(f64, f64)>,
    },
    LowerBound {
        d: usize,
        m: usize,
        delta_mass: f64,
        gamma: f64,
    },
    Separation {
        d: usize,
        y_size: usize,
        bound: f64,
    },
    Maxcut {
        vertices: usize,
        edges: Vec<(usize, usize)>,
    },
    Representational {
        n: usize,
        #[serde(default)]
        bound: Option<f64>,
    },
    File {
        path: PathBuf,
    },
}

impl InstanceSpec {
    /// Build (or load) the instance. Generation is deterministic in the
    /// instance seed.
    pub fn build(&self, instance_seed: u64) -> Result<SharpeningInstance> {
        let mut rng = RngStream::new(instance_seed, 0x1457);
        Ok(match self {
            InstanceSpec::RandomTabular { prompts, responses, margin_range, c_cov_range } => {
                let mut spec = RandomTabularSpec::new(*prompts, *responses);
                spec.margin_range = *margin_range;
                spec.c_cov_range = *c_cov_range;
                random_tabular_instance(&spec, &mut rng)?
            }
            InstanceSpec::LowerBound { d, m, delta_mass, gamma } => {
                lower_bound_family(*d, *m, *delta_mass, *gamma, &mut rng)?
            }
            InstanceSpec::Separation { d, y_size, bound } => {
                softmax_separation(*d, *y_size, *bound, &mut rng)?
            }
            InstanceSpec::Maxcut { vertices, edges } => {
                let graph = Graph::new(*vertices, edges.clone())?;
                maxcut_hardness(graph)?.instance
            }
            InstanceSpec::Representational { n, bound } => representational_example(*n, *bound)?,
            InstanceSpec::File { path } => load_instance(path)?,
        })
    }
}

/// Which candidate class the fitting step optimizes over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ClassChoice {
    /// The class bundled with the instance.
    #[default]
    Instance,
    /// The implicit tabular family (empirical-frequency MLE).
    Tabular,
    /// Finite ladder of exact best-of-k distributions of the base model
    /// (k in {1, 2, 5, 10, 20, 50} plus the run's N), plus one tilt.
    BonLadder,
    /// Finite ladder of tilted models at several exponents including the
    /// run's beta.
    TiltLadder,
}

/// Hyperparameters; every tunable constant is explicit here, none hidden.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyper {
    /// Prompt draws.
    pub n: u64,
    /// Responses per prompt (the best-of-N width).
    pub n_draws: u64,
    /// Optional N*; when set, the effective width is
    /// `ceil(n_star * ln(2/delta))` and `n_draws` is ignored.
    pub n_star: Option<f64>,
    /// Adaptive stopping parameter.
    pub mu_stop: f64,
    /// KL regularization strength.
    pub beta: f64,
    /// Optimism coefficient for exploration.
    pub alpha: f64,
    /// Exploration iterations.
    pub iterations: usize,
    /// Sharpness mass slack.
    pub delta: f64,
    /// Approximate-argmax slack.
    pub gamma: f64,
    /// Allowed failing prompt mass.
    pub epsilon: f64,
    /// Failure probability for the inference-time sample-size formula.
    pub rho: f64,
    /// Self-reward used by collection-time selection.
    pub reward: SelfReward,
    /// Candidate class for fitting.
    pub class: ClassChoice,
    /// Monte Carlo trials for inference-time evaluation.
    pub trials: u64,
}

impl Default for Hyper {
    fn default() -> Self {
        Hyper {
            n: 100,
            n_draws: 10,
            n_star: None,
            mu_stop: 1.0,
            beta: 0.5,
            alpha: 0.0,
            iterations: 100,
            delta: 0.25,
            gamma: 0.0,
            epsilon: 0.2,
            rho: 0.05,
            reward: SelfReward::LogLikelihood,
            class: ClassChoice::Instance,
            trials: 10_000,
        }
    }
}

impl Hyper {
    /// Effective best-of-N width: `n_draws`, or `ceil(n_star ln(2/delta))`.
    pub fn effective_width(&self) -> u64 {
        match self.n_star {
            Some(n_star) => ((n_star * (2.0 / self.delta).ln()).ceil() as u64).max(1),
            None => self.n_draws,
        }
    }
}

/// The complete experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub instance_seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub instance: InstanceSpec,
    #[serde(default)]
    pub hyper: Hyper,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).context("invalid experiment config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).context("config serialization failed")
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            bail!("at least one seed is required");
        }
        let h = &self.hyper;
        if !(h.delta > 0.0 && h.delta < 1.0) {
            bail!("delta must be in (0, 1)");
        }
        if !(0.0..1.0).contains(&h.gamma) {
            bail!("gamma must be in [0, 1)");
        }
        if !(h.epsilon >= 0.0 && h.epsilon < 1.0) {
            bail!("epsilon must be in [0, 1)");
        }
        if !(h.rho > 0.0 && h.rho < 1.0) {
            bail!("rho must be in (0, 1)");
        }
        if !(h.beta > 0.0) {
            bail!("beta must be positive");
        }
        if !(h.alpha >= 0.0) {
            bail!("alpha must be nonnegative");
        }
        Ok(())
    }

    /// Output directory after the environment override.
    pub fn resolved_output_dir(&self) -> PathBuf {
        if let Ok(dir) = std::env::var("SHARPEN_OUT_DIR") {
            return PathBuf::from(dir);
        }
        self.output_dir.clone().unwrap_or_else(|| PathBuf::from("out"))
    }
}

/// Write an instance as two files: the model-space document and a
/// ground-truth sidecar (`<stem>.truth.json`).
pub fn save_instance(instance: &SharpeningInstance, path: &Path) -> Result<()> {
    #[derive(Serialize)]
    struct Body<'a> {
        prompt_space: &'a sharpen_core::space::PromptSpace,
        response_space: &'a sharpen_core::space::ResponseSpace,
        mu: &'a sharpen_core::space::PromptDistribution,
        base: &'a sharpen_core::model::Model,
        class: &'a sharpen_core::sft::ModelClass,
    }
    let body = serde_json::to_string_pretty(&Body {
        prompt_space: &instance.prompt_space,
        response_space: &instance.response_space,
        mu: &instance.mu,
        base: &instance.base,
        class: &instance.class,
    })?;
    std::fs::write(path, body).with_context(|| format!("writing {}", path.display()))?;
    let truth_path = truth_sidecar_path(path);
    std::fs::write(&truth_path, serde_json::to_string_pretty(&instance.truth)?)
        .with_context(|| format!("writing {}", truth_path.display()))?;
    Ok(())
}

pub fn truth_sidecar_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy()).unwrap_or_default();
    path.with_file_name(format!("{stem}.truth.json"))
}

/// Load an instance saved by [`save_instance`].
pub fn load_instance(path: &Path) -> Result<SharpeningInstance> {
    #[derive(Deserialize)]
    struct Body {
        prompt_space: sharpen_core::space::PromptSpace,
        response_space: sharpen_core::space::ResponseSpace,
        mu: sharpen_core::space::PromptDistribution,
        base: sharpen_core::model::Model,
        class: sharpen_core::sft::ModelClass,
    }
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let body: Body = serde_json::from_str(&text).context("invalid instance file")?;
    let truth_path = truth_sidecar_path(path);
    let truth_text = std::fs::read_to_string(&truth_path)
        .with_context(|| format!("reading {}", truth_path.display()))?;
    let truth = serde_json::from_str(&truth_text).context("invalid ground-truth sidecar")?;
    Ok(SharpeningInstance {
        prompt_space: body.prompt_space,
        response_space: body.response_space,
        mu: body.mu,
        base: body.base,
        class: body.class,
        truth,
    })
}
