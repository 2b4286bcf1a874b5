//! Report types and emission. Reports are pure functions of
//! `(config, seeds, code version)`: no timestamps, deterministic map
//! ordering, and a version tag embedded for attribution.

use crate::config::ExperimentConfig;
use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sharpen_core::metrics::{CoverageProfile, SharpnessVerdict};
use sharpen_core::oracle::BudgetReport;
use std::collections::BTreeMap;
use std::path::Path;

/// Outcome of one seed of the pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    /// The pipeline completed without error.
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Sharpness success at the configured `(epsilon, delta, gamma)`.
    pub success: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<SharpnessVerdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coverage: Option<CoverageProfile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<BudgetReport>,
    /// Objective values along the run (exploration's per-iterate values).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub objective_trace: Vec<f64>,
    /// Scalar extras (clamp counts, realized widths, failure rates).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extras: BTreeMap<String, f64>,
}

/// Aggregate report over all seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharpeningReport {
    pub version: String,
    pub config: ExperimentConfig,
    pub per_seed: Vec<SeedOutcome>,
    pub aggregate_success_rate: f64,
}

/// Frozen per-seed CSV schema; columns are append-only.
pub const REPORT_CSV_HEADER: &str =
    "seed,ok,success,epsilon_hat,delta,gamma,n,n_max,m,final_objective,error";

impl SharpeningReport {
    pub fn new(config: ExperimentConfig, per_seed: Vec<SeedOutcome>) -> Self {
        let successes = per_seed.iter().filter(|s| s.success).count();
        let aggregate_success_rate = successes as f64 / per_seed.len().max(1) as f64;
        SharpeningReport {
            version: crate::version_tag(),
            config,
            per_seed,
            aggregate_success_rate,
        }
    }

    pub fn all_ok(&self) -> bool {
        self.per_seed.iter().all(|s| s.ok)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).context("report serialization")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(REPORT_CSV_HEADER);
        out.push('\n');
        for s in &self.per_seed {
            let (eps, delta, gamma) = s
                .verdict
                .as_ref()
                .map(|v| (format!("{}", v.epsilon_hat), format!("{}", v.delta), format!("{}", v.gamma)))
                .unwrap_or_default();
            let (n, n_max, m) = s
                .budget
                .map(|b| (b.n.to_string(), b.n_max.to_string(), b.m.to_string()))
                .unwrap_or_default();
            let final_obj = s
                .objective_trace
                .last()
                .map(|v| format!("{v}"))
                .unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                s.seed,
                s.ok,
                s.success,
                eps,
                delta,
                gamma,
                n,
                n_max,
                m,
                final_obj,
                s.error.as_deref().unwrap_or(""),
            ));
        }
        out
    }

    /// Write `report.json` and `report.csv` under `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        std::fs::write(dir.join("report.json"), self.to_json()?)?;
        std::fs::write(dir.join("report.csv"), self.to_csv())?;
        Ok(())
    }
}

/// CSV for exploration iterate logs: per-t objective value, loss, and the
/// chosen candidate index.
pub fn iterates_to_csv(iterates: &[sharpen_core::rlhf::XpoIterate]) -> String {
    let mut out = String::from("t,candidate,j_value,squared_loss,optimism_sum\n");
    for it in iterates {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            it.t,
            it.candidate.map(|c| c.to_string()).unwrap_or_else(|| "base".into()),
            it.j_value,
            it.squared_loss,
            it.optimism_sum,
        ));
    }
    out
}
