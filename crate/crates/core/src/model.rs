//! Conditional model representations with exact evaluation and seeded
//! sampling: dense tabular, autoregressive tabular, and linear-softmax
//! (single-layer over atomic responses or one layer per step over `V^H`).
//!
//! Probabilities are compared in log space throughout; a zero probability is
//! the `-inf` sentinel, never an underflowed float.

use crate::consts::{ENUM_CAP, ROW_SUM_TOL};
use crate::space::sample_from;
use crate::{Error, Result, RngStream};
use serde::{Deserialize, Serialize};
use std::sync::{Arc, OnceLock};

/// Stable log of a probability: exact `-inf` for zero.
#[inline]
pub fn plog(p: f64) -> f64 {
    if p <= 0.0 {
        f64::NEG_INFINITY
    } else {
        p.ln()
    }
}

/// Log-sum-exp with the usual max shift.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + xs.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

fn check_row(row: &[f64], what: &str) -> Result<()> {
    if row.iter().any(|&p| !p.is_finite() || p < 0.0) {
        return Err(Error::validation(format!(
            "{what} has a negative or non-finite probability"
        )));
    }
    let total: f64 = row.iter().sum();
    if (total - 1.0).abs() > ROW_SUM_TOL {
        return Err(Error::validation(format!(
            "{what} sums to {total}, expected 1 within {ROW_SUM_TOL}"
        )));
    }
    Ok(())
}

/// Dense conditional table: `rows[x][y]` is the probability of response `y`
/// given prompt `x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularModel {
    rows: Vec<Vec<f64>>,
}

impl TabularModel {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.is_empty() || rows[0].is_empty() {
            return Err(Error::validation("tabular model must be non-empty"));
        }
        let width = rows[0].len();
        for (x, row) in rows.iter().enumerate() {
            if row.len() != width {
                return Err(Error::validation("tabular rows must have equal length"));
            }
            check_row(row, &format!("row for prompt {x}"))?;
        }
        Ok(TabularModel { rows })
    }

    pub fn uniform(prompts: usize, responses: usize) -> Self {
        TabularModel {
            rows: vec![vec![1.0 / responses as f64; responses]; prompts],
        }
    }

    /// Point mass on `targets[x]` for each prompt.
    pub fn point_mass(responses: usize, targets: &[usize]) -> Self {
        let rows = targets
            .iter()
            .map(|&y| {
                let mut row = vec![0.0; responses];
                row[y] = 1.0;
                row
            })
            .collect();
        TabularModel { rows }
    }

    pub fn row(&self, x: usize) -> &[f64] {
        &self.rows[x]
    }
}

/// Per-step conditional tables over a sequence space `V^H`.
///
/// `steps[x][h]` is the flattened table for step `h`: the conditional row
/// given the length-`h` prefix with lexicographic index `p` occupies
/// `steps[x][h][p*V..(p+1)*V]`. The induced sequence probability is the
/// product over steps by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArTabularModel {
    vocab: usize,
    horizon: usize,
    steps: Vec<Vec<Vec<f64>>>,
}

impl ArTabularModel {
    pub fn new(vocab: usize, horizon: usize, steps: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        if vocab == 0 || horizon == 0 || steps.is_empty() {
            return Err(Error::validation("autoregressive model must be non-empty"));
        }
        let total = (vocab as u64)
            .checked_pow(horizon as u32)
            .filter(|&s| s <= ENUM_CAP)
            .ok_or_else(|| Error::capacity("sequence space exceeds the enumeration cap"))?;
        let _ = total;
        for (x, per_step) in steps.iter().enumerate() {
            if per_step.len() != horizon {
                return Err(Error::validation(format!(
                    "prompt {x} has {} step tables, expected {horizon}",
                    per_step.len()
                )));
            }
            for (h, table) in per_step.iter().enumerate() {
                let prefixes = vocab.pow(h as u32);
                if table.len() != prefixes * vocab {
                    return Err(Error::validation(format!(
                        "step {h} table for prompt {x} has length {}, expected {}",
                        table.len(),
                        prefixes * vocab
                    )));
                }
                for p in 0..prefixes {
                    check_row(
                        &table[p * vocab..(p + 1) * vocab],
                        &format!("step {h} conditional (prompt {x}, prefix {p})"),
                    )?;
                }
            }
        }
        Ok(ArTabularModel { vocab, horizon, steps })
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn prompt_count(&self) -> usize {
        self.steps.len()
    }

    /// Conditional distribution over the next token after `prefix`.
    pub fn step_row(&self, x: usize, prefix: &[usize]) -> &[f64] {
        let h = prefix.len();
        let mut p = 0usize;
        for &t in prefix {
            p = p * self.vocab + t;
        }
        &self.steps[x][h][p * self.vocab..(p + 1) * self.vocab]
    }

    fn seq_logprob(&self, x: usize, y: usize) -> f64 {
        let mut rest = y;
        let mut toks = vec![0usize; self.horizon];
        for h in (0..self.horizon).rev() {
            toks[h] = rest % self.vocab;
            rest /= self.vocab;
        }
        let mut lp = 0.0;
        for h in 0..self.horizon {
            let row = self.step_row(x, &toks[..h]);
            lp += plog(row[toks[h]]);
        }
        lp
    }
}

/// Dense feature tables for linear-softmax models.
///
/// Atomic mode stores one `d`-vector per `(prompt, response)`. Sequence mode
/// stores, for each step `h`, one `d`-vector per `(prompt, prefix of length
/// h+1)`; the prefix includes the candidate token at position `h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureSet {
    Atomic {
        dim: usize,
        /// `per_prompt[x]` has length `|Y| * dim`.
        per_prompt: Vec<Vec<f64>>,
    },
    Sequence {
        dim: usize,
        vocab: usize,
        horizon: usize,
        /// `levels[h][x]` has length `V^(h+1) * dim`.
        levels: Vec<Vec<Vec<f64>>>,
    },
}

impl FeatureSet {
    pub fn dim(&self) -> usize {
        match self {
            FeatureSet::Atomic { dim, .. } | FeatureSet::Sequence { dim, .. } => *dim,
        }
    }

    pub fn layer_count(&self) -> usize {
        match self {
            FeatureSet::Atomic { .. } => 1,
            FeatureSet::Sequence { horizon, .. } => *horizon,
        }
    }

    pub fn prompt_count(&self) -> usize {
        match self {
            FeatureSet::Atomic { per_prompt, .. } => per_prompt.len(),
            FeatureSet::Sequence { levels, .. } => levels[0].len(),
        }
    }

    pub fn response_count(&self) -> usize {
        match self {
            FeatureSet::Atomic { dim, per_prompt } => per_prompt[0].len() / dim,
            FeatureSet::Sequence { vocab, horizon, .. } => vocab.pow(*horizon as u32),
        }
    }

    /// Feature vector of an atomic response.
    pub fn atomic_feature(&self, x: usize, y: usize) -> &[f64] {
        match self {
            FeatureSet::Atomic { dim, per_prompt } => &per_prompt[x][y * dim..(y + 1) * dim],
            FeatureSet::Sequence { .. } => panic!("atomic_feature on sequence features"),
        }
    }

    /// Feature vector of the length-`h+1` prefix ending in token `v`.
    fn step_feature(&self, x: usize, prefix_incl: usize, level: usize) -> &[f64] {
        match self {
            FeatureSet::Sequence { dim, levels, .. } => {
                &levels[level][x][prefix_incl * dim..(prefix_incl + 1) * dim]
            }
            FeatureSet::Atomic { .. } => panic!("step_feature on atomic features"),
        }
    }

    fn max_feature_norm(&self) -> f64 {
        let dim = self.dim();
        let norm_of = |chunk: &[f64]| chunk.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut worst: f64 = 0.0;
        match self {
            FeatureSet::Atomic { per_prompt, .. } => {
                for row in per_prompt {
                    for c in row.chunks(dim) {
                        worst = worst.max(norm_of(c));
                    }
                }
            }
            FeatureSet::Sequence { levels, .. } => {
                for level in levels {
                    for row in level {
                        for c in row.chunks(dim) {
                            worst = worst.max(norm_of(c));
                        }
                    }
                }
            }
        }
        worst
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            FeatureSet::Atomic { dim, per_prompt } => {
                if *dim == 0 || per_prompt.is_empty() || per_prompt[0].is_empty() {
                    return Err(Error::validation("feature set must be non-empty"));
                }
                if per_prompt.iter().any(|r| r.len() % dim != 0 || r.len() != per_prompt[0].len()) {
                    return Err(Error::validation("atomic feature rows must be rectangular"));
                }
            }
            FeatureSet::Sequence { dim, vocab, horizon, levels } => {
                if *dim == 0 || *vocab == 0 || *horizon == 0 || levels.len() != *horizon {
                    return Err(Error::validation("sequence feature set shape is malformed"));
                }
                for (h, level) in levels.iter().enumerate() {
                    let expected = vocab.pow(h as u32 + 1) * dim;
                    if level.iter().any(|r| r.len() != expected) {
                        return Err(Error::validation(format!(
                            "level {h} feature rows must have length {expected}"
                        )));
                    }
                }
            }
        }
        let worst = self.max_feature_norm();
        if worst > 1.0 + 1e-9 {
            return Err(Error::validation(format!(
                "feature norm {worst} exceeds the unit bound"
            )));
        }
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Linear-softmax model: conditionals proportional to `exp(<phi, theta_h>)`.
///
/// One layer over an atomic response space, or `H` layers chained per step
/// over `V^H`. Per-prefix log-normalizers are memoized on first use, since
/// enumeration is the dominant cost at desk scale.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearSoftmaxModel {
    features: Arc<FeatureSet>,
    /// One parameter vector per layer.
    layers: Vec<Vec<f64>>,
    norm_bound: f64,
    #[serde(skip)]
    normalizers: OnceLock<Vec<Vec<f64>>>,
}

impl PartialEq for LinearSoftmaxModel {
    fn eq(&self, other: &Self) -> bool {
        self.features == other.features
            && self.layers == other.layers
            && self.norm_bound == other.norm_bound
    }
}

impl LinearSoftmaxModel {
    pub fn new(features: Arc<FeatureSet>, layers: Vec<Vec<f64>>, norm_bound: f64) -> Result<Self> {
        features.validate()?;
        if layers.len() != features.layer_count() {
            return Err(Error::validation(format!(
                "{} parameter layers for {} feature layers",
                layers.len(),
                features.layer_count()
            )));
        }
        if !(norm_bound > 0.0) {
            return Err(Error::validation("norm bound must be positive"));
        }
        for (h, theta) in layers.iter().enumerate() {
            if theta.len() != features.dim() {
                return Err(Error::validation(format!(
                    "layer {h} has dimension {}, expected {}",
                    theta.len(),
                    features.dim()
                )));
            }
            let norm = theta.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > norm_bound + 1e-9 {
                return Err(Error::validation(format!(
                    "layer {h} norm {norm} exceeds the bound {norm_bound}"
                )));
            }
        }
        Ok(LinearSoftmaxModel {
            features,
            layers,
            norm_bound,
            normalizers: OnceLock::new(),
        })
    }

    pub fn features(&self) -> &Arc<FeatureSet> {
        &self.features
    }

    pub fn layers(&self) -> &[Vec<f64>] {
        &self.layers
    }

    pub fn norm_bound(&self) -> f64 {
        self.norm_bound
    }

    pub fn prompt_count(&self) -> usize {
        self.features.prompt_count()
    }

    pub fn response_count(&self) -> usize {
        self.features.response_count()
    }

    /// Log-normalizers, one per `(prompt, prefix)` in level order.
    ///
    /// `cache[x]` concatenates levels: level `h` occupies the `V^h` slots
    /// starting at `(V^h - 1) / (V - 1)` (atomic models store a single slot).
    fn normalizer_cache(&self) -> &Vec<Vec<f64>> {
        self.normalizers.get_or_init(|| match &*self.features {
            FeatureSet::Atomic { dim, per_prompt } => per_prompt
                .iter()
                .map(|row| {
                    let theta = &self.layers[0];
                    let scores: Vec<f64> =
                        row.chunks(*dim).map(|phi| dot(phi, theta)).collect();
                    vec![log_sum_exp(&scores)]
                })
                .collect(),
            FeatureSet::Sequence { vocab, horizon, .. } => {
                let prompts = self.features.prompt_count();
                (0..prompts)
                    .map(|x| {
                        let mut cache = Vec::new();
                        for h in 0..*horizon {
                            let prefixes = vocab.pow(h as u32);
                            for p in 0..prefixes {
                                let scores: Vec<f64> = (0..*vocab)
                                    .map(|v| {
                                        let phi =
                                            self.features.step_feature(x, p * vocab + v, h);
                                        dot(phi, &self.layers[h])
                                    })
                                    .collect();
                                cache.push(log_sum_exp(&scores));
                            }
                        }
                        cache
                    })
                    .collect()
            }
        })
    }

    fn level_offset(vocab: usize, h: usize) -> usize {
        // Sum of V^0 + ... + V^(h-1).
        let mut off = 0usize;
        let mut pow = 1usize;
        for _ in 0..h {
            off += pow;
            pow *= vocab;
        }
        off
    }

    /// Conditional over the next token after `prefix` (sequence mode).
    pub fn step_probs(&self, x: usize, prefix: &[usize]) -> Vec<f64> {
        match &*self.features {
            FeatureSet::Sequence { vocab, .. } => {
                let h = prefix.len();
                let mut p = 0usize;
                for &t in prefix {
                    p = p * vocab + t;
                }
                let logz =
                    self.normalizer_cache()[x][Self::level_offset(*vocab, h) + p];
                (0..*vocab)
                    .map(|v| {
                        let phi = self.features.step_feature(x, p * vocab + v, h);
                        (dot(phi, &self.layers[h]) - logz).exp()
                    })
                    .collect()
            }
            FeatureSet::Atomic { .. } => panic!("step_probs on an atomic-space model"),
        }
    }

    pub fn logprob(&self, x: usize, y: usize) -> f64 {
        match &*self.features {
            FeatureSet::Atomic { .. } => {
                let phi = self.features.atomic_feature(x, y);
                dot(phi, &self.layers[0]) - self.normalizer_cache()[x][0]
            }
            FeatureSet::Sequence { vocab, horizon, .. } => {
                let mut rest = y;
                let mut toks = vec![0usize; *horizon];
                for h in (0..*horizon).rev() {
                    toks[h] = rest % vocab;
                    rest /= vocab;
                }
                let cache = &self.normalizer_cache()[x];
                let mut lp = 0.0;
                let mut p = 0usize;
                for (h, &t) in toks.iter().enumerate() {
                    let phi = self.features.step_feature(x, p * vocab + t, h);
                    lp += dot(phi, &self.layers[h]) - cache[Self::level_offset(*vocab, h) + p];
                    p = p * vocab + t;
                }
                lp
            }
        }
    }

    /// Exact normalized distribution over all responses, log-sum-exp
    /// stabilized (sequence models chain per-step softmaxes).
    pub fn softmax_eval(&self, x: usize) -> Vec<f64> {
        (0..self.response_count())
            .map(|y| self.logprob(x, y).exp())
            .collect()
    }
}

/// A prompt-conditional distribution over responses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "repr", rename_all = "snake_case")]
pub enum Model {
    Tabular(TabularModel),
    Autoregressive(ArTabularModel),
    LinearSoftmax(LinearSoftmaxModel),
}

impl Model {
    pub fn prompt_count(&self) -> usize {
        match self {
            Model::Tabular(m) => m.rows.len(),
            Model::Autoregressive(m) => m.prompt_count(),
            Model::LinearSoftmax(m) => m.prompt_count(),
        }
    }

    pub fn response_count(&self) -> usize {
        match self {
            Model::Tabular(m) => m.rows[0].len(),
            Model::Autoregressive(m) => m.vocab.pow(m.horizon as u32),
            Model::LinearSoftmax(m) => m.response_count(),
        }
    }

    /// Sequence structure `(V, H)` when the model factors per step.
    pub fn sequence_shape(&self) -> Option<(usize, usize)> {
        match self {
            Model::Tabular(_) => None,
            Model::Autoregressive(m) => Some((m.vocab, m.horizon)),
            Model::LinearSoftmax(m) => match &**m.features() {
                FeatureSet::Sequence { vocab, horizon, .. } => Some((*vocab, *horizon)),
                FeatureSet::Atomic { .. } => None,
            },
        }
    }

    fn check_prompt(&self, x: usize) -> Result<()> {
        if x >= self.prompt_count() {
            return Err(Error::domain(format!(
                "prompt index {x} out of range (count {})",
                self.prompt_count()
            )));
        }
        Ok(())
    }

    fn check_response(&self, y: usize) -> Result<()> {
        if y >= self.response_count() {
            return Err(Error::domain(format!(
                "response index {y} out of range (count {})",
                self.response_count()
            )));
        }
        Ok(())
    }

    /// `ln p(y|x)`; `-inf` for zero-probability responses. For
    /// autoregressive models this is the sum of per-step log conditionals.
    pub fn logprob(&self, x: usize, y: usize) -> Result<f64> {
        self.check_prompt(x)?;
        self.check_response(y)?;
        Ok(match self {
            Model::Tabular(m) => plog(m.rows[x][y]),
            Model::Autoregressive(m) => m.seq_logprob(x, y),
            Model::LinearSoftmax(m) => m.logprob(x, y),
        })
    }

    /// Full log-probability vector over responses.
    pub fn logprobs(&self, x: usize) -> Result<Vec<f64>> {
        self.check_prompt(x)?;
        Ok(match self {
            Model::Tabular(m) => m.rows[x].iter().map(|&p| plog(p)).collect(),
            Model::Autoregressive(m) => (0..self.response_count())
                .map(|y| m.seq_logprob(x, y))
                .collect(),
            Model::LinearSoftmax(m) => (0..m.response_count())
                .map(|y| m.logprob(x, y))
                .collect(),
        })
    }

    /// Full probability vector over responses.
    pub fn probs(&self, x: usize) -> Result<Vec<f64>> {
        self.check_prompt(x)?;
        Ok(match self {
            Model::Tabular(m) => m.rows[x].clone(),
            Model::Autoregressive(_) | Model::LinearSoftmax(_) => self
                .logprobs(x)?
                .into_iter()
                .map(|lp| lp.exp())
                .collect(),
        })
    }

    /// Draw one response; autoregressive models sample token by token.
    pub fn sample(&self, x: usize, rng: &mut RngStream) -> Result<usize> {
        self.check_prompt(x)?;
        Ok(match self {
            Model::Tabular(m) => sample_from(&m.rows[x], rng),
            Model::Autoregressive(m) => {
                let mut prefix = Vec::with_capacity(m.horizon);
                let mut idx = 0usize;
                for _ in 0..m.horizon {
                    let row = m.step_row(x, &prefix);
                    let t = sample_from(row, rng);
                    idx = idx * m.vocab + t;
                    prefix.push(t);
                }
                idx
            }
            Model::LinearSoftmax(m) => match &**m.features() {
                FeatureSet::Atomic { .. } => sample_from(&m.softmax_eval(x), rng),
                FeatureSet::Sequence { vocab, horizon, .. } => {
                    let mut prefix = Vec::with_capacity(*horizon);
                    let mut idx = 0usize;
                    for _ in 0..*horizon {
                        let row = m.step_probs(x, &prefix);
                        let t = sample_from(&row, rng);
                        idx = idx * vocab + t;
                        prefix.push(t);
                    }
                    idx
                }
            },
        })
    }

    /// Conditional over the next token (sequence-structured models only).
    pub fn step_probs(&self, x: usize, prefix: &[usize]) -> Result<Vec<f64>> {
        self.check_prompt(x)?;
        match self {
            Model::Autoregressive(m) => Ok(m.step_row(x, prefix).to_vec()),
            Model::LinearSoftmax(m) => match &**m.features() {
                FeatureSet::Sequence { .. } => Ok(m.step_probs(x, prefix)),
                FeatureSet::Atomic { .. } => Err(Error::domain(
                    "single-layer softmax over atomic responses has no step structure",
                )),
            },
            Model::Tabular(_) => Err(Error::domain(
                "tabular models have no per-step structure",
            )),
        }
    }

    /// Flatten a sequence-structured model into an exact tabular view.
    pub fn flatten(&self) -> Result<TabularModel> {
        let rows = (0..self.prompt_count())
            .map(|x| self.probs(x))
            .collect::<Result<Vec<_>>>()?;
        TabularModel::new(rows)
    }
}

impl From<TabularModel> for Model {
    fn from(m: TabularModel) -> Self {
        Model::Tabular(m)
    }
}

impl From<ArTabularModel> for Model {
    fn from(m: ArTabularModel) -> Self {
        Model::Autoregressive(m)
    }
}

impl From<LinearSoftmaxModel> for Model {
    fn from(m: LinearSoftmaxModel) -> Self {
        Model::LinearSoftmax(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_step_ar() -> ArTabularModel {
        // pi_1 = (a: 0.5, b: 0.5), pi_2(.|a) = (0.5, 0.5), pi_2(.|b) = (1, 0)
        ArTabularModel::new(
            2,
            2,
            vec![vec![vec![0.5, 0.5], vec![0.5, 0.5, 1.0, 0.0]]],
        )
        .unwrap()
    }

    #[test]
    #[allow(clippy::approx_constant)] // frozen oracle value ln(1/2)
    fn tabular_logprob_half() {
        let m = Model::from(TabularModel::new(vec![vec![0.5, 0.5]]).unwrap());
        let lp = m.logprob(0, 0).unwrap();
        assert!((lp - (-0.693_147_180_559_945_3)).abs() < 1e-12);
    }

    #[test]
    fn deterministic_support_point_logprob_zero() {
        let m = Model::from(TabularModel::point_mass(3, &[1]));
        assert_eq!(m.logprob(0, 1).unwrap(), 0.0);
        assert_eq!(m.logprob(0, 0).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn ar_chain_rule_quarter() {
        // pi_1(a) = 0.5, pi_2(b|a) = 0.5 -> ln(1/4)
        let m = Model::from(two_step_ar());
        let lp = m.logprob(0, 1).unwrap(); // sequence (a, b) = index 1
        assert!((lp - (-1.386_294_361_119_890_6)).abs() < 1e-12);
    }

    #[test]
    fn ar_rows_sum_to_one() {
        let m = Model::from(two_step_ar());
        let total: f64 = m.probs(0).unwrap().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unknown_indices_are_domain_errors() {
        let m = Model::from(TabularModel::uniform(1, 2));
        assert!(matches!(m.logprob(1, 0), Err(Error::Domain(_))));
        assert!(matches!(m.logprob(0, 2), Err(Error::Domain(_))));
    }

    #[test]
    fn softmax_two_responses() {
        // d = 1, phi = (1) and (-1), theta = (ln 3 / 2) -> (0.75, 0.25)
        let features = Arc::new(FeatureSet::Atomic {
            dim: 1,
            per_prompt: vec![vec![1.0, -1.0]],
        });
        let theta = 3.0_f64.ln() / 2.0;
        let m = LinearSoftmaxModel::new(features.clone(), vec![vec![theta]], 1.0).unwrap();
        let probs = m.softmax_eval(0);
        assert!((probs[0] - 0.75).abs() < 1e-12);
        assert!((probs[1] - 0.25).abs() < 1e-12);

        let zero = LinearSoftmaxModel::new(features, vec![vec![0.0]], 1.0).unwrap();
        let probs = zero.softmax_eval(0);
        assert!((probs[0] - 0.5).abs() < 1e-12 && (probs[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn multilayer_zero_parameters_are_uniform() {
        // V = 2, H = 2, arbitrary unit features, all theta_h = 0.
        let features = Arc::new(FeatureSet::Sequence {
            dim: 2,
            vocab: 2,
            horizon: 2,
            levels: vec![
                vec![vec![0.3, 0.1, -0.2, 0.5]],
                vec![vec![0.1, 0.0, 0.2, 0.3, -0.4, 0.1, 0.0, 0.9]],
            ],
        });
        let m = LinearSoftmaxModel::new(features, vec![vec![0.0; 2], vec![0.0; 2]], 1.0).unwrap();
        for p in m.softmax_eval(0) {
            assert!((p - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn norm_bound_is_enforced() {
        let features = Arc::new(FeatureSet::Atomic {
            dim: 2,
            per_prompt: vec![vec![1.0, 0.0, 0.0, 1.0]],
        });
        let err = LinearSoftmaxModel::new(features, vec![vec![3.0, 4.0]], 4.9);
        assert!(matches!(err, Err(Error::Validation(_))));
    }

    #[test]
    fn feature_norm_bound_is_enforced() {
        let features = Arc::new(FeatureSet::Atomic {
            dim: 2,
            per_prompt: vec![vec![1.0, 1.0, 0.0, 1.0]],
        });
        assert!(features.validate().is_err());
    }

    #[test]
    fn model_json_round_trip_is_bit_exact() {
        let rows = vec![vec![0.6, 0.4], vec![1.0 / 3.0, 2.0 / 3.0]];
        let m = Model::from(TabularModel::new(rows.clone()).unwrap());
        let text = serde_json::to_string(&m).unwrap();
        let back: Model = serde_json::from_str(&text).unwrap();
        match back {
            Model::Tabular(t) => {
                for (a, b) in t.rows.iter().flatten().zip(rows.iter().flatten()) {
                    assert_eq!(a.to_bits(), b.to_bits());
                }
            }
            _ => panic!("wrong variant"),
        }
    }
}
