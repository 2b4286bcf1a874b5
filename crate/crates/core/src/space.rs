//! Prompt and response spaces, and the prompt distribution.
//!
//! Responses are either an explicit finite list of atomic identifiers or, in
//! sequence mode, all length-`H` strings over a token alphabet `V`. Sequence
//! responses are enumerated in lexicographic token order (mixed-radix index),
//! which also fixes tie-breaking everywhere downstream.

use crate::consts::{ENUM_CAP, ROW_SUM_TOL};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Finite ordered list of prompt identifiers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSpace {
    ids: Vec<String>,
}

impl PromptSpace {
    pub fn new(ids: Vec<String>) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::validation("prompt space must be non-empty"));
        }
        if has_duplicates(&ids) {
            return Err(Error::validation("prompt identifiers must be unique"));
        }
        Ok(PromptSpace { ids })
    }

    /// `x0, x1, ...` convenience constructor.
    pub fn indexed(count: usize) -> Self {
        PromptSpace {
            ids: (0..count.max(1)).map(|i| format!("x{i}")).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, x: usize) -> &str {
        &self.ids[x]
    }

    pub fn index_of(&self, id: &str) -> Result<usize> {
        self.ids
            .iter()
            .position(|p| p == id)
            .ok_or_else(|| Error::domain(format!("unknown prompt identifier {id:?}")))
    }
}

/// Finite response space: atomic identifiers or all sequences in `V^H`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ResponseSpace {
    Atomic { ids: Vec<String> },
    Sequence { vocab: Vec<String>, horizon: usize },
}

impl ResponseSpace {
    pub fn atomic(ids: Vec<String>) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::validation("response space must be non-empty"));
        }
        if has_duplicates(&ids) {
            return Err(Error::validation("response identifiers must be unique"));
        }
        Ok(ResponseSpace::Atomic { ids })
    }

    /// `y0, y1, ...` convenience constructor.
    pub fn indexed(count: usize) -> Self {
        ResponseSpace::Atomic {
            ids: (0..count.max(1)).map(|i| format!("y{i}")).collect(),
        }
    }

    pub fn sequence(vocab: Vec<String>, horizon: usize) -> Result<Self> {
        if vocab.is_empty() || horizon == 0 {
            return Err(Error::validation(
                "sequence space needs a non-empty vocabulary and horizon >= 1",
            ));
        }
        if has_duplicates(&vocab) {
            return Err(Error::validation("token identifiers must be unique"));
        }
        let mut size: u64 = 1;
        for _ in 0..horizon {
            size = size
                .checked_mul(vocab.len() as u64)
                .filter(|&s| s <= ENUM_CAP)
                .ok_or_else(|| {
                    Error::capacity(format!(
                        "|V|^H = {}^{} exceeds the enumeration cap {}",
                        vocab.len(),
                        horizon,
                        ENUM_CAP
                    ))
                })?;
        }
        Ok(ResponseSpace::Sequence { vocab, horizon })
    }

    /// Total number of responses (`|V|^H` in sequence mode).
    pub fn len(&self) -> usize {
        match self {
            ResponseSpace::Atomic { ids } => ids.len(),
            ResponseSpace::Sequence { vocab, horizon } => vocab.len().pow(*horizon as u32),
        }
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn vocab_size(&self) -> Option<usize> {
        match self {
            ResponseSpace::Atomic { .. } => None,
            ResponseSpace::Sequence { vocab, .. } => Some(vocab.len()),
        }
    }

    pub fn horizon(&self) -> Option<usize> {
        match self {
            ResponseSpace::Atomic { .. } => None,
            ResponseSpace::Sequence { horizon, .. } => Some(*horizon),
        }
    }

    /// Token indices of response `y` (sequence mode only), most significant
    /// position first.
    pub fn tokens_of(&self, y: usize) -> Option<Vec<usize>> {
        match self {
            ResponseSpace::Atomic { .. } => None,
            ResponseSpace::Sequence { vocab, horizon } => {
                let v = vocab.len();
                let mut rest = y;
                let mut toks = vec![0usize; *horizon];
                for h in (0..*horizon).rev() {
                    toks[h] = rest % v;
                    rest /= v;
                }
                Some(toks)
            }
        }
    }

    /// Lexicographic index of a token sequence.
    pub fn index_of_tokens(&self, toks: &[usize]) -> Result<usize> {
        match self {
            ResponseSpace::Atomic { .. } => {
                Err(Error::domain("token sequences only exist in sequence mode"))
            }
            ResponseSpace::Sequence { vocab, horizon } => {
                if toks.len() != *horizon {
                    return Err(Error::domain(format!(
                        "sequence length {} does not match horizon {}",
                        toks.len(),
                        horizon
                    )));
                }
                let v = vocab.len();
                let mut idx = 0usize;
                for &t in toks {
                    if t >= v {
                        return Err(Error::domain(format!("token index {t} out of range")));
                    }
                    idx = idx * v + t;
                }
                Ok(idx)
            }
        }
    }

    /// Human-readable label for response `y`.
    pub fn label(&self, y: usize) -> String {
        match self {
            ResponseSpace::Atomic { ids } => ids[y].clone(),
            ResponseSpace::Sequence { vocab, .. } => {
                let toks = self.tokens_of(y).expect("sequence mode");
                toks.iter()
                    .map(|&t| vocab[t].as_str())
                    .collect::<Vec<_>>()
                    .join(".")
            }
        }
    }

    pub fn index_of(&self, id: &str) -> Result<usize> {
        match self {
            ResponseSpace::Atomic { ids } => ids
                .iter()
                .position(|r| r == id)
                .ok_or_else(|| Error::domain(format!("unknown response identifier {id:?}"))),
            ResponseSpace::Sequence { vocab, horizon } => {
                let parts: Vec<&str> = id.split('.').collect();
                if parts.len() != *horizon {
                    return Err(Error::domain(format!(
                        "response label {id:?} does not have {horizon} tokens"
                    )));
                }
                let toks = parts
                    .iter()
                    .map(|p| {
                        vocab
                            .iter()
                            .position(|t| t == p)
                            .ok_or_else(|| Error::domain(format!("unknown token {p:?}")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                self.index_of_tokens(&toks)
            }
        }
    }

    /// Token length of a response: `H` in sequence mode, 1 for atomic ids.
    pub fn response_len(&self, _y: usize) -> usize {
        match self {
            ResponseSpace::Atomic { .. } => 1,
            ResponseSpace::Sequence { horizon, .. } => *horizon,
        }
    }
}

/// The prompt distribution mu.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptDistribution {
    weights: Vec<f64>,
}

impl PromptDistribution {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::validation("prompt distribution must be non-empty"));
        }
        if weights.iter().any(|&w| !w.is_finite() || w < 0.0) {
            return Err(Error::validation("prompt weights must be finite and nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::validation(format!(
                "prompt weights sum to {total}, expected 1 within {ROW_SUM_TOL}"
            )));
        }
        Ok(PromptDistribution { weights })
    }

    pub fn uniform(count: usize) -> Self {
        PromptDistribution {
            weights: vec![1.0 / count.max(1) as f64; count.max(1)],
        }
    }

    pub fn point_mass(count: usize, x: usize) -> Self {
        let mut weights = vec![0.0; count];
        weights[x] = 1.0;
        PromptDistribution { weights }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn weight(&self, x: usize) -> f64 {
        self.weights[x]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.weights
            .iter()
            .enumerate()
            .filter(|(_, &w)| w > 0.0)
            .map(|(x, _)| x)
    }

    pub fn sample(&self, rng: &mut crate::RngStream) -> usize {
        sample_from(&self.weights, rng)
    }
}

/// Draw an index proportional to `weights` (assumed normalized).
pub(crate) fn sample_from(weights: &[f64], rng: &mut crate::RngStream) -> usize {
    let u = rng.uniform();
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    // Rounding slack: fall back to the last supported index.
    weights
        .iter()
        .rposition(|&w| w > 0.0)
        .expect("distribution has support")
}

fn has_duplicates(ids: &[String]) -> bool {
    let mut seen = std::collections::HashSet::new();
    ids.iter().any(|id| !seen.insert(id))
}
