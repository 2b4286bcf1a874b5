//! Generators for the constructions used throughout: the hard-instance
//! family for coverage lower bounds, the linear-softmax separation example,
//! the max-cut reduction instance, the two-layer representational
//! counterexample, and randomized tabular instances with target coverage and
//! margin.
//!
//! Each generator bundles everything an experiment needs: prompt
//! distribution, base model, candidate class, and ground-truth metadata
//! recomputed through the metrics module at construction time.

use crate::consts::LOG_TIE_TOL;
use crate::metrics::{argmax_set, coverage_profile};
use crate::model::{FeatureSet, LinearSoftmaxModel, Model, TabularModel};
use crate::sft::{ModelClass, SoftmaxFamily};
use crate::space::{PromptDistribution, PromptSpace, ResponseSpace};
use crate::{Error, Result, RngStream};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Cap on enumerated class members; the full class size is still reported
/// for log-cardinality bookkeeping.
pub const CLASS_ENUM_CAP: usize = 100_000;

/// Ground-truth metadata computed by brute force at construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Argmax response set per prompt.
    pub argmax_sets: Vec<Vec<usize>>,
    pub c_cov: f64,
    pub c_cov_gamma: f64,
    pub gamma: f64,
    #[serde(with = "crate::serde_ext::float")]
    pub margin_max: f64,
    /// Natural log of the full class cardinality, even when the enumerated
    /// class is subsampled (`None` for parametric families).
    pub log_class_size: Option<f64>,
    /// Known external optimum where one exists (the max-cut value).
    pub external_optimum: Option<u64>,
}

/// A complete experimental instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharpeningInstance {
    pub prompt_space: PromptSpace,
    pub response_space: ResponseSpace,
    pub mu: PromptDistribution,
    pub base: Model,
    pub class: ModelClass,
    pub truth: GroundTruth,
}

fn ground_truth(
    base: &Model,
    mu: &PromptDistribution,
    gamma: f64,
    log_class_size: Option<f64>,
    external_optimum: Option<u64>,
) -> Result<GroundTruth> {
    let profile = coverage_profile(base, mu, gamma, 1, &[], 1.0)?;
    let argmax_sets = (0..base.prompt_count())
        .map(|x| argmax_set(base, x, LOG_TIE_TOL))
        .collect::<Result<Vec<_>>>()?;
    Ok(GroundTruth {
        argmax_sets,
        c_cov: profile.c_cov,
        c_cov_gamma: profile.c_cov_gamma,
        gamma,
        margin_max: profile.margin_max,
        log_class_size,
        external_optimum,
    })
}

/// The hard-instance family: prompt `x0` is a point mass on `y0`; each of
/// `x1..xd` carries one planted response at probability `1/((1-gamma)M)`
/// with the remaining mass spread evenly over the other non-null responses.
/// The class is the set of all `M^d` planted-index assignments, subsampled
/// (with the true assignment kept) when it exceeds the enumeration cap.
pub fn lower_bound_family(
    d: usize,
    m: usize,
    delta_mass: f64,
    gamma: f64,
    rng: &mut RngStream,
) -> Result<SharpeningInstance> {
    if d < 1 {
        return Err(Error::domain("need at least one planted prompt"));
    }
    if m < 2 {
        return Err(Error::domain("need at least two candidate responses"));
    }
    if !(0.0 < delta_mass && delta_mass < 1.0) {
        return Err(Error::domain("planted prompt mass must be in (0, 1)"));
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::domain("gamma must be in [0, 1)"));
    }
    let planted = 1.0 / ((1.0 - gamma) * m as f64);
    let spread = (1.0 / m as f64) * (1.0 - gamma / ((m as f64 - 1.0) * (1.0 - gamma)));
    if planted > 1.0 || spread < 0.0 {
        return Err(Error::domain(format!(
            "parameters give an invalid row: planted {planted}, spread {spread}"
        )));
    }

    let rows_for = |assignment: &[usize]| -> Vec<Vec<f64>> {
        let mut rows = Vec::with_capacity(d + 1);
        let mut null_row = vec![0.0; m + 1];
        null_row[0] = 1.0;
        rows.push(null_row);
        for &j in assignment {
            let mut row = vec![spread; m + 1];
            row[0] = 0.0;
            row[j] = planted;
            rows.push(row);
        }
        rows
    };

    let true_assignment: Vec<usize> = (0..d).map(|_| 1 + rng.below(m)).collect();
    let base = Model::from(TabularModel::new(rows_for(&true_assignment))?);

    let full_size = (m as f64).powi(d as i32);
    let members: Vec<Model> = if full_size <= CLASS_ENUM_CAP as f64 {
        let mut members = Vec::with_capacity(full_size as usize);
        let mut assignment = vec![1usize; d];
        loop {
            members.push(Model::from(TabularModel::new(rows_for(&assignment))?));
            // Odometer over [1, M]^d.
            let mut pos = 0;
            loop {
                if pos == d {
                    break;
                }
                assignment[pos] += 1;
                if assignment[pos] <= m {
                    break;
                }
                assignment[pos] = 1;
                pos += 1;
            }
            if pos == d {
                break;
            }
        }
        members
    } else {
        let mut members = vec![base.clone()];
        for _ in 1..CLASS_ENUM_CAP {
            let assignment: Vec<usize> = (0..d).map(|_| 1 + rng.below(m)).collect();
            members.push(Model::from(TabularModel::new(rows_for(&assignment))?));
        }
        members
    };

    let mut weights = vec![delta_mass / d as f64; d + 1];
    weights[0] = 1.0 - delta_mass;
    let mu = PromptDistribution::new(weights)?;
    let truth = ground_truth(&base, &mu, gamma, Some(d as f64 * (m as f64).ln()), None)?;
    Ok(SharpeningInstance {
        prompt_space: PromptSpace::indexed(d + 1),
        response_space: ResponseSpace::indexed(m + 1),
        mu,
        base: base.clone(),
        class: ModelClass::Finite(members),
        truth,
    })
}

/// Sphere-packed separation instance: responses are unit vectors with
/// pairwise inner product at most 0.9, features are the vectors themselves,
/// and the base model points at the first response. Margin is order one
/// while coverage grows with the response count, which is what separates
/// exploration from filtering on this family.
pub fn softmax_separation(
    d: usize,
    y_size: usize,
    norm_bound: f64,
    rng: &mut RngStream,
) -> Result<SharpeningInstance> {
    if d < 2 || y_size < 2 {
        return Err(Error::domain("need dimension and response count at least 2"));
    }
    if !(norm_bound >= 1.0) {
        return Err(Error::domain("norm bound must cover the unit parameter"));
    }
    const MAX_IP: f64 = 0.9;
    const RETRY_CAP: usize = 100_000;

    let mut vectors: Vec<Vec<f64>> = Vec::with_capacity(y_size);
    let mut attempts = 0usize;
    while vectors.len() < y_size {
        attempts += 1;
        if attempts > RETRY_CAP {
            return Err(Error::capacity(format!(
                "packing rejection exceeded {RETRY_CAP} attempts at {} of {y_size} vectors",
                vectors.len()
            )));
        }
        let mut v: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm < 1e-9 {
            continue;
        }
        for a in v.iter_mut() {
            *a /= norm;
        }
        let ok = vectors
            .iter()
            .all(|u| u.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() <= MAX_IP);
        if ok {
            vectors.push(v);
        }
    }

    let features = Arc::new(FeatureSet::Atomic {
        dim: d,
        per_prompt: vec![vectors.concat()],
    });
    let theta_star = vectors[0].clone();
    let base = Model::from(LinearSoftmaxModel::new(
        features.clone(),
        vec![theta_star],
        norm_bound,
    )?);
    let mu = PromptDistribution::uniform(1);
    let truth = ground_truth(&base, &mu, 0.0, None, None)?;
    Ok(SharpeningInstance {
        prompt_space: PromptSpace::indexed(1),
        response_space: ResponseSpace::indexed(y_size),
        mu,
        base,
        class: ModelClass::LinearSoftmax(SoftmaxFamily { features, norm_bound }),
        truth,
    })
}

/// Simple undirected graph for the max-cut reduction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Graph {
    pub vertices: usize,
    pub edges: Vec<(usize, usize)>,
}

impl Graph {
    pub fn new(vertices: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        if vertices < 2 {
            return Err(Error::domain("graph needs at least two vertices"));
        }
        let mut seen = std::collections::HashSet::new();
        for &(u, v) in &edges {
            if u == v || u >= vertices || v >= vertices {
                return Err(Error::domain(format!("bad edge ({u}, {v})")));
            }
            if !seen.insert((u.min(v), u.max(v))) {
                return Err(Error::domain(format!("duplicate edge ({u}, {v})")));
            }
        }
        Ok(Graph { vertices, edges })
    }

    /// Cut value of a partition given as a side per vertex.
    pub fn cut_value(&self, sides: &[bool]) -> u64 {
        self.edges
            .iter()
            .filter(|&&(u, v)| sides[u] != sides[v])
            .count() as u64
    }

    /// Brute-force maximum cut.
    pub fn max_cut(&self) -> u64 {
        let mut best = 0;
        for mask in 0u64..(1 << self.vertices) {
            let sides: Vec<bool> = (0..self.vertices).map(|v| mask >> v & 1 == 1).collect();
            best = best.max(self.cut_value(&sides));
        }
        best
    }
}

/// Max-cut reduction instance plus its cut decoder.
#[derive(Debug, Clone)]
pub struct MaxcutInstance {
    pub instance: SharpeningInstance,
    pub graph: Graph,
}

impl MaxcutInstance {
    /// Map a response to the vertex partition encoded by its first
    /// `vertices` tokens, and the resulting cut value.
    pub fn decode_cut(&self, y: usize) -> (Vec<bool>, u64) {
        let toks = self
            .instance
            .response_space
            .tokens_of(y)
            .expect("sequence space");
        let sides: Vec<bool> = toks[..self.graph.vertices].iter().map(|&t| t == 1).collect();
        let value = self.graph.cut_value(&sides);
        (sides, value)
    }
}

/// Multi-layer softmax model over `{-1, +1}^(n+2)` whose sequence argmax
/// encodes a maximum cut of the graph.
///
/// Monomial features (degrees 1 through 3 over token signs, canonical
/// coordinate order: singles, then pairs row-major, then triples) are
/// scaled by `1/sqrt(d)` to respect the unit feature bound; parameters are
/// scaled by `sqrt(d)` to compensate, leaving all probabilities unchanged.
/// The first `n` steps are uniform coin flips; the next-to-last layer wires
/// the negated adjacency couplings, and the last layer gates on the two
/// trailing tokens being `+1`.
pub fn maxcut_hardness(graph: Graph) -> Result<MaxcutInstance> {
    if graph.edges.len() % 2 != 1 {
        return Err(Error::domain(
            "the reduction requires an odd number of edges",
        ));
    }
    let n = graph.vertices;
    let horizon = n + 2;
    let dim = horizon + horizon * horizon + horizon * horizon * horizon;
    let scale = (dim as f64).sqrt();
    let single = |i: usize| i;
    let pair = |i: usize, j: usize| horizon + i * horizon + j;
    let triple = |i: usize, j: usize, k: usize| {
        horizon + horizon * horizon + (i * horizon + j) * horizon + k
    };

    // Sign of token t at a position: token 1 is +1, token 0 is -1.
    let sign = |t: usize| if t == 1 { 1.0 } else { -1.0 };

    let mut levels: Vec<Vec<Vec<f64>>> = Vec::with_capacity(horizon);
    for level in 0..horizon {
        let prefixes = 1usize << (level + 1);
        let mut table = vec![0.0; prefixes * dim];
        for p in 0..prefixes {
            let signs: Vec<f64> = (0..=level)
                .map(|pos| sign(p >> (level - pos) & 1))
                .collect();
            let row = &mut table[p * dim..(p + 1) * dim];
            for i in 0..=level {
                row[single(i)] = signs[i] / scale;
                for j in 0..=level {
                    row[pair(i, j)] = signs[i] * signs[j] / scale;
                    for k in 0..=level {
                        row[triple(i, j, k)] = signs[i] * signs[j] * signs[k] / scale;
                    }
                }
            }
        }
        levels.push(vec![table]);
    }
    let features = Arc::new(FeatureSet::Sequence { dim, vocab: 2, horizon, levels });

    let gate = horizon as f64; // the gate coefficient B = H
    // Coupling magnitude 1/4 per ordered pair. The cut ordering only needs
    // the couplings negative and equal; at magnitude 1 the coupling layer
    // saturates on dense graphs and adjacent cut levels collapse inside the
    // 1e-12 log tie tolerance, while at 1/4 the worst-case level gap over
    // graphs up to 8 vertices stays above 1e-7.
    let coupling = 0.25;
    let mut layers = vec![vec![0.0; dim]; horizon];
    for &(u, v) in &graph.edges {
        layers[horizon - 2][triple(u, v, horizon - 2)] = -scale * coupling;
        layers[horizon - 2][triple(v, u, horizon - 2)] = -scale * coupling;
    }
    layers[horizon - 1][pair(horizon - 2, horizon - 1)] = scale * gate / 2.0;
    layers[horizon - 1][single(horizon - 1)] = scale * gate / 2.0;

    let norm_bound = layers
        .iter()
        .map(|theta| theta.iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
        .max(1.0)
        * (1.0 + 1e-12);
    let base = Model::from(LinearSoftmaxModel::new(
        features.clone(),
        layers,
        norm_bound,
    )?);

    let mu = PromptDistribution::uniform(1);
    let max_cut = graph.max_cut();
    let truth = ground_truth(&base, &mu, 0.0, None, Some(max_cut))?;
    let instance = SharpeningInstance {
        prompt_space: PromptSpace::new(vec!["null".into()])?,
        response_space: ResponseSpace::sequence(vec!["-1".into(), "+1".into()], horizon)?,
        mu,
        base,
        class: ModelClass::LinearSoftmax(SoftmaxFamily { features, norm_bound }),
        truth,
    };
    Ok(MaxcutInstance { instance, graph })
}

/// Two-layer counterexample on vocabulary `[n]`: tokens 1 and 2 share a
/// first-layer feature, so every model in the class splits their first-token
/// probabilities equally and no parameter choice can place more than half
/// the mass on the base model's unique argmax sequence `(2, 1)`.
pub fn representational_example(n: usize, bound: Option<f64>) -> Result<SharpeningInstance> {
    if n < 8 {
        return Err(Error::domain("need a vocabulary of at least 8 tokens"));
    }
    let b = bound.unwrap_or((n as f64).ln());
    if !(b > 0.0) {
        return Err(Error::domain("parameter bound must be positive"));
    }
    let dim = 2;
    // Level 0: token value 1 or 2 -> e1, otherwise e2.
    let mut level0 = vec![0.0; n * dim];
    for t in 0..n {
        let value = t + 1;
        if value <= 2 {
            level0[t * dim] = 1.0;
        } else {
            level0[t * dim + 1] = 1.0;
        }
    }
    // Level 1: prefix (2, 1) -> e1; (2, j != 1) -> e2; (i != 2, .) -> 0.
    let mut level1 = vec![0.0; n * n * dim];
    for t0 in 0..n {
        for t1 in 0..n {
            let idx = (t0 * n + t1) * dim;
            if t0 + 1 == 2 {
                if t1 + 1 == 1 {
                    level1[idx] = 1.0;
                } else {
                    level1[idx + 1] = 1.0;
                }
            }
        }
    }
    let features = Arc::new(FeatureSet::Sequence {
        dim,
        vocab: n,
        horizon: 2,
        levels: vec![vec![level0], vec![level1]],
    });
    let base = Model::from(LinearSoftmaxModel::new(
        features.clone(),
        vec![vec![b, 0.0], vec![b, 0.0]],
        b,
    )?);
    let mu = PromptDistribution::uniform(1);
    let truth = ground_truth(&base, &mu, 0.0, None, None)?;
    let vocab: Vec<String> = (1..=n).map(|v| v.to_string()).collect();
    Ok(SharpeningInstance {
        prompt_space: PromptSpace::new(vec!["null".into()])?,
        response_space: ResponseSpace::sequence(vocab, 2)?,
        mu,
        base,
        class: ModelClass::LinearSoftmax(SoftmaxFamily { features, norm_bound: b }),
        truth,
    })
}

/// Target ranges for randomized tabular instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomTabularSpec {
    pub prompts: usize,
    pub responses: usize,
    /// Inclusive range for the achieved margin.
    pub margin_range: Option<(f64, f64)>,
    /// Inclusive range for the achieved coverage coefficient.
    pub c_cov_range: Option<(f64, f64)>,
    pub max_attempts: usize,
}

impl RandomTabularSpec {
    pub fn new(prompts: usize, responses: usize) -> Self {
        RandomTabularSpec {
            prompts,
            responses,
            margin_range: None,
            c_cov_range: None,
            max_attempts: 50_000,
        }
    }
}

/// Rejection-sample flat-Dirichlet rows until the coverage and margin land
/// in the requested ranges. The achieved values are recorded in the ground
/// truth; a capacity error reports the nearest miss.
pub fn random_tabular_instance(
    spec: &RandomTabularSpec,
    rng: &mut RngStream,
) -> Result<SharpeningInstance> {
    if spec.prompts == 0 || spec.responses < 2 {
        return Err(Error::domain("need at least one prompt and two responses"));
    }
    let mu = PromptDistribution::uniform(spec.prompts);
    let mut best_miss = f64::INFINITY;
    let mut best_desc = String::new();
    for _ in 0..spec.max_attempts {
        let rows: Vec<Vec<f64>> = (0..spec.prompts)
            .map(|_| dirichlet_flat(spec.responses, rng))
            .collect();
        let base = Model::from(TabularModel::new(rows)?);
        let profile = coverage_profile(&base, &mu, 0.0, 1, &[], 1.0)?;
        let mut miss = 0.0f64;
        if let Some((lo, hi)) = spec.margin_range {
            miss += (lo - profile.margin_max).max(0.0) + (profile.margin_max - hi).max(0.0);
        }
        if let Some((lo, hi)) = spec.c_cov_range {
            miss += (lo - profile.c_cov).max(0.0) + (profile.c_cov - hi).max(0.0);
        }
        if miss == 0.0 {
            let truth = ground_truth(&base, &mu, 0.0, None, None)?;
            return Ok(SharpeningInstance {
                prompt_space: PromptSpace::indexed(spec.prompts),
                response_space: ResponseSpace::indexed(spec.responses),
                mu,
                base,
                class: ModelClass::Tabular,
                truth,
            });
        }
        if miss < best_miss {
            best_miss = miss;
            best_desc = format!(
                "margin {:.4}, c_cov {:.4}",
                profile.margin_max, profile.c_cov
            );
        }
    }
    Err(Error::capacity(format!(
        "no instance hit the target ranges in {} attempts; nearest achieved {best_desc}",
        spec.max_attempts
    )))
}

fn dirichlet_flat(k: usize, rng: &mut RngStream) -> Vec<f64> {
    let mut row: Vec<f64> = (0..k)
        .map(|_| -rng.uniform().max(f64::MIN_POSITIVE).ln())
        .collect();
    let total: f64 = row.iter().sum();
    for v in row.iter_mut() {
        *v /= total;
    }
    row
}
