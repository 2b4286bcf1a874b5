//! Exact, seed-reproducible machinery for studying self-training on small
//! conditional models: best-of-N selection, maximum-likelihood fitting,
//! KL-regularized (DPO-style) fitting with optimistic exploration, and the
//! diagnostics that make those procedures checkable against closed forms
//! (coverage, concentrability, margin, tilted optima, sharpness verdicts).
//!
//! Everything here operates at desk scale: response spaces are small enough
//! to enumerate, so every expectation is an exact weighted sum and every
//! sampling procedure has a brute-force oracle next to it. The crate is the
//! computational substrate; the companion CLI crate drives experiments and
//! emits reports.
//!
//! Concurrency: models, spaces, and instances are immutable after
//! construction and safe to share across threads. Randomized procedures take
//! an explicit [`RngStream`], and parallel loops split one stream per work
//! item so results do not depend on scheduling. The `parallel` feature
//! (default) backs bulk loops with rayon; disabling it yields a fully
//! sequential build with identical outputs.

// `!(x > 0.0)` deliberately rejects NaN along with the out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod decode;
pub mod exec;
pub mod instances;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod rlhf;
pub mod rng;
pub mod serde_ext;
pub mod sft;
pub mod space;

mod error;

pub use error::{Error, Result};
pub use rng::RngStream;

/// Numeric policy shared across the crate.
///
/// All probability comparisons happen in log space; these constants pin the
/// conventions so they are not scattered as magic numbers.
pub mod consts {
    /// Two log-probabilities within this absolute distance are treated as
    /// tied. Ties matter for argmax sets and best-of-N order statistics.
    pub const LOG_TIE_TOL: f64 = 1e-12;

    /// Finite stand-in for `ln 0` where a loss needs a finite value.
    /// Below this, `exp` underflows to zero in f64 anyway.
    pub const LOG_FLOOR: f64 = -745.0;

    /// Probability rows must sum to one within this tolerance.
    pub const ROW_SUM_TOL: f64 = 1e-9;

    /// Hard cap on enumerable response spaces (`|V|^H` in sequence mode).
    pub const ENUM_CAP: u64 = 1 << 24;

    /// Default per-prompt draw cap for adaptive sampling; converts a
    /// pathological non-terminating stopping rule into a capacity error.
    pub const ADAPTIVE_DRAW_CAP: u64 = 1_000_000;
}
