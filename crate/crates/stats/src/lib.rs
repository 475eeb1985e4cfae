//! Analysis of encounter score tables.
//!
//! Scores arrive in long format ([`ScoreTable`]): one row per encounter and
//! category. From there the crate fits fixed-effects OLS models and contrasts
//! arms ([`ols`]), bootstraps per-arm means ([`bootstrap`]), measures rank
//! agreement between the two actors of replicated scenarios ([`tau`]) and maps
//! per-scenario domain gaps between arms ([`gap`]).

pub mod bootstrap;
pub mod gap;
pub mod ols;
pub mod table;
pub mod tau;

use thiserror::Error;

pub use bootstrap::{bootstrap_mean_ci, BootstrapCi};
pub use gap::{gap_map, GapMap};
pub use ols::{fit_ols_fixed_effects, pairwise_contrast, Contrast, OlsFit};
pub use table::{ScoreRecord, ScoreTable};
pub use tau::{kendall_tau_b, replication_pairs, ReplicationPairs, TauResult};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("no rows for category `{0}`")]
    EmptyCategory(String),
    #[error("arm `{0}` is not in the data")]
    UnknownArm(String),
    #[error("design matrix is rank deficient: `{0}` is collinear with earlier columns")]
    RankDeficient(String),
    #[error("{rows} rows leave no residual degrees of freedom for {params} parameters")]
    NoResidualDf { rows: usize, params: usize },
    #[error("empty input")]
    Empty,
    #[error("{0} must lie strictly between 0 and 1")]
    Level(f64),
    #[error("vectors have lengths {0} and {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least two observations")]
    TooShort,
    #[error("tau-b is undefined: every value in one vector is tied")]
    AllTied,
    #[error("non-finite value at position {0}")]
    NonFinite(usize),
    #[error("scenario `{scenario}` has no rows for arm `{arm}`")]
    MissingArm { scenario: String, arm: String },
    #[error("replicated scenario `{scenario}` under arm `{arm}` has {actors} actors, expected 2")]
    Replication {
        scenario: String,
        arm: String,
        actors: usize,
    },
    #[error("category `{category}` is missing for {scenario}/{arm}/{actor}")]
    MissingCell {
        category: String,
        scenario: String,
        arm: String,
        actor: String,
    },
    #[error("duplicate row for encounter `{encounter}` category `{category}`")]
    Duplicate { encounter: String, category: String },
    #[error("score table csv: {0}")]
    Csv(String),
}
