//! Preference games with transitive and cyclic structure.
//!
//! The crate is organised around a finite, skew-symmetric game of logit
//! scores ([`PreferenceScoreMatrix`]):
//!
//! - [`preference`]: scores, probabilities and policy-level win rates.
//! - [`decomposition`]: exact split of a game into a potential (transitive)
//!   part and a zero-row-sum (cyclic) part.
//! - [`models`]: trainable Bradley-Terry, general preference (GPM) and
//!   hybrid reward-cyclic (HRC) models with analytic gradients.
//! - [`witnesses`]: constructions and feasibility checks for what low-rank
//!   skew-symmetric embeddings can and cannot represent.
//! - [`synthdata`]: cyclic and dominant+cycle synthetic datasets.
//! - [`selfplay`]: tabular multiplicative-weights self-play against static
//!   or time-varying oracles, with duality-gap tracking.

pub mod decomposition;
pub mod error;
pub mod models;
pub mod preference;
pub mod rng;
pub mod selfplay;
pub mod synthdata;
pub mod witnesses;

pub use decomposition::{decompose, transitivity_fraction, Decomposition};
pub use error::{PrefError, Result};
pub use preference::{
    policy_vs_policy, prob_to_score, score_to_prob, sigmoid, win_prob_vs_policy,
    PreferenceScoreMatrix, ProbabilityMatrix, TabularPolicy,
};
