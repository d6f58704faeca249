//! Membership-inference features and dataset-inference tests for auditing
//! whether a collection of samples was used to train a generative model.
//!
//! The pipeline runs in four stages:
//!
//! 1. pair a suspect set with an i.i.d. reference set ([`trace::CandidateSet`]),
//! 2. extract per-sample membership features from model traces
//!    ([`arm`] for token models, [`dm`] for diffusion models),
//! 3. map feature vectors to scalar scores ([`di`]),
//! 4. run a one-sided Welch test on the scores ([`stats`]).
//!
//! [`toy`] provides small trainable models that emit the same trace schema
//! as real checkpoints, so the whole pipeline can be exercised end to end.

pub mod arm;
pub mod config;
pub mod di;
pub mod dm;
pub mod error;
pub mod features;
pub mod lbfgs;
pub mod pipeline;
pub mod rng;
pub mod stats;
pub mod toy;
pub mod trace;

pub use config::AttackConfig;
pub use error::{Error, Result};
pub use features::FeatureMatrix;
pub use trace::{make_candidate_set, parse_trace_stream, ArmStep, ArmTrace, CandidateSet, DmTrace, Modality, Traces};
