//! Tokenized bandits: sequential token-by-token decisions against noisy
//! sequence utilities.
//!
//! The crate provides environments for the linear (contextual) and
//! multi-armed variants, the EOFUL and greedy explore-then-commit learners
//! with their k-lookahead generalizations, full-information decoding oracles,
//! reductions to and from bandit tree search, the alignment reduction, an
//! empirical DDMC validation pipeline, and an experiment harness.

pub mod align;
pub mod assumptions;
pub mod bts;
pub mod ddmc_validate;
pub mod decoding;
pub mod env;
pub mod eoful;
pub mod error;
pub mod harness;
pub mod hash;
pub mod lookahead;
pub mod noise;
pub mod seq;
pub mod stats;
pub mod tmab;
pub mod trace;
pub mod utility;

pub use error::{Error, Result};
pub use seq::{DepthBound, Token, TokenSeq, Vocab};
pub use utility::{Embedding, Query, SequenceUtility};
