//! Mixtures over a growing set of modules, with learned adapters around
//! the most recent frozen one.

mod controller;
mod transform;
mod votes;

pub use controller::{Candidate, ModuleSet, VoteRecord, VotingConfig, VotingController, CHECKPOINT_KIND};
pub use transform::{TransformBound, TransformInit, TransformStack};
pub use votes::{init_votes, VoteInit, VoteMode, VoteState};
