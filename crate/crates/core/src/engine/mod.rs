//! Reward-map prediction: candidate sampling, the map-to-policy pipeline,
//! horizon loss pairing, and the online training loop.

mod agent;
mod history;
mod learner;
mod policy;

pub use agent::{
    batch_terms, candidate_input, choose_action, random_action, record_reward, run_stream, validate, Agent,
    LossTerm, PendingPrediction, PolicyConfig, RewardMapSample, RunConfig, RunResult, StepLog, StoredInput,
    TieBreak, ValidationConfig,
};
pub use history::HistoryBuffer;
pub use learner::{module_gradients, ModuleLearner, Predictor};
pub use policy::{distify, normalize_map, sample_index, subsample_actions, var_argmax, variance, DistFamily};
