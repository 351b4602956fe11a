//! CMA-ES and a linear controller trained inside model-generated rollouts.

mod cmaes;
mod dream;
mod search;

pub use cmaes::CmaesState;
pub use dream::{
    dream_rollout, evaluate_population, origin_reward, tracking_reward, zero_reward, DreamEnv, LinearController, RewardFn,
};
pub use search::{dream_search, fit_world_model, moving_average, GenerationStats, WorldModelSpec};
