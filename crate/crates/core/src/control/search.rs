use super::{evaluate_population, CmaesState, DreamEnv};
use crate::data::gen_control_task;
use crate::diffcore::Tensor;
use crate::distributions::HeadStructure;
use crate::model::{train_epoch, FrmdnModel, ModelConfig, Optimizer, OptimizerConfig, OptimizerKind, TrainOptions};
use crate::rng::stream_rng;
use crate::Result;

/// Settings for fitting a world model to random-policy rollouts of
/// [`gen_control_task`].
#[derive(Clone, Debug, PartialEq)]
pub struct WorldModelSpec {
    pub d: usize,
    pub d_action: usize,
    pub sequences: usize,
    pub steps: usize,
    pub epochs: usize,
    pub model: ModelConfig,
    pub optimizer: OptimizerConfig,
    pub train: TrainOptions,
}

impl Default for WorldModelSpec {
    fn default() -> Self {
        Self {
            d: 2,
            d_action: 2,
            sequences: 32,
            steps: 64,
            epochs: 10,
            model: ModelConfig {
                d: 2,
                d_action: 2,
                components: 2,
                hidden: 16,
                flow_depth: 1,
                head_structure: HeadStructure::Diagonal,
                flow_enabled: true,
                flow_hidden: 16,
                ..ModelConfig::default()
            },
            optimizer: OptimizerConfig {
                kind: OptimizerKind::Adam,
                lr: 1e-2,
                clip_norm: 10.0,
            },
            train: TrainOptions {
                batch_size: 16,
                window: 32,
                seed: 0,
            },
        }
    }
}

/// Generates the control task with `seed` and trains a model on it.
pub fn fit_world_model(spec: &WorldModelSpec, seed: u64) -> Result<FrmdnModel> {
    let data = gen_control_task(spec.sequences, spec.steps, spec.d, spec.d_action, seed)?;
    let mut model = FrmdnModel::new(spec.model.clone(), seed)?;
    let params: Vec<Tensor> = model.named_params().into_iter().map(|(_, t)| t).collect();
    let mut opt = Optimizer::new(spec.optimizer, &params)?;
    let opts = TrainOptions { seed, ..spec.train };
    for e in 0..spec.epochs {
        train_epoch(&mut model, &data, &mut opt, &opts, e)?;
    }
    Ok(model)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GenerationStats {
    pub generation: usize,
    pub mean_reward: f64,
    pub best_reward: f64,
    pub sigma: f64,
}

/// CMA-ES over controller parameters starting from zero. Every candidate is
/// scored on the same `episodes` rollouts seeded by `seed`.
pub fn dream_search(
    env: &DreamEnv<'_>,
    popsize: usize,
    sigma0: f64,
    generations: usize,
    episodes: usize,
    seed: u64,
) -> Result<(Vec<GenerationStats>, CmaesState)> {
    let mut es = CmaesState::new(vec![0.0; env.controller_params()], sigma0, popsize)?;
    let mut rng = stream_rng(seed, 0);
    let mut log = Vec::with_capacity(generations);
    for generation in 0..generations {
        let pop = es.ask(&mut rng);
        let fit = evaluate_population(env, &pop, episodes, seed)?;
        es.tell(&pop, &fit)?;
        let best = fit.iter().cloned().fold(f64::INFINITY, f64::min);
        log.push(GenerationStats {
            generation,
            mean_reward: -fit.iter().sum::<f64>() / fit.len() as f64,
            best_reward: -best,
            sigma: es.sigma(),
        });
    }
    Ok((log, es))
}

/// Trailing means over `window` consecutive values.
pub fn moving_average(xs: &[f64], window: usize) -> Vec<f64> {
    if window == 0 {
        return Vec::new();
    }
    xs.windows(window).map(|s| s.iter().sum::<f64>() / window as f64).collect()
}
