use frmdn_core::control::{
    dream_rollout, dream_search, evaluate_population, fit_world_model, moving_average, origin_reward, zero_reward,
    CmaesState, DreamEnv, LinearController, WorldModelSpec,
};
use frmdn_core::distributions::HeadStructure;
use frmdn_core::model::{FrmdnModel, ModelConfig};
use frmdn_core::rng::stream_rng;
use frmdn_core::Error;
use proptest::prelude::*;

fn sphere(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn rosenbrock(x: &[f64]) -> f64 {
    x.windows(2).map(|w| 100.0 * (w[1] - w[0] * w[0]).powi(2) + (1.0 - w[0]).powi(2)).sum()
}

/// Minimises `f` until `target` or `budget` evaluations; returns the best value
/// and the evaluations used.
fn minimise(f: impl Fn(&[f64]) -> f64, n: usize, lambda: usize, sigma: f64, budget: usize, target: f64, seed: u64) -> (f64, usize) {
    let mut es = CmaesState::new(vec![1.0; n], sigma, lambda).unwrap();
    let mut rng = stream_rng(seed, 0);
    while es.evaluations() < budget {
        let pop = es.ask(&mut rng);
        let fit: Vec<f64> = pop.iter().map(|x| f(x)).collect();
        es.tell(&pop, &fit).unwrap();
        if es.best().unwrap().1 < target {
            break;
        }
    }
    (es.best().unwrap().1, es.evaluations())
}

#[test]
fn sphere_converges_within_budget() {
    for seed in 0..3 {
        let (best, evals) = minimise(sphere, 10, 16, 0.5, 10_000, 1e-6, seed);
        assert!(best < 1e-6 && evals <= 10_000, "seed {seed}: {best} after {evals}");
    }
}

#[test]
fn rosenbrock_converges_within_budget() {
    for seed in 0..3 {
        let (best, evals) = minimise(rosenbrock, 5, 16, 0.5, 50_000, 1.0, seed);
        assert!(best < 1.0, "seed {seed}: {best} after {evals}");
    }
}

#[test]
fn samples_have_identity_covariance_initially() {
    let es = CmaesState::new(vec![0.0; 3], 1.0, 100).unwrap();
    let mut rng = stream_rng(1, 0);
    let mut sum = [[0.0; 3]; 3];
    let mut mean = [0.0; 3];
    let mut count = 0.0;
    for _ in 0..1000 {
        for x in es.ask(&mut rng) {
            for i in 0..3 {
                mean[i] += x[i];
                for j in 0..3 {
                    sum[i][j] += x[i] * x[j];
                }
            }
            count += 1.0;
        }
    }
    for i in 0..3 {
        for j in 0..3 {
            let c = sum[i][j] / count - mean[i] * mean[j] / (count * count);
            let expect = if i == j { 1.0 } else { 0.0 };
            assert!((c - expect).abs() < 0.05, "cov[{i}][{j}] = {c}");
        }
    }
}

#[test]
fn fixed_seed_reproduces_populations() {
    let es = CmaesState::new(vec![0.5; 4], 0.3, 8).unwrap();
    assert_eq!(es.ask(&mut stream_rng(3, 0)), es.ask(&mut stream_rng(3, 0)));
}

#[test]
fn flat_fitness_keeps_the_mean() {
    let mut es = CmaesState::new(vec![0.25, -1.0, 3.0], 0.7, 10).unwrap();
    let mut rng = stream_rng(4, 0);
    for _ in 0..5 {
        let pop = es.ask(&mut rng);
        es.tell(&pop, &[2.0; 10]).unwrap();
        assert_eq!(es.mean(), &[0.25, -1.0, 3.0]);
    }
    assert!(es.sigma() > 0.0 && es.sigma() < 0.7);
}

#[test]
fn non_finite_fitness_is_rejected() {
    let mut es = CmaesState::new(vec![0.0; 2], 1.0, 4).unwrap();
    let pop = es.ask(&mut stream_rng(0, 0));
    assert!(matches!(es.tell(&pop, &[1.0, f64::INFINITY, 0.0, 2.0]), Err(Error::NonFinite { .. })));
}

fn mean_trajectory(f: impl Fn(&[f64]) -> f64, seed: u64) -> Vec<Vec<f64>> {
    let mut es = CmaesState::new(vec![1.0; 6], 0.5, 12).unwrap();
    let mut rng = stream_rng(seed, 0);
    (0..40)
        .map(|_| {
            let pop = es.ask(&mut rng);
            let fit: Vec<f64> = pop.iter().map(|x| f(x)).collect();
            es.tell(&pop, &fit).unwrap();
            es.mean().to_vec()
        })
        .collect()
}

#[test]
fn monotone_fitness_transform_gives_identical_trajectory() {
    for seed in 0..3 {
        let a = mean_trajectory(rosenbrock, seed);
        let b = mean_trajectory(|x| 2.0 * rosenbrock(x) + 3.0, seed);
        assert_eq!(a, b);
    }
}

fn is_symmetric_pd(es: &CmaesState) -> bool {
    let c = es.cov();
    let sym = (c - c.transpose()).abs().max() == 0.0;
    sym && c.clone().cholesky().is_some()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn covariance_stays_symmetric_pd(seed in 0u64..1000, n in 1usize..8, lambda in 4usize..20, sigma in 0.01f64..3.0) {
        let mut es = CmaesState::new(vec![2.0; n], sigma, lambda).unwrap();
        let mut rng = stream_rng(seed, 0);
        for _ in 0..60 {
            let pop = es.ask(&mut rng);
            let fit: Vec<f64> = pop.iter().map(|x| rosenbrock(x) + sphere(x)).collect();
            es.tell(&pop, &fit).unwrap();
            prop_assert!(is_symmetric_pd(&es));
            prop_assert!(es.sigma() > 0.0);
        }
    }
}

fn tiny_model(d_action: usize) -> FrmdnModel {
    let cfg = ModelConfig {
        d: 2,
        d_action,
        components: 2,
        hidden: 4,
        head_structure: HeadStructure::Diagonal,
        flow_hidden: 4,
        ..ModelConfig::default()
    };
    FrmdnModel::new(cfg, 0).unwrap()
}

#[test]
fn zero_reward_gives_zero_return_and_fitness() {
    let model = tiny_model(1);
    let env = DreamEnv {
        model: &model,
        reward: zero_reward(),
        horizon: 10,
        start: vec![0.0, 0.0],
    };
    let ctrl = LinearController::zeros(2, 4, 1);
    assert_eq!(dream_rollout(&env, &ctrl, &mut stream_rng(0, 0)).unwrap(), 0.0);
    let pop = vec![ctrl.params(); 3];
    assert!(evaluate_population(&env, &pop, 1, 0).unwrap().iter().all(|&f| f == 0.0));
}

#[test]
fn rollouts_are_reproducible_and_candidates_independent() {
    let model = tiny_model(2);
    let env = DreamEnv {
        model: &model,
        reward: origin_reward(),
        horizon: 15,
        start: vec![1.0, -1.0],
    };
    let n = env.controller_params();
    assert_eq!(n, 2 * (2 + 4 + 1));
    let es = CmaesState::new(vec![0.0; n], 0.5, 6).unwrap();
    let pop = es.ask(&mut stream_rng(2, 0));
    let fit = evaluate_population(&env, &pop, 3, 9).unwrap();
    assert_eq!(fit, evaluate_population(&env, &pop, 3, 9).unwrap());
    let reversed: Vec<Vec<f64>> = pop.iter().rev().cloned().collect();
    let fit_rev = evaluate_population(&env, &reversed, 3, 9).unwrap();
    let back: Vec<f64> = fit_rev.into_iter().rev().collect();
    assert_eq!(fit, back);
    let ctrl = LinearController::from_params(2, 4, 2, &pop[0]).unwrap();
    let r = dream_rollout(&env, &ctrl, &mut stream_rng(5, 0)).unwrap();
    assert_eq!(r, dream_rollout(&env, &ctrl, &mut stream_rng(5, 0)).unwrap());
    assert!(evaluate_population(&env, &pop, 0, 9).is_err());
}

#[test]
fn more_episodes_shrink_fitness_variance() {
    let model = tiny_model(1);
    let env = DreamEnv {
        model: &model,
        reward: origin_reward(),
        horizon: 8,
        start: vec![0.5, 0.5],
    };
    let pop = vec![LinearController::zeros(2, 4, 1).params()];
    let variance = |m: usize| {
        let xs: Vec<f64> = (0..400).map(|s| evaluate_population(&env, &pop, m, 1000 + s).unwrap()[0]).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
    };
    let ratio = variance(2) / variance(1);
    assert!((0.35..0.7).contains(&ratio), "variance ratio {ratio}");
}

#[test]
fn controller_improves_in_dream() {
    let model = fit_world_model(&WorldModelSpec::default(), 0).unwrap();
    let env = DreamEnv {
        model: &model,
        reward: origin_reward(),
        horizon: 20,
        start: vec![2.0, -2.0],
    };
    let (log, es) = dream_search(&env, 16, 0.5, 60, 4, 0).unwrap();
    assert_eq!(log.len(), 60);
    assert_eq!(es.generation(), 60);
    let ma = moving_average(&log.iter().map(|g| g.mean_reward).collect::<Vec<_>>(), 5);
    let (first, last) = (ma[0], ma[ma.len() - 1]);
    assert!(last > 0.5 * first, "moving average {first} -> {last}");
    let (again, _) = dream_search(&env, 16, 0.5, 60, 4, 0).unwrap();
    assert_eq!(log, again);
}
