use frmdn_core::data::{ar_entropy_rate, gen_correlated_ar, SequenceBatch};
use frmdn_core::diffcore::Tensor;
use frmdn_core::distributions::{mixture_sample, HeadStructure};
use frmdn_core::model::{
    generate_step, load_checkpoint, rollout, save_checkpoint, train_epoch, train_step, Checkpoint, FrmdnModel,
    ModelConfig, Optimizer, OptimizerConfig, OptimizerKind, TrainOptions,
};
use frmdn_core::recurrent::{head_project, lstm_step, RecurrentState};
use frmdn_core::rng::stream_rng;
use frmdn_core::Error;
use rand::Rng;

const LOG_2PI: f64 = 1.837_877_066_409_345_3;

fn config(d: usize, k: usize, h: usize, structure: HeadStructure, flow: bool) -> ModelConfig {
    ModelConfig {
        d,
        components: k,
        hidden: h,
        flow_depth: 1,
        head_structure: structure,
        flow_enabled: flow,
        flow_hidden: 6,
        ..ModelConfig::default()
    }
}

/// Adds uniform noise to every parameter so no part of the model is at its
/// (possibly degenerate) initial value.
fn jitter(model: &FrmdnModel, scale: f64, seed: u64) -> FrmdnModel {
    let mut rng = stream_rng(seed, 77);
    let flat: Vec<f64> = model
        .flat_params()
        .iter()
        .map(|v| v + rng.random_range(-scale..scale))
        .collect();
    model.with_flat_params(&flat).unwrap()
}

fn random_batch(q: usize, t: usize, d: usize, seed: u64) -> SequenceBatch {
    let mut rng = stream_rng(seed, 5);
    let obs = (0..q * t * d).map(|_| rng.random_range(-1.5..1.5)).collect();
    SequenceBatch::new(q, t, d, obs, None, "random").unwrap()
}

fn adam(model: &FrmdnModel, lr: f64) -> Optimizer {
    let params: Vec<Tensor> = model.named_params().into_iter().map(|(_, t)| t).collect();
    Optimizer::new(
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            lr,
            clip_norm: 10.0,
        },
        &params,
    )
    .unwrap()
}

#[test]
fn perfect_prediction_costs_only_the_normaliser() {
    let d = 3;
    let mut model = FrmdnModel::new(config(d, 1, 4, HeadStructure::Diagonal, false), 0).unwrap();
    let target = [0.5, -1.0, 2.0];
    model.head.w = Tensor::zeros(&[4, 1 + 2 * d]);
    let mut b = vec![0.0; 1 + 2 * d];
    b[1..1 + d].copy_from_slice(&target);
    model.head.b = Tensor::matrix(1, 1 + 2 * d, b);
    let obs: Vec<f64> = (0..2 * 6).flat_map(|_| target).collect();
    let batch = SequenceBatch::new(2, 6, d, obs, None, "const").unwrap();
    let nll = model.sequence_nll(&batch).unwrap();
    assert!((nll.total - 0.5 * d as f64 * LOG_2PI).abs() < 1e-12);
    assert_eq!(nll.logdet, 0.0);
}

#[test]
fn identity_flow_matches_plain_recurrent_model() {
    for structure in [HeadStructure::Diagonal, HeadStructure::Tied, HeadStructure::Logistic] {
        for seed in 0..5 {
            let with = FrmdnModel::new(config(4, 3, 8, structure, true), seed).unwrap();
            let without = FrmdnModel::new(config(4, 3, 8, structure, false), seed).unwrap();
            assert_eq!(with.lstm, without.lstm);
            assert_eq!(with.head, without.head);
            let batch = random_batch(3, 7, 4, seed);
            let a = with.sequence_nll(&batch).unwrap();
            let b = without.sequence_nll(&batch).unwrap();
            assert!((a.total - b.total).abs() < 1e-12);
            assert!((a.mixture - b.mixture).abs() < 1e-12);
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `x W + b` for a single row, with `W` given row-major as `rows x cols`.
fn affine(x: &[f64], w: &Tensor, b: &Tensor) -> Vec<f64> {
    let (rows, cols) = (w.rows(), w.cols());
    assert_eq!(x.len(), rows);
    (0..cols)
        .map(|j| b.data()[j] + (0..rows).map(|i| x[i] * w.data()[i * cols + j]).sum::<f64>())
        .collect()
}

/// Straight-line recomputation of the NLL of one sequence.
fn scripted_nll(model: &FrmdnModel, seq: &[Vec<f64>]) -> (f64, f64) {
    let c = &model.config;
    let (d, k, hs) = (c.d, c.components, c.hidden);
    let mut h = vec![0.0; hs];
    let mut cell = vec![0.0; hs];
    let mut mix_sum = 0.0;
    let mut ld_sum = 0.0;
    for t in 0..seq.len() - 1 {
        let mut xh = seq[t].clone();
        xh.extend_from_slice(&h);
        let gates = affine(&xh, &model.lstm.w, &model.lstm.b);
        for j in 0..hs {
            let i_g = sigmoid(gates[j]);
            let f_g = sigmoid(gates[hs + j]);
            let g_g = gates[2 * hs + j].tanh();
            let o_g = sigmoid(gates[3 * hs + j]);
            cell[j] = f_g * cell[j] + i_g * g_g;
            h[j] = o_g * cell[j].tanh();
        }
        let logits = affine(&h, &model.head.w, &model.head.b);
        // flow on the target
        let mut z = seq[t + 1].clone();
        for layer in &model.flow.layers {
            let pass: Vec<f64> = (0..d).filter(|&i| layer.mask[i]).map(|i| z[i]).collect();
            let hidden_s: Vec<f64> = affine(&pass, &layer.s_net.w1, &layer.s_net.b1).iter().map(|v| v.tanh()).collect();
            let s: Vec<f64> = affine(&hidden_s, &layer.s_net.w2, &layer.s_net.b2)
                .iter()
                .map(|v| layer.s_clamp * v.tanh())
                .collect();
            let hidden_t: Vec<f64> = affine(&pass, &layer.t_net.w1, &layer.t_net.b1).iter().map(|v| v.tanh()).collect();
            let shift = affine(&hidden_t, &layer.t_net.w2, &layer.t_net.b2);
            let mut j = 0;
            for i in 0..d {
                if !layer.mask[i] {
                    z[i] = z[i] * s[j].exp() + shift[j];
                    ld_sum += s[j];
                    j += 1;
                }
            }
        }
        // diagonal mixture density, summed in linear space
        let amax = logits[..k].iter().cloned().fold(f64::MIN, f64::max);
        let denom: f64 = logits[..k].iter().map(|a| (a - amax).exp()).sum();
        let mut dens = 0.0;
        for comp in 0..k {
            let alpha = (logits[comp] - amax).exp() / denom;
            let mut p = alpha;
            for i in 0..d {
                let mu = logits[k + comp * d + i];
                let sigma = logits[k + k * d + comp * d + i].exp();
                let u = (z[i] - mu) / sigma;
                p *= (-0.5 * u * u).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt());
            }
            dens += p;
        }
        mix_sum -= dens.ln();
    }
    let n = (seq.len() - 1) as f64;
    (mix_sum / n, -ld_sum / n)
}

#[test]
fn nll_matches_scripted_recomputation() {
    for seed in 0..4 {
        let model = jitter(&FrmdnModel::new(config(2, 2, 3, HeadStructure::Diagonal, true), seed).unwrap(), 0.4, seed);
        let batch = random_batch(1, 3, 2, seed);
        let seq: Vec<Vec<f64>> = (0..3).map(|t| batch.obs(0, t).to_vec()).collect();
        let (mix, ld) = scripted_nll(&model, &seq);
        let nll = model.sequence_nll(&batch).unwrap();
        assert!((nll.mixture - mix).abs() < 1e-10, "{} vs {mix}", nll.mixture);
        assert!((nll.logdet - ld).abs() < 1e-10);
        assert!((nll.total - (mix + ld)).abs() < 1e-10);
    }
}

#[test]
fn total_is_exactly_mixture_plus_logdet() {
    let model = jitter(&FrmdnModel::new(config(3, 2, 5, HeadStructure::Tied, true), 3).unwrap(), 0.3, 3);
    let nll = model.sequence_nll(&random_batch(4, 6, 3, 3)).unwrap();
    assert_eq!(nll.total, nll.mixture + nll.logdet);
    assert!(nll.logdet != 0.0);
}

#[test]
fn full_model_gradients_match_finite_differences() {
    for structure in [HeadStructure::Diagonal, HeadStructure::Tied, HeadStructure::Logistic] {
        let mut cfg = config(3, 2, 8, structure, true);
        cfg.flow_depth = 2;
        let model = jitter(&FrmdnModel::new(cfg, 7).unwrap(), 0.2, 7);
        let batch = random_batch(2, 4, 3, 7);
        let err = model.gradient_check(&batch, 1e-6).unwrap();
        assert!(err < 1e-4, "{structure}: {err}");
    }
}

#[test]
fn actions_feed_the_backbone() {
    let mut cfg = config(2, 2, 4, HeadStructure::Diagonal, true);
    cfg.d_action = 1;
    let model = jitter(&FrmdnModel::new(cfg, 2).unwrap(), 0.2, 2);
    let obs = random_batch(1, 5, 2, 2).observations().to_vec();
    let a1 = SequenceBatch::new(1, 5, 2, obs.clone(), Some((1, vec![0.0; 5])), "").unwrap();
    let a2 = SequenceBatch::new(1, 5, 2, obs, Some((1, vec![1.0; 5])), "").unwrap();
    assert_ne!(model.sequence_nll(&a1).unwrap(), model.sequence_nll(&a2).unwrap());
    assert!(model.sequence_nll(&random_batch(1, 5, 2, 2)).is_err());
    assert!(model.gradient_check(&a2, 1e-6).unwrap() < 1e-4);
}

#[test]
fn short_or_mismatched_batches_are_rejected() {
    let model = FrmdnModel::new(config(2, 1, 3, HeadStructure::Diagonal, true), 0).unwrap();
    assert!(matches!(model.sequence_nll(&random_batch(1, 1, 2, 0)), Err(Error::SequenceTooShort(1))));
    assert!(matches!(model.sequence_nll(&random_batch(1, 4, 3, 0)), Err(Error::Dimension { .. })));
}

#[test]
fn non_finite_loss_is_an_error_and_model_is_unchanged() {
    let mut model = FrmdnModel::new(config(2, 1, 3, HeadStructure::Diagonal, false), 0).unwrap();
    let batch = SequenceBatch::new(1, 3, 2, vec![0.0, 0.0, 1e200, -1e200, 0.0, 0.0], None, "").unwrap();
    let before = model.clone();
    let mut opt = adam(&model, 1e-3);
    let opt_before = opt.clone();
    assert!(matches!(train_step(&mut model, &batch, &mut opt), Err(Error::NonFinite { .. })));
    assert_eq!(model, before);
    assert_eq!(opt, opt_before);
}

#[test]
fn zero_learning_rate_leaves_model_bit_identical() {
    let mut model = FrmdnModel::new(config(3, 2, 5, HeadStructure::Tied, true), 1).unwrap();
    let before = model.clone();
    let mut opt = adam(&model, 0.0);
    let batch = random_batch(2, 5, 3, 1);
    for _ in 0..3 {
        train_step(&mut model, &batch, &mut opt).unwrap();
    }
    assert_eq!(model, before);
}

#[test]
fn overfitting_one_batch_drops_two_nats() {
    let data = gen_correlated_ar(4, 33, 4, 0.9, 0.5, 3).unwrap();
    let mut model = FrmdnModel::new(config(4, 2, 16, HeadStructure::Diagonal, true), 3).unwrap();
    let mut opt = adam(&model, 1e-3);
    let initial = model.sequence_nll(&data).unwrap().total;
    for _ in 0..200 {
        train_step(&mut model, &data, &mut opt).unwrap();
    }
    let last = model.sequence_nll(&data).unwrap().total;
    assert!(initial - last >= 2.0, "{initial} -> {last}");
}

#[test]
fn training_is_deterministic() {
    let data = gen_correlated_ar(6, 40, 3, 0.8, 0.5, 4).unwrap();
    let run = || {
        let mut model = FrmdnModel::new(config(3, 2, 6, HeadStructure::Diagonal, true), 4).unwrap();
        let mut opt = adam(&model, 1e-2);
        let opts = TrainOptions {
            batch_size: 4,
            window: 10,
            seed: 4,
        };
        let losses: Vec<f64> = (0..3).map(|e| train_epoch(&mut model, &data, &mut opt, &opts, e).unwrap().total).collect();
        (losses, model)
    };
    let (a, ma) = run();
    let (b, mb) = run();
    assert_eq!(a, b);
    assert_eq!(ma, mb);
}

#[test]
fn checkpoint_round_trip_gives_identical_evaluation() {
    let data = gen_correlated_ar(3, 20, 3, 0.8, 0.5, 6).unwrap();
    for structure in [HeadStructure::Diagonal, HeadStructure::Tied, HeadStructure::Logistic] {
        let model = jitter(&FrmdnModel::new(config(3, 2, 5, structure, true), 6).unwrap(), 0.3, 6);
        let ckpt = Checkpoint {
            model: model.clone(),
            optimizer: None,
            epochs_done: 0,
        };
        let mut buf = Vec::new();
        save_checkpoint(&mut buf, &ckpt).unwrap();
        let back = load_checkpoint(&buf[..]).unwrap();
        let a = model.sequence_nll(&data).unwrap();
        let b = back.model.sequence_nll(&data).unwrap();
        assert_eq!(a.total.to_bits(), b.total.to_bits());
        assert_eq!(a.mixture.to_bits(), b.mixture.to_bits());
    }
}

#[test]
fn resumed_training_continues_bit_identically() {
    let data = gen_correlated_ar(4, 30, 3, 0.8, 0.5, 8).unwrap();
    let opts = TrainOptions {
        batch_size: 3,
        window: 8,
        seed: 8,
    };
    let fresh = || {
        let model = FrmdnModel::new(config(3, 2, 6, HeadStructure::Tied, true), 8).unwrap();
        let opt = adam(&model, 5e-3);
        (model, opt)
    };
    let (mut straight, mut opt) = fresh();
    for e in 0..4 {
        train_epoch(&mut straight, &data, &mut opt, &opts, e).unwrap();
    }
    let (mut half, mut opt2) = fresh();
    for e in 0..2 {
        train_epoch(&mut half, &data, &mut opt2, &opts, e).unwrap();
    }
    let mut buf = Vec::new();
    save_checkpoint(
        &mut buf,
        &Checkpoint {
            model: half,
            optimizer: Some(opt2),
            epochs_done: 2,
        },
    )
    .unwrap();
    let ckpt = load_checkpoint(&buf[..]).unwrap();
    let (mut resumed, mut opt3) = (ckpt.model, ckpt.optimizer.unwrap());
    for e in ckpt.epochs_done..4 {
        train_epoch(&mut resumed, &data, &mut opt3, &opts, e).unwrap();
    }
    assert_eq!(resumed, straight);
    assert_eq!(opt3, opt);
}

#[test]
fn generation_without_flow_is_a_raw_mixture_sample() {
    let model = jitter(&FrmdnModel::new(config(2, 3, 4, HeadStructure::Diagonal, false), 9).unwrap(), 0.3, 9);
    let x = [0.3, -0.2];
    let state = RecurrentState::zeros(1, 4);
    let (y, _) = generate_step(&model, &x, &state, &mut stream_rng(9, 0)).unwrap();
    let (h, _) = lstm_step(&Tensor::row(&x), &state, &model.lstm).unwrap();
    let params = head_project(h.data(), &model.head).unwrap();
    assert_eq!(y, mixture_sample(&params, &model.shared, &mut stream_rng(9, 0)));
}

#[test]
fn near_deterministic_head_generates_its_mean() {
    let d = 2;
    let mut model = FrmdnModel::new(config(d, 2, 3, HeadStructure::Diagonal, true), 10).unwrap();
    model.head.w = Tensor::zeros(&[3, 2 + 4 * d]);
    let mut b = vec![0.0; 2 + 4 * d];
    b[0] = 100.0;
    b[2] = 1.25;
    b[3] = -0.75;
    b[2 + 2 * d..].fill(-100.0);
    model.head.b = Tensor::matrix(1, 2 + 4 * d, b);
    let mut rng = stream_rng(10, 0);
    for _ in 0..100 {
        let (y, _) = generate_step(&model, &[0.0, 0.0], &RecurrentState::zeros(1, 3), &mut rng).unwrap();
        assert!((y[0] - 1.25).abs() < 1e-4 && (y[1] + 0.75).abs() < 1e-4);
    }
}

#[test]
fn generated_sample_is_inverse_flow_of_latent() {
    let model = jitter(&FrmdnModel::new(config(3, 2, 4, HeadStructure::Tied, true), 11).unwrap(), 0.3, 11);
    let x = [0.1, 0.2, -0.4];
    let state = RecurrentState::zeros(1, 4);
    let (y, next) = generate_step(&model, &x, &state, &mut stream_rng(11, 0)).unwrap();
    let (h, _) = lstm_step(&Tensor::row(&x), &state, &model.lstm).unwrap();
    assert_eq!(next.h, h);
    let params = head_project(h.data(), &model.head).unwrap();
    let z = mixture_sample(&params, &model.shared, &mut stream_rng(11, 0));
    let (zy, _) = frmdn_core::flow::flow_forward(&Tensor::row(&y), &model.flow).unwrap();
    for (a, b) in zy.data().iter().zip(&z) {
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn rollouts_are_reproducible_and_stable() {
    let model = FrmdnModel::new(config(2, 2, 8, HeadStructure::Diagonal, true), 12).unwrap();
    let one = rollout(&model, &[0.0, 1.0], |_, _, _| Vec::new(), 1, &mut stream_rng(12, 0)).unwrap();
    assert_eq!(one.steps(), 2);
    let (y1, _) = generate_step(&model, &[0.0, 1.0], &RecurrentState::zeros(1, 8), &mut stream_rng(12, 0)).unwrap();
    assert_eq!(one.obs(0, 1), &y1[..]);

    let a = rollout(&model, &[0.0, 0.0], |_, _, _| Vec::new(), 1000, &mut stream_rng(13, 0)).unwrap();
    let b = rollout(&model, &[0.0, 0.0], |_, _, _| Vec::new(), 1000, &mut stream_rng(13, 0)).unwrap();
    assert_eq!(a, b);
    assert!(a.observations().iter().all(|v| v.is_finite()));
}

#[test]
fn rollout_records_actions() {
    let mut cfg = config(2, 1, 4, HeadStructure::Diagonal, true);
    cfg.d_action = 1;
    let model = FrmdnModel::new(cfg, 14).unwrap();
    let r = rollout(&model, &[0.0, 0.0], |_, h, t| vec![h.len() as f64 + t as f64], 3, &mut stream_rng(14, 0)).unwrap();
    assert_eq!(r.actions().unwrap(), &[4.0, 5.0, 6.0, 0.0]);
    assert!(rollout(&model, &[0.0, 0.0], |_, _, _| vec![], 3, &mut stream_rng(14, 0)).is_err());
}

#[test]
fn trained_model_reaches_entropy_rate_and_generator_autocorrelation() {
    let rho = 0.7;
    let train = gen_correlated_ar(50, 1000, 2, rho, 0.0, 15).unwrap();
    let test = gen_correlated_ar(10, 1000, 2, rho, 0.0, 16).unwrap();
    let mut model = FrmdnModel::new(config(2, 1, 16, HeadStructure::Diagonal, false), 15).unwrap();
    let mut opt = adam(&model, 1e-2);
    let opts = TrainOptions {
        batch_size: 64,
        window: 32,
        seed: 15,
    };
    for e in 0..4 {
        train_epoch(&mut model, &train, &mut opt, &opts, e).unwrap();
    }
    let floor = ar_entropy_rate(2, 0.0).value;
    let nll = model.sequence_nll(&test).unwrap().total;
    assert!(nll - floor < 0.2 && nll > floor - 0.1, "test NLL {nll}, floor {floor}");

    let r = rollout(&model, &[0.0, 0.0], |_, _, _| Vec::new(), 5000, &mut stream_rng(15, 1)).unwrap();
    for dim in 0..2 {
        let xs: Vec<f64> = (0..r.steps()).map(|t| r.obs(0, t)[dim]).collect();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let lag = xs.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum::<f64>() / (n - 1.0) / var;
        assert!((lag - rho).abs() < 0.1, "dim {dim}: lag-1 autocorrelation {lag}");
    }
}

#[test]
fn chunked_evaluation_matches_whole_batch() {
    let model = jitter(&FrmdnModel::new(config(3, 2, 5, HeadStructure::Logistic, true), 17).unwrap(), 0.3, 17);
    let data = random_batch(7, 6, 3, 17);
    let whole = model.sequence_nll(&data).unwrap();
    for chunk in [1, 3, 7, 50] {
        let r = model.evaluate(&data, chunk).unwrap();
        assert!((r.total - whole.total).abs() < 1e-12);
        assert!((r.mixture - whole.mixture).abs() < 1e-12);
    }
    assert!(model.evaluate(&data, 0).is_err());
}
