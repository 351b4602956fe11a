use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::process::ExitCode;

use anyhow::{Context, Result};
use frmdn_core::control::{
    dream_search, fit_world_model, moving_average, origin_reward, tracking_reward, DreamEnv, WorldModelSpec,
};
use frmdn_core::data::{
    gen_control_task, gen_correlated_ar, gen_switching_modes, read_fseq_file, write_csv, write_fseq_file, SequenceBatch,
};
use frmdn_core::diffcore::Tensor;
use frmdn_core::distributions::{param_count, CovarianceKind};
use frmdn_core::model::{
    load_checkpoint_file, rollout, save_checkpoint_file, train_epoch, Checkpoint, FrmdnModel, ModelConfig, NllReport,
    Optimizer,
};
use frmdn_core::rng::stream_rng;
use rand::Rng;

use crate::config::RunConfig;
use crate::{invalid, DreamArgs, EvalArgs, GenArgs, GradcheckArgs, ParamcountArgs, SampleArgs, TrainArgs};

const EVAL_CHUNK: usize = 16;

fn read_data(path: &Path) -> Result<SequenceBatch> {
    read_fseq_file(path).with_context(|| format!("reading dataset {}", path.display()))
}

fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    load_checkpoint_file(path).with_context(|| format!("reading checkpoint {}", path.display()))
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("cannot create {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn parse_vector(text: &str, d: usize, what: &str) -> Result<Vec<f64>> {
    let v: Vec<f64> = text
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| invalid(format!("{what} must be comma-separated numbers")))?;
    if v.len() != d || v.iter().any(|x| !x.is_finite()) {
        return Err(invalid(format!("{what} needs {d} finite values, got '{text}'")));
    }
    Ok(v)
}

fn check_data(model: &ModelConfig, data: &SequenceBatch, name: &str) -> Result<()> {
    if data.dim() != model.d || data.action_dim() != model.d_action {
        return Err(invalid(format!(
            "{name} has d={} d_action={}, model expects d={} d_action={}",
            data.dim(),
            data.action_dim(),
            model.d,
            model.d_action
        )));
    }
    if data.steps() < 2 {
        return Err(invalid(format!("{name} sequences need at least 2 steps")));
    }
    Ok(())
}

pub fn gen(a: GenArgs) -> Result<ExitCode> {
    if a.q == 0 || a.t == 0 || a.d == 0 {
        return Err(invalid("q, t and d must be positive"));
    }
    let batch = match a.kind.as_str() {
        "ar" => gen_correlated_ar(a.q, a.t, a.d, a.rho, a.corr, a.seed)?,
        "switching" => gen_switching_modes(a.q, a.t, a.d, a.modes, a.seed)?,
        "control" => gen_control_task(a.q, a.t, a.d, a.d_action, a.seed)?,
        other => return Err(invalid(format!("unknown kind '{other}' (ar, switching, control)"))),
    };
    write_fseq_file(&a.out, &batch).with_context(|| format!("writing {}", a.out.display()))?;
    if let Some(csv) = &a.csv {
        let mut w = output(Some(csv))?;
        write_csv(&mut w, &batch)?;
        w.flush()?;
    }
    eprintln!(
        "wrote {} ({} x {} x {}, d_action {})",
        a.out.display(),
        batch.sequences(),
        batch.steps(),
        batch.dim(),
        batch.action_dim()
    );
    Ok(ExitCode::SUCCESS)
}

fn resolve_train_config(a: &TrainArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &a.config {
        cfg.load_file(path)?;
    }
    for (k, v) in a.model.pairs() {
        cfg.set(k, &v)?;
    }
    let path = |p: &Option<std::path::PathBuf>| p.as_ref().map(|p| p.display().to_string());
    let flags = [
        ("optimizer", a.optimizer.clone()),
        ("lr", a.lr.map(|v| v.to_string())),
        ("clip_norm", a.clip_norm.map(|v| v.to_string())),
        ("batch_size", a.batch_size.map(|v| v.to_string())),
        ("window", a.window.map(|v| v.to_string())),
        ("epochs", a.epochs.map(|v| v.to_string())),
        ("seed", a.seed.map(|v| v.to_string())),
        ("data", path(&a.data)),
        ("test", path(&a.test)),
        ("out", path(&a.out)),
        ("metrics", path(&a.metrics)),
        ("resume", path(&a.resume)),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            cfg.set(k, &v)?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_row(w: &mut dyn Write, epoch: usize, split: &str, r: &NllReport) -> io::Result<()> {
    writeln!(w, "{epoch},{split},{},{},{}", r.total, r.mixture, r.logdet)
}

pub fn train(a: TrainArgs) -> Result<ExitCode> {
    let mut cfg = resolve_train_config(&a)?;
    let (mut model, mut opt, start) = match &cfg.resume {
        Some(path) => {
            let ckpt = read_checkpoint(path)?;
            let mut expect = ckpt.model.config.clone();
            for (k, v) in &cfg.model_overrides {
                expect.set(k, v)?;
            }
            if expect != ckpt.model.config {
                return Err(invalid("model settings disagree with the resumed checkpoint"));
            }
            let opt = match ckpt.optimizer {
                Some(o) => o,
                None => new_optimizer(&ckpt.model, &cfg)?,
            };
            (ckpt.model, opt, ckpt.epochs_done)
        }
        None => {
            let model = FrmdnModel::new(cfg.model.clone(), cfg.seed)?;
            let opt = new_optimizer(&model, &cfg)?;
            (model, opt, 0)
        }
    };
    cfg.model = model.config.clone();
    cfg.optimizer = opt.config;

    let train = read_data(cfg.data.as_ref().expect("validated"))?;
    check_data(&cfg.model, &train, "training data")?;
    let test = match &cfg.test {
        Some(p) => {
            let t = read_data(p)?;
            check_data(&cfg.model, &t, "test data")?;
            Some(t)
        }
        None => None,
    };

    let mut log = output(cfg.metrics.as_deref())?;
    for (k, v) in cfg.pairs() {
        writeln!(log, "# {k}={v}")?;
    }
    writeln!(log, "epoch,split,nll_total,nll_mixture,nll_logdet")?;
    let evaluate = |m: &FrmdnModel, log: &mut dyn Write, epoch: usize| -> Result<()> {
        write_row(log, epoch, "train", &m.evaluate(&train, EVAL_CHUNK)?)?;
        if let Some(t) = &test {
            write_row(log, epoch, "test", &m.evaluate(t, EVAL_CHUNK)?)?;
        }
        log.flush()?;
        Ok(())
    };
    evaluate(&model, &mut log, start)?;
    let opts = cfg.train_options();
    for epoch in start..cfg.epochs {
        let r = train_epoch(&mut model, &train, &mut opt, &opts, epoch)?;
        eprintln!("epoch {}: running train nll {:.4}", epoch + 1, r.total);
        evaluate(&model, &mut log, epoch + 1)?;
    }
    let ckpt = Checkpoint {
        model,
        optimizer: Some(opt),
        epochs_done: cfg.epochs.max(start),
    };
    let out = cfg.out.as_ref().expect("validated");
    save_checkpoint_file(out, &ckpt).with_context(|| format!("writing {}", out.display()))?;
    Ok(ExitCode::SUCCESS)
}

fn new_optimizer(model: &FrmdnModel, cfg: &RunConfig) -> Result<Optimizer> {
    let params: Vec<Tensor> = model.named_params().into_iter().map(|(_, t)| t).collect();
    Ok(Optimizer::new(cfg.optimizer, &params)?)
}

pub fn eval(a: EvalArgs) -> Result<ExitCode> {
    let ckpt = read_checkpoint(&a.checkpoint)?;
    let data = read_data(&a.data)?;
    check_data(&ckpt.model.config, &data, "data")?;
    let r = ckpt.model.evaluate(&data, EVAL_CHUNK)?;
    println!("nll_total={}", r.total);
    println!("nll_mixture={}", r.mixture);
    println!("nll_logdet={}", r.logdet);
    println!("steps={}", data.sequences() * (data.steps() - 1));
    Ok(ExitCode::SUCCESS)
}

pub fn sample(a: SampleArgs) -> Result<ExitCode> {
    if a.steps == 0 || a.count == 0 {
        return Err(invalid("steps and count must be positive"));
    }
    let random = match a.policy.as_str() {
        "zero" => false,
        "random" => true,
        other => return Err(invalid(format!("unknown policy '{other}' (zero, random)"))),
    };
    let ckpt = read_checkpoint(&a.checkpoint)?;
    let model = ckpt.model;
    let (d, da) = (model.config.d, model.config.d_action);
    let start = match &a.start {
        Some(s) => parse_vector(s, d, "start")?,
        None => vec![0.0; d],
    };
    let mut obs = Vec::new();
    let mut act = Vec::new();
    for i in 0..a.count as u64 {
        let mut policy_rng = stream_rng(a.seed, 1_000_000 + i);
        let r = rollout(
            &model,
            &start,
            |_, _, _| {
                (0..da)
                    .map(|_| if random { policy_rng.random_range(-1.0..1.0) } else { 0.0 })
                    .collect()
            },
            a.steps,
            &mut stream_rng(a.seed, i),
        )?;
        obs.extend_from_slice(r.observations());
        if let Some(x) = r.actions() {
            act.extend_from_slice(x);
        }
    }
    let actions = (da > 0).then_some((da, act));
    let batch = SequenceBatch::new(a.count, a.steps + 1, d, obs, actions, "sample")?;
    let mut w = output(a.out.as_deref())?;
    write_csv(&mut w, &batch)?;
    w.flush()?;
    Ok(ExitCode::SUCCESS)
}

pub fn gradcheck(a: GradcheckArgs) -> Result<ExitCode> {
    let mut cfg = ModelConfig {
        d: 3,
        components: 2,
        hidden: 8,
        flow_depth: 2,
        flow_hidden: 8,
        ..ModelConfig::default()
    };
    for (k, v) in a.model.pairs() {
        cfg.set(k, &v).map_err(|e| invalid(e.to_string()))?;
    }
    cfg.validate()?;
    if a.q == 0 || a.t < 2 {
        return Err(invalid("gradcheck needs q >= 1 and t >= 2"));
    }
    if !(a.step > 0.0) {
        return Err(invalid("step must be positive"));
    }
    let base = FrmdnModel::new(cfg.clone(), a.seed)?;
    // move every parameter off its initial value so no block is degenerate
    let mut rng = stream_rng(a.seed, 77);
    let flat: Vec<f64> = base.flat_params().iter().map(|v| v + rng.random_range(-0.1..0.1)).collect();
    let model = base.with_flat_params(&flat)?;
    let mut data_rng = stream_rng(a.seed, 78);
    let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| data_rng.random_range(-1.5..1.5)).collect() };
    let obs = draw(a.q * a.t * cfg.d);
    let actions = (cfg.d_action > 0).then(|| (cfg.d_action, draw(a.q * a.t * cfg.d_action)));
    let batch = SequenceBatch::new(a.q, a.t, cfg.d, obs, actions, "gradcheck")?;
    let err = model.gradient_check(&batch, a.step)?;
    println!("params={}", model.param_count());
    println!("max_rel_error={err:e}");
    if err > 1e-3 {
        eprintln!("gradient check failed: {err:e} > 1e-3");
        return Ok(ExitCode::from(1));
    }
    Ok(ExitCode::SUCCESS)
}

pub fn paramcount(a: ParamcountArgs) -> Result<ExitCode> {
    if a.k == 0 || a.d == 0 {
        return Err(invalid("k and d must be positive"));
    }
    let kind: CovarianceKind = a.structure.parse()?;
    let r = param_count(a.k, a.d, kind);
    println!("structure,k,d,alpha,mu,sigma,total");
    println!("{},{},{},{},{},{},{}", a.structure, a.k, a.d, r.alpha_count, r.mu_count, r.sigma_count, r.total);
    Ok(ExitCode::SUCCESS)
}

pub fn dream(a: DreamArgs) -> Result<ExitCode> {
    if a.generations == 0 || a.horizon == 0 || a.episodes == 0 {
        return Err(invalid("generations, horizon and episodes must be positive"));
    }
    if !(a.sigma > 0.0 && a.sigma.is_finite()) || a.popsize < 2 {
        return Err(invalid("sigma must be positive and popsize at least 2"));
    }
    let reward = match a.reward.as_str() {
        "origin" => origin_reward(),
        "tracking" => tracking_reward(1.5, 10.0),
        other => return Err(invalid(format!("unknown reward '{other}' (origin, tracking)"))),
    };
    let model = match &a.checkpoint {
        Some(p) => read_checkpoint(p)?.model,
        None => fit_world_model(&WorldModelSpec::default(), a.seed)?,
    };
    let (d, da) = (model.config.d, model.config.d_action);
    if da == 0 {
        return Err(invalid("dream needs a model with actions (d_action > 0)"));
    }
    let start = match &a.start {
        Some(s) => parse_vector(s, d, "start")?,
        None => (0..d).map(|i| if i % 2 == 0 { 2.0 } else { -2.0 }).collect(),
    };
    let env = DreamEnv {
        model: &model,
        reward,
        horizon: a.horizon,
        start: start.clone(),
    };
    let (log, es) = dream_search(&env, a.popsize, a.sigma, a.generations, a.episodes, a.seed)?;

    let mut w = output(a.out.as_deref())?;
    let checkpoint = a.checkpoint.as_ref().map_or(String::new(), |p| p.display().to_string());
    let start_text: Vec<String> = start.iter().map(|v| v.to_string()).collect();
    for (k, v) in [
        ("checkpoint", checkpoint),
        ("popsize", a.popsize.to_string()),
        ("sigma", a.sigma.to_string()),
        ("generations", a.generations.to_string()),
        ("seed", a.seed.to_string()),
        ("horizon", a.horizon.to_string()),
        ("episodes", a.episodes.to_string()),
        ("reward", a.reward.clone()),
        ("start", start_text.join(",")),
        ("controller_params", env.controller_params().to_string()),
    ] {
        writeln!(w, "# {k}={v}")?;
    }
    writeln!(w, "generation,mean_reward,best_reward,sigma")?;
    for g in &log {
        writeln!(w, "{},{},{},{}", g.generation, g.mean_reward, g.best_reward, g.sigma)?;
    }
    w.flush()?;
    let ma = moving_average(&log.iter().map(|g| g.mean_reward).collect::<Vec<_>>(), 5);
    if let (Some(first), Some(last)) = (ma.first(), ma.last()) {
        eprintln!("5-generation mean reward: {first:.3} -> {last:.3}");
    }
    if let Some((_, best)) = es.best() {
        eprintln!("best reward seen: {:.3}", -best);
    }
    Ok(ExitCode::SUCCESS)
}
