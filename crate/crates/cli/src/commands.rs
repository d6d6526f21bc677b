use std::path::{Path, PathBuf};

use abd_core::autodiff::Real;
use abd_core::dynamics::dyncheck;
use abd_core::envs::EnvSpec;
use abd_core::learn::metrics::write_csv;
use abd_core::learn::{
    ablation_suite, eval_retention, ppo_train, regress_dynamics, Precision, RegressConfig, TrainConfig, TrainOptions,
};
use abd_core::manifest::RunManifest;
use abd_core::morphology::load_tree;
use abd_core::nets::checkpoint::{self, CheckpointManifest};
use abd_core::nets::{flops_count, instrumented_flops, ActorKind, NetSpec, Params};
use abd_core::spatial::Vec3;
use clap::Args;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::failure::{Failure, DATA, NUMERIC, USAGE};
use crate::{Command, Ctx};

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct DyncheckArgs {
    /// Morphology file (native JSON or URDF).
    #[arg(long)]
    pub tree: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub n_random: usize,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Flags that override fields of a PPO config file.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct TrainOverrides {
    #[arg(long)]
    pub total_env_steps: Option<usize>,
    #[arg(long)]
    pub n_envs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub orth_weight: Option<f64>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub eval_interval: Option<usize>,
    #[arg(long)]
    pub eval_episodes: Option<usize>,
    #[arg(long)]
    pub target_return: Option<f64>,
    #[arg(long)]
    pub precision: Option<Precision>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct TrainPolicyArgs {
    /// Preset name or environment JSON file.
    #[arg(long)]
    pub env: String,
    /// abdnet, abdnet-noorth, gnn or mlp.
    #[arg(long, default_value = "abdnet")]
    pub actor: String,
    /// JSON config; missing fields take defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: TrainOverrides,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct TrainDynamicsArgs {
    #[arg(long)]
    pub env: String,
    #[arg(long, default_value = "abdnet")]
    pub model: String,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub dataset_steps: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub orth_weight: Option<f64>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub precision: Option<Precision>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EvalShiftArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Defaults to the environment recorded in the checkpoint.
    #[arg(long)]
    pub env: Option<String>,
    /// Comma-separated mass factors.
    #[arg(long, default_value = "1.5,2.0", value_delimiter = ',')]
    pub factors: Vec<f64>,
    #[arg(long, default_value_t = 500)]
    pub episodes: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct FlopsArgs {
    #[arg(long)]
    pub tree: PathBuf,
    #[arg(long, default_value = "abdnet")]
    pub actor: String,
    #[arg(long, default_value_t = 16)]
    pub d: usize,
    #[arg(long, default_value_t = 32)]
    pub head_hidden: usize,
    /// Defaults to two entries per degree of freedom.
    #[arg(long)]
    pub obs_dim: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct AblateArgs {
    #[arg(long)]
    pub env: String,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "0,1,2", value_delimiter = ',')]
    pub seeds: Vec<u64>,
    #[arg(long, default_value = "abdnet,abdnet-noorth,gnn,mlp", value_delimiter = ',')]
    pub variants: Vec<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: TrainOverrides,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Write to this directory instead of the recorded one.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn dispatch(cmd: Command, ctx: &Ctx) -> Result<(), Failure> {
    match &cmd {
        Command::Dyncheck(a) => run_dyncheck(&cmd, a, ctx),
        Command::TrainPolicy(a) => run_train_policy(&cmd, a, ctx),
        Command::TrainDynamics(a) => run_train_dynamics(&cmd, a, ctx),
        Command::EvalShift(a) => run_eval_shift(&cmd, a, ctx),
        Command::Flops(a) => run_flops(&cmd, a, ctx),
        Command::Ablate(a) => run_ablate(&cmd, a, ctx),
        Command::Replay(a) => run_replay(a, ctx),
    }
}

fn out_dir(flag: &Option<PathBuf>, cmd: &Command, ctx: &Ctx) -> PathBuf {
    ctx.out_override
        .clone()
        .or_else(|| flag.clone())
        .unwrap_or_else(|| Path::new("runs").join(cmd.name()))
}

fn begin(cmd: &Command, ctx: &Ctx, out: &Path, seed: u64, config: Value, hash: Option<String>) -> Result<(), Failure> {
    let mut m = RunManifest::new(cmd.name(), seed, out);
    m.args = serde_json::to_value(cmd).expect("command serializes");
    m.config = config;
    m.morphology_hash = hash;
    m.deterministic = ctx.deterministic;
    m.workers = ctx.workers;
    m.write()?;
    Ok(())
}

fn parse_kind(s: &str) -> Result<ActorKind, Failure> {
    s.parse().map_err(|e: String| Failure::new(USAGE, e))
}

fn load_env(s: &str) -> Result<EnvSpec, Failure> {
    Ok(EnvSpec::resolve(s)?)
}

fn read_config_file(path: &Option<PathBuf>) -> Result<Value, Failure> {
    match path {
        None => Ok(json!({})),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Failure::new(DATA, format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| Failure::new(DATA, format!("{}: {e}", p.display())))
        }
    }
}

fn set(obj: &mut Value, key: &str, v: Option<impl Serialize>) {
    if let Some(v) = v {
        obj[key] = serde_json::to_value(v).expect("override serializes");
    }
}

fn finish_config<C: serde::de::DeserializeOwned>(v: Value) -> Result<C, Failure> {
    serde_json::from_value(v).map_err(|e| Failure::new(USAGE, format!("invalid config: {e}")))
}

fn train_config(file: &Option<PathBuf>, o: &TrainOverrides, ctx: &Ctx) -> Result<TrainConfig, Failure> {
    if let Some(v) = &ctx.replay_config {
        return finish_config(v.clone());
    }
    let mut v = read_config_file(file)?;
    if !v.is_object() {
        return Err(Failure::new(USAGE, "config file must hold a JSON object"));
    }
    set(&mut v, "total_env_steps", o.total_env_steps);
    set(&mut v, "n_envs", o.n_envs);
    set(&mut v, "lr", o.lr);
    set(&mut v, "orth_weight", o.orth_weight);
    set(&mut v, "d", o.d);
    set(&mut v, "eval_interval", o.eval_interval);
    set(&mut v, "eval_episodes", o.eval_episodes);
    set(&mut v, "target_return", o.target_return);
    set(&mut v, "precision", o.precision);
    set(&mut v, "seed", ctx.seed);
    let cfg: TrainConfig = finish_config(v)?;
    cfg.validate()?;
    Ok(cfg)
}

fn run_dyncheck(cmd: &Command, a: &DyncheckArgs, ctx: &Ctx) -> Result<(), Failure> {
    if a.n_random == 0 {
        return Err(Failure::new(USAGE, "--n-random must be positive"));
    }
    if !(a.tol >= 0.0) {
        return Err(Failure::new(USAGE, "--tol must be non-negative"));
    }
    let tree = load_tree(&a.tree)?;
    let out = out_dir(&a.out, cmd, ctx);
    let seed = ctx.seed.unwrap_or(0);
    begin(cmd, ctx, &out, seed, Value::Null, Some(tree.content_hash()))?;
    let report = dyncheck(&tree, a.n_random, seed, Vec3::new(0.0, 0.0, -9.81))?;
    std::fs::write(out.join("dyncheck.json"), serde_json::to_string_pretty(&report).unwrap() + "\n")?;
    println!(
        "links {}  dof {}  states {}  max |ABA - oracle| {:.3e}  tol {:.1e}",
        tree.num_links(),
        tree.dof(),
        report.n_states,
        report.max_abs_dev,
        a.tol
    );
    println!("worst case: q {:?} qd {:?} tau {:?}", report.worst_q, report.worst_qd, report.worst_tau);
    if report.max_abs_dev <= a.tol {
        println!("PASS");
        Ok(())
    } else {
        Err(Failure::new(NUMERIC, format!("deviation {:.3e} exceeds tolerance {:.1e}", report.max_abs_dev, a.tol)))
    }
}

fn run_train_policy(cmd: &Command, a: &TrainPolicyArgs, ctx: &Ctx) -> Result<(), Failure> {
    let kind = parse_kind(&a.actor)?;
    let cfg = train_config(&a.config, &a.overrides, ctx)?;
    let env = load_env(&a.env)?;
    let out = out_dir(&a.out, cmd, ctx);
    begin(cmd, ctx, &out, cfg.seed, serde_json::to_value(&cfg).unwrap(), Some(env.tree.content_hash()))?;
    let verbose = |r: &abd_core::learn::metrics::MetricsRow| {
        println!("iter {:4}  steps {:8}  return {:9.3}  orth {:.4}", r.iter, r.env_steps, r.mean_return, r.orth_loss);
    };
    let opts = TrainOptions {
        out_dir: Some(&out),
        deterministic: ctx.deterministic,
        on_iteration: Some(&verbose),
    };
    let (best, last, random, steps) = match cfg.precision {
        Precision::F32 => {
            let o = ppo_train::<f32>(kind, &env, &cfg, &opts)?;
            (o.best_eval, o.final_eval, o.random_return, o.env_steps)
        }
        Precision::F64 => {
            let o = ppo_train::<f64>(kind, &env, &cfg, &opts)?;
            (o.best_eval, o.final_eval, o.random_return, o.env_steps)
        }
    };
    let summary = json!({
        "actor": kind,
        "env": env.name(),
        "env_steps": steps,
        "best_eval_return": best,
        "final_eval_return": last,
        "random_return": random,
    });
    std::fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary).unwrap() + "\n")?;
    println!("final eval {last:.3}  best {best:.3}  random {random:.3}  -> {}", out.display());
    Ok(())
}

fn run_train_dynamics(cmd: &Command, a: &TrainDynamicsArgs, ctx: &Ctx) -> Result<(), Failure> {
    let kind = parse_kind(&a.model)?;
    let cfg: RegressConfig = match &ctx.replay_config {
        Some(v) => finish_config(v.clone())?,
        None => {
            let mut v = read_config_file(&a.config)?;
            if !v.is_object() {
                return Err(Failure::new(USAGE, "config file must hold a JSON object"));
            }
            set(&mut v, "dataset_steps", a.dataset_steps);
            set(&mut v, "epochs", a.epochs);
            set(&mut v, "orth_weight", a.orth_weight);
            set(&mut v, "d", a.d);
            set(&mut v, "precision", a.precision);
            set(&mut v, "seed", ctx.seed);
            finish_config(v)?
        }
    };
    cfg.validate()?;
    let env = load_env(&a.env)?;
    let out = out_dir(&a.out, cmd, ctx);
    begin(cmd, ctx, &out, cfg.seed, serde_json::to_value(&cfg).unwrap(), Some(env.tree.content_hash()))?;
    fn go<T: Real>(kind: ActorKind, env: &EnvSpec, cfg: &RegressConfig, out: &Path) -> Result<Value, Failure> {
        let o = regress_dynamics::<T>(kind, env, cfg)?;
        write_csv(&out.join("epochs.csv"), &o.epochs)?;
        write_csv(&out.join("rollout.csv"), &o.rollout)?;
        let mut m = CheckpointManifest::new::<T>(&o.model.spec, &env.tree, None, Some(env.name().to_string()));
        m.meta = json!({ "dynamics_model": o.model });
        checkpoint::save(&out.join("model.bin"), &m, &o.params)?;
        for e in &o.epochs {
            println!("epoch {:3}  train {:.6}  val {:.6}", e.epoch, e.train_loss, e.val_mse);
        }
        Ok(json!({
            "model": kind,
            "val_mse": o.val_mse,
            "rollout": o.rollout,
            "param_count": o.param_count,
            "n_train": o.n_train,
            "n_val": o.n_val,
        }))
    }
    let summary = match cfg.precision {
        Precision::F32 => go::<f32>(kind, &env, &cfg, &out)?,
        Precision::F64 => go::<f64>(kind, &env, &cfg, &out)?,
    };
    std::fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary).unwrap() + "\n")?;
    println!("final val MSE {:.6e}", summary["val_mse"].as_f64().unwrap_or(f64::NAN));
    Ok(())
}

fn run_eval_shift(cmd: &Command, a: &EvalShiftArgs, ctx: &Ctx) -> Result<(), Failure> {
    if a.episodes == 0 {
        return Err(Failure::new(USAGE, "--episodes must be positive"));
    }
    if a.factors.is_empty() || a.factors.iter().any(|f| !(*f > 0.0)) {
        return Err(Failure::new(USAGE, "--factors must be positive numbers"));
    }
    let (manifest, params) = checkpoint::load::<f64>(&a.ckpt)?;
    let env_name = a
        .env
        .clone()
        .or_else(|| manifest.env.clone())
        .ok_or_else(|| Failure::new(USAGE, "checkpoint records no environment; pass --env"))?;
    let env = load_env(&env_name)?;
    manifest.check_tree(&env.tree)?;
    let out = out_dir(&a.out, cmd, ctx);
    let seed = ctx.seed.unwrap_or(0);
    begin(cmd, ctx, &out, seed, Value::Null, Some(env.tree.content_hash()))?;
    let report = if manifest.precision == "f32" {
        let p: Params<f32> = params.cast();
        eval_retention(&manifest, &p, &env, &a.factors, a.episodes, seed)?
    } else {
        eval_retention(&manifest, &params, &env, &a.factors, a.episodes, seed)?
    };
    write_csv(&out.join("retention.csv"), &report.rows)?;
    std::fs::write(out.join("retention.json"), serde_json::to_string_pretty(&report).unwrap() + "\n")?;
    println!(
        "{} ({}) link {}  nominal {:.3} [{:.3}, {:.3}]  random {:.3}{}",
        report.env,
        manifest.kind,
        report.link,
        report.nominal.mean,
        report.nominal.ci_low,
        report.nominal.ci_high,
        report.random_return,
        if report.non_converged { "  N/C" } else { "" }
    );
    for r in &report.rows {
        println!(
            "factor {:.2}: return {:.3}  retention {:.1}% [{:.1}, {:.1}]",
            r.factor, r.mean_return, r.retention_pct, r.retention_ci_low, r.retention_ci_high
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct FlopsRow {
    stage: &'static str,
    analytic: u64,
    instrumented: u64,
}

fn run_flops(cmd: &Command, a: &FlopsArgs, ctx: &Ctx) -> Result<(), Failure> {
    let kind = parse_kind(&a.actor)?;
    if a.d == 0 || a.head_hidden == 0 {
        return Err(Failure::new(USAGE, "--d and --head-hidden must be positive"));
    }
    let tree = load_tree(&a.tree)?;
    let obs_dim = a.obs_dim.unwrap_or(2 * tree.dof()).max(1);
    let spec = NetSpec::policy(kind, &tree, obs_dim, a.d, a.head_hidden);
    spec.validate(&tree)?;
    let out = out_dir(&a.out, cmd, ctx);
    begin(cmd, ctx, &out, ctx.seed.unwrap_or(0), Value::Null, Some(tree.content_hash()))?;
    let an = flops_count(&spec, &tree);
    let ins = instrumented_flops(&spec, &tree)?;
    let rows = [
        ("encode", an.encode, ins.encode),
        ("node", an.node, ins.node),
        ("message", an.message, ins.message),
        ("rounds", an.rounds, ins.rounds),
        ("decode", an.decode, ins.decode),
        ("mlp", an.mlp, ins.mlp),
        ("total", an.total, ins.total),
    ]
    .map(|(stage, analytic, instrumented)| FlopsRow {
        stage,
        analytic,
        instrumented,
    });
    write_csv(&out.join("flops.csv"), &rows)?;
    println!("{kind} on {} links, d={}, obs_dim={obs_dim}", tree.num_links(), a.d);
    for r in &rows {
        println!("{:8} {:>12} {:>12}", r.stage, r.analytic, r.instrumented);
    }
    println!("params {}", spec.param_count(&tree));
    if an != ins {
        return Err(Failure::new(NUMERIC, "analytic and instrumented counts differ"));
    }
    Ok(())
}

fn run_ablate(cmd: &Command, a: &AblateArgs, ctx: &Ctx) -> Result<(), Failure> {
    let variants = a.variants.iter().map(|s| parse_kind(s)).collect::<Result<Vec<_>, _>>()?;
    if variants.is_empty() || a.seeds.is_empty() {
        return Err(Failure::new(USAGE, "need at least one variant and one seed"));
    }
    let cfg = train_config(&a.config, &a.overrides, ctx)?;
    let env = load_env(&a.env)?;
    let out = out_dir(&a.out, cmd, ctx);
    begin(cmd, ctx, &out, cfg.seed, serde_json::to_value(&cfg).unwrap(), Some(env.tree.content_hash()))?;
    let rows = ablation_suite(&env, &cfg, &variants, &a.seeds, Some(&out), ctx.deterministic)?;
    write_csv(&out.join("ablation.csv"), &rows)?;
    for r in rows.iter().filter(|r| r.metric == "final_eval_return") {
        println!("{:14} seed {:3}  final eval {:.3}", r.variant, r.seed, r.value);
    }
    Ok(())
}

fn run_replay(a: &ReplayArgs, ctx: &Ctx) -> Result<(), Failure> {
    let m = RunManifest::read(&a.manifest)?;
    let cmd: Command =
        serde_json::from_value(m.args.clone()).map_err(|e| Failure::new(DATA, format!("manifest args: {e}")))?;
    if matches!(cmd, Command::Replay(_)) {
        return Err(Failure::new(DATA, "manifest records a replay"));
    }
    let replay = Ctx {
        seed: Some(m.seed),
        workers: ctx.workers,
        deterministic: ctx.deterministic || m.deterministic,
        replay_config: (!m.config.is_null()).then(|| m.config.clone()),
        out_override: Some(a.out.clone().unwrap_or(m.out_dir.clone())),
    };
    dispatch(cmd, &replay)
}
