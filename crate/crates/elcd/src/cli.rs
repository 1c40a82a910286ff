//! Command-line front end: dataset generation, trajectory stacking, training,
//! rollouts, DTWD evaluation, contraction verification, and SVG field plots.
//!
//! Every command prints a `resolved-config:` line — a single JSON object with
//! all defaults and the seed filled in — before doing any work, so any run
//! can be reproduced from its log alone. Seeds resolve as: `--seed` flag,
//! else the `ELCD_SEED` environment variable, else 0.
//!
//! Exit codes: 0 success, 1 usage error (bad flags, unreadable files,
//! malformed configs), 2 numerical failure (divergence, singularity,
//! non-finite loss), 3 verification failure.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::data::pendulum::{gen_pendulum, PendulumConfig};
use crate::data::rosenbrock::{gen_rosenbrock, RosenbrockConfig};
use crate::data::toy::{gen_toy_linear_with, ToyLinearConfig};
use crate::data::{Dataset, Standardization};
use crate::eval::eval_model;
use crate::linalg::symmetric_eigenvalue_max;
use crate::model::{ComposedModel, LatentField, ModelConfig, ModelKind};
use crate::plot::{render_svg, FieldPlot, PlotOptions};
use crate::rollout::{integrate, IntegratorConfig, Scheme};
use crate::train::{prepare_model_for, train, velocity_mse, TrainConfig};
use crate::verify::{
    contraction_check, converse_metric, equilibrium_bound_check, metric_residual,
    CheckOutcome, ConverseMetricConfig, VerifyReport,
};
use crate::{Error, Result, Tensor};

pub const EXIT_OK: u8 = 0;
pub const EXIT_USAGE: u8 = 1;
pub const EXIT_NUMERICAL: u8 = 2;
pub const EXIT_VERIFICATION: u8 = 3;

// ── argument grammar ────────────────────────────────────────────────────────

#[derive(Parser, Debug)]
#[command(
    name = "elcd",
    version,
    about = "Learn globally contracting dynamical systems from demonstrations"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Generate a demonstration dataset (CSV + .meta.json sidecar).
    GenData(GenDataArgs),
    /// Stack the trajectories of several 2D CSV files into one
    /// higher-dimensional dataset.
    Compose(ComposeArgs),
    /// Train a model on a trajectory CSV and write a checkpoint.
    Train(TrainArgs),
    /// Integrate a checkpointed model and write the trajectory CSV.
    Rollout(RolloutArgs),
    /// Score a checkpointed model against demonstrations (DTWD table row).
    Eval(EvalArgs),
    /// Run the contraction verification suite on a checkpoint.
    Verify(VerifyArgs),
    /// Render demonstrations, model rollouts, and a field quiver to SVG.
    Plot(PlotArgs),
}

#[derive(Args, Debug, Serialize)]
pub struct GenDataArgs {
    #[command(subcommand)]
    #[serde(flatten)]
    pub kind: GenKind,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GenKind {
    /// Damped n-link pendulum released from random configurations.
    Pendulum(PendulumArgs),
    /// Riemannian gradient flow of a generalized Rosenbrock function.
    Rosenbrock(RosenbrockArgs),
    /// The closed-form 2D linear system demonstrated from (0, ±2).
    ToyLinear(ToyLinearArgs),
}

#[derive(Args, Debug, Serialize)]
pub struct PendulumArgs {
    /// Number of links (state dimension is twice this).
    #[arg(long, default_value_t = 2)]
    pub links: usize,
    /// Number of trajectories.
    #[arg(long, default_value_t = 6)]
    pub trajs: usize,
    /// Viscous joint damping.
    #[arg(long)]
    pub damping: Option<f64>,
    /// Integration step.
    #[arg(long)]
    pub dt: Option<f64>,
    /// Simulated duration per trajectory.
    #[arg(long)]
    pub horizon: Option<f64>,
    /// Output CSV path (default `pendulum.csv`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug, Serialize)]
pub struct RosenbrockArgs {
    /// State dimension (>= 2).
    #[arg(long, default_value_t = 8)]
    pub dim: usize,
    /// Number of trajectories.
    #[arg(long, default_value_t = 4)]
    pub trajs: usize,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub horizon: Option<f64>,
    /// Output CSV path (default `rosenbrock.csv`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug, Serialize)]
pub struct ToyLinearArgs {
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub horizon: Option<f64>,
    /// Output CSV path (default `toy-linear.csv`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Accepted for interface uniformity; the dataset is deterministic.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug, Serialize)]
pub struct ComposeArgs {
    /// Two or more trajectory CSV files with equal trajectory counts.
    #[arg(long, num_args = 2.., required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct TrainArgs {
    /// Training trajectory CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// Model kind: elcd, ncds, sdd, or eflow.
    #[arg(long, default_value = "elcd", value_parser = parse_model_kind)]
    pub model: ModelKind,
    /// Contraction rate of the latent dynamics (elcd).
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 100)]
    pub batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Checkpoint output path.
    #[arg(long)]
    pub out: PathBuf,
    /// Coupling blocks in the diffeomorphism (0 = one affine layer only).
    #[arg(long)]
    pub couplings: Option<usize>,
    /// Hidden width for all conditioning and matrix networks.
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Latent dimension (ncds only).
    #[arg(long)]
    pub latent_dim: Option<usize>,
    /// Jacobian regularization epsilon (ncds only).
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Blending radius of the unit-speed descent field (eflow only).
    #[arg(long)]
    pub delta: Option<f64>,
    /// Also optimize the equilibrium location.
    #[arg(long, default_value_t = false)]
    pub learn_equilibrium: bool,
    /// Train in raw data coordinates instead of standardized ones.
    #[arg(long, default_value_t = false)]
    pub no_standardize: bool,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub grad_clip: Option<f64>,
    #[arg(long)]
    pub lr_decay: Option<f64>,
}

#[derive(Args, Debug, Serialize)]
pub struct RolloutArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Start state in raw data units, comma-separated: "0.0,2.0".
    #[arg(long, conflicts_with = "from_data")]
    pub x0: Option<String>,
    /// Start one rollout from each trajectory's first state in this CSV.
    #[arg(long)]
    pub from_data: Option<PathBuf>,
    #[arg(long, default_value_t = 0.01)]
    pub dt: f64,
    #[arg(long, default_value_t = 5.0)]
    pub horizon: f64,
    /// Integration scheme: rk4 or euler.
    #[arg(long, default_value = "rk4", value_parser = parse_scheme)]
    #[serde(serialize_with = "serialize_scheme")]
    pub integrator: Scheme,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Demonstrations to score against (raw units).
    #[arg(long)]
    pub data: PathBuf,
    /// 1 = score the checkpoint; N > 1 = retrain N fresh seeds on the data
    /// and report mean ± std of the per-run DTWD means.
    #[arg(long, default_value_t = 1)]
    pub runs: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 0.01)]
    pub dt: f64,
    /// Fallback rollout duration for demonstrations without time spans.
    #[arg(long, default_value_t = 5.0)]
    pub horizon: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum VerifySpace {
    Latent,
    Data,
}

#[derive(Args, Debug, Serialize)]
pub struct VerifyArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Sample points for the pointwise checks.
    #[arg(long, default_value_t = 200)]
    pub samples: usize,
    /// Contraction rate to certify (default: alpha for the latent space,
    /// alpha/2 for the data space, 0.02 for baselines).
    #[arg(long)]
    pub c: Option<f64>,
    /// Which space to verify: latent or data.
    #[arg(long, default_value = "latent", value_parser = parse_space)]
    pub space: VerifySpace,
    /// Rollouts for trajectory-wise checks.
    #[arg(long, default_value_t = 10)]
    pub rollouts: usize,
    /// Quadrature points for the data-space converse metric.
    #[arg(long, default_value_t = 8)]
    pub quadrature_points: usize,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug, Serialize)]
pub struct PlotArgs {
    /// Demonstrations to draw.
    #[arg(long)]
    pub data: PathBuf,
    /// Optional checkpoint: adds rollouts and the field quiver.
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// The two state coordinates to plot, e.g. "0,1".
    #[arg(long, default_value = "0,1", value_parser = parse_dims)]
    pub dims: (usize, usize),
    /// Quiver resolution per axis.
    #[arg(long, default_value_t = 20)]
    pub grid: usize,
    /// Scale arrows by speed instead of normalizing their lengths.
    #[arg(long, default_value_t = false)]
    pub raw_arrows: bool,
    #[arg(long, default_value_t = 0.01)]
    pub dt: f64,
    #[arg(long, default_value_t = 5.0)]
    pub horizon: f64,
    /// Output SVG path.
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_model_kind(s: &str) -> std::result::Result<ModelKind, String> {
    s.parse::<ModelKind>().map_err(|e| e.to_string())
}

fn parse_scheme(s: &str) -> std::result::Result<Scheme, String> {
    s.parse::<Scheme>().map_err(|e| e.to_string())
}

fn parse_space(s: &str) -> std::result::Result<VerifySpace, String> {
    match s {
        "latent" => Ok(VerifySpace::Latent),
        "data" => Ok(VerifySpace::Data),
        other => Err(format!("unknown space '{other}' (expected latent or data)")),
    }
}

fn parse_dims(s: &str) -> std::result::Result<(usize, usize), String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err(format!("expected two comma-separated indices, got '{s}'"));
    }
    let a = parts[0].trim().parse().map_err(|_| format!("bad index '{}'", parts[0]))?;
    let b = parts[1].trim().parse().map_err(|_| format!("bad index '{}'", parts[1]))?;
    Ok((a, b))
}

fn serialize_scheme<S: serde::Serializer>(s: &Scheme, ser: S) -> std::result::Result<S::Ok, S::Error> {
    ser.serialize_str(match s {
        Scheme::Euler => "euler",
        Scheme::Rk4 => "rk4",
    })
}

// ── entry points ────────────────────────────────────────────────────────────

/// Parse `args` and run; returns the process exit code. The first element of
/// `args` is the program name, as in `std::env::args`.
pub fn main_with_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}

fn exit_code_for(e: &Error) -> u8 {
    match e {
        Error::Diverged { .. }
        | Error::SingularMatrix { .. }
        | Error::NonFiniteLoss { .. }
        | Error::NoDecay { .. }
        | Error::NotHurwitz { .. } => EXIT_NUMERICAL,
        Error::VerificationFailed(_) => EXIT_VERIFICATION,
        _ => EXIT_USAGE,
    }
}

/// Run one parsed command. Returns the exit code for non-error outcomes
/// (verification failure is an `Ok(3)`, not an `Err`).
pub fn dispatch(cmd: Command) -> Result<u8> {
    match cmd {
        Command::GenData(args) => cmd_gen_data(args),
        Command::Compose(args) => cmd_compose(args),
        Command::Train(args) => cmd_train(args),
        Command::Rollout(args) => cmd_rollout(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Verify(args) => cmd_verify(args),
        Command::Plot(args) => cmd_plot(args),
    }
}

fn resolve_seed(flag: Option<u64>) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var("ELCD_SEED") {
        Ok(text) => text.parse().map_err(|_| {
            Error::Config(format!("ELCD_SEED must be an unsigned integer, got {text:?}"))
        }),
        Err(_) => Ok(0),
    }
}

fn print_resolved(command: &str, body: serde_json::Value) {
    let mut obj = serde_json::Map::new();
    obj.insert("command".into(), command.into());
    if let serde_json::Value::Object(m) = body {
        obj.extend(m);
    }
    println!(
        "resolved-config: {}",
        serde_json::Value::Object(obj)
    );
}

// ── gen-data ────────────────────────────────────────────────────────────────

fn cmd_gen_data(args: GenDataArgs) -> Result<u8> {
    let (dataset, out): (Dataset, PathBuf) = match args.kind {
        GenKind::Pendulum(a) => {
            let seed = resolve_seed(a.seed)?;
            let mut cfg = PendulumConfig::with_links(a.links);
            cfg.trajectories = a.trajs;
            if let Some(v) = a.damping {
                cfg.damping = v;
            }
            if let Some(v) = a.dt {
                cfg.dt = v;
            }
            if let Some(v) = a.horizon {
                cfg.horizon = v;
            }
            let out = a.out.unwrap_or_else(|| PathBuf::from("pendulum.csv"));
            print_resolved(
                "gen-data",
                serde_json::json!({"kind": "pendulum", "config": cfg, "seed": seed, "out": out}),
            );
            (gen_pendulum(&cfg, seed)?, out)
        }
        GenKind::Rosenbrock(a) => {
            let seed = resolve_seed(a.seed)?;
            let mut cfg = RosenbrockConfig::with_dim(a.dim);
            cfg.trajectories = a.trajs;
            if let Some(v) = a.dt {
                cfg.dt = v;
            }
            if let Some(v) = a.horizon {
                cfg.horizon = v;
            }
            let out = a.out.unwrap_or_else(|| PathBuf::from("rosenbrock.csv"));
            print_resolved(
                "gen-data",
                serde_json::json!({"kind": "rosenbrock", "config": cfg, "seed": seed, "out": out}),
            );
            (gen_rosenbrock(&cfg, seed)?, out)
        }
        GenKind::ToyLinear(a) => {
            let mut cfg = ToyLinearConfig::default();
            if let Some(v) = a.dt {
                cfg.dt = v;
            }
            if let Some(v) = a.horizon {
                cfg.horizon = v;
            }
            let out = a.out.unwrap_or_else(|| PathBuf::from("toy-linear.csv"));
            print_resolved(
                "gen-data",
                serde_json::json!({"kind": "toy-linear", "config": cfg, "out": out}),
            );
            (gen_toy_linear_with(&cfg), out)
        }
    };
    dataset.save_csv(&out)?;
    println!(
        "wrote {} trajectories ({}D, {} samples) to {}",
        dataset.trajectories.len(),
        dataset.dim(),
        dataset.n_samples(),
        out.display()
    );
    Ok(EXIT_OK)
}

// ── compose ─────────────────────────────────────────────────────────────────

fn cmd_compose(args: ComposeArgs) -> Result<u8> {
    print_resolved(
        "compose",
        serde_json::json!({"inputs": args.inputs, "out": args.out}),
    );
    let mut parts = Vec::with_capacity(args.inputs.len());
    for path in &args.inputs {
        parts.push(Dataset::load_csv(path)?);
    }
    let stacked = Dataset::compose(&parts)?;
    stacked.save_csv(&args.out)?;
    println!(
        "wrote {} trajectories ({}D, {} samples) to {}",
        stacked.trajectories.len(),
        stacked.dim(),
        stacked.n_samples(),
        args.out.display()
    );
    Ok(EXIT_OK)
}

// ── train ───────────────────────────────────────────────────────────────────

fn build_model_config(args: &TrainArgs, dim: usize) -> Result<ModelConfig> {
    let mut cfg = ModelConfig::new(args.model, dim);
    if let Some(a) = args.alpha {
        cfg.elcd.alpha = a;
    }
    if let Some(c) = args.couplings {
        cfg.flow.couplings = c;
    }
    if let Some(h) = args.hidden {
        cfg.flow.hidden = h;
        cfg.elcd.hidden = h;
        cfg.ncds.hidden = h;
        cfg.sdd.hidden = h;
    }
    if let Some(m) = args.latent_dim {
        cfg.ncds.latent_dim = m;
    }
    if let Some(e) = args.epsilon {
        cfg.ncds.epsilon = e;
    }
    if let Some(d) = args.delta {
        cfg.descent_delta = d;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_train(args: TrainArgs) -> Result<u8> {
    let seed = resolve_seed(args.seed)?;
    let raw = Dataset::load_csv(&args.data)?;

    let (data, stats): (Dataset, Option<Standardization>) = if args.no_standardize {
        (raw, None)
    } else {
        let (d, s) = raw.standardize()?;
        (d, Some(s))
    };

    let model_cfg = build_model_config(&args, data.dim())?;
    let train_cfg = TrainConfig {
        epochs: args.epochs,
        batch_size: args.batch,
        learning_rate: args.lr,
        seed,
        learn_equilibrium: args.learn_equilibrium,
        weight_decay: args.weight_decay.unwrap_or(0.0),
        grad_clip: args.grad_clip,
        lr_decay: args.lr_decay.unwrap_or(1.0),
        ..TrainConfig::default()
    };
    print_resolved(
        "train",
        serde_json::json!({
            "data": args.data,
            "model": model_cfg,
            "train": train_cfg,
            "standardize": !args.no_standardize,
            "seed": seed,
            "out": args.out,
        }),
    );

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = ComposedModel::new(model_cfg, &mut rng)?;
    prepare_model_for(&mut model, &data);

    let history = train(&mut model, &data, &train_cfg)?;
    let stride = (train_cfg.epochs / 10).max(1);
    for (i, loss) in history.iter().enumerate() {
        if i % stride == 0 || i + 1 == history.len() {
            println!("epoch {i:>4}  loss {loss:.6e}");
        }
    }
    let final_mse = velocity_mse(&model, &data)?;
    println!("final velocity MSE {final_mse:.6e}");

    save_checkpoint(&model, Some(&train_cfg), stats.as_ref(), &args.out)?;
    println!("wrote checkpoint to {}", args.out.display());
    Ok(EXIT_OK)
}

// ── rollout ─────────────────────────────────────────────────────────────────

fn parse_x0(text: &str, dim: usize) -> Result<Vec<f64>> {
    let vals: std::result::Result<Vec<f64>, _> =
        text.split(',').map(|t| t.trim().parse::<f64>()).collect();
    let vals = vals.map_err(|_| Error::Config(format!("bad --x0 value {text:?}")))?;
    if vals.len() != dim {
        return Err(Error::DimensionMismatch {
            context: "rollout start state",
            expected: dim,
            got: vals.len(),
        });
    }
    Ok(vals)
}

fn cmd_rollout(args: RolloutArgs) -> Result<u8> {
    let (model, doc) = load_checkpoint(&args.ckpt)?;
    let dim = model.dim();
    let starts: Vec<Vec<f64>> = if let Some(text) = &args.x0 {
        vec![parse_x0(text, dim)?]
    } else if let Some(path) = &args.from_data {
        let ds = Dataset::load_csv(path)?;
        if ds.dim() != dim {
            return Err(Error::DimensionMismatch {
                context: "rollout data dimension",
                expected: dim,
                got: ds.dim(),
            });
        }
        ds.trajectories
            .iter()
            .filter(|t| !t.is_empty())
            .map(|t| t.first_state().to_vec())
            .collect()
    } else {
        return Err(Error::Config(
            "rollout needs either --x0 or --from-data".into(),
        ));
    };
    let cfg = IntegratorConfig {
        scheme: args.integrator,
        dt: args.dt,
        horizon: args.horizon,
        record_stride: 1,
    };
    cfg.validate()?;
    print_resolved(
        "rollout",
        serde_json::json!({
            "ckpt": args.ckpt,
            "starts": starts,
            "integrator": cfg,
            "out": args.out,
        }),
    );

    let stats = doc.standardization.clone();
    let mut trajs = Vec::with_capacity(starts.len());
    for x0 in &starts {
        let z0: Vec<f64> = match &stats {
            Some(st) => x0
                .iter()
                .zip(&st.mean)
                .zip(&st.std)
                .map(|((x, m), s)| (x - m) / s)
                .collect(),
            None => x0.clone(),
        };
        let mut field = |x: &[f64], out: &mut [f64]| model.field_for_integration(x, out);
        let traj = integrate(&mut field, &z0, &cfg)?;
        trajs.push(traj);
    }
    let mut rolled = Dataset::new(trajs);
    if let Some(st) = &stats {
        rolled = rolled.destandardize(st);
    }
    let rolled = rolled.with_meta(
        "rollout",
        serde_json::json!({"ckpt": args.ckpt.display().to_string(), "dt": args.dt, "horizon": args.horizon}),
        None,
    );
    rolled.save_csv(&args.out)?;
    println!(
        "wrote {} rollouts ({} steps each) to {}",
        rolled.trajectories.len(),
        rolled.trajectories.first().map_or(0, |t| t.len()),
        args.out.display()
    );
    Ok(EXIT_OK)
}

// ── eval ────────────────────────────────────────────────────────────────────

fn dataset_label(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn cmd_eval(args: EvalArgs) -> Result<u8> {
    let seed = resolve_seed(args.seed)?;
    let (model, doc) = load_checkpoint(&args.ckpt)?;
    let raw = Dataset::load_csv(&args.data)?;
    let data = match &doc.standardization {
        Some(st) => raw.standardize_with(st)?,
        None => raw,
    };
    let cfg = IntegratorConfig::rk4(args.dt, args.horizon);
    print_resolved(
        "eval",
        serde_json::json!({
            "ckpt": args.ckpt,
            "data": args.data,
            "runs": args.runs,
            "integrator": cfg,
            "seed": seed,
        }),
    );
    if args.runs == 0 {
        return Err(Error::Config("--runs must be positive".into()));
    }

    let label = dataset_label(&args.data);
    let kind = doc.model_kind;
    if args.runs == 1 {
        let mut field = |x: &[f64], out: &mut [f64]| model.field_for_integration(x, out);
        let summary = eval_model(&mut field, &data, &cfg)?;
        println!("model,dataset,mean,std,n");
        println!(
            "{kind},{label},{:.4},{:.4},{}",
            summary.mean,
            summary.std,
            summary.values.len()
        );
        return Ok(EXIT_OK);
    }

    // Multi-run protocol: retrain from scratch with distinct seeds and
    // aggregate the per-run mean DTWDs.
    let train_cfg = doc.train.clone().unwrap_or_default();
    let mut run_means = Vec::with_capacity(args.runs);
    for r in 0..args.runs as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(r));
        let mut fresh = ComposedModel::new(doc.model.clone(), &mut rng)?;
        prepare_model_for(&mut fresh, &data);
        let mut cfg_r = train_cfg.clone();
        cfg_r.seed = seed.wrapping_add(r);
        train(&mut fresh, &data, &cfg_r)?;
        let mut field = |x: &[f64], out: &mut [f64]| fresh.field_for_integration(x, out);
        let summary = eval_model(&mut field, &data, &cfg)?;
        println!("run {r}: mean DTWD {:.4}", summary.mean);
        run_means.push(summary.mean);
    }
    let n = run_means.len() as f64;
    let mean = run_means.iter().sum::<f64>() / n;
    let var = run_means.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    println!("model,dataset,mean,std,n");
    println!("{kind},{label},{mean:.4},{:.4},{}", var.sqrt(), run_means.len());
    Ok(EXIT_OK)
}

// ── verify ──────────────────────────────────────────────────────────────────

fn sample_around(center: &[f64], count: usize, radius: f64, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..count)
        .map(|_| {
            center
                .iter()
                .map(|c| c + rng.gen_range(-radius..radius))
                .collect()
        })
        .collect()
}

fn verify_latent(
    model: &ComposedModel,
    args: &VerifyArgs,
    seed: u64,
) -> Result<VerifyReport> {
    let mut report = VerifyReport::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z_star = model.latent_equilibrium_f64();

    match model.latent() {
        LatentField::Elcd(m) => {
            let alpha = args.c.unwrap_or(m.alpha());
            let points = sample_around(&z_star, args.samples, 2.0, &mut rng);
            let mut worst = f64::NEG_INFINITY;
            for z in &points {
                let a = m.a_matrix_f64(z, &z_star);
                let mut sym = a.clone();
                sym.add_assign(&a.transposed());
                sym.scale_in_place(0.5);
                worst = worst.max(symmetric_eigenvalue_max(&sym) + m.alpha());
            }
            report
                .checks
                .push(CheckOutcome::new("latent-eigenvalue-margin", worst, 1e-10));

            let starts = sample_around(&z_star, args.rollouts, 2.0, &mut rng);
            let mut field = |z: &[f64], out: &mut [f64]| {
                out.copy_from_slice(&model.latent_field_f64(z, &z_star));
            };
            let violation = equilibrium_bound_check(
                &mut field,
                &z_star,
                alpha.min(m.alpha()),
                &starts,
                &IntegratorConfig::rk4(1e-3, 5.0),
            );
            report.bound_violations = violation.per_rollout.clone();
            report
                .checks
                .push(CheckOutcome::new("equilibrium-decay-bound", violation.max, 1e-3));
            report.achieved_rate = m.alpha();
        }
        LatentField::Ncds(m) => {
            let anchor = m.anchor_point().to_vec();
            let points = sample_around(&anchor, args.samples, 2.0, &mut rng);
            let mut worst = f64::NEG_INFINITY;
            for z in &points {
                let df = m.jacobian_df_f64(z);
                let mut sym = df.clone();
                sym.add_assign(&df.transposed());
                sym.scale_in_place(0.5);
                worst = worst.max(symmetric_eigenvalue_max(&sym) + m.config().epsilon);
            }
            report
                .checks
                .push(CheckOutcome::new("latent-jacobian-margin", worst, 1e-10));
            report.achieved_rate = m.config().epsilon;
        }
        LatentField::Sdd(m) => {
            let alpha = m.config().alpha;
            let points = sample_around(&z_star, args.samples, 2.0, &mut rng);
            let mut worst_decay = f64::NEG_INFINITY;
            let mut min_potential = f64::INFINITY;
            for x in &points {
                let (v, grad) = m.potential_and_grad_f64(x, &z_star);
                let f = m.field_f64(x, &z_star);
                let descent: f64 = grad.iter().zip(&f).map(|(g, fi)| g * fi).sum();
                worst_decay = worst_decay.max(descent + alpha * v);
                if x != &z_star {
                    min_potential = min_potential.min(v);
                }
            }
            report
                .checks
                .push(CheckOutcome::new("lyapunov-decay", worst_decay, 1e-9));
            report
                .checks
                .push(CheckOutcome::new("potential-positive", -min_potential, 0.0));
            report.achieved_rate = alpha;
        }
        LatentField::Descent(_) => {
            // Unit-speed descent: the latent radius must shrink every step.
            let starts = sample_around(&z_star, args.rollouts, 2.0, &mut rng);
            let cfg = IntegratorConfig::rk4(1e-2, 3.0);
            let mut worst_increase = f64::NEG_INFINITY;
            for x0 in &starts {
                let mut field = |z: &[f64], out: &mut [f64]| {
                    out.copy_from_slice(&model.latent_field_f64(z, &z_star));
                };
                let traj = integrate(&mut field, x0, &cfg)?;
                let radius = |x: &[f64]| -> f64 {
                    x.iter()
                        .zip(&z_star)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt()
                };
                for k in 1..traj.len() {
                    worst_increase = worst_increase
                        .max(radius(traj.state(k)) - radius(traj.state(k - 1)));
                }
            }
            report
                .checks
                .push(CheckOutcome::new("latent-radius-monotone", worst_increase, 1e-8));
        }
    }
    Ok(report)
}

fn verify_data_space(
    model: &ComposedModel,
    args: &VerifyArgs,
    seed: u64,
) -> Result<VerifyReport> {
    let mut report = VerifyReport::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x_star = model.equilibrium().to_vec();
    let rate = args.c.unwrap_or(match model.latent() {
        LatentField::Elcd(m) => 0.5 * m.alpha(),
        _ => 0.02,
    });

    let mut field = |x: &[f64], out: &mut [f64]| model.field_for_integration(x, out);
    let mut jac = |x: &[f64], out: &mut [f64]| match model.jacobian_f64(x) {
        Ok(j) => out.copy_from_slice(j.data()),
        Err(_) => out.fill(f64::NAN),
    };

    // Transport metric Dφ(x)ᵀDφ(x) when a diffeomorphism is present (the
    // exact certificate the construction provides), identity otherwise.
    let metric_fn = |x: &[f64]| -> Result<Tensor> {
        match model.diffeo() {
            Some(d) => {
                let j = d.jacobian_f64(x);
                Ok(j.transposed().matmul_value(&j))
            }
            None => Ok(Tensor::eye(x.len())),
        }
    };

    let points = sample_around(&x_star, args.samples.min(64), 1.5, &mut rng);
    let assessment = contraction_check(&mut field, &mut jac, metric_fn, rate, &points, 1e-4, 5e-2)?;
    let worst = assessment
        .samples
        .iter()
        .map(|s| s.lambda_max)
        .fold(f64::NEG_INFINITY, f64::max);
    report.achieved_rate = assessment.achieved_rate;
    report
        .checks
        .push(CheckOutcome::new("transport-metric-contraction", worst, 5e-2));

    // Independent audit: reconstruct a metric by variational quadrature at a
    // few points and check the metric PDE residual with it.
    let q_points = sample_around(&x_star, args.quadrature_points.min(8), 1.0, &mut rng);
    let mcfg = ConverseMetricConfig {
        dt: 1e-2,
        t_max: 40.0 / rate.max(1e-3),
        tail_tol: 1e-5,
    };
    let mut min_eig = f64::INFINITY;
    let mut max_residual = f64::NEG_INFINITY;
    for x in &q_points {
        let mut field1 = |x: &[f64], out: &mut [f64]| model.field_for_integration(x, out);
        let mut jac1 = |x: &[f64], out: &mut [f64]| match model.jacobian_f64(x) {
            Ok(j) => out.copy_from_slice(j.data()),
            Err(_) => out.fill(f64::NAN),
        };
        match converse_metric(&mut field1, &mut jac1, x, &mcfg) {
            Ok(sample) => {
                min_eig = min_eig.min(sample.min_eigenvalue());
                report.residual_norms.push(sample.tail);
                let mut field2 = |x: &[f64], out: &mut [f64]| model.field_for_integration(x, out);
                let mut jac2 = |x: &[f64], out: &mut [f64]| match model.jacobian_f64(x) {
                    Ok(j) => out.copy_from_slice(j.data()),
                    Err(_) => out.fill(f64::NAN),
                };
                let metric_q = |y: &[f64]| -> Result<Tensor> {
                    let mut f3 = |x: &[f64], out: &mut [f64]| model.field_for_integration(x, out);
                    let mut j3 = |x: &[f64], out: &mut [f64]| match model.jacobian_f64(x) {
                        Ok(j) => out.copy_from_slice(j.data()),
                        Err(_) => out.fill(f64::NAN),
                    };
                    Ok(converse_metric(&mut f3, &mut j3, y, &mcfg)?.metric)
                };
                let res = metric_residual(&mut field2, &mut jac2, metric_q, x, 1e-3)?;
                let frob = res.data().iter().map(|v| v * v).sum::<f64>().sqrt();
                max_residual = max_residual.max(frob);
            }
            Err(Error::NoDecay { norm, .. }) => {
                report
                    .checks
                    .push(CheckOutcome::new("variational-decay", norm, mcfg.tail_tol));
                return Ok(report);
            }
            Err(e) => return Err(e),
        }
    }
    report
        .checks
        .push(CheckOutcome::new("quadrature-metric-min-eig", -min_eig, 0.0));
    report
        .checks
        .push(CheckOutcome::new("metric-pde-residual", max_residual, 5e-2));
    Ok(report)
}

fn cmd_verify(args: VerifyArgs) -> Result<u8> {
    let seed = resolve_seed(args.seed)?;
    let (model, _doc) = load_checkpoint(&args.ckpt)?;
    print_resolved(
        "verify",
        serde_json::json!({
            "ckpt": args.ckpt,
            "samples": args.samples,
            "c": args.c,
            "space": args.space,
            "rollouts": args.rollouts,
            "seed": seed,
        }),
    );
    let report = match args.space {
        VerifySpace::Latent => verify_latent(&model, &args, seed)?,
        VerifySpace::Data => verify_data_space(&model, &args, seed)?,
    };
    print!("{report}");
    if report.pass() {
        println!("verification passed");
        Ok(EXIT_OK)
    } else {
        println!("verification FAILED");
        Ok(EXIT_VERIFICATION)
    }
}

// ── plot ────────────────────────────────────────────────────────────────────

fn cmd_plot(args: PlotArgs) -> Result<u8> {
    let data = Dataset::load_csv(&args.data)?;
    print_resolved(
        "plot",
        serde_json::json!({
            "data": args.data,
            "ckpt": args.ckpt,
            "dims": [args.dims.0, args.dims.1],
            "grid": args.grid,
            "raw_arrows": args.raw_arrows,
            "out": args.out,
        }),
    );
    let opts = PlotOptions {
        dims: args.dims,
        grid: args.grid,
        normalize_arrows: !args.raw_arrows,
        ..Default::default()
    };

    let svg = match &args.ckpt {
        None => render_svg(&data, None, &opts)?,
        Some(path) => {
            let (model, doc) = load_checkpoint(path)?;
            if model.dim() != data.dim() {
                return Err(Error::DimensionMismatch {
                    context: "plot data dimension",
                    expected: model.dim(),
                    got: data.dim(),
                });
            }
            let stats = doc.standardization.clone();
            // The model lives in (possibly) standardized coordinates; wrap it
            // so the plot works in the data's raw units.
            let mut field = |x: &[f64], out: &mut [f64]| match &stats {
                None => model.field_for_integration(x, out),
                Some(st) => {
                    let z: Vec<f64> = x
                        .iter()
                        .zip(&st.mean)
                        .zip(&st.std)
                        .map(|((v, m), s)| (v - m) / s)
                        .collect();
                    match model.predict_velocity_f64(&z) {
                        Ok(v) => {
                            for ((o, vi), s) in out.iter_mut().zip(&v).zip(&st.std) {
                                *o = vi * s;
                            }
                        }
                        Err(_) => out.fill(f64::NAN),
                    }
                }
            };
            let anchor: Vec<f64> = match &stats {
                None => model.equilibrium().to_vec(),
                Some(st) => model
                    .equilibrium()
                    .iter()
                    .zip(&st.mean)
                    .zip(&st.std)
                    .map(|((z, m), s)| z * s + m)
                    .collect(),
            };
            let fp = FieldPlot {
                field: &mut field,
                anchor,
                integrator: IntegratorConfig::rk4(args.dt, args.horizon),
            };
            render_svg(&data, Some(fp), &opts)?
        }
    };
    std::fs::write(&args.out, &svg).map_err(|e| Error::io(&args.out, e))?;
    println!("wrote {}", args.out.display());
    Ok(EXIT_OK)
}

// ── tests ───────────────────────────────────────────────────────────────────

#[cfg(test)]
mod tests {
    use super::*;

    fn tmpdir(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("elcd-cli-{tag}-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    fn parse(line: &[&str]) -> Command {
        Cli::try_parse_from(line).expect("args parse").command
    }

    #[test]
    fn unknown_flags_and_bad_values_are_usage_errors() {
        assert!(Cli::try_parse_from(["elcd", "gen-data", "pendulum", "--wat", "3"]).is_err());
        assert!(Cli::try_parse_from(["elcd", "train", "--data", "x.csv"]).is_err()); // missing --out
        assert!(Cli::try_parse_from(["elcd", "nonsense"]).is_err());
        assert_eq!(
            main_with_args(["elcd", "gen-data", "pendulum", "--wat", "3"]),
            EXIT_USAGE
        );
        assert_eq!(main_with_args(["elcd", "--help"]), EXIT_OK);
    }

    #[test]
    fn gen_data_writes_the_documented_shapes() {
        let dir = tmpdir("gen");
        let pend = dir.join("p.csv");
        let cmd = parse(&[
            "elcd", "gen-data", "pendulum", "--links", "2", "--trajs", "6", "--out",
            pend.to_str().unwrap(), "--seed", "3",
        ]);
        assert_eq!(dispatch(cmd).unwrap(), EXIT_OK);
        let ds = Dataset::load_csv(&pend).unwrap();
        assert_eq!(ds.trajectories.len(), 6);
        assert_eq!(ds.dim(), 4);

        let toy = dir.join("t.csv");
        let cmd = parse(&["elcd", "gen-data", "toy-linear", "--out", toy.to_str().unwrap()]);
        assert_eq!(dispatch(cmd).unwrap(), EXIT_OK);
        let ds = Dataset::load_csv(&toy).unwrap();
        assert_eq!(ds.trajectories.len(), 2);
        assert_eq!(ds.dim(), 2);

        let ros = dir.join("r.csv");
        let cmd = parse(&[
            "elcd", "gen-data", "rosenbrock", "--dim", "8", "--trajs", "4", "--horizon", "1.0",
            "--out", ros.to_str().unwrap(),
        ]);
        assert_eq!(dispatch(cmd).unwrap(), EXIT_OK);
        let ds = Dataset::load_csv(&ros).unwrap();
        assert_eq!(ds.trajectories.len(), 4);
        assert_eq!(ds.dim(), 8);
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn compose_stacks_two_toy_files_into_four_dimensions() {
        let dir = tmpdir("compose");
        let a = dir.join("a.csv");
        let b = dir.join("b.csv");
        for p in [&a, &b] {
            let cmd = parse(&["elcd", "gen-data", "toy-linear", "--out", p.to_str().unwrap()]);
            dispatch(cmd).unwrap();
        }
        let out = dir.join("ab.csv");
        let cmd = parse(&[
            "elcd", "compose", "--inputs", a.to_str().unwrap(), b.to_str().unwrap(), "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(dispatch(cmd).unwrap(), EXIT_OK);
        let ds = Dataset::load_csv(&out).unwrap();
        assert_eq!(ds.dim(), 4);
        assert_eq!(ds.trajectories.len(), 2);
        std::fs::remove_dir_all(&dir).unwrap();
    }

    /// The full pipeline: generate → train (briefly) → rollout → eval →
    /// verify → plot, exercising every subcommand against real files.
    #[test]
    fn pipeline_runs_end_to_end_on_the_toy_system() {
        let dir = tmpdir("pipeline");
        let data = dir.join("toy.csv");
        dispatch(parse(&["elcd", "gen-data", "toy-linear", "--out", data.to_str().unwrap()]))
            .unwrap();

        let ckpt = dir.join("model.json");
        let cmd = parse(&[
            "elcd", "train", "--data", data.to_str().unwrap(), "--model", "elcd", "--epochs",
            "2", "--couplings", "0", "--seed", "5", "--out", ckpt.to_str().unwrap(),
        ]);
        assert_eq!(dispatch(cmd).unwrap(), EXIT_OK);
        assert!(ckpt.exists());

        // Seeded rerun writes byte-identical checkpoints.
        let ckpt2 = dir.join("model2.json");
        let cmd = parse(&[
            "elcd", "train", "--data", data.to_str().unwrap(), "--model", "elcd", "--epochs",
            "2", "--couplings", "0", "--seed", "5", "--out", ckpt2.to_str().unwrap(),
        ]);
        dispatch(cmd).unwrap();
        assert_eq!(
            std::fs::read(&ckpt).unwrap(),
            std::fs::read(&ckpt2).unwrap(),
            "same seed must give identical checkpoint bytes"
        );

        let roll = dir.join("roll.csv");
        let cmd = parse(&[
            "elcd", "rollout", "--ckpt", ckpt.to_str().unwrap(), "--x0", "0.0,2.0", "--dt",
            "0.01", "--horizon", "1.0", "--out", roll.to_str().unwrap(),
        ]);
        assert_eq!(dispatch(cmd).unwrap(), EXIT_OK);
        let rolled = Dataset::load_csv(&roll).unwrap();
        assert_eq!(rolled.trajectories.len(), 1);
        // Raw start survives the standardize → integrate → destandardize
        // roundtrip to rounding error.
        for (got, want) in rolled.trajectories[0].state(0).iter().zip([0.0, 2.0]) {
            assert!((got - want).abs() < 1e-12, "start moved: {got} vs {want}");
        }

        let cmd = parse(&[
            "elcd", "eval", "--ckpt", ckpt.to_str().unwrap(), "--data", data.to_str().unwrap(),
        ]);
        assert_eq!(dispatch(cmd).unwrap(), EXIT_OK);

        let cmd = parse(&[
            "elcd", "verify", "--ckpt", ckpt.to_str().unwrap(), "--samples", "50", "--rollouts",
            "3",
        ]);
        assert_eq!(dispatch(cmd).unwrap(), EXIT_OK, "fresh latent checks must pass");

        let svg = dir.join("field.svg");
        let cmd = parse(&[
            "elcd", "plot", "--data", data.to_str().unwrap(), "--ckpt", ckpt.to_str().unwrap(),
            "--grid", "6", "--out", svg.to_str().unwrap(),
        ]);
        assert_eq!(dispatch(cmd).unwrap(), EXIT_OK);
        let text = std::fs::read_to_string(&svg).unwrap();
        assert_eq!(text.matches("class=\"arrow\"").count(), 36);
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn rollout_from_the_equilibrium_is_stationary() {
        let dir = tmpdir("stationary");
        let data = dir.join("toy.csv");
        dispatch(parse(&["elcd", "gen-data", "toy-linear", "--out", data.to_str().unwrap()]))
            .unwrap();
        let ckpt = dir.join("m.json");
        dispatch(parse(&[
            "elcd", "train", "--data", data.to_str().unwrap(), "--epochs", "0", "--out",
            ckpt.to_str().unwrap(),
        ]))
        .unwrap();
        // The toy equilibrium is the origin in raw units (up to the float
        // dust the standardized sample mean leaves behind, ~1e-18).
        let roll = dir.join("r.csv");
        dispatch(parse(&[
            "elcd", "rollout", "--ckpt", ckpt.to_str().unwrap(), "--x0", "0,0", "--horizon",
            "0.5", "--out", roll.to_str().unwrap(),
        ]))
        .unwrap();
        let ds = Dataset::load_csv(&roll).unwrap();
        let t = &ds.trajectories[0];
        for k in 0..t.len() {
            for v in t.state(k) {
                assert!(v.abs() < 1e-12, "step {k} moved to {v}");
            }
        }
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn divergent_rollouts_map_to_the_numerical_exit_code() {
        // A NaN-producing "model": epochs 0 checkpoint, then poke the stored
        // equilibrium to NaN so the field turns non-finite immediately.
        let dir = tmpdir("diverge");
        let data = dir.join("toy.csv");
        dispatch(parse(&["elcd", "gen-data", "toy-linear", "--out", data.to_str().unwrap()]))
            .unwrap();
        let ckpt = dir.join("m.json");
        dispatch(parse(&[
            "elcd", "train", "--data", data.to_str().unwrap(), "--epochs", "0", "--out",
            ckpt.to_str().unwrap(),
        ]))
        .unwrap();
        let text = std::fs::read_to_string(&ckpt).unwrap();
        let mut doc: serde_json::Value = serde_json::from_str(&text).unwrap();
        doc["equilibrium"][0] = format!("{:016x}", f64::NAN.to_bits()).into();
        std::fs::write(&ckpt, serde_json::to_string_pretty(&doc).unwrap()).unwrap();
        let code = main_with_args([
            "elcd", "rollout", "--ckpt", ckpt.to_str().unwrap(), "--x0", "0.5,0.5", "--out",
            dir.join("r.csv").to_str().unwrap(),
        ]);
        assert_eq!(code, EXIT_NUMERICAL);
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn seed_falls_back_to_the_environment_variable() {
        // Env vars are process-global: set, resolve, restore immediately.
        std::env::set_var("ELCD_SEED", "17");
        let got = resolve_seed(None).unwrap();
        let flagged = resolve_seed(Some(4)).unwrap();
        std::env::set_var("ELCD_SEED", "not-a-number");
        let bad = resolve_seed(None);
        std::env::remove_var("ELCD_SEED");
        let unset = resolve_seed(None).unwrap();
        assert_eq!(got, 17);
        assert_eq!(flagged, 4);
        assert!(bad.is_err());
        assert_eq!(unset, 0);
    }
}
