//! Command-line driver.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grounding::gradcheck::{
    check_gradients, is_nondegenerate, GradCheckInstance, PlanHandling, DEFAULT_EPS, RESOLVE_ITERS,
};
use crate::harness::{
    evaluate, generate_heldout_dataset, generate_synthetic_dataset, grid_tsv, strategy_grid, train_from, EncodedSplit,
    Encoders, EpochRecord, OptimizerState, Seeds, SyntheticDataset,
};
use crate::grounding::GroundingModel;
use crate::io::{format_distance, read_embeddings, read_matrix, write_matrix, write_metrics, Checkpoint, RunConfig};
use crate::objectives::{ObjectiveConfig, Strategy};
use crate::ot::{cosine_cost_matrix, solve, uniform_weights, CostMatrix, SolverConfig, TransportMode};

/// Relative error above which `gradcheck` fails.
pub const GRADCHECK_TOL: f64 = 1e-4;
/// Relative error above which the re-solved check fails.
pub const RESOLVE_TOL: f64 = 1e-2;

#[derive(Debug, Parser)]
#[command(name = "otground", version, about = "Optimal-transport vision-language grounding")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Balanced transport between two embedding sets or over a cost matrix.
    SolveOt(SolveArgs),
    /// Partial transport moving `--mass` total mass.
    SolvePot(SolveArgs),
    /// Transport distance between caption and image embeddings.
    AlignScore(AlignArgs),
    /// Write the synthetic train and held-out splits as JSON.
    GenData(GenDataArgs),
    /// Train a grounding model; writes a checkpoint and per-epoch metrics.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the held-out split.
    Eval(EvalArgs),
    /// Train and evaluate every strategy; writes a tab-separated table.
    StrategyGrid(GridArgs),
    /// Finite-difference gradient check; exits 4 on failure.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
struct SolverFlags {
    #[arg(long, default_value_t = SolverConfig::default().beta)]
    beta: f64,
    #[arg(long, default_value_t = SolverConfig::default().iters)]
    iters: usize,
    /// Total mass moved by the partial solver.
    #[arg(long, default_value_t = SolverConfig::default().mass_fraction)]
    mass: f64,
}

impl SolverFlags {
    fn config(&self) -> Result<SolverConfig> {
        SolverConfig::new(self.beta, self.iters, self.mass)
    }
}

#[derive(Debug, Args)]
struct SolveArgs {
    /// Source embeddings (rows of the plan).
    #[arg(long, requires = "target", conflicts_with = "cost")]
    source: Option<PathBuf>,
    /// Target embeddings (columns of the plan).
    #[arg(long, requires = "source")]
    target: Option<PathBuf>,
    /// Precomputed cost matrix in the embedding-file layout.
    #[arg(long, required_unless_present = "source")]
    cost: Option<PathBuf>,
    /// Where to write the transport plan.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverFlags,
}

#[derive(Debug, Args)]
struct AlignArgs {
    /// Caption token embeddings.
    #[arg(long)]
    caption: PathBuf,
    /// Image patch embeddings.
    #[arg(long)]
    image: PathBuf,
    #[arg(long, default_value = "pot")]
    mode: TransportMode,
    #[command(flatten)]
    solver: SolverFlags,
}

#[derive(Debug, Args)]
struct RunFlags {
    /// JSON run configuration; desk defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long, env = "OTGROUND_SEED")]
    seed: Option<u64>,
}

impl RunFlags {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seeds = Seeds::from_global(s);
        }
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
struct GenDataArgs {
    #[command(flatten)]
    run: RunFlags,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    run: RunFlags,
    /// Output directory for `checkpoint.json` and `metrics.jsonl`.
    #[arg(long)]
    out_dir: PathBuf,
    /// Also write `checkpoint-epoch-N.json` every N epochs.
    #[arg(long)]
    save_every: Option<usize>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Overrides the seeds stored in the checkpoint.
    #[arg(long, env = "OTGROUND_SEED")]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct GridArgs {
    #[command(flatten)]
    run: RunFlags,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, env = "OTGROUND_SEED", default_value_t = 7)]
    seed: u64,
    /// Number of consecutive seeds to check.
    #[arg(long, default_value_t = 1)]
    instances: u64,
    #[arg(long, default_value_t = DEFAULT_EPS)]
    eps: f64,
    /// Also compare against differences that re-solve the transport plans.
    #[arg(long)]
    resolve: bool,
}

/// Parses `args` (program name first) and runs the command. Returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            let _ = if code == 0 { out.write_all(text.as_bytes()) } else { err.write_all(text.as_bytes()) };
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn write_out(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes()).map_err(|source| Error::Io {
        path: PathBuf::from("<stdout>"),
        source,
    })
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("serializable")
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> Result<i32> {
    match cmd {
        Command::SolveOt(a) => solve_cmd(TransportMode::Ot, &a, out),
        Command::SolvePot(a) => solve_cmd(TransportMode::Pot, &a, out),
        Command::AlignScore(a) => align_cmd(&a, out),
        Command::GenData(a) => gen_data_cmd(&a, out),
        Command::Train(a) => train_cmd(&a, out),
        Command::Eval(a) => eval_cmd(&a, out),
        Command::StrategyGrid(a) => grid_cmd(&a, out),
        Command::Gradcheck(a) => gradcheck_cmd(&a, out),
    }
}

fn solve_cmd(mode: TransportMode, args: &SolveArgs, out: &mut dyn Write) -> Result<i32> {
    let solver = args.solver.config()?;
    let cost = match (&args.cost, &args.source, &args.target) {
        (Some(path), _, _) => CostMatrix::new(read_matrix(path)?)?,
        (None, Some(s), Some(t)) => cosine_cost_matrix(&read_embeddings(s)?, &read_embeddings(t)?)?,
        _ => return Err(Error::invalid("pass --cost or both --source and --target")),
    };
    let a = uniform_weights(cost.rows())?;
    let b = uniform_weights(cost.cols())?;
    let t = solve(mode, &cost, &a, &b, &solver)?;
    if let Some(path) = &args.out {
        write_matrix(path, t.plan.matrix())?;
    }
    write_out(out, &format!("{}\n", format_distance(t.distance)))?;
    Ok(0)
}

fn align_cmd(args: &AlignArgs, out: &mut dyn Write) -> Result<i32> {
    let solver = args.solver.config()?;
    let caption = read_embeddings(&args.caption)?;
    let image = read_embeddings(&args.image)?;
    let cost = cosine_cost_matrix(&image, &caption)?;
    let a = uniform_weights(cost.rows())?;
    let b = uniform_weights(cost.cols())?;
    let t = solve(args.mode, &cost, &a, &b, &solver)?;
    write_out(out, &format!("{}\n", format_distance(t.distance)))?;
    Ok(0)
}

#[derive(Serialize)]
struct DatasetFile<'a> {
    train: &'a SyntheticDataset,
    heldout: &'a SyntheticDataset,
}

struct Prepared {
    train: EncodedSplit,
    heldout: EncodedSplit,
}

/// Generates both splits and their frozen encodings.
fn prepare(cfg: &RunConfig) -> Result<(SyntheticDataset, SyntheticDataset, Prepared)> {
    let dims = cfg.dims();
    let train = generate_synthetic_dataset(&cfg.data, dims.d_v, cfg.seeds.data)?;
    let heldout = generate_heldout_dataset(&cfg.data, dims.d_v, cfg.seeds.data)?;
    let enc = Encoders::new(dims.layers, dims.d_h, dims.d_v, dims.d_v, cfg.seeds.init)?;
    let prepared = Prepared {
        train: enc.encode(&train)?,
        heldout: enc.encode(&heldout)?,
    };
    Ok((train, heldout, prepared))
}

fn gen_data_cmd(args: &GenDataArgs, out: &mut dyn Write) -> Result<i32> {
    let cfg = args.run.load()?;
    let (train, heldout, _) = prepare(&cfg)?;
    let text = to_json(&DatasetFile {
        train: &train,
        heldout: &heldout,
    });
    crate::io::atomic_write(&args.out, text.as_bytes())?;
    write_out(out, &format!("wrote {} train and {} held-out scenes\n", train.len(), heldout.len()))?;
    Ok(0)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn train_cmd(args: &TrainArgs, out: &mut dyn Write) -> Result<i32> {
    let cfg = args.run.load()?;
    if args.save_every == Some(0) {
        return Err(Error::invalid("--save-every must be >= 1"));
    }
    create_dir(&args.out_dir)?;
    let (_, _, data) = prepare(&cfg)?;
    let tcfg = cfg.train_config();
    let model = GroundingModel::init(tcfg.model, tcfg.seeds.init)?;
    let mut records: Vec<EpochRecord> = Vec::new();
    let metrics_path = args.out_dir.join("metrics.jsonl");
    let mut hook = |r: &EpochRecord, m: &GroundingModel, o: &OptimizerState| -> Result<()> {
        records.push(r.clone());
        if let Some(every) = args.save_every {
            if r.epoch % every == 0 {
                let path = args.out_dir.join(format!("checkpoint-epoch-{}.json", r.epoch));
                Checkpoint::new(cfg, r.epoch, m, Some(o)).save(&path)?;
                write_metrics(&metrics_path, &records)?;
            }
        }
        Ok(())
    };
    let outcome = train_from(&tcfg, &data.train, model, Some(&mut hook))?;
    Checkpoint::new(cfg, tcfg.epochs, &outcome.model, Some(&outcome.optimizer))
        .save(&args.out_dir.join("checkpoint.json"))?;
    write_metrics(&metrics_path, &outcome.history)?;
    let metrics = evaluate(
        &outcome.model,
        &data.heldout,
        &tcfg.objective,
        tcfg.effective_eval_mode(),
        tcfg.seeds.train,
    )?;
    write_out(out, &format!("{}\n", to_json(&metrics)))?;
    Ok(0)
}

fn eval_cmd(args: &EvalArgs, out: &mut dyn Write) -> Result<i32> {
    let ck = Checkpoint::load(&args.checkpoint)?;
    let model = ck.model()?;
    let mut cfg = ck.config;
    if let Some(s) = args.seed {
        cfg.seeds = Seeds::from_global(s);
    }
    let (_, _, data) = prepare(&cfg)?;
    let tcfg = cfg.train_config();
    let metrics = evaluate(&model, &data.heldout, &tcfg.objective, tcfg.effective_eval_mode(), tcfg.seeds.train)?;
    write_out(out, &format!("{}\n", to_json(&metrics)))?;
    Ok(0)
}

fn grid_cmd(args: &GridArgs, out: &mut dyn Write) -> Result<i32> {
    let cfg = args.run.load()?;
    let (_, _, data) = prepare(&cfg)?;
    let rows = strategy_grid(&cfg.train_config(), &data.train, &data.heldout)?;
    let table = grid_tsv(&rows);
    if let Some(path) = &args.out {
        crate::io::atomic_write(path, table.as_bytes())?;
    }
    write_out(out, &table)?;
    Ok(0)
}

fn gradcheck_cmd(args: &GradcheckArgs, out: &mut dyn Write) -> Result<i32> {
    if args.instances == 0 || !(args.eps.is_finite() && args.eps > 0.0) {
        return Err(Error::invalid("--instances must be >= 1 and --eps > 0"));
    }
    let mut failed = false;
    for strategy in Strategy::ALL {
        let cfg = ObjectiveConfig {
            strategy,
            ..ObjectiveConfig::default()
        };
        let mut worst = (0.0f64, String::new(), 0u64);
        for seed in args.seed..args.seed + args.instances {
            let inst = GradCheckInstance::generate(seed)?;
            let r = check_gradients(&inst.model, &inst.batch(), &cfg, args.eps, PlanHandling::Frozen)?;
            if r.max_rel_error >= worst.0 {
                worst = (r.max_rel_error, r.worst, seed);
            }
        }
        let pass = worst.0 < GRADCHECK_TOL;
        failed |= !pass;
        write_out(
            out,
            &format!(
                "{strategy:<8} frozen   max_rel_error {:.3e} at {} (seed {}) {}\n",
                worst.0,
                worst.1,
                worst.2,
                if pass { "ok" } else { "FAIL" }
            ),
        )?;
        if args.resolve && strategy.align_mode().is_some() {
            let cfg = ObjectiveConfig {
                solver: SolverConfig {
                    iters: RESOLVE_ITERS,
                    ..cfg.solver
                },
                ..cfg
            };
            let mut worst = (0.0f64, 0usize);
            for seed in args.seed..args.seed + args.instances {
                let inst = GradCheckInstance::generate(seed)?;
                if !is_nondegenerate(&inst.model, &inst.batch(), &cfg)? {
                    continue;
                }
                let r = check_gradients(&inst.model, &inst.batch(), &cfg, args.eps, PlanHandling::Resolve)?;
                worst = (worst.0.max(r.max_rel_error), worst.1 + 1);
            }
            let line = if worst.1 == 0 {
                format!("{strategy:<8} resolved skipped: no non-degenerate instance\n")
            } else {
                let pass = worst.0 < RESOLVE_TOL;
                failed |= !pass;
                format!(
                    "{strategy:<8} resolved max_rel_error {:.3e} over {} non-degenerate instance(s) {}\n",
                    worst.0,
                    worst.1,
                    if pass { "ok" } else { "FAIL" }
                )
            };
            write_out(out, &line)?;
        }
    }
    Ok(if failed { 4 } else { 0 })
}
