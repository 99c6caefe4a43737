//! `fecanet` command-line harness.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fecanet_core::gradcheck::{grad_check, GradCheckRow};
use fecanet_core::io::config::RunConfig;
use fecanet_core::io::fixtures::{export_episodes, synthetic_episodes};
use fecanet_core::io::{load_checkpoint, load_episodes, save_checkpoint, write_file, write_pgm, write_tensor};
use fecanet_core::oracles::{oracle_suite, OracleReport};
use fecanet_core::pipeline::{kshot_fuse, train};
use fecanet_core::{encoder4d, evaluate, Adam, Error, FecaModel, MemoryBank, Tensor};

const EXIT_USAGE: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_VALIDATION: u8 = 4;

/// Center-pivot vs full 4D conv tolerance used by `oracle-diff`.
const EQUIVALENCE_TOL: f64 = 1e-5;
const EQUIVALENCE_TRIALS: usize = 20;

#[derive(Parser)]
#[command(name = "fecanet", version, about = "Few-shot segmentation: train, evaluate and verify")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on a manifest and write a checkpoint plus a step,loss CSV.
    Train(TrainArgs),
    /// Score a checkpoint on a manifest; prints a JSON metrics report.
    Eval(EvalArgs),
    /// Predict one episode; writes a graymap mask and a probability container.
    RunEpisode(RunEpisodeArgs),
    /// Finite-difference gradient check, one row per module.
    GradCheck(SeedArgs),
    /// Center-pivot vs full 4D convolution, plus the oracle suite.
    OracleDiff(OracleDiffArgs),
    /// Write synthetic episodes (containers, graymaps, manifest.json).
    ExportFixtures(ExportArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON run configuration; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Self-similarity window (odd).
    #[arg(long)]
    k: Option<usize>,
    /// Multi-scale guidance depth.
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    no_fem: bool,
    #[arg(long)]
    no_gc: bool,
    /// Mask support background out of the dense correlations.
    #[arg(long)]
    no_background: bool,
    #[arg(long)]
    no_bank: bool,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig, Error> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        cfg.apply_env()?;
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.k {
            cfg.k = v;
        }
        if let Some(v) = self.depth {
            cfg.depth = v;
        }
        if let Some(v) = self.lr {
            cfg.lr = v;
        }
        if let Some(v) = self.steps {
            cfg.steps = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        let a = &mut cfg.ablation;
        a.fem &= !self.no_fem;
        a.gc &= !self.no_gc;
        a.keep_background &= !self.no_background;
        a.bank &= !self.no_bank;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Output checkpoint path.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Defaults to the checkpoint path with a `.loss.csv` suffix.
    #[arg(long)]
    loss_log: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct KShotArgs {
    #[arg(long)]
    shots: Option<usize>,
    #[arg(long)]
    tau: Option<f64>,
}

impl KShotArgs {
    fn apply(&self, cfg: &mut RunConfig) -> Result<(), Error> {
        if let Some(k) = self.shots {
            cfg.shots = k;
        }
        if let Some(t) = self.tau {
            cfg.tau = t;
        }
        cfg.kshot().map(|_| ())
    }
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    kshot: KShotArgs,
    /// Also write the report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunEpisodeArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Episode index within the manifest.
    #[arg(long, default_value_t = 0)]
    index: usize,
    #[command(flatten)]
    kshot: KShotArgs,
    /// Predicted mask (P5 graymap).
    #[arg(long)]
    mask_out: PathBuf,
    /// Mean foreground probabilities `[H, W]` (tensor container).
    #[arg(long)]
    probs_out: PathBuf,
}

#[derive(Args)]
struct SeedArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Emit JSON instead of a table.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct OracleDiffArgs {
    #[command(flatten)]
    seed: SeedArgs,
    /// Seeded inputs in the equivalence sweep.
    #[arg(long, default_value_t = EQUIVALENCE_TRIALS)]
    trials: usize,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    count: usize,
    #[arg(long, default_value_t = 1)]
    shots: usize,
    #[arg(long, default_value_t = 32)]
    size: usize,
}

/// A command outcome: `Ok(true)` for success, `Ok(false)` when a check ran but
/// did not pass.
type Outcome = Result<bool, Error>;

fn run_train(a: &TrainArgs) -> Outcome {
    let cfg = a.config.resolve()?;
    let episodes = load_episodes(&a.manifest)?;
    if episodes.is_empty() {
        return Err(Error::Validation("manifest has no episodes".into()));
    }
    let mut model = FecaModel::new(cfg.model_config(), cfg.seed)?;
    let mut adam = Adam::new(&model.params, cfg.lr);
    let mut bank = MemoryBank::new();
    let losses = train(&mut model, &episodes, cfg.steps, cfg.batch_size, &mut adam, &mut bank)?;
    save_checkpoint(&a.checkpoint, &cfg, &model, &bank)?;
    let log = a.loss_log.clone().unwrap_or_else(|| suffixed(&a.checkpoint, ".loss.csv"));
    let mut csv = String::from("step,loss\n");
    for (i, l) in losses.iter().enumerate() {
        csv.push_str(&format!("{},{l}\n", i + 1));
    }
    write_file(&log, csv)?;
    if let Some(l) = losses.last() {
        eprintln!("trained {} steps, final loss {l:.6}", losses.len());
    }
    Ok(true)
}

fn suffixed(p: &Path, suffix: &str) -> PathBuf {
    let mut s = p.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn run_eval(a: &EvalArgs) -> Outcome {
    let mut ck = load_checkpoint(&a.checkpoint)?;
    a.kshot.apply(&mut ck.config)?;
    let episodes = load_episodes(&a.manifest)?;
    let report = evaluate(&mut &ck.model, &episodes, &ck.config.kshot()?)?;
    let json = serde_json::to_string_pretty(&report)?;
    if let Some(out) = &a.out {
        write_file(out, format!("{json}\n"))?;
    }
    println!("{json}");
    Ok(true)
}

fn run_episode(a: &RunEpisodeArgs) -> Outcome {
    let mut ck = load_checkpoint(&a.checkpoint)?;
    a.kshot.apply(&mut ck.config)?;
    let cfg = ck.config.kshot()?;
    let episodes = load_episodes(&a.manifest)?;
    let ep = episodes.get(a.index).ok_or_else(|| {
        Error::Validation(format!("episode index {} out of range ({} episodes)", a.index, episodes.len()))
    })?;
    if ep.shots() < cfg.k {
        return Err(Error::Validation(format!("episode has {} supports, {} requested", ep.shots(), cfg.k)));
    }
    let mut bank = MemoryBank::new();
    let maps = (0..cfg.k)
        .map(|s| Ok(ck.model.forward_support(ep, s, &mut bank)?.foreground()))
        .collect::<Result<Vec<Tensor<f32>>, Error>>()?;
    let mask = kshot_fuse(&maps, &cfg)?;
    let mean = Tensor::from_fn(maps[0].dims(), |i| {
        maps.iter().map(|m| m.data()[i]).sum::<f32>() / maps.len() as f32
    });
    write_pgm(&a.mask_out, &mask)?;
    write_tensor(&a.probs_out, &mean)?;
    println!("{}: {} foreground pixels", ep.query_id, mask.count_ones());
    Ok(true)
}

fn run_grad_check(a: &SeedArgs) -> Outcome {
    let rows = grad_check(a.seed)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&rows)?);
    } else {
        print_grad_rows(&rows);
    }
    Ok(rows.iter().all(|r| r.pass))
}

fn print_grad_rows(rows: &[GradCheckRow]) {
    println!("{:<10} {:>8} {:>8} {:>8} {:>12}  result", "module", "tensors", "coords", "kinks", "max_rel");
    for r in rows {
        println!(
            "{:<10} {:>8} {:>8} {:>8} {:>12.3e}  {}",
            r.module,
            r.tensors,
            r.coords,
            r.kinks,
            r.max_rel,
            if r.pass { "pass" } else { "FAIL" }
        );
    }
}

fn run_oracle_diff(a: &OracleDiffArgs) -> Outcome {
    let diff = encoder4d::sparsified_equivalence(a.seed.seed, a.trials)?;
    let reports = oracle_suite(a.seed.seed);
    let ok = diff < EQUIVALENCE_TOL && reports.iter().all(|r| r.pass);
    if a.seed.json {
        let doc = serde_json::json!({
            "center_pivot_max_abs_diff": diff,
            "trials": a.trials,
            "oracles": reports,
        });
        println!("{}", serde_json::to_string_pretty(&doc)?);
    } else {
        println!("center-pivot vs full 4D over {} inputs: max abs diff {diff:.3e}", a.trials);
        print_oracle_reports(&reports);
    }
    Ok(ok)
}

fn print_oracle_reports(reports: &[OracleReport]) {
    println!("{:<28} {:>12} {:>12} {:>8}  result", "op", "max_abs", "max_rel", "tol");
    for r in reports {
        println!(
            "{:<28} {:>12.3e} {:>12.3e} {:>8.0e}  {}",
            r.op,
            r.max_abs,
            r.max_rel,
            r.tolerance,
            if r.pass { "pass" } else { "FAIL" }
        );
    }
}

fn run_export(a: &ExportArgs) -> Outcome {
    if a.count == 0 || a.shots == 0 || a.size < 16 {
        return Err(Error::Validation("need count >= 1, shots >= 1 and size >= 16".into()));
    }
    let eps = synthetic_episodes(a.count, a.size, a.shots, a.seed);
    export_episodes(&a.out, &eps)?;
    println!("wrote {} episodes to {}", eps.len(), a.out.display());
    Ok(true)
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) | Error::Format(_) => EXIT_IO,
        _ => EXIT_VALIDATION,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match &cli.command {
        Command::Train(a) => run_train(a),
        Command::Eval(a) => run_eval(a),
        Command::RunEpisode(a) => run_episode(a),
        Command::GradCheck(a) => run_grad_check(a),
        Command::OracleDiff(a) => run_oracle_diff(a),
        Command::ExportFixtures(a) => run_export(a),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_VALIDATION),
        Err(e) => {
            eprintln!("fecanet: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
