//! Command-line entry point: `gen-data`, `train-rl`, `train-sdl`,
//! `evaluate` and `compare`.

mod checkpoint;
mod config;
mod output;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Manifest, ManifestEntry};
pub use config::{RunConfig, SynthCounts};
pub use output::{emit_curve, write_report, write_summary, CURVE_HEADER, REPORT_HEADER};

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::agent::{train_rl, train_sdl};
use crate::data::{load_image_dir, synth_generate, write_image_dir, Dataset};
use crate::error::{Error, Result};
use crate::eval::{evaluate, Method};
use crate::qnet::HeadKind;

#[derive(Debug, Parser)]
#[command(
    name = "dqn-classify",
    version,
    about = "Reinforcement-learning image classification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic train/test split as PNG files.
    GenData(CommonArgs),
    /// Train the DQN classifier.
    TrainRl(CommonArgs),
    /// Train the supervised CNN baseline.
    TrainSdl(CommonArgs),
    /// Evaluate a checkpoint on a directory of images.
    Evaluate(EvaluateArgs),
    /// Train both methods on the same data and compare test accuracy.
    Compare(CommonArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenData(_) => "gen-data",
            Command::TrainRl(_) => "train-rl",
            Command::TrainSdl(_) => "train-sdl",
            Command::Evaluate(_) => "evaluate",
            Command::Compare(_) => "compare",
        }
    }
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// JSON config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Use a generated synthetic dataset.
    #[arg(long)]
    synth: bool,
    /// Dataset root holding `train/` and `test/`, each with `normal/` and `tumor/`.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    episodes: Option<usize>,
    /// Overlay transparency.
    #[arg(long)]
    alpha: Option<f32>,
    /// Steps per episode.
    #[arg(long)]
    steps: Option<usize>,
    /// Draw a new image at every step instead of once per episode.
    #[arg(long)]
    per_step_image: bool,
    /// Do not bootstrap from the state after an episode's last step.
    #[arg(long)]
    terminal_last_step: bool,
    /// Supervised training epochs.
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    /// Directory with `normal/` and `tumor/` subdirectories.
    #[arg(long)]
    data: PathBuf,
    /// Output directory for `report.csv` (defaults to the model's directory).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    alpha: Option<f32>,
}

/// Runs the CLI and returns the process exit code: 0 on success, 2 for
/// usage and configuration errors, 1 for runtime failures.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => 2,
                _ => 1,
            }
        }
    }
}

fn resolve(command: &Command, args: &CommonArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    cfg.command = Some(command.name().to_string());
    cfg.synth |= args.synth;
    if args.data.is_some() {
        cfg.data.clone_from(&args.data);
    }
    if args.out.is_some() {
        cfg.out.clone_from(&args.out);
    }
    let h = &mut cfg.hyperparams;
    if let Some(seed) = args.seed {
        h.seed = seed;
    }
    if let Some(n) = args.episodes {
        h.episodes = n;
    }
    if let Some(a) = args.alpha {
        h.alpha_overlay = a;
    }
    if let Some(n) = args.steps {
        h.steps_per_episode = n;
    }
    if let Some(n) = args.epochs {
        h.sdl_epochs = n;
    }
    h.per_step_image |= args.per_step_image;
    h.terminal_last_step |= args.terminal_last_step;
    if cfg.synth && cfg.data.is_some() {
        return Err(Error::Config("--synth and --data are mutually exclusive".into()));
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg
        .out
        .clone()
        .ok_or_else(|| Error::Config("--out is required".into()))?;
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

/// Streams: 0 drives training, 1 generates synthetic data.
fn rngs(seed: u64) -> (ChaCha8Rng, ChaCha8Rng) {
    let train = ChaCha8Rng::seed_from_u64(seed);
    let mut data = ChaCha8Rng::seed_from_u64(seed);
    data.set_stream(1);
    (train, data)
}

fn synth_split(cfg: &RunConfig, rng: &mut ChaCha8Rng) -> Result<(Dataset, Dataset)> {
    let c = cfg.synth_counts;
    let train = synth_generate(c.train_normal, c.train_tumor, cfg.extents, rng)?;
    let test = synth_generate(c.test_normal, c.test_tumor, cfg.extents, rng)?;
    Ok((train, test))
}

fn datasets(cfg: &RunConfig, rng: &mut ChaCha8Rng) -> Result<(Dataset, Dataset)> {
    match (&cfg.data, cfg.synth) {
        (Some(root), false) => Ok((
            load_image_dir(&root.join("train"), cfg.extents)?,
            load_image_dir(&root.join("test"), cfg.extents)?,
        )),
        (None, true) => synth_split(cfg, rng),
        _ => Err(Error::Config("exactly one of --synth or --data is required".into())),
    }
}

fn execute(command: Command) -> Result<()> {
    match &command {
        Command::Evaluate(args) => run_evaluate(args),
        Command::GenData(args) => {
            let cfg = resolve(&command, args)?;
            let dir = out_dir(&cfg)?;
            let (_, mut data_rng) = rngs(cfg.hyperparams.seed);
            let (train, test) = synth_split(&cfg, &mut data_rng)?;
            write_image_dir(&train, &dir.join("train"))?;
            write_image_dir(&test, &dir.join("test"))?;
            cfg.write_resolved(&dir)
        }
        Command::TrainRl(args) | Command::TrainSdl(args) => {
            let cfg = resolve(&command, args)?;
            let (mut rng, mut data_rng) = rngs(cfg.hyperparams.seed);
            let (train, test) = datasets(&cfg, &mut data_rng)?;
            let dir = out_dir(&cfg)?;
            let (net, record) = if matches!(command, Command::TrainRl(_)) {
                train_rl(
                    &train,
                    &test,
                    &cfg.hyperparams,
                    &cfg.architecture(HeadKind::QHead),
                    &mut rng,
                )?
            } else {
                train_sdl(
                    &train,
                    &test,
                    &cfg.hyperparams,
                    &cfg.architecture(HeadKind::SigmoidHead),
                    &mut rng,
                )?
            };
            emit_curve(&record, &dir.join("curve.csv"))?;
            save_checkpoint(&net, cfg.hyperparams.seed, &dir.join("model.ckpt"))?;
            cfg.write_resolved(&dir)
        }
        Command::Compare(args) => {
            let cfg = resolve(&command, args)?;
            let (_, mut data_rng) = rngs(cfg.hyperparams.seed);
            let (train, test) = datasets(&cfg, &mut data_rng)?;
            let dir = out_dir(&cfg)?;
            let h = &cfg.hyperparams;
            let (rl, rl_record) = train_rl(
                &train,
                &test,
                h,
                &cfg.architecture(HeadKind::QHead),
                &mut rngs(h.seed).0,
            )?;
            let (sdl, sdl_record) = train_sdl(
                &train,
                &test,
                h,
                &cfg.architecture(HeadKind::SigmoidHead),
                &mut rngs(h.seed).0,
            )?;
            emit_curve(&rl_record, &dir.join("rl_curve.csv"))?;
            emit_curve(&sdl_record, &dir.join("sdl_curve.csv"))?;
            save_checkpoint(&rl, h.seed, &dir.join("rl_model.ckpt"))?;
            save_checkpoint(&sdl, h.seed, &dir.join("sdl_model.ckpt"))?;
            let rl_acc = evaluate(&rl, &test, Method::Rl, h.alpha_overlay)?.accuracy;
            let sdl_acc = evaluate(&sdl, &test, Method::Sdl, h.alpha_overlay)?.accuracy;
            write_summary(&[("rl", rl_acc), ("sdl", sdl_acc)], &dir.join("summary.csv"))?;
            cfg.write_resolved(&dir)
        }
    }
}

fn run_evaluate(args: &EvaluateArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    if let Some(a) = args.alpha {
        cfg.hyperparams.alpha_overlay = a;
    }
    let (net, _) = load_checkpoint(&args.model)?;
    let arch = net.config();
    let extents = crate::data::Extents::new(arch.height, arch.width);
    let dataset = load_image_dir(&args.data, extents)?;
    let report = evaluate(
        &net,
        &dataset,
        Method::for_head(net.head()),
        cfg.hyperparams.alpha_overlay,
    )?;
    let dir = match &args.out {
        Some(d) => d.clone(),
        None => args.model.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    if !dir.as_os_str().is_empty() {
        std::fs::create_dir_all(&dir)?;
    }
    write_report(&report, &dir.join("report.csv"))?;
    println!("{} accuracy: {:.6}", report.method.name(), report.accuracy);
    Ok(())
}
