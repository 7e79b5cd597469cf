//! `grabar <subcommand>`: dataset generation, training, evaluation, composition, gradient
//! checking and timing behind one entry point.
//!
//! Settings resolve as built-in defaults, then a TOML file (`--config`, else the
//! `GRABAR_CONFIG` variable), then flags. Exit codes: 0 success, 1 domain error, 2 usage error.

mod config;

pub use config::{DataConfig, GlobalConfig, PathsConfig, CONFIG_ENV};

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::compositor::{run_pipeline, CloseShape};
use crate::dataset::{generate_dataset, generate_synthetic_sample, read_dataset, read_image, write_dataset, ObjectSpec, Origin};
use crate::error::Error;
use crate::evaluation::{emit_plots, evaluate, export_report, profile, EvalReport, ReportFormat};
use crate::losses::gradcheck::run_suite;
use crate::model::Networks;
use crate::training::{train, Checkpoint, Phase, RunOptions, TrainData, METRICS_FILE};

#[derive(Parser, Debug)]
#[command(name = "grabar", version, about = "Hand/virtual-object occlusion prediction and AR compositing")]
struct Cli {
    /// TOML configuration file; overrides GRABAR_CONFIG.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed for every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// error, warn, info, debug or trace.
    #[arg(long, global = true)]
    log_level: Option<String>,
    /// Run on a single worker thread.
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset.
    GenData(GenDataArgs),
    /// Train the segmentation network or both networks.
    Train(TrainArgs),
    /// Per-object ODSC report for a checkpoint.
    Eval(EvalArgs),
    /// Predict, clean up and compose every input in a directory.
    Compose(ComposeArgs),
    /// Finite-difference check of every loss gradient.
    Gradcheck(GradcheckArgs),
    /// Per-stage timing of one frame.
    Profile(ProfileArgs),
}

#[derive(Args, Debug)]
struct GenDataArgs {
    #[arg(long)]
    count: usize,
    /// Comma-separated object names; all objects when omitted.
    #[arg(long, value_delimiter = ',')]
    objects: Option<Vec<String>>,
    /// Objects to flag as unseen in the manifest.
    #[arg(long, value_delimiter = ',')]
    unseen: Option<Vec<String>>,
    /// Square raster size; see also --height/--width.
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long, value_enum)]
    origin: Option<OriginArg>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum OriginArg {
    Synthetic,
    Real,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    real_data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<u64>,
    /// Total iteration count; overrides --epochs.
    #[arg(long)]
    iterations: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, value_enum)]
    phase: Option<PhaseArg>,
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Segmentation checkpoint that seeds a joint run.
    #[arg(long)]
    seg_ckpt: Option<PathBuf>,
    #[arg(long)]
    checkpoint_every: Option<u64>,
    /// Disable data augmentation.
    #[arg(long)]
    no_augment: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PhaseArg {
    Seg,
    Joint,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Apply median and close filtering before scoring.
    #[arg(long)]
    postprocess: bool,
    /// Report path; `.csv` selects CSV, anything else JSON.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory for the ODSC bar chart (and loss curve with --metrics).
    #[arg(long)]
    plots: Option<PathBuf>,
    /// Training metrics file for the loss curve.
    #[arg(long)]
    metrics: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ComposeArgs {
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long = "in")]
    input: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    median: Option<usize>,
    #[arg(long)]
    close: Option<usize>,
    #[arg(long, value_enum)]
    close_shape: Option<ShapeArg>,
    /// Background image; the hand image is used when omitted.
    #[arg(long)]
    background: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ShapeArg {
    Square,
    Disk,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 8)]
    size: usize,
    #[arg(long, default_value_t = 20)]
    instances: usize,
}

#[derive(Args, Debug)]
struct ProfileArgs {
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    repeats: usize,
    /// Dataset whose first sample is timed; a generated sample is used otherwise.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Size of the generated sample.
    #[arg(long)]
    size: Option<usize>,
    /// Optional JSON output.
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Domain(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Domain(e)
    }
}

type Outcome = std::result::Result<(), Failure>;

fn required(flag: Option<PathBuf>, fallback: &Option<PathBuf>, name: &str) -> std::result::Result<PathBuf, Failure> {
    flag.or_else(|| fallback.clone())
        .ok_or_else(|| Failure::Usage(format!("--{name} is required (or set paths.{name} in the config file)")))
}

/// Parses `argv` (program name first), runs the subcommand and returns the exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let mut cfg = match GlobalConfig::load(cli.config.as_deref()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(l) = &cli.log_level {
        cfg.log_level = l.clone();
    }
    cfg.deterministic |= cli.deterministic;
    let level = match cfg.log_level.parse::<log::LevelFilter>() {
        Ok(l) => l,
        Err(_) => {
            eprintln!("error: unknown log level `{}`", cfg.log_level);
            return 2;
        }
    };
    let _ = env_logger::Builder::new().filter_level(level).format_timestamp(None).try_init();

    let threads = if cfg.deterministic { 1 } else { 0 };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().expect("thread pool");
    let outcome = pool.install(|| run(cli.command, cfg));
    match outcome {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(Failure::Domain(e)) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn log_config(cfg: &GlobalConfig) {
    match toml::to_string(cfg) {
        Ok(t) => log::info!("resolved configuration:\n{t}"),
        Err(_) => log::info!("resolved configuration: {cfg:?}"),
    }
}

fn run(command: Command, mut cfg: GlobalConfig) -> Outcome {
    match command {
        Command::GenData(a) => {
            if let Some(o) = a.objects {
                cfg.data.objects = o;
            }
            if let Some(u) = a.unseen {
                cfg.data.unseen = u;
            }
            if let Some(s) = a.size {
                cfg.data.height = s;
                cfg.data.width = s;
            }
            cfg.data.height = a.height.unwrap_or(cfg.data.height);
            cfg.data.width = a.width.unwrap_or(cfg.data.width);
            if let Some(o) = a.origin {
                cfg.data.origin = match o {
                    OriginArg::Synthetic => Origin::Synthetic,
                    OriginArg::Real => Origin::Real,
                };
            }
            let out = required(a.out, &cfg.paths.out, "out")?;
            log_config(&cfg);
            gen_data(&cfg, a.count, &out)
        }
        Command::Train(a) => {
            let t = &mut cfg.train;
            t.epochs = a.epochs.unwrap_or(t.epochs);
            t.iterations = a.iterations.or(t.iterations);
            t.batch_size = a.batch_size.unwrap_or(t.batch_size);
            t.lr0 = a.lr.unwrap_or(t.lr0);
            t.checkpoint_every = a.checkpoint_every.unwrap_or(t.checkpoint_every);
            if let Some(p) = a.phase {
                t.phase = match p {
                    PhaseArg::Seg => Phase::SegPretrain,
                    PhaseArg::Joint => Phase::Joint,
                };
            }
            if a.no_augment {
                t.augment = crate::dataset::AugmentPolicy::none();
            }
            t.seed = cfg.seed;
            let data = required(a.data, &cfg.paths.data, "data")?;
            let out = required(a.out, &cfg.paths.out, "out")?;
            let real = a.real_data.or_else(|| cfg.paths.real_data.clone());
            let seg = a.seg_ckpt.or_else(|| cfg.paths.seg_ckpt.clone());
            log_config(&cfg);
            train_cmd(&cfg, &data, real.as_deref(), &out, a.resume.as_deref(), seg.as_deref())
        }
        Command::Eval(a) => {
            let ckpt = required(a.ckpt, &cfg.paths.ckpt, "ckpt")?;
            let data = required(a.data, &cfg.paths.data, "data")?;
            let out = required(a.out, &cfg.paths.out, "out")?;
            log_config(&cfg);
            eval_cmd(&cfg, &ckpt, &data, a.postprocess, &out, a.plots.as_deref(), a.metrics.as_deref())
        }
        Command::Compose(a) => {
            let pp = &mut cfg.postprocess;
            pp.median_kernel = a.median.unwrap_or(pp.median_kernel);
            pp.close_kernel = a.close.unwrap_or(pp.close_kernel);
            if let Some(s) = a.close_shape {
                pp.close_shape = match s {
                    ShapeArg::Square => CloseShape::Square,
                    ShapeArg::Disk => CloseShape::Disk,
                };
            }
            let ckpt = required(a.ckpt, &cfg.paths.ckpt, "ckpt")?;
            let input = required(a.input, &cfg.paths.data, "in")?;
            let out = required(a.out, &cfg.paths.out, "out")?;
            log_config(&cfg);
            compose_cmd(&cfg, &ckpt, &input, &out, a.background.as_deref())
        }
        Command::Gradcheck(a) => {
            log_config(&cfg);
            let report = run_suite(a.size, a.instances, cfg.seed)?;
            println!("{:<16} {:>9} {:>9} {:>14} {:>10}  result", "loss", "instances", "rejected", "max_rel_error", "tolerance");
            for e in &report.entries {
                println!(
                    "{:<16} {:>9} {:>9} {:>14.3e} {:>10.0e}  {}",
                    e.loss,
                    e.instances,
                    e.rejected,
                    e.max_rel_error,
                    e.tolerance,
                    if e.passed { "pass" } else { "FAIL" }
                );
            }
            if report.passed() {
                Ok(())
            } else {
                Err(Failure::Domain(Error::Contract("gradient check failed".into())))
            }
        }
        Command::Profile(a) => {
            let ckpt = required(a.ckpt, &cfg.paths.ckpt, "ckpt")?;
            if let Some(s) = a.size {
                cfg.data.height = s;
                cfg.data.width = s;
            }
            log_config(&cfg);
            profile_cmd(&cfg, &ckpt, a.repeats, a.data.as_deref(), a.out.as_deref())
        }
    }
}

fn gen_data(cfg: &GlobalConfig, count: usize, out: &Path) -> Outcome {
    let specs: Vec<ObjectSpec> = cfg
        .data
        .objects
        .iter()
        .map(|o| {
            ObjectSpec::new(o.as_str())
                .with_size(cfg.data.height, cfg.data.width)
                .with_origin(cfg.data.origin)
                .with_seen(!cfg.data.unseen.contains(o))
        })
        .collect();
    if specs.is_empty() {
        return Err(Failure::Usage("no objects selected".into()));
    }
    let samples = generate_dataset(count, cfg.seed, &specs)?;
    write_dataset(out, &samples)?;
    println!("wrote {} samples to {}", samples.len(), out.display());
    Ok(())
}

fn train_cmd(
    cfg: &GlobalConfig,
    data: &Path,
    real: Option<&Path>,
    out: &Path,
    resume: Option<&Path>,
    seg: Option<&Path>,
) -> Outcome {
    let data = TrainData {
        synthetic: read_dataset(data)?,
        real: match real {
            Some(r) => read_dataset(r)?,
            None => Vec::new(),
        },
    };
    let options = RunOptions {
        network: cfg.network.clone(),
        out_dir: Some(out.to_path_buf()),
        resume: resume.map(Checkpoint::load).transpose()?,
        seg_checkpoint: seg.map(Checkpoint::load).transpose()?,
        stop_after: None,
    };
    let ck = train(&cfg.train, &data, &options)?;
    match ck.history.last() {
        Some(r) => println!(
            "finished {} iterations: total {:.6e}, l_seg {:.6e}; checkpoint {}",
            r.iteration,
            r.breakdown.total,
            r.l_seg,
            out.join("final.grabar").display()
        ),
        None => println!("nothing to do: checkpoint already complete"),
    }
    Ok(())
}

fn print_report(report: &EvalReport) {
    println!("{:<12} {:<10} {:>8} {:>7}", "object", "pose", "ODSC", "samples");
    for r in &report.rows {
        let name = if r.seen { r.object_name.clone() } else { format!("{}*", r.object_name) };
        println!("{:<12} {:<10} {:>8.4} {:>7}", name, r.pose_id, r.odsc, r.sample_count);
    }
    println!("{:<23} {:>8.4} {:>7}", "aggregate", report.aggregate, report.sample_count());
}

fn eval_cmd(
    cfg: &GlobalConfig,
    ckpt: &Path,
    data: &Path,
    postprocess: bool,
    out: &Path,
    plots: Option<&Path>,
    metrics: Option<&Path>,
) -> Outcome {
    let ck = Checkpoint::load(ckpt)?;
    let nets = Networks::bind(&ck.network, &ck.params)?;
    let samples = read_dataset(data)?;
    let pp = postprocess.then_some(&cfg.postprocess);
    let report = evaluate(&nets, &ck.params, &samples, pp, ck.train.tint)?;
    export_report(&report, out, ReportFormat::from_path(out))?;
    print_report(&report);
    if let Some(dir) = plots {
        let metrics = metrics.map(Path::to_path_buf).or_else(|| {
            let beside = ckpt.parent()?.join(METRICS_FILE);
            beside.exists().then_some(beside)
        });
        for f in emit_plots(&report, dir, metrics.as_deref())? {
            println!("plot {}", f.display());
        }
    }
    Ok(())
}

fn compose_cmd(cfg: &GlobalConfig, ckpt: &Path, input: &Path, out: &Path, background: Option<&Path>) -> Outcome {
    let ck = Checkpoint::load(ckpt)?;
    let bg = background.map(read_image).transpose()?;
    let summary = run_pipeline(input, &ck, out, &cfg.postprocess, bg.as_ref())?;
    println!("composed {} frames into {}", summary.processed, out.display());
    for f in &summary.failed {
        println!("failed {}: {}", f.id, f.error);
    }
    if summary.failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Domain(Error::Contract(format!("{} inputs failed", summary.failed.len()))))
    }
}

fn profile_cmd(cfg: &GlobalConfig, ckpt: &Path, repeats: usize, data: Option<&Path>, out: Option<&Path>) -> Outcome {
    let ck = Checkpoint::load(ckpt)?;
    let nets = Networks::bind(&ck.network, &ck.params)?;
    let sample = match data {
        Some(d) => read_dataset(d)?
            .into_iter()
            .next()
            .ok_or_else(|| Error::EmptyDataset(d.display().to_string()))?,
        None => {
            let object = cfg.data.objects.first().map(String::as_str).unwrap_or("bar");
            generate_synthetic_sample(cfg.seed, &ObjectSpec::new(object).with_size(cfg.data.height, cfg.data.width))?
        }
    };
    let t = profile(&nets, &ck.params, &sample, repeats, &cfg.postprocess, ck.train.tint)?;
    println!("{:<12} {:>10}", "stage", "ms");
    for (name, ms) in t.stages() {
        println!("{name:<12} {ms:>10.3}");
    }
    println!("{:<12} {:>10.3}", "total", t.total);
    println!("{:<12} {:>10.2}", "fps", t.fps);
    if let Some(p) = out {
        let text = serde_json::to_string_pretty(&t).expect("profile serializes");
        std::fs::write(p, text).map_err(|e| Error::io(p, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(dispatch(["grabar", "frobnicate"]), 2);
        assert_eq!(dispatch(["grabar", "gradcheck", "--bogus"]), 2);
        assert_eq!(dispatch(["grabar", "--help"]), 0);
        assert_eq!(dispatch(["grabar", "eval", "--help"]), 0);
        assert_eq!(dispatch(["grabar", "gen-data", "--count", "2"]), 2);
    }

    #[test]
    fn domain_errors_exit_one() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("d");
        let out = out.to_str().unwrap();
        assert_eq!(dispatch(["grabar", "gen-data", "--count", "2", "--objects", "teapot", "--out", out]), 1);
        assert_eq!(dispatch(["grabar", "eval", "--ckpt", "/nonexistent.grabar", "--data", out, "--out", out]), 1);
    }

    #[test]
    fn gradcheck_passes() {
        assert_eq!(dispatch(["grabar", "gradcheck", "--instances", "2", "--seed", "4"]), 0);
    }
}
