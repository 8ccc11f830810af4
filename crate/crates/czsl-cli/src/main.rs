//! czsl: train and evaluate continual generalized zero-shot learners.
//!
//! Subcommands cover the whole experiment lifecycle: `synth` writes a
//! synthetic dataset directory, `split` builds a task schedule (generic or
//! one of the published preset tables), `train` runs the continual protocol
//! and writes report files plus per-task checkpoints, `eval` recomputes
//! metrics from saved checkpoints without training, and `report` pretty-
//! prints an existing report.
//!
//! Exit codes are a stable contract: 0 success, 2 usage or validation
//! problems, 3 a loss going non-finite during training, 1 I/O failures.
//! `CZSL_SEED` overrides the config seed; explicit `--seed` flags override
//! both.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use czsl_core::config::RunConfig;
use czsl_core::continual::{
    assemble_report, build_preset, build_schedule, evaluate_task, run_experiment, Preset, Setting,
    TaskSchedule,
};
use czsl_core::data::{load_dataset, save_dataset, synth_dataset, SynthConfig};
use czsl_core::eval::{metrics_csv, read_report, write_report, ExperimentReport};
use czsl_core::model::{load_checkpoint, save_checkpoint, CGZSLModel};
use czsl_core::{Dataset, Error, Result};

#[derive(Parser)]
#[command(name = "czsl", version, about = "Continual generalized zero-shot learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory
    Synth(SynthArgs),
    /// Build a task schedule from a dataset or a published preset table
    Split(SplitArgs),
    /// Run the continual protocol; write report files and checkpoints
    Train(TrainArgs),
    /// Recompute metrics from saved checkpoints without training
    Eval(EvalArgs),
    /// Print the summary of an existing report.json
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// number of classes (at least 4, so every setting can split them)
    #[arg(long, default_value_t = 20)]
    classes: usize,
    /// visual feature dimension
    #[arg(long = "dim-x", default_value_t = 32)]
    dim_x: usize,
    /// attribute dimension
    #[arg(long = "dim-a", default_value_t = 16)]
    dim_a: usize,
    /// feature rows per class
    #[arg(long = "per-class", default_value_t = 40)]
    per_class: usize,
    /// noise scale around each class mean
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    /// generation seed (default 7; CZSL_SEED overrides, this flag wins)
    #[arg(long)]
    seed: Option<u64>,
    /// dataset name recorded in the manifest
    #[arg(long, default_value = "synthetic")]
    name: String,
    /// output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SplitArgs {
    /// dataset directory to split (mutually exclusive with --preset)
    #[arg(long, conflicts_with = "preset")]
    data: Option<PathBuf>,
    /// published split table: apy | awa1 | awa2 | cub | sun
    #[arg(long)]
    preset: Option<String>,
    /// class arrival protocol: static | dynamic | online
    #[arg(long)]
    setting: String,
    /// number of tasks (required with --data, implied by --preset)
    #[arg(long, conflicts_with = "preset")]
    tasks: Option<usize>,
    /// output schedule JSON path
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// dataset directory
    #[arg(long)]
    data: PathBuf,
    /// schedule JSON path
    #[arg(long)]
    schedule: PathBuf,
    /// run configuration JSON; defaults apply when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    /// output directory for report files and checkpoints
    #[arg(long)]
    out: PathBuf,
    /// master seed override (wins over CZSL_SEED and the config file)
    #[arg(long)]
    seed: Option<u64>,
    /// epochs per task override
    #[arg(long)]
    epochs: Option<usize>,
    /// minibatch size override
    #[arg(long = "batch-size")]
    batch_size: Option<usize>,
    /// optimizer learning rate override
    #[arg(long = "learning-rate")]
    learning_rate: Option<f64>,
    /// replay rows per class override
    #[arg(long = "replay-per-class")]
    replay_per_class: Option<usize>,
    /// disable a mechanism: replay | sal | nuclear | rcl | pcl | snl (repeatable)
    #[arg(long = "ablate", value_name = "MECHANISM")]
    ablate: Vec<String>,
}

#[derive(Args)]
struct EvalArgs {
    /// dataset directory
    #[arg(long)]
    data: PathBuf,
    /// schedule JSON path
    #[arg(long)]
    schedule: PathBuf,
    /// run configuration JSON; must match the training run to reproduce it
    #[arg(long)]
    config: Option<PathBuf>,
    /// directory holding ckpt_task_NNN.czsm files (a train run's --out)
    #[arg(long)]
    checkpoints: PathBuf,
    /// evaluate only tasks 1..=N, aggregating as if the run ended there
    #[arg(long)]
    task: Option<usize>,
    /// directory to write the recomputed report files into
    #[arg(long)]
    out: Option<PathBuf>,
    /// master seed override (wins over CZSL_SEED and the config file)
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ReportArgs {
    /// path to a report.json
    #[arg(long)]
    report: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Split(args) => cmd_split(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Report(args) => cmd_report(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Numeric(_) => 3,
                Error::Io(_) => 1,
                _ => 2,
            })
        }
    }
}

/// Seed precedence: explicit flag, then CZSL_SEED, then the fallback
/// (config file value or built-in default).
fn resolve_seed(flag: Option<u64>, fallback: u64) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var("CZSL_SEED") {
        Ok(text) => text
            .parse()
            .map_err(|_| Error::validation("CZSL_SEED", format!("not an unsigned integer: {text}"))),
        Err(_) => Ok(fallback),
    }
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    if args.classes < 4 {
        return Err(Error::validation("classes", "at least 4 classes are required"));
    }
    let cfg = SynthConfig {
        num_classes: args.classes,
        rows_per_class: args.per_class,
        feature_dim: args.dim_x,
        attribute_dim: args.dim_a,
        noise: args.noise,
    };
    let seed = resolve_seed(args.seed, 7)?;
    let ds = synth_dataset(&args.name, &cfg, seed)?;
    save_dataset(&args.out, &ds)?;
    println!(
        "wrote {} classes x {} rows to {}",
        args.classes,
        args.per_class,
        args.out.display()
    );
    Ok(())
}

fn cmd_split(args: SplitArgs) -> Result<()> {
    let setting = Setting::from_tag(&args.setting)?;
    let schedule = match (&args.preset, &args.data) {
        (Some(name), None) => build_preset(Preset::from_tag(name)?, setting),
        (None, Some(dir)) => {
            let tasks = args
                .tasks
                .ok_or_else(|| Error::validation("tasks", "required when splitting a dataset"))?;
            let ds = load_dataset(dir)?;
            build_schedule(ds.num_classes(), setting, tasks)?
        }
        _ => {
            return Err(Error::validation(
                "data",
                "give exactly one of --data or --preset",
            ))
        }
    };
    schedule.save(&args.out)?;
    println!(
        "wrote a {}-task {} schedule over {} classes to {}",
        schedule.num_tasks(),
        schedule.setting.tag(),
        schedule.num_classes,
        args.out.display()
    );
    Ok(())
}

/// Loads the config file (or defaults), then applies flag overrides.
fn resolve_config(
    path: &Option<PathBuf>,
    seed: Option<u64>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    learning_rate: Option<f64>,
    replay_per_class: Option<usize>,
    ablate: &[String],
) -> Result<RunConfig> {
    let mut run = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    run.train.seed = resolve_seed(seed, run.train.seed)?;
    if let Some(v) = epochs {
        run.train.epochs = v;
    }
    if let Some(v) = batch_size {
        run.train.batch_size = v;
    }
    if let Some(v) = learning_rate {
        run.train.optimizer.learning_rate = v;
    }
    if let Some(v) = replay_per_class {
        run.train.replay_per_class = v;
    }
    for mechanism in ablate {
        match mechanism.as_str() {
            "replay" => run.ablation.replay = false,
            "sal" => run.ablation.sal = false,
            "nuclear" => run.ablation.nuclear = false,
            "rcl" => run.ablation.rcl = false,
            "pcl" => run.ablation.pcl = false,
            "snl" => run.ablation.snl = false,
            other => {
                return Err(Error::validation(
                    "ablate",
                    format!("unknown mechanism `{other}` (expected replay, sal, nuclear, rcl, pcl, or snl)"),
                ))
            }
        }
    }
    run.validate()?;
    Ok(run)
}

fn checkpoint_path(dir: &Path, t: usize) -> PathBuf {
    dir.join(format!("ckpt_task_{t:03}.czsm"))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.9}")).unwrap_or_else(|| "n/a".into())
}

fn summary_line(report: &ExperimentReport) -> String {
    format!(
        "mSA={:.9} mUA={} mH={}",
        report.m_sa,
        fmt_opt(report.m_ua),
        fmt_opt(report.m_h)
    )
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let run = resolve_config(
        &args.config,
        args.seed,
        args.epochs,
        args.batch_size,
        args.learning_rate,
        args.replay_per_class,
        &args.ablate,
    )?;
    let dataset = load_dataset(&args.data)?;
    let schedule = TaskSchedule::load(&args.schedule)?;
    let outcome = run_experiment(&dataset, &schedule, &run)?;

    write_report(&outcome.report, &args.out)?;
    for (i, model) in outcome.models.iter().enumerate() {
        let mut w = BufWriter::new(File::create(checkpoint_path(&args.out, i + 1))?);
        save_checkpoint(&mut w, model)?;
    }
    for (i, shortfall) in outcome.replay_shortfalls.iter().enumerate() {
        for (class, missing) in shortfall {
            eprintln!(
                "warning: replay for class {class} at task {} fell {missing} rows short",
                i + 1
            );
        }
    }
    println!("{}", summary_line(&outcome.report));
    Ok(())
}

/// Checkpoints store only network parameters; the class bookkeeping is
/// rebuilt here by replaying the schedule's registrations up to task `t`.
fn load_model_for(
    dataset: &Dataset,
    schedule: &TaskSchedule,
    dir: &Path,
    t: usize,
) -> Result<CGZSLModel> {
    let path = checkpoint_path(dir, t);
    let mut r = BufReader::new(File::open(&path)?);
    let mut model = load_checkpoint(&mut r)?;
    if model.config.d_x != dataset.feature_dim() || model.config.d_a != dataset.attribute_dim() {
        return Err(Error::validation(
            "checkpoints",
            format!(
                "{} holds a {}x{} model but the dataset is {}x{}",
                path.display(),
                model.config.d_x,
                model.config.d_a,
                dataset.feature_dim(),
                dataset.attribute_dim()
            ),
        ));
    }
    for j in 1..=t {
        let spec = schedule.task(j)?;
        model.register_task(
            &spec.new_seen,
            &schedule.registration_unseen_at(j)?,
            &spec.converted,
            &dataset.attributes,
        )?;
    }
    Ok(model)
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let run = resolve_config(&args.config, args.seed, None, None, None, None, &[])?;
    let dataset = load_dataset(&args.data)?;
    let schedule = TaskSchedule::load(&args.schedule)?;
    if schedule.num_classes != dataset.num_classes() {
        return Err(Error::validation(
            "schedule",
            format!(
                "schedule covers {} classes but the dataset has {}",
                schedule.num_classes,
                dataset.num_classes()
            ),
        ));
    }
    let last = args.task.unwrap_or_else(|| schedule.num_tasks());
    if last == 0 || last > schedule.num_tasks() {
        return Err(Error::validation(
            "task",
            format!("task {last} is outside 1..={}", schedule.num_tasks()),
        ));
    }
    let mut evals = Vec::with_capacity(last);
    for t in 1..=last {
        let model = load_model_for(&dataset, &schedule, &args.checkpoints, t)?;
        evals.push(evaluate_task(&model, &dataset, &schedule, t, &run)?);
    }
    let report = assemble_report(schedule.setting, &evals, &run)?;
    if let Some(out) = &args.out {
        write_report(&report, out)?;
    }
    println!("{}", summary_line(&report));
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<()> {
    let report = read_report(&args.report)?;
    print!("{}", metrics_csv(&report));
    println!(
        "setting={} T={} {} forgetting={:.9} mAUSUC={}",
        report.setting.tag(),
        report.num_tasks,
        summary_line(&report),
        report.forgetting,
        fmt_opt(report.m_ausuc)
    );
    Ok(())
}
