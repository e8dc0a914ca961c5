//! Command-line surface. Each subcommand loads its inputs, delegates to the
//! library and writes its outputs atomically. Failures print one line
//! `error[<class>] <message>` to stderr and exit with [`Error::exit_code`].

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::codec::write_atomic;
use crate::config::RunConfig;
use crate::data::sample::parse_modality;
use crate::data::split::{read_splits, write_splits};
use crate::data::synth::write_synthetic;
use crate::data::{generate_synthetic, load_dataset, make_splits, Part, SampleRecord, SplitPlan, SyntheticSpec, Task};
use crate::error::{Error, Result};
use crate::eval::{ablate, export_features, render_features, run_cv_with};
use crate::explain::{explain_overlap_set, explain_sample, read_overlap_set, write_score_map, RolloutMode};
use crate::kv::KeyValues;
use crate::model::checkpoint::{read_checkpoint, write_checkpoint};
use crate::model::{AnyModel, Classifier};
use crate::train::{evaluate, render_history, train_model};

#[derive(Debug, Parser)]
#[command(name = "unicorn", version, about = "Multi-stain multiple-instance classifier over feature bags")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic multi-stain dataset (bags, manifest, spec echo).
    Synth(SynthArgs),
    /// Write grouped five-fold splits for a manifest.
    Split(SplitArgs),
    /// Train one fold and write the selected checkpoint, history and run metadata.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one part of one fold.
    Eval(EvalArgs),
    /// Single-modality, leave-one-out and CLS attention tables for one fold's test part.
    Ablate(EvalArgs),
    /// Patch-level attention, class-score and class-attention maps.
    Explain(ExplainArgs),
    /// Export penultimate features, one line per sample and mask.
    Export(ExportArgs),
    /// Train and test every fold; write per-fold and summary reports.
    Cv(CvArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Synthetic spec file (key=value); the reference spec when omitted.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Start from this task's defaults before applying the spec file.
    #[arg(long, value_enum, default_value_t = TaskArg::Planted)]
    pub task: TaskArg,
    /// Override one spec key (repeatable), e.g. --set seed=3.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TaskArg {
    Planted,
    Xor,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Seed of the split shuffle.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output split file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Run config file (key=value).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one config key (repeatable), e.g. --set lr=3e-4.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Fold to train.
    #[arg(long, default_value_t = 0)]
    pub fold: usize,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Split file; without it every manifest sample is used.
    #[arg(long)]
    pub splits: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub fold: usize,
    #[arg(long, value_enum, default_value_t = PartArg::Test)]
    pub part: PartArg,
    /// Output directory for the text and JSON reports.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PartArg {
    Train,
    Val,
    Test,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Manifest holding --sample-id.
    #[arg(long, requires = "sample_id")]
    pub manifest: Option<PathBuf>,
    /// Sample to explain with all of its bags.
    #[arg(long, requires = "manifest", conflicts_with = "bag_set")]
    pub sample_id: Option<String>,
    /// Directory of overlapping bags of one slide (NAME.unibag + NAME.coords, optional grid.coords).
    #[arg(long, required_unless_present = "sample_id")]
    pub bag_set: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = RolloutArg::TwoStage)]
    pub rollout: RolloutArg,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RolloutArg {
    TwoStage,
    ExpertOnly,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Single-modality variants to add per sample: comma-separated names, or "all".
    #[arg(long, default_value = "")]
    pub variants: String,
    /// Output feature file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CvArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes())?;
    println!("wrote {}", path.display());
    Ok(())
}

fn load_plan(path: &Path, fold: usize) -> Result<SplitPlan> {
    read_splits(path)?
        .into_iter()
        .find(|p| p.fold_id == fold)
        .ok_or_else(|| Error::Config(format!("fold {fold} not in {}", path.display())))
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let mut kv = match &a.spec {
        Some(p) => KeyValues::parse(
            &String::from_utf8(crate::codec::read_file(p)?)
                .map_err(|_| Error::Config(format!("{} is not UTF-8", p.display())))?,
        )?,
        None => KeyValues::default(),
    };
    if kv.get("task").is_none() {
        kv.set_assignment(match a.task {
            TaskArg::Planted => "task=planted",
            TaskArg::Xor => "task=xor",
        })?;
    }
    for o in &a.overrides {
        kv.set_assignment(o)?;
    }
    let spec = SyntheticSpec::from_key_values(&kv)?;
    let ds = generate_synthetic(&spec)?;
    let manifest = write_synthetic(&ds, &a.out)?;
    let task = match spec.task {
        Task::Planted => "planted",
        Task::Xor => "xor",
    };
    println!("{task} task: {} samples, manifest {}", ds.records.len(), manifest.display());
    Ok(())
}

fn cmd_split(a: &SplitArgs) -> Result<()> {
    let records = load_dataset(&a.manifest, None)?;
    let plans = make_splits(&records, a.seed)?;
    write_splits(&a.out, &plans)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let cfg = RunConfig::load(a.run.config.as_deref(), &a.run.overrides)?;
    let records = load_dataset(cfg.manifest()?, Some(cfg.model.feat_dim))?;
    let plan = load_plan(cfg.splits()?, a.fold)?;
    plan.validate(&records)?;
    let init = AnyModel::init(cfg.kind, &cfg.model, cfg.train.seed)?;
    let out = train_model(init, &records, &plan, &cfg.train)?;
    write_checkpoint(&a.out.join("checkpoint.unickpt"), &out.best)?;
    println!("wrote {}", a.out.join("checkpoint.unickpt").display());
    write_text(&a.out.join("history.tsv"), &render_history(&out.history))?;
    let best = out.best_epoch.map_or("none".to_string(), |e| e.to_string());
    let meta = format!(
        "{}fold={}\nbest_epoch={best}\nn_parameters={}\n",
        cfg.render(),
        a.fold,
        out.best.store().num_scalars()
    );
    write_text(&a.out.join("run.txt"), &meta)
}

fn part(p: PartArg) -> Part {
    match p {
        PartArg::Train => Part::Train,
        PartArg::Val => Part::Val,
        PartArg::Test => Part::Test,
    }
}

fn eval_inputs(a: &EvalArgs) -> Result<(AnyModel, Vec<SampleRecord>, Option<SplitPlan>)> {
    let model = read_checkpoint(&a.checkpoint)?;
    let records = load_dataset(&a.manifest, Some(model.config().feat_dim))?;
    let plan = a.splits.as_deref().map(|s| load_plan(s, a.fold)).transpose()?;
    Ok((model, records, plan))
}

fn selected<'r>(records: &'r [SampleRecord], plan: &Option<SplitPlan>, p: PartArg) -> Result<Vec<&'r SampleRecord>> {
    match plan {
        Some(plan) => plan.select(records, part(p)),
        None => Ok(records.iter().collect()),
    }
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let (model, records, plan) = eval_inputs(a)?;
    let chosen = selected(&records, &plan, a.part)?;
    let (metrics, _) = evaluate(&model, &chosen)?;
    print!("{}", metrics.render());
    if let Some(out) = &a.out {
        write_text(&out.join("metrics.tsv"), &metrics.render())?;
        write_text(
            &out.join("metrics.json"),
            &serde_json::to_string_pretty(&metrics).expect("metrics serialize"),
        )?;
    }
    Ok(())
}

fn cmd_ablate(a: &EvalArgs) -> Result<()> {
    let (model, records, plan) = eval_inputs(a)?;
    let chosen = selected(&records, &plan, a.part)?;
    let report = ablate(&model, &chosen)?;
    print!("{}", report.render());
    if let Some(out) = &a.out {
        write_text(&out.join("ablation.tsv"), &report.render())?;
        write_text(&out.join("ablation.json"), &report.to_json())?;
    }
    Ok(())
}

fn cmd_explain(a: &ExplainArgs) -> Result<()> {
    let model = read_checkpoint(&a.checkpoint)?;
    let params = model
        .as_unicorn()
        .ok_or_else(|| Error::Config(format!("explain needs a two-stage checkpoint, got {}", model.kind().as_str())))?;
    let mode = match a.rollout {
        RolloutArg::TwoStage => RolloutMode::TwoStage,
        RolloutArg::ExpertOnly => RolloutMode::ExpertOnly,
    };
    let map = match (&a.bag_set, &a.manifest, &a.sample_id) {
        (Some(dir), _, _) => explain_overlap_set(params, &read_overlap_set(dir)?, mode)?,
        (None, Some(manifest), Some(id)) => {
            let records = load_dataset(manifest, Some(params.config().feat_dim))?;
            let sample = records
                .iter()
                .find(|r| &r.sample_id == id)
                .ok_or_else(|| Error::Data(format!("sample {id:?} not in {}", manifest.display())))?;
            let mut map = explain_sample(params, sample, sample.present(), mode)?;
            map.normalize();
            map
        }
        _ => return Err(Error::Config("explain needs --bag-set or --manifest with --sample-id".into())),
    };
    for p in write_score_map(&a.out, &map)? {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn parse_variants(spec: &str, n_modalities: usize) -> Result<Vec<usize>> {
    match spec.trim() {
        "" => Ok(Vec::new()),
        "all" => Ok((0..n_modalities).collect()),
        list => list
            .split(',')
            .map(|name| {
                parse_modality(name.trim())
                    .filter(|m| *m < n_modalities)
                    .ok_or_else(|| Error::Config(format!("unknown modality {name:?}")))
            })
            .collect(),
    }
}

fn cmd_export(a: &ExportArgs) -> Result<()> {
    let model = read_checkpoint(&a.checkpoint)?;
    let records = load_dataset(&a.manifest, Some(model.config().feat_dim))?;
    let variants = parse_variants(&a.variants, model.config().n_modalities)?;
    let rows = export_features(&model, &records, &variants)?;
    write_text(&a.out, &render_features(&rows))
}

fn cmd_cv(a: &CvArgs) -> Result<()> {
    let cfg = RunConfig::load(a.run.config.as_deref(), &a.run.overrides)?;
    let records = load_dataset(cfg.manifest()?, Some(cfg.model.feat_dim))?;
    let plans = match &cfg.splits {
        Some(p) => read_splits(p)?,
        None => make_splits(&records, cfg.train.seed)?,
    };
    let report = run_cv_with(cfg.kind, &records, &plans, &cfg.model, &cfg.train, false)?;
    for f in &report.folds {
        write_text(&a.out.join(format!("history_fold{}.tsv", f.fold)), &render_history(&f.history))?;
    }
    write_text(&a.out.join("run.txt"), &cfg.render())?;
    write_text(&a.out.join("cv.tsv"), &report.render())?;
    write_text(&a.out.join("cv.json"), &report.to_json())?;
    print!("{}", report.render());
    Ok(())
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Split(a) => cmd_split(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Explain(a) => cmd_explain(a),
        Command::Export(a) => cmd_export(a),
        Command::Cv(a) => cmd_cv(a),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error[{}] {}", e.class(), e.to_string().replace('\n', " "));
            e.exit_code()
        }
    }
}
