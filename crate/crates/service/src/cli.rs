//! Command-line interface.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use image::DynamicImage;
use omnitext_core::eval::{evaluate_task, load_cases, load_outputs, CommandRecognizer, TextRecognizer};
use omnitext_core::masks::{shrink_pixel_mask, ShrinkAnchor};
use omnitext_core::pipeline::TaskKind;
use omnitext_core::CharWidthPriors;

use crate::config::ServiceConfig;
use crate::error::{ServiceError, ServiceResult};
use crate::imaging::{open_gray, open_rgb, save_png};
use crate::run::{build_inputs, execute, open_session, InputImages, JobSpec, RunObserver, RunParams};

#[derive(Debug, Parser)]
#[command(name = "omnitext", version, about = "Edit, remove and restyle text in images")]
pub struct Cli {
    /// Service configuration file (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Backbone profile file (TOML); overrides the one in the config.
    #[arg(long, global = true)]
    pub profile: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Remove the text under the mask.
    Remove(RunArgs),
    /// Replace the text under the mask with `--text`.
    Edit(RunArgs),
    /// Write `--text` into an empty region, styled after existing text.
    Insert(RunArgs),
    /// Move text from `--remove-mask` to `--mask`.
    Reposition(RunArgs),
    /// Redraw text from `--remove-mask` at the size of `--mask`.
    Rescale(RunArgs),
    /// Insert text styled after `--ref`.
    StyleInsert(RunArgs),
    /// Replace text in the style of `--ref`.
    StyleEdit(RunArgs),
    /// Score generated outputs against a dataset.
    Eval(EvalArgs),
    /// Run the HTTP job service.
    Serve(ServeArgs),
    /// Preview the width-prior shrink of a mask.
    Shrink(ShrinkArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub mask: PathBuf,
    #[arg(long = "remove-mask")]
    pub remove_mask: Option<PathBuf>,
    #[arg(long)]
    pub text: Option<String>,
    #[arg(long = "source-text")]
    pub source_text: Option<String>,
    #[arg(long = "ref")]
    pub reference: Option<PathBuf>,
    #[arg(long = "ref-mask")]
    pub reference_mask: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long = "lambda-c")]
    pub lambda_c: Option<f64>,
    #[arg(long = "lambda-s")]
    pub lambda_s: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long = "opt-iters")]
    pub opt_iters: Option<usize>,
    /// Output directory for artifacts.
    #[arg(long, default_value = "omnitext-out")]
    pub out: PathBuf,
    /// Also write attention heatmaps every N steps.
    #[arg(long = "attention-every")]
    pub attention_every: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub outputs: PathBuf,
    #[arg(long)]
    pub task: TaskKind,
    /// Directory for report.json and report.md.
    #[arg(long, default_value = "omnitext-eval")]
    pub out: PathBuf,
    /// Recognizer executable; receives a PNG path and prints the text.
    #[arg(long)]
    pub recognizer: Option<PathBuf>,
    #[arg(long = "recognizer-arg", allow_hyphen_values = true)]
    pub recognizer_args: Vec<String>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub bind: Option<String>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum AnchorArg {
    Left,
    Center,
}

#[derive(Debug, Args)]
pub struct ShrinkArgs {
    #[arg(long)]
    pub mask: PathBuf,
    #[arg(long = "source-text")]
    pub source_text: String,
    #[arg(long = "target-text")]
    pub target_text: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "left")]
    pub anchor: AnchorArg,
}

impl Command {
    pub fn task(&self) -> Option<TaskKind> {
        Some(match self {
            Command::Remove(_) => TaskKind::Removal,
            Command::Edit(_) => TaskKind::Editing,
            Command::Insert(_) => TaskKind::Insertion,
            Command::Reposition(_) => TaskKind::Repositioning,
            Command::Rescale(_) => TaskKind::Rescaling,
            Command::StyleInsert(_) => TaskKind::StyleInsertion,
            Command::StyleEdit(_) => TaskKind::StyleEditing,
            _ => return None,
        })
    }
}

pub fn load_config(cli: &Cli) -> ServiceResult<ServiceConfig> {
    let mut config = ServiceConfig::load(cli.config.as_deref())?;
    if let Some(p) = &cli.profile {
        config.profile_path = Some(p.clone());
        config.resolve_profile()?;
    }
    Ok(config)
}

/// Runs a task subcommand and returns the written artifact paths.
pub fn run_task(task: TaskKind, args: &RunArgs, config: &ServiceConfig) -> ServiceResult<Vec<PathBuf>> {
    let gray = |p: &Option<PathBuf>| p.as_deref().map(open_gray).transpose();
    let images = InputImages {
        image: open_rgb(&args.image)?,
        mask: open_gray(&args.mask)?,
        removal_mask: gray(&args.remove_mask)?,
        reference: args.reference.as_deref().map(open_rgb).transpose()?,
        reference_mask: gray(&args.reference_mask)?,
    };
    let spec = JobSpec {
        task,
        text: args.text.clone(),
        source_text: args.source_text.clone(),
        params: RunParams {
            seed: args.seed,
            lambda_c: args.lambda_c,
            lambda_s: args.lambda_s,
            gamma: args.gamma,
            steps: args.steps,
            opt_iters: args.opt_iters,
        },
    };
    let inputs = build_inputs(&spec, images, config)?;
    let session = open_session(config)?;
    let mut observer = RunObserver::new(task, inputs.schedule.total_steps);
    if let Some(stride) = args.attention_every {
        observer = observer.with_attention(args.out.join(crate::run::ATTENTION_DIR), stride);
    }
    let names = execute(task, &inputs, &session, &args.out, &mut observer)?;
    Ok(names.into_iter().map(|n| args.out.join(n)).collect())
}

pub fn run_eval(args: &EvalArgs) -> ServiceResult<Vec<PathBuf>> {
    let cases = load_cases(&args.dataset)?;
    if cases.is_empty() {
        return Err(ServiceError::validation(format!("no cases in {}", args.dataset.display())));
    }
    let outputs = load_outputs(&args.outputs, &cases)?;
    let mut recognizer = args
        .recognizer
        .as_ref()
        .map(|p| CommandRecognizer::new(p.clone(), args.recognizer_args.clone()));
    let report = evaluate_task(
        &cases,
        &outputs,
        args.task,
        recognizer.as_mut().map(|r| r as &mut dyn TextRecognizer),
        None,
    )?;
    std::fs::create_dir_all(&args.out)?;
    let json = args.out.join("report.json");
    let md = args.out.join("report.md");
    std::fs::write(&json, report.to_json()?)?;
    std::fs::write(&md, report.markdown_table())?;
    Ok(vec![json, md])
}

pub fn run_shrink(args: &ShrinkArgs) -> ServiceResult<Vec<PathBuf>> {
    let mask = open_gray(&args.mask)?;
    let anchor = match args.anchor {
        AnchorArg::Left => ShrinkAnchor::Left,
        AnchorArg::Center => ShrinkAnchor::Center,
    };
    let out = shrink_pixel_mask(&mask, &args.source_text, &args.target_text, &CharWidthPriors::default(), anchor)?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    save_png(&DynamicImage::ImageLuma8(out.mask), &args.out)?;
    Ok(vec![args.out.clone()])
}

pub fn print_paths(paths: &[PathBuf]) {
    for p in paths {
        println!("{}", p.display());
    }
}
