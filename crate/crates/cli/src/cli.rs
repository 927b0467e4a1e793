use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::warn;

use panocompose::candidates::{GenerationConfig, DEFAULT_LAMBDA, DEFAULT_M_MAX, DEFAULT_STEP_DEG};
use panocompose::gradcheck::{run_gradcheck, DEFAULT_TRIALS};
use panocompose::labeling::DEFAULT_TOP_N;
use panocompose::manifest::{manifest_base_dir, write_atomic, Manifest, RenderSettings};
use panocompose::metrics::DEFAULT_DECISION_THRESHOLD;
use panocompose::pipeline::{
    read_predictions, report_json, run_candidates, run_eval, run_label, synth_dataset, SceneError, ScorerSpec,
    StepOutcome, SynthDataset,
};
use panocompose::projection::{
    render_view, view_rect_of, CameraIntrinsics, CameraPose, ErpImage, DEFAULT_FOV_Y_DEG, DEFAULT_VIEW_HEIGHT,
    DEFAULT_VIEW_WIDTH,
};
use panocompose::synth::{synthesize, Pattern};

use crate::serve::{serve, ServeConfig};

#[derive(Debug, Parser)]
#[command(name = "pano-compose", version, about = "Compose perspective views from 360° panoramas")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a procedural panorama, or a whole dataset with a manifest.
    Synth(SynthArgs),
    /// Render one perspective view out of a panorama.
    Extract(ExtractArgs),
    /// Populate candidate views for every scene of a manifest.
    Candidates(CandidatesArgs),
    /// Score candidates and attach suggestion/adjustment labels.
    Label(LabelArgs),
    /// Evaluate predictions against a labeled manifest.
    Eval(EvalArgs),
    /// Check analytic loss gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Serve a manifest over HTTP for the viewer.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// Vertical field of view of rendered views, degrees.
    #[arg(long = "fov-y")]
    pub fov_y: Option<f64>,
    #[arg(long = "view-width")]
    pub view_width: Option<u32>,
    #[arg(long = "view-height")]
    pub view_height: Option<u32>,
}

impl RenderArgs {
    fn apply(&self, base: RenderSettings) -> RenderSettings {
        RenderSettings {
            fov_y_deg: self.fov_y.unwrap_or(base.fov_y_deg),
            width: self.view_width.unwrap_or(base.width),
            height: self.view_height.unwrap_or(base.height),
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 2048)]
    pub width: u32,
    #[arg(long, default_value_t = 1024)]
    pub height: u32,
    /// direction, checkerboard or horizon
    #[arg(long, default_value = "horizon")]
    pub pattern: Pattern,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output image (single panorama mode).
    #[arg(long, required_unless_present = "dataset", conflicts_with = "dataset")]
    pub out: Option<PathBuf>,
    /// Output directory for a dataset of `--count` scenes and its manifest.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    pub count: usize,
    #[command(flatten)]
    pub render: RenderArgs,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub erp: PathBuf,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub theta: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub phi: f64,
    #[arg(long = "fov-y", default_value_t = DEFAULT_FOV_Y_DEG)]
    pub fov_y: f64,
    #[arg(long, default_value_t = DEFAULT_VIEW_WIDTH)]
    pub width: u32,
    #[arg(long, default_value_t = DEFAULT_VIEW_HEIGHT)]
    pub height: u32,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CandidatesArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Ring step for both yaw and pitch, degrees.
    #[arg(long = "step-deg", default_value_t = DEFAULT_STEP_DEG)]
    pub step_deg: f64,
    /// Separate yaw step; defaults to --step-deg.
    #[arg(long = "step-theta")]
    pub step_theta: Option<f64>,
    /// Separate pitch step; defaults to --step-deg.
    #[arg(long = "step-phi")]
    pub step_phi: Option<f64>,
    #[arg(long = "m-max", default_value_t = DEFAULT_M_MAX)]
    pub m_max: u32,
    #[arg(long, default_value_t = DEFAULT_LAMBDA)]
    pub lambda: f64,
    /// Allow lambda below 0.5.
    #[arg(long = "test-mode")]
    pub test_mode: bool,
    #[command(flatten)]
    pub render: RenderArgs,
}

#[derive(Debug, Args)]
pub struct LabelArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// heuristic or csv:<path>
    #[arg(long, default_value = "heuristic")]
    pub scorer: ScorerSpec,
    /// Fraction of candidates above the threshold score.
    #[arg(long = "top-n", default_value_t = DEFAULT_TOP_N)]
    pub top_n: f64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// JSONL with scene_id, suggest_prob, d_theta_deg, d_phi_deg.
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Report path; printed to standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_DECISION_THRESHOLD)]
    pub threshold: f64,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_TRIALS)]
    pub trials: usize,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Directory panorama paths resolve against; defaults to the manifest's.
    #[arg(long = "data-dir")]
    pub data_dir: Option<PathBuf>,
    /// Ratings file; defaults to ratings.jsonl in the data directory.
    #[arg(long)]
    pub ratings: Option<PathBuf>,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Extract(a) => cmd_extract(a),
        Command::Candidates(a) => cmd_candidates(a),
        Command::Label(a) => cmd_label(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Serve(a) => cmd_serve(a),
    }
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    if let Some(dir) = a.dataset {
        let cfg = SynthDataset {
            count: a.count,
            width: a.width,
            height: a.height,
            pattern: a.pattern,
            seed: a.seed,
        };
        let render = a.render.apply(RenderSettings::default());
        let (m, path) = synth_dataset(&dir, &cfg, render)?;
        println!("wrote {} scenes to {}", m.scenes.len(), path.display());
        return Ok(());
    }
    let out = a.out.expect("clap enforces --out or --dataset");
    let erp = synthesize(a.width, a.height, a.pattern, a.seed)?;
    erp.pixels()
        .save(&out)
        .with_context(|| format!("cannot write {}", out.display()))?;
    println!("wrote {}x{} {} panorama to {}", a.width, a.height, a.pattern, out.display());
    Ok(())
}

fn cmd_extract(a: ExtractArgs) -> Result<()> {
    let pose = CameraPose::new(a.theta, a.phi)?;
    let k = CameraIntrinsics::from_fov(a.fov_y, a.width, a.height)?;
    let erp = ErpImage::open(&a.erp)?;
    let view = render_view(&erp, &pose, &k);
    let bytes = view.to_png_bytes()?;
    write_atomic(&a.out, &bytes)?;
    let rect = view_rect_of(&pose, &k);
    println!(
        "rect center_theta_deg={} center_phi_deg={} alpha_deg={:.6} beta_deg={:.6} area_sr={:.9}",
        rect.center().theta(),
        rect.center().phi(),
        rect.alpha(),
        rect.beta(),
        rect.area()
    );
    Ok(())
}

fn report_scene_errors(errors: &[SceneError]) {
    for e in errors {
        warn!("{e}");
        eprintln!("scene-error: {e}");
    }
}

fn finish_step<S>(outcome: &mut StepOutcome<S>, input: &Path, out: &Path, step: &str) -> Result<()> {
    outcome
        .manifest
        .rebase_paths(&manifest_base_dir(input), &manifest_base_dir(out))?;
    outcome.manifest.write(out)?;
    report_scene_errors(&outcome.errors);
    if outcome.all_failed() {
        bail!("{step} failed for all {} scenes", outcome.manifest.scenes.len());
    }
    Ok(())
}

fn cmd_candidates(a: CandidatesArgs) -> Result<()> {
    let mut manifest = Manifest::read(&a.manifest)?;
    manifest.header.render = a.render.apply(manifest.header.render);
    let cfg = GenerationConfig {
        step_theta: a.step_theta.unwrap_or(a.step_deg),
        step_phi: a.step_phi.unwrap_or(a.step_deg),
        m_max: a.m_max,
        lambda: a.lambda,
        test_mode: a.test_mode,
        intrinsics: manifest.header.render.intrinsics()?,
    };
    let mut outcome = run_candidates(&manifest, &manifest_base_dir(&a.manifest), &cfg)?;
    println!("{}", outcome.summary);
    finish_step(&mut outcome, &a.manifest, &a.out, "candidate generation")
}

fn cmd_label(a: LabelArgs) -> Result<()> {
    let manifest = Manifest::read(&a.manifest)?;
    let scorer = a.scorer.build()?;
    let mut outcome = run_label(
        &manifest,
        &manifest_base_dir(&a.manifest),
        scorer.as_ref(),
        &a.scorer.to_string(),
        a.top_n,
    )?;
    println!("{}", outcome.summary);
    finish_step(&mut outcome, &a.manifest, &a.out, "labeling")
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let preds = read_predictions(&a.predictions)?;
    let manifest = Manifest::read(&a.manifest)?;
    let report = report_json(&run_eval(&preds, &manifest, a.threshold)?);
    match a.out {
        Some(p) => {
            write_atomic(&p, report.as_bytes())?;
            print!("{report}");
        }
        None => print!("{report}"),
    }
    Ok(())
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<()> {
    let report = run_gradcheck(a.seed, a.trials)?;
    println!("{report}");
    if !report.passed() {
        bail!("gradcheck failed");
    }
    Ok(())
}

fn cmd_serve(a: ServeArgs) -> Result<()> {
    let manifest = Manifest::read(&a.manifest)?;
    let data_dir = a.data_dir.unwrap_or_else(|| manifest_base_dir(&a.manifest));
    if !data_dir.is_dir() {
        bail!("data directory {} does not exist", data_dir.display());
    }
    let ratings = a.ratings.unwrap_or_else(|| data_dir.join("ratings.jsonl"));
    let cfg = ServeConfig {
        manifest_path: a.manifest,
        data_dir,
        ratings_path: ratings,
    };
    let runtime = tokio::runtime::Runtime::new().context("cannot start async runtime")?;
    runtime.block_on(serve(cfg, manifest, &a.host, a.port))
}

/// Flattens an error chain onto one line, skipping causes whose text the
/// outer message already includes.
pub fn one_line(err: &anyhow::Error) -> String {
    let mut line = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if !line.contains(&text) {
            if !line.is_empty() {
                line.push_str(": ");
            }
            line.push_str(&text);
        }
    }
    line.replace(['\n', '\r'], " ")
}
