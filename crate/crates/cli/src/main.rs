use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use rgbd_dyn::dataset::{Trajectory, DEFAULT_MAX_DIFF};
use rgbd_dyn::eval::{self, MaskAccumulator, DEFAULT_SEGMENT_LENGTHS};
use rgbd_dyn::pipeline::{self, PipelineConfig, PoseSource, RunSummary, Variant};
use rgbd_dyn::raster;
use rgbd_dyn::synth::{self, SceneSpec};

#[derive(Parser)]
#[command(name = "rgbd-dyn", version, about = "RGB-D tracking and moving-object handling for dynamic scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Track a sequence and write trajectory, masks, inpainted frames and metrics.
    Run(RunArgs),
    /// Segmentation only: like `run` but without inpainting output.
    Segment(RunArgs),
    /// Background inpainting of the masked regions of every frame.
    Inpaint(RunArgs),
    /// Render a synthetic RGB-D sequence to a TUM-layout directory.
    Synth(SynthArgs),
    /// Trajectory (ATE, RPE) and optional mask evaluation.
    Evaluate(EvalArgs),
    /// Choose the depth-difference threshold on a labeled sequence.
    Sweep(SweepArgs),
}

#[derive(Args, Clone)]
struct RunArgs {
    /// JSON configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Semantic mask directory (default `<dataset>/masks`).
    #[arg(long)]
    masks: Option<PathBuf>,
    /// Ground-truth dynamic masks, used for mask metrics only.
    #[arg(long)]
    gt_masks: Option<PathBuf>,
    /// none, N, G, N+G or N+G+BI.
    #[arg(long)]
    variant: Option<Variant>,
    /// tracked or ground-truth.
    #[arg(long)]
    pose_source: Option<PoseSource>,
    #[arg(long)]
    tau_z: Option<f64>,
    /// Number of recent keyframes used as inpainting sources.
    #[arg(long)]
    keyframes_inpaint: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_frames: Option<usize>,
}

impl RunArgs {
    fn config(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::from_json_file(p)?,
            None => PipelineConfig::default(),
        };
        if let Some(d) = &self.dataset {
            cfg.dataset = d.clone();
        }
        if let Some(m) = &self.masks {
            cfg.masks = Some(m.clone());
        }
        if let Some(m) = &self.gt_masks {
            cfg.gt_masks = Some(m.clone());
        }
        if let Some(v) = self.variant {
            cfg.variant = v;
        }
        if let Some(p) = self.pose_source {
            cfg.pose_source = p;
        }
        if let Some(t) = self.tau_z {
            cfg.segmentation.tau_z = t;
        }
        if let Some(n) = self.keyframes_inpaint {
            cfg.inpaint.keyframes = n;
        }
        if let Some(o) = &self.out {
            cfg.output = o.clone();
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(n) = self.max_frames {
            cfg.max_frames = Some(n);
        }
        if cfg.dataset.as_os_str().is_empty() {
            bail!("no dataset given (use --dataset or the config's \"dataset\" field)");
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct SynthArgs {
    /// Preset name (cuboid-walk, static) or a scene JSON file.
    #[arg(long, default_value = "cuboid-walk")]
    scene: String,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the scene's noise seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    frames: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    /// Estimated trajectory (TUM format).
    #[arg(long)]
    est: PathBuf,
    /// Ground-truth trajectory (TUM format).
    #[arg(long)]
    gt: PathBuf,
    #[arg(long, default_value_t = DEFAULT_MAX_DIFF)]
    max_diff: f64,
    /// Also estimate a scale (monocular-style alignment).
    #[arg(long)]
    scale: bool,
    /// RPE segment lengths in meters, comma separated.
    #[arg(long, value_delimiter = ',')]
    segment_lengths: Option<Vec<f64>>,
    /// Predicted mask directory, compared file-by-file with --gt-masks.
    #[arg(long, requires = "gt_masks")]
    pred_masks: Option<PathBuf>,
    #[arg(long, requires = "pred_masks")]
    gt_masks: Option<PathBuf>,
    #[arg(long, default_value = "eval")]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Candidate thresholds, comma separated (default 0.1 to 1.0 in steps of 0.1).
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<f64>>,
    /// Every n-th frame becomes a keyframe.
    #[arg(long, default_value_t = 5)]
    keyframe_step: usize,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(&a, Stage::Full),
        Command::Segment(a) => cmd_run(&a, Stage::Segment),
        Command::Inpaint(a) => cmd_run(&a, Stage::Inpaint),
        Command::Synth(a) => cmd_synth(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Sweep(a) => cmd_sweep(&a),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Stage {
    Full,
    Segment,
    Inpaint,
}

fn cmd_run(args: &RunArgs, stage: Stage) -> Result<()> {
    let mut cfg = args.config()?;
    match stage {
        Stage::Full => {}
        Stage::Segment => {
            if args.variant.is_none() && args.config.is_none() {
                cfg.variant = Variant::Geometric;
            }
            if cfg.variant == Variant::None {
                bail!("segmentation needs a variant other than none");
            }
            cfg.write_inpaint = Some(false);
            if cfg.variant == Variant::FusedInpainted {
                cfg.variant = Variant::Fused;
            }
        }
        Stage::Inpaint => {
            if cfg.variant == Variant::None {
                bail!("inpainting needs a variant other than none");
            }
            cfg.write_inpaint = Some(true);
        }
    }
    let summary = pipeline::run(&cfg)
        .with_context(|| format!("processing {}", cfg.dataset.display()))?;
    print_run(&summary, &cfg.output);
    Ok(())
}

fn print_run(s: &RunSummary, out: &Path) {
    println!("variant        {}", s.variant);
    println!("frames         {}", s.frames);
    println!("tracked        {:.1}%", s.tracked_percent);
    println!("keyframes      {}", s.keyframes);
    if let Some(a) = &s.ate {
        println!("ATE rmse       {:.4} m", a.rmse);
    }
    if let Some(r) = &s.rpe {
        println!("RPE            {:.3} %  {:.3} deg/100m", r.translational_percent, r.rotational_deg_per_100m);
    }
    if let Some(m) = &s.masks {
        println!("mask IoU       {:.3} (precision {:.3}, recall {:.3})", m.iou, m.precision, m.recall);
    }
    if let Some(c) = s.inpaint_coverage {
        println!("inpainted      {:.1}% of masked pixels", 100.0 * c);
    }
    println!("outputs        {} files under {}", s.outputs.len(), out.display());
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let mut spec = match synth::preset(&args.scene) {
        Some(s) => s,
        None => {
            let path = Path::new(&args.scene);
            if !path.exists() {
                bail!(
                    "unknown scene {:?}: not a preset ({}) or an existing file",
                    args.scene,
                    synth::PRESETS.join(", ")
                );
            }
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str::<SceneSpec>(&text).with_context(|| format!("parsing {}", path.display()))?
        }
    };
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    if let Some(n) = args.frames {
        spec.frames = n;
    }
    spec.write_dataset(&args.out)?;
    info!("wrote {} frames to {}", spec.frames, args.out.display());
    println!("{}", args.out.display());
    Ok(())
}

fn cmd_evaluate(args: &EvalArgs) -> Result<()> {
    let est = Trajectory::read_tum(&args.est)?;
    let gt = Trajectory::read_tum(&args.gt)?;
    let ate = eval::ate(&est, &gt, args.max_diff, args.scale)?;
    let lengths = args.segment_lengths.clone().unwrap_or_else(|| DEFAULT_SEGMENT_LENGTHS.to_vec());
    let rpe = match eval::rpe(&est, &gt, args.max_diff, &lengths) {
        Ok(r) => Some(r),
        Err(e) => {
            log::warn!("RPE skipped: {e}");
            None
        }
    };
    let masks = match (&args.pred_masks, &args.gt_masks) {
        (Some(p), Some(g)) => Some(compare_mask_dirs(p, g)?),
        _ => None,
    };

    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let aligned = args.out.join("aligned_trajectory.txt");
    eval::aligned_trajectory(&est, &ate)?.write_tum(&aligned)?;
    let report = serde_json::json!({
        "estimate": args.est,
        "groundtruth": args.gt,
        "ate": ate,
        "rpe": rpe,
        "masks": masks,
    });
    let json_path = args.out.join("evaluation.json");
    std::fs::write(&json_path, serde_json::to_string_pretty(&report)?)
        .with_context(|| format!("writing {}", json_path.display()))?;

    println!("matched poses  {}", ate.matched_pairs);
    println!("ATE rmse       {:.6} m", ate.rmse);
    println!("ATE mean       {:.6} m", ate.mean);
    println!("ATE median     {:.6} m", ate.median);
    println!("ATE max        {:.6} m", ate.max);
    if args.scale {
        println!("scale          {:.6}", ate.scale);
    }
    if let Some(r) = &rpe {
        println!("RPE trans      {:.4} %", r.translational_percent);
        println!("RPE rot        {:.4} deg/100m", r.rotational_deg_per_100m);
    }
    if let Some(m) = &masks {
        println!("mask IoU       {:.4}", m.iou);
        println!("mask precision {:.4}", m.precision);
        println!("mask recall    {:.4}", m.recall);
    }
    println!("wrote          {}", json_path.display());
    println!("wrote          {}", aligned.display());
    Ok(())
}

/// Pools mask counts over the files present in both directories.
fn compare_mask_dirs(pred: &Path, gt: &Path) -> Result<eval::MaskReport> {
    let mut names: Vec<_> = std::fs::read_dir(pred)
        .with_context(|| format!("reading {}", pred.display()))?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name())
        .filter(|n| Path::new(n).extension().is_some_and(|x| x == "png"))
        .collect();
    names.sort();
    let mut acc = MaskAccumulator::new();
    let mut compared = 0;
    for name in &names {
        let g = gt.join(name);
        if !g.exists() {
            continue;
        }
        acc.add(&raster::read_mask(&pred.join(name))?, &raster::read_mask(&g)?)?;
        compared += 1;
    }
    if compared == 0 {
        bail!("no mask file names in common between {} and {}", pred.display(), gt.display());
    }
    info!("compared {compared} mask pairs");
    Ok(acc.report())
}

fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    let cfg = args.run.config()?;
    let grid = args
        .grid
        .clone()
        .unwrap_or_else(|| (1..=10).map(|i| i as f64 / 10.0).collect());
    let result = pipeline::sweep_dataset(&cfg, &grid, args.keyframe_step)?;
    std::fs::create_dir_all(&cfg.output).with_context(|| format!("creating {}", cfg.output.display()))?;
    let mut csv = String::from("tau_z,precision,recall,score\n");
    for r in &result.rows {
        csv.push_str(&format!("{},{:.6},{:.6},{:.6}\n", r.tau_z, r.precision, r.recall, r.score));
    }
    let path = cfg.output.join("sweep.csv");
    std::fs::write(&path, csv).with_context(|| format!("writing {}", path.display()))?;
    println!("best tau_z     {}", result.best_tau_z);
    println!("wrote          {}", path.display());
    Ok(())
}
