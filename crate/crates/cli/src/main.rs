//! `relabel`: command-line surface over the label-correction toolkit.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error (malformed or
//! inconsistent input files), 3 numerical failure (solver non-convergence,
//! unusable curve fit).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use relabel_core::cloning::{compose_synthetic, BlurKind, BlurStrength, CloneError};
use relabel_core::curvewatch::{detect_transition, CurveError, CurveSeries};
use relabel_core::fusion::{correct_labels, FusionConfig};
use relabel_core::imgproc::{weak_label_pipeline, CellCategory, WeakLabelParams};
use relabel_core::io::{
    read_annotations, read_pgm, write_annotations, write_pgm, FileViewDetector, IoError,
    RunConfig,
};
use relabel_core::metrics::{evaluate, AnnotationSet, ImageInfo, MetricsError};
use relabel_core::selftrain::{run_self_training, Phase, SelfTrainError, SimWorld};

#[derive(Parser)]
#[command(name = "relabel", version, about = "Label correction toolkit for cell detection")]
struct Cli {
    /// Override the run seed (applies to `simulate`).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Run-configuration JSON file (applies to `simulate`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum CategoryArg {
    Alive,
    Inhibited,
    Dead,
}

impl From<CategoryArg> for CellCategory {
    fn from(c: CategoryArg) -> Self {
        match c {
            CategoryArg::Alive => CellCategory::Alive,
            CategoryArg::Inhibited => CellCategory::Inhibited,
            CategoryArg::Dead => CellCategory::Dead,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum BlurArg {
    Weak,
    Strong,
}

impl From<BlurArg> for BlurKind {
    fn from(b: BlurArg) -> Self {
        match b {
            BlurArg::Weak => BlurKind::Weak,
            BlurArg::Strong => BlurKind::Strong,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate weak labels from a grayscale PGM frame.
    Weaklabel {
        /// Input image (binary PGM).
        #[arg(long)]
        image: PathBuf,
        /// Which pipeline to run.
        #[arg(long)]
        category: CategoryArg,
        /// Output annotation JSON.
        #[arg(long)]
        out: PathBuf,
        /// Circle radius search range (dead pipeline).
        #[arg(long)]
        rmin: Option<usize>,
        #[arg(long)]
        rmax: Option<usize>,
        /// Fraction of the ideal vote count a circle must reach.
        #[arg(long)]
        vote_frac: Option<f64>,
        /// Canny hysteresis thresholds.
        #[arg(long)]
        canny_low: Option<f64>,
        #[arg(long)]
        canny_high: Option<f64>,
        /// Pre-blur kernel (blob pipelines, odd sizes).
        #[arg(long)]
        blur_kx: Option<usize>,
        #[arg(long)]
        blur_ky: Option<usize>,
        /// Closing iterations (blob pipelines).
        #[arg(long)]
        close_iterations: Option<usize>,
        /// Minimum kept box area in px^2.
        #[arg(long)]
        min_box_area: Option<f64>,
    },
    /// Fuse per-view prediction files (TTA + WBF) into pseudo labels.
    Fuse {
        /// Manifest listing (flip, scale, file) per view.
        #[arg(long)]
        manifest: PathBuf,
        /// Annotation JSON providing the image ids and dimensions.
        #[arg(long)]
        images: PathBuf,
        /// Output annotation JSON.
        #[arg(long)]
        out: PathBuf,
        /// Minimum fused score to keep a box.
        #[arg(long, default_value_t = 0.0)]
        accept_thr: f64,
        /// Cluster IoU threshold.
        #[arg(long, default_value_t = 0.55)]
        cluster_iou: f64,
        /// Drop input boxes scoring below this before clustering.
        #[arg(long, default_value_t = 0.0)]
        skip_score_thr: f64,
        /// Score-rescaling view count (defaults to the manifest view count).
        #[arg(long)]
        n_views: Option<usize>,
    },
    /// Evaluate predictions against one or more ground-truth files.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        /// Ground-truth annotation JSON; repeat for several annotators.
        #[arg(long, required = true)]
        gt: Vec<PathBuf>,
        /// Also write the report rows as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Find the early-learning transition epoch in an (epoch, ap50) CSV.
    DetectTransition {
        #[arg(long)]
        curve: PathBuf,
        #[arg(long, default_value_t = 0.9)]
        threshold: f64,
    },
    /// Compose a synthetic-like frame: blur the image, seamlessly clone the
    /// annotated cells back in.
    Synth {
        /// Input image (binary PGM).
        #[arg(long)]
        image: PathBuf,
        /// Annotation JSON with the boxes to preserve.
        #[arg(long)]
        annotations: PathBuf,
        /// Image id inside the annotation file (optional when it contains
        /// exactly one image).
        #[arg(long)]
        image_id: Option<String>,
        #[arg(long, value_enum, default_value_t = BlurArg::Weak)]
        blur: BlurArg,
        /// Clone-region margin around each box (px).
        #[arg(long, default_value_t = 2)]
        margin: usize,
        /// Output image (binary PGM).
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the simulated self-training loop and write its artifacts.
    Simulate {
        /// Output directory (created if missing).
        #[arg(long)]
        out: PathBuf,
    },
}

/// Invalid flag value caught before any work starts; exits with the usage
/// code.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(UsageError(msg.into()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(classify(&e))
        }
    }
}

fn clone_error_is_numerical(err: &CloneError) -> bool {
    match err {
        CloneError::NonConvergence { .. } => true,
        CloneError::BoxFailed { source, .. } => clone_error_is_numerical(source),
        _ => false,
    }
}

/// Maps an error chain onto the documented exit codes.
fn classify(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return 1;
        }
        if let Some(clone_err) = cause.downcast_ref::<CloneError>() {
            return if clone_error_is_numerical(clone_err) { 3 } else { 2 };
        }
        if let Some(curve_err) = cause.downcast_ref::<CurveError>() {
            return match curve_err {
                CurveError::NonIncreasingFit => 3,
                _ => 2,
            };
        }
        if let Some(st) = cause.downcast_ref::<SelfTrainError>() {
            return match st {
                SelfTrainError::Curve(CurveError::NonIncreasingFit) => 3,
                SelfTrainError::Clone(c) if clone_error_is_numerical(c) => 3,
                _ => 2,
            };
        }
        if cause.downcast_ref::<IoError>().is_some()
            || cause.downcast_ref::<MetricsError>().is_some()
            || cause.downcast_ref::<std::io::Error>().is_some()
        {
            return 2;
        }
    }
    2
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Weaklabel {
            image,
            category,
            out,
            rmin,
            rmax,
            vote_frac,
            canny_low,
            canny_high,
            blur_kx,
            blur_ky,
            close_iterations,
            min_box_area,
        } => {
            let category: CellCategory = category.into();
            let mut params = WeakLabelParams::default_for(category);
            if let Some(v) = rmin {
                params.r_min = v;
            }
            if let Some(v) = rmax {
                params.r_max = v;
            }
            if let Some(v) = vote_frac {
                params.vote_frac = v;
            }
            if let Some(v) = canny_low {
                params.canny_low = v;
            }
            if let Some(v) = canny_high {
                params.canny_high = v;
            }
            if let Some(v) = blur_kx {
                params.blur_kx = v;
            }
            if let Some(v) = blur_ky {
                params.blur_ky = v;
            }
            if let Some(v) = close_iterations {
                params.close_iterations = v;
            }
            if let Some(v) = min_box_area {
                params.min_box_area = v;
            }
            if params.blur_kx.is_multiple_of(2) || params.blur_ky.is_multiple_of(2) {
                return Err(usage("--blur-kx/--blur-ky must be odd"));
            }
            if params.r_min < 1 || params.r_min > params.r_max {
                return Err(usage("need 1 <= --rmin <= --rmax"));
            }
            if params.vote_frac <= 0.0 {
                return Err(usage("--vote-frac must be positive"));
            }
            if !(0.0 <= params.canny_low && params.canny_low <= params.canny_high) {
                return Err(usage("need 0 <= --canny-low <= --canny-high"));
            }
            let raster = read_pgm(&image)?;
            let dets = weak_label_pipeline(&raster, category, &params)
                .map_err(|e| anyhow!("weak-label pipeline failed: {e}"))?;
            let id = image
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "image".to_string());
            let mut set = AnnotationSet::new();
            set.add_image(ImageInfo::new(
                id.clone(),
                raster.width() as u32,
                raster.height() as u32,
            ))?;
            set.set_annotations(&id, dets)?;
            write_annotations(&out, &set)?;
            println!(
                "{}: {} weak labels -> {}",
                id,
                set.total_annotations(),
                out.display()
            );
            Ok(())
        }
        Command::Fuse {
            manifest,
            images,
            out,
            accept_thr,
            cluster_iou,
            skip_score_thr,
            n_views,
        } => {
            if !(cluster_iou > 0.0 && cluster_iou <= 1.0) {
                return Err(usage("--cluster-iou must be in (0, 1]"));
            }
            if !(0.0..1.0).contains(&skip_score_thr) {
                return Err(usage("--skip-score-thr must be in [0, 1)"));
            }
            if accept_thr < 0.0 {
                return Err(usage("--accept-thr must be non-negative"));
            }
            if n_views == Some(0) {
                return Err(usage("--n-views must be at least 1"));
            }
            let detector = FileViewDetector::from_manifest(&manifest)?;
            let views = detector.views();
            if views.is_empty() {
                bail!(IoError::BadHeader {
                    path: manifest.display().to_string(),
                    reason: "manifest lists no views".to_string(),
                });
            }
            let meta = read_annotations(&images)?;
            let cfg = FusionConfig {
                cluster_iou_thr: cluster_iou,
                skip_score_thr,
                n_views: n_views.unwrap_or(views.len()),
            };
            let fused = correct_labels(&meta, &detector, &views, &cfg, accept_thr)?;
            write_annotations(&out, &fused)?;
            println!(
                "fused {} boxes across {} images -> {}",
                fused.total_annotations(),
                fused.images().len(),
                out.display()
            );
            Ok(())
        }
        Command::Evaluate { pred, gt, csv } => {
            let preds = read_annotations(&pred)?;
            let mut rows = Vec::new();
            for gt_path in &gt {
                let gts = read_annotations(gt_path)?;
                let report = evaluate(&preds, &gts)
                    .with_context(|| format!("evaluating against {}", gt_path.display()))?;
                println!(
                    "{}: ap50={:.4} ap75={:.4} ap={:.4} ar={:.4}",
                    gt_path.display(),
                    report.ap50,
                    report.ap75,
                    report.ap,
                    report.ar
                );
                rows.push((gt_path.display().to_string(), report));
            }
            if let Some(csv_path) = csv {
                let mut text = String::from("annotator,ap50,ap75,ap,ar\n");
                for (name, r) in &rows {
                    text.push_str(&format!("{name},{},{},{},{}\n", r.ap50, r.ap75, r.ap, r.ar));
                }
                std::fs::write(&csv_path, text)
                    .with_context(|| format!("writing {}", csv_path.display()))?;
            }
            Ok(())
        }
        Command::DetectTransition { curve, threshold } => {
            if !(threshold > 0.0 && threshold < 1.0) {
                return Err(usage("--threshold must be in (0, 1)"));
            }
            let series = read_curve_csv(&curve)?;
            match detect_transition(&series, threshold)? {
                Some(epoch) => println!("{epoch}"),
                None => println!("none"),
            }
            Ok(())
        }
        Command::Synth {
            image,
            annotations,
            image_id,
            blur,
            margin,
            out,
        } => {
            let raster = read_pgm(&image)?;
            let set = read_annotations(&annotations)?;
            let id = match image_id {
                Some(id) => {
                    if set.image(&id).is_none() {
                        bail!(MetricsError::UnknownImage(id));
                    }
                    id
                }
                None => match set.images() {
                    [only] => only.id.clone(),
                    _ => bail!(
                        "annotation file contains {} images; pass --image-id",
                        set.images().len()
                    ),
                },
            };
            let blur = BlurStrength::from_kind(blur.into());
            let synth = compose_synthetic(&raster, set.annotations(&id), &blur, margin)?;
            write_pgm(&out, &synth)?;
            println!("synthetic frame ({:?} blur) -> {}", blur.kind, out.display());
            Ok(())
        }
        Command::Simulate { out } => {
            let mut cfg = match &cli.config {
                Some(path) => RunConfig::read(path)?,
                None => RunConfig::default(),
            };
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            simulate(&cfg, &out)
        }
    }
}

fn read_curve_csv(path: &Path) -> Result<CurveSeries> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut series = CurveSeries::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let (Some(epoch_s), Some(value_s)) = (fields.next(), fields.next()) else {
            bail!("{}:{}: expected `epoch,value`", path.display(), lineno + 1);
        };
        let epoch: u32 = match epoch_s.trim().parse() {
            Ok(e) => e,
            // tolerate a header row
            Err(_) if lineno == 0 => continue,
            Err(e) => bail!("{}:{}: bad epoch: {e}", path.display(), lineno + 1),
        };
        let value: f64 = value_s
            .trim()
            .parse()
            .map_err(|e| anyhow!("{}:{}: bad value: {e}", path.display(), lineno + 1))?;
        series.push(epoch, value)?;
    }
    Ok(series)
}

fn simulate(cfg: &RunConfig, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))?;
    let world = SimWorld::generate(&cfg.world, &cfg.corruption, cfg.seed);
    let state = run_self_training(
        &world,
        &cfg.detector,
        &cfg.fusion,
        &cfg.blur_strength(),
        &cfg.loop_params,
    )?;

    write_annotations(&out_dir.join("hidden_gt.json"), &world.hidden_gt)?;
    write_annotations(&out_dir.join("weak_labels.json"), &world.weak_labels)?;
    for (id, raster) in &world.images {
        write_pgm(&out_dir.join(format!("frame_{id}.pgm")), raster)?;
    }

    let mut csv = String::from("epoch,phase,ap50_vs_weak,f1,precision,recall,n_batches,synth_mean_intensity\n");
    for rec in &state.history {
        let phase = match rec.phase {
            Phase::Early => "early",
            Phase::SemiSupervised => "semi_supervised",
        };
        let synth = rec
            .synth_mean_intensity
            .map(|v| v.to_string())
            .unwrap_or_default();
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            rec.epoch, phase, rec.ap50_vs_weak, rec.f1, rec.precision, rec.recall, rec.n_batches,
            synth
        ));
        write_annotations(
            &out_dir.join(format!("labels_epoch_{:03}.json", rec.epoch)),
            &rec.labels,
        )?;
        if let Some((id, frame)) = &rec.synth_frame {
            write_pgm(
                &out_dir.join(format!("synth_{id}_epoch_{:03}.pgm", rec.epoch)),
                frame,
            )?;
        }
    }
    std::fs::write(out_dir.join("history.csv"), csv)
        .with_context(|| format!("writing {}", out_dir.join("history.csv").display()))?;

    match state.transition_epoch {
        Some(t) => println!("transition at epoch {t}"),
        None => println!("transition did not fire"),
    }
    if let Some(w) = &state.warning {
        eprintln!("warning: {w}");
    }
    let first = state.history.first().expect("at least 3 epochs");
    let last = state.history.last().expect("at least 3 epochs");
    println!(
        "f1 vs hidden gt: {:.4} (epoch 1, weak labels) -> {:.4} (epoch {})",
        first.f1, last.f1, last.epoch
    );
    println!("artifacts in {}", out_dir.display());
    Ok(())
}
