//! The `enhance`, `eval` and `bench` commands.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use srdet::dedup::iou;
use srdet::detector::{DetectError, DetectionSet, Detector, WireDetector};
use srdet::evalmap::{
    compare_reports, evaluate, load_ground_truth, load_predictions, predictions_from_records, write_json, Comparison,
    EvalSpec, GroundTruth, PredictionRecord,
};
use srdet::imagebuf::{load_png, save_png, ImageBuffer, Rgb};
use srdet::pipeline::{enhance_sequence, summary_csv, DetectorSource, FrameOutcome, Pipeline, SharedDetector};
use srdet::synthdet::{generate_scene, scenes_to_ground_truth, OracleDetector, RecallModel, Scene};
use srdet::transport::BackendUri;

use crate::config::{ConfigError, RunConfig};
use crate::plot::counts_plot;

pub const EXIT_OK: u8 = 0;
pub const EXIT_FRAME_ERROR: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;

/// Failure with the exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl std::fmt::Display) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.to_string(),
        }
    }

    /// Output failures are reported like configuration errors: the run
    /// cannot produce its bundle.
    fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        Self::config(format!("{}: {e}", path.display()))
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        Self::config(e)
    }
}

const BASE_BOX: Rgb = [255, 64, 64];
const KEPT_BOX: Rgb = [64, 220, 64];
const NEW_BOX: Rgb = [255, 220, 0];

/// Loads `<stem>.scene.json` next to each frame.
pub struct SceneSidecars {
    pub model: RecallModel,
}

pub fn sidecar_path(frame: &Path) -> PathBuf {
    let stem = frame.file_stem().unwrap_or_default().to_string_lossy();
    frame.with_file_name(format!("{stem}.scene.json"))
}

impl DetectorSource for SceneSidecars {
    fn for_frame(&self, path: &Path) -> Result<Arc<dyn Detector>, DetectError> {
        let scene = Scene::load(&sidecar_path(path)).map_err(|e| DetectError::Backend(e.to_string()))?;
        Ok(Arc::new(OracleDetector::new(Arc::new(scene), self.model)))
    }
}

fn detector_source(cfg: &RunConfig) -> Result<Box<dyn DetectorSource>, CliError> {
    if cfg.backend == "oracle" {
        return Ok(Box::new(SceneSidecars { model: cfg.recall }));
    }
    let uri: BackendUri = cfg.backend.parse().map_err(CliError::config)?;
    Ok(Box::new(SharedDetector(Arc::new(WireDetector::new(uri, cfg.timeout)))))
}

fn list_frames(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut frames: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    frames.sort();
    Ok(frames)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

fn records(file_name: &str, set: &DetectionSet) -> Vec<PredictionRecord> {
    set.items
        .iter()
        .map(|d| PredictionRecord::from_detection(None, Some(file_name.to_string()), d))
        .collect()
}

fn label(class_id: u32, score: f64) -> String {
    format!("{class_id} {:.2}", score)
}

/// Before/after images: base boxes, then merged boxes with new finds
/// highlighted.
fn annotate(img: &ImageBuffer, base: &DetectionSet, merged: &DetectionSet, theta: f64) -> (ImageBuffer, ImageBuffer) {
    let mut before = img.clone();
    for d in &base.items {
        before = before.draw_box(d, BASE_BOX, &label(d.class_id, d.score));
    }
    let mut after = img.clone();
    for d in &merged.items {
        let known = base.items.iter().any(|b| b.class_id == d.class_id && iou(b, d) > theta);
        let color = if known { KEPT_BOX } else { NEW_BOX };
        after = after.draw_box(d, color, &label(d.class_id, d.score));
    }
    (before, after)
}

/// Writes predictions, summary and, for `annotate_frames`, before/after
/// images for a finished sequence. Returns the aggregated prediction sets.
fn write_sequence_outputs(
    cfg: &RunConfig,
    outcomes: &[FrameOutcome],
    timings: bool,
    annotate_frames: bool,
) -> Result<(Vec<PredictionRecord>, Vec<PredictionRecord>), CliError> {
    let out = &cfg.output_dir;
    let pred_dir = out.join("predictions");
    create_dir(&pred_dir)?;
    let ann_dir = out.join("annotated");
    if annotate_frames {
        create_dir(&ann_dir)?;
    }
    let mut all_base = Vec::new();
    let mut all_merged = Vec::new();
    for o in outcomes {
        let Ok(r) = &o.result else { continue };
        let file_name = o.path.file_name().unwrap_or_default().to_string_lossy().into_owned();
        let base = records(&file_name, &r.base);
        let merged = records(&file_name, &r.merged);
        for (kind, recs) in [("base", &base), ("enhanced", &merged)] {
            let path = pred_dir.join(format!("{}.{kind}.json", o.frame_id));
            write_json(&path, recs).map_err(|e| CliError::io(&path, e))?;
        }
        if annotate_frames {
            let img = load_png(&o.path).map_err(|e| CliError::io(&o.path, e))?;
            let (before, after) = annotate(&img, &r.base, &r.merged, cfg.pipeline.merge.theta);
            for (kind, im) in [("base", before), ("enhanced", after)] {
                let path = ann_dir.join(format!("{}.{kind}.png", o.frame_id));
                save_png(&im, &path).map_err(|e| CliError::io(&path, e))?;
            }
        }
        all_base.extend(base);
        all_merged.extend(merged);
    }
    for (name, recs) in [
        ("predictions_base.json", &all_base),
        ("predictions_enhanced.json", &all_merged),
    ] {
        let path = out.join(name);
        write_json(&path, recs).map_err(|e| CliError::io(&path, e))?;
    }
    write(
        &out.join("summary.csv"),
        summary_csv(outcomes, timings, &cfg.describe()),
    )?;
    Ok((all_base, all_merged))
}

/// Writes `comparison.csv`, `counts.csv`, `counts.png` and `report.md`.
pub fn write_comparison(out: &Path, cmp: &Comparison) -> Result<(), CliError> {
    create_dir(out)?;
    write(&out.join("comparison.csv"), cmp.to_csv())?;
    write(&out.join("counts.csv"), cmp.counts_csv())?;
    write(&out.join("report.md"), cmp.to_markdown())?;
    let plot = out.join("counts.png");
    save_png(&counts_plot(&cmp.counts), &plot).map_err(|e| CliError::io(&plot, e))
}

fn compare(
    gt: &GroundTruth,
    base: &[PredictionRecord],
    enhanced: &[PredictionRecord],
    spec: &EvalSpec,
) -> Result<Comparison, CliError> {
    let base = predictions_from_records(base, gt).map_err(CliError::config)?;
    let enhanced = predictions_from_records(enhanced, gt).map_err(CliError::config)?;
    let b = evaluate(gt, &base, spec).map_err(CliError::config)?;
    let e = evaluate(gt, &enhanced, spec).map_err(CliError::config)?;
    compare_reports(&b, &e).map_err(CliError::config)
}

fn report_frame_errors(outcomes: &[FrameOutcome]) -> usize {
    let mut n = 0;
    for o in outcomes {
        if let Err(e) = &o.result {
            eprintln!("frame {}: {e}", o.frame_id);
            n += 1;
        }
    }
    n
}

pub fn cmd_enhance(cfg: &RunConfig) -> Result<u8, CliError> {
    let frames_dir = cfg
        .frames_dir
        .as_ref()
        .ok_or_else(|| CliError::config("frames_dir is required"))?;
    if !frames_dir.is_dir() {
        return Err(CliError::config(format!(
            "frames_dir {} is not a directory",
            frames_dir.display()
        )));
    }
    let gt = match &cfg.gt {
        Some(p) => Some(load_ground_truth(p).map_err(CliError::config)?),
        None => None,
    };
    let frames = list_frames(frames_dir)?;
    let source = detector_source(cfg)?;
    let pipeline = Pipeline::new(cfg.pipeline.clone(), cfg.timeout).map_err(CliError::config)?;

    let outcomes = enhance_sequence(&frames, &pipeline, source.as_ref());
    create_dir(&cfg.output_dir)?;
    let (base, merged) = write_sequence_outputs(cfg, &outcomes, cfg.timings.unwrap_or(true), true)?;
    if let Some(gt) = &gt {
        let cmp = compare(gt, &base, &merged, &cfg.eval)?;
        write_comparison(&cfg.output_dir, &cmp)?;
        print!("{}", cmp.to_markdown());
    }
    let failed = report_frame_errors(&outcomes);
    eprintln!("{} frames, {failed} failed", outcomes.len());
    Ok(if failed > 0 { EXIT_FRAME_ERROR } else { EXIT_OK })
}

pub struct EvalArgs {
    pub gt: PathBuf,
    pub base: PathBuf,
    pub enhanced: PathBuf,
    pub output_dir: PathBuf,
    pub spec: EvalSpec,
}

pub fn cmd_eval(args: &EvalArgs) -> Result<u8, CliError> {
    let gt = load_ground_truth(&args.gt).map_err(CliError::config)?;
    let base = load_predictions(&args.base, &gt).map_err(CliError::config)?;
    let enhanced = load_predictions(&args.enhanced, &gt).map_err(CliError::config)?;
    let b = evaluate(&gt, &base, &args.spec).map_err(CliError::config)?;
    let e = evaluate(&gt, &enhanced, &args.spec).map_err(CliError::config)?;
    let cmp = compare_reports(&b, &e).map_err(CliError::config)?;
    write_comparison(&args.output_dir, &cmp)?;
    print!("{}", cmp.to_markdown());
    Ok(EXIT_OK)
}

/// What a benchmark run established, beyond the files it wrote.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchSummary {
    pub comparison: Comparison,
    pub frames: usize,
    /// Frames where the merged set is at least as large as the base set.
    pub frames_not_worse: usize,
    /// Same-class merged pairs with IoU above the merge threshold.
    pub dedup_violations: usize,
    pub failed_frames: usize,
}

/// Per-frame scene seed.
pub fn frame_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(index as u64)
}

pub fn dedup_violations(set: &DetectionSet, theta: f64) -> usize {
    let items = &set.items;
    (0..items.len())
        .flat_map(|i| (i + 1..items.len()).map(move |j| (i, j)))
        .filter(|&(i, j)| items[i].class_id == items[j].class_id && iou(&items[i], &items[j]) > theta)
        .count()
}

/// Generates the synthetic frames, runs the pipeline with the oracle
/// backend and evaluates base against enhanced.
pub fn run_bench(cfg: &RunConfig) -> Result<BenchSummary, CliError> {
    let out = &cfg.output_dir;
    let frames_dir = out.join("frames");
    create_dir(&frames_dir)?;
    let mut scenes = Vec::with_capacity(cfg.frames);
    let mut paths = Vec::with_capacity(cfg.frames);
    for i in 0..cfg.frames {
        let (scene, img) = generate_scene(frame_seed(cfg.seed, i), &cfg.scene).map_err(CliError::config)?;
        let path = frames_dir.join(format!("frame_{:04}.png", i + 1));
        save_png(&img, &path).map_err(|e| CliError::io(&path, e))?;
        let side = sidecar_path(&path);
        scene.save(&side).map_err(|e| CliError::io(&side, e))?;
        scenes.push(scene);
        paths.push(path);
    }
    let names: Vec<String> = paths
        .iter()
        .map(|p| p.file_name().unwrap_or_default().to_string_lossy().into_owned())
        .collect();
    let gt = scenes_to_ground_truth(
        scenes
            .iter()
            .zip(&names)
            .enumerate()
            .map(|(i, (s, n))| (i as u64 + 1, n.as_str(), s)),
    );
    let gt_path = out.join("gt.json");
    write_json(&gt_path, &gt).map_err(|e| CliError::io(&gt_path, e))?;

    let pipeline = Pipeline::new(cfg.pipeline.clone(), cfg.timeout).map_err(CliError::config)?;
    let source = SceneSidecars { model: cfg.recall };
    let outcomes = enhance_sequence(&paths, &pipeline, &source);
    let (base, merged) = write_sequence_outputs(cfg, &outcomes, cfg.timings.unwrap_or(false), false)?;
    let comparison = compare(&gt, &base, &merged, &cfg.eval)?;
    write_comparison(out, &comparison)?;

    let theta = cfg.pipeline.merge.theta;
    let ok: Vec<_> = outcomes.iter().filter_map(|o| o.result.as_ref().ok()).collect();
    Ok(BenchSummary {
        frames: outcomes.len(),
        frames_not_worse: ok.iter().filter(|r| r.merged.len() >= r.base.len()).count(),
        dedup_violations: ok.iter().map(|r| dedup_violations(&r.merged, theta)).sum(),
        failed_frames: report_frame_errors(&outcomes),
        comparison,
    })
}

pub fn cmd_bench(cfg: &RunConfig) -> Result<u8, CliError> {
    let s = run_bench(cfg)?;
    print!("{}", s.comparison.to_markdown());
    println!(
        "frames: {}, merged >= base on {}, dedup violations: {}",
        s.frames, s.frames_not_worse, s.dedup_violations
    );
    Ok(if s.failed_frames > 0 { EXIT_FRAME_ERROR } else { EXIT_OK })
}
