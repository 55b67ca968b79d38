//! COCO-protocol bounding-box mAP.
//!
//! Follows the reference `cocoeval` conventions: per image and category the
//! predictions are ranked by score and capped at 100; each takes the
//! unmatched ground truth with the highest IoU at or above the threshold,
//! preferring ground truth inside the evaluated area range; predictions
//! matched to out-of-range ground truth, and unmatched predictions that are
//! themselves out of range, are ignored. Precision is interpolated at 101
//! recall points. Crowd annotations are not supported.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dedup::iou;
use crate::detector::{Detection, DetectionSet};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("prediction refers to unknown image id {0}")]
    UnknownImage(u64),
    #[error("prediction refers to unknown file name {0:?}")]
    UnknownFile(String),
    #[error("prediction record has neither image_id nor file_name")]
    MissingImage,
    #[error("reports were produced with different evaluation settings")]
    SpecMismatch,
    #[error("invalid ground truth: {0}")]
    InvalidGroundTruth(String),
    #[error("invalid evaluation settings: {0}")]
    InvalidSpec(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageInfo {
    pub id: u64,
    pub width: usize,
    pub height: usize,
    pub file_name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub id: u64,
    pub image_id: u64,
    /// `[x, y, w, h]`, top-left origin.
    pub bbox: [f64; 4],
    pub category_id: u32,
    /// Defaults to `w * h`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub area: Option<f64>,
}

impl Annotation {
    pub fn area(&self) -> f64 {
        self.area.unwrap_or(self.bbox[2] * self.bbox[3])
    }

    pub fn as_box(&self) -> Detection {
        let [x, y, w, h] = self.bbox;
        Detection {
            a: x,
            b: y,
            c: x + w,
            d: y + h,
            class_id: self.category_id,
            score: 1.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub images: Vec<ImageInfo>,
    pub annotations: Vec<Annotation>,
}

impl GroundTruth {
    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |m: String| Err(EvalError::InvalidGroundTruth(m));
        let mut images = HashMap::new();
        for img in &self.images {
            if images.insert(img.id, img).is_some() {
                return bad(format!("duplicate image id {}", img.id));
            }
        }
        let mut ids = BTreeSet::new();
        for ann in &self.annotations {
            if !ids.insert(ann.id) {
                return bad(format!("duplicate annotation id {}", ann.id));
            }
            let Some(img) = images.get(&ann.image_id) else {
                return bad(format!("annotation {} on unknown image {}", ann.id, ann.image_id));
            };
            let [x, y, w, h] = ann.bbox;
            let inside =
                x >= 0.0 && y >= 0.0 && w >= 0.0 && h >= 0.0 && x + w <= img.width as f64 && y + h <= img.height as f64;
            if !inside {
                return bad(format!("annotation {} box {:?} outside its image", ann.id, ann.bbox));
            }
        }
        Ok(())
    }

    pub fn image_by_file(&self, file_name: &str) -> Option<&ImageInfo> {
        self.images.iter().find(|i| i.file_name == file_name)
    }

    pub fn category_ids(&self) -> Vec<u32> {
        let set: BTreeSet<u32> = self.annotations.iter().map(|a| a.category_id).collect();
        set.into_iter().collect()
    }
}

/// Predictions per image id.
pub type Predictions = BTreeMap<u64, DetectionSet>;

/// One line of a prediction file: a ground-truth annotation plus a score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_id: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file_name: Option<String>,
    pub bbox: [f64; 4],
    pub category_id: u32,
    pub score: f64,
}

impl PredictionRecord {
    pub fn from_detection(image_id: Option<u64>, file_name: Option<String>, d: &Detection) -> Self {
        Self {
            image_id,
            file_name,
            bbox: [d.a, d.b, d.c - d.a, d.d - d.b],
            category_id: d.class_id,
            score: d.score,
        }
    }

    pub fn to_detection(&self) -> Detection {
        let [x, y, w, h] = self.bbox;
        Detection {
            a: x,
            b: y,
            c: x + w,
            d: y + h,
            class_id: self.category_id,
            score: self.score,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AreaBucket {
    All,
    Small,
    Medium,
}

impl AreaBucket {
    /// Inclusive area range in px².
    pub fn range(self) -> (f64, f64) {
        match self {
            Self::All => (0.0, 1e10),
            Self::Small => (0.0, 32.0 * 32.0),
            Self::Medium => (32.0 * 32.0, 96.0 * 96.0),
        }
    }

    pub fn contains(self, area: f64) -> bool {
        let (lo, hi) = self.range();
        area >= lo && area <= hi
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSpec {
    pub iou_thresholds: Vec<f64>,
    pub class_filter: Option<Vec<u32>>,
    pub max_dets: usize,
}

impl Default for EvalSpec {
    fn default() -> Self {
        Self {
            iou_thresholds: (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect(),
            class_filter: None,
            max_dets: 100,
        }
    }
}

impl EvalSpec {
    pub fn validate(&self) -> Result<(), EvalError> {
        let t = &self.iou_thresholds;
        if t.is_empty() || !t.iter().all(|&v| v > 0.0 && v <= 1.0) {
            return Err(EvalError::InvalidSpec("iou thresholds must lie in (0, 1]".into()));
        }
        if !t.windows(2).all(|w| w[0] < w[1]) {
            return Err(EvalError::InvalidSpec("iou thresholds must increase".into()));
        }
        if self.max_dets == 0 {
            return Err(EvalError::InvalidSpec("max_dets must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameCount {
    pub image_id: u64,
    pub n_gt: usize,
    pub n_pred: usize,
}

/// The five mAP columns; `None` marks a bucket with no ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub map_all_5095: Option<f64>,
    pub map_all_50: Option<f64>,
    pub map_all_75: Option<f64>,
    pub map_small_5095: Option<f64>,
    pub map_medium_50: Option<f64>,
    pub per_frame_counts: Vec<FrameCount>,
    pub spec: EvalSpec,
}

impl EvalReport {
    pub const COLUMNS: [&'static str; 5] = [
        "map_all_5095",
        "map_all_50",
        "map_all_75",
        "map_small_5095",
        "map_medium_50",
    ];

    pub fn columns(&self) -> [(&'static str, Option<f64>); 5] {
        [
            (Self::COLUMNS[0], self.map_all_5095),
            (Self::COLUMNS[1], self.map_all_50),
            (Self::COLUMNS[2], self.map_all_75),
            (Self::COLUMNS[3], self.map_small_5095),
            (Self::COLUMNS[4], self.map_medium_50),
        ]
    }
}

/// Ground-truth box as seen by the matcher.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GtBox {
    pub id: u64,
    pub bbox: Detection,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchResult {
    pub pred: Detection,
    /// Id of the matched ground truth, `None` for a false positive.
    pub gt: Option<u64>,
}

/// Greedy matching of score-ranked predictions against ground truth of one
/// image and class, with no ignored ground truth.
pub fn match_detections(gt: &[GtBox], preds: &[Detection], iou_t: f64) -> Vec<MatchResult> {
    let ignore = vec![false; gt.len()];
    let outcome = match_ranked(gt, &ignore, preds, iou_t);
    preds
        .iter()
        .zip(outcome)
        .map(|(p, m)| MatchResult {
            pred: *p,
            gt: m.map(|(g, _)| gt[g].id),
        })
        .collect()
}

/// Core matcher. `gt` must list non-ignored boxes first. Returns, per
/// prediction, the index of the matched ground truth and whether it is
/// ignored.
fn match_ranked(gt: &[GtBox], gt_ignore: &[bool], preds: &[Detection], iou_t: f64) -> Vec<Option<(usize, bool)>> {
    let mut taken = vec![false; gt.len()];
    preds
        .iter()
        .map(|p| {
            let mut best_iou = iou_t.min(1.0 - 1e-10);
            let mut best: Option<usize> = None;
            for (g, gbox) in gt.iter().enumerate() {
                if taken[g] {
                    continue;
                }
                if let Some(m) = best {
                    if !gt_ignore[m] && gt_ignore[g] {
                        break;
                    }
                }
                let v = iou(p, &gbox.bbox);
                if v < best_iou {
                    continue;
                }
                best_iou = v;
                best = Some(g);
            }
            best.map(|g| {
                taken[g] = true;
                (g, gt_ignore[g])
            })
        })
        .collect()
}

pub const RECALL_POINTS: usize = 101;

/// 101-point interpolated AP from ranked true/false positive flags.
/// `None` when there is no ground truth.
pub fn average_precision(flags: &[bool], n_gt: usize) -> Option<f64> {
    if n_gt == 0 {
        return None;
    }
    let mut tp = 0usize;
    let mut recall = Vec::with_capacity(flags.len());
    let mut precision = Vec::with_capacity(flags.len());
    for (rank, &hit) in flags.iter().enumerate() {
        tp += hit as usize;
        recall.push(tp as f64 / n_gt as f64);
        precision.push(tp as f64 / (rank + 1) as f64);
    }
    for i in (1..precision.len()).rev() {
        if precision[i] > precision[i - 1] {
            precision[i - 1] = precision[i];
        }
    }
    let sum: f64 = (0..RECALL_POINTS)
        .map(|i| {
            let r = i as f64 / 100.0;
            let at = recall.partition_point(|&rc| rc < r);
            precision.get(at).copied().unwrap_or(0.0)
        })
        .sum();
    Some(sum / RECALL_POINTS as f64)
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (sum, n) = values.flatten().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

struct ImageClassCell<'a> {
    gt: Vec<&'a Annotation>,
    preds: Vec<Detection>,
}

/// AP for one class at one threshold over one area bucket, across images.
fn class_ap(cells: &[ImageClassCell<'_>], iou_t: f64, bucket: AreaBucket) -> Option<f64> {
    let mut ranked: Vec<(f64, bool)> = Vec::new();
    let mut n_gt = 0;
    for cell in cells {
        // Non-ignored ground truth first, original order otherwise.
        let mut order: Vec<(bool, &Annotation)> = cell.gt.iter().map(|a| (!bucket.contains(a.area()), *a)).collect();
        order.sort_by_key(|(ignored, _)| *ignored);
        let boxes: Vec<GtBox> = order
            .iter()
            .map(|(_, a)| GtBox {
                id: a.id,
                bbox: a.as_box(),
            })
            .collect();
        let ignore: Vec<bool> = order.iter().map(|(ig, _)| *ig).collect();
        n_gt += ignore.iter().filter(|ig| !**ig).count();

        let outcome = match_ranked(&boxes, &ignore, &cell.preds, iou_t);
        for (p, m) in cell.preds.iter().zip(outcome) {
            match m {
                Some((_, false)) => ranked.push((p.score, true)),
                Some((_, true)) => {}
                None if !bucket.contains(p.area()) => {}
                None => ranked.push((p.score, false)),
            }
        }
    }
    // Stable: ties keep image order, then in-image rank.
    ranked.sort_by(|x, y| y.0.total_cmp(&x.0));
    let flags: Vec<bool> = ranked.into_iter().map(|(_, f)| f).collect();
    average_precision(&flags, n_gt)
}

pub fn evaluate(gt: &GroundTruth, preds: &Predictions, spec: &EvalSpec) -> Result<EvalReport, EvalError> {
    spec.validate()?;
    let images: BTreeMap<u64, &ImageInfo> = gt.images.iter().map(|i| (i.id, i)).collect();
    if let Some(&id) = preds.keys().find(|id| !images.contains_key(id)) {
        return Err(EvalError::UnknownImage(id));
    }
    let classes = spec.class_filter.clone().unwrap_or_else(|| gt.category_ids());
    let wanted = |c: u32| classes.contains(&c);

    // cells[class][image]
    let cells: Vec<Vec<ImageClassCell<'_>>> = classes
        .iter()
        .map(|&c| {
            images
                .keys()
                .map(|id| {
                    let gt_c = gt
                        .annotations
                        .iter()
                        .filter(|a| a.image_id == *id && a.category_id == c)
                        .collect();
                    let mut p: Vec<Detection> = preds
                        .get(id)
                        .map(|s| s.items.iter().filter(|d| d.class_id == c).copied().collect())
                        .unwrap_or_default();
                    p.sort_by(|x, y| y.score.total_cmp(&x.score));
                    p.truncate(spec.max_dets);
                    ImageClassCell { gt: gt_c, preds: p }
                })
                .collect()
        })
        .collect();

    let column = |thresholds: &[f64], bucket: AreaBucket| -> Option<f64> {
        mean(
            thresholds
                .iter()
                .map(|&t| mean(cells.iter().map(|per_image| class_ap(per_image, t, bucket)))),
        )
    };

    let per_frame_counts = images
        .keys()
        .map(|&id| FrameCount {
            image_id: id,
            n_gt: gt
                .annotations
                .iter()
                .filter(|a| a.image_id == id && wanted(a.category_id))
                .count(),
            n_pred: preds
                .get(&id)
                .map_or(0, |s| s.items.iter().filter(|d| wanted(d.class_id)).count()),
        })
        .collect();

    Ok(EvalReport {
        map_all_5095: column(&spec.iou_thresholds, AreaBucket::All),
        map_all_50: column(&[0.5], AreaBucket::All),
        map_all_75: column(&[0.75], AreaBucket::All),
        map_small_5095: column(&spec.iou_thresholds, AreaBucket::Small),
        map_medium_50: column(&[0.5], AreaBucket::Medium),
        per_frame_counts,
        spec: spec.clone(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub metric: &'static str,
    pub base: Option<f64>,
    pub enhanced: Option<f64>,
    /// Set when the enhanced value is strictly greater.
    pub enhanced_better: bool,
}

impl ComparisonRow {
    pub fn delta(&self) -> Option<f64> {
        Some(self.enhanced? - self.base?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CountPoint {
    pub image_id: u64,
    pub n_base: usize,
    pub n_enhanced: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    pub counts: Vec<CountPoint>,
}

pub fn compare_reports(base: &EvalReport, enhanced: &EvalReport) -> Result<Comparison, EvalError> {
    if base.spec != enhanced.spec {
        return Err(EvalError::SpecMismatch);
    }
    let rows = base
        .columns()
        .into_iter()
        .zip(enhanced.columns())
        .map(|((metric, b), (_, e))| ComparisonRow {
            metric,
            base: b,
            enhanced: e,
            enhanced_better: matches!((b, e), (Some(b), Some(e)) if e > b),
        })
        .collect();
    let enhanced_counts: HashMap<u64, usize> = enhanced
        .per_frame_counts
        .iter()
        .map(|c| (c.image_id, c.n_pred))
        .collect();
    let counts = base
        .per_frame_counts
        .iter()
        .map(|c| CountPoint {
            image_id: c.image_id,
            n_base: c.n_pred,
            n_enhanced: enhanced_counts.get(&c.image_id).copied().unwrap_or(0),
        })
        .collect();
    Ok(Comparison { rows, counts })
}

fn fmt_value(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| format!("{v:.6}"))
}

impl Comparison {
    /// `metric,base,enhanced`, one row per mAP column.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,base,enhanced\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{}", r.metric, fmt_value(r.base), fmt_value(r.enhanced));
        }
        s
    }

    /// `image_id,n_base,n_enhanced`, one row per image.
    pub fn counts_csv(&self) -> String {
        let mut s = String::from("image_id,n_base,n_enhanced\n");
        for c in &self.counts {
            let _ = writeln!(s, "{},{},{}", c.image_id, c.n_base, c.n_enhanced);
        }
        s
    }

    /// Markdown table with the better enhanced values in bold.
    pub fn to_markdown(&self) -> String {
        let mut s = String::from("| metric | base | enhanced | delta |\n|---|---|---|---|\n");
        for r in &self.rows {
            let e = fmt_value(r.enhanced);
            let e = if r.enhanced_better { format!("**{e}**") } else { e };
            let delta = r.delta().map_or_else(|| "NA".into(), |d| format!("{d:+.6}"));
            let _ = writeln!(s, "| {} | {} | {} | {} |", r.metric, fmt_value(r.base), e, delta);
        }
        s
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, EvalError> {
    let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| EvalError::Parse {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), EvalError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    std::fs::write(path, text).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_ground_truth(path: &Path) -> Result<GroundTruth, EvalError> {
    let gt: GroundTruth = read_json(path)?;
    gt.validate()?;
    Ok(gt)
}

/// Reads a prediction file. Records naming a `file_name` are resolved to
/// the ground-truth image of that name.
pub fn load_predictions(path: &Path, gt: &GroundTruth) -> Result<Predictions, EvalError> {
    let records: Vec<PredictionRecord> = read_json(path)?;
    predictions_from_records(&records, gt)
}

pub fn predictions_from_records(records: &[PredictionRecord], gt: &GroundTruth) -> Result<Predictions, EvalError> {
    let mut out = Predictions::new();
    for r in records {
        let id = match (&r.file_name, r.image_id) {
            (Some(name), _) => {
                gt.image_by_file(name)
                    .ok_or_else(|| EvalError::UnknownFile(name.clone()))?
                    .id
            }
            (None, Some(id)) => id,
            (None, None) => return Err(EvalError::MissingImage),
        };
        out.entry(id)
            .or_insert_with(|| DetectionSet::new(id.to_string(), Vec::new()))
            .items
            .push(r.to_detection());
    }
    Ok(out)
}
