//! Brute-force COCO-style bounding-box mAP.
//!
//! Written independently of the library: IoU from scratch, matching by
//! explicit candidate search, and interpolated precision as the maximum
//! precision over all ranks whose recall reaches the sample point.

use std::collections::BTreeSet;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gt {
    pub image: u64,
    pub xywh: [f64; 4],
    pub class: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pred {
    pub image: u64,
    pub xywh: [f64; 4],
    pub class: u32,
    pub score: f64,
}

pub fn iou_xywh(p: [f64; 4], q: [f64; 4]) -> f64 {
    let ix = (p[0] + p[2]).min(q[0] + q[2]) - p[0].max(q[0]);
    let iy = (p[1] + p[3]).min(q[1] + q[3]) - p[1].max(q[1]);
    if ix <= 0.0 || iy <= 0.0 {
        return 0.0;
    }
    let inter = ix * iy;
    inter / (p[2] * p[3] + q[2] * q[3] - inter)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Outcome {
    Tp,
    Fp,
    Ignored,
}

/// Interpolated AP over 101 recall points from ranked flags.
pub fn ap_from_flags(flags: &[bool], n_gt: usize) -> Option<f64> {
    if n_gt == 0 {
        return None;
    }
    let mut points = Vec::new();
    let mut tp = 0;
    for (k, &f) in flags.iter().enumerate() {
        if f {
            tp += 1;
        }
        points.push((tp as f64 / n_gt as f64, tp as f64 / (k + 1) as f64));
    }
    let mut total = 0.0;
    for i in 0..=100 {
        let r = i as f64 / 100.0;
        let best = points
            .iter()
            .filter(|(rc, _)| *rc >= r)
            .map(|(_, pr)| *pr)
            .fold(0.0f64, f64::max);
        total += best;
    }
    Some(total / 101.0)
}

fn in_range(area: f64, range: (f64, f64)) -> bool {
    area >= range.0 && area <= range.1
}

/// AP of one class at one IoU threshold for gt areas within `range`.
pub fn class_ap(gts: &[Gt], preds: &[Pred], class: u32, t: f64, range: (f64, f64)) -> Option<f64> {
    let images: BTreeSet<u64> = gts
        .iter()
        .map(|g| g.image)
        .chain(preds.iter().map(|p| p.image))
        .collect();
    let mut scored: Vec<(f64, Outcome)> = Vec::new();
    let mut n_gt = 0;
    for &img in &images {
        let g: Vec<&Gt> = gts.iter().filter(|g| g.image == img && g.class == class).collect();
        let ignored: Vec<bool> = g.iter().map(|g| !in_range(g.xywh[2] * g.xywh[3], range)).collect();
        n_gt += ignored.iter().filter(|i| !**i).count();
        let mut p: Vec<&Pred> = preds.iter().filter(|p| p.image == img && p.class == class).collect();
        p.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap());
        p.truncate(100);
        let mut used = vec![false; g.len()];
        for pred in p {
            // Best unused in-range match first, out-of-range only as fallback.
            let mut pick = None;
            for want_ignored in [false, true] {
                let mut best = t.min(1.0 - 1e-10);
                for (j, gt) in g.iter().enumerate() {
                    if used[j] || ignored[j] != want_ignored {
                        continue;
                    }
                    let v = iou_xywh(pred.xywh, gt.xywh);
                    if v >= best {
                        best = v;
                        pick = Some(j);
                    }
                }
                if pick.is_some() {
                    break;
                }
            }
            let outcome = match pick {
                Some(j) => {
                    used[j] = true;
                    if ignored[j] {
                        Outcome::Ignored
                    } else {
                        Outcome::Tp
                    }
                }
                None if !in_range(pred.xywh[2] * pred.xywh[3], range) => Outcome::Ignored,
                None => Outcome::Fp,
            };
            scored.push((pred.score, outcome));
        }
    }
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let flags: Vec<bool> = scored
        .iter()
        .filter(|(_, o)| *o != Outcome::Ignored)
        .map(|(_, o)| *o == Outcome::Tp)
        .collect();
    ap_from_flags(&flags, n_gt)
}

/// Mean AP over every (class, threshold) pair with ground truth in range.
pub fn map(gts: &[Gt], preds: &[Pred], classes: &[u32], thresholds: &[f64], range: (f64, f64)) -> Option<f64> {
    let values: Vec<f64> = thresholds
        .iter()
        .flat_map(|&t| classes.iter().filter_map(move |&c| class_ap(gts, preds, c, t, range)))
        .collect();
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

pub const ALL: (f64, f64) = (0.0, 1e10);
pub const SMALL: (f64, f64) = (0.0, 1024.0);
pub const MEDIUM: (f64, f64) = (1024.0, 9216.0);

pub fn coco_thresholds() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

/// The five report columns.
pub fn columns(gts: &[Gt], preds: &[Pred], classes: &[u32]) -> [Option<f64>; 5] {
    let ts = coco_thresholds();
    [
        map(gts, preds, classes, &ts, ALL),
        map(gts, preds, classes, &[0.5], ALL),
        map(gts, preds, classes, &[0.75], ALL),
        map(gts, preds, classes, &ts, SMALL),
        map(gts, preds, classes, &[0.5], MEDIUM),
    ]
}
