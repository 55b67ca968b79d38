//! Random evaluation instances in both the oracle's and the library's form.

use rand::Rng;
use srdet::detector::Detection;
use srdet::evalmap::{Annotation, GroundTruth, ImageInfo, Predictions};

use super::map::{Gt, Pred};

pub struct Instance {
    pub gts: Vec<Gt>,
    pub preds: Vec<Pred>,
    pub gt: GroundTruth,
    pub predictions: Predictions,
    pub classes: Vec<u32>,
}

const SIZE: u32 = 160;

fn random_box(rng: &mut impl Rng) -> [f64; 4] {
    // Sides up to 80 px put areas on both sides of the 32² and 96² cutoffs.
    let w = rng.random_range(2..=80u32);
    let h = rng.random_range(2..=80u32);
    let x = rng.random_range(0..=SIZE - w);
    let y = rng.random_range(0..=SIZE - h);
    [x, y, w, h].map(f64::from)
}

fn near(rng: &mut impl Rng, b: [f64; 4]) -> [f64; 4] {
    let mut d = || rng.random_range(-6..=6) as f64;
    let w = (b[2] + d()).max(1.0);
    let h = (b[3] + d()).max(1.0);
    let x = (b[0] + d()).clamp(0.0, SIZE as f64 - w);
    let y = (b[1] + d()).clamp(0.0, SIZE as f64 - h);
    [x, y, w, h]
}

/// At most 4 frames, 5 objects per frame and 8 predictions per frame,
/// classes from {1, 2, 3}. Scores sit on a 0.05 grid so ties occur.
pub fn random_instance(rng: &mut impl Rng) -> Instance {
    let n_images = rng.random_range(1..=4u64);
    let mut gts = Vec::new();
    let mut preds = Vec::new();
    for image in 1..=n_images {
        let n_obj = rng.random_range(0..=5);
        let objs: Vec<Gt> = (0..n_obj)
            .map(|_| Gt {
                image,
                xywh: random_box(rng),
                class: rng.random_range(1..=3),
            })
            .collect();
        let n_pred = rng.random_range(0..=8);
        for _ in 0..n_pred {
            let score = rng.random_range(1..=20) as f64 / 20.0;
            let pred = if !objs.is_empty() && rng.random_bool(0.7) {
                let g = objs[rng.random_range(0..objs.len())];
                let class = if rng.random_bool(0.85) {
                    g.class
                } else {
                    rng.random_range(1..=3)
                };
                Pred {
                    image,
                    xywh: near(rng, g.xywh),
                    class,
                    score,
                }
            } else {
                Pred {
                    image,
                    xywh: random_box(rng),
                    class: rng.random_range(1..=3),
                    score,
                }
            };
            preds.push(pred);
        }
        gts.extend(objs);
    }

    let gt = GroundTruth {
        images: (1..=n_images)
            .map(|id| ImageInfo {
                id,
                width: SIZE as usize,
                height: SIZE as usize,
                file_name: format!("{id}.png"),
            })
            .collect(),
        annotations: gts
            .iter()
            .enumerate()
            .map(|(i, g)| Annotation {
                id: i as u64 + 1,
                image_id: g.image,
                bbox: g.xywh,
                category_id: g.class,
                area: None,
            })
            .collect(),
    };
    let mut predictions = Predictions::new();
    for p in &preds {
        let [x, y, w, h] = p.xywh;
        predictions
            .entry(p.image)
            .or_default()
            .items
            .push(Detection::new(x, y, x + w, y + h, p.class, p.score).unwrap());
    }
    let mut classes: Vec<u32> = gts.iter().map(|g| g.class).collect();
    classes.sort_unstable();
    classes.dedup();
    Instance {
        gts,
        preds,
        gt,
        predictions,
        classes,
    }
}
