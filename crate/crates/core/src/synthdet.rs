//! Synthetic road scenes and an oracle detector with area-dependent recall.
//!
//! The oracle reads the scene description instead of pixels: an object is
//! reported when the part of it visible through the current view, measured
//! in view pixels, covers at least `min_area`. Small objects that the
//! identity view misses therefore become detectable in zoomed windows.

use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detector::{DetectError, DetectInput, Detection, DetectionSet, Detector};
use crate::evalmap::{Annotation, GroundTruth, ImageInfo};
use crate::geometry::{CoordinateFrame, Point};
use crate::imagebuf::{ImageBuffer, Rgb};

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("invalid scene parameters: {0}")]
    Params(String),
    #[error("could not place object {index} without overlap after {attempts} attempts")]
    Packing { index: usize, attempts: usize },
    #[error("invalid scene: {0}")]
    Invalid(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse scene {path}: {source}")]
    Parse {
        path: std::path::PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneObject {
    /// `[x, y, w, h]` in frame pixels, top-left origin.
    pub bbox: [u32; 4],
    pub category_id: u32,
    pub color: Rgb,
}

impl SceneObject {
    pub fn area(&self) -> f64 {
        self.bbox[2] as f64 * self.bbox[3] as f64
    }

    /// Corners `(a, b, c, d)`.
    pub fn corners(&self) -> [f64; 4] {
        let [x, y, w, h] = self.bbox.map(f64::from);
        [x, y, x + w, y + h]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scene {
    pub frame_w: u32,
    pub frame_h: u32,
    pub background: Rgb,
    pub rng_seed: u64,
    pub objects: Vec<SceneObject>,
}

impl Scene {
    pub fn validate(&self) -> Result<(), SceneError> {
        for (i, o) in self.objects.iter().enumerate() {
            let [x, y, w, h] = o.bbox.map(u64::from);
            if w == 0 || h == 0 || x + w > self.frame_w as u64 || y + h > self.frame_h as u64 {
                return Err(SceneError::Invalid(format!(
                    "object {i} box {:?} outside frame",
                    o.bbox
                )));
            }
        }
        Ok(())
    }

    pub fn render(&self) -> ImageBuffer {
        let mut img = ImageBuffer::filled(self.frame_w as usize, self.frame_h as usize, self.background);
        for o in &self.objects {
            let [x, y, w, h] = o.bbox.map(|v| v as usize);
            for yy in y..y + h {
                for xx in x..x + w {
                    img.put(xx, yy, o.color);
                }
            }
        }
        img
    }

    pub fn load(path: &Path) -> Result<Self, SceneError> {
        let text = std::fs::read_to_string(path).map_err(|source| SceneError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let scene: Scene = serde_json::from_str(&text).map_err(|source| SceneError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        scene.validate()?;
        Ok(scene)
    }

    pub fn save(&self, path: &Path) -> Result<(), SceneError> {
        let mut text = serde_json::to_string_pretty(self).expect("serializable");
        text.push('\n');
        std::fs::write(path, text).map_err(|source| SceneError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Image entry and annotations for this scene; annotation ids start at
    /// `first_annotation_id`.
    pub fn ground_truth(
        &self,
        image_id: u64,
        file_name: &str,
        first_annotation_id: u64,
    ) -> (ImageInfo, Vec<Annotation>) {
        let info = ImageInfo {
            id: image_id,
            width: self.frame_w as usize,
            height: self.frame_h as usize,
            file_name: file_name.to_string(),
        };
        let anns = self
            .objects
            .iter()
            .zip(first_annotation_id..)
            .map(|(o, id)| Annotation {
                id,
                image_id,
                bbox: o.bbox.map(f64::from),
                category_id: o.category_id,
                area: None,
            })
            .collect();
        (info, anns)
    }
}

/// Ground truth for a sequence of `(image_id, file_name, scene)`.
pub fn scenes_to_ground_truth<'a>(scenes: impl IntoIterator<Item = (u64, &'a str, &'a Scene)>) -> GroundTruth {
    let mut gt = GroundTruth::default();
    for (image_id, name, scene) in scenes {
        let (info, anns) = scene.ground_truth(image_id, name, gt.annotations.len() as u64 + 1);
        gt.images.push(info);
        gt.annotations.extend(anns);
    }
    gt
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneParams {
    pub frame_w: u32,
    pub frame_h: u32,
    /// Inclusive object count range.
    pub objects: (usize, usize),
    /// Object area drawn uniformly from this range, px².
    pub area: (f64, f64),
    /// Width / height drawn uniformly from this range.
    pub aspect: (f64, f64),
    /// `(category_id, weight)`.
    pub class_mix: Vec<(u32, f64)>,
    pub background: Rgb,
    /// Objects never overlap. Touching is allowed.
    pub disjoint: bool,
    pub max_attempts: usize,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            frame_w: 128,
            frame_h: 96,
            objects: (5, 15),
            area: (16.0, 256.0),
            aspect: (1.0, 2.0),
            class_mix: vec![(3, 0.7), (4, 0.1), (6, 0.1), (8, 0.1)],
            background: [96, 104, 100],
            disjoint: true,
            max_attempts: 1000,
        }
    }
}

impl SceneParams {
    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |m: &str| Err(SceneError::Params(m.to_string()));
        if self.frame_w < 32 || self.frame_h < 32 {
            return bad("frame dimensions must be at least 32");
        }
        if self.objects.0 > self.objects.1 {
            return bad("object count range is empty");
        }
        let (lo, hi) = self.area;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return bad("area range must be positive and ordered");
        }
        let (lo, hi) = self.aspect;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return bad("aspect range must be positive and ordered");
        }
        if self.class_mix.is_empty() || self.class_mix.iter().any(|&(_, w)| !(w >= 0.0 && w.is_finite())) {
            return bad("class mix needs non-negative weights");
        }
        if self.class_mix.iter().map(|&(_, w)| w).sum::<f64>() <= 0.0 {
            return bad("class mix weights sum to zero");
        }
        if self.max_attempts == 0 {
            return bad("max_attempts must be positive");
        }
        Ok(())
    }
}

fn pick_class(rng: &mut ChaCha8Rng, mix: &[(u32, f64)]) -> u32 {
    let total: f64 = mix.iter().map(|&(_, w)| w).sum();
    let mut t = rng.random::<f64>() * total;
    for &(c, w) in mix {
        if t < w {
            return c;
        }
        t -= w;
    }
    mix.iter().rev().find(|&&(_, w)| w > 0.0).map_or(mix[0].0, |&(c, _)| c)
}

fn pick_color(rng: &mut ChaCha8Rng, background: Rgb) -> Rgb {
    loop {
        let c: Rgb = [rng.random(), rng.random(), rng.random()];
        let far = c.iter().zip(background).any(|(&v, b)| v.abs_diff(b) >= 64);
        if far {
            return c;
        }
    }
}

fn overlaps(p: &[u32; 4], q: &[u32; 4]) -> bool {
    p[0] < q[0] + q[2] && q[0] < p[0] + p[2] && p[1] < q[1] + q[3] && q[1] < p[1] + p[3]
}

/// Draws a scene from `seed` and renders it.
pub fn generate_scene(seed: u64, params: &SceneParams) -> Result<(Scene, ImageBuffer), SceneError> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = rng.random_range(params.objects.0..=params.objects.1);
    let mut objects: Vec<SceneObject> = Vec::with_capacity(count);
    for index in 0..count {
        let mut placed = None;
        for _ in 0..params.max_attempts {
            let area = rng.random_range(params.area.0..=params.area.1);
            let aspect = rng.random_range(params.aspect.0..=params.aspect.1);
            let w = ((area * aspect).sqrt().round() as u32).clamp(1, params.frame_w);
            let h = ((area / w as f64).round() as u32).clamp(1, params.frame_h);
            let x = rng.random_range(0..=params.frame_w - w);
            let y = rng.random_range(0..=params.frame_h - h);
            let bbox = [x, y, w, h];
            if params.disjoint && objects.iter().any(|o| overlaps(&o.bbox, &bbox)) {
                continue;
            }
            placed = Some(bbox);
            break;
        }
        let bbox = placed.ok_or(SceneError::Packing {
            index,
            attempts: params.max_attempts,
        })?;
        objects.push(SceneObject {
            bbox,
            category_id: pick_class(&mut rng, &params.class_mix),
            color: pick_color(&mut rng, params.background),
        });
    }
    let scene = Scene {
        frame_w: params.frame_w,
        frame_h: params.frame_h,
        background: params.background,
        rng_seed: seed,
        objects,
    };
    let img = scene.render();
    Ok((scene, img))
}

/// Monotone map from apparent area to confidence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScoreFn {
    /// `area / (area + half_area)`.
    Saturating {
        half_area: f64,
    },
    Constant {
        score: f64,
    },
}

impl ScoreFn {
    pub fn score(&self, area: f64) -> f64 {
        match *self {
            Self::Saturating { half_area } => area / (area + half_area),
            Self::Constant { score } => score,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecallModel {
    /// Smallest apparent area, in view pixels², that is detected.
    pub min_area: f64,
    pub score_fn: ScoreFn,
    /// Maximum corner perturbation in view pixels.
    pub jitter: f64,
}

impl RecallModel {
    pub fn new(min_area: f64) -> Self {
        Self {
            min_area,
            score_fn: ScoreFn::Saturating { half_area: min_area },
            jitter: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.min_area > 0.0 && self.min_area.is_finite()) {
            return Err(format!("min_area {} must be positive", self.min_area));
        }
        if !(self.jitter >= 0.0 && self.jitter.is_finite()) {
            return Err(format!("jitter {} must be non-negative", self.jitter));
        }
        match self.score_fn {
            ScoreFn::Saturating { half_area } if half_area.is_nan() || half_area <= 0.0 => {
                Err("saturating score needs half_area > 0".into())
            }
            ScoreFn::Constant { score } if !(0.0..=1.0).contains(&score) => {
                Err(format!("constant score {score} outside [0, 1]"))
            }
            _ => Ok(()),
        }
    }
}

fn jitter_rng(seed: u64, object: usize, view: &CoordinateFrame) -> ChaCha8Rng {
    // splitmix64 finalizer over the inputs that identify one observation.
    let mut h = seed;
    for v in [
        object as u64,
        view.offset.x.to_bits(),
        view.offset.y.to_bits(),
        view.scale.to_bits(),
    ] {
        h ^= v
            .wrapping_add(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(h << 6)
            .wrapping_add(h >> 2);
        h = (h ^ (h >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        h = (h ^ (h >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h ^= h >> 31;
    }
    ChaCha8Rng::seed_from_u64(h)
}

/// Detections in `img`-local coordinates for the objects visible through
/// `view`, which maps `img` pixels to scene coordinates.
pub fn oracle_detect(img: &ImageBuffer, view: &CoordinateFrame, scene: &Scene, model: &RecallModel) -> DetectionSet {
    let (iw, ih) = (img.width() as f64, img.height() as f64);
    let lo = view.offset;
    let hi = view.to_frame(Point::new(iw, ih));
    let mut items = Vec::new();
    for (k, o) in scene.objects.iter().enumerate() {
        let [a, b, c, d] = o.corners();
        let (va, vb) = (a.max(lo.x), b.max(lo.y));
        let (vc, vd) = (c.min(hi.x), d.min(hi.y));
        if vc <= va || vd <= vb {
            continue;
        }
        let apparent = (vc - va) * (vd - vb) * view.scale * view.scale;
        if apparent < model.min_area {
            continue;
        }
        let p = view.to_local(Point::new(va, vb));
        let q = view.to_local(Point::new(vc, vd));
        let mut corners = [p.x, p.y, q.x, q.y];
        if model.jitter > 0.0 {
            let mut rng = jitter_rng(scene.rng_seed, k, view);
            for v in &mut corners {
                *v += rng.random_range(-model.jitter..=model.jitter);
            }
        }
        let [x0, y0, x1, y1] = corners;
        let (a, c) = (x0.min(x1).clamp(0.0, iw), x0.max(x1).clamp(0.0, iw));
        let (b, d) = (y0.min(y1).clamp(0.0, ih), y0.max(y1).clamp(0.0, ih));
        items.push(Detection {
            a,
            b,
            c,
            d,
            class_id: o.category_id,
            score: model.score_fn.score(apparent).clamp(0.0, 1.0),
        });
    }
    DetectionSet::new(String::new(), items)
}

/// [`Detector`] answering from a known scene.
#[derive(Debug, Clone)]
pub struct OracleDetector {
    scene: Arc<Scene>,
    model: RecallModel,
}

impl OracleDetector {
    pub fn new(scene: Arc<Scene>, model: RecallModel) -> Self {
        Self { scene, model }
    }

    pub fn scene(&self) -> &Scene {
        &self.scene
    }
}

impl Detector for OracleDetector {
    fn infer(&self, input: &DetectInput<'_>) -> Result<Vec<Detection>, DetectError> {
        Ok(oracle_detect(input.image, &input.view, &self.scene, &self.model).items)
    }
}
