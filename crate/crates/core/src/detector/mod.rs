//! The object detector abstraction: a backend maps an image to a set of
//! scored, classed boxes; [`detect`] applies the score floor and the
//! detection cap on top of whatever the backend returns.

mod wire;

use std::cmp::Ordering;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::CoordinateFrame;
use crate::imagebuf::{ImageBuffer, ImageError};
use crate::transport::{BackendUri, ConnectionPool, TransportError};

pub(crate) use wire::{check_version, image_from_base64, image_to_base64};
pub use wire::{
    decode_request, decode_response, encode_error_response, encode_request, encode_request_with_id, encode_response,
    next_request_id, DetectRequest, WireError, PROTOCOL_VERSION,
};

#[derive(Debug, Error, PartialEq)]
pub enum InvalidDetection {
    #[error("non-finite box coordinates")]
    NonFinite,
    #[error("inverted box [{a}, {b}, {c}, {d}]")]
    Inverted { a: f64, b: f64, c: f64, d: f64 },
    #[error("score {0} outside [0, 1]")]
    Score(f64),
    #[error("class id must be >= 1")]
    Class,
}

/// One detected object. `(a, b)` is the top-left and `(c, d)` the
/// bottom-right corner in top-left-origin pixel coordinates of whatever
/// image the detection refers to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub class_id: u32,
    pub score: f64,
}

impl Detection {
    pub fn new(a: f64, b: f64, c: f64, d: f64, class_id: u32, score: f64) -> Result<Self, InvalidDetection> {
        let det = Self {
            a,
            b,
            c,
            d,
            class_id,
            score,
        };
        det.validate()?;
        Ok(det)
    }

    pub fn validate(&self) -> Result<(), InvalidDetection> {
        let Self { a, b, c, d, .. } = *self;
        if ![a, b, c, d].iter().all(|v| v.is_finite()) {
            return Err(InvalidDetection::NonFinite);
        }
        if a > c || b > d {
            return Err(InvalidDetection::Inverted { a, b, c, d });
        }
        if !(0.0..=1.0).contains(&self.score) {
            return Err(InvalidDetection::Score(self.score));
        }
        if self.class_id < 1 {
            return Err(InvalidDetection::Class);
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.c - self.a
    }

    pub fn height(&self) -> f64 {
        self.d - self.b
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Clips the box to `[0, w] x [0, h]`.
    pub fn clipped(&self, w: f64, h: f64) -> Self {
        let cl = |v: f64, hi: f64| v.clamp(0.0, hi);
        Self {
            a: cl(self.a, w),
            b: cl(self.b, h),
            c: cl(self.c, w),
            d: cl(self.d, h),
            ..*self
        }
    }

    /// Total order used wherever detections are ranked: score descending,
    /// then corners and class ascending.
    pub fn rank_cmp(&self, other: &Self) -> Ordering {
        other
            .score
            .total_cmp(&self.score)
            .then(self.a.total_cmp(&other.a))
            .then(self.b.total_cmp(&other.b))
            .then(self.c.total_cmp(&other.c))
            .then(self.d.total_cmp(&other.d))
            .then(self.class_id.cmp(&other.class_id))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectionSet {
    pub frame_id: String,
    pub items: Vec<Detection>,
}

impl DetectionSet {
    pub fn new(frame_id: impl Into<String>, items: Vec<Detection>) -> Self {
        Self {
            frame_id: frame_id.into(),
            items,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub max_detections: usize,
    pub min_score: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            max_detections: 100,
            min_score: 0.3,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_detections < 1 {
            return Err("max_detections must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.min_score) {
            return Err(format!("min_score {} outside [0, 1]", self.min_score));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum DetectError {
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("protocol error: {0}")]
    Protocol(#[from] WireError),
    #[error("backend reported failure: {0}")]
    Backend(String),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("invalid detection from backend: {0}")]
    Invalid(#[from] InvalidDetection),
}

/// What a backend sees for one call: the pixels, the detector settings and
/// where the image sits relative to the source frame. Real models ignore
/// `view`; the synthetic oracle needs it to know what it is looking at.
pub struct DetectInput<'a> {
    pub image: &'a ImageBuffer,
    pub view: CoordinateFrame,
    pub config: &'a DetectorConfig,
}

pub trait Detector: Send + Sync {
    /// Raw detections in top-left pixel coordinates of `input.image`.
    fn infer(&self, input: &DetectInput<'_>) -> Result<Vec<Detection>, DetectError>;
}

impl<T: Detector + ?Sized> Detector for Arc<T> {
    fn infer(&self, input: &DetectInput<'_>) -> Result<Vec<Detection>, DetectError> {
        (**self).infer(input)
    }
}

/// Runs `backend` once on a whole frame.
pub fn detect(backend: &dyn Detector, img: &ImageBuffer, cfg: &DetectorConfig) -> Result<DetectionSet, DetectError> {
    detect_in_view(backend, img, CoordinateFrame::IDENTITY, cfg)
}

/// Runs `backend` once on `img`, which covers `view` of the source frame,
/// and post-filters the result.
pub fn detect_in_view(
    backend: &dyn Detector,
    img: &ImageBuffer,
    view: CoordinateFrame,
    cfg: &DetectorConfig,
) -> Result<DetectionSet, DetectError> {
    let raw = backend.infer(&DetectInput {
        image: img,
        view,
        config: cfg,
    })?;
    for det in &raw {
        det.validate()?;
    }
    Ok(DetectionSet::new(
        "",
        post_filter(raw, cfg, img.width() as f64, img.height() as f64),
    ))
}

/// Clips boxes to the image, drops scores below the floor, ranks by
/// [`Detection::rank_cmp`] and keeps at most `max_detections`.
pub fn post_filter(mut items: Vec<Detection>, cfg: &DetectorConfig, w: f64, h: f64) -> Vec<Detection> {
    items.retain(|d| d.score >= cfg.min_score);
    for d in &mut items {
        *d = d.clipped(w, h);
    }
    items.sort_by(Detection::rank_cmp);
    items.truncate(cfg.max_detections);
    items
}

/// Detector reached over the line protocol (`exec:` or `tcp:` URI).
pub struct WireDetector {
    pool: ConnectionPool,
}

impl WireDetector {
    pub fn new(uri: BackendUri, timeout: Option<Duration>) -> Self {
        Self {
            pool: ConnectionPool::new(uri, timeout),
        }
    }

    pub fn uri(&self) -> &BackendUri {
        self.pool.uri()
    }
}

impl Detector for WireDetector {
    fn infer(&self, input: &DetectInput<'_>) -> Result<Vec<Detection>, DetectError> {
        let id = next_request_id();
        let line = encode_request_with_id(input.image, input.config, id)?;
        let reply = self.pool.round_trip(&line)?;
        Ok(decode_response(&reply, id)?.items)
    }
}
