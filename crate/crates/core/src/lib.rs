//! Small-object re-detection on super-resolved windows.
//!
//! A first detection pass over a frame yields tentative boxes. The frame is
//! upscaled and denoised, a frame-sized window is cut around each tentative
//! box, the detector runs again on every window, and the re-detections are
//! mapped back and merged with the first pass by IoU. [`evalmap`] scores the
//! outcome with COCO-style mAP and [`synthdet`] supplies synthetic scenes
//! with an oracle detector for reproducible benchmarks.

pub mod dedup;
pub mod denoise;
pub mod detector;
pub mod evalmap;
pub mod geometry;
pub mod imagebuf;
pub mod pipeline;
pub mod superres;
pub mod synthdet;
pub mod transport;

pub use dedup::{iou, merge, MergePolicy};
pub use detector::{detect, Detection, DetectionSet, Detector, DetectorConfig};
pub use geometry::{CoordinateFrame, Point};
pub use imagebuf::ImageBuffer;
pub use pipeline::{Pipeline, PipelineConfig};
