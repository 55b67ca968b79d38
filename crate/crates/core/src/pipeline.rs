//! The re-detection pipeline: detect on the frame, super-resolve and
//! denoise it, re-detect in one window per first-pass detection, map the
//! window detections back and merge.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dedup::{merge, MergePolicy};
use crate::denoise::{nlm_denoise, NlmParams};
use crate::detector::{detect, detect_in_view, DetectError, DetectionSet, Detector, DetectorConfig};
use crate::geometry::{window_for_detection, GeometryError, WindowPlacement};
use crate::imagebuf::{load_png, ImageBuffer, ImageError};
use crate::superres::{UpscaleError, UpscaleMethod, Upscaler};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub detector: DetectorConfig,
    pub zoom: u32,
    pub method: UpscaleMethod,
    pub nlm: NlmParams,
    pub denoise: bool,
    pub merge: MergePolicy,
    /// Concurrent window detections; 0 uses every available core.
    pub parallel_windows: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            detector: DetectorConfig::default(),
            zoom: 2,
            method: UpscaleMethod::default(),
            nlm: NlmParams::default(),
            denoise: true,
            merge: MergePolicy::default(),
            parallel_windows: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let cfg = PipelineError::Config;
        self.detector.validate().map_err(cfg)?;
        if self.zoom < 2 {
            return Err(cfg(format!("zoom must be >= 2, got {}", self.zoom)));
        }
        self.nlm.validate().map_err(cfg)?;
        self.merge.validate().map_err(cfg)?;
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid pipeline configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error(transparent)]
    Upscale(#[from] UpscaleError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Image(#[from] ImageError),
}

/// Wall time per stage in milliseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub detect_ms: f64,
    pub sr_ms: f64,
    pub nlm_ms: f64,
    pub windows_ms: f64,
    pub merge_ms: f64,
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowResult {
    pub placement: WindowPlacement,
    /// Re-detections mapped back to frame coordinates.
    pub detections: DetectionSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameResult {
    pub base: DetectionSet,
    /// One entry per base detection, in base order.
    pub per_window: Vec<WindowResult>,
    pub merged: DetectionSet,
    pub timings: Timings,
}

#[derive(Debug, Error)]
#[error("{source}")]
pub struct FrameError {
    #[source]
    pub source: PipelineError,
    /// Stages that completed before the failure.
    pub timings: Timings,
}

pub struct Pipeline {
    cfg: PipelineConfig,
    upscaler: Upscaler,
    pool: Option<rayon::ThreadPool>,
}

impl Pipeline {
    /// `timeout` applies to external upscaler calls.
    pub fn new(cfg: PipelineConfig, timeout: Option<Duration>) -> Result<Self, PipelineError> {
        cfg.validate()?;
        let upscaler = Upscaler::new(cfg.method.clone(), timeout)?;
        let pool = match cfg.parallel_windows {
            0 => None,
            n => Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build()
                    .map_err(|e| PipelineError::Config(format!("thread pool: {e}")))?,
            ),
        };
        Ok(Self { cfg, upscaler, pool })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        match &self.pool {
            Some(pool) => pool.install(f),
            None => f(),
        }
    }

    pub fn enhance_frame(&self, img: &ImageBuffer, backend: &dyn Detector) -> Result<FrameResult, FrameError> {
        let mut timings = Timings::default();
        let fail = |source: PipelineError, timings: Timings| FrameError { source, timings };
        let cfg = &self.cfg;

        let t = Instant::now();
        let base = detect(backend, img, &cfg.detector).map_err(|e| fail(e.into(), timings))?;
        timings.detect_ms = ms(t.elapsed());
        if base.is_empty() {
            return Ok(FrameResult {
                base,
                per_window: Vec::new(),
                merged: DetectionSet::default(),
                timings,
            });
        }

        let t = Instant::now();
        let hr = self
            .upscaler
            .upscale(img, cfg.zoom)
            .map_err(|e| fail(e.into(), timings))?;
        timings.sr_ms = ms(t.elapsed());

        let hr = if cfg.denoise {
            let t = Instant::now();
            let out = self.install(|| nlm_denoise(&hr, &cfg.nlm));
            timings.nlm_ms = ms(t.elapsed());
            out
        } else {
            hr
        };

        let t = Instant::now();
        let (lr_w, lr_h) = (img.width(), img.height());
        let (fw, fh) = (lr_w as f64, lr_h as f64);
        let run_window = |det| -> Result<WindowResult, PipelineError> {
            let placement = window_for_detection(det, lr_w, lr_h, cfg.zoom)?;
            let r = placement.hr_rect;
            let crop = hr.crop(r.left, r.top, r.w, r.h)?;
            let found = detect_in_view(backend, &crop, placement.frame, &cfg.detector)?;
            let items = found
                .items
                .iter()
                .map(|d| placement.frame.detection_to_frame(d).clipped(fw, fh))
                .collect();
            Ok(WindowResult {
                placement,
                detections: DetectionSet::new(base.frame_id.clone(), items),
            })
        };
        let outcomes: Vec<Result<WindowResult, PipelineError>> =
            self.install(|| base.items.par_iter().map(run_window).collect());
        let mut per_window = Vec::with_capacity(outcomes.len());
        for o in outcomes {
            per_window.push(o.map_err(|e| fail(e, timings))?);
        }
        timings.windows_ms = ms(t.elapsed());

        let t = Instant::now();
        let windows: Vec<DetectionSet> = per_window.iter().map(|w| w.detections.clone()).collect();
        let merged = merge(&base, &windows, &cfg.merge);
        timings.merge_ms = ms(t.elapsed());

        Ok(FrameResult {
            base,
            per_window,
            merged,
            timings,
        })
    }
}

/// Convenience wrapper building a [`Pipeline`] for a single frame.
pub fn enhance_frame(
    img: &ImageBuffer,
    cfg: &PipelineConfig,
    backend: &dyn Detector,
) -> Result<FrameResult, FrameError> {
    let pipeline = Pipeline::new(cfg.clone(), None).map_err(|source| FrameError {
        source,
        timings: Timings::default(),
    })?;
    pipeline.enhance_frame(img, backend)
}

/// Supplies the backend used for one frame.
pub trait DetectorSource: Send + Sync {
    fn for_frame(&self, path: &Path) -> Result<Arc<dyn Detector>, DetectError>;
}

/// The same backend for every frame.
pub struct SharedDetector(pub Arc<dyn Detector>);

impl DetectorSource for SharedDetector {
    fn for_frame(&self, _path: &Path) -> Result<Arc<dyn Detector>, DetectError> {
        Ok(Arc::clone(&self.0))
    }
}

#[derive(Debug)]
pub struct FrameOutcome {
    pub frame_id: String,
    pub path: PathBuf,
    pub result: Result<FrameResult, FrameError>,
}

/// Frame id used in outputs: the file stem.
pub fn frame_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Runs every frame in order. A failing frame does not stop the sequence.
pub fn enhance_sequence(frames: &[PathBuf], pipeline: &Pipeline, source: &dyn DetectorSource) -> Vec<FrameOutcome> {
    frames
        .iter()
        .map(|path| {
            let id = frame_id(path);
            let no_timings = |source: PipelineError| FrameError {
                source,
                timings: Timings::default(),
            };
            let result = load_png(path)
                .map_err(|e| no_timings(e.into()))
                .and_then(|img| {
                    let backend = source.for_frame(path).map_err(|e| no_timings(e.into()))?;
                    pipeline.enhance_frame(&img, backend.as_ref())
                })
                .map(|mut r| {
                    r.base.frame_id.clone_from(&id);
                    r.merged.frame_id.clone_from(&id);
                    for w in &mut r.per_window {
                        w.detections.frame_id.clone_from(&id);
                    }
                    r
                });
            FrameOutcome {
                frame_id: id,
                path: path.clone(),
                result,
            }
        })
        .collect()
}

pub const SUMMARY_HEADER: &str = "frame_id,n_base,n_merged,t_detect_ms,t_sr_ms,t_nlm_ms,t_windows_ms,t_merge_ms";

/// Summary CSV. With `timings` off every duration is written as 0 so the
/// file depends only on the inputs. `comment` lines go above the header,
/// each prefixed with `# `.
pub fn summary_csv(outcomes: &[FrameOutcome], timings: bool, comment: &[String]) -> String {
    let mut s = String::new();
    for line in comment {
        let _ = writeln!(s, "# {line}");
    }
    s.push_str(SUMMARY_HEADER);
    s.push('\n');
    for o in outcomes {
        let (n_base, n_merged, t) = match &o.result {
            Ok(r) => (r.base.len().to_string(), r.merged.len().to_string(), r.timings),
            Err(e) => ("NA".to_string(), "NA".to_string(), e.timings),
        };
        let t = if timings { t } else { Timings::default() };
        let f = |v: f64| if timings { format!("{v:.3}") } else { "0".to_string() };
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            o.frame_id,
            n_base,
            n_merged,
            f(t.detect_ms),
            f(t.sr_ms),
            f(t.nlm_ms),
            f(t.windows_ms),
            f(t.merge_ms)
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::{DetectInput, Detection};
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Nothing;

    impl Detector for Nothing {
        fn infer(&self, _: &DetectInput<'_>) -> Result<Vec<Detection>, DetectError> {
            Ok(Vec::new())
        }
    }

    /// Fixed detections on the full frame, one shifted re-detection per window.
    struct Scripted {
        calls: AtomicUsize,
    }

    impl Detector for Scripted {
        fn infer(&self, input: &DetectInput<'_>) -> Result<Vec<Detection>, DetectError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            if input.view.scale == 1.0 {
                return Ok(vec![Detection::new(10.0, 10.0, 20.0, 20.0, 3, 0.4)?]);
            }
            // Same object seen at 2x with higher confidence.
            let tl = input.view.to_local(crate::geometry::Point::new(10.0, 10.0));
            let br = input.view.to_local(crate::geometry::Point::new(20.0, 20.0));
            Ok(vec![Detection::new(tl.x, tl.y, br.x, br.y, 3, 0.9)?])
        }
    }

    struct Failing;

    impl Detector for Failing {
        fn infer(&self, input: &DetectInput<'_>) -> Result<Vec<Detection>, DetectError> {
            if input.view.scale == 1.0 {
                Ok(vec![Detection::new(0.0, 0.0, 4.0, 4.0, 3, 0.9)?])
            } else {
                Err(DetectError::Backend("window failed".into()))
            }
        }
    }

    fn frame() -> ImageBuffer {
        ImageBuffer::from_fn(48, 40, |x, y| [(x * 5) as u8, (y * 6) as u8, 90])
    }

    #[test]
    fn empty_base_short_circuits() {
        // An external method with an unreachable backend proves no upscale call.
        let cfg = PipelineConfig {
            method: UpscaleMethod::External {
                backend_uri: "tcp:127.0.0.1:1".into(),
            },
            ..PipelineConfig::default()
        };
        let r = enhance_frame(&frame(), &cfg, &Nothing).unwrap();
        assert!(r.base.is_empty() && r.merged.is_empty() && r.per_window.is_empty());
        assert_eq!(r.timings.sr_ms, 0.0);
    }

    #[test]
    fn higher_scoring_redetection_replaces_base() {
        let backend = Scripted {
            calls: AtomicUsize::new(0),
        };
        let cfg = PipelineConfig {
            denoise: false,
            ..PipelineConfig::default()
        };
        let r = enhance_frame(&frame(), &cfg, &backend).unwrap();
        assert_eq!(backend.calls.load(Ordering::SeqCst), 2);
        assert_eq!(r.per_window.len(), 1);
        assert_eq!(r.merged.len(), 1);
        let d = r.merged.items[0];
        assert_eq!(d.score, 0.9);
        for (got, want) in [(d.a, 10.0), (d.b, 10.0), (d.c, 20.0), (d.d, 20.0)] {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn window_failure_carries_partial_timings() {
        let err = enhance_frame(&frame(), &PipelineConfig::default(), &Failing).unwrap_err();
        assert!(matches!(err.source, PipelineError::Detect(DetectError::Backend(_))));
        assert!(err.timings.nlm_ms > 0.0);
        assert_eq!(err.timings.merge_ms, 0.0);
    }

    #[test]
    fn config_validation() {
        let bad = PipelineConfig {
            zoom: 1,
            ..PipelineConfig::default()
        };
        assert!(matches!(bad.validate(), Err(PipelineError::Config(_))));
        let bad = PipelineConfig {
            merge: MergePolicy {
                theta: 1.5,
                class_aware: true,
            },
            ..PipelineConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(PipelineConfig::default().validate().is_ok());
    }

    #[test]
    fn summary_of_nothing_is_header_only() {
        assert_eq!(summary_csv(&[], true, &[]), format!("{SUMMARY_HEADER}\n"));
        let c = summary_csv(&[], false, &["denoise=off".to_string()]);
        assert_eq!(c, format!("# denoise=off\n{SUMMARY_HEADER}\n"));
    }

    #[test]
    fn summary_rows() {
        let ok = FrameOutcome {
            frame_id: "f1".into(),
            path: "f1.png".into(),
            result: Ok(FrameResult {
                base: DetectionSet::new("f1", vec![Detection::new(0.0, 0.0, 1.0, 1.0, 3, 0.5).unwrap()]),
                per_window: Vec::new(),
                merged: DetectionSet::default(),
                timings: Timings {
                    detect_ms: 1.25,
                    ..Timings::default()
                },
            }),
        };
        let bad = FrameOutcome {
            frame_id: "f2".into(),
            path: "f2.png".into(),
            result: Err(FrameError {
                source: PipelineError::Config("x".into()),
                timings: Timings::default(),
            }),
        };
        let outs = [ok, bad];
        let with = summary_csv(&outs, true, &[]);
        assert!(with.contains("\nf1,1,0,1.250,0.000,0.000,0.000,0.000\n"));
        let without = summary_csv(&outs, false, &[]);
        assert!(without.ends_with("f1,1,0,0,0,0,0,0\nf2,NA,NA,0,0,0,0,0\n"));
    }
}
