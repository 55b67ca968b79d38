//! Flat `key = value` run configuration with command-line overrides.
//!
//! Keys are case-sensitive; `-` and `_` are interchangeable on the command
//! line (`--min-area 64` sets `min_area`). Unknown keys are rejected.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use srdet::dedup::MergePolicy;
use srdet::denoise::NlmParams;
use srdet::detector::DetectorConfig;
use srdet::evalmap::EvalSpec;
use srdet::pipeline::PipelineConfig;
use srdet::superres::UpscaleMethod;
use srdet::synthdet::{RecallModel, SceneParams};
use thiserror::Error;

pub const BACKEND_ENV: &str = "SRD_BACKEND";

/// Every accepted key with its documentation, in display order.
pub const KEYS: &[(&str, &str)] = &[
    ("frames_dir", "directory of input PNG frames (enhance)"),
    ("gt", "ground-truth JSON; when set, enhance also writes the comparison"),
    ("output_dir", "where outputs are written"),
    (
        "backend",
        "detector backend: `oracle`, `exec:<cmd> [args]` or `tcp:<host>:<port>`",
    ),
    ("method", "upscaler: `bicubic`, `nearest` or `external`"),
    ("sr_backend", "backend URI of the external upscaler"),
    ("zoom", "integer zoom factor, >= 2"),
    ("max_detections", "per-call detection cap"),
    ("min_score", "per-call score floor"),
    ("iou_threshold", "merge threshold; strictly greater IoU means duplicate"),
    ("class_aware", "only same-class detections can be duplicates"),
    ("denoise", "run non-local means on the upscaled frame"),
    ("nlm_h", "non-local means filtering strength"),
    ("nlm_patch_radius", "non-local means patch radius"),
    ("nlm_search_radius", "non-local means search radius"),
    ("nlm_sigma", "non-local means noise level"),
    ("parallel_windows", "concurrent window detections; 0 = all cores"),
    ("timeout_ms", "network backend timeout; 0 disables"),
    ("timings", "write measured stage timings to the summary; off writes 0"),
    ("min_area", "oracle: smallest detectable apparent area, px²"),
    ("jitter", "oracle: maximum corner perturbation, px"),
    ("classes", "comma-separated category ids evaluated; empty = all"),
    ("seed", "bench: scene seed"),
    ("frames", "bench: number of frames"),
    ("min_objects", "bench: fewest objects per frame"),
    ("max_objects", "bench: most objects per frame"),
    ("frame_w", "bench: frame width"),
    ("frame_h", "bench: frame height"),
];

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("{path}:{line}: expected `key = value`")]
    Syntax { path: PathBuf, line: usize },
    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),
    #[error("key `{0}` given twice in the config file")]
    Duplicate(String),
    #[error("invalid value {value:?} for `{key}`: {reason}")]
    Value { key: String, value: String, reason: String },
    #[error("missing value for `--{0}`")]
    MissingValue(String),
    #[error("unexpected argument {0:?}")]
    Argument(String),
    #[error("cannot read config {path}: {reason}")]
    Read { path: PathBuf, reason: String },
    #[error("{0}")]
    Invalid(String),
}

/// Raw key/value pairs before typing.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawConfig(pub BTreeMap<String, String>);

fn known(key: &str) -> bool {
    KEYS.iter().any(|(k, _)| *k == key)
}

impl RawConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let mut map = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                path: path.to_path_buf(),
                line: i + 1,
            })?;
            let k = k.trim();
            if !known(k) {
                return Err(ConfigError::UnknownKey(k.to_string()));
            }
            if map.insert(k.to_string(), v.trim().to_string()).is_some() {
                return Err(ConfigError::Duplicate(k.to_string()));
            }
        }
        Ok(Self(map))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Self::parse(&text, path)
    }

    /// Applies `--key value`, `--key=value` and `--no-denoise`.
    pub fn apply_overrides(&mut self, args: &[String]) -> Result<(), ConfigError> {
        let mut it = args.iter();
        while let Some(arg) = it.next() {
            let Some(flag) = arg.strip_prefix("--") else {
                return Err(ConfigError::Argument(arg.clone()));
            };
            if flag == "no-denoise" || flag == "no_denoise" {
                self.0.insert("denoise".into(), "false".into());
                continue;
            }
            let (key, value) = match flag.split_once('=') {
                Some((k, v)) => (k.replace('-', "_"), v.to_string()),
                None => {
                    let key = flag.replace('-', "_");
                    let value = it.next().ok_or_else(|| ConfigError::MissingValue(key.clone()))?;
                    (key, value.clone())
                }
            };
            if !known(&key) {
                return Err(ConfigError::UnknownKey(key));
            }
            self.0.insert(key, value);
        }
        Ok(())
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        self.0
            .get(key)
            .map(|v| {
                v.parse().map_err(|e: T::Err| ConfigError::Value {
                    key: key.into(),
                    value: v.clone(),
                    reason: e.to_string(),
                })
            })
            .transpose()
    }

    fn get_bool(&self, key: &str) -> Result<Option<bool>, ConfigError> {
        self.0
            .get(key)
            .map(|v| match v.to_ascii_lowercase().as_str() {
                "true" | "on" | "yes" | "1" => Ok(true),
                "false" | "off" | "no" | "0" => Ok(false),
                _ => Err(ConfigError::Value {
                    key: key.into(),
                    value: v.clone(),
                    reason: "expected true or false".into(),
                }),
            })
            .transpose()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub frames_dir: Option<PathBuf>,
    pub gt: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub backend: String,
    pub pipeline: PipelineConfig,
    pub timeout: Option<Duration>,
    pub timings: Option<bool>,
    pub recall: RecallModel,
    pub eval: EvalSpec,
    pub seed: u64,
    pub frames: usize,
    pub scene: SceneParams,
}

pub const DEFAULT_MIN_AREA: f64 = 64.0;

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            frames_dir: None,
            gt: None,
            output_dir: PathBuf::from("out"),
            backend: "oracle".into(),
            pipeline: PipelineConfig::default(),
            timeout: Some(Duration::from_secs(30)),
            timings: None,
            recall: RecallModel::new(DEFAULT_MIN_AREA),
            eval: EvalSpec::default(),
            seed: 1,
            frames: 100,
            scene: bench_scene(DEFAULT_MIN_AREA),
        }
    }
}

/// Scene parameters of the synthetic benchmark: areas uniform in
/// `[min_area / 4, 4 min_area]`.
pub fn bench_scene(min_area: f64) -> SceneParams {
    SceneParams {
        area: (min_area / 4.0, 4.0 * min_area),
        ..SceneParams::default()
    }
}

impl RunConfig {
    /// Types and validates `raw`. `env_backend` overrides `backend`.
    pub fn from_raw(raw: &RawConfig, env_backend: Option<String>) -> Result<Self, ConfigError> {
        let mut c = Self::default();
        if let Some(v) = raw.0.get("frames_dir") {
            c.frames_dir = Some(PathBuf::from(v));
        }
        if let Some(v) = raw.0.get("gt") {
            c.gt = Some(PathBuf::from(v));
        }
        if let Some(v) = raw.0.get("output_dir") {
            c.output_dir = PathBuf::from(v);
        }
        if let Some(v) = raw.0.get("backend") {
            c.backend.clone_from(v);
        }
        if let Some(v) = env_backend.filter(|v| !v.trim().is_empty()) {
            c.backend = v;
        }

        let p = &mut c.pipeline;
        let mut det = DetectorConfig::default();
        if let Some(v) = raw.get("max_detections")? {
            det.max_detections = v;
        }
        if let Some(v) = raw.get("min_score")? {
            det.min_score = v;
        }
        p.detector = det;
        if let Some(v) = raw.get("zoom")? {
            p.zoom = v;
        }
        p.method = match raw.0.get("method").map(String::as_str) {
            None | Some("bicubic") => UpscaleMethod::Bicubic,
            Some("nearest") => UpscaleMethod::Nearest,
            Some("external") => UpscaleMethod::External {
                backend_uri: raw.0.get("sr_backend").cloned().unwrap_or_default(),
            },
            Some(other) => {
                return Err(ConfigError::Value {
                    key: "method".into(),
                    value: other.into(),
                    reason: "expected bicubic, nearest or external".into(),
                })
            }
        };
        let mut merge = MergePolicy::default();
        if let Some(v) = raw.get("iou_threshold")? {
            merge.theta = v;
        }
        if let Some(v) = raw.get_bool("class_aware")? {
            merge.class_aware = v;
        }
        p.merge = merge;
        if let Some(v) = raw.get_bool("denoise")? {
            p.denoise = v;
        }
        let mut nlm = NlmParams::default();
        if let Some(v) = raw.get("nlm_h")? {
            nlm.h = v;
        }
        if let Some(v) = raw.get("nlm_patch_radius")? {
            nlm.patch_radius = v;
        }
        if let Some(v) = raw.get("nlm_search_radius")? {
            nlm.search_radius = v;
        }
        if let Some(v) = raw.get("nlm_sigma")? {
            nlm.sigma = v;
        }
        p.nlm = nlm;
        if let Some(v) = raw.get("parallel_windows")? {
            p.parallel_windows = v;
        }
        p.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;

        if let Some(ms) = raw.get::<u64>("timeout_ms")? {
            c.timeout = (ms > 0).then(|| Duration::from_millis(ms));
        }
        c.timings = raw.get_bool("timings")?;

        if let Some(v) = raw.get("min_area")? {
            c.recall = RecallModel::new(v);
        }
        if let Some(v) = raw.get("jitter")? {
            c.recall.jitter = v;
        }
        c.recall.validate().map_err(ConfigError::Invalid)?;

        if let Some(v) = raw.0.get("classes") {
            c.eval.class_filter = parse_classes(v)?;
        }

        if let Some(v) = raw.get("seed")? {
            c.seed = v;
        }
        if let Some(v) = raw.get("frames")? {
            c.frames = v;
        }
        c.scene = bench_scene(c.recall.min_area);
        if let Some(v) = raw.get("min_objects")? {
            c.scene.objects.0 = v;
        }
        if let Some(v) = raw.get("max_objects")? {
            c.scene.objects.1 = v;
        }
        if let Some(v) = raw.get("frame_w")? {
            c.scene.frame_w = v;
        }
        if let Some(v) = raw.get("frame_h")? {
            c.scene.frame_h = v;
        }
        c.scene.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(c)
    }

    /// Settings recorded above the summary header.
    pub fn describe(&self) -> Vec<String> {
        let p = &self.pipeline;
        let method = match &p.method {
            UpscaleMethod::Nearest => "nearest",
            UpscaleMethod::Bicubic => "bicubic",
            UpscaleMethod::External { .. } => "external",
        };
        vec![format!(
            "zoom={} method={} denoise={} iou_threshold={} max_detections={} min_score={}",
            p.zoom,
            method,
            if p.denoise { "on" } else { "off" },
            p.merge.theta,
            p.detector.max_detections,
            p.detector.min_score
        )]
    }
}

/// `"3,8"` → `Some([3, 8])`; empty → `None`.
pub fn parse_classes(v: &str) -> Result<Option<Vec<u32>>, ConfigError> {
    if v.trim().is_empty() {
        return Ok(None);
    }
    let mut ids = v
        .split(',')
        .map(|s| {
            s.trim().parse::<u32>().map_err(|e| ConfigError::Value {
                key: "classes".into(),
                value: v.into(),
                reason: e.to_string(),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    ids.sort_unstable();
    ids.dedup();
    Ok(Some(ids))
}
