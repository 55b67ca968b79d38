//! Detector wire protocol, version 1.
//!
//! One UTF-8 JSON object per line. Requests:
//!
//! ```text
//! {"v":1,"request_id":7,"max_detections":100,"min_score":0.3,"image":"<base64 PNG>"}
//! ```
//!
//! Responses carry either a detection list or an error string:
//!
//! ```text
//! {"v":1,"request_id":7,"detections":[{"box":[10.0,20.0,30.0,40.0],"class_id":3,"score":0.8}]}
//! {"v":1,"request_id":7,"error":"image too large"}
//! ```
//!
//! Boxes are `[a, b, c, d]` corners in top-left pixel coordinates of the
//! request image.

use std::sync::atomic::{AtomicU64, Ordering};

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Detection, DetectionSet, DetectorConfig, InvalidDetection};
use crate::imagebuf::{decode_png_bytes, encode_png_bytes, ImageBuffer, ImageError};

pub const PROTOCOL_VERSION: u32 = 1;

static REQUEST_COUNTER: AtomicU64 = AtomicU64::new(1);

/// Process-wide, strictly increasing request id.
pub fn next_request_id() -> u64 {
    REQUEST_COUNTER.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Error)]
pub enum WireError {
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("unsupported protocol version {0}")]
    Version(u32),
    #[error("response is for request {got}, expected {expected}")]
    RequestId { expected: u64, got: u64 },
    #[error("backend error for request {request_id}: {message}")]
    Remote { request_id: u64, message: String },
    #[error("detection #{index}: {source}")]
    Detection {
        index: usize,
        #[source]
        source: InvalidDetection,
    },
    #[error("image payload: {0}")]
    Image(#[from] ImageError),
    #[error("{0}")]
    Violation(String),
}

#[derive(Serialize, Deserialize)]
struct RequestMsg {
    v: u32,
    request_id: u64,
    max_detections: usize,
    min_score: f64,
    image: String,
}

#[derive(Serialize, Deserialize)]
struct WireDetection {
    #[serde(rename = "box")]
    bbox: [f64; 4],
    class_id: u32,
    score: f64,
}

#[derive(Serialize, Deserialize)]
struct ResponseMsg {
    v: u32,
    request_id: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    detections: Option<Vec<WireDetection>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

pub(crate) fn image_to_base64(img: &ImageBuffer) -> Result<String, ImageError> {
    Ok(BASE64.encode(encode_png_bytes(img)?))
}

pub(crate) fn image_from_base64(data: &str) -> Result<ImageBuffer, WireError> {
    let bytes = BASE64
        .decode(data)
        .map_err(|e| WireError::Malformed(format!("image is not base64: {e}")))?;
    Ok(decode_png_bytes(&bytes)?)
}

pub(crate) fn check_version(v: u32) -> Result<(), WireError> {
    if v == PROTOCOL_VERSION {
        Ok(())
    } else {
        Err(WireError::Version(v))
    }
}

/// Encodes a request with a fresh id from [`next_request_id`].
pub fn encode_request(img: &ImageBuffer, cfg: &DetectorConfig) -> Result<String, ImageError> {
    encode_request_with_id(img, cfg, next_request_id())
}

pub fn encode_request_with_id(img: &ImageBuffer, cfg: &DetectorConfig, request_id: u64) -> Result<String, ImageError> {
    let msg = RequestMsg {
        v: PROTOCOL_VERSION,
        request_id,
        max_detections: cfg.max_detections,
        min_score: cfg.min_score,
        image: image_to_base64(img)?,
    };
    Ok(serde_json::to_string(&msg).expect("request serializes"))
}

/// Parses a detection response and checks it answers `expected_id`.
pub fn decode_response(msg: &str, expected_id: u64) -> Result<DetectionSet, WireError> {
    let resp: ResponseMsg = serde_json::from_str(msg).map_err(|e| WireError::Malformed(e.to_string()))?;
    check_version(resp.v)?;
    if resp.request_id != expected_id {
        return Err(WireError::RequestId {
            expected: expected_id,
            got: resp.request_id,
        });
    }
    if let Some(message) = resp.error {
        return Err(WireError::Remote {
            request_id: resp.request_id,
            message,
        });
    }
    let wire = resp
        .detections
        .ok_or_else(|| WireError::Malformed("missing `detections`".into()))?;
    let items = wire
        .into_iter()
        .enumerate()
        .map(|(index, w)| {
            let [a, b, c, d] = w.bbox;
            Detection::new(a, b, c, d, w.class_id, w.score).map_err(|source| WireError::Detection { index, source })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(DetectionSet::new("", items))
}

/// A decoded request, as seen by a server.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectRequest {
    pub request_id: u64,
    pub config: DetectorConfig,
    pub image: ImageBuffer,
}

/// Server side: parses one request line. On failure the request id is
/// returned when it could be recovered, so the error response can echo it.
pub fn decode_request(line: &str) -> Result<DetectRequest, (Option<u64>, WireError)> {
    let value: serde_json::Value =
        serde_json::from_str(line).map_err(|e| (None, WireError::Malformed(e.to_string())))?;
    let id = value.get("request_id").and_then(serde_json::Value::as_u64);
    let msg: RequestMsg = serde_json::from_value(value).map_err(|e| (id, WireError::Malformed(e.to_string())))?;
    check_version(msg.v).map_err(|e| (id, e))?;
    let image = image_from_base64(&msg.image).map_err(|e| (id, e))?;
    Ok(DetectRequest {
        request_id: msg.request_id,
        config: DetectorConfig {
            max_detections: msg.max_detections,
            min_score: msg.min_score,
        },
        image,
    })
}

pub fn encode_response(request_id: u64, detections: &[Detection]) -> String {
    let msg = ResponseMsg {
        v: PROTOCOL_VERSION,
        request_id,
        detections: Some(
            detections
                .iter()
                .map(|d| WireDetection {
                    bbox: [d.a, d.b, d.c, d.d],
                    class_id: d.class_id,
                    score: d.score,
                })
                .collect(),
        ),
        error: None,
    };
    serde_json::to_string(&msg).expect("response serializes")
}

pub fn encode_error_response(request_id: u64, message: &str) -> String {
    let msg = ResponseMsg {
        v: PROTOCOL_VERSION,
        request_id,
        detections: None,
        error: Some(message.to_string()),
    };
    serde_json::to_string(&msg).expect("response serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_detection_list() {
        let set = decode_response(r#"{"v":1,"request_id":4,"detections":[]}"#, 4).unwrap();
        assert!(set.is_empty());
    }

    #[test]
    fn single_car() {
        let msg = r#"{"v":1,"request_id":9,"detections":[{"box":[10,20,30,40],"class_id":3,"score":0.8}]}"#;
        let set = decode_response(msg, 9).unwrap();
        assert_eq!(set.items, [Detection::new(10.0, 20.0, 30.0, 40.0, 3, 0.8).unwrap()]);
    }

    #[test]
    fn rejects_bad_score_and_boxes() {
        let msg = r#"{"v":1,"request_id":1,"detections":[{"box":[0,0,1,1],"class_id":3,"score":1.5}]}"#;
        assert!(matches!(
            decode_response(msg, 1),
            Err(WireError::Detection {
                index: 0,
                source: InvalidDetection::Score(_)
            })
        ));
        let msg = r#"{"v":1,"request_id":1,"detections":[{"box":[5,0,1,1],"class_id":3,"score":0.5}]}"#;
        assert!(matches!(
            decode_response(msg, 1),
            Err(WireError::Detection {
                source: InvalidDetection::Inverted { .. },
                ..
            })
        ));
    }

    #[test]
    fn rejects_protocol_violations() {
        assert!(matches!(
            decode_response(r#"{"v":1,"request_id":2,"detections":[]}"#, 3),
            Err(WireError::RequestId { expected: 3, got: 2 })
        ));
        assert!(matches!(
            decode_response(r#"{"v":2,"request_id":3,"detections":[]}"#, 3),
            Err(WireError::Version(2))
        ));
        assert!(matches!(decode_response("not json", 3), Err(WireError::Malformed(_))));
        assert!(matches!(
            decode_response(r#"{"v":1,"request_id":3}"#, 3),
            Err(WireError::Malformed(_))
        ));
        assert!(matches!(
            decode_response(r#"{"v":1,"request_id":3,"error":"boom"}"#, 3),
            Err(WireError::Remote { request_id: 3, .. })
        ));
    }

    #[test]
    fn one_pixel_request_round_trips() {
        let img = ImageBuffer::filled(1, 1, [12, 34, 56]);
        let cfg = DetectorConfig::default();
        let line = encode_request(&img, &cfg).unwrap();
        assert!(!line.contains('\n'));
        let req = decode_request(&line).unwrap();
        assert_eq!(req.image, img);
        assert_eq!(req.config, cfg);
    }

    #[test]
    fn request_ids_increase() {
        let img = ImageBuffer::filled(1, 1, [0, 0, 0]);
        let cfg = DetectorConfig::default();
        let ids: Vec<u64> = (0..5)
            .map(|_| decode_request(&encode_request(&img, &cfg).unwrap()).unwrap().request_id)
            .collect();
        assert!(ids.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn bad_request_keeps_id_for_the_error_reply() {
        let (id, err) = decode_request(r#"{"v":1,"request_id":77,"image":"!!"}"#).unwrap_err();
        assert_eq!(id, Some(77));
        assert!(matches!(err, WireError::Malformed(_)));
        let (id, _) = decode_request("garbage").unwrap_err();
        assert_eq!(id, None);
    }

    #[test]
    fn response_encoding_decodes() {
        let dets = vec![
            Detection::new(1.5, 2.0, 3.0, 4.25, 8, 0.75).unwrap(),
            Detection::new(0.0, 0.0, 0.0, 0.0, 1, 0.0).unwrap(),
        ];
        let set = decode_response(&encode_response(11, &dets), 11).unwrap();
        assert_eq!(set.items, dets);
        assert!(matches!(
            decode_response(&encode_error_response(11, "oversized"), 11),
            Err(WireError::Remote { .. })
        ));
    }
}
