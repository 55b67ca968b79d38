//! Integer-factor upscaling: pixel replication, Catmull-Rom bicubic, or an
//! external super-resolution model reached over the line protocol.
//!
//! SR protocol v1 mirrors the detector protocol:
//!
//! ```text
//! -> {"v":1,"request_id":3,"zoom":2,"image":"<base64 PNG>"}
//! <- {"v":1,"request_id":3,"image":"<base64 PNG>"}
//! <- {"v":1,"request_id":3,"error":"..."}
//! ```

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detector::{
    check_version, image_from_base64, image_to_base64, next_request_id, WireError, PROTOCOL_VERSION,
};
use crate::imagebuf::{ImageBuffer, ImageError};
use crate::transport::{BackendUri, ConnectionPool, TransportError};

#[derive(Debug, Error)]
pub enum UpscaleError {
    #[error("zoom factor must be >= 2, got {0}")]
    Zoom(u32),
    #[error("external upscaler requires a backend uri")]
    MissingBackend,
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("upscaler protocol error: {0}")]
    Protocol(#[from] WireError),
    #[error(transparent)]
    Image(#[from] ImageError),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum UpscaleMethod {
    Nearest,
    #[default]
    Bicubic,
    External {
        backend_uri: String,
    },
}

/// Upscaler bound to its method; holds the connection pool for external
/// backends so consecutive frames reuse connections.
pub struct Upscaler {
    method: UpscaleMethod,
    pool: Option<ConnectionPool>,
}

impl Upscaler {
    pub fn new(method: UpscaleMethod, timeout: Option<Duration>) -> Result<Self, UpscaleError> {
        let pool = match &method {
            UpscaleMethod::External { backend_uri } if backend_uri.trim().is_empty() => {
                return Err(UpscaleError::MissingBackend)
            }
            UpscaleMethod::External { backend_uri } => {
                Some(ConnectionPool::new(backend_uri.parse::<BackendUri>()?, timeout))
            }
            _ => None,
        };
        Ok(Self { method, pool })
    }

    pub fn method(&self) -> &UpscaleMethod {
        &self.method
    }

    pub fn upscale(&self, img: &ImageBuffer, zoom: u32) -> Result<ImageBuffer, UpscaleError> {
        if zoom < 2 {
            return Err(UpscaleError::Zoom(zoom));
        }
        match (&self.method, &self.pool) {
            (UpscaleMethod::Nearest, _) => Ok(nearest(img, zoom as usize)),
            (UpscaleMethod::Bicubic, _) => Ok(bicubic(img, zoom as usize)),
            (UpscaleMethod::External { .. }, Some(pool)) => {
                let id = next_request_id();
                let reply = pool.round_trip(&encode_sr_request(img, zoom, id)?)?;
                Ok(decode_sr_response(&reply, id, img, zoom)?)
            }
            (UpscaleMethod::External { .. }, None) => Err(UpscaleError::MissingBackend),
        }
    }
}

/// One-shot upscale. For repeated external calls keep an [`Upscaler`].
pub fn upscale(img: &ImageBuffer, zoom: u32, method: &UpscaleMethod) -> Result<ImageBuffer, UpscaleError> {
    Upscaler::new(method.clone(), None)?.upscale(img, zoom)
}

fn nearest(img: &ImageBuffer, z: usize) -> ImageBuffer {
    ImageBuffer::from_fn(img.width() * z, img.height() * z, |x, y| img.get(x / z, y / z))
}

/// Catmull-Rom kernel (a = -0.5).
fn catmull_rom(t: f64) -> f64 {
    let t = t.abs();
    if t < 1.0 {
        (1.5 * t - 2.5) * t * t + 1.0
    } else if t < 2.0 {
        ((-0.5 * t + 2.5) * t - 4.0) * t + 2.0
    } else {
        0.0
    }
}

/// For every output coordinate: the four clamped source taps and weights.
/// Output pixel centers map to `(x + 0.5) / z - 0.5` in source pixels.
fn taps(src_len: usize, z: usize) -> Vec<([usize; 4], [f64; 4])> {
    (0..src_len * z)
        .map(|o| {
            let s = (o as f64 + 0.5) / z as f64 - 0.5;
            let base = s.floor();
            let t = s - base;
            let mut idx = [0; 4];
            let mut w = [0.0; 4];
            for k in 0..4 {
                let i = base as isize + k as isize - 1;
                idx[k] = i.clamp(0, src_len as isize - 1) as usize;
                w[k] = catmull_rom(t - (k as f64 - 1.0));
            }
            (idx, w)
        })
        .collect()
}

fn bicubic(img: &ImageBuffer, z: usize) -> ImageBuffer {
    let (w, h) = (img.width(), img.height());
    let (ow, oh) = (w * z, h * z);
    let xt = taps(w, z);
    let yt = taps(h, z);
    let src = img.pixels();

    // Horizontal pass at full precision.
    let mut mid = vec![0.0f64; ow * h * 3];
    for y in 0..h {
        let row = &src[y * w * 3..(y + 1) * w * 3];
        for (ox, (idx, wt)) in xt.iter().enumerate() {
            for c in 0..3 {
                mid[(y * ow + ox) * 3 + c] = (0..4).map(|k| wt[k] * row[idx[k] * 3 + c] as f64).sum();
            }
        }
    }

    let mut out = Vec::with_capacity(ow * oh * 3);
    for (idx, wt) in &yt {
        for i in 0..ow * 3 {
            let v: f64 = (0..4).map(|k| wt[k] * mid[idx[k] * ow * 3 + i]).sum();
            out.push(v.round().clamp(0.0, 255.0) as u8);
        }
    }
    ImageBuffer::new(ow, oh, out).expect("dimensions match")
}

#[derive(Serialize, Deserialize)]
struct SrRequestMsg {
    v: u32,
    request_id: u64,
    zoom: u32,
    image: String,
}

#[derive(Serialize, Deserialize)]
struct SrResponseMsg {
    v: u32,
    request_id: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    image: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

pub fn encode_sr_request(img: &ImageBuffer, zoom: u32, request_id: u64) -> Result<String, ImageError> {
    let msg = SrRequestMsg {
        v: PROTOCOL_VERSION,
        request_id,
        zoom,
        image: image_to_base64(img)?,
    };
    Ok(serde_json::to_string(&msg).expect("request serializes"))
}

/// Parses an SR response and enforces the `zoom`× dimension contract
/// against the request image `input`.
pub fn decode_sr_response(
    msg: &str,
    expected_id: u64,
    input: &ImageBuffer,
    zoom: u32,
) -> Result<ImageBuffer, WireError> {
    let resp: SrResponseMsg = serde_json::from_str(msg).map_err(|e| WireError::Malformed(e.to_string()))?;
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
    let data = resp
        .image
        .ok_or_else(|| WireError::Malformed("missing `image`".into()))?;
    let out = image_from_base64(&data)?;
    let z = zoom as usize;
    if out.width() != input.width() * z || out.height() != input.height() * z {
        return Err(WireError::Violation(format!(
            "upscaled image is {}x{}, expected {}x{}",
            out.width(),
            out.height(),
            input.width() * z,
            input.height() * z
        )));
    }
    Ok(out)
}

/// Decoded SR request, as seen by a server.
#[derive(Debug, Clone, PartialEq)]
pub struct SrRequest {
    pub request_id: u64,
    pub zoom: u32,
    pub image: ImageBuffer,
}

pub fn decode_sr_request(line: &str) -> Result<SrRequest, (Option<u64>, WireError)> {
    let value: serde_json::Value =
        serde_json::from_str(line).map_err(|e| (None, WireError::Malformed(e.to_string())))?;
    let id = value.get("request_id").and_then(serde_json::Value::as_u64);
    let msg: SrRequestMsg = serde_json::from_value(value).map_err(|e| (id, WireError::Malformed(e.to_string())))?;
    check_version(msg.v).map_err(|e| (id, e))?;
    let image = image_from_base64(&msg.image).map_err(|e| (id, e))?;
    Ok(SrRequest {
        request_id: msg.request_id,
        zoom: msg.zoom,
        image,
    })
}

pub fn encode_sr_response(request_id: u64, img: &ImageBuffer) -> Result<String, ImageError> {
    let msg = SrResponseMsg {
        v: PROTOCOL_VERSION,
        request_id,
        image: Some(image_to_base64(img)?),
        error: None,
    };
    Ok(serde_json::to_string(&msg).expect("response serializes"))
}

pub fn encode_sr_error_response(request_id: u64, message: &str) -> String {
    let msg = SrResponseMsg {
        v: PROTOCOL_VERSION,
        request_id,
        image: None,
        error: Some(message.to_string()),
    };
    serde_json::to_string(&msg).expect("response serializes")
}
