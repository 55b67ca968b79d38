//! Coordinate conventions and the window transforms of the re-detection pass.
//!
//! Two conventions meet here. File formats, detectors and the wire protocol
//! use top-left-origin pixel coordinates; the detection-center and zoom
//! relations are stated with the origin at the image center. Everything that
//! converts between the two lives in this module.
//!
//! A window is an `lr_w`×`lr_h` crop of the super-resolved frame, centered on
//! a first-pass detection. When the ideal window would leave the
//! super-resolved frame it is shifted (never shrunk), so the back-mapping
//! from window pixels to frame pixels is the affine `offset + p / zoom`
//! rather than the purely center-based form.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detector::Detection;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("zoom factor must be an integer >= 2, got {0}")]
    Zoom(u32),
    #[error("window {lr_w}x{lr_h} does not fit in {hr_w}x{hr_h} super-resolved frame")]
    WindowTooLarge {
        lr_w: usize,
        lr_h: usize,
        hr_w: usize,
        hr_h: usize,
    },
    #[error("super-resolved frame {hr_w}x{hr_h} is not {zoom}x the {lr_w}x{lr_h} frame")]
    ZoomMismatch {
        lr_w: usize,
        lr_h: usize,
        hr_w: usize,
        hr_h: usize,
        zoom: u32,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

/// Maps pixel coordinates of an image (a window) into frame coordinates:
/// `frame = offset + local / scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoordinateFrame {
    /// Window top-left in frame (top-left origin) coordinates.
    pub offset: Point,
    pub scale: f64,
}

impl CoordinateFrame {
    /// The frame seen by the first detection pass: the image is the frame.
    pub const IDENTITY: Self = Self {
        offset: Point::new(0.0, 0.0),
        scale: 1.0,
    };

    pub fn to_frame(&self, p: Point) -> Point {
        window_to_frame(p, self)
    }

    /// Inverse of [`CoordinateFrame::to_frame`].
    pub fn to_local(&self, p: Point) -> Point {
        Point::new((p.x - self.offset.x) * self.scale, (p.y - self.offset.y) * self.scale)
    }

    /// Back-translates both corners of a window-local detection.
    pub fn detection_to_frame(&self, det: &Detection) -> Detection {
        let tl = self.to_frame(Point::new(det.a, det.b));
        let br = self.to_frame(Point::new(det.c, det.d));
        Detection {
            a: tl.x,
            b: tl.y,
            c: br.x,
            d: br.y,
            ..*det
        }
    }
}

/// Integer rectangle in pixels, top-left origin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub left: usize,
    pub top: usize,
    pub w: usize,
    pub h: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowPlacement {
    /// Crop rectangle inside the super-resolved frame.
    pub hr_rect: Rect,
    pub frame: CoordinateFrame,
    /// Where the requested center landed, in window pixel coordinates.
    /// Equals the rectangle center up to integer rounding when unclamped.
    pub anchor: Point,
}

pub fn detection_center(det: &Detection) -> Point {
    Point::new((det.a + det.c) / 2.0, (det.b + det.d) / 2.0)
}

/// Scales a center-origin point from the low-resolution frame to the
/// super-resolved one.
pub fn lr_to_hr(p: Point, zoom: f64) -> Point {
    Point::new(zoom * p.x, zoom * p.y)
}

pub fn center_to_topleft(p: Point, w: f64, h: f64) -> Point {
    Point::new(p.x + w / 2.0, p.y + h / 2.0)
}

pub fn topleft_to_center(p: Point, w: f64, h: f64) -> Point {
    Point::new(p.x - w / 2.0, p.y - h / 2.0)
}

/// Places an `lr_w`×`lr_h` window inside the `hr_w`×`hr_h` super-resolved
/// frame, centered as closely as integer pixels allow on `center_hr`
/// (top-left-origin HR coordinates) and shifted inward at the borders.
pub fn place_window(
    center_hr: Point,
    lr_w: usize,
    lr_h: usize,
    hr_w: usize,
    hr_h: usize,
    zoom: u32,
) -> Result<WindowPlacement, GeometryError> {
    if zoom < 2 {
        return Err(GeometryError::Zoom(zoom));
    }
    if lr_w > hr_w || lr_h > hr_h {
        return Err(GeometryError::WindowTooLarge { lr_w, lr_h, hr_w, hr_h });
    }
    if hr_w != lr_w * zoom as usize || hr_h != lr_h * zoom as usize {
        return Err(GeometryError::ZoomMismatch {
            lr_w,
            lr_h,
            hr_w,
            hr_h,
            zoom,
        });
    }
    let axis = |c: f64, win: usize, full: usize| -> usize {
        let ideal = (c - win as f64 / 2.0).round();
        let max = (full - win) as f64;
        // NaN (non-finite centers) falls through to 0 via the cast.
        ideal.clamp(0.0, max) as usize
    };
    let left = axis(center_hr.x, lr_w, hr_w);
    let top = axis(center_hr.y, lr_h, hr_h);
    let z = zoom as f64;
    Ok(WindowPlacement {
        hr_rect: Rect {
            left,
            top,
            w: lr_w,
            h: lr_h,
        },
        frame: CoordinateFrame {
            offset: Point::new(left as f64 / z, top as f64 / z),
            scale: z,
        },
        anchor: Point::new(center_hr.x - left as f64, center_hr.y - top as f64),
    })
}

/// Window for a first-pass detection: its center is taken to the
/// center-origin convention, zoomed, taken back to top-left HR coordinates
/// and the window is placed there.
pub fn window_for_detection(
    det: &Detection,
    lr_w: usize,
    lr_h: usize,
    zoom: u32,
) -> Result<WindowPlacement, GeometryError> {
    let (w, h, z) = (lr_w as f64, lr_h as f64, zoom as f64);
    let centered = topleft_to_center(detection_center(det), w, h);
    let hr = center_to_topleft(lr_to_hr(centered, z), z * w, z * h);
    place_window(hr, lr_w, lr_h, lr_w * zoom as usize, lr_h * zoom as usize, zoom)
}

pub fn window_to_frame(p_window: Point, frame: &CoordinateFrame) -> Point {
    Point::new(
        frame.offset.x + p_window.x / frame.scale,
        frame.offset.y + p_window.y / frame.scale,
    )
}
