//! Owned 8-bit RGB rasters, PNG I/O and the few raster operations the
//! pipeline needs (cropping and annotation).

use std::fs::File;
use std::io::{BufReader, BufWriter, Cursor};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::detector::Detection;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot decode PNG {name}: {reason}")]
    Decode { name: String, reason: String },
    #[error("cannot encode PNG: {0}")]
    Encode(String),
    #[error("invalid image dimensions {width}x{height}")]
    Dimensions { width: usize, height: usize },
    #[error("pixel buffer has {got} bytes, expected {expected}")]
    BufferLength { got: usize, expected: usize },
    #[error("crop rectangle ({left},{top}) {w}x{h} exceeds {width}x{height} image")]
    CropOutOfBounds {
        left: usize,
        top: usize,
        w: usize,
        h: usize,
        width: usize,
        height: usize,
    },
}

pub type Rgb = [u8; 3];

/// Row-major RGB raster. Immutable operations return new buffers.
#[derive(Clone, PartialEq, Eq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl std::fmt::Debug for ImageBuffer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ImageBuffer")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::Dimensions { width, height });
        }
        let expected = width * height * 3;
        if pixels.len() != expected {
            return Err(ImageError::BufferLength {
                got: pixels.len(),
                expected,
            });
        }
        Ok(Self { width, height, pixels })
    }

    /// Solid-color image.
    ///
    /// # Panics
    /// If either dimension is zero.
    pub fn filled(width: usize, height: usize, color: Rgb) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        let pixels = color.iter().copied().cycle().take(width * height * 3).collect();
        Self { width, height, pixels }
    }

    /// Builds an image by evaluating `f(x, y)` for every pixel.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> Rgb) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        let mut pixels = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                pixels.extend_from_slice(&f(x, y));
            }
        }
        Self { width, height, pixels }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Rgb {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    #[inline]
    pub fn put(&mut self, x: usize, y: usize, color: Rgb) {
        let i = (y * self.width + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&color);
    }

    pub fn row(&self, y: usize) -> &[u8] {
        let stride = self.width * 3;
        &self.pixels[y * stride..(y + 1) * stride]
    }

    /// Extracts the `w`×`h` rectangle whose top-left pixel is `(left, top)`.
    pub fn crop(&self, left: usize, top: usize, w: usize, h: usize) -> Result<Self, ImageError> {
        let fits = w > 0
            && h > 0
            && left.checked_add(w).is_some_and(|r| r <= self.width)
            && top.checked_add(h).is_some_and(|b| b <= self.height);
        if !fits {
            return Err(ImageError::CropOutOfBounds {
                left,
                top,
                w,
                h,
                width: self.width,
                height: self.height,
            });
        }
        let mut pixels = Vec::with_capacity(w * h * 3);
        for y in top..top + h {
            let row = self.row(y);
            pixels.extend_from_slice(&row[left * 3..(left + w) * 3]);
        }
        Ok(Self {
            width: w,
            height: h,
            pixels,
        })
    }

    /// Horizontal mirror image.
    pub fn mirror_horizontal(&self) -> Self {
        Self::from_fn(self.width, self.height, |x, y| self.get(self.width - 1 - x, y))
    }

    /// Returns a copy with a 1-px outline around `det` and, when `label` is
    /// non-empty, a filled label strip with the text just above the box
    /// (or inside its top edge when there is no room above).
    pub fn draw_box(&self, det: &Detection, color: Rgb, label: &str) -> Self {
        let mut out = self.clone();
        let Some((x0, y0, x1, y1)) = pixel_extent(det, self.width, self.height) else {
            return out;
        };
        for x in x0..=x1 {
            out.put(x, y0, color);
            out.put(x, y1, color);
        }
        for y in y0..=y1 {
            out.put(x0, y, color);
            out.put(x1, y, color);
        }
        if !label.is_empty() {
            out.draw_label(x0, y0, color, label);
        }
        out
    }

    fn draw_label(&mut self, x0: usize, y0: usize, color: Rgb, label: &str) {
        const STRIP_H: usize = font::GLYPH_H + 2;
        let text_w = label.chars().count() * (font::GLYPH_W + 1) + 1;
        let top = if y0 >= STRIP_H { y0 - STRIP_H } else { y0 };
        let right = (x0 + text_w).min(self.width);
        let bottom = (top + STRIP_H).min(self.height);
        for y in top..bottom {
            for x in x0..right {
                self.put(x, y, color);
            }
        }
        // Dark or light text depending on the strip's luminance.
        let luma = 299 * color[0] as u32 + 587 * color[1] as u32 + 114 * color[2] as u32;
        let ink = if luma > 128_000 { [0, 0, 0] } else { [255, 255, 255] };
        for (i, ch) in label.chars().enumerate() {
            let gx = x0 + 1 + i * (font::GLYPH_W + 1);
            let bits = font::glyph(ch);
            for row in 0..font::GLYPH_H {
                for col in 0..font::GLYPH_W {
                    let on = bits >> (14 - (row * font::GLYPH_W + col)) & 1 == 1;
                    let (px, py) = (gx + col, top + 1 + row);
                    if on && px < right && py < bottom {
                        self.put(px, py, ink);
                    }
                }
            }
        }
    }
}

/// Inclusive pixel extent covered by a detection box, clipped to the image.
fn pixel_extent(det: &Detection, width: usize, height: usize) -> Option<(usize, usize, usize, usize)> {
    let clamp = |v: f64, hi: usize| v.max(0.0).min(hi as f64 - 1.0) as usize;
    if !(det.a.is_finite() && det.b.is_finite() && det.c.is_finite() && det.d.is_finite()) {
        return None;
    }
    if det.c <= 0.0 || det.d <= 0.0 || det.a >= width as f64 || det.b >= height as f64 {
        return None;
    }
    let x0 = clamp(det.a.floor(), width);
    let y0 = clamp(det.b.floor(), height);
    let x1 = clamp((det.c.ceil() - 1.0).max(det.a.floor()), width);
    let y1 = clamp((det.d.ceil() - 1.0).max(det.b.floor()), height);
    Some((x0, y0, x1, y1))
}

pub fn load_png(path: impl AsRef<Path>) -> Result<ImageBuffer, ImageError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| ImageError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode(BufReader::new(file), &path.display().to_string())
}

pub fn save_png(img: &ImageBuffer, path: impl AsRef<Path>) -> Result<(), ImageError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|source| ImageError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut w = BufWriter::new(file);
    encode(img, &mut w)?;
    use std::io::Write;
    w.flush().map_err(|source| ImageError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn decode_png_bytes(bytes: &[u8]) -> Result<ImageBuffer, ImageError> {
    decode(Cursor::new(bytes), "<memory>")
}

pub fn encode_png_bytes(img: &ImageBuffer) -> Result<Vec<u8>, ImageError> {
    let mut out = Vec::new();
    encode(img, &mut out)?;
    Ok(out)
}

fn encode<W: std::io::Write>(img: &ImageBuffer, w: W) -> Result<(), ImageError> {
    let mut encoder = png::Encoder::new(w, img.width as u32, img.height as u32);
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    // Fixed settings keep the byte stream reproducible (wire golden files).
    encoder.set_compression(png::Compression::Balanced);
    encoder.set_filter(png::Filter::Sub);
    let mut writer = encoder.write_header().map_err(|e| ImageError::Encode(e.to_string()))?;
    writer
        .write_image_data(&img.pixels)
        .map_err(|e| ImageError::Encode(e.to_string()))?;
    writer.finish().map_err(|e| ImageError::Encode(e.to_string()))
}

fn decode<R: std::io::BufRead + std::io::Seek>(r: R, name: &str) -> Result<ImageBuffer, ImageError> {
    let err = |reason: String| ImageError::Decode {
        name: name.to_string(),
        reason,
    };
    let mut decoder = png::Decoder::new(r);
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(|e| err(e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| err("image too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| err(e.to_string()))?;
    let (width, height) = (info.width as usize, info.height as usize);
    if info.bit_depth != png::BitDepth::Eight {
        return Err(err(format!("unsupported bit depth {:?}", info.bit_depth)));
    }
    let data = &buf[..info.buffer_size()];
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => return Err(err("palette was not expanded".into())),
    };
    let mut pixels = Vec::with_capacity(width * height * 3);
    for y in 0..height {
        let row = &data[y * info.line_size..y * info.line_size + width * channels];
        for px in row.chunks_exact(channels) {
            match channels {
                1 => pixels.extend_from_slice(&[px[0]; 3]),
                2 => pixels.extend_from_slice(&[flatten(px[0], px[1]); 3]),
                3 => pixels.extend_from_slice(px),
                _ => pixels.extend(px[..3].iter().map(|&c| flatten(c, px[3]))),
            }
        }
    }
    ImageBuffer::new(width, height, pixels).map_err(|e| err(e.to_string()))
}

/// Composites a channel with straight alpha over a black background.
fn flatten(c: u8, alpha: u8) -> u8 {
    ((c as u32 * alpha as u32 + 127) / 255) as u8
}

mod font {
    //! 3x5 bitmap glyphs, row-major, MSB first in the low 15 bits.

    pub const GLYPH_W: usize = 3;
    pub const GLYPH_H: usize = 5;

    pub fn glyph(c: char) -> u16 {
        match c.to_ascii_lowercase() {
            '0' => 0b111_101_101_101_111,
            '1' => 0b010_110_010_010_111,
            '2' => 0b111_001_111_100_111,
            '3' => 0b111_001_111_001_111,
            '4' => 0b101_101_111_001_001,
            '5' => 0b111_100_111_001_111,
            '6' => 0b111_100_111_101_111,
            '7' => 0b111_001_010_010_010,
            '8' => 0b111_101_111_101_111,
            '9' => 0b111_101_111_001_111,
            'a' => 0b010_101_111_101_101,
            'b' => 0b110_101_110_101_110,
            'c' => 0b011_100_100_100_011,
            'd' => 0b110_101_101_101_110,
            'e' => 0b111_100_110_100_111,
            'f' => 0b111_100_110_100_100,
            'g' => 0b011_100_101_101_011,
            'h' => 0b101_101_111_101_101,
            'i' => 0b111_010_010_010_111,
            'j' => 0b001_001_001_101_010,
            'k' => 0b101_101_110_101_101,
            'l' => 0b100_100_100_100_111,
            'm' => 0b101_111_111_101_101,
            'n' => 0b110_101_101_101_101,
            'o' => 0b010_101_101_101_010,
            'p' => 0b110_101_110_100_100,
            'q' => 0b010_101_101_110_011,
            'r' => 0b110_101_110_101_101,
            's' => 0b011_100_010_001_110,
            't' => 0b111_010_010_010_010,
            'u' => 0b101_101_101_101_111,
            'v' => 0b101_101_101_101_010,
            'w' => 0b101_101_111_111_101,
            'x' => 0b101_101_010_101_101,
            'y' => 0b101_101_010_010_010,
            'z' => 0b111_001_010_100_111,
            '.' => 0b000_000_000_000_010,
            ':' => 0b000_010_000_010_000,
            '-' => 0b000_000_111_000_000,
            '%' => 0b101_001_010_100_101,
            _ => 0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient(w: usize, h: usize) -> ImageBuffer {
        ImageBuffer::from_fn(w, h, |x, y| [x as u8, y as u8, (x * 7 + y * 13) as u8])
    }

    fn det(a: f64, b: f64, c: f64, d: f64) -> Detection {
        Detection::new(a, b, c, d, 3, 0.9).unwrap()
    }

    #[test]
    fn rejects_bad_buffers() {
        assert!(matches!(
            ImageBuffer::new(0, 3, vec![]),
            Err(ImageError::Dimensions { .. })
        ));
        assert!(matches!(
            ImageBuffer::new(2, 2, vec![0; 11]),
            Err(ImageError::BufferLength { got: 11, expected: 12 })
        ));
    }

    #[test]
    fn identity_crop() {
        let img = gradient(9, 7);
        assert_eq!(img.crop(0, 0, 9, 7).unwrap(), img);
    }

    #[test]
    fn single_pixel_crop() {
        let img = gradient(9, 7);
        let px = img.crop(2, 3, 1, 1).unwrap();
        assert_eq!((px.width(), px.height()), (1, 1));
        assert_eq!(px.get(0, 0), [2, 3, (2 * 7 + 3 * 13) as u8]);
    }

    #[test]
    fn crop_out_of_bounds() {
        let img = gradient(9, 7);
        assert!(img.crop(5, 0, 5, 1).is_err());
        assert!(img.crop(0, 7, 1, 1).is_err());
        assert!(img.crop(0, 0, 0, 1).is_err());
        assert!(img.crop(usize::MAX, 0, 2, 1).is_err());
    }

    #[test]
    fn full_image_box_touches_border_only() {
        let img = ImageBuffer::filled(10, 8, [0, 0, 0]);
        let out = img.draw_box(&det(0.0, 0.0, 10.0, 8.0), [255, 0, 0], "");
        for y in 0..8 {
            for x in 0..10 {
                let border = x == 0 || y == 0 || x == 9 || y == 7;
                assert_eq!(out.get(x, y) == [255, 0, 0], border, "({x},{y})");
            }
        }
    }

    #[test]
    fn interior_box_outline_count() {
        let img = ImageBuffer::filled(40, 30, [10, 10, 10]);
        // Pixels 5..=16 horizontally (w = 12), 7..=15 vertically (h = 9).
        let out = img.draw_box(&det(5.0, 7.0, 17.0, 16.0), [0, 255, 0], "");
        let changed = (0..30)
            .flat_map(|y| (0..40).map(move |x| (x, y)))
            .filter(|&(x, y)| out.get(x, y) != img.get(x, y))
            .count();
        assert_eq!(changed, 2 * (12 + 9) - 4);
    }

    #[test]
    fn labelled_box_leaves_input_untouched() {
        let img = gradient(64, 48);
        let before = img.clone();
        let out = img.draw_box(&det(10.0, 20.0, 30.0, 40.0), [255, 255, 0], "car 0.91");
        assert_eq!(img, before);
        // Label strip sits directly above the box.
        assert_eq!(out.get(11, 13), [255, 255, 0]);
        assert_ne!(out, img);
    }

    #[test]
    fn box_outside_image_is_ignored() {
        let img = gradient(16, 16);
        assert_eq!(img.draw_box(&det(20.0, 20.0, 30.0, 30.0), [1, 2, 3], "x"), img);
    }

    #[test]
    fn alpha_flattening() {
        assert_eq!(flatten(255, 255), 255);
        assert_eq!(flatten(200, 0), 0);
        assert_eq!(flatten(255, 128), 128);
    }
}
