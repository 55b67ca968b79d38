//! Brute-force non-local means straight from the definition, in f64.

use srdet::imagebuf::ImageBuffer;

/// Symmetric mirroring of an arbitrary coordinate into `0..n`.
fn mirror(i: isize, n: usize) -> usize {
    let n = n as isize;
    let m = i.rem_euclid(2 * n);
    (if m < n { m } else { 2 * n - 1 - m }) as usize
}

fn at(img: &ImageBuffer, x: isize, y: isize, ch: usize) -> f64 {
    img.get(mirror(x, img.width()), mirror(y, img.height()))[ch] as f64
}

pub fn nlm(img: &ImageBuffer, h: f64, patch_radius: usize, search_radius: usize, sigma: f64) -> ImageBuffer {
    let (pr, sr) = (patch_radius as isize, search_radius as isize);
    let samples = ((2 * pr + 1) * (2 * pr + 1) * 3) as f64;
    ImageBuffer::from_fn(img.width(), img.height(), |x, y| {
        let (x, y) = (x as isize, y as isize);
        let mut num = [0.0f64; 3];
        let mut den = 0.0f64;
        for sy in -sr..=sr {
            for sx in -sr..=sr {
                let (qx, qy) = (x + sx, y + sy);
                let mut ssd = 0.0;
                for oy in -pr..=pr {
                    for ox in -pr..=pr {
                        for ch in 0..3 {
                            let d = at(img, x + ox, y + oy, ch) - at(img, qx + ox, qy + oy, ch);
                            ssd += d * d;
                        }
                    }
                }
                let d2 = ssd / samples;
                let w = (-(d2 - 2.0 * sigma * sigma).max(0.0) / (h * h)).exp();
                den += w;
                for (ch, n) in num.iter_mut().enumerate() {
                    *n += w * at(img, qx, qy, ch);
                }
            }
        }
        num.map(|n| (n / den).round().clamp(0.0, 255.0) as u8)
    })
}
