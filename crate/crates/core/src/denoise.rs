//! Non-local means denoising for RGB images.
//!
//! Each output pixel is the weighted mean of the pixels in a square search
//! window around it. A candidate's weight is
//! `exp(-max(d² - 2σ², 0) / h²)`, where `d²` is the mean squared difference
//! between the patch around the pixel and the patch around the candidate,
//! taken over all three channels. Borders are handled by symmetric
//! reflection.
//!
//! Patch distances are computed per search offset with sliding box sums
//! over integer squared differences, so they are exact. Weights are then
//! quantized to 32 fractional bits and accumulated in integers: the result
//! does not depend on summation order, which makes the row-parallel path
//! bit-identical to the sequential one and keeps the filter exactly
//! equivariant under mirroring.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::imagebuf::ImageBuffer;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NlmParams {
    /// Filtering strength in channel units.
    pub h: f64,
    pub patch_radius: usize,
    pub search_radius: usize,
    /// Expected noise standard deviation; distances below `2σ²` count as 0.
    pub sigma: f64,
}

impl Default for NlmParams {
    fn default() -> Self {
        Self {
            h: 10.0,
            patch_radius: 3,
            search_radius: 10,
            sigma: 0.0,
        }
    }
}

impl NlmParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(format!("nlm strength h must be > 0, got {}", self.h));
        }
        if self.patch_radius < 1 {
            return Err("nlm patch radius must be >= 1".into());
        }
        if self.search_radius < self.patch_radius {
            return Err(format!(
                "nlm search radius {} smaller than patch radius {}",
                self.search_radius, self.patch_radius
            ));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(format!("nlm sigma must be >= 0, got {}", self.sigma));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Bands of rows on the current rayon pool.
    Parallel,
}

const BAND_ROWS: usize = 16;
const WEIGHT_ONE: f64 = 4_294_967_296.0; // 2^32
/// Weights for larger exponents round to zero at 32 fractional bits.
const MAX_EXPONENT: f64 = 23.0;
const MAX_LUT_LEN: usize = 1 << 21;

/// Symmetric reflection: -1 -> 0, n -> n - 1, for any n >= 1.
pub fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

/// Quantized weight for an integer sum of squared differences over a patch.
struct WeightTable {
    samples: f64,
    floor: f64,
    inv_h2: f64,
    lut: Vec<u64>,
}

impl WeightTable {
    fn new(p: &NlmParams) -> Self {
        let side = 2 * p.patch_radius + 1;
        let samples = (3 * side * side) as f64;
        let floor = 2.0 * p.sigma * p.sigma;
        let inv_h2 = 1.0 / (p.h * p.h);
        let mut table = Self {
            samples,
            floor,
            inv_h2,
            lut: Vec::new(),
        };
        // Largest ssd with a nonzero weight.
        let max_ssd = ((floor + MAX_EXPONENT * p.h * p.h) * samples).ceil();
        if max_ssd < MAX_LUT_LEN as f64 {
            table.lut = (0..=max_ssd as u64).map(|s| table.compute(s)).collect();
        }
        table
    }

    fn compute(&self, ssd: u64) -> u64 {
        let d2 = ssd as f64 / self.samples;
        let arg = (d2 - self.floor).max(0.0) * self.inv_h2;
        if arg > MAX_EXPONENT {
            0
        } else {
            ((-arg).exp() * WEIGHT_ONE).round() as u64
        }
    }

    #[inline]
    fn weight(&self, ssd: u64) -> u64 {
        match self.lut.get(ssd as usize) {
            Some(&w) => w,
            None if self.lut.is_empty() => self.compute(ssd),
            None => 0,
        }
    }
}

/// Reflect-padded copy of the image as i32 channels.
struct Padded {
    data: Vec<i32>,
    stride: usize,
    pad: usize,
}

impl Padded {
    fn new(img: &ImageBuffer, pad: usize) -> Self {
        let (w, h) = (img.width(), img.height());
        let pw = w + 2 * pad;
        let ph = h + 2 * pad;
        let mut data = Vec::with_capacity(pw * ph * 3);
        for py in 0..ph {
            let sy = reflect(py as isize - pad as isize, h);
            let row = img.row(sy);
            for px in 0..pw {
                let sx = reflect(px as isize - pad as isize, w);
                data.extend(row[sx * 3..sx * 3 + 3].iter().map(|&v| v as i32));
            }
        }
        Self {
            data,
            stride: pw * 3,
            pad,
        }
    }

    /// Offset of frame pixel (x, y) in `data`; coordinates may be negative
    /// down to `-pad`.
    #[inline]
    fn index(&self, x: isize, y: isize) -> usize {
        (y + self.pad as isize) as usize * self.stride + (x + self.pad as isize) as usize * 3
    }
}

pub fn nlm_denoise(img: &ImageBuffer, p: &NlmParams) -> ImageBuffer {
    nlm_denoise_with(img, p, Execution::Parallel)
}

/// # Panics
/// If `p` does not pass [`NlmParams::validate`].
pub fn nlm_denoise_with(img: &ImageBuffer, p: &NlmParams, exec: Execution) -> ImageBuffer {
    if let Err(e) = p.validate() {
        panic!("invalid NLM parameters: {e}");
    }
    let (w, h) = (img.width(), img.height());
    let padded = Padded::new(img, p.patch_radius + p.search_radius);
    let weights = WeightTable::new(p);
    let mut out = vec![0u8; w * h * 3];
    let band_bytes = BAND_ROWS * w * 3;
    let run = |(band, chunk): (usize, &mut [u8])| {
        let y0 = band * BAND_ROWS;
        let rows = chunk.len() / (w * 3);
        denoise_band(&padded, &weights, p, w, y0, rows, chunk);
    };
    match exec {
        Execution::Sequential => out.chunks_mut(band_bytes).enumerate().for_each(run),
        Execution::Parallel => out.par_chunks_mut(band_bytes).enumerate().for_each(run),
    }
    ImageBuffer::new(w, h, out).expect("dimensions match")
}

fn denoise_band(img: &Padded, weights: &WeightTable, p: &NlmParams, w: usize, y0: usize, rows: usize, out: &mut [u8]) {
    let pr = p.patch_radius as isize;
    let sr = p.search_radius as isize;
    let side = 2 * p.patch_radius;
    // Squared differences cover the band plus the patch margin on every side.
    let dw = w + side;
    let dh = rows + side;
    let mut diff = vec![0u32; dw * dh];
    let mut colsum = vec![0u32; dw];
    let mut num = vec![0u64; rows * w * 3];
    let mut den = vec![0u64; rows * w];
    let data = &img.data;

    for dy in -sr..=sr {
        for dx in -sr..=sr {
            for (r, drow) in diff.chunks_exact_mut(dw).enumerate() {
                let y = y0 as isize + r as isize - pr;
                let a0 = img.index(-pr, y);
                let b0 = img.index(-pr + dx, y + dy);
                let a = &data[a0..a0 + dw * 3];
                let b = &data[b0..b0 + dw * 3];
                for ((d, pa), pb) in drow.iter_mut().zip(a.chunks_exact(3)).zip(b.chunks_exact(3)) {
                    let e0 = pa[0] - pb[0];
                    let e1 = pa[1] - pb[1];
                    let e2 = pa[2] - pb[2];
                    *d = (e0 * e0 + e1 * e1 + e2 * e2) as u32;
                }
            }

            colsum.iter_mut().for_each(|c| *c = 0);
            for drow in diff.chunks_exact(dw).take(side) {
                colsum.iter_mut().zip(drow).for_each(|(c, &d)| *c += d);
            }
            for r in 0..rows {
                // Window rows r..=r+side of `diff`.
                let add = &diff[(r + side) * dw..(r + side + 1) * dw];
                colsum.iter_mut().zip(add).for_each(|(c, &d)| *c += d);

                let y = (y0 + r) as isize;
                let q0 = img.index(dx, y + dy);
                let q = &data[q0..q0 + w * 3];
                let num_row = &mut num[r * w * 3..(r + 1) * w * 3];
                let den_row = &mut den[r * w..(r + 1) * w];
                let mut ssd: u64 = colsum[..side].iter().map(|&c| c as u64).sum();
                for x in 0..w {
                    ssd += colsum[x + side] as u64;
                    let wt = weights.weight(ssd);
                    ssd -= colsum[x] as u64;
                    if wt != 0 {
                        den_row[x] += wt;
                        let n = &mut num_row[x * 3..x * 3 + 3];
                        n[0] += wt * q[x * 3] as u64;
                        n[1] += wt * q[x * 3 + 1] as u64;
                        n[2] += wt * q[x * 3 + 2] as u64;
                    }
                }

                let sub = &diff[r * dw..(r + 1) * dw];
                colsum.iter_mut().zip(sub).for_each(|(c, &d)| *c -= d);
            }
        }
    }

    for (i, o) in out.iter_mut().enumerate() {
        let d = den[i / 3];
        *o = ((num[i] + d / 2) / d) as u8;
    }
}

/// Noise standard deviation estimate in channel units: median absolute
/// deviation of the 4-neighbour Laplacian, pooled over the three channels
/// and rescaled for Gaussian noise. Images smaller than 3×3 give 0.
pub fn estimate_noise_sigma(img: &ImageBuffer) -> f64 {
    let (w, h) = (img.width(), img.height());
    if w < 3 || h < 3 {
        return 0.0;
    }
    let mut lap = Vec::with_capacity((w - 2) * (h - 2) * 3);
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let c = img.get(x, y);
            let n = [
                img.get(x - 1, y),
                img.get(x + 1, y),
                img.get(x, y - 1),
                img.get(x, y + 1),
            ];
            for ch in 0..3 {
                let s: i32 = n.iter().map(|p| p[ch] as i32).sum();
                lap.push((s - 4 * c[ch] as i32) as f64);
            }
        }
    }
    let med = median(&mut lap);
    let mut dev: Vec<f64> = lap.iter().map(|v| (v - med).abs()).collect();
    // For iid noise the Laplacian has standard deviation sqrt(20) σ; MAD of a
    // Gaussian is 0.6745 of its standard deviation.
    median(&mut dev) / 0.674_489_750_196_081_7 / 20f64.sqrt()
}

fn median(v: &mut [f64]) -> f64 {
    let mid = v.len() / 2;
    let (_, m, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    *m
}
