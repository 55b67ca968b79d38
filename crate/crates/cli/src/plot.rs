//! Count-per-frame scatter plot rendered straight into an image.

use srdet::evalmap::CountPoint;
use srdet::imagebuf::{ImageBuffer, Rgb};

pub const BASE_COLOR: Rgb = [214, 39, 40];
pub const ENHANCED_COLOR: Rgb = [31, 119, 180];
const BACKGROUND: Rgb = [255, 255, 255];
const AXIS: Rgb = [40, 40, 40];
const GRID: Rgb = [225, 225, 225];
const MARGIN: usize = 12;
const PLOT_H: usize = 160;

fn dot(img: &mut ImageBuffer, cx: usize, cy: usize, color: Rgb) {
    for y in cy.saturating_sub(1)..=(cy + 1).min(img.height() - 1) {
        for x in cx.saturating_sub(1)..=(cx + 1).min(img.width() - 1) {
            img.put(x, y, color);
        }
    }
}

/// Base (red) and enhanced (blue) detection counts against frame index.
/// Horizontal grid lines mark every 5 detections.
pub fn counts_plot(points: &[CountPoint]) -> ImageBuffer {
    let step = 4;
    let width = 2 * MARGIN + points.len().max(1) * step;
    let height = 2 * MARGIN + PLOT_H;
    let mut img = ImageBuffer::filled(width, height, BACKGROUND);
    let max = points
        .iter()
        .map(|p| p.n_base.max(p.n_enhanced))
        .max()
        .unwrap_or(0)
        .max(1);
    let y_of = |n: usize| MARGIN + PLOT_H - n * PLOT_H / max;

    for n in (5..=max).step_by(5) {
        let y = y_of(n);
        for x in MARGIN..width - MARGIN {
            img.put(x, y, GRID);
        }
    }
    for x in MARGIN..width - MARGIN {
        img.put(x, MARGIN + PLOT_H, AXIS);
    }
    for y in MARGIN..=MARGIN + PLOT_H {
        img.put(MARGIN - 1, y, AXIS);
    }
    for (i, p) in points.iter().enumerate() {
        let x = MARGIN + i * step + step / 2;
        dot(&mut img, x, y_of(p.n_base), BASE_COLOR);
        dot(&mut img, x, y_of(p.n_enhanced), ENHANCED_COLOR);
    }
    img
}
