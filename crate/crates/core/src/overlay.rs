//! Visual check of a prediction: heatmap blended over the image, ground truth
//! as a red cross, prediction as a green circle.

use std::path::Path;

use image::{Rgb, RgbImage};
use zian_tensor::Tensor;

use crate::error::{Result, ZianError};
use crate::heatmap::Heatmap;

const GT_COLOR: Rgb<u8> = Rgb([255, 0, 0]);
const PRED_COLOR: Rgb<u8> = Rgb([0, 255, 0]);
const EDGE_COLOR: Rgb<u8> = Rgb([255, 0, 255]);
const HEAT_COLOR: [f32; 3] = [255.0, 200.0, 0.0];
pub const MARKER_RADIUS: i64 = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverlayInfo {
    /// Pixel where the prediction was drawn.
    pub pred_pixel: (u32, u32),
    /// The prediction was outside the image and drawn at the clamped edge position.
    pub pred_clamped: bool,
    pub gt_pixel: Option<(u32, u32)>,
}

fn put(img: &mut RgbImage, x: i64, y: i64, c: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, c);
    }
}

fn draw_cross(img: &mut RgbImage, (cx, cy): (i64, i64), c: Rgb<u8>) {
    for d in -MARKER_RADIUS..=MARKER_RADIUS {
        put(img, cx + d, cy, c);
        put(img, cx, cy + d, c);
    }
}

/// Midpoint circle of radius [`MARKER_RADIUS`].
fn draw_circle(img: &mut RgbImage, (cx, cy): (i64, i64), c: Rgb<u8>) {
    let (mut x, mut y, mut err) = (MARKER_RADIUS, 0i64, 1 - MARKER_RADIUS);
    while x >= y {
        for (dx, dy) in [(x, y), (y, x), (-y, x), (-x, y), (-x, -y), (-y, -x), (y, -x), (x, -y)] {
            put(img, cx + dx, cy + dy, c);
        }
        y += 1;
        if err < 0 {
            err += 2 * y + 1;
        } else {
            x -= 1;
            err += 2 * (y - x) + 1;
        }
    }
}

/// Filled square marking a prediction that was clamped onto the border.
fn draw_edge_marker(img: &mut RgbImage, (cx, cy): (i64, i64)) {
    for dy in -1..=1 {
        for dx in -1..=1 {
            put(img, cx + dx, cy + dy, EDGE_COLOR);
        }
    }
}

fn nearest_pixel((u, v): (f64, f64), w: u32, h: u32) -> ((i64, i64), bool) {
    let inside = u >= -0.5 && u < w as f64 - 0.5 && v >= -0.5 && v < h as f64 - 0.5;
    let x = u.round().clamp(0.0, w as f64 - 1.0) as i64;
    let y = v.round().clamp(0.0, h as f64 - 1.0) as i64;
    ((x, y), !inside)
}

/// Compose the overlay for a `3×H×W` image in [0, 1]. The heatmap's frame must map
/// its grid into this image's pixel coordinates.
pub fn overlay_image(
    image: &Tensor<f32>,
    heatmap: Option<&Heatmap>,
    gt: Option<(f64, f64)>,
    pred: (f64, f64),
) -> Result<(RgbImage, OverlayInfo)> {
    let s = image.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(ZianError::Invalid(format!("overlay needs a 3×H×W image, got {s:?}")));
    }
    let (h, w) = (s[1], s[2]);
    let d = image.data();
    let (lo, hi) = heatmap.map_or((0.0, 1.0), |hm| {
        let v = hm.values();
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    });
    let mut img = RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let alpha = match heatmap {
                Some(hm) if hi > lo => {
                    let (gu, gv) = hm.frame.invert((x as f64, y as f64));
                    let (r, c) = (gv.round(), gu.round());
                    if r >= 0.0 && c >= 0.0 && (r as usize) < hm.height() && (c as usize) < hm.width() {
                        0.6 * ((hm.at(r as usize, c as usize) - lo) / (hi - lo)) as f32
                    } else {
                        0.0
                    }
                }
                _ => 0.0,
            };
            let px: [u8; 3] = std::array::from_fn(|ch| {
                let base = d[(ch * h + y) * w + x].clamp(0.0, 1.0) * 255.0;
                ((1.0 - alpha) * base + alpha * HEAT_COLOR[ch]).round() as u8
            });
            img.put_pixel(x as u32, y as u32, Rgb(px));
        }
    }
    let gt_pixel = gt.map(|g| {
        let (p, _) = nearest_pixel(g, w as u32, h as u32);
        draw_cross(&mut img, p, GT_COLOR);
        (p.0 as u32, p.1 as u32)
    });
    let (pp, clamped) = nearest_pixel(pred, w as u32, h as u32);
    draw_circle(&mut img, pp, PRED_COLOR);
    if clamped {
        draw_edge_marker(&mut img, pp);
    }
    Ok((
        img,
        OverlayInfo {
            pred_pixel: (pp.0 as u32, pp.1 as u32),
            pred_clamped: clamped,
            gt_pixel,
        },
    ))
}

/// [`overlay_image`] written to `path` (format from the extension).
pub fn render_overlay(
    image: &Tensor<f32>,
    heatmap: Option<&Heatmap>,
    gt: Option<(f64, f64)>,
    pred: (f64, f64),
    path: impl AsRef<Path>,
) -> Result<OverlayInfo> {
    let path = path.as_ref();
    let (img, info) = overlay_image(image, heatmap, gt, pred)?;
    img.save(path).map_err(|source| ZianError::Image {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(info)
}
