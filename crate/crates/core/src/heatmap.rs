//! Gaussian targets, peak decoding and coordinate frames.
//!
//! Grid cells sit at integer positions. A [`CoordFrame`] maps a grid position
//! `(gu, gv)` (column, row) to original-image pixels as `offset + scale * g`.

use std::path::Path;

use image::{ImageBuffer, Luma};
use serde::{Deserialize, Serialize};
use zian_tensor::Tensor;

use crate::error::{Result, ZianError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoordFrame {
    pub scale_u: f64,
    pub scale_v: f64,
    pub offset_u: f64,
    pub offset_v: f64,
}

impl Default for CoordFrame {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl CoordFrame {
    pub const IDENTITY: CoordFrame = CoordFrame {
        scale_u: 1.0,
        scale_v: 1.0,
        offset_u: 0.0,
        offset_v: 0.0,
    };

    pub fn new(scale_u: f64, scale_v: f64, offset_u: f64, offset_v: f64) -> Self {
        Self {
            scale_u,
            scale_v,
            offset_u,
            offset_v,
        }
    }

    pub fn uniform(scale: f64, offset_u: f64, offset_v: f64) -> Self {
        Self::new(scale, scale, offset_u, offset_v)
    }

    /// Frame of a half-pixel-center resampling where each new cell spans `factor` old cells.
    pub fn downsample(factor: f64) -> Self {
        let o = 0.5 * factor - 0.5;
        Self::uniform(factor, o, o)
    }

    /// Grid position to original pixels.
    pub fn apply(&self, (gu, gv): (f64, f64)) -> (f64, f64) {
        (self.offset_u + self.scale_u * gu, self.offset_v + self.scale_v * gv)
    }

    /// Original pixels to grid position.
    pub fn invert(&self, (u, v): (f64, f64)) -> (f64, f64) {
        ((u - self.offset_u) / self.scale_u, (v - self.offset_v) / self.scale_v)
    }

    /// `outer ∘ inner`: `inner` maps its grid into the grid of `outer`, which maps to original pixels.
    pub fn compose(outer: &CoordFrame, inner: &CoordFrame) -> CoordFrame {
        CoordFrame {
            scale_u: outer.scale_u * inner.scale_u,
            scale_v: outer.scale_v * inner.scale_v,
            offset_u: outer.offset_u + outer.scale_u * inner.offset_u,
            offset_v: outer.offset_v + outer.scale_v * inner.offset_v,
        }
    }

    pub fn then(&self, inner: &CoordFrame) -> CoordFrame {
        Self::compose(self, inner)
    }

    pub fn inverse(&self) -> CoordFrame {
        CoordFrame {
            scale_u: 1.0 / self.scale_u,
            scale_v: 1.0 / self.scale_v,
            offset_u: -self.offset_u / self.scale_u,
            offset_v: -self.offset_v / self.scale_v,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.scale_u > 0.0
            && self.scale_v > 0.0
            && self.scale_u.is_finite()
            && self.scale_v.is_finite()
            && self.offset_u.is_finite()
            && self.offset_v.is_finite()
    }
}

/// A single-channel score grid tied to a frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    /// Shape `[1, 1, H, W]`.
    pub grid: Tensor<f64>,
    pub frame: CoordFrame,
    /// Set for targets whose landmark lies outside the grid.
    pub off_grid: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    /// Peak in original coordinates.
    pub u: f64,
    pub v: f64,
    pub row: usize,
    pub col: usize,
    /// All cells equal; the origin cell is reported.
    pub degenerate: bool,
}

impl Heatmap {
    pub fn new(height: usize, width: usize, values: Vec<f64>, frame: CoordFrame) -> Result<Self> {
        let grid = Tensor::new(vec![1, 1, height, width], values)?;
        if let Some(i) = grid.first_non_finite() {
            return Err(ZianError::Invalid(format!("heatmap value {i} is not finite")));
        }
        Ok(Self {
            grid,
            frame,
            off_grid: false,
        })
    }

    pub fn height(&self) -> usize {
        self.grid.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.grid.shape()[3]
    }

    pub fn values(&self) -> &[f64] {
        self.grid.data()
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.grid.data()[row * self.width() + col]
    }

    pub fn peak(&self) -> Peak {
        peak_coords(self)
    }

    /// Write as a 16-bit grayscale PNG with values in [0, 1] scaled to 65535.
    pub fn export_png16(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let pixels: Vec<u16> = self
            .values()
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16)
            .collect();
        let img: ImageBuffer<Luma<u16>, Vec<u16>> =
            ImageBuffer::from_raw(self.width() as u32, self.height() as u32, pixels)
                .expect("buffer length matches dimensions");
        img.save(path).map_err(|source| ZianError::Image {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// `exp(-((u-u0)² + (v-v0)²) / (2δ²))` at every grid cell, with `(u0, v0)` in grid units.
pub fn gaussian_target(u0: f64, v0: f64, height: usize, width: usize, delta: f64) -> Heatmap {
    assert!(height > 0 && width > 0, "heatmap must be non-empty");
    assert!(delta > 0.0, "delta must be positive");
    let denom = 2.0 * delta * delta;
    let mut values = Vec::with_capacity(height * width);
    for v in 0..height {
        let dv = v as f64 - v0;
        for u in 0..width {
            let du = u as f64 - u0;
            values.push((-(du * du + dv * dv) / denom).exp());
        }
    }
    let off_grid = !(u0 >= -0.5 && u0 < width as f64 - 0.5 && v0 >= -0.5 && v0 < height as f64 - 0.5);
    Heatmap {
        grid: Tensor::new(vec![1, 1, height, width], values).expect("shape matches"),
        frame: CoordFrame::IDENTITY,
        off_grid,
    }
}

/// Target for a landmark given in original coordinates, rendered on a grid with `frame`.
pub fn gaussian_target_in_frame(
    landmark: (f64, f64),
    frame: CoordFrame,
    height: usize,
    width: usize,
    delta: f64,
) -> Heatmap {
    let (gu, gv) = frame.invert(landmark);
    let mut hm = gaussian_target(gu, gv, height, width, delta);
    hm.frame = frame;
    hm
}

/// Arg-max cell mapped to original coordinates; ties go to the smallest row-major index.
pub fn peak_coords(hm: &Heatmap) -> Peak {
    let values = hm.values();
    let mut best = 0;
    for (i, &x) in values.iter().enumerate().skip(1) {
        if x > values[best] {
            best = i;
        }
    }
    let degenerate = values.iter().all(|&x| x == values[0]);
    if degenerate {
        log::warn!("degenerate heatmap: all {} cells equal", values.len());
    }
    let (row, col) = (best / hm.width(), best % hm.width());
    let (u, v) = hm.frame.apply((col as f64, row as f64));
    Peak {
        u,
        v,
        row,
        col,
        degenerate,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn target_is_one_at_an_on_grid_landmark() {
        let hm = gaussian_target(10.0, 20.0, 32, 32, 2.0);
        assert_eq!(hm.at(20, 10), 1.0);
        assert!(!hm.off_grid);
    }

    #[test]
    fn target_value_two_cells_away() {
        let hm = gaussian_target(10.0, 20.0, 32, 32, 2.0);
        assert!((hm.at(20, 12) - (-0.5f64).exp()).abs() < 1e-15);
        assert!((hm.at(20, 12) - 0.606531).abs() < 1e-6);
    }

    #[test]
    fn off_grid_landmark_is_flagged() {
        let hm = gaussian_target(-3.0, 4.0, 8, 8, 2.0);
        assert!(hm.off_grid);
        assert!(hm.values().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn peak_of_target_is_landmark() {
        let hm = gaussian_target(10.0, 20.0, 32, 32, 2.0);
        let p = peak_coords(&hm);
        assert_eq!((p.u, p.v), (10.0, 20.0));
        assert!(!p.degenerate);
    }

    #[test]
    fn peak_maps_through_scaled_frame() {
        let mut hm = gaussian_target(10.0, 20.0, 32, 32, 2.0);
        hm.frame = CoordFrame::uniform(4.0, 100.0, 100.0);
        let p = peak_coords(&hm);
        assert_eq!((p.u, p.v), (140.0, 180.0));
    }

    #[test]
    fn flat_map_is_degenerate_at_origin() {
        let hm = Heatmap::new(3, 4, vec![0.25; 12], CoordFrame::uniform(2.0, 5.0, 7.0)).unwrap();
        let p = peak_coords(&hm);
        assert!(p.degenerate);
        assert_eq!((p.row, p.col), (0, 0));
        assert_eq!((p.u, p.v), (5.0, 7.0));
    }

    #[test]
    fn ties_prefer_smallest_row_major_index() {
        let mut vals = vec![0.0; 12];
        vals[7] = 1.0;
        vals[5] = 1.0;
        let hm = Heatmap::new(3, 4, vals, CoordFrame::IDENTITY).unwrap();
        let p = peak_coords(&hm);
        assert_eq!((p.row, p.col), (1, 1));
    }

    #[test]
    fn identity_composition_is_neutral() {
        let f = CoordFrame::new(4.0, 2.0, 1.5, -3.0);
        assert_eq!(CoordFrame::compose(&CoordFrame::IDENTITY, &f), f);
        assert_eq!(CoordFrame::compose(&f, &CoordFrame::IDENTITY), f);
    }

    #[test]
    fn crop_offset_after_scale() {
        let crop = CoordFrame::uniform(1.0, 372.0, 372.0);
        let scale = CoordFrame::uniform(4.0, 0.0, 0.0);
        let f = CoordFrame::compose(&crop, &scale);
        assert_eq!(f.apply((0.0, 0.0)), (372.0, 372.0));
        assert_eq!(f.apply((1.0, 2.0)), (376.0, 380.0));
    }

    #[test]
    fn inverse_frame_undoes_apply() {
        let f = CoordFrame::new(4.0, 0.5, 7.5, -2.25);
        let g = CoordFrame::compose(&f, &f.inverse());
        assert_eq!(g, CoordFrame::IDENTITY);
    }

    #[test]
    fn png_export_round_trips_dimensions() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("hm.png");
        let hm = gaussian_target(3.0, 2.0, 5, 7, 2.0);
        hm.export_png16(&path).unwrap();
        let img = image::open(&path).unwrap().into_luma16();
        assert_eq!(img.dimensions(), (7, 5));
        assert_eq!(img.get_pixel(3, 2)[0], 65535);
    }

    fn dyadic() -> impl Strategy<Value = f64> {
        (-64i32..64).prop_map(|k| k as f64 / 8.0)
    }

    fn frame() -> impl Strategy<Value = CoordFrame> {
        (-3i32..4, -3i32..4, dyadic(), dyadic()).prop_map(|(a, b, ou, ov)| {
            CoordFrame::new(2f64.powi(a), 2f64.powi(b), ou, ov)
        })
    }

    proptest! {
        #[test]
        fn composition_is_associative(a in frame(), b in frame(), c in frame()) {
            let left = CoordFrame::compose(&CoordFrame::compose(&a, &b), &c);
            let right = CoordFrame::compose(&a, &CoordFrame::compose(&b, &c));
            prop_assert_eq!(left, right);
        }

        #[test]
        fn dyadic_chains_round_trip_exactly(chain in prop::collection::vec(frame(), 1..5), gu in dyadic(), gv in dyadic()) {
            let f = chain.iter().fold(CoordFrame::IDENTITY, |acc, g| acc.then(g));
            let p = f.apply((gu, gv));
            prop_assert_eq!(f.invert(p), (gu, gv));
            prop_assert_eq!(f.apply(f.invert(p)), p);
        }

        #[test]
        fn peak_is_nearest_grid_point(u0 in 0.0f64..31.0, v0 in 0.0f64..23.0) {
            let hm = gaussian_target(u0, v0, 24, 32, 2.0);
            let p = peak_coords(&hm);
            // Brute force: nearest cell by squared distance, row-major first on ties.
            let mut best = (f64::INFINITY, 0, 0);
            for r in 0..24 {
                for c in 0..32 {
                    let d = (c as f64 - u0).powi(2) + (r as f64 - v0).powi(2);
                    if d < best.0 {
                        best = (d, r, c);
                    }
                }
            }
            prop_assert_eq!((p.row, p.col), (best.1, best.2));
        }

        #[test]
        fn integer_shift_moves_values_exactly(ku in 512i32..1024, kv in 512i32..1024, a in -4i32..5, b in -4i32..5) {
            // Subpixel positions on a 1/64 lattice keep every difference exact.
            let (u0, v0) = (ku as f64 / 64.0, kv as f64 / 64.0);
            let base = gaussian_target(u0, v0, 32, 32, 2.0);
            let moved = gaussian_target(u0 + a as f64, v0 + b as f64, 32, 32, 2.0);
            for r in 4..28usize {
                for c in 4..28usize {
                    let (r2, c2) = ((r as i32 + b) as usize, (c as i32 + a) as usize);
                    prop_assert_eq!(moved.at(r2, c2), base.at(r, c));
                }
            }
        }
    }
}
