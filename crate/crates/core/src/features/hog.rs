//! Histogram of oriented gradients on a fixed 64×64 canvas.
//!
//! 16×16-pixel cells (a 4×4 grid), 9 unsigned orientation bins centred on
//! 0°, 20°, …, 160°, and non-overlapping 2×2-cell blocks normalised with L2-Hys.
//! Four blocks of 36 values give 144 outputs.

use crate::imaging::GrayImage;

pub const HOG_CANVAS: usize = 64;
pub const HOG_LEN: usize = 144;

const CELL: usize = 16;
const CELLS: usize = HOG_CANVAS / CELL;
const BINS: usize = 9;
const BIN_WIDTH: f64 = 180.0 / BINS as f64;
const EPS: f64 = 1e-6;
const CLIP: f64 = 0.2;

/// Magnitude-weighted orientation histograms per cell, row-major over the 4×4
/// cell grid, before any block normalisation.
pub fn cell_histograms(gray: &GrayImage) -> Vec<[f64; BINS]> {
    let g = gray
        .resize_bilinear(HOG_CANVAS, HOG_CANVAS)
        .expect("canvas is positive");
    let n = HOG_CANVAS;
    let at = |x: isize, y: isize| {
        g.get(x.clamp(0, n as isize - 1) as usize, y.clamp(0, n as isize - 1) as usize) as f64
    };
    let mut cells = vec![[0.0; BINS]; CELLS * CELLS];
    for y in 0..n {
        for x in 0..n {
            let (xi, yi) = (x as isize, y as isize);
            let gx = at(xi + 1, yi) - at(xi - 1, yi);
            let gy = at(xi, yi + 1) - at(xi, yi - 1);
            let mag = gx.hypot(gy);
            if mag == 0.0 {
                continue;
            }
            let mut angle = gy.atan2(gx).to_degrees().rem_euclid(180.0);
            if angle >= 180.0 {
                angle = 0.0;
            }
            let pos = angle / BIN_WIDTH;
            let lo = pos.floor();
            let frac = pos - lo;
            let lo = lo as usize % BINS;
            let hi = (lo + 1) % BINS;
            let cell = &mut cells[(y / CELL) * CELLS + x / CELL];
            cell[lo] += mag * (1.0 - frac);
            cell[hi] += mag * frac;
        }
    }
    cells
}

fn l2_normalize(v: &mut [f64]) {
    let norm = (v.iter().map(|a| a * a).sum::<f64>() + EPS * EPS).sqrt();
    v.iter_mut().for_each(|a| *a /= norm);
}

/// L2-normalise, clip at 0.2, renormalise.
pub(crate) fn l2_hys(v: &mut [f64]) {
    l2_normalize(v);
    v.iter_mut().for_each(|a| *a = a.min(CLIP));
    l2_normalize(v);
}

pub fn hog_descriptor(gray: &GrayImage) -> Vec<f64> {
    let cells = cell_histograms(gray);
    let mut out = Vec::with_capacity(HOG_LEN);
    for by in (0..CELLS).step_by(2) {
        for bx in (0..CELLS).step_by(2) {
            let mut block = Vec::with_capacity(4 * BINS);
            for cy in by..by + 2 {
                for cx in bx..bx + 2 {
                    block.extend_from_slice(&cells[cy * CELLS + cx]);
                }
            }
            l2_hys(&mut block);
            out.extend(block);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_is_zero() {
        let d = hog_descriptor(&GrayImage::new(30, 20, vec![128; 600]).unwrap());
        assert_eq!(d.len(), HOG_LEN);
        assert!(d.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn vertical_step_edge_uses_zero_degree_bin() {
        let g = GrayImage::from_fn(64, 64, |x, _| if x < 32 { 0 } else { 255 }).unwrap();
        let cells = cell_histograms(&g);
        let total: f64 = cells.iter().flatten().sum();
        let zero_bin: f64 = cells.iter().map(|c| c[0]).sum();
        assert!(total > 0.0);
        assert_eq!(zero_bin, total);
        // Only the two columns either side of the edge carry gradient: 2 · 64 · 255.
        assert_eq!(total, 2.0 * 64.0 * 255.0);
    }

    #[test]
    fn diagonal_gradient_interpolates() {
        // Gradient direction 45° sits between the 40° and 60° bin centres.
        let g = GrayImage::from_fn(64, 64, |x, y| ((x + y) * 2) as u8).unwrap();
        let cells = cell_histograms(&g);
        let c = &cells[5];
        assert!(c[2] > 0.0 && c[3] > 0.0);
        assert!((c[2] / c[3] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn l2_hys_bounds() {
        let mut v: Vec<f64> = (0..36).map(|i| (i * i) as f64).collect();
        l2_hys(&mut v);
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(norm <= 1.0 + 1e-12);
        assert!(v.iter().all(|&a| (0.0..=1.0).contains(&a)));
    }

    #[test]
    fn clipped_values_stay_under_bound_before_renormalising() {
        let mut v = vec![0.0; 36];
        v[0] = 100.0;
        v[1] = 1.0;
        l2_normalize(&mut v);
        v.iter_mut().for_each(|a| *a = a.min(CLIP));
        assert!(v.iter().all(|&a| a <= CLIP * (1.0 + EPS)));
    }
}
