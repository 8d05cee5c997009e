//! Gray-level co-occurrence matrices and Haralick statistics.

use crate::imaging::GrayImage;
use crate::{Error, Result};

/// Quantisation levels (`level = value / 16`).
pub const GLCM_LEVELS: usize = 16;

/// Pixel offsets, in order: right, down, down-right, up-right.
pub const GLCM_OFFSETS: [(isize, isize); 4] = [(1, 0), (0, 1), (1, 1), (1, -1)];

/// Normalised, symmetrised co-occurrence table.
#[derive(Debug, Clone, PartialEq)]
pub struct Glcm {
    pub offset: (isize, isize),
    table: Vec<f64>,
}

impl Glcm {
    pub fn levels(&self) -> usize {
        GLCM_LEVELS
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.table[i * GLCM_LEVELS + j]
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }
}

/// Counts each in-bounds pair (p, p + offset) in both orders, then normalises.
pub fn glcm_compute(gray: &GrayImage, offset: (isize, isize)) -> Result<Glcm> {
    let (w, h) = (gray.width() as isize, gray.height() as isize);
    let (dx, dy) = offset;
    if w <= dx.abs() || h <= dy.abs() {
        return Err(Error::InvalidInput(format!(
            "{w}x{h} image too small for offset ({dx}, {dy})"
        )));
    }
    let mut counts = [0u64; GLCM_LEVELS * GLCM_LEVELS];
    let (x0, x1) = (0.max(-dx), w.min(w - dx));
    let (y0, y1) = (0.max(-dy), h.min(h - dy));
    for y in y0..y1 {
        for x in x0..x1 {
            let a = gray.get(x as usize, y as usize) as usize / 16;
            let b = gray.get((x + dx) as usize, (y + dy) as usize) as usize / 16;
            counts[a * GLCM_LEVELS + b] += 1;
            counts[b * GLCM_LEVELS + a] += 1;
        }
    }
    let total: u64 = counts.iter().sum();
    let table = counts.iter().map(|&c| c as f64 / total as f64).collect();
    Ok(Glcm { offset, table })
}

/// Contrast, correlation, energy, homogeneity, entropy.
pub fn haralick(g: &Glcm) -> [f64; 5] {
    let n = GLCM_LEVELS;
    let mut mu_i = 0.0;
    let mut mu_j = 0.0;
    for i in 0..n {
        for j in 0..n {
            let p = g.get(i, j);
            mu_i += i as f64 * p;
            mu_j += j as f64 * p;
        }
    }
    let (mut var_i, mut var_j) = (0.0, 0.0);
    let (mut contrast, mut cov, mut energy, mut homogeneity, mut entropy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            let p = g.get(i, j);
            let (di, dj) = (i as f64 - mu_i, j as f64 - mu_j);
            let diff = i as f64 - j as f64;
            var_i += di * di * p;
            var_j += dj * dj * p;
            cov += di * dj * p;
            contrast += diff * diff * p;
            energy += p * p;
            homogeneity += p / (1.0 + diff.abs());
            if p > 0.0 {
                entropy -= p * p.ln();
            }
        }
    }
    let sigma = (var_i * var_j).sqrt();
    let correlation = if sigma > 1e-12 { cov / sigma } else { 0.0 };
    [contrast, correlation, energy, homogeneity, entropy]
}

/// Five Haralick statistics for each of the four offsets (20 values).
/// Images smaller than 2×2 yield zeros.
pub fn glcm_features(gray: &GrayImage) -> Vec<f64> {
    if gray.width() < 2 || gray.height() < 2 {
        return vec![0.0; GLCM_OFFSETS.len() * 5];
    }
    GLCM_OFFSETS
        .iter()
        .flat_map(|&off| haralick(&glcm_compute(gray, off).expect("2x2 fits every offset")))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gray(w: usize, h: usize, f: impl FnMut(usize, usize) -> u8) -> GrayImage {
        GrayImage::from_fn(w, h, f).unwrap()
    }

    #[test]
    fn constant_single_cell() {
        let g = glcm_compute(&gray(2, 2, |_, _| 100), (1, 0)).unwrap();
        let c = 100 / 16;
        for i in 0..16 {
            for j in 0..16 {
                assert_eq!(g.get(i, j), if i == c && j == c { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn one_d_checkerboard() {
        let g = glcm_compute(&gray(4, 1, |x, _| if x % 2 == 0 { 0 } else { 255 }), (1, 0)).unwrap();
        assert_eq!(g.get(0, 15), 0.5);
        assert_eq!(g.get(15, 0), 0.5);
        assert_eq!(g.table().iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn too_small_for_offset() {
        assert!(glcm_compute(&gray(1, 1, |_, _| 0), (1, 0)).is_err());
        assert!(glcm_compute(&gray(3, 1, |_, _| 0), (1, -1)).is_err());
        assert!(glcm_features(&gray(1, 5, |_, _| 9)).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_image_stats() {
        let f = glcm_features(&gray(6, 6, |_, _| 200));
        for chunk in f.chunks(5) {
            assert_eq!(chunk, &[0.0, 0.0, 1.0, 1.0, 0.0]);
        }
    }

    #[test]
    fn checkerboard_contrast() {
        let img = gray(4, 4, |x, y| if (x + y) % 2 == 0 { 0 } else { 255 });
        let f = glcm_features(&img);
        // Horizontal and vertical neighbours always differ; diagonals never do.
        assert_eq!(f[0], 225.0);
        assert_eq!(f[5], 225.0);
        assert_eq!(f[10], 0.0);
        assert_eq!(f[15], 0.0);
        // Off-diagonal GLCM, perfectly anti-correlated levels.
        assert!((f[1] + 1.0).abs() < 1e-12);
        assert!((f[4] - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn two_level_diagonal_mass() {
        // Vertical stripes: offset (0,1) pairs only ever see equal levels.
        let img = gray(4, 4, |x, _| if x < 2 { 0 } else { 255 });
        let g = glcm_compute(&img, (0, 1)).unwrap();
        assert_eq!((g.get(0, 0), g.get(15, 15)), (0.5, 0.5));
        let s = haralick(&g);
        assert!((s[2] - 0.5).abs() < 1e-15);
        assert!((s[4] - 2f64.ln()).abs() < 1e-15);
        assert!((s[1] - 1.0).abs() < 1e-12);
    }
}
