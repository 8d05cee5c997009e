//! Classical lesion localisation: median smoothing, Otsu threshold, largest
//! 4-connected component and a padded bounding box.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

pub use crate::imaging::Rect;
use crate::imaging::{to_grayscale, GrayImage, Image};

/// Row-major boolean raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Self {
        assert_eq!(data.len(), width * height, "mask data length");
        BinaryMask {
            width,
            height,
            data,
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let data = (0..width * height).map(|i| f(i % width, i / width)).collect();
        BinaryMask {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoiConfig {
    pub margin_frac: f64,
    /// Treat the brighter side of the split as lesion.
    pub invert_foreground: bool,
    pub median_filter: bool,
}

impl Default for RoiConfig {
    fn default() -> Self {
        RoiConfig {
            margin_frac: 0.1,
            invert_foreground: false,
            median_filter: true,
        }
    }
}

/// Otsu threshold over the 256-bin histogram.
///
/// Pixels `<= t` form the lower class. Maximises between-class variance with
/// exact integer comparison; ties go to the smallest `t`. A constant image has
/// no valid split and returns its value.
pub fn otsu_threshold(gray: &GrayImage) -> u8 {
    let mut hist = [0u64; 256];
    for &v in gray.data() {
        hist[v as usize] += 1;
    }
    let total: u64 = hist.iter().sum();
    let sum: u64 = hist.iter().enumerate().map(|(i, &c)| i as u64 * c).sum();

    // Between-class variance ∝ (N·S₀ − n₀·S)² / (n₀·n₁); compare as exact
    // rationals through quotient and remainder.
    let mut best: Option<(u8, u128, u128, u128)> = None;
    let (mut n0, mut s0) = (0u64, 0u64);
    for (t, &h) in hist.iter().enumerate() {
        n0 += h;
        s0 += t as u64 * h;
        let n1 = total - n0;
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let d = (total as i128 * s0 as i128 - n0 as i128 * sum as i128).unsigned_abs();
        let num = d * d;
        let den = n0 as u128 * n1 as u128;
        let (q, r) = (num / den, num % den);
        let better = match best {
            None => true,
            Some((_, bq, br, bden)) => q > bq || (q == bq && r * bden > br * den),
        };
        if better {
            best = Some((t as u8, q, r, den));
        }
    }
    match best {
        Some((t, ..)) => t,
        None => gray.data()[0],
    }
}

/// Keeps the largest 4-connected foreground component.
///
/// Ties go to the component containing the smallest row-major index.
pub fn largest_component(mask: &BinaryMask) -> BinaryMask {
    let (w, h) = (mask.width, mask.height);
    let mut label = vec![0u32; w * h];
    let mut next = 0u32;
    let mut best = (0u32, 0usize);
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if !mask.data[start] || label[start] != 0 {
            continue;
        }
        next += 1;
        label[start] = next;
        queue.push_back(start);
        let mut size = 0usize;
        while let Some(i) = queue.pop_front() {
            size += 1;
            let (x, y) = (i % w, i / w);
            let mut visit = |j: usize| {
                if mask.data[j] && label[j] == 0 {
                    label[j] = next;
                    queue.push_back(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        if size > best.1 {
            best = (next, size);
        }
    }
    let keep = best.0;
    BinaryMask {
        width: w,
        height: h,
        data: label.iter().map(|&l| keep != 0 && l == keep).collect(),
    }
}

/// Tight foreground bounding box grown by `ceil(margin_frac · max(w, h))` on
/// every side and clamped to the image. An empty mask yields the full frame.
pub fn lesion_bbox(mask: &BinaryMask, margin_frac: f64) -> Rect {
    let full = Rect {
        x: 0,
        y: 0,
        w: mask.width,
        h: mask.height,
    };
    let mut bounds: Option<(usize, usize, usize, usize)> = None;
    for (i, _) in mask.data.iter().enumerate().filter(|(_, &b)| b) {
        let (x, y) = (i % mask.width, i / mask.width);
        bounds = Some(match bounds {
            None => (x, y, x, y),
            Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
        });
    }
    let Some((x0, y0, x1, y1)) = bounds else {
        return full;
    };
    let (bw, bh) = (x1 - x0 + 1, y1 - y0 + 1);
    // The small epsilon keeps products like 0.1 · 30 from ceiling up to 4.
    let margin = (margin_frac.max(0.0) * bw.max(bh) as f64 - 1e-9).ceil().max(0.0) as usize;
    let nx0 = x0.saturating_sub(margin);
    let ny0 = y0.saturating_sub(margin);
    let nx1 = (x1 + margin).min(mask.width - 1);
    let ny1 = (y1 + margin).min(mask.height - 1);
    Rect {
        x: nx0,
        y: ny0,
        w: nx1 - nx0 + 1,
        h: ny1 - ny0 + 1,
    }
}

/// 3×3 median with replicated borders.
pub fn median3x3(gray: &GrayImage) -> GrayImage {
    let (w, h) = (gray.width(), gray.height());
    GrayImage::from_fn(w, h, |x, y| {
        let mut win = [0u8; 9];
        let mut k = 0;
        for dy in [-1isize, 0, 1] {
            for dx in [-1isize, 0, 1] {
                let sx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                let sy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                win[k] = gray.get(sx, sy);
                k += 1;
            }
        }
        win.sort_unstable();
        win[4]
    })
    .expect("same dims as input")
}

/// Lesion rectangle for `img`: gray → (median) → Otsu → largest component → padded box.
pub fn locate_lesion(img: &Image, cfg: &RoiConfig) -> Rect {
    let gray = to_grayscale(img);
    let gray = if cfg.median_filter { median3x3(&gray) } else { gray };
    let t = otsu_threshold(&gray);
    let mask = BinaryMask::from_fn(gray.width(), gray.height(), |x, y| {
        let v = gray.get(x, y);
        if cfg.invert_foreground {
            v > t
        } else {
            v <= t
        }
    });
    lesion_bbox(&largest_component(&mask), cfg.margin_frac)
}

/// Crops `img` to its lesion area. Never fails; degenerate inputs return the full image.
pub fn crop_lesion(img: &Image, cfg: &RoiConfig) -> Image {
    let rect = locate_lesion(img, cfg);
    img.crop(rect).expect("bounding box lies inside the image")
}
