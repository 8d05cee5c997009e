//! Synthetic two-class "dermoscopy" images for smoke tests and benchmarks.
//!
//! Positives are dark red discs with strong speckle and dot texture; negatives
//! are smooth dark brown discs. Both sit on a noisy skin-tone background.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng as _;

use crate::imaging::Image;
use crate::pipeline::TaskId;
use crate::{rng, Error, Result};

const SKIN: [f64; 3] = [224.0, 184.0, 160.0];
const RED: [f64; 3] = [128.0, 28.0, 36.0];
const BROWN: [f64; 3] = [96.0, 62.0, 42.0];

fn clamp_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// One `side × side` image; the same `(positive, seed)` always yields the same pixels.
pub fn synth_image(side: usize, positive: bool, seed: u64) -> Result<Image> {
    if side < 16 {
        return Err(Error::InvalidInput(format!("synthetic images need side >= 16, got {side}")));
    }
    let mut r = rng::stream(seed, 0);
    let s = side as f64;
    let radius = s * r.random_range(0.20..0.30);
    let cx = s / 2.0 + s * r.random_range(-0.08..0.08);
    let cy = s / 2.0 + s * r.random_range(-0.08..0.08);
    let period = r.random_range(5.0..8.0) * s / 128.0;
    let phase: f64 = r.random_range(0.0..std::f64::consts::TAU);
    let tint: [f64; 3] = std::array::from_fn(|_| r.random_range(-8.0..8.0));
    Image::from_fn(side, side, |x, y| {
        let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
        let d = ((fx - cx).powi(2) + (fy - cy).powi(2)).sqrt();
        let mut px = [0.0; 3];
        if d <= radius {
            if positive {
                let dots = ((fx / period + phase).sin() * (fy / period).cos()).abs();
                let dark = if dots > 0.7 { -45.0 } else { 0.0 };
                let speckle = r.random_range(-35.0..35.0);
                for c in 0..3 {
                    px[c] = RED[c] + tint[c] + speckle + dark;
                }
            } else {
                let shade = 10.0 * (d / radius);
                let noise = r.random_range(-3.0..3.0);
                for c in 0..3 {
                    px[c] = BROWN[c] + tint[c] + shade + noise;
                }
            }
        } else {
            let noise = r.random_range(-12.0..12.0);
            for c in 0..3 {
                px[c] = SKIN[c] + tint[c] * 0.5 + noise + r.random_range(-4.0..4.0);
            }
        }
        px.map(clamp_u8)
    })
}

/// File layout written by [`write_benchmark`].
#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub root: PathBuf,
    pub images_dir: PathBuf,
    pub config: PathBuf,
    pub labels: [PathBuf; 2],
    /// Every generated image, task 1 first.
    pub images: Vec<PathBuf>,
}

/// Settings written into the benchmark's `config.toml`.
pub const BENCHMARK_CONFIG: &str = "\
images_dir = \"images\"
output = \"model.lfsb\"
validation_fraction = 0.2

[task1]
labels = \"task1.csv\"

[task2]
labels = \"task2.csv\"

[forest]
n_trees = 200

[cnn]
input_side = 32
blocks = [8, 16]
epochs = 8
batch_size = 16
learning_rate = 0.01
";

/// Generates `n_per_task` images per task (half positive) plus labels and a config.
///
/// Each task gets its own image set and ground-truth CSV; the label column for
/// the other task is always 0.
pub fn write_benchmark(root: &Path, n_per_task: usize, side: usize, seed: u64) -> Result<Benchmark> {
    if n_per_task < 4 {
        return Err(Error::InvalidInput("need at least 4 images per task".into()));
    }
    let images_dir = root.join("images");
    std::fs::create_dir_all(&images_dir).map_err(|e| Error::io(&images_dir, e))?;
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for task in TaskId::ALL {
        let mut csv = String::from("image_id,melanoma,seborrheic_keratosis\n");
        for i in 0..n_per_task {
            let positive = i % 2 == 0;
            let id = format!("t{}_{i:03}", task.index() + 1);
            let img_seed = rng::derive(seed, ((task.index() as u64) << 32) | i as u64);
            let path = images_dir.join(format!("{id}.png"));
            synth_image(side, positive, img_seed)?.save_png(&path)?;
            let p = positive as u8;
            let (mel, sk) = match task {
                TaskId::Task1 => (p, 0),
                TaskId::Task2 => (0, p),
            };
            let _ = writeln!(csv, "{id},{mel},{sk}");
            images.push(path);
        }
        let path = root.join(format!("{task}.csv"));
        std::fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
        labels.push(path);
    }
    let config = root.join("config.toml");
    let text = format!("seed = {seed}\n{BENCHMARK_CONFIG}");
    std::fs::write(&config, text).map_err(|e| Error::io(&config, e))?;
    Ok(Benchmark {
        root: root.to_owned(),
        images_dir,
        config,
        labels: labels.try_into().expect("two tasks"),
        images,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::roi::{locate_lesion, RoiConfig};

    #[test]
    fn deterministic_and_distinct() {
        let a = synth_image(64, true, 5).unwrap();
        assert_eq!(a, synth_image(64, true, 5).unwrap());
        assert_ne!(a, synth_image(64, true, 6).unwrap());
        assert!(synth_image(8, true, 1).is_err());
    }

    #[test]
    fn lesion_is_located() {
        for (positive, seed) in [(true, 1), (false, 2)] {
            let img = synth_image(128, positive, seed).unwrap();
            let r = locate_lesion(&img, &RoiConfig::default());
            // Disc diameter is 51–77 px; the box adds a 10% margin and never covers the frame.
            assert!(r.w >= 45 && r.w < 128 && r.h >= 45 && r.h < 128, "{r:?}");
        }
    }

    #[test]
    fn classes_differ_in_colour_and_texture() {
        let stats = |img: &Image| {
            let (c, r) = (img.width() / 2, 8);
            let px: Vec<[u8; 3]> = (c - r..c + r).flat_map(|y| (c - r..c + r).map(move |x| (x, y))).map(|(x, y)| img.pixel(x, y)).collect();
            let mean_g = px.iter().map(|p| p[1] as f64).sum::<f64>() / px.len() as f64;
            let var_r = {
                let m = px.iter().map(|p| p[0] as f64).sum::<f64>() / px.len() as f64;
                px.iter().map(|p| (p[0] as f64 - m).powi(2)).sum::<f64>() / px.len() as f64
            };
            (mean_g, var_r)
        };
        let (g_pos, v_pos) = stats(&synth_image(128, true, 3).unwrap());
        let (g_neg, v_neg) = stats(&synth_image(128, false, 3).unwrap());
        assert!(g_pos < g_neg);
        assert!(v_pos > 10.0 * v_neg);
    }
}
