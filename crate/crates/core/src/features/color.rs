use crate::imaging::Image;

const BINS: usize = 16;

/// 16 uniform bins per channel, each channel normalised to sum 1, as R‖G‖B.
pub fn color_histogram(img: &Image) -> Vec<f64> {
    let mut counts = [[0u64; BINS]; 3];
    for px in img.data().chunks_exact(3) {
        for (c, &v) in px.iter().enumerate() {
            counts[c][v as usize / 16] += 1;
        }
    }
    let n = img.area() as f64;
    counts
        .iter()
        .flat_map(|ch| ch.iter().map(move |&k| k as f64 / n))
        .collect()
}

/// Per channel: mean, population standard deviation, and the sign-preserving
/// cube root of the third central moment. Order: (mean, std, skew) for R, G, B.
pub fn color_moments(img: &Image) -> Vec<f64> {
    let n = img.area() as f64;
    let mut out = Vec::with_capacity(9);
    for c in 0..3 {
        let samples = || img.data().iter().skip(c).step_by(3).map(|&v| v as f64);
        let mean = samples().sum::<f64>() / n;
        let (m2, m3) = samples().fold((0.0, 0.0), |(m2, m3), v| {
            let d = v - mean;
            (m2 + d * d, m3 + d * d * d)
        });
        out.extend([mean, (m2 / n).sqrt(), (m3 / n).cbrt()]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_bin_mass() {
        let h = color_histogram(&Image::filled(3, 3, [255, 0, 0]).unwrap());
        let mut expected = vec![0.0; 48];
        expected[15] = 1.0;
        expected[16] = 1.0;
        expected[32] = 1.0;
        assert_eq!(h, expected);
    }

    #[test]
    fn two_pixel_red() {
        let h = color_histogram(&Image::new(2, 1, vec![0, 0, 0, 255, 0, 0]).unwrap());
        assert_eq!((h[0], h[15]), (0.5, 0.5));
    }

    #[test]
    fn ramp_fills_every_bin() {
        let img = Image::from_fn(256, 1, |x, _| [x as u8, 0, 0]).unwrap();
        let h = color_histogram(&img);
        assert!(h[..16].iter().all(|&v| v == 1.0 / 16.0));
    }

    #[test]
    fn constant_moments() {
        let m = color_moments(&Image::filled(4, 2, [10, 20, 30]).unwrap());
        assert_eq!(m, vec![10.0, 0.0, 0.0, 20.0, 0.0, 0.0, 30.0, 0.0, 0.0]);
    }

    #[test]
    fn symmetric_two_point() {
        let m = color_moments(&Image::new(2, 1, vec![0, 0, 0, 255, 0, 0]).unwrap());
        assert_eq!(&m[..3], &[127.5, 127.5, 0.0]);
    }

    #[test]
    fn three_point_skewed() {
        // Hand computation: mean 85, deviations (-85, -85, 170).
        let m = color_moments(&Image::new(3, 1, vec![0, 0, 0, 0, 0, 0, 255, 0, 0]).unwrap());
        let std = ((2.0 * 85f64.powi(2) + 170f64.powi(2)) / 3.0).sqrt();
        let third = (2.0 * (-85f64).powi(3) + 170f64.powi(3)) / 3.0;
        assert_eq!(m[0], 85.0);
        assert!((m[1] - std).abs() < 1e-12 && (m[1] - 120.208_152_8).abs() < 1e-6);
        assert!((m[2] - third.cbrt()).abs() < 1e-12);
        assert!((m[2] - 107.093_289).abs() < 1e-5, "{}", m[2]);
        assert!(m[2] > 0.0);
    }

    #[test]
    fn negative_skew_keeps_sign() {
        let m = color_moments(&Image::new(3, 1, vec![255, 0, 0, 255, 0, 0, 0, 0, 0]).unwrap());
        assert!(m[2] < 0.0);
    }
}
