use crate::imaging::GrayImage;

/// Neighbour offsets clockwise from the top-left; the first one is the most
/// significant bit.
const NEIGHBOURS: [(isize, isize); 8] = [(-1, -1), (0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0)];

/// 8-bit LBP code of interior pixel (x, y); a bit is set when the neighbour is
/// at least as bright as the centre.
#[inline]
pub fn lbp_code(gray: &GrayImage, x: usize, y: usize) -> u8 {
    let c = gray.get(x, y);
    NEIGHBOURS.iter().fold(0u8, |code, &(dx, dy)| {
        let n = gray.get((x as isize + dx) as usize, (y as isize + dy) as usize);
        (code << 1) | (n >= c) as u8
    })
}

/// Normalised 256-bin histogram of interior LBP codes. Images under 3×3 give zeros.
pub fn lbp_histogram(gray: &GrayImage) -> Vec<f64> {
    let (w, h) = (gray.width(), gray.height());
    let mut hist = vec![0.0; 256];
    if w < 3 || h < 3 {
        return hist;
    }
    let mut counts = [0u64; 256];
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            counts[lbp_code(gray, x, y) as usize] += 1;
        }
    }
    let n = ((w - 2) * (h - 2)) as f64;
    for (d, &c) in hist.iter_mut().zip(&counts) {
        *d = c as f64 / n;
    }
    hist
}
