//! Rasters, decoding, resizing, patch tiling and training-set augmentation.
//!
//! All rasters are row-major; colour images are interleaved RGB.

use std::io::Cursor;
use std::path::Path;

use image::{ImageFormat, ImageReader};

use crate::{ClassId, Error, Result};

/// Side length of a network input patch.
pub const PATCH_SIDE: usize = 256;
/// Stride between neighbouring patch windows.
pub const PATCH_STRIDE: usize = 128;

/// 8-bit RGB raster.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

/// 8-bit single-channel raster.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

/// Axis-aligned rectangle in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl Rect {
    pub fn area(&self) -> usize {
        self.w * self.h
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x && x < self.x + self.w && y >= self.y && y < self.y + self.h
    }
}

/// A 256×256 network input cut from an ROI image.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub image: Image,
    /// Window position mapped back into the (un-resized) ROI's coordinates.
    pub source_rect: Rect,
}

fn check_dims(width: usize, height: usize, len: usize, channels: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidInput(format!(
            "image dimensions must be positive, got {width}x{height}"
        )));
    }
    if width * height * channels != len {
        return Err(Error::InvalidInput(format!(
            "{width}x{height}x{channels} raster needs {} samples, got {len}",
            width * height * channels
        )));
    }
    Ok(())
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        check_dims(width, height, data.len(), 3)?;
        Ok(Image {
            width,
            height,
            data,
        })
    }

    /// Image filled with a single colour.
    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        let data = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Self::new(width, height, data)
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [u8; 3]) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    /// Expands a gray raster to three identical channels.
    pub fn from_gray(gray: &GrayImage) -> Self {
        let data = gray.data.iter().flat_map(|&v| [v, v, v]).collect();
        Image {
            width: gray.width,
            height: gray.height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn area(&self) -> usize {
        self.width * self.height
    }

    /// Sub-image covering `rect`, which must lie inside the image.
    pub fn crop(&self, rect: Rect) -> Result<Image> {
        if rect.w == 0 || rect.h == 0 || rect.x + rect.w > self.width || rect.y + rect.h > self.height {
            return Err(Error::InvalidInput(format!(
                "crop {rect:?} outside {}x{} image",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(rect.w * rect.h * 3);
        for y in rect.y..rect.y + rect.h {
            let start = (y * self.width + rect.x) * 3;
            data.extend_from_slice(&self.data[start..start + rect.w * 3]);
        }
        Ok(Image {
            width: rect.w,
            height: rect.h,
            data,
        })
    }

    /// Rotates 90° clockwise; the result is `height × width`.
    pub fn rotate90(&self) -> Image {
        let (w, h) = (self.width, self.height);
        let mut data = Vec::with_capacity(self.data.len());
        for y in 0..w {
            for x in 0..h {
                data.extend_from_slice(&self.pixel(y, h - 1 - x));
            }
        }
        Image {
            width: h,
            height: w,
            data,
        }
    }

    pub fn flip_horizontal(&self) -> Image {
        let mut data = Vec::with_capacity(self.data.len());
        for y in 0..self.height {
            for x in (0..self.width).rev() {
                data.extend_from_slice(&self.pixel(x, y));
            }
        }
        Image {
            width: self.width,
            height: self.height,
            data,
        }
    }

    /// Encodes as PNG.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        image::save_buffer_with_format(
            path,
            &self.data,
            self.width as u32,
            self.height as u32,
            image::ExtendedColorType::Rgb8,
            ImageFormat::Png,
        )
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::InvalidInput(other.to_string()),
        })
    }
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        check_dims(width, height, data.len(), 1)?;
        Ok(GrayImage {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn resize_bilinear(&self, new_w: usize, new_h: usize) -> Result<GrayImage> {
        check_target(new_w, new_h)?;
        let data = resize_samples(&self.data, self.width, self.height, 1, new_w, new_h);
        Ok(GrayImage {
            width: new_w,
            height: new_h,
            data,
        })
    }
}

/// Decodes a PNG or JPEG file into RGB; gray sources are expanded to three channels.
pub fn load_image(path: &Path) -> Result<Image> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_image(&bytes).map_err(|reason| Error::ImageDecode {
        path: path.to_path_buf(),
        reason,
    })
}

/// Decodes an in-memory PNG or JPEG.
pub fn decode_image(bytes: &[u8]) -> std::result::Result<Image, String> {
    let reader = ImageReader::new(Cursor::new(bytes))
        .with_guessed_format()
        .map_err(|e| e.to_string())?;
    match reader.format() {
        Some(ImageFormat::Png) | Some(ImageFormat::Jpeg) => {}
        Some(other) => return Err(format!("unsupported format {other:?}")),
        None => return Err("unrecognized format".into()),
    }
    let rgb = reader.decode().map_err(|e| e.to_string())?.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    if w == 0 || h == 0 {
        return Err("zero-dimension image".into());
    }
    Ok(Image {
        width: w,
        height: h,
        data: rgb.into_raw(),
    })
}

/// BT.601 luma: `round(0.299 R + 0.587 G + 0.114 B)`.
pub fn to_grayscale(img: &Image) -> GrayImage {
    let data = img
        .data
        .chunks_exact(3)
        .map(|p| {
            let l = 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64;
            l.round().clamp(0.0, 255.0) as u8
        })
        .collect();
    GrayImage {
        width: img.width,
        height: img.height,
        data,
    }
}

fn check_target(new_w: usize, new_h: usize) -> Result<()> {
    if new_w == 0 || new_h == 0 {
        return Err(Error::InvalidInput(format!(
            "resize target must be positive, got {new_w}x{new_h}"
        )));
    }
    Ok(())
}

/// Bilinear resize with half-pixel centres.
pub fn resize_bilinear(img: &Image, new_w: usize, new_h: usize) -> Result<Image> {
    check_target(new_w, new_h)?;
    if (new_w, new_h) == (img.width, img.height) {
        return Ok(img.clone());
    }
    let data = resize_samples(&img.data, img.width, img.height, 3, new_w, new_h);
    Ok(Image {
        width: new_w,
        height: new_h,
        data,
    })
}

/// Source taps for each output coordinate: (lower index, upper index, upper weight).
fn taps(src_len: usize, dst_len: usize) -> Vec<(usize, usize, f64)> {
    let scale = src_len as f64 / dst_len as f64;
    (0..dst_len)
        .map(|d| {
            let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (src_len - 1) as f64);
            let lo = s.floor() as usize;
            let hi = (lo + 1).min(src_len - 1);
            (lo, hi, s - lo as f64)
        })
        .collect()
}

fn resize_samples(src: &[u8], w: usize, h: usize, ch: usize, nw: usize, nh: usize) -> Vec<u8> {
    let xs = taps(w, nw);
    let ys = taps(h, nh);
    let mut out = Vec::with_capacity(nw * nh * ch);
    for &(y0, y1, fy) in &ys {
        let row0 = &src[y0 * w * ch..(y0 + 1) * w * ch];
        let row1 = &src[y1 * w * ch..(y1 + 1) * w * ch];
        for &(x0, x1, fx) in &xs {
            for c in 0..ch {
                let top = row0[x0 * ch + c] as f64 * (1.0 - fx) + row0[x1 * ch + c] as f64 * fx;
                let bot = row1[x0 * ch + c] as f64 * (1.0 - fx) + row1[x1 * ch + c] as f64 * fx;
                let v = top * (1.0 - fy) + bot * fy;
                out.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    out
}

fn window_origins(len: usize) -> Vec<usize> {
    let mut origins: Vec<usize> = (0..)
        .step_by(PATCH_STRIDE)
        .take_while(|&o| o + PATCH_SIDE <= len)
        .collect();
    let flush = len.saturating_sub(PATCH_SIDE);
    if origins.last() != Some(&flush) {
        origins.push(flush);
    }
    origins
}

/// Dimensions after scaling the shorter side to 256 (longer side rounded).
pub fn patch_canvas_dims(w: usize, h: usize) -> (usize, usize) {
    let scale_long = |long: usize, short: usize| (2 * long * PATCH_SIDE + short) / (2 * short);
    if w <= h {
        (PATCH_SIDE, scale_long(h, w))
    } else {
        (scale_long(w, h), PATCH_SIDE)
    }
}

/// Tiles the image into 256×256 windows.
///
/// The image is first resized so its shorter side is 256; windows step by 128
/// along each axis with an extra window flush against each far edge.
pub fn extract_patches(img: &Image) -> Vec<Patch> {
    let (cw, ch) = patch_canvas_dims(img.width, img.height);
    let canvas = resize_bilinear(img, cw, ch).expect("canvas dims are positive");
    let (sx, sy) = (img.width as f64 / cw as f64, img.height as f64 / ch as f64);
    let to_roi = |org: usize, scale: f64, limit: usize| {
        let a = ((org as f64 * scale).floor() as usize).min(limit - 1);
        let b = (((org + PATCH_SIDE) as f64 * scale).ceil() as usize).clamp(a + 1, limit);
        (a, b - a)
    };

    let mut patches = Vec::new();
    for &oy in &window_origins(ch) {
        for &ox in &window_origins(cw) {
            let rect = Rect {
                x: ox,
                y: oy,
                w: PATCH_SIDE,
                h: PATCH_SIDE,
            };
            let (rx, rw) = to_roi(ox, sx, img.width);
            let (ry, rh) = to_roi(oy, sy, img.height);
            patches.push(Patch {
                image: canvas.crop(rect).expect("window inside canvas"),
                source_rect: Rect {
                    x: rx,
                    y: ry,
                    w: rw,
                    h: rh,
                },
            });
        }
    }
    patches
}

/// The eight dihedral variants of `img`, each paired with `label`.
///
/// Order: for each rotation 0°, 90°, 180°, 270° (clockwise), the rotated image
/// followed by its horizontal flip. Element 0 is the original.
pub fn augment(img: &Image, label: ClassId) -> Vec<(Image, ClassId)> {
    let mut out = Vec::with_capacity(8);
    let mut current = img.clone();
    for _ in 0..4 {
        let flipped = current.flip_horizontal();
        let next = current.rotate90();
        out.push((current, label));
        out.push((flipped, label));
        current = next;
    }
    out
}
