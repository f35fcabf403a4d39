//! Page preprocessing: loading, border crop, max-dimension resize, Otsu
//! binarization and projection-profile rotation correction.
//!
//! Every operation takes an image by reference and returns a new one.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma};

use crate::error::{Error, Result};

pub const DEFAULT_CROP_MARGIN: usize = 42;
pub const DEFAULT_RESIZE_TARGET: usize = 2000;

/// Row-major 8-bit grayscale image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if width * height != pixels.len() {
            return Err(Error::DimensionMismatch {
                expected: width * height,
                found: pixels.len(),
            });
        }
        Ok(GrayImage {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self> {
        GrayImage::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        GrayImage::new(width, height, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    pub fn histogram(&self) -> [u64; 256] {
        let mut h = [0u64; 256];
        for &p in &self.pixels {
            h[p as usize] += 1;
        }
        h
    }

    /// Lower median intensity.
    pub fn median(&self) -> u8 {
        let h = self.histogram();
        let half = (self.pixels.len() as u64).div_ceil(2);
        let mut acc = 0;
        for (v, &c) in h.iter().enumerate() {
            acc += c;
            if acc >= half {
                return v as u8;
            }
        }
        255
    }
}

/// Row-major boolean mask, `true` marks foreground (ink).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryImage {
    width: usize,
    height: usize,
    pixels: Vec<bool>,
}

impl BinaryImage {
    pub fn new(width: usize, height: usize, pixels: Vec<bool>) -> Result<Self> {
        if width * height != pixels.len() {
            return Err(Error::DimensionMismatch {
                expected: width * height,
                found: pixels.len(),
            });
        }
        Ok(BinaryImage {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[bool] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.pixels[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.pixels.iter().filter(|&&p| p).count()
    }

    /// Dilation with a (2r+1)×(2r+1) square, done as two separable passes.
    pub fn dilate(&self, r: usize) -> BinaryImage {
        if r == 0 {
            return self.clone();
        }
        let (w, h) = (self.width, self.height);
        let mut horiz = vec![false; w * h];
        for y in 0..h {
            let row = &self.pixels[y * w..(y + 1) * w];
            for x in 0..w {
                let lo = x.saturating_sub(r);
                let hi = (x + r).min(w - 1);
                horiz[y * w + x] = row[lo..=hi].iter().any(|&p| p);
            }
        }
        let mut out = vec![false; w * h];
        for y in 0..h {
            let lo = y.saturating_sub(r);
            let hi = (y + r).min(h - 1);
            for x in 0..w {
                out[y * w + x] = (lo..=hi).any(|yy| horiz[yy * w + x]);
            }
        }
        BinaryImage {
            width: w,
            height: h,
            pixels: out,
        }
    }
}

/// ITU-R BT.601 luma, rounded to nearest.
#[inline]
fn luma601(r: u8, g: u8, b: u8) -> u8 {
    (0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64).round() as u8
}

/// Decodes a raster file into 8-bit gray. Color input goes through BT.601 luma.
pub fn load_gray(path: &Path) -> Result<GrayImage> {
    let img = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::ImageDecode {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    })?;
    from_dynamic(img)
}

pub fn from_dynamic(img: DynamicImage) -> Result<GrayImage> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let pixels = match img {
        DynamicImage::ImageLuma8(buf) => buf.into_raw(),
        DynamicImage::ImageLumaA8(_) | DynamicImage::ImageLuma16(_) | DynamicImage::ImageLumaA16(_) => {
            img.to_luma8().into_raw()
        }
        other => other
            .to_rgb8()
            .pixels()
            .map(|p| luma601(p[0], p[1], p[2]))
            .collect(),
    };
    GrayImage::new(w, h, pixels)
}

/// Writes a lossless PNG.
pub fn save_png(img: &GrayImage, path: &Path) -> Result<()> {
    let buf: ImageBuffer<Luma<u8>, Vec<u8>> =
        ImageBuffer::from_raw(img.width as u32, img.height as u32, img.pixels.clone())
            .ok_or_else(|| Error::Internal("image buffer size".into()))?;
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::ImageEncode {
                path: path.to_path_buf(),
                message: other.to_string(),
            },
        })
}

/// Removes `margin` pixels from each side.
pub fn crop_border(img: &GrayImage, margin: usize) -> Result<GrayImage> {
    if margin == 0 {
        return Ok(img.clone());
    }
    if img.width <= 2 * margin || img.height <= 2 * margin {
        return Err(Error::ImageTooSmall {
            width: img.width,
            height: img.height,
            requirement: format!("both sides must exceed {} to crop {margin} per border", 2 * margin),
        });
    }
    let (w, h) = (img.width - 2 * margin, img.height - 2 * margin);
    let mut pixels = Vec::with_capacity(w * h);
    for y in margin..margin + h {
        let start = y * img.width + margin;
        pixels.extend_from_slice(&img.pixels[start..start + w]);
    }
    GrayImage::new(w, h, pixels)
}

/// Downscales so that the larger side equals `target`; smaller images are
/// returned unchanged.
pub fn resize_max_dim(img: &GrayImage, target: usize) -> Result<GrayImage> {
    if target == 0 {
        return Err(Error::InvalidArgument("resize target must be >= 1".into()));
    }
    let major = img.width.max(img.height);
    if major <= target {
        return Ok(img.clone());
    }
    let scale = target as f64 / major as f64;
    let scaled = |d: usize| {
        if d == major {
            target
        } else {
            ((d as f64 * scale).round() as usize).max(1)
        }
    };
    let (nw, nh) = (scaled(img.width), scaled(img.height));
    Ok(resize_area(img, nw, nh))
}

/// Per output cell, the source cells it overlaps and the overlap fractions
/// (normalized to sum to one).
fn area_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let ratio = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let lo = o as f64 * ratio;
            let hi = ((o + 1) as f64 * ratio).min(src as f64);
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(src);
            let mut ws: Vec<(usize, f64)> = (first..last)
                .map(|s| {
                    let a = lo.max(s as f64);
                    let b = hi.min((s + 1) as f64);
                    (s, (b - a).max(0.0))
                })
                .filter(|&(_, w)| w > 0.0)
                .collect();
            let total: f64 = ws.iter().map(|&(_, w)| w).sum();
            for (_, w) in &mut ws {
                *w /= total;
            }
            ws
        })
        .collect()
}

/// Area-averaging resample to an arbitrary size.
pub fn resize_area(img: &GrayImage, nw: usize, nh: usize) -> GrayImage {
    let wx = area_weights(img.width, nw);
    let wy = area_weights(img.height, nh);
    let mut tmp = vec![0f64; nw * img.height];
    for y in 0..img.height {
        let row = &img.pixels[y * img.width..(y + 1) * img.width];
        for (x, ws) in wx.iter().enumerate() {
            tmp[y * nw + x] = ws.iter().map(|&(s, w)| row[s] as f64 * w).sum();
        }
    }
    let mut out = Vec::with_capacity(nw * nh);
    for ws in &wy {
        for x in 0..nw {
            let v: f64 = ws.iter().map(|&(s, w)| tmp[s * nw + x] * w).sum();
            out.push(v.round().clamp(0.0, 255.0) as u8);
        }
    }
    GrayImage {
        width: nw,
        height: nh,
        pixels: out,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OtsuResult {
    /// Pixels with intensity ≤ threshold are foreground.
    pub threshold: u8,
    pub foreground: BinaryImage,
    /// Set when the image has a single intensity; the foreground is then empty.
    pub degenerate: bool,
}

/// Between-class variance of the split `≤ t | > t`, kept as the exact
/// fraction `a² / b` with `a = S0·N − S·n0` and `b = n0·n1` (the true value
/// scaled by N²).
#[derive(Clone, Copy)]
struct SplitScore {
    quotient: u128,
    remainder: u128,
    denom: u128,
}

impl SplitScore {
    fn new(n0: u64, s0: u64, n: u64, s: u64) -> Self {
        let a = s0 as i128 * n as i128 - s as i128 * n0 as i128;
        let a2 = a.unsigned_abs() * a.unsigned_abs();
        let denom = n0 as u128 * (n - n0) as u128;
        SplitScore {
            quotient: a2 / denom,
            remainder: a2 % denom,
            denom,
        }
    }

    fn greater_than(&self, other: &SplitScore) -> bool {
        if self.quotient != other.quotient {
            return self.quotient > other.quotient;
        }
        self.remainder * other.denom > other.remainder * self.denom
    }
}

/// Otsu threshold from a 256-bin histogram; `None` when fewer than two
/// intensities are present. Ties resolve to the smallest threshold.
pub fn otsu_threshold(hist: &[u64; 256]) -> Option<u8> {
    let n: u64 = hist.iter().sum();
    let s: u64 = hist.iter().enumerate().map(|(v, &c)| v as u64 * c).sum();
    let mut best: Option<(u8, SplitScore)> = None;
    let (mut n0, mut s0) = (0u64, 0u64);
    for (t, &c) in hist.iter().enumerate().take(255) {
        n0 += c;
        s0 += t as u64 * c;
        if n0 == 0 || n0 == n {
            continue;
        }
        let score = SplitScore::new(n0, s0, n, s);
        if best.as_ref().is_none_or(|(_, b)| score.greater_than(b)) {
            best = Some((t as u8, score));
        }
    }
    best.map(|(t, _)| t)
}

pub fn otsu_binarize(img: &GrayImage) -> OtsuResult {
    match otsu_threshold(&img.histogram()) {
        Some(t) => OtsuResult {
            threshold: t,
            foreground: BinaryImage {
                width: img.width,
                height: img.height,
                pixels: img.pixels.iter().map(|&p| p <= t).collect(),
            },
            degenerate: false,
        },
        None => OtsuResult {
            threshold: img.pixels[0],
            foreground: BinaryImage {
                width: img.width,
                height: img.height,
                pixels: vec![false; img.pixels.len()],
            },
            degenerate: true,
        },
    }
}

pub const DESKEW_MAX_DEG: f64 = 10.0;
pub const DESKEW_STEP_DEG: f64 = 0.1;

/// Rotates content counterclockwise (as displayed) by `degrees` about the
/// image center, bilinear, uncovered area filled with `fill`.
pub fn rotate_bilinear(img: &GrayImage, degrees: f64, fill: u8) -> GrayImage {
    let (s, c) = degrees.to_radians().sin_cos();
    let cx = (img.width as f64 - 1.0) / 2.0;
    let cy = (img.height as f64 - 1.0) / 2.0;
    let (wmax, hmax) = (img.width as f64 - 1.0, img.height as f64 - 1.0);
    let mut out = Vec::with_capacity(img.pixels.len());
    for y in 0..img.height {
        let dy = y as f64 - cy;
        for x in 0..img.width {
            let dx = x as f64 - cx;
            // inverse of p' = R p with y pointing down
            let sx = c * dx + s * dy + cx;
            let sy = -s * dx + c * dy + cy;
            if sx < 0.0 || sy < 0.0 || sx > wmax || sy > hmax {
                out.push(fill);
                continue;
            }
            let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(img.width - 1), (y0 + 1).min(img.height - 1));
            let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
            let p = |xx: usize, yy: usize| img.get(xx, yy) as f64;
            let top = p(x0, y0) + fx * (p(x1, y0) - p(x0, y0));
            let bot = p(x0, y1) + fx * (p(x1, y1) - p(x0, y1));
            out.push((top + fy * (bot - top)).round().clamp(0.0, 255.0) as u8);
        }
    }
    GrayImage {
        width: img.width,
        height: img.height,
        pixels: out,
    }
}

/// Sum of squared row counts of the foreground after rotating by `degrees`.
/// With a fixed bin range and fixed foreground mass this orders angles the
/// same way as the variance of the projection profile.
fn projection_energy(points: &[(f64, f64)], degrees: f64, offset: f64, bins: &mut [u64]) -> u128 {
    bins.iter_mut().for_each(|b| *b = 0);
    let (s, c) = degrees.to_radians().sin_cos();
    for &(dx, dy) in points {
        let row = (s * dx + c * dy + offset).round() as usize;
        bins[row] += 1;
    }
    bins.iter().map(|&b| b as u128 * b as u128).sum()
}

/// Finds the rotation in ±10° (0.1° steps) maximizing the horizontal
/// projection-profile variance of the Otsu foreground and applies it.
/// Returns `(0.0, unchanged)` when binarization is degenerate.
pub fn deskew_projection(img: &GrayImage) -> (f64, GrayImage) {
    let otsu = otsu_binarize(img);
    if otsu.degenerate {
        return (0.0, img.clone());
    }
    let cx = (img.width as f64 - 1.0) / 2.0;
    let cy = (img.height as f64 - 1.0) / 2.0;
    let points: Vec<(f64, f64)> = otsu
        .foreground
        .pixels
        .iter()
        .enumerate()
        .filter(|(_, &f)| f)
        .map(|(i, _)| ((i % img.width) as f64 - cx, (i / img.width) as f64 - cy))
        .collect();
    let offset = (cx * cx + cy * cy).sqrt().ceil() + 1.0;
    let mut bins = vec![0u64; 2 * offset as usize + 2];

    let steps = (DESKEW_MAX_DEG / DESKEW_STEP_DEG).round() as i32;
    // visit 0, +1, -1, +2, -2, ... so ties prefer the smallest correction
    let mut best = (0i32, projection_energy(&points, 0.0, offset, &mut bins));
    for k in 1..=steps {
        for i in [k, -k] {
            let e = projection_energy(&points, i as f64 * DESKEW_STEP_DEG, offset, &mut bins);
            if e > best.1 {
                best = (i, e);
            }
        }
    }
    if best.0 == 0 {
        return (0.0, img.clone());
    }
    let angle = best.0 as f64 * DESKEW_STEP_DEG;
    (angle, rotate_bilinear(img, angle, img.median()))
}
