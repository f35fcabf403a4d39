//! Circular local binary patterns at a single radius.

use crate::error::{Error, Result};
use crate::preprocess::{BinaryImage, GrayImage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    #[default]
    Bilinear,
    Nearest,
}

/// LBP codes over the valid region of an image, i.e. pixels at distance
/// ≥ `radius` from every border. `width`/`height` are the valid-region
/// dimensions; code `(x, y)` belongs to source pixel `(x + radius, y + radius)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeMap {
    pub radius: usize,
    pub width: usize,
    pub height: usize,
    pub codes: Vec<u8>,
}

impl CodeMap {
    pub fn source_dims(&self) -> (usize, usize) {
        (self.width + 2 * self.radius, self.height + 2 * self.radius)
    }
}

/// One circle sample, relative to the center pixel.
#[derive(Debug, Clone, Copy)]
struct Tap {
    dx0: isize,
    dy0: isize,
    dx1: isize,
    dy1: isize,
    fx: f64,
    fy: f64,
}

fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < 1e-9 {
        r
    } else {
        v
    }
}

/// Sample positions for `neighbors` points at angles `k·360°/neighbors`,
/// counterclockwise from the positive x axis (image y grows downward).
fn taps(radius: usize, neighbors: usize, interp: Interpolation) -> Vec<Tap> {
    (0..neighbors)
        .map(|k| {
            let theta = std::f64::consts::TAU * k as f64 / neighbors as f64;
            let dx = snap(radius as f64 * theta.cos());
            let dy = snap(-(radius as f64) * theta.sin());
            match interp {
                Interpolation::Nearest => {
                    let (x, y) = (dx.round() as isize, dy.round() as isize);
                    Tap { dx0: x, dy0: y, dx1: x, dy1: y, fx: 0.0, fy: 0.0 }
                }
                Interpolation::Bilinear => {
                    let (x0, y0) = (dx.floor(), dy.floor());
                    let (fx, fy) = (dx - x0, dy - y0);
                    let (x0, y0) = (x0 as isize, y0 as isize);
                    Tap {
                        dx0: x0,
                        dy0: y0,
                        dx1: if fx > 0.0 { x0 + 1 } else { x0 },
                        dy1: if fy > 0.0 { y0 + 1 } else { y0 },
                        fx,
                        fy,
                    }
                }
            }
        })
        .collect()
}

pub fn lbp_code_map(img: &GrayImage, radius: usize, interp: Interpolation) -> Result<CodeMap> {
    lbp_code_map_with(img, radius, 8, interp)
}

/// Bit `k` is set iff neighbor `k` ≥ center. The comparison is made on
/// differences to the center so that adding a constant to every pixel cannot
/// change a code.
pub fn lbp_code_map_with(
    img: &GrayImage,
    radius: usize,
    neighbors: usize,
    interp: Interpolation,
) -> Result<CodeMap> {
    if radius == 0 {
        return Err(Error::InvalidArgument("LBP radius must be >= 1".into()));
    }
    if !(1..=8).contains(&neighbors) {
        return Err(Error::InvalidArgument(format!(
            "LBP neighbors must be in 1..=8, got {neighbors}"
        )));
    }
    let (w, h) = (img.width(), img.height());
    if w <= 2 * radius || h <= 2 * radius {
        return Err(Error::ImageTooSmall {
            width: w,
            height: h,
            requirement: format!("LBP radius {radius} needs both sides > {}", 2 * radius),
        });
    }
    let taps = taps(radius, neighbors, interp);
    let px = img.pixels();
    let (vw, vh) = (w - 2 * radius, h - 2 * radius);
    let mut codes = Vec::with_capacity(vw * vh);
    let off = |dx: isize, dy: isize| dy * w as isize + dx;
    let lin: Vec<[isize; 4]> = taps
        .iter()
        .map(|t| {
            [
                off(t.dx0, t.dy0),
                off(t.dx1, t.dy0),
                off(t.dx0, t.dy1),
                off(t.dx1, t.dy1),
            ]
        })
        .collect();
    for y in radius..h - radius {
        let row = y * w;
        for x in radius..w - radius {
            let ci = (row + x) as isize;
            let c = px[ci as usize] as i32;
            let mut code = 0u8;
            for (k, (t, o)) in taps.iter().zip(&lin).enumerate() {
                let p = |i: usize| px[(ci + o[i]) as usize] as i32;
                let (a, b, cc, d) = (p(0), p(1), p(2), p(3));
                let top = (a - c) as f64 + t.fx * (b - a) as f64;
                let bottom = (cc - c) as f64 + t.fx * (d - cc) as f64;
                let v = top + t.fy * (bottom - top);
                if v >= 0.0 {
                    code |= 1 << k;
                }
            }
            codes.push(code);
        }
    }
    Ok(CodeMap {
        radius,
        width: vw,
        height: vh,
        codes,
    })
}

/// L1-normalized histogram; `empty` is set when nothing was pooled.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledHistogram {
    pub bins: Vec<f64>,
    pub empty: bool,
}

/// Global histogram of `codes` over `bins` bins, restricted to `mask` (given
/// in source-image coordinates) when present.
pub fn pool_histogram(codes: &CodeMap, mask: Option<&BinaryImage>, bins: usize) -> Result<PooledHistogram> {
    let mut counts = vec![0u64; bins];
    match mask {
        None => {
            for &c in &codes.codes {
                counts[c as usize] += 1;
            }
        }
        Some(m) => {
            let (sw, sh) = codes.source_dims();
            if (m.width(), m.height()) != (sw, sh) {
                return Err(Error::DimensionMismatch {
                    expected: sw * sh,
                    found: m.width() * m.height(),
                });
            }
            let r = codes.radius;
            for y in 0..codes.height {
                for x in 0..codes.width {
                    if m.get(x + r, y + r) {
                        counts[codes.codes[y * codes.width + x] as usize] += 1;
                    }
                }
            }
        }
    }
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Ok(PooledHistogram {
            bins: vec![0.0; bins],
            empty: true,
        });
    }
    let inv = total as f64;
    Ok(PooledHistogram {
        bins: counts.iter().map(|&c| c as f64 / inv).collect(),
        empty: false,
    })
}
