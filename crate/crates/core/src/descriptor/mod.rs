//! Page-level texture descriptors.
//!
//! The default descriptor concatenates one L1-normalized 256-bin LBP
//! histogram per radius, radii 1 through 12, for 3072 dimensions in total.

mod lbp;
mod store;

pub use lbp::{lbp_code_map, lbp_code_map_with, pool_histogram, CodeMap, Interpolation, PooledHistogram};
pub use store::{read_vectors, write_vectors, VectorSet, DESC_MAGIC};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::{otsu_binarize, BinaryImage, GrayImage};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LbpConfig {
    pub radii: Vec<usize>,
    pub neighbors: usize,
    /// Pool only over the dilated Otsu foreground.
    pub use_mask: bool,
    pub mask_dilation: usize,
    pub interpolation: Interpolation,
}

impl Default for LbpConfig {
    fn default() -> Self {
        LbpConfig {
            radii: (1..=12).collect(),
            neighbors: 8,
            use_mask: false,
            mask_dilation: 3,
            interpolation: Interpolation::Bilinear,
        }
    }
}

impl LbpConfig {
    pub fn with_radii(radii: impl Into<Vec<usize>>) -> Self {
        LbpConfig {
            radii: radii.into(),
            ..Default::default()
        }
    }

    pub fn bins(&self) -> usize {
        1 << self.neighbors
    }

    pub fn dim(&self) -> usize {
        self.radii.len() * self.bins()
    }

    pub fn max_radius(&self) -> usize {
        self.radii.last().copied().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.radii.is_empty() {
            return Err(Error::InvalidArgument("LBP radii must be non-empty".into()));
        }
        if self.radii[0] == 0 || self.radii.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(
                "LBP radii must be >= 1 and strictly increasing".into(),
            ));
        }
        if !(1..=8).contains(&self.neighbors) {
            return Err(Error::InvalidArgument("LBP neighbors must be in 1..=8".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextureDescriptor {
    pub image_id: String,
    pub values: Vec<f64>,
    pub slice_len: usize,
    /// One flag per radius; an empty slice is all zeros.
    pub empty_slices: Vec<bool>,
}

impl TextureDescriptor {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn slices(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.slice_len)
    }
}

fn pooling_mask(img: &GrayImage, cfg: &LbpConfig) -> Option<BinaryImage> {
    cfg.use_mask
        .then(|| otsu_binarize(img).foreground.dilate(cfg.mask_dilation))
}

pub fn extract_descriptor(img: &GrayImage, cfg: &LbpConfig) -> Result<TextureDescriptor> {
    cfg.validate()?;
    let mask = pooling_mask(img, cfg);
    let bins = cfg.bins();
    let slices = cfg
        .radii
        .par_iter()
        .map(|&r| {
            let codes = lbp_code_map_with(img, r, cfg.neighbors, cfg.interpolation)?;
            pool_histogram(&codes, mask.as_ref(), bins)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut values = Vec::with_capacity(cfg.dim());
    let mut empty_slices = Vec::with_capacity(slices.len());
    for s in slices {
        values.extend_from_slice(&s.bins);
        empty_slices.push(s.empty);
    }
    Ok(TextureDescriptor {
        image_id: String::new(),
        values,
        slice_len: bins,
        empty_slices,
    })
}

/// A page descriptor method. The multi-radius LBP embedding is the only
/// built-in implementation.
pub trait DescriptorExtractor: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn extract(&self, img: &GrayImage) -> Result<TextureDescriptor>;
}

#[derive(Debug, Clone, Default)]
pub struct LbpExtractor {
    pub config: LbpConfig,
}

impl DescriptorExtractor for LbpExtractor {
    fn name(&self) -> &str {
        "lbp"
    }

    fn dim(&self) -> usize {
        self.config.dim()
    }

    fn extract(&self, img: &GrayImage) -> Result<TextureDescriptor> {
        extract_descriptor(img, &self.config)
    }
}
