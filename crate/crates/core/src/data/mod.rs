//! Samples, tiling recipes, edge labels, a synthetic generator and on-disk datasets.

mod edges;
mod io;
mod raster;
mod synth;
mod tiling;

pub use edges::{derive_edge_mask, dilate, erode, DEFAULT_EDGE_WIDTH};
pub use io::{
    read_mask, read_rgb, write_dataset, write_gray, write_mask, write_rgb, DatasetManifest, ManifestEntry,
    Split, MANIFEST_FILE, MASK_THRESHOLD,
};
pub use raster::{resize_bilinear, resize_mask, Raster};
pub use synth::{synth_generate, synth_sample, SynthSpec, SYNTH_EDGE_WIDTH};
pub use tiling::{prepare, tile, PreparedSet, Recipe, Tile, TileSpec, TileStrategy, MIN_TILE};

use crate::error::{Error, Result};
use crate::objective::Batch;
use crate::tensor::Tensor;

/// An RGB image with its road-area and road-edge labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: Raster,
    pub area: Raster,
    pub edge: Raster,
}

impl Sample {
    /// Checks shapes and binarity.
    pub fn new(image: Raster, area: Raster, edge: Raster) -> Result<Self> {
        if image.channels() != 3 || area.channels() != 1 || edge.channels() != 1 {
            return Err(Error::Shape(format!(
                "sample needs 3/1/1 channels, got {}/{}/{}",
                image.channels(),
                area.channels(),
                edge.channels()
            )));
        }
        if !image.same_extent(&area) || !image.same_extent(&edge) {
            return Err(Error::Shape(format!(
                "image {}x{} and masks {}x{}/{}x{} differ in size",
                image.height(),
                image.width(),
                area.height(),
                area.width(),
                edge.height(),
                edge.width()
            )));
        }
        if !area.is_binary() || !edge.is_binary() {
            return Err(Error::Config("masks must contain only 0 and 1".into()));
        }
        Ok(Self { image, area, edge })
    }

    /// Builds a sample whose edge label is derived from the area mask.
    pub fn with_derived_edge(image: Raster, area: Raster, k: usize) -> Result<Self> {
        let edge = derive_edge_mask(&area, k);
        Self::new(image, area, edge)
    }

    pub fn height(&self) -> usize {
        self.image.height()
    }

    pub fn width(&self) -> usize {
        self.image.width()
    }
}

/// Stacks samples of one size into a network batch.
pub fn to_batch<'a, I>(samples: I) -> Result<Batch>
where
    I: IntoIterator<Item = &'a Sample>,
{
    let samples: Vec<&Sample> = samples.into_iter().collect();
    let first = samples
        .first()
        .ok_or_else(|| Error::Empty("no samples to batch".into()))?;
    let (h, w) = (first.height(), first.width());
    let n = samples.len();
    let (mut img, mut area, mut edge) = (
        Vec::with_capacity(n * 3 * h * w),
        Vec::with_capacity(n * h * w),
        Vec::with_capacity(n * h * w),
    );
    for s in &samples {
        if s.height() != h || s.width() != w {
            return Err(Error::Shape(format!(
                "cannot batch {}x{} with {h}x{w}",
                s.height(),
                s.width()
            )));
        }
        img.extend(s.image.to_planes());
        area.extend(s.area.to_planes());
        edge.extend(s.edge.to_planes());
    }
    Ok(Batch {
        images: Tensor::from_vec([n, 3, h, w], img)?,
        area: Tensor::from_vec([n, 1, h, w], area)?,
        edge: Tensor::from_vec([n, 1, h, w], edge)?,
    })
}
