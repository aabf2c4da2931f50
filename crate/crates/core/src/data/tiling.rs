//! Cropping large rasters into training tiles and the per-dataset recipes.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::raster::{resize_bilinear, resize_mask, Raster};
use crate::error::{Error, Result};

/// Smallest legal crop or resize target.
pub const MIN_TILE: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TileStrategy {
    /// Non-overlapping crops with stride equal to the crop size.
    Grid,
    /// `count` crops at uniform top-left offsets.
    Random,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileSpec {
    pub crop_size: usize,
    pub resize_to: Option<usize>,
    pub strategy: TileStrategy,
    pub count: usize,
    pub seed: u64,
}

impl TileSpec {
    pub fn validate(&self) -> Result<()> {
        if self.crop_size < MIN_TILE {
            return Err(Error::Config(format!("crop size {} below {MIN_TILE}", self.crop_size)));
        }
        if let Some(r) = self.resize_to {
            if r < MIN_TILE {
                return Err(Error::Config(format!("resize target {r} below {MIN_TILE}")));
            }
        }
        Ok(())
    }
}

/// A crop and where it came from in the source raster.
#[derive(Clone, Debug, PartialEq)]
pub struct Tile {
    pub row: usize,
    pub col: usize,
    pub image: Raster,
    pub mask: Raster,
}

fn check_pair(image: &Raster, mask: &Raster, crop: usize) -> Result<()> {
    if !image.same_extent(mask) {
        return Err(Error::Shape(format!(
            "image {}x{} and mask {}x{} differ",
            image.height(),
            image.width(),
            mask.height(),
            mask.width()
        )));
    }
    if image.height() < crop || image.width() < crop {
        return Err(Error::Shape(format!(
            "{}x{} raster is smaller than crop {crop}",
            image.height(),
            image.width()
        )));
    }
    Ok(())
}

fn grid_offsets(h: usize, w: usize, crop: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for row in (0..=h - crop).step_by(crop) {
        for col in (0..=w - crop).step_by(crop) {
            out.push((row, col));
        }
    }
    out
}

fn random_offset(rng: &mut ChaCha8Rng, h: usize, w: usize, crop: usize) -> (usize, usize) {
    (rng.random_range(0..=h - crop), rng.random_range(0..=w - crop))
}

fn cut(image: &Raster, mask: &Raster, row: usize, col: usize, spec: &TileSpec) -> Result<Tile> {
    let c = spec.crop_size;
    let mut img = image.crop(row, col, c, c)?;
    let mut m = mask.crop(row, col, c, c)?;
    if let Some(r) = spec.resize_to {
        img = resize_bilinear(&img, r, r)?;
        m = resize_mask(&m, r, r)?;
    }
    Ok(Tile {
        row,
        col,
        image: img,
        mask: m,
    })
}

/// Crops `image` and `mask` at identical offsets.
pub fn tile(image: &Raster, mask: &Raster, spec: &TileSpec) -> Result<Vec<Tile>> {
    spec.validate()?;
    check_pair(image, mask, spec.crop_size)?;
    let (h, w, c) = (image.height(), image.width(), spec.crop_size);
    let offsets = match spec.strategy {
        TileStrategy::Grid => grid_offsets(h, w, c),
        TileStrategy::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            (0..spec.count).map(|_| random_offset(&mut rng, h, w, c)).collect()
        }
    };
    offsets
        .into_iter()
        .map(|(r, col)| cut(image, mask, r, col, spec))
        .collect()
}

/// Tiling geometry and split sizes for one benchmark dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Recipe {
    pub name: &'static str,
    pub crop_size: usize,
    pub resize_to: Option<usize>,
    pub strategy: TileStrategy,
    pub train: usize,
    pub test: usize,
    /// Discard tiles whose mask has no road pixel.
    pub drop_empty: bool,
}

impl Recipe {
    pub const MUNICH: Recipe = Recipe {
        name: "munich",
        crop_size: 512,
        resize_to: Some(256),
        strategy: TileStrategy::Random,
        train: 484,
        test: 49,
        drop_empty: false,
    };
    pub const MASSACHUSETTS: Recipe = Recipe {
        name: "massachusetts",
        crop_size: 256,
        resize_to: None,
        strategy: TileStrategy::Random,
        train: 5400,
        test: 600,
        drop_empty: false,
    };
    pub const LOVEDA: Recipe = Recipe {
        name: "loveda",
        crop_size: 1024,
        resize_to: Some(512),
        strategy: TileStrategy::Grid,
        train: 976,
        test: 294,
        drop_empty: true,
    };
    pub const ALL: [Recipe; 3] = [Recipe::MUNICH, Recipe::MASSACHUSETTS, Recipe::LOVEDA];

    pub fn by_name(name: &str) -> Result<Recipe> {
        Recipe::ALL
            .into_iter()
            .find(|r| r.name.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::Config(format!("unknown recipe {name:?}")))
    }

    pub fn total(&self) -> usize {
        self.train + self.test
    }

    /// Side length of the prepared tiles.
    pub fn output_size(&self) -> usize {
        self.resize_to.unwrap_or(self.crop_size)
    }

    /// Train share of `n` tiles, keeping the recipe's ratio.
    pub fn train_share(&self, n: usize) -> usize {
        if n == self.total() {
            return self.train;
        }
        ((n * self.train) as f64 / self.total() as f64).round() as usize
    }
}

#[derive(Clone, Debug, Default)]
pub struct PreparedSet {
    pub train: Vec<Tile>,
    pub test: Vec<Tile>,
}

/// Applies a recipe to a set of source rasters.
///
/// Random recipes draw `count` tiles (the recipe total by default), each
/// from a uniformly chosen source at a uniform offset. Grid recipes use
/// every full tile of every source. Tiles are then split train-first in
/// the recipe's ratio.
pub fn prepare(
    recipe: &Recipe,
    sources: &[(Raster, Raster)],
    count: Option<usize>,
    seed: u64,
) -> Result<PreparedSet> {
    if sources.is_empty() {
        return Err(Error::Empty("no source rasters".into()));
    }
    let spec = TileSpec {
        crop_size: recipe.crop_size,
        resize_to: recipe.resize_to,
        strategy: recipe.strategy,
        count: count.unwrap_or(recipe.total()),
        seed,
    };
    spec.validate()?;
    for (img, mask) in sources {
        check_pair(img, mask, spec.crop_size)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tiles = Vec::new();
    match recipe.strategy {
        TileStrategy::Random => {
            for _ in 0..spec.count {
                let (img, mask) = &sources[rng.random_range(0..sources.len())];
                let (r, c) = random_offset(&mut rng, img.height(), img.width(), spec.crop_size);
                tiles.push(cut(img, mask, r, c, &spec)?);
            }
        }
        TileStrategy::Grid => {
            for (img, mask) in sources {
                tiles.extend(tile(img, mask, &spec)?);
            }
            tiles.shuffle(&mut rng);
            if let Some(n) = count {
                tiles.truncate(n);
            }
        }
    }
    if recipe.drop_empty {
        tiles.retain(|t| t.mask.any_positive());
    }
    let n_train = recipe.train_share(tiles.len());
    let test = tiles.split_off(n_train);
    Ok(PreparedSet { train: tiles, test })
}
