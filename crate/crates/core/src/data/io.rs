//! PNG rasters and the dataset manifest.
//!
//! A dataset root holds `{train,test}/{images,masks,edges}/<name>.png` and a
//! `manifest.txt` whose non-comment lines are tab-separated
//! `split name image mask [edge]`, paths relative to the root.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::{GrayImage, RgbImage};

use super::edges::{derive_edge_mask, DEFAULT_EDGE_WIDTH};
use super::raster::Raster;
use super::Sample;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.txt";
/// 8-bit mask values at or above this are road.
pub const MASK_THRESHOLD: u8 = 128;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Parse(format!("unknown split {other:?}"))),
        }
    }
}

fn image_err(path: &Path) -> impl FnOnce(image::ImageError) -> Error + '_ {
    move |source| Error::Image {
        path: path.to_path_buf(),
        source,
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

/// Reads an RGB image scaled to `[0, 1]`.
pub fn read_rgb(path: &Path) -> Result<Raster> {
    let img = image::open(path).map_err(image_err(path))?.to_rgb8();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(|v| f32::from(v) / 255.0).collect();
    Raster::from_vec(h as usize, w as usize, 3, data)
}

/// Reads a grayscale mask, thresholded at [`MASK_THRESHOLD`].
pub fn read_mask(path: &Path) -> Result<Raster> {
    let img = image::open(path).map_err(image_err(path))?.to_luma8();
    let (w, h) = img.dimensions();
    let data = img
        .into_raw()
        .into_iter()
        .map(|v| if v >= MASK_THRESHOLD { 1.0 } else { 0.0 })
        .collect();
    Raster::from_vec(h as usize, w as usize, 1, data)
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn write_rgb(path: &Path, raster: &Raster) -> Result<()> {
    if raster.channels() != 3 {
        return Err(Error::Shape(format!("RGB write needs 3 channels, got {}", raster.channels())));
    }
    ensure_parent(path)?;
    let buf = RgbImage::from_raw(
        raster.width() as u32,
        raster.height() as u32,
        raster.data().iter().map(|&v| quantize(v)).collect(),
    )
    .ok_or_else(|| Error::Shape("raster buffer size".into()))?;
    buf.save(path).map_err(image_err(path))
}

/// Writes a single-channel raster with values in `[0, 1]` as 8-bit gray.
pub fn write_gray(path: &Path, raster: &Raster) -> Result<()> {
    if raster.channels() != 1 {
        return Err(Error::Shape(format!("gray write needs 1 channel, got {}", raster.channels())));
    }
    ensure_parent(path)?;
    let buf = GrayImage::from_raw(
        raster.width() as u32,
        raster.height() as u32,
        raster.data().iter().map(|&v| quantize(v)).collect(),
    )
    .ok_or_else(|| Error::Shape("raster buffer size".into()))?;
    buf.save(path).map_err(image_err(path))
}

/// Writes a binary mask as 0/255.
pub fn write_mask(path: &Path, mask: &Raster) -> Result<()> {
    write_gray(path, &mask.binarize(0.5))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub split: Split,
    pub name: String,
    pub image: PathBuf,
    pub mask: PathBuf,
    pub edge: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    /// Loads a manifest file, or `<dir>/manifest.txt` when given a directory.
    pub fn load(path: &Path) -> Result<Self> {
        let file = if path.is_dir() {
            path.join(MANIFEST_FILE)
        } else {
            path.to_path_buf()
        };
        let text = fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
        let root = file.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut entries = Vec::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if !(4..=5).contains(&cols.len()) {
                return Err(Error::Parse(format!(
                    "{}:{}: expected 4 or 5 tab-separated fields",
                    file.display(),
                    no + 1
                )));
            }
            entries.push(ManifestEntry {
                split: cols[0].parse()?,
                name: cols[1].to_string(),
                image: cols[2].into(),
                mask: cols[3].into(),
                edge: cols.get(4).map(PathBuf::from),
            });
        }
        Ok(Self { root, entries })
    }

    pub fn save(&self) -> Result<PathBuf> {
        let mut text = String::from("# split\tname\timage\tmask\tedge\n");
        for e in &self.entries {
            text.push_str(&format!(
                "{}\t{}\t{}\t{}",
                e.split,
                e.name,
                e.image.display(),
                e.mask.display()
            ));
            if let Some(edge) = &e.edge {
                text.push_str(&format!("\t{}", edge.display()));
            }
            text.push('\n');
        }
        fs::create_dir_all(&self.root).map_err(|e| Error::io(&self.root, e))?;
        let file = self.root.join(MANIFEST_FILE);
        fs::write(&file, text).map_err(|e| Error::io(&file, e))?;
        Ok(file)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    /// Image and area mask of one entry, checked to share dimensions.
    pub fn load_pair(&self, entry: &ManifestEntry) -> Result<(Raster, Raster)> {
        let img = read_rgb(&self.resolve(&entry.image))?;
        let mask = read_mask(&self.resolve(&entry.mask))?;
        if !img.same_extent(&mask) {
            return Err(Error::Shape(format!(
                "{}: image {}x{} vs mask {}x{}",
                entry.name,
                img.height(),
                img.width(),
                mask.height(),
                mask.width()
            )));
        }
        Ok((img, mask))
    }

    /// Loads every sample of a split; missing edge files are derived.
    pub fn load_samples(&self, split: Split) -> Result<Vec<Sample>> {
        self.split(split)
            .map(|e| {
                let (img, area) = self.load_pair(e)?;
                let edge = match &e.edge {
                    Some(p) => read_mask(&self.resolve(p))?,
                    None => derive_edge_mask(&area, DEFAULT_EDGE_WIDTH),
                };
                Sample::new(img, area, edge)
            })
            .collect()
    }
}

/// Writes both splits under `root` with names `00000`, `00001`, … and saves the manifest.
pub fn write_dataset(root: &Path, train: &[Sample], test: &[Sample]) -> Result<DatasetManifest> {
    let mut entries = Vec::with_capacity(train.len() + test.len());
    for (split, samples) in [(Split::Train, train), (Split::Test, test)] {
        for (i, s) in samples.iter().enumerate() {
            let name = format!("{i:05}");
            let rel = |kind: &str| PathBuf::from(split.as_str()).join(kind).join(format!("{name}.png"));
            let entry = ManifestEntry {
                split,
                name: name.clone(),
                image: rel("images"),
                mask: rel("masks"),
                edge: Some(rel("edges")),
            };
            write_rgb(&root.join(&entry.image), &s.image)?;
            write_mask(&root.join(&entry.mask), &s.area)?;
            write_mask(&root.join(entry.edge.as_ref().expect("set")), &s.edge)?;
            entries.push(entry);
        }
    }
    let manifest = DatasetManifest {
        root: root.to_path_buf(),
        entries,
    };
    manifest.save()?;
    Ok(manifest)
}
