//! Feature heat maps: channel-mean of a feature map, min-max normalized.

use std::path::{Path, PathBuf};

use crate::data::{to_batch, write_gray, Raster, Sample};
use crate::error::{Error, Result};
use crate::network::Network;
use crate::tensor::Tensor;

/// Mean over channels of batch item `n`, as an `H × W` plane.
pub fn channel_mean(f: &Tensor, n: usize) -> Vec<f64> {
    let [_, c, h, w] = f.shape();
    let mut out = vec![0.0; h * w];
    for ch in 0..c {
        for (o, &v) in out.iter_mut().zip(f.channel_plane(n, ch)) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|v| *v /= c as f64);
    out
}

/// Min-max normalization to `[0, 1]`; a constant map becomes 0.5 everywhere.
pub fn normalize(plane: &[f64]) -> Vec<f64> {
    let lo = plane.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = plane.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if !(span > 0.0) {
        return vec![0.5; plane.len()];
    }
    plane.iter().map(|&v| (v - lo) / span).collect()
}

/// Heat map of batch item `n` of `f` as a one-channel raster.
pub fn heatmap(f: &Tensor, n: usize) -> Raster {
    let norm = normalize(&channel_mean(f, n));
    Raster::from_vec(
        f.height(),
        f.width(),
        1,
        norm.into_iter().map(|v| v as f32).collect(),
    )
    .expect("sized")
}

/// Writes `<dir>/<layer>.png` for each requested layer and returns the paths.
pub fn export_heatmaps(net: &Network, sample: &Sample, layers: &[&str], dir: &Path) -> Result<Vec<PathBuf>> {
    if layers.is_empty() {
        return Err(Error::Empty("no layers requested".into()));
    }
    let batch = to_batch([sample])?;
    let feats = net.features(&batch.images, layers)?;
    let mut paths = Vec::with_capacity(layers.len());
    for (name, f) in layers.iter().zip(&feats) {
        let path = dir.join(format!("{name}.png"));
        write_gray(&path, &heatmap(f, 0))?;
        paths.push(path);
    }
    Ok(paths)
}
