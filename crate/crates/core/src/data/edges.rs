//! Road-edge labels as the morphological gradient of the area mask.

use super::raster::Raster;

/// Default half-width of the structuring element for edge labels.
pub const DEFAULT_EDGE_WIDTH: usize = 2;

/// Square-window max/min filter with replicate padding, done separably.
fn window_filter(mask: &Raster, k: usize, take_max: bool) -> Vec<bool> {
    let (h, w) = (mask.height(), mask.width());
    let src: Vec<bool> = (0..h * w).map(|i| mask.data()[i * mask.channels()] > 0.0).collect();
    let pick = |acc: bool, v: bool| if take_max { acc || v } else { acc && v };
    let mut rows = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            let lo = x.saturating_sub(k);
            let hi = (x + k).min(w - 1);
            let mut acc = !take_max;
            for xx in lo..=hi {
                acc = pick(acc, src[y * w + xx]);
            }
            rows[y * w + x] = acc;
        }
    }
    let mut out = vec![false; h * w];
    for y in 0..h {
        let lo = y.saturating_sub(k);
        let hi = (y + k).min(h - 1);
        for x in 0..w {
            let mut acc = !take_max;
            for yy in lo..=hi {
                acc = pick(acc, rows[yy * w + x]);
            }
            out[y * w + x] = acc;
        }
    }
    out
}

fn to_mask(h: usize, w: usize, bits: &[bool]) -> Raster {
    Raster::from_vec(h, w, 1, bits.iter().map(|&b| f32::from(u8::from(b))).collect())
        .expect("sized")
}

pub fn dilate(mask: &Raster, k: usize) -> Raster {
    to_mask(mask.height(), mask.width(), &window_filter(mask, k, true))
}

pub fn erode(mask: &Raster, k: usize) -> Raster {
    to_mask(mask.height(), mask.width(), &window_filter(mask, k, false))
}

/// `dilate(mask, k) XOR erode(mask, k)` with a `(2k+1)`-square element.
/// Clamped border reads make an all-ones mask edge-free.
pub fn derive_edge_mask(mask: &Raster, k: usize) -> Raster {
    let k = k.max(1);
    let d = window_filter(mask, k, true);
    let e = window_filter(mask, k, false);
    let bits: Vec<bool> = d.iter().zip(&e).map(|(a, b)| a ^ b).collect();
    to_mask(mask.height(), mask.width(), &bits)
}
