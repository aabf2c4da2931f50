//! Seeded synthetic aerial scenes: textured ground, buildings, 1–3 roads
//! drawn as polylines or quadratic curves, and tree canopy that may occlude
//! them. Labels always cover the full road, occluded or not.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::edges::derive_edge_mask;
use super::raster::Raster;
use super::Sample;
use crate::error::{Error, Result};
use crate::network::SIZE_MULTIPLE;

/// Edge-label half-width used for synthetic samples.
pub const SYNTH_EDGE_WIDTH: usize = 1;

/// Parameters of a synthetic split.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub count: usize,
    pub size: usize,
    pub seed: u64,
}

type Point = (f64, f64);

fn border_point(rng: &mut ChaCha8Rng, size: f64, side: u32) -> Point {
    let t = rng.random_range(0.1..0.9) * size;
    match side {
        0 => (t, 0.0),
        1 => (size, t),
        2 => (t, size),
        _ => (0.0, t),
    }
}

/// Centre-line of one road as a dense polyline.
fn road_path(rng: &mut ChaCha8Rng, size: f64) -> Vec<Point> {
    let s0 = rng.random_range(0..4u32);
    let s1 = (s0 + rng.random_range(1..4u32)) % 4;
    let a = border_point(rng, size, s0);
    let b = border_point(rng, size, s1);
    let inner = |rng: &mut ChaCha8Rng| {
        (rng.random_range(0.2..0.8) * size, rng.random_range(0.2..0.8) * size)
    };
    if rng.random_bool(0.5) {
        let c = inner(rng);
        let steps = (size as usize * 2).max(16);
        (0..=steps)
            .map(|i| {
                let t = i as f64 / steps as f64;
                let u = 1.0 - t;
                (
                    u * u * a.0 + 2.0 * u * t * c.0 + t * t * b.0,
                    u * u * a.1 + 2.0 * u * t * c.1 + t * t * b.1,
                )
            })
            .collect()
    } else {
        let mut pts = vec![a, inner(rng)];
        if rng.random_bool(0.5) {
            pts.push(inner(rng));
        }
        pts.push(b);
        pts
    }
}

fn segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (qx, qy) = (a.0 + t * dx - p.0, a.1 + t * dy - p.1);
    (qx * qx + qy * qy).sqrt()
}

/// Marks every pixel whose centre lies within `width / 2` of the path.
fn rasterize(mask: &mut Raster, path: &[Point], width: f64) {
    let (h, w) = (mask.height(), mask.width());
    let r = width / 2.0;
    for seg in path.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        let x0 = (a.0.min(b.0) - r).floor().max(0.0) as usize;
        let x1 = ((a.0.max(b.0) + r).ceil() as usize).min(w);
        let y0 = (a.1.min(b.1) - r).floor().max(0.0) as usize;
        let y1 = ((a.1.max(b.1) + r).ceil() as usize).min(h);
        for y in y0..y1 {
            for x in x0..x1 {
                if segment_distance((x as f64 + 0.5, y as f64 + 0.5), a, b) <= r {
                    mask.set(y, x, 0, 1.0);
                }
            }
        }
    }
}

fn background(rng: &mut ChaCha8Rng, size: usize) -> Raster {
    let base = [
        rng.random_range(0.18..0.38),
        rng.random_range(0.32..0.52),
        rng.random_range(0.12..0.28),
    ];
    // Two low-frequency shading waves.
    let waves: Vec<(f64, f64, f64, f64)> = (0..2)
        .map(|_| {
            (
                rng.random_range(0.5..2.0) * std::f64::consts::TAU / size as f64,
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(0.03..0.06),
            )
        })
        .collect();
    let mut img = Raster::new(size, size, 3);
    for y in 0..size {
        for x in 0..size {
            let shade: f64 = waves
                .iter()
                .map(|&(f, dir, phase, amp)| {
                    amp * (f * (x as f64 * dir.cos() + y as f64 * dir.sin()) + phase).sin()
                })
                .sum();
            for (c, &b) in base.iter().enumerate() {
                img.set(y, x, c, (b + shade) as f32);
            }
        }
    }
    // Buildings: warm or road-gray roofs, so colour alone cannot separate roads.
    for _ in 0..rng.random_range(2..=6usize) {
        let bh = rng.random_range(size / 16..=size / 5).max(2);
        let bw = rng.random_range(size / 16..=size / 5).max(2);
        let y0 = rng.random_range(0..size - bh);
        let x0 = rng.random_range(0..size - bw);
        let tone = if rng.random_bool(0.5) {
            let g = rng.random_range(0.45..0.75);
            [g, g, g]
        } else {
            [
                rng.random_range(0.55..0.8),
                rng.random_range(0.35..0.5),
                rng.random_range(0.28..0.42),
            ]
        };
        fill_rect(&mut img, y0, x0, bh, bw, tone);
    }
    img
}

fn fill_rect(img: &mut Raster, y0: usize, x0: usize, h: usize, w: usize, tone: [f64; 3]) {
    for y in y0..y0 + h {
        for x in x0..x0 + w {
            for (c, &t) in tone.iter().enumerate() {
                img.set(y, x, c, t as f32);
            }
        }
    }
}

/// Dark canopy discs drawn over everything, roads included.
fn trees(rng: &mut ChaCha8Rng, img: &mut Raster) {
    let size = img.height() as f64;
    for _ in 0..rng.random_range(2..=8usize) {
        let (cx, cy) = (rng.random_range(0.0..size), rng.random_range(0.0..size));
        let r: f64 = rng.random_range(1.5..3.0);
        let tone = [
            rng.random_range(0.08..0.18),
            rng.random_range(0.2..0.32),
            rng.random_range(0.06..0.14),
        ];
        let (y0, y1) = ((cy - r).floor().max(0.0) as usize, ((cy + r).ceil() as usize).min(img.height()));
        let (x0, x1) = ((cx - r).floor().max(0.0) as usize, ((cx + r).ceil() as usize).min(img.width()));
        for y in y0..y1 {
            for x in x0..x1 {
                let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                if dx * dx + dy * dy <= r * r {
                    for (c, &t) in tone.iter().enumerate() {
                        img.set(y, x, c, t as f32);
                    }
                }
            }
        }
    }
}

/// One sample, reproducible from `(size, seed, index)` alone.
pub fn synth_sample(size: usize, seed: u64, index: u64) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let mut img = background(&mut rng, size);
    let mut area = Raster::new(size, size, 1);
    let roads = rng.random_range(1..=3usize);
    for _ in 0..roads {
        let path = road_path(&mut rng, size as f64);
        let width = rng.random_range(3.0..=7.0);
        rasterize(&mut area, &path, width);
    }
    if !area.any_positive() {
        let mid = size as f64 / 2.0;
        rasterize(&mut area, &[(0.0, mid), (size as f64, mid)], 3.0);
    }
    let gray: f64 = rng.random_range(0.45..0.75);
    let tint: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.02..0.02));
    for y in 0..size {
        for x in 0..size {
            if area.get(y, x, 0) > 0.0 {
                for (c, t) in tint.iter().enumerate() {
                    img.set(y, x, c, (gray + t) as f32);
                }
            }
        }
    }
    trees(&mut rng, &mut img);
    for v in img.data_mut() {
        let noise: f64 = rng.random_range(-0.08..0.08);
        *v = (f64::from(*v) + noise).clamp(0.0, 1.0) as f32;
    }
    let edge = derive_edge_mask(&area, SYNTH_EDGE_WIDTH);
    Sample { image: img, area, edge }
}

/// `n` samples of `size × size`; sample `i` depends only on `(size, seed, i)`.
pub fn synth_generate(n: usize, size: usize, seed: u64) -> Result<Vec<Sample>> {
    if size < SIZE_MULTIPLE || size % SIZE_MULTIPLE != 0 {
        return Err(Error::Config(format!(
            "synthetic size {size} must be a positive multiple of {SIZE_MULTIPLE}"
        )));
    }
    Ok((0..n as u64).map(|i| synth_sample(size, seed, i)).collect())
}

impl SynthSpec {
    pub fn generate(&self) -> Result<Vec<Sample>> {
        synth_generate(self.count, self.size, self.seed)
    }
}
