//! Contrast-limited adaptive histogram equalisation on the luma channel.

use crate::dataset::PixelGrid;

const BINS: usize = 256;

/// Per-tile equalisation lookup with histogram clipping.
fn tile_lut(hist: &mut [u32; BINS], area: u32, clip_limit: f64) -> [u8; BINS] {
    let limit = ((clip_limit * area as f64 / BINS as f64) as u32).max(1);
    let mut excess = 0u32;
    for h in hist.iter_mut() {
        if *h > limit {
            excess += *h - limit;
            *h = limit;
        }
    }
    let per_bin = excess / BINS as u32;
    let residual = excess % BINS as u32;
    for h in hist.iter_mut() {
        *h += per_bin;
    }
    if let Some(step) = (BINS as u32).checked_div(residual) {
        let step = step.max(1) as usize;
        for h in hist.iter_mut().step_by(step).take(residual as usize) {
            *h += 1;
        }
    }
    let scale = 255.0 / area as f64;
    let mut lut = [0u8; BINS];
    let mut cdf = 0u32;
    for (slot, &h) in lut.iter_mut().zip(hist.iter()) {
        cdf += h;
        *slot = (cdf as f64 * scale).round().clamp(0.0, 255.0) as u8;
    }
    lut
}

fn tile_bounds(len: u32, tiles: u32, i: u32) -> (u32, u32) {
    (i * len / tiles, (i + 1) * len / tiles)
}

/// Equalises a single-channel plane. `tiles` is clamped so every tile holds at
/// least one sample.
fn clahe_plane(plane: &[u8], width: u32, height: u32, clip_limit: f64, tiles: u32) -> Vec<u8> {
    let tx = tiles.min(width).max(1);
    let ty = tiles.min(height).max(1);
    let mut luts = vec![[0u8; BINS]; (tx * ty) as usize];
    for j in 0..ty {
        let (y0, y1) = tile_bounds(height, ty, j);
        for i in 0..tx {
            let (x0, x1) = tile_bounds(width, tx, i);
            let mut hist = [0u32; BINS];
            for y in y0..y1 {
                for x in x0..x1 {
                    hist[plane[(y * width + x) as usize] as usize] += 1;
                }
            }
            let area = (x1 - x0) * (y1 - y0);
            luts[(j * tx + i) as usize] = tile_lut(&mut hist, area, clip_limit);
        }
    }

    let tile_w = width as f64 / tx as f64;
    let tile_h = height as f64 / ty as f64;
    let neighbours = |pos: f64, size: f64, count: u32| -> (usize, usize, f64) {
        let f = (pos + 0.5) / size - 0.5;
        if f <= 0.0 {
            (0, 0, 0.0)
        } else if f >= (count - 1) as f64 {
            let last = (count - 1) as usize;
            (last, last, 0.0)
        } else {
            let lo = f.floor();
            (lo as usize, lo as usize + 1, f - lo)
        }
    };

    let mut out = vec![0u8; plane.len()];
    for y in 0..height {
        let (j0, j1, wy) = neighbours(y as f64, tile_h, ty);
        for x in 0..width {
            let (i0, i1, wx) = neighbours(x as f64, tile_w, tx);
            let v = plane[(y * width + x) as usize] as usize;
            let lut = |j: usize, i: usize| luts[j * tx as usize + i][v] as f64;
            let top = lut(j0, i0) * (1.0 - wx) + lut(j0, i1) * wx;
            let bottom = lut(j1, i0) * (1.0 - wx) + lut(j1, i1) * wx;
            out[(y * width + x) as usize] = (top * (1.0 - wy) + bottom * wy).round().clamp(0.0, 255.0) as u8;
        }
    }
    out
}

/// CLAHE on the BT.601 luma of an RGB image; chroma is kept.
pub fn clahe_luma(image: &PixelGrid, clip_limit: f64, tile_grid: u32) -> PixelGrid {
    let (w, h) = (image.width(), image.height());
    let mut luma = Vec::with_capacity((w * h) as usize);
    let mut chroma = Vec::with_capacity((w * h) as usize);
    for px in image.data().chunks_exact(3) {
        let [r, g, b] = [px[0], px[1], px[2]].map(f64::from);
        let y = 0.299 * r + 0.587 * g + 0.114 * b;
        luma.push(y.round().clamp(0.0, 255.0) as u8);
        chroma.push((b - y, r - y));
    }
    let equalised = clahe_plane(&luma, w, h, clip_limit, tile_grid);
    let mut out = Vec::with_capacity(image.data().len());
    for (y, (cb, cr)) in equalised.into_iter().zip(chroma) {
        let y = y as f64;
        let r = y + cr;
        let b = y + cb;
        let g = (y - 0.299 * r - 0.114 * b) / 0.587;
        out.extend([r, g, b].map(|v| v.round().clamp(0.0, 255.0) as u8));
    }
    PixelGrid::new(w, h, out).expect("same dimensions")
}
