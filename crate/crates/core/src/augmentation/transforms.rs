use rand::Rng;
use serde::{Deserialize, Serialize};

use super::clahe::clahe_luma;
use super::AugmentError;
use crate::dataset::{resize_image, PixelGrid, TARGET_SIZE};

fn default_shift() -> f64 {
    0.1
}
fn default_scale() -> f64 {
    0.1
}
fn default_rotate() -> f64 {
    30.0
}
fn default_brightness() -> f64 {
    0.2
}
fn default_hue() -> f64 {
    10.0
}
fn default_sat() -> f64 {
    15.0
}
fn default_crop_scale() -> (f64, f64) {
    (0.7, 1.0)
}
fn default_crop_ratio() -> (f64, f64) {
    (3.0 / 4.0, 4.0 / 3.0)
}
fn default_size() -> u32 {
    TARGET_SIZE
}
fn default_kernel_min() -> u32 {
    3
}
fn default_kernel_max() -> u32 {
    7
}
fn default_clip() -> f64 {
    2.0
}
fn default_tiles() -> u32 {
    8
}
fn default_holes() -> u32 {
    8
}
fn default_hole_size() -> u32 {
    30
}

/// Transform kinds with their magnitude parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TransformKind {
    HFlip,
    VFlip,
    /// Rotation by a random number of quarter turns.
    Rot90,
    /// Shift as a fraction of the side, scale as a fraction of 1, rotation in degrees.
    ShiftScaleRotate {
        #[serde(default = "default_shift")]
        shift_limit: f64,
        #[serde(default = "default_scale")]
        scale_limit: f64,
        #[serde(default = "default_rotate")]
        rotate_limit: f64,
    },
    /// Brightness offset and contrast gain, both as fractions of full range.
    BrightnessContrast {
        #[serde(default = "default_brightness")]
        brightness_limit: f64,
        #[serde(default = "default_brightness")]
        contrast_limit: f64,
    },
    /// Hue shift in degrees, saturation shift in 8-bit units.
    HueSaturation {
        #[serde(default = "default_hue")]
        hue_shift_limit: f64,
        #[serde(default = "default_sat")]
        sat_shift_limit: f64,
    },
    RandomResizedCrop {
        #[serde(default = "default_crop_scale")]
        scale: (f64, f64),
        #[serde(default = "default_crop_ratio")]
        ratio: (f64, f64),
        #[serde(default = "default_size")]
        size: u32,
    },
    /// Odd kernel size drawn from `kernel_min..=kernel_max`.
    GaussianBlur {
        #[serde(default = "default_kernel_min")]
        kernel_min: u32,
        #[serde(default = "default_kernel_max")]
        kernel_max: u32,
    },
    Clahe {
        #[serde(default = "default_clip")]
        clip_limit: f64,
        #[serde(default = "default_tiles")]
        tile_grid: u32,
    },
    /// Zeroes `min_holes..=max_holes` rectangles. Unset minimums equal the maximums.
    CoarseDropout {
        #[serde(default = "default_holes")]
        max_holes: u32,
        #[serde(default = "default_hole_size")]
        max_height: u32,
        #[serde(default = "default_hole_size")]
        max_width: u32,
        #[serde(default)]
        min_holes: Option<u32>,
        #[serde(default)]
        min_height: Option<u32>,
        #[serde(default)]
        min_width: Option<u32>,
    },
}

impl TransformKind {
    pub fn name(&self) -> &'static str {
        match self {
            TransformKind::HFlip => "h_flip",
            TransformKind::VFlip => "v_flip",
            TransformKind::Rot90 => "rot90",
            TransformKind::ShiftScaleRotate { .. } => "shift_scale_rotate",
            TransformKind::BrightnessContrast { .. } => "brightness_contrast",
            TransformKind::HueSaturation { .. } => "hue_saturation",
            TransformKind::RandomResizedCrop { .. } => "random_resized_crop",
            TransformKind::GaussianBlur { .. } => "gaussian_blur",
            TransformKind::Clahe { .. } => "clahe",
            TransformKind::CoarseDropout { .. } => "coarse_dropout",
        }
    }

    pub fn shift_scale_rotate() -> Self {
        TransformKind::ShiftScaleRotate {
            shift_limit: default_shift(),
            scale_limit: default_scale(),
            rotate_limit: default_rotate(),
        }
    }

    pub fn brightness_contrast() -> Self {
        TransformKind::BrightnessContrast {
            brightness_limit: default_brightness(),
            contrast_limit: default_brightness(),
        }
    }

    pub fn hue_saturation() -> Self {
        TransformKind::HueSaturation {
            hue_shift_limit: default_hue(),
            sat_shift_limit: default_sat(),
        }
    }

    pub fn random_resized_crop() -> Self {
        TransformKind::RandomResizedCrop {
            scale: default_crop_scale(),
            ratio: default_crop_ratio(),
            size: default_size(),
        }
    }

    pub fn gaussian_blur() -> Self {
        TransformKind::GaussianBlur {
            kernel_min: default_kernel_min(),
            kernel_max: default_kernel_max(),
        }
    }

    pub fn clahe() -> Self {
        TransformKind::Clahe {
            clip_limit: default_clip(),
            tile_grid: default_tiles(),
        }
    }

    pub fn coarse_dropout() -> Self {
        TransformKind::CoarseDropout {
            max_holes: default_holes(),
            max_height: default_hole_size(),
            max_width: default_hole_size(),
            min_holes: None,
            min_height: None,
            min_width: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformSpec {
    #[serde(flatten)]
    pub kind: TransformKind,
    pub probability: f64,
}

impl TransformSpec {
    pub fn new(kind: TransformKind, probability: f64) -> Self {
        Self { kind, probability }
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        let bad = |msg: String| Err(AugmentError::Plan(format!("{}: {msg}", self.kind.name())));
        if !(0.0..=1.0).contains(&self.probability) {
            return bad(format!("probability {} outside [0,1]", self.probability));
        }
        let non_negative = |v: f64| v.is_finite() && v >= 0.0;
        match self.kind {
            TransformKind::HFlip | TransformKind::VFlip | TransformKind::Rot90 => {}
            TransformKind::ShiftScaleRotate {
                shift_limit,
                scale_limit,
                rotate_limit,
            } => {
                if !(non_negative(shift_limit) && non_negative(rotate_limit))
                    || !(non_negative(scale_limit) && scale_limit < 1.0)
                {
                    return bad("limits must be non-negative and scale_limit < 1".into());
                }
            }
            TransformKind::BrightnessContrast {
                brightness_limit,
                contrast_limit,
            } => {
                if !(non_negative(brightness_limit) && non_negative(contrast_limit)) {
                    return bad("limits must be non-negative".into());
                }
            }
            TransformKind::HueSaturation {
                hue_shift_limit,
                sat_shift_limit,
            } => {
                if !(non_negative(hue_shift_limit) && non_negative(sat_shift_limit)) {
                    return bad("limits must be non-negative".into());
                }
            }
            TransformKind::RandomResizedCrop { scale, ratio, size } => {
                if !(0.7 <= scale.0 && scale.0 <= scale.1 && scale.1 <= 1.0) {
                    return bad(format!("scale range {scale:?} must lie within [0.7, 1.0]"));
                }
                if !(ratio.0 > 0.0 && ratio.0 <= ratio.1 && ratio.1.is_finite()) {
                    return bad(format!("aspect ratio range {ratio:?} is invalid"));
                }
                if size == 0 {
                    return bad("output size must be positive".into());
                }
            }
            TransformKind::GaussianBlur {
                kernel_min,
                kernel_max,
            } => {
                if kernel_min < 3 || kernel_min > kernel_max || kernel_max > 31 || kernel_min % 2 == 0 {
                    return bad(format!("kernel range {kernel_min}..={kernel_max} must be odd, within 3..=31"));
                }
            }
            TransformKind::Clahe {
                clip_limit,
                tile_grid,
            } => {
                if !(clip_limit.is_finite() && clip_limit > 0.0) || !(1..=64).contains(&tile_grid) {
                    return bad("clip_limit must be positive and tile_grid in 1..=64".into());
                }
            }
            TransformKind::CoarseDropout {
                max_holes,
                max_height,
                max_width,
                min_holes,
                min_height,
                min_width,
            } => {
                if max_holes == 0 || max_holes > 8 || max_height == 0 || max_height > 30 || max_width == 0 || max_width > 30 {
                    return bad("at most 8 holes of at most 30x30 pixels".into());
                }
                let min_ok = |min: Option<u32>, max: u32| min.is_none_or(|m| m >= 1 && m <= max);
                if !(min_ok(min_holes, max_holes) && min_ok(min_height, max_height) && min_ok(min_width, max_width)) {
                    return bad("minimums must lie in 1..=maximum".into());
                }
            }
        }
        Ok(())
    }
}

pub fn h_flip(image: &PixelGrid) -> PixelGrid {
    let (w, h) = (image.width(), image.height());
    let mut out = image.clone();
    for y in 0..h {
        for x in 0..w {
            out.set_pixel(x, y, image.pixel(w - 1 - x, y));
        }
    }
    out
}

pub fn v_flip(image: &PixelGrid) -> PixelGrid {
    let (w, h) = (image.width(), image.height());
    let mut out = image.clone();
    for y in 0..h {
        for x in 0..w {
            out.set_pixel(x, y, image.pixel(x, h - 1 - y));
        }
    }
    out
}

/// Rotates counter-clockwise by `quarter_turns` × 90°.
pub fn rot90(image: &PixelGrid, quarter_turns: u32) -> PixelGrid {
    let mut current = image.clone();
    for _ in 0..quarter_turns % 4 {
        let (w, h) = (current.width(), current.height());
        let mut out = PixelGrid::filled(h, w, [0, 0, 0]);
        for y in 0..w {
            for x in 0..h {
                out.set_pixel(x, y, current.pixel(w - 1 - y, x));
            }
        }
        current = out;
    }
    current
}

/// Reflect-101 border handling (`dcb|abcd|cba`).
#[inline]
fn reflect101(i: i64, n: i64) -> i64 {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i.rem_euclid(period);
    if m < n {
        m
    } else {
        period - m
    }
}

fn sample_bilinear(image: &PixelGrid, fx: f64, fy: f64) -> [u8; 3] {
    let (w, h) = (image.width() as i64, image.height() as i64);
    let x0 = fx.floor();
    let y0 = fy.floor();
    let (ax, ay) = (fx - x0, fy - y0);
    let (x0, y0) = (x0 as i64, y0 as i64);
    let xs = [reflect101(x0, w) as u32, reflect101(x0 + 1, w) as u32];
    let ys = [reflect101(y0, h) as u32, reflect101(y0 + 1, h) as u32];
    let p = [
        image.pixel(xs[0], ys[0]),
        image.pixel(xs[1], ys[0]),
        image.pixel(xs[0], ys[1]),
        image.pixel(xs[1], ys[1]),
    ];
    let mut out = [0u8; 3];
    for c in 0..3 {
        let top = p[0][c] as f64 * (1.0 - ax) + p[1][c] as f64 * ax;
        let bottom = p[2][c] as f64 * (1.0 - ax) + p[3][c] as f64 * ax;
        out[c] = (top * (1.0 - ay) + bottom * ay).round().clamp(0.0, 255.0) as u8;
    }
    out
}

/// Affine warp about the image centre: rotate by `angle_deg`, scale, then
/// translate by `(dx, dy)` pixels.
pub fn shift_scale_rotate(image: &PixelGrid, dx: f64, dy: f64, scale: f64, angle_deg: f64) -> PixelGrid {
    let (w, h) = (image.width(), image.height());
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let (sin, cos) = angle_deg.to_radians().sin_cos();
    let mut out = image.clone();
    for y in 0..h {
        for x in 0..w {
            // inverse map: undo translation, rotation and scale
            let px = x as f64 - cx - dx;
            let py = y as f64 - cy - dy;
            let sx = (cos * px + sin * py) / scale + cx;
            let sy = (-sin * px + cos * py) / scale + cy;
            out.set_pixel(x, y, sample_bilinear(image, sx, sy));
        }
    }
    out
}

/// `clamp(alpha * x + beta)` on every sample.
pub fn brightness_contrast(image: &PixelGrid, alpha: f64, beta: f64) -> PixelGrid {
    let data = image
        .data()
        .iter()
        .map(|&v| (alpha * v as f64 + beta).round().clamp(0.0, 255.0) as u8)
        .collect();
    PixelGrid::new(image.width(), image.height(), data).expect("same dimensions")
}

fn rgb_to_hsv(rgb: [u8; 3]) -> (f64, f64, f64) {
    let [r, g, b] = rgb.map(|v| v as f64 / 255.0);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let hue = if delta == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    let sat = if max == 0.0 { 0.0 } else { delta / max };
    (hue, sat, max)
}

fn hsv_to_rgb(hue: f64, sat: f64, val: f64) -> [u8; 3] {
    let c = val * sat;
    let hp = hue.rem_euclid(360.0) / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = val - c;
    [r, g, b].map(|v| ((v + m) * 255.0).round().clamp(0.0, 255.0) as u8)
}

/// Shifts hue by `hue_deg` degrees and saturation by `sat_shift` 8-bit units.
pub fn hue_saturation(image: &PixelGrid, hue_deg: f64, sat_shift: f64) -> PixelGrid {
    let mut out = image.clone();
    for px in out.data_mut().chunks_exact_mut(3) {
        let (h, s, v) = rgb_to_hsv([px[0], px[1], px[2]]);
        let rgb = hsv_to_rgb(h + hue_deg, (s + sat_shift / 255.0).clamp(0.0, 1.0), v);
        px.copy_from_slice(&rgb);
    }
    out
}

/// Crops the `(x, y, w, h)` window and resizes it to `size`×`size`.
pub fn crop_and_resize(image: &PixelGrid, x: u32, y: u32, w: u32, h: u32, size: u32) -> Result<PixelGrid, AugmentError> {
    let mut data = Vec::with_capacity(w as usize * h as usize * 3);
    for row in y..y + h {
        for col in x..x + w {
            data.extend_from_slice(&image.pixel(col, row));
        }
    }
    let crop = PixelGrid::new(w, h, data)?;
    Ok(resize_image(&crop, size, size)?)
}

fn random_crop_window<R: Rng + ?Sized>(
    rng: &mut R,
    width: u32,
    height: u32,
    scale: (f64, f64),
    ratio: (f64, f64),
) -> (u32, u32, u32, u32) {
    let area = width as f64 * height as f64;
    let (log_lo, log_hi) = (ratio.0.ln(), ratio.1.ln());
    for _ in 0..10 {
        let target = area * uniform(rng, scale.0, scale.1);
        let aspect = uniform(rng, log_lo, log_hi).exp();
        let w = (target * aspect).sqrt().round() as u32;
        let h = (target / aspect).sqrt().round() as u32;
        if w > 0 && h > 0 && w <= width && h <= height {
            let x = rng.random_range(0..=width - w);
            let y = rng.random_range(0..=height - h);
            return (x, y, w, h);
        }
    }
    // central crop at the nearest admissible aspect ratio
    let in_ratio = width as f64 / height as f64;
    let (w, h) = if in_ratio < ratio.0 {
        (width, ((width as f64 / ratio.0).round() as u32).clamp(1, height))
    } else if in_ratio > ratio.1 {
        (((height as f64 * ratio.1).round() as u32).clamp(1, width), height)
    } else {
        (width, height)
    };
    ((width - w) / 2, (height - h) / 2, w, h)
}

fn gaussian_kernel(size: u32) -> Vec<f64> {
    // OpenCV's sigma for an automatic kernel size
    let sigma = 0.3 * ((size as f64 - 1.0) * 0.5 - 1.0) + 0.8;
    let half = (size / 2) as i64;
    let raw: Vec<f64> = (-half..=half)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / sum).collect()
}

/// Separable Gaussian blur with an odd `kernel_size`.
pub fn gaussian_blur(image: &PixelGrid, kernel_size: u32) -> PixelGrid {
    let kernel = gaussian_kernel(kernel_size);
    let half = (kernel_size / 2) as i64;
    let (w, h) = (image.width() as i64, image.height() as i64);
    let src = image.data();
    let mut tmp = vec![0f64; src.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let mut acc = 0.0;
                for (k, weight) in kernel.iter().enumerate() {
                    let sx = reflect101(x + k as i64 - half, w);
                    acc += weight * src[((y * w + sx) * 3 + c) as usize] as f64;
                }
                tmp[((y * w + x) * 3 + c) as usize] = acc;
            }
        }
    }
    let mut out = vec![0u8; src.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let mut acc = 0.0;
                for (k, weight) in kernel.iter().enumerate() {
                    let sy = reflect101(y + k as i64 - half, h);
                    acc += weight * tmp[((sy * w + x) * 3 + c) as usize];
                }
                out[((y * w + x) * 3 + c) as usize] = acc.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    PixelGrid::new(image.width(), image.height(), out).expect("same dimensions")
}

/// Zeroes each `(x, y, w, h)` rectangle, clipped to the image.
pub fn coarse_dropout(image: &PixelGrid, holes: &[(u32, u32, u32, u32)]) -> PixelGrid {
    let mut out = image.clone();
    for &(x, y, w, h) in holes {
        for row in y..(y + h).min(image.height()) {
            for col in x..(x + w).min(image.width()) {
                out.set_pixel(col, row, [0, 0, 0]);
            }
        }
    }
    out
}

#[inline]
fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        lo + (hi - lo) * rng.random::<f64>()
    } else {
        lo
    }
}

/// Applies one transform with its configured probability.
///
/// The coin flip is always the first draw; parameters are drawn only when the
/// transform fires. Crop kinds always emit `size`×`size`, resizing directly
/// when the crop itself does not fire.
pub fn apply_transform<R: Rng + ?Sized>(
    spec: &TransformSpec,
    image: &PixelGrid,
    rng: &mut R,
) -> Result<PixelGrid, AugmentError> {
    spec.validate()?;
    let fire = rng.random::<f64>() < spec.probability;
    if !fire {
        return match spec.kind {
            TransformKind::RandomResizedCrop { size, .. } => Ok(resize_image(image, size, size)?),
            _ => Ok(image.clone()),
        };
    }
    let (w, h) = (image.width(), image.height());
    let out = match spec.kind {
        TransformKind::HFlip => h_flip(image),
        TransformKind::VFlip => v_flip(image),
        TransformKind::Rot90 => rot90(image, rng.random_range(0..4)),
        TransformKind::ShiftScaleRotate {
            shift_limit,
            scale_limit,
            rotate_limit,
        } => {
            let dx = uniform(rng, -shift_limit, shift_limit) * w as f64;
            let dy = uniform(rng, -shift_limit, shift_limit) * h as f64;
            let scale = 1.0 + uniform(rng, -scale_limit, scale_limit);
            let angle = uniform(rng, -rotate_limit, rotate_limit);
            shift_scale_rotate(image, dx, dy, scale, angle)
        }
        TransformKind::BrightnessContrast {
            brightness_limit,
            contrast_limit,
        } => {
            let alpha = 1.0 + uniform(rng, -contrast_limit, contrast_limit);
            let beta = uniform(rng, -brightness_limit, brightness_limit) * 255.0;
            brightness_contrast(image, alpha, beta)
        }
        TransformKind::HueSaturation {
            hue_shift_limit,
            sat_shift_limit,
        } => {
            let hue = uniform(rng, -hue_shift_limit, hue_shift_limit);
            let sat = uniform(rng, -sat_shift_limit, sat_shift_limit);
            hue_saturation(image, hue, sat)
        }
        TransformKind::RandomResizedCrop { scale, ratio, size } => {
            let (x, y, cw, ch) = random_crop_window(rng, w, h, scale, ratio);
            crop_and_resize(image, x, y, cw, ch, size)?
        }
        TransformKind::GaussianBlur {
            kernel_min,
            kernel_max,
        } => {
            let choices = (kernel_max - kernel_min) / 2 + 1;
            let k = kernel_min + 2 * rng.random_range(0..choices);
            gaussian_blur(image, k)
        }
        TransformKind::Clahe {
            clip_limit,
            tile_grid,
        } => clahe_luma(image, clip_limit, tile_grid),
        TransformKind::CoarseDropout {
            max_holes,
            max_height,
            max_width,
            min_holes,
            min_height,
            min_width,
        } => {
            let n = rng.random_range(min_holes.unwrap_or(max_holes)..=max_holes);
            let holes: Vec<_> = (0..n)
                .map(|_| {
                    let hh = rng.random_range(min_height.unwrap_or(max_height)..=max_height).min(h);
                    let hw = rng.random_range(min_width.unwrap_or(max_width)..=max_width).min(w);
                    let y = rng.random_range(0..=h - hh);
                    let x = rng.random_range(0..=w - hw);
                    (x, y, hw, hh)
                })
                .collect();
            coarse_dropout(image, &holes)
        }
    };
    Ok(out)
}
