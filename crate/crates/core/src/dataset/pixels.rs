use std::path::Path;

use sha2::{Digest, Sha256};

use super::DatasetError;

/// Side length fed to every image encoder.
pub const TARGET_SIZE: u32 = 224;

/// An 8-bit RGB image stored row-major, channels interleaved.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PixelGrid {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl PixelGrid {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Result<Self, DatasetError> {
        if width == 0 || height == 0 {
            return Err(DatasetError::InvalidImage(format!(
                "zero-sized image {width}x{height}"
            )));
        }
        let expected = width as usize * height as usize * 3;
        if data.len() != expected {
            return Err(DatasetError::InvalidImage(format!(
                "expected {expected} bytes for {width}x{height}x3, got {}",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    /// Builds a grid from wider integer samples, rejecting anything outside [0, 255].
    pub fn from_values(width: u32, height: u32, values: &[i32]) -> Result<Self, DatasetError> {
        let data = values
            .iter()
            .map(|&v| {
                u8::try_from(v)
                    .map_err(|_| DatasetError::InvalidImage(format!("pixel value {v} outside [0,255]")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(width, height, data)
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        let data = rgb
            .iter()
            .copied()
            .cycle()
            .take(width as usize * height as usize * 3)
            .collect();
        Self { width, height, data }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    fn offset(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * 3
    }

    #[inline]
    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let o = self.offset(x, y);
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let o = self.offset(x, y);
        self.data[o..o + 3].copy_from_slice(&rgb);
    }

    /// Hex SHA-256 over dimensions and pixel bytes.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.width.to_le_bytes());
        h.update(self.height.to_le_bytes());
        h.update(&self.data);
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn from_rgb_image(img: image::RgbImage) -> Result<Self, DatasetError> {
        let (w, h) = img.dimensions();
        Self::new(w, h, img.into_raw())
    }

    pub fn to_rgb_image(&self) -> image::RgbImage {
        image::RgbImage::from_raw(self.width, self.height, self.data.clone())
            .expect("dimensions validated at construction")
    }

    pub fn save_png(&self, path: &Path) -> Result<(), DatasetError> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| DatasetError::io(parent, e))?;
        }
        self.to_rgb_image()
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| DatasetError::UnreadableImage {
                path: path.to_path_buf(),
                message: e.to_string(),
            })
    }
}

/// Decodes a JPEG or PNG file into RGB.
pub fn load_image(path: &Path) -> Result<PixelGrid, DatasetError> {
    let unreadable = |message: String| DatasetError::UnreadableImage {
        path: path.to_path_buf(),
        message,
    };
    let bytes = std::fs::read(path).map_err(|e| unreadable(e.to_string()))?;
    decode_image(&bytes).map_err(|e| match e {
        DatasetError::InvalidImage(message) => unreadable(message),
        other => other,
    })
}

/// Largest accepted decoded side, in pixels.
pub const MAX_DECODE_SIDE: u32 = 16_384;

/// Decodes in-memory JPEG or PNG bytes into RGB. The format is sniffed from
/// the content; oversized images are rejected before allocation.
pub fn decode_image(bytes: &[u8]) -> Result<PixelGrid, DatasetError> {
    let invalid = |e: &dyn std::fmt::Display| DatasetError::InvalidImage(e.to_string());
    let mut reader = image::ImageReader::new(std::io::Cursor::new(bytes))
        .with_guessed_format()
        .map_err(|e| invalid(&e))?;
    let mut limits = image::Limits::default();
    limits.max_image_width = Some(MAX_DECODE_SIDE);
    limits.max_image_height = Some(MAX_DECODE_SIDE);
    limits.max_alloc = Some(1 << 30);
    reader.limits(limits);
    let img = reader.decode().map_err(|e| invalid(&e))?;
    PixelGrid::from_rgb_image(img.to_rgb8())
}

/// Bilinear resize to `width`×`height` without preserving aspect ratio.
///
/// Sample positions use the align-corners convention: output corners sample
/// input corners exactly.
pub fn resize_image(image: &PixelGrid, width: u32, height: u32) -> Result<PixelGrid, DatasetError> {
    if width == 0 || height == 0 {
        return Err(DatasetError::InvalidImage(format!(
            "zero-sized resize target {width}x{height}"
        )));
    }
    if image.width == width && image.height == height {
        return Ok(image.clone());
    }
    let scale = |src: u32, dst: u32| {
        if dst > 1 {
            (src - 1) as f64 / (dst - 1) as f64
        } else {
            0.0
        }
    };
    let sx = scale(image.width, width);
    let sy = scale(image.height, height);
    let mut out = vec![0u8; width as usize * height as usize * 3];
    for oy in 0..height {
        let fy = oy as f64 * sy;
        let y0 = (fy.floor() as u32).min(image.height - 1);
        let y1 = (y0 + 1).min(image.height - 1);
        let wy = fy - y0 as f64;
        for ox in 0..width {
            let fx = ox as f64 * sx;
            let x0 = (fx.floor() as u32).min(image.width - 1);
            let x1 = (x0 + 1).min(image.width - 1);
            let wx = fx - x0 as f64;
            let (p00, p10, p01, p11) = (
                image.pixel(x0, y0),
                image.pixel(x1, y0),
                image.pixel(x0, y1),
                image.pixel(x1, y1),
            );
            let o = (oy as usize * width as usize + ox as usize) * 3;
            for c in 0..3 {
                let top = p00[c] as f64 * (1.0 - wx) + p10[c] as f64 * wx;
                let bottom = p01[c] as f64 * (1.0 - wx) + p11[c] as f64 * wx;
                let v = top * (1.0 - wy) + bottom * wy;
                out[o + c] = v.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    PixelGrid::new(width, height, out)
}
