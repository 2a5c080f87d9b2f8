use super::{Sketch, SketchError, CANVAS_SIZE};

/// Length of the raw image header: width then height, each a little-endian u32.
pub const RAW_HEADER_LEN: usize = 8;

/// Row-major RGB image on a white background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterImage {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl RasterImage {
    pub fn blank(width: u32, height: u32) -> Self {
        RasterImage {
            width,
            height,
            pixels: vec![255; width as usize * height as usize * 3],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    fn put(&mut self, x: i64, y: i64, color: [u8; 3]) {
        if x < 0 || y < 0 || x >= i64::from(self.width) || y >= i64::from(self.height) {
            return;
        }
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.pixels[i..i + 3].copy_from_slice(&color);
    }

    /// Fraction of pixels that are not pure white.
    pub fn ink_coverage(&self) -> f64 {
        let inked = self
            .pixels
            .chunks_exact(3)
            .filter(|px| px != &[255, 255, 255])
            .count();
        inked as f64 / (self.width as usize * self.height as usize) as f64
    }

    /// Channel-major `[3, H, W]` values scaled to `[0, 1]`.
    pub fn to_chw(&self) -> Vec<f64> {
        let plane = self.width as usize * self.height as usize;
        let mut out = vec![0.0; plane * 3];
        for (i, px) in self.pixels.chunks_exact(3).enumerate() {
            for c in 0..3 {
                out[c * plane + i] = f64::from(px[c]) / 255.0;
            }
        }
        out
    }

    /// Normative raw container: 8-byte header followed by the RGB bytes.
    pub fn to_raw_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(RAW_HEADER_LEN + self.pixels.len());
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn from_raw_bytes(bytes: &[u8]) -> Result<Self, SketchError> {
        if bytes.len() < RAW_HEADER_LEN {
            return Err(SketchError::RawImage("missing header".into()));
        }
        let width = u32::from_le_bytes(bytes[0..4].try_into().unwrap());
        let height = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        let expected = width as usize * height as usize * 3;
        let body = &bytes[RAW_HEADER_LEN..];
        if body.len() != expected {
            return Err(SketchError::RawImage(format!(
                "expected {expected} pixel bytes, found {}",
                body.len()
            )));
        }
        Ok(RasterImage {
            width,
            height,
            pixels: body.to_vec(),
        })
    }

    pub fn to_png(&self) -> Vec<u8> {
        let mut out = Vec::new();
        {
            let mut encoder = png::Encoder::new(&mut out, self.width, self.height);
            encoder.set_color(png::ColorType::Rgb);
            encoder.set_depth(png::BitDepth::Eight);
            let mut writer = encoder.write_header().expect("in-memory png header");
            writer
                .write_image_data(&self.pixels)
                .expect("in-memory png body");
        }
        out
    }
}

/// Deterministic disc-stamped Bresenham rendering without anti-aliasing.
///
/// Canvas coordinates are scaled by `width / 512` (resp. height), floored to the
/// pixel grid and clamped to the image. Each stroke is stamped with a disc of
/// radius `round(scaled_width / 2)` at every rasterized point; later strokes
/// overdraw earlier ones.
pub fn rasterize(sketch: &Sketch, width: u32, height: u32) -> Result<RasterImage, SketchError> {
    if width < 16 || height < 16 {
        return Err(SketchError::RasterTooSmall { width, height });
    }
    let mut image = RasterImage::blank(width, height);
    let sx = f64::from(width) / f64::from(CANVAS_SIZE);
    let sy = f64::from(height) / f64::from(CANVAS_SIZE);
    let to_px = |v: f64, scale: f64, limit: u32| -> i64 {
        ((v * scale).floor() as i64).clamp(0, i64::from(limit) - 1)
    };
    for stroke in sketch.strokes() {
        let radius = (stroke.width * sx / 2.0).round() as i64;
        let disc = disc_offsets(radius);
        let pixels: Vec<(i64, i64)> = stroke
            .points
            .iter()
            .map(|&[x, y]| (to_px(x, sx, width), to_px(y, sy, height)))
            .collect();
        let mut stamp = |x: i64, y: i64| {
            for &(dx, dy) in &disc {
                image.put(x + dx, y + dy, stroke.color);
            }
        };
        if pixels.len() == 1 {
            stamp(pixels[0].0, pixels[0].1);
        }
        for seg in pixels.windows(2) {
            bresenham(seg[0], seg[1], &mut stamp);
        }
    }
    Ok(image)
}

fn disc_offsets(radius: i64) -> Vec<(i64, i64)> {
    let mut offsets = Vec::new();
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            if dx * dx + dy * dy <= radius * radius {
                offsets.push((dx, dy));
            }
        }
    }
    offsets
}

fn bresenham((x0, y0): (i64, i64), (x1, y1): (i64, i64), plot: &mut impl FnMut(i64, i64)) {
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    let (mut x, mut y) = (x0, y0);
    loop {
        plot(x, y);
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}
