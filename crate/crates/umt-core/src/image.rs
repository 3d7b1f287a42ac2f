//! Planar RGB images in 64-bit floats, plus the two on-disk encodings used
//! by the dataset layout: 8-bit PNG for inspection and a lossless raw tensor
//! sidecar for bit-exact pipelines.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::geometry::BBox;
use crate::{Error, Result};

const RAW_MAGIC: &[u8; 8] = b"UMTRAW1\0";

/// H x W x 3 image, planar channel-major layout, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(h: usize, w: usize) -> Self {
        Image {
            h,
            w,
            data: vec![0.0; h * w * 3],
        }
    }

    pub fn filled(h: usize, w: usize, rgb: [f64; 3]) -> Self {
        let mut img = Image::new(h, w);
        for c in 0..3 {
            let plane = &mut img.data[c * h * w..(c + 1) * h * w];
            plane.fill(rgb[c]);
        }
        img
    }

    pub fn from_data(h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != h * w * 3 {
            return Err(Error::config(format!(
                "image data length {} does not match {h}x{w}x3",
                data.len()
            )));
        }
        Ok(Image { h, w, data })
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.h + y) * self.w + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.h + y) * self.w + x] = v;
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        [self.get(0, y, x), self.get(1, y, x), self.get(2, y, x)]
    }

    pub fn set_pixel(&mut self, y: usize, x: usize, rgb: [f64; 3]) {
        for c in 0..3 {
            self.set(c, y, x, rgb[c]);
        }
    }

    pub fn clip01(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    pub fn mean_channel(&self, c: usize) -> f64 {
        let plane = &self.data[c * self.h * self.w..(c + 1) * self.h * self.w];
        plane.iter().sum::<f64>() / plane.len() as f64
    }

    /// Encodes to 8-bit RGB PNG. Values are clamped then rounded; the raw
    /// sidecar is the lossless representation.
    pub fn write_png(&self, path: &Path) -> Result<()> {
        let file = File::create(path)?;
        let mut encoder = png::Encoder::new(BufWriter::new(file), self.w as u32, self.h as u32);
        encoder.set_color(png::ColorType::Rgb);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder
            .write_header()
            .map_err(|e| Error::corrupt(format!("png encode: {e}")))?;
        let mut buf = Vec::with_capacity(self.h * self.w * 3);
        for y in 0..self.h {
            for x in 0..self.w {
                for c in 0..3 {
                    let v = (self.get(c, y, x).clamp(0.0, 1.0) * 255.0).round() as u8;
                    buf.push(v);
                }
            }
        }
        writer
            .write_image_data(&buf)
            .map_err(|e| Error::corrupt(format!("png encode: {e}")))?;
        Ok(())
    }

    /// Writes the lossless raw tensor: a small header then `h*w*3` f64
    /// little-endian values in planar order.
    pub fn write_raw(&self, path: &Path) -> Result<()> {
        let file = File::create(path)?;
        let mut out = BufWriter::new(file);
        out.write_all(RAW_MAGIC)?;
        out.write_all(&(self.h as u32).to_le_bytes())?;
        out.write_all(&(self.w as u32).to_le_bytes())?;
        out.write_all(&3u32.to_le_bytes())?;
        for v in &self.data {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_raw(path: &Path) -> Result<Self> {
        let file = File::open(path)?;
        let mut inp = BufReader::new(file);
        let mut magic = [0u8; 8];
        inp.read_exact(&mut magic)?;
        if &magic != RAW_MAGIC {
            return Err(Error::corrupt(format!("bad raw magic in {}", path.display())));
        }
        let mut u32buf = [0u8; 4];
        inp.read_exact(&mut u32buf)?;
        let h = u32::from_le_bytes(u32buf) as usize;
        inp.read_exact(&mut u32buf)?;
        let w = u32::from_le_bytes(u32buf) as usize;
        inp.read_exact(&mut u32buf)?;
        let c = u32::from_le_bytes(u32buf) as usize;
        if c != 3 || h == 0 || w == 0 || h * w > 1 << 26 {
            return Err(Error::corrupt(format!(
                "implausible raw dimensions {h}x{w}x{c} in {}",
                path.display()
            )));
        }
        let mut data = vec![0.0f64; h * w * 3];
        let mut f64buf = [0u8; 8];
        for v in &mut data {
            inp.read_exact(&mut f64buf)?;
            *v = f64::from_le_bytes(f64buf);
        }
        Ok(Image { h, w, data })
    }
}

/// Draws a 1px box outline; coordinates are rounded to the pixel grid.
pub fn draw_box_outline(img: &mut Image, bbox: &BBox, rgb: [f64; 3]) {
    let x1 = bbox.x.round().max(0.0) as usize;
    let y1 = bbox.y.round().max(0.0) as usize;
    let x2 = (bbox.x2().round() as usize).min(img.width().saturating_sub(1));
    let y2 = (bbox.y2().round() as usize).min(img.height().saturating_sub(1));
    if x1 >= img.width() || y1 >= img.height() {
        return;
    }
    for x in x1..=x2 {
        img.set_pixel(y1, x, rgb);
        img.set_pixel(y2, x, rgb);
    }
    for y in y1..=y2 {
        img.set_pixel(y, x1, rgb);
        img.set_pixel(y, x2, rgb);
    }
}

/// 3x5 bitmap glyphs for "0123456789." — enough to stamp score labels onto
/// annotated dumps without a font dependency.
const GLYPHS: [(char, [u8; 5]); 11] = [
    ('0', [0b111, 0b101, 0b101, 0b101, 0b111]),
    ('1', [0b010, 0b110, 0b010, 0b010, 0b111]),
    ('2', [0b111, 0b001, 0b111, 0b100, 0b111]),
    ('3', [0b111, 0b001, 0b111, 0b001, 0b111]),
    ('4', [0b101, 0b101, 0b111, 0b001, 0b001]),
    ('5', [0b111, 0b100, 0b111, 0b001, 0b111]),
    ('6', [0b111, 0b100, 0b111, 0b101, 0b111]),
    ('7', [0b111, 0b001, 0b010, 0b010, 0b010]),
    ('8', [0b111, 0b101, 0b111, 0b101, 0b111]),
    ('9', [0b111, 0b101, 0b111, 0b001, 0b111]),
    ('.', [0b000, 0b000, 0b000, 0b000, 0b010]),
];

/// Stamps `text` (digits and dots only) at `(y, x)`.
pub fn draw_label(img: &mut Image, y: i64, x: i64, text: &str, rgb: [f64; 3]) {
    let mut cx = x;
    for ch in text.chars() {
        if let Some((_, rows)) = GLYPHS.iter().find(|(g, _)| *g == ch) {
            for (ry, row) in rows.iter().enumerate() {
                for rx in 0..3 {
                    if row >> (2 - rx) & 1 == 1 {
                        let py = y + ry as i64;
                        let px = cx + rx as i64;
                        if py >= 0
                            && px >= 0
                            && (py as usize) < img.height()
                            && (px as usize) < img.width()
                        {
                            img.set_pixel(py as usize, px as usize, rgb);
                        }
                    }
                }
            }
        }
        cx += 4;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raw_roundtrip_is_lossless() {
        let dir = std::env::temp_dir().join(format!("umt_img_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let mut img = Image::new(5, 7);
        for (i, v) in img.data_mut().iter_mut().enumerate() {
            *v = (i as f64).sin() * 0.5 + 0.5;
        }
        let path = dir.join("t.bin");
        img.write_raw(&path).unwrap();
        let back = Image::read_raw(&path).unwrap();
        assert_eq!(img, back);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn png_write_is_deterministic() {
        let dir = std::env::temp_dir().join(format!("umt_png_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let mut img = Image::new(8, 8);
        for (i, v) in img.data_mut().iter_mut().enumerate() {
            *v = (i % 97) as f64 / 96.0;
        }
        let p1 = dir.join("a.png");
        let p2 = dir.join("b.png");
        img.write_png(&p1).unwrap();
        img.write_png(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        std::fs::remove_dir_all(&dir).ok();
    }
}
