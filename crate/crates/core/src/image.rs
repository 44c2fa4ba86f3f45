//! Planar image containers and PNG input/output.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use smokesal_tensor::{Real, Shape, Tensor};

use crate::{Error, Result};

/// Single-channel `height × width` raster in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane<T> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<T>,
}

/// Real-valued map (saliency, objectness, Lab channel...).
pub type Map = Plane<f64>;
/// 8-bit grayscale image.
pub type Gray8 = Plane<u8>;
/// Binary mask.
pub type Mask = Plane<bool>;

impl<T: Clone> Plane<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Plane {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::invalid(format!(
                "plane data length {} does not match {width}×{height}",
                data.len()
            )));
        }
        Ok(Plane {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Plane {
            width,
            height,
            data,
        }
    }

    pub fn get(&self, x: usize, y: usize) -> &T {
        &self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: T) {
        self.data[y * self.width + x] = v;
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn size(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn map<U>(&self, f: impl Fn(&T) -> U) -> Plane<U> {
        Plane {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn same_size<U>(&self, other: &Plane<U>) -> bool {
        self.width == other.width && self.height == other.height
    }
}

impl Mask {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Tight bounding rectangle `(x0, y0, x1, y1)` with exclusive upper
    /// bounds, or `None` for an empty mask.
    pub fn bounding_box(&self) -> Option<(usize, usize, usize, usize)> {
        let mut bb: Option<(usize, usize, usize, usize)> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if *self.get(x, y) {
                    bb = Some(match bb {
                        None => (x, y, x + 1, y + 1),
                        Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x + 1), y1.max(y + 1)),
                    });
                }
            }
        }
        bb
    }

    /// Mask as 8-bit image with 255 for set pixels.
    pub fn to_gray8(&self) -> Gray8 {
        self.map(|&b| if b { 255 } else { 0 })
    }
}

impl Gray8 {
    /// Pixels ≥ 128 are set.
    pub fn to_mask(&self) -> Mask {
        self.map(|&v| v >= 128)
    }

    pub fn to_unit(&self) -> Map {
        self.map(|&v| v as f64 / 255.0)
    }
}

impl Map {
    /// Values in `[0, 1]` scaled to `[0, 255]` with round-half-away-from-zero.
    pub fn unit_to_gray8(&self) -> Gray8 {
        self.map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}

/// Three-channel image with values in `[0, 1]`, stored planar (R, G, B).
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub channels: [Vec<f64>; 3],
}

impl RgbImage {
    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        RgbImage {
            width,
            height,
            channels: rgb.map(|v| vec![v; width * height]),
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Self {
        let mut img = Self::filled(width, height, [0.0; 3]);
        for y in 0..height {
            for x in 0..width {
                let v = f(x, y);
                for (c, plane) in img.channels.iter_mut().enumerate() {
                    plane[y * width + x] = v[c];
                }
            }
        }
        img
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = y * self.width + x;
        [self.channels[0][i], self.channels[1][i], self.channels[2][i]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, v: [f64; 3]) {
        let i = y * self.width + x;
        for c in 0..3 {
            self.channels[c][i] = v[c];
        }
    }

    pub fn size(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Quantizes to 8 bits per channel (round half away from zero).
    pub fn to_u8(&self) -> [Vec<u8>; 3] {
        self.channels.clone().map(|p| {
            p.iter()
                .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
                .collect()
        })
    }

    /// Quantizes to 8 bits and back, so the image equals what a PNG
    /// round-trip would produce.
    pub fn quantized(&self) -> RgbImage {
        let q = self.to_u8();
        RgbImage {
            width: self.width,
            height: self.height,
            channels: q.map(|p| p.iter().map(|&v| v as f64 / 255.0).collect()),
        }
    }

    /// ITU-R BT.601 luma in `[0, 1]`.
    pub fn luma(&self) -> Map {
        Plane {
            width: self.width,
            height: self.height,
            data: (0..self.width * self.height)
                .map(|i| {
                    0.299 * self.channels[0][i] + 0.587 * self.channels[1][i] + 0.114 * self.channels[2][i]
                })
                .collect(),
        }
    }

    /// `1 × 3 × H × W` tensor.
    pub fn to_tensor(&self) -> Tensor {
        let data = self
            .channels
            .iter()
            .flat_map(|p| p.iter().map(|&v| v as Real))
            .collect();
        Tensor::from_vec(Shape::new(1, 3, self.height, self.width), data).expect("sizes agree")
    }
}

/// `1 × 1 × H × W` tensor of a real map.
pub fn map_to_tensor(map: &Map) -> Tensor {
    Tensor::from_vec(
        Shape::new(1, 1, map.height, map.width),
        map.data.iter().map(|&v| v as Real).collect(),
    )
    .expect("sizes agree")
}

/// Map from channel 0 of batch item `n`.
pub fn tensor_to_map(t: &Tensor, n: usize) -> Map {
    let s = t.shape();
    Plane {
        width: s.w,
        height: s.h,
        data: t.plane(n, 0).iter().map(|&v| v as f64).collect(),
    }
}

/// Decoded PNG, widened to 16 bits per sample.
struct Decoded {
    width: usize,
    height: usize,
    channels: usize,
    samples: Vec<u16>,
    max: u16,
}

fn decode(path: &Path) -> Result<Decoded> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::EXPAND);
    let corrupt = |e: png::DecodingError| Error::data(path, format!("invalid PNG: {e}"));
    let mut reader = decoder.read_info().map_err(corrupt)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::data(path, "PNG too large"))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(corrupt)?;
    let channels = info.color_type.samples();
    let (width, height) = (info.width as usize, info.height as usize);
    buf.truncate(info.buffer_size());
    let (samples, max): (Vec<u16>, u16) = match info.bit_depth {
        png::BitDepth::Sixteen => (
            buf.chunks_exact(2)
                .map(|c| u16::from_be_bytes([c[0], c[1]]))
                .collect(),
            u16::MAX,
        ),
        png::BitDepth::Eight => (buf.iter().map(|&v| v as u16).collect(), 255),
        other => return Err(Error::data(path, format!("unsupported bit depth {other:?}"))),
    };
    // Rows may carry padding only for sub-byte depths, which EXPAND removes.
    if samples.len() != width * height * channels {
        return Err(Error::data(path, "unexpected PNG buffer layout"));
    }
    Ok(Decoded {
        width,
        height,
        channels,
        samples,
        max,
    })
}

pub fn read_rgb(path: impl AsRef<Path>) -> Result<RgbImage> {
    let d = decode(path.as_ref())?;
    let scale = d.max as f64;
    Ok(RgbImage::from_fn(d.width, d.height, |x, y| {
        let i = (y * d.width + x) * d.channels;
        match d.channels {
            1 | 2 => [d.samples[i] as f64 / scale; 3],
            _ => [
                d.samples[i] as f64 / scale,
                d.samples[i + 1] as f64 / scale,
                d.samples[i + 2] as f64 / scale,
            ],
        }
    }))
}

/// Reads an 8-bit single-channel image; colour images use their first channel.
pub fn read_gray8(path: impl AsRef<Path>) -> Result<Gray8> {
    let path = path.as_ref();
    let d = decode(path)?;
    if d.max != 255 {
        return Err(Error::data(path, "expected an 8-bit image"));
    }
    Ok(Plane {
        width: d.width,
        height: d.height,
        data: d.samples.iter().step_by(d.channels).map(|&v| v as u8).collect(),
    })
}

pub fn read_gray16(path: impl AsRef<Path>) -> Result<Plane<u16>> {
    let path = path.as_ref();
    let d = decode(path)?;
    if d.channels != 1 {
        return Err(Error::data(path, "expected a single-channel image"));
    }
    Ok(Plane {
        width: d.width,
        height: d.height,
        data: d.samples,
    })
}

/// Reads the `tEXt` chunk stored under `keyword`, if any.
pub fn read_text_chunk(path: impl AsRef<Path>, keyword: &str) -> Result<Option<String>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = png::Decoder::new(BufReader::new(file))
        .read_info()
        .map_err(|e| Error::data(path, format!("invalid PNG: {e}")))?;
    Ok(reader
        .info()
        .uncompressed_latin1_text
        .iter()
        .find(|c| c.keyword == keyword)
        .map(|c| c.text.clone()))
}

/// Keyword of the text chunk that carries run provenance.
pub const PROVENANCE_KEY: &str = "provenance";

fn write_png(
    path: &Path,
    width: usize,
    height: usize,
    color: png::ColorType,
    depth: png::BitDepth,
    data: &[u8],
    provenance: Option<&str>,
) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(depth);
    let fail = |e: png::EncodingError| Error::data(path, format!("PNG encoding failed: {e}"));
    if let Some(text) = provenance {
        enc.add_text_chunk(PROVENANCE_KEY.to_string(), text.to_string())
            .map_err(fail)?;
    }
    let mut writer = enc.write_header().map_err(fail)?;
    writer.write_image_data(data).map_err(fail)?;
    writer.finish().map_err(fail)?;
    Ok(())
}

pub fn write_gray8(path: impl AsRef<Path>, img: &Gray8, provenance: Option<&str>) -> Result<()> {
    write_png(
        path.as_ref(),
        img.width,
        img.height,
        png::ColorType::Grayscale,
        png::BitDepth::Eight,
        &img.data,
        provenance,
    )
}

pub fn write_gray16(path: impl AsRef<Path>, img: &Plane<u16>, provenance: Option<&str>) -> Result<()> {
    let bytes: Vec<u8> = img.data.iter().flat_map(|v| v.to_be_bytes()).collect();
    write_png(
        path.as_ref(),
        img.width,
        img.height,
        png::ColorType::Grayscale,
        png::BitDepth::Sixteen,
        &bytes,
        provenance,
    )
}

pub fn write_rgb(path: impl AsRef<Path>, img: &RgbImage, provenance: Option<&str>) -> Result<()> {
    let q = img.to_u8();
    let mut bytes = Vec::with_capacity(img.width * img.height * 3);
    for i in 0..img.width * img.height {
        bytes.extend([q[0][i], q[1][i], q[2][i]]);
    }
    write_png(
        path.as_ref(),
        img.width,
        img.height,
        png::ColorType::Rgb,
        png::BitDepth::Eight,
        &bytes,
        provenance,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_roundtrips() {
        let dir = tempfile::tempdir().unwrap();
        let rgb = RgbImage::from_fn(5, 3, |x, y| [x as f64 / 4.0, y as f64 / 2.0, 0.5]).quantized();
        write_rgb(dir.path().join("a.png"), &rgb, Some("{\"seed\":1}")).unwrap();
        assert_eq!(read_rgb(dir.path().join("a.png")).unwrap(), rgb);
        assert_eq!(
            read_text_chunk(dir.path().join("a.png"), PROVENANCE_KEY).unwrap().as_deref(),
            Some("{\"seed\":1}")
        );
        let g = Plane::from_fn(4, 2, |x, y| (x * 60 + y) as u8);
        write_gray8(dir.path().join("g.png"), &g, None).unwrap();
        assert_eq!(read_gray8(dir.path().join("g.png")).unwrap(), g);
        let l = Plane::from_fn(3, 3, |x, y| (x * 1000 + y) as u16);
        write_gray16(dir.path().join("l.png"), &l, None).unwrap();
        assert_eq!(read_gray16(dir.path().join("l.png")).unwrap(), l);
    }

    #[test]
    fn corrupt_file_is_data_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.png");
        std::fs::write(&p, b"not a png").unwrap();
        let err = read_rgb(&p).unwrap_err();
        assert_eq!(err.kind(), crate::ErrorKind::Data);
        assert!(err.to_string().contains("bad.png"));
    }

    #[test]
    fn mask_bounding_box() {
        let mut m = Mask::filled(6, 5, false);
        assert_eq!(m.bounding_box(), None);
        m.set(2, 1, true);
        m.set(4, 3, true);
        assert_eq!(m.bounding_box(), Some((2, 1, 5, 4)));
    }
}
