//! Binary PPM (P6) and PGM (P5) images, and the VOC label palette.

use std::io::{self, Read, Write};

use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("malformed image: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

type Result<T> = std::result::Result<T, ImageError>;

/// 8-bit interleaved RGB image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

pub const IGNORE_LABEL: u8 = 255;

/// Per-pixel class labels, rendered through [`palette_color`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PaletteImage {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u8>,
}

/// The PASCAL VOC colour map: bits of the label spread over the high bits
/// of R, G and B. Entries 0..21 are the VOC classes; 255 is the void colour.
pub fn palette_color(label: u8) -> [u8; 3] {
    let mut rgb = [0u8; 3];
    let mut c = label;
    for shift in (0..8).rev() {
        for (ch, v) in rgb.iter_mut().enumerate() {
            *v |= ((c >> ch) & 1) << shift;
        }
        c >>= 3;
    }
    rgb
}

pub fn voc_palette() -> [[u8; 3]; 21] {
    std::array::from_fn(|i| palette_color(i as u8))
}

impl PaletteImage {
    pub fn to_rgb(&self) -> RgbImage {
        RgbImage {
            width: self.width,
            height: self.height,
            data: self.labels.iter().flat_map(|&l| palette_color(l)).collect(),
        }
    }
}

fn token<R: Read>(r: &mut R) -> Result<String> {
    let mut out = String::new();
    let mut byte = [0u8; 1];
    loop {
        if r.read(&mut byte)? == 0 {
            return if out.is_empty() {
                Err(ImageError::Format("truncated header".into()))
            } else {
                Ok(out)
            };
        }
        match byte[0] {
            b'#' if out.is_empty() => {
                while r.read(&mut byte)? == 1 && byte[0] != b'\n' {}
            }
            b if b.is_ascii_whitespace() => {
                if !out.is_empty() {
                    return Ok(out);
                }
            }
            b => out.push(b as char),
        }
    }
}

fn number<R: Read>(r: &mut R, what: &str) -> Result<usize> {
    let t = token(r)?;
    t.parse().map_err(|_| ImageError::Format(format!("bad {what} `{t}`")))
}

fn read_netpbm<R: Read>(mut r: R, magic: &str, channels: usize) -> Result<(usize, usize, Vec<u8>)> {
    let m = token(&mut r)?;
    if m != magic {
        return Err(ImageError::Format(format!("expected {magic}, found `{m}`")));
    }
    let width = number(&mut r, "width")?;
    let height = number(&mut r, "height")?;
    let maxval = number(&mut r, "maxval")?;
    if maxval != 255 {
        return Err(ImageError::Format(format!("only maxval 255 is supported, got {maxval}")));
    }
    if width == 0 || height == 0 {
        return Err(ImageError::Format("empty image".into()));
    }
    let mut data = vec![0u8; width * height * channels];
    r.read_exact(&mut data)
        .map_err(|_| ImageError::Format(format!("expected {} bytes of pixel data", data.len())))?;
    Ok((width, height, data))
}

pub fn read_ppm<R: Read>(r: R) -> Result<RgbImage> {
    let (width, height, data) = read_netpbm(r, "P6", 3)?;
    Ok(RgbImage { width, height, data })
}

pub fn write_ppm<W: Write>(mut w: W, img: &RgbImage) -> io::Result<()> {
    write!(w, "P6\n{} {}\n255\n", img.width, img.height)?;
    w.write_all(&img.data)
}

/// Returns (width, height, pixels).
pub fn read_pgm<R: Read>(r: R) -> Result<(usize, usize, Vec<u8>)> {
    read_netpbm(r, "P5", 1)
}

pub fn write_pgm<W: Write>(mut w: W, width: usize, height: usize, pixels: &[u8]) -> io::Result<()> {
    write!(w, "P5\n{width} {height}\n255\n")?;
    w.write_all(pixels)
}

/// (1, 3, H, W) tensor of `(v / 255 - mean) / std` per channel.
pub fn to_tensor(img: &RgbImage, mean: [f32; 3], std: [f32; 3]) -> Tensor {
    Tensor::from_fn([1, 3, img.height, img.width], |_, c, y, x| {
        let v = img.data[(y * img.width + x) * 3 + c] as f32 / 255.0;
        (v - mean[c]) / std[c]
    })
}

/// Per-pixel argmax over channels of a (1, K, H, W) score map. Ties go to
/// the lowest class.
pub fn argmax_labels(scores: &Tensor) -> PaletteImage {
    let s = scores.shape();
    let plane = s.plane();
    let mut best = vec![f32::NEG_INFINITY; plane];
    let mut labels = vec![0u8; plane];
    for c in 0..s.c {
        for (i, &v) in scores.plane(0, c).iter().enumerate() {
            if v > best[i] {
                best[i] = v;
                labels[i] = c.min(254) as u8;
            }
        }
    }
    PaletteImage {
        width: s.w,
        height: s.h,
        labels,
    }
}
