//! Image data model shared by every stage: 8-bit RGB rasters, real-valued
//! single-channel planes and per-pixel validity masks.

use std::path::Path;

use image::{DynamicImage, ImageError, ImageFormat, ImageReader, RgbImage};

use crate::error::{Error, Result};

/// Axis-aligned pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl Rect {
    pub fn new(x: usize, y: usize, width: usize, height: usize) -> Self {
        Self {
            x,
            y,
            width,
            height,
        }
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x && y >= self.y && x < self.x + self.width && y < self.y + self.height
    }
}

/// 8-bit, 3-channel (R, G, B) image stored row-major and channel-interleaved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    width: usize,
    height: usize,
    samples: Vec<u8>,
}

impl Raster {
    pub fn new(width: usize, height: usize, samples: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "raster dimensions must be positive, got {width}x{height}"
            )));
        }
        if samples.len() != width * height * 3 {
            return Err(Error::InvalidArgument(format!(
                "expected {} samples for a {width}x{height} RGB raster, got {}",
                width * height * 3,
                samples.len()
            )));
        }
        Ok(Self {
            width,
            height,
            samples,
        })
    }

    /// Raster filled with one color.
    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        let samples = rgb
            .iter()
            .copied()
            .cycle()
            .take(width * height * 3)
            .collect();
        Self::new(width, height, samples)
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        f: impl Fn(usize, usize) -> [u8; 3],
    ) -> Result<Self> {
        let mut samples = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                samples.extend_from_slice(&f(x, y));
            }
        }
        Self::new(width, height, samples)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn samples(&self) -> &[u8] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<u8> {
        self.samples
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.samples[i], self.samples[i + 1], self.samples[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.samples[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn pixels(&self) -> impl Iterator<Item = [u8; 3]> + '_ {
        self.samples.chunks_exact(3).map(|p| [p[0], p[1], p[2]])
    }

    pub fn crop(&self, r: Rect) -> Raster {
        let mut samples = Vec::with_capacity(r.width * r.height * 3);
        for y in r.y..r.y + r.height {
            let start = (y * self.width + r.x) * 3;
            samples.extend_from_slice(&self.samples[start..start + r.width * 3]);
        }
        Raster {
            width: r.width,
            height: r.height,
            samples,
        }
    }
}

/// Single-channel real-valued image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    width: usize,
    height: usize,
    samples: Vec<f64>,
}

impl Plane {
    pub fn new(width: usize, height: usize, samples: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "plane dimensions must be positive, got {width}x{height}"
            )));
        }
        if samples.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "expected {} samples for a {width}x{height} plane, got {}",
                width * height,
                samples.len()
            )));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "plane samples must be finite".into(),
            ));
        }
        Ok(Self {
            width,
            height,
            samples,
        })
    }

    /// Internal constructor for buffers whose invariants are already known to hold.
    pub(crate) fn from_parts(width: usize, height: usize, samples: Vec<f64>) -> Self {
        debug_assert_eq!(samples.len(), width * height);
        Self {
            width,
            height,
            samples,
        }
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut samples = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                samples.push(f(x, y));
            }
        }
        Self::new(width, height, samples)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.samples[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.samples[y * self.width + x] = v;
    }

    pub fn mean(&self) -> f64 {
        self.samples.iter().sum::<f64>() / self.samples.len() as f64
    }

    /// Population variance of the samples.
    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.samples.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / self.samples.len() as f64
    }

    pub fn crop(&self, r: Rect) -> Plane {
        let mut samples = Vec::with_capacity(r.width * r.height);
        for y in r.y..r.y + r.height {
            let start = y * self.width + r.x;
            samples.extend_from_slice(&self.samples[start..start + r.width]);
        }
        Plane::from_parts(r.width, r.height, samples)
    }
}

/// Per-pixel flag: `true` where the pixel holds real data, `false` for gaps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidityMask {
    width: usize,
    height: usize,
    flags: Vec<bool>,
}

impl ValidityMask {
    pub fn new(width: usize, height: usize, flags: Vec<bool>) -> Result<Self> {
        if flags.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "expected {} flags for a {width}x{height} mask, got {}",
                width * height,
                flags.len()
            )));
        }
        Ok(Self {
            width,
            height,
            flags,
        })
    }

    pub fn all_valid(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            flags: vec![true; width * height],
        }
    }

    pub fn all_invalid(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            flags: vec![false; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn flags(&self) -> &[bool] {
        &self.flags
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.flags[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, valid: bool) {
        self.flags[y * self.width + x] = valid;
    }

    pub fn valid_count(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }

    pub fn is_all_valid(&self) -> bool {
        self.flags.iter().all(|&f| f)
    }

    pub fn crop(&self, r: Rect) -> ValidityMask {
        let mut flags = Vec::with_capacity(r.width * r.height);
        for y in r.y..r.y + r.height {
            let start = y * self.width + r.x;
            flags.extend_from_slice(&self.flags[start..start + r.width]);
        }
        ValidityMask {
            width: r.width,
            height: r.height,
            flags,
        }
    }

    /// Black/white RGB rendering (valid = 255) for writing as PNG.
    pub fn to_raster(&self) -> Raster {
        let samples = self
            .flags
            .iter()
            .flat_map(|&f| if f { [255u8; 3] } else { [0u8; 3] })
            .collect();
        Raster {
            width: self.width,
            height: self.height,
            samples,
        }
    }
}

/// Decodes an 8-bit RGB PNG without any color transformation.
pub fn load_image(path: impl AsRef<Path>) -> Result<Raster> {
    let path = path.as_ref();
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    if reader.format() != Some(ImageFormat::Png) {
        return Err(Error::Codec {
            path: path.to_path_buf(),
            message: "not a PNG file".into(),
        });
    }
    let decoded = reader.decode().map_err(|e| codec_error(path, e))?;
    let color = decoded.color();
    let bits = color.bits_per_pixel() / u16::from(color.channel_count());
    if bits != 8 {
        return Err(Error::UnsupportedDepth {
            path: path.to_path_buf(),
            bits,
        });
    }
    match decoded {
        DynamicImage::ImageRgb8(img) => {
            let (w, h) = img.dimensions();
            Raster::new(w as usize, h as usize, img.into_raw())
        }
        other => Err(Error::UnsupportedChannels {
            path: path.to_path_buf(),
            channels: other.color().channel_count(),
        }),
    }
}

/// Encodes the raster as a lossless 8-bit RGB PNG.
pub fn save_image(raster: &Raster, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let img = RgbImage::from_raw(
        raster.width as u32,
        raster.height as u32,
        raster.samples.clone(),
    )
    .expect("raster invariants guarantee buffer length");
    img.save_with_format(path, ImageFormat::Png)
        .map_err(|e| codec_error(path, e))
}

fn codec_error(path: &Path, e: ImageError) -> Error {
    match e {
        ImageError::IoError(io) => Error::io(path, io),
        other => Error::Codec {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    }
}

/// Splits a raster into its R, G and B planes without scaling.
pub fn split_channels(raster: &Raster) -> (Plane, Plane, Plane) {
    let n = raster.width * raster.height;
    let mut r = Vec::with_capacity(n);
    let mut g = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);
    for p in raster.samples.chunks_exact(3) {
        r.push(f64::from(p[0]));
        g.push(f64::from(p[1]));
        b.push(f64::from(p[2]));
    }
    let (w, h) = raster.dims();
    (
        Plane::from_parts(w, h, r),
        Plane::from_parts(w, h, g),
        Plane::from_parts(w, h, b),
    )
}

/// Rounds half away from zero, then clamps to the 8-bit range.
#[inline]
pub fn quantize(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Interleaves three planes into a raster, quantizing each sample.
pub fn merge_channels(r: &Plane, g: &Plane, b: &Plane) -> Result<Raster> {
    if r.dims() != g.dims() {
        return Err(Error::mismatch(r.dims(), g.dims()));
    }
    if r.dims() != b.dims() {
        return Err(Error::mismatch(r.dims(), b.dims()));
    }
    let samples = r
        .samples
        .iter()
        .zip(&g.samples)
        .zip(&b.samples)
        .flat_map(|((&r, &g), &b)| [quantize(r), quantize(g), quantize(b)])
        .collect();
    Raster::new(r.width, r.height, samples)
}

pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

/// BT.601 luma, unrounded.
pub fn to_luma(raster: &Raster) -> Plane {
    let [wr, wg, wb] = LUMA_WEIGHTS;
    let samples = raster
        .pixels()
        .map(|[r, g, b]| (wr * f64::from(r) + wg * f64::from(g) + wb * f64::from(b)).min(255.0))
        .collect();
    Plane::from_parts(raster.width, raster.height, samples)
}

/// Registration/analysis channel selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Channel {
    Red,
    #[default]
    Green,
    Blue,
}

impl Channel {
    pub fn index(self) -> usize {
        match self {
            Channel::Red => 0,
            Channel::Green => 1,
            Channel::Blue => 2,
        }
    }
}

impl std::str::FromStr for Channel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "r" | "red" => Ok(Channel::Red),
            "g" | "green" => Ok(Channel::Green),
            "b" | "blue" => Ok(Channel::Blue),
            other => Err(Error::InvalidArgument(format!("unknown channel '{other}'"))),
        }
    }
}

impl std::fmt::Display for Channel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Channel::Red => "R",
            Channel::Green => "G",
            Channel::Blue => "B",
        })
    }
}
