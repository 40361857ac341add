//! Gaussian scale space: kernels, octaves, pyramids and the per-scale /
//! multi-scale mean-absolute-difference losses built on them.
//!
//! Each octave holds five layers related by four successive blurs; the first
//! layer of octave `j + 1` is the last layer of octave `j` subsampled at even
//! indices. The scale representative `F_i` is the first layer of octave
//! `i + 1`, so `S_1` compares images at half resolution and the full-resolution
//! comparison is left to [`l1_reconstruction`].

use std::borrow::Cow;

use crate::error::{Error, Result};
use crate::raster::{split_channels, Plane, Raster};

pub const LAYERS_PER_OCTAVE: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianKernel {
    size: usize,
    sigma: f64,
    weights: Vec<f64>,
}

impl GaussianKernel {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Row-major `size × size` weights.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, dx: isize, dy: isize) -> f64 {
        let r = (self.size / 2) as isize;
        self.weights[((dy + r) as usize) * self.size + (dx + r) as usize]
    }
}

impl Default for GaussianKernel {
    /// 3×3, σ = 1.
    fn default() -> Self {
        gaussian_kernel(3, 1.0).expect("default kernel parameters are valid")
    }
}

pub fn gaussian_kernel(size: usize, sigma: f64) -> Result<GaussianKernel> {
    if size == 0 || size.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "kernel size must be odd and positive, got {size}"
        )));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "kernel sigma must be positive, got {sigma}"
        )));
    }
    let r = (size / 2) as isize;
    let denom = 2.0 * sigma * sigma;
    let mut weights = Vec::with_capacity(size * size);
    for dy in -r..=r {
        for dx in -r..=r {
            weights.push((-((dx * dx + dy * dy) as f64) / denom).exp());
        }
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    Ok(GaussianKernel {
        size,
        sigma,
        weights,
    })
}

/// Reflect-101 index mapping (`dcb|abcd|cba`), valid for any offset.
#[inline]
pub(crate) fn reflect101(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let n = n as isize;
    let period = 2 * (n - 1);
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - m;
    }
    m as usize
}

/// 2-D convolution with reflect-101 borders; output has the input's dimensions.
pub fn blur(p: &Plane, k: &GaussianKernel) -> Plane {
    let (w, h) = p.dims();
    let r = (k.size / 2) as isize;
    let src = p.samples();
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            let mut ki = 0;
            for dy in -r..=r {
                let row = reflect101(y as isize + dy, h) * w;
                for dx in -r..=r {
                    acc += k.weights[ki] * src[row + reflect101(x as isize + dx, w)];
                    ki += 1;
                }
            }
            out[y * w + x] = acc;
        }
    }
    Plane::from_parts(w, h, out)
}

/// Keeps samples at even (row, col) indices.
pub fn downsample(p: &Plane) -> Plane {
    let (w, h) = p.dims();
    let (ow, oh) = (w.div_ceil(2), h.div_ceil(2));
    let mut out = Vec::with_capacity(ow * oh);
    for y in (0..h).step_by(2) {
        for x in (0..w).step_by(2) {
            out.push(p.get(x, y));
        }
    }
    Plane::from_parts(ow, oh, out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Octave {
    layers: Vec<Plane>,
}

impl Octave {
    fn build(base: Plane, k: &GaussianKernel) -> Self {
        let mut layers = Vec::with_capacity(LAYERS_PER_OCTAVE);
        layers.push(base);
        for _ in 1..LAYERS_PER_OCTAVE {
            let next = blur(layers.last().expect("non-empty"), k);
            layers.push(next);
        }
        Octave { layers }
    }

    pub fn layers(&self) -> &[Plane] {
        &self.layers
    }

    pub fn first(&self) -> &Plane {
        &self.layers[0]
    }

    pub fn last(&self) -> &Plane {
        &self.layers[LAYERS_PER_OCTAVE - 1]
    }

    pub fn dims(&self) -> (usize, usize) {
        self.layers[0].dims()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPyramid {
    octaves: Vec<Octave>,
}

impl GaussianPyramid {
    pub fn octaves(&self) -> &[Octave] {
        &self.octaves
    }

    pub fn base_dims(&self) -> (usize, usize) {
        self.octaves[0].dims()
    }

    pub fn depth(&self) -> usize {
        self.octaves.len()
    }
}

fn check_depth(dims: (usize, usize), n_octaves: usize) -> Result<()> {
    let need = 1usize << (n_octaves - 1).min(usize::BITS as usize - 1);
    if dims.0 < need || dims.1 < need {
        return Err(Error::TooSmall {
            width: dims.0,
            height: dims.1,
            requirement: format!("{n_octaves} octaves need at least {need} pixels per side"),
        });
    }
    Ok(())
}

pub fn build_pyramid(p: &Plane, n_octaves: usize, k: &GaussianKernel) -> Result<GaussianPyramid> {
    if n_octaves == 0 {
        return Err(Error::InvalidArgument(
            "a pyramid needs at least one octave".into(),
        ));
    }
    check_depth(p.dims(), n_octaves)?;
    let mut octaves: Vec<Octave> = Vec::with_capacity(n_octaves);
    octaves.push(Octave::build(p.clone(), k));
    for _ in 1..n_octaves {
        let base = downsample(octaves.last().expect("non-empty").last());
        octaves.push(Octave::build(base, k));
    }
    Ok(GaussianPyramid { octaves })
}

/// `F_i`: first layer of octave `i + 1` (scale indices start at 1).
pub fn scale_representative(pyr: &GaussianPyramid, i: usize) -> Result<&Plane> {
    if i == 0 {
        return Err(Error::InvalidArgument("scale indices start at 1".into()));
    }
    pyr.octaves.get(i).map(Octave::first).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "scale {i} needs {} octaves, pyramid has {}",
            i + 1,
            pyr.depth()
        ))
    })
}

/// `F_1 .. F_n` without keeping the intermediate layers.
pub fn scale_representatives(p: &Plane, n: usize, k: &GaussianKernel) -> Result<Vec<Plane>> {
    check_depth(p.dims(), n + 1)?;
    let mut out = Vec::with_capacity(n);
    let mut current = p.clone();
    for _ in 0..n {
        for _ in 1..LAYERS_PER_OCTAVE {
            current = blur(&current, k);
        }
        current = downsample(&current);
        out.push(current.clone());
    }
    Ok(out)
}

/// Anything that can be viewed as a stack of equally sized planes.
pub trait Channels {
    fn dims(&self) -> (usize, usize);
    fn planes(&self) -> Cow<'_, [Plane]>;
}

impl Channels for Plane {
    fn dims(&self) -> (usize, usize) {
        Plane::dims(self)
    }

    fn planes(&self) -> Cow<'_, [Plane]> {
        Cow::Borrowed(std::slice::from_ref(self))
    }
}

impl Channels for Raster {
    fn dims(&self) -> (usize, usize) {
        Raster::dims(self)
    }

    fn planes(&self) -> Cow<'_, [Plane]> {
        let (r, g, b) = split_channels(self);
        Cow::Owned(vec![r, g, b])
    }
}

fn mean_abs_diff(a: &Plane, b: &Plane) -> f64 {
    let n = a.samples().len() as f64;
    a.samples()
        .iter()
        .zip(b.samples())
        .map(|(x, y)| (x - y).abs())
        .sum::<f64>()
        / n
}

fn same_dims<T: Channels>(a: &T, b: &T) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::mismatch(a.dims(), b.dims()));
    }
    Ok(())
}

/// `[S_1, .., S_n]`, each averaged over channels.
pub fn scale_losses<T: Channels>(a: &T, b: &T, n: usize, k: &GaussianKernel) -> Result<Vec<f64>> {
    same_dims(a, b)?;
    let (pa, pb) = (a.planes(), b.planes());
    let mut totals = vec![0.0; n];
    for (ca, cb) in pa.iter().zip(pb.iter()) {
        let fa = scale_representatives(ca, n, k)?;
        let fb = scale_representatives(cb, n, k)?;
        for (t, (x, y)) in totals.iter_mut().zip(fa.iter().zip(&fb)) {
            *t += mean_abs_diff(x, y);
        }
    }
    let c = pa.len() as f64;
    Ok(totals.into_iter().map(|t| t / c).collect())
}

/// `S_i`: mean absolute difference between `F_i(a)` and `F_i(b)`.
pub fn scale_loss<T: Channels>(a: &T, b: &T, i: usize, k: &GaussianKernel) -> Result<f64> {
    if i == 0 {
        return Err(Error::InvalidArgument("scale indices start at 1".into()));
    }
    Ok(scale_losses(a, b, i, k)?[i - 1])
}

/// Loss weights: `lambda_l1` for the full-resolution term and
/// `lambda_scale[i - 1]` for `S_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleWeights {
    pub lambda_l1: f64,
    pub lambda_scale: Vec<f64>,
}

impl ScaleWeights {
    pub fn new(lambda_l1: f64, lambda_scale: Vec<f64>) -> Result<Self> {
        if std::iter::once(&lambda_l1)
            .chain(&lambda_scale)
            .any(|w| !(w.is_finite() && *w >= 0.0))
        {
            return Err(Error::InvalidArgument(
                "loss weights must be finite and non-negative".into(),
            ));
        }
        Ok(Self {
            lambda_l1,
            lambda_scale,
        })
    }

    /// Index of the deepest scale with a positive weight.
    pub fn deepest(&self) -> usize {
        self.lambda_scale
            .iter()
            .rposition(|&w| w > 0.0)
            .map_or(0, |i| i + 1)
    }
}

impl Default for ScaleWeights {
    fn default() -> Self {
        Self {
            lambda_l1: 100.0,
            lambda_scale: vec![100.0],
        }
    }
}

/// `Σ λ_i · S_i` over scales with positive weight.
pub fn multi_scale_loss<T: Channels>(
    a: &T,
    b: &T,
    w: &ScaleWeights,
    k: &GaussianKernel,
) -> Result<f64> {
    same_dims(a, b)?;
    let depth = w.deepest();
    if depth == 0 {
        return Ok(0.0);
    }
    let s = scale_losses(a, b, depth, k)?;
    Ok(w.lambda_scale
        .iter()
        .zip(&s)
        .filter(|(&l, _)| l > 0.0)
        .map(|(l, s)| l * s)
        .sum())
}

/// Mean absolute difference over every sample at the original resolution.
pub fn l1_reconstruction<T: Channels>(a: &T, b: &T) -> Result<f64> {
    same_dims(a, b)?;
    let (pa, pb) = (a.planes(), b.planes());
    let total: f64 = pa
        .iter()
        .zip(pb.iter())
        .map(|(x, y)| mean_abs_diff(x, y))
        .sum();
    Ok(total / pa.len() as f64)
}
