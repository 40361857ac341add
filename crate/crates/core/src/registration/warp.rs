//! Inverse-mapping resampling with bilinear interpolation.

use rayon::prelude::*;

use super::field::DisplacementField;
use super::homography::{Homography, Point};
use crate::error::{Error, Result};
use crate::raster::{merge_channels, split_channels, Plane, Raster, ValidityMask};

const EDGE_EPS: f64 = 1e-9;

/// Integer corner plus fractional weight along one axis, or `None` when the
/// coordinate falls outside `[0, n - 1]`.
#[inline]
fn axis(c: f64, n: usize) -> Option<(usize, usize, f64)> {
    let max = (n - 1) as f64;
    if !(c >= -EDGE_EPS && c <= max + EDGE_EPS) {
        return None;
    }
    let c = c.clamp(0.0, max);
    let i0 = c.floor() as usize;
    let f = c - i0 as f64;
    let i1 = if f > 0.0 { i0 + 1 } else { i0 };
    Some((i0, i1.min(n - 1), f))
}

/// Bilinear sample; integer coordinates return the stored value exactly.
#[inline]
pub fn sample_bilinear(p: &Plane, x: f64, y: f64) -> Option<f64> {
    let (w, h) = p.dims();
    let (x0, x1, fx) = axis(x, w)?;
    let (y0, y1, fy) = axis(y, h)?;
    let top = p.get(x0, y0) + fx * (p.get(x1, y0) - p.get(x0, y0));
    let bottom = p.get(x0, y1) + fx * (p.get(x1, y1) - p.get(x0, y1));
    Some(top + fy * (bottom - top))
}

/// Whether every neighbour that carries weight in a bilinear sample is valid.
#[inline]
fn sample_valid(mask: &ValidityMask, x: f64, y: f64) -> bool {
    let (w, h) = mask.dims();
    let (Some((x0, x1, fx)), Some((y0, y1, fy))) = (axis(x, w), axis(y, h)) else {
        return false;
    };
    let xs: &[usize] = if fx > 0.0 { &[x0, x1] } else { &[x0] };
    let ys: &[usize] = if fy > 0.0 { &[y0, y1] } else { &[y0] };
    ys.iter().all(|&yy| xs.iter().all(|&xx| mask.get(xx, yy)))
}

/// Images that can be resampled through a coordinate map.
pub trait Resample: Sized {
    fn dims(&self) -> (usize, usize);

    /// Builds an `out_w × out_h` image whose pixel `(x, y)` is sampled at
    /// `map(x, y)`. Pixels mapping outside the source, or onto invalid source
    /// pixels when `mask` is given, are zero and flagged invalid.
    fn resample<F>(
        &self,
        out: (usize, usize),
        mask: Option<&ValidityMask>,
        map: F,
    ) -> (Self, ValidityMask)
    where
        F: Fn(usize, usize) -> (f64, f64) + Sync;
}

impl Resample for Plane {
    fn dims(&self) -> (usize, usize) {
        Plane::dims(self)
    }

    fn resample<F>(
        &self,
        (ow, oh): (usize, usize),
        mask: Option<&ValidityMask>,
        map: F,
    ) -> (Self, ValidityMask)
    where
        F: Fn(usize, usize) -> (f64, f64) + Sync,
    {
        let rows: Vec<(Vec<f64>, Vec<bool>)> = (0..oh)
            .into_par_iter()
            .map(|y| {
                let mut vals = Vec::with_capacity(ow);
                let mut flags = Vec::with_capacity(ow);
                for x in 0..ow {
                    let (sx, sy) = map(x, y);
                    let v = sample_bilinear(self, sx, sy)
                        .filter(|_| mask.is_none_or(|m| sample_valid(m, sx, sy)));
                    vals.push(v.unwrap_or(0.0));
                    flags.push(v.is_some());
                }
                (vals, flags)
            })
            .collect();
        let mut samples = Vec::with_capacity(ow * oh);
        let mut flags = Vec::with_capacity(ow * oh);
        for (v, f) in rows {
            samples.extend(v);
            flags.extend(f);
        }
        (
            Plane::from_parts(ow, oh, samples),
            ValidityMask::new(ow, oh, flags).expect("sizes agree"),
        )
    }
}

impl Resample for Raster {
    fn dims(&self) -> (usize, usize) {
        Raster::dims(self)
    }

    fn resample<F>(
        &self,
        out: (usize, usize),
        mask: Option<&ValidityMask>,
        map: F,
    ) -> (Self, ValidityMask)
    where
        F: Fn(usize, usize) -> (f64, f64) + Sync,
    {
        let (r, g, b) = split_channels(self);
        let (r, m) = r.resample(out, mask, &map);
        let (g, _) = g.resample(out, mask, &map);
        let (b, _) = b.resample(out, mask, &map);
        (
            merge_channels(&r, &g, &b).expect("channels share dimensions"),
            m,
        )
    }
}

/// Maps `image` into the target frame of `h` (source → target) by sampling
/// the source at `h⁻¹(x, y)` for every output pixel.
pub fn warp<T: Resample>(
    image: &T,
    h: &Homography,
    out_size: (usize, usize),
) -> Result<(T, ValidityMask)> {
    let inv = h.inverse()?;
    Ok(image.resample(out_size, None, |x, y| {
        let p = inv.apply(Point::new(x as f64, y as f64));
        (p.x, p.y)
    }))
}

/// Samples `channel` at each pixel's displaced coordinates.
pub fn apply_field<T: Resample>(
    field: &DisplacementField,
    channel: &T,
) -> Result<(T, ValidityMask)> {
    apply_field_masked(field, channel, None)
}

/// As [`apply_field`], additionally invalidating samples that touch invalid
/// source pixels.
pub fn apply_field_masked<T: Resample>(
    field: &DisplacementField,
    channel: &T,
    mask: Option<&ValidityMask>,
) -> Result<(T, ValidityMask)> {
    if field.dims() != channel.dims() {
        return Err(Error::mismatch(field.dims(), channel.dims()));
    }
    if let Some(m) = mask {
        if m.dims() != channel.dims() {
            return Err(Error::mismatch(m.dims(), channel.dims()));
        }
    }
    Ok(channel.resample(channel.dims(), mask, |x, y| {
        let [dx, dy] = field.get(x, y);
        (x as f64 + dx, y as f64 + dy)
    }))
}
