use crate::error::{Error, Result};
use crate::raster::{merge_channels, split_channels, Plane, Raster, ValidityMask};

/// Grows valid content into gaps: each pass, every invalid pixel with at
/// least one valid 8-neighbour takes the mean of those neighbours. All
/// updates in a pass read the previous pass's state. Valid input pixels are
/// never modified.
pub fn fill_gaps(image: &Plane, mask: &ValidityMask) -> Result<Plane> {
    Ok(fill_planes(std::slice::from_ref(image), mask)?.remove(0))
}

/// Per-channel [`fill_gaps`] with a shared mask; filled values are quantized.
pub fn fill_gaps_raster(image: &Raster, mask: &ValidityMask) -> Result<Raster> {
    if mask.is_all_valid() && image.dims() == mask.dims() {
        return Ok(image.clone());
    }
    let (r, g, b) = split_channels(image);
    let filled = fill_planes(&[r, g, b], mask)?;
    merge_channels(&filled[0], &filled[1], &filled[2])
}

pub(crate) fn fill_planes(planes: &[Plane], mask: &ValidityMask) -> Result<Vec<Plane>> {
    let (w, h) = mask.dims();
    for p in planes {
        if p.dims() != (w, h) {
            return Err(Error::mismatch(p.dims(), (w, h)));
        }
    }
    let mut data: Vec<Vec<f64>> = planes.iter().map(|p| p.samples().to_vec()).collect();
    let mut valid = mask.flags().to_vec();
    if !valid.iter().any(|&v| v) {
        return Err(Error::NoValidPixels);
    }
    let mut pending: Vec<usize> = (0..w * h).filter(|&i| !valid[i]).collect();
    let max_iter = w.max(h);
    let mut iter = 0;
    while !pending.is_empty() && iter < max_iter {
        let mut updates: Vec<(usize, Vec<f64>)> = Vec::new();
        let mut still: Vec<usize> = Vec::new();
        for &i in &pending {
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            let mut sums = vec![0.0; data.len()];
            let mut count = 0usize;
            for dy in -1..=1 {
                for dx in -1..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if valid[j] {
                        count += 1;
                        for (s, d) in sums.iter_mut().zip(&data) {
                            *s += d[j];
                        }
                    }
                }
            }
            if count == 0 {
                still.push(i);
            } else {
                sums.iter_mut().for_each(|s| *s /= count as f64);
                updates.push((i, sums));
            }
        }
        for (i, vals) in updates {
            for (d, v) in data.iter_mut().zip(vals) {
                d[i] = v;
            }
            valid[i] = true;
        }
        pending = still;
        iter += 1;
    }
    debug_assert!(pending.is_empty());
    Ok(data
        .into_iter()
        .map(|d| Plane::from_parts(w, h, d))
        .collect())
}
