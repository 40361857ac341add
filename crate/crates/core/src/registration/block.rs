//! Single-channel, per-block non-rigid registration.
//!
//! Stage one finds the integer translation maximizing normalized
//! cross-correlation, coarse to fine over a small box-filtered pyramid.
//! Stage two refines a grid of control-point displacements (bilinearly
//! interpolated between nodes) by coordinate descent on the mean absolute
//! difference, trying integer perturbations of each node component. Before
//! refinement the moving block's intensities are matched (mean and standard
//! deviation over the stage-one overlap) to the fixed block's.

use super::field::DisplacementField;
use super::warp::sample_bilinear;
use crate::error::{Error, Result};
use crate::raster::Plane;

#[derive(Debug, Clone, PartialEq)]
pub struct BlockRegistrationConfig {
    /// Translation search radius in full-resolution pixels.
    pub search_radius: usize,
    /// Levels in the coarse-to-fine translation search, including full resolution.
    pub pyramid_levels: usize,
    /// Control nodes per side.
    pub control_points: usize,
    /// Largest integer step tried per node component.
    pub refine_step: i32,
    pub max_sweeps: usize,
    /// Minimum overlap, as a fraction of the block area, for a candidate shift.
    pub min_overlap: f64,
}

impl Default for BlockRegistrationConfig {
    fn default() -> Self {
        Self {
            search_radius: 32,
            pyramid_levels: 3,
            control_points: 4,
            refine_step: 2,
            max_sweeps: 10,
            min_overlap: 0.25,
        }
    }
}

const MIN_LEVEL_SIDE: usize = 8;
const IMPROVEMENT_EPS: f64 = 1e-12;

/// 2×2 box average; odd trailing rows/columns are averaged with what exists.
fn halve(p: &Plane) -> Plane {
    let (w, h) = p.dims();
    let (ow, oh) = (w.div_ceil(2), h.div_ceil(2));
    let mut out = Vec::with_capacity(ow * oh);
    for y in 0..oh {
        for x in 0..ow {
            let mut sum = 0.0;
            let mut n = 0.0;
            for yy in 2 * y..(2 * y + 2).min(h) {
                for xx in 2 * x..(2 * x + 2).min(w) {
                    sum += p.get(xx, yy);
                    n += 1.0;
                }
            }
            out.push(sum / n);
        }
    }
    Plane::from_parts(ow, oh, out)
}

/// NCC between `fixed(x)` and `moving(x + shift)` over their overlap.
fn shifted_ncc(
    fixed: &Plane,
    moving: &Plane,
    (tx, ty): (i64, i64),
    min_overlap: f64,
) -> Option<f64> {
    let (w, h) = fixed.dims();
    let (wi, hi) = (w as i64, h as i64);
    let x0 = 0.max(-tx);
    let x1 = wi.min(wi - tx);
    let y0 = 0.max(-ty);
    let y1 = hi.min(hi - ty);
    if x1 <= x0 || y1 <= y0 {
        return None;
    }
    let n = ((x1 - x0) * (y1 - y0)) as f64;
    if n < min_overlap * (w * h) as f64 || n < 4.0 {
        return None;
    }
    let (mut sf, mut sm, mut sff, mut smm, mut sfm) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let (fs, ms) = (fixed.samples(), moving.samples());
    for y in y0..y1 {
        let frow = (y * wi) as usize;
        let mrow = (y + ty) * wi + tx;
        for x in x0..x1 {
            let f = fs[frow + x as usize];
            let m = ms[(mrow + x) as usize];
            sf += f;
            sm += m;
            sff += f * f;
            smm += m * m;
            sfm += f * m;
        }
    }
    let vf = sff - sf * sf / n;
    let vm = smm - sm * sm / n;
    if vf <= 1e-12 || vm <= 1e-12 {
        return None;
    }
    Some((sfm - sf * sm / n) / (vf * vm).sqrt())
}

fn best_shift(
    fixed: &Plane,
    moving: &Plane,
    center: (i64, i64),
    radius: i64,
    min_overlap: f64,
) -> Option<(i64, i64)> {
    let mut best: Option<((i64, i64), f64)> = None;
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            let t = (center.0 + dx, center.1 + dy);
            let Some(score) = shifted_ncc(fixed, moving, t, min_overlap) else {
                continue;
            };
            let better = match best {
                None => true,
                Some((bt, bs)) => {
                    score > bs + IMPROVEMENT_EPS
                        || (score >= bs - IMPROVEMENT_EPS
                            && t.0 * t.0 + t.1 * t.1 < bt.0 * bt.0 + bt.1 * bt.1)
                }
            };
            if better {
                best = Some((t, score));
            }
        }
    }
    best.map(|(t, _)| t)
}

fn check_inputs(fixed: &Plane, moving: &Plane) -> Result<()> {
    if fixed.dims() != moving.dims() {
        return Err(Error::mismatch(fixed.dims(), moving.dims()));
    }
    let (w, h) = fixed.dims();
    if w < 2 || h < 2 {
        return Err(Error::TooSmall {
            width: w,
            height: h,
            requirement: "block registration needs at least 2x2 pixels".into(),
        });
    }
    if fixed.variance() <= 1e-12 || moving.variance() <= 1e-12 {
        return Err(Error::ZeroVariance);
    }
    Ok(())
}

/// Integer translation `t` such that `moving(x + t) ≈ fixed(x)`.
pub fn estimate_translation(
    fixed: &Plane,
    moving: &Plane,
    cfg: &BlockRegistrationConfig,
) -> Result<(i64, i64)> {
    check_inputs(fixed, moving)?;
    let mut levels = vec![(fixed.clone(), moving.clone())];
    while levels.len() < cfg.pyramid_levels.max(1) {
        let (f, m) = levels.last().expect("non-empty");
        if f.width() / 2 < MIN_LEVEL_SIDE || f.height() / 2 < MIN_LEVEL_SIDE {
            break;
        }
        let next = (halve(f), halve(m));
        levels.push(next);
    }
    let coarsest = levels.len() - 1;
    let factor = 1i64 << coarsest;
    let radius = (cfg.search_radius as i64 + factor - 1) / factor + 1;
    let (f, m) = &levels[coarsest];
    let mut t = best_shift(f, m, (0, 0), radius, cfg.min_overlap).unwrap_or((0, 0));
    for (f, m) in levels[..coarsest].iter().rev() {
        let guess = (2 * t.0, 2 * t.1);
        t = best_shift(f, m, guess, 2, cfg.min_overlap).unwrap_or(guess);
    }
    Ok(t)
}

/// `moving` remapped affinely so that, over the overlap at translation `t`,
/// its mean and standard deviation equal those of `fixed`.
fn match_intensity(fixed: &Plane, moving: &Plane, (tx, ty): (i64, i64)) -> Plane {
    let (w, h) = fixed.dims();
    let (wi, hi) = (w as i64, h as i64);
    let (mut n, mut sf, mut sm, mut sff, mut smm) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for y in 0.max(-ty)..hi.min(hi - ty) {
        for x in 0.max(-tx)..wi.min(wi - tx) {
            let f = fixed.get(x as usize, y as usize);
            let m = moving.get((x + tx) as usize, (y + ty) as usize);
            n += 1.0;
            sf += f;
            sm += m;
            sff += f * f;
            smm += m * m;
        }
    }
    if n < 2.0 {
        return moving.clone();
    }
    let (mf, mm) = (sf / n, sm / n);
    let (vf, vm) = (sff / n - mf * mf, smm / n - mm * mm);
    if vf <= 1e-12 || vm <= 1e-12 {
        return moving.clone();
    }
    let gain = (vf / vm).sqrt();
    if (gain - 1.0).abs() < 1e-9 && (mf - mm).abs() < 1e-9 {
        return moving.clone();
    }
    let samples = moving
        .samples()
        .iter()
        .map(|&m| (m - mm) * gain + mf)
        .collect();
    Plane::from_parts(w, h, samples)
}

/// Control-grid deformation: node displacements interpolated bilinearly.
struct ControlGrid {
    n: usize,
    nodes: Vec<[f64; 2]>,
    // Per pixel column/row: (cell index, fractional position in cell).
    xs: Vec<(usize, f64)>,
    ys: Vec<(usize, f64)>,
    // Pixel index range [start, end) covered by each cell along each axis.
    x_cells: Vec<(usize, usize)>,
    y_cells: Vec<(usize, usize)>,
}

type AxisCells = (Vec<(usize, f64)>, Vec<(usize, usize)>);

fn axis_cells(len: usize, n: usize) -> AxisCells {
    let cells = n - 1;
    let span = (len - 1) as f64;
    let coords: Vec<(usize, f64)> = (0..len)
        .map(|i| {
            let u = i as f64 / span * cells as f64;
            let c = (u.floor() as usize).min(cells - 1);
            (c, u - c as f64)
        })
        .collect();
    let mut ranges = vec![(usize::MAX, 0usize); cells];
    for (i, &(c, _)) in coords.iter().enumerate() {
        ranges[c].0 = ranges[c].0.min(i);
        ranges[c].1 = ranges[c].1.max(i + 1);
    }
    for r in &mut ranges {
        if r.0 == usize::MAX {
            *r = (0, 0);
        }
    }
    (coords, ranges)
}

impl ControlGrid {
    fn new(w: usize, h: usize, n: usize, init: [f64; 2]) -> Self {
        let (xs, x_cells) = axis_cells(w, n);
        let (ys, y_cells) = axis_cells(h, n);
        Self {
            n,
            nodes: vec![init; n * n],
            xs,
            ys,
            x_cells,
            y_cells,
        }
    }

    #[inline]
    fn displacement(&self, x: usize, y: usize) -> [f64; 2] {
        let (cx, fx) = self.xs[x];
        let (cy, fy) = self.ys[y];
        let n = self.n;
        let a = self.nodes[cy * n + cx];
        let b = self.nodes[cy * n + cx + 1];
        let c = self.nodes[(cy + 1) * n + cx];
        let d = self.nodes[(cy + 1) * n + cx + 1];
        let mut out = [0.0; 2];
        for k in 0..2 {
            let top = a[k] + fx * (b[k] - a[k]);
            let bottom = c[k] + fx * (d[k] - c[k]);
            out[k] = top + fy * (bottom - top);
        }
        out
    }

    /// Pixel rectangle `(x0, x1, y0, y1)` influenced by node `(i, j)`.
    fn support(&self, row: usize, col: usize) -> (usize, usize, usize, usize) {
        let cells = self.n - 1;
        let span = |ranges: &[(usize, usize)], k: usize| {
            let lo = k.saturating_sub(1);
            let hi = k.min(cells - 1);
            (ranges[lo].0, ranges[hi].1)
        };
        let (x0, x1) = span(&self.x_cells, col);
        let (y0, y1) = span(&self.y_cells, row);
        (x0, x1, y0, y1)
    }

    fn to_field(&self, w: usize, h: usize) -> DisplacementField {
        DisplacementField::from_fn(w, h, |x, y| self.displacement(x, y)).expect("finite nodes")
    }
}

/// Running absolute-difference state for coordinate descent.
struct Residual<'a> {
    fixed: &'a Plane,
    moving: &'a Plane,
    diff: Vec<f64>,
    valid: Vec<bool>,
    sum: f64,
    count: usize,
}

impl<'a> Residual<'a> {
    fn new(fixed: &'a Plane, moving: &'a Plane, grid: &ControlGrid) -> Self {
        let (w, h) = fixed.dims();
        let mut r = Residual {
            fixed,
            moving,
            diff: vec![0.0; w * h],
            valid: vec![false; w * h],
            sum: 0.0,
            count: 0,
        };
        for y in 0..h {
            for x in 0..w {
                if let Some(d) = r.pixel(grid, x, y) {
                    r.diff[y * w + x] = d;
                    r.valid[y * w + x] = true;
                    r.sum += d;
                    r.count += 1;
                }
            }
        }
        r
    }

    #[inline]
    fn pixel(&self, grid: &ControlGrid, x: usize, y: usize) -> Option<f64> {
        let [dx, dy] = grid.displacement(x, y);
        sample_bilinear(self.moving, x as f64 + dx, y as f64 + dy)
            .map(|m| (m - self.fixed.get(x, y)).abs())
    }

    fn cost(sum: f64, count: usize) -> f64 {
        if count == 0 {
            f64::INFINITY
        } else {
            sum / count as f64
        }
    }

    fn current(&self) -> f64 {
        Self::cost(self.sum, self.count)
    }

    /// Cost if the support rectangle were re-evaluated under `grid`.
    fn trial(&self, grid: &ControlGrid, (x0, x1, y0, y1): (usize, usize, usize, usize)) -> f64 {
        let w = self.fixed.width();
        let (mut sum, mut count) = (self.sum, self.count as isize);
        for y in y0..y1 {
            for x in x0..x1 {
                let i = y * w + x;
                if self.valid[i] {
                    sum -= self.diff[i];
                    count -= 1;
                }
                if let Some(d) = self.pixel(grid, x, y) {
                    sum += d;
                    count += 1;
                }
            }
        }
        Self::cost(sum, count.max(0) as usize)
    }

    fn commit(&mut self, grid: &ControlGrid, (x0, x1, y0, y1): (usize, usize, usize, usize)) {
        let w = self.fixed.width();
        for y in y0..y1 {
            for x in x0..x1 {
                let i = y * w + x;
                if self.valid[i] {
                    self.sum -= self.diff[i];
                    self.count -= 1;
                }
                match self.pixel(grid, x, y) {
                    Some(d) => {
                        self.diff[i] = d;
                        self.valid[i] = true;
                        self.sum += d;
                        self.count += 1;
                    }
                    None => {
                        self.diff[i] = 0.0;
                        self.valid[i] = false;
                    }
                }
            }
        }
    }
}

/// Mean absolute difference between `fixed` and `moving` resampled through
/// `field`, over pixels whose samples land inside `moving`.
pub fn registered_mad(fixed: &Plane, moving: &Plane, field: &DisplacementField) -> Result<f64> {
    if fixed.dims() != moving.dims() {
        return Err(Error::mismatch(fixed.dims(), moving.dims()));
    }
    if field.dims() != fixed.dims() {
        return Err(Error::mismatch(field.dims(), fixed.dims()));
    }
    let (w, h) = fixed.dims();
    let (mut sum, mut count) = (0.0, 0usize);
    for y in 0..h {
        for x in 0..w {
            let [dx, dy] = field.get(x, y);
            if let Some(m) = sample_bilinear(moving, x as f64 + dx, y as f64 + dy) {
                sum += (m - fixed.get(x, y)).abs();
                count += 1;
            }
        }
    }
    Ok(Residual::cost(sum, count))
}

/// Registers `moving` onto `fixed`, returning the backward displacement field
/// (sample `moving` at `x + d(x)` to align it with `fixed`). The result never
/// scores worse than the zero field.
pub fn register_block(fixed: &Plane, moving: &Plane) -> Result<DisplacementField> {
    register_block_with(fixed, moving, &BlockRegistrationConfig::default())
}

pub fn register_block_with(
    fixed: &Plane,
    moving: &Plane,
    cfg: &BlockRegistrationConfig,
) -> Result<DisplacementField> {
    let (tx, ty) = estimate_translation(fixed, moving, cfg)?;
    let (w, h) = fixed.dims();
    let n = cfg.control_points.max(2);
    let mut grid = ControlGrid::new(w, h, n, [tx as f64, ty as f64]);
    let matched = match_intensity(fixed, moving, (tx, ty));
    let mut residual = Residual::new(fixed, &matched, &grid);

    let steps: Vec<f64> = (1..=cfg.refine_step.max(0))
        .flat_map(|s| [-(s as f64), s as f64])
        .collect();
    for _ in 0..cfg.max_sweeps {
        let mut improved = false;
        for row in 0..n {
            for col in 0..n {
                let support = grid.support(row, col);
                for k in 0..2 {
                    let node = row * n + col;
                    let original = grid.nodes[node][k];
                    let mut best = (residual.current(), original);
                    for &s in &steps {
                        grid.nodes[node][k] = original + s;
                        let c = residual.trial(&grid, support);
                        if c < best.0 - IMPROVEMENT_EPS {
                            best = (c, original + s);
                        }
                    }
                    grid.nodes[node][k] = best.1;
                    if best.1 != original {
                        residual.commit(&grid, support);
                        improved = true;
                    }
                }
            }
        }
        if !improved {
            break;
        }
    }

    let field = grid.to_field(w, h);
    let zero = DisplacementField::zero(w, h);
    if registered_mad(fixed, moving, &field)? < registered_mad(fixed, moving, &zero)? {
        Ok(field)
    } else {
        Ok(zero)
    }
}
