use std::path::Path;

use nalgebra::{DMatrix, Matrix3, Vector3};
use serde::Deserialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

/// A manually selected correspondence: `source` in the HE image, `target`
/// in the IHC image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointPair {
    pub source: Point,
    pub target: Point,
}

impl PointPair {
    pub fn new(sx: f64, sy: f64, tx: f64, ty: f64) -> Self {
        Self {
            source: Point::new(sx, sy),
            target: Point::new(tx, ty),
        }
    }
}

#[derive(Deserialize)]
struct PointRow {
    src_x: f64,
    src_y: f64,
    dst_x: f64,
    dst_y: f64,
}

/// Reads `src_x,src_y,dst_x,dst_y` rows.
pub fn read_point_pairs(path: &Path) -> Result<Vec<PointPair>> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Parse {
            what: format!("point file {}", path.display()),
            message: e.to_string(),
        })?;
    reader
        .deserialize::<PointRow>()
        .map(|row| {
            let r = row.map_err(|e| Error::Parse {
                what: format!("point file {}", path.display()),
                message: e.to_string(),
            })?;
            Ok(PointPair::new(r.src_x, r.src_y, r.dst_x, r.dst_y))
        })
        .collect()
}

/// Projective transform mapping HE (source) coordinates to IHC (target)
/// coordinates, scaled so the bottom-right entry is 1 whenever it is nonzero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography {
    m: Matrix3<f64>,
}

impl Homography {
    pub fn identity() -> Self {
        Self {
            m: Matrix3::identity(),
        }
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self {
            m: Matrix3::new(1.0, 0.0, tx, 0.0, 1.0, ty, 0.0, 0.0, 1.0),
        }
    }

    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::Singular);
        }
        let scale = if m[(2, 2)].abs() > 1e-12 * m.norm() {
            m[(2, 2)]
        } else {
            m.norm()
        };
        if scale == 0.0 {
            return Err(Error::Singular);
        }
        let m = m / scale;
        if m.determinant().abs() <= 1e-12 {
            return Err(Error::Singular);
        }
        Ok(Self { m })
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.m
    }

    pub fn apply(&self, p: Point) -> Point {
        let v = self.m * Vector3::new(p.x, p.y, 1.0);
        Point::new(v.x / v.z, v.y / v.z)
    }

    pub fn inverse(&self) -> Result<Self> {
        let inv = self.m.try_inverse().ok_or(Error::Singular)?;
        Self::from_matrix(inv)
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Homography) -> Result<Self> {
        Self::from_matrix(self.m * other.m)
    }

    pub fn max_abs_diff(&self, other: &Homography) -> f64 {
        (self.m - other.m).amax()
    }
}

fn triangle_area2(a: Point, b: Point, c: Point) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

fn extent(points: &[Point]) -> f64 {
    let (mut lo_x, mut hi_x, mut lo_y, mut hi_y) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for p in points {
        lo_x = lo_x.min(p.x);
        hi_x = hi_x.max(p.x);
        lo_y = lo_y.min(p.y);
        hi_y = hi_y.max(p.y);
    }
    (hi_x - lo_x).max(hi_y - lo_y)
}

fn has_collinear_triple(points: &[Point]) -> bool {
    let tol = 1e-9 * extent(points).powi(2).max(f64::MIN_POSITIVE);
    let n = points.len();
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                if triangle_area2(points[i], points[j], points[k]).abs() <= tol {
                    return true;
                }
            }
        }
    }
    false
}

/// Similarity transform moving the centroid to the origin with mean
/// distance √2.
fn normalizing_transform(points: &[Point]) -> Result<Matrix3<f64>> {
    let n = points.len() as f64;
    let cx = points.iter().map(|p| p.x).sum::<f64>() / n;
    let cy = points.iter().map(|p| p.y).sum::<f64>() / n;
    let mean_dist = points
        .iter()
        .map(|p| ((p.x - cx).powi(2) + (p.y - cy).powi(2)).sqrt())
        .sum::<f64>()
        / n;
    if !(mean_dist > 0.0 && mean_dist.is_finite()) {
        return Err(Error::Degenerate("all points coincide".into()));
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    Ok(Matrix3::new(
        s,
        0.0,
        -s * cx,
        0.0,
        s,
        -s * cy,
        0.0,
        0.0,
        1.0,
    ))
}

fn transform(t: &Matrix3<f64>, p: Point) -> Point {
    let v = t * Vector3::new(p.x, p.y, 1.0);
    Point::new(v.x / v.z, v.y / v.z)
}

/// Least-squares homography by the normalized direct linear transform.
/// With exactly four pairs in general position the fit interpolates them.
pub fn estimate_homography(pairs: &[PointPair]) -> Result<Homography> {
    if pairs.len() < 4 {
        return Err(Error::NotEnoughPoints(pairs.len()));
    }
    let src: Vec<Point> = pairs.iter().map(|p| p.source).collect();
    let dst: Vec<Point> = pairs.iter().map(|p| p.target).collect();
    if src
        .iter()
        .chain(&dst)
        .any(|p| !(p.x.is_finite() && p.y.is_finite()))
    {
        return Err(Error::Degenerate("non-finite coordinate".into()));
    }
    if pairs.len() == 4 && (has_collinear_triple(&src) || has_collinear_triple(&dst)) {
        return Err(Error::Degenerate(
            "three of the four points are collinear".into(),
        ));
    }
    let t_src = normalizing_transform(&src)?;
    let t_dst = normalizing_transform(&dst)?;

    let rows = (2 * pairs.len()).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, (s, d)) in src.iter().zip(&dst).enumerate() {
        let s = transform(&t_src, *s);
        let d = transform(&t_dst, *d);
        let (r0, r1) = (2 * i, 2 * i + 1);
        a[(r0, 0)] = -s.x;
        a[(r0, 1)] = -s.y;
        a[(r0, 2)] = -1.0;
        a[(r0, 6)] = d.x * s.x;
        a[(r0, 7)] = d.x * s.y;
        a[(r0, 8)] = d.x;
        a[(r1, 3)] = -s.x;
        a[(r1, 4)] = -s.y;
        a[(r1, 5)] = -1.0;
        a[(r1, 6)] = d.y * s.x;
        a[(r1, 7)] = d.y * s.y;
        a[(r1, 8)] = d.y;
    }
    let svd = a.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::Degenerate("singular value decomposition failed".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
    let largest = svd.singular_values[order[order.len() - 1]];
    if svd.singular_values[order[1]] <= 1e-10 * largest {
        return Err(Error::Degenerate(
            "correspondences do not determine a unique homography".into(),
        ));
    }
    let h = v_t.row(order[0]);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let t_dst_inv = t_dst
        .try_inverse()
        .ok_or_else(|| Error::Degenerate("normalization is singular".into()))?;
    Homography::from_matrix(t_dst_inv * hn * t_src)
}

fn is_convex_quad(q: &[Point; 4]) -> bool {
    let tol = 1e-12 * extent(q).powi(2).max(f64::MIN_POSITIVE);
    let crosses: Vec<f64> = (0..4)
        .map(|i| triangle_area2(q[i], q[(i + 1) % 4], q[(i + 2) % 4]))
        .collect();
    crosses.iter().all(|&c| c > tol) || crosses.iter().all(|&c| c < -tol)
}

/// Projective map taking the unit square corners (0,0), (1,0), (1,1), (0,1)
/// onto `q[0..4]`.
fn unit_square_to_quad(q: &[Point; 4]) -> Result<Matrix3<f64>> {
    let dx1 = q[1].x - q[2].x;
    let dx2 = q[3].x - q[2].x;
    let dx3 = q[0].x - q[1].x + q[2].x - q[3].x;
    let dy1 = q[1].y - q[2].y;
    let dy2 = q[3].y - q[2].y;
    let dy3 = q[0].y - q[1].y + q[2].y - q[3].y;
    let det = dx1 * dy2 - dx2 * dy1;
    if det == 0.0 {
        return Err(Error::Degenerate("quadrilateral has no area".into()));
    }
    let g = (dx3 * dy2 - dx2 * dy3) / det;
    let h = (dx1 * dy3 - dx3 * dy1) / det;
    Ok(Matrix3::new(
        q[1].x - q[0].x + g * q[1].x,
        q[3].x - q[0].x + h * q[3].x,
        q[0].x,
        q[1].y - q[0].y + g * q[1].y,
        q[3].y - q[0].y + h * q[3].y,
        q[0].y,
        g,
        h,
        1.0,
    ))
}

/// Source quad → unit square → target quad. Vertex `i` of the source maps
/// to vertex `i` of the target.
pub fn two_step_projection(
    source_quad: &[Point; 4],
    target_quad: &[Point; 4],
) -> Result<Homography> {
    for q in [source_quad, target_quad] {
        if !is_convex_quad(q) {
            return Err(Error::Degenerate("quadrilateral is not convex".into()));
        }
    }
    let to_square = unit_square_to_quad(source_quad)?
        .try_inverse()
        .ok_or_else(|| Error::Degenerate("source quadrilateral is singular".into()))?;
    let to_target = unit_square_to_quad(target_quad)?;
    Homography::from_matrix(to_target * to_square)
}

/// Picks the two-step construction for exactly four pairs forming convex
/// quads, the least-squares fit otherwise.
pub fn homography_from_pairs(pairs: &[PointPair]) -> Result<Homography> {
    if pairs.len() == 4 {
        let src: [Point; 4] = std::array::from_fn(|i| pairs[i].source);
        let dst: [Point; 4] = std::array::from_fn(|i| pairs[i].target);
        if is_convex_quad(&src) && is_convex_quad(&dst) {
            return two_step_projection(&src, &dst);
        }
    }
    estimate_homography(pairs)
}
