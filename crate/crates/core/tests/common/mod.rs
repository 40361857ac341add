//! Independent reference implementations and synthetic fixtures shared by
//! the integration suites. Nothing here calls into the numeric paths it is
//! used to check.

#![allow(dead_code, clippy::needless_range_loop)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stainpair::registration::DisplacementField;
use stainpair::{Plane, Raster};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub type Grid = Vec<Vec<f64>>;

pub fn to_grid(p: &Plane) -> Grid {
    (0..p.height())
        .map(|y| (0..p.width()).map(|x| p.get(x, y)).collect())
        .collect()
}

pub fn from_grid(g: &Grid) -> Plane {
    let h = g.len();
    let w = g[0].len();
    Plane::new(w, h, g.iter().flatten().copied().collect()).unwrap()
}

pub fn random_plane(w: usize, h: usize, seed: u64) -> Plane {
    let mut r = rng(seed);
    Plane::new(w, h, (0..w * h).map(|_| r.gen_range(0.0..255.0)).collect()).unwrap()
}

pub fn random_raster(w: usize, h: usize, seed: u64) -> Raster {
    let mut r = rng(seed);
    Raster::new(w, h, (0..w * h * 3).map(|_| r.gen()).collect()).unwrap()
}

/// Direct evaluation of exp(-(dx²+dy²)/2σ²) on the square, normalized.
pub fn oracle_kernel(size: usize, sigma: f64) -> Grid {
    let r = (size / 2) as i64;
    let mut k = vec![vec![0.0; size]; size];
    let mut total = 0.0;
    for dy in -r..=r {
        for dx in -r..=r {
            let v = (-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp();
            k[(dy + r) as usize][(dx + r) as usize] = v;
            total += v;
        }
    }
    for row in &mut k {
        for v in row {
            *v /= total;
        }
    }
    k
}

/// Mirror an out-of-range index back inside, not repeating the edge sample.
fn mirror(mut i: i64, n: usize) -> usize {
    let n = n as i64;
    if n == 1 {
        return 0;
    }
    loop {
        if i < 0 {
            i = -i;
        } else if i >= n {
            i = 2 * (n - 1) - i;
        } else {
            return i as usize;
        }
    }
}

pub fn oracle_blur(img: &Grid, k: &Grid) -> Grid {
    let h = img.len();
    let w = img[0].len();
    let r = (k.len() / 2) as i64;
    let mut out = vec![vec![0.0; w]; h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for ky in 0..k.len() {
                for kx in 0..k.len() {
                    let sy = mirror(y as i64 + ky as i64 - r, h);
                    let sx = mirror(x as i64 + kx as i64 - r, w);
                    acc += k[ky][kx] * img[sy][sx];
                }
            }
            out[y][x] = acc;
        }
    }
    out
}

pub fn oracle_subsample(img: &Grid) -> Grid {
    img.iter()
        .step_by(2)
        .map(|row| row.iter().step_by(2).copied().collect())
        .collect()
}

/// F_i by brute force: i rounds of (four blurs, keep even indices).
pub fn oracle_scale(img: &Grid, i: usize, k: &Grid) -> Grid {
    let mut cur = img.clone();
    for _ in 0..i {
        for _ in 0..4 {
            cur = oracle_blur(&cur, k);
        }
        cur = oracle_subsample(&cur);
    }
    cur
}

pub fn oracle_mean_abs(a: &Grid, b: &Grid) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (ra, rb) in a.iter().zip(b) {
        for (x, y) in ra.iter().zip(rb) {
            sum += (x - y).abs();
            n += 1;
        }
    }
    sum / n as f64
}

pub fn oracle_scale_loss(a: &Grid, b: &Grid, i: usize) -> f64 {
    let k = oracle_kernel(3, 1.0);
    oracle_mean_abs(&oracle_scale(a, i, &k), &oracle_scale(b, i, &k))
}

pub fn oracle_luma(r: &Raster) -> Grid {
    (0..r.height())
        .map(|y| {
            (0..r.width())
                .map(|x| {
                    let [cr, cg, cb] = r.pixel(x, y);
                    0.299 * cr as f64 + 0.587 * cg as f64 + 0.114 * cb as f64
                })
                .collect()
        })
        .collect()
}

/// Window-by-window SSIM with an explicit 11×11 Gaussian (σ = 1.5) and
/// weighted moments evaluated directly in each window.
pub fn oracle_ssim(a: &Raster, b: &Raster) -> f64 {
    let x = oracle_luma(a);
    let y = oracle_luma(b);
    let k = oracle_kernel(11, 1.5);
    let c1 = (0.01f64 * 255.0).powi(2);
    let c2 = (0.03f64 * 255.0).powi(2);
    let h = x.len();
    let w = x[0].len();
    let mut total = 0.0;
    let mut windows = 0usize;
    for top in 0..=h - 11 {
        for left in 0..=w - 11 {
            let (mut mx, mut my) = (0.0, 0.0);
            for j in 0..11 {
                for i in 0..11 {
                    mx += k[j][i] * x[top + j][left + i];
                    my += k[j][i] * y[top + j][left + i];
                }
            }
            let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
            for j in 0..11 {
                for i in 0..11 {
                    let dx = x[top + j][left + i] - mx;
                    let dy = y[top + j][left + i] - my;
                    vx += k[j][i] * dx * dx;
                    vy += k[j][i] * dy * dy;
                    cxy += k[j][i] * dx * dy;
                }
            }
            total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
            windows += 1;
        }
    }
    total / windows as f64
}

/// Smooth, non-periodic synthetic texture defined on the continuous plane.
#[derive(Debug, Clone)]
pub struct Texture {
    waves: Vec<(f64, f64, f64, f64)>,
    blobs: Vec<(f64, f64, f64, f64)>,
}

impl Texture {
    pub fn new(seed: u64, extent: f64) -> Self {
        let mut r = rng(seed);
        let waves = (0..6)
            .map(|_| {
                let freq = r.gen_range(0.04..0.16);
                let angle: f64 = r.gen_range(0.0..std::f64::consts::TAU);
                (
                    freq * angle.cos(),
                    freq * angle.sin(),
                    r.gen_range(0.0..std::f64::consts::TAU),
                    r.gen_range(6.0..14.0),
                )
            })
            .collect();
        let blobs = (0..(extent * extent / 400.0) as usize)
            .map(|_| {
                (
                    r.gen_range(-20.0..extent + 20.0),
                    r.gen_range(-20.0..extent + 20.0),
                    r.gen_range(3.0..9.0),
                    r.gen_range(-60.0..60.0),
                )
            })
            .collect();
        Self { waves, blobs }
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let mut v = 128.0;
        for &(fx, fy, ph, amp) in &self.waves {
            v += amp * (fx * x + fy * y + ph).sin();
        }
        for &(bx, by, s, amp) in &self.blobs {
            let d2 = (x - bx).powi(2) + (y - by).powi(2);
            if d2 < 25.0 * s * s {
                v += amp * (-d2 / (2.0 * s * s)).exp();
            }
        }
        v
    }

    pub fn plane(&self, w: usize, h: usize, offset: (f64, f64)) -> Plane {
        Plane::from_fn(w, h, |x, y| {
            self.eval(x as f64 + offset.0, y as f64 + offset.1)
        })
        .unwrap()
    }
}

/// Random n×n control-node displacements with magnitude ≤ `max`,
/// bilinearly interpolated over a w×h block (nodes at the block corners and
/// evenly spaced between).
pub fn control_grid_field(w: usize, h: usize, n: usize, max: f64, seed: u64) -> DisplacementField {
    let mut r = rng(seed);
    let nodes: Vec<[f64; 2]> = (0..n * n)
        .map(|_| {
            let mag = r.gen_range(0.0..max);
            let ang: f64 = r.gen_range(0.0..std::f64::consts::TAU);
            [mag * ang.cos(), mag * ang.sin()]
        })
        .collect();
    let cells = (n - 1) as f64;
    DisplacementField::from_fn(w, h, |x, y| {
        let u = x as f64 / (w - 1) as f64 * cells;
        let v = y as f64 / (h - 1) as f64 * cells;
        let cx = (u.floor() as usize).min(n - 2);
        let cy = (v.floor() as usize).min(n - 2);
        let (fx, fy) = (u - cx as f64, v - cy as f64);
        let mut out = [0.0; 2];
        for k in 0..2 {
            let a = nodes[cy * n + cx][k];
            let b = nodes[cy * n + cx + 1][k];
            let c = nodes[(cy + 1) * n + cx][k];
            let d = nodes[(cy + 1) * n + cx + 1][k];
            out[k] = a * (1.0 - fx) * (1.0 - fy)
                + b * fx * (1.0 - fy)
                + c * (1.0 - fx) * fy
                + d * fx * fy;
        }
        out
    })
    .unwrap()
}

/// Deterministic stain-like recoloring: each output channel is an increasing
/// affine function of the input luma with its own gain, so structure and
/// light/dark ordering are shared but colors are not.
pub fn recolor(img: &Raster) -> Raster {
    Raster::from_fn(img.width(), img.height(), |x, y| {
        let [r, g, b] = img.pixel(x, y);
        let l = 0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64;
        [
            (70.0 + 0.75 * l).round().min(255.0) as u8,
            (25.0 + 0.9 * l).round().min(255.0) as u8,
            (10.0 + 0.6 * l).round().min(255.0) as u8,
        ]
    })
    .unwrap()
}

/// Tissue-like RGB raster from a texture: pink/purple stain over white.
pub fn stained_raster(tex: &Texture, w: usize, h: usize, offset: (f64, f64)) -> Raster {
    Raster::from_fn(w, h, |x, y| {
        let t = tex
            .eval(x as f64 + offset.0, y as f64 + offset.1)
            .clamp(0.0, 255.0);
        [
            (60.0 + 0.7 * t).round().min(255.0) as u8,
            (20.0 + 0.6 * t).round().min(255.0) as u8,
            (90.0 + 0.55 * t).round().min(255.0) as u8,
        ]
    })
    .unwrap()
}
