//! PSNR / SSIM and directory-level evaluation reports.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::raster::{load_image, to_luma, Plane, Raster};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
pub const SSIM_C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);

/// PSNR in dB; identical images have no finite value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Psnr {
    Finite(f64),
    Infinite,
}

impl Psnr {
    pub fn db(self) -> Option<f64> {
        match self {
            Psnr::Finite(v) => Some(v),
            Psnr::Infinite => None,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, Psnr::Infinite)
    }
}

impl fmt::Display for Psnr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Psnr::Finite(v) => write!(f, "{v}"),
            Psnr::Infinite => f.write_str("inf"),
        }
    }
}

fn check_dims(a: &Raster, b: &Raster) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::mismatch(a.dims(), b.dims()));
    }
    Ok(())
}

/// Mean squared difference pooled over every sample of every channel.
pub fn mse(a: &Raster, b: &Raster) -> Result<f64> {
    check_dims(a, b)?;
    let sum: f64 = a
        .samples()
        .iter()
        .zip(b.samples())
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum();
    Ok(sum / a.samples().len() as f64)
}

pub fn psnr(a: &Raster, b: &Raster) -> Result<Psnr> {
    let e = mse(a, b)?;
    if e == 0.0 {
        return Ok(Psnr::Infinite);
    }
    Ok(Psnr::Finite(10.0 * (255.0 * 255.0 / e).log10()))
}

fn gaussian_window_1d() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut w = [0.0; SSIM_WINDOW];
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Separable "valid" filtering: output is (w - 10) × (h - 10).
fn filter_valid(src: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        let line = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = k
                .iter()
                .zip(&line[x..x + SSIM_WINDOW])
                .map(|(a, b)| a * b)
                .sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = k
                .iter()
                .enumerate()
                .map(|(j, kw)| kw * rows[(y + j) * ow + x])
                .sum();
        }
    }
    out
}

/// SSIM between two luma planes, averaged over every fully contained window.
pub fn ssim_planes(a: &Plane, b: &Plane) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::mismatch(a.dims(), b.dims()));
    }
    let (w, h) = a.dims();
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::TooSmall {
            width: w,
            height: h,
            requirement: format!("SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW}"),
        });
    }
    let k = gaussian_window_1d();
    let (x, y) = (a.samples(), b.samples());
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(p, q)| p * q).collect();
    let mu_x = filter_valid(x, w, h, &k);
    let mu_y = filter_valid(y, w, h, &k);
    let e_xx = filter_valid(&xx, w, h, &k);
    let e_yy = filter_valid(&yy, w, h, &k);
    let e_xy = filter_valid(&xy, w, h, &k);
    let n = mu_x.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let vx = e_xx[i] - mx * mx;
            let vy = e_yy[i] - my * my;
            let cxy = e_xy[i] - mx * my;
            ((2.0 * mx * my + SSIM_C1) * (2.0 * cxy + SSIM_C2))
                / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2))
        })
        .sum();
    Ok(total / n as f64)
}

/// SSIM on BT.601 luma with an 11×11, σ = 1.5 Gaussian window and no padding.
pub fn ssim(a: &Raster, b: &Raster) -> Result<f64> {
    check_dims(a, b)?;
    ssim_planes(&to_luma(a), &to_luma(b))
}

#[derive(Debug, Clone, PartialEq)]
pub enum RecordStatus {
    Ok,
    DimensionMismatch,
    MissingReference,
    Failed(String),
}

impl fmt::Display for RecordStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RecordStatus::Ok => f.write_str("ok"),
            RecordStatus::DimensionMismatch => f.write_str("dimension_mismatch"),
            RecordStatus::MissingReference => f.write_str("missing_reference"),
            RecordStatus::Failed(msg) => write!(f, "error: {msg}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairRecord {
    pub id: String,
    pub psnr: Option<Psnr>,
    pub ssim: Option<f64>,
    pub status: RecordStatus,
}

impl PairRecord {
    /// Scores one generated/reference pair; failures are recorded, not raised.
    pub fn score(id: impl Into<String>, generated: &Raster, reference: &Raster) -> Self {
        let id = id.into();
        if generated.dims() != reference.dims() {
            return Self::failed(id, RecordStatus::DimensionMismatch);
        }
        match (psnr(generated, reference), ssim(generated, reference)) {
            (Ok(p), Ok(s)) => PairRecord {
                id,
                psnr: Some(p),
                ssim: Some(s),
                status: RecordStatus::Ok,
            },
            (Err(e), _) | (_, Err(e)) => Self::failed(id, RecordStatus::Failed(e.to_string())),
        }
    }

    fn failed(id: String, status: RecordStatus) -> Self {
        PairRecord {
            id,
            psnr: None,
            ssim: None,
            status,
        }
    }
}

/// Aggregates over the successfully scored records. Infinite PSNR values are
/// counted, never averaged.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub pairs: usize,
    pub scored: usize,
    pub failed: usize,
    pub mean_psnr_db: Option<f64>,
    pub infinite_psnr_count: usize,
    pub mean_ssim: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub records: Vec<PairRecord>,
    pub aggregate: Aggregate,
}

impl MetricReport {
    pub fn from_records(records: Vec<PairRecord>) -> Self {
        let ok: Vec<&PairRecord> = records
            .iter()
            .filter(|r| r.status == RecordStatus::Ok)
            .collect();
        let finite: Vec<f64> = ok
            .iter()
            .filter_map(|r| r.psnr.and_then(Psnr::db))
            .collect();
        let ssims: Vec<f64> = ok.iter().filter_map(|r| r.ssim).collect();
        let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
        let aggregate = Aggregate {
            pairs: records.len(),
            scored: ok.len(),
            failed: records.len() - ok.len(),
            mean_psnr_db: mean(&finite),
            infinite_psnr_count: ok
                .iter()
                .filter(|r| r.psnr.is_some_and(Psnr::is_infinite))
                .count(),
            mean_ssim: mean(&ssims),
        };
        MetricReport { records, aggregate }
    }

    /// Per-pair rows as CSV: `id,psnr_db,ssim,status`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::Parse {
            what: "report".into(),
            message: e.to_string(),
        };
        w.write_record(["id", "psnr_db", "ssim", "status"])
            .map_err(csv_err)?;
        for r in &self.records {
            w.write_record([
                r.id.clone(),
                r.psnr.map(|p| p.to_string()).unwrap_or_default(),
                r.ssim.map(|s| s.to_string()).unwrap_or_default(),
                r.status.to_string(),
            ])
            .map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Parse {
            what: "report".into(),
            message: e.to_string(),
        })?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn aggregate_json(&self) -> String {
        serde_json::to_string_pretty(&self.aggregate).expect("aggregate serializes")
    }

    /// Writes the CSV to `csv_path` and the aggregate JSON next to it.
    pub fn write(&self, csv_path: &Path) -> Result<PathBuf> {
        fs::write(csv_path, self.to_csv()?).map_err(|e| Error::io(csv_path, e))?;
        let json_path = csv_path.with_extension("json");
        fs::write(&json_path, self.aggregate_json() + "\n")
            .map_err(|e| Error::io(&json_path, e))?;
        Ok(json_path)
    }
}

fn png_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_png = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if path.is_file() && is_png {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Scores every PNG in `generated_dir` against the same-named file in
/// `reference_dir`. Records are ordered by filename; per-pair failures are
/// recorded and do not abort the run.
pub fn evaluate_pairs(generated_dir: &Path, reference_dir: &Path) -> Result<MetricReport> {
    if !reference_dir.is_dir() {
        return Err(Error::MissingFile(reference_dir.to_path_buf()));
    }
    let generated = png_files(generated_dir)?;
    let records = generated
        .par_iter()
        .map(|gen_path| {
            let name = gen_path.file_name().expect("listed files have names");
            let id = gen_path
                .file_stem()
                .expect("listed files have names")
                .to_string_lossy()
                .into_owned();
            let ref_path = reference_dir.join(name);
            if !ref_path.is_file() {
                return PairRecord::failed(id, RecordStatus::MissingReference);
            }
            match (load_image(gen_path), load_image(&ref_path)) {
                (Ok(g), Ok(r)) => PairRecord::score(id, &g, &r),
                (Err(e), _) | (_, Err(e)) => {
                    PairRecord::failed(id, RecordStatus::Failed(e.to_string()))
                }
            }
        })
        .collect();
    Ok(MetricReport::from_records(records))
}
