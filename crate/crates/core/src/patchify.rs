//! Cutting registered slide pairs into patches, scoring them for tissue
//! content and alignment, and recording the kept pairs in a manifest.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::raster::{save_image, to_luma, Plane, Raster, Rect};
use crate::scale_space::reflect101;

pub const DEFAULT_PATCH_SIZE: usize = 1024;
pub const HE_DIR: &str = "HE";
pub const IHC_DIR: &str = "IHC";
pub const MANIFEST_FILE: &str = "manifest.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct PatchPair {
    pub row: usize,
    pub col: usize,
    pub rect: Rect,
    pub he: Raster,
    pub ihc: Raster,
}

/// Non-overlapping `size × size` grid from the top-left corner; partial
/// patches along the right and bottom edges are dropped.
pub fn cut_patches(he: &Raster, ihc: &Raster, size: usize) -> Result<Vec<PatchPair>> {
    if he.dims() != ihc.dims() {
        return Err(Error::mismatch(he.dims(), ihc.dims()));
    }
    if size == 0 {
        return Err(Error::InvalidArgument("patch size must be positive".into()));
    }
    let (w, h) = he.dims();
    if w < size || h < size {
        return Err(Error::TooSmall {
            width: w,
            height: h,
            requirement: format!("patch size is {size}"),
        });
    }
    let mut out = Vec::new();
    for row in 0..h / size {
        for col in 0..w / size {
            let rect = Rect::new(col * size, row * size, size, size);
            out.push(PatchPair {
                row,
                col,
                rect,
                he: he.crop(rect),
                ihc: ihc.crop(rect),
            });
        }
    }
    Ok(out)
}

pub const DEFAULT_BACKGROUND_LEVEL: u8 = 220;

/// Fraction of pixels that are not background; a pixel is background when
/// all three channels are at least `background_level`.
pub fn tissue_ratio_with(patch: &Raster, background_level: u8) -> f64 {
    let tissue = patch
        .pixels()
        .filter(|p| p.iter().copied().min().unwrap_or(0) < background_level)
        .count();
    tissue as f64 / (patch.width() * patch.height()) as f64
}

pub fn tissue_ratio(patch: &Raster) -> f64 {
    tissue_ratio_with(patch, DEFAULT_BACKGROUND_LEVEL)
}

fn sobel_magnitude(p: &Plane) -> Plane {
    let (w, h) = p.dims();
    let at = |x: isize, y: isize| p.get(reflect101(x, w), reflect101(y, h));
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let gx = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1));
            let gy = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1));
            out.push(gx.hypot(gy));
        }
    }
    Plane::from_parts(w, h, out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignmentScore {
    pub value: f64,
    /// Set when either gradient map is flat; `value` is then 0.
    pub degenerate: bool,
}

/// NCC of the Sobel gradient-magnitude maps of the two luma images. Stain
/// colors differ between the domains; edges are what they share.
pub fn alignment_score(he_patch: &Raster, ihc_patch: &Raster) -> Result<AlignmentScore> {
    if he_patch.dims() != ihc_patch.dims() {
        return Err(Error::mismatch(he_patch.dims(), ihc_patch.dims()));
    }
    let a = sobel_magnitude(&to_luma(he_patch));
    let b = sobel_magnitude(&to_luma(ihc_patch));
    let (ma, mb) = (a.mean(), b.mean());
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.samples().iter().zip(b.samples()) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    let n = a.samples().len() as f64;
    if saa / n <= 1e-12 || sbb / n <= 1e-12 {
        return Ok(AlignmentScore {
            value: 0.0,
            degenerate: true,
        });
    }
    Ok(AlignmentScore {
        value: (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0),
        degenerate: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Her2Level {
    Zero,
    One,
    Two,
    Three,
}

impl Her2Level {
    pub const ALL: [Her2Level; 4] = [
        Her2Level::Zero,
        Her2Level::One,
        Her2Level::Two,
        Her2Level::Three,
    ];
}

impl fmt::Display for Her2Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Her2Level::Zero => "0",
            Her2Level::One => "1+",
            Her2Level::Two => "2+",
            Her2Level::Three => "3+",
        })
    }
}

impl FromStr for Her2Level {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "0" => Ok(Her2Level::Zero),
            "1+" | "1" => Ok(Her2Level::One),
            "2+" | "2" => Ok(Her2Level::Two),
            "3+" | "3" => Ok(Her2Level::Three),
            other => Err(Error::InvalidArgument(format!(
                "HER2 level must be one of 0, 1+, 2+, 3+; got '{other}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidArgument(format!("unknown split '{other}'"))),
        }
    }
}

/// Slide-level train/test assignment: a slide goes to test when a seeded
/// hash of its id falls below `test_fraction`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRule {
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SplitRule {
    fn default() -> Self {
        Self {
            test_fraction: 0.2,
            seed: 0,
        }
    }
}

impl SplitRule {
    pub fn assign(&self, wsi_id: &str) -> Split {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(wsi_id.as_bytes());
        let digest = hasher.finalize();
        let word = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
        let u = (word >> 11) as f64 / (1u64 << 53) as f64;
        if u < self.test_fraction {
            Split::Test
        } else {
            Split::Train
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterThresholds {
    pub min_tissue_ratio: f64,
    pub min_alignment: f64,
    pub background_level: u8,
}

impl Default for FilterThresholds {
    fn default() -> Self {
        Self {
            min_tissue_ratio: 0.1,
            min_alignment: 0.2,
            background_level: DEFAULT_BACKGROUND_LEVEL,
        }
    }
}

impl FilterThresholds {
    /// Keeps every patch.
    pub fn disabled() -> Self {
        Self {
            min_tissue_ratio: f64::NEG_INFINITY,
            min_alignment: f64::NEG_INFINITY,
            background_level: DEFAULT_BACKGROUND_LEVEL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchRecord {
    pub patch_id: String,
    pub wsi_id: String,
    #[serde(with = "her2_serde")]
    pub her2_level: Her2Level,
    pub he_path: String,
    pub ihc_path: String,
    pub tissue_ratio: f64,
    pub alignment_score: f64,
    #[serde(with = "split_serde")]
    pub split: Split,
}

mod her2_serde {
    use super::Her2Level;
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Her2Level, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(v)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Her2Level, D::Error> {
        String::deserialize(d)?.parse().map_err(D::Error::custom)
    }
}

mod split_serde {
    use super::Split;
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Split, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(v)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Split, D::Error> {
        String::deserialize(d)?.parse().map_err(D::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PatchManifest {
    records: Vec<PatchRecord>,
}

impl PatchManifest {
    pub fn new(mut records: Vec<PatchRecord>) -> Self {
        records.sort_by(|a, b| a.patch_id.cmp(&b.patch_id));
        Self { records }
    }

    pub fn records(&self) -> &[PatchRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Kept patches per HER2 level; every level is present.
    pub fn counts(&self) -> BTreeMap<Her2Level, usize> {
        let mut counts: BTreeMap<Her2Level, usize> =
            Her2Level::ALL.iter().map(|&l| (l, 0)).collect();
        for r in &self.records {
            *counts.entry(r.her2_level).or_default() += 1;
        }
        counts
    }

    /// Replaces every record of the slides present in `other`.
    pub fn merge(self, other: PatchManifest) -> PatchManifest {
        let replaced: std::collections::BTreeSet<&str> =
            other.records.iter().map(|r| r.wsi_id.as_str()).collect();
        let mut records: Vec<PatchRecord> = self
            .records
            .into_iter()
            .filter(|r| !replaced.contains(r.wsi_id.as_str()))
            .collect();
        records.extend(other.records);
        PatchManifest::new(records)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.records {
            w.serialize(r).map_err(|e| Error::Parse {
                what: "manifest".into(),
                message: e.to_string(),
            })?;
        }
        if self.records.is_empty() {
            w.write_record([
                "patch_id",
                "wsi_id",
                "her2_level",
                "he_path",
                "ihc_path",
                "tissue_ratio",
                "alignment_score",
                "split",
            ])
            .map_err(|e| Error::Parse {
                what: "manifest".into(),
                message: e.to_string(),
            })?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Parse {
            what: "manifest".into(),
            message: e.to_string(),
        })?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let records = reader
            .deserialize()
            .collect::<std::result::Result<Vec<PatchRecord>, _>>()
            .map_err(|e| Error::Parse {
                what: "manifest".into(),
                message: e.to_string(),
            })?;
        Ok(Self::new(records))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPatch {
    pub row: usize,
    pub col: usize,
    pub tissue_ratio: f64,
    pub alignment: AlignmentScore,
}

pub fn score_patches(pairs: &[PatchPair], background_level: u8) -> Result<Vec<ScoredPatch>> {
    pairs
        .par_iter()
        .map(|p| {
            // Tissue is judged on the HE side, where background is reliably white.
            Ok(ScoredPatch {
                row: p.row,
                col: p.col,
                tissue_ratio: tissue_ratio_with(&p.he, background_level),
                alignment: alignment_score(&p.he, &p.ihc)?,
            })
        })
        .collect()
}

pub fn patch_file_name(wsi_id: &str, row: usize, col: usize, split: Split) -> String {
    format!("{wsi_id}_{row}_{col}_{split}.png")
}

/// Filters scored patches, assigns the slide's split, and (when `out_dir` is
/// given) writes the kept HE/IHC patches under `HE/` and `IHC/`. Paths in the
/// records are relative to `out_dir`.
pub fn build_manifest(
    pairs: &[PatchPair],
    wsi_id: &str,
    her2_level: Her2Level,
    thresholds: &FilterThresholds,
    split_rule: &SplitRule,
    out_dir: Option<&Path>,
) -> Result<PatchManifest> {
    if wsi_id.is_empty() || wsi_id.contains(['/', '\\']) {
        return Err(Error::InvalidArgument(format!(
            "invalid slide id '{wsi_id}'"
        )));
    }
    let scores = score_patches(pairs, thresholds.background_level)?;
    let split = split_rule.assign(wsi_id);
    let kept: Vec<(&PatchPair, &ScoredPatch)> = pairs
        .iter()
        .zip(&scores)
        .filter(|(_, s)| {
            s.tissue_ratio >= thresholds.min_tissue_ratio
                && s.alignment.value >= thresholds.min_alignment
        })
        .collect();

    if let Some(dir) = out_dir {
        for sub in [HE_DIR, IHC_DIR] {
            let d = dir.join(sub);
            fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        }
        kept.par_iter().try_for_each(|(p, _)| {
            let name = patch_file_name(wsi_id, p.row, p.col, split);
            save_image(&p.he, dir.join(HE_DIR).join(&name))?;
            save_image(&p.ihc, dir.join(IHC_DIR).join(&name))
        })?;
    }

    let records: Vec<PatchRecord> = kept
        .iter()
        .map(|(p, s)| {
            let name = patch_file_name(wsi_id, p.row, p.col, split);
            PatchRecord {
                patch_id: format!("{wsi_id}_{}_{}", p.row, p.col),
                wsi_id: wsi_id.to_string(),
                her2_level,
                he_path: format!("{HE_DIR}/{name}"),
                ihc_path: format!("{IHC_DIR}/{name}"),
                tissue_ratio: s.tissue_ratio,
                alignment_score: s.alignment.value,
                split,
            }
        })
        .collect();
    if records.is_empty() {
        log::warn!("slide {wsi_id}: no patch passed the tissue/alignment filters");
    }
    Ok(PatchManifest::new(records))
}
