//! Pipeline configuration: a flat `key = value` file whose keys can each be
//! overridden from the command line.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::patchify::{FilterThresholds, SplitRule, DEFAULT_PATCH_SIZE};
use crate::raster::Channel;
use crate::registration::{BlockRegistrationConfig, RegistrationConfig};
use crate::scale_space::{gaussian_kernel, GaussianKernel, ScaleWeights};

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub kernel_size: usize,
    pub kernel_sigma: f64,
    pub scales: usize,
    pub lambda_l1: f64,
    /// `λ_i` for `S_1, S_2, ...`; shorter lists are padded with zeros.
    pub scale_weights: Vec<f64>,
    pub registration_channel: Channel,
    pub block_rows: usize,
    pub block_cols: usize,
    pub search_radius: usize,
    pub patch_size: usize,
    pub tissue_threshold: f64,
    pub alignment_threshold: f64,
    pub background_level: u8,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let block = BlockRegistrationConfig::default();
        let filters = FilterThresholds::default();
        let split = SplitRule::default();
        Self {
            kernel_size: 3,
            kernel_sigma: 1.0,
            scales: 3,
            lambda_l1: 100.0,
            scale_weights: vec![100.0, 100.0, 100.0],
            registration_channel: Channel::Green,
            block_rows: 4,
            block_cols: 4,
            search_radius: block.search_radius,
            patch_size: DEFAULT_PATCH_SIZE,
            tissue_threshold: filters.min_tissue_ratio,
            alignment_threshold: filters.min_alignment,
            background_level: filters.background_level,
            test_fraction: split.test_fraction,
            seed: split.seed,
        }
    }
}

pub const KEYS: &[&str] = &[
    "kernel_size",
    "kernel_sigma",
    "scales",
    "lambda_l1",
    "scale_weights",
    "registration_channel",
    "block_rows",
    "block_cols",
    "search_radius",
    "patch_size",
    "tissue_threshold",
    "alignment_threshold",
    "background_level",
    "test_fraction",
    "seed",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| Error::Parse {
        what: "config".into(),
        message: format!("bad value for {key}: '{value}'"),
    })
}

pub fn parse_weight_list(value: &str) -> Result<Vec<f64>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse::<f64>("scale_weights", s))
        .collect()
}

impl PipelineConfig {
    /// Applies one setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "kernel_size" => self.kernel_size = parse(key, value)?,
            "kernel_sigma" => self.kernel_sigma = parse(key, value)?,
            "scales" => self.scales = parse(key, value)?,
            "lambda_l1" => self.lambda_l1 = parse(key, value)?,
            "scale_weights" => self.scale_weights = parse_weight_list(value)?,
            "registration_channel" => self.registration_channel = value.parse()?,
            "block_rows" => self.block_rows = parse(key, value)?,
            "block_cols" => self.block_cols = parse(key, value)?,
            "search_radius" => self.search_radius = parse(key, value)?,
            "patch_size" => self.patch_size = parse(key, value)?,
            "tissue_threshold" => self.tissue_threshold = parse(key, value)?,
            "alignment_threshold" => self.alignment_threshold = parse(key, value)?,
            "background_level" => self.background_level = parse(key, value)?,
            "test_fraction" => self.test_fraction = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            other => {
                return Err(Error::Parse {
                    what: "config".into(),
                    message: format!("unknown key '{other}'"),
                })
            }
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                what: "config".into(),
                message: format!("line {}: expected key = value", n + 1),
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    pub fn to_text(&self) -> String {
        let weights: Vec<String> = self.scale_weights.iter().map(f64::to_string).collect();
        [
            format!("kernel_size = {}", self.kernel_size),
            format!("kernel_sigma = {}", self.kernel_sigma),
            format!("scales = {}", self.scales),
            format!("lambda_l1 = {}", self.lambda_l1),
            format!("scale_weights = {}", weights.join(",")),
            format!("registration_channel = {}", self.registration_channel),
            format!("block_rows = {}", self.block_rows),
            format!("block_cols = {}", self.block_cols),
            format!("search_radius = {}", self.search_radius),
            format!("patch_size = {}", self.patch_size),
            format!("tissue_threshold = {}", self.tissue_threshold),
            format!("alignment_threshold = {}", self.alignment_threshold),
            format!("background_level = {}", self.background_level),
            format!("test_fraction = {}", self.test_fraction),
            format!("seed = {}", self.seed),
        ]
        .join("\n")
            + "\n"
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        self.kernel()?;
        self.weights()?;
        if self.scales == 0 {
            return bad("scales must be at least 1".into());
        }
        if self.block_rows == 0 || self.block_cols == 0 {
            return bad("block grid must have at least one row and column".into());
        }
        if self.patch_size == 0 {
            return bad("patch_size must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.test_fraction) {
            return bad(format!(
                "test_fraction must lie in [0, 1], got {}",
                self.test_fraction
            ));
        }
        if self.tissue_threshold.is_nan() || self.alignment_threshold.is_nan() {
            return bad("filter thresholds must be numbers".into());
        }
        Ok(())
    }

    pub fn kernel(&self) -> Result<GaussianKernel> {
        gaussian_kernel(self.kernel_size, self.kernel_sigma)
    }

    /// Weights for `S_1 .. S_scales`.
    pub fn weights(&self) -> Result<ScaleWeights> {
        let mut w = self.scale_weights.clone();
        w.resize(self.scales, 0.0);
        ScaleWeights::new(self.lambda_l1, w)
    }

    pub fn registration(&self) -> RegistrationConfig {
        RegistrationConfig {
            channel: self.registration_channel,
            grid_rows: self.block_rows,
            grid_cols: self.block_cols,
            block: BlockRegistrationConfig {
                search_radius: self.search_radius,
                ..BlockRegistrationConfig::default()
            },
        }
    }

    pub fn thresholds(&self) -> FilterThresholds {
        FilterThresholds {
            min_tissue_ratio: self.tissue_threshold,
            min_alignment: self.alignment_threshold,
            background_level: self.background_level,
        }
    }

    pub fn split_rule(&self) -> SplitRule {
        SplitRule {
            test_fraction: self.test_fraction,
            seed: self.seed,
        }
    }
}
