//! `stainpair` command line: `register`, `patchify`, `pyramid`, `evaluate`.
//!
//! Machine-readable results go to stdout, diagnostics to stderr. Exit codes:
//! 0 success, 1 runtime failure, 2 usage error.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::config::PipelineConfig;
use crate::error::Error;
use crate::metrics::evaluate_pairs;
use crate::patchify::{
    alignment_score, build_manifest, cut_patches, Her2Level, PatchManifest, MANIFEST_FILE,
};
use crate::raster::{load_image, save_image};
use crate::registration::{read_point_pairs, register_pair, BlockOutcome};
use crate::scale_space::{l1_reconstruction, scale_losses};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "stainpair",
    version,
    about = "Registered HE/IHC pair construction and evaluation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Align an HE slide onto its IHC counterpart.
    Register {
        #[arg(long)]
        he: PathBuf,
        #[arg(long)]
        ihc: PathBuf,
        /// CSV with columns src_x,src_y,dst_x,dst_y (HE → IHC pixels).
        #[arg(long)]
        points: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Cut a registered pair into patches and update the manifest.
    Patchify {
        #[arg(long)]
        he: PathBuf,
        #[arg(long)]
        ihc: PathBuf,
        #[arg(long = "wsi-id")]
        wsi_id: String,
        /// HER2 level of the slide: 0, 1+, 2+ or 3+.
        #[arg(long)]
        her2: String,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Print per-scale losses S_i and their weighted sum as JSON.
    Pyramid {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Score generated images against same-named references.
    Evaluate {
        #[arg(long)]
        generated: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        /// Per-pair CSV path; the aggregate JSON is written beside it.
        #[arg(long)]
        report: PathBuf,
    },
}

/// Config file plus per-key overrides; flags win over the file.
#[derive(Debug, Default, Args)]
pub struct ConfigArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub kernel_size: Option<String>,
    #[arg(long)]
    pub kernel_sigma: Option<String>,
    /// Number of scales S_1..S_n.
    #[arg(long)]
    pub scales: Option<String>,
    #[arg(long)]
    pub lambda_l1: Option<String>,
    /// Comma-separated λ_i for S_1, S_2, ...
    #[arg(long, visible_alias = "scale-weights")]
    pub weights: Option<String>,
    #[arg(long)]
    pub registration_channel: Option<String>,
    #[arg(long)]
    pub block_rows: Option<String>,
    #[arg(long)]
    pub block_cols: Option<String>,
    #[arg(long)]
    pub search_radius: Option<String>,
    #[arg(long)]
    pub patch_size: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub tissue_threshold: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub alignment_threshold: Option<String>,
    #[arg(long)]
    pub background_level: Option<String>,
    #[arg(long)]
    pub test_fraction: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<PipelineConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => PipelineConfig::from_file(path)?,
            None => PipelineConfig::default(),
        };
        let overrides = [
            ("kernel_size", &self.kernel_size),
            ("kernel_sigma", &self.kernel_sigma),
            ("scales", &self.scales),
            ("lambda_l1", &self.lambda_l1),
            ("scale_weights", &self.weights),
            ("registration_channel", &self.registration_channel),
            ("block_rows", &self.block_rows),
            ("block_cols", &self.block_cols),
            ("search_radius", &self.search_radius),
            ("patch_size", &self.patch_size),
            ("tissue_threshold", &self.tissue_threshold),
            ("alignment_threshold", &self.alignment_threshold),
            ("background_level", &self.background_level),
            ("test_fraction", &self.test_fraction),
            ("seed", &self.seed),
        ];
        for (key, value) in overrides {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn usage(e: Error) -> Failure {
    Failure::Usage(e.to_string())
}

fn require_file(path: &Path, flag: &str) -> Result<(), Failure> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::Usage(format!(
            "--{flag}: no such file: {}",
            path.display()
        )))
    }
}

fn require_dir(path: &Path, flag: &str) -> Result<(), Failure> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(Failure::Usage(format!(
            "--{flag}: no such directory: {}",
            path.display()
        )))
    }
}

fn create_dir(path: &Path) -> Result<(), Failure> {
    fs::create_dir_all(path).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn emit(out: &mut dyn Write, value: &serde_json::Value) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).expect("json values serialize");
    writeln!(out, "{text}").map_err(|e| Failure::Runtime(format!("stdout: {e}")))
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let rendered = e.render().to_string();
            if code == EXIT_OK {
                let _ = write!(stdout, "{rendered}");
            } else {
                let _ = write!(stderr, "{rendered}");
            }
            return code;
        }
    };
    match dispatch(cli.command, stdout, stderr) {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            let _ = writeln!(stderr, "usage error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Runtime(msg)) => {
            let _ = writeln!(stderr, "error: {msg}");
            EXIT_FAILURE
        }
    }
}

fn dispatch(
    command: Command,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> Result<(), Failure> {
    match command {
        Command::Register {
            he,
            ihc,
            points,
            out,
            config,
        } => cmd_register(&he, &ihc, &points, &out, &config, stdout),
        Command::Patchify {
            he,
            ihc,
            wsi_id,
            her2,
            out,
            config,
        } => cmd_patchify(&he, &ihc, &wsi_id, &her2, &out, &config, stdout, stderr),
        Command::Pyramid { a, b, config } => cmd_pyramid(&a, &b, &config, stdout),
        Command::Evaluate {
            generated,
            reference,
            report,
        } => cmd_evaluate(&generated, &reference, &report, stdout),
    }
}

pub const ALIGNED_FILE: &str = "aligned_he.png";
pub const MASK_FILE: &str = "validity_mask.png";
pub const HOMOGRAPHY_FILE: &str = "homography.txt";
pub const FIELDS_DIR: &str = "fields";

fn cmd_register(
    he_path: &Path,
    ihc_path: &Path,
    points_path: &Path,
    out: &Path,
    config: &ConfigArgs,
    stdout: &mut dyn Write,
) -> Result<(), Failure> {
    require_file(he_path, "he")?;
    require_file(ihc_path, "ihc")?;
    require_file(points_path, "points")?;
    let cfg = config.resolve().map_err(usage)?;

    let he = load_image(he_path).map_err(|e| e.in_stage("load"))?;
    let ihc = load_image(ihc_path).map_err(|e| e.in_stage("load"))?;
    let pairs = read_point_pairs(points_path).map_err(|e| e.in_stage("projection"))?;
    let result = register_pair(&he, &ihc, &pairs, &cfg.registration())?;

    let before = if he.dims() == ihc.dims() {
        Some(alignment_score(&he, &ihc)?.value)
    } else {
        None
    };
    let after = alignment_score(&result.aligned, &ihc)?.value;

    create_dir(out)?;
    let fields_dir = out.join(FIELDS_DIR);
    create_dir(&fields_dir)?;
    save_image(&result.aligned, out.join(ALIGNED_FILE)).map_err(|e| e.in_stage("write"))?;
    save_image(&result.mask.to_raster(), out.join(MASK_FILE)).map_err(|e| e.in_stage("write"))?;
    let m = result.homography.matrix();
    let h_text: String = (0..3)
        .map(|r| format!("{} {} {}\n", m[(r, 0)], m[(r, 1)], m[(r, 2)]))
        .collect();
    let h_path = out.join(HOMOGRAPHY_FILE);
    fs::write(&h_path, h_text)
        .map_err(|e| Failure::Runtime(format!("{}: {e}", h_path.display())))?;
    let cols = result.grid.cols();
    for (i, (field, _)) in result.fields.iter().enumerate() {
        let name = format!("block_{}_{}.dfld", i / cols, i % cols);
        field
            .write(&fields_dir.join(name))
            .map_err(|e| e.in_stage("write"))?;
    }
    let unregistrable = result
        .fields
        .iter()
        .filter(|(_, o)| *o == BlockOutcome::Unregistrable)
        .count();
    emit(
        stdout,
        &json!({
            "aligned": ALIGNED_FILE,
            "mask": MASK_FILE,
            "blocks": result.fields.len(),
            "unregistrable_blocks": unregistrable,
            "filled_pixels": result.mask.flags().len() - result.mask.valid_count(),
            "alignment_before": before,
            "alignment_after": after,
        }),
    )
}

#[allow(clippy::too_many_arguments)]
fn cmd_patchify(
    he_path: &Path,
    ihc_path: &Path,
    wsi_id: &str,
    her2: &str,
    out: &Path,
    config: &ConfigArgs,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> Result<(), Failure> {
    require_file(he_path, "he")?;
    require_file(ihc_path, "ihc")?;
    let level: Her2Level = her2.parse().map_err(usage)?;
    let cfg = config.resolve().map_err(usage)?;

    let he = load_image(he_path).map_err(|e| e.in_stage("load"))?;
    let ihc = load_image(ihc_path).map_err(|e| e.in_stage("load"))?;
    let patches = cut_patches(&he, &ihc, cfg.patch_size).map_err(|e| e.in_stage("cut"))?;
    create_dir(out)?;
    let manifest = build_manifest(
        &patches,
        wsi_id,
        level,
        &cfg.thresholds(),
        &cfg.split_rule(),
        Some(out),
    )
    .map_err(|e| e.in_stage("manifest"))?;
    if manifest.is_empty() {
        let _ = writeln!(
            stderr,
            "warning: slide {wsi_id}: no patch passed the filters"
        );
    }
    let split = cfg.split_rule().assign(wsi_id);
    let kept = manifest.len();
    let counts: serde_json::Map<String, serde_json::Value> = manifest
        .counts()
        .into_iter()
        .map(|(l, c)| (l.to_string(), json!(c)))
        .collect();

    let manifest_path = out.join(MANIFEST_FILE);
    let merged = if manifest_path.is_file() {
        PatchManifest::read(&manifest_path)?.merge(manifest)
    } else {
        manifest
    };
    merged
        .write(&manifest_path)
        .map_err(|e| e.in_stage("manifest"))?;
    emit(
        stdout,
        &json!({
            "wsi_id": wsi_id,
            "split": split.to_string(),
            "cut": patches.len(),
            "kept": kept,
            "counts": counts,
            "manifest_records": merged.len(),
        }),
    )
}

fn cmd_pyramid(
    a_path: &Path,
    b_path: &Path,
    config: &ConfigArgs,
    stdout: &mut dyn Write,
) -> Result<(), Failure> {
    require_file(a_path, "a")?;
    require_file(b_path, "b")?;
    let cfg = config.resolve().map_err(usage)?;
    let kernel = cfg.kernel().map_err(usage)?;
    let weights = cfg.weights().map_err(usage)?;
    let a = load_image(a_path)?;
    let b = load_image(b_path)?;
    let s = scale_losses(&a, &b, cfg.scales, &kernel)?;
    let total: f64 = weights
        .lambda_scale
        .iter()
        .zip(&s)
        .filter(|(&l, _)| l > 0.0)
        .map(|(l, s)| l * s)
        .sum();
    let l1 = l1_reconstruction(&a, &b)?;
    emit(
        stdout,
        &json!({
            "scales": s,
            "weights": weights.lambda_scale,
            "total": total,
            "l1": l1,
            "lambda_l1": weights.lambda_l1,
        }),
    )
}

fn cmd_evaluate(
    generated: &Path,
    reference: &Path,
    report: &Path,
    stdout: &mut dyn Write,
) -> Result<(), Failure> {
    require_dir(generated, "generated")?;
    require_dir(reference, "reference")?;
    let result = evaluate_pairs(generated, reference)?;
    if result.aggregate.scored == 0 {
        return Err(Failure::Runtime(format!(
            "no scorable pairs between {} and {}",
            generated.display(),
            reference.display()
        )));
    }
    if let Some(parent) = report.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    result.write(report)?;
    let value = serde_json::to_value(&result.aggregate).expect("aggregate serializes");
    emit(stdout, &value)
}
