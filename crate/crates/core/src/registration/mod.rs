//! HE → IHC registration: projective alignment from manual correspondences,
//! then per-block single-channel non-rigid refinement whose fields are
//! replayed on every channel, stitched, and gap-filled.

mod block;
mod blocks;
mod field;
mod gaps;
mod homography;
mod warp;

use rayon::prelude::*;

pub use block::{
    estimate_translation, register_block, register_block_with, registered_mad,
    BlockRegistrationConfig,
};
pub use blocks::{partition_blocks, stitch, BlockGrid, Tile, DEFAULT_GRID};
pub use field::DisplacementField;
pub use gaps::{fill_gaps, fill_gaps_raster};
pub use homography::{
    estimate_homography, homography_from_pairs, read_point_pairs, two_step_projection, Homography,
    Point, PointPair,
};
pub use warp::{apply_field, apply_field_masked, sample_bilinear, warp, Resample};

use crate::error::{Error, Result};
use crate::raster::{merge_channels, split_channels, Channel, Plane, Raster, ValidityMask};

#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationConfig {
    pub channel: Channel,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub block: BlockRegistrationConfig,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self {
            channel: Channel::Green,
            grid_rows: DEFAULT_GRID,
            grid_cols: DEFAULT_GRID,
            block: BlockRegistrationConfig::default(),
        }
    }
}

/// Outcome of a block's non-rigid stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockOutcome {
    Registered,
    /// The block had no intensity variance (or too little area); the
    /// identity field was kept.
    Unregistrable,
}

#[derive(Debug, Clone)]
pub struct PairRegistration {
    /// HE resampled into the IHC frame, gaps filled.
    pub aligned: Raster,
    /// Pixels that carried real HE content before gap filling.
    pub mask: ValidityMask,
    pub homography: Homography,
    pub grid: BlockGrid,
    /// Per-block fields and outcomes, row-major over the grid.
    pub fields: Vec<(DisplacementField, BlockOutcome)>,
}

type BlockResult = (Vec<(Plane, ValidityMask)>, DisplacementField, BlockOutcome);

/// Full pipeline: projective warp of `he` onto `ihc`'s frame, block-wise
/// registration on one channel, field replay on all channels, stitching and
/// gap filling.
pub fn register_pair(
    he: &Raster,
    ihc: &Raster,
    pairs: &[PointPair],
    config: &RegistrationConfig,
) -> Result<PairRegistration> {
    let homography = homography_from_pairs(pairs).map_err(|e| e.in_stage("projection"))?;
    let frame = ihc.dims();
    let (warped, warp_mask) = warp(he, &homography, frame).map_err(|e| e.in_stage("warp"))?;
    if warp_mask.valid_count() == 0 {
        return Err(
            Error::Degenerate("projected HE image does not overlap the IHC frame".into())
                .in_stage("warp"),
        );
    }
    let grid = BlockGrid::new(frame.0, frame.1, config.grid_rows, config.grid_cols)
        .map_err(|e| e.in_stage("partition"))?;

    let (r, g, b) = split_channels(&warped);
    let he_planes = [r, g, b];
    let ch = config.channel.index();
    // Matching runs on a gap-filled copy of the moving channel.
    let moving_channel = if warp_mask.is_all_valid() {
        he_planes[ch].clone()
    } else {
        fill_gaps(&he_planes[ch], &warp_mask).map_err(|e| e.in_stage("warp"))?
    };
    let fixed_channel = {
        let (r, g, b) = split_channels(ihc);
        vec![r, g, b].swap_remove(ch)
    };

    let rects = grid.rects();
    let per_block: Vec<Result<BlockResult>> = rects
        .par_iter()
        .map(|&rect| {
            let fixed = fixed_channel.crop(rect);
            let moving = moving_channel.crop(rect);
            let (field, outcome) = match register_block_with(&fixed, &moving, &config.block) {
                Ok(f) => (f, BlockOutcome::Registered),
                Err(Error::ZeroVariance | Error::TooSmall { .. }) => (
                    DisplacementField::zero(rect.width, rect.height),
                    BlockOutcome::Unregistrable,
                ),
                Err(e) => return Err(e.in_stage("block registration")),
            };
            let block_mask = warp_mask.crop(rect);
            let channels = he_planes
                .iter()
                .map(|p| apply_field_masked(&field, &p.crop(rect), Some(&block_mask)))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| e.in_stage("field replay"))?;
            Ok((channels, field, outcome))
        })
        .collect();

    let mut channel_blocks: [Vec<(Plane, ValidityMask)>; 3] = Default::default();
    let mut fields = Vec::with_capacity(rects.len());
    for block in per_block {
        let (channels, field, outcome) = block?;
        for (dst, src) in channel_blocks.iter_mut().zip(channels) {
            dst.push(src);
        }
        fields.push((field, outcome));
    }

    let mut stitched = Vec::with_capacity(3);
    let mut mask = None;
    for blocks in &channel_blocks {
        let (plane, m) = stitch(blocks, &grid).map_err(|e| e.in_stage("stitch"))?;
        stitched.push(plane);
        mask.get_or_insert(m);
    }
    let mask = mask.expect("three channels");
    let filled = if mask.is_all_valid() {
        stitched
    } else {
        gaps::fill_planes(&stitched, &mask).map_err(|e| e.in_stage("gap fill"))?
    };
    let aligned =
        merge_channels(&filled[0], &filled[1], &filled[2]).map_err(|e| e.in_stage("merge"))?;
    Ok(PairRegistration {
        aligned,
        mask,
        homography,
        grid,
        fields,
    })
}
