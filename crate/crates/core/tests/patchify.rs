mod common;

use common::*;
use proptest::prelude::*;
use stainpair::patchify::{
    alignment_score, build_manifest, cut_patches, tissue_ratio, FilterThresholds, Her2Level,
    PatchManifest, Split, SplitRule, HE_DIR, IHC_DIR,
};
use stainpair::Raster;

/// 256×256 slide: textured tissue in three quadrants, the bottom-right one blank.
fn quadrant_slide() -> (Raster, Raster) {
    let tex = Texture::new(21, 256.0);
    let stained = stained_raster(&tex, 256, 256, (0.0, 0.0));
    let he = Raster::from_fn(256, 256, |x, y| {
        if x >= 128 && y >= 128 {
            [250, 250, 250]
        } else {
            stained.pixel(x, y)
        }
    })
    .unwrap();
    let ihc = Raster::from_fn(256, 256, |x, y| {
        if x >= 128 && y >= 128 {
            [246, 247, 249]
        } else {
            recolor(&he.crop(stainpair::Rect::new(x, y, 1, 1))).pixel(0, 0)
        }
    })
    .unwrap();
    (he, ihc)
}

#[test]
fn half_stained_patch() {
    let p = Raster::from_fn(20, 10, |x, _| {
        if x < 10 {
            [255, 255, 255]
        } else {
            [90, 40, 120]
        }
    })
    .unwrap();
    assert_eq!(tissue_ratio(&p), 0.5);
}

#[test]
fn recolored_content_scores_high_and_displaced_content_lower() {
    let tex = Texture::new(9, 200.0);
    let he = stained_raster(&tex, 64, 64, (0.0, 0.0));
    let matched = recolor(&he);
    let elsewhere = recolor(&stained_raster(&tex, 64, 64, (120.0, 90.0)));
    let good = alignment_score(&he, &matched).unwrap();
    let bad = alignment_score(&he, &elsewhere).unwrap();
    assert!(good.value > 0.9, "{}", good.value);
    assert!(bad.value < good.value);
    let flat = Raster::filled(16, 16, [200, 10, 10]).unwrap();
    let score = alignment_score(&flat, &flat).unwrap();
    assert!(score.degenerate && score.value == 0.0);
}

#[test]
fn quadrant_fixture_counts_match_hand_enumeration() {
    let (he, ihc) = quadrant_slide();
    let pairs = cut_patches(&he, &ihc, 64).unwrap();
    assert_eq!(pairs.len(), 16);
    let manifest = build_manifest(
        &pairs,
        "wsi7",
        Her2Level::Three,
        &FilterThresholds::default(),
        &SplitRule::default(),
        None,
    )
    .unwrap();
    let mut kept: Vec<(usize, usize)> = manifest
        .records()
        .iter()
        .map(|r| {
            let parts: Vec<&str> = r.patch_id.rsplitn(3, '_').collect();
            (parts[1].parse().unwrap(), parts[0].parse().unwrap())
        })
        .collect();
    kept.sort();
    let mut want = Vec::new();
    for row in 0..4 {
        for col in 0..4 {
            if !(row >= 2 && col >= 2) {
                want.push((row, col));
            }
        }
    }
    assert_eq!(kept, want);
    let counts = manifest.counts();
    assert_eq!(counts[&Her2Level::Three], 12);
    assert_eq!(counts.values().sum::<usize>(), manifest.len());
}

#[test]
fn blank_slide_gives_empty_manifest() {
    let white = Raster::filled(128, 128, [255, 255, 255]).unwrap();
    let pairs = cut_patches(&white, &white, 64).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let m = build_manifest(
        &pairs,
        "blank",
        Her2Level::Zero,
        &FilterThresholds::default(),
        &SplitRule::default(),
        Some(dir.path()),
    )
    .unwrap();
    assert!(m.is_empty());
    let csv = m.to_csv().unwrap();
    assert_eq!(csv.lines().count(), 1);
}

#[test]
fn disabled_filters_keep_everything_and_write_files() {
    let (he, ihc) = quadrant_slide();
    let pairs = cut_patches(&he, &ihc, 64).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let m = build_manifest(
        &pairs,
        "wsi7",
        Her2Level::One,
        &FilterThresholds::disabled(),
        &SplitRule::default(),
        Some(dir.path()),
    )
    .unwrap();
    assert_eq!(m.len(), 16);
    for r in m.records() {
        assert!(dir.path().join(&r.he_path).is_file());
        assert!(dir.path().join(&r.ihc_path).is_file());
        assert!(r.he_path.starts_with(HE_DIR) && r.ihc_path.starts_with(IHC_DIR));
        assert!((0.0..=1.0).contains(&r.tissue_ratio));
    }
    let back = PatchManifest::from_csv(&m.to_csv().unwrap()).unwrap();
    assert_eq!(back, m);
}

#[test]
fn split_is_a_function_of_slide_id() {
    let rule = SplitRule::default();
    let ids: Vec<String> = (0..200).map(|i| format!("slide_{i}")).collect();
    let test_count = ids
        .iter()
        .filter(|id| rule.assign(id) == Split::Test)
        .count();
    assert!((20..=60).contains(&test_count), "{test_count}");
    for id in &ids {
        assert_eq!(rule.assign(id), rule.assign(id));
    }
    let (he, ihc) = quadrant_slide();
    let pairs = cut_patches(&he, &ihc, 64).unwrap();
    let m = build_manifest(
        &pairs,
        "x",
        Her2Level::Two,
        &FilterThresholds::disabled(),
        &rule,
        None,
    )
    .unwrap();
    assert!(m.records().iter().all(|r| r.split == rule.assign("x")));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn raising_thresholds_never_keeps_more(
        t1 in 0.0f64..1.0, dt in 0.0f64..0.5, a1 in -1.0f64..1.0, da in 0.0f64..0.5,
    ) {
        let (he, ihc) = quadrant_slide();
        let pairs = cut_patches(&he, &ihc, 32).unwrap();
        let kept = |tissue: f64, align: f64| {
            let th = FilterThresholds { min_tissue_ratio: tissue, min_alignment: align, ..FilterThresholds::default() };
            build_manifest(&pairs, "p", Her2Level::Zero, &th, &SplitRule::default(), None).unwrap().len()
        };
        let base = kept(t1, a1);
        prop_assert!(kept(t1 + dt, a1) <= base);
        prop_assert!(kept(t1, a1 + da) <= base);
    }
}
