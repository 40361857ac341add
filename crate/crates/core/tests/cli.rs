mod common;

use std::fs;
use std::path::Path;

use common::*;
use serde_json::Value;
use stainpair::cli::{self, EXIT_FAILURE, EXIT_OK, EXIT_USAGE};
use stainpair::patchify::PatchManifest;
use stainpair::registration::{Homography, Point};
use stainpair::{load_image, save_image, Raster};

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

impl Run {
    fn json(&self) -> Value {
        serde_json::from_str(&self.stdout)
            .unwrap_or_else(|e| panic!("bad JSON ({e}): {}", self.stdout))
    }
}

fn run(args: &[&str]) -> Run {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = cli::run(
        std::iter::once("stainpair").chain(args.iter().copied()),
        &mut out,
        &mut err,
    );
    Run {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn write_points(path: &Path, h: &Homography, pts: &[(f64, f64)]) {
    let mut text = String::from("src_x,src_y,dst_x,dst_y\n");
    for &(x, y) in pts {
        let q = h.apply(Point::new(x, y));
        text += &format!("{x},{y},{},{}\n", q.x, q.y);
    }
    fs::write(path, text).unwrap();
}

#[test]
fn missing_points_file_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let img = random_raster(16, 16, 1);
    save_image(&img, dir.path().join("a.png")).unwrap();
    let a = s(&dir.path().join("a.png"));
    let r = run(&[
        "register",
        "--he",
        &a,
        "--ihc",
        &a,
        "--points",
        "/nonexistent/points.csv",
        "--out",
        &s(dir.path()),
    ]);
    assert_eq!(r.code, EXIT_USAGE);
    assert!(r.stderr.contains("points"), "{}", r.stderr);
    assert!(r.stdout.is_empty());

    let r = run(&["register", "--he", &a]);
    assert_eq!(r.code, EXIT_USAGE);
    assert_eq!(run(&["frobnicate"]).code, EXIT_USAGE);
}

#[test]
fn register_identity_and_warped_pair() {
    let dir = tempfile::tempdir().unwrap();
    let tex = Texture::new(5, 192.0);
    let img = stained_raster(&tex, 192, 192, (0.0, 0.0));
    save_image(&img, dir.path().join("img.png")).unwrap();
    let corners = [(0.0, 0.0), (191.0, 0.0), (191.0, 191.0), (0.0, 191.0)];
    write_points(
        &dir.path().join("id.csv"),
        &Homography::identity(),
        &corners,
    );
    let out = dir.path().join("identity");
    let p = s(&dir.path().join("img.png"));
    let r = run(&[
        "register",
        "--he",
        &p,
        "--ihc",
        &p,
        "--points",
        &s(&dir.path().join("id.csv")),
        "--out",
        &s(&out),
    ]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    assert_eq!(load_image(out.join(cli::ALIGNED_FILE)).unwrap(), img);
    let mask = load_image(out.join(cli::MASK_FILE)).unwrap();
    assert!(mask.pixels().all(|px| px == [255, 255, 255]));
    assert_eq!(fs::read_dir(out.join(cli::FIELDS_DIR)).unwrap().count(), 16);
    let j = r.json();
    assert_eq!(j["blocks"], 16);
    assert_eq!(j["filled_pixels"], 0);

    // HE seen through a small translation; IHC is the recolored original.
    let shift = Homography::translation(-4.0, 3.0);
    let he = Raster::from_fn(192, 192, |x, y| {
        let q = shift.apply(Point::new(x as f64, y as f64));
        let t = tex.eval(q.x, q.y).clamp(0.0, 255.0);
        [
            (60.0 + 0.7 * t).round() as u8,
            (20.0 + 0.6 * t).round() as u8,
            (90.0 + 0.55 * t).round() as u8,
        ]
    })
    .unwrap();
    save_image(&he, dir.path().join("he.png")).unwrap();
    save_image(&recolor(&img), dir.path().join("ihc.png")).unwrap();
    write_points(
        &dir.path().join("shift.csv"),
        &shift,
        &[(10.0, 10.0), (180.0, 12.0), (175.0, 170.0), (15.0, 182.0)],
    );
    let r = run(&[
        "register",
        "--he",
        &s(&dir.path().join("he.png")),
        "--ihc",
        &s(&dir.path().join("ihc.png")),
        "--points",
        &s(&dir.path().join("shift.csv")),
        "--out",
        &s(&dir.path().join("warped")),
    ]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    let j = r.json();
    let (before, after) = (
        j["alignment_before"].as_f64().unwrap(),
        j["alignment_after"].as_f64().unwrap(),
    );
    assert!(after > before, "{before} -> {after}");
}

#[test]
fn register_reports_failed_stage() {
    let dir = tempfile::tempdir().unwrap();
    save_image(&random_raster(32, 32, 1), dir.path().join("a.png")).unwrap();
    fs::write(
        dir.path().join("p.csv"),
        "src_x,src_y,dst_x,dst_y\n0,0,0,0\n1,0,1,0\n",
    )
    .unwrap();
    let a = s(&dir.path().join("a.png"));
    let r = run(&[
        "register",
        "--he",
        &a,
        "--ihc",
        &a,
        "--points",
        &s(&dir.path().join("p.csv")),
        "--out",
        &s(dir.path()),
    ]);
    assert_eq!(r.code, EXIT_FAILURE);
    assert!(r.stderr.contains("projection"), "{}", r.stderr);
}

#[test]
fn pyramid_json() {
    let dir = tempfile::tempdir().unwrap();
    let a = random_raster(32, 32, 3);
    let b = random_raster(32, 32, 4);
    let lifted = Raster::from_fn(32, 32, |x, y| a.pixel(x, y).map(|v| v.min(200) + 12)).unwrap();
    let base = Raster::from_fn(32, 32, |x, y| a.pixel(x, y).map(|v| v.min(200))).unwrap();
    for (name, img) in [("a", &a), ("b", &b), ("lifted", &lifted), ("base", &base)] {
        save_image(img, dir.path().join(format!("{name}.png"))).unwrap();
    }
    let p = |n: &str| s(&dir.path().join(format!("{n}.png")));

    let r = run(&["pyramid", "--a", &p("a"), "--b", &p("a")]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    let j = r.json();
    assert_eq!(j["scales"], serde_json::json!([0.0, 0.0, 0.0]));
    assert_eq!(j["total"], 0.0);

    let j = run(&["pyramid", "--a", &p("base"), "--b", &p("lifted")]).json();
    for v in j["scales"].as_array().unwrap() {
        assert!((v.as_f64().unwrap() - 12.0).abs() < 1e-9);
    }
    assert!((j["l1"].as_f64().unwrap() - 12.0).abs() < 1e-12);

    let r = run(&[
        "pyramid",
        "--a",
        &p("a"),
        "--b",
        &p("b"),
        "--scales",
        "2",
        "--weights",
        "2,3",
    ]);
    let j = r.json();
    let channels = |img: &Raster| {
        let (r, g, b) = stainpair::split_channels(img);
        [to_grid(&r), to_grid(&g), to_grid(&b)]
    };
    let (ca, cb) = (channels(&a), channels(&b));
    let oracle = |i: usize| {
        ca.iter()
            .zip(&cb)
            .map(|(x, y)| oracle_scale_loss(x, y, i))
            .sum::<f64>()
            / 3.0
    };
    let got: Vec<f64> = j["scales"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    assert_eq!(got.len(), 2);
    assert!((got[0] - oracle(1)).abs() < 1e-9 && (got[1] - oracle(2)).abs() < 1e-9);
    assert!((j["total"].as_f64().unwrap() - (2.0 * oracle(1) + 3.0 * oracle(2))).abs() < 1e-9);
    assert_eq!(j["weights"], serde_json::json!([2.0, 3.0]));

    save_image(&random_raster(30, 32, 5), dir.path().join("small.png")).unwrap();
    let r = run(&["pyramid", "--a", &p("a"), "--b", &p("small")]);
    assert_eq!(r.code, EXIT_FAILURE);
    assert!(r.stdout.is_empty());
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let a = random_raster(32, 32, 6);
    let b = random_raster(32, 32, 7);
    save_image(&a, dir.path().join("a.png")).unwrap();
    save_image(&b, dir.path().join("b.png")).unwrap();
    fs::write(
        dir.path().join("cfg.txt"),
        "# test config\nscales = 1\nscale_weights = 5\nlambda_l1 = 10\n",
    )
    .unwrap();
    let (pa, pb, cfg) = (
        s(&dir.path().join("a.png")),
        s(&dir.path().join("b.png")),
        s(&dir.path().join("cfg.txt")),
    );
    let j = run(&["pyramid", "--a", &pa, "--b", &pb, "--config", &cfg]).json();
    assert_eq!(j["scales"].as_array().unwrap().len(), 1);
    assert_eq!(j["lambda_l1"], 10.0);
    let j = run(&[
        "pyramid",
        "--a",
        &pa,
        "--b",
        &pb,
        "--config",
        &cfg,
        "--scales",
        "2",
        "--weights",
        "1,1",
    ])
    .json();
    assert_eq!(j["scales"].as_array().unwrap().len(), 2);
    assert_eq!(j["weights"], serde_json::json!([1.0, 1.0]));

    fs::write(dir.path().join("bad.txt"), "kernel_size = 4\n").unwrap();
    let r = run(&[
        "pyramid",
        "--a",
        &pa,
        "--b",
        &pb,
        "--config",
        &s(&dir.path().join("bad.txt")),
    ]);
    assert_eq!(r.code, EXIT_USAGE);
}

fn quadrant_pair(dir: &Path) -> (String, String) {
    let tex = Texture::new(21, 256.0);
    let stained = stained_raster(&tex, 256, 256, (0.0, 0.0));
    let he = Raster::from_fn(256, 256, |x, y| {
        if x >= 128 && y >= 128 {
            [252; 3]
        } else {
            stained.pixel(x, y)
        }
    })
    .unwrap();
    let ihc = recolor(&he);
    let ihc = Raster::from_fn(256, 256, |x, y| {
        if x >= 128 && y >= 128 {
            [248; 3]
        } else {
            ihc.pixel(x, y)
        }
    })
    .unwrap();
    save_image(&he, dir.join("he.png")).unwrap();
    save_image(&ihc, dir.join("ihc.png")).unwrap();
    (s(&dir.join("he.png")), s(&dir.join("ihc.png")))
}

#[test]
fn patchify_fixtures() {
    let dir = tempfile::tempdir().unwrap();
    let (he, ihc) = quadrant_pair(dir.path());
    let out = dir.path().join("patches");

    let r = run(&[
        "patchify",
        "--he",
        &he,
        "--ihc",
        &ihc,
        "--wsi-id",
        "q",
        "--her2",
        "2+",
        "--out",
        &s(&out),
        "--patch-size",
        "64",
    ]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    let j = r.json();
    assert_eq!(
        (j["cut"].as_u64(), j["kept"].as_u64()),
        (Some(16), Some(12))
    );
    assert_eq!(j["counts"]["2+"], 12);

    let r = run(&[
        "patchify",
        "--he",
        &he,
        "--ihc",
        &ihc,
        "--wsi-id",
        "all",
        "--her2",
        "0",
        "--out",
        &s(&out),
        "--patch-size",
        "64",
        "--tissue-threshold",
        "-inf",
        "--alignment-threshold",
        "-inf",
    ]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    assert_eq!(r.json()["kept"], 16);
    let manifest = PatchManifest::read(&out.join("manifest.csv")).unwrap();
    assert_eq!(manifest.len(), 28);

    let white = Raster::filled(128, 128, [255; 3]).unwrap();
    save_image(&white, dir.path().join("white.png")).unwrap();
    let w = s(&dir.path().join("white.png"));
    let r = run(&[
        "patchify",
        "--he",
        &w,
        "--ihc",
        &w,
        "--wsi-id",
        "blank",
        "--her2",
        "1+",
        "--out",
        &s(&out),
        "--patch-size",
        "64",
    ]);
    assert_eq!(r.code, EXIT_OK);
    assert_eq!(r.json()["kept"], 0);
    assert!(r.stderr.contains("warning"), "{}", r.stderr);

    let r = run(&[
        "patchify",
        "--he",
        &w,
        "--ihc",
        &w,
        "--wsi-id",
        "x",
        "--her2",
        "4+",
        "--out",
        &s(&out),
    ]);
    assert_eq!(r.code, EXIT_USAGE);
}

#[test]
fn evaluate_directories() {
    let dir = tempfile::tempdir().unwrap();
    let (gen, refs) = (dir.path().join("gen"), dir.path().join("ref"));
    fs::create_dir_all(&gen).unwrap();
    fs::create_dir_all(&refs).unwrap();
    for i in 0..5 {
        let img = random_raster(20, 20, i);
        save_image(&img, gen.join(format!("{i}.png"))).unwrap();
        save_image(&img, refs.join(format!("{i}.png"))).unwrap();
    }
    let report = dir.path().join("out/report.csv");
    let r = run(&[
        "evaluate",
        "--generated",
        &s(&gen),
        "--reference",
        &s(&refs),
        "--report",
        &s(&report),
    ]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    let j = r.json();
    assert_eq!(j["mean_ssim"], 1.0);
    assert_eq!(j["infinite_psnr_count"], 5);
    assert!(report.is_file() && report.with_extension("json").is_file());

    let empty = dir.path().join("empty");
    fs::create_dir_all(&empty).unwrap();
    let r = run(&[
        "evaluate",
        "--generated",
        &s(&empty),
        "--reference",
        &s(&refs),
        "--report",
        &s(&report),
    ]);
    assert_eq!(r.code, EXIT_FAILURE);
}
