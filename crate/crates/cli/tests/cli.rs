//! End-to-end behavior of the `sck` binary: output formats, exit codes,
//! config layering and determinism.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sck_core::image::write_image;
use sck_core::synth;

fn sck() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sck"))
}

fn run(args: &[&str]) -> Output {
    sck().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).expect("utf8 stdout")
}

fn write_test_image(dir: &Path, name: &str, seed: u64, side: usize) -> PathBuf {
    let path = dir.join(name);
    write_image(&synth::textured_image(side, side, seed), &path).unwrap();
    path
}

fn write_homography(dir: &Path, name: &str, values: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, values).unwrap();
    path
}

#[test]
fn detect_prints_header_and_keypoint_lines() {
    let dir = tempfile::tempdir().unwrap();
    let img = write_test_image(dir.path(), "t.pgm", 3, 40);
    let out = run(&[
        "detect",
        img.to_str().unwrap(),
        "--n",
        "11",
        "--lambda",
        "0.15",
        "--topk",
        "1000",
    ]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("# SCK n=11 lambda=0.15 cm=[3,"), "{header}");
    let mut seen = 0;
    for line in lines {
        let fields: Vec<&str> = line.split(' ').collect();
        assert_eq!(fields.len(), 5, "line: {line}");
        fields[0].parse::<usize>().unwrap();
        fields[1].parse::<usize>().unwrap();
        let size: f64 = fields[2].parse().unwrap();
        fields[3].parse::<usize>().unwrap();
        fields[4].parse::<f64>().unwrap();
        assert!((size - 7.778175).abs() < 1e-6);
        seen += 1;
    }
    assert!(seen > 0, "expected key-points on a textured image");
}

#[test]
fn detect_missing_file_exits_1() {
    let out = run(&["detect", "/nonexistent/missing.pgm"]);
    assert_eq!(code(&out), 1);
    assert!(!out.stderr.is_empty());
}

#[test]
fn detect_even_block_side_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let img = write_test_image(dir.path(), "t.pgm", 3, 24);
    let out = run(&["detect", img.to_str().unwrap(), "--n", "4"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn detect_writes_out_and_overlay_files() {
    let dir = tempfile::tempdir().unwrap();
    let img = write_test_image(dir.path(), "t.pgm", 7, 32);
    let list = dir.path().join("kps.txt");
    let overlay = dir.path().join("overlay.ppm");
    let out = run(&[
        "detect",
        img.to_str().unwrap(),
        "--out",
        list.to_str().unwrap(),
        "--overlay",
        overlay.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).is_empty());
    let text = std::fs::read_to_string(&list).unwrap();
    assert!(text.starts_with("# SCK"));
    let ppm = std::fs::read(&overlay).unwrap();
    assert!(ppm.starts_with(b"P6\n32 32\n255\n"));
}

#[test]
fn detect_small_image_warns_and_prints_empty_list() {
    let dir = tempfile::tempdir().unwrap();
    let img = write_test_image(dir.path(), "t.pgm", 1, 8);
    let out = run(&["detect", img.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    assert_eq!(stdout(&out).lines().count(), 1, "header only");
    assert!(String::from_utf8_lossy(&out.stderr).contains("smaller than one"));
}

#[test]
fn help_exits_0_and_lists_every_flag() {
    let out = run(&["detect", "--help"]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    for flag in [
        "--n", "--lambda", "--cm-min", "--cm-max", "--nms", "--topk", "--sigma", "--gsize",
        "--a1", "--a2", "--stride", "--out", "--overlay", "--config", "--threads",
    ] {
        assert!(text.contains(flag), "missing {flag} in help");
    }
    assert_eq!(code(&run(&["--help"])), 0);
}

#[test]
fn eval_pair_identity_repeatability_is_one() {
    let dir = tempfile::tempdir().unwrap();
    let img = write_test_image(dir.path(), "t.pgm", 5, 48);
    let h = write_homography(dir.path(), "h.txt", "1 0 0 0 1 0 0 0 1");
    let out = run(&[
        "eval-pair",
        img.to_str().unwrap(),
        img.to_str().unwrap(),
        h.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let json: serde_json::Value = serde_json::from_str(stdout(&out).trim()).unwrap();
    assert_eq!(json["repeatability"], 1.0);
    assert_eq!(json["matching_score"], 1.0);
    assert!(json["denominator"].as_u64().unwrap() > 0);
    assert_eq!(
        json["correspondences"].as_u64().unwrap(),
        json["denominator"].as_u64().unwrap()
    );
}

#[test]
fn eval_pair_malformed_homography_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let img = write_test_image(dir.path(), "t.pgm", 5, 24);
    let h = write_homography(dir.path(), "h.txt", "1 0 0 0 1 0 0 0"); // 8 numbers
    let out = run(&[
        "eval-pair",
        img.to_str().unwrap(),
        img.to_str().unwrap(),
        h.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn eval_pair_on_warped_pair_matches_library_value() {
    let dir = tempfile::tempdir().unwrap();
    let img = write_test_image(dir.path(), "a.pgm", 11, 56);
    let h = write_homography(dir.path(), "h.txt", "1 0 6 0 1 0 0 0 1");
    let warped = dir.path().join("b.pgm");
    let out = run(&[
        "warp",
        img.to_str().unwrap(),
        h.to_str().unwrap(),
        warped.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);

    let out = run(&[
        "eval-pair",
        img.to_str().unwrap(),
        warped.to_str().unwrap(),
        h.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let json: serde_json::Value = serde_json::from_str(stdout(&out).trim()).unwrap();

    // Same computation through the library on the same files.
    let img_a = sck_core::image::load_image(&img).unwrap();
    let img_b = sck_core::image::load_image(&warped).unwrap();
    let dict = sck_core::dictionary::build_haar(11, 5).unwrap();
    let cfg = sck_core::detector::DetectorConfig::default();
    let kps_a = sck_core::detector::detect(&img_a, &dict, &cfg).unwrap().keypoints;
    let kps_b = sck_core::detector::detect(&img_b, &dict, &cfg).unwrap().keypoints;
    let hm = sck_core::eval::Homography::translation(6.0, 0.0);
    let expect = sck_core::eval::matching_score(&kps_a, &kps_b, &hm, &img_a, &img_b).unwrap();
    assert_eq!(
        json["repeatability"].as_f64(),
        expect.repeatability,
        "CLI and library disagree"
    );
    assert_eq!(json["correspondences"].as_u64().unwrap() as usize, expect.correspondences);
}

#[test]
fn eval_illum_passes_and_fails_by_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.pgm");
    write_image(&synth::smooth_image(40, 40, 9), &path).unwrap();
    let out = run(&["eval-illum", path.to_str().unwrap(), "2", "10"]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    assert!(stdout(&out).starts_with("PASS"));

    let out = run(&["eval-illum", path.to_str().unwrap(), "1", "0"]);
    assert_eq!(code(&out), 0);

    let out = run(&["eval-illum", path.to_str().unwrap(), "-1", "0"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn warp_identity_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let img = write_test_image(dir.path(), "t.pgm", 13, 20);
    let h = write_homography(dir.path(), "h.txt", "1 0 0 0 1 0 0 0 1");
    let out_path = dir.path().join("w.pgm");
    let out = run(&[
        "warp",
        img.to_str().unwrap(),
        h.to_str().unwrap(),
        out_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    assert_eq!(std::fs::read(&img).unwrap(), std::fs::read(&out_path).unwrap());
}

#[test]
fn warp_translation_shifts_pixels() {
    let dir = tempfile::tempdir().unwrap();
    let img_path = write_test_image(dir.path(), "t.pgm", 13, 20);
    let h = write_homography(dir.path(), "h.txt", "1 0 3 0 1 2 0 0 1");
    let out_path = dir.path().join("w.pgm");
    assert_eq!(code(&run(&[
        "warp",
        img_path.to_str().unwrap(),
        h.to_str().unwrap(),
        out_path.to_str().unwrap(),
    ])), 0);
    let src = sck_core::image::load_image(&img_path).unwrap();
    let dst = sck_core::image::load_image(&out_path).unwrap();
    for y in 2..20 {
        for x in 3..20 {
            assert_eq!(dst.get(x, y), src.get(x - 3, y - 2));
        }
    }
    assert_eq!(dst.get(0, 0), 0.0);
}

#[test]
fn warp_singular_homography_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let img = write_test_image(dir.path(), "t.pgm", 13, 16);
    let h = write_homography(dir.path(), "h.txt", "1 2 3 2 4 6 0 0 1");
    let out = run(&[
        "warp",
        img.to_str().unwrap(),
        h.to_str().unwrap(),
        dir.path().join("w.pgm").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn identical_invocations_produce_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let img = write_test_image(dir.path(), "t.pgm", 17, 40);
    let args = ["detect", img.to_str().unwrap(), "--lambda", "0.2"];
    let a = run(&args);
    let b = run(&args);
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn config_file_layering_and_unknown_key() {
    let dir = tempfile::tempdir().unwrap();
    let img = write_test_image(dir.path(), "t.pgm", 19, 32);
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# experiment bundle\nlambda = 0.3\ntopk = 5\n").unwrap();

    let from_file = run(&[
        "detect",
        img.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
    ]);
    assert_eq!(code(&from_file), 0);
    let text = stdout(&from_file);
    assert!(text.starts_with("# SCK n=11 lambda=0.3"), "{text}");
    assert!(text.lines().count() <= 6, "topk=5 honored");

    // Flags override file values.
    let overridden = run(&[
        "detect",
        img.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--lambda",
        "0.15",
    ]);
    assert!(stdout(&overridden).starts_with("# SCK n=11 lambda=0.15"));

    std::fs::write(&cfg, "lambda = 0.3\nblocksize = 9\n").unwrap();
    let bad = run(&[
        "detect",
        img.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
    ]);
    assert_eq!(code(&bad), 2);
    assert!(String::from_utf8_lossy(&bad.stderr).contains("unknown key"));
}

#[test]
fn cm_limits_flow_into_output() {
    let dir = tempfile::tempdir().unwrap();
    let img = write_test_image(dir.path(), "t.pgm", 29, 40);
    let out = run(&[
        "detect",
        img.to_str().unwrap(),
        "--cm-min",
        "5",
        "--cm-max",
        "9",
    ]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    assert!(text.starts_with("# SCK n=11 lambda=0.15 cm=[5,9]"), "{text}");
    for line in text.lines().skip(1) {
        let cm: usize = line.split(' ').nth(3).unwrap().parse().unwrap();
        assert!((5..=9).contains(&cm), "cm {cm} escaped the gate");
    }

    // Inverted limits are a usage error.
    let bad = run(&[
        "detect",
        img.to_str().unwrap(),
        "--cm-min",
        "9",
        "--cm-max",
        "5",
    ]);
    assert_eq!(code(&bad), 2);
}

#[test]
fn eval_illum_overflowing_gain_is_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.pgm");
    write_image(&synth::smooth_image(24, 24, 9), &path).unwrap();
    let out = run(&["eval-illum", path.to_str().unwrap(), "1e308", "0"]);
    assert_eq!(code(&out), 1, "overflow must fail cleanly, not crash");
}

#[test]
fn detect_reads_png_input() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.png");
    write_image(&synth::textured_image(32, 32, 23), &path).unwrap();
    let out = run(&["detect", path.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).starts_with("# SCK"));
}
