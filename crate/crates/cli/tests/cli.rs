use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn adt(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adt"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("run adt")
}

fn stdout_json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("json on stdout")
}

const SMALL: &str = r#"{
  "images": [
    {"id": 1, "file_name": "a.png", "width": 40, "height": 30},
    {"id": 2, "file_name": "b.png", "width": 40, "height": 30},
    {"id": 3, "file_name": "c.png", "width": 40, "height": 30}
  ],
  "annotations": [
    {"id": 1, "image_id": 1, "category_id": 1, "bbox": [0, 0, 10, 10], "area": 100, "iscrowd": 0},
    {"id": 2, "image_id": 1, "category_id": 2, "bbox": [5, 0, 10, 10], "area": 100, "iscrowd": 0},
    {"id": 3, "image_id": 2, "category_id": 1, "bbox": [20, 10, 8, 6], "area": 48, "iscrowd": 0}
  ],
  "categories": [{"id": 1, "name": "plane"}, {"id": 2, "name": "ship"}]
}"#;

fn small(dir: &Path) {
    std::fs::write(dir.join("gt.json"), SMALL).unwrap();
}

#[test]
fn stats_reports_counts() {
    let dir = tempfile::tempdir().unwrap();
    small(dir.path());
    let v = stdout_json(&adt(dir.path(), &["stats", "gt.json"]));
    assert_eq!(v["command"], "stats");
    assert_eq!(v["result"]["labelled"], 2);
    assert_eq!(v["result"]["unlabelled"], 1);
    assert_eq!(v["result"]["per_class"][0]["count"], 2);
    assert_eq!(v["config"]["seed"], 0);

    let table = adt(dir.path(), &["stats", "gt.json", "--table"]);
    let text = String::from_utf8(table.stdout).unwrap();
    assert!(
        text.contains("plane") && text.contains("unlabelled images: 1"),
        "{text}"
    );
}

#[test]
fn exit_codes_follow_error_kind() {
    let dir = tempfile::tempdir().unwrap();
    small(dir.path());
    std::fs::write(dir.path().join("broken.json"), "{\"images\": [").unwrap();
    std::fs::write(
        dir.path().join("dangling.json"),
        r#"{"images": [], "annotations": [{"id": 1, "image_id": 9, "category_id": 1, "bbox": [0,0,1,1]}], "categories": [{"id": 1, "name": "x"}]}"#,
    )
    .unwrap();

    let code = |args: &[&str]| adt(dir.path(), args).status.code().unwrap();
    assert_eq!(code(&["stats", "broken.json"]), 2);
    assert_eq!(code(&["stats", "dangling.json"]), 3);
    assert_eq!(code(&["focal", "--pt", "0.5", "--alpha", "0"]), 4);
    assert_eq!(code(&["stats", "gt.json", "--no-such-flag"]), 4);
    assert_eq!(code(&["stats", "gt.json", "--jobs", "0"]), 4);
    assert_eq!(code(&["stats", "missing.json"]), 5);
    assert_eq!(code(&["--help"]), 0);

    let out = adt(dir.path(), &["stats", "broken.json"]);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("12"), "byte offset missing: {err}");
}

#[test]
fn out_flag_writes_file() {
    let dir = tempfile::tempdir().unwrap();
    small(dir.path());
    let out = adt(
        dir.path(),
        &["density", "gt.json", "--out", "res/density.json"],
    );
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
    let v: Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("res/density.json")).unwrap(),
    )
    .unwrap();
    let rows = v["result"]["annotations"].as_array().unwrap();
    assert_eq!(rows.len(), 3);
    // boxes 1 and 2 overlap by half their area
    let d1 = rows[0]["density"].as_f64().unwrap();
    assert!((d1 - 50.0 / 150.0).abs() < 1e-12);
    assert_eq!(rows[2]["density"], 0.0);
}

#[test]
fn group_then_sample() {
    let dir = tempfile::tempdir().unwrap();
    small(dir.path());
    assert!(adt(
        dir.path(),
        &[
            "group",
            "gt.json",
            "--policy",
            "thresholds:2,1",
            "--out",
            "groups.json"
        ]
    )
    .status
    .success());
    let groups: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("groups.json")).unwrap())
            .unwrap();
    assert_eq!(groups["result"]["1"], "frequent");
    assert_eq!(groups["result"]["2"], "rare");

    let mut props = Vec::new();
    for i in 0..30 {
        props.push(serde_json::json!({"index": i, "label": 1}));
    }
    for i in 30..40 {
        props.push(serde_json::json!({"index": i, "label": 2}));
    }
    for i in 40..400 {
        props.push(serde_json::json!({"index": i, "label": null}));
    }
    std::fs::write(
        dir.path().join("props.json"),
        serde_json::to_string(&props).unwrap(),
    )
    .unwrap();
    let run = |seed: &str| {
        stdout_json(&adt(
            dir.path(),
            &["sample", "props.json", "groups.json", "--seed", seed],
        ))
    };
    let v = run("3");
    let r = &v["result"];
    // 10 rare, no common pool, so the frequent pool absorbs the deficit
    assert_eq!(r["rare"], 10);
    assert_eq!(r["common"], 0);
    assert_eq!(r["frequent"], 30);
    assert_eq!(r["background"], 216);
    assert_eq!(r["indices"].as_array().unwrap().len(), 256);
    assert_eq!(run("3"), v);
    assert_ne!(run("4")["result"]["indices"], r["indices"]);
}

#[test]
fn focal_from_flags_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("pt.csv"), "p_t,other\n0.9,x\n1.0,y\n").unwrap();
    let v = stdout_json(&adt(
        dir.path(),
        &[
            "focal", "--pt", "0.5", "--csv", "pt.csv", "--alpha", "1", "--gamma", "0",
        ],
    ));
    let rows = v["result"]["values"].as_array().unwrap();
    assert_eq!(rows.len(), 3);
    assert!((rows[0]["loss"].as_f64().unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
    assert!((rows[1]["loss"].as_f64().unwrap() + 0.9f64.ln()).abs() < 1e-12);
    assert_eq!(rows[2]["loss"], 0.0);
}

#[test]
fn eval_writes_csvs() {
    let dir = tempfile::tempdir().unwrap();
    small(dir.path());
    std::fs::write(
        dir.path().join("dets.json"),
        r#"[{"image_id": 1, "category_id": 1, "bbox": [0, 0, 10, 10], "score": 0.9},
            {"image_id": 2, "category_id": 1, "bbox": [0, 0, 5, 5], "score": 0.8},
            {"image_id": 1, "category_id": 2, "bbox": [5, 0, 10, 10], "score": 0.7}]"#,
    )
    .unwrap();
    let v = stdout_json(&adt(
        dir.path(),
        &[
            "eval",
            "gt.json",
            "dets.json",
            "--csv",
            "ap.csv",
            "--pr-csv",
            "pr.csv",
        ],
    ));
    let map50 = v["result"]["map_50"].as_f64().unwrap();
    // plane: [TP, FP] against 2 GT gives 51/101; ship is perfect
    assert!(
        (map50 - (51.0 / 101.0 + 1.0) / 2.0).abs() < 1e-12,
        "{map50}"
    );
    let csv = std::fs::read_to_string(dir.path().join("ap.csv")).unwrap();
    assert!(csv.starts_with("category_id,name,ap50,ap50_95,ap_small,ap_medium,ap_large\n"));
    assert_eq!(csv.lines().count(), 3);
    assert!(dir.path().join("pr.csv").exists());

    std::fs::write(
        dir.path().join("bad.json"),
        r#"[{"image_id": 7, "category_id": 1, "bbox": [0,0,1,1], "score": 0.5}]"#,
    )
    .unwrap();
    assert_eq!(
        adt(dir.path(), &["eval", "gt.json", "bad.json"])
            .status
            .code(),
        Some(3)
    );
}

#[test]
fn tile_convert_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    small(dir.path());
    let v = stdout_json(&adt(
        dir.path(),
        &[
            "tile",
            "gt.json",
            "--out-dir",
            "tiles",
            "--patch-size",
            "20",
            "--stride",
            "20",
        ],
    ));
    assert_eq!(v["result"]["source_images"], 3);
    assert!(dir.path().join("tiles/manifest.json").exists());

    let v = stdout_json(&adt(
        dir.path(),
        &[
            "convert",
            "gt.json",
            "--out-dir",
            "yolo",
            "--bg-policy",
            "keep-all",
            "--emit-empty",
        ],
    ));
    assert_eq!(v["result"]["files_written"], 3);
    assert_eq!(
        std::fs::read_to_string(dir.path().join("yolo/c.txt")).unwrap(),
        ""
    );
    assert_eq!(
        std::fs::read_to_string(dir.path().join("yolo/classes.txt")).unwrap(),
        "plane\nship\n"
    );

    let v = stdout_json(&adt(
        dir.path(),
        &[
            "convert",
            "gt.json",
            "--direction",
            "yolo2coco",
            "--labels",
            "yolo",
            "--out-dir",
            "back",
        ],
    ));
    assert_eq!(v["result"]["annotations"], 3);
    let back: Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("back/annotations.json")).unwrap(),
    )
    .unwrap();
    let bbox: Vec<f64> = serde_json::from_value(back["annotations"][2]["bbox"].clone()).unwrap();
    for (got, want) in bbox.iter().zip([20.0, 10.0, 8.0, 6.0]) {
        assert!((got - want).abs() < 0.01);
    }
}

#[test]
fn tile_pixel_mode_crops_images() {
    let dir = tempfile::tempdir().unwrap();
    small(dir.path());
    let imgs = dir.path().join("imgs");
    std::fs::create_dir(&imgs).unwrap();
    let img = image::RgbImage::from_fn(40, 30, |x, y| image::Rgb([x as u8, y as u8, 7]));
    img.save(imgs.join("a.png")).unwrap();
    img.save(imgs.join("b.png")).unwrap();
    // c.png missing: reported, not fatal

    let v = stdout_json(&adt(
        dir.path(),
        &[
            "tile",
            "gt.json",
            "--out-dir",
            "tiles",
            "--img-dir",
            "imgs",
            "--patch-size",
            "20",
            "--stride",
            "20",
        ],
    ));
    let pixels = &v["result"]["pixels"];
    assert_eq!(pixels["patches_written"], 8);
    assert_eq!(pixels["errors"].as_array().unwrap().len(), 1);

    let patch = image::open(dir.path().join("tiles/images/a__20_10.png"))
        .unwrap()
        .to_rgb8();
    assert_eq!(patch.dimensions(), (20, 20));
    assert_eq!(patch.get_pixel(0, 0), &image::Rgb([20, 10, 7]));
}
