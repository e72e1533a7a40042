use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn care(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_care")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = care(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

struct Workspace {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Workspace {
    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn write(&self, name: &str, body: &str) -> PathBuf {
        let path = self.path(name);
        std::fs::write(&path, body).unwrap();
        path
    }
}

fn synth() -> Workspace {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let ws = Workspace { _dir: dir, root };
    let spec = ws.write(
        "spec.json",
        r#"{"classes": [
            {"name": "smooth", "train_count": 12, "test_count": 4, "minority": false},
            {"name": "grainy", "train_count": 12, "test_count": 4, "minority": false},
            {"name": "lesion", "train_count": 6, "test_count": 4, "minority": true}],
           "image_size": 16, "patch_radius": [2, 3]}"#,
    );
    ok(&["synth-data", "--out", p(&ws.path("data")), "--config", p(&spec), "--seed", "3"]);
    ws.write(
        "pre.json",
        r#"{"stage": "pretrain", "epochs": 1, "batch_size": 8, "learning_rate": 0.01,
            "backbone": {"input_channels": 1, "input_size": 16, "num_classes": 3, "widths": [4, 6], "head": {"kind": "gap_linear"}}}"#,
    );
    ws.write("ft.json", r#"{"stage": "finetune", "epochs": 1, "batch_size": 8, "learning_rate": 0.01}"#);
    ws
}

fn pretrained(ws: &Workspace) -> PathBuf {
    let ckpt = ws.path("pre_ckpt.json");
    ok(&[
        "pretrain",
        "--config",
        p(&ws.path("pre.json")),
        "--data",
        p(&ws.path("data/train")),
        "--out",
        p(&ckpt),
        "--log",
        p(&ws.path("pre.jsonl")),
    ]);
    ckpt
}

#[test]
fn synth_data_writes_splits_boxes_and_spec() {
    let ws = synth();
    for class in ["smooth", "grainy", "lesion"] {
        assert_eq!(std::fs::read_dir(ws.path("data/train").join(class)).unwrap().count(), if class == "lesion" { 6 } else { 12 });
    }
    let boxes = std::fs::read_to_string(ws.path("data/train_boxes.csv")).unwrap();
    assert!(boxes.starts_with("image_id,class_label,x_min,y_min,x_max,y_max"));
    assert_eq!(boxes.lines().count(), 7);
    assert!(ws.path("data/test_boxes.csv").exists());
    assert!(ws.path("data/spec.json").exists());
}

#[test]
fn pretrain_finetune_eval_and_viz() {
    let ws = synth();
    let pre = pretrained(&ws);
    let log = std::fs::read_to_string(ws.path("pre.jsonl")).unwrap();
    for line in log.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["kind"] == "step" || v["kind"] == "epoch");
    }

    let ft = ws.path("ft_ckpt.json");
    ok(&[
        "finetune",
        "--config",
        p(&ws.path("ft.json")),
        "--data",
        p(&ws.path("data/train")),
        "--annotations",
        p(&ws.path("data/train_boxes.csv")),
        "--init",
        p(&pre),
        "--out",
        p(&ft),
    ]);
    assert!(ft.exists());

    let report = ws.path("report");
    ok(&["eval", "--checkpoint", p(&ft), "--data", p(&ws.path("data/test")), "--report", p(&report), "--minority", "lesion"]);
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(report.join("report.json")).unwrap()).unwrap();
    assert_eq!(json["minority_class"], 1);
    assert_eq!(json["class_names"][1], "lesion");
    assert_eq!(json["num_samples"], 12);
    let csv = std::fs::read_to_string(report.join("per_class.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(image::open(report.join("recall_bar.png")).is_ok());

    let overlays = ws.path("viz");
    ok(&[
        "viz",
        "--checkpoint",
        p(&ft),
        "--images",
        p(&ws.path("data/test/lesion")),
        "--boxes",
        p(&ws.path("data/test_boxes.csv")),
        "--out",
        p(&overlays),
    ]);
    let written: Vec<_> = std::fs::read_dir(&overlays).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(written.len(), 4);
    for path in written {
        let img = image::open(&path).unwrap();
        assert_eq!((img.width(), img.height()), (16, 16));
    }
}

#[test]
fn sweep_writes_table_plot_and_log() {
    let ws = synth();
    let pre = pretrained(&ws);
    let out = ws.path("sweep");
    ok(&[
        "sweep",
        "--config",
        p(&ws.path("ft.json")),
        "--data",
        p(&ws.path("data/train")),
        "--annotations",
        p(&ws.path("data/train_boxes.csv")),
        "--test",
        p(&ws.path("data/test")),
        "--test-annotations",
        p(&ws.path("data/test_boxes.csv")),
        "--parameter",
        "alpha",
        "--values",
        "0,0.5",
        "--init",
        p(&pre),
        "--out",
        p(&out),
    ]);
    let table = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    let rows: Vec<&str> = table.lines().collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[1].starts_with("alpha,0,") && rows[2].starts_with("alpha,0.5,"));
    assert!(out.join("sweep.png").exists());
    assert!(std::fs::metadata(out.join("sweep.jsonl")).unwrap().len() > 0);
}

#[test]
fn gen_bbox_boxes_the_bright_blob() {
    let ws = synth();
    let maps = ws.path("maps");
    std::fs::create_dir(&maps).unwrap();
    let img = image::GrayImage::from_fn(20, 10, |x, y| image::Luma([if (4..=7).contains(&x) && (2..=5).contains(&y) { 255 } else { 0 }]));
    img.save(maps.join("a.png")).unwrap();
    image::GrayImage::new(20, 10).save(maps.join("b.png")).unwrap();
    let out = ws.path("boxes.csv");
    ok(&["gen-bbox", "--maps", p(&maps), "--out", p(&out), "--class-label", "2"]);
    let csv = std::fs::read_to_string(out).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[1], "a,2,4,2,7,5");
    assert_eq!(lines[2], "b,2,0,0,19,9");
}

#[test]
fn validation_errors_exit_with_two() {
    let ws = synth();
    let bad = ws.write("bad.json", r#"{"stage": "finetune", "loss": {"alpha": 1.5}}"#);
    let pre = pretrained(&ws);
    let out = care(&[
        "finetune",
        "--config",
        p(&bad),
        "--data",
        p(&ws.path("data/train")),
        "--annotations",
        p(&ws.path("data/train_boxes.csv")),
        "--init",
        p(&pre),
        "--out",
        p(&ws.path("x.json")),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));

    let stray = ws.write("stray.csv", "image_id,class_label,x_min,y_min,x_max,y_max\nnope,2,0,0,3,3\n");
    let out = care(&[
        "finetune",
        "--config",
        p(&ws.path("ft.json")),
        "--data",
        p(&ws.path("data/train")),
        "--annotations",
        p(&stray),
        "--init",
        p(&pre),
        "--out",
        p(&ws.path("y.json")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope"));

    let out = care(&["gen-bbox", "--maps", p(&ws.path("data")), "--out", p(&ws.path("z.csv")), "--threshold", "1.5"]);
    assert_eq!(out.status.code(), Some(2));
}
