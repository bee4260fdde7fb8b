//! End-to-end tests of the command-line interface: exit codes, output
//! files, and the synth -> run -> eval round trip.

mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use common::ARENA_SCENE;

fn raycull(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_raycull"))
        .args(args)
        .output()
        .expect("spawn raycull")
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

const TINY_SCENE: &str = "\
seed 2
frames 10
sensor 180 90 -0.4 0.2 40.0
origin 0 0 1.2
ground 0
box 9.8 -10.4 0 10.2 10.4 3
box -10.2 -10.4 0 -9.8 10.4 3
box -10.4 -10.2 0 10.4 -9.8 3
box -10.4 9.8 0 10.4 10.2 3
mover -4.3 4.7 1.0 -3.7 5.3 1.6 0.5 0 0
";

struct Sequence {
    dir: tempfile::TempDir,
}

impl Sequence {
    fn scans(&self) -> String {
        self.dir
            .path()
            .join("seq/scans")
            .to_string_lossy()
            .into_owned()
    }
    fn labels(&self) -> String {
        self.dir
            .path()
            .join("seq/labels")
            .to_string_lossy()
            .into_owned()
    }
    fn poses(&self) -> String {
        self.dir
            .path()
            .join("seq/poses.txt")
            .to_string_lossy()
            .into_owned()
    }
    fn path(&self, name: &str) -> String {
        self.dir.path().join(name).to_string_lossy().into_owned()
    }
}

fn synth_sequence(scene: &str) -> Sequence {
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("scene.txt");
    fs::write(&script, scene).unwrap();
    let out = raycull(&[
        "synth",
        "--script",
        script.to_str().unwrap(),
        "--out",
        dir.path().join("seq").to_str().unwrap(),
    ]);
    assert!(out.status.success(), "synth failed: {}", stderr_of(&out));
    Sequence { dir }
}

#[test]
fn synth_run_eval_round_trip() {
    let seq = synth_sequence(TINY_SCENE);
    let config = seq.path("cfg.txt");
    fs::write(&config, "voxel_size = 0.2\n").unwrap();

    let out_dir = seq.path("out");
    let out = raycull(&[
        "run",
        "--scans",
        &seq.scans(),
        "--poses",
        &seq.poses(),
        "--config",
        &config,
        "--out",
        &out_dir,
        "--threads",
        "2",
    ]);
    assert!(out.status.success(), "run failed: {}", stderr_of(&out));

    // All four advertised outputs exist, one prediction per frame.
    let preds: Vec<_> = fs::read_dir(&out_dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".pred"))
        .collect();
    assert_eq!(preds.len(), 10);
    for name in ["static_map.ply", "timing.csv", "run_meta.txt"] {
        assert!(Path::new(&out_dir).join(name).exists(), "missing {name}");
    }
    let meta = fs::read_to_string(Path::new(&out_dir).join("run_meta.txt")).unwrap();
    assert!(meta.contains("tau0 = 0.3"));
    assert!(meta.contains("threads = 2"));

    // Evaluate the run's own predictions.
    let report_path = seq.path("report.json");
    let out = raycull(&[
        "eval",
        "--pred",
        &out_dir,
        "--scans",
        &seq.scans(),
        "--labels",
        &seq.labels(),
        "--poses",
        &seq.poses(),
        "--voxel",
        "0.2",
        "--out",
        &report_path,
    ]);
    assert!(out.status.success(), "eval failed: {}", stderr_of(&out));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&report_path).unwrap()).unwrap();
    assert!(report["pr"].as_f64().unwrap() > 0.9);
    assert!(report["total_dynamic"].as_u64().unwrap() > 0);
}

#[test]
fn eval_of_perfect_and_all_static_predictions() {
    let seq = synth_sequence(TINY_SCENE);

    // Build prediction files straight from the ground-truth labels.
    let perfect = seq.path("perfect");
    let lazy = seq.path("lazy");
    fs::create_dir_all(&perfect).unwrap();
    fs::create_dir_all(&lazy).unwrap();
    for entry in fs::read_dir(seq.labels()).unwrap() {
        let path = entry.unwrap().path();
        let classes = raycull::dataset::read_labels(&path).unwrap();
        let bytes: Vec<u8> = (0..classes.len())
            .map(|i| if classes.is_moving(i) { 1 } else { 0 })
            .collect();
        let stem = path.file_stem().unwrap().to_string_lossy().into_owned();
        fs::write(Path::new(&perfect).join(format!("{stem}.pred")), &bytes).unwrap();
        fs::write(
            Path::new(&lazy).join(format!("{stem}.pred")),
            vec![0u8; bytes.len()],
        )
        .unwrap();
    }

    let report_path = seq.path("perfect.json");
    let out = raycull(&[
        "eval",
        "--pred",
        &perfect,
        "--scans",
        &seq.scans(),
        "--labels",
        &seq.labels(),
        "--poses",
        &seq.poses(),
        "--out",
        &report_path,
    ]);
    assert!(out.status.success(), "eval failed: {}", stderr_of(&out));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(report["pr"].as_f64().unwrap(), 1.0);
    assert_eq!(report["rr"].as_f64().unwrap(), 1.0);
    assert_eq!(report["f1"].as_f64().unwrap(), 1.0);

    let report_path = seq.path("lazy.json");
    let out = raycull(&[
        "eval",
        "--pred",
        &lazy,
        "--scans",
        &seq.scans(),
        "--labels",
        &seq.labels(),
        "--poses",
        &seq.poses(),
        "--out",
        &report_path,
    ]);
    assert!(out.status.success());
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(report["rr"].as_f64().unwrap(), 0.0);
}

#[test]
fn exit_codes_for_usage_errors() {
    // Missing pose file: exit 2 and the diagnostic names the path.
    let seq = synth_sequence(TINY_SCENE);
    let config = seq.path("cfg.txt");
    fs::write(&config, "").unwrap();
    let out = raycull(&[
        "run",
        "--scans",
        &seq.scans(),
        "--poses",
        &seq.path("nonexistent_poses.txt"),
        "--config",
        &config,
        "--out",
        &seq.path("out"),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_of(&out).contains("nonexistent_poses.txt"));

    // Empty range: exit 2.
    let out = raycull(&[
        "run",
        "--scans",
        &seq.scans(),
        "--poses",
        &seq.poses(),
        "--config",
        &config,
        "--out",
        &seq.path("out2"),
        "--range",
        "5:3",
    ]);
    assert_eq!(out.status.code(), Some(2));

    // Unknown flag: usage error from the argument parser.
    let out = raycull(&["run", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));

    // Bad config key: exit 2 and the line number is reported.
    fs::write(&config, "typo_key = 1\n").unwrap();
    let out = raycull(&[
        "run",
        "--scans",
        &seq.scans(),
        "--poses",
        &seq.poses(),
        "--config",
        &config,
        "--out",
        &seq.path("out3"),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_of(&out).contains("typo_key"));

    // Missing predictions: eval reports which frames are absent.
    let out = raycull(&[
        "eval",
        "--pred",
        &seq.path("empty_preds"),
        "--scans",
        &seq.scans(),
        "--labels",
        &seq.labels(),
        "--poses",
        &seq.poses(),
        "--out",
        &seq.path("r.json"),
    ]);
    assert_eq!(out.status.code(), Some(2));

    // Bad scene script: exit 2 with a line number.
    let bad_script = seq.path("bad.txt");
    fs::write(&bad_script, "frames 1\nsensor 10 10 -0.1 0.1 20\nwat 3\n").unwrap();
    let out = raycull(&["synth", "--script", &bad_script, "--out", &seq.path("s")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_of(&out).contains("line 3"));
}

#[test]
fn eval_hand_built_confusion_fixture() {
    // One frame whose points sit at distinct voxel centers: ten static
    // voxels and four dynamic ones. The predictions drop one static voxel
    // and keep one dynamic voxel, so PR = 0.9 and RR = 0.75 by hand count.
    use raycull::dataset::{labels_to_bytes, scan_to_bytes};
    use raycull::geom::Point3;

    let dir = tempfile::tempdir().unwrap();
    let scans = dir.path().join("scans");
    let labels = dir.path().join("labels");
    let preds = dir.path().join("preds");
    for d in [&scans, &labels, &preds] {
        fs::create_dir_all(d).unwrap();
    }

    let v = 0.2;
    let center =
        |ix: i32, iy: i32| Point3::new((ix as f64 + 0.5) * v, (iy as f64 + 0.5) * v, 0.5 * v);
    let mut points = Vec::new();
    let mut classes = Vec::new();
    let mut pred_bytes = Vec::new();
    for k in 0..10 {
        points.push(center(k + 10, 0));
        classes.push(9u16);
        pred_bytes.push(if k == 9 { 1 } else { 0 });
    }
    for k in 0..4 {
        points.push(center(k + 10, 5));
        classes.push(252u16);
        pred_bytes.push(if k == 0 { 0 } else { 1 });
    }
    fs::write(scans.join("000000.bin"), scan_to_bytes(&points)).unwrap();
    fs::write(labels.join("000000.label"), labels_to_bytes(&classes)).unwrap();
    fs::write(preds.join("000000.pred"), &pred_bytes).unwrap();
    fs::write(dir.path().join("poses.txt"), "1 0 0 0 0 1 0 0 0 0 1 0\n").unwrap();

    let report_path = dir.path().join("report.json");
    let out = raycull(&[
        "eval",
        "--pred",
        preds.to_str().unwrap(),
        "--scans",
        scans.to_str().unwrap(),
        "--labels",
        labels.to_str().unwrap(),
        "--poses",
        dir.path().join("poses.txt").to_str().unwrap(),
        "--voxel",
        "0.2",
        "--out",
        report_path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "eval failed: {}", stderr_of(&out));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&report_path).unwrap()).unwrap();
    assert!((report["pr"].as_f64().unwrap() - 0.900).abs() < 1e-4);
    assert!((report["rr"].as_f64().unwrap() - 0.750).abs() < 1e-4);
    assert!((report["f1"].as_f64().unwrap() - 0.8182).abs() < 1e-4);
}

#[test]
fn inspect_dumps_map_and_grid() {
    let seq = synth_sequence(TINY_SCENE);
    let map_dump = seq.path("map.txt");
    let grid_dump = seq.path("grid.csv");
    let out = raycull(&[
        "inspect",
        "--scans",
        &seq.scans(),
        "--poses",
        &seq.poses(),
        "--map-dump",
        &map_dump,
        "--grid-dump",
        &grid_dump,
        "--frame",
        "0",
    ]);
    assert!(out.status.success(), "inspect failed: {}", stderr_of(&out));
    let map_text = fs::read_to_string(&map_dump).unwrap();
    let first = map_text.lines().next().unwrap();
    assert_eq!(first.split_whitespace().count(), 3);
    let grid_text = fs::read_to_string(&grid_dump).unwrap();
    assert!(grid_text.starts_with("i,j,r_cast"));
    assert!(grid_text.lines().count() > 1);

    // Inspect with no action selected is a usage error.
    let out = raycull(&["inspect", "--scans", &seq.scans(), "--poses", &seq.poses()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn rerun_outputs_are_byte_identical() {
    let seq = synth_sequence(TINY_SCENE);
    let config = seq.path("cfg.txt");
    fs::write(&config, "").unwrap();
    let mut snapshots = Vec::new();
    for i in 0..2 {
        let out_dir = seq.path(&format!("out{i}"));
        let out = raycull(&[
            "run",
            "--scans",
            &seq.scans(),
            "--poses",
            &seq.poses(),
            "--config",
            &config,
            "--out",
            &out_dir,
        ]);
        assert!(out.status.success());
        let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(&out_dir)
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| {
                let name = p.file_name().unwrap().to_string_lossy().into_owned();
                // Everything except wall-clock timings must reproduce.
                name != "timing.csv"
            })
            .map(|p| {
                (
                    p.file_name().unwrap().to_string_lossy().into_owned(),
                    fs::read(&p).unwrap(),
                )
            })
            .collect();
        files.sort();
        snapshots.push(files);
    }
    assert_eq!(snapshots[0], snapshots[1]);
}

#[test]
fn arena_scene_is_consumable_by_run() {
    // The bundled arena script stays in sync with what `run` accepts.
    let seq = synth_sequence(ARENA_SCENE);
    assert!(Path::new(&seq.scans()).join("000049.bin").exists());
    assert!(Path::new(&seq.labels()).join("000049.label").exists());

    let config = seq.path("cfg.txt");
    fs::write(&config, "").unwrap();
    let out_dir = seq.path("out");
    let out = raycull(&[
        "run",
        "--scans",
        &seq.scans(),
        "--poses",
        &seq.poses(),
        "--config",
        &config,
        "--out",
        &out_dir,
        "--range",
        "0:2",
    ]);
    assert!(out.status.success(), "run failed: {}", stderr_of(&out));
    assert!(Path::new(&out_dir).join("000002.pred").exists());
    assert!(!Path::new(&out_dir).join("000003.pred").exists());
}
