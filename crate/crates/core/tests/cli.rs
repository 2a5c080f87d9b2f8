use ppat::eval::{read_corpus, MetricsRecord};
use ppat::model::{Assessment, ModelConfig};
use ppat::sketch::RasterImage;
use std::path::Path;
use std::process::{Command, Output};

fn ppat(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ppat"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], dir: &Path) -> String {
    let out = ppat(args, dir);
    assert!(
        out.status.success(),
        "ppat {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn metrics(stdout: &str) -> Vec<MetricsRecord> {
    stdout.lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

const SKETCH: &str = r#"{"sketch_id":"tree","canvas_size":512,"strokes":[
{"points":[[100,400],[100,200]],"color":[120,70,20],"width":12,"t_start":0,"t_end":300},
{"points":[[60,200],[140,120],[220,200]],"color":[20,150,40],"width":10,"t_start":400,"t_end":900},
{"points":[[300,420],[300,300]],"color":[0,0,0],"width":4,"t_start":1000,"t_end":1200}]}"#;

#[test]
fn synth_is_byte_identical_and_validates_fraction() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["synth", "--n", "60", "--pos-frac", "0.25", "--seed", "3", "--out", "a.ndjson"], dir.path());
    ok(&["synth", "--n", "60", "--pos-frac", "0.25", "--seed", "3", "--out", "b.ndjson"], dir.path());
    let a = std::fs::read(dir.path().join("a.ndjson")).unwrap();
    assert_eq!(a, std::fs::read(dir.path().join("b.ndjson")).unwrap());
    let recs = read_corpus(std::str::from_utf8(&a).unwrap()).unwrap();
    assert_eq!(recs.iter().filter(|r| r.label == 1).count(), 15);

    let bad = ppat(&["synth", "--n", "60", "--pos-frac", "1.5", "--out", "c.ndjson"], dir.path());
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("fraction"));
}

#[test]
fn decompose_and_render() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("s.json"), SKETCH).unwrap();
    let counts = ok(&["decompose", "s.json", "--out", "sub"], dir.path());
    assert_eq!(counts.trim(), "[1,2,3,3,3,3,3,3,3,3,3,3]");
    let files = std::fs::read_dir(dir.path().join("sub")).unwrap().count();
    assert_eq!(files, 12);
    let first = std::fs::read_to_string(dir.path().join("sub/tree_01.json")).unwrap();
    assert_eq!(ppat::sketch::parse_sketch_json(first.as_bytes()).unwrap().stroke_count(), 1);

    ok(&["render", "s.json", "--size", "32", "--out", "s.raw"], dir.path());
    let raw = std::fs::read(dir.path().join("s.raw")).unwrap();
    let img = RasterImage::from_raw_bytes(&raw).unwrap();
    assert_eq!((img.width(), img.height()), (32, 32));
    ok(&["render", "s.json", "--out", "s.png", "--format", "png"], dir.path());
    assert_eq!(&std::fs::read(dir.path().join("s.png")).unwrap()[..4], b"\x89PNG");

    let bad = ppat(&["render", "s.json", "--size", "8", "--out", "x.raw"], dir.path());
    assert!(!bad.status.success());
}

#[test]
fn caption_train_assess_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "--n", "20", "--pos-frac", "0.5", "--seed", "1", "--out", "c.ndjson"], d);
    ok(&["caption", "c.ndjson", "--cache", "caps.ndjson"], d);
    let cache = std::fs::read_to_string(d.join("caps.ndjson")).unwrap();
    assert_eq!(cache.lines().count(), 20);
    ok(&["caption", "c.ndjson", "--cache", "caps.ndjson"], d);
    assert_eq!(std::fs::read_to_string(d.join("caps.ndjson")).unwrap(), cache);

    let cfg = ModelConfig {
        epochs: 2,
        ..ModelConfig::tiny()
    };
    std::fs::write(d.join("cfg.json"), serde_json::to_string(&cfg).unwrap()).unwrap();
    ok(
        &["train", "--corpus", "c.ndjson", "--captions", "caps.ndjson", "--config", "cfg.json", "--out", "m.ckpt"],
        d,
    );
    let first = read_corpus(&std::fs::read_to_string(d.join("c.ndjson")).unwrap()).unwrap()[0].clone();
    std::fs::write(d.join("one.json"), first.sketch.to_json()).unwrap();
    let a = ok(&["assess", "--ckpt", "m.ckpt", "--sketch", "one.json"], d);
    let b = ok(&["assess", "--ckpt", "m.ckpt", "--sketch", "one.json"], d);
    assert_eq!(a, b);
    let assessment: Assessment = serde_json::from_str(&a).unwrap();
    assert_eq!(assessment.sketch_id, first.record_id);
    assert!(assessment.caption_used.is_some());

    let missing = ppat(&["train", "--corpus", "c.ndjson", "--captions", "empty.ndjson", "--config", "cfg.json", "--out", "x.ckpt"], d);
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).contains("ppat caption"));

    let remote = ppat(&["caption", "c.ndjson", "--provider", "remote"], d);
    assert!(!remote.status.success());
}

#[test]
fn eval_ablate_and_external_scores_share_folds() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "--n", "30", "--pos-frac", "0.3", "--seed", "2", "--out", "c.ndjson"], d);
    let cfg = ModelConfig {
        epochs: 1,
        ..ModelConfig::tiny()
    };
    std::fs::write(d.join("cfg.json"), serde_json::to_string(&cfg).unwrap()).unwrap();

    let out = ok(&["eval", "--corpus", "c.ndjson", "--config", "cfg.json", "--baselines"], d);
    let rows = metrics(&out);
    let names: Vec<&str> = rows.iter().map(|r| r.variant.as_str()).collect();
    assert_eq!(names, ["vs_llm", "logreg", "mlp"]);
    assert!(rows.iter().all(|r| r.folds.len() == 5));

    let rows = metrics(&ok(&["ablate", "--corpus", "c.ndjson", "--config", "cfg.json", "--folds", "3"], d));
    let names: Vec<&str> = rows.iter().map(|r| r.variant.as_str()).collect();
    assert_eq!(names, ["no_caption", "no_temporal", "ce", "full"]);
    assert!(rows.iter().all(|r| r.folds.len() == 3));

    let recs = read_corpus(&std::fs::read_to_string(d.join("c.ndjson")).unwrap()).unwrap();
    let preds: String = recs
        .iter()
        .map(|r| format!("{{\"record_id\":\"{}\",\"predicted\":0}}\n", r.record_id))
        .collect();
    std::fs::write(d.join("rf.ndjson"), preds).unwrap();
    let rows = metrics(&ok(&["score-preds", "--corpus", "c.ndjson", "--preds", "rf.ndjson", "--variant", "rf"], d));
    assert_eq!(rows[0].variant, "rf");
    let majority = recs.iter().filter(|r| r.label == 0).count() as f64 / recs.len() as f64;
    assert!((rows[0].mean_acc - majority).abs() < 0.05);
    assert!(rows[0].folds.iter().all(|f| f.recall_pos == Some(0.0)));

    ok(&["synth", "--n", "690", "--pos-frac", "0.1696", "--seed", "2", "--out", "big.ndjson"], d);
    let held = metrics(&ok(&["eval", "--corpus", "big.ndjson", "--baselines-only", "--split", "holdout"], d));
    assert_eq!(held.len(), 2);
    assert!(held.iter().all(|r| r.folds.len() == 1 && r.folds[0].fold == 1));
}
