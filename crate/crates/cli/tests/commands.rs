use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use memscore::scoring::{read_scores_csv, spearman};
use memscore::simulator::StudyBundle;

fn memscore(args: &[&str], stdin: Option<&[u8]>) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_memscore"))
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut input = child.stdin.take().unwrap();
    input.write_all(stdin.unwrap_or_default()).unwrap();
    drop(input);
    child.wait_with_output().unwrap()
}

fn ok(out: Output) -> Vec<u8> {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    out.stdout
}

#[test]
fn simulate_piped_into_score_recovers_planted_ranking() {
    let bundle = ok(memscore(&["--seed", "11", "simulate", "--n-videos", "40", "--per-video", "40"], None));
    let csv = ok(memscore(&["score"], Some(&bundle)));
    let parsed: StudyBundle = serde_json::from_slice(&bundle).unwrap();
    let scores = read_scores_csv(csv.as_slice()).unwrap();
    let (planted, got): (Vec<f64>, Vec<f64>) =
        scores.iter().filter(|s| s.is_defined()).map(|s| (parsed.planted[&s.video_id], s.score)).unzip();
    assert_eq!(planted.len(), 40);
    let rho = spearman(&planted, &got).unwrap();
    assert!(rho >= 0.9, "rho {rho}");
}

fn write_problem(dir: &Path) -> std::path::PathBuf {
    let mem = [0.3, 0.9, 0.1, 0.75, 0.5, 0.2, 0.95, 0.6, 0.05, 0.4];
    let mut vectors = BTreeMap::new();
    let segments: Vec<_> = (0..mem.len())
        .map(|i| {
            vectors.insert(format!("v:{i}"), vec![i as f64, (i % 3) as f64]);
            serde_json::json!({"video_id": "v", "index": i, "start_s": 5.0 * i as f64,
                "end_s": 5.0 * (i + 1) as f64, "timestamp_mid_s": 5.0 * i as f64 + 2.5})
        })
        .collect();
    std::fs::write(dir.join("feats.json"), serde_json::json!({"name": "seg", "dim": 2, "vectors": vectors}).to_string())
        .unwrap();
    let p = dir.join("problem.json");
    let problem = serde_json::json!({"segments": segments, "mem_scores": mem, "features_ref": "feats.json", "budget": {"count": 5}});
    std::fs::write(&p, problem.to_string()).unwrap();
    p
}

#[test]
fn pure_memorability_summary_is_the_top_scores() {
    let dir = tempfile::tempdir().unwrap();
    let p = write_problem(dir.path());
    let out = ok(memscore(&["summarize", p.to_str().unwrap(), "--weights", "1,0,0", "--budget-count", "3"], None));
    let v: serde_json::Value = serde_json::from_slice(&out).unwrap();
    let mut got: Vec<usize> = serde_json::from_value(v["indices"].clone()).unwrap();
    got.sort_unstable();
    assert_eq!(got, vec![1, 3, 6]);
}

#[test]
fn evaluate_scores_a_summary_against_references() {
    let dir = tempfile::tempdir().unwrap();
    let p = write_problem(dir.path());
    let sel = dir.path().join("sel.json");
    ok(memscore(&["summarize", p.to_str().unwrap(), "--weights", "1,0,0", "--budget-count", "3", "-o", sel.to_str().unwrap()], None));
    let refs = dir.path().join("refs.json");
    std::fs::write(&refs, r#"[{"id":"a","selected":{"segments":[1,3,6]}}]"#).unwrap();
    let report = dir.path().join("report.csv");
    let out = memscore(
        &["evaluate", "--selection", sel.to_str().unwrap(), "--references", refs.to_str().unwrap(),
          "--problem", p.to_str().unwrap(), "-o", report.to_str().unwrap()],
        None,
    );
    ok(out);
    let text = std::fs::read_to_string(&report).unwrap();
    let row = text.lines().nth(1).unwrap();
    assert!(row == "memscore,,1.0,1.0", "{text}");
}

#[test]
fn identical_runs_write_identical_outputs_and_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    for out in [&a, &b] {
        ok(memscore(&["--seed", "5", "simulate", "--n-videos", "20", "--per-video", "5", "-o", out.to_str().unwrap()], None));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("a.json.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "simulate");
    assert_eq!(manifest["seed"], 5);
    assert_eq!(manifest["outputs"][0], a.to_str().unwrap());
    assert!(manifest["tool_version"].is_string());
}

#[test]
fn segment_writes_uniform_segments() {
    let out = ok(memscore(&["segment", "--video-id", "v", "--duration", "12"], None));
    let segs: Vec<memscore::Segment> = serde_json::from_slice(&out).unwrap();
    assert_eq!(segs.len(), 3);
    assert_eq!(segs[2].end_s, 12.0);
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = memscore(&["score", "--no-such-flag"], None);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_input_is_a_usage_error() {
    let out = memscore(&["score"], Some(b"{not json"));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_file_is_an_io_error() {
    let out = memscore(&["score", "/nonexistent/bundle.json"], None);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/bundle.json"));
}
