use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::Path;
use std::process::{Command, Output};

use groundcap_core::metrics::report::RatingRecord;
use groundcap_core::store::labelmap::{encode_pgm, LabelMap};
use groundcap_core::store::Store;
use groundcap_core::DetectionKind;

fn groundcap(store: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_groundcap"))
        .arg("--store")
        .arg(store)
        .args(args)
        .env_remove("GROUNDCAP_CAPTIONER_URL")
        .env_remove("GROUNDCAP_CAPTIONER_TOKEN")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// 40x40 map: segment 1 is wall in two separate 10x10 blobs, segment 2 a
/// person.
fn write_two_blob(dir: &Path, stem: &str) -> std::path::PathBuf {
    let mut data = vec![0u32; 40 * 40];
    for y in 0..40u32 {
        for x in 0..40u32 {
            let blob = (x < 10 && y < 10) || ((28..38).contains(&x) && (28..38).contains(&y));
            let person = (15..20).contains(&x) && (5..25).contains(&y);
            data[(y * 40 + x) as usize] = if blob {
                1
            } else if person {
                2
            } else {
                0
            };
        }
    }
    let map = LabelMap {
        width: 40,
        height: 40,
        data,
    };
    let path = dir.join(format!("{stem}.pgm"));
    std::fs::write(&path, encode_pgm(&map)).unwrap();
    std::fs::write(
        dir.join(format!("{stem}.legend.json")),
        r#"{"width": 40, "height": 40, "segments": {
            "1": {"class": "wall", "kind": "stuff", "score": 0.95},
            "2": {"class": "person", "kind": "thing", "score": 0.9}}}"#,
    )
    .unwrap();
    path
}

#[test]
fn ingest_then_decompose_two_blobs() {
    let dir = tempfile::tempdir().unwrap();
    let store_dir = dir.path().join("store");
    let map = write_two_blob(dir.path(), "f1");
    let out = groundcap(&store_dir, &["ingest", "--no-decompose", map.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("written"));
    let store = Store::open(&store_dir).unwrap();
    let wall = |s: &Store| {
        let r = s.load_frame("f1").unwrap().value;
        r.detections
            .into_iter()
            .find(|d| d.kind == DetectionKind::Stuff)
            .unwrap()
            .boxes
            .len()
    };
    assert_eq!(wall(&store), 1);
    // Outside the store, so recorded as an absolute path.
    let image = store.load_frame("f1").unwrap().value.frame.image_ref;
    assert!(Path::new(&image).is_absolute() && image.ends_with("f1.png"), "{image}");

    let out = groundcap(&store_dir, &["decompose"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(wall(&store), 2);
    let ids: Vec<String> = store
        .load_frame("f1")
        .unwrap()
        .value
        .frame
        .objects
        .into_iter()
        .map(|o| o.object_id)
        .collect();
    assert_eq!(ids, ["wall-0", "person-0", "wall-1"]);

    // Unchanged inputs leave records untouched.
    let rev = store.frame_revision("f1").unwrap();
    for args in [&["decompose"][..], &["order"], &["ingest", map.to_str().unwrap()]] {
        let out = groundcap(&store_dir, args);
        assert!(out.status.success(), "{}", stderr(&out));
        assert!(
            stdout(&out).contains("0 written, 1 unchanged"),
            "{args:?}: {}",
            stdout(&out)
        );
    }
    assert_eq!(store.frame_revision("f1").unwrap(), rev);
}

#[test]
fn ingest_reports_missing_inputs_before_work() {
    let dir = tempfile::tempdir().unwrap();
    let out = groundcap(dir.path(), &["ingest", "nope.pgm"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("nope.pgm"));
    let out = groundcap(&dir.path().join("absent"), &["score"]);
    assert_eq!(out.status.code(), Some(2));
}

const CORPUS: &str = r#"{"id": "a1", "image": "a1.png", "width": 100, "height": 100, "split": "test", "detections": [{"id": "person-0", "label": "person", "score": 0.98, "box": [10, 10, 20, 60]}, {"id": "car-0", "label": "car", "score": 0.9, "box": [50, 60, 40, 30]}], "captions": [{"source": "auto", "text": "<gdo class=\"person\" person-0>A man</gdo> stands near a road."}, {"source": "human", "text": "<gdo class=\"person\" person-0>A man</gdo> stands beside <gdo class=\"car\" car-0>a red car</gdo>."}]}
{"id": "a2", "image": "a2.png", "width": 100, "height": 100, "split": "train", "detections": [{"id": "dog-0", "label": "dog", "score": 0.9, "box": [0, 0, 10, 10]}], "captions": [{"source": "auto", "text": "<gdo class=\"dog\" dog-0>A dog</gdo>."}]}
"#;

fn imported(dir: &Path) -> std::path::PathBuf {
    let store = dir.join("store");
    let file = dir.join("corpus.jsonl");
    std::fs::write(&file, CORPUS).unwrap();
    let out = groundcap(&store, &["import", file.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    store
}

#[test]
fn score_prints_table_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let store = imported(dir.path());
    let json = dir.path().join("score.json");
    let out = groundcap(&store, &["score", "--split", "eval", "--json", json.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    let header: Vec<&str> = text.lines().next().unwrap().split_whitespace().collect();
    assert_eq!(
        header,
        ["frame", "P", "R", "F1", "METEOR", "BLEU-4", "ROUGE-L", "gMETEOR"]
    );
    assert!(text.contains("a1"));
    assert!(!text.contains("a2"));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(v["report"]["summary"]["captions"], 1);
    assert_eq!(v["report"]["items"][0]["report"]["grounding"]["recall"], 0.5);

    // Parallel and sequential runs agree byte for byte.
    let seq = groundcap(&store, &["--sequential", "score", "--split", "eval"]);
    assert_eq!(seq.stdout, out.stdout);
}

#[test]
fn validate_reports_problems_on_stderr() {
    let dir = tempfile::tempdir().unwrap();
    let store = imported(dir.path());
    let bad = dir.path().join("bad.txt");
    std::fs::write(&bad, "<gdo class=\"person\" person-0>A man").unwrap();
    let out = groundcap(&store, &["validate", "--frame", "a1", "--file", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("syntax error"), "{}", stderr(&out));

    let out = groundcap(&store, &["validate", "--frame", "a1", "--caption", "auto"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("R 0.5000"));
}

#[test]
fn splits_are_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let store = imported(dir.path());
    let a = dir.path().join("a.json");
    let out = groundcap(
        &store,
        &[
            "--seed",
            "5",
            "splits",
            "--eval-fraction",
            "0.5",
            "--json",
            a.to_str().unwrap(),
        ],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("1 train, 1 eval"));
    let first = std::fs::read_to_string(&a).unwrap();
    groundcap(
        &store,
        &[
            "--seed",
            "5",
            "splits",
            "--eval-fraction",
            "0.5",
            "--json",
            a.to_str().unwrap(),
        ],
    );
    assert_eq!(std::fs::read_to_string(&a).unwrap(), first);
    let out = groundcap(&store, &["splits", "--eval-fraction", "1.5"]);
    assert_eq!(out.status.code(), Some(2));
}

/// Answers every request with the same caption.
fn captioner(reply: &'static str) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/caption", listener.local_addr().unwrap());
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let stream = stream.unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end().to_ascii_lowercase();
                if line.is_empty() {
                    break;
                }
                if let Some(v) = line.strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            let body = serde_json::json!({ "caption": reply }).to_string();
            let mut s = stream;
            write!(
                s,
                "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
    });
    url
}

#[test]
fn refine_through_http_captioner() {
    let dir = tempfile::tempdir().unwrap();
    let store = imported(dir.path());
    let url = captioner("<gdo class=\"person\" person-0>A man</gdo> next to <gdo class=\"car\" car-0>a car</gdo>.");
    let log = dir.path().join("log.json");
    let out = groundcap(
        &store,
        &["refine", "a1", "--endpoint", &url, "--json", log.to_str().unwrap()],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("F1 1.000 at attempt 1"), "{}", stdout(&out));
    let s = Store::open(&store).unwrap();
    assert_eq!(s.load_caption("a1", "auto").unwrap().revision, 2);
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&log).unwrap()).unwrap();
    assert_eq!(v["a1"]["converged"], true);

    // a2's only detection is a dog, so this reply never converges there.
    let out = groundcap(&store, &["refine", "a2", "--endpoint", &url, "--max-attempts", "3"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("below threshold"));

    let out = groundcap(&store, &["refine", "a1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("endpoint"));
}

#[test]
fn agreement_and_correlation_reports() {
    let dir = tempfile::tempdir().unwrap();
    let store_dir = imported(dir.path());
    let store = Store::open(&store_dir).unwrap();
    for (i, rater) in ["r1", "r2", "r3"].iter().enumerate() {
        for (fid, c) in [("a1", 4), ("a2", 2)] {
            store
                .append_rating(&RatingRecord {
                    task_id: format!("t-{fid}-{i}"),
                    frame_id: fid.into(),
                    caption_id: "auto".into(),
                    caption_revision: 1,
                    rater_id: rater.to_string(),
                    criteria: [c; 5],
                    created_at: groundcap_core::store::now(),
                })
                .unwrap();
        }
    }
    let json = dir.path().join("agreement.json");
    let out = groundcap(
        &store_dir,
        &[
            "report",
            "agreement",
            "--source",
            "auto,human,model",
            "--json",
            json.to_str().unwrap(),
        ],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert_eq!(text.lines().count(), 5);
    assert!(text.lines().nth(2).unwrap().starts_with("auto"));
    assert!(text.contains("1.000 (3.00)"));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(v["rows"].as_array().unwrap().len(), 3);

    let out = groundcap(&store_dir, &["report", "correlation", "--criterion", "overall"]);
    assert!(out.status.success(), "{}", stderr(&out));
    // Only a1 has a human reference, so there is one item and no correlation.
    assert!(stdout(&out).contains("over 1 captions"));
}

#[test]
fn config_file_values_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let map = write_two_blob(dir.path(), "f1");
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "store = \"from-config\"\n[ordering]\nmin_score = 0.92\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_groundcap"))
        .args(["--config", cfg.to_str().unwrap(), "ingest", map.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let store = Store::open(dir.path().join("from-config")).unwrap();
    // The person (0.9) falls below the configured threshold.
    let objects = store.load_frame("f1").unwrap().value.frame.objects;
    assert!(objects.iter().all(|o| o.class_name == "wall"));

    std::fs::write(&cfg, "stroe = 1\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_groundcap"))
        .args(["--config", cfg.to_str().unwrap(), "score"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = groundcap(dir.path(), &["serve", "--raters", "missing.toml"]);
    assert_eq!(out.status.code(), Some(2));
}
