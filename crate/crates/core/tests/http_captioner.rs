use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::mpsc;
use std::thread;

use groundcap_core::model::{BBox, Frame, SceneObject, Split};
use groundcap_core::refine::{
    refine, Captioner, CaptionerError, CaptionerRequest, HttpCaptioner, HttpCaptionerConfig, RefineParams, Stage,
};

struct Seen {
    auth: Option<String>,
    body: serde_json::Value,
}

/// Serves one canned `(status, body)` per connection and reports what it saw.
fn serve(replies: Vec<(u16, String)>) -> (String, mpsc::Receiver<Seen>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/caption", listener.local_addr().unwrap());
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for (status, body) in replies {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0;
            let mut auth = None;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                let lower = line.to_ascii_lowercase();
                if let Some(v) = lower.strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                if lower.starts_with("authorization:") {
                    auth = Some(line["authorization:".len()..].trim().to_owned());
                }
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            tx.send(Seen {
                auth,
                body: serde_json::from_slice(&buf).unwrap(),
            })
            .unwrap();
            let mut s = stream;
            write!(
                s,
                "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
    });
    (url, rx)
}

fn frame() -> Frame {
    Frame {
        frame_id: "f1".into(),
        width: 200,
        height: 100,
        image_ref: "f1.png".into(),
        objects: vec![SceneObject {
            object_id: "dog-0".into(),
            class_name: "dog".into(),
            bbox: BBox::new(20, 10, 50, 40).unwrap(),
            source_detection: 0,
            score: 0.95,
        }],
        split: Split::Eval,
    }
}

#[test]
fn posts_request_and_reads_caption() {
    let reply = serde_json::json!({"caption": "<gdo class=\"dog\" dog-0>A dog</gdo> sleeps."}).to_string();
    let (url, rx) = serve(vec![(200, reply)]);
    let cfg = HttpCaptionerConfig {
        endpoint: url,
        token: Some("s3cret".into()),
        timeout_secs: 5,
    };
    let cap = HttpCaptioner::new(cfg).unwrap();
    let r = refine(&frame(), "A dog sleeps.", &cap, &RefineParams::default()).unwrap();
    assert!(r.converged);
    let seen = rx.recv().unwrap();
    assert_eq!(seen.auth.as_deref(), Some("Bearer s3cret"));
    let req: CaptionerRequest = serde_json::from_value(seen.body.clone()).unwrap();
    assert_eq!(req.stage, Stage::Refine);
    assert_eq!(req.temperature, 0.5);
    assert_eq!(req.prior_caption.as_deref(), Some("A dog sleeps."));
    assert_eq!(seen.body["objects"][0]["box"], serde_json::json!([0.1, 0.1, 0.25, 0.4]));
    assert_eq!(seen.body["feedback"]["missing_ids"], serde_json::json!(["dog-0"]));
}

#[test]
fn status_and_body_errors() {
    let (url, _rx) = serve(vec![(503, "busy".into()), (200, "{\"text\": 1}".into())]);
    let cap = HttpCaptioner::new(HttpCaptionerConfig::new(url)).unwrap();
    let mut req: CaptionerRequest = serde_json::from_value(serde_json::json!({
        "frame_id": "f1", "frame_ref": "f1.png", "objects": [], "stage": "general", "temperature": 0.5
    }))
    .unwrap();
    assert_eq!(
        cap.caption(&req),
        Err(CaptionerError::Status {
            status: 503,
            body: "busy".into()
        })
    );
    req.stage = Stage::General;
    assert!(matches!(cap.caption(&req), Err(CaptionerError::BadResponse(_))));
}

#[test]
fn unreachable_endpoint_is_a_transport_error() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let cfg = HttpCaptionerConfig {
        endpoint: format!("http://127.0.0.1:{port}/x"),
        token: None,
        timeout_secs: 2,
    };
    let cap = HttpCaptioner::new(cfg).unwrap();
    let err = refine(
        &frame(),
        "x",
        &cap,
        &RefineParams {
            max_attempts: 2,
            ..Default::default()
        },
    )
    .unwrap_err();
    assert!(err.to_string().contains("all 2 captioner attempts failed"));
}
