//! Randomized concurrent rater sessions against one store. Each rater runs on
//! its own thread with its own `Workflow`, as separate service processes
//! would, and occasionally "crashes" by dropping and reopening it.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use groundcap_core::model::{BBox, Detection, DetectionKind, Frame, SceneObject, Split};
use groundcap_core::store::{CaptionSource, FrameRecord, Store};
use groundcap_service::{RaterConfig, ServiceConfig, TaskKind, Workflow, WorkflowError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TEXTS: [&str; 3] = [
    "<gdo class=\"dog\" dog-0>A dog</gdo> sleeps.",
    "<gdo class=\"dog\" dog-0>A dog</gdo> sleeps near <gdo class=\"dog\" dog-1>another</gdo>.",
    "Two <gdo class=\"dog\" dog-0 dog-1>dogs</gdo> rest.",
];

#[derive(Debug, Clone, Copy)]
pub struct SessionParams {
    pub seed: u64,
    pub frames: usize,
    pub raters: usize,
    pub steps: usize,
}

#[derive(Debug, Default)]
pub struct SessionOutcome {
    pub refinements: usize,
    pub ratings: usize,
    pub stale_attempts: usize,
    pub restarts: usize,
}

fn record(fid: &str) -> FrameRecord {
    let boxes = [BBox::new(0, 0, 4, 4).unwrap(), BBox::new(5, 0, 4, 4).unwrap()];
    FrameRecord {
        frame: Frame {
            frame_id: fid.into(),
            width: 10,
            height: 10,
            image_ref: format!("{fid}.png"),
            objects: boxes
                .iter()
                .enumerate()
                .map(|(i, b)| SceneObject {
                    object_id: format!("dog-{i}"),
                    class_name: "dog".into(),
                    bbox: *b,
                    source_detection: i,
                    score: 0.9,
                })
                .collect(),
            split: Split::Eval,
        },
        detections: boxes
            .iter()
            .enumerate()
            .map(|(i, b)| Detection {
                class_name: "dog".into(),
                kind: DetectionKind::Thing,
                score: 0.9,
                segment: i as u32 + 1,
                mask: None,
                boxes: vec![*b],
            })
            .collect(),
        source: None,
    }
}

fn config(root: &Path, raters: usize, seed: u64) -> ServiceConfig {
    ServiceConfig {
        store: root.to_path_buf(),
        bind: "127.0.0.1:0".into(),
        study_seed: seed,
        ratings_per_caption: 3,
        raters: (0..raters)
            .map(|i| RaterConfig {
                id: format!("r{i}"),
                token: format!("token-r{i}-secret"),
            })
            .collect(),
    }
}

/// Runs the sessions and checks every integrity property, returning a
/// description of the first violation.
pub fn run_sessions(root: &Path, p: SessionParams) -> Result<SessionOutcome, String> {
    let store = Store::open(root).map_err(|e| e.to_string())?;
    for i in 0..p.frames {
        let fid = format!("f{i}");
        store.save_frame(&record(&fid), 0).map_err(|e| e.to_string())?;
        for (cid, source) in [("auto", CaptionSource::Auto), ("model", CaptionSource::Model)] {
            store
                .put_caption_text(&fid, cid, source, TEXTS[i % 3], None)
                .map_err(|e| e.to_string())?;
        }
    }
    let cfg = config(root, p.raters, p.seed);
    let outcomes: Vec<Result<SessionOutcome, String>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..p.raters)
            .map(|i| {
                let cfg = cfg.clone();
                s.spawn(move || rater_session(&cfg, &format!("r{i}"), p.seed.wrapping_add(i as u64), p.steps))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err("session panicked".into())))
            .collect()
    });
    let mut total = SessionOutcome::default();
    for o in outcomes {
        let o = o?;
        total.refinements += o.refinements;
        total.ratings += o.ratings;
        total.stale_attempts += o.stale_attempts;
        total.restarts += o.restarts;
    }
    check_store(&store)?;

    // Crash with a torn rating append, then restart.
    let before = Workflow::new(&cfg)
        .and_then(|w| w.status())
        .map_err(|e| e.to_string())?;
    let log = root.join("frames/f0/ratings.jsonl");
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log)
        .map_err(|e| e.to_string())?;
    f.write_all(b"{\"task_id\":\"rate.f0.auto.r1.s0\",\"fra")
        .map_err(|e| e.to_string())?;
    drop(f);
    let after = Workflow::new(&cfg)
        .and_then(|w| w.status())
        .map_err(|e| e.to_string())?;
    if before != after {
        return Err("status after restart differs from status before crash".into());
    }
    check_status_matches_store(&store, &after)?;
    Ok(total)
}

fn rater_session(cfg: &ServiceConfig, rater: &str, seed: u64, steps: usize) -> Result<SessionOutcome, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut wf = Workflow::new(cfg).map_err(|e| e.to_string())?;
    let mut out = SessionOutcome::default();
    for _ in 0..steps {
        match rng.random_range(0..10) {
            0 => {
                wf = Workflow::new(cfg).map_err(|e| e.to_string())?;
                out.restarts += 1;
            }
            1..=4 => {
                let Some(t) = wf.next_task(rater, TaskKind::Refine).map_err(|e| e.to_string())? else {
                    continue;
                };
                let latest = wf
                    .store()
                    .load_caption(&t.frame_id, &t.caption_id)
                    .map_err(|e| e.to_string())?
                    .revision;
                let text = TEXTS[rng.random_range(0..TEXTS.len())];
                match wf.submit_refinement(rater, &t.task_id, text, latest) {
                    Ok(_) => out.refinements += 1,
                    Err(WorkflowError::Conflict(_) | WorkflowError::Forbidden(_)) => continue,
                    Err(e) => return Err(format!("{rater}: refinement failed: {e}")),
                }
                if rng.random_bool(0.5) {
                    // Revisions only grow, so the old base is stale for certain.
                    out.stale_attempts += 1;
                    match wf.submit_refinement(rater, &t.task_id, text, latest) {
                        Err(WorkflowError::Conflict(_)) => {}
                        other => return Err(format!("{rater}: stale write to {} gave {other:?}", t.task_id)),
                    }
                }
            }
            _ => {
                let Some(t) = wf.next_task(rater, TaskKind::Rate).map_err(|e| e.to_string())? else {
                    continue;
                };
                let c: Vec<i64> = (0..5).map(|_| rng.random_range(1..=5)).collect();
                match wf.submit_rating(rater, &t.task_id, &c) {
                    Ok(_) => out.ratings += 1,
                    Err(WorkflowError::Forbidden(_) | WorkflowError::Conflict(_)) => {}
                    Err(e) => return Err(format!("{rater}: rating failed: {e}")),
                }
                // A replay is always rejected.
                if wf.submit_rating(rater, &t.task_id, &c).is_ok() {
                    return Err(format!("{rater}: duplicate rating accepted for {}", t.task_id));
                }
            }
        }
    }
    Ok(out)
}

/// No rating by a caption's refiner; at most three distinct raters per
/// caption revision; revisions dense and each built on its predecessor.
fn check_store(store: &Store) -> Result<(), String> {
    for fid in store.frame_ids().map_err(|e| e.to_string())? {
        let ratings = store.ratings(&fid).map_err(|e| e.to_string())?;
        for cid in store.caption_ids(&fid).map_err(|e| e.to_string())? {
            let history = store.caption_history(&fid, &cid).map_err(|e| e.to_string())?;
            let revs: Vec<u64> = history.iter().map(|c| c.revision).collect();
            if revs != (1..=revs.len() as u64).collect::<Vec<_>>() {
                return Err(format!("{fid}/{cid}: revisions {revs:?} are not dense"));
            }
            let authors: BTreeSet<&str> = history.iter().filter_map(|c| c.author.as_deref()).collect();
            let mut per_rev: BTreeMap<u64, BTreeSet<&str>> = BTreeMap::new();
            for r in ratings.iter().filter(|r| r.caption_id == cid) {
                if authors.contains(r.rater_id.as_str()) {
                    return Err(format!("{fid}/{cid}: {} rated a caption they refined", r.rater_id));
                }
                if !per_rev.entry(r.caption_revision).or_default().insert(&r.rater_id) {
                    return Err(format!(
                        "{fid}/{cid}: {} rated revision {} twice",
                        r.rater_id, r.caption_revision
                    ));
                }
            }
            if let Some((rev, raters)) = per_rev.iter().find(|(_, v)| v.len() > 3) {
                return Err(format!("{fid}/{cid} r{rev}: {} raters exceed the target", raters.len()));
            }
        }
    }
    Ok(())
}

fn check_status_matches_store(
    store: &Store,
    status: &[groundcap_service::workflow::CaptionStatus],
) -> Result<(), String> {
    let all = store.all_ratings().map_err(|e| e.to_string())?;
    let from_status: usize = status.iter().map(|s| s.ratings.len()).sum();
    if from_status != all.len() {
        return Err(format!("status lists {from_status} ratings, store holds {}", all.len()));
    }
    for s in status {
        let latest = store
            .load_caption(&s.frame_id, &s.caption_id)
            .map_err(|e| e.to_string())?;
        if latest.revision != s.revision || latest.source != s.source {
            return Err(format!(
                "{}/{}: status disagrees with latest revision",
                s.frame_id, s.caption_id
            ));
        }
    }
    Ok(())
}
