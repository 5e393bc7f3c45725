use std::collections::BTreeSet;
use std::io::Read;
use std::path::{Path, PathBuf};

use groundcap_core::markup::validate_text;
use groundcap_core::metrics::agreement::Distance;
use groundcap_core::metrics::grounding::grounding_scores;
use groundcap_core::metrics::report::{agreement_report, correlation_report, score_corpus, Criterion};
use groundcap_core::ordering::{build_scene, OrderingParams};
use groundcap_core::refine::http::{HttpCaptioner, HttpCaptionerConfig};
use groundcap_core::refine::{generate_pipeline, refine, Captioner, RefineError, RefineParams};
use groundcap_core::region::DecompositionParams;
use groundcap_core::store::corpus::{rated_items, ratings_by_source, scoring_items};
use groundcap_core::store::import::{import_jsonl, BoxFormat};
use groundcap_core::store::ingest::{ingest_segmentation, IngestOptions};
use groundcap_core::store::labelmap::{read_label_map, Legend};
use groundcap_core::store::splits::assign_splits;
use groundcap_core::store::{is_safe_id, CaptionSource, FrameRecord, SegmentationSource, Store, StoreError};
use groundcap_core::{referenced_ids, Exec, Frame, Split};
use serde::Serialize;

use crate::error::CliError;

/// Outcome of one item in a batch command.
#[derive(Debug, Clone, Serialize)]
pub struct ItemStatus {
    pub id: String,
    pub status: &'static str,
    pub detail: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl ItemStatus {
    fn ok(id: &str, written: bool, detail: String, notes: Vec<String>) -> Self {
        Self {
            id: id.to_owned(),
            status: if written { "written" } else { "unchanged" },
            detail,
            notes,
        }
    }

    fn failed(id: &str, err: impl std::fmt::Display) -> Self {
        Self {
            id: id.to_owned(),
            status: "failed",
            detail: err.to_string(),
            notes: Vec::new(),
        }
    }

    fn skipped(id: &str, why: &str) -> Self {
        Self {
            id: id.to_owned(),
            status: "skipped",
            detail: why.to_owned(),
            notes: Vec::new(),
        }
    }
}

/// Prints per-item lines in id order and fails if any item failed.
pub fn finish_batch(mut items: Vec<ItemStatus>, json: Option<&Path>) -> Result<(), CliError> {
    items.sort_by(|a, b| a.id.cmp(&b.id));
    let width = items.iter().map(|i| i.id.len()).max().unwrap_or(0);
    for i in &items {
        println!("{:<width$}  {:<9}  {}", i.id, i.status, i.detail);
        for n in &i.notes {
            println!("{:<width$}  note: {n}", "");
        }
    }
    let failed = items.iter().filter(|i| i.status == "failed").count();
    let count = |s: &str| items.iter().filter(|i| i.status == s).count();
    println!(
        "{} written, {} unchanged, {} skipped, {failed} failed",
        count("written"),
        count("unchanged"),
        count("skipped")
    );
    if let Some(path) = json {
        write_json(path, &items)?;
    }
    if failed > 0 {
        return Err(CliError::Partial {
            failed,
            total: items.len(),
        });
    }
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

pub fn open_existing(root: &Path) -> Result<Store, CliError> {
    if !root.is_dir() {
        return Err(CliError::Config(format!("store {} does not exist", root.display())));
    }
    Ok(Store::open(root)?)
}

/// Requested frame ids, or every stored frame when none are given.
fn select_frames(store: &Store, ids: &[String]) -> Result<Vec<String>, CliError> {
    if ids.is_empty() {
        return Ok(store.frame_ids()?);
    }
    let known: BTreeSet<String> = store.frame_ids()?.into_iter().collect();
    if let Some(missing) = ids.iter().find(|id| !known.contains(*id)) {
        return Err(CliError::Input(format!("unknown frame `{missing}`")));
    }
    Ok(ids.to_vec())
}

fn with_objects(mut record: FrameRecord, ordering: &OrderingParams) -> FrameRecord {
    record.frame.objects = build_scene(&record.detections, record.frame.height, ordering);
    record
}

fn scene_detail(r: &FrameRecord) -> String {
    let boxes: usize = r.detections.iter().map(|d| d.boxes.len()).sum();
    format!(
        "{} detections, {} boxes, {} objects",
        r.detections.len(),
        boxes,
        r.frame.objects.len()
    )
}

pub struct IngestArgs {
    pub labelmaps: Vec<PathBuf>,
    pub image_ext: String,
    pub vocab: Option<PathBuf>,
    pub options: IngestOptions,
    pub ordering: OrderingParams,
}

pub fn legend_path(labelmap: &Path) -> PathBuf {
    labelmap.with_extension("legend.json")
}

fn read_vocab(path: &Path) -> Result<BTreeSet<String>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_owned)
        .collect())
}

/// Path as recorded in the store: relative to the store root when inside
/// it, absolute otherwise.
fn store_ref(store: &Store, p: &Path) -> Result<String, CliError> {
    let abs = |p: &Path| std::path::absolute(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())));
    let (p, root) = (abs(p)?, abs(store.root())?);
    Ok(match p.strip_prefix(&root) {
        Ok(rel) => rel.to_string_lossy().replace('\\', "/"),
        Err(_) => p.display().to_string(),
    })
}

pub fn ingest(store: &Store, args: &IngestArgs, exec: Exec) -> Result<Vec<ItemStatus>, CliError> {
    // Inputs are checked up front so a typo fails before any work.
    for p in &args.labelmaps {
        for q in [p.clone(), legend_path(p)] {
            if !q.is_file() {
                return Err(CliError::Config(format!("{} does not exist", q.display())));
            }
        }
        let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        if !is_safe_id(stem) {
            return Err(CliError::Config(format!(
                "{}: `{stem}` is not a usable frame id",
                p.display()
            )));
        }
    }
    let vocab = args.vocab.as_deref().map(read_vocab).transpose()?;
    let splits = match store.load_splits() {
        Ok(t) => Some(t),
        Err(StoreError::NotFound(_)) => None,
        Err(e) => return Err(e.into()),
    };
    let items = exec.map(&args.labelmaps, |p| {
        let fid = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_owned();
        let split = splits
            .as_ref()
            .and_then(|t| t.assignments.get(&fid).copied())
            .unwrap_or_default();
        match ingest_one(store, p, &fid, split, args, vocab.as_ref()) {
            Ok(s) => s,
            Err(e) => ItemStatus::failed(&fid, e),
        }
    });
    Ok(items)
}

fn ingest_one(
    store: &Store,
    labelmap: &Path,
    fid: &str,
    split: Split,
    args: &IngestArgs,
    vocab: Option<&BTreeSet<String>>,
) -> Result<ItemStatus, CliError> {
    let legend_file = legend_path(labelmap);
    let map = read_label_map(labelmap).map_err(|e| CliError::Input(e.to_string()))?;
    let legend = Legend::read(&legend_file).map_err(|e| CliError::Input(e.to_string()))?;
    // Segments are decomposed sequentially; frames are the parallel unit.
    let ingested = ingest_segmentation(&map, &legend, vocab, &args.options, Exec::Sequential)
        .map_err(|e| CliError::Input(format!("{}: {e}", labelmap.display())))?;
    let image = labelmap.with_extension(&args.image_ext);
    let mut notes = ingested.notes;
    if !image.is_file() {
        notes.push(format!("image {} not found", image.display()));
    }
    let record = with_objects(
        FrameRecord {
            frame: Frame {
                frame_id: fid.to_owned(),
                width: map.width,
                height: map.height,
                image_ref: store_ref(store, &image)?,
                objects: Vec::new(),
                split,
            },
            detections: ingested.detections,
            source: Some(SegmentationSource {
                labelmap: store_ref(store, labelmap)?,
                legend: store_ref(store, &legend_file)?,
            }),
        },
        &args.ordering,
    );
    let (rev, written) = store.upsert_frame(&record)?;
    Ok(ItemStatus::ok(
        fid,
        written,
        format!("r{rev}: {}", scene_detail(&record)),
        notes,
    ))
}

pub fn decompose(
    store: &Store,
    ids: &[String],
    params: &DecompositionParams,
    ordering: &OrderingParams,
    exec: Exec,
) -> Result<Vec<ItemStatus>, CliError> {
    let frames = select_frames(store, ids)?;
    let options = IngestOptions {
        decomposition: *params,
        decompose: true,
    };
    Ok(exec.map(&frames, |fid| {
        let run = || -> Result<ItemStatus, CliError> {
            let current = store.load_frame(fid)?.value;
            let Some(src) = current.source.clone() else {
                return Ok(ItemStatus::skipped(fid, "no segmentation source recorded"));
            };
            let map = read_label_map(&store.resolve(&src.labelmap)).map_err(|e| CliError::Input(e.to_string()))?;
            let legend = Legend::read(&store.resolve(&src.legend)).map_err(|e| CliError::Input(e.to_string()))?;
            let ingested = ingest_segmentation(&map, &legend, None, &options, Exec::Sequential)
                .map_err(|e| CliError::Input(e.to_string()))?;
            let record = with_objects(
                FrameRecord {
                    detections: ingested.detections,
                    ..current
                },
                ordering,
            );
            let (rev, written) = store.upsert_frame(&record)?;
            Ok(ItemStatus::ok(
                fid,
                written,
                format!("r{rev}: {}", scene_detail(&record)),
                ingested.notes,
            ))
        };
        run().unwrap_or_else(|e| ItemStatus::failed(fid, e))
    }))
}

pub fn order(
    store: &Store,
    ids: &[String],
    ordering: &OrderingParams,
    exec: Exec,
) -> Result<Vec<ItemStatus>, CliError> {
    let frames = select_frames(store, ids)?;
    Ok(exec.map(&frames, |fid| {
        let run = || -> Result<ItemStatus, CliError> {
            let record = with_objects(store.load_frame(fid)?.value, ordering);
            let (rev, written) = store.upsert_frame(&record)?;
            let ids: Vec<&str> = record.frame.objects.iter().map(|o| o.object_id.as_str()).collect();
            Ok(ItemStatus::ok(
                fid,
                written,
                format!("r{rev}: {}", ids.join(" ")),
                Vec::new(),
            ))
        };
        run().unwrap_or_else(|e| ItemStatus::failed(fid, e))
    }))
}

/// Validates caption text against a stored frame. Diagnostics go to stderr.
pub fn validate(store: &Store, frame_id: &str, file: Option<&Path>, caption: Option<&str>) -> Result<(), CliError> {
    let frame = store.load_frame(frame_id)?.value.frame;
    let text = match (file, caption) {
        (Some(p), _) if p == Path::new("-") => {
            let mut s = String::new();
            std::io::stdin()
                .read_to_string(&mut s)
                .map_err(|e| CliError::Io(e.to_string()))?;
            s
        }
        (Some(p), _) => std::fs::read_to_string(p).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?,
        (None, Some(cid)) => store.load_caption(frame_id, cid)?.text,
        (None, None) => return Err(CliError::Config("pass --file or --caption".into())),
    };
    let text = text.trim_end_matches(['\n', '\r']);
    let (ast, diag) = validate_text(text, &frame);
    for e in &diag.syntax_errors {
        eprintln!("syntax error {e}");
    }
    for id in &diag.unknown_ids {
        eprintln!("unknown object id {id}");
    }
    for m in &diag.kind_mismatches {
        eprintln!("class mismatch: {m:?}");
    }
    if let Some(ast) = &ast {
        let g = grounding_scores(&referenced_ids(ast), &frame.object_ids());
        println!("P {:.4}  R {:.4}  F1 {:.4}", g.precision, g.recall, g.f1);
    }
    if diag.is_valid() {
        println!("valid");
        Ok(())
    } else {
        let n = diag.syntax_errors.len() + diag.unknown_ids.len() + diag.kind_mismatches.len();
        Err(CliError::Input(format!("caption has {n} problem(s)")))
    }
}

#[derive(Debug, Serialize)]
pub struct ScoreOutput {
    pub split: Option<Split>,
    pub source: String,
    pub without_reference: Vec<String>,
    pub report: groundcap_core::metrics::report::CorpusReport,
}

pub fn score(store: &Store, split: Option<Split>, source: CaptionSource, exec: Exec) -> Result<ScoreOutput, CliError> {
    let sel = scoring_items(store, source, split)?;
    Ok(ScoreOutput {
        split,
        source: source.name().to_owned(),
        without_reference: sel.without_reference,
        report: score_corpus(&sel.items, exec),
    })
}

/// Frame id and its refinement attempt log.
pub type RefineLog = (String, serde_json::Value);

pub fn refine_frames(
    store: &Store,
    ids: &[String],
    captioner: &dyn Captioner,
    params: &RefineParams,
    regenerate: bool,
    exec: Exec,
) -> Result<(Vec<ItemStatus>, Vec<RefineLog>), CliError> {
    let frames = select_frames(store, ids)?;
    let results = exec.map(&frames, |fid| refine_one(store, fid, captioner, params, regenerate));
    let mut items = Vec::new();
    let mut logs = Vec::new();
    for (fid, r) in frames.iter().zip(results) {
        match r {
            Ok((status, log)) => {
                items.push(status);
                logs.push((fid.clone(), log));
            }
            Err(e) => items.push(ItemStatus::failed(fid, e)),
        }
    }
    Ok((items, logs))
}

fn refine_one(
    store: &Store,
    fid: &str,
    captioner: &dyn Captioner,
    params: &RefineParams,
    regenerate: bool,
) -> Result<(ItemStatus, serde_json::Value), CliError> {
    let frame = store.load_frame(fid)?.value.frame;
    let existing = match store.load_caption(fid, CaptionSource::Auto.name()) {
        Ok(c) => Some(c.text),
        Err(StoreError::NotFound(_)) => None,
        Err(e) => return Err(e.into()),
    };
    let external = |e: RefineError| CliError::External(e.to_string());
    let (result, log) = match existing.filter(|_| !regenerate) {
        Some(text) => {
            let r = refine(&frame, &text, captioner, params).map_err(external)?;
            let log = serde_json::to_value(&r).map_err(|e| CliError::Io(e.to_string()))?;
            (r, log)
        }
        None => {
            // Objects are captioned one after another; frames run in parallel.
            let out = generate_pipeline(&frame, captioner, params, Exec::Sequential).map_err(external)?;
            let log = serde_json::to_value(&out).map_err(|e| CliError::Io(e.to_string()))?;
            (out.refinement, log)
        }
    };
    let Some(text) = result.best_text() else {
        return Ok((ItemStatus::failed(fid, "no attempt produced a parseable caption"), log));
    };
    let (rev, written) = store.put_caption_text(fid, CaptionSource::Auto.name(), CaptionSource::Auto, &text, None)?;
    let detail = format!(
        "r{rev}: F1 {:.3} at attempt {} of {}{}",
        result.best_f1,
        result.best_attempt.unwrap_or(0),
        result.attempts.len(),
        if result.converged { "" } else { " (below threshold)" }
    );
    Ok((ItemStatus::ok(fid, written, detail, Vec::new()), log))
}

pub fn http_captioner(cfg: HttpCaptionerConfig) -> Result<HttpCaptioner, CliError> {
    HttpCaptioner::new(cfg).map_err(|e| CliError::Config(e.to_string()))
}

/// Assigns splits and rewrites each frame's split field.
pub fn splits(
    store: &Store,
    eval_fraction: f64,
    seed: u64,
) -> Result<groundcap_core::store::splits::SplitTable, CliError> {
    let ids = store.frame_ids()?;
    let table = assign_splits(&ids, eval_fraction, seed).map_err(CliError::Config)?;
    store.save_splits(&table)?;
    for id in &ids {
        let mut record = store.load_frame(id)?.value;
        record.frame.split = table.assignments[id];
        store.upsert_frame(&record)?;
    }
    Ok(table)
}

pub fn import(store: &Store, path: &Path, normalized: bool) -> Result<(), CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let fmt = if normalized {
        BoxFormat::Normalized
    } else {
        BoxFormat::Pixel
    };
    let r = import_jsonl(store, &text, fmt)?;
    for (line, msg) in &r.problems {
        eprintln!("line {line}: {msg}");
    }
    println!(
        "frames: {} written, {} unchanged; captions: {} written, {} unchanged; {} lines rejected",
        r.frames_written, r.frames_unchanged, r.captions_written, r.captions_unchanged, r.rejected
    );
    if r.rejected > 0 {
        return Err(CliError::Partial {
            failed: r.rejected,
            total: r.rejected + r.frames_written + r.frames_unchanged,
        });
    }
    Ok(())
}

pub fn agreement(
    store: &Store,
    sources: &[CaptionSource],
    distance: Distance,
) -> Result<groundcap_core::metrics::report::AgreementReport, CliError> {
    Ok(agreement_report(&ratings_by_source(store, sources)?, distance))
}

pub fn correlation(
    store: &Store,
    sources: &[CaptionSource],
    criterion: Criterion,
) -> Result<groundcap_core::metrics::report::CorrelationReport, CliError> {
    Ok(correlation_report(&rated_items(store, sources)?, criterion))
}
