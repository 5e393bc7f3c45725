//! Corpus views over the store: scoring pairs and rating groups.

use std::collections::{BTreeMap, HashMap};

use super::{CaptionRecord, CaptionSource, Result, Store};
use crate::metrics::report::{mean_criteria, score_caption, RatedItem, RatingRecord, ScoringItem};
use crate::model::Split;

/// Latest revision in `history` with the given source.
fn latest_with(history: &[CaptionRecord], source: CaptionSource) -> Option<&CaptionRecord> {
    history.iter().rev().find(|c| c.source == source)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorpusSelection {
    pub items: Vec<ScoringItem>,
    /// Frames with a candidate but no human reference caption.
    pub without_reference: Vec<String>,
}

/// Pairs each caption's latest `source` revision with the frame's human
/// reference (the latest human revision of the frame's first caption that
/// has one). A candidate that is itself the reference is skipped.
pub fn scoring_items(store: &Store, source: CaptionSource, split: Option<Split>) -> Result<CorpusSelection> {
    let mut sel = CorpusSelection::default();
    for fid in store.frame_ids()? {
        let frame = store.load_frame(&fid)?.value.frame;
        if split.is_some_and(|s| s != frame.split) {
            continue;
        }
        let mut histories = Vec::new();
        for cid in store.caption_ids(&fid)? {
            histories.push(store.caption_history(&fid, &cid)?);
        }
        let reference = histories.iter().find_map(|h| latest_with(h, CaptionSource::Human));
        let candidates: Vec<&CaptionRecord> = histories
            .iter()
            .filter_map(|h| latest_with(h, source))
            .filter(|c| reference.is_none_or(|r| (&r.caption_id, r.revision) != (&c.caption_id, c.revision)))
            .collect();
        if candidates.is_empty() {
            continue;
        }
        let Some(reference) = reference else {
            sel.without_reference.push(fid);
            continue;
        };
        let detected = frame.object_ids();
        for c in candidates {
            sel.items.push(ScoringItem {
                frame_id: if c.caption_id == source.name() {
                    fid.clone()
                } else {
                    format!("{fid}/{}", c.caption_id)
                },
                candidate: c.text.clone(),
                reference: reference.text.clone(),
                detected: detected.clone(),
            });
        }
    }
    Ok(sel)
}

/// Ratings grouped by the source of the caption revision they rate, one group
/// per source in [`CaptionSource::ALL`] order (possibly empty).
pub fn ratings_by_source(store: &Store, sources: &[CaptionSource]) -> Result<Vec<(String, Vec<RatingRecord>)>> {
    let mut groups: HashMap<CaptionSource, Vec<RatingRecord>> = HashMap::new();
    for fid in store.frame_ids()? {
        for r in store.ratings(&fid)? {
            let c = store.load_caption_revision(&fid, &r.caption_id, r.caption_revision)?;
            groups.entry(c.source).or_default().push(r);
        }
    }
    Ok(CaptionSource::ALL
        .into_iter()
        .filter(|s| sources.contains(s))
        .map(|s| (s.name().to_owned(), groups.remove(&s).unwrap_or_default()))
        .collect())
}

/// Rated caption revisions of the given sources, scored against the frame's
/// human reference. Frames without a reference, and the reference itself,
/// are left out.
pub fn rated_items(store: &Store, sources: &[CaptionSource]) -> Result<Vec<RatedItem>> {
    let mut out = Vec::new();
    for fid in store.frame_ids()? {
        let ratings = store.ratings(&fid)?;
        if ratings.is_empty() {
            continue;
        }
        let frame = store.load_frame(&fid)?.value.frame;
        let mut reference = None;
        for cid in store.caption_ids(&fid)? {
            if let Some(r) = latest_with(&store.caption_history(&fid, &cid)?, CaptionSource::Human) {
                reference = Some(r.clone());
                break;
            }
        }
        let Some(reference) = reference else { continue };
        let mut units: BTreeMap<(&str, u64), Vec<&RatingRecord>> = BTreeMap::new();
        for r in &ratings {
            units.entry((&r.caption_id, r.caption_revision)).or_default().push(r);
        }
        let detected = frame.object_ids();
        for ((cid, rev), group) in units {
            if (cid, rev) == (reference.caption_id.as_str(), reference.revision) {
                continue;
            }
            let c = store.load_caption_revision(&fid, cid, rev)?;
            if !sources.contains(&c.source) {
                continue;
            }
            out.push(RatedItem {
                unit: format!("{fid}/{cid}/r{rev}"),
                source: c.source.name().to_owned(),
                report: score_caption(&c.text, &reference.text, &detected),
                mean_ratings: mean_criteria(&group),
                raters: group.len(),
            });
        }
    }
    Ok(out)
}
