//! Task manifests: one JSON object per prediction task.

use std::path::Path;

use castemp_core::splitter::{PredictionTask, SplitKind};
use castemp_core::store::{CascadeStore, Interval};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_jsonl, write_jsonl};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub cascade_id: String,
    pub cutoff: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observed_from: Option<f64>,
    pub observed_events: usize,
    pub label_start: f64,
    pub label_end: f64,
    #[serde(default)]
    pub label_start_inclusive: bool,
    #[serde(default = "yes")]
    pub label_end_inclusive: bool,
    pub split: String,
    pub popularity_label: u32,
    pub conversion_label: u32,
}

fn yes() -> bool {
    true
}

impl TaskRecord {
    pub fn of(store: &CascadeStore, t: &PredictionTask) -> Self {
        TaskRecord {
            cascade_id: store.cascade_name(t.cascade).to_string(),
            cutoff: t.cutoff,
            observed_from: t.observed_from,
            observed_events: t.observed.len(),
            label_start: t.label_window.start,
            label_end: t.label_window.end,
            label_start_inclusive: t.label_window.start_inclusive,
            label_end_inclusive: t.label_window.end_inclusive,
            split: t.split.as_str().to_string(),
            popularity_label: t.popularity_label,
            conversion_label: t.conversion_label,
        }
    }
}

pub fn write_manifest(path: &Path, store: &CascadeStore, tasks: &[PredictionTask]) -> Result<()> {
    write_jsonl(path, tasks.iter().map(|t| TaskRecord::of(store, t)))
}

/// Rebuilds tasks against `store`, checking that the observed-event counts
/// recorded in the manifest still hold.
pub fn read_manifest(path: &Path, store: &CascadeStore) -> Result<Vec<PredictionTask>> {
    let records: Vec<TaskRecord> = read_jsonl(path)?;
    records
        .into_iter()
        .enumerate()
        .map(|(k, r)| {
            let line = k as u64 + 1;
            let cascade = store
                .cascade_by_name(&r.cascade_id)
                .ok_or_else(|| Error::malformed(path, line, format!("unknown cascade `{}`", r.cascade_id)))?;
            let split = SplitKind::parse(&r.split).ok_or_else(|| Error::malformed(path, line, format!("unknown split `{}`", r.split)))?;
            let prefix = store.observed_range(cascade, r.cutoff)?;
            let start = match r.observed_from {
                Some(from) => store.observed_range(cascade, from)?.end,
                None => 0,
            };
            let observed = start..prefix.end.max(start);
            if observed.len() != r.observed_events {
                return Err(Error::malformed(
                    path,
                    line,
                    format!("manifest says {} observed events, store has {}", r.observed_events, observed.len()),
                ));
            }
            let label_window = Interval {
                start: r.label_start,
                end: r.label_end,
                start_inclusive: r.label_start_inclusive,
                end_inclusive: r.label_end_inclusive,
            };
            Ok(PredictionTask {
                cascade,
                cutoff: r.cutoff,
                observed_from: r.observed_from,
                observed,
                label_window,
                popularity_label: r.popularity_label,
                conversion_label: r.conversion_label,
                split,
            })
        })
        .collect()
}
