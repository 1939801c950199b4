use super::{Sample, Source};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Upper bucket edges (seconds) of the duration histogram; the last bucket
/// is open-ended.
pub const DURATION_EDGES: [f64; 5] = [20.0, 60.0, 180.0, 600.0, 1800.0];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub total: usize,
    pub per_source: BTreeMap<Source, usize>,
    pub labeled: usize,
    pub unlabeled: usize,
    /// `DURATION_EDGES.len() + 1` counts: `< 20`, `[20, 60)`, ..., `>= 1800`.
    pub duration_histogram: Vec<usize>,
}

impl DatasetStats {
    pub fn from_samples<'a>(samples: impl IntoIterator<Item = &'a Sample>) -> Self {
        let mut stats = DatasetStats {
            total: 0,
            per_source: BTreeMap::new(),
            labeled: 0,
            unlabeled: 0,
            duration_histogram: vec![0; DURATION_EDGES.len() + 1],
        };
        for s in samples {
            stats.total += 1;
            *stats.per_source.entry(s.source).or_default() += 1;
            if s.is_labeled() {
                stats.labeled += 1;
            } else {
                stats.unlabeled += 1;
            }
            let bucket = DURATION_EDGES.partition_point(|&edge| s.video.duration_s >= edge);
            stats.duration_histogram[bucket] += 1;
        }
        stats
    }
}
