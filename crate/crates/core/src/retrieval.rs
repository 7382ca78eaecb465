//! Brute-force video retrieval over descriptor sets and micro average
//! precision over a single global ranking.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use crate::codec::{expect_columns, parse_field, read_tsv, write_text};
use crate::descriptor::{Descriptor, VideoDescriptorSet};
use crate::error::{FcplError, Result};
use crate::segment::GtVideoPair;

#[derive(Clone, Debug, PartialEq)]
pub struct RankedPair {
    pub query_video_id: String,
    pub ref_video_id: String,
    pub score: f64,
    /// Filled by [`GroundTruthIndex::label`].
    pub is_positive: bool,
}

impl RankedPair {
    pub fn new(query_video_id: impl Into<String>, ref_video_id: impl Into<String>, score: f64) -> Self {
        RankedPair {
            query_video_id: query_video_id.into(),
            ref_video_id: ref_video_id.into(),
            score,
            is_positive: false,
        }
    }
}

/// Set of positive `(query_video_id, ref_video_id)` pairs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GroundTruthIndex {
    positives: HashSet<(String, String)>,
}

impl GroundTruthIndex {
    pub fn new<Q: Into<String>, R: Into<String>>(pairs: impl IntoIterator<Item = (Q, R)>) -> Self {
        GroundTruthIndex {
            positives: pairs.into_iter().map(|(q, r)| (q.into(), r.into())).collect(),
        }
    }

    /// Several segments of the same video pair count as one positive.
    pub fn from_segments(pairs: &[GtVideoPair]) -> Self {
        Self::new(pairs.iter().map(|p| (p.query_video_id.clone(), p.ref_video_id.clone())))
    }

    pub fn len(&self) -> usize {
        self.positives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positives.is_empty()
    }

    pub fn contains(&self, query_video_id: &str, ref_video_id: &str) -> bool {
        self.positives
            .contains(&(query_video_id.to_string(), ref_video_id.to_string()))
    }

    pub fn label(&self, ranked: &mut [RankedPair]) {
        for p in ranked {
            p.is_positive = self.contains(&p.query_video_id, &p.ref_video_id);
        }
    }
}

/// Inner product of two descriptors, accumulated in f64.
pub fn frame_score(a: &Descriptor, b: &Descriptor) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(FcplError::DimensionMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    Ok(a.values()
        .iter()
        .zip(b.values())
        .map(|(&x, &y)| x as f64 * y as f64)
        .sum())
}

/// Best frame-to-frame similarity between two videos.
pub fn video_pair_score(q: &VideoDescriptorSet, r: &VideoDescriptorSet) -> Result<f64> {
    if q.is_empty() || r.is_empty() {
        return Err(FcplError::InvalidArgument(format!(
            "cannot score {} against {}: empty descriptor set",
            q.video_id, r.video_id
        )));
    }
    let mut best = f64::NEG_INFINITY;
    for (_, a) in &q.entries {
        for (_, b) in &r.entries {
            best = best.max(frame_score(a, b)?);
        }
    }
    Ok(best)
}

/// Descending score, then ascending `(query_id, ref_id)`.
pub fn rank_order(a: &RankedPair, b: &RankedPair) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.query_video_id.cmp(&b.query_video_id))
        .then_with(|| a.ref_video_id.cmp(&b.ref_video_id))
}

/// Keep the `top_k` references per query and merge into one ranking.
pub fn search_all(queries: &[VideoDescriptorSet], refs: &[VideoDescriptorSet], top_k: usize) -> Result<Vec<RankedPair>> {
    if top_k == 0 {
        return Err(FcplError::InvalidArgument("top_k must be at least 1".into()));
    }
    let mut out = Vec::new();
    for q in queries {
        let mut scored = refs
            .iter()
            .map(|r| Ok(RankedPair::new(&q.video_id, &r.video_id, video_pair_score(q, r)?)))
            .collect::<Result<Vec<_>>>()?;
        scored.sort_by(rank_order);
        scored.truncate(top_k);
        out.extend(scored);
    }
    out.sort_by(rank_order);
    Ok(out)
}

/// Average precision of a ranked label sequence against `total_positives`
/// relevant items. Positives absent from the ranking contribute zero.
pub fn average_precision(labels: &[bool], total_positives: usize) -> Result<f64> {
    if total_positives == 0 {
        return Err(FcplError::EmptyGroundTruth);
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, &positive) in labels.iter().enumerate() {
        if positive {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    if hits > total_positives {
        return Err(FcplError::InvalidArgument(format!(
            "{hits} positive hits exceed {total_positives} ground-truth positives"
        )));
    }
    Ok(sum / total_positives as f64)
}

/// Micro AP over the given ranking, which must already be sorted by
/// descending score. A pair listed more than once only counts the first
/// time; later repeats are dropped.
pub fn micro_ap(ranked: &[RankedPair], gt: &GroundTruthIndex) -> Result<f64> {
    if gt.is_empty() {
        return Err(FcplError::EmptyGroundTruth);
    }
    if let Some(w) = ranked.windows(2).find(|w| w[1].score > w[0].score) {
        return Err(FcplError::InvalidArgument(format!(
            "ranking not sorted by descending score at {} -> {}",
            w[1].query_video_id, w[1].ref_video_id
        )));
    }
    let mut seen = HashSet::new();
    let labels: Vec<bool> = ranked
        .iter()
        .filter(|p| seen.insert((p.query_video_id.as_str(), p.ref_video_id.as_str())))
        .map(|p| gt.contains(&p.query_video_id, &p.ref_video_id))
        .collect();
    average_precision(&labels, gt.len())
}

/// One `query_id  ref_id  score` line per pair.
pub fn write_ranked(path: &Path, ranked: &[RankedPair]) -> Result<()> {
    let mut s = String::new();
    for p in ranked {
        writeln!(s, "{}\t{}\t{}", p.query_video_id, p.ref_video_id, p.score).unwrap();
    }
    write_text(path, &s)
}

pub fn read_ranked(path: &Path) -> Result<Vec<RankedPair>> {
    read_tsv(path)?
        .into_iter()
        .map(|(line, cols)| {
            expect_columns(path, line, &cols, 3)?;
            let score: f64 = parse_field(path, line, &cols[2])?;
            if !score.is_finite() {
                return Err(FcplError::corrupt(path, format!("line {line}: score is not finite")));
            }
            Ok(RankedPair::new(&cols[0], &cols[1], score))
        })
        .collect()
}
