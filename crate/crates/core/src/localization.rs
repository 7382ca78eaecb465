//! Copy-segment localization with a temporal network: frame matches become
//! nodes, temporally consistent successors become edges, and the heaviest
//! path is read off as an aligned segment pair.

use std::cmp::Ordering;
use std::collections::VecDeque;
use std::fmt::Write as _;
use std::path::Path;

use crate::codec::{expect_columns, parse_field, read_tsv, write_text};
use crate::descriptor::VideoDescriptorSet;
use crate::error::{FcplError, Result};
use crate::retrieval::{average_precision, frame_score};
use crate::segment::{GtVideoPair, Interval, SegmentMatch};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MatchCandidate {
    pub q_time: f64,
    pub r_time: f64,
    pub score: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalizeConfig {
    pub candidate_threshold: f64,
    pub max_gap_s: f64,
    pub min_path_len: usize,
    pub max_segments: usize,
}

impl Default for LocalizeConfig {
    fn default() -> Self {
        LocalizeConfig {
            candidate_threshold: 0.5,
            max_gap_s: 3.0,
            min_path_len: 3,
            max_segments: 8,
        }
    }
}

impl LocalizeConfig {
    pub fn validate(&self) -> Result<()> {
        check_threshold(self.candidate_threshold)?;
        if !(self.max_gap_s > 0.0 && self.max_gap_s.is_finite()) {
            return Err(FcplError::InvalidArgument(format!(
                "max_gap_s must be positive, got {}",
                self.max_gap_s
            )));
        }
        if self.min_path_len == 0 {
            return Err(FcplError::InvalidArgument("min_path_len must be at least 1".into()));
        }
        Ok(())
    }
}

fn check_threshold(threshold: f64) -> Result<()> {
    if !(threshold > -1.0 && threshold < 1.0) {
        return Err(FcplError::InvalidArgument(format!(
            "candidate threshold must lie in (-1, 1), got {threshold}"
        )));
    }
    Ok(())
}

fn by_time(a: &MatchCandidate, b: &MatchCandidate) -> Ordering {
    a.q_time.total_cmp(&b.q_time).then(a.r_time.total_cmp(&b.r_time))
}

/// Every frame pair scoring at least `threshold`, sorted by `(q_time, r_time)`.
pub fn candidates(q: &VideoDescriptorSet, r: &VideoDescriptorSet, threshold: f64) -> Result<Vec<MatchCandidate>> {
    check_threshold(threshold)?;
    let mut out = Vec::new();
    for (qt, qd) in &q.entries {
        for (rt, rd) in &r.entries {
            let score = frame_score(qd, rd)?;
            if score >= threshold {
                out.push(MatchCandidate {
                    q_time: *qt,
                    r_time: *rt,
                    score,
                });
            }
        }
    }
    out.sort_by(by_time);
    Ok(out)
}

/// Directed graph over candidates. `u -> v` iff `v` is strictly later than
/// `u` in both videos and neither gap exceeds `max_gap_s`. Paths may start
/// and end at any node.
#[derive(Clone, Debug, PartialEq)]
pub struct TemporalNetwork {
    pub nodes: Vec<MatchCandidate>,
    pub successors: Vec<Vec<usize>>,
}

/// Whether `v` may follow `u` on a path.
pub fn edge_allowed(u: &MatchCandidate, v: &MatchCandidate, max_gap_s: f64) -> bool {
    let dq = v.q_time - u.q_time;
    let dr = v.r_time - u.r_time;
    dq > 0.0 && dr > 0.0 && dq <= max_gap_s && dr <= max_gap_s
}

pub fn build_network(cands: &[MatchCandidate], max_gap_s: f64) -> TemporalNetwork {
    build_network_blocked(cands, max_gap_s, &[])
}

/// Like [`build_network`], but no edge may jump across any of `blocked`:
/// an edge whose endpoints lie on opposite sides of a blocked query span (or
/// reference span) is dropped.
fn build_network_blocked(cands: &[MatchCandidate], max_gap_s: f64, blocked: &[(Interval, Interval)]) -> TemporalNetwork {
    let crosses = |a: f64, b: f64, span: &Interval| a < span.start && b > span.end;
    let successors = cands
        .iter()
        .map(|u| {
            cands
                .iter()
                .enumerate()
                .filter(|(_, v)| {
                    edge_allowed(u, v, max_gap_s)
                        && !blocked
                            .iter()
                            .any(|(qs, rs)| crosses(u.q_time, v.q_time, qs) || crosses(u.r_time, v.r_time, rs))
                })
                .map(|(j, _)| j)
                .collect()
        })
        .collect();
    TemporalNetwork {
        nodes: cands.to_vec(),
        successors,
    }
}

impl TemporalNetwork {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.successors[u].contains(&v)
    }

    /// Kahn's algorithm; `None` if the graph has a cycle.
    pub fn topological_order(&self) -> Option<Vec<usize>> {
        let mut indegree = vec![0usize; self.len()];
        for succ in &self.successors {
            for &v in succ {
                indegree[v] += 1;
            }
        }
        let mut ready: VecDeque<usize> = (0..self.len()).filter(|&v| indegree[v] == 0).collect();
        let mut order = Vec::with_capacity(self.len());
        while let Some(u) = ready.pop_front() {
            order.push(u);
            for &v in &self.successors[u] {
                indegree[v] -= 1;
                if indegree[v] == 0 {
                    ready.push_back(v);
                }
            }
        }
        (order.len() == self.len()).then_some(order)
    }
}

/// Total score of a path, folded from the last node backwards.
pub fn path_score(nodes: &[MatchCandidate], path: &[usize]) -> f64 {
    path.iter().rev().fold(0.0, |acc, &i| nodes[i].score + acc)
}

/// Whether path `a` beats path `b`: higher score, then more nodes, then the
/// lexicographically smaller node sequence (earlier in time).
pub fn path_better(a: (f64, usize, &[usize]), b: (f64, usize, &[usize])) -> bool {
    match a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)) {
        Ordering::Greater => true,
        Ordering::Less => false,
        Ordering::Equal => a.2 < b.2,
    }
}

/// Heaviest node-weighted path, as node indices.
pub fn best_path_indices(net: &TemporalNetwork) -> Vec<usize> {
    let order = net.topological_order().expect("temporal network is acyclic");
    // Best path starting at each node: (score, length, next node).
    let mut best: Vec<(f64, usize, Option<usize>)> = vec![(0.0, 0, None); net.len()];
    for &u in order.iter().rev() {
        let own = net.nodes[u].score;
        let mut choice = (own, 1usize, None);
        let mut succ = net.successors[u].clone();
        succ.sort_unstable();
        for v in succ {
            let cand = (own + best[v].0, 1 + best[v].1);
            // Successors are visited in ascending index order, so a tie keeps
            // the smaller first step.
            if cand.0.total_cmp(&choice.0).then(cand.1.cmp(&choice.1)) == Ordering::Greater {
                choice = (cand.0, cand.1, Some(v));
            }
        }
        best[u] = choice;
    }
    let Some(mut u) = (0..net.len()).reduce(|a, b| {
        if best[b].0.total_cmp(&best[a].0).then(best[b].1.cmp(&best[a].1)) == Ordering::Greater {
            b
        } else {
            a
        }
    }) else {
        return Vec::new();
    };
    let mut path = vec![u];
    while let Some(v) = best[u].2 {
        path.push(v);
        u = v;
    }
    path
}

pub fn best_path(net: &TemporalNetwork) -> Vec<MatchCandidate> {
    best_path_indices(net).into_iter().map(|i| net.nodes[i]).collect()
}

fn to_segment(path: &[MatchCandidate]) -> SegmentMatch {
    let first = path[0];
    let last = path[path.len() - 1];
    SegmentMatch {
        q_start: first.q_time,
        q_end: last.q_time,
        r_start: first.r_time,
        r_end: last.r_time,
        score: path.iter().rev().fold(0.0, |acc, c| c.score + acc),
        path_len: path.len(),
    }
}

/// Repeatedly take the heaviest path. Paths with at least `min_path_len`
/// nodes are emitted and every candidate inside their query or reference
/// span is removed; shorter paths are discarded node by node so weaker but
/// longer alignments still get a turn.
pub fn localize_candidates(cands: &[MatchCandidate], config: &LocalizeConfig) -> Result<Vec<SegmentMatch>> {
    config.validate()?;
    let mut remaining: Vec<MatchCandidate> = cands.to_vec();
    remaining.sort_by(by_time);
    let mut blocked: Vec<(Interval, Interval)> = Vec::new();
    let mut out = Vec::new();
    while out.len() < config.max_segments && !remaining.is_empty() {
        let net = build_network_blocked(&remaining, config.max_gap_s, &blocked);
        let path_idx = best_path_indices(&net);
        if path_idx.len() >= config.min_path_len {
            let seg = to_segment(&best_path(&net));
            let (qs, rs) = (seg.query(), seg.reference());
            remaining.retain(|c| !qs.contains(c.q_time) && !rs.contains(c.r_time));
            blocked.push((qs, rs));
            out.push(seg);
        } else {
            let mut drop = path_idx;
            drop.sort_unstable();
            for i in drop.into_iter().rev() {
                remaining.remove(i);
            }
        }
    }
    Ok(out)
}

pub fn localize(q: &VideoDescriptorSet, r: &VideoDescriptorSet, config: &LocalizeConfig) -> Result<Vec<SegmentMatch>> {
    config.validate()?;
    localize_candidates(&candidates(q, r, config.candidate_threshold)?, config)
}

/// A localized segment together with the video pair it belongs to.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictedSegment {
    pub query_video_id: String,
    pub ref_video_id: String,
    pub segment: SegmentMatch,
}

/// Descending score, then ids, then query start.
fn prediction_order(a: &PredictedSegment, b: &PredictedSegment) -> Ordering {
    b.segment
        .score
        .total_cmp(&a.segment.score)
        .then_with(|| a.query_video_id.cmp(&b.query_video_id))
        .then_with(|| a.ref_video_id.cmp(&b.ref_video_id))
        .then_with(|| a.segment.q_start.total_cmp(&b.segment.q_start))
        .then_with(|| a.segment.r_start.total_cmp(&b.segment.r_start))
}

/// Localize every query against every reference.
pub fn localize_all(
    queries: &[VideoDescriptorSet],
    refs: &[VideoDescriptorSet],
    config: &LocalizeConfig,
) -> Result<Vec<PredictedSegment>> {
    let mut out = Vec::new();
    for q in queries {
        for r in refs {
            for segment in localize(q, r, config)? {
                out.push(PredictedSegment {
                    query_video_id: q.video_id.clone(),
                    ref_video_id: r.video_id.clone(),
                    segment,
                });
            }
        }
    }
    out.sort_by(prediction_order);
    Ok(out)
}

pub const MATCH_IOU: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MatchingMetrics {
    pub recall: f64,
    pub micro_ap: f64,
    pub true_positives: usize,
}

/// Greedy matching by descending score. A prediction is a hit when both its
/// query and reference intervals reach IoU 0.5 with a still-unclaimed ground
/// truth segment of the same video pair; it claims the best such segment.
pub fn matching_eval(predicted: &[PredictedSegment], gt: &[GtVideoPair]) -> Result<MatchingMetrics> {
    if gt.is_empty() {
        return Err(FcplError::EmptyGroundTruth);
    }
    let mut ranked: Vec<&PredictedSegment> = predicted.iter().collect();
    ranked.sort_by(|a, b| prediction_order(a, b));
    let mut claimed = vec![false; gt.len()];
    let mut labels = Vec::with_capacity(ranked.len());
    for p in ranked {
        let mut hit: Option<(usize, f64)> = None;
        for (i, g) in gt.iter().enumerate() {
            if claimed[i] || g.query_video_id != p.query_video_id || g.ref_video_id != p.ref_video_id {
                continue;
            }
            let q_iou = p.segment.query().iou(&g.q_interval);
            let r_iou = p.segment.reference().iou(&g.r_interval);
            let overlap = q_iou.min(r_iou);
            if overlap >= MATCH_IOU && hit.is_none_or(|(_, best)| overlap > best) {
                hit = Some((i, overlap));
            }
        }
        if let Some((i, _)) = hit {
            claimed[i] = true;
        }
        labels.push(hit.is_some());
    }
    let true_positives = labels.iter().filter(|&&l| l).count();
    Ok(MatchingMetrics {
        recall: true_positives as f64 / gt.len() as f64,
        micro_ap: average_precision(&labels, gt.len())?,
        true_positives,
    })
}

/// Columns: query_id, ref_id, q_start, q_end, r_start, r_end, score.
pub fn write_matches(path: &Path, predicted: &[PredictedSegment]) -> Result<()> {
    let mut sorted: Vec<&PredictedSegment> = predicted.iter().collect();
    sorted.sort_by(|a, b| prediction_order(a, b));
    let mut s = String::new();
    for p in sorted {
        let m = &p.segment;
        writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            p.query_video_id, p.ref_video_id, m.q_start, m.q_end, m.r_start, m.r_end, m.score
        )
        .unwrap();
    }
    write_text(path, &s)
}

/// Path lengths are not stored in the file and read back as 0.
pub fn read_matches(path: &Path) -> Result<Vec<PredictedSegment>> {
    read_tsv(path)?
        .into_iter()
        .map(|(line, cols)| {
            expect_columns(path, line, &cols, 7)?;
            let f = |i: usize| parse_field::<f64>(path, line, &cols[i]);
            let segment = SegmentMatch {
                q_start: f(2)?,
                q_end: f(3)?,
                r_start: f(4)?,
                r_end: f(5)?,
                score: f(6)?,
                path_len: 0,
            };
            if segment.query().is_empty() || segment.reference().is_empty() || !segment.score.is_finite() {
                return Err(FcplError::corrupt(path, format!("line {line}: invalid segment")));
            }
            Ok(PredictedSegment {
                query_video_id: cols[0].clone(),
                ref_video_id: cols[1].clone(),
                segment,
            })
        })
        .collect()
}
