#![allow(dead_code)]

use fcpl::descriptor::{ensemble, extract_video, VideoDescriptorSet};
use fcpl::localization::{MatchCandidate, TemporalNetwork};
use fcpl::net::NetworkParams;
use fcpl::retrieval::{micro_ap, search_all, GroundTruthIndex};
use fcpl::transform::{SyntheticVideo, VideoBenchmark};

/// Frame descriptors of `video` averaged over `models`.
pub fn describe(models: &[&NetworkParams], video: &SyntheticVideo) -> VideoDescriptorSet {
    let sets: Vec<VideoDescriptorSet> = models.iter().map(|m| extract_video(m, video).unwrap()).collect();
    ensemble(&sets).unwrap()
}

/// Descriptor-track micro AP of a model ensemble on a benchmark, ranking
/// every reference for every query.
pub fn benchmark_map(models: &[&NetworkParams], bench: &VideoBenchmark) -> f64 {
    let q: Vec<_> = bench.queries.iter().map(|v| describe(models, v)).collect();
    let r: Vec<_> = bench.refs.iter().map(|v| describe(models, v)).collect();
    let ranked = search_all(&q, &r, r.len().max(1)).unwrap();
    micro_ap(&ranked, &GroundTruthIndex::from_segments(&bench.ground_truth)).unwrap()
}

/// AP recomputed from scratch: precision is recounted over the whole
/// prefix at every positive.
pub fn brute_force_ap(labels: &[bool], total_positives: usize) -> f64 {
    let mut sum = 0.0;
    for k in 0..labels.len() {
        if labels[k] {
            let hits = labels[..=k].iter().filter(|&&l| l).count();
            sum += hits as f64 / (k + 1) as f64;
        }
    }
    sum / total_positives as f64
}

/// Best path by enumerating every path in the network, using the same
/// ranking rule as the solver.
pub fn exhaustive_best_path(net: &TemporalNetwork) -> Vec<usize> {
    fn walk(net: &TemporalNetwork, path: &mut Vec<usize>, best: &mut Option<(f64, Vec<usize>)>) {
        let score = fcpl::localization::path_score(&net.nodes, path);
        let better = match best {
            None => true,
            Some((s, p)) => fcpl::localization::path_better((score, path.len(), path), (*s, p.len(), p)),
        };
        if better {
            *best = Some((score, path.clone()));
        }
        let last = *path.last().unwrap();
        for &v in &net.successors[last] {
            path.push(v);
            walk(net, path, best);
            path.pop();
        }
    }
    let mut best = None;
    for start in 0..net.len() {
        walk(net, &mut vec![start], &mut best);
    }
    best.map(|(_, p)| p).unwrap_or_default()
}

/// Random candidates on a coarse time grid so that ties and shared
/// timestamps are common. `dyadic` scores make every sum exact.
pub fn random_candidates<R: rand::Rng>(rng: &mut R, n: usize, dyadic: bool) -> Vec<MatchCandidate> {
    let mut cands: Vec<MatchCandidate> = (0..n)
        .map(|_| MatchCandidate {
            q_time: rng.random_range(0..8) as f64,
            r_time: rng.random_range(0..8) as f64,
            score: if dyadic {
                rng.random_range(1..8) as f64 / 8.0
            } else {
                rng.random_range(0.5..1.0)
            },
        })
        .collect();
    cands.sort_by(|a, b| a.q_time.total_cmp(&b.q_time).then(a.r_time.total_cmp(&b.r_time)));
    cands
}
