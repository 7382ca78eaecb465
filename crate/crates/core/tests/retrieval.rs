mod common;

use fcpl::descriptor::{Descriptor, VideoDescriptorSet};
use fcpl::retrieval::*;
use proptest::prelude::*;

fn set_from(id: &str, rows: &[Vec<f64>]) -> VideoDescriptorSet {
    let entries = rows
        .iter()
        .enumerate()
        .map(|(i, r)| (i as f64, Descriptor::from_raw(r).unwrap()))
        .collect();
    VideoDescriptorSet::new(id, entries).unwrap()
}

fn vec_strategy(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, dim).prop_filter("non-zero", |v| v.iter().any(|x| x.abs() > 1e-3))
}

fn video_strategy(dim: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(vec_strategy(dim), 1..5)
}

/// Ranked list with scores drawn from few levels, labels and extra
/// unranked positives.
fn ranked_strategy() -> impl Strategy<Value = (Vec<(u8, bool)>, usize)> {
    (prop::collection::vec((0u8..4, any::<bool>()), 0..30), 0usize..3)
}

fn build(items: &[(u8, bool)], missing: usize, map: impl Fn(f64) -> f64) -> (Vec<RankedPair>, GroundTruthIndex, Vec<bool>) {
    let mut items = items.to_vec();
    items.sort_by_key(|x| std::cmp::Reverse(x.0));
    let mut gt = Vec::new();
    let mut ranked = Vec::new();
    for (i, &(level, positive)) in items.iter().enumerate() {
        let (q, r) = (format!("q{i}"), format!("r{i}"));
        if positive {
            gt.push((q.clone(), r.clone()));
        }
        ranked.push(RankedPair::new(q, r, map(level as f64)));
    }
    for m in 0..=missing {
        gt.push((format!("absent{m}"), "r".to_string()));
    }
    let labels = items.iter().map(|x| x.1).collect();
    (ranked, GroundTruthIndex::new(gt), labels)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn micro_ap_matches_brute_force((items, missing) in ranked_strategy()) {
        let (ranked, gt, labels) = build(&items, missing, |s| s);
        let got = micro_ap(&ranked, &gt).unwrap();
        prop_assert!((got - common::brute_force_ap(&labels, gt.len())).abs() <= 1e-9);
        prop_assert!((0.0..=1.0).contains(&got));
    }

    #[test]
    fn micro_ap_ignores_monotone_rescoring((items, missing) in ranked_strategy(), a in 0.1f64..10.0, b in -5.0f64..5.0) {
        let (plain, gt, _) = build(&items, missing, |s| s);
        let (mapped, _, _) = build(&items, missing, |s| (a * s + b).exp());
        prop_assert_eq!(micro_ap(&plain, &gt).unwrap(), micro_ap(&mapped, &gt).unwrap());
    }

    #[test]
    fn search_all_ranks_every_pair(
        queries in prop::collection::vec(video_strategy(6), 1..4),
        refs in prop::collection::vec(video_strategy(6), 1..5),
    ) {
        let qs: Vec<_> = queries.iter().enumerate().map(|(i, v)| set_from(&format!("q{i}"), v)).collect();
        let rs: Vec<_> = refs.iter().enumerate().map(|(i, v)| set_from(&format!("r{i}"), v)).collect();
        let ranked = search_all(&qs, &rs, rs.len()).unwrap();
        prop_assert_eq!(ranked.len(), qs.len() * rs.len());
        prop_assert!(ranked.windows(2).all(|w| w[0].score >= w[1].score));
        for p in &ranked {
            let q = qs.iter().find(|s| s.video_id == p.query_video_id).unwrap();
            let r = rs.iter().find(|s| s.video_id == p.ref_video_id).unwrap();
            let mut best = f64::NEG_INFINITY;
            for (_, a) in &q.entries {
                for (_, b) in &r.entries {
                    let dot: f64 = a.values().iter().zip(b.values()).map(|(x, y)| *x as f64 * *y as f64).sum();
                    best = best.max(dot);
                }
            }
            prop_assert!((p.score - best).abs() < 1e-12);
        }
        let top1 = search_all(&qs, &rs, 1).unwrap();
        prop_assert_eq!(top1.len(), qs.len());
    }
}

#[test]
fn shared_frame_outranks_unrelated_video() {
    let q = set_from("q", &[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.2]]);
    let copy = set_from("copy", &[vec![0.3, 0.3, 1.0], vec![0.0, 1.0, 0.2]]);
    let other = set_from("other", &[vec![0.0, 0.0, 1.0], vec![-1.0, 0.1, 0.0]]);
    let ranked = search_all(&[q], &[other, copy], 2).unwrap();
    assert_eq!(ranked[0].ref_video_id, "copy");
    assert!((ranked[0].score - 1.0).abs() < 1e-6);
    let gt = GroundTruthIndex::new([("q", "copy")]);
    assert_eq!(micro_ap(&ranked, &gt).unwrap(), 1.0);
}

#[test]
fn ranked_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ranked.tsv");
    let ranked = vec![RankedPair::new("a", "b", 0.75), RankedPair::new("a", "c", -0.125)];
    write_ranked(&path, &ranked).unwrap();
    let back = read_ranked(&path).unwrap();
    assert_eq!(back.len(), 2);
    for (x, y) in back.iter().zip(&ranked) {
        assert_eq!((&x.query_video_id, &x.ref_video_id, x.score), (&y.query_video_id, &y.ref_video_id, y.score));
    }
}

#[test]
fn unsorted_or_empty_inputs_are_errors() {
    let gt = GroundTruthIndex::new([("a", "b")]);
    let unsorted = vec![RankedPair::new("a", "c", 0.1), RankedPair::new("a", "b", 0.9)];
    assert!(micro_ap(&unsorted, &gt).is_err());
    let empty = GroundTruthIndex::new(Vec::<(String, String)>::new());
    assert!(matches!(micro_ap(&[], &empty), Err(fcpl::FcplError::EmptyGroundTruth)));
}
