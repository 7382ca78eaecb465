use fcpl::descriptor::{ensemble, ensemble_by_model, extract_video, load, save, Descriptor, VideoDescriptorSet};
use fcpl::net::{init_params, NetDims};
use fcpl::transform::render_video;
use fcpl::FcplError;
use proptest::prelude::*;

fn random_set(id: &str, n: usize, dim: usize, seed: u64) -> VideoDescriptorSet {
    use rand::Rng;
    let mut rng = fcpl::seed::rng(seed);
    let entries = (0..n)
        .map(|i| {
            let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            (i as f64 * 0.5, Descriptor::from_raw(&v).unwrap())
        })
        .collect();
    VideoDescriptorSet::new(id, entries).unwrap()
}

#[test]
fn extract_gives_one_unit_descriptor_per_frame() {
    let params = init_params(1, NetDims::default()).unwrap();
    let video = render_video("v", 10.0, 1.0, 3, 32, 32).unwrap();
    let set = extract_video(&params, &video).unwrap();
    assert_eq!(set.len(), 10);
    let times: Vec<f64> = set.timestamps().collect();
    let expected: Vec<f64> = video.frames.iter().map(|f| f.timestamp).collect();
    assert_eq!(times, expected);
    for (_, d) in &set.entries {
        let n: f64 = d.values().iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-6);
    }
    assert_eq!(extract_video(&params, &video).unwrap(), set);
}

#[test]
fn zero_network_is_degenerate() {
    let params = fcpl::net::NetworkParams::zeros(NetDims::default());
    let video = render_video("v", 2.0, 1.0, 3, 32, 32).unwrap();
    assert!(matches!(extract_video(&params, &video), Err(FcplError::DegenerateNorm { .. })));
}

#[test]
fn scaling_raw_embeddings_leaves_descriptors_unchanged() {
    let mut params = init_params(1, NetDims::default()).unwrap();
    let video = render_video("v", 5.0, 1.0, 4, 32, 32).unwrap();
    let before = extract_video(&params, &video).unwrap();
    params.w2.mapv_inplace(|w| w * 7.5);
    params.b2.mapv_inplace(|b| b * 7.5);
    let after = extract_video(&params, &video).unwrap();
    for ((_, a), (_, b)) in before.entries.iter().zip(&after.entries) {
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() < 1e-7);
        }
    }
}

#[test]
fn ensemble_is_order_independent_by_model_id() {
    let sets: Vec<(String, VideoDescriptorSet)> =
        (0..4).map(|m| (format!("m{m}"), random_set("v", 6, 16, m))).collect();
    let forward = ensemble_by_model(&sets).unwrap();
    let mut reversed = sets.clone();
    reversed.reverse();
    assert_eq!(ensemble_by_model(&reversed).unwrap(), forward);
    let plain: Vec<VideoDescriptorSet> = sets.into_iter().map(|(_, s)| s).collect();
    assert_eq!(ensemble(&plain).unwrap(), forward);
}

fn write_bytes(dir: &tempfile::TempDir, name: &str, bytes: &[u8]) -> std::path::PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, bytes).unwrap();
    p
}

#[test]
fn corrupt_files_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let set = random_set("video-7", 5, 8, 1);
    let good = dir.path().join("good.fds");
    save(&set, &good).unwrap();
    let bytes = std::fs::read(&good).unwrap();

    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    let truncated = &bytes[..bytes.len() - 3];
    // Header claims dim 9 while records hold 8 values.
    let mut wrong_dim = bytes.clone();
    let dim_at = 4 + 4 + 4 + "video-7".len();
    wrong_dim[dim_at..dim_at + 4].copy_from_slice(&9u32.to_le_bytes());
    // Swap the first two records' timestamps.
    let mut shuffled = bytes.clone();
    let rec0 = dim_at + 8;
    let rec1 = rec0 + 8 + 4 * 8;
    let t0: [u8; 8] = shuffled[rec0..rec0 + 8].try_into().unwrap();
    let t1: [u8; 8] = shuffled[rec1..rec1 + 8].try_into().unwrap();
    shuffled[rec0..rec0 + 8].copy_from_slice(&t1);
    shuffled[rec1..rec1 + 8].copy_from_slice(&t0);

    for (name, data) in [
        ("magic", &bad_magic[..]),
        ("trunc", truncated),
        ("dim", &wrong_dim[..]),
        ("order", &shuffled[..]),
        ("empty", &[][..]),
    ] {
        let p = write_bytes(&dir, name, data);
        match load(&p) {
            Err(FcplError::CorruptFile { path, .. }) => assert_eq!(path, p),
            other => panic!("{name}: expected CorruptFile, got {other:?}"),
        }
    }
    assert_eq!(load(&good).unwrap(), set);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn save_load_round_trip(n in 0usize..12, dim in 1usize..24, seed in any::<u64>(), id in "[a-zA-Z0-9_-]{0,12}") {
        let dir = tempfile::tempdir().unwrap();
        let set = random_set(&id, n, dim, seed);
        let path = dir.path().join("x.fds");
        save(&set, &path).unwrap();
        let back = load(&path).unwrap();
        prop_assert_eq!(back.video_id.clone(), set.video_id.clone());
        prop_assert_eq!(back.len(), set.len());
        for ((ta, a), (tb, b)) in back.entries.iter().zip(&set.entries) {
            prop_assert_eq!(ta.to_bits(), tb.to_bits());
            let ab: Vec<u32> = a.values().iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u32> = b.values().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(ab, bb);
        }
    }
}
