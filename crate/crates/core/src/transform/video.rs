use rand::Rng;

use super::dataset::ChainSampler;
use super::image::{Image, DEFAULT_HEIGHT, DEFAULT_WIDTH};
use super::ops::{apply_chain, TransformSpec};
use super::synth::synthesize;
use crate::error::{FcplError, Result};
use crate::segment::{GtVideoPair, Interval, SegmentMatch};
use crate::seed;

const REF_STREAM: u64 = 0x01DE_0001;
const QUERY_STREAM: u64 = 0x01DE_0002;
const DISTRACTOR_STREAM: u64 = 0x01DE_0003;
const PLAN_STREAM: u64 = 0x01DE_0004;

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub timestamp: f64,
    pub image: Image,
}

/// Provenance of a copied segment inside a query video.
#[derive(Clone, Debug, PartialEq)]
pub struct PlantedSegment {
    pub source_video_id: String,
    pub source: Interval,
    pub own: Interval,
    pub chain: Vec<TransformSpec>,
}

/// A video as a uniformly sampled frame sequence; frame `k` sits at `k / fps`.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticVideo {
    pub video_id: String,
    pub fps: f64,
    pub frames: Vec<Frame>,
    pub planted_segments: Vec<PlantedSegment>,
}

impl SyntheticVideo {
    pub fn len_s(&self) -> f64 {
        self.frames.len() as f64 / self.fps
    }

    pub fn frame_index(&self, t: f64) -> Option<usize> {
        let idx = (t * self.fps).round();
        (idx >= 0.0 && (idx as usize) < self.frames.len()).then_some(idx as usize)
    }

    /// Index of the frame whose timestamp is closest to `t`, clamped to the
    /// video.
    pub fn nearest_frame(&self, t: f64) -> usize {
        let idx = (t * self.fps).round().max(0.0) as usize;
        idx.min(self.frames.len().saturating_sub(1))
    }

    /// Frame index range `[first, last]` covered by `interval`, or an error
    /// if it does not fit inside the video.
    pub fn index_span(&self, interval: &Interval) -> Result<(usize, usize)> {
        let oob = || FcplError::IntervalOutOfBounds {
            start: interval.start,
            end: interval.end,
            len_s: self.len_s(),
        };
        if !(interval.start.is_finite() && interval.end.is_finite()) || interval.end < interval.start {
            return Err(oob());
        }
        let first = (interval.start * self.fps).round();
        let last = (interval.end * self.fps).round();
        if first < 0.0 || last >= self.frames.len() as f64 {
            return Err(oob());
        }
        Ok((first as usize, last as usize))
    }
}

fn timestamps(len_s: f64, fps: f64) -> Result<Vec<f64>> {
    if !(fps > 0.0 && fps.is_finite()) || !(len_s > 0.0 && len_s.is_finite()) {
        return Err(FcplError::InvalidArgument(format!(
            "video length {len_s} s at {fps} fps is not renderable"
        )));
    }
    let n = (len_s * fps).round() as usize;
    Ok((0..n).map(|k| k as f64 / fps).collect())
}

/// A video of unrelated synthesized frames.
pub fn render_video(
    video_id: &str,
    len_s: f64,
    fps: f64,
    seed: u64,
    width: usize,
    height: usize,
) -> Result<SyntheticVideo> {
    let frames = timestamps(len_s, fps)?
        .into_iter()
        .enumerate()
        .map(|(k, timestamp)| Frame {
            timestamp,
            image: synthesize(seed, k as u64, width, height),
        })
        .collect();
    Ok(SyntheticVideo {
        video_id: video_id.to_string(),
        fps,
        frames,
        planted_segments: Vec::new(),
    })
}

/// Where a segment is copied from and to. Both intervals must span the same
/// number of frames.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CopySpec {
    pub ref_interval: Interval,
    pub query_interval: Interval,
}

impl CopySpec {
    pub fn new(ref_interval: Interval, query_interval: Interval) -> Self {
        CopySpec {
            ref_interval,
            query_interval,
        }
    }
}

/// A segment to plant: frames of `source` in `copy.ref_interval`, edited by
/// `chain`, overwrite the query frames in `copy.query_interval`. The whole
/// segment shares one edit seed, so e.g. a crop window stays put.
#[derive(Clone, Debug)]
pub struct Plant<'a> {
    pub source: &'a SyntheticVideo,
    pub copy: CopySpec,
    pub chain: Vec<TransformSpec>,
    pub rng_seed: u64,
}

/// Render a query video of unrelated frames, then overwrite the planted
/// segments. Returns the video and one ground-truth match per plant.
pub fn render_query(
    video_id: &str,
    len_s: f64,
    fps: f64,
    plants: &[Plant<'_>],
    seed: u64,
) -> Result<(SyntheticVideo, Vec<SegmentMatch>)> {
    let first = plants.first().map(|p| &p.source.frames[0].image);
    let (w, h) = first.map_or((DEFAULT_WIDTH, DEFAULT_HEIGHT), |img| (img.width(), img.height()));
    let mut video = render_video(video_id, len_s, fps, seed, w, h)?;
    let mut truth = Vec::with_capacity(plants.len());
    for plant in plants {
        if (plant.source.fps - fps).abs() > 1e-12 {
            return Err(FcplError::InvalidArgument(format!(
                "source video {} is at {} fps, query at {fps}",
                plant.source.video_id, plant.source.fps
            )));
        }
        let (r0, r1) = plant.source.index_span(&plant.copy.ref_interval)?;
        let (q0, q1) = video.index_span(&plant.copy.query_interval)?;
        if r1 - r0 != q1 - q0 {
            return Err(FcplError::InvalidArgument(format!(
                "copied intervals {} and {} differ in length",
                plant.copy.ref_interval, plant.copy.query_interval
            )));
        }
        for offset in 0..=(q1 - q0) {
            let src = &plant.source.frames[r0 + offset].image;
            video.frames[q0 + offset].image = apply_chain(src, &plant.chain, plant.rng_seed);
        }
        let own = Interval::new(video.frames[q0].timestamp, video.frames[q1].timestamp);
        let source = Interval::new(plant.source.frames[r0].timestamp, plant.source.frames[r1].timestamp);
        video.planted_segments.push(PlantedSegment {
            source_video_id: plant.source.video_id.clone(),
            source,
            own,
            chain: plant.chain.clone(),
        });
        truth.push(SegmentMatch {
            q_start: own.start,
            q_end: own.end,
            r_start: source.start,
            r_end: source.end,
            score: 1.0,
            path_len: q1 - q0 + 1,
        });
    }
    Ok((video, truth))
}

/// Reference video, query video with one copied segment, and the ground
/// truth for that segment.
pub fn render_video_pair(
    ref_len_s: f64,
    query_len_s: f64,
    copy: CopySpec,
    fps: f64,
    transform_chain: &[TransformSpec],
    seed: u64,
) -> Result<(SyntheticVideo, SyntheticVideo, SegmentMatch)> {
    let reference = render_video(
        "ref",
        ref_len_s,
        fps,
        seed::derive(seed, REF_STREAM),
        DEFAULT_WIDTH,
        DEFAULT_HEIGHT,
    )?;
    let plant = Plant {
        source: &reference,
        copy,
        chain: transform_chain.to_vec(),
        rng_seed: seed::derive(seed, PLAN_STREAM),
    };
    let (query, mut truth) = render_query("query", query_len_s, fps, &[plant], seed::derive(seed, QUERY_STREAM))?;
    let gt = truth.pop().expect("one plant gives one match");
    Ok((reference, query, gt))
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkConfig {
    pub num_refs: usize,
    pub num_positive: usize,
    pub num_distractors: usize,
    pub video_len_s: f64,
    pub fps: f64,
    /// Copied segment length in seconds, inclusive range.
    pub copy_len_s: (f64, f64),
    pub sampler: ChainSampler,
    pub width: usize,
    pub height: usize,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            num_refs: 50,
            num_positive: 50,
            num_distractors: 50,
            video_len_s: 10.0,
            fps: 1.0,
            copy_len_s: (3.0, 6.0),
            sampler: ChainSampler::new((1, 2), super::ops::TransformFamily::ALL.to_vec())
                .expect("static sampler"),
            width: DEFAULT_WIDTH,
            height: DEFAULT_HEIGHT,
        }
    }
}

/// Reference corpus plus positive and distractor queries.
#[derive(Clone, Debug)]
pub struct VideoBenchmark {
    pub refs: Vec<SyntheticVideo>,
    pub queries: Vec<SyntheticVideo>,
    pub ground_truth: Vec<GtVideoPair>,
}

pub fn build_video_benchmark(config: &BenchmarkConfig, seed: u64) -> Result<VideoBenchmark> {
    config.sampler.validate()?;
    if config.num_positive > 0 && config.num_refs == 0 {
        return Err(FcplError::InvalidArgument("positive queries need references".into()));
    }
    let refs = (0..config.num_refs)
        .map(|j| {
            render_video(
                &format!("R{j:04}"),
                config.video_len_s,
                config.fps,
                seed::derive2(seed, REF_STREAM, j as u64),
                config.width,
                config.height,
            )
        })
        .collect::<Result<Vec<_>>>()?;

    let mut queries = Vec::with_capacity(config.num_positive + config.num_distractors);
    let mut ground_truth = Vec::with_capacity(config.num_positive);
    let n_frames = (config.video_len_s * config.fps).round() as usize;
    for i in 0..config.num_positive {
        let mut rng = seed::rng(seed::derive2(seed, PLAN_STREAM, i as u64));
        let source = &refs[i % refs.len()];
        let (lo, hi) = config.copy_len_s;
        let len_s: f64 = if hi > lo { rng.random_range(lo..=hi) } else { lo };
        let span = ((len_s * config.fps).round() as usize).clamp(1, n_frames);
        let r0 = rng.random_range(0..=n_frames - span);
        let q0 = rng.random_range(0..=n_frames - span);
        let to_interval = |start: usize| {
            Interval::new(start as f64 / config.fps, (start + span - 1) as f64 / config.fps)
        };
        let plant = Plant {
            source,
            copy: CopySpec::new(to_interval(r0), to_interval(q0)),
            chain: config.sampler.sample(&mut rng),
            rng_seed: rng.random(),
        };
        let query_id = format!("Q{i:04}");
        let (video, truth) = render_query(
            &query_id,
            config.video_len_s,
            config.fps,
            std::slice::from_ref(&plant),
            seed::derive2(seed, QUERY_STREAM, i as u64),
        )?;
        for m in truth {
            ground_truth.push(GtVideoPair {
                query_video_id: query_id.clone(),
                ref_video_id: source.video_id.clone(),
                q_interval: m.query(),
                r_interval: m.reference(),
            });
        }
        queries.push(video);
    }
    for i in 0..config.num_distractors {
        queries.push(render_video(
            &format!("Q{:04}", config.num_positive + i),
            config.video_len_s,
            config.fps,
            seed::derive2(seed, DISTRACTOR_STREAM, i as u64),
            config.width,
            config.height,
        )?);
    }
    Ok(VideoBenchmark {
        refs,
        queries,
        ground_truth,
    })
}
