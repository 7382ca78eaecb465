use std::collections::HashMap;

use crate::error::{FcplError, Result};
use crate::segment::GtVideoPair;
use crate::transform::{Image, SyntheticVideo};

/// A positive image pair cut out of a labelled video pair.
#[derive(Clone, Debug, PartialEq)]
pub struct GtImagePair {
    pub query_video_id: String,
    pub ref_video_id: String,
    pub q_time: f64,
    pub r_time: f64,
    pub query_frame: Image,
    pub ref_frame: Image,
}

/// Expand each labelled video pair into per-frame image pairs: every query
/// frame at time `t` inside the query interval is paired with the reference
/// frame nearest to `r_start + (t − q_start)`.
///
/// Interval lengths must agree within one frame period; time-warped copies
/// are rejected.
pub fn extract_gt_image_pairs(
    pairs: &[GtVideoPair],
    query_videos: &[SyntheticVideo],
    ref_videos: &[SyntheticVideo],
) -> Result<Vec<GtImagePair>> {
    let index = |videos: &[SyntheticVideo]| -> HashMap<String, usize> {
        videos.iter().enumerate().map(|(i, v)| (v.video_id.clone(), i)).collect()
    };
    let queries = index(query_videos);
    let refs = index(ref_videos);
    let mut out = Vec::new();
    for pair in pairs {
        let query = queries
            .get(&pair.query_video_id)
            .map(|&i| &query_videos[i])
            .ok_or_else(|| FcplError::MissingVideo(pair.query_video_id.clone()))?;
        let reference = refs
            .get(&pair.ref_video_id)
            .map(|&i| &ref_videos[i])
            .ok_or_else(|| FcplError::MissingVideo(pair.ref_video_id.clone()))?;

        let (q0, q1) = query.index_span(&pair.q_interval)?;
        let (r0, r1) = reference.index_span(&pair.r_interval)?;
        let period = 1.0 / query.fps.min(reference.fps);
        if (pair.q_interval.len() - pair.r_interval.len()).abs() > period + 1e-9 {
            return Err(FcplError::InvalidArgument(format!(
                "{} -> {}: intervals {} and {} differ by more than one frame",
                pair.query_video_id, pair.ref_video_id, pair.q_interval, pair.r_interval
            )));
        }
        for frame in &query.frames[q0..=q1] {
            let target = pair.r_interval.start + (frame.timestamp - pair.q_interval.start);
            let ri = reference.nearest_frame(target).clamp(r0, r1);
            let rframe = &reference.frames[ri];
            out.push(GtImagePair {
                query_video_id: pair.query_video_id.clone(),
                ref_video_id: pair.ref_video_id.clone(),
                q_time: frame.timestamp,
                r_time: rframe.timestamp,
                query_frame: frame.image.clone(),
                ref_frame: rframe.image.clone(),
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segment::Interval;
    use crate::transform::{render_video_pair, CopySpec};

    fn fixture() -> (SyntheticVideo, SyntheticVideo, GtVideoPair) {
        let copy = CopySpec::new(Interval::new(2.0, 6.0), Interval::new(1.0, 5.0));
        let (r, q, gt) = render_video_pair(10.0, 10.0, copy, 1.0, &[], 3).unwrap();
        let pair = GtVideoPair {
            query_video_id: q.video_id.clone(),
            ref_video_id: r.video_id.clone(),
            q_interval: gt.query(),
            r_interval: gt.reference(),
        };
        (r, q, pair)
    }

    #[test]
    fn identity_copy_gives_equal_frames() {
        let (r, q, pair) = fixture();
        let pairs = extract_gt_image_pairs(&[pair], &[q], &[r]).unwrap();
        assert_eq!(pairs.len(), 5);
        let times: Vec<f64> = pairs.iter().map(|p| p.q_time).collect();
        assert_eq!(times, vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        for p in &pairs {
            assert_eq!(p.r_time, p.q_time + 1.0);
            assert_eq!(p.query_frame, p.ref_frame);
        }
        assert!(extract_gt_image_pairs(&[], &[], &[]).unwrap().is_empty());
    }

    #[test]
    fn errors() {
        let (r, q, pair) = fixture();
        let mut missing = pair.clone();
        missing.ref_video_id = "nope".into();
        assert!(matches!(
            extract_gt_image_pairs(&[missing], std::slice::from_ref(&q), std::slice::from_ref(&r)),
            Err(FcplError::MissingVideo(_))
        ));
        let mut oob = pair.clone();
        oob.q_interval = Interval::new(6.0, 12.0);
        oob.r_interval = Interval::new(2.0, 8.0);
        assert!(matches!(
            extract_gt_image_pairs(&[oob], std::slice::from_ref(&q), std::slice::from_ref(&r)),
            Err(FcplError::IntervalOutOfBounds { .. })
        ));
        let mut warped = pair;
        warped.r_interval = Interval::new(2.0, 9.0);
        assert!(extract_gt_image_pairs(&[warped], &[q], &[r]).is_err());
    }
}
