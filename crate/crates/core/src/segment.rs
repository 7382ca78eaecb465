use std::fmt;

/// Closed time interval in seconds. Endpoints are frame timestamps, so a
/// segment covering frames at 1, 2, ..., 5 s is `[1, 5]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Interval {
    pub start: f64,
    pub end: f64,
}

impl Interval {
    pub fn new(start: f64, end: f64) -> Self {
        Interval { start, end }
    }

    pub fn len(&self) -> f64 {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end < self.start
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.start && t <= self.end
    }

    pub fn overlaps(&self, other: &Interval) -> bool {
        self.start <= other.end && other.start <= self.end
    }

    /// Temporal intersection-over-union. Two identical degenerate intervals
    /// (single instants) have IoU 1.
    pub fn iou(&self, other: &Interval) -> f64 {
        let inter = (self.end.min(other.end) - self.start.max(other.start)).max(0.0);
        let union = self.end.max(other.end) - self.start.min(other.start);
        if union <= 0.0 {
            if self.start == other.start {
                1.0
            } else {
                0.0
            }
        } else {
            inter / union
        }
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.start, self.end)
    }
}

/// An aligned pair of query/reference intervals with a confidence score.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentMatch {
    pub q_start: f64,
    pub q_end: f64,
    pub r_start: f64,
    pub r_end: f64,
    pub score: f64,
    pub path_len: usize,
}

impl SegmentMatch {
    pub fn query(&self) -> Interval {
        Interval::new(self.q_start, self.q_end)
    }

    pub fn reference(&self) -> Interval {
        Interval::new(self.r_start, self.r_end)
    }
}

/// A labelled copy: `q_interval` of the query video reproduces `r_interval`
/// of the reference video at constant playback rate.
#[derive(Clone, Debug, PartialEq)]
pub struct GtVideoPair {
    pub query_video_id: String,
    pub ref_video_id: String,
    pub q_interval: Interval,
    pub r_interval: Interval,
}
