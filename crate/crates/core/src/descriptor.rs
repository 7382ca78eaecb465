//! Per-frame video descriptors, the multi-model ensemble and the FDS1
//! descriptor file.

use std::path::Path;

use crate::codec::{Reader, Writer};
use crate::error::{FcplError, Result};
use crate::net::{forward_many, l2_normalize, NetworkParams};
use crate::transform::{Image, SyntheticVideo};

const MAGIC: &[u8; 4] = b"FDS1";
const VERSION: u32 = 1;
pub const DESCRIPTOR_EXT: &str = "fds";

/// A unit-length frame descriptor.
#[derive(Clone, Debug, PartialEq)]
pub struct Descriptor(Vec<f32>);

impl Descriptor {
    /// Normalize `values` to unit length, rejecting zero vectors.
    pub fn from_raw(values: &[f64]) -> Result<Self> {
        Ok(Descriptor(l2_normalize(values)?.into_iter().map(|v| v as f32).collect()))
    }

    /// Wrap values that are already unit length (within 1e-4).
    pub fn from_unit(values: Vec<f32>) -> Result<Self> {
        let n = values.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt();
        if (n - 1.0).abs() > 1e-4 {
            return Err(FcplError::InvalidArgument(format!("descriptor norm {n} is not 1")));
        }
        Ok(Descriptor(values))
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VideoDescriptorSet {
    pub video_id: String,
    pub entries: Vec<(f64, Descriptor)>,
}

impl VideoDescriptorSet {
    pub fn new(video_id: impl Into<String>, entries: Vec<(f64, Descriptor)>) -> Result<Self> {
        let set = VideoDescriptorSet {
            video_id: video_id.into(),
            entries,
        };
        set.validate().map_err(FcplError::InvalidArgument)?;
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.entries.first().map_or(0, |(_, d)| d.dim())
    }

    pub fn timestamps(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries.iter().map(|(t, _)| *t)
    }

    fn validate(&self) -> std::result::Result<(), String> {
        let dim = self.dim();
        for (i, (t, d)) in self.entries.iter().enumerate() {
            if !t.is_finite() {
                return Err(format!("timestamp {t} at entry {i} is not finite"));
            }
            if i > 0 && *t <= self.entries[i - 1].0 {
                return Err(format!("timestamps not strictly increasing at entry {i}"));
            }
            if d.dim() != dim {
                return Err(format!("entry {i} has dim {}, expected {dim}", d.dim()));
            }
        }
        Ok(())
    }
}

/// One normalized descriptor per frame. A frame whose embedding has zero
/// norm aborts extraction with `DegenerateNorm`.
pub fn extract_video(model: &NetworkParams, video: &SyntheticVideo) -> Result<VideoDescriptorSet> {
    let images: Vec<&Image> = video.frames.iter().map(|f| &f.image).collect();
    let raw = forward_many(model, &images)?;
    let mut entries = Vec::with_capacity(raw.len());
    for (frame, emb) in video.frames.iter().zip(raw) {
        let d = Descriptor::from_raw(emb.as_slice())?;
        entries.push((frame.timestamp, d));
    }
    Ok(VideoDescriptorSet {
        video_id: video.video_id.clone(),
        entries,
    })
}

/// Per-frame mean of the members' descriptors, renormalized. Summation
/// follows the slice order.
pub fn ensemble(sets: &[VideoDescriptorSet]) -> Result<VideoDescriptorSet> {
    let first = sets
        .first()
        .ok_or_else(|| FcplError::MismatchedSets("no descriptor sets to ensemble".into()))?;
    for s in &sets[1..] {
        if s.video_id != first.video_id {
            return Err(FcplError::MismatchedSets(format!(
                "video ids differ: {} vs {}",
                first.video_id, s.video_id
            )));
        }
        if s.len() != first.len() || s.timestamps().zip(first.timestamps()).any(|(a, b)| a.to_bits() != b.to_bits()) {
            return Err(FcplError::MismatchedSets(format!("{}: timestamps differ", first.video_id)));
        }
        if s.dim() != first.dim() {
            return Err(FcplError::MismatchedSets(format!(
                "{}: dims differ ({} vs {})",
                first.video_id,
                first.dim(),
                s.dim()
            )));
        }
    }
    let n = sets.len() as f64;
    let mut entries = Vec::with_capacity(first.len());
    for (i, (t, _)) in first.entries.iter().enumerate() {
        let mut acc = vec![0.0f64; first.dim()];
        for s in sets {
            for (a, &v) in acc.iter_mut().zip(s.entries[i].1.values()) {
                *a += v as f64;
            }
        }
        acc.iter_mut().for_each(|a| *a /= n);
        let d = Descriptor::from_raw(&acc).map_err(|_| {
            FcplError::MismatchedSets(format!("{}: member descriptors cancel at {t} s", first.video_id))
        })?;
        entries.push((*t, d));
    }
    Ok(VideoDescriptorSet {
        video_id: first.video_id.clone(),
        entries,
    })
}

/// Ensemble sets keyed by model id; members are summed in ascending id order
/// so the result does not depend on the input order.
pub fn ensemble_by_model(sets: &[(String, VideoDescriptorSet)]) -> Result<VideoDescriptorSet> {
    let mut sorted: Vec<&(String, VideoDescriptorSet)> = sets.iter().collect();
    sorted.sort_by(|a, b| a.0.cmp(&b.0));
    let members: Vec<VideoDescriptorSet> = sorted.into_iter().map(|(_, s)| s.clone()).collect();
    ensemble(&members)
}

pub fn save(set: &VideoDescriptorSet, path: &Path) -> Result<()> {
    let id = set.video_id.as_bytes();
    let mut w = Writer::new();
    w.bytes(MAGIC)
        .u32(VERSION)
        .u32(id.len() as u32)
        .bytes(id)
        .u32(set.dim() as u32)
        .u32(set.len() as u32);
    for (t, d) in &set.entries {
        w.f64(*t).f32s(d.values().iter().copied());
    }
    w.finish(path)
}

pub fn load(path: &Path) -> Result<VideoDescriptorSet> {
    let mut r = Reader::open(path)?;
    r.magic(MAGIC)?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(r.corrupt(format!("unsupported version {version}")));
    }
    let id_len = r.u32()? as usize;
    let video_id = String::from_utf8(r.take(id_len)?.to_vec()).map_err(|_| r.corrupt("video id is not utf-8"))?;
    let dim = r.u32()? as usize;
    let count = r.u32()? as usize;
    let record = 8 + 4 * dim;
    if r.remaining() != count * record {
        return Err(r.corrupt(format!(
            "expected {count} records of dim {dim} ({} bytes), found {} bytes",
            count * record,
            r.remaining()
        )));
    }
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let t = r.f64()?;
        let values = r.f32s(dim)?;
        let d = Descriptor::from_unit(values).map_err(|e| r.corrupt(e.to_string()))?;
        entries.push((t, d));
    }
    r.expect_end()?;
    let set = VideoDescriptorSet { video_id, entries };
    set.validate().map_err(|reason| r.corrupt(reason))?;
    Ok(set)
}

pub fn file_name(video_id: &str) -> String {
    format!("{video_id}.{DESCRIPTOR_EXT}")
}

/// Load every `*.fds` file in `dir`, sorted by video id.
pub fn load_dir(dir: &Path) -> Result<Vec<VideoDescriptorSet>> {
    let entries = std::fs::read_dir(dir).map_err(|e| FcplError::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| FcplError::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == DESCRIPTOR_EXT) {
            paths.push(path);
        }
    }
    let mut sets = paths.iter().map(|p| load(p)).collect::<Result<Vec<_>>>()?;
    sets.sort_by(|a, b| a.video_id.cmp(&b.video_id));
    Ok(sets)
}

pub fn save_dir(sets: &[VideoDescriptorSet], dir: &Path) -> Result<()> {
    crate::codec::create_dir(dir)?;
    for s in sets {
        save(s, &dir.join(file_name(&s.video_id)))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(id: &str, rows: &[(f64, &[f64])]) -> VideoDescriptorSet {
        VideoDescriptorSet::new(
            id,
            rows.iter().map(|(t, v)| (*t, Descriptor::from_raw(v).unwrap())).collect(),
        )
        .unwrap()
    }

    #[test]
    fn ensemble_arithmetic() {
        let a = set("v", &[(0.0, &[1.0, 0.0])]);
        let b = set("v", &[(0.0, &[0.0, 1.0])]);
        let e = ensemble(&[a.clone(), b]).unwrap();
        let h = (0.5f64).sqrt() as f32;
        assert_eq!(e.entries[0].1.values(), &[h, h]);
        assert_eq!(ensemble(std::slice::from_ref(&a)).unwrap(), a);
        assert_eq!(ensemble(&[a.clone(), a.clone()]).unwrap(), a);
    }

    #[test]
    fn ensemble_rejects_mismatch() {
        let a = set("v", &[(0.0, &[1.0, 0.0])]);
        let other_id = set("w", &[(0.0, &[1.0, 0.0])]);
        let other_time = set("v", &[(1.0, &[1.0, 0.0])]);
        let other_dim = set("v", &[(0.0, &[1.0, 0.0, 0.0])]);
        let opposite = set("v", &[(0.0, &[-1.0, 0.0])]);
        for b in [other_id, other_time, other_dim, opposite] {
            assert!(matches!(ensemble(&[a.clone(), b]), Err(FcplError::MismatchedSets(_))));
        }
        assert!(ensemble(&[]).is_err());
    }

    #[test]
    fn constructor_rejects_bad_order() {
        let d = Descriptor::from_raw(&[1.0]).unwrap();
        assert!(VideoDescriptorSet::new("v", vec![(1.0, d.clone()), (1.0, d)]).is_err());
    }
}
