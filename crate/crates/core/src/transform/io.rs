//! On-disk formats for images, datasets, videos and ground truth.
//!
//! * `.img`: magic `IMG1`, u32 width, u32 height, u32 channels, then
//!   `width * height * channels` little-endian f32 pixels.
//! * `manifest.tsv`: `path  class_id  role  chain`, role is `original` or
//!   `copy`, chain as produced by [`format_chain`].
//! * video directory: `<timestamp_ms>.img` frames plus `video.tsv` with
//!   `timestamp_s  file` rows.
//! * `gt.tsv`: `query_id  ref_id  q_start_s  q_end_s  r_start_s  r_end_s`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::dataset::{EditedCopy, TrainingClass};
use super::image::{Image, CHANNELS};
use super::ops::{format_chain, parse_chain};
use super::video::{Frame, SyntheticVideo};
use crate::codec::{self, Reader, Writer};
use crate::error::{FcplError, Result};
use crate::segment::{GtVideoPair, Interval};

pub const MANIFEST: &str = "manifest.tsv";
pub const VIDEO_MANIFEST: &str = "video.tsv";
pub const GT_FILE: &str = "gt.tsv";

pub fn write_image(path: &Path, img: &Image) -> Result<()> {
    Writer::new()
        .bytes(b"IMG1")
        .u32(img.width() as u32)
        .u32(img.height() as u32)
        .u32(img.channels() as u32)
        .f32s(img.pixels().iter().copied())
        .finish(path)
}

pub fn read_image(path: &Path) -> Result<Image> {
    let mut r = Reader::open(path)?;
    r.magic(b"IMG1")?;
    let width = r.u32()? as usize;
    let height = r.u32()? as usize;
    let channels = r.u32()? as usize;
    if channels != CHANNELS {
        return Err(r.corrupt(format!("{channels} channels, expected {CHANNELS}")));
    }
    let pixels = r.f32s(width * height * channels)?;
    r.expect_end()?;
    Image::from_pixels(width, height, pixels).map_err(|e| r.corrupt(e.to_string()))
}

pub fn export_dataset(dir: &Path, classes: &[TrainingClass]) -> Result<()> {
    let images = dir.join("images");
    codec::create_dir(&images)?;
    let mut manifest = String::new();
    for class in classes {
        let name = format!("images/c{:05}_o.img", class.class_id);
        write_image(&dir.join(&name), &class.original)?;
        writeln!(manifest, "{name}\t{}\toriginal\t-", class.class_id).unwrap();
        for (k, copy) in class.copies.iter().enumerate() {
            let name = format!("images/c{:05}_{k:03}.img", class.class_id);
            write_image(&dir.join(&name), &copy.image)?;
            writeln!(manifest, "{name}\t{}\tcopy\t{}", class.class_id, format_chain(&copy.chain)).unwrap();
        }
    }
    codec::write_text(&dir.join(MANIFEST), &manifest)
}

pub fn load_dataset(dir: &Path) -> Result<Vec<TrainingClass>> {
    let manifest = dir.join(MANIFEST);
    let mut originals: BTreeMap<usize, Image> = BTreeMap::new();
    let mut copies: BTreeMap<usize, Vec<EditedCopy>> = BTreeMap::new();
    for (line, cols) in codec::read_tsv(&manifest)? {
        codec::expect_columns(&manifest, line, &cols, 4)?;
        let class_id: usize = codec::parse_field(&manifest, line, &cols[1])?;
        let image = read_image(&dir.join(&cols[0]))?;
        match cols[2].as_str() {
            "original" => {
                if originals.insert(class_id, image).is_some() {
                    return Err(FcplError::corrupt(
                        &manifest,
                        format!("line {line}: class {class_id} has two originals"),
                    ));
                }
            }
            "copy" => {
                let chain = parse_chain(&cols[3])
                    .map_err(|e| FcplError::corrupt(&manifest, format!("line {line}: {e}")))?;
                copies.entry(class_id).or_default().push(EditedCopy { image, chain });
            }
            other => {
                return Err(FcplError::corrupt(&manifest, format!("line {line}: unknown role `{other}`")))
            }
        }
    }
    let mut classes = Vec::with_capacity(originals.len());
    for (expected, (class_id, original)) in originals.into_iter().enumerate() {
        if class_id != expected {
            return Err(FcplError::corrupt(&manifest, format!("class ids are not dense: missing {expected}")));
        }
        let copies = copies.remove(&class_id).unwrap_or_default();
        if copies.is_empty() {
            return Err(FcplError::corrupt(&manifest, format!("class {class_id} has no copies")));
        }
        classes.push(TrainingClass {
            class_id,
            original,
            copies,
        });
    }
    if let Some(orphan) = copies.keys().next() {
        return Err(FcplError::corrupt(&manifest, format!("class {orphan} has copies but no original")));
    }
    Ok(classes)
}

pub fn export_video(dir: &Path, video: &SyntheticVideo) -> Result<PathBuf> {
    let vdir = dir.join(&video.video_id);
    codec::create_dir(&vdir)?;
    let mut manifest = String::new();
    for frame in &video.frames {
        let name = format!("{}.img", (frame.timestamp * 1000.0).round() as u64);
        write_image(&vdir.join(&name), &frame.image)?;
        writeln!(manifest, "{}\t{name}", frame.timestamp).unwrap();
    }
    codec::write_text(&vdir.join(VIDEO_MANIFEST), &manifest)?;
    Ok(vdir)
}

pub fn load_video(vdir: &Path) -> Result<SyntheticVideo> {
    let manifest = vdir.join(VIDEO_MANIFEST);
    let video_id = vdir
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| FcplError::corrupt(vdir, "video directory has no usable name"))?
        .to_string();
    let mut frames: Vec<Frame> = Vec::new();
    for (line, cols) in codec::read_tsv(&manifest)? {
        codec::expect_columns(&manifest, line, &cols, 2)?;
        let timestamp: f64 = codec::parse_field(&manifest, line, &cols[0])?;
        if let Some(prev) = frames.last() {
            if timestamp <= prev.timestamp {
                return Err(FcplError::corrupt(&manifest, format!("line {line}: timestamps not increasing")));
            }
        }
        frames.push(Frame {
            timestamp,
            image: read_image(&vdir.join(&cols[1]))?,
        });
    }
    if frames.is_empty() {
        return Err(FcplError::corrupt(&manifest, "video has no frames"));
    }
    let fps = if frames.len() > 1 {
        1.0 / (frames[1].timestamp - frames[0].timestamp)
    } else {
        1.0
    };
    Ok(SyntheticVideo {
        video_id,
        fps,
        frames,
        planted_segments: Vec::new(),
    })
}

pub fn export_videos(dir: &Path, videos: &[SyntheticVideo]) -> Result<()> {
    codec::create_dir(dir)?;
    for v in videos {
        export_video(dir, v)?;
    }
    Ok(())
}

/// Every subdirectory of `dir` holding a `video.tsv`, sorted by video id.
pub fn load_videos(dir: &Path) -> Result<Vec<SyntheticVideo>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| FcplError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(VIDEO_MANIFEST).is_file())
        .collect();
    dirs.sort();
    dirs.iter().map(|d| load_video(d)).collect()
}

pub fn write_gt(path: &Path, pairs: &[GtVideoPair]) -> Result<()> {
    let mut text = String::new();
    for p in pairs {
        writeln!(
            text,
            "{}\t{}\t{}\t{}\t{}\t{}",
            p.query_video_id, p.ref_video_id, p.q_interval.start, p.q_interval.end, p.r_interval.start, p.r_interval.end
        )
        .unwrap();
    }
    codec::write_text(path, &text)
}

pub fn read_gt(path: &Path) -> Result<Vec<GtVideoPair>> {
    codec::read_tsv(path)?
        .into_iter()
        .map(|(line, cols)| {
            codec::expect_columns(path, line, &cols, 6)?;
            let num = |i: usize| codec::parse_field::<f64>(path, line, &cols[i]);
            Ok(GtVideoPair {
                query_video_id: cols[0].clone(),
                ref_video_id: cols[1].clone(),
                q_interval: Interval::new(num(2)?, num(3)?),
                r_interval: Interval::new(num(4)?, num(5)?),
            })
        })
        .collect()
}
