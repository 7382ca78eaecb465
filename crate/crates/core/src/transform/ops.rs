use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::image::{Image, CHANNELS};
use crate::error::{FcplError, Result};
use crate::seed;

/// The nine edit families used to build training classes and query copies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TransformFamily {
    HorizontalFlip,
    Rotate,
    CropResize,
    Brightness,
    Contrast,
    GaussianBlur,
    AdditiveNoise,
    BlockShuffle,
    Overlay,
}

impl TransformFamily {
    pub const ALL: [TransformFamily; 9] = [
        TransformFamily::HorizontalFlip,
        TransformFamily::Rotate,
        TransformFamily::CropResize,
        TransformFamily::Brightness,
        TransformFamily::Contrast,
        TransformFamily::GaussianBlur,
        TransformFamily::AdditiveNoise,
        TransformFamily::BlockShuffle,
        TransformFamily::Overlay,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TransformFamily::HorizontalFlip => "hflip",
            TransformFamily::Rotate => "rotate",
            TransformFamily::CropResize => "crop",
            TransformFamily::Brightness => "brightness",
            TransformFamily::Contrast => "contrast",
            TransformFamily::GaussianBlur => "blur",
            TransformFamily::AdditiveNoise => "noise",
            TransformFamily::BlockShuffle => "blockshuffle",
            TransformFamily::Overlay => "overlay",
        }
    }

    /// Draw a spec of this family with parameters uniform over the family's
    /// allowed range.
    pub fn sample<R: Rng + ?Sized>(self, rng: &mut R) -> TransformSpec {
        match self {
            TransformFamily::HorizontalFlip => TransformSpec::HorizontalFlip,
            TransformFamily::Rotate => {
                TransformSpec::Rotate([90, 180, 270][rng.random_range(0..3)])
            }
            TransformFamily::CropResize => TransformSpec::CropResize {
                fraction: rng.random_range(0.5..=0.9),
            },
            TransformFamily::Brightness => TransformSpec::Brightness {
                delta: rng.random_range(-0.3..=0.3),
            },
            TransformFamily::Contrast => TransformSpec::Contrast {
                factor: rng.random_range(0.5..=1.5),
            },
            TransformFamily::GaussianBlur => TransformSpec::GaussianBlur {
                sigma: rng.random_range(0.5..=2.0),
            },
            TransformFamily::AdditiveNoise => TransformSpec::AdditiveNoise {
                std: rng.random_range(0.01..=0.1),
            },
            TransformFamily::BlockShuffle => TransformSpec::BlockShuffle {
                grid: if rng.random_bool(0.5) { 2 } else { 4 },
            },
            TransformFamily::Overlay => {
                let width_frac: f32 = rng.random_range(0.2..=0.5);
                let height_frac: f32 = rng.random_range(0.2..=(0.25 / width_frac).min(0.5));
                TransformSpec::Overlay {
                    width_frac,
                    height_frac,
                    color: [rng.random(), rng.random(), rng.random()],
                }
            }
        }
    }
}

impl fmt::Display for TransformFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TransformFamily {
    type Err = FcplError;

    fn from_str(s: &str) -> Result<Self> {
        TransformFamily::ALL
            .into_iter()
            .find(|f| f.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| FcplError::InvalidArgument(format!("unknown transform family `{s}`")))
    }
}

/// One parameterized edit. Positions (crop window, overlay placement, block
/// permutation, noise) are drawn from the `rng_seed` passed to
/// [`apply_transform`], so a spec plus a seed fully determines the output.
#[derive(Clone, Debug, PartialEq)]
pub enum TransformSpec {
    HorizontalFlip,
    /// Degrees, one of 90, 180, 270.
    Rotate(u32),
    CropResize {
        fraction: f32,
    },
    Brightness {
        delta: f32,
    },
    Contrast {
        factor: f32,
    },
    GaussianBlur {
        sigma: f32,
    },
    AdditiveNoise {
        std: f32,
    },
    BlockShuffle {
        grid: u32,
    },
    Overlay {
        width_frac: f32,
        height_frac: f32,
        color: [f32; 3],
    },
}

fn check(ok: bool, what: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(FcplError::InvalidArgument(what()))
    }
}

impl TransformSpec {
    pub fn rotate(degrees: u32) -> Result<Self> {
        let spec = TransformSpec::Rotate(degrees);
        spec.validate()?;
        Ok(spec)
    }

    pub fn crop_resize(fraction: f32) -> Result<Self> {
        let spec = TransformSpec::CropResize { fraction };
        spec.validate()?;
        Ok(spec)
    }

    pub fn brightness(delta: f32) -> Result<Self> {
        let spec = TransformSpec::Brightness { delta };
        spec.validate()?;
        Ok(spec)
    }

    pub fn contrast(factor: f32) -> Result<Self> {
        let spec = TransformSpec::Contrast { factor };
        spec.validate()?;
        Ok(spec)
    }

    pub fn gaussian_blur(sigma: f32) -> Result<Self> {
        let spec = TransformSpec::GaussianBlur { sigma };
        spec.validate()?;
        Ok(spec)
    }

    pub fn additive_noise(std: f32) -> Result<Self> {
        let spec = TransformSpec::AdditiveNoise { std };
        spec.validate()?;
        Ok(spec)
    }

    pub fn block_shuffle(grid: u32) -> Result<Self> {
        let spec = TransformSpec::BlockShuffle { grid };
        spec.validate()?;
        Ok(spec)
    }

    pub fn overlay(width_frac: f32, height_frac: f32, color: [f32; 3]) -> Result<Self> {
        let spec = TransformSpec::Overlay {
            width_frac,
            height_frac,
            color,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn family(&self) -> TransformFamily {
        match self {
            TransformSpec::HorizontalFlip => TransformFamily::HorizontalFlip,
            TransformSpec::Rotate(_) => TransformFamily::Rotate,
            TransformSpec::CropResize { .. } => TransformFamily::CropResize,
            TransformSpec::Brightness { .. } => TransformFamily::Brightness,
            TransformSpec::Contrast { .. } => TransformFamily::Contrast,
            TransformSpec::GaussianBlur { .. } => TransformFamily::GaussianBlur,
            TransformSpec::AdditiveNoise { .. } => TransformFamily::AdditiveNoise,
            TransformSpec::BlockShuffle { .. } => TransformFamily::BlockShuffle,
            TransformSpec::Overlay { .. } => TransformFamily::Overlay,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            TransformSpec::HorizontalFlip => Ok(()),
            TransformSpec::Rotate(d) => {
                check(matches!(d, 90 | 180 | 270), || format!("rotation {d} not in {{90,180,270}}"))
            }
            TransformSpec::CropResize { fraction } => check((0.5..=0.9).contains(&fraction), || {
                format!("crop fraction {fraction} not in [0.5, 0.9]")
            }),
            TransformSpec::Brightness { delta } => check((-0.3..=0.3).contains(&delta), || {
                format!("brightness delta {delta} not in [-0.3, 0.3]")
            }),
            TransformSpec::Contrast { factor } => check((0.5..=1.5).contains(&factor), || {
                format!("contrast factor {factor} not in [0.5, 1.5]")
            }),
            TransformSpec::GaussianBlur { sigma } => check((0.5..=2.0).contains(&sigma), || {
                format!("blur sigma {sigma} not in [0.5, 2.0]")
            }),
            TransformSpec::AdditiveNoise { std } => check((0.01..=0.1).contains(&std), || {
                format!("noise std {std} not in [0.01, 0.1]")
            }),
            TransformSpec::BlockShuffle { grid } => {
                check(matches!(grid, 2 | 4), || format!("shuffle grid {grid} not in {{2,4}}"))
            }
            TransformSpec::Overlay {
                width_frac,
                height_frac,
                color,
            } => {
                check(
                    width_frac > 0.0 && height_frac > 0.0 && width_frac <= 1.0 && height_frac <= 1.0,
                    || "overlay fractions must lie in (0, 1]".into(),
                )?;
                check(width_frac * height_frac <= 0.25 + 1e-6, || {
                    format!("overlay covers {} of the image (max 0.25)", width_frac * height_frac)
                })?;
                check(color.iter().all(|c| (0.0..=1.0).contains(c)), || {
                    "overlay color outside [0, 1]".into()
                })
            }
        }
    }
}

impl fmt::Display for TransformSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TransformSpec::HorizontalFlip => write!(f, "hflip"),
            TransformSpec::Rotate(d) => write!(f, "rotate:{d}"),
            TransformSpec::CropResize { fraction } => write!(f, "crop:{fraction}"),
            TransformSpec::Brightness { delta } => write!(f, "brightness:{delta}"),
            TransformSpec::Contrast { factor } => write!(f, "contrast:{factor}"),
            TransformSpec::GaussianBlur { sigma } => write!(f, "blur:{sigma}"),
            TransformSpec::AdditiveNoise { std } => write!(f, "noise:{std}"),
            TransformSpec::BlockShuffle { grid } => write!(f, "blockshuffle:{grid}"),
            TransformSpec::Overlay {
                width_frac,
                height_frac,
                color,
            } => write!(
                f,
                "overlay:{width_frac}:{height_frac}:{}:{}:{}",
                color[0], color[1], color[2]
            ),
        }
    }
}

impl FromStr for TransformSpec {
    type Err = FcplError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || FcplError::InvalidArgument(format!("malformed transform `{s}`"));
        let mut parts = s.split(':');
        let name = parts.next().ok_or_else(bad)?;
        let args: Vec<&str> = parts.collect();
        let float = |i: usize| -> Result<f32> {
            args.get(i).and_then(|a| a.parse().ok()).ok_or_else(bad)
        };
        let int = |i: usize| -> Result<u32> {
            args.get(i).and_then(|a| a.parse().ok()).ok_or_else(bad)
        };
        let arity = |n: usize| if args.len() == n { Ok(()) } else { Err(bad()) };
        let spec = match TransformFamily::from_str(name)? {
            TransformFamily::HorizontalFlip => {
                arity(0)?;
                TransformSpec::HorizontalFlip
            }
            TransformFamily::Rotate => {
                arity(1)?;
                TransformSpec::Rotate(int(0)?)
            }
            TransformFamily::CropResize => {
                arity(1)?;
                TransformSpec::CropResize { fraction: float(0)? }
            }
            TransformFamily::Brightness => {
                arity(1)?;
                TransformSpec::Brightness { delta: float(0)? }
            }
            TransformFamily::Contrast => {
                arity(1)?;
                TransformSpec::Contrast { factor: float(0)? }
            }
            TransformFamily::GaussianBlur => {
                arity(1)?;
                TransformSpec::GaussianBlur { sigma: float(0)? }
            }
            TransformFamily::AdditiveNoise => {
                arity(1)?;
                TransformSpec::AdditiveNoise { std: float(0)? }
            }
            TransformFamily::BlockShuffle => {
                arity(1)?;
                TransformSpec::BlockShuffle { grid: int(0)? }
            }
            TransformFamily::Overlay => {
                arity(5)?;
                TransformSpec::Overlay {
                    width_frac: float(0)?,
                    height_frac: float(1)?,
                    color: [float(2)?, float(3)?, float(4)?],
                }
            }
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Chains serialize as `+`-joined specs; the empty chain is `-`.
pub fn format_chain(chain: &[TransformSpec]) -> String {
    if chain.is_empty() {
        "-".to_string()
    } else {
        chain.iter().map(|t| t.to_string()).collect::<Vec<_>>().join("+")
    }
}

pub fn parse_chain(s: &str) -> Result<Vec<TransformSpec>> {
    if s == "-" || s.is_empty() {
        return Ok(Vec::new());
    }
    s.split('+').map(TransformSpec::from_str).collect()
}

/// Apply one edit. Total over valid images; output keeps the input size and
/// stays in `[0, 1]`.
pub fn apply_transform(img: &Image, spec: &TransformSpec, rng_seed: u64) -> Image {
    let mut rng = seed::rng(rng_seed);
    let (w, h) = (img.width(), img.height());
    match *spec {
        TransformSpec::HorizontalFlip => {
            let mut out = img.clone();
            for y in 0..h {
                for x in 0..w {
                    for c in 0..CHANNELS {
                        out.set(x, y, c, img.get(w - 1 - x, y, c));
                    }
                }
            }
            out
        }
        TransformSpec::Rotate(deg) => rotate(img, deg),
        TransformSpec::CropResize { fraction } => {
            let f = fraction.clamp(0.05, 1.0);
            let cw = (w as f32 * f).max(1.0);
            let ch = (h as f32 * f).max(1.0);
            let x0 = rng.random_range(0.0..=(w as f32 - cw));
            let y0 = rng.random_range(0.0..=(h as f32 - ch));
            img.resample_region(x0, y0, cw, ch, w, h)
        }
        TransformSpec::Brightness { delta } => map_pixels(img, |p| p + delta),
        TransformSpec::Contrast { factor } => {
            let mean = img.pixels().iter().map(|&p| p as f64).sum::<f64>() / img.len() as f64;
            let mean = mean as f32;
            map_pixels(img, |p| (p - mean) * factor + mean)
        }
        TransformSpec::GaussianBlur { sigma } => gaussian_blur(img, sigma),
        TransformSpec::AdditiveNoise { std } => {
            let normal = Normal::new(0.0f32, std.max(0.0)).expect("finite std");
            let mut out = img.clone();
            for p in out.pixels_mut() {
                *p = (*p + normal.sample(&mut rng)).clamp(0.0, 1.0);
            }
            out
        }
        TransformSpec::BlockShuffle { grid } => block_shuffle(img, grid.max(1) as usize, &mut rng),
        TransformSpec::Overlay {
            width_frac,
            height_frac,
            color,
        } => {
            let rw = ((w as f32 * width_frac).round() as usize).clamp(1, w);
            let rh = ((h as f32 * height_frac).round() as usize).clamp(1, h);
            let x0 = rng.random_range(0..=w - rw);
            let y0 = rng.random_range(0..=h - rh);
            let mut out = img.clone();
            for y in y0..y0 + rh {
                for x in x0..x0 + rw {
                    for (c, &v) in color.iter().enumerate() {
                        out.set(x, y, c, v);
                    }
                }
            }
            out
        }
    }
}

/// Apply a chain left to right; step `i` uses a seed derived from
/// `(rng_seed, i)`.
pub fn apply_chain(img: &Image, chain: &[TransformSpec], rng_seed: u64) -> Image {
    chain
        .iter()
        .enumerate()
        .fold(img.clone(), |acc, (i, t)| apply_transform(&acc, t, seed::derive(rng_seed, i as u64)))
}

fn map_pixels(img: &Image, f: impl Fn(f32) -> f32) -> Image {
    let mut out = img.clone();
    for p in out.pixels_mut() {
        *p = f(*p).clamp(0.0, 1.0);
    }
    out
}

fn rotate(img: &Image, deg: u32) -> Image {
    let (w, h) = (img.width(), img.height());
    match deg % 360 {
        180 => {
            let mut out = img.clone();
            for y in 0..h {
                for x in 0..w {
                    for c in 0..CHANNELS {
                        out.set(x, y, c, img.get(w - 1 - x, h - 1 - y, c));
                    }
                }
            }
            out
        }
        90 | 270 => {
            // Rotated grid is h x w; square images map exactly.
            let mut rotated = Image::filled(h, w, 0.0);
            for y in 0..w {
                for x in 0..h {
                    let (sx, sy) = if deg % 360 == 90 {
                        (y, h - 1 - x)
                    } else {
                        (w - 1 - y, x)
                    };
                    for c in 0..CHANNELS {
                        rotated.set(x, y, c, img.get(sx, sy, c));
                    }
                }
            }
            if w == h {
                rotated
            } else {
                rotated.resample_region(0.0, 0.0, h as f32, w as f32, w, h)
            }
        }
        _ => img.clone(),
    }
}

fn gaussian_blur(img: &Image, sigma: f32) -> Image {
    let sigma = sigma.max(1e-3);
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f32> = (-radius..=radius)
        .map(|i| (-(i * i) as f32 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f32 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= norm);

    let (w, h) = (img.width() as isize, img.height() as isize);
    let pass = |src: &Image, horizontal: bool| {
        let mut out = src.clone();
        for y in 0..h {
            for x in 0..w {
                for c in 0..CHANNELS {
                    let mut acc = 0.0f32;
                    for (k, i) in kernel.iter().zip(-radius..=radius) {
                        let (sx, sy) = if horizontal {
                            ((x + i).clamp(0, w - 1), y)
                        } else {
                            (x, (y + i).clamp(0, h - 1))
                        };
                        acc += k * src.get(sx as usize, sy as usize, c);
                    }
                    out.set(x as usize, y as usize, c, acc);
                }
            }
        }
        out
    };
    pass(&pass(img, true), false)
}

fn block_shuffle<R: Rng>(img: &Image, grid: usize, rng: &mut R) -> Image {
    let (w, h) = (img.width(), img.height());
    let (bw, bh) = (w / grid, h / grid);
    if bw == 0 || bh == 0 {
        return img.clone();
    }
    let n = grid * grid;
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    if perm.iter().enumerate().all(|(i, &p)| i == p) {
        perm.swap(0, 1);
    }
    let mut out = img.clone();
    for (dst, &src) in perm.iter().enumerate() {
        let (dx, dy) = ((dst % grid) * bw, (dst / grid) * bh);
        let (sx, sy) = ((src % grid) * bw, (src / grid) * bh);
        for y in 0..bh {
            for x in 0..bw {
                for c in 0..CHANNELS {
                    out.set(dx + x, dy + y, c, img.get(sx + x, sy + y, c));
                }
            }
        }
    }
    out
}
