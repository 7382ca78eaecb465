use rand::Rng;

use super::image::{Image, DEFAULT_HEIGHT, DEFAULT_WIDTH};
use super::ops::{apply_chain, TransformFamily, TransformSpec};
use super::synth::synthesize;
use crate::error::{FcplError, Result};
use crate::seed;

const ORIGINALS_STREAM: u64 = 0xDA7A_0001;
const CLASS_STREAM: u64 = 0xDA7A_0002;

/// An edited copy of a class original together with the chain that made it.
#[derive(Clone, Debug, PartialEq)]
pub struct EditedCopy {
    pub image: Image,
    pub chain: Vec<TransformSpec>,
}

/// One original image and its edited copies; they share `class_id`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingClass {
    pub class_id: usize,
    pub original: Image,
    pub copies: Vec<EditedCopy>,
}

impl TrainingClass {
    pub fn num_images(&self) -> usize {
        1 + self.copies.len()
    }
}

/// Samples transform chains: a length uniform in `len_range` (inclusive),
/// each step from a family drawn uniformly from `families`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainSampler {
    pub len_range: (usize, usize),
    pub families: Vec<TransformFamily>,
}

impl Default for ChainSampler {
    fn default() -> Self {
        ChainSampler {
            len_range: (1, 3),
            families: TransformFamily::ALL.to_vec(),
        }
    }
}

impl ChainSampler {
    pub fn new(len_range: (usize, usize), families: Vec<TransformFamily>) -> Result<Self> {
        let sampler = ChainSampler {
            len_range,
            families,
        };
        sampler.validate()?;
        Ok(sampler)
    }

    pub fn excluding(mut self, family: TransformFamily) -> Self {
        self.families.retain(|&f| f != family);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.len_range;
        if lo > hi {
            return Err(FcplError::InvalidArgument(format!(
                "chain length range ({lo}, {hi}) is empty"
            )));
        }
        if hi > 0 && self.families.is_empty() {
            return Err(FcplError::InvalidArgument("no transform families to sample".into()));
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<TransformSpec> {
        let (lo, hi) = self.len_range;
        let len = rng.random_range(lo..=hi);
        (0..len)
            .map(|_| {
                let fam = self.families[rng.random_range(0..self.families.len())];
                fam.sample(rng)
            })
            .collect()
    }
}

pub fn generate_class(
    class_id: usize,
    original: Image,
    copies_per_class: usize,
    sampler: &ChainSampler,
    seed: u64,
) -> Result<TrainingClass> {
    if copies_per_class == 0 {
        return Err(FcplError::InvalidArgument("copies_per_class must be at least 1".into()));
    }
    sampler.validate()?;
    let copies = (0..copies_per_class)
        .map(|k| {
            let copy_seed = seed::derive(seed, k as u64);
            let mut rng = seed::rng(copy_seed);
            let chain = sampler.sample(&mut rng);
            let rng_seed = seed::derive(copy_seed, 0xC0DE);
            EditedCopy {
                image: apply_chain(&original, &chain, rng_seed),
                chain,
            }
        })
        .collect();
    Ok(TrainingClass {
        class_id,
        original,
        copies,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetConfig {
    pub num_classes: usize,
    pub copies_per_class: usize,
    pub sampler: ChainSampler,
    pub width: usize,
    pub height: usize,
}

impl DatasetConfig {
    pub fn new(num_classes: usize, copies_per_class: usize) -> Self {
        DatasetConfig {
            num_classes,
            copies_per_class,
            sampler: ChainSampler::default(),
            width: DEFAULT_WIDTH,
            height: DEFAULT_HEIGHT,
        }
    }
}

pub fn build_dataset(num_classes: usize, copies_per_class: usize, seed: u64) -> Result<Vec<TrainingClass>> {
    build_dataset_with(&DatasetConfig::new(num_classes, copies_per_class), seed)
}

pub fn build_dataset_with(config: &DatasetConfig, seed: u64) -> Result<Vec<TrainingClass>> {
    let originals_seed = seed::derive(seed, ORIGINALS_STREAM);
    (0..config.num_classes)
        .map(|class_id| {
            let original = synthesize(originals_seed, class_id as u64, config.width, config.height);
            generate_class(
                class_id,
                original,
                config.copies_per_class,
                &config.sampler,
                seed::derive2(seed, CLASS_STREAM, class_id as u64),
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transform::synthesize_original;

    #[test]
    fn class_has_requested_copies_and_chain_lengths() {
        let sampler = ChainSampler::default();
        let class = generate_class(0, synthesize_original(1, 0), 2, &sampler, 5).unwrap();
        assert_eq!(class.copies.len(), 2);
        let again = generate_class(0, synthesize_original(1, 0), 2, &sampler, 5).unwrap();
        assert_eq!(class, again);

        let class = generate_class(3, synthesize_original(1, 3), 50, &sampler, 9).unwrap();
        assert!(class.copies.iter().all(|c| (1..=3).contains(&c.chain.len())));
    }

    #[test]
    fn zero_copies_rejected() {
        assert!(generate_class(0, synthesize_original(1, 0), 0, &ChainSampler::default(), 0).is_err());
    }

    #[test]
    fn dataset_shape_and_ids() {
        let ds = build_dataset(200, 3, 1).unwrap();
        assert_eq!(ds.len(), 200);
        assert_eq!(ds.iter().map(TrainingClass::num_images).sum::<usize>(), 800);
        let ids: Vec<usize> = ds.iter().map(|c| c.class_id).collect();
        assert_eq!(ids, (0..200).collect::<Vec<_>>());
    }

    #[test]
    fn seeds_change_copies() {
        let a = build_dataset(5, 2, 1).unwrap();
        let b = build_dataset(5, 2, 2).unwrap();
        let sum = |ds: &[TrainingClass]| -> f64 {
            ds.iter()
                .flat_map(|c| c.copies.iter())
                .flat_map(|c| c.image.pixels().iter())
                .map(|&p| p as f64)
                .sum()
        };
        assert_ne!(sum(&a), sum(&b));
    }

    #[test]
    fn excluded_family_never_sampled() {
        let mut config = DatasetConfig::new(30, 4);
        config.sampler = config.sampler.excluding(TransformFamily::BlockShuffle);
        let ds = build_dataset_with(&config, 3).unwrap();
        assert!(ds
            .iter()
            .flat_map(|c| &c.copies)
            .flat_map(|c| &c.chain)
            .all(|t| t.family() != TransformFamily::BlockShuffle));
    }
}
