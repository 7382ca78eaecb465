//! Progressive training: base model, feature-compatible models anchored to
//! the frozen base features of the originals, and fine-tuning on
//! ground-truth pairs with in-batch hardest negatives.

mod config;
mod gradcheck;
mod gt;
mod pipeline;

use std::fmt;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;

pub use config::TrainConfig;
pub use gradcheck::{objective_grad_errors, pair_terms_agree, GradFixture};
pub use gt::{extract_gt_image_pairs, GtImagePair};
pub use pipeline::{
    continue_without_pairs, read_metrics_log, run_pipeline, run_stages, write_metrics_log, PipelineOutput, METRICS_LOG,
};

pub use crate::segment::GtVideoPair;

use crate::error::{FcplError, Result};
use crate::losses::{
    combine_stage3, cosface_loss, hardest_negative, unit_distance, ClassifierHead, LossBreakdown, Reduction,
};
use crate::net::{
    backward_batch, forward_batch, forward_many, images_to_matrix, init_params, NetDims, NetworkParams, ParamGrads,
    RawEmbedding,
};
use crate::seed;
use crate::transform::{Image, TrainingClass};

const INIT_STREAM: u64 = 0x7EA1_0001;
const HEAD_STREAM: u64 = 0x7EA1_0002;
const SHUFFLE_STREAM: u64 = 0x7EA1_0003;
const GT_SHUFFLE_STREAM: u64 = 0x7EA1_0004;
const FINETUNE_STREAM: u64 = 0x7EA1_0005;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stage {
    Base,
    Compatible,
    Finetune,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Base => "base",
            Stage::Compatible => "compat",
            Stage::Finetune => "finetune",
        })
    }
}

impl std::str::FromStr for Stage {
    type Err = FcplError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "base" => Ok(Stage::Base),
            "compat" => Ok(Stage::Compatible),
            "finetune" => Ok(Stage::Finetune),
            _ => Err(FcplError::InvalidArgument(format!("unknown stage `{s}`"))),
        }
    }
}

/// Epoch-mean loss terms for one model.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub stage: Stage,
    pub model_index: usize,
    pub epoch: usize,
    pub losses: LossBreakdown,
}

/// Seed for the base model derived from the run seed.
pub fn base_model_seed(run_seed: u64) -> u64 {
    seed::derive(run_seed, 0)
}

/// Seed for compatible model `index` derived from the run seed.
pub fn compat_model_seed(run_seed: u64, index: usize) -> u64 {
    seed::derive(run_seed, 1 + index as u64)
}

/// All training images flattened into one matrix, with class labels and,
/// for originals, the class whose base feature anchors them.
#[derive(Clone, Debug)]
pub struct LabeledImages {
    pub x: Array2<f64>,
    pub labels: Vec<usize>,
    pub original_of: Vec<Option<usize>>,
    pub num_classes: usize,
}

impl LabeledImages {
    pub fn from_classes(classes: &[TrainingClass]) -> Result<Self> {
        if classes.is_empty() {
            return Err(FcplError::InvalidArgument("training dataset is empty".into()));
        }
        let mut images: Vec<&Image> = Vec::new();
        let mut labels = Vec::new();
        let mut original_of = Vec::new();
        for class in classes {
            images.push(&class.original);
            labels.push(class.class_id);
            original_of.push(Some(class.class_id));
            for copy in &class.copies {
                images.push(&copy.image);
                labels.push(class.class_id);
                original_of.push(None);
            }
        }
        let num_classes = classes.iter().map(|c| c.class_id).max().unwrap_or(0) + 1;
        Ok(LabeledImages {
            x: images_to_matrix(images)?,
            labels,
            original_of,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.x.ncols()
    }
}

/// Raw features of the original images under the frozen base model,
/// indexed by class id.
#[derive(Clone, Debug, PartialEq)]
pub struct BaseFeatureTable {
    features: Vec<RawEmbedding>,
}

impl BaseFeatureTable {
    pub fn get(&self, class_id: usize) -> Option<&RawEmbedding> {
        self.features.get(class_id)
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn features(&self) -> &[RawEmbedding] {
        &self.features
    }

    /// FNV-1a over the bit patterns of every stored value.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xCBF2_9CE4_8422_2325;
        for v in self.features.iter().flat_map(|f| f.0.iter()) {
            for b in v.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01B3);
            }
        }
        h
    }
}

pub fn precompute_base_features(base: &NetworkParams, classes: &[TrainingClass]) -> Result<BaseFeatureTable> {
    let mut sorted: Vec<&TrainingClass> = classes.iter().collect();
    sorted.sort_by_key(|c| c.class_id);
    for (i, c) in sorted.iter().enumerate() {
        if c.class_id != i {
            return Err(FcplError::InvalidArgument(format!("class ids not dense: missing {i}")));
        }
    }
    let originals: Vec<&Image> = sorted.iter().map(|c| &c.original).collect();
    Ok(BaseFeatureTable {
        features: forward_many(base, &originals)?,
    })
}

/// Ground-truth pair images stacked as rows `[q0, r0, q1, r1, ...]`.
#[derive(Clone, Debug)]
pub struct PairImages {
    pub x: Array2<f64>,
}

impl PairImages {
    pub fn from_pairs(pairs: &[GtImagePair]) -> Result<Self> {
        let x = images_to_matrix(pairs.iter().flat_map(|p| [&p.query_frame, &p.ref_frame]))?;
        Ok(PairImages { x })
    }

    pub fn num_pairs(&self) -> usize {
        self.x.nrows() / 2
    }
}

/// Weights of the objective terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveWeights {
    pub lambda_r: f64,
    pub lambda_pn: f64,
    pub reduction: Reduction,
}

/// Rows of one mini-batch: class-labelled image rows and ground-truth pair
/// indices.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Batch {
    pub class_rows: Vec<usize>,
    pub gt_pairs: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct BatchResult {
    pub losses: LossBreakdown,
    pub grads: ParamGrads,
    pub head_grad: Array2<f64>,
}

/// Evaluate the full objective on one batch and its gradients w.r.t. the
/// network parameters and the classifier weights.
///
/// * metric term over all class-labelled rows;
/// * compatibility term over originals in the batch (when `base` is given);
/// * pair terms over the ground-truth pairs (when `gt` is given). Each pair
///   member is matched to its hardest negative among all other batch
///   elements outside its own pair.
///
/// Gradient contributions of terms with zero weight are skipped entirely.
pub fn batch_objective(
    params: &NetworkParams,
    head: &ClassifierHead,
    data: &LabeledImages,
    base: Option<&BaseFeatureTable>,
    gt: Option<&PairImages>,
    batch: &Batch,
    weights: &ObjectiveWeights,
) -> Result<BatchResult> {
    let xc = data.x.select(Axis(0), &batch.class_rows);
    let labels: Vec<usize> = batch.class_rows.iter().map(|&r| data.labels[r]).collect();
    let cache_c = forward_batch(params, &xc)?;
    let metric = cosface_loss(&cache_c.out, &labels, head)?;
    let mut d_class = metric.grad_embeddings;

    let mut l_com = 0.0;
    let mut lambda_r = 0.0;
    if let Some(table) = base {
        lambda_r = weights.lambda_r;
        let originals: Vec<(usize, usize)> = batch
            .class_rows
            .iter()
            .enumerate()
            .filter_map(|(i, &r)| data.original_of[r].map(|c| (i, c)))
            .collect();
        let k = match weights.reduction {
            Reduction::Sum => 1.0,
            Reduction::Mean => 1.0 / originals.len().max(1) as f64,
        };
        for &(i, class) in &originals {
            let anchor = table
                .get(class)
                .ok_or_else(|| FcplError::InvalidArgument(format!("no base feature for class {class}")))?;
            let row = cache_c.out.row(i);
            let (d, _, grad) = unit_distance(anchor.as_slice(), row.as_slice().expect("standard layout"))?;
            l_com += k * d;
            if weights.lambda_r != 0.0 {
                for (dst, g) in d_class.row_mut(i).iter_mut().zip(grad) {
                    *dst += weights.lambda_r * k * g;
                }
            }
        }
    }

    let mut l_pos = 0.0;
    let mut l_neg = 0.0;
    let mut lambda_pn = 0.0;
    let mut gt_part = None;
    if let (Some(pairs), false) = (gt, batch.gt_pairs.is_empty()) {
        lambda_pn = weights.lambda_pn;
        let rows: Vec<usize> = batch.gt_pairs.iter().flat_map(|&p| [2 * p, 2 * p + 1]).collect();
        let xg = pairs.x.select(Axis(0), &rows);
        let cache_g = forward_batch(params, &xg)?;
        let mut d_gt = Array2::<f64>::zeros(cache_g.out.dim());

        // Mining pool: class rows first, then pair members. Pair members get
        // pseudo-classes past the real ones so only their own pair is
        // excluded.
        let n_class = batch.class_rows.len();
        let pool: Vec<(&[f64], usize)> = cache_c
            .out
            .rows()
            .into_iter()
            .zip(&labels)
            .map(|(r, &l)| (r.to_slice().expect("standard layout"), l))
            .chain(
                cache_g
                    .out
                    .rows()
                    .into_iter()
                    .enumerate()
                    .map(|(i, r)| (r.to_slice().expect("standard layout"), data.num_classes + i / 2)),
            )
            .collect();

        let m = batch.gt_pairs.len();
        let (k_pos, k_neg) = match weights.reduction {
            Reduction::Sum => (1.0, 0.5),
            Reduction::Mean => (1.0 / m as f64, 0.5 / m as f64),
        };
        let w = weights.lambda_pn;
        for i in 0..m {
            let (a, b) = (2 * i, 2 * i + 1);
            let (d, ga, gb) = unit_distance(pool[n_class + a].0, pool[n_class + b].0)?;
            l_pos += k_pos * d;
            if w != 0.0 {
                add_row(&mut d_gt, a, &ga, w * k_pos);
                add_row(&mut d_gt, b, &gb, w * k_pos);
            }
            for member in [a, b] {
                let anchor = pool[n_class + member];
                let neg = hardest_negative(anchor.0, &pool, anchor.1)?;
                let (d, gp, gn) = unit_distance(anchor.0, pool[neg].0)?;
                l_neg += k_neg * d;
                if w != 0.0 {
                    add_row(&mut d_gt, member, &gp, -w * k_neg);
                    if neg < n_class {
                        add_row(&mut d_class, neg, &gn, -w * k_neg);
                    } else {
                        add_row(&mut d_gt, neg - n_class, &gn, -w * k_neg);
                    }
                }
            }
        }
        if w != 0.0 {
            gt_part = Some((xg, cache_g, d_gt));
        }
    }

    let mut grads = backward_batch(params, &xc, &cache_c, &d_class)?;
    if let Some((xg, cache_g, d_gt)) = gt_part {
        grads.add_assign(&backward_batch(params, &xg, &cache_g, &d_gt)?);
    }
    let losses = LossBreakdown {
        l_mtr: metric.loss,
        l_com,
        l_pos,
        l_neg,
        l_final: combine_stage3(metric.loss, l_com, l_pos, l_neg, lambda_r, lambda_pn),
        lambda_r,
        lambda_pn,
    };
    Ok(BatchResult {
        losses,
        grads,
        head_grad: metric.grad_weights,
    })
}

fn add_row(m: &mut Array2<f64>, row: usize, g: &[f64], scale: f64) {
    for (dst, v) in m.row_mut(row).iter_mut().zip(g) {
        *dst += scale * v;
    }
}

/// A trained model with its classifier head and per-epoch loss curve.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: NetworkParams,
    pub head: ClassifierHead,
    pub curve: Vec<EpochLog>,
}

struct RunSpec<'a> {
    stage: Stage,
    model_index: usize,
    epochs: usize,
    class_batch: usize,
    pairs_per_batch: usize,
    shuffle_seed: u64,
    base: Option<&'a BaseFeatureTable>,
    gt: Option<&'a PairImages>,
    weights: ObjectiveWeights,
}

fn run_epochs(
    mut params: NetworkParams,
    mut head: ClassifierHead,
    data: &LabeledImages,
    config: &TrainConfig,
    spec: RunSpec<'_>,
) -> Result<TrainOutcome> {
    let mut velocity = ParamGrads::zeros(params.dims());
    let mut head_velocity = Array2::<f64>::zeros(head.weights.dim());
    let mut curve = Vec::with_capacity(spec.epochs);
    let num_pairs = spec.gt.map_or(0, PairImages::num_pairs);
    let mut pair_order: Vec<usize> = Vec::new();
    let mut pair_cursor = 0usize;

    for epoch in 0..spec.epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut seed::rng(seed::derive2(spec.shuffle_seed, SHUFFLE_STREAM, epoch as u64)));
        let mut sums = LossBreakdown::default();
        let mut batches = 0usize;
        for (batch_index, rows) in order.chunks(spec.class_batch).enumerate() {
            let mut gt_pairs = Vec::with_capacity(spec.pairs_per_batch);
            for _ in 0..spec.pairs_per_batch.min(num_pairs) {
                if pair_cursor == pair_order.len() {
                    pair_order = (0..num_pairs).collect();
                    let stream = seed::derive2(spec.shuffle_seed, GT_SHUFFLE_STREAM, epoch as u64);
                    pair_order.shuffle(&mut seed::rng(seed::derive(stream, batch_index as u64)));
                    pair_cursor = 0;
                }
                gt_pairs.push(pair_order[pair_cursor]);
                pair_cursor += 1;
            }
            let batch = Batch {
                class_rows: rows.to_vec(),
                gt_pairs,
            };
            head.renormalize()?;
            let result = batch_objective(&params, &head, data, spec.base, spec.gt, &batch, &spec.weights)?;
            if !result.losses.is_finite() || !result.grads.is_finite() {
                return Err(FcplError::NonFiniteLoss {
                    stage: spec.stage.to_string(),
                    model: spec.model_index,
                    epoch: epoch + 1,
                    batch: batch_index,
                    detail: format!("{:?}", result.losses),
                });
            }
            params.momentum_step(&mut velocity, &result.grads, config.learning_rate, config.momentum);
            head_velocity.zip_mut_with(&result.head_grad, |v, g| *v = config.momentum * *v + g);
            head.weights.scaled_add(-config.learning_rate, &head_velocity);
            if !params.is_finite() || !head.weights.iter().all(|w| w.is_finite()) {
                return Err(FcplError::NonFiniteLoss {
                    stage: spec.stage.to_string(),
                    model: spec.model_index,
                    epoch: epoch + 1,
                    batch: batch_index,
                    detail: "parameters overflowed after the update".into(),
                });
            }

            let l = &result.losses;
            sums.l_mtr += l.l_mtr;
            sums.l_com += l.l_com;
            sums.l_pos += l.l_pos;
            sums.l_neg += l.l_neg;
            sums.l_final += l.l_final;
            sums.lambda_r = l.lambda_r;
            sums.lambda_pn = l.lambda_pn;
            batches += 1;
        }
        head.renormalize()?;
        let n = batches.max(1) as f64;
        curve.push(EpochLog {
            stage: spec.stage,
            model_index: spec.model_index,
            epoch: epoch + 1,
            losses: LossBreakdown {
                l_mtr: sums.l_mtr / n,
                l_com: sums.l_com / n,
                l_pos: sums.l_pos / n,
                l_neg: sums.l_neg / n,
                l_final: sums.l_final / n,
                lambda_r: sums.lambda_r,
                lambda_pn: sums.lambda_pn,
            },
        });
    }
    Ok(TrainOutcome { params, head, curve })
}

fn fresh_model(data: &LabeledImages, config: &TrainConfig, model_seed: u64) -> Result<(NetworkParams, ClassifierHead)> {
    let dims = NetDims::new(data.input_dim(), config.hidden_dim, config.embed_dim);
    let params = init_params(seed::derive(model_seed, INIT_STREAM), dims)?;
    let head = ClassifierHead::new(
        data.num_classes,
        config.embed_dim,
        config.cosface_s,
        config.cosface_m,
        seed::derive(model_seed, HEAD_STREAM),
    )?;
    Ok((params, head))
}

fn weights(config: &TrainConfig) -> ObjectiveWeights {
    ObjectiveWeights {
        lambda_r: config.lambda_r,
        lambda_pn: config.lambda_pn,
        reduction: config.reduction,
    }
}

/// Train a model from scratch with the metric term alone.
pub fn train_base(data: &LabeledImages, config: &TrainConfig) -> Result<TrainOutcome> {
    train_model(data, None, config, base_model_seed(config.seed), Stage::Base, 0)
}

/// Train a new model with the metric term plus the compatibility term
/// against the frozen base features.
pub fn train_compatible(
    data: &LabeledImages,
    base_table: &BaseFeatureTable,
    config: &TrainConfig,
    model_seed: u64,
    model_index: usize,
) -> Result<TrainOutcome> {
    if base_table.len() < data.num_classes {
        return Err(FcplError::InvalidArgument(format!(
            "base table covers {} originals, dataset has {}",
            base_table.len(),
            data.num_classes
        )));
    }
    train_model(data, Some(base_table), config, model_seed, Stage::Compatible, model_index)
}

fn train_model(
    data: &LabeledImages,
    base: Option<&BaseFeatureTable>,
    config: &TrainConfig,
    model_seed: u64,
    stage: Stage,
    model_index: usize,
) -> Result<TrainOutcome> {
    config.validate()?;
    let (params, head) = fresh_model(data, config, model_seed)?;
    run_epochs(
        params,
        head,
        data,
        config,
        RunSpec {
            stage,
            model_index,
            epochs: config.epochs,
            class_batch: config.batch_size,
            pairs_per_batch: 0,
            shuffle_seed: model_seed,
            base,
            gt: None,
            weights: weights(config),
        },
    )
}

/// Fine-tune a trained model on ground-truth pairs. Each batch holds
/// `batch_size / 2` class-labelled images and `batch_size / 4` pairs.
pub fn finetune_gt(
    start: &TrainOutcome,
    data: &LabeledImages,
    base_table: &BaseFeatureTable,
    gt_pairs: &PairImages,
    config: &TrainConfig,
    model_seed: u64,
    model_index: usize,
) -> Result<TrainOutcome> {
    config.validate()?;
    if gt_pairs.num_pairs() == 0 {
        return Err(FcplError::InvalidArgument("fine-tuning needs ground-truth pairs".into()));
    }
    continue_training(start, data, base_table, Some(gt_pairs), config, model_seed, model_index)
}

/// The fine-tuning loop. With `gt = None` (or `lambda_pn = 0`) it is plain
/// compatible training on half-size batches continued from `start`.
pub fn continue_training(
    start: &TrainOutcome,
    data: &LabeledImages,
    base_table: &BaseFeatureTable,
    gt: Option<&PairImages>,
    config: &TrainConfig,
    model_seed: u64,
    model_index: usize,
) -> Result<TrainOutcome> {
    let mut head = start.head.clone();
    head.scale = config.cosface_s;
    head.margin = config.cosface_m;
    run_epochs(
        start.params.clone(),
        head,
        data,
        config,
        RunSpec {
            stage: Stage::Finetune,
            model_index,
            epochs: config.finetune_epochs,
            class_batch: (config.batch_size / 2).max(2),
            pairs_per_batch: gt.map_or(0, |_| (config.batch_size / 4).max(1)),
            shuffle_seed: seed::derive(model_seed, FINETUNE_STREAM),
            base: Some(base_table),
            gt,
            weights: weights(config),
        },
    )
}

/// Top-1 accuracy of the classifier head on the training images.
pub fn classification_accuracy(params: &NetworkParams, head: &ClassifierHead, data: &LabeledImages) -> Result<f64> {
    let out = forward_batch(params, &data.x)?.out;
    let mut correct = 0usize;
    for (row, &label) in out.rows().into_iter().zip(&data.labels) {
        let scores = head.weights.dot(&row);
        let best = scores
            .iter()
            .enumerate()
            .fold((0usize, f64::NEG_INFINITY), |acc, (i, &s)| if s > acc.1 { (i, s) } else { acc });
        if best.0 == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Mean of `‖unit(g(x_o)) − unit(f(x_o))‖` over the originals.
pub fn mean_compat_distance(model: &NetworkParams, base_table: &BaseFeatureTable, classes: &[TrainingClass]) -> Result<f64> {
    let table = precompute_base_features(model, classes)?;
    let mut total = 0.0;
    for (f, g) in base_table.features().iter().zip(table.features()) {
        total += unit_distance(f.as_slice(), g.as_slice())?.0;
    }
    Ok(total / table.len() as f64)
}

/// Mean positive-pair distance of a model over a set of pairs.
pub fn mean_pair_distance(model: &NetworkParams, pairs: &PairImages) -> Result<f64> {
    let out = forward_batch(model, &pairs.x)?.out;
    let mut total = 0.0;
    for i in 0..pairs.num_pairs() {
        let a = out.row(2 * i);
        let b = out.row(2 * i + 1);
        total += unit_distance(a.as_slice().unwrap(), b.as_slice().unwrap())?.0;
    }
    Ok(total / pairs.num_pairs().max(1) as f64)
}
