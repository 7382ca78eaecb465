//! Finite-difference checks of every training objective on a tiny fixture.

use ndarray::{Array2, Axis};

use super::{batch_objective, Batch, BaseFeatureTable, LabeledImages, ObjectiveWeights, PairImages};
use crate::error::Result;
use crate::losses::{compat_loss, cosface_loss, hardest_negative, neg_loss, pos_loss, ClassifierHead, NegQuad, Reduction};
use crate::net::{
    backward_batch, forward_batch, grad_check, images_to_matrix, init_params, NetDims, NetworkParams, ParamGrads,
    RawEmbedding,
};
use crate::seed;
use crate::transform::{apply_chain, synthesize, Image, TransformSpec};

const SIDE: usize = 8;
const EMBED_DIM: usize = 8;
const HIDDEN_DIM: usize = 16;
const NUM_CLASSES: usize = 2;

/// Four class-labelled images (two classes, original + copy each), two
/// positive pairs and a base feature table from an unrelated network.
pub struct GradFixture {
    pub params: NetworkParams,
    pub head: ClassifierHead,
    pub data: LabeledImages,
    pub base: BaseFeatureTable,
    pub pairs: PairImages,
}

impl GradFixture {
    pub fn new(fixture_seed: u64) -> Result<Self> {
        let img = |i: u64| synthesize(fixture_seed, i, SIDE, SIDE);
        let edit = |im: &Image, i: u64| -> Result<Image> {
            let chain = [TransformSpec::brightness(0.1)?, TransformSpec::gaussian_blur(0.8)?];
            Ok(apply_chain(im, &chain, seed::derive(fixture_seed, i)))
        };
        let mut images = Vec::new();
        let mut labels = Vec::new();
        let mut original_of = Vec::new();
        for c in 0..NUM_CLASSES {
            let original = img(c as u64);
            images.push(edit(&original, 100 + c as u64)?);
            images.push(original);
            labels.extend([c, c]);
            original_of.extend([None, Some(c)]);
        }
        let data = LabeledImages {
            x: images_to_matrix(&images)?,
            labels,
            original_of,
            num_classes: NUM_CLASSES,
        };
        let dims = NetDims::new(SIDE * SIDE * 3, HIDDEN_DIM, EMBED_DIM);
        let base_net = init_params(seed::derive(fixture_seed, 1), dims)?;
        let originals: Vec<&Image> = images.iter().skip(1).step_by(2).collect();
        let base = BaseFeatureTable {
            features: crate::net::forward_many(&base_net, &originals)?,
        };
        let mut pair_images = Vec::new();
        for p in 0..2u64 {
            let r = img(10 + p);
            pair_images.push(edit(&r, 200 + p)?);
            pair_images.push(r);
        }
        Ok(GradFixture {
            params: init_params(seed::derive(fixture_seed, 2), dims)?,
            head: ClassifierHead::new(NUM_CLASSES, EMBED_DIM, 30.0, 0.35, seed::derive(fixture_seed, 3))?,
            data,
            base,
            pairs: PairImages {
                x: images_to_matrix(&pair_images)?,
            },
        })
    }

    fn batch(&self) -> Batch {
        Batch {
            class_rows: (0..self.data.len()).collect(),
            gt_pairs: (0..self.pairs.num_pairs()).collect(),
        }
    }
}

fn scatter(out: &Array2<f64>, grads: &[(usize, Vec<f64>)]) -> Array2<f64> {
    let mut up = Array2::<f64>::zeros(out.dim());
    for (row, g) in grads {
        for (dst, v) in up.row_mut(*row).iter_mut().zip(g) {
            *dst += v;
        }
    }
    up
}

fn rows(out: &Array2<f64>) -> Vec<RawEmbedding> {
    out.rows().into_iter().map(|r| RawEmbedding(r.to_vec())).collect()
}

fn metric_objective(fx: &GradFixture, p: &NetworkParams) -> Result<(f64, ParamGrads)> {
    let cache = forward_batch(p, &fx.data.x)?;
    let out = cosface_loss(&cache.out, &fx.data.labels, &fx.head)?;
    Ok((out.loss, backward_batch(p, &fx.data.x, &cache, &out.grad_embeddings)?))
}

fn compat_objective(fx: &GradFixture, p: &NetworkParams) -> Result<(f64, ParamGrads)> {
    let cache = forward_batch(p, &fx.data.x)?;
    let idx: Vec<(usize, usize)> = fx
        .data
        .original_of
        .iter()
        .enumerate()
        .filter_map(|(i, c)| c.map(|c| (i, c)))
        .collect();
    let all = rows(&cache.out);
    let new: Vec<RawEmbedding> = idx.iter().map(|&(i, _)| all[i].clone()).collect();
    let base: Vec<RawEmbedding> = idx.iter().map(|&(_, c)| fx.base.features[c].clone()).collect();
    let term = compat_loss(&base, &new, Reduction::Sum)?;
    let up = scatter(&cache.out, &idx.iter().map(|&(i, _)| i).zip(term.grads).collect::<Vec<_>>());
    Ok((term.loss, backward_batch(p, &fx.data.x, &cache, &up)?))
}

fn pos_objective(fx: &GradFixture, p: &NetworkParams) -> Result<(f64, ParamGrads)> {
    let cache = forward_batch(p, &fx.pairs.x)?;
    let e = rows(&cache.out);
    let pairs: Vec<(RawEmbedding, RawEmbedding)> = e.chunks(2).map(|c| (c[0].clone(), c[1].clone())).collect();
    let term = pos_loss(&pairs, Reduction::Sum)?;
    let up = scatter(&cache.out, &term.grads.into_iter().enumerate().collect::<Vec<_>>());
    Ok((term.loss, backward_batch(p, &fx.pairs.x, &cache, &up)?))
}

fn neg_objective(fx: &GradFixture, p: &NetworkParams) -> Result<(f64, ParamGrads)> {
    // Pool: class images then pair members; pair members get pseudo-classes.
    let x = ndarray::concatenate(Axis(0), &[fx.data.x.view(), fx.pairs.x.view()]).expect("same width");
    let cache = forward_batch(p, &x)?;
    let e = rows(&cache.out);
    let n_class = fx.data.len();
    let class_of =
        |i: usize| if i < n_class { fx.data.labels[i] } else { NUM_CLASSES + (i - n_class) / 2 };
    let pool: Vec<(&[f64], usize)> = e.iter().enumerate().map(|(i, r)| (r.as_slice(), class_of(i))).collect();
    let mut quads = Vec::new();
    let mut index = Vec::new();
    for pair in 0..fx.pairs.num_pairs() {
        let (a, b) = (n_class + 2 * pair, n_class + 2 * pair + 1);
        let na = hardest_negative(&e[a].0, &pool, class_of(a))?;
        let nb = hardest_negative(&e[b].0, &pool, class_of(b))?;
        quads.push(NegQuad {
            p1: e[a].clone(),
            n1: e[na].clone(),
            p2: e[b].clone(),
            n2: e[nb].clone(),
        });
        index.extend([a, na, b, nb]);
    }
    let term = neg_loss(&quads, Reduction::Sum)?;
    let up = scatter(&cache.out, &index.into_iter().zip(term.grads).collect::<Vec<_>>());
    Ok((term.loss, backward_batch(p, &x, &cache, &up)?))
}

fn combined_objective(fx: &GradFixture, p: &NetworkParams, weights: &ObjectiveWeights) -> Result<(f64, ParamGrads)> {
    let r = batch_objective(p, &fx.head, &fx.data, Some(&fx.base), Some(&fx.pairs), &fx.batch(), weights)?;
    Ok((r.losses.l_final, r.grads))
}

/// Largest finite-difference relative error for each objective term and for
/// the combined objective.
pub fn objective_grad_errors(fixture_seed: u64, eps: f64) -> Result<Vec<(&'static str, f64)>> {
    let fx = GradFixture::new(fixture_seed)?;
    let weights = ObjectiveWeights {
        lambda_r: 1.0,
        lambda_pn: 0.5,
        reduction: Reduction::Sum,
    };
    let p = &fx.params;
    Ok(vec![
        ("l_mtr", grad_check(p, |q| metric_objective(&fx, q), eps)?),
        ("l_com", grad_check(p, |q| compat_objective(&fx, q), eps)?),
        ("l_pos", grad_check(p, |q| pos_objective(&fx, q), eps)?),
        ("l_neg", grad_check(p, |q| neg_objective(&fx, q), eps)?),
        ("l_final", grad_check(p, |q| combined_objective(&fx, q, &weights), eps)?),
    ])
}

/// The pair terms computed through `batch_objective` agree with the
/// standalone loss functions on the fixture.
pub fn pair_terms_agree(fixture_seed: u64) -> Result<bool> {
    let fx = GradFixture::new(fixture_seed)?;
    let weights = ObjectiveWeights {
        lambda_r: 1.0,
        lambda_pn: 0.5,
        reduction: Reduction::Sum,
    };
    let r = batch_objective(&fx.params, &fx.head, &fx.data, Some(&fx.base), Some(&fx.pairs), &fx.batch(), &weights)?;
    let pos = pos_objective(&fx, &fx.params)?.0;
    let neg = neg_objective(&fx, &fx.params)?.0;
    let com = compat_objective(&fx, &fx.params)?.0;
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(1.0);
    Ok(close(r.losses.l_pos, pos) && close(r.losses.l_neg, neg) && close(r.losses.l_com, com))
}
