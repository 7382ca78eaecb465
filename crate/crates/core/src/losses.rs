//! Training objectives and their gradients.
//!
//! * [`cosface_loss`]: large-margin cosine classification loss (metric term).
//! * [`compat_loss`]: distance between normalized base and new features of
//!   original images; pulls a new model into the base model's space.
//! * [`pos_loss`] / [`neg_loss`]: distances between normalized features of
//!   ground-truth positive pairs and of each member to its hardest negative.
//!
//! The distance terms are plain (un-squared) L2 norms of differences of unit
//! vectors, summed over items unless [`Reduction::Mean`] is requested. The
//! gradient of `‖d‖` at `d = 0` is taken to be zero.

use ndarray::Array2;
use rand_distr::{Distribution, Normal};

use crate::error::{FcplError, Result};
use crate::net::{norm, RawEmbedding, NORM_FLOOR};
use crate::seed;

pub const DEFAULT_SCALE: f64 = 30.0;
pub const DEFAULT_MARGIN: f64 = 0.35;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Reduction {
    #[default]
    Sum,
    Mean,
}

impl Reduction {
    fn factor(self, n: usize) -> f64 {
        match self {
            Reduction::Sum => 1.0,
            Reduction::Mean => 1.0 / n.max(1) as f64,
        }
    }
}

/// CosFace classifier: one weight vector per class, a logit scale and an
/// additive cosine margin.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierHead {
    pub weights: Array2<f64>,
    pub scale: f64,
    pub margin: f64,
}

impl ClassifierHead {
    pub fn new(num_classes: usize, embed_dim: usize, scale: f64, margin: f64, seed: u64) -> Result<Self> {
        if num_classes == 0 || embed_dim == 0 {
            return Err(FcplError::InvalidArgument("classifier head needs classes and dims".into()));
        }
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let mut rng = seed::rng(seed);
        let weights = Array2::from_shape_simple_fn((num_classes, embed_dim), || normal.sample(&mut rng));
        let mut head = ClassifierHead {
            weights,
            scale,
            margin,
        };
        head.validate()?;
        head.renormalize()?;
        Ok(head)
    }

    pub fn num_classes(&self) -> usize {
        self.weights.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(FcplError::InvalidArgument(format!("cosface scale {} must be > 0", self.scale)));
        }
        if !(0.0..1.0).contains(&self.margin) {
            return Err(FcplError::InvalidArgument(format!("cosface margin {} not in [0, 1)", self.margin)));
        }
        Ok(())
    }

    /// Rescale every class weight row to unit length.
    pub fn renormalize(&mut self) -> Result<()> {
        for mut row in self.weights.rows_mut() {
            let n = norm(row.as_slice().expect("standard layout"));
            if !(n > NORM_FLOOR) {
                return Err(FcplError::DegenerateNorm { norm: n });
            }
            row /= n;
        }
        Ok(())
    }
}

/// Back-propagate `grad_unit` (gradient w.r.t. `v / ‖v‖`) to `v`.
fn unit_backward(unit: &[f64], n: f64, grad_unit: &[f64]) -> Vec<f64> {
    let along: f64 = grad_unit.iter().zip(unit).map(|(g, u)| g * u).sum();
    grad_unit
        .iter()
        .zip(unit)
        .map(|(g, u)| (g - along * u) / n)
        .collect()
}

fn unit(v: &[f64]) -> Result<(Vec<f64>, f64)> {
    let n = norm(v);
    if !(n > NORM_FLOOR) {
        return Err(FcplError::DegenerateNorm { norm: n });
    }
    Ok((v.iter().map(|x| x / n).collect(), n))
}

/// `‖unit(a) − unit(b)‖` and its gradients w.r.t. the raw `a` and `b`.
pub fn unit_distance(a: &[f64], b: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    if a.len() != b.len() {
        return Err(FcplError::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    let (ua, na) = unit(a)?;
    let (ub, nb) = unit(b)?;
    let diff: Vec<f64> = ua.iter().zip(&ub).map(|(x, y)| x - y).collect();
    let dist = norm(&diff);
    if dist == 0.0 {
        return Ok((0.0, vec![0.0; a.len()], vec![0.0; b.len()]));
    }
    let dir: Vec<f64> = diff.iter().map(|d| d / dist).collect();
    let neg_dir: Vec<f64> = dir.iter().map(|d| -d).collect();
    Ok((dist, unit_backward(&ua, na, &dir), unit_backward(&ub, nb, &neg_dir)))
}

#[derive(Clone, Debug)]
pub struct CosFaceOutput {
    pub loss: f64,
    /// `batch x embed_dim`
    pub grad_embeddings: Array2<f64>,
    /// `num_classes x embed_dim`
    pub grad_weights: Array2<f64>,
    /// `batch x num_classes` cosines between unit embeddings and unit class
    /// weights (before the margin).
    pub cosines: Array2<f64>,
}

/// Mean over the batch of
/// `−log( e^{s(cosθ_y − m)} / (e^{s(cosθ_y − m)} + Σ_{j≠y} e^{s·cosθ_j}) )`.
/// Gradients flow through the normalization of both embeddings and class
/// weights.
pub fn cosface_loss(embeddings: &Array2<f64>, labels: &[usize], head: &ClassifierHead) -> Result<CosFaceOutput> {
    head.validate()?;
    let (batch, dim) = embeddings.dim();
    if batch == 0 {
        return Err(FcplError::InvalidArgument("cosface loss needs a non-empty batch".into()));
    }
    if labels.len() != batch {
        return Err(FcplError::DimensionMismatch {
            expected: batch,
            actual: labels.len(),
        });
    }
    if head.weights.ncols() != dim {
        return Err(FcplError::DimensionMismatch {
            expected: head.weights.ncols(),
            actual: dim,
        });
    }
    let classes = head.num_classes();
    if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(FcplError::InvalidArgument(format!("label {bad} >= {classes} classes")));
    }

    let normalize_rows = |m: &Array2<f64>| -> Result<(Array2<f64>, Vec<f64>)> {
        let mut out = m.clone();
        let mut norms = Vec::with_capacity(m.nrows());
        for mut row in out.rows_mut() {
            let n = norm(row.as_slice().expect("standard layout"));
            if !(n > NORM_FLOOR) {
                return Err(FcplError::DegenerateNorm { norm: n });
            }
            row /= n;
            norms.push(n);
        }
        Ok((out, norms))
    };
    let (u, u_norms) = normalize_rows(embeddings)?;
    let (wn, w_norms) = normalize_rows(&head.weights)?;

    let cosines = u.dot(&wn.t());
    let (s, m) = (head.scale, head.margin);
    let mut d_cos = Array2::<f64>::zeros((batch, classes));
    let mut total = 0.0;
    for b in 0..batch {
        let y = labels[b];
        let logit = |j: usize| s * (cosines[[b, j]] - if j == y { m } else { 0.0 });
        let max = (0..classes).map(logit).fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = (0..classes).map(|j| (logit(j) - max).exp()).sum();
        let log_z = max + denom.ln();
        total += log_z - logit(y);
        for j in 0..classes {
            let p = (logit(j) - log_z).exp();
            let target = if j == y { 1.0 } else { 0.0 };
            d_cos[[b, j]] = s * (p - target) / batch as f64;
        }
    }

    let d_u = d_cos.dot(&wn);
    let d_wn = d_cos.t().dot(&u);
    let back_rows = |grad_unit: &Array2<f64>, units: &Array2<f64>, norms: &[f64]| -> Array2<f64> {
        let mut out = Array2::zeros(grad_unit.dim());
        for (i, mut row) in out.rows_mut().into_iter().enumerate() {
            let g = grad_unit.row(i);
            let un = units.row(i);
            let v = unit_backward(un.as_slice().unwrap(), norms[i], g.as_slice().unwrap());
            row.assign(&ndarray::ArrayView1::from(&v));
        }
        out
    };
    Ok(CosFaceOutput {
        loss: total / batch as f64,
        grad_embeddings: back_rows(&d_u, &u, &u_norms),
        grad_weights: back_rows(&d_wn, &wn, &w_norms),
        cosines,
    })
}

/// Index of the candidate with a different class and the highest cosine
/// similarity to `anchor`; ties go to the lowest index.
pub fn hardest_negative(anchor: &[f64], candidates: &[(&[f64], usize)], anchor_class: usize) -> Result<usize> {
    let (ua, _) = unit(anchor)?;
    let mut best: Option<(usize, f64)> = None;
    for (i, (cand, class)) in candidates.iter().enumerate() {
        if *class == anchor_class {
            continue;
        }
        if cand.len() != anchor.len() {
            return Err(FcplError::DimensionMismatch {
                expected: anchor.len(),
                actual: cand.len(),
            });
        }
        let (uc, _) = unit(cand)?;
        let sim: f64 = ua.iter().zip(&uc).map(|(a, b)| a * b).sum();
        if best.is_none_or(|(_, s)| sim > s) {
            best = Some((i, sim));
        }
    }
    best.map(|(i, _)| i).ok_or(FcplError::NoNegativeAvailable)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TermOutput {
    pub loss: f64,
    /// One gradient per input embedding, in input order.
    pub grads: Vec<Vec<f64>>,
}

/// `Σ_i ‖unit(base_i) − unit(new_i)‖`; base features are constants, so only
/// gradients for `new_feats` are returned.
pub fn compat_loss(base_feats: &[RawEmbedding], new_feats: &[RawEmbedding], reduction: Reduction) -> Result<TermOutput> {
    if base_feats.len() != new_feats.len() {
        return Err(FcplError::DimensionMismatch {
            expected: base_feats.len(),
            actual: new_feats.len(),
        });
    }
    let k = reduction.factor(new_feats.len());
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(new_feats.len());
    for (f, g) in base_feats.iter().zip(new_feats) {
        let (d, _, grad_new) = unit_distance(f.as_slice(), g.as_slice())?;
        loss += d;
        grads.push(grad_new.into_iter().map(|x| x * k).collect());
    }
    Ok(TermOutput { loss: loss * k, grads })
}

/// `Σ_i ‖unit(x1_i) − unit(x2_i)‖` over positive pairs. Gradients come back
/// flattened as `[x1_0, x2_0, x1_1, x2_1, ...]`.
pub fn pos_loss(pairs: &[(RawEmbedding, RawEmbedding)], reduction: Reduction) -> Result<TermOutput> {
    if pairs.is_empty() {
        return Err(FcplError::InvalidArgument("positive-pair loss needs at least one pair".into()));
    }
    let k = reduction.factor(pairs.len());
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(2 * pairs.len());
    for (a, b) in pairs {
        let (d, ga, gb) = unit_distance(a.as_slice(), b.as_slice())?;
        loss += d;
        grads.push(ga.into_iter().map(|x| x * k).collect());
        grads.push(gb.into_iter().map(|x| x * k).collect());
    }
    Ok(TermOutput { loss: loss * k, grads })
}

/// A positive pair with the hardest negative mined for each member.
#[derive(Clone, Debug, PartialEq)]
pub struct NegQuad {
    pub p1: RawEmbedding,
    pub n1: RawEmbedding,
    pub p2: RawEmbedding,
    pub n2: RawEmbedding,
}

/// `½ Σ_i (‖unit(p1_i) − unit(n1_i)‖ + ‖unit(p2_i) − unit(n2_i)‖)`.
/// Gradients come back as `[p1_0, n1_0, p2_0, n2_0, p1_1, ...]`.
pub fn neg_loss(quads: &[NegQuad], reduction: Reduction) -> Result<TermOutput> {
    let k = 0.5 * reduction.factor(quads.len());
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(4 * quads.len());
    for q in quads {
        let (d1, gp1, gn1) = unit_distance(q.p1.as_slice(), q.n1.as_slice())?;
        let (d2, gp2, gn2) = unit_distance(q.p2.as_slice(), q.n2.as_slice())?;
        loss += d1 + d2;
        for g in [gp1, gn1, gp2, gn2] {
            grads.push(g.into_iter().map(|x| x * k).collect());
        }
    }
    Ok(TermOutput { loss: loss * k, grads })
}

pub fn combine_stage2(l_mtr: f64, l_com: f64, lambda_r: f64) -> f64 {
    l_mtr + lambda_r * l_com
}

/// Note the sign: the negative term is maximized.
pub fn combine_stage3(l_mtr: f64, l_com: f64, l_pos: f64, l_neg: f64, lambda_r: f64, lambda_pn: f64) -> f64 {
    combine_stage2(l_mtr, l_com, lambda_r) + lambda_pn * (l_pos - l_neg)
}

/// Per-term values of one objective evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub l_mtr: f64,
    pub l_com: f64,
    pub l_pos: f64,
    pub l_neg: f64,
    pub l_final: f64,
    pub lambda_r: f64,
    pub lambda_pn: f64,
}

impl LossBreakdown {
    pub fn stage2(l_mtr: f64, l_com: f64, lambda_r: f64) -> Self {
        LossBreakdown {
            l_mtr,
            l_com,
            l_final: combine_stage2(l_mtr, l_com, lambda_r),
            lambda_r,
            ..Default::default()
        }
    }

    pub fn stage3(l_mtr: f64, l_com: f64, l_pos: f64, l_neg: f64, lambda_r: f64, lambda_pn: f64) -> Self {
        LossBreakdown {
            l_mtr,
            l_com,
            l_pos,
            l_neg,
            l_final: combine_stage3(l_mtr, l_com, l_pos, l_neg, lambda_r, lambda_pn),
            lambda_r,
            lambda_pn,
        }
    }

    /// Whether `l_final` reproduces the weighted sum of its parts.
    pub fn is_consistent(&self) -> bool {
        let expect = combine_stage3(self.l_mtr, self.l_com, self.l_pos, self.l_neg, self.lambda_r, self.lambda_pn);
        (expect - self.l_final).abs() <= 1e-9
    }

    pub fn is_finite(&self) -> bool {
        [self.l_mtr, self.l_com, self.l_pos, self.l_neg, self.l_final]
            .iter()
            .all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn emb(v: &[f64]) -> RawEmbedding {
        RawEmbedding(v.to_vec())
    }

    /// Central differences of `f` w.r.t. every coordinate of `x`.
    fn numeric_grad(x: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        let eps = 1e-6;
        (0..x.len())
            .map(|i| {
                let mut p = x.to_vec();
                let mut m = x.to_vec();
                p[i] += eps;
                m[i] -= eps;
                (f(&p) - f(&m)) / (2.0 * eps)
            })
            .collect()
    }

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        for (x, y) in a.iter().zip(b) {
            let scale = x.abs().max(y.abs()).max(1e-6);
            assert!((x - y).abs() / scale < tol, "{a:?} vs {b:?}");
        }
    }

    fn head(weights: Array2<f64>, s: f64, m: f64) -> ClassifierHead {
        ClassifierHead {
            weights,
            scale: s,
            margin: m,
        }
    }

    #[test]
    fn cosface_two_class_closed_form() {
        // Embedding along class 0, class 1 opposite: cosines (1, −1).
        let h = head(array![[1.0, 0.0], [-1.0, 0.0]], 1.0, 0.0);
        let out = cosface_loss(&array![[2.0, 0.0]], &[0], &h).unwrap();
        let expect = (1.0 + (-2.0f64).exp()).ln();
        assert!((out.loss - expect).abs() < 1e-12);
        assert!((out.loss - 0.126928).abs() < 1e-6);
    }

    /// Plain softmax cross-entropy over `s · cos`, written independently.
    fn softmax_ce(e: &Array2<f64>, labels: &[usize], w: &Array2<f64>, s: f64) -> f64 {
        let mut total = 0.0;
        for (b, &y) in labels.iter().enumerate() {
            let en = e.row(b).dot(&e.row(b)).sqrt();
            let logits: Vec<f64> = w
                .rows()
                .into_iter()
                .map(|r| s * e.row(b).dot(&r) / (en * r.dot(&r).sqrt()))
                .collect();
            let z: f64 = logits.iter().map(|l| l.exp()).sum();
            total += -(logits[y].exp() / z).ln();
        }
        total / labels.len() as f64
    }

    #[test]
    fn cosface_without_margin_is_softmax_ce() {
        let e = array![[0.3, -1.2, 0.5], [1.0, 0.1, -0.4], [-0.2, 0.2, 0.9]];
        let w = array![[1.0, 0.5, 0.0], [0.0, -1.0, 2.0], [0.7, 0.7, 0.7], [-1.0, 0.0, 0.3]];
        let labels = [2, 0, 3];
        let out = cosface_loss(&e, &labels, &head(w.clone(), 4.0, 0.0)).unwrap();
        assert!((out.loss - softmax_ce(&e, &labels, &w, 4.0)).abs() < 1e-9);
    }

    #[test]
    fn cosface_margin_increases_loss() {
        let e = array![[0.3, -1.2, 0.5], [1.0, 0.1, -0.4]];
        let w = array![[1.0, 0.5, 0.0], [0.0, -1.0, 2.0], [0.7, 0.7, 0.7]];
        let mut prev = f64::NEG_INFINITY;
        for m in [0.0, 0.1, 0.2, 0.35, 0.5, 0.9] {
            let l = cosface_loss(&e, &[1, 2], &head(w.clone(), 30.0, m)).unwrap().loss;
            assert!(l > prev);
            prev = l;
        }
    }

    #[test]
    fn cosface_gradients_match_finite_differences() {
        let e = array![[0.3, -1.2, 0.5, 0.1], [1.0, 0.1, -0.4, 0.2], [-0.2, 0.2, 0.9, -0.7]];
        let w = array![[1.0, 0.5, 0.0, 0.1], [0.0, -1.0, 2.0, 0.4], [0.7, 0.7, 0.7, -0.3]];
        let labels = [1, 0, 2];
        let h = head(w.clone(), 5.0, 0.35);
        let out = cosface_loss(&e, &labels, &h).unwrap();
        let ge = numeric_grad(e.as_slice().unwrap(), |x| {
            let e2 = Array2::from_shape_vec(e.dim(), x.to_vec()).unwrap();
            cosface_loss(&e2, &labels, &h).unwrap().loss
        });
        assert_close(out.grad_embeddings.as_slice().unwrap(), &ge, 1e-5);
        let gw = numeric_grad(w.as_slice().unwrap(), |x| {
            let w2 = Array2::from_shape_vec(w.dim(), x.to_vec()).unwrap();
            cosface_loss(&e, &labels, &head(w2, 5.0, 0.35)).unwrap().loss
        });
        assert_close(out.grad_weights.as_slice().unwrap(), &gw, 1e-5);
    }

    #[test]
    fn cosface_rejects_bad_input() {
        let h = head(array![[1.0, 0.0], [0.0, 1.0]], 30.0, 0.35);
        assert!(matches!(
            cosface_loss(&array![[0.0, 0.0]], &[0], &h),
            Err(FcplError::DegenerateNorm { .. })
        ));
        assert!(cosface_loss(&array![[1.0, 0.0]], &[2], &h).is_err());
        assert!(cosface_loss(&Array2::zeros((0, 2)), &[], &h).is_err());
        assert!(head(array![[1.0, 0.0]], 30.0, 1.0).validate().is_err());
    }

    #[test]
    fn compat_examples() {
        let r = compat_loss(&[emb(&[1.0, 2.0])], &[emb(&[2.0, 4.0])], Reduction::Sum).unwrap();
        assert!(r.loss.abs() < 1e-15);
        let r = compat_loss(&[emb(&[1.0, 0.0])], &[emb(&[0.0, 1.0])], Reduction::Sum).unwrap();
        assert!((r.loss - 2f64.sqrt()).abs() < 1e-12);
        let r = compat_loss(&[emb(&[3.0, 4.0])], &[emb(&[4.0, 3.0])], Reduction::Sum).unwrap();
        assert!((r.loss - 0.2 * 2f64.sqrt()).abs() < 1e-12);
        assert!((r.loss - 0.2828427).abs() < 1e-7);
        assert!(compat_loss(&[emb(&[0.0, 0.0])], &[emb(&[0.0, 1.0])], Reduction::Sum).is_err());
        // Mean reduction divides by the item count.
        let two = [emb(&[1.0, 0.0]), emb(&[1.0, 0.0])];
        let r = compat_loss(&two, &[emb(&[0.0, 1.0]), emb(&[0.0, 1.0])], Reduction::Mean).unwrap();
        assert!((r.loss - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn pos_and_neg_examples() {
        let r = pos_loss(&[(emb(&[1.0, 1.0]), emb(&[1.0, 1.0]))], Reduction::Sum).unwrap();
        assert_eq!(r.loss, 0.0);
        assert!(r.grads.iter().flatten().all(|&g| g == 0.0));
        let r = pos_loss(&[(emb(&[1.0, 0.0]), emb(&[0.0, 1.0]))], Reduction::Sum).unwrap();
        assert!((r.loss - 2f64.sqrt()).abs() < 1e-12);
        assert!(pos_loss(&[], Reduction::Sum).is_err());

        let same = NegQuad {
            p1: emb(&[1.0, 2.0]),
            n1: emb(&[1.0, 2.0]),
            p2: emb(&[0.5, 0.1]),
            n2: emb(&[0.5, 0.1]),
        };
        assert_eq!(neg_loss(&[same], Reduction::Sum).unwrap().loss, 0.0);
        let ortho = NegQuad {
            p1: emb(&[1.0, 0.0]),
            n1: emb(&[0.0, 1.0]),
            p2: emb(&[0.0, 2.0]),
            n2: emb(&[3.0, 0.0]),
        };
        assert!((neg_loss(&[ortho], Reduction::Sum).unwrap().loss - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn distance_term_gradients_match_finite_differences() {
        let a = [0.3, -1.2, 0.5, 0.1, 0.8];
        let b = [1.0, 0.1, -0.4, 0.2, -0.3];
        let (_, ga, gb) = unit_distance(&a, &b).unwrap();
        assert_close(&ga, &numeric_grad(&a, |x| unit_distance(x, &b).unwrap().0), 1e-6);
        assert_close(&gb, &numeric_grad(&b, |x| unit_distance(&a, x).unwrap().0), 1e-6);
    }

    #[test]
    fn hardest_negative_examples() {
        let anchor = [1.0, 0.0];
        let c09 = [0.9, (1.0f64 - 0.81).sqrt()];
        let c05 = [0.5, (1.0f64 - 0.25).sqrt()];
        let c099 = [0.99, (1.0f64 - 0.9801).sqrt()];
        let cands: Vec<(&[f64], usize)> = vec![(&c05, 1), (&c09, 2), (&c099, 0)];
        assert_eq!(hardest_negative(&anchor, &cands, 0).unwrap(), 1);
        assert_eq!(hardest_negative(&anchor, &cands[..1], 0).unwrap(), 0);
        let same: Vec<(&[f64], usize)> = vec![(&c05, 0), (&c099, 0)];
        assert!(matches!(hardest_negative(&anchor, &same, 0), Err(FcplError::NoNegativeAvailable)));
        // Ties go to the lowest index.
        let tie: Vec<(&[f64], usize)> = vec![(&c099, 0), (&c05, 1), (&c05, 2)];
        assert_eq!(hardest_negative(&anchor, &tie, 0).unwrap(), 1);
    }

    #[test]
    fn combinations() {
        assert_eq!(combine_stage2(1.0, 2.0, 0.5), 2.0);
        assert_eq!(combine_stage2(1.7, 2.0, 0.0), 1.7);
        assert_eq!(combine_stage3(1.0, 1.0, 1.0, 1.0, 1.0, 1.0), 2.0);
        assert_eq!(combine_stage3(0.0, 0.0, 0.0, 2.0, 0.0, 0.5), -1.0);
        let b = LossBreakdown::stage3(0.3, 0.7, 1.1, 0.4, 1.0, 0.5);
        assert!(b.is_consistent());
    }

    fn vec_strategy(dim: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-2.0f64..2.0, dim).prop_filter("non-degenerate", |v| norm(v) > 1e-3)
    }

    proptest! {
        #[test]
        fn distance_terms_are_nonnegative_and_scale_invariant(
            a in vec_strategy(6), b in vec_strategy(6), c in 0.01f64..100.0
        ) {
            let (d, _, _) = unit_distance(&a, &b).unwrap();
            prop_assert!(d >= 0.0);
            let scaled: Vec<f64> = a.iter().map(|x| x * c).collect();
            let (d2, _, _) = unit_distance(&scaled, &b).unwrap();
            prop_assert!((d - d2).abs() < 1e-7);
        }

        #[test]
        fn stage3_without_pair_weight_is_stage2(
            mtr in 0.0f64..10.0, com in 0.0f64..10.0, pos in 0.0f64..10.0,
            neg in 0.0f64..10.0, lr in 0.0f64..5.0
        ) {
            let a = combine_stage3(mtr, com, pos, neg, lr, 0.0);
            prop_assert_eq!(a.to_bits(), combine_stage2(mtr, com, lr).to_bits());
        }

        #[test]
        fn hardest_negative_matches_exhaustive_search(
            anchor in vec_strategy(4),
            cands in prop::collection::vec((vec_strategy(4), 0usize..3), 1..12),
        ) {
            let refs: Vec<(&[f64], usize)> = cands.iter().map(|(v, c)| (v.as_slice(), *c)).collect();
            let got = hardest_negative(&anchor, &refs, 0);
            let cos = |v: &[f64]| {
                v.iter().zip(&anchor).map(|(a, b)| a * b).sum::<f64>() / (norm(v) * norm(&anchor))
            };
            let mut expect: Option<usize> = None;
            for (i, (v, c)) in cands.iter().enumerate() {
                if *c != 0 && expect.is_none_or(|e| cos(v) > cos(&cands[e].0)) {
                    expect = Some(i);
                }
            }
            match expect {
                Some(i) => prop_assert_eq!(got.unwrap(), i),
                None => prop_assert!(got.is_err()),
            }
        }

        #[test]
        fn cosface_cosines_are_scale_invariant(e in vec_strategy(3), c in 0.01f64..100.0) {
            let h = ClassifierHead::new(4, 3, 30.0, 0.35, 1).unwrap();
            let e1 = Array2::from_shape_vec((1, 3), e.clone()).unwrap();
            let e2 = e1.mapv(|x| x * c);
            let a = cosface_loss(&e1, &[1], &h).unwrap();
            let b = cosface_loss(&e2, &[1], &h).unwrap();
            for (x, y) in a.cosines.iter().zip(b.cosines.iter()) {
                prop_assert!((x - y).abs() < 1e-7);
            }
        }
    }
}
