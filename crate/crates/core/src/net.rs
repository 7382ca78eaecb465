//! Two-layer MLP embedding network with hand-written backward pass.
//!
//! `embedding = W2 · relu(W1 · x + b1) + b2`, where `x` is the flattened
//! image. The ReLU subgradient at exactly zero is zero.

use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::seq::index::sample;
use rand_distr::{Distribution, Normal};

use crate::codec::{Reader, Writer};
use crate::error::{FcplError, Result};
use crate::seed;
use crate::transform::{Image, CHANNELS, DEFAULT_HEIGHT, DEFAULT_WIDTH};

/// Norms at or below this are rejected by [`l2_normalize`].
pub const NORM_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NetDims {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
}

impl Default for NetDims {
    fn default() -> Self {
        NetDims {
            input_dim: DEFAULT_WIDTH * DEFAULT_HEIGHT * CHANNELS,
            hidden_dim: 128,
            embed_dim: 32,
        }
    }
}

impl NetDims {
    pub fn new(input_dim: usize, hidden_dim: usize, embed_dim: usize) -> Self {
        NetDims {
            input_dim,
            hidden_dim,
            embed_dim,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 || self.embed_dim == 0 {
            return Err(FcplError::InvalidArgument(format!("network dims must be positive: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

/// Gradients with the same shapes as [`NetworkParams`]. Also used as the
/// momentum buffer during training.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrads {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

/// Network output before L2 normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct RawEmbedding(pub Vec<f64>);

impl RawEmbedding {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

pub fn init_params(seed: u64, dims: NetDims) -> Result<NetworkParams> {
    dims.validate()?;
    let mut rng = seed::rng(seed);
    let mut layer = |rows: usize, cols: usize| {
        let normal = Normal::new(0.0, 1.0 / (cols as f64).sqrt()).expect("positive std");
        Array2::from_shape_simple_fn((rows, cols), || normal.sample(&mut rng))
    };
    let w1 = layer(dims.hidden_dim, dims.input_dim);
    let w2 = layer(dims.embed_dim, dims.hidden_dim);
    Ok(NetworkParams {
        w1,
        b1: Array1::zeros(dims.hidden_dim),
        w2,
        b2: Array1::zeros(dims.embed_dim),
    })
}

impl NetworkParams {
    pub fn zeros(dims: NetDims) -> Self {
        NetworkParams {
            w1: Array2::zeros((dims.hidden_dim, dims.input_dim)),
            b1: Array1::zeros(dims.hidden_dim),
            w2: Array2::zeros((dims.embed_dim, dims.hidden_dim)),
            b2: Array1::zeros(dims.embed_dim),
        }
    }

    pub fn dims(&self) -> NetDims {
        NetDims {
            input_dim: self.w1.ncols(),
            hidden_dim: self.w1.nrows(),
            embed_dim: self.w2.nrows(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }

    pub(crate) fn slices(&self) -> [&[f64]; 4] {
        [
            self.w1.as_slice().expect("standard layout"),
            self.b1.as_slice().expect("standard layout"),
            self.w2.as_slice().expect("standard layout"),
            self.b2.as_slice().expect("standard layout"),
        ]
    }

    pub(crate) fn slices_mut(&mut self) -> [&mut [f64]; 4] {
        [
            self.w1.as_slice_mut().expect("standard layout"),
            self.b1.as_slice_mut().expect("standard layout"),
            self.w2.as_slice_mut().expect("standard layout"),
            self.b2.as_slice_mut().expect("standard layout"),
        ]
    }

    /// Heavy-ball momentum step: `v = momentum * v + g; p -= lr * v`.
    pub fn momentum_step(&mut self, velocity: &mut ParamGrads, grads: &ParamGrads, lr: f64, momentum: f64) {
        for ((p, v), g) in self.slices_mut().into_iter().zip(velocity.slices_mut()).zip(grads.slices()) {
            for ((p, v), g) in p.iter_mut().zip(v.iter_mut()).zip(g) {
                *v = momentum * *v + g;
                *p -= lr * *v;
            }
        }
    }
}

impl ParamGrads {
    pub fn zeros(dims: NetDims) -> Self {
        let p = NetworkParams::zeros(dims);
        ParamGrads {
            w1: p.w1,
            b1: p.b1,
            w2: p.w2,
            b2: p.b2,
        }
    }

    pub(crate) fn slices(&self) -> [&[f64]; 4] {
        [
            self.w1.as_slice().expect("standard layout"),
            self.b1.as_slice().expect("standard layout"),
            self.w2.as_slice().expect("standard layout"),
            self.b2.as_slice().expect("standard layout"),
        ]
    }

    pub(crate) fn slices_mut(&mut self) -> [&mut [f64]; 4] {
        [
            self.w1.as_slice_mut().expect("standard layout"),
            self.b1.as_slice_mut().expect("standard layout"),
            self.w2.as_slice_mut().expect("standard layout"),
            self.b2.as_slice_mut().expect("standard layout"),
        ]
    }

    pub fn add_assign(&mut self, other: &ParamGrads) {
        self.w1 += &other.w1;
        self.b1 += &other.b1;
        self.w2 += &other.w2;
        self.b2 += &other.b2;
    }

    pub fn max_abs(&self) -> f64 {
        self.slices()
            .iter()
            .flat_map(|s| s.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }
}

/// Pixels are shifted by this before entering the network so inputs are
/// centred on zero.
pub const PIXEL_CENTER: f64 = 0.5;

pub fn image_to_row(img: &Image) -> Vec<f64> {
    img.pixels().iter().map(|&p| p as f64 - PIXEL_CENTER).collect()
}

/// Stack flattened images into a `batch x input_dim` matrix.
pub fn images_to_matrix<'a>(images: impl IntoIterator<Item = &'a Image>) -> Result<Array2<f64>> {
    let mut rows = 0;
    let mut width = None;
    let mut data = Vec::new();
    for img in images {
        match width {
            None => width = Some(img.len()),
            Some(w) if w != img.len() => {
                return Err(FcplError::DimensionMismatch {
                    expected: w,
                    actual: img.len(),
                })
            }
            _ => {}
        }
        data.extend(image_to_row(img));
        rows += 1;
    }
    Ok(Array2::from_shape_vec((rows, width.unwrap_or(0)), data).expect("consistent shape"))
}

/// Activations kept from a batched forward pass for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    pub pre: Array2<f64>,
    pub hidden: Array2<f64>,
    pub out: Array2<f64>,
}

pub fn forward_batch(params: &NetworkParams, x: &Array2<f64>) -> Result<ForwardCache> {
    if x.ncols() != params.w1.ncols() {
        return Err(FcplError::DimensionMismatch {
            expected: params.w1.ncols(),
            actual: x.ncols(),
        });
    }
    let pre = x.dot(&params.w1.t()) + &params.b1;
    let hidden = pre.mapv(|z| if z > 0.0 { z } else { 0.0 });
    let out = hidden.dot(&params.w2.t()) + &params.b2;
    Ok(ForwardCache { pre, hidden, out })
}

/// Gradients of `Σ_b out[b] · upstream[b]`, summed over the batch.
pub fn backward_batch(
    params: &NetworkParams,
    x: &Array2<f64>,
    cache: &ForwardCache,
    upstream: &Array2<f64>,
) -> Result<ParamGrads> {
    if upstream.dim() != cache.out.dim() {
        return Err(FcplError::DimensionMismatch {
            expected: cache.out.len(),
            actual: upstream.len(),
        });
    }
    let w2 = upstream.t().dot(&cache.hidden);
    let b2 = upstream.sum_axis(Axis(0));
    let mut d_pre = upstream.dot(&params.w2);
    ndarray::Zip::from(&mut d_pre)
        .and(&cache.pre)
        .for_each(|d, &z| {
            if z <= 0.0 {
                *d = 0.0;
            }
        });
    let w1 = d_pre.t().dot(x);
    let b1 = d_pre.sum_axis(Axis(0));
    Ok(ParamGrads { w1, b1, w2, b2 })
}

pub fn forward(params: &NetworkParams, img: &Image) -> Result<RawEmbedding> {
    let x = images_to_matrix([img])?;
    let cache = forward_batch(params, &x)?;
    Ok(RawEmbedding(cache.out.row(0).to_vec()))
}

pub fn forward_many(params: &NetworkParams, images: &[&Image]) -> Result<Vec<RawEmbedding>> {
    if images.is_empty() {
        return Ok(Vec::new());
    }
    let x = images_to_matrix(images.iter().copied())?;
    let cache = forward_batch(params, &x)?;
    Ok(cache.out.rows().into_iter().map(|r| RawEmbedding(r.to_vec())).collect())
}

pub fn backward(params: &NetworkParams, img: &Image, upstream_grad: &[f64]) -> Result<ParamGrads> {
    let x = images_to_matrix([img])?;
    let cache = forward_batch(params, &x)?;
    let up = Array2::from_shape_vec((1, upstream_grad.len()), upstream_grad.to_vec()).expect("row vector");
    if upstream_grad.len() != params.b2.len() {
        return Err(FcplError::DimensionMismatch {
            expected: params.b2.len(),
            actual: upstream_grad.len(),
        });
    }
    backward_batch(params, &x, &cache, &up)
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn l2_normalize(v: &[f64]) -> Result<Vec<f64>> {
    let n = norm(v);
    if !(n > NORM_FLOOR) {
        return Err(FcplError::DegenerateNorm { norm: n });
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// Minimum number of coordinates probed by [`grad_check`].
pub const GRAD_CHECK_COORDS: usize = 200;

/// Compare analytic gradients against central finite differences on a
/// deterministic subsample of parameter coordinates and return the largest
/// relative error `|a - n| / max(|a|, |n|)`. Coordinates where both
/// magnitudes are below 1e-8 are skipped.
///
/// `objective` returns the loss and its analytic gradient at the given
/// parameters.
pub fn grad_check<F>(params: &NetworkParams, objective: F, eps: f64) -> Result<f64>
where
    F: Fn(&NetworkParams) -> Result<(f64, ParamGrads)>,
{
    grad_check_seeded(params, objective, eps, 0x6C0DE)
}

pub fn grad_check_seeded<F>(params: &NetworkParams, objective: F, eps: f64, sample_seed: u64) -> Result<f64>
where
    F: Fn(&NetworkParams) -> Result<(f64, ParamGrads)>,
{
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(FcplError::InvalidArgument(format!("finite-difference step {eps} must be positive")));
    }
    let (_, analytic) = objective(params)?;
    let coords = probe_coordinates(params, sample_seed);
    let mut worst = 0.0f64;
    let mut probe = params.clone();
    for (tensor, idx) in coords {
        let orig = probe.slices()[tensor][idx];
        probe.slices_mut()[tensor][idx] = orig + eps;
        let (plus, _) = objective(&probe)?;
        probe.slices_mut()[tensor][idx] = orig - eps;
        let (minus, _) = objective(&probe)?;
        probe.slices_mut()[tensor][idx] = orig;

        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic.slices()[tensor][idx];
        let scale = a.abs().max(numeric.abs());
        if scale < 1e-8 {
            continue;
        }
        worst = worst.max((a - numeric).abs() / scale);
    }
    Ok(worst)
}

/// About a quarter of the probes go to each tensor (all of it when smaller),
/// the rest are topped up from the weight matrices.
fn probe_coordinates(params: &NetworkParams, sample_seed: u64) -> Vec<(usize, usize)> {
    let mut rng = seed::rng(sample_seed);
    let lens: Vec<usize> = params.slices().iter().map(|s| s.len()).collect();
    let share = GRAD_CHECK_COORDS / 4;
    let mut picked: Vec<Vec<usize>> = lens
        .iter()
        .map(|&len| sample(&mut rng, len, share.min(len)).into_vec())
        .collect();
    let mut total: usize = picked.iter().map(Vec::len).sum();
    for tensor in [0usize, 2] {
        if total >= GRAD_CHECK_COORDS {
            break;
        }
        let want = (picked[tensor].len() + GRAD_CHECK_COORDS - total).min(lens[tensor]);
        total += want - picked[tensor].len();
        picked[tensor] = sample(&mut rng, lens[tensor], want).into_vec();
    }
    picked
        .into_iter()
        .enumerate()
        .flat_map(|(t, idx)| idx.into_iter().map(move |i| (t, i)))
        .collect()
}

const CHECKPOINT_VERSION: u32 = 1;

/// Checkpoint layout: magic `FCPL`, u32 version, u32 input/hidden/embed
/// dims, then W1, b1, W2, b2 as row-major little-endian f32.
pub fn save_checkpoint(path: &Path, params: &NetworkParams) -> Result<()> {
    let dims = params.dims();
    let mut w = Writer::new();
    w.bytes(b"FCPL")
        .u32(CHECKPOINT_VERSION)
        .u32(dims.input_dim as u32)
        .u32(dims.hidden_dim as u32)
        .u32(dims.embed_dim as u32);
    for s in params.slices() {
        w.f32s(s.iter().map(|&v| v as f32));
    }
    w.finish(path)
}

pub fn load_checkpoint(path: &Path) -> Result<NetworkParams> {
    let mut r = Reader::open(path)?;
    r.magic(b"FCPL")?;
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(r.corrupt(format!("unsupported checkpoint version {version}")));
    }
    let dims = NetDims::new(r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
    dims.validate().map_err(|e| r.corrupt(e.to_string()))?;
    let mut params = NetworkParams::zeros(dims);
    for s in params.slices_mut() {
        let vals = r.f32s(s.len())?;
        for (d, v) in s.iter_mut().zip(vals) {
            *d = v as f64;
        }
    }
    r.expect_end()?;
    if !params.is_finite() {
        return Err(r.corrupt("non-finite parameter"));
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transform::synthesize_original;

    fn small_dims() -> NetDims {
        NetDims::new(3072, 16, 8)
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let a = init_params(3, NetDims::default()).unwrap();
        let b = init_params(3, NetDims::default()).unwrap();
        assert_eq!(a, b);
        assert!(a.b1.iter().all(|&v| v == 0.0));
        assert!(a.b2.iter().all(|&v| v == 0.0));
        let n = a.w1.len() as f64;
        let mean = a.w1.sum() / n;
        let std = (a.w1.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let target = 1.0 / 3072f64.sqrt();
        assert!((std / target - 1.0).abs() < 0.2, "std {std} vs {target}");
        assert!(init_params(0, NetDims::new(0, 1, 1)).is_err());
    }

    #[test]
    fn golden_forward() {
        let golden = [
            -0.061012670, -0.414800997, -0.037859423, 0.219611519, 0.268474216, 0.063253277, -0.050434596,
            0.408001364, -0.185128239, 0.127683244, -0.088735527, 0.115162265, 0.153286950, 0.180030337,
            0.158255684, 0.001800096, -0.000965490, -0.143582625, 0.023124945, -0.186979747, -0.104773079,
            -0.121413342, 0.224644812, -0.075618613, -0.006334967, -0.186584070, -0.187842444, 0.052260357,
            -0.328506714, -0.011839538, 0.159629424, -0.084633013,
        ];
        let params = init_params(3, NetDims::default()).unwrap();
        let e = forward(&params, &synthesize_original(7, 0)).unwrap();
        assert_eq!(e.dim(), 32);
        for (a, b) in e.0.iter().zip(golden) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn zero_params_give_zero_embedding() {
        let p = NetworkParams::zeros(NetDims::default());
        let e = forward(&p, &synthesize_original(7, 0)).unwrap();
        assert!(e.0.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn last_layer_is_linear() {
        let mut p = init_params(3, small_dims()).unwrap();
        p.b2.fill(0.25);
        let img = synthesize_original(7, 0);
        let e = forward(&p, &img).unwrap();
        p.w2 *= 3.0;
        p.b2 *= 3.0;
        let e3 = forward(&p, &img).unwrap();
        for (a, b) in e.0.iter().zip(&e3.0) {
            assert!((3.0 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let p = init_params(3, NetDims::new(10, 4, 2)).unwrap();
        assert!(matches!(
            forward(&p, &synthesize_original(7, 0)),
            Err(FcplError::DimensionMismatch { .. })
        ));
        let p = init_params(3, small_dims()).unwrap();
        assert!(backward(&p, &synthesize_original(7, 0), &[1.0; 3]).is_err());
    }

    #[test]
    fn backward_edge_cases() {
        let p = init_params(5, small_dims()).unwrap();
        let img = synthesize_original(1, 2);
        let g = backward(&p, &img, &[0.0; 8]).unwrap();
        assert_eq!(g.max_abs(), 0.0);
        let up = [0.5, -1.0, 2.0, 0.0, 1.5, -0.25, 3.0, 1.0];
        let g = backward(&p, &img, &up).unwrap();
        assert_eq!(g.b2.to_vec(), up.to_vec());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let p = init_params(11, small_dims()).unwrap();
        let img = synthesize_original(2, 3);
        let up: Vec<f64> = (0..8).map(|i| (i as f64 * 0.7).sin()).collect();
        let objective = |q: &NetworkParams| -> Result<(f64, ParamGrads)> {
            let e = forward(q, &img)?;
            let v = e.0.iter().zip(&up).map(|(a, b)| a * b).sum();
            Ok((v, backward(q, &img, &up)?))
        };
        let err = grad_check(&p, objective, 1e-4).unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn grad_check_on_quadratic_and_bad_eps() {
        let p = init_params(2, NetDims::new(20, 10, 4)).unwrap();
        let quad = |q: &NetworkParams| -> Result<(f64, ParamGrads)> {
            let v = q.slices().iter().flat_map(|s| s.iter()).map(|x| x * x).sum();
            Ok((
                v,
                ParamGrads {
                    w1: &q.w1 * 2.0,
                    b1: &q.b1 * 2.0,
                    w2: &q.w2 * 2.0,
                    b2: &q.b2 * 2.0,
                },
            ))
        };
        let err = grad_check(&p, quad, 1e-4).unwrap();
        assert!(err < 1e-8, "quadratic error {err}");
        assert!(grad_check(&p, quad, 0.0).is_err());
        assert!(probe_coordinates(&init_params(1, small_dims()).unwrap(), 1).len() >= GRAD_CHECK_COORDS);
    }

    #[test]
    fn normalize_cases() {
        assert_eq!(l2_normalize(&[3.0, 4.0]).unwrap(), vec![0.6, 0.8]);
        let u = l2_normalize(&[0.6, 0.8]).unwrap();
        assert!((u[0] - 0.6).abs() < 1e-15 && (u[1] - 0.8).abs() < 1e-15);
        assert!(matches!(l2_normalize(&[0.0; 4]), Err(FcplError::DegenerateNorm { .. })));
    }

    #[test]
    fn checkpoint_round_trip_at_f32() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.fcpl");
        let p = init_params(4, NetDims::new(12, 5, 3)).unwrap();
        save_checkpoint(&path, &p).unwrap();
        let q = load_checkpoint(&path).unwrap();
        assert_eq!(q.dims(), p.dims());
        for (a, b) in p.slices().iter().zip(q.slices()) {
            for (x, y) in a.iter().zip(b) {
                assert_eq!(*x as f32, *y as f32);
            }
        }
        // Saving the loaded params reproduces the file exactly.
        let path2 = dir.path().join("m2.fcpl");
        save_checkpoint(&path2, &q).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());

        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 1]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(FcplError::CorruptFile { .. })));
    }
}
