//! The three trainable heads and their forward/backward passes.
//!
//! For one view with input `V` (N x D1):
//!
//! ```text
//! Z = relu(V W1 + b1) W2 + b2                      projecting network
//! S = softmax_rows((Z Wk1)(Z Wk2)^T / sqrt(D2))    sample-level attention
//! H = S (Z Wt)                                     consistent representation
//! P = softmax_rows(relu(H C1 + c1) C2 + c2)        clustering network
//! ```
//!
//! Gradients are derived by hand; see `backward_view`.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::embeddings_io::Batch;
use crate::error::{AeclError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub d1: usize,
    pub d2: usize,
    pub m: usize,
}

impl ModelDims {
    pub fn new(d1: usize, d2: usize, m: usize) -> Result<Self> {
        let dims = Self { d1, d2, m };
        dims.validate()?;
        Ok(dims)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d1 == 0 || self.d2 == 0 || self.m < 2 {
            return Err(AeclError::Config(format!(
                "model dimensions need d1 >= 1, d2 >= 1, m >= 2 (got {}, {}, {})",
                self.d1, self.d2, self.m
            )));
        }
        Ok(())
    }
}

/// Affine layer `x W + b` with `W` stored as `[fan_in x fan_out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Array2::zeros((fan_in, fan_out)),
            bias: Array1::zeros(fan_out),
        }
    }

    fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.weight) + &self.bias
    }
}

/// All trainable weights. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    pub dims: ModelDims,
    pub proj1: Dense,
    pub proj2: Dense,
    pub w_k1: Array2<f64>,
    pub w_k2: Array2<f64>,
    pub w_t: Array2<f64>,
    pub clu1: Dense,
    pub clu2: Dense,
}

/// Tensor names in declaration order (checkpoint order).
pub const TENSOR_NAMES: [&str; 11] = [
    "proj1.weight",
    "proj1.bias",
    "proj2.weight",
    "proj2.bias",
    "attn.w_k1",
    "attn.w_k2",
    "attn.w_t",
    "clu1.weight",
    "clu1.bias",
    "clu2.weight",
    "clu2.bias",
];

/// Number of leading tensors that belong to the projecting and attention
/// networks; the rest form the clustering head.
pub const ENCODER_SIDE_TENSORS: usize = 7;

impl ParameterSet {
    pub fn zeros(dims: ModelDims) -> Self {
        let ModelDims { d1, d2, m } = dims;
        Self {
            dims,
            proj1: Dense::zeros(d1, d2),
            proj2: Dense::zeros(d2, d2),
            w_k1: Array2::zeros((d2, d2)),
            w_k2: Array2::zeros((d2, d2)),
            w_t: Array2::zeros((d2, d2)),
            clu1: Dense::zeros(d2, d2),
            clu2: Dense::zeros(d2, m),
        }
    }

    /// Shape of every tensor in declaration order; biases report one row.
    pub fn shapes(&self) -> [(usize, usize); 11] {
        let ModelDims { d1, d2, m } = self.dims;
        [
            (d1, d2),
            (1, d2),
            (d2, d2),
            (1, d2),
            (d2, d2),
            (d2, d2),
            (d2, d2),
            (d2, d2),
            (1, d2),
            (d2, m),
            (1, m),
        ]
    }

    pub fn tensors(&self) -> [&[f64]; 11] {
        fn s<D: ndarray::Dimension>(a: &ndarray::Array<f64, D>) -> &[f64] {
            a.as_slice().expect("parameters are kept in standard layout")
        }
        [
            s(&self.proj1.weight),
            s(&self.proj1.bias),
            s(&self.proj2.weight),
            s(&self.proj2.bias),
            s(&self.w_k1),
            s(&self.w_k2),
            s(&self.w_t),
            s(&self.clu1.weight),
            s(&self.clu1.bias),
            s(&self.clu2.weight),
            s(&self.clu2.bias),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 11] {
        fn s<D: ndarray::Dimension>(a: &mut ndarray::Array<f64, D>) -> &mut [f64] {
            a.as_slice_mut()
                .expect("parameters are kept in standard layout")
        }
        [
            s(&mut self.proj1.weight),
            s(&mut self.proj1.bias),
            s(&mut self.proj2.weight),
            s(&mut self.proj2.bias),
            s(&mut self.w_k1),
            s(&mut self.w_k2),
            s(&mut self.w_t),
            s(&mut self.clu1.weight),
            s(&mut self.clu1.bias),
            s(&mut self.clu2.weight),
            s(&mut self.clu2.bias),
        ]
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Zeroes the clustering-head tensors.
    pub fn zero_cluster_head(&mut self) {
        for t in self.tensors_mut().into_iter().skip(ENCODER_SIDE_TENSORS) {
            t.fill(0.0);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn add_scaled(&mut self, other: &ParameterSet, factor: f64) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += factor * s;
            }
        }
    }
}

/// Xavier-uniform weights, zero biases.
pub fn init_params(dims: ModelDims, seed: u64) -> Result<ParameterSet> {
    dims.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParameterSet::zeros(dims);
    let mut xavier = |w: &mut Array2<f64>| {
        let (fan_in, fan_out) = w.dim();
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        w.iter_mut()
            .for_each(|x| *x = rng.random_range(-bound..=bound));
    };
    xavier(&mut params.proj1.weight);
    xavier(&mut params.proj2.weight);
    xavier(&mut params.w_k1);
    xavier(&mut params.w_k2);
    xavier(&mut params.w_t);
    xavier(&mut params.clu1.weight);
    xavier(&mut params.clu2.weight);
    Ok(params)
}

/// Row-wise softmax with per-row max subtraction.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|x| (x - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|x| x / sum);
    }
    out
}

/// Backward pass of [`softmax_rows`]: `dX = Y * (dY - rowsum(dY * Y))`.
fn softmax_rows_backward(y: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
    let inner = (dy * y).sum_axis(Axis(1)).insert_axis(Axis(1));
    y * &(dy - &inner)
}

fn relu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v.max(0.0))
}

fn check_cols(what: &str, m: &ArrayView2<f64>, expected: usize) -> Result<()> {
    if m.ncols() != expected {
        return Err(AeclError::ShapeMismatch(format!(
            "{what} has {} columns, expected {expected}",
            m.ncols()
        )));
    }
    Ok(())
}

/// Per-view outputs of the forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutputs {
    pub z: Array2<f64>,
    pub s: Array2<f64>,
    pub h: Array2<f64>,
    pub p: Array2<f64>,
}

/// Forward outputs plus every intermediate the backward pass needs.
#[derive(Debug, Clone)]
pub struct ViewCache {
    pub out: ForwardOutputs,
    input: Array2<f64>,
    proj_pre: Array2<f64>,
    proj_hidden: Array2<f64>,
    k1: Array2<f64>,
    k2: Array2<f64>,
    t: Array2<f64>,
    clu_pre: Array2<f64>,
    clu_hidden: Array2<f64>,
}

/// `Z = G_z(V)`.
pub fn project(params: &ParameterSet, v: &Array2<f64>) -> Result<Array2<f64>> {
    check_cols("projection input", &v.view(), params.dims.d1)?;
    Ok(params.proj2.apply(&relu(&params.proj1.apply(v))))
}

/// Sample-level attention: returns `(S, H)`.
pub fn attention_forward(
    params: &ParameterSet,
    z: &Array2<f64>,
) -> Result<(Array2<f64>, Array2<f64>)> {
    check_cols("attention input", &z.view(), params.dims.d2)?;
    let (s, h, ..) = attention_parts(params, z);
    Ok((s, h))
}

#[allow(clippy::type_complexity)]
fn attention_parts(
    params: &ParameterSet,
    z: &Array2<f64>,
) -> (
    Array2<f64>,
    Array2<f64>,
    Array2<f64>,
    Array2<f64>,
    Array2<f64>,
) {
    let k1 = z.dot(&params.w_k1);
    let k2 = z.dot(&params.w_k2);
    let t = z.dot(&params.w_t);
    let scale = 1.0 / (params.dims.d2 as f64).sqrt();
    let logits = k1.dot(&k2.t()) * scale;
    let s = softmax_rows(&logits);
    let h = s.dot(&t);
    (s, h, k1, k2, t)
}

/// `P = G_p(H)`.
pub fn cluster_probs(params: &ParameterSet, h: &Array2<f64>) -> Result<Array2<f64>> {
    check_cols("clustering input", &h.view(), params.dims.d2)?;
    let logits = params.clu2.apply(&relu(&params.clu1.apply(h)));
    Ok(softmax_rows(&logits))
}

/// Runs one view through all three heads, keeping intermediates.
pub fn forward_view(params: &ParameterSet, v: &Array2<f64>) -> Result<ViewCache> {
    check_cols("view", &v.view(), params.dims.d1)?;
    let proj_pre = params.proj1.apply(v);
    let proj_hidden = relu(&proj_pre);
    let z = params.proj2.apply(&proj_hidden);
    let (s, h, k1, k2, t) = attention_parts(params, &z);
    let clu_pre = params.clu1.apply(&h);
    let clu_hidden = relu(&clu_pre);
    let p = softmax_rows(&params.clu2.apply(&clu_hidden));
    Ok(ViewCache {
        out: ForwardOutputs { z, s, h, p },
        input: v.clone(),
        proj_pre,
        proj_hidden,
        k1,
        k2,
        t,
        clu_pre,
        clu_hidden,
    })
}

/// Both views through shared weights; attention stays within a view.
pub fn forward_all(
    params: &ParameterSet,
    batch: &Batch,
) -> Result<(ForwardOutputs, ForwardOutputs)> {
    let (c0, c1) = forward_batch(params, batch)?;
    Ok((c0.out, c1.out))
}

pub fn forward_batch(params: &ParameterSet, batch: &Batch) -> Result<(ViewCache, ViewCache)> {
    if batch.v0.dim() != batch.v1.dim() {
        return Err(AeclError::ShapeMismatch(format!(
            "batch views differ: {:?} vs {:?}",
            batch.v0.dim(),
            batch.v1.dim()
        )));
    }
    Ok((forward_view(params, &batch.v0)?, forward_view(params, &batch.v1)?))
}

/// Upstream gradients of a scalar loss with respect to one view's outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputGrads {
    pub z: Array2<f64>,
    pub s: Array2<f64>,
    pub h: Array2<f64>,
    pub p: Array2<f64>,
}

impl OutputGrads {
    pub fn zeros(n: usize, dims: ModelDims) -> Self {
        Self {
            z: Array2::zeros((n, dims.d2)),
            s: Array2::zeros((n, n)),
            h: Array2::zeros((n, dims.d2)),
            p: Array2::zeros((n, dims.m)),
        }
    }
}

fn relu_mask(pre: &Array2<f64>, grad: &Array2<f64>) -> Array2<f64> {
    let mut out = grad.clone();
    out.zip_mut_with(pre, |g, &x| {
        if x <= 0.0 {
            *g = 0.0
        }
    });
    out
}

fn accumulate_dense(acc: &mut Dense, input: &Array2<f64>, dout: &Array2<f64>) {
    acc.weight += &input.t().dot(dout);
    acc.bias += &dout.sum_axis(Axis(0));
}

/// Accumulates parameter gradients for one view into `grads`.
pub fn backward_view(
    params: &ParameterSet,
    cache: &ViewCache,
    upstream: &OutputGrads,
    grads: &mut ParameterSet,
) {
    // Clustering head.
    let d_logits = softmax_rows_backward(&cache.out.p, &upstream.p);
    accumulate_dense(&mut grads.clu2, &cache.clu_hidden, &d_logits);
    let d_clu_hidden = d_logits.dot(&params.clu2.weight.t());
    let d_clu_pre = relu_mask(&cache.clu_pre, &d_clu_hidden);
    accumulate_dense(&mut grads.clu1, &cache.out.h, &d_clu_pre);
    let d_h = &upstream.h + &d_clu_pre.dot(&params.clu1.weight.t());

    // Attention: H = S T, S = softmax(K1 K2^T / sqrt(D2)).
    let d_s = &upstream.s + &d_h.dot(&cache.t.t());
    let d_t = cache.out.s.t().dot(&d_h);
    let scale = 1.0 / (params.dims.d2 as f64).sqrt();
    let d_logits = softmax_rows_backward(&cache.out.s, &d_s) * scale;
    let d_k1 = d_logits.dot(&cache.k2);
    let d_k2 = d_logits.t().dot(&cache.k1);
    let z = &cache.out.z;
    grads.w_k1 += &z.t().dot(&d_k1);
    grads.w_k2 += &z.t().dot(&d_k2);
    grads.w_t += &z.t().dot(&d_t);
    let d_z = &upstream.z
        + &d_k1.dot(&params.w_k1.t())
        + d_k2.dot(&params.w_k2.t())
        + d_t.dot(&params.w_t.t());

    // Projecting network.
    accumulate_dense(&mut grads.proj2, &cache.proj_hidden, &d_z);
    let d_hidden = d_z.dot(&params.proj2.weight.t());
    let d_pre = relu_mask(&cache.proj_pre, &d_hidden);
    accumulate_dense(&mut grads.proj1, &cache.input, &d_pre);
}

/// Row-wise argmax; ties resolve to the lowest index.
pub fn argmax_rows(p: &Array2<f64>) -> Vec<usize> {
    p.axis_iter(Axis(0))
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, s};
    use rand_distr::StandardNormal;

    fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
    }

    fn random_params(dims: ModelDims, seed: u64) -> ParameterSet {
        let mut p = init_params(dims, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
        for t in p.tensors_mut() {
            for v in t.iter_mut() {
                *v += 0.3 * rng.sample::<f64, _>(StandardNormal);
            }
        }
        p
    }

    // Scalar loop reference for an affine layer.
    fn naive_affine(x: &Array2<f64>, w: &Array2<f64>, b: &Array1<f64>) -> Array2<f64> {
        let mut out = Array2::zeros((x.nrows(), w.ncols()));
        for i in 0..x.nrows() {
            for j in 0..w.ncols() {
                let mut acc = b[j];
                for k in 0..x.ncols() {
                    acc += x[[i, k]] * w[[k, j]];
                }
                out[[i, j]] = acc;
            }
        }
        out
    }

    fn naive_softmax(row: &[f64]) -> Vec<f64> {
        let e: Vec<f64> = row.iter().map(|x| x.exp()).collect();
        let s: f64 = e.iter().sum();
        e.iter().map(|x| x / s).collect()
    }

    fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn init_shapes_bounds_and_determinism() {
        let dims = ModelDims::new(4, 3, 2).unwrap();
        let p = init_params(dims, 0).unwrap();
        for (t, (r, c)) in p.tensors().iter().zip(p.shapes()) {
            assert_eq!(t.len(), r * c);
        }
        assert!(p.proj1.bias.iter().all(|&b| b == 0.0));
        assert!(p.clu2.bias.iter().all(|&b| b == 0.0));
        assert_eq!(p, init_params(dims, 0).unwrap());
        assert_ne!(p, init_params(dims, 1).unwrap());

        let big = init_params(ModelDims::new(768, 128, 20).unwrap(), 5).unwrap();
        let bound = (6.0f64 / (768.0 + 128.0)).sqrt();
        assert!(big.proj1.weight.iter().all(|w| w.abs() <= bound));
    }

    #[test]
    fn invalid_dims_rejected() {
        assert!(ModelDims::new(0, 3, 2).is_err());
        assert!(ModelDims::new(3, 3, 1).is_err());
    }

    #[test]
    fn project_zero_and_identity() {
        let dims = ModelDims::new(3, 3, 2).unwrap();
        let mut p = ParameterSet::zeros(dims);
        let v = array![[1.0, 2.0, 0.5], [0.0, 3.0, 1.0]];
        assert!(project(&p, &v).unwrap().iter().all(|&x| x == 0.0));
        p.proj1.weight = Array2::eye(3);
        p.proj2.weight = Array2::eye(3);
        assert_eq!(project(&p, &v).unwrap(), v);
        assert!(project(&p, &array![[1.0, 2.0]]).is_err());
    }

    #[test]
    fn project_matches_naive_oracle() {
        let dims = ModelDims::new(8, 4, 3).unwrap();
        let p = random_params(dims, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let v = random_matrix(5, 8, &mut rng);
        let hidden = naive_affine(&v, &p.proj1.weight, &p.proj1.bias).mapv(|x| x.max(0.0));
        let expected = naive_affine(&hidden, &p.proj2.weight, &p.proj2.bias);
        assert!(max_abs_diff(&project(&p, &v).unwrap(), &expected) < 1e-12);
    }

    #[test]
    fn attention_single_sample_and_uniform() {
        let dims = ModelDims::new(2, 2, 2).unwrap();
        let p = random_params(dims, 1);
        let z = array![[0.3, -1.2]];
        let (s, h) = attention_forward(&p, &z).unwrap();
        assert_eq!(s, array![[1.0]]);
        assert!(max_abs_diff(&h, &z.dot(&p.w_t)) < 1e-15);

        let mut p0 = p.clone();
        p0.w_k1.fill(0.0);
        let z = array![[1.0, 2.0], [0.5, -1.0], [3.0, 0.0]];
        let (s, h) = attention_forward(&p0, &z).unwrap();
        assert!(s.iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));
        let t = z.dot(&p0.w_t);
        let mean = t.mean_axis(Axis(0)).unwrap();
        for row in h.axis_iter(Axis(0)) {
            for (a, b) in row.iter().zip(&mean) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn attention_matches_naive_oracle() {
        let dims = ModelDims::new(2, 2, 2).unwrap();
        let p = random_params(dims, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let z = random_matrix(3, 2, &mut rng);
        let zero = Array1::zeros(2);
        let k1 = naive_affine(&z, &p.w_k1, &zero);
        let k2 = naive_affine(&z, &p.w_k2, &zero);
        let t = naive_affine(&z, &p.w_t, &zero);
        let mut s_ref = Array2::zeros((3, 3));
        for i in 0..3 {
            let logits: Vec<f64> = (0..3)
                .map(|j| (k1[[i, 0]] * k2[[j, 0]] + k1[[i, 1]] * k2[[j, 1]]) / 2f64.sqrt())
                .collect();
            for (j, v) in naive_softmax(&logits).into_iter().enumerate() {
                s_ref[[i, j]] = v;
            }
        }
        let mut h_ref = Array2::zeros((3, 2));
        for i in 0..3 {
            for d in 0..2 {
                h_ref[[i, d]] = (0..3).map(|j| s_ref[[i, j]] * t[[j, d]]).sum();
            }
        }
        let (s, h) = attention_forward(&p, &z).unwrap();
        assert!(max_abs_diff(&s, &s_ref) < 1e-12);
        assert!(max_abs_diff(&h, &h_ref) < 1e-12);
    }

    #[test]
    fn cluster_probs_uniform_and_peaked() {
        let dims = ModelDims::new(2, 2, 3).unwrap();
        let p = ParameterSet::zeros(dims);
        let h = array![[1.0, -2.0], [0.5, 0.5]];
        let probs = cluster_probs(&p, &h).unwrap();
        assert!(probs.iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));

        // Hidden unit 0 carries h[0]; output logits become [10 h0, 0, 0].
        let mut p = ParameterSet::zeros(dims);
        p.clu1.weight[[0, 0]] = 1.0;
        p.clu2.weight[[0, 0]] = 10.0;
        let probs = cluster_probs(&p, &array![[1.0, 0.0]]).unwrap();
        let expected = naive_softmax(&[10.0, 0.0, 0.0]);
        for (a, b) in probs.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((probs[[0, 0]] - 0.9999).abs() < 1e-3);
        assert!((probs[[0, 1]] - 0.00005).abs() < 1e-3);
    }

    #[test]
    fn softmax_is_shift_invariant_and_stable() {
        let x = array![[1.0, 2.0, 3.0], [1000.0, 1001.0, 999.0]];
        let shifted = &x + 123.0;
        assert!(max_abs_diff(&softmax_rows(&x), &softmax_rows(&shifted)) < 1e-15);
        assert!(softmax_rows(&x).iter().all(|v| v.is_finite()));
    }

    #[test]
    fn forward_all_identical_views_and_single_sample() {
        let dims = ModelDims::new(4, 3, 2).unwrap();
        let p = random_params(dims, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = random_matrix(5, 4, &mut rng);
        let batch = Batch {
            indices: (0..5).collect(),
            v0: v.clone(),
            v1: v.clone(),
        };
        let (a, b) = forward_all(&p, &batch).unwrap();
        assert_eq!(a, b);

        let one = Batch {
            indices: vec![0],
            v0: v.slice(s![0..1, ..]).to_owned(),
            v1: v.slice(s![1..2, ..]).to_owned(),
        };
        let (a, b) = forward_all(&p, &one).unwrap();
        assert_eq!(a.s, array![[1.0]]);
        assert_eq!(b.s, array![[1.0]]);
    }

    #[test]
    fn forward_all_is_composition_of_components() {
        let dims = ModelDims::new(6, 4, 3).unwrap();
        let p = random_params(dims, 12);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let batch = Batch {
            indices: (0..4).collect(),
            v0: random_matrix(4, 6, &mut rng),
            v1: random_matrix(4, 6, &mut rng),
        };
        let (o0, o1) = forward_all(&p, &batch).unwrap();
        for (o, v) in [(o0, &batch.v0), (o1, &batch.v1)] {
            let z = project(&p, v).unwrap();
            let (s, h) = attention_forward(&p, &z).unwrap();
            let probs = cluster_probs(&p, &h).unwrap();
            assert_eq!(o.z, z);
            assert_eq!(o.s, s);
            assert_eq!(o.h, h);
            assert_eq!(o.p, probs);
        }
    }

    #[test]
    fn argmax_ties_go_low() {
        let p = array![[0.25, 0.25, 0.25, 0.25], [0.1, 0.45, 0.45, 0.0]];
        assert_eq!(argmax_rows(&p), vec![0, 1]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn outputs_are_row_stochastic(seed in 0u64..10_000, n in 1usize..7, scale in 0.01f64..50.0) {
                let dims = ModelDims::new(5, 4, 3).unwrap();
                let p = random_params(dims, seed);
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
                let v = random_matrix(n, 5, &mut rng) * scale;
                let cache = forward_view(&p, &v).unwrap();
                for row in cache.out.s.axis_iter(Axis(0)) {
                    prop_assert!((row.sum() - 1.0).abs() < 1e-6);
                    prop_assert!(row.iter().all(|&x| (0.0..=1.0).contains(&x)));
                }
                for row in cache.out.p.axis_iter(Axis(0)) {
                    prop_assert!((row.sum() - 1.0).abs() < 1e-6);
                    prop_assert!(row.iter().all(|&x| (0.0..=1.0).contains(&x)));
                }
            }

            #[test]
            fn permutation_equivariance(seed in 0u64..10_000) {
                let dims = ModelDims::new(5, 4, 3).unwrap();
                let p = random_params(dims, seed);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let v = random_matrix(6, 5, &mut rng);
                let perm = crate::embeddings_io::epoch_permutation(6, seed, 0);
                let vp = v.select(Axis(0), &perm);
                let a = forward_view(&p, &v).unwrap().out;
                let b = forward_view(&p, &vp).unwrap().out;
                prop_assert!(max_abs_diff(&a.z.select(Axis(0), &perm), &b.z) < 1e-12);
                prop_assert!(max_abs_diff(&a.h.select(Axis(0), &perm), &b.h) < 1e-12);
                prop_assert!(max_abs_diff(&a.p.select(Axis(0), &perm), &b.p) < 1e-12);
                let s_perm = a.s.select(Axis(0), &perm).select(Axis(1), &perm);
                prop_assert!(max_abs_diff(&s_perm, &b.s) < 1e-12);
            }
        }
    }
}
