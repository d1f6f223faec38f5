//! Forward and backward passes for every layer type both sub-networks need.
//! There is no general-purpose autodiff tape: each forward returns an
//! explicit cache, and the matching backward consumes it by value, so a
//! cache can never be reused.
//!
//! Conventions: convolution is cross-correlation (no kernel flip), max-pool
//! ties pick the first element in row-major window order, and ReLU uses
//! subgradient 0 at exactly 0.

use crate::rng::SeededRng;
use crate::tensor::{gemm, Scalar, Shape, Tensor};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// 2D convolution hyperparameters. `pad = (kernel - 1) / 2` keeps spatial
/// size at stride 1 ("same"-style).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvSpec {
    /// "Same"-padded conv with the given kernel and stride.
    pub fn same(in_ch: usize, out_ch: usize, kernel: usize, stride: usize) -> Self {
        ConvSpec {
            in_ch,
            out_ch,
            kernel,
            stride,
            pad: (kernel - 1) / 2,
        }
    }

    /// Output spatial extent for one axis: floor((n + 2p - k)/s) + 1.
    pub fn out_extent(&self, n: usize) -> usize {
        (n + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn weight_shape(&self) -> Shape {
        Shape::new([self.out_ch, self.in_ch, self.kernel, self.kernel]).expect("positive dims")
    }

    pub fn param_count(&self) -> usize {
        self.out_ch * self.in_ch * self.kernel * self.kernel + self.out_ch
    }

    fn fan_in(&self) -> usize {
        self.in_ch * self.kernel * self.kernel
    }
}

/// Fully connected layer hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenseSpec {
    pub in_features: usize,
    pub out_features: usize,
}

impl DenseSpec {
    pub fn new(in_features: usize, out_features: usize) -> Self {
        DenseSpec {
            in_features,
            out_features,
        }
    }

    pub fn weight_shape(&self) -> Shape {
        Shape::new([self.in_features, self.out_features]).expect("positive dims")
    }

    pub fn param_count(&self) -> usize {
        self.in_features * self.out_features + self.out_features
    }
}

/// Declarative layer description.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerSpec {
    Conv2d(ConvSpec),
    Dense(DenseSpec),
    Relu,
    /// 2x2 window, stride 2.
    MaxPool2,
    Flatten,
    Concat2,
    SoftmaxCrossEntropy {
        num_classes: usize,
    },
}

impl LayerSpec {
    pub fn has_params(&self) -> bool {
        matches!(self, LayerSpec::Conv2d(_) | LayerSpec::Dense(_))
    }

    pub fn param_count(&self) -> usize {
        match self {
            LayerSpec::Conv2d(c) => c.param_count(),
            LayerSpec::Dense(d) => d.param_count(),
            _ => 0,
        }
    }
}

/// Learnable parameters of a Conv2d or Dense layer. Conv weights are
/// `[out_ch, in_ch, k, k]`, dense weights `[in, out]`, biases `[out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T: Scalar> {
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> LayerParams<T> {
    pub fn count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn cast<U: Scalar>(&self) -> LayerParams<U> {
        LayerParams {
            weights: self.weights.cast(),
            bias: self.bias.cast(),
        }
    }
}

/// He-style initialisation std for a layer: sqrt(2 / fan_in).
pub fn he_std(spec: &LayerSpec) -> Result<f64> {
    let fan_in = match spec {
        LayerSpec::Conv2d(c) => c.fan_in(),
        LayerSpec::Dense(d) => d.in_features,
        other => {
            return Err(Error::Argument(format!(
                "layer {other:?} has no parameters to initialise"
            )))
        }
    };
    Ok((2.0 / fan_in as f64).sqrt())
}

/// Weights ~ Normal(0, sqrt(2/fan_in)), biases zero. Deterministic for a
/// fixed rng stream.
pub fn init_params<T: Scalar>(spec: &LayerSpec, rng: &mut SeededRng) -> Result<LayerParams<T>> {
    let std = he_std(spec)?;
    let (w_shape, out) = match spec {
        LayerSpec::Conv2d(c) => (c.weight_shape(), c.out_ch),
        LayerSpec::Dense(d) => (d.weight_shape(), d.out_features),
        _ => unreachable!("he_std rejected parameterless layers"),
    };
    Ok(LayerParams {
        weights: rng.normal_tensor(w_shape, 0.0, std)?,
        bias: Tensor::zeros(Shape::new([out])?),
    })
}

// ---------------------------------------------------------------------------
// Conv2d
// ---------------------------------------------------------------------------

/// Cache from [`conv2d_forward`]: the im2col matrix plus shapes.
#[derive(Debug)]
pub struct ConvCache<T: Scalar> {
    in_shape: Shape,
    /// `[in_ch*k*k, out_h*out_w]`, row-major.
    col: Vec<T>,
    out_h: usize,
    out_w: usize,
}

fn im2col<T: Scalar>(spec: &ConvSpec, x: &Tensor<T>, out_h: usize, out_w: usize) -> Vec<T> {
    let (h, w) = (x.dims()[1], x.dims()[2]);
    let k = spec.kernel;
    let s = spec.stride;
    let p = spec.pad as isize;
    let cols = out_h * out_w;
    let mut col = vec![T::zero(); spec.in_ch * k * k * cols];
    let xd = x.data();
    for ci in 0..spec.in_ch {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut col[row * cols..(row + 1) * cols];
                for oy in 0..out_h {
                    let iy = (oy * s) as isize + ky as isize - p;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src_base = (ci * h + iy as usize) * w;
                    let dst_base = oy * out_w;
                    for ox in 0..out_w {
                        let ix = (ox * s) as isize + kx as isize - p;
                        if ix >= 0 && ix < w as isize {
                            dst[dst_base + ox] = xd[src_base + ix as usize];
                        }
                    }
                }
            }
        }
    }
    col
}

fn check_conv_input<T: Scalar>(spec: &ConvSpec, x: &Tensor<T>) -> Result<(usize, usize)> {
    if x.shape().rank() != 3 {
        return Err(Error::Shape(format!(
            "conv2d input must be rank-3 [C,H,W], got {}",
            x.shape()
        )));
    }
    let (c, h, w) = (x.dims()[0], x.dims()[1], x.dims()[2]);
    if c != spec.in_ch {
        return Err(Error::Shape(format!(
            "conv2d expected {} input channels, got {c}",
            spec.in_ch
        )));
    }
    // The padded extent must cover the kernel.
    if h + 2 * spec.pad < spec.kernel || w + 2 * spec.pad < spec.kernel {
        return Err(Error::Shape(format!(
            "conv2d input {h}x{w} too small for kernel {} with pad {}",
            spec.kernel, spec.pad
        )));
    }
    Ok((spec.out_extent(h), spec.out_extent(w)))
}

/// Cross-correlation with per-output-channel bias. Output spatial size is
/// floor((n + 2p - k)/s) + 1 per axis.
pub fn conv2d_forward<T: Scalar>(
    spec: &ConvSpec,
    params: &LayerParams<T>,
    x: &Tensor<T>,
) -> Result<(Tensor<T>, ConvCache<T>)> {
    let (out_h, out_w) = check_conv_input(spec, x)?;
    let cols = out_h * out_w;
    let kk = spec.in_ch * spec.kernel * spec.kernel;
    let col = im2col(spec, x, out_h, out_w);
    // Weights [out_ch, in_ch, k, k] are row-major, i.e. already [out_ch, kk].
    let mut y = gemm(params.weights.data(), spec.out_ch, kk, &col, cols);
    for (o, chunk) in y.chunks_mut(cols).enumerate() {
        let b = params.bias.data()[o];
        for v in chunk.iter_mut() {
            *v = *v + b;
        }
    }
    let out = Tensor::from_vec(Shape::new([spec.out_ch, out_h, out_w])?, y)?;
    let cache = ConvCache {
        in_shape: x.shape().clone(),
        col,
        out_h,
        out_w,
    };
    Ok((out, cache))
}

/// Exact gradients of the conv forward map; weight and bias gradients
/// accumulate over all spatial positions in ascending order.
pub fn conv2d_backward<T: Scalar>(
    spec: &ConvSpec,
    params: &LayerParams<T>,
    cache: ConvCache<T>,
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let expected = [spec.out_ch, cache.out_h, cache.out_w];
    if dy.dims() != expected {
        return Err(Error::Shape(format!(
            "conv2d_backward dy shape {} does not match forward output [{}x{}x{}]",
            dy.shape(),
            expected[0],
            expected[1],
            expected[2]
        )));
    }
    let cols = cache.out_h * cache.out_w;
    let kk = spec.in_ch * spec.kernel * spec.kernel;

    let mut db = vec![T::zero(); spec.out_ch];
    for (o, chunk) in dy.data().chunks(cols).enumerate() {
        let mut acc = T::zero();
        for &g in chunk {
            acc = acc + g;
        }
        db[o] = acc;
    }

    // dW = dy [out_ch, S] x col^T [S, kk]
    let mut col_t = vec![T::zero(); cols * kk];
    for r in 0..kk {
        for s in 0..cols {
            col_t[s * kk + r] = cache.col[r * cols + s];
        }
    }
    let dw = gemm(dy.data(), spec.out_ch, cols, &col_t, kk);

    // dcol = W^T [kk, out_ch] x dy [out_ch, S]
    let wd = params.weights.data();
    let mut w_t = vec![T::zero(); kk * spec.out_ch];
    for o in 0..spec.out_ch {
        for r in 0..kk {
            w_t[r * spec.out_ch + o] = wd[o * kk + r];
        }
    }
    let dcol = gemm(&w_t, kk, spec.out_ch, dy.data(), cols);

    // col2im scatter-add back to the input grid.
    let (h, w) = (cache.in_shape.dims()[1], cache.in_shape.dims()[2]);
    let k = spec.kernel;
    let s = spec.stride;
    let p = spec.pad as isize;
    let mut dx = vec![T::zero(); cache.in_shape.len()];
    for ci in 0..spec.in_ch {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &dcol[row * cols..(row + 1) * cols];
                for oy in 0..cache.out_h {
                    let iy = (oy * s) as isize + ky as isize - p;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_base = (ci * h + iy as usize) * w;
                    let src_base = oy * cache.out_w;
                    for ox in 0..cache.out_w {
                        let ix = (ox * s) as isize + kx as isize - p;
                        if ix >= 0 && ix < w as isize {
                            let d = dst_base + ix as usize;
                            dx[d] = dx[d] + src[src_base + ox];
                        }
                    }
                }
            }
        }
    }

    Ok((
        Tensor::from_vec(cache.in_shape, dx)?,
        Tensor::from_vec(spec.weight_shape(), dw)?,
        Tensor::from_vec(Shape::new([spec.out_ch])?, db)?,
    ))
}

// ---------------------------------------------------------------------------
// Dense
// ---------------------------------------------------------------------------

#[derive(Debug)]
pub struct DenseCache<T: Scalar> {
    x: Tensor<T>,
}

/// y = x^T W + b for a rank-1 input.
pub fn dense_forward<T: Scalar>(
    spec: &DenseSpec,
    params: &LayerParams<T>,
    x: &Tensor<T>,
) -> Result<(Tensor<T>, DenseCache<T>)> {
    if x.shape().rank() != 1 || x.len() != spec.in_features {
        return Err(Error::Shape(format!(
            "dense expected rank-1 input of length {}, got {}",
            spec.in_features,
            x.shape()
        )));
    }
    let y = gemm(x.data(), 1, spec.in_features, params.weights.data(), spec.out_features);
    let mut y = Tensor::from_vec(Shape::new([spec.out_features])?, y)?;
    for (v, &b) in y.data_mut().iter_mut().zip(params.bias.data()) {
        *v = *v + b;
    }
    Ok((y, DenseCache { x: x.clone() }))
}

pub fn dense_backward<T: Scalar>(
    spec: &DenseSpec,
    params: &LayerParams<T>,
    cache: DenseCache<T>,
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    if dy.shape().rank() != 1 || dy.len() != spec.out_features {
        return Err(Error::Shape(format!(
            "dense_backward dy must be rank-1 of length {}, got {}",
            spec.out_features,
            dy.shape()
        )));
    }
    let (n_in, n_out) = (spec.in_features, spec.out_features);
    let wd = params.weights.data();
    let xd = cache.x.data();
    let dyd = dy.data();

    let mut dx = vec![T::zero(); n_in];
    for (i, dv) in dx.iter_mut().enumerate() {
        let row = &wd[i * n_out..(i + 1) * n_out];
        let mut acc = T::zero();
        for (&wv, &g) in row.iter().zip(dyd) {
            acc = acc + wv * g;
        }
        *dv = acc;
    }

    let mut dw = vec![T::zero(); n_in * n_out];
    for i in 0..n_in {
        let xi = xd[i];
        let row = &mut dw[i * n_out..(i + 1) * n_out];
        for (o, &g) in row.iter_mut().zip(dyd) {
            *o = xi * g;
        }
    }

    Ok((
        Tensor::from_vec(Shape::new([n_in])?, dx)?,
        Tensor::from_vec(spec.weight_shape(), dw)?,
        dy.clone(),
    ))
}

// ---------------------------------------------------------------------------
// ReLU
// ---------------------------------------------------------------------------

#[derive(Debug)]
pub struct ReluCache {
    mask: Vec<bool>,
}

/// y = max(x, 0) elementwise.
pub fn relu<T: Scalar>(x: &Tensor<T>) -> (Tensor<T>, ReluCache) {
    let mask: Vec<bool> = x.data().iter().map(|&v| v > T::zero()).collect();
    let y = x.map(|v| if v > T::zero() { v } else { T::zero() });
    (y, ReluCache { mask })
}

/// dx = dy where x > 0, else 0 (subgradient 0 at exactly 0).
pub fn relu_backward<T: Scalar>(cache: ReluCache, dy: &Tensor<T>) -> Result<Tensor<T>> {
    if dy.len() != cache.mask.len() {
        return Err(Error::Shape(format!(
            "relu_backward dy length {} does not match cache length {}",
            dy.len(),
            cache.mask.len()
        )));
    }
    let data = dy
        .data()
        .iter()
        .zip(cache.mask.iter())
        .map(|(&g, &m)| if m { g } else { T::zero() })
        .collect();
    Tensor::from_vec(dy.shape().clone(), data)
}

// ---------------------------------------------------------------------------
// MaxPool 2x2 stride 2
// ---------------------------------------------------------------------------

#[derive(Debug)]
pub struct PoolCache {
    in_shape: Shape,
    /// Flat input index of each output element's argmax.
    argmax: Vec<usize>,
}

/// 2x2 stride-2 max pool; H and W must be even.
pub fn maxpool2<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, PoolCache)> {
    if x.shape().rank() != 3 {
        return Err(Error::Shape(format!(
            "maxpool2 input must be rank-3 [C,H,W], got {}",
            x.shape()
        )));
    }
    let (c, h, w) = (x.dims()[0], x.dims()[1], x.dims()[2]);
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape(format!(
            "maxpool2 requires even spatial dims, got {h}x{w}"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let xd = x.data();
    let mut y = vec![T::zero(); c * oh * ow];
    let mut argmax = vec![0usize; c * oh * ow];
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let base = (ch * h + 2 * oy) * w + 2 * ox;
                // Row-major window scan; strictly-greater keeps the first max.
                let mut best_idx = base;
                let mut best = xd[base];
                for &cand in &[base + 1, base + w, base + w + 1] {
                    if xd[cand] > best {
                        best = xd[cand];
                        best_idx = cand;
                    }
                }
                let o = (ch * oh + oy) * ow + ox;
                y[o] = best;
                argmax[o] = best_idx;
            }
        }
    }
    Ok((
        Tensor::from_vec(Shape::new([c, oh, ow])?, y)?,
        PoolCache {
            in_shape: x.shape().clone(),
            argmax,
        },
    ))
}

/// Routes each dy element to its window's argmax; zeros elsewhere. Gradient
/// mass is conserved: sum(dx) = sum(dy).
pub fn maxpool2_backward<T: Scalar>(cache: PoolCache, dy: &Tensor<T>) -> Result<Tensor<T>> {
    if dy.len() != cache.argmax.len() {
        return Err(Error::Shape(format!(
            "maxpool2_backward dy length {} does not match cache length {}",
            dy.len(),
            cache.argmax.len()
        )));
    }
    let mut dx = vec![T::zero(); cache.in_shape.len()];
    for (&idx, &g) in cache.argmax.iter().zip(dy.data()) {
        dx[idx] = dx[idx] + g;
    }
    Tensor::from_vec(cache.in_shape, dx)
}

// ---------------------------------------------------------------------------
// Flatten / Concat2
// ---------------------------------------------------------------------------

#[derive(Debug)]
pub struct FlattenCache {
    in_shape: Shape,
}

pub fn flatten<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, FlattenCache)> {
    let cache = FlattenCache {
        in_shape: x.shape().clone(),
    };
    let y = x.clone().reshape(Shape::new([x.len()])?)?;
    Ok((y, cache))
}

pub fn flatten_backward<T: Scalar>(cache: FlattenCache, dy: &Tensor<T>) -> Result<Tensor<T>> {
    dy.clone().reshape(cache.in_shape)
}

#[derive(Debug)]
pub struct ConcatCache {
    split: usize,
}

/// y = a followed by b, both rank-1.
pub fn concat2<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<(Tensor<T>, ConcatCache)> {
    if a.shape().rank() != 1 || b.shape().rank() != 1 {
        return Err(Error::Shape(format!(
            "concat2 requires rank-1 inputs, got {} and {}",
            a.shape(),
            b.shape()
        )));
    }
    let mut data = Vec::with_capacity(a.len() + b.len());
    data.extend_from_slice(a.data());
    data.extend_from_slice(b.data());
    let y = Tensor::from_vec(Shape::new([a.len() + b.len()])?, data)?;
    Ok((y, ConcatCache { split: a.len() }))
}

pub fn concat2_backward<T: Scalar>(
    cache: ConcatCache,
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    if dy.shape().rank() != 1 || dy.len() <= cache.split {
        return Err(Error::Shape(format!(
            "concat2_backward dy length {} incompatible with split {}",
            dy.len(),
            cache.split
        )));
    }
    let da = Tensor::from_vec(Shape::new([cache.split])?, dy.data()[..cache.split].to_vec())?;
    let db = Tensor::from_vec(
        Shape::new([dy.len() - cache.split])?,
        dy.data()[cache.split..].to_vec(),
    )?;
    Ok((da, db))
}

// ---------------------------------------------------------------------------
// Softmax cross-entropy
// ---------------------------------------------------------------------------

#[derive(Debug)]
pub struct XentCache<T: Scalar> {
    probs: Tensor<T>,
    label: usize,
}

impl<T: Scalar> XentCache<T> {
    pub fn probs(&self) -> &Tensor<T> {
        &self.probs
    }
}

/// loss = -log softmax(logits)[label], computed with max-subtraction.
pub fn softmax_xent<T: Scalar>(logits: &Tensor<T>, label: usize) -> Result<(T, XentCache<T>)> {
    if logits.shape().rank() != 1 {
        return Err(Error::Shape(format!(
            "softmax_xent logits must be rank-1, got {}",
            logits.shape()
        )));
    }
    let k = logits.len();
    if label >= k {
        return Err(Error::Argument(format!(
            "label {label} out of range for {k} classes"
        )));
    }
    let mut max = logits.data()[0];
    for &v in logits.data() {
        if v > max {
            max = v;
        }
    }
    let mut sum = T::zero();
    let mut probs = Vec::with_capacity(k);
    for &v in logits.data() {
        let e = (v - max).exp();
        probs.push(e);
        sum = sum + e;
    }
    for p in probs.iter_mut() {
        *p = *p / sum;
    }
    let loss = -(logits.data()[label] - max - sum.ln());
    let cache = XentCache {
        probs: Tensor::from_vec(logits.shape().clone(), probs)?,
        label,
    };
    Ok((loss, cache))
}

/// dlogits = softmax(logits) - onehot(label).
pub fn softmax_xent_backward<T: Scalar>(cache: XentCache<T>) -> Tensor<T> {
    let mut d = cache.probs;
    let data = d.data_mut();
    data[cache.label] = data[cache.label] - T::one();
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(dims: &[usize], vals: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(Shape::new(dims.to_vec()).unwrap(), vals.to_vec()).unwrap()
    }

    #[test]
    fn conv_all_ones_box_counts() {
        // 1x3x3 ones through an all-ones 3x3 filter, same-pad, stride 1:
        // each output counts the in-bounds taps (4 at corners, 9 in the middle).
        let spec = ConvSpec::same(1, 1, 3, 1);
        let params = LayerParams {
            weights: Tensor::full(spec.weight_shape(), 1.0f64),
            bias: Tensor::zeros(Shape::new([1]).unwrap()),
        };
        let x = Tensor::full(Shape::new([1, 3, 3]).unwrap(), 1.0f64);
        let (y, _) = conv2d_forward(&spec, &params, &x).unwrap();
        assert_eq!(y.at3(0, 1, 1), 9.0);
        assert_eq!(y.at3(0, 0, 0), 4.0);
        assert_eq!(y.at3(0, 0, 2), 4.0);
        assert_eq!(y.at3(0, 2, 0), 4.0);
        assert_eq!(y.at3(0, 2, 2), 4.0);
        assert_eq!(y.at3(0, 0, 1), 6.0);
    }

    #[test]
    fn conv_stride2_halves_448() {
        let spec = ConvSpec::same(3, 1, 5, 2);
        let mut rng = SeededRng::new(0, 0);
        let params = init_params::<f32>(&LayerSpec::Conv2d(spec), &mut rng).unwrap();
        let x = Tensor::<f32>::zeros(Shape::new([3, 448, 448]).unwrap());
        let (y, _) = conv2d_forward(&spec, &params, &x).unwrap();
        assert_eq!(y.dims(), &[1, 224, 224]);
    }

    #[test]
    fn conv_zero_input_zero_bias_gives_zero() {
        let spec = ConvSpec::same(2, 3, 3, 1);
        let mut rng = SeededRng::new(1, 0);
        let mut params = init_params::<f64>(&LayerSpec::Conv2d(spec), &mut rng).unwrap();
        params.bias = Tensor::zeros(Shape::new([3]).unwrap());
        let x = Tensor::zeros(Shape::new([2, 6, 6]).unwrap());
        let (y, _) = conv2d_forward(&spec, &params, &x).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_channel_mismatch() {
        let spec = ConvSpec::same(3, 1, 3, 1);
        let params = LayerParams {
            weights: Tensor::<f64>::zeros(spec.weight_shape()),
            bias: Tensor::zeros(Shape::new([1]).unwrap()),
        };
        let x = Tensor::zeros(Shape::new([2, 4, 4]).unwrap());
        assert!(matches!(
            conv2d_forward(&spec, &params, &x),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn conv_backward_zero_dy() {
        let spec = ConvSpec::same(2, 3, 3, 1);
        let mut rng = SeededRng::new(2, 0);
        let params = init_params::<f64>(&LayerSpec::Conv2d(spec), &mut rng).unwrap();
        let x = rng
            .normal_tensor::<f64>(Shape::new([2, 4, 4]).unwrap(), 0.0, 1.0)
            .unwrap();
        let (y, cache) = conv2d_forward(&spec, &params, &x).unwrap();
        let dy = Tensor::zeros(y.shape().clone());
        let (dx, dw, db) = conv2d_backward(&spec, &params, cache, &dy).unwrap();
        assert!(dx.iter().all(|&v| v == 0.0));
        assert!(dw.iter().all(|&v| v == 0.0));
        assert!(db.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_1x1_scalar_chain_rule() {
        // 1x1 input, 1x1 kernel w: dx = w*g, dW = x*g, db = g.
        let spec = ConvSpec {
            in_ch: 1,
            out_ch: 1,
            kernel: 1,
            stride: 1,
            pad: 0,
        };
        let params = LayerParams {
            weights: t(&[1, 1, 1, 1], &[3.0]),
            bias: t(&[1], &[0.5]),
        };
        let x = t(&[1, 1, 1], &[2.0]);
        let (y, cache) = conv2d_forward(&spec, &params, &x).unwrap();
        assert_eq!(y.data()[0], 6.5);
        let dy = t(&[1, 1, 1], &[7.0]);
        let (dx, dw, db) = conv2d_backward(&spec, &params, cache, &dy).unwrap();
        assert_eq!(dx.data()[0], 21.0);
        assert_eq!(dw.data()[0], 14.0);
        assert_eq!(db.data()[0], 7.0);
    }

    #[test]
    fn conv_k1_equals_scale_plus_bias() {
        let spec = ConvSpec {
            in_ch: 1,
            out_ch: 1,
            kernel: 1,
            stride: 1,
            pad: 0,
        };
        let params = LayerParams {
            weights: t(&[1, 1, 1, 1], &[2.5]),
            bias: t(&[1], &[-1.0]),
        };
        let mut rng = SeededRng::new(3, 0);
        let x = rng
            .normal_tensor::<f64>(Shape::new([1, 5, 5]).unwrap(), 0.0, 1.0)
            .unwrap();
        let (y, _) = conv2d_forward(&spec, &params, &x).unwrap();
        let expected = x.scale(2.5).map(|v| v - 1.0);
        for (a, b) in y.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn dense_identity_and_hand_case() {
        let spec = DenseSpec::new(2, 2);
        let id = LayerParams {
            weights: t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]),
            bias: t(&[2], &[0.0, 0.0]),
        };
        let x = t(&[2], &[1.0, 2.0]);
        let (y, _) = dense_forward(&spec, &id, &x).unwrap();
        assert_eq!(y.data(), x.data());

        let p = LayerParams {
            weights: t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]),
            bias: t(&[2], &[3.0, 4.0]),
        };
        let (y, _) = dense_forward(&spec, &p, &x).unwrap();
        assert_eq!(y.data(), &[4.0, 6.0]);
    }

    #[test]
    fn dense_length_mismatch() {
        let spec = DenseSpec::new(3, 2);
        let p = LayerParams {
            weights: Tensor::<f64>::zeros(spec.weight_shape()),
            bias: Tensor::zeros(Shape::new([2]).unwrap()),
        };
        let x = t(&[2], &[1.0, 2.0]);
        assert!(matches!(dense_forward(&spec, &p, &x), Err(Error::Shape(_))));
    }

    #[test]
    fn relu_cases() {
        let x = t(&[3], &[-1.0, 0.0, 2.0]);
        let (y, cache) = relu(&x);
        assert_eq!(y.data(), &[0.0, 0.0, 2.0]);
        let dy = t(&[3], &[5.0, 5.0, 5.0]);
        let dx = relu_backward(cache, &dy).unwrap();
        assert_eq!(dx.data(), &[0.0, 0.0, 5.0]);

        let neg = t(&[2], &[-3.0, -0.5]);
        let (y, cache) = relu(&neg);
        assert!(y.iter().all(|&v| v == 0.0));
        let dx = relu_backward(cache, &t(&[2], &[1.0, 1.0])).unwrap();
        assert!(dx.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn maxpool_cases() {
        let x = t(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let (y, cache) = maxpool2(&x).unwrap();
        assert_eq!(y.data(), &[4.0]);
        let dx = maxpool2_backward(cache, &t(&[1, 1, 1], &[5.0])).unwrap();
        assert_eq!(dx.data(), &[0.0, 0.0, 0.0, 5.0]);

        // All-equal window: first element in row-major order wins.
        let ties = t(&[1, 2, 2], &[7.0, 7.0, 7.0, 7.0]);
        let (_, cache) = maxpool2(&ties).unwrap();
        let dx = maxpool2_backward(cache, &t(&[1, 1, 1], &[3.0])).unwrap();
        assert_eq!(dx.data(), &[3.0, 0.0, 0.0, 0.0]);

        let odd = Tensor::<f64>::zeros(Shape::new([1, 3, 4]).unwrap());
        assert!(matches!(maxpool2(&odd), Err(Error::Shape(_))));
    }

    #[test]
    fn maxpool_conserves_gradient_mass() {
        let mut rng = SeededRng::new(4, 0);
        let x = rng
            .normal_tensor::<f64>(Shape::new([3, 8, 8]).unwrap(), 0.0, 1.0)
            .unwrap();
        let (y, cache) = maxpool2(&x).unwrap();
        let dy = rng.normal_tensor::<f64>(y.shape().clone(), 0.0, 1.0).unwrap();
        let dx = maxpool2_backward(cache, &dy).unwrap();
        assert!((dx.sum() - dy.sum()).abs() < 1e-12);
    }

    #[test]
    fn concat_cases() {
        let a = t(&[1], &[1.0]);
        let b = t(&[2], &[2.0, 3.0]);
        let (y, cache) = concat2(&a, &b).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0, 3.0]);
        let (da, db) = concat2_backward(cache, &t(&[3], &[4.0, 5.0, 6.0])).unwrap();
        assert_eq!(da.data(), &[4.0]);
        assert_eq!(db.data(), &[5.0, 6.0]);
    }

    #[test]
    fn softmax_xent_uniform_is_ln_k() {
        let logits = Tensor::<f64>::full(Shape::new([80]).unwrap(), 0.3);
        let (loss, _) = softmax_xent(&logits, 17).unwrap();
        assert!((loss - (80.0f64).ln()).abs() < 1e-12);
        assert!((loss - 4.3820).abs() < 1e-4);
    }

    #[test]
    fn softmax_xent_saturated_is_zero() {
        let mut vals = vec![0.0; 10];
        vals[4] = 1e6;
        let logits = t(&[10], &vals);
        let (loss, _) = softmax_xent(&logits, 4).unwrap();
        assert!(loss.abs() < 1e-9);
        assert!(loss >= 0.0);
    }

    #[test]
    fn softmax_xent_gradient_sums_to_zero() {
        let mut rng = SeededRng::new(5, 0);
        let logits = rng
            .normal_tensor::<f64>(Shape::new([12]).unwrap(), 0.0, 3.0)
            .unwrap();
        let (_, cache) = softmax_xent(&logits, 7).unwrap();
        let d = softmax_xent_backward(cache);
        assert!(d.sum().abs() < 1e-6);
        assert!(d.iter().all(|&v| v > -1.0 && v < 1.0));
    }

    #[test]
    fn softmax_xent_label_out_of_range() {
        let logits = t(&[3], &[0.0, 0.0, 0.0]);
        assert!(matches!(softmax_xent(&logits, 3), Err(Error::Argument(_))));
    }

    #[test]
    fn init_dense_bias_zero() {
        let mut rng = SeededRng::new(6, 0);
        let p = init_params::<f64>(&LayerSpec::Dense(DenseSpec::new(4, 4)), &mut rng).unwrap();
        assert_eq!(p.bias.data(), &[0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn init_he_std_formula() {
        let spec = LayerSpec::Conv2d(ConvSpec::same(64, 32, 3, 1));
        let std = he_std(&spec).unwrap();
        assert!((std - (2.0f64 / 576.0).sqrt()).abs() < 1e-12);
        assert!((std - 0.05893).abs() < 1e-5);
    }

    #[test]
    fn init_deterministic_per_seed() {
        let spec = LayerSpec::Conv2d(ConvSpec::same(3, 8, 5, 2));
        let mut r1 = SeededRng::new(42, 3);
        let mut r2 = SeededRng::new(42, 3);
        let p1 = init_params::<f32>(&spec, &mut r1).unwrap();
        let p2 = init_params::<f32>(&spec, &mut r2).unwrap();
        assert_eq!(p1.weights, p2.weights);
    }
}
