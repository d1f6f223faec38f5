//! Input-gradient saliency maps: the gradient of a target-class logit with
//! respect to an input image, reduced over channels by max |.| and min-max
//! normalised to [0,1].

use crate::model::ModelParams;
use crate::tensor::{Scalar, Shape, Tensor};
use crate::train::{Network, StreamInputs};
use crate::{Error, Result};

/// Reduces a [C,H,W] input gradient to a normalised [H,W] map. A constant
/// gradient normalises to all zeros (no division error).
pub fn saliency_from_gradient<T: Scalar>(dx: &Tensor<T>) -> Result<Tensor<T>> {
    if dx.shape().rank() != 3 {
        return Err(Error::Shape(format!(
            "input gradient must be rank-3 [C,H,W], got {}",
            dx.shape()
        )));
    }
    let (c, h, w) = (dx.dims()[0], dx.dims()[1], dx.dims()[2]);
    let mut map = vec![T::zero(); h * w];
    for y in 0..h {
        for x in 0..w {
            let mut m = T::zero();
            for ch in 0..c {
                let v = dx.at3(ch, y, x).abs();
                if v > m {
                    m = v;
                }
            }
            map[y * w + x] = m;
        }
    }
    let mut lo = map[0];
    let mut hi = map[0];
    for &v in &map {
        if v < lo {
            lo = v;
        }
        if v > hi {
            hi = v;
        }
    }
    let range = hi - lo;
    let out = if range > T::zero() {
        map.into_iter().map(|v| (v - lo) / range).collect()
    } else {
        vec![T::zero(); h * w]
    };
    Tensor::from_vec(Shape::new([h, w])?, out)
}

/// One normalised [H,W] map per input stream (fovea first, context second
/// for the fused model).
pub fn saliency_map(
    net: &Network,
    params: &ModelParams<f32>,
    inputs: &StreamInputs<f32>,
    target_class: usize,
) -> Result<Vec<Tensor<f32>>> {
    let grads = net.input_gradients(params, inputs, target_class)?;
    grads.iter().map(saliency_from_gradient).collect()
}
