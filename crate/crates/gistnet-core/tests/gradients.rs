//! Finite-difference oracles for every layer's backward pass and for the
//! full fused model, all in float64. The checker perturbs each element by
//! 1e-5 and compares central differences against the analytic gradients at
//! relative tolerance 1e-4.

use gistnet_core::layers::{
    concat2, concat2_backward, conv2d_backward, conv2d_forward, dense_backward, dense_forward,
    init_params, maxpool2, maxpool2_backward, relu, relu_backward, softmax_xent,
    softmax_xent_backward, ConvSpec, DenseSpec, LayerParams, LayerSpec,
};
use gistnet_core::model::{
    build_gistnet, FoveaStage, GistNetConfig, ModelParams, PeripheryConfig,
};
use gistnet_core::optim::{grad_check, relative_error, GRAD_CHECK_EPSILON};
use gistnet_core::rng::SeededRng;
use gistnet_core::tensor::{Shape, Tensor};
use gistnet_core::train::{Network, StreamInputs};

const TOL: f64 = 1e-4;

/// Central finite differences of `loss` over every element of `x`.
fn fd_input_gradient(
    x: &Tensor<f64>,
    loss: impl Fn(&Tensor<f64>) -> f64,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let mut plus = x.data().to_vec();
        plus[i] += GRAD_CHECK_EPSILON;
        let mut minus = x.data().to_vec();
        minus[i] -= GRAD_CHECK_EPSILON;
        let lp = loss(&Tensor::from_vec(x.shape().clone(), plus).unwrap());
        let lm = loss(&Tensor::from_vec(x.shape().clone(), minus).unwrap());
        out.push((lp - lm) / (2.0 * GRAD_CHECK_EPSILON));
    }
    out
}

fn assert_close(analytic: &[f64], numeric: &[f64], what: &str) {
    assert_eq!(analytic.len(), numeric.len());
    let mut worst = 0.0f64;
    for (&a, &n) in analytic.iter().zip(numeric) {
        worst = worst.max(relative_error(a, n));
    }
    assert!(worst <= TOL, "{what}: max relative error {worst}");
}

#[test]
fn conv_gradients_match_finite_differences() {
    // Random small case: 2x5x5 input, 3 filters.
    let spec = ConvSpec::same(2, 3, 3, 1);
    let mut rng = SeededRng::new(100, 0);
    let mut params = ModelParams::<f64>::new();
    params.insert(
        "conv",
        init_params(&LayerSpec::Conv2d(spec), &mut rng).unwrap(),
    );
    let x = rng
        .normal_tensor::<f64>(Shape::new([2, 5, 5]).unwrap(), 0.0, 1.0)
        .unwrap();
    // Scalar readout: dot the conv output with fixed random weights.
    let r = rng
        .normal_tensor::<f64>(Shape::new([3, 5, 5]).unwrap(), 0.0, 1.0)
        .unwrap();

    let loss = |p: &ModelParams<f64>, input: &Tensor<f64>| -> f64 {
        let (y, _) = conv2d_forward(&spec, p.get("conv").unwrap(), input).unwrap();
        y.mul(&r).unwrap().sum()
    };

    // Analytic gradients with dy = r.
    let (_, cache) = conv2d_forward(&spec, params.get("conv").unwrap(), &x).unwrap();
    let (dx, dw, db) = conv2d_backward(&spec, params.get("conv").unwrap(), cache, &r).unwrap();

    let report = grad_check(
        &params,
        &{
            let mut g = ModelParams::new();
            g.insert("conv", LayerParams { weights: dw, bias: db });
            g
        },
        |p| Ok(loss(p, &x)),
        None,
        0,
    )
    .unwrap();
    assert!(report.passes(TOL), "weights/bias: {}", report.max_rel_err);

    let numeric_dx = fd_input_gradient(&x, |input| loss(&params, input));
    assert_close(dx.data(), &numeric_dx, "conv dx");
}

#[test]
fn strided_conv_gradients_match_finite_differences() {
    // The periphery's stride-2 5x5 shape.
    let spec = ConvSpec::same(2, 2, 5, 2);
    let mut rng = SeededRng::new(101, 0);
    let mut params = ModelParams::<f64>::new();
    params.insert(
        "conv",
        init_params(&LayerSpec::Conv2d(spec), &mut rng).unwrap(),
    );
    let x = rng
        .normal_tensor::<f64>(Shape::new([2, 8, 8]).unwrap(), 0.0, 1.0)
        .unwrap();
    let r = rng
        .normal_tensor::<f64>(Shape::new([2, 4, 4]).unwrap(), 0.0, 1.0)
        .unwrap();

    let (_, cache) = conv2d_forward(&spec, params.get("conv").unwrap(), &x).unwrap();
    let (dx, dw, db) = conv2d_backward(&spec, params.get("conv").unwrap(), cache, &r).unwrap();
    let mut analytic = ModelParams::new();
    analytic.insert("conv", LayerParams { weights: dw, bias: db });

    let report = grad_check(
        &params,
        &analytic,
        |p| {
            let (y, _) = conv2d_forward(&spec, p.get("conv").unwrap(), &x).unwrap();
            Ok(y.mul(&r).unwrap().sum())
        },
        None,
        0,
    )
    .unwrap();
    assert!(report.passes(TOL), "max rel err {}", report.max_rel_err);

    let numeric_dx = fd_input_gradient(&x, |input| {
        let (y, _) = conv2d_forward(&spec, params.get("conv").unwrap(), input).unwrap();
        y.mul(&r).unwrap().sum()
    });
    assert_close(dx.data(), &numeric_dx, "strided conv dx");
}

#[test]
fn dense_gradients_match_finite_differences() {
    // Random [8] -> [5] layer through a softmax cross-entropy readout.
    let spec = DenseSpec::new(8, 5);
    let mut rng = SeededRng::new(102, 0);
    let mut params = ModelParams::<f64>::new();
    params.insert(
        "dense",
        init_params(&LayerSpec::Dense(spec), &mut rng).unwrap(),
    );
    let x = rng
        .normal_tensor::<f64>(Shape::new([8]).unwrap(), 0.0, 1.0)
        .unwrap();
    let label = 3usize;

    let loss = |p: &ModelParams<f64>, input: &Tensor<f64>| -> f64 {
        let (y, _) = dense_forward(&spec, p.get("dense").unwrap(), input).unwrap();
        softmax_xent(&y, label).unwrap().0
    };

    let (y, cache) = dense_forward(&spec, params.get("dense").unwrap(), &x).unwrap();
    let (_, xc) = softmax_xent(&y, label).unwrap();
    let dlogits = softmax_xent_backward(xc);
    let (dx, dw, db) =
        dense_backward(&spec, params.get("dense").unwrap(), cache, &dlogits).unwrap();
    let mut analytic = ModelParams::new();
    analytic.insert("dense", LayerParams { weights: dw, bias: db });

    let report = grad_check(&params, &analytic, |p| Ok(loss(p, &x)), None, 0).unwrap();
    assert!(report.passes(TOL), "max rel err {}", report.max_rel_err);

    let numeric_dx = fd_input_gradient(&x, |input| loss(&params, input));
    assert_close(dx.data(), &numeric_dx, "dense dx");
}

#[test]
fn relu_pool_concat_chain_matches_finite_differences() {
    // relu -> maxpool -> flatten halves -> concat -> weighted sum, checked
    // against finite differences over the input.
    let mut rng = SeededRng::new(103, 0);
    let x = rng
        .normal_tensor::<f64>(Shape::new([1, 4, 4]).unwrap(), 0.0, 1.0)
        .unwrap();
    let r = rng
        .normal_tensor::<f64>(Shape::new([4]).unwrap(), 0.0, 1.0)
        .unwrap();

    let forward = |input: &Tensor<f64>| -> f64 {
        let (a, _) = relu(input);
        let (p, _) = maxpool2(&a).unwrap();
        let flat = p.reshape(Shape::new([4]).unwrap()).unwrap();
        let left = Tensor::from_vec(Shape::new([2]).unwrap(), flat.data()[..2].to_vec()).unwrap();
        let right = Tensor::from_vec(Shape::new([2]).unwrap(), flat.data()[2..].to_vec()).unwrap();
        let (y, _) = concat2(&left, &right).unwrap();
        y.mul(&r).unwrap().sum()
    };

    // Analytic chain.
    let (a, relu_cache) = relu(&x);
    let (p, pool_cache) = maxpool2(&a).unwrap();
    let flat = p.clone().reshape(Shape::new([4]).unwrap()).unwrap();
    let left = Tensor::from_vec(Shape::new([2]).unwrap(), flat.data()[..2].to_vec()).unwrap();
    let right = Tensor::from_vec(Shape::new([2]).unwrap(), flat.data()[2..].to_vec()).unwrap();
    let (_, concat_cache) = concat2(&left, &right).unwrap();
    let (da, db) = concat2_backward(concat_cache, &r).unwrap();
    let mut dflat = da.data().to_vec();
    dflat.extend_from_slice(db.data());
    let dpool = Tensor::from_vec(p.shape().clone(), dflat).unwrap();
    let dx_relu = maxpool2_backward(pool_cache, &dpool).unwrap();
    let dx = relu_backward(relu_cache, &dx_relu).unwrap();

    let numeric = fd_input_gradient(&x, forward);
    // ReLU kinks at 0 would break finite differences; the random input has
    // no zeros, so the check is valid.
    assert!(x.iter().all(|&v| v.abs() > 1e-3));
    assert_close(dx.data(), &numeric, "relu/pool/concat chain dx");
}

#[test]
fn softmax_xent_gradient_matches_finite_differences() {
    let mut rng = SeededRng::new(104, 0);
    let logits = rng
        .normal_tensor::<f64>(Shape::new([7]).unwrap(), 0.0, 2.0)
        .unwrap();
    let label = 2usize;
    let (_, cache) = softmax_xent(&logits, label).unwrap();
    let analytic = softmax_xent_backward(cache);
    let numeric = fd_input_gradient(&logits, |l| softmax_xent(l, label).unwrap().0);
    assert_close(analytic.data(), &numeric, "softmax_xent dlogits");
}

/// A small but complete fused model: both streams, concatenation fusion,
/// and the loss. Every parameter tensor is probed.
#[test]
fn fused_model_gradients_match_finite_differences() {
    let mut cfg = GistNetConfig::desk_scale();
    cfg.fovea.side = 8;
    cfg.fovea.conv_plan = vec![FoveaStage::Conv(2), FoveaStage::Pool];
    cfg.fovea.fc1 = 6;
    cfg.fovea.fc2 = 4;
    cfg.fovea.num_classes = 3;
    cfg.periphery = PeripheryConfig::from_channels(64, [2, 2, 2, 2, 2, 2, 2, 2], 3);
    let (model, params) = build_gistnet::<f64>(&cfg, &SeededRng::new(105, 0)).unwrap();
    let net = Network::Gist(model);

    let mut rng = SeededRng::new(106, 0);
    let inputs = StreamInputs {
        fovea: rng
            .normal_tensor::<f64>(Shape::new([3, 8, 8]).unwrap(), 0.4, 0.2)
            .unwrap(),
        context: Some(
            rng.normal_tensor::<f64>(Shape::new([3, 64, 64]).unwrap(), 0.4, 0.2)
                .unwrap(),
        ),
    };
    let label = 1usize;

    let (_, _, analytic) = net.sample_grads(&params, &inputs, label).unwrap();
    let report = grad_check(
        &params,
        &analytic,
        |p| net.sample_loss(p, &inputs, label),
        Some(6),
        9,
    )
    .unwrap();
    assert!(
        report.passes(TOL),
        "fused model max rel err {} at {:?}",
        report.max_rel_err,
        report.worst().map(|e| (&e.layer, &e.tensor))
    );
    // Every parameter tensor appears exactly once: 2 fovea convs + 2 fc +
    // 8 periphery convs + fusion = 12 layers, 24 tensors.
    assert_eq!(report.entries.len(), 24);
}

#[test]
fn grad_check_catches_a_corrupted_backward() {
    // Negative control: scale one analytic gradient tensor and the checker
    // must name that layer.
    let spec = DenseSpec::new(4, 3);
    let mut rng = SeededRng::new(107, 0);
    let mut params = ModelParams::<f64>::new();
    params.insert(
        "dense",
        init_params(&LayerSpec::Dense(spec), &mut rng).unwrap(),
    );
    let x = rng
        .normal_tensor::<f64>(Shape::new([4]).unwrap(), 0.0, 1.0)
        .unwrap();
    let label = 0usize;

    let (y, cache) = dense_forward(&spec, params.get("dense").unwrap(), &x).unwrap();
    let (_, xc) = softmax_xent(&y, label).unwrap();
    let dlogits = softmax_xent_backward(xc);
    let (_, dw, db) =
        dense_backward(&spec, params.get("dense").unwrap(), cache, &dlogits).unwrap();
    let mut corrupted = ModelParams::new();
    corrupted.insert(
        "dense",
        LayerParams {
            weights: dw.scale(1.5),
            bias: db,
        },
    );

    let report = grad_check(
        &params,
        &corrupted,
        |p| {
            let (y, _) = dense_forward(&spec, p.get("dense").unwrap(), &x).unwrap();
            Ok(softmax_xent(&y, label).unwrap().0)
        },
        None,
        0,
    )
    .unwrap();
    assert!(!report.passes(TOL));
    let worst = report.worst().unwrap();
    assert_eq!(worst.layer, "dense");
    assert_eq!(worst.tensor, "weights");
}
