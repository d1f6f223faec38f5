//! gradcheck: finite-difference verification of every layer type's
//! backward pass plus the full configured fused model, all in float64.
//! Exits nonzero when any relative error exceeds 1e-4.

use super::{ensure_output_dir, write_json};
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use gistnet_core::layers::{
    conv2d_forward, dense_forward, init_params, maxpool2, relu, softmax_xent, ConvSpec, DenseSpec,
    LayerSpec,
};
use gistnet_core::model::{build_gistnet, ModelParams};
use gistnet_core::optim::{grad_check, GradCheckReport};
use gistnet_core::rng::SeededRng;
use gistnet_core::tensor::Shape;
use gistnet_core::train::{Network, StreamInputs};
use serde::Serialize;

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
/// Elements probed per tensor on the full model; small unit layers are
/// probed exhaustively.
const FULL_MODEL_SAMPLES: usize = 8;

#[derive(Serialize)]
pub struct GradcheckSection {
    pub name: String,
    pub max_rel_err: f64,
    pub tensors: usize,
    pub passed: bool,
}

#[derive(Serialize)]
pub struct GradcheckOutput {
    pub tolerance: f64,
    pub sections: Vec<GradcheckSection>,
    pub passed: bool,
}

fn section(name: &str, report: &GradCheckReport) -> GradcheckSection {
    GradcheckSection {
        name: name.to_string(),
        max_rel_err: report.max_rel_err,
        tensors: report.entries.len(),
        passed: report.passes(GRADCHECK_TOLERANCE),
    }
}

/// conv (stride 1 or 2) chained through relu, maxpool, flatten, and a
/// dense softmax readout; both layers' parameters are checked. The random
/// dense projection keeps every gradient generically nonzero.
fn check_conv(stride: usize, kernel: usize, seed: u64) -> CliResult<GradCheckReport> {
    use gistnet_core::layers::{
        conv2d_backward, dense_backward, flatten, flatten_backward, maxpool2_backward,
        relu_backward, softmax_xent_backward,
    };
    let conv = ConvSpec::same(2, 3, kernel, stride);
    let mut rng = SeededRng::new(seed, 0);
    let mut params = ModelParams::<f64>::new();
    params.insert("conv", init_params(&LayerSpec::Conv2d(conv), &mut rng)?);
    let x = rng.normal_tensor::<f64>(Shape::new([2, 8, 8]).unwrap(), 0.0, 1.0)?;
    let label = 1usize;

    // Probe the flattened size once to shape the dense readout.
    let flat_len = {
        let (y, _) = conv2d_forward(&conv, params.get("conv")?, &x)?;
        let (pooled, _) = maxpool2(&y)?;
        pooled.len()
    };
    let dense = DenseSpec::new(flat_len, 4);
    params.insert("readout", init_params(&LayerSpec::Dense(dense), &mut rng)?);

    let forward = |p: &ModelParams<f64>| -> gistnet_core::Result<f64> {
        let (y, _) = conv2d_forward(&conv, p.get("conv")?, &x)?;
        let (a, _) = relu(&y);
        let (pooled, _) = maxpool2(&a)?;
        let (flat, _) = flatten(&pooled)?;
        let (logits, _) = dense_forward(&dense, p.get("readout")?, &flat)?;
        Ok(softmax_xent(&logits, label)?.0)
    };

    let analytic = {
        let (y, conv_cache) = conv2d_forward(&conv, params.get("conv")?, &x)?;
        let (a, relu_cache) = relu(&y);
        let (pooled, pool_cache) = maxpool2(&a)?;
        let (flat, flat_cache) = flatten(&pooled)?;
        let (logits, dense_cache) = dense_forward(&dense, params.get("readout")?, &flat)?;
        let (_, xc) = softmax_xent(&logits, label)?;
        let dlogits = softmax_xent_backward(xc);
        let (dflat, dw_r, db_r) =
            dense_backward(&dense, params.get("readout")?, dense_cache, &dlogits)?;
        let dpool = flatten_backward(flat_cache, &dflat)?;
        let da = maxpool2_backward(pool_cache, &dpool)?;
        let dy = relu_backward(relu_cache, &da)?;
        let (_, dw, db) = conv2d_backward(&conv, params.get("conv")?, conv_cache, &dy)?;
        let mut g = ModelParams::new();
        g.insert(
            "conv",
            gistnet_core::layers::LayerParams { weights: dw, bias: db },
        );
        g.insert(
            "readout",
            gistnet_core::layers::LayerParams { weights: dw_r, bias: db_r },
        );
        g
    };
    Ok(grad_check(&params, &analytic, forward, Some(32), seed)?)
}

fn check_dense(seed: u64) -> CliResult<GradCheckReport> {
    let spec = DenseSpec::new(10, 6);
    let mut rng = SeededRng::new(seed, 0);
    let mut params = ModelParams::<f64>::new();
    params.insert("dense", init_params(&LayerSpec::Dense(spec), &mut rng)?);
    let x = rng.normal_tensor::<f64>(Shape::new([10]).unwrap(), 0.0, 1.0)?;
    let label = 4usize;

    let analytic = {
        use gistnet_core::layers::{dense_backward, softmax_xent_backward};
        let (y, cache) = dense_forward(&spec, params.get("dense")?, &x)?;
        let (_, xc) = softmax_xent(&y, label)?;
        let d = softmax_xent_backward(xc);
        let (_, dw, db) = dense_backward(&spec, params.get("dense")?, cache, &d)?;
        let mut g = ModelParams::new();
        g.insert(
            "dense",
            gistnet_core::layers::LayerParams { weights: dw, bias: db },
        );
        g
    };
    let x_loss = x.clone();
    Ok(grad_check(
        &params,
        &analytic,
        move |p| {
            let (y, _) = dense_forward(&spec, p.get("dense")?, &x_loss)?;
            Ok(softmax_xent(&y, label)?.0)
        },
        None,
        seed,
    )?)
}

/// The full fused model from the config, in float64, on a seeded input.
fn check_full_model(cfg: &RunConfig) -> CliResult<GradCheckReport> {
    let model_cfg = cfg.model_config()?;
    let (model, params) = build_gistnet::<f64>(&model_cfg, &SeededRng::new(cfg.train.seed, 0))?;
    let net = Network::Gist(model);
    let mut rng = SeededRng::new(cfg.train.seed, 1);
    let inputs = StreamInputs {
        fovea: rng.normal_tensor::<f64>(
            Shape::new([3, model_cfg.fovea.side, model_cfg.fovea.side]).unwrap(),
            0.4,
            0.2,
        )?,
        context: Some(rng.normal_tensor::<f64>(
            Shape::new([3, model_cfg.periphery.side, model_cfg.periphery.side]).unwrap(),
            0.4,
            0.2,
        )?),
    };
    let label = cfg.train.seed as usize % model_cfg.fovea.num_classes;
    let (_, _, analytic) = net.sample_grads(&params, &inputs, label)?;
    Ok(grad_check(
        &params,
        &analytic,
        |p| net.sample_loss(p, &inputs, label),
        Some(FULL_MODEL_SAMPLES),
        cfg.train.seed,
    )?)
}

pub fn cmd_gradcheck(cfg: &RunConfig) -> CliResult<GradcheckOutput> {
    ensure_output_dir(cfg)?;
    let seed = cfg.train.seed;
    let full = check_full_model(cfg)?;
    let sections = vec![
        section("conv2d 3x3 stride 1 (+relu +maxpool +softmax)", &check_conv(1, 3, seed)?),
        section("conv2d 5x5 stride 2 (+relu +maxpool +softmax)", &check_conv(2, 5, seed + 1)?),
        section("dense (+softmax)", &check_dense(seed + 2)?),
        section("full fused dual-stream model", &full),
    ];
    let passed = sections.iter().all(|s| s.passed);
    let output = GradcheckOutput {
        tolerance: GRADCHECK_TOLERANCE,
        sections,
        passed,
    };
    write_json(&cfg.output_dir.join("gradcheck_report.json"), &output)?;
    // One line per parameter tensor of the full model.
    for e in &full.entries {
        println!(
            "{}.{}: checked {} elements, max rel err {:.3e}",
            e.layer, e.tensor, e.checked, e.max_rel_err
        );
    }
    for s in &output.sections {
        println!(
            "{}: max rel err {:.3e} over {} tensors -> {}",
            s.name,
            s.max_rel_err,
            s.tensors,
            if s.passed { "pass" } else { "FAIL" }
        );
    }
    if !passed {
        let worst = output
            .sections
            .iter()
            .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
            .expect("sections non-empty");
        return Err(CliError::Numeric(format!(
            "gradient check failed in '{}': max relative error {:.3e} > {GRADCHECK_TOLERANCE:e}",
            worst.name, worst.max_rel_err
        )));
    }
    Ok(output)
}
