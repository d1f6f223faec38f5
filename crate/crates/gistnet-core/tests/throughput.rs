//! Manual throughput probe for sizing experiment budgets. Run with:
//! cargo test --release -p gistnet-core --test throughput -- --ignored --nocapture

use gistnet_core::data::{generate_synthetic, Dataset, SyntheticConfig};
use gistnet_core::model::{build_fovea, build_gistnet, GistNetConfig};
use gistnet_core::optim::AdamHyper;
use gistnet_core::rng::SeededRng;
use gistnet_core::train::{train, Network, TrainConfig};
use std::time::Instant;

#[test]
#[ignore]
fn desk_scale_step_timing() {
    let cfg = GistNetConfig::desk_scale();
    let data_cfg = SyntheticConfig::desk_default(0.9, 1);
    let (train_set, _) = generate_synthetic(&data_cfg).unwrap();
    let dataset = Dataset::Synthetic(train_set);

    let steps = 10u64;
    let tc = TrainConfig {
        hyper: AdamHyper::with_lr(1e-3),
        batch_size: 32,
        epochs: 1,
        max_iterations: Some(steps),
        seed: 7,
        log_every: 1,
        margin: 0.0,
    };

    let (model, params) = build_gistnet::<f32>(&cfg, &SeededRng::new(1, 0)).unwrap();
    let net = Network::Gist(model);
    let t0 = Instant::now();
    train(&net, params, &dataset, &tc, 0, |_, _| Ok(())).unwrap();
    let per_step = t0.elapsed().as_secs_f64() / steps as f64;
    println!(
        "gistnet: {per_step:.3}s/step of 32 -> {:.1}s per 10k-sample epoch",
        per_step * 313.0
    );

    let (fmodel, fparams) = build_fovea::<f32>(&cfg.fovea, &SeededRng::new(1, 0)).unwrap();
    let fnet = Network::Fovea(fmodel);
    let t0 = Instant::now();
    train(&fnet, fparams, &dataset, &tc, 0, |_, _| Ok(())).unwrap();
    let per_step = t0.elapsed().as_secs_f64() / steps as f64;
    println!(
        "fovea:   {per_step:.3}s/step of 32 -> {:.1}s per 10k-sample epoch",
        per_step * 313.0
    );
}
