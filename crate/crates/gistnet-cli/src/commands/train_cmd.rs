//! train: fit the configured model, logging (iteration, loss, batch
//! accuracy) as CSV, checkpointing at intervals, and always writing the
//! final checkpoint.

use super::{ensure_output_dir, write_text};
use crate::checkpoint::{checkpoint_save, config_digest};
use crate::config::{DtypeChoice, Preset, RunConfig};
use crate::error::CliResult;
use gistnet_core::optim::AdamHyper;
use gistnet_core::tensor::Scalar;
use gistnet_core::train::{train, TrainConfig, TrainLogRow};
use std::fmt::Write as _;
use std::path::PathBuf;

fn train_config(cfg: &RunConfig) -> TrainConfig {
    TrainConfig {
        hyper: AdamHyper {
            alpha: cfg.alpha(),
            beta1: cfg.train.beta1,
            beta2: cfg.train.beta2,
            epsilon: cfg.train.epsilon,
        },
        batch_size: cfg.train.batch_size,
        epochs: cfg.train.epochs,
        max_iterations: cfg.train.max_iterations,
        seed: cfg.train.seed,
        log_every: cfg.train.log_every,
        margin: cfg.train.margin,
    }
}

fn log_csv(log: &[TrainLogRow]) -> String {
    let mut out = String::from("iteration,loss,accuracy\n");
    for row in log {
        let _ = writeln!(out, "{},{},{}", row.iteration, row.loss, row.accuracy);
    }
    out
}

fn run<T: Scalar>(cfg: &RunConfig) -> CliResult<(PathBuf, usize)> {
    let dataset = cfg.train_dataset()?;
    let (net, params) = cfg.build_network::<T>()?;
    let digest = config_digest(&cfg.digest_payload()?);
    let out_dir = cfg.output_dir.clone();
    let (final_params, log) = train(
        &net,
        params,
        &dataset,
        &train_config(cfg),
        cfg.train.checkpoint_every,
        |iteration, p| {
            let path = out_dir.join(format!("checkpoint_{iteration:08}.ckpt"));
            checkpoint_save(p, &digest, &path).map_err(|e| {
                gistnet_core::Error::Io {
                    path: path.display().to_string(),
                    source: std::io::Error::other(e.to_string()),
                }
            })
        },
    )?;
    let final_path = cfg.output_dir.join("model.ckpt");
    checkpoint_save(&final_params, &digest, &final_path)?;
    write_text(&cfg.output_dir.join("train_log.csv"), &log_csv(&log))?;
    Ok((final_path, log.len()))
}

/// Returns the final checkpoint path.
pub fn cmd_train(cfg: &RunConfig) -> CliResult<PathBuf> {
    ensure_output_dir(cfg)?;
    if matches!(cfg.model.preset, Preset::Paper) {
        eprintln!(
            "warning: the paper preset (224/448 inputs, 121M+ parameters) exists for shape and \
             parameter verification; training it is not desk-feasible"
        );
    }
    let (path, rows) = match cfg.train.dtype {
        DtypeChoice::F32 => run::<f32>(cfg)?,
        DtypeChoice::F64 => run::<f64>(cfg)?,
    };
    println!("final checkpoint: {} ({rows} log rows)", path.display());
    Ok(path)
}
