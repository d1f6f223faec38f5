//! The five commands: gen-data, train, eval, experiments, gradcheck.
//! Every command is a pure function of (config, input files, seed) and
//! writes only inside the configured output directory.

mod eval_cmd;
mod experiments;
mod gen_data;
mod gradcheck;
mod train_cmd;

pub use eval_cmd::cmd_eval;
pub use experiments::cmd_experiments;
pub use gen_data::cmd_gen_data;
pub use gradcheck::cmd_gradcheck;
pub use train_cmd::cmd_train;

use crate::checkpoint::{checkpoint_load, config_digest};
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use gistnet_core::model::ModelParams;
use gistnet_core::tensor::Scalar;
use std::path::Path;

pub(crate) fn ensure_output_dir(cfg: &RunConfig) -> CliResult<()> {
    std::fs::create_dir_all(&cfg.output_dir)
        .map_err(|e| CliError::io(cfg.output_dir.display().to_string(), e))
}

pub(crate) fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::io(path.display().to_string(), e))
}

pub(crate) fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Format(format!("serialising {}: {e}", path.display())))?;
    write_text(path, &text)
}

/// Loads a checkpoint and verifies its config digest against `for_config`,
/// refusing on mismatch unless `force`.
pub(crate) fn load_checked<T: Scalar>(
    path: &Path,
    for_config: &RunConfig,
    force: bool,
) -> CliResult<ModelParams<T>> {
    let (stored, params) = checkpoint_load::<T>(path)?;
    let expected = config_digest(&for_config.digest_payload()?);
    if stored != expected {
        if force {
            eprintln!(
                "warning: checkpoint {} config digest mismatch, proceeding under --force",
                path.display()
            );
        } else {
            return Err(CliError::Config(format!(
                "checkpoint {} was written under a different model config (digest mismatch); \
                 pass --force to load anyway",
                path.display()
            )));
        }
    }
    Ok(params)
}
