//! eval: run a checkpoint over the held-out set, writing the report JSON
//! and the per-category CSV. Given a baseline checkpoint, also reports
//! per-category deltas and the improved-category count.

use super::{ensure_output_dir, load_checked, write_json, write_text};
use crate::config::{ModelKind, RunConfig};
use crate::error::{CliError, CliResult};
use gistnet_core::data::Dataset;
use gistnet_core::eval::{evaluate, improved_category_count, EvalOutcome, EvalReport};
use std::fmt::Write as _;
use std::path::Path;

fn run_eval(cfg: &RunConfig, variant: &RunConfig, checkpoint: &Path, force: bool, dataset: &Dataset)
    -> CliResult<EvalOutcome>
{
    let params = load_checked::<f32>(checkpoint, variant, force)?;
    let (net, _) = variant.build_network::<f32>()?;
    let ci_k = cfg.eval.topk.first().copied().unwrap_or(1);
    Ok(evaluate(
        &net,
        &params,
        dataset,
        None,
        &cfg.eval.topk,
        ci_k,
        cfg.eval.z,
        cfg.train.margin,
    )?)
}

fn per_category_csv(
    dataset: &Dataset,
    report: &EvalReport,
    baseline: Option<&EvalReport>,
) -> String {
    let mut out = String::from("category,name,n,accuracy,ci_low,ci_high");
    if baseline.is_some() {
        out.push_str(",baseline_accuracy,delta");
    }
    out.push('\n');
    for row in &report.per_category {
        let _ = write!(
            out,
            "{},{},{},{},{},{}",
            row.category,
            dataset.category_name(row.category),
            row.n,
            row.accuracy,
            row.ci_low,
            row.ci_high
        );
        if let Some(b) = baseline {
            match b.per_category.iter().find(|r| r.category == row.category) {
                Some(br) => {
                    let _ = write!(out, ",{},{}", br.accuracy, row.accuracy - br.accuracy);
                }
                None => out.push_str(",,"),
            }
        }
        out.push('\n');
    }
    out
}

pub fn cmd_eval(
    cfg: &RunConfig,
    checkpoint: &Path,
    baseline_checkpoint: Option<&Path>,
    force: bool,
) -> CliResult<()> {
    ensure_output_dir(cfg)?;
    let dataset = cfg.test_dataset()?;
    let mut outcome = run_eval(cfg, cfg, checkpoint, force, &dataset)?;

    let baseline_report = match baseline_checkpoint {
        Some(path) => {
            if !matches!(cfg.model.kind, ModelKind::Gistnet) {
                return Err(CliError::Config(
                    "two-checkpoint eval expects model.kind = gistnet with a fovea baseline".into(),
                ));
            }
            let variant = cfg.baseline_variant();
            let base = run_eval(cfg, &variant, path, force, &dataset)?;
            outcome.report.improved_category_count = Some(improved_category_count(
                &outcome.report.per_category,
                &base.report.per_category,
            ));
            Some(base.report)
        }
        None => None,
    };

    write_json(&cfg.output_dir.join("report.json"), &outcome.report)?;
    write_text(
        &cfg.output_dir.join("per_category.csv"),
        &per_category_csv(&dataset, &outcome.report, baseline_report.as_ref()),
    )?;
    if let Some(b) = &baseline_report {
        write_json(&cfg.output_dir.join("baseline_report.json"), b)?;
    }

    for (k, acc) in &outcome.report.topk {
        println!("top-{k}: {acc:.4}");
    }
    if let Some(n) = outcome.report.improved_category_count {
        println!(
            "improved categories vs baseline: {n} / {}",
            outcome.report.per_category.len()
        );
    }
    Ok(())
}
