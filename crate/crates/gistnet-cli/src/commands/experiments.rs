//! experiments: the full analysis battery over a trained fused model and
//! its fovea-only baseline — improvement-vs-ratio curve, context blur
//! sweep, t-SNE and linear probes of both embeddings, and saliency maps.

use super::{ensure_output_dir, load_checked, write_json, write_text};
use crate::config::{ModelKind, RunConfig};
use crate::error::{CliError, CliResult};
use crate::svg::{line_plot, scatter_plot, ScatterPoint};
use gistnet_core::data::{tensor_to_rgb8, write_ppm, Dataset};
use gistnet_core::eval::{blur_sweep, evaluate, ratio_curve, topk_hit, CurveSeries, EvalOutcome};
use gistnet_core::model::ModelParams;
use gistnet_core::probe::{linear_probe, ProbeLabel, ProbeReport};
use gistnet_core::saliency::saliency_map;
use gistnet_core::tensor::{Shape, Tensor};
use gistnet_core::train::Network;
use gistnet_core::tsne::{
    nearest_centroid_accuracy, tsne_2d, EmbeddingSet, EmbeddingSource, TsneResult,
};
use rayon::prelude::*;
use serde::Serialize;
use std::fmt::Write as _;
use std::path::Path;

fn curve_csv(series: &CurveSeries, extra: Option<(&str, &CurveSeries)>) -> String {
    let mut out = String::from("x,y,n");
    if let Some((name, _)) = extra {
        let _ = write!(out, ",{name}");
    }
    out.push('\n');
    for (i, p) in series.points.iter().enumerate() {
        let _ = write!(out, "{},{},{}", p.x, p.y, p.n);
        if let Some((_, e)) = extra {
            let _ = write!(out, ",{}", e.points[i].y);
        }
        out.push('\n');
    }
    out
}

fn embedding_set(
    net: &Network,
    params: &ModelParams<f32>,
    dataset: &Dataset,
    indices: &[usize],
    source: EmbeddingSource,
    margin: f64,
) -> CliResult<EmbeddingSet> {
    let rows: Vec<CliResult<(Vec<f64>, u8, usize)>> = indices
        .par_iter()
        .map(|&i| {
            let sample = dataset.sample(i)?;
            let superclass = sample.scene_superclass.ok_or_else(|| {
                CliError::Config(
                    "embedding analyses need scene_superclass labels on every sample".into(),
                )
            })?;
            let inputs = net.prepare_inputs(&sample, margin)?;
            let emb = net.embedding(params, &inputs)?;
            Ok((
                emb.iter().map(|&v| v as f64).collect(),
                superclass,
                sample.category,
            ))
        })
        .collect();
    let mut data = Vec::new();
    let mut supers = Vec::with_capacity(indices.len());
    let mut cats = Vec::with_capacity(indices.len());
    let mut dim = 0usize;
    for r in rows {
        let (e, s, c) = r?;
        dim = e.len();
        data.extend(e);
        supers.push(s);
        cats.push(c);
    }
    let matrix = Tensor::from_vec(Shape::new([indices.len(), dim])?, data)?;
    Ok(EmbeddingSet::new(matrix, supers, cats, source)?)
}

fn tsne_csv(result: &TsneResult, set: &EmbeddingSet) -> String {
    let mut out = String::from("x,y,superclass,category\n");
    for (i, c) in result.coords.iter().enumerate() {
        let _ = writeln!(out, "{},{},{},{}", c[0], c[1], set.superclass[i], set.category[i]);
    }
    out
}

#[derive(Serialize)]
struct ProbePair {
    fovea: ProbeReport,
    periphery: ProbeReport,
}

#[derive(Serialize)]
struct ExperimentSummary {
    gistnet_topk: std::collections::BTreeMap<usize, f64>,
    fovea_topk: std::collections::BTreeMap<usize, f64>,
    improved_category_count: usize,
    blur_levels: usize,
    blur_final_accuracy: f64,
    blur_baseline_accuracy: f64,
    tsne_periphery_superclass_recovery: f64,
    tsne_fovea_superclass_recovery: f64,
    tsne_periphery_flagged: bool,
    probe_fovea_test: f64,
    probe_periphery_test: f64,
}

pub fn cmd_experiments(
    cfg: &RunConfig,
    gistnet_ckpt: &Path,
    fovea_ckpt: &Path,
    force: bool,
) -> CliResult<()> {
    if !matches!(cfg.model.kind, ModelKind::Gistnet) {
        return Err(CliError::Config(
            "experiments expect model.kind = gistnet (the baseline comes from --fovea)".into(),
        ));
    }
    for (name, p) in [("gistnet", gistnet_ckpt), ("fovea", fovea_ckpt)] {
        if !p.is_file() {
            return Err(CliError::Config(format!(
                "missing {name} checkpoint: {}",
                p.display()
            )));
        }
    }
    ensure_output_dir(cfg)?;
    let dataset = cfg.test_dataset()?;
    let margin = cfg.train.margin;

    let gist_params = load_checked::<f32>(gistnet_ckpt, cfg, force)?;
    let (gist_net, _) = cfg.build_network::<f32>()?;
    let fovea_cfg = cfg.baseline_variant();
    let fovea_params = load_checked::<f32>(fovea_ckpt, &fovea_cfg, force)?;
    let (fovea_net, _) = fovea_cfg.build_network::<f32>()?;

    let ci_k = cfg.eval.topk.first().copied().unwrap_or(1);
    let eval_of = |net: &Network, params: &ModelParams<f32>| -> CliResult<EvalOutcome> {
        Ok(evaluate(
            net,
            params,
            &dataset,
            None,
            &cfg.eval.topk,
            ci_k,
            cfg.eval.z,
            margin,
        )?)
    };
    let gist_out = eval_of(&gist_net, &gist_params)?;
    let fovea_out = eval_of(&fovea_net, &fovea_params)?;
    let improved = gistnet_core::eval::improved_category_count(
        &gist_out.report.per_category,
        &fovea_out.report.per_category,
    );

    // Improvement vs context/object ratio.
    let rk = cfg.eval.ratio_topk;
    let to_hits = |out: &EvalOutcome| -> CliResult<Vec<bool>> {
        out.logits
            .iter()
            .zip(&out.labels)
            .map(|(l, &lab)| Ok(topk_hit(l, lab, rk)?))
            .collect()
    };
    let ratio_series = ratio_curve(
        &gist_out.ratios,
        &to_hits(&gist_out)?,
        &to_hits(&fovea_out)?,
        cfg.eval.ratio_bins,
    )?;
    write_text(
        &cfg.output_dir.join("ratio_curve.csv"),
        &curve_csv(&ratio_series, None),
    )?;
    write_text(
        &cfg.output_dir.join("ratio_curve.svg"),
        &line_plot("accuracy improvement vs context/object ratio", &[("improvement", &ratio_series)]),
    )?;

    // Context blur sweep against the fovea baseline on the same subset.
    let schedule = cfg.blur_schedule()?;
    let sweep_n = cfg.eval.sweep_samples.min(dataset.len()).max(1);
    let sweep_idx: Vec<usize> = (0..sweep_n).collect();
    let bk = cfg.eval.blur_topk;
    let fovea_sub = evaluate(
        &fovea_net,
        &fovea_params,
        &dataset,
        Some(&sweep_idx),
        &[bk],
        bk,
        cfg.eval.z,
        margin,
    )?;
    let baseline_acc = fovea_sub.report.topk[&bk];
    let sweep = blur_sweep(
        &gist_net,
        &gist_params,
        &dataset,
        &sweep_idx,
        &schedule,
        bk,
        margin,
        baseline_acc,
    )?;
    write_text(
        &cfg.output_dir.join("blur_sweep.csv"),
        &curve_csv(&sweep.curve, Some(("baseline", &sweep.baseline))),
    )?;
    write_text(
        &cfg.output_dir.join("blur_sweep.svg"),
        &line_plot(
            "context degradation by gaussian blur",
            &[("with context", &sweep.curve), ("fovea baseline", &sweep.baseline)],
        ),
    )?;

    // Embedding analyses: t-SNE + linear probes on both streams.
    let embed_n = cfg.eval.embed_samples.min(dataset.len()).max(1);
    let embed_idx: Vec<usize> = (0..embed_n).collect();
    let peri_set = embedding_set(
        &gist_net,
        &gist_params,
        &dataset,
        &embed_idx,
        EmbeddingSource::Periphery,
        margin,
    )?;
    let fovea_set = embedding_set(
        &fovea_net,
        &fovea_params,
        &dataset,
        &embed_idx,
        EmbeddingSource::Fovea,
        margin,
    )?;

    let mut recoveries = std::collections::BTreeMap::new();
    let mut flagged = false;
    for set in [&peri_set, &fovea_set] {
        let result = tsne_2d(set, cfg.eval.tsne_perplexity, cfg.eval.tsne_iters, cfg.train.seed)?;
        let name = set.source.name();
        write_text(
            &cfg.output_dir.join(format!("tsne_{name}.csv")),
            &tsne_csv(&result, set),
        )?;
        let points: Vec<ScatterPoint> = result
            .coords
            .iter()
            .zip(&set.superclass)
            .map(|(c, &s)| ScatterPoint {
                x: c[0],
                y: c[1],
                class: s,
            })
            .collect();
        write_text(
            &cfg.output_dir.join(format!("tsne_{name}.svg")),
            &scatter_plot(
                &format!("t-SNE of {name} embeddings (black/white = superclass)"),
                &points,
                "t-SNE dim 1",
                "t-SNE dim 2",
            ),
        )?;
        recoveries.insert(
            name.to_string(),
            nearest_centroid_accuracy(&result.coords, &set.superclass)?,
        );
        if set.source == EmbeddingSource::Periphery {
            flagged = result.flagged;
        }
    }

    let probe = ProbePair {
        fovea: linear_probe(&fovea_set, ProbeLabel::Superclass, cfg.eval.probe_split, cfg.train.seed)?,
        periphery: linear_probe(&peri_set, ProbeLabel::Superclass, cfg.eval.probe_split, cfg.train.seed)?,
    };
    write_json(&cfg.output_dir.join("probe_report.json"), &probe)?;

    // Saliency maps for the configured samples, one per stream.
    for &i in &cfg.eval.saliency_samples {
        if i >= dataset.len() {
            continue;
        }
        let sample = dataset.sample(i)?;
        let inputs = gist_net.prepare_inputs(&sample, margin)?;
        let maps = saliency_map(&gist_net, &gist_params, &inputs, sample.category)?;
        for (map, stream) in maps.iter().zip(["fovea", "context"]) {
            // Grayscale map stored as an RGB PPM.
            let (mh, mw) = (map.dims()[0], map.dims()[1]);
            let mut gray = vec![0.0f32; 3 * mh * mw];
            for y in 0..mh {
                for x in 0..mw {
                    let v = map.at2(y, x);
                    for c in 0..3 {
                        gray[(c * mh + y) * mw + x] = v;
                    }
                }
            }
            let rgb = Tensor::from_vec(Shape::new([3, mh, mw])?, gray)?;
            let (w, h, bytes) = tensor_to_rgb8(&rgb)?;
            write_ppm(
                &cfg.output_dir.join(format!("saliency_{i:03}_{stream}.ppm")),
                w,
                h,
                &bytes,
            )?;
        }
    }

    let summary = ExperimentSummary {
        gistnet_topk: gist_out.report.topk.clone(),
        fovea_topk: fovea_out.report.topk.clone(),
        improved_category_count: improved,
        blur_levels: sweep.curve.points.len(),
        blur_final_accuracy: sweep.curve.points.last().map(|p| p.y).unwrap_or(0.0),
        blur_baseline_accuracy: baseline_acc,
        tsne_periphery_superclass_recovery: recoveries["periphery"],
        tsne_fovea_superclass_recovery: recoveries["fovea"],
        tsne_periphery_flagged: flagged,
        probe_fovea_test: probe.fovea.test_accuracy,
        probe_periphery_test: probe.periphery.test_accuracy,
    };
    write_json(&cfg.output_dir.join("experiments_summary.json"), &summary)?;
    println!(
        "experiments done: improvement curve ({} bins), blur sweep ({} levels), probes (fovea {:.3} / periphery {:.3})",
        ratio_series.points.len(),
        sweep.curve.points.len(),
        probe.fovea.test_accuracy,
        probe.periphery.test_accuracy
    );
    Ok(())
}
