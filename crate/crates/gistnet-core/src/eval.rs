//! Quantitative analyses: top-k accuracy, per-category Wilson confidence
//! intervals, improvement-vs-ratio curves, and the Gaussian-blur robustness
//! sweep. Metric reductions are integer counts over fixed sample order, so
//! parallel evaluation cannot change any result.

use crate::data::{blur_context, scaled_bbox, BlurSchedule, Dataset};
use crate::model::ModelParams;
use crate::tensor::{topk_indices, Scalar, Tensor};
use crate::train::Network;
use crate::{Error, Result};
use rayon::prelude::*;
use serde::Serialize;
use std::collections::BTreeMap;

/// True when `label` is among the k highest logits (documented tie-break:
/// ascending index among equal values).
pub fn topk_hit<T: Scalar>(logits: &Tensor<T>, label: usize, k: usize) -> Result<bool> {
    Ok(topk_indices(logits, k)?.contains(&label))
}

/// Fraction of rows whose label is in the top k.
pub fn topk_accuracy<T: Scalar>(rows: &[Tensor<T>], labels: &[usize], k: usize) -> Result<f64> {
    if rows.len() != labels.len() {
        return Err(Error::Argument(format!(
            "{} logit rows vs {} labels",
            rows.len(),
            labels.len()
        )));
    }
    if rows.is_empty() {
        return Err(Error::Argument("no rows to evaluate".into()));
    }
    let mut hits = 0usize;
    for (row, &label) in rows.iter().zip(labels) {
        hits += usize::from(topk_hit(row, label, k)?);
    }
    Ok(hits as f64 / rows.len() as f64)
}

/// Wilson score interval for a binomial proportion, clamped to [0,1].
pub fn wilson_interval(p_hat: f64, n: usize, z: f64) -> (f64, f64) {
    let n = n as f64;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p_hat + z2 / (2.0 * n)) / denom;
    let half = z * (p_hat * (1.0 - p_hat) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// One per-category accuracy row.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct CategoryRow {
    pub category: usize,
    pub n: usize,
    pub accuracy: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Per-category top-k accuracy with Wilson intervals. Categories with no
/// samples are omitted from the table and reported separately.
pub fn per_category_ci<T: Scalar>(
    rows: &[Tensor<T>],
    labels: &[usize],
    num_classes: usize,
    k: usize,
    z: f64,
) -> Result<(Vec<CategoryRow>, Vec<usize>)> {
    if rows.len() != labels.len() {
        return Err(Error::Argument(format!(
            "{} logit rows vs {} labels",
            rows.len(),
            labels.len()
        )));
    }
    let mut counts = vec![0usize; num_classes];
    let mut hits = vec![0usize; num_classes];
    for (row, &label) in rows.iter().zip(labels) {
        if label >= num_classes {
            return Err(Error::Argument(format!(
                "label {label} out of range for {num_classes} classes"
            )));
        }
        counts[label] += 1;
        hits[label] += usize::from(topk_hit(row, label, k)?);
    }
    let mut table = Vec::new();
    let mut omitted = Vec::new();
    for c in 0..num_classes {
        if counts[c] == 0 {
            omitted.push(c);
            continue;
        }
        let p_hat = hits[c] as f64 / counts[c] as f64;
        let (lo, hi) = wilson_interval(p_hat, counts[c], z);
        table.push(CategoryRow {
            category: c,
            n: counts[c],
            accuracy: p_hat,
            ci_low: lo,
            ci_high: hi,
        });
    }
    Ok((table, omitted))
}

/// Categories where `a` beats `b` (matched by category id).
pub fn improved_category_count(a: &[CategoryRow], b: &[CategoryRow]) -> usize {
    let b_by_id: BTreeMap<usize, f64> = b.iter().map(|r| (r.category, r.accuracy)).collect();
    a.iter()
        .filter(|r| matches!(b_by_id.get(&r.category), Some(&acc) if r.accuracy > acc))
        .count()
}

/// Top-k accuracies, per-category rows with confidence intervals, and the
/// improved-category count when two models are compared.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub n: usize,
    pub topk: BTreeMap<usize, f64>,
    pub per_category: Vec<CategoryRow>,
    pub omitted_categories: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub improved_category_count: Option<usize>,
}

/// Everything one evaluation pass produces; logits and per-sample metadata
/// are kept for the downstream analyses.
pub struct EvalOutcome {
    pub report: EvalReport,
    pub logits: Vec<Tensor<f32>>,
    pub labels: Vec<usize>,
    pub ratios: Vec<f64>,
    pub superclasses: Vec<Option<u8>>,
}

/// Runs the network over `indices` of `dataset` (all samples when None) and
/// assembles an [`EvalReport`] for the given k list. Wilson intervals use
/// the per-category k = `ci_k`.
pub fn evaluate(
    net: &Network,
    params: &ModelParams<f32>,
    dataset: &Dataset,
    indices: Option<&[usize]>,
    ks: &[usize],
    ci_k: usize,
    z: f64,
    margin: f64,
) -> Result<EvalOutcome> {
    let all: Vec<usize>;
    let idx: &[usize] = match indices {
        Some(i) => i,
        None => {
            all = (0..dataset.len()).collect();
            &all
        }
    };
    if idx.is_empty() {
        return Err(Error::Argument("evaluation needs at least one sample".into()));
    }
    let rows: Vec<Result<(Tensor<f32>, usize, f64, Option<u8>)>> = idx
        .par_iter()
        .map(|&i| {
            let sample = dataset.sample(i)?;
            let inputs = net.prepare_inputs(&sample, margin)?;
            let logits = net.forward_logits(params, &inputs)?;
            Ok((
                logits,
                sample.category,
                crate::data::context_object_ratio(&sample),
                sample.scene_superclass,
            ))
        })
        .collect();
    let mut logits = Vec::with_capacity(idx.len());
    let mut labels = Vec::with_capacity(idx.len());
    let mut ratios = Vec::with_capacity(idx.len());
    let mut superclasses = Vec::with_capacity(idx.len());
    for r in rows {
        let (l, label, ratio, sc) = r?;
        logits.push(l);
        labels.push(label);
        ratios.push(ratio);
        superclasses.push(sc);
    }
    let mut topk = BTreeMap::new();
    for &k in ks {
        topk.insert(k, topk_accuracy(&logits, &labels, k)?);
    }
    let (per_category, omitted) =
        per_category_ci(&logits, &labels, dataset.num_classes(), ci_k, z)?;
    Ok(EvalOutcome {
        report: EvalReport {
            n: idx.len(),
            topk,
            per_category,
            omitted_categories: omitted,
            improved_category_count: None,
        },
        logits,
        labels,
        ratios,
        superclasses,
    })
}

// ---------------------------------------------------------------------------
// Curves
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct CurvePoint {
    pub x: f64,
    pub y: f64,
    pub n: usize,
}

/// Ordered (x, y, n) points with axis labels.
#[derive(Debug, Clone, Serialize)]
pub struct CurveSeries {
    pub x_label: String,
    pub y_label: String,
    pub points: Vec<CurvePoint>,
}

impl CurveSeries {
    pub fn validate(&self) -> Result<()> {
        for pair in self.points.windows(2) {
            if pair[1].x <= pair[0].x {
                return Err(Error::Validation(format!(
                    "curve x values must be strictly increasing: {} then {}",
                    pair[0].x, pair[1].x
                )));
            }
        }
        if self.points.iter().any(|p| p.n == 0) {
            return Err(Error::Validation("curve point with n = 0".into()));
        }
        Ok(())
    }
}

/// Bin size floor; smaller raw bins are merged into their neighbour.
const MIN_BIN_COUNT: usize = 10;

/// Accuracy improvement (context minus minimal) binned by log10 of the
/// context/object ratio into `num_bins` equal-width bins; bins with fewer
/// than 10 samples merge into their right neighbour (the trailing remainder
/// merges left).
pub fn ratio_curve(
    ratios: &[f64],
    ctx_hits: &[bool],
    min_hits: &[bool],
    num_bins: usize,
) -> Result<CurveSeries> {
    if ratios.len() != ctx_hits.len() || ratios.len() != min_hits.len() {
        return Err(Error::Argument(
            "ratio and result arrays must cover the same samples".into(),
        ));
    }
    if ratios.is_empty() || num_bins == 0 {
        return Err(Error::Argument("need samples and at least one bin".into()));
    }
    if ratios.iter().any(|&r| r <= 0.0 || !r.is_finite()) {
        return Err(Error::Argument(
            "ratios must be positive and finite for log binning".into(),
        ));
    }
    let logs: Vec<f64> = ratios.iter().map(|r| r.log10()).collect();
    let lo = logs.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);

    struct Bin {
        lo: f64,
        hi: f64,
        n: usize,
        ctx: usize,
        min: usize,
    }

    let width = (hi - lo) / num_bins as f64;
    let mut bins: Vec<Bin> = (0..num_bins)
        .map(|b| Bin {
            lo: lo + b as f64 * width,
            hi: lo + (b + 1) as f64 * width,
            n: 0,
            ctx: 0,
            min: 0,
        })
        .collect();
    for ((&l, &ch), &mh) in logs.iter().zip(ctx_hits).zip(min_hits) {
        // Right-closed last bin.
        let b = if width > 0.0 {
            (((l - lo) / width) as usize).min(num_bins - 1)
        } else {
            0
        };
        bins[b].n += 1;
        bins[b].ctx += usize::from(ch);
        bins[b].min += usize::from(mh);
    }

    // Merge small bins rightward; a small trailing remainder merges left.
    let mut merged: Vec<Bin> = Vec::new();
    let mut carry: Option<Bin> = None;
    for bin in bins {
        let cur = match carry.take() {
            Some(mut c) => {
                c.hi = bin.hi;
                c.n += bin.n;
                c.ctx += bin.ctx;
                c.min += bin.min;
                c
            }
            None => bin,
        };
        if cur.n >= MIN_BIN_COUNT {
            merged.push(cur);
        } else {
            carry = Some(cur);
        }
    }
    if let Some(c) = carry {
        if let Some(last) = merged.last_mut() {
            last.hi = c.hi;
            last.n += c.n;
            last.ctx += c.ctx;
            last.min += c.min;
        } else if c.n > 0 {
            merged.push(c);
        }
    }

    let points = merged
        .iter()
        .filter(|b| b.n > 0)
        .map(|b| CurvePoint {
            x: (b.lo + b.hi) / 2.0,
            y: b.ctx as f64 / b.n as f64 - b.min as f64 / b.n as f64,
            n: b.n,
        })
        .collect();
    let series = CurveSeries {
        x_label: "log10(context/object ratio)".into(),
        y_label: "top-k accuracy improvement".into(),
        points,
    };
    series.validate()?;
    Ok(series)
}

/// Result of a blur sweep: the degradation curve plus the constant
/// baseline reference series on the same x grid.
pub struct BlurSweep {
    pub curve: CurveSeries,
    pub baseline: CurveSeries,
}

/// Evaluates the fused model at every blur level of `schedule`, blurring
/// only the context input (fovea inputs untouched). The sigma = 0 point
/// runs through [`blur_context`]'s identity path, so it equals a direct
/// evaluation bitwise.
#[allow(clippy::too_many_arguments)]
pub fn blur_sweep(
    net: &Network,
    params: &ModelParams<f32>,
    dataset: &Dataset,
    indices: &[usize],
    schedule: &BlurSchedule,
    k: usize,
    margin: f64,
    baseline_accuracy: f64,
) -> Result<BlurSweep> {
    schedule.validate()?;
    if indices.is_empty() {
        return Err(Error::Argument("blur sweep needs at least one sample".into()));
    }
    let ctx_side = net
        .context_side()
        .ok_or_else(|| Error::Argument("blur sweep requires the fused model".into()))?;

    // Prepare inputs once; blur levels reuse them.
    let prepared: Vec<Result<(crate::train::StreamInputs<f32>, crate::tensor::Rect, usize)>> =
        indices
            .par_iter()
            .map(|&i| {
                let sample = dataset.sample(i)?;
                let inputs = net.prepare_inputs(&sample, margin)?;
                let rect = scaled_bbox(
                    sample.image.dims()[2],
                    sample.image.dims()[1],
                    sample.bbox,
                    ctx_side,
                );
                Ok((inputs, rect, sample.category))
            })
            .collect();
    let mut items = Vec::with_capacity(indices.len());
    for p in prepared {
        items.push(p?);
    }

    let mut points = Vec::with_capacity(schedule.levels.len());
    for &sigma in &schedule.levels {
        let hits: Vec<Result<bool>> = items
            .par_iter()
            .map(|(inputs, rect, label)| {
                let ctx = inputs
                    .context
                    .as_ref()
                    .ok_or_else(|| Error::Argument("missing context input".into()))?;
                let blurred = blur_context(ctx, *rect, sigma)?;
                let logits = net.forward_logits(
                    params,
                    &crate::train::StreamInputs {
                        fovea: inputs.fovea.clone(),
                        context: Some(blurred),
                    },
                )?;
                topk_hit(&logits, *label, k)
            })
            .collect();
        let mut n_hit = 0usize;
        for h in hits {
            n_hit += usize::from(h?);
        }
        points.push(CurvePoint {
            x: sigma,
            y: n_hit as f64 / items.len() as f64,
            n: items.len(),
        });
    }
    let baseline = CurveSeries {
        x_label: "context blur sigma".into(),
        y_label: format!("baseline top-{k} accuracy"),
        points: schedule
            .levels
            .iter()
            .map(|&s| CurvePoint {
                x: s,
                y: baseline_accuracy,
                n: items.len(),
            })
            .collect(),
    };
    let curve = CurveSeries {
        x_label: "context blur sigma".into(),
        y_label: format!("top-{k} accuracy"),
        points,
    };
    curve.validate()?;
    Ok(BlurSweep { curve, baseline })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn row(vals: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(Shape::new([vals.len()]).unwrap(), vals.to_vec()).unwrap()
    }

    #[test]
    fn topk_basic_cases() {
        let r = row(&[0.1, 0.9, 0.3]);
        assert_eq!(topk_accuracy(&[r.clone()], &[1], 1).unwrap(), 1.0);
        assert_eq!(topk_accuracy(&[r.clone()], &[0], 3).unwrap(), 1.0);
        assert_eq!(topk_accuracy(&[r], &[0], 1).unwrap(), 0.0);
    }

    #[test]
    fn topk_uniform_tiebreak_expectation() {
        // Uniform logits over 80 classes, labels 0..79: top-3 picks indices
        // 0,1,2, so exactly labels 0..2 hit -> 3/80.
        let uniform = Tensor::<f64>::full(Shape::new([80]).unwrap(), 0.5);
        let rows: Vec<Tensor<f64>> = (0..80).map(|_| uniform.clone()).collect();
        let labels: Vec<usize> = (0..80).collect();
        let acc = topk_accuracy(&rows, &labels, 3).unwrap();
        assert!((acc - 3.0 / 80.0).abs() < 1e-12);
        assert_eq!(topk_accuracy(&rows, &labels, 80).unwrap(), 1.0);
    }

    #[test]
    fn topk_nondecreasing_in_k() {
        let mut rng = crate::rng::SeededRng::new(8, 0);
        let rows: Vec<Tensor<f64>> = (0..50)
            .map(|_| rng.normal_tensor(Shape::new([10]).unwrap(), 0.0, 1.0).unwrap())
            .collect();
        let labels: Vec<usize> = (0..50).map(|i| i % 10).collect();
        let mut prev = 0.0;
        for k in 1..=10 {
            let acc = topk_accuracy(&rows, &labels, k).unwrap();
            assert!(acc >= prev, "k={k}: {acc} < {prev}");
            prev = acc;
        }
    }

    #[test]
    fn wilson_hand_values() {
        let (lo, hi) = wilson_interval(0.5, 100, 1.96);
        assert!((lo - 0.4038).abs() < 1e-4, "lo {lo}");
        assert!((hi - 0.5962).abs() < 1e-4, "hi {hi}");

        let (lo, hi) = wilson_interval(1.0, 10, 1.96);
        assert!((hi - 1.0).abs() < 1e-12, "hi {hi}");
        assert!(lo > 0.7, "lo {lo}");
    }

    #[test]
    fn wilson_contains_p_hat_and_stays_in_unit() {
        for &(p, n) in &[(0.0, 1usize), (1.0, 1), (0.3, 7), (0.99, 200), (0.5, 2)] {
            let (lo, hi) = wilson_interval(p, n, 1.96);
            assert!((0.0..=1.0).contains(&lo) && (0.0..=1.0).contains(&hi));
            assert!(lo <= p + 1e-12 && p <= hi + 1e-12, "p={p} n={n}: [{lo},{hi}]");
        }
    }

    #[test]
    fn per_category_handles_singletons_and_empties() {
        let rows = vec![row(&[2.0, 1.0, 0.0]), row(&[0.0, 1.0, 2.0])];
        let labels = vec![0usize, 0];
        let (table, omitted) = per_category_ci(&rows, &labels, 3, 1, 1.96).unwrap();
        assert_eq!(table.len(), 1);
        assert_eq!(table[0].category, 0);
        assert_eq!(table[0].n, 2);
        assert!((table[0].accuracy - 0.5).abs() < 1e-12);
        assert_eq!(omitted, vec![1, 2]);

        // Single correct sample: accuracy 1, wide interval, no division
        // error.
        let (t1, _) = per_category_ci(&rows[..1].to_vec(), &[0], 3, 1, 1.96).unwrap();
        assert_eq!(t1[0].n, 1);
        assert_eq!(t1[0].accuracy, 1.0);
        assert!(t1[0].ci_low < 0.9 && t1[0].ci_high >= 1.0 - 1e-12);
    }

    #[test]
    fn improved_count_matches_pairwise_comparison() {
        let a = vec![
            CategoryRow { category: 0, n: 10, accuracy: 0.9, ci_low: 0.0, ci_high: 1.0 },
            CategoryRow { category: 1, n: 10, accuracy: 0.2, ci_low: 0.0, ci_high: 1.0 },
            CategoryRow { category: 2, n: 10, accuracy: 0.5, ci_low: 0.0, ci_high: 1.0 },
        ];
        let b = vec![
            CategoryRow { category: 0, n: 10, accuracy: 0.5, ci_low: 0.0, ci_high: 1.0 },
            CategoryRow { category: 1, n: 10, accuracy: 0.5, ci_low: 0.0, ci_high: 1.0 },
            CategoryRow { category: 2, n: 10, accuracy: 0.5, ci_low: 0.0, ci_high: 1.0 },
        ];
        assert_eq!(improved_category_count(&a, &b), 1);
    }

    #[test]
    fn ratio_curve_zero_for_identical_results() {
        let ratios: Vec<f64> = (1..60).map(|i| i as f64).collect();
        let hits: Vec<bool> = (1..60).map(|i| i % 3 == 0).collect();
        let series = ratio_curve(&ratios, &hits, &hits, 4).unwrap();
        assert!(series.points.iter().all(|p| p.y == 0.0));
        let total: usize = series.points.iter().map(|p| p.n).sum();
        assert_eq!(total, 59);
    }

    #[test]
    fn ratio_curve_single_point_when_degenerate() {
        let ratios = vec![5.0; 30];
        let ctx = vec![true; 30];
        let min = vec![false; 30];
        let series = ratio_curve(&ratios, &ctx, &min, 5).unwrap();
        assert_eq!(series.points.len(), 1);
        assert_eq!(series.points[0].n, 30);
        assert!((series.points[0].y - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ratio_curve_merges_small_bins() {
        // 5 samples land in the low bin, 50 in the high bin: the low bin is
        // under the floor of 10 and must merge.
        let mut ratios = vec![1.0; 5];
        ratios.extend(vec![100.0; 50]);
        let ctx = vec![true; 55];
        let min = vec![false; 55];
        let series = ratio_curve(&ratios, &ctx, &min, 5).unwrap();
        assert!(series.points.iter().all(|p| p.n >= 10));
        let total: usize = series.points.iter().map(|p| p.n).sum();
        assert_eq!(total, 55);
    }

    #[test]
    fn ratio_curve_rejects_nonpositive_ratios() {
        assert!(matches!(
            ratio_curve(&[0.0, 1.0], &[true, true], &[false, false], 2),
            Err(Error::Argument(_))
        ));
    }
}
