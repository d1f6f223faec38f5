//! Linear probe: multinomial logistic regression on frozen embeddings,
//! trained with this crate's own softmax cross-entropy and Adam (500
//! epochs, full batch, features standardised per dimension), evaluated on a
//! seeded held-out split.

use crate::layers::{
    dense_backward, dense_forward, softmax_xent, softmax_xent_backward, DenseSpec, LayerParams,
};
use crate::model::{ModelGrads, ModelParams};
use crate::optim::{adam_step, AdamHyper, AdamState};
use crate::rng::SeededRng;
use crate::tensor::{topk_indices, Shape, Tensor};
use crate::tsne::EmbeddingSet;
use crate::{Error, Result};
use serde::Serialize;

/// Which per-row label the probe predicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeLabel {
    Superclass,
    Category,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbeReport {
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub num_classes: usize,
    pub train_n: usize,
    pub test_n: usize,
}

const PROBE_EPOCHS: usize = 500;
const PROBE_LR: f64 = 0.05;
const PROBE_LAYER: &str = "probe.dense";

fn labels_of(embeddings: &EmbeddingSet, which: ProbeLabel) -> Vec<usize> {
    match which {
        ProbeLabel::Superclass => embeddings.superclass.iter().map(|&s| s as usize).collect(),
        ProbeLabel::Category => embeddings.category.clone(),
    }
}

/// Trains the probe on a seeded `split_fraction` of the rows and reports
/// train and held-out accuracy.
pub fn linear_probe(
    embeddings: &EmbeddingSet,
    which: ProbeLabel,
    split_fraction: f64,
    seed: u64,
) -> Result<ProbeReport> {
    let n = embeddings.len();
    if n < 20 {
        return Err(Error::Argument(format!("probe needs n >= 20, got {n}")));
    }
    if !(0.0..1.0).contains(&split_fraction) || split_fraction <= 0.0 {
        return Err(Error::Argument(format!(
            "split fraction must lie in (0,1), got {split_fraction}"
        )));
    }
    let labels = labels_of(embeddings, which);
    let num_classes = labels.iter().max().unwrap() + 1;
    {
        let mut seen = vec![false; num_classes];
        for &l in &labels {
            seen[l] = true;
        }
        if seen.iter().filter(|&&s| s).count() < 2 {
            return Err(Error::Argument("probe needs at least 2 classes present".into()));
        }
    }

    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = SeededRng::new(seed, 0);
    rng.shuffle(&mut idx);
    let train_n = ((n as f64 * split_fraction).round() as usize).clamp(1, n - 1);
    let (train_idx, test_idx) = idx.split_at(train_n);

    let d = embeddings.data.dims()[1];
    let xd = embeddings.data.data();

    // Standardise per dimension with training-split statistics.
    let mut mean = vec![0.0f64; d];
    for &i in train_idx {
        for (m, &v) in mean.iter_mut().zip(&xd[i * d..(i + 1) * d]) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= train_n as f64;
    }
    let mut std = vec![0.0f64; d];
    for &i in train_idx {
        for (s, (&v, &m)) in std.iter_mut().zip(xd[i * d..(i + 1) * d].iter().zip(&mean)) {
            *s += (v - m) * (v - m);
        }
    }
    for s in std.iter_mut() {
        *s = (*s / train_n as f64).sqrt();
        if *s == 0.0 {
            *s = 1.0;
        }
    }
    let feature = |i: usize| -> Tensor<f64> {
        let row: Vec<f64> = xd[i * d..(i + 1) * d]
            .iter()
            .zip(mean.iter().zip(&std))
            .map(|(&v, (&m, &s))| (v - m) / s)
            .collect();
        Tensor::from_vec(Shape::new([d]).expect("d >= 1"), row).expect("length matches")
    };

    // Zero-initialised logistic regression; the objective is convex.
    let spec = DenseSpec::new(d, num_classes);
    let mut params = ModelParams::<f64>::new();
    params.insert(
        PROBE_LAYER,
        LayerParams {
            weights: Tensor::zeros(spec.weight_shape()),
            bias: Tensor::zeros(Shape::new([num_classes])?),
        },
    );
    let mut state = AdamState::init(&params, AdamHyper::with_lr(PROBE_LR))?;

    for _ in 0..PROBE_EPOCHS {
        let mut grads: Option<ModelGrads<f64>> = None;
        for &i in train_idx {
            let x = feature(i);
            let (logits, cache) = dense_forward(&spec, params.get(PROBE_LAYER)?, &x)?;
            let (_, xc) = softmax_xent(&logits, labels[i])?;
            let dlogits = softmax_xent_backward(xc);
            let (_, dw, db) = dense_backward(&spec, params.get(PROBE_LAYER)?, cache, &dlogits)?;
            let mut g = ModelGrads::new();
            g.insert(PROBE_LAYER, LayerParams { weights: dw, bias: db });
            match grads.as_mut() {
                Some(acc) => acc.accumulate(&g)?,
                None => grads = Some(g),
            }
        }
        let mut grads = grads.expect("non-empty training split");
        grads.scale_assign(1.0 / train_n as f64);
        let (p, s) = adam_step(&state, &params, &grads)?;
        params = p;
        state = s;
    }

    let accuracy = |indices: &[usize]| -> Result<f64> {
        let mut hits = 0usize;
        for &i in indices {
            let x = feature(i);
            let (logits, _) = dense_forward(&spec, params.get(PROBE_LAYER)?, &x)?;
            hits += usize::from(topk_indices(&logits, 1)?[0] == labels[i]);
        }
        Ok(hits as f64 / indices.len() as f64)
    };

    Ok(ProbeReport {
        train_accuracy: accuracy(train_idx)?,
        test_accuracy: accuracy(test_idx)?,
        num_classes,
        train_n,
        test_n: test_idx.len(),
    })
}
