//! The training loop and the [`Network`] wrapper that feeds each stream its
//! input: minimal-bounding-box crops for the fovea, masked whole scenes for
//! the periphery. Per-sample gradients inside a batch may be computed on
//! worker threads, but every reduction runs in fixed index order, so results
//! are bitwise identical regardless of thread count.

use crate::data::{crop_minimal_context, make_context_input, Dataset, SceneSample};
use crate::layers::{softmax_xent, softmax_xent_backward};
use crate::model::{FoveaModel, GistNetModel, ModelGrads, ModelParams};
use crate::optim::{adam_step, AdamHyper, AdamState};
use crate::rng::SeededRng;
use crate::tensor::{topk_indices, Scalar, Shape, Tensor};
use crate::{Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Per-stream inputs for one sample.
#[derive(Debug, Clone)]
pub struct StreamInputs<T: Scalar> {
    pub fovea: Tensor<T>,
    /// Present only for the fused model.
    pub context: Option<Tensor<T>>,
}

impl<T: Scalar> StreamInputs<T> {
    pub fn cast<U: Scalar>(&self) -> StreamInputs<U> {
        StreamInputs {
            fovea: self.fovea.cast(),
            context: self.context.as_ref().map(|c| c.cast()),
        }
    }
}

/// Either the fovea-only baseline or the fused dual-stream model.
pub enum Network {
    Fovea(FoveaModel),
    Gist(GistNetModel),
}

impl Network {
    pub fn num_classes(&self) -> usize {
        match self {
            Network::Fovea(m) => m.cfg.num_classes,
            Network::Gist(m) => m.cfg.fovea.num_classes,
        }
    }

    pub fn fovea_side(&self) -> usize {
        match self {
            Network::Fovea(m) => m.cfg.side,
            Network::Gist(m) => m.cfg.fovea.side,
        }
    }

    pub fn context_side(&self) -> Option<usize> {
        match self {
            Network::Fovea(_) => None,
            Network::Gist(m) => Some(m.cfg.periphery.side),
        }
    }

    /// Crops and resizes the sample for each stream this network has.
    pub fn prepare_inputs(&self, sample: &SceneSample, margin: f64) -> Result<StreamInputs<f32>> {
        let fovea = crop_minimal_context(sample, self.fovea_side(), margin)?;
        let context = match self.context_side() {
            Some(side) => Some(make_context_input(sample, side)?),
            None => None,
        };
        Ok(StreamInputs { fovea, context })
    }

    fn require_context<'a, T: Scalar>(&self, inputs: &'a StreamInputs<T>) -> Result<&'a Tensor<T>> {
        inputs
            .context
            .as_ref()
            .ok_or_else(|| Error::Argument("fused model needs a context input".into()))
    }

    /// Class logits without keeping any caches.
    pub fn forward_logits<T: Scalar>(
        &self,
        params: &ModelParams<T>,
        inputs: &StreamInputs<T>,
    ) -> Result<Tensor<T>> {
        match self {
            Network::Fovea(m) => {
                let (logits, _, _) = m.forward(params, inputs.fovea.clone())?;
                Ok(logits)
            }
            Network::Gist(m) => {
                let ctx = self.require_context(inputs)?.clone();
                let (logits, _, _) = m.forward(params, inputs.fovea.clone(), ctx)?;
                Ok(logits)
            }
        }
    }

    /// The stream embedding used by the clustering analyses: the fovea fc2
    /// activation for the baseline, the periphery flatten for the fused
    /// model.
    pub fn embedding<T: Scalar>(
        &self,
        params: &ModelParams<T>,
        inputs: &StreamInputs<T>,
    ) -> Result<Tensor<T>> {
        match self {
            Network::Fovea(m) => {
                let (_, emb, _) = m.forward(params, inputs.fovea.clone())?;
                Ok(emb)
            }
            Network::Gist(m) => {
                let ctx = self.require_context(inputs)?.clone();
                let (_, emb, _) = m.forward(params, inputs.fovea.clone(), ctx)?;
                Ok(emb)
            }
        }
    }

    /// Cross-entropy loss of one sample.
    pub fn sample_loss<T: Scalar>(
        &self,
        params: &ModelParams<T>,
        inputs: &StreamInputs<T>,
        label: usize,
    ) -> Result<T> {
        let logits = self.forward_logits(params, inputs)?;
        let (loss, _) = softmax_xent(&logits, label)?;
        Ok(loss)
    }

    /// Forward + backward for one sample: loss, logits, and parameter
    /// gradients.
    pub fn sample_grads<T: Scalar>(
        &self,
        params: &ModelParams<T>,
        inputs: &StreamInputs<T>,
        label: usize,
    ) -> Result<(T, Tensor<T>, ModelGrads<T>)> {
        match self {
            Network::Fovea(m) => {
                let (logits, _, cache) = m.forward(params, inputs.fovea.clone())?;
                let (loss, xc) = softmax_xent(&logits, label)?;
                let dlogits = softmax_xent_backward(xc);
                let (grads, _) = m.backward(params, cache, &dlogits)?;
                Ok((loss, logits, grads))
            }
            Network::Gist(m) => {
                let ctx = self.require_context(inputs)?.clone();
                let (logits, _, cache) = m.forward(params, inputs.fovea.clone(), ctx)?;
                let (loss, xc) = softmax_xent(&logits, label)?;
                let dlogits = softmax_xent_backward(xc);
                let (grads, _, _) = m.backward(params, cache, &dlogits)?;
                Ok((loss, logits, grads))
            }
        }
    }

    /// Gradient of the target-class logit with respect to each input
    /// stream, in input order (fovea, then context when present).
    pub fn input_gradients<T: Scalar>(
        &self,
        params: &ModelParams<T>,
        inputs: &StreamInputs<T>,
        target_class: usize,
    ) -> Result<Vec<Tensor<T>>> {
        let k = self.num_classes();
        if target_class >= k {
            return Err(Error::Argument(format!(
                "target class {target_class} out of range for {k} classes"
            )));
        }
        let mut onehot = Tensor::zeros(Shape::new([k])?);
        onehot.data_mut()[target_class] = T::one();
        match self {
            Network::Fovea(m) => {
                let (_, _, cache) = m.forward(params, inputs.fovea.clone())?;
                let (_, dx) = m.backward(params, cache, &onehot)?;
                Ok(vec![dx])
            }
            Network::Gist(m) => {
                let ctx = self.require_context(inputs)?.clone();
                let (_, _, cache) = m.forward(params, inputs.fovea.clone(), ctx)?;
                let (_, dx_fovea, dx_ctx) = m.backward(params, cache, &onehot)?;
                Ok(vec![dx_fovea, dx_ctx])
            }
        }
    }
}

/// Training-loop settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hyper: AdamHyper,
    pub batch_size: usize,
    pub epochs: usize,
    /// Optional hard cap on optimizer steps across all epochs.
    #[serde(default)]
    pub max_iterations: Option<u64>,
    pub seed: u64,
    /// Keep every n-th log row (1 = all).
    #[serde(default = "default_log_every")]
    pub log_every: u64,
    /// Crop margin for the fovea input.
    #[serde(default)]
    pub margin: f64,
}

fn default_log_every() -> u64 {
    1
}

/// One training log record.
#[derive(Debug, Clone, Serialize)]
pub struct TrainLogRow {
    pub iteration: u64,
    pub loss: f64,
    pub accuracy: f64,
}

/// Stream id namespace for per-epoch batch shuffles.
const EPOCH_STREAM_BASE: u64 = 0x0300_0000_0000;

/// Trains with Adam over shuffled batches. Batch gradients average
/// per-sample gradients in index order. `checkpoint_every` > 0 invokes
/// `on_checkpoint` at that iteration interval. Aborts with a numeric error
/// naming the iteration if the loss stops being finite.
pub fn train<T: Scalar>(
    net: &Network,
    params: ModelParams<T>,
    dataset: &Dataset,
    cfg: &TrainConfig,
    checkpoint_every: u64,
    mut on_checkpoint: impl FnMut(u64, &ModelParams<T>) -> Result<()>,
) -> Result<(ModelParams<T>, Vec<TrainLogRow>)> {
    if cfg.batch_size == 0 {
        return Err(Error::Argument("batch_size must be >= 1".into()));
    }
    if dataset.is_empty() {
        return Err(Error::Argument("cannot train on an empty dataset".into()));
    }
    let mut params = params;
    let mut state = AdamState::init(&params, cfg.hyper)?;
    let mut log = Vec::new();
    let mut iteration: u64 = 0;
    let limit = cfg.max_iterations.unwrap_or(u64::MAX);

    'epochs: for epoch in 0..cfg.epochs {
        let mut epoch_rng = SeededRng::new(cfg.seed, EPOCH_STREAM_BASE + epoch as u64);
        let batches = crate::data::shuffled_batches(dataset.len(), cfg.batch_size, &mut epoch_rng)?;
        for batch in batches {
            if iteration >= limit {
                break 'epochs;
            }
            // Per-sample work in parallel, reduced in index order.
            let results: Vec<Result<(T, bool, ModelGrads<T>)>> = batch
                .par_iter()
                .map(|&i| {
                    let sample = dataset.sample(i)?;
                    let inputs = net.prepare_inputs(&sample, cfg.margin)?.cast::<T>();
                    let (loss, logits, grads) = net.sample_grads(&params, &inputs, sample.category)?;
                    let hit = topk_indices(&logits, 1)?[0] == sample.category;
                    Ok((loss, hit, grads))
                })
                .collect();

            let mut total_loss = 0.0f64;
            let mut hits = 0usize;
            let mut batch_grads: Option<ModelGrads<T>> = None;
            let n = batch.len();
            for r in results {
                let (loss, hit, grads) = r?;
                total_loss += loss.to_f64();
                hits += usize::from(hit);
                match batch_grads.as_mut() {
                    Some(acc) => acc.accumulate(&grads)?,
                    None => batch_grads = Some(grads),
                }
            }
            let mut grads = batch_grads.expect("non-empty batch");
            grads.scale_assign(T::from_f64(1.0 / n as f64));
            let mean_loss = total_loss / n as f64;
            if !mean_loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss {mean_loss} at iteration {}",
                    iteration + 1
                )));
            }

            let (new_params, new_state) = adam_step(&state, &params, &grads)?;
            params = new_params;
            state = new_state;
            iteration += 1;

            if iteration % cfg.log_every.max(1) == 0 {
                log.push(TrainLogRow {
                    iteration,
                    loss: mean_loss,
                    accuracy: hits as f64 / n as f64,
                });
            }
            if checkpoint_every > 0 && iteration % checkpoint_every == 0 {
                on_checkpoint(iteration, &params)?;
            }
        }
    }
    Ok((params, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticConfig};
    use crate::model::{build_fovea, build_gistnet, GistNetConfig};

    fn tiny_synthetic(fidelity: f64, train: usize) -> Dataset {
        let cfg = SyntheticConfig {
            num_pairs: 2,
            num_context_classes: 4,
            fidelity,
            scene_side: 64,
            object_side_min: 12,
            object_side_max: 40,
            train_count: train,
            test_count: 8,
            seed: 5,
        };
        let (train, _) = generate_synthetic(&cfg).unwrap();
        Dataset::Synthetic(train)
    }

    fn tiny_model_cfg() -> GistNetConfig {
        // Smallest legal dual-stream config: fovea 16 with one pool block,
        // periphery 64.
        let mut cfg = GistNetConfig::desk_scale();
        cfg.fovea.side = 16;
        cfg.fovea.conv_plan = vec![
            crate::model::FoveaStage::Conv(4),
            crate::model::FoveaStage::Pool,
            crate::model::FoveaStage::Conv(8),
            crate::model::FoveaStage::Pool,
        ];
        cfg.fovea.fc1 = 16;
        cfg.fovea.fc2 = 8;
        cfg.fovea.num_classes = 4;
        cfg.periphery = crate::model::PeripheryConfig::from_channels(64, [4, 4, 8, 8, 8, 8, 8, 8], 4);
        cfg
    }

    fn train_cfg(epochs: usize) -> TrainConfig {
        TrainConfig {
            hyper: AdamHyper::with_lr(1e-3),
            batch_size: 4,
            epochs,
            max_iterations: None,
            seed: 7,
            log_every: 1,
            margin: 0.0,
        }
    }

    #[test]
    fn zero_iterations_returns_initialization() {
        let cfg = tiny_model_cfg();
        let (model, params) = build_gistnet::<f32>(&cfg, &SeededRng::new(1, 0)).unwrap();
        let net = Network::Gist(model);
        let data = tiny_synthetic(0.9, 16);
        let mut tc = train_cfg(1);
        tc.max_iterations = Some(0);
        let (out, log) = train(&net, params.clone(), &data, &tc, 0, |_, _| Ok(())).unwrap();
        assert_eq!(out, params);
        assert!(log.is_empty());
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = tiny_model_cfg();
        let data = tiny_synthetic(0.9, 24);
        let run = || {
            let (model, params) = build_gistnet::<f32>(&cfg, &SeededRng::new(1, 0)).unwrap();
            let net = Network::Gist(model);
            let (p, log) = train(&net, params, &data, &train_cfg(2), 0, |_, _| Ok(())).unwrap();
            (p, log.last().unwrap().loss)
        };
        let (p1, l1) = run();
        let (p2, l2) = run();
        assert_eq!(p1, p2);
        let rel = (l1 - l2).abs() / l1.abs().max(1e-12);
        assert!(rel <= 1e-10, "losses {l1} vs {l2}");
    }

    #[test]
    fn loss_decreases_on_tiny_overfit() {
        let cfg = tiny_model_cfg();
        let (model, params) = build_fovea::<f32>(&cfg.fovea, &SeededRng::new(2, 0)).unwrap();
        let net = Network::Fovea(model);
        let data = tiny_synthetic(1.0, 16);
        let (_, log) = train(&net, params, &data, &train_cfg(8), 0, |_, _| Ok(())).unwrap();
        let first = log.first().unwrap().loss;
        let last = log.last().unwrap().loss;
        assert!(last < first, "loss did not decrease: {first} -> {last}");
    }

    #[test]
    fn checkpoint_callback_fires_at_interval() {
        let cfg = tiny_model_cfg();
        let (model, params) = build_gistnet::<f32>(&cfg, &SeededRng::new(3, 0)).unwrap();
        let net = Network::Gist(model);
        let data = tiny_synthetic(0.9, 16);
        let mut seen = Vec::new();
        let tc = train_cfg(1); // 16 samples / batch 4 = 4 iterations
        train(&net, params, &data, &tc, 2, |it, _| {
            seen.push(it);
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, vec![2, 4]);
    }

    #[test]
    fn input_gradients_cover_both_streams() {
        let cfg = tiny_model_cfg();
        let (model, params) = build_gistnet::<f32>(&cfg, &SeededRng::new(4, 0)).unwrap();
        let net = Network::Gist(model);
        let data = tiny_synthetic(0.9, 4);
        let sample = data.sample(0).unwrap();
        let inputs = net.prepare_inputs(&sample, 0.0).unwrap();
        let grads = net.input_gradients(&params, &inputs, 0).unwrap();
        assert_eq!(grads.len(), 2);
        assert_eq!(grads[0].shape(), inputs.fovea.shape());
        assert_eq!(grads[1].shape(), inputs.context.as_ref().unwrap().shape());
    }
}
