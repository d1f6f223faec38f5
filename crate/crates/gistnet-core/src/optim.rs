//! Adam optimizer and the finite-difference gradient checker used as the
//! training-correctness oracle.

use crate::model::{ModelGrads, ModelParams};
use crate::rng::SeededRng;
use crate::tensor::{Scalar, Tensor};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Adam hyperparameters. Defaults follow the cited method (beta1 0.9,
/// beta2 0.999, eps 1e-8); the learning rate is the caller's choice.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamHyper {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamHyper {
    pub fn with_lr(alpha: f64) -> Self {
        AdamHyper {
            alpha,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Argument(format!(
                "betas must lie in [0,1): beta1={} beta2={}",
                self.beta1, self.beta2
            )));
        }
        if self.epsilon <= 0.0 {
            return Err(Error::Argument(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        if self.alpha < 0.0 {
            return Err(Error::Argument(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        Ok(())
    }
}

/// Per-parameter first/second moments plus the step count.
#[derive(Debug, Clone)]
pub struct AdamState<T: Scalar> {
    pub m: ModelParams<T>,
    pub v: ModelParams<T>,
    pub t: u64,
    pub hyper: AdamHyper,
}

impl<T: Scalar> AdamState<T> {
    /// Zero moments at t = 0, shaped like `params`.
    pub fn init(params: &ModelParams<T>, hyper: AdamHyper) -> Result<Self> {
        hyper.validate()?;
        Ok(AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
            hyper,
        })
    }
}

fn adam_tensor<T: Scalar>(
    hyper: &AdamHyper,
    bc1: f64,
    bc2: f64,
    theta: &Tensor<T>,
    g: &Tensor<T>,
    m: &Tensor<T>,
    v: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    if theta.shape() != g.shape() {
        return Err(Error::Shape(format!(
            "gradient shape {} does not match parameter shape {}",
            g.shape(),
            theta.shape()
        )));
    }
    let b1 = T::from_f64(hyper.beta1);
    let b2 = T::from_f64(hyper.beta2);
    let one_m_b1 = T::from_f64(1.0 - hyper.beta1);
    let one_m_b2 = T::from_f64(1.0 - hyper.beta2);
    let alpha = T::from_f64(hyper.alpha);
    let eps = T::from_f64(hyper.epsilon);
    let inv_bc1 = T::from_f64(1.0 / bc1);
    let inv_bc2 = T::from_f64(1.0 / bc2);

    let n = theta.len();
    let mut new_m = Vec::with_capacity(n);
    let mut new_v = Vec::with_capacity(n);
    let mut new_theta = Vec::with_capacity(n);
    for i in 0..n {
        let gi = g.data()[i];
        let mi = b1 * m.data()[i] + one_m_b1 * gi;
        let vi = b2 * v.data()[i] + one_m_b2 * gi * gi;
        let m_hat = mi * inv_bc1;
        let v_hat = vi * inv_bc2;
        new_theta.push(theta.data()[i] - alpha * m_hat / (v_hat.sqrt() + eps));
        new_m.push(mi);
        new_v.push(vi);
    }
    Ok((
        Tensor::from_vec(theta.shape().clone(), new_theta)?,
        Tensor::from_vec(theta.shape().clone(), new_m)?,
        Tensor::from_vec(theta.shape().clone(), new_v)?,
    ))
}

/// One Adam update with bias-corrected moment estimates:
/// m' = b1*m + (1-b1)*g, v' = b2*v + (1-b2)*g^2,
/// theta' = theta - alpha * m'/(1-b1^t') / (sqrt(v'/(1-b2^t')) + eps).
/// Nothing is mutated; new values are returned.
pub fn adam_step<T: Scalar>(
    state: &AdamState<T>,
    params: &ModelParams<T>,
    grads: &ModelGrads<T>,
) -> Result<(ModelParams<T>, AdamState<T>)> {
    let t_next = state.t + 1;
    let bc1 = 1.0 - state.hyper.beta1.powi(t_next as i32);
    let bc2 = 1.0 - state.hyper.beta2.powi(t_next as i32);
    let mut new_params = ModelParams::new();
    let mut new_m = ModelParams::new();
    let mut new_v = ModelParams::new();
    for (name, theta) in params.iter() {
        let g = grads.get(name)?;
        let m = state.m.get(name)?;
        let v = state.v.get(name)?;
        let (tw, mw, vw) =
            adam_tensor(&state.hyper, bc1, bc2, &theta.weights, &g.weights, &m.weights, &v.weights)?;
        let (tb, mb, vb) =
            adam_tensor(&state.hyper, bc1, bc2, &theta.bias, &g.bias, &m.bias, &v.bias)?;
        new_params.insert(
            name.clone(),
            crate::layers::LayerParams { weights: tw, bias: tb },
        );
        new_m.insert(
            name.clone(),
            crate::layers::LayerParams { weights: mw, bias: mb },
        );
        new_v.insert(
            name.clone(),
            crate::layers::LayerParams { weights: vw, bias: vb },
        );
    }
    Ok((
        new_params,
        AdamState {
            m: new_m,
            v: new_v,
            t: t_next,
            hyper: state.hyper,
        },
    ))
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checking
// ---------------------------------------------------------------------------

/// Relative error between an analytic and a numeric derivative.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

/// One row of a gradient-check report: a single parameter tensor.
#[derive(Debug, Clone, Serialize)]
pub struct GradCheckEntry {
    pub layer: String,
    /// "weights" or "bias".
    pub tensor: String,
    /// Number of elements checked (sampled for large tensors).
    pub checked: usize,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub max_rel_err: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_err <= tolerance
    }

    /// Layer name and tensor of the worst entry.
    pub fn worst(&self) -> Option<&GradCheckEntry> {
        self.entries
            .iter()
            .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    }
}

/// Step size for central differences.
pub const GRAD_CHECK_EPSILON: f64 = 1e-5;

/// Compares `analytic` gradients against central finite differences of
/// `loss_fn` in float64. `samples_per_tensor` caps how many elements of
/// each tensor are probed (None = all), chosen deterministically from
/// `seed`. The report lists every parameter tensor exactly once.
pub fn grad_check<F>(
    params: &ModelParams<f64>,
    analytic: &ModelGrads<f64>,
    loss_fn: F,
    samples_per_tensor: Option<usize>,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn(&ModelParams<f64>) -> Result<f64>,
{
    let base = loss_fn(params)?;
    if !base.is_finite() {
        return Err(Error::Numeric(format!("loss is not finite: {base}")));
    }
    let mut work = params.clone();
    let mut entries = Vec::new();
    let names: Vec<String> = params.iter().map(|(n, _)| n.clone()).collect();
    for (tensor_idx, name) in names.iter().enumerate() {
        for (which, len) in [
            ("weights", params.get(name)?.weights.len()),
            ("bias", params.get(name)?.bias.len()),
        ] {
            let indices: Vec<usize> = match samples_per_tensor {
                Some(cap) if len > cap => {
                    let mut rng =
                        SeededRng::new(seed, (tensor_idx as u64) << 1 | u64::from(which == "bias"));
                    let mut idx: Vec<usize> = (0..len).collect();
                    rng.shuffle(&mut idx);
                    idx.truncate(cap);
                    idx.sort_unstable();
                    idx
                }
                _ => (0..len).collect(),
            };
            let mut max_rel = 0.0f64;
            for &i in &indices {
                let theta = read_elem(&work, name, which, i)?;
                write_elem(&mut work, name, which, i, theta + GRAD_CHECK_EPSILON)?;
                let plus = loss_fn(&work)?;
                write_elem(&mut work, name, which, i, theta - GRAD_CHECK_EPSILON)?;
                let minus = loss_fn(&work)?;
                write_elem(&mut work, name, which, i, theta)?;
                if !plus.is_finite() || !minus.is_finite() {
                    return Err(Error::Numeric(format!(
                        "perturbed loss not finite at {name}.{which}[{i}]"
                    )));
                }
                let numeric = (plus - minus) / (2.0 * GRAD_CHECK_EPSILON);
                let a = match which {
                    "weights" => analytic.get(name)?.weights.data()[i],
                    _ => analytic.get(name)?.bias.data()[i],
                };
                let rel = relative_error(a, numeric);
                if rel > max_rel {
                    max_rel = rel;
                }
            }
            entries.push(GradCheckEntry {
                layer: name.clone(),
                tensor: which.to_string(),
                checked: indices.len(),
                max_rel_err: max_rel,
            });
        }
    }
    let max_rel_err = entries.iter().map(|e| e.max_rel_err).fold(0.0, f64::max);
    Ok(GradCheckReport {
        entries,
        max_rel_err,
    })
}

fn read_elem(params: &ModelParams<f64>, name: &str, which: &str, i: usize) -> Result<f64> {
    let p = params.get(name)?;
    Ok(match which {
        "weights" => p.weights.data()[i],
        _ => p.bias.data()[i],
    })
}

fn write_elem(
    params: &mut ModelParams<f64>,
    name: &str,
    which: &str,
    i: usize,
    value: f64,
) -> Result<()> {
    let p = params.get_mut(name)?;
    match which {
        "weights" => p.weights.data_mut()[i] = value,
        _ => p.bias.data_mut()[i] = value,
    }
    Ok(())
}
