//! Minimal differentiable feed-forward engine in f64: dense layers, a
//! recording forward pass, exact backprop, the Gaussian reparameterization
//! trick, the two loss terms shared by both training stages, and Adam.
//!
//! Gradients are computed against recorded activations (a [`GradTape`]); a
//! tape is single-use so a stale reuse is an error instead of a silently
//! wrong gradient.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("gradient tape already consumed by a previous backward pass")]
    StaleTape,
    #[error("shape mismatch in {what}: expected {expected}, got {got}")]
    Shape {
        what: String,
        expected: String,
        got: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Sigmoid,
    Identity,
}

impl Activation {
    pub fn apply(&self, pre: f64) -> f64 {
        match self {
            Activation::Relu => pre.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-pre).exp()),
            Activation::Identity => pre,
        }
    }

    /// Derivative expressed through the activation's own output, which is
    /// what the tape stores.
    pub fn derivative_from_output(&self, out: f64) -> f64 {
        match self {
            Activation::Relu => {
                if out > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => out * (1.0 - out),
            Activation::Identity => 1.0,
        }
    }
}

/// Fully connected layer; `weights` is laid out input x output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Dense {
    /// Glorot-uniform initialization: U(-l, l) with l = sqrt(6 / (in + out)),
    /// zero bias.
    pub fn glorot(input: usize, output: usize, activation: Activation, rng: &mut ChaCha8Rng) -> Dense {
        let limit = (6.0 / (input + output) as f64).sqrt();
        let weights =
            Array2::from_shape_fn((input, output), |_| rng.random_range(-limit..=limit));
        Dense {
            weights,
            bias: Array1::zeros(output),
            activation,
        }
    }

    fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut out = x.dot(&self.weights) + &self.bias;
        if self.activation != Activation::Identity {
            out.mapv_inplace(|v| self.activation.apply(v));
        }
        out
    }
}

/// Recorded activations from one forward pass: `stages[0]` is the network
/// input, `stages[i + 1]` the post-activation output of layer `i`.
#[derive(Debug)]
pub struct GradTape {
    stages: Vec<Array2<f64>>,
    spent: bool,
}

impl GradTape {
    pub fn output(&self) -> &Array2<f64> {
        self.stages.last().expect("tape has at least the input stage")
    }
}

/// Per-layer parameter gradients, same shapes as the layer parameters.
#[derive(Debug, Clone)]
pub struct DenseGrads {
    pub d_weights: Array2<f64>,
    pub d_bias: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub layers: Vec<DenseGrads>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    /// `sizes` lists the layer widths including input and output; hidden
    /// layers use `hidden`, the last layer `output` as activation.
    pub fn new(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut ChaCha8Rng,
    ) -> Mlp {
        assert!(sizes.len() >= 2, "an MLP needs at least input and output widths");
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i == last { output } else { hidden };
                Dense::glorot(w[0], w[1], act, rng)
            })
            .collect();
        Mlp { layers }
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].weights.nrows()
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().expect("non-empty").weights.ncols()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut cur = x.clone();
        for layer in &self.layers {
            cur = layer.forward(&cur);
        }
        cur
    }

    /// Forward pass that records every stage for a later [`Mlp::backward`].
    pub fn forward_recorded(&self, x: &Array2<f64>) -> (Array2<f64>, GradTape) {
        let mut stages = Vec::with_capacity(self.layers.len() + 1);
        stages.push(x.clone());
        for layer in &self.layers {
            let next = layer.forward(stages.last().expect("non-empty"));
            stages.push(next);
        }
        let out = stages.last().expect("non-empty").clone();
        (out, GradTape { stages, spent: false })
    }

    /// Backpropagate `upstream` (dJ/d_output) through the recorded pass.
    /// Returns parameter gradients and dJ/d_input. Consumes the tape's
    /// one-shot budget; a second call on the same tape fails.
    pub fn backward(
        &self,
        tape: &mut GradTape,
        upstream: &Array2<f64>,
    ) -> Result<(MlpGrads, Array2<f64>), NnError> {
        if tape.spent {
            return Err(NnError::StaleTape);
        }
        tape.spent = true;
        let n_layers = self.layers.len();
        if tape.stages.len() != n_layers + 1 {
            return Err(NnError::Shape {
                what: "gradient tape".into(),
                expected: format!("{} stages", n_layers + 1),
                got: format!("{}", tape.stages.len()),
            });
        }
        let out_shape = tape.stages[n_layers].dim();
        if upstream.dim() != out_shape {
            return Err(NnError::Shape {
                what: "upstream gradient".into(),
                expected: format!("{:?}", out_shape),
                got: format!("{:?}", upstream.dim()),
            });
        }
        ensure_finite("upstream gradient", upstream)?;

        let mut grads = vec![None; n_layers];
        let mut delta = upstream.clone();
        for i in (0..n_layers).rev() {
            let layer = &self.layers[i];
            let input = &tape.stages[i];
            let output = &tape.stages[i + 1];
            // Chain through the activation using the stored outputs.
            if layer.activation != Activation::Identity {
                delta = &delta
                    * &output.mapv(|o| layer.activation.derivative_from_output(o));
            }
            let d_weights = input.t().dot(&delta);
            let d_bias = delta.sum_axis(Axis(0));
            delta = delta.dot(&layer.weights.t());
            ensure_finite(&format!("layer {i} weight gradient"), &d_weights)?;
            grads[i] = Some(DenseGrads { d_weights, d_bias });
        }
        ensure_finite("input gradient", &delta)?;
        let layers = grads.into_iter().map(|g| g.expect("filled")).collect();
        Ok((MlpGrads { layers }, delta))
    }
}

pub fn ensure_finite(what: &str, a: &Array2<f64>) -> Result<(), NnError> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(NnError::NonFinite(what.to_string()))
    }
}

/// Batched diagonal-Gaussian parameters produced by an encoder.
#[derive(Debug, Clone)]
pub struct GaussianHead {
    pub mu: Array2<f64>,
    pub log_var: Array2<f64>,
}

/// Split a width-2k encoder output into mean (first k columns) and
/// log-variance (last k columns).
pub fn split_gaussian(h: &Array2<f64>) -> Result<GaussianHead, NnError> {
    let w = h.ncols();
    if w == 0 || w % 2 != 0 {
        return Err(NnError::Shape {
            what: "gaussian head".into(),
            expected: "even positive width".into(),
            got: format!("{w}"),
        });
    }
    let k = w / 2;
    Ok(GaussianHead {
        mu: h.slice(ndarray::s![.., ..k]).to_owned(),
        log_var: h.slice(ndarray::s![.., k..]).to_owned(),
    })
}

/// Reparameterized sample z = mu + exp(log_var / 2) * eps.
pub fn reparam_sample(head: &GaussianHead, eps: &Array2<f64>) -> Array2<f64> {
    &head.mu + &(head.log_var.mapv(|lv| (0.5 * lv).exp()) * eps)
}

/// Gradients of a loss through the reparameterized sample:
/// d_mu = d_z, d_log_var = d_z * eps * exp(log_var / 2) / 2.
pub fn reparam_backward(
    head: &GaussianHead,
    eps: &Array2<f64>,
    d_z: &Array2<f64>,
) -> (Array2<f64>, Array2<f64>) {
    let d_mu = d_z.clone();
    let d_log_var = d_z * eps * &head.log_var.mapv(|lv| 0.5 * (0.5 * lv).exp());
    (d_mu, d_log_var)
}

/// Clamp applied inside the binary cross-entropy logs so saturated sigmoid
/// outputs cannot produce infinities.
const BCE_EPS: f64 = 1e-12;

/// Binary cross-entropy, summed over the cells of each row, averaged over
/// the batch.
pub fn bce_sum_mean(p: &Array2<f64>, target: &Array2<f64>) -> f64 {
    let n = p.nrows() as f64;
    let mut total = 0.0;
    for (pv, tv) in p.iter().zip(target.iter()) {
        let pc = pv.clamp(BCE_EPS, 1.0 - BCE_EPS);
        total -= tv * pc.ln() + (1.0 - tv) * (1.0 - pc).ln();
    }
    total / n
}

/// d(bce_sum_mean)/dp, elementwise.
pub fn bce_sum_mean_grad(p: &Array2<f64>, target: &Array2<f64>) -> Array2<f64> {
    let n = p.nrows() as f64;
    let mut g = Array2::zeros(p.dim());
    for ((gv, pv), tv) in g.iter_mut().zip(p.iter()).zip(target.iter()) {
        let pc = pv.clamp(BCE_EPS, 1.0 - BCE_EPS);
        *gv = (-tv / pc + (1.0 - tv) / (1.0 - pc)) / n;
    }
    g
}

/// KL divergence from a diagonal Gaussian to the standard normal, summed
/// over latent coordinates and averaged over the batch:
/// mean_i 1/2 sum_j (exp(lv) + mu^2 - 1 - lv).
pub fn gaussian_kl_mean(head: &GaussianHead) -> f64 {
    let n = head.mu.nrows() as f64;
    let mut total = 0.0;
    for (m, lv) in head.mu.iter().zip(head.log_var.iter()) {
        total += 0.5 * (lv.exp() + m * m - 1.0 - lv);
    }
    total / n
}

/// Gradients of [`gaussian_kl_mean`] with respect to mu and log_var.
pub fn gaussian_kl_mean_grad(head: &GaussianHead) -> (Array2<f64>, Array2<f64>) {
    let n = head.mu.nrows() as f64;
    let d_mu = head.mu.mapv(|m| m / n);
    let d_log_var = head.log_var.mapv(|lv| 0.5 * (lv.exp() - 1.0) / n);
    (d_mu, d_log_var)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One scalar Adam update with bias correction. `t` is the 1-based step
/// count. Returns the new parameter value and updates the moments in place.
pub fn adam_update(
    param: f64,
    grad: f64,
    m: &mut f64,
    v: &mut f64,
    t: usize,
    p: &AdamParams,
) -> f64 {
    *m = p.beta1 * *m + (1.0 - p.beta1) * grad;
    *v = p.beta2 * *v + (1.0 - p.beta2) * grad * grad;
    let m_hat = *m / (1.0 - p.beta1.powi(t as i32));
    let v_hat = *v / (1.0 - p.beta2.powi(t as i32));
    param - p.lr * m_hat / (v_hat.sqrt() + p.eps)
}

struct LayerMoments {
    m_weights: Array2<f64>,
    v_weights: Array2<f64>,
    m_bias: Array1<f64>,
    v_bias: Array1<f64>,
}

/// Adam state for one MLP's parameters.
pub struct AdamOpt {
    pub params: AdamParams,
    t: usize,
    moments: Vec<LayerMoments>,
}

impl AdamOpt {
    pub fn new(mlp: &Mlp, params: AdamParams) -> AdamOpt {
        let moments = mlp
            .layers
            .iter()
            .map(|l| LayerMoments {
                m_weights: Array2::zeros(l.weights.dim()),
                v_weights: Array2::zeros(l.weights.dim()),
                m_bias: Array1::zeros(l.bias.len()),
                v_bias: Array1::zeros(l.bias.len()),
            })
            .collect();
        AdamOpt {
            params,
            t: 0,
            moments,
        }
    }

    pub fn step(&mut self, mlp: &mut Mlp, grads: &MlpGrads) -> Result<(), NnError> {
        if grads.layers.len() != mlp.layers.len() {
            return Err(NnError::Shape {
                what: "adam gradients".into(),
                expected: format!("{} layers", mlp.layers.len()),
                got: format!("{}", grads.layers.len()),
            });
        }
        self.t += 1;
        let t = self.t;
        let p = self.params;
        for ((layer, g), mom) in mlp
            .layers
            .iter_mut()
            .zip(&grads.layers)
            .zip(&mut self.moments)
        {
            for ((w, gw), (mw, vw)) in layer
                .weights
                .iter_mut()
                .zip(g.d_weights.iter())
                .zip(mom.m_weights.iter_mut().zip(mom.v_weights.iter_mut()))
            {
                *w = adam_update(*w, *gw, mw, vw, t, &p);
            }
            for ((b, gb), (mb, vb)) in layer
                .bias
                .iter_mut()
                .zip(g.d_bias.iter())
                .zip(mom.m_bias.iter_mut().zip(mom.v_bias.iter_mut()))
            {
                *b = adam_update(*b, *gb, mb, vb, t, &p);
            }
        }
        Ok(())
    }
}
