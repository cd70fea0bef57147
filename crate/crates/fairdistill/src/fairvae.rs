//! Teacher model: a conditional variational autoencoder whose latent space is
//! penalized for statistical dependence on the protected attribute.
//!
//! The dependence measure is the squared distance covariance between a latent
//! batch and the one-hot protected groups, estimated with the plug-in
//! V-statistic over pairwise Euclidean distances. It is zero exactly when the
//! two samples behave independently, which makes it a stronger penalty than
//! plain correlation: nonlinear leakage of the protected attribute into the
//! latents is punished too.
//!
//! By default the teacher also models the target label as part of its
//! reconstruction space (two extra one-hot cells appended to the encoded
//! features), so downstream sampling regenerates labels through the same
//! decorrelated latent space instead of copying them from source rows.

use std::path::Path;

use ndarray::{concatenate, s, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Dataset, TabularSchema};
use crate::nn::{
    bce_sum_mean, bce_sum_mean_grad, gaussian_kl_mean, gaussian_kl_mean_grad, reparam_backward,
    reparam_sample, split_gaussian, Activation, AdamOpt, AdamParams, GaussianHead, Mlp, NnError,
};

#[derive(Debug, Error)]
pub enum FairVaeError {
    #[error("invalid teacher config: {0}")]
    Config(String),
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FairVaeConfig {
    pub latent_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    /// Weight of the distance-covariance penalty in the training objective.
    pub beta: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// When true the target label is appended to the modeled record and
    /// regenerated from the latent at sampling time, which severs any direct
    /// group-label dependence; when false (the default) synthetic rows keep
    /// their source labels, which preserves label quality for downstream
    /// training. Pick per dataset: regenerate when the label itself encodes
    /// the bias, carry when the bias lives in the features.
    pub models_target: bool,
}

impl Default for FairVaeConfig {
    fn default() -> Self {
        FairVaeConfig {
            latent_dim: 8,
            encoder_hidden: vec![64, 64],
            decoder_hidden: vec![64, 64],
            beta: 4.0,
            epochs: 30,
            batch_size: 64,
            learning_rate: 1e-3,
            seed: 0,
            models_target: false,
        }
    }
}

impl FairVaeConfig {
    pub fn validate(&self) -> Result<(), FairVaeError> {
        if self.latent_dim == 0 {
            return Err(FairVaeError::Config("latent_dim must be at least 1".into()));
        }
        if self.batch_size < 2 {
            return Err(FairVaeError::Config(
                "batch_size must be at least 2 (the dependence penalty needs pairs)".into(),
            ));
        }
        if self.epochs == 0 {
            return Err(FairVaeError::Config("epochs must be at least 1".into()));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(FairVaeError::Config("beta must be finite and >= 0".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(FairVaeError::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// Pairwise Euclidean distances between the rows of `z`.
fn pairwise_distances(z: &Array2<f64>) -> Array2<f64> {
    let n = z.nrows();
    let mut d = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let mut acc = 0.0;
            for c in 0..z.ncols() {
                let diff = z[[i, c]] - z[[j, c]];
                acc += diff * diff;
            }
            let dist = acc.sqrt();
            d[[i, j]] = dist;
            d[[j, i]] = dist;
        }
    }
    d
}

/// Double-center a square matrix: subtract row and column means, add back the
/// grand mean.
fn double_center(m: &Array2<f64>) -> Array2<f64> {
    let n = m.nrows() as f64;
    let row_means = m.mean_axis(Axis(1)).expect("non-empty");
    let col_means = m.mean_axis(Axis(0)).expect("non-empty");
    let grand = m.sum() / (n * n);
    let mut out = m.clone();
    for ((i, j), v) in out.indexed_iter_mut() {
        *v = *v - row_means[i] - col_means[j] + grand;
    }
    out
}

/// One-hot distance matrix for the protected groups: 0 within a group,
/// sqrt(2) across groups.
fn group_distances(s_onehot: &Array2<f64>) -> Array2<f64> {
    let n = s_onehot.nrows();
    let mut d = Array2::zeros((n, n));
    let root2 = 2.0f64.sqrt();
    for i in 0..n {
        for j in (i + 1)..n {
            let same = s_onehot.row(i) == s_onehot.row(j);
            if !same {
                d[[i, j]] = root2;
                d[[j, i]] = root2;
            }
        }
    }
    d
}

/// Squared distance covariance (V-statistic) between a latent batch and the
/// one-hot protected attribute: the mean elementwise product of the
/// double-centered pairwise distance matrices, clamped at zero against
/// floating-point rounding.
///
/// Because double-centering is a self-adjoint projection and the group matrix
/// is centered explicitly, the latent matrix does not need centering of its
/// own: mean(A * center(B)) equals mean(center(A) * center(B)).
pub fn distance_covariance_sq(z: &Array2<f64>, s_onehot: &Array2<f64>) -> f64 {
    let n = z.nrows();
    assert_eq!(n, s_onehot.nrows(), "latent batch and groups must align");
    if n < 2 {
        return 0.0;
    }
    let a = pairwise_distances(z);
    let b_hat = double_center(&group_distances(s_onehot));
    let v2 = (&a * &b_hat).sum() / (n as f64 * n as f64);
    v2.max(0.0)
}

/// Gradient of [`distance_covariance_sq`] with respect to the latent batch.
///
/// d V2 / d z_p = (2 / n^2) * sum_{j != p} Bhat[p, j] * (z_p - z_j) / A[p, j],
/// skipping coincident pairs (A = 0), whose contribution has no defined
/// direction and measure zero under sampled noise.
pub fn distance_covariance_sq_grad(z: &Array2<f64>, s_onehot: &Array2<f64>) -> Array2<f64> {
    let n = z.nrows();
    let k = z.ncols();
    let mut grad = Array2::zeros((n, k));
    if n < 2 {
        return grad;
    }
    let a = pairwise_distances(z);
    let b_hat = double_center(&group_distances(s_onehot));
    let scale = 2.0 / (n as f64 * n as f64);
    for p in 0..n {
        for j in 0..n {
            if j == p || a[[p, j]] == 0.0 {
                continue;
            }
            let w = scale * b_hat[[p, j]] / a[[p, j]];
            for c in 0..k {
                grad[[p, c]] += w * (z[[p, c]] - z[[j, c]]);
            }
        }
    }
    grad
}

/// Loss components of one teacher forward pass.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ElboTerms {
    /// Reconstruction: binary cross-entropy summed per row, batch-averaged.
    pub recon: f64,
    /// KL divergence of the posterior from the standard normal prior.
    pub kl: f64,
    /// Squared distance covariance of latents and protected groups.
    pub v2: f64,
    /// recon + kl + beta * v2.
    pub total: f64,
}

/// Per-epoch training trace entry (row-weighted means over the epoch).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EpochTrace {
    pub epoch: usize,
    pub recon: f64,
    pub kl: f64,
    pub v2: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TeacherModel {
    pub config: FairVaeConfig,
    pub schema: TabularSchema,
    pub encoder: Mlp,
    pub decoder: Mlp,
}

const TEACHER_FORMAT: &str = "teacher-checkpoint-v1";

#[derive(Serialize, Deserialize)]
struct TeacherCheckpoint {
    format: String,
    #[serde(flatten)]
    model: TeacherModel,
}

impl TeacherModel {
    pub fn new(schema: &TabularSchema, config: &FairVaeConfig, rng: &mut ChaCha8Rng) -> TeacherModel {
        let groups = schema.num_groups();
        let rw = Self::reconstruction_width(schema, config);
        let k = config.latent_dim;
        let mut enc_sizes = vec![rw + groups];
        enc_sizes.extend_from_slice(&config.encoder_hidden);
        enc_sizes.push(2 * k);
        let mut dec_sizes = vec![k + groups];
        dec_sizes.extend_from_slice(&config.decoder_hidden);
        dec_sizes.push(rw);
        TeacherModel {
            config: config.clone(),
            schema: schema.clone(),
            encoder: Mlp::new(&enc_sizes, Activation::Relu, Activation::Identity, rng),
            decoder: Mlp::new(&dec_sizes, Activation::Relu, Activation::Sigmoid, rng),
        }
    }

    fn reconstruction_width(schema: &TabularSchema, config: &FairVaeConfig) -> usize {
        schema.encoded_width() + if config.models_target { 2 } else { 0 }
    }

    /// Width of the record vector the autoencoder reconstructs.
    pub fn modeled_width(&self) -> usize {
        Self::reconstruction_width(&self.schema, &self.config)
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    /// Rows as the autoencoder sees them: encoded features, plus the one-hot
    /// target when the teacher models it.
    pub fn modeled_rows(&self, d: &Dataset) -> Array2<f64> {
        if self.config.models_target {
            concatenate(Axis(1), &[d.x.view(), d.target_onehot().view()])
                .expect("row counts align")
        } else {
            d.x.clone()
        }
    }

    /// Posterior parameters for a batch of modeled rows.
    pub fn encode(&self, rows: &Array2<f64>, s_onehot: &Array2<f64>) -> Result<GaussianHead, NnError> {
        let input = concatenate(Axis(1), &[rows.view(), s_onehot.view()])
            .expect("row counts align");
        split_gaussian(&self.encoder.forward(&input))
    }

    /// Decode latents (conditioned on groups) to cell probabilities.
    pub fn decode(&self, z: &Array2<f64>, s_onehot: &Array2<f64>) -> Array2<f64> {
        let input = concatenate(Axis(1), &[z.view(), s_onehot.view()])
            .expect("row counts align");
        self.decoder.forward(&input)
    }

    /// Forward-only loss evaluation for a batch with externally supplied
    /// noise. total = recon + kl + beta * v2, bit-exactly.
    pub fn elbo_terms(
        &self,
        rows: &Array2<f64>,
        s_onehot: &Array2<f64>,
        eps: &Array2<f64>,
    ) -> Result<ElboTerms, FairVaeError> {
        let head = self.encode(rows, s_onehot)?;
        let z = reparam_sample(&head, eps);
        let p = self.decode(&z, s_onehot);
        let recon = bce_sum_mean(&p, rows);
        let kl = gaussian_kl_mean(&head);
        let v2 = distance_covariance_sq(&z, s_onehot);
        let total = recon + kl + self.config.beta * v2;
        if !total.is_finite() {
            return Err(FairVaeError::Nn(NnError::NonFinite("teacher loss".into())));
        }
        Ok(ElboTerms { recon, kl, v2, total })
    }

    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<(), FairVaeError> {
        let ckpt = TeacherCheckpoint {
            format: TEACHER_FORMAT.to_string(),
            model: self.clone(),
        };
        let text = serde_json::to_string(&ckpt)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<TeacherModel, FairVaeError> {
        let text = std::fs::read_to_string(path)?;
        let ckpt: TeacherCheckpoint = serde_json::from_str(&text)?;
        if ckpt.format != TEACHER_FORMAT {
            return Err(FairVaeError::BadCheckpoint(format!(
                "expected format '{TEACHER_FORMAT}', found '{}'",
                ckpt.format
            )));
        }
        let model = ckpt.model;
        model.config.validate()?;
        model
            .schema
            .validate()
            .map_err(|e| FairVaeError::BadCheckpoint(e.to_string()))?;
        let expect_in = model.modeled_width() + model.schema.num_groups();
        if model.encoder.input_width() != expect_in
            || model.encoder.output_width() != 2 * model.config.latent_dim
        {
            return Err(FairVaeError::BadCheckpoint(
                "encoder dimensions do not match schema and config".into(),
            ));
        }
        if model.decoder.input_width() != model.config.latent_dim + model.schema.num_groups()
            || model.decoder.output_width() != model.modeled_width()
        {
            return Err(FairVaeError::BadCheckpoint(
                "decoder dimensions do not match schema and config".into(),
            ));
        }
        Ok(model)
    }
}

/// Train a teacher on an encoded dataset. Returns the model and one trace
/// entry per epoch. Mini-batches are drawn from a seeded shuffle each epoch;
/// a tail batch of fewer than two rows is dropped because the dependence
/// penalty is undefined on it.
pub fn train_teacher(
    train: &Dataset,
    config: &FairVaeConfig,
) -> Result<(TeacherModel, Vec<EpochTrace>), FairVaeError> {
    config.validate()?;
    let n = train.rows();
    if n < 2 {
        return Err(FairVaeError::Config(format!(
            "training set has {n} rows; at least 2 are required"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = TeacherModel::new(&train.schema, config, &mut rng);
    let rows = model.modeled_rows(train);
    let s_onehot = train.protected_onehot();
    let k = config.latent_dim;
    let beta = config.beta;

    let adam = AdamParams {
        lr: config.learning_rate,
        ..AdamParams::default()
    };
    let mut enc_opt = AdamOpt::new(&model.encoder, adam);
    let mut dec_opt = AdamOpt::new(&model.decoder, adam);

    let mut trace = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let order = crate::util::shuffled_indices(n, &mut rng);
        let mut sums = (0.0, 0.0, 0.0, 0.0);
        let mut seen = 0usize;
        for chunk in order.chunks(config.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let bn = chunk.len();
            let mut batch_rows = Array2::zeros((bn, rows.ncols()));
            let mut batch_s = Array2::zeros((bn, s_onehot.ncols()));
            for (bi, &i) in chunk.iter().enumerate() {
                batch_rows.row_mut(bi).assign(&rows.row(i));
                batch_s.row_mut(bi).assign(&s_onehot.row(i));
            }
            let eps = Array2::from_shape_fn((bn, k), |_| StandardNormal.sample(&mut rng));

            let enc_in = concatenate(Axis(1), &[batch_rows.view(), batch_s.view()])
                .expect("row counts align");
            let (enc_out, mut enc_tape) = model.encoder.forward_recorded(&enc_in);
            let head = split_gaussian(&enc_out)?;
            let z = reparam_sample(&head, &eps);
            let dec_in = concatenate(Axis(1), &[z.view(), batch_s.view()])
                .expect("row counts align");
            let (p, mut dec_tape) = model.decoder.forward_recorded(&dec_in);

            let recon = bce_sum_mean(&p, &batch_rows);
            let kl = gaussian_kl_mean(&head);
            let v2 = distance_covariance_sq(&z, &batch_s);
            let total = recon + kl + beta * v2;
            if !total.is_finite() {
                return Err(FairVaeError::Nn(NnError::NonFinite(format!(
                    "teacher loss at epoch {epoch}"
                ))));
            }
            sums.0 += recon * bn as f64;
            sums.1 += kl * bn as f64;
            sums.2 += v2 * bn as f64;
            sums.3 += total * bn as f64;
            seen += bn;

            let d_p = bce_sum_mean_grad(&p, &batch_rows);
            let (dec_grads, d_dec_in) = model.decoder.backward(&mut dec_tape, &d_p)?;
            let mut d_z = d_dec_in.slice(s![.., ..k]).to_owned();
            if beta > 0.0 {
                d_z = d_z + beta * &distance_covariance_sq_grad(&z, &batch_s);
            }
            let (d_mu_r, d_lv_r) = reparam_backward(&head, &eps, &d_z);
            let (d_mu_kl, d_lv_kl) = gaussian_kl_mean_grad(&head);
            let upstream = concatenate(
                Axis(1),
                &[(&d_mu_r + &d_mu_kl).view(), (&d_lv_r + &d_lv_kl).view()],
            )
            .expect("row counts align");
            let (enc_grads, _) = model.encoder.backward(&mut enc_tape, &upstream)?;

            dec_opt.step(&mut model.decoder, &dec_grads)?;
            enc_opt.step(&mut model.encoder, &enc_grads)?;
        }
        if seen == 0 {
            return Err(FairVaeError::Config(
                "every batch was dropped; lower batch_size or add rows".into(),
            ));
        }
        let w = seen as f64;
        trace.push(EpochTrace {
            epoch,
            recon: sums.0 / w,
            kl: sums.1 / w,
            v2: sums.2 / w,
            total: sums.3 / w,
        });
    }
    Ok((model, trace))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::data::{Column, ColumnDomain, ColumnRole};
    use ndarray::array;
    use rand::Rng;

    fn onehot(groups: &[usize], g: usize) -> Array2<f64> {
        let mut m = Array2::zeros((groups.len(), g));
        for (i, &s) in groups.iter().enumerate() {
            m[[i, s]] = 1.0;
        }
        m
    }

    #[test]
    fn v2_zero_when_latents_constant() {
        let z = Array2::from_elem((8, 3), 0.7);
        let s = onehot(&[0, 1, 0, 1, 0, 1, 0, 1], 2);
        assert_eq!(distance_covariance_sq(&z, &s), 0.0);
    }

    #[test]
    fn v2_zero_when_single_group() {
        let mut r = ChaCha8Rng::seed_from_u64(3);
        let z = Array2::from_shape_fn((10, 4), |_| r.random_range(-1.0..1.0));
        let s = onehot(&[0; 10], 2);
        assert_eq!(distance_covariance_sq(&z, &s), 0.0);
    }

    #[test]
    fn v2_exact_on_separated_groups() {
        // Latents equal to the group id: A is the 0/1 cross-group pattern,
        // B is sqrt(2) times it. With balanced groups of two, the centered
        // pattern has entries +-1/2, so V2 = sqrt(2)/4.
        let z = array![[0.0], [0.0], [1.0], [1.0]];
        let s = onehot(&[0, 0, 1, 1], 2);
        let v2 = distance_covariance_sq(&z, &s);
        assert!((v2 - 2.0f64.sqrt() / 4.0).abs() < 1e-12, "v2 = {v2}");
    }

    #[test]
    fn v2_translation_invariant_and_scale_equivariant() {
        let mut r = ChaCha8Rng::seed_from_u64(5);
        let z = Array2::from_shape_fn((12, 3), |_| r.random_range(-1.0..1.0));
        let s = onehot(&[0, 1, 2, 0, 1, 2, 0, 1, 2, 0, 1, 2], 3);
        let base = distance_covariance_sq(&z, &s);
        let shifted = &z + 5.5;
        assert!((distance_covariance_sq(&shifted, &s) - base).abs() < 1e-12);
        let scaled = &z * 3.0;
        assert!((distance_covariance_sq(&scaled, &s) - 3.0 * base).abs() < 1e-10);
    }

    #[test]
    fn v2_matches_fully_centered_reference() {
        // Independent formulation: double-center BOTH distance matrices with
        // explicit loops, then average the elementwise product.
        let mut r = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let n = r.random_range(2..20);
            let k = r.random_range(1..5);
            let z = Array2::from_shape_fn((n, k), |_| r.random_range(-2.0..2.0));
            let groups: Vec<usize> = (0..n).map(|_| r.random_range(0..3)).collect();
            let s = onehot(&groups, 3);

            let a = pairwise_distances(&z);
            let b = group_distances(&s);
            let center = |m: &Array2<f64>| {
                let nn = m.nrows();
                let mut out = Array2::zeros((nn, nn));
                for i in 0..nn {
                    for j in 0..nn {
                        let row: f64 = (0..nn).map(|c| m[[i, c]]).sum::<f64>() / nn as f64;
                        let col: f64 = (0..nn).map(|c| m[[c, j]]).sum::<f64>() / nn as f64;
                        let grand: f64 = m.iter().sum::<f64>() / (nn * nn) as f64;
                        out[[i, j]] = m[[i, j]] - row - col + grand;
                    }
                }
                out
            };
            let reference = (&center(&a) * &center(&b)).sum() / (n * n) as f64;
            let got = distance_covariance_sq(&z, &s);
            assert!(
                (got - reference.max(0.0)).abs() <= 1e-10 * reference.abs().max(1.0),
                "n={n} got={got} reference={reference}"
            );
        }
    }

    #[test]
    fn v2_gradient_matches_finite_differences() {
        let mut r = ChaCha8Rng::seed_from_u64(23);
        let n = 10;
        let z = Array2::from_shape_fn((n, 3), |_| r.random_range(-1.0..1.0));
        let groups: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let s = onehot(&groups, 2);
        let grad = distance_covariance_sq_grad(&z, &s);
        let h = 1e-6;
        for idx in 0..z.len() {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp.as_slice_mut().unwrap()[idx] += h;
            zm.as_slice_mut().unwrap()[idx] -= h;
            let numeric = (distance_covariance_sq(&zp, &s)
                - distance_covariance_sq(&zm, &s))
                / (2.0 * h);
            let analytic = grad.as_slice().unwrap()[idx];
            assert!(
                (analytic - numeric).abs() / analytic.abs().max(1e-6) < 1e-4,
                "grad {idx}: analytic {analytic} vs numeric {numeric}"
            );
        }
    }

    fn tiny_schema() -> TabularSchema {
        TabularSchema {
            columns: vec![
                Column {
                    name: "a".into(),
                    role: ColumnRole::Feature,
                    domain: ColumnDomain::Numeric { min: 0.0, max: 1.0 },
                },
                Column {
                    name: "c".into(),
                    role: ColumnRole::Feature,
                    domain: ColumnDomain::Categorical {
                        categories: vec!["p".into(), "q".into(), "r".into()],
                    },
                },
                Column {
                    name: "s".into(),
                    role: ColumnRole::Protected,
                    domain: ColumnDomain::Categorical {
                        categories: vec!["g0".into(), "g1".into()],
                    },
                },
                Column {
                    name: "y".into(),
                    role: ColumnRole::Target,
                    domain: ColumnDomain::Categorical {
                        categories: vec!["no".into(), "yes".into()],
                    },
                },
            ],
        }
    }

    pub(crate) fn tiny_dataset(n: usize, seed: u64) -> Dataset {
        let schema = tiny_schema();
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Array2::zeros((n, schema.encoded_width()));
        let mut s = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            x[[i, 0]] = r.random_range(0.0..1.0);
            let cat = r.random_range(0..3usize);
            x[[i, 1 + cat]] = 1.0;
            s.push(i % 2);
            y.push((r.random_range(0.0..1.0) < 0.5) as u8);
        }
        Dataset { schema, x, s, y }
    }

    fn tiny_config() -> FairVaeConfig {
        FairVaeConfig {
            latent_dim: 3,
            encoder_hidden: vec![16],
            decoder_hidden: vec![16],
            beta: 1.0,
            epochs: 5,
            batch_size: 16,
            learning_rate: 1e-2,
            seed: 42,
            models_target: true,
        }
    }

    #[test]
    fn elbo_total_is_exact_sum() {
        let d = tiny_dataset(32, 1);
        let cfg = tiny_config();
        let mut r = ChaCha8Rng::seed_from_u64(9);
        let model = TeacherModel::new(&d.schema, &cfg, &mut r);
        let rows = model.modeled_rows(&d);
        let s = d.protected_onehot();
        let eps = Array2::from_shape_fn((d.rows(), cfg.latent_dim), |_| {
            StandardNormal.sample(&mut r)
        });
        let t = model.elbo_terms(&rows, &s, &eps).unwrap();
        assert_eq!(t.total, t.recon + t.kl + cfg.beta * t.v2);
        assert!(t.recon > 0.0 && t.kl >= 0.0 && t.v2 >= 0.0);
    }

    #[test]
    fn training_reduces_loss_and_traces_every_epoch() {
        let d = tiny_dataset(64, 2);
        let mut cfg = tiny_config();
        cfg.epochs = 8;
        let (_, trace) = train_teacher(&d, &cfg).unwrap();
        assert_eq!(trace.len(), cfg.epochs);
        assert_eq!(trace[0].epoch, 0);
        let first = trace.first().unwrap().total;
        let last = trace.last().unwrap().total;
        assert!(last < first, "loss did not improve: {first} -> {last}");
        assert!(trace.iter().all(|t| t.total.is_finite()));
    }

    #[test]
    fn training_is_deterministic() {
        let d = tiny_dataset(48, 3);
        let cfg = tiny_config();
        let (a, ta) = train_teacher(&d, &cfg).unwrap();
        let (b, tb) = train_teacher(&d, &cfg).unwrap();
        assert_eq!(
            a.encoder.layers[0].weights,
            b.encoder.layers[0].weights
        );
        assert_eq!(ta.last().unwrap().total, tb.last().unwrap().total);
    }

    #[test]
    fn checkpoint_round_trip_preserves_behavior() {
        let d = tiny_dataset(32, 4);
        let mut cfg = tiny_config();
        cfg.epochs = 2;
        let (model, _) = train_teacher(&d, &cfg).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        model.save(f.path()).unwrap();
        let back = TeacherModel::load(f.path()).unwrap();
        let rows = model.modeled_rows(&d);
        let s = d.protected_onehot();
        let head_a = model.encode(&rows, &s).unwrap();
        let head_b = back.encode(&rows, &s).unwrap();
        assert_eq!(head_a.mu, head_b.mu);
        assert_eq!(head_a.log_var, head_b.log_var);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = tiny_config();
        cfg.batch_size = 1;
        assert!(matches!(cfg.validate(), Err(FairVaeError::Config(_))));
        let mut cfg = tiny_config();
        cfg.beta = -0.5;
        assert!(cfg.validate().is_err());
        let mut cfg = tiny_config();
        cfg.latent_dim = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn models_target_changes_reconstruction_width() {
        let d = tiny_dataset(16, 5);
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let mut cfg = tiny_config();
        let with = TeacherModel::new(&d.schema, &cfg, &mut r);
        cfg.models_target = false;
        let without = TeacherModel::new(&d.schema, &cfg, &mut r);
        assert_eq!(with.modeled_width(), d.schema.encoded_width() + 2);
        assert_eq!(without.modeled_width(), d.schema.encoded_width());
        assert_eq!(with.modeled_rows(&d).ncols(), with.modeled_width());
    }
}
