//! Student distillation: a smaller encoder trained to reproduce the frozen
//! teacher's latent behavior.
//!
//! Teacher and student see the same record batch and the same per-record
//! noise draw, so their reparameterized samples are directly comparable. The
//! objective is a per-coordinate quality loss between the two latent batches
//! (summed over coordinates, averaged over the batch) plus `lambda` times a
//! KL term that keeps the student posterior close to the standard-normal
//! prior it will be asked to behave like at generation time. Only the
//! student's parameters move.

use std::path::Path;

use ndarray::{concatenate, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Dataset, TabularSchema};
use crate::fairvae::TeacherModel;
use crate::nn::{
    gaussian_kl_mean, gaussian_kl_mean_grad, reparam_backward, reparam_sample, split_gaussian,
    Activation, AdamOpt, AdamParams, GaussianHead, Mlp, NnError,
};

#[derive(Debug, Error)]
pub enum DistillError {
    #[error("invalid distill config: {0}")]
    Config(String),
    #[error("student must be smaller than the teacher encoder: student has {student} parameters, teacher encoder {teacher}")]
    NotSmaller { student: usize, teacher: usize },
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Per-coordinate latent quality loss used for distillation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QualityKind {
    L1,
    Mse,
    Huber,
    /// Absolute difference of per-coordinate batch means. Cheap but blind to
    /// per-record structure; kept for comparison sweeps.
    MeanDifference,
}

impl QualityKind {
    pub fn name(&self) -> &'static str {
        match self {
            QualityKind::L1 => "l1",
            QualityKind::Mse => "mse",
            QualityKind::Huber => "huber",
            QualityKind::MeanDifference => "mean_difference",
        }
    }
}

/// Quality loss between a frozen teacher latent batch and the student batch:
/// per-coordinate losses summed over latent dimensions, averaged over rows.
pub fn quality_loss(
    kind: QualityKind,
    z_teacher: &Array2<f64>,
    z_student: &Array2<f64>,
    huber_delta: f64,
) -> f64 {
    assert_eq!(z_teacher.dim(), z_student.dim(), "latent batches must align");
    let n = z_teacher.nrows() as f64;
    match kind {
        QualityKind::L1 => {
            z_teacher
                .iter()
                .zip(z_student.iter())
                .map(|(t, s)| (t - s).abs())
                .sum::<f64>()
                / n
        }
        QualityKind::Mse => {
            z_teacher
                .iter()
                .zip(z_student.iter())
                .map(|(t, s)| (t - s) * (t - s))
                .sum::<f64>()
                / n
        }
        QualityKind::Huber => {
            let d = huber_delta;
            z_teacher
                .iter()
                .zip(z_student.iter())
                .map(|(t, s)| {
                    let r = (t - s).abs();
                    if r <= d {
                        0.5 * r * r
                    } else {
                        d * (r - 0.5 * d)
                    }
                })
                .sum::<f64>()
                / n
        }
        QualityKind::MeanDifference => {
            let mt = z_teacher.mean_axis(Axis(0)).expect("non-empty");
            let ms = z_student.mean_axis(Axis(0)).expect("non-empty");
            mt.iter().zip(ms.iter()).map(|(a, b)| (a - b).abs()).sum()
        }
    }
}

/// Gradient of [`quality_loss`] with respect to the student latents.
pub fn quality_loss_grad(
    kind: QualityKind,
    z_teacher: &Array2<f64>,
    z_student: &Array2<f64>,
    huber_delta: f64,
) -> Array2<f64> {
    let n = z_teacher.nrows() as f64;
    let mut g = Array2::zeros(z_student.dim());
    match kind {
        QualityKind::L1 => {
            for ((gv, t), s) in g.iter_mut().zip(z_teacher.iter()).zip(z_student.iter()) {
                *gv = -(t - s).signum_or_zero() / n;
            }
        }
        QualityKind::Mse => {
            for ((gv, t), s) in g.iter_mut().zip(z_teacher.iter()).zip(z_student.iter()) {
                *gv = -2.0 * (t - s) / n;
            }
        }
        QualityKind::Huber => {
            let d = huber_delta;
            for ((gv, t), s) in g.iter_mut().zip(z_teacher.iter()).zip(z_student.iter()) {
                let r = t - s;
                *gv = if r.abs() <= d {
                    -r / n
                } else {
                    -d * r.signum_or_zero() / n
                };
            }
        }
        QualityKind::MeanDifference => {
            let mt = z_teacher.mean_axis(Axis(0)).expect("non-empty");
            let ms = z_student.mean_axis(Axis(0)).expect("non-empty");
            for (mut col, (a, b)) in g.columns_mut().into_iter().zip(mt.iter().zip(ms.iter())) {
                let d = -(a - b).signum_or_zero() / n;
                col.fill(d);
            }
        }
    }
    g
}

trait SignumOrZero {
    fn signum_or_zero(self) -> f64;
}

impl SignumOrZero for f64 {
    /// signum with sign(0) = 0, the subgradient choice at the kink.
    fn signum_or_zero(self) -> f64 {
        if self == 0.0 {
            0.0
        } else {
            self.signum()
        }
    }
}

/// Prior-matching regularizer for the student posterior: KL divergence from
/// the batch posterior to the standard normal, summed over coordinates and
/// averaged over rows.
pub fn utility_kl(head: &GaussianHead) -> f64 {
    gaussian_kl_mean(head)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillConfig {
    pub student_hidden: Vec<usize>,
    pub quality: QualityKind,
    /// Weight of the prior-matching KL term.
    pub lambda: f64,
    pub huber_delta: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            student_hidden: vec![32],
            quality: QualityKind::L1,
            lambda: 0.1,
            huber_delta: 1.0,
            epochs: 30,
            batch_size: 64,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<(), DistillError> {
        if self.batch_size == 0 {
            return Err(DistillError::Config("batch_size must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(DistillError::Config("epochs must be at least 1".into()));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(DistillError::Config("lambda must be finite and >= 0".into()));
        }
        if !(self.huber_delta > 0.0 && self.huber_delta.is_finite()) {
            return Err(DistillError::Config("huber_delta must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(DistillError::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// Per-step training trace entry.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct StepTrace {
    pub epoch: usize,
    pub step: usize,
    pub quality: f64,
    pub kl: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudentModel {
    pub config: DistillConfig,
    pub schema: TabularSchema,
    pub latent_dim: usize,
    /// Copied from the teacher so the student consumes rows of the same
    /// shape the teacher was trained on.
    pub models_target: bool,
    pub encoder: Mlp,
}

const STUDENT_FORMAT: &str = "student-checkpoint-v1";

#[derive(Serialize, Deserialize)]
struct StudentCheckpoint {
    format: String,
    #[serde(flatten)]
    model: StudentModel,
}

impl StudentModel {
    fn new(teacher: &TeacherModel, config: &DistillConfig, rng: &mut ChaCha8Rng) -> StudentModel {
        let groups = teacher.schema.num_groups();
        let k = teacher.latent_dim();
        let mut sizes = vec![teacher.modeled_width() + groups];
        sizes.extend_from_slice(&config.student_hidden);
        sizes.push(2 * k);
        StudentModel {
            config: config.clone(),
            schema: teacher.schema.clone(),
            latent_dim: k,
            models_target: teacher.config.models_target,
            encoder: Mlp::new(&sizes, Activation::Relu, Activation::Identity, rng),
        }
    }

    pub fn param_count(&self) -> usize {
        self.encoder.param_count()
    }

    /// Rows as the student consumes them; matches the teacher's layout.
    pub fn modeled_rows(&self, d: &Dataset) -> Array2<f64> {
        if self.models_target {
            concatenate(Axis(1), &[d.x.view(), d.target_onehot().view()])
                .expect("row counts align")
        } else {
            d.x.clone()
        }
    }

    pub fn encode(&self, rows: &Array2<f64>, s_onehot: &Array2<f64>) -> Result<GaussianHead, NnError> {
        let input = concatenate(Axis(1), &[rows.view(), s_onehot.view()])
            .expect("row counts align");
        split_gaussian(&self.encoder.forward(&input))
    }

    /// Reparameterized latent draw for a batch with supplied noise.
    pub fn sample(
        &self,
        rows: &Array2<f64>,
        s_onehot: &Array2<f64>,
        eps: &Array2<f64>,
    ) -> Result<Array2<f64>, NnError> {
        Ok(reparam_sample(&self.encode(rows, s_onehot)?, eps))
    }

    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<(), DistillError> {
        let ckpt = StudentCheckpoint {
            format: STUDENT_FORMAT.to_string(),
            model: self.clone(),
        };
        std::fs::write(path, serde_json::to_string(&ckpt)?)?;
        Ok(())
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<StudentModel, DistillError> {
        let text = std::fs::read_to_string(path)?;
        let ckpt: StudentCheckpoint = serde_json::from_str(&text)?;
        if ckpt.format != STUDENT_FORMAT {
            return Err(DistillError::BadCheckpoint(format!(
                "expected format '{STUDENT_FORMAT}', found '{}'",
                ckpt.format
            )));
        }
        let model = ckpt.model;
        model.config.validate()?;
        model
            .schema
            .validate()
            .map_err(|e| DistillError::BadCheckpoint(e.to_string()))?;
        if model.encoder.output_width() != 2 * model.latent_dim {
            return Err(DistillError::BadCheckpoint(
                "student output width does not match latent_dim".into(),
            ));
        }
        Ok(model)
    }
}

/// Distill a student encoder against a frozen teacher. Returns the student
/// and one trace entry per optimization step; `total` in the trace is
/// exactly `quality + lambda * kl` as optimized.
pub fn distill_student(
    teacher: &TeacherModel,
    train: &Dataset,
    config: &DistillConfig,
) -> Result<(StudentModel, Vec<StepTrace>), DistillError> {
    config.validate()?;
    let n = train.rows();
    if n == 0 {
        return Err(DistillError::Config("training set is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut student = StudentModel::new(teacher, config, &mut rng);
    if student.param_count() >= teacher.encoder.param_count() {
        return Err(DistillError::NotSmaller {
            student: student.param_count(),
            teacher: teacher.encoder.param_count(),
        });
    }

    let rows = teacher.modeled_rows(train);
    let s_onehot = train.protected_onehot();
    let k = teacher.latent_dim();
    let lambda = config.lambda;
    let delta = config.huber_delta;

    let adam = AdamParams {
        lr: config.learning_rate,
        ..AdamParams::default()
    };
    let mut opt = AdamOpt::new(&student.encoder, adam);

    let mut trace = Vec::new();
    for epoch in 0..config.epochs {
        let order = crate::util::shuffled_indices(n, &mut rng);
        for (step, chunk) in order.chunks(config.batch_size).enumerate() {
            let bn = chunk.len();
            let mut batch_rows = Array2::zeros((bn, rows.ncols()));
            let mut batch_s = Array2::zeros((bn, s_onehot.ncols()));
            for (bi, &i) in chunk.iter().enumerate() {
                batch_rows.row_mut(bi).assign(&rows.row(i));
                batch_s.row_mut(bi).assign(&s_onehot.row(i));
            }
            // One noise draw per record, shared by teacher and student so
            // the two latent samples are comparable pointwise.
            let eps = Array2::from_shape_fn((bn, k), |_| StandardNormal.sample(&mut rng));

            let teacher_head = teacher.encode(&batch_rows, &batch_s)?;
            let z_teacher = reparam_sample(&teacher_head, &eps);

            let enc_in = concatenate(Axis(1), &[batch_rows.view(), batch_s.view()])
                .expect("row counts align");
            let (enc_out, mut tape) = student.encoder.forward_recorded(&enc_in);
            let head = split_gaussian(&enc_out)?;
            let z_student = reparam_sample(&head, &eps);

            let quality = quality_loss(config.quality, &z_teacher, &z_student, delta);
            let kl = utility_kl(&head);
            let total = quality + lambda * kl;
            if !total.is_finite() {
                return Err(DistillError::Nn(NnError::NonFinite(format!(
                    "student loss at epoch {epoch} step {step}"
                ))));
            }
            trace.push(StepTrace {
                epoch,
                step,
                quality,
                kl,
                total,
            });

            let d_z = quality_loss_grad(config.quality, &z_teacher, &z_student, delta);
            let (d_mu_q, d_lv_q) = reparam_backward(&head, &eps, &d_z);
            let (d_mu_kl, d_lv_kl) = gaussian_kl_mean_grad(&head);
            let upstream = concatenate(
                Axis(1),
                &[
                    (&d_mu_q + &(lambda * &d_mu_kl)).view(),
                    (&d_lv_q + &(lambda * &d_lv_kl)).view(),
                ],
            )
            .expect("row counts align");
            let (grads, _) = student.encoder.backward(&mut tape, &upstream)?;
            opt.step(&mut student.encoder, &grads)?;
        }
    }
    Ok((student, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fairvae::{train_teacher, FairVaeConfig};
    use ndarray::array;
    use rand::Rng;

    fn latent_pair() -> (Array2<f64>, Array2<f64>) {
        let z_t = array![[1.0, 2.0], [3.0, 4.0]];
        let z_s = array![[1.5, 1.5], [2.0, 5.0]];
        (z_t, z_s)
    }

    #[test]
    fn quality_losses_match_hand_values() {
        let (z_t, z_s) = latent_pair();
        assert!((quality_loss(QualityKind::L1, &z_t, &z_s, 1.0) - 1.5).abs() < 1e-12);
        assert!((quality_loss(QualityKind::Mse, &z_t, &z_s, 1.0) - 1.25).abs() < 1e-12);
        assert!((quality_loss(QualityKind::Huber, &z_t, &z_s, 1.0) - 0.625).abs() < 1e-12);
        assert!(
            (quality_loss(QualityKind::MeanDifference, &z_t, &z_s, 1.0) - 0.5).abs() < 1e-12
        );
    }

    #[test]
    fn quality_loss_zero_at_match() {
        let (z_t, _) = latent_pair();
        for kind in [
            QualityKind::L1,
            QualityKind::Mse,
            QualityKind::Huber,
            QualityKind::MeanDifference,
        ] {
            assert_eq!(quality_loss(kind, &z_t, &z_t, 1.0), 0.0);
            let g = quality_loss_grad(kind, &z_t, &z_t, 1.0);
            assert!(g.iter().all(|v| *v == 0.0), "{kind:?} grad at optimum");
        }
    }

    #[test]
    fn quality_gradients_match_finite_differences() {
        let mut r = ChaCha8Rng::seed_from_u64(31);
        let z_t = Array2::from_shape_fn((6, 4), |_| r.random_range(-2.0..2.0));
        let z_s = Array2::from_shape_fn((6, 4), |_| r.random_range(-2.0..2.0));
        let h = 1e-6;
        // 0.6 puts some residuals on each side of the huber knee.
        for kind in [
            QualityKind::L1,
            QualityKind::Mse,
            QualityKind::Huber,
            QualityKind::MeanDifference,
        ] {
            let g = quality_loss_grad(kind, &z_t, &z_s, 0.6);
            for idx in 0..z_s.len() {
                let mut zp = z_s.clone();
                let mut zm = z_s.clone();
                zp.as_slice_mut().unwrap()[idx] += h;
                zm.as_slice_mut().unwrap()[idx] -= h;
                let numeric = (quality_loss(kind, &z_t, &zp, 0.6)
                    - quality_loss(kind, &z_t, &zm, 0.6))
                    / (2.0 * h);
                let analytic = g.as_slice().unwrap()[idx];
                assert!(
                    (analytic - numeric).abs() / analytic.abs().max(1e-6) < 1e-4,
                    "{kind:?} grad {idx}: analytic {analytic} vs numeric {numeric}"
                );
            }
        }
    }

    fn teacher_fixture() -> (TeacherModel, Dataset) {
        let d = crate::fairvae::tests::tiny_dataset(64, 7);
        let cfg = FairVaeConfig {
            latent_dim: 3,
            encoder_hidden: vec![32, 32],
            decoder_hidden: vec![16],
            beta: 1.0,
            epochs: 3,
            batch_size: 16,
            learning_rate: 1e-2,
            seed: 42,
            models_target: true,
        };
        let (teacher, _) = train_teacher(&d, &cfg).unwrap();
        (teacher, d)
    }

    fn small_config() -> DistillConfig {
        DistillConfig {
            student_hidden: vec![12],
            quality: QualityKind::L1,
            lambda: 0.1,
            huber_delta: 1.0,
            epochs: 4,
            batch_size: 16,
            learning_rate: 1e-2,
            seed: 5,
        }
    }

    #[test]
    fn distillation_runs_and_improves_quality() {
        let (teacher, d) = teacher_fixture();
        let (student, trace) = distill_student(&teacher, &d, &small_config()).unwrap();
        assert!(student.param_count() < teacher.encoder.param_count());
        let steps_per_epoch = d.rows().div_ceil(16);
        assert_eq!(trace.len(), 4 * steps_per_epoch);
        let first: f64 = trace[..steps_per_epoch].iter().map(|t| t.quality).sum();
        let last: f64 = trace[trace.len() - steps_per_epoch..]
            .iter()
            .map(|t| t.quality)
            .sum();
        assert!(last < first, "quality did not improve: {first} -> {last}");
    }

    #[test]
    fn lambda_zero_total_equals_quality_exactly() {
        let (teacher, d) = teacher_fixture();
        let mut cfg = small_config();
        cfg.lambda = 0.0;
        let (_, trace) = distill_student(&teacher, &d, &cfg).unwrap();
        for t in &trace {
            assert!(
                t.total == t.quality,
                "step {}.{}: total {} != quality {}",
                t.epoch,
                t.step,
                t.total,
                t.quality
            );
        }
    }

    #[test]
    fn oversized_student_is_rejected() {
        let (teacher, d) = teacher_fixture();
        let mut cfg = small_config();
        cfg.student_hidden = vec![256, 256];
        assert!(matches!(
            distill_student(&teacher, &d, &cfg),
            Err(DistillError::NotSmaller { .. })
        ));
    }

    #[test]
    fn distillation_is_deterministic() {
        let (teacher, d) = teacher_fixture();
        let cfg = small_config();
        let (a, ta) = distill_student(&teacher, &d, &cfg).unwrap();
        let (b, tb) = distill_student(&teacher, &d, &cfg).unwrap();
        assert_eq!(a.encoder.layers[0].weights, b.encoder.layers[0].weights);
        assert_eq!(ta.last().unwrap().total, tb.last().unwrap().total);
    }

    #[test]
    fn checkpoint_round_trip_preserves_behavior() {
        let (teacher, d) = teacher_fixture();
        let (student, _) = distill_student(&teacher, &d, &small_config()).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        student.save(f.path()).unwrap();
        let back = StudentModel::load(f.path()).unwrap();
        let rows = student.modeled_rows(&d);
        let s = d.protected_onehot();
        let ha = student.encode(&rows, &s).unwrap();
        let hb = back.encode(&rows, &s).unwrap();
        assert_eq!(ha.mu, hb.mu);
        assert_eq!(ha.log_var, hb.log_var);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = small_config();
        cfg.lambda = f64::NAN;
        assert!(cfg.validate().is_err());
        let mut cfg = small_config();
        cfg.batch_size = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = small_config();
        cfg.huber_delta = 0.0;
        assert!(cfg.validate().is_err());
    }
}
