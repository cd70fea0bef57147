//! Synthetic record generation: student latents decoded by the frozen
//! teacher decoder, then mapped back to human-readable cells.
//!
//! Each output row is conditioned on one source row (drawn without
//! replacement while the request fits in the source, with replacement
//! beyond that) and one fresh noise vector, both indexed by output row so a
//! given (seed, row) pair is reproducible in isolation. Decoded one-hot
//! blocks are resolved by argmax per block, never by thresholding cells
//! independently, so categorical outputs are always schema-valid.
//!
//! The student encodes with each source row's real group, but the decoder
//! runs with the group channel marginalized (the source's empirical group
//! frequencies replace the one-hot). The decoder's conditioning weights
//! therefore contribute only a constant shift at synthesis time; any group
//! signal in the output must survive the decorrelated latent.

use std::path::Path;

use ndarray::{s, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, Dataset, TabularSchema};
use crate::distill::StudentModel;
use crate::fairvae::TeacherModel;
use crate::nn::NnError;
use crate::util::sha256_hex;

#[derive(Debug, Error)]
pub enum GenerateError {
    #[error("invalid generate config: {0}")]
    Config(String),
    #[error("teacher and student disagree: {0}")]
    SchemaMismatch(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerateConfig {
    /// Number of synthetic rows to produce. Zero is allowed and yields a
    /// header-only export.
    pub rows: usize,
    pub seed: u64,
    /// When true, each output row's protected group is redrawn from the
    /// source's empirical group distribution instead of inherited from its
    /// conditioning row.
    #[serde(default)]
    pub resample_protected: bool,
}

/// Identifies the models and draw behind a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    /// SHA-256 of the serialized teacher parameters.
    pub teacher_id: String,
    /// SHA-256 of the serialized student parameters.
    pub student_id: String,
    pub seed: u64,
    pub source_rows: usize,
    pub generated_rows: usize,
    pub resample_protected: bool,
}

/// Generated records, still paired with their group and label assignments.
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub schema: TabularSchema,
    /// Decoded feature cells per row, in feature-column order.
    pub records: Vec<Vec<String>>,
    pub s: Vec<usize>,
    pub y: Vec<u8>,
    pub provenance: Provenance,
}

impl SyntheticDataset {
    pub fn rows(&self) -> usize {
        self.records.len()
    }

    /// Re-encode the synthetic records into a regular dataset, e.g. to train
    /// an evaluation classifier on them.
    pub fn to_dataset(&self) -> Result<Dataset, DataError> {
        let width = self.schema.encoded_width();
        let mut x = Array2::zeros((self.records.len(), width));
        for (i, cells) in self.records.iter().enumerate() {
            let enc = self.schema.encode_feature_row(cells)?;
            x.row_mut(i)
                .assign(&ndarray::ArrayView1::from(enc.as_slice()));
        }
        Ok(Dataset {
            schema: self.schema.clone(),
            x,
            s: self.s.clone(),
            y: self.y.clone(),
        })
    }
}

/// Content id for a model: hash of its serialized parameters.
fn model_id<T: Serialize>(model: &T) -> Result<String, serde_json::Error> {
    Ok(sha256_hex(serde_json::to_string(model)?.as_bytes()))
}

/// Generate synthetic records by sampling student latents conditioned on
/// source rows and decoding them with the frozen teacher decoder.
pub fn generate_synthetic(
    teacher: &TeacherModel,
    student: &StudentModel,
    source: &Dataset,
    config: &GenerateConfig,
) -> Result<SyntheticDataset, GenerateError> {
    if student.schema != teacher.schema {
        return Err(GenerateError::SchemaMismatch(
            "student and teacher were built for different schemas".into(),
        ));
    }
    if student.latent_dim != teacher.latent_dim() {
        return Err(GenerateError::SchemaMismatch(format!(
            "latent width differs: student {}, teacher {}",
            student.latent_dim,
            teacher.latent_dim()
        )));
    }
    if student.models_target != teacher.config.models_target {
        return Err(GenerateError::SchemaMismatch(
            "student and teacher disagree on whether the target is modeled".into(),
        ));
    }
    if source.schema != teacher.schema {
        return Err(GenerateError::SchemaMismatch(
            "source dataset schema does not match the models".into(),
        ));
    }
    let n_src = source.rows();
    let n_out = config.rows;
    if n_out > 0 && n_src == 0 {
        return Err(GenerateError::Config(
            "cannot generate from an empty source dataset".into(),
        ));
    }

    let provenance = Provenance {
        teacher_id: model_id(teacher)?,
        student_id: model_id(student)?,
        seed: config.seed,
        source_rows: n_src,
        generated_rows: n_out,
        resample_protected: config.resample_protected,
    };
    if n_out == 0 {
        return Ok(SyntheticDataset {
            schema: teacher.schema.clone(),
            records: Vec::new(),
            s: Vec::new(),
            y: Vec::new(),
            provenance,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    // Conditioning rows: every source row at most once while the request
    // fits, uniform with replacement beyond that.
    let pick: Vec<usize> = if n_out <= n_src {
        crate::util::shuffled_indices(n_src, &mut rng)[..n_out].to_vec()
    } else {
        (0..n_out).map(|_| rng.random_range(0..n_src)).collect()
    };
    let groups: Vec<usize> = if config.resample_protected {
        (0..n_out)
            .map(|_| source.s[rng.random_range(0..n_src)])
            .collect()
    } else {
        pick.iter().map(|&i| source.s[i]).collect()
    };

    let cond = source.select_rows(&pick);
    let rows_in = student.modeled_rows(&cond);
    let num_groups = teacher.schema.num_groups();
    let mut s_onehot = Array2::zeros((n_out, num_groups));
    for (i, &g) in groups.iter().enumerate() {
        s_onehot[[i, g]] = 1.0;
    }
    let k = teacher.latent_dim();
    let eps = Array2::from_shape_fn((n_out, k), |_| StandardNormal.sample(&mut rng));

    let z = student.sample(&rows_in, &s_onehot, &eps)?;
    // The decoder learned its reconstruction conditioned on the real group,
    // but synthesis marginalizes that channel: every latent is decoded
    // against the source's group frequencies instead of a per-row one-hot.
    // Conditioning each decode on the row's own group would let the decoder
    // re-inject the group-target coupling the latent penalty removed.
    let mut freq = vec![0.0f64; num_groups];
    for &g in &source.s {
        freq[g] += 1.0 / n_src as f64;
    }
    let s_marginal =
        Array2::from_shape_fn((n_out, num_groups), |(_, g)| freq[g]);
    let p = teacher.decode(&z, &s_marginal);

    let feature_width = teacher.schema.encoded_width();
    let features = p.slice(s![.., ..feature_width]).to_owned();
    let records = crate::data::decode_rows(&features, &teacher.schema)?;
    let y: Vec<u8> = if teacher.config.models_target {
        (0..n_out)
            .map(|i| (p[[i, feature_width + 1]] > p[[i, feature_width]]) as u8)
            .collect()
    } else {
        pick.iter().map(|&i| source.y[i]).collect()
    };

    Ok(SyntheticDataset {
        schema: teacher.schema.clone(),
        records,
        s: groups,
        y,
        provenance,
    })
}

/// Write a synthetic dataset as a CSV with the schema's original column
/// order, plus a provenance JSON sidecar.
pub fn export_synthetic<P: AsRef<Path>, Q: AsRef<Path>>(
    synth: &SyntheticDataset,
    csv_path: P,
    provenance_path: Q,
) -> Result<(), GenerateError> {
    let schema = &synth.schema;
    let prot_idx = schema.protected_index();
    let tgt_idx = schema.target_index();
    let prot_cats = match &schema.protected_column().domain {
        crate::data::ColumnDomain::Categorical { categories } => categories,
        _ => unreachable!("validated protected column is categorical"),
    };
    let tgt_cats = match &schema.target_column().domain {
        crate::data::ColumnDomain::Categorical { categories } => categories,
        _ => unreachable!("validated target column is categorical"),
    };

    let mut w = csv::Writer::from_path(csv_path.as_ref())?;
    w.write_record(schema.columns.iter().map(|c| c.name.as_str()))?;
    for (i, cells) in synth.records.iter().enumerate() {
        let mut feature_iter = cells.iter();
        let row: Vec<&str> = schema
            .columns
            .iter()
            .enumerate()
            .map(|(j, _)| {
                if j == prot_idx {
                    prot_cats[synth.s[i]].as_str()
                } else if j == tgt_idx {
                    tgt_cats[synth.y[i] as usize].as_str()
                } else {
                    feature_iter.next().expect("cells match feature count")
                }
            })
            .collect();
        w.write_record(&row)?;
    }
    w.flush()?;

    std::fs::write(
        provenance_path,
        serde_json::to_string_pretty(&synth.provenance)?,
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::load_csv;
    use crate::distill::{distill_student, DistillConfig, QualityKind};
    use crate::fairvae::{tests::tiny_dataset, train_teacher, FairVaeConfig};

    fn trained_pair(models_target: bool) -> (TeacherModel, StudentModel, Dataset) {
        let d = tiny_dataset(64, 17);
        let tcfg = FairVaeConfig {
            latent_dim: 3,
            encoder_hidden: vec![32],
            decoder_hidden: vec![16],
            beta: 1.0,
            epochs: 3,
            batch_size: 16,
            learning_rate: 1e-2,
            seed: 2,
            models_target,
        };
        let (teacher, _) = train_teacher(&d, &tcfg).unwrap();
        let scfg = DistillConfig {
            student_hidden: vec![10],
            quality: QualityKind::L1,
            lambda: 0.1,
            huber_delta: 1.0,
            epochs: 2,
            batch_size: 16,
            learning_rate: 1e-2,
            seed: 3,
        };
        let (student, _) = distill_student(&teacher, &d, &scfg).unwrap();
        (teacher, student, d)
    }

    #[test]
    fn generates_requested_rows_deterministically() {
        let (teacher, student, d) = trained_pair(true);
        let cfg = GenerateConfig {
            rows: 40,
            seed: 9,
            resample_protected: false,
        };
        let a = generate_synthetic(&teacher, &student, &d, &cfg).unwrap();
        let b = generate_synthetic(&teacher, &student, &d, &cfg).unwrap();
        assert_eq!(a.rows(), 40);
        assert_eq!(a.records, b.records);
        assert_eq!(a.s, b.s);
        assert_eq!(a.y, b.y);

        let other = generate_synthetic(
            &teacher,
            &student,
            &d,
            &GenerateConfig {
                rows: 40,
                seed: 10,
                resample_protected: false,
            },
        )
        .unwrap();
        assert_ne!(a.records, other.records);
    }

    #[test]
    fn exact_size_draw_uses_each_source_row_once() {
        let (teacher, student, d) = trained_pair(true);
        let cfg = GenerateConfig {
            rows: d.rows(),
            seed: 4,
            resample_protected: false,
        };
        let synth = generate_synthetic(&teacher, &student, &d, &cfg).unwrap();
        let mut got = synth.s.clone();
        let mut want = d.s.clone();
        got.sort_unstable();
        want.sort_unstable();
        assert_eq!(got, want, "group multiset should match the source exactly");
    }

    #[test]
    fn oversized_draw_samples_with_replacement() {
        let (teacher, student, d) = trained_pair(true);
        let cfg = GenerateConfig {
            rows: d.rows() * 3,
            seed: 4,
            resample_protected: false,
        };
        let synth = generate_synthetic(&teacher, &student, &d, &cfg).unwrap();
        assert_eq!(synth.rows(), d.rows() * 3);
    }

    #[test]
    fn copied_labels_preserve_source_multiset() {
        let (teacher, student, d) = trained_pair(false);
        let cfg = GenerateConfig {
            rows: d.rows(),
            seed: 6,
            resample_protected: false,
        };
        let synth = generate_synthetic(&teacher, &student, &d, &cfg).unwrap();
        let mut got = synth.y.clone();
        let mut want = d.y.clone();
        got.sort_unstable();
        want.sort_unstable();
        assert_eq!(got, want);
    }

    #[test]
    fn export_round_trips_through_loader() {
        let (teacher, student, d) = trained_pair(true);
        let cfg = GenerateConfig {
            rows: 30,
            seed: 8,
            resample_protected: false,
        };
        let synth = generate_synthetic(&teacher, &student, &d, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let csv_path = dir.path().join("synthetic.csv");
        let prov_path = dir.path().join("provenance.json");
        export_synthetic(&synth, &csv_path, &prov_path).unwrap();

        let reloaded = load_csv(&csv_path, &synth.schema.to_spec()).unwrap();
        let direct = synth.to_dataset().unwrap();
        assert_eq!(reloaded.x, direct.x);
        assert_eq!(reloaded.s, direct.s);
        assert_eq!(reloaded.y, direct.y);

        let prov: Provenance =
            serde_json::from_str(&std::fs::read_to_string(&prov_path).unwrap()).unwrap();
        assert_eq!(prov, synth.provenance);
        assert_eq!(prov.generated_rows, 30);
    }

    #[test]
    fn zero_rows_exports_header_only() {
        let (teacher, student, d) = trained_pair(true);
        let cfg = GenerateConfig {
            rows: 0,
            seed: 1,
            resample_protected: false,
        };
        let synth = generate_synthetic(&teacher, &student, &d, &cfg).unwrap();
        assert_eq!(synth.rows(), 0);
        let dir = tempfile::tempdir().unwrap();
        let csv_path = dir.path().join("empty.csv");
        export_synthetic(&synth, &csv_path, dir.path().join("p.json")).unwrap();
        let text = std::fs::read_to_string(&csv_path).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert!(text.starts_with("a,c,s,y"));
    }

    #[test]
    fn resampled_groups_follow_source_distribution() {
        let (teacher, student, d) = trained_pair(true);
        let cfg = GenerateConfig {
            rows: 2000,
            seed: 12,
            resample_protected: true,
        };
        let synth = generate_synthetic(&teacher, &student, &d, &cfg).unwrap();
        let frac = synth.s.iter().filter(|&&s| s == 0).count() as f64 / 2000.0;
        // Source groups alternate, so about half of the draws land in each.
        assert!((frac - 0.5).abs() < 0.05, "group share {frac}");
    }

    #[test]
    fn mismatched_models_are_rejected() {
        let (teacher, _, d) = trained_pair(true);
        let (_, student_other, _) = trained_pair(false);
        let cfg = GenerateConfig {
            rows: 5,
            seed: 1,
            resample_protected: false,
        };
        assert!(matches!(
            generate_synthetic(&teacher, &student_other, &d, &cfg),
            Err(GenerateError::SchemaMismatch(_))
        ));
    }
}
