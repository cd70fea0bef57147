//! Evaluation of a trained pipeline: fairness ratios, downstream utility,
//! sample quality, explainability summaries, and the repetition driver that
//! aggregates them into a report.
//!
//! Classifiers here are diagnostic instruments, not products: a forest
//! trained on synthetic rows is scored against the held-out real test split,
//! and a second forest that *does* see the protected attribute measures how
//! much of the label signal rides on it before and after synthesis.

pub mod fairness;
pub mod forest;
pub mod pca;
pub mod quality;

use ndarray::{concatenate, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use fairness::{demographic_parity_ratio, equalized_odds_ratio, utility_scores, UtilityScores};
pub use forest::{fit_forest, ForestConfig, TreeEnsemble};
pub use pca::{pca_project, PcaProjection};
pub use quality::density_coverage;

use crate::data::{DataError, Dataset, SplitPair};
use crate::distill::StudentModel;
use crate::fairvae::TeacherModel;
use crate::generate::{generate_synthetic, GenerateConfig, GenerateError};
use crate::util::derive_seed;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid evaluation config: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("{what}: got {got} rows, need at least {need}")]
    TooFewRows {
        got: usize,
        need: usize,
        what: String,
    },
    #[error("{what} is defined over at least two populated groups; found {populated}")]
    InsufficientGroups { what: String, populated: usize },
    #[error("requested {requested} principal components but the data has rank {rank}")]
    RankDeficient { requested: usize, rank: usize },
    #[error(transparent)]
    Generate(#[from] GenerateError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Mean and sample standard deviation over evaluation repetitions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub std: f64,
}

pub(crate) fn summarize(values: &[f64]) -> MetricSummary {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    MetricSummary { mean, std }
}

/// Per-column importance of a diagnostic forest that sees the protected
/// attribute alongside the features. One-hot blocks are aggregated back to
/// their source column.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImportanceReport {
    /// Feature column names in schema order, then the protected column.
    pub columns: Vec<String>,
    /// Share of total Gini decrease per column; sums to one when any split
    /// exists.
    pub impurity: Vec<f64>,
    /// Mean accuracy drop on the reference set when the column's cells are
    /// shuffled across rows.
    pub permutation: Vec<f64>,
    pub protected_impurity: f64,
    pub protected_permutation: f64,
    /// True when the training labels were single-class.
    pub degenerate: bool,
}

/// Column blocks of the augmented matrix `[x | protected one-hot]`.
fn augmented_blocks(d: &Dataset) -> (Vec<(String, usize, usize)>, Array2<f64>) {
    let schema = &d.schema;
    let mut blocks: Vec<(String, usize, usize)> = schema
        .feature_layout()
        .into_iter()
        .map(|b| {
            (
                schema.columns[b.column].name.clone(),
                b.offset,
                b.width,
            )
        })
        .collect();
    let ew = schema.encoded_width();
    blocks.push((
        schema.protected_column().name.clone(),
        ew,
        schema.num_groups(),
    ));
    let aug = concatenate(Axis(1), &[d.x.view(), d.protected_onehot().view()])
        .expect("row counts align");
    (blocks, aug)
}

/// Measure how much each column (features and the protected attribute)
/// contributes to predicting the target, using impurity shares from a forest
/// fit on `train` and permutation accuracy drops on `test`.
pub fn feature_importance(
    train: &Dataset,
    test: &Dataset,
    forest_cfg: &ForestConfig,
    shuffles: usize,
    shuffle_seed: u64,
) -> Result<ImportanceReport, EvalError> {
    if shuffles == 0 {
        return Err(EvalError::Config("permutation needs at least one shuffle".into()));
    }
    let (blocks, train_aug) = augmented_blocks(train);
    let (_, test_aug) = augmented_blocks(test);
    let model = fit_forest(&train_aug, &train.y, forest_cfg)?;

    let mut impurity = Vec::with_capacity(blocks.len());
    for &(_, offset, width) in &blocks {
        impurity.push(
            model.impurity_importance[offset..offset + width]
                .iter()
                .sum::<f64>(),
        );
    }

    let base_acc = utility_scores(&model.predict(&test_aug)?, &test.y)?.accuracy;
    let n_test = test.rows();
    let mut rng = ChaCha8Rng::seed_from_u64(shuffle_seed);
    let mut permutation = Vec::with_capacity(blocks.len());
    for &(_, offset, width) in &blocks {
        let mut drop_sum = 0.0;
        for _ in 0..shuffles {
            let perm = crate::util::shuffled_indices(n_test, &mut rng);
            let mut shuffled = test_aug.clone();
            for (row, &src) in perm.iter().enumerate() {
                for c in offset..offset + width {
                    shuffled[[row, c]] = test_aug[[src, c]];
                }
            }
            let acc = utility_scores(&model.predict(&shuffled)?, &test.y)?.accuracy;
            drop_sum += base_acc - acc;
        }
        permutation.push(drop_sum / shuffles as f64);
    }

    let protected = blocks.len() - 1;
    Ok(ImportanceReport {
        columns: blocks.into_iter().map(|(n, _, _)| n).collect(),
        protected_impurity: impurity[protected],
        protected_permutation: permutation[protected],
        impurity,
        permutation,
        degenerate: model.degenerate,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Number of generate-and-score repetitions to aggregate.
    pub reps: usize,
    pub forest_trees: usize,
    pub forest_max_depth: usize,
    /// Neighbor count for density/coverage ball radii.
    pub knn_k: usize,
    pub permutation_shuffles: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            reps: 10,
            forest_trees: 100,
            forest_max_depth: 12,
            knn_k: 5,
            permutation_shuffles: 5,
            seed: 0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.reps == 0 {
            return Err(EvalError::Config("reps must be at least 1".into()));
        }
        if self.forest_trees == 0 || self.forest_max_depth == 0 {
            return Err(EvalError::Config("forest needs trees and depth".into()));
        }
        if self.knn_k == 0 {
            return Err(EvalError::Config("knn_k must be at least 1".into()));
        }
        if self.permutation_shuffles == 0 {
            return Err(EvalError::Config(
                "permutation_shuffles must be at least 1".into(),
            ));
        }
        Ok(())
    }

    fn forest(&self, seed: u64) -> ForestConfig {
        ForestConfig {
            trees: self.forest_trees,
            max_depth: self.forest_max_depth,
            seed,
        }
    }
}

pub const PCA_COMPONENTS: usize = 2;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FairnessBlock {
    /// Forest trained on the real training split, scored on the test split.
    pub baseline_dpr: f64,
    pub baseline_eor: f64,
    /// Forest trained on synthetic rows, scored on the same test split.
    pub synthetic_dpr: MetricSummary,
    pub synthetic_eor: MetricSummary,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UtilityBlock {
    pub baseline: UtilityScores,
    pub synthetic_accuracy: MetricSummary,
    pub synthetic_recall: MetricSummary,
    pub synthetic_f1: MetricSummary,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QualityBlock {
    pub knn_k: usize,
    pub density: MetricSummary,
    pub coverage: MetricSummary,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImportanceBlock {
    pub columns: Vec<String>,
    pub original_impurity: Vec<f64>,
    pub original_permutation: Vec<f64>,
    /// Per-column means over repetitions.
    pub synthetic_impurity: Vec<f64>,
    pub synthetic_permutation: Vec<f64>,
    pub protected_original_impurity: f64,
    pub protected_original_permutation: f64,
    pub protected_synthetic_impurity: MetricSummary,
    pub protected_synthetic_permutation: MetricSummary,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PcaBlock {
    pub components: usize,
    pub original_ratio: Vec<f64>,
    pub synthetic_ratio_mean: Vec<f64>,
    pub synthetic_ratio_std: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalTimings {
    pub total_seconds: f64,
    pub per_rep_seconds: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub reps: usize,
    pub fairness: FairnessBlock,
    pub utility: UtilityBlock,
    pub quality: QualityBlock,
    pub importance: ImportanceBlock,
    pub pca: PcaBlock,
    /// Repetitions whose synthetic labels collapsed to a single class.
    pub degenerate_reps: usize,
    /// Wall-clock measurements; stripped before metric files are written so
    /// identical runs stay byte-identical.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timings: Option<EvalTimings>,
}

/// Run `reps` generate-and-score rounds against a held-out split and
/// aggregate the metrics.
///
/// Baseline numbers (forest on real training rows) are computed once; each
/// repetition then generates a fresh synthetic dataset the size of the
/// training split, trains a forest on it, and scores fairness and utility on
/// the real test rows, sample quality against the test rows, and importances
/// with the protected attribute made visible to a diagnostic forest.
pub fn evaluate_pipeline(
    teacher: &TeacherModel,
    student: &StudentModel,
    split: &SplitPair,
    cfg: &EvalConfig,
) -> Result<EvalReport, EvalError> {
    cfg.validate()?;
    let start = std::time::Instant::now();
    let train = &split.train;
    let test = &split.test;
    let groups = train.schema.num_groups();

    let baseline_forest = fit_forest(&train.x, &train.y, &cfg.forest(derive_seed(cfg.seed, 0)))?;
    let baseline_pred = baseline_forest.predict(&test.x)?;
    let baseline_dpr = demographic_parity_ratio(&baseline_pred, &test.s, groups)?;
    let baseline_eor = equalized_odds_ratio(&baseline_pred, &test.y, &test.s, groups)?;
    let baseline_utility = utility_scores(&baseline_pred, &test.y)?;

    let original_importance = feature_importance(
        train,
        test,
        &cfg.forest(derive_seed(cfg.seed, 1)),
        cfg.permutation_shuffles,
        derive_seed(cfg.seed, 2),
    )?;
    let original_pca = pca_project(&test.x, PCA_COMPONENTS)?;

    let r = cfg.reps;
    let mut dpr = Vec::with_capacity(r);
    let mut eor = Vec::with_capacity(r);
    let mut acc = Vec::with_capacity(r);
    let mut recall = Vec::with_capacity(r);
    let mut f1 = Vec::with_capacity(r);
    let mut density = Vec::with_capacity(r);
    let mut coverage = Vec::with_capacity(r);
    let mut prot_imp = Vec::with_capacity(r);
    let mut prot_perm = Vec::with_capacity(r);
    let mut imp_cols = vec![0.0; original_importance.columns.len()];
    let mut perm_cols = vec![0.0; original_importance.columns.len()];
    let mut pca_ratios: Vec<Vec<f64>> = Vec::with_capacity(r);
    let mut degenerate_reps = 0usize;
    let mut per_rep_seconds = Vec::with_capacity(r);

    for rep in 0..r {
        let rep_start = std::time::Instant::now();
        let base = 10 + 4 * rep as u64;
        let synth = generate_synthetic(
            teacher,
            student,
            train,
            &GenerateConfig {
                rows: train.rows(),
                seed: derive_seed(cfg.seed, base),
                resample_protected: false,
            },
        )?;
        let sd = synth.to_dataset()?;

        let syn_forest = fit_forest(&sd.x, &sd.y, &cfg.forest(derive_seed(cfg.seed, base + 1)))?;
        if syn_forest.degenerate {
            degenerate_reps += 1;
        }
        let pred = syn_forest.predict(&test.x)?;
        dpr.push(demographic_parity_ratio(&pred, &test.s, groups)?);
        eor.push(equalized_odds_ratio(&pred, &test.y, &test.s, groups)?);
        let u = utility_scores(&pred, &test.y)?;
        acc.push(u.accuracy);
        recall.push(u.recall);
        f1.push(u.f1);

        let (den, cov) = density_coverage(&test.x, &sd.x, cfg.knn_k)?;
        density.push(den);
        coverage.push(cov);

        let imp = feature_importance(
            &sd,
            test,
            &cfg.forest(derive_seed(cfg.seed, base + 2)),
            cfg.permutation_shuffles,
            derive_seed(cfg.seed, base + 3),
        )?;
        prot_imp.push(imp.protected_impurity);
        prot_perm.push(imp.protected_permutation);
        for (a, v) in imp_cols.iter_mut().zip(&imp.impurity) {
            *a += v;
        }
        for (a, v) in perm_cols.iter_mut().zip(&imp.permutation) {
            *a += v;
        }

        pca_ratios.push(pca_project(&sd.x, PCA_COMPONENTS)?.explained_ratio);
        per_rep_seconds.push(rep_start.elapsed().as_secs_f64());
    }

    let rf = r as f64;
    for v in &mut imp_cols {
        *v /= rf;
    }
    for v in &mut perm_cols {
        *v /= rf;
    }
    let mut ratio_mean = Vec::with_capacity(PCA_COMPONENTS);
    let mut ratio_std = Vec::with_capacity(PCA_COMPONENTS);
    for c in 0..PCA_COMPONENTS {
        let vals: Vec<f64> = pca_ratios.iter().map(|v| v[c]).collect();
        let s = summarize(&vals);
        ratio_mean.push(s.mean);
        ratio_std.push(s.std);
    }

    Ok(EvalReport {
        reps: r,
        fairness: FairnessBlock {
            baseline_dpr,
            baseline_eor,
            synthetic_dpr: summarize(&dpr),
            synthetic_eor: summarize(&eor),
        },
        utility: UtilityBlock {
            baseline: baseline_utility,
            synthetic_accuracy: summarize(&acc),
            synthetic_recall: summarize(&recall),
            synthetic_f1: summarize(&f1),
        },
        quality: QualityBlock {
            knn_k: cfg.knn_k,
            density: summarize(&density),
            coverage: summarize(&coverage),
        },
        importance: ImportanceBlock {
            columns: original_importance.columns.clone(),
            original_impurity: original_importance.impurity.clone(),
            original_permutation: original_importance.permutation.clone(),
            synthetic_impurity: imp_cols,
            synthetic_permutation: perm_cols,
            protected_original_impurity: original_importance.protected_impurity,
            protected_original_permutation: original_importance.protected_permutation,
            protected_synthetic_impurity: summarize(&prot_imp),
            protected_synthetic_permutation: summarize(&prot_perm),
        },
        pca: PcaBlock {
            components: PCA_COMPONENTS,
            original_ratio: original_pca.explained_ratio,
            synthetic_ratio_mean: ratio_mean,
            synthetic_ratio_std: ratio_std,
        },
        degenerate_reps,
        timings: Some(EvalTimings {
            total_seconds: start.elapsed().as_secs_f64(),
            per_rep_seconds,
        }),
    })
}
