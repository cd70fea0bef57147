//! End-to-end run orchestration: the TOML run config, stage execution with
//! resumable manifests, parameter sweeps that share a trained teacher, and
//! report merging.
//!
//! A run writes everything into one output directory:
//!
//! ```text
//! out/
//!   manifest.json        completed stages, artifact list, config hash
//!   teacher.json         teacher checkpoint
//!   teacher_trace.json   per-epoch loss terms
//!   student.json         student checkpoint
//!   student_trace.json   per-step loss terms
//!   synthetic.csv        one exported synthetic draw
//!   provenance.json      models and seed behind that draw
//!   eval_report.json     metrics (no wall-clock values)
//!   pca_original.csv     two-component projection of the held-out rows
//!   pca_synthetic.csv    the synthetic draw in the same basis
//!   timings.json         wall-clock values, kept apart so identical runs
//!                        produce byte-identical metric files
//! ```
//!
//! All stage seeds derive from the single run seed, so one integer pins the
//! whole run: split, teacher init and batching, distillation, generation,
//! and every evaluation repetition.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use ndarray::Array2;

use crate::data::{
    self, ColumnDomain, ColumnSpec, DataError, Dataset, SchemaSpec, SplitPair, TabularSchema,
};
use crate::distill::{distill_student, DistillConfig, DistillError, QualityKind, StudentModel};
use crate::eval::{
    evaluate_pipeline, pca_project, EvalConfig, EvalError, EvalReport, MetricSummary,
    PCA_COMPONENTS,
};
use crate::fairvae::{train_teacher, FairVaeConfig, FairVaeError, TeacherModel};
use crate::generate::{export_synthetic, generate_synthetic, GenerateConfig, GenerateError};
use crate::util::{derive_seed, sha256_hex};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("config: {0}")]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Teacher(#[from] FairVaeError),
    #[error(transparent)]
    Distill(#[from] DistillError),
    #[error(transparent)]
    Generate(#[from] GenerateError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl PipelineError {
    /// Process exit code: 2 for configuration problems, 3 for failures at
    /// run time.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) | PipelineError::Toml(_) => 2,
            _ => 3,
        }
    }
}

/// Stage indices for deriving per-stage seeds from the run seed.
const STAGE_SPLIT: u64 = 0;
const STAGE_TEACHER: u64 = 1;
const STAGE_DISTILL: u64 = 2;
const STAGE_GENERATE: u64 = 3;
const STAGE_EVAL: u64 = 4;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// CSV path; relative paths are resolved against the config file's
    /// directory when loaded through `load_config`.
    pub csv: String,
    pub columns: Vec<ColumnSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateSection {
    /// Rows to export; zero means match the training split size.
    pub rows: usize,
    pub resample_protected: bool,
}

impl Default for GenerateSection {
    fn default() -> Self {
        GenerateSection { rows: 0, resample_protected: false }
    }
}

/// Sweep axes. Empty axes fall back to the base `[distill]` value, so a
/// sweep over `lambda` alone reuses the configured quality loss.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub lambda: Vec<f64>,
    pub quality: Vec<QualityKind>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub data: DataSection,
    #[serde(default)]
    pub teacher: FairVaeConfig,
    #[serde(default)]
    pub distill: DistillConfig,
    #[serde(default)]
    pub generate: GenerateSection,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
}

impl RunConfig {
    pub fn schema_spec(&self) -> SchemaSpec {
        SchemaSpec { columns: self.data.columns.clone() }
    }

    /// Hash of the effective config (after any seed override), used to tie
    /// manifests to the exact settings that produced them.
    pub fn sha256(&self) -> Result<String, PipelineError> {
        Ok(sha256_hex(serde_json::to_string(self)?.as_bytes()))
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.data.csv.is_empty() {
            return Err(PipelineError::Config("data.csv must not be empty".into()));
        }
        if self.data.columns.is_empty() {
            return Err(PipelineError::Config("data.columns must not be empty".into()));
        }
        self.teacher_config()
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        self.eval_config()
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        if let Some(sweep) = &self.sweep {
            for &l in &sweep.lambda {
                if !(l.is_finite() && l >= 0.0) {
                    return Err(PipelineError::Config(format!(
                        "sweep.lambda entries must be finite and non-negative, got {l}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn teacher_config(&self) -> FairVaeConfig {
        FairVaeConfig { seed: derive_seed(self.seed, STAGE_TEACHER), ..self.teacher.clone() }
    }

    pub fn distill_config(&self) -> DistillConfig {
        DistillConfig { seed: derive_seed(self.seed, STAGE_DISTILL), ..self.distill.clone() }
    }

    pub fn generate_config(&self, train_rows: usize) -> GenerateConfig {
        GenerateConfig {
            rows: if self.generate.rows == 0 { train_rows } else { self.generate.rows },
            seed: derive_seed(self.seed, STAGE_GENERATE),
            resample_protected: self.generate.resample_protected,
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig { seed: derive_seed(self.seed, STAGE_EVAL), ..self.eval.clone() }
    }
}

/// Parse a TOML run config, resolving a relative CSV path against the
/// config file's directory.
pub fn load_config(path: &Path) -> Result<RunConfig, PipelineError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut cfg: RunConfig = toml::from_str(&text)?;
    let csv = PathBuf::from(&cfg.data.csv);
    if csv.is_relative() {
        if let Some(dir) = path.parent() {
            cfg.data.csv = dir.join(csv).to_string_lossy().into_owned();
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

const MANIFEST_FORMAT: &str = "run-manifest-v1";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageRecord {
    pub artifacts: Vec<String>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub config_sha256: String,
    pub seed: u64,
    /// Completed stages; presence means done.
    pub stages: BTreeMap<String, StageRecord>,
}

impl RunManifest {
    fn new(config_sha256: String, seed: u64) -> RunManifest {
        RunManifest {
            format: MANIFEST_FORMAT.to_string(),
            config_sha256,
            seed,
            stages: BTreeMap::new(),
        }
    }

    fn path(out: &Path) -> PathBuf {
        out.join("manifest.json")
    }

    pub fn load(out: &Path) -> Result<Option<RunManifest>, PipelineError> {
        let p = Self::path(out);
        if !p.exists() {
            return Ok(None);
        }
        let m: RunManifest = serde_json::from_str(&std::fs::read_to_string(p)?)?;
        if m.format != MANIFEST_FORMAT {
            return Err(PipelineError::Config(format!(
                "unsupported manifest format {:?}",
                m.format
            )));
        }
        Ok(Some(m))
    }

    fn save(&self, out: &Path) -> Result<(), PipelineError> {
        write_json(&Self::path(out), self)
    }

    /// True when a stage already ran and all of its artifacts still exist.
    fn stage_done(&self, out: &Path, name: &str) -> bool {
        self.stages
            .get(name)
            .is_some_and(|s| s.artifacts.iter().all(|a| out.join(a).exists()))
    }

    fn record(
        &mut self,
        out: &Path,
        name: &str,
        artifacts: &[&str],
        seconds: f64,
    ) -> Result<(), PipelineError> {
        self.stages.insert(
            name.to_string(),
            StageRecord {
                artifacts: artifacts.iter().map(|a| a.to_string()).collect(),
                seconds,
            },
        );
        self.save(out)
    }
}

/// Wall-clock figures for each stage, written to `timings.json`. Kept out
/// of `eval_report.json` so reruns of the same config produce byte-equal
/// metric files.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunTimings {
    pub teacher_seconds: f64,
    pub teacher_epochs: usize,
    pub teacher_seconds_per_epoch: f64,
    pub distill_seconds: f64,
    pub distill_epochs: usize,
    pub distill_seconds_per_epoch: f64,
    pub generate_seconds: f64,
    pub eval_seconds: f64,
    pub eval_per_rep_seconds: Vec<f64>,
}

impl RunTimings {
    fn path(out: &Path) -> PathBuf {
        out.join("timings.json")
    }

    fn load_or_default(out: &Path) -> Result<RunTimings, PipelineError> {
        let p = Self::path(out);
        if !p.exists() {
            return Ok(RunTimings::default());
        }
        Ok(serde_json::from_str(&std::fs::read_to_string(p)?)?)
    }

    fn save(&self, out: &Path) -> Result<(), PipelineError> {
        write_json(&Self::path(out), self)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(std::fs::write(path, text)?)
}

/// What happened to one stage during a command.
#[derive(Debug, Clone)]
pub struct StageOutcome {
    pub name: &'static str,
    pub reused: bool,
    pub seconds: f64,
}

/// A loaded run: config plus the deterministic train/test split.
pub struct RunContext {
    pub config: RunConfig,
    pub out_dir: PathBuf,
    pub config_sha256: String,
    pub dataset: Dataset,
    pub split: SplitPair,
}

impl RunContext {
    /// Load the CSV, split it, and prepare the output directory and
    /// manifest. With `resume` a manifest from a different config is an
    /// error; without it any existing manifest is replaced.
    pub fn prepare(
        config: RunConfig,
        out_dir: &Path,
        resume: bool,
    ) -> Result<(RunContext, RunManifest), PipelineError> {
        let config_sha256 = config.sha256()?;
        std::fs::create_dir_all(out_dir)?;
        let manifest = match RunManifest::load(out_dir)? {
            Some(m) if resume => {
                if m.config_sha256 != config_sha256 {
                    return Err(PipelineError::Config(
                        "existing run used a different config; refusing to resume".into(),
                    ));
                }
                m
            }
            _ => RunManifest::new(config_sha256.clone(), config.seed),
        };
        let spec = config.schema_spec();
        let dataset = data::load_csv(&config.data.csv, &spec)?;
        let split = data::split_80_20(&dataset, derive_seed(config.seed, STAGE_SPLIT))?;
        Ok((
            RunContext {
                config,
                out_dir: out_dir.to_path_buf(),
                config_sha256,
                dataset,
                split,
            },
            manifest,
        ))
    }

    fn teacher_path(&self) -> PathBuf {
        self.out_dir.join("teacher.json")
    }

    fn student_path(&self) -> PathBuf {
        self.out_dir.join("student.json")
    }

    pub fn load_teacher(&self) -> Result<TeacherModel, PipelineError> {
        let p = self.teacher_path();
        if !p.exists() {
            return Err(PipelineError::Config(format!(
                "no teacher checkpoint at {}; run train-teacher first",
                p.display()
            )));
        }
        Ok(TeacherModel::load(p)?)
    }

    pub fn load_student(&self) -> Result<StudentModel, PipelineError> {
        let p = self.student_path();
        if !p.exists() {
            return Err(PipelineError::Config(format!(
                "no student checkpoint at {}; run distill first",
                p.display()
            )));
        }
        Ok(StudentModel::load(p)?)
    }

    /// Train the teacher, or reuse the checkpoint when `resume` allows it.
    pub fn stage_teacher(
        &self,
        manifest: &mut RunManifest,
        resume: bool,
    ) -> Result<(TeacherModel, StageOutcome), PipelineError> {
        if resume && manifest.stage_done(&self.out_dir, "teacher") {
            let t = TeacherModel::load(self.teacher_path())?;
            return Ok((t, StageOutcome { name: "teacher", reused: true, seconds: 0.0 }));
        }
        let cfg = self.config.teacher_config();
        let t0 = Instant::now();
        let (teacher, trace) = train_teacher(&self.split.train, &cfg)?;
        let seconds = t0.elapsed().as_secs_f64();
        teacher.save(self.teacher_path())?;
        write_json(&self.out_dir.join("teacher_trace.json"), &trace)?;
        let mut timings = RunTimings::load_or_default(&self.out_dir)?;
        timings.teacher_seconds = seconds;
        timings.teacher_epochs = cfg.epochs;
        timings.teacher_seconds_per_epoch = seconds / cfg.epochs as f64;
        timings.save(&self.out_dir)?;
        manifest.record(
            &self.out_dir,
            "teacher",
            &["teacher.json", "teacher_trace.json"],
            seconds,
        )?;
        Ok((teacher, StageOutcome { name: "teacher", reused: false, seconds }))
    }

    pub fn stage_distill(
        &self,
        teacher: &TeacherModel,
        manifest: &mut RunManifest,
        resume: bool,
    ) -> Result<(StudentModel, StageOutcome), PipelineError> {
        if resume && manifest.stage_done(&self.out_dir, "distill") {
            let s = StudentModel::load(self.student_path())?;
            return Ok((s, StageOutcome { name: "distill", reused: true, seconds: 0.0 }));
        }
        let cfg = self.config.distill_config();
        let t0 = Instant::now();
        let (student, trace) = distill_student(teacher, &self.split.train, &cfg)?;
        let seconds = t0.elapsed().as_secs_f64();
        student.save(self.student_path())?;
        write_json(&self.out_dir.join("student_trace.json"), &trace)?;
        let mut timings = RunTimings::load_or_default(&self.out_dir)?;
        timings.distill_seconds = seconds;
        timings.distill_epochs = cfg.epochs;
        timings.distill_seconds_per_epoch = seconds / cfg.epochs as f64;
        timings.save(&self.out_dir)?;
        manifest.record(
            &self.out_dir,
            "distill",
            &["student.json", "student_trace.json"],
            seconds,
        )?;
        Ok((student, StageOutcome { name: "distill", reused: false, seconds }))
    }

    pub fn stage_generate(
        &self,
        teacher: &TeacherModel,
        student: &StudentModel,
        manifest: &mut RunManifest,
        resume: bool,
    ) -> Result<StageOutcome, PipelineError> {
        if resume && manifest.stage_done(&self.out_dir, "generate") {
            return Ok(StageOutcome { name: "generate", reused: true, seconds: 0.0 });
        }
        let cfg = self.config.generate_config(self.split.train.rows());
        let t0 = Instant::now();
        let synth = generate_synthetic(teacher, student, &self.split.train, &cfg)?;
        export_synthetic(
            &synth,
            self.out_dir.join("synthetic.csv"),
            self.out_dir.join("provenance.json"),
        )?;
        let seconds = t0.elapsed().as_secs_f64();
        let mut timings = RunTimings::load_or_default(&self.out_dir)?;
        timings.generate_seconds = seconds;
        timings.save(&self.out_dir)?;
        manifest.record(
            &self.out_dir,
            "generate",
            &["synthetic.csv", "provenance.json"],
            seconds,
        )?;
        Ok(StageOutcome { name: "generate", reused: false, seconds })
    }

    pub fn stage_eval(
        &self,
        teacher: &TeacherModel,
        student: &StudentModel,
        manifest: &mut RunManifest,
        resume: bool,
    ) -> Result<(Option<EvalReport>, StageOutcome), PipelineError> {
        if resume && manifest.stage_done(&self.out_dir, "eval") {
            return Ok((None, StageOutcome { name: "eval", reused: true, seconds: 0.0 }));
        }
        let cfg = self.config.eval_config();
        let t0 = Instant::now();
        let mut report = evaluate_pipeline(teacher, student, &self.split, &cfg)?;
        self.write_pca_csvs(teacher, student)?;
        let seconds = t0.elapsed().as_secs_f64();
        let eval_timings = report.timings.take();
        write_json(&self.out_dir.join("eval_report.json"), &report)?;
        let mut timings = RunTimings::load_or_default(&self.out_dir)?;
        if let Some(et) = eval_timings {
            timings.eval_seconds = et.total_seconds;
            timings.eval_per_rep_seconds = et.per_rep_seconds;
        } else {
            timings.eval_seconds = seconds;
        }
        timings.save(&self.out_dir)?;
        manifest.record(
            &self.out_dir,
            "eval",
            &["eval_report.json", "pca_original.csv", "pca_synthetic.csv"],
            seconds,
        )?;
        Ok((Some(report), StageOutcome { name: "eval", reused: false, seconds }))
    }

    /// Scatter-ready projections: the held-out rows on their top two
    /// principal axes, and the exported synthetic draw projected into that
    /// same basis so the two files share coordinates.
    fn write_pca_csvs(
        &self,
        teacher: &TeacherModel,
        student: &StudentModel,
    ) -> Result<(), PipelineError> {
        let test = &self.split.test;
        let proj = pca_project(&test.x, PCA_COMPONENTS)?;
        write_projection_csv(
            &self.out_dir.join("pca_original.csv"),
            &test.schema,
            &proj.projected,
            &test.s,
            &test.y,
        )?;
        let gen_cfg = self.config.generate_config(self.split.train.rows());
        let synth = generate_synthetic(teacher, student, &self.split.train, &gen_cfg)?;
        let sd = synth.to_dataset()?;
        let centered = &sd.x - &proj.mean;
        write_projection_csv(
            &self.out_dir.join("pca_synthetic.csv"),
            &sd.schema,
            &centered.dot(&proj.components),
            &sd.s,
            &sd.y,
        )?;
        Ok(())
    }
}

/// Write projected coordinates with the group and label names per row.
fn write_projection_csv(
    path: &Path,
    schema: &TabularSchema,
    projected: &Array2<f64>,
    s: &[usize],
    y: &[u8],
) -> Result<(), PipelineError> {
    let prot_cats = match &schema.protected_column().domain {
        ColumnDomain::Categorical { categories } => categories,
        _ => unreachable!("validated protected column is categorical"),
    };
    let tgt_cats = match &schema.target_column().domain {
        ColumnDomain::Categorical { categories } => categories,
        _ => unreachable!("validated target column is categorical"),
    };
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (1..=projected.ncols()).map(|c| format!("pc{c}")).collect();
    header.push(schema.protected_column().name.clone());
    header.push(schema.target_column().name.clone());
    w.write_record(&header)?;
    for (i, row) in projected.rows().into_iter().enumerate() {
        let mut record: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        record.push(prot_cats[s[i]].clone());
        record.push(tgt_cats[y[i] as usize].clone());
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

/// Run every stage in order. Returns the stage outcomes and the final
/// evaluation report (`None` only when eval itself was reused).
pub fn run_pipeline(
    config: RunConfig,
    out_dir: &Path,
    resume: bool,
) -> Result<(Vec<StageOutcome>, Option<EvalReport>), PipelineError> {
    let (ctx, mut manifest) = RunContext::prepare(config, out_dir, resume)?;
    let mut outcomes = Vec::new();
    let (teacher, o) = ctx.stage_teacher(&mut manifest, resume)?;
    outcomes.push(o);
    let (student, o) = ctx.stage_distill(&teacher, &mut manifest, resume)?;
    outcomes.push(o);
    outcomes.push(ctx.stage_generate(&teacher, &student, &mut manifest, resume)?);
    let (report, o) = ctx.stage_eval(&teacher, &student, &mut manifest, resume)?;
    outcomes.push(o);
    Ok((outcomes, report))
}

/// One sweep variant: the distill settings it overrides and where its
/// artifacts live, relative to the sweep root.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepVariant {
    pub name: String,
    pub lambda: f64,
    pub quality: QualityKind,
}

fn format_float(v: f64) -> String {
    // Filesystem-safe float formatting for directory names.
    format!("{v}").replace('.', "p").replace('-', "m")
}

/// Grid of variants implied by the sweep section, with base-config
/// fallbacks for empty axes.
pub fn sweep_variants(config: &RunConfig) -> Vec<SweepVariant> {
    let sweep = config.sweep.clone().unwrap_or_default();
    let lambdas = if sweep.lambda.is_empty() { vec![config.distill.lambda] } else { sweep.lambda };
    let qualities =
        if sweep.quality.is_empty() { vec![config.distill.quality] } else { sweep.quality };
    let mut variants = Vec::new();
    for &q in &qualities {
        for &l in &lambdas {
            variants.push(SweepVariant {
                name: format!("{}_lambda-{}", q.name(), format_float(l)),
                lambda: l,
                quality: q,
            });
        }
    }
    variants
}

/// Train one teacher, then run distill/generate/eval once per variant under
/// `out/sweep/<variant>/`. The teacher stage honors `resume`; variants are
/// resumable individually because each has its own manifest.
pub fn run_sweep(
    config: RunConfig,
    out_dir: &Path,
    resume: bool,
) -> Result<Vec<(SweepVariant, Vec<StageOutcome>)>, PipelineError> {
    let variants = sweep_variants(&config);
    let (ctx, mut manifest) = RunContext::prepare(config.clone(), out_dir, resume)?;
    let (teacher, teacher_outcome) = ctx.stage_teacher(&mut manifest, resume)?;
    let mut results = Vec::new();
    for (i, v) in variants.iter().enumerate() {
        let mut vcfg = config.clone();
        vcfg.distill.lambda = v.lambda;
        vcfg.distill.quality = v.quality;
        vcfg.sweep = None;
        let vdir = out_dir.join("sweep").join(&v.name);
        let (vctx, mut vmanifest) = RunContext::prepare(vcfg, &vdir, resume)?;
        // The shared teacher replaces a per-variant teacher stage.
        std::fs::copy(ctx.teacher_path(), vctx.teacher_path())?;
        vmanifest.record(&vdir, "teacher", &["teacher.json"], 0.0)?;
        write_json(&vdir.join("variant.json"), v)?;
        let mut outcomes = Vec::new();
        if i == 0 {
            outcomes.push(teacher_outcome.clone());
        }
        let (student, o) = vctx.stage_distill(&teacher, &mut vmanifest, resume)?;
        outcomes.push(o);
        outcomes.push(vctx.stage_generate(&teacher, &student, &mut vmanifest, resume)?);
        let (_, o) = vctx.stage_eval(&teacher, &student, &mut vmanifest, resume)?;
        outcomes.push(o);
        results.push((v.clone(), outcomes));
    }
    Ok(results)
}

/// One row of the merged report: headline metrics for a run or variant,
/// each as mean and spread over the evaluation repetitions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportRow {
    pub variant: String,
    /// Absent for a plain run, whose distill settings live in its config.
    pub lambda: Option<f64>,
    pub quality: String,
    pub dpr: MetricSummary,
    pub eor: MetricSummary,
    pub accuracy: MetricSummary,
    pub f1: MetricSummary,
    pub density: MetricSummary,
    pub coverage: MetricSummary,
    pub protected_importance: MetricSummary,
    pub degenerate_reps: usize,
}

/// Wall-clock comparison for one run directory (stage times summed over
/// sweep variants where present).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimingRow {
    pub run: String,
    pub teacher_seconds: f64,
    pub distill_seconds: f64,
    pub generate_seconds: f64,
    pub eval_seconds: f64,
    pub total_seconds: f64,
    /// Relative difference from the first listed run, in percent:
    /// 100 * (total - total_first) / total_first.
    pub percent_vs_first: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MergedReport {
    pub rows: Vec<ReportRow>,
    pub timing: Vec<TimingRow>,
}

fn report_row(name: &str, lambda: Option<f64>, quality: &str, r: &EvalReport) -> ReportRow {
    ReportRow {
        variant: name.to_string(),
        lambda,
        quality: quality.to_string(),
        dpr: r.fairness.synthetic_dpr,
        eor: r.fairness.synthetic_eor,
        accuracy: r.utility.synthetic_accuracy,
        f1: r.utility.synthetic_f1,
        density: r.quality.density,
        coverage: r.quality.coverage,
        protected_importance: r.importance.protected_synthetic_impurity,
        degenerate_reps: r.degenerate_reps,
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

fn dir_label(dir: &Path) -> String {
    dir.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string())
}

/// Rows and summed stage timings for one output directory. Handles both
/// plain runs (a single `eval_report.json`) and sweeps (one per variant,
/// with the shared teacher's time at the sweep root).
fn collect_dir(out_dir: &Path) -> Result<(Vec<ReportRow>, RunTimings), PipelineError> {
    let mut rows = Vec::new();
    let mut timings = RunTimings::load_or_default(out_dir)?;
    let sweep_dir = out_dir.join("sweep");
    if sweep_dir.is_dir() {
        let mut names: Vec<String> = std::fs::read_dir(&sweep_dir)?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().is_dir())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .collect();
        names.sort();
        for name in names {
            let vdir = sweep_dir.join(&name);
            let report_path = vdir.join("eval_report.json");
            if !report_path.exists() {
                continue;
            }
            let report: EvalReport = read_json(&report_path)?;
            let variant: SweepVariant = read_json(&vdir.join("variant.json"))?;
            rows.push(report_row(&name, Some(variant.lambda), variant.quality.name(), &report));
            let vt = RunTimings::load_or_default(&vdir)?;
            timings.distill_seconds += vt.distill_seconds;
            timings.generate_seconds += vt.generate_seconds;
            timings.eval_seconds += vt.eval_seconds;
        }
        if rows.is_empty() {
            return Err(PipelineError::Config(format!(
                "no variant reports under {}",
                sweep_dir.display()
            )));
        }
    } else {
        let report_path = out_dir.join("eval_report.json");
        if !report_path.exists() {
            return Err(PipelineError::Config(format!(
                "no eval_report.json in {}; run the pipeline first",
                out_dir.display()
            )));
        }
        let report: EvalReport = read_json(&report_path)?;
        // Lambda and quality are not stored in the report; a plain run has
        // them only if a variant file is present.
        let variant_path = out_dir.join("variant.json");
        let (lambda, quality) = if variant_path.exists() {
            let v: SweepVariant = read_json(&variant_path)?;
            (Some(v.lambda), v.quality.name().to_string())
        } else {
            (None, "-".to_string())
        };
        rows.push(report_row("run", lambda, &quality, &report));
    }
    Ok((rows, timings))
}

/// Merge the reports from one or more output directories into a single
/// comparison table. The first directory is the timing reference and
/// receives the merged `report.json`; with several directories, row names
/// gain a `dir/` prefix.
pub fn build_report(dirs: &[PathBuf]) -> Result<(MergedReport, String), PipelineError> {
    let Some(first) = dirs.first() else {
        return Err(PipelineError::Config("at least one run directory is required".into()));
    };
    let mut rows = Vec::new();
    let mut timing = Vec::new();
    for dir in dirs {
        let (mut dir_rows, t) = collect_dir(dir)?;
        if dirs.len() > 1 {
            for r in &mut dir_rows {
                r.variant = format!("{}/{}", dir_label(dir), r.variant);
            }
        }
        rows.append(&mut dir_rows);
        let total =
            t.teacher_seconds + t.distill_seconds + t.generate_seconds + t.eval_seconds;
        timing.push(TimingRow {
            run: dir_label(dir),
            teacher_seconds: t.teacher_seconds,
            distill_seconds: t.distill_seconds,
            generate_seconds: t.generate_seconds,
            eval_seconds: t.eval_seconds,
            total_seconds: total,
            percent_vs_first: 0.0,
        });
    }
    let reference = timing[0].total_seconds;
    for t in &mut timing {
        t.percent_vs_first = if reference > 0.0 {
            100.0 * (t.total_seconds - reference) / reference
        } else {
            0.0
        };
    }
    let merged = MergedReport { rows, timing };
    write_json(&first.join("report.json"), &merged)?;
    Ok((merged.clone(), render_report(&merged)))
}

fn render_report(m: &MergedReport) -> String {
    // Each metric cell is mean +/- one standard deviation over the reps.
    fn pm(v: MetricSummary) -> String {
        format!("{:.3} ± {:.3}", v.mean, v.std)
    }
    let mut s = String::new();
    let name_w = m.rows.iter().map(|r| r.variant.len()).max().unwrap_or(7).max(7);
    s.push_str(&format!(
        "{:<name_w$}  {:>15} {:>15} {:>15} {:>15} {:>15} {:>15} {:>15}\n",
        "variant", "dpr", "eor", "acc", "f1", "density", "coverage", "prot_imp"
    ));
    for r in &m.rows {
        s.push_str(&format!(
            "{:<name_w$}  {:>15} {:>15} {:>15} {:>15} {:>15} {:>15} {:>15}\n",
            r.variant,
            pm(r.dpr),
            pm(r.eor),
            pm(r.accuracy),
            pm(r.f1),
            pm(r.density),
            pm(r.coverage),
            pm(r.protected_importance)
        ));
    }
    s.push('\n');
    let run_w = m.timing.iter().map(|t| t.run.len()).max().unwrap_or(3).max(3);
    s.push_str(&format!(
        "{:<run_w$}  {:>9} {:>9} {:>9} {:>9} {:>9} {:>10}\n",
        "run", "teacher", "distill", "generate", "eval", "total", "vs first"
    ));
    for t in &m.timing {
        s.push_str(&format!(
            "{:<run_w$}  {:>8.2}s {:>8.2}s {:>8.2}s {:>8.2}s {:>8.2}s {:>+9.1}%\n",
            t.run,
            t.teacher_seconds,
            t.distill_seconds,
            t.generate_seconds,
            t.eval_seconds,
            t.total_seconds,
            t.percent_vs_first
        ));
    }
    s
}
