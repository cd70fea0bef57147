use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fairdistill::pipeline::{
    build_report, load_config, run_pipeline, run_sweep, PipelineError, RunContext, StageOutcome,
};

#[derive(Parser)]
#[command(
    name = "fairdistill",
    version,
    about = "Fair synthetic tabular data via latent-space distillation"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct RunArgs {
    /// TOML run config.
    #[arg(long)]
    config: PathBuf,
    /// Output directory for checkpoints, synthetic data, and reports.
    #[arg(long)]
    out: PathBuf,
    /// Override the config's run seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Reuse completed stages from a previous run of the same config.
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// Output directories of previous runs or sweeps; repeat to compare.
    /// The first is the timing reference and receives report.json.
    #[arg(long, required = true, num_args = 1..)]
    out: Vec<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run every stage: train teacher, distill, generate, evaluate.
    Pipeline(RunArgs),
    /// Train the teacher model only.
    TrainTeacher(RunArgs),
    /// Distill the student from an existing teacher checkpoint.
    Distill(RunArgs),
    /// Export one synthetic draw from existing checkpoints.
    Generate(RunArgs),
    /// Score existing checkpoints against the held-out split.
    Evaluate(RunArgs),
    /// Run the pipeline once per sweep variant, sharing one teacher.
    Sweep(RunArgs),
    /// Merge the reports from one or more run directories into one table.
    Report(ReportArgs),
}

fn print_outcomes(outcomes: &[StageOutcome]) {
    for o in outcomes {
        if o.reused {
            println!("{}: reused", o.name);
        } else {
            println!("{}: done in {:.2}s", o.name, o.seconds);
        }
    }
}

fn effective_config(args: &RunArgs) -> Result<fairdistill::pipeline::RunConfig, PipelineError> {
    let mut cfg = load_config(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    match cli.cmd {
        Cmd::Pipeline(args) => {
            let cfg = effective_config(&args)?;
            let (outcomes, report) = run_pipeline(cfg, &args.out, args.resume)?;
            print_outcomes(&outcomes);
            if let Some(r) = report {
                println!(
                    "dpr {:.3}  eor {:.3}  acc {:.3}  f1 {:.3}  density {:.3}  coverage {:.3}",
                    r.fairness.synthetic_dpr.mean,
                    r.fairness.synthetic_eor.mean,
                    r.utility.synthetic_accuracy.mean,
                    r.utility.synthetic_f1.mean,
                    r.quality.density.mean,
                    r.quality.coverage.mean,
                );
            }
        }
        Cmd::TrainTeacher(args) => {
            let cfg = effective_config(&args)?;
            let (ctx, mut manifest) = RunContext::prepare(cfg, &args.out, args.resume)?;
            let (_, o) = ctx.stage_teacher(&mut manifest, args.resume)?;
            print_outcomes(&[o]);
        }
        Cmd::Distill(args) => {
            let cfg = effective_config(&args)?;
            let (ctx, mut manifest) = RunContext::prepare(cfg, &args.out, true)?;
            let teacher = ctx.load_teacher()?;
            let (_, o) = ctx.stage_distill(&teacher, &mut manifest, args.resume)?;
            print_outcomes(&[o]);
        }
        Cmd::Generate(args) => {
            let cfg = effective_config(&args)?;
            let (ctx, mut manifest) = RunContext::prepare(cfg, &args.out, true)?;
            let teacher = ctx.load_teacher()?;
            let student = ctx.load_student()?;
            let o = ctx.stage_generate(&teacher, &student, &mut manifest, args.resume)?;
            print_outcomes(&[o]);
        }
        Cmd::Evaluate(args) => {
            let cfg = effective_config(&args)?;
            let (ctx, mut manifest) = RunContext::prepare(cfg, &args.out, true)?;
            let teacher = ctx.load_teacher()?;
            let student = ctx.load_student()?;
            let (report, o) = ctx.stage_eval(&teacher, &student, &mut manifest, args.resume)?;
            print_outcomes(&[o]);
            if let Some(r) = report {
                println!(
                    "dpr {:.3}  eor {:.3}  acc {:.3}  f1 {:.3}",
                    r.fairness.synthetic_dpr.mean,
                    r.fairness.synthetic_eor.mean,
                    r.utility.synthetic_accuracy.mean,
                    r.utility.synthetic_f1.mean,
                );
            }
        }
        Cmd::Sweep(args) => {
            let cfg = effective_config(&args)?;
            let results = run_sweep(cfg, &args.out, args.resume)?;
            for (variant, outcomes) in &results {
                println!("[{}]", variant.name);
                print_outcomes(outcomes);
            }
            let (_, table) = build_report(std::slice::from_ref(&args.out))?;
            println!("\n{table}");
        }
        Cmd::Report(args) => {
            let (_, table) = build_report(&args.out)?;
            println!("{table}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
