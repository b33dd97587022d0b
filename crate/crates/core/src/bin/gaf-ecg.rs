use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use gaf_ecg::pipeline::{self, PipelineConfig, Stage, StageOutcome};
use gaf_ecg::synth::{self, CorpusSpec};
use gaf_ecg::train::{DatasetId, Hyperparams, SplitMode};

/// Inferior-MI detection from lead-II ECG via Gramian angular field images
/// and a small 2D-CNN.
#[derive(Parser)]
#[command(name = "gaf-ecg", version, propagate_version = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Scan a PTB-format tree and label its records.
    Ingest(Common),
    /// Write the noisy and wavelet-denoised lead-II signals.
    Preprocess(Common),
    /// Detect R peaks and cut 651-sample beats.
    Segment(Common),
    /// Encode beats as GASF/GADF images and write dataset manifests.
    Encode(Common),
    /// Cross-validated training, one checkpoint per fold.
    Train(Common),
    /// Evaluate fold checkpoints on their held-out folds.
    Eval(Common),
    /// Write metric tables, learning curves and confusion matrices.
    Report(Common),
    /// Run every stage in order.
    Pipeline(Common),
    /// Generate a small synthetic PTB-shaped corpus (for trials and tests).
    Synth(SynthArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Ds1,
    Ds2,
    Ds3,
    Ds4,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Beat,
    Patient,
}

#[derive(Args)]
struct Common {
    /// Root of the PTB-format record tree.
    #[arg(long)]
    dataset_root: Option<PathBuf>,
    /// Output root shared by all stages.
    #[arg(long, default_value = "gaf-ecg-out")]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "all")]
    variant: VariantArg,
    #[arg(long, value_enum, default_value = "beat")]
    split: SplitArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    #[arg(long, default_value_t = 8)]
    batch: usize,
    /// Maximum epochs per fold.
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    /// Epochs without validation-loss improvement before stopping.
    #[arg(long, default_value_t = 5)]
    patience: usize,
    /// Cross-validation folds.
    #[arg(long, default_value_t = 10)]
    folds: usize,
    /// Keep only MI records annotated with an inferior localization.
    #[arg(long)]
    inferior_only: bool,
    /// Lead to extract.
    #[arg(long, default_value = "ii")]
    lead: String,
    /// Rerun stages even when their outputs are up to date.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct SynthArgs {
    /// Directory to create the corpus in.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 3)]
    mi_subjects: usize,
    #[arg(long, default_value_t = 3)]
    healthy_subjects: usize,
    #[arg(long, default_value_t = 1)]
    records_per_subject: usize,
    /// Record length in seconds.
    #[arg(long, default_value_t = 20.0)]
    duration: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

impl Common {
    fn config(&self) -> PipelineConfig {
        let variants = match self.variant {
            VariantArg::Ds1 => vec![DatasetId::Ds1],
            VariantArg::Ds2 => vec![DatasetId::Ds2],
            VariantArg::Ds3 => vec![DatasetId::Ds3],
            VariantArg::Ds4 => vec![DatasetId::Ds4],
            VariantArg::All => DatasetId::ALL.to_vec(),
        };
        PipelineConfig {
            dataset_root: self.dataset_root.clone(),
            output_root: self.out.clone(),
            variants,
            split_mode: match self.split {
                SplitArg::Beat => SplitMode::BeatLevel,
                SplitArg::Patient => SplitMode::PatientLevel,
            },
            seed: self.seed,
            hyperparams: Hyperparams {
                learning_rate: self.lr,
                batch_size: self.batch,
                max_epochs: self.epochs,
                patience: self.patience,
                ..Hyperparams::default()
            },
            folds: self.folds,
            lead: self.lead.clone(),
            inferior_only: self.inferior_only,
        }
    }
}

fn configure_threads() -> anyhow::Result<()> {
    if let Ok(value) = std::env::var("GAF_ECG_THREADS") {
        let n: usize = value
            .parse()
            .map_err(|_| anyhow::anyhow!("GAF_ECG_THREADS must be a positive integer, got `{value}`"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global()?;
    }
    Ok(())
}

fn run(command: Command) -> anyhow::Result<()> {
    configure_threads()?;
    let (stage, common) = match command {
        Command::Synth(args) => {
            synth::write_corpus(
                &args.out,
                &CorpusSpec {
                    healthy_subjects: args.healthy_subjects,
                    mi_subjects: args.mi_subjects,
                    records_per_subject: args.records_per_subject,
                    duration_s: args.duration,
                    include_unlabeled: true,
                    seed: args.seed,
                },
            )?;
            println!("wrote synthetic corpus to {}", args.out.display());
            return Ok(());
        }
        Command::Pipeline(c) => {
            for (stage, outcome) in pipeline::run_pipeline(&c.config(), c.force)? {
                print_outcome(stage, outcome);
            }
            return Ok(());
        }
        Command::Ingest(c) => (Stage::Ingest, c),
        Command::Preprocess(c) => (Stage::Preprocess, c),
        Command::Segment(c) => (Stage::Segment, c),
        Command::Encode(c) => (Stage::Encode, c),
        Command::Train(c) => (Stage::Train, c),
        Command::Eval(c) => (Stage::Eval, c),
        Command::Report(c) => (Stage::Report, c),
    };
    let outcome = pipeline::run_stage(stage, &common.config(), common.force)?;
    print_outcome(stage, outcome);
    Ok(())
}

fn print_outcome(stage: Stage, outcome: StageOutcome) {
    match outcome {
        StageOutcome::Completed => println!("{}: done", stage.name()),
        StageOutcome::UpToDate => println!("{}: up to date (use --force to rerun)", stage.name()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    // clap exits with status 2 on usage errors.
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
