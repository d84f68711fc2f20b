//! Batch CLI over the sprobe library: fixture generation, latent encoding,
//! experiment sweeps, quiver selection, reports, and dataset diagnostics.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sprobe::diagnostics::{self, TokenStream};
use sprobe::fixtures::{write_fixture_bundle, FixtureConfig};
use sprobe::harness::{recompute_quivers, report, run_experiment, ExperimentManifest};
use sprobe::probes::ProbeModel;
use sprobe::sae::{self, PoolMode, SAEWeights};
use sprobe::tensor::{self, DatasetManifest};

#[derive(Parser)]
#[command(name = "sprobe", version, about = "Sparse-probing experiment harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic fixture bundle: activations, targets, oracle
    /// SAE weights, and a dataset manifest.
    GenFixture(GenFixtureArgs),
    /// Encode a dataset's activations into SAE latents and write them as an
    /// SPBA tensor.
    Encode(EncodeArgs),
    /// Run the experiment sweep an experiment manifest describes.
    Run(RunArgs),
    /// Recompute quiver selections from a results directory's records.
    Quiver(QuiverArgs),
    /// Emit summary CSVs for a results directory.
    Report(ReportArgs),
    /// Mine label disagreements (and optionally top-activating tokens) with
    /// a serialized probe.
    Diagnose(DiagnoseArgs),
}

#[derive(Args)]
struct GenFixtureArgs {
    /// Output directory for the bundle.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 64)]
    d_model: usize,
    #[arg(long, default_value_t = 256)]
    w_true: usize,
    /// Number of examples.
    #[arg(long, default_value_t = 1024)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    n_tokens: usize,
    #[arg(long, default_value_t = 0.05)]
    noise_sigma: f64,
    /// Also generate a 300-example covariate-shifted test set.
    #[arg(long)]
    ood: bool,
}

#[derive(Args)]
struct EncodeArgs {
    /// Dataset manifest naming the activations to encode.
    #[arg(long)]
    manifest: PathBuf,
    /// SAE weights file (SPSW).
    #[arg(long)]
    sae: PathBuf,
    /// Output latents file (SPBA, one row per example).
    #[arg(long)]
    out: PathBuf,
    /// Token pooling: last, mean, or max.
    #[arg(long, default_value = "last")]
    pool: String,
    /// Binarize pooled latents at the threshold.
    #[arg(long)]
    binarize: bool,
    #[arg(long, default_value_t = 1.0)]
    threshold: f32,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment manifest (JSON).
    #[arg(long)]
    manifest: PathBuf,
    /// Override the manifest's global seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the manifest's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Restrict the sweep to one regime: standard, scarcity, imbalance,
    /// noise, or shift.
    #[arg(long)]
    regime: Option<String>,
}

#[derive(Args)]
struct QuiverArgs {
    /// Results directory containing records.csv.
    #[arg(long)]
    results: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Results directory containing records.csv (and quivers.csv).
    #[arg(long)]
    results: PathBuf,
}

#[derive(Args)]
struct DiagnoseArgs {
    /// Dataset manifest to diagnose.
    #[arg(long)]
    manifest: PathBuf,
    /// Serialized probe model (JSON, linear family for token tables).
    #[arg(long)]
    model: PathBuf,
    /// Output directory for the CSV reports.
    #[arg(long)]
    out: PathBuf,
    /// How many top disagreements to keep.
    #[arg(long, default_value_t = 50)]
    top: usize,
    /// Token-id file (one u32 per line, example-major over tokens) enabling
    /// the top-activating-token table.
    #[arg(long)]
    token_ids: Option<PathBuf>,
    /// Minimum occurrences for a token to enter the table.
    #[arg(long, default_value_t = 10)]
    min_occurrences: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> sprobe::Result<()> {
    match command {
        Command::GenFixture(args) => {
            let config = FixtureConfig {
                d_model: args.d_model,
                w_true: args.w_true,
                n: args.n,
                n_tokens: args.n_tokens,
                noise_sigma: args.noise_sigma,
                seed: args.seed,
                with_ood: args.ood,
                ood_n: 300,
            };
            let bundle = write_fixture_bundle(&config, &args.out)?;
            println!("wrote fixture bundle: {}", bundle.manifest_path.display());
            println!("oracle sae: {}", bundle.sae_path.display());
            Ok(())
        }

        Command::Encode(args) => {
            let manifest = DatasetManifest::load(&args.manifest)?;
            let tensor = tensor::read_tensor(&manifest.activations)?;
            let weights = SAEWeights::read(&args.sae)?;
            let mode: PoolMode = args.pool.parse()?;
            let per_token = sae::encode(&tensor, &weights)?;
            let mut latents = sae::pool_latents(&per_token, mode)?;
            if args.binarize {
                latents = sae::binarize(&latents, args.threshold);
            }
            let out_tensor = tensor::ActivationTensor::from_matrix(
                latents.values().to_vec(),
                latents.rows(),
                latents.width(),
            )?;
            tensor::write_tensor(&out_tensor, &args.out)?;
            let nonzero = latents.values().iter().filter(|&&v| v > 0.0).count();
            println!(
                "encoded {} examples x {} latents (mean L0 {:.2}) -> {}",
                latents.rows(),
                latents.width(),
                nonzero as f64 / latents.rows() as f64,
                args.out.display()
            );
            Ok(())
        }

        Command::Run(args) => {
            let mut manifest = ExperimentManifest::load(&args.manifest)?;
            if let Some(seed) = args.seed {
                manifest.seed = seed;
            }
            if let Some(out) = args.out {
                manifest.out_dir = out;
            }
            if let Some(regime) = args.regime {
                manifest.regimes = vec![regime];
            }
            let outcome = run_experiment(&manifest, args.workers)?;
            println!(
                "run complete: {} new records, {} cached, {} failures -> {}",
                outcome.new_records,
                outcome.skipped_cached,
                outcome.failures.len(),
                outcome.out_dir.display()
            );
            for failure in &outcome.failures {
                eprintln!("task failed: {failure}");
            }
            Ok(())
        }

        Command::Quiver(args) => {
            let rows = recompute_quivers(&args.results)?;
            println!(
                "wrote {rows} quiver rows -> {}",
                args.results.join("quivers.csv").display()
            );
            Ok(())
        }

        Command::Report(args) => {
            let summary = report(&args.results)?;
            println!("aggregated {} records", summary.n_records);
            for file in summary.files {
                println!("wrote {}", file.display());
            }
            Ok(())
        }

        Command::Diagnose(args) => {
            let manifest = DatasetManifest::load(&args.manifest)?;
            let data = tensor::load_dataset(&manifest)?;
            let model_text = std::fs::read_to_string(&args.model)?;
            let model = ProbeModel::from_json(&model_text)?;
            std::fs::create_dir_all(&args.out)?;

            if args.top > data.n_examples() {
                eprintln!(
                    "warning: --top {} exceeds the {} examples; clamping",
                    args.top,
                    data.n_examples()
                );
            }
            let rows = diagnostics::mine_disagreements(&model, &data, args.top)?;
            let mut csv = String::from("rank,index,label,score,prob,confidence\n");
            for (rank, d) in rows.iter().enumerate() {
                csv.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    rank + 1,
                    d.index,
                    d.label,
                    d.score,
                    d.prob,
                    d.confidence
                ));
            }
            let path = args.out.join("disagreements.csv");
            std::fs::write(&path, csv)?;
            println!("wrote {}", path.display());

            if let Some(token_path) = args.token_ids {
                let text = std::fs::read_to_string(&token_path)?;
                let ids: Vec<u32> = text
                    .lines()
                    .filter(|l| !l.trim().is_empty())
                    .map(|l| {
                        l.trim().parse().map_err(|e| {
                            sprobe::Error::InvalidParam(format!("bad token id {l:?}: {e}"))
                        })
                    })
                    .collect::<sprobe::Result<_>>()?;
                let tensor = tensor::read_tensor(&manifest.activations)?;
                let stream = TokenStream::new(tensor, ids)?;
                let table =
                    diagnostics::top_activating_tokens(&model, &stream, args.min_occurrences)?;
                let path = args.out.join("token_means.csv");
                std::fs::write(&path, diagnostics::token_table_csv(&table))?;
                println!("wrote {}", path.display());
            }
            Ok(())
        }
    }
}
