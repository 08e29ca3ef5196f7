use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use hqlab::detector::weights;
use hqlab::eval::io::{align, ingest_ground_truth, ingest_predictions, predictions_to_json};
use hqlab::eval::{eval_set_id, evaluate_detections, ImageDetections};
use hqlab::harness::config::RunConfig;
use hqlab::harness::data::Dataset;
use hqlab::harness::export::export_plot_data;
use hqlab::harness::run::{
    evaluate_net, fp32_config, load_records, run_name, train_fp32, train_qat, write_evaluation, write_run, RunKind,
    Splits,
};
use hqlab::harness::sweep::sweep;
use hqlab::parallel::Exec;
use hqlab::{eval, fsutil};

#[derive(Parser)]
#[command(name = "hqlab", version, about = "Quantization-aware training of a small dense detector")]
struct Cli {
    /// Run everything on the calling thread. Outputs are identical either way.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic shape dataset.
    GenData {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the full-precision detector. Bit and loss settings in the
    /// config are ignored.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Fine-tune full-precision weights with fake quantization.
    Qat {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        init_weights: PathBuf,
    },
    /// Run a weights file over a dataset and score it.
    Eval {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Inference settings are taken from this config when given.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run every cell of the sweep axes in the config.
    Sweep {
        #[arg(long)]
        config: PathBuf,
    },
    /// Score a predictions file against a ground-truth file.
    Analyze {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write plot data for a run directory tree or a single record.json.
    ExportPlots {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: &Path) -> Result<RunConfig> {
    RunConfig::load(path).with_context(|| format!("loading config {}", path.display()))
}

fn report(dir: &Path, e: &eval::Evaluation) {
    println!(
        "{}: mAP {:.4}  AP50 {:.4}  AP75 {:.4}  TPs {}",
        dir.display(),
        e.ap.map,
        e.ap.ap50,
        e.ap.ap75,
        e.harmony.tp_count
    );
}

fn run(cli: Cli) -> Result<()> {
    let exec = if cli.sequential { Exec::Sequential } else { Exec::default() };
    match cli.command {
        Command::GenData { seed, n, out } => {
            if n == 0 {
                bail!("--n must be positive");
            }
            let data = Dataset::generate_with(exec, seed, 0, n)?;
            data.save(&out)?;
            println!("{} scenes written to {}", data.len(), out.display());
        }
        Command::Train { config } => {
            let given = load_config(&config)?;
            let cfg = fp32_config(&given);
            if cfg != given {
                log::info!("training at full precision with the baseline loss");
            }
            let out = train_fp32(&cfg, &Splits::generate(&cfg)?)?;
            let dir = cfg.out_dir.join(&out.record.name);
            write_run(&dir, &out)?;
            report(&dir, &out.record.evaluation);
        }
        Command::Qat { config, init_weights } => {
            let cfg = load_config(&config)?;
            let init = weights::load(&init_weights)?;
            if init.is_quantized() {
                bail!("{} already holds quantized weights", init_weights.display());
            }
            let out = train_qat(&cfg, &init, &Splits::generate(&cfg)?)?;
            let dir = cfg.out_dir.join(run_name(&cfg, RunKind::Qat));
            write_run(&dir, &out)?;
            report(&dir, &out.record.evaluation);
        }
        Command::Eval { weights: path, data, out, config } => {
            let net = weights::load(&path)?;
            let data = Dataset::load(&data)?;
            if data.is_empty() {
                bail!("dataset is empty");
            }
            let settings = match config {
                Some(c) => load_config(&c)?.inference,
                None => RunConfig::default().inference,
            };
            let (evaluation, predictions) = evaluate_net(&net, &data, &settings)?;
            write_evaluation(&out, &evaluation)?;
            fsutil::write_atomic(&out.join("predictions.json"), predictions_to_json(&predictions)?.as_bytes())?;
            report(&out, &evaluation);
        }
        Command::Sweep { config } => {
            let cfg = load_config(&config)?;
            let outcome = sweep(&cfg, exec)?;
            for r in &outcome.records {
                println!("{:<32} mAP {:.4}", r.name, r.evaluation.ap.map);
            }
            println!("table written to {}", cfg.out_dir.join("sweep.csv").display());
            if !outcome.failures.is_empty() {
                bail!("{} sweep cell(s) failed; see failures.csv", outcome.failures.len());
            }
        }
        Command::Analyze { pred, gt, out } => {
            let preds: Vec<ImageDetections> = ingest_predictions(&pred)?;
            let gts = ingest_ground_truth(&gt)?;
            let (dets, objects) = align(&preds, &gts)?;
            let evaluation = evaluate_detections(exec, &dets, &objects, &eval_set_id(&gts)?)?;
            write_evaluation(&out, &evaluation)?;
            report(&out, &evaluation);
        }
        Command::ExportPlots { records, out } => {
            let recs = load_records(&records)?;
            if recs.is_empty() {
                bail!("no record.json found under {}", records.display());
            }
            export_plot_data(&recs, &out)?;
            println!("plot data for {} run(s) written to {}", recs.len(), out.display());
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
