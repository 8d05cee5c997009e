use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lesionfuse::pipeline::{self, Config, TaskMetrics};
use lesionfuse::{synthetic, Error, Result};

/// Two-task skin-lesion classifier: train, predict, evaluate, inspect.
#[derive(Debug, Parser)]
#[command(name = "lesionfuse", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train both tasks and write a model bundle.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Override a config value, e.g. `--set cnn.epochs=5`. Repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Score images and write `image_id,task1_prob,task1_class,task2_prob,task2_class`.
    Predict {
        #[arg(long)]
        model: PathBuf,
        /// Image file, directory of images, or a text file listing one path per line.
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads (0 = all cores; capped by LESIONFUSE_THREADS).
        #[arg(long, default_value_t = 0)]
        threads: usize,
    },
    /// Fused metrics per task against a label CSV.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        images_dir: PathBuf,
        /// Report path; `.csv` writes one row per task, anything else key=value lines.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        threads: usize,
    },
    /// Print bundle metadata and feature layout.
    Inspect {
        #[arg(long)]
        model: PathBuf,
    },
    /// Write the synthetic two-task benchmark (images, label CSVs, config.toml).
    Synth {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 40)]
        per_task: usize,
        #[arg(long, default_value_t = 128)]
        side: usize,
        #[arg(long, default_value_t = 2017)]
        seed: u64,
    },
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::Data(format!("cannot create {}: {e}", path.display())))
}

/// Any failure to read the bundle is a model-file error, including I/O.
fn load_model(path: &Path) -> Result<pipeline::ModelBundle> {
    pipeline::load_bundle(path).map_err(|e| match e {
        Error::Io { .. } => Error::Model(e.to_string()),
        other => other,
    })
}

fn print_metrics(m: &TaskMetrics) {
    let t = m.task;
    println!("{t}.train_images={}", m.n_train);
    println!("{t}.augmented_samples={}", m.n_augmented);
    println!("{t}.validation_images={}", m.n_validation);
    println!("{t}.fusion_weight={}", m.weights.w());
    if let Some(last) = m.loss_history.last() {
        println!("{t}.final_batch_loss={:.6}", last.loss);
    }
    if let Some(v) = &m.validation {
        print!("{}", v.fused.to_kv(&format!("{t}.validation.")));
        for (name, r) in [("cnn", &v.cnn), ("forest", &v.forest)] {
            if let Some(auc) = r.auc {
                println!("{t}.validation.{name}_auc={auc:.6}");
            }
        }
    }
}

/// `Ok(true)` when every row succeeded.
fn run(command: Command) -> Result<bool> {
    match command {
        Command::Train { config, overrides } => {
            let cfg = Config::load(&config, &overrides)?;
            let outcome = pipeline::run_train(&cfg)?;
            for m in &outcome.metrics {
                print_metrics(m);
            }
            println!("bundle={}", cfg.output.display());
            Ok(true)
        }
        Command::Predict {
            model,
            images,
            out,
            threads,
        } => {
            let bundle = load_model(&model)?;
            let inputs = pipeline::resolve_inputs(&images)?;
            let mut w = create(&out)?;
            let summary = pipeline::with_threads(threads, || pipeline::run_predict(&bundle, &inputs, &mut w))??;
            for (path, why) in &summary.failures {
                eprintln!("lesionfuse: {}: {why}", path.display());
            }
            eprintln!(
                "lesionfuse: wrote {} rows to {} ({} failed)",
                summary.rows,
                out.display(),
                summary.failures.len()
            );
            Ok(summary.failures.is_empty())
        }
        Command::Evaluate {
            model,
            labels,
            images_dir,
            out,
            threads,
        } => {
            let bundle = load_model(&model)?;
            let reports = pipeline::with_threads(threads, || pipeline::run_evaluate(&bundle, &labels, &images_dir))??;
            let is_csv = out.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
            let text = if is_csv {
                pipeline::evaluation_csv(&reports)
            } else {
                pipeline::evaluation_text(&reports)
            };
            let mut w = create(&out)?;
            w.write_all(text.as_bytes())
                .and_then(|_| w.flush())
                .map_err(|e| Error::Data(format!("cannot write {}: {e}", out.display())))?;
            print!("{}", pipeline::evaluation_text(&reports));
            Ok(true)
        }
        Command::Inspect { model } => {
            print!("{}", pipeline::describe(&load_model(&model)?));
            Ok(true)
        }
        Command::Synth {
            out_dir,
            per_task,
            side,
            seed,
        } => {
            let b = synthetic::write_benchmark(&out_dir, per_task, side, seed)?;
            println!("config={}", b.config.display());
            println!("images={}", b.images.len());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("lesionfuse: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
