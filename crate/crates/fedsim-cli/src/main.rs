//! `fedsim` — drive the federated learning simulator from config files.
//!
//! Exit codes: 0 success, 2 invalid config or input, 3 training divergence.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use fedsim_core::codec::{self, CompressionScheme};
use fedsim_core::config::{parse_sweep, DataSource, GenDataSpec, RunConfig};
use fedsim_core::data::{load_csv, scale_features_geometric, synth_generate, write_csv};
use fedsim_core::engine::{compare, run, CompareReport};
use fedsim_core::model::{ModelKind, ModelSpec};
use fedsim_core::param::ParamVector;
use fedsim_core::seeds;
use fedsim_core::{Error, Result};

#[derive(Parser)]
#[command(name = "fedsim", version, about = "Deterministic federated learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a run and write per-round metrics to `<out>/metrics.csv`.
    Run {
        /// Config file (flat `key = value` lines, dotted keys).
        #[arg(long)]
        config: PathBuf,
        /// Replace the config's master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory for metrics.csv.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Run every sweep variant against a base config and tabulate
    /// rounds-to-target-loss and final accuracy.
    Compare {
        #[arg(long)]
        config: PathBuf,
        /// Sweep file: one `label key=value ...` line per variant.
        #[arg(long)]
        sweep: PathBuf,
    },
    /// Generate a synthetic classification dataset as CSV.
    GenData {
        /// Generator spec file (`num_classes`, `input_dim`, `per_class`,
        /// `spread`, `scale_span`, `seed`).
        #[arg(long)]
        spec: PathBuf,
        /// Destination CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the fully resolved config and a payload-size preview.
    Inspect {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = dispatch(cli.command) {
        eprintln!("error: {err}");
        std::process::exit(i32::from(err.exit_code()));
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Run { config, seed, out } => cmd_run(&config, seed, &out),
        Command::Compare { config, sweep } => cmd_compare(&config, &sweep),
        Command::GenData { spec, out } => cmd_gen_data(&spec, &out),
        Command::Inspect { config } => cmd_inspect(&config),
    }
}

fn file_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::File {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn cmd_run(config: &Path, seed: Option<u64>, out: &Path) -> Result<()> {
    let mut cfg = RunConfig::from_file(config)?;
    if let Some(seed) = seed {
        cfg = cfg.with_overrides(&[("run.seed".into(), seed.to_string())])?;
    }
    let output = run(&cfg)?;

    std::fs::create_dir_all(out).map_err(|e| file_err(out, e))?;
    let metrics_path = out.join("metrics.csv");
    output.metrics.write_csv(&metrics_path)?;

    let last = output
        .metrics
        .records
        .last()
        .expect("a run always has at least one round");
    println!(
        "completed {} rounds in {:.3} simulated seconds",
        last.round + 1,
        last.sim_seconds
    );
    println!(
        "train loss {:.6} -> {:.6}, eval accuracy {:.4}",
        output.initial_train_loss, last.train_loss, last.eval_acc
    );
    println!(
        "traffic: {} bytes up, {} bytes down",
        last.bytes_up, last.bytes_down
    );
    println!("metrics written to {}", metrics_path.display());
    Ok(())
}

fn cmd_compare(config: &Path, sweep: &Path) -> Result<()> {
    let base = RunConfig::from_file(config)?;
    let text = std::fs::read_to_string(sweep).map_err(|e| file_err(sweep, e))?;
    let variants = parse_sweep(&text)?;
    let report = compare(&base, &variants)?;
    print_report(&report);
    Ok(())
}

fn print_report(report: &CompareReport) {
    println!(
        "target loss: {} x each variant's initial train loss",
        report.target_fraction
    );
    println!(
        "{:<20} {:>16} {:>18} {:>16}",
        "label", "rounds_to_target", "final_train_loss", "final_eval_acc"
    );
    for row in &report.rows {
        match &row.error {
            Some(msg) => println!("{:<20} failed: {msg}", row.label),
            None => {
                let reached = row
                    .rounds_to_target
                    .map_or_else(|| "never".to_string(), |r| r.to_string());
                println!(
                    "{:<20} {:>16} {:>18.6} {:>16.4}",
                    row.label, reached, row.final_train_loss, row.final_eval_acc
                );
            }
        }
    }
}

fn cmd_gen_data(spec: &Path, out: &Path) -> Result<()> {
    let spec = GenDataSpec::from_file(spec)?;
    let data = synth_generate(
        spec.num_classes,
        spec.input_dim,
        spec.per_class,
        spec.spread,
        spec.seed,
    )?;
    let data = if spec.scale_span > 1.0 {
        scale_features_geometric(&data, spec.scale_span)?
    } else {
        data
    };
    write_csv(&data, out)?;
    println!(
        "wrote {} examples ({} classes, {} features) to {}",
        data.n(),
        data.num_classes(),
        data.input_dim(),
        out.display()
    );
    Ok(())
}

fn cmd_inspect(config: &Path) -> Result<()> {
    let cfg = RunConfig::from_file(config)?;
    println!("# resolved config");
    for (key, value) in cfg.resolved() {
        println!("{key} = {value}");
    }

    // Model dimensions come from the data source, so a CSV source is read
    // here (generation itself is cheap for the synthetic source).
    let (input_dim, num_classes) = match &cfg.source {
        DataSource::Synthetic {
            num_classes,
            input_dim,
            ..
        } => (*input_dim, *num_classes),
        DataSource::Csv {
            path,
            label_column,
            num_classes,
        } => {
            let data = load_csv(path, label_column, *num_classes)?;
            (data.input_dim(), data.num_classes())
        }
    };
    let spec = match cfg.model_kind {
        ModelKind::LogisticRegression => ModelSpec::logistic_regression(input_dim, num_classes)?,
        ModelKind::MlpOneHidden => {
            ModelSpec::mlp_one_hidden(input_dim, cfg.hidden_dim, num_classes)?
        }
    };
    let dim = spec.param_dim();

    // Size one upload with a non-constant ramp so data-dependent schemes
    // (quantization ranges, masks) show representative payloads.
    let ramp: Vec<f64> = (0..dim).map(|i| (i as f64 - dim as f64 / 2.0) * 1e-3).collect();
    let delta = ParamVector::new(ramp)?;
    let enc = codec::encode(
        &delta,
        spec.layout(),
        cfg.compression,
        0,
        0,
        seeds::derive_seed(cfg.seed, "codec", &[]),
        1,
    )?;
    let up = codec::measure_bytes(&enc);
    let down = codec::dense_wire_bytes(dim);

    println!();
    println!("# payload preview");
    println!("model parameters: {dim}");
    println!("dense download: {down} bytes");
    let name = CompressionScheme::name(&cfg.compression);
    println!(
        "upload ({name}): {up} bytes ({:.2}% of dense)",
        100.0 * up as f64 / down as f64
    );
    Ok(())
}
