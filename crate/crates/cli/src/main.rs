mod checks;
mod config;

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};
use qdefect::analysis::analyze;
use qdefect::circuits::{CircuitTemplate, TemplateKind};
use qdefect::data::{generate_dataset, split, Dataset, Pattern};
use qdefect::hybrid::{train_with, HybridModel};

use crate::config::RunConfig;

#[derive(Parser)]
#[command(name = "qdefect", version, about = "Hybrid quantum-classical wafer defect classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic WDM1 dataset.
    Generate {
        /// Comma-separated patterns; labels follow this order.
        #[arg(long, default_value = "Center,Edge,Ring,Scratch")]
        pattern_mix: String,
        #[arg(long, default_value_t = 500)]
        count: usize,
        #[arg(long, default_value_t = qdefect::data::DEFAULT_SIZE)]
        size: usize,
        #[arg(long, default_value_t = 0.05)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write an HQN1 checkpoint and a metrics CSV.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out_model: Option<PathBuf>,
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Accuracy and confusion matrix of a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Expressibility and entangling capability of a circuit template.
    Analyze {
        #[arg(long, default_value = "c5")]
        circuit: String,
        #[arg(long, default_value_t = 4)]
        qubits: usize,
        #[arg(long, default_value_t = 4)]
        layers: usize,
        #[arg(long, default_value_t = qdefect::analysis::DEFAULT_SAMPLES)]
        samples: usize,
        #[arg(long, default_value_t = qdefect::analysis::DEFAULT_BINS)]
        bins: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare every analytic gradient with finite differences.
    Gradcheck {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

/// Writes through a temporary file in the target directory, then renames.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("creating a file in {}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| anyhow!("writing {}: {}", path.display(), e.error))?;
    Ok(())
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::read(p),
        None => Ok(RunConfig::default()),
    }
}

fn read_data(path: &Path) -> Result<Dataset> {
    Dataset::read(path).with_context(|| format!("reading {}", path.display()))
}

fn cmd_generate(mix: &str, count: usize, size: usize, noise: f64, seed: u64, out: &Path) -> Result<()> {
    let patterns = mix.split(',').map(|p| p.parse::<Pattern>()).collect::<qdefect::Result<Vec<_>>>()?;
    let d = generate_dataset(&patterns, count, size, noise, seed)?;
    write_atomic(out, d.to_wdm1().as_bytes())?;
    for (name, n) in d.class_names.iter().zip(d.class_counts()) {
        println!("{name} {n}");
    }
    println!("wrote {} samples ({size}x{size}) to {}", d.len(), out.display());
    Ok(())
}

fn cmd_train(
    config: Option<&Path>,
    data: Option<PathBuf>,
    out_model: Option<PathBuf>,
    metrics: Option<PathBuf>,
) -> Result<()> {
    let cfg = load_config(config)?;
    let data = data.or(cfg.data.clone()).ok_or_else(|| anyhow!("no dataset: pass --data or set data in the config"))?;
    let out_model = out_model
        .or(cfg.out_model.clone())
        .ok_or_else(|| anyhow!("no checkpoint path: pass --out-model or set out_model in the config"))?;
    let metrics = metrics
        .or(cfg.metrics.clone())
        .ok_or_else(|| anyhow!("no metrics path: pass --metrics or set metrics in the config"))?;

    let dataset = read_data(&data)?;
    let mut model = HybridModel::new(cfg.model_for(dataset.height, dataset.width, dataset.n_classes()))?;
    let (train_set, test_set) = split(&dataset, cfg.test_fraction, cfg.train.seed)?;
    println!(
        "{} train / {} test, {} classical + {} quantum + {} head parameters",
        train_set.len(),
        test_set.len(),
        model.classical_param_count(),
        model.quantum_param_count(),
        model.head_param_count()
    );

    let mut csv = String::from("epoch,loss,train_acc,test_acc\n");
    train_with(&mut model, &train_set, Some(&test_set), &cfg.train, |m| {
        let test = m.test_acc.map_or(String::new(), |a| a.to_string());
        csv.push_str(&format!("{},{},{},{}\n", m.epoch, m.loss, m.train_acc, test));
        println!("epoch {:>3}  loss {:.6}  train_acc {:.4}  test_acc {}", m.epoch, m.loss, m.train_acc, test);
    })?;
    write_atomic(&metrics, csv.as_bytes())?;
    write_atomic(&out_model, &model.to_bytes())?;
    println!("wrote {} and {}", out_model.display(), metrics.display());
    Ok(())
}

fn cmd_eval(model: &Path, data: &Path) -> Result<()> {
    let model = HybridModel::load_file(model).with_context(|| format!("reading {}", model.display()))?;
    let dataset = read_data(data)?;
    let e = model.evaluate(&dataset)?;
    println!("accuracy {:.4} ({} samples)", e.accuracy, dataset.len());
    println!("loss {:.6}", e.loss);
    println!("confusion (rows: true, columns: predicted)");
    let width = dataset.class_names.iter().map(String::len).max().unwrap_or(0).max(6);
    print!("{:width$}", "");
    for name in &dataset.class_names {
        print!(" {name:>width$}");
    }
    println!();
    for (name, row) in dataset.class_names.iter().zip(&e.confusion) {
        print!("{name:width$}");
        for n in row {
            print!(" {n:>width$}");
        }
        println!();
    }
    Ok(())
}

fn cmd_analyze(circuit: &str, qubits: usize, layers: usize, samples: usize, bins: usize, seed: u64, out: &Path) -> Result<()> {
    let kind = TemplateKind::parse(circuit)?;
    let template = CircuitTemplate::build(kind, qubits, layers)?;
    let report = analyze(&template, samples, bins, seed)?;
    write_atomic(out, report.to_json().as_bytes())?;
    println!(
        "{kind} n={qubits} layers={layers}: KL {:.6}, mean Q {:.6} (std {:.6})",
        report.expressibility.kl_divergence, report.entanglement.mean_q, report.entanglement.std_q
    );
    Ok(())
}

fn cmd_gradcheck(config: Option<&Path>) -> Result<()> {
    let cfg = load_config(config)?;
    let results = checks::run(&cfg)?;
    let mut failed = 0;
    for r in &results {
        let status = if r.passed() { "ok" } else { "FAIL" };
        println!("{status:4} {:.3e} ({}) {}", r.deviation, r.measure, r.name);
        failed += usize::from(!r.passed());
    }
    if failed > 0 {
        bail!("{failed} gradient check(s) deviate by more than {:e}", checks::TOLERANCE);
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { pattern_mix, count, size, noise, seed, out } => {
            cmd_generate(&pattern_mix, count, size, noise, seed, &out)
        }
        Command::Train { config, data, out_model, metrics } => cmd_train(config.as_deref(), data, out_model, metrics),
        Command::Eval { model, data } => cmd_eval(&model, &data),
        Command::Analyze { circuit, qubits, layers, samples, bins, seed, out } => {
            cmd_analyze(&circuit, qubits, layers, samples, bins, seed, &out)
        }
        Command::Gradcheck { config } => cmd_gradcheck(config.as_deref()),
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("ERROR: {}", one_line(first));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ERROR: {}", one_line(&format!("{e:#}")));
            ExitCode::FAILURE
        }
    }
}
