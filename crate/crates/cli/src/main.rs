//! `draftmix`: synthesizes two-domain workloads, trains drafters and runs the
//! speculative decoding experiment grid.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use draftmix::experiment::{
    build_variants, generate_domains, report_csv, routing_csv, run_experiments, run_sweep_only, sweep_csv,
    ExperimentConfig, ExperimentReport,
};
use draftmix::models::{ModelFile, Token};
use draftmix::oracle::{run_oracle, OracleConfig};
use serde::de::DeserializeOwned;

#[derive(Parser)]
#[command(name = "draftmix", version, about = "Speculative decoding with composed specialist drafters")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
    /// JSON config; missing fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run this seed only instead of the configured seed list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides the config's `output_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to one per core.
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Verb {
    /// Write the per-seed corpora and eval prompts.
    Gen,
    /// Write every trained model variant as JSON.
    Train,
    /// Run the full experiment grid and write JSON and CSV reports.
    Run,
    /// Run the losslessness suite on small random instances.
    Oracle,
    /// Run the averaging λ sweep only.
    Sweep,
}

fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("cannot read config {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("invalid config {}", p.display()))
        }
    }
}

fn output_dir(cli: &Cli, fallback: &str) -> Result<PathBuf> {
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from(fallback));
    fs::create_dir_all(&dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
    Ok(dir)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).with_context(|| format!("cannot create directory {}", parent.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn lines(seqs: &[Vec<Token>]) -> String {
    seqs.iter()
        .map(|s| s.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(" ") + "\n")
        .collect()
}

fn experiment_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut config: ExperimentConfig = load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        config.seeds = vec![seed];
    }
    if let Some(out) = &cli.out {
        config.output_dir = out.display().to_string();
    }
    config.validate()?;
    Ok(config)
}

fn gen(cli: &Cli) -> Result<()> {
    let config = experiment_config(cli)?;
    let dir = output_dir(cli, &config.output_dir)?;
    for &seed in &config.seeds {
        let d = generate_domains(&config, seed)?;
        let seed_dir = dir.join(format!("seed_{seed}"));
        write(&seed_dir.join("corpus_a.txt"), d.corpus_a.to_text())?;
        write(&seed_dir.join("corpus_b.txt"), d.corpus_b.to_text())?;
        write(&seed_dir.join("prompts_a.txt"), lines(&d.prompts_a))?;
        write(&seed_dir.join("prompts_b.txt"), lines(&d.prompts_b))?;
    }
    Ok(())
}

fn train(cli: &Cli) -> Result<()> {
    let config = experiment_config(cli)?;
    let dir = output_dir(cli, &config.output_dir)?;
    for &seed in &config.seeds {
        let variants = build_variants(&config, &generate_domains(&config, seed)?)?;
        for (name, model) in variants.named() {
            let path = dir.join(format!("seed_{seed}")).join("models").join(format!("{name}.json"));
            write(&path, serde_json::to_string(&ModelFile::from(model))?)?;
        }
    }
    Ok(())
}

fn summary(report: &ExperimentReport) {
    for &mode in &report.config.modes {
        println!("{mode}: mean acceptance on the mixed eval, averaged over seeds");
        for name in &report.config.strategies {
            let values: Vec<f64> = report
                .seeds
                .iter()
                .filter_map(|s| s.mixed_acceptance(*name, mode))
                .collect();
            let mean = values.iter().sum::<f64>() / values.len().max(1) as f64;
            println!("  {:<18} {mean:.3}", name.as_str());
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    let config = experiment_config(cli)?;
    let dir = output_dir(cli, &config.output_dir)?;
    let report = run_experiments(&config)?;
    write(&dir.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    write(&dir.join("report.csv"), report_csv(&report))?;
    write(&dir.join("routing.csv"), routing_csv(&report))?;
    summary(&report);
    Ok(())
}

fn sweep(cli: &Cli) -> Result<()> {
    let config = experiment_config(cli)?;
    let dir = output_dir(cli, &config.output_dir)?;
    let rows = run_sweep_only(&config)?;
    write(&dir.join("sweep.json"), serde_json::to_string_pretty(&rows)?)?;
    write(&dir.join("sweep.csv"), sweep_csv(&rows))?;
    Ok(())
}

fn oracle(cli: &Cli) -> Result<()> {
    let mut config: OracleConfig = load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let dir = output_dir(cli, "reports")?;
    let report = run_oracle(&config)?;
    write(&dir.join("oracle.json"), serde_json::to_string_pretty(&report)?)?;
    println!(
        "greedy: {} mismatches over {} decodes; packing: {} failures over {} instances",
        report.greedy_mismatches, report.greedy_decodes, report.packing_failures, report.packing_instances
    );
    for s in &report.sampling {
        println!("sampling {}: TV {:.5} (bound {:.5})", s.strategy, s.tv, s.bound);
    }
    if !report.pass() {
        bail!("losslessness check failed");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("error: cannot start {jobs} workers: {e}");
            return ExitCode::FAILURE;
        }
    }
    let result = match cli.verb {
        Verb::Gen => gen(&cli),
        Verb::Train => train(&cli),
        Verb::Run => run(&cli),
        Verb::Oracle => oracle(&cli),
        Verb::Sweep => sweep(&cli),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
