use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use driftaudit_core::config::{AuditConfig, SourceKind};
use driftaudit_core::curation::{auto_select, rank_drift, restrict, SubsetSpec};
use driftaudit_core::drift::drift_tables;
use driftaudit_core::ingest::{ingest_dir, store};
use driftaudit_core::probes::run_probes;
use driftaudit_core::report::{
    assess_leakage, emit_drift, emit_probes, emit_schedule, load_dataset, probe_view, render_summary, run_audit_on,
    ArtifactWriter, AuditVerdict, CurationReport, LeakageStatus, EXIT_CLEAN, EXIT_ERROR, EXIT_LEAKAGE,
};
use driftaudit_core::schedule::audit_schedule;
use driftaudit_core::synth::generate_dataset;

#[derive(Parser, Debug)]
#[command(name = "driftaudit", version, about = "Audit gas-sensor recordings for drift-induced label leakage")]
struct Cli {
    /// JSON configuration file.
    #[arg(long, global = true, env = "DRIFTAUDIT_CONFIG")]
    config: Option<PathBuf>,
    /// Seed for the generator and the train/test splits.
    #[arg(long, global = true, env = "DRIFTAUDIT_SEED")]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "DRIFTAUDIT_THREADS")]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, env = "DRIFTAUDIT_OUT")]
    out: Option<PathBuf>,
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct DataArgs {
    /// Dataset location; overrides `dataset.path`.
    #[arg(long)]
    data: Option<PathBuf>,
    /// How to read the dataset; overrides `dataset.kind`.
    #[arg(long, value_enum)]
    kind: Option<Kind>,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum Kind {
    Canonical,
    Source,
    Synth,
}

#[derive(ValueEnum, Debug, Clone, Copy, Default)]
enum Preset {
    #[default]
    Auto,
    PaperDefault,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse raw recordings into the canonical store.
    Ingest {
        #[arg(long)]
        source: PathBuf,
        /// Store directory (default: <out>/canonical).
        #[arg(long)]
        dest: Option<PathBuf>,
    },
    /// Write a synthetic dataset with known drift.
    Synth {
        /// Store directory (default: <out>/synthetic).
        #[arg(long)]
        dest: Option<PathBuf>,
    },
    /// Detect sessions and test gas/session confounding.
    AuditSchedule(DataArgs),
    /// Baseline coefficient-of-variation tables.
    DriftCv(DataArgs),
    /// Windowed classification and PCA snapshots.
    Probe {
        #[command(flatten)]
        data: DataArgs,
        /// Also emit curves without feature standardization.
        #[arg(long)]
        sensitivity: bool,
    },
    /// Propose a minimally drift-affected subset.
    Curate {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_enum, default_value = "auto")]
        preset: Preset,
    },
    /// Run every stage and write the verdict.
    Audit {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        sensitivity: bool,
    },
    /// Print a summary of a written verdict.
    Report {
        /// Verdict file (default: <out>/audit_verdict.json).
        #[arg(long)]
        verdict: Option<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> Result<AuditConfig> {
    let mut cfg = match &cli.config {
        Some(p) => AuditConfig::load(p)?,
        None => AuditConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.set_seed(s);
    }
    if let Some(o) = &cli.out {
        cfg.output_dir = o.clone();
    }
    Ok(cfg)
}

fn apply_data(cfg: &mut AuditConfig, data: &DataArgs) {
    if let Some(p) = &data.data {
        cfg.dataset.path = Some(p.clone());
    }
    if let Some(k) = data.kind {
        cfg.dataset.kind = match k {
            Kind::Canonical => SourceKind::Canonical,
            Kind::Source => SourceKind::Source,
            Kind::Synth => SourceKind::Synth,
        };
    }
}

fn run(cli: Cli) -> Result<i32> {
    let mut cfg = load_config(&cli)?;
    let out = cfg.output_dir.clone();
    match cli.command {
        Command::Ingest { source, dest } => {
            let dest = dest.unwrap_or_else(|| out.join("canonical"));
            let dataset = ingest_dir(&source, &cfg.adapter.compile()?)?;
            store::write_dataset(&dest, &dataset)?;
            println!(
                "ingested {} trials into {} ({} files excluded)",
                dataset.len(),
                dest.display(),
                dataset.manifest.excluded.len()
            );
            for (src, reason) in &dataset.manifest.excluded {
                log::warn!("excluded {src}: {reason}");
            }
            Ok(EXIT_CLEAN)
        }
        Command::Synth { dest } => {
            let dest = dest.unwrap_or_else(|| out.join("synthetic"));
            cfg.synth.validate()?;
            let (dataset, trace) = generate_dataset(&cfg.synth, &dest)?;
            println!("wrote {} synthetic trials to {}", dataset.len(), dest.display());
            if trace.floored_samples > 0 {
                log::warn!("{} samples floored at 0 kOhm", trace.floored_samples);
            }
            Ok(EXIT_CLEAN)
        }
        Command::AuditSchedule(data) => {
            apply_data(&mut cfg, &data);
            cfg.validate()?;
            let dataset = load_dataset(&cfg)?;
            let (_, report) = audit_schedule(
                &dataset.manifest.trials,
                cfg.schedule.gap_threshold_s,
                &cfg.schedule.thresholds,
            )?;
            let mut w = ArtifactWriter::new(&out)?;
            emit_schedule(&mut w, &report)?;
            w.finish()?;
            println!(
                "{} sessions, NMI {:.3}, mean purity {:.3}: {}",
                report.stats.n_sessions,
                report.stats.nmi,
                report.stats.mean_purity,
                serde_json::to_value(report.stats.verdict)?.as_str().unwrap_or_default()
            );
            Ok(EXIT_CLEAN)
        }
        Command::DriftCv(data) => {
            apply_data(&mut cfg, &data);
            cfg.validate()?;
            let dataset = load_dataset(&cfg)?;
            let tables = drift_tables(&dataset, &cfg.drift)?;
            let mut w = ArtifactWriter::new(&out)?;
            emit_drift(&mut w, &dataset, &tables)?;
            w.finish()?;
            for r in &tables.by_sensor {
                println!("{:?}: cv_longterm {:.5}, cv_shortterm {:.5}", r.key, r.cv_longterm, r.cv_shortterm);
            }
            Ok(EXIT_CLEAN)
        }
        Command::Probe { data, sensitivity } => {
            apply_data(&mut cfg, &data);
            cfg.sensitivity |= sensitivity;
            cfg.validate()?;
            let dataset = load_dataset(&cfg)?;
            let view = probe_view(&dataset, &cfg);
            let results = run_probes(&view, &cfg.probe, cfg.sensitivity)?;
            let mut w = ArtifactWriter::new(&out)?;
            emit_probes(&mut w, &results, &cfg)?;
            w.finish()?;
            let t_release = view.trials[0].protocol.t_release_s;
            for curve in [&results.raw, &results.compensated] {
                let f = assess_leakage(curve, t_release, cfg.probe.window.width_s, cfg.audit.leakage_sigma);
                println!(
                    "{} features: pre-release leakage {}",
                    if curve.compensated { "compensated" } else { "raw" },
                    if f.status == LeakageStatus::Present { "present" } else { "none" }
                );
            }
            Ok(EXIT_CLEAN)
        }
        Command::Curate { data, preset } => {
            apply_data(&mut cfg, &data);
            cfg.validate()?;
            let dataset = load_dataset(&cfg)?;
            let tables = drift_tables(&dataset, &cfg.drift)?;
            let subset = match preset {
                Preset::Auto => auto_select(&dataset, &tables, cfg.schedule.gap_threshold_s, &cfg.curation)?,
                Preset::PaperDefault => SubsetSpec::paper_default(),
            };
            let n = restrict(&dataset, &subset)?.trials.len();
            let mut w = ArtifactWriter::new(&out)?;
            w.write_json(
                "subset_spec.json",
                &CurationReport {
                    subset: subset.clone(),
                    ranking: rank_drift(&tables),
                },
            )?;
            w.finish()?;
            println!(
                "subset: gases {:?}, location {}, board {}, sensors {:?} ({n} trials)",
                subset.gases, subset.location_index, subset.board_index, subset.sensor_columns
            );
            Ok(EXIT_CLEAN)
        }
        Command::Audit { data, sensitivity } => {
            apply_data(&mut cfg, &data);
            cfg.sensitivity |= sensitivity;
            cfg.validate()?;
            let dataset = load_dataset(&cfg)?;
            let outcome = run_audit_on(&dataset, &cfg)?;
            print!("{}", render_summary(&outcome.verdict));
            Ok(outcome.verdict.exit_code)
        }
        Command::Report { verdict } => {
            let path = verdict.unwrap_or_else(|| out.join("audit_verdict.json"));
            let v = read_verdict(&path)?;
            print!("{}", render_summary(&v));
            Ok(if v.leakage_detected() { EXIT_LEAKAGE } else { EXIT_CLEAN })
        }
    }
}

fn read_verdict(path: &Path) -> Result<AuditVerdict> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(EXIT_ERROR as u8);
        }
    }
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR as u8)
        }
    }
}
