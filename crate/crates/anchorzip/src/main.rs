use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anchorzip::error::{AppError, AppResult};
use anchorzip::formats::{load_cloud, save_cloud, Format};
use anchorzip::profile::load_profile;
use anchorzip::synth::{generate, FeatureModel, SynthSpec};
use anchorzip::{report, selftest};
use anchorzip_core::codec::{deserialize_model, fit_prepared, prepare, serialize_model};
use anchorzip_core::naap::prune_and_merge;
use anchorzip_core::{codec, rate_report};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "anchorzip", version, about = "Anchor-cloud codec with hierarchical geometry-guided context models")]
struct Cli {
    /// Worker threads (0 = all cores). Outputs do not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Io {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelKind {
    Iid,
    Smooth,
    Clustered,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic anchor cloud (.csv or native .lgac).
    Generate {
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 1000)]
        count: usize,
        #[arg(long, value_enum, default_value_t = ModelKind::Smooth)]
        model: ModelKind,
        #[arg(long, default_value_t = 16)]
        channels: usize,
        #[arg(long, default_value_t = 4)]
        offsets: usize,
        /// Smooth-field correlation length, relative to the box size.
        #[arg(long, default_value_t = 0.25)]
        length_scale: f64,
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
        #[arg(long, default_value_t = 8)]
        clusters: usize,
        /// Cluster position spread, relative to the box size.
        #[arg(long, default_value_t = 0.05)]
        spread: f64,
        #[arg(long)]
        voxel: Option<f32>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Prune low-importance anchors and merge them into their neighbours.
    Prune {
        #[command(flatten)]
        io: Io,
        #[arg(long)]
        profile: Option<PathBuf>,
        /// Importance threshold; overrides `prune.tau` in the profile.
        #[arg(long)]
        tau: Option<f64>,
        /// Per-anchor importance table (TSV).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Fit a context model for a cloud and save it.
    Fit {
        #[command(flatten)]
        io: Io,
        #[arg(long)]
        profile: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Per-iteration rate trace (TSV).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Compress a cloud into a .lghc stream.
    Encode {
        #[command(flatten)]
        io: Io,
        #[arg(long)]
        profile: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Use a saved model instead of fitting one.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Run pruning before coding.
        #[arg(long)]
        prune: bool,
        /// Importance threshold for --prune; overrides `prune.tau`.
        #[arg(long)]
        tau: Option<f64>,
        /// Rate report; JSON when the path ends in .json, key=value otherwise.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Decompress a .lghc stream into a cloud file.
    Decode {
        #[command(flatten)]
        io: Io,
    },
    /// Print the rate breakdown of a .lghc stream.
    Stats {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run the built-in oracle checks.
    Selftest {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> AppResult<()> {
    fs::write(path, bytes).map_err(|e| AppError::io(path, e))
}

fn emit_rate_report(r: &codec::RateReport, path: Option<&Path>) -> AppResult<()> {
    match path {
        Some(p) => {
            let json = p.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
            write(p, report::render(r, json))
        }
        None => {
            print!("{}", r.to_key_values());
            Ok(())
        }
    }
}

fn run(command: Command) -> AppResult<()> {
    match command {
        Command::Generate { output, count, model, channels, offsets, length_scale, noise, clusters, spread, voxel, seed } => {
            let features = match model {
                ModelKind::Iid => FeatureModel::IidGaussian,
                ModelKind::Smooth => FeatureModel::SmoothField { length_scale, noise },
                ModelKind::Clustered => FeatureModel::Clustered { clusters, spread },
            };
            let spec = SynthSpec { channels, offsets, base_voxel_size: voxel, ..SynthSpec::new(count, features, seed) };
            save_cloud(&generate(&spec)?, &output)
        }
        Command::Prune { io, profile, tau, report } => {
            let config = load_profile(profile.as_deref())?.prune_config(tau)?;
            let cloud = load_cloud(&io.input, Format::from_path(&io.input))?;
            let (pruned, rep) = prune_and_merge(&cloud, &config)?;
            eprintln!("pruned {} of {} anchors", rep.pruned_count(), cloud.len());
            if let Some(p) = report {
                write(&p, rep.to_tsv())?;
            }
            save_cloud(&pruned, &io.output)
        }
        Command::Fit { io, profile, seed, report } => {
            let profile = load_profile(profile.as_deref())?;
            let cloud = load_cloud(&io.input, Format::from_path(&io.input))?;
            let prepared = prepare(&cloud, &profile.codec)?;
            let (params, fit) = fit_prepared(&prepared, seed)?;
            if let (Some(p), Some(fit)) = (report, &fit) {
                let mut s = String::from("iteration\tbits\tobjective\n");
                for (t, (b, o)) in fit.trace.iter().zip(&fit.objective_trace).enumerate() {
                    s.push_str(&format!("{t}\t{b:.3}\t{o:.3}\n"));
                }
                write(&p, s)?;
            }
            if let Some(fit) = &fit {
                eprintln!(
                    "fit: {:.1} -> {:.1} estimated bits (best iteration {})",
                    fit.trace[0], fit.trace[fit.best_iteration], fit.best_iteration
                );
            }
            write(&io.output, serialize_model(&params))
        }
        Command::Encode { io, profile, seed, model, prune, tau, report } => {
            let profile = load_profile(profile.as_deref())?;
            let mut cloud = load_cloud(&io.input, Format::from_path(&io.input))?;
            if prune {
                let (pruned, rep) = prune_and_merge(&cloud, &profile.prune_config(tau)?)?;
                eprintln!("pruned {} of {} anchors", rep.pruned_count(), cloud.len());
                cloud = pruned;
            }
            let prepared = prepare(&cloud, &profile.codec)?;
            let params = match model {
                Some(p) => deserialize_model(&fs::read(&p).map_err(|e| AppError::io(&p, e))?)?,
                None => fit_prepared(&prepared, seed)?.0,
            };
            let out = codec::encode_prepared(&prepared, &params)?;
            write(&io.output, &out.bytes)?;
            emit_rate_report(&out.report, report.as_deref())
        }
        Command::Decode { io } => {
            let bytes = fs::read(&io.input).map_err(|e| AppError::io(&io.input, e))?;
            save_cloud(&codec::decode(&bytes)?, &io.output)
        }
        Command::Stats { input, report } => {
            let bytes = fs::read(&input).map_err(|e| AppError::io(&input, e))?;
            emit_rate_report(&rate_report(&bytes)?, report.as_deref())
        }
        Command::Selftest { seed } => {
            let results = selftest::run_all(seed);
            let mut failed = Vec::new();
            for r in &results {
                println!("{} {} ({} cases)", if r.passed() { "PASS" } else { "FAIL" }, r.name, r.cases);
                for f in &r.failures {
                    println!("  {f}");
                }
                if !r.passed() {
                    failed.push(r.name);
                }
            }
            if failed.is_empty() {
                Ok(())
            } else {
                Err(AppError::Selftest(failed.join(", ")))
            }
        }
    }
}
