use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::{DateTime, Utc};
use clap::{Args, Parser, Subcommand};

use jackup::ingest::{write_interchange, AnalysisWindow};
use jackup::nmea::{decode_reader, DecodeStats, DecoderConfig};
use jackup::pipeline::{
    read_segments, run_analyze, stats_from_segments, write_atomic, FarmConfig, Overrides,
};
use jackup::synth::{generate_campaign, CampaignScript, GroundTruthFile};
use jackup::{Error, Result};

#[derive(Parser)]
#[command(
    name = "jackup",
    version,
    about = "Installation campaign analysis from jackup vessel AIS tracks"
)]
struct Cli {
    /// More log output (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decode raw AIVDM files into the interchange CSV.
    Decode {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Interchange CSV to write.
        #[arg(short, long)]
        out: PathBuf,
        /// Abort on the first framing or checksum failure.
        #[arg(long)]
        strict: bool,
    },
    /// Run the full analysis for one farm.
    Analyze {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
    /// Generate a synthetic campaign with ground truth.
    Synth {
        /// Campaign script (JSON). Missing fields take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Recompute the statistics from an exported segments CSV.
    Stats {
        #[arg(long)]
        segments: PathBuf,
        /// Farm config supplying the turbine count, window and duration filter.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        n_turbines: Option<usize>,
        #[arg(long)]
        window_start: Option<DateTime<Utc>>,
        #[arg(long)]
        window_end: Option<DateTime<Utc>>,
        #[arg(long)]
        min_duration_h: Option<f64>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

#[derive(Args)]
struct OverrideArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    radius_m: Option<f64>,
    #[arg(long)]
    extra_clusters: Option<usize>,
    #[arg(long)]
    min_points: Option<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    strict: bool,
}

fn open(path: &Path) -> Result<BufReader<std::fs::File>> {
    std::fs::File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

fn decode(inputs: &[PathBuf], out: &Path, strict: bool) -> Result<()> {
    let mut records = Vec::new();
    let mut stats = DecodeStats::default();
    for p in inputs {
        let (recs, s) = decode_reader(
            open(p)?,
            DecoderConfig {
                strict,
                ..DecoderConfig::default()
            },
        )?;
        records.extend(recs);
        stats.merge(&s);
    }
    let mut buf = Vec::new();
    write_interchange(&records, &mut buf)?;
    write_atomic(out, &buf)?;
    println!("{}", serde_json::to_string_pretty(&stats)?);
    Ok(())
}

fn analyze(config: &Path, o: OverrideArgs) -> Result<()> {
    let mut cfg = FarmConfig::load(config)?;
    cfg.apply(&Overrides {
        seed: o.seed,
        radius_m: o.radius_m,
        extra_clusters: o.extra_clusters,
        min_points: o.min_points,
        out_dir: o.out_dir,
        strict: o.strict,
    });
    let a = run_analyze(&cfg)?;
    print!("{}", jackup::pipeline::summary_text(&a.report));
    println!("written to {}", cfg.out_path().display());
    Ok(())
}

fn synth(config: Option<&Path>, seed: Option<u64>, out_dir: &Path) -> Result<()> {
    let mut script: CampaignScript = match config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => CampaignScript::default(),
    };
    if let Some(s) = seed {
        script.seed = s;
    }
    let (traj, truth) = generate_campaign(&script)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut csv = Vec::new();
    write_interchange(&traj.records, &mut csv)?;
    write_atomic(&out_dir.join("campaign.csv"), &csv)?;
    write_atomic(
        &out_dir.join("ground_truth.json"),
        &serde_json::to_vec_pretty(&GroundTruthFile::from(&truth))?,
    )?;
    let mut farm = FarmConfig::for_campaign(&script, &truth, PathBuf::from("campaign.csv"));
    farm.out_dir = PathBuf::from("report");
    write_atomic(
        &out_dir.join("farm.json"),
        &serde_json::to_vec_pretty(&farm)?,
    )?;
    println!(
        "{} fixes ({} deleted), {} sites, {} port calls -> {}",
        traj.len(),
        truth.samples_deleted,
        truth.sites.len(),
        truth.port_calls.len(),
        out_dir.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn stats(
    segments: &Path,
    config: Option<&Path>,
    n_turbines: Option<usize>,
    window_start: Option<DateTime<Utc>>,
    window_end: Option<DateTime<Utc>>,
    min_duration_h: Option<f64>,
    out_dir: Option<&Path>,
) -> Result<()> {
    let cfg = config.map(FarmConfig::load).transpose()?;
    let n = n_turbines
        .or(cfg.as_ref().map(|c| c.n_turbines))
        .ok_or_else(|| Error::Config("--n-turbines or --config is required".into()))?;
    let window = match (window_start, window_end) {
        (Some(s), Some(e)) => Some(AnalysisWindow::new(s, e)?),
        (None, None) => cfg.as_ref().map(|c| c.window),
        _ => {
            return Err(Error::Config(
                "give both --window-start and --window-end".into(),
            ))
        }
    };
    let min_h = min_duration_h
        .or(cfg.as_ref().map(|c| c.min_segment_duration_h))
        .unwrap_or(1.0);
    let rows = read_segments(open(segments)?)?;
    let s = stats_from_segments(&rows, n, min_h, window.as_ref())?;
    let json = serde_json::to_vec_pretty(&s)?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_atomic(&dir.join("stats.json"), &json)?;
    }
    println!("{}", String::from_utf8_lossy(&json));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match cli.command {
        Command::Decode {
            inputs,
            out,
            strict,
        } => decode(&inputs, &out, strict),
        Command::Analyze { config, overrides } => analyze(&config, overrides),
        Command::Synth {
            config,
            seed,
            out_dir,
        } => synth(config.as_deref(), seed, &out_dir),
        Command::Stats {
            segments,
            config,
            n_turbines,
            window_start,
            window_end,
            min_duration_h,
            out_dir,
        } => stats(
            &segments,
            config.as_deref(),
            n_turbines,
            window_start,
            window_end,
            min_duration_h,
            out_dir.as_deref(),
        ),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 3 } else { 2 })
        }
    }
}
