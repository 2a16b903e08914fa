//! Batch front end: `enhance` runs the per-utterance pipeline over WAV
//! inputs, `simulate` writes a synthetic scene with ground truth, `evaluate`
//! scores enhanced output against a scene, and `dedup` filters duplicated
//! words from CTM hypotheses.
//!
//! Exit codes: 0 success, 1 per-item failures occurred, 2 invalid invocation.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gss_core::hypo::{deduplicate, read_ctm, write_ctm};
use gss_core::pipeline::{
    run_enhance_files, run_evaluate, run_simulate, PipelineConfig, ReferencePolicy,
};
use gss_core::scene::SceneConfig;
use gss_core::{ContextConfig, GssConfig};

#[derive(Parser)]
#[command(name = "gss", version, about = "Guided source separation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Enhance annotated utterances from one or more microphone arrays.
    Enhance(EnhanceArgs),
    /// Generate a synthetic scene with ground truth files.
    Simulate(SimulateArgs),
    /// Score enhanced utterances against a simulated scene.
    Evaluate(EvaluateArgs),
    /// Remove duplicated words across overlapping utterances in a CTM file.
    Dedup(DedupArgs),
}

#[derive(Args)]
struct EnhanceArgs {
    /// Pipeline config file (JSON mirroring the pipeline fields).
    #[arg(long)]
    config: Option<PathBuf>,
    /// One array per flag; colon-join mono files to form a multi-file array.
    #[arg(long = "input", required = true)]
    inputs: Vec<String>,
    /// Utterance annotation file (JSON array).
    #[arg(long)]
    annotations: PathBuf,
    /// Alignment file for activity refinement (second pass).
    #[arg(long)]
    alignment: Option<PathBuf>,
    /// Comma-separated indices of arrays to stack (default: all).
    #[arg(long)]
    arrays: Option<String>,
    /// Context seconds on each side of an utterance.
    #[arg(long)]
    context_seconds: Option<f64>,
    /// Include context frames in beamformer statistics: on|off.
    #[arg(long)]
    bf_context: Option<String>,
    /// Write per-utterance mask files next to the WAVs.
    #[arg(long)]
    export_masks: bool,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "enhanced")]
    out: PathBuf,
    /// Disable WPE dereverberation.
    #[arg(long)]
    no_wpe: bool,
    #[arg(long)]
    wpe_taps: Option<usize>,
    #[arg(long)]
    wpe_delay: Option<usize>,
    #[arg(long)]
    wpe_iterations: Option<usize>,
    /// Disable mask estimation and beamforming (reference channel output).
    #[arg(long)]
    no_gss: bool,
    #[arg(long)]
    gss_iterations: Option<usize>,
    /// Diagonal loading for the MVDR distortion covariance.
    #[arg(long)]
    loading: Option<f64>,
    /// Reference channel policy: "max_snr" or a channel index.
    #[arg(long)]
    reference: Option<String>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Scene config file (JSON mirroring the scene fields).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    enhanced: PathBuf,
}

#[derive(Args)]
struct DedupArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Temporal-overlap fraction of the shorter word required for a match.
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
}

fn invalid(msg: String) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(2)
}

fn failure(msg: String) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(1)
}

fn parse_bf_context(v: &str) -> Result<bool, String> {
    match v {
        "on" => Ok(true),
        "off" => Ok(false),
        other => Err(format!("--bf-context must be on or off, got {other:?}")),
    }
}

fn enhance(args: EnhanceArgs) -> ExitCode {
    let mut cfg = match &args.config {
        Some(path) => match PipelineConfig::from_json_file(path) {
            Ok(c) => c,
            Err(e) => return invalid(e.to_string()),
        },
        None => PipelineConfig::default(),
    };
    if let Some(list) = &args.arrays {
        let parsed: Result<Vec<usize>, _> =
            list.split(',').map(|s| s.trim().parse::<usize>()).collect();
        match parsed {
            Ok(v) => cfg.arrays = Some(v),
            Err(_) => return invalid(format!("bad --arrays list {list:?}")),
        }
    }
    if let Some(secs) = args.context_seconds {
        if secs < 0.0 {
            return invalid(format!("--context-seconds must be >= 0, got {secs}"));
        }
        cfg.context = ContextConfig {
            left: secs,
            right: secs,
        };
    }
    if let Some(v) = &args.bf_context {
        match parse_bf_context(v) {
            Ok(b) => cfg.bf_context = b,
            Err(e) => return invalid(e),
        }
    }
    if args.export_masks {
        cfg.export_masks = true;
    }
    if let Some(t) = args.threads {
        cfg.threads = t;
    }
    cfg.output_dir = args.out.clone();
    if args.no_wpe {
        cfg.wpe = None;
    } else {
        let mut wpe = cfg.wpe.unwrap_or_default();
        if let Some(t) = args.wpe_taps {
            wpe.taps = t;
        }
        if let Some(d) = args.wpe_delay {
            wpe.delay = d;
        }
        if let Some(i) = args.wpe_iterations {
            wpe.iterations = i;
        }
        cfg.wpe = Some(wpe);
    }
    if args.no_gss {
        cfg.gss = None;
    } else if let Some(i) = args.gss_iterations {
        let mut gss = cfg.gss.unwrap_or_default();
        gss.iterations = i;
        cfg.gss = Some(gss);
    } else if cfg.gss.is_none() {
        cfg.gss = Some(GssConfig::default());
    }
    if let Some(l) = args.loading {
        cfg.beamformer_loading = l;
    }
    if let Some(r) = &args.reference {
        cfg.reference_policy = if r == "max_snr" {
            ReferencePolicy::MaxSnr
        } else {
            match r.parse::<usize>() {
                Ok(c) => ReferencePolicy::Fixed(c),
                Err(_) => {
                    return invalid(format!(
                        "--reference must be max_snr or a channel index, got {r:?}"
                    ))
                }
            }
        };
    }

    let arrays: Vec<Vec<PathBuf>> = args
        .inputs
        .iter()
        .map(|spec| spec.split(':').map(PathBuf::from).collect())
        .collect();
    match run_enhance_files(&cfg, &arrays, &args.annotations, args.alignment.as_deref()) {
        Ok(summary) => {
            for o in &summary.outcomes {
                match (&o.path, &o.error) {
                    (Some(p), _) => {
                        println!("{}/{} -> {}", o.speaker_id, o.utterance_id, p.display())
                    }
                    (None, Some(e)) => {
                        eprintln!("{}/{} failed: {e}", o.speaker_id, o.utterance_id)
                    }
                    _ => {}
                }
            }
            if summary.failed > 0 {
                eprintln!(
                    "{} of {} utterances failed",
                    summary.failed,
                    summary.outcomes.len()
                );
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => failure(e.to_string()),
    }
}

fn simulate(args: SimulateArgs) -> ExitCode {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = match std::fs::read_to_string(path) {
                Ok(t) => t,
                Err(e) => return invalid(format!("{}: {e}", path.display())),
            };
            match serde_json::from_str::<SceneConfig>(&text) {
                Ok(c) => c,
                Err(e) => return invalid(format!("{}: {e}", path.display())),
            }
        }
        None => SceneConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Err(e) = cfg.validate() {
        return invalid(e.to_string());
    }
    match run_simulate(&cfg, &args.out) {
        Ok(manifest) => {
            println!(
                "scene written to {} ({} files, {} speakers)",
                args.out.display(),
                manifest.files.len(),
                manifest.speakers.len()
            );
            ExitCode::SUCCESS
        }
        Err(e) => failure(e.to_string()),
    }
}

fn evaluate(args: EvaluateArgs) -> ExitCode {
    match run_evaluate(&args.scene, &args.enhanced) {
        Ok(report) => {
            print!("{}", report.to_tsv());
            ExitCode::SUCCESS
        }
        Err(e) => failure(e.to_string()),
    }
}

fn dedup(args: DedupArgs) -> ExitCode {
    if !(0.0..=1.0).contains(&args.threshold) {
        return invalid(format!(
            "--threshold must be in [0, 1], got {}",
            args.threshold
        ));
    }
    let words = match read_ctm(&args.input) {
        Ok(w) => w,
        Err(e) => return failure(e.to_string()),
    };
    let kept = deduplicate(&words, args.threshold);
    let removed = words.len() - kept.len();
    match write_ctm(&args.output, &kept) {
        Ok(()) => {
            println!("kept {} words, removed {removed}", kept.len());
            ExitCode::SUCCESS
        }
        Err(e) => failure(e.to_string()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Enhance(args) => enhance(args),
        Command::Simulate(args) => simulate(args),
        Command::Evaluate(args) => evaluate(args),
        Command::Dedup(args) => dedup(args),
    }
}
