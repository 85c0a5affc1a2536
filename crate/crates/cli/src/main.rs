use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use stftsynth::benchmark::{
    self, build_features, load_features, run_ablation, run_cell, run_matrix, synth_data, validation_set, Cell,
    CellStatus, ExperimentConfig, Profile, Workspace,
};
use stftsynth::figure::{render_grid, Panel};
use stftsynth::metrics::{evaluate, extractor_by_id, PairingPolicy};
use stftsynth::models::Variant;
use stftsynth::stft::save_spectrogram;
use stftsynth::synthetic::EventClass;
use stftsynth::trainer::{generate, Checkpoint, RunDir, CHECKPOINT_META};
use stftsynth::{Error, Result};

#[derive(Parser)]
#[command(name = "stftsynth", version, about = "GAN spectrogram synthesis benchmark")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML experiment config overlaid on the profile defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    profile: Option<Profile>,
    /// Root of corpus, features, runs and reports.
    #[arg(long, global = true, default_value = "work")]
    workdir: PathBuf,
    /// Overrides train.max_epochs.
    #[arg(long, global = true)]
    epochs: Option<usize>,
    /// Overrides eval.n_generated.
    #[arg(long, global = true)]
    n_generated: Option<usize>,
    /// Overrides eval.pairing.
    #[arg(long, global = true)]
    pairing: Option<PairingPolicy>,
    /// Overrides eval.extractor.
    #[arg(long, global = true)]
    extractor: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Cut events out of labelled recordings (PATH=CLASS).
    Extract {
        #[arg(long = "recording", required = true, value_parser = parse_recording)]
        recordings: Vec<(PathBuf, EventClass)>,
    },
    /// Write a synthetic corpus.
    SynthData,
    /// Compute spectrograms of the corpus for every configured window.
    Features,
    /// Train and evaluate one cell.
    Train {
        #[arg(long)]
        variant: Variant,
        #[arg(long)]
        class: EventClass,
        #[arg(long)]
        window: usize,
        /// Defaults to the cell's directory under the workdir.
        #[arg(long)]
        run_dir: Option<PathBuf>,
    },
    /// Sample spectrograms from a checkpoint or run directory.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 8)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint against the validation split of one class.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        class: EventClass,
    },
    /// Run the variant x class x window matrix.
    Matrix,
    /// Run the four-way block ablation.
    Ablate,
    /// Write tables and figures from finished results.
    Report,
}

fn parse_recording(s: &str) -> std::result::Result<(PathBuf, EventClass), String> {
    let (path, class) = s.rsplit_once('=').ok_or("expected PATH=CLASS")?;
    Ok((PathBuf::from(path), class.parse().map_err(|e: Error| e.to_string())?))
}

fn load_config(g: &Global) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(g.config.as_deref(), g.profile, g.seed)?;
    if let Some(e) = g.epochs {
        cfg.train.max_epochs = e;
    }
    if let Some(n) = g.n_generated {
        cfg.eval.n_generated = n;
    }
    if let Some(p) = g.pairing {
        cfg.eval.pairing = p;
    }
    if let Some(x) = &g.extractor {
        cfg.eval.extractor = x.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

/// A checkpoint directory, or the newest checkpoint of a run directory.
fn resolve_checkpoint(path: &Path) -> Result<PathBuf> {
    if path.join(CHECKPOINT_META).is_file() {
        return Ok(path.to_path_buf());
    }
    RunDir { root: path.to_path_buf() }
        .latest_checkpoint()
        .ok_or_else(|| Error::config(format!("{} holds no checkpoint; run `stftsynth train` first", path.display())))
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::input(e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.global)?;
    let ws = Workspace::new(&cli.global.workdir);
    match cli.command {
        Command::Extract { recordings } => {
            let rows = benchmark::extract(&ws, &recordings, &cfg)?;
            println!("extracted {} events into {}", rows.len(), ws.corpus_dir().display());
        }
        Command::SynthData => {
            let rows = synth_data(&ws, &cfg)?;
            println!("wrote {} events to {}", rows.len(), ws.corpus_dir().display());
        }
        Command::Features => {
            let set = build_features(&ws, &cfg)?;
            println!("wrote {} spectrograms to {}", set.len(), ws.features_dir().display());
        }
        Command::Train { variant, class, window, run_dir } => {
            let set = load_features(&ws)?;
            let cell = Cell { variant, class, window_size: window, seed: cfg.seed };
            let dir = run_dir.unwrap_or_else(|| ws.cell_dir(&cell));
            let (res, status) = run_cell(&dir, &set, &cell, &cfg)?;
            if status == CellStatus::Cached {
                eprintln!("{} already finished; showing stored result", dir.display());
            }
            print_json(&res)?;
        }
        Command::Generate { checkpoint, n, out } => {
            let ck = resolve_checkpoint(&checkpoint)?;
            let samples = generate(&ck, n, cfg.seed)?;
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            for (i, s) in samples.iter().enumerate() {
                save_spectrogram(&out.join(format!("sample_{i:04}.stt")), s)?;
            }
            if !samples.is_empty() {
                let panels: Vec<Panel> = samples
                    .iter()
                    .enumerate()
                    .map(|(i, s)| Panel { title: format!("gen {}", i + 1), values: s.values.clone() })
                    .collect();
                let (canvas, _) = render_grid(&panels, benchmark::axis_extent())?;
                canvas.save_png(&out.join("samples.png"))?;
            }
            println!("wrote {} samples to {}", samples.len(), out.display());
        }
        Command::Evaluate { checkpoint, class } => {
            let ck = resolve_checkpoint(&checkpoint)?;
            let meta = Checkpoint::open(&ck)?.meta;
            let window = meta
                .window_size
                .ok_or_else(|| Error::config("checkpoint does not record its window size"))?;
            let set = load_features(&ws)?;
            let real = validation_set(&set, class, window)?;
            let generated: Vec<_> = generate(&ck, cfg.eval.n_generated, cfg.seed)?.into_iter().map(|s| s.values).collect();
            let extractor = extractor_by_id(&cfg.eval.extractor)?;
            print_json(&evaluate(&generated, &real, cfg.eval.pairing, extractor.as_ref())?)?;
        }
        Command::Matrix => {
            let summary = run_matrix(&ws, &cfg, |cell, status, r| {
                let tag = if status == CellStatus::Cached { "cached" } else { "trained" };
                eprintln!(
                    "{tag:>7} {:<40} ssim {:.4} psnr {:.2} fid {:.4}",
                    cell.key(),
                    r.report.ssim,
                    r.report.psnr,
                    r.report.fid
                );
            })?;
            println!(
                "{} cells ({} trained, {} cached); results in {}",
                summary.results.len(),
                summary.trained,
                summary.cached,
                ws.results_path().display()
            );
        }
        Command::Ablate => {
            for r in run_ablation(&ws, &cfg)? {
                println!(
                    "{:<16} {:<20} params {:>7} ssim {:.4} psnr {:.2} fid {:.4} tte {:.3}s",
                    r.label, r.variant, r.generator_parameters, r.ssim, r.psnr, r.fid, r.tte_seconds
                );
            }
        }
        Command::Report => {
            let summary = benchmark::report(&ws, &cfg)?;
            for n in &summary.notices {
                eprintln!("note: {n}");
            }
            println!("wrote {} with {} figures", summary.path.display(), summary.figures.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
