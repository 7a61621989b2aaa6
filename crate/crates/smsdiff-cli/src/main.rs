//! Command-line front end: dataset preparation, training, timbre-transfer
//! rendering, gradient verification, and figure export.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{ArgAction, Parser, Subcommand};

use smsdiff::audio::FrameSeries;
use smsdiff::config::{echo_config, load_train_config};
use smsdiff::dsp::stft;
use smsdiff::features::{
    extract_features, precondition, sidecar_path, write_sidecar, PreconditionOptions,
};
use smsdiff::model::decode;
use smsdiff::synth::render;
use smsdiff::trainer::{make_dataset, Checkpoint};
use smsdiff::wav::{read_wav, write_wav};
use smsdiff::{Error, Result, CONTROL_RATE};

/// Examples produced by `prepare` are this long; training configs may use
/// shorter windows, which slice further at load time.
const PREPARE_EXAMPLE_SECONDS: f64 = 4.0;

/// Exponential smoothing weight for loss-curve summaries.
const SMOOTH_ALPHA: f64 = 0.05;

const SPECTROGRAM_FFT: usize = 2048;
const SPECTROGRAM_HOP: usize = 512;
const SPECTROGRAM_DB_MIN: f64 = -140.0;

#[derive(Parser)]
#[command(
    name = "smsdiff",
    version,
    about = "Differentiable spectral-modeling synthesis toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cut a directory of WAV files into four-second training examples
    /// with plain-text feature sidecars and a stats.txt summary.
    Prepare {
        /// Directory of source WAV files.
        #[arg(long, value_name = "DIR")]
        input: PathBuf,
        /// Directory to write examples, sidecars, and stats.txt into.
        #[arg(long, value_name = "DIR")]
        output: PathBuf,
        /// Also write 30-coefficient MFCC files per example.
        #[arg(long, action = ArgAction::SetTrue)]
        with_mfcc: bool,
    },
    /// Train a decoder on a prepared dataset directory.
    Train {
        /// Configuration file (key = value lines, `include` supported).
        #[arg(long, value_name = "FILE")]
        config: PathBuf,
        /// Prepared dataset directory.
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        /// Output directory for checkpoints, losses.csv, resolved.conf.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Render an input recording through a trained checkpoint.
    Run {
        /// Trained checkpoint file.
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        /// Input WAV to transform.
        #[arg(long, value_name = "WAV")]
        input: PathBuf,
        /// Output WAV path; preconditioned features land next to it as CSV.
        #[arg(long, value_name = "WAV")]
        out: PathBuf,
        /// Whole-octave pitch shift applied before decoding.
        #[arg(long, default_value_t = 1, value_name = "N", allow_negative_numbers = true)]
        octave_shift: i32,
        /// Flat loudness offset in dB.
        #[arg(long, default_value_t = -10.0, value_name = "DB", allow_negative_numbers = true)]
        loudness_shift: f64,
        /// Quiet frames scoring below this multiple of the median
        /// confidence-loudness score; 0 disables masking.
        #[arg(long, default_value_t = 1.0, value_name = "X")]
        mask_threshold: f64,
        /// Attenuation in dB applied to masked frames.
        #[arg(long, default_value_t = 20.0, value_name = "DB")]
        quiet: f64,
        /// Blend f0 toward the nearest semitone, 0 (off) to 1 (full snap).
        #[arg(long, default_value_t = 0.0, value_name = "X")]
        autotune: f64,
        /// Match loudness mean and spread to the training dataset.
        #[arg(long, default_value_t = true, action = ArgAction::Set, value_name = "BOOL")]
        use_statistics: bool,
    },
    /// Check analytic gradients against finite differences: every tape
    /// operation, both synthesis paths, and the full training graph.
    GradCheck {
        /// Seed for test inputs and coordinate sampling.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Coordinates sampled per parameter tensor.
        #[arg(long, default_value_t = 64)]
        coords: usize,
    },
    /// Summarize a loss log and/or render a spectrogram image.
    Figures {
        /// Training loss CSV to smooth into <out>/smoothed.csv.
        #[arg(long, value_name = "CSV")]
        losslog: Option<PathBuf>,
        /// WAV file to render as a log-magnitude PGM spectrogram.
        #[arg(long, value_name = "FILE")]
        wav: Option<PathBuf>,
        /// Output directory.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    let code = match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    };
    std::process::exit(code);
}

/// User-input problems exit 2; failures of a valid run exit 1.
fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Training(_) => 1,
        _ => 2,
    }
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Prepare { input, output, with_mfcc } => {
            cmd_prepare(&input, &output, with_mfcc)?;
            Ok(0)
        }
        Command::Train { config, data, out } => {
            cmd_train(&config, &data, &out)?;
            Ok(0)
        }
        Command::Run {
            checkpoint,
            input,
            out,
            octave_shift,
            loudness_shift,
            mask_threshold,
            quiet,
            autotune,
            use_statistics,
        } => {
            let opts = PreconditionOptions {
                use_statistics,
                mask_threshold,
                quiet,
                autotune,
                octave_shift,
                loudness_shift,
            };
            cmd_run(&checkpoint, &input, &out, &opts)?;
            Ok(0)
        }
        Command::GradCheck { seed, coords } => cmd_grad_check(seed, coords),
        Command::Figures { losslog, wav, out } => {
            cmd_figures(losslog.as_deref(), wav.as_deref(), &out)?;
            Ok(0)
        }
    }
}

/// `SMS_SEED` overrides the configured seed when set.
fn seed_override() -> Result<Option<u64>> {
    match std::env::var("SMS_SEED") {
        Ok(s) => s
            .trim()
            .parse::<u64>()
            .map(Some)
            .map_err(|_| Error::InvalidArgument(format!("SMS_SEED must be an integer, got {s:?}"))),
        Err(_) => Ok(None),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn cmd_prepare(input: &Path, output: &Path, with_mfcc: bool) -> Result<()> {
    let dataset = make_dataset(input, PREPARE_EXAMPLE_SECONDS, with_mfcc)?;
    create_dir(output)?;
    for item in &dataset.items {
        let stem = item.source.file_stem().unwrap_or_default().to_string_lossy();
        let wav_path = output.join(format!("{stem}_{:03}.wav", item.chunk_index));
        write_wav(&wav_path, &item.samples)?;
        write_sidecar(&sidecar_path(&wav_path), &item.features)?;
        if let Some(mfcc) = &item.features.mfcc {
            write_mfcc(&wav_path.with_extension("mfcc.txt"), mfcc)?;
        }
    }
    let s = &dataset.stats;
    write_text(
        &output.join("stats.txt"),
        &format!(
            "mean_midi_pitch = {}\nmean_loudness_db = {}\nstd_loudness_db = {}\n",
            s.mean_midi_pitch, s.mean_loudness_db, s.std_loudness_db
        ),
    )?;
    println!("prepared {} examples in {}", dataset.items.len(), output.display());
    Ok(())
}

/// One line per frame: time then every coefficient, space-separated.
fn write_mfcc(path: &Path, mfcc: &FrameSeries) -> Result<()> {
    let mut out = format!("# time_s mfcc[{}]\n", mfcc.dim);
    for t in 0..mfcc.num_frames() {
        out.push_str(&format!("{}", t as f64 / mfcc.frame_rate));
        for v in &mfcc.data[t * mfcc.dim..(t + 1) * mfcc.dim] {
            out.push_str(&format!(" {v}"));
        }
        out.push('\n');
    }
    write_text(path, &out)
}

fn cmd_train(config_path: &Path, data: &Path, out: &Path) -> Result<()> {
    let mut config = load_train_config(config_path)?;
    if let Some(seed) = seed_override()? {
        config.seed = seed;
    }
    create_dir(out)?;
    write_text(&out.join("resolved.conf"), &echo_config(&config))?;
    let dataset = make_dataset(data, config.example_seconds, config.model.use_z)?;
    let outcome = smsdiff::trainer::train(&config, &dataset, out)?;
    let last = outcome.log.last().map(|r| r.total).unwrap_or(f64::NAN);
    println!(
        "trained {} steps on {} examples; final loss {last}; checkpoint {}",
        outcome.checkpoint.step,
        dataset.items.len(),
        out.join("final.ckpt").display()
    );
    Ok(())
}

fn cmd_run(checkpoint: &Path, input: &Path, out: &Path, opts: &PreconditionOptions) -> Result<()> {
    let ckpt = Checkpoint::load(checkpoint)?;
    ckpt.validate_against(&ckpt.config.model)?;
    let audio = read_wav(input)?;
    let features = extract_features(&audio, ckpt.config.model.use_z)?;
    let pre = precondition(&features, opts, Some(&ckpt.stats))?;
    let controls = decode(&pre, &ckpt.params, &ckpt.config.model)?;
    let seed = seed_override()?.unwrap_or(ckpt.config.seed);
    let rendered = render(&controls, Some(&ckpt.reverb), seed)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_wav(out, &rendered.samples)?;

    let csv_path = out.with_extension("csv");
    let mut csv = String::from("time_s,f0_hz,loudness_db\n");
    let f0 = pre.f0_hz.values();
    let loud = pre.loudness_db.values();
    for t in 0..pre.num_frames() {
        csv.push_str(&format!("{},{},{}\n", t as f64 / CONTROL_RATE, f0[t], loud[t]));
    }
    write_text(&csv_path, &csv)?;
    println!(
        "rendered {:.2} s to {}; features in {}",
        rendered.samples.len() as f64 / smsdiff::SAMPLE_RATE,
        out.display(),
        csv_path.display()
    );
    Ok(())
}

fn cmd_grad_check(seed: u64, coords: usize) -> Result<i32> {
    if coords == 0 {
        return Err(Error::InvalidArgument("--coords must be at least 1".into()));
    }
    let entries = smsdiff::verify::run_full_suite(coords, seed)?;
    let mut failures = 0usize;
    for e in &entries {
        println!(
            "{} {:<24} max rel err {:.3e} (tolerance {:.0e}, {} coords, {} kinks skipped)",
            if e.passed() { "PASS" } else { "FAIL" },
            e.name,
            e.report.worst,
            e.tolerance,
            e.report.checked,
            e.report.skipped
        );
        if !e.passed() {
            failures += 1;
        }
    }
    if failures == 0 {
        println!("gradient check passed: {} suites", entries.len());
        Ok(0)
    } else {
        println!("gradient check FAILED: {failures} of {} suites", entries.len());
        Ok(1)
    }
}

fn cmd_figures(losslog: Option<&Path>, wav: Option<&Path>, out: &Path) -> Result<()> {
    if losslog.is_none() && wav.is_none() {
        return Err(Error::InvalidArgument(
            "nothing to do: pass --losslog and/or --wav".into(),
        ));
    }
    create_dir(out)?;
    if let Some(csv) = losslog {
        let path = out.join("smoothed.csv");
        write_text(&path, &smooth_losslog(csv)?)?;
        println!("wrote {}", path.display());
    }
    if let Some(wav_path) = wav {
        let stem = wav_path.file_stem().unwrap_or_default().to_string_lossy();
        let path = out.join(format!("{stem}.pgm"));
        write_spectrogram_pgm(wav_path, &path)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

/// Exponentially smooth the `total` column of a loss log.
fn smooth_losslog(csv: &Path) -> Result<String> {
    let text = fs::read_to_string(csv).map_err(|e| Error::io(csv, e))?;
    let mut out = String::from("step,total,smoothed\n");
    let mut smoothed: Option<f64> = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with("step") {
            continue;
        }
        let mut fields = line.split(',');
        let bad = || {
            Error::InvalidArgument(format!(
                "{}:{}: expected `step,total,...` row",
                csv.display(),
                lineno + 1
            ))
        };
        let step: u64 = fields.next().and_then(|s| s.trim().parse().ok()).ok_or_else(bad)?;
        let total: f64 = fields.next().and_then(|s| s.trim().parse().ok()).ok_or_else(bad)?;
        let s = match smoothed {
            None => total,
            Some(prev) => SMOOTH_ALPHA * total + (1.0 - SMOOTH_ALPHA) * prev,
        };
        smoothed = Some(s);
        out.push_str(&format!("{step},{total},{s}\n"));
    }
    if smoothed.is_none() {
        return Err(Error::InvalidArgument(format!("{}: no data rows", csv.display())));
    }
    Ok(out)
}

/// Binary PGM of the log-magnitude STFT, highest bin on the top row,
/// black at -140 dB, white at the file's loudest bin.
fn write_spectrogram_pgm(wav_path: &Path, out: &Path) -> Result<()> {
    let audio = read_wav(wav_path)?;
    let spec = stft(&audio, SPECTROGRAM_FFT, SPECTROGRAM_HOP)?;
    let db: Vec<f64> =
        spec.mag.iter().map(|&m| 20.0 * (m as f64 + 1e-7).log10()).collect();
    let db_max = db.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scale = if db_max > SPECTROGRAM_DB_MIN { db_max - SPECTROGRAM_DB_MIN } else { f64::INFINITY };
    let (frames, bins) = (spec.frames, spec.bins);
    let mut pixels = Vec::with_capacity(frames * bins);
    for row in 0..bins {
        let bin = bins - 1 - row;
        for frame in 0..frames {
            let v = (db[frame * bins + bin] - SPECTROGRAM_DB_MIN) / scale;
            pixels.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    let mut bytes = format!("P5\n{frames} {bins}\n255\n").into_bytes();
    bytes.extend_from_slice(&pixels);
    fs::write(out, bytes).map_err(|e| Error::io(out, e))
}
