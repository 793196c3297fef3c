use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use coin_core::corrector::{correct_batch, train_corrector, PipelineConfig};
use coin_core::detector::{calibrate, train_detector, CalibrationReport};
use coin_core::eval::{ExperimentId, ExperimentRunner};
use coin_core::text::{build_vocab, load_parallel_tsv, write_parallel_tsv, SentencePair, SyntheticTask};
use coin_core::{CoinConfig, Corrector, Detector};

#[derive(Parser)]
#[command(name = "coin", version, about = "Detector-corrector spelling correction")]
struct Cli {
    /// JSON configuration; every key is optional.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic train/dev/test corpus and its confusion set.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the error detector on a parallel TSV corpus.
    TrainDetector {
        #[arg(long)]
        train: PathBuf,
        /// Defaults to `artifacts.detector`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pick the two detection thresholds on a held-out corpus.
    Calibrate {
        #[arg(long)]
        dev: PathBuf,
        #[arg(long)]
        detector: Option<PathBuf>,
        /// Defaults to `artifacts.calibration`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the corrector against a frozen, calibrated detector.
    TrainCorrector {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        detector: Option<PathBuf>,
        #[arg(long)]
        calibration: Option<PathBuf>,
        /// Defaults to `artifacts.corrector`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Correct every line of a file, writing `source<TAB>prediction` lines.
    Correct {
        /// One sentence per line; anything after a tab is ignored.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        detector: Option<PathBuf>,
        #[arg(long)]
        corrector: Option<PathBuf>,
        #[arg(long)]
        calibration: Option<PathBuf>,
    },
    /// Run an experiment and write `<id>.json` and `<id>.txt` into `--out`.
    Experiment {
        #[arg(long)]
        id: String,
        #[arg(long)]
        out: PathBuf,
        /// Exit non-zero when any report carries a degraded flag.
        #[arg(long)]
        strict: bool,
    },
}

fn artifact(flag: Option<PathBuf>, configured: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    flag.or_else(|| configured.clone())
        .with_context(|| format!("no {what} path: pass --{what} or set artifacts.{what} in the config"))
}

fn read_sources(path: &Path) -> Result<Vec<Vec<char>>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text
        .lines()
        .map(|l| l.trim_end_matches('\r'))
        .filter(|l| !l.is_empty())
        .map(|l| l.split('\t').next().unwrap_or("").chars().collect())
        .collect())
}

fn run(cli: Cli) -> Result<ExitCode> {
    let cfg = match &cli.config {
        Some(p) => CoinConfig::load(p).with_context(|| format!("loading config {}", p.display()))?,
        None => CoinConfig::default(),
    };
    match cli.command {
        Command::Synth { out } => {
            let task = SyntheticTask::generate(&cfg.data, cfg.seed)?;
            fs::create_dir_all(&out)?;
            write_parallel_tsv(out.join("train.tsv"), &task.train)?;
            write_parallel_tsv(out.join("dev.tsv"), &task.dev)?;
            write_parallel_tsv(out.join("test.tsv"), &task.test)?;
            task.confusion.save(out.join("confusion.txt"))?;
            println!(
                "wrote {} / {} / {} pairs to {}",
                task.train.len(),
                task.dev.len(),
                task.test.len(),
                out.display()
            );
        }
        Command::TrainDetector { train, out } => {
            let out = artifact(out, &cfg.artifacts.detector, "detector")?;
            let pairs = load_parallel_tsv(&train)?;
            let texts: Vec<String> = pairs
                .iter()
                .flat_map(|p| [p.source_string(), p.target_string()])
                .collect();
            let vocab = build_vocab(&texts);
            let mut train_cfg = cfg.detector.train.clone();
            train_cfg.seed = train_cfg.seed.wrapping_add(cfg.seed);
            let trained = train_detector(&pairs, &vocab, &cfg.encoder, &train_cfg)?;
            trained.detector.save(&out)?;
            println!(
                "detector trained on {} pairs, final epoch loss {:.5}, saved to {}",
                pairs.len(),
                trained.log.epoch_losses.last().copied().unwrap_or(f64::NAN),
                out.display()
            );
        }
        Command::Calibrate { dev, detector, out } => {
            let det_path = artifact(detector, &cfg.artifacts.detector, "detector")?;
            let out = artifact(out, &cfg.artifacts.calibration, "calibration")?;
            let detector = Detector::<f32>::load(&det_path)?;
            let pairs = load_parallel_tsv(&dev)?;
            let texts: Vec<&[char]> = pairs.iter().map(|p| p.source()).collect();
            let scores = detector.score_all(&texts, 64)?;
            let labels: Vec<Vec<bool>> = pairs.iter().map(SentencePair::error_mask).collect();
            let report = calibrate(&scores, &labels, cfg.detector.calibration_target)?;
            report.save(&out)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::TrainCorrector {
            train,
            detector,
            calibration,
            out,
        } => {
            let out = artifact(out, &cfg.artifacts.corrector, "corrector")?;
            let detector = Detector::<f32>::load(artifact(detector, &cfg.artifacts.detector, "detector")?)?;
            let calibration = CalibrationReport::load(artifact(calibration, &cfg.artifacts.calibration, "calibration")?)?;
            let pairs = load_parallel_tsv(&train)?;
            let trained = train_corrector(&pairs, Some((&detector, calibration.thresholds())), &cfg)?;
            trained.corrector.save(&out)?;
            println!(
                "corrector trained on {} pairs, final epoch loss {:.5}, saved to {}",
                pairs.len(),
                trained.log.epoch_losses.last().copied().unwrap_or(f64::NAN),
                out.display()
            );
        }
        Command::Correct {
            input,
            output,
            detector,
            corrector,
            calibration,
        } => {
            let detector = Detector::<f32>::load(artifact(detector, &cfg.artifacts.detector, "detector")?)?;
            let corrector = Corrector::<f32>::load(artifact(corrector, &cfg.artifacts.corrector, "corrector")?)?;
            let calibration = CalibrationReport::load(artifact(calibration, &cfg.artifacts.calibration, "calibration")?)?;
            if detector.vocab != corrector.vocab {
                bail!("detector and corrector were trained with different vocabularies");
            }
            let sources = read_sources(&input)?;
            let refs: Vec<&[char]> = sources.iter().map(Vec::as_slice).collect();
            let pipeline = PipelineConfig::for_model(&corrector, calibration.thresholds(), cfg.inference.mode);
            let outputs = correct_batch(&detector, &corrector, &refs, &pipeline)?;
            let mut text = String::new();
            for (src, out) in sources.iter().zip(&outputs) {
                text.extend(src.iter());
                text.push('\t');
                text.push_str(&out.prediction_string());
                text.push('\n');
            }
            fs::write(&output, text).with_context(|| format!("writing {}", output.display()))?;
            println!("corrected {} sentences into {}", sources.len(), output.display());
        }
        Command::Experiment { id, out, strict } => {
            let id: ExperimentId = id.parse()?;
            let strict = strict || cfg.experiment.strict;
            let mut runner = ExperimentRunner::new(cfg)?;
            let bundle = runner.run(id)?;
            let (json, txt) = bundle.write(&out)?;
            print!("{}", bundle.table);
            println!("wrote {} and {}", json.display(), txt.display());
            let degraded = bundle.degraded_flags();
            if !degraded.is_empty() {
                log::warn!("degraded metrics: {}", degraded.join(", "));
                if strict {
                    eprintln!("degraded metrics: {}", degraded.join(", "));
                    return Ok(ExitCode::from(2));
                }
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
