//! `gids` command-line front end.
//!
//! Exit status: 0 on success, 1 on a usage error, 2 when input data is
//! missing, malformed or cannot be processed.

use std::fmt::Display;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use gids::can::{read_log, write_log, CanLog};
use gids::config::KeyValues;
use gids::detector::{verdicts_csv, Detector};
use gids::encoder::{build_images, write_image_dump, CanImage, EncoderConfig, EncodingMode, ImageLabel};
use gids::eval::{evaluate, input_size_sweep, report_csv, report_table, roc_csv, roc_points, sweep_csv, EvalReport};
use gids::gan::{
    history_csv, read_weights_file, train_first_discriminator, train_gan_observed, write_weights_file, TrainConfig,
    TrainedGids, DEFAULT_THRESHOLD,
};
use gids::synth::{gen_normal_traffic, inject_attack, AttackSpec, TrafficProfile};

/// Frames per second needed to match 1,954 frames in 0.18 s.
const THROUGHPUT_TARGET: f64 = 1954.0 / 0.18;

#[derive(Parser)]
#[command(name = "gids", version, about = "GAN-based intrusion detection for CAN bus traffic")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate attack-free traffic.
    Synth(SynthArgs),
    /// Inject an attack into a log.
    Inject(InjectArgs),
    /// Encode a log into binary CAN images.
    Encode(EncodeArgs),
    /// Train the first (supervised) discriminator.
    TrainD1(TrainD1Args),
    /// Train the generator and second discriminator on normal traffic.
    TrainGan(TrainGanArgs),
    /// Run the detection cascade over a log.
    Detect(DetectArgs),
    /// Score a model against labelled logs.
    Eval(EvalArgs),
    /// Accuracy as a function of the window size.
    Sweep(SweepArgs),
    /// Measure detection throughput.
    Bench(BenchArgs),
}

#[derive(Args)]
struct Common {
    /// key = value file; command-line flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    common: Common,
    /// `default` or a profile file with `period.<id> = <ms>` lines.
    #[arg(long)]
    profile: Option<String>,
    /// Seconds of traffic.
    #[arg(long)]
    duration: Option<f64>,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct InjectArgs {
    #[command(flatten)]
    common: Common,
    /// dos, fuzzy, rpm, gear or targeted.
    #[arg(long)]
    attack: Option<String>,
    #[arg(long)]
    period_ms: Option<f64>,
    /// start:end in seconds from the first frame.
    #[arg(long)]
    window: Option<String>,
    /// Spoofed id for targeted attacks, hex.
    #[arg(long)]
    target_id: Option<String>,
    #[arg(short, long)]
    input: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct EncoderFlags {
    /// Frames per image.
    #[arg(long)]
    input_size: Option<usize>,
    /// Frames between consecutive windows; defaults to the input size.
    #[arg(long)]
    stride: Option<usize>,
    /// onehot or raw.
    #[arg(long)]
    mode: Option<String>,
}

#[derive(Args)]
struct EncodeArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    encoder: EncoderFlags,
    #[arg(short, long)]
    input: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct TrainFlags {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Learning rate of both networks.
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    d_lr: Option<f64>,
    #[arg(long)]
    g_lr: Option<f64>,
    #[arg(long)]
    d_steps: Option<usize>,
    #[arg(long)]
    label_smoothing: Option<f64>,
}

#[derive(Args)]
struct TrainD1Args {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    encoder: EncoderFlags,
    #[command(flatten)]
    train: TrainFlags,
    /// Attack-free log.
    #[arg(long)]
    normal: PathBuf,
    /// Logs with labelled injected frames; abnormal windows become the attack class.
    #[arg(long, required = true)]
    attack: Vec<PathBuf>,
    /// Model directory.
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct TrainGanArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    encoder: EncoderFlags,
    #[command(flatten)]
    train: TrainFlags,
    #[arg(long)]
    threshold: Option<f64>,
    /// Suppress per-epoch progress.
    #[arg(long, short)]
    quiet: bool,
    /// Attack-free log.
    #[arg(short, long)]
    input: PathBuf,
    /// Model directory.
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct ModelFlags {
    /// Model directory, or a second-discriminator weight file.
    #[arg(short, long)]
    model: PathBuf,
    /// First-discriminator weight file.
    #[arg(long)]
    d1: Option<PathBuf>,
    #[arg(long)]
    threshold: Option<f64>,
    /// Skip the first discriminator even if the model has one.
    #[arg(long)]
    d2_only: bool,
}

#[derive(Args)]
struct DetectArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    model: ModelFlags,
    #[arg(short, long)]
    input: PathBuf,
    /// Verdict CSV.
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    model: ModelFlags,
    /// Labelled logs, one report row each.
    #[arg(short, long, required = true)]
    input: Vec<PathBuf>,
    /// Report CSV.
    #[arg(short, long)]
    output: PathBuf,
    /// Also write `<log>.roc.csv` files here.
    #[arg(long)]
    roc_dir: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    train: TrainFlags,
    /// Comma-separated window sizes.
    #[arg(long)]
    sizes: Option<String>,
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    threshold: Option<f64>,
    /// Attack-free training log.
    #[arg(long)]
    normal: PathBuf,
    /// Labelled evaluation logs.
    #[arg(short, long, required = true)]
    input: Vec<PathBuf>,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    model: ModelFlags,
    #[arg(short, long)]
    input: PathBuf,
    /// Timed passes; the fastest is reported.
    #[arg(long)]
    repeat: Option<usize>,
}

enum Failure {
    Usage(String),
    Data(String),
}

type Outcome = Result<(), Failure>;

fn data_err<E: Display>(context: impl Display) -> impl FnOnce(E) -> Failure {
    move |e| Failure::Data(format!("{context}: {e}"))
}

/// Flag values layered over the config file, plus a record of every value used.
struct Settings {
    merged: KeyValues,
    resolved: KeyValues,
}

impl Settings {
    fn new(common: &Common, flags: KeyValues) -> Result<Self, Failure> {
        let mut merged = match &common.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(data_err(path.display()))?;
                KeyValues::parse(&text).map_err(data_err(path.display()))?
            }
            None => KeyValues::default(),
        };
        let mut flags = flags;
        if let Some(seed) = common.seed {
            flags.set("seed", seed);
        }
        merged.merge(&flags);
        Ok(Settings { merged, resolved: KeyValues::default() })
    }

    fn opt<T: FromStr + ToString>(&mut self, key: &str) -> Result<Option<T>, Failure> {
        let Some(raw) = self.merged.get(key) else { return Ok(None) };
        let value: T = raw.parse().map_err(|_| Failure::Usage(format!("invalid value {raw:?} for `{key}`")))?;
        self.resolved.set(key, value.to_string());
        Ok(Some(value))
    }

    fn get<T: FromStr + ToString>(&mut self, key: &str, default: T) -> Result<T, Failure> {
        match self.opt(key)? {
            Some(v) => Ok(v),
            None => {
                self.resolved.set(key, default.to_string());
                Ok(default)
            }
        }
    }

    fn require<T: FromStr + ToString>(&mut self, key: &str) -> Result<T, Failure> {
        self.opt(key)?.ok_or_else(|| Failure::Usage(format!("missing required setting `{key}`")))
    }

    fn record(&mut self, key: &str, value: impl ToString) {
        self.resolved.set(key, value);
    }

    fn encoder(&mut self) -> Result<EncoderConfig, Failure> {
        let input_size = self.get("input_size", gids::encoder::DEFAULT_INPUT_SIZE)?;
        let stride = self.get("stride", input_size)?;
        let mode = self.get("mode", EncodingMode::OneHot)?;
        let cfg = EncoderConfig { input_size, stride, mode };
        cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
        Ok(cfg)
    }

    fn train(&mut self) -> Result<TrainConfig, Failure> {
        let mut cfg = TrainConfig::default();
        cfg.apply_kv(&self.merged).map_err(|e| Failure::Usage(e.to_string()))?;
        for (k, v) in cfg.to_kv().iter() {
            self.resolved.set(k, v);
        }
        Ok(cfg)
    }

    /// Writes the resolved settings next to `output` (or inside it when it is a directory).
    fn save(&self, output: &Path) -> Outcome {
        let path = if output.is_dir() { output.join("run.conf") } else { sidecar(output, "run.conf") };
        fs::write(&path, self.resolved.to_string()).map_err(data_err(path.display()))
    }
}

fn sidecar(path: &Path, ext: &str) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".");
    name.push(ext);
    path.with_file_name(name)
}

macro_rules! flags {
    ($($key:literal => $value:expr),* $(,)?) => {{
        let mut kv = KeyValues::default();
        $( if let Some(v) = &$value { kv.set($key, v.to_string()); } )*
        kv
    }};
}

impl EncoderFlags {
    fn kv(&self) -> KeyValues {
        flags!("input_size" => self.input_size, "stride" => self.stride, "mode" => self.mode)
    }
}

impl TrainFlags {
    fn kv(&self) -> KeyValues {
        flags!(
            "epochs" => self.epochs,
            "batch_size" => self.batch_size,
            "lr" => self.lr,
            "d_lr" => self.d_lr,
            "g_lr" => self.g_lr,
            "d_steps" => self.d_steps,
            "label_smoothing" => self.label_smoothing,
        )
    }
}

fn joined(parts: &[KeyValues]) -> KeyValues {
    let mut kv = KeyValues::default();
    for p in parts {
        kv.merge(p);
    }
    kv
}

fn load_log(path: &Path) -> Result<CanLog, Failure> {
    let file = File::open(path).map_err(data_err(path.display()))?;
    let mut log = read_log(BufReader::new(file)).map_err(data_err(path.display()))?;
    log.source = path.display().to_string();
    Ok(log)
}

fn save_log(log: &CanLog, path: &Path) -> Outcome {
    let file = File::create(path).map_err(data_err(path.display()))?;
    let mut sink = BufWriter::new(file);
    write_log(log, &mut sink).map_err(data_err(path.display()))?;
    sink.flush().map_err(data_err(path.display()))
}

fn write_text(path: &Path, text: &str) -> Outcome {
    fs::write(path, text).map_err(data_err(path.display()))
}

fn images(log: &CanLog, cfg: &EncoderConfig, path: &Path) -> Result<Vec<CanImage>, Failure> {
    build_images(log, cfg).map_err(data_err(path.display()))
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

fn synth(args: SynthArgs) -> Outcome {
    let mut s = Settings::new(&args.common, flags!("profile" => args.profile, "duration" => args.duration))?;
    let seed = s.get("seed", 0u64)?;
    let duration = s.get("duration", 60.0f64)?;
    let profile_name = s.get("profile", "default".to_string())?;
    let mut profile = if profile_name == "default" {
        TrafficProfile::default_vehicle(seed)
    } else {
        let text = fs::read_to_string(&profile_name).map_err(data_err(&profile_name))?;
        let kv = KeyValues::parse(&text).map_err(data_err(&profile_name))?;
        TrafficProfile::from_kv(&kv).map_err(data_err(&profile_name))?
    };
    profile.seed = seed;
    let log = gen_normal_traffic(&profile, duration).map_err(|e| Failure::Usage(e.to_string()))?;
    save_log(&log, &args.output)?;
    eprintln!("{} frames over {duration} s", log.len());
    s.save(&args.output)
}

fn inject(args: InjectArgs) -> Outcome {
    let mut s = Settings::new(
        &args.common,
        flags!(
            "attack" => args.attack,
            "period_ms" => args.period_ms,
            "window" => args.window,
            "target_id" => args.target_id,
        ),
    )?;
    let mut kv = KeyValues::default();
    kv.set("attack", s.require::<String>("attack")?);
    kv.set("window", s.require::<String>("window")?);
    kv.set("seed", s.get("seed", 0u64)?);
    for key in ["period_ms", "target_id"] {
        if let Some(v) = s.opt::<String>(key)? {
            kv.set(key, v);
        }
    }
    let spec = AttackSpec::from_kv(&kv).map_err(|e| Failure::Usage(e.to_string()))?;
    s.record("period_ms", spec.period_ms);
    let base = load_log(&args.input)?;
    let attacked = inject_attack(&base, &spec).map_err(data_err(args.input.display()))?;
    save_log(&attacked, &args.output)?;
    eprintln!("{} frames, {} injected", attacked.len(), attacked.injected_count());
    s.save(&args.output)
}

fn encode(args: EncodeArgs) -> Outcome {
    let mut s = Settings::new(&args.common, args.encoder.kv())?;
    let cfg = s.encoder()?;
    let log = load_log(&args.input)?;
    let imgs = images(&log, &cfg, &args.input)?;
    let file = File::create(&args.output).map_err(data_err(args.output.display()))?;
    let mut sink = BufWriter::new(file);
    write_image_dump(&imgs, &mut sink).map_err(data_err(args.output.display()))?;
    sink.flush().map_err(data_err(args.output.display()))?;
    let abnormal = imgs.iter().filter(|i| i.label.is_abnormal()).count();
    eprintln!("{} images ({abnormal} abnormal)", imgs.len());
    s.save(&args.output)
}

fn create_dir(dir: &Path) -> Outcome {
    fs::create_dir_all(dir).map_err(data_err(dir.display()))
}

fn train_d1(args: TrainD1Args) -> Outcome {
    let mut s = Settings::new(&args.common, joined(&[args.encoder.kv(), args.train.kv()]))?;
    let cfg = s.encoder()?;
    let train = s.train()?;
    let normal = images(&load_log(&args.normal)?, &cfg, &args.normal)?;
    let mut attack = Vec::new();
    for path in &args.attack {
        let imgs = images(&load_log(path)?, &cfg, path)?;
        attack.extend(imgs.into_iter().filter(|i| i.label.is_abnormal()));
    }
    let run = train_first_discriminator(&normal, &attack, &train).map_err(data_err("training"))?;
    create_dir(&args.output)?;
    write_weights_file(&args.output.join("d1.gidsw"), &run.model).map_err(data_err("saving"))?;
    let mut history = String::from("epoch,loss\n");
    for (i, loss) in run.epoch_losses.iter().enumerate() {
        history.push_str(&format!("{},{loss:.6}\n", i + 1));
    }
    write_text(&args.output.join("d1_history.csv"), &history)?;
    eprintln!(
        "{} normal and {} attack images, final loss {:.4}",
        normal.len(),
        attack.len(),
        run.epoch_losses.last().copied().unwrap_or(f64::NAN)
    );
    s.save(&args.output)
}

fn train_gan_cmd(args: TrainGanArgs) -> Outcome {
    let mut flags = joined(&[args.encoder.kv(), args.train.kv()]);
    if let Some(t) = args.threshold {
        flags.set("threshold", t);
    }
    let mut s = Settings::new(&args.common, flags)?;
    let cfg = s.encoder()?;
    let train = s.train()?;
    let threshold = s.get("threshold", DEFAULT_THRESHOLD)?;
    let normal = images(&load_log(&args.input)?, &cfg, &args.input)?;
    let quiet = args.quiet;
    let run = train_gan_observed(&normal, &train, |h, _, _| {
        if !quiet {
            eprintln!(
                "epoch {}/{}: d_loss {:.4} g_loss {:.4} D(real) {:.3} D(fake) {:.3}",
                h.epoch, train.epochs, h.d_loss, h.g_loss, h.d_real_mean, h.d_fake_mean
            );
        }
    })
    .map_err(data_err("training"))?;
    let model = TrainedGids {
        d1: None,
        d2: run.discriminator,
        g: Some(run.generator),
        encoder: cfg,
        detection_threshold: threshold,
        d2_threshold: None,
    };
    model.save(&args.output).map_err(data_err("saving"))?;
    write_text(&args.output.join("history.csv"), &history_csv(&run.history))?;
    s.record("selected_epoch", run.selected_epoch);
    eprintln!("{} images, kept epoch {}", normal.len(), run.selected_epoch);
    s.save(&args.output)
}

fn load_model(flags: &ModelFlags, s: &mut Settings) -> Result<TrainedGids, Failure> {
    let path = &flags.model;
    let mut model = if path.is_dir() {
        TrainedGids::load(path).map_err(data_err(path.display()))?
    } else {
        let d2 = read_weights_file(path).map_err(data_err(path.display()))?;
        TrainedGids::from_d2(d2, DEFAULT_THRESHOLD).map_err(data_err(path.display()))?
    };
    if let Some(d1) = &flags.d1 {
        model.d1 = Some(read_weights_file(d1).map_err(data_err(d1.display()))?);
    }
    if flags.d2_only {
        model.d1 = None;
    }
    model.detection_threshold = s.get("threshold", model.detection_threshold)?;
    model.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    s.record("model", path.display());
    s.record("input_size", model.encoder.input_size);
    s.record("stride", model.encoder.stride);
    s.record("mode", model.encoder.mode);
    s.record("first_discriminator", model.d1.is_some());
    Ok(model)
}

fn model_flags(flags: &ModelFlags) -> KeyValues {
    flags!("threshold" => flags.threshold)
}

fn detect(args: DetectArgs) -> Outcome {
    let mut s = Settings::new(&args.common, model_flags(&args.model))?;
    let model = load_model(&args.model, &mut s)?;
    let log = load_log(&args.input)?;
    let detector = Detector::new(&model).map_err(|e| Failure::Usage(e.to_string()))?;
    let report = detector.detect_stream(log.frames()).map_err(data_err(args.input.display()))?;
    write_text(&args.output, &verdicts_csv(&report.verdicts))?;
    let anomalies = report.verdicts.iter().filter(|v| v.is_anomaly()).count();
    eprintln!(
        "{} windows, {anomalies} anomalous; {:.0} frames/s",
        report.stats.windows,
        report.stats.frames_per_second()
    );
    s.save(&args.output)
}

fn eval_cmd(args: EvalArgs) -> Outcome {
    let mut s = Settings::new(&args.common, model_flags(&args.model))?;
    let model = load_model(&args.model, &mut s)?;
    let mut rows: Vec<(String, EvalReport)> = Vec::new();
    if let Some(dir) = &args.roc_dir {
        create_dir(dir)?;
    }
    for path in &args.input {
        let log = load_log(path)?;
        let imgs = images(&log, &model.encoder, path)?;
        let labels: Vec<ImageLabel> = imgs.iter().map(|i| i.label).collect();
        let mut configs = vec![(stem(path), Detector::new(&model).map_err(|e| Failure::Usage(e.to_string()))?)];
        if model.d1.is_some() {
            configs.push((format!("{} (d2 only)", stem(path)), Detector::new(&model).unwrap().d2_only()));
        }
        for (name, detector) in configs {
            let verdicts = detector.classify_batch(&imgs).map_err(data_err(path.display()))?;
            let report = evaluate(&verdicts, &labels).map_err(data_err(path.display()))?;
            if let Some(dir) = &args.roc_dir {
                let scores: Vec<f64> = verdicts.iter().map(|v| v.anomaly_score()).collect();
                let actual: Vec<bool> = labels.iter().map(|l| l.is_abnormal()).collect();
                if let Ok(points) = roc_points(&scores, &actual) {
                    let file = dir.join(format!("{}.roc.csv", name.replace(' ', "_").replace(['(', ')'], "")));
                    write_text(&file, &roc_csv(&points))?;
                }
            }
            rows.push((name, report));
        }
    }
    print!("{}", report_table(&rows));
    write_text(&args.output, &report_csv(&rows))?;
    s.save(&args.output)
}

fn sweep(args: SweepArgs) -> Outcome {
    let mut flags = args.train.kv();
    flags.merge(&flags!("sizes" => args.sizes, "mode" => args.mode, "threshold" => args.threshold));
    let mut s = Settings::new(&args.common, flags)?;
    let train = s.train()?;
    let mode = s.get("mode", EncodingMode::OneHot)?;
    let threshold = s.get("threshold", DEFAULT_THRESHOLD)?;
    let raw_sizes = s.get("sizes", "32,64,128".to_string())?;
    let sizes = raw_sizes
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| Failure::Usage(format!("invalid sizes {raw_sizes:?}")))?;
    let normal = load_log(&args.normal)?;
    let evals = args.input.iter().map(|p| load_log(p)).collect::<Result<Vec<_>, _>>()?;
    let refs: Vec<&CanLog> = evals.iter().collect();
    let rows = input_size_sweep(&normal, &refs, &sizes, mode, &train, threshold).map_err(|e| match e {
        gids::eval::EvalError::InvalidSizes => Failure::Usage(e.to_string()),
        other => Failure::Data(other.to_string()),
    })?;
    let csv = sweep_csv(&rows);
    print!("{csv}");
    write_text(&args.output, &csv)?;
    s.save(&args.output)
}

fn bench(args: BenchArgs) -> Outcome {
    let mut flags = model_flags(&args.model);
    flags.merge(&flags!("repeat" => args.repeat));
    let mut s = Settings::new(&args.common, flags)?;
    let model = load_model(&args.model, &mut s)?;
    let repeat = s.get("repeat", 5usize)?.max(1);
    let log = load_log(&args.input)?;
    let detector = Detector::new(&model).map_err(|e| Failure::Usage(e.to_string()))?;
    let mut best: Option<gids::detector::StreamStats> = None;
    for _ in 0..repeat {
        let stats = detector.detect_stream(log.frames()).map_err(data_err(args.input.display()))?.stats;
        if best.is_none_or(|b| stats.elapsed < b.elapsed) {
            best = Some(stats);
        }
    }
    let best = best.expect("at least one pass");
    let fps = best.frames_per_second();
    println!("frames: {}", best.frames);
    println!("windows: {}", best.windows);
    println!("elapsed: {:.6} s (best of {repeat})", best.elapsed.as_secs_f64());
    println!("frames/s: {fps:.0}");
    println!(
        "target {:.0} frames/s: {}",
        THROUGHPUT_TARGET,
        if fps >= THROUGHPUT_TARGET { "met" } else { "missed" }
    );
    Ok(())
}

fn run(cli: Cli) -> Outcome {
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Inject(a) => inject(a),
        Command::Encode(a) => encode(a),
        Command::TrainD1(a) => train_d1(a),
        Command::TrainGan(a) => train_gan_cmd(a),
        Command::Detect(a) => detect(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Sweep(a) => sweep(a),
        Command::Bench(a) => bench(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            eprintln!("Usage: gids <COMMAND> [OPTIONS]; see `gids --help`");
            ExitCode::from(1)
        }
        Err(Failure::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
