use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use rkhs_reg::bench::{preset, BenchShape, FeatureSource, PRESET_NAMES};
use rkhs_reg::features::{read_weights, write_weights, EncoderWeights};
use rkhs_reg::geometry::{rotation_error_deg, translation_error};
use rkhs_reg::io::{
    cloud_normalization, load_cloud, normalize_cloud, read_pose_json, write_ply,
    write_pose_json, Normalization, PoseRecord, ShapeFormat,
};
use rkhs_reg::registration::{register, RegistrationConfig};
use rkhs_reg::rkhs::KernelMode;
use rkhs_reg::training::{train_from, CurriculumSchedule, TrainConfig};
use rkhs_reg::PointCloud;

const THREADS_ENV: &str = "RKHS_REG_THREADS";

/// Correspondence-free rigid point cloud registration.
///
/// Any long flag can also come from a JSON object passed with
/// `--config FILE` (keys are flag names; a key named after the subcommand may
/// hold a nested object). Flags given on the command line win. The worker
/// count is capped by the RKHS_REG_THREADS environment variable.
#[derive(Parser, Debug)]
#[command(name = "rkhs-reg", version, args_override_self = true)]
struct Cli {
    /// JSON file supplying default flag values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate the pose taking SRC onto TGT.
    Register(RegisterArgs),
    /// Train the feature encoder on every shape file in a directory.
    Train(TrainArgs),
    /// Run a benchmark preset and write per-trial rows as CSV.
    Bench(BenchArgs),
    /// Sample a point cloud from a procedural shape.
    Gen(GenArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FeatureMode {
    Handcrafted,
    Encoder,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Kernel {
    RbfTanh,
    RbfOnly,
}

impl From<Kernel> for KernelMode {
    fn from(k: Kernel) -> Self {
        match k {
            Kernel::RbfTanh => KernelMode::RbfTanh,
            Kernel::RbfOnly => KernelMode::RbfOnly,
        }
    }
}

#[derive(Args, Debug)]
struct RegisterArgs {
    /// Moving shape (OFF, PLY or XYZ).
    src: PathBuf,
    /// Fixed shape.
    tgt: PathBuf,
    #[arg(long, value_enum, default_value_t = FeatureMode::Handcrafted)]
    mode: FeatureMode,
    /// Encoder weights, required with `--mode encoder`.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Initial kernel lengthscale.
    #[arg(long, default_value_t = 0.3)]
    ell0: f64,
    #[arg(long, default_value_t = 300)]
    max_iters: usize,
    #[arg(long, value_enum, default_value_t = Kernel::RbfTanh)]
    kernel: Kernel,
    /// Neighbors for handcrafted normals.
    #[arg(long, default_value_t = 16)]
    k: usize,
    /// Handcrafted channels: 1 (normal) or 2 (normal and tangent).
    #[arg(long, default_value_t = 1)]
    channels: usize,
    /// Surface samples drawn from OFF meshes.
    #[arg(long, default_value_t = 1024)]
    points: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Register in the target's unit-diagonal frame; the written pose is in
    /// original units.
    #[arg(long)]
    normalize: bool,
    /// Ground-truth pose JSON; adds rotation and translation errors.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Write the pose as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    data_dir: PathBuf,
    /// Stage angles in degrees.
    #[arg(long, value_delimiter = ',', default_value = "1,10,20,30,45")]
    curriculum: Vec<f64>,
    /// Epochs per stage.
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    /// Total epoch budget across stages.
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "weights.bin")]
    out: PathBuf,
    /// Per-epoch CSV log.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Start from these weights instead of a fresh encoder.
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-2)]
    lr: f64,
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
    /// Points per training cloud.
    #[arg(long, default_value_t = 1024)]
    points: usize,
    /// Surface samples stored per mesh before pairs are subsampled.
    #[arg(long, default_value_t = 2048)]
    shape_points: usize,
    /// Encoder widths, starting with 1.
    #[arg(long, value_delimiter = ',', default_value = "1,8,16,16")]
    encoder_channels: Vec<usize>,
    #[arg(long, default_value_t = EncoderWeights::DEFAULT_K)]
    k: usize,
    /// Inner registration iterations.
    #[arg(long, default_value_t = 300)]
    inner_iters: usize,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long, default_value = "paper45", value_parser = clap::builder::PossibleValuesParser::new(PRESET_NAMES))]
    preset: String,
    /// Trials per cell (training seeds for the curriculum study).
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Points per cloud.
    #[arg(long)]
    points: Option<usize>,
    /// Record wall-clock times (reports are then not reproducible).
    #[arg(long)]
    timing: bool,
    /// Report CSV; the summary table goes to standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GenArgs {
    /// Procedural shape: box, mug, l-bracket, torus-knot, chair or convex-<seed>.
    shape: String,
    #[arg(long, default_value_t = 1024)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// ASCII PLY output; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let argv = match apply_config(argv) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            // Help and version go to stdout with status 0, usage errors exit 2.
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(2);
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

/// Splices flags from `--config FILE` in right after the subcommand so that
/// later command-line flags override them.
fn apply_config(argv: Vec<String>) -> Result<Vec<String>> {
    let mut rest = Vec::with_capacity(argv.len());
    let mut config = None;
    let mut it = argv.into_iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            config = Some(it.next().context("--config needs a file")?);
        } else if let Some(path) = a.strip_prefix("--config=") {
            config = Some(path.to_string());
        } else {
            rest.push(a);
        }
    }
    let Some(path) = config else {
        return Ok(rest);
    };
    let Some(sub_pos) = rest.iter().skip(1).position(|a| !a.starts_with('-')).map(|p| p + 1) else {
        return Ok(rest);
    };
    let file = File::open(&path).with_context(|| format!("cannot open config {path}"))?;
    let value: Value = serde_json::from_reader(BufReader::new(file))
        .with_context(|| format!("cannot parse config {path}"))?;
    let flags = config_flags(&value, &rest[sub_pos])?;
    rest.splice(sub_pos + 1..sub_pos + 1, flags);
    Ok(rest)
}

fn config_flags(value: &Value, subcommand: &str) -> Result<Vec<String>> {
    let Value::Object(map) = value else {
        bail!("config must be a JSON object");
    };
    const SUBCOMMANDS: [&str; 4] = ["register", "train", "bench", "gen"];
    let mut entries: Vec<(&String, &Value)> = map
        .iter()
        .filter(|(k, _)| !SUBCOMMANDS.contains(&k.as_str()))
        .collect();
    if let Some(section) = map.get(subcommand) {
        let Value::Object(section) = section else {
            bail!("config section {subcommand:?} must be an object");
        };
        entries.extend(section.iter());
    }
    let mut flags = Vec::new();
    for (key, v) in entries {
        let flag = format!("--{}", key.replace('_', "-"));
        match v {
            Value::Bool(true) => flags.push(flag),
            Value::Bool(false) | Value::Null => {}
            Value::Number(n) => flags.extend([flag, n.to_string()]),
            Value::String(s) => flags.extend([flag, s.clone()]),
            Value::Array(items) => {
                let parts: Vec<String> = items
                    .iter()
                    .map(|i| match i {
                        Value::String(s) => s.clone(),
                        other => other.to_string(),
                    })
                    .collect();
                flags.extend([flag, parts.join(",")]);
            }
            Value::Object(_) => bail!("config key {key:?} holds an object"),
        }
    }
    Ok(flags)
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .with_context(|| format!("{THREADS_ENV} must be a positive integer, got {raw:?}"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Register(a) => cmd_register(a),
        Command::Train(a) => cmd_train(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Gen(a) => cmd_gen(a),
    }
}

fn load_weights(path: &Path) -> Result<EncoderWeights> {
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    read_weights(BufReader::new(file)).with_context(|| format!("cannot read weights {}", path.display()))
}

fn load(path: &Path, points: usize, rng: &mut ChaCha8Rng) -> Result<PointCloud> {
    load_cloud(path, points, rng).with_context(|| format!("cannot load {}", path.display()))
}

fn cmd_register(a: RegisterArgs) -> Result<()> {
    let features = match a.mode {
        FeatureMode::Handcrafted => FeatureSource::Handcrafted {
            k: a.k,
            channels: a.channels,
        },
        FeatureMode::Encoder => {
            let path = a.weights.as_deref().context("--mode encoder needs --weights")?;
            FeatureSource::Encoder(load_weights(path)?.into())
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let z = load(&a.src, a.points, &mut rng)?;
    let x = load(&a.tgt, a.points, &mut rng)?;
    let norm = if a.normalize {
        cloud_normalization(&x)
    } else {
        Normalization::identity()
    };
    let fx = features.features(&norm.apply_cloud(&x))?;
    let fz = features.features(&norm.apply_cloud(&z))?;
    let config = RegistrationConfig {
        ell_init: a.ell0,
        max_iters: a.max_iters,
        mode: a.kernel.into(),
        ..Default::default()
    };
    let result = register(&fx, &fz, &config)?;
    let pose = norm.denormalize_pose(&result.pose);

    let mut record = PoseRecord::from_pose(&pose);
    record.final_ell = Some(result.final_ell);
    record.iterations = Some(result.iterations);
    if a.normalize {
        record.normalization = Some(norm);
    }
    if let Some(path) = &a.truth {
        let truth = read_pose_json(path)
            .with_context(|| format!("cannot read truth {}", path.display()))?
            .pose();
        record.rot_err_deg = Some(rotation_error_deg(&pose, &truth));
        record.trans_err = Some(translation_error(&pose, &truth));
    }

    let m = pose.to_matrix4();
    println!("pose:");
    for row in &m {
        println!(
            "  {:>12.8} {:>12.8} {:>12.8} {:>12.8}",
            row[0], row[1], row[2], row[3]
        );
    }
    println!("final_ell: {:.6}", result.final_ell);
    println!("iterations: {}", result.iterations);
    println!("converged: {}", result.converged);
    if let (Some(r), Some(t)) = (record.rot_err_deg, record.trans_err) {
        println!("rot_err_deg: {r:.6}");
        println!("trans_err: {t:.6}");
    }
    if let Some(out) = &a.out {
        write_pose_json(out, &record).with_context(|| format!("cannot write {}", out.display()))?;
    }
    Ok(())
}

fn shape_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("cannot read {}", dir.display()))? {
        let path = entry?.path();
        if path.is_file() && ShapeFormat::from_path(&path).is_ok() {
            files.push(path);
        }
    }
    files.sort();
    if files.is_empty() {
        bail!("no .off, .ply or .xyz files in {}", dir.display());
    }
    Ok(files)
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let dataset = shape_files(&a.data_dir)?
        .iter()
        .map(|p| load(p, a.shape_points, &mut rng).map(|c| normalize_cloud(&c)))
        .collect::<Result<Vec<_>>>()?;
    let schedule = CurriculumSchedule::new(a.curriculum.clone(), a.epochs)?;
    let config = TrainConfig {
        outer_lr: a.lr,
        batch_size: a.batch_size,
        inner: RegistrationConfig {
            max_iters: a.inner_iters,
            ..Default::default()
        },
        seed: a.seed,
        max_epochs: a.max_epochs,
        points_per_cloud: a.points,
        encoder_channels: a.encoder_channels.clone(),
        k: a.k,
        ..Default::default()
    };
    let initial = match &a.init {
        Some(p) => load_weights(p)?,
        None => config.initial_weights(&dataset)?,
    };
    eprintln!("training on {} shapes", dataset.len());
    let out = train_from(&dataset, initial, &schedule, &config, |row| {
        eprintln!(
            "stage {:>5.1} epoch {:>3} loss {:>10.6} val_rot {:>8.3} deg ell {:.4}",
            row.stage_deg, row.epoch, row.mean_loss, row.val_rot_err_deg, row.ell_mean
        );
    })?;
    let file = File::create(&a.out).with_context(|| format!("cannot create {}", a.out.display()))?;
    let mut w = BufWriter::new(file);
    write_weights(&mut w, &out.weights)?;
    w.flush()?;
    if let Some(path) = &a.log {
        let mut wr = csv::Writer::from_path(path).with_context(|| format!("cannot create {}", path.display()))?;
        for row in &out.log {
            wr.serialize(row)?;
        }
        wr.flush()?;
    }
    if let Some(last) = out.log.last() {
        println!(
            "epochs: {}\nfinal_val_rot_err_deg: {:.4}\nfinal_val_trans_err: {:.5}",
            out.log.len(),
            last.val_rot_err_deg,
            last.val_trans_err
        );
    }
    Ok(())
}

fn cmd_bench(a: BenchArgs) -> Result<()> {
    let mut p = preset(&a.preset)?.with_timing(a.timing);
    if let Some(t) = a.trials {
        p = p.with_trials(t);
    }
    if let Some(s) = a.seed {
        p = p.with_seed(s);
    }
    if let Some(n) = a.points {
        p = p.with_points(n);
    }
    eprintln!("{}: {}", p.name, p.description);
    let report = p.run()?;
    if let Some(out) = &a.out {
        let file = File::create(out).with_context(|| format!("cannot create {}", out.display()))?;
        report.write_csv(BufWriter::new(file))?;
    }
    print!("{}", report.summary_table());
    Ok(())
}

fn cmd_gen(a: GenArgs) -> Result<()> {
    let shape = BenchShape::procedural(&a.shape)?;
    let cloud = shape.sample(a.n, &mut ChaCha8Rng::seed_from_u64(a.seed))?;
    match &a.out {
        Some(out) => {
            let file = File::create(out).with_context(|| format!("cannot create {}", out.display()))?;
            write_ply(BufWriter::new(file), &cloud)?;
        }
        None => write_ply(std::io::stdout().lock(), &cloud)?,
    }
    Ok(())
}
