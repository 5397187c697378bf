//! `draco`: haze synthesis, training, dehazing, evaluation and profiling.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use draco_core::haze::{make_pair_dataset, read_manifest, synthetic_scene, DepthKind, RecipeSpec};
use draco_core::loss::LossMode;
use draco_core::metrics::{aggregate, psnr, ssim_metric, AggregateReport, MetricsReport};
use draco_core::model::{dehaze, ArchConfig, BlockMode, DracoWeights};
use draco_core::ppm::{read_ppm, write_ppm};
use draco_core::profile::{count_flops, count_params_for, profile, Component};
use draco_core::tensor::Tensor;
use draco_core::train::{load_checkpoint, save_checkpoint, Checkpoint, TrainConfig, Trainer, DEFAULT_SEED};
use draco_core::Error;
use serde::Serialize;

const EXIT_USAGE: u8 = 1;
const EXIT_IO: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

#[derive(Parser)]
#[command(name = "draco", version, about = "Single-image dehazing with dilated inverted residuals and detail recovery")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Seed for every random choice; 0 when absent.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Build hazy/clear pairs with the atmospheric scattering model.
    Synth(SynthArgs),
    /// Train a network on a pair dataset.
    Train(TrainArgs),
    /// Dehaze PPM images with a trained checkpoint.
    Dehaze(DehazeArgs),
    /// Score predictions against ground truth.
    Eval(EvalArgs),
    /// Report parameter and FLOP counts.
    Profile(ProfileArgs),
}

#[derive(Args)]
struct ArchArgs {
    /// `default` or a JSON file with architecture fields.
    #[arg(long, default_value = "default")]
    arch: String,
    /// full | ddirb | attdrn
    #[arg(long)]
    blocks: Option<BlockMode>,
    #[arg(long)]
    attention_kernel: Option<usize>,
}

impl ArchArgs {
    fn resolve(&self, base: ArchConfig) -> Result<ArchConfig, Error> {
        let mut arch = if self.arch == "default" {
            base
        } else {
            let path = Path::new(&self.arch);
            let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
            serde_json::from_str(&text)?
        };
        if let Some(b) = self.blocks {
            arch.blocks = b;
        }
        if let Some(k) = self.attention_kernel {
            arch.attention_kernel = k;
        }
        arch.validate()?;
        Ok(arch)
    }
}

#[derive(Args)]
struct SynthArgs {
    /// Directory of clear PPM images.
    #[arg(long, conflicts_with = "scenes", required_unless_present = "scenes")]
    clear: Option<PathBuf>,
    /// Generate this many synthetic clear scenes instead of reading `--clear`.
    #[arg(long)]
    scenes: Option<usize>,
    /// Side of generated scenes.
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long)]
    out: PathBuf,
    /// Scattering coefficient; repeat for several recipes per image.
    #[arg(long = "beta", default_value = "1.0", num_args = 1..)]
    betas: Vec<f32>,
    /// One value for all channels or `r,g,b`; sampled from [0.7, 1] when absent.
    #[arg(long)]
    airlight: Option<String>,
    /// linear_x | linear_y | radial | file:<path>
    #[arg(long, default_value = "linear_x")]
    depth: DepthKind,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory written by `synth`.
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint to write.
    #[arg(long)]
    out: PathBuf,
    /// JSON file with training fields; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Continue from this checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Per-epoch JSON lines; defaults to the checkpoint path with `.log.jsonl`.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Stop after this many updates instead of `epochs` passes.
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    crop: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// quadruplet | triplet | mae+quad | ssim+quad | no-contrastive
    #[arg(long)]
    loss_mode: Option<LossMode>,
    /// Keep the contrastive extractor fixed.
    #[arg(long)]
    freeze_extractor: bool,
    #[command(flatten)]
    arch: ArchArgs,
}

#[derive(Args)]
struct DehazeArgs {
    #[arg(long)]
    weights: PathBuf,
    /// A PPM file or a directory of them.
    #[arg(long)]
    input: PathBuf,
    /// Output file (for a file input) or directory.
    #[arg(long)]
    out: PathBuf,
    /// Also write the DDIRB-stage output as `<name>_mid.ppm`.
    #[arg(long)]
    emit_intermediate: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Predictions: a PPM file or directory.
    #[arg(long, conflicts_with = "data", required_unless_present = "data")]
    pred: Option<PathBuf>,
    /// Ground truth matching `--pred` by file name.
    #[arg(long, requires = "pred")]
    gt: Option<PathBuf>,
    /// Dataset directory: dehaze each hazy image with `--weights` and score it.
    #[arg(long, requires = "weights")]
    data: Option<PathBuf>,
    /// Checkpoint; supplies the architecture for the cost fields.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Write the report here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    arch: ArchArgs,
}

#[derive(Args)]
struct ProfileArgs {
    #[command(flatten)]
    arch: ArchArgs,
    #[arg(long, default_value_t = 256)]
    height: usize,
    #[arg(long, default_value_t = 256)]
    width: usize,
    /// full | ddirb_only | attdrn_only
    #[arg(long, default_value = "full")]
    component: Component,
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } | Error::Format { .. } => EXIT_IO,
        Error::Numeric(_) => EXIT_NUMERIC,
        _ => EXIT_USAGE,
    }
}

fn write_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<(), Error> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(p) => fs::write(p, text + "\n").map_err(|e| io_err(p, e)),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn parse_airlight(s: &str) -> Result<[f32; 3], Error> {
    let parts: Vec<f32> = s
        .split(',')
        .map(|p| p.trim().parse::<f32>())
        .collect::<Result<_, _>>()
        .map_err(|e| Error::Config(format!("bad airlight {s:?}: {e}")))?;
    match parts[..] {
        [a] => Ok([a; 3]),
        [r, g, b] => Ok([r, g, b]),
        _ => Err(Error::Config(format!("airlight needs 1 or 3 values, got {s:?}"))),
    }
}

fn synth(a: SynthArgs, seed: u64) -> Result<(), Error> {
    let airlight = a.airlight.as_deref().map(parse_airlight).transpose()?;
    let recipes: Vec<RecipeSpec> = a
        .betas
        .iter()
        .map(|&beta| RecipeSpec {
            airlight,
            beta,
            depth: a.depth.clone(),
        })
        .collect();
    let clear_dir = match (&a.clear, a.scenes) {
        (Some(dir), _) => dir.clone(),
        (None, Some(n)) => {
            let dir = a.out.join("source");
            fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
            for i in 0..n {
                let img = synthetic_scene(a.size, a.size, seed.wrapping_mul(1000).wrapping_add(i as u64));
                write_ppm(dir.join(format!("scene{i:04}.ppm")), &img)?;
            }
            dir
        }
        (None, None) => unreachable!("clap requires --clear or --scenes"),
    };
    let n = make_pair_dataset(&clear_dir, &recipes, &a.out, seed)?;
    eprintln!("wrote {n} pairs to {}", a.out.display());
    Ok(())
}

fn train(a: TrainArgs, seed: Option<u64>) -> Result<(), Error> {
    let mut cfg = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| io_err(p, e))?;
            serde_json::from_str::<TrainConfig>(&text)?
        }
        None => TrainConfig::default(),
    };
    macro_rules! set {
        ($($f:ident),*) => { $(if let Some(v) = a.$f { cfg.$f = v; })* };
    }
    set!(epochs, batch, crop, lr, loss_mode);
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if a.freeze_extractor {
        cfg.train_extractor = false;
    }
    cfg.arch = a.arch.resolve(cfg.arch.clone())?;

    let pairs = draco_core::haze::load_pairs(&a.data)?;
    if pairs.is_empty() {
        return Err(Error::Config(format!("no pairs in {}", a.data.display())));
    }
    let mut trainer = match &a.resume {
        Some(p) => Trainer::from_checkpoint(cfg, load_checkpoint(p)?)?,
        None => Trainer::new(cfg)?,
    };
    let log_path = a.log.clone().unwrap_or_else(|| a.out.with_extension("log.jsonl"));
    let file = File::create(&log_path).map_err(|e| io_err(&log_path, e))?;
    let mut log = BufWriter::new(file);
    log::info!(
        "training on {} pairs, config {}",
        pairs.len(),
        serde_json::to_string(trainer.config())?
    );
    trainer.fit(
        &pairs,
        a.steps,
        |r| log::debug!("{}", serde_json::to_string(r).unwrap_or_default()),
        |e| {
            writeln!(log, "{}", serde_json::to_string(e)?).map_err(|err| io_err(&log_path, err))?;
            log.flush().map_err(|err| io_err(&log_path, err))?;
            log::info!("epoch {} step {} total {:.6}", e.epoch, e.step, e.total);
            Ok(())
        },
    )?;
    save_checkpoint(&a.out, &trainer.checkpoint())?;
    eprintln!("saved {} after {} steps", a.out.display(), trainer.step());
    Ok(())
}

fn ppm_inputs(input: &Path) -> Result<Vec<PathBuf>, Error> {
    if input.is_dir() {
        draco_core::haze::list_ppm(input)
    } else {
        Ok(vec![input.to_path_buf()])
    }
}

fn dehaze_cmd(a: DehazeArgs) -> Result<(), Error> {
    let ckpt = load_checkpoint(&a.weights)?;
    let inputs = ppm_inputs(&a.input)?;
    let into_dir = a.input.is_dir() || inputs.len() != 1;
    if into_dir {
        fs::create_dir_all(&a.out).map_err(|e| io_err(&a.out, e))?;
    }
    for path in &inputs {
        let hazy = read_ppm(path)?;
        let (mid, out) = dehaze(&ckpt.weights, &hazy)?;
        let target = if into_dir {
            a.out.join(path.file_name().expect("listed file"))
        } else {
            a.out.clone()
        };
        write_ppm(&target, &out)?;
        if a.emit_intermediate {
            let stem = target.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            write_ppm(target.with_file_name(format!("{stem}_mid.ppm")), &mid)?;
        }
        log::info!("{} -> {}", path.display(), target.display());
    }
    Ok(())
}

#[derive(Serialize)]
struct EvalOutput {
    images: Vec<MetricsReport>,
    aggregate: AggregateReport,
}

fn score(
    name: String,
    pred: &Tensor<f32>,
    gt: &Tensor<f32>,
    arch: &ArchConfig,
    params: usize,
) -> Result<MetricsReport, Error> {
    let s = gt.shape();
    let ssim = ssim_metric(pred, gt)?;
    if ssim.fell_back {
        log::warn!("{name}: smaller than the SSIM window, global statistics used");
    }
    Ok(MetricsReport {
        psnr_db: psnr(pred, gt)?,
        ssim: ssim.value,
        params,
        flops: count_flops(arch, s.h, s.w, Component::Full)?,
        height: s.h,
        width: s.w,
        image: Some(name),
        ssim_fallback: ssim.fell_back,
        config_digest: arch.digest(),
    })
}

fn eval(a: EvalArgs) -> Result<(), Error> {
    let weights: Option<Checkpoint> = a.weights.as_deref().map(load_checkpoint).transpose()?;
    let arch = match &weights {
        Some(c) => c.arch().clone(),
        None => a.arch.resolve(ArchConfig::default())?,
    };
    let params = count_params_for(&arch, Component::Full, false);
    let mut reports = Vec::new();
    if let Some(data) = &a.data {
        let w: &DracoWeights<f32> = &weights.as_ref().expect("clap requires --weights").weights;
        for e in read_manifest(data)? {
            let hazy = read_ppm(data.join(&e.hazy))?;
            let clear = read_ppm(data.join(&e.clear))?;
            let (_, out) = dehaze(w, &hazy)?;
            reports.push(score(e.hazy.clone(), &out, &clear, &arch, params)?);
        }
    } else {
        let pred = a.pred.as_ref().expect("clap requires --pred");
        let gt = a
            .gt
            .as_ref()
            .ok_or_else(|| Error::Config("--pred needs --gt".into()))?;
        for p in ppm_inputs(pred)? {
            let g = if gt.is_dir() {
                gt.join(p.file_name().expect("listed file"))
            } else {
                gt.clone()
            };
            let name = p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            reports.push(score(name, &read_ppm(&p)?, &read_ppm(&g)?, &arch, params)?);
        }
    }
    let out = EvalOutput {
        aggregate: aggregate(&reports),
        images: reports,
    };
    write_json(&out, a.out.as_deref())
}

fn profile_cmd(a: ProfileArgs) -> Result<(), Error> {
    let arch = a.arch.resolve(ArchConfig::default())?;
    let report = profile(&arch, a.height, a.width, a.component)?;
    write_json(&report, None)
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        // dehaze, eval and profile are deterministic without a seed
        Command::Synth(a) => synth(a, cli.seed.unwrap_or(DEFAULT_SEED)),
        Command::Train(a) => train(a, cli.seed),
        Command::Dehaze(a) => dehaze_cmd(a),
        Command::Eval(a) => eval(a),
        Command::Profile(a) => profile_cmd(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
