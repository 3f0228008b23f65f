use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Result};
use clap::{Args, Parser, Subcommand};

use infgen_core::checkpoint::Checkpoint;
use infgen_core::DType;
use infgen_core::codec::{LatentMap, VaePretrainer};
use infgen_core::config::RunConfig;
use infgen_core::decoder::TargetResolution;
use infgen_core::error::Error as CoreError;
use infgen_core::extrapolation::{plan_schedule, run_extrapolation, validate_against_limits, ScaleLimits};
use infgen_core::image::Image;
use infgen_core::latency::{fit_latency, measure_decode_latency};
use infgen_core::metrics::{evaluate_pairs, MetricReport};
use infgen_core::model::{trainer_state, InfGen, VaeModel};
use infgen_core::params::split_seed;
use infgen_core::training::data::{load_png_dir, sample_training_batch, synthetic_dataset};
use infgen_core::training::trainer::step_seed;
use infgen_core::training::Trainer;

use crate::paths::{out_dir, output_path};

const DTYPE: DType = DType::F32;

/// Arbitrary-resolution latent decoder: training, decoding and evaluation.
#[derive(Debug, Parser)]
#[command(name = "infgen", version)]
pub struct Cli {
    /// Run configuration file (`key = value` lines). Defaults apply when absent.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Override a single config entry, e.g. `--set d_model=64`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,

    /// Root seed; overrides the config's `seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Output directory for relative output paths (INFGEN_OUT_DIR wins over this).
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pretrain the VAE whose encoder is later frozen.
    PretrainVae {
        #[arg(long, default_value = "vae.ckpt")]
        output: PathBuf,
        /// Override the configured number of steps.
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long, default_value = "vae_log.jsonl")]
        log: PathBuf,
    },
    /// Train the decoder against a frozen pretrained encoder.
    Train {
        /// Pretrained VAE checkpoint (required unless resuming).
        #[arg(long)]
        vae: Option<PathBuf>,
        /// Continue from a decoder checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long, default_value = "model.ckpt")]
        output: PathBuf,
        #[arg(long, default_value = "train_log.jsonl")]
        log: PathBuf,
        /// Stop after this many steps in this invocation.
        #[arg(long)]
        max_steps: Option<u64>,
        /// Accept checkpoints written under a different architecture config.
        #[arg(long)]
        force: bool,
    },
    /// Decode one latent at an arbitrary resolution.
    Decode {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        source: LatentSource,
        #[arg(long)]
        height: usize,
        #[arg(long)]
        width: usize,
        #[arg(long, default_value = "decoded.png")]
        output: PathBuf,
        /// Also write the latent that was decoded.
        #[arg(long)]
        save_latent: Option<PathBuf>,
    },
    /// Reach a resolution beyond the training range by repeated re-encoding.
    Extrapolate {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        source: LatentSource,
        /// Final size as HxW.
        #[arg(long, value_parser = parse_dims)]
        target: (usize, usize),
        /// Base (first decode) size as HxW; defaults to the encoder input size.
        #[arg(long, value_parser = parse_dims)]
        base: Option<(usize, usize)>,
        /// Largest per-step scale factor; defaults to the config value.
        #[arg(long)]
        cap: Option<f64>,
        #[arg(long, default_value = "extrapolated.png")]
        output: PathBuf,
        /// Write every step's image next to the output.
        #[arg(long)]
        save_intermediates: bool,
    },
    /// Compare two directories of same-named PNGs.
    Eval {
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        generated: PathBuf,
        /// Patch side for the distribution distances; defaults to the config value.
        #[arg(long)]
        patch: Option<usize>,
        #[arg(long, default_value = "eval")]
        run_id: String,
        #[arg(long, default_value = "metrics.txt")]
        output: PathBuf,
    },
    /// Decode latency against output resolution.
    Bench {
        /// Optional decoder checkpoint; a freshly initialized model is timed otherwise.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        force: bool,
        /// Square output sides to time.
        #[arg(long, value_delimiter = ',', default_value = "64,128,192,256")]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
        #[arg(long, default_value = "bench.txt")]
        output: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Decoder checkpoint written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Accept a checkpoint written under a different architecture config.
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct LatentSource {
    /// Latent file written by `--save-latent`.
    #[arg(long)]
    latent: Option<PathBuf>,
    /// Encode this PNG (resized to the encoder input size).
    #[arg(long)]
    image: Option<PathBuf>,
    /// Standard-normal latent at the encoder's latent size.
    #[arg(long)]
    latent_seed: Option<u64>,
}

fn parse_dims(s: &str) -> std::result::Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected HxW, got {s:?}"))?;
    let p = |v: &str| v.trim().parse::<usize>().map_err(|_| format!("bad dimension {v:?}"));
    Ok((p(h)?, p(w)?))
}

/// Failure class name and exit code.
pub fn classify(e: &anyhow::Error) -> (&'static str, u8) {
    match e.downcast_ref::<CoreError>() {
        Some(c) => {
            let class = c.class();
            let code = match class {
                "bad-config" => 3,
                "missing-file" => 4,
                "shape-mismatch" => 5,
                "non-finite-loss" => 6,
                "checkpoint" => 7,
                "invalid-argument" => 8,
                _ => 1,
            };
            (class, code)
        }
        None => ("error", 1),
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut run = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for o in &cli.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| CoreError::Config(format!("--set expects KEY=VALUE, got {o:?}")))?;
        run.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = cli.seed {
        run.seed = seed;
    }
    run.validate()?;
    Ok(run)
}

struct Ctx {
    run: RunConfig,
    out_dir: PathBuf,
}

impl Ctx {
    fn out(&self, p: &Path) -> PathBuf {
        output_path(&self.out_dir, p)
    }

    fn init_seed(&self) -> u64 {
        split_seed(self.run.seed, "init")
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let run = load_config(&cli)?;
    let ctx = Ctx {
        out_dir: out_dir(cli.out_dir.as_deref(), &run.out_dir),
        run,
    };
    match cli.command {
        Command::PretrainVae { output, steps, log } => pretrain_vae(&ctx, &output, steps, &log),
        Command::Train {
            vae,
            resume,
            output,
            log,
            max_steps,
            force,
        } => train(&ctx, vae.as_deref(), resume.as_deref(), &output, &log, max_steps, force),
        Command::Decode {
            model,
            source,
            height,
            width,
            output,
            save_latent,
        } => decode(&ctx, &model, &source, (height, width), &output, save_latent.as_deref()),
        Command::Extrapolate {
            model,
            source,
            target,
            base,
            cap,
            output,
            save_intermediates,
        } => extrapolate(&ctx, &model, &source, target, base, cap, &output, save_intermediates),
        Command::Eval {
            reference,
            generated,
            patch,
            run_id,
            output,
        } => eval(&ctx, &reference, &generated, patch, &run_id, &output),
        Command::Bench {
            checkpoint,
            force,
            sizes,
            repeats,
            output,
        } => bench(&ctx, checkpoint.as_deref(), force, &sizes, repeats, &output),
    }
}

fn training_images(run: &RunConfig) -> Result<Vec<Image>> {
    match &run.data_dir {
        Some(dir) => {
            let images: Vec<Image> = load_png_dir(dir)?.into_iter().map(|(_, im)| im).collect();
            if images.is_empty() {
                bail!(CoreError::InvalidArgument(format!("no PNG files in {}", dir.display())));
            }
            Ok(images)
        }
        None => Ok(synthetic_dataset(
            run.synthetic_images,
            run.synthetic_size,
            run.synthetic_size,
            split_seed(run.seed, "dataset"),
        )?),
    }
}

fn create_log(path: &Path, append: bool) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
    }
    let file = OpenOptions::new()
        .create(true)
        .write(true)
        .append(append)
        .truncate(!append)
        .open(path)
        .map_err(|e| CoreError::io(path, e))?;
    Ok(BufWriter::new(file))
}

fn write_line(log: &mut BufWriter<File>, line: &str) -> Result<()> {
    writeln!(log, "{line}")?;
    log.flush()?;
    Ok(())
}

fn pretrain_vae(ctx: &Ctx, output: &Path, steps: Option<u64>, log: &Path) -> Result<()> {
    let run = &ctx.run;
    let images = training_images(run)?;
    let vae = VaeModel::new(&run.model, ctx.init_seed(), DTYPE)?;
    let mut pre = VaePretrainer::new(&vae.store, run.vae.beta, run.vae.lr)?;
    let steps = steps.unwrap_or(run.vae.steps);
    let data_seed = split_seed(run.seed, "vae-data");
    let noise_seed = split_seed(run.seed, "vae-reparam");
    let mut log = create_log(&ctx.out(log), false)?;
    let mut last = None;
    for step in 0..steps {
        let pairs = sample_training_batch(
            &images,
            &run.train.stage1,
            run.vae.batch,
            run.model.input_size,
            step_seed(data_seed, "vae", step),
        )?;
        let batch: Vec<Image> = pairs.into_iter().map(|p| p.input_image).collect();
        let loss = pre.step(&vae.vae, &batch, step_seed(noise_seed, "vae", step))?;
        let line = serde_json::json!({"step": step, "l1": loss.l1, "kl": loss.kl, "total": loss.total});
        write_line(&mut log, &line.to_string())?;
        last = Some(loss);
    }
    let path = ctx.out(output);
    vae.to_checkpoint(run, steps)?.save(&path)?;
    match last {
        Some(l) => println!("pretrain-vae: {steps} steps, l1={:.6} kl={:.6}, wrote {}", l.l1, l.kl, path.display()),
        None => println!("pretrain-vae: 0 steps, wrote {}", path.display()),
    }
    Ok(())
}

fn load_checked(path: &Path, run: &RunConfig, force: bool) -> Result<Checkpoint> {
    let ckpt = Checkpoint::load(path)?;
    ckpt.check_digest(&run.digest(), force)?;
    Ok(ckpt)
}

fn train(
    ctx: &Ctx,
    vae: Option<&Path>,
    resume: Option<&Path>,
    output: &Path,
    log: &Path,
    max_steps: Option<u64>,
    force: bool,
) -> Result<()> {
    let run = &ctx.run;
    let model = InfGen::new(&run.model, ctx.init_seed(), DTYPE)?;
    let mut trainer = Trainer::new(&model, &run.train, split_seed(run.seed, "train"))?;
    match (resume, vae) {
        (Some(path), _) => {
            let ckpt = load_checked(path, run, force)?;
            model.load_checkpoint(&ckpt)?;
            let state = trainer_state(&ckpt)?
                .ok_or_else(|| CoreError::Checkpoint("checkpoint has no optimizer state to resume".into()))?;
            trainer.import_state(&state)?;
        }
        (None, Some(path)) => {
            let ckpt = load_checked(path, run, force)?;
            let vae = VaeModel::new(&run.model, ctx.init_seed(), DTYPE)?;
            vae.load_checkpoint(&ckpt)?;
            model.load_encoder_from(&vae.store)?;
        }
        (None, None) => bail!(CoreError::InvalidArgument(
            "train needs --vae (a pretrained encoder) or --resume".into()
        )),
    }
    let images = training_images(run)?;
    let mut log = create_log(&ctx.out(log), resume.is_some())?;
    let limit = max_steps.unwrap_or(u64::MAX);
    let mut ran = 0;
    while !trainer.is_finished() && ran < limit {
        let batch = trainer.next_batch(&images, run.model.input_size)?;
        let record = trainer.train_step(&model, &batch)?;
        if record.step % run.train.log_every == 0 {
            write_line(&mut log, &record.to_json_line())?;
        }
        ran += 1;
    }
    let path = ctx.out(output);
    model.to_checkpoint(run, Some(&trainer))?.save(&path)?;
    println!(
        "train: ran {ran} steps, now at step {} of {}, wrote {}",
        trainer.step(),
        run.train.total_steps(),
        path.display()
    );
    Ok(())
}

fn load_model(ctx: &Ctx, args: &ModelArgs) -> Result<InfGen> {
    let model = InfGen::new(&ctx.run.model, ctx.init_seed(), DTYPE)?;
    let ckpt = load_checked(&args.checkpoint, &ctx.run, args.force)?;
    model.load_checkpoint(&ckpt)?;
    Ok(model)
}

fn source_latent(ctx: &Ctx, model: &InfGen, source: &LatentSource) -> Result<LatentMap> {
    if let Some(p) = &source.latent {
        return Ok(LatentMap::load(p, DTYPE)?);
    }
    if let Some(p) = &source.image {
        let image = Image::load_png(p)?;
        return Ok(model.encode_images(&[image])?.mean());
    }
    let seed = source
        .latent_seed
        .ok_or_else(|| anyhow!("one of --latent, --image or --latent-seed is required"))?;
    let side = ctx.run.model.latent_side();
    Ok(LatentMap::random(1, ctx.run.model.latent_channels, side, side, seed, DTYPE)?)
}

fn decode(
    ctx: &Ctx,
    args: &ModelArgs,
    source: &LatentSource,
    (h, w): (usize, usize),
    output: &Path,
    save_latent: Option<&Path>,
) -> Result<()> {
    let model = load_model(ctx, args)?;
    let z = source_latent(ctx, &model, source)?;
    let t = TargetResolution::bounded(h, w, ctx.run.model.max_res)?;
    let image = model.decoder.decode_image(&z, t)?;
    let path = ctx.out(output);
    image.save_png(&path)?;
    if let Some(p) = save_latent {
        z.save(ctx.out(p))?;
    }
    println!("decode: {h}x{w} -> {}", path.display());
    Ok(())
}

/// Envelope of the configured model: trained sides span both stages, reliable
/// up to twice the largest trained side.
fn model_limits(run: &RunConfig) -> Result<ScaleLimits> {
    let t = &run.train;
    let base = run.model.input_size;
    let lo = t.stage1.min_side.min(t.stage2.min_side);
    let hi = t.stage1.max_side.max(t.stage2.max_side);
    let reliable_hi = 2 * hi;
    let scale = (reliable_hi as f64 / base as f64).powi(2);
    let side = run.model.latent_side();
    Ok(ScaleLimits::new((side, side), (lo, hi), (lo, reliable_hi), scale.max(1.0))?)
}

#[allow(clippy::too_many_arguments)]
fn extrapolate(
    ctx: &Ctx,
    args: &ModelArgs,
    source: &LatentSource,
    target: (usize, usize),
    base: Option<(usize, usize)>,
    cap: Option<f64>,
    output: &Path,
    save_intermediates: bool,
) -> Result<()> {
    let model = load_model(ctx, args)?;
    let z = source_latent(ctx, &model, source)?;
    let base = base.unwrap_or((ctx.run.model.input_size, ctx.run.model.input_size));
    let plan = plan_schedule(base, target, cap.unwrap_or(ctx.run.extrapolation_cap))?;
    println!("plan: {plan}");
    let res: Vec<String> = plan.resolutions().iter().map(|(h, w)| format!("{h}x{w}")).collect();
    println!("resolutions: {}x{} -> {}", base.0, base.1, res.join(" -> "));
    for w in validate_against_limits(&plan, &model_limits(&ctx.run)?) {
        eprintln!("warning: {w}");
    }
    let path = ctx.out(output);
    let stem = path.with_extension("");
    let image = run_extrapolation(&model, &z, &plan, |i, im| {
        if save_intermediates {
            im.save_png(format!("{}_step{i}.png", stem.display()))?;
        }
        Ok(())
    })?;
    image.save_png(&path)?;
    println!("extrapolate: {}x{} -> {}", image.height(), image.width(), path.display());
    Ok(())
}

fn eval(
    ctx: &Ctx,
    reference: &Path,
    generated: &Path,
    patch: Option<usize>,
    run_id: &str,
    output: &Path,
) -> Result<()> {
    let refs = load_png_dir(reference)?;
    let gens = load_png_dir(generated)?;
    let ref_names: Vec<&str> = refs.iter().map(|(n, _)| n.as_str()).collect();
    let gen_names: Vec<&str> = gens.iter().map(|(n, _)| n.as_str()).collect();
    if ref_names != gen_names {
        bail!(CoreError::InvalidArgument(format!(
            "directories must hold the same PNG names ({} vs {} files)",
            ref_names.len(),
            gen_names.len()
        )));
    }
    let r: Vec<Image> = refs.into_iter().map(|(_, i)| i).collect();
    let g: Vec<Image> = gens.into_iter().map(|(_, i)| i).collect();
    let patch = patch.unwrap_or(ctx.run.patch_size);
    let metrics = evaluate_pairs(&r, &g, patch)?;
    let mut report = MetricReport {
        run_id: run_id.to_string(),
        config_digest: ctx.run.digest_hex(),
        metrics,
        extra: Default::default(),
    };
    report.extra.insert("images".into(), r.len().to_string());
    report.extra.insert("patch".into(), patch.to_string());
    let text = report.to_text();
    let path = ctx.out(output);
    write_file(&path, text.as_bytes())?;
    print!("{text}");
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| CoreError::io(path, e))?;
    Ok(())
}

/// Power-law exponent range expected for decode time against pixel count.
pub const EXPECTED_EXPONENT: (f64, f64) = (0.8, 1.3);

fn bench(
    ctx: &Ctx,
    checkpoint: Option<&Path>,
    force: bool,
    sizes: &[usize],
    repeats: usize,
    output: &Path,
) -> Result<()> {
    let model = InfGen::new(&ctx.run.model, ctx.init_seed(), DTYPE)?;
    if let Some(p) = checkpoint {
        model.load_checkpoint(&load_checked(p, &ctx.run, force)?)?;
    }
    let side = ctx.run.model.latent_side();
    let z = LatentMap::random(1, ctx.run.model.latent_channels, side, side, ctx.run.seed, DTYPE)?;
    let dims: Vec<(usize, usize)> = sizes.iter().map(|&s| (s, s)).collect();
    for &(h, w) in &dims {
        TargetResolution::bounded(h, w, ctx.run.model.max_res)?;
    }
    let points = measure_decode_latency(&model.decoder, &z, &dims, repeats)?;
    let mut text = String::from("height width pixels seconds\n");
    for p in &points {
        text.push_str(&format!("{} {} {} {:.6}\n", p.height, p.width, p.pixels(), p.seconds));
    }
    let fit = fit_latency(&points)?;
    let ok = (EXPECTED_EXPONENT.0..=EXPECTED_EXPONENT.1).contains(&fit.exponent);
    text.push_str(&format!(
        "fit: seconds = {:.3e} * pixels^{:.4} (r2 = {:.4})\nexponent_in_range[{}, {}]: {}\n",
        fit.coefficient,
        fit.exponent,
        fit.r_squared,
        EXPECTED_EXPONENT.0,
        EXPECTED_EXPONENT.1,
        if ok { "pass" } else { "fail" }
    ));
    write_file(&ctx.out(output), text.as_bytes())?;
    print!("{text}");
    Ok(())
}
