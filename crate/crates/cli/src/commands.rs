//! One function per subcommand. Each resolves its configuration, runs the
//! corresponding library pipeline stage, writes its artifacts under the
//! output directory, and prints a short summary to `out`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::Args;

use dp2vae::accountant::{eps_for_training, eps_for_training_at_rate, PrivacyParams, PrivacySpend};
use dp2vae::cvae::{self, CvaeConfig};
use dp2vae::data::idx::{write_idx_images, write_idx_labels};
use dp2vae::data::{self, Checkpoint, LabeledDataset, Provenance};
use dp2vae::eval::{
    evaluate_over_seeds, fit_features, frechet_distance, gaussian_fit, ClassifierKind,
    FeatureKind, DEFAULT_EVAL_RUNS, DEFAULT_FEATURE_DIM,
};
use dp2vae::numerics::RngStream;
use dp2vae::training::{
    audit_step_divergence, partition_dataset, sample_batch, stage1_pretrain, streams,
    EncoderPool, Partition, Stage1Config, Stage2Config, Stage2Observer, Stage2State, StepTrace,
};
use dp2vae::{Error, Result};

use crate::config::{
    banner, resolve, resolve_path, stamp_checkpoint, write_echo, Amplification, FileConfig,
    RunConfig,
};

// Desk-scale defaults shared across subcommands.
const DEFAULT_K: usize = 20;
const DEFAULT_BATCH: usize = 32;
const DEFAULT_PRETRAIN_STEPS: u64 = 300;
const DEFAULT_STEPS: u64 = 500;
const DEFAULT_LR: f64 = 1e-3;
const DEFAULT_CLIP: f64 = 1.0;
const DEFAULT_SIGMA: f64 = 8.0;
const DEFAULT_DELTA: f64 = 1e-5;
const DEFAULT_LATENT: usize = 8;
const DEFAULT_SEED: u64 = 1;
const DEFAULT_PER_CLASS: usize = 200;
const DEFAULT_ALPHA: f64 = 8.0;
const DEFAULT_TRIALS: u64 = 100;

/// Settings shared by every subcommand. All optional here; gaps are filled
/// from the config file and then the defaults above.
#[derive(Debug, Args)]
pub struct SharedArgs {
    /// Flat key = value configuration file.
    #[arg(long, env = "DP2VAE_CONFIG", global = true)]
    pub config: Option<PathBuf>,

    /// Output directory for artifacts.
    #[arg(long, env = "DP2VAE_OUT", global = true)]
    pub out: Option<PathBuf>,

    /// Number of disjoint partitions / pretrained encoders.
    #[arg(long, visible_alias = "K", env = "DP2VAE_K", global = true)]
    pub k: Option<usize>,

    /// Batch size for both training stages.
    #[arg(long, visible_alias = "B", env = "DP2VAE_BATCH_SIZE", global = true)]
    pub batch_size: Option<usize>,

    /// Pretraining steps per encoder.
    #[arg(long, env = "DP2VAE_PRETRAIN_STEPS", global = true)]
    pub pretrain_steps: Option<u64>,

    /// Private decoder training steps.
    #[arg(long, visible_alias = "T", env = "DP2VAE_STEPS", global = true)]
    pub steps: Option<u64>,

    /// Learning rate for encoder pretraining.
    #[arg(long, env = "DP2VAE_PRETRAIN_LR", global = true, allow_negative_numbers = true)]
    pub pretrain_lr: Option<f64>,

    /// Learning rate for private training.
    #[arg(long, env = "DP2VAE_LR", global = true, allow_negative_numbers = true)]
    pub lr: Option<f64>,

    /// Gradient clipping bound.
    #[arg(long, visible_alias = "C", env = "DP2VAE_CLIP", global = true, allow_negative_numbers = true)]
    pub clip: Option<f64>,

    /// Noise multiplier for the private decoder updates.
    #[arg(long, env = "DP2VAE_SIGMA", global = true, allow_negative_numbers = true)]
    pub sigma: Option<f64>,

    /// Target failure probability for the (epsilon, delta) report.
    #[arg(long, env = "DP2VAE_DELTA", global = true, allow_negative_numbers = true)]
    pub delta: Option<f64>,

    /// Latent dimension of the generative model.
    #[arg(long, env = "DP2VAE_LATENT_DIM", global = true)]
    pub latent_dim: Option<usize>,

    /// Root seed; every run is a deterministic function of it.
    #[arg(long, env = "DP2VAE_SEED", global = true)]
    pub seed: Option<u64>,

    /// Keep encoders fixed during private training.
    #[arg(
        long,
        env = "DP2VAE_FREEZE_ENCODERS",
        global = true,
        num_args = 0..=1,
        default_missing_value = "true"
    )]
    pub freeze_encoders: Option<bool>,

    /// Participation rate used for amplification: `k` (1/K) or `batch` (B/|D_k|).
    #[arg(long, env = "DP2VAE_AMPLIFICATION", global = true)]
    pub amplification: Option<Amplification>,

    /// Worker threads for pretraining (0 = all available cores).
    #[arg(long, env = "DP2VAE_THREADS", global = true)]
    pub threads: Option<usize>,
}

impl SharedArgs {
    pub fn file_config(&self) -> Result<FileConfig> {
        match &self.config {
            Some(path) => FileConfig::load(path),
            None => Ok(FileConfig::empty()),
        }
    }

    /// Resolves the shared settings through flag > env > file > default.
    pub fn resolve(&self, file: &FileConfig) -> Result<RunConfig> {
        let config = RunConfig {
            out: resolve_path(
                self.out.clone(),
                file,
                "out",
                Some(PathBuf::from("out")),
            )?,
            k: resolve(self.k, file, "k", DEFAULT_K)?,
            batch_size: resolve(self.batch_size, file, "batch-size", DEFAULT_BATCH)?,
            pretrain_steps: resolve(self.pretrain_steps, file, "pretrain-steps", DEFAULT_PRETRAIN_STEPS)?,
            steps: resolve(self.steps, file, "steps", DEFAULT_STEPS)?,
            pretrain_lr: resolve(self.pretrain_lr, file, "pretrain-lr", DEFAULT_LR)?,
            lr: resolve(self.lr, file, "lr", DEFAULT_LR)?,
            clip: resolve(self.clip, file, "clip", DEFAULT_CLIP)?,
            sigma: resolve(self.sigma, file, "sigma", DEFAULT_SIGMA)?,
            delta: resolve(self.delta, file, "delta", DEFAULT_DELTA)?,
            latent_dim: resolve(self.latent_dim, file, "latent-dim", DEFAULT_LATENT)?,
            seed: resolve(self.seed, file, "seed", DEFAULT_SEED)?,
            freeze_encoders: resolve(self.freeze_encoders, file, "freeze-encoders", false)?,
            amplification: {
                let name: String = resolve(
                    self.amplification.map(|a| a.name().to_string()),
                    file,
                    "amplification",
                    "k".to_string(),
                )?;
                name.parse::<Amplification>()
                    .map_err(|e| Error::invalid_parameter("amplification", e))?
            },
            threads: resolve(self.threads, file, "threads", 0)?,
        };
        config.validate()?;
        Ok(config)
    }
}

fn ensure_out_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path)
        .map_err(|e| Error::io(format!("creating output directory {}", path.display()), e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))
}

fn load_dataset(images: &Path, labels: &Path, provenance: Provenance) -> Result<LabeledDataset> {
    LabeledDataset::from_idx_pair(images, labels, provenance)
}

/// Resolve a path-valued option that defaults to a file inside `out`.
fn artifact_path(
    flag: Option<PathBuf>,
    file: &FileConfig,
    key: &'static str,
    out: &Path,
    name: &str,
) -> Result<PathBuf> {
    resolve_path(flag, file, key, Some(out.join(name)))
}

fn spend_report(config: &RunConfig, q: f64, spend: &PrivacySpend) -> String {
    let mut text = String::new();
    text.push_str(&format!("epsilon = {}\n", spend.epsilon));
    text.push_str(&format!("delta = {}\n", spend.delta));
    text.push_str(&format!("best_order = {}\n", spend.best_order));
    text.push_str(&format!("steps = {}\n", spend.steps));
    text.push_str(&format!("participation_rate = {q}\n"));
    text.push_str(&format!("amplification = {}\n", config.amplification.name()));
    for (k, v) in config.to_entries() {
        text.push_str(&format!("config.{k} = {v}\n"));
    }
    text
}

// ----------------------------------------------------------------------------
// partition

#[derive(Debug, Args)]
pub struct PartitionArgs {
    /// IDX image file of the sensitive training set.
    #[arg(long, env = "DP2VAE_IMAGES")]
    pub images: Option<PathBuf>,

    /// IDX label file matching `--images`.
    #[arg(long, env = "DP2VAE_LABELS")]
    pub labels: Option<PathBuf>,
}

pub fn run_partition(
    shared: &SharedArgs,
    args: &PartitionArgs,
    out: &mut dyn Write,
) -> Result<()> {
    let file = shared.file_config()?;
    let config = shared.resolve(&file)?;
    let images = resolve_path(args.images.clone(), &file, "images", None)?;
    let labels = resolve_path(args.labels.clone(), &file, "labels", None)?;
    let dataset = load_dataset(&images, &labels, Provenance::Real)?;

    let partition = partition_dataset(dataset.len(), config.k, config.seed)?;
    ensure_out_dir(&config.out)?;
    let extras = vec![
        ("images".to_string(), images.display().to_string()),
        ("labels".to_string(), labels.display().to_string()),
    ];
    let path = config.out.join("partition.txt");
    let mut text = banner(&config, &extras);
    text.push('\n');
    text.push_str(&partition.to_text());
    write_text(&path, &text)?;
    write_echo(&config.out, &config, &extras)?;

    let sizes: Vec<usize> = partition.subsets().iter().map(Vec::len).collect();
    let smallest = sizes.iter().min().copied().unwrap_or(0);
    writeln!(
        out,
        "partitioned {} records into {} subsets (smallest {}) -> {}",
        dataset.len(),
        config.k,
        smallest,
        path.display()
    )
    .ok();
    Ok(())
}

/// Partition files carry the config banner; strip comments before parsing.
fn load_partition(path: &Path) -> Result<Partition> {
    let text = read_text(path)?;
    let body: String = text
        .lines()
        .filter(|l| !l.trim_start().starts_with('#'))
        .collect::<Vec<_>>()
        .join("\n");
    Partition::from_text(&body)
}

// ----------------------------------------------------------------------------
// pretrain

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[arg(long, env = "DP2VAE_IMAGES")]
    pub images: Option<PathBuf>,

    #[arg(long, env = "DP2VAE_LABELS")]
    pub labels: Option<PathBuf>,

    /// Partition file produced by `partition`.
    #[arg(long, env = "DP2VAE_PARTITION")]
    pub partition: Option<PathBuf>,
}

pub fn run_pretrain(shared: &SharedArgs, args: &PretrainArgs, out: &mut dyn Write) -> Result<()> {
    let file = shared.file_config()?;
    let config = shared.resolve(&file)?;
    let images = resolve_path(args.images.clone(), &file, "images", None)?;
    let labels = resolve_path(args.labels.clone(), &file, "labels", None)?;
    let dataset = load_dataset(&images, &labels, Provenance::Real)?;

    let partition_path = artifact_path(
        args.partition.clone(),
        &file,
        "partition",
        &config.out,
        "partition.txt",
    )?;
    let partition = load_partition(&partition_path)?;
    partition.validate_for(dataset.len())?;

    let cvae = CvaeConfig {
        input_dim: dataset.image_dim(),
        latent_dim: config.latent_dim,
        n_classes: data::N_CLASSES,
        encoder_hidden: vec![256, 128],
        decoder_hidden: vec![128, 256],
    };
    let stage1 = Stage1Config {
        cvae,
        batch_size: config.batch_size,
        steps: config.pretrain_steps,
        lr: config.pretrain_lr,
        clip_bound: config.clip,
        threads: config.threads,
    };
    let output = stage1_pretrain(&dataset, &partition, &stage1, config.seed)?;

    ensure_out_dir(&config.out)?;
    let extras = vec![
        ("images".to_string(), images.display().to_string()),
        ("labels".to_string(), labels.display().to_string()),
        ("partition".to_string(), partition_path.display().to_string()),
    ];
    let mut ck = output.pool.to_checkpoint()?;
    stamp_checkpoint(&mut ck, &config, &extras);
    let pool_path = config.out.join("pool.ckpt");
    ck.save(&pool_path)?;

    let mut csv = banner(&config, &extras);
    csv.push('\n');
    csv.push_str("k,subset_size,effective_batch,batch_reduced,initial_elbo,final_elbo\n");
    for s in &output.summaries {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            s.k, s.subset_size, s.effective_batch, s.batch_reduced, s.initial_elbo, s.final_elbo
        ));
    }
    write_text(&config.out.join("stage1-summary.csv"), &csv)?;
    write_echo(&config.out, &config, &extras)?;

    let improved = output
        .summaries
        .iter()
        .filter(|s| s.final_elbo > s.initial_elbo)
        .count();
    writeln!(
        out,
        "pretrained {} encoders over {} steps each ({} improved ELBO) -> {}",
        output.pool.len(),
        config.pretrain_steps,
        improved,
        pool_path.display()
    )
    .ok();
    Ok(())
}

// ----------------------------------------------------------------------------
// train

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, env = "DP2VAE_IMAGES")]
    pub images: Option<PathBuf>,

    #[arg(long, env = "DP2VAE_LABELS")]
    pub labels: Option<PathBuf>,

    #[arg(long, env = "DP2VAE_PARTITION")]
    pub partition: Option<PathBuf>,

    /// Encoder pool checkpoint produced by `pretrain`.
    #[arg(long, env = "DP2VAE_POOL")]
    pub pool: Option<PathBuf>,

    /// Resume from this stage-2 checkpoint instead of starting fresh.
    #[arg(long, env = "DP2VAE_RESUME")]
    pub resume: Option<PathBuf>,

    /// Write an intermediate checkpoint every N steps (0 = only at the end).
    #[arg(long, env = "DP2VAE_CHECKPOINT_EVERY")]
    pub checkpoint_every: Option<u64>,
}

/// Appends one metrics row per completed step.
struct MetricsWriter {
    rows: Vec<String>,
}

impl Stage2Observer for MetricsWriter {
    fn on_step(&mut self, trace: &StepTrace) {
        self.rows.push(dp2vae::training::stage2::metrics_csv_row(
            2,
            trace.step,
            trace.encoder_index,
            trace.mean_elbo,
            trace.grad_norm_pre_clip,
            trace.grad_norm_post_clip,
            trace.epsilon,
        ));
    }
}

/// On resume, flags that contradict the checkpoint are usage errors; config
/// file values are silently superseded by the checkpoint.
fn reject_resume_conflicts(shared: &SharedArgs, state: &Stage2State) -> Result<()> {
    if let Some(b) = shared.batch_size {
        if b != state.config.batch_size {
            return Err(Error::invalid_parameter(
                "batch-size",
                format!(
                    "resume checkpoint was trained with batch-size {}, got {b}",
                    state.config.batch_size
                ),
            ));
        }
    }
    if let Some(lr) = shared.lr {
        if lr != state.config.lr {
            return Err(Error::invalid_parameter(
                "lr",
                format!("resume checkpoint was trained with lr {}, got {lr}", state.config.lr),
            ));
        }
    }
    if let Some(f) = shared.freeze_encoders {
        if f != state.config.freeze_encoders {
            return Err(Error::invalid_parameter(
                "freeze-encoders",
                format!(
                    "resume checkpoint was trained with freeze-encoders {}, got {f}",
                    state.config.freeze_encoders
                ),
            ));
        }
    }
    if let Some(sigma) = shared.sigma {
        if sigma != state.privacy.noise_multiplier {
            return Err(Error::invalid_parameter(
                "sigma",
                format!(
                    "resume checkpoint was trained with sigma {}, got {sigma}",
                    state.privacy.noise_multiplier
                ),
            ));
        }
    }
    if let Some(clip) = shared.clip {
        if clip != state.privacy.clip_bound {
            return Err(Error::invalid_parameter(
                "clip",
                format!(
                    "resume checkpoint was trained with clip {}, got {clip}",
                    state.privacy.clip_bound
                ),
            ));
        }
    }
    if let Some(delta) = shared.delta {
        if delta != state.privacy.delta {
            return Err(Error::invalid_parameter(
                "delta",
                format!(
                    "resume checkpoint was trained with delta {}, got {delta}",
                    state.privacy.delta
                ),
            ));
        }
    }
    if let Some(seed) = shared.seed {
        if seed != state.seed() {
            return Err(Error::invalid_parameter(
                "seed",
                format!("resume checkpoint was trained with seed {}, got {seed}", state.seed()),
            ));
        }
    }
    Ok(())
}

pub fn run_train(shared: &SharedArgs, args: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let file = shared.file_config()?;
    let mut config = shared.resolve(&file)?;
    let images = resolve_path(args.images.clone(), &file, "images", None)?;
    let labels = resolve_path(args.labels.clone(), &file, "labels", None)?;
    let dataset = load_dataset(&images, &labels, Provenance::Real)?;

    let partition_path = artifact_path(
        args.partition.clone(),
        &file,
        "partition",
        &config.out,
        "partition.txt",
    )?;
    let partition = load_partition(&partition_path)?;
    partition.validate_for(dataset.len())?;

    let checkpoint_every = resolve(args.checkpoint_every, &file, "checkpoint-every", 0u64)?;

    let mut state = match &args.resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            let state = Stage2State::from_checkpoint(&ck)?;
            reject_resume_conflicts(shared, &state)?;
            if state.step >= config.steps {
                return Err(Error::invalid_parameter(
                    "steps",
                    format!(
                        "checkpoint already has {} completed steps, target is {}",
                        state.step, config.steps
                    ),
                ));
            }
            // The checkpoint's hyperparameters win over file/default values.
            config.batch_size = state.config.batch_size;
            config.lr = state.config.lr;
            config.freeze_encoders = state.config.freeze_encoders;
            config.sigma = state.privacy.noise_multiplier;
            config.clip = state.privacy.clip_bound;
            config.delta = state.privacy.delta;
            config.seed = state.seed();
            config.latent_dim = state.pool.config().latent_dim;
            config.k = state.pool.len();
            state
        }
        None => {
            let pool_path =
                artifact_path(args.pool.clone(), &file, "pool", &config.out, "pool.ckpt")?;
            let pool = EncoderPool::from_checkpoint(&Checkpoint::load(&pool_path)?)?;
            config.latent_dim = pool.config().latent_dim;
            config.k = pool.len();
            let privacy = PrivacyParams {
                clip_bound: config.clip,
                noise_multiplier: config.sigma,
                delta: config.delta,
            };
            let stage2 = Stage2Config {
                batch_size: config.batch_size,
                steps: config.steps,
                lr: config.lr,
                freeze_encoders: config.freeze_encoders,
            };
            Stage2State::new(pool, privacy, stage2, config.seed)?
        }
    };
    state.config.steps = config.steps;

    if partition.k() != state.pool.len() {
        return Err(Error::InvalidState(format!(
            "partition has {} subsets but the pool holds {} encoders",
            partition.k(),
            state.pool.len()
        )));
    }

    ensure_out_dir(&config.out)?;
    let extras = vec![
        ("images".to_string(), images.display().to_string()),
        ("labels".to_string(), labels.display().to_string()),
        ("partition".to_string(), partition_path.display().to_string()),
        ("checkpoint-every".to_string(), checkpoint_every.to_string()),
    ];

    let mut metrics = MetricsWriter { rows: Vec::new() };
    let decoder_path = config.out.join("decoder.ckpt");
    let (img_w, img_h) = (dataset.width(), dataset.height());
    let save_state = |state: &Stage2State| -> Result<()> {
        let mut ck = state.to_checkpoint()?;
        stamp_checkpoint(&mut ck, &config, &extras);
        // Geometry rides in the checkpoint only; it is not a config key.
        ck.set_meta("cli.image-width", img_w.to_string());
        ck.set_meta("cli.image-height", img_h.to_string());
        ck.save(&decoder_path)
    };

    while state.step < state.config.steps {
        let trace = state.step(&dataset, &partition)?;
        metrics.on_step(&trace);
        if checkpoint_every > 0 && state.step % checkpoint_every == 0 {
            save_state(&state)?;
        }
    }
    save_state(&state)?;

    let mut csv = banner(&config, &extras);
    csv.push('\n');
    csv.push_str(dp2vae::training::stage2::METRICS_CSV_HEADER);
    csv.push('\n');
    for row in &metrics.rows {
        csv.push_str(row);
        csv.push('\n');
    }
    write_text(&config.out.join("stage2-metrics.csv"), &csv)?;

    // The state always accounts at rate 1/K; the report may also use the
    // batch rate when requested.
    let q = match config.amplification {
        Amplification::PoolRate => 1.0 / state.pool.len() as f64,
        Amplification::BatchRate => {
            let smallest = partition.subsets().iter().map(Vec::len).min().unwrap_or(0);
            if smallest == 0 {
                return Err(Error::DegenerateData(
                    "batch-rate amplification needs every subset nonempty".into(),
                ));
            }
            (config.batch_size as f64 / smallest as f64).min(1.0)
        }
    };
    let spend = eps_for_training_at_rate(q, config.sigma, state.step, config.delta)?;
    write_text(
        &config.out.join("epsilon-report.txt"),
        &spend_report(&config, q, &spend),
    )?;
    write_echo(&config.out, &config, &extras)?;

    writeln!(
        out,
        "trained decoder for {} private steps: epsilon={} delta={} alpha={} -> {}",
        state.step,
        spend.epsilon,
        spend.delta,
        spend.best_order,
        decoder_path.display()
    )
    .ok();
    Ok(())
}

// ----------------------------------------------------------------------------
// generate

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Stage-2 checkpoint holding the trained decoder.
    #[arg(long, env = "DP2VAE_DECODER")]
    pub decoder: Option<PathBuf>,

    /// Samples to draw per class label.
    #[arg(long, env = "DP2VAE_PER_CLASS")]
    pub per_class: Option<usize>,

    #[arg(long, env = "DP2VAE_SYNTHETIC_IMAGES")]
    pub synthetic_images: Option<PathBuf>,

    #[arg(long, env = "DP2VAE_SYNTHETIC_LABELS")]
    pub synthetic_labels: Option<PathBuf>,

    /// Output image width; defaults to the training width recorded in the
    /// checkpoint, else the square root of the model's input size.
    #[arg(long, env = "DP2VAE_IMAGE_WIDTH")]
    pub image_width: Option<usize>,

    /// Output image height; same default rule as `--image-width`.
    #[arg(long, env = "DP2VAE_IMAGE_HEIGHT")]
    pub image_height: Option<usize>,
}

/// Decide output geometry: explicit flags, then checkpoint metadata, then a
/// perfect square.
fn image_geometry(
    input_dim: usize,
    ck: &Checkpoint,
    width: Option<usize>,
    height: Option<usize>,
) -> Result<(usize, usize)> {
    if let (Some(w), Some(h)) = (width, height) {
        if w * h != input_dim {
            return Err(Error::invalid_parameter(
                "image-width",
                format!("{w}x{h} does not match the model input size {input_dim}"),
            ));
        }
        return Ok((w, h));
    }
    if width.is_some() != height.is_some() {
        return Err(Error::invalid_parameter(
            "image-width",
            "pass both --image-width and --image-height or neither",
        ));
    }
    if let (Some(w), Some(h)) = (
        ck.meta("cli.image-width").and_then(|s| s.parse::<usize>().ok()),
        ck.meta("cli.image-height").and_then(|s| s.parse::<usize>().ok()),
    ) {
        if w * h == input_dim {
            return Ok((w, h));
        }
    }
    let side = (input_dim as f64).sqrt().round() as usize;
    if side * side == input_dim {
        return Ok((side, side));
    }
    Err(Error::invalid_parameter(
        "image-width",
        format!("input size {input_dim} is not square; pass --image-width and --image-height"),
    ))
}

pub fn run_generate(shared: &SharedArgs, args: &GenerateArgs, out: &mut dyn Write) -> Result<()> {
    let file = shared.file_config()?;
    let config = shared.resolve(&file)?;
    let decoder_path = artifact_path(
        args.decoder.clone(),
        &file,
        "decoder",
        &config.out,
        "decoder.ckpt",
    )?;
    let per_class = resolve(args.per_class, &file, "per-class", DEFAULT_PER_CLASS)?;
    if per_class == 0 {
        return Err(Error::invalid_parameter("per-class", "must be at least 1"));
    }

    let ck = Checkpoint::load(&decoder_path)?;
    let state = Stage2State::from_checkpoint(&ck)?;
    let shape = state.pool.config().shape();
    let (width, height) = image_geometry(shape.input_dim, &ck, args.image_width, args.image_height)?;

    let mut rng = RngStream::new(config.seed, streams::GENERATE);
    let total = per_class * shape.n_classes;
    let mut pixels = Vec::with_capacity(total * shape.input_dim);
    let mut labels = Vec::with_capacity(total);
    for class in 0..shape.n_classes {
        for _ in 0..per_class {
            let image = cvae::generate(&state.decoder, shape, class as u8, &mut rng)?;
            pixels.extend_from_slice(&image);
            labels.push(class as u8);
        }
    }

    ensure_out_dir(&config.out)?;
    let images_path = artifact_path(
        args.synthetic_images.clone(),
        &file,
        "synthetic-images",
        &config.out,
        "synthetic-images.idx",
    )?;
    let labels_path = artifact_path(
        args.synthetic_labels.clone(),
        &file,
        "synthetic-labels",
        &config.out,
        "synthetic-labels.idx",
    )?;
    write_idx_images(&images_path, total, height, width, &pixels)?;
    write_idx_labels(&labels_path, &labels)?;

    // IDX has no metadata section, so the embedded config rides in a sidecar.
    let extras = vec![
        ("decoder".to_string(), decoder_path.display().to_string()),
        ("per-class".to_string(), per_class.to_string()),
        ("synthetic-images".to_string(), images_path.display().to_string()),
        ("synthetic-labels".to_string(), labels_path.display().to_string()),
    ];
    let mut sidecar = banner(&config, &extras);
    sidecar.push('\n');
    sidecar.push_str(&format!("count = {total}\n"));
    sidecar.push_str(&format!("width = {width}\n"));
    sidecar.push_str(&format!("height = {height}\n"));
    sidecar.push_str(&format!("decoder_steps = {}\n", state.step));
    sidecar.push_str(&format!("epsilon = {}\n", state.spend.epsilon));
    sidecar.push_str(&format!("delta = {}\n", state.spend.delta));
    write_text(&config.out.join("synthetic-meta.txt"), &sidecar)?;
    write_echo(&config.out, &config, &extras)?;

    writeln!(
        out,
        "generated {total} samples ({per_class} per class, {width}x{height}) -> {}",
        images_path.display()
    )
    .ok();
    Ok(())
}

// ----------------------------------------------------------------------------
// evaluate

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// IDX images of the held-out real test set.
    #[arg(long, env = "DP2VAE_REAL_IMAGES")]
    pub real_images: Option<PathBuf>,

    #[arg(long, env = "DP2VAE_REAL_LABELS")]
    pub real_labels: Option<PathBuf>,

    #[arg(long, env = "DP2VAE_SYNTHETIC_IMAGES")]
    pub synthetic_images: Option<PathBuf>,

    #[arg(long, env = "DP2VAE_SYNTHETIC_LABELS")]
    pub synthetic_labels: Option<PathBuf>,

    /// Feature space for the distribution distance: `pca` or `raw`.
    #[arg(long, env = "DP2VAE_FEATURES")]
    pub features: Option<String>,

    /// Feature dimension for the `pca` map.
    #[arg(long, env = "DP2VAE_FEATURE_DIM")]
    pub feature_dim: Option<usize>,

    /// Downstream model: `logreg`, `mlp`, or `both`.
    #[arg(long, env = "DP2VAE_CLASSIFIER")]
    pub classifier: Option<String>,

    /// Classifier training runs (seeds seed..seed+runs).
    #[arg(long, env = "DP2VAE_RUNS")]
    pub runs: Option<usize>,
}

fn classifier_kinds(name: &str) -> Result<Vec<ClassifierKind>> {
    match name {
        "both" => Ok(vec![ClassifierKind::LogReg, ClassifierKind::Mlp]),
        other => ClassifierKind::from_name(other).map(|k| vec![k]),
    }
}

pub fn run_evaluate(shared: &SharedArgs, args: &EvaluateArgs, out: &mut dyn Write) -> Result<()> {
    let file = shared.file_config()?;
    let config = shared.resolve(&file)?;
    let real_images = resolve_path(args.real_images.clone(), &file, "real-images", None)?;
    let real_labels = resolve_path(args.real_labels.clone(), &file, "real-labels", None)?;
    let syn_images = artifact_path(
        args.synthetic_images.clone(),
        &file,
        "synthetic-images",
        &config.out,
        "synthetic-images.idx",
    )?;
    let syn_labels = artifact_path(
        args.synthetic_labels.clone(),
        &file,
        "synthetic-labels",
        &config.out,
        "synthetic-labels.idx",
    )?;
    let features_name: String = resolve(args.features.clone(), &file, "features", "pca".into())?;
    let feature_kind = FeatureKind::from_name(&features_name)?;
    let feature_dim = resolve(args.feature_dim, &file, "feature-dim", DEFAULT_FEATURE_DIM)?;
    let classifier_name: String =
        resolve(args.classifier.clone(), &file, "classifier", "both".into())?;
    let kinds = classifier_kinds(&classifier_name)?;
    let runs = resolve(args.runs, &file, "runs", DEFAULT_EVAL_RUNS)?;

    let real = load_dataset(&real_images, &real_labels, Provenance::Real)?;
    let synthetic = load_dataset(&syn_images, &syn_labels, Provenance::Synthetic)?;
    if real.image_dim() != synthetic.image_dim() {
        return Err(Error::Shape(format!(
            "real images are {} pixels but synthetic images are {}",
            real.image_dim(),
            synthetic.image_dim()
        )));
    }

    // Features are fitted on real data only, then applied to both sides.
    let map = fit_features(&real, feature_kind, feature_dim)?;
    let real_fit = gaussian_fit(&map.project_dataset(&real)?)?;
    let syn_fit = gaussian_fit(&map.project_dataset(&synthetic)?)?;
    let distance = frechet_distance(&real_fit, &syn_fit)?;

    let mut rows: Vec<(String, f64, String)> = vec![(
        format!("frechet_{}", feature_kind.name()),
        distance,
        "-".to_string(),
    )];
    let mut lines = vec![format!(
        "frechet distance ({} features, dim {}): {distance}",
        feature_kind.name(),
        map.feature_dim()
    )];
    for kind in kinds {
        let report = evaluate_over_seeds(kind, &synthetic, &real, runs, config.seed)?;
        for (seed, run) in report.seeds.iter().zip(&report.runs) {
            rows.push((
                format!("accuracy_{}", kind.name()),
                run.accuracy,
                seed.to_string(),
            ));
        }
        rows.push((
            format!("mean_accuracy_{}", kind.name()),
            report.mean_accuracy,
            "-".to_string(),
        ));
        lines.push(format!(
            "{} accuracy (train synthetic, test real, {} runs): {}",
            kind.name(),
            runs,
            report.mean_accuracy
        ));
    }

    ensure_out_dir(&config.out)?;
    let extras = vec![
        ("real-images".to_string(), real_images.display().to_string()),
        ("real-labels".to_string(), real_labels.display().to_string()),
        ("synthetic-images".to_string(), syn_images.display().to_string()),
        ("synthetic-labels".to_string(), syn_labels.display().to_string()),
        ("features".to_string(), features_name.clone()),
        ("feature-dim".to_string(), map.feature_dim().to_string()),
        ("classifier".to_string(), classifier_name.clone()),
        ("runs".to_string(), runs.to_string()),
    ];
    let mut csv = banner(&config, &extras);
    csv.push('\n');
    csv.push_str("metric,value,seed\n");
    for (metric, value, seed) in &rows {
        csv.push_str(&format!("{metric},{value},{seed}\n"));
    }
    write_text(&config.out.join("evaluation.csv"), &csv)?;
    write_echo(&config.out, &config, &extras)?;

    for line in lines {
        writeln!(out, "{line}").ok();
    }
    Ok(())
}

// ----------------------------------------------------------------------------
// accountant

#[derive(Debug, Args)]
pub struct AccountantArgs {
    /// Subset size |D_k| for `--amplification batch`.
    #[arg(long, env = "DP2VAE_SUBSET_SIZE")]
    pub subset_size: Option<usize>,
}

pub fn run_accountant(
    shared: &SharedArgs,
    args: &AccountantArgs,
    out: &mut dyn Write,
) -> Result<()> {
    let file = shared.file_config()?;
    let config = shared.resolve(&file)?;
    let spend = match config.amplification {
        Amplification::PoolRate => {
            eps_for_training(config.k, config.sigma, config.steps, config.delta)?
        }
        Amplification::BatchRate => {
            let subset = resolve(args.subset_size, &file, "subset-size", 0usize)?;
            if subset == 0 {
                return Err(Error::invalid_parameter(
                    "subset-size",
                    "required for --amplification batch",
                ));
            }
            let q = (config.batch_size as f64 / subset as f64).min(1.0);
            eps_for_training_at_rate(q, config.sigma, config.steps, config.delta)?
        }
    };
    writeln!(
        out,
        "epsilon={} delta={} alpha={}",
        spend.epsilon, spend.delta, spend.best_order
    )
    .ok();
    Ok(())
}

// ----------------------------------------------------------------------------
// audit

#[derive(Debug, Args)]
pub struct AuditArgs {
    #[arg(long, env = "DP2VAE_IMAGES")]
    pub images: Option<PathBuf>,

    #[arg(long, env = "DP2VAE_LABELS")]
    pub labels: Option<PathBuf>,

    #[arg(long, env = "DP2VAE_PARTITION")]
    pub partition: Option<PathBuf>,

    #[arg(long, env = "DP2VAE_POOL")]
    pub pool: Option<PathBuf>,

    /// Renyi order to audit at.
    #[arg(long, env = "DP2VAE_ALPHA", allow_negative_numbers = true)]
    pub alpha: Option<f64>,

    /// Number of random adjacent batch pairs to replay.
    #[arg(long, env = "DP2VAE_TRIALS")]
    pub trials: Option<u64>,
}

pub fn run_audit(shared: &SharedArgs, args: &AuditArgs, out: &mut dyn Write) -> Result<()> {
    let file = shared.file_config()?;
    let config = shared.resolve(&file)?;
    let images = resolve_path(args.images.clone(), &file, "images", None)?;
    let labels = resolve_path(args.labels.clone(), &file, "labels", None)?;
    let dataset = load_dataset(&images, &labels, Provenance::Real)?;
    if dataset.is_empty() {
        return Err(Error::InsufficientData("auditing needs a nonempty dataset".into()));
    }

    let partition_path = artifact_path(
        args.partition.clone(),
        &file,
        "partition",
        &config.out,
        "partition.txt",
    )?;
    let partition = load_partition(&partition_path)?;
    partition.validate_for(dataset.len())?;

    let pool_path = artifact_path(args.pool.clone(), &file, "pool", &config.out, "pool.ckpt")?;
    let pool = EncoderPool::from_checkpoint(&Checkpoint::load(&pool_path)?)?;
    if partition.k() != pool.len() {
        return Err(Error::InvalidState(format!(
            "partition has {} subsets but the pool holds {} encoders",
            partition.k(),
            pool.len()
        )));
    }

    let alpha = resolve(args.alpha, &file, "alpha", DEFAULT_ALPHA)?;
    let trials = resolve(args.trials, &file, "trials", DEFAULT_TRIALS)?;
    if trials == 0 {
        return Err(Error::invalid_parameter("trials", "must be at least 1"));
    }
    let privacy = PrivacyParams {
        clip_bound: config.clip,
        noise_multiplier: config.sigma,
        delta: config.delta,
    };
    privacy.validate()?;

    let mut init_rng = RngStream::new(config.seed, streams::STAGE2_DECODER_INIT);
    let decoder = pool.config().init_decoder(&mut init_rng)?;

    let mut rng = RngStream::new(config.seed, streams::AUDIT_BATCH);
    let mut max_divergence = 0.0f64;
    let mut bound = 0.0f64;
    for trial in 0..trials {
        // Draw a subset with at least one record, then an in-subset batch.
        let k = loop {
            let k = rng.next_below(partition.k() as u64) as usize;
            if !partition.subset(k).is_empty() {
                break k;
            }
        };
        let subset = partition.subset(k);
        let effective = config.batch_size.min(subset.len());
        let positions = sample_batch(&mut rng, subset.len(), effective)?;
        let batch: Vec<usize> = positions.iter().map(|&p| subset[p]).collect();

        // The adjacent batch swaps one position for another record in the
        // same subset, or repeats the batch when the subset has no spare.
        let mut adjacent = batch.clone();
        let swap_at = rng.next_below(effective as u64) as usize;
        let replacement = subset[rng.next_below(subset.len() as u64) as usize];
        adjacent[swap_at] = replacement;

        let outcome = audit_step_divergence(
            &pool,
            k,
            &decoder,
            &dataset,
            &batch,
            &adjacent,
            &privacy,
            alpha,
            config.lr,
            config.freeze_encoders,
            config.seed.wrapping_add(trial),
        )?;
        max_divergence = max_divergence.max(outcome.divergence);
        bound = outcome.bound;
    }

    ensure_out_dir(&config.out)?;
    let extras = vec![
        ("images".to_string(), images.display().to_string()),
        ("labels".to_string(), labels.display().to_string()),
        ("partition".to_string(), partition_path.display().to_string()),
        ("pool".to_string(), pool_path.display().to_string()),
        ("alpha".to_string(), alpha.to_string()),
        ("trials".to_string(), trials.to_string()),
    ];
    let mut report = banner(&config, &extras);
    report.push('\n');
    report.push_str(&format!("trials = {trials}\n"));
    report.push_str(&format!("alpha = {alpha}\n"));
    report.push_str(&format!("max_divergence = {max_divergence}\n"));
    report.push_str(&format!("bound = {bound}\n"));
    report.push_str("violations = 0\n");
    write_text(&config.out.join("audit-report.txt"), &report)?;
    write_echo(&config.out, &config, &extras)?;

    writeln!(
        out,
        "audited {trials} adjacent pairs at alpha={alpha}: max divergence {max_divergence} <= bound {bound}"
    )
    .ok();
    Ok(())
}
