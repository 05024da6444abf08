//! Stage 2: differentially private decoder training.
//!
//! The decoder is freshly initialized from the seed alone; it never inherits
//! stage-1 parameters, so nothing private leaks through its starting point.
//! Each step follows one fixed order: draw an encoder index k uniformly,
//! draw a batch from subset k, walk the batch updating θ_k per example (each
//! example's gradients are taken at the θ_k left by its predecessors; θ_k
//! updates are unclipped and private-by-assumption since encoders are never
//! released), average the stored per-example decoder gradients, clip the
//! average to C, add N(0, (σC)²I), Adam-update the decoder with the noisy
//! result, and count one released step with the accountant. The only value
//! that ever reaches the decoder is the clipped-then-noised average.

use crate::accountant::{self, PrivacyParams, PrivacySpend};
use crate::cvae;
use crate::data::{self, Checkpoint, LabeledDataset};
use crate::error::{Error, Result};
use crate::nn::{AdamState, DenseNet, FlatParams};
use crate::numerics::RngStream;

use super::{clip_to_norm, get_cvae_config, put_cvae_config, sample_batch, streams, EncoderPool, Partition};

#[derive(Debug, Clone, PartialEq)]
pub struct Stage2Config {
    pub batch_size: usize,
    pub steps: u64,
    /// Learning rate for both the decoder and the per-example encoder updates.
    pub lr: f64,
    /// Keep the pool fixed during stage 2 instead of continuing to train it.
    pub freeze_encoders: bool,
}

impl Stage2Config {
    pub fn desk_default() -> Self {
        Stage2Config {
            batch_size: 32,
            steps: 500,
            lr: 1e-3,
            freeze_encoders: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid_parameter("batch_size", "must be positive"));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::invalid_parameter(
                "lr",
                format!("must be finite and positive, got {}", self.lr),
            ));
        }
        Ok(())
    }
}

/// Everything one completed step exposes to observers and metric sinks.
#[derive(Debug, Clone)]
pub struct StepTrace {
    /// 1-based count of completed steps, equal to the accountant count.
    pub step: u64,
    pub encoder_index: usize,
    /// Dataset indices of the batch, in visit order.
    pub batch: Vec<usize>,
    pub batch_reduced: bool,
    /// Empty-subset redraws that preceded this step's successful draw.
    pub redraws: u32,
    pub mean_elbo: f64,
    pub grad_norm_pre_clip: f64,
    pub grad_norm_post_clip: f64,
    /// The noisy clipped average handed to the decoder optimizer: the step's
    /// entire data-dependent release.
    pub released_grad: FlatParams,
    pub epsilon: f64,
}

/// Callback invoked after every completed step.
pub trait Stage2Observer {
    fn on_step(&mut self, trace: &StepTrace);
}

pub const METRICS_CSV_HEADER: &str = "stage,step,encoder,elbo,grad_norm_pre,grad_norm_post,epsilon";

pub fn metrics_csv_row(
    stage: u8,
    step: u64,
    encoder: usize,
    elbo: f64,
    pre: f64,
    post: f64,
    epsilon: f64,
) -> String {
    format!("{stage},{step},{encoder},{elbo},{pre},{post},{epsilon}")
}

/// The full mutable state of a stage-2 run. Checkpointing this and resuming
/// reproduces the uninterrupted run bitwise.
#[derive(Debug, Clone)]
pub struct Stage2State {
    pub decoder: DenseNet,
    pub decoder_adam: AdamState,
    pub pool: EncoderPool,
    pub privacy: PrivacyParams,
    pub config: Stage2Config,
    pub step: u64,
    pub spend: PrivacySpend,
    rng: RngStream,
    seed: u64,
}

impl Stage2State {
    /// Fresh state: the decoder is a function of `seed` alone. The dataset is
    /// deliberately not a parameter here.
    pub fn new(
        pool: EncoderPool,
        privacy: PrivacyParams,
        config: Stage2Config,
        seed: u64,
    ) -> Result<Self> {
        privacy.validate()?;
        config.validate()?;
        let mut init_rng = RngStream::new(seed, streams::STAGE2_DECODER_INIT);
        let decoder = pool.config().init_decoder(&mut init_rng)?;
        let decoder_adam = AdamState::new(decoder.param_count());
        let spend = accountant::eps_for_training(
            pool.len(),
            privacy.noise_multiplier,
            0,
            privacy.delta,
        )?;
        Ok(Stage2State {
            decoder,
            decoder_adam,
            pool,
            privacy,
            config,
            step: 0,
            spend,
            rng: RngStream::new(seed, streams::STAGE2_LOOP),
            seed,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// One private decoder update. On error the decoder, the step counter,
    /// and the accountant are unchanged: nothing was released.
    pub fn step(&mut self, dataset: &LabeledDataset, partition: &Partition) -> Result<StepTrace> {
        if partition.k() != self.pool.len() {
            return Err(Error::InvalidState(format!(
                "partition has {} subsets but the pool holds {} encoders",
                partition.k(),
                self.pool.len()
            )));
        }
        partition.validate_for(dataset.len())?;
        let cvae_config = self.pool.config().clone();
        if dataset.image_dim() != cvae_config.input_dim {
            return Err(Error::Shape(format!(
                "dataset images have {} pixels but the model expects {}",
                dataset.image_dim(),
                cvae_config.input_dim
            )));
        }
        if dataset.is_empty() {
            return Err(Error::InsufficientData("the dataset holds no records".into()));
        }
        let shape = cvae_config.shape();

        // (a) Uniform encoder choice, redrawing past empty subsets.
        let mut redraws = 0u32;
        let k = loop {
            let k = self.rng.next_below(self.pool.len() as u64) as usize;
            if !partition.subset(k).is_empty() {
                break k;
            }
            redraws += 1;
            if redraws as usize > 64 * self.pool.len() {
                return Err(Error::InsufficientData(
                    "all partition subsets appear to be empty".into(),
                ));
            }
        };
        let subset = partition.subset(k);

        // (b) Batch from subset k, reduced if the subset is smaller.
        let effective = self.config.batch_size.min(subset.len());
        let batch_reduced = effective < self.config.batch_size;
        let positions = sample_batch(&mut self.rng, subset.len(), effective)?;
        let batch: Vec<usize> = positions.iter().map(|&p| subset[p]).collect();

        // (c) Per-example pass: decoder gradients are collected at whatever
        // θ_k the previous examples left behind; θ_k itself updates after
        // every example, unclipped.
        let mut dec_sum = FlatParams::zeros(self.decoder.param_count());
        let mut elbo_sum = 0.0;
        for &i in &batch {
            let g = cvae::elbo_and_grads(
                self.pool.encoder(k),
                &self.decoder,
                shape,
                dataset.image(i),
                dataset.label(i),
                &mut self.rng,
            )?;
            dec_sum.add_assign(&g.decoder_grad)?;
            elbo_sum += g.elbo();
            if !self.config.freeze_encoders {
                self.pool.update_encoder(k, &g.encoder_grad, self.config.lr)?;
            }
        }

        // (d)-(f) Average, clip, and noise the decoder gradient.
        let mean_elbo = elbo_sum / effective as f64;
        dec_sum.scale_in_place(1.0 / effective as f64);
        let grad_norm_pre_clip = dec_sum.l2_norm();
        let mut released = clip_to_norm(&dec_sum, self.privacy.clip_bound)?;
        let grad_norm_post_clip = released.l2_norm();
        let noise_std = self.privacy.noise_multiplier * self.privacy.clip_bound;
        for v in &mut released.0 {
            *v += noise_std * self.rng.next_gaussian();
        }
        if !released.is_finite() || !mean_elbo.is_finite() {
            return Err(Error::Numeric(
                "non-finite released gradient; step aborted before any release".into(),
            ));
        }

        // (g) Decoder update with the noisy average only.
        self.decoder
            .adam_update(&released, &mut self.decoder_adam, self.config.lr)?;

        // (h) One more released step on the accountant.
        self.step += 1;
        self.spend = accountant::eps_for_training(
            self.pool.len(),
            self.privacy.noise_multiplier,
            self.step,
            self.privacy.delta,
        )?;

        Ok(StepTrace {
            step: self.step,
            encoder_index: k,
            batch,
            batch_reduced,
            redraws,
            mean_elbo,
            grad_norm_pre_clip,
            grad_norm_post_clip,
            released_grad: released,
            epsilon: self.spend.epsilon,
        })
    }

    pub fn rng_state(&self) -> crate::numerics::RngState {
        self.rng.state()
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new();
        ck.set_meta("kind", "stage2-state");
        ck.set_meta("seed", self.seed.to_string());
        ck.set_meta("step", self.step.to_string());
        ck.set_meta("config.batch_size", self.config.batch_size.to_string());
        ck.set_meta("config.steps", self.config.steps.to_string());
        ck.set_meta_f64("config.lr", self.config.lr);
        ck.set_meta("config.freeze_encoders", self.config.freeze_encoders.to_string());
        ck.set_meta_f64("privacy.clip_bound", self.privacy.clip_bound);
        ck.set_meta_f64("privacy.noise_multiplier", self.privacy.noise_multiplier);
        ck.set_meta_f64("privacy.delta", self.privacy.delta);
        ck.set_meta("spend.steps", self.spend.steps.to_string());
        ck.set_meta_f64("spend.epsilon", self.spend.epsilon);
        ck.set_meta_f64("spend.delta", self.spend.delta);
        ck.set_meta_f64("spend.best_order", self.spend.best_order);
        data::checkpoint::put_rng(&mut ck, "rng", self.rng.state());
        data::checkpoint::put_dense_net(&mut ck, "decoder", &self.decoder)?;
        data::checkpoint::put_adam(&mut ck, "decoder.adam", &self.decoder_adam)?;
        ck.set_meta("pool.k", self.pool.len().to_string());
        ck.set_meta("pool.seed", self.pool.seed().to_string());
        put_cvae_config(&mut ck, "cvae", self.pool.config());
        for k in 0..self.pool.len() {
            data::checkpoint::put_dense_net(&mut ck, &format!("encoder{k}"), self.pool.encoder(k))?;
            data::checkpoint::put_adam(&mut ck, &format!("encoder{k}.adam"), self.pool.adam(k))?;
        }
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.meta("kind") != Some("stage2-state") {
            return Err(Error::Data(format!(
                "checkpoint kind `{}` is not a stage-2 state",
                ck.meta("kind").unwrap_or("<missing>")
            )));
        }
        let cvae_config = get_cvae_config(ck, "cvae")?;
        let pool_k: usize = ck.meta_parsed("pool.k")?;
        let mut encoders = Vec::with_capacity(pool_k);
        let mut adams = Vec::with_capacity(pool_k);
        for k in 0..pool_k {
            encoders.push(data::checkpoint::get_dense_net(ck, &format!("encoder{k}"))?);
            adams.push(data::checkpoint::get_adam(ck, &format!("encoder{k}.adam"))?);
        }
        let pool = EncoderPool::from_parts(
            encoders,
            adams,
            cvae_config,
            ck.meta_parsed("pool.seed")?,
        )?;
        let privacy = PrivacyParams {
            clip_bound: ck.meta_f64("privacy.clip_bound")?,
            noise_multiplier: ck.meta_f64("privacy.noise_multiplier")?,
            delta: ck.meta_f64("privacy.delta")?,
        };
        privacy.validate()?;
        let config = Stage2Config {
            batch_size: ck.meta_parsed("config.batch_size")?,
            steps: ck.meta_parsed("config.steps")?,
            lr: ck.meta_f64("config.lr")?,
            freeze_encoders: ck.meta_parsed("config.freeze_encoders")?,
        };
        config.validate()?;
        let spend = PrivacySpend {
            steps: ck.meta_parsed("spend.steps")?,
            epsilon: ck.meta_f64("spend.epsilon")?,
            delta: ck.meta_f64("spend.delta")?,
            best_order: ck.meta_f64("spend.best_order")?,
        };
        Ok(Stage2State {
            decoder: data::checkpoint::get_dense_net(ck, "decoder")?,
            decoder_adam: data::checkpoint::get_adam(ck, "decoder.adam")?,
            pool,
            privacy,
            config,
            step: ck.meta_parsed("step")?,
            spend,
            rng: RngStream::restore(data::checkpoint::get_rng(ck, "rng")?),
            seed: ck.meta_parsed("seed")?,
        })
    }
}

/// Run `config.steps` private steps from a fresh decoder. The returned state
/// carries the decoder, the continued pool, and the final privacy spend.
pub fn stage2_train(
    pool: EncoderPool,
    dataset: &LabeledDataset,
    partition: &Partition,
    config: Stage2Config,
    privacy: PrivacyParams,
    seed: u64,
    mut observer: Option<&mut dyn Stage2Observer>,
) -> Result<Stage2State> {
    let mut state = Stage2State::new(pool, privacy, config, seed)?;
    for _ in 0..state.config.steps {
        let trace = state.step(dataset, partition)?;
        if let Some(obs) = observer.as_deref_mut() {
            obs.on_step(&trace);
        }
    }
    Ok(state)
}

// ----------------------------------------------------------------------------
