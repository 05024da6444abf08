//! Stage 1: non-private pretraining of one encoder per partition subset.
//!
//! Each encoder k trains with a throwaway decoder on subset k alone:
//! per-iteration batch gradients of the negative ELBO are averaged, each of
//! the two averages is clipped by division (g / max(1, ‖g‖₂/C)), and both
//! nets take an Adam step. The decoder is dropped at the end; only θ_k and
//! its Adam state survive into the pool. Every encoder draws from its own
//! RNG stream, so the pool is a pure function of (seed, k) and the schedule
//! of a parallel run cannot influence the result.

use std::thread;

use crate::cvae::{self, CvaeConfig};
use crate::data::{self, Checkpoint, LabeledDataset};
use crate::error::{Error, Result};
use crate::nn::{AdamState, DenseNet, FlatParams};
use crate::numerics::RngStream;

use super::{clip_by_division, get_cvae_config, put_cvae_config, sample_batch, streams, Partition, Stage1Config};

/// Pretrained encoders with their optimizer states. Encoder `k` has only
/// ever seen records from partition subset `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderPool {
    encoders: Vec<DenseNet>,
    adams: Vec<AdamState>,
    cvae: CvaeConfig,
    seed: u64,
}

impl EncoderPool {
    pub fn from_parts(
        encoders: Vec<DenseNet>,
        adams: Vec<AdamState>,
        cvae: CvaeConfig,
        seed: u64,
    ) -> Result<Self> {
        cvae.validate()?;
        if encoders.is_empty() || encoders.len() != adams.len() {
            return Err(Error::InvalidState(format!(
                "pool needs matching encoder/optimizer counts, got {} and {}",
                encoders.len(),
                adams.len()
            )));
        }
        let specs = cvae.encoder_specs();
        for (k, e) in encoders.iter().enumerate() {
            if e.specs() != specs {
                return Err(Error::InvalidState(format!(
                    "encoder {k} does not match the pool architecture"
                )));
            }
            if adams[k].dim() != e.param_count() {
                return Err(Error::InvalidState(format!(
                    "optimizer state {k} sized {} for {} parameters",
                    adams[k].dim(),
                    e.param_count()
                )));
            }
        }
        Ok(EncoderPool { encoders, adams, cvae, seed })
    }

    pub fn len(&self) -> usize {
        self.encoders.len()
    }

    pub fn is_empty(&self) -> bool {
        self.encoders.is_empty()
    }

    pub fn encoder(&self, k: usize) -> &DenseNet {
        &self.encoders[k]
    }

    pub fn adam(&self, k: usize) -> &AdamState {
        &self.adams[k]
    }

    /// One Adam step on encoder `k` with its own optimizer state.
    pub(crate) fn update_encoder(&mut self, k: usize, grad: &FlatParams, lr: f64) -> Result<()> {
        self.encoders[k].adam_update(grad, &mut self.adams[k], lr)
    }

    pub fn config(&self) -> &CvaeConfig {
        &self.cvae
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// The stage-1 training stream id encoder `k` drew from.
    pub fn encoder_stream_id(k: usize) -> u64 {
        streams::STAGE1_ENCODER_BASE + k as u64
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new();
        ck.set_meta("kind", "encoder-pool");
        ck.set_meta("pool.k", self.len().to_string());
        ck.set_meta("pool.seed", self.seed.to_string());
        put_cvae_config(&mut ck, "cvae", &self.cvae);
        for (k, enc) in self.encoders.iter().enumerate() {
            data::checkpoint::put_dense_net(&mut ck, &format!("encoder{k}"), enc)?;
            data::checkpoint::put_adam(&mut ck, &format!("encoder{k}.adam"), &self.adams[k])?;
        }
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let k: usize = ck.meta_parsed("pool.k")?;
        let seed: u64 = ck.meta_parsed("pool.seed")?;
        let cvae = get_cvae_config(ck, "cvae")?;
        let mut encoders = Vec::with_capacity(k);
        let mut adams = Vec::with_capacity(k);
        for i in 0..k {
            encoders.push(data::checkpoint::get_dense_net(ck, &format!("encoder{i}"))?);
            adams.push(data::checkpoint::get_adam(ck, &format!("encoder{i}.adam"))?);
        }
        EncoderPool::from_parts(encoders, adams, cvae, seed)
    }
}

/// Per-encoder training report.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderSummary {
    pub k: usize,
    pub subset_size: usize,
    pub effective_batch: usize,
    /// True when the requested batch exceeded the subset and was reduced.
    pub batch_reduced: bool,
    /// Mean ELBO over the subset at initialization, under the replayable
    /// evaluation stream.
    pub initial_elbo: f64,
    /// Mean ELBO over the subset after training, same evaluation stream, so
    /// the two values share their noise realizations.
    pub final_elbo: f64,
}

#[derive(Debug, Clone)]
pub struct Stage1Output {
    pub pool: EncoderPool,
    pub summaries: Vec<EncoderSummary>,
}

/// Mean single-sample ELBO of `(encoder, decoder)` over the listed records.
pub fn mean_subset_elbo(
    encoder: &DenseNet,
    decoder: &DenseNet,
    cvae_config: &CvaeConfig,
    dataset: &LabeledDataset,
    indices: &[usize],
    rng: &mut RngStream,
) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::InsufficientData(
            "cannot average the ELBO over zero records".into(),
        ));
    }
    let shape = cvae_config.shape();
    let mut sum = 0.0;
    for &i in indices {
        let g = cvae::elbo_and_grads(encoder, decoder, shape, dataset.image(i), dataset.label(i), rng)?;
        sum += g.elbo();
    }
    Ok(sum / indices.len() as f64)
}

/// Train encoder `k` on its subset. Pure function of
/// `(dataset, partition, config, seed, k)`; all randomness comes from the
/// two streams derived from `(seed, k)`.
pub fn pretrain_encoder(
    dataset: &LabeledDataset,
    partition: &Partition,
    k: usize,
    config: &Stage1Config,
    seed: u64,
) -> Result<(DenseNet, AdamState, EncoderSummary)> {
    config.validate()?;
    if k >= partition.k() {
        return Err(Error::invalid_parameter(
            "encoder_index",
            format!("{k} out of range for {} partitions", partition.k()),
        ));
    }
    if dataset.image_dim() != config.cvae.input_dim {
        return Err(Error::Shape(format!(
            "dataset images have {} pixels but the model expects {}",
            dataset.image_dim(),
            config.cvae.input_dim
        )));
    }
    let subset = partition.subset(k);
    if subset.is_empty() {
        return Err(Error::InsufficientData(format!(
            "partition subset {k} is empty"
        )));
    }
    let shape = config.cvae.shape();
    let effective_batch = config.batch_size.min(subset.len());
    let batch_reduced = effective_batch < config.batch_size;

    let mut rng = RngStream::new(seed, EncoderPool::encoder_stream_id(k));
    let mut encoder = config.cvae.init_encoder(&mut rng)?;
    let mut decoder = config.cvae.init_decoder(&mut rng)?;
    let mut enc_adam = AdamState::new(encoder.param_count());
    let mut dec_adam = AdamState::new(decoder.param_count());

    let mut eval_rng = RngStream::new(seed, streams::STAGE1_EVAL_BASE + k as u64);
    let initial_elbo =
        mean_subset_elbo(&encoder, &decoder, &config.cvae, dataset, subset, &mut eval_rng)?;

    for _ in 0..config.steps {
        let batch = sample_batch(&mut rng, subset.len(), effective_batch)?;
        let mut enc_sum = FlatParams::zeros(encoder.param_count());
        let mut dec_sum = FlatParams::zeros(decoder.param_count());
        for &pos in &batch {
            let i = subset[pos];
            let g = cvae::elbo_and_grads(
                &encoder,
                &decoder,
                shape,
                dataset.image(i),
                dataset.label(i),
                &mut rng,
            )?;
            enc_sum.add_assign(&g.encoder_grad)?;
            dec_sum.add_assign(&g.decoder_grad)?;
        }
        let scale = 1.0 / effective_batch as f64;
        enc_sum.scale_in_place(scale);
        dec_sum.scale_in_place(scale);
        let enc_clipped = clip_by_division(&enc_sum, config.clip_bound)?;
        let dec_clipped = clip_by_division(&dec_sum, config.clip_bound)?;
        encoder.adam_update(&enc_clipped, &mut enc_adam, config.lr)?;
        decoder.adam_update(&dec_clipped, &mut dec_adam, config.lr)?;
    }

    // Same stream id as the initial evaluation, restarted: the two means see
    // identical noise, so their difference isolates the parameter change.
    let mut eval_rng = RngStream::new(seed, streams::STAGE1_EVAL_BASE + k as u64);
    let final_elbo =
        mean_subset_elbo(&encoder, &decoder, &config.cvae, dataset, subset, &mut eval_rng)?;

    let summary = EncoderSummary {
        k,
        subset_size: subset.len(),
        effective_batch,
        batch_reduced,
        initial_elbo,
        final_elbo,
    };
    Ok((encoder, enc_adam, summary))
}

/// Pretrain the whole pool, fanning encoders out over worker threads. Each
/// encoder is fully determined by `(seed, k)`, so the outcome is bitwise
/// identical however the work is scheduled.
pub fn stage1_pretrain(
    dataset: &LabeledDataset,
    partition: &Partition,
    config: &Stage1Config,
    seed: u64,
) -> Result<Stage1Output> {
    config.validate()?;
    partition.validate_for(dataset.len())?;
    let k_total = partition.k();
    let threads = if config.threads == 0 {
        thread::available_parallelism().map_or(1, |n| n.get())
    } else {
        config.threads
    }
    .min(k_total);

    let mut results: Vec<Option<Result<(DenseNet, AdamState, EncoderSummary)>>> = Vec::new();
    results.resize_with(k_total, || None);

    if threads <= 1 {
        for (k, slot) in results.iter_mut().enumerate() {
            *slot = Some(pretrain_encoder(dataset, partition, k, config, seed));
        }
    } else {
        // Contiguous index chunks, one per worker.
        let per = k_total.div_ceil(threads);
        let mut rest: &mut [Option<_>] = &mut results;
        thread::scope(|scope| {
            let mut start = 0;
            while start < k_total {
                let take = per.min(k_total - start);
                let (chunk, tail) = rest.split_at_mut(take);
                rest = tail;
                let base = start;
                scope.spawn(move || {
                    for (off, slot) in chunk.iter_mut().enumerate() {
                        *slot = Some(pretrain_encoder(dataset, partition, base + off, config, seed));
                    }
                });
                start += take;
            }
        });
    }

    let mut encoders = Vec::with_capacity(k_total);
    let mut adams = Vec::with_capacity(k_total);
    let mut summaries = Vec::with_capacity(k_total);
    for slot in results {
        let (enc, adam, summary) = slot.expect("every encoder slot was filled")?;
        encoders.push(enc);
        adams.push(adam);
        summaries.push(summary);
    }
    let pool = EncoderPool::from_parts(encoders, adams, config.cvae.clone(), seed)?;
    Ok(Stage1Output { pool, summaries })
}

// ----------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Provenance;
    use crate::training::partition_dataset;

    /// 6-pixel two-class toy set: class 0 bright on even pixels, class 1 on
    /// odd, with small deterministic jitter.
    fn toy_dataset(n: usize) -> LabeledDataset {
        let mut images = Vec::with_capacity(n * 6);
        let mut labels = Vec::with_capacity(n);
        let mut rng = RngStream::new(99, 0);
        for i in 0..n {
            let class = (i % 2) as u8;
            for p in 0..6 {
                let on = (p % 2) == class as usize;
                let base: f64 = if on { 0.9 } else { 0.1 };
                images.push((base + 0.05 * (rng.next_uniform() - 0.5)).clamp(0.0, 1.0));
            }
            labels.push(class);
        }
        LabeledDataset::new(images, labels, 3, 2, Provenance::Real).unwrap()
    }

    fn toy_config() -> Stage1Config {
        Stage1Config {
            cvae: CvaeConfig {
                input_dim: 6,
                latent_dim: 2,
                n_classes: 10,
                encoder_hidden: vec![8],
                decoder_hidden: vec![8],
            },
            batch_size: 8,
            steps: 200,
            lr: 1e-2,
            clip_bound: 1.0,
            threads: 1,
        }
    }

    #[test]
    fn elbo_improves_on_each_subset() {
        let data = toy_dataset(40);
        let partition = partition_dataset(40, 2, 5).unwrap();
        let out = stage1_pretrain(&data, &partition, &toy_config(), 5).unwrap();
        assert_eq!(out.pool.len(), 2);
        for s in &out.summaries {
            assert!(
                s.final_elbo > s.initial_elbo,
                "subset {}: {} -> {}",
                s.k,
                s.initial_elbo,
                s.final_elbo
            );
            assert!(!s.batch_reduced);
            assert_eq!(s.subset_size, 20);
        }
    }

    #[test]
    fn zero_steps_returns_fresh_initializations() {
        let data = toy_dataset(12);
        let partition = partition_dataset(12, 3, 2).unwrap();
        let mut config = toy_config();
        config.steps = 0;
        let out = stage1_pretrain(&data, &partition, &config, 8).unwrap();
        for k in 0..3 {
            let mut rng = RngStream::new(8, EncoderPool::encoder_stream_id(k));
            let fresh = config.cvae.init_encoder(&mut rng).unwrap();
            assert_eq!(out.pool.encoder(k).params().bits(), fresh.params().bits());
            assert_eq!(out.pool.adam(k).step, 0);
            let s = &out.summaries[k];
            assert_eq!(s.initial_elbo.to_bits(), s.final_elbo.to_bits());
        }
    }

    #[test]
    fn sequential_and_parallel_runs_are_bitwise_identical() {
        let data = toy_dataset(30);
        let partition = partition_dataset(30, 3, 4).unwrap();
        let mut config = toy_config();
        config.steps = 10;
        let seq = stage1_pretrain(&data, &partition, &config, 3).unwrap();
        config.threads = 3;
        let par = stage1_pretrain(&data, &partition, &config, 3).unwrap();
        for k in 0..3 {
            assert_eq!(
                seq.pool.encoder(k).params().bits(),
                par.pool.encoder(k).params().bits()
            );
            assert_eq!(seq.pool.adam(k), par.pool.adam(k));
            assert_eq!(seq.summaries[k], par.summaries[k]);
        }
        // And both match running each encoder by hand.
        for k in 0..3 {
            let (enc, adam, summary) = pretrain_encoder(&data, &partition, k, &config, 3).unwrap();
            assert_eq!(enc.params().bits(), seq.pool.encoder(k).params().bits());
            assert_eq!(&adam, seq.pool.adam(k));
            assert_eq!(summary, seq.summaries[k]);
        }
    }

    #[test]
    fn oversized_batch_is_reduced_with_a_record() {
        let data = toy_dataset(10);
        let partition = partition_dataset(10, 2, 1).unwrap();
        let mut config = toy_config();
        config.batch_size = 32;
        config.steps = 3;
        let out = stage1_pretrain(&data, &partition, &config, 1).unwrap();
        for s in &out.summaries {
            assert!(s.batch_reduced);
            assert_eq!(s.effective_batch, 5);
        }
    }

    #[test]
    fn pool_checkpoint_round_trips_bitwise() {
        let data = toy_dataset(16);
        let partition = partition_dataset(16, 2, 3).unwrap();
        let mut config = toy_config();
        config.steps = 5;
        let out = stage1_pretrain(&data, &partition, &config, 12).unwrap();
        let ck = out.pool.to_checkpoint().unwrap();
        let dir = std::env::temp_dir().join(format!("pool-test-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("pool.ckpt");
        ck.save(&path).unwrap();
        let back = EncoderPool::from_checkpoint(&Checkpoint::load(&path).unwrap()).unwrap();
        assert_eq!(back.len(), out.pool.len());
        assert_eq!(back.seed(), out.pool.seed());
        assert_eq!(back.config(), out.pool.config());
        for k in 0..back.len() {
            assert_eq!(
                back.encoder(k).params().bits(),
                out.pool.encoder(k).params().bits()
            );
            assert_eq!(back.adam(k), out.pool.adam(k));
        }
    }

    #[test]
    fn mismatched_dataset_dimensions_are_rejected() {
        let data = toy_dataset(10);
        let partition = partition_dataset(10, 2, 1).unwrap();
        let mut config = toy_config();
        config.cvae.input_dim = 7;
        assert!(matches!(
            pretrain_encoder(&data, &partition, 0, &config, 1),
            Err(Error::Shape(_))
        ));
    }
}
