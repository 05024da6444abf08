//! The two-stage training mechanism: partitioning, non-private encoder-pool
//! pretraining, differentially private decoder training, and a per-step
//! divergence audit.

pub mod audit;
pub mod stage1;
pub mod stage2;

pub use audit::{audit_step_divergence, renyi_divergence_gaussian, AuditOutcome};
pub use stage1::{pretrain_encoder, stage1_pretrain, EncoderPool, EncoderSummary, Stage1Output};
pub use stage2::{stage2_train, Stage2Config, Stage2Observer, Stage2State, StepTrace};

use crate::cvae::CvaeConfig;
use crate::data::Checkpoint;
use crate::error::{Error, Result};
use crate::nn::FlatParams;
use crate::numerics::RngStream;

/// Fixed stream ids: every random decision in the pipeline draws from
/// `RngStream::new(seed, id)` for one of these ids, so runs are reproducible
/// and independent components never share a stream.
pub mod streams {
    /// Dataset shuffle behind the partition.
    pub const PARTITION: u64 = 1;
    /// Fresh decoder initialization at the start of stage 2 (reads no data).
    pub const STAGE2_DECODER_INIT: u64 = 2;
    /// The sequential stage-2 loop: encoder choice, batch, noise.
    pub const STAGE2_LOOP: u64 = 3;
    /// Prior samples for generation.
    pub const GENERATE: u64 = 4;
    /// Evaluation utilities (classifier seeds offset from here).
    pub const EVAL_BASE: u64 = 0x100;
    /// Stage-1 training stream of encoder `k` is `STAGE1_ENCODER_BASE + k`.
    pub const STAGE1_ENCODER_BASE: u64 = 1 << 32;
    /// Replayable ELBO evaluation stream of encoder `k`.
    pub const STAGE1_EVAL_BASE: u64 = (1 << 32) | (1 << 31);
    /// Frozen per-example noise used when auditing one hypothetical step.
    pub const AUDIT_EPS: u64 = 0x2000;
    /// Random adjacent-batch construction in the audit driver.
    pub const AUDIT_BATCH: u64 = 0x2001;
}

// ----------------------------------------------------------------------------
// Partition

/// Disjoint index subsets covering a dataset, dealt round-robin from a seeded
/// shuffle so subset sizes differ by at most one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    subsets: Vec<Vec<usize>>,
    n: usize,
    seed: u64,
}

pub fn partition_dataset(n: usize, k: usize, seed: u64) -> Result<Partition> {
    if k == 0 {
        return Err(Error::invalid_parameter("partitions", "need at least one subset"));
    }
    if k > n {
        return Err(Error::invalid_parameter(
            "partitions",
            format!("cannot split {n} records into {k} nonempty subsets"),
        ));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = RngStream::new(seed, streams::PARTITION);
    rng.shuffle(&mut order);
    let mut subsets = vec![Vec::with_capacity(n / k + 1); k];
    for (pos, idx) in order.into_iter().enumerate() {
        subsets[pos % k].push(idx);
    }
    Ok(Partition { subsets, n, seed })
}

impl Partition {
    pub fn k(&self) -> usize {
        self.subsets.len()
    }

    pub fn dataset_len(&self) -> usize {
        self.n
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn subset(&self, k: usize) -> &[usize] {
        &self.subsets[k]
    }

    pub fn subsets(&self) -> &[Vec<usize>] {
        &self.subsets
    }

    /// Check the partition invariants against a dataset of `n` records:
    /// subsets disjoint, union exactly 0..n.
    pub fn validate_for(&self, n: usize) -> Result<()> {
        if self.n != n {
            return Err(Error::InvalidState(format!(
                "partition was built for {} records but the dataset holds {n}",
                self.n
            )));
        }
        let mut seen = vec![false; n];
        for s in &self.subsets {
            for &i in s {
                if i >= n {
                    return Err(Error::InvalidState(format!(
                        "partition index {i} out of range for {n} records"
                    )));
                }
                if seen[i] {
                    return Err(Error::InvalidState(format!(
                        "partition index {i} appears in two subsets"
                    )));
                }
                seen[i] = true;
            }
        }
        if let Some(missing) = seen.iter().position(|&s| !s) {
            return Err(Error::InvalidState(format!(
                "partition does not cover record {missing}"
            )));
        }
        Ok(())
    }

    /// Plain-text form: header lines then one whitespace-separated subset per
    /// line. Round-trips exactly.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("k={}\n", self.k()));
        out.push_str(&format!("n={}\n", self.n));
        out.push_str(&format!("seed={}\n", self.seed));
        for s in &self.subsets {
            let line: Vec<String> = s.iter().map(|i| i.to_string()).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Partition> {
        let mut lines = text.lines();
        let mut header = |name: &str| -> Result<u64> {
            let line = lines
                .next()
                .ok_or_else(|| Error::Data(format!("partition text missing `{name}` line")))?;
            line.strip_prefix(&format!("{name}="))
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Data(format!("bad partition header line `{line}`")))
        };
        let k = header("k")? as usize;
        let n = header("n")? as usize;
        let seed = header("seed")?;
        let mut subsets = Vec::with_capacity(k);
        for _ in 0..k {
            let line = lines
                .next()
                .ok_or_else(|| Error::Data("partition text ends before all subsets".into()))?;
            let subset = line
                .split_whitespace()
                .map(|t| {
                    t.parse()
                        .map_err(|_| Error::Data(format!("bad partition index `{t}`")))
                })
                .collect::<Result<Vec<usize>>>()?;
            subsets.push(subset);
        }
        if lines.any(|l| !l.trim().is_empty()) {
            return Err(Error::Data("trailing content after partition subsets".into()));
        }
        let p = Partition { subsets, n, seed };
        p.validate_for(n)?;
        Ok(p)
    }
}

// ----------------------------------------------------------------------------
// Gradient clipping

/// Scale `g` to norm at most `c`: g · min(1, c/‖g‖₂). Vectors already inside
/// the ball pass through bitwise unchanged.
pub fn clip_to_norm(g: &FlatParams, c: f64) -> Result<FlatParams> {
    check_clip_bound(c)?;
    let norm = g.l2_norm();
    let factor = (c / norm).min(1.0);
    if factor >= 1.0 {
        return Ok(g.clone());
    }
    let mut out = g.clone();
    out.scale_in_place(factor);
    Ok(out)
}

/// Stage-1 clipping as written there: g / max(1, ‖g‖₂/c). Same ball, division
/// form; kept separate because the two stages state the rule differently and
/// the floating-point results differ in the last ulps.
pub fn clip_by_division(g: &FlatParams, c: f64) -> Result<FlatParams> {
    check_clip_bound(c)?;
    let divisor = (g.l2_norm() / c).max(1.0);
    if divisor <= 1.0 {
        return Ok(g.clone());
    }
    let mut out = g.clone();
    out.scale_in_place(1.0 / divisor);
    Ok(out)
}

fn check_clip_bound(c: f64) -> Result<()> {
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::invalid_parameter(
            "clip_bound",
            format!("must be finite and positive, got {c}"),
        ));
    }
    Ok(())
}

// ----------------------------------------------------------------------------
// Batch sampling

/// `batch` distinct positions in `0..pool_size`, drawn without replacement by
/// a partial Fisher-Yates pass; consumes exactly `batch` bounded draws.
pub fn sample_batch(rng: &mut RngStream, pool_size: usize, batch: usize) -> Result<Vec<usize>> {
    if batch > pool_size {
        return Err(Error::invalid_parameter(
            "batch_size",
            format!("cannot draw {batch} distinct records from {pool_size}"),
        ));
    }
    let mut pool: Vec<usize> = (0..pool_size).collect();
    for i in 0..batch {
        let j = i + rng.next_below((pool_size - i) as u64) as usize;
        pool.swap(i, j);
    }
    pool.truncate(batch);
    Ok(pool)
}

// ----------------------------------------------------------------------------
// Stage-1 configuration

#[derive(Debug, Clone, PartialEq)]
pub struct Stage1Config {
    pub cvae: CvaeConfig,
    pub batch_size: usize,
    pub steps: u64,
    pub lr: f64,
    pub clip_bound: f64,
    /// Worker threads for the encoder pool; 0 means use the machine's
    /// available parallelism. Results are identical for any value.
    pub threads: usize,
}

impl Stage1Config {
    pub fn desk_default() -> Self {
        Stage1Config {
            cvae: CvaeConfig::mnist_desk(),
            batch_size: 32,
            steps: 300,
            lr: 1e-3,
            clip_bound: 1.0,
            threads: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.cvae.validate()?;
        if self.batch_size == 0 {
            return Err(Error::invalid_parameter("batch_size", "must be positive"));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::invalid_parameter(
                "lr",
                format!("must be finite and positive, got {}", self.lr),
            ));
        }
        check_clip_bound(self.clip_bound)
    }
}

// ----------------------------------------------------------------------------
// CvaeConfig <-> checkpoint metadata

pub(crate) fn put_cvae_config(ck: &mut Checkpoint, prefix: &str, cfg: &CvaeConfig) {
    ck.set_meta(&format!("{prefix}.input_dim"), cfg.input_dim.to_string());
    ck.set_meta(&format!("{prefix}.latent_dim"), cfg.latent_dim.to_string());
    ck.set_meta(&format!("{prefix}.n_classes"), cfg.n_classes.to_string());
    ck.set_meta(&format!("{prefix}.encoder_hidden"), join_dims(&cfg.encoder_hidden));
    ck.set_meta(&format!("{prefix}.decoder_hidden"), join_dims(&cfg.decoder_hidden));
}

pub(crate) fn get_cvae_config(ck: &Checkpoint, prefix: &str) -> Result<CvaeConfig> {
    let cfg = CvaeConfig {
        input_dim: ck.meta_parsed(&format!("{prefix}.input_dim"))?,
        latent_dim: ck.meta_parsed(&format!("{prefix}.latent_dim"))?,
        n_classes: ck.meta_parsed(&format!("{prefix}.n_classes"))?,
        encoder_hidden: split_dims(ck.require_meta(&format!("{prefix}.encoder_hidden"))?)?,
        decoder_hidden: split_dims(ck.require_meta(&format!("{prefix}.decoder_hidden"))?)?,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn join_dims(dims: &[usize]) -> String {
    dims.iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn split_dims(s: &str) -> Result<Vec<usize>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|t| {
            t.parse()
                .map_err(|_| Error::Data(format!("bad layer width `{t}` in checkpoint")))
        })
        .collect()
}

// ----------------------------------------------------------------------------
