//! Configuration resolution.
//!
//! Every setting resolves through the same chain: command-line flag, then
//! `DP2VAE_*` environment variable (folded into the flag by the parser),
//! then a flat `key = value` config file, then the documented default. The
//! resolved values are echoed to `resolved-config.txt` in the output
//! directory, in a form the `--config` flag accepts back.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use dp2vae::{Error, Result};

/// Version string stamped into every artifact.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Every key a config file may set; one-to-one with the long flag names.
pub const KNOWN_KEYS: &[&str] = &[
    "out",
    "k",
    "batch-size",
    "pretrain-steps",
    "steps",
    "pretrain-lr",
    "lr",
    "clip",
    "sigma",
    "delta",
    "latent-dim",
    "seed",
    "freeze-encoders",
    "amplification",
    "threads",
    "images",
    "labels",
    "partition",
    "pool",
    "decoder",
    "checkpoint-every",
    "per-class",
    "real-images",
    "real-labels",
    "synthetic-images",
    "synthetic-labels",
    "features",
    "feature-dim",
    "classifier",
    "runs",
    "alpha",
    "trials",
    "subset-size",
];

/// Values read from a `key = value` config file.
#[derive(Debug, Clone, Default)]
pub struct FileConfig {
    values: BTreeMap<String, String>,
}

impl FileConfig {
    pub fn empty() -> Self {
        FileConfig::default()
    }

    /// Parses a flat config file: one `key = value` per line, `#` comments,
    /// blank lines ignored. Unknown and repeated keys are usage errors.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading config file {}", path.display()), e))?;
        let mut values = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::invalid_parameter(
                    "config",
                    format!(
                        "{}:{}: expected `key = value`, got `{line}`",
                        path.display(),
                        lineno + 1
                    ),
                ));
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(Error::invalid_parameter(
                    "config",
                    format!("{}:{}: unknown key `{key}`", path.display(), lineno + 1),
                ));
            }
            if values.insert(key.clone(), value).is_some() {
                return Err(Error::invalid_parameter(
                    "config",
                    format!("{}:{}: key `{key}` set twice", path.display(), lineno + 1),
                ));
            }
        }
        Ok(FileConfig { values })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }
}

/// Flag/env value if present, else the config-file value, else the default.
pub fn resolve<T>(flag: Option<T>, file: &FileConfig, key: &'static str, default: T) -> Result<T>
where
    T: FromStr,
    T::Err: Display,
{
    if let Some(v) = flag {
        return Ok(v);
    }
    match file.get(key) {
        Some(raw) => raw.parse::<T>().map_err(|e| {
            Error::invalid_parameter(key, format!("config file value `{raw}` is invalid: {e}"))
        }),
        None => Ok(default),
    }
}

/// As `resolve` for paths, where the default may be absent (required key).
pub fn resolve_path(
    flag: Option<PathBuf>,
    file: &FileConfig,
    key: &'static str,
    default: Option<PathBuf>,
) -> Result<PathBuf> {
    if let Some(p) = flag {
        return Ok(p);
    }
    if let Some(raw) = file.get(key) {
        return Ok(PathBuf::from(raw));
    }
    default.ok_or_else(|| {
        Error::invalid_parameter(key, "required: pass the flag or set it in the config file")
    })
}

/// How the per-record participation rate is derived for amplification.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Amplification {
    /// One record participates when its subset is drawn: q = 1/K.
    PoolRate,
    /// Within-subset batch rate: q = B/|D_k| (smallest subset).
    BatchRate,
}

impl Amplification {
    pub fn name(self) -> &'static str {
        match self {
            Amplification::PoolRate => "k",
            Amplification::BatchRate => "batch",
        }
    }
}

impl FromStr for Amplification {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "k" => Ok(Amplification::PoolRate),
            "batch" => Ok(Amplification::BatchRate),
            other => Err(format!("expected `k` or `batch`, got `{other}`")),
        }
    }
}

/// The shared, fully resolved run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub out: PathBuf,
    pub k: usize,
    pub batch_size: usize,
    pub pretrain_steps: u64,
    pub steps: u64,
    pub pretrain_lr: f64,
    pub lr: f64,
    pub clip: f64,
    pub sigma: f64,
    pub delta: f64,
    pub latent_dim: usize,
    pub seed: u64,
    pub freeze_encoders: bool,
    pub amplification: Amplification,
    pub threads: usize,
}

impl RunConfig {
    /// Validates every numeric constraint, naming the offending key.
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::invalid_parameter("k", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid_parameter("batch-size", "must be at least 1"));
        }
        for (key, v) in [
            ("pretrain-lr", self.pretrain_lr),
            ("lr", self.lr),
            ("clip", self.clip),
            ("sigma", self.sigma),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid_parameter(
                    key,
                    format!("must be finite and positive, got {v}"),
                ));
            }
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::invalid_parameter(
                "delta",
                format!("must lie in (0, 1), got {}", self.delta),
            ));
        }
        if self.latent_dim == 0 {
            return Err(Error::invalid_parameter("latent-dim", "must be at least 1"));
        }
        Ok(())
    }

    /// The shared settings as config-file lines.
    pub fn to_entries(&self) -> Vec<(String, String)> {
        vec![
            ("out".into(), self.out.display().to_string()),
            ("k".into(), self.k.to_string()),
            ("batch-size".into(), self.batch_size.to_string()),
            ("pretrain-steps".into(), self.pretrain_steps.to_string()),
            ("steps".into(), self.steps.to_string()),
            ("pretrain-lr".into(), self.pretrain_lr.to_string()),
            ("lr".into(), self.lr.to_string()),
            ("clip".into(), self.clip.to_string()),
            ("sigma".into(), self.sigma.to_string()),
            ("delta".into(), self.delta.to_string()),
            ("latent-dim".into(), self.latent_dim.to_string()),
            ("seed".into(), self.seed.to_string()),
            ("freeze-encoders".into(), self.freeze_encoders.to_string()),
            ("amplification".into(), self.amplification.name().to_string()),
            ("threads".into(), self.threads.to_string()),
        ]
    }
}

/// Writes `resolved-config.txt` into the output directory: the shared config
/// plus the command's own resolved keys, loadable back via `--config`.
pub fn write_echo(
    out_dir: &Path,
    config: &RunConfig,
    extras: &[(String, String)],
) -> Result<()> {
    let mut text = format!("# dp2vae {VERSION} resolved configuration\n");
    for (k, v) in config.to_entries().iter().chain(extras) {
        text.push_str(&format!("{k} = {v}\n"));
    }
    let path = out_dir.join("resolved-config.txt");
    fs::write(&path, text)
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Stamps the resolved config and version into a checkpoint's metadata.
pub fn stamp_checkpoint(
    ck: &mut dp2vae::data::Checkpoint,
    config: &RunConfig,
    extras: &[(String, String)],
) {
    ck.set_meta("cli.version", VERSION);
    for (k, v) in config.to_entries().iter().chain(extras) {
        ck.set_meta(&format!("cli.{k}"), v.clone());
    }
}

/// The `# dp2vae <version> config: k=v ...` banner embedded in text and CSV
/// artifacts.
pub fn banner(config: &RunConfig, extras: &[(String, String)]) -> String {
    let joined: Vec<String> = config
        .to_entries()
        .iter()
        .chain(extras)
        .map(|(k, v)| format!("{k}={v}"))
        .collect();
    format!("# dp2vae {VERSION} config: {}", joined.join(" "))
}

// ----------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;

    fn write_tmp(name: &str, content: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("dp2vae-config-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join(name);
        fs::write(&path, content).unwrap();
        path
    }

    #[test]
    fn file_values_parse_and_resolve() {
        let path = write_tmp("ok.txt", "# comment\nsigma = 4.5\nk = 10\n\nfreeze-encoders = true\n");
        let file = FileConfig::load(&path).unwrap();
        assert_eq!(resolve::<f64>(None, &file, "sigma", 8.0).unwrap(), 4.5);
        assert_eq!(resolve::<usize>(None, &file, "k", 20).unwrap(), 10);
        assert!(resolve::<bool>(None, &file, "freeze-encoders", false).unwrap());
        // Flag beats file; default fills the gaps.
        assert_eq!(resolve::<f64>(Some(2.0), &file, "sigma", 8.0).unwrap(), 2.0);
        assert_eq!(resolve::<u64>(None, &file, "steps", 500).unwrap(), 500);
    }

    #[test]
    fn unknown_and_duplicate_keys_are_usage_errors() {
        let path = write_tmp("bad-key.txt", "sigmah = 4\n");
        let err = FileConfig::load(&path).unwrap_err();
        assert!(err.to_string().contains("sigmah"), "{err}");
        let path = write_tmp("dup.txt", "k = 1\nk = 2\n");
        let err = FileConfig::load(&path).unwrap_err();
        assert!(err.to_string().contains("set twice"), "{err}");
    }

    #[test]
    fn bad_file_values_name_the_key() {
        let path = write_tmp("bad-val.txt", "sigma = fast\n");
        let file = FileConfig::load(&path).unwrap();
        let err = resolve::<f64>(None, &file, "sigma", 8.0).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("sigma") && msg.contains("fast"), "{msg}");
    }

    #[test]
    fn echo_round_trips_through_the_loader() {
        let config = RunConfig {
            out: PathBuf::from("artifacts"),
            k: 3,
            batch_size: 8,
            pretrain_steps: 10,
            steps: 20,
            pretrain_lr: 1e-3,
            lr: 1e-3,
            clip: 1.0,
            sigma: 8.0,
            delta: 1e-5,
            latent_dim: 8,
            seed: 7,
            freeze_encoders: false,
            amplification: Amplification::PoolRate,
            threads: 0,
        };
        let dir = std::env::temp_dir().join(format!("dp2vae-echo-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        write_echo(&dir, &config, &[("images".into(), "train.idx".into())]).unwrap();
        let file = FileConfig::load(&dir.join("resolved-config.txt")).unwrap();
        assert_eq!(file.get("sigma"), Some("8"));
        assert_eq!(file.get("images"), Some("train.idx"));
        assert_eq!(file.get("amplification"), Some("k"));
    }
}
